//! Excitation signals, plant integration and synthetic datasets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{equilibrium_thrust, thrust_accel, EngineError, EngineSpec, JetParams, ThrustState};
use crate::linalg::{rank_report, RankReport, RANK_RTOL};
use crate::series::{SeriesError, TimeSeries};
use crate::sindy::{build_library, LibrarySpec, SindyError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("excitation has no segments")]
    EmptySpec,
    #[error("segment {index}: {reason}")]
    InvalidSegment { index: usize, reason: String },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("state became non-finite at sample {index}")]
    NonFiniteState { index: usize },
    #[error("dataset has no derivative columns")]
    MissingDerivatives,
    #[error("unknown campaign preset `{0}`")]
    UnknownCampaign(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// One piece of an excitation signal. Time `tau` restarts at zero in every
/// segment and each segment covers `[0, duration)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Segment {
    Hold {
        duration: f64,
        level: f64,
    },
    /// `from` before `switch_at`, `to` from `switch_at` on.
    Step {
        duration: f64,
        from: f64,
        to: f64,
        #[serde(default)]
        switch_at: f64,
    },
    Ramp {
        duration: f64,
        from: f64,
        to: f64,
    },
    Sine {
        duration: f64,
        offset: f64,
        amplitude: f64,
        freq: f64,
    },
    /// Linear sweep from `f_start` to `f_end` over the segment.
    Chirp {
        duration: f64,
        offset: f64,
        amplitude: f64,
        f_start: f64,
        f_end: f64,
    },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Hold { duration, .. }
            | Segment::Step { duration, .. }
            | Segment::Ramp { duration, .. }
            | Segment::Sine { duration, .. }
            | Segment::Chirp { duration, .. } => duration,
        }
    }

    /// Unclamped value at local time `tau`.
    pub fn value(&self, tau: f64) -> f64 {
        use std::f64::consts::TAU;
        match *self {
            Segment::Hold { level, .. } => level,
            Segment::Step {
                from, to, switch_at, ..
            } => {
                if tau < switch_at {
                    from
                } else {
                    to
                }
            }
            Segment::Ramp { duration, from, to } => from + (to - from) * tau / duration,
            Segment::Sine {
                offset,
                amplitude,
                freq,
                ..
            } => offset + amplitude * (TAU * freq * tau).sin(),
            Segment::Chirp {
                duration,
                offset,
                amplitude,
                f_start,
                f_end,
            } => {
                let phase = f_start * tau + (f_end - f_start) * tau * tau / (2.0 * duration);
                offset + amplitude * (TAU * phase).sin()
            }
        }
    }

    fn check(&self) -> Result<(), String> {
        let d = self.duration();
        if !(d > 0.0 && d.is_finite()) {
            return Err(format!("duration must be positive, got {d}"));
        }
        let finite = match *self {
            Segment::Hold { level, .. } => level.is_finite(),
            Segment::Step {
                from, to, switch_at, ..
            } => from.is_finite() && to.is_finite() && switch_at.is_finite(),
            Segment::Ramp { from, to, .. } => from.is_finite() && to.is_finite(),
            Segment::Sine {
                offset,
                amplitude,
                freq,
                ..
            } => offset.is_finite() && amplitude.is_finite() && freq.is_finite(),
            Segment::Chirp {
                offset,
                amplitude,
                f_start,
                f_end,
                ..
            } => [offset, amplitude, f_start, f_end].iter().all(|v| v.is_finite()),
        };
        if finite {
            Ok(())
        } else {
            Err("non-finite field".into())
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSpec {
    #[serde(rename = "segment", default)]
    pub segments: Vec<Segment>,
}

impl ExcitationSpec {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.segments.is_empty() {
            return Err(SimError::EmptySpec);
        }
        for (index, s) in self.segments.iter().enumerate() {
            s.check()
                .map_err(|reason| SimError::InvalidSegment { index, reason })?;
        }
        Ok(())
    }
}

/// Samples the excitation at `k * dt` inside every segment and clamps to the
/// engine's throttle range. A segment contributes `round(duration / dt)` samples.
pub fn gen_excitation(spec: &ExcitationSpec, dt: f64, engine: &EngineSpec) -> Result<Vec<f64>, SimError> {
    spec.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let mut u = Vec::new();
    for seg in &spec.segments {
        let n = (seg.duration() / dt).round() as usize;
        u.extend((0..n).map(|k| engine.clamp(seg.value(k as f64 * dt))));
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Sampling interval (s).
    pub dt: f64,
    /// RK4 steps per sample.
    pub substeps: usize,
    /// Measurement noise variance on thrust (N^2).
    pub noise_variance: f64,
    pub seed: u64,
    pub initial_state: ThrustState,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            substeps: 10,
            noise_variance: 0.0,
            seed: 0,
            initial_state: ThrustState::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.substeps == 0 {
            return Err(SimError::InvalidConfig("substeps must be at least 1".into()));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "noise variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        if !self.initial_state.is_finite() {
            return Err(SimError::InvalidConfig("initial state must be finite".into()));
        }
        Ok(())
    }
}

/// One classical Runge-Kutta step of `T'' = accel(T, T')`.
pub fn rk4_step(s: ThrustState, h: f64, accel: &impl Fn(ThrustState) -> f64) -> ThrustState {
    let d = |s: ThrustState| (s.rate, accel(s));
    let at = |k: (f64, f64), c: f64| ThrustState::new(s.thrust + c * k.0, s.rate + c * k.1);
    let k1 = d(s);
    let k2 = d(at(k1, h / 2.0));
    let k3 = d(at(k2, h / 2.0));
    let k4 = d(at(k3, h));
    ThrustState::new(
        s.thrust + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        s.rate + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

/// Advances the plant over one sample with the throttle held at `u`.
pub fn advance(s: ThrustState, u: f64, p: &JetParams, dt: f64, substeps: usize) -> ThrustState {
    let h = dt / substeps as f64;
    let accel = |x: ThrustState| thrust_accel(x, u, p);
    (0..substeps).fold(s, |x, _| rk4_step(x, h, &accel))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    /// Measured dataset.
    pub series: TimeSeries,
    /// Noiseless state at every sample instant.
    pub clean: Vec<ThrustState>,
}

impl SimOutput {
    pub fn clean_thrust(&self) -> Vec<f64> {
        self.clean.iter().map(|s| s.thrust).collect()
    }
}

/// Integrates any second-order thrust model `accel(state, u)` with the
/// sampling, noise and zero-order-hold conventions of [`simulate`].
pub fn simulate_with(
    accel: impl Fn(ThrustState, f64) -> f64,
    u: &[f64],
    cfg: &SimConfig,
) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let h = cfg.dt / cfg.substeps as f64;
    let mut clean = Vec::with_capacity(u.len());
    let mut s = cfg.initial_state;
    for (k, &uk) in u.iter().enumerate() {
        if !s.is_finite() {
            return Err(SimError::NonFiniteState { index: k });
        }
        clean.push(s);
        let a = |x: ThrustState| accel(x, uk);
        for _ in 0..cfg.substeps {
            s = rk4_step(s, h, &a);
        }
    }
    let mut thrust: Vec<f64> = clean.iter().map(|s| s.thrust).collect();
    if cfg.noise_variance > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = Normal::new(0.0, cfg.noise_variance.sqrt())
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        for t in &mut thrust {
            *t += noise.sample(&mut rng);
        }
    }
    let series = TimeSeries::uniform(cfg.dt, u.to_vec(), thrust)?;
    Ok(SimOutput { series, clean })
}

/// RK4 with substeps, zero-order-hold throttle, Gaussian noise on the measured
/// thrust only.
pub fn simulate(p: &JetParams, u: &[f64], cfg: &SimConfig) -> Result<SimOutput, SimError> {
    simulate_with(|s, uk| thrust_accel(s, uk, p), u, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationReport {
    pub rank: RankReport,
    /// False when the regressor is rank deficient.
    pub exciting: bool,
}

/// Numerical rank and conditioning of the structure-identification library
/// evaluated on `series`.
///
/// A thrust-rate channel that is pure round-off (for example the smoothed
/// derivative of a constant record) is treated as exactly zero; otherwise
/// column normalization would blow it up into spurious excitation.
pub fn excitation_rank_check(series: &TimeSeries, library: &LibrarySpec) -> Result<ExcitationReport, SimError> {
    let mut series = series.clone();
    if let (Some(dt), Some(rate)) = (series.dt(), series.thrust_dot.as_mut()) {
        let scale = series.thrust.iter().fold(0.0f64, |m, t| m.max(t.abs())) / dt;
        let rms = (rate.iter().map(|r| r * r).sum::<f64>() / rate.len().max(1) as f64).sqrt();
        if rms <= 1e-9 * scale {
            rate.iter_mut().for_each(|r| *r = 0.0);
        }
    }
    let (theta, _) = build_library(&series, library).map_err(|e| match e {
        SindyError::MissingDerivatives => SimError::MissingDerivatives,
        other => SimError::InvalidConfig(other.to_string()),
    })?;
    Ok(regressor_rank(&theta))
}

/// Rank check of an arbitrary regressor after normalizing its columns to unit
/// RMS, so the relative threshold is not dominated by column scaling.
pub fn regressor_rank(theta: &nalgebra::DMatrix<f64>) -> ExcitationReport {
    let mut scaled = theta.clone();
    crate::linalg::normalize_columns(&mut scaled);
    let rank = rank_report(&scaled, RANK_RTOL);
    ExcitationReport {
        exciting: rank.is_full_rank(),
        rank,
    }
}

/// A ready-made identification experiment: plant, excitation and noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub name: &'static str,
    pub params: JetParams,
    pub engine: EngineSpec,
    pub excitation: ExcitationSpec,
    pub noise_variance: f64,
}

impl Campaign {
    pub const PRESETS: [&'static str; 4] = [
        "p100-campaign",
        "p220-campaign",
        "p100-smooth",
        "p100-long",
    ];

    pub fn preset(name: &str) -> Result<Self, SimError> {
        match name {
            "p100-campaign" => Ok(Self {
                name: "p100-campaign",
                params: JetParams::P100RX_EKF,
                engine: EngineSpec::p100rx(),
                excitation: step_ladder_and_chirps(25.0, &[(45.0, 12.0), (60.0, 15.0), (75.0, 12.0)], 90.0),
                noise_variance: 7.0,
            }),
            // The P220 model has no equilibrium below about 29 % throttle.
            "p220-campaign" => Ok(Self {
                name: "p220-campaign",
                params: JetParams::P220RXI_EKF,
                engine: EngineSpec::p220rxi(),
                excitation: step_ladder_and_chirps(30.0, &[(45.0, 15.0), (65.0, 20.0), (80.0, 15.0)], 90.0),
                noise_variance: 9.0,
            }),
            "p100-smooth" => Ok(Self {
                name: "p100-smooth",
                params: JetParams::P100RX_EKF,
                engine: EngineSpec::p100rx(),
                excitation: smooth_chirps(),
                noise_variance: 0.1,
            }),
            "p100-long" => Ok(Self {
                name: "p100-long",
                params: JetParams::P100RX_EKF,
                engine: EngineSpec::p100rx(),
                excitation: long_campaign(25),
                noise_variance: 7.0,
            }),
            other => Err(SimError::UnknownCampaign(other.to_string())),
        }
    }

    pub fn throttle(&self, dt: f64) -> Result<Vec<f64>, SimError> {
        gen_excitation(&self.excitation, dt, &self.engine)
    }

    /// Simulation settings starting at rest on the equilibrium of the first
    /// throttle sample.
    pub fn sim_config(&self, dt: f64, seed: u64) -> Result<SimConfig, SimError> {
        let u0 = self.throttle(dt)?[0];
        let t0 = equilibrium_thrust(u0, &self.params, &self.engine)?;
        Ok(SimConfig {
            dt,
            noise_variance: self.noise_variance,
            seed,
            initial_state: ThrustState::new(t0, 0.0),
            ..SimConfig::default()
        })
    }

    pub fn run(&self, dt: f64, seed: u64) -> Result<SimOutput, SimError> {
        let u = self.throttle(dt)?;
        simulate(&self.params, &u, &self.sim_config(dt, seed)?)
    }
}

/// Idle hold, a four-step ladder to full throttle, then one chirp per
/// `(offset, amplitude)` pair joined by ramps.
fn step_ladder_and_chirps(idle: f64, chirps: &[(f64, f64)], chirp_len: f64) -> ExcitationSpec {
    let mut segs = vec![Segment::Hold {
        duration: 15.0,
        level: idle,
    }];
    for k in 1..=4 {
        segs.push(Segment::Hold {
            duration: 15.0,
            level: idle + (100.0 - idle) * k as f64 / 4.0,
        });
    }
    let mut last = 100.0;
    for &(offset, amplitude) in chirps {
        segs.push(Segment::Ramp {
            duration: 10.0,
            from: last,
            to: offset,
        });
        segs.push(Segment::Chirp {
            duration: chirp_len,
            offset,
            amplitude,
            f_start: 0.02,
            f_end: 0.8,
        });
        last = offset;
    }
    ExcitationSpec::new(segs)
}

/// Slow chirps around four operating points; smooth enough for numerical
/// differentiation of the thrust.
fn smooth_chirps() -> ExcitationSpec {
    let mut segs = Vec::new();
    let mut last = 25.0;
    for (offset, amplitude) in [(40.0, 12.0), (55.0, 15.0), (70.0, 12.0), (80.0, 10.0)] {
        segs.push(Segment::Ramp {
            duration: 5.0,
            from: last,
            to: offset,
        });
        segs.push(Segment::Chirp {
            duration: 150.0,
            offset,
            amplitude,
            f_start: 0.02,
            f_end: 0.5,
        });
        last = offset;
    }
    ExcitationSpec::new(segs)
}

/// Appends segments while tracking where the throttle currently sits.
struct Script {
    segs: Vec<Segment>,
    last: f64,
}

impl Script {
    fn new(start: f64) -> Self {
        Self {
            segs: Vec::new(),
            last: start,
        }
    }

    fn push(&mut self, seg: Segment) -> &mut Self {
        self.last = seg.value(seg.duration());
        self.segs.push(seg);
        self
    }

    fn hold(&mut self, duration: f64, level: f64) -> &mut Self {
        self.push(Segment::Hold { duration, level })
    }

    fn ramp_to(&mut self, duration: f64, to: f64) -> &mut Self {
        let from = self.last;
        self.push(Segment::Ramp { duration, from, to })
    }

    fn chirp(&mut self, duration: f64, offset: f64, amplitude: f64, f_end: f64) -> &mut Self {
        self.ramp_to(5.0, offset).push(Segment::Chirp {
            duration,
            offset,
            amplitude,
            f_start: 0.02,
            f_end,
        })
    }
}

/// Repeated blocks of short-hold staircases over the whole throttle range and
/// narrow chirps around three operating points. The input-gain parameters
/// are only weakly visible in the thrust at the published noise level, so
/// tight recovery of all ten parameters needs on the order of a million
/// samples; one block is 395 s.
fn long_campaign(blocks: usize) -> ExcitationSpec {
    let mut s = Script::new(25.0);
    for _ in 0..blocks {
        for _ in 0..4 {
            for level in [25.0, 43.75, 62.5, 81.25, 100.0, 25.0, 34.375, 53.125, 71.875, 90.625] {
                s.hold(5.0, level);
            }
        }
        s.chirp(60.0, 45.0, 12.0, 0.8)
            .chirp(60.0, 60.0, 15.0, 0.8)
            .chirp(60.0, 75.0, 12.0, 0.8)
            .ramp_to(5.0, 25.0);
    }
    ExcitationSpec::new(s.segs)
}
