//! Thrust tracking: feedback-linearizing and sliding-mode laws, the two-state
//! observer and the closed-loop simulation.

use std::io::Write;

use nalgebra::{Matrix1, Matrix2, SMatrix, SVector, Vector1, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    equilibrium_thrust, eval_f, eval_g, input_map, invert_input_map, thrust_accel, EngineError, EngineSpec,
    Inversion, JetParams, Saturation, ThrustState,
};
use crate::filtering::{ekf_predict, ekf_update, EkfModel, EkfState, FilterError};
use crate::simulation::advance;

/// Below this magnitude of `g` the input has no authority.
pub const G_MIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("gain `{name}` must be strictly positive, got {value}")]
    GainNotPositive { name: &'static str, value: f64 },
    #[error("input gain g = {g} is too close to zero")]
    GNearZero { g: f64 },
    #[error("state became non-finite at sample {index}")]
    NonFiniteState { index: usize },
    #[error("reference has no samples")]
    EmptyReference,
    #[error("reference segment {index}: {reason}")]
    InvalidSegment { index: usize, reason: String },
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn positive(name: &'static str, value: f64) -> Result<(), ControlError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ControlError::GainNotPositive { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlGains {
    pub kp: f64,
    pub kd: f64,
}

impl FlGains {
    pub fn new(kp: f64, kd: f64) -> Result<Self, ControlError> {
        positive("kp", kp)?;
        positive("kd", kd)?;
        Ok(Self { kp, kd })
    }

    /// `K_p = 10`, `K_d = 2 sqrt(K_p)` (critically damped).
    pub fn reference() -> Self {
        Self {
            kp: 10.0,
            kd: 2.0 * 10f64.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmGains {
    /// Decay rate on the sliding manifold.
    pub a1: f64,
    /// Amplitude of the switching term.
    pub beta: f64,
    /// Slope of the `tanh` boundary layer.
    pub k_slope: f64,
}

impl SmGains {
    pub fn new(a1: f64, beta: f64, k_slope: f64) -> Result<Self, ControlError> {
        positive("a1", a1)?;
        positive("beta", beta)?;
        positive("k_slope", k_slope)?;
        Ok(Self { a1, beta, k_slope })
    }

    pub fn reference() -> Self {
        Self {
            a1: 20.0,
            beta: 900.0,
            k_slope: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Controller {
    FeedbackLinearization(FlGains),
    SlidingMode(SmGains),
}

/// Desired thrust and its first two derivatives at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefSample {
    pub thrust: f64,
    pub rate: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub throttle: f64,
    /// Effective input requested by the law, before inversion and clamping.
    pub v: f64,
    /// Sliding variable; zero for feedback linearization.
    pub s: f64,
    pub saturation: Saturation,
}

fn to_throttle(v: f64, s: f64, p: &JetParams, spec: &EngineSpec) -> ControlOutput {
    let inv = match invert_input_map(v, p.b_uu, spec) {
        Ok(inv) => inv,
        Err(EngineError::DiscriminantNegative { fallback, .. }) => fallback,
        Err(_) => Inversion {
            throttle: spec.throttle_min,
            saturation: Saturation::Low,
        },
    };
    ControlOutput {
        throttle: inv.throttle,
        v,
        s,
        saturation: inv.saturation,
    }
}

fn checked_g(est: ThrustState, p: &JetParams) -> Result<f64, ControlError> {
    let g = eval_g(est, p);
    if g.abs() > G_MIN {
        Ok(g)
    } else {
        Err(ControlError::GNearZero { g })
    }
}

/// `v = (T''_d + K_p (T_d - T) + K_d (T'_d - T') - f) / g`, which imposes
/// `e'' + K_d e' + K_p e = 0` on the tracking error.
pub fn fl_control(
    r: &RefSample,
    est: ThrustState,
    p: &JetParams,
    gains: &FlGains,
    spec: &EngineSpec,
) -> Result<ControlOutput, ControlError> {
    let g = checked_g(est, p)?;
    let v = (r.accel + gains.kp * (r.thrust - est.thrust) + gains.kd * (r.rate - est.rate) - eval_f(est, p)) / g;
    Ok(to_throttle(v, 0.0, p, spec))
}

/// With `e = T - T_d` and `s = a1 e + e'`:
/// `v = -(a1 e' + f - T''_d) / g - beta tanh(K s)`.
pub fn sm_control(
    r: &RefSample,
    est: ThrustState,
    p: &JetParams,
    gains: &SmGains,
    spec: &EngineSpec,
) -> Result<ControlOutput, ControlError> {
    let g = checked_g(est, p)?;
    let e = est.thrust - r.thrust;
    let ed = est.rate - r.rate;
    let s = gains.a1 * e + ed;
    let v = -(gains.a1 * ed + eval_f(est, p) - r.accel) / g - gains.beta * (gains.k_slope * s).tanh();
    Ok(to_throttle(v, s, p, spec))
}

/// Two-state Taylor model with fixed parameters, measuring thrust.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustObserver {
    pub p: JetParams,
    pub dt: f64,
}

impl EkfModel<2, 1> for ThrustObserver {
    type Input = f64;

    fn transition(&self, x: &Vector2<f64>, u: &f64) -> Vector2<f64> {
        let s = ThrustState::new(x[0], x[1]);
        let a = thrust_accel(s, *u, &self.p);
        let dt = self.dt;
        Vector2::new(x[0] + x[1] * dt + a * dt * dt / 2.0, x[1] + a * dt)
    }

    fn transition_jacobian(&self, x: &Vector2<f64>, u: &f64) -> Matrix2<f64> {
        let p = &self.p;
        let (t, d) = (x[0], x[1]);
        let v = input_map(*u, p.b_uu);
        let da_t = p.k_t + 2.0 * p.k_tt * t + p.k_td * d + p.b_t * v;
        let da_d = p.k_d + 2.0 * p.k_dd * d + p.k_td * t + p.b_d * v;
        let dt = self.dt;
        let h2 = dt * dt / 2.0;
        Matrix2::new(1.0 + h2 * da_t, dt + h2 * da_d, dt * da_t, 1.0 + dt * da_d)
    }

    fn measure(&self, x: &Vector2<f64>) -> SVector<f64, 1> {
        Vector1::new(x[0])
    }

    fn measurement_jacobian(&self, _: &Vector2<f64>) -> SMatrix<f64, 1, 2> {
        SMatrix::<f64, 1, 2>::new(1.0, 0.0)
    }
}

/// One predict across the last interval with throttle `u`, then one update
/// with the new thrust measurement `z`.
pub fn observer_step(
    ekf: &EkfState<2>,
    z: f64,
    u: f64,
    p: &JetParams,
    q: &Matrix2<f64>,
    r: f64,
    dt: f64,
) -> Result<EkfState<2>, ControlError> {
    let model = ThrustObserver { p: *p, dt };
    let predicted = ekf_predict(ekf, &model, &u, q);
    Ok(ekf_update(&predicted, &model, &Vector1::new(z), &Matrix1::new(r))?)
}

/// Piece of a thrust reference; local time restarts in every segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RefSegment {
    Hold {
        duration: f64,
        level: f64,
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
}

impl RefSegment {
    pub fn duration(&self) -> f64 {
        match *self {
            RefSegment::Hold { duration, .. }
            | RefSegment::Ramp { duration, .. }
            | RefSegment::Sine { duration, .. } => duration,
        }
    }

    /// Value and analytic derivatives at local time `tau`.
    pub fn sample(&self, tau: f64) -> RefSample {
        use std::f64::consts::TAU;
        match *self {
            RefSegment::Hold { level, .. } => RefSample {
                thrust: level,
                ..RefSample::default()
            },
            RefSegment::Ramp { duration, from, to } => RefSample {
                thrust: from + (to - from) * tau / duration,
                rate: (to - from) / duration,
                accel: 0.0,
            },
            RefSegment::Sine {
                offset,
                amplitude,
                freq,
                ..
            } => {
                let w = TAU * freq;
                RefSample {
                    thrust: offset + amplitude * (w * tau).sin(),
                    rate: amplitude * w * (w * tau).cos(),
                    accel: -amplitude * w * w * (w * tau).sin(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    #[serde(rename = "segment", default)]
    pub segments: Vec<RefSegment>,
}

/// Sampled reference with the index at which every segment starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub dt: f64,
    pub samples: Vec<RefSample>,
    pub segment_starts: Vec<usize>,
}

impl Reference {
    /// Samples every segment on its own `k * dt` grid. Jumps between segments
    /// carry no derivative impulse: a step is simply a change of level.
    pub fn from_spec(spec: &ReferenceSpec, dt: f64) -> Result<Self, ControlError> {
        if spec.segments.is_empty() {
            return Err(ControlError::EmptyReference);
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ControlError::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        let mut samples = Vec::new();
        let mut segment_starts = Vec::new();
        for (index, seg) in spec.segments.iter().enumerate() {
            let d = seg.duration();
            if !(d > 0.0 && d.is_finite()) {
                return Err(ControlError::InvalidSegment {
                    index,
                    reason: format!("duration must be positive, got {d}"),
                });
            }
            segment_starts.push(samples.len());
            let n = (d / dt).round() as usize;
            samples.extend((0..n).map(|k| seg.sample(k as f64 * dt)));
        }
        if samples.is_empty() {
            return Err(ControlError::EmptyReference);
        }
        Ok(Self {
            dt,
            samples,
            segment_starts,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(start, end)` sample ranges of the segments.
    pub fn segment_ranges(&self) -> Vec<(usize, usize)> {
        let mut ends: Vec<usize> = self.segment_starts.iter().skip(1).copied().collect();
        ends.push(self.samples.len());
        self.segment_starts.iter().copied().zip(ends).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub dt: f64,
    /// RK4 steps of the plant per control period.
    pub plant_substeps: usize,
    /// Parameters of the simulated engine.
    pub plant: JetParams,
    /// Parameters the controller and observer believe in.
    pub model: JetParams,
    pub engine: EngineSpec,
    /// Thrust measurement noise variance (N^2).
    pub noise_variance: f64,
    pub seed: u64,
    pub observer_q: [f64; 2],
    pub observer_r: f64,
    pub observer_p0: [f64; 2],
    pub initial_state: ThrustState,
}

impl LoopConfig {
    /// Matched model, noiseless thrust, plant at rest on its idle equilibrium.
    pub fn matched(plant: JetParams, engine: EngineSpec) -> Result<Self, ControlError> {
        let idle = equilibrium_thrust(engine.throttle_min, &plant, &engine)?;
        Ok(Self {
            dt: 0.01,
            plant_substeps: 10,
            plant,
            model: plant,
            engine,
            noise_variance: 0.0,
            seed: 0,
            observer_q: [1e-4, 1e-2],
            observer_r: 7.0,
            observer_p0: [10.0, 100.0],
            initial_state: ThrustState::new(idle, 0.0),
        })
    }

    /// Controller-side parameters off by `rel` with alternating sign.
    pub fn with_mismatch(mut self, rel: f64) -> Self {
        self.model = mismatched(&self.plant, rel);
        self
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: String| Err(ControlError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.plant_substeps == 0 {
            return bad("plant substeps must be at least 1".into());
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return bad("noise variance must be non-negative".into());
        }
        if !(self.observer_r > 0.0) || self.observer_q.iter().chain(&self.observer_p0).any(|v| !(*v >= 0.0)) {
            return bad("observer variances must be non-negative with R > 0".into());
        }
        Ok(())
    }
}

/// Scales parameter `i` by `1 + rel` for even `i` and `1 - rel` for odd `i`.
pub fn mismatched(p: &JetParams, rel: f64) -> JetParams {
    let mut a = p.to_array();
    for (i, v) in a.iter_mut().enumerate() {
        *v *= if i % 2 == 0 { 1.0 + rel } else { 1.0 - rel };
    }
    JetParams::from_array(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSample {
    pub time: f64,
    pub reference: f64,
    /// True plant thrust.
    pub thrust: f64,
    pub measured: f64,
    pub estimate: ThrustState,
    pub throttle: f64,
    pub s: f64,
    pub saturation: Saturation,
    /// The input gain guard fired and the previous throttle was held.
    pub guard: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopResult {
    pub trace: Vec<LoopSample>,
    pub report: TrackingReport,
}

impl LoopResult {
    pub fn thrust(&self) -> Vec<f64> {
        self.trace.iter().map(|s| s.thrust).collect()
    }

    /// Per-sample CSV `time_s,ref_n,thrust_n,thrust_est_n,throttle_pct,s_value,saturated`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record([
            "time_s",
            "ref_n",
            "thrust_n",
            "thrust_est_n",
            "throttle_pct",
            "s_value",
            "saturated",
        ])?;
        for s in &self.trace {
            let sat = match s.saturation {
                Saturation::None => "0",
                Saturation::Low => "low",
                Saturation::High => "high",
            };
            w.write_record([
                s.time.to_string(),
                s.reference.to_string(),
                s.thrust.to_string(),
                s.estimate.thrust.to_string(),
                s.throttle.to_string(),
                s.s.to_string(),
                sat.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per 10 ms tick: measure, update the observer, compute the throttle from the
/// estimate, hold it while the plant integrates one period.
pub fn closed_loop_sim(cfg: &LoopConfig, controller: &Controller, reference: &Reference) -> Result<LoopResult, ControlError> {
    cfg.validate()?;
    if reference.is_empty() {
        return Err(ControlError::EmptyReference);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_variance.sqrt()).map_err(|e| ControlError::InvalidConfig(e.to_string()))?;
    let q = Matrix2::new(cfg.observer_q[0], 0.0, 0.0, cfg.observer_q[1]);
    let model = ThrustObserver {
        p: cfg.model,
        dt: cfg.dt,
    };

    let mut plant = cfg.initial_state;
    let mut ekf: Option<EkfState<2>> = None;
    let mut u_prev = cfg.engine.throttle_min;
    let mut trace = Vec::with_capacity(reference.len());
    for (k, r) in reference.samples.iter().enumerate() {
        if !plant.is_finite() {
            return Err(ControlError::NonFiniteState { index: k });
        }
        let z = if cfg.noise_variance > 0.0 {
            plant.thrust + noise.sample(&mut rng)
        } else {
            plant.thrust
        };
        let next = match &ekf {
            None => {
                let start = EkfState::new(
                    Vector2::new(z, 0.0),
                    Matrix2::new(cfg.observer_p0[0], 0.0, 0.0, cfg.observer_p0[1]),
                );
                ekf_update(&start, &model, &Vector1::new(z), &Matrix1::new(cfg.observer_r))?
            }
            Some(prev) => observer_step(prev, z, u_prev, &cfg.model, &q, cfg.observer_r, cfg.dt)?,
        };
        let est = ThrustState::new(next.x[0], next.x[1]);
        ekf = Some(next);

        let law = match controller {
            Controller::FeedbackLinearization(g) => fl_control(r, est, &cfg.model, g, &cfg.engine),
            Controller::SlidingMode(g) => sm_control(r, est, &cfg.model, g, &cfg.engine),
        };
        let (out, guard) = match law {
            Ok(out) => (out, false),
            Err(ControlError::GNearZero { .. }) => (
                ControlOutput {
                    throttle: u_prev,
                    v: f64::NAN,
                    s: 0.0,
                    saturation: Saturation::None,
                },
                true,
            ),
            Err(e) => return Err(e),
        };
        trace.push(LoopSample {
            time: k as f64 * cfg.dt,
            reference: r.thrust,
            thrust: plant.thrust,
            measured: z,
            estimate: est,
            throttle: out.throttle,
            s: out.s,
            saturation: out.saturation,
            guard,
        });
        plant = advance(plant, out.throttle, &cfg.plant, cfg.dt, cfg.plant_substeps);
        u_prev = out.throttle;
    }
    let thrust: Vec<f64> = trace.iter().map(|s| s.thrust).collect();
    let mut report = tracking_accuracy(&thrust, reference, &TrackingConfig::default());
    let throttle: Vec<f64> = trace.iter().map(|s| s.throttle).collect();
    report.saturation_duty = trace.iter().filter(|s| s.saturation.is_saturated()).count() as f64 / trace.len() as f64;
    report.low_saturation_duty =
        trace.iter().filter(|s| s.saturation == Saturation::Low).count() as f64 / trace.len() as f64;
    report.input_total_variation = total_variation(&throttle);
    Ok(LoopResult { trace, report })
}

pub fn total_variation(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingConfig {
    /// Half-width of the accuracy band, percent of the reference.
    pub band_pct: f64,
    /// Time skipped at the start of every reference segment (s).
    pub settle_s: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            band_pct: 5.0,
            settle_s: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingReport {
    /// Fraction of post-settle samples inside the band.
    pub band_fraction: f64,
    /// Band occupancy of every segment after its settle window.
    pub segment_fractions: Vec<f64>,
    pub worst_abs_error: f64,
    pub mean_abs_error: f64,
    /// Mean of `|T - T_d| / |T_d|` over post-settle samples, percent.
    pub steady_state_error_pct: f64,
    /// Some segment never entered the band after settling.
    pub persistent_error: bool,
    pub samples: usize,
    pub saturation_duty: f64,
    pub low_saturation_duty: f64,
    pub input_total_variation: f64,
}

/// Band occupancy and error statistics over the post-settle part of every
/// reference segment.
pub fn tracking_accuracy(thrust: &[f64], reference: &Reference, cfg: &TrackingConfig) -> TrackingReport {
    let settle = (cfg.settle_s / reference.dt).round() as usize;
    let band = cfg.band_pct / 100.0;
    let (mut inside, mut counted) = (0usize, 0usize);
    let (mut worst, mut sum_abs, mut sum_rel) = (0.0f64, 0.0, 0.0);
    let mut segment_fractions = Vec::new();
    let n = thrust.len().min(reference.len());
    for (start, end) in reference.segment_ranges() {
        let (from, to) = ((start + settle).min(n), end.min(n));
        if from >= to {
            continue;
        }
        let mut seg_in = 0;
        for k in from..to {
            let target = reference.samples[k].thrust;
            let err = (thrust[k] - target).abs();
            if err <= band * target.abs() {
                seg_in += 1;
            }
            worst = worst.max(err);
            sum_abs += err;
            sum_rel += if target != 0.0 { err / target.abs() } else { 0.0 };
        }
        inside += seg_in;
        counted += to - from;
        segment_fractions.push(seg_in as f64 / (to - from) as f64);
    }
    let frac = |a: f64| if counted > 0 { a / counted as f64 } else { 0.0 };
    TrackingReport {
        band_fraction: frac(inside as f64),
        persistent_error: segment_fractions.contains(&0.0),
        segment_fractions,
        worst_abs_error: worst,
        mean_abs_error: frac(sum_abs),
        steady_state_error_pct: 100.0 * frac(sum_rel),
        samples: counted,
        saturation_duty: 0.0,
        low_saturation_duty: 0.0,
        input_total_variation: 0.0,
    }
}

impl TrackingReport {
    /// `key = value` lines with six significant digits.
    pub fn to_text(&self) -> String {
        use crate::format::sig6;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("band_fraction", sig6(self.band_fraction));
        line("steady_state_error_pct", sig6(self.steady_state_error_pct));
        line("worst_abs_error_n", sig6(self.worst_abs_error));
        line("mean_abs_error_n", sig6(self.mean_abs_error));
        line("saturation_duty", sig6(self.saturation_duty));
        line("low_saturation_duty", sig6(self.low_saturation_duty));
        line("input_total_variation", sig6(self.input_total_variation));
        line("persistent_error", self.persistent_error.to_string());
        line("post_settle_samples", self.samples.to_string());
        line(
            "segment_band_fractions",
            self.segment_fractions.iter().map(|f| sig6(*f)).collect::<Vec<_>>().join(","),
        );
        out
    }
}

/// Step and ramp profile spanning 30 to 90 N used by the tracking checks.
pub fn step_ramp_profile() -> ReferenceSpec {
    ReferenceSpec {
        segments: vec![
            RefSegment::Hold {
                duration: 10.0,
                level: 30.0,
            },
            RefSegment::Hold {
                duration: 10.0,
                level: 50.0,
            },
            RefSegment::Ramp {
                duration: 10.0,
                from: 50.0,
                to: 90.0,
            },
            RefSegment::Hold {
                duration: 10.0,
                level: 90.0,
            },
            RefSegment::Ramp {
                duration: 10.0,
                from: 90.0,
                to: 60.0,
            },
            RefSegment::Hold {
                duration: 10.0,
                level: 60.0,
            },
            RefSegment::Hold {
                duration: 10.0,
                level: 30.0,
            },
        ],
    }
}
