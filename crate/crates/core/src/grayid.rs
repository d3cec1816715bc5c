//! Parameter estimation for the fixed thrust model: augmented-state EKF and
//! alternating batch least squares, plus open-loop validation.

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector1};
use thiserror::Error;

use crate::engine::{eval_g, input_map, thrust_accel, JetParams, ThrustState};
use crate::filtering::{EkfModel, EkfState, FilterError, SgConfig};
use crate::filtering::savgol_derivatives;
use crate::linalg::{lstsq, normalize_columns, RANK_RTOL};
use crate::series::TimeSeries;
use crate::simulation::{simulate_with, SimConfig, SimError};

/// Two thrust states plus the ten model parameters.
pub const AUG_DIM: usize = 12;

pub type AugVector = SVector<f64, AUG_DIM>;
pub type AugMatrix = SMatrix<f64, AUG_DIM, AUG_DIM>;

#[derive(Debug, Error)]
pub enum IdError {
    #[error("pass {pass}: innovation RMS {rms} exceeds ten times the first pass ({first})")]
    DivergenceDetected { pass: usize, rms: f64, first: f64 },
    #[error("estimate became non-finite at sample {index} of pass {pass}")]
    NonFiniteEstimate { pass: usize, index: usize },
    #[error("regressor has rank {rank}, needs {needed}")]
    RankDeficientRegressor { rank: usize, needed: usize },
    #[error("dataset sampled at {found} s, configuration expects {expected} s")]
    GridMismatch { expected: f64, found: f64 },
    #[error("dataset needs at least {needed} samples, has {len}")]
    TooShort { len: usize, needed: usize },
    #[error("invalid identification config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState {
    pub state: ThrustState,
    pub p: JetParams,
}

impl AugmentedState {
    pub fn to_vector(&self) -> AugVector {
        let mut x = AugVector::zeros();
        x[0] = self.state.thrust;
        x[1] = self.state.rate;
        for (i, v) in self.p.to_array().into_iter().enumerate() {
            x[2 + i] = v;
        }
        x
    }

    pub fn from_vector(x: &AugVector) -> Self {
        let mut a = [0.0; JetParams::LEN];
        a.copy_from_slice(&x.as_slice()[2..]);
        Self {
            state: ThrustState::new(x[0], x[1]),
            p: JetParams::from_array(a),
        }
    }
}

/// Second-order Taylor step: `T += T' dt + T'' dt^2 / 2`, `T' += T'' dt`,
/// parameters unchanged.
pub fn discrete_step(aug: &AugmentedState, u: f64, dt: f64) -> AugmentedState {
    let s = aug.state;
    let a = thrust_accel(s, u, &aug.p);
    AugmentedState {
        state: ThrustState::new(s.thrust + s.rate * dt + a * dt * dt / 2.0, s.rate + a * dt),
        p: aug.p,
    }
}

/// Gradient of the thrust acceleration with respect to `(T, T', p)`.
fn accel_gradient(s: ThrustState, u: f64, p: &JetParams) -> AugVector {
    let (t, d) = (s.thrust, s.rate);
    let v = input_map(u, p.b_uu);
    let g = eval_g(s, p);
    AugVector::from_column_slice(&[
        p.k_t + 2.0 * p.k_tt * t + p.k_td * d + p.b_t * v,
        p.k_d + 2.0 * p.k_dd * d + p.k_td * t + p.b_d * v,
        t,
        t * t,
        d,
        d * d,
        t * d,
        1.0,
        v,
        t * v,
        d * v,
        g * u * u,
    ])
}

/// Jacobian of [`discrete_step`]. Only the first two rows differ from the
/// identity.
pub fn augmented_jacobian(aug: &AugmentedState, u: f64, dt: f64) -> AugMatrix {
    let da = accel_gradient(aug.state, u, &aug.p);
    let mut f = AugMatrix::identity();
    f[(0, 1)] += dt;
    for j in 0..AUG_DIM {
        f[(0, j)] += dt * dt / 2.0 * da[j];
        f[(1, j)] += dt * da[j];
    }
    f
}

/// The Taylor-discretized model split into `substeps` steps per sample, with
/// the measurement `z = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedModel {
    pub dt: f64,
    pub substeps: usize,
}

impl AugmentedModel {
    fn h(&self) -> f64 {
        self.dt / self.substeps as f64
    }
}

impl EkfModel<AUG_DIM, 1> for AugmentedModel {
    type Input = f64;

    fn transition(&self, x: &AugVector, u: &f64) -> AugVector {
        let h = self.h();
        let mut aug = AugmentedState::from_vector(x);
        for _ in 0..self.substeps {
            aug = discrete_step(&aug, *u, h);
        }
        aug.to_vector()
    }

    fn transition_jacobian(&self, x: &AugVector, u: &f64) -> AugMatrix {
        self.propagate(x, u).1
    }

    fn measure(&self, x: &AugVector) -> SVector<f64, 1> {
        Vector1::new(x[0])
    }

    fn measurement_jacobian(&self, _: &AugVector) -> SMatrix<f64, 1, AUG_DIM> {
        let mut h = SMatrix::<f64, 1, AUG_DIM>::zeros();
        h[0] = 1.0;
        h
    }

    /// Chains the substep Jacobians. Every factor is the identity outside
    /// rows 0 and 1, so only the top two rows of the product are tracked.
    fn propagate(&self, x: &AugVector, u: &f64) -> (AugVector, AugMatrix) {
        let h = self.h();
        let mut aug = AugmentedState::from_vector(x);
        let mut top = SMatrix::<f64, 2, AUG_DIM>::zeros();
        top[(0, 0)] = 1.0;
        top[(1, 1)] = 1.0;
        for _ in 0..self.substeps {
            let da = accel_gradient(aug.state, *u, &aug.p);
            let (c0, c1) = (h * h / 2.0, h);
            // New row i = row i + r_i' F, where r_0 = c0 da + h e_1 and r_1 = c1 da.
            let mut r0 = da * c0;
            r0[1] += h;
            let r1 = da * c1;
            let (t0, t1) = (top.row(0).clone_owned(), top.row(1).clone_owned());
            for (i, r) in [r0, r1].iter().enumerate() {
                let mut row = t0 * r[0] + t1 * r[1];
                for j in 2..AUG_DIM {
                    row[j] += r[j];
                }
                let updated = top.row(i) + row;
                top.set_row(i, &updated);
            }
            aug = discrete_step(&aug, *u, h);
        }
        let mut f = AugMatrix::identity();
        f.fixed_view_mut::<2, AUG_DIM>(0, 0).copy_from(&top);
        (aug.to_vector(), f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdConfig {
    /// Sampling interval (s).
    pub dt: f64,
    /// Taylor steps per sample.
    pub substeps: usize,
    /// Measurement noise variance (N^2).
    pub r: f64,
    pub q_state: [f64; 2],
    pub q_params: [f64; JetParams::LEN],
    pub p0_state: [f64; 2],
    pub p0_params: [f64; JetParams::LEN],
    pub n_passes: usize,
    /// Parameter-covariance shrink factor applied once per pass.
    pub p0_shrink: f64,
    /// State process-noise factor applied once per pass. Process noise keeps
    /// the first pass robust to a poor guess but biases the parameters, so it
    /// is annealed away.
    pub q_state_decay: f64,
    pub guess: JetParams,
}

impl IdConfig {
    /// Defaults around `guess`, with a parameter prior whose standard
    /// deviation is 30 % of each guessed entry.
    pub fn new(guess: JetParams) -> Self {
        Self {
            dt: 0.01,
            substeps: 10,
            r: 7.0,
            q_state: [1e-4, 1e-2],
            q_params: [0.0; JetParams::LEN],
            p0_state: [10.0, 100.0],
            p0_params: relative_prior(&guess, 0.3),
            n_passes: 6,
            p0_shrink: 0.2,
            q_state_decay: 0.1,
            guess,
        }
    }

    pub fn validate(&self) -> Result<(), IdError> {
        let bad = |m: String| Err(IdError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.substeps == 0 || self.n_passes == 0 {
            return bad("substeps and n_passes must be at least 1".into());
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad(format!("R must be positive, got {}", self.r));
        }
        let variances = self
            .q_state
            .iter()
            .chain(&self.q_params)
            .chain(&self.p0_state)
            .chain(&self.p0_params);
        if variances.clone().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("variances must be finite and non-negative".into());
        }
        if !(self.q_state_decay > 0.0 && self.q_state_decay <= 1.0) {
            return bad(format!("Q decay must lie in (0, 1], got {}", self.q_state_decay));
        }
        if !(self.p0_shrink > 0.0 && self.p0_shrink.is_finite()) {
            return bad(format!("P0 shrink must be positive, got {}", self.p0_shrink));
        }
        if !self.guess.is_finite() {
            return bad("initial guess must be finite".into());
        }
        Ok(())
    }
}

/// Diagonal variances `(rel * |p_i|)^2`, floored so zero entries stay free.
pub fn relative_prior(p: &JetParams, rel: f64) -> [f64; JetParams::LEN] {
    p.to_array().map(|v| (rel * v.abs()).max(1e-3).powi(2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfIdReport {
    pub params: JetParams,
    /// Innovation RMS of each pass (N).
    pub pass_rms: Vec<f64>,
    /// Parameter estimate at the end of each pass.
    pub pass_params: Vec<JetParams>,
    /// Diagonal of the final error covariance.
    pub cov_diag: [f64; AUG_DIM],
}

fn check_grid(dataset: &TimeSeries, dt: f64) -> Result<(), IdError> {
    dataset.validate().map_err(SimError::from)?;
    if let Some(found) = dataset.dt() {
        if (found - dt).abs() > 1e-9 * dt {
            return Err(IdError::GridMismatch { expected: dt, found });
        }
    }
    Ok(())
}

/// Scalar thrust update. With `H = e_0` the Joseph form collapses to
/// `P - k p0' - p0 k' + s k k'`, where `p0` is the first column of `P`.
fn thrust_update(state: &mut EkfState<AUG_DIM>, z: f64, r: f64) -> Result<f64, IdError> {
    let p0: AugVector = state.p.column(0).into();
    let s = p0[0] + r;
    if !(s > 0.0 && s.is_finite()) {
        return Err(FilterError::SingularInnovation.into());
    }
    let k = p0 / s;
    let innovation = z - state.x[0];
    state.x += k * innovation;
    let kp = k * p0.transpose();
    state.p += k * k.transpose() * s - kp - kp.transpose();
    Ok(innovation)
}

/// `F P F' + Q` for a transition that only rewrites rows 0 and 1, with a
/// diagonal `Q`.
fn sparse_predict(state: &mut EkfState<AUG_DIM>, model: &AugmentedModel, u: f64, q_diag: &AugVector) {
    let (x, f) = model.propagate(&state.x, &u);
    let mut m = state.p;
    for i in 0..2 {
        let row = f.row(i) * state.p;
        m.set_row(i, &row);
    }
    let mut cols = [AugVector::zeros(); 2];
    for (i, col) in cols.iter_mut().enumerate() {
        *col = m * f.row(i).transpose();
    }
    for (i, col) in cols.iter().enumerate() {
        m.set_column(i, col);
    }
    for i in 0..AUG_DIM {
        m[(i, i)] += q_diag[i];
    }
    state.x = x;
    state.p = (m + m.transpose()) * 0.5;
}

/// One filtering sweep: update with `z_k`, then predict across the interval
/// with `u_k`. Returns the final estimate and the innovation RMS.
fn ekf_pass(
    dataset: &TimeSeries,
    model: &AugmentedModel,
    x0: AugVector,
    p0: AugMatrix,
    q: &AugMatrix,
    r: f64,
    pass: usize,
) -> Result<(EkfState<AUG_DIM>, f64), IdError> {
    let mut state = EkfState::new(x0, p0);
    let q_diag = q.diagonal();
    let mut sq = 0.0;
    for (k, (&z, &u)) in dataset.thrust.iter().zip(&dataset.throttle).enumerate() {
        let innovation = thrust_update(&mut state, z, r)?;
        sq += innovation * innovation;
        sparse_predict(&mut state, model, u, &q_diag);
        if !state.is_finite() {
            return Err(IdError::NonFiniteEstimate { pass, index: k });
        }
    }
    Ok((state, (sq / dataset.len() as f64).sqrt()))
}

/// Runs the augmented EKF over the dataset `n_passes` times. Each pass starts
/// from the first measurement at rest, with the previous pass's parameters
/// and a parameter prior shrunk by `p0_shrink` per pass.
pub fn ekf_identify(dataset: &TimeSeries, cfg: &IdConfig) -> Result<EkfIdReport, IdError> {
    cfg.validate()?;
    check_grid(dataset, cfg.dt)?;
    if dataset.len() < 2 {
        return Err(IdError::TooShort { len: dataset.len(), needed: 2 });
    }
    let model = AugmentedModel {
        dt: cfg.dt,
        substeps: cfg.substeps,
    };
    let mut q = AugMatrix::zeros();
    let mut p0_diag = AugVector::zeros();
    for i in 0..2 {
        q[(i, i)] = cfg.q_state[i];
        p0_diag[i] = cfg.p0_state[i];
    }
    for i in 0..JetParams::LEN {
        q[(2 + i, 2 + i)] = cfg.q_params[i];
    }
    let mut params = cfg.guess;
    let mut pass_rms = Vec::with_capacity(cfg.n_passes);
    let mut pass_params = Vec::with_capacity(cfg.n_passes);
    let mut last = None;
    for pass in 0..cfg.n_passes {
        let shrink = cfg.p0_shrink.powi(pass as i32);
        for i in 0..JetParams::LEN {
            p0_diag[2 + i] = cfg.p0_params[i] * shrink;
        }
        let decay = cfg.q_state_decay.powi(pass as i32);
        for i in 0..2 {
            q[(i, i)] = cfg.q_state[i] * decay;
        }
        let x0 = AugmentedState {
            state: ThrustState::new(dataset.thrust[0], 0.0),
            p: params,
        }
        .to_vector();
        let (state, rms) = ekf_pass(dataset, &model, x0, AugMatrix::from_diagonal(&p0_diag), &q, cfg.r, pass)?;
        if let Some(&first) = pass_rms.first() {
            if rms > 10.0 * first {
                return Err(IdError::DivergenceDetected { pass, rms, first });
            }
        }
        pass_rms.push(rms);
        params = AugmentedState::from_vector(&state.x).p;
        pass_params.push(params);
        last = Some(state);
    }
    let state = last.expect("at least one pass");
    let mut cov_diag = [0.0; AUG_DIM];
    for (i, c) in cov_diag.iter_mut().enumerate() {
        *c = state.p[(i, i)];
    }
    Ok(EkfIdReport {
        params,
        pass_rms,
        pass_params,
        cov_diag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsConfig {
    pub sg: SgConfig,
    pub init_b_uu: f64,
    /// Admissible `B_UU` interval. Noisy derivatives otherwise let the fit
    /// trade `B_U, B_T, B_D` against an ever larger `B_UU`.
    pub b_uu_bounds: (f64, f64),
    /// Stop once the largest relative parameter change drops below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for LsConfig {
    fn default() -> Self {
        Self {
            sg: SgConfig::default(),
            init_b_uu: 0.0,
            // Lower end keeps v(u) increasing up to full throttle.
            b_uu_bounds: (-1.0 / 200.0, 0.1),
            tol: 1e-6,
            max_iters: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsReport {
    pub params: JetParams,
    pub iterations: usize,
    pub converged: bool,
    /// Residual RMS of step (a) at every alternation.
    pub residual_trace: Vec<f64>,
    /// `B_UU` after every alternation.
    pub b_uu_trace: Vec<f64>,
}

/// Regressors of the model for a fixed input nonlinearity: the acceleration
/// is linear in `(K_T, K_TT, K_D, K_DD, K_TD, c, B_U, B_T, B_D)` once `v(u)`
/// is known.
fn linear_regressor(t: &[f64], td: &[f64], u: &[f64], b_uu: f64) -> DMatrix<f64> {
    DMatrix::from_fn(t.len(), 9, |r, c| {
        let (x, d) = (t[r], td[r]);
        let v = input_map(u[r], b_uu);
        match c {
            0 => x,
            1 => x * x,
            2 => d,
            3 => d * d,
            4 => x * d,
            5 => 1.0,
            6 => v,
            7 => x * v,
            _ => d * v,
        }
    })
}

/// Sensitivity of the acceleration to all ten parameters, evaluated at `p`.
/// Full column rank means the dataset can pin every parameter down.
pub fn regressor_matrix(series: &TimeSeries, p: &JetParams) -> Result<DMatrix<f64>, IdError> {
    let td = series
        .thrust_dot
        .as_ref()
        .ok_or(IdError::Sim(SimError::MissingDerivatives))?;
    let rows: Vec<AugVector> = (0..series.len())
        .map(|k| accel_gradient(ThrustState::new(series.thrust[k], td[k]), series.throttle[k], p))
        .collect();
    Ok(DMatrix::from_fn(series.len(), JetParams::LEN, |r, c| rows[r][2 + c]))
}

/// Alternating least squares: (a) solve the nine linear parameters with
/// `B_UU` fixed, (b) solve `B_UU` alone from the residual, which is linear in
/// it through `g(T, T') * B_UU * u^2`.
pub fn batch_ls_identify(dataset: &TimeSeries, cfg: &LsConfig) -> Result<LsReport, IdError> {
    if !(cfg.tol > 0.0) || cfg.max_iters == 0 {
        return Err(IdError::InvalidConfig("tol and max_iters must be positive".into()));
    }
    let (lo, hi) = cfg.b_uu_bounds;
    if !(lo <= cfg.init_b_uu && cfg.init_b_uu <= hi) {
        return Err(IdError::InvalidConfig(format!(
            "init_b_uu {} outside b_uu_bounds [{lo}, {hi}]",
            cfg.init_b_uu
        )));
    }
    // Derivatives already present in the record take precedence over smoothing.
    let diff = if dataset.has_derivatives() {
        dataset.clone()
    } else {
        savgol_derivatives(dataset, cfg.sg)?
    };
    let t = &diff.thrust;
    let td = diff.thrust_dot.as_ref().expect("filled by savgol");
    let tdd = DVector::from_column_slice(diff.thrust_ddot.as_ref().expect("filled by savgol"));
    let u = &diff.throttle;
    let n = t.len();

    let fit = |b_uu: f64| -> Result<LinearFit, IdError> {
        let mut a = linear_regressor(t, td, u, b_uu);
        let scale = normalize_columns(&mut a);
        let sol = lstsq(&a, &tdd, RANK_RTOL);
        if sol.rank < 9 {
            return Err(IdError::RankDeficientRegressor { rank: sol.rank, needed: 9 });
        }
        let c: Vec<f64> = (0..9).map(|i| sol.coef[i] / scale[i]).collect();
        Ok(LinearFit {
            params: JetParams::from_array([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7], c[8], b_uu]),
            rms: sol.residual_norm / (n as f64).sqrt(),
            regressor: a,
        })
    };

    let mut current = fit(cfg.init_b_uu)?;
    let mut params: Option<JetParams> = None;
    let mut residual_trace = Vec::new();
    let mut b_uu_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        residual_trace.push(current.rms);
        let next = current.params;

        // (b) Gauss-Newton step on B_UU with the acceleration model of (a)
        // held fixed. The sensitivity column `g u^2` is projected off the span
        // of the (a) regressors, which would otherwise absorb most of it and
        // make plain alternation crawl.
        let mut r = DVector::zeros(n);
        let mut w = DVector::zeros(n);
        for k in 0..n {
            let s = ThrustState::new(t[k], td[k]);
            r[k] = tdd[k] - thrust_accel(s, u[k], &next);
            w[k] = eval_g(s, &next) * u[k] * u[k];
        }
        let along = lstsq(&current.regressor, &w, RANK_RTOL).coef;
        let w_perp = &w - &current.regressor * along;
        let den = w_perp.norm_squared();
        let mut step = if den > 0.0 { w.dot(&r) / den } else { 0.0 };
        // Backtrack so that the (a) residual never grows.
        let mut accepted = None;
        for _ in 0..30 {
            let b = (next.b_uu + step).clamp(lo, hi);
            if b == next.b_uu {
                break;
            }
            // A trial that loses rank is rejected like one that fits worse.
            if let Ok(trial) = fit(b) {
                if trial.rms <= current.rms {
                    accepted = Some(trial);
                    break;
                }
            }
            step /= 2.0;
        }
        let done = match accepted {
            Some(trial) => {
                let change = max_relative_change(&next, &trial.params);
                current = trial;
                change < cfg.tol
            }
            None => true,
        };
        b_uu_trace.push(current.params.b_uu);
        params = Some(current.params);
        if done {
            converged = true;
            break;
        }
    }
    Ok(LsReport {
        params: params.expect("at least one iteration"),
        iterations,
        converged,
        residual_trace,
        b_uu_trace,
    })
}

struct LinearFit {
    params: JetParams,
    rms: f64,
    /// Column-normalized regressor of the fit.
    regressor: DMatrix<f64>,
}

fn max_relative_change(a: &JetParams, b: &JetParams) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub mae: f64,
    /// Open-loop simulated thrust at every sample.
    pub simulated: Vec<f64>,
}

/// Open-loop resimulation driven by the recorded throttle, starting at rest
/// on the first measured thrust; MAE against the measured thrust.
pub fn validate_model(accel: impl Fn(ThrustState, f64) -> f64, dataset: &TimeSeries) -> Result<Validation, IdError> {
    let dt = dataset
        .dt()
        .ok_or(IdError::TooShort { len: dataset.len(), needed: 2 })?;
    let cfg = SimConfig {
        dt,
        initial_state: ThrustState::new(dataset.thrust[0], 0.0),
        ..SimConfig::default()
    };
    let out = simulate_with(accel, &dataset.throttle, &cfg)?;
    let simulated = out.clean_thrust();
    let mae = mean_abs_error(&simulated, &dataset.thrust);
    Ok(Validation { mae, simulated })
}

pub fn validation_mae(p: &JetParams, dataset: &TimeSeries) -> Result<f64, IdError> {
    validate_model(|s, u| thrust_accel(s, u, p), dataset).map(|v| v.mae)
}

pub fn mean_abs_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::filtering::{ekf_predict, ekf_update_with_innovation};
    use crate::simulation::simulate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P100: JetParams = JetParams::P100RX_EKF;

    #[test]
    fn null_acceleration_step() {
        let aug = AugmentedState {
            state: ThrustState::new(5.0, 2.0),
            p: JetParams::default(),
        };
        let next = discrete_step(&aug, 60.0, 0.01);
        assert_relative_eq!(next.state.thrust, 5.02, epsilon = 1e-15);
        assert_eq!(next.state.rate, 2.0);
    }

    #[test]
    fn step_from_rest_matches_hand_value() {
        let aug = AugmentedState {
            state: ThrustState::default(),
            p: P100,
        };
        let next = discrete_step(&aug, 50.0, 0.01);
        let accel = -19.92 + 0.4317 * 128.5;
        assert_relative_eq!(next.state.thrust, accel * 0.00005, max_relative = 1e-12);
        assert_relative_eq!(next.state.rate, accel * 0.01, max_relative = 1e-12);
        assert_eq!(next.p, P100);
    }

    #[test]
    fn jacobian_structure() {
        let dt = 0.01;
        let zero = AugmentedState {
            state: ThrustState::new(3.0, -1.0),
            p: JetParams::default(),
        };
        let f = augmented_jacobian(&zero, 40.0, dt);
        assert_eq!(f[(0, 0)], 1.0);
        assert_eq!(f[(0, 1)], dt);
        assert_eq!(f[(1, 0)], 0.0);
        assert_eq!(f[(1, 1)], 1.0);
        // Column of c: the acceleration moves one-for-one with it.
        assert_relative_eq!(f[(0, 7)], dt * dt / 2.0, epsilon = 1e-18);
        assert_relative_eq!(f[(1, 7)], dt, epsilon = 1e-18);
        let full = augmented_jacobian(&AugmentedState { state: zero.state, p: P100 }, 40.0, dt);
        assert_eq!(full.fixed_view::<10, 10>(2, 2).clone_owned(), SMatrix::<f64, 10, 10>::identity());
        assert!(full.fixed_view::<10, 2>(2, 0).iter().all(|&v| v == 0.0));
    }

    fn central_difference(model: &AugmentedModel, x: &AugVector, u: f64) -> AugMatrix {
        let mut j = AugMatrix::zeros();
        for c in 0..AUG_DIM {
            let h = 1e-4 * x[c].abs().max(1e-2);
            let (mut xp, mut xm) = (*x, *x);
            xp[c] += h;
            xm[c] -= h;
            let col = (model.transition(&xp, &u) - model.transition(&xm, &u)) / (2.0 * h);
            j.set_column(c, &col);
        }
        j
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for substeps in [1, 10] {
            let model = AugmentedModel { dt: 0.01, substeps };
            for _ in 0..100 {
                let aug = AugmentedState {
                    state: ThrustState::new(rng.random_range(0.0..90.0), rng.random_range(-20.0..20.0)),
                    p: P100.perturbed(rng.random_range(-0.2..0.2)),
                };
                let u = rng.random_range(25.0..100.0);
                let x = aug.to_vector();
                let analytic = model.transition_jacobian(&x, &u);
                let numeric = central_difference(&model, &x, u);
                for (i, (a, n)) in analytic.iter().zip(numeric.iter()).enumerate() {
                    assert!((a - n).abs() < 1e-5 * a.abs().max(n.abs()) + 1e-7, "{substeps} {i} {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn small_steps_recover_derivatives() {
        let aug = AugmentedState {
            state: ThrustState::new(30.0, 4.0),
            p: P100,
        };
        let accel = thrust_accel(aug.state, 55.0, &P100);
        for dt in [1e-3, 1e-4, 1e-5] {
            let next = discrete_step(&aug, 55.0, dt);
            assert!(((next.state.thrust - 30.0) / dt - 4.0).abs() < 10.0 * accel.abs() * dt);
            assert_relative_eq!((next.state.rate - 4.0) / dt, accel, max_relative = 1e-9);
        }
    }

    #[test]
    fn single_pass_is_a_plain_sweep() {
        let c = crate::simulation::Campaign::preset("p100-campaign").unwrap();
        let data = c.run(0.01, 1).unwrap().series.slice(0, 3000);
        let mut cfg = IdConfig::new(P100.perturbed(0.1));
        cfg.n_passes = 1;
        let report = ekf_identify(&data, &cfg).unwrap();
        let model = AugmentedModel { dt: 0.01, substeps: cfg.substeps };
        let mut q = AugMatrix::zeros();
        q[(0, 0)] = cfg.q_state[0];
        q[(1, 1)] = cfg.q_state[1];
        let mut p0 = AugVector::zeros();
        p0[0] = cfg.p0_state[0];
        p0[1] = cfg.p0_state[1];
        for i in 0..10 {
            p0[2 + i] = cfg.p0_params[i];
        }
        let x0 = AugmentedState {
            state: ThrustState::new(data.thrust[0], 0.0),
            p: cfg.guess,
        }
        .to_vector();
        let (state, rms) = ekf_pass(&data, &model, x0, AugMatrix::from_diagonal(&p0), &q, cfg.r, 0).unwrap();
        assert_eq!(report.params, AugmentedState::from_vector(&state.x).p);
        assert_eq!(report.pass_rms, vec![rms]);
    }

    #[test]
    fn noiseless_ekf_recovers_from_half_guess() {
        let c = crate::simulation::Campaign::preset("p100-campaign").unwrap();
        let mut sim = c.sim_config(0.01, 0).unwrap();
        sim.noise_variance = 0.0;
        let data = simulate(&P100, &c.throttle(0.01).unwrap(), &sim).unwrap().series;
        let mut cfg = IdConfig::new(P100.perturbed(-0.5));
        cfg.n_passes = 5;
        // The record is exact, so the measurement variance only regularizes.
        cfg.r = 1e-4;
        let report = ekf_identify(&data, &cfg).unwrap();
        for (g, t) in report.params.to_array().iter().zip(P100.to_array()) {
            assert!(((g - t) / t).abs() < 0.02, "{:?}", report.params);
        }
    }

    #[test]
    fn structured_steps_match_generic_filter() {
        let c = crate::simulation::Campaign::preset("p100-campaign").unwrap();
        let data = c.run(0.01, 4).unwrap().series.slice(0, 2000);
        let model = AugmentedModel { dt: 0.01, substeps: 10 };
        let guess = P100.perturbed(0.1);
        let mut q = AugMatrix::zeros();
        q[(0, 0)] = 1e-4;
        q[(1, 1)] = 1e-2;
        q[(7, 7)] = 1e-8;
        let mut p0 = AugVector::zeros();
        p0[0] = 10.0;
        p0[1] = 100.0;
        for (i, v) in relative_prior(&guess, 0.3).iter().enumerate() {
            p0[2 + i] = *v;
        }
        let x0 = AugmentedState { state: ThrustState::new(data.thrust[0], 0.0), p: guess }.to_vector();
        let mut fast = EkfState::new(x0, AugMatrix::from_diagonal(&p0));
        let mut slow = fast;
        let rmat = SMatrix::<f64, 1, 1>::new(7.0);
        for (&z, &u) in data.thrust.iter().zip(&data.throttle) {
            let a = thrust_update(&mut fast, z, 7.0).unwrap();
            let (updated, b) = ekf_update_with_innovation(&slow, &model, &Vector1::new(z), &rmat).unwrap();
            assert!((a - b[0]).abs() <= 1e-9 * (1.0 + a.abs()));
            sparse_predict(&mut fast, &model, u, &q.diagonal());
            slow = ekf_predict(&updated, &model, &u, &q);
        }
        assert!((fast.x - slow.x).amax() <= 1e-9 * slow.x.amax());
        assert!((fast.p - slow.p).amax() <= 1e-9 * slow.p.amax());
    }

    #[test]
    fn grid_mismatch_rejected() {
        let data = TimeSeries::uniform(0.02, vec![30.0; 50], vec![1.0; 50]).unwrap();
        assert!(matches!(
            ekf_identify(&data, &IdConfig::new(P100)),
            Err(IdError::GridMismatch { .. })
        ));
    }

    #[test]
    fn self_consistent_validation() {
        let c = crate::simulation::Campaign::preset("p100-campaign").unwrap();
        let u = c.throttle(0.01).unwrap();
        let cfg = c.sim_config(0.01, 0).unwrap();
        let quiet = crate::simulation::simulate(&P100, &u, &SimConfig { noise_variance: 0.0, ..cfg }).unwrap();
        assert!(validation_mae(&P100, &quiet.series).unwrap() < 1e-3);
        let noisy = crate::simulation::simulate(&P100, &u, &cfg).unwrap();
        let mae = validation_mae(&P100, &noisy.series).unwrap();
        let folded = (2.0 * 7.0 / std::f64::consts::PI).sqrt();
        assert!((mae - folded).abs() < 0.1, "{mae} vs {folded}");
    }

    #[test]
    fn linear_input_map_gives_zero_b_uu() {
        let mut p = P100;
        p.b_uu = 0.0;
        let c = crate::simulation::Campaign::preset("p100-campaign").unwrap();
        let u = c.throttle(0.01).unwrap();
        let cfg = SimConfig {
            initial_state: ThrustState::new(0.0, 0.0),
            ..SimConfig::default()
        };
        let data = with_exact_derivatives(&p, crate::simulation::simulate(&p, &u, &cfg).unwrap());
        let report = batch_ls_identify(&data, &LsConfig::default()).unwrap();
        assert!(report.params.b_uu.abs() < 1e-6, "{}", report.params.b_uu);
    }

    fn with_exact_derivatives(p: &JetParams, out: crate::simulation::SimOutput) -> TimeSeries {
        let mut s = out.series;
        s.thrust_dot = Some(out.clean.iter().map(|x| x.rate).collect());
        s.thrust_ddot = Some(
            out.clean
                .iter()
                .zip(&s.throttle)
                .map(|(x, &u)| crate::engine::thrust_accel(*x, u, p))
                .collect(),
        );
        s
    }

    #[test]
    fn noiseless_ls_recovers_generator() {
        let c = crate::simulation::Campaign::preset("p100-campaign").unwrap();
        let u = c.throttle(0.01).unwrap();
        let cfg = SimConfig { noise_variance: 0.0, ..c.sim_config(0.01, 0).unwrap() };
        let data = with_exact_derivatives(&P100, crate::simulation::simulate(&P100, &u, &cfg).unwrap());
        let report = batch_ls_identify(&data, &LsConfig::default()).unwrap();
        assert!(report.converged, "{:?} {:?}", report.b_uu_trace, report.params);
        for (got, want) in report.params.to_array().iter().zip(P100.to_array()) {
            assert!((got - want).abs() <= 0.01 * want.abs(), "{got} vs {want}");
        }
        // Smoothed derivatives of the clean record land close as well.
        let smoothed = batch_ls_identify(&crate::simulation::simulate(&P100, &u, &cfg).unwrap().series, &LsConfig::default()).unwrap();
        assert!(validation_mae(&smoothed.params, &data).unwrap() < 1.0);
    }

    #[test]
    fn ls_residual_is_non_increasing() {
        let c = crate::simulation::Campaign::preset("p100-campaign").unwrap();
        let data = c.run(0.01, 2).unwrap().series;
        let report = batch_ls_identify(&data, &LsConfig::default()).unwrap();
        for w in report.residual_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", report.residual_trace);
        }
    }
}
