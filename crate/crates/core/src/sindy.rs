//! Structure discovery by sparse regression over a polynomial library.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::engine::ThrustState;
use crate::filtering::{savgol_derivatives, FilterError, SgConfig};
use crate::linalg::{lstsq, normalize_columns, RankReport, RANK_RTOL};
use crate::series::TimeSeries;
use crate::simulation::regressor_rank;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SindyError {
    #[error("dataset has no derivative columns")]
    MissingDerivatives,
    #[error("thresholding eliminated every library term")]
    AllTermsEliminated,
    #[error("regression needs at least {needed} rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("invalid threshold settings: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Exponents `(i, j, k)` of the monomial `T^i * Td^j * u^k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial {
    pub t: u32,
    pub td: u32,
    pub u: u32,
}

impl Monomial {
    pub const fn new(t: u32, td: u32, u: u32) -> Self {
        Self { t, td, u }
    }

    pub fn degree(&self) -> u32 {
        self.t + self.td + self.u
    }

    pub fn eval(&self, thrust: f64, rate: f64, u: f64) -> f64 {
        thrust.powi(self.t as i32) * rate.powi(self.td as i32) * u.powi(self.u as i32)
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T^{} * Td^{} * u^{}", self.t, self.td, self.u)
    }
}

impl FromStr for Monomial {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut exps = [None; 3];
        for factor in s.split('*') {
            let (name, exp) = factor
                .trim()
                .split_once('^')
                .ok_or_else(|| format!("factor `{}` lacks an exponent", factor.trim()))?;
            let slot = match name.trim() {
                "T" => 0,
                "Td" => 1,
                "u" => 2,
                other => return Err(format!("unknown variable `{other}`")),
            };
            if exps[slot].is_some() {
                return Err(format!("variable `{}` repeated", name.trim()));
            }
            exps[slot] = Some(
                exp.trim()
                    .parse::<u32>()
                    .map_err(|_| format!("bad exponent `{}`", exp.trim()))?,
            );
        }
        match exps {
            [Some(t), Some(td), Some(u)] => Ok(Self::new(t, td, u)),
            _ => Err("expected factors for T, Td and u".into()),
        }
    }
}

/// Every monomial in `(T, Td, u)` of total degree up to `max_total_degree`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LibrarySpec {
    pub max_total_degree: u32,
}

impl Default for LibrarySpec {
    fn default() -> Self {
        Self { max_total_degree: 5 }
    }
}

impl LibrarySpec {
    /// Sorted by total degree, then lexicographically; the constant comes first.
    pub fn terms(&self) -> Vec<Monomial> {
        let d = self.max_total_degree;
        let mut out: Vec<Monomial> = (0..=d)
            .flat_map(|i| (0..=d - i).flat_map(move |j| (0..=d - i - j).map(move |k| Monomial::new(i, j, k))))
            .collect();
        out.sort_by_key(|m| (m.degree(), *m));
        out
    }

    /// `C(d + 3, 3)`.
    pub fn len(&self) -> usize {
        let d = self.max_total_degree as usize;
        (d + 1) * (d + 2) * (d + 3) / 6
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Library matrix (one row per sample, one column per term) and the
/// second-derivative target.
pub fn build_library(series: &TimeSeries, spec: &LibrarySpec) -> Result<(DMatrix<f64>, DVector<f64>), SindyError> {
    let (Some(td), Some(tdd)) = (&series.thrust_dot, &series.thrust_ddot) else {
        return Err(SindyError::MissingDerivatives);
    };
    let terms = spec.terms();
    let n = series.len();
    let theta = DMatrix::from_fn(n, terms.len(), |r, c| {
        terms[c].eval(series.thrust[r], td[r], series.throttle[r])
    });
    Ok((theta, DVector::from_column_slice(tdd)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StlsConfig {
    /// Threshold on coefficients of the unit-RMS library against a unit-RMS target.
    pub threshold: f64,
    pub max_iters: usize,
    /// Ridge penalty used while selecting terms; the final fit is plain least squares.
    pub ridge: f64,
}

impl Default for StlsConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            max_iters: 20,
            ridge: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    pub terms: Vec<Monomial>,
    /// Raw-scale coefficients; inactive entries are exactly zero.
    pub coef: Vec<f64>,
    pub active: Vec<bool>,
    /// RMS of the training residual.
    pub residual_rms: f64,
    /// Numerical rank of the active regressor in the final fit.
    pub rank: usize,
    pub iterations: usize,
}

impl SparseModel {
    pub fn active_terms(&self) -> impl Iterator<Item = (Monomial, f64)> + '_ {
        self.terms
            .iter()
            .zip(&self.coef)
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|((m, c), _)| (*m, *c))
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank < self.n_active()
    }

    pub fn eval(&self, s: ThrustState, u: f64) -> f64 {
        eval_sparse_model(self, s.thrust, s.rate, u)
    }
}

pub fn eval_sparse_model(model: &SparseModel, thrust: f64, rate: f64, u: f64) -> f64 {
    model
        .active_terms()
        .map(|(m, c)| c * m.eval(thrust, rate, u))
        .sum()
}

/// One line per active term: `T^i * Td^j * u^k : coefficient`.
impl fmt::Display for SparseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (m, c) in self.active_terms() {
            writeln!(f, "{m} : {c:?}")?;
        }
        Ok(())
    }
}

impl FromStr for SparseModel {
    type Err = SindyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut pairs: Vec<(Monomial, f64)> = Vec::new();
        for (i, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SindyError::Parse { line: i + 1, message };
            let (lhs, rhs) = line
                .split_once(':')
                .ok_or_else(|| err("expected `term : coefficient`".into()))?;
            let m: Monomial = lhs.parse().map_err(err)?;
            let c: f64 = rhs
                .trim()
                .parse()
                .map_err(|_| err(format!("`{}` is not a number", rhs.trim())))?;
            if !c.is_finite() {
                return Err(err("non-finite coefficient".into()));
            }
            if pairs.iter().any(|(p, _)| *p == m) {
                return Err(err(format!("duplicate term `{m}`")));
            }
            pairs.push((m, c));
        }
        let degree = pairs.iter().map(|(m, _)| m.degree()).max().unwrap_or(0);
        let terms = LibrarySpec {
            max_total_degree: degree,
        }
        .terms();
        let mut coef = vec![0.0; terms.len()];
        let mut active = vec![false; terms.len()];
        for (m, c) in pairs {
            let idx = terms.iter().position(|t| *t == m).expect("term within library degree");
            coef[idx] = c;
            active[idx] = c != 0.0;
        }
        let n = active.iter().filter(|&&a| a).count();
        Ok(SparseModel {
            terms,
            coef,
            active,
            residual_rms: f64::NAN,
            rank: n,
            iterations: 0,
        })
    }
}

fn select_columns(a: &DMatrix<f64>, active: &[bool]) -> (DMatrix<f64>, Vec<usize>) {
    let idx: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
    (a.select_columns(&idx), idx)
}

/// Sequentially thresholded least squares. Coefficients are compared against
/// the threshold after scaling every column and the target to unit RMS.
/// Selection runs with the ridge penalty until the active set stops changing;
/// unpenalized least squares then refits and keeps thresholding until the
/// plain fit is itself a fixed point.
pub fn stls(theta: &DMatrix<f64>, y: &DVector<f64>, terms: &[Monomial], cfg: &StlsConfig) -> Result<SparseModel, SindyError> {
    if !(cfg.threshold >= 0.0 && cfg.ridge >= 0.0) {
        return Err(SindyError::InvalidConfig(format!(
            "threshold {} and ridge {} must be non-negative",
            cfg.threshold, cfg.ridge
        )));
    }
    let (rows, cols) = theta.shape();
    if rows < cols {
        return Err(SindyError::TooFewRows { rows, needed: cols });
    }
    let mut a = theta.clone();
    let col_scale = normalize_columns(&mut a);
    let y_rms = (y.norm_squared() / rows.max(1) as f64).sqrt();
    let y_scale = if y_rms > 0.0 { y_rms } else { 1.0 };
    let b = y / y_scale;

    let mut active = vec![true; cols];
    let mut xi = DVector::zeros(cols);
    let mut iterations = 0;

    if cfg.ridge > 0.0 {
        let nrm = rows as f64;
        let gram = a.transpose() * &a / nrm;
        let rhs = a.transpose() * &b / nrm;
        while iterations < cfg.max_iters {
            iterations += 1;
            let idx: Vec<usize> = (0..cols).filter(|&i| active[i]).collect();
            if idx.is_empty() {
                return Err(SindyError::AllTermsEliminated);
            }
            let mut g = gram.select_rows(&idx).select_columns(&idx);
            for d in 0..idx.len() {
                g[(d, d)] += cfg.ridge;
            }
            let r = rhs.select_rows(&idx);
            let sol = g
                .clone()
                .cholesky()
                .map(|c| c.solve(&r))
                .unwrap_or_else(|| lstsq(&g, &r, RANK_RTOL).coef);
            xi.fill(0.0);
            for (d, &i) in idx.iter().enumerate() {
                xi[i] = sol[d];
            }
            let next: Vec<bool> = (0..cols).map(|i| active[i] && xi[i].abs() >= cfg.threshold).collect();
            if next == active {
                break;
            }
            active = next;
        }
    }

    let mut rank;
    let mut refits = 0;
    loop {
        refits += 1;
        let (sub, idx) = select_columns(&a, &active);
        if idx.is_empty() {
            return Err(SindyError::AllTermsEliminated);
        }
        let sol = lstsq(&sub, &b, RANK_RTOL);
        rank = sol.rank;
        xi.fill(0.0);
        for (d, &i) in idx.iter().enumerate() {
            xi[i] = sol.coef[d];
        }
        let next: Vec<bool> = (0..cols).map(|i| active[i] && xi[i].abs() >= cfg.threshold).collect();
        if next == active || refits >= cfg.max_iters.max(1) {
            break;
        }
        active = next;
    }
    if !active.iter().any(|&x| x) {
        return Err(SindyError::AllTermsEliminated);
    }

    let coef: Vec<f64> = (0..cols)
        .map(|i| if active[i] { xi[i] * y_scale / col_scale[i] } else { 0.0 })
        .collect();
    let pred = theta * DVector::from_column_slice(&coef);
    let residual_rms = ((pred - y).norm_squared() / rows.max(1) as f64).sqrt();
    Ok(SparseModel {
        terms: terms.to_vec(),
        coef,
        active,
        residual_rms,
        rank,
        iterations: iterations + refits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub model: SparseModel,
    /// Conditioning of the full library on the differentiated dataset.
    pub library_rank: RankReport,
}

impl StructureReport {
    pub fn exciting(&self) -> bool {
        self.library_rank.is_full_rank()
    }
}

/// Savitzky-Golay differentiation, library construction and thresholded
/// regression in one pass.
pub fn identify_structure(
    dataset: &TimeSeries,
    sg: SgConfig,
    spec: &LibrarySpec,
    cfg: &StlsConfig,
) -> Result<StructureReport, SindyError> {
    let diff = savgol_derivatives(dataset, sg)?;
    let (theta, y) = build_library(&diff, spec)?;
    let library_rank = regressor_rank(&theta).rank;
    let model = stls(&theta, &y, &spec.terms(), cfg)?;
    Ok(StructureReport { model, library_rank })
}

/// The monomials obtained by expanding the gray-box thrust model.
pub fn gray_box_support() -> Vec<Monomial> {
    [
        (0, 0, 0),
        (1, 0, 0),
        (2, 0, 0),
        (0, 1, 0),
        (0, 2, 0),
        (1, 1, 0),
        (0, 0, 1),
        (0, 0, 2),
        (1, 0, 1),
        (1, 0, 2),
        (0, 1, 1),
        (0, 1, 2),
    ]
    .into_iter()
    .map(|(i, j, k)| Monomial::new(i, j, k))
    .collect()
}
