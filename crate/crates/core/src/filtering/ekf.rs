use nalgebra::{SMatrix, SVector};

use super::FilterError;

/// Discrete nonlinear system `x' = f(x, u)`, `z = h(x)` with analytic Jacobians.
/// Matrix shapes are fixed by the const parameters, so mismatched Jacobians are
/// rejected at compile time.
pub trait EkfModel<const N: usize, const M: usize> {
    type Input;

    fn transition(&self, x: &SVector<f64, N>, u: &Self::Input) -> SVector<f64, N>;

    fn transition_jacobian(&self, x: &SVector<f64, N>, u: &Self::Input) -> SMatrix<f64, N, N>;

    fn measure(&self, x: &SVector<f64, N>) -> SVector<f64, M>;

    fn measurement_jacobian(&self, x: &SVector<f64, N>) -> SMatrix<f64, M, N>;

    /// Next state and the Jacobian at the current one. Override when both share work.
    fn propagate(
        &self,
        x: &SVector<f64, N>,
        u: &Self::Input,
    ) -> (SVector<f64, N>, SMatrix<f64, N, N>) {
        (self.transition(x, u), self.transition_jacobian(x, u))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState<const N: usize> {
    pub x: SVector<f64, N>,
    pub p: SMatrix<f64, N, N>,
}

impl<const N: usize> EkfState<N> {
    pub fn new(x: SVector<f64, N>, p: SMatrix<f64, N, N>) -> Self {
        Self { x, p }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }
}

fn symmetrize<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

/// `x <- f(x, u)`, `P <- F P F^T + Q`.
pub fn ekf_predict<const N: usize, const M: usize, E: EkfModel<N, M>>(
    state: &EkfState<N>,
    model: &E,
    u: &E::Input,
    q: &SMatrix<f64, N, N>,
) -> EkfState<N> {
    let (x, f) = model.propagate(&state.x, u);
    let p = symmetrize(&(f * state.p * f.transpose() + q));
    EkfState { x, p }
}

/// Joseph-form measurement update; also returns the innovation `z - h(x)`.
pub fn ekf_update_with_innovation<const N: usize, const M: usize, E: EkfModel<N, M>>(
    state: &EkfState<N>,
    model: &E,
    z: &SVector<f64, M>,
    r: &SMatrix<f64, M, M>,
) -> Result<(EkfState<N>, SVector<f64, M>), FilterError> {
    let h = model.measurement_jacobian(&state.x);
    let innovation = z - model.measure(&state.x);
    let s = h * state.p * h.transpose() + r;
    let s_inv = s.try_inverse().ok_or(FilterError::SingularInnovation)?;
    if !s_inv.iter().all(|v| v.is_finite()) {
        return Err(FilterError::SingularInnovation);
    }
    let k = state.p * h.transpose() * s_inv;
    let x = state.x + k * innovation;
    let a = SMatrix::<f64, N, N>::identity() - k * h;
    let p = symmetrize(&(a * state.p * a.transpose() + k * r * k.transpose()));
    Ok((EkfState { x, p }, innovation))
}

pub fn ekf_update<const N: usize, const M: usize, E: EkfModel<N, M>>(
    state: &EkfState<N>,
    model: &E,
    z: &SVector<f64, M>,
    r: &SMatrix<f64, M, M>,
) -> Result<EkfState<N>, FilterError> {
    ekf_update_with_innovation(state, model, z, r).map(|(s, _)| s)
}

/// Symmetric to `1e-10` (relative to the largest entry) with eigenvalues no
/// lower than `-1e-9 * trace`.
pub fn is_symmetric_psd<const N: usize>(p: &SMatrix<f64, N, N>) -> bool {
    let scale = p.amax().max(1.0);
    if (p - p.transpose()).amax() > 1e-10 * scale {
        return false;
    }
    let floor = -1e-9 * p.trace().abs().max(f64::MIN_POSITIVE);
    let sym = symmetrize(p);
    nalgebra::DMatrix::from_column_slice(N, N, sym.as_slice())
        .symmetric_eigenvalues()
        .iter()
        .all(|&l| l >= floor)
}
