//! Dense least squares with a rank-revealing factorization.

use nalgebra::{DMatrix, DVector};

/// Default relative threshold below which a pivot or singular value counts as zero.
pub const RANK_RTOL: f64 = 1e-10;

/// Householder QR with column pivoting by remaining column norm.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Upper triangle holds R; the strict lower part is scratch.
    qr: DMatrix<f64>,
    /// `perm[i]` is the original column sitting at position `i`.
    perm: Vec<usize>,
    /// Householder vectors, one per eliminated column.
    reflectors: Vec<(DVector<f64>, f64)>,
}

impl PivotedQr {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let mut qr = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut reflectors = Vec::with_capacity(m.min(n));
        for k in 0..m.min(n) {
            let (mut best, mut best_norm) = (k, -1.0);
            for j in k..n {
                let norm = qr.view_range(k.., j).norm_squared();
                if norm > best_norm {
                    best = j;
                    best_norm = norm;
                }
            }
            if best != k {
                qr.swap_columns(k, best);
                perm.swap(k, best);
            }
            let x = qr.view_range(k.., k).clone_owned();
            let xnorm = x.norm();
            if xnorm == 0.0 {
                break;
            }
            let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
            let mut v = x;
            v[0] -= alpha;
            let vnorm2 = v.norm_squared();
            let beta = 2.0 / vnorm2;
            for j in k + 1..n {
                let mut col = qr.view_range_mut(k.., j);
                let s = beta * v.dot(&col);
                col.axpy(-s, &v, 1.0);
            }
            qr[(k, k)] = alpha;
            for i in k + 1..m {
                qr[(i, k)] = 0.0;
            }
            reflectors.push((v, beta));
        }
        Self {
            qr,
            perm,
            reflectors,
        }
    }

    /// Diagonal of R in pivot order; magnitudes are non-increasing.
    pub fn pivots(&self) -> Vec<f64> {
        (0..self.reflectors.len()).map(|i| self.qr[(i, i)].abs()).collect()
    }

    pub fn rank(&self, rtol: f64) -> usize {
        let piv = self.pivots();
        match piv.first() {
            Some(&top) if top > 0.0 => piv.iter().filter(|&&d| d > rtol * top).count(),
            _ => 0,
        }
    }

    /// Square upper-triangular factor, columns in pivot order.
    pub fn r(&self) -> DMatrix<f64> {
        let n = self.qr.ncols();
        let k = self.qr.nrows().min(n);
        DMatrix::from_fn(k, n, |i, j| if j >= i { self.qr[(i, j)] } else { 0.0 })
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    fn q_tr_mul(&self, b: &mut DVector<f64>) {
        for (k, (v, beta)) in self.reflectors.iter().enumerate() {
            let mut tail = b.rows_mut(k, v.len());
            let s = beta * v.dot(&tail);
            tail.axpy(-s, v, 1.0);
        }
    }

    /// Basic least-squares solution: coefficients of columns beyond the
    /// numerical rank are set to zero.
    pub fn solve(&self, b: &DVector<f64>, rtol: f64) -> LstsqSolution {
        let n = self.qr.ncols();
        let rank = self.rank(rtol);
        let mut qtb = b.clone();
        self.q_tr_mul(&mut qtb);
        let mut y = vec![0.0; rank];
        for i in (0..rank).rev() {
            let mut acc = qtb[i];
            for (j, yj) in y.iter().enumerate().skip(i + 1) {
                acc -= self.qr[(i, j)] * yj;
            }
            y[i] = acc / self.qr[(i, i)];
        }
        let mut coef = DVector::zeros(n);
        for (i, yi) in y.into_iter().enumerate() {
            coef[self.perm[i]] = yi;
        }
        let residual_norm = qtb.rows(rank, qtb.len() - rank).norm();
        LstsqSolution {
            coef,
            rank,
            residual_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub coef: DVector<f64>,
    pub rank: usize,
    /// Euclidean norm of `A x - b`.
    pub residual_norm: f64,
}

/// Least squares through [`PivotedQr`].
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rtol: f64) -> LstsqSolution {
    PivotedQr::new(a).solve(b, rtol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub rank: usize,
    pub columns: usize,
    /// `sigma_max / sigma_min`; infinite when the smallest value is zero.
    pub condition: f64,
    /// Descending.
    pub singular_values: Vec<f64>,
}

impl RankReport {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.columns
    }
}

/// Singular values of `a`, taken from the small triangular factor so tall
/// regressors stay cheap.
pub fn rank_report(a: &DMatrix<f64>, rtol: f64) -> RankReport {
    let columns = a.ncols();
    let r = PivotedQr::new(a).r();
    let mut sv: Vec<f64> = if r.nrows() == 0 || columns == 0 {
        Vec::new()
    } else {
        r.singular_values().iter().copied().collect()
    };
    sv.sort_by(|x, y| y.total_cmp(x));
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = if top > 0.0 {
        sv.iter().filter(|&&s| s > rtol * top).count()
    } else {
        0
    };
    let low = sv.last().copied().unwrap_or(0.0);
    let condition = if sv.len() < columns || low == 0.0 {
        f64::INFINITY
    } else {
        top / low
    };
    RankReport {
        rank,
        columns,
        condition,
        singular_values: sv,
    }
}

/// Scales every column to unit RMS and returns the scale factors; all-zero
/// columns keep a factor of one.
pub fn normalize_columns(a: &mut DMatrix<f64>) -> Vec<f64> {
    let rows = a.nrows().max(1) as f64;
    a.column_iter_mut()
        .map(|mut col| {
            let rms = (col.norm_squared() / rows).sqrt();
            let s = if rms > 0.0 { rms } else { 1.0 };
            col /= s;
            s
        })
        .collect()
}
