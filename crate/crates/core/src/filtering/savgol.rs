use nalgebra::DMatrix;

use super::FilterError;
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgConfig {
    /// Odd number of samples in the fitting window.
    pub window_length: usize,
    pub poly_order: usize,
    /// Sampling interval (s).
    pub dt: f64,
}

impl Default for SgConfig {
    fn default() -> Self {
        Self {
            window_length: 51,
            poly_order: 3,
            dt: 0.01,
        }
    }
}

impl SgConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.window_length.is_multiple_of(2) {
            return Err(FilterError::EvenWindow(self.window_length));
        }
        if self.poly_order < 2 {
            return Err(FilterError::OrderTooLow(self.poly_order));
        }
        if self.window_length < self.poly_order + 2 {
            return Err(FilterError::OrderTooHigh {
                window: self.window_length,
                order: self.poly_order,
            });
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FilterError::InvalidStep(self.dt));
        }
        Ok(())
    }
}

/// Precomputed Savitzky-Golay weights for the value and the first two
/// derivatives, at every evaluation offset inside the window. Interior samples
/// use the centre offset; the first and last half-windows reuse the edge
/// window evaluated off-centre.
#[derive(Debug, Clone)]
pub struct SavGol {
    cfg: SgConfig,
    /// `weights[offset][order]`, offset running over `0..window_length`.
    weights: Vec<[Vec<f64>; 3]>,
}

impl SavGol {
    pub fn new(cfg: SgConfig) -> Result<Self, FilterError> {
        cfg.validate()?;
        let w = cfg.window_length;
        let half = (w / 2) as f64;
        let cols = cfg.poly_order + 1;
        // Positions scaled to [-1, 1] keep the Vandermonde system well conditioned.
        let x: Vec<f64> = (0..w).map(|j| (j as f64 - half) / half).collect();
        let vander = DMatrix::from_fn(w, cols, |j, m| x[j].powi(m as i32));
        let vt = vander.transpose();
        let gram = (&vt * &vander)
            .cholesky()
            .ok_or(FilterError::OrderTooHigh {
                window: w,
                order: cfg.poly_order,
            })?;
        let pinv = gram.solve(&vt);
        let weights = (0..w)
            .map(|o| {
                let xo = x[o];
                std::array::from_fn(|d| {
                    let scale = (half * cfg.dt).powi(d as i32);
                    let e: Vec<f64> = (0..cols)
                        .map(|m| {
                            if m < d {
                                0.0
                            } else {
                                falling(m, d) * xo.powi((m - d) as i32)
                            }
                        })
                        .collect();
                    (0..w)
                        .map(|j| (0..cols).map(|m| pinv[(m, j)] * e[m]).sum::<f64>() / scale)
                        .collect()
                })
            })
            .collect();
        Ok(Self { cfg, weights })
    }

    pub fn config(&self) -> SgConfig {
        self.cfg
    }

    /// Smoothed signal, first and second derivative, each as long as `y`.
    pub fn apply(&self, y: &[f64]) -> Result<[Vec<f64>; 3], FilterError> {
        let w = self.cfg.window_length;
        let n = y.len();
        if n < w {
            return Err(FilterError::WindowTooLarge { window: w, len: n });
        }
        let h = w / 2;
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..n {
            let (start, offset) = if i < h {
                (0, i)
            } else if i + h >= n {
                (n - w, i + w - n)
            } else {
                (i - h, h)
            };
            let window = &y[start..start + w];
            for (d, col) in out.iter_mut().enumerate() {
                col[i] = self.weights[offset][d]
                    .iter()
                    .zip(window)
                    .map(|(a, b)| a * b)
                    .sum();
            }
        }
        Ok(out)
    }
}

fn falling(m: usize, d: usize) -> f64 {
    (m - d + 1..=m).map(|k| k as f64).product()
}

/// Replaces the thrust column by its smoothed version and fills both
/// derivative columns.
pub fn savgol_derivatives(series: &TimeSeries, cfg: SgConfig) -> Result<TimeSeries, FilterError> {
    let [t, td, tdd] = SavGol::new(cfg)?.apply(&series.thrust)?;
    Ok(TimeSeries {
        time: series.time.clone(),
        throttle: series.throttle.clone(),
        thrust: t,
        thrust_dot: Some(td),
        thrust_ddot: Some(tdd),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn series_of(f: impl Fn(f64) -> f64, n: usize, dt: f64) -> TimeSeries {
        let t: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        TimeSeries::uniform(dt, vec![50.0; n], t.iter().map(|&x| f(x)).collect()).unwrap()
    }

    #[test]
    fn classic_five_point_quadratic_weights() {
        // Tabulated smoothing weights for window 5, order 2: (-3, 12, 17, 12, -3) / 35.
        let sg = SavGol::new(SgConfig {
            window_length: 5,
            poly_order: 2,
            dt: 1.0,
        })
        .unwrap();
        let expected = [-3.0, 12.0, 17.0, 12.0, -3.0];
        for (w, e) in sg.weights[2][0].iter().zip(expected) {
            assert_relative_eq!(*w, e / 35.0, epsilon = 1e-14);
        }
        // First derivative weights: (-2, -1, 0, 1, 2) / 10.
        for (w, e) in sg.weights[2][1].iter().zip([-2.0, -1.0, 0.0, 1.0, 2.0]) {
            assert_relative_eq!(*w, e / 10.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn quadratic_reproduced_everywhere() {
        let dt = 0.01;
        let s = series_of(|t| 3.0 + 2.0 * t + 0.5 * t * t, 300, dt);
        let cfg = SgConfig {
            window_length: 51,
            poly_order: 3,
            dt,
        };
        let out = savgol_derivatives(&s, cfg).unwrap();
        let (d1, d2) = (out.thrust_dot.unwrap(), out.thrust_ddot.unwrap());
        for k in 0..300 {
            let t = s.time[k];
            assert!((out.thrust[k] - s.thrust[k]).abs() < 1e-9);
            assert!((d1[k] - (2.0 + t)).abs() < 1e-9, "k={k}");
            assert!((d2[k] - 1.0).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn cubic_reproduced_at_order_three() {
        let dt = 0.02;
        let f = |t: f64| 1.0 - t + 0.3 * t * t - 0.7 * t * t * t;
        let s = series_of(f, 80, dt);
        let cfg = SgConfig {
            window_length: 11,
            poly_order: 3,
            dt,
        };
        let out = savgol_derivatives(&s, cfg).unwrap();
        let d2 = out.thrust_ddot.unwrap();
        for k in 0..80 {
            let t = s.time[k];
            assert!((d2[k] - (0.6 - 4.2 * t)).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let s = series_of(|_| 42.0, 100, 0.01);
        let out = savgol_derivatives(&s, SgConfig::default()).unwrap();
        assert!(out.thrust_dot.unwrap().iter().all(|d| d.abs() < 1e-9));
        assert!(out.thrust_ddot.unwrap().iter().all(|d| d.abs() < 1e-7));
    }

    #[test]
    fn beats_central_differences_on_noisy_sine() {
        let dt = 0.01;
        let n = 1000;
        let noise = Normal::new(0.0, 0.5).unwrap();
        let cfg = SgConfig::default();
        let sg = SavGol::new(cfg).unwrap();
        let mut wins = 0;
        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let w = 2.0 * std::f64::consts::PI * 0.3;
            let y: Vec<f64> = (0..n)
                .map(|k| 50.0 + 10.0 * (w * k as f64 * dt).sin() + noise.sample(&mut rng))
                .collect();
            let truth = |k: usize| 10.0 * w * (w * k as f64 * dt).cos();
            let [_, d1, _] = sg.apply(&y).unwrap();
            let (mut e_sg, mut e_cd) = (0.0, 0.0);
            for k in 1..n - 1 {
                let cd = (y[k + 1] - y[k - 1]) / (2.0 * dt);
                e_sg += (d1[k] - truth(k)).powi(2);
                e_cd += (cd - truth(k)).powi(2);
            }
            if e_sg < e_cd {
                wins += 1;
            }
        }
        assert_eq!(wins, 100);
    }

    #[test]
    fn invalid_configs_rejected() {
        let even = SgConfig {
            window_length: 50,
            ..SgConfig::default()
        };
        assert_eq!(SavGol::new(even).unwrap_err(), FilterError::EvenWindow(50));
        let tight = SgConfig {
            window_length: 5,
            poly_order: 4,
            dt: 0.01,
        };
        assert!(matches!(
            SavGol::new(tight),
            Err(FilterError::OrderTooHigh { .. })
        ));
        let linear = SgConfig {
            poly_order: 1,
            ..SgConfig::default()
        };
        assert_eq!(SavGol::new(linear).unwrap_err(), FilterError::OrderTooLow(1));
        let short = series_of(|t| t, 20, 0.01);
        assert!(matches!(
            savgol_derivatives(&short, SgConfig::default()),
            Err(FilterError::WindowTooLarge { window: 51, len: 20 })
        ));
    }
}
