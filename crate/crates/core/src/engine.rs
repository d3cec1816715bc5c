//! Continuous-time thrust model of a small turbojet.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Below this magnitude the input map `v = u + B_UU u^2` is treated as linear.
pub const LINEAR_INPUT_MAP_EPS: f64 = 1e-12;

/// Fraction of the nominal maximum thrust used as the lower end of the
/// equilibrium bracket. Identified models may idle slightly below zero.
const EQUILIBRIUM_BRACKET_LOW: f64 = -0.1;
/// Fraction of the nominal maximum thrust used as the upper end of the bracket.
const EQUILIBRIUM_BRACKET_HIGH: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    /// `1 + 4 B_UU v < 0`: `v` lies outside the image of the input map.
    /// The nearest saturated throttle is carried along.
    #[error("input map cannot reach v = {v} (negative discriminant); nearest throttle {}", fallback.throttle)]
    DiscriminantNegative { v: f64, fallback: Inversion },
    #[error("no thrust equilibrium for throttle {throttle}% in [{low}, {high}] N")]
    NoEquilibriumInBracket { throttle: f64, low: f64, high: f64 },
    #[error("invalid engine spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown parameter preset `{0}`")]
    UnknownPreset(String),
}

/// Parameter vector of the thrust model, in the canonical order
/// `(K_T, K_TT, K_D, K_DD, K_TD, c, B_U, B_T, B_D, B_UU)`.
///
/// Units follow thrust in newtons and throttle in percent; rescaling the
/// throttle axis rescales every `B_*` coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JetParams {
    pub k_t: f64,
    pub k_tt: f64,
    pub k_d: f64,
    pub k_dd: f64,
    pub k_td: f64,
    pub c: f64,
    pub b_u: f64,
    pub b_t: f64,
    pub b_d: f64,
    pub b_uu: f64,
}

impl JetParams {
    pub const LEN: usize = 10;
    pub const KEYS: [&'static str; 10] = [
        "K_T", "K_TT", "K_D", "K_DD", "K_TD", "c", "B_U", "B_T", "B_D", "B_UU",
    ];
    pub const PRESETS: [&'static str; 4] = ["p100rx-ekf", "p220rxi-ekf", "p100rx-ls", "p220rxi-ls"];

    pub const fn from_array(a: [f64; 10]) -> Self {
        Self {
            k_t: a[0],
            k_tt: a[1],
            k_d: a[2],
            k_dd: a[3],
            k_td: a[4],
            c: a[5],
            b_u: a[6],
            b_t: a[7],
            b_d: a[8],
            b_uu: a[9],
        }
    }

    pub const fn to_array(&self) -> [f64; 10] {
        [
            self.k_t, self.k_tt, self.k_d, self.k_dd, self.k_td, self.c, self.b_u, self.b_t,
            self.b_d, self.b_uu,
        ]
    }

    /// P100-RX, EKF identification.
    pub const P100RX_EKF: Self = Self::from_array([
        -1.460, -0.059, -2.430, 0.0787, 0.1188, -19.92, 0.4317, 0.0116, -0.026, 0.0314,
    ]);
    /// P220-RXi, EKF identification.
    pub const P220RXI_EKF: Self = Self::from_array([
        -0.280, -0.010, 0.5883, 0.0421, 0.0058, -7.839, 0.1874, 0.0137, -0.032, 0.0074,
    ]);
    /// P100-RX, batch least squares identification.
    pub const P100RX_LS: Self = Self::from_array([
        -0.617, -0.015, -0.737, -0.002, 0.0020, -5.631, 0.2175, 0.0090, -0.001, 0.0078,
    ]);
    /// P220-RXi, batch least squares identification.
    pub const P220RXI_LS: Self = Self::from_array([
        0.2027, -0.003, -0.196, 0.0023, -0.002, 20.624, -1.364, -0.002, 0.0067, -0.015,
    ]);

    pub fn preset(name: &str) -> Result<Self, EngineError> {
        match name {
            "p100rx-ekf" => Ok(Self::P100RX_EKF),
            "p220rxi-ekf" => Ok(Self::P220RXI_EKF),
            "p100rx-ls" => Ok(Self::P100RX_LS),
            "p220rxi-ls" => Ok(Self::P220RXI_LS),
            other => Err(EngineError::UnknownPreset(other.to_string())),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// `1 + 2 B_UU u > 0` on the whole throttle range, i.e. `v(u)` is strictly
    /// increasing there and the positive-root inversion is well defined.
    pub fn is_invertible_on(&self, spec: &EngineSpec) -> bool {
        [spec.throttle_min, spec.throttle_max]
            .iter()
            .all(|&u| 1.0 + 2.0 * self.b_uu * u > 0.0)
    }

    /// Multiplies every coefficient by `1 + rel`.
    pub fn perturbed(&self, rel: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * (1.0 + rel)))
    }

    pub fn f(&self, s: ThrustState) -> f64 {
        eval_f(s, self)
    }

    pub fn g(&self, s: ThrustState) -> f64 {
        eval_g(s, self)
    }
}

impl fmt::Display for JetParams {
    /// One `KEY = value` line per coefficient, shortest round-trip decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (key, value) in Self::KEYS.iter().zip(self.to_array()) {
            writeln!(f, "{key} = {value:?}")?;
        }
        Ok(())
    }
}

impl FromStr for JetParams {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut values: [Option<f64>; 10] = [None; 10];
        for (idx, raw) in s.lines().enumerate() {
            let line = idx + 1;
            let text = raw.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let (key, value) = text.split_once('=').ok_or_else(|| EngineError::Parse {
                line,
                message: format!("expected `KEY = value`, got `{text}`"),
            })?;
            let key = key.trim();
            let slot = JetParams::KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| EngineError::Parse {
                    line,
                    message: format!("unknown parameter `{key}`"),
                })?;
            if values[slot].is_some() {
                return Err(EngineError::Parse {
                    line,
                    message: format!("duplicate parameter `{key}`"),
                });
            }
            let parsed: f64 = value.trim().parse().map_err(|_| EngineError::Parse {
                line,
                message: format!("`{}` is not a number", value.trim()),
            })?;
            if !parsed.is_finite() {
                return Err(EngineError::Parse {
                    line,
                    message: format!("`{key}` must be finite"),
                });
            }
            values[slot] = Some(parsed);
        }
        let mut out = [0.0; 10];
        for (i, v) in values.iter().enumerate() {
            out[i] = v.ok_or_else(|| EngineError::Parse {
                line: 0,
                message: format!("missing parameter `{}`", JetParams::KEYS[i]),
            })?;
        }
        Ok(JetParams::from_array(out))
    }
}

/// Plant state: thrust (N) and its rate (N/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThrustState {
    pub thrust: f64,
    pub rate: f64,
}

impl ThrustState {
    pub const fn new(thrust: f64, rate: f64) -> Self {
        Self { thrust, rate }
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.rate.is_finite()
    }
}

/// Datasheet envelope of an engine.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineSpec {
    pub name: String,
    /// Nominal maximum thrust, N.
    pub max_thrust: f64,
    /// Throttle bounds, %.
    pub throttle_min: f64,
    pub throttle_max: f64,
}

impl EngineSpec {
    pub fn new(
        name: impl Into<String>,
        max_thrust: f64,
        throttle_min: f64,
        throttle_max: f64,
    ) -> Result<Self, EngineError> {
        if !(max_thrust > 0.0) {
            return Err(EngineError::InvalidSpec(format!(
                "max thrust must be positive, got {max_thrust}"
            )));
        }
        if !(0.0 < throttle_min && throttle_min < throttle_max && throttle_max <= 100.0) {
            return Err(EngineError::InvalidSpec(format!(
                "throttle range must satisfy 0 < min < max <= 100, got [{throttle_min}, {throttle_max}]"
            )));
        }
        Ok(Self {
            name: name.into(),
            max_thrust,
            throttle_min,
            throttle_max,
        })
    }

    pub fn p100rx() -> Self {
        Self {
            name: "P100-RX".into(),
            max_thrust: 100.0,
            throttle_min: 25.0,
            throttle_max: 100.0,
        }
    }

    pub fn p220rxi() -> Self {
        Self {
            name: "P220-RXi".into(),
            max_thrust: 220.0,
            throttle_min: 25.0,
            throttle_max: 100.0,
        }
    }

    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.throttle_min, self.throttle_max)
    }
}

/// Drift term `f(T, T')`.
pub fn eval_f(s: ThrustState, p: &JetParams) -> f64 {
    let (t, d) = (s.thrust, s.rate);
    p.k_t * t + p.k_tt * t * t + p.k_d * d + p.k_dd * d * d + p.k_td * t * d + p.c
}

/// Input gain `g(T, T')`.
pub fn eval_g(s: ThrustState, p: &JetParams) -> f64 {
    p.b_u + p.b_t * s.thrust + p.b_d * s.rate
}

/// Effective input `v(u) = u + B_UU u^2`.
pub fn input_map(u: f64, b_uu: f64) -> f64 {
    u + b_uu * u * u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Saturation {
    #[default]
    None,
    Low,
    High,
}

impl Saturation {
    pub fn is_saturated(self) -> bool {
        self != Saturation::None
    }
}

/// Throttle recovered from an effective input, with its saturation status.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub throttle: f64,
    pub saturation: Saturation,
}

fn saturate(u_raw: f64, spec: &EngineSpec) -> Inversion {
    let saturation = if u_raw < spec.throttle_min {
        Saturation::Low
    } else if u_raw > spec.throttle_max {
        Saturation::High
    } else {
        Saturation::None
    };
    Inversion {
        throttle: spec.clamp(u_raw),
        saturation,
    }
}

/// Solves `v = u + B_UU u^2` for the root that is continuous with `u = v` at
/// `B_UU = 0`, then clamps to the throttle range.
pub fn invert_input_map(v: f64, b_uu: f64, spec: &EngineSpec) -> Result<Inversion, EngineError> {
    if b_uu.abs() < LINEAR_INPUT_MAP_EPS {
        return Ok(saturate(v, spec));
    }
    let disc = 1.0 + 4.0 * b_uu * v;
    if disc < 0.0 {
        // B_UU > 0: v is below the vertex of the parabola; B_UU < 0: above it.
        let fallback = if b_uu > 0.0 {
            Inversion {
                throttle: spec.throttle_min,
                saturation: Saturation::Low,
            }
        } else {
            Inversion {
                throttle: spec.throttle_max,
                saturation: Saturation::High,
            }
        };
        return Err(EngineError::DiscriminantNegative { v, fallback });
    }
    // (-1 + sqrt(d)) / (2 B_UU) rewritten without the cancellation.
    let u_raw = 2.0 * v / (1.0 + disc.sqrt());
    Ok(saturate(u_raw, spec))
}

/// `T'' = f + g v(u)`.
pub fn thrust_accel(s: ThrustState, u: f64, p: &JetParams) -> f64 {
    eval_f(s, p) + eval_g(s, p) * input_map(u, p.b_uu)
}

/// Steady thrust at constant throttle.
///
/// Scans `[-0.1, 1.5] x max_thrust` for a downward zero crossing of
/// `T -> T''(T, 0)` (a stable rest point) and refines it by bisection.
pub fn equilibrium_thrust(u: f64, p: &JetParams, spec: &EngineSpec) -> Result<f64, EngineError> {
    const GRID: usize = 400;
    let low = EQUILIBRIUM_BRACKET_LOW * spec.max_thrust;
    let high = EQUILIBRIUM_BRACKET_HIGH * spec.max_thrust;
    let accel = |t: f64| thrust_accel(ThrustState::new(t, 0.0), u, p);
    let no_root = EngineError::NoEquilibriumInBracket {
        throttle: u,
        low,
        high,
    };

    let step = (high - low) / GRID as f64;
    let mut bracket = None;
    let mut a = low;
    let mut fa = accel(a);
    for i in 1..=GRID {
        let b = if i == GRID { high } else { low + step * i as f64 };
        let fb = accel(b);
        if fa == 0.0 {
            return Ok(a);
        }
        if fa > 0.0 && fb <= 0.0 {
            bracket = Some((a, b));
            break;
        }
        a = b;
        fa = fb;
    }
    let (mut a, mut b) = bracket.ok_or(no_root)?;
    while b - a > 1e-12 * (1.0 + a.abs().max(b.abs())) {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if accel(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}
