//! Energy-storage mass and engine count for a hovering robot, electric versus
//! jet propulsion.

use thiserror::Error;

/// Lithium-polymer specific energy (Wh/kg).
pub const LIPO_WH_PER_KG: f64 = 210.0;
/// Jet fuel density (kg/l).
pub const FUEL_KG_PER_L: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SizingError {
    #[error("endurance of {minutes} min is infeasible: storage cannot lift itself")]
    InfeasibleEndurance { minutes: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropulsionKind {
    Electric,
    Jet,
}

/// How fuel burn-off is accounted for over the flight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FuelModel {
    /// Consumption tracks the instantaneous all-up mass, which decays as fuel burns.
    #[default]
    Exponential,
    /// Consumption at the mass carrying half the initial fuel.
    HalfMass,
    /// Consumption at the bare robot mass.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropulsionSpec {
    pub kind: PropulsionKind,
    /// Maximum thrust of one engine (kgf).
    pub thrust_per_engine: f64,
    /// Electrical power per kilogram of thrust (kW/kgf).
    pub power_per_kgf: f64,
    /// Fuel flow per kilogram of thrust (l/min per kgf).
    pub fuel_flow_per_kgf: f64,
    pub energy_density: f64,
    pub fuel_density: f64,
}

impl PropulsionSpec {
    /// Ducted fan of about 13 kgf at 13 kW.
    pub fn electric() -> Self {
        Self {
            kind: PropulsionKind::Electric,
            thrust_per_engine: 13.0,
            power_per_kgf: 1.0,
            fuel_flow_per_kgf: 0.0,
            energy_density: LIPO_WH_PER_KG,
            fuel_density: FUEL_KG_PER_L,
        }
    }

    /// Turbine of about 22 kgf burning 0.6 l/min.
    pub fn jet() -> Self {
        Self {
            kind: PropulsionKind::Jet,
            thrust_per_engine: 22.0,
            power_per_kgf: 0.0,
            fuel_flow_per_kgf: 0.6 / 22.0,
            energy_density: LIPO_WH_PER_KG,
            fuel_density: FUEL_KG_PER_L,
        }
    }
}

fn check(robot_kg: f64, minutes: f64) -> Result<(), SizingError> {
    if !(robot_kg > 0.0 && robot_kg.is_finite()) {
        return Err(SizingError::InvalidInput(format!("robot mass must be positive, got {robot_kg}")));
    }
    if !(minutes >= 0.0 && minutes.is_finite()) {
        return Err(SizingError::InvalidInput(format!("flight time must be non-negative, got {minutes}")));
    }
    Ok(())
}

/// Battery energy fraction per kilogram lifted: `power * t / energy_density`.
fn battery_k(minutes: f64, spec: &PropulsionSpec) -> f64 {
    spec.power_per_kgf * 1000.0 * (minutes / 60.0) / spec.energy_density
}

/// Fuel mass burned per kilogram lifted over the flight.
fn fuel_k(minutes: f64, spec: &PropulsionSpec) -> f64 {
    spec.fuel_flow_per_kgf * spec.fuel_density * minutes
}

/// Battery mass that powers the robot plus itself: `m = (W + m) k`, so
/// `m = W k / (1 - k)`.
pub fn battery_mass(robot_kg: f64, minutes: f64, spec: &PropulsionSpec) -> Result<f64, SizingError> {
    check(robot_kg, minutes)?;
    let k = battery_k(minutes, spec);
    if k >= 1.0 {
        return Err(SizingError::InfeasibleEndurance { minutes });
    }
    Ok(robot_kg * k / (1.0 - k))
}

/// Fuel mass for the flight with the default [`FuelModel::Exponential`].
pub fn fuel_mass(robot_kg: f64, minutes: f64, spec: &PropulsionSpec) -> Result<f64, SizingError> {
    fuel_mass_with(robot_kg, minutes, spec, FuelModel::Exponential)
}

/// * exponential: `dm/dt = -c (W + m)` ends at zero fuel, `m = W (e^k - 1)`;
/// * half mass: `m = (W + m/2) k`, infeasible for `k >= 2`;
/// * naive: `m = W k`.
pub fn fuel_mass_with(robot_kg: f64, minutes: f64, spec: &PropulsionSpec, model: FuelModel) -> Result<f64, SizingError> {
    check(robot_kg, minutes)?;
    let k = fuel_k(minutes, spec);
    match model {
        FuelModel::Exponential => Ok(robot_kg * k.exp_m1()),
        FuelModel::HalfMass => {
            if k >= 2.0 {
                Err(SizingError::InfeasibleEndurance { minutes })
            } else {
                Ok(robot_kg * k / (1.0 - k / 2.0))
            }
        }
        FuelModel::Naive => Ok(robot_kg * k),
    }
}

/// Engines needed to hover the bare robot; storage mass is not included.
pub fn engine_count(robot_kg: f64, spec: &PropulsionSpec) -> Result<u32, SizingError> {
    check(robot_kg, 0.0)?;
    Ok((robot_kg / spec.thrust_per_engine).ceil() as u32)
}

/// One cell per `(robot, minutes)` pair, row-major over robots.
#[derive(Debug, Clone, PartialEq)]
pub struct MassTable {
    pub robots_kg: Vec<f64>,
    pub minutes: Vec<f64>,
    /// `None` marks an infeasible endurance.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl MassTable {
    pub fn build(
        robots_kg: &[f64],
        minutes: &[f64],
        f: impl Fn(f64, f64) -> Result<f64, SizingError>,
    ) -> Result<Self, SizingError> {
        let mut cells = Vec::with_capacity(robots_kg.len());
        for &w in robots_kg {
            let mut row = Vec::with_capacity(minutes.len());
            for &t in minutes {
                row.push(match f(w, t) {
                    Ok(m) => Some(m),
                    Err(SizingError::InfeasibleEndurance { .. }) => None,
                    Err(e) => return Err(e),
                });
            }
            cells.push(row);
        }
        Ok(Self {
            robots_kg: robots_kg.to_vec(),
            minutes: minutes.to_vec(),
            cells,
        })
    }
}

/// Robot masses and flight times of the reference comparison.
pub const TABLE_ROBOTS_KG: [f64; 5] = [10.0, 20.0, 30.0, 40.0, 50.0];
pub const TABLE_MINUTES: [f64; 3] = [1.0, 3.0, 5.0];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn highlighted_cells() {
        let b = battery_mass(40.0, 5.0, &PropulsionSpec::electric()).unwrap();
        assert!((b - 26.31).abs() <= 0.01, "{b}");
        let f = fuel_mass(40.0, 5.0, &PropulsionSpec::jet()).unwrap();
        assert!((f - 4.61).abs() <= 0.01, "{f}");
        assert_eq!(engine_count(40.0, &PropulsionSpec::electric()).unwrap(), 4);
        assert_eq!(engine_count(40.0, &PropulsionSpec::jet()).unwrap(), 2);
        assert_eq!(engine_count(50.0, &PropulsionSpec::jet()).unwrap(), 3);
        assert_eq!(engine_count(13.0, &PropulsionSpec::electric()).unwrap(), 1);
    }

    #[test]
    fn small_robot_short_flight() {
        let b = battery_mass(10.0, 1.0, &PropulsionSpec::electric()).unwrap();
        assert!((b - 0.86).abs() <= 0.01);
        let f = fuel_mass(10.0, 1.0, &PropulsionSpec::jet()).unwrap();
        assert!((f - 0.22).abs() <= 0.01);
    }

    #[test]
    fn zero_minutes_need_nothing() {
        assert_eq!(battery_mass(25.0, 0.0, &PropulsionSpec::electric()).unwrap(), 0.0);
        for m in [FuelModel::Exponential, FuelModel::HalfMass, FuelModel::Naive] {
            assert_eq!(fuel_mass_with(25.0, 0.0, &PropulsionSpec::jet(), m).unwrap(), 0.0);
        }
    }

    #[test]
    fn self_lift_limit_is_infeasible() {
        // 12.6 minutes exhausts the 210 Wh/kg budget at 1 kW/kgf.
        assert_eq!(
            battery_mass(10.0, 12.6, &PropulsionSpec::electric()),
            Err(SizingError::InfeasibleEndurance { minutes: 12.6 })
        );
        assert!(fuel_mass_with(10.0, 200.0, &PropulsionSpec::jet(), FuelModel::HalfMass).is_err());
        assert!(battery_mass(-1.0, 1.0, &PropulsionSpec::electric()).is_err());
    }

    #[test]
    fn naive_model_differs_from_tables() {
        let naive = fuel_mass_with(40.0, 5.0, &PropulsionSpec::jet(), FuelModel::Naive).unwrap();
        assert!((naive - 4.61).abs() > 0.01);
    }

    proptest! {
        #[test]
        fn fixed_point_residuals_vanish(w in 1.0f64..200.0, t in 0.0f64..12.0) {
            let e = PropulsionSpec::electric();
            let m = battery_mass(w, t, &e).unwrap();
            let k = battery_k(t, &e);
            prop_assert!((m - (w + m) * k).abs() < 1e-9 * (1.0 + m));
            let j = PropulsionSpec::jet();
            let half = fuel_mass_with(w, t, &j, FuelModel::HalfMass).unwrap();
            let kf = fuel_k(t, &j);
            prop_assert!((half - (w + half / 2.0) * kf).abs() < 1e-9 * (1.0 + half));
            // Exponential burn-off: the fuel load solves ln(1 + m / W) = k.
            let exp = fuel_mass(w, t, &j).unwrap();
            prop_assert!(((1.0 + exp / w).ln() - kf).abs() < 1e-9);
        }

        #[test]
        fn masses_increase_with_weight_and_time(w in 1.0f64..100.0, t in 0.1f64..10.0, dw in 0.1f64..10.0, dt in 0.1f64..2.0) {
            let e = PropulsionSpec::electric();
            let j = PropulsionSpec::jet();
            prop_assert!(battery_mass(w + dw, t, &e).unwrap() > battery_mass(w, t, &e).unwrap());
            prop_assert!(battery_mass(w, t + dt, &e).unwrap() > battery_mass(w, t, &e).unwrap());
            prop_assert!(fuel_mass(w + dw, t, &j).unwrap() > fuel_mass(w, t, &j).unwrap());
            prop_assert!(fuel_mass(w, t + dt, &j).unwrap() > fuel_mass(w, t, &j).unwrap());
        }
    }
}
