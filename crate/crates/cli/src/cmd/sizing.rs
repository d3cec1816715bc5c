use anyhow::bail;
use clap::ValueEnum;
use jetid::format::sig6;
use jetid::sizing::{
    battery_mass, engine_count, fuel_mass_with, FuelModel, MassTable, PropulsionSpec, TABLE_MINUTES, TABLE_ROBOTS_KG,
};

use super::identify::csv_writer;
use crate::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fuel {
    Exponential,
    HalfMass,
    Naive,
}

impl From<Fuel> for FuelModel {
    fn from(f: Fuel) -> Self {
        match f {
            Fuel::Exponential => FuelModel::Exponential,
            Fuel::HalfMass => FuelModel::HalfMass,
            Fuel::Naive => FuelModel::Naive,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Robot masses (kg), comma separated.
    #[arg(long, value_delimiter = ',')]
    robots: Option<Vec<f64>>,
    /// Flight times (min), comma separated.
    #[arg(long, value_delimiter = ',')]
    minutes: Option<Vec<f64>>,
    /// Accounting of fuel burn-off.
    #[arg(long, value_enum)]
    fuel_model: Option<Fuel>,
}

/// Table cell in kilograms; infeasible endurances print as `inf`.
fn cell(v: Option<f64>) -> String {
    v.map(|m| format!("{m:.2}")).unwrap_or_else(|| "inf".into())
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|m| m.to_string()).unwrap_or_else(|| "inf".into())
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<Vec<String>> {
    let c = &ctx.cfg.sizing;
    let robots = a.robots.or_else(|| c.robots.clone()).unwrap_or_else(|| TABLE_ROBOTS_KG.to_vec());
    let minutes = a.minutes.or_else(|| c.minutes.clone()).unwrap_or_else(|| TABLE_MINUTES.to_vec());
    let fuel = match (a.fuel_model, &c.fuel_model) {
        (Some(f), _) => f,
        (None, Some(s)) => Fuel::from_str(s, true).map_err(|e| anyhow::anyhow!("sizing.fuel_model: {e}"))?,
        (None, None) => Fuel::Exponential,
    };
    if robots.is_empty() || minutes.is_empty() {
        bail!("sizing needs at least one robot mass and one flight time");
    }
    let electric = PropulsionSpec::electric();
    let jet = PropulsionSpec::jet();
    let batteries = MassTable::build(&robots, &minutes, |w, t| battery_mass(w, t, &electric))?;
    let fuels = MassTable::build(&robots, &minutes, |w, t| fuel_mass_with(w, t, &jet, fuel.into()))?;

    let mut text = String::new();
    let mut csv = csv_writer();
    csv.write_record(["robot_kg", "minutes", "battery_kg", "fuel_kg", "electric_engines", "jet_engines"])?;
    let header: String = minutes.iter().map(|t| format!("{:>10}", format!("{} min", sig6(*t)))).collect();
    let width = header.len();
    text.push_str(&format!("{:>9} |{:<width$} |{:<width$} | engines e/j\n", "robot kg", " battery (kg)", " fuel (kg)"));
    text.push_str(&format!("{:>9} |{header} |{header} |\n", ""));
    for (i, &w) in robots.iter().enumerate() {
        let ne = engine_count(w, &electric)?;
        let nj = engine_count(w, &jet)?;
        let b: String = batteries.cells[i].iter().map(|v| format!("{:>10}", cell(*v))).collect();
        let f: String = fuels.cells[i].iter().map(|v| format!("{:>10}", cell(*v))).collect();
        text.push_str(&format!("{:>9} |{b} |{f} | {ne}/{nj}\n", sig6(w)));
        for (j, &t) in minutes.iter().enumerate() {
            let (bc, fc) = (batteries.cells[i][j], fuels.cells[i][j]);
            csv.write_record([
                w.to_string(),
                t.to_string(),
                csv_cell(bc),
                csv_cell(fc),
                ne.to_string(),
                nj.to_string(),
            ])?;
        }
    }
    print!("{text}");
    let path = ctx.out.write("sizing.csv", csv.into_inner()?)?;
    println!("wrote {}", path.display());
    ctx.out.write("sizing.txt", &text)?;
    Ok(Vec::new())
}
