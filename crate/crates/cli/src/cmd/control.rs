use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::ValueEnum;
use jetid::control::{
    closed_loop_sim, step_ramp_profile, tracking_accuracy, Controller, FlGains, LoopConfig, Reference, ReferenceSpec,
    SmGains, TrackingConfig,
};

use crate::io;
use crate::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Law {
    /// Feedback linearization.
    Fl,
    /// Sliding mode.
    Sm,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(value_enum)]
    controller: Option<Law>,
    /// Plant parameters: preset name or parameter file.
    #[arg(long)]
    plant: Option<String>,
    /// Controller-side parameters; defaults to the plant.
    #[arg(long)]
    model: Option<String>,
    /// Engine limits, p100 or p220.
    #[arg(long)]
    engine: Option<String>,
    /// TOML file of `[[segment]]` entries; defaults to the built-in step and ramp profile.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Relative mismatch applied to the controller-side parameters.
    #[arg(long)]
    mismatch: Option<f64>,
    /// Thrust measurement noise variance (N^2).
    #[arg(long)]
    noise_variance: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    kp: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    kd: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    a1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    k_slope: Option<f64>,
    /// Half-width of the accuracy band (% of the reference).
    #[arg(long)]
    band_pct: Option<f64>,
    /// Time skipped at the start of every reference segment (s).
    #[arg(long)]
    settle_s: Option<f64>,
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<Vec<String>> {
    let c = &ctx.cfg.control;
    let law = match (a.controller, &c.controller) {
        (Some(l), _) => l,
        (None, Some(s)) => Law::from_str(s, true).map_err(|e| anyhow::anyhow!("control.controller: {e}"))?,
        (None, None) => bail!("control needs a controller, fl or sm"),
    };
    let controller = match law {
        Law::Fl => {
            let d = FlGains::reference();
            Controller::FeedbackLinearization(FlGains::new(
                a.kp.or(c.kp).unwrap_or(d.kp),
                a.kd.or(c.kd).unwrap_or(d.kd),
            )?)
        }
        Law::Sm => {
            let d = SmGains::reference();
            Controller::SlidingMode(SmGains::new(
                a.a1.or(c.a1).unwrap_or(d.a1),
                a.beta.or(c.beta).unwrap_or(d.beta),
                a.k_slope.or(c.k_slope).unwrap_or(d.k_slope),
            )?)
        }
    };

    let plant_spec = a.plant.or_else(|| c.plant.clone()).unwrap_or_else(|| "p100rx-ekf".into());
    let plant = io::load_params(&plant_spec)?;
    let engine = io::engine(a.engine.as_deref().or(c.engine.as_deref()), &plant_spec)?;
    let mut cfg = LoopConfig::matched(plant, engine).context("placing the plant on its idle equilibrium")?;
    if let Some(spec) = a.model.or_else(|| c.model.clone()) {
        cfg.model = io::load_params(&spec)?;
    }
    if let Some(rel) = a.mismatch.or(c.mismatch) {
        cfg = cfg.with_mismatch(rel);
    }
    cfg.noise_variance = a.noise_variance.or(c.noise_variance).unwrap_or(0.0);
    cfg.seed = ctx.seed;

    let reference_spec: ReferenceSpec = match a.reference.or_else(|| c.reference.clone()) {
        Some(path) => io::read_toml(&path)?,
        None => step_ramp_profile(),
    };
    let reference = Reference::from_spec(&reference_spec, cfg.dt)?;
    let result = closed_loop_sim(&cfg, &controller, &reference)?;

    let d = TrackingConfig::default();
    let tracking = TrackingConfig {
        band_pct: a.band_pct.or(c.band_pct).unwrap_or(d.band_pct),
        settle_s: a.settle_s.or(c.settle_s).unwrap_or(d.settle_s),
    };
    let mut report = tracking_accuracy(&result.thrust(), &reference, &tracking);
    report.saturation_duty = result.report.saturation_duty;
    report.low_saturation_duty = result.report.low_saturation_duty;
    report.input_total_variation = result.report.input_total_variation;

    let name = match law {
        Law::Fl => "control-fl",
        Law::Sm => "control-sm",
    };
    let mut trace = Vec::new();
    result.write_csv(&mut trace)?;
    let path = ctx.out.write(&format!("{name}-trace.csv"), trace)?;
    println!("wrote {}", path.display());
    let text = report.to_text();
    let path = ctx.out.write(&format!("{name}-report.txt"), &text)?;
    println!("wrote {}", path.display());
    print!("{text}");

    let mut warnings = Vec::new();
    if report.persistent_error {
        warnings.push("the reference leaves the band persistently; it may lie outside the engine's thrust range".into());
    }
    Ok(warnings)
}
