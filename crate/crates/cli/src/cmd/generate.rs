use std::path::PathBuf;

use anyhow::{bail, Context};
use jetid::engine::equilibrium_thrust;
use jetid::simulation::{gen_excitation, simulate, Campaign, ExcitationSpec, SimConfig};
use jetid::ThrustState;
use rayon::prelude::*;

use crate::io::{self, sidecar};
use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Campaign preset: p100-campaign, p220-campaign, p100-smooth or p100-long.
    #[arg(long)]
    preset: Option<String>,
    /// Plant parameters: preset name or parameter file.
    #[arg(long)]
    params: Option<String>,
    /// Engine envelope, p100 or p220.
    #[arg(long)]
    engine: Option<String>,
    /// Excitation file with `[[segment]]` tables.
    #[arg(long)]
    excitation: Option<PathBuf>,
    /// Thrust measurement noise variance (N^2).
    #[arg(long)]
    noise_variance: Option<f64>,
    /// Sampling interval (s).
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    substeps: Option<usize>,
    /// Datasets to draw, with consecutive seeds.
    #[arg(long)]
    replicates: Option<usize>,
    /// Base name of the output files.
    #[arg(long)]
    name: Option<String>,
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<Vec<String>> {
    let c = &ctx.cfg.generate;
    let preset = a.preset.or_else(|| c.preset.clone());
    let excitation_file = a.excitation.or_else(|| c.excitation.clone());
    let campaign = match &preset {
        Some(name) => Some(Campaign::preset(name)?),
        None if excitation_file.is_some() => None,
        None => bail!("generate needs --preset or --excitation"),
    };

    let params_choice = a.params.or_else(|| c.params.clone());
    let params = match (&params_choice, &campaign) {
        (Some(spec), _) => io::load_params(spec)?,
        (None, Some(cp)) => cp.params,
        (None, None) => io::load_params("p100rx-ekf")?,
    };
    let engine = match (a.engine.as_deref().or(c.engine.as_deref()), &campaign) {
        (Some(name), _) => io::engine(Some(name), "")?,
        (None, Some(cp)) => cp.engine.clone(),
        (None, None) => io::engine(None, params_choice.as_deref().unwrap_or(""))?,
    };
    let excitation: ExcitationSpec = match (&excitation_file, &campaign) {
        (Some(path), _) => io::read_toml(path)?,
        (None, Some(cp)) => cp.excitation.clone(),
        (None, None) => unreachable!("checked above"),
    };
    let noise_variance = a
        .noise_variance
        .or(c.noise_variance)
        .or(campaign.as_ref().map(|cp| cp.noise_variance))
        .unwrap_or(0.0);
    let dt = a.dt.or(c.dt).unwrap_or(0.01);
    let substeps = a.substeps.or(c.substeps).unwrap_or(10);
    let replicates = a.replicates.or(c.replicates).unwrap_or(1);
    if replicates == 0 {
        bail!("replicates must be at least 1");
    }
    let name = a
        .name
        .or_else(|| c.name.clone())
        .or_else(|| preset.clone())
        .unwrap_or_else(|| "dataset".into());

    let u = gen_excitation(&excitation, dt, &engine)?;
    if u.is_empty() {
        bail!("the excitation lasts less than one sample; no data to generate");
    }
    let t0 = equilibrium_thrust(u[0], &params, &engine)
        .with_context(|| format!("starting the plant at rest at {} % throttle", u[0]))?;

    let seeds: Vec<u64> = (0..replicates as u64).map(|k| ctx.seed + k).collect();
    let datasets = ctx.pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let cfg = SimConfig {
                    dt,
                    substeps,
                    noise_variance,
                    seed,
                    initial_state: ThrustState::new(t0, 0.0),
                };
                let out = simulate(&params, &u, &cfg)?;
                let mut csv = Vec::new();
                out.series.write_csv(&mut csv)?;
                Ok::<_, anyhow::Error>(csv)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    for (seed, csv) in seeds.iter().zip(datasets) {
        let base = if replicates == 1 {
            name.clone()
        } else {
            format!("{name}-seed{seed}")
        };
        let path = ctx.out.write(&format!("{base}.csv"), csv)?;
        let mut meta = toml::Table::new();
        meta.insert("command".into(), "generate".into());
        if let Some(p) = &preset {
            meta.insert("preset".into(), p.clone().into());
        }
        if let Some(p) = &excitation_file {
            meta.insert("excitation".into(), p.display().to_string().into());
        }
        meta.insert("engine".into(), engine.name.clone().into());
        meta.insert("seed".into(), (*seed as i64).into());
        meta.insert("noise_variance".into(), noise_variance.into());
        meta.insert("dt".into(), dt.into());
        meta.insert("substeps".into(), (substeps as i64).into());
        meta.insert("samples".into(), (u.len() as i64).into());
        ctx.out.write(&format!("{base}.meta.toml"), sidecar(meta, Some(&params)))?;
        println!("wrote {} ({} samples)", path.display(), u.len());
    }
    Ok(Vec::new())
}
