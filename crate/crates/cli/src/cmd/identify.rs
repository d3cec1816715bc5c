use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::ValueEnum;
use jetid::control::mismatched;
use jetid::filtering::{savgol_derivatives, SgConfig};
use jetid::grayid::{batch_ls_identify, ekf_identify, regressor_matrix, relative_prior, IdConfig, LsConfig};
use jetid::simulation::{excitation_rank_check, regressor_rank};
use jetid::sindy::{build_library, stls, LibrarySpec, SindyError, StlsConfig};
use jetid::TimeSeries;
use rayon::prelude::*;

use super::Report;
use crate::config::IdentifySection;
use crate::io;
use crate::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Sindy,
    Ls,
    Ekf,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Identification method.
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Datasets in the `time_s,throttle_pct,thrust_n` CSV format.
    #[arg(required = true)]
    datasets: Vec<PathBuf>,
    /// Savitzky-Golay window (samples, odd).
    #[arg(long)]
    sg_window: Option<usize>,
    #[arg(long)]
    sg_order: Option<usize>,
    /// Initial EKF guess: preset name or parameter file.
    #[arg(long)]
    guess: Option<String>,
    /// Relative perturbation of the EKF guess, alternating in sign.
    #[arg(long)]
    guess_mismatch: Option<f64>,
    /// EKF passes over the dataset.
    #[arg(long)]
    passes: Option<usize>,
    /// STLS threshold on normalized coefficients.
    #[arg(long)]
    threshold: Option<f64>,
}

/// Files and warnings produced for one dataset.
struct Outcome {
    files: Vec<(String, Vec<u8>)>,
    summary: String,
    warnings: Vec<String>,
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<Vec<String>> {
    let c = &ctx.cfg.identify;
    let method = match (a.method, &c.method) {
        (Some(m), _) => m,
        (None, Some(s)) => Method::from_str(s, true).map_err(|e| anyhow::anyhow!("identify.method: {e}"))?,
        (None, None) => bail!("identify needs --method sindy|ls|ekf"),
    };
    let sg = SgConfig {
        window_length: a.sg_window.or(c.sg_window).unwrap_or(SgConfig::default().window_length),
        poly_order: a.sg_order.or(c.sg_order).unwrap_or(SgConfig::default().poly_order),
        ..SgConfig::default()
    };
    let guess_spec = a.guess.clone().or_else(|| c.guess.clone());
    let settings = Settings {
        method,
        sg,
        guess_spec,
        guess_mismatch: a.guess_mismatch.or(c.guess_mismatch),
        passes: a.passes.or(c.ekf_passes),
        threshold: a.threshold.or(c.sindy_threshold),
        section: c.clone(),
    };

    let outcomes = ctx.pool.install(|| {
        a.datasets
            .par_iter()
            .map(|path| {
                let data = io::read_dataset(path)?;
                identify_one(&settings, &io::stem(path), data).with_context(|| format!("identifying {}", path.display()))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut warnings = Vec::new();
    for (path, outcome) in a.datasets.iter().zip(outcomes) {
        for (name, bytes) in &outcome.files {
            let written = ctx.out.write(name, bytes)?;
            println!("wrote {}", written.display());
        }
        print!("{}", outcome.summary);
        warnings.extend(outcome.warnings.into_iter().map(|w| format!("{}: {w}", path.display())));
    }
    Ok(warnings)
}

struct Settings {
    method: Method,
    sg: SgConfig,
    guess_spec: Option<String>,
    guess_mismatch: Option<f64>,
    passes: Option<usize>,
    threshold: Option<f64>,
    section: IdentifySection,
}

fn with_dt(sg: SgConfig, data: &TimeSeries) -> SgConfig {
    SgConfig {
        dt: data.dt().unwrap_or(sg.dt),
        ..sg
    }
}

fn identify_one(s: &Settings, stem: &str, data: TimeSeries) -> anyhow::Result<Outcome> {
    match s.method {
        Method::Sindy => sindy(s, stem, data),
        Method::Ls => ls(s, stem, data),
        Method::Ekf => ekf(s, stem, data),
    }
}

fn sindy(s: &Settings, stem: &str, data: TimeSeries) -> anyhow::Result<Outcome> {
    let spec = LibrarySpec {
        max_total_degree: s.section.sindy_degree.unwrap_or(LibrarySpec::default().max_total_degree),
    };
    let defaults = StlsConfig::default();
    let cfg = StlsConfig {
        threshold: s.threshold.unwrap_or(defaults.threshold),
        ridge: s.section.sindy_ridge.unwrap_or(defaults.ridge),
        ..defaults
    };
    let diff = savgol_derivatives(&data, with_dt(s.sg, &data))?;
    let excitation = excitation_rank_check(&diff, &spec)?;
    let mut warnings = Vec::new();
    if !excitation.exciting {
        warnings.push(format!(
            "library rank {} of {}: the dataset is not exciting enough to separate the candidate terms",
            excitation.rank.rank, excitation.rank.columns
        ));
    }
    let (theta, y) = build_library(&diff, &spec)?;
    let model = match stls(&theta, &y, &spec.terms(), &cfg) {
        Ok(m) => m,
        Err(SindyError::AllTermsEliminated) if !excitation.exciting => {
            warnings.push("thresholding eliminated every term; no model written".into());
            return Ok(Outcome {
                files: Vec::new(),
                summary: String::new(),
                warnings,
            });
        }
        Err(e) => return Err(e.into()),
    };
    if model.rank_deficient() {
        warnings.push(format!(
            "final regression rank {} is below the {} active terms",
            model.rank,
            model.n_active()
        ));
    }
    let mut r = Report::default();
    r.text("method", "sindy");
    r.text("samples", data.len());
    r.text("library_terms", spec.len());
    r.text("library_rank", excitation.rank.rank);
    r.num("library_condition", excitation.rank.condition);
    r.text("active_terms", model.n_active());
    r.num("residual_rms", model.residual_rms);
    r.text("iterations", model.iterations);
    let summary = r.into_string();
    Ok(Outcome {
        files: vec![
            (format!("{stem}-sindy.model"), model.to_string().into_bytes()),
            (format!("{stem}-sindy.report.txt"), summary.clone().into_bytes()),
        ],
        summary,
        warnings,
    })
}

fn ls(s: &Settings, stem: &str, data: TimeSeries) -> anyhow::Result<Outcome> {
    let defaults = LsConfig::default();
    let cfg = LsConfig {
        sg: with_dt(s.sg, &data),
        tol: s.section.ls_tol.unwrap_or(defaults.tol),
        max_iters: s.section.ls_max_iters.unwrap_or(defaults.max_iters),
        ..defaults
    };
    let report = batch_ls_identify(&data, &cfg)?;
    let mut warnings = Vec::new();
    if !report.converged {
        warnings.push(format!("alternation stopped after {} iterations without converging", report.iterations));
    }
    let (lo, hi) = cfg.b_uu_bounds;
    if report.params.b_uu <= lo || report.params.b_uu >= hi {
        warnings.push(format!("B_UU = {} sits on its bound [{lo}, {hi}]", report.params.b_uu));
    }
    let diff = if data.has_derivatives() { data.clone() } else { savgol_derivatives(&data, cfg.sg)? };
    let rank = regressor_rank(&regressor_matrix(&diff, &report.params)?);
    if !rank.exciting {
        warnings.push(format!("parameter regressor rank {} of {}", rank.rank.rank, rank.rank.columns));
    }

    let mut trace = csv_writer();
    trace.write_record(["iteration", "residual_rms", "b_uu"])?;
    for (i, (rms, b)) in report.residual_trace.iter().zip(&report.b_uu_trace).enumerate() {
        trace.write_record([(i + 1).to_string(), rms.to_string(), b.to_string()])?;
    }

    let mut r = Report::default();
    r.text("method", "ls");
    r.text("samples", data.len());
    r.text("iterations", report.iterations);
    r.text("converged", report.converged);
    r.num("residual_rms", report.residual_trace.last().copied().unwrap_or(f64::NAN));
    r.text("regressor_rank", rank.rank.rank);
    r.params("", &report.params);
    let summary = r.into_string();
    Ok(Outcome {
        files: vec![
            (format!("{stem}-ls.params"), report.params.to_string().into_bytes()),
            (format!("{stem}-ls-trace.csv"), trace.into_inner()?),
            (format!("{stem}-ls.report.txt"), summary.clone().into_bytes()),
        ],
        summary,
        warnings,
    })
}

fn ekf(s: &Settings, stem: &str, data: TimeSeries) -> anyhow::Result<Outcome> {
    let mut guess = io::load_params(s.guess_spec.as_deref().unwrap_or("p100rx-ekf"))?;
    if let Some(rel) = s.guess_mismatch {
        guess = mismatched(&guess, rel);
    }
    let c = &s.section;
    let mut cfg = IdConfig::new(guess);
    cfg.dt = data.dt().context("the dataset needs at least two samples")?;
    if let Some(v) = c.ekf_r {
        cfg.r = v;
    }
    if let Some(v) = s.passes {
        cfg.n_passes = v;
    }
    if let Some(v) = c.ekf_substeps {
        cfg.substeps = v;
    }
    if let Some(v) = c.ekf_prior_rel {
        cfg.p0_params = relative_prior(&guess, v);
    }
    if let Some(v) = c.ekf_p0_shrink {
        cfg.p0_shrink = v;
    }
    if let Some(v) = c.ekf_q_decay {
        cfg.q_state_decay = v;
    }
    let report = ekf_identify(&data, &cfg)?;
    let mut warnings = Vec::new();
    if let [.., before, last] = report.pass_rms.as_slice() {
        if last > before {
            warnings.push(format!("innovation RMS grew on the last pass ({before} -> {last})"));
        }
    }

    let mut passes = csv_writer();
    let mut header = vec!["pass".to_string(), "innovation_rms".to_string()];
    header.extend(jetid::JetParams::KEYS.iter().map(|k| k.to_string()));
    passes.write_record(&header)?;
    for (i, (rms, p)) in report.pass_rms.iter().zip(&report.pass_params).enumerate() {
        let mut row = vec![(i + 1).to_string(), rms.to_string()];
        row.extend(p.to_array().iter().map(|v| v.to_string()));
        passes.write_record(&row)?;
    }

    let mut r = Report::default();
    r.text("method", "ekf");
    r.text("samples", data.len());
    r.text("passes", cfg.n_passes);
    r.num("innovation_rms", report.pass_rms.last().copied().unwrap_or(f64::NAN));
    r.params("", &report.params);
    for (k, v) in jetid::JetParams::KEYS.iter().zip(&report.cov_diag[2..]) {
        r.num(&format!("std_{k}"), v.max(0.0).sqrt());
    }
    let summary = r.into_string();
    Ok(Outcome {
        files: vec![
            (format!("{stem}-ekf.params"), report.params.to_string().into_bytes()),
            (format!("{stem}-ekf-passes.csv"), passes.into_inner()?),
            (format!("{stem}-ekf.report.txt"), summary.clone().into_bytes()),
        ],
        summary,
        warnings,
    })
}

pub fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}
