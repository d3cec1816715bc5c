use std::path::PathBuf;

use jetid::filtering::{savgol_derivatives, SgConfig};
use jetid::format::sig6;
use jetid::simulation::excitation_rank_check;
use jetid::sindy::LibrarySpec;

use super::Report;
use crate::io;
use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct Args {
    dataset: PathBuf,
    /// Maximum total degree of the monomial library.
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long)]
    sg_window: Option<usize>,
    #[arg(long)]
    sg_order: Option<usize>,
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<Vec<String>> {
    let c = &ctx.cfg.rank_check;
    let data = io::read_dataset(&a.dataset)?;
    let spec = LibrarySpec {
        max_total_degree: a.degree.or(c.degree).unwrap_or(LibrarySpec::default().max_total_degree),
    };
    let diff = if data.has_derivatives() {
        data
    } else {
        let d = SgConfig::default();
        let sg = SgConfig {
            window_length: a.sg_window.or(c.sg_window).unwrap_or(d.window_length),
            poly_order: a.sg_order.or(c.sg_order).unwrap_or(d.poly_order),
            dt: data.dt().unwrap_or(d.dt),
        };
        savgol_derivatives(&data, sg)?
    };
    let report = excitation_rank_check(&diff, &spec)?;
    let mut r = Report::default();
    r.text("dataset", a.dataset.display());
    r.text("degree", spec.max_total_degree);
    r.text("columns", report.rank.columns);
    r.text("rank", report.rank.rank);
    r.num("condition", report.rank.condition);
    r.text("exciting", report.exciting);
    r.text(
        "singular_values",
        report.rank.singular_values.iter().map(|s| sig6(*s)).collect::<Vec<_>>().join(","),
    );
    print!("{}", r.into_string());
    let mut warnings = Vec::new();
    if !report.exciting {
        warnings.push(format!(
            "library rank {} of {}: the dataset does not excite every candidate term",
            report.rank.rank, report.rank.columns
        ));
    }
    Ok(warnings)
}
