use std::path::PathBuf;

use anyhow::Context;
use jetid::engine::thrust_accel;
use jetid::grayid::{validate_model, IdError};
use jetid::simulation::SimError;
use jetid::sindy::SparseModel;
use jetid::JetParams;

use super::identify::csv_writer;
use super::Report;
use crate::io;
use crate::Ctx;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Gray-box parameter file or preset, or a sparse `.model` file.
    model: String,
    /// Dataset to resimulate against.
    dataset: PathBuf,
}

enum Model {
    Gray(JetParams),
    Sparse(SparseModel),
}

fn load_model(spec: &str) -> anyhow::Result<Model> {
    if spec.ends_with(".model") {
        let text = std::fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
        let model = text.parse().with_context(|| format!("parsing sparse model in {spec}"))?;
        return Ok(Model::Sparse(model));
    }
    io::load_params(spec).map(Model::Gray)
}

pub fn run(ctx: &Ctx, a: Args) -> anyhow::Result<Vec<String>> {
    let model = load_model(&a.model)?;
    let data = io::read_dataset(&a.dataset)?;
    let result = match &model {
        Model::Gray(p) => validate_model(|s, u| thrust_accel(s, u, p), &data),
        Model::Sparse(m) => validate_model(|s, u| m.eval(s, u), &data),
    };
    let mut warnings = Vec::new();
    let mut r = Report::default();
    r.text("model", &a.model);
    r.text("dataset", a.dataset.display());
    r.text("samples", data.len());
    let stem = io::stem(&a.dataset);
    match result {
        Ok(v) => {
            r.num("mae_n", v.mae);
            let mut w = csv_writer();
            w.write_record(["time_s", "measured_n", "simulated_n", "residual_n"])?;
            for ((t, m), s) in data.time.iter().zip(&data.thrust).zip(&v.simulated) {
                w.write_record([t.to_string(), m.to_string(), s.to_string(), (m - s).to_string()])?;
            }
            let path = ctx.out.write(&format!("{stem}-residuals.csv"), w.into_inner()?)?;
            println!("wrote {}", path.display());
        }
        Err(IdError::Sim(SimError::NonFiniteState { index })) => {
            r.text("mae_n", "inf");
            warnings.push(format!("open-loop simulation diverged at sample {index}"));
        }
        Err(e) => return Err(e.into()),
    }
    let text = r.into_string();
    let path = ctx.out.write(&format!("{stem}-validation.txt"), &text)?;
    println!("wrote {}", path.display());
    print!("{text}");
    Ok(warnings)
}
