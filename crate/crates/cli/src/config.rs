//! Run configuration: one TOML table per subcommand plus a few global keys.
//! Command-line flags override the matching keys.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub rng_seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub identify: IdentifySection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub sizing: SizingSection,
    #[serde(default, rename = "rank-check")]
    pub rank_check: RankSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub preset: Option<String>,
    /// Parameter preset name or parameter file.
    pub params: Option<String>,
    pub engine: Option<String>,
    /// Excitation file replacing the preset's segments.
    pub excitation: Option<PathBuf>,
    pub noise_variance: Option<f64>,
    pub dt: Option<f64>,
    pub substeps: Option<usize>,
    pub replicates: Option<usize>,
    pub name: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifySection {
    pub method: Option<String>,
    pub sg_window: Option<usize>,
    pub sg_order: Option<usize>,
    /// Initial EKF guess: parameter preset name or parameter file.
    pub guess: Option<String>,
    /// Relative perturbation applied to the guess, alternating in sign.
    pub guess_mismatch: Option<f64>,
    pub ekf_r: Option<f64>,
    pub ekf_passes: Option<usize>,
    pub ekf_substeps: Option<usize>,
    pub ekf_prior_rel: Option<f64>,
    pub ekf_p0_shrink: Option<f64>,
    pub ekf_q_decay: Option<f64>,
    pub ls_max_iters: Option<usize>,
    pub ls_tol: Option<f64>,
    pub sindy_degree: Option<u32>,
    pub sindy_threshold: Option<f64>,
    pub sindy_ridge: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub controller: Option<String>,
    pub plant: Option<String>,
    /// Parameters used by the controller; the plant's when absent.
    pub model: Option<String>,
    pub engine: Option<String>,
    pub reference: Option<PathBuf>,
    pub mismatch: Option<f64>,
    pub noise_variance: Option<f64>,
    pub kp: Option<f64>,
    pub kd: Option<f64>,
    pub a1: Option<f64>,
    pub beta: Option<f64>,
    pub k_slope: Option<f64>,
    pub band_pct: Option<f64>,
    pub settle_s: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizingSection {
    pub robots: Option<Vec<f64>>,
    pub minutes: Option<Vec<f64>>,
    pub fuel_model: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankSection {
    pub degree: Option<u32>,
    pub sg_window: Option<usize>,
    pub sg_order: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}
