//! File plumbing shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use jetid::{EngineSpec, JetParams, TimeSeries};

/// A parameter preset name or the path of a `KEY = value` parameter file.
pub fn load_params(spec: &str) -> anyhow::Result<JetParams> {
    if JetParams::PRESETS.contains(&spec) {
        return Ok(JetParams::preset(spec)?);
    }
    let path = Path::new(spec);
    if !path.exists() {
        bail!(
            "`{spec}` is neither a parameter preset ({}) nor an existing file",
            JetParams::PRESETS.join(", ")
        );
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse().with_context(|| format!("parsing parameters in {}", path.display()))
}

/// `p100` or `p220`; without a name, guessed from a preset name and
/// defaulting to the P100-RX.
pub fn engine(name: Option<&str>, params_spec: &str) -> anyhow::Result<EngineSpec> {
    match name {
        Some("p100") => Ok(EngineSpec::p100rx()),
        Some("p220") => Ok(EngineSpec::p220rxi()),
        Some(other) => bail!("unknown engine `{other}`, expected p100 or p220"),
        None if params_spec.starts_with("p220") => Ok(EngineSpec::p220rxi()),
        None => Ok(EngineSpec::p100rx()),
    }
}

pub fn read_dataset(path: &Path) -> anyhow::Result<TimeSeries> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    TimeSeries::read_csv(std::io::BufReader::new(file)).with_context(|| format!("reading dataset {}", path.display()))
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// File name without directories and extension, for naming derived outputs.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// Output directory, created on first write.
#[derive(Debug, Clone)]
pub struct OutDir(pub PathBuf);

impl OutDir {
    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(&self.0).with_context(|| format!("creating {}", self.0.display()))?;
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Sidecar metadata as TOML with sorted keys, so reruns are byte-identical.
pub fn sidecar(entries: toml::Table, params: Option<&JetParams>) -> String {
    let mut table = entries;
    if let Some(p) = params {
        let mut sub = toml::Table::new();
        for (k, v) in JetParams::KEYS.iter().zip(p.to_array()) {
            sub.insert((*k).into(), v.into());
        }
        table.insert("params".into(), sub.into());
    }
    toml::to_string(&table).expect("metadata is plain TOML")
}
