//! Run manifests: which files a run reads and writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use seqlayers::layer::Constant;
use seqlayers::{Constants, Sequence};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    input: PathBuf,
    #[serde(default)]
    params: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
    /// Required: there is no default mode.
    training: bool,
    #[serde(default)]
    block_size: Option<usize>,
    output: PathBuf,
    #[serde(default)]
    constants: BTreeMap<String, PathBuf>,
}

/// A parsed manifest with every path resolved against its directory.
#[derive(Debug)]
pub struct Manifest {
    pub input: PathBuf,
    pub params: Option<PathBuf>,
    pub seed: u64,
    pub training: bool,
    pub block_size: Option<usize>,
    pub output: PathBuf,
    pub constants: BTreeMap<String, PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> anyhow::Result<Manifest> {
        let raw: RawManifest = toml::from_str(text)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        Ok(Manifest {
            input: resolve(raw.input),
            params: raw.params.map(resolve),
            seed: raw.seed,
            training: raw.training,
            block_size: raw.block_size,
            output: resolve(raw.output),
            constants: raw.constants.into_iter().map(|(k, v)| (k, resolve(v))).collect(),
        })
    }

    pub fn load(path: &Path) -> anyhow::Result<Manifest> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Manifest::parse(&text, base).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn read_input(&self) -> anyhow::Result<Sequence> {
        read_sequence(&self.input)
    }

    pub fn read_constants(&self) -> anyhow::Result<Constants> {
        let mut out = Constants::new();
        for (key, path) in &self.constants {
            out.insert(key.clone(), Constant::Sequence(read_sequence(path)?));
        }
        Ok(out)
    }
}

fn read_sequence(path: &Path) -> anyhow::Result<Sequence> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Sequence::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}
