//! Parameter sourcing and naming during layer construction.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stable 64-bit FNV-1a, used to derive per-parameter seeds from names.
pub(crate) fn fnv1a(seed: u64, text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(text.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Context threaded through `build`: tracks the parameter name path, the
/// config path used in error messages, and where parameters come from.
#[derive(Debug)]
pub struct BuildCtx {
    seed: u64,
    archive: Option<BTreeMap<String, Tensor>>,
    consumed: BTreeSet<String>,
    name_path: Vec<String>,
    config_path: Vec<String>,
}

impl BuildCtx {
    /// Parameters drawn from uniform(-0.5, 0.5), seeded per parameter name.
    pub fn random(seed: u64) -> BuildCtx {
        BuildCtx {
            seed,
            archive: None,
            consumed: BTreeSet::new(),
            name_path: vec![],
            config_path: vec![],
        }
    }

    /// Parameters read from a named archive. `seed` still drives stochastic
    /// layers.
    pub fn from_archive(archive: BTreeMap<String, Tensor>, seed: u64) -> BuildCtx {
        BuildCtx {
            archive: Some(archive),
            ..BuildCtx::random(seed)
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `/`-joined name of the layer currently being built.
    pub fn path(&self) -> String {
        self.name_path.join("/")
    }

    /// Dotted config path; empty segments are skipped and index segments
    /// attach without a dot.
    pub fn config_path(&self) -> String {
        let mut out = String::new();
        for seg in self.config_path.iter().filter(|s| !s.is_empty()) {
            if !out.is_empty() && !seg.starts_with('[') {
                out.push('.');
            }
            out.push_str(seg);
        }
        out
    }

    /// Seed unique to the current layer.
    pub fn derived_seed(&self) -> u64 {
        fnv1a(self.seed, &self.path())
    }

    /// Error attributed to `field` of the config being built.
    pub fn error(&self, field: &str, message: impl Into<String>) -> Error {
        let mut path = self.config_path();
        if !field.is_empty() {
            if !path.is_empty() {
                path.push('.');
            }
            path.push_str(field);
        }
        Error::config(path, message)
    }

    /// Runs `f` with `name` pushed on the name path and `segment` on the
    /// config path.
    pub fn scoped<T>(
        &mut self,
        name: &str,
        segment: &str,
        f: impl FnOnce(&mut BuildCtx) -> Result<T>,
    ) -> Result<T> {
        self.name_path.push(name.to_string());
        self.config_path.push(segment.to_string());
        let out = f(self);
        self.name_path.pop();
        self.config_path.pop();
        out
    }

    /// Fetches or initializes the float parameter `name` of the current layer.
    pub fn param(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let full = format!("{}/{}", self.path(), name);
        match &self.archive {
            Some(archive) => {
                let t = archive
                    .get(&full)
                    .ok_or_else(|| Error::Format(format!("parameter `{full}` missing from archive")))?;
                if t.shape() != shape || t.dtype() != crate::tensor::DType::F32 {
                    return Err(Error::Format(format!(
                        "parameter `{full}` has {}{:?}, expected f32{shape:?}",
                        t.dtype(),
                        t.shape()
                    )));
                }
                if !self.consumed.insert(full.clone()) {
                    return Err(Error::Format(format!("parameter `{full}` requested twice")));
                }
                Ok(t.clone())
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(self.seed, &full));
                let dist = Uniform::new(-0.5f32, 0.5f32);
                let n = shape.iter().product();
                let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
                Tensor::from_f32(shape.to_vec(), data)
            }
        }
    }

    /// Fails if an archive entry was never used.
    pub fn finish(self) -> Result<()> {
        if let Some(archive) = &self.archive {
            let unused: Vec<&String> = archive
                .keys()
                .filter(|k| !self.consumed.contains(*k))
                .collect();
            if !unused.is_empty() {
                return Err(Error::Format(format!("unused parameters in archive: {unused:?}")));
            }
        }
        Ok(())
    }
}

/// Resolves child names: explicit names must be unique among siblings,
/// missing ones become `<kind>_<index>`.
pub fn child_names(
    ctx: &BuildCtx,
    field: &str,
    children: &[(Option<&str>, &str)],
) -> Result<Vec<String>> {
    let names: Vec<String> = children
        .iter()
        .enumerate()
        .map(|(i, (name, kind))| match name {
            Some(n) => n.to_string(),
            None => format!("{kind}_{i}"),
        })
        .collect();
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() || n.contains('/') {
            return Err(ctx.error(&format!("{field}[{i}].name"), format!("invalid name `{n}`")));
        }
        if names[..i].contains(n) {
            return Err(ctx.error(
                &format!("{field}[{i}].name"),
                format!("duplicate sibling name `{n}`"),
            ));
        }
    }
    Ok(names)
}
