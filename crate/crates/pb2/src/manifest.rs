//! Run manifests on disk and command-line overrides.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use pb2_core::config::RunConfig;

/// Ablation and sweep switches that take precedence over the manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub no_inherit: bool,
    pub no_onpolicy: bool,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub population: Option<usize>,
    pub disc_include_ref: bool,
    pub strict_threshold: bool,
    /// Number of seeds to run.
    pub seeds: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        if self.no_inherit {
            config.inherit = false;
        }
        if self.no_onpolicy {
            config.on_policy = false;
        }
        if let Some(l) = self.lambda {
            config.lambda = l;
        }
        if let Some(e) = self.epsilon {
            config.epsilon = e;
        }
        if let Some(p) = self.population {
            config.population = p;
        }
        if self.disc_include_ref {
            config.disc_include_ref = true;
        }
        if self.strict_threshold {
            config.strict_threshold = true;
        }
        if let Some(n) = self.seeds {
            config.seeds = seed_list(&config.seeds, n);
        }
    }
}

/// First `n` seeds of `listed`, continued with consecutive integers past the
/// largest listed seed when the list is shorter.
pub fn seed_list(listed: &[u64], n: usize) -> Vec<u64> {
    let mut out: Vec<u64> = listed.iter().copied().take(n).collect();
    let mut next = listed.iter().max().map_or(0, |m| m + 1);
    while out.len() < n {
        out.push(next);
        next += 1;
    }
    out
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).context("malformed run manifest")?;
    config.validate()?;
    Ok(config)
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    parse(&text).with_context(|| format!("in manifest {}", path.display()))
}

/// Canonical TOML form of a configuration. Every field is written.
pub fn to_toml(config: &RunConfig) -> Result<String> {
    Ok(toml::to_string(config)?)
}

pub fn save(config: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, to_toml(config)?)
        .with_context(|| format!("writing manifest {}", path.display()))
}

/// 64-bit FNV-1a hash of the canonical manifest with the seed list removed,
/// so every seed of one configuration shares a hash.
pub fn config_hash(config: &RunConfig) -> Result<u64> {
    let canonical = RunConfig {
        seeds: Vec::new(),
        ..config.clone()
    };
    let text = to_toml(&canonical)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(h)
}
