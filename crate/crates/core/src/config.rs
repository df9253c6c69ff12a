// SPDX-License-Identifier: Apache-2.0

//! Ensemble configuration files.
//!
//! A configuration is a JSON object. Only `master_seed` is required; every
//! other key falls back to a default that depends on `model.kind`. Unknown
//! keys are rejected and every error names the offending key path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::lattice::{self, LatticeSpec};
use crate::model::SpectrumSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelConfig {
    /// Seed for the random basis and noise; defaults to the master seed.
    pub seed: Option<u64>,
    pub spectrum: SpectrumSpec,
    pub noise_std: f64,
    pub spins: usize,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig {
            seed: None,
            spectrum: SpectrumSpec::default(),
            noise_std: 1.0,
            spins: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Toy(ToyModelConfig),
    Lattice(LatticeSpec),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Toy(_) => "toy",
            ModelConfig::Lattice(_) => "lattice",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// JSON-lines record file used when the command line gives none.
    pub records: Option<String>,
    /// Report directory used when the command line gives none.
    pub report: Option<String>,
    /// Equal-mass bins for the analysis.
    pub bins: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            records: None,
            report: None,
            bins: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub master_seed: u64,
    pub runs: usize,
    /// Worker threads; `0` uses every available core.
    pub jobs: usize,
    pub model: ModelConfig,
    pub engine: EngineConfig,
    pub output: OutputConfig,
}

impl EnsembleConfig {
    /// Every default for the given model kind.
    pub fn defaults(kind: &str, master_seed: u64) -> Result<Self> {
        let (model, engine) = match kind {
            "toy" => (ModelConfig::Toy(ToyModelConfig::default()), EngineConfig::default()),
            "lattice" => (
                ModelConfig::Lattice(LatticeSpec::default()),
                lattice::default_engine_config(),
            ),
            other => {
                return Err(Error::config(
                    "model.kind",
                    format!("unknown model kind `{other}` (expected `toy` or `lattice`)"),
                ))
            }
        };
        Ok(EnsembleConfig {
            master_seed,
            runs: 100,
            jobs: 1,
            model,
            engine,
            output: OutputConfig::default(),
        })
    }

    /// Checks every invariant, reporting the key path of the first failure.
    pub fn validate(&self) -> Result<()> {
        let at = |path: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::InvalidParameter(m) => Error::config(path, m),
                other => other,
            })
        };
        if self.runs < 1 {
            return Err(Error::config("runs", "must be at least 1"));
        }
        match &self.model {
            ModelConfig::Toy(t) => {
                at("model.spectrum", t.spectrum.validate())?;
                if !(t.noise_std >= 0.0) || !t.noise_std.is_finite() {
                    return Err(Error::config("model.noise_std", "must be finite and >= 0"));
                }
                if t.spins < 1 {
                    return Err(Error::config("model.spins", "must be at least 1"));
                }
                let levels: usize = t.spectrum.region_counts().iter().sum();
                if levels < crate::model::BLOCK_SIZE {
                    return Err(Error::config(
                        "model.spectrum",
                        format!("{levels} levels cannot hold a {0}x{0} coupling block", crate::model::BLOCK_SIZE),
                    ));
                }
            }
            ModelConfig::Lattice(l) => at("model", l.validate())?,
        }
        let e = &self.engine;
        if !(e.fields.lo > 0.0) {
            return Err(Error::config(
                "engine.fields.lo",
                format!("field strengths must be positive (got {})", e.fields.lo),
            ));
        }
        if !(e.fields.hi > e.fields.lo) || !e.fields.hi.is_finite() {
            return Err(Error::config(
                "engine.fields.hi",
                format!("must be finite and exceed fields.lo (got {})", e.fields.hi),
            ));
        }
        at("engine", e.validate())?;
        if self.output.bins < 1 {
            return Err(Error::config("output.bins", "must be at least 1"));
        }
        Ok(())
    }

    /// Seed used to build the model.
    pub fn model_seed(&self) -> u64 {
        match &self.model {
            ModelConfig::Toy(t) => t.seed.unwrap_or(self.master_seed),
            ModelConfig::Lattice(_) => self.master_seed,
        }
    }
}

/// Recursively overlays `user` on `base`; keys absent from `base` are kept
/// so that deserialization can reject them.
fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, u) => *b = u,
    }
}

fn json_path(err: &serde_path_to_error::Error<serde_json::Error>) -> String {
    let p = err.path().to_string();
    if p == "." {
        String::new()
    } else {
        p
    }
}

/// Parses a configuration document, applies defaults and validates it.
pub fn parse_config(text: &str) -> Result<EnsembleConfig> {
    let user: Value = serde_json::from_str(text).map_err(|e| Error::config("", format!("not valid JSON: {e}")))?;
    let Value::Object(obj) = user else {
        return Err(Error::config("", "configuration must be a JSON object"));
    };
    let seed = match obj.get("master_seed") {
        None => return Err(Error::config("master_seed", "missing required key")),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::config("master_seed", "must be a non-negative integer"))?,
    };
    let kind = match obj.get("model").and_then(|m| m.get("kind")) {
        None => "toy".to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(Error::config("model.kind", "must be a string")),
    };
    let mut merged = serde_json::to_value(EnsembleConfig::defaults(&kind, seed)?)?;
    merge(&mut merged, Value::Object(obj));
    if let Some(Value::Object(m)) = merged.get_mut("model") {
        m.insert("kind".into(), Value::String(kind));
    }
    let cfg: EnsembleConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
        let path = json_path(&e);
        Error::config(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<EnsembleConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn write_config(cfg: &EnsembleConfig, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

/// The documented defaults as a JSON object, for `kind`.
pub fn default_document(kind: &str) -> Result<Map<String, Value>> {
    match serde_json::to_value(EnsembleConfig::defaults(kind, 0)?)? {
        Value::Object(m) => Ok(m),
        _ => unreachable!("config serializes to an object"),
    }
}
