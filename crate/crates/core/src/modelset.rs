// SPDX-License-Identifier: Apache-2.0

//! A built model together with its audit document and fingerprint.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{EnsembleConfig, ModelConfig};
use crate::engine::{self, EngineConfig, RunRecord};
use crate::error::{Error, Result};
use crate::lattice::{self, LatticeModel};
use crate::model::{build_system, gen_spectrum, SystemHamiltonian};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub enum Model<T: Real> {
    Toy { sys: SystemHamiltonian<T>, spins: usize },
    Lattice(LatticeModel<T>),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixDoc {
    pub fn from_matrix<T: Real>(m: &DMatrix<T>) -> Self {
        let (rows, cols) = m.shape();
        let data = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].as_f64())
            .collect();
        MatrixDoc { rows, cols, data }
    }

    pub fn to_matrix<T: Real>(&self) -> Result<DMatrix<T>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                actual: self.data.len(),
            });
        }
        Ok(DMatrix::from_row_iterator(
            self.rows,
            self.cols,
            self.data.iter().map(|v| T::of(*v)),
        ))
    }
}

/// Serializable description of a model, enough to rebuild and audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub kind: String,
    pub seed: u64,
    pub fingerprint: String,
    pub spins: usize,
    pub config: ModelConfig,
    /// Noiseless level ladder (toy models only).
    pub levels: Option<Vec<f64>>,
    /// Eigenvalues of the system Hamiltonian, ascending.
    pub eigenvalues: Vec<f64>,
    pub hamiltonian: MatrixDoc,
    /// Sites the refrigerator spins attach to (lattice models only).
    pub sites: Option<Vec<usize>>,
}

impl ModelDocument {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let m = doc.hamiltonian.to_matrix::<f64>()?;
        if fingerprint(&m, doc.spins, &doc.kind) != doc.fingerprint {
            return Err(Error::InvalidParameter(
                "model document fingerprint does not match its Hamiltonian".into(),
            ));
        }
        Ok(doc)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// SHA-256 over the kind, spin count and the Hamiltonian entries as
/// little-endian `f64`, hex encoded.
pub fn fingerprint<T: Real>(m: &DMatrix<T>, spins: usize, kind: &str) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update((spins as u64).to_le_bytes());
    h.update((m.nrows() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            h.update(m[(i, j)].as_f64().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl<T: Real> Model<T> {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        match cfg {
            ModelConfig::Toy(t) => {
                let levels = gen_spectrum::<T>(&t.spectrum)?;
                let sys = build_system(&levels, t.noise_std, &mut ChaCha8Rng::seed_from_u64(seed))?;
                Ok(Model::Toy { sys, spins: t.spins })
            }
            ModelConfig::Lattice(spec) => Ok(Model::Lattice(LatticeModel::new(spec)?)),
        }
    }

    pub fn from_config(cfg: &EnsembleConfig) -> Result<Self> {
        Self::build(&cfg.model, cfg.model_seed())
    }

    pub fn system(&self) -> &SystemHamiltonian<T> {
        match self {
            Model::Toy { sys, .. } => sys,
            Model::Lattice(l) => &l.sys,
        }
    }

    pub fn spins(&self) -> usize {
        match self {
            Model::Toy { spins, .. } => *spins,
            Model::Lattice(l) => l.spins(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Toy { .. } => "toy",
            Model::Lattice(_) => "lattice",
        }
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.system().matrix, self.spins(), self.kind())
    }

    pub fn document(&self, cfg: &ModelConfig, seed: u64) -> Result<ModelDocument> {
        let levels = match cfg {
            ModelConfig::Toy(t) => Some(gen_spectrum::<f64>(&t.spectrum)?),
            ModelConfig::Lattice(_) => None,
        };
        Ok(ModelDocument {
            kind: self.kind().into(),
            seed,
            fingerprint: self.fingerprint(),
            spins: self.spins(),
            config: cfg.clone(),
            levels,
            eigenvalues: self.system().spectrum().iter().map(|e| e.as_f64()).collect(),
            hamiltonian: MatrixDoc::from_matrix(&self.system().matrix),
            sites: match self {
                Model::Lattice(l) => Some(l.sites.clone()),
                Model::Toy { .. } => None,
            },
        })
    }

    /// One run in the mode matching the model, stamped with the model
    /// fingerprint.
    pub fn run(&self, cfg: &EngineConfig, seed: u64) -> Result<RunRecord> {
        let mut rec = match self {
            Model::Toy { sys, spins } => engine::run(sys, *spins, cfg, seed)?,
            Model::Lattice(l) => lattice::run(l, cfg, seed)?,
        };
        rec.model_fingerprint = self.fingerprint();
        Ok(rec)
    }
}
