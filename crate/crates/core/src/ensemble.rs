// SPDX-License-Identifier: Apache-2.0

//! Independent runs over a worker pool, streamed to a JSON-lines file.

use std::io::Write;
use std::sync::mpsc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EnsembleConfig;
use crate::engine::RunRecord;
use crate::error::{Error, Result};
use crate::modelset::Model;
use crate::scalar::Real;
use crate::thermo::sample_sd;

/// Weyl increment of SplitMix64.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of run `index`: the `index`-th output of a SplitMix64 generator
/// started at `master`.
pub fn derive_seed(master: u64, index: usize) -> u64 {
    let mut z = master.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub runs: usize,
    pub failures: Vec<RunFailure>,
    pub mean_estimate_error: f64,
    /// `None` with fewer than two runs.
    pub sd_estimate_error: Option<f64>,
    pub mean_expectation_error: f64,
    pub sd_expectation_error: Option<f64>,
    pub mean_measured: f64,
    pub mean_expectation: f64,
}

impl EnsembleSummary {
    /// Means and SDs of `E_estimate − E_measured` and
    /// `E_expectation − E_measured`.
    pub fn from_records(records: &[RunRecord], failures: Vec<RunFailure>) -> Self {
        let n = records.len().max(1) as f64;
        let est: Vec<f64> = records.iter().map(|r| r.e_estimate - r.e_measured).collect();
        let exp: Vec<f64> = records.iter().map(|r| r.e_expectation - r.e_measured).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        EnsembleSummary {
            runs: records.len(),
            failures,
            mean_estimate_error: mean(&est),
            sd_estimate_error: sample_sd(&est),
            mean_expectation_error: mean(&exp),
            sd_expectation_error: sample_sd(&exp),
            mean_measured: records.iter().map(|r| r.e_measured).sum::<f64>() / n,
            mean_expectation: records.iter().map(|r| r.e_expectation).sum::<f64>() / n,
        }
    }

    pub fn sd_undefined(&self) -> bool {
        self.sd_estimate_error.is_none()
    }
}

/// Runs `cfg.runs` independent runs on `cfg.jobs` workers. Completed records
/// are written to `sink` as one JSON line each, in completion order.
/// Individual failures are logged and skipped; more than 1% failed runs
/// abort the ensemble. Returned records are sorted by run index.
pub fn run_ensemble<T: Real, W: Write>(
    cfg: &EnsembleConfig,
    model: &Model<T>,
    mut sink: Option<W>,
) -> Result<(Vec<RunRecord>, EnsembleSummary)> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<(usize, Result<RunRecord>)>();
    let mut records = Vec::with_capacity(cfg.runs);
    let mut failures = Vec::new();
    let mut write_err = None;
    std::thread::scope(|scope| {
        scope.spawn(|| {
            pool.install(|| {
                (0..cfg.runs).into_par_iter().for_each_with(tx, |tx, i| {
                    let seed = derive_seed(cfg.master_seed, i);
                    let out = model.run(&cfg.engine, seed).map(|mut r| {
                        r.run_index = i;
                        r.master_seed = Some(cfg.master_seed);
                        r
                    });
                    // The receiver only disappears if the writer has already failed.
                    let _ = tx.send((i, out));
                });
            });
        });
        for (i, out) in rx {
            match out {
                Ok(rec) => {
                    if let (Some(w), None) = (sink.as_mut(), write_err.as_ref()) {
                        let line = serde_json::to_string(&rec).map_err(Error::from);
                        if let Err(e) = line.and_then(|l| writeln!(w, "{l}").map_err(Error::from)) {
                            write_err = Some(e);
                        }
                    }
                    records.push(rec);
                }
                Err(e) => {
                    warn!("run {i} failed: {e}");
                    failures.push(RunFailure {
                        run_index: i,
                        message: e.to_string(),
                    });
                }
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    if let Some(w) = sink.as_mut() {
        w.flush()?;
    }
    if failures.len() * 100 > cfg.runs {
        return Err(Error::EnsembleAborted {
            failed: failures.len(),
            total: cfg.runs,
        });
    }
    records.sort_by_key(|r| r.run_index);
    failures.sort_by_key(|f| f.run_index);
    let summary = EnsembleSummary::from_records(&records, failures);
    Ok((records, summary))
}

/// Reads a JSON-lines record file, skipping blank lines.
pub fn read_records(path: &std::path::Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::InvalidParameter(format!("record line {}: {e}", k + 1)))
        })
        .collect()
}
