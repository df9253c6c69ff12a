// SPDX-License-Identifier: Apache-2.0

//! Ensemble analysis: temperature fit, equal-mass bin test, and the text,
//! CSV and SVG outputs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::RunRecord;
use crate::ensemble::EnsembleSummary;
use crate::error::{Error, Result};
use crate::thermo::{bin_test, equal_mass_bins, BetaFit, BinSet, BinTest, ThermalMap, DEFAULT_BETA_MAX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub runs: usize,
    pub spectrum: Vec<f64>,
    pub summary: EnsembleSummary,
    /// Fit from the mean of the energy expectation values.
    pub fit: Option<BetaFit<f64>>,
    /// Fit from the mean of the measured energies.
    pub fit_measured: Option<BetaFit<f64>>,
    /// Canonical energy SD at the fitted temperature.
    pub sigma_boltzmann: Option<f64>,
    pub bins: Option<BinSet<f64>>,
    pub test: Option<BinTest>,
    /// Why the bin test was not run.
    pub skipped: Option<String>,
}

impl Analysis {
    pub fn temperature(&self) -> Option<f64> {
        self.fit.map(|f| f.temperature())
    }

    pub fn accepted(&self) -> bool {
        self.test.as_ref().is_some_and(|t| t.accepted())
    }
}

/// Fits `β` from the mean expectation energy, bins the spectrum into `k`
/// equal-mass bins at that temperature and tests the measured energies.
pub fn analyze(records: &[RunRecord], k: usize) -> Result<Analysis> {
    if records.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "analysis needs at least 2 records (got {})",
            records.len()
        )));
    }
    let first = &records[0];
    if records
        .iter()
        .any(|r| r.model_fingerprint != first.model_fingerprint || r.spectrum != first.spectrum)
    {
        return Err(Error::InvalidParameter("records come from different models".into()));
    }
    let spectrum = first.spectrum.clone();
    let map = ThermalMap::new(&spectrum, DEFAULT_BETA_MAX)?;
    let summary = EnsembleSummary::from_records(records, Vec::new());
    let mut out = Analysis {
        runs: records.len(),
        spectrum,
        summary,
        fit: None,
        fit_measured: None,
        sigma_boltzmann: None,
        bins: None,
        test: None,
        skipped: None,
    };
    out.fit_measured = map.temperature_for_energy(out.summary.mean_measured).ok();
    if records.iter().all(|r| r.e_measured == first.e_measured) {
        out.skipped = Some("all measured energies are identical".into());
        return Ok(out);
    }
    let fit = match map.temperature_for_energy(out.summary.mean_expectation) {
        Ok(f) => f,
        Err(e) => {
            out.skipped = Some(format!("no temperature fit: {e}"));
            return Ok(out);
        }
    };
    out.fit = Some(fit);
    out.sigma_boltzmann = Some(map.energy_sd(fit.beta));
    let probs = map.probs(fit.beta);
    let bins = equal_mass_bins(&probs, map.spectrum(), k)?;
    let measured: Vec<f64> = records.iter().map(|r| r.e_measured).collect();
    out.test = Some(bin_test(&bins.counts(&measured), &bins.masses(), true)?);
    out.bins = Some(bins);
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.3}"))
}

pub fn report_text(a: &Analysis) -> String {
    let mut s = String::new();
    let s_ = &a.summary;
    let _ = writeln!(s, "runs: {}", a.runs);
    let _ = writeln!(s, "levels: {}", a.spectrum.len());
    let _ = writeln!(s, "mean E_expectation: {:.3}", s_.mean_expectation);
    let _ = writeln!(s, "mean E_measured: {:.3}", s_.mean_measured);
    let _ = writeln!(
        s,
        "E_estimate - E_measured: {:.3} +/- {}",
        s_.mean_estimate_error,
        opt(s_.sd_estimate_error)
    );
    let _ = writeln!(
        s,
        "E_expectation - E_measured: {:.3} +/- {}",
        s_.mean_expectation_error,
        opt(s_.sd_expectation_error)
    );
    match a.fit {
        Some(f) => {
            let _ = writeln!(
                s,
                "temperature (from expectations): {:.3} (beta {:.6e}{})",
                f.temperature(),
                f.beta,
                if f.clamped { ", clamped" } else { "" }
            );
        }
        None => {
            let _ = writeln!(s, "temperature (from expectations): unavailable");
        }
    }
    if let Some(f) = a.fit_measured {
        let _ = writeln!(s, "temperature (from measurements): {:.3}", f.temperature());
    }
    if let Some(sd) = a.sigma_boltzmann {
        let _ = writeln!(s, "Boltzmann energy SD: {sd:.3}");
    }
    if let Some(reason) = &a.skipped {
        let _ = writeln!(s, "bin test skipped: {reason}");
    }
    if let (Some(t), Some(bins)) = (&a.test, &a.bins) {
        let _ = writeln!(s, "bins: {}", bins.len());
        for (j, b) in bins.bins.iter().enumerate() {
            let _ = writeln!(
                s,
                "  bin {}: [{:.2}, {:.2}] expected {:.2} observed {} z {:+.3}",
                j + 1,
                b.lo,
                b.hi,
                t.expected[j],
                t.counts[j],
                t.z[j]
            );
        }
        let _ = writeln!(
            s,
            "chi-square: {:.3} on {} dof, p = {:.4}{}",
            t.chi_square,
            t.dof,
            t.p_value,
            if t.low_expected { " (some expected counts < 5)" } else { "" }
        );
        let _ = writeln!(s, "verdict: {}", if t.accepted() { "consistent" } else { "inconsistent" });
    }
    s
}

/// One row per bin: edges, expected mass and count, observations and the
/// binomial SD band.
pub fn bins_csv(a: &Analysis) -> String {
    let mut s = String::from("bin,lo,hi,levels,expected_mass,expected_count,observed,observed_freq,sd_count,z\n");
    if let (Some(t), Some(bins)) = (&a.test, &a.bins) {
        let n = a.runs as f64;
        for (j, b) in bins.bins.iter().enumerate() {
            let sd = (n * b.mass * (1.0 - b.mass)).sqrt();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                j + 1,
                b.lo,
                b.hi,
                b.levels.len(),
                b.mass,
                t.expected[j],
                t.counts[j],
                t.counts[j] as f64 / n,
                sd,
                t.z[j]
            );
        }
    }
    s
}

/// Bar chart of observed counts per bin with expected counts and ±1 SD
/// bands marked.
pub fn histogram_svg(a: &Analysis) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (Some(t), Some(bins)) = (&a.test, &a.bins) else {
        let _ = writeln!(s, r#"<text x="{pad}" y="{pad}">no bin test available</text>"#);
        s.push_str("</svg>\n");
        return s;
    };
    let n = a.runs as f64;
    let sds: Vec<f64> = bins.bins.iter().map(|b| (n * b.mass * (1.0 - b.mass)).sqrt()).collect();
    let top = t
        .counts
        .iter()
        .map(|c| *c as f64)
        .chain(t.expected.iter().zip(&sds).map(|(e, sd)| e + sd))
        .fold(1.0, f64::max)
        * 1.1;
    let k = bins.len() as f64;
    let plot_w = w - 2.0 * pad;
    let plot_h = h - 2.0 * pad;
    let slot = plot_w / k;
    let y = |v: f64| h - pad - v / top * plot_h;
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    for (j, b) in bins.bins.iter().enumerate() {
        let x0 = pad + j as f64 * slot;
        let c = t.counts[j] as f64;
        let e = t.expected[j];
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#4a7fb5"/>"##,
            x0 + 0.15 * slot,
            y(c),
            0.7 * slot,
            y(0.0) - y(c)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="black" fill-opacity="0.12"/>"##,
            x0 + 0.1 * slot,
            y(e + sds[j]),
            0.8 * slot,
            y((e - sds[j]).max(0.0)) - y(e + sds[j])
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{2:.1}" x2="{:.1}" y2="{2:.1}" stroke="black" stroke-width="3"/>"#,
            x0 + 0.1 * slot,
            x0 + 0.9 * slot,
            y(e)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}-{:.0}</text>"#,
            x0 + 0.5 * slot,
            h - pad + 16.0,
            b.lo,
            b.hi
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">energy bin (observed bars, expected lines, 1 SD bands)</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{:.1}">T = {}  n = {}  p = {:.3}</text>"#,
        pad - 14.0,
        a.temperature().map_or("n/a".into(), |t| format!("{t:.1}")),
        a.runs,
        t.p_value
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `report.txt`, `bins.csv`, `histogram.svg` and `analysis.json`
/// into `dir`.
pub fn write_report(a: &Analysis, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.txt"), report_text(a))?;
    std::fs::write(dir.join("bins.csv"), bins_csv(a))?;
    std::fs::write(dir.join("histogram.svg"), histogram_svg(a))?;
    std::fs::write(dir.join("analysis.json"), serde_json::to_string_pretty(a)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Diagnostics, EngineConfig};
    use crate::thermo::boltzmann_sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn synthetic(spectrum: &[f64], energies: &[f64]) -> Vec<RunRecord> {
        energies
            .iter()
            .enumerate()
            .map(|(i, e)| RunRecord {
                run_index: i,
                master_seed: None,
                seed: i as u64,
                model_fingerprint: "x".into(),
                config: EngineConfig::default(),
                tau: 1.0,
                spectrum: spectrum.to_vec(),
                cycles_run: 1,
                stopped_early: false,
                events: Vec::new(),
                e_initial: spectrum[spectrum.len() - 1],
                e_removed: 0.0,
                e_estimate: *e,
                e_expectation: *e,
                e_measured: *e,
                measured_index: spectrum.iter().position(|s| s == e).unwrap(),
                thermometer: Vec::new(),
                diagnostics: Diagnostics::default(),
                warnings: Vec::new(),
                lattice: None,
            })
            .collect()
    }

    fn spectrum() -> Vec<f64> {
        (0..30).map(|i| 10.0 * i as f64 + (i * i) as f64).collect()
    }

    #[test]
    fn recovers_the_sampling_temperature() {
        let s = spectrum();
        let beta = 0.01;
        let map = ThermalMap::new(&s, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let idx = boltzmann_sample(&map.probs(beta), 2000, &mut rng).unwrap();
        let energies: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let a = analyze(&synthetic(&s, &energies), 5).unwrap();
        let fit = a.fit.unwrap();
        // Delta-method CI: Var(mean E) = σ²/n and d⟨E⟩/dβ = −σ².
        let sd = map.energy_sd(beta);
        let se_beta = 1.0 / (sd * (2000f64).sqrt());
        assert!((fit.beta - beta).abs() < 1.96 * se_beta * 1.5, "beta {}", fit.beta);
        assert!(a.accepted());
        let text = report_text(&a);
        assert!(text.contains("verdict: consistent"));
        assert_eq!(bins_csv(&a).lines().count(), 6);
        let svg = histogram_svg(&a);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn single_bin_passes() {
        let s = spectrum();
        let a = analyze(&synthetic(&s, &[s[1], s[4], s[2]]), 1).unwrap();
        assert!(a.accepted());
    }

    #[test]
    fn identical_energies_skip_the_test() {
        let s = spectrum();
        let a = analyze(&synthetic(&s, &[s[3], s[3], s[3]]), 5).unwrap();
        assert!(a.test.is_none() && a.skipped.is_some());
        assert!(report_text(&a).contains("skipped"));
        assert!(histogram_svg(&a).contains("no bin test"));
    }

    #[test]
    fn rejects_too_few_or_mixed_records() {
        let s = spectrum();
        assert!(analyze(&synthetic(&s, &[s[0]]), 5).is_err());
        let mut r = synthetic(&s, &[s[0], s[1]]);
        r[1].model_fingerprint = "y".into();
        assert!(analyze(&r, 5).is_err());
    }

    #[test]
    fn writes_all_outputs() {
        let s = spectrum();
        let a = analyze(&synthetic(&s, &[s[0], s[5], s[9], s[2]]), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(&a, dir.path()).unwrap();
        for f in ["report.txt", "bins.csv", "histogram.svg", "analysis.json"] {
            assert!(dir.path().join(f).exists());
        }
    }
}
