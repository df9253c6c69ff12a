// SPDX-License-Identifier: Apache-2.0

//! Canonical-ensemble arithmetic on a known spectrum.
//!
//! Temperatures are carried as inverse temperatures `β = 1/T` so the
//! infinite-temperature point (`β = 0`) and negative temperatures need no
//! special casing. Weights are shifted by the extreme level on the
//! dominant side before exponentiation; the shift cancels on normalization.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_BETA_MAX: f64 = 10.0;

fn extremes<T: Real>(spectrum: &[T]) -> (T, T) {
    spectrum.iter().fold((spectrum[0], spectrum[0]), |(lo, hi), e| (lo.min(*e), hi.max(*e)))
}

fn weights<T: Real>(spectrum: &[T], beta: T) -> Vec<T> {
    let (lo, hi) = extremes(spectrum);
    let shift = if beta >= T::zero() { lo } else { hi };
    spectrum.iter().map(|e| (-beta * (*e - shift)).exp()).collect()
}

/// `Σ E_k e^{-βE_k} / Σ e^{-βE_k}`.
pub fn mean_energy<T: Real>(spectrum: &[T], beta: T) -> T {
    let w = weights(spectrum, beta);
    let z = w.iter().fold(T::zero(), |a, x| a + *x);
    w.iter().zip(spectrum).fold(T::zero(), |a, (x, e)| a + *x * *e) / z
}

/// Canonical energy standard deviation at `beta`.
pub fn energy_sd<T: Real>(spectrum: &[T], beta: T) -> T {
    let p = boltzmann_probs(spectrum, beta);
    let mean = p.iter().zip(spectrum).fold(T::zero(), |a, (p, e)| a + *p * *e);
    p.iter()
        .zip(spectrum)
        .fold(T::zero(), |a, (p, e)| a + *p * (*e - mean) * (*e - mean))
        .sqrt()
}

/// Normalized Boltzmann probabilities, in the order of `spectrum`.
pub fn boltzmann_probs<T: Real>(spectrum: &[T], beta: T) -> Vec<T> {
    let w = weights(spectrum, beta);
    let z = w.iter().fold(T::zero(), |a, x| a + *x);
    w.into_iter().map(|x| x / z).collect()
}

/// Result of inverting the energy–temperature relation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BetaFit<T: Real> {
    pub beta: T,
    /// The target lay beyond the mean energy reachable within `±beta_max`.
    pub clamped: bool,
}

impl<T: Real> BetaFit<T> {
    /// `T = 1/β`; infinite at `β = 0`.
    pub fn temperature(&self) -> f64 {
        let b = self.beta.as_f64();
        if b == 0.0 {
            f64::INFINITY
        } else {
            1.0 / b
        }
    }
}

/// Sorted spectrum with the `β ↔ ⟨E⟩` map over `[-beta_max, beta_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ThermalMap<T: Real> {
    spectrum: Vec<T>,
    beta_max: T,
}

impl<T: Real> ThermalMap<T> {
    pub fn new(spectrum: &[T], beta_max: T) -> Result<Self> {
        if spectrum.is_empty() {
            return Err(Error::InvalidParameter("empty spectrum".into()));
        }
        if spectrum.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidParameter("spectrum contains non-finite energies".into()));
        }
        if !(beta_max > T::zero()) {
            return Err(Error::InvalidParameter("beta_max must be positive".into()));
        }
        let mut spectrum = spectrum.to_vec();
        spectrum.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(ThermalMap { spectrum, beta_max })
    }

    pub fn spectrum(&self) -> &[T] {
        &self.spectrum
    }

    pub fn beta_max(&self) -> T {
        self.beta_max
    }

    pub fn span(&self) -> T {
        self.spectrum[self.spectrum.len() - 1] - self.spectrum[0]
    }

    pub fn mean_energy(&self, beta: T) -> T {
        mean_energy(&self.spectrum, beta)
    }

    pub fn energy_sd(&self, beta: T) -> T {
        energy_sd(&self.spectrum, beta)
    }

    pub fn probs(&self, beta: T) -> Vec<T> {
        boltzmann_probs(&self.spectrum, beta)
    }

    /// Bisection for `β` with `⟨E⟩_β = target` to within `1e-8 · span`.
    pub fn temperature_for_energy(&self, target: T) -> Result<BetaFit<T>> {
        let lo_e = self.spectrum[0];
        let hi_e = self.spectrum[self.spectrum.len() - 1];
        if !(target > lo_e && target < hi_e) {
            return Err(Error::InvalidParameter(format!(
                "target energy {target} outside the open spectral range ({lo_e}, {hi_e})"
            )));
        }
        // Root finding is limited by rounding, not by the check tolerances.
        let tol = T::of(1e-8f64.max(64.0 * T::default_epsilon().as_f64())) * self.span();
        if target < self.mean_energy(self.beta_max) {
            return Ok(BetaFit {
                beta: self.beta_max,
                clamped: true,
            });
        }
        if target > self.mean_energy(-self.beta_max) {
            return Ok(BetaFit {
                beta: -self.beta_max,
                clamped: true,
            });
        }
        // mean_energy is decreasing in beta.
        let (mut lo, mut hi) = (-self.beta_max, self.beta_max);
        let half = T::of(0.5);
        let mut mid = T::zero();
        for _ in 0..400 {
            mid = (lo + hi) * half;
            let m = self.mean_energy(mid);
            if (m - target).abs() < tol {
                break;
            }
            if m > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(BetaFit {
            beta: mid,
            clamped: false,
        })
    }

    /// `n` i.i.d. draws from the Boltzmann distribution at `beta`.
    pub fn sample<R: Rng + ?Sized>(&self, beta: T, n: usize, rng: &mut R) -> Result<BoltzmannSample<T>> {
        let indices = boltzmann_sample(&self.probs(beta), n, rng)?;
        let energies: Vec<T> = indices.iter().map(|&i| self.spectrum[i]).collect();
        Ok(BoltzmannSample {
            energy_sd: sample_sd(&energies),
            indices,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BoltzmannSample<T: Real> {
    pub indices: Vec<usize>,
    /// Sample standard deviation of the drawn energies (`None` for `n < 2`).
    pub energy_sd: Option<T>,
}

/// Categorical draws from `probs`.
pub fn boltzmann_sample<T: Real, R: Rng + ?Sized>(probs: &[T], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let w: Vec<f64> = probs.iter().map(|p| p.as_f64()).collect();
    let dist = WeightedIndex::new(&w).map_err(|e| Error::InvalidParameter(format!("bad probabilities: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Unbiased sample standard deviation.
pub fn sample_sd<T: Real>(xs: &[T]) -> Option<T> {
    if xs.len() < 2 {
        return None;
    }
    let n = T::of(xs.len() as f64);
    let mean = xs.iter().fold(T::zero(), |a, x| a + *x) / n;
    let ss = xs.iter().fold(T::zero(), |a, x| a + (*x - mean) * (*x - mean));
    Some((ss / (n - T::one())).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Bin<T: Real> {
    pub lo: T,
    pub hi: T,
    /// Indices into the spectrum handed to [`equal_mass_bins`].
    pub levels: Vec<usize>,
    pub mass: T,
}

/// Contiguous energy bins, ascending, covering every level exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BinSet<T: Real> {
    pub bins: Vec<Bin<T>>,
}

impl<T: Real> BinSet<T> {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn masses(&self) -> Vec<T> {
        self.bins.iter().map(|b| b.mass).collect()
    }

    pub fn bin_of_level(&self, level: usize) -> Option<usize> {
        self.bins.iter().position(|b| b.levels.contains(&level))
    }

    /// Bin whose interval contains `e`; energies outside the covered range
    /// go to the nearest end bin.
    pub fn bin_of_energy(&self, e: T) -> usize {
        self.bins
            .iter()
            .position(|b| e <= b.hi)
            .unwrap_or(self.bins.len() - 1)
    }

    /// Histogram of `energies` over the bins.
    pub fn counts(&self, energies: &[T]) -> Vec<u64> {
        let mut counts = vec![0u64; self.len()];
        for e in energies {
            counts[self.bin_of_energy(*e)] += 1;
        }
        counts
    }
}

/// Partitions the levels (sorted by energy) into `k` contiguous bins whose
/// masses under `probs` are as close as possible to `1/k` each. Each cut is
/// placed greedily at the cumulative position nearest to `j/k`, never
/// between equal energies and always leaving room for the remaining bins.
pub fn equal_mass_bins<T: Real>(probs: &[T], spectrum: &[T], k: usize) -> Result<BinSet<T>> {
    let n = spectrum.len();
    if probs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: probs.len(),
        });
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "cannot build {k} bins over {n} levels"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| spectrum[a].partial_cmp(&spectrum[b]).expect("finite energies"));
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(T::zero());
    for &i in &order {
        let last = *cum.last().unwrap();
        cum.push(last + probs[i]);
    }
    let total = cum[n];
    let mut cuts = vec![0usize];
    for j in 1..k {
        let target = total * T::of(j as f64 / k as f64);
        let prev = *cuts.last().unwrap();
        let max_cut = n - (k - j);
        let best = (prev + 1..=max_cut)
            .filter(|&c| spectrum[order[c - 1]] < spectrum[order[c]])
            .min_by(|&a, &b| {
                (cum[a] - target)
                    .abs()
                    .partial_cmp(&(cum[b] - target).abs())
                    .expect("finite")
            })
            .ok_or_else(|| Error::InvalidParameter("degenerate levels prevent binning".into()))?;
        cuts.push(best);
    }
    cuts.push(n);
    let half = T::of(0.5);
    let energy = |pos: usize| spectrum[order[pos]];
    let bins = cuts
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            let (a, b) = (w[0], w[1]);
            let lo = if j == 0 { energy(0) } else { (energy(a - 1) + energy(a)) * half };
            let hi = if b == n { energy(n - 1) } else { (energy(b - 1) + energy(b)) * half };
            Bin {
                lo,
                hi,
                levels: order[a..b].to_vec(),
                mass: (cum[b] - cum[a]) / total,
            }
        })
        .collect();
    Ok(BinSet { bins })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinTest {
    pub counts: Vec<u64>,
    pub expected: Vec<f64>,
    /// Per-bin binomial z-scores `(c − np)/√(np(1−p))`.
    pub z: Vec<f64>,
    pub chi_square: f64,
    pub dof: usize,
    /// Upper-tail probability; `1.0` when no degrees of freedom remain.
    pub p_value: f64,
    /// Some bin expects fewer than five counts.
    pub low_expected: bool,
}

impl BinTest {
    /// All bins within 3 SD, at least 80% of bins within 2 SD and a
    /// chi-square p-value above 0.01.
    pub fn accepted(&self) -> bool {
        let within2 = self.z.iter().filter(|z| z.abs() <= 2.0).count();
        self.z.iter().all(|z| z.abs() <= 3.0)
            && within2 * 5 >= self.z.len() * 4
            && self.p_value > 0.01
    }
}

/// Pearson goodness-of-fit of `counts` against bin `masses`. When the
/// temperature was fitted from the same sample one more degree of freedom
/// is removed.
pub fn bin_test<T: Real>(counts: &[u64], masses: &[T], beta_fitted: bool) -> Result<BinTest> {
    if counts.len() != masses.len() || counts.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: masses.len(),
            actual: counts.len(),
        });
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidParameter("no observations to test".into()));
    }
    let nf = n as f64;
    let mut z = Vec::with_capacity(counts.len());
    let mut expected = Vec::with_capacity(counts.len());
    let mut chi_square = 0.0;
    let mut low_expected = false;
    for (c, p) in counts.iter().zip(masses) {
        let p = p.as_f64();
        let e = nf * p;
        let diff = *c as f64 - e;
        let var = nf * p * (1.0 - p);
        z.push(if var > 0.0 {
            diff / var.sqrt()
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        });
        if e > 0.0 {
            chi_square += diff * diff / e;
        } else if *c > 0 {
            chi_square = f64::INFINITY;
        }
        if e < 5.0 {
            low_expected = true;
        }
        expected.push(e);
    }
    let dof = (counts.len() as isize - 1 - beta_fitted as isize).max(0) as usize;
    let p_value = if dof == 0 {
        1.0
    } else if chi_square.is_infinite() {
        0.0
    } else {
        ChiSquared::new(dof as f64)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .sf(chi_square)
    };
    Ok(BinTest {
        counts: counts.to_vec(),
        expected,
        z,
        chi_square,
        dof,
        p_value,
        low_expected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn infinite_temperature_mean_is_arithmetic_mean() {
        let s = [1.0f64, 4.0, 9.0, 10.0];
        assert!((mean_energy(&s, 0.0) - 6.0).abs() < 1e-12);
        let p = boltzmann_probs(&s, 0.0);
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn ground_state_dominates_at_large_beta() {
        let s = [0.0f64, 1000.0];
        assert!(mean_energy(&s, 10.0) < 1e-12);
        assert!((mean_energy(&s, -10.0) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn two_level_closed_form() {
        let h = 3.5f64;
        let s = [0.0, 2.0 * h];
        for &b in &[-0.3, -0.01, 0.0, 0.02, 0.4, 2.0] {
            let analytic = 2.0 * h / (1.0 + (2.0 * h * b).exp());
            assert!((mean_energy(&s, b) - analytic).abs() < 1e-12, "beta {b}");
        }
    }

    #[test]
    fn probability_ratios_follow_boltzmann_factor() {
        let s = [0.0f64, 12.0, 30.0, 31.5, 90.0];
        let b = 0.037;
        let p = boltzmann_probs(&s, b);
        for j in 0..s.len() {
            for k in 0..s.len() {
                let ratio = p[j] / p[k];
                let expected = (-b * (s[j] - s[k])).exp();
                assert!((ratio / expected - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inversion_round_trips_and_signs() {
        let s: Vec<f64> = (0..30).map(|i| (i as f64).powf(1.3) * 7.0).collect();
        let map = ThermalMap::new(&s, DEFAULT_BETA_MAX).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let fit = map.temperature_for_energy(mean).unwrap();
        assert!(fit.beta.abs() < 1e-9);
        let above = map.temperature_for_energy(mean + 1.0).unwrap();
        assert!(above.beta < 0.0);
        let below = map.temperature_for_energy(mean - 1.0).unwrap();
        assert!(below.beta > 0.0);
        for &target in &[s[0] + 1.0, 50.0, 120.0, mean, 400.0, s[29] - 1.0] {
            let fit = map.temperature_for_energy(target).unwrap();
            if !fit.clamped {
                assert!((map.mean_energy(fit.beta) - target).abs() < 1e-8 * map.span());
            }
        }
    }

    #[test]
    fn inversion_rejects_targets_outside_open_range() {
        let map = ThermalMap::new(&[0.0, 1.0, 2.0], 10.0).unwrap();
        assert!(map.temperature_for_energy(0.0).is_err());
        assert!(map.temperature_for_energy(2.0).is_err());
        assert!(map.temperature_for_energy(-1.0).is_err());
    }

    #[test]
    fn unreachable_target_is_clamped() {
        let map = ThermalMap::new(&[0.0, 1.0, 2.0], 0.1).unwrap();
        let fit = map.temperature_for_energy(0.01).unwrap();
        assert!(fit.clamped && fit.beta == 0.1);
        let fit = map.temperature_for_energy(1.99).unwrap();
        assert!(fit.clamped && fit.beta == -0.1);
        assert_eq!(BetaFit { beta: 0.0, clamped: false }.temperature(), f64::INFINITY);
    }

    #[test]
    fn uniform_bins_split_evenly() {
        let s: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let p = vec![0.1; 10];
        let bins = equal_mass_bins(&p, &s, 5).unwrap();
        assert_eq!(bins.len(), 5);
        for b in &bins.bins {
            assert_eq!(b.levels.len(), 2);
            assert!((b.mass - 0.2).abs() < 1e-12);
        }
        let one = equal_mass_bins(&p, &s, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one.bins[0].mass - 1.0).abs() < 1e-12);
        assert!(equal_mass_bins(&p, &s, 11).is_err());
        assert!(equal_mass_bins(&p, &s, 0).is_err());
    }

    #[test]
    fn bins_cover_every_level_once_and_contain_their_energies() {
        let s = [5.0, 1.0, 3.0, 2.0, 8.0, 13.0, 21.0];
        let p = boltzmann_probs(&s, 0.1);
        let bins = equal_mass_bins(&p, &s, 3).unwrap();
        let mut seen: Vec<usize> = bins.bins.iter().flat_map(|b| b.levels.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        for (i, e) in s.iter().enumerate() {
            assert_eq!(bins.bin_of_energy(*e), bins.bin_of_level(i).unwrap());
        }
        let total: f64 = bins.masses().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_counts_give_zero_statistic() {
        let masses = [0.2, 0.2, 0.2, 0.2, 0.2];
        let t = bin_test(&[20, 20, 20, 20, 20], &masses, false).unwrap();
        assert!(t.z.iter().all(|z| *z == 0.0));
        assert_eq!(t.chi_square, 0.0);
        assert_eq!(t.dof, 4);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        assert!(t.accepted());
        let fitted = bin_test(&[20, 20, 20, 20, 20], &masses, true).unwrap();
        assert_eq!(fitted.dof, 3);
    }

    #[test]
    fn single_bin_passes_trivially() {
        let t = bin_test(&[37], &[1.0], true).unwrap();
        assert_eq!(t.dof, 0);
        assert_eq!(t.p_value, 1.0);
        assert_eq!(t.z, vec![0.0]);
        assert!(t.accepted());
    }

    #[test]
    fn four_within_one_sd_and_fifth_within_two_is_accepted() {
        // n = 1250, equal masses: SD per bin = sqrt(1250·0.2·0.8) = √200.
        let sd = 200f64.sqrt();
        let zs = [0.9, 0.9, -0.2, -1.8, 0.2];
        let mut counts: Vec<u64> = zs.iter().map(|z| (250.0 + z * sd).round() as u64).collect();
        let drift: i64 = 1250 - counts.iter().sum::<u64>() as i64;
        counts[4] = (counts[4] as i64 + drift) as u64;
        let t = bin_test(&counts, &[0.2; 5], true).unwrap();
        let within1 = t.z.iter().filter(|z| z.abs() <= 1.0).count();
        assert_eq!(within1, 4);
        assert!(t.z.iter().all(|z| z.abs() <= 2.0));
        assert!(t.accepted());
    }

    #[test]
    fn gross_mismatch_is_rejected() {
        let t = bin_test(&[100, 0, 0, 0, 0], &[0.2; 5], false).unwrap();
        assert!(!t.accepted());
        assert!(t.p_value < 1e-10);
    }

    #[test]
    fn low_expected_counts_are_flagged() {
        let t = bin_test(&[3, 2], &[0.5, 0.5], false).unwrap();
        assert!(t.low_expected);
    }

    #[test]
    fn sampling_is_deterministic_and_degenerate_spectrum_is_constant() {
        let map = ThermalMap::new(&[42.0], 10.0).unwrap();
        let s = map.sample(0.3, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(s.indices.iter().all(|&i| i == 0));
        assert_eq!(s.energy_sd, Some(0.0));

        let map = ThermalMap::new(&[0.0, 1.0, 5.0, 6.0], 10.0).unwrap();
        let a = map.sample(0.2, 100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = map.sample(0.2, 100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infinite_temperature_sampling_is_uniform() {
        let d = 8;
        let s: Vec<f64> = (0..d).map(|i| i as f64 * 3.0).collect();
        let n = 100_000;
        let idx = boltzmann_sample(&boltzmann_probs(&s, 0.0), n, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut counts = vec![0usize; d];
        for i in idx {
            counts[i] += 1;
        }
        let p = 1.0 / d as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn single_precision_map() {
        let s: Vec<f32> = vec![0.0, 10.0, 20.0, 35.0];
        let map = ThermalMap::new(&s, 10.0f32).unwrap();
        let fit = map.temperature_for_energy(12.0).unwrap();
        assert!((map.mean_energy(fit.beta) - 12.0).abs() < 1e-2);
    }
}
