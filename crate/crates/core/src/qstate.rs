// SPDX-License-Identifier: Apache-2.0

//! Pure states of the system ⊗ refrigerator register, with projective spin
//! measurement, spin flips and system-energy measurement.

use log::warn;
use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemHamiltonian;
use crate::scalar::Real;

/// Unit-norm amplitude vector in the system-major layout
/// (`index = system_index * 2^s + refrigerator_index`).
#[derive(Debug, Clone, PartialEq)]
pub struct PureState<T: Real> {
    amplitudes: DVector<Complex<T>>,
    sys_dim: usize,
    spins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpinOutcome {
    Up,
    Down,
}

#[derive(Debug, Clone)]
pub struct MeasurementOutcome<T: Real> {
    /// 1-based spin index.
    pub spin: usize,
    pub outcome: SpinOutcome,
    /// Pre-measurement probability of the obtained outcome.
    pub probability: T,
    /// Pre-measurement probability of spin up.
    pub p_up: T,
    pub post_state: PureState<T>,
}

#[derive(Debug, Clone)]
pub struct EnergyMeasurement<T: Real> {
    pub index: usize,
    pub energy: T,
    pub probability: T,
    pub post_state: PureState<T>,
    /// Set when the refrigerator was not in its ground state beforehand.
    pub refrigerator_excited: bool,
}

impl<T: Real> PureState<T> {
    /// Normalizes the given amplitudes.
    pub fn from_amplitudes(amplitudes: DVector<Complex<T>>, sys_dim: usize, spins: usize) -> Result<Self> {
        let n = sys_dim << spins;
        if amplitudes.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: amplitudes.len(),
            });
        }
        let norm = amplitudes.norm();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(Error::Numerical("cannot normalize a zero or non-finite state".into()));
        }
        Ok(PureState {
            amplitudes: amplitudes.unscale(norm),
            sys_dim,
            spins,
        })
    }

    /// `system ⊗ |↓…↓⟩`.
    pub fn product_ground(system: &[Complex<T>], spins: usize) -> Result<Self> {
        let rdim = 1usize << spins;
        let mut amps = DVector::zeros(system.len() * rdim);
        for (a, c) in system.iter().enumerate() {
            amps[a * rdim] = *c;
        }
        Self::from_amplitudes(amps, system.len(), spins)
    }

    pub fn amplitudes(&self) -> &DVector<Complex<T>> {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut DVector<Complex<T>> {
        &mut self.amplitudes
    }

    pub fn sys_dim(&self) -> usize {
        self.sys_dim
    }

    pub fn spins(&self) -> usize {
        self.spins
    }

    pub fn fridge_dim(&self) -> usize {
        1 << self.spins
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> T {
        self.amplitudes.norm()
    }

    fn check_spin(&self, spin: usize) -> Result<usize> {
        if spin == 0 || spin > self.spins {
            return Err(Error::IndexOutOfRange {
                index: spin,
                valid: format!("1..={}", self.spins),
            });
        }
        Ok(1 << (spin - 1))
    }

    /// Probability that spin `spin` (1-based) is up.
    pub fn p_up(&self, spin: usize) -> Result<T> {
        let mask = self.check_spin(spin)?;
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(idx, _)| idx & mask != 0)
            .fold(T::zero(), |acc, (_, c)| acc + c.norm_sqr()))
    }

    /// `⟨σ_{z,spin}⟩`.
    pub fn sigma_z(&self, spin: usize) -> Result<T> {
        let up = self.p_up(spin)?;
        Ok(up + up - self.norm().powi(2))
    }

    /// Overlaps `c[(r, k)] = ⟨k, r|ψ⟩` with the system eigenbasis.
    fn eigen_overlaps(&self, eigenvectors: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
        let rdim = self.fridge_dim();
        let re = DMatrix::from_iterator(rdim, self.sys_dim, self.amplitudes.iter().map(|c| c.re));
        let im = DMatrix::from_iterator(rdim, self.sys_dim, self.amplitudes.iter().map(|c| c.im));
        (re * eigenvectors, im * eigenvectors)
    }

    /// Probability of each system energy eigenstate.
    pub fn eigen_populations(&self, sys: &SystemHamiltonian<T>) -> Result<Vec<T>> {
        self.check_system(sys)?;
        let (re, im) = self.eigen_overlaps(&sys.eigenvectors);
        Ok((0..self.sys_dim)
            .map(|k| {
                re.column(k).norm_squared() + im.column(k).norm_squared()
            })
            .collect())
    }

    /// `⟨H_sys ⊗ I⟩` evaluated through the cached eigenbasis.
    pub fn system_energy(&self, sys: &SystemHamiltonian<T>) -> Result<T> {
        let pops = self.eigen_populations(sys)?;
        Ok(pops
            .iter()
            .zip(sys.eigenvalues.iter())
            .fold(T::zero(), |acc, (p, e)| acc + *p * *e))
    }

    /// `⟨I ⊗ diag(fridge)⟩` for a diagonal refrigerator operator.
    pub fn refrigerator_energy(&self, fridge: &DVector<T>) -> Result<T> {
        if fridge.len() != self.fridge_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.fridge_dim(),
                actual: fridge.len(),
            });
        }
        let rdim = self.fridge_dim();
        Ok(self
            .amplitudes
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, c)| acc + c.norm_sqr() * fridge[i % rdim]))
    }

    fn check_system(&self, sys: &SystemHamiltonian<T>) -> Result<()> {
        if sys.dim() != self.sys_dim {
            return Err(Error::DimensionMismatch {
                expected: self.sys_dim,
                actual: sys.dim(),
            });
        }
        Ok(())
    }
}

/// System eigenvector `index` times the all-down refrigerator state.
pub fn initial_state<T: Real>(index: usize, sys: &SystemHamiltonian<T>, spins: usize) -> Result<PureState<T>> {
    if index >= sys.dim() {
        return Err(Error::IndexOutOfRange {
            index,
            valid: format!("0..{}", sys.dim()),
        });
    }
    let column: Vec<Complex<T>> = sys
        .eigenvectors
        .column(index)
        .iter()
        .map(|v| Complex::new(*v, T::zero()))
        .collect();
    PureState::product_ground(&column, spins)
}

/// `⟨ψ|A|ψ⟩` for a real symmetric composite operator. The imaginary part is
/// checked against `1e-10 · max(1, ‖A‖_max)` before being dropped.
pub fn expectation<T: Real>(op: &DMatrix<T>, state: &PureState<T>) -> Result<T> {
    let n = state.dim();
    if op.nrows() != n || op.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: op.nrows(),
        });
    }
    let re = state.amplitudes.map(|c| c.re);
    let im = state.amplitudes.map(|c| c.im);
    let a_re = op * &re;
    let a_im = op * &im;
    let real = re.dot(&a_re) + im.dot(&a_im);
    let imag = re.dot(&a_im) - im.dot(&a_re);
    let scale = op.amax().max(T::one());
    if imag.abs() > T::tol(1e-10) * scale {
        return Err(Error::Numerical(format!(
            "expectation has imaginary part {imag}; operator is not Hermitian or state is corrupted"
        )));
    }
    Ok(real)
}

/// `⟨ψ|A|ψ⟩` for a complex Hermitian operator.
pub fn expectation_hermitian<T: Real>(op: &DMatrix<Complex<T>>, state: &PureState<T>) -> Result<T> {
    let n = state.dim();
    if op.nrows() != n || op.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: op.nrows(),
        });
    }
    let v = op * &state.amplitudes;
    let z = state.amplitudes.dotc(&v);
    let scale = op.iter().fold(T::one(), |m, c| m.max(c.norm_sqr().sqrt()));
    if z.im.abs() > T::tol(1e-10) * scale {
        return Err(Error::Numerical(format!("expectation has imaginary part {}", z.im)));
    }
    Ok(z.re)
}

/// Projective `σ_z` measurement of spin `spin` (1-based). Consumes exactly
/// one uniform draw from `rng`.
pub fn measure_spin<T: Real, R: Rng + ?Sized>(
    state: &PureState<T>,
    spin: usize,
    rng: &mut R,
) -> Result<MeasurementOutcome<T>> {
    let mask = state.check_spin(spin)?;
    let mut p_up = T::zero();
    let mut p_down = T::zero();
    for (idx, c) in state.amplitudes.iter().enumerate() {
        if idx & mask != 0 {
            p_up += c.norm_sqr();
        } else {
            p_down += c.norm_sqr();
        }
    }
    let total = p_up + p_down;
    let p_up = p_up / total;
    let p_down = p_down / total;
    let u: f64 = rng.gen();
    let outcome = if T::of(u) < p_up {
        SpinOutcome::Up
    } else {
        SpinOutcome::Down
    };
    let keep_up = outcome == SpinOutcome::Up;
    let mut amps = state.amplitudes.clone();
    for (idx, c) in amps.iter_mut().enumerate() {
        if (idx & mask != 0) != keep_up {
            *c = Complex::new(T::zero(), T::zero());
        }
    }
    let post_state = PureState::from_amplitudes(amps, state.sys_dim, state.spins)?;
    Ok(MeasurementOutcome {
        spin,
        outcome,
        probability: if keep_up { p_up } else { p_down },
        p_up,
        post_state,
    })
}

/// Applies `σ_{x,spin}` (1-based) to the refrigerator register.
pub fn flip_spin<T: Real>(state: &PureState<T>, spin: usize) -> Result<PureState<T>> {
    let mask = state.check_spin(spin)?;
    let mut out = state.clone();
    for idx in 0..state.dim() {
        if idx & mask == 0 {
            out.amplitudes.swap_rows(idx, idx | mask);
        }
    }
    Ok(out)
}

/// Projective measurement of `H_sys ⊗ I` in the cached eigenbasis. Consumes
/// exactly one uniform draw from `rng`.
pub fn measure_system_energy<T: Real, R: Rng + ?Sized>(
    state: &PureState<T>,
    sys: &SystemHamiltonian<T>,
    fridge_ground: Option<(&DVector<T>, T)>,
    rng: &mut R,
) -> Result<EnergyMeasurement<T>> {
    state.check_system(sys)?;
    let mut refrigerator_excited = false;
    if let Some((fridge, ground)) = fridge_ground {
        let e = state.refrigerator_energy(fridge)?;
        if (e - ground).abs() > T::tol(1e-6) {
            warn!("refrigerator energy {e} differs from ground {ground} before energy measurement");
            refrigerator_excited = true;
        }
    }
    let (re, im) = state.eigen_overlaps(&sys.eigenvectors);
    let pops: Vec<T> = (0..state.sys_dim)
        .map(|k| re.column(k).norm_squared() + im.column(k).norm_squared())
        .collect();
    let total = pops.iter().fold(T::zero(), |a, p| a + *p);
    let u = T::of(rng.gen::<f64>()) * total;
    let mut acc = T::zero();
    let mut index = pops.len() - 1;
    for (k, p) in pops.iter().enumerate() {
        acc += *p;
        if u < acc {
            index = k;
            break;
        }
    }
    // Guard against landing on a zero-probability trailing level through rounding.
    while pops[index] == T::zero() && index > 0 {
        index -= 1;
    }
    let p = pops[index];
    let rdim = state.fridge_dim();
    let scale = T::one() / p.sqrt();
    let v = sys.eigenvectors.column(index);
    let mut amps = DVector::zeros(state.dim());
    for a in 0..state.sys_dim {
        for r in 0..rdim {
            amps[a * rdim + r] = Complex::new(re[(r, index)], im[(r, index)]) * (v[a] * scale);
        }
    }
    Ok(EnergyMeasurement {
        index,
        energy: sys.eigenvalues[index],
        probability: p / total,
        post_state: PureState::from_amplitudes(amps, state.sys_dim, state.spins)?,
        refrigerator_excited,
    })
}
