// SPDX-License-Identifier: Apache-2.0

//! Toy-model construction: level ladder, randomized system Hamiltonian,
//! spin refrigerator and random block couplings.
//!
//! Composite operators use a system-major layout: basis state
//! `(a, r)` sits at index `a * 2^s + r`, where bit `i - 1` of `r` is spin
//! `i` of the refrigerator (set = up). A system operator `A` therefore
//! lifts to `A ⊗ I` and a refrigerator operator `B` to `I ⊗ B`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Side length of the random coupling block.
pub const BLOCK_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSpec {
    pub span_lo: f64,
    pub span_hi: f64,
    pub n_regions: usize,
    pub growth_coeff: f64,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        SpectrumSpec {
            span_lo: 0.0,
            span_hi: 1000.0,
            n_regions: 10,
            growth_coeff: 0.8,
        }
    }
}

impl SpectrumSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.span_lo.is_finite() && self.span_hi.is_finite()) || self.span_hi <= self.span_lo {
            return Err(Error::InvalidParameter(format!(
                "spectrum span must satisfy span_hi > span_lo (got [{}, {}])",
                self.span_lo, self.span_hi
            )));
        }
        if self.n_regions == 0 {
            return Err(Error::InvalidParameter("spectrum needs at least one region".into()));
        }
        if !self.growth_coeff.is_finite() {
            return Err(Error::InvalidParameter("growth_coeff must be finite".into()));
        }
        Ok(())
    }

    /// Number of levels placed in region `i`: `round(exp(growth_coeff * sqrt(i)))`.
    pub fn region_count(&self, i: usize) -> usize {
        (self.growth_coeff * (i as f64).sqrt()).exp().round() as usize
    }

    pub fn region_counts(&self) -> Vec<usize> {
        (0..self.n_regions).map(|i| self.region_count(i)).collect()
    }
}

/// Level ladder whose density grows with energy. Levels sit at the
/// midpoints of equal sub-intervals of each region.
pub fn gen_spectrum<T: Real>(spec: &SpectrumSpec) -> Result<Vec<T>> {
    spec.validate()?;
    let width = (spec.span_hi - spec.span_lo) / spec.n_regions as f64;
    let mut levels = Vec::new();
    for i in 0..spec.n_regions {
        let n = spec.region_count(i);
        let region_lo = spec.span_lo + i as f64 * width;
        for j in 0..n {
            levels.push(T::of(region_lo + (j as f64 + 0.5) * width / n as f64));
        }
    }
    Ok(levels)
}

/// Real symmetric system Hamiltonian with its eigenpairs cached.
#[derive(Debug, Clone)]
pub struct SystemHamiltonian<T: Real> {
    pub matrix: DMatrix<T>,
    /// Ascending.
    pub eigenvalues: DVector<T>,
    /// Orthonormal columns matching `eigenvalues`.
    pub eigenvectors: DMatrix<T>,
}

impl<T: Real> SystemHamiltonian<T> {
    /// Diagonalizes `matrix`, which must be exactly symmetric.
    pub fn from_matrix(matrix: DMatrix<T>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                actual: matrix.ncols(),
            });
        }
        if matrix != matrix.transpose() {
            return Err(Error::InvalidParameter("system Hamiltonian is not symmetric".into()));
        }
        let eig = T::sym_eigen(&matrix)?;
        let defect = eig.orthogonality_defect;
        if defect > T::tol(1e-10) {
            return Err(Error::Eigensolver(format!(
                "eigenvectors not orthonormal (defect {defect})"
            )));
        }
        Ok(SystemHamiltonian {
            matrix,
            eigenvalues: eig.values,
            eigenvectors: eig.vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ground_energy(&self) -> T {
        self.eigenvalues[0]
    }

    pub fn top_energy(&self) -> T {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn spectrum(&self) -> Vec<T> {
        self.eigenvalues.iter().copied().collect()
    }
}

fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R, std: f64) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::of(z * std)
}

/// Haar-random orthogonal matrix: QR of a Gaussian matrix with the signs of
/// `R`'s diagonal folded into `Q`. Entries are drawn row by row.
pub fn random_orthogonal<T: Real, R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<T> {
    let mut g = DMatrix::<T>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            g[(i, j)] = normal(rng, 1.0);
        }
    }
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Rotates `diag(levels)` into a Haar-random basis and adds symmetrized
/// Gaussian noise `(M + Mᵀ)/2` with entry standard deviation `noise_std`.
pub fn build_system<T: Real, R: Rng + ?Sized>(
    levels: &[T],
    noise_std: f64,
    rng: &mut R,
) -> Result<SystemHamiltonian<T>> {
    if levels.is_empty() {
        return Err(Error::InvalidParameter("empty level list".into()));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise_std must be >= 0 (got {noise_std})")));
    }
    if levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("levels must be ascending".into()));
    }
    let d = levels.len();
    let q = random_orthogonal::<T, R>(d, rng);
    let diag = DVector::from_column_slice(levels);
    let mut h = &q * DMatrix::from_diagonal(&diag) * q.transpose();
    let mut noise = DMatrix::<T>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            noise[(i, j)] = normal(rng, noise_std);
        }
    }
    let half = T::of(0.5);
    h += (&noise + noise.transpose()) * half;
    h.fill_upper_triangle_with_lower_triangle();
    SystemHamiltonian::from_matrix(h)
}

/// `s` independent uniform field strengths in `[lo, hi]`.
pub fn sample_fields<T: Real, R: Rng + ?Sized>(lo: f64, hi: f64, s: usize, rng: &mut R) -> Result<Vec<T>> {
    if !(lo > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "field strengths must be positive (lo = {lo})"
        )));
    }
    if !(hi > lo) || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("field range needs lo < hi (got [{lo}, {hi}])")));
    }
    Ok((0..s).map(|_| T::of(rng.gen_range(lo..=hi))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RefrigeratorConfig<T: Real> {
    pub fields: Vec<T>,
}

impl<T: Real> RefrigeratorConfig<T> {
    pub fn new(fields: Vec<T>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidParameter("refrigerator needs at least one spin".into()));
        }
        if let Some(h) = fields.iter().find(|h| !(**h > T::zero())) {
            return Err(Error::InvalidParameter(format!("field strength {h} is not positive")));
        }
        Ok(RefrigeratorConfig { fields })
    }

    pub fn spins(&self) -> usize {
        self.fields.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.fields.len()
    }

    pub fn ground_energy(&self) -> T {
        -self.fields.iter().fold(T::zero(), |acc, h| acc + *h)
    }
}

/// Diagonal of `Σ hᵢ σ_{z,i}` on the `2^s` refrigerator space.
pub fn build_refrigerator<T: Real>(cfg: &RefrigeratorConfig<T>) -> DVector<T> {
    refrigerator_diagonal(&cfg.fields)
}

pub(crate) fn refrigerator_diagonal<T: Real>(fields: &[T]) -> DVector<T> {
    DVector::from_fn(1 << fields.len(), |r, _| {
        fields.iter().enumerate().fold(T::zero(), |acc, (i, h)| {
            if (r >> i) & 1 == 1 {
                acc + *h
            } else {
                acc - *h
            }
        })
    })
}

/// One spin's coupling block before symmetrization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CouplingBlock<T: Real> {
    pub row: usize,
    pub col: usize,
    /// Row-major `BLOCK_SIZE × BLOCK_SIZE` entries.
    pub entries: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CouplingSpec<T: Real> {
    pub sigma: T,
    pub block_size: usize,
    pub blocks: Vec<CouplingBlock<T>>,
}

impl<T: Real> CouplingSpec<T> {
    /// Draws one block per spin: all offsets first, then all entries.
    pub fn sample<R: Rng + ?Sized>(d: usize, spins: usize, sigma: T, rng: &mut R) -> Result<Self> {
        if d < BLOCK_SIZE {
            return Err(Error::InvalidParameter(format!(
                "system dimension {d} is smaller than the coupling block"
            )));
        }
        if sigma < T::zero() {
            return Err(Error::InvalidParameter(format!("coupling strength {sigma} is negative")));
        }
        let max_offset = d - BLOCK_SIZE;
        let offsets: Vec<(usize, usize)> = (0..spins)
            .map(|_| (rng.gen_range(0..=max_offset), rng.gen_range(0..=max_offset)))
            .collect();
        let sigma_f = sigma.as_f64();
        let blocks = offsets
            .into_iter()
            .map(|(row, col)| CouplingBlock {
                row,
                col,
                entries: (0..BLOCK_SIZE * BLOCK_SIZE).map(|_| normal(rng, sigma_f)).collect(),
            })
            .collect();
        Ok(CouplingSpec {
            sigma,
            block_size: BLOCK_SIZE,
            blocks,
        })
    }

    pub fn spins(&self) -> usize {
        self.blocks.len()
    }

    /// `Kᵢ + Kᵢᵀ` for spin `i` (0-based), a `d × d` system operator.
    pub fn k_matrix(&self, d: usize, i: usize) -> DMatrix<T> {
        let b = &self.blocks[i];
        let n = self.block_size;
        let mut k = DMatrix::zeros(d, d);
        for a in 0..n {
            for c in 0..n {
                let v = b.entries[a * n + c];
                k[(b.row + a, b.col + c)] += v;
                k[(b.col + c, b.row + a)] += v;
            }
        }
        k
    }

    /// Adds `Σᵢ Kᵢ ⊗ σ_{x,i}` into a composite operator of dimension `d·2^s`.
    pub fn add_into(&self, d: usize, h: &mut DMatrix<T>) {
        let spins = self.spins();
        for i in 0..spins {
            add_kron_sigma_x(&self.k_matrix(d, i), i, spins, h);
        }
    }

    /// Dense composite coupling operator.
    pub fn operator(&self, d: usize) -> DMatrix<T> {
        let n = d << self.spins();
        let mut h = DMatrix::zeros(n, n);
        self.add_into(d, &mut h);
        h
    }

    /// Commutator norms computed from the block structure, without forming
    /// composite matrices:
    /// `‖[H_c, H_sys⊗I]‖_F² = 2^s Σᵢ ‖[Kᵢ, H_sys]‖_F²` and
    /// `‖[H_c, I⊗H_ref]‖_F² = 4·2^s Σᵢ hᵢ² ‖Kᵢ‖_F²`.
    pub fn commutator_norms(&self, sys: &DMatrix<T>, fields: &[T]) -> (T, T) {
        let d = sys.nrows();
        let ks: Vec<DMatrix<T>> = (0..self.spins()).map(|i| self.k_matrix(d, i)).collect();
        structured_commutator_norms(&ks, sys, fields)
    }
}

pub(crate) fn structured_commutator_norms<T: Real>(
    site_ops: &[DMatrix<T>],
    sys: &DMatrix<T>,
    fields: &[T],
) -> (T, T) {
    let r = T::of((1usize << fields.len()) as f64);
    let mut sys_sq = T::zero();
    let mut ref_sq = T::zero();
    for (k, h) in site_ops.iter().zip(fields) {
        let c = k * sys - sys * k;
        sys_sq += c.norm_squared();
        ref_sq += k.norm_squared() * *h * *h;
    }
    ((sys_sq * r).sqrt(), (ref_sq * r * T::of(4.0)).sqrt())
}

/// Adds `k ⊗ σ_{x,spin}` (spin 0-based) to a composite operator.
pub(crate) fn add_kron_sigma_x<T: Real>(k: &DMatrix<T>, spin: usize, spins: usize, h: &mut DMatrix<T>) {
    let rdim = 1usize << spins;
    let d = k.nrows();
    let mask = 1usize << spin;
    for a in 0..d {
        for b in 0..d {
            let v = k[(a, b)];
            if v == T::zero() {
                continue;
            }
            for r in 0..rdim {
                h[(a * rdim + r, b * rdim + (r ^ mask))] += v;
            }
        }
    }
}

/// `A ⊗ I_{2^s}`.
pub fn lift_system<T: Real>(a: &DMatrix<T>, spins: usize) -> DMatrix<T> {
    let rdim = 1usize << spins;
    let d = a.nrows();
    let mut out = DMatrix::zeros(d * rdim, d * rdim);
    for i in 0..d {
        for j in 0..d {
            let v = a[(i, j)];
            for r in 0..rdim {
                out[(i * rdim + r, j * rdim + r)] = v;
            }
        }
    }
    out
}

/// `I_d ⊗ diag(fridge)`.
pub fn lift_refrigerator<T: Real>(fridge: &DVector<T>, d: usize) -> DMatrix<T> {
    let rdim = fridge.len();
    DMatrix::from_diagonal(&DVector::from_fn(d * rdim, |i, _| fridge[i % rdim]))
}

/// Samples a block coupling at strength `sigma` and returns its dense
/// composite operator together with the block description.
pub fn build_coupling<T: Real, R: Rng + ?Sized>(
    d: usize,
    cfg: &RefrigeratorConfig<T>,
    sigma: T,
    rng: &mut R,
) -> Result<(DMatrix<T>, CouplingSpec<T>)> {
    let spec = CouplingSpec::sample(d, cfg.spins(), sigma, rng)?;
    Ok((spec.operator(d), spec))
}

/// Frobenius norms of `[H_c, H_sys ⊗ I]` and `[H_c, I ⊗ H_ref]`, formed
/// densely.
pub fn commutator_norms<T: Real>(h_coup: &DMatrix<T>, h_sys: &DMatrix<T>, h_ref: &DVector<T>) -> Result<(T, T)> {
    let n = h_sys.nrows() * h_ref.len();
    if h_coup.nrows() != n || !h_coup.is_square() {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: h_coup.nrows(),
        });
    }
    let spins = h_ref.len().trailing_zeros() as usize;
    let sys = lift_system(h_sys, spins);
    let fridge = lift_refrigerator(h_ref, h_sys.nrows());
    let c1 = h_coup * &sys - &sys * h_coup;
    let c2 = h_coup * &fridge - &fridge * h_coup;
    Ok((c1.norm(), c2.norm()))
}
