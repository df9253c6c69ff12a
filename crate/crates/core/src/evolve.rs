// SPDX-License-Identifier: Apache-2.0

//! Exact time evolution `U = exp(-i H dt)` (ħ = 1) through the
//! eigendecomposition of a real symmetric Hamiltonian.
//!
//! The propagator is kept in spectral form `U = V e^{-iΛdt} Vᵀ`; applying it
//! costs two real matrix-vector products per component. The dense unitary is
//! only formed on request.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qstate::PureState;
use crate::scalar::Real;

/// Bound on `‖U†U − I‖_max` enforced at construction.
pub const UNITARITY_TOL: f64 = 1e-10;
/// Symmetry tolerance on the input Hamiltonian, relative to `max(1, ‖H‖_max)`.
pub const HERMITICITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Propagator<T: Real> {
    vectors: DMatrix<T>,
    eigenvalues: DVector<T>,
    dt: T,
    /// Certified upper bound on `‖U†U − I‖_max`.
    unitarity_bound: T,
}

/// Builds `exp(-i H dt)`.
///
/// With `ε = ‖VᵀV − I‖_F` for the computed eigenvectors, every entry of
/// `U†U − I` is bounded by `ε(2 + 3ε)` (for `ε ≤ 0.1`); that bound is what
/// gets checked.
pub fn propagator<T: Real>(h: &DMatrix<T>, dt: T) -> Result<Propagator<T>> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            actual: h.ncols(),
        });
    }
    let scale = h.amax().max(T::one());
    let n = h.nrows();
    for i in 0..n {
        for j in 0..i {
            if (h[(i, j)] - h[(j, i)]).abs() > T::tol(HERMITICITY_TOL) * scale {
                return Err(Error::InvalidParameter(format!(
                    "Hamiltonian is not Hermitian at ({i}, {j})"
                )));
            }
        }
    }
    let eig = T::sym_eigen(h)?;
    let eps = eig.orthogonality_defect;
    let unitarity_bound = eps * (T::of(2.0) + T::of(3.0) * eps);
    if !(unitarity_bound < T::tol(UNITARITY_TOL)) {
        return Err(Error::Numerical(format!(
            "propagator unitarity bound {unitarity_bound} exceeds tolerance"
        )));
    }
    Ok(Propagator {
        vectors: eig.vectors,
        eigenvalues: eig.values,
        dt,
        unitarity_bound,
    })
}

impl<T: Real> Propagator<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn eigenvalues(&self) -> &DVector<T> {
        &self.eigenvalues
    }

    /// Largest `|λ|` of the generating Hamiltonian.
    pub fn spectral_radius(&self) -> T {
        self.eigenvalues.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn unitarity_bound(&self) -> T {
        self.unitarity_bound
    }

    fn phases(&self, sign: T) -> DVector<Complex<T>> {
        self.eigenvalues.map(|l| {
            let theta = -sign * l * self.dt;
            Complex::new(theta.cos(), theta.sin())
        })
    }

    /// Dense `U`.
    pub fn matrix(&self) -> DMatrix<Complex<T>> {
        let phases = self.phases(T::one());
        let n = self.dim();
        let cos = DMatrix::from_diagonal(&phases.map(|p| p.re));
        let sin = DMatrix::from_diagonal(&phases.map(|p| p.im));
        let re = &self.vectors * cos * self.vectors.transpose();
        let im = &self.vectors * sin * self.vectors.transpose();
        DMatrix::from_fn(n, n, |i, j| Complex::new(re[(i, j)], im[(i, j)]))
    }

    /// `ψ ← Uψ`.
    pub fn apply(&self, state: &PureState<T>) -> Result<PureState<T>> {
        self.apply_with(state, T::one())
    }

    /// `ψ ← U†ψ`.
    pub fn apply_adjoint(&self, state: &PureState<T>) -> Result<PureState<T>> {
        self.apply_with(state, -T::one())
    }

    fn apply_with(&self, state: &PureState<T>, sign: T) -> Result<PureState<T>> {
        if state.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: state.dim(),
            });
        }
        let amps = state.amplitudes();
        let re = amps.map(|c| c.re);
        let im = amps.map(|c| c.im);
        let c_re = self.vectors.tr_mul(&re);
        let c_im = self.vectors.tr_mul(&im);
        let phases = self.phases(sign);
        let mut r_re = DVector::zeros(self.dim());
        let mut r_im = DVector::zeros(self.dim());
        for k in 0..self.dim() {
            let z = Complex::new(c_re[k], c_im[k]) * phases[k];
            r_re[k] = z.re;
            r_im[k] = z.im;
        }
        let out_re = &self.vectors * r_re;
        let out_im = &self.vectors * r_im;
        let mut out = state.clone();
        for (k, c) in out.amplitudes_mut().iter_mut().enumerate() {
            *c = Complex::new(out_re[k], out_im[k]);
        }
        let norm = out.norm();
        if (norm - T::one()).abs() > T::tol(UNITARITY_TOL) {
            return Err(Error::Numerical(format!("evolution changed the norm to {norm}")));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::expectation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type C = Complex<f64>;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut h = DMatrix::from_fn(n, n, |_, _| r.gen_range(-5.0..5.0));
        h.fill_upper_triangle_with_lower_triangle();
        h
    }

    fn random_state(n: usize, seed: u64) -> PureState<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let amps = DVector::from_fn(n, |_, _| C::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)));
        PureState::from_amplitudes(amps, n / 2, 1).unwrap()
    }

    fn unitarity_defect(u: &DMatrix<C>) -> f64 {
        let mut g = u.adjoint() * u;
        for i in 0..g.nrows() {
            g[(i, i)] -= C::new(1.0, 0.0);
        }
        g.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    #[test]
    fn zero_time_is_identity() {
        let u = propagator(&random_symmetric(8, 1), 0.0).unwrap().matrix();
        let id = DMatrix::<C>::identity(8, 8);
        assert!((u - id).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn single_spin_phases() {
        let (h, t) = (1.7, 0.9);
        let ham = DMatrix::from_row_slice(2, 2, &[-h, 0.0, 0.0, h]);
        let u = propagator(&ham, t).unwrap().matrix();
        let expect_down = C::new(0.0, h * t).exp();
        let expect_up = C::new(0.0, -h * t).exp();
        assert!((u[(0, 0)] - expect_down).norm() < 1e-12);
        assert!((u[(1, 1)] - expect_up).norm() < 1e-12);
        assert!(u[(0, 1)].norm() < 1e-12 && u[(1, 0)].norm() < 1e-12);
    }

    #[test]
    fn degenerate_pair_rabi_transfer() {
        let (e, c) = (3.0f64, 0.4f64);
        let ham = DMatrix::from_row_slice(2, 2, &[e, c, c, e]);
        for &t in &[0.1, 0.7, 1.9, 3.3] {
            let u = propagator(&ham, t).unwrap().matrix();
            let transfer = u[(1, 0)].norm_sqr();
            assert!((transfer - (c * t).sin().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_unitary_satisfies_bound() {
        for seed in 0..5 {
            let p = propagator(&random_symmetric(40, seed), 0.37).unwrap();
            assert!(p.unitarity_bound() < UNITARITY_TOL);
            assert!(unitarity_defect(&p.matrix()) < UNITARITY_TOL);
        }
    }

    #[test]
    fn apply_matches_dense_and_conserves_energy() {
        let h = random_symmetric(16, 7);
        let p = propagator(&h, 0.8).unwrap();
        let psi = random_state(16, 8);
        let out = p.apply(&psi).unwrap();
        let dense = p.matrix() * psi.amplitudes();
        assert!((out.amplitudes() - dense).iter().all(|z| z.norm() < 1e-12));
        let e0 = expectation(&h, &psi).unwrap();
        let e1 = expectation(&h, &out).unwrap();
        assert!((e0 - e1).abs() < 1e-8 * p.spectral_radius());
        assert!((out.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn adjoint_undoes_evolution() {
        let p = propagator(&random_symmetric(12, 3), 2.5).unwrap();
        let psi = random_state(12, 4);
        let back = p.apply_adjoint(&p.apply(&psi).unwrap()).unwrap();
        assert!((back.amplitudes() - psi.amplitudes()).iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn identity_propagator_leaves_state() {
        let p = propagator(&DMatrix::<f64>::zeros(6, 6), 1.0).unwrap();
        let psi = random_state(6, 5);
        let out = p.apply(&psi).unwrap();
        assert!((out.amplitudes() - psi.amplitudes()).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn rejects_non_hermitian_and_mismatched_inputs() {
        let mut h = random_symmetric(4, 2);
        h[(0, 1)] += 1.0;
        assert!(propagator(&h, 1.0).is_err());
        let p = propagator(&random_symmetric(4, 2), 1.0).unwrap();
        assert!(matches!(
            p.apply(&random_state(6, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let h = DMatrix::<f32>::from_row_slice(2, 2, &[1.0, 0.5, 0.5, -1.0]);
        let p = propagator(&h, 0.3f32).unwrap();
        let psi = PureState::from_amplitudes(
            DVector::from_vec(vec![Complex::new(1.0f32, 0.0), Complex::new(0.0, 0.0)]),
            1,
            1,
        )
        .unwrap();
        let out = p.apply(&psi).unwrap();
        assert!((out.norm() - 1.0).abs() < 1e-5);
    }
}
