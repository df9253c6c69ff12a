// SPDX-License-Identifier: Apache-2.0

//! Scalar abstraction shared by every numeric module.
//!
//! All matrix math is written against [`Real`], which is implemented for
//! `f32` and `f64`. Tolerances throughout the crate are calibrated for `f64`
//! and widened for narrower types through [`Real::tol`].

use std::fmt::{Debug, Display};

use nalgebra::{DMatrix, DVector, RealField};
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Eigenpairs of a real symmetric matrix, eigenvalues ascending and
/// eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct SymEigen<T: Real> {
    pub values: DVector<T>,
    pub vectors: DMatrix<T>,
    /// `‖VᵀV − I‖_F` of the computed eigenvectors.
    pub orthogonality_defect: T,
}

pub trait Real:
    RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Multiplier applied to tolerances that were chosen for `f64`.
    const TOL_SCALE: f64;

    /// Lossy conversion from an `f64` literal or parameter.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Real type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real types convert to f64")
    }

    /// An `f64`-calibrated tolerance expressed in this precision.
    fn tol(t: f64) -> Self {
        Self::of(t * Self::TOL_SCALE)
    }

    /// Full eigendecomposition of a real symmetric matrix. Only the lower
    /// triangle is read.
    fn sym_eigen(m: &DMatrix<Self>) -> Result<SymEigen<Self>>;
}

macro_rules! impl_real {
    ($t:ty, $scale:expr) => {
        impl Real for $t {
            const TOL_SCALE: f64 = $scale;

            fn sym_eigen(m: &DMatrix<$t>) -> Result<SymEigen<$t>> {
                let n = m.nrows();
                if n != m.ncols() {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        actual: m.ncols(),
                    });
                }
                if n == 0 {
                    return Ok(SymEigen {
                        values: DVector::zeros(0),
                        vectors: DMatrix::zeros(0, 0),
                        orthogonality_defect: 0.0,
                    });
                }
                let a = faer::Mat::<$t>::from_fn(n, n, |i, j| m[(i, j)]);
                let evd = a
                    .self_adjoint_eigen(faer::Side::Lower)
                    .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
                let s = evd.S().column_vector();
                let u = evd.U();
                let values = DVector::from_fn(n, |i, _| s[i]);
                let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
                let gram = u.transpose() * u;
                let defect = (gram - faer::Mat::<$t>::identity(n, n)).norm_l2();
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Eigensolver("non-finite eigenvalue".into()));
                }
                Ok(SymEigen {
                    values,
                    vectors,
                    orthogonality_defect: defect,
                })
            }
        }
    };
}

impl_real!(f64, 1.0);
impl_real!(f32, 1.0e6);

/// Frobenius norm of `vᵀv − I` for a square matrix.
#[cfg(test)]
pub(crate) fn orthogonality_defect<T: Real>(v: &DMatrix<T>) -> T {
    let mut g = v.tr_mul(v);
    for i in 0..g.nrows() {
        g[(i, i)] -= T::one();
    }
    g.norm()
}
