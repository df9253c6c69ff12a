// SPDX-License-Identifier: Apache-2.0

//! Simulation and analysis of active cooling: a small quantum system coupled
//! to a re-initializable spin refrigerator, driven toward a target energy
//! and then projected onto an energy eigenstate.
//!
//! Numerical code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix `f64`, which is what the ensemble tools use.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod config;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod evolve;
pub mod lattice;
pub mod model;
pub mod modelset;
pub mod qstate;
pub mod scalar;
pub mod thermo;

pub use error::{Error, Result};

pub type SystemHamiltonian = model::SystemHamiltonian<f64>;
pub type PureState = qstate::PureState<f64>;
pub type Propagator = evolve::Propagator<f64>;
pub type ThermalMap = thermo::ThermalMap<f64>;
pub type LatticeModel = lattice::LatticeModel<f64>;
pub type Model = modelset::Model<f64>;
