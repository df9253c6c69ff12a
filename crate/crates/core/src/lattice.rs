// SPDX-License-Identifier: Apache-2.0

//! Cooling a transverse-field Ising chain with spins attached to fixed
//! sites.
//!
//! Site `x` of the chain is bit `x` of the system basis index (set = up).
//! Refrigerator spin `j` couples through `σ Z_{site(j)} ⊗ X_j`. Sites are
//! fixed for the whole run; only the refrigerator fields are redrawn per
//! segment. Reinitialization takes one spin at a time: the chosen spin's
//! coupling is removed for the last segment of the cycle and it is
//! measured at the start of that segment while the others stay coupled.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    coupling_strength, evolve_segment, finish, reinitialize_spin, Diagnostics, EnergyLedger, EngineConfig, Finish,
    RunRecord, Thermometer, COMMUTATOR_FLOOR,
};
use crate::error::{Error, Result};
use crate::model::{add_kron_sigma_x, lift_system, refrigerator_diagonal, sample_fields, structured_commutator_norms, SystemHamiltonian};
use crate::qstate::{expectation, initial_state, PureState};
use crate::scalar::Real;

/// Largest composite dimension a lattice model may occupy.
pub const DIM_BUDGET: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    /// Chain length `L`.
    pub sites: usize,
    pub j: f64,
    pub g: f64,
    pub spins: usize,
    /// Neighbourhood radius in sites.
    pub radius: usize,
    /// Cycles that must separate measurements within one neighbourhood.
    pub min_gap: usize,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        LatticeSpec {
            sites: 8,
            j: 1.0,
            g: 1.0,
            spins: 2,
            radius: 2,
            min_gap: 3,
        }
    }
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 {
            return Err(Error::InvalidParameter(format!("chain needs at least 2 sites (got {})", self.sites)));
        }
        if self.spins < 1 || self.spins > self.sites {
            return Err(Error::InvalidParameter(format!(
                "need between 1 and {} refrigerator spins (got {})",
                self.sites, self.spins
            )));
        }
        if !self.j.is_finite() || !self.g.is_finite() {
            return Err(Error::InvalidParameter("J and g must be finite".into()));
        }
        let dim = 1usize.checked_shl((self.sites + self.spins) as u32).unwrap_or(usize::MAX);
        if self.sites + self.spins >= usize::BITS as usize || dim > DIM_BUDGET {
            return Err(Error::InvalidParameter(format!(
                "composite dimension 2^{} exceeds the budget of {DIM_BUDGET}",
                self.sites + self.spins
            )));
        }
        Ok(())
    }
}

/// `Z` on site `x` of an `l`-site chain, as a diagonal `2^l` matrix.
pub fn site_z<T: Real>(l: usize, x: usize) -> DMatrix<T> {
    let n = 1usize << l;
    DMatrix::from_fn(n, n, |a, b| {
        if a != b {
            T::zero()
        } else if (a >> x) & 1 == 1 {
            T::one()
        } else {
            -T::one()
        }
    })
}

/// `H = −J Σ Z_x Z_{x+1} − g Σ X_x` with open boundaries.
pub fn build_tfim<T: Real>(l: usize, j: f64, g: f64) -> Result<SystemHamiltonian<T>> {
    if l < 2 {
        return Err(Error::InvalidParameter(format!("chain needs at least 2 sites (got {l})")));
    }
    if l >= usize::BITS as usize || (1usize << l) > DIM_BUDGET {
        return Err(Error::InvalidParameter(format!(
            "system dimension 2^{l} exceeds the budget of {DIM_BUDGET}"
        )));
    }
    let n = 1usize << l;
    let (j, g) = (T::of(j), T::of(g));
    let mut h = DMatrix::zeros(n, n);
    for a in 0..n {
        let mut diag = T::zero();
        for x in 0..l - 1 {
            let same = ((a >> x) & 1) == ((a >> (x + 1)) & 1);
            diag -= if same { j } else { -j };
        }
        h[(a, a)] = diag;
        for x in 0..l {
            h[(a ^ (1 << x), a)] -= g;
        }
    }
    SystemHamiltonian::from_matrix(h)
}

/// Evenly spaced sites: spin `j` (0-based) sits at `⌊(j + ½) L / s⌋`.
pub fn assign_sites(l: usize, s: usize) -> Vec<usize> {
    (0..s).map(|j| ((2 * j + 1) * l) / (2 * s)).collect()
}

/// Site operators `σ Z_{site(j)}` on the system space, one per spin.
pub fn assign_local_couplings<T: Real>(model: &LatticeModel<T>, sigma: T) -> Vec<DMatrix<T>> {
    model.site_ops.iter().map(|z| z * sigma).collect()
}

#[derive(Debug, Clone)]
pub struct LatticeModel<T: Real> {
    pub spec: LatticeSpec,
    pub sys: SystemHamiltonian<T>,
    pub sites: Vec<usize>,
    site_ops: Vec<DMatrix<T>>,
}

impl<T: Real> LatticeModel<T> {
    pub fn new(spec: &LatticeSpec) -> Result<Self> {
        spec.validate()?;
        let sys = build_tfim(spec.sites, spec.j, spec.g)?;
        let sites = assign_sites(spec.sites, spec.spins);
        let site_ops = sites.iter().map(|&x| site_z(spec.sites, x)).collect();
        Ok(LatticeModel {
            spec: spec.clone(),
            sys,
            sites,
            site_ops,
        })
    }

    pub fn spins(&self) -> usize {
        self.sites.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduled {
    /// 1-based spin to reinitialize.
    Spin(usize),
    Wait,
}

/// Spins (1-based) whose site is at least `radius` away from every site
/// measured fewer than `min_gap` cycles before `cycle`.
pub fn eligible_spins(history: &[(usize, usize)], cycle: usize, sites: &[usize], radius: usize, min_gap: usize) -> Vec<usize> {
    (1..=sites.len())
        .filter(|&j| {
            history
                .iter()
                .filter(|(c, _)| cycle.saturating_sub(*c) < min_gap)
                .all(|(_, k)| sites[j - 1].abs_diff(sites[k - 1]) >= radius)
        })
        .collect()
}

/// Uniform choice among the eligible spins, or [`Scheduled::Wait`].
pub fn schedule_next_spin<R: Rng + ?Sized>(
    history: &[(usize, usize)],
    cycle: usize,
    sites: &[usize],
    radius: usize,
    min_gap: usize,
    rng: &mut R,
) -> Scheduled {
    match eligible_spins(history, cycle, sites, radius, min_gap).choose(rng) {
        Some(&j) => Scheduled::Spin(j),
        None => Scheduled::Wait,
    }
}

/// Pairs of history entries `(cycle, spin)` that violate the neighbourhood
/// rule.
pub fn schedule_violations(history: &[(usize, usize)], sites: &[usize], radius: usize, min_gap: usize) -> Vec<((usize, usize), (usize, usize))> {
    let mut out = Vec::new();
    for (i, a) in history.iter().enumerate() {
        for b in &history[i + 1..] {
            let close = sites[a.1 - 1].abs_diff(sites[b.1 - 1]) < radius;
            if close && b.0.abs_diff(a.0) < min_gap {
                out.push((*a, *b));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatticeTrace {
    /// `(cycle, spin)` of every single-spin reinitialization.
    pub history: Vec<(usize, usize)>,
    pub wait_cycles: usize,
}

pub struct LatticeEngine<'a, T: Real> {
    model: &'a LatticeModel<T>,
    cfg: EngineConfig,
    tau: f64,
    lifted: DMatrix<T>,
    thermometer: Thermometer,
    fields: Vec<T>,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
}

impl<'a, T: Real> LatticeEngine<'a, T> {
    pub fn new(model: &'a LatticeModel<T>, cfg: &EngineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LatticeEngine {
            model,
            tau: cfg.resolved_tau(),
            lifted: lift_system(&model.sys.matrix, model.spins()),
            thermometer: Thermometer::new(cfg.thermometer, cfg.fields),
            fields: vec![T::of(cfg.fields.lo); model.spins()],
            cfg: cfg.clone(),
            diagnostics: Diagnostics::default(),
            warnings: Vec::new(),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn current_fields(&self) -> &[T] {
        &self.fields
    }

    /// Total Hamiltonian with every spin except `decoupled` attached.
    fn total_hamiltonian(&self, sigma: T, decoupled: Option<usize>) -> Result<DMatrix<T>> {
        let s = self.model.spins();
        let mut ops = assign_local_couplings(self.model, sigma);
        if let Some(j) = decoupled {
            ops[j - 1].fill(T::zero());
        }
        if sigma > T::zero() {
            let (c_sys, c_ref) = structured_commutator_norms(&ops, &self.model.sys.matrix, &self.fields);
            let floor = T::of(COMMUTATOR_FLOOR) * sigma;
            if c_sys < floor || c_ref < floor {
                return Err(Error::Numerical(format!(
                    "site coupling commutes with the chain (norms {c_sys}, {c_ref})"
                )));
            }
        }
        let mut h = self.lifted.clone();
        let fridge = refrigerator_diagonal(&self.fields);
        let rdim = fridge.len();
        for i in 0..h.nrows() {
            h[(i, i)] += fridge[i % rdim];
        }
        for (i, k) in ops.iter().enumerate() {
            add_kron_sigma_x(k, i, s, &mut h);
        }
        Ok(h)
    }

    /// `count` segments of cycle `t`, with `decoupled` (1-based) detached.
    pub fn couple<R: Rng + ?Sized>(
        &mut self,
        state: &PureState<T>,
        t: usize,
        count: usize,
        decoupled: Option<usize>,
        rng: &mut R,
    ) -> Result<PureState<T>> {
        let sigma = T::of(coupling_strength(t, &self.cfg.schedule));
        let dt = T::of(self.tau / self.cfg.segments as f64);
        let range = self.thermometer.fields();
        let mut state = state.clone();
        for _ in 0..count {
            self.fields = sample_fields(range.lo, range.hi, self.model.spins(), rng)?;
            let h = self.total_hamiltonian(sigma, decoupled)?;
            state = evolve_segment(&state, &h, dt, &mut self.diagnostics)?;
        }
        Ok(state)
    }

    /// Cycle `t` with single-spin reinitialization of `spin`: `p − 1`
    /// coupled segments, then the spin is detached, reinitialized, and the
    /// remaining spins keep evolving for the last segment.
    pub fn run_cycle<R: Rng + ?Sized>(
        &mut self,
        state: &PureState<T>,
        t: usize,
        spin: usize,
        ledger: &mut EnergyLedger,
        rng: &mut R,
    ) -> Result<PureState<T>> {
        let p = self.cfg.segments;
        let state = self.couple(state, t, p - 1, None, rng)?;
        let field = self.fields[spin - 1];
        let state = reinitialize_spin(&state, spin, field, t, false, ledger, rng)?;
        self.couple(&state, t, 1, Some(spin), rng)
    }

    pub fn run(mut self, seed: u64) -> Result<RunRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = &self.model.sys;
        let s = self.model.spins();
        let mut state = initial_state(sys.dim() - 1, sys, s)?;
        let mut ledger = EnergyLedger::new(sys.top_energy().as_f64());
        let target = self.cfg.stop_target_energy;
        let reached = |l: &EnergyLedger| target.is_some_and(|e| l.estimate() <= e);
        let mut trace = LatticeTrace::default();
        let mut cycles_run = 0;
        let mut stopped_early = reached(&ledger);
        let spec = &self.model.spec;
        if !stopped_early {
            for t in 1..=self.cfg.cycles {
                cycles_run = t;
                if t == self.cfg.cycles {
                    state = self.couple(&state, t, self.cfg.segments, None, &mut rng)?;
                    state = self.reset_all(&state, t, &mut ledger, &mut rng)?;
                    break;
                }
                let choice = schedule_next_spin(&trace.history, t, &self.model.sites, spec.radius, spec.min_gap, &mut rng);
                match choice {
                    Scheduled::Wait => {
                        trace.wait_cycles += 1;
                        state = self.couple(&state, t, self.cfg.segments, None, &mut rng)?;
                    }
                    Scheduled::Spin(j) => {
                        trace.history.push((t, j));
                        state = self.run_cycle(&state, t, j, &mut ledger, &mut rng)?;
                        self.thermometer.observe(t, &ledger, &mut self.warnings)?;
                    }
                }
                if reached(&ledger) {
                    state = self.reset_all(&state, t, &mut ledger, &mut rng)?;
                    stopped_early = true;
                    break;
                }
            }
        }
        let mut record = finish(
            sys,
            state,
            ledger,
            Finish {
                config: self.cfg,
                tau: self.tau,
                cycles_run,
                stopped_early,
                thermometer: self.thermometer.trace,
                diagnostics: self.diagnostics,
                warnings: self.warnings,
                seed,
            },
            &mut rng,
        )?;
        record.lattice = Some(trace);
        Ok(record)
    }

    fn reset_all<R: Rng + ?Sized>(
        &mut self,
        state: &PureState<T>,
        t: usize,
        ledger: &mut EnergyLedger,
        rng: &mut R,
    ) -> Result<PureState<T>> {
        let mut state = state.clone();
        for spin in 1..=self.model.spins() {
            state = reinitialize_spin(&state, spin, self.fields[spin - 1], t, true, ledger, rng)?;
        }
        Ok(state)
    }
}

/// Default engine settings on the `J = 1` energy scale.
pub fn default_engine_config() -> EngineConfig {
    use crate::engine::{FieldRange, Schedule};
    EngineConfig {
        cycles: 60,
        schedule: Schedule {
            a: 1.0,
            b: 0.05,
            alpha: 1.0,
        },
        fields: FieldRange { lo: 0.5, hi: 2.5 },
        ..EngineConfig::default()
    }
}

/// One lattice run.
pub fn run<T: Real>(model: &LatticeModel<T>, cfg: &EngineConfig, seed: u64) -> Result<RunRecord> {
    LatticeEngine::new(model, cfg)?.run(seed)
}

/// `⟨Σⱼ σ Z_{site(j)} ⊗ X_j⟩` in `state`.
pub fn coupling_expectation<T: Real>(model: &LatticeModel<T>, sigma: T, state: &PureState<T>) -> Result<T> {
    let s = model.spins();
    let n = model.sys.dim() << s;
    let mut h = DMatrix::zeros(n, n);
    for (i, k) in assign_local_couplings(model, sigma).iter().enumerate() {
        add_kron_sigma_x(k, i, s, &mut h);
    }
    expectation(&h, state)
}
