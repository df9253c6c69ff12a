// SPDX-License-Identifier: Apache-2.0

//! The active-cooling cycle on the toy model, the energy ledger, run
//! records, and the spin thermometer.
//!
//! A cycle consists of `p` coupled segments followed by reinitialization of
//! one refrigerator spin. Each segment draws fresh field strengths and a
//! fresh block coupling at the scheduled strength `σ(t)`, then evolves for
//! `τ/p`. Reinitialization measures the chosen spin and flips it down when
//! it comes up, crediting `2hᵢ` to the ledger. The last cycle resets every
//! spin before the system energy is measured.

use log::debug;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::propagator;
use crate::model::{lift_system, refrigerator_diagonal, sample_fields, CouplingSpec, SystemHamiltonian};
use crate::qstate::{expectation, flip_spin, initial_state, measure_spin, measure_system_energy, PureState, SpinOutcome};
use crate::scalar::Real;

/// Relative tolerance for `⟨H_total⟩` drift across one segment.
pub const CONSERVATION_TOL: f64 = 1e-8;
/// Couplings whose commutator norms fall below this multiple of `σ` are
/// redrawn.
pub const COMMUTATOR_FLOOR: f64 = 1e-6;

/// `σ(t) = A / (1 + B t^α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
}

impl Schedule {
    pub fn constant(a: f64) -> Self {
        Schedule { a, b: 0.0, alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRange {
    pub lo: f64,
    pub hi: f64,
}

impl FieldRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "field strengths must be positive (lo = {})",
                self.lo
            )));
        }
        if !(self.hi > self.lo) || !self.hi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "field range needs lo < hi (got [{}, {}])",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Field adaptation driven by the thermometer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    /// `(hi − lo) / centre` of the adapted range.
    pub rel_width: f64,
    pub min_field: f64,
    pub max_field: f64,
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_width > 0.0 && self.rel_width < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "rel_width must lie in (0, 2) (got {})",
                self.rel_width
            )));
        }
        FieldRange {
            lo: self.min_field,
            hi: self.max_field,
        }
        .validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermometerConfig {
    /// Number of most recent reinitialization events pooled per estimate.
    pub window: usize,
    /// Clamp for the inverse-temperature estimate.
    pub beta_max: f64,
    #[serde(default)]
    pub adapt: Option<AdaptConfig>,
}

impl Default for ThermometerConfig {
    fn default() -> Self {
        ThermometerConfig {
            window: 20,
            beta_max: 1.0,
            adapt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Number of cycles `N`.
    pub cycles: usize,
    /// Segments per cycle `p`.
    pub segments: usize,
    /// Coupled time per cycle; defaults to `p / σ(1)`.
    pub tau: Option<f64>,
    pub schedule: Schedule,
    pub fields: FieldRange,
    /// Finish early once the ledger estimate reaches this energy.
    pub stop_target_energy: Option<f64>,
    pub thermometer: ThermometerConfig,
    /// Redraws allowed per segment for degenerate couplings.
    pub max_resamples: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            cycles: 40,
            segments: 4,
            tau: None,
            schedule: Schedule {
                a: 40.0,
                b: 0.05,
                alpha: 1.0,
            },
            fields: FieldRange { lo: 20.0, hi: 150.0 },
            stop_target_energy: None,
            thermometer: ThermometerConfig::default(),
            max_resamples: 10,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.cycles < 1 {
            return bad("cycles must be >= 1".into());
        }
        if self.segments < 1 {
            return bad("segments must be >= 1".into());
        }
        let s = &self.schedule;
        if !(s.a >= 0.0) || !s.a.is_finite() {
            return bad(format!("schedule.a must be finite and >= 0 (got {})", s.a));
        }
        if !(s.b >= 0.0) || !s.b.is_finite() {
            return bad(format!("schedule.b must be finite and >= 0 (got {})", s.b));
        }
        if !(s.alpha >= 0.0) || !s.alpha.is_finite() {
            return bad(format!("schedule.alpha must be finite and >= 0 (got {})", s.alpha));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0) || !tau.is_finite() {
                return bad(format!("tau must be positive (got {tau})"));
            }
        } else if !(coupling_strength(1, &self.schedule) > 0.0) {
            return bad("tau must be given when the initial coupling strength is zero".into());
        }
        self.fields.validate()?;
        if self.thermometer.window < 1 {
            return bad("thermometer.window must be >= 1".into());
        }
        if !(self.thermometer.beta_max > 0.0) {
            return bad("thermometer.beta_max must be positive".into());
        }
        if let Some(a) = &self.thermometer.adapt {
            a.validate()?;
        }
        Ok(())
    }

    /// Coupled time per cycle after applying the default.
    pub fn resolved_tau(&self) -> f64 {
        self.tau
            .unwrap_or_else(|| self.segments as f64 / coupling_strength(1, &self.schedule))
    }
}

/// Scheduled coupling strength for cycle `t` (1-based).
pub fn coupling_strength(t: usize, schedule: &Schedule) -> f64 {
    schedule.a / (1.0 + schedule.b * (t as f64).powf(schedule.alpha))
}

/// Cycles needed for a fixed fractional loss per cycle:
/// `⌈A ln(E_i / E_f)⌉`, energies measured from the spectrum minimum.
pub fn estimate_cycles(a: f64, e_i: f64, e_f: f64) -> Result<usize> {
    if !(e_i > 0.0 && e_f > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "energies must be positive relative to the ground level (got {e_i}, {e_f})"
        )));
    }
    if e_f >= e_i {
        return Ok(0);
    }
    Ok((a * (e_i / e_f).ln() - 1e-9).ceil().max(0.0) as usize)
}

/// One reinitialization: which spin, at what field, and what came out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinEvent {
    pub cycle: usize,
    /// 1-based spin index.
    pub spin: usize,
    /// Field strength of the spin when it was measured.
    pub field: f64,
    pub outcome: SpinOutcome,
    pub p_up: f64,
    /// Part of the closing reset of every spin.
    #[serde(default)]
    pub full_reset: bool,
}

/// Running account of energy removed by flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub e_initial: f64,
    pub removed_total: f64,
    pub events: Vec<SpinEvent>,
}

impl EnergyLedger {
    pub fn new(e_initial: f64) -> Self {
        EnergyLedger {
            e_initial,
            removed_total: 0.0,
            events: Vec::new(),
        }
    }

    pub fn record(&mut self, event: SpinEvent) {
        if event.outcome == SpinOutcome::Up {
            self.removed_total += 2.0 * event.field;
        }
        self.events.push(event);
    }

    pub fn estimate(&self) -> f64 {
        self.e_initial - self.removed_total
    }

    /// `Σ 2hᵢ` over flip events, summed in event order.
    pub fn removed_from_events(events: &[SpinEvent]) -> f64 {
        events
            .iter()
            .filter(|e| e.outcome == SpinOutcome::Up)
            .fold(0.0, |acc, e| acc + 2.0 * e.field)
    }
}

/// Inverse-temperature estimate from spin outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermometerReading {
    pub beta: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// The estimate sits at `±beta_max` because every outcome agreed.
    pub clamped: bool,
}

impl ThermometerReading {
    pub fn temperature(&self) -> f64 {
        1.0 / self.beta
    }

    pub fn contains(&self, beta: f64) -> bool {
        self.ci_lo <= beta && beta <= self.ci_hi
    }
}

fn p_up(h: f64, beta: f64) -> f64 {
    1.0 / (1.0 + (2.0 * h * beta).exp())
}

/// Maximum-likelihood `β` for outcomes `(h, up)` under
/// `P(up) = 1/(1 + e^{2hβ})`, with a 95% Wald interval from the Fisher
/// information.
pub fn thermometer_estimate(events: &[(f64, bool)], beta_max: f64) -> Result<ThermometerReading> {
    if events.is_empty() {
        return Err(Error::InvalidParameter("thermometer needs at least one event".into()));
    }
    if events.iter().any(|(h, _)| !(*h > 0.0)) {
        return Err(Error::InvalidParameter("thermometer fields must be positive".into()));
    }
    if !(beta_max > 0.0) {
        return Err(Error::InvalidParameter("beta_max must be positive".into()));
    }
    let target: f64 = events.iter().filter(|(_, up)| *up).map(|(h, _)| h).sum();
    let score = |b: f64| events.iter().map(|(h, _)| h * p_up(*h, b)).sum::<f64>() - target;
    let fisher = |b: f64| {
        events
            .iter()
            .map(|(h, _)| {
                let p = p_up(*h, b);
                4.0 * h * h * p * (1.0 - p)
            })
            .sum::<f64>()
    };
    // score is decreasing in beta.
    let (beta, clamped) = if score(beta_max) >= 0.0 {
        (beta_max, true)
    } else if score(-beta_max) <= 0.0 {
        (-beta_max, true)
    } else {
        let (mut lo, mut hi) = (-beta_max, beta_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if score(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 * beta_max {
                break;
            }
        }
        (0.5 * (lo + hi), false)
    };
    let info = fisher(beta);
    let half = if info > 0.0 { 1.96 / info.sqrt() } else { f64::INFINITY };
    Ok(ThermometerReading {
        beta,
        ci_lo: beta - half,
        ci_hi: beta + half,
        clamped,
    })
}

/// New field range centred on `|1/β|`, clamped to the configured bounds.
/// Returns the range and whether the clamp was active.
pub fn adapt_fields(beta: f64, cfg: &AdaptConfig) -> Result<(FieldRange, bool)> {
    if !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta estimate {beta} is not finite")));
    }
    cfg.validate()?;
    let raw = if beta == 0.0 { f64::INFINITY } else { 1.0 / beta.abs() };
    let centre = raw.clamp(cfg.min_field, cfg.max_field);
    let clamped = centre != raw;
    let lo = (centre * (1.0 - 0.5 * cfg.rel_width)).max(cfg.min_field);
    let hi = (centre * (1.0 + 0.5 * cfg.rel_width)).min(cfg.max_field);
    let range = if hi > lo {
        FieldRange { lo, hi }
    } else {
        FieldRange {
            lo: cfg.min_field,
            hi: cfg.max_field,
        }
    };
    Ok((range, clamped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermometerPoint {
    pub cycle: usize,
    pub reading: ThermometerReading,
    /// Field range in force after this reading.
    pub fields: FieldRange,
}

/// Rolling thermometer over the most recent single-spin reinitializations.
#[derive(Debug, Clone)]
pub(crate) struct Thermometer {
    cfg: ThermometerConfig,
    fields: FieldRange,
    since_adapt: usize,
    pub(crate) trace: Vec<ThermometerPoint>,
}

impl Thermometer {
    pub(crate) fn new(cfg: ThermometerConfig, fields: FieldRange) -> Self {
        Thermometer {
            cfg,
            fields,
            since_adapt: 0,
            trace: Vec::new(),
        }
    }

    pub(crate) fn fields(&self) -> FieldRange {
        self.fields
    }

    pub(crate) fn observe(&mut self, cycle: usize, ledger: &EnergyLedger, warnings: &mut Vec<String>) -> Result<()> {
        self.since_adapt += 1;
        let window: Vec<(f64, bool)> = ledger
            .events
            .iter()
            .filter(|e| !e.full_reset)
            .rev()
            .take(self.cfg.window)
            .map(|e| (e.field, e.outcome == SpinOutcome::Up))
            .collect();
        if window.len() < self.cfg.window {
            return Ok(());
        }
        let reading = thermometer_estimate(&window, self.cfg.beta_max)?;
        if let Some(adapt) = &self.cfg.adapt {
            if self.since_adapt >= self.cfg.window {
                let (range, clamped) = adapt_fields(reading.beta, adapt)?;
                if clamped {
                    warnings.push(format!("cycle {cycle}: adapted field centre clamped"));
                }
                self.fields = range;
                self.since_adapt = 0;
            }
        }
        self.trace.push(ThermometerPoint {
            cycle,
            reading,
            fields: self.fields,
        });
        Ok(())
    }
}

/// Per-run numerical health counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest `|Δ⟨H_total⟩| / max|λ|` over all segments.
    pub max_energy_drift: f64,
    /// Largest certified `‖U†U − I‖_max` bound over all segments.
    pub max_unitarity_bound: f64,
    /// Largest `|⟨H_coup⟩|` at the start of a segment.
    pub max_coupling_expectation: f64,
    pub segments: usize,
    pub resampled_couplings: usize,
}

/// Evolves `state` under `h_total` for `dt`, checking that `⟨H_total⟩` is
/// conserved.
pub(crate) fn evolve_segment<T: Real>(
    state: &PureState<T>,
    h_total: &DMatrix<T>,
    dt: T,
    diag: &mut Diagnostics,
) -> Result<PureState<T>> {
    let prop = propagator(h_total, dt)?;
    let before = expectation(h_total, state)?;
    let out = prop.apply(state)?;
    let after = expectation(h_total, &out)?;
    let scale = prop.spectral_radius().max(T::one());
    let drift = ((after - before).abs() / scale).as_f64();
    if drift > T::tol(CONSERVATION_TOL).as_f64() {
        return Err(Error::Numerical(format!(
            "segment changed <H_total> by {drift:e} relative to its spectral radius"
        )));
    }
    diag.max_energy_drift = diag.max_energy_drift.max(drift);
    diag.max_unitarity_bound = diag.max_unitarity_bound.max(prop.unitarity_bound().as_f64());
    diag.segments += 1;
    Ok(out)
}

/// Measures `spin` (1-based) and flips it down if it came up, recording the
/// event in the ledger.
pub(crate) fn reinitialize_spin<T: Real, R: Rng + ?Sized>(
    state: &PureState<T>,
    spin: usize,
    field: T,
    cycle: usize,
    full_reset: bool,
    ledger: &mut EnergyLedger,
    rng: &mut R,
) -> Result<PureState<T>> {
    let m = measure_spin(state, spin, rng)?;
    let post = if m.outcome == SpinOutcome::Up {
        flip_spin(&m.post_state, spin)?
    } else {
        m.post_state
    };
    ledger.record(SpinEvent {
        cycle,
        spin,
        field: field.as_f64(),
        outcome: m.outcome,
        p_up: m.p_up.as_f64(),
        full_reset,
    });
    Ok(post)
}

/// Everything a run produces; enough to audit and to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: usize,
    pub master_seed: Option<u64>,
    pub seed: u64,
    pub model_fingerprint: String,
    pub config: EngineConfig,
    pub tau: f64,
    /// System eigenvalues, ascending.
    pub spectrum: Vec<f64>,
    pub cycles_run: usize,
    pub stopped_early: bool,
    pub events: Vec<SpinEvent>,
    pub e_initial: f64,
    pub e_removed: f64,
    pub e_estimate: f64,
    /// `⟨H_sys ⊗ I⟩` just before the final energy measurement.
    pub e_expectation: f64,
    pub e_measured: f64,
    pub measured_index: usize,
    pub thermometer: Vec<ThermometerPoint>,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<crate::lattice::LatticeTrace>,
}

impl RunRecord {
    /// Rebuilds the ledger estimate from the event list.
    pub fn recomputed_estimate(&self) -> f64 {
        self.e_initial - EnergyLedger::removed_from_events(&self.events)
    }
}

/// The toy-model engine bound to one system Hamiltonian and refrigerator
/// size.
pub struct ToyEngine<'a, T: Real> {
    sys: &'a SystemHamiltonian<T>,
    spins: usize,
    cfg: EngineConfig,
    tau: f64,
    lifted: DMatrix<T>,
    thermometer: Thermometer,
    /// Field strengths of the most recent segment.
    fields: Vec<T>,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
}

impl<'a, T: Real> ToyEngine<'a, T> {
    pub fn new(sys: &'a SystemHamiltonian<T>, spins: usize, cfg: &EngineConfig) -> Result<Self> {
        cfg.validate()?;
        if spins < 1 {
            return Err(Error::InvalidParameter("refrigerator needs at least one spin".into()));
        }
        Ok(ToyEngine {
            sys,
            spins,
            tau: cfg.resolved_tau(),
            lifted: lift_system(&sys.matrix, spins),
            thermometer: Thermometer::new(cfg.thermometer, cfg.fields),
            fields: vec![T::of(cfg.fields.lo); spins],
            cfg: cfg.clone(),
            diagnostics: Diagnostics::default(),
            warnings: Vec::new(),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Field strengths in force during the most recent segment.
    pub fn current_fields(&self) -> &[T] {
        &self.fields
    }

    /// Draws a coupling at `sigma`, redrawing while either commutator norm is
    /// below `COMMUTATOR_FLOOR · σ`.
    fn draw_coupling<R: Rng + ?Sized>(&mut self, sigma: T, rng: &mut R) -> Result<CouplingSpec<T>> {
        let d = self.sys.dim();
        let floor = T::of(COMMUTATOR_FLOOR) * sigma;
        for attempt in 0..=self.cfg.max_resamples {
            let spec = CouplingSpec::sample(d, self.spins, sigma, rng)?;
            if sigma == T::zero() {
                return Ok(spec);
            }
            let (c_sys, c_ref) = spec.commutator_norms(&self.sys.matrix, &self.fields);
            if c_sys >= floor && c_ref >= floor {
                return Ok(spec);
            }
            debug!("coupling attempt {attempt} degenerate: {c_sys}, {c_ref}");
            self.diagnostics.resampled_couplings += 1;
        }
        Err(Error::Numerical(format!(
            "no non-degenerate coupling after {} redraws",
            self.cfg.max_resamples
        )))
    }

    /// `H_sys ⊗ I + I ⊗ H_ref + H_coup` for the current fields.
    fn total_hamiltonian(&self, coupling: &CouplingSpec<T>) -> DMatrix<T> {
        let mut h = self.lifted.clone();
        let fridge = refrigerator_diagonal(&self.fields);
        let rdim = fridge.len();
        for i in 0..h.nrows() {
            h[(i, i)] += fridge[i % rdim];
        }
        coupling.add_into(self.sys.dim(), &mut h);
        h
    }

    /// The `p` coupled segments of cycle `t`.
    pub fn couple<R: Rng + ?Sized>(&mut self, state: &PureState<T>, t: usize, rng: &mut R) -> Result<PureState<T>> {
        let sigma = T::of(coupling_strength(t, &self.cfg.schedule));
        let dt = T::of(self.tau / self.cfg.segments as f64);
        let range = self.thermometer.fields();
        let mut state = state.clone();
        for _ in 0..self.cfg.segments {
            self.fields = sample_fields(range.lo, range.hi, self.spins, rng)?;
            let coupling = self.draw_coupling(sigma, rng)?;
            let h = self.total_hamiltonian(&coupling);
            let hc = coupling.operator(self.sys.dim());
            let ec = expectation(&hc, &state)?.abs().as_f64();
            self.diagnostics.max_coupling_expectation = self.diagnostics.max_coupling_expectation.max(ec);
            state = evolve_segment(&state, &h, dt, &mut self.diagnostics)?;
        }
        Ok(state)
    }

    /// Reinitializes the given spins (1-based) at their current fields.
    pub fn reinitialize<R: Rng + ?Sized>(
        &mut self,
        state: &PureState<T>,
        spins: &[usize],
        t: usize,
        full_reset: bool,
        ledger: &mut EnergyLedger,
        rng: &mut R,
    ) -> Result<PureState<T>> {
        let mut state = state.clone();
        for &spin in spins {
            let field = *self.fields.get(spin.wrapping_sub(1)).ok_or(Error::IndexOutOfRange {
                index: spin,
                valid: format!("1..={}", self.spins),
            })?;
            state = reinitialize_spin(&state, spin, field, t, full_reset, ledger, rng)?;
        }
        Ok(state)
    }

    /// Spin reinitialized after cycle `t`: `((t − 1) mod s) + 1`.
    pub fn spin_for_cycle(&self, t: usize) -> usize {
        (t - 1) % self.spins + 1
    }

    /// Couples for cycle `t`, then reinitializes `spin`.
    pub fn run_cycle<R: Rng + ?Sized>(
        &mut self,
        state: &PureState<T>,
        t: usize,
        spin: usize,
        ledger: &mut EnergyLedger,
        rng: &mut R,
    ) -> Result<PureState<T>> {
        let coupled = self.couple(state, t, rng)?;
        self.reinitialize(&coupled, &[spin], t, false, ledger, rng)
    }

    /// A complete run from the top eigenstate with the refrigerator in its
    /// ground state.
    pub fn run(mut self, seed: u64) -> Result<RunRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let top = self.sys.dim() - 1;
        let mut state = initial_state(top, self.sys, self.spins)?;
        let e_initial = self.sys.top_energy().as_f64();
        let mut ledger = EnergyLedger::new(e_initial);
        let target = self.cfg.stop_target_energy;
        let reached = |l: &EnergyLedger| target.is_some_and(|e| l.estimate() <= e);
        let all: Vec<usize> = (1..=self.spins).collect();
        let mut cycles_run = 0;
        let mut stopped_early = reached(&ledger);
        if !stopped_early {
            for t in 1..=self.cfg.cycles {
                cycles_run = t;
                state = self.couple(&state, t, &mut rng)?;
                if t == self.cfg.cycles {
                    state = self.reinitialize(&state, &all, t, true, &mut ledger, &mut rng)?;
                    break;
                }
                let spin = self.spin_for_cycle(t);
                state = self.reinitialize(&state, &[spin], t, false, &mut ledger, &mut rng)?;
                self.thermometer.observe(t, &ledger, &mut self.warnings)?;
                if reached(&ledger) {
                    let rest: Vec<usize> = all.iter().copied().filter(|s| *s != spin).collect();
                    state = self.reinitialize(&state, &rest, t, true, &mut ledger, &mut rng)?;
                    stopped_early = true;
                    break;
                }
            }
        }
        finish(
            self.sys,
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
        )
    }
}

pub(crate) struct Finish {
    pub config: EngineConfig,
    pub tau: f64,
    pub cycles_run: usize,
    pub stopped_early: bool,
    pub thermometer: Vec<ThermometerPoint>,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
    pub seed: u64,
}

/// Final system-energy measurement and record assembly.
pub(crate) fn finish<T: Real, R: Rng + ?Sized>(
    sys: &SystemHamiltonian<T>,
    state: PureState<T>,
    ledger: EnergyLedger,
    f: Finish,
    rng: &mut R,
) -> Result<RunRecord> {
    let mut warnings = f.warnings;
    let e_expectation = state.system_energy(sys)?.as_f64();
    // Unit fields: the refrigerator sits at -s exactly when every spin is down.
    let unit_fields = vec![T::one(); state.spins()];
    let fridge = refrigerator_diagonal(&unit_fields);
    let ground = -T::of(state.spins() as f64);
    let m = measure_system_energy(&state, sys, Some((&fridge, ground)), rng)?;
    if m.refrigerator_excited {
        warnings.push("refrigerator not in its ground state at the energy measurement".into());
    }
    Ok(RunRecord {
        run_index: 0,
        master_seed: None,
        seed: f.seed,
        model_fingerprint: String::new(),
        config: f.config,
        tau: f.tau,
        spectrum: sys.spectrum().iter().map(|e| e.as_f64()).collect(),
        cycles_run: f.cycles_run,
        stopped_early: f.stopped_early,
        e_initial: ledger.e_initial,
        e_removed: ledger.removed_total,
        e_estimate: ledger.estimate(),
        events: ledger.events,
        e_expectation,
        e_measured: m.energy.as_f64(),
        measured_index: m.index,
        thermometer: f.thermometer,
        diagnostics: f.diagnostics,
        warnings,
        lattice: None,
    })
}

/// Convenience wrapper: one toy-model run.
pub fn run<T: Real>(sys: &SystemHamiltonian<T>, spins: usize, cfg: &EngineConfig, seed: u64) -> Result<RunRecord> {
    ToyEngine::new(sys, spins, cfg)?.run(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_system, gen_spectrum, SpectrumSpec};

    fn small_system(seed: u64) -> SystemHamiltonian<f64> {
        let spec = SpectrumSpec {
            span_lo: 0.0,
            span_hi: 300.0,
            n_regions: 3,
            growth_coeff: 0.8,
        };
        let levels = gen_spectrum::<f64>(&spec).unwrap();
        build_system(&levels, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn short_config() -> EngineConfig {
        EngineConfig {
            cycles: 12,
            tau: Some(0.3),
            ..EngineConfig::default()
        }
    }

    #[test]
    fn schedule_values() {
        let s = Schedule {
            a: 2.0,
            b: 0.05,
            alpha: 1.0,
        };
        assert_eq!(coupling_strength(1, &s), 2.0 / 1.05);
        assert!((coupling_strength(20, &s) - 1.0).abs() < 1e-15);
        let c = Schedule::constant(3.0);
        assert!((1..50).all(|t| coupling_strength(t, &c) == 3.0));
        let s = Schedule {
            a: 5.0,
            b: 0.3,
            alpha: 1.7,
        };
        assert!((1..100).all(|t| coupling_strength(t + 1, &s) <= coupling_strength(t, &s)));
    }

    #[test]
    fn cycle_estimates() {
        assert_eq!(estimate_cycles(10.0, 5.0, 5.0).unwrap(), 0);
        assert_eq!(estimate_cycles(1.0, std::f64::consts::E, 1.0).unwrap(), 1);
        assert_eq!(estimate_cycles(10.0, 2.0f64.exp(), 1.0).unwrap(), 20);
        assert_eq!(estimate_cycles(3.0, 1.0, 4.0).unwrap(), 0);
        assert!(estimate_cycles(3.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn default_tau_is_one_rabi_time_per_segment() {
        let cfg = EngineConfig::default();
        let sigma1 = coupling_strength(1, &cfg.schedule);
        assert!((cfg.resolved_tau() / cfg.segments as f64 - 1.0 / sigma1).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(EngineConfig::default().validate().is_ok());
        let mut c = EngineConfig::default();
        c.fields.lo = -1.0;
        assert!(c.validate().is_err());
        let c = EngineConfig {
            cycles: 0,
            ..EngineConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        c.schedule.a = 0.0;
        assert!(c.validate().is_err(), "zero coupling without tau");
        c.tau = Some(1.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn ledger_identity() {
        let mut l = EnergyLedger::new(100.0);
        for (k, (h, up)) in [(3.5, true), (2.0, false), (7.25, true)].into_iter().enumerate() {
            l.record(SpinEvent {
                cycle: k + 1,
                spin: 1,
                field: h,
                outcome: if up { SpinOutcome::Up } else { SpinOutcome::Down },
                p_up: 0.5,
                full_reset: false,
            });
        }
        assert_eq!(l.removed_total, 21.5);
        assert_eq!(l.estimate(), 78.5);
        assert_eq!(EnergyLedger::removed_from_events(&l.events), l.removed_total);
    }

    #[test]
    fn thermometer_symmetric_outcomes_give_infinite_temperature() {
        let events: Vec<(f64, bool)> = (0..100).map(|k| (50.0, k % 2 == 0)).collect();
        let r = thermometer_estimate(&events, 1.0).unwrap();
        assert!(r.beta.abs() < 1e-12);
        assert!(!r.clamped && r.contains(0.0));
    }

    #[test]
    fn thermometer_clamps_unanimous_windows() {
        let down: Vec<(f64, bool)> = (0..10).map(|_| (30.0, false)).collect();
        let r = thermometer_estimate(&down, 0.5).unwrap();
        assert!(r.clamped && r.beta == 0.5);
        let up: Vec<(f64, bool)> = (0..10).map(|_| (30.0, true)).collect();
        let r = thermometer_estimate(&up, 0.5).unwrap();
        assert!(r.clamped && r.beta == -0.5);
        assert!(thermometer_estimate(&[], 1.0).is_err());
    }

    #[test]
    fn thermometer_recovers_known_beta() {
        let beta = 0.005;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut covered = 0;
        let reps = 100;
        for _ in 0..reps {
            let events: Vec<(f64, bool)> = (0..500)
                .map(|_| {
                    let h = rng.gen_range(20.0..150.0);
                    (h, rng.gen::<f64>() < p_up(h, beta))
                })
                .collect();
            if thermometer_estimate(&events, 1.0).unwrap().contains(beta) {
                covered += 1;
            }
        }
        assert!(covered >= 88, "coverage {covered}/{reps}");
    }

    #[test]
    fn thermometer_handles_negative_temperature() {
        let beta = -0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let events: Vec<(f64, bool)> = (0..2000)
            .map(|_| {
                let h = rng.gen_range(10.0..80.0);
                (h, rng.gen::<f64>() < p_up(h, beta))
            })
            .collect();
        let r = thermometer_estimate(&events, 1.0).unwrap();
        assert!(r.beta < 0.0);
        assert!((r.beta - beta).abs() < 4.0 * (r.ci_hi - r.ci_lo) / 3.92);
    }

    #[test]
    fn field_adaptation() {
        let cfg = AdaptConfig {
            rel_width: 0.5,
            min_field: 1.0,
            max_field: 500.0,
        };
        let (r, c) = adapt_fields(0.01, &cfg).unwrap();
        assert!(!c);
        assert!((0.5 * (r.lo + r.hi) - 100.0).abs() < 1e-9);
        assert!((r.hi - r.lo - 50.0).abs() < 1e-9);
        let (r2, _) = adapt_fields(-0.01, &cfg).unwrap();
        assert_eq!(r, r2);
        let (r, c) = adapt_fields(0.0, &cfg).unwrap();
        assert!(c && r.hi == 500.0 && r.lo < r.hi);
        assert!(adapt_fields(f64::NAN, &cfg).is_err());
    }

    #[test]
    fn cyclic_spin_order() {
        let sys = small_system(1);
        let engine = ToyEngine::new(&sys, 4, &short_config()).unwrap();
        let order: Vec<usize> = (1..=8).map(|t| engine.spin_for_cycle(t)).collect();
        assert_eq!(order, vec![1, 2, 3, 4, 1, 2, 3, 4]);
        let rec = run(&sys, 3, &short_config(), 4).unwrap();
        let single: Vec<usize> = rec.events.iter().filter(|e| !e.full_reset).map(|e| e.spin).collect();
        assert_eq!(single, (0..11).map(|t| t % 3 + 1).collect::<Vec<_>>());
        let reset: Vec<usize> = rec.events.iter().filter(|e| e.full_reset).map(|e| e.spin).collect();
        assert_eq!(reset, vec![1, 2, 3]);
    }

    #[test]
    fn runs_are_deterministic_and_ledger_consistent() {
        let sys = small_system(2);
        let a = run(&sys, 2, &short_config(), 99).unwrap();
        let b = run(&sys, 2, &short_config(), 99).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.e_estimate, a.recomputed_estimate());
        assert!(a.spectrum.contains(&a.e_measured));
        assert_eq!(a.e_initial, *a.spectrum.last().unwrap());
        assert!(a.diagnostics.max_energy_drift < CONSERVATION_TOL);
        assert!(a.diagnostics.max_unitarity_bound < 1e-10);
        assert_eq!(a.diagnostics.segments, 12 * 4);
        assert!(a.warnings.is_empty(), "{:?}", a.warnings);
    }

    #[test]
    fn zero_coupling_leaves_everything_in_place() {
        let sys = small_system(3);
        let cfg = EngineConfig {
            schedule: Schedule::constant(0.0),
            ..short_config()
        };
        for seed in 0..5 {
            let rec = run(&sys, 2, &cfg, seed).unwrap();
            assert!(rec.events.iter().all(|e| e.outcome == SpinOutcome::Down));
            assert_eq!(rec.e_removed, 0.0);
            assert_eq!(rec.e_measured, rec.e_initial);
            assert_eq!(rec.measured_index, sys.dim() - 1);
        }
    }

    #[test]
    fn immediate_stop_returns_top_level() {
        let sys = small_system(4);
        let cfg = EngineConfig {
            stop_target_energy: Some(1e6),
            ..short_config()
        };
        let rec = run(&sys, 2, &cfg, 0).unwrap();
        assert_eq!(rec.cycles_run, 0);
        assert!(rec.stopped_early && rec.events.is_empty());
        assert_eq!(rec.e_estimate, rec.e_initial);
        assert_eq!(rec.e_measured, rec.e_initial);
    }

    #[test]
    fn early_stop_resets_every_spin() {
        let sys = small_system(5);
        let cfg = EngineConfig {
            cycles: 200,
            stop_target_energy: Some(200.0),
            ..short_config()
        };
        let rec = run(&sys, 3, &cfg, 8).unwrap();
        if rec.stopped_early {
            assert!(rec.cycles_run < 200);
            let last = rec.events.iter().rev().take_while(|e| e.full_reset).count();
            assert_eq!(last, 2);
            let before_reset = rec.e_initial
                - EnergyLedger::removed_from_events(
                    &rec.events.iter().filter(|e| !e.full_reset).copied().collect::<Vec<_>>(),
                );
            assert!(before_reset <= 200.0);
        }
        assert!(rec.warnings.is_empty(), "{:?}", rec.warnings);
    }

    #[test]
    fn cooling_lowers_the_energy() {
        let sys = small_system(6);
        let cfg = EngineConfig {
            cycles: 30,
            tau: Some(0.3),
            ..EngineConfig::default()
        };
        let mean: f64 = (0..10).map(|s| run(&sys, 2, &cfg, s).unwrap().e_expectation).sum::<f64>() / 10.0;
        assert!(mean < sys.top_energy() - 50.0, "mean {mean}");
    }

    #[test]
    fn thermometer_trace_fills_once_window_is_full() {
        let sys = small_system(7);
        let cfg = EngineConfig {
            cycles: 30,
            thermometer: ThermometerConfig {
                window: 5,
                beta_max: 1.0,
                adapt: Some(AdaptConfig {
                    rel_width: 1.0,
                    min_field: 5.0,
                    max_field: 200.0,
                }),
            },
            ..short_config()
        };
        let rec = run(&sys, 2, &cfg, 1).unwrap();
        assert_eq!(rec.thermometer.len(), 29 - 4);
        assert!(rec
            .thermometer
            .iter()
            .all(|p| p.fields.lo >= 5.0 && p.fields.hi <= 200.0 && p.fields.lo < p.fields.hi));
    }

    #[test]
    fn single_precision_run() {
        let spec = SpectrumSpec {
            span_lo: 0.0,
            span_hi: 200.0,
            n_regions: 2,
            growth_coeff: 0.8,
        };
        let levels = gen_spectrum::<f32>(&spec).unwrap();
        let sys = build_system(&levels, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let rec = run(&sys, 2, &short_config(), 3).unwrap();
        assert!(rec.spectrum.contains(&rec.e_measured));
    }
}
