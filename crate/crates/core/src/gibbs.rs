//! Conditional Gibbs measures as seeded MCMC targets.
//!
//! Every target is a density `exp(-E)` against a Gaussian prior: the loop
//! prior `γ_β^(m)` (quantum kinds), its `m = ∞` limit (quasiclassical kinds)
//! or `χ_β` on site values with energy `βI` (classical kinds). Chains use
//! prior-preconditioned Crank–Nicolson moves `ω' = √(1-s²) ω + s ξ` with `ξ`
//! drawn from the prior; these leave the prior invariant, so the Metropolis
//! ratio only involves `E(ω) - E(ω')`.
//!
//! Single-site sweeps update each site in two blocks, the constant mode and
//! the oscillatory modes, each with its own step size tuned during burn-in.

use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::energy::{ClassicalEnergyCache, EnergyContext, LoopEnergyCache};
use crate::error::{Error, Result};
use crate::gaussian::{derive_seed, CovarianceSpectrum, Mass};
use crate::lattice::{coupling_norm, periodic_coupling_norm, validate_stability, LatticeBox, StabilityReport};
use crate::loops::{constant_embed, LoopConfiguration, ModeBasis, TemperatureLoop};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TargetKind {
    Quantum,
    Quasiclassical,
    Classical,
    QuantumPeriodic,
    QuasiclassicalPeriodic,
    ClassicalPeriodic,
}

impl TargetKind {
    pub fn label(&self) -> &'static str {
        match self {
            TargetKind::Quantum => "quantum",
            TargetKind::Quasiclassical => "quasiclassical",
            TargetKind::Classical => "classical",
            TargetKind::QuantumPeriodic => "quantum-periodic",
            TargetKind::QuasiclassicalPeriodic => "quasiclassical-periodic",
            TargetKind::ClassicalPeriodic => "classical-periodic",
        }
    }

    pub fn is_classical(&self) -> bool {
        matches!(self, TargetKind::Classical | TargetKind::ClassicalPeriodic)
    }

    pub fn is_quasiclassical(&self) -> bool {
        matches!(self, TargetKind::Quasiclassical | TargetKind::QuasiclassicalPeriodic)
    }

    pub fn is_periodic(&self) -> bool {
        matches!(
            self,
            TargetKind::QuantumPeriodic | TargetKind::QuasiclassicalPeriodic | TargetKind::ClassicalPeriodic
        )
    }

    fn code(&self) -> u8 {
        match self {
            TargetKind::Quantum => 0,
            TargetKind::Quasiclassical => 1,
            TargetKind::Classical => 2,
            TargetKind::QuantumPeriodic => 3,
            TargetKind::QuasiclassicalPeriodic => 4,
            TargetKind::ClassicalPeriodic => 5,
        }
    }
}

/// A Gibbs measure to sample: energy context, prior and kind.
#[derive(Clone, Debug)]
pub struct GibbsTarget {
    ctx: Arc<EnergyContext>,
    spectrum: Option<CovarianceSpectrum>,
    kind: TargetKind,
    stability: StabilityReport,
}

impl GibbsTarget {
    /// Quantum target at finite `mass`, quasiclassical at `Mass::Infinite`;
    /// periodic or fixed-boundary according to the context.
    pub fn loops(ctx: Arc<EnergyContext>, mass: Mass) -> Result<GibbsTarget> {
        let kind = match (ctx.is_periodic(), mass.is_infinite()) {
            (false, false) => TargetKind::Quantum,
            (false, true) => TargetKind::Quasiclassical,
            (true, false) => TargetKind::QuantumPeriodic,
            (true, true) => TargetKind::QuasiclassicalPeriodic,
        };
        let spectrum = CovarianceSpectrum::new(ctx.basis(), mass);
        GibbsTarget::new(ctx, kind, Some(spectrum))
    }

    /// Classical target `exp(-βI) χ_{β,Λ}`.
    pub fn classical(ctx: Arc<EnergyContext>) -> Result<GibbsTarget> {
        let kind = if ctx.is_periodic() { TargetKind::ClassicalPeriodic } else { TargetKind::Classical };
        GibbsTarget::new(ctx, kind, None)
    }

    pub fn new(ctx: Arc<EnergyContext>, kind: TargetKind, spectrum: Option<CovarianceSpectrum>) -> Result<GibbsTarget> {
        if kind.is_periodic() != ctx.is_periodic() {
            return Err(Error::InvalidTarget(format!("{} target on a context with periodic = {}", kind.label(), ctx.is_periodic())));
        }
        match (&spectrum, kind.is_classical()) {
            (Some(_), true) => return Err(Error::InvalidTarget("classical kinds use χ_β, not a loop spectrum".into())),
            (None, false) => return Err(Error::InvalidTarget(format!("{} target needs a loop spectrum", kind.label()))),
            (Some(s), false) => {
                if s.mass().is_infinite() != kind.is_quasiclassical() {
                    return Err(Error::InvalidTarget(format!("{} target with mass {}", kind.label(), s.mass())));
                }
                if s.basis() != ctx.basis() {
                    return Err(Error::InvalidTarget("spectrum and context use different bases".into()));
                }
            }
            (None, true) => {}
        }
        let stability = model_stability(&ctx);
        if !stability.stable && !weight_is_bounded(&ctx) {
            return Err(Error::Unstable(stability.detail));
        }
        Ok(GibbsTarget { ctx, spectrum, kind, stability })
    }

    pub fn ctx(&self) -> &Arc<EnergyContext> {
        &self.ctx
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn spectrum(&self) -> Option<&CovarianceSpectrum> {
        self.spectrum.as_ref()
    }

    pub fn mass(&self) -> Option<Mass> {
        self.spectrum.as_ref().map(CovarianceSpectrum::mass)
    }

    pub fn stability(&self) -> &StabilityReport {
        &self.stability
    }

    pub fn lattice(&self) -> &LatticeBox {
        self.ctx.lattice()
    }

    /// Energy of a loop configuration, or `βI` of site values.
    pub fn energy_of(&self, view: &SampleView<'_>) -> Result<f64> {
        match view {
            SampleView::Loops(config) => self.ctx.energy(config),
            SampleView::Reals(x) => Ok(self.ctx.beta() * self.ctx.energy_classical(x)?),
        }
    }
}

/// The stability check against the coupling norm `c` of the model.
pub fn model_stability(ctx: &EnergyContext) -> StabilityReport {
    let c = if ctx.is_periodic() {
        periodic_coupling_norm(ctx.coupling(), ctx.lattice()).max(coupling_norm(ctx.coupling(), ctx.lattice().dimension()))
    } else {
        coupling_norm(ctx.coupling(), ctx.lattice().dimension())
    };
    validate_stability(ctx.potential(), c)
}

// Without couplings and with U >= 0 the weight exp(-E) is at most 1, so the
// target is normalizable even where the strict stability bound fails (U = 0).
fn weight_is_bounded(ctx: &EnergyContext) -> bool {
    ctx.coupling().is_zero()
        && std::iter::once(ctx.potential().base())
            .chain(ctx.potential().overrides().values())
            .all(|p| p.a >= 0.0 && p.higher.iter().all(|&b| b >= 0.0))
}

/// One state of a chain, as seen by observables.
#[derive(Clone, Copy, Debug)]
pub enum SampleView<'a> {
    Loops(&'a LoopConfiguration),
    Reals(&'a [f64]),
}

/// A sample `ω_Λ` together with the exterior it is conditioned on.
#[derive(Clone, Copy, Debug)]
pub struct Point<'a> {
    pub view: SampleView<'a>,
    pub ctx: &'a EnergyContext,
}

impl<'a> Point<'a> {
    pub fn new(view: SampleView<'a>, ctx: &'a EnergyContext) -> Point<'a> {
        Point { view, ctx }
    }

    pub fn lattice(&self) -> &LatticeBox {
        self.ctx.lattice()
    }

    pub fn beta(&self) -> f64 {
        self.ctx.beta()
    }

    /// Time average at `site`, interior or exterior (`None` outside the
    /// exterior data, and on a torus for sites not in the box).
    pub fn time_average(&self, site: &[i64]) -> Option<f64> {
        match self.ctx.lattice().index_of(site) {
            Some(i) => Some(self.interior_average(i)),
            None => self.ctx.boundary().time_average(site),
        }
    }

    pub fn interior_average(&self, index: usize) -> f64 {
        match self.view {
            SampleView::Loops(config) => config.site(index).time_average(),
            SampleView::Reals(x) => x[index],
        }
    }

    /// The loop at `site`; `None` for classical samples and reduced exteriors.
    pub fn loop_at(&self, site: &[i64]) -> Option<&'a TemperatureLoop> {
        match (self.ctx.lattice().index_of(site), self.view) {
            (Some(i), SampleView::Loops(config)) => Some(config.site(i)),
            (Some(_), SampleView::Reals(_)) => None,
            (None, _) => self.ctx.boundary().loop_at(site),
        }
    }

    pub fn interior_averages(&self) -> Vec<f64> {
        (0..self.ctx.lattice().len()).map(|i| self.interior_average(i)).collect()
    }
}

/// A bounded function of `ω_Λ × ζ_{Λ^c}` depending on finitely many sites.
pub trait CylinderFunction: Send + Sync {
    fn evaluate(&self, point: &Point<'_>) -> f64;

    /// `true` if the value only depends on site time averages, i.e. the
    /// function is constant on the classes `Υ_β(y)`.
    fn class_invariant(&self) -> bool {
        false
    }

    /// Whether the function is defined on samples of this kind.
    fn supports(&self, kind: TargetKind) -> bool {
        let _ = kind;
        true
    }

    fn name(&self) -> String;
}

/// `g(x) = f(constant_embed(x))` for a class-invariant `f`.
#[derive(Clone)]
pub struct ClassicalReduction {
    f: Arc<dyn CylinderFunction>,
    basis: ModeBasis,
}

impl CylinderFunction for ClassicalReduction {
    fn evaluate(&self, point: &Point<'_>) -> f64 {
        match point.view {
            SampleView::Reals(x) => {
                let config = constant_embed(point.lattice().clone(), x, self.basis).expect("values match the box");
                self.f.evaluate(&Point::new(SampleView::Loops(&config), point.ctx))
            }
            SampleView::Loops(_) => self.f.evaluate(point),
        }
    }

    fn class_invariant(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        format!("classical[{}]", self.f.name())
    }
}

/// The function `g` on site values with `E_{ν^qc(·|ζ)}[f] = E_{μ(·|y)}[g]`.
pub fn quasiclassical_to_classical(f: Arc<dyn CylinderFunction>, basis: ModeBasis) -> Result<ClassicalReduction> {
    if !f.class_invariant() {
        return Err(Error::NotClassInvariant(f.name()));
    }
    Ok(ClassicalReduction { f, basis })
}

/// How proposals are grouped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalScope {
    /// Site by site, constant mode and oscillatory modes as separate blocks.
    PerSite,
    /// All sites and modes at once.
    Global,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McParams {
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub chains: usize,
    pub target_acceptance: f64,
    pub batches: usize,
    pub scope: ProposalScope,
    /// Sweeps between cached-vs-recomputed energy checks.
    pub check_every: usize,
}

impl Default for McParams {
    fn default() -> McParams {
        McParams {
            burn_in: 2_000,
            samples: 20_000,
            thin: 1,
            chains: 4,
            target_acceptance: 0.3,
            batches: 32,
            scope: ProposalScope::PerSite,
            check_every: 1_000,
        }
    }
}

impl McParams {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.chains == 0 || self.batches == 0 {
            return Err(Error::InvalidParameters("thin, chains and batches must be positive".into()));
        }
        if self.samples < self.batches {
            return Err(Error::InvalidParameters(format!(
                "{} samples cannot fill {} batches",
                self.samples, self.batches
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidParameters("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

const MIN_STEP: f64 = 1e-4;
const MAX_STEP: f64 = 0.9999;
const TUNE_WINDOW: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizes {
    pub constant: f64,
    pub oscillatory: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AcceptanceStats {
    pub proposed: [u64; 2],
    pub accepted: [u64; 2],
}

impl AcceptanceStats {
    pub fn rate(&self, block: usize) -> Option<f64> {
        (self.proposed[block] > 0).then(|| self.accepted[block] as f64 / self.proposed[block] as f64)
    }
}

#[derive(Clone, Debug)]
enum Repr {
    Loops(LoopEnergyCache),
    Reals(ClassicalEnergyCache),
}

/// A running chain: configuration with cached energy, step sizes,
/// acceptance counters and its own generator.
#[derive(Clone, Debug)]
pub struct ChainState {
    target: Arc<GibbsTarget>,
    repr: Repr,
    rng: ChaCha8Rng,
    steps: StepSizes,
    stats: AcceptanceStats,
    scope: ProposalScope,
    sweeps: u64,
    resyncs: u64,
    osc_std: Vec<f64>,
    coeffs: Vec<f64>,
    values: Vec<f64>,
}

impl ChainState {
    /// A chain started from the zero configuration.
    pub fn new(target: Arc<GibbsTarget>, seed: u64) -> Result<ChainState> {
        let n = target.lattice().len();
        let repr = if target.kind.is_classical() {
            Repr::Reals(ClassicalEnergyCache::new(&target.ctx, vec![0.0; n])?)
        } else {
            let config = LoopConfiguration::zeros(target.lattice().clone(), target.ctx.basis());
            Repr::Loops(LoopEnergyCache::new(&target.ctx, config)?)
        };
        Ok(ChainState::assemble(target, repr, ChaCha8Rng::seed_from_u64(seed)))
    }

    fn assemble(target: Arc<GibbsTarget>, repr: Repr, rng: ChaCha8Rng) -> ChainState {
        let osc_std = target
            .spectrum
            .as_ref()
            .map(|s| s.eigenvalues().iter().map(|l| l.sqrt()).collect())
            .unwrap_or_default();
        let modes = target.ctx.basis().mode_count();
        let grid = target.ctx.grid().size();
        ChainState {
            target,
            repr,
            rng,
            steps: StepSizes { constant: 0.5, oscillatory: 0.5 },
            stats: AcceptanceStats::default(),
            scope: ProposalScope::PerSite,
            sweeps: 0,
            resyncs: 0,
            osc_std,
            coeffs: vec![0.0; modes],
            values: vec![0.0; grid],
        }
    }

    pub fn target(&self) -> &Arc<GibbsTarget> {
        &self.target
    }

    pub fn set_scope(&mut self, scope: ProposalScope) {
        self.scope = scope;
    }

    pub fn steps(&self) -> StepSizes {
        self.steps
    }

    pub fn set_steps(&mut self, steps: StepSizes) {
        self.steps = steps;
    }

    pub fn stats(&self) -> AcceptanceStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = AcceptanceStats::default();
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    /// Number of times the cached energy drifted beyond tolerance.
    pub fn resyncs(&self) -> u64 {
        self.resyncs
    }

    pub fn view(&self) -> SampleView<'_> {
        match &self.repr {
            Repr::Loops(cache) => SampleView::Loops(cache.config()),
            Repr::Reals(cache) => SampleView::Reals(cache.values()),
        }
    }

    pub fn point(&self) -> Point<'_> {
        Point::new(self.view(), &self.target.ctx)
    }

    /// Cached energy `E` (loops) or `βI` (site values).
    pub fn energy(&self) -> f64 {
        match &self.repr {
            Repr::Loops(cache) => cache.total(),
            Repr::Reals(cache) => self.target.ctx.beta() * cache.total(),
        }
    }

    /// Compares the cached energy with a fresh evaluation and resyncs on a
    /// discrepancy above `1e-8` (relative to `max(1, |E|)`).
    pub fn check_energy(&mut self) -> bool {
        let ctx = &self.target.ctx;
        let (cached, fresh) = match &self.repr {
            Repr::Loops(cache) => (cache.total(), cache.recompute(ctx)),
            Repr::Reals(cache) => (cache.total(), cache.recompute(ctx)),
        };
        let ok = (cached - fresh).abs() <= 1e-8 * fresh.abs().max(1.0);
        if !ok {
            self.resyncs += 1;
        }
        match &mut self.repr {
            Repr::Loops(cache) => cache.resync(ctx),
            Repr::Reals(cache) => cache.resync(ctx),
        }
        ok
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn metropolis(&mut self, delta: f64) -> bool {
        delta <= 0.0 || self.rng.random::<f64>() < (-delta).exp()
    }

    pub fn sweep(&mut self) {
        match self.scope {
            ProposalScope::PerSite => self.site_sweep(),
            ProposalScope::Global => self.global_move(),
        }
        self.sweeps += 1;
    }

    fn site_sweep(&mut self) {
        let target = Arc::clone(&self.target);
        let ctx = &target.ctx;
        let n = ctx.lattice().len();
        let (s0, s1) = (self.steps.constant, self.steps.oscillatory);
        let (r0, r1) = ((1.0 - s0 * s0).sqrt(), (1.0 - s1 * s1).sqrt());
        let quasiclassical = target.kind.is_quasiclassical();
        for j in 0..n {
            if let Repr::Reals(_) = self.repr {
                let xi = self.normal() / ctx.beta().sqrt();
                let Repr::Reals(cache) = &mut self.repr else { unreachable!() };
                let proposal = r0 * cache.values()[j] + s0 * xi;
                let delta_i = cache.site_delta(ctx, j, proposal);
                self.stats.proposed[0] += 1;
                if self.metropolis(ctx.beta() * delta_i) {
                    let Repr::Reals(cache) = &mut self.repr else { unreachable!() };
                    cache.accept(ctx, j, proposal, delta_i);
                    self.stats.accepted[0] += 1;
                }
                continue;
            }

            // constant mode, λ_0 = 1
            let xi = self.normal();
            let Repr::Loops(cache) = &mut self.repr else { unreachable!() };
            let c0 = cache.config().site(j).coeffs()[0];
            let shift = r0 * c0 + s0 * xi - c0;
            let (delta, onsite) = cache.shift_delta(ctx, j, shift);
            self.stats.proposed[0] += 1;
            if self.metropolis(delta) {
                let Repr::Loops(cache) = &mut self.repr else { unreachable!() };
                cache.accept_shift(ctx, j, shift, onsite, delta);
                self.stats.accepted[0] += 1;
            }

            if quasiclassical {
                continue;
            }
            // oscillatory modes
            {
                let Repr::Loops(cache) = &self.repr else { unreachable!() };
                self.coeffs.copy_from_slice(cache.config().site(j).coeffs());
            }
            for q in 1..self.coeffs.len() {
                let xi = self.normal();
                self.coeffs[q] = r1 * self.coeffs[q] + s1 * self.osc_std[q] * xi;
            }
            ctx.grid().evaluate_into(&self.coeffs, &mut self.values);
            let Repr::Loops(cache) = &self.repr else { unreachable!() };
            let (delta, onsite) = cache.site_delta(ctx, j, &self.coeffs, &self.values);
            self.stats.proposed[1] += 1;
            if self.metropolis(delta) {
                let Repr::Loops(cache) = &mut self.repr else { unreachable!() };
                cache.accept_site(ctx, j, &self.coeffs, &self.values, onsite, delta);
                self.stats.accepted[1] += 1;
            }
        }
    }

    fn global_move(&mut self) {
        let target = Arc::clone(&self.target);
        let ctx = &target.ctx;
        let s = self.steps.constant;
        let r = (1.0 - s * s).sqrt();
        self.stats.proposed[0] += 1;
        match &self.repr {
            Repr::Reals(cache) => {
                let mut proposal = cache.values().to_vec();
                for x in proposal.iter_mut() {
                    let xi = self.rng.sample::<f64, _>(StandardNormal) / ctx.beta().sqrt();
                    *x = r * *x + s * xi;
                }
                let new_total = ctx.energy_classical(&proposal).expect("sizes match");
                let delta = ctx.beta() * (new_total - cache.total());
                if self.metropolis(delta) {
                    self.repr = Repr::Reals(ClassicalEnergyCache::new(ctx, proposal).expect("sizes match"));
                    self.stats.accepted[0] += 1;
                }
            }
            Repr::Loops(cache) => {
                let mut proposal = cache.config().clone();
                for j in 0..ctx.lattice().len() {
                    for (q, c) in proposal.site_mut(j).coeffs_mut().iter_mut().enumerate() {
                        let xi: f64 = self.rng.sample(StandardNormal);
                        *c = r * *c + s * self.osc_std[q] * xi;
                    }
                }
                let new_total = ctx.energy(&proposal).expect("shapes match");
                let delta = new_total - cache.total();
                if self.metropolis(delta) {
                    self.repr = Repr::Loops(LoopEnergyCache::new(ctx, proposal).expect("shapes match"));
                    self.stats.accepted[0] += 1;
                }
            }
        }
    }

    /// Moves each block's step size toward `target` acceptance based on the
    /// counts since the last reset.
    fn adapt(&mut self, target: f64) {
        let adjust = |s: f64, rate: Option<f64>| -> f64 {
            let Some(rate) = rate else { return s };
            let logit = (s / (1.0 - s)).ln() + 2.0 * (rate - target);
            let next = 1.0 / (1.0 + (-logit).exp());
            next.clamp(MIN_STEP, MAX_STEP)
        };
        self.steps.constant = adjust(self.steps.constant, self.stats.rate(0));
        self.steps.oscillatory = adjust(self.steps.oscillatory, self.stats.rate(1));
        self.reset_stats();
    }

    /// Burn-in with step-size tuning; the step sizes are frozen afterwards.
    pub fn burn_in(&mut self, sweeps: usize, target_acceptance: f64) {
        for i in 0..sweeps {
            self.sweep();
            if (i + 1) % TUNE_WINDOW == 0 {
                self.adapt(target_acceptance);
            }
        }
        self.reset_stats();
    }

    pub fn write_checkpoint<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(CHECKPOINT_MAGIC)?;
        writer.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        writer.write_all(&[self.target.kind.code()])?;
        let values: Vec<f64> = match &self.repr {
            Repr::Loops(cache) => cache.config().loops().iter().flat_map(|l| l.coeffs().iter().copied()).collect(),
            Repr::Reals(cache) => cache.values().to_vec(),
        };
        writer.write_all(&(self.target.lattice().len() as u64).to_le_bytes())?;
        writer.write_all(&(values.len() as u64).to_le_bytes())?;
        for v in &values {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.write_all(&self.steps.constant.to_le_bytes())?;
        writer.write_all(&self.steps.oscillatory.to_le_bytes())?;
        writer.write_all(&self.sweeps.to_le_bytes())?;
        writer.write_all(&self.rng.get_seed())?;
        writer.write_all(&self.rng.get_stream().to_le_bytes())?;
        writer.write_all(&self.rng.get_word_pos().to_le_bytes())?;
        Ok(())
    }

    /// Restores a chain written by [`ChainState::write_checkpoint`] for the
    /// same target.
    pub fn read_checkpoint<R: Read>(target: Arc<GibbsTarget>, mut reader: R) -> Result<ChainState> {
        let mut magic = [0u8; 6];
        reader.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a chain checkpoint".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut reader)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let [kind] = read_array::<1>(&mut reader)?;
        if kind != target.kind.code() {
            return Err(Error::Checkpoint("checkpoint was written for another target kind".into()));
        }
        let sites = u64::from_le_bytes(read_array(&mut reader)?) as usize;
        let count = u64::from_le_bytes(read_array(&mut reader)?) as usize;
        let basis = target.ctx.basis();
        let expected = if target.kind.is_classical() { sites } else { sites * basis.mode_count() };
        if sites != target.lattice().len() || count != expected {
            return Err(Error::Checkpoint("checkpoint shape does not match the target".into()));
        }
        let values = (0..count)
            .map(|_| read_array(&mut reader).map(f64::from_le_bytes))
            .collect::<Result<Vec<f64>>>()?;
        let steps = StepSizes {
            constant: f64::from_le_bytes(read_array(&mut reader)?),
            oscillatory: f64::from_le_bytes(read_array(&mut reader)?),
        };
        let sweeps = u64::from_le_bytes(read_array(&mut reader)?);
        let seed: [u8; 32] = read_array(&mut reader)?;
        let stream = u64::from_le_bytes(read_array(&mut reader)?);
        let word_pos = u128::from_le_bytes(read_array(&mut reader)?);
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        let repr = if target.kind.is_classical() {
            Repr::Reals(ClassicalEnergyCache::new(&target.ctx, values)?)
        } else {
            let loops = values
                .chunks(basis.mode_count())
                .map(|c| TemperatureLoop::from_coeffs(basis, c.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let config = LoopConfiguration::from_loops(target.lattice().clone(), loops)?;
            Repr::Loops(LoopEnergyCache::new(&target.ctx, config)?)
        };
        let mut chain = ChainState::assemble(target, repr, rng);
        chain.steps = steps;
        chain.sweeps = sweeps;
        Ok(chain)
    }
}

const CHECKPOINT_MAGIC: &[u8; 6] = b"LGCHK\0";
const CHECKPOINT_VERSION: u32 = 1;

fn read_array<const N: usize>(reader: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    reader
        .read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

/// Summary of one chain run.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainReport {
    pub seed: u64,
    pub steps: StepSizes,
    /// Measurement-phase acceptance of the constant (or only) block and of
    /// the oscillatory block.
    pub acceptance: [Option<f64>; 2],
    /// Set when a tunable block ended outside `[0.05, 0.95]`.
    pub flag: Option<String>,
    pub resyncs: u64,
    pub wall_seconds: f64,
}

/// Runs one chain and hands every retained sample to `observer`.
pub fn run_chain<F>(target: &Arc<GibbsTarget>, params: &McParams, seed: u64, mut observer: F) -> Result<ChainReport>
where
    F: FnMut(&Point<'_>),
{
    params.validate()?;
    let start = Instant::now();
    let mut chain = ChainState::new(Arc::clone(target), seed)?;
    chain.set_scope(params.scope);
    chain.burn_in(params.burn_in, params.target_acceptance);
    for i in 0..params.samples {
        for _ in 0..params.thin {
            chain.sweep();
            if params.check_every > 0 && chain.sweeps % params.check_every as u64 == 0 {
                chain.check_energy();
            }
        }
        observer(&chain.point());
        debug_assert!(i < params.samples);
    }
    chain.check_energy();

    let stats = chain.stats();
    let acceptance = [stats.rate(0), stats.rate(1)];
    let steps = chain.steps();
    let mut flags = Vec::new();
    for (block, (rate, step)) in acceptance.iter().zip([steps.constant, steps.oscillatory]).enumerate() {
        if let Some(rate) = rate {
            // a saturated step proposes independent prior draws; high acceptance is then fine
            let saturated = step >= MAX_STEP && *rate > 0.95;
            if !(0.05..=0.95).contains(rate) && !saturated {
                flags.push(format!("block {block} acceptance {rate:.3} at step {step:.4}"));
            }
        }
    }
    Ok(ChainReport {
        seed,
        steps,
        acceptance,
        flag: (!flags.is_empty()).then(|| flags.join("; ")),
        resyncs: chain.resyncs(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// A Monte Carlo estimate with its batch-means standard error.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateWithError {
    pub estimate: f64,
    pub stderr: f64,
    pub ess: f64,
    pub samples: usize,
    pub seed: u64,
    pub wall_seconds: f64,
}

impl EstimateWithError {
    /// `|a - b| / sqrt(se_a² + se_b²)`.
    pub fn z_score(&self, other: &EstimateWithError) -> f64 {
        let combined = self.combined_stderr(other);
        let gap = (self.estimate - other.estimate).abs();
        if combined == 0.0 {
            if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            gap / combined
        }
    }

    pub fn combined_stderr(&self, other: &EstimateWithError) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    /// Agreement within `k` combined standard errors.
    pub fn agrees_with(&self, other: &EstimateWithError, k: f64) -> bool {
        (self.estimate - other.estimate).abs() <= k * self.combined_stderr(other)
    }

    /// `|estimate - exact| <= k · stderr`.
    pub fn agrees_with_value(&self, exact: f64, k: f64) -> bool {
        (self.estimate - exact).abs() <= k * self.stderr
    }
}

/// Per-chain batch means of an observable series.
#[derive(Clone, Debug)]
struct BatchSummary {
    batch_means: Vec<f64>,
    sum: f64,
    sum_sq: f64,
    count: usize,
}

fn summarize(values: &[f64], batches: usize) -> BatchSummary {
    let size = values.len() / batches;
    let skip = values.len() - size * batches;
    let batch_means = values[skip..].chunks(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    BatchSummary {
        batch_means,
        sum: values.iter().sum(),
        sum_sq: values.iter().map(|v| v * v).sum(),
        count: values.len(),
    }
}

fn merge(summaries: &[BatchSummary], seed: u64, wall_seconds: f64) -> EstimateWithError {
    let count: usize = summaries.iter().map(|s| s.count).sum();
    let sum: f64 = summaries.iter().map(|s| s.sum).sum();
    let sum_sq: f64 = summaries.iter().map(|s| s.sum_sq).sum();
    let estimate = sum / count as f64;
    let means: Vec<f64> = summaries.iter().flat_map(|s| s.batch_means.iter().copied()).collect();
    let b = means.len() as f64;
    let grand = means.iter().sum::<f64>() / b;
    let between = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (b - 1.0).max(1.0);
    let stderr = (between / b).sqrt();
    let variance = (sum_sq / count as f64 - estimate * estimate).max(0.0);
    let ess = if stderr > 0.0 { (variance / (stderr * stderr)).min(count as f64) } else { count as f64 };
    EstimateWithError { estimate, stderr, ess, samples: count, seed, wall_seconds }
}

/// Estimates of several observables from the same chains, with reports.
#[derive(Clone, Debug)]
pub struct ExpectationRun {
    pub estimates: Vec<EstimateWithError>,
    pub reports: Vec<ChainReport>,
}

/// `∫ f dπ(·|ζ)` for each `f`, from `params.chains` independent chains
/// seeded by `derive_seed(seed, [chain])` and merged in chain order.
pub fn expectations(
    target: &Arc<GibbsTarget>,
    functions: &[&dyn CylinderFunction],
    params: &McParams,
    seed: u64,
) -> Result<ExpectationRun> {
    params.validate()?;
    if let Some(f) = functions.iter().find(|f| !f.supports(target.kind)) {
        return Err(Error::InvalidTarget(format!("{} is undefined on {} samples", f.name(), target.kind.label())));
    }
    let start = Instant::now();
    let runs: Vec<Result<(Vec<BatchSummary>, ChainReport)>> = (0..params.chains)
        .into_par_iter()
        .map(|c| {
            let chain_seed = derive_seed(seed, &[c as u64]);
            let mut series = vec![Vec::with_capacity(params.samples); functions.len()];
            let report = run_chain(target, params, chain_seed, |point| {
                for (f, out) in functions.iter().zip(series.iter_mut()) {
                    out.push(f.evaluate(point));
                }
            })?;
            Ok((series.iter().map(|s| summarize(s, params.batches)).collect(), report))
        })
        .collect();
    let mut per_function: Vec<Vec<BatchSummary>> = vec![Vec::new(); functions.len()];
    let mut reports = Vec::with_capacity(runs.len());
    for run in runs {
        let (summaries, report) = run?;
        for (slot, summary) in per_function.iter_mut().zip(summaries) {
            slot.push(summary);
        }
        reports.push(report);
    }
    let wall = start.elapsed().as_secs_f64();
    let estimates = per_function.iter().map(|s| merge(s, seed, wall)).collect();
    Ok(ExpectationRun { estimates, reports })
}

pub fn expectation(
    target: &Arc<GibbsTarget>,
    f: &dyn CylinderFunction,
    params: &McParams,
    seed: u64,
) -> Result<EstimateWithError> {
    Ok(expectations(target, &[f], params, seed)?.estimates.remove(0))
}

/// `∫ g dρ_{β,Λ}(·|y)` under the classical measure with reduced boundary.
pub fn classical_kernel_expectation(
    ctx: Arc<EnergyContext>,
    g: &dyn CylinderFunction,
    params: &McParams,
    seed: u64,
) -> Result<EstimateWithError> {
    let target = Arc::new(GibbsTarget::classical(ctx)?);
    expectation(&target, g, params, seed)
}

/// `log Z` by importance sampling from the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionEstimate {
    pub log_z: EstimateWithError,
    pub relative_error: f64,
    pub reliable: bool,
}

/// `log ∫ exp(-E) dγ`, with a delta-method error bar; flagged unreliable
/// when the relative standard error of `Z` exceeds 10%.
pub fn log_partition_estimate(target: &GibbsTarget, n_samples: usize, seed: u64) -> Result<PartitionEstimate> {
    if n_samples < 2 {
        return Err(Error::InvalidParameters("need at least two prior draws".into()));
    }
    let start = Instant::now();
    let ctx = target.ctx();
    let n = ctx.lattice().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_weights = Vec::with_capacity(n_samples);
    match target.spectrum() {
        None => {
            let scale = 1.0 / ctx.beta().sqrt();
            let mut x = vec![0.0; n];
            for _ in 0..n_samples {
                for v in x.iter_mut() {
                    *v = scale * rng.sample::<f64, _>(StandardNormal);
                }
                log_weights.push(-ctx.beta() * ctx.energy_classical(&x)?);
            }
        }
        Some(spectrum) => {
            let std: Vec<f64> = spectrum.eigenvalues().iter().map(|l| l.sqrt()).collect();
            let mut config = LoopConfiguration::zeros(ctx.lattice().clone(), ctx.basis());
            for _ in 0..n_samples {
                for j in 0..n {
                    for (c, &s) in config.site_mut(j).coeffs_mut().iter_mut().zip(&std) {
                        *c = if s == 0.0 { 0.0 } else { s * rng.sample::<f64, _>(StandardNormal) };
                    }
                }
                log_weights.push(-ctx.energy(&config)?);
            }
        }
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / n_samples as f64;
    let var = scaled.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n_samples as f64 - 1.0);
    let relative_error = (var / n_samples as f64).sqrt() / mean;
    let estimate = max + mean.ln();
    let ess = {
        let sum: f64 = scaled.iter().sum();
        let sum_sq: f64 = scaled.iter().map(|w| w * w).sum();
        sum * sum / sum_sq
    };
    Ok(PartitionEstimate {
        log_z: EstimateWithError {
            estimate,
            stderr: relative_error,
            ess,
            samples: n_samples,
            seed,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        relative_error,
        reliable: relative_error <= 0.1,
    })
}

/// `|∫∫ f dπ_{Λ'}(·|ω) dπ_Λ(dω|ζ) - ∫ f dπ_Λ(·|ζ)|` by nested quadrature.
pub fn consistency_gap(target: &GibbsTarget, inner: &LatticeBox, f: &dyn CylinderFunction) -> Result<f64> {
    crate::oracle::oracle_consistency(target, inner, f, &crate::oracle::QuadratureOptions::consistency())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::BoundaryData;
    use crate::lattice::{BoundaryMode, CouplingSpec, EvenPolynomial, PotentialSpec};
    use crate::observables::{Constant, TimeAverageFn};

    fn free_ctx(n_max: usize) -> Arc<EnergyContext> {
        let lattice = LatticeBox::cube(1, 1).unwrap();
        Arc::new(
            EnergyContext::new(
                lattice,
                CouplingSpec::zero(BoundaryMode::Fixed),
                PotentialSpec::new(EvenPolynomial::zero()).unwrap(),
                ModeBasis::new(2.0, n_max).unwrap(),
                None,
                BoundaryData::Zero,
            )
            .unwrap(),
        )
    }

    fn dw_ctx(sites: usize, n_max: usize, y: f64) -> Arc<EnergyContext> {
        let lattice = LatticeBox::cube(1, sites).unwrap();
        let coupling = CouplingSpec::nearest_neighbor(0.5, BoundaryMode::Fixed).unwrap();
        let ys = lattice.collar(1).into_iter().map(|s| (s, y)).collect();
        Arc::new(
            EnergyContext::new(
                lattice,
                coupling,
                PotentialSpec::new(EvenPolynomial::double_well()).unwrap(),
                ModeBasis::new(2.0, n_max).unwrap(),
                None,
                BoundaryData::Averages(ys),
            )
            .unwrap(),
        )
    }

    fn quick() -> McParams {
        McParams { burn_in: 500, samples: 4_000, chains: 2, ..McParams::default() }
    }

    #[test]
    fn kinds_and_spectra_must_agree() {
        let ctx = dw_ctx(1, 2, 0.0);
        let finite = CovarianceSpectrum::new(ctx.basis(), Mass::Finite(1.0));
        assert!(GibbsTarget::new(Arc::clone(&ctx), TargetKind::Quasiclassical, Some(finite.clone())).is_err());
        assert!(GibbsTarget::new(Arc::clone(&ctx), TargetKind::Classical, Some(finite.clone())).is_err());
        assert!(GibbsTarget::new(Arc::clone(&ctx), TargetKind::Quantum, None).is_err());
        assert!(GibbsTarget::new(Arc::clone(&ctx), TargetKind::QuantumPeriodic, Some(finite)).is_err());
        assert_eq!(GibbsTarget::loops(Arc::clone(&ctx), Mass::Infinite).unwrap().kind(), TargetKind::Quasiclassical);
        assert_eq!(GibbsTarget::classical(ctx).unwrap().kind(), TargetKind::Classical);
    }

    #[test]
    fn unstable_models_are_refused() {
        let lattice = LatticeBox::cube(1, 2).unwrap();
        let ctx = EnergyContext::new(
            lattice,
            CouplingSpec::nearest_neighbor(3.0, BoundaryMode::Fixed).unwrap(),
            PotentialSpec::new(EvenPolynomial::new(1.0, vec![])).unwrap(),
            ModeBasis::new(1.0, 1).unwrap(),
            None,
            BoundaryData::Zero,
        )
        .unwrap();
        assert!(matches!(GibbsTarget::classical(Arc::new(ctx)), Err(Error::Unstable(_))));
        // the free model fails the strict bound but has a bounded weight
        assert!(GibbsTarget::classical(free_ctx(1)).is_ok());
    }

    #[test]
    fn constant_observable_has_exact_expectation() {
        let target = Arc::new(GibbsTarget::loops(dw_ctx(1, 2, 0.3), Mass::Finite(1.0)).unwrap());
        let est = expectation(&target, &Constant(1.0), &quick(), 3).unwrap();
        assert_eq!(est.estimate, 1.0);
        assert_eq!(est.stderr, 0.0);
        assert!(est.ess <= est.samples as f64);
    }

    #[test]
    fn exterior_observables_are_fixed_by_the_kernel() {
        let target = Arc::new(GibbsTarget::loops(dw_ctx(1, 2, 0.3), Mass::Finite(1.0)).unwrap());
        let outside = TimeAverageFn::tanh(vec![1]);
        let est = expectation(&target, &outside, &quick(), 4).unwrap();
        assert!((est.estimate - 0.3f64.tanh()).abs() < 1e-12);
        assert!(est.stderr < 1e-12);
    }

    #[test]
    fn quasiclassical_chains_never_leave_constant_loops() {
        let target = Arc::new(GibbsTarget::loops(dw_ctx(2, 3, 0.5), Mass::Infinite).unwrap());
        let mut checked = 0;
        run_chain(&target, &quick(), 9, |point| {
            let SampleView::Loops(config) = point.view else { panic!("loop target") };
            assert!(config.loops().iter().all(TemperatureLoop::is_constant));
            checked += 1;
        })
        .unwrap();
        assert_eq!(checked, quick().samples);
    }

    #[test]
    fn cached_energy_stays_consistent() {
        let target = Arc::new(GibbsTarget::loops(dw_ctx(3, 4, -0.4), Mass::Finite(0.5)).unwrap());
        let params = McParams { check_every: 100, ..quick() };
        let report = run_chain(&target, &params, 1, |_| {}).unwrap();
        assert_eq!(report.resyncs, 0);
        let classical = Arc::new(GibbsTarget::classical(dw_ctx(3, 1, -0.4)).unwrap());
        assert_eq!(run_chain(&classical, &params, 1, |_| {}).unwrap().resyncs, 0);
    }

    #[test]
    fn chains_are_reproducible_per_seed() {
        let target = Arc::new(GibbsTarget::loops(dw_ctx(2, 2, 0.1), Mass::Finite(2.0)).unwrap());
        let f = TimeAverageFn::tanh(vec![0]);
        let a = expectation(&target, &f, &quick(), 77).unwrap();
        let b = expectation(&target, &f, &quick(), 77).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.stderr, b.stderr);
        let c = expectation(&target, &f, &quick(), 78).unwrap();
        assert_ne!(a.estimate, c.estimate);
    }

    #[test]
    fn free_model_reproduces_the_prior() {
        let ctx = free_ctx(2);
        let target = Arc::new(GibbsTarget::loops(Arc::clone(&ctx), Mass::Finite(0.5)).unwrap());
        let spectrum = target.spectrum().unwrap().clone();
        let params = McParams { burn_in: 200, samples: 20_000, chains: 4, ..McParams::default() };
        let squares: Vec<crate::observables::CoefficientSquare> =
            (0..ctx.basis().mode_count()).map(|q| crate::observables::CoefficientSquare { site: 0, mode: q }).collect();
        let fs: Vec<&dyn CylinderFunction> = squares.iter().map(|f| f as &dyn CylinderFunction).collect();
        let run = expectations(&target, &fs, &params, 5).unwrap();
        for (q, est) in run.estimates.iter().enumerate() {
            let lambda = spectrum.eigenvalue(q);
            assert!(est.agrees_with_value(lambda, 3.0), "mode {q}: {} ± {} vs {lambda}", est.estimate, est.stderr);
        }
    }

    #[test]
    fn global_moves_also_reproduce_the_prior() {
        let ctx = free_ctx(1);
        let target = Arc::new(GibbsTarget::loops(Arc::clone(&ctx), Mass::Finite(1.0)).unwrap());
        let params = McParams { burn_in: 500, samples: 20_000, chains: 4, scope: ProposalScope::Global, ..McParams::default() };
        let f = crate::observables::CoefficientSquare { site: 0, mode: 0 };
        let est = expectation(&target, &f, &params, 8).unwrap();
        assert!(est.agrees_with_value(1.0, 3.0), "{est:?}");
    }

    #[test]
    fn step_sizes_are_tuned_during_burn_in() {
        // a stiff site, so that independent prior draws are mostly rejected
        let lattice = LatticeBox::cube(1, 1).unwrap();
        let ctx = EnergyContext::new(
            lattice,
            CouplingSpec::zero(BoundaryMode::Fixed),
            PotentialSpec::new(EvenPolynomial::new(5.0, vec![50.0])).unwrap(),
            ModeBasis::new(2.0, 8).unwrap(),
            None,
            BoundaryData::Zero,
        )
        .unwrap();
        let target = Arc::new(GibbsTarget::loops(Arc::new(ctx), Mass::Finite(0.05)).unwrap());
        let params = McParams { burn_in: 3_000, samples: 5_000, chains: 1, ..McParams::default() };
        let report = run_chain(&target, &params, 2, |_| {}).unwrap();
        for block in 0..2 {
            let rate = report.acceptance[block].unwrap();
            assert!((0.15..0.5).contains(&rate), "{report:?}");
        }
        assert!(report.steps.constant < 0.9 && report.steps.oscillatory < 0.9, "{report:?}");
        assert!(report.flag.is_none(), "{report:?}");
    }

    #[test]
    fn partition_function_of_the_free_model_is_one() {
        let target = GibbsTarget::loops(free_ctx(2), Mass::Finite(1.0)).unwrap();
        let est = log_partition_estimate(&target, 1_000, 1).unwrap();
        assert_eq!(est.log_z.estimate, 0.0);
        assert!(est.reliable);
    }

    #[test]
    fn partition_function_of_a_quadratic_site() {
        let lattice = LatticeBox::cube(1, 1).unwrap();
        let beta = 2.0;
        let ctx = EnergyContext::new(
            lattice,
            CouplingSpec::zero(BoundaryMode::Fixed),
            PotentialSpec::new(EvenPolynomial::new(1.0, vec![])).unwrap(),
            ModeBasis::new(beta, 1).unwrap(),
            None,
            BoundaryData::Zero,
        )
        .unwrap();
        let target = GibbsTarget::classical(Arc::new(ctx)).unwrap();
        let est = log_partition_estimate(&target, 200_000, 12).unwrap();
        // ∫ exp(-βx²) χ_β(dx) = 1/√3
        let exact = -(3f64.sqrt()).ln();
        assert!((est.log_z.estimate - exact).abs() < 3.0 * est.log_z.stderr, "{est:?}");
        assert!(est.reliable);
    }

    #[test]
    fn checkpoint_resumes_the_exact_stream() {
        let target = Arc::new(GibbsTarget::loops(dw_ctx(2, 3, 0.2), Mass::Finite(1.5)).unwrap());
        let mut straight = ChainState::new(Arc::clone(&target), 21).unwrap();
        let mut resumed = ChainState::new(Arc::clone(&target), 21).unwrap();
        straight.burn_in(200, 0.3);
        resumed.burn_in(200, 0.3);
        let mut bytes = Vec::new();
        resumed.write_checkpoint(&mut bytes).unwrap();
        let mut resumed = ChainState::read_checkpoint(Arc::clone(&target), bytes.as_slice()).unwrap();
        for _ in 0..50 {
            straight.sweep();
            resumed.sweep();
        }
        let (SampleView::Loops(a), SampleView::Loops(b)) = (straight.view(), resumed.view()) else { panic!() };
        assert_eq!(a, b);
        assert_eq!(straight.sweeps(), resumed.sweeps());

        let classical = Arc::new(GibbsTarget::classical(dw_ctx(2, 3, 0.2)).unwrap());
        assert!(ChainState::read_checkpoint(classical, bytes.as_slice()).is_err());
        assert!(ChainState::read_checkpoint(target, &bytes[..20]).is_err());
    }

    #[test]
    fn reduction_requires_class_invariance() {
        let basis = ModeBasis::new(1.0, 1).unwrap();
        let f: Arc<dyn CylinderFunction> = Arc::new(crate::observables::PathValue { site: vec![0], tau: 0.0, clip: 3.0 });
        assert!(matches!(quasiclassical_to_classical(f, basis), Err(Error::NotClassInvariant(_))));
        let g = quasiclassical_to_classical(Arc::new(TimeAverageFn::tanh(vec![0])), basis).unwrap();
        let ctx = dw_ctx(1, 1, 0.0);
        let x = [0.7];
        let point = Point::new(SampleView::Reals(&x), &ctx);
        assert!((g.evaluate(&point) - 0.7f64.tanh()).abs() < 1e-15);
        let constant = quasiclassical_to_classical(Arc::new(Constant(2.5)), basis).unwrap();
        assert_eq!(constant.evaluate(&point), 2.5);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let target = Arc::new(GibbsTarget::classical(dw_ctx(1, 1, 0.0)).unwrap());
        let bad = McParams { samples: 10, batches: 32, ..McParams::default() };
        assert!(run_chain(&target, &bad, 0, |_| {}).is_err());
        let bad = McParams { target_acceptance: 1.0, ..McParams::default() };
        assert!(expectation(&target, &Constant(1.0), &bad, 0).is_err());
    }
}
