//! Test observables, order parameters and mass-sweep diagnostics.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyContext;
use crate::error::{Error, Result};
use crate::gaussian::{derive_seed, Mass};
use crate::gibbs::{expectations, CylinderFunction, EstimateWithError, GibbsTarget, McParams, Point, SampleView, TargetKind};
use crate::lattice::{EvenPolynomial, Site};

/// `f ≡ c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constant(pub f64);

impl CylinderFunction for Constant {
    fn evaluate(&self, _: &Point<'_>) -> f64 {
        self.0
    }

    fn class_invariant(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        format!("const({})", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Tanh,
    /// `exp(-x²)`
    Gaussian,
    /// `clamp(x, -clip, clip)^power`
    ClippedPower { power: u32, clip: f64 },
}

impl Shape {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Shape::Tanh => x.tanh(),
            Shape::Gaussian => (-x * x).exp(),
            Shape::ClippedPower { power, clip } => x.clamp(-clip, clip).powi(power as i32),
        }
    }

    fn label(&self) -> String {
        match self {
            Shape::Tanh => "tanh".into(),
            Shape::Gaussian => "gauss".into(),
            Shape::ClippedPower { power, clip } => format!("pow{power}@{clip}"),
        }
    }
}

/// A bounded function of the time average `β⁻¹∫ω_j dτ` at one site,
/// interior or exterior. Exterior sites without boundary data read as 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeAverageFn {
    pub site: Site,
    pub shape: Shape,
}

impl TimeAverageFn {
    pub fn tanh(site: Site) -> TimeAverageFn {
        TimeAverageFn { site, shape: Shape::Tanh }
    }

    pub fn gaussian(site: Site) -> TimeAverageFn {
        TimeAverageFn { site, shape: Shape::Gaussian }
    }

    pub fn clipped_power(site: Site, power: u32, clip: f64) -> TimeAverageFn {
        TimeAverageFn { site, shape: Shape::ClippedPower { power, clip } }
    }
}

impl CylinderFunction for TimeAverageFn {
    fn evaluate(&self, point: &Point<'_>) -> f64 {
        self.shape.apply(point.time_average(&self.site).unwrap_or(0.0))
    }

    fn class_invariant(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        format!("{}(xbar{:?})", self.shape.label(), self.site)
    }
}

/// `c_q²` at an interior site. On site values `x` the constant mode is
/// `x√β` and the others vanish.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoefficientSquare {
    pub site: usize,
    pub mode: usize,
}

impl CylinderFunction for CoefficientSquare {
    fn evaluate(&self, point: &Point<'_>) -> f64 {
        match point.view {
            SampleView::Loops(config) => config.site(self.site).coeffs()[self.mode].powi(2),
            SampleView::Reals(x) if self.mode == 0 => x[self.site].powi(2) * point.beta(),
            SampleView::Reals(_) => 0.0,
        }
    }

    fn name(&self) -> String {
        format!("c[{},{}]^2", self.site, self.mode)
    }
}

/// `ω_j(τ)` clipped to `[-clip, clip]`; depends on more than time averages.
#[derive(Clone, Debug, PartialEq)]
pub struct PathValue {
    pub site: Site,
    pub tau: f64,
    pub clip: f64,
}

impl CylinderFunction for PathValue {
    fn evaluate(&self, point: &Point<'_>) -> f64 {
        let value = match point.loop_at(&self.site) {
            Some(l) => l.value_at(self.tau),
            None => point.time_average(&self.site).unwrap_or(0.0),
        };
        value.clamp(-self.clip, self.clip)
    }

    fn name(&self) -> String {
        format!("omega{:?}({})", self.site, self.tau)
    }
}

/// Per-sample order parameter `((1/|Λ|) Σ_j ∫_0^β ω_j dτ)²`, optionally
/// divided by `β²`. The time integral is `√β c_0` exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderParameterP {
    pub normalized: bool,
}

impl CylinderFunction for OrderParameterP {
    fn evaluate(&self, point: &Point<'_>) -> f64 {
        let SampleView::Loops(config) = point.view else {
            return f64::NAN;
        };
        let beta = point.beta();
        let sites = config.loops().len() as f64;
        let mean = config.loops().iter().map(|l| beta.sqrt() * l.coeffs()[0]).sum::<f64>() / sites;
        let p = mean * mean;
        if self.normalized {
            p / (beta * beta)
        } else {
            p
        }
    }

    fn class_invariant(&self) -> bool {
        true
    }

    fn supports(&self, kind: TargetKind) -> bool {
        !kind.is_classical()
    }

    fn name(&self) -> String {
        if self.normalized { "P_norm" } else { "P" }.into()
    }
}

/// Per-sample order parameter `((1/|Λ|) Σ_j x_j)²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderParameterQ;

impl CylinderFunction for OrderParameterQ {
    fn evaluate(&self, point: &Point<'_>) -> f64 {
        let SampleView::Reals(x) = point.view else {
            return f64::NAN;
        };
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        mean * mean
    }

    fn class_invariant(&self) -> bool {
        true
    }

    fn supports(&self, kind: TargetKind) -> bool {
        kind.is_classical()
    }

    fn name(&self) -> String {
        "Q".into()
    }
}

/// Observable selection as written in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservableSpec {
    OrderParameterP {
        #[serde(default)]
        normalized: bool,
    },
    OrderParameterQ,
    Tanh {
        site: Site,
    },
    Gaussian {
        site: Site,
    },
    Moment {
        site: Site,
        power: u32,
        clip: f64,
    },
    PathValue {
        site: Site,
        tau: f64,
        clip: f64,
    },
}

impl ObservableSpec {
    pub fn build(&self) -> Arc<dyn CylinderFunction> {
        match self {
            ObservableSpec::OrderParameterP { normalized } => Arc::new(OrderParameterP { normalized: *normalized }),
            ObservableSpec::OrderParameterQ => Arc::new(OrderParameterQ),
            ObservableSpec::Tanh { site } => Arc::new(TimeAverageFn::tanh(site.clone())),
            ObservableSpec::Gaussian { site } => Arc::new(TimeAverageFn::gaussian(site.clone())),
            ObservableSpec::Moment { site, power, clip } => Arc::new(TimeAverageFn::clipped_power(site.clone(), *power, *clip)),
            ObservableSpec::PathValue { site, tau, clip } => Arc::new(PathValue { site: site.clone(), tau: *tau, clip: *clip }),
        }
    }
}

/// The default panel of class-invariant observables at one site.
pub fn panel(site: &[i64]) -> Vec<Arc<dyn CylinderFunction>> {
    vec![
        Arc::new(TimeAverageFn::tanh(site.to_vec())),
        Arc::new(TimeAverageFn::gaussian(site.to_vec())),
        Arc::new(TimeAverageFn::clipped_power(site.to_vec(), 2, 3.0)),
    ]
}

/// One (m, observable) point of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub model_id: String,
    pub observable: String,
    pub kind: TargetKind,
    pub beta: f64,
    pub mass: Mass,
    pub sites: usize,
    pub n_max: usize,
    pub estimate: EstimateWithError,
    /// Sampler diagnostics (acceptance flags) of the point.
    pub flags: Vec<String>,
    pub error: Option<String>,
}

impl SweepResult {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn row(&self, timings: bool) -> SweepRow {
        SweepRow {
            model_id: format!("{}:{}", self.model_id, self.observable),
            kind: self.kind.label().to_string(),
            beta: self.beta,
            m: self.mass.to_string(),
            sites: self.sites,
            n_max: self.n_max,
            estimate: self.estimate.estimate,
            stderr: self.estimate.stderr,
            ess: self.estimate.ess,
            seed: self.estimate.seed,
            wall_seconds: timings.then_some(self.estimate.wall_seconds),
        }
    }
}

/// A row of the published estimates CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model_id: String,
    pub kind: String,
    pub beta: f64,
    pub m: String,
    pub sites: usize,
    pub n_max: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub ess: f64,
    pub seed: u64,
    pub wall_seconds: Option<f64>,
}

pub const SWEEP_HEADER: [&str; 11] =
    ["model_id", "kind", "beta", "m", "sites", "n_max", "estimate", "stderr", "ess", "seed", "wall_seconds"];

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    out.write_record(SWEEP_HEADER)?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(reader: R) -> Result<Vec<SweepRow>> {
    let mut input = csv::Reader::from_reader(reader);
    let header: Vec<String> = input.headers()?.iter().map(str::to_string).collect();
    if header != SWEEP_HEADER {
        return Err(Error::Config(format!("unexpected estimates header {header:?}")));
    }
    Ok(input.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Estimates of each observable under `ν^(m)` at every grid point; the
/// point `m = ∞` is the quasiclassical target. Failures are recorded per
/// point and the sweep continues.
pub fn mass_sweep(
    ctx: &Arc<EnergyContext>,
    model_id: &str,
    m_grid: &[Mass],
    observables: &[Arc<dyn CylinderFunction>],
    params: &McParams,
    seed: u64,
) -> Result<Vec<SweepResult>> {
    check_ascending(m_grid)?;
    let per_point: Vec<Vec<SweepResult>> = m_grid
        .par_iter()
        .enumerate()
        .map(|(i, &mass)| {
            let point_seed = derive_seed(seed, &[i as u64]);
            let kind_guess = match (ctx.is_periodic(), mass.is_infinite()) {
                (false, false) => TargetKind::Quantum,
                (false, true) => TargetKind::Quasiclassical,
                (true, false) => TargetKind::QuantumPeriodic,
                (true, true) => TargetKind::QuasiclassicalPeriodic,
            };
            let outcome = GibbsTarget::loops(Arc::clone(ctx), mass).and_then(|target| {
                let target = Arc::new(target);
                let fs: Vec<&dyn CylinderFunction> = observables.iter().map(|f| f.as_ref()).collect();
                expectations(&target, &fs, params, point_seed)
            });
            let make = |f: &Arc<dyn CylinderFunction>, estimate, flags, error| SweepResult {
                model_id: model_id.to_string(),
                observable: f.name(),
                kind: kind_guess,
                beta: ctx.beta(),
                mass,
                sites: ctx.lattice().len(),
                n_max: ctx.basis().n_max(),
                estimate,
                flags,
                error,
            };
            match outcome {
                Ok(run) => {
                    let flags: Vec<String> = run.reports.iter().filter_map(|r| r.flag.clone()).collect();
                    observables.iter().zip(run.estimates).map(|(f, e)| make(f, e, flags.clone(), None)).collect()
                }
                Err(err) => observables
                    .iter()
                    .map(|f| make(f, failed_estimate(point_seed), Vec::new(), Some(err.to_string())))
                    .collect(),
            }
        })
        .collect();
    Ok(per_point.into_iter().flatten().collect())
}

/// Estimates under the classical measure, reported in sweep form.
pub fn classical_point(
    ctx: &Arc<EnergyContext>,
    model_id: &str,
    observables: &[Arc<dyn CylinderFunction>],
    params: &McParams,
    seed: u64,
) -> Result<Vec<SweepResult>> {
    let target = Arc::new(GibbsTarget::classical(Arc::clone(ctx))?);
    let fs: Vec<&dyn CylinderFunction> = observables.iter().map(|f| f.as_ref()).collect();
    let run = expectations(&target, &fs, params, seed)?;
    let flags: Vec<String> = run.reports.iter().filter_map(|r| r.flag.clone()).collect();
    Ok(observables
        .iter()
        .zip(run.estimates)
        .map(|(f, estimate)| SweepResult {
            model_id: model_id.to_string(),
            observable: f.name(),
            kind: target.kind(),
            beta: ctx.beta(),
            mass: Mass::Infinite,
            sites: ctx.lattice().len(),
            n_max: ctx.basis().n_max(),
            estimate,
            flags: flags.clone(),
            error: None,
        })
        .collect())
}

fn failed_estimate(seed: u64) -> EstimateWithError {
    EstimateWithError { estimate: f64::NAN, stderr: f64::NAN, ess: 0.0, samples: 0, seed, wall_seconds: 0.0 }
}

fn check_ascending(m_grid: &[Mass]) -> Result<()> {
    if m_grid.is_empty() {
        return Err(Error::InvalidParameters("empty mass grid".into()));
    }
    let finite_ascending = m_grid.windows(2).all(|w| match (w[0], w[1]) {
        (Mass::Finite(a), Mass::Finite(b)) => a < b,
        (Mass::Finite(_), Mass::Infinite) => true,
        (Mass::Infinite, _) => false,
    });
    if !finite_ascending {
        return Err(Error::InvalidParameters("mass grid must be ascending, with inf only last".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub from: Mass,
    pub to: Mass,
    pub drop: f64,
    pub allowed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub pairs_checked: usize,
    pub violations: Vec<Violation>,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `P(m_{i+1}) >= P(m_i) - k·σ` along a sweep of a single
/// observable. Refused unless the model is periodic with `J >= 0`
/// nonincreasing in distance and a Phi4-family potential (or is free).
pub fn monotonicity_check(ctx: &EnergyContext, sweep: &[SweepResult], k: f64) -> Result<MonotonicityReport> {
    if !ctx.is_periodic() {
        return Err(Error::HypothesesNotMet("the order parameter is defined on a torus".into()));
    }
    if !ctx.coupling().is_nonnegative_nonincreasing() {
        return Err(Error::HypothesesNotMet("J must be nonnegative and nonincreasing in distance".into()));
    }
    let potential = ctx.potential();
    // the free model has an m-independent order parameter and is admitted
    let free = ctx.coupling().is_zero() && *potential.base() == EvenPolynomial::zero();
    if potential.has_overrides() || !(potential.base().is_phi4_family() || free) {
        return Err(Error::HypothesesNotMet(format!("U = {} is not in the Phi4 family", potential.base())));
    }
    let points: Vec<&SweepResult> = sweep.iter().filter(|r| r.is_ok()).collect();
    if let Some(other) = points.iter().find(|r| r.observable != points[0].observable) {
        return Err(Error::InvalidParameters(format!("mixed observables {} and {}", points[0].observable, other.observable)));
    }
    let mut violations = Vec::new();
    for pair in points.windows(2) {
        let (a, b) = (&pair[0].estimate, &pair[1].estimate);
        let drop = a.estimate - b.estimate;
        let allowed = k * a.combined_stderr(b);
        if drop > allowed {
            violations.push(Violation { from: pair[0].mass, to: pair[1].mass, drop, allowed });
        }
    }
    Ok(MonotonicityReport { pairs_checked: points.len().saturating_sub(1), violations })
}

/// `Δ(m) = |E_m[f] - reference|` with its standard error.
#[derive(Clone, Debug, PartialEq)]
pub struct Gap {
    pub mass: Mass,
    pub delta: f64,
    pub stderr: f64,
}

pub fn gaps(sweep: &[SweepResult], reference: f64, reference_stderr: f64) -> Vec<Gap> {
    sweep
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| Gap {
            mass: r.mass,
            delta: (r.estimate.estimate - reference).abs(),
            stderr: r.estimate.stderr.hypot(reference_stderr),
        })
        .collect()
}

/// Convergence verdict on a gap sequence: each step may grow by at most
/// `k` combined standard errors, and the last gap must be below
/// `first / ratio`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceVerdict {
    pub nonincreasing: bool,
    pub shrink_ratio: f64,
    pub shrinks: bool,
}

impl ConvergenceVerdict {
    pub fn passed(&self) -> bool {
        self.nonincreasing && self.shrinks
    }
}

pub fn convergence_verdict(gaps: &[Gap], k: f64, ratio: f64) -> ConvergenceVerdict {
    let nonincreasing = gaps.windows(2).all(|w| w[1].delta <= w[0].delta + k * w[0].stderr.hypot(w[1].stderr));
    let (first, last) = match (gaps.first(), gaps.last()) {
        (Some(a), Some(b)) => (a.delta, b.delta),
        _ => (0.0, 0.0),
    };
    let shrink_ratio = if last > 0.0 { first / last } else { f64::INFINITY };
    ConvergenceVerdict { nonincreasing, shrink_ratio, shrinks: gaps.len() >= 2 && last * ratio < first }
}

/// `P̃_Λ(m)` on a sequence of tori, one row per torus in the given order.
/// A trend report only: no extrapolation in `|Λ|` is attempted.
pub fn finite_size_trend(
    tori: &[Arc<EnergyContext>],
    model_id: &str,
    mass: Mass,
    params: &McParams,
    seed: u64,
) -> Result<Vec<SweepResult>> {
    if let Some(ctx) = tori.iter().find(|c| !c.is_periodic()) {
        return Err(Error::InvalidParameters(format!("box of {} sites is not a torus", ctx.lattice().len())));
    }
    let p: Vec<Arc<dyn CylinderFunction>> = vec![Arc::new(OrderParameterP { normalized: true })];
    let rows: Vec<Result<Vec<SweepResult>>> = tori
        .par_iter()
        .enumerate()
        .map(|(i, ctx)| {
            let id = format!("{model_id}/{}", ctx.lattice().len());
            mass_sweep(ctx, &id, &[mass], &p, params, derive_seed(seed, &[i as u64]))
        })
        .collect();
    Ok(rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}
