//! Deterministic ground truth for tiny instances: tensor-product
//! Gauss–Hermite quadrature of Gibbs expectations against the diagonal
//! Gaussian priors.
//!
//! Each site contributes one dimension per mode with nonzero prior variance
//! (one for classical and quasiclassical targets). Nodes for a mode of
//! variance `λ` are Gauss–Hermite nodes, recentred and rescaled to the
//! site's one-dimensional marginal; constant modes (and classical sites),
//! whose marginals are far from Gaussian, use a trapezoid rule over the
//! numerical support of the marginal instead.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::energy::{BoundaryData, EnergyContext};
use crate::error::{Error, Result};
use crate::gibbs::{CylinderFunction, GibbsTarget, Point, SampleView};
use crate::lattice::{LatticeBox, Site};
use crate::loops::{LoopConfiguration, TemperatureLoop};

/// Nodes and weights of the `n`-point rule for `E[h(Z)]`, `Z ~ N(0, 1)`.
/// Weights sum to one.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    // Newton iteration on orthonormal physicists' Hermite polynomials
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let nodes = nodes.iter().map(|x| x * std::f64::consts::SQRT_2).collect();
    let weights = weights.iter().map(|w| w / sqrt_pi).collect();
    (nodes, weights)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureOptions {
    /// Nodes per constant-mode (or classical site) dimension.
    pub zero_nodes: usize,
    /// Nodes per oscillatory-mode dimension.
    pub oscillatory_nodes: usize,
    /// Also evaluate with 1.5× the nodes and compare.
    pub self_check: bool,
    pub max_dimensions: usize,
    pub max_points: u64,
}

impl Default for QuadratureOptions {
    fn default() -> QuadratureOptions {
        QuadratureOptions {
            zero_nodes: 40,
            oscillatory_nodes: 16,
            self_check: true,
            max_dimensions: 8,
            max_points: 200_000_000,
        }
    }
}

impl QuadratureOptions {
    /// Coarser rule for nested quadrature, where both sides share nodes.
    pub fn consistency() -> QuadratureOptions {
        QuadratureOptions { zero_nodes: 24, oscillatory_nodes: 8, self_check: false, ..QuadratureOptions::default() }
    }

    pub fn refined(&self) -> QuadratureOptions {
        QuadratureOptions {
            zero_nodes: self.zero_nodes * 3 / 2,
            oscillatory_nodes: self.oscillatory_nodes * 3 / 2,
            self_check: false,
            ..self.clone()
        }
    }
}

/// Tolerance of the node-refinement self-check.
pub const SELF_CHECK_TOLERANCE: f64 = 1e-7;

#[derive(Clone, Debug)]
struct SitePoint {
    coeffs: Vec<f64>,
    weight: f64,
    // on-site plus exterior-boundary energy
    local: f64,
}

/// The tensor grid of a target: per-site product rules.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    sites: Vec<Vec<SitePoint>>,
    dimensions: usize,
    classical: bool,
    beta: f64,
}

impl QuadratureGrid {
    pub fn new(target: &GibbsTarget, options: &QuadratureOptions) -> Result<QuadratureGrid> {
        let ctx = target.ctx();
        let classical = target.kind().is_classical();
        let scales: Vec<(usize, f64)> = match target.spectrum() {
            None => vec![(0, 1.0 / ctx.beta().sqrt())],
            Some(s) => s.eigenvalues().iter().enumerate().filter(|(_, l)| **l > 0.0).map(|(q, l)| (q, l.sqrt())).collect(),
        };
        let n = ctx.lattice().len();
        let dimensions = n * scales.len();
        if dimensions > options.max_dimensions {
            return Err(Error::Intractable(format!("{dimensions} dimensions exceed {}", options.max_dimensions)));
        }
        let per_site: u64 = scales
            .iter()
            .map(|&(q, _)| if q == 0 { options.zero_nodes } else { options.oscillatory_nodes } as u64)
            .product();
        let total = (0..n).try_fold(1u64, |acc, _| acc.checked_mul(per_site));
        match total {
            Some(t) if t <= options.max_points => {}
            _ => return Err(Error::Intractable(format!("{per_site}^{n} nodes exceed {}", options.max_points))),
        }

        let osc_rule = gauss_hermite(options.oscillatory_nodes);
        let modes = if classical { 1 } else { ctx.basis().mode_count() };
        let mut values = vec![0.0; ctx.grid().size()];
        let mut local = |j: usize, coeffs: &[f64]| -> f64 {
            if classical {
                let x = coeffs[0];
                ctx.beta() * (ctx.site_potential(j).eval(x) + x * ctx.exterior_mean_field(j))
            } else {
                ctx.grid().evaluate_into(coeffs, &mut values);
                ctx.onsite_integral(j, &values) + dot(coeffs, ctx.exterior_field(j))
            }
        };

        let mut sites = Vec::with_capacity(n);
        for j in 0..n {
            let mut rule: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; modes], 1.0)];
            for &(q, scale) in &scales {
                let profile = |c: f64| {
                    let mut coeffs = vec![0.0; modes];
                    coeffs[q] = c;
                    local(j, &coeffs)
                };
                let axis = if q == 0 {
                    support_rule(scale, options.zero_nodes, profile)
                } else {
                    hermite_rule(scale, &osc_rule, profile)
                };
                let mut next = Vec::with_capacity(rule.len() * axis.len());
                for (coeffs, w) in &rule {
                    for &(c, wc) in &axis {
                        let mut coeffs = coeffs.clone();
                        coeffs[q] = c;
                        next.push((coeffs, w * wc));
                    }
                }
                rule = next;
            }
            let points =
                rule.into_iter().map(|(coeffs, weight)| SitePoint { local: local(j, &coeffs), coeffs, weight }).collect();
            sites.push(points);
        }
        Ok(QuadratureGrid { sites, dimensions, classical, beta: ctx.beta() })
    }

    pub fn dimensions(&self) -> usize {
        self.dimensions
    }

    pub fn points(&self) -> u64 {
        self.sites.iter().map(|s| s.len() as u64).product()
    }

    pub fn weight_sum(&self) -> f64 {
        let mut total = 0.0;
        self.for_each(|idx| total += idx.iter().enumerate().map(|(j, &i)| self.sites[j][i].weight).product::<f64>());
        total
    }

    fn for_each(&self, mut visit: impl FnMut(&[usize])) {
        let n = self.sites.len();
        let mut idx = vec![0usize; n];
        loop {
            visit(&idx);
            let mut axis = n;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < self.sites[axis].len() {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }

    fn log_weight(&self, ctx: &EnergyContext, idx: &[usize]) -> f64 {
        let mut local = 0.0;
        let mut pair = 0.0;
        let mut log_w = 0.0;
        for (j, &i) in idx.iter().enumerate() {
            let p = &self.sites[j][i];
            local += p.local;
            log_w += p.weight.ln();
            for &(k, value) in ctx.neighbors(j) {
                pair += 0.5 * value * dot(&p.coeffs, &self.sites[k][idx[k]].coeffs);
            }
        }
        // classical local terms already carry the factor β
        let pair_factor = if self.classical { self.beta } else { 1.0 };
        log_w - local - pair_factor * pair
    }
}

// log of the unnormalized density exp(-c²/2s² - local(c)) on a scan of ±12s
fn scan(scale: f64, mut local: impl FnMut(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
    const POINTS: usize = 2401;
    let h = 24.0 * scale / (POINTS - 1) as f64;
    let cs: Vec<f64> = (0..POINTS).map(|i| -12.0 * scale + h * i as f64).collect();
    let log_p = cs.iter().map(|&c| -0.5 * (c / scale).powi(2) - local(c)).collect();
    (cs, log_p)
}

fn normal_density(c: f64, scale: f64) -> f64 {
    (-0.5 * (c / scale).powi(2)).exp() / (scale * (2.0 * std::f64::consts::PI).sqrt())
}

// Gauss–Hermite nodes recentred and rescaled to the mean and width of the
// density; weights are for expectations under N(0, scale²).
fn hermite_rule(scale: f64, rule: &(Vec<f64>, Vec<f64>), local: impl FnMut(f64) -> f64) -> Vec<(f64, f64)> {
    let (cs, log_p) = scan(scale, local);
    let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p: Vec<f64> = log_p.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = p.iter().sum();
    let mean = cs.iter().zip(&p).map(|(c, p)| c * p).sum::<f64>() / total;
    let var = cs.iter().zip(&p).map(|(c, p)| (c - mean).powi(2) * p).sum::<f64>() / total;
    let (centre, width) = if var.sqrt() > 1e-3 * scale { (mean, var.sqrt()) } else { (0.0, scale) };
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(z, wz)| {
            let c = centre + width * z;
            (c, wz * (width / scale) * (0.5 * z * z - 0.5 * (c / scale).powi(2)).exp())
        })
        .collect()
}

// Trapezoid nodes spanning the region where the density is within e^-40 of
// its peak. For the non-Gaussian constant-mode marginals this converges far
// faster than Gauss–Hermite.
fn support_rule(scale: f64, n: usize, local: impl FnMut(f64) -> f64) -> Vec<(f64, f64)> {
    let (cs, log_p) = scan(scale, local);
    let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inside: Vec<usize> = (0..cs.len()).filter(|&i| log_p[i] >= max - 40.0).collect();
    let lo = cs[inside[0].saturating_sub(1)];
    let hi = cs[(inside[inside.len() - 1] + 1).min(cs.len() - 1)];
    if n == 1 {
        return vec![(0.0, 1.0)];
    }
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let c = lo + h * i as f64;
            let end = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            (c, end * h * normal_density(c, scale))
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Running `Σ w f` and `Σ w` with weights given as logarithms.
#[derive(Clone, Debug)]
struct WeightedSums {
    shift: f64,
    den: f64,
    num: Vec<f64>,
}

impl WeightedSums {
    fn new(functions: usize) -> WeightedSums {
        WeightedSums { shift: f64::NEG_INFINITY, den: 0.0, num: vec![0.0; functions] }
    }

    fn weight(&mut self, log_w: f64) -> f64 {
        if log_w > self.shift {
            let scale = (self.shift - log_w).exp();
            self.den *= scale;
            self.num.iter_mut().for_each(|v| *v *= scale);
            self.shift = log_w;
        }
        let w = (log_w - self.shift).exp();
        self.den += w;
        w
    }

    fn log_total(&self) -> f64 {
        self.shift + self.den.ln()
    }
}

/// Scratch sample reused across quadrature nodes.
enum Scratch {
    Loops(LoopConfiguration),
    Reals(Vec<f64>),
}

impl Scratch {
    fn new(target: &GibbsTarget) -> Scratch {
        let ctx = target.ctx();
        if target.kind().is_classical() {
            Scratch::Reals(vec![0.0; ctx.lattice().len()])
        } else {
            Scratch::Loops(LoopConfiguration::zeros(ctx.lattice().clone(), ctx.basis()))
        }
    }

    fn load(&mut self, grid: &QuadratureGrid, idx: &[usize]) {
        match self {
            Scratch::Loops(config) => {
                for (j, &i) in idx.iter().enumerate() {
                    config.site_mut(j).coeffs_mut().copy_from_slice(&grid.sites[j][i].coeffs);
                }
            }
            Scratch::Reals(x) => {
                for (j, &i) in idx.iter().enumerate() {
                    x[j] = grid.sites[j][i].coeffs[0];
                }
            }
        }
    }

    fn view(&self) -> SampleView<'_> {
        match self {
            Scratch::Loops(config) => SampleView::Loops(config),
            Scratch::Reals(x) => SampleView::Reals(x),
        }
    }
}

fn quadrature(target: &GibbsTarget, functions: &[&dyn CylinderFunction], options: &QuadratureOptions) -> Result<WeightedSums> {
    let grid = QuadratureGrid::new(target, options)?;
    let ctx = target.ctx();
    let mut sums = WeightedSums::new(functions.len());
    let mut scratch = Scratch::new(target);
    grid.for_each(|idx| {
        let w = sums.weight(grid.log_weight(ctx, idx));
        if w == 0.0 || functions.is_empty() {
            return;
        }
        scratch.load(&grid, idx);
        let point = Point::new(scratch.view(), ctx);
        for (f, num) in functions.iter().zip(sums.num.iter_mut()) {
            *num += w * f.evaluate(&point);
        }
    });
    Ok(sums)
}

/// A quadrature value with its refinement self-check.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleValue {
    pub value: f64,
    /// Value at 1.5× the nodes, when the self-check ran.
    pub refined: Option<f64>,
    pub points: u64,
}

impl OracleValue {
    /// `false` if refinement moved the value by more than the tolerance.
    pub fn self_check_passed(&self) -> bool {
        self.refined.is_none_or(|r| (r - self.value).abs() < SELF_CHECK_TOLERANCE)
    }
}

/// Quadrature Gibbs expectations `Σ w e^{-E} f / Σ w e^{-E}` for several
/// functions on one grid.
pub fn oracle_expectations(
    target: &GibbsTarget,
    functions: &[&dyn CylinderFunction],
    options: &QuadratureOptions,
) -> Result<Vec<OracleValue>> {
    let sums = quadrature(target, functions, options)?;
    let points = QuadratureGrid::new(target, options)?.points();
    let refined = if options.self_check {
        let r = quadrature(target, functions, &options.refined())?;
        Some(r.num.iter().map(|v| v / r.den).collect::<Vec<_>>())
    } else {
        None
    };
    Ok(sums
        .num
        .iter()
        .enumerate()
        .map(|(i, v)| OracleValue { value: v / sums.den, refined: refined.as_ref().map(|r| r[i]), points })
        .collect())
}

pub fn oracle_expectation(target: &GibbsTarget, f: &dyn CylinderFunction, options: &QuadratureOptions) -> Result<OracleValue> {
    Ok(oracle_expectations(target, &[f], options)?.remove(0))
}

/// `log Z` of the target by quadrature.
pub fn oracle_log_partition(target: &GibbsTarget, options: &QuadratureOptions) -> Result<f64> {
    Ok(quadrature(target, &[], options)?.log_total())
}

/// `|∫∫ f dπ_{Λ'}(·|ω) dπ_Λ(dω|ζ) - ∫ f dπ_Λ(·|ζ)|` by nested quadrature.
///
/// The outer integral runs over the nodes of `Λ`; for every configuration of
/// `Λ \ Λ'` the inner kernel is a separate quadrature over `Λ'` with that
/// configuration (and `ζ`) as its boundary.
pub fn oracle_consistency(
    target: &GibbsTarget,
    inner: &LatticeBox,
    f: &dyn CylinderFunction,
    options: &QuadratureOptions,
) -> Result<f64> {
    let ctx = target.ctx();
    if target.kind().is_periodic() {
        return Err(Error::InvalidTarget("kernels are defined for fixed boundary conditions".into()));
    }
    let outer = ctx.lattice();
    if outer.len() > 2 || (!target.kind().is_classical() && ctx.basis().n_max() > 2) {
        return Err(Error::Intractable("nested quadrature needs |Λ| <= 2 and n_max <= 2".into()));
    }
    if inner.dimension() != outer.dimension() || !inner.sites().all(|s| outer.contains(&s)) {
        return Err(Error::InvalidTarget("inner box must lie inside the outer box".into()));
    }

    let flat = quadrature(target, &[f], options)?;
    let flat = flat.num[0] / flat.den;

    let grid = QuadratureGrid::new(target, options)?;
    let rest: Vec<usize> = (0..outer.len()).filter(|&j| !inner.contains(&outer.coord(j))).collect();
    // marginal weights of the outer configuration on Λ \ Λ'
    let mut marginals: BTreeMap<Vec<usize>, WeightedSums> = BTreeMap::new();
    let mut reference = WeightedSums::new(0);
    grid.for_each(|idx| {
        let log_w = grid.log_weight(ctx, idx);
        reference.weight(log_w);
        let key: Vec<usize> = rest.iter().map(|&j| idx[j]).collect();
        marginals.entry(key).or_insert_with(|| WeightedSums::new(0)).weight(log_w);
    });

    let mut nested = 0.0;
    for (key, sums) in &marginals {
        let mass = (sums.log_total() - reference.log_total()).exp();
        let boundary = inner_boundary(target, &grid, &rest, key, inner)?;
        let inner_ctx = Arc::new(ctx.rebuild(inner.clone(), boundary)?);
        let inner_target = GibbsTarget::new(inner_ctx, target.kind(), target.spectrum().cloned())?;
        let value = quadrature(&inner_target, &[f], options)?;
        nested += mass * value.num[0] / value.den;
    }
    Ok((nested - flat).abs())
}

// Boundary of Λ' made of the outer configuration on Λ \ Λ' and the outer ζ.
fn inner_boundary(
    target: &GibbsTarget,
    grid: &QuadratureGrid,
    rest: &[usize],
    key: &[usize],
    inner: &LatticeBox,
) -> Result<BoundaryData> {
    let ctx = target.ctx();
    let outer = ctx.lattice();
    // the inner exterior: its collar, the rest of Λ and all outer data
    let mut sites: BTreeSet<Site> = inner.collar(ctx.coupling().range_sq()).into_iter().collect();
    sites.extend(rest.iter().map(|&j| outer.coord(j)));
    match ctx.boundary() {
        BoundaryData::Loops(l) => sites.extend(l.keys().cloned()),
        BoundaryData::Averages(y) => sites.extend(y.keys().cloned()),
        BoundaryData::Zero | BoundaryData::Periodic => {}
    }
    let basis = ctx.basis();
    let point = |j: usize| -> &[f64] {
        let pos = rest.iter().position(|&r| r == j).expect("rest site");
        &grid.sites[j][key[pos]].coeffs
    };
    if target.kind().is_classical() {
        let mut y = BTreeMap::new();
        for site in sites {
            let value = match outer.index_of(&site) {
                Some(j) => point(j)[0],
                None => ctx.boundary().time_average(&site).ok_or(Error::MissingBoundarySite { site: site.clone() })?,
            };
            y.insert(site, value);
        }
        return Ok(BoundaryData::Averages(y));
    }
    let mut loops = BTreeMap::new();
    for site in sites {
        let lp = match outer.index_of(&site) {
            Some(j) => TemperatureLoop::from_coeffs(basis, point(j).to_vec())?,
            None => match ctx.boundary() {
                BoundaryData::Loops(l) => l.get(&site).cloned().ok_or(Error::MissingBoundarySite { site: site.clone() })?,
                other => {
                    let y = other.time_average(&site).ok_or(Error::MissingBoundarySite { site: site.clone() })?;
                    TemperatureLoop::constant(basis, y)
                }
            },
        };
        loops.insert(site, lp);
    }
    Ok(BoundaryData::Loops(loops))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Mass;
    use crate::gibbs::quasiclassical_to_classical;
    use crate::lattice::{BoundaryMode, CouplingSpec, EvenPolynomial, PotentialSpec};
    use crate::loops::ModeBasis;
    use crate::observables::{CoefficientSquare, Constant, TimeAverageFn};

    fn ctx(sites: usize, n_max: usize, beta: f64, pot: EvenPolynomial, j0: f64, y: f64) -> Arc<EnergyContext> {
        let lattice = LatticeBox::cube(1, sites).unwrap();
        let coupling = if j0 == 0.0 {
            CouplingSpec::zero(BoundaryMode::Fixed)
        } else {
            CouplingSpec::nearest_neighbor(j0, BoundaryMode::Fixed).unwrap()
        };
        let ys = lattice.collar(1).into_iter().map(|s| (s, y)).collect();
        Arc::new(
            EnergyContext::new(
                lattice,
                coupling,
                PotentialSpec::new(pot).unwrap(),
                ModeBasis::new(beta, n_max).unwrap(),
                None,
                BoundaryData::Averages(ys),
            )
            .unwrap(),
        )
    }

    struct Square;
    impl CylinderFunction for Square {
        fn evaluate(&self, point: &Point<'_>) -> f64 {
            point.interior_average(0).powi(2)
        }
        fn class_invariant(&self) -> bool {
            true
        }
        fn name(&self) -> String {
            "xbar^2".into()
        }
    }

    #[test]
    fn hermite_rule_integrates_normal_moments() {
        for n in [1, 2, 5, 20, 40, 60] {
            let (x, w) = gauss_hermite(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12, "n = {n}");
            // E[Z^2k] = (2k-1)!!, exact for 2k <= 2n-1
            let mut double_factorial = 1.0;
            for k in 1..n.min(8) {
                double_factorial *= (2 * k - 1) as f64;
                let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * k as i32)).sum();
                assert!((m / double_factorial - 1.0).abs() < 1e-10, "n = {n}, k = {k}: {m}");
                let odd: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * k as i32 - 1)).sum();
                assert!(odd.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn free_moments_match_the_spectrum() {
        let c = ctx(1, 2, 2.0, EvenPolynomial::zero(), 0.0, 0.0);
        let target = GibbsTarget::loops(Arc::clone(&c), Mass::Finite(0.7)).unwrap();
        let squares: Vec<CoefficientSquare> = (0..5).map(|mode| CoefficientSquare { site: 0, mode }).collect();
        let fs: Vec<&dyn CylinderFunction> = squares.iter().map(|f| f as &dyn CylinderFunction).collect();
        let options = QuadratureOptions { oscillatory_nodes: 4, self_check: false, ..QuadratureOptions::default() };
        let values = oracle_expectations(&target, &fs, &options).unwrap();
        for (q, v) in values.iter().enumerate() {
            let lambda = target.spectrum().unwrap().eigenvalue(q);
            assert!((v.value - lambda).abs() < 1e-12, "mode {q}: {} vs {lambda}", v.value);
            assert!(v.self_check_passed());
        }
        assert!(oracle_log_partition(&target, &options).unwrap().abs() < 1e-12);
    }

    #[test]
    fn quadratic_classical_site() {
        // U = x², precision β + 2β
        let beta = 1.5;
        let c = ctx(1, 1, beta, EvenPolynomial::new(1.0, vec![]), 0.0, 0.0);
        let target = GibbsTarget::classical(c).unwrap();
        let v = oracle_expectation(&target, &Square, &QuadratureOptions::default()).unwrap();
        assert!((v.value - 1.0 / (3.0 * beta)).abs() < 1e-12);
        let log_z = oracle_log_partition(&target, &QuadratureOptions::default()).unwrap();
        assert!((log_z + 0.5 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn quasiclassical_equals_classical() {
        for sites in [1, 2] {
            let c = ctx(sites, 2, 2.0, EvenPolynomial::double_well(), 0.4, 0.6);
            let qc = GibbsTarget::loops(Arc::clone(&c), Mass::Infinite).unwrap();
            let cl = GibbsTarget::classical(Arc::clone(&c)).unwrap();
            let f: Arc<dyn CylinderFunction> = Arc::new(TimeAverageFn::tanh(vec![0]));
            let g = quasiclassical_to_classical(Arc::clone(&f), c.basis()).unwrap();
            let options = QuadratureOptions::default();
            let a = oracle_expectation(&qc, f.as_ref(), &options).unwrap();
            let b = oracle_expectation(&cl, &g, &options).unwrap();
            assert!((a.value - b.value).abs() < 1e-9, "{sites} sites: {a:?} vs {b:?}");
            let za = oracle_log_partition(&qc, &options).unwrap();
            let zb = oracle_log_partition(&cl, &options).unwrap();
            assert!((za - zb).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_guard() {
        let c = ctx(2, 2, 2.0, EvenPolynomial::double_well(), 0.4, 0.0);
        let target = GibbsTarget::loops(c, Mass::Finite(1.0)).unwrap();
        assert!(matches!(
            oracle_expectation(&target, &Constant(1.0), &QuadratureOptions::default()),
            Err(Error::Intractable(_))
        ));
    }

    #[test]
    fn quartic_site_converges_under_refinement() {
        let c = ctx(1, 1, 2.0, EvenPolynomial::double_well(), 0.5, 0.3);
        let target = GibbsTarget::loops(c, Mass::Finite(1.0)).unwrap();
        let v = oracle_expectation(&target, &TimeAverageFn::tanh(vec![0]), &QuadratureOptions::default()).unwrap();
        assert!(v.self_check_passed(), "{v:?}");
    }

    #[test]
    fn consistency_of_nested_kernels() {
        let c = ctx(2, 1, 2.0, EvenPolynomial::double_well(), 0.5, 0.3);
        let f = TimeAverageFn::tanh(vec![0]);
        let options = QuadratureOptions::consistency();
        let inner = LatticeBox::cube(1, 1).unwrap();
        for target in [
            GibbsTarget::loops(Arc::clone(&c), Mass::Finite(1.0)).unwrap(),
            GibbsTarget::loops(Arc::clone(&c), Mass::Infinite).unwrap(),
            GibbsTarget::classical(Arc::clone(&c)).unwrap(),
        ] {
            let gap = oracle_consistency(&target, &inner, &f, &options).unwrap();
            assert!(gap < 1e-6, "{:?}: {gap}", target.kind());
            let same = oracle_consistency(&target, c.lattice(), &f, &options).unwrap();
            assert_eq!(same, 0.0);
            let outside = TimeAverageFn::tanh(vec![2]);
            let g = oracle_consistency(&target, &inner, &outside, &options).unwrap();
            assert!(g < 1e-12, "{g}");
        }
    }
}
