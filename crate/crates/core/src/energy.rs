//! Euclidean (loop) and classical energy functionals, with fixed-boundary
//! and periodic variants, plus incremental caches for single-site updates.
//!
//! The on-site term `∫_0^β U(ω(τ)) dτ` is a trapezoid sum on the path grid.
//! Pair and boundary terms are bilinear and are evaluated exactly from
//! Fourier coefficients. The harmonic `½x²` of the reference oscillator is
//! not part of the energy; it lives in the Gaussian priors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lattice::{BoundaryMode, CouplingSpec, EvenPolynomial, LatticeBox, PotentialSpec, Site};
use crate::loops::{dot, ExteriorLoops, LoopConfiguration, ModeBasis, PathGrid, TemperatureLoop};

/// What lies outside the box.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryData {
    /// `ζ ≡ 0` on every exterior site.
    Zero,
    /// Loop-valued exterior `ζ` on (at least) the interaction collar.
    Loops(ExteriorLoops),
    /// Exterior reduced to site time averages `y`.
    Averages(BTreeMap<Site, f64>),
    /// Torus metric, no exterior.
    Periodic,
}

impl BoundaryData {
    pub fn is_periodic(&self) -> bool {
        matches!(self, BoundaryData::Periodic)
    }

    pub fn time_average(&self, site: &[i64]) -> Option<f64> {
        match self {
            BoundaryData::Zero => Some(0.0),
            BoundaryData::Loops(loops) => loops.get(site).map(TemperatureLoop::time_average),
            BoundaryData::Averages(values) => values.get(site).copied(),
            BoundaryData::Periodic => None,
        }
    }

    pub fn loop_at(&self, site: &[i64]) -> Option<&TemperatureLoop> {
        match self {
            BoundaryData::Loops(loops) => loops.get(site),
            _ => None,
        }
    }
}

/// Grid size for which the trapezoid rule integrates `U(ω)` exactly:
/// at least `4·n_max` and more than `degree·n_max`.
pub fn default_grid_size(basis: ModeBasis, degree: usize) -> usize {
    basis.min_grid().max(degree * basis.n_max() + 1)
}

/// Everything needed to evaluate energies on one box.
#[derive(Clone, Debug)]
pub struct EnergyContext {
    lattice: LatticeBox,
    coupling: CouplingSpec,
    potential: PotentialSpec,
    basis: ModeBasis,
    grid: PathGrid,
    boundary: BoundaryData,
    site_potentials: Vec<EvenPolynomial>,
    neighbors: Vec<Vec<(usize, f64)>>,
    exterior_field: Vec<Vec<f64>>,
    exterior_mean_field: Vec<f64>,
}

impl EnergyContext {
    pub fn new(
        lattice: LatticeBox,
        coupling: CouplingSpec,
        potential: PotentialSpec,
        basis: ModeBasis,
        grid_size: Option<usize>,
        boundary: BoundaryData,
    ) -> Result<EnergyContext> {
        let periodic = coupling.mode() == BoundaryMode::Periodic;
        if periodic != boundary.is_periodic() {
            return Err(Error::ContextMismatch(
                "periodic couplings go with periodic boundary data and vice versa".into(),
            ));
        }
        if periodic && potential.has_overrides() {
            return Err(Error::ContextMismatch(
                "periodic energies need a translation-invariant potential (no per-site overrides)".into(),
            ));
        }
        let grid_size = grid_size.unwrap_or_else(|| default_grid_size(basis, potential.max_degree()));
        let grid = PathGrid::new(basis, grid_size)?;
        let sites: Vec<Site> = lattice.sites().collect();
        let site_potentials = sites.iter().map(|s| potential.for_site(s).clone()).collect();

        let neighbors = sites
            .iter()
            .enumerate()
            .map(|(j, sj)| {
                sites
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != j)
                    .filter_map(|(k, sk)| {
                        let dist_sq = if periodic {
                            lattice.periodic_distance_sq(sj, sk).expect("sites of the box")
                        } else {
                            crate::lattice::euclidean_distance_sq(sj, sk)
                        };
                        let value = coupling.value_sq(dist_sq);
                        (value != 0.0).then_some((k, value))
                    })
                    .collect()
            })
            .collect();

        let modes = basis.mode_count();
        let mut exterior_field = vec![vec![0.0; modes]; lattice.len()];
        let mut exterior_mean_field = vec![0.0; lattice.len()];
        if !periodic {
            for outside in lattice.collar(coupling.range_sq()) {
                for (j, sj) in sites.iter().enumerate() {
                    let value = coupling.value_sq(crate::lattice::euclidean_distance_sq(sj, &outside));
                    if value == 0.0 {
                        continue;
                    }
                    let missing = || Error::MissingBoundarySite { site: outside.clone() };
                    match &boundary {
                        BoundaryData::Zero => {}
                        BoundaryData::Loops(loops) => {
                            let zeta = loops.get(&outside).ok_or_else(missing)?;
                            if zeta.basis() != basis {
                                return Err(Error::ContextMismatch(format!(
                                    "boundary loop at {outside:?} uses a different basis"
                                )));
                            }
                            for (f, c) in exterior_field[j].iter_mut().zip(zeta.coeffs()) {
                                *f += value * c;
                            }
                            exterior_mean_field[j] += value * zeta.time_average();
                        }
                        BoundaryData::Averages(values) => {
                            let y = *values.get(&outside).ok_or_else(missing)?;
                            exterior_field[j][0] += value * y * basis.beta().sqrt();
                            exterior_mean_field[j] += value * y;
                        }
                        BoundaryData::Periodic => unreachable!(),
                    }
                }
            }
        }

        Ok(EnergyContext {
            lattice,
            coupling,
            potential,
            basis,
            grid,
            boundary,
            site_potentials,
            neighbors,
            exterior_field,
            exterior_mean_field,
        })
    }

    /// Same model on another box or with another exterior.
    pub fn rebuild(&self, lattice: LatticeBox, boundary: BoundaryData) -> Result<EnergyContext> {
        EnergyContext::new(
            lattice,
            self.coupling.clone(),
            self.potential.clone(),
            self.basis,
            Some(self.grid.size()),
            boundary,
        )
    }

    /// Same model and box with another mode basis.
    pub fn with_basis(&self, basis: ModeBasis, grid_size: Option<usize>) -> Result<EnergyContext> {
        let boundary = match &self.boundary {
            BoundaryData::Loops(_) => {
                return Err(Error::ContextMismatch("loop-valued boundary data is tied to its basis".into()))
            }
            other => other.clone(),
        };
        EnergyContext::new(self.lattice.clone(), self.coupling.clone(), self.potential.clone(), basis, grid_size, boundary)
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn coupling(&self) -> &CouplingSpec {
        &self.coupling
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    pub fn basis(&self) -> ModeBasis {
        self.basis
    }

    pub fn beta(&self) -> f64 {
        self.basis.beta()
    }

    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn boundary(&self) -> &BoundaryData {
        &self.boundary
    }

    pub fn is_periodic(&self) -> bool {
        self.boundary.is_periodic()
    }

    pub fn neighbors(&self, site: usize) -> &[(usize, f64)] {
        &self.neighbors[site]
    }

    pub fn site_potential(&self, site: usize) -> &EvenPolynomial {
        &self.site_potentials[site]
    }

    /// `Σ_{k∉Λ} J_jk ζ_k` in coefficient form.
    pub fn exterior_field(&self, site: usize) -> &[f64] {
        &self.exterior_field[site]
    }

    /// `Σ_{k∉Λ} J_jk y_k`.
    pub fn exterior_mean_field(&self, site: usize) -> f64 {
        self.exterior_mean_field[site]
    }

    /// `∫_0^β U_j(ω_j(τ)) dτ` from grid samples of `ω_j`.
    #[inline]
    pub fn onsite_integral(&self, site: usize, values: &[f64]) -> f64 {
        let poly = &self.site_potentials[site];
        self.grid.weight() * values.iter().map(|&v| poly.eval(v)).sum::<f64>()
    }

    fn check_config(&self, config: &LoopConfiguration) -> Result<()> {
        if config.lattice() != &self.lattice {
            return Err(Error::ContextMismatch("configuration lives on another box".into()));
        }
        if config.basis() != self.basis {
            return Err(Error::ContextMismatch("configuration uses another mode basis".into()));
        }
        Ok(())
    }

    /// `(½ Σ_{j,k∈Λ} J_jk (ω_j, ω_k)_β, Σ_{j∈Λ} (ω_j, Σ_k J_jk ζ_k)_β)`.
    pub fn bilinear_terms(&self, config: &LoopConfiguration) -> (f64, f64) {
        let mut pair = 0.0;
        let mut boundary = 0.0;
        for j in 0..self.lattice.len() {
            let cj = config.site(j).coeffs();
            for &(k, value) in &self.neighbors[j] {
                pair += 0.5 * value * dot(cj, config.site(k).coeffs());
            }
            boundary += dot(cj, &self.exterior_field[j]);
        }
        (pair, boundary)
    }

    fn loop_energy(&self, config: &LoopConfiguration) -> f64 {
        let mut values = vec![0.0; self.grid.size()];
        let mut onsite = 0.0;
        for j in 0..self.lattice.len() {
            self.grid.evaluate_into(config.site(j).coeffs(), &mut values);
            onsite += self.onsite_integral(j, &values);
        }
        let (pair, boundary) = self.bilinear_terms(config);
        onsite + pair + boundary
    }

    /// `E_{β,Λ}(ω_Λ|ζ)` with the context's fixed boundary data.
    pub fn euclidean_energy(&self, config: &LoopConfiguration) -> Result<f64> {
        if self.is_periodic() {
            return Err(Error::ContextMismatch("use periodic_euclidean_energy on a periodic context".into()));
        }
        self.check_config(config)?;
        Ok(self.loop_energy(config))
    }

    /// `E^per_{β,Λ}(ω_Λ)` with couplings at torus distances.
    pub fn periodic_euclidean_energy(&self, config: &LoopConfiguration) -> Result<f64> {
        if !self.is_periodic() {
            return Err(Error::ContextMismatch("periodic energy needs a periodic context".into()));
        }
        self.check_config(config)?;
        Ok(self.loop_energy(config))
    }

    fn site_energy_classical(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            total += self.site_potentials[j].eval(xj);
            for &(k, value) in &self.neighbors[j] {
                total += 0.5 * value * xj * x[k];
            }
            total += xj * self.exterior_mean_field[j];
        }
        total
    }

    fn check_reals(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.lattice.len() {
            return Err(Error::ContextMismatch(format!("{} values for {} sites", x.len(), self.lattice.len())));
        }
        Ok(())
    }

    /// `I_Λ(x_Λ|y)`; loop-valued boundary data enters through its time averages.
    pub fn classical_energy(&self, x: &[f64]) -> Result<f64> {
        if self.is_periodic() {
            return Err(Error::ContextMismatch("use periodic_classical_energy on a periodic context".into()));
        }
        self.check_reals(x)?;
        Ok(self.site_energy_classical(x))
    }

    /// `I^per_Λ(x_Λ)`.
    pub fn periodic_classical_energy(&self, x: &[f64]) -> Result<f64> {
        if !self.is_periodic() {
            return Err(Error::ContextMismatch("periodic energy needs a periodic context".into()));
        }
        self.check_reals(x)?;
        Ok(self.site_energy_classical(x))
    }

    /// Loop energy for either boundary kind.
    pub fn energy(&self, config: &LoopConfiguration) -> Result<f64> {
        self.check_config(config)?;
        Ok(self.loop_energy(config))
    }

    /// Classical energy for either boundary kind.
    pub fn energy_classical(&self, x: &[f64]) -> Result<f64> {
        self.check_reals(x)?;
        Ok(self.site_energy_classical(x))
    }
}

/// A loop configuration with cached grid samples, on-site integrals and
/// interior interaction fields `Σ_k J_jk ω_k`, so that a single-site move
/// costs `O(neighbours + grid)`.
#[derive(Clone, Debug)]
pub struct LoopEnergyCache {
    config: LoopConfiguration,
    values: Vec<Vec<f64>>,
    onsite: Vec<f64>,
    field: Vec<Vec<f64>>,
    total: f64,
}

impl LoopEnergyCache {
    pub fn new(ctx: &EnergyContext, config: LoopConfiguration) -> Result<LoopEnergyCache> {
        ctx.check_config(&config)?;
        let n = ctx.lattice.len();
        let modes = ctx.basis.mode_count();
        let mut cache = LoopEnergyCache {
            values: vec![vec![0.0; ctx.grid.size()]; n],
            onsite: vec![0.0; n],
            field: vec![vec![0.0; modes]; n],
            total: 0.0,
            config,
        };
        cache.resync(ctx);
        Ok(cache)
    }

    pub fn config(&self) -> &LoopConfiguration {
        &self.config
    }

    pub fn into_config(self) -> LoopConfiguration {
        self.config
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn values(&self, site: usize) -> &[f64] {
        &self.values[site]
    }

    /// Rebuild every cached quantity from the configuration.
    pub fn resync(&mut self, ctx: &EnergyContext) {
        let n = ctx.lattice.len();
        for j in 0..n {
            ctx.grid.evaluate_into(self.config.site(j).coeffs(), &mut self.values[j]);
            self.onsite[j] = ctx.onsite_integral(j, &self.values[j]);
            self.field[j].iter_mut().for_each(|f| *f = 0.0);
            for &(k, value) in ctx.neighbors(j) {
                for (f, c) in self.field[j].iter_mut().zip(self.config.site(k).coeffs()) {
                    *f += value * c;
                }
            }
        }
        self.total = ctx.loop_energy(&self.config);
    }

    /// Energy recomputed from scratch.
    pub fn recompute(&self, ctx: &EnergyContext) -> f64 {
        ctx.loop_energy(&self.config)
    }

    /// `(ΔE, new on-site integral)` for replacing site `j` by `coeffs`
    /// whose grid samples are `values`.
    pub fn site_delta(&self, ctx: &EnergyContext, j: usize, coeffs: &[f64], values: &[f64]) -> (f64, f64) {
        let new_onsite = ctx.onsite_integral(j, values);
        let old = self.config.site(j).coeffs();
        let ext = ctx.exterior_field(j);
        let linear: f64 = coeffs
            .iter()
            .zip(old)
            .zip(self.field[j].iter().zip(ext))
            .map(|((c, o), (f, e))| (c - o) * (f + e))
            .sum();
        (new_onsite - self.onsite[j] + linear, new_onsite)
    }

    pub fn accept_site(&mut self, ctx: &EnergyContext, j: usize, coeffs: &[f64], values: &[f64], new_onsite: f64, delta: f64) {
        for &(k, value) in ctx.neighbors(j) {
            let old = self.config.site(j).coeffs();
            for ((f, c), o) in self.field[k].iter_mut().zip(coeffs).zip(old) {
                *f += value * (c - o);
            }
        }
        self.config.site_mut(j).coeffs_mut().copy_from_slice(coeffs);
        self.values[j].copy_from_slice(values);
        self.onsite[j] = new_onsite;
        self.total += delta;
    }

    /// `(ΔE, new on-site integral)` for moving the constant coefficient of
    /// site `j` by `shift` (the path moves by `shift/√β`).
    pub fn shift_delta(&self, ctx: &EnergyContext, j: usize, shift: f64) -> (f64, f64) {
        let offset = shift / ctx.beta().sqrt();
        let poly = ctx.site_potential(j);
        let new_onsite = ctx.grid.weight() * self.values[j].iter().map(|&v| poly.eval(v + offset)).sum::<f64>();
        let linear = shift * (self.field[j][0] + ctx.exterior_field(j)[0]);
        (new_onsite - self.onsite[j] + linear, new_onsite)
    }

    pub fn accept_shift(&mut self, ctx: &EnergyContext, j: usize, shift: f64, new_onsite: f64, delta: f64) {
        for &(k, value) in ctx.neighbors(j) {
            self.field[k][0] += value * shift;
        }
        self.config.site_mut(j).coeffs_mut()[0] += shift;
        let offset = shift / ctx.beta().sqrt();
        self.values[j].iter_mut().for_each(|v| *v += offset);
        self.onsite[j] = new_onsite;
        self.total += delta;
    }
}

/// Per-site reals with cached interaction fields, for classical targets.
/// `total` is `I_Λ(x|y)` (not multiplied by β).
#[derive(Clone, Debug)]
pub struct ClassicalEnergyCache {
    x: Vec<f64>,
    field: Vec<f64>,
    total: f64,
}

impl ClassicalEnergyCache {
    pub fn new(ctx: &EnergyContext, x: Vec<f64>) -> Result<ClassicalEnergyCache> {
        ctx.check_reals(&x)?;
        let mut cache = ClassicalEnergyCache { field: vec![0.0; x.len()], x, total: 0.0 };
        cache.resync(ctx);
        Ok(cache)
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn resync(&mut self, ctx: &EnergyContext) {
        for j in 0..self.x.len() {
            self.field[j] = ctx.neighbors(j).iter().map(|&(k, v)| v * self.x[k]).sum();
        }
        self.total = ctx.site_energy_classical(&self.x);
    }

    pub fn recompute(&self, ctx: &EnergyContext) -> f64 {
        ctx.site_energy_classical(&self.x)
    }

    pub fn site_delta(&self, ctx: &EnergyContext, j: usize, value: f64) -> f64 {
        let poly = ctx.site_potential(j);
        poly.eval(value) - poly.eval(self.x[j]) + (value - self.x[j]) * (self.field[j] + ctx.exterior_mean_field(j))
    }

    pub fn accept(&mut self, ctx: &EnergyContext, j: usize, value: f64, delta: f64) {
        let change = value - self.x[j];
        for &(k, v) in ctx.neighbors(j) {
            self.field[k] += v * change;
        }
        self.x[j] = value;
        self.total += delta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::CouplingProfile;
    use crate::loops::{constant_embed, equivalence_class_member, Parity};
    use std::f64::consts::PI;

    fn line(n: usize) -> LatticeBox {
        LatticeBox::cube(1, n).unwrap()
    }

    fn dw() -> PotentialSpec {
        PotentialSpec::new(EvenPolynomial::double_well()).unwrap()
    }

    fn reduced(sites: &[Site], y: f64) -> BTreeMap<Site, f64> {
        sites.iter().map(|s| (s.clone(), y)).collect()
    }

    fn random_config(lattice: &LatticeBox, basis: ModeBasis, salt: f64) -> LoopConfiguration {
        let loops = (0..lattice.len())
            .map(|s| {
                let coeffs = (0..basis.mode_count())
                    .map(|m| ((s * 31 + m * 7) as f64 * 0.61 + salt).sin() / (1.0 + m as f64))
                    .collect();
                TemperatureLoop::from_coeffs(basis, coeffs).unwrap()
            })
            .collect();
        LoopConfiguration::from_loops(lattice.clone(), loops).unwrap()
    }

    #[test]
    fn constant_loops_reduce_to_classical_energy() {
        let lattice = line(3);
        let basis = ModeBasis::new(1.7, 4).unwrap();
        let coupling = CouplingSpec::nearest_neighbor(0.4, BoundaryMode::Fixed).unwrap();
        let collar = lattice.collar(1);
        let y = BTreeMap::from([(collar[0].clone(), 0.7), (collar[1].clone(), -1.3)]);
        let zeta = equivalence_class_member(&y, &ExteriorLoops::new(), basis).unwrap();
        let loop_ctx = EnergyContext::new(lattice.clone(), coupling.clone(), dw(), basis, None, BoundaryData::Loops(zeta)).unwrap();
        let reduced_ctx = EnergyContext::new(lattice.clone(), coupling, dw(), basis, None, BoundaryData::Averages(y)).unwrap();
        let x = [0.3, -0.9, 1.4];
        let config = constant_embed(lattice, &x, basis).unwrap();
        let e = loop_ctx.euclidean_energy(&config).unwrap();
        let i = reduced_ctx.classical_energy(&x).unwrap();
        assert!((e - basis.beta() * i).abs() < 1e-12 * e.abs().max(1.0));
        assert!((loop_ctx.classical_energy(&x).unwrap() - i).abs() < 1e-14);
        assert!((reduced_ctx.euclidean_energy(&config).unwrap() - e).abs() < 1e-12);
    }

    #[test]
    fn zero_configuration_has_zero_energy() {
        let lattice = line(2);
        let basis = ModeBasis::new(2.0, 3).unwrap();
        let coupling = CouplingSpec::nearest_neighbor(1.0, BoundaryMode::Fixed).unwrap();
        let zeta = equivalence_class_member(&reduced(&lattice.collar(1), 2.0), &ExteriorLoops::new(), basis).unwrap();
        let ctx = EnergyContext::new(lattice.clone(), coupling, dw(), basis, None, BoundaryData::Loops(zeta)).unwrap();
        assert_eq!(ctx.euclidean_energy(&LoopConfiguration::zeros(lattice, basis)).unwrap(), 0.0);
        assert_eq!(ctx.classical_energy(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_cosine_mode_energy_is_parseval() {
        let basis = ModeBasis::new(2.0 * PI, 3).unwrap();
        let quadratic = PotentialSpec::new(EvenPolynomial::new(1.0, vec![])).unwrap();
        let lattice = line(1);
        let ctx = EnergyContext::new(lattice.clone(), CouplingSpec::zero(BoundaryMode::Fixed), quadratic, basis, None, BoundaryData::Zero).unwrap();
        let amplitude = 1.7;
        let cos = TemperatureLoop::harmonic(basis, 1, Parity::Cos, amplitude).unwrap();
        let config = LoopConfiguration::from_loops(lattice, vec![cos]).unwrap();
        let e = ctx.euclidean_energy(&config).unwrap();
        assert!((e - amplitude * amplitude).abs() < 1e-12);
    }

    #[test]
    fn classical_energy_single_site_with_neighbours() {
        let lattice = line(1);
        let basis = ModeBasis::new(1.0, 1).unwrap();
        let j0 = 0.35;
        let coupling = CouplingSpec::nearest_neighbor(j0, BoundaryMode::Fixed).unwrap();
        for y in [1.0, -1.0] {
            let ctx = EnergyContext::new(lattice.clone(), coupling.clone(), dw(), basis, None, BoundaryData::Averages(reduced(&lattice.collar(1), y))).unwrap();
            for x in [-1.2f64, 0.0, 0.4] {
                let expected = x.powi(4) - x * x + 2.0 * j0 * x * y;
                assert!((ctx.classical_energy(&[x]).unwrap() - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn missing_boundary_site_is_an_error() {
        let lattice = line(2);
        let basis = ModeBasis::new(1.0, 1).unwrap();
        let coupling = CouplingSpec::nearest_neighbor(1.0, BoundaryMode::Fixed).unwrap();
        let partial = BTreeMap::from([(vec![-1], 1.0)]);
        let err = EnergyContext::new(lattice.clone(), coupling.clone(), dw(), basis, None, BoundaryData::Averages(partial)).unwrap_err();
        assert!(matches!(err, Error::MissingBoundarySite { site } if site == vec![2]));
        // exterior sites out of range are not required
        let far_enough = BTreeMap::from([(vec![-1], 1.0), (vec![2], 0.0)]);
        assert!(EnergyContext::new(lattice, coupling, dw(), basis, None, BoundaryData::Averages(far_enough)).is_ok());
    }

    #[test]
    fn boundary_term_sees_only_time_averages_of_constant_loops() {
        let lattice = line(2);
        let basis = ModeBasis::new(2.5, 4).unwrap();
        let coupling = CouplingSpec::nearest_neighbor(0.8, BoundaryMode::Fixed).unwrap();
        let collar = lattice.collar(1);
        let y = BTreeMap::from([(collar[0].clone(), 0.4), (collar[1].clone(), -0.2)]);
        let plain = equivalence_class_member(&y, &ExteriorLoops::new(), basis).unwrap();
        let wiggles: ExteriorLoops = collar
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), TemperatureLoop::harmonic(basis, i + 1, Parity::Cos, 5.0).unwrap()))
            .collect();
        let wiggly = equivalence_class_member(&y, &wiggles, basis).unwrap();
        let a = EnergyContext::new(lattice.clone(), coupling.clone(), dw(), basis, None, BoundaryData::Loops(plain)).unwrap();
        let b = EnergyContext::new(lattice.clone(), coupling, dw(), basis, None, BoundaryData::Loops(wiggly)).unwrap();
        let config = constant_embed(lattice.clone(), &[0.9, -0.1], basis).unwrap();
        assert_eq!(a.euclidean_energy(&config).unwrap(), b.euclidean_energy(&config).unwrap());
        // a non-constant configuration does feel the oscillation
        let moving = random_config(&lattice, basis, 0.2);
        assert_ne!(a.euclidean_energy(&moving).unwrap(), b.euclidean_energy(&moving).unwrap());
    }

    #[test]
    fn bilinear_terms_match_grid_quadrature() {
        let lattice = line(3);
        let basis = ModeBasis::new(1.3, 5).unwrap();
        let coupling = CouplingSpec::new(2.0, CouplingProfile::Table(BTreeMap::from([(1, 0.5), (4, -0.2)])), BoundaryMode::Fixed).unwrap();
        let collar = lattice.collar(coupling.range_sq());
        let zeta: ExteriorLoops = collar
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let coeffs = (0..basis.mode_count()).map(|m| ((i * 11 + m) as f64).cos()).collect();
                (s.clone(), TemperatureLoop::from_coeffs(basis, coeffs).unwrap())
            })
            .collect();
        let ctx = EnergyContext::new(lattice.clone(), coupling.clone(), dw(), basis, Some(64), BoundaryData::Loops(zeta.clone())).unwrap();
        let config = random_config(&lattice, basis, 0.9);
        let (pair, boundary) = ctx.bilinear_terms(&config);

        let grid = ctx.grid();
        let paths: Vec<Vec<f64>> = config.loops().iter().map(|l| grid.evaluate(l.coeffs())).collect();
        let overlap = |a: &[f64], b: &[f64]| grid.integrate(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>());
        let sites: Vec<Site> = lattice.sites().collect();
        let mut pair_q = 0.0;
        let mut boundary_q = 0.0;
        for (j, sj) in sites.iter().enumerate() {
            for (k, sk) in sites.iter().enumerate() {
                let value = coupling.value_sq(crate::lattice::euclidean_distance_sq(sj, sk));
                pair_q += 0.5 * value * overlap(&paths[j], &paths[k]);
            }
            for (s, zeta_k) in &zeta {
                let value = coupling.value_sq(crate::lattice::euclidean_distance_sq(sj, s));
                boundary_q += value * overlap(&paths[j], &grid.evaluate(zeta_k.coeffs()));
            }
        }
        assert!((pair - pair_q).abs() < 1e-10);
        assert!((boundary - boundary_q).abs() < 1e-10);
    }

    #[test]
    fn onsite_quadrature_is_exact_past_the_degree_threshold() {
        let lattice = line(1);
        let sextic = PotentialSpec::new(EvenPolynomial::new(-0.5, vec![0.3, 0.1])).unwrap();
        for n_max in [1, 3, 6] {
            let basis = ModeBasis::new(1.9, n_max).unwrap();
            let config = random_config(&lattice, basis, 1.1);
            let threshold = 6 * n_max + 1;
            let energy = |grid: usize| {
                EnergyContext::new(lattice.clone(), CouplingSpec::zero(BoundaryMode::Fixed), sextic.clone(), basis, Some(grid), BoundaryData::Zero)
                    .unwrap()
                    .euclidean_energy(&config)
                    .unwrap()
            };
            assert_eq!(default_grid_size(basis, 6), threshold.max(4 * n_max));
            let base = energy(threshold);
            assert!((energy(2 * threshold) - base).abs() < 1e-9);
            assert!((energy(4 * threshold + 3) - base).abs() < 1e-9);
        }
    }

    #[test]
    fn periodic_constant_configuration() {
        let torus = LatticeBox::cube(2, 3).unwrap();
        let basis = ModeBasis::new(1.4, 3).unwrap();
        let coupling = CouplingSpec::new(2f64.sqrt(), CouplingProfile::Table(BTreeMap::from([(1, 0.3), (2, 0.1)])), BoundaryMode::Periodic).unwrap();
        let ctx = EnergyContext::new(torus.clone(), coupling.clone(), dw(), basis, None, BoundaryData::Periodic).unwrap();
        let x = 0.77;
        let config = constant_embed(torus.clone(), &vec![x; torus.len()], basis).unwrap();
        let sites: Vec<Site> = torus.sites().collect();
        let j_sum: f64 = sites
            .iter()
            .flat_map(|j| sites.iter().map(move |k| (j, k)))
            .map(|(j, k)| coupling.value_sq(torus.periodic_distance_sq(j, k).unwrap()))
            .sum();
        let u = EvenPolynomial::double_well().eval(x);
        let expected = basis.beta() * (torus.len() as f64 * u + 0.5 * x * x * j_sum);
        let e = ctx.periodic_euclidean_energy(&config).unwrap();
        assert!((e - expected).abs() < 1e-12);
        let xs = vec![x; torus.len()];
        assert!((basis.beta() * ctx.periodic_classical_energy(&xs).unwrap() - e).abs() < 1e-12);
        assert_eq!(ctx.periodic_euclidean_energy(&LoopConfiguration::zeros(torus, basis)).unwrap(), 0.0);
        assert!(ctx.euclidean_energy(&config).is_err());
    }

    #[test]
    fn periodic_energy_is_shift_invariant() {
        let ring = line(5);
        let basis = ModeBasis::new(2.0, 3).unwrap();
        let coupling = CouplingSpec::new(2.0, CouplingProfile::Table(BTreeMap::from([(1, 0.5), (4, 0.2)])), BoundaryMode::Periodic).unwrap();
        let ctx = EnergyContext::new(ring.clone(), coupling, dw(), basis, None, BoundaryData::Periodic).unwrap();
        let config = random_config(&ring, basis, 0.4);
        let e = ctx.periodic_euclidean_energy(&config).unwrap();
        let x: Vec<f64> = (0..5).map(|i| (i as f64 * 1.3).sin()).collect();
        let i = ctx.periodic_classical_energy(&x).unwrap();
        for shift in 1..5 {
            let loops = (0..5).map(|s| config.site((s + shift) % 5).clone()).collect();
            let shifted = LoopConfiguration::from_loops(ring.clone(), loops).unwrap();
            assert!((ctx.periodic_euclidean_energy(&shifted).unwrap() - e).abs() < 1e-12);
            let xs: Vec<f64> = (0..5).map(|s| x[(s + shift) % 5]).collect();
            assert!((ctx.periodic_classical_energy(&xs).unwrap() - i).abs() < 1e-14);
        }
    }

    #[test]
    fn periodic_context_rejects_overrides_and_mismatched_modes() {
        let ring = line(3);
        let basis = ModeBasis::new(1.0, 1).unwrap();
        let periodic = CouplingSpec::nearest_neighbor(0.2, BoundaryMode::Periodic).unwrap();
        let overrides = BTreeMap::from([(vec![1], EvenPolynomial::new(1.0, vec![1.0]))]);
        let pot = PotentialSpec::build(EvenPolynomial::double_well(), overrides, false).unwrap();
        assert!(EnergyContext::new(ring.clone(), periodic.clone(), pot, basis, None, BoundaryData::Periodic).is_err());
        assert!(EnergyContext::new(ring.clone(), periodic, dw(), basis, None, BoundaryData::Zero).is_err());
        let fixed = CouplingSpec::nearest_neighbor(0.2, BoundaryMode::Fixed).unwrap();
        assert!(EnergyContext::new(ring, fixed, dw(), basis, None, BoundaryData::Periodic).is_err());
    }

    #[test]
    fn incremental_updates_track_full_recomputation() {
        let lattice = LatticeBox::cube(2, 2).unwrap();
        let basis = ModeBasis::new(1.5, 4).unwrap();
        let coupling = CouplingSpec::nearest_neighbor(0.6, BoundaryMode::Fixed).unwrap();
        let zeta = equivalence_class_member(&reduced(&lattice.collar(1), 0.5), &ExteriorLoops::new(), basis).unwrap();
        let ctx = EnergyContext::new(lattice.clone(), coupling, dw(), basis, None, BoundaryData::Loops(zeta)).unwrap();
        let mut cache = LoopEnergyCache::new(&ctx, random_config(&lattice, basis, 0.0)).unwrap();
        let mut values = vec![0.0; ctx.grid().size()];
        for step in 0..40 {
            let j = step % lattice.len();
            if step % 3 == 0 {
                let shift = (step as f64 * 0.7).cos();
                let (delta, onsite) = cache.shift_delta(&ctx, j, shift);
                cache.accept_shift(&ctx, j, shift, onsite, delta);
            } else {
                let coeffs: Vec<f64> = (0..basis.mode_count()).map(|m| ((step * 5 + m) as f64).sin() * 0.8).collect();
                ctx.grid().evaluate_into(&coeffs, &mut values);
                let (delta, onsite) = cache.site_delta(&ctx, j, &coeffs, &values);
                cache.accept_site(&ctx, j, &coeffs, &values, onsite, delta);
            }
            let fresh = cache.recompute(&ctx);
            assert!((cache.total() - fresh).abs() < 1e-10, "step {step}");
        }

        let mut classical = ClassicalEnergyCache::new(&ctx, vec![0.1, -0.4, 0.8, 0.0]).unwrap();
        for step in 0..40 {
            let j = step % 4;
            let value = (step as f64 * 0.37).sin() * 1.5;
            let delta = classical.site_delta(&ctx, j, value);
            classical.accept(&ctx, j, value, delta);
            assert!((classical.total() - classical.recompute(&ctx)).abs() < 1e-12);
        }
    }
}
