//! Temperature loops stored as truncated real Fourier series.
//!
//! A loop on `[0, β]` is `ω(τ) = Σ_q c_q e_q(τ)` over the orthonormal basis
//! `e_0 = 1/√β`, `e_q = √(2/β) cos(qτ)` for `q > 0` and
//! `e_q = √(2/β) sin(|q|τ)` for `q < 0`, with `q = 2πn/β`, `1 <= n <= n_max`.
//! Coefficient `0` is the constant mode, `2n-1` the cosine and `2n` the sine
//! of harmonic `n`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::lattice::{LatticeBox, Site};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Constant,
    Cos,
    Sin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub index: usize,
    pub harmonic: usize,
    pub parity: Parity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeBasis {
    beta: f64,
    n_max: usize,
}

impl ModeBasis {
    pub fn new(beta: f64, n_max: usize) -> Result<ModeBasis> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidBasis(format!("β must be positive and finite, got {beta}")));
        }
        if n_max == 0 {
            return Err(Error::InvalidBasis("n_max must be at least 1".into()));
        }
        Ok(ModeBasis { beta, n_max })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn mode_count(&self) -> usize {
        2 * self.n_max + 1
    }

    pub fn mode(&self, index: usize) -> Mode {
        assert!(index < self.mode_count(), "mode {index} outside basis of {} modes", self.mode_count());
        if index == 0 {
            Mode { index, harmonic: 0, parity: Parity::Constant }
        } else {
            let harmonic = index.div_ceil(2);
            let parity = if index % 2 == 1 { Parity::Cos } else { Parity::Sin };
            Mode { index, harmonic, parity }
        }
    }

    pub fn modes(&self) -> impl Iterator<Item = Mode> + '_ {
        (0..self.mode_count()).map(move |i| self.mode(i))
    }

    pub fn index_of(&self, harmonic: usize, parity: Parity) -> Option<usize> {
        match (harmonic, parity) {
            (0, Parity::Constant) => Some(0),
            (0, _) | (_, Parity::Constant) => None,
            (n, _) if n > self.n_max => None,
            (n, Parity::Cos) => Some(2 * n - 1),
            (n, Parity::Sin) => Some(2 * n),
        }
    }

    /// Signed frequency `q`: positive for cosines, negative for sines.
    pub fn frequency(&self, index: usize) -> f64 {
        let mode = self.mode(index);
        let q = 2.0 * PI * mode.harmonic as f64 / self.beta;
        match mode.parity {
            Parity::Constant => 0.0,
            Parity::Cos => q,
            Parity::Sin => -q,
        }
    }

    /// `e_q(τ)`.
    pub fn basis_value(&self, index: usize, tau: f64) -> f64 {
        let mode = self.mode(index);
        let norm = (2.0 / self.beta).sqrt();
        let phase = 2.0 * PI * mode.harmonic as f64 * tau / self.beta;
        match mode.parity {
            Parity::Constant => 1.0 / self.beta.sqrt(),
            Parity::Cos => norm * phase.cos(),
            Parity::Sin => norm * phase.sin(),
        }
    }

    pub fn min_grid(&self) -> usize {
        4 * self.n_max
    }
}

/// Basis functions tabulated on the uniform grid `τ_i = iβ/N`.
#[derive(Clone, Debug)]
pub struct PathGrid {
    basis: ModeBasis,
    size: usize,
    // mode-major: table[mode * size + i]
    table: Vec<f64>,
}

impl PathGrid {
    pub fn new(basis: ModeBasis, size: usize) -> Result<PathGrid> {
        let required = basis.min_grid();
        if size < required {
            return Err(Error::GridTooCoarse { grid: size, n_max: basis.n_max(), required });
        }
        let mut table = Vec::with_capacity(basis.mode_count() * size);
        for mode in 0..basis.mode_count() {
            for i in 0..size {
                table.push(basis.basis_value(mode, basis.beta() * i as f64 / size as f64));
            }
        }
        Ok(PathGrid { basis, size, table })
    }

    pub fn basis(&self) -> ModeBasis {
        self.basis
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Trapezoid weight `β/N` of every node.
    pub fn weight(&self) -> f64 {
        self.basis.beta() / self.size as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).map(move |i| self.basis.beta() * i as f64 / self.size as f64)
    }

    /// `out[i] = ω(τ_i)` for the coefficient vector `coeffs`.
    pub fn evaluate_into(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.basis.mode_count());
        debug_assert_eq!(out.len(), self.size);
        let constant = coeffs[0] / self.basis.beta().sqrt();
        out.iter_mut().for_each(|v| *v = constant);
        for (mode, &c) in coeffs.iter().enumerate().skip(1) {
            if c == 0.0 {
                continue;
            }
            let row = &self.table[mode * self.size..(mode + 1) * self.size];
            for (v, &e) in out.iter_mut().zip(row) {
                *v += c * e;
            }
        }
    }

    pub fn evaluate(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        self.evaluate_into(coeffs, &mut out);
        out
    }

    /// Trapezoid rule `∫_0^β g(τ) dτ` from samples on this grid.
    pub fn integrate(&self, samples: &[f64]) -> f64 {
        self.weight() * samples.iter().sum::<f64>()
    }
}

/// One periodic path `ω ∈ C_β`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureLoop {
    basis: ModeBasis,
    coeffs: Vec<f64>,
}

impl TemperatureLoop {
    pub fn zero(basis: ModeBasis) -> TemperatureLoop {
        TemperatureLoop { basis, coeffs: vec![0.0; basis.mode_count()] }
    }

    /// The constant path `ω ≡ value`.
    pub fn constant(basis: ModeBasis, value: f64) -> TemperatureLoop {
        let mut lp = TemperatureLoop::zero(basis);
        lp.coeffs[0] = value * basis.beta().sqrt();
        lp
    }

    pub fn from_coeffs(basis: ModeBasis, coeffs: Vec<f64>) -> Result<TemperatureLoop> {
        if coeffs.len() != basis.mode_count() {
            return Err(Error::CoefficientLength { got: coeffs.len(), expected: basis.mode_count() });
        }
        Ok(TemperatureLoop { basis, coeffs })
    }

    /// A single harmonic `amplitude · e_q`.
    pub fn harmonic(basis: ModeBasis, harmonic: usize, parity: Parity, amplitude: f64) -> Result<TemperatureLoop> {
        let index = basis
            .index_of(harmonic, parity)
            .ok_or_else(|| Error::InvalidBasis(format!("no mode ({harmonic}, {parity:?}) with n_max = {}", basis.n_max())))?;
        let mut lp = TemperatureLoop::zero(basis);
        lp.coeffs[index] = amplitude;
        Ok(lp)
    }

    pub fn basis(&self) -> ModeBasis {
        self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// `ω(τ_i)` on the uniform grid of `grid_size` points.
    pub fn evaluate(&self, grid_size: usize) -> Result<Vec<f64>> {
        let grid = PathGrid::new(self.basis, grid_size)?;
        Ok(grid.evaluate(&self.coeffs))
    }

    /// `ω(τ)` at an arbitrary time.
    pub fn value_at(&self, tau: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| c * self.basis.basis_value(i, tau))
            .sum()
    }

    /// `β⁻¹ ∫_0^β ω dτ = c_0/√β`.
    pub fn time_average(&self) -> f64 {
        self.coeffs[0] / self.basis.beta().sqrt()
    }

    /// Supremum norm estimated on the evaluation grid.
    pub fn sup_norm(&self, grid_size: usize) -> Result<f64> {
        Ok(self.evaluate(grid_size)?.into_iter().fold(0.0, |m, v| m.max(v.abs())))
    }

    /// `(ω, ξ)_β` by Parseval.
    pub fn inner(&self, other: &TemperatureLoop) -> f64 {
        debug_assert_eq!(self.basis, other.basis);
        dot(&self.coeffs, &other.coeffs)
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs[1..].iter().all(|&c| c == 0.0)
    }

    pub fn add(&self, other: &TemperatureLoop) -> TemperatureLoop {
        debug_assert_eq!(self.basis, other.basis);
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        TemperatureLoop { basis: self.basis, coeffs }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exterior loops `ζ` keyed by site.
pub type ExteriorLoops = BTreeMap<Site, TemperatureLoop>;

/// Exterior data in full loop form or reduced to site time averages.
#[derive(Clone, Debug, PartialEq)]
pub enum Exterior {
    Loops(ExteriorLoops),
    Averages(BTreeMap<Site, f64>),
}

impl Exterior {
    pub fn time_average(&self, site: &[i64]) -> Option<f64> {
        match self {
            Exterior::Loops(loops) => loops.get(site).map(TemperatureLoop::time_average),
            Exterior::Averages(values) => values.get(site).copied(),
        }
    }

    pub fn loop_at(&self, site: &[i64]) -> Option<&TemperatureLoop> {
        match self {
            Exterior::Loops(loops) => loops.get(site),
            Exterior::Averages(_) => None,
        }
    }

    pub fn reduce(&self) -> BTreeMap<Site, f64> {
        match self {
            Exterior::Loops(loops) => loops.iter().map(|(s, l)| (s.clone(), l.time_average())).collect(),
            Exterior::Averages(values) => values.clone(),
        }
    }
}

/// A configuration `ω_Λ` over a box, optionally paired with exterior data.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopConfiguration {
    lattice: LatticeBox,
    basis: ModeBasis,
    loops: Vec<TemperatureLoop>,
    exterior: Option<Exterior>,
}

impl LoopConfiguration {
    pub fn zeros(lattice: LatticeBox, basis: ModeBasis) -> LoopConfiguration {
        let loops = vec![TemperatureLoop::zero(basis); lattice.len()];
        LoopConfiguration { lattice, basis, loops, exterior: None }
    }

    pub fn from_loops(lattice: LatticeBox, loops: Vec<TemperatureLoop>) -> Result<LoopConfiguration> {
        if loops.len() != lattice.len() {
            return Err(Error::InvalidBox(format!("{} loops for a box of {} sites", loops.len(), lattice.len())));
        }
        let basis = loops
            .first()
            .map(TemperatureLoop::basis)
            .ok_or_else(|| Error::InvalidBox("empty configuration".into()))?;
        if loops.iter().any(|l| l.basis != basis) {
            return Err(Error::InvalidBasis("all loops of a configuration must share one basis".into()));
        }
        Ok(LoopConfiguration { lattice, basis, loops, exterior: None })
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn basis(&self) -> ModeBasis {
        self.basis
    }

    pub fn loops(&self) -> &[TemperatureLoop] {
        &self.loops
    }

    pub fn site(&self, index: usize) -> &TemperatureLoop {
        &self.loops[index]
    }

    pub fn site_mut(&mut self, index: usize) -> &mut TemperatureLoop {
        &mut self.loops[index]
    }

    pub fn loop_at(&self, site: &[i64]) -> Option<&TemperatureLoop> {
        self.lattice.index_of(site).map(|i| &self.loops[i])
    }

    pub fn exterior(&self) -> Option<&Exterior> {
        self.exterior.as_ref()
    }

    /// `ω_Λ × ζ_{Λ^c}`.
    pub fn with_exterior(mut self, exterior: Exterior) -> LoopConfiguration {
        self.exterior = Some(exterior);
        self
    }

    pub fn time_averages(&self) -> Vec<f64> {
        self.loops.iter().map(TemperatureLoop::time_average).collect()
    }

    /// `ω_Λ × 0_{Λ'∖Λ}` for a box `Λ' ⊇ Λ`.
    pub fn embed_into(&self, larger: &LatticeBox) -> Result<LoopConfiguration> {
        let mut out = LoopConfiguration::zeros(larger.clone(), self.basis);
        for (i, site) in self.lattice.sites().enumerate() {
            let j = larger
                .index_of(&site)
                .ok_or_else(|| Error::SiteOutsideBox { site: site.clone() })?;
            out.loops[j] = self.loops[i].clone();
        }
        Ok(out)
    }

    /// `(ω_Λ)_{Λ'}`: sites of `Λ ∩ Λ'` are copied, the rest of `Λ'` is zero.
    pub fn project_onto(&self, target: &LatticeBox) -> LoopConfiguration {
        let mut out = LoopConfiguration::zeros(target.clone(), self.basis);
        for (j, site) in target.sites().enumerate() {
            if let Some(i) = self.lattice.index_of(&site) {
                out.loops[j] = self.loops[i].clone();
            }
        }
        out
    }

    /// Flat coefficient dump with columns `site,mode,coefficient`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["site", "mode", "coefficient"])?;
        for (site, lp) in self.loops.iter().enumerate() {
            for (mode, c) in lp.coeffs.iter().enumerate() {
                csv.write_record([site.to_string(), mode.to_string(), format!("{c:e}")])?;
            }
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, lattice: LatticeBox, basis: ModeBasis) -> Result<LoopConfiguration> {
        let mut config = LoopConfiguration::zeros(lattice, basis);
        let mut seen = vec![false; config.lattice.len() * basis.mode_count()];
        let mut csv = csv::Reader::from_reader(reader);
        for record in csv.records() {
            let record = record?;
            let parse = |i: usize| -> Result<&str> {
                record.get(i).ok_or_else(|| Error::Checkpoint(format!("short row {record:?}")))
            };
            let site: usize = parse(0)?.parse().map_err(|e| Error::Checkpoint(format!("site: {e}")))?;
            let mode: usize = parse(1)?.parse().map_err(|e| Error::Checkpoint(format!("mode: {e}")))?;
            let value: f64 = parse(2)?.parse().map_err(|e| Error::Checkpoint(format!("coefficient: {e}")))?;
            if site >= config.lattice.len() || mode >= basis.mode_count() {
                return Err(Error::Checkpoint(format!("entry ({site}, {mode}) outside the configuration")));
            }
            config.loops[site].coeffs[mode] = value;
            seen[site * basis.mode_count() + mode] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::Checkpoint("coefficient dump is incomplete".into()));
        }
        Ok(config)
    }
}

/// The configuration whose site `k` carries the constant loop `x_k`.
pub fn constant_embed(lattice: LatticeBox, x: &[f64], basis: ModeBasis) -> Result<LoopConfiguration> {
    if x.len() != lattice.len() {
        return Err(Error::InvalidBox(format!("{} values for a box of {} sites", x.len(), lattice.len())));
    }
    let loops = x.iter().map(|&v| TemperatureLoop::constant(basis, v)).collect();
    Ok(LoopConfiguration { lattice, basis, loops, exterior: None })
}

/// A member of the class `Υ_β(y)`: constant loops `y_k` plus zero-mean
/// perturbations. Sites without a perturbation stay constant.
pub fn equivalence_class_member(
    y: &BTreeMap<Site, f64>,
    perturbations: &ExteriorLoops,
    basis: ModeBasis,
) -> Result<ExteriorLoops> {
    let mut out = ExteriorLoops::new();
    for (site, &value) in y {
        out.insert(site.clone(), TemperatureLoop::constant(basis, value));
    }
    for (site, perturbation) in perturbations {
        if perturbation.basis != basis {
            return Err(Error::InvalidBasis("perturbation uses a different basis".into()));
        }
        if perturbation.coeffs[0] != 0.0 {
            return Err(Error::NonzeroMean { site: site.clone(), value: perturbation.coeffs[0] });
        }
        let base = out
            .get(site)
            .ok_or_else(|| Error::MissingBoundarySite { site: site.clone() })?;
        let member = base.add(perturbation);
        out.insert(site.clone(), member);
    }
    Ok(out)
}
