//! Finite boxes in `Z^d`, radial finite-range couplings, even polynomial
//! on-site potentials and the model-validity checks built on them.
//!
//! Sites are addressed either by integer coordinates or by a dense index in
//! `0..box.len()`; the index is row-major with the last axis running fastest.
//! Every distance comparison is done on exact squared integer distances.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Integer coordinates of a lattice site.
pub type Site = Vec<i64>;

/// A finite box `{k : lower_l <= k_l <= upper_l}` in `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LatticeBox {
    lower: Vec<i64>,
    upper: Vec<i64>,
    strides: Vec<usize>,
    len: usize,
}

impl LatticeBox {
    pub fn new(lower: Vec<i64>, upper: Vec<i64>) -> Result<LatticeBox> {
        if lower.is_empty() {
            return Err(Error::InvalidBox("dimension must be at least 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::InvalidBox(format!(
                "lower bound has {} axes, upper bound has {}",
                lower.len(),
                upper.len()
            )));
        }
        let mut extents = Vec::with_capacity(lower.len());
        for (axis, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if hi < lo {
                return Err(Error::InvalidBox(format!("axis {axis}: upper {hi} < lower {lo}")));
            }
            extents.push((hi - lo + 1) as usize);
        }
        let mut strides = vec![1; extents.len()];
        for axis in (0..extents.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * extents[axis + 1];
        }
        let len = extents.iter().product();
        Ok(LatticeBox { lower, upper, strides, len })
    }

    /// The box `{0, ..., side-1}^d`.
    pub fn cube(dimension: usize, side: usize) -> Result<LatticeBox> {
        if side == 0 {
            return Err(Error::InvalidBox("side must be positive".into()));
        }
        LatticeBox::new(vec![0; dimension], vec![side as i64 - 1; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    /// Number of sites `|Λ|`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lower(&self) -> &[i64] {
        &self.lower
    }

    pub fn upper(&self) -> &[i64] {
        &self.upper
    }

    /// Number of sites along `axis`.
    pub fn extent(&self, axis: usize) -> i64 {
        self.upper[axis] - self.lower[axis] + 1
    }

    pub fn contains(&self, site: &[i64]) -> bool {
        site.len() == self.dimension()
            && site
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&k, (&lo, &hi))| lo <= k && k <= hi)
    }

    pub fn index_of(&self, site: &[i64]) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        Some(
            site.iter()
                .zip(&self.lower)
                .zip(&self.strides)
                .map(|((&k, &lo), &stride)| (k - lo) as usize * stride)
                .sum(),
        )
    }

    pub fn coord(&self, index: usize) -> Site {
        assert!(index < self.len, "site index {index} out of range for box of {} sites", self.len);
        let mut rest = index;
        self.strides
            .iter()
            .zip(&self.lower)
            .map(|(&stride, &lo)| {
                let q = rest / stride;
                rest %= stride;
                lo + q as i64
            })
            .collect()
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len).map(move |i| self.coord(i))
    }

    fn require(&self, site: &[i64]) -> Result<()> {
        if self.contains(site) {
            Ok(())
        } else {
            Err(Error::SiteOutsideBox { site: site.to_vec() })
        }
    }

    /// Squared torus distance: per axis `min(|j_l - k_l|, L_l - |j_l - k_l|)`,
    /// then summed in squares.
    pub fn periodic_distance_sq(&self, j: &[i64], k: &[i64]) -> Result<u64> {
        self.require(j)?;
        self.require(k)?;
        Ok((0..self.dimension())
            .map(|axis| {
                let direct = (j[axis] - k[axis]).unsigned_abs();
                let wrapped = self.extent(axis) as u64 - direct;
                let step = direct.min(wrapped);
                step * step
            })
            .sum())
    }

    pub fn periodic_distance(&self, j: &[i64], k: &[i64]) -> Result<f64> {
        Ok((self.periodic_distance_sq(j, k)? as f64).sqrt())
    }

    /// Exterior sites within Euclidean distance `sqrt(range_sq)` of some
    /// site of the box, in lexicographic order.
    pub fn collar(&self, range_sq: u64) -> Vec<Site> {
        let reach = (range_sq as f64).sqrt().floor() as i64;
        if reach == 0 {
            return Vec::new();
        }
        let lo: Vec<i64> = self.lower.iter().map(|&v| v - reach).collect();
        let hi: Vec<i64> = self.upper.iter().map(|&v| v + reach).collect();
        let hull = LatticeBox::new(lo, hi).expect("hull of a valid box is valid");
        hull.sites()
            .filter(|site| !self.contains(site))
            .filter(|site| self.distance_sq_to_box(site) <= range_sq)
            .collect()
    }

    fn distance_sq_to_box(&self, site: &[i64]) -> u64 {
        site.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&k, (&lo, &hi))| {
                let gap = if k < lo {
                    lo - k
                } else if k > hi {
                    k - hi
                } else {
                    0
                } as u64;
                gap * gap
            })
            .sum()
    }
}

pub fn euclidean_distance_sq(j: &[i64], k: &[i64]) -> u64 {
    j.iter()
        .zip(k)
        .map(|(&a, &b)| {
            let d = (a - b).unsigned_abs();
            d * d
        })
        .sum()
}

/// Boundary treatment the coupling is used with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Free box, the exterior enters through a boundary condition.
    Fixed,
    /// Torus metric on the box, no exterior.
    Periodic,
}

/// Radial profile `J(|j-k|)` keyed by squared distance.
#[derive(Clone, Debug, PartialEq)]
pub enum CouplingProfile {
    Zero,
    NearestNeighbor(f64),
    Table(BTreeMap<u64, f64>),
}

/// A radial, finite-range pair coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingSpec {
    range: f64,
    profile: CouplingProfile,
    mode: BoundaryMode,
}

impl CouplingSpec {
    pub fn new(range: f64, profile: CouplingProfile, mode: BoundaryMode) -> Result<CouplingSpec> {
        if !(range.is_finite() && range >= 0.0) {
            return Err(Error::InvalidCoupling(format!("range must be finite and nonnegative, got {range}")));
        }
        match &profile {
            CouplingProfile::Zero => {}
            CouplingProfile::NearestNeighbor(j0) => {
                if !j0.is_finite() {
                    return Err(Error::InvalidCoupling("nearest-neighbor strength must be finite".into()));
                }
                if range < 1.0 && *j0 != 0.0 {
                    return Err(Error::InvalidCoupling("nearest-neighbor coupling needs range >= 1".into()));
                }
            }
            CouplingProfile::Table(table) => {
                for (&dist_sq, &value) in table {
                    if !value.is_finite() {
                        return Err(Error::InvalidCoupling(format!("J at squared distance {dist_sq} is not finite")));
                    }
                    if dist_sq == 0 && value != 0.0 {
                        return Err(Error::InvalidCoupling(
                            "self-coupling J(0) must be zero; absorb it into the quadratic coefficient a".into(),
                        ));
                    }
                    if (dist_sq as f64) > range * range && value != 0.0 {
                        return Err(Error::InvalidCoupling(format!(
                            "entry at squared distance {dist_sq} lies beyond range {range}"
                        )));
                    }
                }
            }
        }
        Ok(CouplingSpec { range, profile, mode })
    }

    pub fn zero(mode: BoundaryMode) -> CouplingSpec {
        CouplingSpec { range: 0.0, profile: CouplingProfile::Zero, mode }
    }

    pub fn nearest_neighbor(j0: f64, mode: BoundaryMode) -> Result<CouplingSpec> {
        CouplingSpec::new(1.0, CouplingProfile::NearestNeighbor(j0), mode)
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    /// Largest integer squared distance inside the range.
    pub fn range_sq(&self) -> u64 {
        (self.range * self.range + 1e-9).floor() as u64
    }

    pub fn profile(&self) -> &CouplingProfile {
        &self.profile
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    /// `J` at the given squared distance; zero beyond the range and at 0.
    pub fn value_sq(&self, dist_sq: u64) -> f64 {
        if dist_sq == 0 || dist_sq > self.range_sq() {
            return 0.0;
        }
        match &self.profile {
            CouplingProfile::Zero => 0.0,
            CouplingProfile::NearestNeighbor(j0) => {
                if dist_sq == 1 {
                    *j0
                } else {
                    0.0
                }
            }
            CouplingProfile::Table(table) => table.get(&dist_sq).copied().unwrap_or(0.0),
        }
    }

    /// Nonzero `(squared distance, J)` pairs of the profile.
    fn shells(&self) -> Vec<(u64, f64)> {
        match &self.profile {
            CouplingProfile::Zero => Vec::new(),
            CouplingProfile::NearestNeighbor(j0) => vec![(1, *j0)],
            CouplingProfile::Table(table) => table
                .iter()
                .filter(|(&d, &v)| d > 0 && d <= self.range_sq() && v != 0.0)
                .map(|(&d, &v)| (d, v))
                .collect(),
        }
    }

    /// `J >= 0` everywhere and nonincreasing in distance.
    pub fn is_nonnegative_nonincreasing(&self) -> bool {
        let mut last = f64::INFINITY;
        for dist_sq in 1..=self.range_sq() {
            let value = self.value_sq(dist_sq);
            if value < 0.0 || value > last {
                return false;
            }
            last = value;
        }
        true
    }

    pub fn is_zero(&self) -> bool {
        self.shells().is_empty()
    }
}

/// `c = sup_j Σ_k |J_jk|` on `Z^d`. For a radial profile this is one shell
/// sum over the offsets `0 < |k| <= r`.
pub fn coupling_norm(spec: &CouplingSpec, dimension: usize) -> f64 {
    let range_sq = spec.range_sq();
    let reach = (range_sq as f64).sqrt().floor() as i64;
    if reach == 0 || spec.is_zero() {
        return 0.0;
    }
    let side = (2 * reach + 1) as usize;
    let offsets = LatticeBox::new(vec![-reach; dimension], vec![reach; dimension])
        .expect("offset box is valid");
    debug_assert_eq!(offsets.len(), side.pow(dimension as u32));
    offsets
        .sites()
        .map(|k| spec.value_sq(euclidean_distance_sq(&k, &vec![0; dimension])).abs())
        .sum()
}

/// `sup_j Σ_{k∈Λ} |J(|j-k|_Λ)|` for the torus metric of `lattice`.
pub fn periodic_coupling_norm(spec: &CouplingSpec, lattice: &LatticeBox) -> f64 {
    let sites: Vec<Site> = lattice.sites().collect();
    sites
        .iter()
        .map(|j| {
            sites
                .iter()
                .map(|k| {
                    let d = lattice.periodic_distance_sq(j, k).expect("sites of the box");
                    spec.value_sq(d).abs()
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// `U(x) = a x^2 + Σ_{l=2}^{p} b_l x^{2l}`; `higher[0]` holds `b_2`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvenPolynomial {
    pub a: f64,
    pub higher: Vec<f64>,
}

impl EvenPolynomial {
    pub fn new(a: f64, higher: Vec<f64>) -> EvenPolynomial {
        EvenPolynomial { a, higher }
    }

    pub fn zero() -> EvenPolynomial {
        EvenPolynomial { a: 0.0, higher: Vec::new() }
    }

    /// The double well `x^4 - x^2`.
    pub fn double_well() -> EvenPolynomial {
        EvenPolynomial { a: -1.0, higher: vec![1.0] }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let x2 = x * x;
        let mut acc = 0.0;
        for &b in self.higher.iter().rev() {
            acc = (acc + b) * x2;
        }
        (acc + self.a) * x2
    }

    /// Highest `l` with a nonzero coefficient (`1` for the quadratic term,
    /// `0` for the zero polynomial).
    pub fn leading_power(&self) -> usize {
        match self.higher.iter().rposition(|&b| b != 0.0) {
            Some(i) => i + 2,
            None if self.a != 0.0 => 1,
            None => 0,
        }
    }

    /// Polynomial degree in `x`.
    pub fn degree(&self) -> usize {
        2 * self.leading_power()
    }

    fn leading_coefficient(&self) -> f64 {
        match self.leading_power() {
            0 => 0.0,
            1 => self.a,
            l => self.higher[l - 2],
        }
    }

    /// `b_p > 0`, `b_l >= 0` and `p >= 2`.
    pub fn is_phi4_family(&self) -> bool {
        self.leading_power() >= 2 && self.higher.iter().all(|&b| b >= 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.higher.iter().all(|b| b.is_finite())
    }
}

impl fmt::Display for EvenPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x^2", self.a)?;
        for (i, b) in self.higher.iter().enumerate() {
            write!(f, " + {}x^{}", b, 2 * (i + 2))?;
        }
        Ok(())
    }
}

/// On-site potentials: a common polynomial with optional per-site overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialSpec {
    base: EvenPolynomial,
    overrides: BTreeMap<Site, EvenPolynomial>,
    phi4: bool,
}

impl PotentialSpec {
    pub fn new(base: EvenPolynomial) -> Result<PotentialSpec> {
        PotentialSpec::build(base, BTreeMap::new(), false)
    }

    /// A potential declared to belong to the `a x^2 + Σ b_l x^{2l}` family
    /// with `b_p > 0`, `b_l >= 0`.
    pub fn phi4(base: EvenPolynomial) -> Result<PotentialSpec> {
        PotentialSpec::build(base, BTreeMap::new(), true)
    }

    pub fn build(
        base: EvenPolynomial,
        overrides: BTreeMap<Site, EvenPolynomial>,
        phi4: bool,
    ) -> Result<PotentialSpec> {
        for poly in std::iter::once(&base).chain(overrides.values()) {
            if !poly.is_finite() {
                return Err(Error::InvalidPotential(format!("non-finite coefficient in {poly}")));
            }
            if phi4 && !poly.is_phi4_family() {
                return Err(Error::InvalidPotential(format!(
                    "{poly} is flagged as Phi4 but needs b_p > 0 and b_l >= 0"
                )));
            }
        }
        Ok(PotentialSpec { base, overrides, phi4 })
    }

    pub fn base(&self) -> &EvenPolynomial {
        &self.base
    }

    pub fn overrides(&self) -> &BTreeMap<Site, EvenPolynomial> {
        &self.overrides
    }

    pub fn has_overrides(&self) -> bool {
        !self.overrides.is_empty()
    }

    pub fn is_phi4_flagged(&self) -> bool {
        self.phi4
    }

    pub fn for_site(&self, site: &[i64]) -> &EvenPolynomial {
        self.overrides.get(site).unwrap_or(&self.base)
    }

    /// Largest polynomial degree across all sites.
    pub fn max_degree(&self) -> usize {
        std::iter::once(&self.base)
            .chain(self.overrides.values())
            .map(EvenPolynomial::degree)
            .max()
            .unwrap_or(0)
    }

    fn polynomials(&self) -> impl Iterator<Item = &EvenPolynomial> {
        std::iter::once(&self.base).chain(self.overrides.values())
    }
}

/// Outcome of the lower-bound check `U(x) >= ½ c̃ x² + b`, `c̃ > max{c-1, 0}`.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub stable: bool,
    /// `max{c - 1, 0}`; the witness must exceed it strictly.
    pub threshold: f64,
    /// A valid `c̃` (or, for purely quadratic potentials, the supremum `2a`).
    pub witness: Option<f64>,
    pub detail: String,
}

fn polynomial_stability(poly: &EvenPolynomial, threshold: f64) -> (bool, Option<f64>, String) {
    match poly.leading_power() {
        0 => (false, None, format!("U vanishes identically, no c̃ > {threshold} exists")),
        1 => {
            let sup = 2.0 * poly.a;
            if sup > threshold {
                (true, Some(sup), format!("quadratic U = {poly}: any c̃ in ({threshold}, {sup}] works with b = 0"))
            } else {
                (false, Some(sup), format!("quadratic U = {poly} only bounds c̃ <= {sup}, need > {threshold}"))
            }
        }
        l => {
            if poly.leading_coefficient() > 0.0 {
                let witness = threshold + 1.0;
                (true, Some(witness), format!("x^{} growth of {poly} dominates ½·{witness}·x^2", 2 * l))
            } else {
                (false, None, format!("{poly} is unbounded below"))
            }
        }
    }
}

/// Symbolic stability check comparing leading powers of each site polynomial.
pub fn validate_stability(potential: &PotentialSpec, c: f64) -> StabilityReport {
    let threshold = (c - 1.0).max(0.0);
    let mut stable = true;
    let mut witness: Option<f64> = None;
    let mut details = Vec::new();
    for poly in potential.polynomials() {
        let (ok, w, detail) = polynomial_stability(poly, threshold);
        stable &= ok;
        witness = match (witness, w) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        details.push(detail);
    }
    StabilityReport { stable, threshold, witness: if stable { witness } else { None }, detail: details.join("; ") }
}
