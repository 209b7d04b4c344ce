//! Gaussian reference measures on loops and on site values.
//!
//! The oscillator-bridge measure at mass `m` is diagonal in the Fourier
//! basis with eigenvalues `λ_q = (m q² + 1)⁻¹`. `Mass::Infinite` is the
//! quasiclassical limit, which keeps only the constant mode (`λ_0 = 1`).
//! The classical single-site measure is `N(0, 1/β)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::loops::{ModeBasis, TemperatureLoop};

/// Reduced particle mass, possibly infinite.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub enum Mass {
    Finite(f64),
    Infinite,
}

impl Mass {
    pub fn finite(m: f64) -> Result<Mass> {
        if m.is_finite() && m > 0.0 {
            Ok(Mass::Finite(m))
        } else if m == f64::INFINITY {
            Ok(Mass::Infinite)
        } else {
            Err(Error::InvalidParameters(format!("mass must be positive, got {m}")))
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Mass::Infinite)
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Mass::Finite(m) => *m,
            Mass::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Mass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mass::Finite(m) => write!(f, "{m}"),
            Mass::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Mass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mass> {
        match s.trim() {
            "inf" | "infinity" | "Inf" => Ok(Mass::Infinite),
            other => {
                let m: f64 = other
                    .parse()
                    .map_err(|_| Error::InvalidParameters(format!("cannot parse mass {other:?}")))?;
                Mass::finite(m)
            }
        }
    }
}

/// `λ_q = (m q² + 1)⁻¹` over a mode basis.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSpectrum {
    basis: ModeBasis,
    mass: Mass,
    eigenvalues: Vec<f64>,
}

impl CovarianceSpectrum {
    pub fn new(basis: ModeBasis, mass: Mass) -> CovarianceSpectrum {
        let eigenvalues = (0..basis.mode_count())
            .map(|i| eigenvalue(mass, basis.frequency(i)))
            .collect();
        CovarianceSpectrum { basis, mass, eigenvalues }
    }

    pub fn basis(&self) -> ModeBasis {
        self.basis
    }

    pub fn mass(&self) -> Mass {
        self.mass
    }

    pub fn eigenvalue(&self, mode: usize) -> f64 {
        self.eigenvalues[mode]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Sum of the oscillatory eigenvalues kept by the truncation.
    pub fn oscillatory_trace(&self) -> f64 {
        self.eigenvalues[1..].iter().rev().sum()
    }
}

pub fn eigenvalue(mass: Mass, q: f64) -> f64 {
    match mass {
        Mass::Finite(m) => 1.0 / (m * q * q + 1.0),
        Mass::Infinite => {
            if q == 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seed splitting. The seed of a stream is a function of the
/// root seed and the stream's path of counters (e.g. `[task, chain]`) only,
/// so streams do not depend on how tasks are scheduled.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |state, &counter| splitmix64(state ^ splitmix64(counter ^ GOLDEN.rotate_left(17))))
}

pub fn stream_rng(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

/// Exact draws from `γ_β^(m)` in coefficient space.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    spectrum: CovarianceSpectrum,
    std_devs: Vec<f64>,
    rng: ChaCha8Rng,
}

impl GaussianSampler {
    pub fn new(spectrum: CovarianceSpectrum, seed: u64) -> GaussianSampler {
        GaussianSampler::with_rng(spectrum, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(spectrum: CovarianceSpectrum, rng: ChaCha8Rng) -> GaussianSampler {
        let std_devs = spectrum.eigenvalues().iter().map(|l| l.sqrt()).collect();
        GaussianSampler { spectrum, std_devs, rng }
    }

    pub fn spectrum(&self) -> &CovarianceSpectrum {
        &self.spectrum
    }

    pub fn fill(&mut self, coeffs: &mut [f64]) {
        for (c, &s) in coeffs.iter_mut().zip(&self.std_devs) {
            // no draw for modes the quasiclassical measure pins to zero
            *c = if s == 0.0 { 0.0 } else { s * self.rng.sample::<f64, _>(StandardNormal) };
        }
    }

    pub fn sample_loop(&mut self) -> TemperatureLoop {
        let mut coeffs = vec![0.0; self.std_devs.len()];
        self.fill(&mut coeffs);
        TemperatureLoop::from_coeffs(self.spectrum.basis(), coeffs).expect("sampler matches its basis")
    }
}

/// Draws from `χ_β = N(0, 1/β)`.
#[derive(Clone, Debug)]
pub struct ClassicalSiteSampler {
    beta: f64,
    rng: ChaCha8Rng,
}

impl ClassicalSiteSampler {
    pub fn new(beta: f64, seed: u64) -> Result<ClassicalSiteSampler> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParameters(format!("β must be positive, got {beta}")));
        }
        Ok(ClassicalSiteSampler { beta, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn draw(&mut self) -> f64 {
        self.rng.sample::<f64, _>(StandardNormal) / self.beta.sqrt()
    }
}

/// `exp(-½ Σ_q λ_q φ_q²)`, the characteristic function of the prior at `φ`.
pub fn characteristic_function(spectrum: &CovarianceSpectrum, phi: &TemperatureLoop) -> f64 {
    debug_assert_eq!(spectrum.basis(), phi.basis());
    let quadratic: f64 = spectrum
        .eigenvalues()
        .iter()
        .zip(phi.coeffs())
        .map(|(l, p)| l * p * p)
        .sum();
    (-0.5 * quadratic).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TraceMode {
    /// Sum over harmonics `1..=n_max`.
    Truncated(usize),
    /// The full series in closed form.
    Exact,
}

/// `trace(S(m) - S^qc) = |Λ| Σ_{q≠0} (m q² + 1)⁻¹`.
pub fn trace_distance(mass: Mass, beta: f64, sites: usize, mode: TraceMode) -> f64 {
    match mode {
        TraceMode::Truncated(n_max) => trace_distance_partial(mass, beta, sites, n_max),
        TraceMode::Exact => trace_distance_closed_form(mass, beta, sites),
    }
}

/// `|Λ| · 2 Σ_{n=1}^{n_max} (m (2πn/β)² + 1)⁻¹`, summed from the small end.
pub fn trace_distance_partial(mass: Mass, beta: f64, sites: usize, n_max: usize) -> f64 {
    let Mass::Finite(m) = mass else { return 0.0 };
    let a = m * (2.0 * PI / beta).powi(2);
    let per_site: f64 = (1..=n_max).rev().map(|n| 2.0 / (a * (n * n) as f64 + 1.0)).sum();
    sites as f64 * per_site
}

/// `|Λ| (x coth x - 1)` with `x = β/(2√m)`.
pub fn trace_distance_closed_form(mass: Mass, beta: f64, sites: usize) -> f64 {
    let Mass::Finite(m) = mass else { return 0.0 };
    let x = beta / (2.0 * m.sqrt());
    let per_site = if x < 1e-3 {
        let x2 = x * x;
        x2 / 3.0 - x2 * x2 / 45.0 + 2.0 * x2 * x2 * x2 / 945.0
    } else {
        x / x.tanh() - 1.0
    };
    sites as f64 * per_site
}

/// Midpoint-integral estimate of the harmonics beyond `n_max`:
/// `∫_{n_max+½}^∞ 2/(a t² + 1) dt`.
pub fn trace_tail_estimate(mass: Mass, beta: f64, sites: usize, n_max: usize) -> f64 {
    let Mass::Finite(m) = mass else { return 0.0 };
    let root_a = m.sqrt() * 2.0 * PI / beta;
    let start = n_max as f64 + 0.5;
    sites as f64 * 2.0 / root_a * (PI / 2.0 - (root_a * start).atan())
}

/// Truncated sum plus the integral tail estimate.
pub fn trace_distance_series(mass: Mass, beta: f64, sites: usize, n_max: usize) -> f64 {
    trace_distance_partial(mass, beta, sites, n_max) + trace_tail_estimate(mass, beta, sites, n_max)
}

/// `|Λ| β²/(12 m)`, from `Σ 1/(m q²)` and `Σ 1/n² = π²/6`.
pub fn trace_distance_bound(mass: Mass, beta: f64, sites: usize) -> f64 {
    match mass {
        Mass::Finite(m) => sites as f64 * beta * beta / (12.0 * m),
        Mass::Infinite => 0.0,
    }
}

/// Per-site prior variance dropped by truncating at `n_max`.
pub fn tail_mass(mass: Mass, beta: f64, n_max: usize) -> f64 {
    (trace_distance_closed_form(mass, beta, 1) - trace_distance_partial(mass, beta, 1, n_max)).max(0.0)
}
