//! Experiment harness behind the `loopgibbs` binary: configuration files,
//! run manifests and the subcommands.
//!
//! Every command writes `manifest.json` into its output directory before any
//! result file. Result CSVs carry no timestamps or host data, so a rerun with
//! the same configuration and seed reproduces them byte for byte regardless
//! of the worker count.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{BoundaryData, EnergyContext};
use crate::error::{Error, Result};
use crate::gaussian::{
    derive_seed, trace_distance_bound, trace_distance_closed_form, trace_distance_partial, trace_distance_series, Mass,
};
use crate::gibbs::{expectations, ChainState, CylinderFunction, GibbsTarget, McParams, ProposalScope, SampleView};
use crate::lattice::{BoundaryMode, CouplingProfile, CouplingSpec, EvenPolynomial, LatticeBox, PotentialSpec, Site};
use crate::loops::{equivalence_class_member, ExteriorLoops, ModeBasis, Parity, TemperatureLoop};
use crate::observables::{
    classical_point, convergence_verdict, gaps, mass_sweep, monotonicity_check, panel, write_sweep_csv, Gap,
    ObservableSpec, OrderParameterP, OrderParameterQ, SweepResult, SweepRow,
};
use crate::oracle::{oracle_consistency, oracle_expectations, OracleValue, QuadratureOptions};

/// Standard errors allowed before a difference counts as real.
pub const SIGMA: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
    #[serde(default)]
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    /// Test observables; the default is the tanh / Gaussian / clipped-square
    /// panel at the first site of the box.
    #[serde(default)]
    pub observables: Vec<ObservableSpec>,
    #[serde(default)]
    pub oracle: OracleConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lower: Vec<i64>,
    pub upper: Vec<i64>,
    pub beta: f64,
    /// Torus metric on the box instead of a fixed exterior.
    #[serde(default)]
    pub periodic: bool,
    #[serde(default)]
    pub coupling: CouplingConfig,
    pub potential: PotentialConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default)]
    pub nearest_neighbor: Option<f64>,
    #[serde(default)]
    pub range: Option<f64>,
    /// `[squared distance, J]` pairs.
    #[serde(default)]
    pub table: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    /// Coefficient of `x²`.
    pub a: f64,
    /// Coefficients of `x⁴, x⁶, …`.
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub phi4: bool,
    #[serde(default)]
    pub overrides: Vec<PotentialOverride>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialOverride {
    pub site: Site,
    pub a: f64,
    #[serde(default)]
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default)]
    pub grid_size: Option<usize>,
}

fn default_n_max() -> usize {
    32
}

impl Default for DiscretizationConfig {
    fn default() -> DiscretizationConfig {
        DiscretizationConfig { n_max: default_n_max(), grid_size: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeConfig {
    Site,
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    pub batches: usize,
    pub scope: ScopeConfig,
    pub check_every: usize,
}

impl Default for SamplerConfig {
    fn default() -> SamplerConfig {
        let p = McParams::default();
        SamplerConfig {
            chains: p.chains,
            burn_in: p.burn_in,
            samples: p.samples,
            thin: p.thin,
            target_acceptance: p.target_acceptance,
            batches: p.batches,
            scope: ScopeConfig::Site,
            check_every: p.check_every,
        }
    }
}

impl SamplerConfig {
    pub fn params(&self) -> McParams {
        McParams {
            burn_in: self.burn_in,
            samples: self.samples,
            thin: self.thin,
            chains: self.chains,
            target_acceptance: self.target_acceptance,
            batches: self.batches,
            scope: match self.scope {
                ScopeConfig::Site => ProposalScope::PerSite,
                ScopeConfig::Global => ProposalScope::Global,
            },
            check_every: self.check_every,
        }
    }
}

/// A mass as written in a config: a number or `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MassEntry {
    Number(f64),
    Text(String),
}

impl MassEntry {
    pub fn mass(&self) -> Result<Mass> {
        match self {
            MassEntry::Number(m) => Mass::finite(*m),
            MassEntry::Text(s) => s.parse(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub masses: Vec<MassEntry>,
    /// Append the quasiclassical point `m = inf`.
    pub include_infinity: bool,
}

impl Default for SweepConfig {
    fn default() -> SweepConfig {
        SweepConfig {
            masses: [1.0, 10.0, 100.0, 1000.0].into_iter().map(MassEntry::Number).collect(),
            include_infinity: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryConfig {
    /// Constant loop value on every collar site.
    pub y: f64,
    /// Per-site replacements of `y`.
    pub values: Vec<BoundaryValue>,
    /// Each entry adds one more boundary condition in the class of `y`.
    pub perturbations: Vec<PerturbationConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryValue {
    pub site: Site,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParityConfig {
    Cos,
    Sin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub name: String,
    pub harmonic: usize,
    pub parity: ParityConfig,
    /// Coefficient of the harmonic in the loop basis.
    pub amplitude: f64,
    /// Collar sites that carry the harmonic; all of them when absent.
    #[serde(default)]
    pub sites: Option<Vec<Site>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub zero_nodes: usize,
    pub oscillatory_nodes: usize,
}

impl Default for OracleConfig {
    fn default() -> OracleConfig {
        let o = QuadratureOptions::default();
        OracleConfig { zero_nodes: o.zero_nodes, oscillatory_nodes: o.oscillatory_nodes }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_toml_str(&text)
    }
}

/// A named boundary condition of the box.
#[derive(Clone, Debug)]
pub struct NamedBoundary {
    pub name: String,
    pub ctx: Arc<EnergyContext>,
}

/// A validated configuration with every model object built.
#[derive(Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub lattice: LatticeBox,
    pub basis: ModeBasis,
    pub masses: Vec<Mass>,
    pub params: McParams,
    pub observables: Vec<Arc<dyn CylinderFunction>>,
    /// The constant boundary `y` first, then one entry per perturbation.
    /// A single `periodic` entry on a torus.
    pub boundaries: Vec<NamedBoundary>,
    /// Classical context: reduced boundary `y`, or the torus.
    pub classical: Arc<EnergyContext>,
    pub quadrature: QuadratureOptions,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Experiment> {
        let model = &config.model;
        if !(model.beta.is_finite() && model.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", model.beta)));
        }
        let lattice = LatticeBox::new(model.lower.clone(), model.upper.clone())?;
        let mode = if model.periodic { BoundaryMode::Periodic } else { BoundaryMode::Fixed };
        let coupling = build_coupling(&model.coupling, mode)?;
        let potential = build_potential(&model.potential)?;
        let basis = ModeBasis::new(model.beta, config.discretization.n_max)?;
        let params = config.sampler.params();
        params.validate()?;

        let mut masses = config.sweep.masses.iter().map(MassEntry::mass).collect::<Result<Vec<_>>>()?;
        if config.sweep.include_infinity && !masses.contains(&Mass::Infinite) {
            masses.push(Mass::Infinite);
        }
        if masses.is_empty() {
            return Err(Error::Config("the mass grid is empty".into()));
        }
        if !masses.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("masses must be strictly ascending with inf last".into()));
        }

        let observables: Vec<Arc<dyn CylinderFunction>> = if config.observables.is_empty() {
            panel(&lattice.coord(0))
        } else {
            config.observables.iter().map(ObservableSpec::build).collect()
        };

        let grid = config.discretization.grid_size;
        let make = |boundary: BoundaryData| -> Result<Arc<EnergyContext>> {
            Ok(Arc::new(EnergyContext::new(
                lattice.clone(),
                coupling.clone(),
                potential.clone(),
                basis,
                grid,
                boundary,
            )?))
        };

        let bc = &config.boundary;
        let (boundaries, classical) = if model.periodic {
            if !bc.perturbations.is_empty() || !bc.values.is_empty() || bc.y != 0.0 {
                return Err(Error::Config("a periodic model takes no boundary block".into()));
            }
            let ctx = make(BoundaryData::Periodic)?;
            (vec![NamedBoundary { name: "periodic".into(), ctx: Arc::clone(&ctx) }], ctx)
        } else {
            let collar = lattice.collar(coupling.range_sq());
            let mut y: BTreeMap<Site, f64> = collar.iter().map(|s| (s.clone(), bc.y)).collect();
            for value in &bc.values {
                match y.get_mut(&value.site) {
                    Some(slot) => *slot = value.y,
                    None => return Err(Error::Config(format!("boundary site {:?} is not in the collar", value.site))),
                }
            }
            let base = equivalence_class_member(&y, &ExteriorLoops::new(), basis)?;
            let mut boundaries = vec![NamedBoundary { name: "constant".into(), ctx: make(BoundaryData::Loops(base))? }];
            for p in &bc.perturbations {
                if p.harmonic == 0 {
                    return Err(Error::Config(format!("perturbation {} needs harmonic >= 1", p.name)));
                }
                if boundaries.iter().any(|b| b.name == p.name) {
                    return Err(Error::Config(format!("duplicate boundary name {}", p.name)));
                }
                let parity = match p.parity {
                    ParityConfig::Cos => Parity::Cos,
                    ParityConfig::Sin => Parity::Sin,
                };
                let wave = TemperatureLoop::harmonic(basis, p.harmonic, parity, p.amplitude)?;
                let sites = p.sites.clone().unwrap_or_else(|| collar.clone());
                let perturbation: ExteriorLoops = sites.into_iter().map(|s| (s, wave.clone())).collect();
                let member = equivalence_class_member(&y, &perturbation, basis)?;
                boundaries.push(NamedBoundary { name: p.name.clone(), ctx: make(BoundaryData::Loops(member))? });
            }
            let classical = make(BoundaryData::Averages(y))?;
            (boundaries, classical)
        };
        // refuse unstable models before any run
        GibbsTarget::classical(Arc::clone(&classical))?;

        let quadrature = QuadratureOptions {
            zero_nodes: config.oracle.zero_nodes,
            oscillatory_nodes: config.oracle.oscillatory_nodes,
            ..QuadratureOptions::default()
        };
        Ok(Experiment { config, lattice, basis, masses, params, observables, boundaries, classical, quadrature })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn model_id(&self) -> &str {
        &self.config.model_id
    }

    pub fn is_periodic(&self) -> bool {
        self.config.model.periodic
    }

    pub fn finite_masses(&self) -> Vec<Mass> {
        self.masses.iter().copied().filter(|m| !m.is_infinite()).collect()
    }
}

fn build_coupling(c: &CouplingConfig, mode: BoundaryMode) -> Result<CouplingSpec> {
    match (c.nearest_neighbor, c.table.is_empty()) {
        (Some(_), false) => Err(Error::Config("give either nearest_neighbor or table, not both".into())),
        (Some(j0), true) => CouplingSpec::new(c.range.unwrap_or(1.0), CouplingProfile::NearestNeighbor(j0), mode),
        (None, false) => {
            let table: BTreeMap<u64, f64> = c.table.iter().copied().collect();
            let farthest = table.keys().max().copied().unwrap_or(0) as f64;
            CouplingSpec::new(c.range.unwrap_or(farthest.sqrt()), CouplingProfile::Table(table), mode)
        }
        (None, true) => Ok(CouplingSpec::zero(mode)),
    }
}

fn build_potential(p: &PotentialConfig) -> Result<PotentialSpec> {
    let overrides = p
        .overrides
        .iter()
        .map(|o| (o.site.clone(), EvenPolynomial::new(o.a, o.b.clone())))
        .collect();
    PotentialSpec::build(EvenPolynomial::new(p.a, p.b.clone()), overrides, p.phi4)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSeed {
    pub task: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostInfo {
    pub hostname: String,
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

impl HostInfo {
    pub fn current() -> HostInfo {
        let hostname = std::env::var("HOSTNAME")
            .ok()
            .or_else(|| fs::read_to_string("/etc/hostname").ok())
            .map(|h| h.trim().to_string())
            .filter(|h| !h.is_empty())
            .unwrap_or_else(|| "unknown".into());
        HostInfo {
            hostname,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Provenance of one command invocation; the only output that carries
/// timestamps and host data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub arguments: Vec<String>,
    pub config: Option<serde_json::Value>,
    pub seed: u64,
    pub tasks: Vec<TaskSeed>,
    pub workers: usize,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub host: HostInfo,
    pub outputs: Vec<String>,
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    fn write(&self, dir: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(file, self).map_err(|e| Error::Io(e.into()))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Parser, Debug)]
#[command(name = "loopgibbs", version, about = "Classical-limit experiments for quantum anharmonic lattice models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Fill the wall_seconds column of estimate CSVs.
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Trace distance between the loop prior and its quasiclassical limit.
    TraceDistance(TraceArgs),
    /// Mass sweep of panel observables against the classical reference.
    ClassicalLimit(ConfigArgs),
    /// Order parameter sweep on a torus with the monotonicity check.
    OrderParameter(ConfigArgs),
    /// MCMC estimates against quadrature on small instances.
    OracleCompare(ConfigArgs),
    /// Dump raw chain coefficients and checkpoints.
    Sample(SampleArgs),
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    #[arg(long, default_value_t = std::f64::consts::TAU)]
    pub beta: f64,
    /// Comma-separated masses.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["1".to_string(), "10".into(), "100".into(), "10000".into()])]
    pub masses: Vec<String>,
    /// Number of sites in the box.
    #[arg(long, default_value_t = 1)]
    pub sites: usize,
    /// Harmonics kept in the partial sum.
    #[arg(long, default_value_t = 100_000)]
    pub n_max: usize,
    /// Report the full series in closed form instead of a partial sum.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Mass of the target, or `inf`.
    #[arg(long)]
    pub mass: String,
    /// Sample the classical measure instead of loops.
    #[arg(long)]
    pub classical: bool,
    /// Overrides the sampler block.
    #[arg(long)]
    pub samples: Option<usize>,
}

/// Result of a command: whether every check passed, and the report lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub lines: Vec<String>,
}

impl Outcome {
    fn new() -> Outcome {
        Outcome { passed: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.passed &= ok;
        self.lines.push(format!("{} {line}", if ok { "PASS" } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.lines.push(line);
    }
}

/// Exit code of an error: 2 for usage and configuration problems, 1 for
/// failures during a run.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Csv(_) | Error::Checkpoint(_) => 1,
        _ => 2,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    let arguments = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, arguments) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if outcome.passed {
                0
            } else {
                1
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

/// Runs a parsed command inside a worker pool of the requested size.
pub fn run(cli: &Cli, arguments: Vec<String>) -> Result<Outcome> {
    let workers = match cli.workers {
        Some(0) => return Err(Error::Config("--workers must be positive".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| dispatch(cli, arguments, workers))
}

fn dispatch(cli: &Cli, arguments: Vec<String>, workers: usize) -> Result<Outcome> {
    match &cli.command {
        Command::TraceDistance(args) => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let mut session = Session::start("trace-distance", &out, None, cli.seed.unwrap_or(0), arguments, workers)?;
            let outcome = cmd_trace_distance(args, &mut session)?;
            session.finish()?;
            Ok(outcome)
        }
        Command::ClassicalLimit(args) | Command::OrderParameter(args) | Command::OracleCompare(args) => {
            let (exp, out) = load_experiment(&args.config, cli)?;
            let name = match &cli.command {
                Command::ClassicalLimit(_) => "classical-limit",
                Command::OrderParameter(_) => "order-parameter",
                _ => "oracle-compare",
            };
            if name == "order-parameter" && !exp.is_periodic() {
                return Err(Error::Config("the order parameter needs model.periodic = true".into()));
            }
            let mut session = Session::start(name, &out, Some(&exp.config), exp.seed(), arguments, workers)?;
            session.timings = cli.timings;
            let outcome = match &cli.command {
                Command::ClassicalLimit(_) => cmd_classical_limit(&exp, &mut session)?,
                Command::OrderParameter(_) => cmd_order_parameter(&exp, &mut session)?,
                _ => cmd_oracle_compare(&exp, &mut session)?,
            };
            session.finish()?;
            Ok(outcome)
        }
        Command::Sample(args) => {
            let (mut exp, out) = load_experiment(&args.config, cli)?;
            if let Some(samples) = args.samples {
                exp.params.samples = samples;
                exp.params.validate()?;
            }
            let mass: Mass = args.mass.parse()?;
            let mut session = Session::start("sample", &out, Some(&exp.config), exp.seed(), arguments, workers)?;
            let outcome = cmd_sample(&exp, mass, args.classical, &mut session)?;
            session.finish()?;
            Ok(outcome)
        }
    }
}

fn load_experiment(path: &Path, cli: &Cli) -> Result<(Experiment, PathBuf)> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.clone().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((Experiment::new(config)?, out))
}

/// Output directory plus the manifest that describes it.
pub struct Session {
    dir: PathBuf,
    manifest: RunManifest,
    start: Instant,
    timings: bool,
}

impl Session {
    pub fn start(
        command: &str,
        dir: &Path,
        config: Option<&ExperimentConfig>,
        seed: u64,
        arguments: Vec<String>,
        workers: usize,
    ) -> Result<Session> {
        fs::create_dir_all(dir)?;
        let manifest = RunManifest {
            command: command.into(),
            artifact_version: env!("CARGO_PKG_VERSION").into(),
            arguments,
            config: config.map(|c| serde_json::to_value(c).map_err(|e| Error::Config(e.to_string()))).transpose()?,
            seed,
            tasks: Vec::new(),
            workers,
            started_unix: unix_now(),
            finished_unix: None,
            host: HostInfo::current(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        };
        manifest.write(dir)?;
        Ok(Session { dir: dir.to_path_buf(), manifest, start: Instant::now(), timings: false })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn task(&mut self, task: String, seed: u64) -> u64 {
        self.manifest.tasks.push(TaskSeed { task, seed });
        seed
    }

    fn time(&mut self, label: &str, seconds: f64) {
        self.manifest.timings.insert(label.into(), seconds);
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.manifest.outputs.push(name.into());
        // keep the manifest current in case the run dies midway
        self.manifest.write(&self.dir)?;
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn write_rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut out = csv::Writer::from_writer(self.create(name)?);
        for row in rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    fn write_estimates(&mut self, name: &str, results: &[SweepResult]) -> Result<()> {
        let rows: Vec<SweepRow> = results.iter().map(|r| r.row(self.timings)).collect();
        write_sweep_csv(self.create(name)?, &rows)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut out = self.create(name)?;
        serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Io(e.into()))?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.finished_unix = Some(unix_now());
        self.manifest.timings.insert("total".into(), self.start.elapsed().as_secs_f64());
        self.manifest.write(&self.dir)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub beta: f64,
    pub m: String,
    pub sites: usize,
    /// Blank for the closed form.
    pub n_max: Option<usize>,
    pub partial_sum: f64,
    pub value: f64,
    pub closed_form: f64,
    pub bound: f64,
    pub within_bound: bool,
}

/// Trace distance, its closed form and the `|Λ|β²/(12m)` bound per mass.
/// With `n_max` the value is the partial sum plus its integral tail.
pub fn trace_table(beta: f64, masses: &[Mass], sites: usize, n_max: Option<usize>) -> Vec<TraceRow> {
    masses
        .iter()
        .map(|&mass| {
            let closed_form = trace_distance_closed_form(mass, beta, sites);
            let (partial_sum, value) = match n_max {
                Some(n) => (trace_distance_partial(mass, beta, sites, n), trace_distance_series(mass, beta, sites, n)),
                None => (closed_form, closed_form),
            };
            let bound = trace_distance_bound(mass, beta, sites);
            TraceRow {
                beta,
                m: mass.to_string(),
                sites,
                n_max,
                partial_sum,
                value,
                closed_form,
                bound,
                within_bound: value <= bound * (1.0 + 1e-12),
            }
        })
        .collect()
}

pub fn cmd_trace_distance(args: &TraceArgs, session: &mut Session) -> Result<Outcome> {
    if !(args.beta.is_finite() && args.beta > 0.0) || args.sites == 0 {
        return Err(Error::Config("beta and sites must be positive".into()));
    }
    let masses = args.masses.iter().map(|m| m.parse()).collect::<Result<Vec<Mass>>>()?;
    let rows = trace_table(args.beta, &masses, args.sites, (!args.exact).then_some(args.n_max));
    session.write_rows("trace_distance.csv", &rows)?;
    let mut outcome = Outcome::new();
    for row in &rows {
        outcome.check(
            row.within_bound,
            format!(
                "m={} trace distance {:.10} closed form {:.10} bound {:.10}",
                row.m, row.value, row.closed_form, row.bound
            ),
        );
    }
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub boundary: String,
    pub observable: String,
    pub m: String,
    pub estimate: f64,
    pub stderr: f64,
    pub reference: f64,
    pub reference_stderr: f64,
    pub delta: f64,
    pub delta_stderr: f64,
    /// Gap to the constant boundary at the same mass.
    pub class_gap: Option<f64>,
    pub class_gap_stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

/// Passes if the gaps shrink by `ratio` without growing, or never leave
/// the noise.
pub fn limit_verdict(gaps: &[Gap], ratio: f64) -> (bool, String) {
    let noise = gaps.iter().all(|g| g.delta <= SIGMA * g.stderr);
    let verdict = convergence_verdict(gaps, SIGMA, ratio);
    let detail = format!(
        "nonincreasing={} shrink_ratio={:.3} noise_level={}",
        verdict.nonincreasing, verdict.shrink_ratio, noise
    );
    (verdict.passed() || noise, detail)
}

/// `last <= first / factor` within `SIGMA` combined standard errors.
pub fn shrinks_by(first: &Gap, last: &Gap, factor: f64) -> bool {
    last.delta - first.delta / factor <= SIGMA * last.stderr.hypot(first.stderr / factor)
}

/// Refined quadrature value, with the refinement shift as its uncertainty
/// when the self-check fails (e.g. for clipped observables).
pub fn quadrature_reference(v: &OracleValue) -> (f64, f64) {
    match v.refined {
        Some(refined) if !v.self_check_passed() => (refined, (refined - v.value).abs()),
        _ => (v.value, 0.0),
    }
}

pub fn cmd_classical_limit(exp: &Experiment, session: &mut Session) -> Result<Outcome> {
    let mut outcome = Outcome::new();
    let mut results = Vec::new();
    let mut sweeps = Vec::new();
    for (b, boundary) in exp.boundaries.iter().enumerate() {
        let seed = session.task(format!("sweep/{}", boundary.name), derive_seed(exp.seed(), &[1, b as u64]));
        let start = Instant::now();
        let sweep = mass_sweep(
            &boundary.ctx,
            &format!("{}/{}", exp.model_id(), boundary.name),
            &exp.masses,
            &exp.observables,
            &exp.params,
            seed,
        )?;
        session.time(&format!("sweep/{}", boundary.name), start.elapsed().as_secs_f64());
        results.extend(sweep.iter().cloned());
        sweeps.push(sweep);
    }

    // reference: quasiclassical kernel of the constant boundary by quadrature,
    // or the classical kernel by MCMC when the box is too large
    let start = Instant::now();
    let base = &exp.boundaries[0];
    let fs: Vec<&dyn CylinderFunction> = exp.observables.iter().map(|f| f.as_ref()).collect();
    let qc = GibbsTarget::loops(Arc::clone(&base.ctx), Mass::Infinite)?;
    let reference: Vec<(f64, f64)> = match (exp.is_periodic(), oracle_expectations(&qc, &fs, &exp.quadrature)) {
        (false, Ok(values)) => {
            let mut reference = Vec::new();
            for (f, v) in exp.observables.iter().zip(&values) {
                let (value, uncertainty) = quadrature_reference(v);
                outcome.note(format!(
                    "reference {} = {value:.10} ± {uncertainty:.1e} (quadrature, {} points)",
                    f.name(),
                    v.points
                ));
                reference.push((value, uncertainty));
            }
            reference
        }
        _ => {
            let seed = session.task("classical".into(), derive_seed(exp.seed(), &[2]));
            let point = classical_point(
                &exp.classical,
                &format!("{}/classical", exp.model_id()),
                &exp.observables,
                &exp.params,
                seed,
            )?;
            for r in &point {
                outcome.note(format!("reference {} = {:.6} ± {:.6} (classical MCMC)", r.observable, r.estimate.estimate, r.estimate.stderr));
            }
            let values = point.iter().map(|r| (r.estimate.estimate, r.estimate.stderr)).collect();
            results.extend(point);
            values
        }
    };
    session.time("reference", start.elapsed().as_secs_f64());

    let mut rows = Vec::new();
    for (b, sweep) in sweeps.iter().enumerate() {
        let boundary = &exp.boundaries[b].name;
        for (k, f) in exp.observables.iter().enumerate() {
            let name = f.name();
            let series: Vec<SweepResult> = sweep.iter().filter(|r| r.observable == name).cloned().collect();
            for r in series.iter().filter(|r| !r.is_ok()) {
                outcome.check(false, format!("{boundary} {name} m={}: {}", r.mass, r.error.clone().unwrap_or_default()));
            }
            let (reference, reference_se) = reference[k];
            let finite: Vec<SweepResult> = series.iter().filter(|r| !r.mass.is_infinite()).cloned().collect();
            let delta = gaps(&series, reference, reference_se);
            let base_series: Vec<&SweepResult> = sweeps[0].iter().filter(|r| r.observable == name).collect();
            let mut class_gaps = Vec::new();
            for (r, d) in series.iter().filter(|r| r.is_ok()).zip(&delta) {
                let partner = (b > 0).then(|| base_series.iter().find(|p| p.mass == r.mass && p.is_ok())).flatten();
                let class_gap = partner.map(|p| Gap {
                    mass: r.mass,
                    delta: (r.estimate.estimate - p.estimate.estimate).abs(),
                    stderr: r.estimate.combined_stderr(&p.estimate),
                });
                rows.push(LimitRow {
                    boundary: boundary.clone(),
                    observable: name.clone(),
                    m: r.mass.to_string(),
                    estimate: r.estimate.estimate,
                    stderr: r.estimate.stderr,
                    reference,
                    reference_stderr: reference_se,
                    delta: d.delta,
                    delta_stderr: d.stderr,
                    class_gap: class_gap.as_ref().map(|g| g.delta),
                    class_gap_stderr: class_gap.as_ref().map(|g| g.stderr),
                });
                if let Some(g) = class_gap {
                    if !g.mass.is_infinite() {
                        class_gaps.push(g);
                    }
                }
            }
            let finite_gaps = gaps(&finite, reference, reference_se);
            let (ok, detail) = limit_verdict(&finite_gaps, 5.0);
            outcome.check(ok, format!("limit {boundary} {name}: {detail}"));
            if let (Some(first), Some(last)) = (class_gaps.first(), class_gaps.last()) {
                let noise = class_gaps.iter().all(|g| g.delta <= SIGMA * g.stderr);
                let ok = noise || (class_gaps.len() >= 2 && shrinks_by(first, last, 2.0));
                outcome.check(
                    ok,
                    format!(
                        "class gap {boundary} {name}: {:.5} at m={} -> {:.5} at m={} (se {:.5})",
                        first.delta, first.mass, last.delta, last.mass, last.stderr
                    ),
                );
            }
        }
    }
    session.write_estimates("estimates.csv", &results)?;
    session.write_rows("limit.csv", &rows)?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderParameterSummary {
    pub q: f64,
    pub q_stderr: f64,
    pub monotonicity: String,
    pub verdicts: Vec<Verdict>,
}

pub fn cmd_order_parameter(exp: &Experiment, session: &mut Session) -> Result<Outcome> {
    if !exp.is_periodic() {
        return Err(Error::Config("the order parameter needs model.periodic = true".into()));
    }
    let mut outcome = Outcome::new();
    let ctx = &exp.boundaries[0].ctx;
    let observables: Vec<Arc<dyn CylinderFunction>> =
        vec![Arc::new(OrderParameterP { normalized: false }), Arc::new(OrderParameterP { normalized: true })];
    let seed = session.task("sweep".into(), derive_seed(exp.seed(), &[1]));
    let start = Instant::now();
    let sweep = mass_sweep(ctx, exp.model_id(), &exp.masses, &observables, &exp.params, seed)?;
    session.time("sweep", start.elapsed().as_secs_f64());

    let seed = session.task("classical".into(), derive_seed(exp.seed(), &[2]));
    let start = Instant::now();
    let q = classical_point(&exp.classical, exp.model_id(), &[Arc::new(OrderParameterQ)], &exp.params, seed)?.remove(0);
    session.time("classical", start.elapsed().as_secs_f64());

    let mut verdicts = Vec::new();
    for r in sweep.iter().filter(|r| !r.is_ok()) {
        verdicts.push(Verdict {
            check: format!("{} m={}", r.observable, r.mass),
            passed: false,
            detail: r.error.clone().unwrap_or_default(),
        });
    }
    let raw: Vec<SweepResult> =
        sweep.iter().filter(|r| r.observable == "P" && !r.mass.is_infinite()).cloned().collect();
    let monotonicity = match monotonicity_check(ctx, &raw, SIGMA) {
        Ok(report) => {
            let detail = report
                .violations
                .iter()
                .map(|v| format!("{}->{} drop {:.4} > {:.4}", v.from, v.to, v.drop, v.allowed))
                .collect::<Vec<_>>()
                .join("; ");
            verdicts.push(Verdict {
                check: "monotonicity of P".into(),
                passed: report.passed(),
                detail: format!("{} pairs {detail}", report.pairs_checked),
            });
            if report.passed() { "passed" } else { "failed" }.to_string()
        }
        Err(Error::HypothesesNotMet(reason)) => {
            outcome.note(format!("REFUSED monotonicity check: {reason}"));
            format!("refused: {reason}")
        }
        Err(err) => return Err(err),
    };
    let normalized: Vec<&SweepResult> = sweep.iter().filter(|r| r.observable == "P_norm" && r.is_ok()).collect();
    for r in &normalized {
        let z = r.estimate.z_score(&q.estimate);
        let line = format!("P_norm(m={}) = {:.6} ± {:.6} vs Q = {:.6} ± {:.6}, z = {z:.2}", r.mass, r.estimate.estimate, r.estimate.stderr, q.estimate.estimate, q.estimate.stderr);
        if r.mass.is_infinite() {
            verdicts.push(Verdict { check: "quasiclassical P_norm vs Q".into(), passed: z <= SIGMA, detail: line });
        } else {
            outcome.note(line);
        }
    }
    for v in &verdicts {
        outcome.check(v.passed, format!("{}: {}", v.check, v.detail));
    }
    let mut results = sweep;
    results.push(q.clone());
    session.write_estimates("estimates.csv", &results)?;
    session.write_json(
        "summary.json",
        &OrderParameterSummary { q: q.estimate.estimate, q_stderr: q.estimate.stderr, monotonicity, verdicts },
    )?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub boundary: String,
    pub kind: String,
    pub m: String,
    pub observable: String,
    pub mcmc: f64,
    pub stderr: f64,
    pub oracle: f64,
    pub z: f64,
    pub self_check: bool,
}

pub fn cmd_oracle_compare(exp: &Experiment, session: &mut Session) -> Result<Outcome> {
    let mut outcome = Outcome::new();
    let mut targets: Vec<(String, GibbsTarget)> = Vec::new();
    for boundary in &exp.boundaries {
        for &mass in &exp.masses {
            targets.push((boundary.name.clone(), GibbsTarget::loops(Arc::clone(&boundary.ctx), mass)?));
        }
    }
    targets.push(("reduced".into(), GibbsTarget::classical(Arc::clone(&exp.classical))?));

    let fs: Vec<&dyn CylinderFunction> = exp.observables.iter().map(|f| f.as_ref()).collect();
    let mut rows = Vec::new();
    for (i, (boundary, target)) in targets.into_iter().enumerate() {
        let label = format!("{boundary} {} m={}", target.kind().label(), target.mass().unwrap_or(Mass::Infinite));
        let oracle = match oracle_expectations(&target, &fs, &exp.quadrature) {
            Ok(values) => values,
            Err(Error::Intractable(reason)) | Err(Error::InvalidTarget(reason)) => {
                outcome.note(format!("skipped {label}: {reason}"));
                continue;
            }
            Err(err) => return Err(err),
        };
        let seed = session.task(format!("mcmc/{i}"), derive_seed(exp.seed(), &[3, i as u64]));
        let target = Arc::new(target);
        let run = expectations(&target, &fs, &exp.params, seed)?;
        for ((f, est), value) in exp.observables.iter().zip(&run.estimates).zip(&oracle) {
            let (exact, uncertainty) = quadrature_reference(value);
            let z = (est.estimate - exact).abs() / est.stderr.hypot(uncertainty);
            let self_check = value.self_check_passed();
            outcome.check(
                z <= SIGMA,
                format!("{label} {}: mcmc {:.6} ± {:.6} oracle {exact:.8} z = {z:.2}", f.name(), est.estimate, est.stderr),
            );
            rows.push(OracleRow {
                boundary: boundary.clone(),
                kind: target.kind().label().into(),
                m: target.mass().unwrap_or(Mass::Infinite).to_string(),
                observable: f.name(),
                mcmc: est.estimate,
                stderr: est.stderr,
                oracle: exact,
                z,
                self_check,
            });
        }
    }

    // nested kernel consistency on a two-site box, first site as the subbox
    if exp.lattice.len() == 2 && !exp.is_periodic() {
        let first = exp.lattice.coord(0);
        let inner = LatticeBox::new(first.clone(), first)?;
        let f = exp.observables[0].as_ref();
        let mut candidates = vec![GibbsTarget::classical(Arc::clone(&exp.classical))?];
        for &mass in &exp.masses {
            candidates.push(GibbsTarget::loops(Arc::clone(&exp.boundaries[0].ctx), mass)?);
        }
        for target in candidates {
            let label = format!("{} m={}", target.kind().label(), target.mass().unwrap_or(Mass::Infinite));
            match oracle_consistency(&target, &inner, f, &QuadratureOptions::consistency()) {
                Ok(gap) => outcome.check(gap < 1e-6, format!("consistency {label} {}: gap {gap:.3e}", f.name())),
                Err(Error::Intractable(reason)) => outcome.note(format!("skipped consistency {label}: {reason}")),
                Err(err) => return Err(err),
            }
        }
    }
    session.write_rows("oracle.csv", &rows)?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub chain: usize,
    pub sample: usize,
    pub site: usize,
    pub mode: usize,
    pub coefficient: f64,
}

/// Runs `params.chains` chains of one target and dumps every retained
/// sample, plus a checkpoint of each final state.
pub fn cmd_sample(exp: &Experiment, mass: Mass, classical: bool, session: &mut Session) -> Result<Outcome> {
    let target = Arc::new(if classical {
        GibbsTarget::classical(Arc::clone(&exp.classical))?
    } else {
        GibbsTarget::loops(Arc::clone(&exp.boundaries[0].ctx), mass)?
    });
    let seed = session.task("sample".into(), derive_seed(exp.seed(), &[4]));
    let params = &exp.params;
    let chains: Vec<Result<(Vec<SampleRow>, Vec<u8>)>> = (0..params.chains)
        .into_par_iter()
        .map(|c| {
            let mut chain = ChainState::new(Arc::clone(&target), derive_seed(seed, &[c as u64]))?;
            chain.set_scope(params.scope);
            chain.burn_in(params.burn_in, params.target_acceptance);
            let mut rows = Vec::new();
            for sample in 0..params.samples {
                for _ in 0..params.thin {
                    chain.sweep();
                }
                match chain.view() {
                    SampleView::Loops(config) => {
                        for (site, l) in config.loops().iter().enumerate() {
                            for (mode, &coefficient) in l.coeffs().iter().enumerate() {
                                rows.push(SampleRow { chain: c, sample, site, mode, coefficient });
                            }
                        }
                    }
                    SampleView::Reals(x) => {
                        for (site, &coefficient) in x.iter().enumerate() {
                            rows.push(SampleRow { chain: c, sample, site, mode: 0, coefficient });
                        }
                    }
                }
            }
            let mut checkpoint = Vec::new();
            chain.write_checkpoint(&mut checkpoint)?;
            Ok((rows, checkpoint))
        })
        .collect();
    let mut rows = Vec::new();
    for (c, chain) in chains.into_iter().enumerate() {
        let (chain_rows, checkpoint) = chain?;
        rows.extend(chain_rows);
        let mut out = session.create(&format!("chain-{c}.ckpt"))?;
        out.write_all(&checkpoint)?;
        out.flush()?;
    }
    session.write_rows("samples.csv", &rows)?;
    let mut outcome = Outcome::new();
    outcome.note(format!(
        "{} chains x {} samples of the {} target",
        params.chains,
        params.samples,
        target.kind().label()
    ));
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FREE: &str = r#"
model_id = "free"
seed = 7

[model]
lower = [0]
upper = [0]
beta = 2.0

[model.potential]
a = 0.0

[discretization]
n_max = 4

[sampler]
chains = 2
burn_in = 100
samples = 640
"#;

    #[test]
    fn parses_minimal_config() {
        let config = ExperimentConfig::from_toml_str(FREE).unwrap();
        assert_eq!(config.discretization.n_max, 4);
        assert_eq!(config.sampler.samples, 640);
        assert_eq!(config.sampler.batches, McParams::default().batches);
        let exp = Experiment::new(config).unwrap();
        assert_eq!(exp.masses.last(), Some(&Mass::Infinite));
        assert_eq!(exp.boundaries.len(), 1);
        assert_eq!(exp.observables.len(), 3);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = FREE.replace("n_max = 4", "n_max = 4\nnmax = 5");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
        let text = FREE.replace("[sampler]", "[sampler]\nwarmup = 3");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn mass_grid_accepts_inf_and_rejects_disorder() {
        let text = format!("{FREE}\n[sweep]\nmasses = [1.0, 10.0, \"inf\"]\ninclude_infinity = false\n");
        let exp = Experiment::new(ExperimentConfig::from_toml_str(&text).unwrap()).unwrap();
        assert_eq!(exp.masses, vec![Mass::Finite(1.0), Mass::Finite(10.0), Mass::Infinite]);
        let text = format!("{FREE}\n[sweep]\nmasses = [10.0, 1.0]\n");
        assert!(matches!(Experiment::new(ExperimentConfig::from_toml_str(&text).unwrap()), Err(Error::Config(_))));
    }

    #[test]
    fn perturbations_stay_in_the_class() {
        let text = FREE
            .replace("[model.potential]", "[model.coupling]\nnearest_neighbor = 0.5\n\n[model.potential]")
            .replace("a = 0.0", "a = 1.0\nb = [1.0]")
            + "\n[boundary]\ny = 0.5\n[[boundary.perturbations]]\nname = \"wave\"\nharmonic = 1\nparity = \"cos\"\namplitude = 3.0\n";
        let exp = Experiment::new(ExperimentConfig::from_toml_str(&text).unwrap()).unwrap();
        assert_eq!(exp.boundaries.len(), 2);
        let (a, b) = (exp.boundaries[0].ctx.boundary(), exp.boundaries[1].ctx.boundary());
        for site in [vec![-1], vec![1]] {
            assert_eq!(a.time_average(&site), Some(0.5));
            assert!((b.time_average(&site).unwrap() - 0.5).abs() < 1e-15);
            assert!(!b.loop_at(&site).unwrap().is_constant());
        }
    }

    #[test]
    fn unstable_model_is_a_config_error() {
        let text = FREE.replace("a = 0.0", "a = -1.0");
        let err = Experiment::new(ExperimentConfig::from_toml_str(&text).unwrap()).err().unwrap();
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn trace_table_scales_with_sites_and_mass() {
        let masses = [Mass::Finite(1.0), Mass::Finite(2.0)];
        let one = trace_table(std::f64::consts::TAU, &masses, 1, None);
        let four = trace_table(std::f64::consts::TAU, &masses, 4, None);
        assert!((one[0].value - 2.153348094937).abs() < 1e-9);
        assert!((one[0].bound - std::f64::consts::PI.powi(2) / 3.0).abs() < 1e-12);
        assert_eq!(one[1].bound, one[0].bound / 2.0);
        for (a, b) in one.iter().zip(&four) {
            assert!((4.0 * a.value - b.value).abs() < 1e-12);
            assert_eq!(4.0 * a.bound, b.bound);
            assert!(a.within_bound && b.within_bound);
        }
    }

    #[test]
    fn shrink_test_allows_noise() {
        let first = Gap { mass: Mass::Finite(10.0), delta: 0.03, stderr: 0.001 };
        assert!(shrinks_by(&first, &Gap { mass: Mass::Finite(1e3), delta: 0.002, stderr: 0.001 }, 2.0));
        assert!(!shrinks_by(&first, &Gap { mass: Mass::Finite(1e3), delta: 0.025, stderr: 0.001 }, 2.0));
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(main_with_args(["loopgibbs", "no-such-command"]), 2);
        assert_eq!(main_with_args(["loopgibbs", "classical-limit", "--config", "/nonexistent.toml"]), 2);
    }
}
