use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use loopgibbs::cli::{Experiment, ExperimentConfig, RunManifest, MANIFEST_FILE};
use loopgibbs::gaussian::Mass;
use loopgibbs::gibbs::{ChainState, GibbsTarget};
use loopgibbs::observables::read_sweep_csv;

const FREE_FIXED: &str = r#"
model_id = "free-site"
seed = 17

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
burn_in = 200
samples = 4000

[sweep]
masses = [0.5, 5.0, 50.0]
include_infinity = true
"#;

const QUARTIC: &str = r#"
model_id = "quartic-site"
seed = 23

[model]
lower = [0]
upper = [0]
beta = 1.0

[model.potential]
a = 0.5
b = [0.25]

[discretization]
n_max = 1

[sampler]
chains = 4
burn_in = 1000
samples = 20000

[sweep]
masses = [1.0]
include_infinity = true
"#;

fn loopgibbs(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopgibbs"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn trace_distance_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("td");
    let output = loopgibbs(&["trace-distance", "--masses", "1,2,inf", "--sites", "4"], &out);
    assert_eq!(output.status.code(), Some(0), "{}", stdout(&output));

    let mut reader = csv::Reader::from_path(out.join("trace_distance.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["beta", "m", "sites", "n_max", "partial_sum", "value", "closed_form", "bound", "within_bound"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let col = |row: &csv::StringRecord, i: usize| row[i].parse::<f64>().unwrap();
    // |Λ| (π coth π - 1) and |Λ| π²/3 at β = 2π, m = 1
    let pi = std::f64::consts::PI;
    assert!((col(&rows[0], 6) - 4.0 * (pi / pi.tanh() - 1.0)).abs() < 1e-12);
    assert!((col(&rows[0], 7) - 4.0 * pi * pi / 3.0).abs() < 1e-12);
    assert_eq!(col(&rows[1], 7), col(&rows[0], 7) / 2.0);
    assert_eq!(&rows[2][1], "inf");
    assert_eq!(col(&rows[2], 5), 0.0);

    let manifest: RunManifest = serde_json::from_reader(fs::File::open(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.command, "trace-distance");
    assert_eq!(manifest.outputs, ["trace_distance.csv"]);
    assert!(manifest.finished_unix.is_some());
}

#[test]
fn exact_trace_distance_leaves_n_max_blank() {
    let dir = tempfile::tempdir().unwrap();
    let output = loopgibbs(&["trace-distance", "--exact", "--masses", "10"], dir.path());
    assert_eq!(output.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("trace_distance.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("6.283185307179586,10,1,,"), "{text}");
}

#[test]
fn config_errors_exit_with_two_before_writing_results() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &FREE_FIXED.replace("[sampler]", "[sampler]\nwarmup = 10"));
    let out = dir.path().join("bad");
    let output = loopgibbs(&["classical-limit", "--config", bad.to_str().unwrap()], &out);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("warmup"));
    assert!(!out.exists());

    let fixed = write_config(dir.path(), "fixed.toml", FREE_FIXED);
    let output = loopgibbs(&["order-parameter", "--config", fixed.to_str().unwrap()], &out);
    assert_eq!(output.status.code(), Some(2));
    let output = loopgibbs(&["classical-limit", "--config", fixed.to_str().unwrap(), "--workers", "0"], &out);
    assert_eq!(output.status.code(), Some(2));
    let output = loopgibbs(&["no-such-command"], &out);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn free_model_limit_stays_at_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "free.toml", FREE_FIXED);
    let out = dir.path().join("free");
    let output = loopgibbs(&["classical-limit", "--config", config.to_str().unwrap()], &out);
    let text = stdout(&output);
    assert_eq!(output.status.code(), Some(0), "{text}");
    assert!(text.contains("noise_level=true"), "{text}");

    let rows = read_sweep_csv(fs::File::open(out.join("estimates.csv")).unwrap()).unwrap();
    // 4 masses x 3 panel observables
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.wall_seconds.is_none()));
    assert_eq!(rows.last().unwrap().m, "inf");
    assert!(rows.iter().all(|r| r.model_id.starts_with("free-site/constant:")));

    let manifest: RunManifest = serde_json::from_reader(fs::File::open(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.seed, 17);
    assert_eq!(manifest.tasks.len(), 1);
    assert_eq!(manifest.outputs, ["estimates.csv", "limit.csv"]);
    assert!(manifest.config.is_some());
}

#[test]
fn timings_fill_the_wall_seconds_column() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "free.toml", FREE_FIXED);
    let out = dir.path().join("timed");
    let output = loopgibbs(&["classical-limit", "--config", config.to_str().unwrap(), "--timings", "--seed", "5"], &out);
    assert_eq!(output.status.code(), Some(0));
    let rows = read_sweep_csv(fs::File::open(out.join("estimates.csv")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.wall_seconds.is_some_and(|s| s >= 0.0)));
    assert!(rows.iter().all(|r| r.seed != 0));
}

#[test]
fn oracle_compare_on_a_quartic_site() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "quartic.toml", QUARTIC);
    let out = dir.path().join("oracle");
    let output = loopgibbs(&["oracle-compare", "--config", config.to_str().unwrap()], &out);
    let text = stdout(&output);
    assert_eq!(output.status.code(), Some(0), "{text}");
    // quantum m=1, quasiclassical and classical, three observables each
    let mut reader = csv::Reader::from_path(out.join("oracle.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 9);
    let kinds: Vec<&str> = rows.iter().map(|r| &r[1]).collect();
    assert!(kinds.contains(&"quantum") && kinds.contains(&"quasiclassical") && kinds.contains(&"classical"));
    assert!(rows.iter().all(|r| r[7].parse::<f64>().unwrap() <= 3.0));
}

#[test]
fn sample_dump_and_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "quartic.toml", QUARTIC);
    let out = dir.path().join("samples");
    let output = loopgibbs(&["sample", "--config", config.to_str().unwrap(), "--mass", "2", "--samples", "40"], &out);
    assert_eq!(output.status.code(), Some(0), "{}", stdout(&output));
    let text = fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("chain,sample,site,mode,coefficient"));
    // 4 chains x 40 samples x 3 modes
    assert_eq!(text.lines().count() - 1, 4 * 40 * 3);

    let exp = Experiment::new(ExperimentConfig::from_toml_str(QUARTIC).unwrap()).unwrap();
    let target = Arc::new(GibbsTarget::loops(Arc::clone(&exp.boundaries[0].ctx), Mass::Finite(2.0)).unwrap());
    for c in 0..4 {
        let bytes = fs::read(out.join(format!("chain-{c}.ckpt"))).unwrap();
        let chain = ChainState::read_checkpoint(Arc::clone(&target), bytes.as_slice()).unwrap();
        // last dumped sample is the checkpointed state
        let last: Vec<f64> = text
            .lines()
            .filter(|l| l.starts_with(&format!("{c},39,")))
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        let loopgibbs::gibbs::SampleView::Loops(config) = chain.view() else { panic!("loop target") };
        assert_eq!(config.site(0).coeffs(), last.as_slice());
    }
}
