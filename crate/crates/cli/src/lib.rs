//! Batch experiment runner for the `cholesteric` library.

pub mod config;
pub mod experiments;
pub mod output;

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use config::{ExperimentConfig, ExperimentKind};
use experiments::RunOutput;
use output::{write_json, Manifest, Summary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

/// Exit status implied by a summary.
pub fn exit_code(summary: &Summary) -> i32 {
    if !summary.failures.is_empty() {
        EXIT_SOLVER
    } else if !summary.all_passed {
        EXIT_CHECK
    } else {
        EXIT_OK
    }
}

/// Runs one experiment on a pool of `jobs` threads (0 = all cores) and
/// writes its artifacts, `summary.json` and `manifest.json` into
/// `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<Summary> {
    let start = Instant::now();
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let out = pool.install(|| dispatch(cfg, dir))?;
    let all_passed = out.failures.is_empty() && out.checks.iter().all(|c| c.passed);
    let summary = Summary {
        kind: cfg.kind.name().to_string(),
        checks: out.checks,
        failures: out.failures,
        all_passed,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    let manifest = Manifest {
        config: cfg.clone(),
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        artifacts: out.artifacts,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(summary)
}

fn dispatch(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    match cfg.kind {
        ExperimentKind::Minimize => experiments::minimize(cfg, dir),
        ExperimentKind::WindingScan => experiments::winding_scan(cfg, dir),
        ExperimentKind::PhaseDiagram => experiments::phase_diagram(cfg, dir),
        ExperimentKind::Barrier => experiments::barrier_experiment(cfg, dir),
        ExperimentKind::Twistbend => experiments::twistbend(cfg, dir),
        ExperimentKind::GammaRecovery => experiments::gamma_recovery(cfg, dir),
    }
}

/// Tables each kind must produce, with their required header columns.
fn expected_tables(kind: ExperimentKind) -> &'static [(&'static str, &'static [&'static str])] {
    const PHASE: &[&str] = &["L", "alpha", "predicted", "observed", "energy", "jumps", "winding", "boundary_distance", "status"];
    match kind {
        ExperimentKind::Minimize => &[("field.csv", &["x", "u1", "u2"])],
        ExperimentKind::WindingScan => &[
            ("winding_scan.csv", &["M", "eps", "energy", "predicted", "constraint_active", "rho_dev_over_eps"]),
            ("extrapolated.csv", &["M", "predicted", "extrapolated", "order", "rel_error", "status"]),
        ],
        ExperimentKind::PhaseDiagram => &[("phase_diagram.csv", PHASE)],
        ExperimentKind::Barrier => &[("barrier.csv", &["eps", "images", "barrier", "argmax", "near_min_modulus"])],
        ExperimentKind::Twistbend => &[
            ("twistbend.csv", &["A", "eps", "L", "alpha", "predicted", "observed", "boundary_distance"]),
            ("microscale.csv", &["K", "eps", "h1_error", "probe_constant", "probe_sine"]),
        ],
        ExperimentKind::GammaRecovery => {
            &[("recovery.csv", &["eps", "method", "n", "energy", "limit_energy", "layer_cost", "jumps_found"])]
        }
    }
}

/// Every non-empty cell that is not a known text column must parse as a number.
fn validate_table(path: &Path, required: &[&str]) -> Result<usize> {
    const TEXT: &[&str] = &["predicted", "observed", "status", "method", "stop_reason"];
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    for col in required {
        if !headers.iter().any(|h| h == *col) {
            bail!("{}: missing column `{col}`", path.display());
        }
    }
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for (h, v) in headers.iter().zip(rec.iter()) {
            let boolean = v == "true" || v == "false";
            if !TEXT.contains(&h) && !v.is_empty() && !boolean && v.parse::<f64>().is_err() {
                bail!("{}: column `{h}` has non-numeric value `{v}`", path.display());
            }
        }
        rows += 1;
    }
    Ok(rows)
}

/// Re-reads a finished run and checks that its summary, manifest and tables
/// are consistent. Returns the stored summary.
pub fn check_run(dir: &Path) -> Result<Summary> {
    let read = |name: &str| -> Result<String> {
        fs::read_to_string(dir.join(name)).with_context(|| format!("reading {}", dir.join(name).display()))
    };
    let summary: Summary = serde_json::from_str(&read("summary.json")?).context("summary.json")?;
    let manifest: Manifest = serde_json::from_str(&read("manifest.json")?).context("manifest.json")?;
    manifest.config.validate()?;
    if manifest.config.kind.name() != summary.kind {
        bail!("summary kind `{}` does not match the manifest", summary.kind);
    }
    let recomputed = summary.failures.is_empty() && summary.checks.iter().all(|c| c.passed);
    if recomputed != summary.all_passed {
        bail!("summary all_passed disagrees with its checks");
    }
    for a in &manifest.artifacts {
        if !dir.join(a).exists() {
            bail!("artifact `{a}` listed in the manifest is missing");
        }
    }
    for (name, cols) in expected_tables(manifest.config.kind) {
        validate_table(&dir.join(name), cols)?;
    }
    Ok(summary)
}
