use std::fmt::Write as _;
use std::time::Instant;

use aybe_lab::evolve::{conservation_summary, run as run_sim, write_csv, DriftRow, Initial, SimConfig};
use aybe_lab::models_2d::{zs_residual, FieldState};
use aybe_lab::Complex64 as C;
use serde::Serialize;

use crate::args::{Format, SimulateArgs};
use crate::report::write_file;
use crate::{CliError, Outcome};

/// Spectral sample used by the pre-check when the config has no probes.
const FALLBACK_PROBE: C = C::new(0.3, 0.7);

pub fn load_config(path: &std::path::Path) -> Result<SimConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    SimConfig::from_json(&text).map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Serialize)]
struct Summary<'a> {
    dt: f64,
    steps_done: usize,
    snapshots: usize,
    zs_precheck: f64,
    aborted: &'a Option<String>,
    warnings: &'a [String],
    drift: &'a [DriftRow],
    passed: bool,
}

fn drift_table(rows: &[DriftRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:<8} {:>26} {:>11} {:>9}  status", "subject", "name", "initial", "max drift", "bound");
    for r in rows {
        let init = format!("{:+.6e}{:+.6e}i", r.initial.re, r.initial.im);
        let status = if r.passed { "pass" } else { "FAIL" };
        let _ = writeln!(s, "{:<8} {:<8} {init:>26} {:>11.3e} {:>9.1e}  {status}", r.subject, r.name, r.max_drift, r.bound);
    }
    s
}

pub fn run(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let mut cfg = load_config(&a.config)?;
    if let (Some(seed), Initial::RandomOrbit(spec)) = (a.seed, &mut cfg.initial) {
        spec.seed = seed;
    }
    let state: FieldState = cfg.initial.build()?;
    let probes = if cfg.z_probes.is_empty() {
        vec![FALLBACK_PROBE]
    } else {
        cfg.z_probes.clone()
    };
    let pre = zs_residual(&state, cfg.flow, cfg.eom, &probes)?
        .into_iter()
        .fold(0.0, f64::max);
    if !(pre <= a.tol) {
        eprintln!("zero-curvature pre-check failed: residual {pre:e} > {:e}; not stepping", a.tol);
        return Ok(Outcome::Fail);
    }
    let start = Instant::now();
    let traj = run_sim(&cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let drift = conservation_summary(&traj, cfg.bounds);
    let passed = traj.aborted.is_none() && drift.iter().all(|r| r.passed);
    let steps_done = traj
        .log
        .last()
        .map_or(0, |r| (r.t / traj.dt).round() as usize);
    let summary = Summary {
        dt: traj.dt,
        steps_done,
        snapshots: traj.snapshots.len(),
        zs_precheck: pre,
        aborted: &traj.aborted,
        warnings: &traj.warnings,
        drift: &drift,
        passed,
    };
    let table = drift_table(&drift);
    if let Some(dir) = &a.out {
        let mut buf = Vec::new();
        write_csv(&traj, &mut buf)?;
        write_file(dir, "trajectory.csv", &String::from_utf8(buf).expect("csv is utf-8"))?;
        let snaps = dir.join("snapshots");
        for (i, (t, st)) in traj.snapshots.iter().enumerate() {
            let doc = serde_json::json!({ "t": t, "state": st });
            write_file(&snaps, &format!("snapshot_{i:05}.json"), &doc.to_string())?;
        }
        write_file(dir, "summary.txt", &table)?;
        write_file(dir, "summary.json", &serde_json::to_string_pretty(&summary).expect("serializes"))?;
    }
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(reason) = &traj.aborted {
        eprintln!("aborted: {reason}");
    }
    match a.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&summary).expect("serializes")),
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(&traj, &mut buf)?;
            print!("{}", String::from_utf8(buf).expect("csv is utf-8"));
        }
        Format::Table => {
            println!(
                "dt {:e}, {} snapshots, zero-curvature pre-check {pre:.3e}, {elapsed:.2} s",
                traj.dt,
                traj.snapshots.len()
            );
            print!("{table}");
        }
    }
    Ok(if passed { Outcome::Pass } else { Outcome::Fail })
}
