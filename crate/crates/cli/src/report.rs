use std::fmt::Write as _;
use std::path::Path;

use aybe_lab::identities::CheckRecord;
use aybe_lab::tensor::Matrix;
use aybe_lab::Complex64 as C;
use serde::Serialize;

use crate::CliError;

/// Deterministic verification report; wall-clock timing is kept out of it.
#[derive(Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub suite: String,
    pub samples: usize,
    pub families: Vec<String>,
    pub passed: bool,
    pub records: Vec<CheckRecord>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One line per (family, identity) with the worst residual.
    pub fn table(&self, elapsed: Option<f64>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:<34} {:>11} {:>9}  status", "family", "identity", "max resid", "tol");
        let mut rows: Vec<(String, String, f64, f64, bool, bool, Option<String>)> = Vec::new();
        for r in &self.records {
            match rows.iter_mut().find(|o| o.0 == r.family && o.1 == r.identity) {
                Some(o) => {
                    o.2 = o.2.max(r.residual);
                    o.4 &= r.passed;
                    o.5 &= r.skipped;
                }
                None => rows.push((
                    r.family.clone(),
                    r.identity.clone(),
                    r.residual,
                    r.tolerance,
                    r.passed,
                    r.skipped,
                    r.note.clone().filter(|_| r.skipped),
                )),
            }
        }
        for (fam, id, res, tol, ok, skip, note) in rows {
            let status = if skip {
                format!("skip ({})", note.unwrap_or_default())
            } else if ok {
                "pass".into()
            } else {
                "FAIL".into()
            };
            let _ = writeln!(s, "{fam:<28} {id:<34} {res:>11.3e} {tol:>9.1e}  {status}");
        }
        let failed = self.records.iter().filter(|r| !r.passed).count();
        let _ = write!(s, "{} checks, {} failed", self.records.len(), failed);
        if let Some(t) = elapsed {
            let _ = write!(s, ", {t:.2} s");
        }
        s.push('\n');
        s
    }

    pub fn csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::Usage(format!("csv: {e}"));
        w.write_record(["identity", "family", "sample", "residual", "tolerance", "passed", "skipped", "note"])
            .map_err(err)?;
        for r in &self.records {
            w.write_record([
                r.identity.clone(),
                r.family.clone(),
                r.sample.to_string(),
                format!("{:e}", r.residual),
                format!("{:e}", r.tolerance),
                r.passed.to_string(),
                r.skipped.to_string(),
                r.note.clone().unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Fixed-width complex format; negative zeros print as positive.
pub fn fmt_complex(z: C) -> String {
    format!("{:+.15e}{:+.15e}i", z.re + 0.0, z.im + 0.0)
}

/// Rows of space-separated entries.
pub fn fmt_matrix(m: &Matrix) -> String {
    let mut s = String::new();
    for i in 0..m.dim() {
        let row: Vec<String> = (0..m.dim()).map(|j| fmt_complex(m[(i, j)])).collect();
        s.push_str(&row.join("  "));
        s.push('\n');
    }
    s
}

pub fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), content)?;
    Ok(())
}
