use std::time::Instant;

use aybe_lab::identities::{run_suite, Suite, SuiteOptions};
use aybe_lab::rmat::RFamily;
use aybe_lab::Complex64 as C;

use crate::args::{resolve_seed, Format, VerifyArgs};
use crate::report::{write_file, RunReport};
use crate::{CliError, Outcome};

/// Families swept when `--family` is absent.
pub fn default_families() -> Vec<RFamily> {
    vec![
        RFamily::elliptic(2, C::new(0.0, 1.0)).expect("valid"),
        RFamily::elliptic(3, C::new(0.3, 0.8)).expect("valid"),
        RFamily::trig7v(C::new(0.0, 0.0)).expect("valid"),
        RFamily::trig7v(C::new(1.0, 0.0)).expect("valid"),
        RFamily::rat11v(),
        RFamily::yang(2).expect("valid"),
        RFamily::yang(3).expect("valid"),
    ]
}

pub fn run(a: &VerifyArgs) -> Result<Outcome, CliError> {
    let suite = Suite::parse(&a.suite)?;
    let seed = resolve_seed(a.seed)?;
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let families = match a.family.build()? {
        Some(f) => vec![f],
        None => default_families(),
    };
    let opts = SuiteOptions {
        samples: a.samples,
        seed,
        tolerance: a.tol,
        ..SuiteOptions::default()
    };
    let start = Instant::now();
    let mut records = Vec::new();
    for fam in &families {
        records.extend(run_suite(suite, fam, &opts)?);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let report = RunReport {
        tool: "aybe-lab",
        version: env!("CARGO_PKG_VERSION"),
        seed,
        suite: a.suite.clone(),
        samples: a.samples,
        families: families.iter().map(RFamily::descriptor).collect(),
        passed: records.iter().all(|r| r.passed),
        records,
    };
    if let Some(dir) = &a.out {
        write_file(dir, "report.json", &report.to_json())?;
        write_file(dir, "report.txt", &report.table(None))?;
    }
    match a.format {
        Format::Json => println!("{}", report.to_json()),
        Format::Table => print!("{}", report.table(Some(elapsed))),
        Format::Csv => print!("{}", report.csv()?),
    }
    Ok(if report.passed { Outcome::Pass } else { Outcome::Fail })
}
