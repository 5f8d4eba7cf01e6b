use aybe_lab::evolve::SimConfig;
use aybe_lab::models_2d::{build_u, build_v, FieldState, FlowSpec};
use aybe_lab::rmat::{eval_r, unitarity_scalar, Expansion, RFamily};
use aybe_lab::tensor::Matrix;

use crate::args::{parse_complex, ExpandArgs, ProbeArgs};
use crate::report::{fmt_complex, fmt_matrix};
use crate::{CliError, Outcome};

/// A probe config is either a simulation config or a bare field state.
fn load_state(path: &std::path::Path) -> Result<(FieldState, Option<FlowSpec>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    if let Ok(cfg) = SimConfig::from_json(&text) {
        return Ok((cfg.initial.build()?, Some(cfg.flow)));
    }
    let st = FieldState::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok((st, None))
}

fn print_block(label: &str, m: &Matrix) {
    println!("{label}");
    print!("{}", fmt_matrix(m));
}

fn grid_entry(f: Vec<Matrix>, j: usize) -> Result<Matrix, CliError> {
    let len = f.len();
    f.into_iter()
        .nth(j)
        .ok_or_else(|| CliError::Usage(format!("--x-index {j} out of range (grid has {len} points)")))
}

pub fn run_probe(a: &ProbeArgs) -> Result<Outcome, CliError> {
    let mut printed = false;
    let family = a.family.build()?;
    let need_family = || family.clone().ok_or_else(|| CliError::Usage("--family is required".into()));
    if let Some(v) = &a.quantum {
        let (h, z) = (parse_complex(&v[0])?, parse_complex(&v[1])?);
        print_block(&format!("R(hbar={}, z={})", fmt_complex(h), fmt_complex(z)), eval_r(&need_family()?, h, z)?.matrix());
        printed = true;
    }
    if let Some(v) = &a.classical {
        let z = parse_complex(v)?;
        let e = Expansion::new(&need_family()?)?;
        print_block(&format!("r(z={})", fmt_complex(z)), e.r(z)?.matrix());
        printed = true;
    }
    if let Some(v) = &a.kernel_m {
        let z = parse_complex(v)?;
        let e = Expansion::new(&need_family()?)?;
        print_block(&format!("m(z={})", fmt_complex(z)), e.m(z)?.matrix());
        printed = true;
    }
    if let Some(v) = &a.unitarity {
        let (h, z) = (parse_complex(&v[0])?, parse_complex(&v[1])?);
        let (f, off) = unitarity_scalar(&need_family()?, h, z)?;
        println!("F(hbar={}, z={})", fmt_complex(h), fmt_complex(z));
        println!("{}", fmt_complex(f));
        println!("off-identity residual {off:e}");
        printed = true;
    }
    if a.u.is_some() || a.v.is_some() {
        let path = a
            .config
            .as_ref()
            .ok_or_else(|| CliError::Usage("--U and --V need --config".into()))?;
        let (st, flow) = load_state(path)?;
        if let Some(v) = &a.u {
            let z = parse_complex(v)?;
            let u = grid_entry(build_u(&st, z)?, a.x_index)?;
            print_block(&format!("U(z={}, x_{})", fmt_complex(z), a.x_index), &u);
        }
        if let Some(v) = &a.v {
            let z = parse_complex(v)?;
            let flow = flow.ok_or_else(|| CliError::Usage("--V needs a simulation config with a flow".into()))?;
            let vv = grid_entry(build_v(&st, flow, z)?, a.x_index)?;
            print_block(&format!("V(z={}, x_{})", fmt_complex(z), a.x_index), &vv);
        }
        printed = true;
    }
    if !printed {
        return Err(CliError::Usage("nothing to probe: pass --R, --r, --m, --F, --U or --V".into()));
    }
    Ok(Outcome::Pass)
}

pub fn run_expand(a: &ExpandArgs) -> Result<Outcome, CliError> {
    let family: RFamily = a.family.require()?;
    let e = Expansion::new(&family)?;
    println!("family {}", family.descriptor());
    print_block("r0", e.r0().matrix());
    print_block("m(0)", e.m0().matrix());
    if let Some(v) = &a.z {
        let z = parse_complex(v)?;
        print_block(&format!("r(z={})", fmt_complex(z)), e.r(z)?.matrix());
        print_block(&format!("m(z={})", fmt_complex(z)), e.m(z)?.matrix());
    }
    Ok(Outcome::Pass)
}
