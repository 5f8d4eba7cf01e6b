use std::path::PathBuf;

use aybe_lab::rmat::RFamily;
use aybe_lab::Complex64 as C;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "aybe-lab", version, about = "R-matrix identity checks and 1+1 integrable field simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run identity suites over one family or the default family set.
    Verify(VerifyArgs),
    /// Integrate a 1+1 model from a JSON config.
    Simulate(SimulateArgs),
    /// Print R, r, m, F, U or V at given points.
    Probe(ProbeArgs),
    /// Print the classical expansion r0, m0 and r(z), m(z).
    Expand(ExpandArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    #[default]
    Table,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyKind {
    Elliptic,
    Trig7v,
    Rat11v,
    Yang,
}

#[derive(Args, Debug, Clone)]
pub struct FamilyArgs {
    #[arg(long, value_enum)]
    pub family: Option<FamilyKind>,
    /// Matrix size (elliptic, yang).
    #[arg(long)]
    pub n: Option<usize>,
    /// Modular parameter as `re im`.
    #[arg(long, num_args = 2, value_names = ["RE", "IM"], allow_negative_numbers = true)]
    pub tau: Option<Vec<f64>>,
    /// Deformation parameter of the 7-vertex family as `re [im]`.
    #[arg(long, num_args = 1..=2, allow_negative_numbers = true)]
    pub lambda: Option<Vec<f64>>,
}

impl FamilyArgs {
    pub fn build(&self) -> Result<Option<RFamily>, CliError> {
        let Some(kind) = self.family else {
            if self.n.is_some() || self.tau.is_some() || self.lambda.is_some() {
                return Err(CliError::Usage("--n, --tau and --lambda need --family".into()));
            }
            return Ok(None);
        };
        let fam = match kind {
            FamilyKind::Elliptic => {
                let tau = self.tau.as_ref().map_or(C::new(0.0, 1.0), |t| C::new(t[0], t[1]));
                RFamily::elliptic(self.n.unwrap_or(2), tau)?
            }
            FamilyKind::Trig7v => {
                let l = self.lambda.as_ref().map_or(C::new(0.0, 0.0), |l| C::new(l[0], l.get(1).copied().unwrap_or(0.0)));
                RFamily::trig7v(l)?
            }
            FamilyKind::Rat11v => RFamily::rat11v(),
            FamilyKind::Yang => RFamily::yang(self.n.unwrap_or(2))?,
        };
        Ok(Some(fam))
    }

    pub fn require(&self) -> Result<RFamily, CliError> {
        self.build()?.ok_or_else(|| CliError::Usage("--family is required".into()))
    }
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Suite name (fay, aybe, qybe, cybe, structure, catalogue, kernels, orbit, heat, all).
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    /// Defaults to $AYBE_LAB_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides every per-identity tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Directory receiving report.json and report.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory receiving trajectory.csv, snapshots/ and summary.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the seed of a random initial state.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Zakharov-Shabat pre-check tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Quantum R-matrix at `hbar z`.
    #[arg(long = "R", num_args = 2, value_names = ["HBAR", "Z"], allow_hyphen_values = true)]
    pub quantum: Option<Vec<String>>,
    /// Classical r-matrix at `z`.
    #[arg(long = "r", allow_hyphen_values = true)]
    pub classical: Option<String>,
    /// Kernel m at `z`.
    #[arg(long = "m", allow_hyphen_values = true)]
    pub kernel_m: Option<String>,
    /// Unitarity scalar at `hbar z`.
    #[arg(long = "F", num_args = 2, value_names = ["HBAR", "Z"], allow_hyphen_values = true)]
    pub unitarity: Option<Vec<String>>,
    /// U at `z`, from the field state or simulation config given by --config.
    #[arg(long = "U", allow_hyphen_values = true)]
    pub u: Option<String>,
    /// V at `z` for the flow of the simulation config given by --config.
    #[arg(long = "V", allow_hyphen_values = true)]
    pub v: Option<String>,
    /// Grid index for U and V.
    #[arg(long, default_value_t = 0)]
    pub x_index: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExpandArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Spectral point for r(z), m(z).
    #[arg(long, allow_hyphen_values = true)]
    pub z: Option<String>,
}

/// Parses `a`, `a+bi`, `a-bi`, `bi` or `a,b`.
pub fn parse_complex(s: &str) -> Result<C, CliError> {
    let bad = || CliError::Usage(format!("cannot parse complex number {s:?}"));
    let t = s.trim().replace(' ', "");
    if let Some((re, im)) = t.split_once(',') {
        return Ok(C::new(re.parse().map_err(|_| bad())?, im.parse().map_err(|_| bad())?));
    }
    if let Some(body) = t.strip_suffix('i') {
        let split = body
            .char_indices()
            .skip(1)
            .filter(|&(i, ch)| (ch == '+' || ch == '-') && !body[..i].ends_with(['e', 'E']))
            .map(|(i, _)| i)
            .last();
        return match split {
            Some(i) => {
                let im = match &body[i..] {
                    "+" => 1.0,
                    "-" => -1.0,
                    v => v.parse().map_err(|_| bad())?,
                };
                Ok(C::new(body[..i].parse().map_err(|_| bad())?, im))
            }
            None => {
                let im = match body {
                    "" | "+" => 1.0,
                    "-" => -1.0,
                    v => v.parse().map_err(|_| bad())?,
                };
                Ok(C::new(0.0, im))
            }
        };
    }
    Ok(C::new(t.parse().map_err(|_| bad())?, 0.0))
}

/// Seed from the flag, then `$AYBE_LAB_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("AYBE_LAB_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("AYBE_LAB_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}
