use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meandim_core::Q;

mod cmd;

#[derive(Parser)]
#[command(name = "meandim", version, about = "Width-dimension certificates for mean dimension experiments")]
struct Cli {
    /// Worker threads (also capped by MEANDIM_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Subdivide complexes and inspect dimension buckets.
    #[command(subcommand)]
    Complex(ComplexCmd),
    /// Width-reducing maps onto a simplex or cube, with fiber certificates.
    #[command(subcommand)]
    Gromov(GromovCmd),
    /// Orbit capacity of a cylinder set in a subshift of finite type.
    Ocap(OcapArgs),
    /// Wedge-of-cones embedding over a subshift of finite type.
    Sbp(SbpArgs),
    /// The counterexample factor map over the 2-adic odometer.
    #[command(subcommand)]
    Counterexample(CounterexampleCmd),
    /// Re-check a certificate file (one certificate or an array).
    Verify {
        file: PathBuf,
    },
}

#[derive(Args, Clone)]
pub struct ComplexInput {
    /// Geometric complex JSON file.
    #[arg(long, conflicts_with = "standard")]
    input: Option<PathBuf>,
    /// Use the standard simplex of this dimension.
    #[arg(long)]
    standard: Option<usize>,
    /// Norm for the standard simplex: l_inf, l_1 or l_2.
    #[arg(long, default_value = "l_inf")]
    norm: String,
}

#[derive(Subcommand)]
enum ComplexCmd {
    /// Barycentric subdivision, a fixed number of rounds or until the star mesh is below a bound.
    Subdivide {
        #[command(flatten)]
        input: ComplexInput,
        #[arg(long, conflicts_with = "mesh")]
        rounds: Option<usize>,
        #[arg(long, value_parser = parse_rational)]
        mesh: Option<Q>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dimensions of the bucket subcomplexes of the barycentric subdivision.
    Buckets {
        #[command(flatten)]
        input: ComplexInput,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GromovCmd {
    /// Build a map description.
    Build {
        /// Cube dimension for the map [0,1]^n -> [0,1]^{m-1}.
        #[arg(long, conflicts_with_all = ["input", "standard"])]
        cube: Option<usize>,
        #[command(flatten)]
        input: ComplexInput,
        #[arg(long)]
        m: usize,
        #[arg(long, value_parser = parse_rational)]
        eps: Q,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fiber certificates over target points, with sampled near-collision checks.
    FiberCheck {
        #[arg(long)]
        map: PathBuf,
        /// Target point as comma-separated rationals; repeatable.
        #[arg(long = "point", value_parser = parse_point)]
        points: Vec<Vec<Q>>,
        /// Random target points in addition to the given ones.
        #[arg(long, default_value_t = 0)]
        samples: u64,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_rational)]
        eta: Option<Q>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        witness: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OcapArgs {
    /// SFT JSON file, or `golden-mean` / `full-K`.
    #[arg(long)]
    sft: String,
    /// Cylinder set JSON file.
    #[arg(long)]
    set: PathBuf,
    /// The limit value (default).
    #[arg(long, conflicts_with = "n")]
    limit: bool,
    /// The finite-horizon value over `n` steps.
    #[arg(long)]
    n: Option<u64>,
}

#[derive(Args)]
struct SbpArgs {
    #[arg(long)]
    sft: String,
    /// JSON array of cylinder sets V_i.
    #[arg(long)]
    cover: PathBuf,
    /// JSON array of disjoint pieces E_i; peeled from the cover when absent.
    #[arg(long)]
    pieces: Option<PathBuf>,
    #[arg(long, value_parser = parse_rational, default_value = "1/2")]
    delta: Q,
    #[arg(long = "N", default_value_t = 1)]
    horizon: u64,
    #[arg(long, default_value_t = 4)]
    n: u64,
    #[arg(long, value_parser = parse_rational, default_value = "1/2")]
    eps: Q,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    witness: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct CxArgs {
    #[arg(long, value_parser = parse_rational)]
    delta: Q,
    #[arg(long, value_parser = parse_rational, value_delimiter = ',')]
    eps: Vec<Q>,
    #[arg(long = "N", value_delimiter = ',')]
    horizon: Vec<u64>,
    /// Odometer level override.
    #[arg(long)]
    level: Option<u32>,
    #[arg(long, default_value_t = 20)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    witness: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CounterexampleCmd {
    /// Derive and check the parameters.
    Build(CxArgs),
    /// Count nonzero coordinates of f(x, z) on [0, N).
    CheckCounts(CxArgs),
    /// Fiber certificates over sampled image points.
    FiberCert {
        #[command(flatten)]
        args: CxArgs,
        /// Sampled fiber pairs per certificate (0 skips the sampled check).
        #[arg(long, default_value_t = 1000)]
        trials: u64,
    },
    /// CSV table of certified ratios.
    Report {
        #[command(flatten)]
        args: CxArgs,
        /// Stack maps for scales 1, 1/2, ..., 1/j instead.
        #[arg(long)]
        stacked: Option<usize>,
    },
}

fn parse_rational(s: &str) -> Result<Q, String> {
    meandim_core::rational::parse_q(s).map_err(|e| e.to_string())
}

fn parse_point(s: &str) -> Result<Vec<Q>, String> {
    s.split(',').map(|c| parse_rational(c.trim())).collect()
}

fn configure_threads(flag: Option<usize>) {
    let env = std::env::var("MEANDIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0);
    let n = match (flag, env) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    if let Some(n) = n {
        // fails only if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads(cli.threads);
    let result = match cli.command {
        Command::Complex(c) => cmd::complex(c),
        Command::Gromov(c) => cmd::gromov(c),
        Command::Ocap(a) => cmd::ocap(a),
        Command::Sbp(a) => cmd::sbp(a),
        Command::Counterexample(c) => cmd::counterexample(c),
        Command::Verify { file } => cmd::verify(&file),
    };
    match result {
        Ok(cmd::Outcome::Ok) => ExitCode::SUCCESS,
        Ok(cmd::Outcome::Failed) => ExitCode::from(3),
        Err(e) => {
            let code = cmd::exit_code(&e);
            let kind = if code == 4 { "budget" } else { "precondition" };
            eprintln!(
                "{}",
                serde_json::json!({"exit": code, "error": kind, "message": format!("{e:#}")})
            );
            ExitCode::from(code)
        }
    }
}
