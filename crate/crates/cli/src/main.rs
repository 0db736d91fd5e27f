use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use poisoncert::attacks::AttackKind;
use poisoncert::data::{load_dataset, GaussianSpec};
use poisoncert::model::generalization_bound;
use poisoncert::report::{self, RunConfig};
use poisoncert::{DefenseKind, Error, Format};
use serde_json::json;

#[derive(Parser)]
#[command(name = "poisoncert", version, about = "Certified bounds for data poisoning of linear SVMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a two-class Gaussian mixture as train/test dense CSV.
    GenData(GenDataArgs),
    /// Certify upper and lower bounds for every (eps, seed) pair.
    Certify(RunArgs),
    /// Run a baseline or certificate attack and evaluate it.
    Attack(AttackArgs),
    /// Print the uniform-convergence bound.
    Bound(BoundArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Clean training data.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// dense-csv or sparse-text.
    #[arg(long)]
    format: Option<Format>,
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long = "seed", value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// oracle or data-dep.
    #[arg(long, value_parser = parse_defense)]
    defense: Option<DefenseKind>,
    #[arg(long)]
    keep_fraction: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Restrict attack points to non-negative integers.
    #[arg(long)]
    integer: bool,
    #[arg(long)]
    sdp_samples: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    run: RunArgs,
    /// label-flip, gradient or certificate-attack.
    #[arg(long)]
    kind: Option<AttackKind>,
    /// Outer iterations of the gradient attack.
    #[arg(long)]
    attack_steps: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
}

#[derive(Args)]
struct BoundArgs {
    /// Dataset supplying n and R when they are not given.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "dense-csv")]
    format: Format,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long)]
    radius: Option<f64>,
}

fn parse_defense(s: &str) -> Result<DefenseKind, String> {
    match s {
        "oracle" => Ok(DefenseKind::Oracle),
        "data-dep" | "data-dependent" => Ok(DefenseKind::DataDependent),
        _ => Err(format!("expected oracle or data-dep, got {s:?}")),
    }
}

fn build_config(a: &RunArgs) -> poisoncert::Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &a.train {
        c.data.train = Some(p.clone());
        c.data.gaussian = None;
    }
    if let Some(p) = &a.test {
        c.data.test = Some(p.clone());
    }
    if let Some(f) = a.format {
        c.data.format = f;
    }
    if c.data.train.is_none() && c.data.gaussian.is_none() {
        return Err(Error::Config("no data: pass --train or set data in --config".into()));
    }
    if let Some(e) = &a.eps {
        c.eps = e.clone();
    }
    if let Some(s) = &a.seeds {
        c.seeds = s.clone();
    }
    if let Some(k) = a.defense {
        c.defense.kind = k;
    }
    if let Some(q) = a.keep_fraction {
        c.defense.keep_fraction = q;
    }
    if let Some(r) = a.rho {
        c.rho = r;
    }
    if a.eta.is_some() {
        c.eta = a.eta;
    }
    if a.integer {
        c.defense.integer_features = true;
    }
    if let Some(s) = a.sdp_samples {
        c.sdp_samples = s;
    }
    if let Some(o) = &a.out {
        c.out = o.clone();
    }
    if let Some(j) = a.jobs {
        c.jobs = j;
    }
    c.validate()?;
    Ok(c)
}

fn print(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
}

fn run(cli: Cli) -> poisoncert::Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let spec = GaussianSpec {
                d: a.d,
                lambda: a.lambda,
                n: a.n,
                seed: a.seed,
            };
            let (train, test) = report::gen_data(&spec, a.train_fraction, &a.out)?;
            print(json!({ "train": train, "test": test }));
        }
        Command::Certify(a) => {
            let c = build_config(&a)?;
            let rows = report::run_certify(&c)?;
            print(json!({ "out": c.out, "rows": rows }));
        }
        Command::Attack(a) => {
            let mut c = build_config(&a.run)?;
            if let Some(k) = a.kind {
                c.attack.kind = k;
            }
            if let Some(s) = a.attack_steps {
                c.attack.steps = s;
            }
            if let Some(s) = a.step_size {
                c.attack.step_size = s;
            }
            let outcomes = report::run_attacks(&c)?;
            let summary: Vec<_> = outcomes
                .iter()
                .map(|o| {
                    json!({
                        "eps": o.eps,
                        "points": o.attack.len(),
                        "induced_loss": o.induced_loss,
                        "test_hinge": o.test_hinge,
                        "test_zero_one": o.test_zero_one,
                    })
                })
                .collect();
            print(json!({ "out": c.out, "attacks": summary }));
        }
        Command::Bound(a) => {
            let data = a.data.as_ref().map(|p| load_dataset(p, a.format)).transpose()?;
            let n = match (a.n, &data) {
                (Some(n), _) => n,
                (None, Some(d)) => d.len(),
                (None, None) => return Err(Error::Config("bound: pass --n or --data".into())),
            };
            let radius = match (a.radius, &data) {
                (Some(r), _) => r,
                (None, Some(d)) => d.max_norm(),
                (None, None) => return Err(Error::Config("bound: pass --radius or --data".into())),
            };
            let bound = generalization_bound(n, a.rho, a.delta, radius)?;
            print(json!({ "n": n, "rho": a.rho, "delta": a.delta, "radius": radius, "bound": bound }));
        }
    }
    Ok(())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Parse { .. } => "parse",
        Error::DimensionMismatch { .. } => "dimension-mismatch",
        Error::Stats(_) => "stats",
        Error::EmptyDataset => "empty-dataset",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::Unbounded(_) => "unbounded",
        Error::Sdp(_) => "sdp",
        Error::Recovery(_) => "recovery",
        Error::Certificate(_) => "certificate",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn fail(kind: &str, message: String, line: Option<usize>, code: u8) -> ExitCode {
    let mut v = json!({ "error": kind, "message": message, "exit_code": code });
    if let Some(l) = line {
        v["line"] = json!(l);
    }
    eprintln!("{v}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim().to_string(), None, 1),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = match &e {
                Error::Parse { line, .. } => Some(*line),
                _ => None,
            };
            let code = if e.is_numerical() { 2 } else { 1 };
            log::debug!("{e:?}");
            fail(error_kind(&e), e.to_string(), line, code)
        }
    }
}
