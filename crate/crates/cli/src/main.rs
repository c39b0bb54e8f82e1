//! `levylab`: batch front end for the simulators and diagnostics.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use levylab_core::config::{ChiConfig, OperatorConfig, TripletConfig};
use levylab_core::diagnostics::{explosion_stats, ks_one_sample, mean_se, two_sample_report};
use levylab_core::embedding::{clock_martingale_check, coupling_check, doob_bound_check};
use levylab_core::environment::{quenched_summary, BaseLaw, EnvironmentSpec, RwreConfig, WindowPolicy};
use levylab_core::io::{read_grid_potential, read_increment_potential, read_paths, write_paths};
use levylab_core::path::marginal;
use levylab_core::{
    euler_chain_simulate, potential_chain_simulate, rwre_simulate, stable_chain_simulate, Error, Expr, GridSpec,
    IncrementPlan, PathRecord, Potential, PsiOptions, SimConfig, SmallJumps, StableField, Start,
};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

const USAGE_EXIT: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "levylab", version, about = "Simulators and convergence diagnostics for Lévy-type processes")]
struct Cli {
    /// Worker threads for path simulation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chain with stable-like jumps of state-dependent intensity and index.
    SimulateStable(StableArgs),
    /// Euler scheme for a triplet field given as JSON.
    SimulateEuler(EulerArgs),
    /// Step-size scheme for the diffusion in a potential.
    SimulatePotential(PotentialArgs),
    /// Random walks in random environments.
    SimulateRwre(RwreArgs),
    /// Convergence gaps of triplet fields against a limit.
    DiagnoseOperator(OperatorArgs),
    /// Doob bound, coupling identity and martingale checks for the random clock.
    DiagnoseClock(ClockArgs),
    /// Explosion statistics and marginal comparisons for path files.
    DiagnosePaths(PathsArgs),
}

#[derive(Args, Debug, Serialize)]
struct RunArgs {
    /// Time horizon.
    #[arg(long = "T")]
    horizon: f64,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    /// Master seed; falls back to LEVYLAB_SEED.
    #[arg(long, env = "LEVYLAB_SEED")]
    seed: u64,
    /// Number of equally spaced output times, endpoints included.
    #[arg(long, default_value_t = 11)]
    grid_points: usize,
    /// Starting point, comma separated (default: the origin).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e6)]
    escape_radius: f64,
}

impl RunArgs {
    fn sim(&self) -> SimConfig {
        SimConfig::new(self.horizon, self.paths, self.seed)
            .with_grid(GridSpec::Uniform(self.grid_points))
            .with_escape_radius(self.escape_radius)
    }

    fn start(&self, dim: usize) -> Result<Start, Error> {
        match &self.x0 {
            None => Ok(Start::Point(vec![0.0; dim])),
            Some(x) if x.len() == dim => Ok(Start::Point(x.clone())),
            Some(x) => Err(Error::Validation(format!("--x0 has {} coordinates, expected {dim}", x.len()))),
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct StableArgs {
    /// Intensity c(x) as an expression over x1..xd.
    #[arg(long, default_value = "1")]
    c_expr: String,
    /// Index α(x) in (0, 2) as an expression over x1..xd.
    #[arg(long)]
    alpha_expr: String,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Scheme index; the time step is 1/n.
    #[arg(long)]
    n: f64,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum ChiArg {
    Chi1,
    Chi2,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum SmallJumpArg {
    /// Drop jumps below τ and keep their compensator.
    Drift,
    /// Replace jumps below τ by a Gaussian of equal covariance.
    Gaussian,
}

#[derive(Args, Debug, Serialize)]
struct EulerArgs {
    /// JSON triplet field.
    #[arg(long)]
    triplet_config: PathBuf,
    #[arg(long, value_enum, default_value = "chi1")]
    chi: ChiArg,
    /// Time step.
    #[arg(long)]
    eps: f64,
    /// Small-jump truncation radius (default chosen per measure).
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum, default_value = "drift")]
    small_jumps: SmallJumpArg,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct PotentialArgs {
    /// `zero`, an expression in x, or a CSV file: (knot, value) rows, or
    /// (k, q_k) rows when --mesh is given.
    #[arg(long, allow_hyphen_values = true)]
    potential: String,
    /// Lattice mesh of an increments file.
    #[arg(long)]
    mesh: Option<f64>,
    #[arg(long)]
    eps: f64,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct RwreArgs {
    /// `iid:SIGMA[:gaussian|rademacher]` or `bernoulli:Q:LAMBDA`.
    #[arg(long)]
    env: String,
    #[arg(long)]
    eps: f64,
    /// Number of environment draws.
    #[arg(long, default_value_t = 1)]
    envs: usize,
    #[command(flatten)]
    run: RunArgs,
    /// Output directory for env_<i>.csv files and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct OperatorArgs {
    /// JSON document with box, limit and fields.
    #[arg(long)]
    config: PathBuf,
    /// Report file (default: embedded in the manifest).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ClockArgs {
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Sampled (path, t) pairs for the coupling identity.
    #[arg(long, default_value_t = 1000)]
    coupling_pairs: usize,
    /// Indices k for the checks on Σ E_i - k.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
    martingale_k: Vec<usize>,
    #[arg(long, env = "LEVYLAB_SEED")]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PathsArgs {
    /// Path CSV produced by a simulate command.
    #[arg(long)]
    input: PathBuf,
    /// Second path file to compare marginals against.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// One-sample KS against N(MEAN, VAR), given as MEAN:VAR.
    #[arg(long, allow_hyphen_values = true)]
    normal: Option<String>,
    /// Time of the marginal (default: last grid time).
    #[arg(long)]
    t: Option<f64>,
    /// Coordinate of the marginal, 1-based.
    #[arg(long, default_value_t = 1)]
    coord: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Outcome {
    seed: Option<u64>,
    config: Value,
    inputs: Vec<Vec<u8>>,
    outputs: Vec<PathBuf>,
    report: Option<Value>,
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<(), Error>) -> Result<(), Error> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

fn write_csv(path: &Path, paths: &[PathRecord]) -> Result<(), Error> {
    write_atomic(path, |w| write_paths(w, paths))
}

fn write_json(path: &Path, value: &Value) -> Result<(), Error> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn read_input(path: &Path) -> Result<Vec<u8>, Error> {
    fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn simulate_stable(a: &StableArgs) -> Result<Outcome, Error> {
    let c = Expr::parse(&a.c_expr)?;
    let alpha = Expr::parse(&a.alpha_expr)?;
    c.check_dim(a.dim)?;
    alpha.check_dim(a.dim)?;
    let field = StableField::new(a.dim, move |x| c.eval(x), move |x| alpha.eval(x))?;
    let paths = stable_chain_simulate(&field, &a.run.start(a.dim)?, a.n, &a.run.sim())?;
    write_csv(&a.out, &paths)?;
    Ok(Outcome {
        seed: Some(a.run.seed),
        config: to_value(a),
        inputs: Vec::new(),
        outputs: vec![a.out.clone()],
        report: None,
    })
}

fn simulate_euler(a: &EulerArgs) -> Result<Outcome, Error> {
    let bytes = read_input(&a.triplet_config)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Config(e.to_string()))?;
    let cfg = TripletConfig::from_json(&text)?;
    let field = cfg.to_field()?;
    let chi = match a.chi {
        ChiArg::Chi1 => ChiConfig::Chi1,
        ChiArg::Chi2 => ChiConfig::Chi2,
    }
    .function();
    let mut plan = IncrementPlan::default().with_small_jumps(match a.small_jumps {
        SmallJumpArg::Drift => SmallJumps::DriftCompensate,
        SmallJumpArg::Gaussian => SmallJumps::GaussianSurrogate,
    });
    if let Some(t) = a.tau {
        plan = plan.with_tau(t);
    }
    let paths = euler_chain_simulate(&field, &chi, &a.run.start(field.dim())?, a.eps, &plan, &a.run.sim())?;
    write_csv(&a.out, &paths)?;
    Ok(Outcome {
        seed: Some(a.run.seed),
        config: to_value(a),
        inputs: vec![bytes],
        outputs: vec![a.out.clone()],
        report: None,
    })
}

fn load_potential(spec: &str, mesh: Option<f64>) -> Result<(Potential, Vec<u8>), Error> {
    let path = Path::new(spec);
    if path.is_file() {
        let bytes = read_input(path)?;
        let v = match mesh {
            Some(m) => read_increment_potential(&bytes[..], m)?,
            None => read_grid_potential(&bytes[..])?,
        };
        return Ok((v, bytes));
    }
    if spec == "zero" {
        return Ok((Potential::zero(), Vec::new()));
    }
    let e = Expr::parse(spec)?;
    e.check_dim(1)?;
    Ok((Potential::callable(move |x| e.eval(&[x])), Vec::new()))
}

fn simulate_potential(a: &PotentialArgs) -> Result<Outcome, Error> {
    let (v, bytes) = load_potential(&a.potential, a.mesh)?;
    let paths = potential_chain_simulate(&v, &a.run.start(1)?, a.eps, &PsiOptions::default(), &a.run.sim())?;
    write_csv(&a.out, &paths)?;
    Ok(Outcome {
        seed: Some(a.run.seed),
        config: to_value(a),
        inputs: vec![bytes],
        outputs: vec![a.out.clone()],
        report: None,
    })
}

fn parse_env(s: &str) -> Result<EnvironmentSpec, Error> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| {
        p.parse::<f64>()
            .map_err(|_| Error::Validation(format!("malformed number {p:?} in --env")))
    };
    match parts.as_slice() {
        ["iid", sigma] => Ok(EnvironmentSpec::IidScaled {
            base: BaseLaw::Gaussian,
            sigma: num(sigma)?,
        }),
        ["iid", sigma, base] => Ok(EnvironmentSpec::IidScaled {
            base: match *base {
                "gaussian" => BaseLaw::Gaussian,
                "rademacher" => BaseLaw::Rademacher,
                other => return Err(Error::Validation(format!("unknown base law {other:?}"))),
            },
            sigma: num(sigma)?,
        }),
        ["bernoulli", q, lambda] => Ok(EnvironmentSpec::BernoulliPoisson {
            q: num(q)?,
            lambda: num(lambda)?,
        }),
        _ => Err(Error::Validation(format!(
            "--env must be iid:SIGMA[:gaussian|rademacher] or bernoulli:Q:LAMBDA, got {s:?}"
        ))),
    }
}

fn simulate_rwre(a: &RwreArgs) -> Result<Outcome, Error> {
    let spec = parse_env(&a.env)?;
    let cfg = RwreConfig {
        eps: a.eps,
        horizon: a.run.horizon,
        environments: a.envs,
        paths_per_env: a.run.paths,
        seed: a.run.seed,
        grid: GridSpec::Uniform(a.run.grid_points),
        window: WindowPolicy::default(),
    };
    let runs = rwre_simulate(&spec, &a.run.start(1)?, &cfg)?;
    fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    for r in &runs {
        let p = a.out.join(format!("env_{}.csv", r.env));
        write_csv(&p, &r.paths)?;
        outputs.push(p);
    }
    let summary = quenched_summary(&runs, a.run.horizon)?;
    let windows: Vec<Value> = runs
        .iter()
        .map(|r| {
            json!({
                "env": r.env,
                "k_lo": r.k_lo,
                "k_hi": r.k_hi(),
                "exploded": r.paths.iter().filter(|p| p.exploded()).count(),
            })
        })
        .collect();
    let doc = json!({ "summary": summary, "environments": windows });
    let p = a.out.join("summary.json");
    write_json(&p, &doc)?;
    outputs.push(p);
    Ok(Outcome {
        seed: Some(a.run.seed),
        config: to_value(a),
        inputs: Vec::new(),
        outputs,
        report: None,
    })
}

fn finish_report(out: &Option<PathBuf>, report: Value) -> Result<(Vec<PathBuf>, Option<Value>), Error> {
    match out {
        Some(p) => {
            write_json(p, &report)?;
            Ok((vec![p.clone()], None))
        }
        None => Ok((Vec::new(), Some(report))),
    }
}

fn diagnose_operator(a: &OperatorArgs) -> Result<Outcome, Error> {
    let bytes = read_input(&a.config)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Config(e.to_string()))?;
    let report = OperatorConfig::from_json(&text)?.run()?;
    let (outputs, report) = finish_report(&a.out, to_value(&report))?;
    Ok(Outcome {
        seed: None,
        config: to_value(a),
        inputs: vec![bytes],
        outputs,
        report,
    })
}

fn diagnose_clock(a: &ClockArgs) -> Result<Outcome, Error> {
    let doob = doob_bound_check(a.eps, a.t, a.threshold, a.trials, a.seed)?;
    let coupling = coupling_check(a.eps, a.t, a.coupling_pairs, a.seed)?;
    let martingale = clock_martingale_check(&a.martingale_k, a.trials, a.seed)?;
    let report = json!({ "doob": doob, "coupling": coupling, "martingale": martingale });
    let (outputs, report) = finish_report(&a.out, report)?;
    Ok(Outcome {
        seed: Some(a.seed),
        config: to_value(a),
        inputs: Vec::new(),
        outputs,
        report,
    })
}

fn load_paths(path: &Path) -> Result<(Vec<PathRecord>, Vec<u8>), Error> {
    let bytes = read_input(path)?;
    Ok((read_paths(&bytes[..])?, bytes))
}

fn marginal_at(paths: &[PathRecord], t: Option<f64>, coord: usize) -> Result<(f64, Vec<f64>), Error> {
    let first = paths.first().ok_or_else(|| Error::Validation("path file is empty".into()))?;
    if coord == 0 || coord > first.dim() {
        return Err(Error::Validation(format!("--coord must lie in 1..={}", first.dim())));
    }
    let i = match t {
        Some(t) => first.nearest_index(t),
        None => first.len() - 1,
    };
    Ok((first.times()[i], marginal(paths, i, coord - 1)))
}

fn diagnose_paths(a: &PathsArgs) -> Result<Outcome, Error> {
    let (paths, bytes) = load_paths(&a.input)?;
    let mut inputs = vec![bytes];
    let explosion = explosion_stats(&paths)?;
    let (t, xs) = marginal_at(&paths, a.t, a.coord)?;
    let (mean, se) = if xs.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&xs) };
    let mut report = json!({
        "paths": paths.len(),
        "t": t,
        "alive": xs.len(),
        "mean": mean,
        "mean_se": se,
        "explosion": explosion,
    });
    if let Some(r) = &a.reference {
        let (ref_paths, ref_bytes) = load_paths(r)?;
        inputs.push(ref_bytes);
        let (_, ys) = marginal_at(&ref_paths, Some(t), a.coord)?;
        report["two_sample"] = to_value(&two_sample_report(&xs, &ys)?);
    }
    if let Some(spec) = &a.normal {
        let (m, v) = spec
            .split_once(':')
            .and_then(|(m, v)| Some((m.parse::<f64>().ok()?, v.parse::<f64>().ok()?)))
            .ok_or_else(|| Error::Validation(format!("--normal must be MEAN:VAR, got {spec:?}")))?;
        let n = Normal::new(m, v.sqrt()).map_err(|e| Error::Validation(e.to_string()))?;
        report["normal"] = to_value(&ks_one_sample(&xs, |x| n.cdf(x))?);
    }
    let (outputs, report) = finish_report(&a.out, report)?;
    Ok(Outcome {
        seed: None,
        config: to_value(a),
        inputs,
        outputs,
        report,
    })
}

fn config_hash(command: &str, config: &Value, inputs: &[Vec<u8>]) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(config.to_string().as_bytes());
    for i in inputs {
        h.update((i.len() as u64).to_le_bytes());
        h.update(i);
    }
    hex::encode(h.finalize())
}

fn run(cli: Cli) -> Result<(), Error> {
    let started = Instant::now();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let (name, outcome) = match &cli.command {
        Command::SimulateStable(a) => ("simulate-stable", simulate_stable(a)?),
        Command::SimulateEuler(a) => ("simulate-euler", simulate_euler(a)?),
        Command::SimulatePotential(a) => ("simulate-potential", simulate_potential(a)?),
        Command::SimulateRwre(a) => ("simulate-rwre", simulate_rwre(a)?),
        Command::DiagnoseOperator(a) => ("diagnose-operator", diagnose_operator(a)?),
        Command::DiagnoseClock(a) => ("diagnose-clock", diagnose_clock(a)?),
        Command::DiagnosePaths(a) => ("diagnose-paths", diagnose_paths(a)?),
    };
    let mut manifest = json!({
        "command": name,
        "seed": outcome.seed,
        "config_hash": config_hash(name, &outcome.config, &outcome.inputs),
        "config": outcome.config,
        "versions": { "levylab": env!("CARGO_PKG_VERSION") },
        "platform": format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
        "threads": rayon::current_num_threads(),
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "outputs": outcome.outputs,
    });
    if let Some(r) = outcome.report {
        manifest["report"] = r;
    }
    // A closed stdout is not a failure of the run.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&manifest).expect("serializable"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let benign = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if benign { ExitCode::SUCCESS } else { ExitCode::from(USAGE_EXIT) };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("levylab: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
