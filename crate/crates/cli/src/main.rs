use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use semilsm::eval::{g_error, max_elementwise_error, procrustes};
use semilsm::experiment::{run_experiment, Estimator, ExperimentSpec, GridCell, Scenario};
use semilsm::ingest::{ingest_csv, parse_timestamp, IngestConfig};
use semilsm::init::{initialize, InitConfig};
use semilsm::io::{read_json, read_matrix_csv, read_tensor, write_json, write_matrix_csv, write_tensor};
use semilsm::onestep::{one_step, BasisMethod};
use semilsm::pipeline::{fit_real, FitConfig, Method};
use semilsm::simulate::{simulate, AlphaCase, SimConfig};
use semilsm::{Baseline, InfoMode, LatentPositions, ModelBounds};

#[derive(Parser)]
#[command(name = "semilsm", version, about = "Longitudinal Poisson latent space network models")]
struct Cli {
    /// Random seed (simulation seed, or master seed for experiments).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON configuration; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a count tensor with known latent positions and baselines.
    Simulate(SimulateArgs),
    /// Two-stage initial estimate of (Z, alpha).
    Init(InitArgs),
    /// Fit the one-step or the penalized likelihood estimator.
    Fit(FitArgs),
    /// Compare an estimate with the truth.
    Eval(EvalArgs),
    /// Monte Carlo experiment over an (n, T) grid.
    Experiment(ExperimentArgs),
    /// Aggregate a trip log into hourly count slices.
    Ingest(IngestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    Uniform,
    TwoBlock,
}

impl From<CaseArg> for AlphaCase {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Uniform => AlphaCase::Uniform,
            CaseArg::TwoBlock => AlphaCase::TwoBlock,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    alpha_case: Option<CaseArg>,
}

#[derive(Args)]
struct BoundArgs {
    /// Bound on squared latent norms.
    #[arg(long)]
    m_z1: Option<f64>,
    /// Bound on |alpha|.
    #[arg(long)]
    m_alpha: Option<f64>,
}

impl BoundArgs {
    fn apply(&self, current: Option<ModelBounds>) -> Result<Option<ModelBounds>> {
        if self.m_z1.is_none() && self.m_alpha.is_none() {
            return Ok(current);
        }
        let m_z1 = self
            .m_z1
            .or(current.map(|b| b.m_z1))
            .context("--m-alpha needs --m-z1 as well")?;
        let m_alpha = self.m_alpha.or(current.map(|b| b.m_alpha)).unwrap_or(4.0);
        Ok(Some(ModelBounds::new(m_z1, m_alpha, 0.0)?))
    }
}

#[derive(Args)]
struct InitArgs {
    /// Tensor manifest.
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    pgd_max_iters: Option<usize>,
    #[arg(long)]
    pgd_tol: Option<f64>,
    #[command(flatten)]
    bounds: BoundArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Onestep,
    Pmle,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fisher,
    Observed,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    AnalyticComplement,
    EigenThreshold,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    tensor: PathBuf,
    #[arg(long, value_enum, default_value = "onestep")]
    method: MethodArg,
    /// Latent dimension; for pmle it is chosen by rank selection when absent.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda_mult: Option<f64>,
    #[arg(long)]
    rank_eps: Option<f64>,
    /// Number of one-step updates.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    basis: Option<BasisArg>,
    /// Initial Z (CSV); skips the initializer for the one-step fit.
    #[arg(long, requires = "alpha_init")]
    z_init: Option<PathBuf>,
    /// Initial alpha (CSV, n x T).
    #[arg(long, requires = "z_init")]
    alpha_init: Option<PathBuf>,
    #[command(flatten)]
    bounds: BoundArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    z_hat: PathBuf,
    #[arg(long)]
    z_star: PathBuf,
    #[arg(long)]
    alpha_hat: Option<PathBuf>,
    #[arg(long)]
    alpha_star: Option<PathBuf>,
    /// Estimated G; `Z_hat Z_hat^T` when absent.
    #[arg(long)]
    g_hat: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    VaryT,
    VaryN,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Grid cells as `n x T` pairs, e.g. `100x5,100x10`.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    estimators: Option<Vec<MethodArg>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum)]
    alpha_case: Option<CaseArg>,
    #[arg(long)]
    lambda_mult: Option<f64>,
}

#[derive(Args)]
struct IngestArgs {
    /// Trip CSV with columns start_id,end_id,start_time,duration_s.
    #[arg(long)]
    trips: PathBuf,
    /// Window start (epoch seconds or `YYYY-MM-DD HH:MM:SS`, UTC).
    #[arg(long)]
    window_start: Option<String>,
    /// Window end, exclusive.
    #[arg(long)]
    window_end: Option<String>,
    #[arg(long)]
    bin_width: Option<i64>,
    #[arg(long)]
    min_duration: Option<f64>,
    #[arg(long)]
    max_duration: Option<f64>,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(read_json(p)?),
        None => Ok(T::default()),
    }
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => read_json::<SimConfig>(p)?,
        None => SimConfig {
            n: 100,
            t: 20,
            k: 2,
            alpha_case: AlphaCase::Uniform,
            seed: 0,
            bounds: None,
        },
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(t) = args.t {
        cfg.t = t;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(c) = args.alpha_case {
        cfg.alpha_case = c.into();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let sim = simulate(&cfg)?;
    let manifest = write_tensor(&cli.out.join("tensor"), &sim.counts)?;
    write_matrix_csv(&cli.out.join("Z_star.csv"), sim.z_star.matrix())?;
    write_matrix_csv(&cli.out.join("alpha_star.csv"), sim.alpha_star.matrix())?;
    let resolved = SimConfig {
        bounds: Some(sim.bounds),
        ..cfg
    };
    write_json(&cli.out.join("sim_config.json"), &resolved)?;
    println!("wrote {} (total events {})", manifest.display(), sim.counts.total_events());
    Ok(())
}

fn cmd_init(cli: &Cli, args: &InitArgs) -> Result<()> {
    let mut cfg: InitConfig = load_config(cli.config.as_deref())?;
    if let Some(v) = args.pgd_max_iters {
        cfg.pgd_max_iters = v;
    }
    if let Some(v) = args.pgd_tol {
        cfg.pgd_tol = v;
    }
    cfg.bounds = args.bounds.apply(cfg.bounds)?;
    let a = read_tensor(&args.tensor)?;
    let res = initialize(&a, args.k, &cfg)?;
    write_matrix_csv(&cli.out.join("Z_init.csv"), res.z.matrix())?;
    write_matrix_csv(&cli.out.join("alpha_init.csv"), res.alpha.matrix())?;
    write_json(&cli.out.join("init_trace.json"), &res.trace)?;
    println!(
        "init: {} PGD iterations, converged {}, log-likelihood {:.6}",
        res.trace.iterations,
        res.trace.converged,
        res.trace.loglik.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let mut cfg: FitConfig = load_config(cli.config.as_deref())?;
    if let Some(v) = args.lambda_mult {
        cfg.pmle.lambda_mult = v;
    }
    if let Some(v) = args.rank_eps {
        cfg.pmle.rank_eps = v;
    }
    if let Some(v) = args.steps {
        cfg.onestep.steps = v;
    }
    if let Some(m) = args.mode {
        cfg.onestep.mode = match m {
            ModeArg::Fisher => InfoMode::Fisher,
            ModeArg::Observed => InfoMode::Observed,
        };
    }
    if let Some(b) = args.basis {
        cfg.onestep.basis_method = match b {
            BasisArg::AnalyticComplement => BasisMethod::AnalyticComplement,
            BasisArg::EigenThreshold => BasisMethod::EigenThreshold,
        };
    }
    cfg.init.bounds = args.bounds.apply(cfg.init.bounds)?;
    let method = match args.method {
        MethodArg::Onestep => Method::Onestep,
        MethodArg::Pmle => Method::Pmle,
    };

    if let (Some(zp), Some(ap)) = (&args.z_init, &args.alpha_init) {
        if !matches!(method, Method::Onestep) {
            bail!("--z-init/--alpha-init apply to the one-step fit only");
        }
        let a = read_tensor(&args.tensor)?;
        let z0 = LatentPositions::new(read_matrix_csv(zp)?);
        let alpha0 = Baseline::new(read_matrix_csv(ap)?);
        let (z, diag) = one_step(&a, &z0, &alpha0, &cfg.onestep)?;
        write_matrix_csv(&cli.out.join("Z.csv"), z.matrix())?;
        write_json(&cli.out.join("diagnostics.json"), &diag)?;
        println!("one-step update norms {:?}", diag.update_norms);
        return Ok(());
    }

    let report = fit_real(&args.tensor, method, args.k, &cfg, &cli.out)?;
    match report.k_hat {
        Some(kh) => println!("fit: k_hat = {kh}, log-likelihood {:.6}", report.log_likelihood),
        None => println!("fit: k = {}, log-likelihood {:.6}", report.k, report.log_likelihood),
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let z_hat = read_matrix_csv(&args.z_hat)?;
    let z_star = read_matrix_csv(&args.z_star)?;
    let al = procrustes(&z_hat, &z_star)?;
    let g_hat = match &args.g_hat {
        Some(p) => read_matrix_csv(p)?,
        None => &z_hat * z_hat.transpose(),
    };
    let g_err = g_error(&g_hat, &(&z_star * z_star.transpose()))?;
    let max_err = match (&args.alpha_hat, &args.alpha_star) {
        (Some(h), Some(s)) => Some(max_elementwise_error(
            &z_hat,
            &read_matrix_csv(h)?,
            &z_star,
            &read_matrix_csv(s)?,
        )?),
        (None, None) => None,
        _ => bail!("--alpha-hat and --alpha-star go together"),
    };
    let metrics = serde_json::json!({
        "dist_sq": al.dist_sq,
        "per_row": al.per_row.as_slice(),
        "g_error": g_err,
        "max_elementwise_error": max_err,
    });
    write_json(&cli.out.join("metrics.json"), &metrics)?;
    println!("dist_sq {:.6e}, g_error {:.6e}", al.dist_sq, g_err);
    Ok(())
}

fn parse_cell(s: &str) -> Result<GridCell> {
    let (n, t) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("grid cell {s:?} is not of the form NxT"))?;
    Ok(GridCell {
        n: n.trim().parse()?,
        t: t.trim().parse()?,
    })
}

fn cmd_experiment(cli: &Cli, args: &ExperimentArgs) -> Result<bool> {
    let mut spec = match &cli.config {
        Some(p) => read_json::<ExperimentSpec>(p)?,
        None => ExperimentSpec {
            scenario: Scenario::VaryT,
            grid: vec![],
            k_list: vec![2],
            alpha_case: AlphaCase::Uniform,
            estimators: vec![Estimator::Onestep],
            reps: 50,
            master_seed: 0,
            init: InitConfig::default(),
            onestep: Default::default(),
            pmle: Default::default(),
        },
    };
    if let Some(s) = args.scenario {
        spec.scenario = match s {
            ScenarioArg::VaryT => Scenario::VaryT,
            ScenarioArg::VaryN => Scenario::VaryN,
        };
    }
    if let Some(g) = &args.grid {
        spec.grid = g.iter().map(|c| parse_cell(c)).collect::<Result<_>>()?;
    }
    if let Some(k) = &args.k_list {
        spec.k_list = k.clone();
    }
    if let Some(e) = &args.estimators {
        spec.estimators = e
            .iter()
            .map(|m| match m {
                MethodArg::Onestep => Estimator::Onestep,
                MethodArg::Pmle => Estimator::Pmle,
            })
            .collect();
    }
    if let Some(r) = args.reps {
        spec.reps = r;
    }
    if let Some(c) = args.alpha_case {
        spec.alpha_case = c.into();
    }
    if let Some(l) = args.lambda_mult {
        spec.pmle.lambda_mult = l;
    }
    if let Some(s) = cli.seed {
        spec.master_seed = s;
    }
    let report = run_experiment(&spec)?;
    report.write(&cli.out)?;
    write_json(&cli.out.join("spec.json"), &spec)?;
    for s in &report.summary.slopes {
        println!(
            "{} k={} n={}: slope {:.3} (r^2 {:.3})",
            s.estimator.name(),
            s.k,
            s.fixed,
            s.fit.slope,
            s.fit.r_squared
        );
    }
    for f in &report.summary.flatness {
        println!("{} k={} T={}: max/min {:.3}", f.estimator.name(), f.k, f.t, f.ratio);
    }
    if let Err(e) = report.check_failures() {
        eprintln!("error: {e}");
        return Ok(false);
    }
    Ok(true)
}

fn cmd_ingest(cli: &Cli, args: &IngestArgs) -> Result<()> {
    let mut cfg: IngestConfig = load_config(cli.config.as_deref())?;
    let ts = |s: &str| parse_timestamp(s).map(|v| v.floor() as i64).with_context(|| format!("bad timestamp {s:?}"));
    if let Some(s) = &args.window_start {
        cfg.window_start = ts(s)?;
    }
    if let Some(s) = &args.window_end {
        cfg.window_end = ts(s)?;
    }
    if let Some(v) = args.bin_width {
        cfg.bin_width = v;
    }
    if let Some(v) = args.min_duration {
        cfg.min_duration = v;
    }
    if let Some(v) = args.max_duration {
        cfg.max_duration = v;
    }
    let file = std::fs::File::open(&args.trips).with_context(|| format!("opening {}", args.trips.display()))?;
    let res = ingest_csv(std::io::BufReader::new(file), &cfg)?;
    let manifest = write_tensor(&cli.out.join("tensor"), &res.tensor)?;
    let mut w = csv::Writer::from_path(cli.out.join("nodes.csv"))?;
    w.write_record(["index", "id"])?;
    for (i, id) in res.node_index.iter().enumerate() {
        w.write_record([i.to_string(), id.clone()])?;
    }
    w.flush()?;
    let summary = serde_json::json!({
        "n": res.tensor.n(),
        "T": res.tensor.n_times(),
        "kept": res.kept,
        "filtered": res.filtered,
        "malformed": res.malformed,
        "config": cfg,
    });
    write_json(&cli.out.join("ingest_report.json"), &summary)?;
    println!(
        "wrote {}: n = {}, T = {}, {} trips kept, {} filtered, {} malformed",
        manifest.display(),
        res.tensor.n(),
        res.tensor.n_times(),
        res.kept,
        res.filtered,
        res.malformed
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, a)?,
        Command::Init(a) => cmd_init(cli, a)?,
        Command::Fit(a) => cmd_fit(cli, a)?,
        Command::Eval(a) => cmd_eval(cli, a)?,
        Command::Experiment(a) => return cmd_experiment(cli, a),
        Command::Ingest(a) => cmd_ingest(cli, a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
