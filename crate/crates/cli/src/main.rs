use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qmng::full_models::{ModelKind, Scale};
use qmng::harness::bench::{benchmark_online, write_benchmark_csv, BenchmarkOptions};
use qmng::harness::config::{CollocationConfig, ParamSpec};
use qmng::harness::pipeline::{self, ErrorReport};
use qmng::harness::{run_experiment, ExperimentConfig, Method};
use qmng::reduced_interp::Strategy;
use qmng::reduced_vector::Scheme;

#[derive(Parser)]
#[command(name = "qmng", version, about = "Quadratic-manifold Neural Galerkin reduced models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the full model at training and test parameters.
    Generate(ConfigArgs),
    /// Fit quadratic manifolds to the training snapshots.
    Train(ConfigArgs),
    /// Assemble the online operators of linear models.
    Precompute(ConfigArgs),
    /// Integrate the reduced models at the test parameters.
    Simulate(ConfigArgs),
    /// Compare reduced trajectories against the test snapshots.
    Evaluate(ConfigArgs),
    /// Time the online step of the precomputed reduced model.
    Benchmark(BenchArgs),
    /// Run every stage in sequence.
    Sweep(ConfigArgs),
}

/// Experiment settings. Flags override values from `--config`.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    scale: Option<Scale>,
    /// Grid points per axis.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Number of equidistant training parameters.
    #[arg(long, conflicts_with = "training_list")]
    training_count: Option<usize>,
    /// Explicit training parameters.
    #[arg(long, value_delimiter = ',')]
    training_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    test_params: Option<Vec<f64>>,
    #[arg(long)]
    snapshot_stride: Option<usize>,
    /// Reduced dimensions.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Greedy candidate pool size.
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long)]
    greedy_subsample: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Collocation settings as `m` or `m:strategy`.
    #[arg(long, value_delimiter = ',', value_parser = parse_collocation)]
    collocation: Option<Vec<CollocationConfig>>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Sum per-step errors instead of averaging them.
    #[arg(long)]
    literal_error: bool,
    /// Write zero timings for byte-reproducible reports.
    #[arg(long)]
    no_timings: bool,
    #[arg(long)]
    memory_budget_bytes: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Grid points per axis of each benchmarked size.
    #[arg(long, value_delimiter = ',', default_value = "64,128")]
    sizes: Vec<usize>,
    /// Reduced dimensions to time.
    #[arg(long, value_delimiter = ',', default_value = "10,20,40")]
    bench_n: Vec<usize>,
    #[arg(long, default_value_t = qmng::harness::bench::MIN_REPETITIONS)]
    repetitions: usize,
}

fn parse_collocation(s: &str) -> std::result::Result<CollocationConfig, String> {
    let (m, strategy) = match s.split_once(':') {
        Some((m, st)) => (m, st.parse::<Strategy>().map_err(|e| e.to_string())?),
        None => (s, Strategy::default()),
    };
    let m = m.parse().map_err(|e| format!("collocation count '{m}': {e}"))?;
    Ok(CollocationConfig { m, strategy })
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(seed, model, scale, n, gamma, greedy_subsample, methods, collocation, scheme, output_dir, memory_budget_bytes);
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    cfg.$field = self.$field.clone();
                }
            )*};
        }
        set_opt!(points, t_end, test_params, snapshot_stride, pool);
        if let Some(c) = self.training_count {
            cfg.training_params = Some(ParamSpec::Count(c));
        }
        if let Some(l) = &self.training_list {
            cfg.training_params = Some(ParamSpec::List(l.clone()));
        }
        cfg.literal_error |= self.literal_error;
        if self.no_timings {
            cfg.record_timings = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_report(report: &ErrorReport) {
    println!("{:<10} {:>4} {:<34} {:>12} {:>12} {:>8}", "model", "n", "method", "error", "std", "unstable");
    for r in &report.rows {
        println!(
            "{:<10} {:>4} {:<34} {:>12.4e} {:>12.4e} {:>8}",
            r.model, r.n, r.method, r.error_mean, r.error_std, r.unstable_count
        );
    }
    for f in &report.failures {
        eprintln!("failed: {f}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.resolve()?;
            let data = pipeline::generate(&cfg, &cfg.full_model()?)?;
            println!(
                "wrote {} training and {} test snapshots",
                data.train.ncols(),
                data.test.ncols()
            );
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let data = pipeline::load_generated(&cfg)?;
            for m in pipeline::train(&cfg, &data.train)? {
                println!("n = {}: selected pool indices {:?}", m.n(), m.metadata().selected);
            }
        }
        Command::Precompute(args) => {
            let cfg = args.resolve()?;
            let model = cfg.full_model()?;
            if !model.kind().is_linear() {
                bail!("{} is nonlinear; nothing to precompute", cfg.model.name());
            }
            let manifolds = pipeline::load_manifolds(&cfg)?;
            let store = pipeline::precompute(&cfg, &model, &manifolds)?;
            println!("wrote {} operator sets", store.len());
            for f in &store.failures {
                eprintln!("failed: {f}");
            }
        }
        Command::Simulate(args) => {
            let cfg = args.resolve()?;
            let model = cfg.full_model()?;
            let manifolds = pipeline::load_manifolds(&cfg)?;
            let store = pipeline::load_operators(&cfg, &model)?;
            let (runs, failures) = pipeline::simulate(&cfg, &model, &manifolds, &store);
            for run in &runs {
                let unstable = run.trajectories.iter().filter(|t| !t.is_complete()).count();
                println!("n = {}, {}: {} unstable", run.n, run.cell.label(), unstable);
            }
            for f in &failures {
                eprintln!("failed: {f}");
            }
        }
        Command::Evaluate(args) => {
            let cfg = args.resolve()?;
            print_report(&pipeline::evaluate_from_disk(&cfg)?);
        }
        Command::Sweep(args) => {
            let cfg = args.resolve()?;
            print_report(&run_experiment(&cfg)?);
            println!("report written to {}", cfg.output_dir.join("report.csv").display());
        }
        Command::Benchmark(args) => {
            let cfg = args.config.resolve()?;
            let opts = BenchmarkOptions {
                points: args.sizes,
                ns: args.bench_n,
                repetitions: args.repetitions,
                ..Default::default()
            };
            let rows = benchmark_online(&cfg, &opts)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("benchmark.csv");
            write_benchmark_csv(&path, &rows)?;
            println!("{:>7} {:>9} {:>4} {:>14} {:>14} {:>9}", "points", "N", "n", "reduced [s]", "full [s]", "speedup");
            for r in &rows {
                println!(
                    "{:>7} {:>9} {:>4} {:>14.4e} {:>14.4e} {:>9.1}",
                    r.points, r.full_dim, r.n, r.reduced_step_seconds, r.full_step_seconds, r.speedup
                );
            }
            println!("timings written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
