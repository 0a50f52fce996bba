use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use qaoa_featsel::classify::evaluate_selection;
use qaoa_featsel::dataset::{load_dataset, DataFormat};
use qaoa_featsel::qubo::{read_qubo, write_qubo, SelectionMask};
use qaoa_featsel::runner::{
    build_problem, dataset_name, prepare, run_experiment, solve_with, sweep_depth, write_outputs,
    AlphaRule, ExperimentConfig, ExperimentOutput, KRule, QuboMethod, SolverKind,
};

#[derive(Parser)]
#[command(name = "qaoa-featsel", version, about = "QUBO feature selection with simulated QAOA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a (penalized) QUBO from a dataset's training split and write it as text.
    BuildQubo {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        method: QuboMethod,
        #[arg(long)]
        out: PathBuf,
        /// Write Q without the cardinality penalty.
        #[arg(long)]
        no_penalty: bool,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Solve a QUBO text file and print the report as JSON.
    Solve {
        #[arg(long)]
        qubo: PathBuf,
        #[arg(long)]
        solver: SolverKind,
        /// QAOA depth.
        #[arg(long, default_value_t = 1)]
        depth: usize,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Train and score forests on a fixed feature mask; prints JSON.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Bitstring, character i selects feature i.
        #[arg(long)]
        mask: String,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Run the dataset x method x solver grid and write the result files.
    Experiment {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Repeated QAOA selection and evaluation for every depth in the range.
    SweepDepth {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config, or manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Dataset file (repeatable); replaces the config's list.
    #[arg(long = "dataset")]
    datasets: Vec<PathBuf>,
    /// QUBO method (repeatable); replaces the config's list.
    #[arg(long = "method")]
    methods: Vec<QuboMethod>,
    /// Solver (repeatable); replaces the config's list.
    #[arg(long = "solver")]
    solvers: Vec<SolverKind>,
    #[arg(long)]
    depth_min: Option<usize>,
    #[arg(long)]
    depth_max: Option<usize>,
    #[arg(long)]
    n_folds: Option<usize>,
    #[command(flatten)]
    opts: Overrides,
}

/// Flags shared by every verb; unset flags keep the config value.
#[derive(Args)]
struct Overrides {
    /// `half_ceil` or an explicit count.
    #[arg(long)]
    k: Option<KRule>,
    /// Penalty weight, or `auto`.
    #[arg(long)]
    alpha: Option<AlphaRule>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    n_bins: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_evals: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(b) = self.n_bins {
            cfg.n_bins = b;
        }
        if let Some(s) = self.shots {
            cfg.shots = s;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(f) = self.train_fraction {
            cfg.train_fraction = f;
        }
        if let Some(t) = self.n_trees {
            cfg.forest.n_trees = t;
        }
        if let Some(m) = self.max_evals {
            cfg.optimizer.max_evals = m;
        }
    }

    fn config(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        self.apply(&mut cfg);
        cfg
    }
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if !self.datasets.is_empty() {
            cfg.datasets = self.datasets.clone();
        }
        if !self.methods.is_empty() {
            cfg.methods = self.methods.clone();
        }
        if !self.solvers.is_empty() {
            cfg.solvers = self.solvers.clone();
        }
        if let Some(lo) = self.depth_min {
            cfg.depth_range.0 = lo;
        }
        if let Some(hi) = self.depth_max {
            cfg.depth_range.1 = hi;
        }
        if let Some(f) = self.n_folds {
            cfg.n_folds = f;
        }
        self.opts.apply(&mut cfg);
        Ok(cfg)
    }
}

fn finish(out: &ExperimentOutput, cfg: &ExperimentConfig, dir: &PathBuf) -> Result<bool> {
    let written = write_outputs(out, cfg, dir)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    for f in &out.failures {
        eprintln!(
            "failed: {}/{}/{}{}: {}",
            f.dataset,
            f.method,
            f.solver.map(|s| s.to_string()).unwrap_or_default(),
            f.depth.map(|p| format!(" p={p}")).unwrap_or_default(),
            f.error
        );
    }
    Ok(out.all_succeeded())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::BuildQubo {
            dataset,
            method,
            out,
            no_penalty,
            opts,
        } => {
            let cfg = opts.config();
            let d = load_dataset(&dataset, DataFormat::from_path(&dataset))?;
            let prep = prepare(&d, &dataset_name(&dataset), method, &cfg)?;
            let problem = if no_penalty {
                build_problem(&prep.train, method, cfg.n_bins, cfg.lambda)?
            } else {
                prep.problem
            };
            write_qubo(&problem, &out)?;
            println!("wrote {} (n = {}, k = {}, alpha = {})", out.display(), problem.n(), prep.k, prep.alpha);
            Ok(true)
        }
        Command::Solve {
            qubo,
            solver,
            depth,
            opts,
        } => {
            let cfg = opts.config();
            let problem = read_qubo(&qubo)?;
            let report = solve_with(&problem, solver, &cfg, depth, cfg.seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
        Command::Evaluate { dataset, mask, opts } => {
            let cfg = opts.config();
            let d = load_dataset(&dataset, DataFormat::from_path(&dataset))?;
            let mask = SelectionMask::from_bitstring(&mask)?;
            let forest = qaoa_featsel::classify::ForestConfig {
                seed: cfg.seed,
                ..cfg.forest
            };
            let report = evaluate_selection(&d, &mask, &cfg.split(), cfg.repeats, &forest)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
        Command::Experiment { run } => {
            let cfg = run.config()?;
            let out = run_experiment(&cfg)?;
            finish(&out, &cfg, &run.out)
        }
        Command::SweepDepth { run } => {
            let mut cfg = run.config()?;
            cfg.solvers = vec![SolverKind::Qaoa];
            let out = sweep_depth(&cfg)?;
            finish(&out, &cfg, &run.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
