//! Experiment orchestration: the solver/method/dataset grid, the depth sweep
//! and the result files (csv, markdown, sweep data, manifest).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{accuracy, cv_score, evaluate_on_split, mean_std, train_forest, ForestConfig};
use crate::dataset::{load_dataset, make_folds, split_train_test, DataFormat, SplitSpec, TabularDataset};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::optimizer::OptimizerConfig;
use crate::qaoa::{run_qaoa, ObjectiveMode, QaoaConfig, ShotConfig};
use crate::qubo::{
    apply_cardinality_penalty, build_boosting_qubo, build_correlation_qubo, build_mi_qubo,
    qubo_energy, BoostingConfig, QuboProblem, SelectionMask,
};
use crate::solvers::{
    solve_exhaustive, solve_simulated_annealing, solve_steepest_descent_seeded, solve_tabu_search,
    AnnealingConfig, SolveReport, SteepestDescentConfig, TabuConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuboMethod {
    Correlation,
    MutualInfo,
    Boosting,
}

impl QuboMethod {
    pub const ALL: [QuboMethod; 3] = [Self::Correlation, Self::MutualInfo, Self::Boosting];

    pub fn name(self) -> &'static str {
        match self {
            Self::Correlation => "correlation",
            Self::MutualInfo => "mutual_info",
            Self::Boosting => "boosting",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exhaustive,
    Sa,
    Sd,
    Tabu,
    Qaoa,
}

impl SolverKind {
    pub const ALL: [SolverKind; 5] = [Self::Exhaustive, Self::Sa, Self::Sd, Self::Tabu, Self::Qaoa];

    pub fn name(self) -> &'static str {
        match self {
            Self::Exhaustive => "exhaustive",
            Self::Sa => "sa",
            Self::Sd => "sd",
            Self::Tabu => "tabu",
            Self::Qaoa => "qaoa",
        }
    }
}

macro_rules! name_parsing {
    ($ty:ty, $what:literal) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .into_iter()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| Error::Config(format!("unknown {} '{s}'", $what)))
            }
        }
    };
}

name_parsing!(QuboMethod, "QUBO method");
name_parsing!(SolverKind, "solver");

/// Target number of selected features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "KRuleRepr", into = "KRuleRepr")]
pub enum KRule {
    /// `ceil(n / 2)`
    HalfCeil,
    Explicit(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KRuleRepr {
    Count(usize),
    Name(String),
}

impl TryFrom<KRuleRepr> for KRule {
    type Error = String;

    fn try_from(r: KRuleRepr) -> std::result::Result<Self, String> {
        match r {
            KRuleRepr::Count(k) => Ok(KRule::Explicit(k)),
            KRuleRepr::Name(s) if s == "half_ceil" => Ok(KRule::HalfCeil),
            KRuleRepr::Name(s) => Err(format!("unknown k rule '{s}'")),
        }
    }
}

impl From<KRule> for KRuleRepr {
    fn from(k: KRule) -> Self {
        match k {
            KRule::HalfCeil => KRuleRepr::Name("half_ceil".into()),
            KRule::Explicit(k) => KRuleRepr::Count(k),
        }
    }
}

impl KRule {
    pub fn resolve(self, n: usize) -> Result<usize> {
        let k = match self {
            KRule::HalfCeil => n.div_ceil(2),
            KRule::Explicit(k) => k,
        };
        if k < 1 || k > n {
            return Err(Error::Config(format!("k = {k} out of range for n = {n}")));
        }
        Ok(k)
    }
}

impl FromStr for KRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "half_ceil" {
            return Ok(KRule::HalfCeil);
        }
        s.parse()
            .map(KRule::Explicit)
            .map_err(|_| Error::Config(format!("k must be 'half_ceil' or a count, got '{s}'")))
    }
}

/// Penalty weight: a fixed value, or `auto` = just above the largest
/// single-flip change of the unpenalized objective, which guarantees that
/// every minimizer has exactly k ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlphaRepr", into = "AlphaRepr")]
pub enum AlphaRule {
    Fixed(f64),
    Auto,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AlphaRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<AlphaRepr> for AlphaRule {
    type Error = String;

    fn try_from(r: AlphaRepr) -> std::result::Result<Self, String> {
        match r {
            AlphaRepr::Value(a) => Ok(AlphaRule::Fixed(a)),
            AlphaRepr::Name(s) if s == "auto" => Ok(AlphaRule::Auto),
            AlphaRepr::Name(s) => Err(format!("unknown alpha '{s}'")),
        }
    }
}

impl From<AlphaRule> for AlphaRepr {
    fn from(a: AlphaRule) -> Self {
        match a {
            AlphaRule::Fixed(a) => AlphaRepr::Value(a),
            AlphaRule::Auto => AlphaRepr::Name("auto".into()),
        }
    }
}

impl AlphaRule {
    pub fn resolve(self, unpenalized: &QuboProblem) -> f64 {
        match self {
            AlphaRule::Fixed(a) => a,
            AlphaRule::Auto => unpenalized.max_flip_magnitude() + 1e-6,
        }
    }
}

impl FromStr for AlphaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(AlphaRule::Auto);
        }
        s.parse()
            .map(AlphaRule::Fixed)
            .map_err(|_| Error::Config(format!("alpha must be 'auto' or a number, got '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<PathBuf>,
    pub methods: Vec<QuboMethod>,
    pub solvers: Vec<SolverKind>,
    pub k: KRule,
    /// Inclusive QAOA depth range.
    pub depth_range: (usize, usize),
    pub shots: usize,
    pub repeats: usize,
    pub n_folds: usize,
    pub train_fraction: f64,
    pub alpha: AlphaRule,
    pub lambda: f64,
    pub n_bins: usize,
    /// Base seed; every cell derives its own streams from it.
    pub seed: u64,
    pub objective: ObjectiveMode,
    pub annealing: AnnealingConfig,
    pub tabu: TabuConfig,
    pub steepest_descent: SteepestDescentConfig,
    pub optimizer: OptimizerConfig,
    pub forest: ForestConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            methods: QuboMethod::ALL.to_vec(),
            solvers: SolverKind::ALL.to_vec(),
            k: KRule::HalfCeil,
            depth_range: (1, 10),
            shots: 100,
            repeats: 5,
            n_folds: 5,
            train_fraction: 0.7,
            alpha: AlphaRule::Fixed(1.0),
            lambda: BoostingConfig::default().lambda,
            n_bins: crate::dataset::DEFAULT_BINS,
            seed: 0,
            objective: ObjectiveMode::Sampled,
            annealing: AnnealingConfig::default(),
            tabu: TabuConfig::default(),
            steepest_descent: SteepestDescentConfig::default(),
            optimizer: OptimizerConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_owned()));
        if self.datasets.is_empty() {
            return bad("no datasets");
        }
        if self.methods.is_empty() || self.solvers.is_empty() {
            return bad("methods and solvers must be non-empty");
        }
        if self.shots < 1 || self.repeats < 1 || self.forest.n_trees < 1 {
            return bad("shots, repeats and forest.n_trees must be >= 1");
        }
        if self.n_folds < 2 {
            return bad("n_folds must be >= 2");
        }
        if self.n_bins < 2 {
            return bad("n_bins must be >= 2");
        }
        if self.lambda < 0.0 {
            return bad("lambda must be >= 0");
        }
        if let AlphaRule::Fixed(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad("alpha must be positive");
            }
        }
        if let KRule::Explicit(0) = self.k {
            return bad("k must be >= 1");
        }
        let (lo, hi) = self.depth_range;
        if self.solvers.contains(&SolverKind::Qaoa) && (lo < 1 || lo > hi) {
            return bad("depth_range must be a non-empty range of depths >= 1");
        }
        self.optimizer.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a `.toml` config, or the `config` entry of a `manifest.json`
    /// written by a previous run.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let cfg = manifest
                .get("config")
                .ok_or_else(|| Error::Config("manifest has no config entry".into()))?;
            return serde_json::from_value(cfg.clone()).map_err(|e| Error::Config(e.to_string()));
        }
        Self::from_toml_str(&text)
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: QuboMethod,
    pub dataset: String,
    pub n: usize,
    pub k: usize,
    pub solver: SolverKind,
    pub depth: Option<usize>,
    pub cv_score: Option<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub selected_mask: SelectionMask,
    pub qubo_energy: f64,
    /// Seconds spent in the solver; written to timings.csv only.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub method: QuboMethod,
    pub dataset: String,
    pub solver: Option<SolverKind>,
    pub depth: Option<usize>,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentOutput {
    /// One row per (dataset, method, solver) that succeeded.
    pub rows: Vec<ResultRow>,
    /// Per-depth rows of the QAOA sweep.
    pub depth_rows: Vec<ResultRow>,
    pub failures: Vec<FailureRow>,
    /// Cell label to derived seed, recorded in the manifest.
    pub seeds: BTreeMap<String, u64>,
}

impl ExperimentOutput {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// FNV-1a; a stable label hash for seed derivation.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn cell_seed(base: u64, label: &str) -> u64 {
    derive_seed(base, label_hash(label))
}

pub fn build_problem(
    d: &TabularDataset,
    method: QuboMethod,
    n_bins: usize,
    lambda: f64,
) -> Result<QuboProblem> {
    match method {
        QuboMethod::Correlation => build_correlation_qubo(d),
        QuboMethod::MutualInfo => build_mi_qubo(d, n_bins),
        QuboMethod::Boosting => build_boosting_qubo(d, &BoostingConfig { lambda }),
    }
}

/// A dataset split with the penalized QUBO built on its training part.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    pub dataset: String,
    pub method: QuboMethod,
    pub train: TabularDataset,
    pub test: TabularDataset,
    pub k: usize,
    pub alpha: f64,
    pub problem: QuboProblem,
}

pub fn prepare(
    d: &TabularDataset,
    dataset: &str,
    method: QuboMethod,
    cfg: &ExperimentConfig,
) -> Result<PreparedProblem> {
    let (train, test) = split_train_test(d, &cfg.split())?;
    let raw = build_problem(&train, method, cfg.n_bins, cfg.lambda)?;
    let k = cfg.k.resolve(raw.n())?;
    let alpha = cfg.alpha.resolve(&raw);
    let problem = apply_cardinality_penalty(&raw, k, alpha)?;
    Ok(PreparedProblem {
        dataset: dataset.to_owned(),
        method,
        train,
        test,
        k,
        alpha,
        problem,
    })
}

fn qaoa_config(cfg: &ExperimentConfig, depth: usize, shot_seed: u64) -> QaoaConfig {
    QaoaConfig {
        optimizer: cfg.optimizer,
        objective: cfg.objective,
        ..QaoaConfig::new(
            depth,
            ShotConfig {
                shots: cfg.shots,
                seed: shot_seed,
            },
        )
    }
}

/// Run one solver; QAOA uses `depth` and draws angles and shots from `seed`.
pub fn solve_with(
    p: &QuboProblem,
    solver: SolverKind,
    cfg: &ExperimentConfig,
    depth: usize,
    seed: u64,
) -> Result<SolveReport> {
    match solver {
        SolverKind::Exhaustive => solve_exhaustive(p),
        SolverKind::Sa => solve_simulated_annealing(p, seed, &cfg.annealing),
        SolverKind::Sd => solve_steepest_descent_seeded(p, seed, &cfg.steepest_descent),
        SolverKind::Tabu => solve_tabu_search(p, seed, &cfg.tabu),
        SolverKind::Qaoa => {
            let qcfg = qaoa_config(cfg, depth, derive_seed(seed, 1));
            Ok(run_qaoa(p, &qcfg, derive_seed(seed, 0))?.solve)
        }
    }
}

fn check_cardinality(prep: &PreparedProblem, solver: SolverKind, mask: &SelectionMask) {
    if mask.count_ones() != prep.k {
        log::warn!(
            "{}/{}/{}: selected {} features, target k = {} (alpha = {})",
            prep.dataset,
            prep.method,
            solver,
            mask.count_ones(),
            prep.k,
            prep.alpha
        );
    }
}

struct CellOutcome {
    rows: Vec<ResultRow>,
    depth_rows: Vec<ResultRow>,
    failures: Vec<FailureRow>,
}

impl PreparedProblem {
    fn row(&self, solver: SolverKind, report: &SolveReport, wall_time: f64) -> ResultRow {
        ResultRow {
            method: self.method,
            dataset: self.dataset.clone(),
            n: self.problem.n(),
            k: self.k,
            solver,
            depth: None,
            cv_score: None,
            mean_accuracy: f64::NAN,
            std_accuracy: f64::NAN,
            selected_mask: report.best_mask.clone().with_target(self.k),
            qubo_energy: report.best_energy,
            wall_time,
        }
    }

    fn failure(&self, solver: SolverKind, depth: Option<usize>, e: &Error) -> FailureRow {
        FailureRow {
            method: self.method,
            dataset: self.dataset.clone(),
            solver: Some(solver),
            depth,
            error: e.to_string(),
        }
    }
}

fn timed_solve(
    prep: &PreparedProblem,
    solver: SolverKind,
    cfg: &ExperimentConfig,
    depth: usize,
    seed: u64,
) -> Result<(SolveReport, f64)> {
    let start = Instant::now();
    let report = solve_with(&prep.problem, solver, cfg, depth, seed)?;
    let wall = start.elapsed().as_secs_f64();
    check_cardinality(prep, solver, &report.best_mask);
    if report.best_mask.count_ones() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((report, wall))
}

fn run_cell(prep: &PreparedProblem, solver: SolverKind, cfg: &ExperimentConfig, seed: u64) -> CellOutcome {
    let mut out = CellOutcome {
        rows: Vec::new(),
        depth_rows: Vec::new(),
        failures: Vec::new(),
    };
    let forest = ForestConfig {
        seed: derive_seed(seed, 1),
        ..cfg.forest
    };
    let evaluate = |report: &SolveReport, wall: f64| -> Result<ResultRow> {
        let eval = evaluate_on_split(&prep.train, &prep.test, &report.best_mask, cfg.repeats, &forest)?;
        let mut row = prep.row(solver, report, wall);
        row.mean_accuracy = eval.mean_accuracy;
        row.std_accuracy = eval.std_accuracy;
        Ok(row)
    };

    if solver != SolverKind::Qaoa {
        match timed_solve(prep, solver, cfg, 0, derive_seed(seed, 0)).and_then(|(r, w)| evaluate(&r, w)) {
            Ok(row) => out.rows.push(row),
            Err(e) => out.failures.push(prep.failure(solver, None, &e)),
        }
        return out;
    }

    let folds = match make_folds(&prep.train, cfg.n_folds, derive_seed(cfg.seed, 2)) {
        Ok(f) => f,
        Err(e) => {
            out.failures.push(prep.failure(solver, None, &e));
            return out;
        }
    };
    let cv_forest = ForestConfig {
        seed: derive_seed(seed, 2),
        ..cfg.forest
    };
    let (lo, hi) = cfg.depth_range;
    for depth in lo..=hi {
        let depth_seed = derive_seed(seed, 100 + depth as u64);
        let attempt = timed_solve(prep, solver, cfg, depth, depth_seed).and_then(|(report, wall)| {
            let cv = cv_score(&prep.train, &report.best_mask, &folds, &cv_forest)?;
            let mut row = evaluate(&report, wall)?;
            row.depth = Some(depth);
            row.cv_score = Some(cv);
            Ok(row)
        });
        match attempt {
            Ok(row) => out.depth_rows.push(row),
            Err(e) => out.failures.push(prep.failure(solver, Some(depth), &e)),
        }
    }
    // Best validation score; ties keep the smaller depth.
    let mut best: Option<&ResultRow> = None;
    for row in &out.depth_rows {
        if best.is_none_or(|b| row.cv_score > b.cv_score) {
            best = Some(row);
        }
    }
    match best {
        Some(row) => out.rows.push(row.clone()),
        None => out.failures.push(prep.failure(
            solver,
            None,
            &Error::InvalidArgument("no QAOA depth produced a usable selection".into()),
        )),
    }
    out
}

fn load_all(cfg: &ExperimentConfig) -> Vec<(String, Result<TabularDataset>)> {
    cfg.datasets
        .iter()
        .map(|path| (dataset_name(path), load_dataset(path, DataFormat::from_path(path))))
        .collect()
}

/// Prepare every (dataset, method) pair; failures become rows for each solver.
fn prepare_all(
    cfg: &ExperimentConfig,
    solvers: &[SolverKind],
    failures: &mut Vec<FailureRow>,
) -> Vec<PreparedProblem> {
    let mut prepared = Vec::new();
    for (name, loaded) in load_all(cfg) {
        for &method in &cfg.methods {
            match loaded.as_ref().map_err(|e| Error::Config(e.to_string())).and_then(|d| prepare(d, &name, method, cfg)) {
                Ok(p) => prepared.push(p),
                Err(e) => failures.extend(solvers.iter().map(|&s| FailureRow {
                    method,
                    dataset: name.clone(),
                    solver: Some(s),
                    depth: None,
                    error: e.to_string(),
                })),
            }
        }
    }
    prepared
}

fn label(prep: &PreparedProblem, solver: SolverKind) -> String {
    format!("{}/{}/{}", prep.dataset, prep.method, solver)
}

/// Full grid: every dataset x method x solver. QAOA runs each depth in the
/// range, picks the depth with the best k-fold CV score on the training
/// part (smaller depth on ties) and reports its test accuracy.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut out = ExperimentOutput::default();
    let prepared = prepare_all(cfg, &cfg.solvers, &mut out.failures);
    let cells: Vec<(&PreparedProblem, SolverKind, u64)> = prepared
        .iter()
        .flat_map(|p| {
            cfg.solvers
                .iter()
                .map(move |&s| (p, s, cell_seed(cfg.seed, &label(p, s))))
        })
        .collect();
    for &(p, s, seed) in &cells {
        out.seeds.insert(label(p, s), seed);
    }
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(p, s, seed)| {
            log::info!("running {}", label(p, s));
            run_cell(p, s, cfg, seed)
        })
        .collect();
    for o in outcomes {
        out.rows.extend(o.rows);
        out.depth_rows.extend(o.depth_rows);
        out.failures.extend(o.failures);
    }
    Ok(out)
}

/// Depth study: for every dataset x method and each depth, run the whole
/// QAOA selection + single-forest evaluation `repeats` times with distinct
/// seeds and report mean and std of the test accuracy. The row's mask is the
/// most frequent selection (lowest bitstring on ties).
pub fn sweep_depth(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (lo, hi) = cfg.depth_range;
    if lo < 1 || lo > hi {
        return Err(Error::Config("depth_range must be non-empty".into()));
    }
    let mut out = ExperimentOutput::default();
    let prepared = prepare_all(cfg, &[SolverKind::Qaoa], &mut out.failures);
    let cells: Vec<(&PreparedProblem, usize, u64)> = prepared
        .iter()
        .flat_map(|p| {
            (lo..=hi).map(move |depth| {
                let seed = cell_seed(cfg.seed, &format!("sweep/{}/p{depth}", label(p, SolverKind::Qaoa)));
                (p, depth, seed)
            })
        })
        .collect();
    for &(p, depth, seed) in &cells {
        out.seeds.insert(format!("sweep/{}/p{depth}", label(p, SolverKind::Qaoa)), seed);
    }
    let results: Vec<std::result::Result<ResultRow, FailureRow>> = cells
        .par_iter()
        .map(|&(prep, depth, seed)| {
            sweep_cell(prep, depth, cfg, seed).map_err(|e| prep.failure(SolverKind::Qaoa, Some(depth), &e))
        })
        .collect();
    for r in results {
        match r {
            Ok(row) => out.depth_rows.push(row),
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}

fn sweep_cell(prep: &PreparedProblem, depth: usize, cfg: &ExperimentConfig, seed: u64) -> Result<ResultRow> {
    let mut accuracies = Vec::with_capacity(cfg.repeats);
    let mut masks: HashMap<String, (usize, SolveReport)> = HashMap::new();
    let mut wall = 0.0;
    for r in 0..cfg.repeats as u64 {
        let run_seed = derive_seed(seed, r);
        let (report, w) = timed_solve(prep, SolverKind::Qaoa, cfg, depth, derive_seed(run_seed, 0))?;
        wall += w;
        let forest = ForestConfig {
            seed: derive_seed(run_seed, 1),
            ..cfg.forest
        };
        let model = train_forest(&prep.train, &report.best_mask, &forest)?;
        accuracies.push(accuracy(&model, &prep.test, &report.best_mask)?);
        masks
            .entry(report.best_mask.to_bitstring())
            .or_insert((0, report))
            .0 += 1;
    }
    let (_, (_, modal)) = masks
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.0.cmp(a.0)))
        .expect("repeats >= 1");
    let (mean, std) = mean_std(&accuracies);
    let mut row = prep.row(SolverKind::Qaoa, modal, wall);
    row.depth = Some(depth);
    row.mean_accuracy = mean;
    row.std_accuracy = std;
    Ok(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

const CSV_HEADER: [&str; 11] = [
    "method",
    "dataset",
    "n",
    "k",
    "solver",
    "depth",
    "cv_score",
    "mean_accuracy",
    "std_accuracy",
    "selected_mask",
    "qubo_energy",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Render rows in a stable column order. Markdown bolds the best accuracy of
/// every (method, dataset) group; the first row wins ties.
pub fn render_table(rows: &[ResultRow], format: TableFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Empty("result rows"));
    }
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).map_err(csv_error)?;
            for r in rows {
                w.write_record([
                    r.method.to_string(),
                    r.dataset.clone(),
                    r.n.to_string(),
                    r.k.to_string(),
                    r.solver.to_string(),
                    opt(r.depth),
                    opt(r.cv_score),
                    r.mean_accuracy.to_string(),
                    r.std_accuracy.to_string(),
                    r.selected_mask.to_bitstring(),
                    r.qubo_energy.to_string(),
                ])
                .map_err(csv_error)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        TableFormat::Markdown => {
            let mut best: HashMap<(QuboMethod, &str), usize> = HashMap::new();
            for (i, r) in rows.iter().enumerate() {
                let slot = best.entry((r.method, r.dataset.as_str())).or_insert(i);
                if r.mean_accuracy > rows[*slot].mean_accuracy {
                    *slot = i;
                }
            }
            let mut s = String::from(
                "| method | dataset | n | k | solver | p | accuracy | std | mask | energy |\n\
                 |---|---|---|---|---|---|---|---|---|---|\n",
            );
            for (i, r) in rows.iter().enumerate() {
                let acc = format!("{:.4}", r.mean_accuracy);
                let acc = if best[&(r.method, r.dataset.as_str())] == i {
                    format!("**{acc}**")
                } else {
                    acc
                };
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {:.4} | {} | {:.6} |\n",
                    r.method,
                    r.dataset,
                    r.n,
                    r.k,
                    r.solver,
                    opt(r.depth),
                    acc,
                    r.std_accuracy,
                    r.selected_mask.to_bitstring(),
                    r.qubo_energy
                ));
            }
            Ok(s)
        }
    }
}

pub fn emit_table(rows: &[ResultRow], format: TableFormat, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_table(rows, format)?)?;
    Ok(())
}

/// `(file name, contents)` per (dataset, method): a commented header followed
/// by `p mean std` lines in depth order.
pub fn render_depth_sweep(rows: &[ResultRow]) -> Result<Vec<(String, String)>> {
    let mut groups: BTreeMap<(String, QuboMethod), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let Some(_) = r.depth else {
            return Err(Error::InvalidArgument("sweep row without depth".into()));
        };
        groups.entry((r.dataset.clone(), r.method)).or_default().push(r);
    }
    let mut files = Vec::new();
    for ((dataset, method), mut group) in groups {
        group.sort_by_key(|r| r.depth);
        if group.windows(2).any(|w| w[1].depth.unwrap() != w[0].depth.unwrap() + 1) {
            return Err(Error::InvalidArgument(format!(
                "depths for {dataset}/{method} are not contiguous"
            )));
        }
        let mut text = format!("# dataset {dataset}\n# method {method}\n# p mean_accuracy std_accuracy\n");
        for r in group {
            text.push_str(&format!("{} {:.6} {:.6}\n", r.depth.unwrap(), r.mean_accuracy, r.std_accuracy));
        }
        files.push((format!("sweep_{dataset}_{method}.dat"), text));
    }
    Ok(files)
}

pub fn emit_depth_sweep(rows: &[ResultRow], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, text) in render_depth_sweep(rows)? {
        let path = dir.as_ref().join(name);
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

fn render_failures(failures: &[FailureRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "dataset", "solver", "depth", "error"]).map_err(csv_error)?;
    for f in failures {
        w.write_record([
            f.method.to_string(),
            f.dataset.clone(),
            opt(f.solver),
            opt(f.depth),
            f.error.clone(),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn render_timings(rows: &[&ResultRow]) -> String {
    let mut s = String::from("method,dataset,solver,depth,wall_time_s\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{:.6}\n", r.method, r.dataset, r.solver, opt(r.depth), r.wall_time));
    }
    s
}

/// Config, per-cell seeds and crate version as pretty JSON. No timestamps,
/// so equal runs give equal manifests.
pub fn render_manifest(cfg: &ExperimentConfig, seeds: &BTreeMap<String, u64>) -> Result<String> {
    let manifest = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "seeds": seeds,
    });
    serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))
}

/// Write everything a run produced into `dir`: results.csv/results.md (when
/// there are summary rows), sweep_*.dat (when there are depth rows),
/// failures.csv, manifest.json and timings.csv. Only timings.csv depends on
/// the machine.
pub fn write_outputs(out: &ExperimentOutput, cfg: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if !out.rows.is_empty() {
        for (format, name) in [(TableFormat::Csv, "results.csv"), (TableFormat::Markdown, "results.md")] {
            emit_table(&out.rows, format, dir.join(name))?;
            written.push(dir.join(name));
        }
    }
    if !out.depth_rows.is_empty() {
        written.extend(emit_depth_sweep(&out.depth_rows, dir)?);
    }
    let mut files = vec![
        ("failures.csv", render_failures(&out.failures)?),
        ("manifest.json", render_manifest(cfg, &out.seeds)?),
    ];
    let timed: Vec<&ResultRow> = out.rows.iter().chain(&out.depth_rows).collect();
    files.push(("timings.csv", render_timings(&timed)));
    for (name, text) in files {
        fs::write(dir.join(name), text)?;
        written.push(dir.join(name));
    }
    Ok(written)
}

/// Energy of a row's mask under the prepared problem.
pub fn recompute_energy(row: &ResultRow, prep: &PreparedProblem) -> Result<f64> {
    qubo_energy(&prep.problem, &row.selected_mask)
}
