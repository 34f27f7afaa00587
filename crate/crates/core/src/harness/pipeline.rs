//! Offline and online stages of an experiment and the report they produce.
//!
//! Artifacts under `output_dir`:
//!
//! ```text
//! snapshots/train.qsnp, snapshots/test.qsnp, snapshots/generate.json
//! manifolds/n{n}.qmnf (+ .json sidecar)
//! operators/n{n}.qops or operators/n{n}_mu{i}.qops (+ .json with timing)
//! trajectories/n{n}/{cell}/mu{i}.csv (+ .json sidecar), cell.json
//! report.csv, report.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::metrics::{reconstruction_error, trajectory_error, ErrorSummary};
use crate::error::{QmngError, Result};
use crate::full_models::{FullModel, ModelKind};
use crate::manifold::{ManifoldTrainer, QuadraticManifold};
use crate::reduced_interp::{simulate_interp, BurgersPde, SplineBasis, Strategy};
use crate::reduced_vector::{
    integrate_reduced, precompute_linear, ConstantTestspace, IntegrateOptions, LinearReducedRhs, PrecomputedOperators,
    QmngDirect, ReducedTrajectory,
};
use crate::snapshots::SnapshotMatrix;

/// One line of the report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub n: usize,
    pub method: String,
    pub gamma: f64,
    pub m: usize,
    pub error_mean: f64,
    pub error_std: f64,
    pub unstable_count: usize,
    pub online_seconds: f64,
    pub offline_seconds: f64,
}

/// Per-cell detail kept next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub n: usize,
    pub method: String,
    pub m: usize,
    /// `None` for runs flagged unstable.
    pub per_param: Vec<Option<f64>>,
    pub unstable: Vec<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rows: Vec<ReportRow>,
    pub cells: Vec<CellReport>,
    /// Cells that failed, with the reason; other cells are unaffected.
    pub failures: Vec<String>,
}

impl ErrorReport {
    pub fn row(&self, n: usize, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.n == n && r.method == method)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        r.deserialize().map(|row| row.map_err(csv_err)).collect()
    }
}

fn csv_err(e: csv::Error) -> QmngError {
    QmngError::Format(format!("csv: {e}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Paths of all artifacts of one experiment.
#[derive(Debug, Clone)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, sub: &str) -> Result<PathBuf> {
        let d = self.root.join(sub);
        std::fs::create_dir_all(&d)?;
        Ok(d)
    }

    pub fn train_snapshots(&self) -> PathBuf {
        self.root.join("snapshots").join("train.qsnp")
    }

    pub fn test_snapshots(&self) -> PathBuf {
        self.root.join("snapshots").join("test.qsnp")
    }

    fn generate_info(&self) -> PathBuf {
        self.root.join("snapshots").join("generate.json")
    }

    pub fn manifold(&self, n: usize) -> PathBuf {
        self.root.join("manifolds").join(format!("n{n}.qmnf"))
    }

    pub fn operators(&self, n: usize, mu_index: Option<usize>) -> PathBuf {
        let name = match mu_index {
            Some(i) => format!("n{n}_mu{i}.qops"),
            None => format!("n{n}.qops"),
        };
        self.root.join("operators").join(name)
    }

    pub fn cell_dir(&self, n: usize, cell: &Cell) -> PathBuf {
        self.root.join("trajectories").join(format!("n{n}")).join(cell.label())
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

/// Training and test snapshots.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub train: SnapshotMatrix,
    pub test: SnapshotMatrix,
    pub seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct Timing {
    seconds: f64,
}

fn timing(cfg: &ExperimentConfig, start: Instant) -> f64 {
    if cfg.record_timings {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

/// Integrates the full model at the training and test parameters and
/// writes both snapshot files.
pub fn generate(cfg: &ExperimentConfig, model: &FullModel) -> Result<GeneratedData> {
    let start = Instant::now();
    let stride = cfg.snapshot_stride();
    let train = model.generate_snapshots(&cfg.training_params(), stride)?;
    let test = model.generate_snapshots(&cfg.test_params(), stride)?;
    let seconds = timing(cfg, start);
    let art = Artifacts::new(&cfg.output_dir);
    art.dir("snapshots")?;
    train.save(art.train_snapshots())?;
    test.save(art.test_snapshots())?;
    write_json(&art.generate_info(), &Timing { seconds })?;
    Ok(GeneratedData { train, test, seconds })
}

pub fn load_generated(cfg: &ExperimentConfig) -> Result<GeneratedData> {
    let art = Artifacts::new(&cfg.output_dir);
    let seconds = read_json::<Timing>(&art.generate_info()).map(|t| t.seconds).unwrap_or(0.0);
    Ok(GeneratedData {
        train: SnapshotMatrix::load(art.train_snapshots())?,
        test: SnapshotMatrix::load(art.test_snapshots())?,
        seconds,
    })
}

/// Trains nested manifolds for every `n` of the config and writes them.
pub fn train(cfg: &ExperimentConfig, train: &SnapshotMatrix) -> Result<Vec<QuadraticManifold>> {
    let trainer = ManifoldTrainer::new(train)?.with_subsample(cfg.greedy_subsample);
    let pool = cfg.pool_for(trainer.rank());
    let mut ms = trainer.train_nested(&cfg.n, cfg.gamma, pool)?;
    let art = Artifacts::new(&cfg.output_dir);
    art.dir("manifolds")?;
    for m in &mut ms {
        if !cfg.record_timings {
            m.metadata_mut().offline_seconds = 0.0;
        }
        m.save(art.manifold(m.n()))?;
    }
    Ok(ms)
}

pub fn load_manifolds(cfg: &ExperimentConfig) -> Result<Vec<QuadraticManifold>> {
    let art = Artifacts::new(&cfg.output_dir);
    cfg.n.iter().map(|&n| QuadraticManifold::load(art.manifold(n))).collect()
}

fn operators_depend_on_mu(kind: ModelKind) -> bool {
    kind == ModelKind::Vlasov
}

/// Precomputed operators keyed by `(n, test parameter index)`; the index is
/// `None` when the system matrix does not depend on the parameter.
#[derive(Default)]
pub struct OperatorStore {
    ops: BTreeMap<(usize, Option<usize>), (PrecomputedOperators, f64)>,
    /// Manifolds whose operators could not be assembled, with the reason.
    pub failures: Vec<String>,
}

impl OperatorStore {
    fn key(model: &FullModel, n: usize, mu_index: usize) -> (usize, Option<usize>) {
        (n, operators_depend_on_mu(model.kind()).then_some(mu_index))
    }

    pub fn get(&self, model: &FullModel, n: usize, mu_index: usize) -> Option<&(PrecomputedOperators, f64)> {
        self.ops.get(&Self::key(model, n, mu_index))
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

fn needs_operators(cfg: &ExperimentConfig) -> bool {
    cfg.model.is_linear() && cfg.methods.iter().any(|m| matches!(m, Method::QmngLinear | Method::ConstantTestspace))
}

/// Assembles (and writes) the linear-model operators for every manifold and,
/// for parameter-dependent system matrices, every test parameter. A manifold
/// whose operators fail (for example over the memory budget) is recorded in
/// `failures` and skipped.
pub fn precompute(cfg: &ExperimentConfig, model: &FullModel, manifolds: &[QuadraticManifold]) -> Result<OperatorStore> {
    let mut store = OperatorStore::default();
    if !model.kind().is_linear() {
        return Ok(store);
    }
    let art = Artifacts::new(&cfg.output_dir);
    art.dir("operators")?;
    let test = cfg.test_params();
    let per_mu = operators_depend_on_mu(model.kind());
    let indices: Vec<usize> = if per_mu { (0..test.len()).collect() } else { vec![0] };
    for m in manifolds {
        for &i in &indices {
            let start = Instant::now();
            let ops = match model
                .assemble_system_matrix(test[i])
                .and_then(|a| precompute_linear(m, &a, cfg.memory_budget_bytes))
            {
                Ok(ops) => ops,
                Err(e) => {
                    log::error!("precompute for n = {}: {e}", m.n());
                    store.failures.push(format!("precompute n = {}: {e}", m.n()));
                    break;
                }
            };
            let secs = timing(cfg, start);
            let key = OperatorStore::key(model, m.n(), i);
            let path = art.operators(key.0, key.1);
            ops.save(&path)?;
            write_json(&sidecar(&path), &Timing { seconds: secs })?;
            store.ops.insert(key, (ops, secs));
        }
    }
    Ok(store)
}

/// Loads whatever operator files exist for the configured manifolds.
pub fn load_operators(cfg: &ExperimentConfig, model: &FullModel) -> Result<OperatorStore> {
    let mut store = OperatorStore::default();
    let art = Artifacts::new(&cfg.output_dir);
    let count = if operators_depend_on_mu(model.kind()) { cfg.test_params().len() } else { 1 };
    for &n in &cfg.n {
        for i in 0..count {
            let key = OperatorStore::key(model, n, i);
            let path = art.operators(key.0, key.1);
            if path.exists() {
                let secs = read_json::<Timing>(&sidecar(&path)).map(|t| t.seconds).unwrap_or(0.0);
                store.ops.insert(key, (PrecomputedOperators::load(&path)?, secs));
            }
        }
    }
    Ok(store)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// A method together with its collocation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub collocation: Option<(usize, Strategy)>,
}

impl Cell {
    pub fn label(&self) -> String {
        match self.collocation {
            Some((m, s)) => format!("{}-m{m}-{s}", self.method),
            None => self.method.to_string(),
        }
    }
}

/// All cells of the config in report order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &method in &cfg.methods {
        if method == Method::Interp {
            out.extend(cfg.collocation.iter().map(|c| Cell {
                method,
                collocation: Some((c.m, c.strategy)),
            }));
        } else {
            out.push(Cell {
                method,
                collocation: None,
            });
        }
    }
    out
}

/// Reduced trajectories of one `(n, cell)` over all test parameters.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub n: usize,
    pub cell: Cell,
    pub precompute_seconds: f64,
    pub trajectories: Vec<ReducedTrajectory>,
}

#[derive(Serialize, Deserialize)]
struct CellInfo {
    precompute_seconds: f64,
}

/// Simulates one cell at every test parameter. Unstable runs are kept
/// (truncated and flagged); configuration and invariant errors abort the cell.
pub fn simulate_cell(
    cfg: &ExperimentConfig,
    model: &FullModel,
    manifold: &QuadraticManifold,
    store: &OperatorStore,
    cell: Cell,
) -> Result<CellRun> {
    let spec = model.spec();
    let opts = IntegrateOptions::new(cfg.scheme, spec.dt, spec.steps()).with_stride(cfg.snapshot_stride());
    let n = manifold.n();
    let mut trajectories = Vec::new();
    let mut precompute_seconds = 0.0;
    let mut used_ops = std::collections::BTreeSet::new();
    let basis = match cell.method {
        Method::Interp => Some(SplineBasis::new(manifold, model.grid())?),
        _ => None,
    };
    for (i, &mu) in cfg.test_params().iter().enumerate() {
        let theta0 = manifold.encode(&model.initial_condition(mu))?;
        let linear_ops = if model.kind().is_linear() && cell.method != Method::Qmng {
            let key = OperatorStore::key(model, n, i);
            let entry = store.get(model, n, i);
            if entry.is_some() && used_ops.insert(key) {
                precompute_seconds += entry.map_or(0.0, |e| e.1);
            }
            entry.map(|e| &e.0)
        } else {
            None
        };
        let mut tr = match (cell.method, linear_ops) {
            (Method::QmngLinear, None) => {
                return Err(QmngError::InvalidConfig(format!(
                    "no precomputed operators for n = {n}; run the precompute stage first"
                )))
            }
            (Method::QmngLinear, Some(ops)) => {
                let mut rhs = LinearReducedRhs::new(ops);
                integrate_reduced(|th, _t, out| rhs.rhs_into(th, out), &theta0, mu, &opts)?
            }
            (Method::ConstantTestspace, Some(ops)) => {
                let mut rhs = LinearReducedRhs::new(ops);
                integrate_reduced(|th, _t, out| rhs.constant_testspace_into(th, out), &theta0, mu, &opts)?
            }
            (Method::ConstantTestspace, None) => {
                let mut rhs = ConstantTestspace::new(manifold, model)?;
                integrate_reduced(|th, _t, out| rhs.rhs_into(th, mu, out), &theta0, mu, &opts)?
            }
            (Method::Qmng, _) => {
                let mut rhs = QmngDirect::new(manifold, model)?;
                integrate_reduced(|th, _t, out| rhs.rhs_into(th, mu, out), &theta0, mu, &opts)?
            }
            (Method::Interp, _) => {
                let (m, strategy) = cell
                    .collocation
                    .ok_or_else(|| QmngError::InvalidConfig("interp cell without collocation settings".into()))?;
                let pde = BurgersPde::from_model(model)?;
                let basis = basis.as_ref().expect("built for interp cells");
                simulate_interp(basis, &pde, &theta0, mu, &opts, m, strategy, cfg.seed.wrapping_add(i as u64))?
            }
        };
        tr.meta.method = cell.method.to_string();
        if !cfg.record_timings {
            tr.meta.online_seconds = 0.0;
        }
        trajectories.push(tr);
    }
    Ok(CellRun {
        n,
        cell,
        precompute_seconds,
        trajectories,
    })
}

fn write_cell(cfg: &ExperimentConfig, run: &CellRun) -> Result<()> {
    let dir = Artifacts::new(&cfg.output_dir).cell_dir(run.n, &run.cell);
    std::fs::create_dir_all(&dir)?;
    for (i, tr) in run.trajectories.iter().enumerate() {
        tr.write_csv(dir.join(format!("mu{i}.csv")))?;
    }
    write_json(
        &dir.join("cell.json"),
        &CellInfo {
            precompute_seconds: run.precompute_seconds,
        },
    )
}

/// Simulates every `(n, cell)` pair and writes the trajectories. Failed
/// cells are reported by reason and skipped.
pub fn simulate(
    cfg: &ExperimentConfig,
    model: &FullModel,
    manifolds: &[QuadraticManifold],
    store: &OperatorStore,
) -> (Vec<CellRun>, Vec<String>) {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for m in manifolds {
        for cell in cells(cfg) {
            let res = simulate_cell(cfg, model, m, store, cell).and_then(|run| write_cell(cfg, &run).map(|_| run));
            match res {
                Ok(run) => runs.push(run),
                Err(e) => {
                    log::error!("n = {}, {}: {e}", m.n(), cell.label());
                    failures.push(format!("n = {}, {}: {e}", m.n(), cell.label()));
                }
            }
        }
    }
    (runs, failures)
}

/// Reads back the trajectories written by [`simulate`]; missing cells are
/// skipped.
pub fn load_runs(cfg: &ExperimentConfig) -> Result<Vec<CellRun>> {
    let art = Artifacts::new(&cfg.output_dir);
    let count = cfg.test_params().len();
    let mut runs = Vec::new();
    for &n in &cfg.n {
        for cell in cells(cfg) {
            let dir = art.cell_dir(n, &cell);
            if !dir.join("cell.json").exists() {
                continue;
            }
            let info: CellInfo = read_json(&dir.join("cell.json"))?;
            let trajectories = (0..count)
                .map(|i| ReducedTrajectory::read_csv(dir.join(format!("mu{i}.csv"))))
                .collect::<Result<Vec<_>>>()?;
            runs.push(CellRun {
                n,
                cell,
                precompute_seconds: info.precompute_seconds,
                trajectories,
            });
        }
    }
    Ok(runs)
}

/// Decodes a reduced trajectory into full states (one column per stored step).
pub fn decode_trajectory(m: &QuadraticManifold, tr: &ReducedTrajectory) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(m.full_dim(), tr.len());
    let mut h = vec![0.0; m.n() * m.n()];
    for (k, s) in tr.states.iter().enumerate() {
        m.decode_into(s.as_slice(), &mut h, out.column_mut(k).as_mut_slice());
    }
    Ok(out)
}

/// Error statistics of one cell against the test snapshots. Unstable or
/// truncated runs are excluded from the mean and counted.
pub fn evaluate_run(
    cfg: &ExperimentConfig,
    manifold: &QuadraticManifold,
    test: &SnapshotMatrix,
    run: &CellRun,
) -> Result<(ErrorSummary, CellReport)> {
    let mut per_param = Vec::new();
    let mut unstable = Vec::new();
    for (p, tr) in run.trajectories.iter().enumerate() {
        let reference = test.trajectory(p);
        if !tr.is_complete() || tr.len() != reference.ncols() {
            per_param.push(None);
            unstable.push(true);
            continue;
        }
        let approx = decode_trajectory(manifold, tr)?;
        per_param.push(Some(trajectory_error(&reference.into_owned(), &approx, cfg.literal_error)?));
        unstable.push(false);
    }
    let summary = ErrorSummary::from_values(per_param.iter().flatten().cloned().collect());
    Ok((
        summary,
        CellReport {
            n: run.n,
            method: run.cell.label(),
            m: run.cell.collocation.map_or(manifold.full_dim(), |c| c.0),
            per_param,
            unstable,
        },
    ))
}

/// Builds the report: a reconstruction row per manifold followed by one row
/// per simulated cell.
pub fn evaluate(
    cfg: &ExperimentConfig,
    manifolds: &[QuadraticManifold],
    data: &GeneratedData,
    runs: &[CellRun],
) -> Result<ErrorReport> {
    let mut report = ErrorReport::default();
    let model_name = cfg.model.name().to_string();
    for m in manifolds {
        let offline = data.seconds + m.metadata().offline_seconds;
        let rec = reconstruction_error(m, &data.test, cfg.literal_error)?;
        report.rows.push(ReportRow {
            model: model_name.clone(),
            n: m.n(),
            method: "reconstruction".into(),
            gamma: cfg.gamma,
            m: m.full_dim(),
            error_mean: rec.mean,
            error_std: rec.std,
            unstable_count: 0,
            online_seconds: 0.0,
            offline_seconds: offline,
        });
        for run in runs.iter().filter(|r| r.n == m.n()) {
            let (summary, cell) = match evaluate_run(cfg, m, &data.test, run) {
                Ok(x) => x,
                Err(e) => {
                    report.failures.push(format!("n = {}, {}: {e}", run.n, run.cell.label()));
                    continue;
                }
            };
            let count = run.trajectories.len().max(1) as f64;
            report.rows.push(ReportRow {
                model: model_name.clone(),
                n: m.n(),
                method: cell.method.clone(),
                gamma: cfg.gamma,
                m: cell.m,
                error_mean: summary.mean,
                error_std: summary.std,
                unstable_count: cell.unstable.iter().filter(|&&u| u).count(),
                online_seconds: run.trajectories.iter().map(|t| t.meta.online_seconds).sum::<f64>() / count,
                offline_seconds: offline + run.precompute_seconds,
            });
            report.cells.push(cell);
        }
    }
    Ok(report)
}

fn write_report(cfg: &ExperimentConfig, report: &ErrorReport) -> Result<()> {
    let art = Artifacts::new(&cfg.output_dir);
    std::fs::create_dir_all(art.root())?;
    report.write_csv(art.report_csv())?;
    write_json(&art.report_json(), report)
}

/// Evaluates trajectories already on disk and writes the report.
pub fn evaluate_from_disk(cfg: &ExperimentConfig) -> Result<ErrorReport> {
    cfg.validate()?;
    let data = load_generated(cfg)?;
    let manifolds = load_manifolds(cfg)?;
    let runs = load_runs(cfg)?;
    let report = evaluate(cfg, &manifolds, &data, &runs)?;
    write_report(cfg, &report)?;
    Ok(report)
}

/// Full pipeline: generate, train, precompute, simulate, evaluate.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ErrorReport> {
    cfg.validate()?;
    let model = cfg.full_model()?;
    log::info!("generating snapshots for {}", cfg.model.name());
    let data = generate(cfg, &model)?;
    log::info!("training manifolds for n = {:?}", cfg.n);
    let manifolds = train(cfg, &data.train)?;
    let store = if needs_operators(cfg) {
        precompute(cfg, &model, &manifolds)?
    } else {
        OperatorStore::default()
    };
    let (runs, failures) = simulate(cfg, &model, &manifolds, &store);
    let mut report = evaluate(cfg, &manifolds, &data, &runs)?;
    report.failures.splice(0..0, store.failures.iter().cloned().chain(failures));
    write_report(cfg, &report)?;
    Ok(report)
}
