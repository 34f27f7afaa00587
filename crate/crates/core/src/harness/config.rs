use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{QmngError, Result};
use crate::full_models::{equidistant_params, FullModel, FullModelSpec, ModelKind, Scale};
use crate::reduced_interp::Strategy;
use crate::reduced_vector::{Scheme, DEFAULT_MEMORY_BUDGET};

/// Reduced-model variants that can be simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Residual-minimizing velocity assembled on the full grid.
    Qmng,
    /// Same velocity from precomputed tensors (linear models only).
    QmngLinear,
    /// `θ̇ = Vᵀ f(g(θ))`.
    ConstantTestspace,
    /// Spline-interpolated decoder with collocation (1-D models only).
    Interp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Qmng => "qmng",
            Method::QmngLinear => "qmng-linear",
            Method::ConstantTestspace => "constant-testspace",
            Method::Interp => "interp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = QmngError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qmng" => Ok(Method::Qmng),
            "qmng-linear" => Ok(Method::QmngLinear),
            "constant-testspace" => Ok(Method::ConstantTestspace),
            "interp" => Ok(Method::Interp),
            _ => Err(QmngError::InvalidConfig(format!("unknown method '{s}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocationConfig {
    pub m: usize,
    #[serde(default)]
    pub strategy: Strategy,
}

/// Training parameters: a count of equidistant values in the parameter
/// domain or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSpec {
    Count(usize),
    List(Vec<f64>),
}

/// Snapshot protocol of a preset: training count, time subsampling and test
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub training_count: usize,
    pub snapshot_stride: usize,
    pub test_params: Vec<f64>,
}

const WAVE_TEST: [f64; 5] = [0.0556, 0.3889, 0.5000, 0.7222, 0.9444];
const VLASOV_TEST: [f64; 5] = [0.2765, 0.2724, 0.3500, 0.3827, 0.4398];
const BURGERS_TEST: [f64; 5] = [0.3810, 0.3837, 0.5000, 0.5490, 0.6347];

/// Snapshot protocol for a model at the given scale. Desk test parameters
/// are midpoints of the desk training grid, each the nearest unused one to
/// the corresponding full-scale test parameter.
pub fn protocol(kind: ModelKind, scale: Scale) -> Protocol {
    let (paper_count, paper_stride, desk_count, desk_stride, table) = match kind {
        ModelKind::Wave2d => (10, 40, 10, 40, WAVE_TEST),
        ModelKind::Vlasov => (50, 10, 20, 40, VLASOV_TEST),
        ModelKind::Burgers => (50, 50, 20, 100, BURGERS_TEST),
    };
    match scale {
        Scale::Paper => Protocol {
            training_count: paper_count,
            snapshot_stride: paper_stride,
            test_params: table.to_vec(),
        },
        Scale::Desk => {
            let (lo, hi) = FullModelSpec::preset(kind, scale).param_domain;
            let train = equidistant_params(lo, hi, desk_count);
            let mids: Vec<f64> = train.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            let mut used = vec![false; mids.len()];
            let test = table
                .iter()
                .map(|&t| {
                    let best = (0..mids.len())
                        .filter(|&i| !used[i])
                        .min_by(|&a, &b| (mids[a] - t).abs().total_cmp(&(mids[b] - t).abs()))
                        .expect("more midpoints than test parameters");
                    used[best] = true;
                    mids[best]
                })
                .collect();
            Protocol {
                training_count: desk_count,
                snapshot_stride: desk_stride,
                test_params: test,
            }
        }
    }
}

/// Everything needed to run one experiment. Unset optional fields fall back
/// to the preset protocol of `model` at `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub scale: Scale,
    /// Grid points per axis, overriding the preset.
    pub points: Option<usize>,
    /// Time horizon, overriding the preset.
    pub t_end: Option<f64>,
    pub training_params: Option<ParamSpec>,
    pub test_params: Option<Vec<f64>>,
    /// Store every k-th time step in snapshots and reduced trajectories.
    pub snapshot_stride: Option<usize>,
    pub n: Vec<usize>,
    pub gamma: f64,
    /// Greedy candidate pool `l`; defaults to `min(4 max(n), rank)`.
    pub pool: Option<usize>,
    pub greedy_subsample: usize,
    pub methods: Vec<Method>,
    pub collocation: Vec<CollocationConfig>,
    pub scheme: Scheme,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Sum relative errors over time steps instead of averaging.
    pub literal_error: bool,
    /// When false, all timing columns are written as zero so that reports
    /// are reproducible byte for byte.
    pub record_timings: bool,
    pub memory_budget_bytes: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Wave2d,
            scale: Scale::Desk,
            points: None,
            t_end: None,
            training_params: None,
            test_params: None,
            snapshot_stride: None,
            n: vec![5, 10, 15, 20, 25, 30],
            gamma: 1e-6,
            pool: None,
            greedy_subsample: crate::manifold::DEFAULT_GREEDY_SUBSAMPLE,
            methods: vec![Method::QmngLinear],
            collocation: Vec::new(),
            scheme: Scheme::Rk4,
            seed: 0,
            output_dir: PathBuf::from("qmng-out"),
            literal_error: false,
            record_timings: true,
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| QmngError::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| QmngError::InvalidConfig(e.to_string()))
    }

    pub fn protocol(&self) -> Protocol {
        protocol(self.model, self.scale)
    }

    pub fn model_spec(&self) -> Result<FullModelSpec> {
        let mut spec = FullModelSpec::preset(self.model, self.scale);
        if let Some(points) = self.points {
            spec = spec.with_points(points)?;
        }
        if let Some(t) = self.t_end {
            spec.t_end = t;
        }
        Ok(spec)
    }

    pub fn full_model(&self) -> Result<FullModel> {
        FullModel::new(self.model_spec()?)
    }

    pub fn training_params(&self) -> Vec<f64> {
        let (lo, hi) = FullModelSpec::preset(self.model, self.scale).param_domain;
        match &self.training_params {
            None => equidistant_params(lo, hi, self.protocol().training_count),
            Some(ParamSpec::Count(c)) => equidistant_params(lo, hi, *c),
            Some(ParamSpec::List(l)) => l.clone(),
        }
    }

    pub fn test_params(&self) -> Vec<f64> {
        self.test_params.clone().unwrap_or_else(|| self.protocol().test_params)
    }

    pub fn snapshot_stride(&self) -> usize {
        self.snapshot_stride.unwrap_or_else(|| self.protocol().snapshot_stride)
    }

    pub fn n_max(&self) -> usize {
        self.n.iter().cloned().max().unwrap_or(0)
    }

    /// Pool size for a trainer whose snapshots have numerical rank `rank`.
    pub fn pool_for(&self, rank: usize) -> usize {
        self.pool.unwrap_or_else(|| (4 * self.n_max()).min(rank))
    }

    /// Cheap consistency checks, run before any computation.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(QmngError::InvalidConfig(msg));
        if self.n.is_empty() || self.n.contains(&0) {
            return bad("n must be a non-empty list of positive integers".into());
        }
        if let Some(l) = self.pool {
            if let Some(&n) = self.n.iter().find(|&&n| n > l) {
                return bad(format!("n = {n} exceeds pool size l = {l}"));
            }
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if self.snapshot_stride() == 0 || self.greedy_subsample == 0 {
            return bad("snapshot stride and greedy subsample must be positive".into());
        }
        let (lo, hi) = FullModelSpec::preset(self.model, self.scale).param_domain;
        let train = self.training_params();
        if train.is_empty() {
            return bad("no training parameters".into());
        }
        let test = self.test_params();
        if test.is_empty() {
            return bad("no test parameters".into());
        }
        if let Some(mu) = test.iter().find(|&&mu| !(lo..=hi).contains(&mu)) {
            return bad(format!("test parameter {mu} outside the parameter domain [{lo}, {hi}]"));
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.methods.contains(&Method::QmngLinear) && !self.model.is_linear() {
            return bad(format!("qmng-linear needs a linear model, {} is not", self.model.name()));
        }
        if self.methods.contains(&Method::Interp) {
            if self.model != ModelKind::Burgers {
                return bad("interp is available for the 1-D burgers model only".into());
            }
            if self.collocation.is_empty() {
                return bad("interp needs at least one [[collocation]] entry".into());
            }
            if self.collocation.iter().any(|c| c.m == 0) {
                return bad("collocation m must be positive".into());
            }
        }
        let spec = self.model_spec()?;
        if spec.steps() == 0 {
            return bad("time horizon shorter than one step".into());
        }
        Ok(())
    }
}
