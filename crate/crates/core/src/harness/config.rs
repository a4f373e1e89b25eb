//! Experiment configuration (`config.json`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{interior_fixture, make_gridworld, make_nchain, random_mdp, two_state_fixture, ChainSpec, GridWorldSpec};
use crate::error::{Error, Result};
use crate::fa_linear::{FeatureMap, GradientTdConfig, GradientTdVariant};
use crate::mdp::{Policy, TabularMdp};
use crate::tabular::TabularLearnerConfig;
use crate::uncertainty::{ConfidenceRegion, MatrixSpec, RegionKind, RegionSpec, Regions};

pub const SCHEMA_VERSION: u32 = 1;

/// Smallest row entry used when shaping a row-weighted ellipsoid.
const ROW_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Gridworld(GridWorldSpec),
    Nchain(ChainSpec),
    Random {
        n_states: usize,
        n_actions: usize,
        branching: usize,
        seed: u64,
    },
    /// `"interior"` (5 states) or `"two_state"`.
    Fixture { name: String },
    /// A [`TabularMdp`] JSON file.
    File { path: String },
}

impl EnvSpec {
    /// The true environment and its evaluation start state.
    pub fn build(&self) -> Result<(TabularMdp, usize)> {
        match self {
            EnvSpec::Gridworld(spec) => Ok((make_gridworld(spec)?, spec.layout()?.start)),
            EnvSpec::Nchain(spec) => Ok((make_nchain(spec)?, 0)),
            EnvSpec::Random { n_states, n_actions, branching, seed } => {
                Ok((random_mdp(*n_states, *n_actions, *branching, *seed)?, 0))
            }
            EnvSpec::Fixture { name } => match name.as_str() {
                "interior" => Ok((interior_fixture(), 0)),
                "two_state" => Ok((two_state_fixture(), 0)),
                other => Err(Error::Config { path: "env.name".into(), msg: format!("unknown fixture {other:?}") }),
            },
            EnvSpec::File { path } => {
                let text = std::fs::read_to_string(path)?;
                Ok((TabularMdp::from_json(&text)?, 0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    RobustQ,
    NominalQ,
    RobustSarsa,
    NominalSarsa,
    RobustTd,
    NominalTd,
    RobustGtd2,
    RobustTdc,
    RobustNlGtd2,
    RobustNlTdc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Learner {
    Q,
    Sarsa,
    Td,
    Linear(GradientTdVariant),
    Nonlinear(GradientTdVariant),
}

impl Algorithm {
    pub fn is_robust(self) -> bool {
        !matches!(self, Algorithm::NominalQ | Algorithm::NominalSarsa | Algorithm::NominalTd)
    }

    /// The nominal counterpart, if there is one.
    pub fn nominal(self) -> Option<Algorithm> {
        match self {
            Algorithm::RobustQ | Algorithm::NominalQ => Some(Algorithm::NominalQ),
            Algorithm::RobustSarsa | Algorithm::NominalSarsa => Some(Algorithm::NominalSarsa),
            Algorithm::RobustTd | Algorithm::NominalTd => Some(Algorithm::NominalTd),
            _ => None,
        }
    }

    pub(crate) fn learner(self) -> Learner {
        use GradientTdVariant::{Gtd2, Tdc};
        match self {
            Algorithm::RobustQ | Algorithm::NominalQ => Learner::Q,
            Algorithm::RobustSarsa | Algorithm::NominalSarsa => Learner::Sarsa,
            Algorithm::RobustTd | Algorithm::NominalTd => Learner::Td,
            Algorithm::RobustGtd2 => Learner::Linear(Gtd2),
            Algorithm::RobustTdc => Learner::Linear(Tdc),
            Algorithm::RobustNlGtd2 => Learner::Nonlinear(Gtd2),
            Algorithm::RobustNlTdc => Learner::Nonlinear(Tdc),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionFamily {
    L2,
    L1,
    Ellipsoid,
    Parallelepiped,
    /// Per-pair ellipsoid `{x : Σ_j x_j² / p̂_j ≤ r²}` shaped by the training
    /// row `p̂` of each state-action pair, so that `σ(v) = r·Std_p̂(v)`.
    RowEllipsoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub family: RegionFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Candidate radii for cross-validated selection, strictly increasing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_grid: Option<Vec<f64>>,
    /// Shape matrix for the ellipsoid and parallelepiped families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixSpec>,
    #[serde(default = "default_true")]
    pub zero_sum: bool,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self { family: RegionFamily::L2, radius: None, radius_grid: None, matrix: None, zero_sum: true }
    }
}

impl RegionConfig {
    fn spec(&self, kind: RegionKind, radius: f64, matrix: Option<MatrixSpec>) -> RegionSpec {
        RegionSpec { kind, radius: Some(radius), matrix, zero_sum: self.zero_sum }
    }

    /// One region shared by every pair. Not available for the row-weighted family.
    pub fn single(&self, radius: f64) -> Result<ConfidenceRegion> {
        if radius == 0.0 {
            return Ok(ConfidenceRegion::zero().with_zero_sum(self.zero_sum));
        }
        let kind = match self.family {
            RegionFamily::L2 => RegionKind::L2,
            RegionFamily::L1 => RegionKind::L1,
            RegionFamily::Ellipsoid => RegionKind::Ellipsoid,
            RegionFamily::Parallelepiped => RegionKind::Parallelepiped,
            RegionFamily::RowEllipsoid => {
                return Err(Error::Config {
                    path: "region.family".into(),
                    msg: "row_ellipsoid regions are per pair and need a tabular learner".into(),
                })
            }
        };
        self.spec(kind, radius, self.matrix.clone()).build()
    }

    /// Regions for every pair of `train`, the model the learner samples from.
    pub fn build(&self, train: &TabularMdp, radius: f64) -> Result<Regions> {
        if self.family != RegionFamily::RowEllipsoid || radius == 0.0 {
            return Ok(Regions::shared(self.single(radius)?));
        }
        let (n, m) = (train.n_states(), train.n_actions());
        let mut regions = Vec::with_capacity(n * m);
        for i in 0..n {
            for a in 0..m {
                let row = train.row(i, a);
                let mut flat = vec![0.0; n * n];
                for (j, &p) in row.iter().enumerate() {
                    flat[j * n + j] = 1.0 / p.max(ROW_FLOOR);
                }
                regions.push(self.spec(RegionKind::Ellipsoid, radius, Some(MatrixSpec::RowMajor(flat))).build()?);
            }
        }
        Ok(Regions::PerPair { n_actions: m, regions })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureConfig {
    #[default]
    Identity,
    /// `[1, cos, sin, …]` over the state index.
    Fourier { dim: usize },
    Rows { rows: Vec<Vec<f64>> },
}

impl FeatureConfig {
    pub fn build(&self, n_states: usize) -> Result<FeatureMap> {
        match self {
            FeatureConfig::Identity => Ok(FeatureMap::identity(n_states)),
            FeatureConfig::Fourier { dim } => FeatureMap::fourier(n_states, *dim),
            FeatureConfig::Rows { rows } => FeatureMap::from_rows(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearConfig {
    /// `v = Φθ + ½ κ (Φ∘Φ)(θ∘θ)`.
    Quadratic { curvature: f64 },
    /// One hidden tanh layer over the feature rows.
    Tanh { width: usize },
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        NonlinearConfig::Quadratic { curvature: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub env: EnvSpec,
    /// Probability `p` of the random-restart perturbation used for training.
    #[serde(default)]
    pub perturbation: f64,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub region: RegionConfig,
    #[serde(default)]
    pub learner: TabularLearnerConfig,
    /// Schedules for the gradient-TD learners; `steps` is taken from `train_steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<GradientTdConfig>,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinear: Option<NonlinearConfig>,
    /// Policy evaluated by the TD and gradient-TD learners. Defaults to the
    /// nominal optimal policy of the training model (TD) or uniform (gradient TD).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
    pub seeds: Vec<u64>,
    /// Seeds folded by the radius line search; defaults to `seeds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_seeds: Option<Vec<u64>>,
    /// Transitions (Q, SARSA, gradient TD) or simulations (TD) per training run.
    pub train_steps: usize,
    pub eval_episodes: usize,
    #[serde(default = "default_horizon")]
    pub eval_horizon: usize,
    /// Validation episodes per (agent, validation seed) pair in the line search.
    #[serde(default = "default_cv_episodes")]
    pub cv_eval_episodes: usize,
    /// Start state for evaluation episodes; the environment's own start by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_start: Option<usize>,
    /// Leading fraction of evaluation episodes reported as the transient phase.
    #[serde(default = "default_transient")]
    pub transient_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_thresholds: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn default_true() -> bool {
    true
}

fn default_horizon() -> usize {
    100
}

fn default_cv_episodes() -> usize {
    100
}

fn default_transient() -> f64 {
    0.2
}

/// Tagged enums buffer their content, which hides the inner path; parse the
/// env variant on its own to recover it.
fn env_error(text: &str) -> Option<Error> {
    fn inner<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Option<Error> {
        serde_path_to_error::deserialize::<_, T>(v).err().map(|e| Error::Config {
            path: format!("env.{}", e.path()),
            msg: e.into_inner().to_string(),
        })
    }
    let mut env = serde_json::from_str::<serde_json::Value>(text).ok()?.get("env")?.clone();
    let kind = env.as_object_mut()?.remove("kind")?;
    match kind.as_str()? {
        "gridworld" => inner::<GridWorldSpec>(env),
        "nchain" => inner::<ChainSpec>(env),
        _ => None,
    }
}

fn invalid(path: &str, msg: impl Into<String>) -> Error {
    Error::Config { path: path.into(), msg: msg.into() }
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the JSON path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let err = Error::Config { path, msg: e.into_inner().to_string() };
            match &err {
                Error::Config { path, .. } if path == "env" => env_error(text).unwrap_or(err),
                _ => err,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "seed list is empty"));
        }
        if matches!(&self.cv_seeds, Some(s) if s.is_empty()) {
            return Err(invalid("cv_seeds", "seed list is empty"));
        }
        if !(0.0..=1.0).contains(&self.perturbation) {
            return Err(invalid("perturbation", format!("{} not in [0, 1]", self.perturbation)));
        }
        if self.train_steps == 0 {
            return Err(invalid("train_steps", "must be positive"));
        }
        if self.eval_episodes == 0 || self.eval_horizon == 0 || self.cv_eval_episodes == 0 {
            return Err(invalid("eval_episodes", "episode counts and horizon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.transient_fraction) {
            return Err(invalid("transient_fraction", format!("{} not in [0, 1]", self.transient_fraction)));
        }
        if let Some(r) = self.region.radius {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(invalid("region.radius", format!("{r} is not a finite nonnegative radius")));
            }
        }
        if let Some(grid) = &self.region.radius_grid {
            if grid.is_empty() {
                return Err(invalid("region.radius_grid", "grid is empty"));
            }
            if grid.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
                return Err(invalid("region.radius_grid", "radii must be finite and nonnegative"));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid("region.radius_grid", "grid must be strictly increasing"));
            }
        }
        if self.algorithm.is_robust() && self.region.radius.is_none() && self.region.radius_grid.is_none() {
            return Err(invalid("region", "robust algorithms need a radius or a radius grid"));
        }
        let learner = self.algorithm.learner();
        if matches!(learner, Learner::Linear(_) | Learner::Nonlinear(_))
            && self.region.family == RegionFamily::RowEllipsoid
        {
            return Err(invalid("region.family", "row_ellipsoid regions need a tabular learner"));
        }
        if let Some(thresholds) = &self.tail_thresholds {
            if thresholds.iter().any(|a| a.is_nan()) {
                return Err(invalid("tail_thresholds", "NaN threshold"));
            }
        }
        Ok(())
    }

    /// Radius used when no line search runs.
    pub fn fixed_radius(&self) -> f64 {
        if !self.algorithm.is_robust() {
            return 0.0;
        }
        self.region.radius.or_else(|| self.region.radius_grid.as_ref().map(|g| g[0])).unwrap_or(0.0)
    }

    /// Whether [`super::run_experiment`] selects the radius by line search.
    pub fn searches_radius(&self) -> bool {
        self.algorithm.is_robust() && self.region.radius.is_none() && self.region.radius_grid.is_some()
    }

    pub(crate) fn gradient_config(&self) -> GradientTdConfig {
        let mut g = self.gradient.clone().unwrap_or_else(|| GradientTdConfig::new(self.train_steps));
        g.steps = self.train_steps;
        g.checkpoint_every = 0;
        g
    }

    pub(crate) fn learner_config(&self) -> TabularLearnerConfig {
        let mut l = self.learner.clone();
        l.steps = self.train_steps;
        l.episodes = self.train_steps;
        l.checkpoint_every = 0;
        l
    }
}
