//! Experiment orchestration: train on a perturbed model, evaluate on the true
//! one, pick radii by cross-validated line search and write reports.
//!
//! Random streams are keyed by seed: stream 0 trains, stream 1 drives the
//! reported evaluation episodes and stream 2 the line-search validation
//! episodes. Every seed runs independently, so the parallel loops below
//! collect in seed order and the outputs do not depend on scheduling.

mod check;
mod config;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub use check::{check_suite, CheckReport, CheckResult};
pub use config::{
    Algorithm, EnvSpec, ExperimentConfig, FeatureConfig, NonlinearConfig, RegionConfig, RegionFamily,
    SCHEMA_VERSION,
};
use config::Learner;

use crate::dp::{bellman_operator, oracle_report, robust_value_iteration, OracleReport, QTable, ValueTable};
use crate::envs::perturb;
use crate::error::{check_index, Error, Result};
use crate::fa_linear::{robust_gradient_td, FeatureMap, LinearModel};
use crate::fa_nonlinear::{robust_nonlinear_gradient_td, QuadraticFeatureModel, SmoothValueModel, TanhNetwork};
use crate::mdp::{sample_row, Policy, TabularMdp};
use crate::rng::{stream, SimRng};
use crate::tabular::{robust_q_learning, robust_sarsa, robust_td_lambda};
use crate::uncertainty::{ConfidenceRegion, RegionSpec, Regions};

const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;
const FOLDS: usize = 10;
/// Above this many distinct rewards the default tail grid is evenly spaced.
const MAX_TAIL_POINTS: usize = 201;

/// A learned agent, serialisable for `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedAgent {
    QTable { q: QTable },
    Value { v: ValueTable },
    Linear { model: LinearModel },
    Nonlinear { theta: Vec<f64>, w: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAgent {
    pub seed: u64,
    pub agent: TrainedAgent,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_hat: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema_version: u32,
    pub radius: f64,
    pub agents: Vec<SeedAgent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub transient_episodes: usize,
    pub stationary_episodes: usize,
    pub transient_cumulative_reward: f64,
    pub stationary_cumulative_reward: f64,
    pub transient_mean: f64,
    pub stationary_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_hat: Option<f64>,
}

/// `(a, P(R ≥ a))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub threshold: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusScore {
    pub radius: f64,
    /// Mean of the fold scores.
    pub score: f64,
    pub fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub chosen_radius: f64,
    pub scores: Vec<RadiusScore>,
    pub folds: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    /// Radius the reported agents were trained with.
    pub radius: f64,
    pub chosen_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_scores: Option<Vec<RadiusScore>>,
    pub seeds: Vec<SeedSummary>,
    pub tail: Vec<TailPoint>,
    pub warnings: Vec<String>,
    /// Per-seed episode rewards in evaluation order (written to episodes.csv).
    #[serde(skip)]
    pub episode_rewards: Vec<Vec<f64>>,
}

impl EvalReport {
    pub fn stationary_means(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.stationary_mean).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `seed,episode,phase,cumulative_reward`.
    pub fn write_episodes_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "seed,episode,phase,cumulative_reward")?;
        for (summary, rewards) in self.seeds.iter().zip(&self.episode_rewards) {
            for (k, r) in rewards.iter().enumerate() {
                let phase = if k < summary.transient_episodes { "transient" } else { "stationary" };
                writeln!(out, "{},{},{},{}", summary.seed, k, phase, r)?;
            }
        }
        Ok(())
    }

    /// Writes `report.json` and `episodes.csv` into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json()? + "\n")?;
        let mut csv = Vec::new();
        self.write_episodes_csv(&mut csv)?;
        fs::write(dir.join("episodes.csv"), csv)?;
        Ok(())
    }
}

/// Empirical `P(R ≥ a)` at each threshold; thresholds default to the sorted
/// distinct rewards.
pub fn tail_distribution(rewards: &[f64], thresholds: Option<&[f64]>) -> Result<Vec<TailPoint>> {
    if rewards.is_empty() {
        return Err(Error::InvalidArgument("no rewards".into()));
    }
    if rewards.iter().chain(thresholds.unwrap_or(&[])).any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("NaN reward or threshold".into()));
    }
    let mut sorted = rewards.to_vec();
    sorted.sort_by(f64::total_cmp);
    let grid: Vec<f64> = match thresholds {
        Some(t) => t.to_vec(),
        None => {
            let mut u = sorted.clone();
            u.dedup();
            u
        }
    };
    let n = sorted.len() as f64;
    Ok(grid
        .into_iter()
        .map(|a| {
            let below = sorted.partition_point(|&r| r < a);
            TailPoint { threshold: a, probability: (sorted.len() - below) as f64 / n }
        })
        .collect())
}

fn report_tail(rewards: &[f64], thresholds: Option<&[f64]>) -> Result<Vec<TailPoint>> {
    if thresholds.is_some() {
        return tail_distribution(rewards, thresholds);
    }
    let mut u = rewards.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    if u.len() <= MAX_TAIL_POINTS {
        return tail_distribution(rewards, None);
    }
    let (lo, hi) = (u[0], u[u.len() - 1]);
    let k = MAX_TAIL_POINTS - 1;
    let grid: Vec<f64> = (0..=k).map(|j| lo + (hi - lo) * j as f64 / k as f64).collect();
    tail_distribution(rewards, Some(&grid))
}

/// Everything derived from the config once per experiment.
struct Setup<'a> {
    cfg: &'a ExperimentConfig,
    truth: TabularMdp,
    train: TabularMdp,
    start: usize,
    features: FeatureMap,
    model: Option<Box<dyn SmoothValueModel + Send + Sync>>,
    policy: Option<Policy>,
}

impl<'a> Setup<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (truth, env_start) = cfg.env.build()?;
        let start = cfg.eval_start.unwrap_or(env_start);
        check_index("eval start", start, truth.n_states())?;
        let train = perturb(&truth, cfg.perturbation)?;
        cfg.learner_config().validate(&train)?;
        let learner = cfg.algorithm.learner();
        let features = cfg.features.build(truth.n_states())?;
        let model: Option<Box<dyn SmoothValueModel + Send + Sync>> = match learner {
            Learner::Nonlinear(_) => {
                let phi = features.matrix().clone();
                Some(match cfg.nonlinear.clone().unwrap_or_default() {
                    NonlinearConfig::Quadratic { curvature } => {
                        let q = phi.map(|x| curvature * x * x);
                        Box::new(QuadraticFeatureModel::new(phi, q)?)
                    }
                    NonlinearConfig::Tanh { width } => Box::new(TanhNetwork::new(phi, width)?),
                })
            }
            _ => None,
        };
        let policy = match learner {
            Learner::Q | Learner::Sarsa => None,
            Learner::Td => Some(match &cfg.policy {
                Some(p) => p.clone(),
                None => robust_value_iteration(&train, &Regions::shared(ConfidenceRegion::zero()), false, 1e-8)?.1,
            }),
            Learner::Linear(_) | Learner::Nonlinear(_) => {
                Some(cfg.policy.clone().unwrap_or_else(|| Policy::uniform(train.n_states(), train.n_actions())))
            }
        };
        if let Some(p) = &policy {
            p.validate(&train)?;
        }
        if matches!(learner, Learner::Linear(_) | Learner::Nonlinear(_)) {
            cfg.gradient_config().validate()?;
        }
        Ok(Self { cfg, truth, train, start, features, model, policy })
    }

    fn radius_for(&self, radius: f64) -> f64 {
        if self.cfg.algorithm.is_robust() {
            radius
        } else {
            0.0
        }
    }

    fn regions(&self, radius: f64) -> Result<Regions> {
        self.cfg.region.build(&self.train, self.radius_for(radius))
    }

    fn train_agent(&self, radius: f64, seed: u64) -> Result<SeedAgent> {
        let cfg = self.cfg;
        let radius = self.radius_for(radius);
        let mut rng = stream(seed, TRAIN_STREAM);
        let lcfg = cfg.learner_config();
        let (agent, beta_hat, warnings) = match cfg.algorithm.learner() {
            Learner::Q | Learner::Sarsa => {
                let regions = self.regions(radius)?;
                let (q, diag) = if cfg.algorithm.learner() == Learner::Q {
                    robust_q_learning(&self.train, &regions, &lcfg, None, &mut rng)?
                } else {
                    robust_sarsa(&self.train, &regions, &lcfg, None, &mut rng)?
                };
                (TrainedAgent::QTable { q }, diag.beta_hat, diag.warnings)
            }
            Learner::Td => {
                let regions = self.regions(radius)?;
                let policy = self.policy.as_ref().expect("TD setup has a policy");
                let (v, diag) = robust_td_lambda(&self.train, policy, &regions, &lcfg, None, &mut rng)?;
                (TrainedAgent::Value { v }, diag.beta_hat, diag.warnings)
            }
            Learner::Linear(variant) => {
                let region = cfg.region.single(radius)?;
                let policy = self.policy.as_ref().expect("gradient-TD setup has a policy");
                let run = robust_gradient_td(
                    variant,
                    &self.train,
                    policy,
                    &self.features,
                    &region,
                    &cfg.gradient_config(),
                    None,
                    &mut rng,
                )?;
                (TrainedAgent::Linear { model: run.model }, None, Vec::new())
            }
            Learner::Nonlinear(variant) => {
                let region = cfg.region.single(radius)?;
                let policy = self.policy.as_ref().expect("gradient-TD setup has a policy");
                let model = self.model.as_deref().expect("nonlinear setup has a model");
                let mut gcfg = cfg.gradient_config();
                if gcfg.theta0.is_none() && matches!(cfg.nonlinear, Some(NonlinearConfig::Tanh { .. })) {
                    // Zero weights are a saddle of the tanh network.
                    gcfg.theta0 = Some((0..model.dim()).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect());
                }
                let run = robust_nonlinear_gradient_td(
                    variant, &self.train, policy, model, &region, None, &gcfg, None, &mut rng,
                )?;
                let mut warnings = Vec::new();
                if run.active_after_burn_in > 0.01 {
                    warnings.push(format!(
                        "projection active on {:.1}% of post-burn-in steps",
                        100.0 * run.active_after_burn_in
                    ));
                }
                (TrainedAgent::Nonlinear { theta: run.theta, w: run.w }, None, warnings)
            }
        };
        let warnings = warnings.into_iter().map(|w| format!("seed {seed}: {w}")).collect();
        Ok(SeedAgent { seed, agent, beta_hat, warnings })
    }

    /// Greedy policy of an agent. Value-based agents act by one-step robust
    /// lookahead on the training model.
    fn greedy_policy(&self, agent: &TrainedAgent, radius: f64) -> Result<Policy> {
        let v = match agent {
            TrainedAgent::QTable { q } => return Ok(q.greedy_policy()),
            TrainedAgent::Value { v } => v.v.clone(),
            TrainedAgent::Linear { model } => self.features.values(&model.theta)?,
            TrainedAgent::Nonlinear { theta, .. } => {
                self.model.as_deref().expect("nonlinear setup has a model").values(theta)
            }
        };
        let regions = match self.cfg.algorithm.learner() {
            Learner::Td => self.regions(radius)?,
            _ => Regions::shared(self.cfg.region.single(self.radius_for(radius))?),
        };
        let (_, actions) = bellman_operator(&self.train, &regions, &v, false)?;
        Ok(Policy::Deterministic(actions))
    }

    fn rewards(&self, policy: &Policy, episodes: usize, rng: &mut SimRng) -> Vec<f64> {
        evaluate_rewards(&self.truth, policy, self.start, episodes, self.cfg.eval_horizon, rng)
    }
}

/// Episode rewards `−Σ_t c(s_t, a_t)` on `mdp`, each episode ending at an
/// absorbing state or after `horizon` steps.
pub fn evaluate_rewards(
    mdp: &TabularMdp,
    policy: &Policy,
    start: usize,
    episodes: usize,
    horizon: usize,
    rng: &mut SimRng,
) -> Vec<f64> {
    (0..episodes)
        .map(|_| {
            let mut s = start;
            let mut total = 0.0;
            for _ in 0..horizon {
                if mdp.is_absorbing(s) {
                    break;
                }
                let a = policy.action(s, rng);
                total -= mdp.cost(s, a);
                s = sample_row(mdp.row(s, a), rng);
            }
            total
        })
        .collect()
}

/// Trains one agent per seed at the configured (or selected) radius.
pub fn train_agents(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let setup = Setup::new(cfg)?;
    let radius = if cfg.searches_radius() { search(&setup)?.chosen_radius } else { cfg.fixed_radius() };
    let agents = cfg.seeds.par_iter().map(|&s| setup.train_agent(radius, s)).collect::<Result<Vec<_>>>()?;
    Ok(TrainReport { schema_version: SCHEMA_VERSION, radius: setup.radius_for(radius), agents })
}

/// Highest score wins; ties go to the smaller radius. `scores` must be sorted
/// by increasing radius.
pub fn choose_radius(scores: &[RadiusScore]) -> Option<f64> {
    let mut best: Option<&RadiusScore> = None;
    for s in scores {
        if best.is_none_or(|b| s.score > b.score) {
            best = Some(s);
        }
    }
    best.map(|b| b.radius)
}

/// Splits `seeds` into ten contiguous folds after padding with fresh seeds
/// (counting up from the largest) to a multiple of ten.
pub fn seed_folds(seeds: &[u64]) -> Vec<Vec<u64>> {
    let mut padded = seeds.to_vec();
    let mut next = seeds.iter().copied().max().map_or(0, |m| m + 1);
    while !padded.len().is_multiple_of(FOLDS) {
        while padded.contains(&next) {
            next += 1;
        }
        padded.push(next);
        next += 1;
    }
    padded.chunks(padded.len() / FOLDS).map(<[u64]>::to_vec).collect()
}

/// Ten-fold cross-validated line search over `region.radius_grid`.
///
/// Each agent is trained once per (seed, radius) on the perturbed model. For
/// fold `k` the score is the mean reward on the true model of every agent
/// trained on a seed outside the fold, evaluated with the validation stream
/// of every seed inside it.
pub fn cv_line_search(cfg: &ExperimentConfig) -> Result<CvResult> {
    search(&Setup::new(cfg)?)
}

fn search(setup: &Setup) -> Result<CvResult> {
    let cfg = setup.cfg;
    let grid = cfg
        .region
        .radius_grid
        .as_ref()
        .ok_or_else(|| Error::Config { path: "region.radius_grid".into(), msg: "no radius grid".into() })?;
    let folds = seed_folds(cfg.cv_seeds.as_deref().unwrap_or(&cfg.seeds));
    if grid.as_slice() == [0.0] {
        return Ok(CvResult { chosen_radius: 0.0, scores: Vec::new(), folds });
    }
    if grid.len() < 2 {
        return Err(Error::Config { path: "region.radius_grid".into(), msg: "line search needs at least two radii".into() });
    }
    let seeds: Vec<u64> = folds.concat();
    let fold_of = |idx: usize| idx / folds[0].len();
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|r| (0..seeds.len()).map(move |s| (r, s))).collect();
    let policies = jobs
        .par_iter()
        .map(|&(r, s)| {
            let agent = setup.train_agent(grid[r], seeds[s])?;
            setup.greedy_policy(&agent.agent, grid[r])
        })
        .collect::<Result<Vec<_>>>()?;
    let n = seeds.len();
    // value[(r * n + s) * n + v]: agent (r, s) on validation seed v.
    let pairs: Vec<(usize, usize, usize)> = (0..grid.len())
        .flat_map(|r| (0..n).flat_map(move |s| (0..n).map(move |v| (r, s, v))))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(r, s, v)| {
            if fold_of(s) == fold_of(v) {
                return f64::NAN;
            }
            let mut rng = stream(seeds[v], VALIDATION_STREAM);
            let rewards = setup.rewards(&policies[r * n + s], cfg.cv_eval_episodes, &mut rng);
            mean(&rewards)
        })
        .collect();
    let scores: Vec<RadiusScore> = grid
        .iter()
        .enumerate()
        .map(|(r, &radius)| {
            let fold_scores: Vec<f64> = (0..folds.len())
                .map(|k| {
                    let cell: Vec<f64> = (0..n)
                        .filter(|&s| fold_of(s) != k)
                        .flat_map(|s| (0..n).filter(move |&v| fold_of(v) == k).map(move |v| (s, v)))
                        .map(|(s, v)| values[(r * n + s) * n + v])
                        .collect();
                    mean(&cell)
                })
                .collect();
            RadiusScore { radius, score: mean(&fold_scores), fold_scores }
        })
        .collect();
    let chosen_radius = choose_radius(&scores).expect("grid is nonempty");
    Ok(CvResult { chosen_radius, scores, folds })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Trains and evaluates every seed, then writes `report.json` and
/// `episodes.csv` to `out` (or the configured output directory, if any).
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<EvalReport> {
    let setup = Setup::new(cfg)?;
    let (radius, cv) = if cfg.searches_radius() {
        let cv = search(&setup)?;
        (cv.chosen_radius, Some(cv))
    } else {
        (setup.radius_for(cfg.fixed_radius()), None)
    };
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let agent = setup.train_agent(radius, seed)?;
            let policy = setup.greedy_policy(&agent.agent, radius)?;
            let mut rng = stream(seed, EVAL_STREAM);
            Ok((agent, setup.rewards(&policy, cfg.eval_episodes, &mut rng)))
        })
        .collect::<Result<Vec<_>>>()?;

    let split = ((cfg.transient_fraction * cfg.eval_episodes as f64).floor() as usize).min(cfg.eval_episodes);
    let phase_mean = |x: &[f64]| if x.is_empty() { 0.0 } else { mean(x) };
    let mut seeds = Vec::with_capacity(runs.len());
    let mut warnings = Vec::new();
    let mut episode_rewards = Vec::with_capacity(runs.len());
    for (agent, rewards) in runs {
        let (transient, stationary) = rewards.split_at(split);
        seeds.push(SeedSummary {
            seed: agent.seed,
            transient_episodes: transient.len(),
            stationary_episodes: stationary.len(),
            transient_cumulative_reward: transient.iter().sum(),
            stationary_cumulative_reward: stationary.iter().sum(),
            transient_mean: phase_mean(transient),
            stationary_mean: phase_mean(stationary),
            beta_hat: agent.beta_hat,
        });
        warnings.extend(agent.warnings);
        episode_rewards.push(rewards);
    }
    let all: Vec<f64> = episode_rewards.concat();
    let tail = report_tail(&all, cfg.tail_thresholds.as_deref())?;
    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        radius,
        chosen_radius: cv.as_ref().map(|c| c.chosen_radius),
        cv_scores: cv.map(|c| c.scores),
        seeds,
        tail,
        warnings,
        episode_rewards,
    };
    if let Some(dir) = out.or(cfg.output_dir.as_deref().map(Path::new)) {
        report.write_to(dir)?;
    }
    Ok(report)
}

/// Input of the `oracle` command: an MDP and its confidence region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleRequest {
    pub mdp: TabularMdp,
    /// Shared region; none means the nominal (radius 0) oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionSpec>,
    /// Intersect with the simplex (true) or use the proxy region.
    #[serde(default = "default_true")]
    pub constrained: bool,
    #[serde(default = "default_oracle_tol")]
    pub tolerance: f64,
}

fn default_true() -> bool {
    true
}

fn default_oracle_tol() -> f64 {
    1e-10
}

impl OracleRequest {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config { path: e.path().to_string(), msg: e.into_inner().to_string() })
    }

    pub fn solve(&self) -> Result<OracleReport> {
        let region = match &self.region {
            Some(spec) => spec.build()?,
            None => ConfidenceRegion::zero(),
        };
        oracle_report(&self.mdp, &Regions::shared(region), self.constrained, self.tolerance)
    }
}

/// Student-t test statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for "first sample has the larger mean".
    pub p_greater: f64,
    pub p_two_sided: f64,
}

fn t_test(t: f64, df: f64) -> Result<TTest> {
    if t.is_nan() {
        // Zero spread and zero mean difference.
        return Ok(TTest { t: 0.0, df, p_greater: 0.5, p_two_sided: 1.0 });
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p_greater = 1.0 - dist.cdf(t);
    let p_two_sided = (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0);
    Ok(TTest { t, df, p_greater, p_two_sided })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let m = mean(x);
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0);
    (m, v)
}

/// Paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument("paired test needs two equal samples of size ≥ 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, v) = mean_var(&d);
    let n = d.len() as f64;
    t_test(m / (v / n).sqrt(), n - 1.0)
}

/// Welch's unequal-variance t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("Welch test needs samples of size ≥ 2".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let df = if se2 > 0.0 { se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0)) } else { na + nb - 2.0 };
    t_test((ma - mb) / se2.sqrt(), df)
}
