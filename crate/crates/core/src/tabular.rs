//! Sample-based robust learners on tabular MDPs.
//!
//! Each update adds `ϑ·σ_Û(v)` to the usual sampled target, where `v` is the
//! current value estimate. With a trivial region every learner reduces to its
//! classical counterpart, draw for draw.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::{QTable, ValueTable};
use crate::error::{check_dim, check_index, Error, Result};
use crate::mdp::{epsilon_greedy, sample_row, validate_schedule, Policy, StepSchedule, StoppingRule, TabularMdp};
use crate::rng::SimRng;
use crate::uncertainty::{max_beta, BetaNorm, ConfidenceRegion, Regions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceVariant {
    EveryVisit,
    Restart,
}

/// Eligibility coefficients `z(i)`, decayed by `ϑλ` every step.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityTraces {
    z: Vec<f64>,
    variant: TraceVariant,
    decay: f64,
}

impl EligibilityTraces {
    pub fn new(n: usize, variant: TraceVariant, discount: f64, lambda: f64) -> Result<Self> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidArgument(format!("discount {discount} not in (0, 1)")));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!("λ = {lambda} not in [0, 1]")));
        }
        Ok(Self { z: vec![0.0; n], variant, decay: discount * lambda })
    }

    pub fn update(&mut self, visited: usize) {
        self.z.iter_mut().for_each(|z| *z *= self.decay);
        match self.variant {
            TraceVariant::EveryVisit => self.z[visited] += 1.0,
            TraceVariant::Restart => self.z[visited] = 1.0,
        }
    }

    pub fn reset(&mut self) {
        self.z.iter_mut().for_each(|z| *z = 0.0);
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step size {gamma} not in (0, 1]")))
    }
}

/// `q(i,a) ← (1−γ)q(i,a) + γ(cost + ϑσ_Û(v) + ϑ min_{a′} q(j,a′))`, `v = min_a q`.
#[allow(clippy::too_many_arguments)]
pub fn robust_q_update(
    q: &mut QTable,
    i: usize,
    a: usize,
    j: usize,
    cost: f64,
    gamma: f64,
    region: &ConfidenceRegion,
    discount: f64,
) -> Result<()> {
    let j_value = {
        check_index("next state", j, q.n_states())?;
        q.value_of(j)
    };
    robust_update(q, i, a, j_value, cost, gamma, region, discount)
}

/// As [`robust_q_update`] with the bootstrap `q(j, a″)` for a caller-chosen `a″`.
#[allow(clippy::too_many_arguments)]
pub fn robust_sarsa_update(
    q: &mut QTable,
    i: usize,
    a: usize,
    j: usize,
    a_next: usize,
    cost: f64,
    gamma: f64,
    region: &ConfidenceRegion,
    discount: f64,
) -> Result<()> {
    check_index("next state", j, q.n_states())?;
    check_index("next action", a_next, q.n_actions())?;
    let boot = q.get(j, a_next);
    robust_update(q, i, a, boot, cost, gamma, region, discount)
}

#[allow(clippy::too_many_arguments)]
fn robust_update(
    q: &mut QTable,
    i: usize,
    a: usize,
    bootstrap: f64,
    cost: f64,
    gamma: f64,
    region: &ConfidenceRegion,
    discount: f64,
) -> Result<()> {
    check_index("state", i, q.n_states())?;
    check_index("action", a, q.n_actions())?;
    check_gamma(gamma)?;
    let sigma = if region.is_trivial() { 0.0 } else { region.support(&q.values())?.value };
    let target = cost + discount * sigma + discount * bootstrap;
    q.set(i, a, (1.0 - gamma) * q.get(i, a) + gamma * target);
    Ok(())
}

/// `d̃ = cost + ϑv(j) − v(i) + ϑσ_Û(v)`.
pub fn robust_td_error(
    v: &[f64],
    i: usize,
    j: usize,
    cost: f64,
    discount: f64,
    region: &ConfidenceRegion,
) -> Result<f64> {
    check_index("state", i, v.len())?;
    check_index("next state", j, v.len())?;
    let sigma = if region.is_trivial() { 0.0 } else { region.support(v)?.value };
    Ok(cost + discount * v[j] - v[i] + discount * sigma)
}

/// `(HQ)(i,a) = c(i,a) + ϑ(Σ_j p_ij min_{a′} Q(j,a′) + σ_Û(v_Q))`: the proxy
/// operator whose sampled version is robust Q-learning.
pub fn h_operator(mdp: &TabularMdp, regions: &Regions, q: &QTable) -> Result<QTable> {
    check_dim(mdp.n_states(), q.n_states())?;
    check_dim(mdp.n_actions(), q.n_actions())?;
    let v = q.values();
    let mut out = QTable::zeros(mdp.n_states(), mdp.n_actions());
    for i in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let expect: f64 = mdp.row(i, a).iter().zip(&v).map(|(p, x)| p * x).sum();
            let sigma = regions.get(i, a).support(&v)?.value;
            out.set(i, a, mdp.cost(i, a) + mdp.discount() * (expect + sigma));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularLearnerConfig {
    pub schedule: StepSchedule,
    /// Exploration probability δ of the behaviour policy.
    #[serde(default = "default_exploration")]
    pub exploration: f64,
    /// Transitions for Q-learning and SARSA.
    #[serde(default)]
    pub steps: usize,
    /// Simulations for TD(λ).
    #[serde(default)]
    pub episodes: usize,
    #[serde(default = "default_trace")]
    pub trace: TraceVariant,
    #[serde(default)]
    pub lambda: f64,
    /// Episode stopping rule; `None` means absorbing-state termination capped
    /// at `10·n` steps.
    #[serde(default)]
    pub stopping: Option<StoppingRule>,
    /// Uniform start state per episode (otherwise `start_state`).
    #[serde(default = "default_true")]
    pub exploring_starts: bool,
    #[serde(default)]
    pub start_state: usize,
    /// Update `v` after every TD step instead of once per simulation.
    #[serde(default)]
    pub online_td: bool,
    /// Snapshot interval in steps (Q/SARSA) or simulations (TD); 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Boundary samples per pair for the β̂ diagnostic; 0 skips it.
    #[serde(default = "default_beta_samples")]
    pub beta_samples: usize,
}

fn default_exploration() -> f64 {
    0.2
}

fn default_trace() -> TraceVariant {
    TraceVariant::EveryVisit
}

fn default_true() -> bool {
    true
}

fn default_beta_samples() -> usize {
    32
}

impl Default for TabularLearnerConfig {
    fn default() -> Self {
        Self {
            schedule: StepSchedule::new(1.0, 1.0, 0.8),
            exploration: default_exploration(),
            steps: 100_000,
            episodes: 10_000,
            trace: default_trace(),
            lambda: 0.0,
            stopping: None,
            exploring_starts: true,
            start_state: 0,
            online_td: false,
            checkpoint_every: 0,
            beta_samples: default_beta_samples(),
        }
    }
}

impl TabularLearnerConfig {
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        let check = validate_schedule(&self.schedule);
        if !check.valid {
            return Err(Error::InvalidArgument(format!("step schedule: {}", check.diagnostic)));
        }
        if self.schedule.value(0) > 1.0 {
            return Err(Error::InvalidArgument("first step size exceeds 1".into()));
        }
        if !(0.0..=1.0).contains(&self.exploration) {
            return Err(Error::InvalidArgument(format!("exploration {} not in [0, 1]", self.exploration)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("λ = {} not in [0, 1]", self.lambda)));
        }
        check_index("start state", self.start_state, mdp.n_states())?;
        self.stopping_rule(mdp)?;
        Ok(())
    }

    pub fn stopping_rule(&self, mdp: &TabularMdp) -> Result<StoppingRule> {
        let rule = self.stopping.unwrap_or(StoppingRule::Absorbing { cap: Some(10 * mdp.n_states()) });
        rule.validate(mdp)?;
        Ok(rule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_table: Option<QTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_table: Option<ValueTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_to_oracle: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub checkpoints: Vec<Checkpoint>,
    /// Updates per state-action pair (Q/SARSA) or visits per state (TD).
    pub visits: Vec<usize>,
    pub episodes: usize,
    /// Sampled β over the training model's pairs, when computed.
    pub beta_hat: Option<f64>,
    /// Largest `Σ_m z_m(i) / visits(i) − 1` seen in any simulation (TD only).
    pub rho_hat: Option<f64>,
    pub warnings: Vec<String>,
    pub final_distance: Option<f64>,
}

fn beta_diagnostic(env: &TabularMdp, regions: &Regions, samples: usize, rng_seed: u64) -> Result<(Option<f64>, Vec<String>)> {
    if samples == 0 || regions.is_trivial() {
        return Ok((if regions.is_trivial() { Some(0.0) } else { None }, Vec::new()));
    }
    // A private stream keeps the learner's draws independent of the diagnostic.
    let mut rng = crate::rng::stream(rng_seed, u64::MAX);
    let beta = max_beta(env, regions, samples, &BetaNorm::L1, &mut rng)?;
    let mut warnings = Vec::new();
    if env.discount() * (1.0 + beta) >= 1.0 {
        warnings.push(format!(
            "sampled β = {beta:.4} gives ϑ(1 + β) = {:.4} ≥ 1; the convergence guarantee does not apply",
            env.discount() * (1.0 + beta)
        ));
    }
    Ok((Some(beta), warnings))
}

enum Control {
    Q,
    Sarsa,
}

/// Robust Q-learning with a δ-greedy behaviour policy and per-pair
/// visit-count step sizes.
pub fn robust_q_learning(
    env: &TabularMdp,
    regions: &Regions,
    cfg: &TabularLearnerConfig,
    oracle: Option<&QTable>,
    rng: &mut SimRng,
) -> Result<(QTable, Diagnostics)> {
    control(env, regions, cfg, oracle, rng, Control::Q)
}

/// Robust SARSA: like Q-learning, but bootstraps on the next action actually
/// chosen by the δ-greedy rule.
pub fn robust_sarsa(
    env: &TabularMdp,
    regions: &Regions,
    cfg: &TabularLearnerConfig,
    oracle: Option<&QTable>,
    rng: &mut SimRng,
) -> Result<(QTable, Diagnostics)> {
    control(env, regions, cfg, oracle, rng, Control::Sarsa)
}

fn control(
    env: &TabularMdp,
    regions: &Regions,
    cfg: &TabularLearnerConfig,
    oracle: Option<&QTable>,
    rng: &mut SimRng,
    kind: Control,
) -> Result<(QTable, Diagnostics)> {
    cfg.validate(env)?;
    regions.validate(env)?;
    let (n, m, g) = (env.n_states(), env.n_actions(), env.discount());
    let stop = cfg.stopping_rule(env)?;
    let mut diag = Diagnostics { visits: vec![0; n * m], ..Default::default() };
    let seed_hint: u64 = rng.random();
    let (beta, warnings) = beta_diagnostic(env, regions, cfg.beta_samples, seed_hint)?;
    diag.beta_hat = beta;
    diag.warnings = warnings;

    let mut q = QTable::zeros(n, m);
    let mut state = start_state(cfg, n, rng);
    let mut action = epsilon_greedy(&q, state, cfg.exploration, rng);
    let mut ep_len = 0usize;
    diag.episodes = 1;
    for t in 0..cfg.steps {
        let next = sample_row(env.row(state, action), rng);
        let k = state * m + action;
        let gamma = cfg.schedule.value(diag.visits[k]);
        diag.visits[k] += 1;
        let region = regions.get(state, action);
        let cost = env.cost(state, action);
        match kind {
            Control::Q => {
                robust_q_update(&mut q, state, action, next, cost, gamma, region, g)?;
                action = usize::MAX;
            }
            Control::Sarsa => {
                let a_next = epsilon_greedy(&q, next, cfg.exploration, rng);
                robust_sarsa_update(&mut q, state, action, next, a_next, cost, gamma, region, g)?;
                action = a_next;
            }
        }
        state = next;
        ep_len += 1;
        if episode_over(env, stop, state, ep_len, rng) {
            state = start_state(cfg, n, rng);
            ep_len = 0;
            diag.episodes += 1;
            action = usize::MAX;
        }
        if action == usize::MAX {
            action = epsilon_greedy(&q, state, cfg.exploration, rng);
        }
        if cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 {
            diag.checkpoints.push(Checkpoint {
                step: t + 1,
                q_table: Some(q.clone()),
                value_table: None,
                distance_to_oracle: oracle.map(|o| o.sup_distance(&q)),
            });
        }
    }
    diag.final_distance = oracle.map(|o| o.sup_distance(&q));
    Ok((q, diag))
}

fn start_state(cfg: &TabularLearnerConfig, n: usize, rng: &mut SimRng) -> usize {
    if cfg.exploring_starts {
        rng.random_range(0..n)
    } else {
        cfg.start_state
    }
}

fn episode_over(env: &TabularMdp, stop: StoppingRule, state: usize, len: usize, rng: &mut SimRng) -> bool {
    match stop {
        StoppingRule::Horizon { n } => len >= n,
        StoppingRule::Absorbing { cap } => env.is_absorbing(state) || cap.is_some_and(|c| len >= c),
        StoppingRule::Geometric { q, cap } => rng.random::<f64>() < q || cap.is_some_and(|c| len >= c),
    }
}

/// Robust TD(λ) policy evaluation.
///
/// Simulation `t` follows `policy` until the stopping rule fires, accumulating
/// `Σ_m z_m(i) d̃_m` with every `d̃_m` computed from the value `v_t` frozen at
/// the start of the simulation, then applies `v ← v + γ_t·Σ`. With
/// `online_td` the value is updated after every step instead.
pub fn robust_td_lambda(
    env: &TabularMdp,
    policy: &Policy,
    regions: &Regions,
    cfg: &TabularLearnerConfig,
    oracle: Option<&ValueTable>,
    rng: &mut SimRng,
) -> Result<(ValueTable, Diagnostics)> {
    cfg.validate(env)?;
    regions.validate(env)?;
    policy.validate(env)?;
    let actions = policy
        .as_deterministic()
        .ok_or_else(|| Error::InvalidArgument("TD(λ) evaluates a deterministic policy".into()))?
        .to_vec();
    let (n, g) = (env.n_states(), env.discount());
    let stop = cfg.stopping_rule(env)?;
    let mut diag = Diagnostics { visits: vec![0; n], ..Default::default() };
    let seed_hint: u64 = rng.random();
    let (beta, warnings) = beta_diagnostic(env, regions, cfg.beta_samples, seed_hint)?;
    diag.beta_hat = beta;
    diag.warnings = warnings;

    let mut v = vec![0.0; n];
    let mut traces = EligibilityTraces::new(n, cfg.trace, g, cfg.lambda)?;
    let mut acc = vec![0.0; n];
    let mut mass = vec![0.0; n];
    let mut counts = vec![0usize; n];
    // σ of the frozen value per state, filled lazily within a simulation.
    let mut sigma_cache: Vec<Option<f64>> = vec![None; n];
    let mut rho_hat = 0.0f64;
    for t in 0..cfg.episodes {
        let gamma = cfg.schedule.value(t);
        traces.reset();
        acc.iter_mut().for_each(|x| *x = 0.0);
        mass.iter_mut().for_each(|x| *x = 0.0);
        counts.iter_mut().for_each(|x| *x = 0);
        sigma_cache.iter_mut().for_each(|x| *x = None);
        let mut state = start_state(cfg, n, rng);
        let mut len = 0usize;
        let mut running = !(matches!(stop, StoppingRule::Absorbing { .. }) && env.is_absorbing(state));
        while running {
            let a = actions[state];
            let next = sample_row(env.row(state, a), rng);
            traces.update(state);
            counts[state] += 1;
            diag.visits[state] += 1;
            let region = regions.get(state, a);
            let sigma = if cfg.online_td {
                if region.is_trivial() { 0.0 } else { region.support(&v)?.value }
            } else {
                match sigma_cache[state] {
                    Some(s) => s,
                    None => {
                        let s = if region.is_trivial() { 0.0 } else { region.support(&v)?.value };
                        sigma_cache[state] = Some(s);
                        s
                    }
                }
            };
            let d = env.cost(state, a) + g * v[next] - v[state] + g * sigma;
            for (k, z) in traces.values().iter().enumerate() {
                if *z != 0.0 {
                    if cfg.online_td {
                        v[k] += gamma * z * d;
                    } else {
                        acc[k] += z * d;
                    }
                    mass[k] += z;
                }
            }
            state = next;
            len += 1;
            running = !episode_over(env, stop, state, len, rng);
        }
        if !cfg.online_td {
            for (vk, ak) in v.iter_mut().zip(&acc) {
                *vk += gamma * ak;
            }
        }
        for k in 0..n {
            if counts[k] > 0 {
                rho_hat = rho_hat.max(mass[k] / counts[k] as f64 - 1.0);
            }
        }
        diag.episodes += 1;
        if cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 {
            let vt = ValueTable::new(v.clone());
            diag.checkpoints.push(Checkpoint {
                step: t + 1,
                q_table: None,
                distance_to_oracle: oracle.map(|o| o.sup_distance(&vt)),
                value_table: Some(vt),
            });
        }
    }
    diag.rho_hat = Some(rho_hat);
    let v = ValueTable::new(v);
    diag.final_distance = oracle.map(|o| o.sup_distance(&v));
    Ok((v, diag))
}
