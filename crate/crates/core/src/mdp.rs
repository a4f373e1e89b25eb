//! Finite MDPs, policies, trajectories and step-size schedules.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::QTable;
use crate::error::{check_index, Error, Result};
use crate::rng::SimRng;

const ROW_TOL: f64 = 1e-9;

/// Explicit finite MDP with per-pair costs and a dense transition tensor.
///
/// Costs are stored row-major (`cost[i * n_actions + a]`) and transitions
/// a-major (`transitions[(a * n + i) * n + j]`), which is also the JSON
/// layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    cost: Vec<f64>,
    transitions: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMdp {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    cost: Vec<f64>,
    transitions: Vec<f64>,
}

impl TryFrom<RawMdp> for TabularMdp {
    type Error = Error;

    fn try_from(raw: RawMdp) -> Result<Self> {
        TabularMdp::new(raw.n_states, raw.n_actions, raw.discount, raw.cost, raw.transitions)
    }
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        discount: f64,
        cost: Vec<f64>,
        transitions: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidMdp(format!("discount {discount} not in (0, 1)")));
        }
        if cost.len() != n_states * n_actions {
            return Err(Error::InvalidMdp(format!(
                "cost table has {} entries, expected {}",
                cost.len(),
                n_states * n_actions
            )));
        }
        if let Some(k) = cost.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidMdp(format!("non-finite cost at entry {k}")));
        }
        if transitions.len() != n_actions * n_states * n_states {
            return Err(Error::InvalidMdp(format!(
                "transition tensor has {} entries, expected {}",
                transitions.len(),
                n_actions * n_states * n_states
            )));
        }
        for a in 0..n_actions {
            for i in 0..n_states {
                let row = &transitions[(a * n_states + i) * n_states..][..n_states];
                if let Some(j) = row.iter().position(|&p| !(-0.0..=1.0).contains(&p)) {
                    return Err(Error::InvalidMdp(format!(
                        "p[{a}][{i}][{j}] = {} outside [0, 1]",
                        row[j]
                    )));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_TOL {
                    return Err(Error::InvalidMdp(format!("row p[{a}][{i}] sums to {s}")));
                }
            }
        }
        Ok(Self { n_states, n_actions, discount, cost, transitions })
    }

    /// Builds from `cost[i][a]` and `p[a][i][j]` nested tables.
    pub fn from_tables(discount: f64, cost: &[Vec<f64>], p: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n = cost.len();
        let m = p.len();
        let flat_cost: Vec<f64> = cost.iter().flatten().copied().collect();
        let flat_p: Vec<f64> = p.iter().flatten().flatten().copied().collect();
        Self::new(n, m, discount, flat_cost, flat_p)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn cost(&self, i: usize, a: usize) -> f64 {
        self.cost[i * self.n_actions + a]
    }

    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    /// Nominal row `p[a][i][·]`.
    pub fn row(&self, i: usize, a: usize) -> &[f64] {
        let n = self.n_states;
        &self.transitions[(a * n + i) * n..][..n]
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            discount,
            self.cost.clone(),
            self.transitions.clone(),
        )
    }

    pub fn with_transitions(&self, transitions: Vec<f64>) -> Result<Self> {
        Self::new(self.n_states, self.n_actions, self.discount, self.cost.clone(), transitions)
    }

    /// A state is absorbing when every action keeps the chain there.
    pub fn is_absorbing(&self, i: usize) -> bool {
        (0..self.n_actions).all(|a| self.row(i, a)[i] >= 1.0 - ROW_TOL)
    }

    pub fn absorbing_states(&self) -> Vec<usize> {
        (0..self.n_states).filter(|&i| self.is_absorbing(i)).collect()
    }

    pub fn check_pair(&self, i: usize, a: usize) -> Result<()> {
        check_index("state", i, self.n_states)?;
        check_index("action", a, self.n_actions)
    }

    /// State-to-state matrix induced by a (possibly stochastic) policy.
    pub fn policy_matrix(&self, policy: &Policy) -> Result<DMatrix<f64>> {
        policy.validate(self)?;
        let n = self.n_states;
        let mut p = DMatrix::zeros(n, n);
        for i in 0..n {
            for (a, w) in policy.action_probabilities(i, self.n_actions).into_iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (j, &pij) in self.row(i, a).iter().enumerate() {
                    p[(i, j)] += w * pij;
                }
            }
        }
        Ok(p)
    }

    /// Expected one-step cost under a policy.
    pub fn policy_costs(&self, policy: &Policy) -> Result<Vec<f64>> {
        policy.validate(self)?;
        Ok((0..self.n_states)
            .map(|i| {
                policy
                    .action_probabilities(i, self.n_actions)
                    .into_iter()
                    .enumerate()
                    .map(|(a, w)| w * self.cost(i, a))
                    .sum()
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Draws the next state from `p[a][i][·]` by inverse CDF.
pub fn sample_transition(mdp: &TabularMdp, i: usize, a: usize, rng: &mut SimRng) -> Result<usize> {
    mdp.check_pair(i, a)?;
    Ok(sample_row(mdp.row(i, a), rng))
}

pub(crate) fn sample_row(row: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Deterministic(Vec<usize>),
    /// Greedy (cost-minimising) on `q` with probability `1 - delta`, uniform otherwise.
    EpsilonGreedy { q: QTable, delta: f64 },
    /// Explicit action distribution per state.
    Stochastic(Vec<Vec<f64>>),
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy::Stochastic(vec![vec![1.0 / n_actions as f64; n_actions]; n_states])
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        let (n, m) = (mdp.n_states(), mdp.n_actions());
        match self {
            Policy::Deterministic(actions) => {
                if actions.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: actions.len() });
                }
                for &a in actions {
                    check_index("action", a, m)?;
                }
            }
            Policy::EpsilonGreedy { q, delta } => {
                if !(0.0..=1.0).contains(delta) {
                    return Err(Error::InvalidArgument(format!("exploration {delta} not in [0, 1]")));
                }
                if q.n_states() != n || q.n_actions() != m {
                    return Err(Error::InvalidArgument("Q-table shape does not match MDP".into()));
                }
            }
            Policy::Stochastic(probs) => {
                if probs.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: probs.len() });
                }
                for (i, row) in probs.iter().enumerate() {
                    if row.len() != m
                        || row.iter().any(|&w| w < 0.0)
                        || (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOL
                    {
                        return Err(Error::InvalidArgument(format!(
                            "action distribution at state {i} is not a distribution over {m} actions"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn action(&self, i: usize, rng: &mut SimRng) -> usize {
        match self {
            Policy::Deterministic(actions) => actions[i],
            Policy::EpsilonGreedy { q, delta } => epsilon_greedy(q, i, *delta, rng),
            Policy::Stochastic(probs) => sample_row(&probs[i], rng),
        }
    }

    pub fn action_probabilities(&self, i: usize, n_actions: usize) -> Vec<f64> {
        match self {
            Policy::Deterministic(actions) => {
                let mut w = vec![0.0; n_actions];
                w[actions[i]] = 1.0;
                w
            }
            Policy::EpsilonGreedy { q, delta } => {
                let mut w = vec![delta / n_actions as f64; n_actions];
                w[q.greedy_action(i)] += 1.0 - delta;
                w
            }
            Policy::Stochastic(probs) => probs[i].clone(),
        }
    }

    /// The deterministic action table, if this policy has one.
    pub fn as_deterministic(&self) -> Option<&[usize]> {
        match self {
            Policy::Deterministic(a) => Some(a),
            _ => None,
        }
    }
}

/// δ-greedy choice over a cost table: uniform with probability δ, otherwise
/// the lowest-index minimiser.
pub fn epsilon_greedy(q: &QTable, i: usize, delta: f64, rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    if u < delta {
        rng.random_range(0..q.n_actions())
    } else {
        q.greedy_action(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub cost: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Set when the rollout ended by entering an absorbing state.
    pub terminal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.state)
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }

    pub fn is_chained(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].next_state == w[1].state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StoppingRule {
    /// Exactly `n` steps.
    Horizon { n: usize },
    /// Stop on entering an absorbing state, optionally capped.
    Absorbing { cap: Option<usize> },
    /// After every step stop with probability `q`, optionally capped.
    Geometric { q: f64, cap: Option<usize> },
}

impl StoppingRule {
    pub fn horizon(n: usize) -> Self {
        StoppingRule::Horizon { n }
    }

    pub fn absorbing(mdp: &TabularMdp, cap: Option<usize>) -> Result<Self> {
        let rule = StoppingRule::Absorbing { cap };
        rule.validate(mdp)?;
        Ok(rule)
    }

    pub fn geometric(q: f64, cap: Option<usize>) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidArgument(format!("stopping probability {q} not in (0, 1)")));
        }
        Ok(StoppingRule::Geometric { q, cap })
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        match *self {
            StoppingRule::Horizon { .. } => Ok(()),
            StoppingRule::Absorbing { cap } => {
                if cap.is_none() && mdp.absorbing_states().is_empty() {
                    Err(Error::InvalidArgument(
                        "absorbing-state stopping on an MDP without absorbing states and no cap never terminates"
                            .into(),
                    ))
                } else {
                    Ok(())
                }
            }
            StoppingRule::Geometric { q, .. } => {
                if q > 0.0 && q < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!("stopping probability {q} not in (0, 1)")))
                }
            }
        }
    }

    fn cap(&self) -> Option<usize> {
        match *self {
            StoppingRule::Horizon { n } => Some(n),
            StoppingRule::Absorbing { cap } | StoppingRule::Geometric { cap, .. } => cap,
        }
    }
}

pub fn rollout(
    mdp: &TabularMdp,
    policy: &Policy,
    start: usize,
    stop: StoppingRule,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    check_index("state", start, mdp.n_states())?;
    policy.validate(mdp)?;
    stop.validate(mdp)?;
    let mut traj = Trajectory::default();
    if matches!(stop, StoppingRule::Absorbing { .. }) && mdp.is_absorbing(start) {
        traj.terminal = true;
        return Ok(traj);
    }
    let cap = stop.cap();
    let mut state = start;
    loop {
        if cap.is_some_and(|c| traj.steps.len() >= c) {
            break;
        }
        let action = policy.action(state, rng);
        let next_state = sample_row(mdp.row(state, action), rng);
        traj.steps.push(Step { state, action, cost: mdp.cost(state, action), next_state });
        state = next_state;
        match stop {
            StoppingRule::Horizon { .. } => {}
            StoppingRule::Absorbing { .. } => {
                if mdp.is_absorbing(state) {
                    traj.terminal = true;
                    break;
                }
            }
            StoppingRule::Geometric { q, .. } => {
                if rng.random::<f64>() < q {
                    break;
                }
            }
        }
    }
    Ok(traj)
}

/// Stationary distribution of an irreducible aperiodic chain by power
/// iteration, stopped at `‖ξP − ξ‖₁ ≤ 1e-10` (at most 10⁶ sweeps).
pub fn steady_state_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::InvalidArgument("transition matrix must be square and nonempty".into()));
    }
    for i in 0..n {
        let s: f64 = p.row(i).iter().sum();
        if (s - 1.0).abs() > ROW_TOL || p.row(i).iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidArgument(format!("row {i} is not a distribution")));
        }
    }
    check_ergodic(p)?;

    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 1_000_000;
    let mut xi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITER {
        for (j, slot) in next.iter_mut().enumerate() {
            *slot = (0..n).map(|i| xi[i] * p[(i, j)]).sum();
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        residual = xi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut xi, &mut next);
        if residual <= TOL {
            return Ok(xi);
        }
    }
    Err(Error::NotConverged { iterations: MAX_ITER, residual })
}

/// Irreducibility via forward/backward reachability from state 0, then the
/// period as the gcd of level differences along edges of a BFS tree.
fn check_ergodic(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    let reach = |forward: bool| -> Vec<Option<usize>> {
        let mut level = vec![None; n];
        level[0] = Some(0);
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let w = if forward { p[(u, v)] } else { p[(v, u)] };
                if w > 0.0 && level[v].is_none() {
                    level[v] = Some(level[u].unwrap() + 1);
                    queue.push_back(v);
                }
            }
        }
        level
    };
    let fwd = reach(true);
    if let Some(s) = fwd.iter().position(Option::is_none) {
        return Err(Error::NotErgodic(format!("reducible: state {s} unreachable from state 0")));
    }
    if let Some(s) = reach(false).iter().position(Option::is_none) {
        return Err(Error::NotErgodic(format!("reducible: state 0 unreachable from state {s}")));
    }
    let level: Vec<i64> = fwd.into_iter().map(|l| l.unwrap() as i64).collect();
    let mut period = 0i64;
    for u in 0..n {
        for v in 0..n {
            if p[(u, v)] > 0.0 {
                period = gcd(period, (level[u] + 1 - level[v]).abs());
            }
        }
    }
    if period != 1 {
        return Err(Error::NotErgodic(format!("periodic with period {period}")));
    }
    Ok(())
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Power-law step sizes `scale / (offset + t)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub scale: f64,
    pub offset: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCheck {
    pub valid: bool,
    pub diagnostic: String,
}

impl StepSchedule {
    pub fn new(scale: f64, offset: f64, exponent: f64) -> Self {
        Self { scale, offset, exponent }
    }

    pub fn harmonic() -> Self {
        Self::new(1.0, 1.0, 1.0)
    }

    pub fn value(&self, t: usize) -> f64 {
        self.scale / (self.offset + t as f64).powf(self.exponent)
    }
}

/// Robbins–Monro check: Σγ_t = ∞ and Σγ_t² < ∞ hold for the power law
/// exactly when the exponent lies in (0.5, 1].
pub fn validate_schedule(s: &StepSchedule) -> ScheduleCheck {
    let fail = |msg: String| ScheduleCheck { valid: false, diagnostic: msg };
    if !(s.scale > 0.0) {
        return fail(format!("scale {} must be positive", s.scale));
    }
    if !(s.offset >= 1.0) {
        return fail(format!("offset {} must be at least 1", s.offset));
    }
    if !(s.exponent > 0.5) {
        return fail(format!(
            "exponent {} <= 0.5: sum of squared steps diverges",
            s.exponent
        ));
    }
    if s.exponent > 1.0 {
        return fail(format!("exponent {} > 1: sum of steps is finite", s.exponent));
    }
    ScheduleCheck { valid: true, diagnostic: "ok".into() }
}

/// `slow / fast → 0` for power laws iff the slow exponent is strictly larger.
pub fn separated_timescales(slow: &StepSchedule, fast: &StepSchedule) -> bool {
    slow.exponent > fast.exponent
}
