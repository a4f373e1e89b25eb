//! Exact robust dynamic programming on explicit models.
//!
//! The robust backup of a pair `(i, a)` is `c(i,a) + ϑ·S_{i,a}(v)`, where
//! `S` is either the proxy support `pᵀv + σ_Û(v)` or, with `constrained`
//! set, the support of the true set `(p + Û) ∩ [0,1]ⁿ`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{argmin, dot};
use crate::mdp::{Policy, TabularMdp};
use crate::uncertainty::Regions;

const MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub v: Vec<f64>,
}

impl ValueTable {
    pub fn new(v: Vec<f64>) -> Self {
        Self { v }
    }

    pub fn zeros(n: usize) -> Self {
        Self { v: vec![0.0; n] }
    }

    pub fn sup_distance(&self, other: &ValueTable) -> f64 {
        sup_distance(&self.v, &other.v)
    }

    pub fn sup_norm(&self) -> f64 {
        self.v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl Deref for ValueTable {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.v
    }
}

/// Q-factors, row-major `q[i * n_actions + a]`. Lower is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, q: vec![0.0; n_states * n_actions] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("Q-table rows must be nonempty and equal length".into()));
        }
        Ok(Self { n_states: n, n_actions: m, q: rows.concat() })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, i: usize, a: usize) -> f64 {
        self.q[i * self.n_actions + a]
    }

    pub fn set(&mut self, i: usize, a: usize, x: f64) {
        self.q[i * self.n_actions + a] = x;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.n_actions..][..self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    /// `min_a Q(i, a)`.
    pub fn value_of(&self, i: usize) -> f64 {
        self.row(i).iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n_states).map(|i| self.value_of(i)).collect()
    }

    /// Lowest-index minimiser.
    pub fn greedy_action(&self, i: usize) -> usize {
        argmin(self.row(i))
    }

    pub fn greedy_policy(&self) -> Policy {
        Policy::Deterministic((0..self.n_states).map(|i| self.greedy_action(i)).collect())
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        sup_distance(&self.q, &other.q)
    }

    pub fn sup_norm(&self) -> f64 {
        self.q.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|i| self.row(i).to_vec()).collect()
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `S_{i,a}(v)`: worst-case expectation of `v` over the row's uncertainty set.
pub fn worst_case_expectation(
    mdp: &TabularMdp,
    regions: &Regions,
    i: usize,
    a: usize,
    v: &[f64],
    constrained: bool,
) -> Result<f64> {
    let row = mdp.row(i, a);
    let region = regions.get(i, a);
    if constrained {
        region.support_simplex_constrained(row, v)
    } else {
        Ok(dot(row, v) + region.support(v)?.value)
    }
}

/// One application of the robust Bellman operator, returning `(Tv, greedy actions)`.
pub fn bellman_operator(
    mdp: &TabularMdp,
    regions: &Regions,
    v: &[f64],
    constrained: bool,
) -> Result<(Vec<f64>, Vec<usize>)> {
    check_dim(mdp.n_states(), v.len())?;
    let (n, m, g) = (mdp.n_states(), mdp.n_actions(), mdp.discount());
    let mut out = vec![0.0; n];
    let mut act = vec![0; n];
    let mut qrow = vec![0.0; m];
    for i in 0..n {
        for (a, slot) in qrow.iter_mut().enumerate() {
            *slot = mdp.cost(i, a) + g * worst_case_expectation(mdp, regions, i, a, v, constrained)?;
        }
        act[i] = argmin(&qrow);
        out[i] = qrow[act[i]];
    }
    Ok((out, act))
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")))
    }
}

/// Robust value iteration (Jacobi sweeps from `v = 0`).
///
/// Stops once a sweep moves `v` by at most `tol·(1−ϑ)/ϑ` in sup norm, which
/// bounds the distance to the fixed point by `tol` for a ϑ-contraction.
pub fn robust_value_iteration(
    mdp: &TabularMdp,
    regions: &Regions,
    constrained: bool,
    tol: f64,
) -> Result<(ValueTable, Policy)> {
    check_tol(tol)?;
    regions.validate(mdp)?;
    let g = mdp.discount();
    let stop = tol * (1.0 - g) / g;
    let mut v = vec![0.0; mdp.n_states()];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let (next, _) = bellman_operator(mdp, regions, &v, constrained)?;
        residual = sup_distance(&next, &v);
        v = next;
        if residual <= stop {
            let (_, act) = bellman_operator(mdp, regions, &v, constrained)?;
            return Ok((ValueTable::new(v), Policy::Deterministic(act)));
        }
    }
    Err(Error::NotConverged { iterations: MAX_SWEEPS, residual })
}

/// Fixed point of `v(i) = Σ_a π(a|i) [c(i,a) + ϑ S_{i,a}(v)]`.
pub fn robust_policy_evaluation(
    mdp: &TabularMdp,
    regions: &Regions,
    policy: &Policy,
    constrained: bool,
    tol: f64,
) -> Result<ValueTable> {
    check_tol(tol)?;
    regions.validate(mdp)?;
    policy.validate(mdp)?;
    let (n, m, g) = (mdp.n_states(), mdp.n_actions(), mdp.discount());
    let probs: Vec<Vec<f64>> = (0..n).map(|i| policy.action_probabilities(i, m)).collect();
    let stop = tol * (1.0 - g) / g;
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let mut next = vec![0.0; n];
        for i in 0..n {
            for (a, &w) in probs[i].iter().enumerate() {
                if w > 0.0 {
                    next[i] += w * (mdp.cost(i, a) + g * worst_case_expectation(mdp, regions, i, a, &v, constrained)?);
                }
            }
        }
        residual = sup_distance(&next, &v);
        v = next;
        if residual <= stop {
            return Ok(ValueTable::new(v));
        }
    }
    Err(Error::NotConverged { iterations: MAX_SWEEPS, residual })
}

/// `Q(i,a) = c(i,a) + ϑ S_{i,a}(v)`.
pub fn robust_q_from_value(
    mdp: &TabularMdp,
    regions: &Regions,
    v: &ValueTable,
    constrained: bool,
) -> Result<QTable> {
    check_dim(mdp.n_states(), v.len())?;
    regions.validate(mdp)?;
    let mut q = QTable::zeros(mdp.n_states(), mdp.n_actions());
    for i in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let s = worst_case_expectation(mdp, regions, i, a, v, constrained)?;
            q.set(i, a, mdp.cost(i, a) + mdp.discount() * s);
        }
    }
    Ok(q)
}

/// Classical policy evaluation by solving `(I − ϑP_π) v = c_π`.
pub fn nominal_policy_value(mdp: &TabularMdp, policy: &Policy) -> Result<ValueTable> {
    let n = mdp.n_states();
    let p = mdp.policy_matrix(policy)?;
    let c = DVector::from_vec(mdp.policy_costs(policy)?);
    let a = DMatrix::identity(n, n) - p * mdp.discount();
    let v = a
        .lu()
        .solve(&c)
        .ok_or_else(|| Error::Singular("I - discount * P_pi".into()))?;
    Ok(ValueTable::new(v.iter().copied().collect()))
}

/// Oracle output for golden files and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub discount: f64,
    pub constrained: bool,
    pub tolerance: f64,
    pub value: Vec<f64>,
    pub q_table: Vec<Vec<f64>>,
    pub policy: Vec<usize>,
}

pub fn oracle_report(mdp: &TabularMdp, regions: &Regions, constrained: bool, tol: f64) -> Result<OracleReport> {
    let (v, pol) = robust_value_iteration(mdp, regions, constrained, tol)?;
    let q = robust_q_from_value(mdp, regions, &v, constrained)?;
    let policy = pol.as_deterministic().expect("value iteration yields a deterministic policy").to_vec();
    Ok(OracleReport {
        discount: mdp.discount(),
        constrained,
        tolerance: tol,
        value: v.v,
        q_table: q.rows(),
        policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random_mdp;
    use crate::uncertainty::ConfidenceRegion;
    use approx::assert_abs_diff_eq;

    fn shared(r: ConfidenceRegion) -> Regions {
        Regions::Shared(r)
    }

    /// Textbook value iteration written independently of the robust code.
    fn classical_vi(mdp: &TabularMdp) -> Vec<f64> {
        let (n, m) = (mdp.n_states(), mdp.n_actions());
        let mut v = vec![0.0; n];
        loop {
            let next: Vec<f64> = (0..n)
                .map(|i| {
                    (0..m)
                        .map(|a| {
                            let row = mdp.row(i, a);
                            mdp.cost(i, a) + mdp.discount() * (0..n).map(|j| row[j] * v[j]).sum::<f64>()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let d = sup_distance(&next, &v);
            v = next;
            if d < 1e-13 {
                return v;
            }
        }
    }

    #[test]
    fn radius_zero_is_classical() {
        for seed in 0..5 {
            let mdp = random_mdp(5, 3, 3, seed).unwrap();
            let (v, _) = robust_value_iteration(&mdp, &shared(ConfidenceRegion::zero()), false, 1e-11).unwrap();
            let expect = classical_vi(&mdp);
            assert!(sup_distance(&v, &expect) <= 1e-8);
        }
    }

    #[test]
    fn single_state_is_geometric_series() {
        let mdp = TabularMdp::from_tables(0.8, &[vec![2.0]], &[vec![vec![1.0]]]).unwrap();
        let (v, _) = robust_value_iteration(&mdp, &shared(ConfidenceRegion::l2(0.5).unwrap()), true, 1e-12).unwrap();
        assert_abs_diff_eq!(v[0], 2.0 / 0.2, epsilon = 1e-10);
    }

    /// With uniform rows and v₀ − v₁ = Δ, both equations share the term
    /// ϑ(mean(v) + 0.1·|Δ|/√2), so Δ = c₀ − c₁ = 1 and
    /// mean(v) = (mean(c) + ϑ·0.1/√2)/(1 − ϑ) = 1 + 0.1/√2.
    #[test]
    fn hand_two_state_fixed_point() {
        let mdp = TabularMdp::from_tables(
            0.5,
            &[vec![1.0], vec![0.0]],
            &[vec![vec![0.5, 0.5], vec![0.5, 0.5]]],
        )
        .unwrap();
        let regions = shared(ConfidenceRegion::l2(0.1).unwrap());
        let (v, _) = robust_value_iteration(&mdp, &regions, true, 1e-12).unwrap();
        let s = 0.1 / 2f64.sqrt();
        assert_abs_diff_eq!(v[0], 1.5 + s, epsilon = 1e-9);
        assert_abs_diff_eq!(v[1], 0.5 + s, epsilon = 1e-9);
        let pe = robust_policy_evaluation(&mdp, &regions, &Policy::Deterministic(vec![0, 0]), true, 1e-12).unwrap();
        assert!(pe.sup_distance(&v) <= 1e-9);
        let q = robust_q_from_value(&mdp, &regions, &v, true).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), v[0], epsilon = 1e-9);
    }

    #[test]
    fn q_consistency_at_fixed_point() {
        let mdp = random_mdp(6, 3, 4, 17).unwrap();
        let regions = shared(ConfidenceRegion::l2(0.1).unwrap());
        let (v, pol) = robust_value_iteration(&mdp, &regions, true, 1e-11).unwrap();
        let q = robust_q_from_value(&mdp, &regions, &v, true).unwrap();
        for i in 0..6 {
            assert!((q.value_of(i) - v[i]).abs() <= 1e-8);
        }
        assert_eq!(q.greedy_policy(), pol);
    }

    #[test]
    fn radius_zero_policy_evaluation_is_linear_solve() {
        let mdp = random_mdp(7, 2, 3, 4).unwrap();
        let pol = Policy::Deterministic(vec![0, 1, 0, 1, 1, 0, 0]);
        let a = robust_policy_evaluation(&mdp, &shared(ConfidenceRegion::zero()), &pol, false, 1e-11).unwrap();
        let b = nominal_policy_value(&mdp, &pol).unwrap();
        assert!(a.sup_distance(&b) <= 1e-8);
    }

    #[test]
    fn robust_value_dominates_nominal() {
        for seed in 0..20 {
            let mdp = random_mdp(5, 2, 3, 100 + seed).unwrap();
            let pol = Policy::Deterministic(vec![0; 5]);
            let nominal = nominal_policy_value(&mdp, &pol).unwrap();
            let robust =
                robust_policy_evaluation(&mdp, &shared(ConfidenceRegion::l1(0.2).unwrap()), &pol, true, 1e-10).unwrap();
            for i in 0..5 {
                assert!(robust[i] >= nominal[i] - 1e-9);
            }
        }
    }

    #[test]
    fn value_monotone_in_radius() {
        for seed in 0..5 {
            let mdp = random_mdp(5, 2, 4, 300 + seed).unwrap();
            let mut last = vec![f64::NEG_INFINITY; 5];
            for r in [0.0, 0.05, 0.1, 0.2] {
                let (v, _) = robust_value_iteration(&mdp, &shared(ConfidenceRegion::l2(r).unwrap()), true, 1e-10).unwrap();
                for i in 0..5 {
                    assert!(v[i] >= last[i] - 1e-9);
                }
                last = v.v;
            }
        }
    }

    #[test]
    fn rejects_bad_tolerance() {
        let mdp = random_mdp(3, 2, 2, 0).unwrap();
        assert!(robust_value_iteration(&mdp, &shared(ConfidenceRegion::zero()), false, 0.0).is_err());
    }

    #[test]
    fn oracle_report_roundtrips() {
        let mdp = random_mdp(3, 2, 2, 8).unwrap();
        let rep = oracle_report(&mdp, &shared(ConfidenceRegion::l2(0.1).unwrap()), true, 1e-10).unwrap();
        let back: OracleReport = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        assert_eq!(rep, back);
    }
}
