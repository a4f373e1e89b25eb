//! Robust gradient-TD with linear value functions `v_θ = Φθ`.
//!
//! The robust Bellman operator for a policy π with a shared proxy region Û is
//! `T̂v = c_π + ϑ(P_π v + σ_Û(v)·1)`, and the learners minimise the mean
//! squared robust projected Bellman error
//! `MSRPBE(θ) = E[d̃φ]ᵀ E[φφᵀ]⁻¹ E[d̃φ]` with
//! `d̃ = c + ϑφ′ᵀθ + ϑσ_Û(Φθ) − φᵀθ`.
//! Expectations in the exact evaluators are taken with `i ~ ξ`, `a ~ π(i)`,
//! `i′ ~ p^a_i`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_index, Error, Result};
use crate::linalg::{norm2, solve_spd};
use crate::mdp::{sample_row, steady_state_distribution, validate_schedule, Policy, StepSchedule, TabularMdp};
use crate::rng::SimRng;
use crate::uncertainty::{support_gradient_mu, ConfidenceRegion, Regions};

const RANK_TOL: f64 = 1e-10;

/// Feature matrix with one row `φ(i)ᵀ` per state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
    full_rank: bool,
}

impl FeatureMap {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(Error::InvalidArgument("feature matrix is empty".into()));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("feature matrix has non-finite entries".into()));
        }
        for (i, row) in phi.row_iter().enumerate() {
            if row.iter().all(|&x| x == 0.0) {
                return Err(Error::InvalidArgument(format!("feature row {i} is zero")));
            }
        }
        Ok(Self { phi, full_rank: false })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("ragged feature rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k]))
    }

    /// Tabular embedding `Φ = I`.
    pub fn identity(n: usize) -> Self {
        Self { phi: DMatrix::identity(n, n), full_rank: true }
    }

    /// `[1, cos(2πki/n), sin(2πki/n), …]` with `d` columns; suited to
    /// circulant chains.
    pub fn fourier(n: usize, d: usize) -> Result<Self> {
        if d == 0 || d > n {
            return Err(Error::InvalidArgument(format!("need 1 <= d <= n, got d = {d}, n = {n}")));
        }
        let phi = DMatrix::from_fn(n, d, |i, c| {
            if c == 0 {
                return 1.0;
            }
            let k = c.div_ceil(2);
            let t = 2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
            if c % 2 == 1 {
                t.cos()
            } else {
                t.sin()
            }
        });
        Self::new(phi)
    }

    /// Checks that `Σ ξ_i φ_i φ_iᵀ` is positive definite and records it.
    pub fn certify_full_rank(mut self, xi: &[f64]) -> Result<Self> {
        let lam = min_gram_eigenvalue(&self.phi, xi)?;
        if lam <= RANK_TOL {
            return Err(Error::Singular(format!(
                "feature Gram matrix has smallest eigenvalue {lam:e}"
            )));
        }
        self.full_rank = true;
        Ok(self)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn is_full_rank(&self) -> bool {
        self.full_rank
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.phi.row(i).iter().copied().collect()
    }

    pub fn values(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        Ok((&self.phi * DVector::from_column_slice(theta)).iter().copied().collect())
    }
}

fn gram(phi: &DMatrix<f64>, xi: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(phi.nrows(), xi.len())?;
    let mut g = DMatrix::zeros(phi.ncols(), phi.ncols());
    for (i, &w) in xi.iter().enumerate() {
        let r = phi.row(i);
        g += w * r.transpose() * r;
    }
    Ok(g)
}

fn min_gram_eigenvalue(phi: &DMatrix<f64>, xi: &[f64]) -> Result<f64> {
    let g = gram(phi, xi)?;
    Ok(SymmetricEigen::new(g).eigenvalues.min())
}

/// Parameters of the two-timescale learners: slow `θ`, fast `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(d: usize) -> Self {
        Self { theta: vec![0.0; d], w: vec![0.0; d] }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.w).all(|x| x.is_finite())
    }
}

/// One observed transition in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSample {
    pub phi: Vec<f64>,
    pub phi_next: Vec<f64>,
    pub cost: f64,
}

impl LinearSample {
    pub fn from_states(features: &FeatureMap, i: usize, next: usize, cost: f64) -> Result<Self> {
        check_index("state", i, features.n_states())?;
        check_index("next state", next, features.n_states())?;
        Ok(Self { phi: features.row(i), phi_next: features.row(next), cost })
    }
}

fn sigma_of(region: &ConfidenceRegion, v: &[f64]) -> Result<f64> {
    if region.is_trivial() {
        Ok(0.0)
    } else {
        Ok(region.support(v)?.value)
    }
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `d̃ = c + ϑφ(i′)ᵀθ + ϑσ_Û(Φθ) − φ(i)ᵀθ`.
pub fn robust_linear_td_error(
    theta: &[f64],
    features: &FeatureMap,
    i: usize,
    next: usize,
    cost: f64,
    discount: f64,
    region: &ConfidenceRegion,
) -> Result<f64> {
    let v = features.values(theta)?;
    check_index("state", i, v.len())?;
    check_index("next state", next, v.len())?;
    Ok(cost + discount * v[next] - v[i] + discount * sigma_of(region, &v)?)
}

/// The policy-dependent pieces of the exact evaluators: `P_π`, `c_π`, `ξ`.
#[derive(Debug, Clone)]
pub(crate) struct Enumerated {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub xi: Vec<f64>,
    pub discount: f64,
}

impl Enumerated {
    pub fn new(mdp: &TabularMdp, xi: &[f64], policy: &Policy, discount: f64) -> Result<Self> {
        check_dim(mdp.n_states(), xi.len())?;
        if xi.iter().any(|&w| !(w >= 0.0)) || (xi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("ξ is not a distribution".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidArgument(format!("discount {discount} not in (0, 1)")));
        }
        Ok(Self {
            p: mdp.policy_matrix(policy)?,
            c: DVector::from_vec(mdp.policy_costs(policy)?),
            xi: xi.to_vec(),
            discount,
        })
    }

    /// `T̂v = c_π + ϑ(P_π v + σ_Û(v))`.
    pub fn bellman(&self, v: &[f64], region: &ConfidenceRegion) -> Result<Vec<f64>> {
        let s = sigma_of(region, v)?;
        let pv = &self.p * DVector::from_column_slice(v);
        Ok((0..v.len()).map(|i| self.c[i] + self.discount * (pv[i] + s)).collect())
    }

    /// `E[d̃ | i]` for every state.
    pub fn expected_td(&self, v: &[f64], region: &ConfidenceRegion) -> Result<Vec<f64>> {
        let t = self.bellman(v, region)?;
        Ok(t.iter().zip(v).map(|(a, b)| a - b).collect())
    }

    /// `(E[d̃φ], E[φφᵀ])` for the Jacobian `phi` of the value `v`.
    pub fn td_moments(
        &self,
        v: &[f64],
        phi: &DMatrix<f64>,
        region: &ConfidenceRegion,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.expected_td(v, region)?;
        let mut b = DVector::zeros(phi.ncols());
        for (i, &w) in self.xi.iter().enumerate() {
            b += (w * d[i]) * phi.row(i).transpose();
        }
        Ok((b, gram(phi, &self.xi)?))
    }

    /// `E[(φ − ϑφ′ − ϑμ)φᵀ]`, the negated Jacobian of `E[d̃φ]` for a linear model.
    pub fn descent_matrix(&self, v: &[f64], phi: &DMatrix<f64>, region: &ConfidenceRegion) -> Result<DMatrix<f64>> {
        let mu = mu_at(region, phi, v)?;
        let p_phi = &self.p * phi;
        let d = phi.ncols();
        let mut a = DMatrix::zeros(d, d);
        for (i, &w) in self.xi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let u = phi.row(i).transpose() - self.discount * p_phi.row(i).transpose() - self.discount * &mu;
            a += w * u * phi.row(i);
        }
        Ok(a)
    }
}

/// `μ = Φᵀy*` with `y*` the support maximiser at `v`; zero at the kink.
pub(crate) fn mu_at(region: &ConfidenceRegion, phi: &DMatrix<f64>, v: &[f64]) -> Result<DVector<f64>> {
    if region.is_trivial() {
        return Ok(DVector::zeros(phi.ncols()));
    }
    let y = region.support(v)?.maximizer;
    Ok(phi.transpose() * DVector::from_vec(y))
}

fn require_rank(features: &FeatureMap, xi: &[f64]) -> Result<()> {
    let lam = min_gram_eigenvalue(features.matrix(), xi)?;
    if lam <= RANK_TOL {
        return Err(Error::Singular(format!(
            "E[φφᵀ] under ξ has smallest eigenvalue {lam:e}"
        )));
    }
    Ok(())
}

pub(crate) fn quadratic_form_inv(g: &DMatrix<f64>, b: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let w = solve_spd(g, b, "E[φφᵀ]")?;
    Ok((b.dot(&w), w))
}

/// Exact MSRPBE of `θ` by enumeration over states, actions and successors.
#[allow(clippy::too_many_arguments)]
pub fn msrpbe_exact(
    theta: &[f64],
    mdp: &TabularMdp,
    xi: &[f64],
    policy: &Policy,
    features: &FeatureMap,
    region: &ConfidenceRegion,
    discount: f64,
) -> Result<f64> {
    check_dim(mdp.n_states(), features.n_states())?;
    require_rank(features, xi)?;
    let e = Enumerated::new(mdp, xi, policy, discount)?;
    let v = features.values(theta)?;
    let (b, g) = e.td_moments(&v, features.matrix(), region)?;
    Ok(quadratic_form_inv(&g, &b)?.0)
}

/// Exact `∇MSRPBE(θ) = −2E[(φ − ϑφ′ − ϑμ)φᵀ]w` with `w = E[φφᵀ]⁻¹E[d̃φ]`.
#[allow(clippy::too_many_arguments)]
pub fn msrpbe_gradient_exact(
    theta: &[f64],
    mdp: &TabularMdp,
    xi: &[f64],
    policy: &Policy,
    features: &FeatureMap,
    region: &ConfidenceRegion,
    discount: f64,
) -> Result<Vec<f64>> {
    check_dim(mdp.n_states(), features.n_states())?;
    require_rank(features, xi)?;
    let e = Enumerated::new(mdp, xi, policy, discount)?;
    let v = features.values(theta)?;
    let (b, g) = e.td_moments(&v, features.matrix(), region)?;
    let (_, w) = quadratic_form_inv(&g, &b)?;
    let a = e.descent_matrix(&v, features.matrix(), region)?;
    Ok((-2.0 * a * w).iter().copied().collect())
}

/// Solves `Φθ = ΠT̂(Φθ)` by damped iteration
/// `θ ← (1 − η)θ + η(ΦᵀΞΦ)⁻¹ΦᵀΞT̂(Φθ)`.
#[allow(clippy::too_many_arguments)]
pub fn projected_fixed_point(
    mdp: &TabularMdp,
    xi: &[f64],
    policy: &Policy,
    features: &FeatureMap,
    region: &ConfidenceRegion,
    discount: f64,
    damping: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::InvalidArgument(format!("damping {damping} not in (0, 1]")));
    }
    check_dim(mdp.n_states(), features.n_states())?;
    require_rank(features, xi)?;
    let e = Enumerated::new(mdp, xi, policy, discount)?;
    let phi = features.matrix();
    let g = gram(phi, xi)?;
    let xi_phi_t = DMatrix::from_fn(phi.ncols(), phi.nrows(), |k, i| phi[(i, k)] * xi[i]);
    let mut theta = DVector::zeros(features.dim());
    let mut residual = f64::INFINITY;
    for _ in 0..100_000 {
        let v: Vec<f64> = (phi * &theta).iter().copied().collect();
        let t = DVector::from_vec(e.bellman(&v, region)?);
        let target = solve_spd(&g, &(&xi_phi_t * t), "E[φφᵀ]")?;
        let next = &theta * (1.0 - damping) + target * damping;
        residual = (&next - &theta).amax();
        theta = next;
        if residual <= tol {
            return Ok(theta.iter().copied().collect());
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::NotConverged { iterations: 100_000, residual })
}

/// `w ← w + β(d̃ − φᵀw)φ`.
fn fast_update(w: &[f64], phi: &[f64], d: f64, beta: f64) -> Vec<f64> {
    let e = d - dotv(phi, w);
    w.iter().zip(phi).map(|(wk, pk)| wk + beta * e * pk).collect()
}

fn check_steps(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite() && beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("step sizes α = {alpha}, β = {beta} must be finite and nonnegative")));
    }
    Ok(())
}

/// Shared per-step pieces: `(d̃, μ)`.
fn step_terms(
    model: &LinearModel,
    sample: &LinearSample,
    region: &ConfidenceRegion,
    features: &FeatureMap,
    discount: f64,
) -> Result<(f64, Vec<f64>)> {
    let d = features.dim();
    check_dim(d, model.theta.len())?;
    check_dim(d, model.w.len())?;
    check_dim(d, sample.phi.len())?;
    check_dim(d, sample.phi_next.len())?;
    let v = features.values(&model.theta)?;
    let (sigma, mu) = if region.is_trivial() {
        (0.0, vec![0.0; d])
    } else {
        let s = region.support(&v)?;
        let mu = features.matrix().transpose() * DVector::from_vec(s.maximizer);
        (s.value, mu.iter().copied().collect())
    };
    let td = sample.cost + discount * dotv(&sample.phi_next, &model.theta) + discount * sigma
        - dotv(&sample.phi, &model.theta);
    Ok((td, mu))
}

/// One robust-GTD2 step:
/// `w ← w + β(d̃ − φᵀw)φ`, `θ ← θ + α(φ − ϑμ − ϑφ′)(φᵀw)`.
pub fn robust_gtd2_step(
    model: &LinearModel,
    sample: &LinearSample,
    alpha: f64,
    beta: f64,
    region: &ConfidenceRegion,
    features: &FeatureMap,
    discount: f64,
) -> Result<LinearModel> {
    check_steps(alpha, beta)?;
    let (td, mu) = step_terms(model, sample, region, features, discount)?;
    let pw = dotv(&sample.phi, &model.w);
    let theta = (0..model.theta.len())
        .map(|k| model.theta[k] + alpha * (sample.phi[k] - discount * mu[k] - discount * sample.phi_next[k]) * pw)
        .collect();
    Ok(LinearModel { theta, w: fast_update(&model.w, &sample.phi, td, beta) })
}

/// One robust-TDC step:
/// `w` as in GTD2, `θ ← θ + αd̃φ − ϑα(φ′ + μ)(φᵀw)`.
pub fn robust_tdc_step(
    model: &LinearModel,
    sample: &LinearSample,
    alpha: f64,
    beta: f64,
    region: &ConfidenceRegion,
    features: &FeatureMap,
    discount: f64,
) -> Result<LinearModel> {
    check_steps(alpha, beta)?;
    let (td, mu) = step_terms(model, sample, region, features, discount)?;
    let pw = dotv(&sample.phi, &model.w);
    let theta = (0..model.theta.len())
        .map(|k| model.theta[k] + alpha * td * sample.phi[k] - discount * alpha * (sample.phi_next[k] + mu[k]) * pw)
        .collect();
    Ok(LinearModel { theta, w: fast_update(&model.w, &sample.phi, td, beta) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientTdVariant {
    Gtd2,
    Tdc,
}

/// Two-timescale schedule and run length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientTdConfig {
    /// Slow `α_k` for `θ`.
    #[serde(default = "default_slow")]
    pub slow: StepSchedule,
    /// Fast `β_k` for `w`.
    #[serde(default = "default_fast")]
    pub fast: StepSchedule,
    #[serde(default)]
    pub steps: usize,
    /// Exact loss recorded every this many steps (0 disables the curve).
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub start_state: usize,
    /// Initial `θ`; zeros when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
}

fn default_slow() -> StepSchedule {
    StepSchedule::new(2.0, 1.0, 0.9)
}

fn default_fast() -> StepSchedule {
    StepSchedule::new(1.0, 1.0, 0.6)
}

impl GradientTdConfig {
    pub fn new(steps: usize) -> Self {
        Self {
            slow: default_slow(),
            fast: default_fast(),
            steps,
            checkpoint_every: 0,
            start_state: 0,
            theta0: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("slow", &self.slow), ("fast", &self.fast)] {
            let check = validate_schedule(s);
            if !check.valid {
                return Err(Error::InvalidArgument(format!("{name} schedule: {}", check.diagnostic)));
            }
        }
        if self.slow.exponent <= self.fast.exponent {
            return Err(Error::InvalidArgument(
                "slow schedule must decay strictly faster than the fast one".into(),
            ));
        }
        Ok(())
    }
}

/// One row of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub msrpbe: f64,
    pub theta_norm: f64,
    pub w_norm: f64,
    /// Fraction of steps since the previous point at which Γ was active
    /// (nonlinear learners only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_active: Option<f64>,
}

/// Writes `step,msrpbe_exact,theta_norm,w_norm[,gamma_active]`.
pub fn write_curve_csv<W: Write>(out: &mut W, curve: &[CurvePoint]) -> Result<()> {
    let with_gamma = curve.iter().any(|c| c.gamma_active.is_some());
    if with_gamma {
        writeln!(out, "step,msrpbe_exact,theta_norm,w_norm,gamma_active")?;
    } else {
        writeln!(out, "step,msrpbe_exact,theta_norm,w_norm")?;
    }
    for c in curve {
        write!(out, "{},{:e},{:e},{:e}", c.step, c.msrpbe, c.theta_norm, c.w_norm)?;
        if with_gamma {
            write!(out, ",{:e}", c.gamma_active.unwrap_or(0.0))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRun {
    pub model: LinearModel,
    pub curve: Vec<CurvePoint>,
    /// Distribution the exact loss was evaluated under; empty when no curve
    /// was requested and none was supplied.
    pub xi: Vec<f64>,
}

/// Runs robust-GTD2 or robust-TDC on a single on-policy trajectory of `env`
/// under `policy`; the exact loss uses the steady state of `P_π` unless `xi`
/// is given.
#[allow(clippy::too_many_arguments)]
pub fn robust_gradient_td(
    variant: GradientTdVariant,
    env: &TabularMdp,
    policy: &Policy,
    features: &FeatureMap,
    region: &ConfidenceRegion,
    cfg: &GradientTdConfig,
    xi: Option<&[f64]>,
    rng: &mut SimRng,
) -> Result<LinearRun> {
    cfg.validate()?;
    policy.validate(env)?;
    check_dim(env.n_states(), features.n_states())?;
    check_index("start state", cfg.start_state, env.n_states())?;
    if let Some(n) = region.dim() {
        check_dim(env.n_states(), n)?;
    }
    let xi = match xi {
        Some(x) => x.to_vec(),
        None if cfg.checkpoint_every > 0 => steady_state_distribution(&env.policy_matrix(policy)?)?,
        None => Vec::new(),
    };
    let discount = env.discount();
    let d = features.dim();
    let mut model = LinearModel::zeros(d);
    if let Some(t0) = &cfg.theta0 {
        check_dim(d, t0.len())?;
        model.theta = t0.clone();
    }
    let eval = |m: &LinearModel, step: usize| -> Result<CurvePoint> {
        Ok(CurvePoint {
            step,
            msrpbe: msrpbe_exact(&m.theta, env, &xi, policy, features, region, discount)?,
            theta_norm: norm2(&m.theta),
            w_norm: norm2(&m.w),
            gamma_active: None,
        })
    };
    let mut curve = Vec::new();
    if cfg.checkpoint_every > 0 {
        curve.push(eval(&model, 0)?);
    }
    let mut state = cfg.start_state;
    for k in 0..cfg.steps {
        let a = policy.action(state, rng);
        let next = sample_row(env.row(state, a), rng);
        let sample = LinearSample::from_states(features, state, next, env.cost(state, a))?;
        let (alpha, beta) = (cfg.slow.value(k), cfg.fast.value(k));
        model = match variant {
            GradientTdVariant::Gtd2 => robust_gtd2_step(&model, &sample, alpha, beta, region, features, discount)?,
            GradientTdVariant::Tdc => robust_tdc_step(&model, &sample, alpha, beta, region, features, discount)?,
        };
        if !model.is_finite() {
            return Err(Error::NotConverged { iterations: k + 1, residual: f64::INFINITY });
        }
        state = next;
        if cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0 {
            curve.push(eval(&model, k + 1)?);
        }
    }
    Ok(LinearRun { model, curve, xi })
}

/// Outcome of the discount/exploration compatibility check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionAssumption {
    /// Smallest α with `ϑp_j ≤ αP̂_ij` over the checked triples.
    pub alpha: f64,
    pub holds: bool,
    /// A triple `(i, a, j)` with worst-case mass where the behaviour chain has none.
    pub offending: Option<(usize, usize, usize)>,
    pub diagnostic: String,
}

/// Finds the minimal α for which `ϑ·max_{p ∈ 𝒫^a_i} p_j ≤ α·P̂_ij` holds
/// for every `(i, a, j)`, using `p^a_ij + σ_U(e_j)` clipped to `[0, 1]` as the
/// worst-case mass.
pub fn check_assumption_contraction(
    mdp: &TabularMdp,
    regions: &Regions,
    behavior: &Policy,
    discount: f64,
) -> Result<ContractionAssumption> {
    regions.validate(mdp)?;
    let ph = mdp.policy_matrix(behavior)?;
    let n = mdp.n_states();
    let mut alpha = 0.0f64;
    let mut e = vec![0.0; n];
    for i in 0..n {
        for a in 0..mdp.n_actions() {
            let region = regions.get(i, a);
            for j in 0..n {
                e[j] = 1.0;
                let up = sigma_of(region, &e)?;
                e[j] = 0.0;
                let p_max = (mdp.row(i, a)[j] + up).clamp(0.0, 1.0);
                if p_max <= 0.0 {
                    continue;
                }
                if ph[(i, j)] <= 0.0 {
                    return Ok(ContractionAssumption {
                        alpha: f64::INFINITY,
                        holds: false,
                        offending: Some((i, a, j)),
                        diagnostic: format!(
                            "worst-case mass {p_max:.6} on {i} -> {j} under action {a}, but the behaviour chain never makes that move"
                        ),
                    });
                }
                alpha = alpha.max(discount * p_max / ph[(i, j)]);
            }
        }
    }
    let holds = alpha < 1.0;
    Ok(ContractionAssumption {
        alpha,
        holds,
        offending: None,
        diagnostic: if holds { "ok".into() } else { format!("α = {alpha:.6} ≥ 1") },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub trials: usize,
    /// Largest `‖T̂Φθ − T̂Φθ′‖_ξ / ‖Φθ − Φθ′‖_ξ` seen.
    pub max_ratio: f64,
    pub contraction: bool,
}

fn xi_norm(xi: &[f64], x: &[f64]) -> f64 {
    xi.iter().zip(x).map(|(w, v)| w * v * v).sum::<f64>().sqrt()
}

/// Evaluates the contraction ratio of `T̂` on random parameter pairs.
#[allow(clippy::too_many_arguments)]
pub fn projected_contraction_check(
    mdp: &TabularMdp,
    features: &FeatureMap,
    xi: &[f64],
    policy: &Policy,
    region: &ConfidenceRegion,
    discount: f64,
    trials: usize,
    rng: &mut SimRng,
) -> Result<ContractionReport> {
    check_dim(mdp.n_states(), features.n_states())?;
    let e = Enumerated::new(mdp, xi, policy, discount)?;
    let d = features.dim();
    let mut max_ratio = 0.0f64;
    for _ in 0..trials {
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let t1: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let t2: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let (v1, v2) = (features.values(&t1)?, features.values(&t2)?);
        let (b1, b2) = (e.bellman(&v1, region)?, e.bellman(&v2, region)?);
        let num: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a - b).collect();
        let den: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a - b).collect();
        let den = xi_norm(xi, &den);
        if den > 0.0 {
            max_ratio = max_ratio.max(xi_norm(xi, &num) / den);
        }
    }
    Ok(ContractionReport { trials, max_ratio, contraction: max_ratio < 1.0 })
}

/// `‖·‖_ξ` of a value vector.
pub fn weighted_norm(xi: &[f64], v: &[f64]) -> Result<f64> {
    check_dim(xi.len(), v.len())?;
    Ok(xi_norm(xi, v))
}

/// Convenience wrapper over [`support_gradient_mu`] taking a feature map.
pub fn feature_mu(region: &ConfidenceRegion, features: &FeatureMap, theta: &[f64]) -> Result<Vec<f64>> {
    support_gradient_mu(region, features.matrix(), theta)
}
