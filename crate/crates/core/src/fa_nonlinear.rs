//! Robust gradient-TD for smooth nonlinear value functions.
//!
//! The value `v_θ(i)` is any twice differentiable map; the learners need its
//! gradient `φ_θ(i) = ∇v_θ(i)` and Hessian-vector products. Relative to the
//! linear updates the slow step gains the curvature correction
//! `h = (d̃ − φᵀw)∇²v_θ(i)w` and is followed by the projection Γ onto a ball.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_index, Error, Result};
use crate::fa_linear::{CurvePoint, Enumerated, FeatureMap, GradientTdConfig, GradientTdVariant};
use crate::linalg::{norm2, solve_spd};
use crate::mdp::{sample_row, steady_state_distribution, Policy, TabularMdp};
use crate::rng::SimRng;
use crate::uncertainty::ConfidenceRegion;

const RANK_TOL: f64 = 1e-10;

/// A value function `θ ↦ v_θ` with hand-coded first and second derivatives.
pub trait SmoothValueModel {
    fn n_states(&self) -> usize;

    fn dim(&self) -> usize;

    fn value(&self, theta: &[f64], i: usize) -> f64;

    fn gradient(&self, theta: &[f64], i: usize) -> Vec<f64>;

    /// `∇²v_θ(i)·u`.
    fn hessian_vec(&self, theta: &[f64], i: usize, u: &[f64]) -> Vec<f64>;

    fn values(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.n_states()).map(|i| self.value(theta, i)).collect()
    }

    /// `Φ_θ`, one gradient per row.
    fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        let (n, d) = (self.n_states(), self.dim());
        let mut j = DMatrix::zeros(n, d);
        for i in 0..n {
            for (k, g) in self.gradient(theta, i).into_iter().enumerate() {
                j[(i, k)] = g;
            }
        }
        j
    }
}

/// `v_θ = Φθ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearValueModel {
    pub features: FeatureMap,
}

impl SmoothValueModel for LinearValueModel {
    fn n_states(&self) -> usize {
        self.features.n_states()
    }

    fn dim(&self) -> usize {
        self.features.dim()
    }

    fn value(&self, theta: &[f64], i: usize) -> f64 {
        self.features.matrix().row(i).iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    fn gradient(&self, _theta: &[f64], i: usize) -> Vec<f64> {
        self.features.row(i)
    }

    fn hessian_vec(&self, _theta: &[f64], _i: usize, _u: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

/// `v_θ(i) = Σ_k L_ik θ_k + ½ Σ_k Q_ik θ_k²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFeatureModel {
    linear: DMatrix<f64>,
    quadratic: DMatrix<f64>,
}

impl QuadraticFeatureModel {
    pub fn new(linear: DMatrix<f64>, quadratic: DMatrix<f64>) -> Result<Self> {
        if linear.shape() != quadratic.shape() {
            return Err(Error::InvalidArgument(format!(
                "linear part is {:?} but quadratic part is {:?}",
                linear.shape(),
                quadratic.shape()
            )));
        }
        if linear.nrows() == 0 || linear.ncols() == 0 {
            return Err(Error::InvalidArgument("empty model".into()));
        }
        Ok(Self { linear, quadratic })
    }
}

impl SmoothValueModel for QuadraticFeatureModel {
    fn n_states(&self) -> usize {
        self.linear.nrows()
    }

    fn dim(&self) -> usize {
        self.linear.ncols()
    }

    fn value(&self, theta: &[f64], i: usize) -> f64 {
        (0..self.dim())
            .map(|k| self.linear[(i, k)] * theta[k] + 0.5 * self.quadratic[(i, k)] * theta[k] * theta[k])
            .sum()
    }

    fn gradient(&self, theta: &[f64], i: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.linear[(i, k)] + self.quadratic[(i, k)] * theta[k])
            .collect()
    }

    fn hessian_vec(&self, _theta: &[f64], i: usize, u: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|k| self.quadratic[(i, k)] * u[k]).collect()
    }
}

/// One hidden tanh layer over per-state inputs:
/// `v_θ(i) = Σ_h a_h tanh(W_h·x_i + b_h) + c`.
///
/// Parameter layout: `W` row-major (`width × inputs`), then `b`, `a`, `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhNetwork {
    inputs: DMatrix<f64>,
    width: usize,
}

impl TanhNetwork {
    pub fn new(inputs: DMatrix<f64>, width: usize) -> Result<Self> {
        if width == 0 || inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(Error::InvalidArgument("network needs inputs and a positive width".into()));
        }
        Ok(Self { inputs, width })
    }

    fn n_inputs(&self) -> usize {
        self.inputs.ncols()
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w = self.width * self.n_inputs();
        (w, w + self.width, w + 2 * self.width)
    }

    /// Pre-activations `z_h` at state `i`.
    fn pre(&self, theta: &[f64], i: usize) -> Vec<f64> {
        let p = self.n_inputs();
        let (ob, _, _) = self.offsets();
        (0..self.width)
            .map(|h| {
                let wx: f64 = (0..p).map(|j| theta[h * p + j] * self.inputs[(i, j)]).sum();
                wx + theta[ob + h]
            })
            .collect()
    }
}

impl SmoothValueModel for TanhNetwork {
    fn n_states(&self) -> usize {
        self.inputs.nrows()
    }

    fn dim(&self) -> usize {
        self.width * (self.n_inputs() + 2) + 1
    }

    fn value(&self, theta: &[f64], i: usize) -> f64 {
        let (_, oa, oc) = self.offsets();
        let z = self.pre(theta, i);
        (0..self.width).map(|h| theta[oa + h] * z[h].tanh()).sum::<f64>() + theta[oc]
    }

    fn gradient(&self, theta: &[f64], i: usize) -> Vec<f64> {
        let p = self.n_inputs();
        let (ob, oa, oc) = self.offsets();
        let z = self.pre(theta, i);
        let mut g = vec![0.0; self.dim()];
        for h in 0..self.width {
            let s = z[h].tanh();
            let ds = 1.0 - s * s;
            let a = theta[oa + h];
            for j in 0..p {
                g[h * p + j] = a * ds * self.inputs[(i, j)];
            }
            g[ob + h] = a * ds;
            g[oa + h] = s;
        }
        g[oc] = 1.0;
        g
    }

    fn hessian_vec(&self, theta: &[f64], i: usize, u: &[f64]) -> Vec<f64> {
        let p = self.n_inputs();
        let (ob, oa, _) = self.offsets();
        let z = self.pre(theta, i);
        let mut out = vec![0.0; self.dim()];
        for h in 0..self.width {
            let s = z[h].tanh();
            let ds = 1.0 - s * s;
            let dds = -2.0 * s * ds;
            let a = theta[oa + h];
            let dz: f64 = (0..p).map(|j| u[h * p + j] * self.inputs[(i, j)]).sum::<f64>() + u[ob + h];
            let inner = u[oa + h] * ds + a * dds * dz;
            for j in 0..p {
                out[h * p + j] = inner * self.inputs[(i, j)];
            }
            out[ob + h] = inner;
            out[oa + h] = ds * dz;
        }
        out
    }
}

/// The ball `{‖θ‖₂ ≤ R}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompactSet {
    radius: f64,
}

impl CompactSet {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("ball radius {radius} must be positive")));
        }
        Ok(Self { radius })
    }

    /// `R = 10‖θ₀‖ + 10`.
    pub fn default_for(theta0: &[f64]) -> Self {
        Self { radius: 10.0 * norm2(theta0) + 10.0 }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Γ: radial projection onto the ball.
pub fn gamma_projection(theta: &[f64], set: &CompactSet) -> Vec<f64> {
    let n = norm2(theta);
    if n <= set.radius {
        theta.to_vec()
    } else {
        theta.iter().map(|x| set.radius * x / n).collect()
    }
}

/// `h = (d̃ − φᵀw)·∇²v_θ(i)w`.
pub fn h_term(td: f64, phi: &[f64], w: &[f64], hess_vec: &[f64]) -> Result<Vec<f64>> {
    check_dim(phi.len(), w.len())?;
    check_dim(phi.len(), hess_vec.len())?;
    let e = td - phi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    Ok(hess_vec.iter().map(|x| e * x).collect())
}

/// One observed transition by state index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSample {
    pub state: usize,
    pub next: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearUpdate {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    /// Whether Γ moved the iterate.
    pub projected: bool,
}

struct Terms {
    td: f64,
    phi: Vec<f64>,
    phi_next: Vec<f64>,
    mu: Vec<f64>,
    h: Vec<f64>,
    pw: f64,
}

fn terms<M: SmoothValueModel + ?Sized>(
    model: &M,
    theta: &[f64],
    w: &[f64],
    s: &StateSample,
    region: &ConfidenceRegion,
    discount: f64,
) -> Result<Terms> {
    let (n, d) = (model.n_states(), model.dim());
    check_dim(d, theta.len())?;
    check_dim(d, w.len())?;
    check_index("state", s.state, n)?;
    check_index("next state", s.next, n)?;
    let v = model.values(theta);
    let mut mu = vec![0.0; d];
    let mut sigma = 0.0;
    if !region.is_trivial() {
        let sup = region.support(&v)?;
        sigma = sup.value;
        for (j, &y) in sup.maximizer.iter().enumerate() {
            if y != 0.0 {
                for (m, g) in mu.iter_mut().zip(model.gradient(theta, j)) {
                    *m += y * g;
                }
            }
        }
    }
    let phi = model.gradient(theta, s.state);
    let phi_next = model.gradient(theta, s.next);
    let td = s.cost + discount * v[s.next] + discount * sigma - v[s.state];
    let hv = model.hessian_vec(theta, s.state, w);
    let h = h_term(td, &phi, w, &hv)?;
    let pw = phi.iter().zip(w).map(|(a, b)| a * b).sum();
    Ok(Terms { td, phi, phi_next, mu, h, pw })
}

fn finish(raw: Vec<f64>, t: &Terms, w: &[f64], beta: f64, set: &CompactSet) -> NonlinearUpdate {
    let e = t.td - t.pw;
    let w = w.iter().zip(&t.phi).map(|(wk, pk)| wk + beta * e * pk).collect();
    let theta = gamma_projection(&raw, set);
    let projected = theta != raw;
    NonlinearUpdate { theta, w, projected }
}

/// `θ′ = Γ(θ + α{(φ − ϑμ − ϑφ′)(φᵀw) − h})`, `w′ = w + β(d̃ − φᵀw)φ`.
#[allow(clippy::too_many_arguments)]
pub fn robust_nonlinear_gtd2_step<M: SmoothValueModel + ?Sized>(
    model: &M,
    theta: &[f64],
    w: &[f64],
    sample: &StateSample,
    alpha: f64,
    beta: f64,
    region: &ConfidenceRegion,
    set: &CompactSet,
    discount: f64,
) -> Result<NonlinearUpdate> {
    let t = terms(model, theta, w, sample, region, discount)?;
    let raw = (0..theta.len())
        .map(|k| {
            let u = t.phi[k] - discount * t.mu[k] - discount * t.phi_next[k];
            theta[k] + alpha * (u * t.pw - t.h[k])
        })
        .collect();
    Ok(finish(raw, &t, w, beta, set))
}

/// `θ′ = Γ(θ + α{d̃φ − ϑφ′(φᵀw) − ϑμ(φᵀw) − h})`, `w′` as in GTD2.
#[allow(clippy::too_many_arguments)]
pub fn robust_nonlinear_tdc_step<M: SmoothValueModel + ?Sized>(
    model: &M,
    theta: &[f64],
    w: &[f64],
    sample: &StateSample,
    alpha: f64,
    beta: f64,
    region: &ConfidenceRegion,
    set: &CompactSet,
    discount: f64,
) -> Result<NonlinearUpdate> {
    let t = terms(model, theta, w, sample, region, discount)?;
    let raw = (0..theta.len())
        .map(|k| {
            let g = t.td * t.phi[k] - discount * (t.phi_next[k] + t.mu[k]) * t.pw;
            theta[k] + alpha * (g - t.h[k])
        })
        .collect();
    Ok(finish(raw, &t, w, beta, set))
}

struct NonlinearMoments {
    v: Vec<f64>,
    jac: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
}

fn moments<M: SmoothValueModel + ?Sized>(
    theta: &[f64],
    e: &Enumerated,
    model: &M,
    region: &ConfidenceRegion,
) -> Result<NonlinearMoments> {
    check_dim(model.dim(), theta.len())?;
    check_dim(e.xi.len(), model.n_states())?;
    let v = model.values(theta);
    let jac = model.jacobian(theta);
    let (b, g) = e.td_moments(&v, &jac, region)?;
    let eig = SymmetricEigen::new(g.clone());
    let k = eig.eigenvalues.imin();
    if eig.eigenvalues[k] <= RANK_TOL {
        let dir: Vec<String> = eig.eigenvectors.column(k).iter().map(|x| format!("{x:.4}")).collect();
        return Err(Error::Singular(format!(
            "E[∇v∇vᵀ] has eigenvalue {:e} along [{}]",
            eig.eigenvalues[k],
            dir.join(", ")
        )));
    }
    Ok(NonlinearMoments { v, jac, b, g })
}

/// Exact `E[d̃∇v_θ]ᵀ E[∇v_θ∇v_θᵀ]⁻¹ E[d̃∇v_θ]`.
#[allow(clippy::too_many_arguments)]
pub fn msrpbe_nonlinear_exact<M: SmoothValueModel + ?Sized>(
    theta: &[f64],
    mdp: &TabularMdp,
    xi: &[f64],
    policy: &Policy,
    model: &M,
    region: &ConfidenceRegion,
    discount: f64,
) -> Result<f64> {
    let e = Enumerated::new(mdp, xi, policy, discount)?;
    let m = moments(theta, &e, model, region)?;
    let w = solve_spd(&m.g, &m.b, "E[∇v∇vᵀ]")?;
    Ok(m.b.dot(&w))
}

/// Exact gradient `−2E[(φ − ϑφ′ − ϑμ)φᵀ]w + 2E[(d̃ − φᵀw)∇²v_θ(i)w]` with
/// `w = E[φφᵀ]⁻¹E[d̃φ]`.
#[allow(clippy::too_many_arguments)]
pub fn msrpbe_nonlinear_gradient_exact<M: SmoothValueModel + ?Sized>(
    theta: &[f64],
    mdp: &TabularMdp,
    xi: &[f64],
    policy: &Policy,
    model: &M,
    region: &ConfidenceRegion,
    discount: f64,
) -> Result<Vec<f64>> {
    let e = Enumerated::new(mdp, xi, policy, discount)?;
    let m = moments(theta, &e, model, region)?;
    let w = solve_spd(&m.g, &m.b, "E[∇v∇vᵀ]")?;
    let a = e.descent_matrix(&m.v, &m.jac, region)?;
    let mut grad = -2.0 * a * &w;
    let td = e.expected_td(&m.v, region)?;
    for (i, &x) in xi.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let phi_w = m.jac.row(i).dot(&w.transpose());
        let hv = model.hessian_vec(theta, i, w.as_slice());
        for (gk, hk) in grad.iter_mut().zip(hv) {
            *gk += 2.0 * x * (td[i] - phi_w) * hk;
        }
    }
    Ok(grad.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearRun {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub curve: Vec<CurvePoint>,
    pub xi: Vec<f64>,
    pub radius: f64,
    /// Steps at which Γ was active, over the whole run.
    pub projections: usize,
    /// Fraction of steps after the first tenth at which Γ was active.
    pub active_after_burn_in: f64,
}

/// Robust nonlinear GTD2 / TDC on one on-policy trajectory. `set` defaults to
/// [`CompactSet::default_for`] the initial parameters.
#[allow(clippy::too_many_arguments)]
pub fn robust_nonlinear_gradient_td<M: SmoothValueModel + ?Sized>(
    variant: GradientTdVariant,
    env: &TabularMdp,
    policy: &Policy,
    model: &M,
    region: &ConfidenceRegion,
    set: Option<CompactSet>,
    cfg: &GradientTdConfig,
    xi: Option<&[f64]>,
    rng: &mut SimRng,
) -> Result<NonlinearRun> {
    cfg.validate()?;
    policy.validate(env)?;
    check_dim(env.n_states(), model.n_states())?;
    check_index("start state", cfg.start_state, env.n_states())?;
    let xi = match xi {
        Some(x) => x.to_vec(),
        None if cfg.checkpoint_every > 0 => steady_state_distribution(&env.policy_matrix(policy)?)?,
        None => Vec::new(),
    };
    let discount = env.discount();
    let d = model.dim();
    let mut theta = match &cfg.theta0 {
        Some(t) => {
            check_dim(d, t.len())?;
            t.clone()
        }
        None => vec![0.0; d],
    };
    let set = set.unwrap_or_else(|| CompactSet::default_for(&theta));
    theta = gamma_projection(&theta, &set);
    let mut w = vec![0.0; d];
    let burn_in = cfg.steps / 10;
    let (mut projections, mut late, mut window) = (0usize, 0usize, 0usize);
    let eval = |theta: &[f64], w: &[f64], step: usize, active: Option<f64>| -> Result<CurvePoint> {
        Ok(CurvePoint {
            step,
            msrpbe: msrpbe_nonlinear_exact(theta, env, &xi, policy, model, region, discount)?,
            theta_norm: norm2(theta),
            w_norm: norm2(w),
            gamma_active: active,
        })
    };
    let mut curve = Vec::new();
    if cfg.checkpoint_every > 0 {
        curve.push(eval(&theta, &w, 0, Some(0.0))?);
    }
    let mut state = cfg.start_state;
    for k in 0..cfg.steps {
        let a = policy.action(state, rng);
        let next = sample_row(env.row(state, a), rng);
        let s = StateSample { state, next, cost: env.cost(state, a) };
        let (alpha, beta) = (cfg.slow.value(k), cfg.fast.value(k));
        let up = match variant {
            GradientTdVariant::Gtd2 => {
                robust_nonlinear_gtd2_step(model, &theta, &w, &s, alpha, beta, region, &set, discount)?
            }
            GradientTdVariant::Tdc => {
                robust_nonlinear_tdc_step(model, &theta, &w, &s, alpha, beta, region, &set, discount)?
            }
        };
        if up.theta.iter().chain(&up.w).any(|x| !x.is_finite()) {
            return Err(Error::NotConverged { iterations: k + 1, residual: f64::INFINITY });
        }
        if up.projected {
            projections += 1;
            window += 1;
            if k >= burn_in {
                late += 1;
            }
        }
        theta = up.theta;
        w = up.w;
        state = next;
        if cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0 {
            let frac = window as f64 / cfg.checkpoint_every as f64;
            curve.push(eval(&theta, &w, k + 1, Some(frac))?);
            window = 0;
        }
    }
    let after = cfg.steps - burn_in;
    Ok(NonlinearRun {
        theta,
        w,
        curve,
        xi,
        radius: set.radius(),
        projections,
        active_after_burn_in: if after == 0 { 0.0 } else { late as f64 / after as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::interior_fixture;
    use crate::fa_linear::{msrpbe_exact, robust_gtd2_step, robust_tdc_step, LinearModel, LinearSample};
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut SimRng, d: usize, s: f64) -> Vec<f64> {
        (0..d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn network() -> TanhNetwork {
        let x = DMatrix::from_fn(5, 2, |i, j| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / 5.0;
            if j == 0 { t.cos() } else { t.sin() }
        });
        TanhNetwork::new(x, 3).unwrap()
    }

    fn quadratic() -> QuadraticFeatureModel {
        let f = FeatureMap::fourier(5, 3).unwrap();
        let q = DMatrix::from_fn(5, 3, |i, k| 0.1 * f.matrix()[(i, k)].powi(2));
        QuadraticFeatureModel::new(f.matrix().clone(), q).unwrap()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm2(&d) / norm2(b).max(1e-12)
    }

    fn derivative_checks<M: SmoothValueModel>(m: &M, seed: u64) {
        let mut rng = seeded(seed);
        let h = 1e-6;
        for _ in 0..10 {
            let theta = gaussian(&mut rng, m.dim(), 1.0);
            let u = gaussian(&mut rng, m.dim(), 1.0);
            for i in 0..m.n_states() {
                let g = m.gradient(&theta, i);
                let fd: Vec<f64> = (0..m.dim())
                    .map(|k| {
                        let (mut p, mut q) = (theta.clone(), theta.clone());
                        p[k] += h;
                        q[k] -= h;
                        (m.value(&p, i) - m.value(&q, i)) / (2.0 * h)
                    })
                    .collect();
                assert!(rel(&g, &fd) <= 1e-5, "gradient {g:?} vs {fd:?}");
                let hv = m.hessian_vec(&theta, i, &u);
                let e = 1e-5;
                let tp: Vec<f64> = theta.iter().zip(&u).map(|(t, d)| t + e * d).collect();
                let tm: Vec<f64> = theta.iter().zip(&u).map(|(t, d)| t - e * d).collect();
                let fd: Vec<f64> = m
                    .gradient(&tp, i)
                    .iter()
                    .zip(m.gradient(&tm, i))
                    .map(|(a, b)| (a - b) / (2.0 * e))
                    .collect();
                if norm2(&fd) > 1e-8 {
                    assert!(rel(&hv, &fd) <= 1e-4, "hessian {hv:?} vs {fd:?}");
                } else {
                    assert!(norm2(&hv) <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        derivative_checks(&quadratic(), 1);
        derivative_checks(&network(), 2);
    }

    #[test]
    fn gamma_examples() {
        let c = CompactSet::new(1.0).unwrap();
        assert_eq!(gamma_projection(&[0.3, 0.4], &c), vec![0.3, 0.4]);
        let p = gamma_projection(&[3.0, 4.0], &c);
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.8, epsilon = 1e-15);
        assert_eq!(gamma_projection(&p, &c), p);
        assert!(CompactSet::new(0.0).is_err());
        assert_eq!(CompactSet::default_for(&[3.0, 4.0]).radius(), 60.0);
    }

    #[test]
    fn h_term_examples() {
        let lin = LinearValueModel { features: FeatureMap::fourier(5, 3).unwrap() };
        let hv = lin.hessian_vec(&[1.0, 2.0, 3.0], 1, &[0.5, 0.5, 0.5]);
        assert!(h_term(0.7, &[1.0, 0.0, 0.0], &[0.5, 0.5, 0.5], &hv).unwrap().iter().all(|&x| x == 0.0));
        assert!(h_term(0.5, &[1.0, 0.0], &[0.5, 9.0], &[3.0, 4.0]).unwrap().iter().all(|&x| x == 0.0));

        // v(θ) = θ₀ + 2θ₁ + ½(3θ₀² + θ₁²) at θ = (1, −1), w = (0.5, 2):
        // φ = (1 + 3, 2 − 1) = (4, 1), ∇²v·w = (1.5, 2), φᵀw = 4.
        let m = QuadraticFeatureModel::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DMatrix::from_row_slice(1, 2, &[3.0, 1.0]),
        )
        .unwrap();
        let (theta, w) = ([1.0, -1.0], [0.5, 2.0]);
        let phi = m.gradient(&theta, 0);
        assert_eq!(phi, vec![4.0, 1.0]);
        let hv = m.hessian_vec(&theta, 0, &w);
        assert_eq!(hv, vec![1.5, 2.0]);
        let h = h_term(5.0, &phi, &w, &hv).unwrap();
        assert_eq!(h, vec![1.5, 2.0]);
    }

    #[test]
    fn linear_instance_reduces_to_linear_steps() {
        let f = FeatureMap::fourier(5, 3).unwrap();
        let lin = LinearValueModel { features: f.clone() };
        let r = ConfidenceRegion::l2(0.1).unwrap();
        let big = CompactSet::new(1e6).unwrap();
        let mut rng = seeded(4);
        for _ in 0..20 {
            let theta = gaussian(&mut rng, 3, 1.0);
            let w = gaussian(&mut rng, 3, 1.0);
            let (i, j) = (rng.random_range(0..5), rng.random_range(0..5));
            let s = StateSample { state: i, next: j, cost: rng.random() };
            let ls = LinearSample::from_states(&f, i, j, s.cost).unwrap();
            let lm = LinearModel { theta: theta.clone(), w: w.clone() };
            let a = robust_nonlinear_gtd2_step(&lin, &theta, &w, &s, 0.1, 0.2, &r, &big, 0.5).unwrap();
            let b = robust_gtd2_step(&lm, &ls, 0.1, 0.2, &r, &f, 0.5).unwrap();
            assert!(!a.projected);
            assert!(rel(&a.theta, &b.theta) < 1e-13 && rel(&a.w, &b.w) < 1e-13);
            let a = robust_nonlinear_tdc_step(&lin, &theta, &w, &s, 0.1, 0.2, &r, &big, 0.5).unwrap();
            let b = robust_tdc_step(&lm, &ls, 0.1, 0.2, &r, &f, 0.5).unwrap();
            assert!(rel(&a.theta, &b.theta) < 1e-13 && rel(&a.w, &b.w) < 1e-13);
        }
    }

    #[test]
    fn quadratic_step_fixture() {
        // Two states, v(θ) per state from L = [[1, 0], [0, 1]], Q = [[1, 0], [0, 0]].
        let m = QuadraticFeatureModel::new(DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]))
            .unwrap();
        let theta = [1.0, 2.0];
        let w = [0.5, -1.0];
        // v = (1 + ½, 2) = (1.5, 2); φ(0) = (2, 0), φ(1) = (0, 1), ∇²v(0)w = (0.5, 0).
        let s = StateSample { state: 0, next: 1, cost: 1.0 };
        let z = ConfidenceRegion::zero();
        let set = CompactSet::new(100.0).unwrap();
        let up = robust_nonlinear_gtd2_step(&m, &theta, &w, &s, 0.1, 0.2, &z, &set, 0.5).unwrap();
        let td = 1.0 + 0.5 * 2.0 - 1.5;
        let pw = 2.0 * 0.5;
        let h = [(td - pw) * 0.5, 0.0];
        let expect = [1.0 + 0.1 * ((2.0 - 0.0) * pw - h[0]), 2.0 + 0.1 * ((0.0 - 0.5) * pw - h[1])];
        assert_abs_diff_eq!(up.theta[0], expect[0], epsilon = 1e-15);
        assert_abs_diff_eq!(up.theta[1], expect[1], epsilon = 1e-15);
        assert_abs_diff_eq!(up.w[0], 0.5 + 0.2 * (td - pw) * 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(up.w[1], -1.0, epsilon = 1e-15);
        let up = robust_nonlinear_tdc_step(&m, &theta, &w, &s, 0.1, 0.2, &z, &set, 0.5).unwrap();
        let expect = [1.0 + 0.1 * (td * 2.0 - h[0]), 2.0 + 0.1 * (-0.5 * 1.0 * pw)];
        assert_abs_diff_eq!(up.theta[0], expect[0], epsilon = 1e-15);
        assert_abs_diff_eq!(up.theta[1], expect[1], epsilon = 1e-15);
    }

    #[test]
    fn linear_model_agrees_with_linear_loss() {
        let mdp = interior_fixture();
        let pol = Policy::uniform(5, 2);
        let xi = steady_state_distribution(&mdp.policy_matrix(&pol).unwrap()).unwrap();
        let f = FeatureMap::fourier(5, 3).unwrap();
        let lin = LinearValueModel { features: f.clone() };
        let r = ConfidenceRegion::l2(0.1).unwrap();
        let theta = [0.3, 1.0, -0.5];
        let a = msrpbe_nonlinear_exact(&theta, &mdp, &xi, &pol, &lin, &r, 0.5).unwrap();
        let b = msrpbe_exact(&theta, &mdp, &xi, &pol, &f, &r, 0.5).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-14 * b.max(1.0));
    }

    #[test]
    fn singular_gram_names_direction() {
        let mdp = interior_fixture();
        let pol = Policy::uniform(5, 2);
        let xi = steady_state_distribution(&mdp.policy_matrix(&pol).unwrap()).unwrap();
        // At a = 0 every W and b derivative vanishes.
        let net = network();
        let theta = vec![0.0; net.dim()];
        let err = msrpbe_nonlinear_exact(&theta, &mdp, &xi, &pol, &net, &ConfidenceRegion::zero(), 0.5).unwrap_err();
        assert!(matches!(err, Error::Singular(ref m) if m.contains("along")));
    }

    #[test]
    fn nonlinear_gradient_matches_finite_differences() {
        let mdp = interior_fixture();
        let pol = Policy::uniform(5, 2);
        let xi = steady_state_distribution(&mdp.policy_matrix(&pol).unwrap()).unwrap();
        let r = ConfidenceRegion::l2(0.1).unwrap();
        // Width 1 keeps E[∇v∇vᵀ] nonsingular on five states (d = 5).
        let x = DMatrix::from_fn(5, 2, |i, j| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / 5.0;
            if j == 0 { t.cos() } else { t.sin() }
        });
        let net = TanhNetwork::new(x, 1).unwrap();
        let mut rng = seeded(9);
        let mut checked = 0;
        while checked < 20 {
            let theta = gaussian(&mut rng, net.dim(), 1.0);
            let v = net.values(&theta);
            if norm2(&crate::linalg::centered(&v)) < 1e-3 {
                continue;
            }
            let Ok(g) = msrpbe_nonlinear_gradient_exact(&theta, &mdp, &xi, &pol, &net, &r, 0.5) else {
                continue;
            };
            let h = 1e-6;
            let fd: Vec<f64> = (0..net.dim())
                .map(|k| {
                    let (mut p, mut q) = (theta.clone(), theta.clone());
                    p[k] += h;
                    q[k] -= h;
                    (msrpbe_nonlinear_exact(&p, &mdp, &xi, &pol, &net, &r, 0.5).unwrap()
                        - msrpbe_nonlinear_exact(&q, &mdp, &xi, &pol, &net, &r, 0.5).unwrap())
                        / (2.0 * h)
                })
                .collect();
            assert!(rel(&g, &fd) <= 1e-3, "{g:?} vs {fd:?}");
            checked += 1;
        }
    }

    #[test]
    fn feature_variation_part_of_mu_is_lipschitz() {
        // ‖(Φ_θ − Φ_θ′)ᵀy‖ ≤ L̂·max‖y‖·‖θ − θ′‖ with L̂ the empirical Lipschitz
        // constant of Φ_θ (spectral norm) over the same box.
        let net = network();
        let r = ConfidenceRegion::l2(0.2).unwrap();
        let mut rng = seeded(6);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..200)
            .map(|_| {
                let a: Vec<f64> = (0..net.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b: Vec<f64> = (0..net.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                (a, b)
            })
            .collect();
        let mut l_hat = 0.0f64;
        for (a, b) in &pairs {
            let dj = net.jacobian(a) - net.jacobian(b);
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            l_hat = l_hat.max(dj.norm() / norm2(&diff));
        }
        for (a, b) in &pairs {
            let y = r.support(&net.values(a)).unwrap().maximizer;
            let dj = net.jacobian(a) - net.jacobian(b);
            let lhs = (dj.transpose() * DVector::from_vec(y)).norm();
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            assert!(lhs <= l_hat * 0.2 * norm2(&diff) + 1e-12);
        }
    }

    #[test]
    fn learner_runs_and_tracks_projection() {
        let mdp = interior_fixture();
        let pol = Policy::uniform(5, 2);
        let r = ConfidenceRegion::l2(0.1).unwrap();
        let mut cfg = GradientTdConfig::new(20_000);
        cfg.checkpoint_every = 10_000;
        let run = robust_nonlinear_gradient_td(GradientTdVariant::Tdc, &mdp, &pol, &quadratic(), &r, None, &cfg, None, &mut seeded(1))
            .unwrap();
        assert_eq!(run.curve.len(), 3);
        assert!(run.curve[2].msrpbe < run.curve[0].msrpbe);
        assert_eq!(run.radius, 10.0);
        let tiny = CompactSet::new(0.01).unwrap();
        let run = robust_nonlinear_gradient_td(GradientTdVariant::Gtd2, &mdp, &pol, &quadratic(), &r, Some(tiny), &cfg, None, &mut seeded(1))
            .unwrap();
        assert!(run.projections > 0);
        assert!(norm2(&run.theta) <= 0.01 + 1e-15);
    }
}
