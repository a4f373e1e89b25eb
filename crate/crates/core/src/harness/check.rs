//! Fast deterministic invariant suite behind `robustrl check`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{run_experiment, tail_distribution, ExperimentConfig};
use crate::dp::robust_value_iteration;
use crate::envs::{interior_fixture, random_mdp, two_state_fixture};
use crate::error::Result;
use crate::fa_linear::{msrpbe_exact, msrpbe_gradient_exact, FeatureMap};
use crate::fa_nonlinear::{SmoothValueModel, TanhNetwork};
use crate::mdp::{validate_schedule, Policy, StepSchedule, TabularMdp};
use crate::rng::{seeded, SimRng};
use crate::tabular::h_operator;
use crate::uncertainty::{ConfidenceRegion, Regions};
use crate::QTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

type Outcome = Result<(bool, String)>;

/// Runs every check; an `Err` inside a check counts as a failure.
pub fn check_suite() -> CheckReport {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("support_dominates_members", support_dominates_members),
        ("dp_radius_zero_matches_value_iteration", dp_radius_zero),
        ("dp_two_state_fixed_point", dp_two_state),
        ("h_operator_contracts", h_contracts),
        ("msrpbe_gradient_finite_differences", msrpbe_gradient),
        ("network_derivatives_finite_differences", network_derivatives),
        ("tail_distribution_monotone", tail_monotone),
        ("default_schedules_valid", schedules_valid),
        ("experiment_replay_identical", replay_identical),
    ];
    let results = checks
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
            CheckResult { name: name.to_string(), passed, detail }
        })
        .collect();
    CheckReport { results }
}

fn uniform(rng: &mut SimRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `σ(v) ≥ xᵀv` for members `x` (maximisers at other directions), and the
/// maximiser at `v` attains `σ(v)`.
fn support_dominates_members() -> Outcome {
    let mut rng = seeded(11);
    let mut worst = 0.0f64;
    for n in 2..=8 {
        let a = nalgebra::DMatrix::from_fn(n, n, |i, j| if i == j { 4.0 + i as f64 } else { 0.5 / (1 + i + j) as f64 });
        let b = nalgebra::DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 } else { 0.1 * ((i + 2 * j) % 3) as f64 });
        let regions = [
            ConfidenceRegion::l2(0.3)?,
            ConfidenceRegion::l1(0.4)?,
            ConfidenceRegion::ellipsoid(&a)?,
            ConfidenceRegion::parallelepiped(&b)?,
        ];
        for region in &regions {
            let v = uniform(&mut rng, n);
            let s = region.support(&v)?;
            worst = worst.max((dot(&s.maximizer, &v) - s.value).abs());
            for _ in 0..10 {
                let x = region.support(&uniform(&mut rng, n))?.maximizer;
                worst = worst.max(dot(&x, &v) - s.value);
            }
        }
    }
    Ok((worst <= 1e-8, format!("largest violation {worst:.3e}")))
}

fn dp_radius_zero() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mdp = random_mdp(6, 3, 3, seed)?;
        let (v, _) = robust_value_iteration(&mdp, &Regions::shared(ConfidenceRegion::zero()), true, 1e-11)?;
        let reference = classical_vi(&mdp);
        worst = worst.max(v.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    Ok((worst <= 1e-8, format!("sup distance {worst:.3e}")))
}

fn classical_vi(mdp: &TabularMdp) -> Vec<f64> {
    let (n, m, g) = (mdp.n_states(), mdp.n_actions(), mdp.discount());
    let mut v = vec![0.0; n];
    for _ in 0..2000 {
        v = (0..n)
            .map(|i| (0..m).map(|a| mdp.cost(i, a) + g * dot(mdp.row(i, a), &v)).fold(f64::INFINITY, f64::min))
            .collect();
    }
    v
}

fn dp_two_state() -> Outcome {
    let regions = Regions::shared(ConfidenceRegion::l2(0.1)?);
    let (v, _) = robust_value_iteration(&two_state_fixture(), &regions, true, 1e-12)?;
    let s = 0.1 / 2f64.sqrt();
    let err = (v[0] - (1.5 + s)).abs().max((v[1] - (0.5 + s)).abs());
    Ok((err <= 1e-6, format!("error {err:.3e}")))
}

fn h_contracts() -> Outcome {
    let env = interior_fixture();
    let regions = Regions::shared(ConfidenceRegion::l2(0.15)?);
    let mut rng = seeded(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let q1 = QTable::from_rows(&(0..5).map(|_| uniform(&mut rng, 2)).collect::<Vec<_>>())?;
        let q2 = QTable::from_rows(&(0..5).map(|_| uniform(&mut rng, 2)).collect::<Vec<_>>())?;
        let d = q1.sup_distance(&q2);
        if d > 0.0 {
            worst = worst.max(h_operator(&env, &regions, &q1)?.sup_distance(&h_operator(&env, &regions, &q2)?) / d);
        }
    }
    // β = 0 on this fixture, so the bound is ϑ.
    let bound = env.discount() + 1e-9;
    Ok((worst <= bound, format!("max ratio {worst:.6} (bound {bound:.6})")))
}

fn msrpbe_gradient() -> Outcome {
    let mdp = random_mdp(6, 2, 3, 3)?;
    let features = FeatureMap::fourier(6, 3)?;
    let region = ConfidenceRegion::l2(0.05)?;
    let policy = Policy::uniform(6, 2);
    let xi = vec![1.0 / 6.0; 6];
    let mut rng = seeded(9);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let theta = uniform(&mut rng, 3);
        let g = msrpbe_gradient_exact(&theta, &mdp, &xi, &policy, &features, &region, mdp.discount())?;
        let h = 1e-6;
        for k in 0..3 {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[k] += h;
            dn[k] -= h;
            let f = |t: &[f64]| msrpbe_exact(t, &mdp, &xi, &policy, &features, &region, mdp.discount());
            let fd = (f(&up)? - f(&dn)?) / (2.0 * h);
            let scale = g.iter().map(|x| x.abs()).fold(1e-8, f64::max);
            worst = worst.max((fd - g[k]).abs() / scale);
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.3e}")))
}

fn network_derivatives() -> Outcome {
    let inputs = FeatureMap::fourier(5, 3)?.matrix().clone();
    let net = TanhNetwork::new(inputs, 3)?;
    let mut rng = seeded(2);
    let theta = uniform(&mut rng, net.dim());
    let u = uniform(&mut rng, net.dim());
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..5 {
        let g = net.gradient(&theta, i);
        let hv = net.hessian_vec(&theta, i, &u);
        let shift = |s: f64| theta.iter().zip(&u).map(|(t, d)| t + s * d).collect::<Vec<_>>();
        let dir = (net.value(&shift(h), i) - net.value(&shift(-h), i)) / (2.0 * h);
        worst = worst.max((dir - dot(&g, &u)).abs());
        let (gp, gm) = (net.gradient(&shift(h), i), net.gradient(&shift(-h), i));
        for k in 0..net.dim() {
            worst = worst.max(((gp[k] - gm[k]) / (2.0 * h) - hv[k]).abs());
        }
    }
    Ok((worst <= 1e-6, format!("max abs error {worst:.3e}")))
}

fn tail_monotone() -> Outcome {
    let mut rng = seeded(4);
    let rewards = uniform(&mut rng, 200);
    let tail = tail_distribution(&rewards, None)?;
    let ok = tail.windows(2).all(|w| w[1].probability <= w[0].probability)
        && tail.iter().all(|p| (0.0..=1.0).contains(&p.probability))
        && tail[0].probability == 1.0;
    Ok((ok, format!("{} points", tail.len())))
}

fn schedules_valid() -> Outcome {
    let schedules = [
        crate::tabular::TabularLearnerConfig::default().schedule,
        crate::fa_linear::GradientTdConfig::new(1).slow,
        crate::fa_linear::GradientTdConfig::new(1).fast,
        StepSchedule::harmonic(),
    ];
    let bad: Vec<String> =
        schedules.iter().map(validate_schedule).filter(|c| !c.valid).map(|c| c.diagnostic).collect();
    Ok((bad.is_empty(), if bad.is_empty() { "all valid".into() } else { bad.join("; ") }))
}

fn replay_identical() -> Outcome {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "schema_version": 1,
            "env": { "kind": "gridworld", "map": "4x4", "slip_model": "slippery3_way" },
            "perturbation": 0.1,
            "algorithm": "robust-q",
            "region": { "family": "row_ellipsoid", "radius": 0.2 },
            "learner": { "schedule": { "scale": 1.0, "offset": 1.0, "exponent": 0.8 }, "beta_samples": 0 },
            "seeds": [0, 1, 2],
            "train_steps": 5000,
            "eval_episodes": 50
        }"#,
    )?;
    let a = run_experiment(&cfg, None)?;
    let b = run_experiment(&cfg, None)?;
    let same = a.to_json()? == b.to_json()? && a.episode_rewards == b.episode_rewards;
    Ok((same, if same { "byte-identical".into() } else { "reports differ".into() }))
}
