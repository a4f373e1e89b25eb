use criterion::{criterion_group, criterion_main, Criterion};
use robustrl::envs::interior_fixture;
use robustrl::fa_linear::{robust_gradient_td, FeatureMap, GradientTdConfig, GradientTdVariant};
use robustrl::mdp::steady_state_distribution;
use robustrl::rng::stream;
use robustrl::tabular::{robust_q_learning, TabularLearnerConfig};
use robustrl::{ConfidenceRegion, Policy, Regions};

const STEPS: usize = 10_000;

fn q_learning(c: &mut Criterion) {
    let env = interior_fixture();
    let regions = Regions::shared(ConfidenceRegion::l2(0.15).unwrap());
    let cfg = TabularLearnerConfig { steps: STEPS, beta_samples: 0, ..Default::default() };
    c.bench_function("robust_q_learning_10k", |b| {
        b.iter(|| robust_q_learning(&env, &regions, &cfg, None, &mut stream(0, 0)).unwrap())
    });
}

fn gradient_td(c: &mut Criterion) {
    let env = interior_fixture();
    let policy = Policy::uniform(5, 2);
    let xi = steady_state_distribution(&env.policy_matrix(&policy).unwrap()).unwrap();
    let features = FeatureMap::fourier(5, 3).unwrap();
    let region = ConfidenceRegion::l2(0.1).unwrap();
    let cfg = GradientTdConfig::new(STEPS);
    for (name, variant) in [("robust_gtd2_10k", GradientTdVariant::Gtd2), ("robust_tdc_10k", GradientTdVariant::Tdc)] {
        c.bench_function(name, |b| {
            b.iter(|| {
                robust_gradient_td(variant, &env, &policy, &features, &region, &cfg, Some(&xi), &mut stream(0, 0))
                    .unwrap()
            })
        });
    }
}

criterion_group!(benches, q_learning, gradient_td);
criterion_main!(benches);
