//! Radius selection on the interior fixture.
//!
//! Ignored: on this fixture every radius in the grid yields the same greedy
//! policy, so the cross-fitted scores tie and the tie rule returns radius 0.
//! Run with `--ignored` to reproduce.

use robustrl::harness::{cv_line_search, ExperimentConfig};

const CONFIG: &str = r#"{
    "schema_version": 1,
    "env": { "kind": "fixture", "name": "interior" },
    "perturbation": 0.1,
    "algorithm": "robust-q",
    "region": { "family": "l2", "radius_grid": [0.0, 0.05, 0.1, 0.15] },
    "learner": { "schedule": { "scale": 1.0, "offset": 1.0, "exponent": 0.8 }, "beta_samples": 0 },
    "seeds": [0],
    "train_steps": 20000,
    "eval_episodes": 100
}"#;

#[test]
#[ignore = "every radius ties on this fixture; see the notes on radius selection"]
fn chosen_radius_is_nonzero_for_most_harness_seeds() {
    let mut nonzero = 0;
    let mut chosen = Vec::new();
    for h in 0..10u64 {
        let mut cfg = ExperimentConfig::from_json(CONFIG).unwrap();
        cfg.seeds = vec![h];
        cfg.cv_seeds = Some((100 + 10 * h..110 + 10 * h).collect());
        let cv = cv_line_search(&cfg).unwrap();
        chosen.push(cv.chosen_radius);
        if cv.chosen_radius > 0.0 {
            nonzero += 1;
        }
    }
    assert!(nonzero >= 7, "chosen radii {chosen:?}");
}
