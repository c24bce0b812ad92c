use mgp_core::data::{Observations, ResponseValue};
use mgp_core::engine::{feature_pool_sample, run_mgp, run_with, EngineConfig, ForwardSampler};
use mgp_core::exec::Execution;
use mgp_core::functionals::LossSpec;
use mgp_core::rng::{RngStream, StreamRng};
use mgp_core::rules::{RuleConfig, RuleError};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Predicts zero for every row and ignores what it absorbs.
struct ZeroRule;

impl ForwardSampler for ZeroRule {
    fn name(&self) -> &'static str {
        "zero"
    }

    fn fork(&self) -> Result<Self, RuleError> {
        Ok(ZeroRule)
    }

    fn update(&mut self, _x: &[f64], _y: ResponseValue) -> Result<(), RuleError> {
        Ok(())
    }

    fn forward_base(&mut self, _row: usize, _x: &[f64], _rng: &mut StreamRng) -> Result<Option<ResponseValue>, RuleError> {
        Ok(Some(ResponseValue::Continuous(0.0)))
    }
}

fn intercept_only(width: usize) -> LossSpec {
    let mut mask = vec![false; width + 1];
    mask[0] = true;
    LossSpec::squared_error(width + 1).with_mask(mask)
}

fn gaussian_obs(seed: u64, n: usize, width: usize) -> Observations {
    let mut rng = RngStream::new(seed, 0).rng();
    let mut obs = Observations::new(width, None);
    for _ in 0..n {
        let x: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
        let y = x.iter().sum::<f64>() + rng.sample::<f64, _>(StandardNormal);
        obs.push(&x, ResponseValue::Continuous(y));
    }
    obs
}

#[test]
fn one_row_bootstrap_repeats_that_row() {
    let mut obs = Observations::new(2, None);
    obs.push(&[0.5, -1.0], ResponseValue::Continuous(3.0));
    let mut config = EngineConfig::new(51, 5, 1);
    config.keep_pairs = true;
    let run = run_mgp(&obs, &RuleConfig::BayesianBootstrap, &intercept_only(2), &config).unwrap();
    for t in &run.trajectories {
        let generated = t.generated.as_ref().unwrap();
        assert_eq!(generated.len(), 50);
        assert!(generated.iter().all(|&(row, y)| row == 0 && y == ResponseValue::Continuous(3.0)));
        assert_eq!(t.theta, run.trajectories[0].theta);
    }
}

#[test]
fn bootstrap_keeps_the_feature_support() {
    let obs = gaussian_obs(2, 7, 3);
    let mut config = EngineConfig::new(7 + 200, 4, 9);
    config.keep_pairs = true;
    let run = run_mgp(&obs, &RuleConfig::BayesianBootstrap, &LossSpec::squared_error(4), &config).unwrap();
    for t in &run.trajectories {
        let generated = t.generated.as_ref().unwrap();
        assert_eq!(generated.len(), 200);
        for &(row, y) in generated {
            assert!(row < 7);
            assert_eq!(y, obs.response(row));
        }
    }
}

#[test]
fn pool_indices_are_uniform() {
    assert!((0..100).all(|_| feature_pool_sample(1, &mut RngStream::new(3, 0).rng()) == 0));
    let mut rng = RngStream::new(4, 0).rng();
    let m = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..m {
        counts[feature_pool_sample(4, &mut rng)] += 1;
    }
    let se = (0.25 * 0.75 / m as f64).sqrt();
    for c in counts {
        assert!((c as f64 / m as f64 - 0.25).abs() < 3.0 * se, "{counts:?}");
    }
}

#[test]
fn checkpoints_end_at_the_depth() {
    let obs = gaussian_obs(5, 10, 2);
    let config = EngineConfig::new(10 + 60, 3, 2).with_checkpoints(vec![10, 35, 20, 500]);
    let run = run_mgp(&obs, &RuleConfig::Copula { rho: 0.8 }, &LossSpec::squared_error(3), &config).unwrap();
    for t in &run.trajectories {
        let steps: Vec<usize> = t.checkpoints.iter().map(|c| c.0).collect();
        assert_eq!(steps, vec![10, 20, 35, 70]);
        assert_eq!(t.checkpoints.last().unwrap().1, t.theta);
    }
    assert_eq!(run.draws.len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_rule_gives_the_augmented_mean(ys in prop::collection::vec(-10.0f64..10.0, 1..6), extra in 1usize..150) {
        let mut obs = Observations::new(1, None);
        for &y in &ys {
            obs.push(&[0.25], ResponseValue::Continuous(y));
        }
        let n = ys.len();
        let config = EngineConfig::new(n + extra, 3, 0);
        let run = run_with(&obs, &ZeroRule, &intercept_only(1), &config).unwrap();
        let expected = ys.iter().sum::<f64>() / (n + extra) as f64;
        for d in &run.draws.draws {
            prop_assert!((d[0] - expected).abs() < 1e-12, "{} vs {expected}", d[0]);
        }
    }

    #[test]
    fn no_forward_steps_reproduce_the_fit(seed in any::<u64>(), bb in any::<bool>()) {
        let obs = gaussian_obs(seed, 12, 2);
        let loss = LossSpec::squared_error(3);
        let rule = if bb { RuleConfig::BayesianBootstrap } else { RuleConfig::Copula { rho: 0.8 } };
        let run = run_mgp(&obs, &rule, &loss, &EngineConfig::new(12, 4, seed)).unwrap();
        if bb {
            let direct = loss.fit_rows(obs.features(), 2, obs.responses(), None).unwrap().theta;
            for d in &run.draws.draws {
                prop_assert_eq!(d, &direct);
            }
        } else {
            // the copula estimator refits on responses drawn at the observed rows
            prop_assert!(run.draws.converged.iter().all(|c| *c));
        }
    }

    #[test]
    fn worker_count_does_not_change_draws(seed in any::<u64>(), copula in any::<bool>()) {
        let obs = gaussian_obs(seed, 8, 2);
        let loss = LossSpec::squared_error(3);
        let rule = if copula { RuleConfig::Copula { rho: 0.8 } } else { RuleConfig::BayesianBootstrap };
        let base = EngineConfig::new(8 + 40, 6, seed);
        let seq = run_mgp(&obs, &rule, &loss, &base.clone().with_execution(Execution::Sequential)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let par = pool.install(|| run_mgp(&obs, &rule, &loss, &base.with_execution(Execution::Parallel))).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&seq.draws).unwrap(),
            serde_json::to_string(&par.draws).unwrap()
        );
    }
}
