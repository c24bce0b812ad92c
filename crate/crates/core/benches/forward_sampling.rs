use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mgp_core::data::{encode, Observations};
use mgp_core::dgp::{SetupKind, SyntheticSetup};
use mgp_core::engine::{run_mgp, EngineConfig};
use mgp_core::exec::Execution;
use mgp_core::functionals::LossSpec;
use mgp_core::rng::RngStream;
use mgp_core::rules::RuleConfig;

fn gaussian_sample() -> Observations {
    let setup = SyntheticSetup::new(SetupKind::Gaussian { noise_sd: 1.0 }, 10, 20, &mut RngStream::new(7, 0).rng()).unwrap();
    let data = setup.generate(&mut RngStream::new(7, 1).rng());
    Observations::from_design(&encode(&data, &setup.standardization()).unwrap())
}

fn forward_sampling(c: &mut Criterion) {
    let data = gaussian_sample();
    let loss = LossSpec::squared_error(data.width() + 1);
    let rules = [("bb", RuleConfig::BayesianBootstrap, 2000), ("copula", RuleConfig::Copula { rho: 0.8 }, 200)];

    let mut group = c.benchmark_group("forward_sampling");
    group.sample_size(10);
    for (name, rule, steps) in rules {
        for execution in [Execution::Sequential, Execution::Parallel] {
            let config = EngineConfig::new(data.len() + steps, 32, 3).with_execution(execution);
            group.bench_with_input(BenchmarkId::new(name, format!("{execution:?}")), &config, |b, config| {
                b.iter(|| run_mgp(&data, &rule, &loss, config).unwrap());
            });
        }
    }
    group.finish();
}

criterion_group!(benches, forward_sampling);
criterion_main!(benches);
