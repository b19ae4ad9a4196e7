use criterion::{black_box, criterion_group, criterion_main, Criterion};

use impact_game_core::equilibrium::closed_loop_policy;
use impact_game_core::model::{validate, ModelParams, ValidatedParams};
use impact_game_core::simulate::{
    deviation_experiment, estimate_value, FeedbackPolicy, Perturbation, SimConfig,
};

fn mc_params() -> ValidatedParams {
    validate(ModelParams {
        beta: 0.1,
        sigma: 0.01,
        sigma_p: 0.0,
        rho: 0.05,
        gamma: 1e-4,
        lambda: 1e-6,
        n_agents: 3,
    })
    .unwrap()
}

fn bench_estimate_value(c: &mut Criterion) {
    let params = mc_params();
    let (policy, _, _) = closed_loop_policy(&params).unwrap();
    let fb = FeedbackPolicy::from_policy(&policy, params.gamma());
    let policies = vec![fb; 3];
    let config = SimConfig {
        dt: 0.25,
        horizon: 200.0,
        n_paths: 1000,
        seed: 1,
        mu0: 0.0,
    };
    c.bench_function("estimate_value/1000_paths", |b| {
        b.iter(|| estimate_value(&params, black_box(&policies), 0, &config).unwrap())
    });
}

fn bench_deviation(c: &mut Criterion) {
    let params = mc_params();
    let config = SimConfig {
        dt: 0.25,
        horizon: 200.0,
        n_paths: 500,
        seed: 1,
        mu0: 0.0,
    };
    let pert = Perturbation::m_rate(1.2);
    c.bench_function("deviation_experiment/500_paths", |b| {
        b.iter(|| deviation_experiment(&params, black_box(&config), &pert).unwrap())
    });
}

criterion_group!(benches, bench_estimate_value, bench_deviation);
criterion_main!(benches);
