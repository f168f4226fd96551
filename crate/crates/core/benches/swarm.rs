//! Whole swarm on a one-parameter least-squares fit, parallel vs sequential.

use battcal::cell::{simulate, CellParameters, CurrentProfile, OcvSet, Parameter, SimOptions};
use battcal::estimator::{estimate_group, plausible_bounds, EstimationProblem, Objective, Target};
use battcal::pso::SwarmConfig;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench(c: &mut Criterion) {
    let plant = CellParameters::default();
    let profile = CurrentProfile::constant(plant.c_rate_current(1.0), 10.0, 300).unwrap();
    let y = simulate(&profile, &plant, &OcvSet::default(), 1.0, &SimOptions::default()).unwrap().voltages();
    let mut p = EstimationProblem::new(
        y,
        profile,
        vec![Target::new(Parameter::EpsSN, plausible_bounds(Parameter::EpsSN))],
        plant,
        Objective::Ls,
        1.0,
    );
    p.downsample = 150;

    let mut g = c.benchmark_group("swarm_12x5");
    g.sample_size(10);
    for parallel in [false, true] {
        let cfg = SwarmConfig { particles: 12, iterations: 5, parallel, ..Default::default() };
        let label = if parallel { "parallel" } else { "sequential" };
        g.bench_with_input(BenchmarkId::from_parameter(label), &cfg, |b, cfg| {
            b.iter(|| estimate_group(&p, cfg).unwrap().objective_value)
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
