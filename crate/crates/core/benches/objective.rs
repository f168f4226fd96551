//! KOG objective over a batch of candidates, rayon map vs plain iterator.

use battcal::cell::{simulate, CellParameters, CurrentProfile, OcvSet, Parameter, SimOptions};
use battcal::estimator::{objective_kog, plausible_bounds, EstimationProblem, Objective, Target};
use battcal::exec;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn problem() -> EstimationProblem {
    let plant = CellParameters::default();
    let profile = CurrentProfile::constant(plant.c_rate_current(1.0), 10.0, 300).unwrap();
    let y = simulate(&profile, &plant, &OcvSet::default(), 1.0, &SimOptions::default()).unwrap().voltages();
    let mut p = EstimationProblem::new(
        y,
        profile,
        vec![Target::new(Parameter::EpsSN, plausible_bounds(Parameter::EpsSN))],
        plant,
        Objective::Kog,
        1.0,
    );
    p.downsample = 150;
    p
}

fn bench(c: &mut Criterion) {
    let p = problem();
    let candidates: Vec<f64> = (0..8).map(|i| 0.6 + 0.03 * i as f64).collect();
    let ls = [1.0, 0.5, 2.0, 1.0];
    let mut g = c.benchmark_group("kog_batch_8");
    g.sample_size(10);
    for parallel in [false, true] {
        let label = if parallel { "parallel" } else { "sequential" };
        g.bench_with_input(BenchmarkId::from_parameter(label), &parallel, |b, &par| {
            b.iter(|| exec::map(&candidates, par, |&e| objective_kog(black_box(&p), &[e], &ls).ok()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
