use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use muskat::{
    gaussian_blur, hc_first_variation, jko_step, quadratic_ctransform, solve_dual, BfmOptions,
    Grid, HeatKernelParams, LevelSetOptions, PhaseField, PhasePair, PotentialSpec, ScalarField,
    StepConfig,
};

fn drop_pair(n: usize) -> PhasePair {
    let g = Grid::new(n).unwrap();
    let rho = PhaseField::from_indicator(g, |x, y| (x - 0.5).abs() < 0.1 && (y - 0.65).abs() < 0.1);
    PhasePair::from_phase1(rho, 1.0, 1.0).unwrap()
}

fn wavy(n: usize) -> ScalarField {
    ScalarField::from_fn(Grid::new(n).unwrap(), |x, y| {
        (7.0 * x).sin() * (5.0 * y).cos() + 0.3 * x * y
    })
}

fn step_config() -> StepConfig {
    StepConfig {
        tau: 0.03,
        eps: None,
        sigma: 0.15,
        b1: 1.0,
        b2: 1.0,
        potential: PotentialSpec::Gravity { w1: 5.0, w2: 1.0 },
        bfm: BfmOptions::default(),
        levelset: LevelSetOptions::default(),
    }
}

fn ctransform(c: &mut Criterion) {
    let mut group = c.benchmark_group("ctransform");
    for n in [64, 128, 256] {
        let f = wavy(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| {
            b.iter(|| quadratic_ctransform(black_box(f), 1.0 / 0.06).unwrap())
        });
    }
    group.finish();
}

fn blur(c: &mut Criterion) {
    let mut group = c.benchmark_group("blur");
    for n in [64, 128, 256] {
        let pair = drop_pair(n);
        let params = HeatKernelParams::auto(pair.grid(), 0.15).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &pair, |b, pair| {
            b.iter(|| gaussian_blur(black_box(pair.rho1.field()), &params))
        });
    }
    group.finish();
}

fn dual(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_dual");
    group.sample_size(10);
    for n in [32, 64] {
        let pair = drop_pair(n);
        let cfg = step_config();
        let params = cfg.kernel(pair.grid()).unwrap();
        let (p1, p2) = cfg.potential.fields(pair.grid());
        let psi1 = hc_first_variation(&pair.rho2, &params).zip_map(&p1, |a, b| a + b);
        let psi2 = hc_first_variation(&pair.rho1, &params).zip_map(&p2, |a, b| a + b);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pair, |b, pair| {
            b.iter(|| solve_dual(pair, &psi1, &psi2, cfg.tau, &cfg.bfm, None).unwrap())
        });
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let mut group = c.benchmark_group("jko_step");
    group.sample_size(10);
    for n in [32, 64] {
        let pair = drop_pair(n);
        let cfg = step_config();
        group.bench_with_input(BenchmarkId::from_parameter(n), &pair, |b, pair| {
            b.iter(|| jko_step(pair, &cfg, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, ctransform, blur, dual, step);
criterion_main!(benches);
