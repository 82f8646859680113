use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

use hibits::bootstrap::bootstrap_beta;
use hibits::kernels::{build_cov_matrix, KernelParams};
use hibits::laplace::find_mode;
use hibits::links::LinkKind;
use hibits::model::{fit_hibits, predict, FitOptions};
use hibits_bench::{gp_inputs, scenario1_data};

fn bench_cov_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_cov_matrix");
    for n in [100usize, 400] {
        let data = scenario1_data(n, 11);
        let x = gp_inputs(&data);
        let p = KernelParams::squared_exp(5.0, 1.0, 0.01);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| build_cov_matrix(&x, &p).unwrap());
        });
    }
    group.finish();
}

fn bench_find_mode(c: &mut Criterion) {
    let mut group = c.benchmark_group("find_mode");
    group.sample_size(20);
    for n in [100usize, 400] {
        let data = scenario1_data(n, 13);
        let x = gp_inputs(&data);
        let k = build_cov_matrix(&x, &KernelParams::squared_exp(5.0, 1.0, 0.01)).unwrap();
        let offset = DVector::zeros(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| find_mode(&k, &data.y, &offset, LinkKind::Logit).unwrap());
        });
    }
    group.finish();
}

fn bench_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_hibits");
    group.sample_size(10);
    let data = scenario1_data(400, 17);
    let opts = FitOptions {
        kernel: KernelParams::squared_exp(1.0, 1.0, 0.01),
        link: LinkKind::Logit,
        select_lambda: true,
        lambda_bounds: (0.0, 10.0),
        select_tol: None,
        rescale_x2: false,
    };
    group.bench_function("n400_selected", |b| {
        b.iter(|| fit_hibits(&data, &opts).unwrap());
    });
    group.finish();
}

fn bench_predict_and_bootstrap(c: &mut Criterion) {
    let data = scenario1_data(500, 19);
    let train = {
        let (train, _) = hibits::data::split_data(
            &data,
            hibits::data::SplitSpec::Sequential { train: 400, test: 100 },
        )
        .unwrap();
        train
    };
    let opts = FitOptions {
        kernel: KernelParams::squared_exp(5.0, 1.0, 0.01),
        link: LinkKind::Logit,
        select_lambda: false,
        lambda_bounds: (0.0, 10.0),
        select_tol: None,
        rescale_x2: false,
    };
    let model = fit_hibits(&train, &opts).unwrap();

    let mut group = c.benchmark_group("inference");
    group.sample_size(20);
    group.bench_function("predict_100", |b| {
        let x1 = data.x1.rows(400, 100).into_owned();
        let x2 = data.x2.rows(400, 100).into_owned();
        b.iter(|| predict(&model, &x1, &x2).unwrap());
    });
    group.bench_function("bootstrap_200", |b| {
        b.iter(|| bootstrap_beta(&model, &train, 200, 7).unwrap());
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_cov_matrix,
    bench_find_mode,
    bench_fit,
    bench_predict_and_bootstrap
);
criterion_main!(benches);
