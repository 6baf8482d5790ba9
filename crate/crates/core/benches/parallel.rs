use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use vton::geometry::{identity_flow, warp_by_flow, FlowField};
use vton::numcore::{gradcheck, Tensor};
use vton::par;

fn image(h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[h, w, 3], |i| ((i as f64) * 0.013).sin() * 0.5 + 0.5)
}

fn swirl(h: usize, w: usize) -> FlowField {
    let id = identity_flow(h, w);
    let c: Vec<f64> = id
        .coords()
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + 1.7 * ((i / 2) as f64 * 0.01).sin())
        .collect();
    FlowField::from_flat(h, w, c).unwrap()
}

fn modes(c: &mut Criterion, group: &str, size: usize, f: &(dyn Fn() + Sync)) {
    let mut g = c.benchmark_group(group);
    g.bench_with_input(BenchmarkId::new("parallel", size), &size, |b, _| b.iter(f));
    g.bench_with_input(BenchmarkId::new("sequential", size), &size, |b, _| {
        b.iter(|| par::sequential(f))
    });
    g.finish();
}

fn warp(c: &mut Criterion) {
    for (h, w) in [(64, 48), (256, 192)] {
        let (img, flow) = (image(h, w), swirl(h, w));
        modes(c, "warp_by_flow", h * w, &|| {
            black_box(warp_by_flow(&img, &flow).unwrap());
        });
    }
}

fn matmul(c: &mut Criterion) {
    for n in [64, 256] {
        let a = Tensor::from_fn(&[n, n], |i| (i as f64 * 0.37).sin());
        let b = Tensor::from_fn(&[n, n], |i| (i as f64 * 0.11).cos());
        modes(c, "matmul", n, &|| {
            black_box(a.matmul(&b).unwrap());
        });
    }
}

fn finite_differences(c: &mut Criterion) {
    let x = Tensor::from_fn(&[12, 12, 2], |i| (i as f64 * 0.3).sin());
    let img = image(12, 12);
    modes(c, "gradcheck_warp", x.len(), &|| {
        let coords = x.map(|v| 5.5 + 4.0 * v);
        let r = gradcheck(
            |t, v| Ok(vton::geometry::warp_var(t.constant(img.clone()), v)?.sum()),
            &coords,
            None,
        );
        black_box(r.unwrap());
    });
}

criterion_group!(
    name = parallel;
    config = Criterion::default().sample_size(10);
    targets = warp, matmul, finite_differences
);
criterion_main!(parallel);
