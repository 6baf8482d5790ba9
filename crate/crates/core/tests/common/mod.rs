//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use vton::numcore::Tensor;

/// Largest absolute difference over the largest reference magnitude.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    got.iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// One stream of patch attention for one head, by nested loops.
#[allow(clippy::too_many_arguments)]
fn head_stream(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    valid: Option<&[bool]>,
    r: (usize, usize),
    c0: usize,
    cn: usize,
    out: &mut [f64],
    out_c0: usize,
    out_c: usize,
) {
    let s = q.shape();
    let (t, h, w) = (s[0], s[1], s[2]);
    let (r1, r2) = r;
    let patches: Vec<(usize, usize, usize)> = (0..t)
        .flat_map(|f| {
            (0..h / r1).flat_map(move |py| (0..w / r2).map(move |px| (f, py * r1, px * r2)))
        })
        .collect();
    let d = (r1 * r2 * cn) as f64;
    for &(tq, yq, xq) in &patches {
        let mut scores = vec![f64::NEG_INFINITY; patches.len()];
        for (j, &(tk, yk, xk)) in patches.iter().enumerate() {
            if valid.is_some_and(|m| !m[j]) {
                continue;
            }
            let mut acc = 0.0;
            for dy in 0..r1 {
                for dx in 0..r2 {
                    for ch in 0..cn {
                        acc += q.at(&[tq, yq + dy, xq + dx, c0 + ch])
                            * k.at(&[tk, yk + dy, xk + dx, c0 + ch]);
                    }
                }
            }
            scores[j] = acc / d.sqrt();
        }
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = if top == f64::NEG_INFINITY {
            vec![0.0; patches.len()]
        } else {
            let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        };
        for dy in 0..r1 {
            for dx in 0..r2 {
                for ch in 0..cn {
                    let mut acc = 0.0;
                    for (j, &(tk, yk, xk)) in patches.iter().enumerate() {
                        acc += weights[j] * v.at(&[tk, yk + dy, xk + dx, c0 + ch]);
                    }
                    let pix = (tq * h + yq + dy) * w + xq + dx;
                    out[pix * out_c + out_c0 + c0 + ch] = acc;
                }
            }
        }
    }
}

/// Dual-stream attention followed by the output projection. `patch_sizes`
/// has one entry per head; `mask` is T×h×w.
#[allow(clippy::too_many_arguments)]
pub fn dual_stream_oracle(
    q: &Tensor,
    kc: &Tensor,
    vc: &Tensor,
    ka: &Tensor,
    va: &Tensor,
    mask: &Tensor,
    threshold: f64,
    patch_sizes: &[(usize, usize)],
    w1: &Tensor,
    b1: &Tensor,
) -> Tensor {
    let s = q.shape().to_vec();
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    let heads = patch_sizes.len();
    let cn = c / heads;
    let mut cat = vec![0.0; t * h * w * 2 * c];
    for (i, &(r1, r2)) in patch_sizes.iter().enumerate() {
        assert!(h % r1 == 0 && w % r2 == 0);
        let mut valid = Vec::new();
        for f in 0..t {
            for py in 0..h / r1 {
                for px in 0..w / r2 {
                    let mut any = false;
                    for dy in 0..r1 {
                        for dx in 0..r2 {
                            any |= mask.at(&[f, py * r1 + dy, px * r2 + dx]) > threshold;
                        }
                    }
                    valid.push(any);
                }
            }
        }
        head_stream(
            q,
            kc,
            vc,
            Some(&valid),
            (r1, r2),
            i * cn,
            cn,
            &mut cat,
            0,
            2 * c,
        );
        head_stream(q, ka, va, None, (r1, r2), i * cn, cn, &mut cat, c, 2 * c);
    }
    let out_c = w1.shape()[1];
    let mut out = vec![0.0; t * h * w * out_c];
    for p in 0..t * h * w {
        for o in 0..out_c {
            let mut acc = b1.data()[o];
            for i in 0..2 * c {
                acc += cat[p * 2 * c + i] * w1.at(&[i, o]);
            }
            out[p * out_c + o] = acc;
        }
    }
    Tensor::new(vec![t, h, w, out_c], out).unwrap()
}

/// Ridge smoothing through the D×D system `(XXᵀ + μI) y = XXᵀ f`, the
/// push-through form of `X(XᵀX + μI)⁻¹Xᵀ f`.
pub fn ridge_dense(columns: &[Vec<f64>], f: &[f64], mu: f64) -> Vec<f64> {
    let d = f.len();
    let x = DMatrix::from_fn(d, columns.len(), |i, j| columns[j][i]);
    let xxt = &x * x.transpose();
    let a = &xxt + DMatrix::identity(d, d) * mu;
    let rhs = &xxt * DVector::from_column_slice(f);
    a.lu()
        .solve(&rhs)
        .expect("regularized system is nonsingular")
        .as_slice()
        .to_vec()
}

/// Published method constants, paired with the configured value.
pub fn published_constants(cfg: &vton::pipeline::Config) -> Vec<(&'static str, f64, f64)> {
    vec![
        ("track.epsilon", 0.05, cfg.track.epsilon),
        ("track.window_n", 3.0, cfg.track.window_n as f64),
        ("warp.lambda_sdc", 0.04, cfg.warp.lambda_sdc),
        ("warp.lambda_sec", 20.0, cfg.warp.lambda_sec),
        ("loss.lambda1", 1.0, cfg.loss.lambda1),
        ("loss.lambda2", 10.0, cfg.loss.lambda2),
        ("loss.lambda3", 1.0, cfg.loss.lambda3),
        ("loss.lambda4", 0.01, cfg.loss.lambda4),
        ("adam.beta1", 0.5, cfg.adam.beta1),
        ("adam.beta2", 0.999, cfg.adam.beta2),
        ("adam.lr", 2e-4, cfg.adam.lr),
        ("mpdt.channels", 256.0, cfg.mpdt.channels as f64),
        ("mpdt.blocks", 8.0, cfg.mpdt.blocks as f64),
        ("mpdt_tiny.channels", 96.0, cfg.mpdt_tiny.channels as f64),
        ("mpdt_tiny.blocks", 6.0, cfg.mpdt_tiny.blocks as f64),
    ]
}

pub const GOLDEN_CONFIG: &str = include_str!("../golden/config.toml");
