use crate::error::{Error, Result};
use crate::numcore::{linalg, Tensor};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..WINDOW * WINDOW)
        .map(|i| {
            let (y, x) = ((i / WINDOW) as f64 - r, (i % WINDOW) as f64 - r);
            (-(x * x + y * y) / (2.0 * SIGMA * SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn grayscale(img: &Tensor) -> Result<(usize, usize, Vec<f64>)> {
    let s = img.shape();
    let (h, w, c) = match s.len() {
        2 => (s[0], s[1], 1),
        3 => (s[0], s[1], s[2]),
        _ => return Err(Error::dim("ssim", s, &[0, 0, 3])),
    };
    let g = img
        .data()
        .chunks(c)
        .map(|p| p.iter().sum::<f64>() / c as f64)
        .collect();
    Ok((h, w, g))
}

/// Mean local SSIM of two H×W×C images in [0, 1] (channel-mean grayscale,
/// 11×11 Gaussian window σ = 1.5, valid positions only).
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("ssim", a.shape(), b.shape()));
    }
    let (h, w, ga) = grayscale(a)?;
    let (_, _, gb) = grayscale(b)?;
    if h < WINDOW || w < WINDOW {
        return Err(Error::contract(format!(
            "ssim needs images of at least {WINDOW}×{WINDOW}, got {h}×{w}"
        )));
    }
    let win = gaussian_window();
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..WINDOW {
                for dx in 0..WINDOW {
                    let k = win[dy * WINDOW + dx];
                    let p = (y + dy) * w + x + dx;
                    let (va, vb) = (ga[p], gb[p]);
                    ma += k * va;
                    mb += k * vb;
                    saa += k * va * va;
                    sbb += k * vb * vb;
                    sab += k * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Frame-averaged [`ssim`] over T×H×W×C sequences.
pub fn ssim_sequence(a: &Tensor, b: &Tensor) -> Result<f64> {
    let s = a.shape();
    if s.len() != 4 || a.shape() != b.shape() {
        return Err(Error::dim("ssim_sequence", a.shape(), b.shape()));
    }
    let frame = s[1] * s[2] * s[3];
    let mut total = 0.0;
    for t in 0..s[0] {
        let fa = Tensor::new(
            s[1..].to_vec(),
            a.data()[t * frame..(t + 1) * frame].to_vec(),
        )?;
        let fb = Tensor::new(
            s[1..].to_vec(),
            b.data()[t * frame..(t + 1) * frame].to_vec(),
        )?;
        total += ssim(&fa, &fb)?;
    }
    Ok(total / s[0] as f64)
}

/// Fréchet distance between Gaussians:
/// `‖m1 − m2‖² + tr(c1 + c2 − 2(c1·c2)^{1/2})`.
///
/// The trace term uses `tr((c1 c2)^{1/2}) = tr((s c2 s)^{1/2})` with
/// `s = c1^{1/2}`, which keeps every square root symmetric.
pub fn frechet_distance(m1: &[f64], c1: &Tensor, m2: &[f64], c2: &Tensor) -> Result<f64> {
    let d = m1.len();
    if m2.len() != d || c1.shape() != [d, d] || c2.shape() != [d, d] {
        return Err(Error::dim("frechet_distance", c1.shape(), c2.shape()));
    }
    for c in [c1, c2] {
        let asym = linalg::asymmetry(c);
        if asym > 1e-8 {
            return Err(Error::contract(format!(
                "frechet_distance: covariance asymmetry {asym:e} exceeds 1e-8"
            )));
        }
    }
    let mean_term: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b) * (a - b)).sum();
    let s1 = linalg::sqrtm_psd(c1)?;
    let m = s1.matmul(c2)?.matmul(&s1)?;
    let m = m.add(&m.transpose()?)?.scale(0.5);
    let root = linalg::sqrtm_psd(&m)?;
    let trace = |t: &Tensor| (0..d).map(|i| t.at(&[i, i])).sum::<f64>();
    Ok((mean_term + trace(c1) + trace(c2) - 2.0 * trace(&root)).max(0.0))
}
