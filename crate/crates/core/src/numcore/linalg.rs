//! Small dense linear algebra: LU solve with partial pivoting and a cyclic
//! Jacobi eigensolver for symmetric matrices.

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn square_dim(a: &Tensor, op: &'static str) -> Result<usize> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::dim(op, a.shape(), &[]));
    }
    Ok(a.shape()[0])
}

/// Solves `A X = B` for square `A` (n×n) and `B` (n×m).
pub fn solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = square_dim(a, "solve")?;
    if b.rank() != 2 || b.shape()[0] != n {
        return Err(Error::dim("solve", a.shape(), b.shape()));
    }
    let m = b.shape()[1];
    let mut lu = a.data().to_vec();
    let mut x = b.data().to_vec();
    let scale = lu
        .iter()
        .fold(0.0f64, |s, v| s.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (piv, pv) = (k..n)
            .map(|r| (r, lu[r * n + k].abs()))
            .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        if pv <= 1e-13 * scale {
            return Err(Error::Solver(format!(
                "singular matrix (pivot {pv:e} at column {k})"
            )));
        }
        if piv != k {
            for j in 0..n {
                lu.swap(k * n + j, piv * n + j);
            }
            for j in 0..m {
                x.swap(k * m + j, piv * m + j);
            }
        }
        let d = lu[k * n + k];
        for r in k + 1..n {
            let f = lu[r * n + k] / d;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                lu[r * n + j] -= f * lu[k * n + j];
            }
            for j in 0..m {
                x[r * m + j] -= f * x[k * m + j];
            }
        }
    }
    for k in (0..n).rev() {
        let d = lu[k * n + k];
        for j in 0..m {
            let mut s = x[k * m + j];
            for c in k + 1..n {
                s -= lu[k * n + c] * x[c * m + j];
            }
            x[k * m + j] = s / d;
        }
    }
    Tensor::new(vec![n, m], x)
}

/// Eigendecomposition of a symmetric matrix. Returns eigenvalues and a
/// matrix whose columns are the matching orthonormal eigenvectors.
pub fn sym_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = square_dim(a, "sym_eigen")?;
    let mut m = a.data().to_vec();
    let mut v = Tensor::eye(n).into_data();
    let frob: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * frob.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| m[i * n + i]).collect();
    Ok((vals, Tensor::new(vec![n, n], v)?))
}

/// `V diag(f(λ)) Vᵀ` for a symmetric matrix.
pub fn sym_apply(a: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    let (vals, vecs) = sym_eigen(a)?;
    let n = vals.len();
    let fv: Vec<f64> = vals.iter().map(|&l| f(l)).collect();
    let vd = vecs.data();
    Ok(Tensor::from_fn(&[n, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        (0..n).map(|k| vd[i * n + k] * fv[k] * vd[j * n + k]).sum()
    }))
}

/// Principal square root of a symmetric PSD matrix, clamping negative
/// eigenvalues to zero.
pub fn sqrtm_psd(a: &Tensor) -> Result<Tensor> {
    sym_apply(a, |l| l.max(0.0).sqrt())
}

/// Largest absolute asymmetry `|a_ij − a_ji|`.
pub fn asymmetry(a: &Tensor) -> f64 {
    let n = a.shape()[0];
    let d = a.data();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((d[i * n + j] - d[j * n + i]).abs());
        }
    }
    worst
}
