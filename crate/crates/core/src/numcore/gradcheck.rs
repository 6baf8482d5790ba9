//! Central finite-difference gradient checker.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Fixed step; `None` uses `1e-5 × (1 + |x_i|)` per coordinate.
    pub step: Option<f64>,
    /// Restrict the check to these flat coordinates.
    pub coords: Option<Vec<usize>>,
    /// Coordinates whose absolute discrepancy is at most this count as exact.
    /// Keeps cancellation noise on zero-gradient coordinates from reading as
    /// a relative error of 1.
    pub abs_tol: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: None,
            coords: None,
            abs_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Largest analytic gradient magnitude over the checked coordinates.
    pub grad_max_abs: f64,
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&Tape, Var<'_>) -> Result<f64>,
{
    let tape = Tape::new();
    let v = tape.var(x.clone());
    let y = f(&tape, v)?;
    if !y.is_finite() {
        return Err(Error::Evaluation(format!("objective returned {y}")));
    }
    Ok(y)
}

/// Maximum relative error between reverse-mode and central-difference
/// gradients of `f` at `x`.
pub fn gradcheck<F>(f: F, x: &Tensor, step: Option<f64>) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>> + Sync,
{
    let opts = GradcheckOptions {
        step,
        ..Default::default()
    };
    Ok(gradcheck_with(f, x, &opts)?.max_rel_err)
}

pub fn gradcheck_with<F>(f: F, x: &Tensor, opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>> + Sync,
{
    let tape = Tape::new();
    let xv = tape.var(x.clone());
    let y = f(&tape, xv)?;
    if y.value().len() != 1 {
        return Err(Error::contract("gradcheck objective must be scalar"));
    }
    if !y.item().is_finite() {
        return Err(Error::Evaluation(format!(
            "objective returned {}",
            y.item()
        )));
    }
    let analytic = tape.backward(y)?.wrt(xv);

    let coords: Vec<usize> = match &opts.coords {
        Some(c) => c.clone(),
        None => (0..x.len()).collect(),
    };
    let scalar = |t: &Tape, v: Var<'_>| -> Result<f64> { Ok(f(t, v)?.item()) };
    let numeric: Vec<Result<f64>> = par::map_range(coords.len(), |k| {
        let i = coords[k];
        let xi = x.data()[i];
        let h = opts.step.unwrap_or(1e-5 * (1.0 + xi.abs()));
        let mut xp = x.clone();
        xp.data_mut()[i] = xi + h;
        let fp = eval(&scalar, &xp)?;
        xp.data_mut()[i] = xi - h;
        let fm = eval(&scalar, &xp)?;
        Ok((fp - fm) / (2.0 * h))
    });

    let grad_max_abs = coords
        .iter()
        .map(|&i| analytic.data()[i].abs())
        .fold(0.0, f64::max);
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst_coord: coords.first().copied().unwrap_or(0),
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
        grad_max_abs,
    };
    for (k, n) in numeric.into_iter().enumerate() {
        let n = n?;
        let i = coords[k];
        let a = analytic.data()[i];
        let diff = (a - n).abs();
        let err = if diff <= opts.abs_tol {
            0.0
        } else {
            diff / (a.abs() + n.abs() + 1e-12)
        };
        if err > report.max_rel_err {
            report = GradcheckReport {
                max_rel_err: err,
                worst_coord: i,
                analytic: a,
                numeric: n,
                checked: coords.len(),
                grad_max_abs,
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_exact_gradient() {
        let x = Tensor::vector(&[0.3, -2.0, 7.5]);
        let err = gradcheck(|_, v| Ok(v.sum()), &x, None).unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let x = Tensor::vector(&[-1.0]);
        let r = gradcheck(|_, v| Ok(v.sqrt().sum()), &x, None);
        assert!(matches!(r, Err(Error::Evaluation(_))));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at exactly the kink: one-sided analytic (0) vs central (0.5)
        let x = Tensor::vector(&[0.0]);
        let err = gradcheck(|_, v| Ok(v.relu().sum()), &x, Some(1e-3)).unwrap();
        assert!(err > 0.5);
    }
}
