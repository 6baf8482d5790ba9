//! Warp objectives and the gradient-descent fitters that minimise them.
//!
//! Two stages: a TPS deformation regularised by the control-grid
//! second-order difference constraint (sdc), then a dense flow pyramid
//! regularised by a Charbonnier penalty on second differences (sec).

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{identity_flow, warp_var, FlowField, TpsBasis, TpsParams};
use crate::numcore::{Tape, Tensor, Var};
use crate::objectives::{adam_step, AdamConfig, AdamState};

/// Slope denominators below this switch the pair to the swapped axis.
pub const SLOPE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpLossConfig {
    pub lambda_sdc: f64,
    pub lambda_sec: f64,
    pub charbonnier_alpha: f64,
    pub charbonnier_eps: f64,
    pub flow_scales: usize,
}

impl Default for WarpLossConfig {
    fn default() -> Self {
        Self {
            lambda_sdc: 0.04,
            lambda_sec: 20.0,
            charbonnier_alpha: 0.45,
            charbonnier_eps: 1e-3,
            flow_scales: 3,
        }
    }
}

impl WarpLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_sdc >= 0.0 && self.lambda_sec >= 0.0) {
            return Err(Error::Config(
                "warp loss weights must be non-negative".into(),
            ));
        }
        if !(self.charbonnier_alpha > 0.0 && self.charbonnier_alpha <= 1.0) {
            return Err(Error::Config("charbonnier_alpha must lie in (0, 1]".into()));
        }
        if !(self.charbonnier_eps > 0.0) {
            return Err(Error::Config("charbonnier_eps must be positive".into()));
        }
        if self.flow_scales == 0 {
            return Err(Error::Config("flow_scales must be at least 1".into()));
        }
        Ok(())
    }

    /// Generalized Charbonnier penalty (x² + ε²)^α.
    pub fn charbonnier(&self, x: f64) -> f64 {
        (x * x + self.charbonnier_eps * self.charbonnier_eps).powf(self.charbonnier_alpha)
    }
}

// ---------------------------------------------------------------------------
// sdc

/// Differentiable sdc on displaced control points (rows×cols×2).
pub fn sdc_loss_var(positions: Var<'_>) -> Result<Var<'_>> {
    let s = positions.shape();
    if s.len() != 3 || s[2] != 2 {
        return Err(Error::dim("sdc_loss", &s, &[0, 0, 2]));
    }
    let (rows, cols) = (s[0], s[1]);
    if rows < 3 || cols < 3 {
        return Err(Error::contract(format!(
            "sdc_loss needs a grid of at least 3×3, got {rows}×{cols}"
        )));
    }
    let val = positions.value();
    let v = val.data();
    let at = |r: usize, c: usize, k: usize| ((r * cols) + c) * 2 + k;

    // Distance pairs (p, qa, qb), per interior point: vertical then horizontal.
    let mut p_idx = [Vec::new(), Vec::new()];
    let mut a_idx = [Vec::new(), Vec::new()];
    let mut b_idx = [Vec::new(), Vec::new()];
    // Slope operands: numerator and denominator components per pair.
    let mut sl: [Vec<usize>; 6] = Default::default();
    for r in 1..rows - 1 {
        for c in 1..cols - 1 {
            let pairs = [
                ((r - 1, c), (r + 1, c), 0usize, 1usize),
                ((r, c - 1), (r, c + 1), 1, 0),
            ];
            for (qa, qb, mut num, mut den) in pairs {
                for k in 0..2 {
                    p_idx[k].push(at(r, c, k));
                    a_idx[k].push(at(qa.0, qa.1, k));
                    b_idx[k].push(at(qb.0, qb.1, k));
                }
                let da = v[at(qa.0, qa.1, den)] - v[at(r, c, den)];
                let db = v[at(qb.0, qb.1, den)] - v[at(r, c, den)];
                if da.abs() < SLOPE_EPS || db.abs() < SLOPE_EPS {
                    std::mem::swap(&mut num, &mut den);
                }
                sl[0].push(at(r, c, num));
                sl[1].push(at(r, c, den));
                sl[2].push(at(qa.0, qa.1, num));
                sl[3].push(at(qa.0, qa.1, den));
                sl[4].push(at(qb.0, qb.1, num));
                sl[5].push(at(qb.0, qb.1, den));
            }
        }
    }
    let m = p_idx[0].len();
    let g = |idx: Vec<usize>| positions.gather(Rc::new(idx), &[m]);

    let dist = |q: &[Vec<usize>; 2]| -> Result<Var<'_>> {
        let dx = g(q[0].clone())?.sub(g(p_idx[0].clone())?)?;
        let dy = g(q[1].clone())?.sub(g(p_idx[1].clone())?)?;
        Ok(dx.mul(dx)?.add(dy.mul(dy)?)?.sqrt())
    };
    let dist_term = dist(&a_idx)?.sub(dist(&b_idx)?)?.abs().sum();

    let [pn, pd, an, ad, bn, bd] = sl;
    let (pn, pd) = (g(pn)?, g(pd)?);
    let slope_a = g(an)?.sub(pn)?.div(g(ad)?.sub(pd)?)?;
    let slope_b = g(bn)?.sub(pn)?.div(g(bd)?.sub(pd)?)?;
    let slope_term = slope_a.sub(slope_b)?.abs().sum();
    dist_term.add(slope_term)
}

/// Second-order difference constraint of a TPS control grid on an h×w image.
pub fn sdc_loss(params: &TpsParams, h: usize, w: usize) -> Result<f64> {
    let tape = Tape::new();
    let pos = tape.constant(params.positions(h, w)?);
    Ok(sdc_loss_var(pos)?.item())
}

// ---------------------------------------------------------------------------
// sec

const DIRECTIONS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

/// Number of penalised (point, direction, channel) terms on an h×w flow.
pub fn sec_count(h: usize, w: usize) -> usize {
    let (h, w) = (h as isize, w as isize);
    let mut n = 0;
    for (dx, dy) in DIRECTIONS {
        let nx = (w - 2 * dx.abs()).max(0);
        let ny = (h - 2 * dy.abs()).max(0);
        n += nx * ny;
    }
    2 * n as usize
}

/// Differentiable sec term for one flow (H×W×2 coordinates).
pub fn sec_loss_var<'t>(flow: Var<'t>, cfg: &WarpLossConfig) -> Result<Var<'t>> {
    let s = flow.shape();
    if s.len() != 3 || s[2] != 2 {
        return Err(Error::dim("sec_loss", &s, &[0, 0, 2]));
    }
    let (h, w) = (s[0] as isize, s[1] as isize);
    if h < 3 || w < 3 {
        return Err(Error::contract(format!(
            "sec_loss needs flows of at least 3×3, got {h}×{w}"
        )));
    }
    let mut prev = Vec::new();
    let mut next = Vec::new();
    let mut mid = Vec::new();
    for (dx, dy) in DIRECTIONS {
        for y in dy.abs()..h - dy.abs() {
            for x in dx.abs()..w - dx.abs() {
                for k in 0..2 {
                    let o = |xx: isize, yy: isize| ((yy * w + xx) * 2 + k) as usize;
                    prev.push(o(x - dx, y - dy));
                    next.push(o(x + dx, y + dy));
                    mid.push(o(x, y));
                }
            }
        }
    }
    let n = mid.len();
    let d = flow
        .gather(Rc::new(prev), &[n])?
        .add(flow.gather(Rc::new(next), &[n])?)?
        .sub(flow.gather(Rc::new(mid), &[n])?.scale(2.0))?;
    let eps2 = cfg.charbonnier_eps * cfg.charbonnier_eps;
    Ok(d.mul(d)?.offset(eps2).powf(cfg.charbonnier_alpha).sum())
}

/// Second-order smooth constraint summed over a flow pyramid.
pub fn sec_loss(flows: &[FlowField], cfg: &WarpLossConfig) -> Result<f64> {
    let tape = Tape::new();
    let mut total = 0.0;
    for f in flows {
        total += sec_loss_var(tape.constant(f.coords().clone()), cfg)?.item();
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// total losses

fn check_pair(clothes: &Tensor, target: &Tensor) -> Result<()> {
    let (a, b) = (clothes.shape(), target.shape());
    if a != b || a.len() != 3 {
        return Err(Error::dim("warp_loss", a, b));
    }
    Ok(())
}

fn mean_l1<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    Ok(a.sub(b)?.abs().mean())
}

/// TPS objective on tape: data term and total.
pub fn tps_warp_loss_var<'t>(
    basis: &TpsBasis,
    clothes: Var<'t>,
    target: Var<'t>,
    offsets: Var<'t>,
    cfg: &WarpLossConfig,
) -> Result<(Var<'t>, Var<'t>)> {
    let tape = offsets.tape();
    let coords = basis.apply_var(offsets)?;
    let data = mean_l1(warp_var(clothes, coords)?, target)?;
    let pos = tape.constant(basis.lattice().positions()).add(offsets)?;
    let total = data.add(sdc_loss_var(pos)?.scale(cfg.lambda_sdc))?;
    Ok((data, total))
}

pub fn tps_warp_loss(
    clothes: &Tensor,
    target: &Tensor,
    params: &TpsParams,
    cfg: &WarpLossConfig,
) -> Result<f64> {
    check_pair(clothes, target)?;
    let s = clothes.shape();
    let basis = TpsBasis::new(params.lattice(s[0], s[1])?)?;
    let tape = Tape::new();
    let (_, total) = tps_warp_loss_var(
        &basis,
        tape.constant(clothes.clone()),
        tape.constant(target.clone()),
        tape.constant(params.offsets.clone()),
        cfg,
    )?;
    Ok(total.item())
}

/// Flow objective on tape; `flows` are ordered coarse to fine.
pub fn flow_warp_loss_var<'t>(
    clothes: Var<'t>,
    target: Var<'t>,
    flows: &[Var<'t>],
    cfg: &WarpLossConfig,
) -> Result<(Var<'t>, Var<'t>)> {
    let finest = *flows
        .last()
        .ok_or_else(|| Error::contract("flow_warp_loss needs at least one flow"))?;
    let data = mean_l1(warp_var(clothes, finest)?, target)?;
    let mut total = data;
    for &f in flows {
        total = total.add(sec_loss_var(f, cfg)?.scale(cfg.lambda_sec))?;
    }
    Ok((data, total))
}

pub fn flow_warp_loss(
    clothes: &Tensor,
    target: &Tensor,
    flows: &[FlowField],
    cfg: &WarpLossConfig,
) -> Result<f64> {
    check_pair(clothes, target)?;
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = flows
        .iter()
        .map(|f| tape.constant(f.coords().clone()))
        .collect();
    let (_, total) = flow_warp_loss_var(
        tape.constant(clothes.clone()),
        tape.constant(target.clone()),
        &vars,
        cfg,
    )?;
    Ok(total.item())
}

/// Mean-L1 data term of a flow alone.
pub fn flow_data_term(clothes: &Tensor, target: &Tensor, flow: &FlowField) -> Result<f64> {
    check_pair(clothes, target)?;
    let tape = Tape::new();
    let warped = warp_var(
        tape.constant(clothes.clone()),
        tape.constant(flow.coords().clone()),
    )?;
    Ok(mean_l1(warped, tape.constant(target.clone()))?.item())
}

// ---------------------------------------------------------------------------
// fitters

/// Outcome of a fit: best parameters and the loss trace of recorded bests.
#[derive(Clone, Debug)]
pub struct FitReport<P> {
    pub params: P,
    pub loss: f64,
    pub initial_loss: f64,
    pub best_trace: Vec<f64>,
    pub steps: usize,
}

/// Adam over parameter groups, each with its own learning rate. `eval`
/// returns the loss and one gradient per group.
fn adam_fit<F>(
    init: Vec<Tensor>,
    lrs: &[f64],
    steps: usize,
    mut eval: F,
) -> Result<FitReport<Vec<Tensor>>>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    if steps == 0 {
        return Err(Error::contract("fit needs steps ≥ 1"));
    }
    if lrs.len() != init.len() || lrs.iter().any(|&lr| !(lr > 0.0)) {
        return Err(Error::contract(
            "fit needs lr > 0 for every parameter group",
        ));
    }
    let mut states: Vec<AdamState> = lrs
        .iter()
        .map(|&lr| AdamState::new(AdamConfig::with_lr(lr)))
        .collect();
    let mut params = init;
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut initial = f64::NAN;
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let (loss, grads) = eval(&params)?;
        if !loss.is_finite() {
            return Err(Error::Optimization {
                step,
                reason: format!("loss became {loss}"),
            });
        }
        if step == 0 {
            initial = loss;
        }
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, params.clone()));
        }
        trace.push(best.as_ref().unwrap().0);
        if step == steps {
            break;
        }
        for ((p, g), st) in params.iter_mut().zip(grads).zip(states.iter_mut()) {
            adam_step(std::slice::from_mut(p), &[g], st).map_err(|e| match e {
                Error::Optimization { reason, .. } => Error::Optimization { step, reason },
                other => other,
            })?;
        }
    }
    let (loss, p) = best.unwrap();
    Ok(FitReport {
        params: p,
        loss,
        initial_loss: initial,
        best_trace: trace,
        steps,
    })
}

/// Step-size ratio of the per-point residual to the affine part in
/// [`fit_tps_grid`].
pub const TPS_RESIDUAL_LR_SCALE: f64 = 1e-3;

/// Fits TPS offsets on a rows×cols lattice from zero displacement.
///
/// The offsets are `B·a + r`: an affine map `a` (3×2) of the lattice, which
/// leaves sdc at zero, plus a per-point residual `r` stepped
/// `residual_lr_scale` times slower.
#[allow(clippy::too_many_arguments)]
pub fn fit_tps_grid_with(
    clothes: &Tensor,
    target: &Tensor,
    cfg: &WarpLossConfig,
    rows: usize,
    cols: usize,
    steps: usize,
    lr: f64,
    residual_lr_scale: f64,
) -> Result<FitReport<TpsParams>> {
    check_pair(clothes, target)?;
    cfg.validate()?;
    let s = clothes.shape();
    let init = TpsParams::zeros(rows, cols);
    let basis = TpsBasis::new(init.lattice(s[0], s[1])?)?;
    let ab = affine_basis(rows, cols);
    let offsets = |a: &Tensor, r: &Tensor| -> Result<Tensor> {
        ab.matmul(a)?.reshape(&[rows, cols, 2])?.add(r)
    };
    let rep = adam_fit(
        vec![Tensor::zeros(&[3, 2]), init.offsets],
        &[lr, lr * residual_lr_scale],
        steps,
        |p| {
            let tape = Tape::new();
            let (a, r) = (tape.var(p[0].clone()), tape.var(p[1].clone()));
            let o = tape
                .constant(ab.clone())
                .matmul(a)?
                .reshape(&[rows, cols, 2])?
                .add(r)?;
            let (_, total) = tps_warp_loss_var(
                &basis,
                tape.constant(clothes.clone()),
                tape.constant(target.clone()),
                o,
                cfg,
            )?;
            let g = tape.backward(total)?;
            Ok((total.item(), vec![g.wrt(a), g.wrt(r)]))
        },
    )?;
    Ok(FitReport {
        params: TpsParams::from_offsets(offsets(&rep.params[0], &rep.params[1])?)?,
        loss: rep.loss,
        initial_loss: rep.initial_loss,
        best_trace: rep.best_trace,
        steps: rep.steps,
    })
}

pub fn fit_tps_grid(
    clothes: &Tensor,
    target: &Tensor,
    cfg: &WarpLossConfig,
    rows: usize,
    cols: usize,
    steps: usize,
    lr: f64,
) -> Result<FitReport<TpsParams>> {
    fit_tps_grid_with(
        clothes,
        target,
        cfg,
        rows,
        cols,
        steps,
        lr,
        TPS_RESIDUAL_LR_SCALE,
    )
}

/// Default control lattice used by [`fit_tps`].
pub const DEFAULT_GRID: (usize, usize) = (5, 5);

pub fn fit_tps(
    clothes: &Tensor,
    target: &Tensor,
    cfg: &WarpLossConfig,
    steps: usize,
    lr: f64,
) -> Result<TpsParams> {
    Ok(fit_tps_grid(
        clothes,
        target,
        cfg,
        DEFAULT_GRID.0,
        DEFAULT_GRID.1,
        steps,
        lr,
    )?
    .params)
}

/// Box-averages an H×W×C image by an integer factor (partial blocks dropped).
pub fn downsample(img: &Tensor, factor: usize) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 || factor == 0 {
        return Err(Error::dim("downsample", s, &[0, 0, 0]));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (h, w, c) = (s[0] / factor, s[1] / factor, s[2]);
    if h == 0 || w == 0 {
        return Err(Error::contract(format!(
            "downsample by {factor} empties a {}×{} image",
            s[0], s[1]
        )));
    }
    let norm = 1.0 / (factor * factor) as f64;
    Ok(Tensor::from_fn(&[h, w, c], |i| {
        let (y, x, k) = (i / (w * c), (i / c) % w, i % c);
        let mut acc = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                acc += img.at(&[y * factor + dy, x * factor + dx, k]);
            }
        }
        acc * norm
    }))
}

/// Bilinear read of a coordinate field that extrapolates linearly past the
/// border instead of padding with zeros.
fn sample_extrapolated(field: &Tensor, x: f64, y: f64) -> (f64, f64) {
    let s = field.shape();
    let (h, w) = (s[0], s[1]);
    let axis = |v: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let i0 = (v.floor() as isize).clamp(0, n as isize - 2) as usize;
        (i0, i0 + 1, v - i0 as f64)
    };
    let (x0, x1, fx) = axis(x, w);
    let (y0, y1, fy) = axis(y, h);
    let mut out = [0.0; 2];
    for (k, o) in out.iter_mut().enumerate() {
        let a = field.at(&[y0, x0, k]);
        let b = field.at(&[y0, x1, k]);
        let c = field.at(&[y1, x0, k]);
        let d = field.at(&[y1, x1, k]);
        *o = (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy;
    }
    (out[0], out[1])
}

/// Resamples a flow onto a grid whose pixel X sits at fine position
/// `factor·X + (factor−1)/2`, rescaling coordinates into the new grid.
/// Factors below 1 upsample.
pub fn rescale_flow(flow: &FlowField, h: usize, w: usize, factor: f64) -> Result<FlowField> {
    let off = (factor - 1.0) / 2.0;
    let c = flow.coords();
    let mut data = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = sample_extrapolated(c, factor * x as f64 + off, factor * y as f64 + off);
            data.push((sx - off) / factor);
            data.push((sy - off) / factor);
        }
    }
    FlowField::from_flat(h, w, data)
}

/// Per-scale result of [`fit_flow_pyramid`], coarse to fine.
#[derive(Clone, Debug)]
pub struct FlowFit {
    pub pyramid: Vec<FlowField>,
    pub scale_reports: Vec<FitReport<()>>,
}

impl FlowFit {
    pub fn finest(&self) -> &FlowField {
        self.pyramid.last().expect("non-empty pyramid")
    }
}

/// Step-size ratio of the dense residual to the affine part in [`fit_flow`].
pub const RESIDUAL_LR_SCALE: f64 = 1e-5;

/// (h·w)×3 basis [1, x̃, ỹ] with x̃, ỹ spanning [−1, 1].
fn affine_basis(h: usize, w: usize) -> Tensor {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    Tensor::from_fn(&[h * w, 3], |i| {
        let (p, k) = (i / 3, i % 3);
        match k {
            0 => 1.0,
            1 => ((p % w) as f64 - cx) / cx.max(1.0),
            _ => ((p / w) as f64 - cy) / cy.max(1.0),
        }
    })
}

/// Coarse-to-fine flow fit. Each scale starts from the upsampled result of
/// the previous one; the coarsest starts from `init` resampled.
///
/// Per scale the field is `start + B·a + r` with an affine part `a` (3×2,
/// in pixels) and a dense residual `r`. The affine part leaves the
/// second-difference penalty unchanged, so it moves freely; the residual
/// steps `residual_lr_scale` times slower.
pub fn fit_flow_pyramid(
    clothes: &Tensor,
    target: &Tensor,
    cfg: &WarpLossConfig,
    steps: usize,
    lr: f64,
    init: &FlowField,
    residual_lr_scale: f64,
) -> Result<FlowFit> {
    check_pair(clothes, target)?;
    cfg.validate()?;
    let s = clothes.shape();
    let (h, w) = (s[0], s[1]);
    if init.height() != h || init.width() != w {
        return Err(Error::dim(
            "fit_flow",
            &[init.height(), init.width()],
            &[h, w],
        ));
    }
    let mut scales = cfg.flow_scales;
    while scales > 1 && (h >> (scales - 1) < 3 || w >> (scales - 1) < 3) {
        scales -= 1;
    }
    let mut pyramid: Vec<FlowField> = Vec::with_capacity(scales);
    let mut reports = Vec::with_capacity(scales);
    for level in (0..scales).rev() {
        let factor = 1usize << level;
        let (c_s, t_s) = (downsample(clothes, factor)?, downsample(target, factor)?);
        let (hs, ws) = (c_s.shape()[0], c_s.shape()[1]);
        let start = match pyramid.last() {
            None => rescale_flow(init, hs, ws, factor as f64)?,
            Some(coarse) => rescale_flow(coarse, hs, ws, 0.5)?,
        };
        let start = start.into_coords();
        let basis = affine_basis(hs, ws);
        let compose = |a: &Tensor, r: &Tensor| -> Result<Tensor> {
            basis.matmul(a)?.reshape(&[hs, ws, 2])?.add(r)?.add(&start)
        };
        let rep = adam_fit(
            vec![Tensor::zeros(&[3, 2]), Tensor::zeros(&[hs, ws, 2])],
            &[lr, lr * residual_lr_scale],
            steps,
            |p| {
                let tape = Tape::new();
                let (a, r) = (tape.var(p[0].clone()), tape.var(p[1].clone()));
                let f = tape
                    .constant(basis.clone())
                    .matmul(a)?
                    .reshape(&[hs, ws, 2])?
                    .add(r)?
                    .add(tape.constant(start.clone()))?;
                let (_, total) = flow_warp_loss_var(
                    tape.constant(c_s.clone()),
                    tape.constant(t_s.clone()),
                    &[f],
                    cfg,
                )?;
                let g = tape.backward(total)?;
                Ok((total.item(), vec![g.wrt(a), g.wrt(r)]))
            },
        )?;
        pyramid.push(FlowField::new(compose(&rep.params[0], &rep.params[1])?)?);
        reports.push(FitReport {
            params: (),
            loss: rep.loss,
            initial_loss: rep.initial_loss,
            best_trace: rep.best_trace,
            steps: rep.steps,
        });
    }
    Ok(FlowFit {
        pyramid,
        scale_reports: reports,
    })
}

pub fn fit_flow(
    clothes: &Tensor,
    target: &Tensor,
    cfg: &WarpLossConfig,
    steps: usize,
    lr: f64,
    init: &FlowField,
) -> Result<FlowField> {
    Ok(
        fit_flow_pyramid(clothes, target, cfg, steps, lr, init, RESIDUAL_LR_SCALE)?
            .pyramid
            .pop()
            .expect("non-empty pyramid"),
    )
}

/// Identity start for [`fit_flow`].
pub fn identity_init(clothes: &Tensor) -> FlowField {
    let s = clothes.shape();
    identity_flow(s[0], s[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{tps_apply, warp_by_flow};

    fn texture(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[h, w, 1], |i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            0.5 + 0.25 * (0.45 * x).sin() + 0.2 * (0.33 * y + 0.2 * x).cos()
        })
    }

    #[test]
    fn sdc_zero_on_regular_and_translated_grids() {
        assert!(sdc_loss(&TpsParams::zeros(4, 5), 20, 30).unwrap() < 1e-12);
        let v = sdc_loss(&TpsParams::uniform(4, 5, 1.7, -0.4), 20, 30).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn sdc_hand_example() {
        let mut p = TpsParams::zeros(3, 3);
        p.offsets.set(&[1, 1, 1], 1.0);
        let v = sdc_loss(&p, 21, 21).unwrap();
        // |9 − 11| + |√101 − √101| + |0 − 0| + |0.1 − (−0.1)|
        assert!((v - 2.2).abs() < 1e-12, "{v}");
    }

    #[test]
    fn sdc_rejects_small_grid() {
        let tape = Tape::new();
        let r = sdc_loss_var(tape.constant(Tensor::zeros(&[2, 3, 2])));
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn sec_floor_on_affine_flow() {
        let cfg = WarpLossConfig::default();
        let f = FlowField::new(Tensor::from_fn(&[5, 6, 2], |i| {
            let (y, x, k) = ((i / 12) as f64, ((i / 2) % 6) as f64, i % 2);
            if k == 0 {
                1.1 * x - 0.3 * y + 2.0
            } else {
                0.2 * x + 0.9 * y - 1.0
            }
        }))
        .unwrap();
        let v = sec_loss(&[f], &cfg).unwrap();
        let floor = sec_count(5, 6) as f64 * cfg.charbonnier(0.0);
        assert!((v - floor).abs() <= 1e-9 * floor);
        let id = sec_loss(&[identity_flow(5, 6)], &cfg).unwrap();
        assert!((id - floor).abs() <= 1e-12 * floor);
    }

    #[test]
    fn tps_loss_zero_on_identity() {
        let c = texture(12, 14);
        let v = tps_warp_loss(&c, &c, &TpsParams::zeros(3, 3), &WarpLossConfig::default()).unwrap();
        assert!(v < 1e-12, "{v}");
    }

    #[test]
    fn flow_loss_identity_is_constraint_floor() {
        let c = texture(12, 14);
        let cfg = WarpLossConfig::default();
        let v = flow_warp_loss(&c, &c, &[identity_flow(12, 14)], &cfg).unwrap();
        let floor = sec_count(12, 14) as f64 * cfg.charbonnier(0.0) * cfg.lambda_sec;
        assert!((v - floor).abs() < 1e-9 * floor);
    }

    #[test]
    fn translated_tps_has_zero_sdc_and_small_interior_error() {
        let (h, w) = (16, 20);
        let c = texture(h, w);
        let p = TpsParams::uniform(3, 3, 2.0, 1.0);
        let flow = tps_apply(&p, h, w).unwrap();
        let target = warp_by_flow(&c, &flow).unwrap();
        assert!(sdc_loss(&p, h, w).unwrap() < 1e-12);
        let warped = warp_by_flow(&c, &flow).unwrap();
        assert!(warped.max_abs_diff(&target) < 1e-12);
    }

    #[test]
    fn fit_tps_on_identical_pair_stays_near_zero() {
        let c = texture(16, 16);
        let rep = fit_tps_grid(&c, &c, &WarpLossConfig::default(), 3, 3, 20, 0.05).unwrap();
        assert!(rep.loss <= 1e-3);
        assert!(rep.best_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rescale_round_trip_is_identity_for_affine() {
        let f = identity_flow(8, 10);
        let coarse = rescale_flow(&f, 4, 5, 2.0).unwrap();
        let id = identity_flow(4, 5);
        assert!(coarse.coords().max_abs_diff(id.coords()) < 1e-12);
        let fine = rescale_flow(&coarse, 8, 10, 0.5).unwrap();
        assert!(fine.coords().max_abs_diff(f.coords()) < 1e-12);
    }

    #[test]
    fn zero_step_fit_is_rejected() {
        let c = texture(8, 8);
        let r = fit_tps(&c, &c, &WarpLossConfig::default(), 0, 0.1);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn fit_flow_recovers_translation() {
        let (h, w) = (48, 64);
        let blob = |x: f64, y: f64| {
            let r2 = ((x - 30.0) / 16.0).powi(2) + ((y - 24.0) / 14.0).powi(2);
            if r2 < 1.0 {
                (1.0 - r2) * (0.6 + 0.3 * (0.5 * x).sin() * (0.4 * y).cos())
            } else {
                0.0
            }
        };
        let clothes = Tensor::from_fn(&[h, w, 1], |i| blob((i % w) as f64 - 3.0, (i / w) as f64));
        let target = Tensor::from_fn(&[h, w, 1], |i| blob((i % w) as f64, (i / w) as f64));
        let init = identity_flow(h, w);
        let cfg = WarpLossConfig::default();
        let d0 = flow_data_term(&clothes, &target, &init).unwrap();
        let fit = fit_flow(&clothes, &target, &cfg, 100, 0.05, &init).unwrap();
        let d1 = flow_data_term(&clothes, &target, &fit).unwrap();
        assert!(d1 <= 0.05 * d0, "data term {d0} -> {d1}");
    }
}
