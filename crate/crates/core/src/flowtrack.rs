//! Temporal smoothing of appearance-flow sequences.
//!
//! Each frame's flow is projected onto the span of the previous `window_n`
//! estimated flows (ridge regression), then averaged with the
//! motion-compensated previous smoothed flow where the two agree.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{norm_scale, sample, FlowField};
use crate::numcore::{linalg, Tensor};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub window_n: usize,
    pub mu: f64,
    /// Threshold on the per-pixel L2 distance in normalized coordinates.
    pub epsilon: f64,
    /// Use the literal `X(XᵀX − μI)Xᵀf` map instead of the ridge projection.
    pub printed_formula: bool,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            window_n: 3,
            mu: 0.1,
            epsilon: 0.05,
            printed_formula: false,
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_n == 0 {
            return Err(Error::Config("window_n must be at least 1".into()));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::Config("mu must be non-negative".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// The last `capacity` flattened flows, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowWindow {
    capacity: usize,
    history: VecDeque<Vec<f64>>,
}

impl FlowWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            history: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let mut w = Self::new(columns.len());
        for c in columns {
            w.push(c)?;
        }
        Ok(w)
    }

    pub fn push(&mut self, v: Vec<f64>) -> Result<()> {
        if let Some(first) = self.history.front() {
            if first.len() != v.len() {
                return Err(Error::dim("flow_window", &[first.len()], &[v.len()]));
            }
        }
        self.history.push_back(v);
        if self.history.len() > self.capacity {
            self.history.pop_front();
        }
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        self.capacity > 0 && self.history.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn columns(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.history.iter()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ridge projection `X(XᵀX + μI)⁻¹Xᵀf` through the N×N Gram system. At
/// μ = 0 the inverse is a pseudo-inverse.
pub fn ridge_smooth(f: &[f64], window: &FlowWindow, mu: f64) -> Result<Vec<f64>> {
    smooth_impl(f, window, mu, false)
}

/// The literal map `X(XᵀX − μI)Xᵀf`; kept for comparison only.
pub fn printed_smooth(f: &[f64], window: &FlowWindow, mu: f64) -> Result<Vec<f64>> {
    smooth_impl(f, window, mu, true)
}

fn smooth_impl(f: &[f64], window: &FlowWindow, mu: f64, printed: bool) -> Result<Vec<f64>> {
    if !window.is_full() {
        return Err(Error::contract(format!(
            "ridge_smooth needs a full window ({} of {})",
            window.len(),
            window.capacity
        )));
    }
    if !(mu >= 0.0) {
        return Err(Error::contract("ridge_smooth needs mu ≥ 0"));
    }
    if f.iter().any(|v| !v.is_finite()) || window.columns().flatten().any(|v| !v.is_finite()) {
        return Err(Error::contract("ridge_smooth input is not finite"));
    }
    let cols: Vec<&Vec<f64>> = window.columns().collect();
    let n = cols.len();
    if cols[0].len() != f.len() {
        return Err(Error::dim("ridge_smooth", &[cols[0].len()], &[f.len()]));
    }
    let gram = Tensor::from_fn(&[n, n], |i| dot(cols[i / n], cols[i % n]));
    let rhs = Tensor::new(vec![n, 1], cols.iter().map(|c| dot(c, f)).collect())?;
    let coef = if printed {
        gram.sub(&Tensor::eye(n).scale(mu))?.matmul(&rhs)?
    } else if mu > 0.0 {
        linalg::solve(&gram.add(&Tensor::eye(n).scale(mu))?, &rhs)?
    } else {
        let (vals, _) = linalg::sym_eigen(&gram)?;
        let top = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let tol = top * n as f64 * 1e-12;
        linalg::sym_apply(&gram, |l| if l > tol { 1.0 / l } else { 0.0 })?.matmul(&rhs)?
    };
    let c = coef.data();
    let out = par::map_range(f.len(), |i| {
        cols.iter().zip(c).map(|(col, ci)| col[i] * ci).sum()
    });
    Ok(out)
}

/// Averages `fhat_t` with the motion-compensated `fhat_prev` at pixels of
/// `omega` where they lie within `epsilon` (normalized L2).
pub fn flow_correct(
    fhat_t: &FlowField,
    fhat_prev: &FlowField,
    optical_flow: &FlowField,
    omega: &Tensor,
    epsilon: f64,
) -> Result<FlowField> {
    let (h, w) = (fhat_t.height(), fhat_t.width());
    for f in [fhat_prev, optical_flow] {
        if f.height() != h || f.width() != w {
            return Err(Error::dim(
                "flow_correct",
                &[h, w],
                &[f.height(), f.width()],
            ));
        }
    }
    if omega.len() != h * w {
        return Err(Error::dim("flow_correct", &[h, w], omega.shape()));
    }
    let warped = sample(fhat_prev.coords(), optical_flow.coords())?;
    let (sx, sy) = norm_scale(h, w);
    let cur = fhat_t.coords().data();
    let prev = warped.data();
    let om = omega.data();
    let mut out = cur.to_vec();
    for p in 0..h * w {
        if om[p] == 0.0 {
            continue;
        }
        let (a, b) = (&cur[2 * p..2 * p + 2], &prev[2 * p..2 * p + 2]);
        let dx = (a[0] - b[0]) / sx;
        let dy = (a[1] - b[1]) / sy;
        if (dx * dx + dy * dy).sqrt() <= epsilon {
            out[2 * p] = 0.5 * (a[0] + b[0]);
            out[2 * p + 1] = 0.5 * (a[1] + b[1]);
        }
    }
    FlowField::from_flat(h, w, out)
}

/// Causal tracking over a sequence; `optical_flows[t]` maps frame t−1 to t.
pub fn track_sequence(
    flows: &[FlowField],
    optical_flows: &[FlowField],
    omegas: &[Tensor],
    cfg: &TrackConfig,
) -> Result<Vec<FlowField>> {
    if omegas.len() != flows.len() {
        return Err(Error::contract(format!(
            "track_sequence: {} flows but {} masks",
            flows.len(),
            omegas.len()
        )));
    }
    track_with(flows, optical_flows, cfg, |t, _| Ok(omegas[t].clone()))
}

/// [`track_sequence`] with `Ω_t` = clothing region of frame t ∩ support of
/// `clothes[t]` warped by the smoothed flow `f̂_t`.
pub fn track_sequence_regions(
    flows: &[FlowField],
    optical_flows: &[FlowField],
    clothing: &[Tensor],
    clothes: &[Tensor],
    cfg: &TrackConfig,
) -> Result<Vec<FlowField>> {
    if clothing.len() != flows.len() || clothes.len() != flows.len() {
        return Err(Error::contract(
            "track_sequence_regions: sequences are not aligned",
        ));
    }
    track_with(flows, optical_flows, cfg, |t, fhat| {
        let s = clothes[t].shape();
        if s.len() != 3 {
            return Err(Error::dim("track_sequence_regions", s, &[0, 0, 0]));
        }
        let c = s[2];
        let d = clothes[t].data();
        let cmask = Tensor::from_fn(&[s[0], s[1], 1], |p| {
            if d[p * c..(p + 1) * c].iter().any(|&v| v != 0.0) {
                1.0
            } else {
                0.0
            }
        });
        let warped = sample(&cmask, fhat.coords())?;
        let (ws, cl) = (warped.data(), clothing[t].data());
        if cl.len() != ws.len() {
            return Err(Error::dim(
                "track_sequence_regions",
                clothing[t].shape(),
                &[s[0], s[1]],
            ));
        }
        Ok(Tensor::from_fn(clothing[t].shape(), |p| {
            if cl[p] != 0.0 && ws[p] > 0.0 {
                1.0
            } else {
                0.0
            }
        }))
    })
}

fn track_with(
    flows: &[FlowField],
    optical_flows: &[FlowField],
    cfg: &TrackConfig,
    omega: impl Fn(usize, &FlowField) -> Result<Tensor>,
) -> Result<Vec<FlowField>> {
    cfg.validate()?;
    if optical_flows.len() != flows.len() {
        return Err(Error::contract(format!(
            "track_sequence: {} flows but {} optical flows",
            flows.len(),
            optical_flows.len()
        )));
    }
    let mut window = FlowWindow::new(cfg.window_n);
    let mut out = Vec::with_capacity(flows.len());
    let mut fhat_prev: Option<FlowField> = None;
    for (t, f) in flows.iter().enumerate() {
        let (h, w) = (f.height(), f.width());
        let norm = f.normalized();
        let (fhat, tracked) = if window.is_full() {
            let s = if cfg.printed_formula {
                printed_smooth(&norm, &window, cfg.mu)?
            } else {
                ridge_smooth(&norm, &window, cfg.mu)?
            };
            let fhat = FlowField::from_normalized(h, w, &s)?;
            let prev = fhat_prev
                .as_ref()
                .expect("previous frame exists once the window is full");
            let tracked = omega(t, &fhat)
                .and_then(|om| flow_correct(&fhat, prev, &optical_flows[t], &om, cfg.epsilon))
                .map_err(|e| e.at_stage("track", t))?;
            (fhat, tracked)
        } else {
            (f.clone(), f.clone())
        };
        window.push(norm)?;
        fhat_prev = Some(fhat);
        out.push(tracked);
    }
    Ok(out)
}

/// Mean absolute difference, over t ≥ 1 and region pixels, between each
/// warped frame and the motion-compensated previous one.
pub fn jitter_metric(
    warped: &[Tensor],
    optical_flows: &[FlowField],
    region: &[Tensor],
) -> Result<f64> {
    if optical_flows.len() != warped.len() || region.len() != warped.len() {
        return Err(Error::contract("jitter_metric: sequences are not aligned"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 1..warped.len() {
        let s = warped[t].shape();
        if s.len() != 3 || warped[t - 1].shape() != s {
            return Err(Error::dim("jitter_metric", s, warped[t - 1].shape()));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        if region[t].len() != h * w {
            return Err(Error::dim("jitter_metric", &[h, w], region[t].shape()));
        }
        let comp = sample(&warped[t - 1], optical_flows[t].coords())?;
        let (a, b, m) = (warped[t].data(), comp.data(), region[t].data());
        for p in 0..h * w {
            if m[p] == 0.0 {
                continue;
            }
            count += c;
            for k in 0..c {
                total += (a[p * c + k] - b[p * c + k]).abs();
            }
        }
    }
    if count == 0 {
        return Err(Error::contract(
            "jitter_metric: region is empty in every frame",
        ));
    }
    Ok(total / count as f64)
}
