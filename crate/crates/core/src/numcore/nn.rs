//! Convolution-style layers expressed as gather (im2col) + matmul on the tape,
//! and a named parameter store.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var, GATHER_ZERO};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn out_len(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if n + 2 * pad < k || stride == 0 {
        return Err(Error::contract(format!(
            "kernel {k} does not fit extent {n} with padding {pad}"
        )));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

/// Per-frame 2-D convolution, channels-last.
///
/// `x`: T×H×W×Cin, `w`: (k·k·Cin)×Cout, `b`: Cout.
pub fn conv2d<'t>(
    x: Var<'t>,
    w: Var<'t>,
    b: Var<'t>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Var<'t>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim("conv2d", &s, &[4]));
    }
    let (t, h, wd, cin) = (s[0], s[1], s[2], s[3]);
    let ws = w.shape();
    if ws.len() != 2 || ws[0] != k * k * cin {
        return Err(Error::dim("conv2d", &s, &ws));
    }
    let cout = ws[1];
    let ho = out_len(h, k, stride, pad)?;
    let wo = out_len(wd, k, stride, pad)?;
    let rows = t * ho * wo;
    let cols = k * k * cin;
    let mut idx = Vec::with_capacity(rows * cols);
    for f in 0..t {
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd;
                        for c in 0..cin {
                            idx.push(if inside {
                                ((f * h + iy as usize) * wd + ix as usize) * cin + c
                            } else {
                                GATHER_ZERO
                            });
                        }
                    }
                }
            }
        }
    }
    let cols_v = x.gather(Rc::new(idx), &[rows, cols])?;
    cols_v
        .matmul(w)?
        .add_row_bias(b)?
        .reshape(&[t, ho, wo, cout])
}

/// Spatio-temporal 3-D convolution over a T×H×W×C clip.
///
/// `w`: (kt·k·k·C)×Cout. Temporal and spatial axes use their own stride and
/// padding.
#[allow(clippy::too_many_arguments)]
pub fn conv3d<'t>(
    x: Var<'t>,
    w: Var<'t>,
    b: Var<'t>,
    kt: usize,
    k: usize,
    stride_t: usize,
    stride_s: usize,
    pad_t: usize,
    pad_s: usize,
) -> Result<Var<'t>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim("conv3d", &s, &[4]));
    }
    let (t, h, wd, cin) = (s[0], s[1], s[2], s[3]);
    let ws = w.shape();
    if ws.len() != 2 || ws[0] != kt * k * k * cin {
        return Err(Error::dim("conv3d", &s, &ws));
    }
    let cout = ws[1];
    let to = out_len(t, kt, stride_t, pad_t)?;
    let ho = out_len(h, k, stride_s, pad_s)?;
    let wo = out_len(wd, k, stride_s, pad_s)?;
    let rows = to * ho * wo;
    let cols = kt * k * k * cin;
    let mut idx = Vec::with_capacity(rows * cols);
    for of in 0..to {
        for oy in 0..ho {
            for ox in 0..wo {
                for kf in 0..kt {
                    let f = (of * stride_t + kf) as isize - pad_t as isize;
                    for ky in 0..k {
                        let iy = (oy * stride_s + ky) as isize - pad_s as isize;
                        for kx in 0..k {
                            let ix = (ox * stride_s + kx) as isize - pad_s as isize;
                            let inside = f >= 0
                                && iy >= 0
                                && ix >= 0
                                && (f as usize) < t
                                && (iy as usize) < h
                                && (ix as usize) < wd;
                            for c in 0..cin {
                                idx.push(if inside {
                                    (((f as usize * h) + iy as usize) * wd + ix as usize) * cin + c
                                } else {
                                    GATHER_ZERO
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    x.gather(Rc::new(idx), &[rows, cols])?
        .matmul(w)?
        .add_row_bias(b)?
        .reshape(&[to, ho, wo, cout])
}

/// 1×1 convolution on any tensor whose last axis holds channels.
pub fn pointwise<'t>(x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let s = x.shape();
    let c = *s.last().ok_or_else(|| Error::dim("pointwise", &s, &[]))?;
    let rows = x.value().len() / c;
    let y = x.reshape(&[rows, c])?.matmul(w)?.add_row_bias(b)?;
    let mut out = s.clone();
    *out.last_mut().unwrap() = y.shape()[1];
    y.reshape(&out)
}

/// Nearest-neighbour 2× spatial upsampling of T×H×W×C.
pub fn upsample2x(x: Var<'_>) -> Result<Var<'_>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim("upsample2x", &s, &[4]));
    }
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    let mut idx = Vec::with_capacity(t * 4 * h * w * c);
    for f in 0..t {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                let base = ((f * h + y / 2) * w + xx / 2) * c;
                idx.extend(base..base + c);
            }
        }
    }
    x.gather(Rc::new(idx), &[t, 2 * h, 2 * w, c])
}

/// Repeats a single-channel tensor (…×1) `n` times along the last axis.
pub fn tile_channels(x: Var<'_>, n: usize) -> Result<Var<'_>> {
    let s = x.shape();
    if s.last() != Some(&1) {
        return Err(Error::dim("tile_channels", &s, &[1]));
    }
    let m = x.value().len();
    let idx: Vec<usize> = (0..m).flat_map(|i| std::iter::repeat_n(i, n)).collect();
    let mut out = s.clone();
    *out.last_mut().unwrap() = n;
    x.gather(Rc::new(idx), &out)
}

/// Named tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Registers every tensor on `tape`, as variables or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundParams<'t> {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.var(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        BoundParams { vars }
    }
}

/// A [`ParamStore`] registered on a tape.
pub struct BoundParams<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Overrides one entry, e.g. to differentiate with respect to it alone.
    pub fn replace(&mut self, name: &str, var: Var<'t>) {
        self.vars.insert(name.to_string(), var);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }
}

/// Deterministic initializer: uniform in ±√(1/fan_in).
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        Tensor::from_fn(shape, |_| self.rng.random_range(-bound..bound))
    }

    /// Adds `{name}.w` ((fan_in)×cout) and `{name}.b` (cout) to `store`.
    pub fn layer(&mut self, store: &mut ParamStore, name: &str, fan_in: usize, cout: usize) {
        let w = self.uniform(&[fan_in, cout], fan_in);
        let b = self.uniform(&[cout], fan_in);
        store.insert(format!("{name}.w"), w);
        store.insert(format!("{name}.b"), b);
    }
}
