use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numcore::nn::pointwise;
use crate::numcore::{BoundParams, Tensor, Var};

use super::patches::{fit_patch, PatchSet};
use super::MpdtConfig;

/// The five 1×1 projections feeding one block.
#[derive(Clone, Copy)]
pub struct StreamEmbeddings<'t> {
    pub q: Var<'t>,
    pub kc: Var<'t>,
    pub vc: Var<'t>,
    pub ka: Var<'t>,
    pub va: Var<'t>,
}

impl<'t> StreamEmbeddings<'t> {
    fn check(&self) -> Result<Vec<usize>> {
        let s = self.q.shape();
        for v in [self.kc, self.vc, self.ka, self.va] {
            if v.shape() != s {
                return Err(Error::dim("stream_embeddings", &s, &v.shape()));
            }
        }
        if s.len() != 4 {
            return Err(Error::dim("stream_embeddings", &s, &[0, 0, 0, 0]));
        }
        Ok(s)
    }
}

/// Projections of block `block`: the query from the running state, keys and
/// values from the clothes and agnostic features.
pub fn embed<'t>(
    params: &BoundParams<'t>,
    block: usize,
    state: Var<'t>,
    clothes: Var<'t>,
    agnostic: Var<'t>,
) -> Result<StreamEmbeddings<'t>> {
    let proj = |name: &str, x: Var<'t>| -> Result<Var<'t>> {
        pointwise(
            x,
            params.get(&format!("block{block}.{name}.w"))?,
            params.get(&format!("block{block}.{name}.b"))?,
        )
    };
    Ok(StreamEmbeddings {
        q: proj("q", state)?,
        kc: proj("kc", clothes)?,
        vc: proj("vc", clothes)?,
        ka: proj("ka", agnostic)?,
        va: proj("va", agnostic)?,
    })
}

/// Scaled dot-product attention between patch matrices (N×D). With `valid`,
/// keys outside it get weight exactly 0. Returns (weights N×N, output N×D).
pub fn patch_attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    valid: Option<Rc<Vec<bool>>>,
) -> Result<(Var<'t>, Var<'t>)> {
    let d = q.shape()[1];
    let scores = q.matmul(k.transpose()?)?.scale(1.0 / (d as f64).sqrt());
    let weights = match valid {
        Some(m) => scores.masked_softmax(m)?,
        None => scores.softmax(),
    };
    Ok((weights, weights.matmul(v)?))
}

/// Per-head patch sizes for an h×w feature map.
pub fn head_patches(cfg: &MpdtConfig, h: usize, w: usize) -> Vec<(usize, usize)> {
    (0..cfg.heads)
        .map(|i| {
            let (r1, r2) = cfg.patch_sizes[i % cfg.patch_sizes.len()];
            (fit_patch(r1, h), fit_patch(r2, w))
        })
        .collect()
}

/// Dual-stream attention of one block, without the residual.
///
/// `mask_c` is T×h×w at feature resolution. Returns `o = (Att^C ⊕ Att^A)W1 + b1`.
pub fn dual_stream_attention<'t>(
    e: &StreamEmbeddings<'t>,
    mask_c: &Tensor,
    cfg: &MpdtConfig,
    w1: Var<'t>,
    b1: Var<'t>,
) -> Result<Var<'t>> {
    let s = e.check()?;
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    if c % cfg.heads != 0 {
        return Err(Error::Config(format!(
            "{c} channels do not split into {} heads",
            cfg.heads
        )));
    }
    let cn = c / cfg.heads;
    let tape = e.q.tape();
    let mut att_c = Vec::with_capacity(cfg.heads);
    let mut att_a = Vec::with_capacity(cfg.heads);
    for (head, r) in head_patches(cfg, h, w).into_iter().enumerate() {
        let ps = PatchSet::new((t, h, w), r, head * cn, cn, c)?;
        let valid = Rc::new(ps.valid_patches(mask_c, cfg.mask_threshold)?);
        let q = ps.split(e.q)?;
        let (_, oc) = patch_attention(q, ps.split(e.kc)?, ps.split(e.vc)?, Some(valid))?;
        let (_, oa) = patch_attention(q, ps.split(e.ka)?, ps.split(e.va)?, None)?;
        att_c.push(ps.merge(oc)?);
        att_a.push(ps.merge(oa)?);
    }
    let ac = tape.concat(&att_c, 3)?;
    let aa = tape.concat(&att_a, 3)?;
    pointwise(tape.concat(&[ac, aa], 3)?, w1, b1)
}

/// Max-pools a T×H×W mask by an integer factor.
pub fn pool_mask(mask: &Tensor, factor: usize) -> Result<Tensor> {
    let s = mask.shape();
    if s.len() != 3 || factor == 0 || !s[1].is_multiple_of(factor) || !s[2].is_multiple_of(factor) {
        return Err(Error::dim("pool_mask", s, &[factor]));
    }
    let (t, h, w) = (s[0], s[1] / factor, s[2] / factor);
    Ok(Tensor::from_fn(&[t, h, w], |i| {
        let (f, y, x) = (i / (h * w), (i / w) % h, i % w);
        let mut m = f64::NEG_INFINITY;
        for dy in 0..factor {
            for dx in 0..factor {
                m = m.max(mask.at(&[f, y * factor + dy, x * factor + dx]));
            }
        }
        m
    }))
}
