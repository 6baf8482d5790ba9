use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numcore::{Tensor, Var};

/// Index maps that cut a channel slice of a T×h×w×C feature map into
/// non-overlapping r1×r2 patches and paste them back.
///
/// Patch n = (t, py, px) in row-major order; within a patch the layout is
/// (dy, dx, channel).
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub r1: usize,
    pub r2: usize,
    /// Channels per patch pixel.
    pub cn: usize,
    split: Rc<Vec<usize>>,
    merge: Rc<Vec<usize>>,
}

impl PatchSet {
    /// Patches over channels `[c0, c0 + cn)` of a tensor with `total`
    /// channels.
    pub fn new(
        dims: (usize, usize, usize),
        r: (usize, usize),
        c0: usize,
        cn: usize,
        total: usize,
    ) -> Result<Self> {
        let (t, h, w) = dims;
        let (r1, r2) = r;
        if r1 == 0 || r2 == 0 || h % r1 != 0 || w % r2 != 0 {
            return Err(Error::dim("patch_set", &[h, w], &[r1, r2]));
        }
        if c0 + cn > total || cn == 0 {
            return Err(Error::dim("patch_set", &[total], &[c0, cn]));
        }
        let (gh, gw) = (h / r1, w / r2);
        let d = r1 * r2 * cn;
        let n = t * gh * gw;
        let mut split = Vec::with_capacity(n * d);
        for ti in 0..t {
            for py in 0..gh {
                for px in 0..gw {
                    for dy in 0..r1 {
                        for dx in 0..r2 {
                            let pix = (ti * h + py * r1 + dy) * w + px * r2 + dx;
                            split.extend((0..cn).map(|c| pix * total + c0 + c));
                        }
                    }
                }
            }
        }
        let mut merge = Vec::with_capacity(n * d);
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    let p = (ti * gh + y / r1) * gw + x / r2;
                    let o = ((y % r1) * r2 + x % r2) * cn;
                    merge.extend((0..cn).map(|c| p * d + o + c));
                }
            }
        }
        Ok(Self {
            frames: t,
            height: h,
            width: w,
            r1,
            r2,
            cn,
            split: Rc::new(split),
            merge: Rc::new(merge),
        })
    }

    pub fn count(&self) -> usize {
        self.frames * (self.height / self.r1) * (self.width / self.r2)
    }

    pub fn dim(&self) -> usize {
        self.r1 * self.r2 * self.cn
    }

    /// (t, y, x) of the top-left pixel of patch `n`.
    pub fn origin(&self, n: usize) -> (usize, usize, usize) {
        let (gh, gw) = (self.height / self.r1, self.width / self.r2);
        (n / (gh * gw), (n / gw) % gh * self.r1, n % gw * self.r2)
    }

    /// N×D patch matrix.
    pub fn split<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.gather(self.split.clone(), &[self.count(), self.dim()])
    }

    /// Inverse of [`PatchSet::split`], giving T×h×w×cn.
    pub fn merge<'t>(&self, p: Var<'t>) -> Result<Var<'t>> {
        p.gather(
            self.merge.clone(),
            &[self.frames, self.height, self.width, self.cn],
        )
    }

    /// Per-patch validity: any covered pixel of `mask` (T×h×w) above
    /// `threshold`.
    pub fn valid_patches(&self, mask: &Tensor, threshold: f64) -> Result<Vec<bool>> {
        let s = mask.shape();
        if s != [self.frames, self.height, self.width] {
            return Err(Error::dim(
                "valid_patches",
                s,
                &[self.frames, self.height, self.width],
            ));
        }
        let m = mask.data();
        Ok((0..self.count())
            .map(|n| {
                let (t, y0, x0) = self.origin(n);
                (0..self.r1).any(|dy| {
                    (0..self.r2)
                        .any(|dx| m[(t * self.height + y0 + dy) * self.width + x0 + dx] > threshold)
                })
            })
            .collect())
    }
}

/// Largest divisor of `n` not exceeding `r` (at least 1).
pub fn fit_patch(r: usize, n: usize) -> usize {
    (1..=r.min(n))
        .rev()
        .find(|&d| n.is_multiple_of(d))
        .unwrap_or(1)
}
