//! Shared numeric kernels used by both the tape and value-level APIs.

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par;

/// Bilinear corner weights for one sample point. Corners are
/// (x0,y0), (x0+1,y0), (x0,y0+1), (x0+1,y0+1); `None` marks a corner outside
/// the image.
#[derive(Clone, Copy)]
struct Footprint {
    idx: [Option<usize>; 4],
    fx: f64,
    fy: f64,
}

impl Footprint {
    fn new(x: f64, y: f64, h: usize, w: usize) -> Self {
        if !x.is_finite() || !y.is_finite() {
            return Footprint {
                idx: [None; 4],
                fx: 0.0,
                fy: 0.0,
            };
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let at = |xi: i64, yi: i64| {
            if xi >= 0 && yi >= 0 && (xi as usize) < w && (yi as usize) < h {
                Some(yi as usize * w + xi as usize)
            } else {
                None
            }
        };
        Footprint {
            idx: [
                at(x0, y0),
                at(x0 + 1, y0),
                at(x0, y0 + 1),
                at(x0 + 1, y0 + 1),
            ],
            fx,
            fy,
        }
    }

    fn weights(&self) -> [f64; 4] {
        let (fx, fy) = (self.fx, self.fy);
        [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ]
    }
}

fn check_shapes(img: &[usize], coords: &[usize]) -> Result<()> {
    if img.len() != 3 || coords.len() != 3 || coords[2] != 2 {
        return Err(Error::dim("bilinear_sample", img, coords));
    }
    Ok(())
}

pub(crate) fn bilinear_forward(img: &Tensor, coords: &Tensor) -> Result<Tensor> {
    check_shapes(img.shape(), coords.shape())?;
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (ho, wo) = (coords.shape()[0], coords.shape()[1]);
    let src = img.data();
    let cd = coords.data();
    let mut out = vec![0.0; ho * wo * c];
    par::for_each_chunk(&mut out, c, |p, px| {
        let fp = Footprint::new(cd[2 * p], cd[2 * p + 1], h, w);
        let wts = fp.weights();
        for (corner, wt) in fp.idx.iter().zip(wts) {
            if let Some(s) = corner {
                for (o, v) in px.iter_mut().zip(&src[s * c..(s + 1) * c]) {
                    *o += wt * v;
                }
            }
        }
    });
    Tensor::new(vec![ho, wo, c], out)
}

pub(crate) fn bilinear_backward_img(
    img_shape: &[usize],
    coords: &Tensor,
    g: &Tensor,
    gi: &mut [f64],
) {
    let (h, w, c) = (img_shape[0], img_shape[1], img_shape[2]);
    let cd = coords.data();
    let n = coords.shape()[0] * coords.shape()[1];
    for p in 0..n {
        let fp = Footprint::new(cd[2 * p], cd[2 * p + 1], h, w);
        let wts = fp.weights();
        let gp = &g.data()[p * c..(p + 1) * c];
        for (corner, wt) in fp.idx.iter().zip(wts) {
            if let Some(s) = corner {
                for (o, gv) in gi[s * c..(s + 1) * c].iter_mut().zip(gp) {
                    *o += wt * gv;
                }
            }
        }
    }
}

pub(crate) fn bilinear_backward_coords(img: &Tensor, coords: &Tensor, g: &Tensor) -> Tensor {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let src = img.data();
    let cd = coords.data();
    let gd = g.data();
    let mut out = vec![0.0; coords.len()];
    par::for_each_chunk(&mut out, 2, |p, o| {
        let fp = Footprint::new(cd[2 * p], cd[2 * p + 1], h, w);
        let (fx, fy) = (fp.fx, fp.fy);
        let (mut dx, mut dy) = (0.0, 0.0);
        for ch in 0..c {
            let val = |k: usize| fp.idx[k].map_or(0.0, |s| src[s * c + ch]);
            let (v00, v10, v01, v11) = (val(0), val(1), val(2), val(3));
            let gv = gd[p * c + ch];
            dx += gv * ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01));
            dy += gv * ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10));
        }
        o[0] = dx;
        o[1] = dy;
    });
    Tensor::new(coords.shape().to_vec(), out).unwrap()
}

pub(crate) fn softmax_rows(x: &Tensor, valid: Option<&[bool]>) -> Tensor {
    let n = *x.shape().last().unwrap_or(&1);
    let mut out = x.data().to_vec();
    par::for_each_chunk(&mut out, n, |_, row| {
        let ok = |j: usize| valid.is_none_or(|m| m[j]);
        let mut mx = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if ok(j) {
                mx = mx.max(v);
            }
        }
        if mx == f64::NEG_INFINITY {
            row.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let mut s = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if ok(j) {
                *v = (*v - mx).exp();
                s += *v;
            } else {
                *v = 0.0;
            }
        }
        row.iter_mut().for_each(|v| *v /= s);
    });
    Tensor::new(x.shape().to_vec(), out).unwrap()
}
