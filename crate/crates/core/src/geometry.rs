//! Sampling grids, bilinear backward warping and thin-plate-spline transforms.
//!
//! A [`FlowField`] stores, for every output pixel, the absolute source
//! coordinate (x, y) to sample from. Warping is always backward: the output
//! at `(x, y)` is the bilinear interpolation of the source at
//! `coords[y][x]`, with zero outside the source image.

use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;
use crate::numcore::{linalg, Tape, Var};
use crate::par;

/// Per-pixel absolute source coordinates, H×W×2 (x then y).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    coords: Tensor,
}

impl FlowField {
    pub fn new(coords: Tensor) -> Result<Self> {
        let s = coords.shape();
        if s.len() != 3 || s[2] != 2 {
            return Err(Error::dim("flow_field", s, &[0, 0, 2]));
        }
        Ok(FlowField { coords })
    }

    pub fn height(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.coords.shape()[1]
    }

    pub fn coords(&self) -> &Tensor {
        &self.coords
    }

    pub fn into_coords(self) -> Tensor {
        self.coords
    }

    /// Source coordinate at output pixel (x, y).
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let o = (y * self.width() + x) * 2;
        let d = self.coords.data();
        (d[o], d[o + 1])
    }

    /// Interleaved x,y vector of length 2·W·H, pixels in row-major order.
    pub fn flatten(&self) -> Vec<f64> {
        self.coords.data().to_vec()
    }

    pub fn from_flat(h: usize, w: usize, v: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::new(vec![h, w, 2], v)?)
    }

    /// Coordinates divided by (W−1, H−1) so the image spans [0, 1] per axis.
    pub fn normalized(&self) -> Vec<f64> {
        let (sx, sy) = norm_scale(self.height(), self.width());
        self.coords
            .data()
            .chunks(2)
            .flat_map(|c| [c[0] / sx, c[1] / sy])
            .collect()
    }

    pub fn from_normalized(h: usize, w: usize, v: &[f64]) -> Result<Self> {
        let (sx, sy) = norm_scale(h, w);
        let data = v.chunks(2).flat_map(|c| [c[0] * sx, c[1] * sy]).collect();
        Self::from_flat(h, w, data)
    }
}

/// Pixel extent used to normalize coordinates to [0, 1].
pub fn norm_scale(h: usize, w: usize) -> (f64, f64) {
    (((w.max(2)) - 1) as f64, ((h.max(2)) - 1) as f64)
}

/// `coords[y][x] = (x, y)`.
pub fn identity_flow(h: usize, w: usize) -> FlowField {
    let mut data = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            data.push(x as f64);
            data.push(y as f64);
        }
    }
    FlowField {
        coords: Tensor::new(vec![h.max(1), w.max(1), 2], data).expect("identity flow shape"),
    }
}

fn check_same_size(img: &Tensor, h: usize, w: usize) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != h || s[1] != w {
        return Err(Error::dim("warp_by_flow", s, &[h, w, 2]));
    }
    Ok(())
}

/// Backward-warps an H×W×C image by a flow of the same spatial size.
pub fn warp_by_flow(img: &Tensor, flow: &FlowField) -> Result<Tensor> {
    check_same_size(img, flow.height(), flow.width())?;
    sample(img, flow.coords())
}

/// Bilinear sampling of `img` at arbitrary coordinates (Ho×Wo×2).
pub fn sample(img: &Tensor, coords: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let out = tape.bilinear_sample(tape.constant(img.clone()), tape.constant(coords.clone()))?;
    Ok((*out.value()).clone())
}

/// Differentiable [`warp_by_flow`] on tape values.
pub fn warp_var<'t>(img: Var<'t>, coords: Var<'t>) -> Result<Var<'t>> {
    let (is, cs) = (img.shape(), coords.shape());
    if is.len() != 3 || cs.len() != 3 || is[0] != cs[0] || is[1] != cs[1] {
        return Err(Error::dim("warp_by_flow", &is, &cs));
    }
    img.tape().bilinear_sample(img, coords)
}

/// Regular control lattice spanning an h×w image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControlLattice {
    pub rows: usize,
    pub cols: usize,
    pub height: usize,
    pub width: usize,
}

impl ControlLattice {
    pub fn new(rows: usize, cols: usize, height: usize, width: usize) -> Result<Self> {
        if rows < 3 || cols < 3 {
            return Err(Error::contract(format!(
                "TPS lattice must be at least 3×3, got {rows}×{cols}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Control point (x, y) at lattice cell (row, col).
    pub fn point(&self, row: usize, col: usize) -> (f64, f64) {
        let sx = (self.width.max(1) - 1) as f64 / (self.cols - 1) as f64;
        let sy = (self.height.max(1) - 1) as f64 / (self.rows - 1) as f64;
        (col as f64 * sx, row as f64 * sy)
    }

    /// Lattice positions as rows×cols×2.
    pub fn positions(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * 2);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (x, y) = self.point(r, c);
                data.push(x);
                data.push(y);
            }
        }
        Tensor::new(vec![self.rows, self.cols, 2], data).unwrap()
    }
}

/// Control-point displacements (pixels) of a TPS deformation.
#[derive(Clone, Debug, PartialEq)]
pub struct TpsParams {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub offsets: Tensor,
}

impl TpsParams {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            grid_rows: rows,
            grid_cols: cols,
            offsets: Tensor::zeros(&[rows.max(1), cols.max(1), 2]),
        }
    }

    /// Every control point displaced by (dx, dy).
    pub fn uniform(rows: usize, cols: usize, dx: f64, dy: f64) -> Self {
        Self {
            grid_rows: rows,
            grid_cols: cols,
            offsets: Tensor::from_fn(&[rows, cols, 2], |i| if i % 2 == 0 { dx } else { dy }),
        }
    }

    pub fn from_offsets(offsets: Tensor) -> Result<Self> {
        let s = offsets.shape();
        if s.len() != 3 || s[2] != 2 {
            return Err(Error::dim("tps_params", s, &[0, 0, 2]));
        }
        Ok(Self {
            grid_rows: s[0],
            grid_cols: s[1],
            offsets,
        })
    }

    pub fn lattice(&self, h: usize, w: usize) -> Result<ControlLattice> {
        ControlLattice::new(self.grid_rows, self.grid_cols, h, w)
    }

    /// Displaced control points, rows×cols×2.
    pub fn positions(&self, h: usize, w: usize) -> Result<Tensor> {
        self.lattice(h, w)?.positions().add(&self.offsets)
    }
}

/// Radial kernel r² log r², with U(0) = 0.
pub fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// Precomputed TPS interpolation for one lattice and output size.
///
/// For a point q, `T(q) = Σ_k β_k(q) · y_k` where y_k are the displaced
/// control points; β is linear in nothing but q, so the dense sampling map is
/// a constant (H·W)×n matrix applied to the control targets.
#[derive(Clone, Debug)]
pub struct TpsBasis {
    lattice: ControlLattice,
    ctrl: Vec<(f64, f64)>,
    /// (n+3)×n: maps targets to [radial weights; affine coefficients].
    solve_map: Tensor,
    /// (H·W)×n sampling matrix.
    dense: Tensor,
}

impl TpsBasis {
    pub fn new(lattice: ControlLattice) -> Result<Self> {
        let n = lattice.len();
        let mut ctrl = Vec::with_capacity(n);
        for r in 0..lattice.rows {
            for c in 0..lattice.cols {
                ctrl.push(lattice.point(r, c));
            }
        }
        let m = n + 3;
        let mut l = Tensor::zeros(&[m, m]);
        for i in 0..n {
            for j in 0..n {
                let (dx, dy) = (ctrl[i].0 - ctrl[j].0, ctrl[i].1 - ctrl[j].1);
                l.set(&[i, j], tps_kernel(dx * dx + dy * dy));
            }
            let p = [1.0, ctrl[i].0, ctrl[i].1];
            for (k, &pv) in p.iter().enumerate() {
                l.set(&[i, n + k], pv);
                l.set(&[n + k, i], pv);
            }
        }
        let rhs = Tensor::from_fn(&[m, n], |idx| if idx / n == idx % n { 1.0 } else { 0.0 });
        let solve_map = linalg::solve(&l, &rhs)?;

        let (h, w) = (lattice.height, lattice.width);
        let rows = par::map_range(h * w, |p| {
            let q = ((p % w) as f64, (p / w) as f64);
            basis_row(&ctrl, &solve_map, q)
        });
        let dense = Tensor::new(vec![h * w, n], rows.concat())?;
        Ok(Self {
            lattice,
            ctrl,
            solve_map,
            dense,
        })
    }

    pub fn lattice(&self) -> ControlLattice {
        self.lattice
    }

    /// Dense (H·W)×n sampling matrix.
    pub fn dense(&self) -> &Tensor {
        &self.dense
    }

    /// Maps an arbitrary point through the TPS defined by `targets` (n×2
    /// flattened).
    pub fn eval(&self, targets: &[f64], q: (f64, f64)) -> (f64, f64) {
        let row = basis_row(&self.ctrl, &self.solve_map, q);
        let mut out = (0.0, 0.0);
        for (k, b) in row.iter().enumerate() {
            out.0 += b * targets[2 * k];
            out.1 += b * targets[2 * k + 1];
        }
        out
    }

    /// Sampling field for the given displaced control points.
    pub fn apply(&self, positions: &Tensor) -> Result<FlowField> {
        let n = self.lattice.len();
        let targets = positions.reshape(&[n, 2])?;
        let coords = self.dense.matmul(&targets)?;
        FlowField::new(coords.reshape(&[self.lattice.height, self.lattice.width, 2])?)
    }

    /// Differentiable [`TpsBasis::apply`]; `offsets` is rows×cols×2.
    pub fn apply_var<'t>(&self, offsets: Var<'t>) -> Result<Var<'t>> {
        let tape = offsets.tape();
        let n = self.lattice.len();
        let base = tape.constant(self.lattice.positions());
        let pos = base.add(offsets)?.reshape(&[n, 2])?;
        tape.constant(self.dense.clone()).matmul(pos)?.reshape(&[
            self.lattice.height,
            self.lattice.width,
            2,
        ])
    }
}

fn basis_row(ctrl: &[(f64, f64)], solve_map: &Tensor, q: (f64, f64)) -> Vec<f64> {
    let n = ctrl.len();
    let mut k = Vec::with_capacity(n + 3);
    for c in ctrl {
        let (dx, dy) = (q.0 - c.0, q.1 - c.1);
        k.push(tps_kernel(dx * dx + dy * dy));
    }
    k.extend([1.0, q.0, q.1]);
    let z = solve_map.data();
    let mut row = vec![0.0; n];
    for (i, kv) in k.iter().enumerate() {
        if *kv == 0.0 {
            continue;
        }
        for (j, r) in row.iter_mut().enumerate() {
            *r += kv * z[i * n + j];
        }
    }
    row
}

/// Evaluates the TPS at every output pixel, giving a backward-sampling field.
pub fn tps_apply(params: &TpsParams, h: usize, w: usize) -> Result<FlowField> {
    let basis = TpsBasis::new(params.lattice(h, w)?)?;
    basis.apply(&params.positions(h, w)?)
}

/// Source-space mask of the pixels that the TPS warp carries into `region`.
///
/// The warp samples source location `T(t)` for output pixel `t`, so a source
/// pixel `s` lands at `T⁻¹(s)`. That forward image is found per source pixel
/// by Newton iteration on `T(q) = s`; `s` is marked when the nearest output
/// pixel to `q` lies in `region`.
pub fn tps_reverse_map(params: &TpsParams, region: &Tensor) -> Result<Tensor> {
    let s = region.shape();
    if s.len() != 2 {
        return Err(Error::dim("tps_reverse_map", s, &[0, 0]));
    }
    let (h, w) = (s[0], s[1]);
    let basis = TpsBasis::new(params.lattice(h, w)?)?;
    let targets = params.positions(h, w)?.into_data();
    let reg = region.data();
    let marks = par::map_range(h * w, |p| {
        let src = ((p % w) as f64, (p / w) as f64);
        match invert_point(&basis, &targets, src) {
            Some((qx, qy)) => {
                let (rx, ry) = (qx.round(), qy.round());
                if rx >= 0.0 && ry >= 0.0 && (rx as usize) < w && (ry as usize) < h {
                    if reg[ry as usize * w + rx as usize] != 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    0.0
                }
            }
            None => 0.0,
        }
    });
    Tensor::new(vec![h, w], marks)
}

/// Solves `T(q) = s` by Newton's method with a finite-difference Jacobian.
pub fn invert_point(basis: &TpsBasis, targets: &[f64], s: (f64, f64)) -> Option<(f64, f64)> {
    let t0 = basis.eval(targets, s);
    let mut q = (2.0 * s.0 - t0.0, 2.0 * s.1 - t0.1);
    let hstep = 1e-4;
    for _ in 0..50 {
        let t = basis.eval(targets, q);
        let r = (t.0 - s.0, t.1 - s.1);
        if r.0.abs() < 1e-9 && r.1.abs() < 1e-9 {
            return Some(q);
        }
        let px = basis.eval(targets, (q.0 + hstep, q.1));
        let mx = basis.eval(targets, (q.0 - hstep, q.1));
        let py = basis.eval(targets, (q.0, q.1 + hstep));
        let my = basis.eval(targets, (q.0, q.1 - hstep));
        let (a, c) = ((px.0 - mx.0) / (2.0 * hstep), (px.1 - mx.1) / (2.0 * hstep));
        let (b, d) = ((py.0 - my.0) / (2.0 * hstep), (py.1 - my.1) / (2.0 * hstep));
        let det = a * d - b * c;
        if det.abs() < 1e-12 || !det.is_finite() {
            return None;
        }
        q.0 -= (d * r.0 - b * r.1) / det;
        q.1 -= (-c * r.0 + a * r.1) / det;
    }
    let t = basis.eval(targets, q);
    ((t.0 - s.0).abs() < 1e-6 && (t.1 - s.1).abs() < 1e-6).then_some(q)
}
