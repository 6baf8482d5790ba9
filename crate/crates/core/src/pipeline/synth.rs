//! Seeded synthetic try-on sequences with exact ground truth.
//!
//! A person layout (head, torso skin, textured garment, arms with hands,
//! legs) is drawn in canonical coordinates, which are also the pixel
//! coordinates of the clothes image. Frame t shows canonical point
//! `F_t(p)` at pixel p; `F_t` is the ground-truth appearance flow. A
//! magenta occluder disk is composited on top.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{invert_point, norm_scale, TpsBasis, TpsParams};
use crate::numcore::Tensor;

use super::bundle::SequenceBundle;

pub const OCCLUDER_COLOR: [f64; 3] = [1.0, 0.0, 1.0];

pub mod labels {
    pub const BACKGROUND: f64 = 0.0;
    pub const HEAD: f64 = 1.0;
    pub const CLOTHES: f64 = 2.0;
    pub const LEFT_ARM: f64 = 3.0;
    pub const RIGHT_ARM: f64 = 4.0;
    pub const TORSO_SKIN: f64 = 5.0;
    pub const LEGS: f64 = 6.0;

    pub const DENSE_HEAD_LEGS: f64 = 1.0;
    pub const DENSE_HANDS: f64 = 2.0;
    pub const DENSE_TORSO: f64 = 3.0;
    pub const DENSE_LEFT_ARM: f64 = 4.0;
    pub const DENSE_RIGHT_ARM: f64 = 5.0;
}

/// Per-frame garment motion; frame t applies `t` steps of it to frame 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Motion {
    Translation {
        velocity: (f64, f64),
    },
    /// Rotation (radians) and relative scale change per frame about the
    /// frame centre, plus a translation.
    Affine {
        velocity: (f64, f64),
        rotation: f64,
        scale: f64,
    },
    /// Translation plus a seeded 4×4 TPS deformation growing linearly to
    /// `amplitude` pixels (standard deviation) at the last frame.
    Tps {
        velocity: (f64, f64),
        amplitude: f64,
    },
}

/// Occluder disk, moving with constant velocity, in frame pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub center: (f64, f64),
    pub radius: f64,
    #[serde(default)]
    pub velocity: (f64, f64),
    /// Frames showing the occluder; empty means all.
    #[serde(default)]
    pub frames: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthScene {
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub motion: Motion,
    /// Omitted in a config file means no occluder.
    #[serde(default)]
    pub occluder: Option<Occluder>,
    /// Standard deviation of the flow perturbation, normalized coordinates.
    pub flow_noise: f64,
}

impl Default for SynthScene {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 8,
            height: 64,
            width: 48,
            motion: Motion::Translation {
                velocity: (0.75, 0.0),
            },
            occluder: Some(Occluder {
                center: (30.0, 34.0),
                radius: 6.0,
                velocity: (0.0, 0.0),
                frames: vec![],
            }),
            flow_noise: 0.01,
        }
    }
}

/// Axis-aligned box with half-integer edges in canonical pixels.
#[derive(Clone, Copy, Debug)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Rect {
    fn frac(w: usize, h: usize, fx0: f64, fx1: f64, fy0: f64, fy1: f64) -> Self {
        let (w, h) = (w as f64, h as f64);
        Rect {
            x0: (fx0 * w).round() - 0.5,
            x1: (fx1 * w).round() - 0.5,
            y0: (fy0 * h).round() - 0.5,
            y1: (fy1 * h).round() - 0.5,
        }
    }

    fn contains(&self, (x, y): (f64, f64)) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }

    fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x0, self.y0),
            (self.x1, self.y0),
            (self.x0, self.y1),
            (self.x1, self.y1),
        ]
    }
}

struct Layout {
    garment: Rect,
    torso: Rect,
    left_arm: Rect,
    right_arm: Rect,
    legs: Rect,
    head: ((f64, f64), f64),
    /// Arm rows below this are hands.
    hand_row: f64,
    keypoints: Vec<(f64, f64)>,
    phase: [f64; 3],
}

/// (seg, dense, colour) of a canonical point, or None for background.
type Part = (f64, f64, [f64; 3]);

const SKIN: [f64; 3] = [0.87, 0.68, 0.58];
const LEG_COLOR: [f64; 3] = [0.2, 0.25, 0.45];

impl Layout {
    fn new(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let garment = Rect::frac(w, h, 0.3, 0.7, 0.3, 0.66);
        let torso = Rect::frac(w, h, 0.28, 0.72, 0.25, 0.7);
        let left_arm = Rect::frac(w, h, 0.15, 0.27, 0.3, 0.7);
        let right_arm = Rect::frac(w, h, 0.73, 0.85, 0.3, 0.7);
        let legs = Rect::frac(w, h, 0.32, 0.68, 0.7, 0.94);
        let head = ((0.5 * w as f64 - 0.5, 0.15 * h as f64), 0.1 * h as f64);
        let hand_row = left_arm.y1 - 0.2 * (left_arm.y1 - left_arm.y0);
        let mid = |r: &Rect| (0.5 * (r.x0 + r.x1), 0.5 * (r.y0 + r.y1));
        let keypoints = vec![
            head.0,
            (head.0 .0, torso.y0),
            (0.5 * (left_arm.x0 + left_arm.x1), left_arm.y0),
            (0.5 * (right_arm.x0 + right_arm.x1), right_arm.y0),
            (0.5 * (left_arm.x0 + left_arm.x1), left_arm.y1),
            (0.5 * (right_arm.x0 + right_arm.x1), right_arm.y1),
            mid(&torso),
            mid(&legs),
        ];
        let phase = [
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
        ];
        Self {
            garment,
            torso,
            left_arm,
            right_arm,
            legs,
            head,
            hand_row,
            keypoints,
            phase,
        }
    }

    /// Smooth garment texture; the green channel stays in [0.25, 0.75], far
    /// from the occluder colour.
    fn texture(&self, (x, y): (f64, f64)) -> [f64; 3] {
        let p = self.phase;
        [
            0.55 + 0.3 * (0.45 * x + 0.2 * y + p[0]).sin(),
            0.5 + 0.25 * (0.3 * y - 0.15 * x + p[1]).cos(),
            0.45 + 0.3 * (0.25 * x + 0.35 * y + p[2]).sin(),
        ]
    }

    fn part(&self, q: (f64, f64)) -> Option<Part> {
        use labels::*;
        if self.garment.contains(q) {
            return Some((CLOTHES, DENSE_TORSO, self.texture(q)));
        }
        if self.torso.contains(q) {
            return Some((TORSO_SKIN, DENSE_TORSO, SKIN));
        }
        for (r, seg, dense) in [
            (&self.left_arm, LEFT_ARM, DENSE_LEFT_ARM),
            (&self.right_arm, RIGHT_ARM, DENSE_RIGHT_ARM),
        ] {
            if r.contains(q) {
                let d = if q.1 > self.hand_row {
                    DENSE_HANDS
                } else {
                    dense
                };
                return Some((seg, d, SKIN));
            }
        }
        if self.legs.contains(q) {
            return Some((LEGS, DENSE_HEAD_LEGS, LEG_COLOR));
        }
        let ((cx, cy), r) = self.head;
        if (q.0 - cx).powi(2) + (q.1 - cy).powi(2) < r * r {
            return Some((HEAD, DENSE_HEAD_LEGS, SKIN));
        }
        None
    }
}

fn background((x, y): (f64, f64)) -> [f64; 3] {
    let v = 0.1 * (0.5 * x).sin() * (0.4 * y).cos();
    [0.35 + v, 0.38 + v, 0.42 - v]
}

/// Backward and forward maps of one frame.
enum FrameMotion {
    Affine {
        center: (f64, f64),
        shift: (f64, f64),
        rot: f64,
        scale: f64,
    },
    Tps {
        basis: TpsBasis,
        targets: Vec<f64>,
    },
}

impl FrameMotion {
    fn new(
        motion: &Motion,
        t: usize,
        frames: usize,
        h: usize,
        w: usize,
        deform: &Tensor,
    ) -> Result<Self> {
        let tf = t as f64;
        let center = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        Ok(match motion {
            Motion::Translation { velocity } => FrameMotion::Affine {
                center,
                shift: (tf * velocity.0, tf * velocity.1),
                rot: 0.0,
                scale: 1.0,
            },
            Motion::Affine {
                velocity,
                rotation,
                scale,
            } => FrameMotion::Affine {
                center,
                shift: (tf * velocity.0, tf * velocity.1),
                rot: tf * rotation,
                scale: 1.0 + tf * scale,
            },
            Motion::Tps {
                velocity,
                amplitude,
            } => {
                let k = amplitude * tf / (frames.max(2) - 1) as f64;
                let s = deform.shape();
                let offsets = Tensor::from_fn(s, |i| {
                    let shift = if i % 2 == 0 { velocity.0 } else { velocity.1 };
                    -tf * shift + k * deform.data()[i]
                });
                let params = TpsParams::from_offsets(offsets)?;
                let basis = TpsBasis::new(params.lattice(h, w)?)?;
                let targets = params.positions(h, w)?.into_data();
                FrameMotion::Tps { basis, targets }
            }
        })
    }

    /// Canonical point shown at frame pixel p.
    fn backward(&self, p: (f64, f64)) -> (f64, f64) {
        match self {
            FrameMotion::Affine {
                center,
                shift,
                rot,
                scale,
            } => {
                let (dx, dy) = (p.0 - center.0 - shift.0, p.1 - center.1 - shift.1);
                let (c, s) = (rot.cos(), rot.sin());
                (
                    center.0 + (c * dx + s * dy) / scale,
                    center.1 + (-s * dx + c * dy) / scale,
                )
            }
            FrameMotion::Tps { basis, targets } => basis.eval(targets, p),
        }
    }

    /// Frame position of canonical point q.
    fn forward(&self, q: (f64, f64)) -> Option<(f64, f64)> {
        match self {
            FrameMotion::Affine {
                center,
                shift,
                rot,
                scale,
            } => {
                let (dx, dy) = (q.0 - center.0, q.1 - center.1);
                let (c, s) = (rot.cos(), rot.sin());
                Some((
                    center.0 + shift.0 + scale * (c * dx - s * dy),
                    center.1 + shift.1 + scale * (s * dx + c * dy),
                ))
            }
            FrameMotion::Tps { basis, targets } => invert_point(basis, targets, q),
        }
    }
}

impl SynthScene {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height < 8 || self.width < 8 {
            return Err(Error::Spec(format!(
                "need ≥ 1 frame of at least 8×8, got {} frames of {}×{}",
                self.frames, self.height, self.width
            )));
        }
        if !(self.flow_noise >= 0.0) {
            return Err(Error::Spec("flow_noise must be non-negative".into()));
        }
        Ok(())
    }

    fn occluder_at(&self, t: usize) -> Option<((f64, f64), f64)> {
        let o = self.occluder.as_ref()?;
        if !o.frames.is_empty() && !o.frames.contains(&t) {
            return None;
        }
        let tf = t as f64;
        Some((
            (
                o.center.0 + tf * o.velocity.0,
                o.center.1 + tf * o.velocity.1,
            ),
            o.radius,
        ))
    }
}

fn in_frame((x, y): (f64, f64), h: usize, w: usize) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64
}

/// Renders the scene into a bundle with all ground-truth roles.
pub fn synth_scene(spec: &SynthScene) -> Result<SequenceBundle> {
    spec.validate()?;
    let (tn, h, w) = (spec.frames, spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = Layout::new(h, w, &mut rng);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let deform = Tensor::from_fn(&[4, 4, 2], |_| normal.sample(&mut rng));
    let motions = (0..tn)
        .map(|t| FrameMotion::new(&spec.motion, t, tn, h, w, &deform))
        .collect::<Result<Vec<_>>>()?;

    for (t, m) in motions.iter().enumerate() {
        for c in layout.garment.corners() {
            match m.forward(c) {
                Some(p) if in_frame(p, h, w) => {}
                _ => return Err(Error::Spec(format!("garment leaves the frame at t = {t}"))),
            }
        }
        if let Some(((cx, cy), r)) = spec.occluder_at(t) {
            if r <= 0.0 || !in_frame((cx - r, cy - r), h, w) || !in_frame((cx + r, cy + r), h, w) {
                return Err(Error::Spec(format!("occluder leaves the frame at t = {t}")));
            }
        }
    }

    let clothes = Tensor::from_fn(&[h, w, 3], |i| {
        let p = i / 3;
        let q = ((p % w) as f64, (p / w) as f64);
        if layout.garment.contains(q) {
            layout.texture(q)[i % 3]
        } else {
            0.0
        }
    });

    let (sx, sy) = norm_scale(h, w);
    let occ_vel = spec.occluder.as_ref().map_or((0.0, 0.0), |o| o.velocity);
    let mut frames = Vec::with_capacity(tn);
    let (mut seg, mut dense, mut matte) = (Vec::new(), Vec::new(), Vec::new());
    let (mut gt, mut noisy, mut optical) = (Vec::new(), Vec::new(), Vec::new());
    let (mut garment, mut occluder, mut pose) = (Vec::new(), Vec::new(), Vec::new());
    for (t, m) in motions.iter().enumerate() {
        let occ = spec.occluder_at(t);
        let mut img = Vec::with_capacity(h * w * 3);
        let (mut sg, mut dn, mut mt) = (vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]);
        let (mut g, mut nz, mut op) = (Vec::with_capacity(h * w * 2), Vec::new(), Vec::new());
        let (mut gm, mut om) = (vec![0.0; h * w], vec![0.0; h * w]);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let p = (x as f64, y as f64);
                let q = m.backward(p);
                g.extend_from_slice(&[q.0, q.1]);
                nz.extend_from_slice(&[
                    q.0 + spec.flow_noise * sx * normal.sample(&mut rng),
                    q.1 + spec.flow_noise * sy * normal.sample(&mut rng),
                ]);
                let body = layout.part(q);
                if layout.garment.contains(q) {
                    gm[i] = 1.0;
                }
                let occluded = occ
                    .is_some_and(|((cx, cy), r)| (p.0 - cx).powi(2) + (p.1 - cy).powi(2) <= r * r);
                let (color, prev) = if occluded {
                    om[i] = 1.0;
                    mt[i] = 1.0;
                    (OCCLUDER_COLOR, (p.0 - occ_vel.0, p.1 - occ_vel.1))
                } else if let Some((s, d, c)) = body {
                    sg[i] = s;
                    dn[i] = d;
                    mt[i] = 1.0;
                    let prev = if t == 0 {
                        Some(p)
                    } else {
                        motions[t - 1].forward(q)
                    };
                    (c, prev.unwrap_or(p))
                } else {
                    (background(p), p)
                };
                img.extend_from_slice(&color);
                if t == 0 {
                    op.extend_from_slice(&[p.0, p.1]);
                } else {
                    op.extend_from_slice(&[prev.0, prev.1]);
                }
            }
        }
        let kp: Vec<f64> = layout
            .keypoints
            .iter()
            .flat_map(|&k| {
                let (x, y) = m.forward(k).unwrap_or(k);
                [x, y]
            })
            .collect();
        frames.push(Tensor::new(vec![h, w, 3], img)?);
        seg.push(Tensor::new(vec![h, w], sg)?);
        dense.push(Tensor::new(vec![h, w], dn)?);
        matte.push(Tensor::new(vec![h, w], mt)?);
        gt.push(Tensor::new(vec![h, w, 2], g)?);
        noisy.push(Tensor::new(vec![h, w, 2], nz)?);
        optical.push(Tensor::new(vec![h, w, 2], op)?);
        garment.push(Tensor::new(vec![h, w], gm)?);
        occluder.push(Tensor::new(vec![h, w], om)?);
        pose.push(Tensor::new(vec![layout.keypoints.len(), 2], kp)?);
    }
    let bundle = SequenceBundle {
        frames: Tensor::stack(&frames)?,
        seg: Tensor::stack(&seg)?,
        dense: Tensor::stack(&dense)?,
        pose: Tensor::stack(&pose)?,
        matte: Tensor::stack(&matte)?,
        clothes,
        optical: Tensor::stack(&optical)?,
        gt_flow: Some(Tensor::stack(&gt)?),
        noisy_flow: Some(Tensor::stack(&noisy)?),
        garment: Some(Tensor::stack(&garment)?),
        occluder: Some(Tensor::stack(&occluder)?),
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agnostic::occlusion_region;

    fn still(occluder: bool) -> SynthScene {
        SynthScene {
            frames: 3,
            motion: Motion::Translation {
                velocity: (0.0, 0.0),
            },
            occluder: if occluder {
                SynthScene::default().occluder
            } else {
                None
            },
            ..SynthScene::default()
        }
    }

    #[test]
    fn zero_motion_gives_identity_flows() {
        let b = synth_scene(&still(false)).unwrap();
        for f in b.gt_flows().unwrap().unwrap() {
            for y in 0..b.height() {
                for x in 0..b.width() {
                    assert_eq!(f.at(x, y), (x as f64, y as f64));
                }
            }
        }
    }

    #[test]
    fn unit_translation_optical_flow_on_garment() {
        let spec = SynthScene {
            frames: 4,
            motion: Motion::Translation {
                velocity: (1.0, 0.0),
            },
            occluder: None,
            ..SynthScene::default()
        };
        let b = synth_scene(&spec).unwrap();
        let opt = b.optical_flows().unwrap();
        let garment = b.garment.as_ref().unwrap();
        let mut n = 0;
        for (t, o) in opt.iter().enumerate().skip(1) {
            for y in 0..b.height() {
                for x in 0..b.width() {
                    if garment.at(&[t, y, x]) == 0.0 {
                        continue;
                    }
                    let (px, py) = o.at(x, y);
                    assert!((x as f64 - px - 1.0).abs() < 1e-12 && (y as f64 - py).abs() < 1e-12);
                    n += 1;
                }
            }
        }
        assert!(n > 0);
    }

    #[test]
    fn occlusion_region_equals_occluder_raster() {
        let b = synth_scene(&still(true)).unwrap();
        let occ = b.occluder.as_ref().unwrap();
        for t in 0..b.len() {
            let r = occlusion_region(&b.maps(t).unwrap());
            assert_eq!(r, occ.index0(t).unwrap());
            assert!(r.sum() > 0.0);
        }
    }

    #[test]
    fn out_of_frame_specs_are_rejected() {
        let far = SynthScene {
            motion: Motion::Translation {
                velocity: (4.0, 0.0),
            },
            ..SynthScene::default()
        };
        assert!(matches!(synth_scene(&far), Err(Error::Spec(_))));
        let mut occ = still(true);
        occ.occluder.as_mut().unwrap().center = (2.0, 2.0);
        assert!(matches!(synth_scene(&occ), Err(Error::Spec(_))));
    }

    #[test]
    fn same_seed_same_bundle() {
        let s = SynthScene::default();
        assert_eq!(synth_scene(&s).unwrap(), synth_scene(&s).unwrap());
        let other = SynthScene { seed: 1, ..s };
        assert_ne!(
            synth_scene(&other).unwrap().clothes,
            synth_scene(&SynthScene::default()).unwrap().clothes
        );
    }
}
