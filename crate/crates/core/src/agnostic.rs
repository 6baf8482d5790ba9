//! Clothing-agnostic person representation and occlusion-aware clothes
//! masking.
//!
//! All masks are H×W tensors holding 0.0 or 1.0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{tps_apply, tps_reverse_map, warp_by_flow, TpsParams};
use crate::numcore::Tensor;

/// Which parser / body-surface labels play which role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelTable {
    /// Number of declared segmentation labels (valid labels are `0..seg_labels`).
    pub seg_labels: u32,
    /// Number of declared body-surface labels.
    pub dense_labels: u32,
    pub arms: Vec<u32>,
    pub clothes: Vec<u32>,
    pub torso_skin: Vec<u32>,
    /// Body-surface labels marking hands.
    pub hands: Vec<u32>,
}

impl Default for LabelTable {
    /// Matches the label scheme of the synthetic scene generator.
    fn default() -> Self {
        Self {
            seg_labels: 7,
            dense_labels: 6,
            arms: vec![3, 4],
            clothes: vec![2],
            torso_skin: vec![5],
            hands: vec![2],
        }
    }
}

fn parse_labels(key: &str, v: &str) -> Result<Vec<u32>> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map_err(|_| Error::Config(format!("label table: bad label {s:?} for {key}")))
        })
        .collect()
}

impl LabelTable {
    /// Parses `role = label, label, …` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = LabelTable {
            seg_labels: 0,
            dense_labels: 0,
            arms: vec![],
            clothes: vec![],
            torso_skin: vec![],
            hands: vec![],
        };
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("label table line {}: expected key = value", ln + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            let one = |v: &str| -> Result<u32> {
                v.parse()
                    .map_err(|_| Error::Config(format!("label table: bad count {v:?} for {k}")))
            };
            match k {
                "seg_labels" => t.seg_labels = one(v)?,
                "dense_labels" => t.dense_labels = one(v)?,
                "arms" => t.arms = parse_labels(k, v)?,
                "clothes" => t.clothes = parse_labels(k, v)?,
                "torso_skin" => t.torso_skin = parse_labels(k, v)?,
                "hands" => t.hands = parse_labels(k, v)?,
                _ => return Err(Error::Config(format!("label table: unknown role {k:?}"))),
            }
        }
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(", ");
        format!(
            "seg_labels = {}\ndense_labels = {}\narms = {}\nclothes = {}\ntorso_skin = {}\nhands = {}\n",
            self.seg_labels,
            self.dense_labels,
            list(&self.arms),
            list(&self.clothes),
            list(&self.torso_skin),
            list(&self.hands)
        )
    }

    /// Every role must name declared labels.
    pub fn validate(&self) -> Result<()> {
        for (role, labels, n) in [
            ("arms", &self.arms, self.seg_labels),
            ("clothes", &self.clothes, self.seg_labels),
            ("torso_skin", &self.torso_skin, self.seg_labels),
            ("hands", &self.hands, self.dense_labels),
        ] {
            if let Some(l) = labels.iter().find(|&&l| l >= n) {
                return Err(Error::Config(format!(
                    "label table: role {role} uses undeclared label {l} (declared 0..{n})"
                )));
            }
        }
        Ok(())
    }

    /// Segmentation labels whose union is expanded into the agnostic mask.
    pub fn removable(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self
            .arms
            .iter()
            .chain(&self.clothes)
            .chain(&self.torso_skin)
            .copied()
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Per-frame label maps produced by external parsers.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMaps {
    /// H×W human-parsing labels; 0 is background or other items.
    pub seg: Tensor,
    /// H×W body-surface part labels.
    pub dense: Tensor,
    /// K×2 keypoints (x, y).
    pub pose: Tensor,
    /// H×W foreground matte.
    pub matte: Tensor,
}

impl LabelMaps {
    pub fn height(&self) -> usize {
        self.seg.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.seg.shape()[1]
    }

    pub fn validate(&self, table: &LabelTable) -> Result<()> {
        let s = self.seg.shape();
        if s.len() != 2 {
            return Err(Error::dim("label_maps", s, &[0, 0]));
        }
        for m in [&self.dense, &self.matte] {
            if m.shape() != s {
                return Err(Error::dim("label_maps", s, m.shape()));
            }
        }
        let p = self.pose.shape();
        if p.len() != 2 || p[1] != 2 {
            return Err(Error::dim("label_maps.pose", p, &[0, 2]));
        }
        let check = |t: &Tensor, n: u32, what: &str| -> Result<()> {
            for &v in t.data() {
                if v < 0.0 || v.fract() != 0.0 || v >= n as f64 {
                    return Err(Error::Config(format!(
                        "{what} label {v} is not declared (0..{n})"
                    )));
                }
            }
            Ok(())
        };
        check(&self.seg, table.seg_labels, "segmentation")?;
        check(&self.dense, table.dense_labels, "body-surface")?;
        Ok(())
    }
}

/// Agnostic image, the mask it was built with, and the occlusion region.
#[derive(Clone, Debug, PartialEq)]
pub struct AgnosticResult {
    pub agnostic_img: Tensor,
    pub agnostic_mask: Tensor,
    pub occlusion_mask: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgnosticConfig {
    /// Disk radius for expanding the removable regions; `None` scales 5 px
    /// at 192×256 to the frame size.
    pub dilation_radius: Option<usize>,
    pub fill_value: f64,
}

impl Default for AgnosticConfig {
    fn default() -> Self {
        Self {
            dilation_radius: None,
            fill_value: 0.5,
        }
    }
}

impl AgnosticConfig {
    pub fn radius_for(&self, h: usize, w: usize) -> usize {
        self.dilation_radius
            .unwrap_or_else(|| default_dilation_radius(h, w))
    }
}

/// 5 px at 192×256, scaled with the square root of the pixel count.
pub fn default_dilation_radius(h: usize, w: usize) -> usize {
    let scale = ((h * w) as f64 / (192.0 * 256.0)).sqrt();
    (5.0 * scale).round() as usize
}

fn mask_where(shape: &[usize], f: impl Fn(usize) -> bool) -> Tensor {
    Tensor::from_fn(shape, |i| if f(i) { 1.0 } else { 0.0 })
}

/// Matte foreground that the parser labels as background/other (label 0).
pub fn occlusion_region(maps: &LabelMaps) -> Tensor {
    let (seg, matte) = (maps.seg.data(), maps.matte.data());
    mask_where(maps.seg.shape(), |i| matte[i] != 0.0 && seg[i] == 0.0)
}

/// Binary dilation with a disk of the given radius.
pub fn dilate_disk(mask: &Tensor, radius: usize) -> Tensor {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    if radius == 0 {
        return mask.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    }
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let m = mask.data();
    mask_where(mask.shape(), |i| {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        offsets.iter().any(|&(dx, dy)| {
            let (sx, sy) = (x + dx, y + dy);
            sx >= 0
                && sy >= 0
                && sx < w as isize
                && sy < h as isize
                && m[(sy as usize) * w + sx as usize] != 0.0
        })
    })
}

/// Builds the agnostic mask and image for one frame.
///
/// `M_a = dilate(arms ∪ clothes ∪ torso-skin) \ hands \ occlusion`; the
/// frame is replaced by `fill_value` wherever `M_a = 1`.
pub fn compose_agnostic(
    frame: &Tensor,
    maps: &LabelMaps,
    table: &LabelTable,
    dilation_radius: usize,
    fill_value: f64,
) -> Result<AgnosticResult> {
    table.validate()?;
    maps.validate(table)?;
    let fs = frame.shape();
    let (h, w) = (maps.height(), maps.width());
    if fs.len() != 3 || fs[0] != h || fs[1] != w {
        return Err(Error::dim("compose_agnostic", fs, maps.seg.shape()));
    }
    let removable = table.removable();
    let seg = maps.seg.data();
    let dense = maps.dense.data();
    let base = mask_where(&[h, w], |i| removable.contains(&(seg[i] as u32)));
    let grown = dilate_disk(&base, dilation_radius);
    let occlusion = occlusion_region(maps);
    let g = grown.data();
    let o = occlusion.data();
    let agnostic_mask = mask_where(&[h, w], |i| {
        g[i] != 0.0 && !table.hands.contains(&(dense[i] as u32)) && o[i] == 0.0
    });
    let c = fs[2];
    let am = agnostic_mask.data();
    let agnostic_img = Tensor::from_fn(fs, |i| {
        if am[i / c] != 0.0 {
            fill_value
        } else {
            frame.data()[i]
        }
    });
    Ok(AgnosticResult {
        agnostic_img,
        agnostic_mask,
        occlusion_mask: occlusion,
    })
}

/// Nonzero pixels of an H×W×C image.
pub fn support(img: &Tensor) -> Tensor {
    let s = img.shape();
    let c = s[2];
    let d = img.data();
    mask_where(&s[..2], |p| d[p * c..(p + 1) * c].iter().any(|&v| v != 0.0))
}

/// Clothes with the source pixels hidden by `occlusion` zeroed, plus the
/// source-space mask that was removed.
///
/// `occlusion` lives in warped (person) space; it is intersected with the
/// support of the warped clothes mask and carried back through the TPS.
pub fn mask_occluded_clothes_with_mask(
    clothes: &Tensor,
    tps: &TpsParams,
    occlusion: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let cs = clothes.shape();
    if cs.len() != 3 || occlusion.shape() != &cs[..2] {
        return Err(Error::dim("mask_occluded_clothes", cs, occlusion.shape()));
    }
    let (h, w, c) = (cs[0], cs[1], cs[2]);
    let cmask = support(clothes).reshape(&[h, w, 1])?;
    let flow = tps_apply(tps, h, w)?;
    let warped_support = warp_by_flow(&cmask, &flow)?;
    let ws = warped_support.data();
    let od = occlusion.data();
    let region = mask_where(&[h, w], |i| od[i] != 0.0 && ws[i] > 0.0);
    let source = tps_reverse_map(tps, &region)?;
    let sd = source.data();
    let out = Tensor::from_fn(cs, |i| {
        if sd[i / c] != 0.0 {
            0.0
        } else {
            clothes.data()[i]
        }
    });
    Ok((out, source))
}

pub fn mask_occluded_clothes(
    clothes: &Tensor,
    tps: &TpsParams,
    occlusion: &Tensor,
) -> Result<Tensor> {
    Ok(mask_occluded_clothes_with_mask(clothes, tps, occlusion)?.0)
}
