//! Sequence bundles: a directory with a `manifest.txt` and one CFT file per
//! role.

use std::collections::BTreeMap;
use std::path::Path;

use crate::agnostic::LabelMaps;
use crate::error::{Error, Result};
use crate::geometry::FlowField;
use crate::numcore::Tensor;

use super::cft;

pub const MANIFEST: &str = "manifest.txt";

/// Roles every bundle must carry.
pub const REQUIRED_ROLES: [&str; 7] = [
    "frames", "seg", "dense", "pose", "matte", "clothes", "optical",
];
/// Ground-truth roles written by the scene generator.
pub const OPTIONAL_ROLES: [&str; 4] = ["gt_flow", "noisy_flow", "garment", "occluder"];

/// One person sequence plus the target clothes image.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBundle {
    /// T×H×W×3 person frames.
    pub frames: Tensor,
    /// T×H×W segmentation labels.
    pub seg: Tensor,
    /// T×H×W body-surface labels.
    pub dense: Tensor,
    /// T×K×2 keypoints.
    pub pose: Tensor,
    /// T×H×W foreground matte.
    pub matte: Tensor,
    /// H×W×3 clothes image on a zero background.
    pub clothes: Tensor,
    /// T×H×W×2; entry t maps frame t to frame t−1 coordinates (identity at t = 0).
    pub optical: Tensor,
    /// T×H×W×2 exact appearance flows.
    pub gt_flow: Option<Tensor>,
    /// T×H×W×2 perturbed appearance flows.
    pub noisy_flow: Option<Tensor>,
    /// T×H×W garment footprint before occlusion.
    pub garment: Option<Tensor>,
    /// T×H×W occluder footprint.
    pub occluder: Option<Tensor>,
}

fn flows(t: &Tensor) -> Result<Vec<FlowField>> {
    (0..t.shape()[0])
        .map(|i| FlowField::new(t.index0(i)?))
        .collect()
}

impl SequenceBundle {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn frame(&self, t: usize) -> Result<Tensor> {
        self.frames.index0(t)
    }

    pub fn maps(&self, t: usize) -> Result<LabelMaps> {
        Ok(LabelMaps {
            seg: self.seg.index0(t)?,
            dense: self.dense.index0(t)?,
            pose: self.pose.index0(t)?,
            matte: self.matte.index0(t)?,
        })
    }

    pub fn optical_flows(&self) -> Result<Vec<FlowField>> {
        flows(&self.optical)
    }

    pub fn gt_flows(&self) -> Result<Option<Vec<FlowField>>> {
        self.gt_flow.as_ref().map(flows).transpose()
    }

    pub fn noisy_flows(&self) -> Result<Option<Vec<FlowField>>> {
        self.noisy_flow.as_ref().map(flows).transpose()
    }

    fn roles(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![
            ("frames", &self.frames),
            ("seg", &self.seg),
            ("dense", &self.dense),
            ("pose", &self.pose),
            ("matte", &self.matte),
            ("clothes", &self.clothes),
            ("optical", &self.optical),
        ];
        for (name, t) in [
            ("gt_flow", &self.gt_flow),
            ("noisy_flow", &self.noisy_flow),
            ("garment", &self.garment),
            ("occluder", &self.occluder),
        ] {
            if let Some(t) = t {
                v.push((name, t));
            }
        }
        v
    }

    /// Every role must agree on T, H and W.
    pub fn validate(&self) -> Result<()> {
        let fs = self.frames.shape();
        if fs.len() != 4 || fs[3] != 3 || fs[0] == 0 {
            return Err(Error::dim("bundle.frames", fs, &[0, 0, 0, 3]));
        }
        let (t, h, w) = (fs[0], fs[1], fs[2]);
        let expect = |name: &'static str, x: &Tensor, want: &[usize]| -> Result<()> {
            if x.shape() != want {
                return Err(Error::dim(name, x.shape(), want));
            }
            Ok(())
        };
        for (name, x) in [
            ("bundle.seg", &self.seg),
            ("bundle.dense", &self.dense),
            ("bundle.matte", &self.matte),
        ] {
            expect(name, x, &[t, h, w])?;
        }
        let ps = self.pose.shape();
        if ps.len() != 3 || ps[0] != t || ps[2] != 2 {
            return Err(Error::dim("bundle.pose", ps, &[t, 0, 2]));
        }
        expect("bundle.clothes", &self.clothes, &[h, w, 3])?;
        expect("bundle.optical", &self.optical, &[t, h, w, 2])?;
        if let Some(x) = &self.gt_flow {
            expect("bundle.gt_flow", x, &[t, h, w, 2])?;
        }
        if let Some(x) = &self.noisy_flow {
            expect("bundle.noisy_flow", x, &[t, h, w, 2])?;
        }
        if let Some(x) = &self.garment {
            expect("bundle.garment", x, &[t, h, w])?;
        }
        if let Some(x) = &self.occluder {
            expect("bundle.occluder", x, &[t, h, w])?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> String {
        let mut s = format!(
            "T = {}\nH = {}\nW = {}\n",
            self.len(),
            self.height(),
            self.width()
        );
        for (name, _) in self.roles() {
            s.push_str(&format!("{name} = {name}.cft\n"));
        }
        s
    }

    /// Writes the manifest and one CFT file per role into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, t) in self.roles() {
            cft::write(dir.join(format!("{name}.cft")), t)?;
        }
        let m = dir.join(MANIFEST);
        std::fs::write(&m, self.manifest()).map_err(|e| Error::io(&m, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
        let manifest = Manifest::parse(&text)?;
        let get = |role: &str| -> Result<Option<Tensor>> {
            match manifest.files.get(role) {
                Some(f) => cft::read(dir.join(f)).map(Some),
                None => Ok(None),
            }
        };
        let need = |role: &str| -> Result<Tensor> {
            get(role)?.ok_or_else(|| Error::MissingRole(role.to_string()))
        };
        let b = SequenceBundle {
            frames: need("frames")?,
            seg: need("seg")?,
            dense: need("dense")?,
            pose: need("pose")?,
            matte: need("matte")?,
            clothes: need("clothes")?,
            optical: need("optical")?,
            gt_flow: get("gt_flow")?,
            noisy_flow: get("noisy_flow")?,
            garment: get("garment")?,
            occluder: get("occluder")?,
        };
        b.validate()?;
        if [b.len(), b.height(), b.width()] != [manifest.t, manifest.h, manifest.w] {
            return Err(Error::dim(
                "manifest",
                &[manifest.t, manifest.h, manifest.w],
                &[b.len(), b.height(), b.width()],
            ));
        }
        Ok(b)
    }
}

/// Parsed `key = value` manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    /// Checks sizes and roles; every required role must be listed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sizes = [None; 3];
        let mut files = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("manifest line {}: expected key = value", ln + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            let slot = match k {
                "T" => Some(0),
                "H" => Some(1),
                "W" => Some(2),
                _ => None,
            };
            if let Some(i) = slot {
                sizes[i] = Some(
                    v.parse::<usize>()
                        .map_err(|_| Error::Config(format!("manifest: bad size {k} = {v:?}")))?,
                );
            } else if REQUIRED_ROLES.contains(&k) || OPTIONAL_ROLES.contains(&k) {
                files.insert(k.to_string(), v.to_string());
            } else {
                return Err(Error::Config(format!("manifest: unknown role {k:?}")));
            }
        }
        let size = |i: usize, k: &str| {
            sizes[i].ok_or_else(|| Error::Config(format!("manifest: missing {k}")))
        };
        let (t, h, w) = (size(0, "T")?, size(1, "H")?, size(2, "W")?);
        if let Some(r) = REQUIRED_ROLES.iter().find(|r| !files.contains_key(**r)) {
            return Err(Error::MissingRole(r.to_string()));
        }
        Ok(Self { t, h, w, files })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SequenceBundle {
        let (t, h, w) = (2, 3, 4);
        SequenceBundle {
            frames: Tensor::from_fn(&[t, h, w, 3], |i| (i % 7) as f64 * 0.125),
            seg: Tensor::zeros(&[t, h, w]),
            dense: Tensor::zeros(&[t, h, w]),
            pose: Tensor::zeros(&[t, 1, 2]),
            matte: Tensor::ones(&[t, h, w]),
            clothes: Tensor::full(&[h, w, 3], 0.25),
            optical: Tensor::zeros(&[t, h, w, 2]),
            gt_flow: None,
            noisy_flow: None,
            garment: Some(Tensor::zeros(&[t, h, w])),
            occluder: None,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = tiny();
        b.save(dir.path()).unwrap();
        assert_eq!(SequenceBundle::load(dir.path()).unwrap(), b);
    }

    #[test]
    fn missing_matte_is_reported_by_role() {
        let text = tiny().manifest().replace("matte = matte.cft\n", "");
        let err = Manifest::parse(&text).unwrap_err();
        assert_eq!(err.to_string(), "missing role: matte");
    }
}
