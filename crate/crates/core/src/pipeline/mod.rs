//! File formats, synthetic scenes and end-to-end orchestration.
//!
//! Stage order: agnostic representation, TPS fit, occluded-clothes masking,
//! dense flow fit, tracking, warping, generator, metrics.

pub mod bundle;
pub mod cft;
pub mod config;
pub mod gradsuite;
pub mod synth;
pub mod toy;

use std::path::Path;

pub use bundle::{Manifest, SequenceBundle};
pub use config::{Config, FitConfig, ToyConfig};
pub use synth::{synth_scene, Motion, Occluder, SynthScene};
pub use toy::{train_toy, ToyReport};

use crate::agnostic::{
    compose_agnostic, mask_occluded_clothes, support, AgnosticResult, LabelTable,
};
use crate::error::{Error, Result};
use crate::flowtrack::{jitter_metric, track_sequence_regions, TrackConfig};
use crate::geometry::{tps_apply, warp_by_flow, FlowField, TpsParams};
use crate::mpdt::{GeneratorResult, GeneratorTensors, InputChannels, Mpdt};
use crate::numcore::Tensor;
use crate::objectives::ssim_sequence;
use crate::par;
use crate::warpfit::{fit_flow, fit_tps_grid, flow_data_term};

/// Runs `f` for every frame in parallel; the first failure (lowest frame)
/// is reported with the stage name.
fn per_frame<R: Send>(
    stage: &'static str,
    n: usize,
    f: impl Fn(usize) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    par::map_range(n, |t| f(t).map_err(|e| e.at_stage(stage, t)))
        .into_iter()
        .collect()
}

/// T×H×W×2 tensor of per-frame flows.
pub fn stack_flows(f: &[FlowField]) -> Result<Tensor> {
    Tensor::stack(&f.iter().map(|x| x.coords().clone()).collect::<Vec<_>>())
}

/// Inverse of [`stack_flows`].
pub fn unstack_flows(t: &Tensor) -> Result<Vec<FlowField>> {
    if t.rank() != 4 || t.shape()[3] != 2 {
        return Err(Error::dim("unstack_flows", t.shape(), &[0, 0, 0, 2]));
    }
    (0..t.shape()[0])
        .map(|i| FlowField::new(t.index0(i)?))
        .collect()
}

/// H×W×3 copy of `img` restricted to an H×W mask.
fn masked(img: &Tensor, mask: &Tensor) -> Tensor {
    let c = img.shape()[2];
    let m = mask.data();
    Tensor::from_fn(img.shape(), |i| {
        if m[i / c] != 0.0 {
            img.data()[i]
        } else {
            0.0
        }
    })
}

/// The visible worn garment of each frame: frame pixels labelled as clothes.
pub fn garment_targets(bundle: &SequenceBundle, table: &LabelTable) -> Result<Vec<Tensor>> {
    clothing_regions(bundle, table)?
        .iter()
        .enumerate()
        .map(|(t, mask)| Ok(masked(&bundle.frame(t)?, mask)))
        .collect()
}

/// Person-shape input D⊕P: normalized body-surface labels and a keypoint
/// heat map (Gaussian, σ = H/32), T×H×W×2.
pub fn person_representation(bundle: &SequenceBundle, table: &LabelTable) -> Tensor {
    let (tn, h, w) = (bundle.len(), bundle.height(), bundle.width());
    let k = bundle.pose.shape()[1];
    let scale = (table.dense_labels.max(2) - 1) as f64;
    let sigma = h as f64 / 32.0;
    Tensor::from_fn(&[tn, h, w, 2], |i| {
        let (p, ch) = (i / 2, i % 2);
        let (t, y, x) = (p / (h * w), (p / w) % h, p % w);
        if ch == 0 {
            return bundle.dense.at(&[t, y, x]) / scale;
        }
        (0..k)
            .map(|j| {
                let dx = x as f64 - bundle.pose.at(&[t, j, 0]);
                let dy = y as f64 - bundle.pose.at(&[t, j, 1]);
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .fold(0.0, f64::max)
    })
}

/// Outputs of the warp-fitting stages.
#[derive(Clone, Debug)]
pub struct WarpStage {
    pub agnostic: Vec<AgnosticResult>,
    pub targets: Vec<Tensor>,
    pub tps: Vec<TpsParams>,
    pub masked_clothes: Vec<Tensor>,
    pub flows: Vec<FlowField>,
}

/// Agnostic composition, TPS fit, occluded-clothes masking and flow fit.
pub fn warp_fit(bundle: &SequenceBundle, cfg: &Config) -> Result<WarpStage> {
    bundle.validate()?;
    let table = cfg.labels()?;
    let (tn, h, w) = (bundle.len(), bundle.height(), bundle.width());
    let radius = cfg.agnostic.radius_for(h, w);
    let agnostic = per_frame("agnostic", tn, |t| {
        compose_agnostic(
            &bundle.frame(t)?,
            &bundle.maps(t)?,
            &table,
            radius,
            cfg.agnostic.fill_value,
        )
    })?;
    let targets = garment_targets(bundle, &table)?;
    let (rows, cols) = cfg.fit.tps_grid;
    let tps = per_frame("fit_tps", tn, |t| {
        Ok(fit_tps_grid(
            &bundle.clothes,
            &targets[t],
            &cfg.warp,
            rows,
            cols,
            cfg.fit.tps_steps,
            cfg.fit.tps_lr,
        )?
        .params)
    })?;
    let masked_clothes = per_frame("mask_occluded_clothes", tn, |t| {
        mask_occluded_clothes(&bundle.clothes, &tps[t], &agnostic[t].occlusion_mask)
    })?;
    let flows = per_frame("fit_flow", tn, |t| {
        let init = tps_apply(&tps[t], h, w)?;
        fit_flow(
            &masked_clothes[t],
            &targets[t],
            &cfg.warp,
            cfg.fit.flow_steps,
            cfg.fit.flow_lr,
            &init,
        )
    })?;
    Ok(WarpStage {
        agnostic,
        targets,
        tps,
        masked_clothes,
        flows,
    })
}

/// Frame pixels labelled as clothes, H×W per frame.
pub fn clothing_regions(bundle: &SequenceBundle, table: &LabelTable) -> Result<Vec<Tensor>> {
    (0..bundle.len())
        .map(|t| {
            let seg = bundle.seg.index0(t)?;
            Ok(seg.map(|v| {
                if table.clothes.contains(&(v as u32)) {
                    1.0
                } else {
                    0.0
                }
            }))
        })
        .collect()
}

/// Jitter of `clothes` warped by each flow, over `regions`.
pub fn flow_jitter(
    clothes: &Tensor,
    flows: &[FlowField],
    optical: &[FlowField],
    regions: &[Tensor],
) -> Result<f64> {
    let warped = flows
        .iter()
        .map(|f| warp_by_flow(clothes, f))
        .collect::<Result<Vec<_>>>()?;
    jitter_metric(&warped, optical, regions)
}

/// Tracks `flows` of the per-frame clothes images `clothes`. Jitter is
/// measured on the unmasked clothes over each frame's clothing region.
pub fn track_flows(
    bundle: &SequenceBundle,
    flows: &[FlowField],
    clothes: &[Tensor],
    table: &LabelTable,
    cfg: &TrackConfig,
) -> Result<(Vec<FlowField>, JitterReport)> {
    let optical = bundle.optical_flows()?;
    let clothing = clothing_regions(bundle, table)?;
    let tracked =
        track_sequence_regions(flows, &optical, &clothing, clothes, cfg).map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => e.at_stage("track", 0),
        })?;
    let report = JitterReport {
        before: flow_jitter(&bundle.clothes, flows, &optical, &clothing)?,
        after: flow_jitter(&bundle.clothes, &tracked, &optical, &clothing)?,
    };
    Ok((tracked, report))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterReport {
    pub before: f64,
    pub after: f64,
}

/// Runs the generator on warped clothes, with the background-fusion mask
/// `1 − M_a` so the repainted region comes from the generator.
pub fn tryon(
    bundle: &SequenceBundle,
    cfg: &Config,
    agnostic: &[AgnosticResult],
    warped: &[Tensor],
) -> Result<GeneratorResult> {
    let table = cfg.labels()?;
    let (tn, h, w) = (bundle.len(), bundle.height(), bundle.width());
    let clothes = Tensor::stack(warped)?;
    let mask_c = Tensor::stack(&warped.iter().map(support).collect::<Vec<_>>())?;
    let agn = Tensor::stack(
        &agnostic
            .iter()
            .map(|a| a.agnostic_img.clone())
            .collect::<Vec<_>>(),
    )?;
    let keep = Tensor::stack(
        &agnostic
            .iter()
            .map(|a| a.agnostic_mask.clone())
            .collect::<Vec<_>>(),
    )?
    .map(|m| 1.0 - m)
    .reshape(&[tn, h, w, 1])?;
    let person = person_representation(bundle, &table);
    let model = Mpdt::new(cfg.mpdt.clone(), InputChannels::default(), cfg.seed)?;
    model
        .infer(&GeneratorTensors {
            clothes: &clothes,
            person: &person,
            agnostic: &agn,
            mask_c: &mask_c,
            fusion_mask: &keep,
        })
        .map_err(|e| e.at_stage("generator", 0))
}

/// Scalar results of a pipeline run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub ssim_output: f64,
    pub ssim_warped: f64,
    pub jitter: JitterReport,
    pub flow_data_term: f64,
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        format!(
            "ssim_output = {:.6}\nssim_warped = {:.6}\njitter_before = {:.6}\njitter_after = {:.6}\nflow_data_term = {:.6}\n",
            self.ssim_output, self.ssim_warped, self.jitter.before, self.jitter.after, self.flow_data_term
        )
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub warp: WarpStage,
    pub tracked: Vec<FlowField>,
    /// C̃ per frame.
    pub warped: Vec<Tensor>,
    pub generated: GeneratorResult,
    pub metrics: MetricsReport,
}

impl PipelineOutput {
    /// Every intermediate as a (role, tensor) pair, in stage order.
    pub fn artifacts(&self) -> Result<Vec<(&'static str, Tensor)>> {
        let w = &self.warp;
        let tps = Tensor::stack(&w.tps.iter().map(|p| p.offsets.clone()).collect::<Vec<_>>())?;
        Ok(vec![
            (
                "agnostic",
                Tensor::stack(
                    &w.agnostic
                        .iter()
                        .map(|a| a.agnostic_img.clone())
                        .collect::<Vec<_>>(),
                )?,
            ),
            (
                "agnostic_mask",
                Tensor::stack(
                    &w.agnostic
                        .iter()
                        .map(|a| a.agnostic_mask.clone())
                        .collect::<Vec<_>>(),
                )?,
            ),
            (
                "occlusion",
                Tensor::stack(
                    &w.agnostic
                        .iter()
                        .map(|a| a.occlusion_mask.clone())
                        .collect::<Vec<_>>(),
                )?,
            ),
            ("targets", Tensor::stack(&w.targets)?),
            ("tps", tps),
            ("masked_clothes", Tensor::stack(&w.masked_clothes)?),
            ("flows", stack_flows(&w.flows)?),
            ("tracked", stack_flows(&self.tracked)?),
            ("warped", Tensor::stack(&self.warped)?),
            ("rendered", self.generated.rendered.clone()),
            ("comp_mask", self.generated.comp_mask.clone()),
            ("output", self.generated.output.clone()),
        ])
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, t) in self.artifacts()? {
            cft::write(dir.join(format!("{name}.cft")), &t)?;
        }
        let m = dir.join("metrics.txt");
        std::fs::write(&m, self.metrics.to_text()).map_err(|e| Error::io(&m, e))
    }
}

/// The full pipeline on one bundle.
pub fn run_pipeline(bundle: &SequenceBundle, cfg: &Config) -> Result<PipelineOutput> {
    cfg.validate()?;
    let warp = warp_fit(bundle, cfg)?;
    let (tracked, jitter) = track_flows(
        bundle,
        &warp.flows,
        &warp.masked_clothes,
        &cfg.labels()?,
        &cfg.track,
    )?;
    let warped = per_frame("warp", bundle.len(), |t| {
        warp_by_flow(&warp.masked_clothes[t], &tracked[t])
    })?;
    let generated = tryon(bundle, cfg, &warp.agnostic, &warped)?;
    let data = per_frame("metrics", bundle.len(), |t| {
        flow_data_term(&warp.masked_clothes[t], &warp.targets[t], &tracked[t])
    })?;
    let metrics = MetricsReport {
        ssim_output: ssim_sequence(&generated.output, &bundle.frames)
            .map_err(|e| e.at_stage("metrics", 0))?,
        ssim_warped: ssim_sequence(&Tensor::stack(&warped)?, &Tensor::stack(&warp.targets)?)
            .map_err(|e| e.at_stage("metrics", 0))?,
        jitter,
        flow_data_term: data.iter().sum::<f64>() / data.len() as f64,
    };
    Ok(PipelineOutput {
        warp,
        tracked,
        warped,
        generated,
        metrics,
    })
}
