//! Overfitting the generator on a tiny synthetic scene.

use crate::agnostic::{compose_agnostic, support};
use crate::error::{Error, Result};
use crate::geometry::warp_by_flow;
use crate::mpdt::{generator_forward, GeneratorTensors, InputChannels, Mpdt};
use crate::numcore::{Tape, Tensor};
use crate::objectives::{
    adam_step, tryon_loss, AdamConfig, AdamState, Discriminator, RandomConvExtractor,
    TemporalPatchDiscriminator, TryOnLossConfig,
};

use super::config::Config;
use super::synth::synth_scene;
use super::{garment_targets, person_representation};

#[derive(Clone, Debug, PartialEq)]
pub struct ToyReport {
    /// Weighted loss before every update, then after the last one.
    pub losses: Vec<f64>,
}

impl ToyReport {
    pub fn initial(&self) -> f64 {
        self.losses[0]
    }

    pub fn best(&self) -> f64 {
        self.losses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn last(&self) -> f64 {
        *self.losses.last().expect("non-empty trace")
    }

    /// `1 − best / initial`.
    pub fn reduction(&self) -> f64 {
        1.0 - self.best() / self.initial()
    }
}

/// Trains the generator alone on the toy scene, with clothes warped by the
/// ground-truth flows. A discriminator, if weighted, stays frozen at its
/// initialization.
pub fn train_toy(cfg: &Config) -> Result<ToyReport> {
    let toy = &cfg.toy;
    toy.mpdt.validate()?;
    if toy.steps == 0 {
        return Err(Error::Config("toy.steps must be at least 1".into()));
    }
    let bundle = synth_scene(&toy.scene)?;
    let table = cfg.labels()?;
    let (tn, h, w) = (bundle.len(), bundle.height(), bundle.width());
    let radius = cfg.agnostic.radius_for(h, w);
    let gt = bundle
        .gt_flows()?
        .ok_or_else(|| Error::contract("toy scene has no ground-truth flows"))?;
    let mut warped = Vec::with_capacity(tn);
    let mut agn = Vec::with_capacity(tn);
    let mut keep = Vec::with_capacity(tn);
    for (t, flow) in gt.iter().enumerate() {
        let a = compose_agnostic(
            &bundle.frame(t)?,
            &bundle.maps(t)?,
            &table,
            radius,
            cfg.agnostic.fill_value,
        )?;
        warped.push(warp_by_flow(&bundle.clothes, flow)?);
        agn.push(a.agnostic_img);
        keep.push(a.agnostic_mask.map(|m| 1.0 - m));
    }
    let clothes = Tensor::stack(&warped)?;
    let mask_c = Tensor::stack(&warped.iter().map(support).collect::<Vec<_>>())?;
    let agnostic = Tensor::stack(&agn)?;
    let fusion = Tensor::stack(&keep)?.reshape(&[tn, h, w, 1])?;
    let person = person_representation(&bundle, &table);
    let targets = garment_targets(&bundle, &table)?;
    let garment_mask =
        Tensor::stack(&targets.iter().map(support).collect::<Vec<_>>())?.reshape(&[tn, h, w, 1])?;
    let inputs = GeneratorTensors {
        clothes: &clothes,
        person: &person,
        agnostic: &agnostic,
        mask_c: &mask_c,
        fusion_mask: &fusion,
    };

    let mut model = Mpdt::new(toy.mpdt.clone(), InputChannels::default(), cfg.seed)?;
    let extractor = RandomConvExtractor::new(3, cfg.seed ^ 0x5eed);
    let disc = TemporalPatchDiscriminator::new(3, cfg.seed ^ 0xd15c);
    let loss_cfg = TryOnLossConfig {
        lambda4: toy.adversarial_weight,
        ..cfg.loss
    };
    let mut state = AdamState::new(AdamConfig {
        lr: toy.lr,
        ..cfg.adam
    });
    let names = model.params.names();
    let mut losses = Vec::with_capacity(toy.steps + 1);
    for step in 0..=toy.steps {
        let tape = Tape::new();
        let b = model.params.bind(&tape, true);
        let out = generator_forward(&b, &model.config, &inputs.bind(&tape))?;
        let d: Option<&dyn Discriminator> =
            (toy.adversarial_weight > 0.0).then_some(&disc as &dyn Discriminator);
        let terms = tryon_loss(
            out.output,
            tape.constant(bundle.frames.clone()),
            tape.constant(garment_mask.clone()),
            &loss_cfg,
            &extractor,
            d,
        )?;
        let loss = terms.total.item();
        if !loss.is_finite() {
            return Err(Error::Optimization {
                step,
                reason: format!("toy loss became {loss}"),
            });
        }
        losses.push(loss);
        if step == toy.steps {
            break;
        }
        let g = tape.backward(terms.total)?;
        let grads = names
            .iter()
            .map(|n| Ok(g.wrt(b.get(n)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut params: Vec<Tensor> = names
            .iter()
            .map(|n| model.params.get(n).unwrap().clone())
            .collect();
        adam_step(&mut params, &grads, &mut state).map_err(|e| match e {
            Error::Optimization { reason, .. } => Error::Optimization { step, reason },
            other => other,
        })?;
        for (n, p) in names.iter().zip(params) {
            model.params.insert(n.clone(), p);
        }
    }
    Ok(ToyReport { losses })
}
