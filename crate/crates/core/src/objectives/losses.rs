use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::nn::tile_channels;
use crate::numcore::Var;

use super::networks::{Discriminator, FeatureExtractor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TryOnLossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for TryOnLossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 10.0,
            lambda3: 1.0,
            lambda4: 0.01,
        }
    }
}

impl TryOnLossConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
            .iter()
            .any(|l| !(*l >= 0.0))
        {
            return Err(Error::Config(
                "try-on loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn same_shape(op: &'static str, a: Var<'_>, b: Var<'_>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::dim(op, &sa, &sb));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_whole<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    same_shape("l1_whole", pred, target)?;
    Ok(pred.sub(target)?.abs().mean())
}

/// `Σ|M ⊙ (I − Ĩ)| / ΣM`; a one-channel mask is broadcast over channels
/// (and counted once per channel).
pub fn l1_clothes<'t>(pred: Var<'t>, target: Var<'t>, mask: Var<'t>) -> Result<Var<'t>> {
    same_shape("l1_clothes", pred, target)?;
    let c = *pred.shape().last().unwrap_or(&1);
    let m = match mask.shape().last() {
        Some(&1) if c != 1 => tile_channels(mask, c)?,
        _ => mask,
    };
    same_shape("l1_clothes", pred, m)?;
    let total = m.value().sum();
    if total == 0.0 {
        return Err(Error::contract("l1_clothes: clothes mask is empty"));
    }
    let num = m.mul(pred.sub(target)?)?.abs().sum();
    Ok(num.scale(1.0 / total))
}

/// `Σ_i mean|F_i(pred) − F_i(target)|`.
pub fn perceptual_loss<'t>(
    pred: Var<'t>,
    target: Var<'t>,
    extractor: &dyn FeatureExtractor,
) -> Result<Var<'t>> {
    same_shape("perceptual_loss", pred, target)?;
    let fp = extractor.features(pred)?;
    let ft = extractor.features(target)?;
    if fp.len() != ft.len() || fp.is_empty() {
        return Err(Error::contract(format!(
            "perceptual_loss: {} vs {} feature layers",
            fp.len(),
            ft.len()
        )));
    }
    let mut total: Option<Var<'t>> = None;
    for (a, b) in fp.into_iter().zip(ft) {
        let term = l1_whole(a, b)?;
        total = Some(match total {
            None => term,
            Some(t) => t.add(term)?,
        });
    }
    Ok(total.unwrap())
}

/// `−mean D(z)`.
pub fn tpgan_g_loss(fake_scores: Var<'_>) -> Var<'_> {
    fake_scores.mean().neg()
}

/// `mean relu(1 − D(x)) + mean relu(1 + D(z))`.
pub fn tpgan_d_loss<'t>(real_scores: Var<'t>, fake_scores: Var<'t>) -> Result<Var<'t>> {
    let r = real_scores.neg().offset(1.0).relu().mean();
    let f = fake_scores.offset(1.0).relu().mean();
    r.add(f)
}

/// The four unweighted terms and their weighted total.
pub struct TryOnTerms<'t> {
    pub whole: Var<'t>,
    pub clothes: Var<'t>,
    pub perceptual: Var<'t>,
    /// Absent when no discriminator is supplied.
    pub adversarial: Option<Var<'t>>,
    pub total: Var<'t>,
}

/// λ1·L1_whole + λ2·L1_clothes + λ3·L_perc + λ4·L_G.
pub fn tryon_loss<'t>(
    pred: Var<'t>,
    target: Var<'t>,
    clothes_mask: Var<'t>,
    cfg: &TryOnLossConfig,
    extractor: &dyn FeatureExtractor,
    discriminator: Option<&dyn Discriminator>,
) -> Result<TryOnTerms<'t>> {
    cfg.validate()?;
    let whole = l1_whole(pred, target)?;
    let clothes = l1_clothes(pred, target, clothes_mask)?;
    let perceptual = perceptual_loss(pred, target, extractor)?;
    let mut total = whole
        .scale(cfg.lambda1)
        .add(clothes.scale(cfg.lambda2))?
        .add(perceptual.scale(cfg.lambda3))?;
    let adversarial = match discriminator {
        Some(d) => {
            let g = tpgan_g_loss(d.score(pred)?);
            total = total.add(g.scale(cfg.lambda4))?;
            Some(g)
        }
        None => None,
    };
    Ok(TryOnTerms {
        whole,
        clothes,
        perceptual,
        adversarial,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Tape, Tensor};

    #[test]
    fn hinge_examples() {
        let tape = Tape::new();
        let s = |v: f64| tape.constant(Tensor::full(&[2, 3], v));
        assert_eq!(tpgan_d_loss(s(2.0), s(-3.0)).unwrap().item(), 0.0);
        assert_eq!(tpgan_d_loss(s(0.0), s(0.0)).unwrap().item(), 2.0);
        assert_eq!(tpgan_g_loss(s(0.5)).item(), -0.5);
    }

    #[test]
    fn clothes_l1_single_pixel_and_empty_mask() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[1, 2, 2, 1]));
        let b = tape.constant(Tensor::full(&[1, 2, 2, 1], 0.3));
        let mut m = Tensor::zeros(&[1, 2, 2, 1]);
        m.set(&[0, 1, 0, 0], 1.0);
        let v = l1_clothes(a, b, tape.constant(m)).unwrap().item();
        assert!((v - 0.3).abs() < 1e-15);
        let r = l1_clothes(a, b, tape.constant(Tensor::zeros(&[1, 2, 2, 1])));
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
