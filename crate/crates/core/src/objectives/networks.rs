use crate::error::Result;
use crate::numcore::nn::{conv2d, conv3d};
use crate::numcore::{BoundParams, Init, ParamStore, Var};

/// A fixed feature map for the perceptual loss: T×H×W×C in, layers out.
pub trait FeatureExtractor {
    fn features<'t>(&self, x: Var<'t>) -> Result<Vec<Var<'t>>>;
}

/// The image itself as the only layer.
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features<'t>(&self, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        Ok(vec![x])
    }
}

/// Frozen stack of strided random 3×3 convolutions with ReLU; every layer's
/// output is a feature map.
#[derive(Clone, Debug)]
pub struct RandomConvExtractor {
    params: ParamStore,
    widths: Vec<usize>,
}

impl RandomConvExtractor {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        let widths = vec![8, 16, 16];
        let mut init = Init::new(seed);
        let mut params = ParamStore::new();
        let mut prev = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            init.layer(&mut params, &format!("feat{i}"), 9 * prev, w);
            prev = w;
        }
        Self { params, widths }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn features<'t>(&self, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        let b = self.params.bind(x.tape(), false);
        let mut out = Vec::with_capacity(self.widths.len());
        let mut h = x;
        for i in 0..self.widths.len() {
            let w = b.get(&format!("feat{i}.w"))?;
            let bias = b.get(&format!("feat{i}.b"))?;
            h = conv2d(h, w, bias, 3, 2, 1)?.relu();
            out.push(h);
        }
        Ok(out)
    }
}

/// Spatio-temporal scorer for the adversarial terms.
pub trait Discriminator {
    /// Scores with frozen parameters (for the generator's loss).
    fn score<'t>(&self, x: Var<'t>) -> Result<Var<'t>>;
}

/// Three 3×3×3 convolutions, spatially strided, ending in a one-channel
/// score map.
#[derive(Clone, Debug)]
pub struct TemporalPatchDiscriminator {
    pub params: ParamStore,
}

impl TemporalPatchDiscriminator {
    const WIDTHS: [usize; 3] = [8, 16, 1];

    pub fn new(in_channels: usize, seed: u64) -> Self {
        let mut init = Init::new(seed);
        let mut params = ParamStore::new();
        let mut prev = in_channels;
        for (i, &w) in Self::WIDTHS.iter().enumerate() {
            init.layer(&mut params, &format!("disc{i}"), 27 * prev, w);
            prev = w;
        }
        Self { params }
    }

    /// Scores with parameters bound by the caller, e.g. as trainable.
    pub fn score_with<'t>(&self, b: &BoundParams<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        let last = Self::WIDTHS.len() - 1;
        for i in 0..Self::WIDTHS.len() {
            let w = b.get(&format!("disc{i}.w"))?;
            let bias = b.get(&format!("disc{i}.b"))?;
            let stride = if i == last { 1 } else { 2 };
            h = conv3d(h, w, bias, 3, 3, 1, stride, 1, 1)?;
            if i != last {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

impl Discriminator for TemporalPatchDiscriminator {
    fn score<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let b = self.params.bind(x.tape(), false);
        self.score_with(&b, x)
    }
}
