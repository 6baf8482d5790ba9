//! Try-on losses, the Adam optimizer and evaluation metrics.

mod adam;
mod losses;
mod metrics;
mod networks;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use losses::{
    l1_clothes, l1_whole, perceptual_loss, tpgan_d_loss, tpgan_g_loss, tryon_loss, TryOnLossConfig,
    TryOnTerms,
};
pub use metrics::{frechet_distance, ssim, ssim_sequence};
pub use networks::{
    Discriminator, FeatureExtractor, IdentityExtractor, RandomConvExtractor,
    TemporalPatchDiscriminator,
};
