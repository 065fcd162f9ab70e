//! Diffusion over the latent space of a frozen VAE.

pub mod model;
pub mod sampler;
pub mod schedule;

pub use model::{
    sdrm_loss, sdrm_loss_at, sdrm_loss_with, timestep_embedding, train_sdrm, DiffusionGrads, DiffusionHeader,
    DiffusionModel, SdrmDraws, SdrmHyper, TrainedSdrm, EMBED_DIM,
};
pub use sampler::{sample_latents, NoisePredictor, SampledLatents, SamplerMode};
pub use schedule::{q_sample, NoiseSchedule};
