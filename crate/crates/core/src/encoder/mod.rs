//! Denoising autoencoder over distance matrices.
//!
//! Inputs are corrupted with the variance-preserving DDPM forward process
//! `x_t = α_t x_0 + σ_t ε` and the network is trained to return `x_0`
//! directly. The encoder half, run on clean input at `t = 0`, produces the
//! flow latent.

mod checkpoint;
mod metrics;
mod model;
mod schedule;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use metrics::{batch_metrics, metrics, psnr, rmse, ssim, ReconMetrics};
pub use model::{DaeArch, DaeGrads, DaeModel, FlowLatent};
pub use schedule::{corrupt, make_schedule, NoiseSchedule};
pub use train::{train_dae, DaeTrainConfig, TrainReport};
