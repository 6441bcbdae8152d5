//! Inpainting with pretrained denoisers on Gaussian-mixture priors: noise
//! schedules, closed-form mixture denoisers, the stochastic bridge sampler,
//! guided samplers, exact posterior oracles, latent mask lifting and
//! sample-quality metrics.

pub mod bridge;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod guidance;
pub mod io;
pub mod masklift;
pub mod metrics;
pub mod oracle;
pub mod problem;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
pub use gmm::{Covariance, Denoiser, GaussianMixture, GmmDenoiser};
pub use schedule::{Schedule, Spacing, TimeGrid};
