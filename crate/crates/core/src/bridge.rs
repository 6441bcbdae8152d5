//! Marginal-preserving reverse transitions and the unconditional chain.
//!
//! The kernel family is
//! `q(x_s | x_0, x_1) = N(alpha_s x_0 + beta_s x_1, eta_s^2 I)` with
//! `eta_s = eta * sigma_s` and `beta_s = sigma_s * sqrt(1 - eta^2)`, so that
//! `eta_s^2 + beta_s^2 = sigma_s^2` and the draw has the law of `X_s` when
//! `x_0 ~ p_0` and `x_1 ~ N(0, I)` are independent. Replacing `x_0`, `x_1` by
//! the denoiser and noise predictor gives the practical reverse step.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::{check_point, noise_from_denoised, Denoiser};
use crate::metrics::SampleSet;
use crate::rng::{chain_rng, ChainRng};
use crate::schedule::{Schedule, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeKernel {
    eta: f64,
}

impl BridgeKernel {
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("eta = {eta} not in [0, 1]")));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Transition standard deviation `eta_s = eta * sigma_s`.
    pub fn noise_std(&self, sigma_s: f64) -> f64 {
        self.eta * sigma_s
    }

    /// Noise-predictor coefficient `beta_s = sigma_s sqrt(1 - eta^2)`.
    pub fn noise_coef(&self, sigma_s: f64) -> f64 {
        sigma_s * (1.0 - self.eta * self.eta).sqrt()
    }

    /// Mean and std of the step to time `s` from given clean/noise estimates.
    pub fn params_from_estimates(
        &self,
        sched: Schedule,
        x0: &DVector<f64>,
        x1: &DVector<f64>,
        s: f64,
    ) -> Result<TransitionParams> {
        let (alpha_s, sigma_s) = sched.eval(s)?;
        let beta_s = self.noise_coef(sigma_s);
        let mean = x0.zip_map(x1, |a, b| alpha_s * a + beta_s * b);
        Ok(TransitionParams {
            mean,
            std: self.noise_std(sigma_s),
        })
    }
}

/// Isotropic Gaussian `N(mean, std^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionParams {
    pub mean: DVector<f64>,
    pub std: f64,
}

pub(crate) fn check_order(s: f64, t: f64) -> Result<()> {
    if s.is_nan() || t.is_nan() || s >= t || s < 0.0 || t > 1.0 {
        return Err(Error::Ordering { s, t });
    }
    Ok(())
}

/// Parameters of the approximate reverse transition `p(x_s | x_t)`.
pub fn transition_params(
    kernel: &BridgeKernel,
    denoiser: &dyn Denoiser,
    x_t: &DVector<f64>,
    s: f64,
    t: f64,
) -> Result<TransitionParams> {
    check_order(s, t)?;
    let sched = denoiser.schedule();
    let x0 = denoiser.denoise(x_t, t)?;
    let (alpha_t, sigma_t) = sched.eval(t)?;
    let x1 = noise_from_denoised(x_t, &x0, alpha_t, sigma_t);
    kernel.params_from_estimates(sched, &x0, &x1, s)
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// `mean + std * eps`. Always consumes exactly `d` normals from `rng`.
pub fn sample_transition<R: Rng + ?Sized>(params: &TransitionParams, rng: &mut R) -> DVector<f64> {
    let eps = standard_normal(params.mean.len(), rng);
    params.mean.zip_map(&eps, |m, e| m + params.std * e)
}

/// Runs `n_chains` independent reverse chains from `N(0, I)` at `t = 1`
/// down to `t = 0`. Chain `j` draws from `chain_rng(seed, j)`.
pub fn run_unconditional(
    denoiser: &dyn Denoiser,
    grid: &TimeGrid,
    kernel: &BridgeKernel,
    seed: u64,
    n_chains: usize,
) -> Result<SampleSet> {
    if n_chains == 0 {
        return Err(Error::InvalidParameter("n_chains must be at least 1".into()));
    }
    let dim = denoiser.dim();
    let rows: Vec<DVector<f64>> = (0..n_chains)
        .into_par_iter()
        .map(|j| {
            let mut rng = chain_rng(seed, j as u64);
            let x1 = standard_normal(dim, &mut rng);
            unconditional_chain(denoiser, grid, kernel, x1, &mut rng)
        })
        .collect::<Result<_>>()?;
    SampleSet::from_rows(&rows)
}

/// One reverse chain from a given `x_1`.
pub fn unconditional_chain(
    denoiser: &dyn Denoiser,
    grid: &TimeGrid,
    kernel: &BridgeKernel,
    x1: DVector<f64>,
    rng: &mut ChainRng,
) -> Result<DVector<f64>> {
    check_point(&x1, denoiser.dim())?;
    let mut x = x1;
    for (s, t) in grid.reverse_pairs() {
        let params = transition_params(kernel, denoiser, &x, s, t)?;
        x = sample_transition(&params, rng);
    }
    Ok(x)
}
