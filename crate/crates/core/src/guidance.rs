//! Training-free guided samplers for masked inverse problems.
//!
//! Each method biases the reverse transition `x_t -> x_s` towards the
//! posterior `pi_0(. | y)`:
//!
//! - **ding**: draws an auxiliary `z_s` from the unconditional transition,
//!   evaluates the noise predictor there, and then samples `x_s` exactly from
//!   the Gaussian product of the transition and the surrogate likelihood
//!   `N(y; (m / alpha_s) ⊙ (x_s - sigma_s e), gamma^2 I)`. No denoiser
//!   Jacobian is ever requested.
//! - **dps**: point-estimate likelihood `l(y | x0_hat)`; its gradient through
//!   the denoiser Jacobian corrects `x0_hat` by `zeta sigma_t^2 / alpha_t`.
//! - **ddnm**: hard projection of `x0_hat` onto the observation.
//! - **diffpir**: data-proximal step on `x0_hat` with strength
//!   `rho_t = lambda alpha_t^2 / sigma_t^2`.
//! - **blended**: replays the noised reference on the observed support.
//!
//! The ddnm, diffpir and blended updates are the usual mask-specialised forms
//! of those baselines; their knobs (`lambda`, `zeta`) are calibration choices
//! of this crate.
//!
//! Randomness is drawn per step in a fixed order: transition noise (or the
//! `z_s` draws for ding), then any method-specific draw (reference noise for
//! blended, the conjugate draw for ding).

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::bridge::{check_order, sample_transition, standard_normal, transition_params, BridgeKernel};
use crate::error::{Error, Result};
use crate::gmm::{noise_from_denoised, Denoiser};
use crate::metrics::SampleSet;
use crate::problem::InpaintingProblem;
use crate::rng::chain_rng;
use crate::schedule::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Blended,
    Dps,
    Ding,
    Ddnm,
    Diffpir,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Blended, Method::Dps, Method::Ding, Method::Ddnm, Method::Diffpir];

    pub fn name(self) -> &'static str {
        match self {
            Method::Blended => "blended",
            Method::Dps => "dps",
            Method::Ding => "ding",
            Method::Ddnm => "ddnm",
            Method::Diffpir => "diffpir",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{}`", s.trim())))
    }
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub method: Method,
    pub grid: TimeGrid,
    pub eta: f64,
    /// Consistency scale used inside the sampler.
    pub gamma: f64,
    /// `zeta`, dps only.
    pub dps_scale: f64,
    /// `lambda`, diffpir only.
    pub diffpir_lambda: f64,
    /// Number of `z_s` draws averaged per step, ding only.
    pub ding_nz: usize,
    /// Overwrite observed coordinates of the terminal state with `y`.
    pub final_replacement: bool,
    pub seed: u64,
    pub n_chains: usize,
    pub record_trajectories: bool,
}

impl SamplerConfig {
    pub fn new(method: Method, grid: TimeGrid, gamma: f64) -> Self {
        Self {
            method,
            grid,
            eta: 0.8,
            gamma,
            dps_scale: 1.0,
            diffpir_lambda: 1.0,
            ding_nz: 1,
            final_replacement: true,
            seed: 0,
            n_chains: 1,
            record_trajectories: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        BridgeKernel::new(self.eta)?;
        positive("gamma", self.gamma)?;
        positive("dps_scale", self.dps_scale)?;
        positive("diffpir_lambda", self.diffpir_lambda)?;
        if self.ding_nz == 0 {
            return Err(Error::InvalidParameter("ding_nz must be at least 1".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::InvalidParameter("n_chains must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub x0_hat: DVector<f64>,
}

/// Chain states from `t = 1` down to `t = 0` (`K + 1` records).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub terminal: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub samples: SampleSet,
    /// One entry per chain when `record_trajectories` is set, else empty.
    pub trajectories: Vec<Trajectory>,
}

/// Everything a single guided step needs besides the state and the RNG.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub problem: &'a InpaintingProblem,
    pub kernel: BridgeKernel,
    pub denoiser: &'a dyn Denoiser,
    pub cfg: &'a SamplerConfig,
}

impl<'a> StepContext<'a> {
    pub fn new(problem: &'a InpaintingProblem, denoiser: &'a dyn Denoiser, cfg: &'a SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        if problem.dim() != denoiser.dim() {
            return Err(Error::Shape(format!(
                "problem dimension {} vs denoiser dimension {}",
                problem.dim(),
                denoiser.dim()
            )));
        }
        Ok(Self {
            problem,
            kernel: BridgeKernel::new(cfg.eta)?,
            denoiser,
            cfg,
        })
    }

    fn coefficients(&self, t: f64) -> Result<(f64, f64)> {
        self.denoiser.schedule().eval(t)
    }

    /// Transition to `s` from corrected estimates of `x0` and `x1`.
    fn transition_from<R: Rng + ?Sized>(
        &self,
        x0: &DVector<f64>,
        x1: &DVector<f64>,
        s: f64,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let params = self.kernel.params_from_estimates(self.denoiser.schedule(), x0, x1, s)?;
        Ok(sample_transition(&params, rng))
    }

    pub fn step<R: Rng + ?Sized>(&self, x_t: &DVector<f64>, s: f64, t: f64, rng: &mut R) -> Result<DVector<f64>> {
        match self.cfg.method {
            Method::Blended => step_blended(self, x_t, s, t, rng),
            Method::Dps => step_dps(self, x_t, s, t, rng),
            Method::Ding => step_ding(self, x_t, s, t, rng),
            Method::Ddnm => step_ddnm(self, x_t, s, t, rng),
            Method::Diffpir => step_diffpir(self, x_t, s, t, rng),
        }
    }
}

/// Unconditional transition, then the observed coordinates are replaced by
/// `alpha_s x_star + sigma_s eps` with fresh noise.
pub fn step_blended<R: Rng + ?Sized>(
    ctx: &StepContext<'_>,
    x_t: &DVector<f64>,
    s: f64,
    t: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let x_star = ctx
        .problem
        .x_star()
        .ok_or_else(|| Error::Capability("blended sampling needs the reference x_star".into()))?;
    let params = transition_params(&ctx.kernel, ctx.denoiser, x_t, s, t)?;
    let mut x_s = sample_transition(&params, rng);
    let (alpha_s, sigma_s) = ctx.coefficients(s)?;
    for i in ctx.problem.mask().observed_indices() {
        let e: f64 = rng.sample(rand_distr::StandardNormal);
        x_s[i] = alpha_s * x_star[i] + sigma_s * e;
    }
    Ok(x_s)
}

/// Point-estimate guidance through the denoiser Jacobian.
///
/// At `t = 1` (`alpha_t = 0`) the factor `sigma_t^2 / alpha_t` is singular;
/// the correction is then evaluated at the next grid time `s` instead.
pub fn step_dps<R: Rng + ?Sized>(
    ctx: &StepContext<'_>,
    x_t: &DVector<f64>,
    s: f64,
    t: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_order(s, t)?;
    if !ctx.denoiser.has_jacobian() {
        return Err(Error::Capability("dps needs a denoiser Jacobian".into()));
    }
    let (alpha_t, sigma_t) = ctx.coefficients(t)?;
    let x0 = ctx.denoiser.denoise(x_t, t)?;

    let t_eval = if alpha_t > 0.0 { t } else { s };
    let (alpha_e, sigma_e) = ctx.coefficients(t_eval)?;
    let mut x0_corr = x0.clone();
    if sigma_e > 0.0 {
        let (jac, x0_eval) = if t_eval == t {
            (ctx.denoiser.jacobian(x_t, t)?, x0.clone())
        } else {
            (ctx.denoiser.jacobian(x_t, t_eval)?, ctx.denoiser.denoise(x_t, t_eval)?)
        };
        let gamma2 = ctx.cfg.gamma * ctx.cfg.gamma;
        let residual = ctx.problem.mask().apply(&(ctx.problem.y() - &x0_eval)) / gamma2;
        let grad = jac.tr_mul(&residual);
        x0_corr += grad * (ctx.cfg.dps_scale * sigma_e * sigma_e / alpha_e);
    }
    let x1_corr = noise_from_denoised(x_t, &x0_corr, alpha_t, sigma_t);
    ctx.transition_from(&x0_corr, &x1_corr, s, rng)
}

/// Gaussian-conjugate guided step. Never touches the denoiser Jacobian.
pub fn step_ding<R: Rng + ?Sized>(
    ctx: &StepContext<'_>,
    x_t: &DVector<f64>,
    s: f64,
    t: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let params = transition_params(&ctx.kernel, ctx.denoiser, x_t, s, t)?;
    let std = params.std;
    if std == 0.0 {
        return Ok(params.mean);
    }
    let dim = params.mean.len();
    let nz = ctx.cfg.ding_nz;
    let mut e = DVector::zeros(dim);
    for _ in 0..nz {
        let z = sample_transition(&params, rng);
        e += ctx.denoiser.noise_predict(&z, s)?;
    }
    e /= nz as f64;

    let (alpha_s, sigma_s) = ctx.coefficients(s)?;
    let prior_var = std * std;
    let obs_var = alpha_s * alpha_s * ctx.cfg.gamma * ctx.cfg.gamma;
    let y = ctx.problem.y();
    let mask = ctx.problem.mask();
    let eps = standard_normal(dim, rng);
    Ok(DVector::from_fn(dim, |i, _| {
        let mu = params.mean[i];
        if mask.is_observed(i) {
            let u = alpha_s * y[i] + sigma_s * e[i];
            let (mean, var) = conjugate_update(mu, prior_var, u, obs_var);
            mean + var.sqrt() * eps[i]
        } else {
            mu + std * eps[i]
        }
    }))
}

/// Posterior `(mean, variance)` of `x ~ N(mu, prior_var)` observed through
/// `u ~ N(x, obs_var)`.
pub fn conjugate_update(mu: f64, prior_var: f64, u: f64, obs_var: f64) -> (f64, f64) {
    let total = prior_var + obs_var;
    ((obs_var * mu + prior_var * u) / total, prior_var * obs_var / total)
}

/// Replaces the observed part of `x0_hat` with `y`.
pub fn step_ddnm<R: Rng + ?Sized>(
    ctx: &StepContext<'_>,
    x_t: &DVector<f64>,
    s: f64,
    t: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_order(s, t)?;
    let (alpha_t, sigma_t) = ctx.coefficients(t)?;
    let mut x0 = ctx.denoiser.denoise(x_t, t)?;
    let y = ctx.problem.y();
    for i in ctx.problem.mask().observed_indices() {
        x0[i] = y[i];
    }
    let x1 = noise_from_denoised(x_t, &x0, alpha_t, sigma_t);
    ctx.transition_from(&x0, &x1, s, rng)
}

/// Proximal data step on the observed part of `x0_hat`.
pub fn step_diffpir<R: Rng + ?Sized>(
    ctx: &StepContext<'_>,
    x_t: &DVector<f64>,
    s: f64,
    t: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_order(s, t)?;
    let (alpha_t, sigma_t) = ctx.coefficients(t)?;
    let mut x0 = ctx.denoiser.denoise(x_t, t)?;
    if sigma_t > 0.0 {
        let rho = ctx.cfg.diffpir_lambda * alpha_t * alpha_t / (sigma_t * sigma_t);
        let data_prec = 1.0 / (ctx.cfg.gamma * ctx.cfg.gamma);
        let y = ctx.problem.y();
        for i in ctx.problem.mask().observed_indices() {
            x0[i] = (y[i] * data_prec + rho * x0[i]) / (data_prec + rho);
        }
    }
    let x1 = noise_from_denoised(x_t, &x0, alpha_t, sigma_t);
    ctx.transition_from(&x0, &x1, s, rng)
}

/// Runs `cfg.n_chains` guided chains. Chain `j` draws from
/// `chain_rng(cfg.seed, j)`, starting with its `x_1 ~ N(0, I)`.
pub fn run_conditional(problem: &InpaintingProblem, denoiser: &dyn Denoiser, cfg: &SamplerConfig) -> Result<RunOutput> {
    let ctx = StepContext::new(problem, denoiser, cfg)?;
    match cfg.method {
        Method::Blended if problem.x_star().is_none() => {
            return Err(Error::Capability("blended sampling needs the reference x_star".into()))
        }
        Method::Dps if !denoiser.has_jacobian() => {
            return Err(Error::Capability("dps needs a denoiser Jacobian".into()))
        }
        _ => {}
    }
    let dim = problem.dim();
    let chains: Vec<(DVector<f64>, Option<Trajectory>)> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|j| {
            let mut rng = chain_rng(cfg.seed, j as u64);
            let mut x = standard_normal(dim, &mut rng);
            let mut records = Vec::new();
            for (s, t) in cfg.grid.reverse_pairs() {
                if cfg.record_trajectories {
                    records.push(TrajectoryRecord {
                        t,
                        x0_hat: denoiser.denoise(&x, t)?,
                        x: x.clone(),
                    });
                }
                x = ctx.step(&x, s, t, &mut rng)?;
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numeric(format!("chain {j} diverged at t = {s}")));
                }
            }
            if cfg.final_replacement {
                let y = problem.y();
                for i in problem.mask().observed_indices() {
                    x[i] = y[i];
                }
            }
            let trajectory = cfg.record_trajectories.then(|| {
                records.push(TrajectoryRecord {
                    t: 0.0,
                    x: x.clone(),
                    x0_hat: x.clone(),
                });
                Trajectory {
                    records,
                    terminal: x.clone(),
                }
            });
            Ok((x, trajectory))
        })
        .collect::<Result<_>>()?;
    let (rows, trajectories): (Vec<_>, Vec<_>) = chains.into_iter().unzip();
    Ok(RunOutput {
        samples: SampleSet::from_rows(&rows)?,
        trajectories: trajectories.into_iter().flatten().collect(),
    })
}
