//! Gaussian-mixture priors with closed-form denoiser, noise predictor and
//! denoiser Jacobian.
//!
//! Every component covariance is diagonalised once at construction
//! (`Sigma = U diag(lambda) U^T`, with `U = I` on the diagonal fast path), so
//! the noisy marginal `alpha^2 Sigma + sigma^2 I` shares the eigenbasis and
//! all per-time quantities reduce to elementwise operations on `lambda`.
//!
//! For a component `(w, mu, Sigma)` and a point `x` at time `t` the posterior
//! of `X_0` given `X_t = x` is Gaussian with
//!
//! ```text
//! mean  m(x) = mu + alpha Sigma (alpha^2 Sigma + sigma^2 I)^-1 (x - alpha mu)
//! cov   C    = sigma^2 Sigma (alpha^2 Sigma + sigma^2 I)^-1
//! ```
//!
//! and the mixture denoiser is the responsibility-weighted average of `m`.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::schedule::Schedule;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const WEIGHT_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn identity(dim: usize) -> Self {
        Covariance::Diagonal(DVector::from_element(dim, 1.0))
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(v),
            Covariance::Full(m) => m.clone(),
        }
    }
}

/// Cached symmetric factorisation `U diag(lambda) U^T`.
#[derive(Debug, Clone)]
struct Spectral {
    basis: Option<DMatrix<f64>>,
    eigvals: DVector<f64>,
}

impl Spectral {
    fn of(cov: &Covariance) -> Result<Self> {
        let spectral = match cov {
            Covariance::Diagonal(v) => Spectral {
                basis: None,
                eigvals: v.clone(),
            },
            Covariance::Full(m) => {
                if m.nrows() != m.ncols() {
                    return Err(Error::Shape("covariance must be square".into()));
                }
                let asym = (m - m.transpose()).amax();
                if asym > SYMMETRY_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "covariance not symmetric (max asymmetry {asym:e})"
                    )));
                }
                let eig = SymmetricEigen::new(m.clone());
                Spectral {
                    basis: Some(eig.eigenvectors),
                    eigvals: eig.eigenvalues,
                }
            }
        };
        if spectral.eigvals.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::InvalidParameter(
                "covariance must be positive definite".into(),
            ));
        }
        Ok(spectral)
    }

    /// `U^T v`
    fn rotate_in(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            None => v.clone(),
            Some(u) => u.tr_mul(v),
        }
    }

    /// `U v`
    fn rotate_out(&self, v: DVector<f64>) -> DVector<f64> {
        match &self.basis {
            None => v,
            Some(u) => u * v,
        }
    }

    /// `U diag(c) U^T`
    fn sandwich(&self, c: &DVector<f64>) -> DMatrix<f64> {
        match &self.basis {
            None => DMatrix::from_diagonal(c),
            Some(u) => {
                let mut scaled = u.clone();
                for (j, mut col) in scaled.column_iter_mut().enumerate() {
                    col *= c[j];
                }
                scaled * u.transpose()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Component {
    weight: f64,
    mean: DVector<f64>,
    cov: Covariance,
    spectral: Spectral,
}

impl Component {
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }
}

/// Per-component posterior of `X_0` given `X_t = x`, plus the pieces needed
/// for differentiating through it.
#[derive(Debug, Clone)]
pub struct ConditionalMixture {
    /// Normalised responsibilities `r_k(x)`.
    pub responsibilities: Vec<f64>,
    /// Unnormalised log responsibilities `log w_k + log N(x; alpha mu_k, V_k)`.
    pub log_weights: Vec<f64>,
    /// Component posterior means `m_k(x)`.
    pub means: Vec<DVector<f64>>,
    /// Component posterior covariances `C_k` (independent of `x`).
    pub covariances: Vec<DMatrix<f64>>,
    /// Jacobians `A_k = d m_k / d x`.
    pub gains: Vec<DMatrix<f64>>,
    /// Component marginal scores `g_k = -V_k^-1 (x - alpha mu_k)`.
    pub scores: Vec<DVector<f64>>,
}

impl ConditionalMixture {
    /// Weighted mean of the component scores, i.e. the marginal score.
    pub fn mean_score(&self) -> DVector<f64> {
        let dim = self.scores[0].len();
        self.responsibilities
            .iter()
            .zip(&self.scores)
            .fold(DVector::zeros(dim), |acc, (r, g)| acc + g * *r)
    }

    pub fn mean(&self) -> DVector<f64> {
        let dim = self.means[0].len();
        self.responsibilities
            .iter()
            .zip(&self.means)
            .fold(DVector::zeros(dim), |acc, (r, m)| acc + m * *r)
    }
}

/// Finite mixture of Gaussians in `R^d`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covs: Vec<Covariance>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        if weights.len() != means.len() || weights.len() != covs.len() {
            return Err(Error::Shape(format!(
                "{} weights, {} means, {} covariances",
                weights.len(),
                means.len(),
                covs.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::Shape("mixture dimension must be positive".into()));
        }
        if weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::InvalidParameter("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let mut components = Vec::with_capacity(weights.len());
        for ((weight, mean), cov) in weights.into_iter().zip(means).zip(covs) {
            if mean.len() != dim || cov.dim() != dim {
                return Err(Error::Shape(format!("component dimension differs from {dim}")));
            }
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericInput("component mean".into()));
            }
            let spectral = Spectral::of(&cov)?;
            components.push(Component {
                weight,
                mean,
                cov,
                spectral,
            });
        }
        Ok(Self { dim, components })
    }

    pub fn single(mean: DVector<f64>, cov: Covariance) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    /// Builds a mixture from weights that are positive but only approximately
    /// normalised, renormalising them first.
    pub fn from_unnormalized(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<Covariance>,
    ) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Numeric("mixture weights do not normalise".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect(), means, covs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.dim), |acc, c| acc + &c.mean * c.weight)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let second = self.components.iter().fold(DMatrix::zeros(self.dim, self.dim), |acc, c| {
            acc + (c.cov.to_dense() + &c.mean * c.mean.transpose()) * c.weight
        });
        second - &mean * mean.transpose()
    }

    /// Law of `X_t = alpha_t X_0 + sigma_t X_1` with `X_1 ~ N(0, I)`.
    pub fn marginal(&self, sched: Schedule, t: f64) -> Result<GaussianMixture> {
        let (alpha, sigma) = sched.eval(t)?;
        let (a2, s2) = (alpha * alpha, sigma * sigma);
        let components = self
            .components
            .iter()
            .map(|c| {
                let cov = match &c.cov {
                    Covariance::Diagonal(v) => Covariance::Diagonal(v.map(|l| a2 * l + s2)),
                    Covariance::Full(m) => {
                        let mut out = m * a2;
                        for i in 0..self.dim {
                            out[(i, i)] += s2;
                        }
                        Covariance::Full(out)
                    }
                };
                // Same eigenbasis; eigenvalues shift affinely.
                let spectral = Spectral {
                    basis: c.spectral.basis.clone(),
                    eigvals: c.spectral.eigvals.map(|l| a2 * l + s2),
                };
                Component {
                    weight: c.weight,
                    mean: &c.mean * alpha,
                    cov,
                    spectral,
                }
            })
            .collect();
        Ok(GaussianMixture {
            dim: self.dim,
            components,
        })
    }

    fn component_log_density(&self, c: &Component, x: &DVector<f64>) -> f64 {
        let r = c.spectral.rotate_in(&(x - &c.mean));
        let quad: f64 = r.iter().zip(c.spectral.eigvals.iter()).map(|(ri, l)| ri * ri / l).sum();
        let logdet: f64 = c.spectral.eigvals.iter().map(|l| l.ln()).sum();
        -0.5 * (quad + logdet + self.dim as f64 * LN_2PI)
    }

    fn log_joint(&self, x: &DVector<f64>) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.weight.ln() + self.component_log_density(c, x))
            .collect()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        log_sum_exp(&self.log_joint(x))
    }

    /// Posterior component probabilities given an observation `x` of this
    /// mixture itself.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Vec<f64> {
        normalize_log(&self.log_joint(x))
    }

    /// `grad log p(x)`.
    pub fn score(&self, x: &DVector<f64>) -> DVector<f64> {
        let resp = self.responsibilities(x);
        self.components
            .iter()
            .zip(resp)
            .fold(DVector::zeros(self.dim), |acc, (c, r)| acc + self.component_score(c, x) * r)
    }

    fn component_score(&self, c: &Component, x: &DVector<f64>) -> DVector<f64> {
        let r = c.spectral.rotate_in(&(x - &c.mean));
        let scaled = r.component_div(&c.spectral.eigvals);
        -c.spectral.rotate_out(scaled)
    }

    /// Hessian of `log p(x)`:
    /// `sum_k r_k (g_k g_k^T - P_k) - g g^T` with `P_k` the component precision.
    pub fn score_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let resp = self.responsibilities(x);
        let mut hess = DMatrix::zeros(self.dim, self.dim);
        let mut mean_score = DVector::zeros(self.dim);
        for (c, r) in self.components.iter().zip(resp) {
            let g = self.component_score(c, x);
            let precision = c.spectral.sandwich(&c.spectral.eigvals.map(|l| 1.0 / l));
            hess += (&g * g.transpose() - precision) * r;
            mean_score += g * r;
        }
        hess - &mean_score * mean_score.transpose()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = k;
                break;
            }
        }
        self.sample_component(chosen, rng)
    }

    pub fn sample_component<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> DVector<f64> {
        let c = &self.components[k];
        let eps = DVector::from_fn(self.dim, |i, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * c.spectral.eigvals[i].sqrt()
        });
        &c.mean + c.spectral.rotate_out(eps)
    }

    /// Exact law of `X_0 | X_t = x` as a mixture, in pieces.
    pub fn conditional(&self, sched: Schedule, x: &DVector<f64>, t: f64) -> Result<ConditionalMixture> {
        check_point(x, self.dim)?;
        let (alpha, sigma) = sched.eval(t)?;
        let (a2, s2) = (alpha * alpha, sigma * sigma);
        let n = self.components.len();
        let mut out = ConditionalMixture {
            responsibilities: Vec::with_capacity(n),
            log_weights: Vec::with_capacity(n),
            means: Vec::with_capacity(n),
            covariances: Vec::with_capacity(n),
            gains: Vec::with_capacity(n),
            scores: Vec::with_capacity(n),
        };
        for c in &self.components {
            let sp = &c.spectral;
            let var = sp.eigvals.map(|l| a2 * l + s2);
            let r = sp.rotate_in(&(x - &c.mean * alpha));
            let quad: f64 = r.iter().zip(var.iter()).map(|(ri, v)| ri * ri / v).sum();
            let logdet: f64 = var.iter().map(|v| v.ln()).sum();
            out.log_weights
                .push(c.weight.ln() - 0.5 * (quad + logdet + self.dim as f64 * LN_2PI));

            let gain = sp.eigvals.zip_map(&var, |l, v| alpha * l / v);
            out.means.push(&c.mean + sp.rotate_out(r.component_mul(&gain)));
            out.gains.push(sp.sandwich(&gain));
            out.covariances
                .push(sp.sandwich(&sp.eigvals.zip_map(&var, |l, v| l * s2 / v)));
            out.scores.push(-sp.rotate_out(r.component_div(&var)));
        }
        out.responsibilities = normalize_log(&out.log_weights);
        Ok(out)
    }

    /// `E[X_0 | X_t = x]` and the component responsibilities.
    pub fn denoise(&self, sched: Schedule, x: &DVector<f64>, t: f64) -> Result<(DVector<f64>, Vec<f64>)> {
        let cond = self.conditional(sched, x, t)?;
        if t == 0.0 {
            return Ok((x.clone(), cond.responsibilities));
        }
        Ok((cond.mean(), cond.responsibilities))
    }

    /// `E[X_1 | X_t = x]` via Tweedie duality; zero at `t = 0`.
    pub fn noise_predict(&self, sched: Schedule, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let (x0, _) = self.denoise(sched, x, t)?;
        let (alpha, sigma) = sched.eval(t)?;
        Ok(noise_from_denoised(x, &x0, alpha, sigma))
    }

    /// Jacobian of the denoiser:
    /// `sum_k r_k A_k + sum_k r_k m_k (g_k - g)^T`.
    pub fn denoiser_jacobian(&self, sched: Schedule, x: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        if t == 0.0 {
            return Err(Error::Capability(
                "denoiser Jacobian undefined at t = 0 (sigma_t = 0)".into(),
            ));
        }
        let cond = self.conditional(sched, x, t)?;
        Ok(jacobian_of(&cond))
    }

    /// Jacobian of the noise predictor computed from the marginal score,
    /// `d x1_hat / d x = -sigma_t * Hess log p_t(x)`. Independent of
    /// [`GaussianMixture::denoiser_jacobian`].
    pub fn noise_predictor_jacobian(&self, sched: Schedule, x: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        check_point(x, self.dim)?;
        let (_, sigma) = sched.eval(t)?;
        if sigma == 0.0 {
            return Err(Error::Capability(
                "noise-predictor Jacobian undefined at t = 0 (sigma_t = 0)".into(),
            ));
        }
        Ok(self.marginal(sched, t)?.score_hessian(x) * -sigma)
    }
}

pub(crate) fn jacobian_of(cond: &ConditionalMixture) -> DMatrix<f64> {
    let dim = cond.means[0].len();
    let mean_score = cond.mean_score();
    let mut jac = DMatrix::zeros(dim, dim);
    for k in 0..cond.means.len() {
        let r = cond.responsibilities[k];
        if r == 0.0 {
            continue;
        }
        jac += &cond.gains[k] * r;
        jac += (&cond.means[k] * (&cond.scores[k] - &mean_score).transpose()) * r;
    }
    jac
}

/// Tweedie duality `x1 = (x - alpha x0) / sigma`, with the exact `sigma = 0`
/// limit `x1 = 0`.
pub fn noise_from_denoised(x: &DVector<f64>, x0: &DVector<f64>, alpha: f64, sigma: f64) -> DVector<f64> {
    if sigma == 0.0 {
        return DVector::zeros(x.len());
    }
    x.zip_map(x0, |xi, x0i| (xi - alpha * x0i) / sigma)
}

pub(crate) fn check_point(x: &DVector<f64>, dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::Shape(format!("point has dimension {}, expected {dim}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("point contains non-finite entries".into()));
    }
    Ok(())
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn normalize_log(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| (v - lse).exp()).collect()
}

/// The model interface every sampler consumes.
///
/// Implementations must satisfy Tweedie duality: for `sigma_t > 0`,
/// `noise_predict(x, t) = (x - alpha_t denoise(x, t)) / sigma_t`.
pub trait Denoiser: Sync {
    fn dim(&self) -> usize;

    fn schedule(&self) -> Schedule;

    /// `x0_hat(x, t)`.
    fn denoise(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>>;

    /// `x1_hat(x, t)`.
    fn noise_predict(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let x0 = self.denoise(x, t)?;
        let (alpha, sigma) = self.schedule().eval(t)?;
        Ok(noise_from_denoised(x, &x0, alpha, sigma))
    }

    fn has_jacobian(&self) -> bool {
        false
    }

    /// `d x0_hat / d x`; only available when [`Denoiser::has_jacobian`].
    fn jacobian(&self, _x: &DVector<f64>, _t: f64) -> Result<DMatrix<f64>> {
        Err(Error::Capability("denoiser exposes no Jacobian".into()))
    }
}

/// Exact denoiser of a Gaussian-mixture prior.
#[derive(Debug, Clone)]
pub struct GmmDenoiser {
    prior: GaussianMixture,
    schedule: Schedule,
    identity_jacobian_at_zero: bool,
}

impl GmmDenoiser {
    pub fn new(prior: GaussianMixture, schedule: Schedule) -> Self {
        Self {
            prior,
            schedule,
            identity_jacobian_at_zero: false,
        }
    }

    /// Return the identity (the `x0_hat = x` limit) instead of an error when the
    /// Jacobian is requested at `t = 0`.
    pub fn with_identity_jacobian_at_zero(mut self, on: bool) -> Self {
        self.identity_jacobian_at_zero = on;
        self
    }

    pub fn prior(&self) -> &GaussianMixture {
        &self.prior
    }
}

impl Denoiser for GmmDenoiser {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn schedule(&self) -> Schedule {
        self.schedule
    }

    fn denoise(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.prior.denoise(self.schedule, x, t).map(|(x0, _)| x0)
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn jacobian(&self, x: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        if t == 0.0 && self.identity_jacobian_at_zero {
            check_point(x, self.prior.dim())?;
            return Ok(DMatrix::identity(self.prior.dim(), self.prior.dim()));
        }
        self.prior.denoiser_jacobian(self.schedule, x, t)
    }
}

/// Wraps a denoiser and counts calls into it.
#[derive(Debug)]
pub struct CountingDenoiser<D> {
    inner: D,
    evaluations: AtomicUsize,
    jacobian_calls: AtomicUsize,
}

impl<D: Denoiser> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            evaluations: AtomicUsize::new(0),
            jacobian_calls: AtomicUsize::new(0),
        }
    }

    /// Number of `denoise` plus `noise_predict` calls.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn jacobian_calls(&self) -> usize {
        self.jacobian_calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
        self.jacobian_calls.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn schedule(&self) -> Schedule {
        self.inner.schedule()
    }

    fn denoise(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.inner.denoise(x, t)
    }

    fn noise_predict(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.inner.noise_predict(x, t)
    }

    fn has_jacobian(&self) -> bool {
        self.inner.has_jacobian()
    }

    fn jacobian(&self, x: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        self.jacobian_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.jacobian(x, t)
    }
}
