//! Exact posterior quantities for Gaussian-mixture priors under a masked
//! Gaussian likelihood.
//!
//! Everything here is closed form: the posterior `pi_0(. | y)`, the
//! intermediate likelihood `l_t(y | x_t) = E[l(y | X_0) | X_t = x_t]`, its
//! gradient, and the posterior denoiser `E[X_0 | X_t = x_t, Y = y]`. Only
//! observed-coordinate submatrices are ever factorised.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::gmm::{check_point, log_sum_exp, normalize_log, Covariance, GaussianMixture};
use crate::problem::{log_likelihood, InpaintingProblem};
use crate::schedule::Schedule;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// `S = C_OO + gamma^2 I`, factorised.
fn innovation(cov: &DMatrix<f64>, observed: &[usize], gamma: f64) -> Result<Cholesky<f64, Dyn>> {
    let mut s = submatrix(cov, observed, observed);
    for i in 0..observed.len() {
        s[(i, i)] += gamma * gamma;
    }
    Cholesky::new(s).ok_or_else(|| Error::Numeric("observed covariance is not positive definite".into()))
}

/// `log N(r; 0, S)` for a factorised `S`.
fn log_normal_residual(chol: &Cholesky<f64, Dyn>, residual: &DVector<f64>) -> f64 {
    let l = chol.l();
    let z = l.solve_lower_triangular(residual).expect("Cholesky factor is nonsingular");
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (z.norm_squared() + logdet + residual.len() as f64 * LN_2PI)
}

/// Exact posterior mixture `pi_0(. | y) ∝ l(y | x0) p_0(x0)`.
///
/// Each component is updated by Gaussian conjugacy and reweighted by its
/// evidence `N(y_O; mu_O, Sigma_OO + gamma^2 I)`.
pub fn exact_posterior(problem: &InpaintingProblem, prior: &GaussianMixture) -> Result<GaussianMixture> {
    if problem.dim() != prior.dim() {
        return Err(Error::Shape("problem and prior dimensions differ".into()));
    }
    let observed = problem.mask().observed_indices();
    if observed.is_empty() {
        return Ok(prior.clone());
    }
    let gamma = problem.gamma();
    let y_obs = subvector(problem.y(), &observed);
    let mut log_weights = Vec::new();
    let mut means = Vec::new();
    let mut covs = Vec::new();
    for c in prior.components() {
        let sigma = c.covariance().to_dense();
        let chol = innovation(&sigma, &observed, gamma)?;
        let residual = &y_obs - subvector(c.mean(), &observed);
        log_weights.push(c.weight().ln() + log_normal_residual(&chol, &residual));

        let cross = DMatrix::from_fn(prior.dim(), observed.len(), |i, j| sigma[(i, observed[j])]);
        // gain = Sigma_{:,O} S^-1
        let gain = chol.solve(&cross.transpose()).transpose();
        means.push(c.mean() + &gain * residual);
        let post = &sigma - &gain * cross.transpose();
        let post = (&post + post.transpose()) * 0.5;
        covs.push(match c.covariance() {
            Covariance::Diagonal(_) => Covariance::Diagonal(post.diagonal()),
            Covariance::Full(_) => Covariance::Full(post),
        });
    }
    GaussianMixture::from_unnormalized(normalize_log(&log_weights), means, covs)
}

/// `log l_t(y | x_t)` with the same dropped constant as
/// [`crate::problem::log_likelihood`]; equals it exactly at `t = 0`.
pub fn exact_intermediate_loglik(
    problem: &InpaintingProblem,
    prior: &GaussianMixture,
    sched: Schedule,
    x_t: &DVector<f64>,
    t: f64,
) -> Result<f64> {
    check_point(x_t, prior.dim())?;
    if t == 0.0 {
        return Ok(log_likelihood(problem, x_t));
    }
    let observed = problem.mask().observed_indices();
    if observed.is_empty() {
        return Ok(0.0);
    }
    let terms = intermediate_terms(problem, prior, sched, x_t, t, &observed)?;
    let gamma = problem.gamma();
    Ok(log_sum_exp(&terms.log_posterior_weights)
        + 0.5 * observed.len() as f64 * (LN_2PI + 2.0 * gamma.ln()))
}

struct IntermediateTerms {
    /// `log r_k + log N(y_O; m_kO, C_kOO + gamma^2 I)`.
    log_posterior_weights: Vec<f64>,
    /// `grad log l_k` per component.
    data_grads: Vec<DVector<f64>>,
    /// `g_k - g`, the responsibility-gradient direction.
    score_offsets: Vec<DVector<f64>>,
}

fn intermediate_terms(
    problem: &InpaintingProblem,
    prior: &GaussianMixture,
    sched: Schedule,
    x_t: &DVector<f64>,
    t: f64,
    observed: &[usize],
) -> Result<IntermediateTerms> {
    let cond = prior.conditional(sched, x_t, t)?;
    let lse = log_sum_exp(&cond.log_weights);
    let mean_score = cond.mean_score();
    let y_obs = subvector(problem.y(), observed);
    let mut out = IntermediateTerms {
        log_posterior_weights: Vec::new(),
        data_grads: Vec::new(),
        score_offsets: Vec::new(),
    };
    for k in 0..cond.means.len() {
        let chol = innovation(&cond.covariances[k], observed, problem.gamma())?;
        let residual = &y_obs - subvector(&cond.means[k], observed);
        out.log_posterior_weights
            .push(cond.log_weights[k] - lse + log_normal_residual(&chol, &residual));
        let pulled = chol.solve(&residual);
        // A_k^T H^T S^-1 r with H the observed-coordinate selector.
        let gain_rows = DMatrix::from_fn(observed.len(), prior.dim(), |i, j| cond.gains[k][(observed[i], j)]);
        out.data_grads.push(gain_rows.tr_mul(&pulled));
        out.score_offsets.push(&cond.scores[k] - &mean_score);
    }
    Ok(out)
}

/// `grad_{x_t} log l_t(y | x_t)`, differentiated analytically through the
/// responsibilities and the component conditional means.
pub fn exact_guidance_grad(
    problem: &InpaintingProblem,
    prior: &GaussianMixture,
    sched: Schedule,
    x_t: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    check_point(x_t, prior.dim())?;
    let (_, sigma) = sched.eval(t)?;
    if sigma == 0.0 {
        return Err(Error::Domain("guidance gradient needs sigma_t > 0".into()));
    }
    let observed = problem.mask().observed_indices();
    if observed.is_empty() {
        return Ok(DVector::zeros(prior.dim()));
    }
    let terms = intermediate_terms(problem, prior, sched, x_t, t, &observed)?;
    let weights = normalize_log(&terms.log_posterior_weights);
    let mut grad = DVector::zeros(prior.dim());
    for (k, w) in weights.into_iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        grad += (&terms.score_offsets[k] + &terms.data_grads[k]) * w;
    }
    Ok(grad)
}

/// Central finite differences of [`exact_intermediate_loglik`], for
/// verifying [`exact_guidance_grad`].
pub fn guidance_grad_finite_difference(
    problem: &InpaintingProblem,
    prior: &GaussianMixture,
    sched: Schedule,
    x_t: &DVector<f64>,
    t: f64,
    h: f64,
) -> Result<DVector<f64>> {
    let mut grad = DVector::zeros(x_t.len());
    for j in 0..x_t.len() {
        let mut plus = x_t.clone();
        let mut minus = x_t.clone();
        plus[j] += h;
        minus[j] -= h;
        grad[j] = (exact_intermediate_loglik(problem, prior, sched, &plus, t)?
            - exact_intermediate_loglik(problem, prior, sched, &minus, t)?)
            / (2.0 * h);
    }
    Ok(grad)
}

/// `E[X_0 | X_t = x_t, Y = y] = x0_hat + (sigma_t^2 / alpha_t) grad log l_t`.
pub fn exact_posterior_denoiser(
    problem: &InpaintingProblem,
    prior: &GaussianMixture,
    sched: Schedule,
    x_t: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let (alpha, sigma) = sched.eval(t)?;
    if alpha == 0.0 {
        return Err(Error::Domain("posterior denoiser needs alpha_t > 0".into()));
    }
    let (x0, _) = prior.denoise(sched, x_t, t)?;
    if sigma == 0.0 {
        return Ok(x0);
    }
    let grad = exact_guidance_grad(problem, prior, sched, x_t, t)?;
    Ok(x0 + grad * (sigma * sigma / alpha))
}

/// The same posterior denoiser computed by conditioning on `y` first: the
/// denoiser of the exact posterior mixture. Shares no code path with the
/// guidance-gradient route beyond the mixture denoiser itself.
pub fn posterior_denoiser_direct(
    problem: &InpaintingProblem,
    prior: &GaussianMixture,
    sched: Schedule,
    x_t: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    exact_posterior(problem, prior)?.denoise(sched, x_t, t).map(|(x0, _)| x0)
}

/// Norm of the gap between the surrogate linearisation of the denoiser
/// around `z` (slope `I / alpha_s`) and its true first-order Taylor expansion
/// (slope `grad x0_hat(z, s)`), applied to `x - z`.
pub fn ding_gap(prior: &GaussianMixture, sched: Schedule, x: &DVector<f64>, z: &DVector<f64>, s: f64) -> Result<f64> {
    let (alpha, sigma) = sched.eval(s)?;
    if !(alpha > 0.0 && sigma > 0.0) {
        return Err(Error::Domain("ding gap needs alpha_s > 0 and sigma_s > 0".into()));
    }
    let (x0, _) = prior.denoise(sched, z, s)?;
    let jac = prior.denoiser_jacobian(sched, z, s)?;
    let delta = x - z;
    let surrogate = &x0 + &delta / alpha;
    let taylor = &x0 + jac * &delta;
    Ok((surrogate - taylor).norm())
}

/// `||(sigma_s / alpha_s) grad x1_hat(z, s) (x - z)||` with the noise
/// predictor Jacobian taken from the marginal score Hessian. Equal to
/// [`ding_gap`] by the second-order Tweedie identity.
pub fn ding_gap_from_noise_jacobian(
    prior: &GaussianMixture,
    sched: Schedule,
    x: &DVector<f64>,
    z: &DVector<f64>,
    s: f64,
) -> Result<f64> {
    let (alpha, sigma) = sched.eval(s)?;
    if !(alpha > 0.0 && sigma > 0.0) {
        return Err(Error::Domain("ding gap needs alpha_s > 0 and sigma_s > 0".into()));
    }
    let noise_jac = prior.noise_predictor_jacobian(sched, z, s)?;
    Ok((noise_jac * (x - z) * (sigma / alpha)).norm())
}

/// Exact posterior for a fixed problem and prior, cached.
#[derive(Debug, Clone)]
pub struct PosteriorOracle {
    problem: InpaintingProblem,
    prior: GaussianMixture,
    posterior: GaussianMixture,
}

impl PosteriorOracle {
    pub fn new(problem: InpaintingProblem, prior: GaussianMixture) -> Result<Self> {
        let posterior = exact_posterior(&problem, &prior)?;
        Ok(Self {
            problem,
            prior,
            posterior,
        })
    }

    pub fn posterior(&self) -> &GaussianMixture {
        &self.posterior
    }

    pub fn problem(&self) -> &InpaintingProblem {
        &self.problem
    }

    pub fn prior(&self) -> &GaussianMixture {
        &self.prior
    }

    pub fn intermediate_loglik(&self, sched: Schedule, x_t: &DVector<f64>, t: f64) -> Result<f64> {
        exact_intermediate_loglik(&self.problem, &self.prior, sched, x_t, t)
    }

    pub fn guidance_grad(&self, sched: Schedule, x_t: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        exact_guidance_grad(&self.problem, &self.prior, sched, x_t, t)
    }

    pub fn posterior_denoiser(&self, sched: Schedule, x_t: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        exact_posterior_denoiser(&self.problem, &self.prior, sched, x_t, t)
    }
}
