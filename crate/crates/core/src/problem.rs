//! Masked-observation inverse problems.
//!
//! The likelihood is `l(y | x0) ∝ exp(-||y - m ⊙ x0||^2 / (2 gamma^2))`; it
//! only sees the observed coordinates.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Binary coordinate mask; `true` marks an observed (preserved) coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskOperator {
    observed: Vec<bool>,
    observed_count: usize,
}

impl MaskOperator {
    pub fn new(observed: Vec<bool>) -> Self {
        let observed_count = observed.iter().filter(|&&b| b).count();
        Self {
            observed,
            observed_count,
        }
    }

    /// Parses a 0/1 vector; any other value is rejected.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        values
            .iter()
            .map(|&v| match v {
                1.0 => Ok(true),
                0.0 => Ok(false),
                other => Err(Error::InvalidParameter(format!("mask entry {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    pub fn all(dim: usize, observed: bool) -> Self {
        Self::new(vec![observed; dim])
    }

    pub fn dim(&self) -> usize {
        self.observed.len()
    }

    pub fn observed_count(&self) -> usize {
        self.observed_count
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.observed[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.observed[i]).collect()
    }

    /// `m ⊙ x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| if self.observed[i] { x[i] } else { 0.0 })
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| if self.observed[i] { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone)]
pub struct InpaintingProblem {
    mask: MaskOperator,
    y: DVector<f64>,
    gamma: f64,
    x_star: Option<DVector<f64>>,
}

impl InpaintingProblem {
    /// Builds a problem from an explicit observation. `y` must vanish off the
    /// observed support.
    pub fn new(mask: MaskOperator, y: DVector<f64>, gamma: f64, x_star: Option<DVector<f64>>) -> Result<Self> {
        check_gamma(gamma)?;
        if y.len() != mask.dim() || x_star.as_ref().is_some_and(|x| x.len() != mask.dim()) {
            return Err(Error::Shape("observation and mask dimensions differ".into()));
        }
        if (0..y.len()).any(|i| !mask.is_observed(i) && y[i] != 0.0) {
            return Err(Error::InvalidParameter(
                "observation must be zero on unobserved coordinates".into(),
            ));
        }
        if mask.observed_count() == 0 {
            log::warn!("mask observes no coordinate; the posterior equals the prior");
        }
        Ok(Self {
            mask,
            y,
            gamma,
            x_star,
        })
    }

    pub fn mask(&self) -> &MaskOperator {
        &self.mask
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn x_star(&self) -> Option<&DVector<f64>> {
        self.x_star.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.mask.dim()
    }

    /// Same observation with a different consistency scale.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            gamma,
            ..self.clone()
        })
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// `y = m ⊙ x_star`, plus `gamma * eps` on the observed coordinates when
/// `noisy` is set.
pub fn make_observation<R: Rng + ?Sized>(
    x_star: DVector<f64>,
    mask: MaskOperator,
    gamma: f64,
    rng: &mut R,
    noisy: bool,
) -> Result<InpaintingProblem> {
    check_gamma(gamma)?;
    if x_star.len() != mask.dim() {
        return Err(Error::Shape("reference and mask dimensions differ".into()));
    }
    let mut y = mask.apply(&x_star);
    if noisy {
        for i in mask.observed_indices() {
            let e: f64 = rng.sample(StandardNormal);
            y[i] += gamma * e;
        }
    }
    InpaintingProblem::new(mask, y, gamma, Some(x_star))
}

/// `-||y - m ⊙ x0||^2 / (2 gamma^2)` with the normalising constant dropped.
pub fn log_likelihood(problem: &InpaintingProblem, x0: &DVector<f64>) -> f64 {
    let sq: f64 = problem
        .mask
        .observed_indices()
        .into_iter()
        .map(|i| (problem.y[i] - x0[i]).powi(2))
        .sum();
    -sq / (2.0 * problem.gamma * problem.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::labeled_rng;
    use nalgebra::dvector;

    #[test]
    fn observation_examples() {
        let mut rng = labeled_rng(0, "obs");
        let p = make_observation(
            dvector![1.0, 2.0],
            MaskOperator::new(vec![true, false]),
            0.1,
            &mut rng,
            false,
        )
        .unwrap();
        assert_eq!(p.y(), &dvector![1.0, 0.0]);

        let x = dvector![0.5, -3.0, 2.0];
        let p = make_observation(x.clone(), MaskOperator::all(3, true), 0.1, &mut rng, false).unwrap();
        assert_eq!(p.y(), &x);

        assert!(make_observation(x.clone(), MaskOperator::all(3, true), 0.0, &mut rng, false).is_err());

        let p = make_observation(x, MaskOperator::new(vec![false, true, false]), 0.5, &mut rng, true).unwrap();
        assert_eq!(p.y()[0], 0.0);
        assert_eq!(p.y()[2], 0.0);
        assert_ne!(p.y()[1], -3.0);
    }

    #[test]
    fn empty_mask_is_allowed() {
        let mut rng = labeled_rng(0, "obs");
        let p = make_observation(dvector![1.0], MaskOperator::all(1, false), 1.0, &mut rng, false).unwrap();
        assert_eq!(p.mask().observed_count(), 0);
        assert_eq!(log_likelihood(&p, &dvector![5.0]), 0.0);
    }

    #[test]
    fn likelihood_examples() {
        let mask = MaskOperator::new(vec![true, false]);
        let p = InpaintingProblem::new(mask, dvector![2.0, 0.0], 1.0, None).unwrap();
        assert_eq!(log_likelihood(&p, &dvector![1.0, 7.0]), -0.5);
        assert_eq!(log_likelihood(&p, &dvector![1.0, -40.0]), -0.5);
        assert_eq!(log_likelihood(&p, &dvector![2.0, 3.0]), 0.0);

        let scaled = p.with_gamma(3.0).unwrap();
        let x = dvector![0.2, 1.0];
        assert!((log_likelihood(&scaled, &x) - log_likelihood(&p, &x) / 9.0).abs() < 1e-15);
    }

    #[test]
    fn observation_must_vanish_off_support() {
        let mask = MaskOperator::new(vec![true, false]);
        assert!(InpaintingProblem::new(mask, dvector![1.0, 1.0], 1.0, None).is_err());
    }

    #[test]
    fn mask_from_values() {
        let m = MaskOperator::from_values(&[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.observed_count(), 2);
        assert_eq!(m.observed_indices(), vec![0, 2]);
        assert!(MaskOperator::from_values(&[0.5]).is_err());
    }
}
