//! Sample containers and evaluation metrics: context PSNR over observed
//! coordinates, sliced Wasserstein-2 between empirical sample sets, and
//! moment errors against a reference mixture.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::problem::MaskOperator;
use crate::rng::labeled_rng;

pub const DEFAULT_PROJECTIONS: usize = 128;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
}

/// `n x d` matrix of terminal states, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    n: usize,
    d: usize,
    data: Vec<f64>,
    pub provenance: Provenance,
}

impl SampleSet {
    pub fn from_row_major(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Shape("sample set needs n >= 1 and d >= 1".into()));
        }
        if data.len() != n * d {
            return Err(Error::Shape(format!("{} values for a {n} x {d} sample set", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("sample set contains non-finite entries".into()));
        }
        Ok(Self {
            n,
            d,
            data,
            provenance: Provenance::default(),
        })
    }

    pub fn from_rows(rows: &[DVector<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("rows of differing dimension".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_row_major(rows.len(), d, data)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn row_vector(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.d);
        for row in self.rows() {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        m / self.n as f64
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if self.n < 2 {
            return Err(Error::InvalidParameter("covariance needs at least two samples".into()));
        }
        let mean = self.mean();
        let mut c = DMatrix::zeros(self.d, self.d);
        for row in self.rows() {
            let r = DVector::from_column_slice(row) - &mean;
            c += &r * r.transpose();
        }
        Ok(c / (self.n - 1) as f64)
    }

    /// Projections of every row onto `direction`.
    fn project(&self, direction: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().zip(direction).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Value meaning "exact match" for [`cpsnr`].
pub const CPSNR_EXACT: f64 = f64::INFINITY;

/// PSNR restricted to the observed coordinates of `mask`, in dB. Returns
/// [`CPSNR_EXACT`] when the observed coordinates agree exactly.
pub fn cpsnr(x: &DVector<f64>, x_ref: &DVector<f64>, mask: &MaskOperator, peak: f64) -> Result<f64> {
    cpsnr_pooled(std::slice::from_ref(x), x_ref, mask, peak)
}

/// cPSNR of several samples against one reference, with the squared error
/// averaged over all samples and observed coordinates.
pub fn cpsnr_pooled(xs: &[DVector<f64>], x_ref: &DVector<f64>, mask: &MaskOperator, peak: f64) -> Result<f64> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::InvalidParameter(format!("peak must be positive, got {peak}")));
    }
    let observed = mask.observed_indices();
    if observed.is_empty() {
        return Err(Error::InvalidParameter("cPSNR needs at least one observed coordinate".into()));
    }
    if xs.is_empty() || x_ref.len() != mask.dim() || xs.iter().any(|x| x.len() != mask.dim()) {
        return Err(Error::Shape("cPSNR inputs and mask dimensions differ".into()));
    }
    let mut sq = 0.0;
    for x in xs {
        for &i in &observed {
            sq += (x[i] - x_ref[i]).powi(2);
        }
    }
    let mse = sq / (observed.len() * xs.len()) as f64;
    if mse == 0.0 {
        return Ok(CPSNR_EXACT);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Quantile function of sorted `values` at level `u` in `(0, 1)`, linearly
/// interpolated between order statistics placed at `(i + 1/2) / n`.
fn quantile(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    let pos = u * n as f64 - 0.5;
    if pos <= 0.0 {
        return sorted[0];
    }
    if pos >= (n - 1) as f64 {
        return sorted[n - 1];
    }
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        return sorted[lo];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Squared 1-D Wasserstein-2 distance between two empirical samples.
///
/// Equal sizes pair order statistics exactly; unequal sizes compare both
/// quantile functions on `max(n, m)` midpoint levels.
pub fn w2_squared_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    }
    let levels = a.len().max(b.len());
    (0..levels)
        .map(|i| {
            let u = (i as f64 + 0.5) / levels as f64;
            (quantile(a, u) - quantile(b, u)).powi(2)
        })
        .sum::<f64>()
        / levels as f64
}

/// `L` uniformly distributed unit directions in `R^d`.
pub fn random_directions(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = labeled_rng(seed, "sliced-w2/directions");
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Sliced W2 over explicit projection directions.
pub fn sliced_w2_with_directions(a: &SampleSet, b: &SampleSet, directions: &[Vec<f64>]) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("sample dimensions {} and {} differ", a.dim(), b.dim())));
    }
    if directions.is_empty() {
        return Err(Error::InvalidParameter("sliced W2 needs at least one projection".into()));
    }
    if directions.iter().any(|v| v.len() != a.dim()) {
        return Err(Error::Shape("projection direction dimension mismatch".into()));
    }
    let total: f64 = directions
        .iter()
        .map(|dir| w2_squared_1d(&mut a.project(dir), &mut b.project(dir)))
        .sum();
    Ok((total / directions.len() as f64).sqrt())
}

/// Root-mean over `projections` random directions of the squared 1-D W2
/// distance between projected samples. Deterministic given `seed`.
pub fn sliced_w2(a: &SampleSet, b: &SampleSet, projections: usize, seed: u64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("sample dimensions {} and {} differ", a.dim(), b.dim())));
    }
    if projections == 0 {
        return Err(Error::InvalidParameter("sliced W2 needs at least one projection".into()));
    }
    sliced_w2_with_directions(a, b, &random_directions(a.dim(), projections, seed))
}

/// Euclidean error of the sample mean and Frobenius error of the sample
/// covariance against the exact moments of `reference`.
pub fn moment_diff(samples: &SampleSet, reference: &GaussianMixture) -> Result<(f64, f64)> {
    if samples.dim() != reference.dim() {
        return Err(Error::Shape(format!(
            "samples have dimension {}, reference {}",
            samples.dim(),
            reference.dim()
        )));
    }
    let cov = samples.covariance()?;
    let mean_error = (samples.mean() - reference.mean()).norm();
    let cov_error = (cov - reference.covariance()).norm();
    Ok((mean_error, cov_error))
}
