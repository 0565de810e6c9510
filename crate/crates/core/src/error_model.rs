//! Mean-zero mixture for the scaled errors and the multiplicative
//! heteroscedastic scale field `U = S(X) ε`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::ReplicateDataset;
use crate::error::{Error, Result};
use crate::mixture::{
    mean_posteriors, update_covariances, update_labels, update_weights, HyperParams, MixtureState,
};
use crate::splines::VarianceFunction;
use crate::stats::{CholFactor, RngStream};

/// Weight below which a component cannot close the mean constraint.
pub const MIN_CLOSING_WEIGHT: f64 = 1e-12;
pub const MIN_SCALE: f64 = 1e-8;

/// Error mixture subject to `Σ_k π_k μ_k = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedMixture {
    pub inner: MixtureState,
}

impl RestrictedMixture {
    pub fn new(inner: MixtureState) -> Self {
        Self { inner }
    }

    /// `Σ_k π_k μ_k`.
    pub fn constraint_residual(&self) -> DVector<f64> {
        let s = &self.inner;
        s.weights.iter().zip(&s.means).fold(DVector::zeros(s.dim()), |a, (w, m)| a + m * *w)
    }

    /// Weights, labels, constrained means, covariances.
    pub fn gibbs_sweep(
        &mut self,
        residuals: &[DVector<f64>],
        labels: &mut Vec<usize>,
        hyper: &HyperParams,
        rng: &mut RngStream,
    ) -> Result<()> {
        let s = &mut self.inner;
        s.weights = update_weights(labels, hyper.alpha, s.k(), rng)?;
        *labels = update_labels(residuals, s, rng)?;
        let covs = s.covariances();
        let (mu0, sigma0) = unconstrained_mean_conditional(residuals, labels, &covs, hyper)?;
        s.means = sample_constrained_means(&mu0, &sigma0, &s.weights, rng)?;
        update_covariances(residuals, labels, s, hyper, rng)
    }
}

/// Stacked conditional mean (length `Kp`) and block-diagonal covariance
/// (`Kp × Kp`) of the component means ignoring the constraint.
pub fn unconstrained_mean_conditional(
    residuals: &[DVector<f64>],
    labels: &[usize],
    covariances: &[DMatrix<f64>],
    hyper: &HyperParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let posts = mean_posteriors(residuals, labels, covariances, &hyper.mu0, &hyper.sigma0)?;
    let p = hyper.dim();
    let kp = posts.len() * p;
    let mut mean = DVector::zeros(kp);
    let mut cov = DMatrix::zeros(kp, kp);
    for (k, post) in posts.iter().enumerate() {
        mean.rows_mut(k * p, p).copy_from(&post.mean);
        cov.view_mut((k * p, k * p), (p, p)).copy_from(post.covariance());
    }
    Ok((mean, cov))
}

/// Component closing the constraint: the last one, or the heaviest when the
/// last weight is degenerate.
pub fn closing_index(weights: &[f64]) -> usize {
    let last = weights.len() - 1;
    if weights[last] >= MIN_CLOSING_WEIGHT {
        return last;
    }
    weights.iter().enumerate().fold(0, |best, (k, &w)| if w > weights[best] { k } else { best })
}

pub fn sample_constrained_means(
    mu0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    weights: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<DVector<f64>>> {
    sample_constrained_means_closing(mu0, sigma0, weights, closing_index(weights), rng)
}

/// Draws the means from `MVN(μ⁰, Σ⁰)` conditioned on `Σ_k π_k μ_k = 0`:
/// the `K − 1` free blocks come from their (nonsingular) Gaussian
/// conditional and block `close` is set to `−Σ_{k≠c} π_k μ_k / π_c`.
pub fn sample_constrained_means_closing(
    mu0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    weights: &[f64],
    close: usize,
    rng: &mut RngStream,
) -> Result<Vec<DVector<f64>>> {
    let k = weights.len();
    if mu0.len() % k != 0 || sigma0.nrows() != mu0.len() || sigma0.ncols() != mu0.len() {
        return Err(Error::DimensionMismatch { expected: mu0.len(), found: sigma0.nrows() });
    }
    let p = mu0.len() / k;
    if k == 1 {
        return Ok(vec![DVector::zeros(p)]);
    }
    if weights[close] < MIN_CLOSING_WEIGHT {
        return Err(Error::DegenerateWeight { index: close, weight: weights[close] });
    }
    let block = |j: usize| sigma0.view((j * p, j * p), (p, p)).into_owned();
    let free: Vec<usize> = (0..k).filter(|&j| j != close).collect();
    let f = free.len() * p;

    // R = Σ π_k μ_k: E[R] = Σ π_k μ⁰_k, Var(R) = Σ π_k² Σ⁰_k, Cov(μ_k, R) = π_k Σ⁰_k.
    let mut e_r = DVector::zeros(p);
    let mut v_r = DMatrix::zeros(p, p);
    for j in 0..k {
        e_r += mu0.rows(j * p, p) * weights[j];
        v_r += block(j) * (weights[j] * weights[j]);
    }
    let mut c = DMatrix::zeros(f, p);
    let mut m_f = DVector::zeros(f);
    let mut s_f = DMatrix::zeros(f, f);
    for (a, &j) in free.iter().enumerate() {
        let b = block(j);
        c.view_mut((a * p, 0), (p, p)).copy_from(&(&b * weights[j]));
        s_f.view_mut((a * p, a * p), (p, p)).copy_from(&b);
        m_f.rows_mut(a * p, p).copy_from(&mu0.rows(j * p, p));
    }
    let v_chol = CholFactor::from_matrix(&v_r)?;
    let v_inv = v_chol.inverse();
    let gain = &c * &v_inv;
    let cond_mean = &m_f - &gain * &e_r;
    let cond_cov = &s_f - &gain * c.transpose();
    let cond_cov = (&cond_cov + cond_cov.transpose()) * 0.5;
    let draw = CholFactor::from_matrix(&cond_cov)?.sample(&cond_mean, rng);

    let mut means = vec![DVector::zeros(p); k];
    let mut acc = DVector::zeros(p);
    for (a, &j) in free.iter().enumerate() {
        means[j] = draw.rows(a * p, p).into_owned();
        acc += &means[j] * weights[j];
    }
    means[close] = -acc / weights[close];
    Ok(means)
}

/// Per-coordinate scale functions `s_ℓ`, or none for homoscedastic errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleField {
    Identity,
    Spline(Vec<VarianceFunction>),
}

impl ScaleField {
    pub fn is_identity(&self) -> bool {
        matches!(self, ScaleField::Identity)
    }

    /// `(s_1(x_1), …, s_p(x_p))`.
    pub fn scales(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ScaleField::Identity => Ok(DVector::from_element(x.len(), 1.0)),
            ScaleField::Spline(vfs) => {
                if vfs.len() != x.len() {
                    return Err(Error::DimensionMismatch { expected: vfs.len(), found: x.len() });
                }
                vfs.iter().zip(x.iter()).map(|(vf, &xl)| vf.scale_at(xl)).collect::<Result<Vec<_>>>().map(DVector::from_vec)
            }
        }
    }

    /// Whether every coordinate of `x` lies in the scale functions' support.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        match self {
            ScaleField::Identity => true,
            ScaleField::Spline(vfs) => vfs.iter().zip(x.iter()).all(|(vf, &v)| vf.knots.contains(v)),
        }
    }
}

/// `ε_ij = S(X_i)⁻¹ (W_ij − X_i)` for every observation, subject-major.
pub fn scaled_residuals(data: &ReplicateDataset, x: &[DVector<f64>], field: &ScaleField) -> Result<Vec<DVector<f64>>> {
    if x.len() != data.n_subjects() {
        return Err(Error::DimensionMismatch { expected: data.n_subjects(), found: x.len() });
    }
    let mut out = Vec::with_capacity(data.n_observations());
    for (i, (reps, xi)) in data.subjects().iter().zip(x).enumerate() {
        let s = field.scales(xi)?;
        if let Some((coord, &value)) = s.iter().enumerate().find(|(_, &v)| !(v >= MIN_SCALE)) {
            return Err(Error::ScaleUnderflow { subject: i, coord, value });
        }
        for w in reps {
            out.push((w - xi).component_div(&s));
        }
    }
    Ok(out)
}
