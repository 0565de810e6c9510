//! Finite Gaussian mixtures with inverse-Wishart (MIW) or latent-factor
//! (MLFA / MLFAD) component covariances, and their Gibbs updates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{
    gamma_draw, inv_gamma_draw, sample_dirichlet, sample_inverse_wishart, sample_log_categorical, CholFactor,
    RngStream, SpdMatrix,
};

/// Threshold on π_k under which a component counts as empty in traces.
pub const EMPTY_WEIGHT: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceModel {
    Miw,
    Mlfa,
    Mlfad,
}

/// Default factor truncation `max(2, floor((p + 1) / 2))`.
pub fn default_truncation(p: usize) -> usize {
    ((p + 1) / 2).max(2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub mu0: DVector<f64>,
    pub sigma0: SpdMatrix,
    pub nu0: f64,
    pub psi0: SpdMatrix,
    pub a1: f64,
    pub ah: f64,
    pub nu_shrink: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_xi: f64,
    pub b_xi: f64,
}

impl HyperParams {
    /// Empirical-Bayes defaults from pilot values: `μ0` the pilot mean (or 0),
    /// `Σ0 / 2 = Ψ0 = cov(pilot)`, `ν0 = p + 2`.
    pub fn empirical(points: &[DVector<f64>], zero_mean: bool) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let p = points[0].len();
        let mean = points.iter().fold(DVector::zeros(p), |a, x| a + x) / n as f64;
        let mut cov = DMatrix::zeros(p, p);
        for x in points {
            let d = x - &mean;
            cov += &d * d.transpose();
        }
        cov /= (n.max(2) - 1) as f64;
        let psi0 = regularized(cov);
        Ok(Self {
            alpha: 1.0,
            mu0: if zero_mean { DVector::zeros(p) } else { mean },
            sigma0: psi0.scaled(2.0),
            nu0: p as f64 + 2.0,
            psi0,
            a1: 1.0,
            ah: 2.0,
            nu_shrink: 1.0,
            a_sigma: 1.1,
            b_sigma: 1.0,
            a_xi: 0.01,
            b_xi: 0.01,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        for m in [&self.sigma0, &self.psi0] {
            if m.dim() != p {
                return Err(Error::DimensionMismatch { expected: p, found: m.dim() });
            }
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.nu0 > p as f64 + 1.0) {
            return Err(Error::InvalidDegreesOfFreedom { df: self.nu0, dim: p });
        }
        let shapes = [
            ("a1", self.a1),
            ("ah", self.ah),
            ("nu_shrink", self.nu_shrink),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("a_xi", self.a_xi),
            ("b_xi", self.b_xi),
        ];
        for (name, v) in shapes {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// Sample covariances of degenerate pilots (constant coordinates, n < p)
/// get a small ridge so the prior scale stays SPD.
fn regularized(cov: DMatrix<f64>) -> SpdMatrix {
    let p = cov.nrows();
    let scale = (cov.trace() / p as f64).max(1e-12);
    let mut c = cov;
    let min_eig = c.clone().symmetric_eigenvalues().min();
    if !(min_eig > 1e-8 * scale) {
        for i in 0..p {
            c[(i, i)] += 1e-6 * scale;
        }
    }
    SpdMatrix::symmetrized(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Idiosyncratic {
    /// One variance per coordinate, shared by all components (MLFA).
    Shared(Vec<f64>),
    /// One spherical variance per component (MLFAD).
    Spherical(Vec<f64>),
}

/// Factor-analytic covariances `Σ_k = Λ_k Λ_kᵀ + Ω_k` with multiplicative
/// gamma shrinkage on the loading columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorBlock {
    /// `Λ_k`, each `p × q`.
    pub loadings: Vec<DMatrix<f64>>,
    /// `φ_{k,jh}`, each `p × q`.
    pub local_shrink: Vec<DMatrix<f64>>,
    /// `δ_{k,1..q}`.
    pub global_incr: Vec<Vec<f64>>,
    /// `η_i`, one per data point.
    pub factors: Vec<DVector<f64>>,
    pub idio: Idiosyncratic,
}

impl FactorBlock {
    /// Zero loadings and factors, unit shrinkage, and `Ω` from `omega`
    /// (length `p` for MLFA; its mean is used for every MLFAD component).
    pub fn zeroed(model: CovarianceModel, k: usize, q: usize, n_points: usize, omega: &[f64]) -> Self {
        let p = omega.len();
        let idio = match model {
            CovarianceModel::Mlfad => {
                Idiosyncratic::Spherical(vec![omega.iter().sum::<f64>() / p as f64; k])
            }
            _ => Idiosyncratic::Shared(omega.to_vec()),
        };
        Self {
            loadings: vec![DMatrix::zeros(p, q); k],
            local_shrink: vec![DMatrix::from_element(p, q, 1.0); k],
            global_incr: vec![vec![1.0; q]; k],
            factors: vec![DVector::zeros(q); n_points],
            idio,
        }
    }

    pub fn k(&self) -> usize {
        self.loadings.len()
    }

    pub fn dim(&self) -> usize {
        self.loadings[0].nrows()
    }

    pub fn q(&self) -> usize {
        self.loadings[0].ncols()
    }

    /// `τ_{k,h} = Π_{ℓ ≤ h} δ_{k,ℓ}`.
    pub fn tau(&self, k: usize) -> Vec<f64> {
        let mut acc = 1.0;
        self.global_incr[k]
            .iter()
            .map(|d| {
                acc *= d;
                acc
            })
            .collect()
    }

    /// Diagonal of `Ω_k`.
    pub fn omega_diag(&self, k: usize) -> Vec<f64> {
        match &self.idio {
            Idiosyncratic::Shared(s) => s.clone(),
            Idiosyncratic::Spherical(s) => vec![s[k]; self.dim()],
        }
    }

    pub fn covariance(&self, k: usize) -> DMatrix<f64> {
        let l = &self.loadings[k];
        let mut c = l * l.transpose();
        for (i, w) in self.omega_diag(k).into_iter().enumerate() {
            c[(i, i)] += w;
        }
        c
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |v: &Vec<DMatrix<f64>>| perm.iter().map(|&j| v[j].clone()).collect::<Vec<_>>();
        Self {
            loadings: pick(&self.loadings),
            local_shrink: pick(&self.local_shrink),
            global_incr: perm.iter().map(|&j| self.global_incr[j].clone()).collect(),
            factors: self.factors.clone(),
            idio: match &self.idio {
                Idiosyncratic::Shared(s) => Idiosyncratic::Shared(s.clone()),
                Idiosyncratic::Spherical(s) => Idiosyncratic::Spherical(perm.iter().map(|&j| s[j]).collect()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariances {
    Full(Vec<SpdMatrix>),
    Factor(FactorBlock),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub cov: Covariances,
}

impl MixtureState {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn model(&self) -> CovarianceModel {
        match &self.cov {
            Covariances::Full(_) => CovarianceModel::Miw,
            Covariances::Factor(b) => match b.idio {
                Idiosyncratic::Shared(_) => CovarianceModel::Mlfa,
                Idiosyncratic::Spherical(_) => CovarianceModel::Mlfad,
            },
        }
    }

    pub fn covariance(&self, k: usize) -> DMatrix<f64> {
        match &self.cov {
            Covariances::Full(c) => c[k].as_matrix().clone(),
            Covariances::Factor(b) => b.covariance(k),
        }
    }

    pub fn covariances(&self) -> Vec<DMatrix<f64>> {
        (0..self.k()).map(|k| self.covariance(k)).collect()
    }

    pub fn nonempty_count(&self, threshold: f64) -> usize {
        self.weights.iter().filter(|&&w| w > threshold).count()
    }

    /// Component `j` of the result is component `perm[j]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            weights: perm.iter().map(|&j| self.weights[j]).collect(),
            means: perm.iter().map(|&j| self.means[j].clone()).collect(),
            cov: match &self.cov {
                Covariances::Full(c) => Covariances::Full(perm.iter().map(|&j| c[j].clone()).collect()),
                Covariances::Factor(b) => Covariances::Factor(b.permuted(perm)),
            },
        }
    }

    /// Mixture of the marginals over the listed coordinates, with
    /// materialized full covariances.
    pub fn marginal(&self, coords: &[usize]) -> MixtureState {
        let sub = |c: &DMatrix<f64>| DMatrix::from_fn(coords.len(), coords.len(), |a, b| c[(coords[a], coords[b])]);
        MixtureState {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| DVector::from_fn(coords.len(), |a, _| m[coords[a]])).collect(),
            cov: Covariances::Full(self.covariances().iter().map(|c| SpdMatrix::symmetrized(sub(c))).collect()),
        }
    }

    /// Weights on the simplex and every covariance factorizable.
    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Data(format!("weights do not lie on the simplex (sum {s})")));
        }
        for c in self.covariances() {
            if c.iter().any(|v| !v.is_finite()) || c.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite { dim: c.nrows() });
            }
        }
        Ok(())
    }
}

/// Pre-factored mixture for repeated density evaluation: per component the
/// packed inverse Cholesky factor and the log normalizer (weight included),
/// so evaluation never allocates for `p <= 16`.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    dim: usize,
    ln_consts: Vec<f64>,
    means: Vec<f64>,
    /// Row-major lower triangles of `L_k⁻¹`, `p(p+1)/2` entries each.
    inv_chols: Vec<f64>,
}

const STACK_DIM: usize = 16;

impl GaussianMixture {
    pub fn from_state(state: &MixtureState) -> Result<Self> {
        Self::from_parts(&state.weights, &state.means, &state.covariances())
    }

    pub fn from_parts(weights: &[f64], means: &[DVector<f64>], covs: &[DMatrix<f64>]) -> Result<Self> {
        let p = means.first().map_or(0, |m| m.len());
        let tri = p * (p + 1) / 2;
        let mut out = Self {
            dim: p,
            ln_consts: Vec::with_capacity(weights.len()),
            means: Vec::with_capacity(weights.len() * p),
            inv_chols: Vec::with_capacity(weights.len() * tri),
        };
        for ((w, m), c) in weights.iter().zip(means).zip(covs) {
            let chol = CholFactor::from_matrix(c)?;
            out.ln_consts.push(w.ln() - 0.5 * (p as f64 * crate::stats::ln_2pi() + chol.log_det()));
            out.means.extend(m.iter());
            let mut col = vec![0.0; p];
            let mut inv = DMatrix::zeros(p, p);
            for j in 0..p {
                col.iter_mut().for_each(|v| *v = 0.0);
                col[j] = 1.0;
                chol.forward_solve(&mut col);
                inv.set_column(j, &DVector::from_column_slice(&col));
            }
            for i in 0..p {
                for j in 0..=i {
                    out.inv_chols.push(inv[(i, j)]);
                }
            }
        }
        Ok(out)
    }

    /// Concatenation of mixtures with the given outer weights.
    pub fn combine(parts: &[(f64, GaussianMixture)]) -> Result<Self> {
        let dim = parts.first().map_or(0, |(_, m)| m.dim);
        let mut out = Self { dim, ln_consts: Vec::new(), means: Vec::new(), inv_chols: Vec::new() };
        for (w, m) in parts {
            if m.dim != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.dim });
            }
            out.ln_consts.extend(m.ln_consts.iter().map(|c| c + w.ln()));
            out.means.extend_from_slice(&m.means);
            out.inv_chols.extend_from_slice(&m.inv_chols);
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.ln_consts.len()
    }

    fn ln_component(&self, k: usize, x: &[f64], d: &mut [f64]) -> f64 {
        let p = self.dim;
        let mu = &self.means[k * p..(k + 1) * p];
        for ((di, xi), mi) in d.iter_mut().zip(x).zip(mu) {
            *di = xi - mi;
        }
        let tri = &self.inv_chols[k * p * (p + 1) / 2..];
        let mut q = 0.0;
        let mut off = 0;
        for i in 0..p {
            let z: f64 = tri[off..off + i + 1].iter().zip(&d[..=i]).map(|(a, b)| a * b).sum();
            q += z * z;
            off += i + 1;
        }
        self.ln_consts[k] - 0.5 * q
    }

    fn with_scratch<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        if self.dim <= STACK_DIM {
            let mut buf = [0.0; STACK_DIM];
            f(&mut buf[..self.dim])
        } else {
            f(&mut vec![0.0; self.dim])
        }
    }

    /// `ln π_k + ln MVN(x | μ_k, Σ_k)` for every component.
    pub fn ln_joint(&self, x: &[f64], out: &mut [f64]) {
        self.with_scratch(|d| {
            for (k, o) in out.iter_mut().enumerate() {
                *o = if self.ln_consts[k] == f64::NEG_INFINITY { f64::NEG_INFINITY } else { self.ln_component(k, x, d) };
            }
        })
    }

    pub fn ln_density(&self, x: &[f64]) -> f64 {
        self.with_scratch(|d| {
            // Streaming log-sum-exp.
            let (mut m, mut s) = (f64::NEG_INFINITY, 0.0);
            for k in 0..self.ln_consts.len() {
                if self.ln_consts[k] == f64::NEG_INFINITY {
                    continue;
                }
                let v = self.ln_component(k, x, d);
                if v > m {
                    s = s * (m - v).exp() + 1.0;
                    m = v;
                } else {
                    s += (v - m).exp();
                }
            }
            if m == f64::NEG_INFINITY {
                m
            } else {
                m + s.ln()
            }
        })
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.ln_density(x).exp()
    }
}

/// `Σ_k π_k MVN(x | μ_k, Σ_k)`; NaN if a component covariance cannot be
/// factored, which valid states never produce.
pub fn mixture_density(state: &MixtureState, x: &[f64]) -> f64 {
    GaussianMixture::from_state(state).map(|m| m.density(x)).unwrap_or(f64::NAN)
}

pub fn label_counts(labels: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut n = vec![0; k];
    for &c in labels {
        if c >= k {
            return Err(Error::LabelOutOfRange { label: c, k });
        }
        n[c] += 1;
    }
    Ok(n)
}

/// `π ~ Dir(α/K + n_1, …, α/K + n_K)`.
pub fn update_weights(labels: &[usize], alpha: f64, k: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    let n = label_counts(labels, k)?;
    let conc: Vec<f64> = n.iter().map(|&c| alpha / k as f64 + c as f64).collect();
    sample_dirichlet(&conc, rng)
}

/// Draws every label from its categorical full conditional.
pub fn update_labels(points: &[DVector<f64>], state: &MixtureState, rng: &mut RngStream) -> Result<Vec<usize>> {
    let mix = GaussianMixture::from_state(state)?;
    let mut lp = vec![0.0; state.k()];
    points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            mix.ln_joint(x.as_slice(), &mut lp);
            sample_log_categorical(&lp, rng).ok_or(Error::AllResponsibilitiesUnderflow { index: i })
        })
        .collect()
}

/// Gaussian full conditional of one component mean, kept in precision form.
#[derive(Clone, Debug)]
pub struct MeanPosterior {
    pub mean: DVector<f64>,
    pub precision: CholFactor,
    covariance: DMatrix<f64>,
}

impl MeanPosterior {
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn sample(&self, rng: &mut RngStream) -> DVector<f64> {
        let mut z: Vec<f64> = (0..self.mean.len()).map(|_| rng.std_normal()).collect();
        self.precision.backward_solve(&mut z);
        &self.mean + DVector::from_vec(z)
    }
}

/// Conditionals `MVN(μ_k^(n), Σ_k^(n))` with
/// `Σ_k^(n) = (Σ0⁻¹ + n_k Σ_k⁻¹)⁻¹` and
/// `μ_k^(n) = Σ_k^(n) (Σ_k⁻¹ Σ_{C_i=k} x_i + Σ0⁻¹ μ0)`.
pub fn mean_posteriors(
    points: &[DVector<f64>],
    labels: &[usize],
    covs: &[DMatrix<f64>],
    mu0: &DVector<f64>,
    sigma0: &SpdMatrix,
) -> Result<Vec<MeanPosterior>> {
    let k = covs.len();
    let p = mu0.len();
    let counts = label_counts(labels, k)?;
    let mut sums = vec![DVector::zeros(p); k];
    for (x, &c) in points.iter().zip(labels) {
        sums[c] += x;
    }
    let prior_prec = CholFactor::from_matrix(sigma0.as_matrix())?.inverse();
    let prior_term = &prior_prec * mu0;
    (0..k)
        .map(|j| {
            if counts[j] == 0 {
                let precision = CholFactor::from_matrix(&prior_prec)?;
                return Ok(MeanPosterior { mean: mu0.clone(), precision, covariance: sigma0.as_matrix().clone() });
            }
            let inv = CholFactor::from_matrix(&covs[j])?.inverse();
            let precision = CholFactor::from_matrix(&(&prior_prec + &inv * counts[j] as f64))?;
            let mean = precision.solve(&(&inv * &sums[j] + &prior_term));
            Ok(MeanPosterior { mean, covariance: precision.inverse(), precision })
        })
        .collect()
}

pub fn update_means(
    points: &[DVector<f64>],
    labels: &[usize],
    covs: &[DMatrix<f64>],
    mu0: &DVector<f64>,
    sigma0: &SpdMatrix,
    rng: &mut RngStream,
) -> Result<Vec<DVector<f64>>> {
    Ok(mean_posteriors(points, labels, covs, mu0, sigma0)?.iter().map(|m| m.sample(rng)).collect())
}

pub fn update_means_miw(
    points: &[DVector<f64>],
    labels: &[usize],
    covs: &[SpdMatrix],
    hyper: &HyperParams,
    rng: &mut RngStream,
) -> Result<Vec<DVector<f64>>> {
    let covs: Vec<DMatrix<f64>> = covs.iter().map(|c| c.as_matrix().clone()).collect();
    update_means(points, labels, &covs, &hyper.mu0, &hyper.sigma0, rng)
}

/// `Σ_k ~ IW(n_k + ν0, Σ_{C_i=k} (x_i − μ_k)(x_i − μ_k)ᵀ + Ψ0)`.
pub fn update_covs_miw(
    points: &[DVector<f64>],
    labels: &[usize],
    means: &[DVector<f64>],
    hyper: &HyperParams,
    rng: &mut RngStream,
) -> Result<Vec<SpdMatrix>> {
    let k = means.len();
    let counts = label_counts(labels, k)?;
    let mut scatter = vec![hyper.psi0.as_matrix().clone(); k];
    for (x, &c) in points.iter().zip(labels) {
        let d = x - &means[c];
        scatter[c] += &d * d.transpose();
    }
    scatter
        .into_iter()
        .zip(counts)
        .map(|(s, n)| sample_inverse_wishart(n as f64 + hyper.nu0, &SpdMatrix::symmetrized(s), rng))
        .collect()
}

/// `η_i | C_i = k ~ MVN((I + ΛᵀΩ⁻¹Λ)⁻¹ ΛᵀΩ⁻¹(x_i − μ_k), (I + ΛᵀΩ⁻¹Λ)⁻¹)`.
pub fn update_factors(
    points: &[DVector<f64>],
    labels: &[usize],
    means: &[DVector<f64>],
    block: &mut FactorBlock,
    rng: &mut RngStream,
) -> Result<()> {
    let q = block.q();
    let mut posts = Vec::with_capacity(block.k());
    for k in 0..block.k() {
        let l = &block.loadings[k];
        let inv_omega: Vec<f64> = block.omega_diag(k).iter().map(|w| 1.0 / w).collect();
        let lt_oinv = DMatrix::from_fn(q, l.nrows(), |h, j| l[(j, h)] * inv_omega[j]);
        let prec = DMatrix::identity(q, q) + &lt_oinv * l;
        posts.push((CholFactor::from_matrix(&prec)?, lt_oinv));
    }
    block.factors.resize(points.len(), DVector::zeros(q));
    for (i, (x, &c)) in points.iter().zip(labels).enumerate() {
        let (chol, lt_oinv) = &posts[c];
        let mean = chol.solve(&(lt_oinv * (x - &means[c])));
        let mut z: Vec<f64> = (0..q).map(|_| rng.std_normal()).collect();
        chol.backward_solve(&mut z);
        block.factors[i] = mean + DVector::from_vec(z);
    }
    Ok(())
}

/// Rows `λ_{k,j}` from their Bayesian-regression conditionals with prior
/// precision `diag(φ_{k,jh} τ_{k,h})`.
pub fn update_loadings(
    points: &[DVector<f64>],
    labels: &[usize],
    means: &[DVector<f64>],
    block: &mut FactorBlock,
    rng: &mut RngStream,
) -> Result<()> {
    let (k_total, p, q) = (block.k(), block.dim(), block.q());
    let mut gram = vec![DMatrix::<f64>::zeros(q, q); k_total];
    let mut cross = vec![DMatrix::<f64>::zeros(q, p); k_total];
    for ((x, &c), eta) in points.iter().zip(labels).zip(&block.factors) {
        gram[c] += eta * eta.transpose();
        cross[c] += eta * (x - &means[c]).transpose();
    }
    for k in 0..k_total {
        let tau = block.tau(k);
        let omega = block.omega_diag(k);
        for j in 0..p {
            let s2inv = 1.0 / omega[j];
            let mut prec = &gram[k] * s2inv;
            for h in 0..q {
                prec[(h, h)] += block.local_shrink[k][(j, h)] * tau[h];
            }
            let chol = CholFactor::from_matrix(&prec)?;
            let rhs = cross[k].column(j) * s2inv;
            let mean = chol.solve(&rhs.into_owned());
            let mut z: Vec<f64> = (0..q).map(|_| rng.std_normal()).collect();
            chol.backward_solve(&mut z);
            for h in 0..q {
                block.loadings[k][(j, h)] = mean[h] + z[h];
            }
        }
    }
    Ok(())
}

/// Inverse-gamma updates of `Ω` from the factor-model residuals.
pub fn update_idiosyncratic(
    points: &[DVector<f64>],
    labels: &[usize],
    means: &[DVector<f64>],
    block: &mut FactorBlock,
    hyper: &HyperParams,
    rng: &mut RngStream,
) -> Result<()> {
    let (k_total, p) = (block.k(), block.dim());
    let mut ss_coord = vec![0.0; p];
    let mut ss_comp = vec![0.0; k_total];
    let counts = label_counts(labels, k_total)?;
    for ((x, &c), eta) in points.iter().zip(labels).zip(&block.factors) {
        let r = x - &means[c] - &block.loadings[c] * eta;
        for (j, v) in r.iter().enumerate() {
            ss_coord[j] += v * v;
            ss_comp[c] += v * v;
        }
    }
    let n = points.len() as f64;
    match &mut block.idio {
        Idiosyncratic::Shared(s) => {
            for (j, s) in s.iter_mut().enumerate() {
                *s = inv_gamma_draw(hyper.a_sigma + n / 2.0, hyper.b_sigma + ss_coord[j] / 2.0, rng);
            }
        }
        Idiosyncratic::Spherical(s) => {
            for (k, s) in s.iter_mut().enumerate() {
                let shape = hyper.a_sigma + (counts[k] * p) as f64 / 2.0;
                *s = inv_gamma_draw(shape, hyper.b_sigma + ss_comp[k] / 2.0, rng);
            }
        }
    }
    Ok(())
}

/// `φ_{k,jh} ~ Ga((ν + 1)/2, (ν + τ_{k,h} λ²_{k,jh})/2)`.
pub fn update_local_shrinkage(block: &mut FactorBlock, hyper: &HyperParams, rng: &mut RngStream) {
    let nu = hyper.nu_shrink;
    for k in 0..block.k() {
        let tau = block.tau(k);
        let (p, q) = (block.dim(), block.q());
        for j in 0..p {
            for h in 0..q {
                let l = block.loadings[k][(j, h)];
                block.local_shrink[k][(j, h)] = gamma_draw((nu + 1.0) / 2.0, (nu + tau[h] * l * l) / 2.0, rng);
            }
        }
    }
}

/// Shape and rate of the gamma conditional of `δ_{k,h}` (`h` zero-based).
/// Only the `τ_{k,ℓ}` with `ℓ ≥ h` contain `δ_{k,h}`, and those are the terms
/// summed in the rate; the shape counts the same `p (q − h)` loadings.
pub fn global_shrinkage_conditional(block: &FactorBlock, k: usize, h: usize, hyper: &HyperParams) -> (f64, f64) {
    let (p, q) = (block.dim(), block.q());
    let a = if h == 0 { hyper.a1 } else { hyper.ah };
    let delta = &block.global_incr[k];
    let mut rate = 1.0;
    let mut tau_h = 1.0;
    for l in 0..q {
        if l != h {
            tau_h *= delta[l];
        }
        if l >= h {
            let s: f64 = (0..p).map(|j| block.local_shrink[k][(j, l)] * block.loadings[k][(j, l)].powi(2)).sum();
            rate += 0.5 * tau_h * s;
        }
    }
    (a + (p * (q - h)) as f64 / 2.0, rate)
}

pub fn update_global_shrinkage(block: &mut FactorBlock, hyper: &HyperParams, rng: &mut RngStream) {
    for k in 0..block.k() {
        for h in 0..block.q() {
            let (shape, rate) = global_shrinkage_conditional(block, k, h, hyper);
            block.global_incr[k][h] = gamma_draw(shape, rate, rng);
        }
    }
}

/// One pass over the factor-model parameters. Factors come first: the
/// preceding label and mean updates integrate them out, so they must be
/// refreshed before anything conditions on them.
pub fn update_factor_block(
    points: &[DVector<f64>],
    labels: &[usize],
    means: &[DVector<f64>],
    block: &mut FactorBlock,
    hyper: &HyperParams,
    rng: &mut RngStream,
) -> Result<()> {
    update_factors(points, labels, means, block, rng)?;
    update_loadings(points, labels, means, block, rng)?;
    update_idiosyncratic(points, labels, means, block, hyper, rng)?;
    update_local_shrinkage(block, hyper, rng);
    update_global_shrinkage(block, hyper, rng);
    Ok(())
}

/// Covariance half of a sweep, for either back-end.
pub fn update_covariances(
    points: &[DVector<f64>],
    labels: &[usize],
    state: &mut MixtureState,
    hyper: &HyperParams,
    rng: &mut RngStream,
) -> Result<()> {
    match &mut state.cov {
        Covariances::Full(c) => *c = update_covs_miw(points, labels, &state.means, hyper, rng)?,
        Covariances::Factor(b) => update_factor_block(points, labels, &state.means, b, hyper, rng)?,
    }
    Ok(())
}

/// Full Gibbs sweep: weights, labels, means (factors integrated out), then
/// covariances.
pub fn gibbs_sweep(
    points: &[DVector<f64>],
    labels: &mut Vec<usize>,
    state: &mut MixtureState,
    hyper: &HyperParams,
    rng: &mut RngStream,
) -> Result<()> {
    state.weights = update_weights(labels, hyper.alpha, state.k(), rng)?;
    *labels = update_labels(points, state, rng)?;
    let covs = state.covariances();
    state.means = update_means(points, labels, &covs, &hyper.mu0, &hyper.sigma0, rng)?;
    update_covariances(points, labels, state, hyper, rng)
}

/// Draw of every mixture parameter from its prior; factor models also draw
/// `n_points` factors.
pub fn sample_prior(
    model: CovarianceModel,
    k: usize,
    q: usize,
    n_points: usize,
    hyper: &HyperParams,
    rng: &mut RngStream,
) -> Result<MixtureState> {
    let p = hyper.dim();
    let weights = sample_dirichlet(&vec![hyper.alpha / k as f64; k], rng)?;
    let prior = CholFactor::from_matrix(hyper.sigma0.as_matrix())?;
    let means = (0..k).map(|_| prior.sample(&hyper.mu0, rng)).collect();
    let cov = match model {
        CovarianceModel::Miw => Covariances::Full(
            (0..k).map(|_| sample_inverse_wishart(hyper.nu0, &hyper.psi0, rng)).collect::<Result<_>>()?,
        ),
        _ => {
            let mut block = FactorBlock::zeroed(model, k, q, n_points, &vec![1.0; p]);
            let half_nu = hyper.nu_shrink / 2.0;
            for kk in 0..k {
                for h in 0..q {
                    let a = if h == 0 { hyper.a1 } else { hyper.ah };
                    block.global_incr[kk][h] = gamma_draw(a, 1.0, rng);
                }
                let tau = block.tau(kk);
                for j in 0..p {
                    for h in 0..q {
                        let phi = gamma_draw(half_nu, half_nu, rng);
                        block.local_shrink[kk][(j, h)] = phi;
                        block.loadings[kk][(j, h)] = rng.std_normal() / (phi * tau[h]).sqrt();
                    }
                }
            }
            match &mut block.idio {
                Idiosyncratic::Shared(s) | Idiosyncratic::Spherical(s) => {
                    s.iter_mut().for_each(|v| *v = inv_gamma_draw(hyper.a_sigma, hyper.b_sigma, rng));
                }
            }
            for eta in &mut block.factors {
                eta.iter_mut().for_each(|v| *v = rng.std_normal());
            }
            Covariances::Factor(block)
        }
    };
    Ok(MixtureState { weights, means, cov })
}
