//! Seeded random streams and the dense linear-algebra kernels shared by every
//! sampler step: Cholesky with a jitter fallback, multivariate normal,
//! inverse-Wishart, Dirichlet and truncated-normal draws.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const JITTER_DOUBLINGS: u32 = 6;

/// A reproducible random stream identified by `(seed, stream)`.
///
/// Two streams built from the same pair produce bitwise-identical sequences.
/// A stream must not be shared across threads; use [`RngStream::derive`] to
/// hand each worker its own.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream keyed by `tag`. Depends only on
    /// `(seed, stream, tag)`, never on how many draws were consumed.
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream::new(self.seed, splitmix64(self.stream ^ splitmix64(tag.wrapping_add(1))))
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Symmetric positive-definite matrix.
///
/// Construction checks symmetry (relative tolerance 1e-12) and stores the
/// exactly symmetrized matrix. Positive definiteness is established by
/// [`chol_factor`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.nrows() == 0 {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { dim: m.nrows() });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(Self::symmetrized(m))
    }

    /// Wraps a matrix that is symmetric by construction, averaging away
    /// rounding asymmetry.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SpdMatrix((m + t) * 0.5)
    }

    pub fn identity(p: usize) -> Self {
        SpdMatrix(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SpdMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        SpdMatrix(&self.0 * c)
    }
}

impl TryFrom<DMatrix<f64>> for SpdMatrix {
    type Error = Error;

    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        SpdMatrix::new(m)
    }
}

impl From<SpdMatrix> for DMatrix<f64> {
    fn from(m: SpdMatrix) -> Self {
        m.0
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Clone, Debug)]
pub struct CholFactor {
    l: DMatrix<f64>,
    log_det: f64,
}

impl CholFactor {
    /// Factors a symmetric matrix, applying the jitter policy on failure:
    /// add `1e-10 * mean(diag)` to the diagonal and double it up to six times.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let dim = m.nrows();
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: dim, found: m.ncols() });
        }
        if let Some(f) = try_cholesky(m) {
            return Ok(f);
        }
        let mean_diag = m.diagonal().mean();
        if !(mean_diag.is_finite() && mean_diag > 0.0) {
            return Err(Error::NotPositiveDefinite { dim });
        }
        let mut jitter = 1e-10 * mean_diag;
        for _ in 0..=JITTER_DOUBLINGS {
            let mut j = m.clone();
            for i in 0..dim {
                j[(i, i)] += jitter;
            }
            if let Some(f) = try_cholesky(&j) {
                return Ok(f);
            }
            jitter *= 2.0;
        }
        Err(Error::NotPositiveDefinite { dim })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `ln det A`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Overwrites `v` with `L⁻¹ v`.
    pub fn forward_solve(&self, v: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut s = v[i];
            for k in 0..i {
                s -= self.l[(i, k)] * v[k];
            }
            v[i] = s / self.l[(i, i)];
        }
    }

    /// Overwrites `v` with `L⁻ᵀ v`.
    pub fn backward_solve(&self, v: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let mut s = v[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * v[k];
            }
            v[i] = s / self.l[(i, i)];
        }
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut v = b.clone();
        self.forward_solve(v.as_mut_slice());
        self.backward_solve(v.as_mut_slice());
        v
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.forward_solve(&mut col);
            self.backward_solve(&mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        (&inv + inv.transpose()) * 0.5
    }

    /// Squared Mahalanobis norm `dᵀ A⁻¹ d`; `diff` is consumed as scratch.
    pub fn mahalanobis_sq_in_place(&self, diff: &mut [f64]) -> f64 {
        self.forward_solve(diff);
        diff.iter().map(|v| v * v).sum()
    }

    /// Log density of `MVN(mean, A)` at `x`; `buf` must have length `dim`.
    pub fn ln_normal_density(&self, x: &[f64], mean: &[f64], buf: &mut [f64]) -> f64 {
        for ((b, xi), mi) in buf.iter_mut().zip(x).zip(mean) {
            *b = xi - mi;
        }
        let q = self.mahalanobis_sq_in_place(buf);
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + q)
    }

    /// `mean + L z` with `z` iid standard normal.
    pub fn sample(&self, mean: &DVector<f64>, rng: &mut RngStream) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.std_normal());
        mean + &self.l * z
    }
}

fn try_cholesky(m: &DMatrix<f64>) -> Option<CholFactor> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let c = m.clone().cholesky()?;
    let l = c.l();
    let mut log_det = 0.0;
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        log_det += 2.0 * d.ln();
    }
    Some(CholFactor { l, log_det })
}

pub fn chol_factor(m: &SpdMatrix) -> Result<CholFactor> {
    CholFactor::from_matrix(m.as_matrix())
}

/// Draws `mean + L z` for an arbitrary lower-triangular `chol` (a zero
/// matrix yields `mean` exactly).
pub fn sample_mvn(mean: &DVector<f64>, chol: &DMatrix<f64>, rng: &mut RngStream) -> Result<DVector<f64>> {
    if !chol.is_square() {
        return Err(Error::DimensionMismatch { expected: chol.nrows(), found: chol.ncols() });
    }
    if chol.nrows() != mean.len() {
        return Err(Error::DimensionMismatch { expected: mean.len(), found: chol.nrows() });
    }
    let z = DVector::from_fn(mean.len(), |_, _| rng.std_normal());
    Ok(mean + chol * z)
}

/// Natural log of a `Gamma(shape, 1)` draw. Shapes below one use the
/// `G(shape + 1) * U^{1/shape}` boost in log space so tiny shapes never
/// underflow to `ln 0`.
pub fn ln_gamma_draw(shape: f64, rng: &mut RngStream) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid gamma shape").sample(rng);
        g.max(f64::MIN_POSITIVE).ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("valid gamma shape").sample(rng);
        g.max(f64::MIN_POSITIVE).ln() + rng.open01().ln() / shape
    }
}

/// `Gamma(shape, rate)` draw.
pub fn gamma_draw(shape: f64, rate: f64, rng: &mut RngStream) -> f64 {
    ln_gamma_draw(shape, rng).exp() / rate
}

/// Inverse-gamma draw with shape `a` and scale `b` (density ∝ x^{-a-1} e^{-b/x}).
pub fn inv_gamma_draw(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    b * (-ln_gamma_draw(a, rng)).exp()
}

/// Inverse-Wishart draw with mean `scale / (df - p - 1)`.
///
/// Bartlett decomposition of the Wishart of the inverse: with `Ψ = C Cᵀ` and
/// `A` the Bartlett factor, the draw is `(C A⁻ᵀ)(C A⁻ᵀ)ᵀ`.
pub fn sample_inverse_wishart(df: f64, scale: &SpdMatrix, rng: &mut RngStream) -> Result<SpdMatrix> {
    let p = scale.dim();
    if !(df > p as f64 - 1.0) || !df.is_finite() {
        return Err(Error::InvalidDegreesOfFreedom { df, dim: p });
    }
    let c = chol_factor(scale)?;
    // Chi-square floor keeps the inverse finite when df sits at the boundary.
    let chi_floor = f64::MIN_POSITIVE.sqrt();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let shape = 0.5 * (df - i as f64);
        let chi2 = (2.0 * ln_gamma_draw(shape, rng).exp()).max(chi_floor);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.std_normal();
        }
    }
    // A⁻¹ by forward substitution on the identity.
    let mut a_inv = DMatrix::zeros(p, p);
    for col in 0..p {
        for i in col..p {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= a[(i, k)] * a_inv[(k, col)];
            }
            a_inv[(i, col)] = s / a[(i, i)];
        }
    }
    let b = c.lower() * a_inv.transpose();
    Ok(SpdMatrix::symmetrized(&b * b.transpose()))
}

/// Dirichlet draw computed from log-gamma variates and a log-sum-exp
/// normalization.
pub fn sample_dirichlet(conc: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    for (index, &value) in conc.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveConcentration { index, value });
        }
    }
    if conc.len() == 1 {
        return Ok(vec![1.0]);
    }
    let logs: Vec<f64> = conc.iter().map(|&a| ln_gamma_draw(a, rng)).collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

/// Draws an index from unnormalized log-probabilities (max-subtracted).
/// Returns `None` when every entry is `-inf` or NaN.
pub fn sample_log_categorical(log_p: &[f64], rng: &mut RngStream) -> Option<usize> {
    let m = log_p.iter().cloned().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return None;
    }
    let total: f64 = log_p.iter().map(|l| if l.is_nan() { 0.0 } else { (l - m).exp() }).sum();
    let mut u = rng.open01() * total;
    let mut last = 0;
    for (k, l) in log_p.iter().enumerate() {
        if l.is_nan() {
            continue;
        }
        let w = (l - m).exp();
        if w > 0.0 {
            last = k;
            if u < w {
                return Some(k);
            }
            u -= w;
        }
    }
    Some(last)
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Φ(x)`, accurate deep into the lower tail.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > -37.0 {
        return norm_cdf(x).ln();
    }
    // Asymptotic expansion of Mills' ratio.
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2) + 105.0 / (x2 * x2 * x2 * x2);
    -0.5 * x2 - (-x).ln() - 0.5 * LN_2PI + series.ln()
}

fn ln_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * LN_2PI
}

/// Standard normal quantile.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p <= 0.5 {
        norm_ppf_ln(p.ln())
    } else {
        -norm_ppf_ln((1.0 - p).ln())
    }
}

/// Quantile from a log-probability (`ln p <= ln 0.5`), refined by Newton steps
/// on `ln Φ` so extreme tails stay accurate.
fn norm_ppf_ln(ln_p: f64) -> f64 {
    let mut x = if ln_p > -700.0 {
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * ln_p.exp())
    } else {
        let t = -2.0 * ln_p;
        -(t - (2.0 * std::f64::consts::PI * t).ln()).sqrt()
    };
    for _ in 0..3 {
        let lc = ln_norm_cdf(x);
        let step = (lc - ln_p) / (ln_norm_pdf(x) - lc).exp();
        if !step.is_finite() {
            break;
        }
        x -= step;
        if step.abs() < 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// `ln(Φ(b) - Φ(a))` for standardized bounds `a < b`.
fn ln_std_normal_mass(a: f64, b: f64) -> f64 {
    if b <= 0.0 {
        let (la, lb) = (ln_norm_cdf(a), ln_norm_cdf(b));
        lb + (-(la - lb).exp()).ln_1p()
    } else if a >= 0.0 {
        ln_std_normal_mass(-b, -a)
    } else {
        (1.0 - norm_cdf(a) - norm_cdf(-b)).ln()
    }
}

/// `ln P(lo <= Y <= hi)` for `Y ~ Normal(mean, sd²)`.
pub fn truncated_normal_ln_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    ln_std_normal_mass((lo - mean) / sd, (hi - mean) / sd)
}

/// Normal draw restricted to `[lo, hi]` by inverse CDF with log-space tail
/// guards. Infinite bounds are allowed; `sd == 0` returns the clamped mean.
pub fn sample_truncated_normal(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut RngStream) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::EmptyInterval { lo, hi });
    }
    if !(sd >= 0.0) || !sd.is_finite() || !mean.is_finite() {
        return Err(Error::InvalidScale(sd));
    }
    if sd == 0.0 {
        return Ok(mean.clamp(lo, hi));
    }
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let v = rng.open01();
    let z = if a >= 0.0 { -std_truncated(-b, -a, v) } else { std_truncated(a, b, v) };
    Ok((mean + sd * z).clamp(lo, hi))
}

// Requires a < 0.
fn std_truncated(a: f64, b: f64, v: f64) -> f64 {
    if b <= 0.0 {
        let (la, lb) = (ln_norm_cdf(a), ln_norm_cdf(b));
        let r = (la - lb).exp();
        norm_ppf_ln(lb + (r + v * (1.0 - r)).ln())
    } else {
        let fa = norm_cdf(a);
        let upper_tail = norm_cdf(-b);
        let mass = 1.0 - fa - upper_tail;
        let u = fa + v * mass;
        if u <= 0.5 {
            norm_ppf_ln(u.ln())
        } else {
            let cu = upper_tail + (1.0 - v) * mass;
            -norm_ppf_ln(cu.ln())
        }
    }
}

/// Log density of `Normal(mean, var)` at `x`.
pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

pub fn ln_2pi() -> f64 {
    LN_2PI
}

/// Numerically stable `ln Σ exp(v)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frob(m: &DMatrix<f64>) -> f64 {
        m.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn chol_identity_and_diagonal() {
        let f = chol_factor(&SpdMatrix::identity(3)).unwrap();
        assert_eq!(f.lower(), &DMatrix::<f64>::identity(3, 3));
        let f = chol_factor(&SpdMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_eq!(f.lower(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
    }

    #[test]
    fn chol_reconstructs_random_spd() {
        let mut rng = RngStream::new(11, 0);
        for _ in 0..20 {
            let b = DMatrix::from_fn(5, 5, |_, _| rng.std_normal());
            let a = b.transpose() * &b + DMatrix::identity(5, 5);
            let f = chol_factor(&SpdMatrix::new(a.clone()).unwrap()).unwrap();
            let r = f.lower() * f.lower().transpose();
            assert!(frob(&(r - &a)) / frob(&a) < 1e-10);
        }
    }

    #[test]
    fn chol_jitter_rescues_singular_psd() {
        // Rank-one PSD matrix: plain Cholesky fails, jitter succeeds.
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        let f = CholFactor::from_matrix(&m).unwrap();
        let r = f.lower() * f.lower().transpose();
        assert!(frob(&(r - &m)) / frob(&m) < 1e-8);
    }

    #[test]
    fn chol_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(CholFactor::from_matrix(&m).unwrap_err(), Error::NotPositiveDefinite { dim: 2 });
    }

    #[test]
    fn spd_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn mvn_degenerate_and_deterministic() {
        let mut rng = RngStream::new(3, 1);
        let mean = DVector::from_vec(vec![1.0, 2.0]);
        let x = sample_mvn(&mean, &DMatrix::zeros(2, 2), &mut rng).unwrap();
        assert_eq!(x, mean);
        let a = sample_mvn(&mean, &DMatrix::identity(2, 2), &mut RngStream::new(5, 2)).unwrap();
        let b = sample_mvn(&mean, &DMatrix::identity(2, 2), &mut RngStream::new(5, 2)).unwrap();
        assert_eq!(a, b);
        let err = sample_mvn(&mean, &DMatrix::identity(3, 3), &mut rng).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn derived_streams_differ_and_repeat() {
        let root = RngStream::new(9, 0);
        let mut a = root.derive(1);
        let mut b = root.derive(2);
        let mut a2 = root.derive(1);
        let (x, y, z) = (a.next_u64(), b.next_u64(), a2.next_u64());
        assert_ne!(x, y);
        assert_eq!(x, z);
    }

    #[test]
    fn dirichlet_edge_cases() {
        let mut rng = RngStream::new(1, 0);
        assert_eq!(sample_dirichlet(&[0.7], &mut rng).unwrap(), vec![1.0]);
        let d = sample_dirichlet(&[1e6, 1e6], &mut rng).unwrap();
        assert!((d[0] - 0.5).abs() < 0.01);
        assert!(matches!(
            sample_dirichlet(&[1.0, 0.0], &mut rng),
            Err(Error::NonPositiveConcentration { index: 1, .. })
        ));
        // Tiny concentrations still normalize.
        let d = sample_dirichlet(&[1e-3; 8], &mut rng).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(d.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn inverse_wishart_boundary_df_is_spd() {
        let mut rng = RngStream::new(2, 0);
        for p in 1..=3 {
            let df = p as f64 - 1.0 + 1e-6;
            let s = sample_inverse_wishart(df, &SpdMatrix::identity(p), &mut rng).unwrap();
            assert!(s.as_matrix().iter().all(|v| v.is_finite()));
            assert!(chol_factor(&s).is_ok());
        }
        assert!(matches!(
            sample_inverse_wishart(0.5, &SpdMatrix::identity(2), &mut rng),
            Err(Error::InvalidDegreesOfFreedom { .. })
        ));
    }

    #[test]
    fn truncated_normal_containment_and_errors() {
        let mut rng = RngStream::new(4, 0);
        for _ in 0..10_000 {
            let x = sample_truncated_normal(0.0, 1.0, 5.0, 6.0, &mut rng).unwrap();
            assert!((5.0..=6.0).contains(&x));
            let y = sample_truncated_normal(0.0, 1.0, -60.0, -50.0, &mut rng).unwrap();
            assert!((-60.0..=-50.0).contains(&y));
            let z = sample_truncated_normal(3.0, 0.5, -1e-9, 1e-9, &mut rng).unwrap();
            assert!((-1e-9..=1e-9).contains(&z));
        }
        assert!(matches!(
            sample_truncated_normal(0.0, 1.0, 1.0, 1.0, &mut rng),
            Err(Error::EmptyInterval { .. })
        ));
        assert_eq!(sample_truncated_normal(7.0, 0.0, 0.0, 1.0, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn tail_helpers_are_consistent() {
        for &x in &[-45.0, -38.0, -36.0, -10.0, -1.0, 0.0, 2.0] {
            let lp = ln_norm_cdf(x);
            let back = norm_ppf_ln(lp);
            assert!((back - x).abs() < 1e-9 * x.abs().max(1.0), "{x} -> {back}");
        }
        // Continuity of the asymptotic switch.
        assert!((ln_norm_cdf(-37.0 - 1e-9) - ln_norm_cdf(-37.0)).abs() < 1e-6);
        let m = truncated_normal_ln_mass(0.0, 1.0, -1.0, 1.0).exp();
        assert!((m - 0.682_689_492_137_085_9).abs() < 1e-14);
        let m = truncated_normal_ln_mass(0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY);
        assert!(m.abs() < 1e-15);
    }

    #[test]
    fn log_categorical_handles_neg_infinity() {
        let mut rng = RngStream::new(8, 0);
        for _ in 0..100 {
            assert_eq!(sample_log_categorical(&[f64::NEG_INFINITY, 0.0], &mut rng), Some(1));
        }
        assert_eq!(sample_log_categorical(&[f64::NEG_INFINITY; 3], &mut rng), None);
    }
}
