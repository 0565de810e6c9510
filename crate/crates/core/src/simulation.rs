//! Scenario generators and the importance-sampling MISE evaluator.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ReplicateDataset;
use crate::deconvolver::{run_fit, FitConfig, ModelKind};
use crate::error::{Error, Result};
use crate::mixture::{Covariances, GaussianMixture, MixtureState};
use crate::stats::{gamma_draw, RngStream, SpdMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Structure {
    #[serde(rename = "I", alias = "identity")]
    Identity,
    #[serde(rename = "LF", alias = "lf")]
    LatentFactor,
    #[serde(rename = "AR", alias = "ar")]
    Autoregressive,
    #[serde(rename = "EXP", alias = "exp")]
    Exponential,
}

impl std::str::FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "IDENTITY" => Ok(Structure::Identity),
            "LF" => Ok(Structure::LatentFactor),
            "AR" => Ok(Structure::Autoregressive),
            "EXP" => Ok(Structure::Exponential),
            _ => Err(Error::UnknownStructure(s.to_string())),
        }
    }
}

/// Which parameter set a structure takes: latent values or scaled errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    X,
    Error,
}

/// Unscaled `Σ_0` for a structure.
pub fn structure_matrix(structure: Structure, p: usize, role: Role) -> DMatrix<f64> {
    let lag = |i: usize, j: usize| i.abs_diff(j) as i32;
    match (structure, role) {
        (Structure::Identity, _) => DMatrix::identity(p, p),
        (Structure::LatentFactor, r) => {
            let (l, o) = if r == Role::X { (0.7, 0.51) } else { (0.5, 0.75) };
            DMatrix::from_fn(p, p, |i, j| l * l + if i == j { o } else { 0.0 })
        }
        (Structure::Autoregressive, r) => {
            let rho: f64 = if r == Role::X { 0.7 } else { 0.5 };
            DMatrix::from_fn(p, p, |i, j| rho.powi(lag(i, j)))
        }
        (Structure::Exponential, r) => {
            let a = if r == Role::X { 0.5 } else { 0.9 };
            DMatrix::from_fn(p, p, |i, j| (-a * lag(i, j) as f64).exp())
        }
    }
}

/// `D Σ_0 D` with `D = diag(d^{1/2}, …)`.
pub fn build_covariance(structure: Structure, p: usize, role: Role, d: f64) -> Result<SpdMatrix> {
    if p == 0 {
        return Err(Error::DimensionMismatch { expected: 1, found: 0 });
    }
    SpdMatrix::new(structure_matrix(structure, p, role) * d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ErrorLaw {
    Normal,
    /// Three-component mixture with the last mean closing `Σ π μ = 0`.
    Mixture,
    MultivariateT { nu: f64 },
    Laplace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub m: usize,
    pub x_weights: Vec<f64>,
    pub x_means: Vec<Vec<f64>>,
    pub structure: Structure,
    pub d_x: f64,
    pub d_err: f64,
    pub error_law: ErrorLaw,
    pub err_weights: Vec<f64>,
    /// Means of all but the last error component; the last is implied.
    pub err_means: Vec<Vec<f64>>,
    pub heteroscedastic: bool,
}

impl Scenario {
    /// The four-dimensional reference design: three-component `f_X` and the
    /// chosen error law and covariance structure.
    pub fn reference(error_law: ErrorLaw, structure: Structure, n: usize, heteroscedastic: bool) -> Self {
        Self {
            n,
            m: 3,
            x_weights: vec![0.25, 0.5, 0.25],
            x_means: vec![vec![0.8, 6.0, 4.0, 5.0], vec![2.5, 4.0, 5.0, 6.0], vec![6.0, 4.0, 2.0, 4.0]],
            structure,
            d_x: 0.75,
            d_err: 0.3,
            error_law,
            err_weights: vec![0.2, 0.6, 0.2],
            err_means: vec![vec![-0.3, 0.0, 0.3, 0.0], vec![-0.5, 0.4, 0.5, 0.0]],
            heteroscedastic,
        }
    }

    pub fn dim(&self) -> usize {
        self.x_means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        if p == 0 || self.n == 0 || self.m == 0 {
            return Err(Error::InvalidConfig("n, m and the dimension must be positive".into()));
        }
        let simplex = |w: &[f64], name: &str| -> Result<()> {
            if w.iter().any(|&v| !(v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("{name} must lie on the simplex")));
            }
            Ok(())
        };
        simplex(&self.x_weights, "x_weights")?;
        if self.x_weights.len() != self.x_means.len() {
            return Err(Error::InvalidConfig("x_weights and x_means differ in length".into()));
        }
        for m in self.x_means.iter().chain(&self.err_means) {
            if m.len() != p {
                return Err(Error::DimensionMismatch { expected: p, found: m.len() });
            }
        }
        if !(self.d_x >= 0.0 && self.d_err >= 0.0) {
            return Err(Error::InvalidConfig("d_x and d_err must be nonnegative".into()));
        }
        match self.error_law {
            ErrorLaw::Mixture => {
                simplex(&self.err_weights, "err_weights")?;
                if self.err_weights.len() != self.err_means.len() + 1 {
                    return Err(Error::InvalidConfig("err_weights needs one more entry than err_means".into()));
                }
                if !(*self.err_weights.last().unwrap() > 0.0) {
                    return Err(Error::InvalidConfig("the closing error weight must be positive".into()));
                }
            }
            ErrorLaw::MultivariateT { nu } if !(nu > 2.0) => {
                return Err(Error::InvalidConfig(format!("t degrees of freedom {nu} must exceed 2")));
            }
            _ => {}
        }
        Ok(())
    }

    /// Every error-component mean, the last closing the restriction.
    pub fn error_means(&self) -> Vec<DVector<f64>> {
        let p = self.dim();
        let mut means: Vec<DVector<f64>> = self.err_means.iter().map(|m| DVector::from_column_slice(m)).collect();
        let w = &self.err_weights;
        let partial = means.iter().zip(w).fold(DVector::zeros(p), |a, (m, &wk)| a + m * wk);
        means.push(-partial / w[w.len() - 1]);
        means
    }

    pub fn x_covariance(&self) -> Result<SpdMatrix> {
        build_covariance(self.structure, self.dim(), Role::X, self.d_x)
    }

    pub fn error_covariance(&self) -> Result<SpdMatrix> {
        build_covariance(self.structure, self.dim(), Role::Error, self.d_err)
    }

    /// The exact `f_X` as a mixture state.
    pub fn truth(&self) -> Result<MixtureState> {
        let cov = self.x_covariance()?;
        Ok(MixtureState {
            weights: self.x_weights.clone(),
            means: self.x_means.iter().map(|m| DVector::from_column_slice(m)).collect(),
            cov: Covariances::Full(vec![cov; self.x_weights.len()]),
        })
    }
}

/// `s(x) = |1 + x/4|`, the heteroscedastic truth.
pub fn true_scale(x: f64) -> f64 {
    (1.0 + x / 4.0).abs()
}

fn cholesky_or_zero(m: &SpdMatrix) -> Result<DMatrix<f64>> {
    if m.as_matrix().iter().all(|&v| v == 0.0) {
        return Ok(m.as_matrix().clone());
    }
    m.as_matrix().clone().cholesky().map(|c| c.l()).ok_or(Error::NotPositiveDefinite { dim: m.dim() })
}

/// Scenario with factored covariances, for repeated draws.
#[derive(Clone, Debug)]
pub struct Generator {
    pub scenario: Scenario,
    x_means: Vec<DVector<f64>>,
    x_chol: DMatrix<f64>,
    err_means: Vec<DVector<f64>>,
    err_chol: DMatrix<f64>,
}

fn categorical(w: &[f64], rng: &mut RngStream) -> usize {
    let mut u = rng.open01();
    for (k, &wk) in w.iter().enumerate() {
        if u < wk {
            return k;
        }
        u -= wk;
    }
    w.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

impl Generator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        Ok(Self {
            x_means: scenario.x_means.iter().map(|m| DVector::from_column_slice(m)).collect(),
            x_chol: cholesky_or_zero(&scenario.x_covariance()?)?,
            err_means: scenario.error_means(),
            err_chol: cholesky_or_zero(&scenario.error_covariance()?)?,
            scenario: scenario.clone(),
        })
    }

    fn gaussian(&self, chol: &DMatrix<f64>, rng: &mut RngStream) -> DVector<f64> {
        let z = DVector::from_fn(chol.nrows(), |_, _| rng.std_normal());
        chol * z
    }

    /// Draw and the index of its mixture component.
    pub fn sample_x_labeled(&self, rng: &mut RngStream) -> (DVector<f64>, usize) {
        let k = categorical(&self.scenario.x_weights, rng);
        (&self.x_means[k] + self.gaussian(&self.x_chol, rng), k)
    }

    pub fn sample_x(&self, rng: &mut RngStream) -> DVector<f64> {
        self.sample_x_labeled(rng).0
    }

    /// One scaled error `ε`.
    pub fn sample_error(&self, rng: &mut RngStream) -> DVector<f64> {
        match self.scenario.error_law {
            ErrorLaw::Normal => self.gaussian(&self.err_chol, rng),
            ErrorLaw::Mixture => {
                let k = categorical(&self.scenario.err_weights, rng);
                &self.err_means[k] + self.gaussian(&self.err_chol, rng)
            }
            ErrorLaw::MultivariateT { nu } => {
                let y = gamma_draw(nu / 2.0, 0.5, rng);
                self.gaussian(&self.err_chol, rng) * (nu / y).sqrt()
            }
            ErrorLaw::Laplace => {
                let y = gamma_draw(1.0, 1.0, rng);
                self.gaussian(&self.err_chol, rng) * y.sqrt()
            }
        }
    }

    /// `W_ij = X_i + S(X_i) ε_ij` (or `X_i + ε_ij`).
    pub fn generate(&self, rng: &mut RngStream) -> Result<SimulatedData> {
        let s = &self.scenario;
        let mut xs = Vec::with_capacity(s.n);
        let mut subjects = Vec::with_capacity(s.n);
        for _ in 0..s.n {
            let x = self.sample_x(rng);
            let reps = (0..s.m)
                .map(|_| {
                    let e = self.sample_error(rng);
                    if s.heteroscedastic {
                        &x + e.zip_map(&x, |ej, xj| true_scale(xj) * ej)
                    } else {
                        &x + e
                    }
                })
                .collect();
            subjects.push(reps);
            xs.push(x);
        }
        Ok(SimulatedData { data: ReplicateDataset::new(subjects)?, x: xs, truth: s.truth()? })
    }
}

pub fn sample_truth_x(scenario: &Scenario, rng: &mut RngStream) -> Result<DVector<f64>> {
    Ok(Generator::new(scenario)?.sample_x(rng))
}

pub fn sample_error(scenario: &Scenario, rng: &mut RngStream) -> Result<DVector<f64>> {
    Ok(Generator::new(scenario)?.sample_error(rng))
}

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub data: ReplicateDataset,
    /// The latent values that generated `data`.
    pub x: Vec<DVector<f64>>,
    pub truth: MixtureState,
}

pub fn generate_dataset(scenario: &Scenario, rng: &mut RngStream) -> Result<SimulatedData> {
    Generator::new(scenario)?.generate(rng)
}

/// Importance density for the ISE integral.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImportanceDensity {
    Truth,
    /// Uniform on `[lo, hi]` (coordinatewise).
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl ImportanceDensity {
    /// Box spanning every true component mean ± 3.
    pub fn uniform_around(truth: &MixtureState) -> Self {
        let p = truth.dim();
        let lo = (0..p).map(|l| truth.means.iter().map(|m| m[l]).fold(f64::INFINITY, f64::min) - 3.0).collect();
        let hi = (0..p).map(|l| truth.means.iter().map(|m| m[l]).fold(f64::NEG_INFINITY, f64::max) + 3.0).collect();
        ImportanceDensity::Uniform { lo, hi }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ImportanceDensity::Truth => "truth",
            ImportanceDensity::Uniform { .. } => "uniform",
        }
    }
}

/// Importance-sampling estimate of `∫ (f − f̂)²` and its Monte Carlo
/// standard error, from `m` draws of `p0`.
pub fn ise_estimate(
    truth: &MixtureState,
    fitted: &(dyn Fn(&[f64]) -> f64 + Sync),
    p0: &ImportanceDensity,
    m: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(Error::InvalidConfig("M must be positive".into()));
    }
    let f = GaussianMixture::from_state(truth)?;
    let p = truth.dim();
    let (points, ln_p0): (Vec<DVector<f64>>, Vec<f64>) = match p0 {
        ImportanceDensity::Truth => {
            let g = TruthSampler::new(truth)?;
            (0..m)
                .map(|_| {
                    let x = g.sample(rng);
                    let l = f.ln_density(x.as_slice());
                    (x, l)
                })
                .unzip()
        }
        ImportanceDensity::Uniform { lo, hi } => {
            if lo.len() != p || hi.len() != p {
                return Err(Error::DimensionMismatch { expected: p, found: lo.len() });
            }
            let ln_vol: f64 = lo.iter().zip(hi).map(|(a, b)| (b - a).ln()).sum();
            ((0..m).map(|_| DVector::from_fn(p, |l, _| lo[l] + (hi[l] - lo[l]) * rng.open01())).collect(), vec![-ln_vol; m])
        }
    };
    let terms: Vec<f64> = points
        .par_iter()
        .zip(&ln_p0)
        .map(|(x, &lp)| {
            if lp == f64::NEG_INFINITY || lp.is_nan() {
                return Err(Error::ZeroImportanceDensity);
            }
            let d = f.density(x.as_slice()) - fitted(x.as_slice());
            Ok(d * d / lp.exp())
        })
        .collect::<Result<_>>()?;
    let mean = terms.iter().sum::<f64>() / m as f64;
    let var = if m > 1 { terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1) as f64 } else { 0.0 };
    Ok((mean, (var / m as f64).sqrt()))
}

/// Sampler for a full-covariance truth state.
struct TruthSampler {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    chols: Vec<DMatrix<f64>>,
}

impl TruthSampler {
    fn new(truth: &MixtureState) -> Result<Self> {
        Ok(Self {
            weights: truth.weights.clone(),
            means: truth.means.clone(),
            chols: truth
                .covariances()
                .into_iter()
                .map(|c| c.cholesky().map(|f| f.l()).ok_or(Error::NotPositiveDefinite { dim: truth.dim() }))
                .collect::<Result<_>>()?,
        })
    }

    fn sample(&self, rng: &mut RngStream) -> DVector<f64> {
        let k = categorical(&self.weights, rng);
        let z = DVector::from_fn(self.means[k].len(), |_, _| rng.std_normal());
        &self.means[k] + &self.chols[k] * z
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub p0: String,
    pub ise: Vec<f64>,
    /// Importance-sampling standard error of each ISE.
    pub ise_se: Vec<f64>,
    pub mise: f64,
    /// Monte Carlo standard error of `mise` from the importance sampling.
    pub mc_se: f64,
    /// Between-replication standard error of `mise`.
    pub replication_se: f64,
}

/// `B⁻¹ Σ_b M⁻¹ Σ_m (f − f̂_b)² / p_0` over the supplied fits; replication `b`
/// draws from `rng.derive(b)`.
pub fn mise_estimate(
    truth: &MixtureState,
    fits: &[&(dyn Fn(&[f64]) -> f64 + Sync)],
    p0: &ImportanceDensity,
    m: usize,
    rng: &RngStream,
) -> Result<SimResult> {
    if fits.is_empty() {
        return Err(Error::InvalidConfig("B must be positive".into()));
    }
    let mut ise = Vec::with_capacity(fits.len());
    let mut ise_se = Vec::with_capacity(fits.len());
    for (b, f) in fits.iter().enumerate() {
        let (v, se) = ise_estimate(truth, *f, p0, m, &mut rng.derive(b as u64))?;
        ise.push(v);
        ise_se.push(se);
    }
    let nb = ise.len() as f64;
    let mise = ise.iter().sum::<f64>() / nb;
    let mc_se = ise_se.iter().map(|s| s * s).sum::<f64>().sqrt() / nb;
    let replication_se =
        if ise.len() > 1 { (ise.iter().map(|v| (v - mise).powi(2)).sum::<f64>() / (nb - 1.0) / nb).sqrt() } else { 0.0 };
    Ok(SimResult { p0: p0.label().to_string(), ise, ise_se, mise, mc_se, replication_se })
}

/// ISEs of several models fitted to the same replicated datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub models: Vec<ModelKind>,
    pub p0: Vec<String>,
    /// `ise[p0][model][replication]`.
    pub ise: Vec<Vec<Vec<f64>>>,
}

impl ExperimentReport {
    pub fn median(&self, p0: usize, model: usize) -> f64 {
        let mut v = self.ise[p0][model].clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Replications where `a` has strictly smaller ISE than `b`.
    pub fn wins(&self, p0: usize, a: usize, b: usize) -> usize {
        self.ise[p0][a].iter().zip(&self.ise[p0][b]).filter(|(x, y)| x < y).count()
    }
}

/// Replication `b` generates data from `rng(seed).derive(b)`, fits every
/// configuration (its seed offset by `b`), and scores each fit against the
/// truth under every importance density. Replications run in parallel.
pub fn run_experiment(
    scenario: &Scenario,
    configs: &[FitConfig],
    replications: usize,
    m: usize,
    p0s: &[ImportanceDensity],
    seed: u64,
) -> Result<ExperimentReport> {
    let generator = Generator::new(scenario)?;
    let truth = scenario.truth()?;
    let root = RngStream::new(seed, 0);
    let per_rep: Vec<Vec<Vec<f64>>> = (0..replications)
        .into_par_iter()
        .map(|b| -> Result<Vec<Vec<f64>>> {
            let rep = root.derive(b as u64);
            let sim = generator.generate(&mut rep.derive(0))?;
            let mut out = vec![Vec::with_capacity(configs.len()); p0s.len()];
            for (c, cfg) in configs.iter().enumerate() {
                let cfg = FitConfig { seed: cfg.seed.wrapping_add(b as u64), ..cfg.clone() };
                let fit = run_fit(&sim.data, &cfg)?;
                let dens = fit.summary.density()?;
                let f = |x: &[f64]| dens.density(x);
                for (j, p0) in p0s.iter().enumerate() {
                    let (v, _) = ise_estimate(&truth, &f, p0, m, &mut rep.derive(1 + (c * p0s.len() + j) as u64))?;
                    out[j].push(v);
                }
                log::info!("replication {b}: {} done", cfg.model.as_str());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let ise = (0..p0s.len())
        .map(|j| (0..configs.len()).map(|c| per_rep.iter().map(|r| r[j][c]).collect()).collect())
        .collect();
    Ok(ExperimentReport {
        models: configs.iter().map(|c| c.model).collect(),
        p0: p0s.iter().map(|p| p.label().to_string()).collect(),
        ise,
    })
}
