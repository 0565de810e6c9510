//! Univariate heteroscedastic submodels `W_ij = X_i + s(X_i) ε_ij`, one per
//! coordinate, used to estimate and then freeze the variance functions.
//!
//! The scaled-error density is a mixture of two-point normal mixtures, each
//! reparametrized so that its mean is zero for every parameter value. That
//! lets the component parameters be moved by plain Metropolis–Hastings
//! against `f_{U|X}` without ever re-centering.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ReplicateDataset;
use crate::error::{Error, Result};
use crate::error_model::{ScaleField, MIN_SCALE};
use crate::mixture::{gibbs_sweep, update_weights, Covariances, GaussianMixture, HyperParams, MixtureState};
use crate::splines::{local_basis, second_difference_energy, KnotVector, VarianceFunction};
use crate::stats::{
    inv_gamma_draw, ln_normal_pdf, sample_log_categorical, sample_truncated_normal, truncated_normal_ln_mass,
    RngStream, SpdMatrix,
};

/// Zero-mean two-point normal mixture `p N(c_1 μ̃, σ̃_1²) + (1-p) N(c_2 μ̃, σ̃_2²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PelenisComponent {
    pub p_tilde: f64,
    pub mu_tilde: f64,
    pub sig1_sq: f64,
    pub sig2_sq: f64,
}

impl PelenisComponent {
    pub fn new(p_tilde: f64, mu_tilde: f64, sig1_sq: f64, sig2_sq: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_tilde) || !mu_tilde.is_finite() {
            return Err(Error::InvalidConfig(format!("p̃ = {p_tilde}, μ̃ = {mu_tilde}")));
        }
        for s in [sig1_sq, sig2_sq] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidScale(s));
            }
        }
        Ok(Self { p_tilde, mu_tilde, sig1_sq, sig2_sq })
    }

    /// Unit-variance standard component (`p̃ = 1/2`, `μ̃ = 0`).
    pub fn standard() -> Self {
        Self { p_tilde: 0.5, mu_tilde: 0.0, sig1_sq: 1.0, sig2_sq: 1.0 }
    }

    pub fn mean_coefficients(&self) -> (f64, f64) {
        let p = self.p_tilde;
        let norm = (p * p + (1.0 - p) * (1.0 - p)).sqrt();
        ((1.0 - p) / norm, -p / norm)
    }

    /// `[(p_1, μ_1, σ_1²), (p_2, μ_2, σ_2²)]`.
    pub fn expand(&self) -> [(f64, f64, f64); 2] {
        let (c1, c2) = self.mean_coefficients();
        [(self.p_tilde, c1 * self.mu_tilde, self.sig1_sq), (1.0 - self.p_tilde, c2 * self.mu_tilde, self.sig2_sq)]
    }

    pub fn variance(&self) -> f64 {
        self.expand().iter().map(|(p, m, v)| p * (m * m + v)).sum()
    }

    /// Log density on the scaled-error scale.
    pub fn ln_density(&self, e: f64) -> f64 {
        let [a, b] = self.expand().map(|(p, m, v)| if p > 0.0 { p.ln() + ln_normal_pdf(e, m, v) } else { f64::NEG_INFINITY });
        let m = a.max(b);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + ((a - m).exp() + (b - m).exp()).ln()
    }

    /// `ln f_{U|X}(u)` when the conditional scale is `s`.
    pub fn ln_density_scaled(&self, u: f64, s: f64) -> f64 {
        self.ln_density(u / s) - s.ln()
    }
}

/// `(p_1, μ_1, σ_1², p_2, μ_2, σ_2²)`.
pub fn pelenis_expand(c: &PelenisComponent) -> (f64, f64, f64, f64, f64, f64) {
    let [(p1, m1, v1), (p2, m2, v2)] = c.expand();
    (p1, m1, v1, p2, m2, v2)
}

/// `f_{U|X}(u | x) = Σ_r p_r N(u | s(x) μ_r, s(x)² σ_r²)`.
pub fn conditional_likelihood_u(u: f64, x: f64, vf: &VarianceFunction, comp: &PelenisComponent) -> Result<f64> {
    let s = vf.scale_at(x)?;
    Ok(comp.ln_density_scaled(u, s).exp())
}

/// Complete state of one coordinate's submodel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnivariateChain {
    pub x: Vec<f64>,
    pub vf: VarianceFunction,
    pub weights: Vec<f64>,
    pub components: Vec<PelenisComponent>,
    /// Error-component label of every replicate, per subject.
    pub labels: Vec<Vec<usize>>,
    /// Prior on the latent values: an overfitted univariate normal mixture.
    pub x_prior: MixtureState,
    pub x_labels: Vec<usize>,
}

impl UnivariateChain {
    pub fn lo(&self) -> f64 {
        self.vf.knots.lo()
    }

    pub fn hi(&self) -> f64 {
        self.vf.knots.hi()
    }

    /// Variance of the current scaled-error mixture.
    pub fn error_variance(&self) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.variance()).sum()
    }

    fn scale(&self, x: f64) -> Result<f64> {
        let s = self.vf.scale_at(x)?;
        if !(s >= MIN_SCALE) {
            return Err(Error::ScaleUnderflow { subject: 0, coord: 0, value: s });
        }
        Ok(s)
    }

    /// `Σ_j ln f_{U|X}(w_ij − x | x)` for subject `i` evaluated at a candidate `x`.
    fn subject_ln_lik(&self, i: usize, x: f64, s: f64, column: &[Vec<f64>]) -> f64 {
        column[i].iter().zip(&self.labels[i]).map(|(w, &c)| self.components[c].ln_density_scaled(w - x, s)).sum()
    }
}

/// Random-walk proposal scales, one per block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub xi: f64,
    /// `logit p̃`, `μ̃`, `ln σ̃_1²`, `ln σ̃_2²`.
    pub theta: [f64; 4],
    pub x: f64,
}

/// Accepted / proposed counts per block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub xi: (u64, u64),
    pub theta: [(u64, u64); 4],
    pub x: (u64, u64),
}

impl Acceptance {
    pub fn add(&mut self, o: &Acceptance) {
        let f = |a: &mut (u64, u64), b: (u64, u64)| {
            a.0 += b.0;
            a.1 += b.1;
        };
        f(&mut self.xi, o.xi);
        f(&mut self.x, o.x);
        for (a, b) in self.theta.iter_mut().zip(o.theta) {
            f(a, b);
        }
    }

    pub fn rate(c: (u64, u64)) -> f64 {
        if c.1 == 0 {
            f64::NAN
        } else {
            c.0 as f64 / c.1 as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnivariateHyper {
    /// Dirichlet concentration for both the error and the latent mixtures.
    pub alpha: f64,
    pub a_xi: f64,
    pub b_xi: f64,
    pub x: HyperParams,
}

fn accept(ln_ratio: f64, rng: &mut RngStream) -> bool {
    ln_ratio >= 0.0 || rng.open01().ln() < ln_ratio
}

/// Random-walk MH on each spline coefficient in turn against the smoothness
/// prior and `f_{U|X}`.
pub fn update_xi(chain: &mut UnivariateChain, column: &[Vec<f64>], step: f64, rng: &mut RngStream) -> Result<(u64, u64)> {
    let kv = chain.vf.knots.clone();
    let q = kv.degree();
    let n = chain.x.len();
    let mut starts = Vec::with_capacity(n);
    let mut bases = Vec::with_capacity(n);
    for &x in &chain.x {
        let mut b = [0.0f64; 8];
        starts.push(local_basis(x, &kv, &mut b[..=q])?);
        bases.push(b);
    }
    let variance = |xi: &[f64], i: usize| -> f64 {
        bases[i][..=q].iter().zip(&xi[starts[i]..]).map(|(b, c)| b * c.exp()).sum()
    };
    let mut acc = (0, 0);
    for j in 0..kv.n_basis() {
        let z = rng.std_normal();
        acc.1 += 1;
        if step == 0.0 {
            acc.0 += 1;
            continue;
        }
        let old = chain.vf.xi.clone();
        let mut new = old.clone();
        new[j] += step * z;
        let mut ln_r = -(second_difference_energy(&new) - second_difference_energy(&old)) / (2.0 * chain.vf.sigma_xi_sq);
        for i in (0..n).filter(|&i| starts[i] <= j && j <= starts[i] + q) {
            let (s_old, s_new) = (variance(&old, i).sqrt(), variance(&new, i).sqrt());
            if !(s_new >= MIN_SCALE) {
                ln_r = f64::NEG_INFINITY;
                break;
            }
            ln_r += chain.subject_ln_lik(i, chain.x[i], s_new, column) - chain.subject_ln_lik(i, chain.x[i], s_old, column);
        }
        if accept(ln_r, rng) {
            chain.vf.xi = new;
            acc.0 += 1;
        }
    }
    Ok(acc)
}

/// Conjugate draw of the smoothing variance. The penalty has rank `J − 2`,
/// which sets the shape increment.
pub fn update_sigma_xi(chain: &mut UnivariateChain, hyper: &UnivariateHyper, rng: &mut RngStream) {
    let j = chain.vf.xi.len() as f64;
    let shape = hyper.a_xi + (j - 2.0) / 2.0;
    let rate = hyper.b_xi + 0.5 * second_difference_energy(&chain.vf.xi);
    chain.vf.sigma_xi_sq = inv_gamma_draw(shape, rate, rng);
}

const THETA_SHAPE: f64 = 1.1;
const THETA_RATE: f64 = 1.0;

/// Prior of the transformed parameters `(logit p̃, μ̃, ln σ̃_1², ln σ̃_2²)`,
/// Jacobians included: `p̃ ~ U(0,1)`, `μ̃ ~ N(0,1)`, `σ̃² ~ IG(1.1, 1)`.
fn theta_ln_prior(c: &PelenisComponent) -> f64 {
    let p = c.p_tilde;
    let ig = |s: f64| -THETA_SHAPE * s.ln() - THETA_RATE / s;
    p.ln() + (1.0 - p).ln() - 0.5 * c.mu_tilde * c.mu_tilde + ig(c.sig1_sq) + ig(c.sig2_sq)
}

fn perturb(c: &PelenisComponent, coord: usize, delta: f64) -> PelenisComponent {
    let mut out = *c;
    match coord {
        0 => {
            let l = (c.p_tilde / (1.0 - c.p_tilde)).ln() + delta;
            out.p_tilde = 1.0 / (1.0 + (-l).exp());
        }
        1 => out.mu_tilde += delta,
        2 => out.sig1_sq *= delta.exp(),
        _ => out.sig2_sq *= delta.exp(),
    }
    out
}

/// One coordinate-wise MH pass over every component's parameters.
pub fn update_components(
    chain: &mut UnivariateChain,
    column: &[Vec<f64>],
    steps: &[f64; 4],
    rng: &mut RngStream,
) -> Result<[(u64, u64); 4]> {
    let k = chain.components.len();
    // (u, s) pairs currently assigned to each component.
    let mut members: Vec<Vec<(f64, f64)>> = vec![Vec::new(); k];
    for (i, reps) in column.iter().enumerate() {
        let s = chain.scale(chain.x[i])?;
        for (w, &c) in reps.iter().zip(&chain.labels[i]) {
            members[c].push((w - chain.x[i], s));
        }
    }
    let ln_target = |c: &PelenisComponent, obs: &[(f64, f64)]| -> f64 {
        theta_ln_prior(c) + obs.iter().map(|&(u, s)| c.ln_density_scaled(u, s)).sum::<f64>()
    };
    let mut acc = [(0, 0); 4];
    for (comp, obs) in chain.components.iter_mut().zip(&members) {
        let mut current = ln_target(comp, obs);
        for coord in 0..4 {
            let z = rng.std_normal();
            acc[coord].1 += 1;
            if steps[coord] == 0.0 {
                acc[coord].0 += 1;
                continue;
            }
            let prop = perturb(comp, coord, steps[coord] * z);
            let valid = prop.p_tilde > 0.0 && prop.p_tilde < 1.0 && prop.sig1_sq > 0.0 && prop.sig2_sq > 0.0;
            if !valid || !prop.sig1_sq.is_finite() || !prop.sig2_sq.is_finite() {
                continue;
            }
            let t = ln_target(&prop, obs);
            if accept(t - current, rng) {
                *comp = prop;
                current = t;
                acc[coord].0 += 1;
            }
        }
    }
    Ok(acc)
}

/// Dirichlet draw of the outer weights followed by the replicate labels.
pub fn update_error_labels(
    chain: &mut UnivariateChain,
    column: &[Vec<f64>],
    hyper: &UnivariateHyper,
    rng: &mut RngStream,
) -> Result<()> {
    let k = chain.components.len();
    let flat: Vec<usize> = chain.labels.iter().flatten().copied().collect();
    chain.weights = update_weights(&flat, hyper.alpha, k, rng)?;
    let ln_w: Vec<f64> = chain.weights.iter().map(|w| w.ln()).collect();
    let mut lp = vec![0.0; k];
    let mut index = 0;
    for (i, reps) in column.iter().enumerate() {
        let s = chain.scale(chain.x[i])?;
        for (j, w) in reps.iter().enumerate() {
            let u = w - chain.x[i];
            for (c, l) in lp.iter_mut().enumerate() {
                *l = ln_w[c] + chain.components[c].ln_density_scaled(u, s);
            }
            chain.labels[i][j] = sample_log_categorical(&lp, rng).ok_or(Error::AllResponsibilitiesUnderflow { index })?;
            index += 1;
        }
    }
    Ok(())
}

/// MH move for every latent value with a normal proposal truncated to the
/// spline support, targeting `prior(x) Π_j f_{U|X}(w_ij − x | x)`.
pub fn update_latent_x(chain: &mut UnivariateChain, column: &[Vec<f64>], step: f64, rng: &mut RngStream) -> Result<(u64, u64)> {
    let (lo, hi) = (chain.lo(), chain.hi());
    let prior = GaussianMixture::from_state(&chain.x_prior)?;
    let mut acc = (0, 0);
    for i in 0..chain.x.len() {
        acc.1 += 1;
        let x = chain.x[i];
        let prop = sample_truncated_normal(x, step, lo, hi, rng)?;
        let u = rng.open01();
        if step == 0.0 {
            acc.0 += 1;
            continue;
        }
        let s_new = chain.vf.scale_at(prop)?;
        if !(s_new >= MIN_SCALE) {
            continue;
        }
        let s_old = chain.scale(x)?;
        let ln_r = prior.ln_density(&[prop]) - prior.ln_density(&[x]) + chain.subject_ln_lik(i, prop, s_new, column)
            - chain.subject_ln_lik(i, x, s_old, column)
            + truncated_normal_ln_mass(x, step, lo, hi)
            - truncated_normal_ln_mass(prop, step, lo, hi);
        if ln_r >= 0.0 || u.ln() < ln_r {
            chain.x[i] = prop;
            acc.0 += 1;
        }
    }
    Ok(acc)
}

/// One full sweep: spline coefficients, smoothing variance, error component
/// parameters, error weights and labels, latent values, latent prior.
pub fn mh_sweep_univariate(
    chain: &mut UnivariateChain,
    column: &[Vec<f64>],
    hyper: &UnivariateHyper,
    scales: &ProposalScales,
    rng: &mut RngStream,
) -> Result<Acceptance> {
    let mut acc = Acceptance { xi: update_xi(chain, column, scales.xi, rng)?, ..Default::default() };
    update_sigma_xi(chain, hyper, rng);
    acc.theta = update_components(chain, column, &scales.theta, rng)?;
    update_error_labels(chain, column, hyper, rng)?;
    acc.x = update_latent_x(chain, column, scales.x, rng)?;
    let pts: Vec<DVector<f64>> = chain.x.iter().map(|&v| DVector::from_element(1, v)).collect();
    gibbs_sweep(&pts, &mut chain.x_labels, &mut chain.x_prior, &hyper.x, rng)?;
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Settings {
    pub iterations: usize,
    pub burn_in: usize,
    pub k_err: usize,
    pub k_x: usize,
    pub degree: usize,
    pub intervals: usize,
    pub alpha: f64,
    pub a_xi: f64,
    pub b_xi: f64,
    /// Burn-in iterations between proposal-scale adjustments.
    pub adapt_every: usize,
}

impl Default for Stage1Settings {
    fn default() -> Self {
        Self {
            iterations: 1000,
            burn_in: 500,
            k_err: 5,
            k_x: 6,
            degree: crate::splines::DEFAULT_DEGREE,
            intervals: crate::splines::DEFAULT_INTERVALS,
            alpha: 1.0,
            a_xi: 0.01,
            b_xi: 0.01,
            adapt_every: 50,
        }
    }
}

impl Stage1Settings {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!("burn-in {} must be below iterations {}", self.burn_in, self.iterations)));
        }
        if self.k_err == 0 || self.k_x == 0 || self.adapt_every == 0 {
            return Err(Error::InvalidConfig("component counts and adaptation window must be positive".into()));
        }
        Ok(())
    }
}

/// Posterior summary of one coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Coordinate {
    /// Estimated `var(U | X = x)`: the spline is rescaled by the scaled-error
    /// variance at every retained draw, since only the product is identified.
    pub variance: VarianceFunction,
    pub x_mean: Vec<f64>,
    pub acceptance: Acceptance,
    pub final_scales: ProposalScales,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Fit {
    pub coords: Vec<Stage1Coordinate>,
}

impl Stage1Fit {
    pub fn scale_field(&self) -> ScaleField {
        ScaleField::Spline(self.coords.iter().map(|c| c.variance.clone()).collect())
    }

    /// Posterior-mean latent vectors, one per subject.
    pub fn x_means(&self) -> Vec<DVector<f64>> {
        let n = self.coords.first().map_or(0, |c| c.x_mean.len());
        (0..n).map(|i| DVector::from_iterator(self.coords.len(), self.coords.iter().map(|c| c.x_mean[i]))).collect()
    }
}

/// Starting state: latent values at subject means, a constant variance
/// function at the pooled within-subject variance, unit-variance errors.
pub fn initial_chain(column: &[Vec<f64>], knots: KnotVector, settings: &Stage1Settings) -> Result<(UnivariateChain, UnivariateHyper, ProposalScales)> {
    let n = column.len();
    let means: Vec<f64> = column.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let (mut ss, mut dof) = (0.0, 0usize);
    for (r, m) in column.iter().zip(&means) {
        ss += r.iter().map(|w| (w - m).powi(2)).sum::<f64>();
        dof += r.len() - 1;
    }
    if dof == 0 {
        return Err(Error::InsufficientReplicates);
    }
    let width = knots.hi() - knots.lo();
    let within = (ss / dof as f64).max(1e-10 * width * width);
    let x: Vec<f64> = means.iter().map(|m| m.clamp(knots.lo(), knots.hi())).collect();

    let pts: Vec<DVector<f64>> = x.iter().map(|&v| DVector::from_element(1, v)).collect();
    let mut xh = HyperParams::empirical(&pts, false)?;
    xh.alpha = settings.alpha;
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let kx = settings.k_x;
    let centers: Vec<f64> = (0..kx).map(|k| sorted[((2 * k + 1) * n / (2 * kx)).min(n - 1)]).collect();
    let spread = xh.psi0.as_matrix()[(0, 0)] / (kx * kx) as f64;
    let x_labels: Vec<usize> = x
        .iter()
        .map(|&v| (0..kx).min_by(|&a, &b| (v - centers[a]).abs().total_cmp(&(v - centers[b]).abs())).unwrap())
        .collect();
    let x_prior = MixtureState {
        weights: vec![1.0 / kx as f64; kx],
        means: centers.iter().map(|&c| DVector::from_element(1, c)).collect(),
        cov: Covariances::Full(vec![SpdMatrix::from_diagonal(&[spread.max(1e-12)]); kx]),
    };

    let ke = settings.k_err;
    let chain = UnivariateChain {
        x,
        vf: VarianceFunction::new(knots.clone(), vec![within.ln(); knots.n_basis()], 0.1)?,
        weights: vec![1.0 / ke as f64; ke],
        components: vec![PelenisComponent::standard(); ke],
        labels: column.iter().enumerate().map(|(i, r)| (0..r.len()).map(|j| (i + j) % ke).collect()).collect(),
        x_prior,
        x_labels,
    };
    let hyper = UnivariateHyper { alpha: settings.alpha, a_xi: settings.a_xi, b_xi: settings.b_xi, x: xh };
    let scales = ProposalScales { xi: 0.3, theta: [0.5, 0.3, 0.5, 0.5], x: within.sqrt().max(1e-3 * width) };
    Ok((chain, hyper, scales))
}

/// Window acceptance rates outside [0.25, 0.45] shrink or grow the step.
fn adapt(step: &mut f64, window: (u64, u64)) {
    let rate = Acceptance::rate(window);
    if rate < 0.25 {
        *step *= 0.7;
    } else if rate > 0.45 {
        *step *= 1.4;
    }
}

/// Runs one coordinate's chain and averages retained draws.
pub fn fit_coordinate(column: &[Vec<f64>], knots: KnotVector, settings: &Stage1Settings, rng: &mut RngStream) -> Result<Stage1Coordinate> {
    settings.validate()?;
    let (mut chain, hyper, mut scales) = initial_chain(column, knots, settings)?;
    let n = chain.x.len();
    let jb = chain.vf.xi.len();
    let mut xi_sum = vec![0.0; jb];
    let mut x_sum = vec![0.0; n];
    let mut window = Acceptance::default();
    let mut total = Acceptance::default();
    for it in 0..settings.iterations {
        let acc = mh_sweep_univariate(&mut chain, column, &hyper, &scales, rng)?;
        if it < settings.burn_in {
            window.add(&acc);
            if (it + 1) % settings.adapt_every == 0 {
                adapt(&mut scales.xi, window.xi);
                adapt(&mut scales.x, window.x);
                for (s, w) in scales.theta.iter_mut().zip(window.theta) {
                    adapt(s, w);
                }
                window = Acceptance::default();
            }
            continue;
        }
        total.add(&acc);
        let shift = chain.error_variance().ln();
        for (a, x) in xi_sum.iter_mut().zip(&chain.vf.xi) {
            *a += x + shift;
        }
        for (a, x) in x_sum.iter_mut().zip(&chain.x) {
            *a += x;
        }
    }
    let kept = (settings.iterations - settings.burn_in) as f64;
    let sigma = chain.vf.sigma_xi_sq;
    Ok(Stage1Coordinate {
        variance: VarianceFunction::new(chain.vf.knots.clone(), xi_sum.iter().map(|v| v / kept).collect(), sigma)?,
        x_mean: x_sum.iter().map(|v| v / kept).collect(),
        acceptance: total,
        final_scales: scales,
    })
}

/// Fits every coordinate independently and in parallel; coordinate `ℓ` draws
/// from `rng.derive(ℓ)`.
pub fn fit_stage1(data: &ReplicateDataset, settings: &Stage1Settings, rng: &RngStream) -> Result<Stage1Fit> {
    settings.validate()?;
    if data.replicate_counts().iter().all(|&m| m < 2) {
        return Err(Error::InsufficientReplicates);
    }
    let ranges = data.inflated_ranges();
    let coords = (0..data.dim())
        .into_par_iter()
        .map(|l| {
            let knots = KnotVector::equidistant(settings.degree, settings.intervals, ranges[l].0, ranges[l].1)?;
            let mut r = rng.derive(l as u64);
            let fit = fit_coordinate(&data.column(l), knots, settings, &mut r)?;
            log::debug!("stage 1 coordinate {l}: x acceptance {:.2}", Acceptance::rate(fit.acceptance.x));
            Ok(fit)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Stage1Fit { coords })
}
