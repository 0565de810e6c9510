//! Full-chain orchestration: starting values, Gibbs sweeps for independent
//! and conditionally heteroscedastic errors, the naive comparator, and
//! posterior-mean density grids.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{select_clusters, Clustering};
use crate::dataset::ReplicateDataset;
use crate::error::{Error, Result};
use crate::error_model::{scaled_residuals, RestrictedMixture, ScaleField, MIN_SCALE};
use crate::hetero_stage1::{fit_stage1, Acceptance, Stage1Fit, Stage1Settings};
use crate::mixture::{
    default_truncation, gibbs_sweep, CovarianceModel, Covariances, FactorBlock, GaussianMixture, HyperParams,
    MixtureState, EMPTY_WEIGHT,
};
use crate::stats::{sample_truncated_normal, truncated_normal_ln_mass, CholFactor, RngStream, SpdMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Miw,
    Mlfa,
    Mlfad,
    /// Mixture fitted to subject means, ignoring measurement error.
    Naive,
}

impl ModelKind {
    pub fn covariance_model(self) -> CovarianceModel {
        match self {
            ModelKind::Mlfa => CovarianceModel::Mlfa,
            ModelKind::Mlfad => CovarianceModel::Mlfad,
            ModelKind::Miw | ModelKind::Naive => CovarianceModel::Miw,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Miw => "miw",
            ModelKind::Mlfa => "mlfa",
            ModelKind::Mlfad => "mlfad",
            ModelKind::Naive => "naive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: ModelKind,
    pub heteroscedastic: bool,
    /// Override for the number of `f_X` components (default: clusters + 2).
    pub k_x: Option<usize>,
    pub k_err: Option<usize>,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub hyper_x: Option<HyperParams>,
    pub hyper_err: Option<HyperParams>,
    pub stage1: Stage1Settings,
    pub grid_points: usize,
    pub max_clusters: usize,
    /// Burn-in iterations between adjustments of the latent-value step.
    pub adapt_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Mlfa,
            heteroscedastic: false,
            k_x: None,
            k_err: None,
            iterations: 3000,
            burn_in: 1000,
            thin: 5,
            seed: 0,
            hyper_x: None,
            hyper_err: None,
            stage1: Stage1Settings::default(),
            grid_points: 64,
            max_clusters: 8,
            adapt_every: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.grid_points < 2 || self.max_clusters == 0 || self.adapt_every == 0 {
            return Err(Error::InvalidConfig("thin, adapt_every and max_clusters must be ≥ 1, grid_points ≥ 2".into()));
        }
        if self.k_x == Some(0) || self.k_err == Some(0) {
            return Err(Error::InvalidConfig("component counts must be positive".into()));
        }
        if self.heteroscedastic && self.model != ModelKind::Naive {
            self.stage1.validate()?;
        }
        Ok(())
    }

    fn retained(&self, it: usize) -> bool {
        it >= self.burn_in && (it - self.burn_in) % self.thin == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypers {
    pub x: HyperParams,
    pub err: HyperParams,
}

/// Everything one sweep reads and writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub x: Vec<DVector<f64>>,
    pub fx: MixtureState,
    pub ferr: RestrictedMixture,
    pub labels_x: Vec<usize>,
    /// One label per observation, subject-major.
    pub labels_err: Vec<usize>,
    pub scale: ScaleField,
    /// Support `[A_ℓ, B_ℓ]` of the latent values for MH moves.
    pub bounds: Vec<(f64, f64)>,
    pub hyper: Hypers,
    pub iter: usize,
}

impl ChainState {
    pub fn validate(&self) -> Result<()> {
        self.fx.validate()?;
        self.ferr.inner.validate()?;
        for (&c, k) in self.labels_x.iter().zip(std::iter::repeat(self.fx.k())).chain(
            self.labels_err.iter().zip(std::iter::repeat(self.ferr.inner.k())),
        ) {
            if c >= k {
                return Err(Error::LabelOutOfRange { label: c, k });
            }
        }
        let r = self.ferr.constraint_residual();
        let scale = self.ferr.inner.means.iter().map(|m| m.amax()).fold(1.0, f64::max);
        if r.amax() > 1e-10 * scale {
            return Err(Error::Data(format!("error means violate the zero-mean restriction by {:e}", r.amax())));
        }
        if !self.scale.is_identity() {
            for x in &self.x {
                if x.iter().zip(&self.bounds).any(|(v, (lo, hi))| v < lo || v > hi) {
                    return Err(Error::Data("latent value outside the support".into()));
                }
            }
        }
        Ok(())
    }
}

/// Starting mixture from a hard partition: cluster weights and centers for
/// occupied components, zero weight at the overall mean for the rest.
fn mixture_from_clusters(
    points: &[DVector<f64>],
    clusters: &Clustering,
    k_total: usize,
    model: CovarianceModel,
    hyper: &HyperParams,
    zero_mean: bool,
) -> Result<(MixtureState, Vec<usize>)> {
    let n = points.len();
    let p = points[0].len();
    // An override smaller than the cluster count folds clusters together.
    let labels: Vec<usize> = clusters.assignments.iter().map(|&a| a % k_total).collect();
    let mut counts = vec![0usize; k_total];
    let mut sums = vec![DVector::zeros(p); k_total];
    for (x, &c) in points.iter().zip(&labels) {
        counts[c] += 1;
        sums[c] += x;
    }
    let overall = points.iter().fold(DVector::zeros(p), |a, x| a + x) / n as f64;
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut means: Vec<DVector<f64>> =
        (0..k_total).map(|k| if counts[k] > 0 { &sums[k] / counts[k] as f64 } else { overall.clone() }).collect();
    if zero_mean {
        let shift = weights.iter().zip(&means).fold(DVector::zeros(p), |a, (w, m)| a + m * *w);
        means.iter_mut().for_each(|m| *m -= &shift);
    }
    let mut scatter = vec![DMatrix::zeros(p, p); k_total];
    for (x, &c) in points.iter().zip(&labels) {
        let d = x - &sums[c] / counts[c] as f64;
        scatter[c] += &d * d.transpose();
    }
    let psi = hyper.psi0.as_matrix();
    let cov = match model {
        CovarianceModel::Miw => Covariances::Full(
            (0..k_total)
                .map(|k| SpdMatrix::new((&scatter[k] + psi) / (counts[k] + 1) as f64))
                .collect::<Result<_>>()?,
        ),
        _ => {
            let pooled = scatter.iter().fold(DMatrix::zeros(p, p), |a, s| a + s) / n.max(2) as f64;
            let omega: Vec<f64> =
                (0..p).map(|j| if pooled[(j, j)] > 1e-8 * psi[(j, j)] { pooled[(j, j)] } else { psi[(j, j)] }).collect();
            Covariances::Factor(FactorBlock::zeroed(model, k_total, default_truncation(p), n, &omega))
        }
    };
    Ok((MixtureState { weights, means, cov }, labels))
}

/// Starting values: latent values at stage-1 posterior means or subject
/// means, mixtures seeded by k-means with BIC-selected cluster counts.
pub fn initialize(
    data: &ReplicateDataset,
    cfg: &FitConfig,
    stage1: Option<&Stage1Fit>,
    rng: &mut RngStream,
) -> Result<ChainState> {
    if data.n_subjects() == 0 {
        return Err(Error::EmptyDataset);
    }
    let (x, scale) = match stage1 {
        Some(s) => (s.x_means(), s.scale_field()),
        None => (data.subject_means(), ScaleField::Identity),
    };
    let bounds = match &scale {
        ScaleField::Spline(vfs) => vfs.iter().map(|v| (v.knots.lo(), v.knots.hi())).collect(),
        ScaleField::Identity => data.inflated_ranges(),
    };
    let model = cfg.model.covariance_model();

    let hx = match &cfg.hyper_x {
        Some(h) => h.clone(),
        None => HyperParams::empirical(&x, false)?,
    };
    hx.validate()?;
    let cx = select_clusters(&x, cfg.max_clusters, rng)?;
    let kx = cfg.k_x.unwrap_or(cx.k() + 2);
    let (fx, labels_x) = mixture_from_clusters(&x, &cx, kx, model, &hx, false)?;

    let res = scaled_residuals(data, &x, &scale)?;
    let he = match &cfg.hyper_err {
        Some(h) => h.clone(),
        None => HyperParams::empirical(&res, true)?,
    };
    he.validate()?;
    let ce = select_clusters(&res, cfg.max_clusters, rng)?;
    let ke = cfg.k_err.unwrap_or(ce.k() + 2);
    let (ferr, labels_err) = mixture_from_clusters(&res, &ce, ke, model, &he, true)?;

    log::debug!("initial components: K_X = {kx}, K_ε = {ke}");
    Ok(ChainState {
        x,
        fx,
        ferr: RestrictedMixture::new(ferr),
        labels_x,
        labels_err,
        scale,
        bounds,
        hyper: Hypers { x: hx, err: he },
        iter: 0,
    })
}

fn inverses(state: &MixtureState) -> Result<Vec<DMatrix<f64>>> {
    state.covariances().iter().map(|c| Ok(CholFactor::from_matrix(c)?.inverse())).collect()
}

/// Exact draw of every `X_i` from its Gaussian full conditional with
/// precision `Σ_{X,k}⁻¹ + Σ_j Σ_{ε,k_j}⁻¹` and mean
/// `(…)⁻¹ (Σ_{X,k}⁻¹ μ_{X,k} + Σ_j Σ_{ε,k_j}⁻¹ (W_ij − μ_{ε,k_j}))`.
pub fn update_latent_x_closed_form(state: &mut ChainState, data: &ReplicateDataset, rng: &mut RngStream) -> Result<()> {
    let inv_x = inverses(&state.fx)?;
    let inv_e = inverses(&state.ferr.inner)?;
    let prior_terms: Vec<DVector<f64>> = inv_x.iter().zip(&state.fx.means).map(|(s, m)| s * m).collect();
    let mut idx = 0;
    for (i, reps) in data.subjects().iter().enumerate() {
        let k = state.labels_x[i];
        let mut prec = inv_x[k].clone();
        let mut rhs = prior_terms[k].clone();
        for w in reps {
            let c = state.labels_err[idx];
            prec += &inv_e[c];
            rhs += &inv_e[c] * (w - &state.ferr.inner.means[c]);
            idx += 1;
        }
        let chol = CholFactor::from_matrix(&prec)?;
        let mean = chol.solve(&rhs);
        let mut z: Vec<f64> = (0..mean.len()).map(|_| rng.std_normal()).collect();
        chol.backward_solve(&mut z);
        state.x[i] = mean + DVector::from_vec(z);
    }
    Ok(())
}

/// MH move for every `X_i` with independent normal proposals truncated to
/// `[A_ℓ, B_ℓ]`, targeting
/// `MVN(X | μ_{X,k}, Σ_{X,k}) Π_j MVN(W_ij | X + S μ_{ε,k_j}, S Σ_{ε,k_j} S)`.
pub fn update_latent_x_mh(
    state: &mut ChainState,
    data: &ReplicateDataset,
    steps: &[f64],
    rng: &mut RngStream,
) -> Result<(u64, u64)> {
    let chol_x: Vec<CholFactor> = state.fx.covariances().iter().map(CholFactor::from_matrix).collect::<Result<_>>()?;
    let chol_e: Vec<CholFactor> =
        state.ferr.inner.covariances().iter().map(CholFactor::from_matrix).collect::<Result<_>>()?;
    let p = data.dim();
    let mut buf = vec![0.0; p];
    let frozen = steps.iter().all(|&s| s == 0.0);
    let mut acc = (0, 0);
    let mut first = 0;
    for (i, reps) in data.subjects().iter().enumerate() {
        let labels = &state.labels_err[first..first + reps.len()];
        first += reps.len();
        acc.1 += 1;
        let cur = state.x[i].clone();
        let mut prop = cur.clone();
        let mut ln_q = 0.0;
        for l in 0..p {
            let (lo, hi) = state.bounds[l];
            prop[l] = sample_truncated_normal(cur[l], steps[l], lo, hi, rng)?;
            if steps[l] > 0.0 {
                ln_q += truncated_normal_ln_mass(cur[l], steps[l], lo, hi)
                    - truncated_normal_ln_mass(prop[l], steps[l], lo, hi);
            }
        }
        let u = rng.open01();
        if frozen {
            acc.0 += 1;
            continue;
        }
        let k = state.labels_x[i];
        let mut target = |x: &DVector<f64>| -> Result<f64> {
            let s = state.scale.scales(x)?;
            if s.iter().any(|&v| !(v >= MIN_SCALE)) {
                return Ok(f64::NEG_INFINITY);
            }
            let ln_s: f64 = s.iter().map(|v| v.ln()).sum();
            let mut t = chol_x[k].ln_normal_density(x.as_slice(), state.fx.means[k].as_slice(), &mut buf);
            for (w, &c) in reps.iter().zip(labels) {
                let e = (w - x).component_div(&s);
                t += chol_e[c].ln_normal_density(e.as_slice(), state.ferr.inner.means[c].as_slice(), &mut buf) - ln_s;
            }
            Ok(t)
        };
        let ln_r = target(&prop)? - target(&cur)? + ln_q;
        if ln_r >= 0.0 || u.ln() < ln_r {
            state.x[i] = prop;
            acc.0 += 1;
        }
    }
    Ok(acc)
}

fn mixture_blocks(state: &mut ChainState, data: &ReplicateDataset, rng: &mut RngStream) -> Result<()> {
    gibbs_sweep(&state.x, &mut state.labels_x, &mut state.fx, &state.hyper.x, rng)?;
    let res = scaled_residuals(data, &state.x, &state.scale)?;
    state.ferr.gibbs_sweep(&res, &mut state.labels_err, &state.hyper.err, rng)
}

/// `f_X` block, `f_ε` block, then exact latent-value draws.
pub fn gibbs_sweep_homoscedastic(state: &mut ChainState, data: &ReplicateDataset, rng: &mut RngStream) -> Result<()> {
    mixture_blocks(state, data, rng)?;
    update_latent_x_closed_form(state, data, rng)?;
    state.iter += 1;
    Ok(())
}

/// `f_X` block, `f_ε` block on scaled residuals, then MH latent-value moves.
pub fn gibbs_sweep_heteroscedastic(
    state: &mut ChainState,
    data: &ReplicateDataset,
    steps: &[f64],
    rng: &mut RngStream,
) -> Result<(u64, u64)> {
    mixture_blocks(state, data, rng)?;
    let acc = update_latent_x_mh(state, data, steps, rng)?;
    state.iter += 1;
    Ok(acc)
}

/// Posterior-mean 1D and 2D marginal densities on a regular grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub axes: Vec<Vec<f64>>,
    pub univariate: Vec<Vec<f64>>,
    /// `(i, j, values)` with `values[a * len_j + b]` at `(axes[i][a], axes[j][b])`.
    pub bivariate: Vec<(usize, usize, Vec<f64>)>,
    pub draws: usize,
}

impl DensityGrid {
    pub fn new(ranges: &[(f64, f64)], points: usize) -> Self {
        let axes: Vec<Vec<f64>> = ranges
            .iter()
            .map(|&(lo, hi)| (0..points).map(|g| lo + (hi - lo) * g as f64 / (points - 1) as f64).collect())
            .collect();
        let p = axes.len();
        let mut bivariate = Vec::new();
        for i in 0..p {
            for j in i + 1..p {
                bivariate.push((i, j, vec![0.0; points * points]));
            }
        }
        Self { univariate: vec![vec![0.0; points]; p], axes, bivariate, draws: 0 }
    }

    /// Adds one draw's marginals (evaluated analytically).
    pub fn accumulate(&mut self, state: &MixtureState) -> Result<()> {
        let axes = &self.axes;
        self.univariate.par_iter_mut().enumerate().try_for_each(|(l, vals)| -> Result<()> {
            let mix = GaussianMixture::from_state(&state.marginal(&[l]))?;
            for (v, &x) in vals.iter_mut().zip(&axes[l]) {
                *v += mix.density(&[x]);
            }
            Ok(())
        })?;
        self.bivariate.par_iter_mut().try_for_each(|(i, j, vals)| -> Result<()> {
            let mix = GaussianMixture::from_state(&state.marginal(&[*i, *j]))?;
            let nb = axes[*j].len();
            for (a, &xa) in axes[*i].iter().enumerate() {
                for (b, &xb) in axes[*j].iter().enumerate() {
                    vals[a * nb + b] += mix.density(&[xa, xb]);
                }
            }
            Ok(())
        })?;
        self.draws += 1;
        Ok(())
    }

    fn normalize(&mut self) {
        if self.draws == 0 {
            return;
        }
        let c = 1.0 / self.draws as f64;
        self.univariate.iter_mut().flatten().for_each(|v| *v *= c);
        self.bivariate.iter_mut().flat_map(|(_, _, v)| v.iter_mut()).for_each(|v| *v *= c);
    }

    /// Trapezoid-rule mass of the `l`-th univariate marginal.
    pub fn univariate_mass(&self, l: usize) -> f64 {
        let (x, f) = (&self.axes[l], &self.univariate[l]);
        x.windows(2).zip(f.windows(2)).map(|(x, f)| 0.5 * (x[1] - x[0]) * (f[0] + f[1])).sum()
    }
}

/// Average of the retained mixture densities, for evaluation anywhere.
#[derive(Clone, Debug)]
pub struct PosteriorDensity {
    mixture: GaussianMixture,
}

impl PosteriorDensity {
    pub fn from_snapshots(snapshots: &[MixtureState]) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::InvalidConfig("no retained draws".into()));
        }
        let w = 1.0 / snapshots.len() as f64;
        let parts = snapshots.iter().map(|s| Ok((w, GaussianMixture::from_state(s)?))).collect::<Result<Vec<_>>>()?;
        Ok(Self { mixture: GaussianMixture::combine(&parts)? })
    }

    pub fn dim(&self) -> usize {
        self.mixture.dim()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.mixture.density(x)
    }
}

/// Retained `f_X` (and `f_ε`) draws with materialized covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub model: ModelKind,
    pub snapshots: Vec<MixtureState>,
    pub error_snapshots: Vec<MixtureState>,
    pub scale: ScaleField,
}

impl PosteriorSummary {
    pub fn density(&self) -> Result<PosteriorDensity> {
        PosteriorDensity::from_snapshots(&self.snapshots)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub k_x: usize,
    pub k_err: Option<usize>,
    /// Components with `π_k > 0.05`, every iteration.
    pub nonempty_x: Vec<usize>,
    pub nonempty_err: Vec<usize>,
    /// Post-burn-in acceptance rate of latent-value MH moves.
    pub x_acceptance: Option<f64>,
    /// Per-coordinate stage-1 acceptance rates of latent-value moves.
    pub stage1_x_acceptance: Option<Vec<f64>>,
}

impl Diagnostics {
    /// Most frequent post-burn-in count of nonempty `f_X` components.
    pub fn modal_nonempty_x(&self, burn_in: usize) -> usize {
        let tail = &self.nonempty_x[burn_in.min(self.nonempty_x.len())..];
        let max = tail.iter().copied().max().unwrap_or(0);
        let mut freq = vec![0usize; max + 1];
        tail.iter().for_each(|&c| freq[c] += 1);
        (0..=max).max_by_key(|&c| (freq[c], std::cmp::Reverse(c))).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub grid: DensityGrid,
    pub summary: PosteriorSummary,
    pub diagnostics: Diagnostics,
}

fn full_snapshot(state: &MixtureState) -> MixtureState {
    let coords: Vec<usize> = (0..state.dim()).collect();
    state.marginal(&coords)
}

/// Stage 1 when heteroscedastic, initialization, the main chain, and
/// averaging over retained iterations.
pub fn run_fit(data: &ReplicateDataset, cfg: &FitConfig) -> Result<FitOutput> {
    cfg.validate()?;
    if cfg.model == ModelKind::Naive {
        return fit_naive(data, cfg);
    }
    let root = RngStream::new(cfg.seed, 0);
    let stage1 = if cfg.heteroscedastic { Some(fit_stage1(data, &cfg.stage1, &root.derive(1))?) } else { None };
    let mut state = initialize(data, cfg, stage1.as_ref(), &mut root.derive(2))?;
    let mut rng = root.derive(3);

    let mut grid = DensityGrid::new(&data.inflated_ranges(), cfg.grid_points);
    let mut diagnostics = Diagnostics {
        k_x: state.fx.k(),
        k_err: Some(state.ferr.inner.k()),
        stage1_x_acceptance: stage1.as_ref().map(|s| s.coords.iter().map(|c| Acceptance::rate(c.acceptance.x)).collect()),
        ..Default::default()
    };
    let mut snapshots = Vec::new();
    let mut error_snapshots = Vec::new();

    // Joint proposals over p coordinates start at half the stage-1 steps.
    let mut steps: Vec<f64> = stage1.as_ref().map_or(vec![0.0; data.dim()], |s| {
        s.coords.iter().map(|c| 0.5 * c.final_scales.x).collect()
    });
    let mut window = (0u64, 0u64);
    let mut kept = (0u64, 0u64);
    for it in 0..cfg.iterations {
        if cfg.heteroscedastic {
            let acc = gibbs_sweep_heteroscedastic(&mut state, data, &steps, &mut rng)?;
            if it < cfg.burn_in {
                window = (window.0 + acc.0, window.1 + acc.1);
                if (it + 1) % cfg.adapt_every == 0 {
                    let rate = Acceptance::rate(window);
                    let f = if rate < 0.25 { 0.7 } else if rate > 0.45 { 1.4 } else { 1.0 };
                    steps.iter_mut().for_each(|s| *s *= f);
                    window = (0, 0);
                }
            } else {
                kept = (kept.0 + acc.0, kept.1 + acc.1);
            }
        } else {
            gibbs_sweep_homoscedastic(&mut state, data, &mut rng)?;
        }
        diagnostics.nonempty_x.push(state.fx.nonempty_count(EMPTY_WEIGHT));
        diagnostics.nonempty_err.push(state.ferr.inner.nonempty_count(EMPTY_WEIGHT));
        if cfg.retained(it) {
            grid.accumulate(&state.fx)?;
            snapshots.push(full_snapshot(&state.fx));
            error_snapshots.push(full_snapshot(&state.ferr.inner));
        }
    }
    grid.normalize();
    if cfg.heteroscedastic {
        diagnostics.x_acceptance = Some(Acceptance::rate(kept));
    }
    Ok(FitOutput {
        grid,
        summary: PosteriorSummary { model: cfg.model, snapshots, error_snapshots, scale: state.scale },
        diagnostics,
    })
}

/// MIW mixture fitted directly to the subject means, same schedule.
pub fn fit_naive(data: &ReplicateDataset, cfg: &FitConfig) -> Result<FitOutput> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, 0);
    let points = data.subject_means();
    let hyper = match &cfg.hyper_x {
        Some(h) => h.clone(),
        None => HyperParams::empirical(&points, false)?,
    };
    hyper.validate()?;
    let clusters = select_clusters(&points, cfg.max_clusters, &mut root.derive(2))?;
    let k = cfg.k_x.unwrap_or(clusters.k() + 2);
    let (mut state, mut labels) =
        mixture_from_clusters(&points, &clusters, k, CovarianceModel::Miw, &hyper, false)?;
    let mut rng = root.derive(3);
    let mut grid = DensityGrid::new(&data.inflated_ranges(), cfg.grid_points);
    let mut diagnostics = Diagnostics { k_x: k, ..Default::default() };
    let mut snapshots = Vec::new();
    for it in 0..cfg.iterations {
        gibbs_sweep(&points, &mut labels, &mut state, &hyper, &mut rng)?;
        diagnostics.nonempty_x.push(state.nonempty_count(EMPTY_WEIGHT));
        if cfg.retained(it) {
            grid.accumulate(&state)?;
            snapshots.push(full_snapshot(&state));
        }
    }
    grid.normalize();
    Ok(FitOutput {
        grid,
        summary: PosteriorSummary {
            model: ModelKind::Naive,
            snapshots,
            error_snapshots: Vec::new(),
            scale: ScaleField::Identity,
        },
        diagnostics,
    })
}
