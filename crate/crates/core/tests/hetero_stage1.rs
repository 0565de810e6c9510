mod common;

use common::*;
use deconv_core::hetero_stage1::*;
use deconv_core::mixture::{Covariances, HyperParams, MixtureState};
use deconv_core::splines::{KnotVector, VarianceFunction};
use deconv_core::stats::{RngStream, SpdMatrix};
use deconv_core::{Error, ReplicateDataset};
use nalgebra::DVector;
use rand::Rng;

/// Spline exactly reproducing `(1 + x/4)²` on `[lo, hi]` via its blossom.
fn linear_scale_truth(lo: f64, hi: f64) -> VarianceFunction {
    let kv = KnotVector::equidistant(2, 5, lo, hi).unwrap();
    let t = kv.knots().to_vec();
    let xi = (0..7).map(|j| ((1.0 + t[j + 1] / 4.0) * (1.0 + t[j + 2] / 4.0)).ln()).collect();
    VarianceFunction::new(kv, xi, 1.0).unwrap()
}

fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

fn one_component_prior(mean: f64, var: f64) -> MixtureState {
    MixtureState {
        weights: vec![1.0],
        means: vec![DVector::from_element(1, mean)],
        cov: Covariances::Full(vec![SpdMatrix::from_diagonal(&[var])]),
    }
}

/// Fixed toy chain: one subject, three replicates, two error components.
fn toy_chain() -> (UnivariateChain, Vec<Vec<f64>>) {
    let chain = UnivariateChain {
        x: vec![1.0],
        vf: linear_scale_truth(-1.0, 5.0),
        weights: vec![0.3, 0.7],
        components: vec![
            PelenisComponent::new(0.4, 0.8, 0.5, 1.2).unwrap(),
            PelenisComponent::new(0.7, -0.5, 0.9, 0.3).unwrap(),
        ],
        labels: vec![vec![0, 1, 1]],
        x_prior: one_component_prior(1.5, 2.0),
        x_labels: vec![0],
    };
    (chain, vec![vec![1.0, 1.8, 0.4]])
}

/// Normalized CDF of the toy latent-value posterior by trapezoid quadrature.
fn toy_posterior_cdf(chain: &UnivariateChain, column: &[Vec<f64>]) -> impl Fn(f64) -> f64 {
    let (lo, hi) = (chain.lo(), chain.hi());
    let n = 40_001;
    let h = (hi - lo) / (n - 1) as f64;
    let dens: Vec<f64> = (0..n)
        .map(|g| {
            let x = (lo + g as f64 * h).min(hi);
            let mut f = normal_pdf(x, 1.5, 2.0);
            for (w, &c) in column[0].iter().zip(&chain.labels[0]) {
                f *= conditional_likelihood_u(w - x, x, &chain.vf, &chain.components[c]).unwrap();
            }
            f
        })
        .collect();
    let mut cum = vec![0.0; n];
    for g in 1..n {
        cum[g] = cum[g - 1] + 0.5 * h * (dens[g] + dens[g - 1]);
    }
    let total = cum[n - 1];
    move |x: f64| {
        let t = ((x - lo) / h).clamp(0.0, (n - 1) as f64);
        let g = (t.floor() as usize).min(n - 2);
        let frac = t - g as f64;
        (cum[g] + frac * (cum[g + 1] - cum[g])) / total
    }
}

fn toy_draws(step: f64, n: usize, thin: usize, seed: u64) -> Vec<f64> {
    let (mut chain, column) = toy_chain();
    let mut rng = RngStream::new(seed, 0);
    for _ in 0..1000 {
        update_latent_x(&mut chain, &column, step, &mut rng).unwrap();
    }
    (0..n)
        .map(|_| {
            for _ in 0..thin {
                update_latent_x(&mut chain, &column, step, &mut rng).unwrap();
            }
            chain.x[0]
        })
        .collect()
}

fn batch_se(xs: &[f64]) -> f64 {
    let b = 100;
    let size = xs.len() / b;
    let means: Vec<f64> = xs.chunks(size).take(b).map(mean).collect();
    (variance(&means) / b as f64).sqrt()
}

#[test]
fn mean_identity_holds_for_random_parameters() {
    let mut rng = RngStream::new(11, 0);
    for _ in 0..10_000 {
        let c = PelenisComponent::new(rng.random_range(1e-6..1.0 - 1e-6), rng.random_range(-10.0..10.0), 1.0, 1.0).unwrap();
        let (p1, m1, _, p2, m2, _) = pelenis_expand(&c);
        assert!((p1 * m1 + p2 * m2).abs() < 1e-14, "{c:?}");
        assert!((p1 + p2 - 1.0).abs() < 1e-15);
    }
}

#[test]
fn coefficients_at_one_half() {
    let (c1, c2) = PelenisComponent::new(0.5, 1.0, 1.0, 1.0).unwrap().mean_coefficients();
    assert!((c1 - 0.707_106_781_186_547_5).abs() < 1e-15);
    assert!((c2 + 0.707_106_781_186_547_5).abs() < 1e-15);
}

#[test]
fn unit_scale_point_mass_is_standard_normal() {
    let vf = VarianceFunction::constant(KnotVector::equidistant(2, 5, -5.0, 5.0).unwrap(), 0.0);
    let c = PelenisComponent::new(1.0, 0.0, 1.0, 3.0).unwrap();
    for u in [-1.5, 0.0, 0.3, 2.2] {
        let f = conditional_likelihood_u(u, 0.7, &vf, &c).unwrap();
        assert!((f - normal_pdf(u, 0.0, 1.0)).abs() < 1e-15);
    }
}

#[test]
fn doubling_the_scale_rescales_the_density() {
    let kv = KnotVector::equidistant(2, 5, -5.0, 5.0).unwrap();
    let one = VarianceFunction::constant(kv.clone(), 0.0);
    let two = VarianceFunction::constant(kv, 4f64.ln());
    let c = PelenisComponent::new(0.35, 0.0, 0.6, 1.7).unwrap();
    for u in [-2.0, -0.1, 0.8, 3.0] {
        let a = conditional_likelihood_u(u, 1.0, &two, &c).unwrap();
        let b = conditional_likelihood_u(u / 2.0, 1.0, &one, &c).unwrap() / 2.0;
        assert!((a - b).abs() < 1e-15 * b.max(1.0), "{a} vs {b}");
    }
}

#[test]
fn matches_direct_two_term_sum() {
    let mut rng = RngStream::new(12, 0);
    let vf = VarianceFunction::constant(KnotVector::equidistant(2, 5, -5.0, 5.0).unwrap(), 2.25f64.ln());
    for _ in 0..100 {
        let (p, mu) = (rng.random_range(0.01..0.99), rng.random_range(-2.0..2.0));
        let (v1, v2) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
        let c = PelenisComponent::new(p, mu, v1, v2).unwrap();
        let norm = (p * p + (1.0 - p) * (1.0 - p)).sqrt();
        let (m1, m2) = ((1.0 - p) / norm * mu, -p / norm * mu);
        let s = 1.5;
        let direct = p * normal_pdf(0.7, s * m1, s * s * v1) + (1.0 - p) * normal_pdf(0.7, s * m2, s * s * v2);
        let got = conditional_likelihood_u(0.7, 0.0, &vf, &c).unwrap();
        assert!((got - direct).abs() < 1e-14, "{got} vs {direct}");
    }
}

#[test]
fn zero_proposal_scales_leave_the_mh_blocks_unchanged() {
    let (mut chain, column) = toy_chain();
    let before = chain.clone();
    let hyper = UnivariateHyper {
        alpha: 1.0,
        a_xi: 0.01,
        b_xi: 0.01,
        x: HyperParams::empirical(&[DVector::from_element(1, 0.0), DVector::from_element(1, 2.0)], false).unwrap(),
    };
    let scales = ProposalScales { xi: 0.0, theta: [0.0; 4], x: 0.0 };
    let mut rng = RngStream::new(13, 0);
    for _ in 0..20 {
        let acc = mh_sweep_univariate(&mut chain, &column, &hyper, &scales, &mut rng).unwrap();
        assert_eq!(acc.x.0, acc.x.1);
        assert_eq!(acc.xi.0, acc.xi.1);
        assert_eq!(chain.x, before.x);
        assert_eq!(chain.vf.xi, before.vf.xi);
        assert_eq!(chain.components, before.components);
    }
}

#[test]
fn latent_move_matches_quadrature_posterior() {
    let (chain, column) = toy_chain();
    let cdf = toy_posterior_cdf(&chain, &column);
    let draws = toy_draws(1.0, 100_000, 20, 14);
    let d = ks_one_sample(draws, cdf);
    assert!(d < ks_critical_one(100_000, 0.001), "KS {d}");
}

#[test]
fn doubling_the_step_keeps_the_posterior_mean() {
    let a = toy_draws(0.5, 50_000, 10, 15);
    let b = toy_draws(1.0, 50_000, 10, 16);
    let (ma, mb) = (mean(&a), mean(&b));
    let se = (batch_se(&a).powi(2) + batch_se(&b).powi(2)).sqrt();
    assert!((ma - mb).abs() < 3.0 * se, "{ma} vs {mb} (se {se})");
}

#[test]
fn empty_component_samples_its_prior() {
    let (mut chain, column) = toy_chain();
    chain.labels = vec![vec![0, 0, 0]];
    let mut rng = RngStream::new(17, 0);
    let steps = [1.5, 1.5, 1.5, 1.5];
    let n = 50_000;
    let mut p = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    let mut s1 = Vec::with_capacity(n);
    for _ in 0..1000 {
        update_components(&mut chain, &column, &steps, &mut rng).unwrap();
    }
    for _ in 0..n {
        for _ in 0..10 {
            update_components(&mut chain, &column, &steps, &mut rng).unwrap();
        }
        let c = chain.components[1];
        p.push(c.p_tilde);
        mu.push(c.mu_tilde);
        s1.push(c.sig1_sq);
    }
    let crit = ks_critical_one(n, 0.001);
    let dp = ks_one_sample(p, |x| x);
    let dm = ks_one_sample(mu, phi);
    let ds = ks_one_sample(s1, |x| statrs::function::gamma::gamma_ur(1.1, 1.0 / x));
    assert!(dp < crit && dm < crit && ds < crit, "{dp} {dm} {ds} vs {crit}");
}

fn three_cluster_column(n: usize, m: usize, hetero: bool, rng: &mut RngStream) -> (Vec<f64>, Vec<Vec<DVector<f64>>>) {
    let means = [0.8, 2.5, 6.0];
    let mut xs = Vec::with_capacity(n);
    let subjects = (0..n)
        .map(|_| {
            let u = rng.open01();
            let k = if u < 0.25 { 0 } else if u < 0.75 { 1 } else { 2 };
            let x = means[k] + 0.75f64.sqrt() * rng.std_normal();
            xs.push(x);
            let s = if hetero { 1.0 + x / 4.0 } else { 1.0 };
            let sd = if hetero { 0.3f64.sqrt() } else { 1.0 };
            (0..m).map(|_| DVector::from_element(1, x + s * sd * rng.std_normal())).collect()
        })
        .collect();
    (xs, subjects)
}

fn central_grid(xs: &[f64]) -> Vec<f64> {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (s[s.len() / 10], s[9 * s.len() / 10]);
    (0..=50).map(|g| lo + (hi - lo) * g as f64 / 50.0).collect()
}

#[test]
fn homoscedastic_truth_gives_flat_variance() {
    let mut rng = RngStream::new(18, 0);
    let (xs, subjects) = three_cluster_column(500, 3, false, &mut rng);
    let data = ReplicateDataset::new(subjects).unwrap();
    let fit = fit_stage1(&data, &Stage1Settings::default(), &RngStream::new(18, 1)).unwrap();
    let vf = &fit.coords[0].variance;
    for x in central_grid(&xs) {
        let v = vf.variance_at(x).unwrap();
        assert!((0.8..=1.25).contains(&v), "v({x}) = {v}");
    }
}

#[test]
fn linear_scale_truth_is_recovered() {
    let mut rng = RngStream::new(19, 0);
    let (xs, subjects) = three_cluster_column(1000, 3, true, &mut rng);
    let data = ReplicateDataset::new(subjects).unwrap();
    let fit = fit_stage1(&data, &Stage1Settings::default(), &RngStream::new(19, 1)).unwrap();
    let vf = &fit.coords[0].variance;
    let mut worst = 0.0f64;
    for x in central_grid(&xs) {
        let truth = 0.3 * (1.0 + x / 4.0).powi(2);
        worst = worst.max((vf.variance_at(x).unwrap() / truth - 1.0).abs());
    }
    assert!(worst < 0.3, "max relative error {worst}");
    let r = pearson(&xs, &fit.coords[0].x_mean);
    assert!(r > 0.9, "r = {r}");
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn seeded_fits_are_identical() {
    let mut rng = RngStream::new(20, 0);
    let subjects = (0..60)
        .map(|_| {
            let x = DVector::from_fn(2, |_, _| rng.random_range(0.0..4.0));
            (0..3).map(|_| x.map(|v| v + 0.4 * rng.std_normal())).collect()
        })
        .collect();
    let data = ReplicateDataset::new(subjects).unwrap();
    let settings = Stage1Settings { iterations: 120, burn_in: 60, ..Default::default() };
    let a = fit_stage1(&data, &settings, &RngStream::new(21, 0)).unwrap();
    let b = fit_stage1(&data, &settings, &RngStream::new(21, 0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_noise_pins_latent_values() {
    let mut rng = RngStream::new(22, 0);
    let truth: Vec<f64> = (0..80).map(|_| rng.random_range(0.0..5.0)).collect();
    let subjects = truth.iter().map(|&x| vec![DVector::from_element(1, x); 3]).collect();
    let data = ReplicateDataset::new(subjects).unwrap();
    let settings = Stage1Settings { iterations: 300, burn_in: 150, ..Default::default() };
    let fit = fit_stage1(&data, &settings, &RngStream::new(22, 1)).unwrap();
    for (x, m) in truth.iter().zip(&fit.coords[0].x_mean) {
        assert!((x - m).abs() < 1e-3, "{x} vs {m}");
    }
    let vf = &fit.coords[0].variance;
    for x in [0.5, 2.5, 4.5] {
        assert!(vf.variance_at(x).unwrap() < 1e-6);
    }
}

#[test]
fn single_replicates_are_rejected() {
    let subjects = (0..10).map(|i| vec![DVector::from_element(1, i as f64)]).collect();
    let data = ReplicateDataset::new(subjects).unwrap();
    let err = fit_stage1(&data, &Stage1Settings::default(), &RngStream::new(1, 0)).unwrap_err();
    assert_eq!(err, Error::InsufficientReplicates);
}
