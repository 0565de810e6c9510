//! Successive-conditional ("Geweke") checks: start at a prior draw, alternate
//! data simulation and one Gibbs sweep, and compare the terminal parameter
//! draws of many independent chains with fresh prior draws.

use deconv_core::mixture::*;
use deconv_core::stats::{sample_log_categorical, CholFactor, RngStream, SpdMatrix};
use nalgebra::DVector;
use rayon::prelude::*;

use super::{ks_critical_two, ks_two_sample};

pub struct GewekeLine {
    pub stat: &'static str,
    pub d: f64,
    pub critical: f64,
}

impl GewekeLine {
    pub fn passed(&self) -> bool {
        self.d < self.critical
    }
}

pub fn hyper(p: usize) -> HyperParams {
    let mut h = HyperParams::empirical(&[DVector::zeros(p), DVector::from_element(p, 1.0)], true).unwrap();
    h.sigma0 = SpdMatrix::identity(p);
    h.psi0 = SpdMatrix::identity(p);
    h.nu0 = p as f64 + 2.0;
    h
}

type Stat = (&'static str, fn(&MixtureState) -> f64);

fn stats(model: CovarianceModel) -> Vec<Stat> {
    let mut s: Vec<Stat> = vec![
        ("weight_0", |m| m.weights[0]),
        ("mean_0_0", |m| m.means[0][0]),
        ("mean_1_last", |m| m.means[1][m.dim() - 1]),
        ("ln_cov_0_00", |m| m.covariance(0)[(0, 0)].ln()),
        ("cov_1_01", |m| m.covariance(1)[(0, m.dim() - 1)]),
    ];
    if model != CovarianceModel::Miw {
        s.push(("loading_0_00", |m| factor(m).loadings[0][(0, 0)]));
        s.push(("ln_phi_1_01", |m| factor(m).local_shrink[1][(0, 1)].ln()));
        s.push(("ln_delta_0_1", |m| factor(m).global_incr[0][1].ln()));
        s.push(("ln_delta_1_0", |m| factor(m).global_incr[1][0].ln()));
        s.push(("ln_omega_0", |m| factor(m).omega_diag(0)[0].ln()));
        s.push(("factor_0_0", |m| factor(m).factors[0][0]));
    }
    s
}

fn factor(m: &MixtureState) -> &FactorBlock {
    match &m.cov {
        Covariances::Factor(b) => b,
        _ => unreachable!(),
    }
}

fn simulate_labels(w: &[f64], n: usize, rng: &mut RngStream) -> Vec<usize> {
    let lw: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    (0..n).map(|_| sample_log_categorical(&lw, rng).unwrap()).collect()
}

fn simulate_points(state: &MixtureState, labels: &[usize], rng: &mut RngStream) -> Vec<DVector<f64>> {
    match &state.cov {
        Covariances::Full(c) => {
            let chols: Vec<CholFactor> = c.iter().map(|m| CholFactor::from_matrix(m.as_matrix()).unwrap()).collect();
            labels.iter().map(|&k| chols[k].sample(&state.means[k], rng)).collect()
        }
        Covariances::Factor(b) => labels
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let om = b.omega_diag(k);
                let noise = DVector::from_fn(b.dim(), |j, _| om[j].sqrt() * rng.std_normal());
                &state.means[k] + &b.loadings[k] * &b.factors[i] + noise
            })
            .collect(),
    }
}

/// `chains` independent successive-conditional runs of `cycles` sweeps each
/// with `n` data points and `k` components.
pub fn run(model: CovarianceModel, p: usize, k: usize, n: usize, chains: usize, cycles: usize, seed: u64) -> Vec<GewekeLine> {
    let h = hyper(p);
    let q = default_truncation(p);
    let terminal: Vec<MixtureState> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(seed, 2 * c as u64);
            let mut state = sample_prior(model, k, q, n, &h, &mut rng).unwrap();
            let mut labels = simulate_labels(&state.weights, n, &mut rng);
            for _ in 0..cycles {
                let pts = simulate_points(&state, &labels, &mut rng);
                gibbs_sweep(&pts, &mut labels, &mut state, &h, &mut rng).unwrap();
            }
            state
        })
        .collect();
    let prior: Vec<MixtureState> = (0..chains)
        .into_par_iter()
        .map(|c| sample_prior(model, k, q, n, &h, &mut RngStream::new(seed, 2 * c as u64 + 1)).unwrap())
        .collect();
    stats(model)
        .into_iter()
        .map(|(name, f)| {
            let a: Vec<f64> = terminal.iter().map(f).collect();
            let b: Vec<f64> = prior.iter().map(f).collect();
            GewekeLine { stat: name, d: ks_two_sample(a, b), critical: ks_critical_two(chains, chains, 0.001) }
        })
        .collect()
}
