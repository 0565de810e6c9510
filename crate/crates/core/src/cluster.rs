//! k-means with BIC model selection, used only to pick starting values.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::stats::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub centers: Vec<DVector<f64>>,
    pub assignments: Vec<usize>,
    pub sse: f64,
    pub bic: f64,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.k()];
        for &a in &self.assignments {
            n[a] += 1;
        }
        n
    }
}

fn dist2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &DVector<f64>, centers: &[DVector<f64>]) -> (usize, f64) {
    centers.iter().enumerate().map(|(k, c)| (k, dist2(x, c))).fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
}

/// k-means++ seeding; `None` when fewer than `k` distinct points exist.
fn seed_centers(points: &[DVector<f64>], k: usize, rng: &mut RngStream) -> Option<Vec<DVector<f64>>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d: Vec<f64> = points.iter().map(|x| dist2(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut u = rng.open01() * total;
        let mut pick = d.iter().rposition(|&v| v > 0.0)?;
        for (i, &v) in d.iter().enumerate() {
            if u < v {
                pick = i;
                break;
            }
            u -= v;
        }
        centers.push(points[pick].clone());
        for (di, x) in d.iter_mut().zip(points) {
            *di = di.min(dist2(x, &centers[centers.len() - 1]));
        }
    }
    Some(centers)
}

/// Lloyd iterations from k-means++ starts; best of `restarts` by SSE.
pub fn kmeans(points: &[DVector<f64>], k: usize, restarts: usize, rng: &mut RngStream) -> Option<Clustering> {
    let p = points.first()?.len();
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = seed_centers(points, k, rng)?;
        let mut assignments = vec![usize::MAX; points.len()];
        for _ in 0..300 {
            let mut changed = false;
            for (a, x) in assignments.iter_mut().zip(points) {
                let (c, _) = nearest(x, &centers);
                changed |= *a != c;
                *a = c;
            }
            if !changed {
                break;
            }
            let mut sums = vec![DVector::zeros(p); k];
            let mut counts = vec![0usize; k];
            for (x, &a) in points.iter().zip(&assignments) {
                sums[a] += x;
                counts[a] += 1;
            }
            for j in 0..k {
                // An emptied center keeps its position.
                if counts[j] > 0 {
                    centers[j] = &sums[j] / counts[j] as f64;
                }
            }
        }
        let sse: f64 = points.iter().zip(&assignments).map(|(x, &a)| dist2(x, &centers[a])).sum();
        if best.as_ref().is_none_or(|b| sse < b.sse) {
            best = Some(Clustering { centers, assignments, sse, bic: f64::NAN });
        }
    }
    best
}

/// BIC of a hard partition under a spherical Gaussian mixture with a shared
/// variance; `floor` keeps degenerate partitions finite.
fn bic(points: &[DVector<f64>], c: &Clustering, floor: f64) -> f64 {
    let (n, p, k) = (points.len() as f64, points[0].len() as f64, c.k() as f64);
    let var = (c.sse / (n * p)).max(floor);
    let ln_lik: f64 = c
        .sizes()
        .iter()
        .filter(|&&m| m > 0)
        .map(|&m| m as f64 * (m as f64 / n).ln())
        .sum::<f64>()
        - 0.5 * n * p * (2.0 * std::f64::consts::PI * var).ln()
        - 0.5 * c.sse / var;
    let params = k * p + 1.0 + (k - 1.0);
    -2.0 * ln_lik + params * n.ln()
}

/// Best k-means partition over `k = 1..=max_k` by BIC.
pub fn select_clusters(points: &[DVector<f64>], max_k: usize, rng: &mut RngStream) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(DVector::zeros(points[0].len()), |a, x| a + x) / n;
    let spread = points.iter().map(|x| dist2(x, &mean)).sum::<f64>() / (n * points[0].len() as f64);
    let floor = 1e-12 * (spread + 1e-300);
    let mut best: Option<Clustering> = None;
    for k in 1..=max_k.max(1) {
        let Some(mut c) = kmeans(points, k, 4, rng) else { break };
        c.bic = bic(points, &c, floor);
        if best.as_ref().is_none_or(|b| c.bic < b.bic) {
            best = Some(c);
        }
    }
    best.ok_or(Error::EmptyDataset)
}
