//! B-spline bases on clamped equidistant knots, the second-difference
//! smoothness penalty, and the exponentiated-coefficient variance functions
//! built from them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DEGREE: usize = 2;
pub const DEFAULT_INTERVALS: usize = 5;

/// Clamped knot sequence on `[lo, hi]`: `degree + 1` copies of each boundary
/// and `intervals - 1` strictly increasing interior knots, for a total length
/// of `2 * degree + intervals + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    degree: usize,
    intervals: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn equidistant(degree: usize, intervals: usize, lo: f64, hi: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::InvalidKnots("need at least one interval".into()));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidKnots(format!("bad support [{lo}, {hi}]")));
        }
        let step = (hi - lo) / intervals as f64;
        let mut knots = vec![lo; degree + 1];
        knots.extend((1..intervals).map(|i| lo + step * i as f64));
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Ok(Self { degree, intervals, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Number of basis functions `J = degree + intervals`.
    pub fn n_basis(&self) -> usize {
        self.degree + self.intervals
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn lo(&self) -> f64 {
        self.knots[0]
    }

    pub fn hi(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo() && x <= self.hi()
    }

    /// Index `s` of the knot span with `t[s] <= x < t[s+1]`; the right
    /// boundary belongs to the last span.
    fn span(&self, x: f64) -> usize {
        let q = self.degree;
        let last = q + self.intervals - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        // Interior knots are few, a linear scan beats bisection here.
        let mut s = q;
        while s < last && x >= self.knots[s + 1] {
            s += 1;
        }
        s
    }
}

/// The `degree + 1` possibly nonzero basis values at `x` and the index of the
/// first of them.
pub(crate) fn local_basis(x: f64, kv: &KnotVector, out: &mut [f64]) -> Result<usize> {
    if !kv.contains(x) || x.is_nan() {
        return Err(Error::OutOfSupport { x, lo: kv.lo(), hi: kv.hi() });
    }
    let q = kv.degree;
    debug_assert_eq!(out.len(), q + 1);
    let t = &kv.knots;
    let s = kv.span(x);
    let mut left = [0.0f64; 8];
    let mut right = [0.0f64; 8];
    assert!(q < 8, "spline degree above 7 is not supported");
    out[0] = 1.0;
    for j in 1..=q {
        left[j] = x - t[s + 1 - j];
        right[j] = t[s + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
    Ok(s - q)
}

/// All `J` B-spline basis values of degree `q` at `x`.
pub fn bspline_basis(x: f64, knots: &KnotVector) -> Result<Vec<f64>> {
    let mut local = vec![0.0; knots.degree + 1];
    let start = local_basis(x, knots, &mut local)?;
    let mut b = vec![0.0; knots.n_basis()];
    b[start..start + local.len()].copy_from_slice(&local);
    Ok(b)
}

/// `P = DᵀD` with `D` the `(J-2) × J` second-difference operator, so
/// `ξᵀPξ = Σ_j (ξ_{j+2} - 2ξ_{j+1} + ξ_j)²`.
pub fn second_difference_penalty(j: usize) -> Result<DMatrix<f64>> {
    if j < 3 {
        return Err(Error::TooFewCoefficients(j));
    }
    let mut d = DMatrix::zeros(j - 2, j);
    for r in 0..j - 2 {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    Ok(d.transpose() * d)
}

/// `ξᵀPξ` evaluated directly from the differences.
pub fn second_difference_energy(xi: &[f64]) -> f64 {
    xi.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).powi(2)).sum()
}

/// Variance function `v(x) = B(x) · exp(ξ)` with smoothing variance `σ_ξ²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceFunction {
    pub knots: KnotVector,
    pub xi: Vec<f64>,
    pub sigma_xi_sq: f64,
}

impl VarianceFunction {
    pub fn new(knots: KnotVector, xi: Vec<f64>, sigma_xi_sq: f64) -> Result<Self> {
        if xi.len() != knots.n_basis() {
            return Err(Error::DimensionMismatch { expected: knots.n_basis(), found: xi.len() });
        }
        if !(sigma_xi_sq > 0.0) {
            return Err(Error::InvalidScale(sigma_xi_sq));
        }
        Ok(Self { knots, xi, sigma_xi_sq })
    }

    /// Constant function `v ≡ exp(c)`.
    pub fn constant(knots: KnotVector, c: f64) -> Self {
        let j = knots.n_basis();
        Self { knots, xi: vec![c; j], sigma_xi_sq: 1.0 }
    }

    pub fn variance_at(&self, x: f64) -> Result<f64> {
        variance_at(self, x)
    }

    pub fn scale_at(&self, x: f64) -> Result<f64> {
        Ok(variance_at(self, x)?.sqrt())
    }
}

pub fn variance_at(vf: &VarianceFunction, x: f64) -> Result<f64> {
    let q = vf.knots.degree;
    let mut local = [0.0f64; 8];
    let start = local_basis(x, &vf.knots, &mut local[..=q])?;
    Ok(local[..=q].iter().zip(&vf.xi[start..]).map(|(b, xi)| b * xi.exp()).sum())
}
