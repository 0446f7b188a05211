//! Multivariate normal probabilities over hyper-rectangles.
//!
//! The main routine is the randomized quasi-Monte Carlo method of Genz:
//! variables are conditioned one after another through the Cholesky factor,
//! which maps the box probability onto an integral over the unit cube of
//! dimension `k − 1`. That integral is averaged over a rank-1 lattice with
//! generators `sqrt(prime)` under `M` independent random shifts, and the
//! spread of the per-shift means gives the error estimate.
//!
//! [`mvn_probability_dense`] is an independent nested-quadrature evaluation
//! of the same probability for `k ≤ 4`, used to check the QMC path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{cholesky, SquareMatrix};
use crate::normal::{cdf, inv_cdf_clamped, pdf};
use crate::quadrature::Quadrature;

/// `P(lower ≤ X ≤ upper)` for `X ~ N(0, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnProblem {
    lower: Vec<f64>,
    upper: Vec<f64>,
    covariance: SquareMatrix,
}

impl MvnProblem {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, covariance: SquareMatrix) -> Result<Self> {
        let k = covariance.dim();
        if k == 0 {
            return Err(invalid("MVN dimension must be at least 1"));
        }
        if lower.len() != k || upper.len() != k {
            return Err(invalid(format!(
                "bound vectors must have length {k}, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) =
            (0..k).find(|&i| lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i])
        {
            return Err(invalid(format!(
                "bound {i}: lower {} exceeds upper {}",
                lower[i], upper[i]
            )));
        }
        if !covariance.is_symmetric(1e-12) {
            return Err(invalid("covariance matrix is not symmetric"));
        }
        Ok(Self {
            lower,
            upper,
            covariance,
        })
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn covariance(&self) -> &SquareMatrix {
        &self.covariance
    }
}

/// Controls of the randomized lattice rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmcParams {
    /// Lattice points per shift.
    pub n_points: usize,
    /// Number of random shifts (at least 2, for the error estimate).
    pub n_shifts: usize,
    /// Multiplier on the standard error of the shift means.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for QmcParams {
    fn default() -> Self {
        Self {
            n_points: 2000,
            n_shifts: 12,
            alpha: 3.0,
            seed: 0,
        }
    }
}

impl QmcParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 1 {
            return Err(invalid("QMC needs at least one lattice point"));
        }
        if self.n_shifts < 2 {
            return Err(invalid("QMC needs at least two random shifts"));
        }
        if !(self.alpha > 0.0) {
            return Err(invalid("QMC confidence factor must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvnResult {
    pub p: f64,
    pub err: f64,
}

/// First `n` primes.
fn primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut candidate = 2u64;
    while out.len() < n {
        if out
            .iter()
            .take_while(|&&p| p * p <= candidate)
            .all(|&p| candidate % p != 0)
        {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}

/// Variable order by ascending marginal interval probability.
pub fn prioritize(lower: &[f64], upper: &[f64], covariance: &SquareMatrix) -> Vec<usize> {
    let width = |i: usize| {
        let sd = covariance[(i, i)].sqrt();
        cdf(upper[i] / sd) - cdf(lower[i] / sd)
    };
    let mut order: Vec<usize> = (0..lower.len()).collect();
    order.sort_by(|&i, &j| width(i).total_cmp(&width(j)).then(i.cmp(&j)));
    order
}

/// A covariance, variable order, and set of random shifts fixed up front, so
/// that the estimate is a deterministic, smooth function of the box bounds.
#[derive(Debug, Clone)]
pub struct MvnIntegrator {
    order: Vec<usize>,
    chol: SquareMatrix,
    // Rows of `chol` and reciprocal diagonal, laid out for the inner loop.
    rows: Vec<Vec<f64>>,
    inv_diag: Vec<f64>,
    generators: Vec<f64>,
    shifts: Vec<Vec<f64>>,
    n_points: usize,
    alpha: f64,
}

impl MvnIntegrator {
    /// `order[i]` is the original variable integrated in position `i`.
    pub fn new(covariance: &SquareMatrix, order: Vec<usize>, qmc: &QmcParams) -> Result<Self> {
        qmc.validate()?;
        let k = covariance.dim();
        if k == 0 {
            return Err(invalid("MVN dimension must be at least 1"));
        }
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..k).collect::<Vec<_>>() {
            return Err(invalid("variable order must be a permutation"));
        }
        let chol = cholesky(&covariance.permuted(&order))?;
        let lattice_dim = k - 1;
        let generators = primes(lattice_dim)
            .into_iter()
            .map(|p| (p as f64).sqrt())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(qmc.seed);
        let shifts = (0..qmc.n_shifts)
            .map(|_| (0..lattice_dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        let rows = (0..k)
            .map(|i| (0..=i).map(|j| chol[(i, j)]).collect())
            .collect();
        let inv_diag = (0..k).map(|i| 1.0 / chol[(i, i)]).collect();
        Ok(Self {
            order,
            chol,
            rows,
            inv_diag,
            generators,
            shifts,
            n_points: qmc.n_points,
            alpha: qmc.alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    /// Box probability for bounds given in the original variable order.
    pub fn probability(&self, lower: &[f64], upper: &[f64]) -> MvnResult {
        let k = self.dim();
        debug_assert!(lower.len() == k && upper.len() == k);
        let a: Vec<f64> = self.order.iter().map(|&i| lower[i]).collect();
        let b: Vec<f64> = self.order.iter().map(|&i| upper[i]).collect();
        let l = &self.chol;

        let l11 = l[(0, 0)];
        let d1 = cdf(a[0] / l11);
        let e1 = cdf(b[0] / l11);
        if k == 1 || e1 - d1 <= 0.0 {
            return MvnResult {
                p: (e1 - d1).clamp(0.0, 1.0),
                err: 0.0,
            };
        }

        let mut y = vec![0.0; k];
        let mut mean = 0.0;
        let mut var = 0.0;
        for (i, shift) in self.shifts.iter().enumerate() {
            let mut shift_mean = 0.0;
            for j in 1..=self.n_points {
                let jf = j as f64;
                let (mut d, mut e) = (d1, e1);
                let mut f = e1 - d1;
                for m in 1..k {
                    let t = jf * self.generators[m - 1] + shift[m - 1];
                    let w = (2.0 * (t - t.floor()) - 1.0).abs();
                    y[m - 1] = inv_cdf_clamped(d + w * (e - d));
                    let row = &self.rows[m];
                    let s: f64 = row[..m].iter().zip(&y[..m]).map(|(lmn, yn)| lmn * yn).sum();
                    let inv = self.inv_diag[m];
                    d = if a[m] == f64::NEG_INFINITY {
                        0.0
                    } else {
                        cdf((a[m] - s) * inv)
                    };
                    e = if b[m] == f64::INFINITY {
                        1.0
                    } else {
                        cdf((b[m] - s) * inv)
                    };
                    f *= e - d;
                    if f <= 0.0 {
                        f = 0.0;
                        break;
                    }
                }
                shift_mean += (f - shift_mean) / jf;
            }
            let shifts_seen = (i + 1) as f64;
            let delta = (shift_mean - mean) / shifts_seen;
            mean += delta;
            var = (shifts_seen - 2.0) * var / shifts_seen + delta * delta;
        }
        MvnResult {
            p: mean.clamp(0.0, 1.0),
            err: self.alpha * var.max(0.0).sqrt(),
        }
    }
}

/// Randomized QMC estimate of `P(a ≤ X ≤ b)`, with variables prioritized by
/// ascending interval probability.
pub fn mvn_probability(problem: &MvnProblem, qmc: &QmcParams) -> Result<MvnResult> {
    let order = prioritize(&problem.lower, &problem.upper, &problem.covariance);
    let integrator = MvnIntegrator::new(&problem.covariance, order, qmc)?;
    Ok(integrator.probability(&problem.lower, &problem.upper))
}

/// Largest dimension accepted by [`mvn_probability_dense`].
pub const DENSE_MAX_DIM: usize = 4;

// Standard-normal coordinates are truncated here; the mass beyond is < 1e-22.
const Y_LIMIT: f64 = 10.0;

/// Nested adaptive quadrature of the sequentially conditioned form, `k ≤ 4`.
/// Absolute error is around 1e-9.
pub fn mvn_probability_dense(problem: &MvnProblem) -> Result<f64> {
    let k = problem.dim();
    if k > DENSE_MAX_DIM {
        return Err(invalid(format!(
            "dense MVN oracle supports k <= {DENSE_MAX_DIM}, got {k}"
        )));
    }
    let l = cholesky(&problem.covariance)?;
    let quad = Quadrature {
        rel_tol: 1e-11,
        abs_tol: 1e-12,
        max_intervals: 400,
    };
    let mut prefix = Vec::with_capacity(k);
    let p = nested(&l, &problem.lower, &problem.upper, &quad, &mut prefix)?;
    Ok(p.clamp(0.0, 1.0))
}

fn conditional_limits(l: &SquareMatrix, a: &[f64], b: &[f64], prefix: &[f64]) -> (f64, f64) {
    let m = prefix.len();
    let s: f64 = prefix.iter().enumerate().map(|(n, y)| l[(m, n)] * y).sum();
    let lmm = l[(m, m)];
    ((a[m] - s) / lmm, (b[m] - s) / lmm)
}

fn nested(
    l: &SquareMatrix,
    a: &[f64],
    b: &[f64],
    quad: &Quadrature,
    prefix: &mut Vec<f64>,
) -> Result<f64> {
    let m = prefix.len();
    let (lo, hi) = conditional_limits(l, a, b, prefix);
    if m + 1 == l.dim() {
        return Ok((cdf(hi) - cdf(lo)).max(0.0));
    }
    let (lo, hi) = (lo.max(-Y_LIMIT), hi.min(Y_LIMIT));
    if !(hi > lo) {
        return Ok(0.0);
    }
    let mut failure = None;
    let est = quad.integrate(
        |y| {
            prefix.push(y);
            let inner = nested(l, a, b, quad, prefix);
            prefix.pop();
            match inner {
                Ok(v) => pdf(y) * v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        lo,
        hi,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(est.value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiagonal_sigma(k: usize) -> SquareMatrix {
        let prec = SquareMatrix::from_fn(k, |i, j| match i.abs_diff(j) {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        });
        let s = prec.inverse().unwrap();
        // Symmetrize the round-off of the inversion.
        SquareMatrix::from_fn(k, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]))
    }

    #[test]
    fn primes_are_primes() {
        assert_eq!(primes(8), vec![2, 3, 5, 7, 11, 13, 17, 19]);
    }

    #[test]
    fn half_line_and_quadrant() {
        let qmc = QmcParams::default();
        let p1 =
            MvnProblem::new(vec![0.0], vec![f64::INFINITY], SquareMatrix::identity(1)).unwrap();
        let r = mvn_probability(&p1, &qmc).unwrap();
        assert!((r.p - 0.5).abs() < 1e-15);
        assert!((mvn_probability_dense(&p1).unwrap() - 0.5).abs() < 1e-12);

        let p2 = MvnProblem::new(
            vec![0.0; 2],
            vec![f64::INFINITY; 2],
            SquareMatrix::identity(2),
        )
        .unwrap();
        let r = mvn_probability(&p2, &qmc).unwrap();
        assert!((r.p - 0.25).abs() <= r.err.max(1e-9), "{r:?}");

        let p3 = MvnProblem::new(
            vec![f64::NEG_INFINITY; 2],
            vec![0.0; 2],
            SquareMatrix::identity(2),
        )
        .unwrap();
        assert!((mvn_probability_dense(&p3).unwrap() - 0.25).abs() < 1e-9);
    }

    #[test]
    fn sheppard_orthant_oracle() {
        let cov = SquareMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let p = MvnProblem::new(vec![0.0; 2], vec![f64::INFINITY; 2], cov).unwrap();
        let expected = 0.25 + 0.5f64.asin() / (2.0 * std::f64::consts::PI);
        assert!((expected - 1.0 / 3.0).abs() < 1e-15);
        assert!((mvn_probability_dense(&p).unwrap() - expected).abs() < 1e-8);
        let r = mvn_probability(&p, &QmcParams::default()).unwrap();
        assert!((r.p - expected).abs() < 1e-3f64.max(3.0 * r.err));
    }

    #[test]
    fn tridiagonal_box_matches_dense() {
        let p = MvnProblem::new(vec![-1.0; 3], vec![1.0; 3], tridiagonal_sigma(3)).unwrap();
        let dense = mvn_probability_dense(&p).unwrap();
        let r = mvn_probability(&p, &QmcParams::default()).unwrap();
        assert!(
            (r.p - dense).abs() <= 1e-3f64.max(3.0 * r.err),
            "{r:?} vs {dense}"
        );
    }

    #[test]
    fn whole_space_is_one() {
        let p = MvnProblem::new(
            vec![f64::NEG_INFINITY; 4],
            vec![f64::INFINITY; 4],
            tridiagonal_sigma(4),
        )
        .unwrap();
        let r = mvn_probability(&p, &QmcParams::default()).unwrap();
        assert!((r.p - 1.0).abs() <= 3.0 * r.err + 1e-12);
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let p = MvnProblem::new(
            vec![-0.5, -1.0, -2.0],
            vec![1.0, 0.3, 2.0],
            tridiagonal_sigma(3),
        )
        .unwrap();
        let qmc = QmcParams::default().with_seed(99);
        assert_eq!(
            mvn_probability(&p, &qmc).unwrap(),
            mvn_probability(&p, &qmc).unwrap()
        );
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(MvnProblem::new(vec![], vec![], SquareMatrix::zeros(0)).is_err());
        assert!(MvnProblem::new(vec![1.0], vec![0.0], SquareMatrix::identity(1)).is_err());
        assert!(MvnProblem::new(vec![0.0; 2], vec![1.0], SquareMatrix::identity(2)).is_err());
        let singular = SquareMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let p = MvnProblem::new(vec![0.0; 2], vec![1.0; 2], singular).unwrap();
        assert!(mvn_probability(&p, &QmcParams::default()).is_err());
        let big = MvnProblem::new(vec![0.0; 5], vec![1.0; 5], SquareMatrix::identity(5)).unwrap();
        assert!(mvn_probability_dense(&big).is_err());
        let bad_qmc = QmcParams {
            n_shifts: 1,
            ..QmcParams::default()
        };
        assert!(mvn_probability(&big, &bad_qmc).is_err());
    }

    #[test]
    fn permutation_leaves_answer_unchanged() {
        let sigma = tridiagonal_sigma(3);
        let (a, b) = (vec![-0.4, -1.5, -0.9], vec![1.1, 0.2, 2.5]);
        let p = MvnProblem::new(a.clone(), b.clone(), sigma.clone()).unwrap();
        let dense = mvn_probability_dense(&p).unwrap();
        for order in [vec![0, 1, 2], vec![2, 0, 1], vec![1, 2, 0]] {
            let integ = MvnIntegrator::new(&sigma, order, &QmcParams::default()).unwrap();
            let r = integ.probability(&a, &b);
            assert!((r.p - dense).abs() <= 1e-3f64.max(3.0 * r.err));
        }
    }
}
