//! Globally adaptive 7/15-point Gauss–Kronrod quadrature on finite intervals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the odd Kronrod abscissae XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            abs_tol: 1e-12,
            max_intervals: 200,
        }
    }
}

struct Segment<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: [f64; N],
    priority: f64,
}

impl<const N: usize> PartialEq for Segment<N> {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority
    }
}
impl<const N: usize> Eq for Segment<N> {}
impl<const N: usize> PartialOrd for Segment<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Segment<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority)
    }
}

fn gk15<const N: usize, F: FnMut(f64) -> [f64; N]>(
    f: &mut F,
    a: f64,
    b: f64,
) -> ([f64; N], [f64; N]) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc.map(|v| v * WGK[7]);
    let mut gauss = fc.map(|v| v * WG[3]);
    for (i, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let dx = half * x;
        let lo = f(center - dx);
        let hi = f(center + dx);
        for n in 0..N {
            let pair = lo[n] + hi[n];
            kronrod[n] += w * pair;
            if i % 2 == 1 {
                gauss[n] += WG[i / 2] * pair;
            }
        }
    }
    let mut value = [0.0; N];
    let mut error = [0.0; N];
    for n in 0..N {
        value[n] = kronrod[n] * half;
        error[n] = ((kronrod[n] - gauss[n]) * half).abs();
    }
    (value, error)
}

/// Result of [`Quadrature::integrate_many`], one entry per component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiEstimate<const N: usize> {
    pub value: [f64; N],
    pub error: [f64; N],
    pub evaluations: usize,
}

impl Quadrature {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    /// Integrates `f` over `[a, b]`. An empty or reversed interval integrates to zero.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> Result<Estimate> {
        let est = self.integrate_many(|x| [f(x)], a, b)?;
        Ok(Estimate {
            value: est.value[0],
            error: est.error[0],
            evaluations: est.evaluations,
        })
    }

    /// Integrates a vector-valued `f` on shared subintervals until every
    /// component meets the tolerance.
    pub fn integrate_many<const N: usize, F: FnMut(f64) -> [f64; N]>(
        &self,
        mut f: F,
        a: f64,
        b: f64,
    ) -> Result<MultiEstimate<N>> {
        if !(b > a) {
            return Ok(MultiEstimate {
                value: [0.0; N],
                error: [0.0; N],
                evaluations: 0,
            });
        }
        let (value, error) = gk15(&mut f, a, b);
        // Fixed per-component weights so that subdivision order is stable.
        let weights = value.map(|v| {
            self.abs_tol
                .max(self.rel_tol * v.abs())
                .max(f64::MIN_POSITIVE)
        });
        let priority = |err: &[f64; N]| {
            err.iter()
                .zip(&weights)
                .map(|(e, w)| e / w)
                .fold(0.0, f64::max)
        };
        let mut evaluations = 15;
        let mut heap = BinaryHeap::new();
        let mut total = value;
        let mut total_err = error;
        heap.push(Segment {
            a,
            b,
            value,
            error,
            priority: priority(&error),
        });
        loop {
            let unconverged = (0..N)
                .map(|n| {
                    (
                        total_err[n],
                        self.abs_tol.max(self.rel_tol * total[n].abs()),
                    )
                })
                .find(|(e, tol)| e > tol);
            let Some((achieved, requested)) = unconverged else {
                break;
            };
            if heap.len() >= self.max_intervals {
                return Err(Error::QuadratureNonConvergence {
                    achieved,
                    requested,
                });
            }
            let worst = heap.pop().expect("heap is never empty");
            let mid = 0.5 * (worst.a + worst.b);
            let (v1, e1) = gk15(&mut f, worst.a, mid);
            let (v2, e2) = gk15(&mut f, mid, worst.b);
            evaluations += 30;
            for n in 0..N {
                total[n] += v1[n] + v2[n] - worst.value[n];
                total_err[n] += e1[n] + e2[n] - worst.error[n];
            }
            heap.push(Segment {
                a: worst.a,
                b: mid,
                value: v1,
                error: e1,
                priority: priority(&e1),
            });
            heap.push(Segment {
                a: mid,
                b: worst.b,
                value: v2,
                error: e2,
                priority: priority(&e2),
            });
        }
        // Re-sum in interval order to shed the drift of the running totals.
        let mut segments = heap.into_vec();
        segments.sort_by(|s, t| s.a.total_cmp(&t.a));
        let mut value = [0.0; N];
        let mut error = [0.0; N];
        for s in &segments {
            for n in 0..N {
                value[n] += s.value[n];
                error[n] += s.error[n];
            }
        }
        Ok(MultiEstimate {
            value,
            error,
            evaluations,
        })
    }
}
