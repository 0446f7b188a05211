//! Exhaustive grid search over `(b, eps)` for the largest expected wealth.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::TrpConfig;
use crate::error::{invalid, Result};
use crate::market::LogNormalParams;
use crate::wealth::{buy_and_hold_expectation, expected_final_wealth, WealthOptions};

/// Threshold used for the no-trade point; no long-only fraction can reach it.
pub const NO_TRADE_EPS: f64 = 1.0;

// Objective values closer than this (relative) are treated as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub b_min: f64,
    pub b_max: f64,
    pub b_step: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub eps_step: f64,
    /// Also score buy-and-hold at every `b`, as `eps = NO_TRADE_EPS`.
    pub include_no_trade: bool,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            b_min: 0.05,
            b_max: 0.95,
            b_step: 0.05,
            eps_min: 0.0,
            eps_max: 0.25,
            eps_step: 0.01,
            include_no_trade: true,
        }
    }
}

fn axis(min: f64, max: f64, step: f64) -> Vec<f64> {
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|k| ((min + k as f64 * step) * 1e12).round() / 1e12)
        .collect()
}

impl SearchGrid {
    /// A grid holding the single point `(b, eps)` and no no-trade points.
    pub fn single(b: f64, eps: f64) -> Self {
        Self {
            b_min: b,
            b_max: b,
            b_step: 1.0,
            eps_min: eps,
            eps_max: eps,
            eps_step: 1.0,
            include_no_trade: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.b_min,
            self.b_max,
            self.b_step,
            self.eps_min,
            self.eps_max,
            self.eps_step,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("grid bounds must be finite"));
        }
        if !(0.0 < self.b_min && self.b_min <= self.b_max && self.b_max < 1.0) {
            return Err(invalid(format!(
                "grid needs 0 < b_min <= b_max < 1, got [{}, {}]",
                self.b_min, self.b_max
            )));
        }
        if !(0.0 <= self.eps_min && self.eps_min <= self.eps_max) {
            return Err(invalid(format!(
                "grid needs 0 <= eps_min <= eps_max, got [{}, {}]",
                self.eps_min, self.eps_max
            )));
        }
        if !(self.b_step > 0.0 && self.eps_step > 0.0) {
            return Err(invalid("grid steps must be positive"));
        }
        Ok(())
    }

    pub fn b_values(&self) -> Vec<f64> {
        axis(self.b_min, self.b_max, self.b_step)
    }

    pub fn eps_values(&self) -> Vec<f64> {
        let mut eps = axis(self.eps_min, self.eps_max, self.eps_step);
        if self.include_no_trade && eps.last() != Some(&NO_TRADE_EPS) {
            eps.push(NO_TRADE_EPS);
        }
        eps
    }

    /// Every `(b, eps)` pair in preference order: `eps` ascending, then `b` ascending.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let bs = self.b_values();
        self.eps_values()
            .into_iter()
            .flat_map(|e| bs.iter().map(move |&b| (b, e)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub b: f64,
    pub eps: f64,
    pub es: f64,
    /// False when `eps ≥ min(b, 1 − b)` and the value is the buy-and-hold closed form.
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub b_star: f64,
    pub eps_star: f64,
    pub es_star: f64,
    pub evaluated_count: usize,
}

/// `E[S(n)]` at one grid point.
pub fn objective(
    params: &LogNormalParams,
    n: usize,
    b: f64,
    eps: f64,
    c: f64,
    options: &WealthOptions,
) -> Result<GridPoint> {
    let feasible = eps < b.min(1.0 - b);
    let es = if feasible {
        expected_final_wealth(n, params, &TrpConfig::new(b, eps, c)?, options)?
    } else {
        buy_and_hold_expectation(b, n, params)
    };
    Ok(GridPoint {
        b,
        eps,
        es,
        feasible,
    })
}

/// Scores every grid point.
pub fn evaluate_grid(
    params: &LogNormalParams,
    n: usize,
    c: f64,
    grid: &SearchGrid,
    options: &WealthOptions,
) -> Result<Vec<GridPoint>> {
    params.validate()?;
    grid.validate()?;
    if n == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    let points = grid.points();
    let workers = std::thread::available_parallelism()
        .map_or(1, |w| w.get())
        .min(points.len().max(1));
    if workers <= 1 {
        return points
            .into_iter()
            .map(|(b, eps)| objective(params, n, b, eps, c, options))
            .collect();
    }
    // Contiguous chunks, joined in order: the output order matches `points`.
    let chunk = points.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = points
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(b, eps)| objective(params, n, b, eps, c, options))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(points.len());
        for h in handles {
            out.extend(h.join().expect("grid worker panicked")?);
        }
        Ok(out)
    })
}

/// Largest `es`; near-ties go to the smaller `eps`, then the smaller `b`.
pub fn select(points: &[GridPoint]) -> Result<Optimum> {
    let mut ordered: Vec<&GridPoint> = points.iter().collect();
    ordered.sort_by(|p, q| p.eps.total_cmp(&q.eps).then(p.b.total_cmp(&q.b)));
    let mut best: Option<&GridPoint> = None;
    for p in ordered {
        match best {
            Some(q) if p.es <= q.es + TIE_TOL * q.es.abs() => {}
            _ => best = Some(p),
        }
    }
    let best = best.ok_or_else(|| invalid("search grid is empty"))?;
    Ok(Optimum {
        b_star: best.b,
        eps_star: best.eps,
        es_star: best.es,
        evaluated_count: points.len(),
    })
}

/// Grid-search optimum of `E[S(n)]` at cost `c`.
pub fn optimize(
    params: &LogNormalParams,
    n: usize,
    c: f64,
    grid: &SearchGrid,
    options: &WealthOptions,
) -> Result<Optimum> {
    select(&evaluate_grid(params, n, c, grid, options)?)
}

/// Writes the scored surface as `b,eps,es`.
pub fn write_surface_csv<W: Write>(points: &[GridPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["b", "eps", "es"])?;
    for p in points {
        w.write_record([p.b.to_string(), p.eps.to_string(), p.es.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
