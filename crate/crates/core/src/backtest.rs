//! Sliding-window protocol: fit the market on the trailing window, pick
//! `(b, eps)` by grid search, trade the resulting TRP over the next window,
//! and run fixed baselines over the same span.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{
    crosses, run_buy_and_hold, run_crp, run_policy, run_scrp, validate_cost, validate_fraction,
    WealthCurve,
};
use crate::error::{invalid, Error, Result};
use crate::estimation::{mle, mle_with_floor};
use crate::market::{LogNormalParams, PriceRelativeSeries};
use crate::optimizer::{optimize, Optimum, SearchGrid};
use crate::wealth::WealthOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Trp,
    Crp,
    Scrp,
    BuyAndHold,
    CoverUp,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Trp,
        Strategy::Crp,
        Strategy::Scrp,
        Strategy::BuyAndHold,
        Strategy::CoverUp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Trp => "trp",
            Strategy::Crp => "crp",
            Strategy::Scrp => "scrp",
            Strategy::BuyAndHold => "buy_and_hold",
            Strategy::CoverUp => "cover_up",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Periods per estimation window and per trading block.
    pub window: usize,
    /// Horizon of the expected-wealth objective.
    pub horizon: usize,
    pub c: f64,
    pub grid: SearchGrid,
    pub wealth: WealthOptions,
    pub strategies: Vec<Strategy>,
    /// Target fraction of the CRP, SCRP and buy-and-hold baselines.
    pub baseline_b: f64,
    pub scrp_k: usize,
    /// Number of uniformly spaced experts in the universal portfolio.
    pub cover_experts: usize,
    /// Refit the CRP target every block to the TRP's chosen `b`.
    pub refit_crp: bool,
    /// Lower bound applied to fitted variances; `None` rejects degenerate windows.
    pub var_floor: Option<f64>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window: 200,
            horizon: 20,
            c: 0.025,
            grid: SearchGrid::default(),
            wealth: WealthOptions::default(),
            strategies: Strategy::ALL.to_vec(),
            baseline_b: 0.5,
            scrp_k: 5,
            cover_experts: 21,
            refit_crp: false,
            var_floor: None,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(invalid("window must be at least 2 periods"));
        }
        if self.horizon == 0 {
            return Err(invalid("objective horizon must be at least 1"));
        }
        if self.scrp_k == 0 {
            return Err(invalid("SCRP interval must be at least 1"));
        }
        if self.cover_experts == 0 {
            return Err(invalid("universal portfolio needs at least one expert"));
        }
        if self.strategies.is_empty() {
            return Err(invalid("no strategies selected"));
        }
        validate_cost(self.c)?;
        validate_fraction(self.baseline_b)?;
        self.grid.validate()?;
        self.wealth.qmc.validate()
    }
}

/// Market fit and chosen strategy for one trading block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockFit {
    /// Index into the full series of the block's first period.
    pub start: usize,
    pub len: usize,
    pub params: LogNormalParams,
    pub optimum: Optimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub final_wealth: f64,
    pub trades: usize,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    /// Number of periods after the first window; every curve has this many steps.
    pub evaluated_periods: usize,
    pub blocks: Vec<BlockFit>,
    pub curves: BTreeMap<Strategy, WealthCurve>,
}

impl BacktestReport {
    pub fn summary(&self) -> BTreeMap<String, StrategySummary> {
        self.curves
            .iter()
            .map(|(k, c)| {
                (
                    k.as_str().to_owned(),
                    StrategySummary {
                        final_wealth: c.final_wealth(),
                        trades: c.trade_count(),
                        total_cost: c.total_cost(),
                    },
                )
            })
            .collect()
    }
}

/// Fits and optimizes every block of the evaluation span.
pub fn fit_blocks(series: &PriceRelativeSeries, config: &BacktestConfig) -> Result<Vec<BlockFit>> {
    let w = config.window;
    let mut blocks = Vec::new();
    let mut start = w;
    while start < series.len() {
        let train = series.slice(start - w..start);
        let params = match config.var_floor {
            Some(floor) => mle_with_floor(&train, floor)?,
            None => mle(&train)?,
        };
        params
            .validate()
            .map_err(|e| Error::InvalidData(format!("window ending at period {start}: {e}")))?;
        let optimum = optimize(
            &params,
            config.horizon,
            config.c,
            &config.grid,
            &config.wealth,
        )?;
        let len = w.min(series.len() - start);
        blocks.push(BlockFit {
            start,
            len,
            params,
            optimum,
        });
        start += w;
    }
    Ok(blocks)
}

/// Trades the per-block TRPs over the evaluation span, carrying the
/// portfolio across blocks and paying for the move to each new target.
pub fn run_block_trp(
    series: &PriceRelativeSeries,
    blocks: &[BlockFit],
    c: f64,
) -> Result<WealthCurve> {
    let first = blocks
        .first()
        .ok_or_else(|| invalid("no blocks to trade"))?;
    let origin = first.start;
    let span = &series.relatives()[origin..];
    let mut current = 0;
    Ok(run_policy(first.optimum.b_star, c, span, |t, pf| {
        let next_start = blocks.get(current + 1).map(|b| b.start - origin);
        if next_start == Some(t) {
            current += 1;
            return Some(blocks[current].optimum.b_star);
        }
        let o = &blocks[current].optimum;
        crosses(pf.fraction(), o.b_star, o.eps_star).then_some(o.b_star)
    }))
}

fn run_refit_crp(series: &PriceRelativeSeries, blocks: &[BlockFit], c: f64) -> Result<WealthCurve> {
    let first = blocks
        .first()
        .ok_or_else(|| invalid("no blocks to trade"))?;
    let origin = first.start;
    let span = &series.relatives()[origin..];
    let mut current = 0;
    Ok(run_policy(first.optimum.b_star, c, span, |t, _| {
        if blocks.get(current + 1).map(|b| b.start - origin) == Some(t) {
            current += 1;
        }
        Some(blocks[current].optimum.b_star)
    }))
}

/// Universal portfolio over `experts` constant-rebalanced experts: each
/// period the holding moves to the wealth-weighted mean of the experts'
/// fractions, and that move is charged like any other trade.
pub fn run_cover_up(experts: &[f64], c: f64, series: &PriceRelativeSeries) -> Result<WealthCurve> {
    if experts.is_empty() {
        return Err(invalid("expert grid is empty"));
    }
    for &b in experts {
        validate_fraction(b)?;
    }
    validate_cost(c)?;
    let xs = series.relatives();
    let mut log_w = vec![0.0; experts.len()];
    let mixture = |log_w: &[f64]| {
        let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (&b, &lw) in experts.iter().zip(log_w) {
            let w = (lw - top).exp();
            num += w * b;
            den += w;
        }
        num / den
    };
    let b0 = mixture(&log_w);
    Ok(run_policy(b0, c, xs, |t, _| {
        let x = &xs[t - 1];
        for (lw, &b) in log_w.iter_mut().zip(experts) {
            *lw += (b * x.x1 + (1.0 - b) * x.x2).ln();
        }
        Some(mixture(&log_w))
    }))
}

/// `n` equally spaced fractions covering `[0, 1]`.
pub fn uniform_experts(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Runs the protocol on `series`; curves start at the end of the first window.
pub fn sliding_backtest(
    series: &PriceRelativeSeries,
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    config.validate()?;
    if series.len() < 2 * config.window {
        return Err(invalid(format!(
            "series of {} periods is shorter than two windows of {}",
            series.len(),
            config.window
        )));
    }
    let needs_blocks = config.strategies.contains(&Strategy::Trp)
        || (config.refit_crp && config.strategies.contains(&Strategy::Crp));
    let blocks = if needs_blocks {
        fit_blocks(series, config)?
    } else {
        Vec::new()
    };
    let span = series.slice(config.window..series.len());
    let b = config.baseline_b;
    let mut curves = BTreeMap::new();
    for &s in &config.strategies {
        let curve = match s {
            Strategy::Trp => run_block_trp(series, &blocks, config.c)?,
            Strategy::Crp if config.refit_crp => run_refit_crp(series, &blocks, config.c)?,
            Strategy::Crp => run_crp(b, config.c, &span)?,
            Strategy::Scrp => run_scrp(b, config.scrp_k, config.c, &span)?,
            Strategy::BuyAndHold => run_buy_and_hold(b, &span)?,
            Strategy::CoverUp => {
                run_cover_up(&uniform_experts(config.cover_experts), config.c, &span)?
            }
        };
        curves.insert(s, curve);
    }
    Ok(BacktestReport {
        evaluated_periods: span.len(),
        blocks,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("nope".parse::<Strategy>().is_err());
    }

    #[test]
    fn cover_two_extreme_experts_by_hand() {
        let s = PriceRelativeSeries::from_pairs(&[(2.0, 1.0)]).unwrap();
        let curve = run_cover_up(&[0.0, 1.0], 0.0, &s).unwrap();
        assert!((curve.final_wealth() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn cover_single_expert_is_crp() {
        let s = PriceRelativeSeries::from_pairs(&[(1.2, 0.9), (0.8, 1.1), (1.05, 1.0)]).unwrap();
        let a = run_cover_up(&[0.3], 0.01, &s).unwrap();
        let b = run_crp(0.3, 0.01, &s).unwrap();
        for (x, y) in a.wealth.iter().zip(&b.wealth) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn cover_flat_market_stays_at_one() {
        let s = PriceRelativeSeries::from_pairs(&[(1.0, 1.0); 10]).unwrap();
        let curve = run_cover_up(&uniform_experts(21), 0.025, &s).unwrap();
        assert!(curve.wealth.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn uniform_expert_grid() {
        let e = uniform_experts(21);
        assert_eq!(e.len(), 21);
        assert_eq!(e[0], 0.0);
        assert_eq!(e[10], 0.5);
        assert_eq!(e[20], 1.0);
    }

    #[test]
    fn short_series_rejected() {
        let s = PriceRelativeSeries::from_pairs(&[(1.0, 1.0); 7]).unwrap();
        let cfg = BacktestConfig {
            window: 4,
            ..BacktestConfig::default()
        };
        assert!(sliding_backtest(&s, &cfg).is_err());
    }
}
