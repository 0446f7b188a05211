//! Path-level execution of threshold, calendar and buy-and-hold strategies
//! under proportional transaction costs.
//!
//! Cost model: moving the stock-1 fraction from `b_old` to `b` on wealth `S`
//! costs `c · S · |b_old − b|`, where `c = c_sell + c_buy`. The cost is taken
//! out of wealth in the period the trade happens, and the remainder is split
//! at the target fraction.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::market::{PriceRelative, PriceRelativeSeries};

/// Target fraction `b` in stock 1, no-trade half-width `eps`, and cost `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrpConfig {
    pub b: f64,
    pub eps: f64,
    pub c: f64,
}

impl TrpConfig {
    pub fn new(b: f64, eps: f64, c: f64) -> Result<Self> {
        let cfg = Self { b, eps, c };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_fraction(self.b)?;
        validate_cost(self.c)?;
        if !(self.eps >= 0.0) || self.eps.is_nan() {
            return Err(invalid(format!("threshold must be >= 0, got {}", self.eps)));
        }
        Ok(())
    }

    /// Neither band edge can ever be reached by a long-only portfolio.
    pub fn is_no_trade(&self) -> bool {
        self.eps >= self.b && self.eps >= 1.0 - self.b
    }
}

pub(crate) fn validate_fraction(b: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&b) {
        return Err(invalid(format!(
            "target fraction must lie in [0, 1], got {b}"
        )));
    }
    Ok(())
}

pub(crate) fn validate_cost(c: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&c) {
        return Err(invalid(format!(
            "cost fraction must lie in [0, 1], got {c}"
        )));
    }
    Ok(())
}

/// Constants induced by a [`TrpConfig`].
///
/// `theta1 = ln gamma1` is the log-ratio `ln(Π2/Π1)` at which the fraction
/// falls to `b − eps`; `theta2 = ln gamma2` is where it rises to `b + eps`.
/// The `zeta` pairs give the post-cost wealth `zeta_1 Π1 + zeta_2 Π2` of a
/// block that ends on the corresponding edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrpDerived {
    pub gamma1: f64,
    pub gamma2: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// Block ends with the fraction at or above `b + eps` (stock 1 is sold).
    pub zeta1_up: f64,
    pub zeta2_up: f64,
    /// Block ends with the fraction at or below `b − eps` (stock 1 is bought).
    pub zeta1_dn: f64,
    pub zeta2_dn: f64,
}

impl TrpDerived {
    pub fn thresholds_unreachable(&self) -> bool {
        self.theta1 == f64::INFINITY && self.theta2 == f64::NEG_INFINITY
    }
}

pub fn derive(config: &TrpConfig) -> Result<TrpDerived> {
    config.validate()?;
    let TrpConfig { b, eps, c } = *config;
    if b <= 0.0 || b >= 1.0 {
        return Err(invalid(
            "target fraction must lie strictly inside (0, 1); use buy-and-hold for b in {0, 1}",
        ));
    }
    let gamma1 = if eps >= b {
        f64::INFINITY
    } else {
        b * (1.0 - b + eps) / ((1.0 - b) * (b - eps))
    };
    let gamma2 = if eps >= 1.0 - b {
        0.0
    } else {
        b * (1.0 - b - eps) / ((1.0 - b) * (b + eps))
    };
    let drag = c * (b - b * b);
    Ok(TrpDerived {
        gamma1,
        gamma2,
        theta1: gamma1.ln(),
        theta2: gamma2.ln(),
        zeta1_up: b - drag,
        zeta2_up: 1.0 - b + drag,
        zeta1_dn: b + drag,
        zeta2_dn: 1.0 - b - drag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Fraction at or above the target (+ threshold): stock 1 is sold.
    Upper,
    /// Fraction at or below the target (− threshold): stock 1 is bought.
    Lower,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Upper => "upper",
            Side::Lower => "lower",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RebalanceEvent {
    /// 1-based period after whose gains the trade happened.
    pub period: usize,
    pub side: Side,
    pub cost: f64,
}

/// Realized wealth path: `wealth[0] = 1`, `wealth[t]` after period `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthCurve {
    pub wealth: Vec<f64>,
    pub events: Vec<RebalanceEvent>,
}

impl WealthCurve {
    pub fn final_wealth(&self) -> f64 {
        *self.wealth.last().expect("curve always holds S(0)")
    }

    pub fn periods(&self) -> usize {
        self.wealth.len() - 1
    }

    pub fn trade_count(&self) -> usize {
        self.events.len()
    }

    pub fn total_cost(&self) -> f64 {
        self.events.iter().map(|e| e.cost).sum()
    }

    /// Writes `period,wealth,event_side,cost`, one row per period including period 0.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["period", "wealth", "event_side", "cost"])?;
        let mut events = self.events.iter().peekable();
        for (t, s) in self.wealth.iter().enumerate() {
            let mut side = String::new();
            let mut cost = 0.0;
            while let Some(e) = events.next_if(|e| e.period == t) {
                side = e.side.as_str().to_owned();
                cost += e.cost;
            }
            w.write_record([t.to_string(), s.to_string(), side, cost.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Dollar holdings of a long-only two-asset portfolio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Portfolio {
    h1: f64,
    h2: f64,
}

impl Portfolio {
    pub fn new(wealth: f64, b: f64) -> Self {
        Self {
            h1: b * wealth,
            h2: (1.0 - b) * wealth,
        }
    }

    #[inline]
    pub fn wealth(&self) -> f64 {
        self.h1 + self.h2
    }

    /// Current fraction held in stock 1.
    #[inline]
    pub fn fraction(&self) -> f64 {
        self.h1 / (self.h1 + self.h2)
    }

    #[inline]
    pub fn grow(&mut self, x: &PriceRelative) {
        self.h1 *= x.x1;
        self.h2 *= x.x2;
    }

    /// Moves to fraction `b`, paying `c · S · |b_old − b|`. Returns the cost.
    #[inline]
    pub fn rebalance(&mut self, b: f64, c: f64) -> f64 {
        let wealth = self.wealth();
        let cost = c * wealth * (self.fraction() - b).abs();
        *self = Portfolio::new(wealth - cost, b);
        cost
    }
}

/// Runs a strategy that starts at fraction `b0` and, after each period's
/// gains, may ask to move to a new target. `decide(t, portfolio)` sees only
/// data up to and including period `t`.
pub fn run_policy<F>(b0: f64, c: f64, series: &[PriceRelative], mut decide: F) -> WealthCurve
where
    F: FnMut(usize, &Portfolio) -> Option<f64>,
{
    let mut pf = Portfolio::new(1.0, b0);
    let mut wealth = Vec::with_capacity(series.len() + 1);
    wealth.push(1.0);
    let mut events = Vec::new();
    for (i, x) in series.iter().enumerate() {
        let t = i + 1;
        pf.grow(x);
        if let Some(target) = decide(t, &pf) {
            let side = if pf.fraction() >= target {
                Side::Upper
            } else {
                Side::Lower
            };
            let cost = pf.rebalance(target, c);
            events.push(RebalanceEvent {
                period: t,
                side,
                cost,
            });
        }
        wealth.push(pf.wealth());
    }
    WealthCurve { wealth, events }
}

/// True when fraction `b_old` sits on or outside the band `(b − eps, b + eps)`.
#[inline]
pub fn crosses(b_old: f64, b: f64, eps: f64) -> bool {
    b_old <= b - eps || b_old >= b + eps
}

/// Threshold rebalanced portfolio: trade back to `b` whenever the drifted
/// fraction touches or leaves `(b − eps, b + eps)`.
pub fn run_trp(config: &TrpConfig, series: &PriceRelativeSeries) -> Result<WealthCurve> {
    config.validate()?;
    if config.b <= 0.0 || config.b >= 1.0 {
        return Err(invalid("target fraction must lie strictly inside (0, 1)"));
    }
    Ok(run_trp_slice(config, series.relatives()))
}

pub(crate) fn run_trp_slice(config: &TrpConfig, series: &[PriceRelative]) -> WealthCurve {
    let TrpConfig { b, eps, c } = *config;
    run_policy(b, c, series, |_, pf| {
        crosses(pf.fraction(), b, eps).then_some(b)
    })
}

/// Constant rebalanced portfolio, traded back to `b` after every period.
pub fn run_crp(b: f64, c: f64, series: &PriceRelativeSeries) -> Result<WealthCurve> {
    run_scrp(b, 1, c, series)
}

/// Never trades after the initial split.
pub fn run_buy_and_hold(b: f64, series: &PriceRelativeSeries) -> Result<WealthCurve> {
    validate_fraction(b)?;
    Ok(run_policy(b, 0.0, series.relatives(), |_, _| None))
}

/// Calendar rebalancing to `b` after every `k`-th period.
pub fn run_scrp(b: f64, k: usize, c: f64, series: &PriceRelativeSeries) -> Result<WealthCurve> {
    validate_fraction(b)?;
    validate_cost(c)?;
    if k == 0 {
        return Err(invalid("rebalance interval must be >= 1"));
    }
    Ok(run_policy(b, c, series.relatives(), |t, _| {
        (t % k == 0).then_some(b)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(pairs: &[(f64, f64)]) -> PriceRelativeSeries {
        PriceRelativeSeries::from_pairs(pairs).unwrap()
    }

    #[test]
    fn derive_hand_values() {
        let d = derive(&TrpConfig::new(0.5, 0.1, 0.025).unwrap()).unwrap();
        assert!((d.gamma1 - 1.5).abs() < 1e-14);
        assert!((d.gamma2 - 2.0 / 3.0).abs() < 1e-14);
        assert!((d.theta1 - 0.405_465_108_108_164_4).abs() < 1e-12);
        assert!((d.theta2 + 0.405_465_108_108_164_4).abs() < 1e-12);
        // b − c(b − b²) = 0.5 − 0.025 · 0.25
        assert!((d.zeta1_up - 0.493_75).abs() < 1e-15);
        assert!((d.zeta1_up + d.zeta2_up - 1.0).abs() < 1e-15);
        assert!((d.zeta1_dn + d.zeta2_dn - 1.0).abs() < 1e-15);
        assert!(d.gamma2 <= 1.0 && 1.0 <= d.gamma1);
    }

    #[test]
    fn derive_zero_threshold_and_zero_cost() {
        let d = derive(&TrpConfig::new(0.5, 0.0, 0.3).unwrap()).unwrap();
        assert_eq!(d.gamma1, 1.0);
        assert_eq!(d.gamma2, 1.0);
        assert_eq!(d.theta1, 0.0);
        assert_eq!(d.theta2, 0.0);
        let d = derive(&TrpConfig::new(0.5, 0.1, 0.0).unwrap()).unwrap();
        assert_eq!(d.zeta1_up, 0.5);
        assert_eq!(d.zeta1_dn, 0.5);
    }

    #[test]
    fn derive_unreachable_edges() {
        let d = derive(&TrpConfig::new(0.3, 0.35, 0.01).unwrap()).unwrap();
        assert_eq!(d.theta1, f64::INFINITY);
        assert!(d.theta2.is_finite());
        let d = derive(&TrpConfig::new(0.3, 0.7, 0.01).unwrap()).unwrap();
        assert!(d.thresholds_unreachable());
        assert!(derive(&TrpConfig::new(0.0, 0.1, 0.01).unwrap()).is_err());
        assert!(derive(&TrpConfig::new(1.0, 0.1, 0.01).unwrap()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrpConfig::new(1.2, 0.1, 0.0).is_err());
        assert!(TrpConfig::new(0.5, -0.1, 0.0).is_err());
        assert!(TrpConfig::new(0.5, 0.1, 1.5).is_err());
    }

    #[test]
    fn single_period_crossing_hand_value() {
        let cfg = TrpConfig::new(0.5, 0.1, 0.01).unwrap();
        let curve = run_trp(&cfg, &series(&[(2.0, 1.0)])).unwrap();
        assert_eq!(curve.events.len(), 1);
        assert_eq!(curve.events[0].side, Side::Upper);
        assert!((curve.events[0].cost - 0.0025).abs() < 1e-15);
        assert!((curve.final_wealth() - 1.4975).abs() < 1e-14);
        // Same value through the block-gain coefficients.
        let d = derive(&cfg).unwrap();
        assert!((d.zeta1_up * 2.0 + d.zeta2_up * 1.0 - 1.4975).abs() < 1e-14);
    }

    #[test]
    fn crp_matches_trp_when_a_trade_fires() {
        let curve = run_crp(0.5, 0.01, &series(&[(2.0, 1.0)])).unwrap();
        assert!((curve.final_wealth() - 1.4975).abs() < 1e-14);
        let ones = series(&[(1.0, 1.0); 20]);
        let curve = run_crp(0.3, 0.0, &ones).unwrap();
        assert!(curve.wealth.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn buy_and_hold_hand_value() {
        let curve = run_buy_and_hold(0.5, &series(&[(2.0, 1.0), (1.0, 2.0)])).unwrap();
        assert_eq!(curve.wealth, vec![1.0, 1.5, 2.0]);
        assert!(curve.events.is_empty());
    }

    #[test]
    fn touching_the_band_counts_as_crossing() {
        // b = 0.5, x = (1.5, 1): fraction 0.6 = b + eps exactly.
        let cfg = TrpConfig::new(0.5, 0.1, 0.0).unwrap();
        let curve = run_trp(&cfg, &series(&[(1.5, 1.0)])).unwrap();
        assert_eq!(curve.trade_count(), 1);
        let cfg = TrpConfig::new(0.5, 0.100_001, 0.0).unwrap();
        let curve = run_trp(&cfg, &series(&[(1.5, 1.0)])).unwrap();
        assert_eq!(curve.trade_count(), 0);
    }

    #[test]
    fn scrp_edge_intervals() {
        let s = series(&[(1.1, 0.9), (0.8, 1.3), (1.2, 1.0), (0.95, 1.05)]);
        let crp = run_crp(0.4, 0.02, &s).unwrap();
        let k1 = run_scrp(0.4, 1, 0.02, &s).unwrap();
        assert_eq!(crp, k1);
        let bh = run_buy_and_hold(0.4, &s).unwrap();
        let k9 = run_scrp(0.4, 9, 0.02, &s).unwrap();
        assert_eq!(bh.wealth, k9.wealth);
        assert!(run_scrp(0.4, 0, 0.02, &s).is_err());
    }

    #[test]
    fn empty_series_gives_trivial_curve() {
        let cfg = TrpConfig::new(0.5, 0.1, 0.01).unwrap();
        let curve = run_trp(&cfg, &PriceRelativeSeries::default()).unwrap();
        assert_eq!(curve.wealth, vec![1.0]);
        assert_eq!(curve.final_wealth(), 1.0);
    }

    #[test]
    fn curve_csv_layout() {
        let curve = run_crp(0.5, 0.01, &series(&[(2.0, 1.0), (1.0, 1.0)])).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "period,wealth,event_side,cost");
        assert_eq!(lines[1], "0,1,,0");
        let row: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(&row[..3], &["1", "1.4975", "upper"]);
        assert!((row[3].parse::<f64>().unwrap() - 0.0025).abs() < 1e-15);
        assert_eq!(lines[3], "2,1.4975,upper,0");
    }
}
