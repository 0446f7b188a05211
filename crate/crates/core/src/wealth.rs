//! Expected wealth of a threshold rebalanced portfolio over a finite horizon.
//!
//! A TRP restarts from the target fraction after every trade, so its wealth
//! is a renewal process. With `pr(i)` the expected post-trade wealth of a
//! block that first trades at period `i` and `pt(n)` the expected wealth of a
//! block that has not traded by `n`,
//!
//! ```text
//! es(0) = 1,    es(n) = Σ_{i=1..n} pr(i) · es(n − i) + pt(n).
//! ```
//!
//! Both terms are integrals over the endpoint log-ratio `κ = ln(Π2/Π1)` of
//! the block. Writing `u = ln Π1`, the conditional expectation `E[e^u | κ]`
//! is closed-form, which leaves one 1-D quadrature over `κ` whose integrand
//! multiplies the density of `κ` by the probability `g_τ(κ)` that the walk
//! stayed inside `[θ2, θ1]` at every earlier period. That band probability is
//! a `τ − 1` dimensional normal box probability evaluated by
//! [`crate::mvn::MvnIntegrator`].

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{derive, run_trp_slice, TrpConfig, TrpDerived};
use crate::error::{invalid, Error, Result};
use crate::linalg::SquareMatrix;
use crate::market::{reduce, sample_relatives, LogNormalParams, ReducedParams};
use crate::mvn::{prioritize, MvnIntegrator, MvnResult, QmcParams};
use crate::normal::gaussian_pdf;
use crate::quadrature::Quadrature;

/// Law used for the walk between block start and endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandLaw {
    /// Interior partial sums conditioned on the endpoint (Brownian bridge).
    /// This is the exact law.
    #[default]
    Bridge,
    /// Partial sums counted back from the endpoint under their unconditional
    /// law, ignoring the conditioning on `κ`. Kept as an approximation to
    /// compare against.
    Unconditional,
}

impl BandLaw {
    pub fn as_str(&self) -> &'static str {
        match self {
            BandLaw::Bridge => "bridge",
            BandLaw::Unconditional => "unconditional",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WealthOptions {
    pub qmc: QmcParams,
    pub quadrature: Quadrature,
    /// Largest horizon accepted by [`expected_wealth`].
    pub horizon_cap: usize,
    pub band_law: BandLaw,
}

impl Default for WealthOptions {
    fn default() -> Self {
        Self {
            qmc: QmcParams::default(),
            quadrature: Quadrature::default(),
            horizon_cap: 40,
            band_law: BandLaw::Bridge,
        }
    }
}

// Each horizon gets its own shift stream.
fn horizon_seed(seed: u64, tau: usize) -> u64 {
    seed.wrapping_add((tau as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn thresholds(b: f64, eps: f64) -> Result<TrpDerived> {
    derive(&TrpConfig { b, eps, c: 0.0 })
}

/// Probability that the walk stays strictly inside the band at periods
/// `1..τ−1` of a block whose endpoint log-ratio is `κ`, with the MVN
/// machinery prepared once per `τ`.
#[derive(Debug, Clone)]
pub struct BandEvaluator {
    tau: usize,
    law: BandLaw,
    mu: f64,
    theta1: f64,
    theta2: f64,
    integrator: Option<MvnIntegrator>,
}

impl BandEvaluator {
    pub fn new(
        tau: usize,
        reduced: &ReducedParams,
        derived: &TrpDerived,
        law: BandLaw,
        qmc: &QmcParams,
    ) -> Result<Self> {
        if tau == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if !(reduced.var > 0.0) {
            return Err(invalid("walk variance must be positive"));
        }
        let mut band = Self {
            tau,
            law,
            mu: reduced.mu,
            theta1: derived.theta1,
            theta2: derived.theta2,
            integrator: None,
        };
        if tau == 1 || derived.thresholds_unreachable() {
            return Ok(band);
        }
        let k = tau - 1;
        let t = tau as f64;
        let var = reduced.var;
        let cov = match law {
            BandLaw::Bridge => SquareMatrix::from_fn(k, |i, j| {
                let (i, j) = ((i + 1) as f64, (j + 1) as f64);
                var * (i.min(j) - i * j / t)
            }),
            BandLaw::Unconditional => {
                SquareMatrix::from_fn(k, |i, j| var * ((i.min(j) + 1) as f64))
            }
        };
        let mut kappa_ref = t * reduced.mu;
        if derived.theta1.is_finite() {
            kappa_ref = kappa_ref.min(derived.theta1);
        }
        if derived.theta2.is_finite() {
            kappa_ref = kappa_ref.max(derived.theta2);
        }
        let (lo, hi) = band.bounds(kappa_ref);
        let order = prioritize(&lo, &hi, &cov);
        let qmc = qmc.with_seed(horizon_seed(qmc.seed, tau));
        band.integrator = Some(MvnIntegrator::new(&cov, order, &qmc)?);
        Ok(band)
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Box bounds of the centred interior variables for endpoint `κ`.
    pub fn bounds(&self, kappa: f64) -> (Vec<f64>, Vec<f64>) {
        let t = self.tau as f64;
        (1..self.tau)
            .map(|i| {
                let i = i as f64;
                match self.law {
                    BandLaw::Bridge => {
                        let m = i * kappa / t;
                        (self.theta2 - m, self.theta1 - m)
                    }
                    BandLaw::Unconditional => {
                        let m = i * self.mu;
                        (kappa - self.theta1 - m, kappa - self.theta2 - m)
                    }
                }
            })
            .unzip()
    }

    pub fn estimate(&self, kappa: f64) -> MvnResult {
        match &self.integrator {
            None => MvnResult { p: 1.0, err: 0.0 },
            Some(integrator) => {
                let (lo, hi) = self.bounds(kappa);
                integrator.probability(&lo, &hi)
            }
        }
    }

    pub fn probability(&self, kappa: f64) -> f64 {
        self.estimate(kappa).p
    }
}

/// One-off band probability `g_τ(κ)`.
pub fn band_probability(
    tau: usize,
    kappa: f64,
    reduced: &ReducedParams,
    derived: &TrpDerived,
    law: BandLaw,
    qmc: &QmcParams,
) -> Result<f64> {
    if !kappa.is_finite() {
        return Err(invalid("endpoint log-ratio must be finite"));
    }
    Ok(BandEvaluator::new(tau, reduced, derived, law, qmc)?.probability(kappa))
}

/// Probability that the walk stays strictly inside `[θ2, θ1]` at all of
/// periods `1..=τ`, i.e. that no trade happens in the first `τ` periods.
pub fn stay_probability(
    tau: usize,
    reduced: &ReducedParams,
    derived: &TrpDerived,
    qmc: &QmcParams,
) -> Result<MvnResult> {
    if tau == 0 || derived.thresholds_unreachable() {
        return Ok(MvnResult { p: 1.0, err: 0.0 });
    }
    if !(reduced.var > 0.0) {
        return Err(invalid("walk variance must be positive"));
    }
    let cov = SquareMatrix::from_fn(tau, |i, j| reduced.var * ((i.min(j) + 1) as f64));
    let (lo, hi): (Vec<f64>, Vec<f64>) = (1..=tau)
        .map(|i| {
            let m = i as f64 * reduced.mu;
            (derived.theta2 - m, derived.theta1 - m)
        })
        .unzip();
    let order = prioritize(&lo, &hi, &cov);
    // Offset keeps these shifts apart from the band streams of equal τ.
    let qmc = qmc.with_seed(horizon_seed(qmc.seed ^ 0x5DEE_CE66_D1CE_5EED, tau));
    Ok(MvnIntegrator::new(&cov, order, &qmc)?.probability(&lo, &hi))
}

/// Integrals over the endpoint log-ratio for one block length `τ`, each of
/// `density(κ) · g_τ(κ)` times `1`, `E[Π1 | κ]` or `E[Π2 | κ]`:
/// `[mass, Π1-weighted, Π2-weighted]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMoments {
    pub tau: usize,
    /// Over `θ2 < κ < θ1`: the block has not traded by `τ`.
    pub inside: [f64; 3],
    /// Over `κ ≥ θ1`: first trade at `τ`, on the lower edge (stock 1 bought).
    pub lower_tail: [f64; 3],
    /// Over `κ ≤ θ2`: first trade at `τ`, on the upper edge (stock 1 sold).
    pub upper_tail: [f64; 3],
}

impl HorizonMoments {
    /// `P(E^nc) · T(τ)`.
    pub fn pt(&self, b: f64) -> f64 {
        b * self.inside[1] + (1.0 - b) * self.inside[2]
    }

    /// `P(E^fc) · R(τ)`, net of the trading cost encoded in `derived`.
    pub fn pr(&self, derived: &TrpDerived) -> f64 {
        derived.zeta1_dn * self.lower_tail[1]
            + derived.zeta2_dn * self.lower_tail[2]
            + derived.zeta1_up * self.upper_tail[1]
            + derived.zeta2_up * self.upper_tail[2]
    }

    /// First-trade probability at `τ`, from the tail masses.
    pub fn fc_p(&self) -> f64 {
        self.lower_tail[0] + self.upper_tail[0]
    }

    /// No-trade probability through `τ`, from the inside mass.
    pub fn stay_mass(&self) -> f64 {
        self.inside[0]
    }
}

// Mass outside this many endpoint standard deviations is negligible.
const KAPPA_SDS: f64 = 8.0;

/// Computes the [`HorizonMoments`] of block length `τ` for target `b` and
/// threshold `eps`.
pub fn horizon_moments(
    tau: usize,
    params: &LogNormalParams,
    b: f64,
    eps: f64,
    options: &WealthOptions,
) -> Result<HorizonMoments> {
    params.validate()?;
    let derived = thresholds(b, eps)?;
    let reduced = reduce(params);
    let band = BandEvaluator::new(tau, &reduced, &derived, options.band_law, &options.qmc)?;

    let t = tau as f64;
    let (mu, var) = (reduced.mu, reduced.var);
    let (var1, var2) = (params.var1, params.var2);
    let mean_k = t * mu;
    let var_k = t * var;
    let sd_k = var_k.sqrt();
    // ln Π1 given κ is normal with this mean slope and variance.
    let slope = var1 / var;
    let cond_var = t * var1 * var2 / var;
    let lo = mean_k - t * var1 - KAPPA_SDS * sd_k;
    let hi = mean_k + t * var2 + KAPPA_SDS * sd_k;

    let integrand = |kappa: f64| {
        let g = band.probability(kappa);
        if g == 0.0 {
            return [0.0; 3];
        }
        let dens = gaussian_pdf(kappa, mean_k, var_k) * g;
        let e1 = (t * params.mu1 - slope * (kappa - mean_k) + 0.5 * cond_var).exp();
        [dens, dens * e1, dens * e1 * kappa.exp()]
    };
    let quad = &options.quadrature;
    let over = |a: f64, b: f64| -> Result<[f64; 3]> {
        Ok(quad.integrate_many(integrand, a.max(lo), b.min(hi))?.value)
    };
    Ok(HorizonMoments {
        tau,
        inside: over(derived.theta2, derived.theta1)?,
        lower_tail: over(derived.theta1, f64::INFINITY)?,
        upper_tail: over(f64::NEG_INFINITY, derived.theta2)?,
    })
}

/// `P(E_τ^nc) · T(τ)` for `config`.
pub fn pt_product(
    tau: usize,
    params: &LogNormalParams,
    config: &TrpConfig,
    options: &WealthOptions,
) -> Result<f64> {
    config.validate()?;
    Ok(horizon_moments(tau, params, config.b, config.eps, options)?.pt(config.b))
}

/// `P(E_τ^fc) · R(τ)` for `config`.
pub fn pr_product(
    tau: usize,
    params: &LogNormalParams,
    config: &TrpConfig,
    options: &WealthOptions,
) -> Result<f64> {
    let derived = derive(config)?;
    Ok(horizon_moments(tau, params, config.b, config.eps, options)?.pr(&derived))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub i: usize,
    pub stay_p: f64,
    pub fc_p: f64,
    pub pr: f64,
    pub pt: f64,
    pub es: f64,
}

/// Per-horizon terms of the recursion; row `i` covers horizon `i ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonTable {
    pub rows: Vec<HorizonRow>,
}

impl HorizonTable {
    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    /// `E[S(n)]`, with `es(0) = 1`.
    pub fn es(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.rows[n - 1].es
        }
    }

    /// `stay_p(i)`, with `stay_p(0) = 1`.
    pub fn stay_p(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.rows[i - 1].stay_p
        }
    }

    /// First-trade probability as the drop in `stay_p`.
    pub fn fc_p_from_stay(&self, i: usize) -> f64 {
        self.stay_p(i - 1) - self.stay_p(i)
    }

    /// Writes `i,stay_p,fc_p,pr,pt,es`, one row per horizon.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "stay_p", "fc_p", "pr", "pt", "es"])?;
        for r in &self.rows {
            w.write_record([
                r.i.to_string(),
                r.stay_p.to_string(),
                r.fc_p.to_string(),
                r.pr.to_string(),
                r.pt.to_string(),
                r.es.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the renewal recursion on per-horizon `pr` and `pt`. Entry `n` of the
/// result is `es(n)`.
pub fn renewal(pr: &[f64], pt: &[f64]) -> Vec<f64> {
    debug_assert_eq!(pr.len(), pt.len());
    let mut es = Vec::with_capacity(pr.len() + 1);
    es.push(1.0);
    for n in 1..=pr.len() {
        let carried: f64 = (1..=n).map(|i| pr[i - 1] * es[n - i]).sum();
        es.push(carried + pt[n - 1]);
    }
    es
}

/// All cost-independent pieces of the expected-wealth table for one `(b, eps)`.
/// Tables for several costs can be read off the same model.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonModel {
    pub b: f64,
    pub eps: f64,
    pub moments: Vec<HorizonMoments>,
    pub stay: Vec<MvnResult>,
}

impl HorizonModel {
    pub fn compute(
        n: usize,
        params: &LogNormalParams,
        b: f64,
        eps: f64,
        options: &WealthOptions,
    ) -> Result<Self> {
        let derived = check_horizon(n, params, b, eps, options)?;
        let reduced = reduce(params);
        let moments = (1..=n)
            .map(|tau| horizon_moments(tau, params, b, eps, options))
            .collect::<Result<Vec<_>>>()?;
        let stay = (1..=n)
            .map(|tau| stay_probability(tau, &reduced, &derived, &options.qmc))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            b,
            eps,
            moments,
            stay,
        })
    }

    pub fn table(&self, c: f64) -> Result<HorizonTable> {
        let config = TrpConfig::new(self.b, self.eps, c)?;
        let derived = derive(&config)?;
        let pr: Vec<f64> = self.moments.iter().map(|m| m.pr(&derived)).collect();
        let pt: Vec<f64> = self.moments.iter().map(|m| m.pt(self.b)).collect();
        let es = renewal(&pr, &pt);
        let rows = self
            .moments
            .iter()
            .zip(&self.stay)
            .enumerate()
            .map(|(k, (m, s))| HorizonRow {
                i: k + 1,
                stay_p: s.p,
                fc_p: m.fc_p(),
                pr: pr[k],
                pt: pt[k],
                es: es[k + 1],
            })
            .collect();
        Ok(HorizonTable { rows })
    }
}

fn check_horizon(
    n: usize,
    params: &LogNormalParams,
    b: f64,
    eps: f64,
    options: &WealthOptions,
) -> Result<TrpDerived> {
    params.validate()?;
    if n == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if n > options.horizon_cap {
        return Err(Error::HorizonCap {
            requested: n,
            cap: options.horizon_cap,
        });
    }
    thresholds(b, eps)
}

/// Full horizon table of `config` up to horizon `n`.
pub fn expected_wealth(
    n: usize,
    params: &LogNormalParams,
    config: &TrpConfig,
    options: &WealthOptions,
) -> Result<HorizonTable> {
    config.validate()?;
    HorizonModel::compute(n, params, config.b, config.eps, options)?.table(config.c)
}

/// `E[S(n)]` alone. Skips the stay probabilities, which the recursion does
/// not need.
pub fn expected_final_wealth(
    n: usize,
    params: &LogNormalParams,
    config: &TrpConfig,
    options: &WealthOptions,
) -> Result<f64> {
    config.validate()?;
    check_horizon(n, params, config.b, config.eps, options)?;
    let derived = derive(config)?;
    let mut pr = Vec::with_capacity(n);
    let mut pt = Vec::with_capacity(n);
    for tau in 1..=n {
        let m = horizon_moments(tau, params, config.b, config.eps, options)?;
        pr.push(m.pr(&derived));
        pt.push(m.pt(config.b));
    }
    Ok(renewal(&pr, &pt)[n])
}

/// `E[S(n)]` of buy-and-hold at initial fraction `b`.
pub fn buy_and_hold_expectation(b: f64, n: usize, params: &LogNormalParams) -> f64 {
    let (m1, m2) = params.mean_relatives();
    let n = n as i32;
    b * m1.powi(n) + (1.0 - b) * m2.powi(n)
}

/// `E[S(n)]` of a costless constant rebalanced portfolio.
pub fn crp_expectation(b: f64, n: usize, params: &LogNormalParams) -> f64 {
    let (m1, m2) = params.mean_relatives();
    (b * m1 + (1.0 - b) * m2).powi(n as i32)
}

/// Sample mean and standard error of `S(t)` for `t = 0..=n` over `paths`
/// simulated markets.
pub fn mc_expected_wealth_curve(
    n: usize,
    params: &LogNormalParams,
    config: &TrpConfig,
    paths: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    params.validate()?;
    derive(config)?;
    if paths == 0 {
        return Err(invalid("need at least one path"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = vec![0.0; n + 1];
    let mut m2 = vec![0.0; n + 1];
    for p in 0..paths {
        let series = sample_relatives(params, n, &mut rng);
        let curve = run_trp_slice(config, &series);
        let k = (p + 1) as f64;
        for (t, &s) in curve.wealth.iter().enumerate() {
            let d = s - mean[t];
            mean[t] += d / k;
            m2[t] += d * (s - mean[t]);
        }
    }
    let denom = (paths as f64) * ((paths.max(2) - 1) as f64);
    Ok(mean
        .into_iter()
        .zip(m2)
        .map(|(m, s)| (m, if paths > 1 { (s / denom).sqrt() } else { 0.0 }))
        .collect())
}

/// Sample mean and standard error of the final TRP wealth after `n` periods.
pub fn mc_expected_wealth(
    n: usize,
    params: &LogNormalParams,
    config: &TrpConfig,
    paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    Ok(mc_expected_wealth_curve(n, params, config, paths, seed)?[n])
}
