//! Direct tensor-product quadrature of the per-horizon expectations, shared
//! by the oracle tests and the acceptance run.

use trp::engine::{derive, TrpConfig};
use trp::market::{reduce, LogNormalParams};
use trp::mvn::QmcParams;
use trp::normal::gaussian_pdf;
use trp::wealth::{BandEvaluator, BandLaw};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            loop {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    (p0, p1) = (p1, ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf);
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    let (mut q0, mut q1) = (1.0, x);
                    for k in 2..=n {
                        let kf = k as f64;
                        (q0, q1) = (q1, ((2.0 * kf - 1.0) * x * q1 - (kf - 1.0) * q0) / kf);
                    }
                    let dq = n as f64 * (x * q1 - q0) / (x * x - 1.0);
                    return (x, 2.0 / ((1.0 - x * x) * dq * dq));
                }
            }
        })
        .collect()
}

/// Composite rule: `panels` equal panels of `rule` on `[a, b]`.
fn composite(rule: &[(f64, f64)], a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|p| {
            let mid = a + h * (p as f64 + 0.5);
            rule.iter()
                .map(move |&(x, w)| (mid + 0.5 * h * x, 0.5 * h * w))
        })
        .collect()
}

/// `(pt, pr)` at block length `tau` by direct 2-D tensor quadrature over the
/// block's log-returns `u = ln Π1` and `κ = ln(Π2/Π1)`, sharing only the band
/// probability with the library.
pub fn tensor_oracle(
    tau: usize,
    params: &LogNormalParams,
    cfg: &TrpConfig,
    qmc: &QmcParams,
) -> (f64, f64) {
    let reduced = reduce(params);
    let derived = derive(cfg).unwrap();
    let band = BandEvaluator::new(tau, &reduced, &derived, BandLaw::Bridge, qmc).unwrap();
    let t = tau as f64;
    let (m1, v1) = (t * params.mu1, t * params.var1);
    let (m2, v2) = (t * params.mu2, t * params.var2);
    let sd_k = (v1 + v2).sqrt();
    let rule = gauss_legendre(20);
    let u_nodes = composite(&rule, m1 - 12.0 * v1.sqrt(), m1 + 12.0 * v1.sqrt(), 24);
    let k_lo = m2 - m1 - 12.0 * sd_k;
    let k_hi = m2 - m1 + 12.0 * sd_k;

    // ∫∫ g(κ) φ(u) φ(u + κ) (w1 e^u + w2 e^{u+κ}) du dκ over a κ range.
    let region = |a: f64, b: f64, w1: f64, w2: f64| -> f64 {
        let (a, b) = (a.max(k_lo), b.min(k_hi));
        if !(b > a) {
            return 0.0;
        }
        composite(&rule, a, b, 30)
            .into_iter()
            .map(|(k, wk)| {
                let g = band.probability(k);
                let inner: f64 = u_nodes
                    .iter()
                    .map(|&(u, wu)| {
                        let dens = gaussian_pdf(u, m1, v1) * gaussian_pdf(u + k, m2, v2);
                        wu * dens * (w1 * u.exp() + w2 * (u + k).exp())
                    })
                    .sum();
                wk * g * inner
            })
            .sum()
    };
    let (th1, th2) = (derived.theta1, derived.theta2);
    let pt = region(th2, th1, cfg.b, 1.0 - cfg.b);
    let pr = region(th1, f64::INFINITY, derived.zeta1_dn, derived.zeta2_dn)
        + region(f64::NEG_INFINITY, th2, derived.zeta1_up, derived.zeta2_up);
    (pt, pr)
}
