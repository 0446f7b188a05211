//! Maximum-likelihood fit of the log-normal market to a window of relatives.

use crate::error::{Error, Result};
use crate::market::{LogNormalParams, PriceRelativeSeries};

/// Sample mean and biased (1/N) variance of `ln x1` and `ln x2`.
///
/// A window whose log-relatives are all equal gets variance exactly zero.
/// Such params fail [`LogNormalParams::validate`], so downstream evaluation
/// rejects them unless a floor is applied with [`mle_with_floor`].
pub fn mle(series: &PriceRelativeSeries) -> Result<LogNormalParams> {
    let n = series.len();
    if n < 2 {
        return Err(Error::InvalidData(format!(
            "maximum-likelihood fit needs at least 2 periods, got {n}"
        )));
    }
    // Working relative to the first period makes a constant window come out
    // with exactly zero deviations.
    let first = series.relatives()[0];
    let (o1, o2) = (first.x1.ln(), first.x2.ln());
    let devs: Vec<(f64, f64)> = series
        .relatives()
        .iter()
        .map(|x| (x.x1.ln() - o1, x.x2.ln() - o2))
        .collect();
    let nf = n as f64;
    let d1 = devs.iter().map(|d| d.0).sum::<f64>() / nf;
    let d2 = devs.iter().map(|d| d.1).sum::<f64>() / nf;
    let var1 = devs.iter().map(|d| (d.0 - d1).powi(2)).sum::<f64>() / nf;
    let var2 = devs.iter().map(|d| (d.1 - d2).powi(2)).sum::<f64>() / nf;
    let (mu1, mu2) = (o1 + d1, o2 + d2);
    Ok(LogNormalParams {
        mu1,
        mu2,
        var1,
        var2,
    })
}

/// [`mle`] with both variances raised to at least `floor`.
pub fn mle_with_floor(series: &PriceRelativeSeries, floor: f64) -> Result<LogNormalParams> {
    let mut p = mle(series)?;
    p.var1 = p.var1.max(floor);
    p.var2 = p.var2.max(floor);
    Ok(p)
}
