//! The i.i.d. log-normal two-asset market: parameters, sampling, and price ingestion.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One period's price relatives, `close(t) / close(t-1)` for each asset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceRelative {
    pub x1: f64,
    pub x2: f64,
}

impl PriceRelative {
    pub fn new(x1: f64, x2: f64) -> Result<Self> {
        if !(x1 > 0.0 && x1.is_finite() && x2 > 0.0 && x2.is_finite()) {
            return Err(Error::InvalidData(format!(
                "price relatives must be finite and positive, got ({x1}, {x2})"
            )));
        }
        Ok(Self { x1, x2 })
    }

    /// Log ratio `ln(x2 / x1)`, one step of the reduced walk.
    #[inline]
    pub fn log_ratio(&self) -> f64 {
        (self.x2 / self.x1).ln()
    }
}

/// Ordered sequence of price relatives with optional per-period labels (dates).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceRelativeSeries {
    relatives: Vec<PriceRelative>,
    labels: Vec<Option<String>>,
}

impl PriceRelativeSeries {
    pub fn new(relatives: Vec<PriceRelative>) -> Result<Self> {
        for r in &relatives {
            PriceRelative::new(r.x1, r.x2)?;
        }
        let labels = vec![None; relatives.len()];
        Ok(Self { relatives, labels })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let relatives = pairs
            .iter()
            .map(|&(x1, x2)| PriceRelative::new(x1, x2))
            .collect::<Result<Vec<_>>>()?;
        Self::new(relatives)
    }

    pub fn with_labels(mut self, labels: Vec<Option<String>>) -> Result<Self> {
        if labels.len() != self.relatives.len() {
            return Err(invalid("label count must match the number of periods"));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.relatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relatives.is_empty()
    }

    pub fn relatives(&self) -> &[PriceRelative] {
        &self.relatives
    }

    pub fn labels(&self) -> &[Option<String>] {
        &self.labels
    }

    /// Sub-series over `range`, labels included.
    pub fn slice(&self, range: std::ops::Range<usize>) -> PriceRelativeSeries {
        PriceRelativeSeries {
            relatives: self.relatives[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
        }
    }

    /// Writes `date,x1,x2`; periods without a label use their 1-based index.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "x1", "x2"])?;
        for (i, (r, label)) in self.relatives.iter().zip(&self.labels).enumerate() {
            let date = label.clone().unwrap_or_else(|| (i + 1).to_string());
            w.write_record([date, r.x1.to_string(), r.x2.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a market CSV, either pre-computed relatives or raw closes.
    pub fn read_csv<R: Read>(reader: R, mode: CsvMode) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let expected = match mode {
            CsvMode::Relatives => ["date", "x1", "x2"],
            CsvMode::Prices => ["date", "close1", "close2"],
        };
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != expected {
            return Err(Error::InvalidData(format!(
                "expected header {}, found {}",
                expected.join(","),
                header.join(",")
            )));
        }
        let mut dates = Vec::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |idx: usize| -> Result<f64> {
                record[idx].parse::<f64>().map_err(|e| {
                    Error::InvalidData(format!("row {}: column {}: {e}", line + 2, expected[idx]))
                })
            };
            dates.push(record[0].to_owned());
            first.push(parse(1)?);
            second.push(parse(2)?);
        }
        match mode {
            CsvMode::Relatives => {
                let pairs: Vec<(f64, f64)> = first.into_iter().zip(second).collect();
                Self::from_pairs(&pairs)?.with_labels(dates.into_iter().map(Some).collect())
            }
            CsvMode::Prices => {
                let series = from_prices(&first, &second)?;
                series.with_labels(dates.into_iter().skip(1).map(Some).collect())
            }
        }
    }
}

/// Layout of an input market CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvMode {
    /// `date,x1,x2`
    Relatives,
    /// `date,close1,close2`
    Prices,
}

/// Per-period log-space law of the two assets: `ln x_i ~ N(mu_i, var_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu1: f64,
    pub mu2: f64,
    pub var1: f64,
    pub var2: f64,
}

impl LogNormalParams {
    pub fn new(mu1: f64, mu2: f64, var1: f64, var2: f64) -> Result<Self> {
        let p = Self {
            mu1,
            mu2,
            var1,
            var2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.mu1, self.mu2, self.var1, self.var2]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(invalid("market parameters must be finite"));
        }
        if !(self.var1 > 0.0 && self.var2 > 0.0) {
            return Err(invalid(format!(
                "log-space variances must be positive, got var1={}, var2={}",
                self.var1, self.var2
            )));
        }
        Ok(())
    }

    /// `E[x_i] = exp(mu_i + var_i / 2)`.
    pub fn mean_relatives(&self) -> (f64, f64) {
        (
            (self.mu1 + 0.5 * self.var1).exp(),
            (self.mu2 + 0.5 * self.var2).exp(),
        )
    }
}

/// Law of the reduced walk step `z(t) = ln(x2(t) / x1(t)) ~ N(mu, var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedParams {
    pub mu: f64,
    pub var: f64,
}

impl ReducedParams {
    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }
}

pub fn reduce(params: &LogNormalParams) -> ReducedParams {
    ReducedParams {
        mu: params.mu2 - params.mu1,
        var: params.var1 + params.var2,
    }
}

/// Draws `n` i.i.d. periods from the log-normal market. Deterministic in `seed`.
pub fn sample_market(params: &LogNormalParams, n: usize, seed: u64) -> Result<PriceRelativeSeries> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relatives = sample_relatives(params, n, &mut rng);
    PriceRelativeSeries::new(relatives)
}

pub(crate) fn sample_relatives<R: Rng>(
    params: &LogNormalParams,
    n: usize,
    rng: &mut R,
) -> Vec<PriceRelative> {
    let (sd1, sd2) = (params.var1.sqrt(), params.var2.sqrt());
    (0..n)
        .map(|_| {
            let g1: f64 = rng.sample(StandardNormal);
            let g2: f64 = rng.sample(StandardNormal);
            PriceRelative {
                x1: (params.mu1 + sd1 * g1).exp(),
                x2: (params.mu2 + sd2 * g2).exp(),
            }
        })
        .collect()
}

/// Converts two equal-length close-price lists into price relatives.
pub fn from_prices(closes1: &[f64], closes2: &[f64]) -> Result<PriceRelativeSeries> {
    if closes1.len() != closes2.len() {
        return Err(Error::InvalidData(format!(
            "price lists differ in length ({} vs {})",
            closes1.len(),
            closes2.len()
        )));
    }
    if closes1.len() < 2 {
        return Err(Error::InvalidData(
            "at least two closes are needed to form a relative".into(),
        ));
    }
    if let Some(bad) = closes1
        .iter()
        .chain(closes2)
        .find(|p| !(**p > 0.0 && p.is_finite()))
    {
        return Err(Error::InvalidData(format!(
            "prices must be finite and positive, found {bad}"
        )));
    }
    let pairs: Vec<(f64, f64)> = closes1
        .windows(2)
        .zip(closes2.windows(2))
        .map(|(a, b)| (a[1] / a[0], b[1] / b[0]))
        .collect();
    PriceRelativeSeries::from_pairs(&pairs)
}
