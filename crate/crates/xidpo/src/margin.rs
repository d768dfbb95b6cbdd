//! Reward-gap distribution machinery: quantile estimation and xi selection.
//!
//! The distribution holds the per-pair ratio margins {m_i} computed under a
//! fixed initial policy; xi is chosen as an upper quantile of it.

use rayon::prelude::*;
use serde::Serialize;
use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rewards;
use crate::threads;

/// Report columns: 1%, 5%, 10%, 25%, 35%, 45%, 50%, 75%, 90%, 95%, 99%, 100%.
pub const DEFAULT_REPORT_TS: [f64; 12] = [
    0.01, 0.05, 0.10, 0.25, 0.35, 0.45, 0.50, 0.75, 0.90, 0.95, 0.99, 1.00,
];

/// The collection {m_i} with sorted order and summary statistics. Values are
/// ratio margins, so each lies in [-1, 1]. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct GapDistribution {
    values: Vec<f64>,
    sorted: Vec<f64>,
    skipped: usize,
}

impl GapDistribution {
    /// Builds a distribution from raw margin values, recording how many
    /// degenerate pairs were excluded upstream.
    pub fn from_values(values: Vec<f64>, skipped: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDistribution(
                "no usable margin values".to_string(),
            ));
        }
        if let Some(&bad) = values
            .iter()
            .find(|v| !v.is_finite() || !(-1.0..=1.0).contains(*v))
        {
            return Err(Error::validation(format!(
                "margin value {bad} outside [-1, 1]"
            )));
        }
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        Ok(GapDistribution {
            values,
            sorted,
            skipped,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn median(&self) -> f64 {
        quantile_of_sorted(&self.sorted, 0.5).expect("0.5 is a valid quantile level")
    }

    /// Sample skewness g1 = m3 / m2^(3/2); 0 by convention for a constant
    /// distribution.
    pub fn skewness(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.mean();
        let m2 = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if m2 == 0.0 {
            return 0.0;
        }
        let m3 = self.values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        m3 / m2.powf(1.5)
    }

    /// Empirical CDF: fraction of values <= v (right-continuous, the
    /// plotting convention used by the CDF export).
    pub fn ecdf(&self, v: f64) -> f64 {
        let count = self.sorted.partition_point(|&x| x <= v);
        count as f64 / self.len() as f64
    }

    /// Fraction of values strictly below v. This is the variant the
    /// interpolating quantile inverts from below: for any v in the support,
    /// `quantile(dist, ecdf_below(v)) <= v`.
    pub fn ecdf_below(&self, v: f64) -> f64 {
        let count = self.sorted.partition_point(|&x| x < v);
        count as f64 / self.len() as f64
    }
}

/// Ratio margins of every pair under the given policy. Degenerate pairs are
/// counted as skipped; a dataset in which every pair is degenerate is an
/// empty-distribution error.
pub fn compute_gaps(dataset: &Dataset, policy: &PolicyParams) -> Result<GapDistribution> {
    if dataset.is_empty() {
        return Err(Error::contract("dataset must be non-empty"));
    }
    let results: Vec<Result<f64>> = threads::pool().install(|| {
        dataset
            .pairs()
            .par_iter()
            .map(|pair| rewards::pair_breakdown(policy, pair).map(|bd| bd.m))
            .collect()
    });
    let mut values = Vec::with_capacity(dataset.len());
    let mut skipped = 0usize;
    for r in results {
        match r {
            Ok(m) => values.push(m),
            Err(Error::DegeneratePair(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(Error::EmptyDistribution(format!(
            "all {skipped} pairs are degenerate"
        )));
    }
    GapDistribution::from_values(values, skipped)
}

/// Linear interpolation between order statistics at h = t (n - 1):
/// `sorted[floor(h)] + (h - floor(h)) (sorted[floor(h)+1] - sorted[floor(h)])`.
pub fn quantile_of_sorted(sorted: &[f64], t: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::contract("quantile of an empty collection"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::contract(format!("quantile level {t} outside [0, 1]")));
    }
    let h = t * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        Ok(sorted[lo])
    } else {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    }
}

/// The t-th quantile of the margin distribution.
pub fn quantile(dist: &GapDistribution, t: f64) -> Result<f64> {
    quantile_of_sorted(&dist.sorted, t)
}

/// xi selection: the t-th quantile of the initial margin distribution.
/// Rejects non-positive results (xi must be a positive ratio margin); the
/// lower quantiles of a symmetric distribution are <= 0, so the fix is a
/// larger t.
pub fn select_xi(dist: &GapDistribution, t: f64) -> Result<f64> {
    let q = quantile(dist, t)?;
    if q <= 0.0 {
        return Err(Error::InvalidXi(format!(
            "quantile at t={t} is {q}; xi must lie in (0, 1] - choose a larger t"
        )));
    }
    if q > 1.0 {
        return Err(Error::InvalidXi(format!(
            "quantile at t={t} is {q}, above the ratio-margin bound 1"
        )));
    }
    Ok(q)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuantileEntry {
    pub t: f64,
    pub q: f64,
}

/// Quantile report with an optional selected (t, xi) pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantileTable {
    pub entries: Vec<QuantileEntry>,
    pub selected_t: Option<f64>,
    pub selected_xi: Option<f64>,
}

impl QuantileTable {
    /// CSV with a `t,q` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,q\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{}", e.t, e.q);
        }
        out
    }
}

/// Quantiles at the requested levels (sorted ascending in the report).
pub fn quantile_report(dist: &GapDistribution, ts: &[f64]) -> Result<QuantileTable> {
    let mut levels = ts.to_vec();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let entries = levels
        .into_iter()
        .map(|t| quantile(dist, t).map(|q| QuantileEntry { t, q }))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantileTable {
        entries,
        selected_t: None,
        selected_xi: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub center: f64,
    pub count: usize,
}

/// Equal-width histogram over [-1, 1]; counts sum to n.
pub fn export_histogram(dist: &GapDistribution, bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::contract("bins must be >= 1"));
    }
    let width = 2.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in dist.values() {
        let idx = (((v + 1.0) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            center: -1.0 + (i as f64 + 0.5) * width,
            count,
        })
        .collect())
}

/// CSV with a `bin_center,count` header.
pub fn histogram_to_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_center,count\n");
    for b in bins {
        let _ = writeln!(out, "{},{}", b.center, b.count);
    }
    out
}

/// CSV with an `m,cdf` header: the empirical CDF evaluated at each sorted
/// margin value.
pub fn cdf_to_csv(dist: &GapDistribution) -> String {
    let n = dist.len() as f64;
    let mut out = String::from("m,cdf\n");
    for (i, v) in dist.sorted().iter().enumerate() {
        let _ = writeln!(out, "{},{}", v, (i + 1) as f64 / n);
    }
    out
}
