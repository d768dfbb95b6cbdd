//! Diagnostics for sigmoid-family objectives: beta-induced sample filtering,
//! head/middle/tail region classification, token-level margin decomposition,
//! and the length-normalized-DPO-equals-SimPO equivalence check.

use serde::Serialize;
use std::collections::BTreeMap;

use crate::corpus::{Dataset, PreferencePair};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, Method};
use crate::margin::quantile_of_sorted;
use crate::policy::{self, PolicyParams};
use crate::rewards;

/// Position of a sample in the reward-gap distribution: head (rejected
/// dominates, gap below the lower threshold), tail (chosen dominates, gap
/// above the upper threshold), or middle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionLabel {
    Head,
    Middle,
    Tail,
}

pub fn classify_region(delta: f64, lower: f64, upper: f64) -> RegionLabel {
    if delta < lower {
        RegionLabel::Head
    } else if delta > upper {
        RegionLabel::Tail
    } else {
        RegionLabel::Middle
    }
}

/// Gradient magnitude of the sigmoid objective at reward gap `delta`:
/// `1 - sigma(beta delta - gamma)`, always in (0, 1) and decreasing in
/// delta. Near 0 the sample is effectively filtered out of training; near 1
/// the gradient has saturated at its maximum.
pub fn sigmoid_grad_magnitude(delta: f64, beta: f64, gamma: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::contract(format!("beta must be positive, got {beta}")));
    }
    Ok(1.0 - losses::sigmoid(beta * delta - gamma))
}

/// How beta filters a gap distribution.
///
/// `filtered_fraction` counts samples whose gradient magnitude fell below
/// epsilon (the tail-side zero-gradient effect). `per_region_fractions`
/// reports, as fractions of all samples: head-region samples whose gradient
/// saturated above 1 - epsilon (near-constant gradient, kept separate from
/// "filtered"), tail-region samples below epsilon, and middle-region samples
/// still inside the responsive band [epsilon, 1 - epsilon].
#[derive(Clone, Debug, Serialize)]
pub struct FilterReport {
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub lower_threshold: f64,
    pub upper_threshold: f64,
    pub n: usize,
    pub filtered_fraction: f64,
    pub per_region_fractions: BTreeMap<RegionLabel, f64>,
}

/// Default head/tail thresholds: the 10th and 90th percentiles of the gap
/// values.
pub fn region_thresholds(gaps: &[f64]) -> Result<(f64, f64)> {
    if gaps.is_empty() {
        return Err(Error::contract("gaps must be non-empty"));
    }
    let mut sorted = gaps.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok((
        quantile_of_sorted(&sorted, 0.10)?,
        quantile_of_sorted(&sorted, 0.90)?,
    ))
}

pub fn filter_report(
    gaps: &[f64],
    beta: f64,
    gamma: f64,
    epsilon: f64,
    thresholds: (f64, f64),
) -> Result<FilterReport> {
    if gaps.is_empty() {
        return Err(Error::contract("gaps must be non-empty"));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::contract(format!(
            "epsilon must lie in (0, 0.5), got {epsilon}"
        )));
    }
    let (lower, upper) = thresholds;
    if !(lower < upper) {
        return Err(Error::contract(format!(
            "thresholds must satisfy lower < upper, got ({lower}, {upper})"
        )));
    }

    let n = gaps.len();
    let mut filtered = 0usize;
    let mut head_saturated = 0usize;
    let mut tail_filtered = 0usize;
    let mut middle_responsive = 0usize;
    for &delta in gaps {
        let magnitude = sigmoid_grad_magnitude(delta, beta, gamma)?;
        if magnitude < epsilon {
            filtered += 1;
        }
        match classify_region(delta, lower, upper) {
            RegionLabel::Head if magnitude > 1.0 - epsilon => head_saturated += 1,
            RegionLabel::Tail if magnitude < epsilon => tail_filtered += 1,
            RegionLabel::Middle if (epsilon..=1.0 - epsilon).contains(&magnitude) => {
                middle_responsive += 1
            }
            _ => {}
        }
    }

    let frac = |count: usize| count as f64 / n as f64;
    let mut per_region_fractions = BTreeMap::new();
    per_region_fractions.insert(RegionLabel::Head, frac(head_saturated));
    per_region_fractions.insert(RegionLabel::Middle, frac(middle_responsive));
    per_region_fractions.insert(RegionLabel::Tail, frac(tail_filtered));

    Ok(FilterReport {
        beta,
        gamma,
        epsilon,
        lower_threshold: lower,
        upper_threshold: upper,
        n,
        filtered_fraction: frac(filtered),
        per_region_fractions,
    })
}

/// Token-level decomposition of the SimPO argument for equal-length pairs:
/// `term_i = (beta/|y|)(log p(y_w^i|.) - log p(y_l^i|.)) - gamma/|y|`, the
/// margin split uniformly across positions. The terms sum to the
/// sequence-level argument `beta (a - b) - gamma`.
pub fn token_decompose(
    policy: &PolicyParams,
    pair: &PreferencePair,
    beta: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    if !(beta > 0.0) {
        return Err(Error::contract(format!("beta must be positive, got {beta}")));
    }
    if pair.chosen.len() != pair.rejected.len() {
        return Err(Error::contract(format!(
            "token decomposition requires equal-length responses (got {} and {}); \
             use the sequence-level losses for unequal lengths",
            pair.chosen.len(),
            pair.rejected.len()
        )));
    }
    let w = policy::sequence_logprob(policy, &pair.prompt, &pair.chosen)?;
    let l = policy::sequence_logprob(policy, &pair.prompt, &pair.rejected)?;
    let n = w.length() as f64;
    Ok(w.per_token
        .iter()
        .zip(l.per_token.iter())
        .map(|(&pw, &pl)| (beta / n) * (pw - pl) - gamma / n)
        .collect())
}

/// Max absolute discrepancy between length-normalized DPO and SimPO with the
/// reference-implied margin, over all non-degenerate pairs. Algebraically
/// this is 0; the reported max is floating-point noise.
pub fn equivalence_check(
    policy: &PolicyParams,
    reference: &PolicyParams,
    dataset: &Dataset,
    beta: f64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::contract("dataset must be non-empty"));
    }
    let mut max_diff = 0.0f64;
    for pair in dataset.pairs() {
        match pair_equivalence_gap(policy, reference, pair, beta) {
            Ok(diff) => max_diff = max_diff.max(diff),
            Err(Error::DegeneratePair(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(max_diff)
}

/// |loss_dpo_lennorm - loss_simpo(gamma = implied gamma)| for one pair.
pub fn pair_equivalence_gap(
    policy: &PolicyParams,
    reference: &PolicyParams,
    pair: &PreferencePair,
    beta: f64,
) -> Result<f64> {
    let cfg = LossConfig {
        method: Method::DpoLennorm,
        beta,
        ..LossConfig::default()
    };
    let dl = losses::loss_dpo_lennorm(policy, reference, pair, &cfg)?;
    let gamma = rewards::implied_gamma(reference, pair, beta)?;
    let sp_cfg = LossConfig {
        method: Method::Simpo,
        beta,
        gamma,
        ..LossConfig::default()
    };
    let sp = losses::loss_simpo(policy, pair, &sp_cfg)?;
    Ok((dl.loss - sp.loss).abs())
}
