//! Reward definitions: length-normalized rewards, reward gaps, the ratio
//! reward margin m, and the implied margin of a reference policy.

use serde::{Deserialize, Serialize};

use crate::corpus::{PreferencePair, TokenSeq};
use crate::error::{Error, Result};
use crate::policy::{self, PolicyParams};

/// Every reward sub-expression for one pair.
///
/// `a` and `b` are the length-normalized log-probabilities of the chosen and
/// rejected responses, `delta = a - b`, `denom = |a + b|`, and
/// `m = delta / denom` is the ratio reward margin, bounded in [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub denom: f64,
    pub m: f64,
}

impl RewardBreakdown {
    /// Assembles the breakdown from the two length-normalized rewards.
    pub fn from_rewards(a: f64, b: f64) -> Result<Self> {
        let m = ratio_margin(a, b)?;
        Ok(RewardBreakdown {
            a,
            b,
            delta: a - b,
            // Literally |a + b|, not |a| + |b|; the two coincide for a, b <= 0
            // but the literal form is the definition of record.
            denom: (a + b).abs(),
            m,
        })
    }
}

/// Length-normalized reward: `log pi(y|x) / |y|`. Always <= 0.
pub fn length_norm_reward(
    params: &PolicyParams,
    prompt: &TokenSeq,
    response: &TokenSeq,
) -> Result<f64> {
    let lp = policy::sequence_logprob(params, prompt, response)?;
    Ok(lp.total / lp.length() as f64)
}

/// Ratio reward margin `(a - b) / |a + b|` for length-normalized rewards
/// a, b <= 0. Bounded in [-1, 1]; hits +-1 iff exactly one of a, b is 0.
///
/// Errors with a degenerate-pair error when a == b == 0 (both responses have
/// probability 1); callers may skip such samples.
pub fn ratio_margin(a: f64, b: f64) -> Result<f64> {
    if !(a <= 0.0 && b <= 0.0) {
        return Err(Error::contract(format!(
            "length-normalized rewards must be <= 0, got a={a}, b={b}"
        )));
    }
    if a == 0.0 && b == 0.0 {
        return Err(Error::degenerate(
            "both rewards are 0: the ratio-margin denominator |a + b| vanishes",
        ));
    }
    Ok((a - b) / (a + b).abs())
}

/// Full reward breakdown for a pair under `params`.
pub fn pair_breakdown(params: &PolicyParams, pair: &PreferencePair) -> Result<RewardBreakdown> {
    let a = length_norm_reward(params, &pair.prompt, &pair.chosen)?;
    let b = length_norm_reward(params, &pair.prompt, &pair.rejected)?;
    RewardBreakdown::from_rewards(a, b)
}

/// The margin a reference policy implies for this pair:
/// `(beta/|y_w|) log pi_ref(y_w|x) - (beta/|y_l|) log pi_ref(y_l|x)`.
///
/// Length-normalized DPO against `reference` equals SimPO with this gamma.
pub fn implied_gamma(reference: &PolicyParams, pair: &PreferencePair, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::contract(format!("beta must be positive, got {beta}")));
    }
    let a = length_norm_reward(reference, &pair.prompt, &pair.chosen)?;
    let b = length_norm_reward(reference, &pair.prompt, &pair.rejected)?;
    Ok(beta * a - beta * b)
}
