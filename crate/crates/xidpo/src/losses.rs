//! The preference-loss catalog.
//!
//! Each operation returns the per-pair loss value together with its exact
//! analytic gradient with respect to the policy weights. Reference policies
//! are frozen: no gradient flows into them. The ratio-margin family (xidpo,
//! xidpo_noleaky, xidpo_relu) treats the margin denominator |a + b| as a
//! constant during differentiation: its current value enters the forward
//! pass and the chain rule as a fixed coefficient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::corpus::PreferencePair;
use crate::error::{Error, Result};
use crate::policy::{self, ParamTable, PolicyParams};
use crate::rewards::RewardBreakdown;
use crate::threads;

/// Loss selector. Methods `dpo`, `dpo_lennorm`, `ipo`, and `rdpo` require a
/// reference policy; the rest are reference-free.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dpo,
    DpoLennorm,
    Ipo,
    Simpo,
    Cpo,
    Orpo,
    Rdpo,
    Simper,
    Xidpo,
    XidpoNoleaky,
    XidpoRelu,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Dpo,
        Method::DpoLennorm,
        Method::Ipo,
        Method::Simpo,
        Method::Cpo,
        Method::Orpo,
        Method::Rdpo,
        Method::Simper,
        Method::Xidpo,
        Method::XidpoNoleaky,
        Method::XidpoRelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dpo => "dpo",
            Method::DpoLennorm => "dpo_lennorm",
            Method::Ipo => "ipo",
            Method::Simpo => "simpo",
            Method::Cpo => "cpo",
            Method::Orpo => "orpo",
            Method::Rdpo => "rdpo",
            Method::Simper => "simper",
            Method::Xidpo => "xidpo",
            Method::XidpoNoleaky => "xidpo_noleaky",
            Method::XidpoRelu => "xidpo_relu",
        }
    }

    pub fn needs_reference(self) -> bool {
        matches!(
            self,
            Method::Dpo | Method::DpoLennorm | Method::Ipo | Method::Rdpo
        )
    }

    pub fn is_ratio_margin(self) -> bool {
        matches!(self, Method::Xidpo | Method::XidpoNoleaky | Method::XidpoRelu)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method '{s}' (expected one of: {})", names.join(", "))
            })
    }
}

/// Method selector plus every loss hyperparameter. Fields a method does not
/// use are ignored by it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub method: Method,
    pub beta: f64,
    pub gamma: f64,
    /// Ratio reward margin target, required by the xidpo family; must lie in
    /// (0, 1].
    pub xi: Option<f64>,
    pub tau: f64,
    pub lambda: f64,
    /// R-DPO length coefficient.
    pub c: f64,
    /// LeakyReLU slope for xidpo; must lie in [0, 1).
    pub leaky_slope: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            method: Method::Xidpo,
            beta: 1.0,
            gamma: 0.0,
            xi: None,
            tau: 0.5,
            lambda: 1.0,
            c: 0.01,
            leaky_slope: 0.01,
        }
    }
}

impl LossConfig {
    pub fn for_method(method: Method) -> Self {
        LossConfig {
            method,
            ..LossConfig::default()
        }
    }

    /// Checks the fields the selected method actually uses.
    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::Dpo | Method::DpoLennorm | Method::Simpo | Method::Rdpo => {
                require_positive(self.beta, "beta")
            }
            Method::Ipo => require_positive(self.tau, "tau"),
            Method::Cpo => {
                require_positive(self.beta, "beta")?;
                require_non_negative(self.lambda, "lambda")
            }
            Method::Orpo => require_non_negative(self.lambda, "lambda"),
            Method::Simper => Ok(()),
            Method::Xidpo => {
                self.require_xi()?;
                if !(0.0..1.0).contains(&self.leaky_slope) {
                    return Err(Error::config(format!(
                        "leaky_slope must lie in [0, 1), got {}",
                        self.leaky_slope
                    )));
                }
                Ok(())
            }
            Method::XidpoNoleaky | Method::XidpoRelu => self.require_xi().map(|_| ()),
        }
    }

    pub fn require_xi(&self) -> Result<f64> {
        let xi = self
            .xi
            .ok_or_else(|| Error::config(format!("method {} requires xi", self.method)))?;
        if !(xi > 0.0 && xi <= 1.0) {
            return Err(Error::config(format!("xi must lie in (0, 1], got {xi}")));
        }
        Ok(xi)
    }
}

fn require_positive(x: f64, name: &str) -> Result<()> {
    if x > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive, got {x}")))
    }
}

fn require_non_negative(x: f64, name: &str) -> Result<()> {
    if x >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be non-negative, got {x}")))
    }
}

/// Per-pair loss evaluation result.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    /// d loss / d weights.
    pub grad: ParamTable,
    /// Reward diagnostics; `None` only when the margin denominator vanishes
    /// for a method that does not itself need it.
    pub breakdown: Option<RewardBreakdown>,
    /// Ratio-margin family: true iff m < xi (the sample sits in the
    /// non-leaky branch). Always true elsewhere.
    pub active: bool,
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// -log sigma(z), stable for large |z|.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// d(-log sigma(z))/dz = -(1 - sigma(z)).
pub fn neg_log_sigmoid_grad(z: f64) -> f64 {
    -(1.0 - sigmoid(z))
}

/// Squared LeakyReLU hinge: returns (LeakyReLU(u)^2, d/du of that).
///
/// At u == 0 the non-leaky branch applies (slope 1); the value and the
/// derivative are both 0 there, so only the recorded subgradient choice is
/// affected.
pub fn leaky_hinge_sq(u: f64, slope: f64) -> (f64, f64) {
    let (act, branch) = if u >= 0.0 { (u, 1.0) } else { (slope * u, slope) };
    (act * act, 2.0 * act * branch)
}

/// One response evaluated under the policy: total log-probability, length,
/// and the gradient of the total.
struct SeqEval {
    total: f64,
    len: f64,
    grad: ParamTable,
}

fn eval_seq(params: &PolicyParams, pair: &PreferencePair, chosen: bool) -> Result<SeqEval> {
    let response = if chosen { &pair.chosen } else { &pair.rejected };
    let lp = policy::sequence_logprob(params, &pair.prompt, response)?;
    let grad = policy::logprob_grad(params, &pair.prompt, response)?;
    Ok(SeqEval {
        total: lp.total,
        len: lp.length() as f64,
        grad,
    })
}

fn ref_totals(reference: &PolicyParams, pair: &PreferencePair) -> Result<(f64, f64)> {
    let rw = policy::sequence_logprob(reference, &pair.prompt, &pair.chosen)?;
    let rl = policy::sequence_logprob(reference, &pair.prompt, &pair.rejected)?;
    Ok((rw.total, rl.total))
}

fn combine(v: usize, w: &SeqEval, coef_w: f64, l: &SeqEval, coef_l: f64) -> ParamTable {
    let mut grad = ParamTable::zeros(v);
    grad.add_scaled(&w.grad, coef_w);
    grad.add_scaled(&l.grad, coef_l);
    grad
}

fn breakdown_opt(w: &SeqEval, l: &SeqEval) -> Option<RewardBreakdown> {
    RewardBreakdown::from_rewards(w.total / w.len, l.total / l.len).ok()
}

/// DPO on raw sequence log-probabilities:
/// `-log sigma(beta ((log pi - log ref)_w - (log pi - log ref)_l))`.
pub fn loss_dpo(
    policy: &PolicyParams,
    reference: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    require_positive(cfg.beta, "beta")?;
    let w = eval_seq(policy, pair, true)?;
    let l = eval_seq(policy, pair, false)?;
    let (rw, rl) = ref_totals(reference, pair)?;
    let z = cfg.beta * ((w.total - rw) - (l.total - rl));
    let g = neg_log_sigmoid_grad(z);
    let grad = combine(policy.vocab_size(), &w, g * cfg.beta, &l, -g * cfg.beta);
    Ok(LossOutput {
        loss: neg_log_sigmoid(z),
        grad,
        breakdown: breakdown_opt(&w, &l),
        active: true,
    })
}

/// DPO with per-term beta/|y| length normalization. With
/// `gamma = implied_gamma(reference, pair, beta)` this equals
/// [`loss_simpo`] identically.
pub fn loss_dpo_lennorm(
    policy: &PolicyParams,
    reference: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    require_positive(cfg.beta, "beta")?;
    let w = eval_seq(policy, pair, true)?;
    let l = eval_seq(policy, pair, false)?;
    let (rw, rl) = ref_totals(reference, pair)?;
    let z = cfg.beta * (w.total - rw) / w.len - cfg.beta * (l.total - rl) / l.len;
    let g = neg_log_sigmoid_grad(z);
    let grad = combine(
        policy.vocab_size(),
        &w,
        g * cfg.beta / w.len,
        &l,
        -g * cfg.beta / l.len,
    );
    Ok(LossOutput {
        loss: neg_log_sigmoid(z),
        grad,
        breakdown: breakdown_opt(&w, &l),
        active: true,
    })
}

/// SimPO: `-log sigma(beta a - beta b - gamma)` over length-normalized
/// rewards a, b.
pub fn loss_simpo(
    policy: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    require_positive(cfg.beta, "beta")?;
    let w = eval_seq(policy, pair, true)?;
    let l = eval_seq(policy, pair, false)?;
    let a = w.total / w.len;
    let b = l.total / l.len;
    let z = cfg.beta * a - cfg.beta * b - cfg.gamma;
    let g = neg_log_sigmoid_grad(z);
    let grad = combine(
        policy.vocab_size(),
        &w,
        g * cfg.beta / w.len,
        &l,
        -g * cfg.beta / l.len,
    );
    Ok(LossOutput {
        loss: neg_log_sigmoid(z),
        grad,
        breakdown: breakdown_opt(&w, &l),
        active: true,
    })
}

/// IPO: `(h - 1/(2 tau))^2` with h the reference-relative log-ratio
/// difference on raw sequence log-probabilities.
pub fn loss_ipo(
    policy: &PolicyParams,
    reference: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    require_positive(cfg.tau, "tau")?;
    let w = eval_seq(policy, pair, true)?;
    let l = eval_seq(policy, pair, false)?;
    let (rw, rl) = ref_totals(reference, pair)?;
    let h = (w.total - rw) - (l.total - rl);
    let d = h - 1.0 / (2.0 * cfg.tau);
    let grad = combine(policy.vocab_size(), &w, 2.0 * d, &l, -2.0 * d);
    Ok(LossOutput {
        loss: d * d,
        grad,
        breakdown: breakdown_opt(&w, &l),
        active: true,
    })
}

/// CPO: `-log sigma(beta (log pi_w - log pi_l)) - lambda log pi_w` on raw
/// sequence log-probabilities.
pub fn loss_cpo(
    policy: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    require_positive(cfg.beta, "beta")?;
    require_non_negative(cfg.lambda, "lambda")?;
    let w = eval_seq(policy, pair, true)?;
    let l = eval_seq(policy, pair, false)?;
    let z = cfg.beta * (w.total - l.total);
    let g = neg_log_sigmoid_grad(z);
    let grad = combine(
        policy.vocab_size(),
        &w,
        g * cfg.beta - cfg.lambda,
        &l,
        -g * cfg.beta,
    );
    Ok(LossOutput {
        loss: neg_log_sigmoid(z) - cfg.lambda * w.total,
        grad,
        breakdown: breakdown_opt(&w, &l),
        active: true,
    })
}

/// ORPO: `-log p_w - lambda log sigma(log odds(p_w) - log odds(p_l))` with
/// `p = exp((1/|y|) log pi(y|x))` the length-normalized probability.
///
/// Requires p < 1 strictly on both sides; a probability-1 response is a
/// degenerate pair (the odds diverge).
pub fn loss_orpo(
    policy: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    require_non_negative(cfg.lambda, "lambda")?;
    let w = eval_seq(policy, pair, true)?;
    let l = eval_seq(policy, pair, false)?;
    let a = w.total / w.len;
    let b = l.total / l.len;
    if a == 0.0 || b == 0.0 {
        return Err(Error::degenerate(
            "a response has probability 1: the odds ratio diverges",
        ));
    }
    // 1 - e^x via expm1 keeps the odds accurate for x near 0.
    let one_minus_pw = -a.exp_m1();
    let one_minus_pl = -b.exp_m1();
    let q = (a - one_minus_pw.ln()) - (b - one_minus_pl.ln());
    let g = cfg.lambda * neg_log_sigmoid_grad(q);
    let dl_da = -1.0 + g / one_minus_pw;
    let dl_db = -g / one_minus_pl;
    let grad = combine(policy.vocab_size(), &w, dl_da / w.len, &l, dl_db / l.len);
    Ok(LossOutput {
        loss: -a + cfg.lambda * neg_log_sigmoid(q),
        grad,
        breakdown: breakdown_opt(&w, &l),
        active: true,
    })
}

/// R-DPO: DPO with the length margin `-(c |y_w| - c |y_l|)` inside the
/// sigmoid. Reduces exactly to DPO on equal-length pairs.
pub fn loss_rdpo(
    policy: &PolicyParams,
    reference: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    require_positive(cfg.beta, "beta")?;
    let w = eval_seq(policy, pair, true)?;
    let l = eval_seq(policy, pair, false)?;
    let (rw, rl) = ref_totals(reference, pair)?;
    let z = cfg.beta * ((w.total - rw) - (l.total - rl)) - (cfg.c * w.len - cfg.c * l.len);
    let g = neg_log_sigmoid_grad(z);
    let grad = combine(policy.vocab_size(), &w, g * cfg.beta, &l, -g * cfg.beta);
    Ok(LossOutput {
        loss: neg_log_sigmoid(z),
        grad,
        breakdown: breakdown_opt(&w, &l),
        active: true,
    })
}

/// SimPER: `-exp(a) + exp(b)` over length-normalized rewards (inverse
/// perplexities).
pub fn loss_simper(
    policy: &PolicyParams,
    pair: &PreferencePair,
    _cfg: &LossConfig,
) -> Result<LossOutput> {
    let w = eval_seq(policy, pair, true)?;
    let l = eval_seq(policy, pair, false)?;
    let a = w.total / w.len;
    let b = l.total / l.len;
    let grad = combine(
        policy.vocab_size(),
        &w,
        -a.exp() / w.len,
        &l,
        b.exp() / l.len,
    );
    Ok(LossOutput {
        loss: -a.exp() + b.exp(),
        grad,
        breakdown: breakdown_opt(&w, &l),
        active: true,
    })
}

/// Shared ratio-margin evaluation: rewards, breakdown, and the gradient
/// assembly for a given d loss / d m with the denominator frozen.
struct RatioEval {
    w: SeqEval,
    l: SeqEval,
    bd: RewardBreakdown,
}

fn ratio_eval(policy: &PolicyParams, pair: &PreferencePair) -> Result<RatioEval> {
    let w = eval_seq(policy, pair, true)?;
    let l = eval_seq(policy, pair, false)?;
    let bd = RewardBreakdown::from_rewards(w.total / w.len, l.total / l.len)?;
    Ok(RatioEval { w, l, bd })
}

fn ratio_grad(v: usize, re: &RatioEval, dloss_dm: f64) -> ParamTable {
    // m = (a - b) / denom with denom held constant, so
    // dm/dW = Gw / (|y_w| denom) - Gl / (|y_l| denom).
    combine(
        v,
        &re.w,
        dloss_dm / (re.bd.denom * re.w.len),
        &re.l,
        -dloss_dm / (re.bd.denom * re.l.len),
    )
}

fn xidpo_kernel(
    policy: &PolicyParams,
    pair: &PreferencePair,
    xi: f64,
    slope: f64,
) -> Result<LossOutput> {
    let re = ratio_eval(policy, pair)?;
    let u = xi - re.bd.m;
    let (loss, dloss_du) = leaky_hinge_sq(u, slope);
    let grad = ratio_grad(policy.vocab_size(), &re, -dloss_du);
    Ok(LossOutput {
        loss,
        grad,
        active: re.bd.m < xi,
        breakdown: Some(re.bd),
    })
}

/// xi-DPO: `[LeakyReLU(xi - m)]^2` with m the ratio reward margin and the
/// denominator |a + b| stop-gradiented. Samples with m >= xi fall into the
/// leaky branch, where loss and gradient are attenuated by the squared slope.
pub fn loss_xidpo(
    policy: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    let xi = cfg.require_xi()?;
    if !(0.0..1.0).contains(&cfg.leaky_slope) {
        return Err(Error::config(format!(
            "leaky_slope must lie in [0, 1), got {}",
            cfg.leaky_slope
        )));
    }
    xidpo_kernel(policy, pair, xi, cfg.leaky_slope)
}

/// xi-DPO without the LeakyReLU guard: plain `(m - xi)^2`. Samples whose
/// margin already exceeds xi are pulled back toward it.
pub fn loss_xidpo_noleaky(
    policy: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    let xi = cfg.require_xi()?;
    let re = ratio_eval(policy, pair)?;
    let d = re.bd.m - xi;
    let grad = ratio_grad(policy.vocab_size(), &re, 2.0 * d);
    Ok(LossOutput {
        loss: d * d,
        grad,
        active: true,
        breakdown: Some(re.bd),
    })
}

/// xi-DPO with a hard ReLU: identical to [`loss_xidpo`] with the slope
/// forced to 0 (exact zero loss and gradient for m > xi).
pub fn loss_xidpo_relu(
    policy: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    let xi = cfg.require_xi()?;
    xidpo_kernel(policy, pair, xi, 0.0)
}

/// Dispatches on `cfg.method`, checking reference-policy presence.
pub fn pair_loss(
    policy: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
    reference: Option<&PolicyParams>,
) -> Result<LossOutput> {
    cfg.validate()?;
    dispatch(policy, pair, cfg, reference)
}

fn dispatch(
    policy: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
    reference: Option<&PolicyParams>,
) -> Result<LossOutput> {
    let reference = if cfg.method.needs_reference() {
        Some(reference.ok_or_else(|| {
            Error::config(format!("method {} requires a reference policy", cfg.method))
        })?)
    } else {
        None
    };
    match cfg.method {
        Method::Dpo => loss_dpo(policy, reference.unwrap(), pair, cfg),
        Method::DpoLennorm => loss_dpo_lennorm(policy, reference.unwrap(), pair, cfg),
        Method::Ipo => loss_ipo(policy, reference.unwrap(), pair, cfg),
        Method::Simpo => loss_simpo(policy, pair, cfg),
        Method::Cpo => loss_cpo(policy, pair, cfg),
        Method::Orpo => loss_orpo(policy, pair, cfg),
        Method::Rdpo => loss_rdpo(policy, reference.unwrap(), pair, cfg),
        Method::Simper => loss_simper(policy, pair, cfg),
        Method::Xidpo => loss_xidpo(policy, pair, cfg),
        Method::XidpoNoleaky => loss_xidpo_noleaky(policy, pair, cfg),
        Method::XidpoRelu => loss_xidpo_relu(policy, pair, cfg),
    }
}

/// Aggregate diagnostics over one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BatchStats {
    pub n_pairs: usize,
    pub n_used: usize,
    /// Degenerate pairs skipped (counted, not averaged).
    pub skipped: usize,
    /// Mean length-normalized chosen reward over pairs with a breakdown.
    pub mean_chosen: f64,
    pub mean_rejected: f64,
    pub mean_margin: f64,
    pub active_fraction: f64,
}

/// Mean loss and mean gradient over a batch. Pairs are evaluated on the
/// worker pool but reduced in pair-index order, so parallel and serial runs
/// agree bitwise. Degenerate pairs are skipped and counted in the stats;
/// a batch in which every pair is degenerate is an error.
pub fn batch_loss(
    policy: &PolicyParams,
    batch: &[PreferencePair],
    cfg: &LossConfig,
    reference: Option<&PolicyParams>,
) -> Result<(f64, ParamTable, BatchStats)> {
    if batch.is_empty() {
        return Err(Error::contract("batch must be non-empty"));
    }
    cfg.validate()?;
    if cfg.method.needs_reference() && reference.is_none() {
        return Err(Error::config(format!(
            "method {} requires a reference policy",
            cfg.method
        )));
    }

    let outputs: Vec<Result<LossOutput>> = threads::pool().install(|| {
        batch
            .par_iter()
            .map(|pair| dispatch(policy, pair, cfg, reference))
            .collect()
    });

    let v = policy.vocab_size();
    let mut grad_sum = ParamTable::zeros(v);
    let mut loss_sum = 0.0;
    let mut n_used = 0usize;
    let mut skipped = 0usize;
    let mut active = 0usize;
    let mut a_sum = 0.0;
    let mut b_sum = 0.0;
    let mut m_sum = 0.0;
    let mut n_breakdown = 0usize;

    for out in outputs {
        match out {
            Ok(o) => {
                loss_sum += o.loss;
                grad_sum.add_scaled(&o.grad, 1.0);
                n_used += 1;
                if o.active {
                    active += 1;
                }
                if let Some(bd) = o.breakdown {
                    a_sum += bd.a;
                    b_sum += bd.b;
                    m_sum += bd.m;
                    n_breakdown += 1;
                }
            }
            Err(Error::DegeneratePair(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }

    if n_used == 0 {
        return Err(Error::degenerate("every pair in the batch is degenerate"));
    }

    let n = n_used as f64;
    grad_sum.scale(1.0 / n);
    let nb = n_breakdown as f64;
    let stats = BatchStats {
        n_pairs: batch.len(),
        n_used,
        skipped,
        mean_chosen: if n_breakdown > 0 { a_sum / nb } else { f64::NAN },
        mean_rejected: if n_breakdown > 0 { b_sum / nb } else { f64::NAN },
        mean_margin: if n_breakdown > 0 { m_sum / nb } else { f64::NAN },
        active_fraction: active as f64 / n,
    };
    Ok((loss_sum / n, grad_sum, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::implied_gamma;
    use crate::testutil::{level_policy, rand_pair, rand_policy, seq};

    const LN2: f64 = std::f64::consts::LN_2;

    fn single_token_pair() -> PreferencePair {
        PreferencePair::new(seq(&[0]), seq(&[0]), seq(&[1]))
    }

    #[test]
    fn sigmoid_helpers() {
        assert!((neg_log_sigmoid(0.0) - LN2).abs() < 1e-15);
        assert!((neg_log_sigmoid(3.0) - 0.048_587_351_573_741_96).abs() < 1e-12);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        for z in [-30.0, -5.0, -0.3, 0.0, 0.7, 12.0, 40.0] {
            // Same quantity through an independent route: -(1 - sigma(z)) == -sigma(-z).
            let lhs = neg_log_sigmoid_grad(z);
            let rhs = -sigmoid(-z);
            assert!((lhs - rhs).abs() < 1e-12, "z={z}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn neg_log_sigmoid_grad_matches_finite_differences() {
        let h = 1e-6;
        for z in [-8.0, -2.0, -0.5, 0.0, 0.5, 2.0, 8.0] {
            let fd = (neg_log_sigmoid(z + h) - neg_log_sigmoid(z - h)) / (2.0 * h);
            let a = neg_log_sigmoid_grad(z);
            assert!((fd - a).abs() < 1e-6, "z={z}: fd {fd}, analytic {a}");
        }
    }

    #[test]
    fn leaky_hinge_branches() {
        let (v, d) = leaky_hinge_sq(0.15, 0.01);
        assert!((v - 0.0225).abs() < 1e-15);
        assert!((d - 0.3).abs() < 1e-15);
        let (v, d) = leaky_hinge_sq(-0.15, 0.01);
        assert!((v - 2.25e-6).abs() < 1e-18);
        assert!((d + 3.0e-5).abs() < 1e-15);
        let (v, d) = leaky_hinge_sq(0.0, 0.01);
        assert_eq!(v, 0.0);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn dpo_identical_policies_give_ln2() {
        let p = rand_policy(6, 4);
        let pair = rand_pair(6, 9);
        let cfg = LossConfig {
            method: Method::Dpo,
            beta: 0.7,
            ..LossConfig::default()
        };
        let out = loss_dpo(&p, &p, &pair, &cfg).unwrap();
        assert!((out.loss - LN2).abs() < 1e-12);
        // Argument 0: gradient factor is -(1 - 0.5) = -0.5, nonzero in general.
        assert!(out.grad.max_abs() > 0.0);
    }

    #[test]
    fn dpo_worked_argument_three() {
        // Single-token responses. Policy per-token log-probs: chosen -1,
        // rejected -3. Reference: chosen -2, rejected -1.
        // z = ((-1) - (-2)) - ((-3) - (-1)) = 3 at beta = 1.
        let p = level_policy(&[-1.0, -3.0]);
        let r = level_policy(&[-2.0, -1.0]);
        let cfg = LossConfig {
            method: Method::Dpo,
            beta: 1.0,
            ..LossConfig::default()
        };
        let out = loss_dpo(&p, &r, &single_token_pair(), &cfg).unwrap();
        assert!((out.loss - 0.048_587_351_573_741_96).abs() < 1e-9, "{}", out.loss);
    }

    #[test]
    fn dpo_lennorm_equals_simpo_with_implied_gamma() {
        for trial in 0..100u64 {
            let p = rand_policy(8, 1000 + trial);
            let r = rand_policy(8, 2000 + trial);
            let pair = rand_pair(8, 3000 + trial);
            let beta = 0.5 + (trial % 5) as f64;
            let dl = loss_dpo_lennorm(
                &p,
                &r,
                &pair,
                &LossConfig {
                    method: Method::DpoLennorm,
                    beta,
                    ..LossConfig::default()
                },
            )
            .unwrap();
            let gamma = implied_gamma(&r, &pair, beta).unwrap();
            let sp = loss_simpo(
                &p,
                &pair,
                &LossConfig {
                    method: Method::Simpo,
                    beta,
                    gamma,
                    ..LossConfig::default()
                },
            )
            .unwrap();
            assert!(
                (dl.loss - sp.loss).abs() <= 1e-10,
                "trial {trial}: {} vs {}",
                dl.loss,
                sp.loss
            );
        }
    }

    #[test]
    fn simpo_worked_example() {
        // a = -1, b = -3, beta = 2, gamma = 1 -> z = 3.
        let p = level_policy(&[-1.0, -3.0]);
        let cfg = LossConfig {
            method: Method::Simpo,
            beta: 2.0,
            gamma: 1.0,
            ..LossConfig::default()
        };
        let out = loss_simpo(&p, &single_token_pair(), &cfg).unwrap();
        assert!((out.loss - 0.048_587_351_573_741_96).abs() < 1e-9);
        let bd = out.breakdown.unwrap();
        assert!((bd.a + 1.0).abs() < 1e-12);
        assert!((bd.b + 3.0).abs() < 1e-12);
    }

    #[test]
    fn simpo_zero_argument_when_gamma_matches_gap() {
        // gamma = beta (a - b) -> z = 0 -> ln 2.
        let p = level_policy(&[-1.0, -3.0]);
        let cfg = LossConfig {
            method: Method::Simpo,
            beta: 2.0,
            gamma: 4.0,
            ..LossConfig::default()
        };
        let out = loss_simpo(&p, &single_token_pair(), &cfg).unwrap();
        assert!((out.loss - LN2).abs() < 1e-12);
    }

    #[test]
    fn ipo_identical_policies() {
        let p = rand_policy(5, 17);
        let pair = rand_pair(5, 18);
        let cfg = LossConfig {
            method: Method::Ipo,
            tau: 0.5,
            ..LossConfig::default()
        };
        let out = loss_ipo(&p, &p, &pair, &cfg).unwrap();
        assert!((out.loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ipo_zero_at_exact_margin() {
        // h = (Lw - Rw) - (Ll - Rl) = 1 = 1/(2 tau) at tau = 0.5.
        let p = level_policy(&[-1.0, -1.0]);
        let r = level_policy(&[-2.0, -1.0]);
        let cfg = LossConfig {
            method: Method::Ipo,
            tau: 0.5,
            ..LossConfig::default()
        };
        let out = loss_ipo(&p, &r, &single_token_pair(), &cfg).unwrap();
        assert!(out.loss.abs() < 1e-18, "{}", out.loss);
    }

    #[test]
    fn cpo_worked_example() {
        // log pi_w = log pi_l = -2, beta = 0.1, lambda = 1 -> ln 2 + 2.
        let p = level_policy(&[-2.0, -2.0]);
        let cfg = LossConfig {
            method: Method::Cpo,
            beta: 0.1,
            lambda: 1.0,
            ..LossConfig::default()
        };
        let out = loss_cpo(&p, &single_token_pair(), &cfg).unwrap();
        assert!((out.loss - (LN2 + 2.0)).abs() < 1e-9, "{}", out.loss);
    }

    #[test]
    fn orpo_worked_example() {
        // Equal normalized log-probs a = b = -1, lambda = 0.5:
        // odds ratio 1 -> loss = 1 + 0.5 ln 2.
        let p = level_policy(&[-1.0, -1.0]);
        let cfg = LossConfig {
            method: Method::Orpo,
            lambda: 0.5,
            ..LossConfig::default()
        };
        let out = loss_orpo(&p, &single_token_pair(), &cfg).unwrap();
        assert!((out.loss - (1.0 + 0.5 * LN2)).abs() < 1e-9, "{}", out.loss);
    }

    #[test]
    fn orpo_probability_one_is_degenerate() {
        // A saturated row drives the chosen per-token log-prob to exactly 0.
        let cfg = crate::policy::PolicyConfig::new(2, 0).unwrap();
        let p = PolicyParams::from_weights(cfg, vec![vec![1e6, 0.0], vec![0.0, 0.0]]).unwrap();
        let pair = single_token_pair();
        let out = loss_orpo(&p, &pair, &LossConfig::for_method(Method::Orpo));
        assert!(matches!(out, Err(Error::DegeneratePair(_))));
    }

    #[test]
    fn rdpo_equal_lengths_reduces_to_dpo() {
        let p = rand_policy(6, 21);
        let r = rand_policy(6, 22);
        let pair = PreferencePair::new(seq(&[1]), seq(&[2, 4]), seq(&[0, 5]));
        let cfg = LossConfig {
            method: Method::Rdpo,
            beta: 1.2,
            c: 0.7,
            ..LossConfig::default()
        };
        let rd = loss_rdpo(&p, &r, &pair, &cfg).unwrap();
        let dp = loss_dpo(&p, &r, &pair, &cfg).unwrap();
        assert_eq!(rd.loss, dp.loss);
        assert_eq!(rd.grad, dp.grad);
    }

    #[test]
    fn simper_worked_examples() {
        let equal = level_policy(&[-1.0, -1.0]);
        let out = loss_simper(&equal, &single_token_pair(), &LossConfig::default()).unwrap();
        assert!(out.loss.abs() < 1e-12);

        let p = level_policy(&[-1.0, -3.0]);
        let out = loss_simper(&p, &single_token_pair(), &LossConfig::default()).unwrap();
        let expected = -(-1.0f64).exp() + (-3.0f64).exp();
        assert!((out.loss - expected).abs() < 1e-9);
        assert!((out.loss + 0.318_092).abs() < 1e-6);
    }

    fn xidpo_cfg(xi: f64) -> LossConfig {
        LossConfig {
            method: Method::Xidpo,
            xi: Some(xi),
            leaky_slope: 0.01,
            ..LossConfig::default()
        }
    }

    #[test]
    fn xidpo_active_branch_worked_example() {
        // a = -2, b = -3 -> m = 0.2; xi = 0.35 -> u = 0.15 -> loss 0.0225.
        let p = level_policy(&[-2.0, -3.0]);
        let out = loss_xidpo(&p, &single_token_pair(), &xidpo_cfg(0.35)).unwrap();
        assert!((out.loss - 0.0225).abs() < 1e-9, "{}", out.loss);
        assert!(out.active);
    }

    #[test]
    fn xidpo_leaky_branch_worked_example() {
        // a = -1, b = -3 -> m = 0.5; xi = 0.35 -> u = -0.15 ->
        // LeakyReLU = -0.0015 -> loss = 2.25e-6.
        let p = level_policy(&[-1.0, -3.0]);
        let out = loss_xidpo(&p, &single_token_pair(), &xidpo_cfg(0.35)).unwrap();
        assert!((out.loss - 2.25e-6).abs() < 1e-12, "{}", out.loss);
        assert!(!out.active);
    }

    #[test]
    fn xidpo_zero_at_exact_margin() {
        // a = -1.3, b = -2.7 -> delta = 1.4, denom = 4 -> m = 0.35.
        let p = level_policy(&[-1.3, -2.7]);
        let out = loss_xidpo(&p, &single_token_pair(), &xidpo_cfg(0.35)).unwrap();
        assert!(out.loss.abs() < 1e-18, "{}", out.loss);
        assert!(!out.active);
    }

    #[test]
    fn xidpo_rejects_bad_xi() {
        let p = level_policy(&[-1.0, -2.0]);
        for xi in [0.0, -0.2, 1.5] {
            let cfg = LossConfig {
                xi: Some(xi),
                ..xidpo_cfg(0.35)
            };
            assert!(matches!(
                loss_xidpo(&p, &single_token_pair(), &cfg),
                Err(Error::Config(_))
            ));
        }
        let cfg = LossConfig {
            xi: None,
            ..xidpo_cfg(0.35)
        };
        assert!(matches!(
            loss_xidpo(&p, &single_token_pair(), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn xidpo_degenerate_denominator() {
        // Row 1 saturated toward token 1: any run of 1s after prompt [1] has
        // probability exactly 1, so both rewards are 0 and |a + b| vanishes.
        let cfg = crate::policy::PolicyConfig::new(3, 0).unwrap();
        let p = PolicyParams::from_weights(
            cfg,
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.0, 1e6, 0.0],
                vec![0.0, 0.0, 0.0],
            ],
        )
        .unwrap();
        let pair = PreferencePair::new(seq(&[1]), seq(&[1, 1]), seq(&[1, 1, 1]));
        let out = loss_xidpo(&p, &pair, &xidpo_cfg(0.35));
        assert!(matches!(out, Err(Error::DegeneratePair(_))), "{out:?}");
    }

    #[test]
    fn noleaky_worked_example_and_pullback_sign() {
        // m = 0.5, xi = 0.35 -> loss = 0.0225 with full gradient.
        let p = level_policy(&[-1.0, -3.0]);
        let cfg = LossConfig {
            method: Method::XidpoNoleaky,
            xi: Some(0.35),
            ..LossConfig::default()
        };
        let pair = single_token_pair();
        let out = loss_xidpo_noleaky(&p, &pair, &cfg).unwrap();
        assert!((out.loss - 0.0225).abs() < 1e-9);
        assert!(out.active);

        // Gradient descent on this sample must decrease the chosen reward
        // (the pull-back effect): step along -grad and recheck a.
        let a_before = crate::rewards::length_norm_reward(&p, &pair.prompt, &pair.chosen).unwrap();
        let mut stepped = p.clone();
        stepped.weights_mut().add_scaled(&out.grad, -0.05);
        let a_after =
            crate::rewards::length_norm_reward(&stepped, &pair.prompt, &pair.chosen).unwrap();
        assert!(
            a_after < a_before,
            "chosen reward should fall: {a_before} -> {a_after}"
        );
    }

    #[test]
    fn xidpo_zero_slope_is_bitwise_relu() {
        for trial in 0..20u64 {
            let p = rand_policy(8, 500 + trial);
            let pair = rand_pair(8, 600 + trial);
            let xi = 0.05 + 0.09 * (trial as f64 % 10.0);
            let zero_slope = LossConfig {
                method: Method::Xidpo,
                xi: Some(xi),
                leaky_slope: 0.0,
                ..LossConfig::default()
            };
            let relu_cfg = LossConfig {
                method: Method::XidpoRelu,
                xi: Some(xi),
                ..LossConfig::default()
            };
            let a = loss_xidpo(&p, &pair, &zero_slope).unwrap();
            let b = loss_xidpo_relu(&p, &pair, &relu_cfg).unwrap();
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert_eq!(a.grad, b.grad);
            assert_eq!(a.active, b.active);
        }
    }

    #[test]
    fn relu_dead_zone_is_exactly_zero() {
        // m = 0.5 > xi = 0.35: hard ReLU gives zero loss and zero gradient.
        let p = level_policy(&[-1.0, -3.0]);
        let cfg = LossConfig {
            method: Method::XidpoRelu,
            xi: Some(0.35),
            ..LossConfig::default()
        };
        let out = loss_xidpo_relu(&p, &single_token_pair(), &cfg).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad.max_abs(), 0.0);
        assert!(!out.active);
    }

    #[test]
    fn relu_active_branch_equals_xidpo() {
        let p = level_policy(&[-2.0, -3.0]); // m = 0.2 < 0.35
        let a = loss_xidpo(&p, &single_token_pair(), &xidpo_cfg(0.35)).unwrap();
        let b = loss_xidpo_relu(
            &p,
            &single_token_pair(),
            &LossConfig {
                method: Method::XidpoRelu,
                xi: Some(0.35),
                ..LossConfig::default()
            },
        )
        .unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.grad, b.grad);
    }

    #[test]
    fn attenuation_ratio_is_squared_slope() {
        // Mirrored samples m = xi +- delta with identical frozen denominators:
        // rows 0 and 1 realize (a, b) pairs with a + b = -4 and
        // a - b = 4 m. xi = 0.35, delta = 0.1.
        let xi = 0.35;
        let delta = 0.1;
        let alpha = 0.01;
        let mk = |m: f64| {
            let a = (-4.0 + 4.0 * m) / 2.0;
            let b = (-4.0 - 4.0 * m) / 2.0;
            level_policy(&[a, b])
        };
        let pair = single_token_pair();
        let cfg = LossConfig {
            method: Method::Xidpo,
            xi: Some(xi),
            leaky_slope: alpha,
            ..LossConfig::default()
        };
        let below = loss_xidpo(&mk(xi - delta), &pair, &cfg).unwrap();
        let above = loss_xidpo(&mk(xi + delta), &pair, &cfg).unwrap();
        assert!(below.active);
        assert!(!above.active);
        let ratio = above.grad.max_abs() / below.grad.max_abs();
        assert!(
            (ratio - alpha * alpha).abs() < 1e-8,
            "attenuation ratio {ratio}"
        );

        // Same contract at the d loss/d m level.
        let (_, d_below) = leaky_hinge_sq(delta, alpha);
        let (_, d_above) = leaky_hinge_sq(-delta, alpha);
        assert!((d_above.abs() / d_below.abs() - alpha * alpha).abs() < 1e-12);
    }

    #[test]
    fn stop_gradient_discriminates() {
        // The analytic gradient matches finite differences of the
        // frozen-denominator forward, and differs from finite differences of
        // the fully recomputed forward.
        let p = rand_policy(4, 77);
        let pair = rand_pair(4, 78);
        let cfg = xidpo_cfg(0.35);
        let out = loss_xidpo(&p, &pair, &cfg).unwrap();
        let denom0 = out.breakdown.unwrap().denom;

        let frozen_forward = |params: &PolicyParams| -> f64 {
            let a = crate::rewards::length_norm_reward(params, &pair.prompt, &pair.chosen).unwrap();
            let b =
                crate::rewards::length_norm_reward(params, &pair.prompt, &pair.rejected).unwrap();
            let m = (a - b) / denom0;
            leaky_hinge_sq(0.35 - m, 0.01).0
        };
        let full_forward =
            |params: &PolicyParams| -> f64 { loss_xidpo(params, &pair, &cfg).unwrap().loss };

        let h = 1e-5;
        let mut max_frozen = 0.0f64;
        let mut max_full = 0.0f64;
        for r in 0..4 {
            for c in 0..4 {
                let mut plus = p.clone();
                plus.weights_mut().add_at(r, c, h);
                let mut minus = p.clone();
                minus.weights_mut().add_at(r, c, -h);
                let fd_frozen = (frozen_forward(&plus) - frozen_forward(&minus)) / (2.0 * h);
                let fd_full = (full_forward(&plus) - full_forward(&minus)) / (2.0 * h);
                let a = out.grad.get(r, c);
                max_frozen = max_frozen.max((a - fd_frozen).abs());
                max_full = max_full.max((a - fd_full).abs());
            }
        }
        let scale = out.grad.max_abs().max(1e-12);
        assert!(
            max_frozen / scale < 1e-4,
            "frozen mismatch {max_frozen} at scale {scale}"
        );
        assert!(
            max_full / scale > 1e-2,
            "full finite differences unexpectedly agree: {max_full} at scale {scale}"
        );
    }

    #[test]
    fn batch_loss_matches_per_pair() {
        let p = rand_policy(6, 31);
        let pair = rand_pair(6, 32);
        let cfg = LossConfig {
            method: Method::Simpo,
            beta: 2.0,
            gamma: 0.5,
            ..LossConfig::default()
        };
        let single = loss_simpo(&p, &pair, &cfg).unwrap();
        let (loss, grad, stats) = batch_loss(&p, &[pair.clone()], &cfg, None).unwrap();
        assert_eq!(loss, single.loss);
        assert_eq!(grad, single.grad);
        assert_eq!(stats.n_used, 1);

        let (loss2, _, _) = batch_loss(&p, &[pair.clone(), pair.clone()], &cfg, None).unwrap();
        assert!((loss2 - single.loss).abs() < 1e-15);
    }

    #[test]
    fn batch_loss_matches_serial_fold() {
        let p = rand_policy(8, 41);
        let pairs: Vec<PreferencePair> = (0..33).map(|i| rand_pair(8, 4100 + i)).collect();
        let cfg = xidpo_cfg(0.3);
        let (loss, grad, stats) = batch_loss(&p, &pairs, &cfg, None).unwrap();

        let mut loss_sum = 0.0;
        let mut grad_sum = ParamTable::zeros(8);
        let mut active = 0usize;
        for pair in &pairs {
            let o = loss_xidpo(&p, pair, &cfg).unwrap();
            loss_sum += o.loss;
            grad_sum.add_scaled(&o.grad, 1.0);
            if o.active {
                active += 1;
            }
        }
        let n = pairs.len() as f64;
        grad_sum.scale(1.0 / n);
        assert_eq!(loss, loss_sum / n);
        assert_eq!(grad, grad_sum);
        assert_eq!(stats.active_fraction, active as f64 / n);
        assert_eq!(stats.skipped, 0);
    }

    #[test]
    fn batch_loss_contract_errors() {
        let p = rand_policy(4, 51);
        let cfg = LossConfig {
            method: Method::Dpo,
            ..LossConfig::default()
        };
        assert!(matches!(
            batch_loss(&p, &[], &cfg, Some(&p)),
            Err(Error::Contract(_))
        ));
        let pair = rand_pair(4, 52);
        assert!(matches!(
            batch_loss(&p, &[pair], &cfg, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn method_names_and_parsing() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("kto".parse::<Method>().is_err());
    }
}
