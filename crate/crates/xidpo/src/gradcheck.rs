//! Central finite-difference verification of every loss gradient.
//!
//! For each randomized instance the analytic gradient is compared entrywise
//! against `(f(w+h) - f(w-h)) / 2h` of the loss forward value. For the
//! ratio-margin family the margin denominator is frozen at its base-point
//! value inside the difference quotient, matching the loss's stop-gradient
//! contract; the ratio-eval tests in `losses` separately confirm that the
//! unfrozen quotient disagrees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{PreferencePair, TokenSeq};
use crate::error::{Error, Result};
use crate::losses::{self, leaky_hinge_sq, LossConfig, Method};
use crate::policy::{PolicyConfig, PolicyParams};
use crate::rewards;

/// Settings for one verification sweep.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckSettings {
    pub trials: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Central-difference step.
    pub fd_step: f64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            trials: 20,
            vocab_size: 8,
            seed: 0,
            fd_step: 1e-4,
        }
    }
}

/// Worst relative error observed for one method.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MethodReport {
    pub method: Method,
    pub max_rel_err: f64,
    pub trials: usize,
}

fn rand_seq<R: Rng>(rng: &mut R, vocab: u32, min_len: usize, max_len: usize) -> TokenSeq {
    let len = rng.random_range(min_len..=max_len);
    TokenSeq::new((0..len).map(|_| rng.random_range(0..vocab)).collect())
}

fn rand_instance<R: Rng>(rng: &mut R, vocab: usize) -> PreferencePair {
    let v = vocab as u32;
    let prompt = rand_seq(rng, v, 0, 2);
    loop {
        let chosen = rand_seq(rng, v, 1, 5);
        let rejected = rand_seq(rng, v, 1, 5);
        if chosen != rejected {
            return PreferencePair::new(prompt, chosen, rejected);
        }
    }
}

fn rand_cfg<R: Rng>(
    rng: &mut R,
    method: Method,
    policy: &PolicyParams,
    pair: &PreferencePair,
) -> Result<LossConfig> {
    let mut cfg = LossConfig::for_method(method);
    cfg.beta = rng.random_range(0.5..2.5);
    cfg.gamma = rng.random_range(-1.0..1.0);
    cfg.tau = rng.random_range(0.25..1.0);
    cfg.lambda = rng.random_range(0.1..1.0);
    cfg.c = rng.random_range(-0.05..0.05);
    cfg.leaky_slope = 0.01;
    if method.is_ratio_margin() {
        // Keep xi away from the activation kink at m: a two-sided difference
        // spanning the nondifferentiable point would not measure the
        // subgradient the loss reports.
        let m = rewards::pair_breakdown(policy, pair)?.m;
        let xi = loop {
            let candidate: f64 = rng.random_range(0.05..=1.0);
            if (candidate - m).abs() >= 0.05 {
                break candidate;
            }
        };
        cfg.xi = Some(xi);
    }
    Ok(cfg)
}

/// Loss forward value with the ratio-margin denominator frozen at
/// `denom0` (ratio-margin methods) or the plain forward value (others).
fn forward(
    params: &PolicyParams,
    pair: &PreferencePair,
    cfg: &LossConfig,
    reference: Option<&PolicyParams>,
    denom0: f64,
) -> Result<f64> {
    if cfg.method.is_ratio_margin() {
        let a = rewards::length_norm_reward(params, &pair.prompt, &pair.chosen)?;
        let b = rewards::length_norm_reward(params, &pair.prompt, &pair.rejected)?;
        let m = (a - b) / denom0;
        let xi = cfg.require_xi()?;
        let loss = match cfg.method {
            Method::Xidpo => leaky_hinge_sq(xi - m, cfg.leaky_slope).0,
            Method::XidpoRelu => leaky_hinge_sq(xi - m, 0.0).0,
            Method::XidpoNoleaky => (m - xi) * (m - xi),
            _ => unreachable!(),
        };
        Ok(loss)
    } else {
        Ok(losses::pair_loss(params, pair, cfg, reference)?.loss)
    }
}

/// Verifies one method over randomized instances; returns the worst
/// entrywise relative error between the analytic gradient and central
/// finite differences.
pub fn check_method(method: Method, settings: &GradCheckSettings) -> Result<MethodReport> {
    if settings.trials == 0 {
        return Err(Error::contract("trials must be >= 1"));
    }
    if settings.vocab_size < 2 {
        return Err(Error::contract("vocab_size must be >= 2"));
    }
    if !(settings.fd_step > 0.0) {
        return Err(Error::contract("fd_step must be positive"));
    }

    let v = settings.vocab_size;
    let config = PolicyConfig::new(v, 0)?;
    let method_index = Method::ALL.iter().position(|&m| m == method).unwrap() as u64;
    let mut max_rel_err = 0.0f64;

    for trial in 0..settings.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream((method_index << 32) | trial as u64);

        let policy = PolicyParams::random(config, 1.0, rng.random());
        let reference = PolicyParams::random(config, 1.0, rng.random());
        let reference = method.needs_reference().then_some(&reference);
        let pair = rand_instance(&mut rng, v);
        let cfg = rand_cfg(&mut rng, method, &policy, &pair)?;

        let out = losses::pair_loss(&policy, &pair, &cfg, reference)?;
        let denom0 = out.breakdown.map(|bd| bd.denom).unwrap_or(f64::NAN);

        let h = settings.fd_step;
        for r in 0..v {
            for c in 0..v {
                let mut plus = policy.clone();
                plus.weights_mut().add_at(r, c, h);
                let mut minus = policy.clone();
                minus.weights_mut().add_at(r, c, -h);
                let fp = forward(&plus, &pair, &cfg, reference, denom0)?;
                let fm = forward(&minus, &pair, &cfg, reference, denom0)?;
                let fd = (fp - fm) / (2.0 * h);
                let analytic = out.grad.get(r, c);
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                max_rel_err = max_rel_err.max(rel);
            }
        }
    }

    Ok(MethodReport {
        method,
        max_rel_err,
        trials: settings.trials,
    })
}

/// Runs [`check_method`] for each requested method.
pub fn check_methods(
    methods: &[Method],
    settings: &GradCheckSettings,
) -> Result<Vec<MethodReport>> {
    methods
        .iter()
        .map(|&m| check_method(m, settings))
        .collect()
}
