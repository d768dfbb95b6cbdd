//! Deterministic gradient-descent training over preference batches.
//!
//! Batches are drawn without replacement, reshuffled each epoch from the
//! seed. Rewards are logged on a fixed held-out slice (the first
//! min(512, n) pairs) so curves are smooth and comparable across methods.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::policy::{ParamTable, PolicyParams};
use crate::rewards;

fn default_warmup_fraction() -> f64 {
    0.10
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

/// Learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Linear ramp over the first `warmup_fraction` of steps, then a cosine
    /// decay to (near) zero.
    CosineWithWarmup {
        #[serde(default = "default_warmup_fraction")]
        warmup_fraction: f64,
    },
}

impl Schedule {
    pub fn cosine_default() -> Self {
        Schedule::CosineWithWarmup {
            warmup_fraction: default_warmup_fraction(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 100,
            batch_size: 128,
            // Desk-scale default; full-scale runs use far smaller rates.
            lr: 1e-2,
            schedule: Schedule::cosine_default(),
            optimizer: OptimizerKind::adam_default(),
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be >= 1"));
        }
        if let Schedule::CosineWithWarmup { warmup_fraction } = self.schedule {
            if !(0.0..1.0).contains(&warmup_fraction) {
                return Err(Error::config(format!(
                    "warmup_fraction must lie in [0, 1), got {warmup_fraction}"
                )));
            }
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::config(format!(
                    "invalid adam coefficients ({beta1}, {beta2}, {eps})"
                )));
            }
        }
        Ok(())
    }
}

/// Learning rate at a 0-based step index.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    match cfg.schedule {
        Schedule::Constant => cfg.lr,
        Schedule::CosineWithWarmup { warmup_fraction } => {
            let warmup = (warmup_fraction * cfg.steps as f64).ceil() as usize;
            if step < warmup {
                // Ramp start: lr / warmup at step 0.
                cfg.lr * (step + 1) as f64 / warmup as f64
            } else if cfg.steps > warmup {
                let t = (step - warmup) as f64 / (cfg.steps - warmup) as f64;
                cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            } else {
                cfg.lr
            }
        }
    }
}

/// One logged checkpoint. Rewards and margin come from the held-out eval
/// slice; the loss is the eval-slice mean loss under the current parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub chosen_reward: f64,
    pub rejected_reward: f64,
    pub mean_margin: f64,
    pub active_fraction: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Steps whose entire batch was degenerate (skipped without an update).
    pub skipped_steps: usize,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str =
        "step,loss,chosen_reward,rejected_reward,mean_m,active_frac,lr";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step,
                r.loss,
                r.chosen_reward,
                r.rejected_reward,
                r.mean_margin,
                r.active_fraction,
                r.lr
            );
        }
        out
    }
}

/// Mean rewards over a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardSummary {
    pub mean_chosen: f64,
    pub mean_rejected: f64,
    pub mean_margin: f64,
}

/// Means of the length-normalized rewards and ratio margins over all
/// non-degenerate pairs.
pub fn eval_rewards(policy: &PolicyParams, dataset: &Dataset) -> Result<RewardSummary> {
    if dataset.is_empty() {
        return Err(Error::contract("dataset must be non-empty"));
    }
    let mut a_sum = 0.0;
    let mut b_sum = 0.0;
    let mut m_sum = 0.0;
    let mut n = 0usize;
    for pair in dataset.pairs() {
        match rewards::pair_breakdown(policy, pair) {
            Ok(bd) => {
                a_sum += bd.a;
                b_sum += bd.b;
                m_sum += bd.m;
                n += 1;
            }
            Err(Error::DegeneratePair(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Err(Error::degenerate("every pair in the dataset is degenerate"));
    }
    let nf = n as f64;
    Ok(RewardSummary {
        mean_chosen: a_sum / nf,
        mean_rejected: b_sum / nf,
        mean_margin: m_sum / nf,
    })
}

struct AdamState {
    m: ParamTable,
    v: ParamTable,
    t: u32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    fn new(kind: OptimizerKind, vocab: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam { beta1, beta2, eps } => Optimizer::Adam(AdamState {
                m: ParamTable::zeros(vocab),
                v: ParamTable::zeros(vocab),
                t: 0,
                beta1,
                beta2,
                eps,
            }),
        }
    }

    fn step(&mut self, params: &mut PolicyParams, grad: &ParamTable, lr: f64) {
        match self {
            Optimizer::Sgd => params.weights_mut().add_scaled(grad, -lr),
            Optimizer::Adam(state) => {
                state.t += 1;
                let bc1 = 1.0 - state.beta1.powi(state.t as i32);
                let bc2 = 1.0 - state.beta2.powi(state.t as i32);
                let v = params.vocab_size();
                for r in 0..v {
                    for c in 0..v {
                        let g = grad.get(r, c);
                        let m = state.beta1 * state.m.get(r, c) + (1.0 - state.beta1) * g;
                        let vv = state.beta2 * state.v.get(r, c) + (1.0 - state.beta2) * g * g;
                        state.m.set(r, c, m);
                        state.v.set(r, c, vv);
                        let m_hat = m / bc1;
                        let v_hat = vv / bc2;
                        params
                            .weights_mut()
                            .add_at(r, c, -lr * m_hat / (v_hat.sqrt() + state.eps));
                    }
                }
            }
        }
    }
}

/// Runs `steps` optimizer updates and returns the trained parameters with
/// the log. Deterministic given the seed. A reference policy must be
/// supplied iff the method requires one.
pub fn train(
    policy: &PolicyParams,
    dataset: &Dataset,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    reference: Option<&PolicyParams>,
) -> Result<(PolicyParams, TrainLog)> {
    train_cfg.validate()?;
    loss_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("dataset must be non-empty"));
    }
    if loss_cfg.method.needs_reference() && reference.is_none() {
        return Err(Error::config(format!(
            "method {} requires a reference policy",
            loss_cfg.method
        )));
    }

    let mut params = policy.clone();
    let mut log = TrainLog::default();
    if train_cfg.steps == 0 {
        return Ok((params, log));
    }

    let n = dataset.len();
    let eval_slice = &dataset.pairs()[..n.min(512)];
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut optimizer = Optimizer::new(train_cfg.optimizer, params.vocab_size());

    let record = |params: &PolicyParams, step: usize, lr: f64| -> Result<TrainRecord> {
        let (loss, _, stats) = losses::batch_loss(params, eval_slice, loss_cfg, reference)?;
        Ok(TrainRecord {
            step,
            loss,
            chosen_reward: stats.mean_chosen,
            rejected_reward: stats.mean_rejected,
            mean_margin: stats.mean_margin,
            active_fraction: stats.active_fraction,
            lr,
        })
    };

    log.records
        .push(record(&params, 0, learning_rate(train_cfg, 0))?);

    let mut order: Vec<usize> = (0..n).collect();
    let mut pos = n; // force a shuffle before the first batch
    for step in 1..=train_cfg.steps {
        if pos >= n {
            order.shuffle(&mut rng);
            pos = 0;
        }
        let end = (pos + train_cfg.batch_size).min(n);
        let batch: Vec<_> = order[pos..end]
            .iter()
            .map(|&i| dataset.pairs()[i].clone())
            .collect();
        pos = end;

        let lr = learning_rate(train_cfg, step - 1);
        match losses::batch_loss(&params, &batch, loss_cfg, reference) {
            Ok((_, grad, _)) => optimizer.step(&mut params, &grad, lr),
            Err(Error::DegeneratePair(_)) => {
                log.skipped_steps += 1;
            }
            Err(e) => return Err(e),
        }

        if step % train_cfg.log_every == 0 || step == train_cfg.steps {
            log.records.push(record(&params, step, lr)?);
        }
    }

    Ok((params, log))
}
