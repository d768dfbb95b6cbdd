//! Bigram softmax language model.
//!
//! The policy is a V x V table of unconstrained logits: row = previous token,
//! column = next token. It provides exact sequence log-probabilities, exact
//! analytic gradients with respect to the logits, and ancestral sampling.
//! Every loss in this crate differentiates through [`sequence_logprob`] via
//! [`logprob_grad`].

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};

/// Shape of a policy: vocabulary size and the begin-of-sequence context id
/// used when a response starts with an empty prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub bos_id: u32,
}

impl PolicyConfig {
    pub fn new(vocab_size: usize, bos_id: u32) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::contract(format!(
                "vocab_size must be >= 2, got {vocab_size}"
            )));
        }
        if bos_id as usize >= vocab_size {
            return Err(Error::contract(format!(
                "bos_id {bos_id} out of range for vocab_size {vocab_size}"
            )));
        }
        Ok(PolicyConfig { vocab_size, bos_id })
    }
}

/// V x V table of reals indexed by (previous token, next token).
///
/// Holds the policy logits, and doubles as the layout for gradients with
/// respect to them.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ParamTable {
    rows: Vec<Vec<f64>>,
}

impl ParamTable {
    pub fn zeros(vocab_size: usize) -> Self {
        ParamTable {
            rows: vec![vec![0.0; vocab_size]; vocab_size],
        }
    }

    /// Builds a table from explicit rows, validating that it is square and
    /// every entry is finite.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let v = rows.len();
        if v < 2 {
            return Err(Error::validation(format!(
                "weight table must have >= 2 rows, got {v}"
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != v {
                return Err(Error::validation(format!(
                    "weight row {i} has length {}, expected {v}",
                    row.len()
                )));
            }
            if let Some(x) = row.iter().find(|x| !x.is_finite()) {
                return Err(Error::validation(format!(
                    "weight row {i} contains non-finite entry {x}"
                )));
            }
        }
        Ok(ParamTable { rows })
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.rows[r][c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.rows[r][c] = value;
    }

    pub fn add_at(&mut self, r: usize, c: usize, delta: f64) {
        self.rows[r][c] += delta;
    }

    /// self += scale * other (entrywise).
    pub fn add_scaled(&mut self, other: &ParamTable, scale: f64) {
        for (dst, src) in self.rows.iter_mut().zip(other.rows.iter()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for row in &mut self.rows {
            for x in row {
                *x *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &x)| ((r, c), x)))
    }
}

/// Policy parameters: a config plus the logit table.
///
/// Serializes as `{"vocab_size":V,"bos_id":b,"weights":[[...],...]}`, the
/// checkpoint format used by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyParamsRepr", into = "PolicyParamsRepr")]
pub struct PolicyParams {
    config: PolicyConfig,
    weights: ParamTable,
}

#[derive(Serialize, Deserialize)]
struct PolicyParamsRepr {
    vocab_size: usize,
    bos_id: u32,
    weights: Vec<Vec<f64>>,
}

impl TryFrom<PolicyParamsRepr> for PolicyParams {
    type Error = Error;

    fn try_from(repr: PolicyParamsRepr) -> Result<Self> {
        let config = PolicyConfig::new(repr.vocab_size, repr.bos_id)?;
        let weights = ParamTable::from_rows(repr.weights)?;
        if weights.vocab_size() != config.vocab_size {
            return Err(Error::validation(format!(
                "weight table is {}x{} but vocab_size is {}",
                weights.vocab_size(),
                weights.vocab_size(),
                config.vocab_size
            )));
        }
        Ok(PolicyParams { config, weights })
    }
}

impl From<PolicyParams> for PolicyParamsRepr {
    fn from(p: PolicyParams) -> Self {
        PolicyParamsRepr {
            vocab_size: p.config.vocab_size,
            bos_id: p.config.bos_id,
            weights: p.weights.rows,
        }
    }
}

impl PolicyParams {
    /// All-zero logits: the uniform policy.
    pub fn uniform(config: PolicyConfig) -> Self {
        PolicyParams {
            weights: ParamTable::zeros(config.vocab_size),
            config,
        }
    }

    /// Logits drawn i.i.d. from N(0, sd^2), deterministic in the seed.
    pub fn random(config: PolicyConfig, sd: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = ParamTable::zeros(config.vocab_size);
        for r in 0..config.vocab_size {
            for c in 0..config.vocab_size {
                let z: f64 = StandardNormal.sample(&mut rng);
                weights.set(r, c, sd * z);
            }
        }
        PolicyParams { config, weights }
    }

    pub fn from_weights(config: PolicyConfig, rows: Vec<Vec<f64>>) -> Result<Self> {
        PolicyParams::try_from(PolicyParamsRepr {
            vocab_size: config.vocab_size,
            bos_id: config.bos_id,
            weights: rows,
        })
    }

    pub fn config(&self) -> PolicyConfig {
        self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn weights(&self) -> &ParamTable {
        &self.weights
    }

    /// Mutable access for optimizer updates. Entries must stay finite.
    pub fn weights_mut(&mut self) -> &mut ParamTable {
        &mut self.weights
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::validation(format!("checkpoint serialization failed: {e}")))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| {
            Error::validation(format!(
                "invalid policy checkpoint {}: {e}",
                path.as_ref().display()
            ))
        })
    }
}

/// Exact log-probability of a response, factored per token.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbResult {
    /// Sum of the per-token log-probabilities; always <= 0.
    pub total: f64,
    /// One entry per response token, each <= 0.
    pub per_token: Vec<f64>,
}

impl LogProbResult {
    pub fn length(&self) -> usize {
        self.per_token.len()
    }
}

/// Numerically stable log-softmax (max-subtraction).
fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|&x| x - log_z).collect()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn check_ids(seq: &TokenSeq, vocab_size: usize, what: &str) -> Result<()> {
    if let Some(&id) = seq.tokens().iter().find(|&&id| id as usize >= vocab_size) {
        return Err(Error::contract(format!(
            "{what} token id {id} out of range for vocab_size {vocab_size}"
        )));
    }
    Ok(())
}

/// Yields the bigram context for each response position: the last prompt
/// token (or bos when the prompt is empty) for position 0, then the previous
/// response token.
fn contexts<'a>(
    params: &PolicyParams,
    prompt: &'a TokenSeq,
    response: &'a TokenSeq,
) -> impl Iterator<Item = (usize, u32)> + 'a {
    let first = prompt
        .tokens()
        .last()
        .copied()
        .unwrap_or(params.config.bos_id);
    let ctxs = std::iter::once(first).chain(response.tokens().iter().copied());
    ctxs.zip(response.tokens().iter().copied())
        .map(|(ctx, target)| (ctx as usize, target))
}

/// Exact sequence log-probability under the bigram policy.
///
/// The first response token conditions on the last prompt token (or bos_id
/// when the prompt is empty); every later token conditions on its
/// predecessor.
pub fn sequence_logprob(
    params: &PolicyParams,
    prompt: &TokenSeq,
    response: &TokenSeq,
) -> Result<LogProbResult> {
    if response.is_empty() {
        return Err(Error::contract("response must be non-empty"));
    }
    let v = params.vocab_size();
    check_ids(prompt, v, "prompt")?;
    check_ids(response, v, "response")?;

    let mut per_token = Vec::with_capacity(response.len());
    for (ctx, target) in contexts(params, prompt, response) {
        let logp = log_softmax(params.weights.row(ctx));
        per_token.push(logp[target as usize]);
    }
    let total = per_token.iter().sum();
    Ok(LogProbResult { total, per_token })
}

/// Exact gradient of `sequence_logprob(...).total` with respect to the
/// weights: for each position with context c and target t, row c receives
/// onehot(t) - softmax(weights[c]).
pub fn logprob_grad(
    params: &PolicyParams,
    prompt: &TokenSeq,
    response: &TokenSeq,
) -> Result<ParamTable> {
    if response.is_empty() {
        return Err(Error::contract("response must be non-empty"));
    }
    let v = params.vocab_size();
    check_ids(prompt, v, "prompt")?;
    check_ids(response, v, "response")?;

    let mut grad = ParamTable::zeros(v);
    for (ctx, target) in contexts(params, prompt, response) {
        let probs = softmax(params.weights.row(ctx));
        for (c, p) in probs.iter().enumerate() {
            grad.add_at(ctx, c, -p);
        }
        grad.add_at(ctx, target as usize, 1.0);
    }
    Ok(grad)
}

/// Ancestral sampling of exactly `max_len` tokens (fixed-length responses;
/// the model has no stop token). Deterministic given the seed.
pub fn sample(
    params: &PolicyParams,
    prompt: &TokenSeq,
    max_len: usize,
    rng_seed: u64,
) -> Result<TokenSeq> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_with_rng(params, prompt, max_len, &mut rng)
}

/// Sampling against a caller-supplied RNG, so generators can derive
/// per-prompt substreams.
pub fn sample_with_rng<R: Rng + ?Sized>(
    params: &PolicyParams,
    prompt: &TokenSeq,
    max_len: usize,
    rng: &mut R,
) -> Result<TokenSeq> {
    if max_len == 0 {
        return Err(Error::contract("max_len must be >= 1"));
    }
    let v = params.vocab_size();
    check_ids(prompt, v, "prompt")?;

    let mut ctx = prompt
        .tokens()
        .last()
        .copied()
        .unwrap_or(params.config.bos_id) as usize;
    let mut out = Vec::with_capacity(max_len);
    for _ in 0..max_len {
        let probs = softmax(params.weights.row(ctx));
        let r: f64 = rng.random();
        let mut acc = 0.0;
        let mut picked = v - 1;
        for (tok, p) in probs.iter().enumerate() {
            acc += p;
            if r < acc {
                picked = tok;
                break;
            }
        }
        out.push(picked as u32);
        ctx = picked;
    }
    Ok(TokenSeq::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: &[u32]) -> TokenSeq {
        TokenSeq::new(tokens.to_vec())
    }

    fn uniform(v: usize) -> PolicyParams {
        PolicyParams::uniform(PolicyConfig::new(v, 0).unwrap())
    }

    #[test]
    fn uniform_logprob_is_neg_ln_v() {
        let p = uniform(4);
        let r = sequence_logprob(&p, &seq(&[1]), &seq(&[0, 2, 3])).unwrap();
        let ln4 = 4.0f64.ln();
        for &t in &r.per_token {
            assert!((t + ln4).abs() < 1e-12, "per-token {t} != -ln 4");
        }
        assert!((r.total + 3.0 * ln4).abs() < 1e-12);
        assert_eq!(r.length(), 3);
    }

    #[test]
    fn total_is_sum_of_per_token() {
        let p = PolicyParams::random(PolicyConfig::new(8, 0).unwrap(), 1.0, 3);
        let r = sequence_logprob(&p, &seq(&[2, 5]), &seq(&[1, 1, 7, 0])).unwrap();
        let sum: f64 = r.per_token.iter().sum();
        assert_eq!(r.total, sum);
        assert!(r.total <= 0.0);
        assert!(r.per_token.iter().all(|&t| t <= 0.0));
    }

    #[test]
    fn hand_built_row_logprob() {
        // V = 2, row 0 logits (ln 3, 0): p(0 | 0) = 3/4.
        let cfg = PolicyConfig::new(2, 0).unwrap();
        let p =
            PolicyParams::from_weights(cfg, vec![vec![3.0f64.ln(), 0.0], vec![0.0, 0.0]]).unwrap();
        let r = sequence_logprob(&p, &seq(&[0]), &seq(&[0])).unwrap();
        assert!((r.total - 0.75f64.ln()).abs() < 1e-12);
        assert!((r.total + 0.287_682_072_451_780_9).abs() < 1e-9);
    }

    #[test]
    fn empty_response_is_contract_error() {
        let p = uniform(4);
        let err = sequence_logprob(&p, &seq(&[0]), &seq(&[])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let err = logprob_grad(&p, &seq(&[0]), &seq(&[])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn out_of_range_token_is_contract_error() {
        let p = uniform(4);
        let err = sequence_logprob(&p, &seq(&[0]), &seq(&[4])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let err = sequence_logprob(&p, &seq(&[9]), &seq(&[1])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn grad_single_token_uniform() {
        // Uniform weights, V = 4: gradient row c is onehot(t) - 0.25.
        let p = uniform(4);
        let g = logprob_grad(&p, &seq(&[2]), &seq(&[1])).unwrap();
        for c in 0..4 {
            for t in 0..4 {
                let expected = if c == 2 {
                    if t == 1 {
                        0.75
                    } else {
                        -0.25
                    }
                } else {
                    0.0
                };
                assert!((g.get(c, t) - expected).abs() < 1e-15, "entry ({c},{t})");
            }
        }
    }

    #[test]
    fn grad_rows_sum_to_zero() {
        let p = PolicyParams::random(PolicyConfig::new(6, 0).unwrap(), 1.5, 11);
        let g = logprob_grad(&p, &seq(&[1, 3]), &seq(&[0, 5, 5, 2])).unwrap();
        for r in 0..6 {
            let s: f64 = g.row(r).iter().sum();
            assert!(s.abs() < 1e-12, "row {r} sums to {s}");
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let cfg = PolicyConfig::new(4, 0).unwrap();
        for trial in 0..5u64 {
            let p = PolicyParams::random(cfg, 1.0, 100 + trial);
            let prompt = seq(&[1, 2]);
            let response = seq(&[0, 3, 3, 1]);
            let g = logprob_grad(&p, &prompt, &response).unwrap();
            let h = 1e-4;
            for r in 0..4 {
                for c in 0..4 {
                    let mut plus = p.clone();
                    plus.weights_mut().add_at(r, c, h);
                    let mut minus = p.clone();
                    minus.weights_mut().add_at(r, c, -h);
                    let fp = sequence_logprob(&plus, &prompt, &response).unwrap().total;
                    let fm = sequence_logprob(&minus, &prompt, &response).unwrap().total;
                    let fd = (fp - fm) / (2.0 * h);
                    let a = g.get(r, c);
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                    assert!(rel < 1e-5, "({r},{c}): analytic {a}, fd {fd}, rel {rel}");
                }
            }
        }
    }

    #[test]
    fn shift_invariance() {
        // Adding a constant to any weight row leaves log-probabilities
        // unchanged (softmax invariance).
        let cfg = PolicyConfig::new(5, 0).unwrap();
        let p = PolicyParams::random(cfg, 1.0, 7);
        let prompt = seq(&[4]);
        let response = seq(&[2, 0, 1]);
        let base = sequence_logprob(&p, &prompt, &response).unwrap();
        let mut shifted = p.clone();
        for c in 0..5 {
            shifted.weights_mut().add_at(2, c, 17.5);
        }
        let after = sequence_logprob(&shifted, &prompt, &response).unwrap();
        assert!((base.total - after.total).abs() < 1e-10);
    }

    #[test]
    fn softmax_rows_normalize() {
        let p = PolicyParams::random(PolicyConfig::new(7, 0).unwrap(), 2.0, 42);
        for r in 0..7 {
            let s: f64 = softmax(p.weights().row(r)).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_is_deterministic_and_fixed_length() {
        let p = PolicyParams::random(PolicyConfig::new(6, 0).unwrap(), 1.0, 5);
        let a = sample(&p, &seq(&[1]), 10, 99).unwrap();
        let b = sample(&p, &seq(&[1]), 10, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let c = sample(&p, &seq(&[1]), 10, 100).unwrap();
        assert!(a == c || a != c); // different seed may differ; length contract holds
        assert_eq!(c.len(), 10);
    }

    #[test]
    fn saturated_logit_dominates_sampling() {
        let cfg = PolicyConfig::new(4, 0).unwrap();
        let mut rows = vec![vec![0.0; 4]; 4];
        for row in &mut rows {
            row[3] = 1e6;
        }
        let p = PolicyParams::from_weights(cfg, rows).unwrap();
        let mut hits = 0usize;
        for s in 0..1000u64 {
            let out = sample(&p, &seq(&[0]), 1, s).unwrap();
            if out.tokens()[0] == 3 {
                hits += 1;
            }
        }
        assert_eq!(hits, 1000);
    }

    #[test]
    fn sample_zero_len_is_contract_error() {
        let p = uniform(4);
        assert!(matches!(
            sample(&p, &seq(&[0]), 0, 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrip_and_schema() {
        let p = PolicyParams::random(PolicyConfig::new(3, 1).unwrap(), 0.5, 8);
        let text = serde_json::to_string(&p).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["vocab_size"], 3);
        assert_eq!(value["bos_id"], 1);
        assert!(value["weights"].as_array().unwrap().len() == 3);
        let back: PolicyParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn checkpoint_rejects_bad_shapes() {
        let ragged = r#"{"vocab_size":2,"bos_id":0,"weights":[[0.0,0.0],[0.0]]}"#;
        assert!(serde_json::from_str::<PolicyParams>(ragged).is_err());
        let bad_bos = r#"{"vocab_size":2,"bos_id":5,"weights":[[0.0,0.0],[0.0,0.0]]}"#;
        assert!(serde_json::from_str::<PolicyParams>(bad_bos).is_err());
    }
}
