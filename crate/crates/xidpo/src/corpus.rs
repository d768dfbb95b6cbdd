//! Preference-pair data model, JSONL persistence, and synthetic dataset
//! generation.
//!
//! Datasets are token-id only: one JSON object per line with integer-array
//! fields `prompt`, `chosen`, `rejected` and an optional `meta` map of
//! numbers/strings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::{self, PolicyParams};

/// Ordered token ids. Responses used in losses must be non-empty.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<u32>);

impl TokenSeq {
    pub fn new(tokens: Vec<u32>) -> Self {
        TokenSeq(tokens)
    }

    pub fn empty() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if let Some(&id) = self.0.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::validation(format!(
                "token id {id} out of range for vocab_size {vocab_size}"
            )));
        }
        Ok(())
    }
}

impl From<Vec<u32>> for TokenSeq {
    fn from(tokens: Vec<u32>) -> Self {
        TokenSeq(tokens)
    }
}

/// Metadata values attached to a pair: JSON numbers or strings only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Num(f64),
    Str(String),
}

pub type Meta = BTreeMap<String, MetaValue>;

/// One preference sample: prompt plus a chosen and a rejected response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub prompt: TokenSeq,
    pub chosen: TokenSeq,
    pub rejected: TokenSeq,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
}

impl PreferencePair {
    pub fn new(prompt: TokenSeq, chosen: TokenSeq, rejected: TokenSeq) -> Self {
        PreferencePair {
            prompt,
            chosen,
            rejected,
            meta: None,
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.chosen.is_empty() {
            return Err(Error::validation("chosen response is empty"));
        }
        if self.rejected.is_empty() {
            return Err(Error::validation("rejected response is empty"));
        }
        if self.chosen == self.rejected {
            return Err(Error::validation(
                "chosen and rejected are identical token sequences",
            ));
        }
        self.prompt.validate(vocab_size)?;
        self.chosen.validate(vocab_size)?;
        self.rejected.validate(vocab_size)?;
        Ok(())
    }
}

/// An immutable collection of validated preference pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    vocab_size: usize,
    pairs: Vec<PreferencePair>,
}

impl Dataset {
    pub fn new(vocab_size: usize, pairs: Vec<PreferencePair>) -> Result<Self> {
        for (i, pair) in pairs.iter().enumerate() {
            pair.validate(vocab_size)
                .map_err(|e| Error::validation(format!("pair {i}: {e}")))?;
        }
        Ok(Dataset { vocab_size, pairs })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn pairs(&self) -> &[PreferencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// A new dataset holding only the pairs accepted by the predicate.
    pub fn filtered(&self, keep: impl FnMut(&PreferencePair) -> bool) -> Dataset {
        let mut keep = keep;
        Dataset {
            vocab_size: self.vocab_size,
            pairs: self.pairs.iter().filter(|p| keep(p)).cloned().collect(),
        }
    }
}

/// Loads a JSONL preference dataset, validating every line against
/// `vocab_size`. Errors carry 1-based line numbers.
pub fn load_jsonl(path: impl AsRef<Path>, vocab_size: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(&path)?;
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let pair: PreferencePair = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        pair.validate(vocab_size)
            .map_err(|e| Error::validation(format!("line {line_no}: {e}")))?;
        pairs.push(pair);
    }
    Ok(Dataset { vocab_size, pairs })
}

/// Writes one JSON object per line; `load_jsonl(save_jsonl(d))` is the
/// identity.
pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    for pair in &dataset.pairs {
        let line = serde_json::to_string(pair)
            .map_err(|e| Error::validation(format!("pair serialization failed: {e}")))?;
        out.write_all(line.as_bytes())?;
        out.push(b'\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Deterministic candidate scorer: a fixed per-token-id weight vector. The
/// generator adds per-candidate Gaussian noise on top, so `noise_sd` tunes
/// how reliably the scorer ranks candidates (a strong vs. weak reward model
/// axis). A zero scale gives the pure-noise scorer.
#[derive(Clone, Debug)]
pub struct Scorer {
    weights: Vec<f64>,
}

impl Scorer {
    /// Weights drawn once from the seed (a dedicated substream, so consuming
    /// them does not disturb per-prompt sampling), scaled by `scale`.
    pub fn from_seed(seed: u64, vocab_size: usize, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let weights = (0..vocab_size)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        Scorer { weights }
    }

    pub fn zero(vocab_size: usize) -> Self {
        Scorer {
            weights: vec![0.0; vocab_size],
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Self {
        Scorer { weights }
    }

    /// Noise-free score: sum of per-token weights.
    pub fn score(&self, response: &TokenSeq) -> f64 {
        response
            .tokens()
            .iter()
            .map(|&t| self.weights[t as usize])
            .sum()
    }
}

/// Synthetic generation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_pairs: usize,
    /// K: candidates sampled per prompt; chosen = argmax score, rejected =
    /// argmin.
    pub candidates_per_prompt: usize,
    pub score_noise_sd: f64,
    pub prompt_length: usize,
    pub max_response_length: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_pairs: 1000,
            candidates_per_prompt: 4,
            score_noise_sd: 1.0,
            prompt_length: 2,
            max_response_length: 8,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::config("n_pairs must be >= 1"));
        }
        if self.candidates_per_prompt < 2 {
            return Err(Error::config(format!(
                "candidates_per_prompt must be >= 2, got {}",
                self.candidates_per_prompt
            )));
        }
        if !(self.score_noise_sd >= 0.0) {
            return Err(Error::config("score_noise_sd must be non-negative"));
        }
        if self.prompt_length == 0 {
            return Err(Error::config("prompt_length must be >= 1"));
        }
        if self.max_response_length == 0 {
            return Err(Error::config("max_response_length must be >= 1"));
        }
        Ok(())
    }
}

/// Bounded candidate re-draws before giving up on a prompt whose candidate
/// set keeps collapsing to identical sequences.
const MAX_RETRIES: usize = 8;

/// Generates a synthetic preference dataset: per prompt, sample K responses
/// from `base_policy`, score each with the seeded scorer plus Gaussian noise,
/// and keep the argmax/argmin as chosen/rejected. Fully deterministic given
/// the seed; prompt i draws from substream i+1 of the seed, so parallel and
/// serial generation agree bit-for-bit.
///
/// Returns the dataset and the count of prompts skipped because every redraw
/// produced an identical chosen/rejected pair.
pub fn generate_synthetic(
    base_policy: &PolicyParams,
    config: &GeneratorConfig,
) -> Result<(Dataset, usize)> {
    let scorer = Scorer::from_seed(config.seed, base_policy.vocab_size(), 1.0);
    generate_synthetic_with_scorer(base_policy, config, &scorer)
}

/// [`generate_synthetic`] with an explicit scorer (e.g. [`Scorer::zero`] for
/// pure-noise ranking).
pub fn generate_synthetic_with_scorer(
    base_policy: &PolicyParams,
    config: &GeneratorConfig,
    scorer: &Scorer,
) -> Result<(Dataset, usize)> {
    config.validate()?;
    let v = base_policy.vocab_size();
    let k = config.candidates_per_prompt;

    let mut pairs = Vec::with_capacity(config.n_pairs);
    let mut skipped = 0usize;

    for i in 0..config.n_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64 + 1);

        let prompt = TokenSeq::new(
            (0..config.prompt_length)
                .map(|_| rng.random_range(0..v as u32))
                .collect(),
        );

        let mut made = None;
        for _attempt in 0..=MAX_RETRIES {
            let candidates: Vec<TokenSeq> = (0..k)
                .map(|_| {
                    policy::sample_with_rng(
                        base_policy,
                        &prompt,
                        config.max_response_length,
                        &mut rng,
                    )
                })
                .collect::<Result<_>>()?;
            let true_scores: Vec<f64> = candidates.iter().map(|c| scorer.score(c)).collect();
            let noisy: Vec<f64> = true_scores
                .iter()
                .map(|&s| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s + config.score_noise_sd * z
                })
                .collect();

            // Ties break toward the lower candidate index: strict comparisons
            // only replace the incumbent.
            let mut chosen_idx = 0usize;
            let mut rejected_idx = 0usize;
            for j in 1..k {
                if noisy[j] > noisy[chosen_idx] {
                    chosen_idx = j;
                }
                if noisy[j] < noisy[rejected_idx] {
                    rejected_idx = j;
                }
            }

            if candidates[chosen_idx] != candidates[rejected_idx] {
                let mut meta = Meta::new();
                meta.insert("true_chosen".into(), MetaValue::Num(true_scores[chosen_idx]));
                meta.insert(
                    "true_rejected".into(),
                    MetaValue::Num(true_scores[rejected_idx]),
                );
                made = Some(PreferencePair {
                    prompt: prompt.clone(),
                    chosen: candidates[chosen_idx].clone(),
                    rejected: candidates[rejected_idx].clone(),
                    meta: Some(meta),
                });
                break;
            }
        }

        match made {
            Some(pair) => pairs.push(pair),
            None => skipped += 1,
        }
    }

    Ok((Dataset::new(v, pairs)?, skipped))
}
