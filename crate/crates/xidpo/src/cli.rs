//! Command-line surface: reproducible experiment commands emitting JSON and
//! headered CSV.
//!
//! Commands: `gen-data`, `analyze-gaps`, `select-xi`, `train`, `grad-check`,
//! `equiv-check`, `analyze-filter`, `decompose`. Every command is
//! deterministic given its flags and seeds. Flags override config-file
//! values. Exit codes: 0 success, 2 usage, 3 validation/config, 4 I/O,
//! 5 check failure.

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::path::{Path, PathBuf};

use crate::analysis;
use crate::config::RunConfig;
use crate::corpus::{self, Scorer};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckSettings};
use crate::losses::{LossConfig, Method};
use crate::margin;
use crate::policy::{PolicyConfig, PolicyParams};
use crate::rewards;
use crate::trainer::{self, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "xidpo",
    version,
    about = "Preference-optimization lab: ratio-margin (xi-DPO) and baseline losses \
             over an exactly differentiable bigram policy"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic preference dataset (JSONL).
    GenData(GenDataArgs),
    /// Compute the reward-gap distribution and write quantile/histogram/CDF
    /// reports.
    AnalyzeGaps(AnalyzeGapsArgs),
    /// Select xi as the t-th quantile of the initial margin distribution.
    SelectXi(SelectXiArgs),
    /// Train a policy on a preference dataset.
    Train(TrainArgs),
    /// Verify every loss gradient against central finite differences.
    GradCheck(GradCheckArgs),
    /// Verify the length-normalized DPO = SimPO(implied gamma) identity.
    EquivCheck(EquivCheckArgs),
    /// Report beta-induced sample filtering over a gap distribution.
    AnalyzeFilter(AnalyzeFilterArgs),
    /// Token-level decomposition of the margin argument for one pair.
    Decompose(DecomposeArgs),
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) => 2,
        Error::Contract(_)
        | Error::Validation(_)
        | Error::Config(_)
        | Error::DegeneratePair(_)
        | Error::InvalidXi(_)
        | Error::EmptyDistribution(_)
        | Error::Parse { .. } => 3,
        Error::Io(_) => 4,
        Error::CheckFailed(_) => 5,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::AnalyzeGaps(args) => analyze_gaps(args),
        Command::SelectXi(args) => select_xi(args),
        Command::Train(args) => train(args),
        Command::GradCheck(args) => grad_check(args),
        Command::EquivCheck(args) => equiv_check(args),
        Command::AnalyzeFilter(args) => analyze_filter(args),
        Command::Decompose(args) => decompose(args),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Keeps random policy initialization off the generator's scorer/sampling
/// substreams when both derive from one user-facing seed.
fn policy_init_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-data

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output JSONL path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional config file supplying defaults ([generator] section).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of pairs to generate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Vocabulary size of the base policy.
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Candidates sampled per prompt (>= 2).
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub k: Option<u64>,
    /// Gaussian score-noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub prompt_len: Option<usize>,
    #[arg(long)]
    pub resp_len: Option<usize>,
    /// Scale of the per-token scorer weights; 0 gives a pure-noise scorer.
    #[arg(long, default_value_t = 1.0)]
    pub scorer_scale: f64,
    /// Base-policy checkpoint to sample from (default: random init from the
    /// seed).
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Also write the base policy used for sampling, for downstream
    /// analyze-gaps/train runs.
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let mut gen = cfg.generator;
    if let Some(n) = args.n {
        gen.n_pairs = n;
    }
    if let Some(k) = args.k {
        gen.candidates_per_prompt = k as usize;
    }
    if let Some(noise) = args.noise {
        gen.score_noise_sd = noise;
    }
    if let Some(seed) = args.seed {
        gen.seed = seed;
    }
    if let Some(len) = args.prompt_len {
        gen.prompt_length = len;
    }
    if let Some(len) = args.resp_len {
        gen.max_response_length = len;
    }
    gen.validate()?;

    let base = match &args.policy {
        Some(path) => {
            let p = PolicyParams::load_json(path)?;
            if let Some(v) = args.vocab {
                if v != p.vocab_size() {
                    return Err(Error::config(format!(
                        "--vocab {v} does not match policy vocab_size {}",
                        p.vocab_size()
                    )));
                }
            }
            p
        }
        None => {
            let vocab = args.vocab.or(cfg.policy.vocab_size).unwrap_or(16);
            let pc = PolicyConfig::new(vocab, cfg.policy.bos_id)?;
            if cfg.policy.init_sd == 0.0 {
                PolicyParams::uniform(pc)
            } else {
                PolicyParams::random(pc, cfg.policy.init_sd, policy_init_seed(gen.seed))
            }
        }
    };

    let scorer = Scorer::from_seed(gen.seed, base.vocab_size(), args.scorer_scale);
    let (dataset, skipped) = corpus::generate_synthetic_with_scorer(&base, &gen, &scorer)?;
    corpus::save_jsonl(&dataset, &args.out)?;
    if let Some(path) = &args.policy_out {
        base.save_json(path)?;
    }

    print_json(&json!({
        "pairs_written": dataset.len(),
        "skipped": skipped,
        "vocab_size": dataset.vocab_size(),
        "out": args.out,
        "policy_out": args.policy_out,
    }));
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze-gaps

#[derive(Args, Debug)]
pub struct AnalyzeGapsArgs {
    /// JSONL dataset path.
    #[arg(long)]
    pub data: PathBuf,
    /// Policy checkpoint defining the margin distribution.
    #[arg(long)]
    pub policy: PathBuf,
    /// Histogram bin count.
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    /// Quantile levels for the report (comma separated); defaults to the
    /// standard report columns.
    #[arg(long, value_delimiter = ',')]
    pub quantiles: Option<Vec<f64>>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

fn analyze_gaps(args: AnalyzeGapsArgs) -> Result<()> {
    let policy = PolicyParams::load_json(&args.policy)?;
    let dataset = corpus::load_jsonl(&args.data, policy.vocab_size())?;
    let gaps = margin::compute_gaps(&dataset, &policy)?;

    let ts: Vec<f64> = args
        .quantiles
        .clone()
        .unwrap_or_else(|| margin::DEFAULT_REPORT_TS.to_vec());
    let table = margin::quantile_report(&gaps, &ts)?;
    let hist = margin::export_histogram(&gaps, args.bins)?;

    let quantiles_path = args.out_dir.join("quantiles.json");
    let hist_path = args.out_dir.join("hist.csv");
    let cdf_path = args.out_dir.join("cdf.csv");

    let mut table_json = serde_json::to_string_pretty(&table)
        .map_err(|e| Error::validation(format!("report serialization failed: {e}")))?;
    table_json.push('\n');
    write_text(&quantiles_path, &table_json)?;
    write_text(&hist_path, &margin::histogram_to_csv(&hist))?;
    write_text(&cdf_path, &margin::cdf_to_csv(&gaps))?;

    print_json(&json!({
        "n": gaps.len(),
        "skipped": gaps.skipped(),
        "min": gaps.min(),
        "max": gaps.max(),
        "mean": gaps.mean(),
        "median": gaps.median(),
        "files": [quantiles_path, hist_path, cdf_path],
    }));
    Ok(())
}

// ---------------------------------------------------------------------------
// select-xi

#[derive(Args, Debug)]
pub struct SelectXiArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    /// Quantile level in [0, 1].
    #[arg(long)]
    pub t: f64,
}

fn select_xi(args: SelectXiArgs) -> Result<()> {
    let policy = PolicyParams::load_json(&args.policy)?;
    let dataset = corpus::load_jsonl(&args.data, policy.vocab_size())?;
    let gaps = margin::compute_gaps(&dataset, &policy)?;
    let xi = margin::select_xi(&gaps, args.t)?;
    print_json(&json!({"t": args.t, "xi": xi}));
    Ok(())
}

// ---------------------------------------------------------------------------
// train

#[derive(Clone, Copy, Debug)]
pub enum XiSpec {
    Fixed(f64),
    Auto(f64),
}

fn parse_xi_spec(s: &str) -> std::result::Result<XiSpec, String> {
    if let Some(t) = s.strip_prefix("auto:") {
        let t: f64 = t
            .parse()
            .map_err(|_| format!("invalid quantile level '{t}' in '--xi auto:<t>'"))?;
        Ok(XiSpec::Auto(t))
    } else {
        let v: f64 = s
            .parse()
            .map_err(|_| format!("invalid xi '{s}' (expected a number or auto:<t>)"))?;
        Ok(XiSpec::Fixed(v))
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse()
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSONL dataset path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Loss method (dpo, dpo_lennorm, ipo, simpo, cpo, orpo, rdpo, simper,
    /// xidpo, xidpo_noleaky, xidpo_relu).
    #[arg(long, value_parser = parse_method)]
    pub loss: Option<Method>,
    /// Config file ([loss]/[train]/[policy]/[paths] sections).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ratio margin: a number, or auto:<t> to select the t-th quantile of
    /// the initial margin distribution.
    #[arg(long, value_parser = parse_xi_spec)]
    pub xi: Option<XiSpec>,
    /// Reference policy checkpoint (required by dpo, dpo_lennorm, ipo,
    /// rdpo).
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// Initial policy checkpoint (default: random init from the seed).
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Vocabulary size when no initial checkpoint is given.
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Directory receiving trainlog.csv and checkpoint.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;

    let mut loss_cfg: LossConfig = cfg.loss;
    if let Some(method) = args.loss {
        loss_cfg.method = method;
    }
    if let Some(beta) = args.beta {
        loss_cfg.beta = beta;
    }
    if let Some(gamma) = args.gamma {
        loss_cfg.gamma = gamma;
    }

    let mut train_cfg: TrainConfig = cfg.train;
    if let Some(steps) = args.steps {
        train_cfg.steps = steps;
    }
    if let Some(lr) = args.lr {
        train_cfg.lr = lr;
    }
    if let Some(batch) = args.batch_size {
        train_cfg.batch_size = batch;
    }
    if let Some(seed) = args.seed {
        train_cfg.seed = seed;
    }
    if let Some(every) = args.log_every {
        train_cfg.log_every = every;
    }

    let data_path = args
        .data
        .clone()
        .or(cfg.paths.data.clone())
        .ok_or_else(|| Error::config("no dataset given: pass --data or set [paths].data"))?;

    let policy_path = args.policy.clone().or(cfg.paths.policy.clone());
    let initial = match &policy_path {
        Some(path) => PolicyParams::load_json(path)?,
        None => {
            let vocab = args.vocab.or(cfg.policy.vocab_size).ok_or_else(|| {
                Error::config(
                    "vocab_size unknown: pass --policy, --vocab, or set [policy].vocab_size",
                )
            })?;
            let pc = PolicyConfig::new(vocab, cfg.policy.bos_id)?;
            if cfg.policy.init_sd == 0.0 {
                PolicyParams::uniform(pc)
            } else {
                PolicyParams::random(pc, cfg.policy.init_sd, policy_init_seed(train_cfg.seed))
            }
        }
    };

    let dataset = corpus::load_jsonl(&data_path, initial.vocab_size())?;

    let reference = match args.reference.clone().or(cfg.paths.reference.clone()) {
        Some(path) => Some(PolicyParams::load_json(path)?),
        None => None,
    };

    // Resolve xi before training; auto:<t> reads the quantile off the
    // initial policy's margin distribution.
    let mut resolved_auto: Option<(f64, f64)> = None;
    match args.xi {
        Some(XiSpec::Fixed(v)) => loss_cfg.xi = Some(v),
        Some(XiSpec::Auto(t)) => {
            let gaps = margin::compute_gaps(&dataset, &initial)?;
            let xi = margin::select_xi(&gaps, t)?;
            loss_cfg.xi = Some(xi);
            resolved_auto = Some((t, xi));
        }
        None => {}
    }

    let (trained, log) = trainer::train(
        &initial,
        &dataset,
        &loss_cfg,
        &train_cfg,
        reference.as_ref(),
    )?;

    let log_path = args.out_dir.join("trainlog.csv");
    let ckpt_path = args.out_dir.join("checkpoint.json");
    let mut csv = String::new();
    if let Some((t, xi)) = resolved_auto {
        csv.push_str(&format!("# resolved_xi={xi} t={t}\n"));
    }
    csv.push_str(&log.to_csv());
    write_text(&log_path, &csv)?;
    trained.save_json(&ckpt_path)?;

    let final_loss = log.records.last().map(|r| r.loss);
    print_json(&json!({
        "method": loss_cfg.method.name(),
        "steps": train_cfg.steps,
        "xi": loss_cfg.xi,
        "resolved_from_t": resolved_auto.map(|(t, _)| t),
        "final_loss": final_loss,
        "skipped_steps": log.skipped_steps,
        "trainlog": log_path,
        "checkpoint": ckpt_path,
    }));
    Ok(())
}

// ---------------------------------------------------------------------------
// grad-check

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// "all" or a comma-separated list of method names.
    #[arg(long, default_value = "all")]
    pub methods: String,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub vocab: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    pub fd_step: f64,
}

fn parse_method_list(spec: &str) -> Result<Vec<Method>> {
    if spec.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    spec.split(',')
        .map(|name| {
            name.trim()
                .parse::<Method>()
                .map_err(Error::Usage)
        })
        .collect()
}

fn grad_check(args: GradCheckArgs) -> Result<()> {
    let methods = parse_method_list(&args.methods)?;
    let settings = GradCheckSettings {
        trials: args.trials,
        vocab_size: args.vocab,
        seed: args.seed,
        fd_step: args.fd_step,
    };
    let reports = gradcheck::check_methods(&methods, &settings)?;

    let mut results = serde_json::Map::new();
    let mut worst: Option<(&str, f64)> = None;
    for r in &reports {
        results.insert(r.method.name().to_string(), json!(r.max_rel_err));
        if worst.map(|(_, w)| r.max_rel_err > w).unwrap_or(true) {
            worst = Some((r.method.name(), r.max_rel_err));
        }
    }
    let pass = reports.iter().all(|r| r.max_rel_err <= args.tol);
    print_json(&json!({
        "trials": args.trials,
        "tol": args.tol,
        "results": results,
        "pass": pass,
    }));
    if !pass {
        let (name, err) = worst.unwrap();
        return Err(Error::CheckFailed(format!(
            "gradient check: {name} max relative error {err} exceeds tolerance {}",
            args.tol
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// equiv-check

#[derive(Args, Debug)]
pub struct EquivCheckArgs {
    /// Optional dataset; without it, random instances are generated.
    #[arg(long, requires = "policy")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "reference")]
    pub policy: Option<PathBuf>,
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// Random instances to draw when no dataset is given.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub vocab: usize,
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

fn equiv_check(args: EquivCheckArgs) -> Result<()> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let (max_discrepancy, instances) = match (&args.data, &args.policy, &args.reference) {
        (Some(data), Some(policy), Some(reference)) => {
            let policy = PolicyParams::load_json(policy)?;
            let reference = PolicyParams::load_json(reference)?;
            let dataset = corpus::load_jsonl(data, policy.vocab_size())?;
            let n = dataset.len();
            (
                analysis::equivalence_check(&policy, &reference, &dataset, args.beta)?,
                n,
            )
        }
        _ => {
            let pc = PolicyConfig::new(args.vocab, 0)?;
            let mut max = 0.0f64;
            for trial in 0..args.trials {
                let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
                rng.set_stream(trial as u64);
                let policy = PolicyParams::random(pc, 1.0, rng.random());
                let reference = PolicyParams::random(pc, 1.0, rng.random());
                let pair = random_pair(&mut rng, args.vocab as u32);
                let gap =
                    analysis::pair_equivalence_gap(&policy, &reference, &pair, args.beta)?;
                max = max.max(gap);
            }
            (max, args.trials)
        }
    };

    let pass = max_discrepancy <= args.tol;
    print_json(&json!({
        "max_discrepancy": max_discrepancy,
        "instances": instances,
        "beta": args.beta,
        "tol": args.tol,
        "pass": pass,
    }));
    if !pass {
        return Err(Error::CheckFailed(format!(
            "equivalence check: max discrepancy {max_discrepancy} exceeds tolerance {}",
            args.tol
        )));
    }
    Ok(())
}

fn random_pair(rng: &mut impl rand::Rng, vocab: u32) -> corpus::PreferencePair {
    use crate::corpus::TokenSeq;
    let draw = |rng: &mut dyn rand::RngCore, min: usize, max: usize| -> Vec<u32> {
        let len = rand::Rng::random_range(&mut *rng, min..=max);
        (0..len)
            .map(|_| rand::Rng::random_range(&mut *rng, 0..vocab))
            .collect()
    };
    let prompt = draw(rng, 0, 2);
    loop {
        let chosen = draw(rng, 1, 5);
        let rejected = draw(rng, 1, 5);
        if chosen != rejected {
            return corpus::PreferencePair::new(
                TokenSeq::new(prompt),
                TokenSeq::new(chosen),
                TokenSeq::new(rejected),
            );
        }
    }
}

// ---------------------------------------------------------------------------
// analyze-filter

#[derive(Args, Debug)]
pub struct AnalyzeFilterArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Gradient-magnitude threshold below which a sample counts as filtered.
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    /// Head-region threshold (default: 10th percentile of the gaps).
    #[arg(long)]
    pub lower: Option<f64>,
    /// Tail-region threshold (default: 90th percentile of the gaps).
    #[arg(long)]
    pub upper: Option<f64>,
}

fn analyze_filter(args: AnalyzeFilterArgs) -> Result<()> {
    let policy = PolicyParams::load_json(&args.policy)?;
    let dataset = corpus::load_jsonl(&args.data, policy.vocab_size())?;
    let mut deltas = Vec::with_capacity(dataset.len());
    for pair in dataset.pairs() {
        match rewards::pair_breakdown(&policy, pair) {
            Ok(bd) => deltas.push(bd.delta),
            Err(Error::DegeneratePair(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if deltas.is_empty() {
        return Err(Error::EmptyDistribution(
            "all pairs are degenerate".to_string(),
        ));
    }
    let defaults = analysis::region_thresholds(&deltas)?;
    let thresholds = (
        args.lower.unwrap_or(defaults.0),
        args.upper.unwrap_or(defaults.1),
    );
    let report = analysis::filter_report(&deltas, args.beta, args.gamma, args.epsilon, thresholds)?;
    let value = serde_json::to_value(&report)
        .map_err(|e| Error::validation(format!("report serialization failed: {e}")))?;
    print_json(&value);
    Ok(())
}

// ---------------------------------------------------------------------------
// decompose

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Index of the pair to decompose.
    #[arg(long, default_value_t = 0)]
    pub pair: usize,
}

fn decompose(args: DecomposeArgs) -> Result<()> {
    let policy = PolicyParams::load_json(&args.policy)?;
    let dataset = corpus::load_jsonl(&args.data, policy.vocab_size())?;
    let pair = dataset.pairs().get(args.pair).ok_or_else(|| {
        Error::validation(format!(
            "pair index {} out of range for dataset of {} pairs",
            args.pair,
            dataset.len()
        ))
    })?;
    let terms = analysis::token_decompose(&policy, pair, args.beta, args.gamma)?;
    let sum: f64 = terms.iter().sum();
    let a = rewards::length_norm_reward(&policy, &pair.prompt, &pair.chosen)?;
    let b = rewards::length_norm_reward(&policy, &pair.prompt, &pair.rejected)?;
    let sequence_argument = args.beta * (a - b) - args.gamma;
    print_json(&json!({
        "pair": args.pair,
        "terms": terms,
        "sum": sum,
        "sequence_argument": sequence_argument,
    }));
    Ok(())
}
