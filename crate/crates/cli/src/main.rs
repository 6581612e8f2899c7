//! Command-line interface for the convqual dialogue-rating toolkit.
//!
//! Subcommands cover the whole pipeline: `synth` generates rated corpora
//! with known ground-truth effects, `train`/`evaluate`/`predict` fit and
//! score the three model kinds, and `augment`/`ate`/`invert`/`extend` run
//! the counterfactual analyses. Machine-readable output (reports,
//! predictions, effect estimates) goes to stdout; progress and summaries go
//! to stderr.
//!
//! Every run is deterministic: all randomness flows from the `--seed` (or
//! the seed in a `--config` file), so repeating a command with identical
//! inputs reproduces its output files byte for byte. Exit codes: 0 on
//! success, 1 on validation or IO errors, 2 on usage errors.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use convqual::augment::{augment_dataset, select_low_rated};
use convqual::data::{load_dataset, save_dataset, Dataset};
use convqual::eval::{ate_between, evaluate, invert_treatments};
use convqual::models::{
    load_checkpoint, save_checkpoint, train_baseline_lstm, train_baseline_mlp, train_cf_lstm,
    Checkpoint, Model, Pooling, Prediction, TrainConfig,
};
use convqual::synth::{canonical_policy, generate, EffectSpec, SynthConfig};
use convqual::treatment::Treatment;
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "convqual",
    version,
    about = "Dialogue quality rating prediction with counterfactual sequence models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic rated corpus with known ground-truth effects
    Synth(SynthArgs),
    /// Train a rating model and save a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint against a rated dataset (report JSON on stdout)
    Evaluate(EvaluateArgs),
    /// Per-dialogue rating predictions (JSON lines on stdout)
    Predict(PredictArgs),
    /// Expand low-rated dialogues into masked-prefix training examples
    Augment(AugmentArgs),
    /// Model-estimated average treatment effect between two arms
    Ate(AteArgs),
    /// Rewrite a dataset with every binary treatment assignment flipped
    Invert(InvertArgs),
    /// Add treatment arms to a trained counterfactual model
    Extend(ExtendArgs),
}

/// Generator settings resolve as: built-in defaults, then `--config`, then
/// explicit flags.
#[derive(Args)]
struct SynthArgs {
    /// Output dataset path (JSON lines); ground truth is written next to it
    /// with the extension replaced by `.truth.json`
    #[arg(long)]
    out: PathBuf,
    /// JSON file overriding the generator defaults field by field
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of dialogues (default: 1000)
    #[arg(long)]
    n: Option<usize>,
    /// Root seed for generation (default: 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Total treatment arms including control (default: 2)
    #[arg(long)]
    arms: Option<usize>,
    /// Planted treatment effect size (default: -0.7809)
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<f64>,
    /// Outcome noise standard deviation (default: 0.25)
    #[arg(long)]
    noise_std: Option<f64>,
}

/// Training settings resolve as: built-in defaults, then `--config`, then
/// explicit flags.
#[derive(Args)]
struct TrainArgs {
    /// Which predictor to train
    #[arg(long, value_enum)]
    model: ModelKind,
    /// Training dataset (JSON lines)
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// JSON file overriding the training defaults field by field
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for initialization, splits and shuffles (default: 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs (default: 50)
    #[arg(long)]
    epochs: Option<usize>,
    /// LSTM hidden size / first MLP width (default: 32)
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Adam learning rate (default: 0.001)
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Mini-batch size (default: 32)
    #[arg(long)]
    batch_size: Option<usize>,
    /// Weight of the representation-balance term, counterfactual model only
    /// (default: 1)
    #[arg(long)]
    ipm_weight: Option<f64>,
    /// Early-stopping patience in epochs (default: 10)
    #[arg(long)]
    patience: Option<usize>,
    /// How per-turn hidden states collapse to the dialogue representation
    /// (default: final)
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
    /// Treatment arms assumed by the assignment policy
    #[arg(long, default_value_t = 2)]
    arms: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trained checkpoint to score
    #[arg(long)]
    model: PathBuf,
    /// Evaluation dataset (JSON lines)
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained checkpoint to predict with
    #[arg(long)]
    model: PathBuf,
    /// Dataset to predict on (ratings not required)
    #[arg(long)]
    data: PathBuf,
    /// Treatment arm to predict under: an arm index, or "factual" for each
    /// dialogue's own assignment (counterfactual checkpoints only accept
    /// indices)
    #[arg(long, default_value = "factual", value_parser = parse_arm)]
    arm: ArmChoice,
}

#[derive(Args)]
struct AugmentArgs {
    /// Source dataset (JSON lines)
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the generated dialogues (originals are not copied)
    #[arg(long)]
    out: PathBuf,
    /// Only dialogues rated strictly below this value are masked
    #[arg(long, default_value_t = 3.0)]
    threshold: f64,
    /// Shortest prefix (in turns) worth emitting
    #[arg(long, default_value_t = 3)]
    min_len: usize,
}

#[derive(Args)]
struct AteArgs {
    /// Trained counterfactual checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Dataset to average the per-dialogue effects over
    #[arg(long)]
    data: PathBuf,
    /// Treatment arm whose effect is estimated
    #[arg(long, default_value_t = 1)]
    arm: usize,
    /// Arm the effect is measured against
    #[arg(long, default_value_t = 0)]
    baseline: usize,
}

#[derive(Args)]
struct InvertArgs {
    /// Source dataset (JSON lines), binary treatments only
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the flipped dataset
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtendArgs {
    /// Trained counterfactual checkpoint to extend
    #[arg(long)]
    model: PathBuf,
    /// Fresh training data covering the new arms
    #[arg(long)]
    data: PathBuf,
    /// Total arm count after extension (must exceed the checkpoint's)
    #[arg(long)]
    arms: usize,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Root seed for the extension run (default: the checkpoint's seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Epochs per extension phase (default: the checkpoint's epoch count)
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Mlp,
    Lstm,
    CfLstm,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Final,
    Mean,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Pooling {
        match p {
            PoolingArg::Final => Pooling::Final,
            PoolingArg::Mean => Pooling::Mean,
        }
    }
}

#[derive(Clone, Copy)]
enum ArmChoice {
    Factual,
    Fixed(usize),
}

fn parse_arm(s: &str) -> std::result::Result<ArmChoice, String> {
    if s.eq_ignore_ascii_case("factual") {
        return Ok(ArmChoice::Factual);
    }
    s.parse::<usize>()
        .map(ArmChoice::Fixed)
        .map_err(|_| format!("expected an arm index or \"factual\", got {s:?}"))
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Predict(a) => run_predict(a),
        Command::Augment(a) => run_augment(a),
        Command::Ate(a) => run_ate(a),
        Command::Invert(a) => run_invert(a),
        Command::Extend(a) => run_extend(a),
    }
}

/// Writes one line to stdout. A closed pipe (e.g. piping into `head`) ends
/// the program quietly instead of panicking.
fn emit(line: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{line}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        r => r.context("writing to stdout"),
    }
}

/// Reads a JSON config file, or the type's defaults when no path is given.
fn load_config<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// The ground-truth path that rides along with a generated dataset.
fn truth_path(out: &Path) -> PathBuf {
    out.with_extension("truth.json")
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = load_config(a.config.as_deref())?;
    if let Some(n) = a.n {
        cfg.n_dialogues = n;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(arms) = a.arms {
        cfg.num_arms = arms;
    }
    if let Some(tau) = a.tau {
        cfg.effect = match cfg.effect {
            EffectSpec::Constant { .. } => EffectSpec::Constant { tau },
            EffectSpec::Heterogeneous { .. } => EffectSpec::Heterogeneous { tau },
        };
    }
    if let Some(sd) = a.noise_std {
        cfg.noise_std = sd;
    }

    let (ds, truth) = generate(&cfg)?;
    save_dataset(&a.out, &ds).with_context(|| format!("writing dataset {}", a.out.display()))?;
    let tp = truth_path(&a.out);
    let mut doc = serde_json::to_string_pretty(&truth)?;
    doc.push('\n');
    fs::write(&tp, doc).with_context(|| format!("writing ground truth {}", tp.display()))?;

    eprintln!(
        "wrote {} dialogues ({} arms, planted post-clamp ATE {:?}) to {}; ground truth in {}",
        ds.len(),
        truth.num_arms,
        truth.ate_postclamp,
        a.out.display(),
        tp.display()
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.hidden_dim {
        cfg.hidden_dim = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.ipm_weight {
        cfg.ipm_weight = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if let Some(v) = a.pooling {
        cfg.pooling = v.into();
    }

    let ds = read_dataset(&a.data)?;
    let policy = canonical_policy(a.arms)?;
    let (model, log) = match a.model {
        ModelKind::Mlp => {
            let (m, log) = train_baseline_mlp(&ds, &cfg)?;
            (Model::Mlp(m), log)
        }
        ModelKind::Lstm => {
            let (m, log) = train_baseline_lstm(&ds, &cfg)?;
            (Model::Lstm(m), log)
        }
        ModelKind::CfLstm => {
            let (m, log) = train_cf_lstm(&ds, &policy, &cfg)?;
            (Model::CfLstm(m), log)
        }
    };

    let kind = model.kind();
    let final_loss = log.loss_curve.last().copied().unwrap_or(f64::NAN);
    let cp = Checkpoint::new(model, policy, &log);
    save_checkpoint(&a.out, &cp).with_context(|| format!("writing checkpoint {}", a.out.display()))?;
    eprintln!(
        "trained {kind} on {} dialogues for {} epochs (final loss {final_loss:.6}); checkpoint in {}",
        ds.len(),
        log.epochs_run,
        a.out.display()
    );
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let cp = read_checkpoint(&a.model)?;
    let ds = read_dataset(&a.data)?;
    let report = evaluate(&cp.model, &ds, &cp.policy)?;
    emit(&serde_json::to_string_pretty(&report)?)?;
    eprintln!("{}", report.table());
    Ok(())
}

fn run_predict(a: PredictArgs) -> Result<()> {
    let cp = read_checkpoint(&a.model)?;
    let ds = read_dataset(&a.data)?;
    for d in &ds.dialogues {
        let (p, arm): (Prediction, Option<usize>) = match (&cp.model, a.arm) {
            (Model::CfLstm(m), ArmChoice::Factual) => {
                let arm = cp.policy.effective_arm(d)?;
                (m.predict(d, arm)?, Some(arm.0))
            }
            (Model::CfLstm(m), ArmChoice::Fixed(j)) => (m.predict(d, Treatment(j))?, Some(j)),
            (m, ArmChoice::Factual) => (m.predict_factual(d, &cp.policy)?, None),
            (m, ArmChoice::Fixed(_)) => {
                bail!("the {} baseline is treatment-blind; only --arm factual applies", m.kind())
            }
        };
        let line = json!({ "id": d.id, "arm": arm, "raw": p.raw, "clamped": p.clamped });
        emit(&line.to_string())?;
    }
    Ok(())
}

fn run_augment(a: AugmentArgs) -> Result<()> {
    let ds = read_dataset(&a.input)?;
    let policy = canonical_policy(2)?;
    let parents = select_low_rated(&ds, a.threshold).len();
    let generated = augment_dataset(&ds, &policy, a.threshold, a.min_len)?;
    save_dataset(&a.out, &generated)
        .with_context(|| format!("writing dataset {}", a.out.display()))?;
    eprintln!(
        "generated {} masked dialogues from {parents} low-rated parents; written to {} \
         (concatenate with the originals for training)",
        generated.len(),
        a.out.display()
    );
    Ok(())
}

fn run_ate(a: AteArgs) -> Result<()> {
    let cp = read_checkpoint(&a.model)?;
    let Model::CfLstm(m) = &cp.model else {
        bail!("effect estimation needs a counterfactual checkpoint, got {}", cp.model.kind());
    };
    let ds = read_dataset(&a.data)?;
    let ate = ate_between(m, &ds, Treatment(a.baseline), Treatment(a.arm))?;
    let doc = json!({
        "arm": a.arm,
        "baseline": a.baseline,
        "ate": ate,
        "n_dialogues": ds.len(),
    });
    emit(&format!("{doc:#}"))?;
    eprintln!("estimated effect of arm {} over arm {}: {ate:+.4}", a.arm, a.baseline);
    Ok(())
}

fn run_invert(a: InvertArgs) -> Result<()> {
    let ds = read_dataset(&a.input)?;
    let policy = canonical_policy(2)?;
    let inverted = invert_treatments(&ds, &policy)?;
    save_dataset(&a.out, &inverted)
        .with_context(|| format!("writing dataset {}", a.out.display()))?;
    eprintln!("wrote {} dialogues with flipped assignments to {}", inverted.len(), a.out.display());
    Ok(())
}

fn run_extend(a: ExtendArgs) -> Result<()> {
    let cp = read_checkpoint(&a.model)?;
    let Model::CfLstm(m) = &cp.model else {
        bail!("arm extension needs a counterfactual checkpoint, got {}", cp.model.kind());
    };
    let k_old = m.num_arms();
    if a.arms <= k_old {
        bail!("--arms must exceed the checkpoint's {k_old} arms, got {}", a.arms);
    }

    let mut cfg = m.config.clone();
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }

    let fresh = read_dataset(&a.data)?;
    let policy = canonical_policy(a.arms)?;
    let (extended, log) = convqual::models::extend_treatments(m, a.arms - k_old, &fresh, &policy, &cfg)?;
    let cp_out = Checkpoint::new(Model::CfLstm(extended), policy, &log);
    save_checkpoint(&a.out, &cp_out)
        .with_context(|| format!("writing checkpoint {}", a.out.display()))?;
    eprintln!(
        "extended from {k_old} to {} arms over {} fresh dialogues; checkpoint in {}",
        a.arms,
        fresh.len(),
        a.out.display()
    );
    Ok(())
}
