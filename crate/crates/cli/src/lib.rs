//! The `qsgan` command line: corpus synthesis, training, evaluation,
//! single-query summaries and the gradient self-check.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qsgan_core::dataset::{load_corpus, synth_corpus, write_corpus, Corpus, Split, SynthConfig};
use qsgan_core::evaluation::{evaluate, Selection};
use qsgan_core::generator::{select_shots, ShotInputs};
use qsgan_core::selfcheck::{gradient_suite, TOLERANCE};
use qsgan_core::training::{load_checkpoint, save_checkpoint, Ablation, Checkpoint, TrainConfig, Trainer};
use qsgan_core::{write_atomic, Error};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "qsgan", version, about = "Query-conditioned video summarization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a planted synthetic corpus.
    Synth(SynthArgs),
    /// Train a generator and critic; writes a checkpoint and a metrics CSV.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a corpus.
    Evaluate(EvaluateArgs),
    /// Per-shot scores and the selected shots for one (video, query).
    Summarize(SummarizeArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct Setup {
    /// JSON file overlaid on the defaults: {"seed": .., "synth": {..}, "train": {..}}.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Use the published feature widths and segment length.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    setup: Setup,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    setup: Setup,
    /// Corpus manifest or the directory holding it.
    #[arg(long, value_name = "PATH")]
    corpus: PathBuf,
    /// Checkpoint path; the metrics CSV goes next to it.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, value_name = "NAME", value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Selection threshold used for validation F1.
    #[arg(long, value_name = "F")]
    threshold: Option<f64>,
    #[arg(long, value_name = "N")]
    max_steps: Option<u64>,
    /// Continue from a checkpoint; its stored configuration is used.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["config", "seed", "paper_scale", "ablation", "threshold"])]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    corpus: PathBuf,
    #[arg(long, value_name = "SPLIT", default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Defaults to the threshold stored in the checkpoint.
    #[arg(long, value_name = "F")]
    threshold: Option<f64>,
    /// Report CSV path; printed to stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Also report the summary-length distance.
    #[arg(long)]
    length_study: bool,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    corpus: PathBuf,
    #[arg(long, value_name = "ID")]
    video: String,
    /// Query id within the video.
    #[arg(long, value_name = "ID")]
    query: String,
    #[arg(long, value_name = "F")]
    threshold: Option<f64>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, value_name = "U64", default_value_t = 0)]
    seed: u64,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failures split by exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Summarize(a) => summarize(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Resolved seed, corpus and training configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    synth: Option<Value>,
    train: Option<Value>,
}

/// Recursively replaces fields of `base` with those present in `patch`.
fn overlay(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn overlaid<T: Clone + Serialize + DeserializeOwned>(base: &T, patch: Option<Value>, what: &str) -> Outcome<T> {
    let Some(patch) = patch else {
        return Ok(base.clone());
    };
    let mut v = serde_json::to_value(base).expect("config serializes");
    overlay(&mut v, patch);
    serde_json::from_value(v).map_err(|e| Failure::Usage(format!("{what} section: {e}")))
}

impl CliConfig {
    fn resolve(setup: &Setup) -> Outcome<Self> {
        let file = match &setup.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str::<ConfigFile>(&text)
                    .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let (synth_base, train_base) = if setup.paper_scale {
            (SynthConfig::paper_scale(), TrainConfig::paper_scale())
        } else {
            (SynthConfig::default(), TrainConfig::default())
        };
        let synth: SynthConfig = overlaid(&synth_base, file.synth, "synth")?;
        let mut train: TrainConfig = overlaid(&train_base, file.train, "train")?;
        let seed = setup.seed.or(file.seed).unwrap_or(train.seed);
        train.seed = seed;
        Ok(CliConfig { seed, synth, train })
    }
}

fn check_threshold(t: f64) -> Outcome<f64> {
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(Failure::Usage(format!("--threshold must lie strictly between 0 and 1, got {t}")))
    }
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::Runtime(Error::Io { path: PathBuf::from("<stdout>"), source: e }))?;
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let cfg = CliConfig::resolve(&a.setup)?;
    cfg.synth.validate()?;
    let corpus = synth_corpus(&cfg.synth, cfg.seed)?;
    let manifest = write_corpus(&corpus, &a.out)?;
    eprintln!("wrote {} videos to {} ({})", corpus.videos.len(), manifest.display(), corpus.fingerprint());
    Ok(())
}

/// `run.qsck` gets its metrics in `run.metrics.csv`.
pub fn metrics_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("metrics.csv")
}

fn train(a: TrainArgs) -> Outcome {
    let state = match &a.resume {
        Some(path) => {
            let mut state = load_checkpoint(path)?;
            if let Some(n) = a.max_steps {
                state.config.max_steps = n;
            }
            state.config.validate()?;
            state
        }
        None => {
            let mut cfg = CliConfig::resolve(&a.setup)?.train;
            if let Some(ab) = a.ablation {
                cfg.ablation = ab;
            }
            if let Some(t) = a.threshold {
                cfg.threshold = check_threshold(t)?;
            }
            if let Some(n) = a.max_steps {
                cfg.max_steps = n;
            }
            cfg.validate()?;
            Checkpoint::initial(cfg)?
        }
    };
    let corpus = load_corpus(&a.corpus)?;
    let mut trainer = Trainer::resume(&corpus, state)?;
    let every = trainer.config().checkpoint_every;
    let out = a.out.clone();
    trainer.run(|t| {
        if every > 0 && t.step_count() % every == 0 {
            save_checkpoint(t.state(), &out)?;
        }
        Ok(())
    })?;
    let state = trainer.into_state();
    save_checkpoint(&state, &a.out)?;
    write_atomic(&metrics_path(&a.out), state.metrics.as_bytes())?;
    match &state.best {
        Some(b) => eprintln!("trained {} steps; best validation F1 {:.4} at step {}", state.step, b.f1, b.step),
        None => eprintln!("trained {} steps", state.step),
    }
    Ok(())
}

fn load_pair(checkpoint: &Path, corpus: &Path) -> Outcome<(Checkpoint, Corpus)> {
    Ok((load_checkpoint(checkpoint)?, load_corpus(corpus)?))
}

fn evaluate_cmd(a: EvaluateArgs) -> Outcome {
    if let Some(t) = a.threshold {
        check_threshold(t)?;
    }
    let (state, corpus) = load_pair(&a.checkpoint, &a.corpus)?;
    let threshold = a.threshold.unwrap_or(state.config.threshold);
    let generator = state.best_generator()?;
    let report = evaluate(&generator, &corpus, a.split, Selection::Threshold(threshold))?;
    let mut text = report.to_csv();
    if a.length_study {
        match &a.out {
            Some(p) => write_atomic(&p.with_extension("length.csv"), report.length_csv().as_bytes())?,
            None => text.push_str(&report.length_csv()),
        }
    }
    emit(a.out.as_deref(), &text)
}

fn summarize(a: SummarizeArgs) -> Outcome {
    if let Some(t) = a.threshold {
        check_threshold(t)?;
    }
    let (state, corpus) = load_pair(&a.checkpoint, &a.corpus)?;
    let threshold = a.threshold.unwrap_or(state.config.threshold);
    let vi = corpus
        .videos
        .iter()
        .position(|v| v.id == a.video)
        .ok_or_else(|| Failure::Runtime(Error::Contract(format!("no video {:?} in the corpus", a.video))))?;
    let video = &corpus.videos[vi];
    let query = video
        .queries
        .iter()
        .find(|q| q.query.id == a.query)
        .ok_or_else(|| Failure::Runtime(Error::Contract(format!("video {} has no query {:?}", a.video, a.query))))?;
    let generator = state.best_generator()?;
    let inputs = ShotInputs::from_corpus(&corpus, vi, 0..video.len(), &query.query)?;
    let scores = generator.predict(&inputs)?;
    let chosen = select_shots(&scores, threshold)?;
    let mut text = String::from("shot,score,selected,concepts\n");
    for (t, (s, k)) in scores.0.iter().zip(&chosen).enumerate() {
        let concepts: Vec<String> = video.shot_concepts[t].iter().map(|&c| corpus.concepts.names[c as usize].clone()).collect();
        let _ = writeln!(text, "{t},{s},{},{}", u8::from(*k), concepts.join(" "));
    }
    emit(a.out.as_deref(), &text)
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let checks = gradient_suite(a.seed)?;
    let mut failed = Vec::new();
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<12} {:.3e} {verdict} ({})", c.component, c.report.max_relative_error, c.report.worst);
        if !c.passed() {
            failed.push(c.component);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::Numeric(format!(
            "relative error at or above {TOLERANCE:e} in {}",
            failed.join(", ")
        ))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(config: Option<PathBuf>, seed: Option<u64>, paper_scale: bool) -> Setup {
        Setup { config, seed, paper_scale }
    }

    #[test]
    fn file_overlays_defaults_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 4, "synth": {"shots": 20}, "train": {"model": {"tau": 0.2}, "omega": 0.25}}"#).unwrap();
        let cfg = CliConfig::resolve(&setup(Some(path.clone()), None, false)).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed), (4, 4));
        assert_eq!(cfg.synth.shots, 20);
        assert_eq!(cfg.synth.n_concepts, SynthConfig::default().n_concepts);
        assert_eq!((cfg.train.model.tau, cfg.train.omega), (0.2, 0.25));
        assert_eq!(cfg.train.model.d_fused, TrainConfig::default().model.d_fused);

        let cfg = CliConfig::resolve(&setup(Some(path), Some(9), true)).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed), (9, 9));
        assert_eq!(cfg.synth.d_frame, SynthConfig::paper_scale().d_frame);
        assert_eq!(cfg.train.segment_len, TrainConfig::paper_scale().segment_len);
    }

    #[test]
    fn defaults_without_file() {
        let cfg = CliConfig::resolve(&setup(None, None, false)).unwrap();
        assert_eq!(cfg, CliConfig { seed: 0, synth: SynthConfig::default(), train: TrainConfig::default() });
    }
}
