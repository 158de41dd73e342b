//! The end-to-end pipeline behind the `loghmm` binary: `train`, `score` and
//! `demo-minimal`.
//!
//! Exit codes: 0 ok, 1 I/O error, 2 configuration error, 3 data or model
//! mismatch, 4 demo ordering failure.

pub mod config;
pub mod model;
pub mod report;

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::embedding::{embed_entry, train_cbow, EmbedError, EntryVector};
use crate::hmm::{fit_baum_welch, FitConfig};
use crate::ingest::{split_entries, LogEntry, RawLogText, TimestampPattern};
use crate::preprocess::{preprocess_entry, TokenSequence};
use crate::scorer::{score_sequence, score_with_params, ScoreSeries, ScoreStrategy};
use crate::synth::{score_minimal, MinimalScenario, Variant};

pub use config::{OutputFormat, PipelineConfig};
pub use model::ModelFile;
pub use report::Report;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("anomaly ordering violated: {0}")]
    Ordering(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io { .. } => 1,
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Ordering(_) => 4,
        }
    }
}

/// A log source after splitting and normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedLog {
    pub source_id: String,
    pub entries: Vec<LogEntry>,
    pub tokens: Vec<TokenSequence>,
}

impl PreparedLog {
    pub fn from_text(
        source_id: &str,
        content: &str,
        cfg: &PipelineConfig,
    ) -> Result<Self, CliError> {
        let stops = cfg.stop_words()?;
        let raw = RawLogText::new(source_id, content);
        let entries = split_entries(&raw, &cfg.timestamp_formats);
        let tokens = entries
            .iter()
            .map(|e| preprocess_entry(e, &stops))
            .collect();
        Ok(Self {
            source_id: source_id.to_string(),
            entries,
            tokens,
        })
    }

    /// Reads a log file; the source id defaults to the file stem.
    pub fn read(
        path: &Path,
        source_id: Option<&str>,
        cfg: &PipelineConfig,
    ) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let raw = RawLogText::from_bytes(
            source_id.map_or_else(|| source_of(path), str::to_string),
            &bytes,
        );
        Self::from_text(&raw.source_id, &raw.content, cfg)
    }
}

fn source_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "log".to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub entries: usize,
    pub unique_tokens: usize,
    pub unique_messages: usize,
    pub training_entries: usize,
    pub degenerate: bool,
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "entries: {}", self.entries)?;
        writeln!(f, "unique tokens: {}", self.unique_tokens)?;
        writeln!(f, "unique normalized messages: {}", self.unique_messages)?;
        write!(f, "training entries: {}", self.training_entries)
    }
}

/// Fits the embedding on every entry and the HMM on the training prefix.
pub fn train_model(
    log: &PreparedLog,
    cfg: &PipelineConfig,
) -> Result<(ModelFile, CorpusStats), CliError> {
    cfg.validate()?;
    let split = cfg.split(log.entries.len());
    if split < 2 {
        return Err(CliError::Data(format!(
            "{} entries leave {split} for training after holding out {}; need at least 2",
            log.entries.len(),
            cfg.holdout
        )));
    }
    let table = train_cbow(&log.tokens, &cfg.embed).map_err(|e| match e {
        EmbedError::EmptyCorpus => {
            CliError::Data("corpus has no tokens after preprocessing".into())
        }
        other => CliError::Config(other.to_string()),
    })?;
    let vectors: Vec<EntryVector> = log.tokens.iter().map(|t| embed_entry(t, &table)).collect();
    let fit =
        fit_baum_welch(&vectors[..split], &cfg.fit).map_err(|e| CliError::Data(e.to_string()))?;
    let stats = CorpusStats {
        entries: log.entries.len(),
        unique_tokens: table.vocab.len(),
        unique_messages: log.tokens.iter().collect::<HashSet<_>>().len(),
        training_entries: split,
        degenerate: fit.degenerate,
    };
    Ok((
        ModelFile::new(&log.source_id, cfg.clone(), table, fit.params),
        stats,
    ))
}

/// Scores the held-out tail of `log` with `model`.
///
/// `FullHistory` uses the stored HMM; the other strategies refit with the
/// stored fit configuration. An empty tail yields an empty series.
pub fn score_log(
    log: &PreparedLog,
    model: &ModelFile,
    strategy: ScoreStrategy,
    holdout: usize,
) -> Result<ScoreSeries, CliError> {
    let data = |e: &dyn std::fmt::Display| CliError::Data(e.to_string());
    let len = log.entries.len();
    let split = len.saturating_sub(holdout);
    let empty = ScoreSeries {
        source_id: log.source_id.clone(),
        entries: Vec::new(),
        strategy,
        split,
        models: Vec::new(),
    };
    if split == len {
        return Ok(empty);
    }
    if split < 2 {
        return Err(CliError::Data(format!(
            "{len} entries leave {split} for history after holding out {holdout}; need at least 2"
        )));
    }
    let vectors: Vec<EntryVector> = log
        .tokens
        .iter()
        .map(|t| embed_entry(t, &model.embedding))
        .collect();
    let series = match strategy {
        ScoreStrategy::FullHistory => {
            score_with_params(&vectors, split, &model.hmm).map_err(|e| data(&e))?
        }
        other => score_sequence(&vectors, split, other, &model.config.fit).map_err(|e| data(&e))?,
    };
    Ok(series.with_source(&log.source_id))
}

#[derive(Debug, Parser)]
#[command(
    name = "loghmm",
    version,
    about = "Unsupervised log anomaly scoring with embeddings and HMMs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per log file.
    Train(TrainArgs),
    /// Score the held-out tail of a log file.
    Score(ScoreArgs),
    /// Run the two-symbol toy sequence and print per-position scores.
    DemoMinimal(DemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyKind {
    Full,
    Window,
    Warm,
}

/// Flags that override fields of the pipeline configuration.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Seed for both embedding training and HMM initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of hidden states.
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyKind>,
    /// Sliding-window length in entries.
    #[arg(long)]
    pub window: Option<usize>,
    /// Warm-start refit period in scored entries.
    #[arg(long)]
    pub refit_period: Option<usize>,
    /// EM iterations per warm-start refit.
    #[arg(long)]
    pub refit_iters: Option<usize>,
    /// Trailing entries held out for scoring.
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// strptime-style line-prefix timestamp format; repeatable.
    #[arg(long = "timestamp-format")]
    pub timestamp_formats: Vec<String>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// CBOW context radius.
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub min_count: Option<u64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub var_floor: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(seed) = self.seed {
            cfg.embed.seed = seed;
            cfg.fit.seed = seed;
        }
        set(&mut cfg.fit.n_states, self.states);
        set(&mut cfg.holdout, self.holdout);
        set(&mut cfg.format, self.format);
        if !self.timestamp_formats.is_empty() {
            cfg.timestamp_formats = self
                .timestamp_formats
                .iter()
                .map(TimestampPattern::new)
                .collect();
        }
        if self.stopwords.is_some() {
            cfg.stopwords = self.stopwords.clone();
        }
        set(&mut cfg.embed.dim, self.dim);
        set(&mut cfg.embed.window, self.context);
        set(&mut cfg.embed.negatives, self.negatives);
        set(&mut cfg.embed.epochs, self.epochs);
        set(&mut cfg.embed.learning_rate, self.learning_rate);
        set(&mut cfg.embed.min_count, self.min_count);
        set(&mut cfg.fit.max_iter, self.max_iter);
        set(&mut cfg.fit.tol, self.tol);
        set(&mut cfg.fit.var_floor, self.var_floor);
        cfg.strategy = self.strategy_for(cfg.strategy);
    }

    fn strategy_for(&self, current: ScoreStrategy) -> ScoreStrategy {
        let (window, period, iters) = match current {
            ScoreStrategy::FullHistory => (100, 1, 5),
            ScoreStrategy::SlidingWindow { window } => (window, 1, 5),
            ScoreStrategy::WarmStart {
                refit_period,
                iterations,
            } => (100, refit_period, iterations),
        };
        let window = self.window.unwrap_or(window);
        let refit_period = self.refit_period.unwrap_or(period);
        let iterations = self.refit_iters.unwrap_or(iters);
        let kind = self
            .strategy
            .or(self.window.is_some().then_some(StrategyKind::Window));
        match kind {
            None => match current {
                ScoreStrategy::SlidingWindow { .. } => ScoreStrategy::SlidingWindow { window },
                ScoreStrategy::WarmStart { .. } => ScoreStrategy::WarmStart {
                    refit_period,
                    iterations,
                },
                full => full,
            },
            Some(StrategyKind::Full) => ScoreStrategy::FullHistory,
            Some(StrategyKind::Window) => ScoreStrategy::SlidingWindow { window },
            Some(StrategyKind::Warm) => ScoreStrategy::WarmStart {
                refit_period,
                iterations,
            },
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Log files; one model is trained per file.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// TOML pipeline configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model path, or a directory when several logs are given.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Source id for a single input file (defaults to the file stem).
    #[arg(long)]
    pub source_id: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub log: PathBuf,
    #[arg(long, short)]
    pub model: PathBuf,
    /// Report path; standard output when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also write plot-ready `index,score` pairs here.
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long)]
    pub source_id: Option<String>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyKind>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub refit_period: Option<usize>,
    #[arg(long)]
    pub refit_iters: Option<usize>,
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Run a single variant instead of comparing all three.
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    /// Fit on the whole sequence, including the scored disruption.
    #[arg(long)]
    pub contaminated: bool,
    #[arg(long, default_value_t = 8)]
    pub length: usize,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<PipelineConfig, CliError> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    if args.logs.len() > 1 && args.source_id.is_some() {
        return Err(CliError::Config(
            "--source-id needs a single log file".into(),
        ));
    }
    let targets: Vec<(PathBuf, PathBuf)> = if args.logs.len() == 1 {
        vec![(args.logs[0].clone(), args.output.clone())]
    } else {
        std::fs::create_dir_all(&args.output).map_err(|e| CliError::io(&args.output, e))?;
        args.logs
            .iter()
            .map(|p| {
                (
                    p.clone(),
                    args.output.join(format!("{}.json", source_of(p))),
                )
            })
            .collect()
    };
    let results: Vec<Result<CorpusStats, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = targets
            .iter()
            .map(|(log, out)| {
                let cfg = &cfg;
                let source = args.source_id.as_deref();
                scope.spawn(move || {
                    let prepared = PreparedLog::read(log, source, cfg)?;
                    let (model, stats) = train_model(&prepared, cfg)?;
                    model.save(out)?;
                    Ok(stats)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    for ((log, out), result) in targets.iter().zip(results) {
        let stats = result?;
        println!("source: {}", source_of(log));
        println!("{stats}");
        if stats.degenerate {
            eprintln!("warning: all training vectors are identical; HMM states collapsed");
        }
        println!("model: {}", out.display());
    }
    Ok(())
}

pub fn cmd_score(args: &ScoreArgs) -> Result<(), CliError> {
    let model = ModelFile::load(&args.model)?;
    let mut cfg = model.config.clone();
    let overrides = Overrides {
        strategy: args.strategy,
        window: args.window,
        refit_period: args.refit_period,
        refit_iters: args.refit_iters,
        holdout: args.holdout,
        format: args.format,
        ..Default::default()
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    let log = PreparedLog::read(&args.log, args.source_id.as_deref(), &cfg)?;
    let series = score_log(&log, &model, cfg.strategy, cfg.holdout)?;
    let report = Report::build(&series, &log.entries, &log.tokens);
    match &args.output {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
            report
                .write(cfg.format, std::io::BufWriter::new(file))
                .map_err(|e| CliError::io(path, e))?;
        }
        None => report
            .write(cfg.format, std::io::stdout().lock())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e))?,
    }
    if let Some(path) = &args.series {
        let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        report
            .write_series(std::io::BufWriter::new(file))
            .map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

/// Last-position score of each variant, in `Variant::ALL` order.
pub fn demo_final_scores(
    length: usize,
    contaminated: bool,
    fit_cfg: &FitConfig,
) -> Result<Vec<(Variant, ScoreSeries)>, CliError> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let scenario = MinimalScenario {
                length,
                ..MinimalScenario::new(v)
            };
            score_minimal(&scenario, contaminated, fit_cfg)
                .map(|s| (v, s))
                .map_err(|e| CliError::Data(e.to_string()))
        })
        .collect()
}

fn print_table(variant: Variant, series: &ScoreSeries, contaminated: bool) {
    let scenario = MinimalScenario::new(variant);
    let seq = crate::synth::gen_minimal(&MinimalScenario {
        length: series.entries.len(),
        ..scenario.clone()
    });
    let regime = if contaminated {
        "fit on all entries".to_string()
    } else {
        format!("fit on first {}", series.entries.len() - 1)
    };
    println!("# variant: {} ({regime})", variant.name());
    println!("position\tsymbol\tscore");
    for (e, o) in series.entries.iter().zip(&seq) {
        let symbol = if o.0 == scenario.o1 {
            "o1"
        } else if o.0 == scenario.o2 {
            "o2"
        } else {
            "oa"
        };
        println!("{}\t{symbol}\t{:.6}", e.index + 1, e.score);
    }
}

pub fn cmd_demo_minimal(args: &DemoArgs) -> Result<(), CliError> {
    if args.length < 4 {
        return Err(CliError::Config("length must be at least 4".into()));
    }
    let mut fit_cfg = FitConfig::default();
    set(&mut fit_cfg.n_states, args.states);
    set(&mut fit_cfg.seed, args.seed);
    fit_cfg
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;

    if let Some(variant) = args.variant {
        let scenario = MinimalScenario {
            length: args.length,
            ..MinimalScenario::new(variant)
        };
        let series = score_minimal(&scenario, args.contaminated, &fit_cfg)
            .map_err(|e| CliError::Data(e.to_string()))?;
        print_table(variant, &series, args.contaminated);
        return Ok(());
    }

    let runs = demo_final_scores(args.length, args.contaminated, &fit_cfg)?;
    for (v, s) in &runs {
        print_table(*v, s, args.contaminated);
        println!();
    }
    let last: Vec<f64> = runs
        .iter()
        .map(|(_, s)| s.entries.last().expect("non-empty").score)
        .collect();
    println!(
        "final scores: regular {:.6} < swapped {:.6} < novel_event {:.6}",
        last[0], last[1], last[2]
    );
    if last[0] < last[1] && last[1] < last[2] {
        println!("ordering: ok");
        Ok(())
    } else {
        Err(CliError::Ordering(format!(
            "final scores {:.6}, {:.6}, {:.6} are not strictly increasing",
            last[0], last[1], last[2]
        )))
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::DemoMinimal(a) => cmd_demo_minimal(a),
    }
}

/// Parses arguments, runs the command and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
