//! Command-line entry point.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::audio::read_wav;
use crate::dataset::Dataset;
use crate::eval::{evaluate_model, MetricsReport};
use crate::features::save_spectrogram;
use crate::nn::{gradcheck, NetworkConfig};
use crate::stream::{classify_stream, StreamConfig, StreamSource};
use crate::synth::{generate_dataset, SoundscapeConfig};
use crate::training::{
    cross_validate, hyperparam_search, load_checkpoint, save_checkpoint, stratified_split, train_model, Corpus,
    Featurizer, SearchSpace, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "chorus", version, about = "Synthetic soundscapes, training and streaming classification of bird calls")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labelled synthetic soundscape dataset
    Synth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compute log-mel spectrograms for every clip in a manifest
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for the spectrogram cache
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train on the train split, select by validation accuracy, score the test split
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Disable augmentation
        #[arg(long)]
        no_augment: bool,
        #[command(flatten)]
        common: Common,
    },
    /// k-fold cross-validation against the logistic baseline
    Crossval {
        #[arg(long)]
        manifest: PathBuf,
        /// Output JSON file
        #[arg(long)]
        out: PathBuf,
        /// Number of folds
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        no_augment: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Grid or random search over learning rate and batch size
    Search {
        #[arg(long)]
        manifest: PathBuf,
        /// Output JSON file
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_augment: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on one split of a manifest
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output JSON file (default: standard output)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Which split to score
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        #[command(flatten)]
        common: Common,
    },
    /// Classify a WAV file, or raw 16-bit PCM from standard input, window by window
    Stream {
        #[arg(long)]
        checkpoint: PathBuf,
        /// WAV file to replay; omit to read PCM from standard input
        #[arg(long)]
        input: Option<PathBuf>,
        /// Sample rate of standard-input PCM
        #[arg(long)]
        rate: Option<u32>,
        #[arg(long)]
        window_s: Option<f64>,
        #[arg(long)]
        hop_s: Option<f64>,
        /// Replay the file at wall-clock rate
        #[arg(long)]
        realtime: bool,
        /// Event JSON lines (default: standard output)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the run summary here
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference audit of every layer and the micro network
    Gradcheck {
        /// Output JSON file (default: standard output)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Merge JSON outputs into one document keyed by file stem
    Report {
        /// Output JSON file
        #[arg(long)]
        out: PathBuf,
        /// JSON files to merge
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

/// Everything a config file may set. Missing sections take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub train: TrainConfig,
    pub network: NetworkConfig,
    pub synth: Option<SoundscapeConfig>,
    pub stream: StreamConfig,
    pub search: SearchSpace,
    pub k: usize,
    pub crossval_seeds: Vec<u64>,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            network: NetworkConfig::default(),
            synth: None,
            stream: StreamConfig::default(),
            search: SearchSpace::Grid {
                lrs: vec![3e-4, 1e-3, 3e-3],
                batch_sizes: vec![16, 32],
            },
            k: 5,
            crossval_seeds: vec![1, 2],
        }
    }
}

impl FileConfig {
    fn load(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        if let Some(s) = common.seed {
            cfg.train.seed = s;
        }
        Ok(cfg)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit_json(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn load_corpus(manifest: &Path, cfg: &TrainConfig) -> Result<Corpus> {
    let ds = Dataset::from_manifest(manifest)?;
    log::info!("{} clips, {} classes", ds.len(), ds.n_classes());
    Ok(Corpus::load(&ds, cfg.mel.sample_rate_hz)?)
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Synth { common, .. }
        | Command::Featurize { common, .. }
        | Command::Train { common, .. }
        | Command::Crossval { common, .. }
        | Command::Search { common, .. }
        | Command::Eval { common, .. }
        | Command::Stream { common, .. }
        | Command::Gradcheck { common, .. }
        | Command::Report { common, .. } => common,
    }
}

fn execute(cmd: Command) -> Result<()> {
    let common = common(&cmd).clone();
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut fc = FileConfig::load(&common)?;
    match cmd {
        Command::Synth { out, .. } => {
            let synth = fc.synth.clone().unwrap_or_default();
            let seed = common.seed.unwrap_or(fc.train.seed);
            let manifest = generate_dataset(&synth, &out, seed)?;
            write_json(&out.join("synth.json"), &json!({ "seed": seed, "config": synth }))?;
            println!("{}", json!({ "manifest": manifest }));
        }
        Command::Featurize { manifest, out, .. } => {
            let ds = Dataset::from_manifest(&manifest)?;
            let f = Featurizer::new(fc.train.mel.clone(), fc.train.normalization, 1)?;
            fs::create_dir_all(&out)?;
            let mut index = Vec::new();
            for (i, e) in ds.examples.iter().enumerate() {
                let clip = read_wav(&e.path)?;
                let clip = if clip.sample_rate_hz == fc.train.mel.sample_rate_hz {
                    clip
                } else {
                    crate::audio::resample(&clip, fc.train.mel.sample_rate_hz)?
                };
                let spec = f.log_mel(&clip)?;
                let name = format!("{i:05}.mel");
                save_spectrogram(&spec, out.join(&name))?;
                index.push(json!({ "file": name, "label": e.label, "species": e.species, "frames": spec.n_frames() }));
            }
            write_json(&out.join("index.json"), &json!({ "mel": fc.train.mel, "entries": index }))?;
        }
        Command::Train {
            manifest,
            out,
            no_augment,
            ..
        } => {
            if no_augment {
                fc.train.augment = None;
            }
            let corpus = load_corpus(&manifest, &fc.train)?;
            let (tr, va, te) = stratified_split(&corpus.labels, fc.train.split_ratios, fc.train.seed)?;
            let outcome = train_model(&corpus, &tr, &va, &fc.network, &fc.train)?;
            fs::create_dir_all(&out)?;
            save_checkpoint(&outcome.model, out.join("model.chkp"))?;
            save_checkpoint(&outcome.final_model, out.join("final.chkp"))?;
            let mut hist = BufWriter::new(File::create(out.join("history.jsonl"))?);
            for r in &outcome.history {
                writeln!(hist, "{}", serde_json::to_string(r)?)?;
            }
            hist.flush()?;
            let test: MetricsReport = evaluate_model(&outcome.model, &corpus.clips_at(&te), &corpus.labels_at(&te))?;
            write_json(
                &out.join("train_report.json"),
                &json!({
                    "config": fc,
                    "split_sizes": [tr.len(), va.len(), te.len()],
                    "best_epoch": outcome.best_epoch,
                    "history": outcome.history,
                    "test": test,
                }),
            )?;
            println!("{}", json!({ "test_accuracy": test.accuracy, "best_epoch": outcome.best_epoch }));
        }
        Command::Crossval {
            manifest,
            out,
            k,
            no_augment,
            ..
        } => {
            if no_augment {
                fc.train.augment = None;
            }
            if let Some(k) = k {
                fc.k = k;
            }
            let corpus = load_corpus(&manifest, &fc.train)?;
            let report = cross_validate(&corpus, &fc.network, &fc.train, fc.k, &fc.crossval_seeds)?;
            write_json(&out, &json!({ "config": fc, "report": report }))?;
        }
        Command::Search {
            manifest,
            out,
            no_augment,
            ..
        } => {
            if no_augment {
                fc.train.augment = None;
            }
            let corpus = load_corpus(&manifest, &fc.train)?;
            let (tr, va, _) = stratified_split(&corpus.labels, fc.train.split_ratios, fc.train.seed)?;
            let report = hyperparam_search(&corpus, &tr, &va, &fc.network, &fc.train, &fc.search, fc.train.seed)?;
            write_json(&out, &json!({ "config": fc, "report": report }))?;
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
            split,
            ..
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let corpus = load_corpus(&manifest, &TrainConfig {
                mel: model.mel.clone(),
                ..fc.train.clone()
            })?;
            if corpus.class_names != model.class_names {
                bail!("manifest classes {:?} differ from checkpoint classes {:?}", corpus.class_names, model.class_names);
            }
            let (tr, va, te) = stratified_split(&corpus.labels, fc.train.split_ratios, fc.train.seed)?;
            let idx = match split {
                SplitName::Train => tr,
                SplitName::Val => va,
                SplitName::Test => te,
                SplitName::All => (0..corpus.len()).collect(),
            };
            let report = evaluate_model(&model, &corpus.clips_at(&idx), &corpus.labels_at(&idx))?;
            emit_json(
                out.as_deref(),
                &json!({ "split": split, "seed": fc.train.seed, "split_ratios": fc.train.split_ratios, "metrics": report }),
            )?;
        }
        Command::Stream {
            checkpoint,
            input,
            rate,
            window_s,
            hop_s,
            realtime,
            out,
            summary,
            ..
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let mut sc = fc.stream.clone();
            if let Some(w) = window_s {
                sc.window_s = w;
            }
            if let Some(h) = hop_s {
                sc.hop_s = h;
            }
            sc.realtime_pacing |= realtime;
            let source = match input {
                Some(p) => {
                    let clip = read_wav(&p)?;
                    if let Some(r) = rate.filter(|&r| r != clip.sample_rate_hz) {
                        bail!("--rate {r} does not match {} Hz input", clip.sample_rate_hz);
                    }
                    StreamSource::Clip(clip)
                }
                None => StreamSource::Pcm {
                    reader: Box::new(io::stdin()),
                    rate_hz: rate.context("--rate is required when reading PCM from standard input")?,
                },
            };
            let mut sink: Box<dyn Write> = match &out {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(io::stdout().lock()),
            };
            let (s, _) = classify_stream(source, &model, &sc, &mut sink)?;
            sink.flush()?;
            if let Some(p) = summary {
                write_json(&p, &json!({ "config": sc, "summary": s }))?;
            }
        }
        Command::Gradcheck { out, .. } => {
            let seed = common.seed.unwrap_or(7);
            let mut checks = gradcheck::layer_checks(seed)?;
            checks.extend(gradcheck::network_check(seed)?);
            let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
            let passed = checks.iter().all(|c| c.passed());
            emit_json(
                out.as_deref(),
                &json!({
                    "seed": seed,
                    "tolerance": gradcheck::TOLERANCE,
                    "fd_step": gradcheck::FD_STEP,
                    "max_rel_error": worst,
                    "passed": passed,
                    "checks": checks,
                }),
            )?;
            if !passed {
                bail!("gradient check failed: max relative error {worst:e}");
            }
        }
        Command::Report { out, inputs, .. } => {
            let mut merged = serde_json::Map::new();
            for p in &inputs {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                let key = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
                merged.insert(key, v);
            }
            write_json(&out, &json!({ "reports": merged }))?;
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    json!({ "error": kind, "message": message }).to_string()
}

/// Parses `argv` and runs the command. Returns the process exit code:
/// 0 on success, 1 on runtime failure, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let message = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            let message = message.trim_start_matches("error: ");
            eprint!("{}", e.render());
            eprintln!("{}", error_line("usage", message));
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line("runtime", &format!("{e:#}")));
            1
        }
    }
}
