//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, read_checkpoint_meta, save_checkpoint};
use crate::data::{load_manifest, read_wav, synth_corpus, SynthConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, PathStructure};
use crate::nn::AdamState;
use crate::sinc::{write_filter_response_csv, WindowMode};
use crate::tensor::{Precision, Scalar};
use crate::trainer::{checkpoint_name, evaluate_cer, train, transcribe, Dataset, EpochRecord, TrainConfig};
use crate::verify::gradient_suite;
use crate::vocab::TokenVocabulary;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "sinc-asr", version, about = "Raw-waveform speech recognition with learnable sinc filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic tone corpus with manifest and vocabulary.
    SynthData(SynthArgs),
    /// Build a character vocabulary from one or more manifests.
    BuildVocab {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a JSON run configuration.
    Train(TrainArgs),
    /// Print the character error rate of a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Print the greedy transcript of one WAV file.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
    },
    /// Write the magnitude responses of learned sinc filters as CSV.
    InspectFilters {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient verification suite.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of utterances.
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Token characters, each mapped to its own tone.
    #[arg(long, default_value = "ABCDEF")]
    tokens: String,
    #[arg(long, default_value_t = 8000)]
    sample_rate: u32,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "single" | "f32" => Ok(Precision::Single),
        "double" | "f64" => Ok(Precision::Double),
        _ => Err(format!("expected single or double, got {s:?}")),
    }
}

/// The `model` section: a preset plus optional field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: String,
    pub structure: Option<PathStructure>,
    pub kernel_size: Option<usize>,
    pub channels: Option<usize>,
    pub conv_kernel: Option<usize>,
    pub pool: Option<usize>,
    pub lstm_layers: Option<usize>,
    pub lstm_hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub window_mode: Option<WindowMode>,
}

impl ModelSection {
    pub fn resolve(&self, vocab_size: usize, sample_rate: f64) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(&self.preset, vocab_size, sample_rate)?;
        if let Some(v) = self.structure {
            cfg.structure = v;
        }
        if let Some(v) = self.kernel_size {
            cfg.kernel_size = v;
        }
        if let Some(v) = self.channels {
            cfg.channels = v;
        }
        if let Some(v) = self.conv_kernel {
            cfg.conv_kernel = v;
        }
        if let Some(v) = self.pool {
            cfg.pool = v;
        }
        if let Some(v) = self.lstm_layers {
            cfg.lstm_layers = v;
        }
        if let Some(v) = self.lstm_hidden {
            cfg.lstm_hidden = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.window_mode {
            cfg.window_mode = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_manifest: PathBuf,
    pub dev_manifest: Option<PathBuf>,
    /// Built from the training transcripts when absent.
    pub vocab: Option<PathBuf>,
}

/// One experiment. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataSection,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data.train_manifest);
        if let Some(p) = cfg.data.dev_manifest.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.data.vocab.as_mut() {
            fix(p);
        }
        fix(&mut cfg.output_dir);
        if let Some(p) = cfg.train.checkpoint_dir.as_mut() {
            fix(p);
        }
        Ok(cfg)
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::SynthData(a) => synth(a),
        Command::BuildVocab { manifests, out } => build_vocab(&manifests, &out),
        Command::Train(a) => run_train(a),
        Command::Eval { checkpoint, manifest } => match read_checkpoint_meta(&checkpoint)?.precision {
            Precision::Single => eval::<f32>(&checkpoint, &manifest),
            Precision::Double => eval::<f64>(&checkpoint, &manifest),
        },
        Command::Decode { checkpoint, wav } => match read_checkpoint_meta(&checkpoint)?.precision {
            Precision::Single => decode::<f32>(&checkpoint, &wav),
            Precision::Double => decode::<f64>(&checkpoint, &wav),
        },
        Command::InspectFilters { checkpoint, out } => match read_checkpoint_meta(&checkpoint)?.precision {
            Precision::Single => inspect::<f32>(&checkpoint, &out),
            Precision::Double => inspect::<f64>(&checkpoint, &out),
        },
        Command::GradCheck { seeds } => {
            let mut ok = true;
            for rep in gradient_suite(seeds) {
                println!("{rep}");
                ok &= rep.passed;
            }
            Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}

fn synth(a: SynthArgs) -> Result<i32> {
    let cfg = SynthConfig {
        seed: a.seed,
        n_utterances: a.n,
        tokens: a.tokens.chars().map(String::from).collect(),
        sample_rate: a.sample_rate,
        noise: a.noise,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&cfg, &a.out)?;
    println!(
        "wrote {} utterances to {} (vocabulary {})",
        corpus.manifest.len(),
        corpus.manifest_path.display(),
        corpus.vocab_path.display()
    );
    Ok(EXIT_OK)
}

fn build_vocab(manifests: &[PathBuf], out: &Path) -> Result<i32> {
    let mut texts = Vec::new();
    for m in manifests {
        texts.extend(load_manifest(m)?.utterances.into_iter().map(|u| u.text));
    }
    let vocab = TokenVocabulary::build(&texts)?;
    vocab.save(out)?;
    println!("{} tokens written to {}", vocab.len(), out.display());
    Ok(EXIT_OK)
}

fn run_train(a: TrainArgs) -> Result<i32> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(p) = a.preset {
        cfg.model.preset = p;
    }
    if let Some(v) = a.epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.precision {
        cfg.train.precision = v;
    }
    if let Some(v) = a.out {
        cfg.output_dir = v;
    }
    if let Some(resume) = &a.resume {
        let stored = read_checkpoint_meta(resume)?.precision;
        if a.precision.is_some_and(|p| p != stored) {
            return Err(Error::Config("--precision conflicts with the resumed checkpoint".into()));
        }
        cfg.train.precision = stored;
    }
    match cfg.train.precision {
        Precision::Single => train_with::<f32>(cfg, a.resume.as_deref()),
        Precision::Double => train_with::<f64>(cfg, a.resume.as_deref()),
    }
}

fn train_with<T: Scalar>(mut cfg: RunConfig, resume: Option<&Path>) -> Result<i32> {
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let train_set = Dataset::load(load_manifest(&cfg.data.train_manifest)?)?;
    let dev_set = match &cfg.data.dev_manifest {
        Some(p) => Some(Dataset::load(load_manifest(p)?)?),
        None => None,
    };
    let sample_rate = train_set
        .clips
        .first()
        .map(|c| c.sample_rate as f64)
        .ok_or_else(|| Error::Invalid("training manifest is empty".into()))?;

    let (mut model, mut optimizer, vocab, start_epoch) = match resume {
        Some(path) => {
            let ck = load_checkpoint::<T>(path)?;
            let vocab = ck.meta.vocabulary()?;
            let optimizer = ck.optimizer.unwrap_or_else(|| AdamState::new(cfg.train.adam()));
            (ck.model, optimizer, vocab, ck.meta.epoch)
        }
        None => {
            let vocab = match &cfg.data.vocab {
                Some(p) => TokenVocabulary::load(p)?,
                None => {
                    let v = TokenVocabulary::build(&train_set.manifest.transcripts())?;
                    v.save(out.join("vocab.txt"))?;
                    v
                }
            };
            let model_cfg = cfg.model.resolve(vocab.len(), sample_rate)?;
            let model = Model::<T>::build(model_cfg, cfg.train.seed)?;
            (model, AdamState::new(cfg.train.adam()), vocab, 0)
        }
    };
    optimizer.config.lr = cfg.train.lr;
    if cfg.train.checkpoint_dir.is_none() {
        cfg.train.checkpoint_dir = Some(out.join("checkpoints"));
    }
    fs::write(out.join("config.json"), serde_json::to_vec_pretty(&cfg)?).map_err(|e| Error::io(&out, e))?;
    eprintln!(
        "model {} ({} structure, kernel {}): {} parameters",
        model.config.preset,
        model.config.structure,
        model.config.kernel_size,
        model.param_count()
    );

    let log_path = out.join("train_log.csv");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "{}", EpochRecord::CSV_HEADER).map_err(|e| Error::io(&log_path, e))?;
    let records = train(
        &mut model,
        &mut optimizer,
        &train_set,
        dev_set.as_ref(),
        &vocab,
        &cfg.train,
        start_epoch,
        |_, r| {
            writeln!(log, "{}", r.csv_line()).map_err(|e| Error::io(&log_path, e))?;
            println!("{}", r.csv_line());
            Ok(ControlFlow::Continue(()))
        },
    )?;
    let epoch = records.last().map_or(start_epoch, |r| r.epoch);
    let final_path = out.join("final.ckpt");
    save_checkpoint(&final_path, &model, Some(&optimizer), &vocab, epoch)?;
    if let Some(dir) = &cfg.train.checkpoint_dir {
        eprintln!("per-epoch checkpoints in {} (last {})", dir.display(), checkpoint_name(epoch));
    }
    println!("final checkpoint {}", final_path.display());
    Ok(EXIT_OK)
}

fn eval<T: Scalar>(checkpoint: &Path, manifest: &Path) -> Result<i32> {
    let ck = load_checkpoint::<T>(checkpoint)?;
    let vocab = ck.meta.vocabulary()?;
    let data = Dataset::load(load_manifest(manifest)?)?;
    let cer = evaluate_cer(&ck.model, &data, &vocab)?;
    println!("CER {cer:.4}");
    Ok(EXIT_OK)
}

fn decode<T: Scalar>(checkpoint: &Path, wav: &Path) -> Result<i32> {
    let ck = load_checkpoint::<T>(checkpoint)?;
    let vocab = ck.meta.vocabulary()?;
    let (samples, fs) = read_wav(wav)?;
    println!("{}", transcribe(&ck.model, &samples, fs, &vocab)?);
    Ok(EXIT_OK)
}

fn inspect<T: Scalar>(checkpoint: &Path, out: &Path) -> Result<i32> {
    let ck = load_checkpoint::<T>(checkpoint)?;
    let layers = ck.model.sinc_layers();
    if layers.is_empty() {
        return Err(Error::Invalid(format!(
            "model structure {} has no sinc layer",
            ck.model.config.structure
        )));
    }
    let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    write_filter_response_csv(&layers, std::io::BufWriter::new(file))?;
    println!("wrote responses of {} filters to {}", layers.iter().map(|l| l.params.num_filters()).sum::<usize>(), out.display());
    Ok(EXIT_OK)
}
