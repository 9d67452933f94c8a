//! `cmoment`: synthetic data, feature extraction, training, inference,
//! evaluation and gradient verification from the command line.

mod settings;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use completion_moment::evaluation::{emit_report, records_csv};
use completion_moment::features::{train_frame_classifier, ClassifierConfig, FrameClassifier, Manifest, SynthSpec};
use completion_moment::inference::{detect_completion_weak, scores_from_trace_csv, AttentionKind};
use completion_moment::model::{self, LossVariant, Mode, ModelParams, TrainConfig};
use completion_moment::pipeline::{self, write_text};
use completion_moment::verify::{run_gradcheck, summarize, GradcheckConfig};
use settings::Settings;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, inputs or files: exit status 1.
    Config(String),
    /// Numeric failure or failed verification: exit status 2.
    Failure(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Failure(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<completion_moment::Error> for CliError {
    fn from(e: completion_moment::Error) -> Self {
        match e {
            completion_moment::Error::Numeric(_) => CliError::Failure(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "cmoment", version, about = "Completion moment detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (raw frames + manifest).
    Synth {
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        out: Option<String>,
        /// Overrides the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the frame classifier on raw frames and extract features.
    TrainFeatures {
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        d_feat: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Classifier checkpoint path.
        #[arg(long)]
        out: Option<String>,
        /// Directory for feature files and their manifest (default: next to the checkpoint).
        #[arg(long)]
        features_out: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Extract features with an existing classifier checkpoint.
    Extract {
        #[arg(long)]
        ckpt: Option<String>,
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the attention and completion networks.
    Train {
        #[arg(long)]
        manifest: Option<String>,
        /// weak | supervised
        #[arg(long)]
        mode: Option<Mode>,
        /// literal | log (weak mode)
        #[arg(long)]
        variant: Option<LossVariant>,
        /// learnt | uniform
        #[arg(long)]
        attention: Option<AttentionKind>,
        /// Total epochs (weak default 10, supervised default 15).
        #[arg(long)]
        epochs: Option<usize>,
        /// Supervised epochs that train the completion network alone.
        #[arg(long)]
        score_only_epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_decay_after: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Train on one action of a multi-action manifest.
        #[arg(long)]
        action: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Predict completion moments and dump per-sequence traces.
    Infer {
        /// Model checkpoint; repeat for several actions.
        #[arg(long)]
        ckpt: Vec<String>,
        #[arg(long)]
        manifest: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        uniform_attention: bool,
        /// Run the weak detector on the `s` column of a trace CSV instead.
        #[arg(long, conflicts_with_all = ["ckpt", "manifest"])]
        trace: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare uniform and learnt attention on a labelled manifest.
    Eval {
        #[arg(long)]
        ckpt: Vec<String>,
        /// Models trained with uniform attention to use as the baseline;
        /// without them the baseline replaces attention in `--ckpt` by 1/T.
        #[arg(long)]
        uniform_ckpt: Vec<String>,
        #[arg(long)]
        manifest: Option<String>,
        /// Report CSV path; a .txt table and per-sequence records go next to it.
        #[arg(long)]
        out: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tol: Option<f64>,
        /// Number of random instances.
        #[arg(long)]
        seeds: Option<usize>,
        /// Step of the extrapolated central difference.
        #[arg(long)]
        eps: Option<f64>,
        /// Perturb the analytic gradient of this tensor (self-test of the gate).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn snapshot_next_to(settings: &Settings, command: &str, dir: &Path) -> CliResult {
    write_text(&dir.join("resolved.conf"), &settings.snapshot(command))?;
    Ok(())
}

fn snapshot_for_file(settings: &Settings, command: &str, file: &Path) -> CliResult {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".conf");
    write_text(&file.with_file_name(name), &settings.snapshot(command))?;
    Ok(())
}

fn load_models(paths: &[String]) -> CliResult<Vec<ModelParams>> {
    paths.iter().map(|p| Ok(model::checkpoint::load(Path::new(p))?)).collect()
}

fn synth(spec: Option<String>, out: Option<String>, seed: Option<u64>, mut s: Settings) -> CliResult {
    let spec_path: String = s.required("spec", spec)?;
    let out: String = s.required("out", out)?;
    let seed = s.optional("seed", seed)?;
    s.finish()?;
    let text = fs::read_to_string(&spec_path).map_err(|e| CliError::Config(format!("{spec_path}: {e}")))?;
    let mut spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{spec_path}: {e}")))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate()?;
    if spec.num_incomplete == 0 {
        warn!("spec has no incomplete sequences; weak training on this data will be refused");
    }
    let out = PathBuf::from(out);
    let manifest = pipeline::write_synth(&spec, &out)?;
    snapshot_next_to(&s, "synth", &out)?;
    info!("wrote {} sequences to {}", manifest.records.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_features(
    manifest: Option<String>,
    epochs: Option<usize>,
    d_feat: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    out: Option<String>,
    features_out: Option<String>,
    mut s: Settings,
) -> CliResult {
    let defaults = ClassifierConfig::default();
    let manifest_path: String = s.required("manifest", manifest)?;
    let config = ClassifierConfig {
        epochs: s.value("epochs", epochs, defaults.epochs)?,
        d_feat: s.value("d-feat", d_feat, defaults.d_feat)?,
        base_lr: s.value("lr", lr, defaults.base_lr)?,
        seed: s.value("seed", seed, 0)?,
        ..defaults
    };
    let out = PathBuf::from(s.required::<String>("out", out)?);
    let default_dir = out.parent().map(|p| p.join("features")).unwrap_or_else(|| "features".into());
    let features_out = PathBuf::from(s.value("features-out", features_out, default_dir.display().to_string())?);
    s.finish()?;
    let raw = Manifest::read(Path::new(&manifest_path))?;
    let run = train_frame_classifier(&pipeline::labeled_raw(&raw)?, &config)?;
    run.classifier.save(&out)?;
    snapshot_for_file(&s, "train-features", &out)?;
    let features = pipeline::extract_to_dir(&run.classifier, &raw, &features_out)?;
    info!(
        "classifier saved to {}; {} feature files in {}",
        out.display(),
        features.records.len(),
        features_out.display()
    );
    Ok(())
}

fn extract(ckpt: Option<String>, manifest: Option<String>, out: Option<String>, mut s: Settings) -> CliResult {
    let ckpt: String = s.required("ckpt", ckpt)?;
    let manifest: String = s.required("manifest", manifest)?;
    let out = PathBuf::from(s.required::<String>("out", out)?);
    s.finish()?;
    let classifier = FrameClassifier::load(Path::new(&ckpt))?;
    let raw = Manifest::read(Path::new(&manifest))?;
    pipeline::extract_to_dir(&classifier, &raw, &out)?;
    snapshot_next_to(&s, "extract", &out)?;
    Ok(())
}

fn gradcheck(
    seed: Option<u64>,
    tol: Option<f64>,
    seeds: Option<usize>,
    eps: Option<f64>,
    corrupt: Option<String>,
    mut s: Settings,
) -> CliResult {
    let defaults = GradcheckConfig::default();
    let config = GradcheckConfig {
        seed: s.value("seed", seed, defaults.seed)?,
        tolerance: s.value("tol", tol, defaults.tolerance)?,
        seeds: s.value("seeds", seeds, defaults.seeds)?,
        eps: s.value("eps", eps, defaults.eps)?,
        corrupt: s.optional("corrupt", corrupt)?,
        ..defaults
    };
    s.finish()?;
    let reports = run_gradcheck(&config)?;
    println!("{:<14} {:<28} {:>14} {:>10} {:>10}  result", "case", "tensor", "max rel err", "eps", "tol");
    for r in summarize(&reports) {
        println!(
            "{:<14} {:<28} {:>14.3e} {:>10.1e} {:>10.1e}  {}",
            r.case,
            r.tensor,
            r.max_rel_error,
            r.eps,
            r.tolerance,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.pass).collect();
    if failed.is_empty() {
        println!("gradcheck passed: {} comparisons over {} instances", reports.len(), config.seeds);
        Ok(())
    } else {
        let mut names: Vec<&str> = failed.iter().map(|r| r.tensor.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        Err(CliError::Failure(format!(
            "gradcheck failed: {} of {} comparisons exceed tolerance {:e}; tensors: {}",
            failed.len(),
            reports.len(),
            config.tolerance,
            names.join(", ")
        )))
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth { spec, out, seed, common } => synth(spec, out, seed, Settings::load(common.config.as_deref())?),
        Command::TrainFeatures {
            manifest,
            epochs,
            d_feat,
            lr,
            seed,
            out,
            features_out,
            common,
        } => train_features(
            manifest,
            epochs,
            d_feat,
            lr,
            seed,
            out,
            features_out,
            Settings::load(common.config.as_deref())?,
        ),
        Command::Extract { ckpt, manifest, out, common } => {
            extract(ckpt, manifest, out, Settings::load(common.config.as_deref())?)
        }
        Command::Train {
            manifest,
            mode,
            variant,
            attention,
            epochs,
            score_only_epochs,
            lr,
            lr_decay_after,
            hidden,
            seed,
            action,
            out,
            common,
        } => {
            let mut s = Settings::load(common.config.as_deref())?;
            let manifest: String = s.required("manifest", manifest)?;
            let mode = s.value("mode", mode, Mode::Weak)?;
            let d = TrainConfig::defaults(mode);
            let config = TrainConfig {
                mode,
                variant: s.value("variant", variant, d.variant)?,
                attention: s.value("attention", attention, d.attention)?,
                epochs: s.value("epochs", epochs, d.epochs)?,
                score_only_epochs: s.value("score-only-epochs", score_only_epochs, d.score_only_epochs)?,
                base_lr: s.value("lr", lr, d.base_lr)?,
                lr_decay_after: s.value("lr-decay-after", lr_decay_after, d.lr_decay_after)?,
                hidden: s.value("hidden", hidden, d.hidden)?,
                seed: s.value("seed", seed, d.seed)?,
                ..d
            };
            let action = s.optional("action", action)?;
            let out = PathBuf::from(s.required::<String>("out", out)?);
            s.finish()?;
            let mut m = Manifest::read(Path::new(&manifest))?;
            if let Some(action) = &action {
                m = m.filter_action(action)?;
            }
            if mode == Mode::Weak {
                m.check_weak_ready()?;
            }
            info!(
                "training {mode} model: {} epochs ({} score-only), lr {:e} then {:e} after epoch {}",
                config.epochs,
                if mode == Mode::Supervised { config.score_only_epochs.min(config.epochs) } else { 0 },
                config.base_lr,
                config.base_lr / config.lr_decay_factor,
                config.lr_decay_after
            );
            let run = model::train(&m.load_features()?, &config)?;
            model::checkpoint::save(&run.params, &out)?;
            snapshot_for_file(&s, "train", &out)?;
            Ok(())
        }
        Command::Infer {
            ckpt,
            manifest,
            out,
            uniform_attention,
            trace,
            common,
        } => {
            let mut s = Settings::load(common.config.as_deref())?;
            if let Some(trace) = s.optional::<String>("trace", trace)? {
                s.finish()?;
                let text = fs::read_to_string(&trace).map_err(|e| CliError::Config(format!("{trace}: {e}")))?;
                let pred = detect_completion_weak(&scores_from_trace_csv(&text)?)?;
                println!("moment {}", pred.moment);
                println!("objective {}", pred.objective);
                return Ok(());
            }
            let ckpt = s.list("ckpt", ckpt)?;
            if ckpt.is_empty() {
                return Err(CliError::Config("--ckpt is required (flag or config file)".into()));
            }
            let manifest: String = s.required("manifest", manifest)?;
            let out = PathBuf::from(s.required::<String>("out", out)?);
            let uniform = s.flag("uniform-attention", uniform_attention)?;
            s.finish()?;
            let models = load_models(&ckpt)?;
            let dataset = Manifest::read(Path::new(&manifest))?.load_features()?;
            let attention = if uniform { AttentionKind::Uniform } else { AttentionKind::Learnt };
            let rows = pipeline::infer_to_dir(&models, &dataset, attention, &out)?;
            snapshot_next_to(&s, "infer", &out)?;
            info!("{} predictions written to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Eval {
            ckpt,
            uniform_ckpt,
            manifest,
            out,
            common,
        } => {
            let mut s = Settings::load(common.config.as_deref())?;
            let ckpt = s.list("ckpt", ckpt)?;
            if ckpt.is_empty() {
                return Err(CliError::Config("--ckpt is required (flag or config file)".into()));
            }
            let uniform_ckpt = s.list("uniform-ckpt", uniform_ckpt)?;
            let manifest: String = s.required("manifest", manifest)?;
            let out = PathBuf::from(s.required::<String>("out", out)?);
            s.finish()?;
            let learnt = load_models(&ckpt)?;
            let baseline = load_models(&uniform_ckpt)?;
            let dataset = Manifest::read(Path::new(&manifest))?.load_features()?;
            let cmp = pipeline::compare(&learnt, (!baseline.is_empty()).then_some(baseline.as_slice()), &dataset)?;
            let table = emit_report(&cmp.report, &out)?;
            let dir = out.parent().unwrap_or(Path::new(""));
            write_text(&dir.join("records_uniform.csv"), &records_csv(&cmp.uniform))?;
            write_text(&dir.join("records_learnt.csv"), &records_csv(&cmp.learnt))?;
            snapshot_for_file(&s, "eval", &out)?;
            print!("{table}");
            Ok(())
        }
        Command::Gradcheck {
            seed,
            tol,
            seeds,
            eps,
            corrupt,
            common,
        } => gradcheck(seed, tol, seeds, eps, corrupt, Settings::load(common.config.as_deref())?),
    }
}

fn configure_threads() -> CliResult {
    let Ok(v) = std::env::var("CM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("CM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
