//! File-level orchestration shared by the command-line tool and the tests.
//!
//! Directory layout produced here:
//!
//! ```text
//! <synth out>/manifest.jsonl      raw/<id>.cmrw
//! <features out>/manifest.jsonl   features/<id>.cmft
//! <infer out>/predictions.csv     traces/<id>.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::evaluation::{evaluate, mean_rd, EvalRecord, Report};
use crate::features::io::{write_frames, FrameKind, Manifest, ManifestRecord};
use crate::features::synth::{generate_synthetic_dataset, SynthSpec};
use crate::features::{resample_labeled, train_frame_classifier, ClassifierConfig, FrameClassifier};
use crate::inference::{predict, trace_csv, AttentionKind, Moment};
use crate::model::{train, Mode, ModelParams, TrainConfig};
use crate::rng;
use crate::sequence::{Label, LabeledSequence, RawSequence};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generates a synthetic dataset into `out_dir` and returns its manifest.
pub fn write_synth(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    let data = generate_synthetic_dataset(spec)?;
    let manifest = Manifest::new(out_dir, data.records)?;
    for (seq, rec) in data.sequences.iter().zip(&manifest.records) {
        write_frames(&manifest.path_of(rec), FrameKind::Raw, seq.frames.as_tensor())?;
    }
    manifest.write(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

pub fn labeled_raw(manifest: &Manifest) -> Result<Vec<(RawSequence, Label)>> {
    Ok(manifest
        .load_raw()?
        .into_iter()
        .zip(manifest.records.iter().map(|r| r.label))
        .collect())
}

pub fn feature_path(id: &str) -> String {
    format!("features/{id}.cmft")
}

/// In-memory feature extraction; labels and moments are carried over.
pub fn extract_sequences(
    classifier: &FrameClassifier,
    records: &[ManifestRecord],
    raw: &[RawSequence],
) -> Result<Vec<LabeledSequence>> {
    records
        .par_iter()
        .zip(raw)
        .map(|(r, seq)| {
            let features = classifier.extract_features(seq)?;
            LabeledSequence::new(r.id.clone(), r.action.clone(), r.label, r.tau, features)
        })
        .collect()
}

/// Extracts features for every raw sequence of `raw_manifest` and writes them,
/// with a manifest pointing at them, into `out_dir`.
pub fn extract_to_dir(classifier: &FrameClassifier, raw_manifest: &Manifest, out_dir: &Path) -> Result<Manifest> {
    let raw = raw_manifest.load_raw()?;
    let sequences = extract_sequences(classifier, &raw_manifest.records, &raw)?;
    let records = raw_manifest
        .records
        .iter()
        .map(|r| ManifestRecord {
            features: feature_path(&r.id),
            ..r.clone()
        })
        .collect();
    let manifest = Manifest::new(out_dir, records)?;
    for (seq, rec) in sequences.iter().zip(&manifest.records) {
        write_frames(&manifest.path_of(rec), FrameKind::Features, seq.features.as_tensor())?;
    }
    manifest.write(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// One row of `predictions.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub action: String,
    pub len: usize,
    pub moment: Moment,
    pub objective: f64,
}

pub const PREDICTIONS_HEADER: &str = "id,action,len,moment,yhat_eff,objective";

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = format!("{PREDICTIONS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.17e}\n",
            r.id,
            r.action,
            r.len,
            r.moment,
            r.moment.effective(r.len),
            r.objective
        ));
    }
    out
}

fn model_for<'a>(models: &'a [ModelParams], action: &str) -> Result<&'a ModelParams> {
    models
        .iter()
        .find(|m| m.meta.action == action)
        .ok_or_else(|| Error::config(format!("no checkpoint for action {action:?}")))
}

/// Runs inference on every sequence, writing `predictions.csv` and one trace
/// per sequence under `traces/`.
pub fn infer_to_dir(
    models: &[ModelParams],
    dataset: &[LabeledSequence],
    attention: AttentionKind,
    out_dir: &Path,
) -> Result<Vec<PredictionRow>> {
    let results = dataset
        .par_iter()
        .map(|seq| {
            let model = model_for(models, &seq.action)?;
            let (pred, trace) = predict(model, &seq.features, attention)?;
            let row = PredictionRow {
                id: seq.id.clone(),
                action: seq.action.clone(),
                len: model.meta.length,
                moment: pred.moment,
                objective: pred.objective,
            };
            Ok((row, trace_csv(&trace)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(results.len());
    for (row, trace) in results {
        write_text(&out_dir.join("traces").join(format!("{}.csv", row.id)), &trace)?;
        rows.push(row);
    }
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    write_text(&out_dir.join("predictions.csv"), &predictions_csv(&rows))?;
    Ok(rows)
}

/// Uniform- and learnt-attention evaluation.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub report: Report,
    pub uniform: Vec<EvalRecord>,
    pub learnt: Vec<EvalRecord>,
}

/// Evaluates `learnt` with its own attention and the baseline with `1/T`.
/// The baseline is `uniform` (models trained without attention) when given,
/// otherwise `learnt` with its attention replaced at inference.
pub fn compare(learnt: &[ModelParams], uniform: Option<&[ModelParams]>, dataset: &[LabeledSequence]) -> Result<Comparison> {
    let mode = learnt.first().ok_or_else(|| Error::config("no checkpoints given"))?.meta.mode;
    let baseline = uniform.unwrap_or(learnt);
    if learnt.iter().chain(baseline).any(|m| m.meta.mode != mode) {
        return Err(Error::config("checkpoints mix weak and supervised models"));
    }
    if let Some(m) = learnt.iter().find(|m| m.meta.attention != AttentionKind::Learnt) {
        return Err(Error::config(format!("checkpoint for {:?} was trained without attention", m.meta.action)));
    }
    let uniform = evaluate(dataset, baseline, AttentionKind::Uniform)?;
    let learnt = evaluate(dataset, learnt, AttentionKind::Learnt)?;
    let report = Report::compare(mode, &uniform, &learnt)?;
    Ok(Comparison { report, uniform, learnt })
}

/// Synthetic benchmark: one action, lengths in [40, 64] resampled to 40,
/// raw frames separated so that the per-frame Bayes accuracy is about 0.9.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub train_complete: usize,
    pub train_incomplete: usize,
    pub test_complete: usize,
    pub test_incomplete: usize,
    pub d_raw: usize,
    pub d_feat: usize,
    pub t_range: [usize; 2],
    /// Target per-frame accuracy of the optimal pre/post classifier on raw frames.
    pub bayes_accuracy: f64,
    pub hidden: usize,
    /// Also train a model with attention held at `1/T` and use it as the
    /// uniform baseline, instead of substituting `1/T` into the learnt model.
    pub trained_baseline: bool,
}

impl BenchmarkConfig {
    pub fn new(seed: u64) -> Self {
        BenchmarkConfig {
            seed,
            train_complete: 100,
            train_incomplete: 100,
            test_complete: 50,
            test_incomplete: 50,
            d_raw: 8,
            d_feat: 16,
            t_range: [40, 64],
            bayes_accuracy: 0.9,
            hidden: 128,
            trained_baseline: false,
        }
    }

    /// Mean separation in units of the noise deviation: for two isotropic
    /// Gaussians the optimal per-frame accuracy is `Phi(delta / 2)`.
    pub fn separation(&self) -> f64 {
        2.0 * Normal::standard().inverse_cdf(self.bayes_accuracy)
    }

    /// Train and test specs. The test set uses an independent seed.
    pub fn specs(&self) -> (SynthSpec, SynthSpec) {
        let per_dim = self.separation() / (self.d_raw as f64).sqrt();
        let base = SynthSpec {
            action: "bench".into(),
            num_complete: self.train_complete,
            num_incomplete: self.train_incomplete,
            t_range: self.t_range,
            d_raw: self.d_raw,
            pre_mean: vec![0.0; self.d_raw],
            post_mean: vec![per_dim; self.d_raw],
            noise_std: 1.0,
            tau_fraction_range: [0.3, 0.8],
            seed: rng::stream(self.seed, "benchmark/train").gen(),
        };
        let test = SynthSpec {
            num_complete: self.test_complete,
            num_incomplete: self.test_incomplete,
            seed: rng::stream(self.seed, "benchmark/test").gen(),
            ..base.clone()
        };
        (base, test)
    }

    pub fn length(&self) -> usize {
        self.t_range[0]
    }
}

/// Fraction of frames of complete sequences that the optimal (nearest-mean)
/// rule puts on the correct side of the planted moment.
pub fn empirical_bayes_accuracy(spec: &SynthSpec, raw: &[RawSequence], records: &[ManifestRecord]) -> f64 {
    let (mut correct, mut total) = (0usize, 0usize);
    for (seq, rec) in raw.iter().zip(records) {
        let Some(tau) = rec.tau else { continue };
        for t in 0..seq.frames.len() {
            let x = seq.frames.frame(t);
            let d = |m: &[f64]| x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let says_post = d(&spec.post_mean) < d(&spec.pre_mean);
            correct += usize::from(says_post == (t + 1 >= tau));
            total += 1;
        }
    }
    correct as f64 / total as f64
}

#[derive(Clone, Debug)]
pub struct BenchmarkOutcome {
    pub mode: Mode,
    pub bayes_accuracy: f64,
    pub comparison: Comparison,
    pub learnt: ModelParams,
    pub uniform: Option<ModelParams>,
}

impl BenchmarkOutcome {
    pub fn rd_uniform(&self) -> f64 {
        mean_rd(&self.comparison.uniform)
    }

    pub fn rd_learnt(&self) -> f64 {
        mean_rd(&self.comparison.learnt)
    }
}

/// Full in-memory run: synthesize, fit the frame classifier on the training
/// split, extract, resample to the benchmark length, train, and compare
/// learnt attention against the uniform baseline.
pub fn run_benchmark(config: &BenchmarkConfig, mode: Mode) -> Result<BenchmarkOutcome> {
    let (train_spec, test_spec) = config.specs();
    let train_data = generate_synthetic_dataset(&train_spec)?;
    let test_data = generate_synthetic_dataset(&test_spec)?;
    let bayes_accuracy = empirical_bayes_accuracy(&test_spec, &test_data.sequences, &test_data.records);
    let labeled: Vec<(RawSequence, Label)> = train_data
        .sequences
        .iter()
        .cloned()
        .zip(train_data.records.iter().map(|r| r.label))
        .collect();
    let classifier = train_frame_classifier(
        &labeled,
        &ClassifierConfig {
            d_feat: config.d_feat,
            seed: config.seed,
            ..Default::default()
        },
    )?
    .classifier;
    let length = config.length();
    let resample = |seqs: Vec<LabeledSequence>| -> Result<Vec<LabeledSequence>> {
        seqs.iter().map(|s| resample_labeled(s, length)).collect()
    };
    let train_set = resample(extract_sequences(&classifier, &train_data.records, &train_data.sequences)?)?;
    let test_set = resample(extract_sequences(&classifier, &test_data.records, &test_data.sequences)?)?;
    let train_with = |attention| {
        let config = TrainConfig {
            hidden: config.hidden,
            seed: config.seed,
            attention,
            ..TrainConfig::defaults(mode)
        };
        train(&train_set, &config).map(|run| run.params)
    };
    let learnt = train_with(AttentionKind::Learnt)?;
    let uniform = if config.trained_baseline {
        Some(train_with(AttentionKind::Uniform)?)
    } else {
        None
    };
    let comparison = compare(std::slice::from_ref(&learnt), uniform.as_ref().map(std::slice::from_ref), &test_set)?;
    Ok(BenchmarkOutcome {
        mode,
        bayes_accuracy,
        comparison,
        learnt,
        uniform,
    })
}

/// Paths of every regular file under `dir`, sorted, relative to `dir`.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::io(dir, e.into()))?;
        if !entry.file_type().is_dir() {
            out.push(entry.path().strip_prefix(dir).expect("under root").to_path_buf());
        }
    }
    Ok(out)
}
