//! Frame-level classifier trained from propagated sequence labels. Its hidden
//! layer is the feature extractor.

use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Tape, Tensor2};
use crate::rng;
use crate::sequence::{FeatureSequence, Label, RawSequence};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` before taking logs.
pub const P_CLAMP: f64 = 1e-12;

/// `f(x) = tanh(W x + b)` followed by the head `f^c(f) = sigmoid(w . f + c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameClassifier {
    pub hidden_weights: Tensor2,
    pub hidden_bias: Tensor2,
    pub head_weights: Tensor2,
    pub head_bias: Tensor2,
}

impl FrameClassifier {
    pub const TENSOR_NAMES: [&'static str; 4] =
        ["hidden.weights", "hidden.bias", "head.weights", "head.bias"];

    /// Hidden weights uniform in `(-1/sqrt(D_raw), 1/sqrt(D_raw))`; the head starts at zero
    /// so the untrained classifier outputs exactly 0.5.
    pub fn init<R: Rng>(d_raw: usize, d_feat: usize, rng: &mut R) -> Self {
        let k = 1.0 / (d_raw as f64).sqrt();
        FrameClassifier {
            hidden_weights: Tensor2::from_fn(d_feat, d_raw, |_, _| rng.gen_range(-k..k)),
            hidden_bias: Tensor2::zeros(d_feat, 1),
            head_weights: Tensor2::zeros(1, d_feat),
            head_bias: Tensor2::zeros(1, 1),
        }
    }

    pub fn from_parts(
        hidden_weights: Tensor2,
        hidden_bias: Tensor2,
        head_weights: Tensor2,
        head_bias: Tensor2,
    ) -> Result<Self> {
        let (d_feat, _) = hidden_weights.shape();
        if hidden_bias.shape() != (d_feat, 1)
            || head_weights.shape() != (1, d_feat)
            || head_bias.shape() != (1, 1)
        {
            return Err(Error::shape("inconsistent frame classifier shapes"));
        }
        Ok(FrameClassifier {
            hidden_weights,
            hidden_bias,
            head_weights,
            head_bias,
        })
    }

    pub fn d_raw(&self) -> usize {
        self.hidden_weights.cols()
    }

    pub fn d_feat(&self) -> usize {
        self.hidden_weights.rows()
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor2); 4] {
        [
            (Self::TENSOR_NAMES[0], &self.hidden_weights),
            (Self::TENSOR_NAMES[1], &self.hidden_bias),
            (Self::TENSOR_NAMES[2], &self.head_weights),
            (Self::TENSOR_NAMES[3], &self.head_bias),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor2; 4] {
        [
            &mut self.hidden_weights,
            &mut self.hidden_bias,
            &mut self.head_weights,
            &mut self.head_bias,
        ]
    }

    fn check_input(&self, frames: &FeatureSequence) -> Result<()> {
        if frames.dim() != self.d_raw() {
            return Err(Error::shape(format!(
                "classifier expects {}-dim frames, got {}",
                self.d_raw(),
                frames.dim()
            )));
        }
        Ok(())
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let b = self.hidden_bias.data();
        (0..self.d_feat())
            .map(|r| {
                let z: f64 = self.hidden_weights.row(r).iter().zip(x).map(|(w, v)| w * v).sum();
                (z + b[r]).tanh()
            })
            .collect()
    }

    /// Probability that the frame belongs to a completed sequence.
    pub fn frame_probability(&self, x: &[f64]) -> f64 {
        let f = self.hidden(x);
        let z: f64 = self.head_weights.data().iter().zip(&f).map(|(w, v)| w * v).sum();
        sigmoid(z + self.head_bias.data()[0])
    }

    /// Penultimate activations for every frame; the head is discarded.
    pub fn extract_features(&self, raw: &RawSequence) -> Result<FeatureSequence> {
        self.check_input(&raw.frames)?;
        let t = raw.frames.len();
        let mut out = Tensor2::zeros(t, self.d_feat());
        for i in 0..t {
            out.row_mut(i).copy_from_slice(&self.hidden(raw.frames.frame(i)));
        }
        FeatureSequence::new(out)
    }

    /// Frame-level cross-entropy with the sequence label copied to every frame,
    /// summed over all frames of all sequences.
    pub fn loss(&self, data: &[(RawSequence, Label)]) -> Result<f64> {
        let mut total = 0.0;
        for (raw, label) in data {
            self.check_input(&raw.frames)?;
            let y = label.target();
            for t in 0..raw.frames.len() {
                let p = self.frame_probability(raw.frames.frame(t)).clamp(P_CLAMP, 1.0 - P_CLAMP);
                total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
        }
        Ok(total)
    }

    /// Loss and gradients (in [`Self::TENSOR_NAMES`] order) for one sequence.
    pub fn sequence_gradients(&self, raw: &RawSequence, label: Label) -> Result<(f64, [Tensor2; 4])> {
        self.check_input(&raw.frames)?;
        let mut tape = Tape::new();
        let [hw, hb, ow, ob] = self.tensors().map(|(_, t)| tape.leaf(t.clone()));
        let mut logits = Vec::with_capacity(raw.frames.len());
        for t in 0..raw.frames.len() {
            let x = tape.leaf(Tensor2::column(raw.frames.frame(t).to_vec()));
            let z = tape.matvec(hw, x)?;
            let z = tape.add(z, hb)?;
            let f = tape.tanh(z)?;
            let z = tape.matvec(ow, f)?;
            logits.push(tape.add(z, ob)?);
        }
        let z = tape.stack(&logits)?;
        let p = tape.sigmoid(z)?;
        let p = tape.clamp(p, P_CLAMP, 1.0 - P_CLAMP)?;
        let target = match label {
            Label::Complete => p,
            Label::Incomplete => {
                let q = tape.scale(p, -1.0)?;
                tape.offset(q, 1.0)?
            }
        };
        let logs = tape.ln(target)?;
        let total = tape.sum(logs)?;
        let loss = tape.scale(total, -1.0)?;
        let grads = tape.backward(loss)?;
        let value = tape.scalar(loss)?;
        Ok((value, [grads.wrt(hw)?, grads.wrt(hb)?, grads.wrt(ow)?, grads.wrt(ob)?]))
    }
}

const CLASSIFIER_MAGIC: &[u8; 4] = b"CMFC";

impl FrameClassifier {
    /// Checkpoint image: the tensor container under magic `CMFC`, with
    /// `u32 D_raw, u32 D_feat` as metadata.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = Vec::with_capacity(8);
        meta.extend_from_slice(&(self.d_raw() as u32).to_le_bytes());
        meta.extend_from_slice(&(self.d_feat() as u32).to_le_bytes());
        checkpoint::encode(CLASSIFIER_MAGIC, &meta, &self.tensors())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut decoded = checkpoint::decode(CLASSIFIER_MAGIC, bytes, path)?;
        let mut meta = checkpoint::Cursor::new(&decoded.metadata, path);
        let d_raw = meta.u32("D_raw")? as usize;
        let d_feat = meta.u32("D_feat")? as usize;
        meta.finish()?;
        let t = &mut decoded.tensors;
        let hidden_weights = checkpoint::take_tensor(t, Self::TENSOR_NAMES[0], (d_feat, d_raw), path)?;
        let hidden_bias = checkpoint::take_tensor(t, Self::TENSOR_NAMES[1], (d_feat, 1), path)?;
        let head_weights = checkpoint::take_tensor(t, Self::TENSOR_NAMES[2], (1, d_feat), path)?;
        let head_bias = checkpoint::take_tensor(t, Self::TENSOR_NAMES[3], (1, 1), path)?;
        FrameClassifier::from_parts(hidden_weights, hidden_bias, head_weights, head_bias)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&checkpoint::read_file(path)?, path)
    }
}

/// Step schedule: `base_lr`, divided by 10 at each listed (1-based) epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub d_feat: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_drop_epochs: Vec<usize>,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            d_feat: 16,
            epochs: 20,
            base_lr: 1e-3,
            lr_drop_epochs: vec![3, 5],
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&e| e <= epoch).count();
        self.base_lr / 10f64.powi(drops as i32)
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierRun {
    pub classifier: FrameClassifier,
    /// Mean per-frame loss before training, then after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Per-sequence gradient descent on the propagated-label loss.
pub fn train_frame_classifier(data: &[(RawSequence, Label)], config: &ClassifierConfig) -> Result<ClassifierRun> {
    let first = data.first().ok_or_else(|| Error::config("no sequences to train on"))?;
    if !data.iter().any(|(_, l)| *l == Label::Complete) || !data.iter().any(|(_, l)| *l == Label::Incomplete) {
        return Err(Error::config(
            "frame classifier needs both complete and incomplete sequences",
        ));
    }
    if config.d_feat == 0 || !(config.base_lr > 0.0) {
        return Err(Error::config("d_feat and base_lr must be positive"));
    }
    let d_raw = first.0.frames.dim();
    let mut classifier = FrameClassifier::init(d_raw, config.d_feat, &mut rng::stream(config.seed, "features/init"));
    let frames: usize = data.iter().map(|(r, _)| r.frames.len()).sum();
    let mut epoch_losses = vec![classifier.loss(data)? / frames as f64];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=config.epochs {
        let lr = config.learning_rate(epoch);
        order.shuffle(&mut rng::stream(config.seed, &format!("features/shuffle/{epoch}")));
        for &i in &order {
            let (raw, label) = &data[i];
            let (_, grads) = classifier.sequence_gradients(raw, *label)?;
            for (p, g) in classifier.tensors_mut().into_iter().zip(&grads) {
                p.sub_scaled(g, lr);
            }
        }
        let loss = classifier.loss(data)? / frames as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("frame classifier diverged at epoch {epoch}")));
        }
        info!("features epoch {epoch}: lr {lr:e}, mean frame loss {loss:.6}");
        epoch_losses.push(loss);
    }
    Ok(ClassifierRun {
        classifier,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::synth::{generate_synthetic_dataset, tests::small_spec, SynthSpec};
    use crate::numerics::finite_difference_gradient;

    fn labeled(spec: &SynthSpec) -> Vec<(RawSequence, Label)> {
        let data = generate_synthetic_dataset(spec).unwrap();
        data.sequences
            .into_iter()
            .zip(data.records.iter().map(|r| r.label))
            .collect()
    }

    #[test]
    fn identity_hidden_layer_extracts_tanh() {
        let c = FrameClassifier::from_parts(
            Tensor2::identity(3),
            Tensor2::zeros(3, 1),
            Tensor2::zeros(1, 3),
            Tensor2::zeros(1, 1),
        )
        .unwrap();
        let frames = Tensor2::from_rows(&[vec![0.5, -1.0, 2.0], vec![0.5, -1.0, 2.0]]).unwrap();
        let raw = RawSequence { id: "r".into(), frames: FeatureSequence::new(frames).unwrap() };
        let f = c.extract_features(&raw).unwrap();
        assert_eq!(f.frame(0), &[0.5f64.tanh(), (-1f64).tanh(), 2f64.tanh()]);
        assert_eq!(f.frame(0), f.frame(1));
    }

    #[test]
    fn features_are_per_frame() {
        let c = FrameClassifier::init(3, 5, &mut rng::stream(1, "t"));
        let data = labeled(&small_spec());
        let raw = &data[0].0;
        let base = c.extract_features(raw).unwrap();
        let mut bumped = raw.frames.as_tensor().clone();
        bumped.set(2, 0, bumped.get(2, 0) + 1.0);
        let other = c
            .extract_features(&RawSequence { id: "x".into(), frames: FeatureSequence::new(bumped).unwrap() })
            .unwrap();
        for t in 0..raw.frames.len() {
            assert_eq!(t == 2, base.frame(t) != other.frame(t));
        }
        let wrong = RawSequence { id: "w".into(), frames: FeatureSequence::new(Tensor2::zeros(2, 4)).unwrap() };
        assert!(matches!(c.extract_features(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn loss_matches_direct_sum() {
        let data = labeled(&small_spec());
        let c = FrameClassifier::init(3, 4, &mut rng::stream(2, "t"));
        let c = FrameClassifier { head_weights: Tensor2::from_vec(1, 4, vec![0.4, -0.3, 0.9, 0.1]).unwrap(), ..c };
        let mut direct = 0.0;
        for (raw, label) in &data {
            let y = label.target();
            for t in 0..raw.frames.len() {
                let x = raw.frames.frame(t);
                let h: Vec<f64> = (0..4)
                    .map(|r| (0..3).map(|k| c.hidden_weights.get(r, k) * x[k]).sum::<f64>().tanh())
                    .collect();
                let z: f64 = (0..4).map(|k| c.head_weights.get(0, k) * h[k]).sum();
                let p = 1.0 / (1.0 + (-z).exp());
                direct += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            }
        }
        assert!((c.loss(&data).unwrap() - direct).abs() < 1e-10);
        let (tape_loss, _) = c.sequence_gradients(&data[0].0, data[0].1).unwrap();
        assert!((tape_loss - c.loss(&data[..1]).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn untrained_loss_is_ln2_per_frame() {
        let data = labeled(&small_spec());
        let run = train_frame_classifier(&data, &ClassifierConfig { epochs: 0, ..Default::default() }).unwrap();
        assert!((run.epoch_losses[0] - 2f64.ln()).abs() < 1e-12);
        let init = FrameClassifier::init(3, 16, &mut rng::stream(0, "features/init"));
        assert_eq!(run.classifier, init);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = labeled(&small_spec());
        let c = FrameClassifier::init(3, 4, &mut rng::stream(3, "t"));
        let c = FrameClassifier { head_weights: Tensor2::from_vec(1, 4, vec![0.7, -0.2, 0.3, -0.5]).unwrap(), ..c };
        for (raw, label) in data.iter().take(2) {
            let (_, grads) = c.sequence_gradients(raw, *label).unwrap();
            for (k, g) in grads.iter().enumerate() {
                let base: Vec<f64> = c.tensors()[k].1.data().to_vec();
                let f = |p: &[f64]| {
                    let mut probe = c.clone();
                    probe.tensors_mut()[k].data_mut().copy_from_slice(p);
                    probe.loss(&[(raw.clone(), *label)]).unwrap()
                };
                let numeric = finite_difference_gradient(f, &base, 1e-5).unwrap();
                let report = crate::numerics::GradReport::compare("frame", FrameClassifier::TENSOR_NAMES[k], g.data(), &numeric, 1e-5, 1e-4);
                assert!(report.pass, "{report:?}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = FrameClassifier::init(3, 5, &mut rng::stream(4, "t"));
        let bytes = c.to_bytes();
        let back = FrameClassifier::from_bytes(&bytes, Path::new("c")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn single_class_is_config_error() {
        let spec = SynthSpec { num_incomplete: 0, ..small_spec() };
        let r = train_frame_classifier(&labeled(&spec), &ClassifierConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn learns_separable_post_completion_frames() {
        let spec = SynthSpec {
            num_complete: 20,
            num_incomplete: 20,
            post_mean: vec![2.0, -2.0, 2.0],
            noise_std: 0.3,
            ..small_spec()
        };
        let train = labeled(&spec);
        let config = ClassifierConfig { epochs: 20, seed: 5, ..Default::default() };
        let run = train_frame_classifier(&train, &config).unwrap();
        assert!(run.epoch_losses.last().unwrap() < &run.epoch_losses[0]);
        let held_out = generate_synthetic_dataset(&SynthSpec { seed: 99, ..spec }).unwrap();
        let (mut hit, mut total) = (0, 0);
        for (seq, rec) in held_out.sequences.iter().zip(&held_out.records) {
            if let Some(tau) = rec.tau {
                for t in tau - 1..seq.frames.len() {
                    total += 1;
                    hit += usize::from(run.classifier.frame_probability(seq.frames.frame(t)) > 0.5);
                }
            }
        }
        let acc = hit as f64 / total as f64;
        assert!(acc > 0.9, "post-completion frame accuracy {acc}");
    }
}
