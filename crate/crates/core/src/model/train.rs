use log::info;
use rand::seq::SliceRandom;

use super::forward::{forward, record};
use super::loss::{record_supervised_loss, record_weak_loss, supervised_loss, supervised_tau, weak_loss_term, weak_sequence_prediction};
use super::params::{AttentionKind, LossVariant, ModelMeta, ModelParams, Mode};
use crate::error::{Error, Result};
use crate::features::resample_labeled;
use crate::numerics::{Tape, Tensor2};
use crate::rng;
use crate::sequence::{Label, LabeledSequence};

/// The objective a gradient step descends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Weak(LossVariant),
    Supervised,
}

impl Objective {
    pub fn for_meta(meta: &ModelMeta) -> Self {
        match meta.mode {
            Mode::Weak => Objective::Weak(meta.variant),
            Mode::Supervised => Objective::Supervised,
        }
    }
}

/// Loss of one (already resampled) sequence, from the pure forward pass.
pub fn sequence_loss(p: &ModelParams, seq: &LabeledSequence, objective: Objective) -> Result<f64> {
    let trace = forward(p, &seq.features)?;
    match objective {
        Objective::Weak(v) => Ok(weak_loss_term(weak_sequence_prediction(&trace), seq.label, v)),
        Objective::Supervised => supervised_loss(&trace, supervised_tau(seq)?),
    }
}

/// Loss and reverse-mode gradients in [`super::params::TENSOR_NAMES`] order.
pub fn sequence_gradients(
    p: &ModelParams,
    seq: &LabeledSequence,
    objective: Objective,
) -> Result<(f64, [Tensor2; 10])> {
    let mut tape = Tape::new();
    let rec = record(&mut tape, p, &seq.features)?;
    let loss = match objective {
        Objective::Weak(v) => record_weak_loss(&mut tape, &rec, seq.label, v)?,
        Objective::Supervised => record_supervised_loss(&mut tape, &rec, supervised_tau(seq)?)?,
    };
    let grads = tape.backward(loss)?;
    let mut out: [Tensor2; 10] = std::array::from_fn(|_| Tensor2::zeros(0, 0));
    for (slot, var) in out.iter_mut().zip(rec.params.0) {
        *slot = grads.wrt(var)?;
    }
    Ok((tape.scalar(loss)?, out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub variant: LossVariant,
    pub hidden: usize,
    /// Total epochs. In supervised mode the first `score_only_epochs` of them
    /// train the completion branch alone.
    pub epochs: usize,
    pub score_only_epochs: usize,
    /// `Uniform` keeps attention at `1/T` for the whole run.
    pub attention: AttentionKind,
    pub base_lr: f64,
    /// Epochs after this one use `base_lr / lr_decay_factor`.
    pub lr_decay_after: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// 10 joint epochs (weak) or 10 score-only plus 5 joint epochs
    /// (supervised); learning rate 1e-2, then 1e-3 from epoch 6.
    pub fn defaults(mode: Mode) -> Self {
        TrainConfig {
            mode,
            variant: LossVariant::Literal,
            hidden: 128,
            epochs: match mode {
                Mode::Weak => 10,
                Mode::Supervised => 15,
            },
            score_only_epochs: 10,
            attention: AttentionKind::Learnt,
            base_lr: 1e-2,
            lr_decay_after: 5,
            lr_decay_factor: 10.0,
            seed: 0,
        }
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch > self.lr_decay_after {
            self.base_lr / self.lr_decay_factor
        } else {
            self.base_lr
        }
    }

    /// Whether the attention branch is updated in `epoch` (1-based).
    pub fn trains_attention(&self, epoch: usize) -> bool {
        self.attention == AttentionKind::Learnt && (self.mode == Mode::Weak || epoch > self.score_only_epochs)
    }

    fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.lr_decay_factor > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub params: ModelParams,
    /// Mean per-sequence loss over each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
}

/// Checks preconditions and fixes the common length (the shortest sequence).
pub fn prepare(dataset: &[LabeledSequence], mode: Mode) -> Result<(String, usize, usize)> {
    let first = dataset.first().ok_or_else(|| Error::config("empty training set"))?;
    if let Some(other) = dataset.iter().find(|s| s.action != first.action) {
        return Err(Error::config(format!(
            "one model per action: found {:?} and {:?}",
            first.action, other.action
        )));
    }
    let d_feat = first.features.dim();
    if dataset.iter().any(|s| s.features.dim() != d_feat) {
        return Err(Error::config("feature dimension differs across sequences"));
    }
    match mode {
        Mode::Weak => {
            let has = |l| dataset.iter().any(|s| s.label == l);
            if !has(Label::Complete) || !has(Label::Incomplete) {
                return Err(Error::config(
                    "weak training needs both complete and incomplete sequences",
                ));
            }
        }
        Mode::Supervised => {
            for s in dataset {
                supervised_tau(s)?;
            }
        }
    }
    let length = dataset.iter().map(LabeledSequence::len).min().expect("non-empty");
    Ok((first.action.clone(), d_feat, length))
}

/// Per-sequence gradient descent over shuffled sequences.
pub fn train(dataset: &[LabeledSequence], config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    let (action, d_feat, length) = prepare(dataset, config.mode)?;
    let data = dataset
        .iter()
        .map(|s| resample_labeled(s, length))
        .collect::<Result<Vec<_>>>()?;
    let meta = ModelMeta {
        d_feat,
        hidden: config.hidden,
        length,
        mode: config.mode,
        variant: config.variant,
        attention: config.attention,
        action,
    };
    let objective = Objective::for_meta(&meta);
    let mut params = ModelParams::init(meta, config.seed)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let lr = config.learning_rate(epoch);
        let first_trainable = if config.trains_attention(epoch) { 0 } else { 5 };
        order.shuffle(&mut rng::stream(config.seed, &format!("train/shuffle/{epoch}")));
        let mut total = 0.0;
        for &i in &order {
            let (loss, grads) = sequence_gradients(&params, &data[i], objective)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged at epoch {epoch} on {}", data[i].id)));
            }
            total += loss;
            for (p, g) in params.tensors_mut().into_iter().zip(&grads).skip(first_trainable) {
                p.sub_scaled(g, lr);
            }
        }
        let mean = total / data.len() as f64;
        info!(
            "epoch {epoch}/{}: lr {lr:e}, {} mean loss {mean:.6}",
            config.epochs,
            if first_trainable == 0 { "joint" } else { "score-only" }
        );
        epoch_losses.push(mean);
    }
    Ok(TrainRun {
        params,
        epoch_losses,
    })
}
