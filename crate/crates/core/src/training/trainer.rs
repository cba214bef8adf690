use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Classifier;
use super::data::{crop_frames, predict_specs, to_batch, Corpus, Featurizer};
use super::{TrainConfig, TrainError};
use crate::augment::Augmenter;
use crate::eval::argmax;
use crate::features::MelSpectrogram;
use crate::nn::{Mode, Network, NetworkConfig, OptimizerState};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Absent when there is no validation set.
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation accuracy (earliest on ties),
    /// or the final weights without a validation set.
    pub model: Classifier,
    pub final_model: Classifier,
    /// 1-based.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Mean cross-entropy and accuracy of probability rows.
pub fn score_probs(probs: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
    let n = labels.len().max(1) as f64;
    let loss = probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| -p[l].max(1e-12).ln())
        .sum::<f64>()
        / n;
    let hits = probs.iter().zip(labels).filter(|(p, &l)| argmax(p) == l).count();
    (loss, hits as f64 / n)
}

/// Trains a fresh network on `train_idx` of `corpus`, scoring `val_idx` after each epoch.
/// `net_config` is adjusted to the corpus class count and the configured mel bands.
pub fn train_model(
    corpus: &Corpus,
    train_idx: &[usize],
    val_idx: &[usize],
    net_config: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(TrainError::InvalidConfig("empty training set".into()));
    }
    let rate = cfg.mel.sample_rate_hz;
    if let Some(c) = corpus.clips.iter().find(|c| c.sample_rate_hz != rate) {
        return Err(TrainError::InvalidConfig(format!(
            "clip at {} Hz, features expect {rate} Hz",
            c.sample_rate_hz
        )));
    }
    let mut net_config = net_config.clone().with_classes(corpus.n_classes());
    net_config.in_mels = cfg.mel.n_mels;
    let mut net = Network::<f32>::new(net_config, seed::derive(cfg.seed, &[1]))?;
    net.set_mode(Mode::Train);
    let featurizer = Featurizer::new(cfg.mel.clone(), cfg.normalization, net.config().min_frames())?;
    let crop = featurizer.frames_for(cfg.crop_s);
    let augmenter = cfg
        .augment
        .clone()
        .map(|a| Augmenter::new(a, rate))
        .transpose()?;

    // Without augmentation the log-mel of each clip never changes.
    let cached: Option<Vec<MelSpectrogram>> = match augmenter {
        None => Some(
            train_idx
                .par_iter()
                .map(|&i| featurizer.log_mel(&corpus.clips[i]))
                .collect::<Result<_, _>>()?,
        ),
        Some(_) => None,
    };
    let val_specs: Vec<MelSpectrogram> = val_idx
        .par_iter()
        .map(|&i| featurizer.input(&corpus.clips[i]))
        .collect::<Result<_, _>>()?;
    let val_labels = corpus.labels_at(val_idx);

    let mut opt = OptimizerState::new(cfg.optimizer, net.params());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network<f32>)> = None;
    let mut order: Vec<usize> = (0..train_idx.len()).collect();

    for epoch in 1..=cfg.epochs {
        let e = epoch as u64;
        order.sort_unstable();
        order.shuffle(&mut seed::rng(seed::derive(cfg.seed, &[2, e])));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let specs = batch
                .par_iter()
                .map(|&pos| -> Result<MelSpectrogram, TrainError> {
                    let i = train_idx[pos];
                    let full = match (&cached, &augmenter) {
                        (Some(c), _) => c[pos].clone(),
                        (None, Some(a)) => {
                            let clip = a.apply(&corpus.clips[i], seed::derive(cfg.seed, &[3, e, i as u64]))?;
                            featurizer.log_mel(&clip)?
                        }
                        (None, None) => unreachable!("cache exists without augmentation"),
                    };
                    let spare = full.n_frames().saturating_sub(crop);
                    let offset = if spare == 0 {
                        0
                    } else {
                        seed::rng(seed::derive(cfg.seed, &[4, e, i as u64])).gen_range(0..=spare)
                    };
                    Ok(featurizer.finish(&crop_frames(&full, crop, offset)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let x = to_batch(&specs.iter().collect::<Vec<_>>())?;
            let labels: Vec<usize> = batch.iter().map(|&p| corpus.labels[train_idx[p]]).collect();
            let out = net.backward(&x, &labels)?;
            if !out.loss.is_finite() || !out.grads.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step: step + 1,
                    loss: out.loss,
                });
            }
            loss_sum += out.loss * batch.len() as f64;
            let k = out.logits.shape()[1];
            hits += out
                .logits
                .data
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(&row.iter().map(|&v| f64::from(v)).collect::<Vec<_>>()) == l)
                .count();
            opt.step(net.params_mut(), &out.grads.tensors, cfg.lr);
        }
        let n = train_idx.len() as f64;
        let (val_loss, val_acc) = if val_specs.is_empty() {
            (None, None)
        } else {
            let probs = predict_specs(&net, &val_specs)?;
            let (l, a) = score_probs(&probs, &val_labels);
            (Some(l), Some(a))
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: hits as f64 / n,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val acc {:?}",
            rec.train_loss,
            rec.train_acc,
            rec.val_acc
        );
        if let Some(acc) = val_acc {
            if best.as_ref().map_or(true, |(b, _, _)| acc > *b) {
                best = Some((acc, epoch, net.clone()));
            }
        }
        history.push(rec);
    }

    net.set_mode(Mode::Infer);
    let wrap = |mut n: Network<f32>| {
        n.set_mode(Mode::Infer);
        Classifier::new(n, corpus.class_names.clone(), cfg.mel.clone(), cfg.normalization)
    };
    let final_model = wrap(net)?;
    let (model, best_epoch) = match best {
        Some((_, epoch, n)) => (wrap(n)?, epoch),
        None => (final_model.clone(), cfg.epochs),
    };
    Ok(TrainOutcome {
        model,
        final_model,
        best_epoch,
        history,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::audio::AudioClip;
    use crate::features::MelParams;

    /// Two tone classes far apart in frequency, with random phase and level.
    pub(crate) fn tone_corpus(per_class: usize, seconds: f64) -> Corpus {
        let rate = 16000;
        let n = (seconds * rate as f64) as usize;
        let mut clips = Vec::new();
        let mut labels = Vec::new();
        let mut rng = seed::rng(77);
        for i in 0..2 * per_class {
            let label = i % 2;
            let f = if label == 0 { 600.0 } else { 3200.0 } * rng.gen_range(0.95..1.05);
            let (phase, amp) = (rng.gen_range(0.0..6.28), rng.gen_range(0.2..0.5));
            let samples = (0..n)
                .map(|t| (amp * (2.0 * std::f64::consts::PI * f * t as f64 / rate as f64 + phase).sin()) as f32)
                .collect();
            clips.push(AudioClip::new(samples, rate).unwrap());
            labels.push(label);
        }
        Corpus::new(clips, labels, vec!["low".into(), "high".into()]).unwrap()
    }

    pub(crate) fn toy_config(epochs: usize) -> (NetworkConfig, TrainConfig) {
        let mel = MelParams {
            n_mels: 16,
            ..MelParams::default()
        };
        let cfg = TrainConfig {
            lr: 3e-3,
            batch_size: 4,
            epochs,
            seed: 3,
            augment: None,
            crop_s: 0.5,
            mel,
            ..TrainConfig::default()
        };
        (NetworkConfig::micro(2, 16), cfg)
    }

    #[test]
    fn separable_tones_are_learned() {
        let corpus = tone_corpus(8, 0.5);
        let (net, cfg) = toy_config(20);
        let idx: Vec<usize> = (0..corpus.len()).collect();
        let out = train_model(&corpus, &idx, &idx, &net, &cfg).unwrap();
        assert_eq!(out.history.len(), 20);
        let first = &out.history[0];
        let last = out.history.last().unwrap();
        assert!(last.train_loss < first.train_loss, "{first:?} -> {last:?}");
        assert_eq!(last.train_acc, 1.0, "{last:?}");
        assert_eq!(out.history[out.best_epoch - 1].val_acc, Some(1.0));
        assert!(out.history[..out.best_epoch - 1].iter().all(|r| r.val_acc < Some(1.0)));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = tone_corpus(3, 0.5);
        let (net, cfg) = toy_config(2);
        let cfg = TrainConfig {
            augment: Some(crate::augment::AugmentConfig::default()),
            ..cfg
        };
        let idx: Vec<usize> = (0..corpus.len()).collect();
        let a = train_model(&corpus, &idx, &[], &net, &cfg).unwrap();
        let b = train_model(&corpus, &idx, &[], &net, &cfg).unwrap();
        assert_eq!(a.final_model.named_tensors(), b.final_model.named_tensors());
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_epoch, 2);
    }

    #[test]
    fn rejects_mismatched_rate() {
        let mut corpus = tone_corpus(2, 0.5);
        corpus.clips[0].sample_rate_hz = 8000;
        let (net, cfg) = toy_config(1);
        assert!(matches!(
            train_model(&corpus, &[0, 1], &[], &net, &cfg),
            Err(TrainError::InvalidConfig(_))
        ));
    }
}
