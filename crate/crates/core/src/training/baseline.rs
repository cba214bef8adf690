use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{Corpus, Featurizer};
use super::TrainError;
use crate::audio::AudioClip;
use crate::eval::Predictor;
use crate::features::{mean_std, MelParams, Normalization};

/// Multinomial logistic regression over standardized feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// `k` rows of `d` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub loss: f64,
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

impl LogisticModel {
    /// Zero weights, identity standardization.
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            weights: vec![vec![0.0; d]; k],
            bias: vec![0.0; k],
            feature_mean: vec![0.0; d],
            feature_std: vec![1.0; d],
        }
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn proba_std(&self, xs: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(xs).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        softmax(&mut z);
        z
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.proba_std(&self.standardize(x))
    }

    /// Mean cross-entropy over already-standardized rows and its gradient.
    pub fn gradient(&self, xs: &[Vec<f64>], labels: &[usize]) -> Gradient {
        let (k, d) = (self.bias.len(), self.feature_mean.len());
        let mut g = Gradient {
            weights: vec![vec![0.0; d]; k],
            bias: vec![0.0; k],
            loss: 0.0,
        };
        let inv_n = 1.0 / xs.len() as f64;
        for (x, &l) in xs.iter().zip(labels) {
            let mut p = self.proba_std(x);
            g.loss -= p[l].max(1e-12).ln() * inv_n;
            p[l] -= 1.0;
            for (c, &pc) in p.iter().enumerate() {
                g.bias[c] += pc * inv_n;
                for (gw, &xj) in g.weights[c].iter_mut().zip(x) {
                    *gw += pc * xj * inv_n;
                }
            }
        }
        g
    }

    /// Full-batch gradient descent from zero weights; features are standardized per dimension first.
    pub fn fit(features: &[Vec<f64>], labels: &[usize], k: usize, lr: f64, epochs: usize) -> Self {
        let d = features.first().map_or(0, Vec::len);
        let mut model = Self::zeros(k, d);
        for j in 0..d {
            let col: Vec<f64> = features.iter().map(|x| x[j]).collect();
            let (m, s) = mean_std(&col);
            model.feature_mean[j] = m;
            model.feature_std[j] = if s > 1e-12 { s } else { 1.0 };
        }
        let xs: Vec<Vec<f64>> = features.iter().map(|x| model.standardize(x)).collect();
        for _ in 0..epochs {
            let g = model.gradient(&xs, labels);
            for (w, gw) in model.weights.iter_mut().zip(&g.weights) {
                for (a, b) in w.iter_mut().zip(gw) {
                    *a -= lr * b;
                }
            }
            for (b, gb) in model.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        model
    }
}

/// Logistic regression on time-averaged normalized log-mel frames.
#[derive(Debug, Clone)]
pub struct BaselineClassifier {
    pub model: LogisticModel,
    pub class_names: Vec<String>,
    pub mel: MelParams,
    pub normalization: Normalization,
}

fn featurizer(mel: &MelParams, normalization: Normalization) -> Result<Featurizer, TrainError> {
    Featurizer::new(mel.clone(), normalization, 1)
}

/// Mean over frames of the normalized log-mel, one value per band.
pub fn time_averaged(f: &Featurizer, clip: &AudioClip) -> Result<Vec<f64>, TrainError> {
    let spec = f.input(clip)?;
    let t = spec.n_frames() as f64;
    Ok((0..spec.n_mels())
        .map(|r| spec.data.row(r).iter().sum::<f64>() / t)
        .collect())
}

impl Predictor for BaselineClassifier {
    type Error = TrainError;

    fn class_names(&self) -> &[String] {
        &self.class_names
    }

    fn predict_proba(&self, clips: &[&AudioClip]) -> Result<Vec<Vec<f64>>, TrainError> {
        let f = featurizer(&self.mel, self.normalization)?;
        clips
            .par_iter()
            .map(|c| Ok(self.model.predict_proba(&time_averaged(&f, c)?)))
            .collect()
    }
}

pub const BASELINE_LR: f64 = 0.5;
pub const BASELINE_EPOCHS: usize = 300;

pub fn train_baseline(
    corpus: &Corpus,
    train_idx: &[usize],
    mel: &MelParams,
    normalization: Normalization,
    lr: f64,
    epochs: usize,
) -> Result<BaselineClassifier, TrainError> {
    if train_idx.is_empty() {
        return Err(TrainError::InvalidConfig("empty training set".into()));
    }
    let f = featurizer(mel, normalization)?;
    let features = train_idx
        .par_iter()
        .map(|&i| time_averaged(&f, &corpus.clips[i]))
        .collect::<Result<Vec<_>, _>>()?;
    let model = LogisticModel::fit(&features, &corpus.labels_at(train_idx), corpus.n_classes(), lr, epochs);
    Ok(BaselineClassifier {
        model,
        class_names: corpus.class_names.clone(),
        mel: mel.clone(),
        normalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_at_zero_init() {
        let m = LogisticModel::zeros(3, 2);
        let xs = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
        let labels = [0, 2];
        let g = m.gradient(&xs, &labels);
        // (1/3 - onehot) x, averaged over the two rows.
        let third = 1.0 / 3.0;
        let expected = [
            [((third - 1.0) * 1.0 + third * -1.0) / 2.0, ((third - 1.0) * 2.0 + third * 0.5) / 2.0],
            [(third * 1.0 + third * -1.0) / 2.0, (third * 2.0 + third * 0.5) / 2.0],
            [(third * 1.0 + (third - 1.0) * -1.0) / 2.0, (third * 2.0 + (third - 1.0) * 0.5) / 2.0],
        ];
        for c in 0..3 {
            for j in 0..2 {
                assert!((g.weights[c][j] - expected[c][j]).abs() < 1e-15);
            }
        }
        assert!((g.bias[1] - third).abs() < 1e-15);
        assert!((g.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn separable_constants_fit_perfectly() {
        let xs = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let labels = [0, 0, 1, 1];
        let m = LogisticModel::fit(&xs, &labels, 2, 0.5, 50);
        for (x, &l) in xs.iter().zip(&labels) {
            assert_eq!(crate::eval::argmax(&m.predict_proba(x)), l);
        }
        assert_eq!(m, LogisticModel::fit(&xs, &labels, 2, 0.5, 50));
    }

    #[test]
    fn baseline_on_tones() {
        let corpus = super::super::trainer::tests::tone_corpus(6, 0.5);
        let idx: Vec<usize> = (0..corpus.len()).collect();
        let mel = MelParams {
            n_mels: 16,
            ..MelParams::default()
        };
        let b = train_baseline(&corpus, &idx, &mel, Normalization::PerSpectrogram, 0.5, 100).unwrap();
        let report = crate::eval::evaluate_model(&b, &corpus.clips_at(&idx), &corpus.labels).unwrap();
        assert_eq!(report.accuracy, 1.0);
    }
}
