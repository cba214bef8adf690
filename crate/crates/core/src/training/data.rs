use std::collections::BTreeMap;

use rayon::prelude::*;

use super::TrainError;
use crate::audio::{read_wav, resample, AudioClip};
use crate::dataset::Dataset;
use crate::features::{Matrix, MelExtractor, MelParams, MelSpectrogram, Normalization};
use crate::nn::{Network, NnError, Tensor};

/// Decoded clips with labels, held in memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub clips: Vec<AudioClip>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Corpus {
    pub fn new(clips: Vec<AudioClip>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self, TrainError> {
        if clips.len() != labels.len() {
            return Err(TrainError::InvalidConfig(format!(
                "{} clips but {} labels",
                clips.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(TrainError::InvalidConfig(format!(
                "label {l} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            clips,
            labels,
            class_names,
        })
    }

    /// Reads every clip of the dataset, resampling to `rate` where needed.
    pub fn load(dataset: &Dataset, rate: u32) -> Result<Self, TrainError> {
        let clips = dataset
            .examples
            .par_iter()
            .map(|e| -> Result<AudioClip, TrainError> {
                let clip = read_wav(&e.path)?;
                Ok(if clip.sample_rate_hz == rate {
                    clip
                } else {
                    resample(&clip, rate)?
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(clips, dataset.labels(), dataset.class_names.clone())
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn clips_at(&self, idx: &[usize]) -> Vec<&AudioClip> {
        idx.iter().map(|&i| &self.clips[i]).collect()
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Repeats `samples` cyclically to `len`.
fn tile(samples: &[f32], len: usize) -> Vec<f32> {
    samples.iter().copied().cycle().take(len).collect()
}

/// `frames` consecutive columns starting at `offset`, wrapping around the end.
pub fn crop_frames(spec: &MelSpectrogram, frames: usize, offset: usize) -> MelSpectrogram {
    let (rows, cols) = (spec.data.rows, spec.data.cols);
    let mut data = Matrix::zeros(rows, frames);
    for r in 0..rows {
        let src = spec.data.row(r);
        for t in 0..frames {
            data.data[r * frames + t] = src[(offset + t) % cols];
        }
    }
    MelSpectrogram {
        data,
        params: spec.params.clone(),
    }
}

/// Log-mel extraction plus normalization, with short inputs tiled up to what
/// the network accepts.
pub struct Featurizer {
    extractor: MelExtractor,
    normalization: Normalization,
    min_frames: usize,
}

impl Featurizer {
    pub fn new(mel: MelParams, normalization: Normalization, min_frames: usize) -> Result<Self, TrainError> {
        Ok(Self {
            extractor: MelExtractor::new(mel)?,
            normalization,
            min_frames: min_frames.max(1),
        })
    }

    pub fn mel(&self) -> &MelParams {
        self.extractor.params()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Frames produced for a clip of `seconds`.
    pub fn frames_for(&self, seconds: f64) -> usize {
        let p = self.mel();
        let n = (seconds * f64::from(p.sample_rate_hz)).round() as usize;
        p.n_frames(n.max(p.n_fft)).max(self.min_frames)
    }

    /// Unnormalized log-mel of a whole clip; clips shorter than one FFT frame are tiled.
    pub fn log_mel(&self, clip: &AudioClip) -> Result<MelSpectrogram, TrainError> {
        let n_fft = self.mel().n_fft;
        if clip.is_empty() {
            return Err(TrainError::InvalidConfig("empty clip".into()));
        }
        if clip.len() < n_fft {
            let padded = AudioClip::new(tile(&clip.samples, n_fft), clip.sample_rate_hz)?;
            return Ok(self.extractor.log_mel(&padded)?);
        }
        Ok(self.extractor.log_mel(clip)?)
    }

    /// Normalized network input for a whole clip.
    pub fn input(&self, clip: &AudioClip) -> Result<MelSpectrogram, TrainError> {
        let spec = self.log_mel(clip)?;
        Ok(self.finish(&spec))
    }

    /// Tiles to the minimum length and normalizes.
    pub fn finish(&self, spec: &MelSpectrogram) -> MelSpectrogram {
        if spec.n_frames() < self.min_frames {
            self.normalization.apply(&crop_frames(spec, self.min_frames, 0))
        } else {
            self.normalization.apply(spec)
        }
    }
}

/// Stacks equal-length spectrograms into an `N x 1 x mels x frames` tensor.
pub fn to_batch(specs: &[&MelSpectrogram]) -> Result<Tensor<f32>, NnError> {
    let first = specs
        .first()
        .ok_or_else(|| NnError::ShapeMismatch("empty batch".into()))?;
    let (mels, frames) = (first.n_mels(), first.n_frames());
    let mut data = Vec::with_capacity(specs.len() * mels * frames);
    for s in specs {
        if (s.n_mels(), s.n_frames()) != (mels, frames) {
            return Err(NnError::ShapeMismatch(format!(
                "batch mixes {}x{} with {mels}x{frames}",
                s.n_mels(),
                s.n_frames()
            )));
        }
        data.extend(s.data.data.iter().map(|&x| x as f32));
    }
    Tensor::from_vec(&[specs.len(), 1, mels, frames], data)
}

pub const EVAL_BATCH: usize = 32;

/// Softmax rows for prepared inputs, batching inputs of equal length together.
/// Output order follows the input order.
pub fn predict_specs(net: &Network<f32>, specs: &[MelSpectrogram]) -> Result<Vec<Vec<f64>>, NnError> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in specs.iter().enumerate() {
        groups.entry(s.n_frames()).or_default().push(i);
    }
    let mut out = vec![Vec::new(); specs.len()];
    for idx in groups.values() {
        for chunk in idx.chunks(EVAL_BATCH) {
            let batch = to_batch(&chunk.iter().map(|&i| &specs[i]).collect::<Vec<_>>())?;
            let probs = net.predict_proba(&batch)?;
            let k = probs.shape()[1];
            for (row, &i) in probs.data.chunks(k).zip(chunk) {
                out[i] = row.iter().map(|&p| f64::from(p)).collect();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_wraps_around() {
        let mut data = Matrix::zeros(2, 3);
        data.data = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let spec = MelSpectrogram {
            data,
            params: MelParams::default(),
        };
        let c = crop_frames(&spec, 5, 2);
        assert_eq!(c.data.data, vec![3.0, 1.0, 2.0, 3.0, 1.0, 6.0, 4.0, 5.0, 6.0, 4.0]);
    }

    #[test]
    fn short_clips_reach_min_frames() {
        let f = Featurizer::new(MelParams::default(), Normalization::PerSpectrogram, 16).unwrap();
        let clip = AudioClip::new((0..300).map(|i| (i as f32 * 0.1).sin() * 0.3).collect(), 16000).unwrap();
        let spec = f.input(&clip).unwrap();
        assert_eq!(spec.n_frames(), 16);
        assert_eq!(f.frames_for(4.0), 249);
    }

    #[test]
    fn batch_requires_equal_shapes() {
        let f = Featurizer::new(MelParams::default(), Normalization::PerSpectrogram, 1).unwrap();
        let a = f.input(&AudioClip::new(vec![0.1; 4000], 16000).unwrap()).unwrap();
        let b = f.input(&AudioClip::new(vec![0.1; 8000], 16000).unwrap()).unwrap();
        assert!(to_batch(&[&a, &b]).is_err());
        assert_eq!(to_batch(&[&a, &a]).unwrap().shape(), &[2, 1, 64, a.n_frames()]);
    }
}
