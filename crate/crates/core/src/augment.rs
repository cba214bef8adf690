//! Time-domain augmentation: phase-vocoder time stretch, pitch shift built on
//! the stretch plus resampling, and background-noise mixing at a target SNR.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{read_wav, resample, AudioClip, AudioError, Resampler};
use crate::features::hann;
use crate::seed;
use crate::synth::{background_noise, NoiseKind};

pub const VOCODER_N_FFT: usize = 1024;
pub const VOCODER_HOP: usize = 256;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("stretch rate {0} outside [0.5, 2.0]")]
    RateOutOfRange(f64),
    #[error("{what} {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("signal is silent")]
    SilentSignal,
    #[error("noise is silent")]
    SilentNoise,
    #[error("signal rate {signal} Hz differs from noise rate {noise} Hz")]
    RateMismatch { signal: u32, noise: u32 },
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

fn wrap_phase(x: f64) -> f64 {
    x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor()
}

fn clamp_unit(samples: &mut [f32]) {
    for s in samples {
        *s = s.clamp(-1.0, 1.0);
    }
}

/// Phase-vocoder time stretch. `rate > 1` shortens the clip; output length is
/// `round(N / rate)` and pitch is unchanged.
pub fn time_stretch(clip: &AudioClip, rate: f64) -> Result<AudioClip, AugmentError> {
    if !(0.5..=2.0).contains(&rate) {
        return Err(AugmentError::RateOutOfRange(rate));
    }
    let samples = vocoder_stretch(&clip.samples, rate);
    Ok(AudioClip {
        samples,
        sample_rate_hz: clip.sample_rate_hz,
    })
}

fn vocoder_stretch(input: &[f32], rate: f64) -> Vec<f32> {
    let n_fft = VOCODER_N_FFT;
    let hop = VOCODER_HOP;
    let bins = n_fft / 2 + 1;
    let out_len = (input.len() as f64 / rate).round() as usize;
    if input.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }

    // centered framing: n_fft/2 zeros in front, enough behind to cover the tail
    let pad = n_fft / 2;
    let mut padded = vec![0.0f64; pad];
    padded.extend(input.iter().map(|&s| f64::from(s)));
    padded.resize(padded.len() + n_fft, 0.0);
    let n_frames = (padded.len() - n_fft) / hop + 1;

    let window = hann(n_fft);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);

    // magnitude and phase of every analysis frame, computed once
    let mut mags: Vec<Vec<f64>> = Vec::with_capacity(n_frames);
    let mut args: Vec<Vec<f64>> = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(padded[t * hop + i] * window[i], 0.0);
        }
        fwd.process(&mut buf);
        mags.push(buf[..bins].iter().map(|c| c.norm()).collect());
        args.push(buf[..bins].iter().map(|c| c.arg()).collect());
    }

    let advance: Vec<f64> = (0..bins).map(|k| 2.0 * PI * k as f64 * hop as f64 / n_fft as f64).collect();
    let mut phase: Vec<f64> = args[0].clone();

    let synth_len = out_len + n_fft + pad;
    let mut output = vec![0.0f64; synth_len + n_fft];
    let mut norm = vec![0.0f64; synth_len + n_fft];
    let mut step = 0usize;
    loop {
        let t = step as f64 * rate;
        let i = t.floor() as usize;
        let start = step * hop;
        if i + 1 >= n_frames || start >= synth_len {
            break;
        }
        let alpha = t - i as f64;
        let (ma, mb, pa, pb) = (&mags[i], &mags[i + 1], &args[i], &args[i + 1]);
        for k in 0..bins {
            let mag = (1.0 - alpha) * ma[k] + alpha * mb[k];
            let (sin, cos) = phase[k].sin_cos();
            buf[k] = Complex::new(mag * cos, mag * sin);
            phase[k] += advance[k] + wrap_phase(pb[k] - pa[k] - advance[k]);
        }
        // DC and Nyquist bins of a real signal are real
        buf[0].im = 0.0;
        buf[n_fft / 2].im = 0.0;
        for k in 1..n_fft / 2 {
            buf[n_fft - k] = buf[k].conj();
        }
        inv.process(&mut buf);
        for (j, c) in buf.iter().enumerate() {
            output[start + j] += c.re / n_fft as f64 * window[j];
            norm[start + j] += window[j] * window[j];
        }
        step += 1;
    }

    (0..out_len)
        .map(|j| {
            let w = norm[pad + j];
            if w > 1e-6 {
                (output[pad + j] / w) as f32
            } else {
                0.0
            }
        })
        .collect()
}

/// Shifts pitch by `semitones` keeping the length (padded or trimmed to N).
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> Result<AudioClip, AugmentError> {
    if !(-12.0..=12.0).contains(&semitones) {
        return Err(AugmentError::OutOfRange {
            what: "pitch shift (semitones)",
            value: semitones,
            lo: -12.0,
            hi: 12.0,
        });
    }
    let n = clip.len();
    if semitones == 0.0 {
        return Ok(clip.clone());
    }
    let factor = 2f64.powf(semitones / 12.0);
    // lengthen by `factor` without changing pitch, then play back `factor` faster
    let stretched = vocoder_stretch(&clip.samples, 1.0 / factor);
    const DENOM: u64 = 1000;
    let resampler = Resampler::new(DENOM, (factor * DENOM as f64).round() as u64);
    let mut samples = resampler.process(&stretched);
    samples.resize(n, 0.0);
    clamp_unit(&mut samples);
    Ok(AudioClip {
        samples,
        sample_rate_hz: clip.sample_rate_hz,
    })
}

/// Adds `noise`, scaled so that signal power over scaled-noise power equals
/// `snr_db`. Noise is tiled or cropped to the signal length.
pub fn mix_noise(signal: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<AudioClip, AugmentError> {
    if !(-10.0..=60.0).contains(&snr_db) {
        return Err(AugmentError::OutOfRange {
            what: "SNR (dB)",
            value: snr_db,
            lo: -10.0,
            hi: 60.0,
        });
    }
    if signal.sample_rate_hz != noise.sample_rate_hz {
        return Err(AugmentError::RateMismatch {
            signal: signal.sample_rate_hz,
            noise: noise.sample_rate_hz,
        });
    }
    let ps = signal.power();
    if ps <= 0.0 {
        return Err(AugmentError::SilentSignal);
    }
    if noise.power() <= 0.0 {
        return Err(AugmentError::SilentNoise);
    }
    let fitted: Vec<f32> = noise.samples.iter().copied().cycle().take(signal.len()).collect();
    let pn = fitted.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>() / fitted.len() as f64;
    if pn <= 0.0 {
        return Err(AugmentError::SilentNoise);
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = signal
        .samples
        .iter()
        .zip(&fitted)
        .map(|(&s, &n)| ((f64::from(s) + gain * f64::from(n)) as f32).clamp(-1.0, 1.0))
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate_hz: signal.sample_rate_hz,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApplyProbabilities {
    pub stretch: f64,
    pub pitch: f64,
    pub noise: f64,
}

/// Where background noise for mixing comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSource {
    /// Generated ambience clips, cycling through every [`NoiseKind`].
    Synthetic { count: usize, duration_s: f64, seed: u64 },
    /// PCM-16 WAV files, resampled to the pipeline rate.
    Files { paths: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub stretch_range: [f64; 2],
    pub pitch_range_semitones: [f64; 2],
    pub snr_range_db: [f64; 2],
    pub apply_probabilities: ApplyProbabilities,
    pub noise_source: NoiseSource,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            stretch_range: [0.8, 1.25],
            pitch_range_semitones: [-2.0, 2.0],
            snr_range_db: [5.0, 30.0],
            apply_probabilities: ApplyProbabilities {
                stretch: 0.5,
                pitch: 0.5,
                noise: 0.5,
            },
            noise_source: NoiseSource::Synthetic {
                count: 24,
                duration_s: 6.0,
                seed: 0x6e01,
            },
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidConfig(m));
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let [s_lo, s_hi] = self.stretch_range;
        if !ordered(self.stretch_range) || s_lo < 0.5 || s_hi > 2.0 {
            return bad(format!("stretch range {:?} must be ordered within [0.5, 2]", self.stretch_range));
        }
        let [p_lo, p_hi] = self.pitch_range_semitones;
        if !ordered(self.pitch_range_semitones) || p_lo < -12.0 || p_hi > 12.0 {
            return bad(format!("pitch range {:?} must be ordered within [-12, 12]", self.pitch_range_semitones));
        }
        let [n_lo, n_hi] = self.snr_range_db;
        if !ordered(self.snr_range_db) || n_lo < -10.0 || n_hi > 60.0 {
            return bad(format!("SNR range {:?} must be ordered within [-10, 60]", self.snr_range_db));
        }
        let p = self.apply_probabilities;
        for (name, v) in [("stretch", p.stretch), ("pitch", p.pitch), ("noise", p.noise)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} probability {v} outside [0, 1]"));
            }
        }
        match &self.noise_source {
            NoiseSource::Synthetic { count, duration_s, .. } if *count == 0 || *duration_s <= 0.0 => {
                bad("synthetic noise pool must be non-empty".into())
            }
            NoiseSource::Files { paths } if paths.is_empty() && p.noise > 0.0 => {
                bad("noise file list is empty".into())
            }
            _ => Ok(()),
        }
    }
}

/// Materializes a noise source at the given rate.
pub fn load_noise_pool(source: &NoiseSource, rate: u32) -> Result<Vec<AudioClip>, AugmentError> {
    match source {
        NoiseSource::Synthetic { count, duration_s, seed } => Ok((0..*count)
            .map(|i| {
                let kind = NoiseKind::ALL[i % NoiseKind::ALL.len()];
                let len = (duration_s * f64::from(rate)).round() as usize;
                background_noise(kind, len, rate, seed::derive(*seed, &[i as u64]))
            })
            .collect()),
        NoiseSource::Files { paths } => paths
            .iter()
            .map(|p| Ok(resample(&read_wav(p)?, rate)?))
            .collect(),
    }
}

/// A validated config with its noise pool loaded.
#[derive(Debug, Clone)]
pub struct Augmenter {
    config: AugmentConfig,
    pool: Vec<AudioClip>,
}

impl Augmenter {
    pub fn new(config: AugmentConfig, rate: u32) -> Result<Self, AugmentError> {
        config.validate()?;
        let pool = load_noise_pool(&config.noise_source, rate)?;
        Ok(Self { config, pool })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.config
    }

    /// Applies stretch, pitch shift and noise mixing, each with its configured
    /// probability, in that order. Deterministic in `(clip, config, seed)`.
    pub fn apply(&self, clip: &AudioClip, seed: u64) -> Result<AudioClip, AugmentError> {
        let c = &self.config;
        let mut rng = seed::rng(seed);
        let mut draw = |p: f64, range: [f64; 2]| -> Option<f64> {
            let hit = rng.gen::<f64>() < p;
            let v = range[0] + (range[1] - range[0]) * rng.gen::<f64>();
            hit.then_some(v)
        };
        let stretch = draw(c.apply_probabilities.stretch, c.stretch_range);
        let pitch = draw(c.apply_probabilities.pitch, c.pitch_range_semitones);
        let snr = draw(c.apply_probabilities.noise, c.snr_range_db);
        let pick = rng.gen::<u64>();
        let offset = rng.gen::<u64>();

        let mut out = clip.clone();
        if let Some(rate) = stretch {
            out = time_stretch(&out, rate)?;
            clamp_unit(&mut out.samples);
        }
        if let Some(semitones) = pitch {
            out = pitch_shift(&out, semitones)?;
        }
        if let Some(snr_db) = snr {
            if self.pool.is_empty() {
                return Err(AugmentError::InvalidConfig("noise pool is empty".into()));
            }
            let noise = &self.pool[(pick % self.pool.len() as u64) as usize];
            let start = (offset % noise.len().max(1) as u64) as usize;
            let rotated = AudioClip {
                samples: noise.samples[start..].iter().chain(&noise.samples[..start]).copied().collect(),
                sample_rate_hz: noise.sample_rate_hz,
            };
            out = mix_noise(&out, &rotated, snr_db)?;
        }
        Ok(out)
    }
}

/// One-shot form of [`Augmenter::apply`]; loads the noise pool on every call.
pub fn augment_policy(clip: &AudioClip, config: &AugmentConfig, seed: u64) -> Result<AudioClip, AugmentError> {
    Augmenter::new(config.clone(), clip.sample_rate_hz)?.apply(clip, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, rate: u32) -> AudioClip {
        let n = (secs * f64::from(rate)) as usize;
        let s = (0..n)
            .map(|i| (0.5 * (2.0 * PI * freq * i as f64 / f64::from(rate)).sin()) as f32)
            .collect();
        AudioClip::new(s, rate).unwrap()
    }

    /// Dominant frequency by a zero-padded FFT over the middle of the clip.
    fn dominant_freq(clip: &AudioClip) -> f64 {
        let n = clip.len();
        let mid = &clip.samples[n / 8..n - n / 8];
        let size = (mid.len() * 4).next_power_of_two();
        let mut buf: Vec<Complex<f64>> = mid.iter().map(|&s| Complex::new(f64::from(s), 0.0)).collect();
        buf.resize(size, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(size).process(&mut buf);
        let k = (1..size / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
        k as f64 * f64::from(clip.sample_rate_hz) / size as f64
    }

    fn power_db(a: f64, b: f64) -> f64 {
        10.0 * (a / b).log10()
    }

    #[test]
    fn unit_rate_keeps_length() {
        let clip = sine(700.0, 1.0, 16000);
        let out = time_stretch(&clip, 1.0).unwrap();
        assert!(out.len().abs_diff(clip.len()) <= VOCODER_N_FFT);
        assert_eq!(out.sample_rate_hz, clip.sample_rate_hz);
    }

    #[test]
    fn half_rate_doubles_duration() {
        let clip = sine(700.0, 2.0, 16000);
        let out = time_stretch(&clip, 0.5).unwrap();
        assert!((out.duration_s() - 4.0).abs() <= VOCODER_N_FFT as f64 / 16000.0);
    }

    #[test]
    fn stretch_preserves_pitch() {
        let out = time_stretch(&sine(1000.0, 1.0, 16000), 1.25).unwrap();
        let f = dominant_freq(&out);
        assert!((f - 1000.0).abs() <= 10.0, "{f}");
    }

    #[test]
    fn stretch_rate_bounds() {
        let clip = sine(1000.0, 0.1, 16000);
        assert!(matches!(time_stretch(&clip, 0.4), Err(AugmentError::RateOutOfRange(_))));
        assert!(matches!(time_stretch(&clip, 2.1), Err(AugmentError::RateOutOfRange(_))));
    }

    #[test]
    fn pitch_shift_octaves() {
        let up = pitch_shift(&sine(440.0, 1.0, 16000), 12.0).unwrap();
        assert!((dominant_freq(&up) - 880.0).abs() <= 8.8);
        assert_eq!(up.len(), 16000);
        let down = pitch_shift(&sine(880.0, 1.0, 16000), -12.0).unwrap();
        assert!((dominant_freq(&down) - 440.0).abs() <= 4.4);
        assert_eq!(down.len(), 16000);
    }

    #[test]
    fn zero_semitones_is_identity() {
        let clip = sine(1234.0, 0.5, 16000);
        let out = pitch_shift(&clip, 0.0).unwrap();
        assert!((dominant_freq(&out) - 1234.0).abs() <= 1234.0 * 0.005);
        assert!(out.len().abs_diff(clip.len()) <= VOCODER_N_FFT);
        assert!(matches!(pitch_shift(&clip, 13.0), Err(AugmentError::OutOfRange { .. })));
    }

    #[test]
    fn small_pitch_shift_scales_frequency() {
        let out = pitch_shift(&sine(2000.0, 1.0, 16000), 2.0).unwrap();
        let expected = 2000.0 * 2f64.powf(2.0 / 12.0);
        assert!((dominant_freq(&out) - expected).abs() <= expected * 0.01);
    }

    #[test]
    fn noise_mixed_at_target_snr() {
        // Quiet enough that clamping never engages at -5 dB.
        let mut signal = sine(1000.0, 0.5, 16000);
        signal.samples.iter_mut().for_each(|x| *x *= 0.2);
        let noise = background_noise(NoiseKind::White, 3000, 16000, 9);
        for snr in [0.0, 10.0, -5.0, 40.0] {
            let out = mix_noise(&signal, &noise, snr).unwrap();
            let residual: f64 = out
                .samples
                .iter()
                .zip(&signal.samples)
                .map(|(o, s)| f64::from(o - s).powi(2))
                .sum::<f64>()
                / signal.len() as f64;
            assert!((power_db(signal.power(), residual) - snr).abs() < 0.1, "snr {snr}");
        }
    }

    #[test]
    fn noise_preconditions() {
        let signal = sine(1000.0, 0.1, 16000);
        let noise = background_noise(NoiseKind::Pink, 500, 16000, 1);
        assert!(matches!(
            mix_noise(&AudioClip::silence(100, 16000), &noise, 10.0),
            Err(AugmentError::SilentSignal)
        ));
        assert!(matches!(
            mix_noise(&signal, &AudioClip::silence(100, 16000), 10.0),
            Err(AugmentError::SilentNoise)
        ));
        let other_rate = AudioClip { sample_rate_hz: 8000, ..noise };
        assert!(matches!(mix_noise(&signal, &other_rate, 10.0), Err(AugmentError::RateMismatch { .. })));
    }

    #[test]
    fn policy_is_deterministic_and_bounded() {
        let clip = sine(1500.0, 1.0, 16000);
        let aug = Augmenter::new(
            AugmentConfig {
                apply_probabilities: ApplyProbabilities { stretch: 1.0, pitch: 1.0, noise: 1.0 },
                ..AugmentConfig::default()
            },
            16000,
        )
        .unwrap();
        let a = aug.apply(&clip, 5).unwrap();
        let b = aug.apply(&clip, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, aug.apply(&clip, 6).unwrap());
        assert!(a.samples.iter().all(|s| s.is_finite() && s.abs() <= 1.0));
        assert_eq!(a.sample_rate_hz, 16000);
    }

    #[test]
    fn zero_probabilities_are_a_no_op() {
        let clip = sine(1500.0, 0.3, 16000);
        let cfg = AugmentConfig {
            apply_probabilities: ApplyProbabilities { stretch: 0.0, pitch: 0.0, noise: 0.0 },
            ..AugmentConfig::default()
        };
        assert_eq!(augment_policy(&clip, &cfg, 1).unwrap(), clip);
    }

    #[test]
    fn noise_only_policy_hits_snr() {
        let clip = sine(1500.0, 0.5, 16000);
        let cfg = AugmentConfig {
            snr_range_db: [10.0, 10.0],
            apply_probabilities: ApplyProbabilities { stretch: 0.0, pitch: 0.0, noise: 1.0 },
            ..AugmentConfig::default()
        };
        let out = augment_policy(&clip, &cfg, 77).unwrap();
        let residual: f64 = out
            .samples
            .iter()
            .zip(&clip.samples)
            .map(|(o, s)| f64::from(o - s).powi(2))
            .sum::<f64>()
            / clip.len() as f64;
        assert!((power_db(clip.power(), residual) - 10.0).abs() < 0.1);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = AugmentConfig::default();
        c.stretch_range = [1.3, 1.2];
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::default();
        c.apply_probabilities.noise = 1.5;
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::default();
        c.snr_range_db = [-20.0, 0.0];
        assert!(c.validate().is_err());
    }
}
