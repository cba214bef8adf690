//! Log-mel spectrogram extraction and normalization.
//!
//! Frames are taken without centering or padding, so a clip of `N` samples
//! yields exactly `floor((N - n_fft) / hop) + 1` frames. Spectra use a
//! periodic Hann window; the mel scale is the HTK form
//! `mel(f) = 2595 log10(1 + f / 700)` with peak-normalized triangles.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("clip has {len} samples, fewer than n_fft = {n_fft}")]
    TooShort { len: usize, n_fft: usize },
    #[error("clip rate {clip} Hz does not match feature rate {params} Hz")]
    RateMismatch { clip: u32, params: u32 },
    #[error("invalid mel parameters: {0}")]
    InvalidParams(String),
    #[error("bad spectrogram cache: {0}")]
    BadCache(String),
    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelParams {
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MelParams {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            n_fft: 512,
            hop: 256,
            n_mels: 64,
            fmin_hz: 50.0,
            fmax_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelParams {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidParams(m.to_string()));
        if self.sample_rate_hz == 0 {
            return bad("sample rate must be positive");
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return bad("hop must satisfy 0 < hop <= n_fft");
        }
        if self.n_fft < 2 || self.n_fft % 2 != 0 {
            return bad("n_fft must be even and at least 2");
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1");
        }
        let nyquist = f64::from(self.sample_rate_hz) / 2.0;
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return bad("need 0 <= fmin < fmax <= sample_rate / 2");
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    /// Frames produced for a clip of `n_samples` (zero if shorter than `n_fft`).
    pub fn n_frames(&self, n_samples: usize) -> usize {
        frame_count(n_samples, self.n_fft, self.hop)
    }
}

pub fn frame_count(n_samples: usize, n_fft: usize, hop: usize) -> usize {
    if n_samples < n_fft {
        0
    } else {
        (n_samples - n_fft) / hop + 1
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Frame-by-frame one-sided spectrum of a Hann-windowed signal.
pub(crate) struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub(crate) fn new(n_fft: usize, hop: usize) -> Self {
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        }
    }

    /// Calls `visit(frame, spectrum)` for each frame, spectrum holding bins `0..=n_fft/2`.
    pub(crate) fn for_each_frame<F>(&self, samples: &[f32], mut visit: F)
    where
        F: FnMut(usize, &[Complex<f64>]),
    {
        let frames = frame_count(samples.len(), self.n_fft, self.hop);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(f64::from(samples[start + i]) * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            visit(t, &buf[..self.n_fft / 2 + 1]);
        }
    }
}

/// Magnitude STFT, shape `(n_fft/2 + 1) x n_frames`.
pub fn stft_magnitude(clip: &AudioClip, n_fft: usize, hop: usize) -> Result<Matrix, FeatureError> {
    if n_fft < 2 || hop == 0 {
        return Err(FeatureError::InvalidParams("n_fft >= 2 and hop > 0 required".into()));
    }
    if clip.len() < n_fft {
        return Err(FeatureError::TooShort {
            len: clip.len(),
            n_fft,
        });
    }
    let bins = n_fft / 2 + 1;
    let frames = frame_count(clip.len(), n_fft, hop);
    let mut out = Matrix::zeros(bins, frames);
    Stft::new(n_fft, hop).for_each_frame(&clip.samples, |t, spec| {
        for (k, c) in spec.iter().enumerate() {
            out.data[k * frames + t] = c.norm();
        }
    });
    Ok(out)
}

/// Triangular HTK-mel filterbank, shape `n_mels x (n_fft/2 + 1)`.
pub fn build_mel_filterbank(params: &MelParams) -> Result<Matrix, FeatureError> {
    params.validate()?;
    let bins = params.n_fft / 2 + 1;
    let lo = hz_to_mel(params.fmin_hz);
    let hi = hz_to_mel(params.fmax_hz);
    let step = (hi - lo) / (params.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..params.n_mels + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    let bin_hz = f64::from(params.sample_rate_hz) / params.n_fft as f64;
    let mut fb = Matrix::zeros(params.n_mels, bins);
    for m in 0..params.n_mels {
        let (l, c, u) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < u {
                (u - f) / (u - c)
            } else {
                0.0
            };
            fb.data[m * bins + k] = w;
        }
    }
    Ok(fb)
}

/// Center frequencies (Hz) of the mel filters.
pub fn mel_center_frequencies(params: &MelParams) -> Vec<f64> {
    let lo = hz_to_mel(params.fmin_hz);
    let hi = hz_to_mel(params.fmax_hz);
    let step = (hi - lo) / (params.n_mels + 1) as f64;
    (1..=params.n_mels).map(|i| mel_to_hz(lo + step * i as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `n_mels x n_frames`, natural-log energies.
    pub data: Matrix,
    pub params: MelParams,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.data.rows
    }

    pub fn n_frames(&self) -> usize {
        self.data.cols
    }
}

/// Reusable extractor holding the FFT plan and filterbank for one parameter set.
pub struct MelExtractor {
    params: MelParams,
    stft: Stft,
    filterbank: Matrix,
    // per mel row: first and one-past-last nonzero bin
    support: Vec<(usize, usize)>,
}

impl MelExtractor {
    pub fn new(params: MelParams) -> Result<Self, FeatureError> {
        let filterbank = build_mel_filterbank(&params)?;
        let support = (0..filterbank.rows)
            .map(|m| {
                let row = filterbank.row(m);
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).map_or(0, |p| p + 1);
                (first, last.max(first))
            })
            .collect();
        Ok(Self {
            stft: Stft::new(params.n_fft, params.hop),
            params,
            filterbank,
            support,
        })
    }

    pub fn params(&self) -> &MelParams {
        &self.params
    }

    pub fn log_mel(&self, clip: &AudioClip) -> Result<MelSpectrogram, FeatureError> {
        let p = &self.params;
        if clip.sample_rate_hz != p.sample_rate_hz {
            return Err(FeatureError::RateMismatch {
                clip: clip.sample_rate_hz,
                params: p.sample_rate_hz,
            });
        }
        if clip.len() < p.n_fft {
            return Err(FeatureError::TooShort {
                len: clip.len(),
                n_fft: p.n_fft,
            });
        }
        let frames = p.n_frames(clip.len());
        let bins = p.n_fft / 2 + 1;
        let mut data = Matrix::zeros(p.n_mels, frames);
        let mut power = vec![0.0; bins];
        self.stft.for_each_frame(&clip.samples, |t, spec| {
            for (pw, c) in power.iter_mut().zip(spec) {
                *pw = c.norm_sqr();
            }
            for (m, &(first, last)) in self.support.iter().enumerate() {
                let w = &self.filterbank.row(m)[first..last];
                let e: f64 = w.iter().zip(&power[first..last]).map(|(a, b)| a * b).sum();
                data.data[m * frames + t] = (e + p.log_floor).ln();
            }
        });
        Ok(MelSpectrogram {
            data,
            params: p.clone(),
        })
    }
}

/// `ln(filterbank * |STFT|^2 + log_floor)`.
pub fn log_mel_spectrogram(clip: &AudioClip, params: &MelParams) -> Result<MelSpectrogram, FeatureError> {
    MelExtractor::new(params.clone())?.log_mel(clip)
}

const ZSCORE_EPS: f64 = 1e-8;

/// Mean and population standard deviation of a slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes the whole matrix with its own mean and population std.
pub fn zscore_normalize(spec: &MelSpectrogram) -> MelSpectrogram {
    let (mean, std) = mean_std(&spec.data.data);
    standardize(spec, mean, std)
}

pub fn standardize(spec: &MelSpectrogram, mean: f64, std: f64) -> MelSpectrogram {
    let scale = 1.0 / (std + ZSCORE_EPS);
    let mut out = spec.clone();
    for x in &mut out.data.data {
        *x = (*x - mean) * scale;
    }
    out
}

/// How spectrograms are standardized before entering the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Normalization {
    /// Each spectrogram by its own statistics.
    #[default]
    PerSpectrogram,
    /// Fixed statistics, typically measured over a training corpus.
    Corpus { mean: f64, std: f64 },
}

impl Normalization {
    pub fn apply(&self, spec: &MelSpectrogram) -> MelSpectrogram {
        match *self {
            Self::PerSpectrogram => zscore_normalize(spec),
            Self::Corpus { mean, std } => standardize(spec, mean, std),
        }
    }

    /// Pooled statistics over every entry of every spectrogram.
    pub fn corpus<'a>(specs: impl IntoIterator<Item = &'a MelSpectrogram>) -> Self {
        let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
        for s in specs {
            for &x in &s.data.data {
                n += 1.0;
                sum += x;
                sq += x * x;
            }
        }
        let mean = sum / n;
        let std = (sq / n - mean * mean).max(0.0).sqrt();
        Self::Corpus { mean, std }
    }
}

const CACHE_MAGIC: &[u8; 4] = b"MELS";
const CACHE_VERSION: u16 = 1;

/// Cache layout: `MELS`, version u16, u32 JSON length, MelParams JSON,
/// u32 n_mels, u32 n_frames, row-major little-endian f32 data.
pub fn write_spectrogram_cache(spec: &MelSpectrogram, w: &mut impl Write) -> Result<(), FeatureError> {
    let json = serde_json::to_vec(&spec.params).expect("MelParams serializes");
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(spec.data.rows as u32).to_le_bytes())?;
    w.write_all(&(spec.data.cols as u32).to_le_bytes())?;
    for &x in &spec.data.data {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_spectrogram_cache(r: &mut impl Read) -> Result<MelSpectrogram, FeatureError> {
    let mut head = [0u8; 10];
    r.read_exact(&mut head)?;
    if &head[0..4] != CACHE_MAGIC {
        return Err(FeatureError::BadCache("bad magic".into()));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != CACHE_VERSION {
        return Err(FeatureError::BadCache(format!("unsupported version {version}")));
    }
    let json_len = u32::from_le_bytes([head[6], head[7], head[8], head[9]]) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let params: MelParams =
        serde_json::from_slice(&json).map_err(|e| FeatureError::BadCache(e.to_string()))?;
    let mut dims = [0u8; 8];
    r.read_exact(&mut dims)?;
    let rows = u32::from_le_bytes([dims[0], dims[1], dims[2], dims[3]]) as usize;
    let cols = u32::from_le_bytes([dims[4], dims[5], dims[6], dims[7]]) as usize;
    if rows != params.n_mels {
        return Err(FeatureError::BadCache(format!(
            "{rows} rows but params declare {} mel bins",
            params.n_mels
        )));
    }
    let mut raw = vec![0u8; rows * cols * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    Ok(MelSpectrogram {
        data: Matrix { rows, cols, data },
        params,
    })
}

pub fn save_spectrogram(spec: &MelSpectrogram, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_spectrogram_cache(spec, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_spectrogram(path: impl AsRef<Path>) -> Result<MelSpectrogram, FeatureError> {
    read_spectrogram_cache(&mut BufReader::new(File::open(path)?))
}
