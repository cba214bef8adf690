//! Audio clips and PCM-16 WAV I/O, plus a Kaiser-windowed sinc resampler.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("I/O failure: {0}")]
    IoFailure(#[from] io::Error),
}

/// A mono clip of samples in [-1, 1] at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        let clip = Self {
            samples,
            sample_rate_hz,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        if self.sample_rate_hz == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidClip(format!("non-finite sample at {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum::<f64>()
            / self.samples.len() as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct FmtChunk {
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes a RIFF/WAVE PCM-16 byte buffer.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::MalformedHeader("missing RIFF/WAVE magic".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<FmtChunk> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                AudioError::MalformedHeader(format!(
                    "chunk {:?} claims {size} bytes past end of file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::MalformedHeader("fmt chunk shorter than 16 bytes".into()));
                }
                let format = read_u16(bytes, body);
                let channels = read_u16(bytes, body + 2);
                let sample_rate = read_u32(bytes, body + 4);
                let bits = read_u16(bytes, body + 14);
                if format != 1 {
                    return Err(AudioError::UnsupportedFormat(format!(
                        "format tag {format} is not integer PCM"
                    )));
                }
                if bits != 16 {
                    return Err(AudioError::UnsupportedFormat(format!("{bits}-bit samples")));
                }
                if channels == 0 || channels > 2 {
                    return Err(AudioError::UnsupportedFormat(format!("{channels} channels")));
                }
                if sample_rate == 0 {
                    return Err(AudioError::MalformedHeader("zero sample rate".into()));
                }
                fmt = Some(FmtChunk {
                    channels,
                    sample_rate,
                    bits,
                });
            }
            b"data" => {
                let fmt = fmt.ok_or_else(|| {
                    AudioError::MalformedHeader("data chunk before fmt chunk".into())
                })?;
                debug_assert_eq!(fmt.bits, 16);
                let frame_bytes = 2 * fmt.channels as usize;
                let data = &bytes[body..end];
                let frames = data.len() / frame_bytes;
                let mut samples = Vec::with_capacity(frames);
                for frame in data.chunks_exact(frame_bytes) {
                    let s = if fmt.channels == 1 {
                        f32::from(i16::from_le_bytes([frame[0], frame[1]])) / 32768.0
                    } else {
                        let l = f32::from(i16::from_le_bytes([frame[0], frame[1]])) / 32768.0;
                        let r = f32::from(i16::from_le_bytes([frame[2], frame[3]])) / 32768.0;
                        (l + r) * 0.5
                    };
                    samples.push(s);
                }
                return Ok(AudioClip {
                    samples,
                    sample_rate_hz: fmt.sample_rate,
                });
            }
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }
    Err(AudioError::MalformedHeader("no data chunk".into()))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => AudioError::NotFound(path.display().to_string()),
        _ => AudioError::IoFailure(e),
    })?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes)?;
    decode_wav(&bytes)
}

/// Quantizes an amplitude to a PCM-16 word.
pub fn quantize(x: f32) -> i16 {
    let clamped = f64::from(x).clamp(-1.0, 1.0);
    (clamped * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes a clip as a mono PCM-16 WAV byte buffer.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_wav(clip))?;
    w.flush()?;
    Ok(())
}

const RESAMPLE_TAPS: usize = 32;
const KAISER_BETA: f64 = 8.0;
const MAX_TABLE_PHASES: u64 = 4096;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Polyphase sinc resampler for a rational ratio `up / down` (output/input rate).
pub(crate) struct Resampler {
    up: u64,
    down: u64,
    cutoff: f64,
    inv_i0_beta: f64,
    table: Option<Vec<f64>>,
}

impl Resampler {
    pub(crate) fn new(up: u64, down: u64) -> Self {
        let g = gcd(up, down);
        let (up, down) = (up / g, down / g);
        let cutoff = (up as f64 / down as f64).min(1.0);
        let mut r = Self {
            up,
            down,
            cutoff,
            inv_i0_beta: 1.0 / bessel_i0(KAISER_BETA),
            table: None,
        };
        if up <= MAX_TABLE_PHASES {
            let mut table = Vec::with_capacity(up as usize * RESAMPLE_TAPS);
            for phase in 0..up {
                table.extend(r.taps(phase as f64 / up as f64));
            }
            r.table = Some(table);
        }
        r
    }

    /// Taps for input samples `base - 15 ..= base + 16` where the output
    /// position is `base + frac`. Normalized to unit DC gain.
    fn taps(&self, frac: f64) -> [f64; RESAMPLE_TAPS] {
        let half = (RESAMPLE_TAPS / 2) as f64;
        let mut taps = [0.0; RESAMPLE_TAPS];
        let mut sum = 0.0;
        for (j, tap) in taps.iter_mut().enumerate() {
            // distance from the output position to input sample base - 15 + j
            let d = frac + half - 1.0 - j as f64;
            let u = d / half;
            let w = if u.abs() >= 1.0 {
                0.0
            } else {
                bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) * self.inv_i0_beta
            };
            let x = std::f64::consts::PI * self.cutoff * d;
            let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
            *tap = self.cutoff * sinc * w;
            sum += *tap;
        }
        for tap in &mut taps {
            *tap /= sum;
        }
        taps
    }

    pub(crate) fn output_len(&self, n: usize) -> usize {
        (n as f64 * self.up as f64 / self.down as f64).round() as usize
    }

    pub(crate) fn process(&self, input: &[f32]) -> Vec<f32> {
        let out_len = self.output_len(input.len());
        let n = input.len() as i64;
        let half = (RESAMPLE_TAPS / 2) as i64;
        let mut out = Vec::with_capacity(out_len);
        let mut owned;
        for k in 0..out_len as u64 {
            let num = k * self.down;
            let base = (num / self.up) as i64;
            let phase = num % self.up;
            let taps: &[f64] = match &self.table {
                Some(t) => &t[phase as usize * RESAMPLE_TAPS..(phase as usize + 1) * RESAMPLE_TAPS],
                None => {
                    owned = self.taps(phase as f64 / self.up as f64);
                    &owned
                }
            };
            let first = base - half + 1;
            let mut acc = 0.0;
            for (j, &t) in taps.iter().enumerate() {
                let idx = first + j as i64;
                if idx >= 0 && idx < n {
                    acc += t * f64::from(input[idx as usize]);
                }
            }
            out.push(acc as f32);
        }
        out
    }
}

/// Converts a clip to `target_rate_hz`; output length is `round(N * target / source)`.
pub fn resample(clip: &AudioClip, target_rate_hz: u32) -> Result<AudioClip, AudioError> {
    clip.validate()?;
    if target_rate_hz == 0 {
        return Err(AudioError::InvalidClip("target rate must be positive".into()));
    }
    if target_rate_hz == clip.sample_rate_hz {
        return Ok(clip.clone());
    }
    let r = Resampler::new(u64::from(target_rate_hz), u64::from(clip.sample_rate_hz));
    Ok(AudioClip {
        samples: r.process(&clip.samples),
        sample_rate_hz: target_rate_hz,
    })
}
