//! Synthetic soundscapes with known labels: parametric chirp-syllable calls
//! over a pink-noise bed, plus generated ambience for noise augmentation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{write_wav, AudioClip, AudioError};
use crate::dataset::{write_manifest, ManifestRow, MANIFEST_FILE};
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid species model {name}: {reason}")]
    InvalidSpecies { name: String, reason: String },
    #[error("invalid soundscape config: {0}")]
    InvalidConfig(String),
    #[error("I/O failure: {0}")]
    IoFailure(String),
}

impl From<AudioError> for SynthError {
    fn from(e: AudioError) -> Self {
        Self::IoFailure(e.to_string())
    }
}

impl From<std::io::Error> for SynthError {
    fn from(e: std::io::Error) -> Self {
        Self::IoFailure(e.to_string())
    }
}

const CALL_PEAK: f32 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesModel {
    pub name: String,
    pub f0_hz: [f64; 2],
    pub chirp_slope_hz_per_s: [f64; 2],
    pub n_syllables: [u32; 2],
    pub syllable_dur_s: [f64; 2],
    pub gap_s: [f64; 2],
    pub harmonic_weights: Vec<f64>,
    /// `[0, 0]` disables amplitude modulation.
    pub am_rate_hz: [f64; 2],
    /// Individuals that sing another species' song type instead of their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_song: Option<SharedSong>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedSong {
    pub species: String,
    pub probability: f64,
}

impl SpeciesModel {
    pub fn validate(&self, rate: u32) -> Result<(), SynthError> {
        let fail = |reason: &str| {
            Err(SynthError::InvalidSpecies {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.f0_hz) || self.f0_hz[0] <= 0.0 {
            return fail("f0 range must be ordered and positive");
        }
        if self.f0_hz[1] >= f64::from(rate) / 2.0 {
            return fail("f0 upper bound must be below Nyquist");
        }
        if !ordered(self.chirp_slope_hz_per_s) {
            return fail("chirp slope range must be ordered");
        }
        if self.n_syllables[0] == 0 || self.n_syllables[0] > self.n_syllables[1] {
            return fail("syllable count range must be ordered and at least 1");
        }
        if !ordered(self.syllable_dur_s) || self.syllable_dur_s[0] <= 0.0 {
            return fail("syllable duration range must be ordered and positive");
        }
        if !ordered(self.gap_s) || self.gap_s[0] < 0.0 {
            return fail("gap range must be ordered and non-negative");
        }
        if !ordered(self.am_rate_hz) || self.am_rate_hz[0] < 0.0 {
            return fail("AM rate range must be ordered and non-negative");
        }
        let total: f64 = self.harmonic_weights.iter().sum();
        if self.harmonic_weights.is_empty() || total <= 0.0 || total > 1.5 {
            return fail("harmonic weights must be non-empty with sum in (0, 1.5]");
        }
        if self.harmonic_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return fail("harmonic weights must be finite and non-negative");
        }
        if let Some(shared) = &self.shared_song {
            if shared.species == self.name {
                return fail("a species cannot share its own song");
            }
            if !(0.0..=1.0).contains(&shared.probability) {
                return fail("shared song probability outside [0, 1]");
            }
        }
        Ok(())
    }

    /// Longest possible call, in seconds.
    pub fn max_call_s(&self) -> f64 {
        let n = f64::from(self.n_syllables[1]);
        n * self.syllable_dur_s[1] + (n - 1.0) * self.gap_s[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundscapeConfig {
    pub species: Vec<SpeciesModel>,
    pub clips_per_species: usize,
    pub clip_duration_s: f64,
    pub sample_rate_hz: u32,
    /// RMS amplitude of the pink-noise bed.
    pub background: f64,
    pub distractor_probability: f64,
    /// Distractor call energy relative to the mean labeled-call energy, in dB.
    pub distractor_level_db: f64,
}

impl SoundscapeConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.species.len() < 2 {
            return Err(SynthError::InvalidConfig("need at least two species".into()));
        }
        if self.clip_duration_s < 1.0 {
            return Err(SynthError::InvalidConfig("clip duration must be at least 1 s".into()));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(SynthError::InvalidConfig("background level outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_probability) {
            return Err(SynthError::InvalidConfig("distractor probability outside [0, 1]".into()));
        }
        if !(-60.0..=0.0).contains(&self.distractor_level_db) {
            return Err(SynthError::InvalidConfig("distractor level outside [-60, 0] dB".into()));
        }
        let mut names: Vec<&str> = self.species.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(SynthError::InvalidConfig("species names must be unique".into()));
        }
        for s in &self.species {
            s.validate(self.sample_rate_hz)?;
            if let Some(shared) = &s.shared_song {
                if !self.species.iter().any(|o| o.name == shared.species) {
                    return Err(SynthError::InvalidSpecies {
                        name: s.name.clone(),
                        reason: format!("shares the song of unknown species {}", shared.species),
                    });
                }
            }
            if s.max_call_s() > self.clip_duration_s {
                return Err(SynthError::InvalidSpecies {
                    name: s.name.clone(),
                    reason: "longest call exceeds the clip duration".into(),
                });
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.species.iter().map(|s| s.name.clone()).collect()
    }
}

fn species(
    name: &str,
    f0: [f64; 2],
    slope: [f64; 2],
    n_syl: [u32; 2],
    dur: [f64; 2],
    gap: [f64; 2],
    harmonics: &[f64],
    am: [f64; 2],
) -> SpeciesModel {
    SpeciesModel {
        name: name.to_string(),
        f0_hz: f0,
        chirp_slope_hz_per_s: slope,
        n_syllables: n_syl,
        syllable_dur_s: dur,
        gap_s: gap,
        harmonic_weights: harmonics.to_vec(),
        am_rate_hz: am,
        shared_song: None,
    }
}

/// The eight-species benchmark. Each species owns an f0 band, with bands
/// ordered and adjacent, except the two warblers: they share band and shape,
/// differ in sweep rate, and some individuals of each sing the other's song,
/// which makes them the confusable pair.
pub fn default_species() -> Vec<SpeciesModel> {
    vec![
        species("upsweep_pipit", [2000.0, 2300.0], [6000.0, 9000.0], [3, 5], [0.08, 0.12], [0.05, 0.09], &[1.0, 0.2], [0.0, 0.0]),
        species("downsweep_thrush", [3000.0, 3300.0], [-9000.0, -6000.0], [3, 5], [0.08, 0.12], [0.05, 0.09], &[1.0, 0.2], [0.0, 0.0]),
        species("trill_finch", [5000.0, 5400.0], [-500.0, 500.0], [8, 14], [0.02, 0.035], [0.02, 0.04], &[1.0], [0.0, 0.0]),
        species("buzz_bunting", [6000.0, 6400.0], [-500.0, 500.0], [1, 2], [0.3, 0.5], [0.1, 0.2], &[1.0], [40.0, 60.0]),
        species("whistle_dove", [800.0, 1000.0], [-200.0, 200.0], [2, 4], [0.25, 0.4], [0.1, 0.2], &[1.0, 0.3, 0.15], [0.0, 0.0]),
        species("hoot_owl", [380.0, 480.0], [-300.0, 0.0], [2, 4], [0.3, 0.45], [0.2, 0.3], &[1.0, 0.35, 0.1], [0.0, 0.0]),
        warbler("yellow_warbler", [1000.0, 2200.0], "wilsons_warbler"),
        warbler("wilsons_warbler", [3800.0, 5000.0], "yellow_warbler"),
    ]
}

/// Share of warbler individuals that sing the other warbler's song type.
pub const WARBLER_SHARED_SONG: f64 = 0.15;

fn warbler(name: &str, slope: [f64; 2], partner: &str) -> SpeciesModel {
    SpeciesModel {
        shared_song: Some(SharedSong {
            species: partner.to_string(),
            probability: WARBLER_SHARED_SONG,
        }),
        ..species(name, [3400.0, 3800.0], slope, [3, 5], [0.15, 0.2], [0.05, 0.1], &[1.0, 0.15], [0.0, 0.0])
    }
}

/// Names of the deliberately confusable pair in [`default_species`].
pub const HARD_PAIR: [&str; 2] = ["yellow_warbler", "wilsons_warbler"];

impl Default for SoundscapeConfig {
    fn default() -> Self {
        Self {
            species: default_species(),
            clips_per_species: 100,
            clip_duration_s: 4.0,
            sample_rate_hz: 16_000,
            background: 0.01,
            distractor_probability: 0.1,
            distractor_level_db: -6.0,
        }
    }
}

/// Triangular draw over `r`, peaked at its midpoint, so that two species with
/// overlapping ranges have a well-defined boundary between them.
fn centered(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    let u = 0.5 * (rng.gen::<f64>() + rng.gen::<f64>());
    r[0] + (r[1] - r[0]) * u
}

/// One call: chirp syllables with harmonics, raised-cosine envelope and
/// optional amplitude modulation, peak-normalized to 0.7.
pub fn synth_call(species: &SpeciesModel, seed: u64, rate: u32) -> AudioClip {
    let mut rng = seed::rng(seed);
    let n_syl = rng.gen_range(species.n_syllables[0]..=species.n_syllables[1]);
    let f0 = centered(&mut rng, species.f0_hz);
    let slope = centered(&mut rng, species.chirp_slope_hz_per_s);
    let dur = centered(&mut rng, species.syllable_dur_s);
    let gap = centered(&mut rng, species.gap_s);
    let am = centered(&mut rng, species.am_rate_hz);
    let fs = f64::from(rate);
    let nyquist = fs / 2.0;
    let syl_len = (dur * fs).round() as usize;
    let gap_len = (gap * fs).round() as usize;
    let tau = 2.0 * std::f64::consts::PI;

    let mut out: Vec<f64> = Vec::with_capacity(n_syl as usize * (syl_len + gap_len));
    for s in 0..n_syl {
        if s > 0 {
            out.extend(std::iter::repeat(0.0).take(gap_len));
        }
        for i in 0..syl_len {
            let t = i as f64 / fs;
            let phase = tau * (f0 * t + 0.5 * slope * t * t);
            let inst = f0 + slope * t;
            let mut v = 0.0;
            for (h, w) in species.harmonic_weights.iter().enumerate() {
                let order = (h + 1) as f64;
                if inst * order < nyquist && inst > 0.0 {
                    v += w * (order * phase).sin();
                }
            }
            let env = 0.5 - 0.5 * (tau * i as f64 / syl_len as f64).cos();
            let mod_gain = if am > 0.0 { 0.6 + 0.4 * (tau * am * t).cos() } else { 1.0 };
            out.push(v * env * mod_gain);
        }
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if peak > 0.0 { f64::from(CALL_PEAK) / peak } else { 0.0 };
    AudioClip {
        samples: out.into_iter().map(|x| (x * scale) as f32).collect(),
        sample_rate_hz: rate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    Hum,
    Rain,
    Insect,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 6] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::Brown,
        NoiseKind::Hum,
        NoiseKind::Rain,
        NoiseKind::Insect,
    ];
}

fn normalize_rms(mut v: Vec<f64>, rms: f64) -> Vec<f32> {
    let p = (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt();
    if p > 0.0 {
        for x in &mut v {
            *x *= rms / p;
        }
    }
    v.into_iter().map(|x| (x as f32).clamp(-1.0, 1.0)).collect()
}

fn pink(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    // Paul Kellet's refined pinking filter
    let mut b = [0.0f64; 7];
    (0..len)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            out
        })
        .collect()
}

/// Ambience of the given kind at 0.1 RMS.
pub fn background_noise(kind: NoiseKind, len: usize, rate: u32, seed: u64) -> AudioClip {
    let mut rng = seed::rng(seed);
    let fs = f64::from(rate);
    let tau = 2.0 * std::f64::consts::PI;
    let raw: Vec<f64> = match kind {
        NoiseKind::White => (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        NoiseKind::Pink => pink(&mut rng, len),
        NoiseKind::Brown => {
            let mut acc = 0.0;
            (0..len)
                .map(|_| {
                    acc = 0.995 * acc + rng.gen_range(-1.0..1.0);
                    acc
                })
                .collect()
        }
        NoiseKind::Hum => {
            let base = if rng.gen::<bool>() { 50.0 } else { 60.0 } * rng.gen_range(0.98..1.02);
            let floor = pink(&mut rng, len);
            (0..len)
                .map(|i| {
                    let t = i as f64 / fs;
                    (1..=6).map(|h| (tau * base * h as f64 * t).sin() / h as f64).sum::<f64>() + 0.05 * floor[i]
                })
                .collect()
        }
        NoiseKind::Rain => {
            let mut v = pink(&mut rng, len);
            for x in &mut v {
                *x *= 0.2;
            }
            let drops = (len as f64 / fs * 150.0) as usize;
            for _ in 0..drops {
                let at = rng.gen_range(0..len.max(1));
                let amp: f64 = rng.gen_range(0.5..2.0);
                let decay = rng.gen_range(30.0..120.0) / fs;
                for j in 0..(len - at).min(200) {
                    v[at + j] += amp * (-(j as f64) * decay * 60.0).exp() * rng.gen_range(-1.0..1.0);
                }
            }
            v
        }
        NoiseKind::Insect => {
            let carrier = rng.gen_range(6000.0..7200.0f64).min(fs / 2.0 * 0.9);
            let pulse = rng.gen_range(15.0..40.0);
            let mut phase = 0.0;
            (0..len)
                .map(|i| {
                    let t = i as f64 / fs;
                    phase += tau * (carrier + 150.0 * rng.gen_range(-1.0..1.0)) / fs;
                    let gate = (0.5 + 0.5 * (tau * pulse * t).sin()).powi(2);
                    phase.sin() * gate
                })
                .collect()
        }
    };
    AudioClip {
        samples: normalize_rms(raw, 0.1),
        sample_rate_hz: rate,
    }
}

/// Where a call was placed inside a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub species_index: usize,
    pub onset: usize,
    pub len: usize,
    pub gain: f32,
    pub distractor: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub clip: AudioClip,
    pub label: usize,
    /// Species whose song the labeled individual sings; differs from `label`
    /// only through [`SharedSong`].
    pub song: usize,
    pub placements: Vec<Placement>,
}

fn energy(x: &[f32]) -> f64 {
    x.iter().map(|&v| f64::from(v).powi(2)).sum()
}

/// A soundscape clip containing 1-3 calls of `species_index` over a pink bed,
/// optionally with one quieter call of a different species.
pub fn synth_clip(config: &SoundscapeConfig, species_index: usize, seed: u64) -> Result<SynthClip, SynthError> {
    if species_index >= config.species.len() {
        return Err(SynthError::InvalidConfig(format!(
            "species index {species_index} out of range for {} species",
            config.species.len()
        )));
    }
    let rate = config.sample_rate_hz;
    let len = (config.clip_duration_s * f64::from(rate)).round() as usize;
    let mut rng = seed::rng(seed);
    let mut mix = vec![0.0f32; len];
    let mut placements: Vec<Placement> = Vec::new();
    let mut call_energy = Vec::new();

    // One individual per clip: it repeats the same call at varying levels.
    let own = &config.species[species_index];
    let mut song = species_index;
    if let Some(shared) = &own.shared_song {
        if rng.gen::<f64>() < shared.probability {
            song = config.species.iter().position(|s| s.name == shared.species).ok_or_else(|| {
                SynthError::InvalidConfig(format!("{} shares the song of unknown species {}", own.name, shared.species))
            })?;
        }
    }
    let call = synth_call(&config.species[song], seed::derive(seed, &[1]), rate);
    let call_len = call.len().min(len);
    let n_calls = rng.gen_range(1..=3usize);
    for _ in 0..n_calls {
        let gain = rng.gen_range(0.4..1.0f32);
        let free = |onset: usize, ps: &[Placement]| {
            ps.iter().all(|p| onset + call_len <= p.onset || onset >= p.onset + p.len)
        };
        let slot = (0..64)
            .map(|_| rng.gen_range(0..=len - call_len))
            .find(|&o| free(o, &placements));
        let Some(onset) = slot else { continue };
        for (dst, &s) in mix[onset..onset + call_len].iter_mut().zip(&call.samples) {
            *dst += gain * s;
        }
        call_energy.push(f64::from(gain).powi(2) * energy(&call.samples[..call_len]));
        placements.push(Placement {
            species_index,
            onset,
            len: call_len,
            gain,
            distractor: false,
        });
    }

    if rng.gen::<f64>() < config.distractor_probability {
        let others = config.species.len() - 1;
        let mut other = rng.gen_range(0..others);
        if other >= species_index {
            other += 1;
        }
        let call = synth_call(&config.species[other], seed::derive(seed, &[2]), rate);
        let call_len = call.len().min(len);
        let target = call_energy.iter().sum::<f64>() / call_energy.len().max(1) as f64
            * 10f64.powf(config.distractor_level_db / 10.0);
        let own = energy(&call.samples[..call_len]);
        let gain = if own > 0.0 { (target / own).sqrt() as f32 } else { 0.0 };
        let onset = rng.gen_range(0..=len - call_len);
        for (dst, &s) in mix[onset..onset + call_len].iter_mut().zip(&call.samples) {
            *dst += gain * s;
        }
        placements.push(Placement {
            species_index: other,
            onset,
            len: call_len,
            gain,
            distractor: true,
        });
    }

    if config.background > 0.0 {
        let bed = normalize_rms(pink(&mut rng, len), config.background);
        for (dst, b) in mix.iter_mut().zip(bed) {
            *dst += b;
        }
    }
    let peak = mix.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        for s in &mut mix {
            *s /= peak;
        }
    }
    Ok(SynthClip {
        clip: AudioClip {
            samples: mix,
            sample_rate_hz: rate,
        },
        label: species_index,
        song,
        placements,
    })
}

/// Seed of clip `index` of species `species` under a dataset seed.
pub fn clip_seed(dataset_seed: u64, species: usize, index: usize) -> u64 {
    seed::derive(dataset_seed, &[species as u64, index as u64])
}

fn metadata(seed: u64) -> (String, String) {
    let site = seed % 12 + 1;
    let month = (seed >> 8) % 12 + 1;
    let day = (seed >> 16) % 28 + 1;
    (format!("site-{site:02}"), format!("2024-{month:02}-{day:02}"))
}

/// Writes every clip as a WAV file under `out_dir/<species>/` and the manifest
/// at `out_dir/manifest.csv` (paths relative to `out_dir`).
pub fn generate_dataset(config: &SoundscapeConfig, out_dir: &Path, seed: u64) -> Result<PathBuf, SynthError> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    for s in &config.species {
        fs::create_dir_all(out_dir.join(&s.name))?;
    }
    let jobs: Vec<(usize, usize)> = (0..config.species.len())
        .flat_map(|s| (0..config.clips_per_species).map(move |i| (s, i)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(s, i)| -> Result<ManifestRow, SynthError> {
            let name = &config.species[s].name;
            let clip_seed = clip_seed(seed, s, i);
            let synth = synth_clip(config, s, clip_seed)?;
            let rel = format!("{name}/{name}_{i:04}.wav");
            write_wav(&synth.clip, out_dir.join(&rel))?;
            let (location, date) = metadata(clip_seed);
            Ok(ManifestRow {
                path: rel,
                species: name.clone(),
                location,
                date,
                duration_s: synth.clip.duration_s(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = out_dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &rows).map_err(|e| SynthError::IoFailure(e.to_string()))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{log_mel_spectrogram, mel_center_frequencies, MelParams};

    fn tone_species(f0: f64) -> SpeciesModel {
        species("tone", [f0, f0], [0.0, 0.0], [3, 3], [0.1, 0.1], [0.05, 0.05], &[1.0], [0.0, 0.0])
    }

    fn dominant_freq(clip: &AudioClip) -> f64 {
        use rustfft::{num_complex::Complex, FftPlanner};
        let size = (clip.len() * 4).next_power_of_two();
        let mut buf: Vec<Complex<f64>> = clip.samples.iter().map(|&s| Complex::new(f64::from(s), 0.0)).collect();
        buf.resize(size, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(size).process(&mut buf);
        let k = (1..size / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap();
        k as f64 * f64::from(clip.sample_rate_hz) / size as f64
    }

    #[test]
    fn pure_tone_call_peaks_at_f0() {
        let call = synth_call(&tone_species(2000.0), 1, 16000);
        assert!((dominant_freq(&call) - 2000.0).abs() <= 20.0);
        assert!((call.peak() - 0.7).abs() < 1e-6);
    }

    #[test]
    fn call_length_follows_construction() {
        let call = synth_call(&tone_species(2000.0), 2, 16000);
        assert!((call.duration_s() - 0.4).abs() <= 1e-3);
    }

    #[test]
    fn calls_are_deterministic() {
        let sp = &default_species()[6];
        assert_eq!(synth_call(sp, 9, 16000), synth_call(sp, 9, 16000));
        assert_ne!(synth_call(sp, 9, 16000), synth_call(sp, 10, 16000));
    }

    #[test]
    fn clip_energy_is_sum_of_calls_without_bed() {
        let cfg = SoundscapeConfig {
            background: 0.0,
            distractor_probability: 0.0,
            ..SoundscapeConfig::default()
        };
        for seed in 0..10 {
            let sc = synth_clip(&cfg, 3, seed).unwrap();
            let total: f64 = sc.clip.samples.iter().map(|&s| f64::from(s).powi(2)).sum();
            let call = synth_call(&cfg.species[3], seed::derive(seed, &[1]), 16000);
            let parts: f64 = sc
                .placements
                .iter()
                .map(|p| {
                    call.samples[..p.len].iter().map(|&s| f64::from(p.gain * s).powi(2)).sum::<f64>()
                })
                .sum();
            assert!(!sc.placements.is_empty());
            assert!((total - parts).abs() <= 1e-6 * parts, "seed {seed}");
        }
    }

    #[test]
    fn clip_is_deterministic_and_bounded() {
        let cfg = SoundscapeConfig {
            distractor_probability: 1.0,
            background: 0.05,
            ..SoundscapeConfig::default()
        };
        for s in 0..cfg.species.len() {
            let a = synth_clip(&cfg, s, 17).unwrap();
            assert_eq!(a, synth_clip(&cfg, s, 17).unwrap());
            assert_eq!(a.label, s);
            assert!(a.clip.peak() <= 1.0);
            assert!(a.placements.iter().any(|p| p.distractor && p.species_index != s));
            assert!(a.placements.iter().all(|p| p.onset + p.len <= a.clip.len()));
        }
        assert_ne!(synth_clip(&cfg, 0, 1).unwrap().clip, synth_clip(&cfg, 0, 2).unwrap().clip);
    }

    #[test]
    fn warblers_share_songs_at_the_configured_rate() {
        let cfg = SoundscapeConfig {
            background: 0.0,
            distractor_probability: 0.0,
            ..SoundscapeConfig::default()
        };
        let n = 2000;
        for (s, partner) in [(6, 7), (7, 6)] {
            let shared = (0..n)
                .filter(|&i| {
                    let c = synth_clip(&cfg, s, i).unwrap();
                    assert!(c.song == s || c.song == partner);
                    c.song == partner
                })
                .count() as f64
                / n as f64;
            // Binomial sd at n = 2000 is about 0.008.
            assert!((shared - WARBLER_SHARED_SONG).abs() < 0.03, "species {s}: {shared}");
        }
        for s in 0..6 {
            assert!((0..50).all(|i| synth_clip(&cfg, s, i).unwrap().song == s));
        }
    }

    #[test]
    fn shared_song_must_name_another_known_species() {
        let mut cfg = SoundscapeConfig::default();
        cfg.species[6].shared_song.as_mut().unwrap().species = "nobody".into();
        assert!(cfg.validate().is_err());
        cfg.species[6].shared_song.as_mut().unwrap().species = "yellow_warbler".into();
        assert!(cfg.validate().is_err());
        cfg.species[6].shared_song.as_mut().unwrap().probability = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn distractor_sits_six_db_below_calls() {
        let mut cfg = SoundscapeConfig {
            distractor_probability: 1.0,
            background: 0.0,
            ..SoundscapeConfig::default()
        };
        cfg.species[6].shared_song = None;
        for (s, seed) in [(2, 5), (4, 6), (6, 7)] {
            let c = synth_clip(&cfg, s, seed).unwrap();
            let mut labeled = Vec::new();
            let mut distractor = 0.0;
            for p in &c.placements {
                let (species, call_seed) = if p.distractor {
                    (p.species_index, seed::derive(seed, &[2]))
                } else {
                    (s, seed::derive(seed, &[1]))
                };
                let call = synth_call(&cfg.species[species], call_seed, cfg.sample_rate_hz);
                let e = f64::from(p.gain).powi(2) * energy(&call.samples[..p.len]);
                if p.distractor {
                    distractor = e;
                } else {
                    labeled.push(e);
                }
            }
            let mean = labeled.iter().sum::<f64>() / labeled.len() as f64;
            let db = 10.0 * (distractor / mean).log10();
            assert!((db + 6.0).abs() < 1e-4, "species {s}: {db} dB");
        }
    }

    #[test]
    fn labeled_band_dominates_log_mel() {
        let mut cfg = SoundscapeConfig {
            background: 0.01,
            distractor_probability: 0.0,
            ..SoundscapeConfig::default()
        };
        cfg.species[0] = tone_species(2000.0);
        let params = MelParams::default();
        let centers = mel_center_frequencies(&params);
        let sc = synth_clip(&cfg, 0, 5).unwrap();
        let spec = log_mel_spectrogram(&sc.clip, &params).unwrap();
        let band_energy: Vec<f64> = (0..spec.n_mels())
            .map(|m| spec.data.row(m).iter().map(|x| x.exp()).sum())
            .collect();
        let best = (0..band_energy.len()).max_by(|&a, &b| band_energy[a].total_cmp(&band_energy[b])).unwrap();
        let nearest = (0..centers.len())
            .min_by(|&a, &b| (centers[a] - 2000.0).abs().total_cmp(&(centers[b] - 2000.0).abs()))
            .unwrap();
        assert!(best.abs_diff(nearest) <= 1, "best band {best} nearest {nearest}");
    }

    #[test]
    fn noise_kinds_are_normalized() {
        for kind in NoiseKind::ALL {
            let n = background_noise(kind, 16000, 16000, 3);
            assert!((n.power().sqrt() - 0.1).abs() < 1e-3, "{kind:?}");
            assert!(n.samples.iter().all(|s| s.is_finite()));
        }
    }

    #[test]
    fn default_config_is_valid() {
        SoundscapeConfig::default().validate().unwrap();
        let mut bad = SoundscapeConfig::default();
        bad.species.truncate(1);
        assert!(bad.validate().is_err());
        let mut bad = SoundscapeConfig::default();
        bad.species[0].f0_hz = [7000.0, 9000.0];
        assert!(bad.validate().is_err());
    }
}
