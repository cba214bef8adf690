use chorus::audio::{resample, AudioClip};
use chorus::augment::{augment_policy, pitch_shift, time_stretch, AugmentConfig, ApplyProbabilities};
use chorus::eval::student_t_two_sided;
use chorus::features::{build_mel_filterbank, zscore_normalize, MelExtractor, MelParams};
use chorus::nn::{he_init, Mode, Network, NetworkConfig, Tensor};
use chorus::stream::{stream_windows, StreamConfig};
use chorus::synth::{clip_seed, synth_clip, SoundscapeConfig};
use proptest::prelude::*;

fn noise_clip(seed: u64, len: usize, rate: u32) -> AudioClip {
    use rand::Rng;
    let mut rng = chorus::seed::rng(seed);
    AudioClip::new((0..len).map(|_| rng.gen_range(-0.5f32..0.5)).collect(), rate).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn resample_keeps_duration(len in 100usize..4000, from in prop::sample::select(vec![8000u32, 11025, 16000, 22050, 44100]),
                               to in prop::sample::select(vec![8000u32, 16000, 22050, 48000])) {
        let c = noise_clip(len as u64, len, from);
        let r = resample(&c, to).unwrap();
        prop_assert_eq!(r.sample_rate_hz, to);
        prop_assert!((r.duration_s() - c.duration_s()).abs() <= 1.0 / f64::from(to));
    }

    #[test]
    fn zscore_is_standard(seed in any::<u64>(), scale in 0.01f32..1.0) {
        let mut c = noise_clip(seed, 4000, 16000);
        for s in &mut c.samples { *s *= scale; }
        let spec = MelExtractor::new(MelParams::default()).unwrap().log_mel(&c).unwrap();
        let z = zscore_normalize(&spec);
        let n = z.data.data.len() as f64;
        let mean = z.data.data.iter().sum::<f64>() / n;
        let sd = (z.data.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-6);
        prop_assert!((sd - 1.0).abs() < 1e-4);
    }

    #[test]
    fn log_mel_monotone_in_power(power in prop::collection::vec(0.0f64..10.0, 257), bin in 0usize..257, bump in 0.0f64..5.0) {
        let p = MelParams::default();
        let fb = build_mel_filterbank(&p).unwrap();
        let mel = |pw: &[f64]| -> Vec<f64> {
            (0..fb.rows).map(|m| (fb.row(m).iter().zip(pw).map(|(w, x)| w * x).sum::<f64>() + p.log_floor).ln()).collect()
        };
        let mut bumped = power.clone();
        bumped[bin] += bump;
        for (a, b) in mel(&power).iter().zip(mel(&bumped)) {
            prop_assert!(b >= *a);
        }
    }

    #[test]
    fn augmentation_stays_in_range(seed in any::<u64>(), stretch in 0.5f64..2.0, semis in -12.0f64..12.0) {
        let mut c = noise_clip(seed, 6000, 16000);
        for s in &mut c.samples { *s *= 1.9; }
        let s = time_stretch(&c, stretch).unwrap();
        let p = pitch_shift(&c, semis).unwrap();
        for out in [&s, &p] {
            prop_assert_eq!(out.sample_rate_hz, 16000);
            prop_assert!(out.samples.iter().all(|x| x.is_finite()));
        }
        let cfg = AugmentConfig {
            apply_probabilities: ApplyProbabilities { stretch: 1.0, pitch: 1.0, noise: 1.0 },
            ..AugmentConfig::default()
        };
        let a = augment_policy(&c, &cfg, seed).unwrap();
        prop_assert!(a.samples.iter().all(|x| x.is_finite() && x.abs() <= 1.0));
        prop_assert_eq!(a.sample_rate_hz, 16000);
        prop_assert_eq!(&a, &augment_policy(&c, &cfg, seed).unwrap());
    }

    #[test]
    fn synth_clips_never_clip_and_seeds_differ(species in 0usize..8, index in 0usize..1000, ds in any::<u64>()) {
        let cfg = SoundscapeConfig::default();
        let a = synth_clip(&cfg, species, clip_seed(ds, species, index)).unwrap();
        prop_assert!(a.clip.peak() <= 1.0);
        let b = synth_clip(&cfg, species, clip_seed(ds.wrapping_add(1), species, index)).unwrap();
        prop_assert_ne!(a.clip.samples, b.clip.samples);
    }

    #[test]
    fn t_tail_monotone(df in 1.0f64..60.0, t in 0.0f64..20.0, dt in 0.001f64..5.0) {
        prop_assert!(student_t_two_sided(t + dt, df) <= student_t_two_sided(t, df));
        prop_assert!((0.0..=1.0).contains(&student_t_two_sided(t, df)));
    }

    #[test]
    fn stream_windows_ordered_and_sized(len_s in 0.0f64..40.0, hop in 0.5f64..5.0, fill in 0.05f64..1.0) {
        let cfg = StreamConfig { hop_s: hop, min_fill_ratio: fill, ..StreamConfig::default() };
        let clip = AudioClip::silence((len_s * 100.0) as usize, 100);
        let w = stream_windows(&clip, &cfg, 100).unwrap();
        for pair in w.windows(2) {
            prop_assert!(pair[1].start_s > pair[0].start_s);
        }
        for x in &w {
            prop_assert_eq!(x.clip.len(), 500);
            prop_assert!(x.end_s - x.start_s <= 5.0 + 1e-9);
            prop_assert!(x.end_s - x.start_s >= fill * 5.0 - 0.01);
        }
        if let Some(last) = w.last() {
            prop_assert!((last.end_s - clip.duration_s()).abs() < 1e-9 || (last.end_s - last.start_s - 5.0).abs() < 1e-9);
        }
    }
}

#[test]
fn infer_is_bitwise_deterministic() {
    let mut net = Network::<f32>::new(NetworkConfig::micro(4, 16), 3).unwrap();
    let x: Tensor<f32> = he_init(&[2, 1, 16, 40], 8);
    net.set_mode(Mode::Train);
    net.forward(&x).unwrap();
    net.set_mode(Mode::Infer);
    let a = net.infer(&x).unwrap();
    let b = net.clone().infer(&x).unwrap();
    assert!(a.data.iter().zip(&b.data).all(|(p, q)| p.to_bits() == q.to_bits()));
}
