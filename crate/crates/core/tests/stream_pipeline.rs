use std::io::Cursor;

use chorus::audio::{quantize, AudioClip};
use chorus::features::{MelParams, Normalization};
use chorus::nn::{Network, NetworkConfig};
use chorus::stream::{classify_stream, classify_window, stream_windows, StreamConfig, StreamError, StreamEvent, StreamSource};
use chorus::training::Classifier;
use rand::{Rng, SeedableRng};

fn model() -> Classifier {
    let mel = MelParams {
        n_mels: 16,
        ..MelParams::default()
    };
    let net = Network::<f32>::new(NetworkConfig::micro(3, 16), 5).unwrap();
    let names = ["a", "b", "c"].map(String::from).to_vec();
    Classifier::new(net, names, mel, Normalization::PerSpectrogram).unwrap()
}

fn noise(seconds: f64, seed: u64) -> AudioClip {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * 16000.0) as usize;
    AudioClip::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16000).unwrap()
}

fn run(source: StreamSource, m: &Classifier, cfg: &StreamConfig) -> (chorus::stream::StreamSummary, Vec<StreamEvent>, Vec<u8>) {
    let mut sink = Vec::new();
    let (s, e) = classify_stream(source, m, cfg, &mut sink).unwrap();
    (s, e, sink)
}

#[test]
fn unpaced_stream_matches_offline_windows() {
    let m = model();
    let clip = noise(13.7, 1);
    let cfg = StreamConfig::default();
    let (summary, events, sink) = run(StreamSource::Clip(clip.clone()), &m, &cfg);
    let windows = stream_windows(&clip, &cfg, 16000).unwrap();
    assert_eq!(events.len(), windows.len());
    assert_eq!(summary.windows_offered, windows.len() as u64);
    assert_eq!(summary.windows_emitted + summary.windows_dropped, summary.windows_offered);
    assert_eq!(summary.windows_dropped, 0);
    for (e, w) in events.iter().zip(&windows) {
        assert_eq!((e.window_index, e.window_start_s, e.window_end_s), (w.index, w.start_s, w.end_s));
        assert_eq!(e.probabilities, classify_window(&m, &w.clip).unwrap());
        assert!((e.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(e.compute_latency_ms >= 0.0);
    }
    let written: Vec<StreamEvent> = String::from_utf8(sink)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(written.len(), events.len());
    for (w, e) in written.iter().zip(&events) {
        assert_eq!((w.window_index, &w.predicted_class, w.dropped_windows_so_far), (e.window_index, &e.predicted_class, e.dropped_windows_so_far));
        for (a, b) in w.probabilities.iter().zip(&e.probabilities) {
            assert!((a - b).abs() <= 1e-15);
        }
    }
    let counted: u64 = summary.class_counts.iter().map(|(_, n)| n).sum();
    assert_eq!(counted, summary.windows_emitted);
}

#[test]
fn pcm_source_matches_quantized_clip() {
    let m = model();
    let clip = noise(7.3, 2);
    let bytes: Vec<u8> = clip.samples.iter().flat_map(|&x| quantize(x).to_le_bytes()).collect();
    let quantized = AudioClip::new(
        clip.samples.iter().map(|&x| f32::from(quantize(x)) / 32768.0).collect(),
        16000,
    )
    .unwrap();
    let cfg = StreamConfig::default();
    let pcm = StreamSource::Pcm {
        reader: Box::new(Cursor::new(bytes)),
        rate_hz: 16000,
    };
    let (_, from_pcm, _) = run(pcm, &m, &cfg);
    let (_, from_clip, _) = run(StreamSource::Clip(quantized), &m, &cfg);
    // 7.3 s: the third window would hold 2.3 s, under half, so it is discarded.
    assert_eq!(from_pcm.len(), 2);
    assert_eq!(from_clip.len(), 2);
    for (a, b) in from_pcm.iter().zip(&from_clip) {
        assert_eq!(a.probabilities, b.probabilities);
    }
}

#[test]
fn rate_mismatch_is_rejected() {
    let m = model();
    let clip = AudioClip::silence(44100 * 6, 44100);
    let err = classify_stream(StreamSource::Clip(clip), &m, &StreamConfig::default(), &mut std::io::sink()).unwrap_err();
    assert!(matches!(err, StreamError::RateMismatch { source_hz: 44100, expected_hz: 16000 }));
}

#[test]
fn paced_replay_keeps_up() {
    let m = model();
    let cfg = StreamConfig {
        window_s: 1.0,
        hop_s: 0.5,
        realtime_pacing: true,
        ..StreamConfig::default()
    };
    let (summary, events, _) = run(StreamSource::Clip(noise(3.0, 3)), &m, &cfg);
    assert_eq!(summary.windows_offered, 5);
    assert_eq!(summary.windows_emitted + summary.windows_dropped, 5);
    for pair in events.windows(2) {
        assert!(pair[1].window_start_s > pair[0].window_start_s);
    }
    assert!(summary.latency.unwrap().p95_ms < 1000.0);
}
