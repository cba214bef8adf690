//! Sliding-window classification of a live or replayed audio stream.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::eval::argmax;
use crate::training::data::predict_specs;
use crate::training::{Classifier, TrainError};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("source is {source_hz} Hz, pipeline expects {expected_hz} Hz")]
    RateMismatch { source_hz: u32, expected_hz: u32 },
    #[error("invalid stream config: {0}")]
    InvalidConfig(String),
    #[error("no events to summarize")]
    Empty,
    #[error("stream i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] TrainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub min_fill_ratio: f64,
    pub queue_capacity: usize,
    /// Deliver file samples at wall-clock rate. Only paced streams drop windows;
    /// unpaced replay blocks the producer instead.
    pub realtime_pacing: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            window_s: 5.0,
            hop_s: 2.5,
            min_fill_ratio: 0.5,
            queue_capacity: 4,
            realtime_pacing: false,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |m: String| Err(StreamError::InvalidConfig(m));
        if !(self.hop_s > 0.0 && self.hop_s <= self.window_s && self.window_s.is_finite()) {
            return bad(format!("need 0 < hop_s <= window_s, got {} and {}", self.hop_s, self.window_s));
        }
        if !(self.min_fill_ratio > 0.0 && self.min_fill_ratio <= 1.0) {
            return bad(format!("min_fill_ratio {} outside (0, 1]", self.min_fill_ratio));
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity must be positive".into());
        }
        Ok(())
    }

    fn samples(&self, rate: u32) -> (usize, usize) {
        let w = (self.window_s * f64::from(rate)).round() as usize;
        let h = (self.hop_s * f64::from(rate)).round() as usize;
        (w.max(1), h.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub clip: AudioClip,
}

/// Cuts windows out of a growing sample buffer as soon as each is complete.
struct Windower {
    window: usize,
    hop: usize,
    min_fill: f64,
    rate: u32,
    buf: Vec<f32>,
    /// Absolute sample index of `buf[0]`.
    offset: usize,
    next: usize,
    last_end: usize,
}

impl Windower {
    fn new(cfg: &StreamConfig, rate: u32) -> Self {
        let (window, hop) = cfg.samples(rate);
        Self {
            window,
            hop,
            min_fill: cfg.min_fill_ratio,
            rate,
            buf: Vec::new(),
            offset: 0,
            next: 0,
            last_end: 0,
        }
    }

    fn make(&mut self, len: usize) -> Window {
        let start = self.next * self.hop;
        let from = start - self.offset;
        let mut samples = self.buf[from..from + len].to_vec();
        samples.resize(self.window, 0.0);
        let r = f64::from(self.rate);
        let w = Window {
            index: self.next,
            start_s: start as f64 / r,
            end_s: (start + len) as f64 / r,
            clip: AudioClip {
                samples,
                sample_rate_hz: self.rate,
            },
        };
        self.last_end = start + len;
        self.next += 1;
        w
    }

    fn push(&mut self, samples: &[f32], out: &mut impl FnMut(Window)) {
        self.buf.extend_from_slice(samples);
        while self.next * self.hop + self.window <= self.offset + self.buf.len() {
            let w = self.make(self.window);
            out(w);
        }
        let keep_from = (self.next * self.hop).min(self.offset + self.buf.len());
        if keep_from > self.offset {
            self.buf.drain(..keep_from - self.offset);
            self.offset = keep_from;
        }
    }

    /// A trailing partial window is kept when it holds samples no earlier window
    /// covered and is at least `min_fill` full.
    fn finish(&mut self, out: &mut impl FnMut(Window)) {
        let total = self.offset + self.buf.len();
        let start = self.next * self.hop;
        if total <= self.last_end || start >= total {
            return;
        }
        let len = total - start;
        if len as f64 >= self.min_fill * self.window as f64 {
            let w = self.make(len);
            out(w);
        }
    }
}

/// All windows of a complete source.
pub fn stream_windows(source: &AudioClip, cfg: &StreamConfig, rate: u32) -> Result<Vec<Window>, StreamError> {
    cfg.validate()?;
    if source.sample_rate_hz != rate {
        return Err(StreamError::RateMismatch {
            source_hz: source.sample_rate_hz,
            expected_hz: rate,
        });
    }
    let mut w = Windower::new(cfg, rate);
    let mut out = Vec::new();
    w.push(&source.samples, &mut |x| out.push(x));
    w.finish(&mut |x| out.push(x));
    Ok(out)
}

pub enum StreamSource {
    /// File replay, optionally paced at wall-clock rate.
    Clip(AudioClip),
    /// Raw little-endian 16-bit mono PCM.
    Pcm { reader: Box<dyn Read + Send>, rate_hz: u32 },
}

impl StreamSource {
    fn rate(&self) -> u32 {
        match self {
            Self::Clip(c) => c.sample_rate_hz,
            Self::Pcm { rate_hz, .. } => *rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub window_index: usize,
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub predicted_class: String,
    pub probabilities: Vec<f64>,
    pub compute_latency_ms: f64,
    pub dropped_windows_so_far: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

/// Mean, nearest-rank 95th percentile and maximum.
pub fn latency_stats(latencies_ms: &[f64]) -> Result<LatencyStats, StreamError> {
    if latencies_ms.is_empty() {
        return Err(StreamError::Empty);
    }
    let mut sorted = latencies_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Ok(LatencyStats {
        mean_ms: sorted.iter().sum::<f64>() / n as f64,
        p95_ms: sorted[rank - 1],
        max_ms: sorted[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub windows_offered: u64,
    pub windows_emitted: u64,
    pub windows_dropped: u64,
    pub latency: Option<LatencyStats>,
    /// Emitted windows per predicted class, in class order.
    pub class_counts: Vec<(String, u64)>,
}

struct Job {
    window: Window,
    ready: Instant,
}

struct Queue {
    items: Mutex<(VecDeque<Job>, bool)>,
    cond: Condvar,
    capacity: usize,
    drop_oldest: bool,
    dropped: AtomicU64,
    offered: AtomicU64,
    cancelled: AtomicBool,
}

impl Queue {
    fn push(&self, job: Job) {
        self.offered.fetch_add(1, Ordering::SeqCst);
        let mut g = self.items.lock().expect("queue lock");
        if self.drop_oldest {
            if g.0.len() >= self.capacity {
                g.0.pop_front();
                self.dropped.fetch_add(1, Ordering::SeqCst);
            }
        } else {
            while g.0.len() >= self.capacity && !self.cancelled.load(Ordering::SeqCst) {
                g = self.cond.wait(g).expect("queue lock");
            }
        }
        g.0.push_back(job);
        self.cond.notify_all();
    }

    fn close(&self) {
        self.items.lock().expect("queue lock").1 = true;
        self.cond.notify_all();
    }

    fn pop(&self) -> Option<Job> {
        let mut g = self.items.lock().expect("queue lock");
        loop {
            if let Some(j) = g.0.pop_front() {
                self.cond.notify_all();
                return Some(j);
            }
            if g.1 {
                return None;
            }
            g = self.cond.wait(g).expect("queue lock");
        }
    }
}

const CHUNK_S: f64 = 0.05;

fn produce(source: StreamSource, cfg: &StreamConfig, queue: &Queue) -> Result<(), StreamError> {
    let rate = source.rate();
    let mut w = Windower::new(cfg, rate);
    let mut emit = |window: Window| {
        queue.push(Job {
            window,
            ready: Instant::now(),
        })
    };
    let chunk = ((CHUNK_S * f64::from(rate)) as usize).max(1);
    match source {
        StreamSource::Clip(clip) => {
            let t0 = Instant::now();
            for (i, part) in clip.samples.chunks(chunk).enumerate() {
                if queue.cancelled.load(Ordering::SeqCst) {
                    return Ok(());
                }
                if cfg.realtime_pacing {
                    let due = t0 + Duration::from_secs_f64(((i * chunk + part.len()) as f64) / f64::from(rate));
                    let now = Instant::now();
                    if due > now {
                        std::thread::sleep(due - now);
                    }
                }
                w.push(part, &mut emit);
            }
        }
        StreamSource::Pcm { mut reader, .. } => {
            let mut bytes = vec![0u8; chunk * 2];
            let mut carry: Option<u8> = None;
            loop {
                if queue.cancelled.load(Ordering::SeqCst) {
                    return Ok(());
                }
                let n = reader.read(&mut bytes)?;
                if n == 0 {
                    break;
                }
                let mut raw: Vec<u8> = carry.take().into_iter().collect();
                raw.extend_from_slice(&bytes[..n]);
                if raw.len() % 2 == 1 {
                    carry = raw.pop();
                }
                let samples: Vec<f32> = raw
                    .chunks_exact(2)
                    .map(|b| f32::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
                    .collect();
                w.push(&samples, &mut emit);
            }
        }
    }
    w.finish(&mut emit);
    Ok(())
}

/// Softmax over one window, as an offline reference for the streaming path.
pub fn classify_window(model: &Classifier, clip: &AudioClip) -> Result<Vec<f64>, StreamError> {
    let spec = model.featurizer()?.input(clip)?;
    let mut probs = predict_specs(&model.net, &[spec]).map_err(TrainError::from)?;
    Ok(probs.remove(0))
}

/// Runs a producer thread over `source` and classifies windows on the calling
/// thread, writing one JSON line per event to `sink`.
pub fn classify_stream(
    source: StreamSource,
    model: &Classifier,
    cfg: &StreamConfig,
    sink: &mut dyn Write,
) -> Result<(StreamSummary, Vec<StreamEvent>), StreamError> {
    cfg.validate()?;
    let expected = model.mel.sample_rate_hz;
    if source.rate() != expected {
        return Err(StreamError::RateMismatch {
            source_hz: source.rate(),
            expected_hz: expected,
        });
    }
    let featurizer = model.featurizer()?;
    let queue = Queue {
        items: Mutex::new((VecDeque::new(), false)),
        cond: Condvar::new(),
        capacity: cfg.queue_capacity,
        drop_oldest: cfg.realtime_pacing,
        dropped: AtomicU64::new(0),
        offered: AtomicU64::new(0),
        cancelled: AtomicBool::new(false),
    };
    let mut events = Vec::new();
    let mut counts = vec![0u64; model.class_names.len()];

    let consumed = std::thread::scope(|s| {
        let producer = s.spawn(|| {
            let r = produce(source, cfg, &queue);
            queue.close();
            r
        });
        let mut consume = || -> Result<(), StreamError> {
            while let Some(job) = queue.pop() {
                let spec = featurizer.input(&job.window.clip)?;
                let probs = predict_specs(&model.net, &[spec]).map_err(TrainError::from)?.remove(0);
                let best = argmax(&probs);
                counts[best] += 1;
                let ev = StreamEvent {
                    window_index: job.window.index,
                    window_start_s: job.window.start_s,
                    window_end_s: job.window.end_s,
                    predicted_class: model.class_names[best].clone(),
                    probabilities: probs,
                    compute_latency_ms: job.ready.elapsed().as_secs_f64() * 1e3,
                    dropped_windows_so_far: queue.dropped.load(Ordering::SeqCst),
                };
                let mut line = serde_json::to_string(&ev).expect("event serializes");
                line.push('\n');
                sink.write_all(line.as_bytes())?;
                sink.flush()?;
                events.push(ev);
            }
            Ok(())
        };
        let result = consume();
        if result.is_err() {
            queue.cancelled.store(true, Ordering::SeqCst);
            queue.cond.notify_all();
        }
        let produced = producer.join().expect("producer thread");
        result.and(produced)
    });
    consumed?;

    let latencies: Vec<f64> = events.iter().map(|e| e.compute_latency_ms).collect();
    let summary = StreamSummary {
        windows_offered: queue.offered.load(Ordering::SeqCst),
        windows_emitted: events.len() as u64,
        windows_dropped: queue.dropped.load(Ordering::SeqCst),
        latency: latency_stats(&latencies).ok(),
        class_counts: model.class_names.iter().cloned().zip(counts).collect(),
    };
    Ok((summary, events))
}
