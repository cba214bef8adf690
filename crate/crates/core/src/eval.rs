//! Classification metrics, confusion analysis and paired significance tests.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("need at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion_matrix(
    true_labels: &[usize],
    predicted: &[usize],
    class_names: &[String],
) -> Result<ConfusionMatrix, EvalError> {
    if true_labels.len() != predicted.len() {
        return Err(EvalError::LengthMismatch(true_labels.len(), predicted.len()));
    }
    let c = class_names.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&t, &p) in true_labels.iter().zip(predicted) {
        for label in [t, p] {
            if label >= c {
                return Err(EvalError::LabelOutOfRange { label, classes: c });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        class_names: class_names.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Unweighted mean over classes with support > 0.
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    /// Pooled counts; equals accuracy for single-label predictions.
    pub micro: Averages,
    pub classes: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.name == name)
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn f1(p: f64, r: f64) -> (f64, bool) {
    if p + r == 0.0 {
        (0.0, true)
    } else {
        (2.0 * p * r / (p + r), false)
    }
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let c = cm.counts.len();
    let mut classes = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.counts[k][k];
        let support: u64 = cm.counts[k].iter().sum();
        let predicted: u64 = (0..c).map(|t| cm.counts[t][k]).sum();
        let (precision, dp) = ratio(tp, predicted);
        let (recall, dr) = ratio(tp, support);
        let (f, df) = f1(precision, recall);
        classes.push(ClassMetrics {
            name: cm.class_names[k].clone(),
            precision,
            recall,
            f1: f,
            support,
            degenerate: dp || dr || df,
        });
    }
    let included: Vec<&ClassMetrics> = classes.iter().filter(|m| m.support > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| included.iter().map(|m| f(m)).sum::<f64>() / included.len() as f64;
    let accuracy = cm.trace() as f64 / total as f64;
    Ok(MetricsReport {
        accuracy,
        macro_avg: Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        },
        micro: Averages {
            precision: accuracy,
            recall: accuracy,
            f1: accuracy,
        },
        classes,
        confusion: cm.counts.clone(),
    })
}

/// Anything that maps clips to class probabilities.
pub trait Predictor {
    type Error: std::error::Error + From<EvalError>;

    fn class_names(&self) -> &[String];

    /// One probability row per clip.
    fn predict_proba(&self, clips: &[&AudioClip]) -> Result<Vec<Vec<f64>>, Self::Error>;
}

pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Argmax predictions on `clips` scored against `labels`.
pub fn evaluate_model<P: Predictor>(
    model: &P,
    clips: &[&AudioClip],
    labels: &[usize],
) -> Result<MetricsReport, P::Error> {
    if clips.len() != labels.len() {
        return Err(EvalError::LengthMismatch(clips.len(), labels.len()).into());
    }
    let probs = model.predict_proba(clips)?;
    let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let cm = confusion_matrix(labels, &predicted, model.class_names())?;
    Ok(metrics_from_confusion(&cm)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    PairedT,
    Wilcoxon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub method: TestMethod,
    /// t for the t-test, W+ for Wilcoxon.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs used (Wilcoxon drops zero differences).
    pub n: usize,
    pub zero_differences: usize,
    pub mean_difference: f64,
    pub exact: bool,
    pub degenerate: bool,
}

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Two-sided Student t tail, `P(|T| >= |t|)` with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Paired two-sided t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<SignificanceResult, EvalError> {
    let d = differences(a, b)?;
    let n = d.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples { n, min: 2 });
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let zeros = d.iter().filter(|&&x| x == 0.0).count();
    let base = SignificanceResult {
        method: TestMethod::PairedT,
        statistic: 0.0,
        p_value: 1.0,
        n,
        zero_differences: zeros,
        mean_difference: mean,
        exact: true,
        degenerate: true,
    };
    if zeros == n {
        return Ok(base);
    }
    if var == 0.0 {
        return Ok(SignificanceResult {
            statistic: mean.signum() * f64::INFINITY,
            p_value: 0.0,
            ..base
        });
    }
    let t = mean / (var / n as f64).sqrt();
    Ok(SignificanceResult {
        statistic: t,
        p_value: student_t_two_sided(t, (n - 1) as f64),
        degenerate: false,
        ..base
    })
}

/// Ranks of `|d|`, ties sharing their average rank, doubled so they stay integral.
fn doubled_ranks(d: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut ranks = vec![0u64; d.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && d[order[j + 1]].abs() == d[order[i]].abs() {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1; doubled average = i + j + 2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Size of tie groups among `|d|`.
fn tie_sizes(d: &[f64]) -> Vec<usize> {
    let mut a: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    a.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < a.len() {
        let j = a[i..].iter().take_while(|&&x| x == a[i]).count();
        sizes.push(j);
        i += j;
    }
    sizes
}

pub const WILCOXON_EXACT_MAX_N: usize = 20;

/// Null distribution of the doubled W+ as counts over all `2^n` sign assignments.
fn signed_rank_counts(ranks: &[u64]) -> Vec<u64> {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Wilcoxon signed-rank test on `a - b`, two-sided. Exact for up to 20 nonzero
/// differences, normal approximation with tie and continuity corrections above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<SignificanceResult, EvalError> {
    let all = differences(a, b)?;
    let d: Vec<f64> = all.iter().copied().filter(|&x| x != 0.0).collect();
    let zeros = all.len() - d.len();
    let n = d.len();
    let mean_difference = if all.is_empty() {
        0.0
    } else {
        all.iter().sum::<f64>() / all.len() as f64
    };
    if n == 0 {
        return Ok(SignificanceResult {
            method: TestMethod::Wilcoxon,
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            zero_differences: zeros,
            mean_difference,
            exact: true,
            degenerate: true,
        });
    }
    let ranks = doubled_ranks(&d);
    let w2: u64 = ranks.iter().zip(&d).filter(|(_, &x)| x > 0.0).map(|(r, _)| r).sum();
    let t2: u64 = ranks.iter().sum();
    let statistic = w2 as f64 / 2.0;
    let (p_value, exact) = if n <= WILCOXON_EXACT_MAX_N {
        let counts = signed_rank_counts(&ranks);
        let observed = (2 * w2).abs_diff(t2);
        let extreme: u64 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (2 * *s as u64).abs_diff(t2) >= observed)
            .map(|(_, c)| c)
            .sum();
        (extreme as f64 / 2f64.powi(n as i32), true)
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let ties: f64 = tie_sizes(&d).iter().map(|&t| (t * t * t - t) as f64).sum();
        let sigma = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0).sqrt();
        let z = ((statistic - mu).abs() - 0.5).max(0.0) / sigma;
        (erfc(z / std::f64::consts::SQRT_2).min(1.0), false)
    };
    Ok(SignificanceResult {
        method: TestMethod::Wilcoxon,
        statistic,
        p_value,
        n,
        zero_differences: zeros,
        mean_difference,
        exact,
        degenerate: false,
    })
}

/// Sample mean and sample standard deviation (n - 1).
pub fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
