use serde::{Deserialize, Serialize};

use super::baseline::{train_baseline, BASELINE_EPOCHS, BASELINE_LR};
use super::data::Corpus;
use super::split::{kfold_split, stratified_partition};
use super::trainer::train_model;
use super::{TrainConfig, TrainError};
use crate::eval::{evaluate_model, mean_and_sd, paired_t_test, wilcoxon_signed_rank, SignificanceResult};
use crate::nn::NetworkConfig;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub seed: u64,
    pub fold: usize,
    pub test_size: usize,
    pub cnn_accuracy: f64,
    pub cnn_macro_f1: f64,
    pub baseline_accuracy: f64,
    pub baseline_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation.
    pub sd: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, sd) = mean_and_sd(xs);
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub folds: Vec<FoldResult>,
    /// CNN accuracy over the folds of each seed, in `seeds` order.
    pub cnn_by_seed: Vec<Summary>,
    pub cnn: Summary,
    pub baseline: Summary,
    /// CNN minus baseline accuracy over all fold pairs.
    pub t_test: SignificanceResult,
    pub wilcoxon: SignificanceResult,
}

/// Stratified k-fold evaluation repeated for each seed. Within every fold a
/// validation subset for checkpoint selection is carved from the training folds
/// using the configured val/train proportion; the baseline trains on the same
/// training folds.
pub fn cross_validate(
    corpus: &Corpus,
    net_config: &NetworkConfig,
    cfg: &TrainConfig,
    k: usize,
    seeds: &[u64],
) -> Result<CrossvalReport, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::InvalidConfig("no cross-validation seeds".into()));
    }
    let [tr, va, _] = cfg.split_ratios;
    let mut folds_out = Vec::new();
    for &s in seeds {
        let folds = kfold_split(&corpus.labels, k, s)?;
        for (f, test) in folds.iter().enumerate() {
            let pool: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != f)
                .flat_map(|(_, ix)| ix.iter().copied())
                .collect();
            let parts = stratified_partition(&corpus.labels_at(&pool), &[tr, va], seed::derive(s, &[5, f as u64]))?;
            let train: Vec<usize> = parts[0].iter().map(|&p| pool[p]).collect();
            let val: Vec<usize> = parts[1].iter().map(|&p| pool[p]).collect();
            let run_cfg = TrainConfig {
                seed: seed::derive(cfg.seed, &[s, f as u64]),
                ..cfg.clone()
            };
            let clips = corpus.clips_at(test);
            let labels = corpus.labels_at(test);
            let cnn = train_model(corpus, &train, &val, net_config, &run_cfg)?;
            let cnn_report = evaluate_model(&cnn.model, &clips, &labels)?;
            let base = train_baseline(corpus, &pool, &cfg.mel, cfg.normalization, BASELINE_LR, BASELINE_EPOCHS)?;
            let base_report = evaluate_model(&base, &clips, &labels)?;
            log::info!(
                "seed {s} fold {f}: cnn {:.4}, baseline {:.4}",
                cnn_report.accuracy,
                base_report.accuracy
            );
            folds_out.push(FoldResult {
                seed: s,
                fold: f,
                test_size: test.len(),
                cnn_accuracy: cnn_report.accuracy,
                cnn_macro_f1: cnn_report.macro_avg.f1,
                baseline_accuracy: base_report.accuracy,
                baseline_macro_f1: base_report.macro_avg.f1,
            });
        }
    }
    summarize(k, seeds, folds_out)
}

pub fn summarize(k: usize, seeds: &[u64], folds: Vec<FoldResult>) -> Result<CrossvalReport, TrainError> {
    let cnn: Vec<f64> = folds.iter().map(|r| r.cnn_accuracy).collect();
    let base: Vec<f64> = folds.iter().map(|r| r.baseline_accuracy).collect();
    let cnn_by_seed = seeds
        .iter()
        .map(|&s| {
            Summary::of(
                &folds
                    .iter()
                    .filter(|r| r.seed == s)
                    .map(|r| r.cnn_accuracy)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    Ok(CrossvalReport {
        k,
        seeds: seeds.to_vec(),
        t_test: paired_t_test(&cnn, &base)?,
        wilcoxon: wilcoxon_signed_rank(&cnn, &base)?,
        cnn: Summary::of(&cnn),
        baseline: Summary::of(&base),
        cnn_by_seed,
        folds,
    })
}
