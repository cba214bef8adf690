use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Corpus;
use super::trainer::train_model;
use super::{TrainConfig, TrainError};
use crate::nn::NetworkConfig;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SearchSpace {
    Grid {
        lrs: Vec<f64>,
        batch_sizes: Vec<usize>,
    },
    /// `count` draws: lr log-uniform in `lr_range`, batch size uniform over `batch_sizes`.
    Random {
        lr_range: (f64, f64),
        batch_sizes: Vec<usize>,
        count: usize,
    },
}

impl SearchSpace {
    /// `(lr, batch_size)` pairs in evaluation order.
    pub fn candidates(&self, seed: u64) -> Result<Vec<(f64, usize)>, TrainError> {
        let out: Vec<(f64, usize)> = match self {
            Self::Grid { lrs, batch_sizes } => lrs
                .iter()
                .flat_map(|&lr| batch_sizes.iter().map(move |&b| (lr, b)))
                .collect(),
            Self::Random {
                lr_range: (lo, hi),
                batch_sizes,
                count,
            } => {
                if batch_sizes.is_empty() {
                    return Err(TrainError::EmptyGrid);
                }
                if !(*lo > 0.0 && lo <= hi) {
                    return Err(TrainError::InvalidConfig(format!("bad lr range ({lo}, {hi})")));
                }
                let mut rng = seed::rng(seed);
                (0..*count)
                    .map(|_| {
                        let lr = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
                        (lr, batch_sizes[rng.gen_range(0..batch_sizes.len())])
                    })
                    .collect()
            }
        };
        if out.is_empty() {
            return Err(TrainError::EmptyGrid);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub lr: f64,
    pub batch_size: usize,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub best: TrainConfig,
    /// Best first.
    pub leaderboard: Vec<LeaderboardRow>,
}

/// Higher accuracy, then lower lr, then smaller batch.
pub fn rank(a: &LeaderboardRow, b: &LeaderboardRow) -> Ordering {
    b.val_acc
        .total_cmp(&a.val_acc)
        .then(a.lr.total_cmp(&b.lr))
        .then(a.batch_size.cmp(&b.batch_size))
}

/// Scores every candidate with `score`, which returns validation `(accuracy, loss)`.
pub fn search_with(
    base: &TrainConfig,
    candidates: &[(f64, usize)],
    mut score: impl FnMut(&TrainConfig) -> Result<(f64, f64), TrainError>,
) -> Result<SearchReport, TrainError> {
    if candidates.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for &(lr, batch_size) in candidates {
        let cfg = TrainConfig {
            lr,
            batch_size,
            ..base.clone()
        };
        let (val_acc, val_loss) = score(&cfg)?;
        log::info!("candidate lr {lr:e} batch {batch_size}: val acc {val_acc:.4}");
        rows.push(LeaderboardRow {
            lr,
            batch_size,
            val_acc,
            val_loss,
        });
    }
    rows.sort_by(rank);
    Ok(SearchReport {
        best: TrainConfig {
            lr: rows[0].lr,
            batch_size: rows[0].batch_size,
            ..base.clone()
        },
        leaderboard: rows,
    })
}

/// Trains each candidate on `train_idx` and scores its best epoch on `val_idx`.
pub fn hyperparam_search(
    corpus: &Corpus,
    train_idx: &[usize],
    val_idx: &[usize],
    net_config: &NetworkConfig,
    base: &TrainConfig,
    space: &SearchSpace,
    seed: u64,
) -> Result<SearchReport, TrainError> {
    if val_idx.is_empty() {
        return Err(TrainError::InvalidConfig("search needs a validation set".into()));
    }
    let candidates = space.candidates(seed)?;
    search_with(base, &candidates, |cfg| {
        let out = train_model(corpus, train_idx, val_idx, net_config, cfg)?;
        let rec = &out.history[out.best_epoch - 1];
        Ok((rec.val_acc.unwrap_or(0.0), rec.val_loss.unwrap_or(f64::INFINITY)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian() {
        let s = SearchSpace::Grid {
            lrs: vec![1e-3, 1e-2],
            batch_sizes: vec![8, 16],
        };
        let c = s.candidates(0).unwrap();
        assert_eq!(c, vec![(1e-3, 8), (1e-3, 16), (1e-2, 8), (1e-2, 16)]);
        let r = search_with(&TrainConfig::default(), &c, |_| Ok((0.5, 1.0))).unwrap();
        assert_eq!(r.leaderboard.len(), 4);
    }

    #[test]
    fn single_candidate_wins() {
        let r = search_with(&TrainConfig::default(), &[(0.02, 4)], |_| Ok((0.1, 2.0))).unwrap();
        assert_eq!((r.best.lr, r.best.batch_size), (0.02, 4));
    }

    #[test]
    fn ties_prefer_lower_lr_then_smaller_batch() {
        let c = [(1e-2, 8), (1e-3, 16), (1e-3, 8), (5e-3, 4)];
        let r = search_with(&TrainConfig::default(), &c, |cfg| {
            Ok((if cfg.lr == 5e-3 { 0.7 } else { 0.8 }, 0.0))
        })
        .unwrap();
        assert_eq!((r.best.lr, r.best.batch_size), (1e-3, 8));
        let order: Vec<_> = r.leaderboard.iter().map(|x| (x.lr, x.batch_size)).collect();
        assert_eq!(order, vec![(1e-3, 8), (1e-3, 16), (1e-2, 8), (5e-3, 4)]);
    }

    #[test]
    fn empty_grid_errors() {
        let s = SearchSpace::Grid {
            lrs: vec![],
            batch_sizes: vec![8],
        };
        assert!(matches!(s.candidates(0), Err(TrainError::EmptyGrid)));
        assert!(matches!(
            search_with(&TrainConfig::default(), &[], |_| Ok((0.0, 0.0))),
            Err(TrainError::EmptyGrid)
        ));
    }

    #[test]
    fn random_draws_are_seeded_and_in_range() {
        let s = SearchSpace::Random {
            lr_range: (1e-4, 1e-2),
            batch_sizes: vec![8, 32],
            count: 6,
        };
        let a = s.candidates(9).unwrap();
        assert_eq!(a, s.candidates(9).unwrap());
        assert_ne!(a, s.candidates(10).unwrap());
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|&(lr, b)| (1e-4..=1e-2).contains(&lr) && (b == 8 || b == 32)));
    }
}
