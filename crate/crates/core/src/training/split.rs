//! Stratified partitions of example indices.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::TrainError;
use crate::seed;

fn by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().push(i);
    }
    classes
}

fn exact_shares(n: usize, ratios: &[f64]) -> Vec<f64> {
    let total: f64 = ratios.iter().sum();
    ratios.iter().map(|r| n as f64 * r / total).collect()
}

/// Integer shares of `n` proportional to `ratios`, largest remainder first
/// (ties to the earlier part).
pub fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    largest_remainder_carry(n, ratios, &vec![0.0; ratios.len()])
}

/// As `largest_remainder`, but equal remainders go to the part with the larger
/// `carry` (shortfall accumulated over earlier allocations) before the earlier part.
pub fn largest_remainder_carry(n: usize, ratios: &[f64], carry: &[f64]) -> Vec<usize> {
    let exact = exact_shares(n, ratios);
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    let rem = |i: usize| {
        let r = exact[i] - counts[i] as f64;
        // Quantize so that float noise cannot break a true tie.
        (r * 1e9).round() as i64
    };
    order.sort_by(|&a, &b| {
        rem(b)
            .cmp(&rem(a))
            .then(carry[b].total_cmp(&carry[a]))
            .then(a.cmp(&b))
    });
    let short = n.saturating_sub(counts.iter().sum::<usize>());
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Per class, shuffles with the seed and cuts into parts sized by largest remainder.
/// Remainder ties alternate across classes so totals stay close to the ratios.
pub fn stratified_partition(labels: &[usize], ratios: &[f64], seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if ratios.is_empty() || ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(TrainError::InvalidConfig(format!("ratios must be positive, got {ratios:?}")));
    }
    let mut parts = vec![Vec::new(); ratios.len()];
    let mut carry = vec![0.0; ratios.len()];
    for (class, mut members) in by_class(labels) {
        if members.len() < ratios.len() {
            return Err(TrainError::ClassTooSmall {
                class,
                count: members.len(),
                needed: ratios.len(),
            });
        }
        members.shuffle(&mut seed::rng(seed::derive(seed, &[class as u64])));
        let counts = largest_remainder_carry(members.len(), ratios, &carry);
        for ((c, e), &k) in carry.iter_mut().zip(exact_shares(members.len(), ratios)).zip(&counts) {
            *c += e - k as f64;
        }
        let mut start = 0;
        for (part, count) in parts.iter_mut().zip(counts) {
            part.extend_from_slice(&members[start..start + count]);
            start += count;
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Train / validation / test index sets.
pub fn stratified_split(
    labels: &[usize],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), TrainError> {
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TrainError::InvalidConfig(format!("split ratios {ratios:?} must sum to 1")));
    }
    let mut parts = stratified_partition(labels, &ratios, seed)?.into_iter();
    Ok((parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap()))
}

/// `k` stratified folds; per class, members are dealt round-robin after a seeded
/// shuffle, starting where the previous class stopped so fold sizes stay level.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if k < 2 {
        return Err(TrainError::InvalidConfig(format!("k = {k} must be at least 2")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (class, mut members) in by_class(labels) {
        if members.len() < k {
            return Err(TrainError::ClassTooSmall {
                class,
                count: members.len(),
                needed: k,
            });
        }
        members.shuffle(&mut seed::rng(seed::derive(seed, &[class as u64])));
        for m in members {
            folds[next].push(m);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn check_partition(parts: &[Vec<usize>], n: usize) {
        let mut seen = vec![false; n];
        for p in parts {
            for &i in p {
                assert!(!seen[i], "index {i} repeated");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn seventy_fifteen_fifteen() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let (tr, va, te) = stratified_split(&labels, [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (70, 15, 15));
        for c in 0..10 {
            let count = |s: &[usize]| s.iter().filter(|&&i| labels[i] == c).count();
            assert_eq!(count(&tr), 7);
            assert_eq!(count(&va) + count(&te), 3);
            assert!(matches!((count(&va), count(&te)), (1, 2) | (2, 1)));
        }
        check_partition(&[tr.clone(), va, te], 100);
        assert_eq!(stratified_split(&labels, [0.7, 0.15, 0.15], 1).unwrap().0, tr);
    }

    #[test]
    fn tiny_class_rejected() {
        let labels = vec![0, 0, 0, 1, 1];
        assert!(matches!(
            stratified_split(&labels, [0.7, 0.15, 0.15], 0),
            Err(TrainError::ClassTooSmall { class: 1, .. })
        ));
        assert!(matches!(kfold_split(&labels, 3, 0), Err(TrainError::ClassTooSmall { class: 1, .. })));
    }

    #[test]
    fn five_folds_of_two_per_class() {
        let labels: Vec<usize> = (0..50).map(|i| i / 10).collect();
        let folds = kfold_split(&labels, 5, 3).unwrap();
        for f in &folds {
            for c in 0..5 {
                assert_eq!(f.iter().filter(|&&i| labels[i] == c).count(), 2);
            }
        }
        check_partition(&folds, 50);
        assert_eq!(kfold_split(&labels, 5, 3).unwrap(), folds);
        assert_ne!(kfold_split(&labels, 5, 4).unwrap(), folds);
    }

    /// Floors plus one extra for a set of parts whose remainders are never below an unrounded part's.
    fn is_largest_remainder(n: usize, ratios: &[f64], got: &[usize]) -> bool {
        let exact = exact_shares(n, ratios);
        let floor: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
        let rem: Vec<f64> = exact.iter().zip(&floor).map(|(e, &f)| e - f as f64).collect();
        if got.iter().sum::<usize>() != n || got.iter().zip(&floor).any(|(g, f)| g < f || g > &(f + 1)) {
            return false;
        }
        let up = |i: usize| got[i] > floor[i];
        (0..got.len()).all(|i| !up(i) || (0..got.len()).all(|j| up(j) || rem[i] >= rem[j] - 1e-9))
    }

    #[test]
    fn ties_alternate_across_classes() {
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let (_, va, te) = stratified_split(&labels, [0.5, 0.25, 0.25], 3).unwrap();
        // 20 per class: 10 / 5 / 5 exactly, no ties.
        assert_eq!((va.len(), te.len()), (10, 10));
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let (_, va, te) = stratified_split(&labels, [0.5, 0.25, 0.25], 3).unwrap();
        // 10 per class: 5 / 2.5 / 2.5, so one class favors each part.
        assert_eq!((va.len(), te.len()), (5, 5));
    }

    #[test]
    fn remainder_ties_go_to_earlier_parts() {
        assert_eq!(largest_remainder(10, &[0.7, 0.15, 0.15]), vec![7, 2, 1]);
        assert_eq!(largest_remainder(3, &[1.0, 1.0, 1.0]), vec![1, 1, 1]);
    }

    proptest! {
        #[test]
        fn splits_are_balanced_partitions(
            counts in prop::collection::vec(5usize..20, 1..6),
            seed in any::<u64>(),
        ) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat(c).take(n)).collect();
            let (tr, va, te) = stratified_split(&labels, [0.7, 0.15, 0.15], seed).unwrap();
            check_partition(&[tr.clone(), va.clone(), te.clone()], labels.len());
            for (c, &n) in counts.iter().enumerate() {
                let got = [&tr, &va, &te].map(|s| s.iter().filter(|&&i| labels[i] == c).count());
                prop_assert!(is_largest_remainder(n, &[0.7, 0.15, 0.15], &got), "{:?} for {}", got, n);
            }
            let folds = kfold_split(&labels, 5, seed).unwrap();
            check_partition(&folds, labels.len());
            for c in 0..counts.len() {
                let per: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == c).count()).collect();
                prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
            }
        }
    }
}
