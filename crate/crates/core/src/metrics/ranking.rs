use crate::error::{Error, Result};

use super::check_len;

/// ROC-AUC as the Mann-Whitney probability that a random positive outranks
/// a random negative, with tied pairs credited one half.
///
/// The pair count is accumulated in integer half-units, so the result equals
/// an exhaustive pairwise count bit for bit.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_len("auc", scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = scores.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "{n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut twice_wins: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let v = scores[order[i]];
        let (mut p, mut q) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == v {
            if labels[order[i]] == 1 {
                p += 1;
            } else {
                q += 1;
            }
            i += 1;
        }
        twice_wins += 2 * p * neg_below + p * q;
        neg_below += q;
    }
    Ok(twice_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("spearman", a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} observations", a.len())));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::UndefinedCorrelation("zero variance in an argument".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_separation() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn six_points_one_tie() {
        let s = [0.2, 0.4, 0.4, 0.6, 0.7, 0.1];
        let y = [0, 1, 0, 1, 0, 1];
        // positives {0.4, 0.6, 0.1} vs negatives {0.2, 0.4, 0.7}: 1 + 0.5 + 2 + 0 = 3.5 of 9
        assert_eq!(auc(&s, &y).unwrap(), 3.5 / 9.0);
        assert_eq!(auc(&s, &y).unwrap(), pairwise_auc(&s, &y));
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedAuc(_))));
    }

    #[test]
    fn uninformative_scores_near_half() {
        // Deterministic interleave: labels alternate over a sorted grid.
        let s: Vec<f64> = (0..2000).map(|i| i as f64 / 2000.0).collect();
        let y: Vec<u8> = (0..2000).map(|i| (i % 2) as u8).collect();
        assert!((auc(&s, &y).unwrap() - 0.5).abs() < 0.01);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn spearman_trivia() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&a, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap(), 1.0);
        assert_eq!(spearman(&a, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(matches!(spearman(&a, &[1.0; 5]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn spearman_tied_fixture_matches_rank_then_pearson() {
        let a = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0];
        let b = [3.0, 1.0, 4.0, 4.0, 9.0, 2.0, 6.0];
        // Average ranks written out by hand.
        let ra = [1.0, 2.5, 2.5, 4.0, 6.0, 6.0, 6.0];
        let rb = [3.0, 1.0, 4.5, 4.5, 7.0, 2.0, 6.0];
        let n = 7.0;
        let ma: f64 = ra.iter().sum::<f64>() / n;
        let mb: f64 = rb.iter().sum::<f64>() / n;
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        let oracle = cov / (va * vb).sqrt();
        assert!((spearman(&a, &b).unwrap() - oracle).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise(raw in prop::collection::vec((0u8..20, any::<bool>()), 2..60)) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 20.0).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, l)| *l as u8).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert_eq!(auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
        }

        #[test]
        fn spearman_self_and_monotone_invariance(v in prop::collection::vec(-100.0f64..100.0, 3..40)) {
            prop_assume!(v.iter().any(|x| *x != v[0]));
            let self_corr = spearman(&v, &v).unwrap();
            prop_assert!((self_corr - 1.0).abs() < 1e-12);
            let w: Vec<f64> = v.iter().map(|x| (x / 50.0).exp()).collect();
            let u: Vec<f64> = v.iter().rev().cloned().collect();
            prop_assume!(u.iter().any(|x| *x != u[0]));
            let lhs = spearman(&v, &u).unwrap();
            let rhs = spearman(&w, &u).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
