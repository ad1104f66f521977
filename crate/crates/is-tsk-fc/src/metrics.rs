//! Clustering evaluation (accuracy under optimal label matching, normalized
//! mutual information) and the Friedman / Bonferroni-Dunn comparison test.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracy and NMI for one labeling, plus the cluster-to-class map the
/// accuracy used.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub acc: f64,
    pub nmi: f64,
    /// `matching[cluster]` is the class that cluster was matched to, `None`
    /// for clusters that only matched padding.
    pub matching: Vec<Option<usize>>,
}

/// Outcome of the Friedman test with the Bonferroni-Dunn critical difference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FriedmanResult {
    /// Per-algorithm average ranks, rounded to two decimals (see
    /// [`friedman`]).
    pub avg_ranks: Vec<f64>,
    pub chi_sq: f64,
    pub f_f: f64,
    pub cd: f64,
}

fn check_lengths(truth: &[usize], predicted: &[usize]) -> Result<()> {
    if truth.len() != predicted.len() {
        return Err(Error::Metrics(format!(
            "label lengths differ: {} vs {}",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Metrics("empty label vectors".into()));
    }
    Ok(())
}

fn confusion(truth: &[usize], predicted: &[usize]) -> (DMatrix<f64>, usize, usize) {
    let k_true = truth.iter().max().map_or(0, |m| m + 1);
    let k_pred = predicted.iter().max().map_or(0, |m| m + 1);
    let mut counts = DMatrix::<f64>::zeros(k_pred, k_true);
    for (&t, &p) in truth.iter().zip(predicted) {
        counts[(p, t)] += 1.0;
    }
    (counts, k_pred, k_true)
}

/// Maximum-agreement assignment on a square cost matrix (Kuhn-Munkres with
/// potentials, O(n^3)). Returns `assigned[column] = row`.
fn hungarian_max(weights: &DMatrix<i64>) -> Vec<usize> {
    let n = weights.nrows();
    debug_assert_eq!(n, weights.ncols());
    let inf = i64::MAX / 4;
    // Minimize the negated weights; 1-based arrays per the classic scheme.
    let cost = |i: usize, j: usize| -weights[(i - 1, j - 1)];
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| p[j] - 1).collect()
}

/// Clustering accuracy: the highest fraction of agreements over all injective
/// cluster-to-class assignments, found by optimal matching on the confusion
/// matrix (padded with zeros when the cluster and class counts differ).
pub fn accuracy(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    Ok(evaluate(truth, predicted)?.acc)
}

/// Normalized mutual information with square-root normalization and natural
/// logarithms. A partition with zero entropy (a single cluster) scores 0.
pub fn nmi(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    check_lengths(truth, predicted)?;
    let (counts, k_pred, k_true) = confusion(truth, predicted);
    let n = truth.len() as f64;

    let mut h_true = 0.0;
    for t in 0..k_true {
        let p = counts.column(t).sum() / n;
        if p > 0.0 {
            h_true -= p * p.ln();
        }
    }
    let mut h_pred = 0.0;
    for c in 0..k_pred {
        let p = counts.row(c).sum() / n;
        if p > 0.0 {
            h_pred -= p * p.ln();
        }
    }
    if h_true <= 0.0 || h_pred <= 0.0 {
        return Ok(0.0);
    }

    let mut mi = 0.0;
    for c in 0..k_pred {
        let pc = counts.row(c).sum() / n;
        for t in 0..k_true {
            let joint = counts[(c, t)] / n;
            if joint > 0.0 {
                let pt = counts.column(t).sum() / n;
                mi += joint * (joint / (pc * pt)).ln();
            }
        }
    }
    Ok((mi / (h_true * h_pred).sqrt()).clamp(0.0, 1.0))
}

/// Accuracy and NMI together, sharing one confusion matrix.
pub fn evaluate(truth: &[usize], predicted: &[usize]) -> Result<EvalResult> {
    check_lengths(truth, predicted)?;
    let (counts, k_pred, k_true) = confusion(truth, predicted);
    let side = k_pred.max(k_true);
    let mut padded = DMatrix::<i64>::zeros(side, side);
    for c in 0..k_pred {
        for t in 0..k_true {
            padded[(c, t)] = counts[(c, t)] as i64;
        }
    }
    let row_of_col = hungarian_max(&padded);
    let mut matching = vec![None; k_pred];
    let mut agreements = 0i64;
    for (col, &row) in row_of_col.iter().enumerate() {
        if row < k_pred && col < k_true {
            agreements += padded[(row, col)];
            if counts.row(row).sum() > 0.0 {
                matching[row] = Some(col);
            }
        }
    }
    let acc = agreements as f64 / truth.len() as f64;
    Ok(EvalResult {
        acc,
        nmi: nmi(truth, predicted)?,
        matching,
    })
}

/// Average ranks per column (higher value = better rank), with tied values
/// receiving the mean of the ranks they span. Input rows are datasets,
/// columns are algorithms.
pub fn rank_rows(values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if values.is_empty() {
        return Err(Error::Metrics("empty value table".into()));
    }
    let width = values[0].len();
    let mut table = Vec::with_capacity(values.len());
    for row in values {
        if row.len() != width {
            return Err(Error::Metrics("ragged value table".into()));
        }
        let mut order: Vec<usize> = (0..width).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal));
        let mut ranks = vec![0.0; width];
        let mut i = 0;
        while i < width {
            let mut j = i;
            while j + 1 < width && row[order[j + 1]] == row[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &col in &order[i..=j] {
                ranks[col] = avg;
            }
            i = j + 1;
        }
        table.push(ranks);
    }
    Ok(table)
}

fn validate_rank_row(row: &[f64]) -> Result<()> {
    let n = row.len();
    let mut sorted: Vec<f64> = row.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && (sorted[j + 1] - sorted[i]).abs() < 1e-9 {
            j += 1;
        }
        // A tie group occupying sorted positions i..=j must carry the average
        // of ranks i+1..=j+1.
        let expected = (i + j) as f64 / 2.0 + 1.0;
        if (sorted[i] - expected).abs() > 1e-9 {
            return Err(Error::Metrics(format!(
                "invalid rank row {row:?}: expected rank {expected} at sorted position {i}"
            )));
        }
        i = j + 1;
    }
    Ok(())
}

/// Friedman test over a `datasets x algorithms` rank table, with the
/// Bonferroni-Dunn critical difference for the supplied `q_alpha`.
///
/// Average ranks are rounded to two decimal places before the chi-square
/// statistic is computed, matching analyses carried out on published rank
/// tables (which report average ranks to two decimals). The rounding shifts
/// the statistic by well under the resolution such tables can support.
pub fn friedman(rank_table: &[Vec<f64>], q_alpha: f64) -> Result<FriedmanResult> {
    if rank_table.len() < 2 {
        return Err(Error::Metrics(
            "need at least two datasets (rows) for the Friedman test".into(),
        ));
    }
    let n_d = rank_table.len() as f64;
    let n_c = rank_table[0].len();
    if n_c < 2 {
        return Err(Error::Metrics("need at least two algorithms".into()));
    }
    for row in rank_table {
        if row.len() != n_c {
            return Err(Error::Metrics("ragged rank table".into()));
        }
        validate_rank_row(row)?;
    }

    let n_cf = n_c as f64;
    let mut avg_ranks = vec![0.0; n_c];
    for row in rank_table {
        for (j, &r) in row.iter().enumerate() {
            avg_ranks[j] += r;
        }
    }
    for r in &mut avg_ranks {
        *r = (*r / n_d * 100.0).round() / 100.0;
    }

    let sum_sq: f64 = avg_ranks.iter().map(|r| r * r).sum();
    let chi_sq = 12.0 * n_d / (n_cf * (n_cf + 1.0)) * (sum_sq - n_cf * (n_cf + 1.0).powi(2) / 4.0);
    let denom = n_d * (n_cf - 1.0) - chi_sq;
    let f_f = if chi_sq == 0.0 {
        0.0
    } else {
        (n_d - 1.0) * chi_sq / denom
    };
    let cd = q_alpha * (n_cf * (n_cf + 1.0) / (6.0 * n_d)).sqrt();

    Ok(FriedmanResult {
        avg_ranks,
        chi_sq,
        f_f,
        cd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Brute-force accuracy oracle: enumerate every injective map from
    /// clusters to classes and take the best agreement.
    fn brute_force_accuracy(truth: &[usize], predicted: &[usize]) -> f64 {
        let k_true = truth.iter().max().map_or(0, |m| m + 1);
        let k_pred = predicted.iter().max().map_or(0, |m| m + 1);
        let side = k_true.max(k_pred);
        let mut perm: Vec<usize> = (0..side).collect();
        let mut best = 0usize;
        loop {
            let agree = truth
                .iter()
                .zip(predicted)
                .filter(|(&t, &p)| perm[p] == t)
                .count();
            best = best.max(agree);
            if !next_permutation(&mut perm) {
                break;
            }
        }
        best as f64 / truth.len() as f64
    }

    fn next_permutation(perm: &mut [usize]) -> bool {
        let n = perm.len();
        if n < 2 {
            return false;
        }
        let mut i = n - 1;
        while i > 0 && perm[i - 1] >= perm[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut j = n - 1;
        while perm[j] <= perm[i - 1] {
            j -= 1;
        }
        perm.swap(i - 1, j);
        perm[i..].reverse();
        true
    }

    #[test]
    fn accuracy_basics() {
        assert_abs_diff_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_abs_diff_eq!(accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_abs_diff_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(accuracy(&[0, 1], &[0, 1, 1]).is_err());
    }

    #[test]
    fn accuracy_handles_unequal_cluster_counts() {
        // Three predicted clusters against two classes; the extra cluster
        // matches padding and must stay unmatched.
        let truth = [0, 0, 0, 1, 1, 1];
        let pred = [0, 0, 2, 1, 1, 2];
        let result = evaluate(&truth, &pred).unwrap();
        assert_abs_diff_eq!(result.acc, brute_force_accuracy(&truth, &pred));
        assert_eq!(result.matching[2], None);
    }

    #[test]
    fn accuracy_matches_brute_force_randomized() {
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = move |m: usize| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % m as u64) as usize
        };
        for _ in 0..200 {
            let n = 6 + next(20);
            let kt = 2 + next(4);
            let kp = 2 + next(4);
            let mut truth: Vec<usize> = (0..n).map(|i| i % kt).collect();
            let mut pred: Vec<usize> = (0..n).map(|i| i % kp).collect();
            for i in 0..n {
                truth[i] = next(kt);
                pred[i] = next(kp);
            }
            // Every class/cluster id must occur; patch the front.
            for c in 0..kt {
                truth[c % n] = c;
            }
            for c in 0..kp {
                pred[(kt + c) % n] = c;
            }
            let ours = accuracy(&truth, &pred).unwrap();
            let brute = brute_force_accuracy(&truth, &pred);
            assert_abs_diff_eq!(ours, brute, epsilon = 1e-12);
        }
    }

    #[test]
    fn nmi_basics() {
        assert_abs_diff_eq!(nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nmi(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.0);
        // Exactly independent partitions.
        assert_abs_diff_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn friedman_null_and_two_algorithm_cases() {
        // All-ties rows carry rank (n_c + 1) / 2 everywhere.
        let table = vec![vec![2.0, 2.0, 2.0]; 4];
        let res = friedman(&table, 2.0).unwrap();
        assert_abs_diff_eq!(res.chi_sq, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(res.f_f, 0.0, epsilon = 1e-12);

        // Two algorithms, A always first: chi-square equals the dataset count.
        for n_d in [3usize, 6, 10] {
            let table = vec![vec![1.0, 2.0]; n_d];
            let res = friedman(&table, 2.0).unwrap();
            assert_abs_diff_eq!(res.chi_sq, n_d as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn friedman_rejects_malformed_rows() {
        assert!(friedman(&[vec![1.0, 2.0]], 2.0).is_err());
        let bad = vec![vec![1.0, 1.0, 4.0], vec![1.0, 2.0, 3.0]];
        assert!(friedman(&bad, 2.0).is_err());
        let tied_ok = vec![vec![1.5, 1.5, 3.0], vec![1.0, 2.0, 3.0]];
        assert!(friedman(&tied_ok, 2.0).is_ok());
    }

    #[test]
    fn ranking_rows_with_ties() {
        let ranks = rank_rows(&[vec![0.3, 0.9, 0.3, 0.1]]).unwrap();
        assert_eq!(ranks[0], vec![2.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn friedman_column_permutation_invariance() {
        let table = vec![
            vec![1.0, 2.0, 3.0],
            vec![2.0, 1.0, 3.0],
            vec![1.0, 3.0, 2.0],
        ];
        let base = friedman(&table, 2.0).unwrap();
        let swapped: Vec<Vec<f64>> = table
            .iter()
            .map(|r| vec![r[2], r[0], r[1]])
            .collect();
        let perm = friedman(&swapped, 2.0).unwrap();
        assert_abs_diff_eq!(base.chi_sq, perm.chi_sq, epsilon = 1e-12);
        assert_abs_diff_eq!(base.avg_ranks[0], perm.avg_ranks[1], epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_relabeling(
            labels in proptest::collection::vec(0usize..4, 8..40),
            swap in 0usize..4,
        ) {
            let mut truth: Vec<usize> = labels.clone();
            // Densify ids so every class occurs.
            let k = 4;
            let n = truth.len();
            for c in 0..k { truth[c % n] = c; }
            let pred: Vec<usize> = truth.iter().map(|&l| (l + 1) % k).collect();
            let relabeled: Vec<usize> = pred.iter().map(|&l| l ^ (swap & 1)).map(|l| l % k).collect();
            let a1 = accuracy(&truth, &pred).unwrap();
            let n1 = nmi(&truth, &pred).unwrap();
            // A bijective relabeling of predictions cannot change either metric.
            let bijection: Vec<usize> = (0..k).map(|c| (c + 2) % k).collect();
            let mapped: Vec<usize> = pred.iter().map(|&l| bijection[l]).collect();
            prop_assert!((accuracy(&truth, &mapped).unwrap() - a1).abs() < 1e-12);
            prop_assert!((nmi(&truth, &mapped).unwrap() - n1).abs() < 1e-12);
            let _ = relabeled;
        }
    }
}
