//! Link-prediction and membership-recovery metrics.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mstep::MembershipMatrix;
use crate::netdata::GroundTruthMembership;

/// Largest group count for exhaustive label alignment.
pub const MAX_ALIGN_GROUPS: usize = 8;

/// Mann-Whitney AUC; tied (positive, negative) pairs count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::input(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::input("scores contain NaN"));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {positives} positive and {negatives} negative labels"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks, 1-based
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end + 1) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += midrank * pos_in_group as f64;
        start = end;
    }
    let (np, nn) = (positives as f64, negatives as f64);
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// `(threshold, false positive rate, true positive rate)` for each distinct
/// score, from the highest threshold down.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64, f64)>> {
    auc(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
    let negatives = labels.len() as f64 - positives;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(f64::INFINITY, 0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            if labels[order[k]] == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            k += 1;
        }
        points.push((threshold, fp / negatives, tp / positives));
    }
    Ok(points)
}

/// Clips negatives to zero and rescales each column to sum one; a column
/// with nothing left becomes uniform.
pub fn normalize_memberships(u: &MembershipMatrix) -> DMatrix<f64> {
    let mut out = u.values().map(|v| v.max(0.0));
    let d = out.nrows();
    for mut col in out.column_iter_mut() {
        let total = col.sum();
        if total > 0.0 {
            col /= total;
        } else {
            col.fill(1.0 / d as f64);
        }
    }
    out
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                prefix.push(k);
                extend(prefix, used, out);
                prefix.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::with_capacity(d), &mut vec![false; d], &mut out);
    out
}

fn check_shapes(u: &MembershipMatrix, truth: &GroundTruthMembership) -> Result<()> {
    if u.d() != truth.d() || u.n() != truth.assignments().len() {
        return Err(Error::input(format!(
            "memberships are {}x{} but ground truth is {}x{}",
            u.d(),
            u.n(),
            truth.d(),
            truth.assignments().len()
        )));
    }
    Ok(())
}

/// `|normalize(U) - U0|_F` without any label alignment.
pub fn unaligned_membership_error(u: &MembershipMatrix, truth: &GroundTruthMembership) -> Result<f64> {
    check_shapes(u, truth)?;
    Ok((normalize_memberships(u) - truth.one_hot()).norm())
}

/// `min_P |P normalize(U) - U0|_F` over all row permutations `P`.
pub fn membership_error(u: &MembershipMatrix, truth: &GroundTruthMembership) -> Result<f64> {
    check_shapes(u, truth)?;
    let d = u.d();
    if d > MAX_ALIGN_GROUPS {
        return Err(Error::UnsupportedDimension(format!(
            "exhaustive alignment supports d <= {MAX_ALIGN_GROUPS}, got {d}"
        )));
    }
    let normalized = normalize_memberships(u);
    // cost[(row, group)] = squared distance if estimated row `row` is relabeled as `group`
    let assignments = truth.assignments();
    let mut cost = DMatrix::zeros(d, d);
    for row in 0..d {
        for group in 0..d {
            cost[(row, group)] = assignments
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let target = if c == group { 1.0 } else { 0.0 };
                    (normalized[(row, i)] - target).powi(2)
                })
                .sum::<f64>();
        }
    }
    let best = permutations(d)
        .iter()
        .map(|perm| perm.iter().enumerate().map(|(row, &group)| cost[(row, group)]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok(best.max(0.0).sqrt())
}

/// Sample mean and standard error (`sd / sqrt(k)`, zero for one value).
pub fn mean_and_standard_error(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedMetrics {
    pub label: String,
    pub auc: f64,
    pub membership_distance: Option<f64>,
    pub unaligned_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<SeedMetrics>,
}

impl MetricReport {
    pub fn auc_summary(&self) -> (f64, f64) {
        let values: Vec<f64> = self.rows.iter().map(|r| r.auc).collect();
        mean_and_standard_error(&values)
    }

    fn distance_summary(&self, pick: impl Fn(&SeedMetrics) -> Option<f64>) -> Option<(f64, f64)> {
        let values: Option<Vec<f64>> = self.rows.iter().map(pick).collect();
        values.filter(|v| !v.is_empty()).map(|v| mean_and_standard_error(&v))
    }

    pub fn membership_summary(&self) -> Option<(f64, f64)> {
        self.distance_summary(|r| r.membership_distance)
    }

    pub fn unaligned_summary(&self) -> Option<(f64, f64)> {
        self.distance_summary(|r| r.unaligned_distance)
    }

    /// Flat `key = value` block.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let (auc_mean, auc_se) = self.auc_summary();
        let _ = writeln!(out, "runs = {}", self.rows.len());
        let _ = writeln!(out, "auc = {auc_mean:?}");
        let _ = writeln!(out, "auc_se = {auc_se:?}");
        if let Some((mean, se)) = self.membership_summary() {
            let _ = writeln!(out, "membership_distance = {mean:?}");
            let _ = writeln!(out, "membership_distance_se = {se:?}");
        }
        if let Some((mean, se)) = self.unaligned_summary() {
            let _ = writeln!(out, "membership_distance_unaligned = {mean:?}");
            let _ = writeln!(out, "membership_distance_unaligned_se = {se:?}");
        }
        out
    }

    /// One comma-separated row per run under a header line.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let mut out = String::from("run,auc,membership_distance,membership_distance_unaligned\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{:?},{},{}",
                row.label,
                row.auc,
                fmt(row.membership_distance),
                fmt(row.unaligned_distance)
            );
        }
        out
    }
}
