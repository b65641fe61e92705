//! Stratified k-fold assignment and classification metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.folds {
            s[f] += 1;
        }
        s
    }
}

/// Within each class the samples are shuffled and dealt round-robin to
/// folds; the dealing position carries over between classes so total fold
/// sizes also stay within one of each other.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    if k > labels.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} available samples",
            labels.len()
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0usize;
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            log::warn!("class {c} has {} samples, fewer than k = {k}", members.len());
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldAssignment { folds, k, seed })
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::invalid(format!(
                "{} labels vs {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::invalid(format!("label out of range ({t}, {p})")));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Row-stochastic version; rows without support stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// Classes with no true samples (zero rows in the normalized matrix).
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.num_classes()).filter(|&c| self.support(c) == 0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// At least one of the ratios was 0/0 and reported as 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

fn safe_div(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let c = cm.num_classes();
    let total = cm.total();
    if c == 0 || total == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let tp = cm.counts[k][k] as f64;
            let predicted: u64 = (0..c).map(|r| cm.counts[r][k]).sum();
            let support = cm.support(k);
            let (precision, u1) = safe_div(tp, predicted as f64);
            let (recall, u2) = safe_div(tp, support as f64);
            let (f1, u3) = safe_div(2.0 * precision * recall, precision + recall);
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
                undefined: u1 || u2 || u3,
            }
        })
        .collect();
    let correct: u64 = (0..c).map(|k| cm.counts[k][k]).sum();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / total as f64,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        weighted_precision: weighted(|m| m.precision),
        weighted_recall: weighted(|m| m.recall),
        weighted_f1: weighted(|m| m.f1),
        per_class,
    })
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// `None` for classes lacking positives or negatives.
    pub per_class: Vec<Option<f64>>,
    pub macro_auc: Option<f64>,
}

fn check_probs(y_true: &[usize], probs: &[Vec<f64>]) -> Result<usize> {
    if y_true.len() != probs.len() {
        return Err(Error::invalid("labels and probability rows differ in length"));
    }
    let c = probs.first().map_or(0, Vec::len);
    if probs.iter().any(|r| r.len() != c) || y_true.iter().any(|&t| t >= c) {
        return Err(Error::invalid("ragged probabilities or label out of range"));
    }
    Ok(c)
}

/// Midranks (1-based) of `scores`, ties sharing their average rank.
fn midranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// One-vs-rest ROC AUC via the Mann–Whitney rank statistic.
pub fn roc_auc_ovr(y_true: &[usize], probs: &[Vec<f64>]) -> Result<AucReport> {
    let c = check_probs(y_true, probs)?;
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let scores: Vec<f64> = probs.iter().map(|r| r[k]).collect();
        let pos = y_true.iter().filter(|&&t| t == k).count();
        let neg = y_true.len() - pos;
        if pos == 0 || neg == 0 {
            per_class.push(None);
            continue;
        }
        let ranks = midranks(&scores);
        let rank_sum: f64 = y_true
            .iter()
            .zip(&ranks)
            .filter(|(&t, _)| t == k)
            .map(|(_, r)| r)
            .sum();
        let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
        per_class.push(Some(u / (pos * neg) as f64));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_auc = if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    };
    Ok(AucReport { per_class, macro_auc })
}

/// Step-wise average precision per class; tied scores form one threshold.
pub fn average_precision(y_true: &[usize], probs: &[Vec<f64>]) -> Result<Vec<Option<f64>>> {
    let c = check_probs(y_true, probs)?;
    let mut out = Vec::with_capacity(c);
    for k in 0..c {
        let pos = y_true.iter().filter(|&&t| t == k).count();
        if pos == 0 {
            out.push(None);
            continue;
        }
        let mut order: Vec<usize> = (0..y_true.len()).collect();
        order.sort_by(|&a, &b| probs[b][k].total_cmp(&probs[a][k]));
        let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
        let mut i = 0;
        while i < order.len() {
            let s = probs[order[i]][k];
            while i < order.len() && probs[order[i]][k] == s {
                if y_true[order[i]] == k {
                    tp += 1;
                }
                seen += 1;
                i += 1;
            }
            let recall = tp as f64 / pos as f64;
            ap += (recall - prev_recall) * tp as f64 / seen as f64;
            prev_recall = recall;
        }
        out.push(Some(ap));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
}

/// Reliability bins over top-class confidence and the expected calibration error.
pub fn calibration_bins(y_true: &[usize], probs: &[Vec<f64>], n_bins: usize) -> Result<CalibrationReport> {
    if n_bins == 0 {
        return Err(Error::invalid("calibration needs at least one bin"));
    }
    check_probs(y_true, probs)?;
    let mut conf_sum = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&t, row) in y_true.iter().zip(probs) {
        let pred = argmax(row);
        let conf = row[pred].clamp(0.0, 1.0);
        let b = ((conf * n_bins as f64) as usize).min(n_bins - 1);
        conf_sum[b] += conf;
        count[b] += 1;
        if pred == t {
            correct[b] += 1;
        }
    }
    let n = y_true.len().max(1) as f64;
    let mut ece = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let (mean_confidence, accuracy) = if count[b] == 0 {
                (None, None)
            } else {
                let mc = conf_sum[b] / count[b] as f64;
                let acc = correct[b] as f64 / count[b] as f64;
                ece += count[b] as f64 / n * (acc - mc).abs();
                (Some(mc), Some(acc))
            };
            CalibrationBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                mean_confidence,
                accuracy,
                count: count[b],
            }
        })
        .collect();
    Ok(CalibrationReport { bins, ece })
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn fold_counts_per_class() {
        let labels: Vec<usize> = std::iter::repeat(0).take(793).chain(std::iter::repeat(1).take(13)).collect();
        let fa = stratified_kfold(&labels, 5, 42).unwrap();
        let count = |c: usize| {
            let mut v = vec![0; 5];
            for (i, &f) in fa.folds.iter().enumerate() {
                if labels[i] == c {
                    v[f] += 1;
                }
            }
            v.sort_unstable();
            v
        };
        assert_eq!(count(0), vec![158, 158, 159, 159, 159]);
        assert_eq!(count(1), vec![2, 2, 3, 3, 3]);
        assert_eq!(fa, stratified_kfold(&labels, 5, 42).unwrap());
        assert!(stratified_kfold(&labels, 1, 0).is_err());
        assert!(stratified_kfold(&[0, 1], 3, 0).is_err());
    }

    #[test]
    fn confusion_hand_tally() {
        let cm = ConfusionMatrix::new(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        let n = cm.normalized();
        assert_eq!(n, vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert!(ConfusionMatrix::new(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn absent_class_row_stays_zero() {
        let cm = ConfusionMatrix::new(&[0, 0], &[0, 1], 3).unwrap();
        assert_eq!(cm.empty_rows(), vec![1, 2]);
        assert_eq!(cm.normalized()[2], vec![0.0; 3]);
        let m = classification_metrics(&cm).unwrap();
        assert!(m.per_class[2].undefined);
        assert_eq!(m.per_class[2].f1, 0.0);
        assert!((m.macro_f1 - (2.0 / 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn metrics_hand_case() {
        let cm = ConfusionMatrix {
            counts: vec![vec![2, 0], vec![1, 1]],
        };
        let m = classification_metrics(&cm).unwrap();
        assert!((m.per_class[0].f1 - 0.8).abs() < 1e-15);
        assert!((m.per_class[1].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_f1 - 11.0 / 15.0).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.75);
    }

    #[test]
    fn fold_spread_uses_population_std() {
        let (mean, std) = mean_std(&[0.5658, 0.5838, 0.7462, 0.7730, 0.8479]);
        assert!((mean - 0.7033).abs() < 1e-4);
        assert!((std - 0.1103).abs() < 1e-4);
    }

    fn brute_auc(y: &[usize], s: &[f64], k: usize) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] == k && y[j] != k {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_matches_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(4..60);
            let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            // Coarse scores force ties.
            let probs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| (rng.gen_range(0..5) as f64) / 4.0).collect())
                .collect();
            let r = roc_auc_ovr(&y, &probs).unwrap();
            for k in 0..3 {
                if let Some(a) = r.per_class[k] {
                    let s: Vec<f64> = probs.iter().map(|p| p[k]).collect();
                    assert_eq!(a, brute_auc(&y, &s, k));
                }
            }
        }
    }

    #[test]
    fn auc_toy_cases() {
        let y = [1, 1, 0, 0];
        let p = |s: [f64; 4]| s.iter().map(|&v| vec![1.0 - v, v]).collect::<Vec<_>>();
        assert_eq!(roc_auc_ovr(&y, &p([0.9, 0.8, 0.2, 0.1])).unwrap().per_class[1], Some(1.0));
        assert_eq!(roc_auc_ovr(&y, &p([0.5; 4])).unwrap().per_class[1], Some(0.5));
        assert_eq!(roc_auc_ovr(&y, &p([0.9, 0.3, 0.4, 0.1])).unwrap().per_class[1], Some(0.75));
        let r = roc_auc_ovr(&[0, 0], &[vec![0.6, 0.4], vec![0.7, 0.3]]).unwrap();
        assert_eq!(r.per_class, vec![None, None]);
        assert_eq!(r.macro_auc, None);
    }

    #[test]
    fn ap_toy_cases() {
        let y = [0, 1, 0, 0];
        let probs: Vec<Vec<f64>> = [0.9, 0.8, 0.3, 0.1].iter().map(|&s| vec![1.0 - s, s]).collect();
        let ap = average_precision(&y, &probs).unwrap();
        assert_eq!(ap[1], Some(0.5));
        let perfect: Vec<Vec<f64>> = [0.1, 0.9, 0.2, 0.3].iter().map(|&s| vec![1.0 - s, s]).collect();
        assert_eq!(average_precision(&y, &perfect).unwrap()[1], Some(1.0));
        let none = average_precision(&[0, 0], &[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(none[1], None);
    }

    #[test]
    fn calibration_extremes() {
        let y = vec![0; 20];
        let right = vec![vec![1.0, 0.0]; 20];
        let r = calibration_bins(&y, &right, 10).unwrap();
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.bins[9].count, 20);
        let wrong = vec![vec![0.0, 1.0]; 20];
        assert!((calibration_bins(&y, &wrong, 10).unwrap().ece - 1.0).abs() < 1e-12);
        assert!(calibration_bins(&y, &wrong, 0).is_err());
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<usize> = (0..40).map(|_| rng.gen_range(0..3)).collect();
        let probs: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let r: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect();
        let mut perm: Vec<usize> = (0..40).collect();
        perm.shuffle(&mut rng);
        let y2: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
        let p2: Vec<Vec<f64>> = perm.iter().map(|&i| probs[i].clone()).collect();
        assert_eq!(roc_auc_ovr(&y, &probs).unwrap(), roc_auc_ovr(&y2, &p2).unwrap());
        let a = average_precision(&y, &probs).unwrap();
        let b = average_precision(&y2, &p2).unwrap();
        for (x, z) in a.iter().zip(&b) {
            assert!((x.unwrap() - z.unwrap()).abs() < 1e-12);
        }
        let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let pred2: Vec<usize> = p2.iter().map(|p| argmax(p)).collect();
        assert_eq!(
            ConfusionMatrix::new(&y, &pred, 3).unwrap(),
            ConfusionMatrix::new(&y2, &pred2, 3).unwrap()
        );
    }
}
