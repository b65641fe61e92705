//! SMOTE in feature space, class-targeted waveform augmentation and the
//! balanced subset used for the first training stage.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ensure_training, DatasetIndex, LabeledSet, SplitTag};
use crate::error::{Error, Result};
use crate::features::resample::resample_by_ratio;
use crate::{class_index, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k: usize,
    /// Each class is raised to `ceil(target_ratio * majority count)` unless
    /// `target_counts` is given.
    pub target_ratio: f64,
    pub target_counts: Option<Vec<usize>>,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            k: 5,
            target_ratio: 0.5,
            target_counts: None,
        }
    }
}

impl SmoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("smote.k must be >= 1".into()));
        }
        if !(self.target_ratio >= 0.0 && self.target_ratio <= 1.0) {
            return Err(Error::Config("smote.target_ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn targets(&self, counts: &[usize]) -> Result<Vec<usize>> {
        match &self.target_counts {
            Some(t) => {
                if t.len() != counts.len() || t.iter().zip(counts).any(|(t, c)| t < c) {
                    return Err(Error::invalid("SMOTE target counts must cover every class and not shrink it"));
                }
                Ok(t.clone())
            }
            None => {
                let majority = counts.iter().copied().max().unwrap_or(0);
                let goal = (self.target_ratio * majority as f64).ceil() as usize;
                Ok(counts.iter().map(|&c| c.max(goal)).collect())
            }
        }
    }
}

/// Provenance of one synthetic row: `x_base + u (x_neighbor - x_base)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub base: usize,
    pub neighbor: usize,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutput {
    pub set: LabeledSet,
    /// Per output row: `Ok(i)` for original row `i`, `Err(..)` for a synthetic row.
    pub origin: Vec<std::result::Result<usize, Synthetic>>,
}

/// Indices of the `k` nearest rows to `rows[i]` among `members` (excluding `i`).
pub fn nearest_neighbors(rows: &[Vec<f64>], members: &[usize], i: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = members
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| {
            let dist: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            (dist, j)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

pub fn effective_k(k: usize, class_count: usize) -> usize {
    k.min(class_count.saturating_sub(1))
}

pub fn smote_resample<R: Rng + ?Sized>(set: &LabeledSet, cfg: &SmoteConfig, rng: &mut R) -> Result<SmoteOutput> {
    set.ensure_training("SMOTE")?;
    cfg.validate()?;
    let num_classes = set.labels.iter().max().map_or(0, |m| m + 1);
    let counts = set.class_counts(num_classes);
    let targets = cfg.targets(&counts)?;

    let mut rows = set.rows.clone();
    let mut labels = set.labels.clone();
    let mut origin: Vec<std::result::Result<usize, Synthetic>> = (0..set.len()).map(Ok).collect();
    for c in 0..num_classes {
        let need = targets[c] - counts[c];
        if need == 0 {
            continue;
        }
        if counts[c] < 2 {
            log::warn!("SMOTE skipped class {c}: {} sample(s)", counts[c]);
            continue;
        }
        let members: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == c).collect();
        let k = effective_k(cfg.k, members.len());
        let neighbors: Vec<Vec<usize>> = members
            .iter()
            .map(|&i| nearest_neighbors(&set.rows, &members, i, k))
            .collect();
        for _ in 0..need {
            let m = rng.gen_range(0..members.len());
            let base = members[m];
            let neighbor = neighbors[m][rng.gen_range(0..k)];
            let u: f64 = rng.gen();
            let x: Vec<f64> = set.rows[base]
                .iter()
                .zip(&set.rows[neighbor])
                .map(|(a, b)| a + u * (b - a))
                .collect();
            rows.push(x);
            labels.push(c);
            origin.push(Err(Synthetic { base, neighbor, u }));
        }
    }

    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(rng);
    let set = LabeledSet {
        rows: order.iter().map(|&i| rows[i].clone()).collect(),
        labels: order.iter().map(|&i| labels[i]).collect(),
        splits: vec![SplitTag::Train; order.len()],
    };
    let origin = order.iter().map(|&i| origin[i].clone()).collect();
    Ok(SmoteOutput { set, origin })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub base_probability: f64,
    /// Per-class gate probability, overriding `base_probability` where set.
    pub class_probability: Vec<Option<f64>>,
    pub noise_level: f64,
    pub max_shift_fraction: f64,
    pub pitch_range_semitones: f64,
    /// Per-class pitch range overrides (targeted presets for confused pairs).
    pub class_pitch_range: Vec<Option<f64>>,
    /// Chance of each transform once the gate has fired.
    pub transform_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let mut class_probability = vec![None; NUM_CLASSES];
        let mut class_pitch_range = vec![None; NUM_CLASSES];
        let idx = |n: &str| class_index(n).expect("known class");
        class_probability[idx("URTI")] = Some(0.6);
        class_pitch_range[idx("URTI")] = Some(3.0);
        class_pitch_range[idx("Bronchiolitis")] = Some(3.0);
        class_pitch_range[idx("Pneumonia")] = Some(1.0);
        class_pitch_range[idx("COPD")] = Some(1.0);
        Self {
            base_probability: 0.095,
            class_probability,
            noise_level: 2.17e-5,
            max_shift_fraction: 0.15,
            pitch_range_semitones: 2.0,
            class_pitch_range,
            transform_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        let probs_ok = unit(self.base_probability)
            && unit(self.transform_probability)
            && self.class_probability.iter().flatten().all(|&p| unit(p));
        if !probs_ok {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::Config("augment.noise_level must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.max_shift_fraction) {
            return Err(Error::Config("augment.max_shift_fraction must lie in [0, 1)".into()));
        }
        if !(self.pitch_range_semitones >= 0.0) || self.class_pitch_range.iter().flatten().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("pitch ranges must be >= 0".into()));
        }
        Ok(())
    }

    pub fn probability(&self, label: usize) -> f64 {
        self.class_probability
            .get(label)
            .copied()
            .flatten()
            .unwrap_or(self.base_probability)
    }

    pub fn pitch_range(&self, label: usize) -> f64 {
        self.class_pitch_range
            .get(label)
            .copied()
            .flatten()
            .unwrap_or(self.pitch_range_semitones)
    }
}

/// Which transforms were applied, with their sampled parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentTrace {
    pub gated: bool,
    pub noise_std: Option<f64>,
    pub shift: Option<isize>,
    pub semitones: Option<f64>,
}

/// Gate-then-coin augmentation of one training waveform.
pub fn augment_signal<R: Rng + ?Sized>(
    signal: &[f64],
    label: usize,
    split: SplitTag,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, AugmentTrace)> {
    if signal.is_empty() {
        return Err(Error::invalid("cannot augment an empty signal"));
    }
    if !augment_gate(label, split, cfg, rng)? {
        return Ok((signal.to_vec(), AugmentTrace::default()));
    }
    apply_transforms(signal, label, cfg, rng)
}

/// Draws the class-resolved per-sample gate.
pub fn augment_gate<R: Rng + ?Sized>(label: usize, split: SplitTag, cfg: &AugmentConfig, rng: &mut R) -> Result<bool> {
    ensure_training(&[split], "augmentation")?;
    let p = cfg.probability(label);
    Ok(p > 0.0 && rng.gen::<f64>() < p)
}

/// The transforms applied once the gate has fired, each with
/// `transform_probability`: pitch shift, circular time shift, additive noise.
pub fn apply_transforms<R: Rng + ?Sized>(
    signal: &[f64],
    label: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, AugmentTrace)> {
    if signal.is_empty() {
        return Err(Error::invalid("cannot augment an empty signal"));
    }
    let mut trace = AugmentTrace {
        gated: true,
        ..Default::default()
    };
    let mut out = signal.to_vec();
    if rng.gen::<f64>() < cfg.transform_probability {
        let range = cfg.pitch_range(label);
        let s = rng.gen_range(-range..=range);
        out = pitch_shift(&out, s)?;
        trace.semitones = Some(s);
    }
    if rng.gen::<f64>() < cfg.transform_probability {
        let max = cfg.max_shift_fraction;
        let s = (rng.gen_range(-max..=max) * out.len() as f64).round() as isize;
        out = circular_shift(&out, s);
        trace.shift = Some(s);
    }
    if rng.gen::<f64>() < cfg.transform_probability {
        let std = cfg.noise_level * peak(signal);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
            for v in &mut out {
                *v += normal.sample(rng);
            }
        }
        trace.noise_std = Some(std);
    }
    Ok((out, trace))
}

pub fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Rotate right by `shift` samples (negative rotates left).
pub fn circular_shift(x: &[f64], shift: isize) -> Vec<f64> {
    let n = x.len() as isize;
    if n == 0 {
        return Vec::new();
    }
    let s = shift.rem_euclid(n) as usize;
    let mut out = Vec::with_capacity(x.len());
    out.extend_from_slice(&x[x.len() - s..]);
    out.extend_from_slice(&x[..x.len() - s]);
    out
}

/// Raise pitch by `semitones` keeping the length: resample by 2^(s/12)
/// (which shortens the signal and raises pitch), then stretch back in time.
pub fn pitch_shift(x: &[f64], semitones: f64) -> Result<Vec<f64>> {
    if semitones == 0.0 {
        return Ok(x.to_vec());
    }
    let factor = 2f64.powf(semitones / 12.0);
    let faster = resample_by_ratio(x, 1.0 / factor)?;
    if faster.is_empty() {
        return Ok(vec![0.0; x.len()]);
    }
    Ok(time_stretch(&faster, x.len()))
}

const OLA_FRAME: usize = 1024;
const OLA_HOP: usize = OLA_FRAME / 2;
const OLA_TOLERANCE: isize = 128;

/// Waveform-similarity overlap-add time stretch to exactly `out_len` samples.
pub fn time_stretch(x: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let window: Vec<f64> = (0..OLA_FRAME)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / OLA_FRAME as f64).cos())
        .collect();
    let at = |i: isize| -> f64 {
        if i >= 0 && (i as usize) < x.len() {
            x[i as usize]
        } else {
            0.0
        }
    };
    let ratio = x.len() as f64 / out_len as f64;
    let frames = out_len / OLA_HOP + 2;
    let mut out = vec![0.0; frames * OLA_HOP + OLA_FRAME];
    let mut norm = vec![0.0; out.len()];
    let mut prev: isize = -(OLA_HOP as isize);
    for f in 0..frames {
        let out_pos = f * OLA_HOP;
        let nominal = ((out_pos as f64) * ratio).round() as isize - (OLA_HOP as isize);
        // Best continuation of the previously copied segment.
        let natural = prev + OLA_HOP as isize;
        let mut best = nominal;
        if f > 0 {
            let mut best_score = f64::NEG_INFINITY;
            for delta in -OLA_TOLERANCE..=OLA_TOLERANCE {
                let cand = nominal + delta;
                let mut score = 0.0;
                for n in (0..OLA_HOP as isize).step_by(2) {
                    score += at(cand + n) * at(natural + n);
                }
                if score > best_score {
                    best_score = score;
                    best = cand;
                }
            }
        }
        for n in 0..OLA_FRAME {
            out[out_pos + n] += window[n] * at(best + n as isize);
            norm[out_pos + n] += window[n];
        }
        prev = best;
    }
    // Output index 0 corresponds to frame offset OLA_HOP.
    (0..out_len)
        .map(|i| {
            let j = i + OLA_HOP;
            if norm[j] > 1e-9 {
                out[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect()
}

/// Stage-1 subset: every non-majority training row plus a seeded sample of
/// `min(cap, available)` majority training rows. Returned indices are sorted.
pub fn build_stage1_subset<R: Rng + ?Sized>(
    index: &DatasetIndex,
    majority_class: usize,
    cap: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if cap == 0 {
        return Err(Error::invalid("stage-1 majority cap must be >= 1"));
    }
    let train: Vec<usize> = index.rows_with(SplitTag::Train).map(|(i, _)| i).collect();
    let mut majority: Vec<usize> = train
        .iter()
        .copied()
        .filter(|&i| index.rows[i].label == majority_class)
        .collect();
    if majority.is_empty() {
        return Err(Error::invalid(format!("majority class {majority_class} absent from training rows")));
    }
    majority.shuffle(rng);
    majority.truncate(cap);
    let mut subset: Vec<usize> = train
        .into_iter()
        .filter(|&i| index.rows[i].label != majority_class)
        .chain(majority)
        .collect();
    subset.sort_unstable();
    Ok(subset)
}

/// Same selection for in-memory training sets (rows tagged `Train`).
pub fn stage1_rows<R: Rng + ?Sized>(labels: &[usize], majority_class: usize, cap: usize, rng: &mut R) -> Result<Vec<usize>> {
    let index = DatasetIndex {
        rows: labels
            .iter()
            .map(|&label| crate::dataset::IndexRow {
                path: Default::default(),
                patient_id: String::new(),
                label,
                split: Some(SplitTag::Train),
                fold: None,
            })
            .collect(),
    };
    build_stage1_subset(&index, majority_class, cap, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn two_point_synthetic_on_segment() {
        let set = LabeledSet::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0, 0], SplitTag::Train).unwrap();
        let cfg = SmoteConfig {
            target_counts: Some(vec![3]),
            ..Default::default()
        };
        let out = smote_resample(&set, &cfg, &mut rng(1)).unwrap();
        assert_eq!(out.set.len(), 3);
        let synth: Vec<&Vec<f64>> = out
            .origin
            .iter()
            .zip(&out.set.rows)
            .filter(|(o, _)| o.is_err())
            .map(|(_, r)| r)
            .collect();
        assert_eq!(synth.len(), 1);
        let p = synth[0];
        assert!((p[0] - p[1]).abs() < 1e-15 && (0.0..=1.0).contains(&p[0]));
    }

    #[test]
    fn effective_k_shrinks() {
        assert_eq!(effective_k(5, 3), 2);
        assert_eq!(effective_k(5, 100), 5);
    }

    #[test]
    fn targets_equal_counts_is_a_permutation() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let set = LabeledSet::new(rows.clone(), vec![0, 0, 0, 1, 1, 1], SplitTag::Train).unwrap();
        let cfg = SmoteConfig {
            target_counts: Some(vec![3, 3]),
            ..Default::default()
        };
        let out = smote_resample(&set, &cfg, &mut rng(2)).unwrap();
        let mut got: Vec<f64> = out.set.rows.iter().map(|r| r[0]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(out.origin.iter().all(|o| o.is_ok()));
    }

    #[test]
    fn default_target_is_half_majority() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            rows.push(vec![i as f64, 0.0]);
            labels.push(0);
        }
        for i in 0..3 {
            rows.push(vec![100.0 + i as f64, 1.0]);
            labels.push(1);
        }
        rows.push(vec![7.0, 7.0]);
        labels.push(2);
        let set = LabeledSet::new(rows, labels, SplitTag::Train).unwrap();
        let out = smote_resample(&set, &SmoteConfig::default(), &mut rng(3)).unwrap();
        // Class 2 has a single sample and is skipped.
        assert_eq!(out.set.class_counts(3), vec![40, 20, 1]);
    }

    #[test]
    fn smote_rejects_validation_rows() {
        let mut set = LabeledSet::new(vec![vec![0.0], vec![1.0]], vec![0, 0], SplitTag::Train).unwrap();
        set.splits[1] = SplitTag::Val;
        assert!(matches!(
            smote_resample(&set, &SmoteConfig::default(), &mut rng(0)),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn zero_probability_is_identity() {
        let cfg = AugmentConfig {
            base_probability: 0.0,
            class_probability: vec![None; NUM_CLASSES],
            ..Default::default()
        };
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.1).sin()).collect();
        let (y, trace) = augment_signal(&x, 1, SplitTag::Train, &cfg, &mut rng(0)).unwrap();
        assert_eq!(x, y);
        assert!(!trace.gated);
        assert!(augment_signal(&[], 1, SplitTag::Train, &cfg, &mut rng(0)).is_err());
        assert!(matches!(
            augment_signal(&x, 1, SplitTag::Val, &cfg, &mut rng(0)),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn circular_shift_rotates() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(circular_shift(&x, 2), vec![4.0, 5.0, 1.0, 2.0, 3.0]);
        assert_eq!(circular_shift(&x, -1), vec![2.0, 3.0, 4.0, 5.0, 1.0]);
        assert_eq!(circular_shift(&x, 5), x.to_vec());
    }

    #[test]
    fn augmentation_preserves_length() {
        let cfg = AugmentConfig {
            base_probability: 1.0,
            transform_probability: 1.0,
            ..Default::default()
        };
        let x: Vec<f64> = (0..6000).map(|i| (i as f64 * 0.05).sin()).collect();
        for seed in 0..5 {
            let (y, trace) = augment_signal(&x, 0, SplitTag::Train, &cfg, &mut rng(seed)).unwrap();
            assert_eq!(y.len(), x.len());
            assert!(trace.gated && trace.semitones.is_some());
        }
    }

    #[test]
    fn stage1_subset_counts() {
        let labels: Vec<usize> = std::iter::repeat(1).take(120).chain([0, 2, 2, 3, 4, 5]).collect();
        let s = stage1_rows(&labels, 1, 50, &mut rng(5)).unwrap();
        assert_eq!(s.len(), 56);
        assert_eq!(s, stage1_rows(&labels, 1, 50, &mut rng(5)).unwrap());
        let all = stage1_rows(&labels, 1, 500, &mut rng(5)).unwrap();
        assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        assert!(stage1_rows(&labels, 1, 0, &mut rng(5)).is_err());
    }
}
