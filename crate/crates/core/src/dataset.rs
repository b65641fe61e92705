//! Dataset index, split-tagged feature sets and the z-score scaler.
//!
//! Every row carries a split tag once folds are assigned. Training-only
//! operations (augmentation, SMOTE, scaler fitting) refuse rows tagged
//! `Val`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::evalkit::stratified_kfold;
use crate::{class_index, CLASS_NAMES, NUM_CLASSES};

/// Classes with fewer recordings than this are dropped at ingestion.
pub const MIN_CLASS_RECORDINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
}

pub(crate) fn ensure_training(tags: &[SplitTag], what: &str) -> Result<()> {
    match tags.iter().position(|t| *t == SplitTag::Val) {
        Some(i) => Err(Error::ContractViolation(format!(
            "validation row {i} reached {what}"
        ))),
        None => Ok(()),
    }
}

/// Feature rows with labels and per-row split tags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub splits: Vec<SplitTag>,
}

impl LabeledSet {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<usize>, split: SplitTag) -> Result<Self> {
        check_len("labeled set labels", rows.len(), labels.len())?;
        let splits = vec![split; rows.len()];
        Ok(Self { rows, labels, splits })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut c = vec![0; num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn ensure_training(&self, what: &str) -> Result<()> {
        ensure_training(&self.splits, what)
    }
}

/// Per-feature z-score standardization; constant features get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl StandardScaler {
    pub fn fit(set: &LabeledSet) -> Result<Self> {
        set.ensure_training("scaler fitting")?;
        if set.is_empty() {
            return Err(Error::invalid("cannot fit a scaler on zero rows"));
        }
        let d = set.dim();
        let n = set.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &set.rows {
            check_len("scaler row", d, r.len())?;
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &set.rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("scaler transform", self.mean.len(), x.len())?;
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub path: PathBuf,
    pub patient_id: String,
    pub label: usize,
    pub split: Option<SplitTag>,
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub rows: Vec<IndexRow>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; NUM_CLASSES];
        for r in &self.rows {
            h[r.label] += 1;
        }
        h
    }

    /// Stratified fold assignment; clears any previous split tags.
    pub fn assign_folds(&mut self, k: usize, seed: u64) -> Result<()> {
        let folds = stratified_kfold(&self.labels(), k, seed)?;
        for (row, f) in self.rows.iter_mut().zip(folds.folds) {
            row.fold = Some(f);
            row.split = None;
        }
        Ok(())
    }

    /// Copy of the index with split tags set for validation fold `fold`.
    pub fn for_fold(&self, fold: usize) -> Result<DatasetIndex> {
        let mut out = self.clone();
        for row in &mut out.rows {
            let f = row
                .fold
                .ok_or_else(|| Error::ContractViolation("split requested before fold assignment".into()))?;
            row.split = Some(if f == fold { SplitTag::Val } else { SplitTag::Train });
        }
        Ok(out)
    }

    pub fn rows_with(&self, split: SplitTag) -> impl Iterator<Item = (usize, &IndexRow)> {
        self.rows
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.split == Some(split))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::report::write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub item: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub index: DatasetIndex,
    pub rejects: Vec<Reject>,
    /// Classes removed by the minimum-count rule, with their counts.
    pub dropped: Vec<(String, usize)>,
    pub histogram: BTreeMap<String, usize>,
}

/// Joins `*.wav` files in `audio_dir` (named `<patient>_...`) to the
/// `(patient id, diagnosis)` rows of a delimited diagnosis table.
pub fn ingest(audio_dir: &Path, diagnosis_table: &Path) -> Result<IngestSummary> {
    let table = fs::read_to_string(diagnosis_table).map_err(|e| {
        Error::Ingestion(format!("cannot read diagnosis table {}: {e}", diagnosis_table.display()))
    })?;
    let mut rejects = Vec::new();
    let mut diagnoses: HashMap<String, usize> = HashMap::new();
    for line in table.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line
            .split(|c: char| c == ',' || c == '\t' || c == ';' || c.is_whitespace())
            .filter(|p| !p.is_empty());
        let (Some(pid), Some(diag)) = (parts.next(), parts.next()) else {
            rejects.push(Reject {
                item: line.to_string(),
                reason: "malformed table row".into(),
            });
            continue;
        };
        match class_index(diag) {
            Some(c) => {
                diagnoses.insert(pid.to_string(), c);
            }
            None => rejects.push(Reject {
                item: pid.to_string(),
                reason: format!("unknown diagnosis `{diag}`"),
            }),
        }
    }

    let entries = fs::read_dir(audio_dir)
        .map_err(|e| Error::Ingestion(format!("cannot read audio dir {}: {e}", audio_dir.display())))?;
    let mut wavs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
        })
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(Error::Ingestion(format!(
            "no .wav recordings in {}",
            audio_dir.display()
        )));
    }

    let mut rows = Vec::new();
    for path in wavs {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let pid = name.split('_').next().unwrap_or_default().to_string();
        match diagnoses.get(&pid) {
            Some(&label) => rows.push(IndexRow {
                path,
                patient_id: pid,
                label,
                split: None,
                fold: None,
            }),
            None => rejects.push(Reject {
                item: name,
                reason: format!("patient `{pid}` has no usable diagnosis"),
            }),
        }
    }

    let mut counts = [0usize; NUM_CLASSES];
    for r in &rows {
        counts[r.label] += 1;
    }
    let mut dropped = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 && n < MIN_CLASS_RECORDINGS {
            log::warn!("dropping class {} with only {n} recordings", CLASS_NAMES[c]);
            dropped.push((CLASS_NAMES[c].to_string(), n));
        }
    }
    rows.retain(|r| counts[r.label] >= MIN_CLASS_RECORDINGS);
    if rows.is_empty() {
        return Err(Error::Ingestion("no class has enough recordings".into()));
    }
    let index = DatasetIndex { rows };
    let histogram = index
        .histogram()
        .into_iter()
        .enumerate()
        .filter(|(_, n)| *n > 0)
        .map(|(c, n)| (CLASS_NAMES[c].to_string(), n))
        .collect();
    log::info!("ingested {} recordings: {:?}", index.len(), histogram);
    Ok(IngestSummary {
        index,
        rejects,
        dropped,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaler_standardizes_and_guards() {
        let set = LabeledSet::new(vec![vec![1.0, 5.0], vec![3.0, 5.0]], vec![0, 1], SplitTag::Train).unwrap();
        let s = StandardScaler::fit(&set).unwrap();
        assert_eq!(s.transform(&[1.0, 5.0]).unwrap(), vec![-1.0, 0.0]);
        let mut poisoned = set.clone();
        poisoned.splits[1] = SplitTag::Val;
        assert!(matches!(StandardScaler::fit(&poisoned), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn split_requires_folds() {
        let idx = DatasetIndex {
            rows: vec![IndexRow {
                path: "a.wav".into(),
                patient_id: "1".into(),
                label: 0,
                split: None,
                fold: None,
            }],
        };
        assert!(idx.for_fold(0).is_err());
    }

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), b"").unwrap();
    }

    #[test]
    fn ingest_joins_filters_and_drops() {
        let dir = tempfile::tempdir().unwrap();
        let audio = dir.path().join("audio");
        fs::create_dir(&audio).unwrap();
        let table = dir.path().join("diag.txt");
        fs::write(&table, "101\tURTI\n102\tcopd\n103\tAsthma\n104\tPneumonia\n").unwrap();
        for i in 0..12 {
            touch(&audio, &format!("101_{i}b1_Al_sc_Meditron.wav"));
            touch(&audio, &format!("102_{i}b1_Tc_mc_AKGC417L.wav"));
        }
        for i in 0..9 {
            touch(&audio, &format!("104_{i}b1_Ar_sc_Meditron.wav"));
        }
        touch(&audio, "103_1b1_Al_sc_Meditron.wav");
        touch(&audio, "999_1b1_Al_sc_Meditron.wav");
        touch(&audio, "notes.txt");
        let s = ingest(&audio, &table).unwrap();
        assert_eq!(s.index.len(), 24);
        assert_eq!(s.histogram.get("URTI"), Some(&12));
        assert_eq!(s.histogram.get("COPD"), Some(&12));
        assert_eq!(s.dropped, vec![("Pneumonia".to_string(), 9)]);
        assert!(s.rejects.iter().any(|r| r.reason.contains("Asthma")));
        assert!(s.rejects.iter().any(|r| r.item.starts_with("999_")));
    }

    #[test]
    fn ingest_empty_dir_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let table = dir.path().join("diag.txt");
        fs::write(&table, "101 URTI\n").unwrap();
        let err = ingest(dir.path(), &table).unwrap_err();
        assert!(matches!(err, Error::Ingestion(_)));
        assert!(ingest(dir.path(), &dir.path().join("missing.txt")).is_err());
    }
}
