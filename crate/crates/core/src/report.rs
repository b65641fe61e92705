//! Run report, JSON/CSV export with 17 significant digits, and atomic writes.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalkit::{AucReport, CalibrationReport, ClassificationMetrics, ConfusionMatrix};
use crate::kan::SplineDump;
use crate::CLASS_NAMES;

/// JSON formatter writing every float in `{:.16e}` form (17 significant
/// digits, exact round trip); non-finite values become `null`.
struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

/// Writes to a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "detail")]
pub enum FoldStatus {
    Complete,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub status: FoldStatus,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub train_size: usize,
    pub val_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofRow {
    pub index: usize,
    pub fold: usize,
    pub label: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadStat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub feature_dim: usize,
    pub fingerprint: String,
    pub class_names: Vec<String>,
    pub folds: Vec<FoldSummary>,
    pub fold_macro_f1: SpreadStat,
    pub fold_accuracy: SpreadStat,
    pub fold_weighted_f1: SpreadStat,
    /// Metrics on the pooled out-of-fold predictions.
    pub pooled: ClassificationMetrics,
    pub confusion: ConfusionMatrix,
    pub confusion_normalized: Vec<Vec<f64>>,
    pub auc: AucReport,
    pub average_precision: Vec<Option<f64>>,
    pub calibration: CalibrationReport,
    pub oof: Vec<OofRow>,
    pub warnings: Vec<String>,
    /// File name of the spline dump written next to the report.
    pub splines_file: Option<String>,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn complete(&self) -> bool {
        self.folds.iter().all(|f| f.status == FoldStatus::Complete)
    }

    pub fn folds_csv(&self) -> String {
        let mut s = String::from("fold,macro_f1,accuracy,weighted_f1,best_epoch,epochs_run,status\n");
        for f in &self.folds {
            let status = match &f.status {
                FoldStatus::Complete => "complete".to_string(),
                FoldStatus::Failed(m) => format!("failed: {}", m.replace([',', '\n'], ";")),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                f.fold + 1,
                fmt_f64(f.macro_f1),
                fmt_f64(f.accuracy),
                fmt_f64(f.weighted_f1),
                f.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
                f.epochs_run,
                status
            );
        }
        let _ = writeln!(
            s,
            "mean,{},{},{},,,",
            fmt_f64(self.fold_macro_f1.mean),
            fmt_f64(self.fold_accuracy.mean),
            fmt_f64(self.fold_weighted_f1.mean)
        );
        let _ = writeln!(
            s,
            "std,{},{},{},,,",
            fmt_f64(self.fold_macro_f1.std),
            fmt_f64(self.fold_accuracy.std),
            fmt_f64(self.fold_weighted_f1.std)
        );
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for n in &self.class_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion.counts) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1,support,auc,average_precision,undefined\n");
        for (c, m) in self.pooled.per_class.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                self.class_names[c],
                fmt_f64(m.precision),
                fmt_f64(m.recall),
                fmt_f64(m.f1),
                m.support,
                fmt_opt(self.auc.per_class.get(c).copied().flatten()),
                fmt_opt(self.average_precision.get(c).copied().flatten()),
                m.undefined
            );
        }
        s
    }

    pub fn calibration_csv(&self) -> String {
        let mut s = String::from("bin,lower,upper,mean_confidence,accuracy,count\n");
        for (i, b) in self.calibration.bins.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{}",
                fmt_f64(b.lower),
                fmt_f64(b.upper),
                fmt_opt(b.mean_confidence),
                fmt_opt(b.accuracy),
                b.count
            );
        }
        s
    }
}

pub fn splines_csv(dump: &SplineDump) -> String {
    let mut s = String::from("layer,out_index,in_index,x,phi\n");
    for c in &dump.curves {
        for (x, y) in &c.points {
            let _ = writeln!(s, "{},{},{},{},{}", c.layer, c.out_index, c.in_index, fmt_f64(*x), fmt_f64(*y));
        }
    }
    s
}

pub const SPLINES_FILE: &str = "splines.csv";

/// Writes `report.json` and the CSV tables into `out_dir`. All files are
/// staged in a temporary directory inside `out_dir` and renamed only once
/// every file has been written.
pub fn export(report: &RunReport, splines: Option<&SplineDump>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut report = report.clone();
    report.splines_file = splines.map(|_| SPLINES_FILE.to_string());
    let mut files: Vec<(&str, Vec<u8>)> = vec![
        ("report.json", to_json_bytes(&report)?),
        ("confusion.csv", report.confusion_csv().into_bytes()),
        ("per_class.csv", report.per_class_csv().into_bytes()),
        ("folds.csv", report.folds_csv().into_bytes()),
        ("calibration.csv", report.calibration_csv().into_bytes()),
    ];
    if let Some(d) = splines {
        files.push((SPLINES_FILE, splines_csv(d).into_bytes()));
    }
    let stage = tempfile::Builder::new().prefix(".staging").tempdir_in(out_dir)?;
    for (name, bytes) in &files {
        std::fs::write(stage.path().join(name), bytes)?;
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, _) in &files {
        let dest = out_dir.join(name);
        std::fs::rename(stage.path().join(name), &dest)?;
        written.push(dest);
    }
    Ok(written)
}

pub fn class_names() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_digits() {
        let bytes = to_json_bytes(&vec![0.1, 1.0 / 3.0, -2.5e-300]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("1.0000000000000001e-1"));
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, vec![0.1, 1.0 / 3.0, -2.5e-300]);
        let nan = String::from_utf8(to_json_bytes(&f64::NAN).unwrap()).unwrap();
        assert_eq!(nan.trim(), "null");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_json_atomic(&p, &[1, 2]).unwrap();
        write_json_atomic(&p, &[3]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().trim(), "[3]");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
