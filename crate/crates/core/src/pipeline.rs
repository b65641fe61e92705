//! Cross-validated training: per fold, optional stage-1 pre-training on a
//! minority-heavy subset, then epochs of augment -> features -> SMOTE ->
//! standardize -> batched focal-loss training -> validation, driven by the
//! plateau scheduler and early stopping on validation macro F1.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::{DatasetIndex, LabeledSet, SplitTag, StandardScaler};
use crate::error::{Error, Result};
use crate::evalkit::{
    argmax, average_precision, calibration_bins, classification_metrics, mean_std, roc_auc_ovr, stratified_kfold,
    ConfusionMatrix,
};
use crate::features::cache::FeatureMatrix;
use crate::features::{wav, Extractor, FeatureConfig};
use crate::imbalance::{apply_transforms, augment_gate, smote_resample, stage1_rows, AugmentConfig};
use crate::kan::SplineDump;
use crate::model::{softmax, Checkpoint, HybridModel};
use crate::optim::{focal_loss, AdamWState, EarlyStopState, FocalParams, SchedulerState, StopDecision};
use crate::params::GradSet;
use crate::report::{class_names, FoldStatus, FoldSummary, OofRow, RunReport, SpreadStat};
use crate::NUM_CLASSES;

/// Supplies per-recording feature vectors, plain or after one augmentation draw.
pub trait FeatureSource: Sync {
    fn len(&self) -> usize;
    fn label(&self, i: usize) -> usize;
    fn dim(&self) -> usize;
    fn fingerprint(&self) -> String;
    fn base_features(&self, i: usize) -> &[f64];
    /// Features after augmenting row `i`, or `None` when the gate did not fire.
    fn augmented_features(&self, i: usize, split: SplitTag, cfg: &AugmentConfig, seed: u64) -> Result<Option<Vec<f64>>>;
    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

/// SplitMix64-style mixing of a base seed with stream identifiers.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const STREAM_INIT: u64 = 1;
const STREAM_STAGE1: u64 = 2;
const STREAM_EPOCH: u64 = 3;
const STREAM_AUGMENT: u64 = 4;
const STREAM_PREGEN: u64 = 5;

/// Features extracted from WAV recordings listed in a dataset index.
pub struct AudioSource {
    index: DatasetIndex,
    extractor: Extractor,
    base: Vec<Vec<f64>>,
    short: Vec<usize>,
}

fn index_digest(index: &DatasetIndex) -> String {
    let mut h = Sha256::new();
    for r in &index.rows {
        h.update(r.path.to_string_lossy().as_bytes());
        h.update([0, r.label as u8]);
    }
    hex::encode(&h.finalize()[..8])
}

impl AudioSource {
    /// Extracts (or loads from `cache`) the un-augmented features of every row.
    pub fn build(index: DatasetIndex, features: FeatureConfig, cache: Option<&Path>) -> Result<Self> {
        if index.is_empty() {
            return Err(Error::Ingestion("dataset index is empty".into()));
        }
        let extractor = Extractor::new(features)?;
        let key = format!("{}:{}", extractor.fingerprint(), index_digest(&index));
        if let Some(path) = cache.filter(|p| p.exists()) {
            match FeatureMatrix::load(path, &key) {
                Ok(m) if m.rows.len() == index.len() => {
                    log::info!("loaded {} cached feature rows from {}", m.rows.len(), path.display());
                    return Ok(Self {
                        index,
                        extractor,
                        base: m.rows,
                        short: Vec::new(),
                    });
                }
                Ok(_) | Err(Error::Fingerprint { .. }) => {
                    log::warn!("feature cache {} is stale; re-extracting", path.display())
                }
                Err(e) => return Err(e),
            }
        }
        let extracted: Vec<(Vec<f64>, bool)> = index
            .rows
            .par_iter()
            .map(|r| extractor.extract_file(&r.path).map(|v| (v.values, v.short_input)))
            .collect::<Result<_>>()?;
        let short = extracted.iter().enumerate().filter(|(_, e)| e.1).map(|(i, _)| i).collect();
        let base: Vec<Vec<f64>> = extracted.into_iter().map(|e| e.0).collect();
        if let Some(path) = cache {
            FeatureMatrix {
                fingerprint: key,
                rows: base.clone(),
            }
            .save(path)?;
        }
        Ok(Self {
            index,
            extractor,
            base,
            short,
        })
    }

    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }

    pub fn extractor(&self) -> &Extractor {
        &self.extractor
    }
}

impl FeatureSource for AudioSource {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn label(&self, i: usize) -> usize {
        self.index.rows[i].label
    }

    fn dim(&self) -> usize {
        self.extractor.layout().dim()
    }

    fn fingerprint(&self) -> String {
        self.extractor.fingerprint().to_string()
    }

    fn base_features(&self, i: usize) -> &[f64] {
        &self.base[i]
    }

    fn augmented_features(&self, i: usize, split: SplitTag, cfg: &AugmentConfig, seed: u64) -> Result<Option<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let label = self.label(i);
        if !augment_gate(label, split, cfg, &mut rng)? {
            return Ok(None);
        }
        let raw = wav::read_wav(&self.index.rows[i].path)?;
        let (samples, _) = apply_transforms(&raw.samples, label, cfg, &mut rng)?;
        let sig = crate::features::AudioSignal::new(samples, raw.sample_rate)?;
        Ok(Some(self.extractor.extract_raw(&sig)?.values))
    }

    fn warnings(&self) -> Vec<String> {
        self.short
            .iter()
            .map(|&i| format!("{} is shorter than one analysis frame", self.index.rows[i].path.display()))
            .collect()
    }
}

/// In-memory feature vectors; augmentation adds Gaussian jitter in feature
/// space with standard deviation `jitter`.
pub struct MatrixSource {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub jitter: f64,
    pub fingerprint: String,
}

impl FeatureSource for MatrixSource {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn base_features(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    fn augmented_features(&self, i: usize, split: SplitTag, cfg: &AugmentConfig, seed: u64) -> Result<Option<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if !augment_gate(self.labels[i], split, cfg, &mut rng)? {
            return Ok(None);
        }
        let normal = rand_distr::Normal::new(0.0, self.jitter.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Some(
            self.rows[i]
                .iter()
                .map(|v| v + rand_distr::Distribution::sample(&normal, &mut rng))
                .collect(),
        ))
    }
}

/// Best-epoch state of one fold.
#[derive(Debug, Clone)]
pub struct FoldModel {
    pub model: HybridModel,
    pub scaler: StandardScaler,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_size: usize,
    pub val_indices: Vec<usize>,
    pub val_probs: Vec<Vec<f64>>,
    pub best: FoldModel,
    pub history: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub lr: f64,
    pub train_rows: usize,
}

/// One pass over `rows` in shuffled mini-batches; returns the mean loss.
pub fn train_epoch<R: Rng + ?Sized>(
    model: &mut HybridModel,
    opt: &mut AdamWState,
    rows: &[Vec<f64>],
    labels: &[usize],
    batch_size: usize,
    fp: &FocalParams,
    rng: &mut R,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size.max(1)) {
        let mut acc = GradSet::zeros_like(model);
        let scale = 1.0 / chunk.len() as f64;
        for &i in chunk {
            let (logits, cache) = model.forward(&rows[i], true, rng)?;
            let probs = softmax(&logits)?;
            let (loss, dlogits) = focal_loss(&probs, labels[i], fp)?;
            total += loss;
            acc.add_scaled(&model.backward(&cache, &dlogits)?, scale)?;
        }
        opt.step(model, &acc)?;
    }
    Ok(total / rows.len().max(1) as f64)
}

/// Eval-mode probabilities and macro F1 on already-scaled rows.
pub fn evaluate(model: &HybridModel, rows: &[Vec<f64>], labels: &[usize]) -> Result<(Vec<Vec<f64>>, f64)> {
    let probs = rows.iter().map(|r| model.predict_proba(r)).collect::<Result<Vec<_>>>()?;
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let cm = ConfusionMatrix::new(labels, &pred, NUM_CLASSES)?;
    Ok((probs, classification_metrics(&cm)?.macro_f1))
}

fn majority_class(labels: &[usize]) -> usize {
    let mut counts = vec![0usize; NUM_CLASSES];
    for &l in labels {
        counts[l] += 1;
    }
    // Ties resolve to the lowest class index.
    let max = counts.iter().copied().max().unwrap_or(0);
    counts.iter().position(|&c| c == max).unwrap_or(0)
}

/// Runs the full per-fold procedure for validation fold `fold`.
pub fn run_fold(cfg: &RunConfig, source: &dyn FeatureSource, folds: &[usize], fold: usize) -> Result<FoldResult> {
    let n = source.len();
    let split_of = |i: usize| if folds[i] == fold { SplitTag::Val } else { SplitTag::Train };
    let train_idx: Vec<usize> = (0..n).filter(|&i| split_of(i) == SplitTag::Train).collect();
    let val_idx: Vec<usize> = (0..n).filter(|&i| split_of(i) == SplitTag::Val).collect();
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::invalid(format!("fold {fold} has an empty train or validation split")));
    }
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| source.label(i)).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| source.label(i)).collect();
    let fold_seed = derive_seed(cfg.seed, &[fold as u64]);
    let fp = cfg.focal_params();
    let t = &cfg.train;

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(fold_seed, &[STREAM_INIT]));
    let mut model = HybridModel::init(cfg.model_config(source.dim()), &mut init_rng)?;

    if cfg.stage1.enabled && cfg.stage1.epochs > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(fold_seed, &[STREAM_STAGE1]));
        let subset = stage1_rows(&train_labels, majority_class(&train_labels), cfg.stage1.majority_cap, &mut rng)?;
        let set = LabeledSet::new(
            subset.iter().map(|&k| source.base_features(train_idx[k]).to_vec()).collect(),
            subset.iter().map(|&k| train_labels[k]).collect(),
            SplitTag::Train,
        )?;
        let scaler = StandardScaler::fit(&set)?;
        let rows = scaler.transform_all(&set.rows)?;
        let mut opt = AdamWState::new(cfg.stage1.lr, t.weight_decay)?;
        for _ in 0..cfg.stage1.epochs {
            train_epoch(&mut model, &mut opt, &rows, &set.labels, t.batch_size, &fp, &mut rng)?;
        }
    }

    let aug = cfg.augment_config();
    let augment = |epoch_tag: u64, stream: u64| -> Result<Vec<Vec<f64>>> {
        train_idx
            .par_iter()
            .map(|&i| {
                let seed = derive_seed(fold_seed, &[stream, epoch_tag, i as u64]);
                Ok(source
                    .augmented_features(i, split_of(i), &aug, seed)?
                    .unwrap_or_else(|| source.base_features(i).to_vec()))
            })
            .collect()
    };
    let pregenerated = if cfg.augment.enabled && !cfg.augment.per_epoch {
        Some(augment(0, STREAM_PREGEN)?)
    } else {
        None
    };

    let mut opt = AdamWState::new(t.lr, t.weight_decay)?;
    let mut sched = SchedulerState::new(t.lr, t.scheduler_factor, t.scheduler_patience, t.min_lr)?;
    let mut stopper: EarlyStopState<(FoldModel, Vec<Vec<f64>>)> = EarlyStopState::new(t.early_stop_patience)?;
    let mut history = Vec::new();
    let mut epochs_run = 0;
    for epoch in 0..t.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(fold_seed, &[STREAM_EPOCH, epoch as u64]));
        let features = match (&pregenerated, cfg.augment.enabled) {
            (Some(p), _) => p.clone(),
            (None, true) => augment(epoch as u64, STREAM_AUGMENT)?,
            (None, false) => train_idx.iter().map(|&i| source.base_features(i).to_vec()).collect(),
        };
        let mut set = LabeledSet {
            rows: features,
            labels: train_labels.clone(),
            splits: train_idx.iter().map(|&i| split_of(i)).collect(),
        };
        if cfg.smote.enabled {
            set = smote_resample(&set, &cfg.smote_config(), &mut rng)?.set;
        }
        let scaler = StandardScaler::fit(&set)?;
        let rows = scaler.transform_all(&set.rows)?;
        let train_loss = train_epoch(&mut model, &mut opt, &rows, &set.labels, t.batch_size, &fp, &mut rng)?;

        let val_rows: Vec<Vec<f64>> = val_idx
            .iter()
            .map(|&i| scaler.transform(source.base_features(i)))
            .collect::<Result<_>>()?;
        let (probs, f1) = evaluate(&model, &val_rows, &val_labels)?;
        let lr = opt.lr;
        opt.lr = sched.step(f1);
        history.push(EpochLog {
            epoch,
            train_loss,
            val_macro_f1: f1,
            lr,
            train_rows: rows.len(),
        });
        epochs_run = epoch + 1;
        log::debug!("fold {fold} epoch {epoch}: loss {train_loss:.4} val macro F1 {f1:.4}");
        let decision = stopper.observe(epoch, f1, || {
            (
                FoldModel {
                    model: model.clone(),
                    scaler: scaler.clone(),
                },
                probs.clone(),
            )
        });
        if decision == StopDecision::Stop {
            break;
        }
    }
    let best_epoch = stopper.best_epoch.unwrap_or(0);
    let (best, val_probs) = stopper
        .into_best()
        .ok_or_else(|| Error::ContractViolation("no epoch completed".into()))?;
    Ok(FoldResult {
        fold,
        best_epoch,
        epochs_run,
        train_size: train_idx.len(),
        val_indices: val_idx,
        val_probs,
        best,
        history,
    })
}

pub struct RunOutcome {
    pub report: RunReport,
    pub folds: Vec<Option<FoldResult>>,
    pub splines: Option<SplineDump>,
    pub errors: Vec<(usize, Error)>,
}

impl RunOutcome {
    pub fn checkpoints(&self) -> Vec<(usize, Checkpoint)> {
        self.folds
            .iter()
            .flatten()
            .map(|f| {
                (
                    f.fold,
                    Checkpoint::new(f.best.model.clone(), Some(f.best.scaler.clone()), self.report.fingerprint.clone()),
                )
            })
            .collect()
    }

    /// Writes the report tables plus one checkpoint per completed fold.
    pub fn export(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        let mut files = crate::report::export(&self.report, self.splines.as_ref(), out_dir)?;
        for (fold, ck) in self.checkpoints() {
            let path = out_dir.join(format!("model_fold{fold}.json"));
            ck.save(&path)?;
            files.push(path);
        }
        Ok(files)
    }
}

/// Stratified k-fold cross-validation of `cfg` over `source`, folds in
/// parallel on `jobs` threads.
pub fn run_cv(cfg: &RunConfig, source: &dyn FeatureSource, jobs: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::invalid("no samples to train on"));
    }
    let labels = source.labels();
    if labels.iter().any(|&l| l >= NUM_CLASSES) {
        return Err(Error::invalid("label outside the class set"));
    }
    let assignment = stratified_kfold(&labels, cfg.cv.folds, cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let results: Vec<Result<FoldResult>> = pool.install(|| {
        (0..cfg.cv.folds)
            .into_par_iter()
            .map(|f| run_fold(cfg, source, &assignment.folds, f))
            .collect()
    });

    let mut summaries = Vec::new();
    let mut errors = Vec::new();
    let mut oof = Vec::new();
    let mut folds = Vec::new();
    for (f, res) in results.into_iter().enumerate() {
        match res {
            Ok(r) => {
                let truth: Vec<usize> = r.val_indices.iter().map(|&i| labels[i]).collect();
                let pred: Vec<usize> = r.val_probs.iter().map(|p| argmax(p)).collect();
                let m = classification_metrics(&ConfusionMatrix::new(&truth, &pred, NUM_CLASSES)?)?;
                summaries.push(FoldSummary {
                    fold: f,
                    status: FoldStatus::Complete,
                    macro_f1: m.macro_f1,
                    accuracy: m.accuracy,
                    weighted_f1: m.weighted_f1,
                    best_epoch: Some(r.best_epoch),
                    epochs_run: r.epochs_run,
                    train_size: r.train_size,
                    val_size: r.val_indices.len(),
                });
                for (&i, p) in r.val_indices.iter().zip(&r.val_probs) {
                    oof.push(OofRow {
                        index: i,
                        fold: f,
                        label: labels[i],
                        probs: p.clone(),
                    });
                }
                folds.push(Some(r));
            }
            Err(e) => {
                log::error!("fold {f} failed: {e}");
                summaries.push(FoldSummary {
                    fold: f,
                    status: FoldStatus::Failed(e.to_string()),
                    macro_f1: 0.0,
                    accuracy: 0.0,
                    weighted_f1: 0.0,
                    best_epoch: None,
                    epochs_run: 0,
                    train_size: 0,
                    val_size: 0,
                });
                errors.push((f, e));
                folds.push(None);
            }
        }
    }
    if oof.is_empty() {
        let (_, e) = errors.remove(0);
        return Err(e);
    }
    oof.sort_by_key(|r| r.index);

    let truth: Vec<usize> = oof.iter().map(|r| r.label).collect();
    let probs: Vec<Vec<f64>> = oof.iter().map(|r| r.probs.clone()).collect();
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let confusion = ConfusionMatrix::new(&truth, &pred, NUM_CLASSES)?;
    let pooled = classification_metrics(&confusion)?;
    let complete: Vec<&FoldSummary> = summaries.iter().filter(|s| s.status == FoldStatus::Complete).collect();
    let spread = |f: fn(&FoldSummary) -> f64| {
        let (mean, std) = mean_std(&complete.iter().map(|s| f(s)).collect::<Vec<_>>());
        SpreadStat { mean, std }
    };
    let names = class_names();
    let mut warnings = source.warnings();
    for (c, m) in pooled.per_class.iter().enumerate() {
        if m.undefined {
            warnings.push(format!("{}: precision, recall or F1 undefined (reported as 0)", names[c]));
        }
    }
    for c in confusion.empty_rows() {
        warnings.push(format!("{}: no validation samples", names[c]));
    }
    for (f, e) in &errors {
        warnings.push(format!("fold {f} incomplete: {e}"));
    }
    let auc = roc_auc_ovr(&truth, &probs)?;
    for (c, a) in auc.per_class.iter().enumerate() {
        if a.is_none() {
            warnings.push(format!("{}: AUC undefined, excluded from macro AUC", names[c]));
        }
    }
    let splines = folds
        .iter()
        .flatten()
        .next()
        .map(|r| r.best.model.kan().export_splines(cfg.export.spline_samples))
        .transpose()?;

    let report = RunReport {
        config: cfg.clone(),
        feature_dim: source.dim(),
        fingerprint: source.fingerprint(),
        class_names: names,
        fold_macro_f1: spread(|s| s.macro_f1),
        fold_accuracy: spread(|s| s.accuracy),
        fold_weighted_f1: spread(|s| s.weighted_f1),
        folds: summaries,
        confusion_normalized: confusion.normalized(),
        confusion,
        pooled,
        auc,
        average_precision: average_precision(&truth, &probs)?,
        calibration: calibration_bins(&truth, &probs, 10)?,
        oof,
        warnings,
        splines_file: None,
    };
    Ok(RunOutcome {
        report,
        folds,
        splines,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        assert_eq!(derive_seed(1, &[2, 3]), derive_seed(1, &[2, 3]));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_ne!(derive_seed(1, &[0]), derive_seed(2, &[0]));
    }

    #[test]
    fn majority_tie_goes_to_lowest() {
        assert_eq!(majority_class(&[1, 1, 2, 2, 0]), 1);
        assert_eq!(majority_class(&[3, 3, 3, 1]), 3);
    }
}
