use kan_ausculta::config::{Preset, RunConfig};
use kan_ausculta::dataset::{ingest, SplitTag};
use kan_ausculta::features::cache::FeatureMatrix;
use kan_ausculta::features::FeatureConfig;
use kan_ausculta::imbalance::AugmentConfig;
use kan_ausculta::model::Checkpoint;
use kan_ausculta::pipeline::{run_cv, AudioSource, FeatureSource};
use kan_ausculta::report::{FoldStatus, RunReport};
use kan_ausculta::synthetic::{write_audio_corpus, ClusterSpec};
use kan_ausculta::Error;

fn small(preset: Preset) -> RunConfig {
    let mut cfg = RunConfig::for_preset(preset);
    cfg.model.lstm_hidden = 8;
    cfg.model.kan_hidden = 6;
    cfg.train.max_epochs = 4;
    cfg.stage1.epochs = 1;
    cfg.cv.folds = 3;
    cfg
}

#[test]
fn export_round_trips_and_checkpoints_reproduce_oof() {
    let source = ClusterSpec::default().generate();
    let cfg = small(Preset::Full);
    let out = run_cv(&cfg, &source, 2).unwrap();
    assert!(out.errors.is_empty());
    assert!(out.report.complete());

    let dir = tempfile::tempdir().unwrap();
    let files = out.export(dir.path()).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    let back = RunReport::load(&dir.path().join("report.json")).unwrap();
    let mut expected = out.report.clone();
    expected.splines_file = Some("splines.csv".into());
    assert_eq!(back, expected);
    assert!(std::fs::read_dir(dir.path())
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().starts_with(".staging")));

    // Saved fold models reproduce their out-of-fold probabilities exactly.
    for row in out.report.oof.iter().take(40) {
        let ck = Checkpoint::load(&dir.path().join(format!("model_fold{}.json", row.fold)), Some(&source.fingerprint)).unwrap();
        let p = ck.predict_proba(source.base_features(row.index)).unwrap();
        assert_eq!(p, row.probs);
    }
    assert!(matches!(
        Checkpoint::load(&dir.path().join("model_fold0.json"), Some("other")),
        Err(Error::Fingerprint { .. })
    ));
}

#[test]
fn pooled_oof_covers_every_row_once() {
    let source = ClusterSpec::default().generate();
    let out = run_cv(&small(Preset::BaselineCe), &source, 1).unwrap();
    let r = &out.report;
    assert_eq!(r.oof.len(), source.len());
    assert!(r.oof.iter().enumerate().all(|(i, row)| row.index == i));
    for (c, row) in r.confusion.counts.iter().enumerate() {
        assert_eq!(row.iter().sum::<u64>(), r.confusion.support(c));
    }
    assert_eq!(r.folds.len(), 3);
    assert!(r.folds.iter().all(|f| f.status == FoldStatus::Complete && f.epochs_run <= 4));
    let val: usize = r.folds.iter().map(|f| f.val_size).sum();
    assert_eq!(val, source.len());
}

#[test]
fn audio_source_uses_and_invalidates_cache() {
    let dir = tempfile::tempdir().unwrap();
    let table = write_audio_corpus(&dir.path().join("a"), 10, 0.3, 2).unwrap();
    let index = ingest(&dir.path().join("a"), &table).unwrap().index;
    let cache = dir.path().join("features.bin");
    let first = AudioSource::build(index.clone(), FeatureConfig::default(), Some(&cache)).unwrap();
    assert!(cache.exists());
    let second = AudioSource::build(index.clone(), FeatureConfig::default(), Some(&cache)).unwrap();
    for i in 0..first.len() {
        assert_eq!(first.base_features(i), second.base_features(i));
    }

    // A cache written under another layout is refused on direct load and
    // replaced on the next build.
    let alt = FeatureConfig {
        n_mfcc: 20,
        ..FeatureConfig::default()
    };
    assert!(matches!(
        FeatureMatrix::load(&cache, first.extractor().fingerprint()),
        Err(Error::Fingerprint { .. })
    ));
    let rebuilt = AudioSource::build(index, alt, Some(&cache)).unwrap();
    assert_ne!(rebuilt.dim(), first.dim());
}

#[test]
fn validation_rows_never_augment() {
    let source = ClusterSpec::default().generate();
    let cfg = AugmentConfig {
        base_probability: 1.0,
        class_probability: vec![Some(1.0); 6],
        ..AugmentConfig::default()
    };
    assert!(source.augmented_features(0, SplitTag::Train, &cfg, 1).unwrap().is_some());
    assert!(matches!(
        source.augmented_features(0, SplitTag::Val, &cfg, 1),
        Err(Error::ContractViolation(_))
    ));
}
