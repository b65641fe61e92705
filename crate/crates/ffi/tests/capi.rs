use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kan_ausculta::features::wav::write_wav_i16;
use kan_ausculta::features::{Extractor, FeatureConfig};
use kan_ausculta::model::{Checkpoint, HybridModel, ModelConfig};
use kan_ausculta_ffi::*;

fn save_model(dir: &Path, d_feat: usize, fingerprint: &str) -> (CString, Checkpoint) {
    let cfg = ModelConfig {
        lstm_hidden: 4,
        kan_hidden: 5,
        ..ModelConfig::with_feature_dim(d_feat)
    };
    let model = HybridModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let ck = Checkpoint::new(model, None, fingerprint);
    let path = dir.join("model.json");
    ck.save(&path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), ck)
}

fn last_error() -> String {
    let p = ka_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn load_predict_free() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ck) = save_model(dir.path(), 7, "fp-test");
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ka_model_load(path.as_ptr(), &mut handle) }, KaStatus::Ok);
    assert!(ka_last_error().is_null());
    unsafe {
        assert_eq!(ka_model_feature_dim(handle), 7);
        assert_eq!(ka_model_class_count(handle), 6);
        assert_eq!(CStr::from_ptr(ka_model_fingerprint(handle)).to_str().unwrap(), "fp-test");
    }
    let x = [0.3, -0.2, 0.9, 1.5, -1.1, 0.0, 0.4];
    let mut probs = [0.0; 6];
    let status = unsafe { ka_model_predict(handle, x.as_ptr(), x.len(), probs.as_mut_ptr(), probs.len()) };
    assert_eq!(status, KaStatus::Ok);
    assert_eq!(probs.to_vec(), ck.predict_proba(&x).unwrap());
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let status = unsafe { ka_model_predict(handle, x.as_ptr(), 3, probs.as_mut_ptr(), probs.len()) };
    assert_eq!(status, KaStatus::Shape);
    assert!(last_error().contains("shape"));

    let mut small = [0.0; 2];
    let status = unsafe { ka_model_predict(handle, x.as_ptr(), x.len(), small.as_mut_ptr(), small.len()) };
    assert_eq!(status, KaStatus::BufferTooSmall);
    unsafe { ka_model_free(handle) };
}

#[test]
fn null_and_missing_inputs() {
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ka_model_load(ptr::null(), &mut handle) }, KaStatus::NullPointer);
    assert!(handle.is_null());
    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { ka_model_load(missing.as_ptr(), &mut handle) }, KaStatus::Io);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { ka_model_load(missing.as_ptr(), ptr::null_mut()) }, KaStatus::NullPointer);
    unsafe {
        assert_eq!(ka_model_feature_dim(ptr::null()), 0);
        assert!(ka_model_fingerprint(ptr::null()).is_null());
        ka_model_free(ptr::null_mut());
    }
    let mut probs = [0.0; 6];
    let status = unsafe { ka_model_predict(ptr::null(), probs.as_ptr(), 6, probs.as_mut_ptr(), 6) };
    assert_eq!(status, KaStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{not json").unwrap();
    let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ka_model_load(garbage.as_ptr(), &mut handle) }, KaStatus::Json);
}

#[test]
fn class_names() {
    assert_eq!(ka_class_count(), 6);
    let names: Vec<String> = (0..6)
        .map(|i| unsafe { CStr::from_ptr(ka_class_name(i)) }.to_str().unwrap().to_string())
        .collect();
    assert_eq!(names, kan_ausculta::CLASS_NAMES);
    assert!(ka_class_name(6).is_null());
}

#[test]
fn wav_extraction_and_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("tone.wav");
    let samples: Vec<f64> = (0..8000).map(|i| 0.5 * (i as f64 * 0.2).sin()).collect();
    write_wav_i16(&wav, &samples, 8000).unwrap();
    let wav_c = CString::new(wav.to_str().unwrap()).unwrap();

    let dim = ka_default_feature_dim();
    assert_eq!(dim, 1927);
    let mut written = 0usize;
    let mut tiny = [0.0; 4];
    let status = unsafe { ka_extract_wav(wav_c.as_ptr(), tiny.as_mut_ptr(), tiny.len(), &mut written) };
    assert_eq!(status, KaStatus::BufferTooSmall);
    assert_eq!(written, dim);

    let mut feats = vec![0.0; dim];
    let status = unsafe { ka_extract_wav(wav_c.as_ptr(), feats.as_mut_ptr(), feats.len(), &mut written) };
    assert_eq!(status, KaStatus::Ok);
    let extractor = Extractor::new(FeatureConfig::default()).unwrap();
    assert_eq!(feats, extractor.extract_file(&wav).unwrap().values);

    let (path, ck) = save_model(dir.path(), dim, extractor.fingerprint());
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ka_model_load(path.as_ptr(), &mut handle) }, KaStatus::Ok);
    let mut probs = [0.0; 6];
    let status = unsafe { ka_model_predict_wav(handle, wav_c.as_ptr(), probs.as_mut_ptr(), 6) };
    assert_eq!(status, KaStatus::Ok);
    assert_eq!(probs.to_vec(), ck.predict_proba(&feats).unwrap());
    unsafe { ka_model_free(handle) };

    let (path, _) = save_model(dir.path(), dim, "other-layout");
    assert_eq!(unsafe { ka_model_load(path.as_ptr(), &mut handle) }, KaStatus::Ok);
    let status = unsafe { ka_model_predict_wav(handle, wav_c.as_ptr(), probs.as_mut_ptr(), 6) };
    assert_eq!(status, KaStatus::Fingerprint);
    unsafe { ka_model_free(handle) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/kan_ausculta.h")).unwrap();
    for sym in [
        "typedef struct KaModel KaModel",
        "KA_STATUS_OK = 0",
        "KA_STATUS_PANIC = 99",
        "ka_model_load",
        "ka_model_free",
        "ka_model_predict(",
        "ka_model_predict_wav",
        "ka_extract_wav",
        "ka_last_error",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

/// Compiles and runs a small C program against the generated header and the
/// cdylib. Skipped when no C compiler is available.
#[test]
fn c_program_links_against_cdylib() {
    let Ok(exe) = std::env::current_exe() else { return };
    let Some(profile_dir) = exe.parent().and_then(Path::parent) else { return };
    let lib = profile_dir.join("libkan_ausculta_ffi.so");
    if !lib.exists() || std::process::Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no cc or cdylib at {}", lib.display());
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(profile_dir)
        .arg("-lkan_ausculta_ffi")
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let (model, _) = save_model(dir.path(), 9, "c-smoke");
    let out = std::process::Command::new(&bin)
        .arg(model.to_str().unwrap())
        .env("LD_LIBRARY_PATH", profile_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stdout));
}
