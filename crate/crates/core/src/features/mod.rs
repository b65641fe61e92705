//! Audio preprocessing and the aggregated feature vector.
//!
//! Pipeline: resample to 22 050 Hz, zero-phase Butterworth band-pass
//! 100–2000 Hz, peak normalization, then mel / MFCC (+Δ, ΔΔ) / chroma /
//! spectral / onset streams, each summarized by seven statistics.
//!
//! The second chroma variant folds a log-frequency spectrogram rather than a
//! true constant-Q transform.

pub mod aggregate;
pub mod cache;
pub mod filter;
pub mod resample;
pub mod spectral;
pub mod wav;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use aggregate::{aggregate, STAT_NAMES};
use filter::BandPass;
use spectral::{MelFilterbank, Stft};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid(format!("sample rate {sample_rate} must be positive")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("audio samples must be finite"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub band_low: f64,
    pub band_high: f64,
    pub filter_order: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub delta_width: usize,
    pub chroma_octaves: usize,
    /// Adds 4 equal mel-band group energies as extra aggregated streams.
    pub sub_bands: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22_050,
            band_low: 100.0,
            band_high: 2000.0,
            filter_order: 4,
            n_fft: 2048,
            hop: 512,
            n_mels: 128,
            n_mfcc: 40,
            delta_width: 2,
            chroma_octaves: 7,
            sub_bands: false,
        }
    }
}

pub const SUB_BAND_GROUPS: usize = 4;

/// Ordered `(stream, statistic)` names of every feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub entries: Vec<(String, String)>,
    pub fingerprint: String,
}

impl FeatureLayout {
    pub fn for_config(cfg: &FeatureConfig) -> Self {
        let mut streams: Vec<String> = Vec::new();
        streams.extend((0..cfg.n_mels).map(|i| format!("mel[{i}]")));
        for prefix in ["mfcc", "mfcc_delta", "mfcc_delta2"] {
            streams.extend((0..cfg.n_mfcc).map(|i| format!("{prefix}[{i}]")));
        }
        for prefix in ["chroma_stft", "chroma_logf"] {
            streams.extend((0..12).map(|i| format!("{prefix}[{i}]")));
        }
        streams.push("spectral_centroid".into());
        streams.push("spectral_bandwidth".into());
        streams.push("onset_envelope".into());
        if cfg.sub_bands {
            streams.extend((0..SUB_BAND_GROUPS).map(|g| format!("mel_group[{g}]")));
        }
        let mut entries: Vec<(String, String)> = streams
            .iter()
            .flat_map(|s| STAT_NAMES.iter().map(move |st| (s.clone(), st.to_string())))
            .collect();
        entries.push(("onset".into(), "count".into()));
        entries.push(("onset".into(), "rate".into()));

        let mut h = Sha256::new();
        h.update(serde_json::to_vec(cfg).expect("config serializes"));
        for (s, st) in &entries {
            h.update(s.as_bytes());
            h.update(b"/");
            h.update(st.as_bytes());
            h.update(b";");
        }
        let fingerprint = hex::encode(&h.finalize()[..16]);
        Self { entries, fingerprint }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub fingerprint: String,
    /// Input was shorter than one analysis frame.
    pub short_input: bool,
}

pub struct Extractor {
    config: FeatureConfig,
    layout: FeatureLayout,
    band_pass: BandPass,
    stft: Stft,
    mel: MelFilterbank,
    dct: Vec<Vec<f64>>,
}

impl Extractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        if config.n_mfcc > config.n_mels || config.n_mels % SUB_BAND_GROUPS != 0 && config.sub_bands {
            return Err(Error::Config("n_mfcc must not exceed n_mels (and n_mels must split into 4 groups)".into()));
        }
        let sr = config.sample_rate as f64;
        let band_pass = BandPass::butterworth(config.filter_order, config.band_low, config.band_high, sr)?;
        let stft = Stft::new(config.n_fft, config.hop)?;
        let mel = MelFilterbank::new(config.n_mels, config.n_fft, sr)?;
        let dct = spectral::dct_matrix(config.n_mfcc, config.n_mels);
        let layout = FeatureLayout::for_config(&config);
        Ok(Self {
            config,
            layout,
            band_pass,
            stft,
            mel,
            dct,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn fingerprint(&self) -> &str {
        &self.layout.fingerprint
    }

    /// Resample, band-pass (forward-backward) and peak-normalize.
    pub fn preprocess(&self, raw: &AudioSignal) -> Result<AudioSignal> {
        if raw.samples.is_empty() {
            return Err(Error::Ingestion("empty audio signal".into()));
        }
        let target = self.config.sample_rate;
        let samples = if raw.sample_rate == target as f64 {
            raw.samples.clone()
        } else if raw.sample_rate.fract() == 0.0 {
            resample::resample_rational(&raw.samples, raw.sample_rate as u32, target)?
        } else {
            resample::resample_by_ratio(&raw.samples, target as f64 / raw.sample_rate)?
        };
        let mut y = self.band_pass.filtfilt(&samples);
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            for v in &mut y {
                *v /= peak;
            }
        }
        AudioSignal::new(y, target as f64)
    }

    /// Features of an already preprocessed signal.
    pub fn extract(&self, sig: &AudioSignal) -> Result<FeatureVector> {
        if sig.sample_rate != self.config.sample_rate as f64 {
            return Err(Error::invalid("extract expects a preprocessed signal"));
        }
        if sig.samples.is_empty() {
            return Err(Error::Ingestion("empty audio signal".into()));
        }
        let spec = self.stft.power(&sig.samples, sig.sample_rate);
        let mel = self.mel.apply(&spec);
        let mfcc = spectral::mfcc(&mel, &self.dct);
        let d1: Vec<Vec<f64>> = mfcc.iter().map(|r| spectral::delta(r, self.config.delta_width)).collect();
        let d2: Vec<Vec<f64>> = d1.iter().map(|r| spectral::delta(r, self.config.delta_width)).collect();
        let chroma_a = spectral::chroma_stft(&spec);
        let chroma_b = spectral::chroma_logfreq(&spec, self.config.chroma_octaves);
        let (centroid, bandwidth) = spectral::centroid_bandwidth(&spec);
        let env = spectral::onset_envelope(&mel);
        let onsets = spectral::pick_onsets(&env);

        let mut values = Vec::with_capacity(self.layout.dim());
        let mut push = |series: &[f64]| -> Result<()> {
            values.extend_from_slice(&aggregate(series)?);
            Ok(())
        };
        for row in mel.iter().chain(&mfcc).chain(&d1).chain(&d2).chain(&chroma_a).chain(&chroma_b) {
            push(row)?;
        }
        push(&centroid)?;
        push(&bandwidth)?;
        push(&env)?;
        if self.config.sub_bands {
            let per = self.config.n_mels / SUB_BAND_GROUPS;
            for g in 0..SUB_BAND_GROUPS {
                let group: Vec<f64> = (0..spec.frames())
                    .map(|t| mel[g * per..(g + 1) * per].iter().map(|b| b[t]).sum::<f64>() / per as f64)
                    .collect();
                push(&group)?;
            }
        }
        values.push(onsets.len() as f64);
        values.push(onsets.len() as f64 / sig.duration());
        for v in &mut values {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
        if values.len() != self.layout.dim() {
            return Err(Error::Shape {
                context: "feature layout",
                expected: self.layout.dim(),
                got: values.len(),
            });
        }
        Ok(FeatureVector {
            values,
            fingerprint: self.layout.fingerprint.clone(),
            short_input: spec.padded,
        })
    }

    /// Extraction against an externally held layout; rejects mismatches.
    pub fn extract_with_layout(&self, sig: &AudioSignal, layout: &FeatureLayout) -> Result<FeatureVector> {
        if layout.fingerprint != self.layout.fingerprint {
            return Err(Error::Fingerprint {
                expected: layout.fingerprint.clone(),
                found: self.layout.fingerprint.clone(),
            });
        }
        self.extract(sig)
    }

    /// Preprocess then extract.
    pub fn extract_raw(&self, raw: &AudioSignal) -> Result<FeatureVector> {
        self.extract(&self.preprocess(raw)?)
    }

    pub fn extract_file(&self, path: &Path) -> Result<FeatureVector> {
        self.extract_raw(&wav::read_wav(path)?)
    }
}
