//! Synthetic data: Gaussian class clusters in feature space, and a small
//! labelled WAV corpus for exercising the audio path end to end.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::features::wav::write_wav_i16;
use crate::pipeline::MatrixSource;
use crate::{CLASS_NAMES, NUM_CLASSES};

/// Class sizes following the recording counts of the public corpus,
/// rescaled to 900 samples (Healthy, COPD, Bronchiectasis, Bronchiolitis,
/// Pneumonia, URTI).
pub const SCALED_COUNTS: [usize; NUM_CLASSES] = [34, 778, 16, 13, 36, 23];

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub counts: [usize; NUM_CLASSES],
    pub dim: usize,
    /// Distance of ordinary class centers from the majority center.
    pub separation: f64,
    /// Distance of the two rarest classes from the majority center.
    pub rare_separation: f64,
    pub std: f64,
    /// Feature-space jitter standing in for waveform augmentation.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            counts: SCALED_COUNTS,
            dim: 16,
            separation: 8.0,
            rare_separation: 6.0,
            std: 1.0,
            jitter: 0.1,
            seed: 7,
        }
    }
}

impl ClusterSpec {
    /// Indices of the two classes with the fewest samples.
    pub fn rarest_two(&self) -> [usize; 2] {
        let mut idx: Vec<usize> = (0..NUM_CLASSES).collect();
        idx.sort_by_key(|&c| (self.counts[c], c));
        [idx[0], idx[1]]
    }

    fn majority(&self) -> usize {
        (0..NUM_CLASSES).max_by_key(|&c| (self.counts[c], usize::MAX - c)).unwrap_or(0)
    }

    /// Majority class at the origin; every other class on its own axis.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        let rare = self.rarest_two();
        let majority = self.majority();
        let mut axis = 0;
        (0..NUM_CLASSES)
            .map(|c| {
                let mut v = vec![0.0; self.dim];
                if c != majority {
                    let d = if rare.contains(&c) { self.rare_separation } else { self.separation };
                    v[axis % self.dim] = d;
                    axis += 1;
                }
                v
            })
            .collect()
    }

    /// Rows in shuffled order.
    pub fn generate(&self) -> MatrixSource {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, self.std).expect("positive std");
        let centers = self.centers();
        let mut samples: Vec<(Vec<f64>, usize)> = Vec::new();
        for c in 0..NUM_CLASSES {
            for _ in 0..self.counts[c] {
                let x = centers[c].iter().map(|m| m + normal.sample(&mut rng)).collect();
                samples.push((x, c));
            }
        }
        for i in (1..samples.len()).rev() {
            let j = rng.gen_range(0..=i);
            samples.swap(i, j);
        }
        let (rows, labels) = samples.into_iter().unzip();
        MatrixSource {
            rows,
            labels,
            jitter: self.jitter,
            fingerprint: format!("synthetic-clusters-d{}-s{}", self.dim, self.seed),
        }
    }
}

/// Writes `per_class` short recordings per class (class-specific tone and
/// noise mix) plus a `patient_id<TAB>diagnosis` table. Returns the table path.
pub fn write_audio_corpus(dir: &Path, per_class: usize, seconds: f64, seed: u64) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = 8000u32;
    let n = (seconds * rate as f64) as usize;
    let mut table = String::new();
    for (c, name) in CLASS_NAMES.iter().enumerate() {
        let tone = 150.0 * (c + 1) as f64;
        for k in 0..per_class {
            let patient = 100 + c * 1000 + k;
            let _ = writeln!(table, "{patient}\t{name}");
            let samples: Vec<f64> = (0..n)
                .map(|i| {
                    let t = i as f64 / rate as f64;
                    0.5 * (2.0 * PI * tone * t).sin() + 0.05 * rng.gen_range(-1.0..1.0)
                })
                .collect();
            write_wav_i16(&dir.join(format!("{patient}_1b1_Al_sc_Meditron.wav")), &samples, rate)?;
        }
    }
    let path = dir.join("diagnosis.txt");
    std::fs::write(&path, table)?;
    Ok(path)
}
