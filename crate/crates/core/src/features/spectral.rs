//! Frame-level streams: power spectrogram, mel bands, MFCCs with deltas,
//! two chroma variants, spectral centroid/bandwidth and onset strength.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Non-centered STFT power spectrogram, `power[t][k]` for `k <= n_fft / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub power: Vec<Vec<f64>>,
    pub n_fft: usize,
    pub sample_rate: f64,
    /// Signal was shorter than one frame and was zero-padded.
    pub padded: bool,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.power.len()
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.n_fft as f64
    }
}

pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    /// Periodic Hann window of length `n_fft`.
    pub fn new(n_fft: usize, hop: usize) -> Result<Self> {
        if n_fft < 2 || hop == 0 {
            return Err(Error::invalid("STFT needs n_fft >= 2 and hop >= 1"));
        }
        let window = (0..n_fft)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / n_fft as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self { n_fft, hop, window, fft })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    fn frame_spectrum(&self, frame: &[f64], buf: &mut [Complex64]) {
        for (b, (x, w)) in buf.iter_mut().zip(frame.iter().chain(std::iter::repeat(&0.0)).zip(&self.window)) {
            *b = Complex64::new(x * w, 0.0);
        }
        self.fft.process(buf);
    }

    pub fn power(&self, x: &[f64], sample_rate: f64) -> Spectrogram {
        let bins = self.n_fft / 2 + 1;
        let padded = x.len() < self.n_fft;
        let frames = if padded { 1 } else { 1 + (x.len() - self.n_fft) / self.hop };
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let power = (0..frames)
            .map(|t| {
                let start = t * self.hop;
                let end = (start + self.n_fft).min(x.len());
                self.frame_spectrum(&x[start..end], &mut buf);
                buf[..bins].iter().map(|c| c.norm_sqr()).collect()
            })
            .collect();
        Spectrogram {
            power,
            n_fft: self.n_fft,
            sample_rate,
            padded,
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale over `[0, sr / 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// Per band: first bin index and its weights.
    bands: Vec<(usize, Vec<f64>)>,
    centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: f64) -> Result<Self> {
        if n_mels == 0 {
            return Err(Error::invalid("mel filterbank needs at least one band"));
        }
        let top = hz_to_mel(sample_rate / 2.0);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bins = n_fft / 2 + 1;
        let freq = |k: usize| k as f64 * sample_rate / n_fft as f64;
        let bands = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..bins)
                    .filter_map(|k| {
                        let f = freq(k);
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(start, _)) => {
                        let mut dense = vec![0.0; weights.last().unwrap().0 - start + 1];
                        for (k, w) in weights {
                            dense[k - start] = w;
                        }
                        (start, dense)
                    }
                    None => (0, Vec::new()),
                }
            })
            .collect();
        Ok(Self {
            bands,
            centers: edges[1..=n_mels].to_vec(),
        })
    }

    pub fn n_mels(&self) -> usize {
        self.bands.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// `[n_mels][T]` band energies.
    pub fn apply(&self, spec: &Spectrogram) -> Vec<Vec<f64>> {
        self.bands
            .iter()
            .map(|(start, w)| {
                spec.power
                    .iter()
                    .map(|frame| w.iter().zip(&frame[*start..]).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect()
    }
}

/// Offset added before the logarithm of mel energies.
pub const LOG_FLOOR: f64 = 1e-10;

/// Orthonormal DCT-II, first `n_coeffs` rows of the `n x n` matrix.
pub fn dct_matrix(n_coeffs: usize, n: usize) -> Vec<Vec<f64>> {
    (0..n_coeffs)
        .map(|k| {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n)
                .map(|i| s * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .collect()
        })
        .collect()
}

/// Cepstral coefficients `[n_coeffs][T]` of the log-mel energies. The log is
/// taken relative to `LOG_FLOOR` so silence maps to zero.
pub fn mfcc(mel: &[Vec<f64>], dct: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let frames = mel.first().map_or(0, Vec::len);
    let log_mel: Vec<Vec<f64>> = mel
        .iter()
        .map(|band| band.iter().map(|&e| ((e.max(0.0) + LOG_FLOOR) / LOG_FLOOR).ln()).collect())
        .collect();
    dct.iter()
        .map(|row| {
            (0..frames)
                .map(|t| row.iter().zip(&log_mel).map(|(c, band)| c * band[t]).sum())
                .collect()
        })
        .collect()
}

/// Regression-window time derivative with edge replication.
pub fn delta(series: &[f64], width: usize) -> Vec<f64> {
    let n = series.len() as isize;
    if n == 0 || width == 0 {
        return vec![0.0; series.len()];
    }
    let denom: f64 = 2.0 * (1..=width).map(|k| (k * k) as f64).sum::<f64>();
    let at = |i: isize| series[i.clamp(0, n - 1) as usize];
    (0..n)
        .map(|t| {
            (1..=width as isize)
                .map(|k| k as f64 * (at(t + k) - at(t - k)))
                .sum::<f64>()
                / denom
        })
        .collect()
}

/// Pitch class (C = 0, ..., B = 11) of a frequency, by nearest equal-tempered note.
pub fn pitch_class(freq: f64) -> usize {
    let semis = (12.0 * (freq / 440.0).log2()).round() as i64 + 9;
    semis.rem_euclid(12) as usize
}

fn normalize_frames(chroma: &mut [Vec<f64>]) {
    let frames = chroma.first().map_or(0, Vec::len);
    for t in 0..frames {
        let max = chroma.iter().map(|c| c[t]).fold(0.0, f64::max);
        for c in chroma.iter_mut() {
            c[t] = if max > 0.0 { c[t] / max } else { 0.0 };
        }
    }
}

/// Lowest frequency folded into chroma (A0).
pub const CHROMA_MIN_HZ: f64 = 27.5;

/// STFT-energy chroma `[12][T]`, per-frame max-normalized.
pub fn chroma_stft(spec: &Spectrogram) -> Vec<Vec<f64>> {
    let classes: Vec<Option<usize>> = (0..spec.bins())
        .map(|k| {
            let f = spec.bin_frequency(k);
            (f >= CHROMA_MIN_HZ).then(|| pitch_class(f))
        })
        .collect();
    let mut chroma = vec![vec![0.0; spec.frames()]; 12];
    for (t, frame) in spec.power.iter().enumerate() {
        for (p, c) in frame.iter().zip(&classes) {
            if let Some(c) = c {
                chroma[*c][t] += p;
            }
        }
    }
    normalize_frames(&mut chroma);
    chroma
}

/// C1, the lowest bin of the log-frequency spectrogram.
pub const LOGF_MIN_HZ: f64 = 32.703_195_662_574_83;

/// Chroma from a 12-bins-per-octave log-frequency spectrogram starting at
/// C1: each linear bin's energy is split between its two neighbouring
/// semitone bins, then semitone bins are folded by octave.
pub fn chroma_logfreq(spec: &Spectrogram, octaves: usize) -> Vec<Vec<f64>> {
    let n_log = 12 * octaves;
    let mut log_spec = vec![vec![0.0; spec.frames()]; n_log];
    for k in 1..spec.bins() {
        let f = spec.bin_frequency(k);
        let q = 12.0 * (f / LOGF_MIN_HZ).log2();
        if q < -1.0 || q >= n_log as f64 {
            continue;
        }
        let lo = q.floor();
        let frac = q - lo;
        for (b, w) in [(lo as isize, 1.0 - frac), (lo as isize + 1, frac)] {
            if b >= 0 && (b as usize) < n_log && w > 0.0 {
                for (t, frame) in spec.power.iter().enumerate() {
                    log_spec[b as usize][t] += w * frame[k];
                }
            }
        }
    }
    let mut chroma = vec![vec![0.0; spec.frames()]; 12];
    for (b, row) in log_spec.iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            chroma[b % 12][t] += v;
        }
    }
    normalize_frames(&mut chroma);
    chroma
}

/// Magnitude-weighted centroid and spread (Hz) per frame; silent frames give 0.
pub fn centroid_bandwidth(spec: &Spectrogram) -> (Vec<f64>, Vec<f64>) {
    let freqs: Vec<f64> = (0..spec.bins()).map(|k| spec.bin_frequency(k)).collect();
    spec.power
        .iter()
        .map(|frame| {
            let mags: Vec<f64> = frame.iter().map(|p| p.sqrt()).collect();
            let total: f64 = mags.iter().sum();
            if total <= 0.0 {
                return (0.0, 0.0);
            }
            let c = mags.iter().zip(&freqs).map(|(m, f)| m * f).sum::<f64>() / total;
            let var = mags.iter().zip(&freqs).map(|(m, f)| m * (f - c).powi(2)).sum::<f64>() / total;
            (c, var.sqrt())
        })
        .unzip()
}

/// Dynamic range kept below the loudest mel cell before computing flux.
pub const ONSET_TOP_DB: f64 = 80.0;
/// Half-width of the peak-picking window, in frames.
pub const ONSET_WINDOW: usize = 3;

/// Positive dB flux of the mel spectrogram summed over bands.
pub fn onset_envelope(mel: &[Vec<f64>]) -> Vec<f64> {
    let frames = mel.first().map_or(0, Vec::len);
    let db: Vec<Vec<f64>> = mel
        .iter()
        .map(|band| band.iter().map(|&e| 10.0 * e.max(LOG_FLOOR).log10()).collect())
        .collect();
    let max = db.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = max - ONSET_TOP_DB;
    let mut env = vec![0.0; frames];
    for band in &db {
        for t in 1..frames {
            let d = band[t].max(floor) - band[t - 1].max(floor);
            if d > 0.0 {
                env[t] += d;
            }
        }
    }
    env
}

/// Frames that are the strict maximum of the ±`ONSET_WINDOW` neighbourhood
/// (ties resolved toward the earliest frame) and exceed mean + std.
pub fn pick_onsets(env: &[f64]) -> Vec<usize> {
    let n = env.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = env.iter().sum::<f64>() / n as f64;
    let std = (env.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let threshold = mean + std;
    (0..n)
        .filter(|&t| {
            let v = env[t];
            if v <= threshold {
                return false;
            }
            let lo = t.saturating_sub(ONSET_WINDOW);
            let hi = (t + ONSET_WINDOW).min(n - 1);
            env[lo..t].iter().all(|&u| u < v) && env[t + 1..=hi].iter().all(|&u| u <= v)
        })
        .collect()
}
