//! Windowed-sinc resampling: a polyphase path for rational rate changes
//! and a direct path for arbitrary ratios (used by pitch shifting).

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Zero crossings of the kernel on each side, measured at the lower rate.
const ZERO_CROSSINGS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(u: f64) -> f64 {
    // u in [-1, 1]
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let v = (u + 1.0) / 2.0;
    0.42 - 0.5 * (2.0 * PI * v).cos() + 0.08 * (4.0 * PI * v).cos()
}

/// Low-pass interpolation kernel in input-sample time; `cutoff` is relative
/// to the input Nyquist frequency.
struct Kernel {
    cutoff: f64,
    half_width: f64,
}

impl Kernel {
    fn new(ratio: f64) -> Self {
        let cutoff = ratio.min(1.0);
        Self {
            cutoff,
            half_width: ZERO_CROSSINGS / cutoff,
        }
    }

    fn taps(&self) -> isize {
        self.half_width.ceil() as isize
    }

    fn at(&self, t: f64) -> f64 {
        self.cutoff * sinc(self.cutoff * t) * blackman(t / self.half_width)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Polyphase resampling from `from_rate` to `to_rate` (both integral Hz).
pub fn resample_rational(x: &[f64], from_rate: u32, to_rate: u32) -> Result<Vec<f64>> {
    if from_rate == 0 || to_rate == 0 {
        return Err(Error::invalid("sample rates must be positive"));
    }
    if from_rate == to_rate || x.is_empty() {
        return Ok(x.to_vec());
    }
    let g = gcd(from_rate as u64, to_rate as u64);
    let up = (to_rate as u64 / g) as usize;
    let down = (from_rate as u64 / g) as usize;
    let kernel = Kernel::new(up as f64 / down as f64);
    let w = kernel.taps();
    // One filter per output phase: taps for n = n0 - w + 1 ..= n0 + w.
    let table: Vec<Vec<f64>> = (0..up)
        .map(|phase| {
            let frac = phase as f64 / up as f64;
            (-w + 1..=w).map(|j| kernel.at(frac - j as f64)).collect()
        })
        .collect();
    let out_len = (x.len() * up).div_ceil(down);
    let n = x.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let num = m * down;
        let n0 = (num / up) as isize;
        let taps = &table[num % up];
        let mut acc = 0.0;
        for (t, j) in taps.iter().zip(-w + 1..=w) {
            let idx = n0 + j;
            if idx >= 0 && idx < n {
                acc += t * x[idx as usize];
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Resample by an arbitrary positive `ratio` (output rate / input rate).
pub fn resample_by_ratio(x: &[f64], ratio: f64) -> Result<Vec<f64>> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::invalid(format!("resampling ratio {ratio} must be positive")));
    }
    let kernel = Kernel::new(ratio);
    let w = kernel.taps();
    let out_len = (x.len() as f64 * ratio).round() as usize;
    let n = x.len() as isize;
    Ok((0..out_len)
        .map(|m| {
            let tau = m as f64 / ratio;
            let n0 = tau.floor() as isize;
            let mut acc = 0.0;
            for idx in (n0 - w + 1).max(0)..=(n0 + w).min(n - 1) {
                acc += kernel.at(tau - idx as f64) * x[idx as usize];
            }
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn identity_rate_is_copy() {
        let x = tone(300.0, 22050.0, 100);
        assert_eq!(resample_rational(&x, 22050, 22050).unwrap(), x);
    }

    #[test]
    fn downsampling_keeps_passband_tone() {
        let x = tone(440.0, 44100.0, 44100);
        let y = resample_rational(&x, 44100, 22050).unwrap();
        assert_eq!(y.len(), 22050);
        let reference = tone(440.0, 22050.0, 22050);
        // Compare away from the edges.
        let err: f64 = y[200..21800]
            .iter()
            .zip(&reference[200..21800])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn downsampling_rejects_above_new_nyquist() {
        let x = tone(15000.0, 44100.0, 44100);
        let y = resample_rational(&x, 44100, 22050).unwrap();
        assert!(rms(&y[200..21800]) < 0.01 * rms(&x));
    }

    #[test]
    fn upsampling_odd_ratio() {
        let x = tone(200.0, 4000.0, 4000);
        let y = resample_rational(&x, 4000, 22050).unwrap();
        assert_eq!(y.len(), 22050);
        let reference = tone(200.0, 22050.0, 22050);
        let err: f64 = y[1000..21000]
            .iter()
            .zip(&reference[1000..21000])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn ratio_path_agrees_with_polyphase() {
        let x = tone(500.0, 22050.0, 5000);
        let a = resample_rational(&x, 22050, 44100).unwrap();
        let b = resample_by_ratio(&x, 2.0).unwrap();
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!(resample_by_ratio(&x, 0.0).is_err());
    }
}
