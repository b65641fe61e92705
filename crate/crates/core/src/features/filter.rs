//! Butterworth band-pass design (bilinear transform with prewarping) as
//! second-order sections, and zero-phase forward-backward filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// Direct-form II transposed biquad with `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + self.b[1] * z_inv + self.b[2] * z_inv * z_inv;
        let den = 1.0 + self.a[0] * z_inv + self.a[1] * z_inv * z_inv;
        num / den
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    pub sections: Vec<Biquad>,
}

impl BandPass {
    /// Order-`order` Butterworth prototype mapped to the band `[low, high]` Hz
    /// (the resulting digital filter has `2 * order` poles).
    pub fn butterworth(order: usize, low: f64, high: f64, sample_rate: f64) -> Result<Self> {
        if order == 0 || order % 2 != 0 {
            return Err(Error::invalid("band-pass prototype order must be even and positive"));
        }
        if !(low > 0.0 && low < high && high < sample_rate / 2.0) {
            return Err(Error::invalid(format!(
                "band [{low}, {high}] Hz invalid for sample rate {sample_rate}"
            )));
        }
        let fs2 = 2.0 * sample_rate;
        let w1 = fs2 * (PI * low / sample_rate).tan();
        let w2 = fs2 * (PI * high / sample_rate).tan();
        let w0_sq = w1 * w2;
        let bw = w2 - w1;
        let bilinear = |s: Complex64| (1.0 + s / fs2) / (1.0 - s / fs2);

        let mut sections = Vec::with_capacity(order);
        for k in 0..order / 2 {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0_sq).sqrt();
            for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
                let z = bilinear(s);
                sections.push(Biquad {
                    b: [1.0, 0.0, -1.0],
                    a: [-2.0 * z.re, z.norm_sqr()],
                });
            }
        }
        let mut bp = Self { sections };
        let center = 2.0 * (w0_sq.sqrt() / fs2).atan();
        let gain = bp.response(center).norm();
        let per = gain.powf(-1.0 / bp.sections.len() as f64);
        for s in &mut bp.sections {
            for b in &mut s.b {
                *b *= per;
            }
        }
        Ok(bp)
    }

    /// Complex response at normalized angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -omega);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    /// Causal filtering with the initial state that a constant input equal
    /// to `x[0]` would have settled into.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let x0 = x.first().copied().unwrap_or(0.0);
        let mut level = x0;
        for s in &self.sections {
            let dc = (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[0] + s.a[1]);
            let out_level = dc * level;
            let mut z2 = s.b[2] * level - s.a[1] * out_level;
            let mut z1 = out_level - s.b[0] * level;
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b[0] * xin + z1;
                z1 = s.b[1] * xin - s.a[0] * out + z2;
                z2 = s.b[2] * xin - s.a[1] * out;
                *v = out;
            }
            level = out_level;
        }
        y
    }

    /// Forward-backward (zero-phase) filtering with odd-extension padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(x.len() - 1);
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 22050.0;

    fn tone(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / FS).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// Analog Butterworth band-pass magnitude after prewarping, for comparison.
    fn analog_magnitude(f: f64, order: i32) -> f64 {
        let warp = |hz: f64| 2.0 * FS * (PI * hz / FS).tan();
        let (w1, w2, w) = (warp(100.0), warp(2000.0), warp(f));
        let omega = (w * w - w1 * w2) / (w * (w2 - w1));
        1.0 / (1.0 + omega.powi(2 * order)).sqrt()
    }

    #[test]
    fn response_matches_analog_prototype() {
        let bp = BandPass::butterworth(4, 100.0, 2000.0, FS).unwrap();
        assert_eq!(bp.sections.len(), 4);
        for f in [30.0, 50.0, 100.0, 440.0, 1000.0, 2000.0, 5000.0] {
            let digital = bp.response(2.0 * PI * f / FS).norm();
            let analog = analog_magnitude(f, 4);
            assert!((digital - analog).abs() < 1e-9, "{f} Hz: {digital} vs {analog}");
        }
        let edge = bp.response(2.0 * PI * 100.0 / FS).norm();
        assert!((edge - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_band() {
        assert!(BandPass::butterworth(4, 2000.0, 100.0, FS).is_err());
        assert!(BandPass::butterworth(4, 100.0, 20000.0, FS).is_err());
        assert!(BandPass::butterworth(3, 100.0, 2000.0, FS).is_err());
    }

    #[test]
    fn fifty_hz_is_removed() {
        let bp = BandPass::butterworth(4, 100.0, 2000.0, FS).unwrap();
        let x = tone(50.0, 22050 * 2);
        let y = bp.filtfilt(&x);
        assert!(rms(&y) < 0.05 * rms(&x), "ratio {}", rms(&y) / rms(&x));
    }

    #[test]
    fn passband_tone_survives() {
        let bp = BandPass::butterworth(4, 100.0, 2000.0, FS).unwrap();
        let x = tone(440.0, 22050 * 2);
        let y = bp.filtfilt(&x);
        assert!(rms(&y) > 0.95 * rms(&x));
    }

    #[test]
    fn constant_input_settles_immediately() {
        let bp = BandPass::butterworth(4, 100.0, 2000.0, FS).unwrap();
        let y = bp.filter(&[0.7; 64]);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(bp.filtfilt(&[0.3]).len(), 1);
    }
}
