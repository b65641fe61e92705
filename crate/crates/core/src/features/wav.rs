//! PCM WAV decoding to mono `f64` samples.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioSignal;
use crate::error::{Error, Result};

fn ingest_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Ingestion(format!("{}: {e}", path.display()))
}

/// Reads 8/16/24/32-bit integer or 32-bit float PCM; channels are averaged.
pub fn read_wav(path: &Path) -> Result<AudioSignal> {
    let mut reader = WavReader::open(path).map_err(|e| ingest_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| ingest_err(path, e))?,
        SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| ingest_err(path, e))?
        }
    };
    let samples: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if samples.is_empty() {
        return Err(ingest_err(path, "no audio samples"));
    }
    AudioSignal::new(samples, spec.sample_rate as f64).map_err(|e| ingest_err(path, e))
}

/// 16-bit mono writer, used by tests and the synthetic corpus generator.
pub fn write_wav_i16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| ingest_err(path, e))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        w.write_sample(v).map_err(|e| ingest_err(path, e))?;
    }
    w.finalize().map_err(|e| ingest_err(path, e))
}
