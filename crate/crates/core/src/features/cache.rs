//! Binary columnar feature-matrix cache.
//!
//! Layout (little endian): magic `KAFC`, `u32` version, `u32` fingerprint
//! length + UTF-8 fingerprint, `u64` rows, `u64` cols, then the matrix
//! column by column as `f64`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"KAFC";
const VERSION: u32 = 1;

/// Environment variable overriding the cache location.
pub const CACHE_ENV: &str = "KAN_AUSCULTA_CACHE";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub fingerprint: String,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let cols = self.cols();
        if self.rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged feature matrix"));
        }
        let mut buf = Vec::with_capacity(32 + self.fingerprint.len() + 8 * cols * self.rows.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.fingerprint.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.fingerprint.as_bytes());
        buf.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(cols as u64).to_le_bytes());
        for c in 0..cols {
            for r in &self.rows {
                buf.extend_from_slice(&r[c].to_le_bytes());
            }
        }
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&buf)?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    /// Loads a cache, failing with a fingerprint error if it was produced
    /// under a different feature layout.
    pub fn load(path: &Path, expected_fingerprint: &str) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = || Error::Ingestion(format!("{} is not a feature cache", path.display()));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(bad)?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad());
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Ingestion(format!("unsupported cache version {version}")));
        }
        let flen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let fingerprint = String::from_utf8(take(flen)?.to_vec()).map_err(|_| bad())?;
        if fingerprint != expected_fingerprint {
            return Err(Error::Fingerprint {
                expected: expected_fingerprint.to_string(),
                found: fingerprint,
            });
        }
        let rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut m = vec![vec![0.0; cols]; rows];
        for c in 0..cols {
            for row in m.iter_mut() {
                row[c] = f64::from_le_bytes(take(8)?.try_into().unwrap());
            }
        }
        Ok(Self { fingerprint, rows: m })
    }
}

/// Cache path: `$KAN_AUSCULTA_CACHE` if set, else `default`.
pub fn cache_path(default: &Path) -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| default.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_fingerprint_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let m = FeatureMatrix {
            fingerprint: "abc".into(),
            rows: vec![vec![1.0, -0.0, f64::MIN_POSITIVE], vec![3.5, 1e300, -2.0]],
        };
        m.save(&path).unwrap();
        assert_eq!(FeatureMatrix::load(&path, "abc").unwrap(), m);
        assert!(matches!(FeatureMatrix::load(&path, "xyz"), Err(Error::Fingerprint { .. })));
        std::fs::write(&path, b"KAFCjunk").unwrap();
        assert!(matches!(FeatureMatrix::load(&path, "abc"), Err(Error::Ingestion(_))));
    }
}
