//! The hybrid classifier: feature vector -> BiLSTM (sequence length 1) ->
//! dropout -> KAN hidden layer -> KAN output layer -> logits.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::StandardScaler;
use crate::error::{check_len, Error, Result};
use crate::kan::{KanCache, KanNetwork};
use crate::lstm::{BiLstm, BiLstmCache};
use crate::params::{GradSet, Parameterized};
use crate::splines::KnotVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_feat: usize,
    pub lstm_hidden: usize,
    pub dropout: f64,
    pub kan_hidden: usize,
    pub grid_size: usize,
    pub spline_order: usize,
    pub num_classes: usize,
    pub spline_domain: (f64, f64),
    pub base_branch: bool,
}

impl ModelConfig {
    pub fn with_feature_dim(d_feat: usize) -> Self {
        Self {
            d_feat,
            lstm_hidden: 64,
            dropout: 0.3,
            kan_hidden: 32,
            grid_size: 3,
            spline_order: 3,
            num_classes: crate::NUM_CLASSES,
            spline_domain: (-1.0, 1.0),
            base_branch: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridModel {
    config: ModelConfig,
    encoder: BiLstm,
    kan: KanNetwork,
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    encoder: BiLstmCache,
    kan: Vec<KanCache>,
}

impl HybridModel {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let encoder = BiLstm::init(config.d_feat, config.lstm_hidden, config.dropout, rng)?;
        let grid = KnotVector::uniform(
            config.spline_domain.0,
            config.spline_domain.1,
            config.grid_size,
            config.spline_order,
        )?;
        let mut kan = KanNetwork::init(
            &[encoder.output_dim(), config.kan_hidden, config.num_classes],
            &grid,
            rng,
        )?;
        if config.base_branch {
            kan.enable_base_branch(rng);
        }
        Self::from_parts(config, encoder, kan)
    }

    pub fn from_parts(config: ModelConfig, encoder: BiLstm, kan: KanNetwork) -> Result<Self> {
        check_len("model encoder/kan", encoder.output_dim(), kan.n_in())?;
        check_len("model classes", config.num_classes, kan.n_out())?;
        check_len("model feature dim", config.d_feat, encoder.d_in())?;
        Ok(Self {
            config,
            encoder,
            kan,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &BiLstm {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut BiLstm {
        &mut self.encoder
    }

    pub fn kan(&self) -> &KanNetwork {
        &self.kan
    }

    pub fn kan_mut(&mut self) -> &mut KanNetwork {
        &mut self.kan
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], training: bool, rng: &mut R) -> Result<(Vec<f64>, ModelCache)> {
        check_len("model input", self.config.d_feat, x.len())?;
        let seq = [x.to_vec()];
        let (h, encoder) = self.encoder.encode(&seq, training, rng)?;
        let (logits, kan) = self.kan.forward(&h)?;
        Ok((logits, ModelCache { encoder, kan }))
    }

    /// Gradients of a scalar loss given `dloss/dlogits`, in `tensors()` order.
    pub fn backward(&self, cache: &ModelCache, dlogits: &[f64]) -> Result<GradSet> {
        let (kan_grads, dh) = self.kan.backward(&cache.kan, dlogits)?;
        let enc = self.encoder.backward(&cache.encoder, &dh)?;
        let mut set = enc.into_grad_set();
        set.tensors.extend(kan_grads.tensors);
        Ok(set)
    }

    /// Eval-mode class probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        let (logits, _) = self.forward(x, false, &mut unused)?;
        softmax(&logits)
    }
}

impl Parameterized for HybridModel {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut t = self.encoder.tensors();
        t.extend(self.kan.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.kan.tensors_mut());
        t
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax needs finite, non-empty logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

pub const CHECKPOINT_FORMAT: &str = "kan-ausculta-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model container: parameters, knots, the input scaler and the
/// feature-layout fingerprint the model was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub fingerprint: String,
    pub model: HybridModel,
    pub scaler: Option<StandardScaler>,
}

impl Checkpoint {
    pub fn new(model: HybridModel, scaler: Option<StandardScaler>, fingerprint: impl Into<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            fingerprint: fingerprint.into(),
            model,
            scaler,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::report::write_json_atomic(path, self)
    }

    /// Loads a checkpoint, rejecting it when `expected_fingerprint` is given and differs.
    pub fn load(path: &Path, expected_fingerprint: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Ingestion(format!(
                "{} is not a v{CHECKPOINT_VERSION} checkpoint",
                path.display()
            )));
        }
        if let Some(exp) = expected_fingerprint {
            if exp != ck.fingerprint {
                return Err(Error::Fingerprint {
                    expected: exp.to_string(),
                    found: ck.fingerprint,
                });
            }
        }
        Ok(ck)
    }

    /// Scales raw features with the stored scaler (if any) and returns probabilities.
    pub fn predict_proba(&self, raw: &[f64]) -> Result<Vec<f64>> {
        match &self.scaler {
            Some(s) => self.model.predict_proba(&s.transform(raw)?),
            None => self.model.predict_proba(raw),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(seed: u64) -> HybridModel {
        let cfg = ModelConfig {
            lstm_hidden: 3,
            kan_hidden: 4,
            ..ModelConfig::with_feature_dim(5)
        };
        HybridModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&[0.3; 6]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));
        let p = softmax(&[1.0, 101.0, 1.0]).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-12);
        let a = softmax(&[0.1, -2.0, 3.0]).unwrap();
        let b = softmax(&[1000.1, 998.0, 1003.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(softmax(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn zero_kan_gives_zero_logits() {
        let mut m = small(1);
        for l in m.kan_mut().layers_mut() {
            l.coefficients_mut().fill(0.0);
        }
        let (logits, _) = m
            .forward(&[9.0, -3.0, 0.2, 1.0, 4.0], true, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(logits, vec![0.0; 6]);
    }

    #[test]
    fn eval_forward_is_deterministic_and_on_simplex() {
        let m = small(2);
        let x = [0.1, 0.5, -0.7, 0.0, 2.0];
        let a = m.predict_proba(&x).unwrap();
        let b = m.predict_proba(&x).unwrap();
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|&p| p >= 0.0));
        assert!(matches!(m.predict_proba(&[0.0; 4]), Err(Error::Shape { .. })));
    }

    #[test]
    fn default_architecture_shapes() {
        let m = HybridModel::init(ModelConfig::with_feature_dim(20), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.encoder().output_dim(), 128);
        assert_eq!(m.kan().layers()[0].n_out(), 32);
        assert_eq!(m.kan().n_out(), 6);
        assert_eq!(m.kan().num_parameters(), 25_728);
    }

    #[test]
    fn checkpoint_round_trip_and_fingerprint_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let ck = Checkpoint::new(small(3), None, "abc");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path, Some("abc")).unwrap();
        assert_eq!(back, ck);
        assert!(matches!(
            Checkpoint::load(&path, Some("zzz")),
            Err(Error::Fingerprint { .. })
        ));
    }
}
