//! Focal loss, AdamW, plateau learning-rate scheduling, early stopping and
//! the finite-difference gradient checker.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{softmax, HybridModel};
use crate::params::{GradSet, Parameterized};

const PROB_CLAMP: f64 = 1e-12;

/// Minimum improvement for the scheduler and early stopping to count an epoch as better.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Optional per-class alpha overriding the scalar.
    #[serde(default)]
    pub alpha_per_class: Option<Vec<f64>>,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            gamma: 2.19,
            alpha_per_class: None,
        }
    }
}

impl FocalParams {
    /// Plain cross-entropy: alpha 1, gamma 0.
    pub fn cross_entropy() -> Self {
        Self {
            alpha: 1.0,
            gamma: 0.0,
            alpha_per_class: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_alpha = |a: f64| a > 0.0 && a <= 1.0;
        if !ok_alpha(self.alpha) {
            return Err(Error::invalid(format!("focal alpha {} not in (0, 1]", self.alpha)));
        }
        if let Some(v) = &self.alpha_per_class {
            if !v.iter().all(|&a| ok_alpha(a)) {
                return Err(Error::invalid("per-class focal alpha must lie in (0, 1]"));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("focal gamma {} must be >= 0", self.gamma)));
        }
        Ok(())
    }

    fn alpha_for(&self, target: usize) -> f64 {
        self.alpha_per_class
            .as_ref()
            .and_then(|v| v.get(target).copied())
            .unwrap_or(self.alpha)
    }
}

/// `-alpha (1 - p_t)^gamma ln p_t` and its gradient with respect to the
/// logits that produced `probs` through softmax.
pub fn focal_loss(probs: &[f64], target: usize, fp: &FocalParams) -> Result<(f64, Vec<f64>)> {
    if target >= probs.len() {
        return Err(Error::invalid(format!(
            "target {target} out of range for {} classes",
            probs.len()
        )));
    }
    let alpha = fp.alpha_for(target);
    let gamma = fp.gamma;
    let p = probs[target].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let q = 1.0 - p;
    let log_p = p.ln();
    let loss = -alpha * q.powf(gamma) * log_p;

    // dL/dp_t, then through softmax: dp_t/dz_j = p_t (delta_tj - p_j).
    let dq_gamma = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
    let dl_dp = alpha * (dq_gamma * log_p - q.powf(gamma) / p);
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let delta = if j == target { 1.0 } else { 0.0 };
            dl_dp * p * (delta - pj)
        })
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {lr} must be positive")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    /// One decoupled-weight-decay Adam update.
    pub fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P, grads: &GradSet) -> Result<()> {
        for (name, g) in &grads.tensors {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingAbort { param: name.clone() });
            }
        }
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.tensors.len() {
            return Err(Error::ContractViolation(format!(
                "{} parameter tensors but {} gradients",
                tensors.len(),
                grads.tensors.len()
            )));
        }
        if self.first.is_empty() {
            self.first = tensors.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, ((name, theta), (gname, g))) in tensors.iter_mut().zip(&grads.tensors).enumerate() {
            if name != gname || theta.len() != g.len() || self.first[k].len() != g.len() {
                return Err(Error::ContractViolation(format!(
                    "optimizer layout mismatch at `{name}` / `{gname}`"
                )));
            }
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps) + self.lr * self.weight_decay * theta[i];
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau for a higher-is-better metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub best: Option<f64>,
    pub stale: usize,
}

impl SchedulerState {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::invalid(format!("scheduler factor {factor} not in (0, 1)")));
        }
        Ok(Self {
            lr,
            factor,
            patience,
            min_lr,
            best: None,
            stale: 0,
        })
    }

    /// Feeds one epoch's metric; returns the (possibly reduced) learning rate.
    pub fn step(&mut self, metric: f64) -> f64 {
        match self.best {
            Some(b) if metric <= b + IMPROVEMENT_THRESHOLD => {
                self.stale += 1;
                if self.stale > self.patience {
                    self.lr = (self.lr * self.factor).max(self.min_lr);
                    self.stale = 0;
                }
            }
            _ => {
                self.best = Some(metric);
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Early stopping on a higher-is-better metric, keeping a snapshot of the best epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopState<T> {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stale: usize,
    snapshot: Option<T>,
}

impl<T> EarlyStopState<T> {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::invalid("early-stop patience must be at least 1"));
        }
        Ok(Self {
            patience,
            best: None,
            best_epoch: None,
            stale: 0,
            snapshot: None,
        })
    }

    /// `snapshot` is only invoked when the metric improves.
    pub fn observe(&mut self, epoch: usize, metric: f64, snapshot: impl FnOnce() -> T) -> StopDecision {
        let improved = match self.best {
            None => true,
            Some(b) => metric > b + IMPROVEMENT_THRESHOLD,
        };
        if improved {
            self.best = Some(metric);
            self.best_epoch = Some(epoch);
            self.stale = 0;
            self.snapshot = Some(snapshot());
        } else {
            self.stale += 1;
        }
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_snapshot(&self) -> Option<&T> {
        self.snapshot.as_ref()
    }

    pub fn into_best(self) -> Option<T> {
        self.snapshot
    }
}

/// Forward + softmax + focal loss for one sample. Training-mode dropout
/// masks are drawn from a fresh generator seeded with `seed`, so repeated
/// calls see the same mask.
pub fn sample_loss(
    model: &HybridModel,
    x: &[f64],
    target: usize,
    fp: &FocalParams,
    training: bool,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (logits, _) = model.forward(x, training, &mut rng)?;
    let probs = softmax(&logits)?;
    Ok(focal_loss(&probs, target, fp)?.0)
}

/// Analytic gradient of [`sample_loss`].
pub fn sample_gradient(
    model: &HybridModel,
    x: &[f64],
    target: usize,
    fp: &FocalParams,
    training: bool,
    seed: u64,
) -> Result<(f64, GradSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (logits, cache) = model.forward(x, training, &mut rng)?;
    let probs = softmax(&logits)?;
    let (loss, dlogits) = focal_loss(&probs, target, fp)?;
    Ok((loss, model.backward(&cache, &dlogits)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub h: f64,
    pub abs_floor: f64,
    /// Entries checked per tensor; tensors at or below this size are checked exhaustively.
    pub per_tensor: usize,
    pub training: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            abs_floor: 1e-8,
            per_tensor: 64,
            training: false,
            seed: 0,
        }
    }
}

/// Compares analytic end-to-end gradients against central differences.
///
/// Per-entry error is `|a - n| / max(|a|, |n|)`, taken as zero when
/// `|a - n|` is within the absolute floor.
pub fn finite_diff_check(
    model: &HybridModel,
    x: &[f64],
    target: usize,
    fp: &FocalParams,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let (_, analytic) = sample_gradient(model, x, target, fp, opts.training, opts.seed)?;
    let mut probe = model.clone();
    let mut pick = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let sizes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        let indices: Vec<usize> = if len <= opts.per_tensor {
            (0..len).collect()
        } else {
            sample(&mut pick, len, opts.per_tensor).into_vec()
        };
        let (name, grad) = &analytic.tensors[ti];
        for idx in indices {
            let original = probe.tensors()[ti].1[idx];
            probe.tensors_mut()[ti].1[idx] = original + opts.h;
            let up = sample_loss(&probe, x, target, fp, opts.training, opts.seed)?;
            probe.tensors_mut()[ti].1[idx] = original - opts.h;
            let down = sample_loss(&probe, x, target, fp, opts.training, opts.seed)?;
            probe.tensors_mut()[ti].1[idx] = original;
            let numeric = (up - down) / (2.0 * opts.h);
            let a = grad[idx];
            let diff = (a - numeric).abs();
            let err = if diff <= opts.abs_floor {
                0.0
            } else {
                diff / a.abs().max(numeric.abs())
            };
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_tensor = name.clone();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}
