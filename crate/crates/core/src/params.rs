//! Named flat parameter tensors shared by the model, its gradients and the
//! optimizer. Every trainable container lists its tensors in a fixed order;
//! a `GradSet` produced by backpropagation uses the same order and names.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Parameterized {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradSet {
    pub tensors: Vec<(String, Vec<f64>)>,
}

impl GradSet {
    pub fn zeros_like<P: Parameterized + ?Sized>(params: &P) -> Self {
        Self {
            tensors: params
                .tensors()
                .into_iter()
                .map(|(name, t)| (name, vec![0.0; t.len()]))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_slice())
    }

    /// `self += scale * other`, requiring identical layout.
    pub fn add_scaled(&mut self, other: &GradSet, scale: f64) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::ContractViolation(
                "gradient sets have different tensor counts".into(),
            ));
        }
        for ((na, a), (nb, b)) in self.tensors.iter_mut().zip(&other.tensors) {
            if na != nb || a.len() != b.len() {
                return Err(Error::ContractViolation(format!(
                    "gradient layout mismatch at `{na}` vs `{nb}`"
                )));
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in &mut self.tensors {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}
