//! Kolmogorov–Arnold layers: every edge `j -> i` carries its own spline
//! `phi_ij(x) = sum_k c_ijk B_k(x)` and each output node sums its incoming
//! edges. There is no node bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::params::{GradSet, Parameterized};
use crate::splines::KnotVector;

/// A single edge function, borrowed out of a layer's coefficient tensor.
#[derive(Debug, Clone, Copy)]
pub struct EdgeFunction<'a> {
    pub coefficients: &'a [f64],
    pub grid: &'a KnotVector,
}

impl EdgeFunction<'_> {
    pub fn eval(&self, x: f64) -> Result<f64> {
        let b = self.grid.basis(x)?;
        Ok(dot(self.coefficients, &b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayer {
    n_in: usize,
    n_out: usize,
    grid: KnotVector,
    /// Row-major `[n_out][n_in][num_basis]`.
    coeffs: Vec<f64>,
    /// Optional residual branch `w_ij * silu(x_j)`, row-major `[n_out][n_in]`.
    #[serde(default)]
    base_weights: Option<Vec<f64>>,
    /// Index of this layer inside its network, used for tensor names.
    #[serde(default)]
    index: usize,
}

/// Basis values (and derivatives) per input, retained for the backward pass.
#[derive(Debug, Clone)]
pub struct KanCache {
    basis: Vec<f64>,
    dbasis: Vec<f64>,
    input: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KanLayerGrads {
    pub coeffs: Vec<f64>,
    pub base_weights: Option<Vec<f64>>,
    pub input: Vec<f64>,
}

impl KanLayer {
    /// Coefficients drawn i.i.d. uniform on `[-scale, scale]`.
    pub fn init<R: Rng + ?Sized>(
        n_in: usize,
        n_out: usize,
        grid: KnotVector,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::invalid("KAN layer dimensions must be positive"));
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::invalid(format!("bad init scale {scale}")));
        }
        let len = n_in * n_out * grid.num_basis();
        let coeffs = (0..len)
            .map(|_| {
                if scale == 0.0 {
                    0.0
                } else {
                    rng.gen_range(-scale..=scale)
                }
            })
            .collect();
        Ok(Self {
            n_in,
            n_out,
            grid,
            coeffs,
            base_weights: None,
            index: 0,
        })
    }

    /// Enables the residual `silu` branch with weights uniform on `[-scale, scale]`.
    pub fn with_base_branch<R: Rng + ?Sized>(mut self, scale: f64, rng: &mut R) -> Self {
        let w = (0..self.n_in * self.n_out)
            .map(|_| if scale == 0.0 { 0.0 } else { rng.gen_range(-scale..=scale) })
            .collect();
        self.base_weights = Some(w);
        self
    }

    pub fn base_weights(&self) -> Option<&[f64]> {
        self.base_weights.as_deref()
    }

    pub fn default_scale(n_in: usize) -> f64 {
        0.1 / (n_in as f64).sqrt()
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn grid(&self) -> &KnotVector {
        &self.grid
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn edge(&self, out_index: usize, in_index: usize) -> EdgeFunction<'_> {
        let nb = self.grid.num_basis();
        let start = (out_index * self.n_in + in_index) * nb;
        EdgeFunction {
            coefficients: &self.coeffs[start..start + nb],
            grid: &self.grid,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, KanCache)> {
        check_len("kan forward input", self.n_in, x.len())?;
        let nb = self.grid.num_basis();
        let mut basis = vec![0.0; self.n_in * nb];
        let mut dbasis = vec![0.0; self.n_in * nb];
        for (j, &xj) in x.iter().enumerate() {
            self.grid.basis_into(
                xj,
                &mut basis[j * nb..(j + 1) * nb],
                Some(&mut dbasis[j * nb..(j + 1) * nb]),
            )?;
        }
        let row = self.n_in * nb;
        let mut y: Vec<f64> = (0..self.n_out)
            .map(|i| dot(&self.coeffs[i * row..(i + 1) * row], &basis))
            .collect();
        if let Some(w) = &self.base_weights {
            let act: Vec<f64> = x.iter().map(|&v| silu(v)).collect();
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += dot(&w[i * self.n_in..(i + 1) * self.n_in], &act);
            }
        }
        Ok((
            y,
            KanCache {
                basis,
                dbasis,
                input: x.to_vec(),
            },
        ))
    }

    pub fn backward(&self, cache: &KanCache, upstream: &[f64]) -> Result<KanLayerGrads> {
        check_len("kan backward upstream", self.n_out, upstream.len())?;
        check_len("kan backward cache", self.n_in, cache.input.len())?;
        let nb = self.grid.num_basis();
        let row = self.n_in * nb;
        let mut coeffs = vec![0.0; self.coeffs.len()];
        let mut input = vec![0.0; self.n_in];
        let base_weights = self.base_weights.as_ref().map(|w| {
            let mut gw = vec![0.0; w.len()];
            for (i, &u) in upstream.iter().enumerate() {
                for (j, &xj) in cache.input.iter().enumerate() {
                    gw[i * self.n_in + j] = u * silu(xj);
                    input[j] += u * w[i * self.n_in + j] * silu_grad(xj);
                }
            }
            gw
        });
        for (i, &u) in upstream.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            let c = &self.coeffs[i * row..(i + 1) * row];
            let g = &mut coeffs[i * row..(i + 1) * row];
            for (gk, bk) in g.iter_mut().zip(&cache.basis) {
                *gk = u * bk;
            }
            for (j, gx) in input.iter_mut().enumerate() {
                let s = j * nb..(j + 1) * nb;
                *gx += u * dot(&c[s.clone()], &cache.dbasis[s]);
            }
        }
        Ok(KanLayerGrads {
            coeffs,
            base_weights,
            input,
        })
    }

    fn tensor_name(&self) -> String {
        format!("kan.{}.coeffs", self.index)
    }

    fn base_tensor_name(&self) -> String {
        format!("kan.{}.base", self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanNetwork {
    layers: Vec<KanLayer>,
}

impl KanNetwork {
    /// Chains layers of the given widths, e.g. `[128, 32, 6]`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], grid: &KnotVector, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("a KAN network needs at least two widths"));
        }
        let layers = widths
            .windows(2)
            .map(|w| KanLayer::init(w[0], w[1], grid.clone(), KanLayer::default_scale(w[0]), rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn from_layers(mut layers: Vec<KanLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("empty KAN network"));
        }
        for pair in layers.windows(2) {
            check_len("kan layer chaining", pair[0].n_out, pair[1].n_in)?;
        }
        for (i, l) in layers.iter_mut().enumerate() {
            l.index = i;
        }
        Ok(Self { layers })
    }

    /// Turns on the residual `silu` branch in every layer.
    pub fn enable_base_branch<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            let scale = KanLayer::default_scale(layer.n_in);
            let w = (0..layer.n_in * layer.n_out)
                .map(|_| rng.gen_range(-scale..=scale))
                .collect();
            layer.base_weights = Some(w);
        }
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [KanLayer] {
        &mut self.layers
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<KanCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let (y, c) = layer.forward(&h)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    /// Returns parameter gradients (in `tensors()` order) and the input gradient.
    pub fn backward(&self, caches: &[KanCache], upstream: &[f64]) -> Result<(GradSet, Vec<f64>)> {
        check_len("kan network caches", self.layers.len(), caches.len())?;
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut up = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let g = layer.backward(&caches[l], &up)?;
            up = g.input.clone();
            per_layer.push(g);
        }
        per_layer.reverse();
        let mut tensors = Vec::new();
        for (layer, g) in self.layers.iter().zip(per_layer) {
            tensors.push((layer.tensor_name(), g.coeffs));
            if let Some(b) = g.base_weights {
                tensors.push((layer.base_tensor_name(), b));
            }
        }
        Ok((GradSet { tensors }, up))
    }

    pub fn export_splines(&self, samples_per_curve: usize) -> Result<SplineDump> {
        if samples_per_curve < 2 {
            return Err(Error::invalid("samples_per_curve must be at least 2"));
        }
        let mut curves = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let (lo, hi) = layer.grid.domain();
            let xs: Vec<f64> = (0..samples_per_curve)
                .map(|s| {
                    if s + 1 == samples_per_curve {
                        hi
                    } else {
                        lo + (hi - lo) * s as f64 / (samples_per_curve - 1) as f64
                    }
                })
                .collect();
            let bases = xs
                .iter()
                .map(|&x| layer.grid.basis(x))
                .collect::<Result<Vec<_>>>()?;
            for i in 0..layer.n_out {
                for j in 0..layer.n_in {
                    let edge = layer.edge(i, j);
                    let w = layer.base_weights.as_ref().map_or(0.0, |w| w[i * layer.n_in + j]);
                    let points = xs
                        .iter()
                        .zip(&bases)
                        .map(|(&x, b)| (x, dot(edge.coefficients, b) + w * silu(x)))
                        .collect();
                    curves.push(SplineCurve {
                        layer: li,
                        out_index: i,
                        in_index: j,
                        points,
                    });
                }
            }
        }
        Ok(SplineDump { curves })
    }
}

impl Parameterized for KanNetwork {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((l.tensor_name(), l.coeffs.as_slice()));
            if let Some(b) = &l.base_weights {
                out.push((l.base_tensor_name(), b.as_slice()));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            let (coeff_name, base_name) = (l.tensor_name(), l.base_tensor_name());
            out.push((coeff_name, l.coeffs.as_mut_slice()));
            if let Some(b) = &mut l.base_weights {
                out.push((base_name, b.as_mut_slice()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineCurve {
    pub layer: usize,
    pub out_index: usize,
    pub in_index: usize,
    pub points: Vec<(f64, f64)>,
}

/// Sampled polylines of every learned edge function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineDump {
    pub curves: Vec<SplineCurve>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
