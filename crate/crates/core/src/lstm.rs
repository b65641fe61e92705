//! Bidirectional LSTM encoder with inverted dropout on its output.
//!
//! Gate matrices are stored stacked in `i, f, g, o` order: the input
//! weights are `[4H][d_in]`, the recurrent weights `[4H][H]`, biases `[4H]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kan::dot;
use crate::params::{GradSet, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    d_in: usize,
    hidden: usize,
    w_input: Vec<f64>,
    w_recurrent: Vec<f64>,
    bias: Vec<f64>,
}

/// Activations of one time step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, stacked `i, f, g, o`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub w_input: Vec<f64>,
    pub w_recurrent: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LstmWeights {
    /// Uniform `[-1/sqrt(H), 1/sqrt(H)]` matrices, forget bias 1, other biases 0.
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if d_in == 0 || hidden == 0 {
            return Err(Error::invalid("LSTM dimensions must be positive"));
        }
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..=bound)).collect() };
        let w_input = draw(4 * hidden * d_in);
        let w_recurrent = draw(4 * hidden * hidden);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        Ok(Self {
            d_in,
            hidden,
            w_input,
            w_recurrent,
            bias,
        })
    }

    pub fn zeros(d_in: usize, hidden: usize) -> Self {
        Self {
            d_in,
            hidden,
            w_input: vec![0.0; 4 * hidden * d_in],
            w_recurrent: vec![0.0; 4 * hidden * hidden],
            bias: vec![0.0; 4 * hidden],
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn gate_input(&self, gate: Gate) -> &[f64] {
        let r = self.hidden * self.d_in;
        &self.w_input[gate as usize * r..(gate as usize + 1) * r]
    }

    pub fn gate_recurrent(&self, gate: Gate) -> &[f64] {
        let r = self.hidden * self.hidden;
        &self.w_recurrent[gate as usize * r..(gate as usize + 1) * r]
    }

    pub fn gate_bias(&self, gate: Gate) -> &[f64] {
        &self.bias[gate as usize * self.hidden..(gate as usize + 1) * self.hidden]
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn tensor_slices(&self) -> [&[f64]; 3] {
        [&self.w_input, &self.w_recurrent, &self.bias]
    }

    /// One step of the standard LSTM cell.
    pub fn cell_step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, StepCache)> {
        check_len("lstm step input", self.d_in, x.len())?;
        check_len("lstm step h_prev", self.hidden, h_prev.len())?;
        check_len("lstm step c_prev", self.hidden, c_prev.len())?;
        let h = self.hidden;
        let recur = h_prev.iter().any(|&v| v != 0.0);
        let mut gates = self.bias.clone();
        for (r, a) in gates.iter_mut().enumerate() {
            *a += dot(&self.w_input[r * self.d_in..(r + 1) * self.d_in], x);
            if recur {
                *a += dot(&self.w_recurrent[r * h..(r + 1) * h], h_prev);
            }
        }
        for (r, a) in gates.iter_mut().enumerate() {
            *a = if r / h == Gate::Cell as usize {
                a.tanh()
            } else {
                sigmoid(*a)
            };
        }
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut out = vec![0.0; h];
        for u in 0..h {
            let (i, f, g, o) = (gates[u], gates[h + u], gates[2 * h + u], gates[3 * h + u]);
            c[u] = f * c_prev[u] + i * g;
            tanh_c[u] = c[u].tanh();
            out[u] = o * tanh_c[u];
        }
        let cache = StepCache {
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c: c.clone(),
            tanh_c,
        };
        Ok((out, c, cache))
    }

    /// Runs the direction over `steps` (already in processing order) from
    /// zero state and returns the final hidden state.
    fn run(&self, steps: &[&[f64]]) -> Result<(Vec<f64>, Vec<StepCache>)> {
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut caches = Vec::with_capacity(steps.len());
        for x in steps {
            let (h2, c2, cache) = self.cell_step(x, &h, &c)?;
            h = h2;
            c = c2;
            caches.push(cache);
        }
        Ok((h, caches))
    }

    /// Backpropagation through time from a gradient on the final hidden state.
    /// Returns parameter gradients and per-step input gradients in processing order.
    fn backprop(&self, steps: &[&[f64]], caches: &[StepCache], dh_final: &[f64]) -> (LstmGrads, Vec<Vec<f64>>) {
        let h = self.hidden;
        let d = self.d_in;
        let mut grads = LstmGrads {
            w_input: vec![0.0; self.w_input.len()],
            w_recurrent: vec![0.0; self.w_recurrent.len()],
            bias: vec![0.0; self.bias.len()],
        };
        let mut dx_steps = vec![Vec::new(); steps.len()];
        let mut dh = dh_final.to_vec();
        let mut dc = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        for t in (0..steps.len()).rev() {
            let sc = &caches[t];
            let x = steps[t];
            for u in 0..h {
                let (i, f, g, o) = (sc.gates[u], sc.gates[h + u], sc.gates[2 * h + u], sc.gates[3 * h + u]);
                let tc = sc.tanh_c[u];
                da[3 * h + u] = dh[u] * tc * o * (1.0 - o);
                let dcu = dc[u] + dh[u] * o * (1.0 - tc * tc);
                da[u] = dcu * g * i * (1.0 - i);
                da[2 * h + u] = dcu * i * (1.0 - g * g);
                da[h + u] = dcu * sc.c_prev[u] * f * (1.0 - f);
                dc[u] = dcu * f;
            }
            let mut dx = vec![0.0; d];
            let mut dh_prev = vec![0.0; h];
            let recur = sc.h_prev.iter().any(|&v| v != 0.0);
            for (r, &a) in da.iter().enumerate() {
                grads.bias[r] += a;
                if a == 0.0 {
                    continue;
                }
                let wrow = &self.w_input[r * d..(r + 1) * d];
                let grow = &mut grads.w_input[r * d..(r + 1) * d];
                for k in 0..d {
                    grow[k] += a * x[k];
                    dx[k] += a * wrow[k];
                }
                let urow = &self.w_recurrent[r * h..(r + 1) * h];
                if recur {
                    let gu = &mut grads.w_recurrent[r * h..(r + 1) * h];
                    for k in 0..h {
                        gu[k] += a * sc.h_prev[k];
                    }
                }
                for k in 0..h {
                    dh_prev[k] += a * urow[k];
                }
            }
            dx_steps[t] = dx;
            dh = dh_prev;
        }
        (grads, dx_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    forward: LstmWeights,
    backward: LstmWeights,
    dropout_rate: f64,
    /// Bumped on every mutable parameter access so stale caches are detected.
    #[serde(skip)]
    version: u64,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    seq: Vec<Vec<f64>>,
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>,
    /// Already divided by `1 - p`; `None` in eval mode.
    mask: Option<Vec<f64>>,
    version: u64,
}

#[derive(Debug, Clone)]
pub struct BiLstmGrads {
    pub forward: LstmGrads,
    pub backward: LstmGrads,
    pub input: Vec<Vec<f64>>,
}

impl BiLstm {
    pub fn new(forward: LstmWeights, backward: LstmWeights, dropout_rate: f64) -> Result<Self> {
        check_len("bilstm d_in", forward.d_in, backward.d_in)?;
        check_len("bilstm hidden", forward.hidden, backward.hidden)?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid(format!("dropout rate {dropout_rate} not in [0, 1)")));
        }
        Ok(Self {
            forward,
            backward,
            dropout_rate,
            version: 0,
        })
    }

    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, dropout_rate: f64, rng: &mut R) -> Result<Self> {
        let f = LstmWeights::init(d_in, hidden, rng)?;
        let b = LstmWeights::init(d_in, hidden, rng)?;
        Self::new(f, b, dropout_rate)
    }

    pub fn d_in(&self) -> usize {
        self.forward.d_in
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn directions(&self) -> (&LstmWeights, &LstmWeights) {
        (&self.forward, &self.backward)
    }

    pub fn directions_mut(&mut self) -> (&mut LstmWeights, &mut LstmWeights) {
        self.version += 1;
        (&mut self.forward, &mut self.backward)
    }

    /// Encodes a sequence; output is `[h_fwd(t=L), h_bwd(t=1)]`.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        seq: &[Vec<f64>],
        training: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, BiLstmCache)> {
        if seq.is_empty() {
            return Err(Error::invalid("empty input sequence"));
        }
        for x in seq {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite encoder input"));
            }
        }
        let fwd_steps: Vec<&[f64]> = seq.iter().map(Vec::as_slice).collect();
        let bwd_steps: Vec<&[f64]> = seq.iter().rev().map(Vec::as_slice).collect();
        let (hf, fwd) = self.forward.run(&fwd_steps)?;
        let (hb, bwd) = self.backward.run(&bwd_steps)?;
        let mut out = hf;
        out.extend(hb);
        let mask = if training && self.dropout_rate > 0.0 {
            let keep = 1.0 - self.dropout_rate;
            let m: Vec<f64> = (0..out.len())
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            out.iter_mut().zip(&m).for_each(|(o, s)| *o *= s);
            Some(m)
        } else {
            None
        };
        Ok((
            out,
            BiLstmCache {
                seq: seq.to_vec(),
                fwd,
                bwd,
                mask,
                version: self.version,
            },
        ))
    }

    pub fn backward(&self, cache: &BiLstmCache, upstream: &[f64]) -> Result<BiLstmGrads> {
        if cache.version != self.version
            || cache.seq.first().map(Vec::len) != Some(self.d_in())
            || cache.fwd.len() != cache.seq.len()
            || cache.fwd.first().map(|c| c.c.len()) != Some(self.hidden())
        {
            return Err(Error::ContractViolation(
                "encoder cache does not belong to the current parameters".into(),
            ));
        }
        check_len("bilstm backward upstream", self.output_dim(), upstream.len())?;
        let mut up = upstream.to_vec();
        if let Some(m) = &cache.mask {
            up.iter_mut().zip(m).for_each(|(u, s)| *u *= s);
        }
        let h = self.hidden();
        let fwd_steps: Vec<&[f64]> = cache.seq.iter().map(Vec::as_slice).collect();
        let bwd_steps: Vec<&[f64]> = cache.seq.iter().rev().map(Vec::as_slice).collect();
        let (gf, dxf) = self.forward.backprop(&fwd_steps, &cache.fwd, &up[..h]);
        let (gb, dxb) = self.backward.backprop(&bwd_steps, &cache.bwd, &up[h..]);
        let len = cache.seq.len();
        let input = (0..len)
            .map(|t| dxf[t].iter().zip(&dxb[len - 1 - t]).map(|(a, b)| a + b).collect())
            .collect();
        Ok(BiLstmGrads {
            forward: gf,
            backward: gb,
            input,
        })
    }
}

const TENSOR_NAMES: [[&str; 3]; 2] = [
    ["lstm.fwd.w_input", "lstm.fwd.w_recurrent", "lstm.fwd.bias"],
    ["lstm.bwd.w_input", "lstm.bwd.w_recurrent", "lstm.bwd.bias"],
];

impl Parameterized for BiLstm {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(6);
        for (names, w) in TENSOR_NAMES.iter().zip([&self.forward, &self.backward]) {
            for (n, t) in names.iter().zip(w.tensor_slices()) {
                out.push((n.to_string(), t));
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.version += 1;
        let mut out = Vec::with_capacity(6);
        for (names, w) in TENSOR_NAMES.iter().zip([&mut self.forward, &mut self.backward]) {
            let LstmWeights {
                w_input,
                w_recurrent,
                bias,
                ..
            } = w;
            out.push((names[0].to_string(), w_input.as_mut_slice()));
            out.push((names[1].to_string(), w_recurrent.as_mut_slice()));
            out.push((names[2].to_string(), bias.as_mut_slice()));
        }
        out
    }
}

impl BiLstmGrads {
    pub fn into_grad_set(self) -> GradSet {
        let mut tensors = Vec::with_capacity(6);
        for (names, g) in TENSOR_NAMES.iter().zip([self.forward, self.backward]) {
            tensors.push((names[0].to_string(), g.w_input));
            tensors.push((names[1].to_string(), g.w_recurrent));
            tensors.push((names[2].to_string(), g.bias));
        }
        GradSet { tensors }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
