//! Encoder-LSTM network that maps observation windows to Pareto parameters.
//!
//! ```text
//! x_t ──dense+softplus──▶ 128 ──▶ 128 ──▶ 32 = λ_t
//! λ_t ──LSTM(32)──▶ LSTM(32) ──▶ h_t          (h_0 = c_0 = 0)
//! h_T ──dense(2)──▶ α = 1 + relu(r0), β = relu(r1)
//! ```
//!
//! Everything runs in `f64`. Gradients are exact BPTT over the whole window;
//! the ReLU derivative at 0 is taken as 0.

mod adam;
pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::ParetoParams;

pub use adam::{ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

/// Dense tensor; rank 1 (bias) or rank 2 (weights, `[out, in]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }
}

/// Layer sizes. [`Architecture::start`] is the production shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub encoder: Vec<usize>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
}

impl Architecture {
    /// d_in → 128 → 128 → 32, two LSTM layers of 32, head of 2.
    pub fn start(input: usize) -> Self {
        Architecture {
            input,
            encoder: vec![128, 128, 32],
            lstm_hidden: 32,
            lstm_layers: 2,
        }
    }

    fn encoder_out(&self) -> usize {
        *self.encoder.last().unwrap_or(&self.input)
    }

    /// Tensor shapes in canonical order.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut fan_in = self.input;
        for &w in &self.encoder {
            shapes.push(vec![w, fan_in]);
            shapes.push(vec![w]);
            fan_in = w;
        }
        let h = self.lstm_hidden;
        for _ in 0..self.lstm_layers {
            shapes.push(vec![4 * h, fan_in]);
            shapes.push(vec![4 * h, h]);
            shapes.push(vec![4 * h]);
            fan_in = h;
        }
        shapes.push(vec![2, h]);
        shapes.push(vec![2]);
        shapes
    }

    fn lstm_base(&self, layer: usize) -> usize {
        2 * self.encoder.len() + 3 * layer
    }

    pub(crate) fn head_base(&self) -> usize {
        2 * self.encoder.len() + 3 * self.lstm_layers
    }
}

/// Per-layer recurrent state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl LstmState {
    pub fn zeros(arch: &Architecture) -> Self {
        LstmState {
            h: vec![vec![0.0; arch.lstm_hidden]; arch.lstm_layers],
            c: vec![vec![0.0; arch.lstm_hidden]; arch.lstm_layers],
        }
    }

    pub fn top(&self) -> &[f64] {
        self.h.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameters plus Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub arch: Architecture,
    pub params: Vec<Tensor>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub step_count: u64,
}

/// Gradients with the same layout as [`NetworkWeights::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(weights: &NetworkWeights) -> Self {
        Gradients {
            tensors: weights.params.iter().map(|t| Tensor::zeros(&t.shape)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, by: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= by);
        }
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// y = W x + b for `W` of shape [out, in].
fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let mut y = b.data.clone();
    matvec_add(w, x, &mut y);
    y
}

/// y += W x
fn matvec_add(w: &Tensor, x: &[f64], y: &mut [f64]) {
    let cols = w.cols();
    debug_assert_eq!(cols, x.len());
    for (row, out) in w.data.chunks_exact(cols).zip(y.iter_mut()) {
        *out += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// out += Wᵀ dy
fn affine_back_input(w: &Tensor, dy: &[f64], out: &mut [f64]) {
    let cols = w.cols();
    for (row, d) in w.data.chunks_exact(cols).zip(dy) {
        if *d == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * d;
        }
    }
}

/// dW += dy ⊗ x, db += dy
fn affine_back_params(dw: &mut Tensor, db: Option<&mut Tensor>, dy: &[f64], x: &[f64]) {
    let cols = dw.cols();
    for (row, d) in dw.data.chunks_exact_mut(cols).zip(dy) {
        if *d == 0.0 {
            continue;
        }
        for (g, a) in row.iter_mut().zip(x) {
            *g += d * a;
        }
    }
    if let Some(db) = db {
        for (g, d) in db.data.iter_mut().zip(dy) {
            *g += d;
        }
    }
}

fn check_finite(v: &[f64], layer: impl FnOnce() -> String) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { layer: layer() })
    }
}

struct EncoderTrace {
    /// Input of each dense layer, then the final output.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

struct CellTrace {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl NetworkWeights {
    /// Glorot-uniform weights, zero biases except the LSTM forget gate (1.0)
    /// and the head (1.0, so both ReLUs start in their active region).
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = arch.shapes();
        let mut params = Vec::with_capacity(shapes.len());
        for shape in &shapes {
            let mut t = Tensor::zeros(shape);
            if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                t.data
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-limit..limit));
            }
            params.push(t);
        }
        let h = arch.lstm_hidden;
        for l in 0..arch.lstm_layers {
            let b = &mut params[arch.lstm_base(l) + 2];
            b.data[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        }
        params[arch.head_base() + 1]
            .data
            .iter_mut()
            .for_each(|v| *v = 1.0);
        let zeros: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        NetworkWeights {
            arch,
            adam_m: zeros.clone(),
            adam_v: zeros,
            params,
            step_count: 0,
        }
    }

    pub fn input_width(&self) -> usize {
        self.arch.input
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn encoder_trace(&self, input: &[f64]) -> Result<EncoderTrace> {
        if input.len() != self.arch.input {
            return Err(Error::ShapeMismatch {
                expected: format!("input of width {}", self.arch.input),
                actual: format!("{}", input.len()),
            });
        }
        let mut acts = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(self.arch.encoder.len());
        for layer in 0..self.arch.encoder.len() {
            let z = affine(
                &self.params[2 * layer],
                &self.params[2 * layer + 1],
                acts.last().unwrap(),
            );
            let a: Vec<f64> = z.iter().map(|v| softplus(*v)).collect();
            check_finite(&a, || format!("encoder.{layer}"))?;
            pre.push(z);
            acts.push(a);
        }
        Ok(EncoderTrace { acts, pre })
    }

    /// λ for one flattened observation.
    pub fn encoder_forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encoder_trace(input)?.acts.pop().unwrap())
    }

    fn cell(&self, layer: usize, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> CellTrace {
        let base = self.arch.lstm_base(layer);
        let hsz = self.arch.lstm_hidden;
        let mut z = affine(&self.params[base], &self.params[base + 2], x);
        matvec_add(&self.params[base + 1], h_prev, &mut z);
        let i: Vec<f64> = z[..hsz].iter().map(|v| sigmoid(*v)).collect();
        let f: Vec<f64> = z[hsz..2 * hsz].iter().map(|v| sigmoid(*v)).collect();
        let g: Vec<f64> = z[2 * hsz..3 * hsz].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hsz..].iter().map(|v| sigmoid(*v)).collect();
        let c: Vec<f64> = (0..hsz).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        CellTrace {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            c,
            tanh_c,
        }
    }

    /// One recurrent step through every LSTM layer; returns the new state and
    /// the top layer's hidden vector.
    pub fn lstm_step(&self, state: &LstmState, input: &[f64]) -> (LstmState, Vec<f64>) {
        let mut next = state.clone();
        let mut x = input.to_vec();
        for l in 0..self.arch.lstm_layers {
            let tr = self.cell(l, &x, &state.h[l], &state.c[l]);
            let h: Vec<f64> = tr.o.iter().zip(&tr.tanh_c).map(|(o, t)| o * t).collect();
            next.c[l] = tr.c;
            next.h[l] = h.clone();
            x = h;
        }
        (next, x)
    }

    fn head_raw(&self, h: &[f64]) -> Vec<f64> {
        let base = self.arch.head_base();
        affine(&self.params[base], &self.params[base + 1], h)
    }

    /// α = 1 + relu(r0), β = relu(r1). Not clamped: β may be 0.
    pub fn head_forward(&self, h: &[f64]) -> ParetoParams {
        head_from_raw(&self.head_raw(h))
    }

    /// Full forward pass over a window from a zero state.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<ParetoParams> {
        let mut state = LstmState::zeros(&self.arch);
        for x in inputs {
            let lambda = self.encoder_forward(x)?;
            state = self.lstm_step(&state, &lambda).0;
        }
        Ok(self.head_forward(state.top()))
    }

    /// ½((α̂ − α)² + (β̂ − β)²), the mean squared error over both outputs.
    pub fn loss(&self, inputs: &[Vec<f64>], target: &ParetoParams) -> Result<f64> {
        let out = self.forward(inputs)?;
        Ok(mse(&out, target))
    }

    /// Loss and exact gradients by backpropagation through time.
    pub fn backward(&self, inputs: &[Vec<f64>], target: &ParetoParams) -> Result<(f64, Gradients)> {
        if inputs.is_empty() {
            return Err(Error::invalid("backward needs at least one observation"));
        }
        let arch = &self.arch;
        let layers = arch.lstm_layers;
        let hsz = arch.lstm_hidden;

        let mut enc = Vec::with_capacity(inputs.len());
        let mut cells: Vec<Vec<CellTrace>> = Vec::with_capacity(inputs.len());
        let mut state = LstmState::zeros(arch);
        for (t, x) in inputs.iter().enumerate() {
            let e = self.encoder_trace(x)?;
            let mut xin = e.acts.last().unwrap().clone();
            let mut step = Vec::with_capacity(layers);
            for l in 0..layers {
                let tr = self.cell(l, &xin, &state.h[l], &state.c[l]);
                let h: Vec<f64> = tr.o.iter().zip(&tr.tanh_c).map(|(o, t)| o * t).collect();
                check_finite(&h, || format!("lstm.{l} at step {t}"))?;
                state.c[l] = tr.c.clone();
                state.h[l] = h.clone();
                xin = h;
                step.push(tr);
            }
            enc.push(e);
            cells.push(step);
        }
        let raw = self.head_raw(state.top());
        let out = head_from_raw(&raw);
        check_finite(&[out.alpha, out.beta], || "head".to_string())?;
        let loss = mse(&out, target);

        let mut grads = Gradients::zeros_like(self);
        let d_alpha = out.alpha - target.alpha;
        let d_beta = out.beta - target.beta;
        let draw = [
            if raw[0] > 0.0 { d_alpha } else { 0.0 },
            if raw[1] > 0.0 { d_beta } else { 0.0 },
        ];
        let hb = arch.head_base();
        {
            let (before, after) = grads.tensors.split_at_mut(hb + 1);
            affine_back_params(&mut before[hb], Some(&mut after[0]), &draw, state.top());
        }
        let mut dh_top = vec![0.0; hsz];
        affine_back_input(&self.params[hb], &draw, &mut dh_top);

        let mut dh_next = vec![vec![0.0; hsz]; layers];
        let mut dc_next = vec![vec![0.0; hsz]; layers];
        for t in (0..inputs.len()).rev() {
            // gradient arriving at the top layer's h from above
            let mut dh_above = if t + 1 == inputs.len() {
                dh_top.clone()
            } else {
                vec![0.0; hsz]
            };
            for l in (0..layers).rev() {
                let tr = &cells[t][l];
                let base = arch.lstm_base(l);
                let dh: Vec<f64> = dh_above.iter().zip(&dh_next[l]).map(|(a, b)| a + b).collect();
                let mut dz = vec![0.0; 4 * hsz];
                let mut dc_prev = vec![0.0; hsz];
                for k in 0..hsz {
                    let dc = dc_next[l][k] + dh[k] * tr.o[k] * (1.0 - tr.tanh_c[k] * tr.tanh_c[k]);
                    let d_o = dh[k] * tr.tanh_c[k];
                    let d_i = dc * tr.g[k];
                    let d_g = dc * tr.i[k];
                    let d_f = dc * tr.c_prev[k];
                    dc_prev[k] = dc * tr.f[k];
                    dz[k] = d_i * tr.i[k] * (1.0 - tr.i[k]);
                    dz[hsz + k] = d_f * tr.f[k] * (1.0 - tr.f[k]);
                    dz[2 * hsz + k] = d_g * (1.0 - tr.g[k] * tr.g[k]);
                    dz[3 * hsz + k] = d_o * tr.o[k] * (1.0 - tr.o[k]);
                }
                {
                    let g = &mut grads.tensors;
                    let (w_ih, rest) = g[base..base + 3].split_at_mut(1);
                    let (w_hh, b) = rest.split_at_mut(1);
                    affine_back_params(&mut w_ih[0], Some(&mut b[0]), &dz, &tr.x);
                    affine_back_params(&mut w_hh[0], None, &dz, &tr.h_prev);
                }
                let mut dx = vec![0.0; tr.x.len()];
                affine_back_input(&self.params[base], &dz, &mut dx);
                let mut dhp = vec![0.0; hsz];
                affine_back_input(&self.params[base + 1], &dz, &mut dhp);
                dh_next[l] = dhp;
                dc_next[l] = dc_prev;
                dh_above = dx;
            }
            // dh_above now holds dL/dλ_t
            let e = &enc[t];
            let mut da = dh_above;
            for layer in (0..arch.encoder.len()).rev() {
                let dz: Vec<f64> = da
                    .iter()
                    .zip(&e.pre[layer])
                    .map(|(d, z)| d * sigmoid(*z))
                    .collect();
                {
                    let (w, b) = grads.tensors[2 * layer..2 * layer + 2].split_at_mut(1);
                    affine_back_params(&mut w[0], Some(&mut b[0]), &dz, &e.acts[layer]);
                }
                if layer > 0 {
                    let mut prev = vec![0.0; e.acts[layer].len()];
                    affine_back_input(&self.params[2 * layer], &dz, &mut prev);
                    da = prev;
                } else {
                    break;
                }
            }
        }
        debug_assert_eq!(arch.encoder_out(), cells[0][0].x.len());
        Ok((loss, grads))
    }
}

fn head_from_raw(raw: &[f64]) -> ParetoParams {
    ParetoParams {
        alpha: 1.0 + relu(raw[0]),
        beta: relu(raw[1]),
    }
}

fn mse(out: &ParetoParams, target: &ParetoParams) -> f64 {
    0.5 * ((out.alpha - target.alpha).powi(2) + (out.beta - target.beta).powi(2))
}
