//! Small neural network toolkit used by the typing models and the ranker:
//! dense layers, an LSTM with backpropagation through time, softmax cross
//! entropy, dropout, gradient clipping, and SGD with Nesterov momentum.
//!
//! Everything is f64 and explicitly differentiated; parameter flattening
//! exists so gradients can be checked against finite differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A matrix parameter with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor { rows, cols, data: vec![0.0; rows * cols], grad: vec![0.0; rows * cols] }
    }

    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = Tensor::zeros(rows, cols);
        for v in &mut t.data {
            *v = rng.gen_range(-scale..scale);
        }
        t
    }

    /// Xavier/Glorot uniform init for affine weights.
    pub fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let scale = (6.0 / (rows + cols) as f64).sqrt();
        Tensor::uniform(rows, cols, scale, rng)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Tensor {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged tensor rows");
            data.extend(row);
        }
        Tensor { rows: r, cols: c, data, grad: vec![0.0; r * c] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn grad_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.grad[i * self.cols..(i + 1) * self.cols]
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything holding trainable tensors. Visit order must be stable; the
/// optimizer and the flatteners rely on it.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));
}

pub fn param_count(model: &dyn Parameters) -> usize {
    let mut n = 0;
    model.visit(&mut |t| n += t.data.len());
    n
}

pub fn flatten_params(model: &dyn Parameters) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit(&mut |t| out.extend_from_slice(&t.data));
    out
}

pub fn set_params(model: &mut dyn Parameters, flat: &[f64]) {
    let mut off = 0;
    model.visit_mut(&mut |t| {
        let n = t.data.len();
        t.data.copy_from_slice(&flat[off..off + n]);
        off += n;
    });
    assert_eq!(off, flat.len(), "flat parameter vector has wrong length");
}

pub fn flatten_grads(model: &dyn Parameters) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit(&mut |t| out.extend_from_slice(&t.grad));
    out
}

pub fn zero_grads(model: &mut dyn Parameters) {
    model.visit_mut(&mut |t| t.zero_grad());
}

/// L2 norm over every gradient in the model.
pub fn global_grad_norm(model: &dyn Parameters) -> f64 {
    let mut sq = 0.0;
    model.visit(&mut |t| sq += t.grad.iter().map(|g| g * g).sum::<f64>());
    sq.sqrt()
}

/// Scales all gradients so their global norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(model: &mut dyn Parameters, max_norm: f64) -> f64 {
    let norm = global_grad_norm(model);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        model.visit_mut(&mut |t| t.grad.iter_mut().for_each(|g| *g *= scale));
    }
    norm
}

/// SGD with Nesterov momentum and L2 weight decay. The velocity buffer is
/// laid out in the model's visit order.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64, model: &dyn Parameters) -> Sgd {
        Sgd { learning_rate, momentum, weight_decay, velocity: vec![0.0; param_count(model)] }
    }

    /// One update from the accumulated gradients:
    /// g += wd * theta; v = mu * v + g; theta -= lr * (g + mu * v).
    pub fn step(&mut self, model: &mut dyn Parameters) {
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        let mut off = 0;
        let velocity = &mut self.velocity;
        model.visit_mut(&mut |t| {
            for (i, (theta, g0)) in t.data.iter_mut().zip(&t.grad).enumerate() {
                let g = g0 + wd * *theta;
                let v = &mut velocity[off + i];
                *v = mu * *v + g;
                *theta -= lr * (g + mu * *v);
            }
            off += t.data.len();
        });
        assert_eq!(off, velocity.len(), "model shape changed under the optimizer");
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Cross-entropy loss of softmax(logits) against `label`.
/// Returns (loss, probabilities, gradient wrt logits).
pub fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let probs = softmax(logits);
    let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
    let mut dlogits = probs.clone();
    dlogits[label] -= 1.0;
    (loss, probs, dlogits)
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through relu given the forward input.
pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter().zip(dy).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect()
}

/// Inverted dropout: kept activations are scaled by 1/(1-p) at train time so
/// inference needs no rescaling. The returned mask already carries the scale.
pub fn dropout_mask(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
    if p == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 - p;
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

pub fn apply_mask(x: &[f64], mask: &[f64]) -> Vec<f64> {
    x.iter().zip(mask).map(|(&v, &m)| v * m).collect()
}

/// Dense affine layer: y = W x + b with W stored row-major (out x in).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Linear {
        Linear { w: Tensor::xavier(output, input, rng), b: Tensor::zeros(1, output) }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.w.cols);
        (0..self.w.rows)
            .map(|o| {
                let row = self.w.row(o);
                self.b.data[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns dL/dx.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        assert_eq!(dy.len(), self.w.rows);
        let mut dx = vec![0.0; self.w.cols];
        for (o, &d) in dy.iter().enumerate() {
            self.b.grad[o] += d;
            let wrow = self.w.row(o).to_vec();
            let grow = self.w.grad_row_mut(o);
            for (i, &xv) in x.iter().enumerate() {
                grow[i] += d * xv;
                dx[i] += d * wrow[i];
            }
        }
        dx
    }
}

impl Parameters for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.w);
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Single-layer LSTM. Gate weights are packed as one matrix over the
/// concatenated `[input, hidden]` vector, gate order i, f, g, o.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w: Tensor,
    pub b: Tensor,
}

/// Per-step values cached by the forward pass for BPTT.
#[derive(Debug, Clone)]
struct LstmStep {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct LstmTrace {
    steps: Vec<LstmStep>,
}

impl LstmTrace {
    /// Hidden state after the last step; zeros for an empty sequence.
    pub fn final_hidden(&self, hidden_dim: usize) -> Vec<f64> {
        match self.steps.last() {
            Some(step) => {
                step.gates[3 * hidden_dim..4 * hidden_dim]
                    .iter()
                    .zip(&step.tanh_c)
                    .map(|(o, tc)| o * tc)
                    .collect()
            }
            None => vec![0.0; hidden_dim],
        }
    }
}

impl Lstm {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Lstm {
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        Lstm {
            input_dim,
            hidden_dim,
            w: Tensor::uniform(4 * hidden_dim, input_dim + hidden_dim, scale, rng),
            b: Tensor::uniform(4 * hidden_dim, 1, scale, rng),
        }
    }

    pub fn forward(&self, inputs: &[Vec<f64>]) -> LstmTrace {
        let h = self.hidden_dim;
        let mut trace = LstmTrace::default();
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for input in inputs {
            assert_eq!(input.len(), self.input_dim);
            let mut gates = vec![0.0; 4 * h];
            for (g, gate) in gates.iter_mut().enumerate() {
                let row = self.w.row(g);
                let mut acc = self.b.data[g];
                for (w, v) in row[..self.input_dim].iter().zip(input) {
                    acc += w * v;
                }
                for (w, v) in row[self.input_dim..].iter().zip(&h_prev) {
                    acc += w * v;
                }
                *gate = acc;
            }
            for v in &mut gates[..h] {
                *v = sigmoid(*v); // i
            }
            for v in &mut gates[h..2 * h] {
                *v = sigmoid(*v); // f
            }
            for v in &mut gates[2 * h..3 * h] {
                *v = v.tanh(); // g
            }
            for v in &mut gates[3 * h..] {
                *v = sigmoid(*v); // o
            }
            let c: Vec<f64> = (0..h)
                .map(|j| gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j])
                .collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = (0..h).map(|j| gates[3 * h + j] * tanh_c[j]).collect();
            trace.steps.push(LstmStep {
                input: input.clone(),
                h_prev: std::mem::replace(&mut h_prev, h_new),
                c_prev: std::mem::replace(&mut c_prev, c.clone()),
                gates,
                c,
                tanh_c,
            });
        }
        trace
    }

    /// BPTT from a gradient on the final hidden state. Accumulates parameter
    /// gradients and returns per-step input gradients.
    pub fn backward(&mut self, trace: &LstmTrace, d_final_h: &[f64]) -> Vec<Vec<f64>> {
        let h = self.hidden_dim;
        assert_eq!(d_final_h.len(), h);
        let mut d_inputs = vec![vec![0.0; self.input_dim]; trace.steps.len()];
        let mut dh = d_final_h.to_vec();
        let mut dc = vec![0.0; h];
        for (t, step) in trace.steps.iter().enumerate().rev() {
            let (i_g, f_g, g_g, o_g) = (
                &step.gates[..h],
                &step.gates[h..2 * h],
                &step.gates[2 * h..3 * h],
                &step.gates[3 * h..],
            );
            // Pre-activation gate gradients in packed order.
            let mut dgates = vec![0.0; 4 * h];
            let mut dc_prev = vec![0.0; h];
            for j in 0..h {
                let d_o = dh[j] * step.tanh_c[j];
                let d_c = dc[j] + dh[j] * o_g[j] * (1.0 - step.tanh_c[j] * step.tanh_c[j]);
                let d_i = d_c * g_g[j];
                let d_f = d_c * step.c_prev[j];
                let d_g = d_c * i_g[j];
                dc_prev[j] = d_c * f_g[j];
                dgates[j] = d_i * i_g[j] * (1.0 - i_g[j]);
                dgates[h + j] = d_f * f_g[j] * (1.0 - f_g[j]);
                dgates[2 * h + j] = d_g * (1.0 - g_g[j] * g_g[j]);
                dgates[3 * h + j] = d_o * o_g[j] * (1.0 - o_g[j]);
            }
            let mut dh_prev = vec![0.0; h];
            for (g, &dg) in dgates.iter().enumerate() {
                self.b.grad[g] += dg;
                let wrow = self.w.row(g).to_vec();
                let grow = self.w.grad_row_mut(g);
                for (k, &x) in step.input.iter().enumerate() {
                    grow[k] += dg * x;
                    d_inputs[t][k] += dg * wrow[k];
                }
                for (k, &hp) in step.h_prev.iter().enumerate() {
                    grow[self.input_dim + k] += dg * hp;
                    dh_prev[k] += dg * wrow[self.input_dim + k];
                }
            }
            dh = dh_prev;
            dc = dc_prev;
        }
        d_inputs
    }
}

impl Parameters for Lstm {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.w);
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}
