//! Parameter layouts and forward passes for the building blocks.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::grad::{Graph, Mode, ParamId, ParamStore, Result, Var};
use crate::rng::StreamRng;

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn init_uniform<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Fully connected layer `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut StreamRng) -> Self {
        let weight = store.add(format!("{name}.weight"), init_uniform(inputs, outputs, inputs, rng));
        let bias = store.add(format!("{name}.bias"), init_uniform(1, outputs, inputs, rng));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &Graph, vars: &[Var], x: Var) -> Result<Var> {
        let xw = g.matmul(x, vars[self.weight.0])?;
        g.add_row(xw, vars[self.bias.0])
    }
}

/// LSTM gate blocks, in the column order they occupy inside each layer's
/// packed weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Output = 2,
    Candidate = 3,
}

/// Stacked LSTM. Layer `l` owns one `(d_l + H) x 4H` weight whose column
/// blocks are the forget, input, output and candidate transforms (rows are
/// `[input; hidden]`), and a `1 x 4H` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayout {
    pub input_size: usize,
    pub hidden: usize,
    pub layers: Vec<(ParamId, ParamId)>,
}

impl LstmLayout {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden: usize,
        layers: usize,
        rng: &mut StreamRng,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let d = if l == 0 { input_size } else { hidden };
                let fan_in = d + hidden;
                let w = store.add(
                    format!("{name}.l{l}.weight"),
                    init_uniform(fan_in, 4 * hidden, fan_in, rng),
                );
                let b = store.add(format!("{name}.l{l}.bias"), init_uniform(1, 4 * hidden, fan_in, rng));
                (w, b)
            })
            .collect();
        Self {
            input_size,
            hidden,
            layers,
        }
    }

    /// Columns of one gate inside layer `layer`'s packed weight.
    pub fn gate_weight<'a>(&self, store: &'a ParamStore, layer: usize, gate: Gate) -> ArrayView2<'a, f64> {
        let h = self.hidden;
        let k = gate as usize;
        store
            .get(self.layers[layer].0)
            .view()
            .slice_move(s![.., k * h..(k + 1) * h])
    }

    /// Runs the stack over `steps` (each `rows x input_size`) and returns the
    /// top layer's final hidden state: per step `z = [x, h] W + b`,
    /// `c = f * c + i * g`, `h = o * tanh(c)` with sigmoid gates `f, i, o`
    /// and `g = tanh`. Dropout with `rate` is applied to the
    /// inputs of every layer above the first in training mode.
    pub fn forward(
        &self,
        g: &Graph,
        vars: &[Var],
        steps: &[Var],
        rate: f64,
        mode: Mode,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        assert!(!steps.is_empty(), "LSTM needs at least one step");
        let rows = g.shape(steps[0]).0;
        let h = self.hidden;
        let top = self.layers.len() - 1;
        let mut seq: Vec<Var> = steps.to_vec();
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            if l > 0 {
                seq = seq
                    .into_iter()
                    .map(|x| g.dropout(x, rate, mode, rng))
                    .collect::<Result<_>>()?;
            }
            let mut state = g.constant(Array2::zeros((rows, 2 * h)));
            let mut outputs = Vec::with_capacity(seq.len());
            for (t, &x) in seq.iter().enumerate() {
                state = g.lstm_cell(x, state, vars[w.0], vars[b.0])?;
                if l < top || t + 1 == seq.len() {
                    outputs.push(g.slice_cols(state, 0, h)?);
                }
            }
            seq = outputs;
        }
        Ok(*seq.last().expect("non-empty"))
    }
}

/// Two graph-convolution layers `ReLU(A X W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayout {
    pub first: Dense,
    pub second: Dense,
}

impl GcnLayout {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: [usize; 3],
        rng: &mut StreamRng,
    ) -> Self {
        Self {
            first: Dense::new(store, &format!("{name}.l0"), widths[0], widths[1], rng),
            second: Dense::new(store, &format!("{name}.l1"), widths[1], widths[2], rng),
        }
    }

    fn conv(g: &Graph, vars: &[Var], layer: &Dense, adj: ArrayView2<f64>, x: Var) -> Result<Var> {
        let xw = g.matmul(x, vars[layer.weight.0])?;
        let mixed = g.propagate(adj, xw)?;
        Ok(g.relu(g.add_row(mixed, vars[layer.bias.0])?))
    }

    /// `x` is `(B * N) x F0`, with each block of `N` rows one graph.
    pub fn forward(
        &self,
        g: &Graph,
        vars: &[Var],
        adj: ArrayView2<f64>,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        let h1 = Self::conv(g, vars, &self.first, adj, x)?;
        let h1 = g.dropout(h1, rate, mode, rng)?;
        Self::conv(g, vars, &self.second, adj, h1)
    }
}
