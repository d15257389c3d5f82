//! Reverse-mode differentiation over dense 2-D `f64` arrays.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and the indices of its inputs, so node order is already a topological
//! order. [`Graph::backward`] walks the tape once in reverse. A graph is
//! built fresh for every forward pass and dropped afterwards.
//!
//! Vectors and scalars are `1 x k` and `1 x 1` arrays. Row-major throughout;
//! a "batch" is the leading (row) axis.

mod adam;
mod check;
mod params;

use std::cell::{Ref, RefCell};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use check::{gradient_check, CheckOptions, CheckReport};
pub use params::{ParamId, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalarLoss((usize, usize)),
    #[error("loss does not depend on any tracked leaf")]
    DetachedGraph,
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

pub type Result<T, E = GradError> = std::result::Result<T, E>;

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Hadamard(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Scale(usize, f64),
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
    Reshape(usize),
    Mask(usize, Array2<f64>),
    Propagate(usize, Array2<f64>),
    LstmCell(Box<LstmCache>),
    Mse(usize, usize),
}

#[derive(Debug)]
struct LstmCache {
    x: usize,
    state: usize,
    w: usize,
    b: usize,
    /// `[x, h_prev]`.
    xh: Array2<f64>,
    /// Activated gates `[f, i, o, g]`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tanh` through a single `exp`; exact limits at both tails.
fn tanh_exp(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Array2<f64>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let val = &nodes[v.0].value;
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    fn binary<F>(&self, a: Var, b: Var, f: F) -> (Array2<f64>, bool)
    where
        F: FnOnce(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    {
        let nodes = self.nodes.borrow();
        let out = f(&nodes[a.0].value, &nodes[b.0].value);
        (out, nodes[a.0].requires_grad || nodes[b.0].requires_grad)
    }

    fn unary<F>(&self, a: Var, f: F) -> (Array2<f64>, bool)
    where
        F: FnOnce(&Array2<f64>) -> Array2<f64>,
    {
        let nodes = self.nodes.borrow();
        (f(&nodes[a.0].value), nodes[a.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(GradError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (v, rg) = self.binary(a, b, |x, y| x.dot(y));
        Ok(self.push(v, Op::MatMul(a.0, b.0), rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (v, rg) = self.binary(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (v, rg) = self.binary(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a.0, b.0), rg))
    }

    /// `x + bias`, with the `1 x k` bias broadcast over every row of `x`.
    pub fn add_row(&self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.0 != 1 || sb.1 != sx.1 {
            return Err(GradError::ShapeMismatch {
                op: "add_row",
                left: sx,
                right: sb,
            });
        }
        let (v, rg) = self.binary(x, bias, |a, b| a + &b.row(0));
        Ok(self.push(v, Op::AddRow(x.0, bias.0), rg))
    }

    pub fn hadamard(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let (v, rg) = self.binary(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Hadamard(a.0, b.0), rg))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let (v, rg) = self.unary(x, |a| a.mapv(sigmoid));
        self.push(v, Op::Sigmoid(x.0), rg)
    }

    pub fn tanh(&self, x: Var) -> Var {
        let (v, rg) = self.unary(x, |a| a.mapv(f64::tanh));
        self.push(v, Op::Tanh(x.0), rg)
    }

    /// `max(x, 0)`; the derivative at exactly 0 is taken as 0.
    pub fn relu(&self, x: Var) -> Var {
        let (v, rg) = self.unary(x, |a| a.mapv(|z| if z > 0.0 { z } else { 0.0 }));
        self.push(v, Op::Relu(x.0), rg)
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        let (v, rg) = self.unary(x, |a| a * c);
        self.push(v, Op::Scale(x.0, c), rg)
    }

    /// Side-by-side concatenation along the feature (column) axis.
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(GradError::ShapeMismatch {
                op: "concat_cols",
                left: sa,
                right: sb,
            });
        }
        let (v, rg) = self.binary(a, b, |x, y| {
            concatenate(Axis(1), &[x.view(), y.view()]).expect("row counts checked")
        });
        Ok(self.push(v, Op::ConcatCols(a.0, b.0), rg))
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x);
        if start + len > sx.1 || len == 0 {
            return Err(GradError::ShapeMismatch {
                op: "slice_cols",
                left: sx,
                right: (start, len),
            });
        }
        let (v, rg) = self.unary(x, |a| a.slice(s![.., start..start + len]).to_owned());
        Ok(self.push(v, Op::SliceCols(x.0, start), rg))
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(&self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.0 * sx.1 != rows * cols {
            return Err(GradError::ShapeMismatch {
                op: "reshape",
                left: sx,
                right: (rows, cols),
            });
        }
        let (v, rg) = self.unary(x, |a| {
            let flat: Vec<f64> = a.iter().copied().collect();
            Array2::from_shape_vec((rows, cols), flat).expect("sizes checked")
        });
        Ok(self.push(v, Op::Reshape(x.0), rg))
    }

    /// Inverted dropout: in training each element is zeroed with probability
    /// `rate` and survivors are scaled by `1 / (1 - rate)`. Evaluation mode,
    /// and a rate of zero, return `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(GradError::InvalidRate(rate));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let (r, c) = self.shape(x);
        let mask = Array2::from_shape_simple_fn((r, c), || {
            if rng.gen::<f64>() < rate {
                0.0
            } else {
                keep
            }
        });
        let (v, rg) = self.unary(x, |a| a * &mask);
        Ok(self.push(v, Op::Mask(x.0, mask), rg))
    }

    /// Applies `adj` to every consecutive block of `adj.nrows()` rows of `x`,
    /// i.e. multiplies by the block-diagonal matrix `I_B (x) adj`.
    pub fn propagate(&self, adj: ArrayView2<f64>, x: Var) -> Result<Var> {
        let sx = self.shape(x);
        let n = adj.nrows();
        if adj.ncols() != n || n == 0 || sx.0 % n != 0 {
            return Err(GradError::ShapeMismatch {
                op: "propagate",
                left: (n, adj.ncols()),
                right: sx,
            });
        }
        let (v, rg) = self.unary(x, |a| block_apply(adj, a.view(), false));
        Ok(self.push(v, Op::Propagate(x.0, adj.to_owned()), rg))
    }

    /// One fused LSTM step. `state` is `[h_prev, c_prev]` (`rows x 2H`), `w`
    /// is `(d + H) x 4H` with column blocks forget, input, output and
    /// candidate, `b` is `1 x 4H`. Returns the new `[h, c]`.
    pub fn lstm_cell(&self, x: Var, state: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, d) = self.shape(x);
        let (sr, sc) = self.shape(state);
        let h = sc / 2;
        let mismatch = |left, right| GradError::ShapeMismatch {
            op: "lstm_cell",
            left,
            right,
        };
        if sr != rows || sc % 2 != 0 || h == 0 {
            return Err(mismatch((rows, d), (sr, sc)));
        }
        if self.shape(w) != (d + h, 4 * h) {
            return Err(mismatch(self.shape(w), (d + h, 4 * h)));
        }
        if self.shape(b) != (1, 4 * h) {
            return Err(mismatch(self.shape(b), (1, 4 * h)));
        }
        let nodes = self.nodes.borrow();
        let (xv, sv) = (&nodes[x.0].value, &nodes[state.0].value);
        let mut xh = Array2::zeros((rows, d + h));
        xh.slice_mut(s![.., ..d]).assign(xv);
        xh.slice_mut(s![.., d..]).assign(&sv.slice(s![.., ..h]));
        let mut gates = xh.dot(&nodes[w.0].value);
        gates += &nodes[b.0].value.row(0);
        let sv = sv.as_standard_layout();
        let mut out = Array2::zeros((rows, 2 * h));
        let mut tanh_c = Array2::zeros((rows, h));
        for (r, ((mut z, mut o_row), mut tc_row)) in gates
            .rows_mut()
            .into_iter()
            .zip(out.rows_mut())
            .zip(tanh_c.rows_mut())
            .enumerate()
        {
            let z = z.as_slice_mut().expect("fresh row");
            let (zf, rest) = z.split_at_mut(h);
            let (zi, rest) = rest.split_at_mut(h);
            let (zo, zg) = rest.split_at_mut(h);
            let c_prev = &sv.row(r).to_slice().expect("standard layout")[h..];
            let (h_out, c_out) = o_row.as_slice_mut().expect("fresh row").split_at_mut(h);
            let tc_row = tc_row.as_slice_mut().expect("fresh row");
            for j in 0..h {
                let f = sigmoid(zf[j]);
                let i = sigmoid(zi[j]);
                let o = sigmoid(zo[j]);
                let g = tanh_exp(zg[j]);
                let c = f * c_prev[j] + i * g;
                let tc = tanh_exp(c);
                (zf[j], zi[j], zo[j], zg[j]) = (f, i, o, g);
                tc_row[j] = tc;
                h_out[j] = o * tc;
                c_out[j] = c;
            }
        }
        let rg = [x, state, w, b].iter().any(|v| nodes[v.0].requires_grad);
        drop(nodes);
        let cache = LstmCache {
            x: x.0,
            state: state.0,
            w: w.0,
            b: b.0,
            xh,
            gates,
            tanh_c,
        };
        Ok(self.push(out, Op::LstmCell(Box::new(cache)), rg))
    }

    /// Mean of squared differences over all elements, as a `1 x 1` node.
    pub fn mse_loss(&self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let (v, rg) = self.binary(pred, target, |p, t| {
            let n = p.len() as f64;
            let sum: f64 = Zip::from(p).and(t).fold(0.0, |acc, &a, &b| {
                let d = a - b;
                acc + d * d
            });
            Array2::from_elem((1, 1), sum / n)
        });
        if !v[[0, 0]].is_finite() {
            return Err(GradError::NonFinite("mse_loss"));
        }
        Ok(self.push(v, Op::Mse(pred.0, target.0), rg))
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every tracked leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.dim() != (1, 1) {
            return Err(GradError::NotScalarLoss(root.value.dim()));
        }
        if !root.requires_grad {
            return Err(GradError::DetachedGraph);
        }

        let mut grads: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
            match slot {
                Some(g) => *g += &delta,
                None => *slot = Some(delta),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let rg = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if rg(*a) {
                        acc(&mut grads[*a], g.dot(&val(*b).t()));
                    }
                    if rg(*b) {
                        acc(&mut grads[*b], val(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if rg(*b) {
                        acc(&mut grads[*b], g.clone());
                    }
                    if rg(*a) {
                        acc(&mut grads[*a], g);
                    }
                }
                Op::Sub(a, b) => {
                    if rg(*b) {
                        acc(&mut grads[*b], -&g);
                    }
                    if rg(*a) {
                        acc(&mut grads[*a], g);
                    }
                }
                Op::AddRow(x, b) => {
                    if rg(*b) {
                        acc(&mut grads[*b], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if rg(*x) {
                        acc(&mut grads[*x], g);
                    }
                }
                Op::Hadamard(a, b) => {
                    if rg(*a) {
                        acc(&mut grads[*a], &g * val(*b));
                    }
                    if rg(*b) {
                        acc(&mut grads[*b], &g * val(*a));
                    }
                }
                Op::Sigmoid(x) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(&mut grads[*x], d);
                }
                Op::Tanh(x) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut grads[*x], d);
                }
                Op::Relu(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(&mut grads[*x], d);
                }
                Op::Scale(x, c) => acc(&mut grads[*x], g * *c),
                Op::ConcatCols(a, b) => {
                    let k = val(*a).ncols();
                    if rg(*a) {
                        acc(&mut grads[*a], g.slice(s![.., ..k]).to_owned());
                    }
                    if rg(*b) {
                        acc(&mut grads[*b], g.slice(s![.., k..]).to_owned());
                    }
                }
                Op::SliceCols(x, start) => {
                    let mut d = Array2::zeros(val(*x).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads[*x], d);
                }
                Op::Reshape(x) => {
                    let flat: Vec<f64> = g.iter().copied().collect();
                    let d = Array2::from_shape_vec(val(*x).dim(), flat).expect("same size");
                    acc(&mut grads[*x], d);
                }
                Op::Mask(x, mask) => acc(&mut grads[*x], g * mask),
                Op::Propagate(x, adj) => {
                    acc(&mut grads[*x], block_apply(adj.view(), g.view(), true));
                }
                Op::LstmCell(cache) => {
                    let LstmCache {
                        x,
                        state,
                        w,
                        b,
                        xh,
                        gates,
                        tanh_c,
                    } = cache.as_ref();
                    let (rows, h) = tanh_c.dim();
                    let d = xh.ncols() - h;
                    let sv = val(*state).as_standard_layout();
                    let g = g.as_standard_layout();
                    let mut dz = Array2::zeros((rows, 4 * h));
                    let mut dc_prev = Array2::zeros((rows, h));
                    for (r, (mut dz_row, mut dcp_row)) in
                        dz.rows_mut().into_iter().zip(dc_prev.rows_mut()).enumerate()
                    {
                        let dz_row = dz_row.as_slice_mut().expect("fresh row");
                        let (dzf, rest) = dz_row.split_at_mut(h);
                        let (dzi, rest) = rest.split_at_mut(h);
                        let (dzo, dzg) = rest.split_at_mut(h);
                        let dcp_row = dcp_row.as_slice_mut().expect("fresh row");
                        let gate = gates.row(r).to_slice().expect("standard layout");
                        let c_prev = &sv.row(r).to_slice().expect("standard layout")[h..];
                        let (dh_row, dc_row) = g.row(r).to_slice().expect("standard layout").split_at(h);
                        let tc_row = tanh_c.row(r).to_slice().expect("standard layout");
                        for j in 0..h {
                            let (f, i, o, cand) = (gate[j], gate[h + j], gate[2 * h + j], gate[3 * h + j]);
                            let tc = tc_row[j];
                            let dh = dh_row[j];
                            let dc = dc_row[j] + dh * o * (1.0 - tc * tc);
                            dzf[j] = dc * c_prev[j] * f * (1.0 - f);
                            dzi[j] = dc * cand * i * (1.0 - i);
                            dzo[j] = dh * tc * o * (1.0 - o);
                            dzg[j] = dc * i * (1.0 - cand * cand);
                            dcp_row[j] = dc * f;
                        }
                    }
                    if rg(*w) {
                        acc(&mut grads[*w], xh.t().dot(&dz));
                    }
                    if rg(*b) {
                        acc(&mut grads[*b], dz.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if rg(*x) || rg(*state) {
                        let dxh = dz.dot(&val(*w).t());
                        if rg(*x) {
                            acc(&mut grads[*x], dxh.slice(s![.., ..d]).to_owned());
                        }
                        if rg(*state) {
                            let mut ds = Array2::zeros((rows, 2 * h));
                            ds.slice_mut(s![.., ..h]).assign(&dxh.slice(s![.., d..]));
                            ds.slice_mut(s![.., h..]).assign(&dc_prev);
                            acc(&mut grads[*state], ds);
                        }
                    }
                }
                Op::Mse(p, t) => {
                    let scale = 2.0 * g[[0, 0]] / val(*p).len() as f64;
                    let d = (val(*p) - val(*t)) * scale;
                    if rg(*t) {
                        acc(&mut grads[*t], -&d);
                    }
                    if rg(*p) {
                        acc(&mut grads[*p], d);
                    }
                }
            }
        }

        let mut leaf_grads = Vec::with_capacity(grads.len());
        for (idx, g) in grads.into_iter().enumerate() {
            let node = &nodes[idx];
            let keep = node.requires_grad && matches!(node.op, Op::Leaf);
            let g = match (keep, g) {
                (true, Some(g)) => {
                    if g.iter().any(|x| !x.is_finite()) {
                        return Err(GradError::NonFinite("backward"));
                    }
                    Some(g)
                }
                (true, None) => Some(Array2::zeros(node.value.dim())),
                (false, _) => None,
            };
            leaf_grads.push(g);
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

fn block_apply(adj: ArrayView2<f64>, x: ArrayView2<f64>, transpose: bool) -> Array2<f64> {
    let n = adj.nrows();
    let mut out = Array2::zeros(x.dim());
    let op = if transpose { adj.reversed_axes() } else { adj };
    for (src, mut dst) in x
        .axis_chunks_iter(Axis(0), n)
        .zip(out.axis_chunks_iter_mut(Axis(0), n))
    {
        dst.assign(&op.dot(&src));
    }
    out
}

/// Leaf gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of a tracked leaf (zeros if the loss does not depend on it);
    /// `None` for constants and intermediate nodes.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of `vars` in order, cloned. Panics if any is untracked.
    pub fn collect(&self, vars: &[Var]) -> Vec<Array2<f64>> {
        vars.iter()
            .map(|&v| self.get(v).expect("gradient of a tracked leaf").clone())
            .collect()
    }
}
