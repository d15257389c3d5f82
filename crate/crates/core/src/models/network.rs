use ndarray::{s, Array2, ArrayView2, Axis};

use super::layers::{Dense, GcnLayout, LstmLayout};
use super::{ModelError, ModelKind, ModelSpec, Result};
use crate::grad::{Graph, Mode, ParamStore, Var};
use crate::market_data::WindowDataset;
use crate::rng::{derive_seed, seeded, StreamRng};

const CNN_KERNEL: usize = 3;
const EVAL_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
enum Layout {
    Hybrid {
        lstm: LstmLayout,
        gcn: GcnLayout,
        fusion: [Dense; 2],
    },
    Lstm {
        lstm: LstmLayout,
        head: [Dense; 2],
    },
    Dense {
        layers: [Dense; 3],
    },
    Cnn {
        conv: Dense,
        head: Dense,
    },
}

/// A gradient-trained forecaster: architecture plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: ModelSpec,
    pub n_stocks: usize,
    pub lookback: usize,
    pub params: ParamStore,
    layout: Layout,
}

impl Network {
    /// Freshly initialised network; initial weights depend only on
    /// `(spec, n_stocks, lookback, spec.train.seed)`.
    pub fn new(spec: &ModelSpec, n_stocks: usize, lookback: usize) -> Result<Self> {
        spec.arch.validate(spec.kind)?;
        if n_stocks == 0 || lookback == 0 {
            return Err(ModelError::ShapeMismatch(format!(
                "network needs stocks and lookback > 0, got {n_stocks} and {lookback}"
            )));
        }
        let a = &spec.arch;
        let mut rng = seeded(derive_seed(spec.train.seed, 0));
        let mut store = ParamStore::new();
        let layout = match spec.kind {
            ModelKind::Hybrid => {
                let lstm = LstmLayout::new(&mut store, "lstm", 1, a.lstm_hidden, a.lstm_layers, &mut rng);
                let gcn = GcnLayout::new(
                    &mut store,
                    "gcn",
                    [a.lstm_hidden, a.gcn_hidden, a.gcn_out],
                    &mut rng,
                );
                let fusion = [
                    Dense::new(&mut store, "fusion.l0", a.lstm_hidden + a.gcn_out, a.fusion_hidden, &mut rng),
                    Dense::new(&mut store, "fusion.out", a.fusion_hidden, 1, &mut rng),
                ];
                Layout::Hybrid { lstm, gcn, fusion }
            }
            ModelKind::Lstm => {
                let lstm = LstmLayout::new(&mut store, "lstm", 1, a.lstm_hidden, a.lstm_layers, &mut rng);
                let head = [
                    Dense::new(&mut store, "head.l0", a.lstm_hidden, a.fusion_hidden, &mut rng),
                    Dense::new(&mut store, "head.out", a.fusion_hidden, 1, &mut rng),
                ];
                Layout::Lstm { lstm, head }
            }
            ModelKind::Dense => {
                let (h0, h1) = (a.dense_hidden[0], a.dense_hidden[1]);
                let layers = [
                    Dense::new(&mut store, "dense.l0", lookback * n_stocks, h0, &mut rng),
                    Dense::new(&mut store, "dense.l1", h0, h1, &mut rng),
                    Dense::new(&mut store, "dense.out", h1, n_stocks, &mut rng),
                ];
                Layout::Dense { layers }
            }
            ModelKind::Cnn1d => {
                if lookback < CNN_KERNEL {
                    return Err(ModelError::ShapeMismatch(format!(
                        "cnn1d needs lookback >= {CNN_KERNEL}, got {lookback}"
                    )));
                }
                let conv = Dense::new(&mut store, "conv", CNN_KERNEL, a.cnn_channels, &mut rng);
                let head = Dense::new(&mut store, "cnn.out", a.cnn_channels, 1, &mut rng);
                Layout::Cnn { conv, head }
            }
            ModelKind::Linreg => {
                return Err(ModelError::InvalidConfig {
                    field: "kind",
                    reason: "linreg is fitted in closed form, not as a network".into(),
                })
            }
        };
        Ok(Self {
            spec: spec.clone(),
            n_stocks,
            lookback,
            params: store,
            layout,
        })
    }

    /// Rebuilds the layout for `spec` and installs `params`, which must match
    /// it name for name and shape for shape.
    pub fn from_params(spec: &ModelSpec, n_stocks: usize, lookback: usize, params: ParamStore) -> Result<Self> {
        let mut net = Self::new(spec, n_stocks, lookback)?;
        if net.params.names() != params.names() {
            return Err(ModelError::Format(format!(
                "parameter names do not match a {} network",
                spec.kind
            )));
        }
        for ((name, a), b) in net.params.iter().zip(params.values()) {
            if a.dim() != b.dim() {
                return Err(ModelError::Format(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    a.dim(),
                    b.dim()
                )));
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    /// Builds the forward pass on `g`. `vars` are this network's parameters
    /// bound on `g` (see [`ParamStore::bind`]); `inputs` is `(B * N) x L`.
    /// Returns `(B * N) x 1` predictions.
    pub fn forward(
        &self,
        g: &Graph,
        vars: &[Var],
        inputs: Var,
        adj: Option<ArrayView2<f64>>,
        mode: Mode,
        rng: &mut StreamRng,
    ) -> Result<Var> {
        let (rows, cols) = g.shape(inputs);
        if cols != self.lookback || rows % self.n_stocks != 0 || rows == 0 {
            return Err(ModelError::ShapeMismatch(format!(
                "inputs {rows}x{cols} do not fit {} stocks with lookback {}",
                self.n_stocks, self.lookback
            )));
        }
        let rate = self.spec.train.dropout;
        let steps = || -> Result<Vec<Var>> {
            (0..self.lookback)
                .map(|t| g.slice_cols(inputs, t, 1).map_err(ModelError::from))
                .collect()
        };
        let out = match &self.layout {
            Layout::Hybrid { lstm, gcn, fusion } => {
                let adj = adj.ok_or_else(|| ModelError::ShapeMismatch("hybrid model needs an adjacency".into()))?;
                if adj.dim() != (self.n_stocks, self.n_stocks) {
                    return Err(ModelError::ShapeMismatch(format!(
                        "adjacency {:?} does not match {} stocks",
                        adj.dim(),
                        self.n_stocks
                    )));
                }
                let temporal = lstm.forward(g, vars, &steps()?, rate, mode, rng)?;
                let relational = gcn.forward(g, vars, adj, temporal, rate, mode, rng)?;
                let joined = g.concat_cols(temporal, relational)?;
                let hidden = g.relu(fusion[0].forward(g, vars, joined)?);
                fusion[1].forward(g, vars, hidden)?
            }
            Layout::Lstm { lstm, head } => {
                let temporal = lstm.forward(g, vars, &steps()?, rate, mode, rng)?;
                let hidden = g.relu(head[0].forward(g, vars, temporal)?);
                head[1].forward(g, vars, hidden)?
            }
            Layout::Dense { layers } => {
                let batch = rows / self.n_stocks;
                let flat = g.reshape(inputs, batch, self.n_stocks * self.lookback)?;
                let h0 = g.relu(layers[0].forward(g, vars, flat)?);
                let h1 = g.relu(layers[1].forward(g, vars, h0)?);
                let out = layers[2].forward(g, vars, h1)?;
                g.reshape(out, rows, 1)?
            }
            Layout::Cnn { conv, head } => {
                let positions = self.lookback - CNN_KERNEL + 1;
                let mut pooled: Option<Var> = None;
                for p in 0..positions {
                    let patch = g.slice_cols(inputs, p, CNN_KERNEL)?;
                    let act = g.relu(conv.forward(g, vars, patch)?);
                    pooled = Some(match pooled {
                        None => act,
                        Some(acc) => g.add(acc, act)?,
                    });
                }
                let mean = g.scale(pooled.expect("positions >= 1"), 1.0 / positions as f64);
                head.forward(g, vars, mean)?
            }
        };
        Ok(out)
    }

    /// Evaluation-mode predictions for `(B * N) x L` inputs, `(B * N) x 1` out.
    pub fn predict(&self, inputs: ArrayView2<f64>, adj: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
        let chunk_rows = EVAL_CHUNK * self.n_stocks;
        let mut out = Array2::zeros((inputs.nrows(), 1));
        // eval mode draws nothing from the generator
        let mut rng = seeded(0);
        for (k, chunk) in inputs.axis_chunks_iter(Axis(0), chunk_rows).enumerate() {
            let g = Graph::new();
            let vars = self.params.bind_frozen(&g);
            let x = g.constant(chunk.to_owned());
            let y = self.forward(&g, &vars, x, adj, Mode::Eval, &mut rng)?;
            let start = k * chunk_rows;
            out.slice_mut(s![start..start + chunk.nrows(), ..]).assign(&*g.value(y));
        }
        Ok(out)
    }
}

/// Stacks samples `indices` of `ds` into `(B * N) x L` inputs and
/// `(B * N) x 1` targets.
pub fn batch_inputs(ds: &WindowDataset, indices: &[usize]) -> (Array2<f64>, Array2<f64>) {
    let n = ds.n_tickers();
    let l = ds.lookback;
    let mut inputs = Array2::zeros((indices.len() * n, l));
    let mut targets = Array2::zeros((indices.len() * n, 1));
    for (b, &idx) in indices.iter().enumerate() {
        let sample = &ds.samples[idx];
        inputs
            .slice_mut(s![b * n..(b + 1) * n, ..])
            .assign(&sample.input.t());
        targets
            .slice_mut(s![b * n..(b + 1) * n, 0])
            .assign(&sample.target);
    }
    (inputs, targets)
}

/// One `L x N` window as `N x L` model input.
pub fn window_inputs(window: ArrayView2<f64>) -> Array2<f64> {
    window.t().to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{gradient_check, CheckOptions};
    use crate::models::ArchConfig;
    use crate::relation_graph::NormAdj;
    use rand::Rng;

    fn small_spec(kind: ModelKind) -> ModelSpec {
        let mut spec = ModelSpec::new(kind);
        spec.arch = ArchConfig {
            lstm_hidden: 4,
            lstm_layers: 2,
            gcn_hidden: 3,
            gcn_out: 2,
            fusion_hidden: 3,
            dense_hidden: vec![5, 4],
            cnn_channels: 3,
        };
        spec.train.seed = 11;
        spec
    }

    fn random_inputs(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(0.0..1.0))
    }

    fn ring_adj(n: usize) -> NormAdj {
        let mut g = crate::relation_graph::StockGraph::empty((0..n).map(|i| i.to_string()).collect());
        for i in 0..n {
            g.merge_edge(i, (i + 1) % n, 0.5 + 0.1 * i as f64, Default::default());
        }
        crate::relation_graph::normalized_adjacency(&g)
    }

    #[test]
    fn output_shapes() {
        let adj = ring_adj(10);
        for kind in [ModelKind::Hybrid, ModelKind::Lstm, ModelKind::Dense, ModelKind::Cnn1d] {
            let net = Network::new(&small_spec(kind), 10, 11).unwrap();
            let x = random_inputs(30, 11, 1);
            let y = net.predict(x.view(), Some(adj.a_hat.view())).unwrap();
            assert_eq!(y.dim(), (30, 1), "{kind}");
        }
    }

    #[test]
    fn cnn_handles_any_lookback_from_kernel_width() {
        for l in [3, 4, 21] {
            let net = Network::new(&small_spec(ModelKind::Cnn1d), 10, l).unwrap();
            let y = net.predict(random_inputs(10, l, 2).view(), None).unwrap();
            assert_eq!(y.nrows(), 10);
        }
        assert!(Network::new(&small_spec(ModelKind::Cnn1d), 10, 2).is_err());
    }

    #[test]
    fn zero_weights_predict_biases() {
        for kind in [ModelKind::Dense, ModelKind::Cnn1d] {
            let mut net = Network::new(&small_spec(kind), 3, 5).unwrap();
            let names: Vec<String> = net.params.names().to_vec();
            for (i, name) in names.iter().enumerate() {
                if name.ends_with(".weight") {
                    net.params.values_mut()[i].fill(0.0);
                }
            }
            let out_bias_name = if kind == ModelKind::Dense { "dense.out.bias" } else { "cnn.out.bias" };
            let bias_idx = names.iter().position(|n| n == out_bias_name).unwrap();
            let bias = net.params.values()[bias_idx].clone();
            let y = net.predict(random_inputs(6, 5, 3).view(), None).unwrap();
            for (r, v) in y.column(0).iter().enumerate() {
                let expected = if kind == ModelKind::Dense { bias[[0, r % 3]] } else { bias[[0, 0]] };
                assert_eq!(*v, expected);
            }
        }
    }

    #[test]
    fn hybrid_requires_matching_adjacency() {
        let net = Network::new(&small_spec(ModelKind::Hybrid), 4, 5).unwrap();
        let x = random_inputs(8, 5, 4);
        assert!(net.predict(x.view(), None).is_err());
        assert!(net.predict(x.view(), Some(ring_adj(3).a_hat.view())).is_err());
        assert!(net.predict(random_inputs(7, 5, 4).view(), Some(ring_adj(4).a_hat.view())).is_err());
    }

    #[test]
    fn lstm_layout_gate_blocks() {
        let net = Network::new(&small_spec(ModelKind::Lstm), 2, 3).unwrap();
        let Layout::Lstm { lstm, .. } = &net.layout else {
            unreachable!()
        };
        let fg = lstm.gate_weight(&net.params, 0, super::super::Gate::Forget);
        assert_eq!(fg.dim(), (1 + 4, 4));
        let cand = lstm.gate_weight(&net.params, 1, super::super::Gate::Candidate);
        assert_eq!(cand.dim(), (4 + 4, 4));
    }

    #[test]
    fn every_architecture_passes_gradient_check() {
        let adj = ring_adj(4);
        let targets = random_inputs(8, 1, 9);
        for kind in [ModelKind::Hybrid, ModelKind::Lstm, ModelKind::Dense, ModelKind::Cnn1d] {
            let mut spec = small_spec(kind);
            spec.train.dropout = 0.0;
            let net = Network::new(&spec, 4, 5).unwrap();
            let x = random_inputs(8, 5, 5);
            let report = gradient_check(net.params.values(), &CheckOptions::default(), |g, vars| {
                let inputs = g.constant(x.clone());
                let mut rng = seeded(0);
                let y = net
                    .forward(g, vars, inputs, Some(adj.a_hat.view()), Mode::Eval, &mut rng)
                    .map_err(|e| match e {
                        ModelError::Grad(e) => e,
                        other => panic!("{other}"),
                    })?;
                g.mse_loss(y, g.constant(targets.clone()))
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{kind}: {report:?}");
        }
    }
}
