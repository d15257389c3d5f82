use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;

use super::linreg::{linreg_fit, LinRegModel};
use super::network::{batch_inputs, Network};
use super::{ModelError, ModelKind, ModelSpec, Result};
use crate::grad::{adam_step, AdamState, GradError, Graph, Mode};
use crate::market_data::WindowDataset;
use crate::relation_graph::NormAdj;
use crate::rng::{derive_seed, seeded};

/// Losses reported by one epoch of some optimiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub train: f64,
    /// The monitored loss.
    pub validation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    /// The epoch is the best so far; keep its parameters.
    pub snapshot: bool,
    pub stop: bool,
}

/// Patience-based stopping rule.
///
/// The snapshot follows the lowest loss seen. The patience counter resets
/// only on an improvement of more than `min_delta` over the loss at the last
/// such reset, so training halts `patience` epochs after the last
/// significant improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    best_epoch: Option<usize>,
    reference: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: None,
            reference: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        let snapshot = loss < self.best;
        if snapshot {
            self.best = loss;
            self.best_epoch = Some(epoch);
        }
        if loss < self.reference - self.min_delta || self.reference.is_infinite() {
            self.reference = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Verdict {
            snapshot,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome<P> {
    pub best: P,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Runs `epoch` up to `max_epochs` times on `params`, keeping a copy of the
/// parameters at the best monitored loss and stopping per `stopper`.
/// `epoch` receives the 1-based epoch number.
pub fn fit_with_early_stopping<P, E, F>(
    max_epochs: usize,
    mut stopper: EarlyStopping,
    params: &mut P,
    mut epoch: F,
) -> std::result::Result<FitOutcome<P>, E>
where
    P: Clone,
    F: FnMut(usize, &mut P) -> std::result::Result<EpochLosses, E>,
{
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(max_epochs);
    let mut stopped_early = false;
    for e in 1..=max_epochs {
        let losses = epoch(e, params)?;
        history.push(EpochRecord {
            epoch: e,
            train_loss: losses.train,
            val_loss: losses.validation,
        });
        let verdict = stopper.observe(e, losses.validation);
        if verdict.snapshot {
            best = params.clone();
            best_epoch = e;
        }
        if verdict.stop {
            stopped_early = e < max_epochs;
            break;
        }
    }
    Ok(FitOutcome {
        best,
        best_epoch,
        history,
        stopped_early,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Network(Network),
    Linreg(LinRegModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Network(n) => n.kind(),
            TrainedModel::Linreg(_) => ModelKind::Linreg,
        }
    }

    /// `(B * N) x L` inputs to `(B * N) x 1` predictions.
    pub fn predict(&self, inputs: ArrayView2<f64>, adj: Option<&NormAdj>) -> Result<Array2<f64>> {
        match self {
            TrainedModel::Network(n) => n.predict(inputs, adj.map(|a| a.a_hat.view())),
            TrainedModel::Linreg(m) => m.predict(inputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let diff = pred - target;
    diff.mapv(|d| d * d).mean().unwrap_or(f64::NAN)
}

fn diverged(epoch: usize) -> impl Fn(GradError) -> ModelError {
    move |e| match e {
        GradError::NonFinite(_) => ModelError::DivergedLoss {
            epoch,
            loss: f64::NAN,
        },
        other => ModelError::Grad(other),
    }
}

/// Trains `spec` on `ds` from a fresh initialisation. The chronological
/// tail of `ds` is held out for early stopping; without a tail the epoch's
/// training loss is monitored. `adj` is required by graph models and
/// ignored otherwise.
pub fn train(spec: &ModelSpec, ds: &WindowDataset, adj: Option<&NormAdj>) -> Result<TrainOutcome> {
    train_from(spec, ds, adj, None)
}

/// As [`train`], but starting from `init`'s parameters when given. `init`
/// must have the architecture `spec` describes.
pub fn train_from(
    spec: &ModelSpec,
    ds: &WindowDataset,
    adj: Option<&NormAdj>,
    init: Option<&TrainedModel>,
) -> Result<TrainOutcome> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if ds.lookback != spec.train.lookback {
        return Err(ModelError::ShapeMismatch(format!(
            "dataset lookback {} differs from configured {}",
            ds.lookback, spec.train.lookback
        )));
    }
    if spec.kind == ModelKind::Linreg {
        let model = linreg_fit(ds)?;
        let (x, y) = batch_inputs(ds, &(0..ds.len()).collect::<Vec<_>>());
        let loss = mse(&model.predict(x.view())?, &y);
        return Ok(TrainOutcome {
            model: TrainedModel::Linreg(model),
            history: vec![EpochRecord {
                epoch: 1,
                train_loss: loss,
                val_loss: loss,
            }],
            best_epoch: 1,
            stopped_early: false,
        });
    }
    let adj_view = match (spec.kind.uses_graph(), adj) {
        (true, None) => {
            return Err(ModelError::ShapeMismatch(format!(
                "{} model needs a graph",
                spec.kind
            )))
        }
        (_, a) => a.map(|a| a.a_hat.view()),
    };

    let tc = &spec.train;
    let n_val = if tc.validation_fraction > 0.0 && ds.len() > 1 {
        ((ds.len() as f64 * tc.validation_fraction).round() as usize).clamp(1, ds.len() - 1)
    } else {
        0
    };
    let n_train = ds.len() - n_val;
    let (val_x, val_y) = batch_inputs(ds, &(n_train..ds.len()).collect::<Vec<_>>());
    let batch = if tc.batch_size == 0 { n_train } else { tc.batch_size };

    let mut net = match init {
        Some(TrainedModel::Network(prev)) => {
            Network::from_params(spec, ds.n_tickers(), ds.lookback, prev.params.clone())?
        }
        Some(TrainedModel::Linreg(_)) => {
            return Err(ModelError::InvalidConfig {
                field: "kind",
                reason: "cannot warm-start a network from a linear model".into(),
            })
        }
        None => Network::new(spec, ds.n_tickers(), ds.lookback)?,
    };
    let mut adam = AdamState::new(tc.learning_rate, net.params.values());
    let mut shuffle_rng = seeded(derive_seed(tc.seed, 1));
    let mut dropout_rng = seeded(derive_seed(tc.seed, 2));
    let mut order: Vec<usize> = (0..n_train).collect();

    let outcome = fit_with_early_stopping(
        tc.epochs,
        EarlyStopping::new(tc.patience, tc.min_delta),
        &mut net,
        |epoch, net| -> Result<EpochLosses> {
            order.shuffle(&mut shuffle_rng);
            let mut weighted = 0.0;
            for chunk in order.chunks(batch) {
                let (x, y) = batch_inputs(ds, chunk);
                let g = Graph::new();
                let vars = net.params.bind(&g);
                let inputs = g.constant(x);
                let pred = net.forward(&g, &vars, inputs, adj_view, Mode::Train, &mut dropout_rng)?;
                let loss = g.mse_loss(pred, g.constant(y)).map_err(diverged(epoch))?;
                let value = g.scalar(loss);
                let grads = g.backward(loss).map_err(diverged(epoch))?;
                adam_step(net.params.values_mut(), &grads.collect(&vars), &mut adam)?;
                weighted += value * chunk.len() as f64;
            }
            let train = weighted / n_train as f64;
            if !train.is_finite() || !net.params.all_finite() {
                return Err(ModelError::DivergedLoss { epoch, loss: train });
            }
            let validation = if n_val > 0 {
                mse(&net.predict(val_x.view(), adj_view)?, &val_y)
            } else {
                train
            };
            if !validation.is_finite() {
                return Err(ModelError::DivergedLoss {
                    epoch,
                    loss: validation,
                });
            }
            Ok(EpochLosses { train, validation })
        },
    )?;
    Ok(TrainOutcome {
        model: TrainedModel::Network(outcome.best),
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
    })
}
