//! Forecasting architectures and their training loop.
//!
//! Every model maps a batch of lookback windows to one next-day scaled
//! close per stock. Batches are laid out sample-major: row `b * N + i`
//! holds stock `i`'s `L` scaled closes for sample `b`, so recurrent and
//! convolutional layers see each stock as an independent sequence and the
//! graph layers mix the `N` rows of each sample.

mod io;
mod layers;
mod linreg;
mod network;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::GradError;

pub use io::{load_model, save_model, FORMAT_HEADER, FORMAT_VERSION};
pub use layers::{Dense, Gate, GcnLayout, LstmLayout};
pub use linreg::{linreg_fit, linreg_fit_design, LinRegModel, RIDGE_LAMBDA};
pub use network::{batch_inputs, window_inputs, Network};
pub use train::{
    fit_with_early_stopping, train, train_from, EarlyStopping, EpochLosses, EpochRecord, FitOutcome,
    TrainOutcome, TrainedModel, Verdict,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergedLoss { epoch: usize, loss: f64 },
    #[error("least-squares system for stock {stock} is singular even with ridge")]
    SingularSystem { stock: usize },
    #[error("linear regression needs more than {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("model file: {0}")]
    Format(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hybrid,
    Lstm,
    Linreg,
    Dense,
    Cnn1d,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Hybrid,
        ModelKind::Lstm,
        ModelKind::Linreg,
        ModelKind::Cnn1d,
        ModelKind::Dense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hybrid => "hybrid",
            ModelKind::Lstm => "lstm",
            ModelKind::Linreg => "linreg",
            ModelKind::Dense => "dense",
            ModelKind::Cnn1d => "cnn1d",
        }
    }

    pub fn uses_graph(self) -> bool {
        self == ModelKind::Hybrid
    }

    pub fn is_gradient_trained(self) -> bool {
        self != ModelKind::Linreg
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model `{s}` (expected hybrid, lstm, linreg, dense or cnn1d)"))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Layer widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub gcn_hidden: usize,
    pub gcn_out: usize,
    pub fusion_hidden: usize,
    pub dense_hidden: Vec<usize>,
    pub cnn_channels: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            lstm_hidden: 32,
            lstm_layers: 2,
            gcn_hidden: 32,
            gcn_out: 16,
            fusion_hidden: 32,
            dense_hidden: vec![64, 32],
            cnn_channels: 16,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let positive = |field: &'static str, v: usize| {
            if v == 0 {
                Err(ModelError::InvalidConfig {
                    field,
                    reason: "must be positive".into(),
                })
            } else {
                Ok(())
            }
        };
        match kind {
            ModelKind::Hybrid => {
                positive("lstm_hidden", self.lstm_hidden)?;
                positive("lstm_layers", self.lstm_layers)?;
                positive("gcn_hidden", self.gcn_hidden)?;
                positive("gcn_out", self.gcn_out)?;
                positive("fusion_hidden", self.fusion_hidden)
            }
            ModelKind::Lstm => {
                positive("lstm_hidden", self.lstm_hidden)?;
                positive("lstm_layers", self.lstm_layers)?;
                positive("fusion_hidden", self.fusion_hidden)
            }
            ModelKind::Dense => {
                if self.dense_hidden.len() != 2 {
                    return Err(ModelError::InvalidConfig {
                        field: "dense_hidden",
                        reason: "needs exactly two hidden widths".into(),
                    });
                }
                self.dense_hidden
                    .iter()
                    .try_for_each(|&w| positive("dense_hidden", w))
            }
            ModelKind::Cnn1d => positive("cnn_channels", self.cnn_channels),
            ModelKind::Linreg => Ok(()),
        }
    }
}

/// Optimisation settings shared by every gradient-trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Days of history per sample.
    pub lookback: usize,
    /// Epoch cap.
    pub epochs: usize,
    /// Samples per Adam step; 0 means the whole training split.
    pub batch_size: usize,
    pub dropout: f64,
    pub patience: usize,
    pub min_delta: f64,
    /// Chronological tail of the samples held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            lookback: 11,
            epochs: 40,
            batch_size: 32,
            dropout: 0.5,
            patience: 5,
            min_delta: 1e-6,
            validation_fraction: 0.1,
            seed: 42,
        }
    }
}

pub const MIN_EPOCHS: usize = 10;
pub const MAX_EPOCHS: usize = 50;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(ModelError::InvalidConfig { field, reason });
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be > 0, got {}", self.learning_rate));
        }
        if self.lookback == 0 {
            return bad("lookback", "must be positive".into());
        }
        if !(MIN_EPOCHS..=MAX_EPOCHS).contains(&self.epochs) {
            return bad(
                "epochs",
                format!("must lie in {MIN_EPOCHS}..={MAX_EPOCHS}, got {}", self.epochs),
            );
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("must lie in [0, 1), got {}", self.dropout));
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1".into());
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad("min_delta", format!("must be >= 0, got {}", self.min_delta));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(
                "validation_fraction",
                format!("must lie in [0, 1), got {}", self.validation_fraction),
            );
        }
        Ok(())
    }
}

/// Which architecture to build and how to train it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
        }
    }

    pub fn with_train(mut self, train: TrainConfig) -> Self {
        self.train = train;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate(self.kind)?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_best_configuration() {
        let t = TrainConfig::default();
        assert_eq!((t.learning_rate, t.lookback, t.epochs), (0.005, 11, 40));
        assert_eq!(t.patience, 5);
        assert_eq!(t.dropout, 0.5);
        assert!(ModelSpec::new(ModelKind::Hybrid).validate().is_ok());
    }

    #[test]
    fn validation_names_the_field() {
        let mut t = TrainConfig::default();
        t.learning_rate = 0.0;
        assert!(matches!(
            t.validate(),
            Err(ModelError::InvalidConfig {
                field: "learning_rate",
                ..
            })
        ));
        let t = TrainConfig {
            epochs: 60,
            ..Default::default()
        };
        assert!(matches!(
            t.validate(),
            Err(ModelError::InvalidConfig { field: "epochs", .. })
        ));
        let a = ArchConfig {
            dense_hidden: vec![8],
            ..Default::default()
        };
        assert!(a.validate(ModelKind::Dense).is_err());
        assert!(a.validate(ModelKind::Hybrid).is_ok());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("gru".parse::<ModelKind>().is_err());
    }
}
