//! Plain-text model container.
//!
//! ```text
//! hybridcast-model 1
//! spec {"kind":"hybrid","arch":{...},"train":{...}}
//! stocks 10
//! lookback 11
//! param lstm.l0.weight 33 128
//! <one line per row, values separated by single spaces>
//! ...
//! end
//! ```
//!
//! Values are written in Rust's shortest round-trip form, so a saved model
//! loads back bit for bit. Linear models store one `coefficients` array of
//! shape `N x (L + 1)`.

use std::io::{BufRead, Write};

use ndarray::Array2;

use super::linreg::LinRegModel;
use super::network::Network;
use super::train::TrainedModel;
use super::{ModelError, ModelKind, ModelSpec, Result};
use crate::grad::ParamStore;

pub const FORMAT_HEADER: &str = "hybridcast-model";
pub const FORMAT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> ModelError {
    ModelError::Format(e.to_string())
}

fn write_array<W: Write>(w: &mut W, name: &str, a: &Array2<f64>) -> std::io::Result<()> {
    writeln!(w, "param {name} {} {}", a.nrows(), a.ncols())?;
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn save_model<W: Write>(model: &TrainedModel, mut w: W) -> Result<()> {
    let (spec, stocks, lookback) = match model {
        TrainedModel::Network(n) => (n.spec.clone(), n.n_stocks, n.lookback),
        TrainedModel::Linreg(m) => {
            let mut spec = ModelSpec::new(ModelKind::Linreg);
            spec.train.lookback = m.lookback;
            (spec, m.coefficients.nrows(), m.lookback)
        }
    };
    let json = serde_json::to_string(&spec).map_err(|e| ModelError::Format(e.to_string()))?;
    (|| -> std::io::Result<()> {
        writeln!(w, "{FORMAT_HEADER} {FORMAT_VERSION}")?;
        writeln!(w, "spec {json}")?;
        writeln!(w, "stocks {stocks}")?;
        writeln!(w, "lookback {lookback}")?;
        match model {
            TrainedModel::Network(n) => {
                for (name, a) in n.params.iter() {
                    write_array(&mut w, name, a)?;
                }
            }
            TrainedModel::Linreg(m) => write_array(&mut w, "coefficients", &m.coefficients)?,
        }
        writeln!(w, "end")?;
        w.flush()
    })()
    .map_err(io_err)
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.number += 1;
        match self.inner.next() {
            Some(line) => line.map_err(io_err),
            None => Err(ModelError::Format(format!("unexpected end of file at line {}", self.number))),
        }
    }

    fn tagged(&mut self, tag: &str) -> Result<String> {
        let line = self.next()?;
        line.strip_prefix(tag)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_owned)
            .ok_or_else(|| ModelError::Format(format!("line {}: expected `{tag}`", self.number)))
    }

    fn bad(&self, what: &str) -> ModelError {
        ModelError::Format(format!("line {}: {what}", self.number))
    }
}

fn parse_usize<R: BufRead>(lines: &Lines<R>, s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| lines.bad(&format!("`{s}` is not a count")))
}

pub fn load_model<R: BufRead>(r: R) -> Result<TrainedModel> {
    let mut lines = Lines {
        inner: r.lines(),
        number: 0,
    };
    let version = lines.tagged(FORMAT_HEADER)?;
    if version.trim() != FORMAT_VERSION.to_string() {
        return Err(lines.bad(&format!("unsupported format version {version}")));
    }
    let spec: ModelSpec =
        serde_json::from_str(&lines.tagged("spec")?).map_err(|e| lines.bad(&e.to_string()))?;
    let stocks = lines.tagged("stocks")?;
    let stocks = parse_usize(&lines, &stocks)?;
    let lookback = lines.tagged("lookback")?;
    let lookback = parse_usize(&lines, &lookback)?;

    let mut store = ParamStore::new();
    loop {
        let line = lines.next()?;
        if line == "end" {
            break;
        }
        let head: Vec<&str> = line.split(' ').collect();
        let ["param", name, rows, cols] = head[..] else {
            return Err(lines.bad("expected `param <name> <rows> <cols>` or `end`"));
        };
        let (name, rows, cols) = (name.to_owned(), parse_usize(&lines, rows)?, parse_usize(&lines, cols)?);
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines.next()?;
            let parsed: Vec<f64> = row
                .split(' ')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| lines.bad("malformed value"))?;
            if parsed.len() != cols {
                return Err(lines.bad(&format!("expected {cols} values, found {}", parsed.len())));
            }
            values.extend(parsed);
        }
        let a = Array2::from_shape_vec((rows, cols), values).expect("row lengths checked");
        store.add(name, a);
    }

    if spec.kind == ModelKind::Linreg {
        let [name] = store.names() else {
            return Err(ModelError::Format("linear model needs exactly one array".into()));
        };
        let coefficients = store.values()[0].clone();
        if name != "coefficients" || coefficients.dim() != (stocks, lookback + 1) {
            return Err(ModelError::Format(format!(
                "expected coefficients of shape ({stocks}, {})",
                lookback + 1
            )));
        }
        return Ok(TrainedModel::Linreg(LinRegModel {
            lookback,
            coefficients,
        }));
    }
    Ok(TrainedModel::Network(Network::from_params(&spec, stocks, lookback, store)?))
}
