//! Textual descriptions of service distributions.
//!
//! A distribution is given either inline,
//!
//! | shorthand                   | meaning                                  |
//! |-----------------------------|------------------------------------------|
//! | `exp:mu`                    | exponential with rate `mu`               |
//! | `erlang:m,eta`              | `m` phases of rate `eta`                 |
//! | `hyperexp:w1,..,wm;r1,..,rm`| mixture of exponentials                  |
//! | `coxian2:eta,xi1,xi2`       | canonical order-2 form                   |
//!
//! or as a path to a JSON document `{"alpha": [..], "T": [[..], ..]}`.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ph::PhaseType;

/// On-disk form of a PH representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhDocument {
    pub alpha: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
}

impl From<&PhaseType> for PhDocument {
    fn from(ph: &PhaseType) -> Self {
        Self { alpha: ph.alpha().to_vec(), t: ph.generator_rows() }
    }
}

impl TryFrom<PhDocument> for PhaseType {
    type Error = Error;

    fn try_from(doc: PhDocument) -> Result<Self> {
        PhaseType::new(doc.alpha, doc.t)
    }
}

impl PhDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Parse { input: text.chars().take(60).collect(), reason: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numbers serialize")
    }
}

/// A parsed `--dist` argument.
#[derive(Debug, Clone, PartialEq)]
pub enum DistSpec {
    Exponential { mu: f64 },
    Erlang { m: usize, eta: f64 },
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
    Coxian2 { eta: f64, xi1: f64, xi2: f64 },
    Document(PhDocument),
}

impl DistSpec {
    pub fn build(&self) -> Result<PhaseType> {
        match self {
            DistSpec::Exponential { mu } => PhaseType::exponential(*mu),
            DistSpec::Erlang { m, eta } => PhaseType::erlang(*m, *eta),
            DistSpec::HyperExponential { weights, rates } => PhaseType::hyper_exponential(weights, rates),
            DistSpec::Coxian2 { eta, xi1, xi2 } => PhaseType::coxian2(*eta, *xi1, *xi2),
            DistSpec::Document(doc) => PhaseType::try_from(doc.clone()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Ok(DistSpec::Document(PhDocument::from_json(&text)?))
    }
}

fn numbers(input: &str, list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|e| Error::Parse { input: input.into(), reason: format!("`{s}`: {e}") })
        })
        .collect()
}

impl FromStr for DistSpec {
    type Err = Error;

    /// Parses the inline shorthand; anything without a known `kind:` prefix is
    /// read as a path to a JSON document.
    fn from_str(input: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Parse { input: input.into(), reason: reason.into() };
        let Some((kind, args)) = input.split_once(':') else {
            return DistSpec::load(Path::new(input));
        };
        match kind.trim() {
            "exp" => match numbers(input, args)?.as_slice() {
                [mu] => Ok(DistSpec::Exponential { mu: *mu }),
                _ => Err(bad("expected exp:mu")),
            },
            "erlang" => match numbers(input, args)?.as_slice() {
                [m, eta] if m.fract() == 0.0 && *m >= 1.0 => Ok(DistSpec::Erlang { m: *m as usize, eta: *eta }),
                _ => Err(bad("expected erlang:m,eta with integer m >= 1")),
            },
            "hyperexp" => {
                let (w, r) = args.split_once(';').ok_or_else(|| bad("expected hyperexp:w1,..;r1,.."))?;
                Ok(DistSpec::HyperExponential { weights: numbers(input, w)?, rates: numbers(input, r)? })
            }
            "coxian2" => match numbers(input, args)?.as_slice() {
                [eta, xi1, xi2] => Ok(DistSpec::Coxian2 { eta: *eta, xi1: *xi1, xi2: *xi2 }),
                _ => Err(bad("expected coxian2:eta,xi1,xi2")),
            },
            _ => DistSpec::load(Path::new(input)),
        }
    }
}

/// Parses and validates a `--dist` argument in one step.
pub fn parse_dist(input: &str) -> Result<PhaseType> {
    input.parse::<DistSpec>()?.build()
}
