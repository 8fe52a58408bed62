//! Scenario files: a TOML schema mirroring [`Scenario`]. Parse errors carry
//! the line and column from the TOML parser; schema violations surface as
//! validation diagnostics.
//!
//! Top-level keys: `items`, `matchings` (each `mu`, `reward`), `arrivals`,
//! `m`, `beta`, `gamma`, `utility`, `holding_costs`, `completion_policy`,
//! `horizon`, `seed`, `rate_changes`. See the repository README for the full
//! schema and examples under `scenarios/`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_scenario, ArrivalModel, CompletionPolicy, Diagnostic, MatchingSpec, Scenario,
    UtilitySpec,
};

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema violations:\n{}", .0.iter().map(|d| format!("  - {d}")).collect::<Vec<_>>().join("\n"))]
    Schema(Vec<Diagnostic>),
    #[error("cannot serialize: {0}")]
    Serialize(String),
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    items: Vec<String>,
    matchings: Vec<MatchingDoc>,
    arrivals: ArrivalsDoc,
    m: usize,
    beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    utility: Option<UtilityDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    holding_costs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    completion_policy: Option<String>,
    horizon: u64,
    seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rate_changes: Vec<RateChangeDoc>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct MatchingDoc {
    mu: Vec<f64>,
    reward: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ArrivalsDoc {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    rates: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batches: Option<Vec<BatchDoc>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct BatchDoc {
    batch: Vec<f64>,
    prob: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
enum UtilityDoc {
    Name(String),
    Weighted {
        kind: String,
        coefficients: Vec<f64>,
    },
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RateChangeDoc {
    slot: u64,
    arrivals: ArrivalsDoc,
}

fn arrivals_from_doc(doc: &ArrivalsDoc) -> Result<ArrivalModel, ScenarioFileError> {
    match doc.kind.as_str() {
        "independent-poisson" => {
            let rates = doc.rates.clone().ok_or_else(|| {
                ScenarioFileError::Schema(vec![Diagnostic::new(
                    "arrivals",
                    "independent-poisson requires `rates`",
                )])
            })?;
            Ok(ArrivalModel::IndependentPoisson { rates })
        }
        "batch-table" => {
            let batches = doc.batches.as_ref().ok_or_else(|| {
                ScenarioFileError::Schema(vec![Diagnostic::new(
                    "arrivals",
                    "batch-table requires `batches`",
                )])
            })?;
            Ok(ArrivalModel::BatchTable {
                batches: batches.iter().map(|b| (b.batch.clone(), b.prob)).collect(),
            })
        }
        other => Err(ScenarioFileError::Schema(vec![Diagnostic::new(
            "arrivals",
            format!("unknown arrival kind '{other}'"),
        )])),
    }
}

fn arrivals_to_doc(model: &ArrivalModel) -> ArrivalsDoc {
    match model {
        ArrivalModel::IndependentPoisson { rates } => ArrivalsDoc {
            kind: "independent-poisson".into(),
            rates: Some(rates.clone()),
            batches: None,
        },
        ArrivalModel::BatchTable { batches } => ArrivalsDoc {
            kind: "batch-table".into(),
            rates: None,
            batches: Some(
                batches
                    .iter()
                    .map(|(batch, prob)| BatchDoc {
                        batch: batch.clone(),
                        prob: *prob,
                    })
                    .collect(),
            ),
        },
    }
}

/// Parses a scenario from TOML text without validating the model invariants.
pub fn from_toml_str(text: &str) -> Result<Scenario, ScenarioFileError> {
    let doc: ScenarioDoc =
        toml::from_str(text).map_err(|e| ScenarioFileError::Parse(e.to_string()))?;
    let n = doc.items.len();
    let utility = match &doc.utility {
        None => UtilitySpec::LinearSum,
        Some(UtilityDoc::Name(name)) if name == "linear-sum" => UtilitySpec::LinearSum,
        Some(UtilityDoc::Name(name)) => {
            return Err(ScenarioFileError::Schema(vec![Diagnostic::new(
                "utility",
                format!("unknown utility '{name}' (files support linear-sum and weighted-linear)"),
            )]))
        }
        Some(UtilityDoc::Weighted { kind, coefficients }) if kind == "weighted-linear" => {
            UtilitySpec::WeightedLinear(coefficients.clone())
        }
        Some(UtilityDoc::Weighted { kind, .. }) => {
            return Err(ScenarioFileError::Schema(vec![Diagnostic::new(
                "utility",
                format!("unknown utility kind '{kind}'"),
            )]))
        }
    };
    let completion_policy = match doc.completion_policy.as_deref() {
        None | Some("fcfs") => CompletionPolicy::Fcfs,
        Some("cost-priority") => CompletionPolicy::CostPriority,
        Some(other) => {
            return Err(ScenarioFileError::Schema(vec![Diagnostic::new(
                "completion_policy",
                format!("unknown policy '{other}' (expected fcfs or cost-priority)"),
            )]))
        }
    };
    let mut rate_changes = Vec::with_capacity(doc.rate_changes.len());
    for rc in &doc.rate_changes {
        rate_changes.push((rc.slot, arrivals_from_doc(&rc.arrivals)?));
    }
    Ok(Scenario {
        item_labels: doc.items.clone(),
        matchings: doc
            .matchings
            .iter()
            .enumerate()
            .map(|(id, m)| MatchingSpec::new(id, m.mu.clone(), m.reward))
            .collect(),
        arrivals: arrivals_from_doc(&doc.arrivals)?,
        m: doc.m,
        beta: doc.beta,
        gamma: doc.gamma.clone().unwrap_or_else(|| vec![1.0; n]),
        utility,
        holding_costs: doc.holding_costs.clone().unwrap_or_else(|| vec![0.0; n]),
        completion_policy,
        horizon: doc.horizon,
        seed: doc.seed,
        rate_changes,
    })
}

/// Parses and validates; schema violations become an error listing every
/// diagnostic.
pub fn load_str(text: &str) -> Result<Scenario, ScenarioFileError> {
    let scenario = from_toml_str(text)?;
    let diags = validate_scenario(&scenario);
    if diags.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioFileError::Schema(diags))
    }
}

pub fn load(path: &std::path::Path) -> Result<Scenario, ScenarioFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_str(&text)
}

/// Serializes a scenario back to TOML. Callable utilities have no file form.
pub fn to_toml_string(s: &Scenario) -> Result<String, ScenarioFileError> {
    let utility = match &s.utility {
        UtilitySpec::LinearSum => Some(UtilityDoc::Name("linear-sum".into())),
        UtilitySpec::WeightedLinear(c) => Some(UtilityDoc::Weighted {
            kind: "weighted-linear".into(),
            coefficients: c.clone(),
        }),
        UtilitySpec::ConcaveCallable(u) => {
            return Err(ScenarioFileError::Serialize(format!(
                "callable utility '{}' cannot be written to a file",
                u.name()
            )))
        }
    };
    let doc = ScenarioDoc {
        items: s.item_labels.clone(),
        matchings: s
            .matchings
            .iter()
            .map(|m| MatchingDoc {
                mu: m.mu.clone(),
                reward: m.reward,
            })
            .collect(),
        arrivals: arrivals_to_doc(&s.arrivals),
        m: s.m,
        beta: s.beta,
        gamma: Some(s.gamma.clone()),
        utility,
        holding_costs: Some(s.holding_costs.clone()),
        completion_policy: Some(
            match s.completion_policy {
                CompletionPolicy::Fcfs => "fcfs",
                CompletionPolicy::CostPriority => "cost-priority",
            }
            .into(),
        ),
        horizon: s.horizon,
        seed: s.seed,
        rate_changes: s
            .rate_changes
            .iter()
            .map(|(slot, model)| RateChangeDoc {
                slot: *slot,
                arrivals: arrivals_to_doc(model),
            })
            .collect(),
    };
    toml::to_string_pretty(&doc).map_err(|e| ScenarioFileError::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::presets;

    #[test]
    fn round_trip_preserves_presets() {
        for s in [
            presets::experiment_a(),
            presets::experiment_c(),
            presets::bipartite_profit(),
        ] {
            let text = to_toml_string(&s).unwrap();
            let back = load_str(&text).unwrap();
            assert_eq!(back.canonical_string(), s.canonical_string());
        }
    }

    #[test]
    fn parse_error_cites_line() {
        let text = "items = [\"a\"]\nmatchings = 7\n";
        let err = from_toml_str(text).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn schema_violation_lists_diagnostics() {
        let text = r#"
items = ["1", "2"]
m = 1
beta = 0.0
horizon = 10
seed = 1

[arrivals]
kind = "independent-poisson"
rates = [1.0, 1.0]

[[matchings]]
mu = [0.0, 0.0]
reward = 0.0
"#;
        match load_str(text) {
            Err(ScenarioFileError::Schema(diags)) => {
                assert!(diags.iter().any(|d| d.message.contains("beta must be positive")));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn weighted_utility_parses() {
        let text = r#"
items = ["1"]
m = 1
beta = 0.5
horizon = 10
seed = 1
utility = { kind = "weighted-linear", coefficients = [2.0, 1.0] }

[arrivals]
kind = "independent-poisson"
rates = [1.0]

[[matchings]]
mu = [0.0]
reward = 0.0

[[matchings]]
mu = [1.0]
reward = 1.0
"#;
        let s = load_str(text).unwrap();
        assert!(matches!(s.utility, UtilitySpec::WeightedLinear(_)));
    }
}
