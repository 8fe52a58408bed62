//! Domain types: matching scenarios, general network models, utility
//! specifications, and validation. Structural checkers (drift feasibility,
//! subspace reduction, bipartite stabilizability) live in [`checks`].
//!
//! All types are immutable after construction and safe to share read-only
//! across parallel workers.

pub mod checks;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("exhaustive check infeasible: {count} free nodes exceeds the cap of {max} (2^n subsets)")]
    TooManyFreeNodes { count: usize, max: usize },
    #[error("NCond requires connected matching graph")]
    DisconnectedMatchingGraph,
    #[error("tolerance must be positive, got {0}")]
    NonPositiveTolerance(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// A single validation finding. Validation reports findings instead of
/// failing, so a caller can show all problems at once.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// One matching: the per-type item requirements `mu` and the reward earned
/// per activation. Entries of `mu` may be any sign; a negative entry means
/// the matching adds items of that type, and such items are always considered
/// available when completing the matching physically.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchingSpec {
    /// Position in `Scenario::matchings`; index 0 is the empty matching.
    pub id: usize,
    pub mu: Vec<f64>,
    pub reward: f64,
}

impl MatchingSpec {
    pub fn new(id: usize, mu: Vec<f64>, reward: f64) -> Self {
        Self { id, mu, reward }
    }

    /// Total number of items consumed by one activation.
    pub fn size(&self) -> f64 {
        self.mu.iter().sum()
    }
}

/// Per-slot batch arrival law. Exactly one batch lands per slot.
#[derive(Clone, Debug, PartialEq)]
pub enum ArrivalModel {
    /// Independent Poisson counts per item type, per slot.
    IndependentPoisson { rates: Vec<f64> },
    /// Finite table of (batch vector, probability).
    BatchTable { batches: Vec<(Vec<f64>, f64)> },
}

impl ArrivalModel {
    pub fn n_items(&self) -> usize {
        match self {
            ArrivalModel::IndependentPoisson { rates } => rates.len(),
            ArrivalModel::BatchTable { batches } => {
                batches.first().map(|(b, _)| b.len()).unwrap_or(0)
            }
        }
    }

    /// Mean items per slot, per type.
    pub fn mean_rates(&self) -> Vec<f64> {
        match self {
            ArrivalModel::IndependentPoisson { rates } => rates.clone(),
            ArrivalModel::BatchTable { batches } => {
                let n = self.n_items();
                let mut mean = vec![0.0; n];
                for (batch, p) in batches {
                    for (m, b) in mean.iter_mut().zip(batch) {
                        *m += p * b;
                    }
                }
                mean
            }
        }
    }

    pub fn sample(&self, rng: &mut SimRng) -> Vec<f64> {
        match self {
            ArrivalModel::IndependentPoisson { rates } => {
                rates.iter().map(|&r| rng.poisson(r) as f64).collect()
            }
            ArrivalModel::BatchTable { batches } => {
                let probs: Vec<f64> = batches.iter().map(|(_, p)| *p).collect();
                batches[rng.categorical(&probs)].0.clone()
            }
        }
    }

    pub fn validate(&self, n_items: usize, field: &str, out: &mut Vec<Diagnostic>) {
        match self {
            ArrivalModel::IndependentPoisson { rates } => {
                if rates.len() != n_items {
                    out.push(Diagnostic::new(
                        field,
                        format!("expected {} rates, got {}", n_items, rates.len()),
                    ));
                }
                if rates.iter().any(|r| !r.is_finite() || *r <= 0.0) {
                    out.push(Diagnostic::new(field, "all arrival rates must be positive"));
                }
            }
            ArrivalModel::BatchTable { batches } => {
                if batches.is_empty() {
                    out.push(Diagnostic::new(field, "batch table must not be empty"));
                    return;
                }
                let total: f64 = batches.iter().map(|(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-12 {
                    out.push(Diagnostic::new(field, "probabilities must sum to 1"));
                }
                if batches.iter().any(|(_, p)| *p < 0.0) {
                    out.push(Diagnostic::new(field, "probabilities must be nonnegative"));
                }
                if batches.iter().any(|(b, _)| b.len() != n_items) {
                    out.push(Diagnostic::new(field, "batch vectors must match the item count"));
                }
                if self.mean_rates().iter().any(|&a| a <= 0.0) {
                    out.push(Diagnostic::new(field, "all derived arrival rates must be positive"));
                }
            }
        }
    }
}

/// User-supplied concave utility with an explicit gradient, defined on an open
/// superset of the reachable running-average set.
pub trait ConcaveUtility: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Utility over the per-matching running reward averages.
#[derive(Clone)]
pub enum UtilitySpec {
    /// `G(X) = sum_j X_j`
    LinearSum,
    /// `G(X) = sum_j c_j X_j`
    WeightedLinear(Vec<f64>),
    /// Arbitrary concave `G` with caller-supplied gradient.
    ConcaveCallable(Arc<dyn ConcaveUtility>),
}

impl fmt::Debug for UtilitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilitySpec::LinearSum => write!(f, "LinearSum"),
            UtilitySpec::WeightedLinear(c) => write!(f, "WeightedLinear({c:?})"),
            UtilitySpec::ConcaveCallable(u) => write!(f, "ConcaveCallable({})", u.name()),
        }
    }
}

impl UtilitySpec {
    pub fn is_linear(&self) -> bool {
        !matches!(self, UtilitySpec::ConcaveCallable(_))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            UtilitySpec::LinearSum => x.iter().sum(),
            UtilitySpec::WeightedLinear(c) => crate::linalg::dot(c, x),
            UtilitySpec::ConcaveCallable(u) => u.value(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            UtilitySpec::LinearSum => vec![1.0; x.len()],
            UtilitySpec::WeightedLinear(c) => c.clone(),
            UtilitySpec::ConcaveCallable(u) => u.gradient(x),
        }
    }

    /// Startup validation: a callable utility must have finite gradients that
    /// agree with central finite differences (relative tolerance 1e-4) at 10
    /// seeded random probe points inside `[-probe_box, probe_box]^dim`.
    pub fn validate(&self, dim: usize, probe_box: f64, out: &mut Vec<Diagnostic>) {
        match self {
            UtilitySpec::LinearSum => {}
            UtilitySpec::WeightedLinear(c) => {
                if c.len() != dim {
                    out.push(Diagnostic::new(
                        "utility",
                        format!("expected {} coefficients, got {}", dim, c.len()),
                    ));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    out.push(Diagnostic::new("utility", "coefficients must be finite"));
                }
            }
            UtilitySpec::ConcaveCallable(u) => {
                let mut rng = SimRng::with_stream(0x9E3779B97F4A7C15, 77);
                let span = if probe_box > 0.0 { probe_box } else { 1.0 };
                let h = 1e-5 * span.max(1.0);
                for p in 0..10 {
                    let x: Vec<f64> = (0..dim).map(|_| rng.uniform_in(-span, span)).collect();
                    let g = u.gradient(&x);
                    if g.len() != dim || g.iter().any(|v| !v.is_finite()) {
                        out.push(Diagnostic::new(
                            "utility",
                            format!("gradient not finite at probe point {p}"),
                        ));
                        continue;
                    }
                    for i in 0..dim {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[i] += h;
                        xm[i] -= h;
                        let fd = (u.value(&xp) - u.value(&xm)) / (2.0 * h);
                        let scale = g[i].abs().max(fd.abs()).max(1e-8);
                        if (fd - g[i]).abs() / scale > 1e-4 {
                            out.push(Diagnostic::new(
                                "utility",
                                format!(
                                    "gradient disagrees with finite differences at probe {p}, coordinate {i}: {} vs {}",
                                    g[i], fd
                                ),
                            ));
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CompletionPolicy {
    /// Complete the first completable matching in arrival order.
    Fcfs,
    /// Among completable matchings, complete the one with the largest held
    /// holding cost `c . mu(j)`, first-come tie-break.
    CostPriority,
}

/// A complete matching scenario: the physical system, the controller gain and
/// weights, the objective, and the run plan.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub item_labels: Vec<String>,
    pub matchings: Vec<MatchingSpec>,
    pub arrivals: ArrivalModel,
    /// Matchings activated per slot.
    pub m: usize,
    /// Controller gain.
    pub beta: f64,
    /// Per-item queue weights in the control rule.
    pub gamma: Vec<f64>,
    pub utility: UtilitySpec,
    /// Per item per slot, applied to physical queue lengths.
    pub holding_costs: Vec<f64>,
    pub completion_policy: CompletionPolicy,
    pub horizon: u64,
    pub seed: u64,
    /// `(slot, new model)`: the arrival law swaps at the start of that slot.
    pub rate_changes: Vec<(u64, ArrivalModel)>,
}

impl Scenario {
    pub fn n_items(&self) -> usize {
        self.item_labels.len()
    }

    pub fn n_matchings(&self) -> usize {
        self.matchings.len()
    }

    /// `max_j sum_i mu_i(j)`, the largest matching size.
    pub fn mu_star(&self) -> f64 {
        self.matchings
            .iter()
            .map(|m| m.size())
            .fold(0.0, f64::max)
    }

    pub fn max_reward(&self) -> f64 {
        self.matchings
            .iter()
            .map(|m| m.reward)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.matchings.iter().map(|m| m.reward).collect()
    }

    /// Canonical text form used for digests. Stable across runs; includes
    /// every field that affects the dynamics.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("items={:?}\n", self.item_labels));
        for m in &self.matchings {
            s.push_str(&format!("matching {} mu={:?} w={}\n", m.id, m.mu, m.reward));
        }
        s.push_str(&format!("arrivals={:?}\n", self.arrivals));
        s.push_str(&format!(
            "m={} beta={} gamma={:?} utility={:?} holding={:?} policy={:?} horizon={} seed={}\n",
            self.m,
            self.beta,
            self.gamma,
            self.utility,
            self.holding_costs,
            self.completion_policy,
            self.horizon,
            self.seed
        ));
        for (slot, model) in &self.rate_changes {
            s.push_str(&format!("change@{slot}={model:?}\n"));
        }
        s
    }
}

/// Checks every scenario invariant and returns one diagnostic per violation.
/// An empty list means the scenario is well formed.
pub fn validate_scenario(s: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = s.n_items();
    if n == 0 {
        out.push(Diagnostic::new("items", "at least one item type required"));
    }
    if s.matchings.is_empty() {
        out.push(Diagnostic::new("matchings", "at least the empty matching is required"));
    } else {
        let first = &s.matchings[0];
        if first.mu.iter().any(|&v| v != 0.0) || first.reward != 0.0 {
            out.push(Diagnostic::new(
                "matchings",
                "index 0 must be the empty matching (all-zero mu, reward 0)",
            ));
        }
        for (i, m) in s.matchings.iter().enumerate() {
            if m.id != i {
                out.push(Diagnostic::new(
                    "matchings",
                    format!("matching at position {i} has id {}", m.id),
                ));
            }
            if m.mu.len() != n {
                out.push(Diagnostic::new(
                    "matchings",
                    format!("matching {i} has {} mu entries, expected {n}", m.mu.len()),
                ));
            }
            if m.mu.iter().any(|v| !v.is_finite()) || !m.reward.is_finite() {
                out.push(Diagnostic::new("matchings", format!("matching {i} has non-finite data")));
            }
        }
    }
    s.arrivals.validate(n, "arrivals", &mut out);
    for (slot, model) in &s.rate_changes {
        model.validate(n, "rate_changes", &mut out);
        if *slot >= s.horizon {
            out.push(Diagnostic::new(
                "rate_changes",
                format!("change slot {slot} is outside the horizon {}", s.horizon),
            ));
        }
    }
    if s.m < 1 {
        out.push(Diagnostic::new("m", "m must be at least 1"));
    }
    if !(s.beta > 0.0) {
        out.push(Diagnostic::new("beta", "beta must be positive"));
    }
    if s.gamma.len() != n {
        out.push(Diagnostic::new("gamma", format!("expected {n} weights, got {}", s.gamma.len())));
    }
    if s.gamma.iter().any(|&g| !(g > 0.0)) {
        out.push(Diagnostic::new("gamma", "all gamma weights must be positive"));
    }
    if s.holding_costs.len() != n {
        out.push(Diagnostic::new(
            "holding_costs",
            format!("expected {n} costs, got {}", s.holding_costs.len()),
        ));
    }
    if s.holding_costs.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        out.push(Diagnostic::new("holding_costs", "holding costs must be nonnegative"));
    }
    if s.horizon < 1 {
        out.push(Diagnostic::new("horizon", "horizon must be at least 1"));
    }
    let probe = s
        .matchings
        .iter()
        .map(|m| m.reward.abs())
        .fold(1.0, f64::max);
    s.utility.validate(s.n_matchings(), probe, &mut out);
    out
}

/// Per-control arrival law in a general network. Sampled once per step for
/// the chosen control.
#[derive(Clone, Debug, PartialEq)]
pub enum ArrivalSpec {
    None,
    Deterministic(Vec<f64>),
    PoissonPerNode(Vec<f64>),
    Batches(Vec<(Vec<f64>, f64)>),
}

impl ArrivalSpec {
    pub fn mean(&self, n_nodes: usize) -> Vec<f64> {
        match self {
            ArrivalSpec::None => vec![0.0; n_nodes],
            ArrivalSpec::Deterministic(v) => v.clone(),
            ArrivalSpec::PoissonPerNode(rates) => rates.clone(),
            ArrivalSpec::Batches(batches) => {
                let mut mean = vec![0.0; n_nodes];
                for (batch, p) in batches {
                    for (m, b) in mean.iter_mut().zip(batch) {
                        *m += p * b;
                    }
                }
                mean
            }
        }
    }

    pub fn sample(&self, n_nodes: usize, rng: &mut SimRng) -> Vec<f64> {
        match self {
            ArrivalSpec::None => vec![0.0; n_nodes],
            ArrivalSpec::Deterministic(v) => v.clone(),
            ArrivalSpec::PoissonPerNode(rates) => {
                rates.iter().map(|&r| rng.poisson(r) as f64).collect()
            }
            ArrivalSpec::Batches(batches) => {
                let probs: Vec<f64> = batches.iter().map(|(_, p)| *p).collect();
                batches[rng.categorical(&probs)].0.clone()
            }
        }
    }
}

/// One control: deterministic removals plus a random arrival law.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSpec {
    pub label: String,
    /// Removal per node. A negative entry adds items deterministically.
    pub removal: Vec<f64>,
    pub arrivals: ArrivalSpec,
}

/// How arrivals are generated across steps.
#[derive(Clone, Debug, PartialEq)]
pub enum ArrivalProcess {
    /// Each step samples the chosen control's own `ArrivalSpec`.
    PerControl,
    /// One shared batch lands every `rounds_per_slot` steps on the node block
    /// starting at `first_node`; other steps see zero arrivals. This is the
    /// step structure of a matching system embedded as a network.
    SlottedShared {
        model: ArrivalModel,
        rounds_per_slot: usize,
        first_node: usize,
    },
}

/// General controlled network: `n_constrained` nonnegative queues followed by
/// `n_free` signed queues, and a finite control set.
#[derive(Clone, Debug)]
pub struct NetworkModel {
    pub n_constrained: usize,
    pub n_free: usize,
    pub controls: Vec<ControlSpec>,
    pub arrival_process: ArrivalProcess,
    /// Extra known drift directions in free coordinates, carried through
    /// subspace reduction so reducing twice is a no-op.
    pub extra_drift_directions: Vec<Vec<f64>>,
}

impl NetworkModel {
    pub fn n_nodes(&self) -> usize {
        self.n_constrained + self.n_free
    }

    pub fn is_constrained(&self, node: usize) -> bool {
        node < self.n_constrained
    }

    /// Mean per-step increment of queue lengths under control `k`, ignoring
    /// truncation at zero.
    pub fn mean_increment(&self, k: usize) -> Vec<f64> {
        let n = self.n_nodes();
        let ctl = &self.controls[k];
        let mut mean = match &self.arrival_process {
            ArrivalProcess::PerControl => ctl.arrivals.mean(n),
            ArrivalProcess::SlottedShared {
                model,
                rounds_per_slot,
                first_node,
            } => {
                let mut v = vec![0.0; n];
                let per_round = 1.0 / *rounds_per_slot as f64;
                for (i, rate) in model.mean_rates().iter().enumerate() {
                    v[first_node + i] = rate * per_round;
                }
                v
            }
        };
        for (m, r) in mean.iter_mut().zip(&ctl.removal) {
            *m -= r;
        }
        mean
    }

    pub fn mean_increments(&self) -> Vec<Vec<f64>> {
        (0..self.controls.len())
            .map(|k| self.mean_increment(k))
            .collect()
    }

    /// Arrivals realized at step `t` (the step that moves the clock from `t`
    /// to `t+1`) when control `k` is active.
    pub fn sample_arrivals(&self, k: usize, t: u64, rng: &mut SimRng) -> Vec<f64> {
        let n = self.n_nodes();
        match &self.arrival_process {
            ArrivalProcess::PerControl => self.controls[k].arrivals.sample(n, rng),
            ArrivalProcess::SlottedShared {
                model,
                rounds_per_slot,
                first_node,
            } => {
                let mut v = vec![0.0; n];
                if (t + 1) % *rounds_per_slot as u64 == 0 {
                    for (i, x) in model.sample(rng).into_iter().enumerate() {
                        v[first_node + i] = x;
                    }
                }
                v
            }
        }
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let n = self.n_nodes();
        if self.controls.is_empty() {
            out.push(Diagnostic::new("controls", "at least one control required"));
        }
        for (k, c) in self.controls.iter().enumerate() {
            if c.removal.len() != n {
                out.push(Diagnostic::new(
                    "controls",
                    format!("control {k} removal has {} entries, expected {n}", c.removal.len()),
                ));
            }
            if c.removal.iter().any(|v| !v.is_finite()) {
                out.push(Diagnostic::new("controls", format!("control {k} removal not finite")));
            }
            match &c.arrivals {
                ArrivalSpec::Batches(batches) => {
                    let total: f64 = batches.iter().map(|(_, p)| p).sum();
                    if (total - 1.0).abs() > 1e-12 {
                        out.push(Diagnostic::new(
                            "controls",
                            format!("control {k} batch probabilities must sum to 1"),
                        ));
                    }
                }
                ArrivalSpec::Deterministic(v) | ArrivalSpec::PoissonPerNode(v) => {
                    if v.len() != n {
                        out.push(Diagnostic::new(
                            "controls",
                            format!("control {k} arrival vector has wrong length"),
                        ));
                    }
                }
                ArrivalSpec::None => {}
            }
        }
        for d in &self.extra_drift_directions {
            if d.len() != self.n_free {
                out.push(Diagnostic::new(
                    "extra_drift_directions",
                    "directions must live in free coordinates",
                ));
            }
        }
        out
    }
}

/// Utility over network drift vectors.
pub trait NetworkUtility: Send + Sync {
    fn value(&self, v: &[f64]) -> f64;
    fn gradient(&self, v: &[f64]) -> Vec<f64>;
    /// Linear coefficient view when the utility is affine, used to route LP
    /// solves. `Some((coeffs, constant))` with `value(v) = coeffs . v + constant`.
    fn linear_parts(&self) -> Option<(Vec<f64>, f64)> {
        None
    }
}

/// Affine utility `value(v) = coeffs . v + constant`.
#[derive(Clone, Debug)]
pub struct LinearUtility {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl LinearUtility {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs, constant: 0.0 }
    }
}

impl NetworkUtility for LinearUtility {
    fn value(&self, v: &[f64]) -> f64 {
        crate::linalg::dot(&self.coeffs, v) + self.constant
    }

    fn gradient(&self, _v: &[f64]) -> Vec<f64> {
        self.coeffs.clone()
    }

    fn linear_parts(&self) -> Option<(Vec<f64>, f64)> {
        Some((self.coeffs.clone(), self.constant))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scenario with two items and matchings {empty, <1,2>}.
    fn tiny_scenario() -> Scenario {
        Scenario {
            item_labels: vec!["1".into(), "2".into()],
            matchings: vec![
                MatchingSpec::new(0, vec![0.0, 0.0], 0.0),
                MatchingSpec::new(1, vec![1.0, 1.0], 1.0),
            ],
            arrivals: ArrivalModel::IndependentPoisson { rates: vec![1.0, 1.0] },
            m: 1,
            beta: 0.1,
            gamma: vec![1.0, 1.0],
            utility: UtilitySpec::LinearSum,
            holding_costs: vec![0.0, 0.0],
            completion_policy: CompletionPolicy::Fcfs,
            horizon: 10,
            seed: 1,
            rate_changes: vec![],
        }
    }

    #[test]
    fn valid_scenario_has_no_diagnostics() {
        assert!(validate_scenario(&tiny_scenario()).is_empty());
    }

    #[test]
    fn zero_beta_is_flagged() {
        let mut s = tiny_scenario();
        s.beta = 0.0;
        let diags = validate_scenario(&s);
        assert!(diags.iter().any(|d| d.message.contains("beta must be positive")));
    }

    #[test]
    fn bad_batch_probabilities_flagged() {
        let mut s = tiny_scenario();
        s.arrivals = ArrivalModel::BatchTable {
            batches: vec![(vec![1.0, 0.0], 0.5), (vec![0.0, 1.0], 0.4)],
        };
        let diags = validate_scenario(&s);
        assert!(diags.iter().any(|d| d.message.contains("probabilities must sum to 1")));
    }

    #[test]
    fn batch_table_mean_matches_definition() {
        let model = ArrivalModel::BatchTable {
            batches: vec![(vec![1.0, 1.0], 0.25), (vec![2.0, 0.0], 0.75)],
        };
        let mean = model.mean_rates();
        assert!((mean[0] - 1.75).abs() < 1e-12);
        assert!((mean[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn concave_utility_with_wrong_gradient_is_rejected() {
        struct Bad;
        impl ConcaveUtility for Bad {
            fn name(&self) -> &str {
                "bad"
            }
            fn value(&self, x: &[f64]) -> f64 {
                -x.iter().map(|v| v * v).sum::<f64>()
            }
            fn gradient(&self, x: &[f64]) -> Vec<f64> {
                x.iter().map(|v| -v).collect() // missing the factor 2
            }
        }
        let u = UtilitySpec::ConcaveCallable(Arc::new(Bad));
        let mut out = Vec::new();
        u.validate(3, 1.0, &mut out);
        assert!(!out.is_empty());
    }

    #[test]
    fn concave_utility_with_correct_gradient_passes() {
        struct Good;
        impl ConcaveUtility for Good {
            fn name(&self) -> &str {
                "neg-sq"
            }
            fn value(&self, x: &[f64]) -> f64 {
                -x.iter().map(|v| v * v).sum::<f64>()
            }
            fn gradient(&self, x: &[f64]) -> Vec<f64> {
                x.iter().map(|v| -2.0 * v).collect()
            }
        }
        let u = UtilitySpec::ConcaveCallable(Arc::new(Good));
        let mut out = Vec::new();
        u.validate(3, 5.0, &mut out);
        assert!(out.is_empty(), "{out:?}");
    }

    #[test]
    fn slotted_mean_increment_divides_by_rounds() {
        let net = NetworkModel {
            n_constrained: 0,
            n_free: 2,
            controls: vec![ControlSpec {
                label: "noop".into(),
                removal: vec![0.0, 0.0],
                arrivals: ArrivalSpec::None,
            }],
            arrival_process: ArrivalProcess::SlottedShared {
                model: ArrivalModel::IndependentPoisson { rates: vec![1.2, 0.8] },
                rounds_per_slot: 4,
                first_node: 0,
            },
            extra_drift_directions: vec![],
        };
        let b = net.mean_increment(0);
        assert!((b[0] - 0.3).abs() < 1e-12);
        assert!((b[1] - 0.2).abs() < 1e-12);
    }
}
