//! The virtual/physical matching scheme.
//!
//! A shadow "virtual" system with signed queues makes all matching decisions;
//! activated matchings wait in a FIFO of incomplete matchings until the
//! physical items to complete them have arrived. Each slot runs `m` decision
//! rounds (select, activate virtually, try one completion) and then receives
//! one arrival batch, which becomes available the next slot.
//!
//! [`map_to_network`] embeds the virtual controller into the general network
//! engine: one constrained node per matching, one free node per item type.
//! Both controllers then score decisions identically up to a state constant,
//! which [`lockstep_decisions_match`] exercises.

use std::collections::VecDeque;

use thiserror::Error;

use crate::engine::{self, NetState};
use crate::model::{
    ArrivalModel, ArrivalProcess, CompletionPolicy, ControlSpec, NetworkModel, NetworkUtility,
    Scenario, UtilitySpec,
};
use crate::rng::SimRng;

#[derive(Debug, Error)]
pub enum MatchingError {
    #[error("utility gradient is not finite at coordinate {coord}")]
    NonFiniteGradient { coord: usize },
    #[error("mapping constant {c} must exceed the maximum reward {max_reward}")]
    MappingConstantTooSmall { c: f64, max_reward: f64 },
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
}

/// Virtual system state: signed item queues and per-matching running reward
/// averages. `t` counts decision rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualState {
    pub q: Vec<f64>,
    pub x: Vec<f64>,
    pub t: u64,
}

impl VirtualState {
    pub fn zeros(s: &Scenario) -> Self {
        Self {
            q: vec![0.0; s.n_items()],
            x: vec![0.0; s.n_matchings()],
            t: 0,
        }
    }
}

/// Physical system state: nonnegative item queues plus the FIFO of incomplete
/// matchings. `pending_mu` caches the componentwise requirement of everything
/// in the FIFO, so the conservation identity is checked in O(items).
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalState {
    pub qhat: Vec<f64>,
    pub pending: VecDeque<usize>,
    pending_mu: Vec<f64>,
}

impl PhysicalState {
    pub fn zeros(s: &Scenario) -> Self {
        Self {
            qhat: vec![0.0; s.n_items()],
            pending: VecDeque::new(),
            pending_mu: vec![0.0; s.n_items()],
        }
    }

    /// Length of the incomplete-matchings queue.
    pub fn qhat0(&self) -> usize {
        self.pending.len()
    }

    /// Componentwise requirement of all pending matchings.
    pub fn pending_requirement(&self) -> &[f64] {
        &self.pending_mu
    }

    fn push_pending(&mut self, j: usize, s: &Scenario) {
        self.pending.push_back(j);
        for (acc, mu) in self.pending_mu.iter_mut().zip(&s.matchings[j].mu) {
            *acc += mu;
        }
    }

    fn complete_at(&mut self, idx: usize, s: &Scenario) -> usize {
        let j = self.pending.remove(idx).expect("pending index in range");
        for ((acc, qh), mu) in self
            .pending_mu
            .iter_mut()
            .zip(self.qhat.iter_mut())
            .zip(&s.matchings[j].mu)
        {
            *acc -= mu;
            *qh -= mu;
        }
        j
    }
}

/// Scores of the control rule for every matching:
/// `dG/dX_j * w_j + sum_i beta * gamma_i * Q_i * mu_i(j)`.
pub fn matching_scores(v: &VirtualState, s: &Scenario) -> Result<Vec<f64>, MatchingError> {
    let grad = s.utility.gradient(&v.x);
    if let Some(coord) = grad.iter().position(|g| !g.is_finite()) {
        return Err(MatchingError::NonFiniteGradient { coord });
    }
    Ok(s.matchings
        .iter()
        .map(|mspec| {
            let mut score = grad[mspec.id] * mspec.reward;
            for i in 0..s.n_items() {
                score += s.beta * s.gamma[i] * v.q[i] * mspec.mu[i];
            }
            score
        })
        .collect())
}

/// The virtual controller's decision: argmax of [`matching_scores`], exact
/// ties broken toward the lowest matching index.
pub fn select_matching(v: &VirtualState, s: &Scenario) -> Result<usize, MatchingError> {
    let scores = matching_scores(v, s)?;
    let mut best = 0;
    for (j, sc) in scores.iter().enumerate().skip(1) {
        if *sc > scores[best] {
            best = j;
        }
    }
    // Lowest index among exact ties is the first maximum, which the scan
    // above already preserves.
    Ok(best)
}

/// Virtual activation: queues drop by the requirement; the chosen matching's
/// running average pulls toward its reward, all others decay.
pub fn activate_virtual(v: &mut VirtualState, j: usize, s: &Scenario) {
    for (q, mu) in v.q.iter_mut().zip(&s.matchings[j].mu) {
        *q -= mu;
    }
    let beta = s.beta;
    for (jj, x) in v.x.iter_mut().enumerate() {
        if jj == j {
            *x = (1.0 - beta) * *x + beta * s.matchings[j].reward;
        } else {
            *x *= 1.0 - beta;
        }
    }
    v.t += 1;
}

/// One full virtual transition: activation of `j` followed by the arrival
/// batch `lambda`.
pub fn virtual_step(v: &mut VirtualState, j: usize, s: &Scenario, lambda: &[f64]) {
    activate_virtual(v, j, s);
    for (q, l) in v.q.iter_mut().zip(lambda) {
        *q += l;
    }
}

/// Per-matching positive requirements and held holding cost, precomputed so
/// the FIFO scan touches only the coordinates that can block a completion.
/// Nonpositive requirements are vacuously satisfied (such components add
/// items on completion).
struct CompletionIndex {
    positive_req: Vec<Vec<(usize, f64)>>,
    held_cost: Vec<f64>,
}

impl CompletionIndex {
    fn new(s: &Scenario) -> Self {
        let positive_req = s
            .matchings
            .iter()
            .map(|m| {
                m.mu
                    .iter()
                    .enumerate()
                    .filter(|(_, mu)| **mu > 0.0)
                    .map(|(i, mu)| (i, *mu))
                    .collect()
            })
            .collect();
        let held_cost = s
            .matchings
            .iter()
            .map(|m| crate::linalg::dot(&s.holding_costs, &m.mu))
            .collect();
        Self {
            positive_req,
            held_cost,
        }
    }

    #[inline]
    fn completable(&self, qhat: &[f64], j: usize) -> bool {
        self.positive_req[j]
            .iter()
            .all(|&(i, mu)| qhat[i] + 1e-9 >= mu)
    }
}

fn complete_one_indexed(p: &mut PhysicalState, s: &Scenario, idx: &CompletionIndex) -> Option<usize> {
    match s.completion_policy {
        CompletionPolicy::Fcfs => {
            let pos = p
                .pending
                .iter()
                .position(|&j| idx.completable(&p.qhat, j))?;
            Some(p.complete_at(pos, s))
        }
        CompletionPolicy::CostPriority => {
            let mut best: Option<(usize, f64)> = None;
            for (pos, &j) in p.pending.iter().enumerate() {
                if idx.completable(&p.qhat, j) {
                    let cost = idx.held_cost[j];
                    match best {
                        Some((_, c0)) if cost <= c0 => {}
                        _ => best = Some((pos, cost)),
                    }
                }
            }
            best.map(|(pos, _)| p.complete_at(pos, s))
        }
    }
}

/// Tries to complete one incomplete matching. FCFS scans for the first
/// completable one; cost-priority picks the completable matching with the
/// largest held holding cost `c . mu(j)`, first-come tie-break. At most one
/// completion per call; returns the completed matching id, if any.
pub fn complete_one(p: &mut PhysicalState, s: &Scenario) -> Option<usize> {
    complete_one_indexed(p, s, &CompletionIndex::new(s))
}

/// Everything that happened during one slot.
#[derive(Clone, Debug, Default)]
pub struct SlotDelta {
    pub virtual_activations: Vec<usize>,
    pub completions: Vec<usize>,
    pub arrivals: Vec<f64>,
}

/// One slot of the scheme: `m` rounds of (select, activate virtually, attempt
/// one completion), then one arrival batch added to both systems. Arrivals
/// land after the rounds, so they are available only from the next slot.
pub fn scheme_step(
    v: &mut VirtualState,
    p: &mut PhysicalState,
    s: &Scenario,
    arrivals: &ArrivalModel,
    rng: &mut SimRng,
) -> Result<SlotDelta, MatchingError> {
    let idx = CompletionIndex::new(s);
    let mut delta = SlotDelta::default();
    for _ in 0..s.m {
        let j = select_matching(v, s)?;
        activate_virtual(v, j, s);
        delta.virtual_activations.push(j);
        if j != 0 {
            p.push_pending(j, s);
        }
        if let Some(done) = complete_one_indexed(p, s, &idx) {
            delta.completions.push(done);
        }
    }
    let lambda = arrivals.sample(rng);
    for ((q, qh), l) in v.q.iter_mut().zip(p.qhat.iter_mut()).zip(&lambda) {
        *q += l;
        *qh += l;
    }
    delta.arrivals = lambda;
    Ok(delta)
}

/// Count of invariant violations observed during a run; all zero on a
/// correct implementation.
#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct ViolationCounters {
    /// Pending-count bound: `qhat0 <= sum_i Q_i^-`.
    pub pending_bound: u64,
    /// Total-queue bound: `sum qhat <= sum Q^+ + mu_star * sum Q^-`.
    pub total_bound: u64,
    /// Conservation identity `qhat - Q = sum of pending requirements`.
    pub conservation: u64,
    /// Dominance `Q_i <= qhat_i`.
    pub dominance: u64,
    pub slots_checked: u64,
}

impl ViolationCounters {
    pub fn total(&self) -> u64 {
        self.pending_bound + self.total_bound + self.conservation + self.dominance
    }
}

/// Checks the queue-relation bounds and the conservation identity. The
/// bounds are evaluated at the pre-arrival instant (after the slot's rounds,
/// before the batch that becomes available next slot); the conservation
/// identity holds at every instant.
pub fn check_invariants(v: &VirtualState, p: &PhysicalState, s: &Scenario, out: &mut ViolationCounters) {
    out.slots_checked += 1;
    let qm: f64 = v.q.iter().map(|x| (-x).max(0.0)).sum();
    let qp: f64 = v.q.iter().map(|x| x.max(0.0)).sum();
    let qhat_sum: f64 = p.qhat.iter().sum();
    if p.qhat0() as f64 > qm + 1e-9 {
        out.pending_bound += 1;
    }
    if qhat_sum > qp + s.mu_star() * qm + 1e-9 {
        out.total_bound += 1;
    }
    for ((q, qh), need) in v.q.iter().zip(&p.qhat).zip(p.pending_requirement()) {
        if (qh - q - need).abs() > 1e-9 {
            out.conservation += 1;
            break;
        }
    }
    if v.q.iter().zip(&p.qhat).any(|(q, qh)| *q > *qh + 1e-9) {
        out.dominance += 1;
    }
}

/// Per-slot metrics snapshot (taken at the end of a slot, after arrivals).
#[derive(Clone, Debug)]
pub struct MetricsRow {
    /// Slots elapsed (the snapshot is after slot `t - 1`).
    pub t: u64,
    /// Cumulative virtual activation rate per nonempty matching.
    pub virtual_rates: Vec<f64>,
    /// Cumulative completion rate per nonempty matching.
    pub completed_rates: Vec<f64>,
    pub avg_reward: f64,
    pub avg_holding_cost: f64,
    pub avg_profit: f64,
    pub q: Vec<f64>,
    pub qhat: Vec<f64>,
    pub qhat0: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SchemeOptions {
    /// Keep every `stride`-th slot in the metrics rows (0 = auto).
    pub stride: u64,
    /// Half-open slot window for the windowed completion counts.
    pub window: Option<(u64, u64)>,
}

/// Full simulation output of [`run_scheme`].
#[derive(Clone, Debug)]
pub struct SchemeRun {
    pub slots: u64,
    pub rows: Vec<MetricsRow>,
    pub virtual_counts: Vec<u64>,
    pub completed_counts: Vec<u64>,
    pub window_completed_counts: Vec<u64>,
    pub window_slots: u64,
    pub virtual_reward: f64,
    pub completed_reward: f64,
    pub holding_cost: f64,
    pub final_virtual: VirtualState,
    pub final_physical: PhysicalState,
    pub violations: ViolationCounters,
    /// Time-average of `mean_i |Q_i|` over all slots and over the second half.
    pub mean_abs_q: f64,
    pub mean_abs_q_second_half: f64,
}

impl SchemeRun {
    /// Average completed reward per slot over the whole run.
    pub fn avg_completed_reward(&self) -> f64 {
        self.completed_reward / self.slots as f64
    }

    pub fn avg_holding_cost(&self) -> f64 {
        self.holding_cost / self.slots as f64
    }

    pub fn avg_profit(&self) -> f64 {
        self.avg_completed_reward() - self.avg_holding_cost()
    }

    /// The controller's internal average reward, rescaled to per-slot units.
    pub fn internal_avg_reward(&self, s: &Scenario) -> f64 {
        s.m as f64 * self.final_virtual.x.iter().sum::<f64>()
    }

    pub fn completed_rates(&self) -> Vec<f64> {
        self.completed_counts
            .iter()
            .skip(1)
            .map(|&c| c as f64 / self.slots as f64)
            .collect()
    }

    pub fn virtual_rates(&self) -> Vec<f64> {
        self.virtual_counts
            .iter()
            .skip(1)
            .map(|&c| c as f64 / self.slots as f64)
            .collect()
    }

    pub fn window_completed_rates(&self) -> Vec<f64> {
        let slots = self.window_slots.max(1) as f64;
        self.window_completed_counts
            .iter()
            .skip(1)
            .map(|&c| c as f64 / slots)
            .collect()
    }
}

/// Runs the scheme from the zero state for the scenario's horizon, applying
/// rate changes and recording metrics. Deterministic in `(scenario, stream)`.
pub fn run_scheme(s: &Scenario, stream: u64, opts: &SchemeOptions) -> Result<SchemeRun, MatchingError> {
    let j = s.n_matchings();
    let mut rng = SimRng::with_stream(s.seed, stream);
    let mut v = VirtualState::zeros(s);
    let mut p = PhysicalState::zeros(s);
    let mut virtual_counts = vec![0u64; j];
    let mut completed_counts = vec![0u64; j];
    let mut window_completed_counts = vec![0u64; j];
    let mut virtual_reward = 0.0;
    let mut completed_reward = 0.0;
    let mut holding_cost = 0.0;
    let mut violations = ViolationCounters::default();
    let mut rows = Vec::new();
    let mut abs_q_sum = 0.0;
    let mut abs_q_second = 0.0;

    let stride = if opts.stride == 0 {
        (s.horizon / 2000).max(1)
    } else {
        opts.stride
    };
    let mut changes: Vec<(u64, ArrivalModel)> = s.rate_changes.clone();
    changes.sort_by_key(|(slot, _)| *slot);
    let mut change_idx = 0;
    let mut arrivals = s.arrivals.clone();
    let completion_index = CompletionIndex::new(s);

    for slot in 0..s.horizon {
        while change_idx < changes.len() && changes[change_idx].0 == slot {
            arrivals = changes[change_idx].1.clone();
            change_idx += 1;
        }
        let mut delta = SlotDelta::default();
        for _ in 0..s.m {
            let jj = select_matching(&v, s)?;
            activate_virtual(&mut v, jj, s);
            delta.virtual_activations.push(jj);
            if jj != 0 {
                p.push_pending(jj, s);
            }
            if let Some(done) = complete_one_indexed(&mut p, s, &completion_index) {
                delta.completions.push(done);
            }
        }
        check_invariants(&v, &p, s, &mut violations);
        let lambda = arrivals.sample(&mut rng);
        for ((q, qh), l) in v.q.iter_mut().zip(p.qhat.iter_mut()).zip(&lambda) {
            *q += l;
            *qh += l;
        }

        for &jj in &delta.virtual_activations {
            virtual_counts[jj] += 1;
            virtual_reward += s.matchings[jj].reward;
        }
        let in_window = opts.window.map(|(a, b)| slot >= a && slot < b).unwrap_or(false);
        for &jj in &delta.completions {
            completed_counts[jj] += 1;
            completed_reward += s.matchings[jj].reward;
            if in_window {
                window_completed_counts[jj] += 1;
            }
        }
        holding_cost += crate::linalg::dot(&s.holding_costs, &p.qhat);
        let mean_abs = v.q.iter().map(|x| x.abs()).sum::<f64>() / s.n_items() as f64;
        abs_q_sum += mean_abs;
        if slot >= s.horizon / 2 {
            abs_q_second += mean_abs;
        }

        if (slot + 1) % stride == 0 || slot + 1 == s.horizon {
            let elapsed = (slot + 1) as f64;
            rows.push(MetricsRow {
                t: slot + 1,
                virtual_rates: virtual_counts.iter().skip(1).map(|&c| c as f64 / elapsed).collect(),
                completed_rates: completed_counts.iter().skip(1).map(|&c| c as f64 / elapsed).collect(),
                avg_reward: completed_reward / elapsed,
                avg_holding_cost: holding_cost / elapsed,
                avg_profit: (completed_reward - holding_cost) / elapsed,
                q: v.q.clone(),
                qhat: p.qhat.clone(),
                qhat0: p.qhat0(),
            });
        }
    }

    let window_slots = opts.window.map(|(a, b)| b.saturating_sub(a)).unwrap_or(0);
    let second_half_slots = s.horizon - s.horizon / 2;
    Ok(SchemeRun {
        slots: s.horizon,
        rows,
        virtual_counts,
        completed_counts,
        window_completed_counts,
        window_slots,
        virtual_reward,
        completed_reward,
        holding_cost,
        final_virtual: v,
        final_physical: p,
        violations,
        mean_abs_q: abs_q_sum / s.horizon as f64,
        mean_abs_q_second_half: abs_q_second / second_half_slots.max(1) as f64,
    })
}

/// Metrics CSV: `t, virtual_rate_j..., completed_rate_j..., avg_reward,
/// avg_holding_cost, avg_profit, Q_i..., Qhat_i..., Qhat0`.
pub fn metrics_csv(run: &SchemeRun, s: &Scenario) -> String {
    let mut out = String::from("t");
    for jj in 1..s.n_matchings() {
        out.push_str(&format!(",virtual_rate_{jj}"));
    }
    for jj in 1..s.n_matchings() {
        out.push_str(&format!(",completed_rate_{jj}"));
    }
    out.push_str(",avg_reward,avg_holding_cost,avg_profit");
    for i in 1..=s.n_items() {
        out.push_str(&format!(",Q_{i}"));
    }
    for i in 1..=s.n_items() {
        out.push_str(&format!(",Qhat_{i}"));
    }
    out.push_str(",Qhat0\n");
    for row in &run.rows {
        out.push_str(&row.t.to_string());
        for v in row
            .virtual_rates
            .iter()
            .chain(row.completed_rates.iter())
            .chain([row.avg_reward, row.avg_holding_cost, row.avg_profit].iter())
            .chain(row.q.iter())
            .chain(row.qhat.iter())
        {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", row.qhat0));
    }
    out
}

/// Utility of the embedded network: the scenario utility applied to the
/// constrained (per-matching) coordinates shifted by the mapping constant.
#[derive(Clone, Debug)]
pub struct MappedUtility {
    pub g: UtilitySpec,
    pub c: f64,
    pub n_matchings: usize,
    pub n_nodes: usize,
}

impl NetworkUtility for MappedUtility {
    fn value(&self, v: &[f64]) -> f64 {
        let shifted: Vec<f64> = v[..self.n_matchings].iter().map(|x| x + self.c).collect();
        self.g.value(&shifted)
    }

    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let shifted: Vec<f64> = v[..self.n_matchings].iter().map(|x| x + self.c).collect();
        let mut grad = self.g.gradient(&shifted);
        grad.resize(self.n_nodes, 0.0);
        grad
    }

    fn linear_parts(&self) -> Option<(Vec<f64>, f64)> {
        match &self.g {
            UtilitySpec::LinearSum => {
                let mut coeffs = vec![1.0; self.n_matchings];
                coeffs.resize(self.n_nodes, 0.0);
                Some((coeffs, self.c * self.n_matchings as f64))
            }
            UtilitySpec::WeightedLinear(w) => {
                let mut coeffs = w.clone();
                coeffs.resize(self.n_nodes, 0.0);
                Some((coeffs, self.c * w.iter().sum::<f64>()))
            }
            UtilitySpec::ConcaveCallable(_) => None,
        }
    }
}

/// The matching scenario embedded as a general network, together with the
/// state embedding.
#[derive(Clone, Debug)]
pub struct MappedNetwork {
    pub net: NetworkModel,
    pub c: f64,
    pub utility: MappedUtility,
    /// Per-node queue weights: 1 on the matching nodes, scenario gamma on items.
    pub gamma: Vec<f64>,
    /// Embedded initial running average (matching coordinates at `-c`, item
    /// coordinates centered at zero).
    pub x0: Vec<f64>,
    pub q0: Vec<f64>,
    /// First item node index (= number of matchings).
    pub item_offset: usize,
}

impl MappedNetwork {
    /// Embeds a virtual matching state into network coordinates.
    pub fn embed(&self, v: &VirtualState) -> NetState {
        let mut x = vec![0.0; self.net.n_nodes()];
        for (jj, xv) in v.x.iter().enumerate() {
            x[jj] = xv - self.c;
        }
        let mut q = vec![0.0; self.net.n_nodes()];
        for (i, qv) in v.q.iter().enumerate() {
            q[self.item_offset + i] = *qv;
        }
        NetState { q, x, t: v.t }
    }
}

/// Default mapping constant: one above the largest reward.
pub fn default_mapping_constant(s: &Scenario) -> f64 {
    s.max_reward() + 1.0
}

/// Builds the network with one constrained node per matching (no arrivals,
/// removal `c - w_j` at its own coordinate and `c` at the others) and one
/// free node per item type fed by the slot arrivals.
pub fn map_to_network(s: &Scenario, c: f64) -> Result<MappedNetwork, MatchingError> {
    let max_reward = s.max_reward();
    if c <= max_reward {
        return Err(MatchingError::MappingConstantTooSmall { c, max_reward });
    }
    let j = s.n_matchings();
    let n = j + s.n_items();
    let controls: Vec<ControlSpec> = s
        .matchings
        .iter()
        .map(|mspec| {
            let mut removal = vec![c; j];
            removal[mspec.id] = c - mspec.reward;
            removal.extend(mspec.mu.iter().copied());
            ControlSpec {
                label: format!("matching-{}", mspec.id),
                removal,
                arrivals: crate::model::ArrivalSpec::None,
            }
        })
        .collect();
    let net = NetworkModel {
        n_constrained: j,
        n_free: s.n_items(),
        controls,
        arrival_process: ArrivalProcess::SlottedShared {
            model: s.arrivals.clone(),
            rounds_per_slot: s.m,
            first_node: j,
        },
        extra_drift_directions: vec![],
    };
    let utility = MappedUtility {
        g: s.utility.clone(),
        c,
        n_matchings: j,
        n_nodes: n,
    };
    let mut gamma = vec![1.0; j];
    gamma.extend(s.gamma.iter().copied());
    let mut x0 = vec![-c; j];
    x0.resize(n, 0.0);
    Ok(MappedNetwork {
        net,
        c,
        utility,
        gamma,
        x0,
        q0: vec![0.0; n],
        item_offset: j,
    })
}

/// Drives the virtual controller and the network engine on the embedded
/// model in lockstep with a shared arrival stream, and reports whether every
/// decision matched over `slots` slots (ties must break identically).
pub fn lockstep_decisions_match(
    s: &Scenario,
    c: f64,
    slots: u64,
    seed: u64,
) -> Result<bool, MatchingError> {
    let mapped = map_to_network(s, c)?;
    let increments = mapped.net.mean_increments();
    let mut rng = SimRng::with_stream(seed, 0);
    let mut v = VirtualState::zeros(s);
    let mut net_state = NetState::new(mapped.q0.clone(), mapped.x0.clone());
    let n = mapped.net.n_nodes();

    for _ in 0..slots {
        let mut lambda_net = vec![0.0; n];
        for round in 0..s.m {
            let j1 = select_matching(&v, s)?;
            let d2 = engine::select_control_cached(
                &net_state,
                &increments,
                &mapped.utility,
                s.beta,
                &mapped.gamma,
            )?;
            if j1 != d2.control {
                return Ok(false);
            }
            activate_virtual(&mut v, j1, s);
            if round + 1 == s.m {
                let batch = s.arrivals.sample(&mut rng);
                for (i, b) in batch.iter().enumerate() {
                    lambda_net[mapped.item_offset + i] = *b;
                }
                for (q, b) in v.q.iter_mut().zip(&batch) {
                    *q += b;
                }
            }
            engine::step_with_arrivals(&mut net_state, &mapped.net, j1, s.beta, &lambda_net);
            lambda_net.iter_mut().for_each(|x| *x = 0.0);
        }
        // Constrained queues of the mapped network stay at zero.
        debug_assert!(net_state.q[..mapped.item_offset].iter().all(|&q| q == 0.0));
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MatchingSpec;
    use approx::assert_abs_diff_eq;

    fn experiment_like_scenario() -> Scenario {
        // Item types 1..4; matchings: empty, <1>, <2>, <3>, <4>, <1,2>,
        // <2,3>, <2,3,4> with rewards (0,-1,-1,1,2,5,4,7).
        let mus = [
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 1.0, 0.0],
            vec![0.0, 1.0, 1.0, 1.0],
        ];
        let rewards = [0.0, -1.0, -1.0, 1.0, 2.0, 5.0, 4.0, 7.0];
        Scenario {
            item_labels: vec!["1".into(), "2".into(), "3".into(), "4".into()],
            matchings: mus
                .iter()
                .zip(rewards)
                .enumerate()
                .map(|(id, (mu, w))| MatchingSpec::new(id, mu.clone(), w))
                .collect(),
            arrivals: ArrivalModel::IndependentPoisson {
                rates: vec![1.2, 1.5, 2.0, 0.8],
            },
            m: 4,
            beta: 0.01,
            gamma: vec![1.0; 4],
            utility: UtilitySpec::LinearSum,
            holding_costs: vec![0.0; 4],
            completion_policy: CompletionPolicy::Fcfs,
            horizon: 100,
            seed: 7,
            rate_changes: vec![],
        }
    }

    #[test]
    fn zero_queues_select_max_reward() {
        let s = experiment_like_scenario();
        let v = VirtualState::zeros(&s);
        assert_eq!(select_matching(&v, &s).unwrap(), 7); // reward 7
    }

    #[test]
    fn deep_shortage_discourages_item_three() {
        let mut s = experiment_like_scenario();
        s.beta = 0.01;
        let mut v = VirtualState::zeros(&s);
        v.q = vec![0.0, 0.0, -1000.0, 0.0];
        // Every matching touching item 3 pays 0.01 * 1000 = 10 > max reward;
        // among the rest <1,2> has the top reward 5.
        assert_eq!(select_matching(&v, &s).unwrap(), 5);
    }

    #[test]
    fn all_zero_rewards_tie_to_empty() {
        let mut s = experiment_like_scenario();
        for m in s.matchings.iter_mut() {
            m.reward = 0.0;
        }
        let v = VirtualState::zeros(&s);
        assert_eq!(select_matching(&v, &s).unwrap(), 0);
    }

    #[test]
    fn virtual_step_empty_matching_decays_averages() {
        let s = experiment_like_scenario();
        let mut v = VirtualState::zeros(&s);
        v.x = vec![1.0; 8];
        v.q = vec![1.0, -1.0, 0.0, 2.0];
        let q_before = v.q.clone();
        virtual_step(&mut v, 0, &s, &[0.0; 4]);
        assert_eq!(v.q, q_before);
        // Chosen matching 0 has reward 0, so every average shrinks by 1-beta.
        for x in &v.x {
            assert_abs_diff_eq!(*x, 0.99, epsilon = 1e-12);
        }
    }

    #[test]
    fn virtual_step_queue_arithmetic() {
        let mut s = experiment_like_scenario();
        s.item_labels = vec!["1".into(), "2".into()];
        s.matchings = vec![
            MatchingSpec::new(0, vec![0.0, 0.0], 0.0),
            MatchingSpec::new(1, vec![1.0, 1.0], 1.0),
        ];
        s.gamma = vec![1.0, 1.0];
        let mut v = VirtualState {
            q: vec![1.0, -1.0],
            x: vec![0.0, 0.0],
            t: 0,
        };
        virtual_step(&mut v, 1, &s, &[0.0, 0.0]);
        assert_eq!(v.q, vec![0.0, -2.0]);
    }

    #[test]
    fn beta_one_pins_average_to_reward() {
        let mut s = experiment_like_scenario();
        s.beta = 1.0;
        let mut v = VirtualState::zeros(&s);
        virtual_step(&mut v, 7, &s, &[0.0; 4]);
        assert_abs_diff_eq!(v.x[7], 7.0);
    }

    #[test]
    fn completion_blocked_by_missing_item() {
        let mut s = experiment_like_scenario();
        s.item_labels = vec!["1".into(), "2".into()];
        s.matchings = vec![
            MatchingSpec::new(0, vec![0.0, 0.0], 0.0),
            MatchingSpec::new(1, vec![1.0, 1.0], 1.0),
        ];
        s.gamma = vec![1.0, 1.0];
        s.holding_costs = vec![0.0, 0.0];
        let mut p = PhysicalState::zeros(&s);
        p.push_pending(1, &s);
        p.qhat = vec![1.0, 0.0];
        assert_eq!(complete_one(&mut p, &s), None);
        p.qhat = vec![1.0, 1.0];
        assert_eq!(complete_one(&mut p, &s), Some(1));
        assert_eq!(p.qhat, vec![0.0, 0.0]);
        assert_eq!(p.qhat0(), 0);
    }

    #[test]
    fn fcfs_scan_skips_incompletable_head() {
        let s = experiment_like_scenario();
        let mut p = PhysicalState::zeros(&s);
        p.push_pending(5, &s); // <1,2>
        p.push_pending(3, &s); // <3>
        p.qhat = vec![0.0, 0.0, 5.0, 0.0];
        assert_eq!(complete_one(&mut p, &s), Some(3));
        assert_eq!(p.pending, VecDeque::from(vec![5]));
    }

    #[test]
    fn cost_priority_completes_most_expensive() {
        let mut s = experiment_like_scenario();
        s.completion_policy = CompletionPolicy::CostPriority;
        s.holding_costs = vec![0.1, 0.1, 5.0, 0.1];
        let mut p = PhysicalState::zeros(&s);
        p.push_pending(5, &s); // <1,2>, held cost 0.2
        p.push_pending(3, &s); // <3>, held cost 5.0
        p.qhat = vec![1.0, 1.0, 1.0, 0.0];
        assert_eq!(complete_one(&mut p, &s), Some(3));
    }

    #[test]
    fn first_slot_from_zero_state_creates_pending_only() {
        let s = experiment_like_scenario();
        let mut v = VirtualState::zeros(&s);
        let mut p = PhysicalState::zeros(&s);
        let mut rng = SimRng::new(1);
        let delta = scheme_step(&mut v, &mut p, &s, &s.arrivals, &mut rng).unwrap();
        // Nothing physical was available, so nothing completed.
        assert!(delta.completions.is_empty());
        assert_eq!(
            p.qhat0(),
            delta.virtual_activations.iter().filter(|&&j| j != 0).count()
        );
    }

    #[test]
    fn conservation_and_bounds_hold_on_short_run() {
        let mut s = experiment_like_scenario();
        s.horizon = 500;
        let run = run_scheme(&s, 0, &SchemeOptions::default()).unwrap();
        assert_eq!(run.violations.total(), 0, "{:?}", run.violations);
        // Count identity for nonempty matchings: virtual - completed =
        // pending. (The empty matching never enters the pending queue.)
        let mut pending_per = vec![0u64; s.n_matchings()];
        for &j in &run.final_physical.pending {
            pending_per[j] += 1;
        }
        for j in 1..s.n_matchings() {
            assert_eq!(
                run.virtual_counts[j] - run.completed_counts[j],
                pending_per[j],
                "matching {j}"
            );
        }
    }

    #[test]
    fn averages_stay_in_reward_hull() {
        let mut s = experiment_like_scenario();
        s.horizon = 300;
        let run = run_scheme(&s, 1, &SchemeOptions::default()).unwrap();
        let w_min = s.rewards().iter().cloned().fold(0.0_f64, f64::min);
        let w_max = s.rewards().iter().cloned().fold(0.0_f64, f64::max);
        for x in &run.final_virtual.x {
            assert!(*x >= w_min - 1e-12 && *x <= w_max + 1e-12);
        }
    }

    #[test]
    fn fifo_departure_order_within_matching_type() {
        // Under FCFS, completions of a fixed matching type leave in the order
        // they were created. Track by generation counter.
        let mut s = experiment_like_scenario();
        s.horizon = 400;
        s.seed = 5;
        let mut rng = SimRng::with_stream(s.seed, 0);
        let mut v = VirtualState::zeros(&s);
        let mut p = PhysicalState::zeros(&s);
        let mut tags: VecDeque<(usize, u64)> = VecDeque::new();
        let mut next_tag = 0u64;
        let mut last_completed_tag: Vec<Option<u64>> = vec![None; s.n_matchings()];
        let cidx = CompletionIndex::new(&s);
        for _ in 0..s.horizon {
            for _ in 0..s.m {
                let j = select_matching(&v, &s).unwrap();
                activate_virtual(&mut v, j, &s);
                if j != 0 {
                    p.push_pending(j, &s);
                    tags.push_back((j, next_tag));
                    next_tag += 1;
                }
                // Replicate complete_one's scan on the tagged copy.
                if let Some(idx) = p
                    .pending
                    .iter()
                    .position(|&jj| cidx.completable(&p.qhat, jj))
                {
                    let done = p.complete_at(idx, &s);
                    let (jj, tag) = tags.remove(idx).unwrap();
                    assert_eq!(jj, done);
                    if let Some(prev) = last_completed_tag[done] {
                        assert!(tag > prev, "type {done} departed out of order");
                    }
                    last_completed_tag[done] = Some(tag);
                }
            }
            let lambda = s.arrivals.sample(&mut rng);
            for ((q, qh), l) in v.q.iter_mut().zip(p.qhat.iter_mut()).zip(&lambda) {
                *q += l;
                *qh += l;
            }
        }
    }

    #[test]
    fn mapping_rejects_small_constant() {
        let s = experiment_like_scenario();
        assert!(matches!(
            map_to_network(&s, 7.0),
            Err(MatchingError::MappingConstantTooSmall { .. })
        ));
    }

    #[test]
    fn mapped_removals_follow_convention() {
        let s = experiment_like_scenario();
        let mapped = map_to_network(&s, 8.0).unwrap();
        // Constrained node for matching 7 (reward 7): removal 8 everywhere on
        // matching coordinates except 8 - 7 = 1 at its own.
        let ctl = &mapped.net.controls[7];
        for jj in 0..8 {
            let expect = if jj == 7 { 1.0 } else { 8.0 };
            assert_abs_diff_eq!(ctl.removal[jj], expect);
        }
        // Item part copies the matching requirement.
        assert_eq!(&ctl.removal[8..], &s.matchings[7].mu[..]);
    }

    #[test]
    fn mapped_constrained_queues_stay_zero() {
        let s = experiment_like_scenario();
        let mapped = map_to_network(&s, 8.0).unwrap();
        let cfg = crate::engine::RunConfig {
            beta: s.beta,
            gamma: mapped.gamma.clone(),
            horizon: 200,
            seed: 3,
            stream: 0,
            x0: mapped.x0.clone(),
            q0: mapped.q0.clone(),
            trace_stride: 1,
        };
        let trace = crate::engine::run(&mapped.net, &mapped.utility, &cfg).unwrap();
        for row in &trace.rows {
            for jj in 0..8 {
                assert_eq!(row.q[jj], 0.0);
            }
        }
    }

    /// Scenario with every constant a dyadic rational, so both controllers
    /// compute bit-identical tie sets.
    pub(crate) fn dyadic_scenario() -> Scenario {
        let mut s = experiment_like_scenario();
        s.arrivals = ArrivalModel::IndependentPoisson {
            rates: vec![1.25, 1.5, 2.0, 0.75],
        };
        s.beta = 1.0 / 128.0;
        s
    }

    #[test]
    fn lockstep_decisions_agree_across_mapping_constants() {
        let s = dyadic_scenario();
        for c in [8.0, 16.0] {
            assert!(
                lockstep_decisions_match(&s, c, 1000, 42).unwrap(),
                "mismatch at c = {c}"
            );
        }
    }

    #[test]
    fn scale_invariance_of_linear_rule() {
        let s = experiment_like_scenario();
        let mut v = VirtualState::zeros(&s);
        v.q = vec![-37.0, 12.0, -5.0, 3.0];
        let j1 = select_matching(&v, &s).unwrap();
        // Multiply rewards and beta*gamma*Q products by a common positive
        // constant: the argmax index is unchanged.
        let mut s2 = s.clone();
        for m in s2.matchings.iter_mut() {
            m.reward *= 16.0;
        }
        s2.beta *= 16.0;
        let j2 = select_matching(&v, &s2).unwrap();
        assert_eq!(j1, j2);
    }
}
