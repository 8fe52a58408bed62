//! Greedy primal-dual control of a general network: score-based control
//! selection, the running-average update, and the constrained/free queue
//! dynamics. One engine step is one decision epoch.

use thiserror::Error;

use crate::linalg::dot;
use crate::model::{NetworkModel, NetworkUtility};
use crate::rng::SimRng;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("utility gradient is not finite at coordinate {node}")]
    NonFiniteGradient { node: usize },
    #[error("bad run configuration: {0}")]
    BadConfig(String),
}

/// Network state: queue vector, running average of realized increments, and
/// the step counter. Constrained coordinates of `q` are nonnegative at all
/// times.
#[derive(Clone, Debug, PartialEq)]
pub struct NetState {
    pub q: Vec<f64>,
    pub x: Vec<f64>,
    pub t: u64,
}

impl NetState {
    pub fn new(q: Vec<f64>, x: Vec<f64>) -> Self {
        Self { q, x, t: 0 }
    }
}

/// A control choice with its audit trail.
#[derive(Clone, Debug)]
pub struct Decision {
    /// Chosen control: the lowest index among the exact ties.
    pub control: usize,
    /// Score of every control under the rule `(grad H(x) - beta*(gamma.q)) . b(k)`.
    pub scores: Vec<f64>,
    /// All controls whose score equals the maximum exactly.
    pub ties: Vec<usize>,
}

/// Scores every control at the current state and picks the argmax, breaking
/// ties toward the lowest index.
pub fn select_control(
    state: &NetState,
    net: &NetworkModel,
    utility: &dyn NetworkUtility,
    beta: f64,
    gamma: &[f64],
) -> Result<Decision, EngineError> {
    select_control_cached(state, &net.mean_increments(), utility, beta, gamma)
}

/// Same rule with the mean increments precomputed; used in run loops.
pub fn select_control_cached(
    state: &NetState,
    increments: &[Vec<f64>],
    utility: &dyn NetworkUtility,
    beta: f64,
    gamma: &[f64],
) -> Result<Decision, EngineError> {
    let grad = utility.gradient(&state.x);
    if let Some(node) = grad.iter().position(|g| !g.is_finite()) {
        return Err(EngineError::NonFiniteGradient { node });
    }
    let direction: Vec<f64> = grad
        .iter()
        .zip(&state.q)
        .zip(gamma)
        .map(|((g, q), w)| g - beta * w * q)
        .collect();
    let scores: Vec<f64> = increments.iter().map(|b| dot(&direction, b)).collect();
    let mut best = 0;
    for (k, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = k;
        }
    }
    let ties: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == scores[best])
        .map(|(k, _)| k)
        .collect();
    Ok(Decision {
        control: ties[0],
        scores,
        ties,
    })
}

/// Applies control `k` with externally supplied arrivals. Constrained queues
/// truncate at zero; the running average always receives the nominal
/// increment `lambda - mu(k)` even when truncation occurred. Returns the
/// realized nominal increment.
pub fn step_with_arrivals(
    state: &mut NetState,
    net: &NetworkModel,
    k: usize,
    beta: f64,
    lambda: &[f64],
) -> Vec<f64> {
    let removal = &net.controls[k].removal;
    let n = net.n_nodes();
    let mut realized = Vec::with_capacity(n);
    for node in 0..n {
        let b = lambda[node] - removal[node];
        realized.push(b);
        if net.is_constrained(node) {
            state.q[node] = (state.q[node] - removal[node]).max(0.0) + lambda[node];
        } else {
            state.q[node] += b;
        }
    }
    for (x, b) in state.x.iter_mut().zip(&realized) {
        *x = (1.0 - beta) * *x + beta * b;
    }
    state.t += 1;
    realized
}

/// Samples arrivals for the chosen control and advances one step.
pub fn step(
    state: &mut NetState,
    net: &NetworkModel,
    decision: &Decision,
    beta: f64,
    rng: &mut SimRng,
) -> Vec<f64> {
    let lambda = net.sample_arrivals(decision.control, state.t, rng);
    step_with_arrivals(state, net, decision.control, beta, &lambda)
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub beta: f64,
    pub gamma: Vec<f64>,
    /// Number of decision epochs.
    pub horizon: u64,
    pub seed: u64,
    pub stream: u64,
    pub x0: Vec<f64>,
    pub q0: Vec<f64>,
    /// Keep every `trace_stride`-th state (plus the initial one).
    pub trace_stride: u64,
}

#[derive(Clone, Debug)]
pub struct TraceRow {
    pub t: u64,
    /// Control applied at this state; `None` on the terminal row.
    pub control: Option<usize>,
    pub q: Vec<f64>,
    pub x: Vec<f64>,
    pub score_max: f64,
    /// Realized nominal increment of the step taken from this state.
    pub realized_b: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub activation_counts: Vec<u64>,
    pub final_state: NetState,
    /// Componentwise bounds of `{x0} ∪ {realized increments}`; the running
    /// average stays inside this box (convex-combination invariant).
    pub hull_min: Vec<f64>,
    pub hull_max: Vec<f64>,
}

/// Runs the control rule for `horizon` epochs. Deterministic in
/// `(net, cfg.seed, cfg.stream)`.
pub fn run(
    net: &NetworkModel,
    utility: &dyn NetworkUtility,
    cfg: &RunConfig,
) -> Result<RunTrace, EngineError> {
    let n = net.n_nodes();
    if cfg.x0.len() != n || cfg.q0.len() != n || cfg.gamma.len() != n {
        return Err(EngineError::BadConfig("state dimension mismatch".into()));
    }
    if cfg
        .q0
        .iter()
        .enumerate()
        .any(|(node, q)| net.is_constrained(node) && *q < 0.0)
    {
        return Err(EngineError::BadConfig(
            "constrained coordinates of q0 must be nonnegative".into(),
        ));
    }
    let grad0 = utility.gradient(&cfg.x0);
    if let Some(node) = grad0.iter().position(|g| !g.is_finite()) {
        return Err(EngineError::NonFiniteGradient { node });
    }

    let mut rng = SimRng::with_stream(cfg.seed, cfg.stream);
    let mut state = NetState::new(cfg.q0.clone(), cfg.x0.clone());
    let mut counts = vec![0u64; net.controls.len()];
    let mut rows = Vec::new();
    let mut hull_min = cfg.x0.clone();
    let mut hull_max = cfg.x0.clone();
    let stride = cfg.trace_stride.max(1);
    let increments = net.mean_increments();

    for t in 0..cfg.horizon {
        let decision = select_control_cached(&state, &increments, utility, cfg.beta, &cfg.gamma)?;
        let keep = t % stride == 0;
        let pre_q = if keep { Some(state.q.clone()) } else { None };
        let pre_x = if keep { Some(state.x.clone()) } else { None };
        let realized = step(&mut state, net, &decision, cfg.beta, &mut rng);
        counts[decision.control] += 1;
        for ((b, lo), hi) in realized.iter().zip(hull_min.iter_mut()).zip(hull_max.iter_mut()) {
            if *b < *lo {
                *lo = *b;
            }
            if *b > *hi {
                *hi = *b;
            }
        }
        // Convex-combination invariant: x never leaves the realized box.
        debug_assert!(state
            .x
            .iter()
            .zip(&hull_min)
            .zip(&hull_max)
            .all(|((x, lo), hi)| *x >= lo - 1e-9 && *x <= hi + 1e-9));
        debug_assert!((0..n)
            .filter(|node| net.is_constrained(*node))
            .all(|node| state.q[node] >= 0.0));
        if keep {
            rows.push(TraceRow {
                t,
                control: Some(decision.control),
                q: pre_q.unwrap(),
                x: pre_x.unwrap(),
                score_max: decision.scores[decision.control],
                realized_b: Some(realized),
            });
        }
    }
    rows.push(TraceRow {
        t: cfg.horizon,
        control: None,
        q: state.q.clone(),
        x: state.x.clone(),
        score_max: f64::NAN,
        realized_b: None,
    });

    Ok(RunTrace {
        rows,
        activation_counts: counts,
        final_state: state,
        hull_min,
        hull_max,
    })
}

/// Trace CSV: `t, control, q_1..q_N, x_1..x_N, score_max`.
pub fn trace_csv(trace: &RunTrace, n_nodes: usize) -> String {
    let mut out = String::from("t,control");
    for i in 1..=n_nodes {
        out.push_str(&format!(",q_{i}"));
    }
    for i in 1..=n_nodes {
        out.push_str(&format!(",x_{i}"));
    }
    out.push_str(",score_max\n");
    for row in &trace.rows {
        out.push_str(&row.t.to_string());
        out.push(',');
        match row.control {
            Some(k) => out.push_str(&k.to_string()),
            None => out.push('-'),
        }
        for v in row.q.iter().chain(row.x.iter()) {
            out.push_str(&format!(",{v}"));
        }
        if row.score_max.is_nan() {
            out.push_str(",-\n");
        } else {
            out.push_str(&format!(",{}\n", row.score_max));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        ArrivalProcess, ArrivalSpec, ControlSpec, LinearUtility, NetworkModel,
    };
    use approx::assert_abs_diff_eq;

    fn two_node_net(controls: Vec<ControlSpec>) -> NetworkModel {
        NetworkModel {
            n_constrained: 1,
            n_free: 1,
            controls,
            arrival_process: ArrivalProcess::PerControl,
            extra_drift_directions: vec![],
        }
    }

    fn ctl(label: &str, removal: Vec<f64>, arrivals: ArrivalSpec) -> ControlSpec {
        ControlSpec {
            label: label.into(),
            removal,
            arrivals,
        }
    }

    #[test]
    fn zero_queues_reduce_to_reward_comparison() {
        // Two free nodes, utility weights act as rewards on the drift.
        let net = NetworkModel {
            n_constrained: 0,
            n_free: 2,
            controls: vec![
                ctl("a", vec![0.0, 0.0], ArrivalSpec::Deterministic(vec![1.0, 0.0])),
                ctl("b", vec![0.0, 0.0], ArrivalSpec::Deterministic(vec![0.0, 2.0])),
            ],
            arrival_process: ArrivalProcess::PerControl,
            extra_drift_directions: vec![],
        };
        let util = LinearUtility::new(vec![3.0, 1.0]);
        let state = NetState::new(vec![0.0, 0.0], vec![0.0, 0.0]);
        let d = select_control(&state, &net, &util, 0.5, &[1.0, 1.0]).unwrap();
        // Scores: 3*1 = 3 vs 1*2 = 2.
        assert_eq!(d.control, 0);
        assert_abs_diff_eq!(d.scores[0], 3.0);
        assert_abs_diff_eq!(d.scores[1], 2.0);
    }

    #[test]
    fn identical_controls_tie_to_lowest_index() {
        let spec = ctl("dup", vec![0.5, 0.25], ArrivalSpec::None);
        let mut dup = spec.clone();
        dup.label = "dup2".into();
        let net = two_node_net(vec![spec, dup]);
        let util = LinearUtility::new(vec![1.0, 1.0]);
        let state = NetState::new(vec![2.0, -1.0], vec![0.0, 0.0]);
        let d = select_control(&state, &net, &util, 0.7, &[1.0, 1.0]).unwrap();
        assert_eq!(d.control, 0);
        assert_eq!(d.ties, vec![0, 1]);
    }

    #[test]
    fn large_queue_penalty_redirects_choice() {
        // Control 0 drains node 1 (free), control 1 does nothing. With a very
        // negative free queue, draining it further scores badly.
        let net = two_node_net(vec![
            ctl("drain", vec![0.0, 1.0], ArrivalSpec::None),
            ctl("idle", vec![0.0, 0.0], ArrivalSpec::None),
        ]);
        let util = LinearUtility::new(vec![0.0, 0.0]);
        let state = NetState::new(vec![0.0, -50.0], vec![0.0, 0.0]);
        let d = select_control(&state, &net, &util, 1.0, &[1.0, 1.0]).unwrap();
        // Score(drain) = -beta*q_1*(-1) = q penalty: (0 - 1*(-50)) * (-1) = -50.
        assert_eq!(d.control, 1);
    }

    #[test]
    fn constrained_queue_truncates_free_queue_does_not() {
        let net = two_node_net(vec![ctl("k", vec![3.0, 1.0], ArrivalSpec::None)]);
        let mut state = NetState::new(vec![1.0, -2.0], vec![0.0, 0.0]);
        let b = step_with_arrivals(&mut state, &net, 0, 0.5, &[0.0, 0.0]);
        assert_abs_diff_eq!(state.q[0], 0.0);
        assert_abs_diff_eq!(state.q[1], -3.0);
        // Nominal increment ignores the truncation.
        assert_abs_diff_eq!(b[0], -3.0);
        assert_abs_diff_eq!(state.x[0], 0.5 * -3.0);
    }

    #[test]
    fn running_average_update_is_affine() {
        let net = two_node_net(vec![ctl("k", vec![0.0, 0.0], ArrivalSpec::None)]);
        let mut state = NetState::new(vec![0.0, 0.0], vec![0.0, 0.0]);
        let _ = step_with_arrivals(&mut state, &net, 0, 0.5, &[2.0, 0.0]);
        assert_abs_diff_eq!(state.x[0], 1.0);
    }

    #[test]
    fn zero_horizon_trace_is_initial_state() {
        let net = two_node_net(vec![ctl("k", vec![0.0, 0.0], ArrivalSpec::None)]);
        let util = LinearUtility::new(vec![0.0, 0.0]);
        let cfg = RunConfig {
            beta: 0.1,
            gamma: vec![1.0, 1.0],
            horizon: 0,
            seed: 1,
            stream: 0,
            x0: vec![0.0, 0.0],
            q0: vec![0.0, 0.0],
            trace_stride: 1,
        };
        let trace = run(&net, &util, &cfg).unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert_eq!(trace.rows[0].t, 0);
        assert!(trace.rows[0].control.is_none());
    }

    #[test]
    fn single_control_network_counts_every_step() {
        let net = two_node_net(vec![ctl(
            "only",
            vec![0.2, 0.0],
            ArrivalSpec::PoissonPerNode(vec![0.1, 0.3]),
        )]);
        let util = LinearUtility::new(vec![1.0, 1.0]);
        let cfg = RunConfig {
            beta: 0.05,
            gamma: vec![1.0, 1.0],
            horizon: 57,
            seed: 3,
            stream: 0,
            x0: vec![0.0, 0.0],
            q0: vec![0.0, 0.0],
            trace_stride: 1,
        };
        let trace = run(&net, &util, &cfg).unwrap();
        assert_eq!(trace.activation_counts, vec![57]);
    }

    #[test]
    fn identical_seeds_give_identical_csv() {
        let net = two_node_net(vec![
            ctl("a", vec![1.0, 0.5], ArrivalSpec::PoissonPerNode(vec![0.5, 0.5])),
            ctl("b", vec![0.0, 1.0], ArrivalSpec::PoissonPerNode(vec![0.2, 0.9])),
        ]);
        let util = LinearUtility::new(vec![1.0, -1.0]);
        let cfg = RunConfig {
            beta: 0.2,
            gamma: vec![1.0, 2.0],
            horizon: 200,
            seed: 99,
            stream: 4,
            x0: vec![0.0, 0.0],
            q0: vec![0.0, 0.0],
            trace_stride: 1,
        };
        let a = trace_csv(&run(&net, &util, &cfg).unwrap(), 2);
        let b = trace_csv(&run(&net, &util, &cfg).unwrap(), 2);
        assert_eq!(a, b);
    }

    /// x(t) must equal the explicit geometric average of realized increments.
    #[test]
    fn geometric_average_identity() {
        let net = two_node_net(vec![
            ctl("a", vec![1.0, 0.5], ArrivalSpec::PoissonPerNode(vec![0.5, 0.7])),
            ctl("b", vec![0.0, 1.0], ArrivalSpec::PoissonPerNode(vec![0.4, 0.2])),
        ]);
        let util = LinearUtility::new(vec![1.0, -1.0]);
        let beta = 0.3;
        let x0 = vec![0.25, -0.5];
        let cfg = RunConfig {
            beta,
            gamma: vec![1.0, 1.0],
            horizon: 40,
            seed: 11,
            stream: 0,
            x0: x0.clone(),
            q0: vec![0.0, 0.0],
            trace_stride: 1,
        };
        let trace = run(&net, &util, &cfg).unwrap();
        let t_end = 40u64;
        let mut expect = vec![0.0, 0.0];
        for row in trace.rows.iter().take(40) {
            let b = row.realized_b.as_ref().unwrap();
            let w = beta * (1.0 - beta).powi((t_end - 1 - row.t) as i32);
            for (e, bi) in expect.iter_mut().zip(b) {
                *e += w * bi;
            }
        }
        for (e, x0i) in expect.iter_mut().zip(&x0) {
            *e += (1.0 - beta).powi(t_end as i32) * x0i;
        }
        let x_final = &trace.final_state.x;
        for (e, x) in expect.iter().zip(x_final) {
            assert_abs_diff_eq!(*e, *x, epsilon = 1e-12);
        }
    }
}
