//! Fluid-limit trajectories of the primal-dual dynamics: forward-Euler
//! integration of `x' = v - x` with `v` a support-maximizing point of the
//! rate region, reflected dual dynamics on constrained coordinates, and the
//! Lyapunov diagnostics used to verify convergence to the saddle set.

use serde::Serialize;
use thiserror::Error;

use crate::engine::{self, RunConfig};
use crate::linalg::{dot, norm};
use crate::matching::MappedNetwork;
use crate::model::NetworkUtility;
use crate::oracle::{self, FeasibleSpec, RateRegion};

#[derive(Debug, Error)]
pub enum FluidError {
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
    #[error("bad initial state: {0}")]
    BadInit(String),
    #[error("state left the utility domain at t = {t}")]
    LeftDomain { t: f64 },
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexSelection {
    /// Lowest-index maximizing vertex (matches the stochastic tie-break).
    LowestIndex,
    /// Mean of all maximizing vertices; smoother diagnostics near the
    /// optimal face.
    AveragedTies,
}

/// Saddle reference for Lyapunov diagnostics.
#[derive(Clone, Debug)]
pub struct FluidReference {
    pub v_star: Vec<f64>,
    pub q_star: Vec<f64>,
    pub value: f64,
}

/// Optimal-face description for distance reporting.
#[derive(Clone, Debug)]
pub struct FaceSpec {
    pub feas: FeasibleSpec,
    pub coeffs: Vec<f64>,
    pub constant: f64,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct FluidConfig {
    pub t_end: f64,
    pub h: f64,
    pub mode: VertexSelection,
    pub reference: Option<FluidReference>,
    pub face: Option<FaceSpec>,
    /// Record every `record_stride`-th step (>= 1). Lyapunov scalars are
    /// tracked every step regardless.
    pub record_stride: usize,
}

impl FluidConfig {
    pub fn new(t_end: f64, h: f64) -> Self {
        Self {
            t_end,
            h,
            mode: VertexSelection::LowestIndex,
            reference: None,
            face: None,
            record_stride: 50,
        }
    }
}

/// Lyapunov values at one recorded state.
#[derive(Clone, Debug, Serialize)]
pub struct LyapunovReport {
    /// `H(x) - 0.5 * |q|^2`.
    pub f: f64,
    /// `H(x) - q*.x - 0.5 * |q - q*|^2`, when a reference is supplied.
    pub fstar: Option<f64>,
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    pub b3: Option<f64>,
    /// Distance from `x` to the rate region.
    pub rho_v: f64,
    /// Distance from `x` to the optimal face, when a face spec is supplied.
    pub rho_vstar: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FluidStep {
    pub t: f64,
    pub x: Vec<f64>,
    pub q: Vec<f64>,
    /// Lowest-index maximizing vertex at this state.
    pub vertex: usize,
    /// Drift actually applied (equals the vertex except in averaged mode).
    pub v: Vec<f64>,
    pub report: LyapunovReport,
}

#[derive(Clone, Debug)]
pub struct FluidTrajectory {
    pub steps: Vec<FluidStep>,
    pub h: f64,
    pub final_x: Vec<f64>,
    pub final_q: Vec<f64>,
    /// First time at which `rho(x, V)` dropped below the entry tolerance.
    pub entered_v_at: Option<f64>,
    pub sup_q_norm: f64,
    pub sup_q_norm_first_half: f64,
    pub sup_q_norm_last_half: f64,
    /// Smallest one-step change of F* observed after entering the region.
    pub min_fstar_step_delta: f64,
    /// Smallest margin `dF/dt - (H(v*) - H(x))` along the trajectory, from
    /// the exact expression `dF/dt = grad H(x).(v - x) - q.v`.
    pub min_f_drift_margin: f64,
    /// Worst per-recorded-step violation of the contraction bound
    /// `rho(x(t)) <= rho(x(0)) e^{-t}` (positive = violation amount).
    pub max_contraction_excess: f64,
}

const ENTRY_TOL: f64 = 1e-8;

/// Forward-Euler integration of the fluid dynamics from `(x0, q0)`.
pub fn integrate(
    region: &RateRegion,
    n_constrained: usize,
    utility: &dyn NetworkUtility,
    x0: &[f64],
    q0: &[f64],
    cfg: &FluidConfig,
) -> Result<FluidTrajectory, FluidError> {
    if !(cfg.h > 0.0) {
        return Err(FluidError::BadStep(cfg.h));
    }
    if q0[..n_constrained].iter().any(|&q| q < 0.0) {
        return Err(FluidError::BadInit(
            "constrained coordinates of q0 must be nonnegative".into(),
        ));
    }
    if utility.gradient(x0).iter().any(|g| !g.is_finite()) {
        return Err(FluidError::BadInit("x0 outside the utility domain".into()));
    }

    let n = region.dim();
    let steps = (cfg.t_end / cfg.h).ceil() as usize;
    let stride = cfg.record_stride.max(1);
    let mut x = x0.to_vec();
    let mut q = q0.to_vec();
    let mut recorded = Vec::new();
    let mut entered_v_at: Option<f64> = None;
    let mut sup_q: f64 = norm(&q);
    let mut sup_q_first: f64 = sup_q;
    let mut sup_q_last: f64 = 0.0;
    let mut min_fstar_delta = f64::INFINITY;
    let mut min_f_margin = f64::INFINITY;
    let mut max_contraction_excess: f64 = f64::NEG_INFINITY;
    let rho0 = oracle::distance_to_polytope(&x, region, 1e-9);
    let mut prev_fstar: Option<f64> = None;

    for step_idx in 0..=steps {
        let t = step_idx as f64 * cfg.h;
        let grad = utility.gradient(&x);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(FluidError::LeftDomain { t });
        }
        let dir: Vec<f64> = grad.iter().zip(&q).map(|(g, qq)| g - qq).collect();
        let tied = region.support_argmax(&dir);
        let vertex = tied[0];
        let v: Vec<f64> = match cfg.mode {
            VertexSelection::LowestIndex => region.vertices[vertex].clone(),
            VertexSelection::AveragedTies => {
                let mut acc = vec![0.0; n];
                for &k in &tied {
                    for (a, b) in acc.iter_mut().zip(&region.vertices[k]) {
                        *a += b;
                    }
                }
                let w = 1.0 / tied.len() as f64;
                acc.iter_mut().for_each(|a| *a *= w);
                acc
            }
        };

        // Per-step scalar tracking.
        let qn = norm(&q);
        sup_q = sup_q.max(qn);
        if t <= cfg.t_end / 2.0 {
            sup_q_first = sup_q_first.max(qn);
        } else {
            sup_q_last = sup_q_last.max(qn);
        }
        if let Some(r) = &cfg.reference {
            let fstar = utility.value(&x)
                - dot(&r.q_star, &x)
                - 0.5 * q.iter().zip(&r.q_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            if let (Some(prev), Some(_)) = (prev_fstar, entered_v_at) {
                min_fstar_delta = min_fstar_delta.min(fstar - prev);
            }
            prev_fstar = Some(fstar);
            let df_dt = dot(&grad, &v) - dot(&grad, &x) - dot(&q, &v);
            let bound = r.value - utility.value(&x);
            min_f_margin = min_f_margin.min(df_dt - bound);
        }

        let record_now = step_idx % stride == 0 || step_idx == steps;
        if record_now || entered_v_at.is_none() {
            let rho_v = oracle::distance_to_polytope(&x, region, 1e-9);
            if entered_v_at.is_none() && rho_v <= ENTRY_TOL {
                entered_v_at = Some(t);
            }
            max_contraction_excess = max_contraction_excess.max(rho_v - rho0 * (-t).exp());
            if record_now {
                let (fstar, b1, b2, b3) = match &cfg.reference {
                    Some(r) => {
                        let fstar = utility.value(&x)
                            - dot(&r.q_star, &x)
                            - 0.5
                                * q.iter()
                                    .zip(&r.q_star)
                                    .map(|(a, b)| (a - b) * (a - b))
                                    .sum::<f64>();
                        let b1 = grad
                            .iter()
                            .zip(&r.q_star)
                            .zip(r.v_star.iter().zip(&x))
                            .map(|((g, qs), (vs, xx))| (g - qs) * (vs - xx))
                            .sum::<f64>();
                        let b2 = -q[..n_constrained]
                            .iter()
                            .zip(&r.v_star[..n_constrained])
                            .map(|(qq, vs)| qq * vs)
                            .sum::<f64>();
                        let b3 = dir
                            .iter()
                            .zip(v.iter().zip(&r.v_star))
                            .map(|(d, (vv, vs))| d * (vv - vs))
                            .sum::<f64>();
                        (Some(fstar), Some(b1), Some(b2), Some(b3))
                    }
                    None => (None, None, None, None),
                };
                let rho_vstar = match &cfg.face {
                    Some(f) => Some(oracle::distance_to_optimal_face(
                        &x, region, &f.coeffs, f.constant, f.value, &f.feas, 1e-6,
                    )?),
                    None => None,
                };
                recorded.push(FluidStep {
                    t,
                    x: x.clone(),
                    q: q.clone(),
                    vertex,
                    v: v.clone(),
                    report: LyapunovReport {
                        f: utility.value(&x) - 0.5 * qn * qn,
                        fstar,
                        b1,
                        b2,
                        b3,
                        rho_v,
                        rho_vstar,
                    },
                });
            }
        }

        if step_idx == steps {
            break;
        }
        // Euler update: x moves toward v, duals integrate the drift with
        // reflection at zero on constrained coordinates.
        for ((xx, vv), _) in x.iter_mut().zip(&v).zip(0..n) {
            *xx += cfg.h * (vv - *xx);
        }
        for (node, (qq, vv)) in q.iter_mut().zip(&v).enumerate() {
            if node < n_constrained {
                *qq = (*qq + cfg.h * vv).max(0.0);
            } else {
                *qq += cfg.h * vv;
            }
        }
    }

    Ok(FluidTrajectory {
        steps: recorded,
        h: cfg.h,
        final_x: x,
        final_q: q,
        entered_v_at,
        sup_q_norm: sup_q,
        sup_q_norm_first_half: sup_q_first,
        sup_q_norm_last_half: sup_q_last,
        min_fstar_step_delta: min_fstar_delta,
        min_f_drift_margin: min_f_margin,
        max_contraction_excess,
    })
}

/// Convergence report for a trajectory against an oracle solution.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub rho_v_terminal: f64,
    pub rho_vstar_terminal: f64,
    /// Most negative constrained coordinate of the terminal `q` (dual
    /// feasibility; >= -tol required).
    pub dual_feasibility_min: f64,
    /// `max_k (grad H(v*) - q).b(k) + const - value`: the dual optimality
    /// residual of the terminal q (membership-style test, since the dual set
    /// need not be a single point).
    pub dual_optimality_gap: f64,
    /// `|q . v*|` at the terminal state.
    pub comp_slack: f64,
    pub sup_q_norm: f64,
    /// Max |q| over the second half minus over the first half; no growth
    /// means this is not significantly positive.
    pub q_growth_last_half: f64,
}

/// Evaluates the terminal state of a trajectory against the saddle point of
/// a linear problem over the region.
pub fn check_convergence(
    traj: &FluidTrajectory,
    region: &RateRegion,
    n_constrained: usize,
    coeffs: &[f64],
    constant: f64,
    solution: &oracle::RateRegionSolution,
    feas: &FeasibleSpec,
) -> Result<ConvergenceReport, FluidError> {
    let x = &traj.final_x;
    let q = &traj.final_q;
    let rho_v_terminal = oracle::distance_to_polytope(x, region, 1e-9);
    let rho_vstar_terminal = oracle::distance_to_optimal_face(
        x,
        region,
        coeffs,
        constant,
        solution.value,
        feas,
        1e-6,
    )?;
    let dual_feasibility_min = q[..n_constrained]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let lagrangian_dir: Vec<f64> = coeffs.iter().zip(q).map(|(c, qq)| c - qq).collect();
    let dual_optimality_gap = region.support_max(&lagrangian_dir) + constant - solution.value;
    let comp_slack = dot(q, &solution.v_star).abs();
    Ok(ConvergenceReport {
        rho_v_terminal,
        rho_vstar_terminal,
        dual_feasibility_min,
        dual_optimality_gap,
        comp_slack,
        sup_q_norm: traj.sup_q_norm,
        q_growth_last_half: traj.sup_q_norm_last_half - traj.sup_q_norm_first_half,
    })
}

/// One row of the scaled-path comparison.
#[derive(Clone, Debug, Serialize)]
pub struct ScaledDeviation {
    pub beta: f64,
    pub rounds: u64,
    /// Mean over rounds of the joint state deviation from the fluid path.
    pub mean_dev: f64,
    pub sup_dev: f64,
}

/// Runs the stochastic engine on the embedded network for each gain, rescales
/// time by the gain and queues by `beta * gamma`, and reports deviations from
/// the fluid trajectory over `[0, t_end]`.
pub fn compare_scaled_simulation(
    mapped: &MappedNetwork,
    betas: &[f64],
    t_end: f64,
    seed: u64,
    n_seeds: u64,
) -> Result<Vec<ScaledDeviation>, FluidError> {
    let region = RateRegion::from_network(&mapped.net);
    let n_constrained = mapped.net.n_constrained;
    let h = 1e-3;
    let mut cfg = FluidConfig::new(t_end, h);
    cfg.record_stride = 1;
    let traj = integrate(&region, n_constrained, &mapped.utility, &mapped.x0, &mapped.q0, &cfg)?;
    let fluid_at = |t: f64| -> (&[f64], &[f64]) {
        let idx = ((t / h).round() as usize).min(traj.steps.len() - 1);
        (&traj.steps[idx].x, &traj.steps[idx].q)
    };

    let mut out = Vec::with_capacity(betas.len());
    for (bi, &beta) in betas.iter().enumerate() {
        let rounds = (t_end / beta).ceil() as u64;
        let mut dev_sum = 0.0;
        let mut dev_sup: f64 = 0.0;
        let mut count = 0u64;
        for s in 0..n_seeds.max(1) {
            let cfg_run = RunConfig {
                beta,
                gamma: mapped.gamma.clone(),
                horizon: rounds,
                seed,
                stream: (bi as u64) * 1000 + s,
                x0: mapped.x0.clone(),
                q0: mapped.q0.clone(),
                trace_stride: 1,
            };
            let trace = engine::run(&mapped.net, &mapped.utility, &cfg_run)?;
            for row in &trace.rows {
                let t = row.t as f64 * beta;
                if t > t_end {
                    break;
                }
                let (fx, fq) = fluid_at(t);
                let mut sq = 0.0;
                for (a, b) in row.x.iter().zip(fx) {
                    sq += (a - b) * (a - b);
                }
                for (node, (qq, fqq)) in row.q.iter().zip(fq).enumerate() {
                    let scaled = beta * mapped.gamma[node] * qq;
                    sq += (scaled - fqq) * (scaled - fqq);
                }
                let d = sq.sqrt();
                dev_sum += d;
                dev_sup = dev_sup.max(d);
                count += 1;
            }
        }
        out.push(ScaledDeviation {
            beta,
            rounds,
            mean_dev: dev_sum / count.max(1) as f64,
            sup_dev: dev_sup,
        });
    }
    Ok(out)
}

/// Trajectory CSV: `t, x_1..x_N, q_1..q_N, control_vertex, F, Fstar, rho_V,
/// rho_Vstar`.
pub fn trajectory_csv(traj: &FluidTrajectory, n: usize) -> String {
    let mut out = String::from("t");
    for i in 1..=n {
        out.push_str(&format!(",x_{i}"));
    }
    for i in 1..=n {
        out.push_str(&format!(",q_{i}"));
    }
    out.push_str(",control_vertex,F,Fstar,rho_V,rho_Vstar\n");
    for s in &traj.steps {
        out.push_str(&format!("{}", s.t));
        for v in s.x.iter().chain(s.q.iter()) {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}", s.vertex, s.report.f));
        match s.report.fstar {
            Some(f) => out.push_str(&format!(",{f}")),
            None => out.push_str(",-"),
        }
        out.push_str(&format!(",{}", s.report.rho_v));
        match s.report.rho_vstar {
            Some(r) => out.push_str(&format!(",{r}\n")),
            None => out.push_str(",-\n"),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearUtility;
    use approx::assert_abs_diff_eq;

    fn single_vertex_region(v: Vec<f64>) -> RateRegion {
        RateRegion {
            vertices: vec![v],
            labels: vec!["only".into()],
        }
    }

    #[test]
    fn single_vertex_contracts_exponentially() {
        // x' = -x when the only vertex is the origin; q free, v = 0 keeps it.
        let region = single_vertex_region(vec![0.0, 0.0]);
        let util = LinearUtility::new(vec![1.0, 1.0]);
        let cfg = FluidConfig::new(5.0, 1e-3);
        let traj = integrate(&region, 0, &util, &[2.0, -1.0], &[0.5, 0.5], &cfg).unwrap();
        // Discrete decay (1-h)^n is within O(h) of e^{-t}.
        assert!(traj.final_x[0] < 2.0 * (-5.0f64).exp() * 1.01 + 1e-3);
        assert_abs_diff_eq!(traj.final_q[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(traj.final_q[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_started_inside_region_stays_inside() {
        let region = RateRegion {
            vertices: vec![vec![1.0, 0.0], vec![-1.0, 0.5], vec![0.0, -1.0]],
            labels: vec!["a".into(), "b".into(), "c".into()],
        };
        let util = LinearUtility::new(vec![1.0, 0.0]);
        let x0 = vec![0.0, -0.1]; // interior point
        let cfg = FluidConfig::new(8.0, 1e-3);
        let traj = integrate(&region, 0, &util, &x0, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(traj.entered_v_at, Some(0.0));
        for s in &traj.steps {
            assert!(s.report.rho_v <= 1e-6, "rho {} at t {}", s.report.rho_v, s.t);
        }
    }

    #[test]
    fn contraction_bound_holds_from_outside() {
        let region = RateRegion {
            vertices: vec![vec![1.0], vec![-1.0]],
            labels: vec!["+".into(), "-".into()],
        };
        let util = LinearUtility::new(vec![0.0]);
        let cfg = FluidConfig::new(6.0, 1e-3);
        let traj = integrate(&region, 0, &util, &[4.0], &[0.0], &cfg).unwrap();
        // rho(x(t)) <= rho(x(0)) e^{-t} + C h with tiny C.
        assert!(traj.max_contraction_excess <= 1e-2 * 1e-3 + 1e-9);
        assert!(traj.entered_v_at.is_some());
    }

    #[test]
    fn constrained_dual_never_negative() {
        let region = RateRegion {
            vertices: vec![vec![-1.0, 0.3], vec![-0.2, -0.7]],
            labels: vec!["a".into(), "b".into()],
        };
        let util = LinearUtility::new(vec![1.0, 1.0]);
        let cfg = FluidConfig::new(4.0, 1e-3);
        let traj = integrate(&region, 1, &util, &[-0.5, 0.0], &[0.0, 0.0], &cfg).unwrap();
        for s in &traj.steps {
            assert!(s.q[0] >= 0.0);
        }
        assert!(traj.final_q[0] >= 0.0);
    }

    #[test]
    fn zero_t_end_returns_initial_state() {
        let region = single_vertex_region(vec![0.0]);
        let util = LinearUtility::new(vec![1.0]);
        let cfg = FluidConfig::new(0.0, 1e-3);
        let traj = integrate(&region, 0, &util, &[3.0], &[1.0], &cfg).unwrap();
        assert_eq!(traj.steps.len(), 1);
        assert_abs_diff_eq!(traj.final_x[0], 3.0);
        assert_abs_diff_eq!(traj.final_q[0], 1.0);
    }

    #[test]
    fn bad_step_rejected() {
        let region = single_vertex_region(vec![0.0]);
        let util = LinearUtility::new(vec![1.0]);
        let cfg = FluidConfig::new(1.0, 0.0);
        assert!(matches!(
            integrate(&region, 0, &util, &[0.0], &[0.0], &cfg),
            Err(FluidError::BadStep(_))
        ));
    }
}
