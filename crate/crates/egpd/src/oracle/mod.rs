//! Independent ground truth for the controllers: the achievable drift region,
//! linear and concave utility optimization over it, dual prices, distances to
//! the region and to its optimal face, and the per-slot matching-rate LP.

pub mod frank_wolfe;
pub mod simplex;

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{dist, dot, norm};
use crate::model::{NetworkModel, NetworkUtility, Scenario};
use simplex::{Constraint, LinearProgram, Relation, SimplexError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("simplex failed: {0}")]
    Simplex(#[from] SimplexError),
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Convex hull of the mean per-step increments of all controls.
#[derive(Clone, Debug)]
pub struct RateRegion {
    pub vertices: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl RateRegion {
    pub fn from_network(net: &NetworkModel) -> Self {
        Self {
            vertices: net.mean_increments(),
            labels: net.controls.iter().map(|c| c.label.clone()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.vertices.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Hull point for a mixture `phi`.
    pub fn point(&self, phi: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for (w, vert) in phi.iter().zip(&self.vertices) {
            for (vi, bi) in v.iter_mut().zip(vert) {
                *vi += w * bi;
            }
        }
        v
    }

    /// All vertex indices maximizing `direction . vertex`, with an absolute
    /// tie tolerance of 1e-12.
    pub fn support_argmax(&self, direction: &[f64]) -> Vec<usize> {
        let scores: Vec<f64> = self.vertices.iter().map(|v| dot(direction, v)).collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        scores
            .iter()
            .enumerate()
            .filter(|(_, s)| **s >= best - 1e-12)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn support_max(&self, direction: &[f64]) -> f64 {
        self.vertices
            .iter()
            .map(|v| dot(direction, v))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Stability constraints on drift vectors: zero drift on the listed rows,
/// nonpositive drift on the others, plus optional extra equality cuts.
#[derive(Clone, Debug, Default)]
pub struct FeasibleSpec {
    pub zero_drift: Vec<usize>,
    pub nonpos_drift: Vec<usize>,
    /// Rows `(coeffs, rhs)` enforcing `coeffs . v = rhs`.
    pub extra_eq: Vec<(Vec<f64>, f64)>,
}

impl FeasibleSpec {
    pub fn for_network(net: &NetworkModel) -> Self {
        Self {
            zero_drift: (net.n_constrained..net.n_nodes()).collect(),
            nonpos_drift: (0..net.n_constrained).collect(),
            extra_eq: Vec::new(),
        }
    }
}

/// Optimal mixture, drift vector, value, and dual prices for an optimization
/// over the feasible part of a rate region.
#[derive(Clone, Debug, Serialize)]
pub struct RateRegionSolution {
    pub phi: Vec<f64>,
    pub v_star: Vec<f64>,
    pub value: f64,
    /// Dual price per node: nonnegative on nonpositive-drift (constrained)
    /// rows, free-signed on zero-drift (free) rows, zero elsewhere.
    pub q_star: Vec<f64>,
    /// `q* . v*`, zero at an exact saddle point.
    pub comp_slack: f64,
    /// Controls whose score `(grad H - q*) . b(k)` ties the maximum.
    pub active_controls: Vec<usize>,
    /// Set when an iterative solve stopped at its iteration cap.
    pub max_iters_hit: bool,
}

/// LP over mixtures: maximize `objective_phi . phi` subject to the drift
/// constraints of `feas`, `phi` in the probability simplex.
fn solve_phi_lp(
    region: &RateRegion,
    objective_phi: &[f64],
    feas: &FeasibleSpec,
) -> Result<(simplex::LpSolution, Vec<f64>), OracleError> {
    let k = region.n_vertices();
    let n = region.dim();
    let mut constraints = Vec::new();
    let mut node_row: Vec<Option<(usize, bool)>> = vec![None; n]; // node -> (row, is_eq)
    for &node in &feas.zero_drift {
        node_row[node] = Some((constraints.len(), true));
        let coeffs: Vec<f64> = (0..k).map(|j| region.vertices[j][node]).collect();
        constraints.push(Constraint::new(coeffs, Relation::Eq, 0.0));
    }
    for &node in &feas.nonpos_drift {
        node_row[node] = Some((constraints.len(), false));
        let coeffs: Vec<f64> = (0..k).map(|j| region.vertices[j][node]).collect();
        constraints.push(Constraint::new(coeffs, Relation::Le, 0.0));
    }
    for (coeffs_v, rhs) in &feas.extra_eq {
        let coeffs: Vec<f64> = (0..k).map(|j| dot(coeffs_v, &region.vertices[j])).collect();
        constraints.push(Constraint::new(coeffs, Relation::Eq, *rhs));
    }
    constraints.push(Constraint::new(vec![1.0; k], Relation::Eq, 1.0));

    let lp = LinearProgram {
        maximize: objective_phi.to_vec(),
        constraints,
    };
    let sol = simplex::solve(&lp).map_err(|e| match e {
        SimplexError::Infeasible { .. } => OracleError::Infeasible(
            "no mixture of controls gives zero drift on free nodes and nonpositive drift on constrained nodes"
                .to_string(),
        ),
        other => OracleError::Simplex(other),
    })?;

    let mut q_star = vec![0.0; n];
    for (node, slot) in node_row.iter().enumerate() {
        if let Some((row, _)) = slot {
            q_star[node] = sol.duals[*row];
        }
    }
    Ok((sol, q_star))
}

/// Maximize an affine utility `coeffs . v + constant` over the feasible part
/// of the region. Duals come from the optimal simplex basis.
pub fn solve_linear_region(
    region: &RateRegion,
    coeffs: &[f64],
    constant: f64,
    feas: &FeasibleSpec,
) -> Result<RateRegionSolution, OracleError> {
    if coeffs.len() != region.dim() {
        return Err(OracleError::BadInput("objective dimension mismatch".into()));
    }
    let objective_phi: Vec<f64> = region.vertices.iter().map(|b| dot(coeffs, b)).collect();
    let (sol, q_star) = solve_phi_lp(region, &objective_phi, feas)?;
    let phi = sol.x;
    let v_star = region.point(&phi);
    let value = dot(coeffs, &v_star) + constant;
    let comp_slack = dot(&q_star, &v_star);
    let dir: Vec<f64> = coeffs.iter().zip(&q_star).map(|(c, q)| c - q).collect();
    let active_controls = region.support_argmax_with_tol(&dir, 1e-9);
    Ok(RateRegionSolution {
        phi,
        v_star,
        value,
        q_star,
        comp_slack,
        active_controls,
        max_iters_hit: false,
    })
}

impl RateRegion {
    fn support_argmax_with_tol(&self, direction: &[f64], tol: f64) -> Vec<usize> {
        let scores: Vec<f64> = self.vertices.iter().map(|v| dot(direction, v)).collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        scores
            .iter()
            .enumerate()
            .filter(|(_, s)| **s >= best - tol)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Maximize a linear network utility subject to stability of the queues.
pub fn solve_linear(net: &NetworkModel, utility: &dyn NetworkUtility) -> Result<RateRegionSolution, OracleError> {
    let (coeffs, constant) = utility
        .linear_parts()
        .ok_or_else(|| OracleError::BadInput("solve_linear requires an affine utility".into()))?;
    let region = RateRegion::from_network(net);
    solve_linear_region(&region, &coeffs, constant, &FeasibleSpec::for_network(net))
}

/// Frank-Wolfe (with away steps) for a concave continuously differentiable
/// utility over the feasible part of the region. Linear subproblems are
/// simplex solves; dual prices come from the final linearization.
pub fn solve_concave(
    net: &NetworkModel,
    utility: &dyn NetworkUtility,
    tol: f64,
    max_iters: usize,
) -> Result<RateRegionSolution, OracleError> {
    let region = RateRegion::from_network(net);
    let feas = FeasibleSpec::for_network(net);
    solve_concave_region(&region, utility, &feas, tol, max_iters, None)
}

pub fn solve_concave_region(
    region: &RateRegion,
    utility: &dyn NetworkUtility,
    feas: &FeasibleSpec,
    tol: f64,
    max_iters: usize,
    start_phi: Option<Vec<f64>>,
) -> Result<RateRegionSolution, OracleError> {
    let k = region.n_vertices();
    // Feasible starting mixture: any LP solution works.
    let phi0 = match start_phi {
        Some(p) => p,
        None => solve_phi_lp(region, &vec![0.0; k], feas)?.0.x,
    };

    let value = |phi: &[f64]| utility.value(&region.point(phi));
    let gradient = |phi: &[f64]| {
        let g_v = utility.gradient(&region.point(phi));
        region.vertices.iter().map(|b| dot(&g_v, b)).collect::<Vec<f64>>()
    };
    let mut lmo_err = None;
    let mut lmo = |g_phi: &[f64]| match solve_phi_lp(region, g_phi, feas) {
        Ok((sol, _)) => sol.x,
        Err(e) => {
            lmo_err = Some(e);
            vec![0.0; k]
        }
    };
    let result = frank_wolfe::maximize(
        &mut frank_wolfe::FwProblem {
            value: &value,
            gradient: &gradient,
            lmo: &mut lmo,
        },
        phi0,
        tol,
        max_iters,
    );
    if let Some(e) = lmo_err {
        return Err(e);
    }

    let phi = result.point;
    let v_star = region.point(&phi);
    let g_v = utility.gradient(&v_star);
    let g_phi: Vec<f64> = region.vertices.iter().map(|b| dot(&g_v, b)).collect();
    let (_, q_star) = solve_phi_lp(region, &g_phi, feas)?;
    let comp_slack = dot(&q_star, &v_star);
    let dir: Vec<f64> = g_v.iter().zip(&q_star).map(|(c, q)| c - q).collect();
    let active_controls = region.support_argmax_with_tol(&dir, 1e-9);
    let value = utility.value(&v_star);
    Ok(RateRegionSolution {
        phi,
        v_star,
        value,
        q_star,
        comp_slack,
        active_controls,
        max_iters_hit: !result.converged,
    })
}

/// Euclidean distance from `x` to the hull, to additive tolerance `tol`.
pub fn distance_to_polytope(x: &[f64], region: &RateRegion, tol: f64) -> f64 {
    let k = region.n_vertices();
    if k == 1 {
        return dist(x, &region.vertices[0]);
    }
    let value = |phi: &[f64]| {
        let v = region.point(phi);
        -0.5 * dist(&v, x).powi(2)
    };
    let gradient = |phi: &[f64]| {
        let v = region.point(phi);
        let resid: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi - vi).collect();
        region.vertices.iter().map(|b| dot(&resid, b)).collect::<Vec<f64>>()
    };
    let mut lmo = |g_phi: &[f64]| {
        let mut best = 0;
        for j in 1..k {
            if g_phi[j] > g_phi[best] {
                best = j;
            }
        }
        let mut e = vec![0.0; k];
        e[best] = 1.0;
        e
    };
    let mut start = vec![0.0; k];
    start[0] = 1.0;
    let gap_tol = 0.5 * tol * tol;
    let result = frank_wolfe::maximize(
        &mut frank_wolfe::FwProblem {
            value: &value,
            gradient: &gradient,
            lmo: &mut lmo,
        },
        start,
        gap_tol.max(1e-18),
        200_000,
    );
    dist(&region.point(&result.point), x)
}

/// Distance from `x` to the optimal set `{v feasible : utility(v) = value}`
/// of a linear program over the region, to additive tolerance `tol`.
pub fn distance_to_optimal_face(
    x: &[f64],
    region: &RateRegion,
    coeffs: &[f64],
    constant: f64,
    optimal_value: f64,
    feas: &FeasibleSpec,
    tol: f64,
) -> Result<f64, OracleError> {
    let mut face = feas.clone();
    face.extra_eq.push((coeffs.to_vec(), optimal_value - constant));

    let k = region.n_vertices();
    let value = |phi: &[f64]| {
        let v = region.point(phi);
        -0.5 * dist(&v, x).powi(2)
    };
    let gradient = |phi: &[f64]| {
        let v = region.point(phi);
        let resid: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi - vi).collect();
        region.vertices.iter().map(|b| dot(&resid, b)).collect::<Vec<f64>>()
    };
    let start = solve_phi_lp(region, &vec![0.0; k], &face)?.0.x;
    let mut lmo_err = None;
    let mut lmo = |g_phi: &[f64]| match solve_phi_lp(region, g_phi, &face) {
        Ok((sol, _)) => sol.x,
        Err(e) => {
            lmo_err = Some(e);
            vec![0.0; k]
        }
    };
    let gap_tol = (0.5 * tol * tol).max(1e-16);
    let result = frank_wolfe::maximize(
        &mut frank_wolfe::FwProblem {
            value: &value,
            gradient: &gradient,
            lmo: &mut lmo,
        },
        start,
        gap_tol,
        2_000,
    );
    if let Some(e) = lmo_err {
        return Err(e);
    }
    Ok(dist(&region.point(&result.point), x))
}

/// Feasibility cross-check: is `x` exactly reconstructible as a hull point?
pub fn hull_membership(x: &[f64], region: &RateRegion) -> bool {
    let k = region.n_vertices();
    let n = region.dim();
    let mut constraints = Vec::with_capacity(n + 1);
    for node in 0..n {
        let coeffs: Vec<f64> = (0..k).map(|j| region.vertices[j][node]).collect();
        constraints.push(Constraint::new(coeffs, Relation::Eq, x[node]));
    }
    constraints.push(Constraint::new(vec![1.0; k], Relation::Eq, 1.0));
    let lp = LinearProgram {
        maximize: vec![0.0; k],
        constraints,
    };
    simplex::solve(&lp).is_ok()
}

/// Per-slot matching-rate LP report.
#[derive(Clone, Debug, Serialize)]
pub struct MatchingLp {
    /// Optimal average reward per slot.
    pub value: f64,
    /// Per-slot activation rates of the nonempty matchings, in scenario order.
    pub rates: Vec<f64>,
    /// Dual price per item type (free sign; rows are equalities).
    pub item_duals: Vec<f64>,
    /// Dual of the per-slot activation budget, nonnegative.
    pub budget_dual: f64,
    /// Largest complementary-slackness violation across rates and budget.
    pub max_comp_slack: f64,
    /// Largest reduced cost `w_j - p . mu(j) - sigma` (<= 0 at an optimum).
    pub max_reduced_cost: f64,
}

/// The matching-rate LP: maximize `sum_j x_j w_j` over per-slot rates
/// `x_j >= 0` of the nonempty matchings, subject to `sum_j x_j mu_i(j) =
/// alpha_i` for each item type and `sum_j x_j <= m`.
pub fn solve_matching_lp(s: &Scenario) -> Result<MatchingLp, OracleError> {
    solve_matching_lp_with_rates(s, &s.arrivals.mean_rates())
}

/// Same LP with explicit arrival rates, used after rate changes.
pub fn solve_matching_lp_with_rates(s: &Scenario, alpha: &[f64]) -> Result<MatchingLp, OracleError> {
    let nonempty: Vec<_> = s.matchings.iter().skip(1).collect();
    let j = nonempty.len();
    if j == 0 {
        return Err(OracleError::BadInput("scenario has no nonempty matchings".into()));
    }
    let n = s.n_items();
    let mut constraints = Vec::with_capacity(n + 1);
    for i in 0..n {
        let coeffs: Vec<f64> = nonempty.iter().map(|mspec| mspec.mu[i]).collect();
        constraints.push(Constraint::new(coeffs, Relation::Eq, alpha[i]));
    }
    constraints.push(Constraint::new(vec![1.0; j], Relation::Le, s.m as f64));
    let lp = LinearProgram {
        maximize: nonempty.iter().map(|mspec| mspec.reward).collect(),
        constraints,
    };
    let sol = simplex::solve(&lp).map_err(|e| match e {
        SimplexError::Infeasible { .. } => OracleError::Infeasible(
            "arrival rates cannot be matched at the given activation budget".to_string(),
        ),
        other => OracleError::Simplex(other),
    })?;

    let item_duals = sol.duals[..n].to_vec();
    let budget_dual = sol.duals[n];
    let mut max_comp_slack: f64 = (budget_dual * (s.m as f64 - sol.x.iter().sum::<f64>())).abs();
    let mut max_reduced_cost = f64::NEG_INFINITY;
    for (idx, mspec) in nonempty.iter().enumerate() {
        let reduced = mspec.reward - dot(&item_duals, &mspec.mu) - budget_dual;
        max_reduced_cost = max_reduced_cost.max(reduced);
        max_comp_slack = max_comp_slack.max((sol.x[idx] * reduced).abs());
    }
    Ok(MatchingLp {
        value: sol.value,
        rates: sol.x,
        item_duals,
        budget_dual,
        max_comp_slack,
        max_reduced_cost,
    })
}

/// Convenience for tests and reports: Euclidean norm of the feasibility
/// violation of `v` under a spec (zero rows exactly zero, nonpos rows <= 0).
pub fn feasibility_residual(v: &[f64], feas: &FeasibleSpec) -> f64 {
    let mut sq = 0.0;
    for &n in &feas.zero_drift {
        sq += v[n] * v[n];
    }
    for &n in &feas.nonpos_drift {
        let viol = v[n].max(0.0);
        sq += viol * viol;
    }
    for (coeffs, rhs) in &feas.extra_eq {
        let viol = dot(coeffs, v) - rhs;
        sq += viol * viol;
    }
    sq.sqrt()
}

pub fn l2(x: &[f64]) -> f64 {
    norm(x)
}
