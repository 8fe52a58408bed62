//! Structural checkers: strict-drift feasibility over free-node subsets,
//! reduction of the drift dynamics to their reachable subspace, and the
//! bipartite stabilizability condition.

use serde::Serialize;

use super::{ArrivalSpec, ControlSpec, ModelError, NetworkModel};
use crate::linalg::{into_basis, orthonormal_basis};
use crate::oracle::simplex::{self, Constraint, LinearProgram, Relation, SimplexError};

/// Hard cap on free nodes for the exhaustive subset check (2^n LP solves).
pub const MAX_FREE_NODES: usize = 20;

#[derive(Clone, Debug, Serialize)]
pub struct SubsetWitness {
    /// Bit i set means free node i is required to have positive drift.
    pub subset_mask: u64,
    /// Mixture achieving the margin.
    pub phi: Vec<f64>,
    /// Best achievable margin for this subset (may be negative).
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Assumption1Report {
    pub holds: bool,
    /// Worst margin over all subsets.
    pub margin: f64,
    pub witnesses: Vec<SubsetWitness>,
}

/// For every subset S of free nodes, solves
///
/// ```text
/// max d  s.t.  sum_k phi_k b_n(k) >= d   for free n in S
///              sum_k phi_k b_n(k) <= -d  for free n not in S and all constrained n
///              phi in the probability simplex
/// ```
///
/// and reports whether the worst-case optimal margin is at least `epsilon`.
pub fn check_assumption1(net: &NetworkModel, epsilon: f64) -> Result<Assumption1Report, ModelError> {
    if net.n_free > MAX_FREE_NODES {
        return Err(ModelError::TooManyFreeNodes {
            count: net.n_free,
            max: MAX_FREE_NODES,
        });
    }
    let increments = net.mean_increments();
    let k = increments.len();
    let n = net.n_nodes();
    let free0 = net.n_constrained;

    let mut witnesses = Vec::with_capacity(1 << net.n_free);
    let mut worst = f64::INFINITY;
    for mask in 0u64..(1u64 << net.n_free) {
        // Variables: phi_0..phi_{k-1}, d_plus, d_minus (d = d_plus - d_minus).
        let mut constraints = Vec::with_capacity(n + 1);
        for node in 0..n {
            let positive = node >= free0 && (mask >> (node - free0)) & 1 == 1;
            let mut coeffs: Vec<f64> = (0..k).map(|j| increments[j][node]).collect();
            if positive {
                // drift - d >= 0  ->  -drift + d <= 0
                for c in coeffs.iter_mut() {
                    *c = -*c;
                }
                coeffs.push(1.0);
                coeffs.push(-1.0);
            } else {
                // drift + d <= 0
                coeffs.push(1.0);
                coeffs.push(-1.0);
            }
            constraints.push(Constraint::new(coeffs, Relation::Le, 0.0));
        }
        let mut simplex_row = vec![1.0; k];
        simplex_row.push(0.0);
        simplex_row.push(0.0);
        constraints.push(Constraint::new(simplex_row, Relation::Eq, 1.0));

        let mut objective = vec![0.0; k];
        objective.push(1.0);
        objective.push(-1.0);

        let lp = LinearProgram {
            maximize: objective,
            constraints,
        };
        let (phi, margin) = match simplex::solve(&lp) {
            Ok(sol) => (sol.x[..k].to_vec(), sol.value),
            Err(SimplexError::Infeasible { .. }) => (vec![0.0; k], f64::NEG_INFINITY),
            Err(e) => {
                return Err(ModelError::DimensionMismatch(format!(
                    "subset LP failed unexpectedly: {e}"
                )))
            }
        };
        worst = worst.min(margin);
        witnesses.push(SubsetWitness {
            subset_mask: mask,
            phi,
            margin,
        });
    }

    Ok(Assumption1Report {
        holds: worst >= epsilon,
        margin: worst,
        witnesses,
    })
}

#[derive(Clone, Debug)]
pub struct SubspaceReduction {
    /// Orthonormal rows spanning the reachable drift subspace of the free
    /// coordinates. Length equals the reduced free dimension.
    pub basis: Vec<Vec<f64>>,
    pub reduced: NetworkModel,
    /// True when the increments already span all free coordinates and the
    /// input was passed through unchanged.
    pub identity: bool,
}

/// Re-expresses the free coordinates of a network in an orthonormal basis of
/// the subspace actually reachable by the dynamics: the span of the
/// mean-increment differences together with the arrival-noise directions.
/// Constrained coordinates pass through unchanged. Queues confined to an
/// affine subspace (say a conserved linear identity across queues) otherwise
/// make the subset drift check fail vacuously.
pub fn reduce_drift_subspace(net: &NetworkModel, tol: f64) -> Result<SubspaceReduction, ModelError> {
    if !(tol > 0.0) {
        return Err(ModelError::NonPositiveTolerance(tol));
    }
    let nf = net.n_free;
    let free0 = net.n_constrained;
    let free_part = |v: &[f64]| v[free0..].to_vec();

    let increments = net.mean_increments();
    let mut directions: Vec<Vec<f64>> = Vec::new();
    let base = free_part(&increments[0]);
    for b in increments.iter().skip(1) {
        let fp = free_part(b);
        directions.push(fp.iter().zip(&base).map(|(a, c)| a - c).collect());
    }
    // Arrival-noise directions: differences between batch support points, or
    // per-node axes for independent per-node noise.
    fn push_batch_dirs(
        directions: &mut Vec<Vec<f64>>,
        nf: usize,
        free0: usize,
        batches: &[(Vec<f64>, f64)],
        offset: usize,
        dims: usize,
    ) {
        if let Some((first, _)) = batches.first() {
            for (batch, _) in batches.iter().skip(1) {
                let mut d = vec![0.0; nf];
                for i in 0..dims {
                    let node = offset + i;
                    if node >= free0 {
                        d[node - free0] = batch[i] - first[i];
                    }
                }
                directions.push(d);
            }
        }
    }
    match &net.arrival_process {
        super::ArrivalProcess::SlottedShared { model, first_node, .. } => match model {
            super::ArrivalModel::BatchTable { batches } => {
                push_batch_dirs(&mut directions, nf, free0, batches, *first_node, model.n_items())
            }
            super::ArrivalModel::IndependentPoisson { rates } => {
                for (i, &r) in rates.iter().enumerate() {
                    let node = first_node + i;
                    if r > 0.0 && node >= free0 {
                        let mut d = vec![0.0; nf];
                        d[node - free0] = 1.0;
                        directions.push(d);
                    }
                }
            }
        },
        super::ArrivalProcess::PerControl => {
            for ctl in &net.controls {
                match &ctl.arrivals {
                    ArrivalSpec::Batches(batches) => {
                        push_batch_dirs(&mut directions, nf, free0, batches, 0, net.n_nodes())
                    }
                    ArrivalSpec::PoissonPerNode(rates) => {
                        for (node, &r) in rates.iter().enumerate() {
                            if r > 0.0 && node >= free0 {
                                let mut d = vec![0.0; nf];
                                d[node - free0] = 1.0;
                                directions.push(d);
                            }
                        }
                    }
                    ArrivalSpec::None | ArrivalSpec::Deterministic(_) => {}
                }
            }
        }
    }
    directions.extend(net.extra_drift_directions.iter().cloned());

    let basis = orthonormal_basis(&directions, tol);
    if basis.len() == nf {
        let mut identity_basis: Vec<Vec<f64>> = Vec::with_capacity(nf);
        for i in 0..nf {
            let mut e = vec![0.0; nf];
            e[i] = 1.0;
            identity_basis.push(e);
        }
        return Ok(SubspaceReduction {
            basis: identity_basis,
            reduced: net.clone(),
            identity: true,
        });
    }

    // Mean-only reduced model: removal = -rotated mean increment, arrivals
    // folded into the means. The rotated noise directions are carried in
    // extra_drift_directions so a second reduction is the identity.
    let r = basis.len();
    let controls: Vec<ControlSpec> = net
        .controls
        .iter()
        .enumerate()
        .map(|(k, ctl)| {
            let b = &increments[k];
            let mut removal = Vec::with_capacity(net.n_constrained + r);
            for node in 0..net.n_constrained {
                removal.push(-b[node]);
            }
            let rotated = into_basis(&basis, &free_part(b));
            removal.extend(rotated.iter().map(|v| -v));
            ControlSpec {
                label: ctl.label.clone(),
                removal,
                arrivals: ArrivalSpec::None,
            }
        })
        .collect();
    let rotated_noise: Vec<Vec<f64>> = directions.iter().map(|d| into_basis(&basis, d)).collect();
    let reduced = NetworkModel {
        n_constrained: net.n_constrained,
        n_free: r,
        controls,
        arrival_process: super::ArrivalProcess::PerControl,
        extra_drift_directions: rotated_noise,
    };
    Ok(SubspaceReduction {
        basis,
        reduced,
        identity: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Side {
    Top,
    Bottom,
}

#[derive(Clone, Debug, Serialize)]
pub struct NcondReport {
    pub stabilizable: bool,
    /// A violating strict subset, when one exists, with the side it lives on.
    pub violating_subset: Option<(Side, Vec<usize>)>,
    /// Worst margin `alpha_B(T) - alpha_T` over strict nonempty subsets of
    /// either side.
    pub min_margin: f64,
    /// Whether the two sides carry the same total rate; items leave in
    /// (top, bottom) pairs, so unequal totals are unstabilizable outright.
    pub totals_balanced: bool,
}

/// Bipartite stabilizability: with a connected matching graph and matched
/// totals, the system is stabilizable iff `alpha_T < alpha_B(T)` for every
/// strict nonempty subset T of either side, where `B(T)` is the set of items
/// on the other side adjacent to T. For balanced totals the two sides imply
/// each other; checking both keeps the verdict sound for perturbed rates.
pub fn check_ncond(
    top_rates: &[f64],
    bottom_rates: &[f64],
    edges: &[(usize, usize)],
) -> Result<NcondReport, ModelError> {
    let nt = top_rates.len();
    let nb = bottom_rates.len();
    if !connected(nt, nb, edges) {
        return Err(ModelError::DisconnectedMatchingGraph);
    }
    let transposed: Vec<(usize, usize)> = edges.iter().map(|&(t, b)| (b, t)).collect();
    let (top_margin, top_violation) = one_side_subsets(top_rates, bottom_rates, edges);
    let (bottom_margin, bottom_violation) = one_side_subsets(bottom_rates, top_rates, &transposed);

    let min_margin = top_margin.min(bottom_margin);
    let violating_subset = top_violation
        .map(|t| (Side::Top, t))
        .or(bottom_violation.map(|b| (Side::Bottom, b)));
    let totals_balanced =
        (top_rates.iter().sum::<f64>() - bottom_rates.iter().sum::<f64>()).abs() <= 1e-9;
    Ok(NcondReport {
        stabilizable: violating_subset.is_none() && totals_balanced,
        violating_subset,
        min_margin,
        totals_balanced,
    })
}

/// Margin and first violating strict nonempty subset on one side.
fn one_side_subsets(
    side_rates: &[f64],
    other_rates: &[f64],
    edges: &[(usize, usize)],
) -> (f64, Option<Vec<usize>>) {
    let ns = side_rates.len();
    let mut neighbors: Vec<u64> = vec![0; ns];
    for &(s, o) in edges {
        neighbors[s] |= 1 << o;
    }
    let mut min_margin = f64::INFINITY;
    let mut violating = None;
    if ns < 2 {
        return (min_margin, violating);
    }
    for mask in 1u64..((1u64 << ns) - 1) {
        let mut alpha_t = 0.0;
        let mut o_mask = 0u64;
        for s in 0..ns {
            if (mask >> s) & 1 == 1 {
                alpha_t += side_rates[s];
                o_mask |= neighbors[s];
            }
        }
        let mut alpha_b = 0.0;
        for (o, rate) in other_rates.iter().enumerate() {
            if (o_mask >> o) & 1 == 1 {
                alpha_b += rate;
            }
        }
        let margin = alpha_b - alpha_t;
        if margin < min_margin {
            min_margin = margin;
        }
        if margin <= 0.0 && violating.is_none() {
            violating = Some((0..ns).filter(|s| (mask >> s) & 1 == 1).collect());
        }
    }
    (min_margin, violating)
}

fn connected(nt: usize, nb: usize, edges: &[(usize, usize)]) -> bool {
    let total = nt + nb;
    if total == 0 {
        return true;
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); total];
    for &(t, b) in edges {
        adj[t].push(nt + b);
        adj[nt + b].push(t);
    }
    let mut seen = vec![false; total];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Verifies a witness mixture independently of the LP: recomputes every node
/// drift and returns the realized margin for the subset.
pub fn witness_margin(net: &NetworkModel, witness: &SubsetWitness) -> f64 {
    let increments = net.mean_increments();
    let free0 = net.n_constrained;
    let n = net.n_nodes();
    let mut margin = f64::INFINITY;
    for node in 0..n {
        let drift: f64 = witness
            .phi
            .iter()
            .enumerate()
            .map(|(k, w)| w * increments[k][node])
            .sum();
        let positive = node >= free0 && (witness.subset_mask >> (node - free0)) & 1 == 1;
        margin = margin.min(if positive { drift } else { -drift });
    }
    margin
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArrivalModel, ArrivalProcess};

    fn free_network(increments: Vec<Vec<f64>>) -> NetworkModel {
        let nf = increments[0].len();
        NetworkModel {
            n_constrained: 0,
            n_free: nf,
            controls: increments
                .into_iter()
                .enumerate()
                .map(|(k, b)| ControlSpec {
                    label: format!("k{k}"),
                    removal: b.iter().map(|v| -v).collect(),
                    arrivals: ArrivalSpec::None,
                })
                .collect(),
            arrival_process: ArrivalProcess::PerControl,
            extra_drift_directions: vec![],
        }
    }

    #[test]
    fn single_free_node_with_only_positive_drift_fails() {
        // One free node, one control with strictly positive drift: no subset
        // strategy can push the queue down.
        let net = free_network(vec![vec![0.5]]);
        let report = check_assumption1(&net, 1e-6).unwrap();
        assert!(!report.holds);
    }

    #[test]
    fn symmetric_two_direction_network_holds() {
        let net = free_network(vec![vec![1.0], vec![-1.0]]);
        let report = check_assumption1(&net, 0.5).unwrap();
        assert!(report.holds, "margin {}", report.margin);
        for w in &report.witnesses {
            assert!(witness_margin(&net, w) >= w.margin - 1e-9);
        }
    }

    #[test]
    fn monotone_in_epsilon() {
        let net = free_network(vec![vec![1.0, 0.2], vec![-1.0, 0.3], vec![0.1, -0.9]]);
        let strict = check_assumption1(&net, 1e-3).unwrap();
        let loose = check_assumption1(&net, 1e-6).unwrap();
        if strict.holds {
            assert!(loose.holds);
        }
        assert!((strict.margin - loose.margin).abs() < 1e-12);
    }

    #[test]
    fn too_many_free_nodes_rejected() {
        let net = free_network(vec![vec![0.0; 21]]);
        assert!(matches!(
            check_assumption1(&net, 1e-6),
            Err(ModelError::TooManyFreeNodes { .. })
        ));
    }

    #[test]
    fn full_rank_network_reduces_to_identity() {
        let net = free_network(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let red = reduce_drift_subspace(&net, 1e-9).unwrap();
        assert!(red.identity);
        assert_eq!(red.reduced.n_free, 2);
    }

    #[test]
    fn paired_arrivals_reduce_to_one_coordinate() {
        // Two item queues, arrivals always in (1,1) pairs, matchings remove
        // (1,1): everything happens along the diagonal.
        let net = NetworkModel {
            n_constrained: 0,
            n_free: 2,
            controls: vec![
                ControlSpec {
                    label: "idle".into(),
                    removal: vec![0.0, 0.0],
                    arrivals: ArrivalSpec::None,
                },
                ControlSpec {
                    label: "pair".into(),
                    removal: vec![1.0, 1.0],
                    arrivals: ArrivalSpec::None,
                },
            ],
            arrival_process: ArrivalProcess::SlottedShared {
                model: ArrivalModel::BatchTable {
                    batches: vec![(vec![1.0, 1.0], 1.0)],
                },
                rounds_per_slot: 2,
                first_node: 0,
            },
            extra_drift_directions: vec![],
        };
        let red = reduce_drift_subspace(&net, 1e-9).unwrap();
        assert_eq!(red.basis.len(), 1);
        // Basis direction is the normalized diagonal.
        let b = &red.basis[0];
        assert!((b[0].abs() - (0.5f64).sqrt()).abs() < 1e-12);
        assert!((b[0] - b[1]).abs() < 1e-12);
        // Idempotent: reducing the reduced model keeps the dimension.
        let again = reduce_drift_subspace(&red.reduced, 1e-9).unwrap();
        assert_eq!(again.reduced.n_free, red.reduced.n_free);
        assert!(again.identity);
    }

    #[test]
    fn ncond_single_edge_unequal_rates() {
        // One item per side, single edge, unequal rates: pairs cannot form at
        // matched speed, so the system is not stabilizable.
        let report = check_ncond(&[0.6], &[0.4], &[(0, 0)]).unwrap();
        assert!(!report.stabilizable);
        assert!(!report.totals_balanced);
    }

    #[test]
    fn ncond_subset_violation_is_reported() {
        // Two top items funnel into a single slow bottom item.
        let report = check_ncond(
            &[0.4, 0.35, 0.25],
            &[0.5, 0.3, 0.2],
            &[(0, 0), (1, 0), (2, 1), (2, 2), (0, 1)],
        )
        .unwrap();
        assert!(report.stabilizable, "{report:?}");
        let bad = check_ncond(
            &[0.4, 0.45, 0.15],
            &[0.3, 0.3, 0.4],
            &[(0, 0), (1, 0), (2, 1), (2, 2), (0, 1)],
        )
        .unwrap();
        // T = {1}: B({1}) = {0} carries 0.3 < 0.45.
        assert!(!bad.stabilizable);
        assert_eq!(bad.violating_subset, Some((Side::Top, vec![1])));
    }

    #[test]
    fn ncond_disconnected_graph_errors() {
        let err = check_ncond(&[0.5, 0.5], &[0.5, 0.5], &[(0, 0)]).unwrap_err();
        assert!(matches!(err, ModelError::DisconnectedMatchingGraph));
    }

    #[test]
    fn ncond_full_subset_excluded() {
        // alpha_T = alpha_B(T) for the full set; must not be checked.
        let report = check_ncond(&[0.5, 0.5], &[0.5, 0.5], &[(0, 0), (1, 1), (0, 1), (1, 0)]).unwrap();
        assert!(report.stabilizable);
    }
}
