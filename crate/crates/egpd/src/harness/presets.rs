//! Built-in experiment presets with their reference values and pass/fail
//! checks. Each preset is a fully specified scenario; `run_preset` executes
//! it, compares against the references, and reports one check per criterion.

use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use super::{beta_sweep, make_run_report, spearman, CheckResult, RunReport, SweepRow};
use crate::matching::{self, SchemeOptions};
use crate::model::{
    ArrivalModel, CompletionPolicy, MatchingSpec, Scenario, UtilitySpec,
};
use crate::oracle;

/// Four item types; matchings: empty, the four singles, <1,2>, <2,3>,
/// <2,3,4>; rewards (0,-1,-1,1,2,5,4,7); Poisson arrivals (1.2,1.5,2,0.8).
pub fn experiment_a() -> Scenario {
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
        horizon: 30_000,
        seed: 1_234_567,
        rate_changes: vec![],
    }
}

/// Exact optimum of the experiment-A matching LP (hand-solvable system):
/// all type-1 items pair into <1,2>, the remaining type-2 flow into <2,3,4>,
/// the rest of types 3 and 4 go out alone.
pub fn experiment_a_lp_reference() -> (f64, [f64; 7]) {
    (10.8, [0.0, 0.0, 1.7, 0.5, 1.2, 0.0, 0.3])
}

/// Published reference activation rates for this configuration, used for
/// regression comparison of the simulated controller.
pub fn experiment_a_reference_rates() -> [f64; 7] {
    [0.0, 0.0, 1.69345, 0.4829, 1.1924, 0.0, 0.31075]
}

/// Gain values for the reward-vs-gain sweep.
pub fn experiment_b_betas() -> [f64; 5] {
    [0.01, 0.1, 1.0, 10.0, 100.0]
}

/// Rate-change experiment: gain 0.1, arrival rates switch to
/// (1.8, 0.8, 1.4, 1.0) at slot 2000; completion rates are measured over
/// slots [6000, 10000).
pub fn experiment_c() -> Scenario {
    let mut s = experiment_a();
    s.beta = 0.1;
    s.horizon = 10_000;
    s.seed = 24_680;
    s.rate_changes = vec![(
        2000,
        ArrivalModel::IndependentPoisson {
            rates: vec![1.8, 0.8, 1.4, 1.0],
        },
    )];
    s
}

pub fn experiment_c_window() -> (u64, u64) {
    (6000, 10_000)
}

pub fn experiment_c_changed_rates() -> Vec<f64> {
    vec![1.8, 0.8, 1.4, 1.0]
}

/// Bipartite pair-matching system: items {1,2,3,4} on top and
/// {1',2',3',4'} on the bottom, pair arrivals, pair matchings with rewards
/// 5 or 50, linear holding costs, two matchings per slot.
pub fn bipartite_profit() -> Scenario {
    let pair = |t: usize, b: usize| {
        let mut mu = vec![0.0; 8];
        mu[t] = 1.0;
        mu[4 + b] = 1.0;
        mu
    };
    let matchings: Vec<(Vec<f64>, f64)> = vec![
        (vec![0.0; 8], 0.0),
        (pair(0, 2), 5.0),  // <1,3'>
        (pair(0, 3), 50.0), // <1,4'>
        (pair(1, 2), 5.0),  // <2,3'>
        (pair(1, 3), 50.0), // <2,4'>
        (pair(2, 0), 5.0),  // <3,1'>
        (pair(2, 1), 50.0), // <3,2'>
        (pair(2, 2), 5.0),  // <3,3'>
        (pair(3, 0), 50.0), // <4,1'>
        (pair(3, 1), 5.0),  // <4,2'>
    ];
    let arrival = |t: usize, b: usize| {
        let mut v = vec![0.0; 8];
        v[t] = 1.0;
        v[4 + b] = 1.0;
        v
    };
    Scenario {
        item_labels: vec![
            "1".into(),
            "2".into(),
            "3".into(),
            "4".into(),
            "1p".into(),
            "2p".into(),
            "3p".into(),
            "4p".into(),
        ],
        matchings: matchings
            .into_iter()
            .enumerate()
            .map(|(id, (mu, w))| MatchingSpec::new(id, mu, w))
            .collect(),
        arrivals: ArrivalModel::BatchTable {
            batches: vec![
                (arrival(0, 0), 0.166),
                (arrival(0, 1), 0.083),
                (arrival(1, 0), 0.087),
                (arrival(1, 1), 0.083),
                (arrival(2, 3), 0.2324),
                (arrival(3, 2), 0.2656),
                (arrival(3, 3), 0.083),
            ],
        },
        m: 2,
        beta: 0.5,
        gamma: vec![1.0; 8],
        utility: UtilitySpec::LinearSum,
        holding_costs: vec![0.1, 0.2, 0.3, 0.4, 0.4, 0.3, 0.2, 0.1],
        completion_policy: CompletionPolicy::Fcfs,
        horizon: 120_000,
        seed: 97_531,
        rate_changes: vec![],
    }
}

/// Matching-graph edges of the bipartite preset as (top, bottom) index pairs.
pub fn bipartite_edges() -> Vec<(usize, usize)> {
    vec![
        (0, 2),
        (0, 3),
        (1, 2),
        (1, 3),
        (2, 0),
        (2, 1),
        (2, 2),
        (3, 0),
        (3, 1),
    ]
}

/// Gain grid for the bipartite profit sweep, spanning the decline of the
/// average reward from near-optimal to its large-gain plateau.
pub fn bipartite_betas() -> [f64; 6] {
    [0.1, 0.3, 1.0, 3.0, 10.0, 30.0]
}

/// Variant of experiment A in which every constant (arrival rates, gain,
/// rewards, requirements) is a dyadic rational, so the virtual controller and
/// the embedded network controller compute bit-identical scores and tie sets.
/// Used for the exact decision-equivalence checks.
pub fn equivalence_scenario() -> Scenario {
    let mut s = experiment_a();
    s.arrivals = ArrivalModel::IndependentPoisson {
        rates: vec![1.25, 1.5, 2.0, 0.75],
    };
    s.beta = 1.0 / 128.0;
    s.horizon = 1000;
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetName {
    ExpA,
    ExpBBetaSweep,
    ExpCRateChange,
    BipartiteProfit,
}

impl PresetName {
    pub fn all() -> [PresetName; 4] {
        [
            PresetName::ExpA,
            PresetName::ExpBBetaSweep,
            PresetName::ExpCRateChange,
            PresetName::BipartiteProfit,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::ExpA => "expA",
            PresetName::ExpBBetaSweep => "expB_beta_sweep",
            PresetName::ExpCRateChange => "expC_rate_change",
            PresetName::BipartiteProfit => "bipartite_profit",
        }
    }
}

impl FromStr for PresetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "expA" => Ok(PresetName::ExpA),
            "expB_beta_sweep" => Ok(PresetName::ExpBBetaSweep),
            "expC_rate_change" => Ok(PresetName::ExpCRateChange),
            "bipartite_profit" => Ok(PresetName::BipartiteProfit),
            other => Err(format!(
                "unknown preset '{other}'; expected one of expA, expB_beta_sweep, expC_rate_change, bipartite_profit"
            )),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PresetReport {
    pub name: String,
    pub checks: Vec<CheckResult>,
    pub run_report: Option<RunReport>,
    pub sweep: Option<Vec<SweepRow>>,
    /// CSV artifacts produced by the preset, as (file name, contents).
    pub artifacts: Vec<(String, String)>,
}

impl PresetReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PresetError {
    #[error(transparent)]
    Matching(#[from] matching::MatchingError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
}

pub fn run_preset(name: PresetName) -> Result<PresetReport, PresetError> {
    match name {
        PresetName::ExpA => run_expa(),
        PresetName::ExpBBetaSweep => run_expb(),
        PresetName::ExpCRateChange => run_expc(),
        PresetName::BipartiteProfit => run_bipartite(),
    }
}

fn run_expa() -> Result<PresetReport, PresetError> {
    let s = experiment_a();
    let lp = oracle::solve_matching_lp(&s)?;
    let started = Instant::now();
    let run = matching::run_scheme(&s, 0, &SchemeOptions::default())?;
    let wall = started.elapsed().as_millis();

    let (lp_value_ref, lp_rates_ref) = experiment_a_lp_reference();
    let reference = experiment_a_reference_rates();
    let mut checks = Vec::new();
    checks.push(CheckResult::new(
        "lp-value-exact",
        (lp.value - lp_value_ref).abs() <= 1e-9,
        format!("lp value {} vs {}", lp.value, lp_value_ref),
    ));
    let lp_rate_err = lp
        .rates
        .iter()
        .zip(lp_rates_ref.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    checks.push(CheckResult::new(
        "lp-rates-exact",
        lp_rate_err <= 1e-9,
        format!("max rate error {lp_rate_err:.3e}"),
    ));
    let reward = run.avg_completed_reward();
    checks.push(CheckResult::new(
        "avg-reward-within-2pct",
        (reward - lp_value_ref).abs() <= 0.02 * lp_value_ref,
        format!("avg completed reward {reward:.4} vs optimal {lp_value_ref}"),
    ));
    let rates = run.completed_rates();
    let rate_err = rates
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    checks.push(CheckResult::new(
        "completed-rates-near-reference",
        rate_err <= 0.05,
        format!("max deviation {rate_err:.4} from reference rates"),
    ));
    checks.push(CheckResult::new(
        "queue-relation-invariants",
        run.violations.total() == 0,
        format!("{:?}", run.violations),
    ));

    let csv = matching::metrics_csv(&run, &s);
    let report = make_run_report(&s, &run, wall, Some(&lp), checks.clone());
    Ok(PresetReport {
        name: "expA".into(),
        checks,
        run_report: Some(report),
        sweep: None,
        artifacts: vec![("expA_metrics.csv".into(), csv)],
    })
}

fn run_expb() -> Result<PresetReport, PresetError> {
    let s = experiment_a();
    let betas = experiment_b_betas();
    let rows = beta_sweep(&s, &betas)?;
    let (optimal, _) = experiment_a_lp_reference();

    let mut checks = Vec::new();
    for row in rows.iter().filter(|r| r.beta <= 1.0) {
        checks.push(CheckResult::new(
            &format!("near-optimal-at-beta-{}", row.beta),
            row.avg_reward >= 0.95 * optimal,
            format!("reward {:.4} vs 0.95 * {optimal}", row.avg_reward),
        ));
    }
    let small = rows.iter().find(|r| r.beta == 0.01).expect("beta 0.01 in sweep");
    for row in rows.iter().filter(|r| r.beta >= 10.0) {
        checks.push(CheckResult::new(
            &format!("lower-plateau-at-beta-{}", row.beta),
            row.avg_reward <= small.avg_reward - 0.5,
            format!("reward {:.4} vs {:.4} - 0.5", row.avg_reward, small.avg_reward),
        ));
    }
    let mid = rows.iter().find(|r| r.beta == 0.1).expect("beta 0.1 in sweep");
    let ratio = small.mean_abs_q_second_half / mid.mean_abs_q_second_half;
    checks.push(CheckResult::new(
        "queue-scale-inverse-in-gain",
        (3.0..=30.0).contains(&ratio),
        format!("mean |Q| ratio {ratio:.2} between gains 0.01 and 0.1"),
    ));
    checks.push(CheckResult::new(
        "queue-relation-invariants",
        rows.iter().all(|r| r.invariant_violations == 0),
        "all sweep runs",
    ));

    let csv = super::sweep_csv(&rows);
    Ok(PresetReport {
        name: "expB_beta_sweep".into(),
        checks,
        run_report: None,
        sweep: Some(rows),
        artifacts: vec![("expB_sweep.csv".into(), csv)],
    })
}

fn run_expc() -> Result<PresetReport, PresetError> {
    let s = experiment_c();
    let window = experiment_c_window();
    let started = Instant::now();
    let run = matching::run_scheme(
        &s,
        0,
        &SchemeOptions {
            stride: 0,
            window: Some(window),
        },
    )?;
    let wall = started.elapsed().as_millis();
    let post_lp = oracle::solve_matching_lp_with_rates(&s, &experiment_c_changed_rates())?;

    let mut checks = Vec::new();
    let window_rates = run.window_completed_rates();
    let err = window_rates
        .iter()
        .zip(post_lp.rates.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    checks.push(CheckResult::new(
        "post-change-rates-match-lp",
        err <= 0.1,
        format!(
            "max deviation {err:.4}; window rates {window_rates:?} vs lp {:?}",
            post_lp.rates
        ),
    ));
    checks.push(CheckResult::new(
        "queue-relation-invariants",
        run.violations.total() == 0,
        format!("{:?}", run.violations),
    ));

    let csv = matching::metrics_csv(&run, &s);
    let report = make_run_report(&s, &run, wall, Some(&post_lp), checks.clone());
    Ok(PresetReport {
        name: "expC_rate_change".into(),
        checks,
        run_report: Some(report),
        sweep: None,
        artifacts: vec![("expC_metrics.csv".into(), csv)],
    })
}

fn run_bipartite() -> Result<PresetReport, PresetError> {
    let s = bipartite_profit();
    let betas = bipartite_betas();
    let rows = beta_sweep(&s, &betas)?;

    let mut checks = Vec::new();
    let beta_vals: Vec<f64> = rows.iter().map(|r| r.beta).collect();
    let holding: Vec<f64> = rows.iter().map(|r| r.avg_holding_cost).collect();
    let rho = spearman(&beta_vals, &holding);
    checks.push(CheckResult::new(
        "holding-cost-decreasing",
        rho <= -0.9,
        format!("spearman(beta, holding cost) = {rho:.3}"),
    ));
    // Rewards decline with the gain; consecutive steps may only move down,
    // up to simulation resolution.
    let mut monotone = true;
    for w in rows.windows(2) {
        if w[1].avg_reward > w[0].avg_reward + 5e-3 * w[0].avg_reward.abs() {
            monotone = false;
        }
    }
    checks.push(CheckResult::new(
        "reward-non-increasing",
        monotone,
        format!(
            "rewards {:?}",
            rows.iter().map(|r| r.avg_reward).collect::<Vec<_>>()
        ),
    ));
    let argmax = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.avg_profit.partial_cmp(&b.1.avg_profit).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    checks.push(CheckResult::new(
        "profit-peaks-interior",
        argmax > 0 && argmax + 1 < rows.len(),
        format!("argmax profit at grid index {argmax} of {}", rows.len()),
    ));
    checks.push(CheckResult::new(
        "queue-relation-invariants",
        rows.iter().all(|r| r.invariant_violations == 0),
        "all sweep runs",
    ));

    let csv = super::sweep_csv(&rows);
    Ok(PresetReport {
        name: "bipartite_profit".into(),
        checks,
        run_report: None,
        sweep: Some(rows),
        artifacts: vec![("bipartite_sweep.csv".into(), csv)],
    })
}
