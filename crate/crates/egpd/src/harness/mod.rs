//! Experiment plumbing: run reports, parameter sweeps, CSV self-checks, and
//! the preset experiments in [`presets`].

pub mod presets;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::matching::{self, MatchingError, SchemeOptions, SchemeRun};
use crate::model::Scenario;
use crate::oracle::MatchingLp;

/// Stable content digest of a scenario (sha-256 of its canonical text form).
pub fn scenario_digest(s: &Scenario) -> String {
    let mut hasher = Sha256::new();
    hasher.update(s.canonical_string().as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail: detail.into(),
        }
    }
}

/// Summary of one simulation run, deterministic given (scenario, seed).
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub scenario_digest: String,
    pub seed: u64,
    pub slots: u64,
    pub wall_time_ms: u128,
    /// Cumulative empirical mean of completed rewards per slot.
    pub avg_completed_reward: f64,
    /// The controller's internal running average, rescaled to per-slot units.
    pub internal_avg_reward: f64,
    pub avg_holding_cost: f64,
    pub avg_profit: f64,
    pub virtual_rates: Vec<f64>,
    pub completed_rates: Vec<f64>,
    pub mean_abs_q: f64,
    pub lp_value: Option<f64>,
    pub lp_rates: Option<Vec<f64>>,
    pub stable: bool,
    pub invariant_violations: u64,
    pub checks: Vec<CheckResult>,
}

/// Linear-regression slope of the total physical queue over the second half
/// of the recorded rows; a stable system has a slope near zero while a
/// starved one grows at the arrival rate.
pub fn queue_growth_slope(run: &SchemeRun) -> f64 {
    let rows: Vec<(f64, f64)> = run
        .rows
        .iter()
        .filter(|r| r.t >= run.slots / 2)
        .map(|r| (r.t as f64, r.qhat.iter().sum::<f64>()))
        .collect();
    if rows.len() < 2 {
        return 0.0;
    }
    let n = rows.len() as f64;
    let mean_t = rows.iter().map(|(t, _)| t).sum::<f64>() / n;
    let mean_y = rows.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in &rows {
        num += (t - mean_t) * (y - mean_y);
        den += (t - mean_t) * (t - mean_t);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn stability_flag(s: &Scenario, run: &SchemeRun) -> bool {
    let total_rate: f64 = s.arrivals.mean_rates().iter().sum();
    queue_growth_slope(run) < 0.05 * total_rate
}

pub fn make_run_report(
    s: &Scenario,
    run: &SchemeRun,
    wall_time_ms: u128,
    lp: Option<&MatchingLp>,
    checks: Vec<CheckResult>,
) -> RunReport {
    RunReport {
        scenario_digest: scenario_digest(s),
        seed: s.seed,
        slots: run.slots,
        wall_time_ms,
        avg_completed_reward: run.avg_completed_reward(),
        internal_avg_reward: run.internal_avg_reward(s),
        avg_holding_cost: run.avg_holding_cost(),
        avg_profit: run.avg_profit(),
        virtual_rates: run.virtual_rates(),
        completed_rates: run.completed_rates(),
        mean_abs_q: run.mean_abs_q,
        lp_value: lp.map(|l| l.value),
        lp_rates: lp.map(|l| l.rates.clone()),
        stable: stability_flag(s, run),
        invariant_violations: run.violations.total(),
        checks,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub avg_reward: f64,
    pub avg_holding_cost: f64,
    pub avg_profit: f64,
    pub mean_abs_q: f64,
    pub mean_abs_q_second_half: f64,
    pub invariant_violations: u64,
}

/// Independent seeded runs, one per gain value, executed in parallel. Each
/// run derives its stream from the gain's bit pattern, so results do not
/// depend on list order or parallelism degree. The returned table is sorted
/// by gain.
pub fn beta_sweep(s: &Scenario, betas: &[f64]) -> Result<Vec<SweepRow>, MatchingError> {
    let mut rows = betas
        .par_iter()
        .map(|&beta| {
            let mut variant = s.clone();
            variant.beta = beta;
            let run = matching::run_scheme(&variant, beta.to_bits(), &SchemeOptions::default())?;
            Ok(SweepRow {
                beta,
                avg_reward: run.avg_completed_reward(),
                avg_holding_cost: run.avg_holding_cost(),
                avg_profit: run.avg_profit(),
                mean_abs_q: run.mean_abs_q,
                mean_abs_q_second_half: run.mean_abs_q_second_half,
                invariant_violations: run.violations.total(),
            })
        })
        .collect::<Result<Vec<_>, MatchingError>>()?;
    rows.sort_by(|a, b| a.beta.partial_cmp(&b.beta).unwrap());
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "beta,avg_reward,avg_holding_cost,avg_profit,mean_abs_q,mean_abs_q_second_half,invariant_violations\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.beta,
            r.avg_reward,
            r.avg_holding_cost,
            r.avg_profit,
            r.mean_abs_q,
            r.mean_abs_q_second_half,
            r.invariant_violations
        ));
    }
    out
}

/// Schema self-check for emitted CSV: consistent column count and, when the
/// first column is named `t` or `beta`, strictly increasing values.
pub fn csv_self_check(text: &str) -> Result<(), String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty csv")?;
    let cols = header.split(',').count();
    let monotone_first = matches!(header.split(',').next(), Some("t") | Some("beta"));
    let mut prev: Option<f64> = None;
    for (i, line) in lines.enumerate() {
        let n = line.split(',').count();
        if n != cols {
            return Err(format!("row {} has {} columns, header has {}", i + 2, n, cols));
        }
        if monotone_first {
            let first: f64 = line
                .split(',')
                .next()
                .unwrap()
                .parse()
                .map_err(|e| format!("row {}: {e}", i + 2))?;
            if let Some(p) = prev {
                if first <= p {
                    return Err(format!("first column not increasing at row {}", i + 2));
                }
            }
            prev = Some(first);
        }
    }
    Ok(())
}

/// Spearman rank correlation of two equal-length samples.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean) * (x - mean);
        db += (y - mean) * (y - mean);
    }
    num / (da.sqrt() * db.sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());
    let mut out = vec![0.0; xs.len()];
    for (rank, &i) in idx.iter().enumerate() {
        out[i] = rank as f64 + 1.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_check_catches_ragged_rows() {
        assert!(csv_self_check("t,a\n1,2\n2,3\n").is_ok());
        assert!(csv_self_check("t,a\n1,2\n2\n").is_err());
        assert!(csv_self_check("t,a\n2,2\n1,3\n").is_err());
    }

    #[test]
    fn spearman_detects_monotone() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let down = [9.0, 7.0, 5.0, 1.0];
        assert!((spearman(&a, &down) + 1.0).abs() < 1e-12);
        let up = [0.1, 0.4, 0.5, 2.0];
        assert!((spearman(&a, &up) - 1.0).abs() < 1e-12);
    }
}
