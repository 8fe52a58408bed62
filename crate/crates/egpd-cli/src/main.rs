//! Command line front end: simulate scenarios, solve the matching-rate LP,
//! integrate fluid trajectories, run structural checks, sweep parameters,
//! and execute the built-in experiment presets.
//!
//! Exit codes: 0 success, 1 usage error, 2 schema/input error, 3 a preset's
//! reference checks failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use egpd::fluid::{self, FaceSpec, FluidConfig, FluidReference};
use egpd::harness::{self, presets};
use egpd::matching::{self, SchemeOptions};
use egpd::model::checks;
use egpd::oracle::{self, FeasibleSpec, RateRegion};
use egpd::scenario_file;

#[derive(Parser)]
#[command(
    name = "egpd",
    about = "Greedy primal-dual matching and network control toolkit",
    version
)]
struct Cli {
    /// Output directory for CSV and report artifacts
    /// (default: $EGPD_OUT_DIR or the current directory).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the virtual/physical matching scheme on a scenario file.
    Simulate(ScenarioArg),
    /// Solve the per-slot matching-rate LP for a scenario file.
    Lp(ScenarioArg),
    /// Integrate the fluid trajectory of the embedded network.
    Fluid(FluidArgs),
    /// Structural checks: drift feasibility and, for pair systems, the
    /// bipartite stabilizability condition.
    Check(ScenarioArg),
    /// Run one scenario per parameter value and aggregate a CSV table.
    Sweep(SweepArgs),
    /// Run a built-in experiment preset and compare against its references.
    Preset(PresetArgs),
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario TOML file.
    scenario: PathBuf,
}

#[derive(Args)]
struct FluidArgs {
    scenario: PathBuf,
    /// Integration horizon in fluid time units.
    #[arg(long, default_value_t = 50.0)]
    t_end: f64,
    /// Euler step size.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Record every n-th step in the trajectory CSV.
    #[arg(long, default_value_t = 100)]
    stride: usize,
}

#[derive(Args)]
struct SweepArgs {
    scenario: PathBuf,
    /// Parameter to sweep (only `beta` is supported).
    #[arg(long, default_value = "beta")]
    param: String,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

#[derive(Args)]
struct PresetArgs {
    /// One of: expA, expB_beta_sweep, expC_rate_change, bipartite_profit.
    name: String,
}

fn out_dir(cli_dir: &Option<PathBuf>) -> PathBuf {
    cli_dir
        .clone()
        .or_else(|| std::env::var_os("EGPD_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(path)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Let clap print its rendered message; map everything to 1.
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let dir = out_dir(&cli.out_dir);
    let result = match &cli.command {
        Command::Simulate(args) => cmd_simulate(&args.scenario, &dir),
        Command::Lp(args) => cmd_lp(&args.scenario, &dir),
        Command::Fluid(args) => cmd_fluid(args, &dir),
        Command::Check(args) => cmd_check(&args.scenario),
        Command::Sweep(args) => cmd_sweep(args, &dir),
        Command::Preset(args) => cmd_preset(&args.name, &dir),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> Result<egpd::model::Scenario, String> {
    scenario_file::load(path).map_err(|e| e.to_string())
}

fn cmd_simulate(path: &Path, dir: &Path) -> Result<ExitCode, String> {
    let scenario = load(path)?;
    let started = std::time::Instant::now();
    let run = matching::run_scheme(&scenario, 0, &SchemeOptions::default())
        .map_err(|e| e.to_string())?;
    let wall = started.elapsed().as_millis();
    let lp = oracle::solve_matching_lp(&scenario).ok();
    let report = harness::make_run_report(&scenario, &run, wall, lp.as_ref(), vec![]);

    let csv = matching::metrics_csv(&run, &scenario);
    harness::csv_self_check(&csv).map_err(|e| format!("metrics csv failed self-check: {e}"))?;
    let csv_path = write_artifact(dir, "metrics.csv", &csv)?;
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| format!("cannot encode report: {e}"))?;
    let report_path = write_artifact(dir, "run_report.json", &json)?;

    println!("slots                {}", report.slots);
    println!("avg completed reward {:.6}", report.avg_completed_reward);
    println!("internal avg reward  {:.6}", report.internal_avg_reward);
    println!("avg holding cost     {:.6}", report.avg_holding_cost);
    println!("avg profit           {:.6}", report.avg_profit);
    if let Some(v) = report.lp_value {
        println!("lp optimal value     {v:.6}");
    }
    println!("stable               {}", report.stable);
    println!("invariant violations {}", report.invariant_violations);
    println!("metrics csv          {}", csv_path.display());
    println!("run report           {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_lp(path: &Path, dir: &Path) -> Result<ExitCode, String> {
    let scenario = load(path)?;
    let lp = oracle::solve_matching_lp(&scenario).map_err(|e| e.to_string())?;
    println!("optimal average reward per slot: {:.9}", lp.value);
    println!("{:<12} {:>12} {:>12}", "matching", "rate", "reward");
    for (j, rate) in lp.rates.iter().enumerate() {
        let m = &scenario.matchings[j + 1];
        println!("{:<12} {:>12.6} {:>12.3}", format!("#{}", j + 1), rate, m.reward);
    }
    println!("item duals: {:?}", lp.item_duals);
    println!("budget dual: {:.6}", lp.budget_dual);
    let json = serde_json::json!({
        "value": lp.value,
        "rates": lp.rates,
        "duals": { "items": lp.item_duals, "budget": lp.budget_dual },
        "residuals": {
            "max_comp_slack": lp.max_comp_slack,
            "max_reduced_cost": lp.max_reduced_cost,
        },
    });
    let path = write_artifact(dir, "lp_report.json", &serde_json::to_string_pretty(&json).unwrap())?;
    println!("report: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_fluid(args: &FluidArgs, dir: &Path) -> Result<ExitCode, String> {
    let scenario = load(&args.scenario)?;
    let c = matching::default_mapping_constant(&scenario);
    let mapped = matching::map_to_network(&scenario, c).map_err(|e| e.to_string())?;
    let region = RateRegion::from_network(&mapped.net);
    let feas = FeasibleSpec::for_network(&mapped.net);
    let solution = oracle::solve_linear(&mapped.net, &mapped.utility).map_err(|e| e.to_string())?;
    let (coeffs, constant) = egpd::model::NetworkUtility::linear_parts(&mapped.utility)
        .ok_or("fluid subcommand requires a linear utility")?;

    let mut cfg = FluidConfig::new(args.t_end, args.step);
    cfg.record_stride = args.stride.max(1);
    cfg.reference = Some(FluidReference {
        v_star: solution.v_star.clone(),
        q_star: solution.q_star.clone(),
        value: solution.value,
    });
    cfg.face = Some(FaceSpec {
        feas: feas.clone(),
        coeffs: coeffs.clone(),
        constant,
        value: solution.value,
    });
    let traj = fluid::integrate(
        &region,
        mapped.net.n_constrained,
        &mapped.utility,
        &mapped.x0,
        &mapped.q0,
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let report = fluid::check_convergence(
        &traj,
        &region,
        mapped.net.n_constrained,
        &coeffs,
        constant,
        &solution,
        &feas,
    )
    .map_err(|e| e.to_string())?;

    let csv = fluid::trajectory_csv(&traj, region.dim());
    let csv_path = write_artifact(dir, "fluid_trajectory.csv", &csv)?;
    let json = serde_json::to_string_pretty(&report).unwrap();
    let report_path = write_artifact(dir, "fluid_report.json", &json)?;
    println!("terminal distance to region       {:.3e}", report.rho_v_terminal);
    println!("terminal distance to optimal set  {:.3e}", report.rho_vstar_terminal);
    println!("dual feasibility (min q_c)        {:.3e}", report.dual_feasibility_min);
    println!("dual optimality gap               {:.3e}", report.dual_optimality_gap);
    println!("complementary slackness |q.v*|    {:.3e}", report.comp_slack);
    println!("sup |q|                           {:.6}", report.sup_q_norm);
    println!("|q| growth over last half         {:.3e}", report.q_growth_last_half);
    println!("trajectory csv                    {}", csv_path.display());
    println!("report                            {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

/// Detects the two-sided pair structure of a scenario: every nonempty
/// matching and every arrival batch touches exactly one item of each side.
fn bipartite_sides(s: &egpd::model::Scenario) -> Option<(Vec<usize>, Vec<usize>, Vec<(usize, usize)>)> {
    let n = s.n_items();
    // Two-color the item graph whose edges are the 2-item matchings.
    let mut color = vec![None::<bool>; n];
    let mut edges = Vec::new();
    for m in s.matchings.iter().skip(1) {
        let touched: Vec<usize> = m
            .mu
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        if touched.len() != 2 || m.mu[touched[0]] != 1.0 || m.mu[touched[1]] != 1.0 {
            return None;
        }
        edges.push((touched[0], touched[1]));
    }
    color[edges.first()?.0] = Some(true);
    let mut changed = true;
    while changed {
        changed = false;
        for &(a, b) in &edges {
            match (color[a], color[b]) {
                (Some(ca), None) => {
                    color[b] = Some(!ca);
                    changed = true;
                }
                (None, Some(cb)) => {
                    color[a] = Some(!cb);
                    changed = true;
                }
                (Some(ca), Some(cb)) if ca == cb => return None,
                _ => {}
            }
        }
    }
    if color.iter().any(|c| c.is_none()) {
        return None;
    }
    let top: Vec<usize> = (0..n).filter(|&i| color[i] == Some(true)).collect();
    let bottom: Vec<usize> = (0..n).filter(|&i| color[i] == Some(false)).collect();
    let side_edges = edges
        .iter()
        .map(|&(a, b)| {
            let (t, bo) = if color[a] == Some(true) { (a, b) } else { (b, a) };
            (
                top.iter().position(|&i| i == t).unwrap(),
                bottom.iter().position(|&i| i == bo).unwrap(),
            )
        })
        .collect();
    Some((top, bottom, side_edges))
}

fn cmd_check(path: &Path) -> Result<ExitCode, String> {
    let scenario = load(path)?;
    let c = matching::default_mapping_constant(&scenario);
    let mapped = matching::map_to_network(&scenario, c).map_err(|e| e.to_string())?;
    let epsilon = 1e-3;

    let raw = checks::check_assumption1(&mapped.net, epsilon).map_err(|e| e.to_string())?;
    println!(
        "drift feasibility (raw coordinates): holds = {} (margin {:.6})",
        raw.holds, raw.margin
    );
    if !raw.holds {
        let red = checks::reduce_drift_subspace(&mapped.net, 1e-9).map_err(|e| e.to_string())?;
        println!(
            "reachable-subspace reduction: {} -> {} free coordinates",
            mapped.net.n_free, red.reduced.n_free
        );
        let reduced = checks::check_assumption1(&red.reduced, epsilon).map_err(|e| e.to_string())?;
        println!(
            "drift feasibility (reduced coordinates): holds = {} (margin {:.6})",
            reduced.holds, reduced.margin
        );
    }

    match bipartite_sides(&scenario) {
        Some((top, bottom, edges)) => {
            let alpha = scenario.arrivals.mean_rates();
            let top_rates: Vec<f64> = top.iter().map(|&i| alpha[i]).collect();
            let bottom_rates: Vec<f64> = bottom.iter().map(|&i| alpha[i]).collect();
            match checks::check_ncond(&top_rates, &bottom_rates, &edges) {
                Ok(report) => {
                    println!(
                        "bipartite stabilizability: {} (min margin {:.6})",
                        report.stabilizable, report.min_margin
                    );
                    if let Some((side, subset)) = &report.violating_subset {
                        println!("violating subset on {side:?} side: {subset:?}");
                    }
                }
                Err(e) => println!("bipartite stabilizability: {e}"),
            }
        }
        None => println!("bipartite stabilizability: not applicable (not a pair-matching system)"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: &SweepArgs, dir: &Path) -> Result<ExitCode, String> {
    if args.param != "beta" {
        return Err(format!("unsupported sweep parameter '{}'", args.param));
    }
    if args.values.is_empty() {
        return Err("no sweep values given".into());
    }
    let scenario = load(&args.scenario)?;
    let rows = harness::beta_sweep(&scenario, &args.values).map_err(|e| e.to_string())?;
    let csv = harness::sweep_csv(&rows);
    harness::csv_self_check(&csv).map_err(|e| format!("sweep csv failed self-check: {e}"))?;
    let path = write_artifact(dir, "sweep.csv", &csv)?;
    print!("{csv}");
    println!("sweep csv: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_preset(name: &str, dir: &Path) -> Result<ExitCode, String> {
    let preset: presets::PresetName = name.parse()?;
    let report = presets::run_preset(preset).map_err(|e| e.to_string())?;
    for (file, contents) in &report.artifacts {
        harness::csv_self_check(contents).map_err(|e| format!("{file} failed self-check: {e}"))?;
        let path = write_artifact(dir, file, contents)?;
        println!("artifact: {}", path.display());
    }
    if let Some(run) = &report.run_report {
        let json = serde_json::to_string_pretty(run).unwrap();
        let path = write_artifact(dir, &format!("{}_report.json", report.name), &json)?;
        println!("run report: {}", path.display());
    }
    println!("checks:");
    for check in &report.checks {
        println!(
            "  [{}] {}: {}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    if report.passed() {
        println!("preset {}: all checks passed", report.name);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("preset {}: checks FAILED", report.name);
        Ok(ExitCode::from(3))
    }
}
