//! Scheme execution and output files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use microgrid_risk::alloc::{self, Allocation, ReguEnsemble};
use microgrid_risk::gbm::{simulate_path, simulate_path_stream, GbmParams};
use microgrid_risk::hedge::{replay_hedge, terminal_payoff, HedgeProblem, HedgeTrace};
use microgrid_risk::reserve::{plan_horizon, ReservePlan};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, Scheme};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    /// Data rows, excluding the header.
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: Scheme,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub input: ScenarioConfig,
    pub metrics: BTreeMap<String, f64>,
    pub runtime_seconds: f64,
    pub files: Vec<OutputFile>,
}

/// Runs the configured scheme and writes its artifacts into `out_dir`:
/// the CSV traces, `config.toml` (the resolved input) and `summary.json`.
pub fn run(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate().map_err(|i| CliError::Config(format!("{}: {}", i.key, i.message)))?;
    let started = Instant::now();
    let mut out = Output::new(out_dir)?;
    let metrics = match cfg.scheme {
        Scheme::Allocate => run_allocate(cfg, &mut out)?,
        Scheme::Reserve => run_reserve(cfg, &mut out)?,
        Scheme::Hedge => run_hedge(cfg, &mut out)?,
        Scheme::MontecarloHedge => run_montecarlo(cfg, &mut out)?,
    };
    out.text("config.toml", &cfg.to_toml()?)?;
    let mut summary = RunSummary {
        scheme: cfg.scheme,
        description: cfg.description.clone(),
        input: cfg.clone(),
        metrics,
        runtime_seconds: started.elapsed().as_secs_f64(),
        files: out.files.clone(),
    };
    summary.files.push(OutputFile { name: "summary.json".into(), rows: 1 });
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Io(format!("cannot encode summary: {e}")))?;
    out.text("summary.json", &(json + "\n"))?;
    Ok(summary)
}

/// Runs the hedge ensemble regardless of the configured hedge scheme.
pub fn montecarlo_hedge(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    cfg.scheme = Scheme::MontecarloHedge;
    run(&cfg, out_dir)
}

struct Output {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn csv<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
        let path = self.dir.join(name);
        let io = |e: csv::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
        let mut writer = csv::Writer::from_path(&path).map_err(io)?;
        let mut count = 0;
        for row in rows {
            writer.serialize(row).map_err(io)?;
            count += 1;
        }
        writer.flush().map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(OutputFile { name: name.into(), rows: count });
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        if name != "summary.json" {
            self.files.push(OutputFile { name: name.into(), rows: body.lines().count() });
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct AllocationRow {
    i: usize,
    mu: f64,
    sigma: f64,
    alpha: f64,
}

fn run_allocate(cfg: &ScenarioConfig, out: &mut Output) -> Result<BTreeMap<String, f64>> {
    let ens = cfg.ensemble()?;
    let a = allocate(&ens)?;
    out.csv(
        "allocation.csv",
        a.weights.iter().enumerate().map(|(i, &alpha)| AllocationRow {
            i,
            mu: ens.means[i],
            sigma: ens.covariance[(i, i)],
            alpha,
        }),
    )?;
    let ep = f64::from(u8::from(a.kind == alloc::SolutionKind::ExcessProduction));
    Ok(BTreeMap::from([
        ("objective".into(), a.objective),
        ("achieved_mean".into(), a.achieved_mean),
        ("gamma".into(), a.multipliers.gamma),
        ("delta".into(), a.multipliers.delta),
        ("excess_production".into(), ep),
    ]))
}

/// Allocation through the solver matching the covariance structure.
pub fn allocate(ens: &ReguEnsemble) -> Result<Allocation> {
    Ok(alloc::solve(ens)?)
}

#[derive(Serialize)]
struct ReservePlanRow {
    t_start: f64,
    t_end: f64,
    k_blocks: f64,
    p_obs: f64,
    battery_power: f64,
    deficit: f64,
}

#[derive(Serialize)]
struct ReserveTraceRow {
    t: f64,
    p_g: f64,
    battery_power: f64,
    deficit: f64,
}

/// Simulates the generation path and plans the reserve along it.
pub fn reserve_plan(cfg: &ScenarioConfig) -> Result<ReservePlan> {
    let problem = cfg.reserve_problem()?;
    let r = cfg.reserve_section()?;
    let path = simulate_path(&problem.gbm, problem.horizon, r.n_steps.0, cfg.seed()?)?;
    Ok(plan_horizon(&problem, &path)?)
}

fn run_reserve(cfg: &ScenarioConfig, out: &mut Output) -> Result<BTreeMap<String, f64>> {
    let problem = cfg.reserve_problem()?;
    let plan = reserve_plan(cfg)?;
    let base2 = cfg.base_power.0 * cfg.base_power.0;
    out.csv(
        "reserve_plan.csv",
        plan.intervals.iter().map(|iv| ReservePlanRow {
            t_start: iv.t_start,
            t_end: iv.t_end,
            k_blocks: iv.k_blocks,
            p_obs: iv.p_obs,
            battery_power: iv.k_blocks * problem.block_power,
            deficit: problem.demand - iv.p_obs,
        }),
    )?;
    out.csv(
        "reserve_trace.csv",
        plan.trace.iter().map(|p| ReserveTraceRow {
            t: p.t,
            p_g: p.p_g,
            battery_power: p.battery_power,
            deficit: p.deficit,
        }),
    )?;
    let worst = plan
        .intervals
        .iter()
        .filter(|iv| !iv.flagged())
        .map(|iv| iv.realized_mismatch / base2)
        .fold(0.0, f64::max);
    let rounding: f64 = plan.intervals.iter().map(|iv| iv.rounding_penalty * iv.dt()).sum::<f64>() / plan.total_covered;
    Ok(BTreeMap::from([
        ("intervals".into(), plan.intervals.len() as f64),
        ("flagged_intervals".into(), plan.flagged_count() as f64),
        ("total_covered_h".into(), plan.total_covered),
        ("realized_mismatch_pu2".into(), plan.realized_mismatch() / base2),
        ("worst_interval_mismatch_pu2".into(), worst),
        ("rounding_penalty_pu2".into(), rounding / base2),
        ("epsilon_pu2".into(), problem.tolerance / base2),
    ]))
}

#[derive(Serialize)]
struct HedgeRow {
    t: f64,
    p_g: f64,
    a: f64,
    b: f64,
    v: f64,
    payoff_if_now: f64,
}

fn write_trace(out: &mut Output, name: &str, problem: &HedgeProblem, trace: &HedgeTrace) -> Result<()> {
    out.csv(
        name,
        trace.states.iter().map(|s| HedgeRow {
            t: s.t,
            p_g: s.p_g,
            a: s.a,
            b: s.b,
            v: s.v,
            payoff_if_now: terminal_payoff(problem, s.p_g),
        }),
    )
}

/// Single-path hedge replays, one per maturity (primary first).
pub fn hedge_traces(cfg: &ScenarioConfig) -> Result<Vec<(f64, HedgeTrace)>> {
    let problem = cfg.hedge_problem()?;
    let h = cfg.hedge_section()?;
    let path = simulate_path(&problem.gbm, problem.maturity, h.n_steps.0, cfg.seed()?)?;
    std::iter::once(problem.maturity)
        .chain(h.extra_maturities.iter().map(|m| m.0))
        .map(|m| Ok((m, replay_hedge(&problem.with_maturity(m), &path, h.rebalance_every.0)?)))
        .collect()
}

fn run_hedge(cfg: &ScenarioConfig, out: &mut Output) -> Result<BTreeMap<String, f64>> {
    let problem = cfg.hedge_problem()?;
    let traces = hedge_traces(cfg)?;
    let mut metrics = BTreeMap::new();
    for (k, (maturity, trace)) in traces.iter().enumerate() {
        let name = if k == 0 { "hedge_trace.csv".to_string() } else { format!("hedge_trace_tf{maturity}.csv") };
        write_trace(out, &name, &problem.with_maturity(*maturity), trace)?;
        let suffix = if k == 0 { String::new() } else { format!("_tf{maturity}") };
        let first = trace.states[0];
        let last = trace.final_state();
        metrics.insert(format!("terminal_error{suffix}"), trace.hedging_error);
        metrics.insert(format!("payoff{suffix}"), trace.payoff);
        metrics.insert(format!("final_v{suffix}"), last.v);
        metrics.insert(format!("final_b{suffix}"), last.b);
        metrics.insert(format!("final_p_g{suffix}"), last.p_g);
        metrics.insert(format!("initial_v{suffix}"), first.v);
        metrics.insert(format!("initial_a{suffix}"), first.a);
        metrics.insert(format!("initial_b{suffix}"), first.b);
    }
    Ok(metrics)
}

/// Terminal outcome of one ensemble path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub path: usize,
    pub p_final: f64,
    pub v_final: f64,
    pub b_final: f64,
    pub payoff: f64,
    pub signed_error: f64,
    pub error: f64,
}

/// Replays the hedge on `n_paths` paths; path `i` uses RNG stream `i` of
/// `seed`, so path 0 is the single-path run and results do not depend on
/// thread scheduling.
pub fn hedge_ensemble(
    problem: &HedgeProblem,
    n_steps: usize,
    rebalance_every: usize,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<PathOutcome>> {
    let gbm: GbmParams = problem.gbm;
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let path = simulate_path_stream(&gbm, problem.maturity, n_steps, seed, i as u64)?;
            let trace = replay_hedge(problem, &path, rebalance_every)?;
            let end = trace.final_state();
            Ok(PathOutcome {
                path: i,
                p_final: end.p_g,
                v_final: end.v,
                b_final: end.b,
                payoff: trace.payoff,
                signed_error: trace.signed_error(),
                error: trace.hedging_error,
            })
        })
        .collect::<std::result::Result<Vec<_>, microgrid_risk::Error>>()
        .map_err(CliError::from)
}

/// Replays one ensemble of fine paths at two rebalancing intervals,
/// `2 * rebalance_every` and `rebalance_every` steps of a `2 * n_steps` grid,
/// so both see the same Brownian motion. Returns (coarse, fine) errors.
pub fn coupled_refinement(
    problem: &HedgeProblem,
    n_steps: usize,
    rebalance_every: usize,
    seed: u64,
    n_paths: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let gbm = problem.gbm;
    let pairs = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let path = simulate_path_stream(&gbm, problem.maturity, 2 * n_steps, seed, i as u64)?;
            let coarse = replay_hedge(problem, &path, 2 * rebalance_every)?.hedging_error;
            let fine = replay_hedge(problem, &path, rebalance_every)?.hedging_error;
            Ok((coarse, fine))
        })
        .collect::<std::result::Result<Vec<_>, microgrid_risk::Error>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Aggregate terminal-error statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub rms: f64,
    pub max: f64,
    /// Nearest-rank 99th percentile.
    pub p99: f64,
}

pub fn error_stats(errors: &[f64]) -> ErrorStats {
    let n = errors.len().max(1) as f64;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.99 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len().max(1));
    ErrorStats {
        mean: errors.iter().sum::<f64>() / n,
        rms: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        max: sorted.last().copied().unwrap_or(0.0),
        p99: sorted.get(rank - 1).copied().unwrap_or(0.0),
    }
}

fn run_montecarlo(cfg: &ScenarioConfig, out: &mut Output) -> Result<BTreeMap<String, f64>> {
    let problem = cfg.hedge_problem()?;
    let h = cfg.hedge_section()?;
    let seed = cfg.seed()?;
    let n_paths = h.n_paths.map_or(1, |c| c.0);
    let outcomes = hedge_ensemble(&problem, h.n_steps.0, h.rebalance_every.0, seed, n_paths)?;
    out.csv("terminal_errors.csv", outcomes.iter())?;

    let path0 = simulate_path(&problem.gbm, problem.maturity, h.n_steps.0, seed)?;
    write_trace(out, "hedge_trace_path0.csv", &problem, &replay_hedge(&problem, &path0, h.rebalance_every.0)?)?;

    let errors: Vec<f64> = outcomes.iter().map(|o| o.error).collect();
    let stats = error_stats(&errors);
    let mut metrics = BTreeMap::from([
        ("n_paths".into(), n_paths as f64),
        ("mean_error".into(), stats.mean),
        ("rms_error".into(), stats.rms),
        ("max_error".into(), stats.max),
        ("p99_error".into(), stats.p99),
        (
            "mean_signed_error".into(),
            outcomes.iter().map(|o| o.signed_error).sum::<f64>() / n_paths as f64,
        ),
    ]);
    if h.convergence_check {
        let (coarse, fine) = coupled_refinement(&problem, h.n_steps.0, h.rebalance_every.0, seed, n_paths)?;
        metrics.insert("rms_error_coupled_coarse".into(), error_stats(&coarse).rms);
        metrics.insert("rms_error_coupled_fine".into(), error_stats(&fine).rms);
    }
    Ok(metrics)
}
