//! Battery reserve planning for a sustained energy demand.
//!
//! The horizon `[0, T]` is cut into sub-intervals whose lengths adapt to the
//! volatility of generation. At the start of each sub-interval the current
//! generation is observed and two quantities are chosen:
//!
//! * the number of battery blocks `K` that minimises the expected squared
//!   mismatch `E[(P_g(t) + K P_b - D_e)^2]` averaged over the sub-interval,
//!   which has the closed form `max(0, (D_e - avg E[P_g]) / P_b)`;
//! * the longest sub-interval over which that minimum stays below the
//!   tolerance `epsilon`.
//!
//! All quantities here are in physical units (kW, kW^2, hours). Per-unit
//! conversion happens at the command-line boundary.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::gbm::{conditional_mean_integral_with, exprel, GbmParams, GbmPath, MeanConvention};

/// Shortest sub-interval, as a fraction of the horizon.
pub const FLOOR_FRACTION: f64 = 1e-4;
const SCAN_POINTS: usize = 64;
const MAX_BISECTIONS: usize = 200;

/// Whether block counts are reported as real numbers or rounded up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockRounding {
    #[default]
    Continuous,
    /// Round up to whole blocks and report the extra expected mismatch.
    Ceiling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReserveProblem {
    pub gbm: GbmParams,
    /// Constant demand D_e in kW.
    pub demand: f64,
    /// Power of one battery block P_b in kW.
    pub block_power: f64,
    /// Planning horizon T in hours.
    pub horizon: f64,
    /// Bound on the time-averaged expected squared mismatch, kW^2.
    pub tolerance: f64,
    #[serde(default)]
    pub convention: MeanConvention,
    #[serde(default)]
    pub rounding: BlockRounding,
}

impl ReserveProblem {
    pub fn new(gbm: GbmParams, demand: f64, block_power: f64, horizon: f64, tolerance: f64) -> Result<Self> {
        let problem = Self {
            gbm,
            demand,
            block_power,
            horizon,
            tolerance,
            convention: MeanConvention::Markov,
            rounding: BlockRounding::Continuous,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_convention(self, convention: MeanConvention) -> Self {
        Self { convention, ..self }
    }

    pub fn with_rounding(self, rounding: BlockRounding) -> Self {
        Self { rounding, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        self.gbm.validate()?;
        ensure(self.demand.is_finite() && self.demand >= 0.0, || {
            format!("demand must be non-negative, got {}", self.demand)
        })?;
        ensure(self.block_power.is_finite() && self.block_power > 0.0, || {
            format!("block power must be positive, got {}", self.block_power)
        })?;
        ensure(self.horizon.is_finite() && self.horizon > 0.0, || {
            format!("horizon must be positive, got {}", self.horizon)
        })?;
        ensure(self.tolerance.is_finite() && self.tolerance > 0.0, || {
            format!("tolerance must be positive, got {}", self.tolerance)
        })
    }

    /// Minimum sub-interval length.
    pub fn dt_floor(&self) -> f64 {
        self.horizon * FLOOR_FRACTION
    }
}

/// How a sub-interval length was limited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalClamp {
    /// Tolerance met with equality (up to bisection accuracy).
    Tolerance,
    /// The whole remaining horizon meets the tolerance.
    Horizon,
    /// Not even the shortest allowed step meets the tolerance.
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalChoice {
    pub dt: f64,
    pub clamp: IntervalClamp,
    /// Expected squared mismatch at the chosen length with the optimal blocks.
    pub expected_mismatch: f64,
}

impl IntervalChoice {
    pub fn violates_tolerance(&self) -> bool {
        self.clamp == IntervalClamp::Floor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveInterval {
    pub t_start: f64,
    pub t_end: f64,
    /// Blocks held over the interval (rounded up in ceiling mode).
    pub k_blocks: f64,
    /// Unrounded optimum.
    pub k_optimal: f64,
    /// Generation observed at `t_start` (kW).
    pub p_obs: f64,
    pub clamp: IntervalClamp,
    /// Expected time-averaged squared mismatch with `k_blocks` (kW^2).
    pub expected_mismatch: f64,
    /// Additional expected mismatch caused by rounding (kW^2).
    pub rounding_penalty: f64,
    /// Realised time-averaged squared mismatch along the path (kW^2).
    pub realized_mismatch: f64,
}

impl ReserveInterval {
    pub fn dt(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn flagged(&self) -> bool {
        self.clamp == IntervalClamp::Floor
    }
}

/// Battery power against the realised deficit at one path sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReserveTracePoint {
    pub t: f64,
    pub p_g: f64,
    pub battery_power: f64,
    pub deficit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservePlan {
    pub intervals: Vec<ReserveInterval>,
    pub total_covered: f64,
    pub trace: Vec<ReserveTracePoint>,
}

impl ReservePlan {
    pub fn flagged_count(&self) -> usize {
        self.intervals.iter().filter(|i| i.flagged()).count()
    }

    /// Realised squared mismatch averaged over the whole horizon (kW^2).
    pub fn realized_mismatch(&self) -> f64 {
        let weighted: f64 = self.intervals.iter().map(|i| i.realized_mismatch * i.dt()).sum();
        weighted / self.total_covered
    }
}

/// Optimal block count for a sub-interval of length `dt` starting at time 0.
pub fn optimal_blocks(problem: &ReserveProblem, p_obs: f64, dt: f64) -> Result<f64> {
    optimal_blocks_at(problem, p_obs, 0.0, dt)
}

/// Optimal block count for the sub-interval `[t_start, t_start + dt]`:
/// `max(0, (D_e - avg E[P_g | p_obs]) / P_b)`.
pub fn optimal_blocks_at(problem: &ReserveProblem, p_obs: f64, t_start: f64, dt: f64) -> Result<f64> {
    let mean = conditional_mean_integral_with(&problem.gbm, p_obs, t_start, dt, problem.convention)?;
    Ok(((problem.demand - mean) / problem.block_power).max(0.0))
}

/// `(1/dt) ∫_0^dt E[(P_g(s+u) + k P_b - D_e)^2 | P_g(s) = p_obs] du`.
///
/// Uses `E[P | p] = p e^{mu u}` and `E[P^2 | p] = p^2 e^{(2 mu + sigma^2) u}`,
/// both integrated in closed form.
pub fn expected_sq_mismatch(problem: &ReserveProblem, p_obs: f64, k: f64, dt: f64) -> Result<f64> {
    ensure(p_obs.is_finite() && p_obs > 0.0, || {
        format!("observed generation must be positive, got {p_obs}")
    })?;
    ensure(dt.is_finite() && dt > 0.0, || format!("interval length must be positive, got {dt}"))?;
    ensure(k.is_finite() && k >= 0.0, || format!("block count must be non-negative, got {k}"))?;
    let GbmParams { mu_g, sigma_g, .. } = problem.gbm;
    let offset = k * problem.block_power - problem.demand;
    let first = p_obs * exprel(mu_g * dt);
    let second = p_obs * p_obs * exprel((2.0 * mu_g + sigma_g * sigma_g) * dt);
    Ok((second + 2.0 * offset * first + offset * offset).max(0.0))
}

/// Longest sub-interval from time 0 meeting the tolerance, capped at the horizon.
pub fn interval_length(problem: &ReserveProblem, p_obs: f64) -> Result<IntervalChoice> {
    interval_length_within(problem, p_obs, 0.0, problem.horizon)
}

/// Longest `dt` in `[floor, remaining]` whose optimal-block mismatch is within
/// the tolerance. Scans a logarithmic grid from the top to bracket the last
/// crossing, then bisects it.
pub fn interval_length_within(
    problem: &ReserveProblem,
    p_obs: f64,
    t_start: f64,
    remaining: f64,
) -> Result<IntervalChoice> {
    ensure(p_obs.is_finite() && p_obs > 0.0, || {
        format!("observed generation must be positive, got {p_obs}")
    })?;
    ensure(remaining.is_finite() && remaining > 0.0, || {
        format!("remaining horizon must be positive, got {remaining}")
    })?;
    let eps = problem.tolerance;
    let mismatch = |dt: f64| -> Result<f64> {
        let k = optimal_blocks_at(problem, p_obs, t_start, dt)?;
        expected_sq_mismatch(problem, p_obs, k, dt)
    };

    let at_end = mismatch(remaining)?;
    if at_end <= eps {
        return Ok(IntervalChoice { dt: remaining, clamp: IntervalClamp::Horizon, expected_mismatch: at_end });
    }
    let floor = problem.dt_floor().min(remaining);
    if floor >= remaining {
        return Ok(IntervalChoice { dt: remaining, clamp: IntervalClamp::Floor, expected_mismatch: at_end });
    }

    let ratio = (remaining / floor).powf(1.0 / (SCAN_POINTS - 1) as f64);
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|j| if j + 1 == SCAN_POINTS { remaining } else { floor * ratio.powi(j as i32) })
        .collect();
    let mut feasible = None;
    for j in (0..SCAN_POINTS - 1).rev() {
        if mismatch(grid[j])? <= eps {
            feasible = Some(j);
            break;
        }
    }
    let Some(j) = feasible else {
        return Ok(IntervalChoice { dt: floor, clamp: IntervalClamp::Floor, expected_mismatch: mismatch(floor)? });
    };

    let (mut lo, mut hi) = (grid[j], grid[j + 1]);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-13 * hi {
            break;
        }
        if mismatch(mid)? <= eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(IntervalChoice { dt: lo, clamp: IntervalClamp::Tolerance, expected_mismatch: mismatch(lo)? })
}

/// Runs the sub-interval planner along a realised generation path.
///
/// Observations are taken causally: the value at the latest grid point not
/// after each sub-interval start.
pub fn plan_horizon(problem: &ReserveProblem, path: &GbmPath) -> Result<ReservePlan> {
    problem.validate()?;
    let horizon = problem.horizon;
    ensure(!path.is_empty() && path.times[0] == 0.0, || "path must start at t = 0".into())?;
    ensure(path.end_time() >= horizon * (1.0 - 1e-12), || {
        format!("path ends at {} h, before the {horizon} h horizon", path.end_time())
    })?;

    let mut intervals = Vec::new();
    let mut t = 0.0;
    let end_slack = 1e-12 * horizon;
    while horizon - t > end_slack {
        let remaining = horizon - t;
        let p_obs = path.value_at_or_before(t);
        let choice = interval_length_within(problem, p_obs, t, remaining)?;
        let t_end = if choice.dt >= remaining { horizon } else { t + choice.dt };
        let dt = t_end - t;
        let k_optimal = optimal_blocks_at(problem, p_obs, t, dt)?;
        let (k_blocks, rounding_penalty) = match problem.rounding {
            BlockRounding::Continuous => (k_optimal, 0.0),
            BlockRounding::Ceiling => {
                let rounded = (k_optimal - 1e-12).ceil().max(0.0);
                let extra = expected_sq_mismatch(problem, p_obs, rounded, dt)?
                    - expected_sq_mismatch(problem, p_obs, k_optimal, dt)?;
                (rounded, extra.max(0.0))
            }
        };
        let expected_mismatch = expected_sq_mismatch(problem, p_obs, k_blocks, dt)?;
        let offset = k_blocks * problem.block_power - problem.demand;
        let realized_mismatch = held_sq_average(path, t, t_end, offset);
        intervals.push(ReserveInterval {
            t_start: t,
            t_end,
            k_blocks,
            k_optimal,
            p_obs,
            clamp: choice.clamp,
            expected_mismatch,
            rounding_penalty,
            realized_mismatch,
        });
        t = t_end;
    }

    let trace = path
        .times
        .iter()
        .zip(&path.values)
        .take_while(|(&s, _)| s <= horizon + end_slack)
        .map(|(&s, &p)| {
            let idx = intervals.partition_point(|iv| iv.t_end <= s).min(intervals.len() - 1);
            ReserveTracePoint {
                t: s,
                p_g: p,
                battery_power: intervals[idx].k_blocks * problem.block_power,
                deficit: problem.demand - p,
            }
        })
        .collect();

    Ok(ReservePlan { total_covered: t, intervals, trace })
}

/// Time average of `(P(t) + offset)^2` over `[a, b]` with the path held
/// constant between grid points.
fn held_sq_average(path: &GbmPath, a: f64, b: f64, offset: f64) -> f64 {
    let mut acc = 0.0;
    let mut s = a;
    let start = path.times.partition_point(|&x| x <= a);
    let mut value = path.value_at_or_before(a);
    for idx in start..path.len() {
        let next = path.times[idx].min(b);
        if next > s {
            acc += (value + offset).powi(2) * (next - s);
            s = next;
        }
        if path.times[idx] >= b {
            break;
        }
        value = path.values[idx];
    }
    if b > s {
        acc += (value + offset).powi(2) * (b - s);
    }
    acc / (b - a)
}
