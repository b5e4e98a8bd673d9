//! Almost-sure supply of a critical demand at a future time.
//!
//! A counterparty holds `a(t)` generation units and `b(t)` battery blocks so
//! that at maturity `T_f` the portfolio delivers exactly the deficit
//! `max(D_c - P_g(T_f), 0)`. The portfolio power `V(P_g, t)` solves
//!
//! ```text
//! dV/dt + sigma^2 P^2 / 2 * d2V/dP2 = 0,   V(P, T_f) = max(D_c - P, 0)
//! ```
//!
//! whose solution is `V = D_c F(d+) - P F(d-)` with
//! `d± = (ln(D_c/P) ± sigma^2 tau / 2) / (sigma sqrt(tau))`, `tau = T_f - t`.
//! Holdings are `a = dV/dP = -F(d-)` and `b = D_c F(d+) / P_b`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Result};
use crate::gbm::{GbmParams, GbmPath};
use crate::normal;

/// Time to maturity below which the policy switches to the terminal step.
pub const TERMINAL_TAU: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeProblem {
    pub gbm: GbmParams,
    /// Critical demand D_c due at maturity (kW).
    pub demand: f64,
    /// Power of one battery block (kW).
    pub block_power: f64,
    /// Maturity T_f (hours).
    pub maturity: f64,
}

impl HedgeProblem {
    pub fn new(gbm: GbmParams, demand: f64, block_power: f64, maturity: f64) -> Result<Self> {
        let problem = Self { gbm, demand, block_power, maturity };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        self.gbm.validate()?;
        ensure(self.demand.is_finite() && self.demand > 0.0, || {
            format!("critical demand must be positive, got {}", self.demand)
        })?;
        ensure(self.block_power.is_finite() && self.block_power > 0.0, || {
            format!("block power must be positive, got {}", self.block_power)
        })?;
        ensure(self.maturity.is_finite() && self.maturity > 0.0, || {
            format!("maturity must be positive, got {}", self.maturity)
        })
    }

    pub fn with_maturity(self, maturity: f64) -> Self {
        Self { maturity, ..self }
    }

    fn check_point(&self, p_g: f64, t: f64) -> Result<f64> {
        ensure(p_g.is_finite() && p_g > 0.0, || format!("generation must be positive, got {p_g}"))?;
        ensure(t.is_finite() && t >= 0.0, || format!("time must be non-negative, got {t}"))?;
        if t >= self.maturity {
            return Err(invalid(format!(
                "t = {t} is at or past maturity {}; use the terminal payoff",
                self.maturity
            )));
        }
        Ok(self.maturity - t)
    }
}

/// Holdings and portfolio power at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeState {
    pub t: f64,
    pub p_g: f64,
    /// Generation units held; non-positive.
    pub a: f64,
    /// Battery blocks held.
    pub b: f64,
    /// Portfolio power `a p_g + b P_b`.
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeTrace {
    pub states: Vec<HedgeState>,
    pub rebalance_every: usize,
    /// `max(D_c - P_g(T_f), 0)` on this path.
    pub payoff: f64,
    /// `|v(T_f) - payoff|`.
    pub hedging_error: f64,
}

impl HedgeTrace {
    pub fn final_state(&self) -> &HedgeState {
        self.states.last().expect("a trace always holds the initial state")
    }

    /// Signed terminal error `v(T_f) - payoff`.
    pub fn signed_error(&self) -> f64 {
        self.final_state().v - self.payoff
    }
}

struct Moneyness {
    d_plus: f64,
    d_minus: f64,
}

/// `None` when the closed form degenerates to the terminal step.
fn moneyness(problem: &HedgeProblem, p_g: f64, tau: f64) -> Option<Moneyness> {
    let sigma = problem.gbm.sigma_g;
    if sigma == 0.0 || tau < TERMINAL_TAU {
        return None;
    }
    let s = sigma * tau.sqrt();
    let log_ratio = (problem.demand / p_g).ln();
    Some(Moneyness { d_plus: (log_ratio + 0.5 * s * s) / s, d_minus: (log_ratio - 0.5 * s * s) / s })
}

/// Terminal step holdings; `p_g = D_c` takes the zero-payoff branch.
fn step_policy(problem: &HedgeProblem, p_g: f64) -> (f64, f64) {
    if p_g < problem.demand {
        (-1.0, problem.demand / problem.block_power)
    } else {
        (0.0, 0.0)
    }
}

/// Portfolio power `V(P_g, t)` for `0 <= t < T_f`.
pub fn portfolio_value(problem: &HedgeProblem, p_g: f64, t: f64) -> Result<f64> {
    let tau = problem.check_point(p_g, t)?;
    let d = problem.demand;
    Ok(match moneyness(problem, p_g, tau) {
        None => (d - p_g).max(0.0),
        // written around the intrinsic value so the small tails keep full precision
        Some(m) if p_g < d => (d - p_g) + p_g * normal::sf(m.d_minus) - d * normal::sf(m.d_plus),
        Some(m) => d * normal::cdf(m.d_plus) - p_g * normal::cdf(m.d_minus),
    })
}

/// Holdings `(a, b)` at `(P_g, t)`.
pub fn policy(problem: &HedgeProblem, p_g: f64, t: f64) -> Result<(f64, f64)> {
    let tau = problem.check_point(p_g, t)?;
    Ok(match moneyness(problem, p_g, tau) {
        None => step_policy(problem, p_g),
        Some(m) => (-normal::cdf(m.d_minus), problem.demand / problem.block_power * normal::cdf(m.d_plus)),
    })
}

/// Policy at any `t <= T_f`, using the terminal step at maturity.
fn policy_through_maturity(problem: &HedgeProblem, p_g: f64, t: f64) -> Result<(f64, f64)> {
    if t >= problem.maturity {
        ensure(p_g.is_finite() && p_g > 0.0, || format!("generation must be positive, got {p_g}"))?;
        Ok(step_policy(problem, p_g))
    } else {
        policy(problem, p_g, t)
    }
}

/// Deficit the portfolio must deliver at maturity.
pub fn terminal_payoff(problem: &HedgeProblem, p_g_final: f64) -> f64 {
    (problem.demand - p_g_final).max(0.0)
}

/// Power available to non-critical loads, `(1 + |a|) P_g`.
pub fn noncritical_capacity(problem: &HedgeProblem, p_g: f64, t: f64) -> Result<f64> {
    let (a, _) = policy(problem, p_g, t)?;
    Ok((1.0 + a.abs()) * p_g)
}

/// Central-difference estimate of `dV/dt + sigma^2 P^2 / 2 * d2V/dP2`.
pub fn pde_residual(problem: &HedgeProblem, p_g: f64, t: f64, h_p: f64, h_t: f64) -> Result<f64> {
    ensure(h_p.is_finite() && h_p > 0.0 && h_p < p_g, || {
        format!("price step must lie in (0, p_g), got {h_p}")
    })?;
    ensure(h_t.is_finite() && h_t > 0.0 && t - h_t >= 0.0 && t + h_t < problem.maturity, || {
        format!("time step {h_t} must keep [t - h, t + h] inside [0, T_f)")
    })?;
    let v = |p: f64, s: f64| portfolio_value(problem, p, s);
    let v_t = (v(p_g, t + h_t)? - v(p_g, t - h_t)?) / (2.0 * h_t);
    let v_pp = (v(p_g + h_p, t)? - 2.0 * v(p_g, t)? + v(p_g - h_p, t)?) / (h_p * h_p);
    let sigma = problem.gbm.sigma_g;
    Ok(v_t + 0.5 * sigma * sigma * p_g * p_g * v_pp)
}

/// Central-difference `dV/dP_g`, to compare against `a`.
pub fn delta_fd(problem: &HedgeProblem, p_g: f64, t: f64, h_p: f64) -> Result<f64> {
    ensure(h_p.is_finite() && h_p > 0.0 && h_p < p_g, || {
        format!("price step must lie in (0, p_g), got {h_p}")
    })?;
    Ok((portfolio_value(problem, p_g + h_p, t)? - portfolio_value(problem, p_g - h_p, t)?) / (2.0 * h_p))
}

/// Replays the self-financing portfolio along `path`, rebalancing every
/// `rebalance_every` grid steps and at maturity.
///
/// Between rebalances the holdings are frozen, so the value moves by
/// `a (p_k - p_{k-1})`; at a rebalance `a` is reset from the policy and `b`
/// absorbs the difference at constant value.
pub fn replay_hedge(problem: &HedgeProblem, path: &GbmPath, rebalance_every: usize) -> Result<HedgeTrace> {
    problem.validate()?;
    ensure(rebalance_every >= 1, || "rebalance interval must be at least one step".into())?;
    ensure(!path.is_empty() && path.times[0] == 0.0, || "path must start at t = 0".into())?;
    let last = path.index_of(problem.maturity).ok_or_else(|| {
        invalid(format!(
            "path (ending at {} h) has no grid point at maturity {} h",
            path.end_time(),
            problem.maturity
        ))
    })?;
    ensure(last > 0, || "path must contain steps before maturity".into())?;

    let p0 = path.values[0];
    let (a0, b0) = policy(problem, p0, 0.0)?;
    let v0 = portfolio_value(problem, p0, 0.0)?;
    let mut states = Vec::with_capacity(last / rebalance_every + 2);
    states.push(HedgeState { t: 0.0, p_g: p0, a: a0, b: b0, v: v0 });

    let mut idx = 0;
    while idx < last {
        let next = (idx + rebalance_every).min(last);
        let prev = *states.last().expect("non-empty");
        let p = path.values[next];
        let t = if next == last { problem.maturity } else { path.times[next] };
        let v = prev.v + prev.a * (p - prev.p_g);
        let (a, _) = policy_through_maturity(problem, p, t)?;
        let b = (v - a * p) / problem.block_power;
        states.push(HedgeState { t, p_g: p, a, b, v });
        idx = next;
    }

    let end = states.last().expect("non-empty");
    let payoff = terminal_payoff(problem, end.p_g);
    let hedging_error = (end.v - payoff).abs();
    Ok(HedgeTrace { states, rebalance_every, payoff, hedging_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbm::simulate_path;
    use crate::oracle::normal_cdf_quadrature;

    fn reference(maturity: f64) -> HedgeProblem {
        HedgeProblem::new(GbmParams::new(20.0, 0.1, 0.3).unwrap(), 25.0, 1.0, maturity).unwrap()
    }

    #[test]
    fn at_the_money_value() {
        let p = reference(5.0);
        let half_s = 0.5 * 0.3 * 5f64.sqrt();
        let oracle = 25.0 * (2.0 * normal_cdf_quadrature(half_s) - 1.0);
        let v = portfolio_value(&p, 25.0, 0.0).unwrap();
        assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");
        assert!((v - 6.567).abs() < 5e-4);
    }

    #[test]
    fn at_the_money_policy_and_capacity() {
        let p = reference(5.0);
        let (a, b) = policy(&p, 25.0, 0.0).unwrap();
        let half_s = 0.5 * 0.3 * 5f64.sqrt();
        assert!((a + normal_cdf_quadrature(-half_s)).abs() < 1e-9);
        assert!((b - 25.0 * normal_cdf_quadrature(half_s)).abs() < 1e-8);
        assert!((a + 0.36866).abs() < 1e-5);
        assert!((b - 15.783).abs() < 1e-3);
        let v = portfolio_value(&p, 25.0, 0.0).unwrap();
        assert!((a * 25.0 + b - v).abs() < 1e-9 * v);
        let cap = noncritical_capacity(&p, 25.0, 0.0).unwrap();
        assert!((cap - 34.2165).abs() < 1e-3);
    }

    #[test]
    fn limits() {
        let p = reference(5.0);
        assert!(portfolio_value(&p, 1e6, 0.0).unwrap() < 1e-12);
        let near = portfolio_value(&p, 20.0, 5.0 - 1e-7).unwrap();
        assert!((near - 5.0).abs() < 1e-9);
        let (a, b) = policy(&p, 1e3, 4.99).unwrap();
        assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
        let (a, b) = policy(&p, 1.0, 4.99).unwrap();
        assert!((a + 1.0).abs() < 1e-12 && (b - 25.0).abs() < 1e-10);
        assert!((noncritical_capacity(&p, 1e3, 4.99).unwrap() - 1e3).abs() < 1e-9);
        assert!((noncritical_capacity(&p, 1.0, 4.99).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn terminal_step_branch() {
        let p = reference(5.0);
        assert_eq!(policy(&p, 20.0, 5.0 - 1e-10).unwrap(), (-1.0, 25.0));
        assert_eq!(policy(&p, 25.0, 5.0 - 1e-10).unwrap(), (0.0, 0.0));
        assert_eq!(portfolio_value(&p, 25.0, 5.0 - 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn payoff_examples() {
        let p = reference(5.0);
        assert_eq!(terminal_payoff(&p, 20.0), 5.0);
        assert_eq!(terminal_payoff(&p, 25.0), 0.0);
        assert_eq!(terminal_payoff(&p, 40.0), 0.0);
    }

    #[test]
    fn rejects_bad_points() {
        let p = reference(5.0);
        assert!(portfolio_value(&p, 20.0, 5.0).is_err());
        assert!(portfolio_value(&p, 0.0, 1.0).is_err());
        assert!(policy(&p, -1.0, 1.0).is_err());
        assert!(pde_residual(&p, 20.0, 4.9995, 1e-3, 1e-3).is_err());
        assert!(pde_residual(&p, 20.0, 1.0, 0.0, 1e-3).is_err());
        assert!(HedgeProblem::new(GbmParams::new(20.0, 0.1, 0.3).unwrap(), 0.0, 1.0, 5.0).is_err());
    }

    #[test]
    fn delta_matches_holding() {
        let p = reference(5.0);
        for &(pg, t) in &[(10.0, 0.5), (25.0, 1.0), (40.0, 3.0), (22.0, 4.0)] {
            let (a, _) = policy(&p, pg, t).unwrap();
            let fd = delta_fd(&p, pg, t, 1e-3 * pg).unwrap();
            assert!((fd - a).abs() < 1e-6, "{pg} {t}: {fd} vs {a}");
        }
    }

    #[test]
    fn pde_residual_shrinks_quadratically() {
        let p = reference(5.0);
        let r1 = pde_residual(&p, 22.0, 2.0, 0.2, 0.02).unwrap().abs();
        let r2 = pde_residual(&p, 22.0, 2.0, 0.1, 0.01).unwrap().abs();
        assert!(r1 < 1e-3);
        let ratio = r1 / r2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_volatility_has_linear_value() {
        let params = GbmParams::new(20.0, 0.0, 0.0).unwrap();
        let p = HedgeProblem::new(params, 25.0, 1.0, 5.0).unwrap();
        assert_eq!(portfolio_value(&p, 20.0, 0.0).unwrap(), 5.0);
        assert_eq!(portfolio_value(&p, 30.0, 0.0).unwrap(), 0.0);
        assert_eq!(pde_residual(&p, 20.0, 1.0, 0.1, 0.1).unwrap(), 0.0);
        let path = simulate_path(&params, 5.0, 300, 3).unwrap();
        let trace = replay_hedge(&p, &path, 1).unwrap();
        assert!(trace.hedging_error < 1e-9);
        assert_eq!(trace.states.len(), 301);
    }

    #[test]
    fn reference_path_replicates_deficit() {
        let p = reference(5.0);
        let path = simulate_path(&p.gbm, 5.0, 300, 7).unwrap();
        let trace = replay_hedge(&p, &path, 1).unwrap();
        assert!(trace.hedging_error < 0.1 * 25.0, "{}", trace.hedging_error);
        for s in &trace.states {
            assert!((s.a * s.p_g + s.b - s.v).abs() < 1e-9 * 25.0);
        }
        let coarse = replay_hedge(&p, &path, 7).unwrap();
        assert_eq!(coarse.final_state().t, 5.0);
        assert_eq!(coarse.states.len(), 1 + 300usize.div_ceil(7));
    }

    #[test]
    fn replay_requires_maturity_on_grid() {
        let p = reference(5.0);
        let short = simulate_path(&p.gbm, 4.0, 300, 1).unwrap();
        assert!(replay_hedge(&p, &short, 1).is_err());
        let long = simulate_path(&p.gbm, 6.0, 360, 1).unwrap();
        let trace = replay_hedge(&p, &long, 1).unwrap();
        assert_eq!(trace.final_state().t, 5.0);
        assert!(replay_hedge(&p, &long, 0).is_err());
    }
}
