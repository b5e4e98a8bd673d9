//! Allocation with a general covariance matrix.
//!
//! Accelerated projected gradient (FISTA with adaptive restart) over the
//! polytope `{alpha >= 0, 1' alpha = 1, mu' alpha >= D}`. Each projection is a
//! unit-scale water-filling. Once the iterates settle, the support and the
//! status of the demand constraint are read off and the equality-constrained
//! optimality system on that face is solved directly, which recovers the
//! multipliers and removes the residual first-order error.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::waterfill::{LevelSearch, WaterFill};
use super::{dot, Allocation, Multipliers, ReguEnsemble, SolutionKind};
use crate::error::{Error, Result};

/// Diagonal shift applied before solving, so that degenerate zero-variance
/// units keep the problem strictly convex.
const PSD_REGULARIZATION: f64 = 1e-12;
const MAX_ITERATIONS: usize = 20_000;
const STEP_TOL: f64 = 1e-14;
const SUPPORT_TOL: f64 = 1e-10;

/// Minimum-variance allocation for an arbitrary PSD covariance.
pub fn solve_correlated(ens: &ReguEnsemble) -> Result<Allocation> {
    ens.validate()?;
    ens.check_feasible()?;
    let n = ens.len();
    let mut cov = ens.covariance.clone();
    for i in 0..n {
        cov[(i, i)] += PSD_REGULARIZATION;
    }
    let lipschitz = SymmetricEigen::new(cov.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .max(PSD_REGULARIZATION);
    let step = 1.0 / lipschitz;

    let project = |y: &[f64]| -> Result<Vec<f64>> {
        let wf = WaterFill { offset: Some(y), scale: None, means: &ens.means, search: LevelSearch::Sorted };
        Ok(wf.solve(ens.demand)?.weights)
    };

    let mut x = project(&vec![1.0 / n as f64; n])?;
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let grad = mat_vec(&cov, &y);
        let trial: Vec<f64> = (0..n).map(|i| y[i] - step * grad[i]).collect();
        let next = project(&trial)?;
        let moved: f64 = (0..n).map(|i| (next[i] - x[i]).abs()).fold(0.0, f64::max);

        // restart when the momentum direction points uphill
        let uphill: f64 = (0..n).map(|i| grad[i] * (next[i] - x[i])).sum();
        let next_momentum = if uphill > 0.0 {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt())
        };
        let beta = if uphill > 0.0 { 0.0 } else { (momentum - 1.0) / next_momentum };
        y = (0..n).map(|i| next[i] + beta * (next[i] - x[i])).collect();
        momentum = next_momentum;
        x = next;
        if moved <= STEP_TOL {
            converged = true;
            break;
        }
    }

    if let Some((weights, multipliers)) = polish(ens, &cov, &x) {
        let mut alloc = Allocation::assemble(ens, weights, multipliers);
        if multipliers.gamma == 0.0 && alloc.achieved_mean > ens.demand {
            alloc.kind = SolutionKind::ExcessProduction;
        }
        return Ok(alloc);
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "projected gradient did not settle within {MAX_ITERATIONS} iterations"
        )));
    }
    let multipliers = estimate_multipliers(ens, &cov, &x);
    let mut alloc = Allocation::assemble(ens, x, multipliers);
    alloc.kind = if alloc.achieved_mean - ens.demand <= 1e-8 {
        SolutionKind::CriticalProduction
    } else {
        SolutionKind::ExcessProduction
    };
    Ok(alloc)
}

/// Solves the optimality system restricted to the face identified by `x`.
///
/// Accepts the result only if it is primal and dual feasible and does not
/// increase the objective.
fn polish(ens: &ReguEnsemble, cov: &DMatrix<f64>, x: &[f64]) -> Option<(Vec<f64>, Multipliers)> {
    let n = ens.len();
    let support: Vec<usize> = (0..n).filter(|&i| x[i] > SUPPORT_TOL).collect();
    let demand_active = dot(&ens.means, x) - ens.demand <= 1e-9 * ens.demand.abs().max(1.0);

    let tries: &[bool] = if demand_active { &[true, false] } else { &[false, true] };
    let base_objective = 0.5 * dot(x, &mat_vec(cov, x));
    for &active in tries {
        let Some((weights, mult)) = solve_face(ens, cov, &support, active) else {
            continue;
        };
        let objective = 0.5 * dot(&weights, &mat_vec(cov, &weights));
        let scale = base_objective.abs().max(1e-300);
        if objective <= base_objective + 1e-12 * scale.max(1.0)
            && face_is_optimal(ens, cov, &weights, mult)
        {
            return Some((weights, mult));
        }
    }
    None
}

fn solve_face(
    ens: &ReguEnsemble,
    cov: &DMatrix<f64>,
    support: &[usize],
    demand_active: bool,
) -> Option<(Vec<f64>, Multipliers)> {
    let k = support.len();
    if k == 0 {
        return None;
    }
    let m = k + 1 + usize::from(demand_active);
    let mut kkt = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            kkt[(a, b)] = cov[(i, j)];
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
        if demand_active {
            kkt[(a, k + 1)] = -ens.means[i];
            kkt[(k + 1, a)] = ens.means[i];
        }
    }
    rhs[k] = 1.0;
    if demand_active {
        rhs[k + 1] = ens.demand;
    }
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut weights = vec![0.0; ens.len()];
    for (a, &i) in support.iter().enumerate() {
        let w = sol[a];
        if w < -1e-12 {
            return None;
        }
        weights[i] = w.max(0.0);
    }
    let delta = sol[k];
    let gamma = if demand_active { sol[k + 1] } else { 0.0 };
    if gamma < -1e-12 {
        return None;
    }
    Some((weights, Multipliers { delta, gamma: gamma.max(0.0) }))
}

fn face_is_optimal(ens: &ReguEnsemble, cov: &DMatrix<f64>, weights: &[f64], mult: Multipliers) -> bool {
    let r_alpha = mat_vec(cov, weights);
    let scale = r_alpha.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let dual_ok = (0..ens.len()).all(|i| {
        let lambda = r_alpha[i] + mult.delta - mult.gamma * ens.means[i];
        lambda >= -1e-10 * scale
    });
    let primal_ok = dot(&ens.means, weights) >= ens.demand - 1e-10 * ens.demand.abs().max(1.0);
    dual_ok && primal_ok
}

/// Least-squares multipliers from the stationarity rows of the support.
fn estimate_multipliers(ens: &ReguEnsemble, cov: &DMatrix<f64>, x: &[f64]) -> Multipliers {
    let r_alpha = mat_vec(cov, x);
    let support: Vec<usize> = (0..ens.len()).filter(|&i| x[i] > SUPPORT_TOL).collect();
    let active = dot(&ens.means, x) - ens.demand <= 1e-8;
    if !active {
        let delta = -support.iter().map(|&i| r_alpha[i]).sum::<f64>() / support.len().max(1) as f64;
        return Multipliers { delta, gamma: 0.0 };
    }
    // rows: delta - gamma mu_i = -(R x)_i
    let a = DMatrix::from_fn(support.len(), 2, |r, c| if c == 0 { 1.0 } else { -ens.means[support[r]] });
    let b = DVector::from_iterator(support.len(), support.iter().map(|&i| -r_alpha[i]));
    match a.svd(true, true).solve(&b, 1e-12) {
        Ok(sol) => Multipliers { delta: sol[0], gamma: sol[1].max(0.0) },
        Err(_) => Multipliers { delta: 0.0, gamma: 0.0 },
    }
}

fn mat_vec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|i| (0..n).map(|j| m[(i, j)] * x[j]).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::{solve_uncorrelated, verify_kkt};

    #[test]
    fn exchange_symmetry() {
        let ens = ReguEnsemble::new(vec![3.0, 3.0], vec![vec![1.0, 0.5], vec![0.5, 1.0]], 1.0).unwrap();
        let alloc = solve_correlated(&ens).unwrap();
        assert!((alloc.weights[0] - 0.5).abs() < 1e-9);
        assert!((alloc.weights[1] - 0.5).abs() < 1e-9);
        assert_eq!(alloc.kind, SolutionKind::ExcessProduction);
    }

    #[test]
    fn diagonal_matches_closed_form() {
        let cases: &[(&[f64], &[f64], f64)] = &[
            (&[1.0, 2.0], &[3.0, 3.0], 1.0),
            (&[1.0, 1.0], &[2.0, 1.0], 1.8),
            (&[0.5, 2.0, 1.5], &[1.0, 4.0, 2.0], 3.0),
            (&[1.0, 1.0, 1.0], &[3.0, 2.5, 0.0], 2.85),
        ];
        for &(var, mu, d) in cases {
            let closed = solve_uncorrelated(var, mu, d).unwrap();
            let ens = ReguEnsemble::uncorrelated(mu.to_vec(), var, d).unwrap();
            let general = solve_correlated(&ens).unwrap();
            for (a, b) in closed.weights.iter().zip(&general.weights) {
                assert!((a - b).abs() < 1e-6, "{var:?} {mu:?} {d}");
            }
            assert_eq!(closed.kind, general.kind);
            assert!(verify_kkt(&ens, &general, 1e-8).passed());
        }
    }

    #[test]
    fn negatively_correlated_pair_hedges() {
        // perfectly anti-correlated equal-variance units cancel at 50/50
        let ens = ReguEnsemble::new(vec![2.0, 2.0], vec![vec![1.0, -1.0], vec![-1.0, 1.0]], 1.0).unwrap();
        let alloc = solve_correlated(&ens).unwrap();
        assert!(alloc.objective < 1e-9);
        assert!((alloc.weights[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn zero_variance_unit_is_handled() {
        let ens = ReguEnsemble::new(vec![1.0, 3.0], vec![vec![0.0, 0.0], vec![0.0, 1.0]], 2.0).unwrap();
        let alloc = solve_correlated(&ens).unwrap();
        assert!((alloc.weights[0] - 0.5).abs() < 1e-6);
        assert!((alloc.achieved_mean - 2.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_infeasible_and_non_psd() {
        let ens = ReguEnsemble::uncorrelated(vec![1.0, 2.0], &[1.0, 1.0], 2.5);
        assert!(matches!(solve_correlated(&ens.unwrap()), Err(Error::InfeasibleDemand { .. })));
        let bad = ReguEnsemble {
            means: vec![1.0, 2.0],
            covariance: DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]),
            demand: 1.0,
        };
        assert!(matches!(solve_correlated(&bad), Err(Error::InvalidArgument(_))));
    }
}
