use serde::{Deserialize, Serialize};

use super::{dot, Allocation, ReguEnsemble};

/// Outcome of checking an allocation against the optimality conditions.
///
/// The bound multipliers are reconstructed as `lambda = R alpha + delta 1 - gamma mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub lambda: Vec<f64>,
    /// `lambda_i = 0` wherever `alpha_i > tol`.
    pub stationarity: bool,
    /// `alpha >= 0`, `1' alpha = 1`, `mu' alpha >= D`.
    pub primal_feasibility: bool,
    /// `lambda >= 0`, `gamma >= 0`.
    pub dual_feasibility: bool,
    /// `lambda_i alpha_i = 0` for every unit.
    pub bound_slackness: bool,
    /// `gamma (D - mu' alpha) = 0`.
    pub demand_slackness: bool,
    pub max_stationarity_residual: f64,
    pub max_bound_product: f64,
    pub demand_product: f64,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.stationarity
            && self.primal_feasibility
            && self.dual_feasibility
            && self.bound_slackness
            && self.demand_slackness
    }
}

/// Checks each optimality condition at absolute tolerance `tol`.
pub fn verify_kkt(ens: &ReguEnsemble, alloc: &Allocation, tol: f64) -> KktReport {
    let n = ens.len();
    let alpha = &alloc.weights;
    let dims_ok = alpha.len() == n;
    let (delta, gamma) = (alloc.multipliers.delta, alloc.multipliers.gamma);

    let lambda: Vec<f64> = if dims_ok {
        (0..n)
            .map(|i| {
                let r_alpha: f64 = (0..n).map(|j| ens.covariance[(i, j)] * alpha[j]).sum();
                r_alpha + delta - gamma * ens.means[i]
            })
            .collect()
    } else {
        Vec::new()
    };

    let max_stationarity_residual = (0..lambda.len())
        .filter(|&i| alpha[i] > tol)
        .map(|i| lambda[i].abs())
        .fold(0.0, f64::max);
    let max_bound_product = (0..lambda.len())
        .map(|i| (lambda[i] * alpha[i]).abs())
        .fold(0.0, f64::max);
    let mean = if dims_ok { dot(&ens.means, alpha) } else { f64::NAN };
    let demand_product = (gamma * (ens.demand - mean)).abs();
    let sum: f64 = alpha.iter().sum();

    KktReport {
        stationarity: dims_ok && max_stationarity_residual <= tol,
        primal_feasibility: dims_ok
            && alpha.iter().all(|&a| a >= -tol)
            && (sum - 1.0).abs() <= tol
            && mean >= ens.demand - tol,
        dual_feasibility: dims_ok && lambda.iter().all(|&l| l >= -tol) && gamma >= -tol,
        bound_slackness: dims_ok && max_bound_product <= tol,
        demand_slackness: dims_ok && demand_product <= tol,
        lambda,
        max_stationarity_residual,
        max_bound_product,
        demand_product,
    }
}
