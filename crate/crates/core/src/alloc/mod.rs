//! Minimum-variance allocation of generation units meeting a power demand.
//!
//! Solves
//!
//! ```text
//! minimise   1/2 alpha' R alpha
//! subject to mu' alpha >= D,  1' alpha = 1,  alpha >= 0
//! ```
//!
//! For uncorrelated units (`R` diagonal) the solution is closed form: either
//! the inverse-variance weights when their mean already exceeds the demand
//! (excess production), or a water-filling solution with the demand
//! constraint active (critical production). Correlated units go through an
//! accelerated projected-gradient method in [`solve_correlated`].

mod kkt;
mod qp;
mod waterfill;

pub use kkt::{verify_kkt, KktReport};
pub use qp::solve_correlated;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use waterfill::{LevelSearch, WaterFill};

/// Relative slack below which a symmetric matrix eigenvalue counts as zero.
const PSD_TOL: f64 = 1e-10;

/// Means, covariance and demand of an allocation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ReguEnsemble {
    pub means: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub demand: f64,
}

impl ReguEnsemble {
    /// Builds and validates an ensemble from a dense row-major covariance.
    pub fn new(means: Vec<f64>, covariance: Vec<Vec<f64>>, demand: f64) -> Result<Self> {
        let n = means.len();
        ensure(covariance.len() == n && covariance.iter().all(|r| r.len() == n), || {
            format!("covariance must be {n}x{n} to match {n} means")
        })?;
        let covariance = DMatrix::from_fn(n, n, |i, j| covariance[i][j]);
        let ens = Self { means, covariance, demand };
        ens.validate()?;
        Ok(ens)
    }

    /// Uncorrelated units with the given variances.
    pub fn uncorrelated(means: Vec<f64>, variances: &[f64], demand: f64) -> Result<Self> {
        ensure(variances.len() == means.len(), || {
            format!("{} variances for {} means", variances.len(), means.len())
        })?;
        let covariance = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(variances));
        let ens = Self { means, covariance, demand };
        ens.validate()?;
        Ok(ens)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.means.len();
        ensure(n >= 1, || "at least one generation unit is required".into())?;
        ensure(self.covariance.nrows() == n && self.covariance.ncols() == n, || {
            format!("covariance must be {n}x{n}")
        })?;
        ensure(self.means.iter().all(|m| m.is_finite()), || "means must be finite".into())?;
        ensure(self.demand.is_finite() && self.demand >= 0.0, || {
            format!("demand must be a non-negative number, got {}", self.demand)
        })?;
        ensure(self.covariance.iter().all(|v| v.is_finite()), || {
            "covariance entries must be finite".into()
        })?;
        let scale = self.covariance.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (self.covariance[(i, j)], self.covariance[(j, i)]);
                ensure((a - b).abs() <= 1e-12 * scale, || {
                    format!("covariance is not symmetric at ({i}, {j}): {a} vs {b}")
                })?;
            }
        }
        let min_eig = SymmetricEigen::new(self.covariance.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        ensure(min_eig >= -PSD_TOL * scale, || {
            format!("covariance is not positive semidefinite (smallest eigenvalue {min_eig:e})")
        })
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| (0..n).all(|j| i == j || self.covariance[(i, j)] == 0.0))
    }

    pub fn max_mean(&self) -> f64 {
        max_mean(&self.means)
    }

    pub fn objective(&self, weights: &[f64]) -> f64 {
        quad_form(&self.covariance, weights) * 0.5
    }

    pub fn mean_of(&self, weights: &[f64]) -> f64 {
        dot(&self.means, weights)
    }

    pub(crate) fn check_feasible(&self) -> Result<()> {
        let max_mean = self.max_mean();
        if self.demand > max_mean {
            return Err(Error::InfeasibleDemand { demand: self.demand, max_mean });
        }
        Ok(())
    }
}

/// Which branch of the optimality conditions the solution sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolutionKind {
    /// Demand constraint slack; multiplier `gamma = 0`.
    ExcessProduction,
    /// Demand constraint binding, `mu' alpha = D`.
    CriticalProduction,
}

impl SolutionKind {
    pub fn short_name(self) -> &'static str {
        match self {
            SolutionKind::ExcessProduction => "EP",
            SolutionKind::CriticalProduction => "CP",
        }
    }
}

/// Lagrange multipliers of the simplex (`delta`) and demand (`gamma`)
/// constraints. The bound multipliers follow from stationarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub delta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub weights: Vec<f64>,
    pub kind: SolutionKind,
    pub multipliers: Multipliers,
    /// `mu' alpha` in kW.
    pub achieved_mean: f64,
    /// `1/2 alpha' R alpha` in kW^2.
    pub objective: f64,
}

impl Allocation {
    pub(crate) fn assemble(ens: &ReguEnsemble, weights: Vec<f64>, multipliers: Multipliers) -> Self {
        let achieved_mean = ens.mean_of(&weights);
        let objective = ens.objective(&weights);
        let kind = if achieved_mean > ens.demand && multipliers.gamma == 0.0 {
            SolutionKind::ExcessProduction
        } else {
            SolutionKind::CriticalProduction
        };
        Self { weights, kind, multipliers, achieved_mean, objective }
    }
}

/// Uses the closed form when the covariance is diagonal with positive
/// variances and the iterative solver otherwise.
pub fn solve(ens: &ReguEnsemble) -> Result<Allocation> {
    ens.validate()?;
    let n = ens.len();
    let variances: Vec<f64> = (0..n).map(|i| ens.covariance[(i, i)]).collect();
    if ens.is_diagonal() && variances.iter().all(|&v| v > 0.0) {
        solve_uncorrelated(&variances, &ens.means, ens.demand)
    } else {
        solve_correlated(ens)
    }
}

/// Closed-form solution for uncorrelated units.
///
/// `variances[i]` is the variance of unit `i` (kW^2), `means[i]` its mean (kW).
/// Inverse-variance weights are returned when their mean exceeds `demand`;
/// otherwise the demand constraint is made active and `(gamma, delta)` are
/// found by nested bisection.
pub fn solve_uncorrelated(variances: &[f64], means: &[f64], demand: f64) -> Result<Allocation> {
    ensure(!means.is_empty(), || "at least one generation unit is required".into())?;
    ensure(variances.len() == means.len(), || {
        format!("{} variances for {} means", variances.len(), means.len())
    })?;
    for (i, &s) in variances.iter().enumerate() {
        ensure(s.is_finite() && s > 0.0, || {
            format!("variance of unit {i} must be positive, got {s}")
        })?;
    }
    let ens = ReguEnsemble::uncorrelated(means.to_vec(), variances, demand)?;
    ens.check_feasible()?;

    let inv_total: f64 = variances.iter().map(|s| 1.0 / s).sum();
    let ep: Vec<f64> = variances.iter().map(|s| (1.0 / s) / inv_total).collect();
    if dot(means, &ep) > demand {
        let multipliers = Multipliers { delta: -1.0 / inv_total, gamma: 0.0 };
        return Ok(Allocation::assemble(&ens, ep, multipliers));
    }

    let wf = WaterFill { offset: None, scale: Some(variances), means, search: LevelSearch::Bisection };
    let filled = wf.solve(demand)?;
    let (weights, multipliers) = polish_critical(variances, means, demand, &filled.weights)
        .unwrap_or((filled.weights, Multipliers { delta: filled.delta, gamma: filled.gamma }));
    let mut alloc = Allocation::assemble(&ens, weights, multipliers);
    alloc.kind = SolutionKind::CriticalProduction;
    Ok(alloc)
}

/// Solves the two active-row conditions `sum alpha = 1`, `mu' alpha = D`
/// exactly on the support found by bisection.
fn polish_critical(
    variances: &[f64],
    means: &[f64],
    demand: f64,
    weights: &[f64],
) -> Option<(Vec<f64>, Multipliers)> {
    let support: Vec<usize> = (0..means.len()).filter(|&i| weights[i] > 0.0).collect();
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for &i in &support {
        a += means[i] / variances[i];
        b += 1.0 / variances[i];
        c += means[i] * means[i] / variances[i];
    }
    let det = b * c - a * a;
    // also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(det > 1e-14 * b * c) {
        return None;
    }
    let gamma = (b * demand - a) / det;
    let delta = (a * demand - c) / det;
    if gamma < 0.0 {
        return None;
    }
    let polished: Vec<f64> = (0..means.len())
        .map(|i| {
            let raw = (gamma * means[i] - delta) / variances[i];
            if support.contains(&i) {
                raw
            } else {
                0.0
            }
        })
        .collect();
    let off_support_ok = (0..means.len())
        .filter(|i| !support.contains(i))
        .all(|i| gamma * means[i] - delta <= 1e-12);
    (polished.iter().all(|&w| w >= 0.0) && off_support_ok)
        .then_some((polished, Multipliers { delta, gamma }))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += x[i] * m[(i, j)] * x[j];
        }
    }
    acc
}

pub(crate) fn max_mean(means: &[f64]) -> f64 {
    means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
