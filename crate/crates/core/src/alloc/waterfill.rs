//! Two-multiplier water-filling on the simplex with a mean floor.
//!
//! Weights have the form `alpha_i = max(0, (offset_i + gamma mu_i - delta) / scale_i)`.
//! `delta` sets the water level so that the weights sum to one and `gamma >= 0`
//! tilts the level towards high-mean sources until `mu' alpha >= demand`.
//!
//! With `offset = 0, scale = sigma` this is the critical-production solution of
//! the diagonal problem; with `offset = y, scale = 1` it is the Euclidean
//! projection of `y` onto `{alpha >= 0, sum alpha = 1, mu' alpha >= demand}`.

use crate::error::{Error, Result};

pub(crate) const MAX_BISECTIONS: usize = 200;
pub(crate) const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LevelSearch {
    /// Monotone bisection on `delta`, then an exact level on the found support.
    Bisection,
    /// Sort the breakpoints and read the level off directly.
    Sorted,
}

#[derive(Debug, Clone)]
pub(crate) struct WaterFill<'a> {
    pub offset: Option<&'a [f64]>,
    pub scale: Option<&'a [f64]>,
    pub means: &'a [f64],
    pub search: LevelSearch,
}

#[derive(Debug, Clone)]
pub(crate) struct Filled {
    pub weights: Vec<f64>,
    pub gamma: f64,
    pub delta: f64,
}

impl<'a> WaterFill<'a> {
    fn n(&self) -> usize {
        self.means.len()
    }

    fn offset(&self, i: usize) -> f64 {
        self.offset.map_or(0.0, |o| o[i])
    }

    fn scale(&self, i: usize) -> f64 {
        self.scale.map_or(1.0, |s| s[i])
    }

    fn level(&self, i: usize, gamma: f64) -> f64 {
        self.offset(i) + gamma * self.means[i]
    }

    pub fn weights(&self, gamma: f64, delta: f64) -> Vec<f64> {
        (0..self.n())
            .map(|i| ((self.level(i, gamma) - delta) / self.scale(i)).max(0.0))
            .collect()
    }

    fn mass(&self, gamma: f64, delta: f64) -> f64 {
        (0..self.n())
            .map(|i| ((self.level(i, gamma) - delta) / self.scale(i)).max(0.0))
            .sum()
    }

    fn mean(&self, weights: &[f64]) -> f64 {
        weights.iter().zip(self.means).map(|(w, m)| w * m).sum()
    }

    /// Water level `delta(gamma)` making the weights sum to one.
    pub fn delta_for(&self, gamma: f64) -> Result<f64> {
        match self.search {
            LevelSearch::Sorted => Ok(self.delta_sorted(gamma)),
            LevelSearch::Bisection => self.delta_bisect(gamma),
        }
    }

    fn delta_sorted(&self, gamma: f64) -> f64 {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| self.level(b, gamma).total_cmp(&self.level(a, gamma)));
        let (mut num, mut den) = (0.0, 0.0);
        let mut delta = f64::NAN;
        for (k, &i) in order.iter().enumerate() {
            num += self.level(i, gamma) / self.scale(i);
            den += 1.0 / self.scale(i);
            let candidate = (num - 1.0) / den;
            let next_below = order
                .get(k + 1)
                .is_none_or(|&j| self.level(j, gamma) <= candidate);
            if self.level(i, gamma) > candidate && next_below {
                delta = candidate;
                break;
            }
        }
        delta
    }

    fn delta_bisect(&self, gamma: f64) -> Result<f64> {
        let levels: Vec<f64> = (0..self.n()).map(|i| self.level(i, gamma)).collect();
        let mut hi = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lo = (0..self.n())
            .map(|i| levels[i] - self.scale(i))
            .fold(f64::INFINITY, f64::min);
        let mut converged = false;
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let residual = self.mass(gamma, mid) - 1.0;
            if residual.abs() <= RESIDUAL_TOL * 1e-2 || mid == lo || mid == hi {
                lo = mid;
                hi = mid;
                converged = true;
                break;
            }
            if residual > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let bisected = 0.5 * (lo + hi);
        if !converged && (self.mass(gamma, bisected) - 1.0).abs() > RESIDUAL_TOL {
            return Err(Error::NumericalFailure(format!(
                "water level did not converge within {MAX_BISECTIONS} bisections"
            )));
        }
        // Exact level on the support identified by bisection.
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..self.n() {
            if levels[i] > bisected {
                num += levels[i] / self.scale(i);
                den += 1.0 / self.scale(i);
            }
        }
        if den > 0.0 {
            let exact = (num - 1.0) / den;
            let consistent = (0..self.n()).all(|i| (levels[i] > bisected) == (levels[i] > exact));
            if consistent {
                return Ok(exact);
            }
        }
        Ok(bisected)
    }

    /// Solves for `(gamma, delta)` with `sum alpha = 1`, `mu' alpha >= demand`,
    /// `gamma >= 0` and `gamma (demand - mu' alpha) = 0`.
    ///
    /// The caller guarantees `demand <= max mu`.
    pub fn solve(&self, demand: f64) -> Result<Filled> {
        let delta0 = self.delta_for(0.0)?;
        let weights0 = self.weights(0.0, delta0);
        if self.mean(&weights0) >= demand {
            return Ok(Filled { weights: weights0, gamma: 0.0, delta: delta0 });
        }

        let top = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let spread = self
            .means
            .iter()
            .map(|m| top - m)
            .filter(|&d| d > 0.0)
            .fold(f64::INFINITY, f64::min);
        if demand >= top - RESIDUAL_TOL * top.abs().max(1.0) || !spread.is_finite() {
            return self.solve_on_top(top);
        }

        // mean(gamma) is nondecreasing; bracket the crossing then bisect.
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut bracketed = false;
        for _ in 0..MAX_BISECTIONS {
            let delta = self.delta_for(hi)?;
            if self.mean(&self.weights(hi, delta)) >= demand {
                bracketed = true;
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
        if !bracketed {
            return Err(Error::NumericalFailure(
                "could not bracket the demand multiplier".into(),
            ));
        }
        let mut best = None;
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let delta = self.delta_for(mid)?;
            let weights = self.weights(mid, delta);
            let gap = self.mean(&weights) - demand;
            if gap >= 0.0 {
                hi = mid;
                best = Some(Filled { weights, gamma: mid, delta });
                if gap <= RESIDUAL_TOL {
                    break;
                }
            } else {
                lo = mid;
            }
            if mid == lo && mid == hi {
                break;
            }
        }
        match best {
            Some(filled) => Ok(filled),
            None => {
                let delta = self.delta_for(hi)?;
                Ok(Filled { weights: self.weights(hi, delta), gamma: hi, delta })
            }
        }
    }

    /// Demand equal to the largest mean: only the top sources can carry
    /// weight. Splits within that set at `gamma = 0`, then picks the smallest
    /// `gamma` that keeps every other source switched off.
    fn solve_on_top(&self, top: f64) -> Result<Filled> {
        let tol = RESIDUAL_TOL * top.abs().max(1.0);
        let on_top: Vec<bool> = self.means.iter().map(|&m| m >= top - tol).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..self.n() {
            if on_top[i] {
                num += self.offset(i) / self.scale(i);
                den += 1.0 / self.scale(i);
            }
        }
        // Level relative to gamma * top; offsets below it drop out of the top set.
        let mut level = (num - 1.0) / den;
        let mut active: Vec<bool> = on_top.clone();
        loop {
            let drop: Vec<usize> = (0..self.n())
                .filter(|&i| active[i] && self.offset(i) <= level)
                .collect();
            if drop.is_empty() {
                break;
            }
            for i in drop {
                active[i] = false;
                num -= self.offset(i) / self.scale(i);
                den -= 1.0 / self.scale(i);
            }
            level = (num - 1.0) / den;
        }
        let mut gamma: f64 = 0.0;
        for i in 0..self.n() {
            if !on_top[i] {
                let gap = top - self.means[i];
                gamma = gamma.max((self.offset(i) - level) / gap);
            }
        }
        let delta = level + gamma * top;
        let weights = (0..self.n())
            .map(|i| {
                if active[i] {
                    ((self.offset(i) - level) / self.scale(i)).max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Filled { weights, gamma, delta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_and_bisected_levels_agree() {
        let means = [3.0, 1.0, 2.5, 0.5];
        let offset = [0.3, -0.2, 0.9, 0.1];
        let scale = [1.0, 2.0, 0.5, 1.5];
        for search in [LevelSearch::Sorted, LevelSearch::Bisection] {
            let wf = WaterFill { offset: Some(&offset), scale: Some(&scale), means: &means, search };
            for &gamma in &[0.0, 0.3, 2.0] {
                let delta = wf.delta_for(gamma).unwrap();
                let total: f64 = wf.weights(gamma, delta).iter().sum();
                assert!((total - 1.0).abs() < 1e-12, "{search:?} gamma={gamma}");
            }
        }
    }

    #[test]
    fn projection_of_feasible_point_is_identity() {
        let means = [3.0, 1.0, 2.0];
        let y = [0.2, 0.3, 0.5];
        let wf = WaterFill { offset: Some(&y), scale: None, means: &means, search: LevelSearch::Sorted };
        let filled = wf.solve(1.5).unwrap();
        for (a, b) in filled.weights.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(filled.gamma, 0.0);
    }

    #[test]
    fn projection_enforces_mean_floor() {
        let means = [3.0, 1.0];
        let y = [0.0, 1.0];
        let wf = WaterFill { offset: Some(&y), scale: None, means: &means, search: LevelSearch::Sorted };
        let filled = wf.solve(2.0).unwrap();
        // closest point on the segment with 3a + (1 - a) >= 2 is a = 0.5
        assert!((filled.weights[0] - 0.5).abs() < 1e-9);
        assert!((filled.weights[1] - 0.5).abs() < 1e-9);
        assert!(filled.gamma > 0.0);
    }

    #[test]
    fn demand_at_top_mean_concentrates_on_top_set() {
        let means = [3.0, 1.0, 3.0];
        let sigma = [1.0, 1.0, 3.0];
        let wf = WaterFill { offset: None, scale: Some(&sigma), means: &means, search: LevelSearch::Bisection };
        let filled = wf.solve(3.0).unwrap();
        assert!((filled.weights[0] - 0.75).abs() < 1e-12);
        assert_eq!(filled.weights[1], 0.0);
        assert!((filled.weights[2] - 0.25).abs() < 1e-12);
        // stationarity on the support and a non-negative slack elsewhere
        for i in [0, 2] {
            let r = sigma[i] * filled.weights[i] + filled.delta - filled.gamma * means[i];
            assert!(r.abs() < 1e-12);
        }
        assert!(filled.delta - filled.gamma * means[1] >= -1e-12);
    }
}
