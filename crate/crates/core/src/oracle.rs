//! Brute-force reference computations used by the test suites.
//!
//! Nothing here is used by the solvers themselves; these are deliberately
//! simple, slow and independent routes to the same answers.

use crate::alloc::ReguEnsemble;

/// Exhaustive search over the simplex grid with spacing `1 / divisions`.
///
/// Returns the best feasible grid point and its objective, or `None` when no
/// grid point meets the demand. Cost grows as `divisions^(n-1)`.
pub fn simplex_grid_min(ens: &ReguEnsemble, divisions: usize) -> Option<(Vec<f64>, f64)> {
    let n = ens.len();
    let mut counts = vec![0usize; n];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let tol = 1e-12 * ens.demand.abs().max(1.0);
    enumerate(&mut counts, 0, divisions, &mut |c| {
        let w: Vec<f64> = c.iter().map(|&k| k as f64 / divisions as f64).collect();
        if ens.mean_of(&w) + tol < ens.demand {
            return;
        }
        let obj = ens.objective(&w);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((w, obj));
        }
    });
    best
}

fn enumerate(counts: &mut [usize], idx: usize, left: usize, visit: &mut impl FnMut(&[usize])) {
    if idx + 1 == counts.len() {
        counts[idx] = left;
        visit(counts);
        return;
    }
    for k in 0..=left {
        counts[idx] = k;
        enumerate(counts, idx + 1, left - k, visit);
    }
}

/// Grid search over the first `n - 2` weights with the last two weights
/// optimised exactly along their remaining edge.
///
/// Every pure grid point lies in the searched set, so the result is never
/// worse than [`simplex_grid_min`] at the same spacing, at a fraction of the
/// cost for `n = 4`.
pub fn simplex_grid_edge_min(ens: &ReguEnsemble, divisions: usize) -> Option<(Vec<f64>, f64)> {
    let n = ens.len();
    if n == 1 {
        return (ens.means[0] >= ens.demand).then(|| (vec![1.0], ens.objective(&[1.0])));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut prefix_counts = vec![0usize; n - 1];
    let (u, v) = (n - 2, n - 1);
    let mut visit = |c: &[usize]| {
        // c has n-1 entries; the last entry is the mass left for the edge
        let mut base: Vec<f64> = c[..n - 2].iter().map(|&k| k as f64 / divisions as f64).collect();
        let rest = c[n - 2] as f64 / divisions as f64;
        base.push(0.0);
        base.push(rest);
        // alpha = base + x (e_u - e_v), x in [0, rest]
        let (mut lo, mut hi) = (0.0_f64, rest);
        let slope = ens.means[u] - ens.means[v];
        let need = ens.demand - ens.mean_of(&base);
        if slope > 0.0 {
            lo = lo.max(need / slope);
        } else if slope < 0.0 {
            hi = hi.min(need / slope);
        } else if need > 1e-12 * ens.demand.abs().max(1.0) {
            return;
        }
        if lo > hi + 1e-15 {
            return;
        }
        let r = &ens.covariance;
        let curv = r[(u, u)] - 2.0 * r[(u, v)] + r[(v, v)];
        let lin: f64 = (0..n).map(|j| (r[(u, j)] - r[(v, j)]) * base[j]).sum();
        let x = if curv > 0.0 { (-lin / curv).clamp(lo, hi.max(lo)) } else { lo };
        let mut candidates = vec![x, lo, hi.max(lo)];
        candidates.dedup();
        for x in candidates {
            let mut w = base.clone();
            w[u] += x;
            w[v] -= x;
            let obj = ens.objective(&w);
            if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                best = Some((w, obj));
            }
        }
    };
    enumerate(&mut prefix_counts, 0, divisions, &mut visit);
    best
}

/// Golden-section minimisation of a unimodal function on `[lo, hi]`.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while (hi - lo).abs() > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let x = 0.5 * (lo + hi);
    let candidates = [(x, f(x)), (lo, f(lo)), (hi, f(hi))];
    candidates.into_iter().fold((f64::NAN, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc })
}

/// Composite Simpson rule with `2 * half_panels` panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, half_panels: usize) -> f64 {
    let n = 2 * half_panels.max(1);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Standard normal CDF by Simpson integration of the density from zero.
/// Slow but independent of `erfc`.
pub fn normal_cdf_quadrature(x: f64) -> f64 {
    let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 + simpson(pdf, 0.0, x, 20_000)
}
