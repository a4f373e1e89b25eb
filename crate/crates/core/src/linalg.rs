//! Small dense helpers shared by the region solvers and evaluators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn mean(a: &[f64]) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        a.iter().sum::<f64>() / a.len() as f64
    }
}

pub(crate) fn centered(a: &[f64]) -> Vec<f64> {
    let m = mean(a);
    a.iter().map(|x| x - m).collect()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub(crate) fn argmax(a: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in a.iter().enumerate().skip(1) {
        if x > a[best] {
            best = k;
        }
    }
    best
}

/// Index of the smallest entry; ties resolve to the lowest index.
pub(crate) fn argmin(a: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in a.iter().enumerate().skip(1) {
        if x < a[best] {
            best = k;
        }
    }
    best
}

/// Euclidean projection onto `{x : lower <= x <= upper}`, intersected with
/// `{sum x = 0}` when `zero_sum` is set.
///
/// The hyperplane case shifts by the scalar λ solving
/// `sum_j clip(y_j - λ, l_j, u_j) = 0`; the left side is piecewise linear and
/// nonincreasing in λ, so the root is located exactly among the sorted
/// breakpoints. Requires `lower <= 0 <= upper` componentwise so that the
/// intersection is nonempty.
pub(crate) fn project_box_hyperplane(
    y: &[f64],
    lower: &[f64],
    upper: &[f64],
    zero_sum: bool,
) -> Vec<f64> {
    let clip = |lam: f64| -> Vec<f64> {
        y.iter()
            .zip(lower.iter().zip(upper))
            .map(|(&yj, (&l, &u))| (yj - lam).clamp(l, u))
            .collect()
    };
    if !zero_sum {
        return clip(0.0);
    }
    let total = |lam: f64| -> f64 {
        y.iter()
            .zip(lower.iter().zip(upper))
            .map(|(&yj, (&l, &u))| (yj - lam).clamp(l, u))
            .sum()
    };
    let mut breaks: Vec<f64> = y
        .iter()
        .zip(lower.iter().zip(upper))
        .flat_map(|(&yj, (&l, &u))| [yj - u, yj - l])
        .collect();
    breaks.sort_by(|a, b| a.total_cmp(b));
    // total(breaks[0]) >= 0 >= total(breaks[last]).
    let mut lo = 0;
    let mut hi = breaks.len() - 1;
    if total(breaks[lo]) <= 0.0 {
        return clip(breaks[lo]);
    }
    if total(breaks[hi]) >= 0.0 {
        return clip(breaks[hi]);
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if total(breaks[mid]) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (breaks[lo], breaks[hi]);
    let (fa, fb) = (total(a), total(b));
    let lam = if fa == fb { a } else { a + (b - a) * fa / (fa - fb) };
    clip(lam)
}

/// Euclidean projection onto the ℓ1 ball of the given radius (sort based).
pub(crate) fn project_l1_ball(y: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = y.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return y.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; y.len()];
    }
    let mut mags: Vec<f64> = y.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - radius) / (k + 1) as f64;
        if m > t {
            tau = t;
        }
    }
    y.iter()
        .map(|&x| x.signum() * (x.abs() - tau).max(0.0))
        .collect()
}

/// Solves `a x = b` for a symmetric positive definite `a`.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(b)),
        None => a
            .clone()
            .lu()
            .solve(b)
            .ok_or_else(|| Error::Singular(what.to_string())),
    }
}
