//! One-dimensional derivative-free maximization.

use crate::error::{PtfhError, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub x: f64,
    pub value: f64,
    /// Every `(x, f(x))` evaluated, in evaluation order.
    pub evaluations: Vec<(f64, f64)>,
    pub iterations: usize,
    pub converged: bool,
}

/// Golden-section maximization of `f` on `[lo, hi]` until the bracket is
/// narrower than `tol`. Returns the best interior point.
pub fn golden_section_max<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SearchOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(PtfhError::Numerical(format!("invalid bracket [{lo}, {hi}]")));
    }
    let mut evaluations = Vec::new();
    let mut eval = |x: f64, ev: &mut Vec<(f64, f64)>| -> Result<f64> {
        let v = f(x)?;
        if v.is_nan() {
            return Err(PtfhError::Numerical(format!("objective is NaN at {x}")));
        }
        ev.push((x, v));
        Ok(v)
    };

    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1, &mut evaluations)?;
    let mut f2 = eval(x2, &mut evaluations)?;
    let mut iterations = 0;
    while b - a > tol && iterations < max_iter {
        iterations += 1;
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1, &mut evaluations)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2, &mut evaluations)?;
        }
    }
    let converged = b - a <= tol;
    let (x, value) = best_of(&evaluations);
    Ok(SearchOutcome { x, value, evaluations, iterations, converged })
}

/// Largest value; ties go to the smallest abscissa.
pub(crate) fn best_of(evaluations: &[(f64, f64)]) -> (f64, f64) {
    let mut best = evaluations[0];
    for &(x, v) in &evaluations[1..] {
        if v > best.1 || (v == best.1 && x < best.0) {
            best = (x, v);
        }
    }
    best
}

/// Evaluate `f` on an ascending `grid`, then refine by golden section
/// between the neighbours of the best grid point.
pub fn grid_then_golden<F>(mut f: F, grid: &[f64], tol: f64, max_iter: usize) -> Result<SearchOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(PtfhError::Numerical("empty search grid".into()));
    }
    let mut evaluations = Vec::with_capacity(grid.len() + 64);
    let mut best_k = 0;
    for (k, &x) in grid.iter().enumerate() {
        let v = f(x)?;
        if v.is_nan() {
            return Err(PtfhError::Numerical(format!("objective is NaN at {x}")));
        }
        evaluations.push((x, v));
        if v > evaluations[best_k].1 {
            best_k = k;
        }
    }
    if grid.len() == 1 {
        let (x, value) = evaluations[0];
        return Ok(SearchOutcome { x, value, evaluations, iterations: 0, converged: true });
    }
    let lo = grid[best_k.saturating_sub(1)];
    let hi = grid[(best_k + 1).min(grid.len() - 1)];
    let refined = golden_section_max(&mut f, lo, hi, tol, max_iter)?;
    evaluations.extend_from_slice(&refined.evaluations);
    let (x, value) = best_of(&evaluations);
    Ok(SearchOutcome {
        x,
        value,
        evaluations,
        iterations: refined.iterations,
        converged: refined.converged,
    })
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
            v[n - 1] = hi;
            v
        }
    }
}

pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect();
    if let Some(first) = v.first_mut() {
        *first = lo;
    }
    if let Some(last) = v.last_mut() {
        *last = hi;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_peak() {
        let out = golden_section_max(|x| Ok(-(x - 0.3) * (x - 0.3)), -2.0, 2.0, 1e-9, 200).unwrap();
        assert!(out.converged);
        assert!((out.x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn grid_escapes_local_peak() {
        // two bumps; golden section alone on [0, 4] would settle on the left one
        let f = |x: f64| Ok((-(x - 0.5f64).powi(2) * 20.0).exp() + 2.0 * (-(x - 3.5f64).powi(2) * 20.0).exp());
        let out = grid_then_golden(f, &linspace(0.0, 4.0, 21), 1e-8, 200).unwrap();
        assert!((out.x - 3.5).abs() < 1e-6);
    }

    #[test]
    fn ties_pick_smallest() {
        let out = grid_then_golden(|_| Ok(1.0), &linspace(0.0, 1.0, 5), 1e-6, 100).unwrap();
        assert_eq!(out.x, 0.0);
    }

    #[test]
    fn single_point_grid() {
        let out = grid_then_golden(|x| Ok(x), &[0.0], 1e-6, 100).unwrap();
        assert_eq!(out.x, 0.0);
        assert_eq!(out.evaluations.len(), 1);
    }

    #[test]
    fn nan_is_an_error() {
        assert!(golden_section_max(|_| Ok(f64::NAN), 0.0, 1.0, 1e-6, 10).is_err());
    }

    #[test]
    fn spaces() {
        assert_eq!(linspace(0.0, 2.0, 21)[20], 2.0);
        assert!((linspace(0.0, 2.0, 21)[1] - 0.1).abs() < 1e-15);
        let l = logspace(1e-8, 10.0, 5);
        assert_eq!(l[0], 1e-8);
        assert_eq!(l[4], 10.0);
        assert!(l.windows(2).all(|w| w[0] < w[1]));
    }
}
