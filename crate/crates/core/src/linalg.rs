//! Small dense helpers for p×p systems that sit in the innermost fitting loop.

/// In-place Cholesky of a row-major `p×p` SPD matrix (lower triangle).
/// Returns false when a pivot is not positive relative to `rel_tol`.
pub(crate) fn cholesky_in_place(a: &mut [f64], p: usize, rel_tol: f64) -> bool {
    let scale = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return false;
    }
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > rel_tol * scale) {
            return false;
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in (j + 1)..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    true
}

/// Solve `L L' x = b` in place given the factor from [`cholesky_in_place`].
pub(crate) fn cholesky_solve(l: &[f64], p: usize, b: &mut [f64]) {
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in (i + 1)..p {
            s -= l[k * p + i] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
}

/// Pairwise summation; the result depends only on the order of `v`.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

pub fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

/// Sample variance with divisor `n - 1`.
pub fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    let dev: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&dev) / (v.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        assert!(cholesky_in_place(&mut a, 2, 1e-12));
        let mut b = vec![2.0, 1.0];
        cholesky_solve(&a, 2, &mut b);
        // [4 2; 2 3] x = [2; 1] -> x = [0.5, 0]
        assert!((b[0] - 0.5).abs() < 1e-15 && b[1].abs() < 1e-15);
    }

    #[test]
    fn detects_singular() {
        let mut a = vec![1.0, 1.0, 1.0, 1.0];
        assert!(!cholesky_in_place(&mut a, 2, 1e-12));
    }

    #[test]
    fn summaries() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 210.0);
        assert_eq!(mean(&v), 10.5);
        assert!((sample_variance(&[0.0, 2.0]) - 2.0).abs() < 1e-15);
    }
}
