//! Float shims and small numeric helpers shared across the crate.
//!
//! Under `std` the intrinsic float methods are used; without it the same
//! operations come from `libm` so the crate stays `no_std`-compatible.

use alloc::vec::Vec;

#[cfg(feature = "std")]
#[inline]
pub fn exp(x: f64) -> f64 {
    x.exp()
}

#[cfg(not(feature = "std"))]
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[cfg(feature = "std")]
#[inline]
pub fn ln(x: f64) -> f64 {
    x.ln()
}

#[cfg(not(feature = "std"))]
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[cfg(feature = "std")]
#[inline]
pub fn sqrt(x: f64) -> f64 {
    x.sqrt()
}

#[cfg(not(feature = "std"))]
#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[cfg(feature = "std")]
#[inline]
pub fn floor(x: f64) -> f64 {
    x.floor()
}

#[cfg(not(feature = "std"))]
#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

/// Euclidean distance between two planar points.
#[inline]
pub fn dist2d(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    sqrt(dx * dx + dy * dy)
}

/// Arithmetic mean; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (1/n).
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    sqrt(variance(values))
}

/// Sum of squared deviations from the mean.
pub fn sse_about_mean(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
}

/// Linear-interpolation quantile (the common "type 7" rule) on a sorted
/// slice. `q` is clamped to [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Median of a slice (copies and sorts).
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    quantile_sorted(&v, 0.5)
}

/// Solve the symmetric positive-definite system `a x = b` in place via
/// Cholesky decomposition. `a` is a row-major `dim`×`dim` matrix and is
/// destroyed. Returns `None` if a pivot is not strictly positive.
pub fn cholesky_solve(a: &mut [f64], b: &mut [f64], dim: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), dim * dim);
    debug_assert_eq!(b.len(), dim);
    // Factor A = L L^T, storing L in the lower triangle.
    for j in 0..dim {
        let mut diag = a[j * dim + j];
        for k in 0..j {
            diag -= a[j * dim + k] * a[j * dim + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let l_jj = sqrt(diag);
        a[j * dim + j] = l_jj;
        for i in (j + 1)..dim {
            let mut v = a[i * dim + j];
            for k in 0..j {
                v -= a[i * dim + k] * a[j * dim + k];
            }
            a[i * dim + j] = v / l_jj;
        }
    }
    // Forward substitution: L y = b.
    for i in 0..dim {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * dim + k] * b[k];
        }
        b[i] = v / a[i * dim + i];
    }
    // Back substitution: L^T x = y.
    let mut x = b.to_vec();
    for i in (0..dim).rev() {
        let mut v = x[i];
        for k in (i + 1)..dim {
            v -= a[k * dim + i] * x[k];
        }
        x[i] = v / a[i * dim + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_type7_matches_hand_values() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        // type 7: Q1 of [1,2,3,4] is 1.75
        assert!((quantile_sorted(&v, 0.25) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn cholesky_solves_known_system() {
        // A = [[4,2],[2,3]], b = [10, 9] -> x = [1.5, 2]
        let mut a = [4.0, 2.0, 2.0, 3.0];
        let mut b = [10.0, 9.0];
        let x = cholesky_solve(&mut a, &mut b, 2).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-12);
        assert!((x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_singular() {
        let mut a = [1.0, 1.0, 1.0, 1.0];
        let mut b = [2.0, 2.0];
        assert!(cholesky_solve(&mut a, &mut b, 2).is_none());
    }

    #[test]
    fn population_variance() {
        // var([1,2,3]) with 1/n = 2/3
        assert!((variance(&[1.0, 2.0, 3.0]) - 2.0 / 3.0).abs() < 1e-12);
    }
}
