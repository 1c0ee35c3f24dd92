//! Global Moran's I of value vectors over sparse spatial weights.

use alloc::vec::Vec;

use crate::dataset::{Dataset, SpatialWeights};
use crate::math;
use crate::tree::GeoTree;
use crate::{Error, Result};

/// Global Moran's I:
///
/// I = (N / W) * sum_ij w_ij (v_i - v̄)(v_j - v̄) / sum_i (v_i - v̄)²
///
/// The value is reported raw; it can marginally exceed ±1 for some weight
/// matrices and downstream users floor the (1 - |I|) gain factor at zero
/// instead of clamping here.
pub fn morans_i(values: &[f64], weights: &SpatialWeights) -> Result<f64> {
    let n = values.len();
    if n != weights.n() {
        return Err(Error::Shape {
            expected: weights.n(),
            got: n,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite value".into()));
    }
    let mean = math::mean(values);
    let denom: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    if denom <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let mut cross = 0.0;
    for &(i, j, w) in weights.entries() {
        cross += w * (values[i as usize] - mean) * (values[j as usize] - mean);
    }
    Ok((n as f64 / weights.weight_sum()) * cross / denom)
}

/// Moran's I of a tree's prediction-minus-target residuals on a dataset.
pub fn residual_morans_i(
    tree: &GeoTree,
    dataset: &Dataset,
    weights: &SpatialWeights,
) -> Result<f64> {
    let preds = tree.predict(dataset.x())?;
    let residuals: Vec<f64> = preds
        .iter()
        .zip(dataset.y())
        .map(|(p, y)| p - y)
        .collect();
    morans_i(&residuals, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::knn_weights;

    fn cycle4() -> SpatialWeights {
        SpatialWeights::from_undirected_edges(
            4,
            &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn alternating_cycle_is_minus_one() {
        // 4-cycle, values [1,-1,1,-1]: every edge joins opposite signs, so
        // I = (4/8) * (-8/4) = -1
        let w = cycle4();
        let i = morans_i(&[1.0, -1.0, 1.0, -1.0], &w).unwrap();
        assert!((i + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_vector_is_zero_variance() {
        let w = cycle4();
        assert_eq!(morans_i(&[2.0; 4], &w), Err(Error::ZeroVariance));
    }

    #[test]
    fn matches_double_loop_oracle() {
        // pseudo-random 50-point configuration vs a dense double loop
        let mut state = 123456789u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let locs: Vec<[f64; 2]> = (0..50).map(|_| [next() * 10.0, next() * 10.0]).collect();
        let values: Vec<f64> = (0..50).map(|_| next() * 4.0 - 2.0).collect();
        let weights = knn_weights(&locs, 6).unwrap();

        // oracle: materialize the dense matrix and evaluate the formula
        let n = 50;
        let mut dense = vec![vec![0.0f64; n]; n];
        for &(i, j, w) in weights.entries() {
            dense[i as usize][j as usize] = w;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut wsum = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += dense[i][j] * (values[i] - mean) * (values[j] - mean);
                wsum += dense[i][j];
            }
        }
        let denom: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let expected = (n as f64 / wsum) * num / denom;

        let got = morans_i(&values, &weights).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn affine_invariance() {
        let w = cycle4();
        let v = [0.3, 1.9, -0.4, 0.8];
        let base = morans_i(&v, &w).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| -3.5 * x + 11.0).collect();
        assert!((morans_i(&shifted, &w).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn weight_scaling_invariance() {
        let v = [0.3, 1.9, -0.4, 0.8];
        let w1 = cycle4();
        let w2 = SpatialWeights::from_undirected_edges(
            4,
            &[(0, 1, 2.5), (1, 2, 2.5), (2, 3, 2.5), (3, 0, 2.5)],
        )
        .unwrap();
        let a = morans_i(&v, &w1).unwrap();
        let b = morans_i(&v, &w2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let w = cycle4();
        assert!(matches!(
            morans_i(&[1.0, 2.0], &w),
            Err(Error::Shape { .. })
        ));
    }
}
