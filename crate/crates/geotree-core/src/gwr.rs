//! Geographically weighted regression: one weighted least-squares fit per
//! sample location, yielding local coefficient vectors that define the
//! stimulus-response similarity between samples.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::math;
use crate::{Error, Matrix, Result};

/// Kernel family for the distance weighting. Only the Gaussian kernel with
/// a fixed (non-adaptive) bandwidth is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Gaussian,
}

/// Per-sample local coefficients, intercept first: row i of `b` solves the
/// weighted least-squares problem centered at location i.
#[derive(Debug, Clone)]
pub struct GwrCoefficients {
    b: Matrix,
    bandwidth: f64,
    kernel: Kernel,
}

impl GwrCoefficients {
    /// n×(p+1) coefficient matrix, intercept in column 0.
    pub fn coefficients(&self) -> &Matrix {
        &self.b
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }
}

/// Gaussian kernel weights of every location against one anchor:
/// w_j = exp(-d(anchor, j)² / (2·bandwidth²)).
pub fn kernel_weights(locations: &[[f64; 2]], anchor: usize, bandwidth: f64) -> Vec<f64> {
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    let a = locations[anchor];
    locations
        .iter()
        .map(|&p| {
            let d = math::dist2d(a, p);
            math::exp(-(d * d) / (2.0 * bandwidth * bandwidth))
        })
        .collect()
}

/// Median of the nonzero pairwise location distances; a robust default
/// bandwidth when none is configured.
pub fn default_bandwidth(locations: &[[f64; 2]]) -> Result<f64> {
    let mut dists = Vec::new();
    for i in 0..locations.len() {
        for j in (i + 1)..locations.len() {
            let d = math::dist2d(locations[i], locations[j]);
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return Err(Error::DegenerateGeometry("all locations identical".into()));
    }
    Ok(math::median(&dists))
}

/// Weighted least squares on the design [1 | X] with sample weights `w`.
/// An optional held-out row gets weight zero (leave-one-out prediction).
///
/// Singular normal equations get one retry with a ridge of
/// 1e-8·trace/(p+1) added to the diagonal; `None` if that also fails.
fn solve_weighted(x: &Matrix, y: &[f64], w: &[f64], exclude: Option<usize>) -> Option<Vec<f64>> {
    let n = x.rows();
    let dim = x.cols() + 1;
    let mut a = vec![0.0f64; dim * dim];
    let mut rhs = vec![0.0f64; dim];
    let mut z = vec![0.0f64; dim];
    for i in 0..n {
        if exclude == Some(i) {
            continue;
        }
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        z[0] = 1.0;
        z[1..].copy_from_slice(x.row(i));
        for r in 0..dim {
            let wz = wi * z[r];
            for c in 0..dim {
                a[r * dim + c] += wz * z[c];
            }
            rhs[r] += wz * y[i];
        }
    }
    let trace: f64 = (0..dim).map(|r| a[r * dim + r]).sum();
    let mut a_try = a.clone();
    let mut rhs_try = rhs.clone();
    if let Some(beta) = math::cholesky_solve(&mut a_try, &mut rhs_try, dim) {
        return Some(beta);
    }
    let ridge = 1e-8 * trace / dim as f64;
    if !(ridge > 0.0) {
        return None;
    }
    for r in 0..dim {
        a[r * dim + r] += ridge;
    }
    math::cholesky_solve(&mut a, &mut rhs, dim)
}

/// Fit the local regression at every anchor. Deterministic: anchors are
/// processed and assembled in row order.
pub fn fit_gwr(dataset: &Dataset, bandwidth: f64) -> Result<GwrCoefficients> {
    if !(bandwidth > 0.0) {
        return Err(Error::Parameter("bandwidth must be positive".into()));
    }
    let locations = dataset.locations();
    let n = dataset.n();
    let dim = dataset.p() + 1;
    let mut b = Matrix::zeros(n, dim);
    for anchor in 0..n {
        let w = kernel_weights(&locations, anchor, bandwidth);
        let beta = solve_weighted(dataset.x(), dataset.y(), &w, None)
            .ok_or(Error::SingularFit { anchor })?;
        for (j, v) in beta.iter().enumerate() {
            b.set(anchor, j, *v);
        }
    }
    Ok(GwrCoefficients {
        b,
        bandwidth,
        kernel: Kernel::Gaussian,
    })
}

/// Pick the grid bandwidth minimizing leave-one-out prediction RMSE, each
/// anchor excluded from its own fit. Ties go to the smaller bandwidth.
pub fn select_bandwidth(dataset: &Dataset, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Parameter("empty bandwidth grid".into()));
    }
    let locations = dataset.locations();
    let n = dataset.n();
    let mut best: Option<(f64, f64)> = None; // (rmse, bandwidth)
    let mut last_singular = 0;
    for &bw in grid {
        if !(bw > 0.0) {
            return Err(Error::Parameter("bandwidth must be positive".into()));
        }
        let mut sse = 0.0;
        let mut ok = true;
        for anchor in 0..n {
            let w = kernel_weights(&locations, anchor, bw);
            let Some(beta) = solve_weighted(dataset.x(), dataset.y(), &w, Some(anchor)) else {
                ok = false;
                last_singular = anchor;
                break;
            };
            let mut pred = beta[0];
            for (j, v) in dataset.x().row(anchor).iter().enumerate() {
                pred += beta[j + 1] * v;
            }
            let err = pred - dataset.y()[anchor];
            sse += err * err;
        }
        if !ok {
            continue;
        }
        let rmse = math::sqrt(sse / n as f64);
        let better = match best {
            None => true,
            Some((best_rmse, best_bw)) => {
                rmse < best_rmse || (rmse == best_rmse && bw < best_bw)
            }
        };
        if better {
            best = Some((rmse, bw));
        }
    }
    best.map(|(_, bw)| bw).ok_or(Error::SingularFit {
        anchor: last_singular,
    })
}
