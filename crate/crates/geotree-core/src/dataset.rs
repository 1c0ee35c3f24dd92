//! Geospatial tabular datasets: standardized feature tables with two
//! locational columns, sparse spatial weights and deterministic index
//! splits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::{Error, Matrix, Result};

/// Feature table with exactly two locational columns and a numeric target.
///
/// The feature matrix may be raw or z-scored; `standardization` records the
/// per-column (mean, std) pairs once [`zscore`] has run, which also makes
/// the original coordinate values recoverable for distance computations.
/// The target is never standardized, so predictions and RMSE stay in
/// response units.
#[derive(Debug, Clone)]
pub struct Dataset {
    feature_names: Vec<String>,
    loc_idx: [usize; 2],
    x: Matrix,
    y: Vec<f64>,
    standardization: Option<Vec<(f64, f64)>>,
    ids: Vec<String>,
}

impl Dataset {
    /// Validate and assemble a dataset from parts.
    ///
    /// Checks finiteness of every cell, distinct in-range locational
    /// indices and unique row ids.
    pub fn new(
        feature_names: Vec<String>,
        loc_idx: [usize; 2],
        x: Matrix,
        y: Vec<f64>,
        ids: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = (x.rows(), x.cols());
        if feature_names.len() != p {
            return Err(Error::Parameter(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                p
            )));
        }
        if y.len() != n || ids.len() != n {
            return Err(Error::Parameter(format!(
                "row count mismatch: x={n}, y={}, ids={}",
                y.len(),
                ids.len()
            )));
        }
        if loc_idx[0] == loc_idx[1] || loc_idx[0] >= p || loc_idx[1] >= p {
            return Err(Error::Parameter(format!(
                "locational indices {loc_idx:?} must be distinct and < {p}"
            )));
        }
        if x.data().iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite value in data".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if ids[i] == ids[j] {
                    return Err(Error::Parameter(format!("duplicate id `{}`", ids[i])));
                }
            }
        }
        Ok(Self {
            feature_names,
            loc_idx,
            x,
            y,
            standardization: None,
            ids,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn loc_idx(&self) -> [usize; 2] {
        self.loc_idx
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn standardization(&self) -> Option<&[(f64, f64)]> {
        self.standardization.as_deref()
    }

    /// Locational coordinates in their original units, one `[x, y]` per row.
    ///
    /// If the table is standardized the stored (mean, std) pairs are used
    /// to invert the transform; spatial weights and GWR kernels operate on
    /// these raw coordinates, not on z-scores.
    pub fn locations(&self) -> Vec<[f64; 2]> {
        let [c0, c1] = self.loc_idx;
        let inv = |j: usize, v: f64| match &self.standardization {
            Some(s) => v * s[j].1 + s[j].0,
            None => v,
        };
        (0..self.n())
            .map(|i| [inv(c0, self.x.get(i, c0)), inv(c1, self.x.get(i, c1))])
            .collect()
    }

    /// Original (un-standardized) value of one cell.
    pub fn original_value(&self, row: usize, col: usize) -> f64 {
        let v = self.x.get(row, col);
        match &self.standardization {
            Some(s) => v * s[col].1 + s[col].0,
            None => v,
        }
    }

    /// Row subset as a new dataset (order preserved, standardization kept).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            loc_idx: self.loc_idx,
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            standardization: self.standardization.clone(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }
}

/// Z-score every feature column (population standard deviation), recording
/// the (mean, std) pairs for inverse transforms. The target is left alone.
pub fn zscore(dataset: &Dataset) -> Result<Dataset> {
    let (n, p) = (dataset.n(), dataset.p());
    let mut params = Vec::with_capacity(p);
    let mut x = dataset.x.clone();
    for j in 0..p {
        let col = dataset.x.column(j);
        let mean = math::mean(&col);
        let std = math::std_dev(&col);
        if std <= 0.0 {
            return Err(Error::DegenerateColumn(dataset.feature_names[j].clone()));
        }
        for i in 0..n {
            x.set(i, j, (dataset.x.get(i, j) - mean) / std);
        }
        params.push((mean, std));
    }
    Ok(Dataset {
        feature_names: dataset.feature_names.clone(),
        loc_idx: dataset.loc_idx,
        x,
        y: dataset.y.clone(),
        standardization: Some(params),
        ids: dataset.ids.clone(),
    })
}

/// Sparse symmetric nonnegative spatial weights with zero diagonal.
///
/// `entries` stores every ordered pair (i, j, w) with w > 0, so both
/// directions of each undirected edge are present.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    n: usize,
    entries: Vec<(u32, u32, f64)>,
    weight_sum: f64,
}

impl SpatialWeights {
    /// Build from undirected edges, storing both directions. Duplicate or
    /// diagonal edges and nonpositive weights are rejected.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries = Vec::with_capacity(edges.len() * 2);
        for &(i, j, w) in edges {
            if i == j {
                return Err(Error::Parameter("diagonal weight".into()));
            }
            if i >= n || j >= n {
                return Err(Error::Parameter("weight index out of range".into()));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Parameter("weights must be finite and positive".into()));
            }
            entries.push((i as u32, j as u32, w));
            entries.push((j as u32, i as u32, w));
        }
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::Parameter("duplicate edge".into()));
            }
        }
        let weight_sum = entries.iter().map(|e| e.2).sum::<f64>();
        if !(weight_sum > 0.0) {
            return Err(Error::Parameter("empty weight matrix".into()));
        }
        Ok(Self {
            n,
            entries,
            weight_sum,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// All ordered (i, j, w) entries, j-major within i, diagonal-free.
    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    /// Sum over all ordered entries (the `W` of the Moran prefactor).
    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }
}

/// Symmetrized binary k-nearest-neighbour weights on Euclidean distance.
///
/// w_ij = 1 iff j is among i's k nearest neighbours or vice versa.
/// Distance ties break toward the lower row index so the graph is
/// deterministic.
pub fn knn_weights(locations: &[[f64; 2]], k: usize) -> Result<SpatialWeights> {
    let n = locations.len();
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    if k >= n {
        return Err(Error::Parameter(format!("k={k} must be < n={n}")));
    }
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if j != i {
                dists.push((math::dist2d(locations[i], locations[j]), j));
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).expect("non-finite distance"));
        for &(_, j) in dists.iter().take(k) {
            edges.push(if i < j { (i, j) } else { (j, i) });
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let weighted: Vec<(usize, usize, f64)> = edges.into_iter().map(|(i, j)| (i, j, 1.0)).collect();
    SpatialWeights::from_undirected_edges(n, &weighted)
}

/// Deterministic k-fold split of `[0, n)`: returns `(train, test)` index
/// pairs whose test sets partition the range with sizes differing by at
/// most one.
pub fn kfold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 {
        return Err(Error::Parameter("folds must be >= 2".into()));
    }
    if folds > n {
        return Err(Error::Parameter(format!("folds={folds} must be <= n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut test: Vec<usize> = order[start..start + size].to_vec();
        let mut train: Vec<usize> = order[..start]
            .iter()
            .chain(order[start + size..].iter())
            .copied()
            .collect();
        test.sort_unstable();
        train.sort_unstable();
        out.push((train, test));
        start += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn toy(xdata: Vec<f64>, cols: usize, y: Vec<f64>) -> Dataset {
        let rows = y.len();
        let names = (0..cols).map(|j| format!("f{j}")).collect();
        let ids = (0..rows).map(|i| i.to_string()).collect();
        Dataset::new(names, [0, 1], Matrix::from_vec(rows, cols, xdata), y, ids).unwrap()
    }

    #[test]
    fn zscore_matches_hand_values() {
        // column [1,2,3] -> [-1.2247, 0, 1.2247] with population std
        let d = toy(
            vec![1.0, 0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0],
            3,
            vec![1.0, 2.0, 3.0],
        );
        let z = zscore(&d).unwrap();
        let c = z.x().column(0);
        assert!((c[0] + 1.224744871391589).abs() < 1e-12);
        assert!(c[1].abs() < 1e-12);
        assert!((c[2] - 1.224744871391589).abs() < 1e-12);
        // every column has |mean| < 1e-9, |std - 1| < 1e-9
        for j in 0..z.p() {
            let col = z.x().column(j);
            assert!(math::mean(&col).abs() < 1e-9);
            assert!((math::std_dev(&col) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zscore_idempotent_within_tolerance() {
        let d = toy(
            vec![1.0, 0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0],
            3,
            vec![1.0, 2.0, 3.0],
        );
        let z1 = zscore(&d).unwrap();
        let z2 = zscore(&z1).unwrap();
        for (a, b) in z1.x().data().iter().zip(z2.x().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_rejects_constant_column() {
        let d = toy(
            vec![5.0, 0.0, 5.0, 1.0, 5.0, 2.0],
            3,
            vec![1.0, 2.0],
        );
        match zscore(&d) {
            Err(Error::DegenerateColumn(name)) => assert_eq!(name, "f0"),
            other => panic!("expected DegenerateColumn, got {other:?}"),
        }
    }

    #[test]
    fn zscore_round_trip_recovers_originals() {
        let d = toy(
            vec![10.0, -3.0, 0.5, 20.0, 4.0, 1.5, 35.0, 9.0, -2.0, 41.0, 2.0, 7.0],
            3,
            vec![1.0, 2.0, 3.0, 4.0],
        );
        let z = zscore(&d).unwrap();
        for i in 0..d.n() {
            for j in 0..d.p() {
                let orig = d.x().get(i, j);
                let back = z.original_value(i, j);
                assert!(
                    (orig - back).abs() <= 1e-9 * orig.abs().max(1.0),
                    "round trip failed at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let names = vec!["a".to_string(), "b".to_string()];
        let x = Matrix::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        let r = Dataset::new(
            names,
            [0, 1],
            x,
            vec![1.0, 2.0],
            vec!["dup".to_string(), "dup".to_string()],
        );
        assert!(matches!(r, Err(Error::Parameter(_))));
    }

    #[test]
    fn knn_collinear_points() {
        // points at 0, 1, 10 on a line, k=1: edges {(0,1),(1,2)}
        let locs = [[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]];
        let w = knn_weights(&locs, 1).unwrap();
        let mut undirected: Vec<(u32, u32)> = w
            .entries()
            .iter()
            .filter(|e| e.0 < e.1)
            .map(|e| (e.0, e.1))
            .collect();
        undirected.sort_unstable();
        assert_eq!(undirected, vec![(0, 1), (1, 2)]);
        assert!(w.entries().iter().all(|e| e.2 == 1.0));
    }

    #[test]
    fn knn_is_symmetric_with_zero_diagonal() {
        let locs: Vec<[f64; 2]> = (0..20)
            .map(|i| [(i * 7 % 13) as f64, (i * 5 % 11) as f64 * 1.3])
            .collect();
        let w = knn_weights(&locs, 4).unwrap();
        for &(i, j, wij) in w.entries() {
            assert_ne!(i, j);
            let mirrored = w
                .entries()
                .iter()
                .any(|&(a, b, wab)| a == j && b == i && wab == wij);
            assert!(mirrored, "missing mirror of ({i},{j})");
        }
        // binary weights: W = 2 * undirected edge count
        let undirected = w.entries().iter().filter(|e| e.0 < e.1).count();
        assert_eq!(w.weight_sum(), 2.0 * undirected as f64);
    }

    #[test]
    fn knn_matches_brute_force_oracle() {
        // 50 pseudo-random points, k=8, compared against an independent
        // all-pairs sort
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let locs: Vec<[f64; 2]> = (0..50).map(|_| [next() * 100.0, next() * 100.0]).collect();
        let k = 8;
        let w = knn_weights(&locs, k).unwrap();

        let mut expected: Vec<(u32, u32)> = Vec::new();
        for i in 0..locs.len() {
            let mut all: Vec<(f64, usize)> = (0..locs.len())
                .filter(|&j| j != i)
                .map(|j| (math::dist2d(locs[i], locs[j]), j))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &(_, j) in all.iter().take(k) {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                expected.push((a as u32, b as u32));
            }
        }
        expected.sort_unstable();
        expected.dedup();
        let mut got: Vec<(u32, u32)> = w
            .entries()
            .iter()
            .filter(|e| e.0 < e.1)
            .map(|e| (e.0, e.1))
            .collect();
        got.sort_unstable();
        assert_eq!(got, expected);
    }

    #[test]
    fn knn_rejects_k_out_of_range() {
        let locs = [[0.0, 0.0], [1.0, 0.0]];
        assert!(matches!(knn_weights(&locs, 2), Err(Error::Parameter(_))));
        assert!(matches!(knn_weights(&locs, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn kfold_partitions_exactly() {
        let folds = kfold_indices(10, 5, 7).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = vec![false; 10];
        for (train, test) in &folds {
            assert_eq!(test.len(), 2);
            assert_eq!(train.len(), 8);
            for &t in test {
                assert!(!seen[t], "index {t} in two test sets");
                seen[t] = true;
                assert!(!train.contains(&t));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn kfold_balanced_remainder() {
        let folds = kfold_indices(7, 5, 0).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|(_, t)| t.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 2, 2]);
    }

    #[test]
    fn kfold_deterministic() {
        let a = kfold_indices(23, 4, 99).unwrap();
        let b = kfold_indices(23, 4, 99).unwrap();
        assert_eq!(a, b);
        let c = kfold_indices(23, 4, 100).unwrap();
        assert_ne!(a, c, "different seeds should shuffle differently");
    }

    #[test]
    fn kfold_rejects_bad_parameters() {
        assert!(kfold_indices(3, 5, 0).is_err());
        assert!(kfold_indices(10, 1, 0).is_err());
    }
}
