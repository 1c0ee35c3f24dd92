//! Geospatial regression trees: axis-parallel, oblique and Gaussian splits,
//! grown greedily under a combined gain that multiplies impurity reduction
//! by a residual-evenness factor (1 - |Moran's I|) and the modularity of a
//! consensus similarity network.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, SpatialWeights};
use crate::gwr::GwrCoefficients;
use crate::math;
use crate::moran;
use crate::network::{self, SimilarityNetwork};
use crate::shap;
use crate::{Error, Matrix, Result};

/// Similarity basis used by the modularity term and by post-hoc audits:
/// raw feature distances paired with raw attribution distances, or GWR
/// coefficient distances paired with per-unit (phi/x) attribution
/// distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Feature,
    Gwr,
}

/// A binary routing test. Every rule routes left on `<=`.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitRule {
    /// x[feature] <= threshold
    AxisParallel { feature: usize, threshold: f64 },
    /// w1·x + w2·y <= threshold over the two locational columns
    Oblique { w1: f64, w2: f64, threshold: f64 },
    /// dist(p, f1) + dist(p, f2) <= c: inside or on the ellipse with focal
    /// points f1, f2
    Gaussian { f1: [f64; 2], f2: [f64; 2], c: f64 },
}

impl SplitRule {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        match self {
            SplitRule::AxisParallel { feature, threshold } => {
                if *feature >= n_features {
                    return Err(Error::Parameter(format!(
                        "split feature {feature} out of range"
                    )));
                }
                if !threshold.is_finite() {
                    return Err(Error::Parameter("non-finite threshold".into()));
                }
            }
            SplitRule::Oblique { w1, w2, threshold } => {
                if !w1.is_finite() || !w2.is_finite() || !threshold.is_finite() {
                    return Err(Error::Parameter("non-finite oblique parameters".into()));
                }
                if *w1 == 0.0 && *w2 == 0.0 {
                    return Err(Error::Parameter("oblique weights both zero".into()));
                }
            }
            SplitRule::Gaussian { f1, f2, c } => {
                if f1.iter().chain(f2.iter()).any(|v| !v.is_finite()) || !c.is_finite() {
                    return Err(Error::Parameter("non-finite ellipse parameters".into()));
                }
                if *c < math::dist2d(*f1, *f2) {
                    return Err(Error::Parameter("ellipse smaller than focal distance".into()));
                }
            }
        }
        Ok(())
    }

    /// Route one feature row: `true` means left.
    #[inline]
    pub fn routes_left(&self, row: &[f64], loc_idx: [usize; 2]) -> bool {
        match self {
            SplitRule::AxisParallel { feature, threshold } => row[*feature] <= *threshold,
            SplitRule::Oblique { w1, w2, threshold } => {
                w1 * row[loc_idx[0]] + w2 * row[loc_idx[1]] <= *threshold
            }
            SplitRule::Gaussian { f1, f2, c } => {
                let p = [row[loc_idx[0]], row[loc_idx[1]]];
                math::dist2d(p, *f1) + math::dist2d(p, *f2) <= *c
            }
        }
    }
}

/// One tree node; children are indices into the node arena.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Internal {
        rule: SplitRule,
        left: usize,
        right: usize,
    },
    Leaf {
        prediction: f64,
        count: usize,
    },
}

/// Configuration echo carried by a trained tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSettings {
    pub msl: usize,
    pub md: usize,
    pub variant: Variant,
    pub seed: u64,
}

/// A trained geospatial regression tree. Node 0 is the root; leaves store
/// the mean target of the training rows routed to them.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoTree {
    nodes: Vec<Node>,
    n_features: usize,
    loc_idx: [usize; 2],
    settings: TreeSettings,
}

impl GeoTree {
    /// Assemble a tree from parts, validating structure: children in
    /// range, no node reachable twice, every rule well formed.
    pub fn from_parts(
        nodes: Vec<Node>,
        n_features: usize,
        loc_idx: [usize; 2],
        settings: TreeSettings,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Parameter("tree has no nodes".into()));
        }
        if loc_idx[0] == loc_idx[1] || loc_idx[0] >= n_features || loc_idx[1] >= n_features {
            return Err(Error::Parameter("invalid locational indices".into()));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= nodes.len() {
                return Err(Error::Parameter(format!("child index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::Parameter(format!("node {i} reachable twice")));
            }
            seen[i] = true;
            if let Node::Internal { rule, left, right } = &nodes[i] {
                rule.validate(n_features)?;
                stack.push(*left);
                stack.push(*right);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Parameter("unreachable node in arena".into()));
        }
        Ok(Self {
            nodes,
            n_features,
            loc_idx,
            settings,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn loc_idx(&self) -> [usize; 2] {
        self.loc_idx
    }

    pub fn settings(&self) -> &TreeSettings {
        &self.settings
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Maximum root-to-leaf edge count.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Index of the leaf a row is routed to.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Internal { rule, left, right } => {
                    i = if rule.routes_left(row, self.loc_idx) {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                got: row.len(),
            });
        }
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { prediction, .. } => Ok(*prediction),
            Node::Internal { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn predict(&self, rows: &Matrix) -> Result<Vec<f64>> {
        if rows.cols() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                got: rows.cols(),
            });
        }
        Ok(rows
            .iter_rows()
            .map(|r| match &self.nodes[self.leaf_index(r)] {
                Node::Leaf { prediction, .. } => *prediction,
                Node::Internal { .. } => unreachable!(),
            })
            .collect())
    }

    /// Prediction for a composite row whose feature j comes from
    /// `foreground` when bit j of `mask` is set, else from `background`.
    /// Used by the interventional Shapley enumeration; avoids
    /// materializing the composite row.
    pub(crate) fn predict_masked(&self, foreground: &[f64], background: &[f64], mask: u32) -> f64 {
        let pick = |j: usize| {
            if mask & (1u32 << j) != 0 {
                foreground[j]
            } else {
                background[j]
            }
        };
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { prediction, .. } => return *prediction,
                Node::Internal { rule, left, right } => {
                    let goes_left = match rule {
                        SplitRule::AxisParallel { feature, threshold } => {
                            pick(*feature) <= *threshold
                        }
                        SplitRule::Oblique { w1, w2, threshold } => {
                            w1 * pick(self.loc_idx[0]) + w2 * pick(self.loc_idx[1]) <= *threshold
                        }
                        SplitRule::Gaussian { f1, f2, c } => {
                            let p = [pick(self.loc_idx[0]), pick(self.loc_idx[1])];
                            math::dist2d(p, *f1) + math::dist2d(p, *f2) <= *c
                        }
                    };
                    i = if goes_left { *left } else { *right };
                }
            }
        }
    }

    /// Clone with `node` (a leaf) replaced by an internal node carrying
    /// `rule` and two fresh mean-prediction leaves.
    fn with_split(
        &self,
        node: usize,
        rule: SplitRule,
        left: (f64, usize),
        right: (f64, usize),
    ) -> GeoTree {
        let mut nodes = self.nodes.clone();
        let left_id = nodes.len();
        nodes.push(Node::Leaf {
            prediction: left.0,
            count: left.1,
        });
        let right_id = nodes.len();
        nodes.push(Node::Leaf {
            prediction: right.0,
            count: right.1,
        });
        nodes[node] = Node::Internal {
            rule,
            left: left_id,
            right: right_id,
        };
        GeoTree {
            nodes,
            n_features: self.n_features,
            loc_idx: self.loc_idx,
            settings: self.settings.clone(),
        }
    }
}

/// Which split families a model may draw candidates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitKinds {
    pub axis: bool,
    pub oblique: bool,
    pub gaussian: bool,
}

impl SplitKinds {
    pub fn axis_only() -> Self {
        Self {
            axis: true,
            oblique: false,
            gaussian: false,
        }
    }

    pub fn all() -> Self {
        Self {
            axis: true,
            oblique: true,
            gaussian: true,
        }
    }
}

/// Growth parameters. `shortlist_k` bounds how many candidates per node
/// get the full gain evaluation (the rest are ranked by impurity reduction
/// only); `usize::MAX` evaluates every candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowConfig {
    pub msl: usize,
    pub md: usize,
    pub kinds: SplitKinds,
    pub variant: Variant,
    pub seed: u64,
    pub use_moran: bool,
    pub use_modularity: bool,
    pub shortlist_k: usize,
    pub n_oblique: usize,
    pub n_gauss: usize,
    pub max_axis_cuts: usize,
    pub max_proj_cuts: usize,
    pub gamma: f64,
    pub sparsify_k: usize,
    pub eval_sample_size: usize,
    pub background_size: usize,
    pub epsilon: f64,
}

impl GrowConfig {
    pub fn new(msl: usize, md: usize, seed: u64) -> Self {
        Self {
            msl,
            md,
            kinds: SplitKinds::all(),
            variant: Variant::Feature,
            seed,
            use_moran: true,
            use_modularity: true,
            shortlist_k: 8,
            n_oblique: 8,
            n_gauss: 8,
            max_axis_cuts: 64,
            max_proj_cuts: 16,
            gamma: 1.0,
            sparsify_k: 10,
            eval_sample_size: 256,
            background_size: 256,
            epsilon: 0.01,
        }
    }
}

/// The per-split score decomposition. `combined` is
/// max(0, 1 - |moran_i|) × modularity_q × mse_gain, with a factor of 1
/// substituted for any term that is disabled or undefined (zero-variance
/// residuals), and 0 substituted when the consensus network degenerated.
#[derive(Debug, Clone, PartialEq)]
pub struct GainBreakdown {
    pub mse_gain: f64,
    pub moran_i: Option<f64>,
    pub modularity_q: Option<f64>,
    pub combined: f64,
    pub degenerate_network: bool,
}

/// Immutable inputs shared by every gain evaluation of one training run:
/// spatial weights for the Moran term, the deterministic evaluation and
/// background subsamples, and the fixed basis-space similarity network.
pub struct GainContext<'a> {
    weights: Option<&'a SpatialWeights>,
    eval_rows: Vec<usize>,
    eval_features: Matrix,
    background: Matrix,
    basis_network: Option<SimilarityNetwork>,
    use_moran: bool,
    use_modularity: bool,
    variant: Variant,
    gamma: f64,
    sparsify_k: usize,
    epsilon: f64,
    net_seed: u64,
}

fn sample_sorted(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    let mut idx = index_sample(rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}

impl<'a> GainContext<'a> {
    /// Prepare the context for one training run. `weights` is required
    /// when the Moran term is active, `gwr` when the modularity term runs
    /// in the GWR variant. The basis network is `None` when the basis
    /// geometry is degenerate (every candidate then falls back to
    /// impurity ranking).
    pub fn prepare(
        dataset: &Dataset,
        weights: Option<&'a SpatialWeights>,
        gwr: Option<&GwrCoefficients>,
        config: &GrowConfig,
    ) -> Result<GainContext<'a>> {
        if config.use_moran {
            let w = weights.ok_or_else(|| {
                Error::Parameter("spatial weights required for the Moran term".into())
            })?;
            if w.n() != dataset.n() {
                return Err(Error::Shape {
                    expected: dataset.n(),
                    got: w.n(),
                });
            }
        }
        let (eval_rows, eval_features, background, basis_network) = if config.use_modularity {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xE7A1_5EED);
            let eval_rows = sample_sorted(
                dataset.n(),
                config.eval_sample_size.min(dataset.n()).max(1),
                &mut rng,
            );
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xBAC6_0D15);
            let bg_rows = sample_sorted(
                dataset.n(),
                config.background_size.min(dataset.n()).max(1),
                &mut rng,
            );
            let eval_features = dataset.x().select_rows(&eval_rows);
            let background = dataset.x().select_rows(&bg_rows);
            let basis = match config.variant {
                Variant::Feature => eval_features.clone(),
                Variant::Gwr => {
                    let g = gwr.ok_or_else(|| {
                        Error::Parameter("GWR coefficients required for variant=gwr".into())
                    })?;
                    if g.coefficients().rows() != dataset.n() {
                        return Err(Error::Shape {
                            expected: dataset.n(),
                            got: g.coefficients().rows(),
                        });
                    }
                    g.coefficients().select_rows(&eval_rows)
                }
            };
            let basis_network =
                match network::distance_to_similarity(&network::pairwise_distances(&basis)) {
                    Ok(net) => Some(net),
                    Err(Error::DegenerateGeometry(_)) => None,
                    Err(e) => return Err(e),
                };
            (eval_rows, eval_features, background, basis_network)
        } else {
            (Vec::new(), Matrix::zeros(0, 0), Matrix::zeros(0, 0), None)
        };
        Ok(GainContext {
            weights,
            eval_rows,
            eval_features,
            background,
            basis_network,
            use_moran: config.use_moran,
            use_modularity: config.use_modularity,
            variant: config.variant,
            gamma: config.gamma,
            sparsify_k: config.sparsify_k,
            epsilon: config.epsilon,
            net_seed: config.seed ^ 0x10_0D5EED,
        })
    }

    /// Context for impurity-only training (both auxiliary terms off).
    pub fn impurity_only() -> GainContext<'static> {
        GainContext {
            weights: None,
            eval_rows: Vec::new(),
            eval_features: Matrix::zeros(0, 0),
            background: Matrix::zeros(0, 0),
            basis_network: None,
            use_moran: false,
            use_modularity: false,
            variant: Variant::Feature,
            gamma: 1.0,
            sparsify_k: 10,
            epsilon: 0.01,
            net_seed: 0,
        }
    }

    pub fn eval_rows(&self) -> &[usize] {
        &self.eval_rows
    }

    pub fn background(&self) -> &Matrix {
        &self.background
    }
}

/// Thresholds at midpoints between consecutive sorted unique values,
/// subsampled to at most `max_cuts` quantile positions.
fn axis_cut_points(values: &mut Vec<f64>, max_cuts: usize) -> Vec<f64> {
    values.sort_by(|a, b| a.partial_cmp(b).expect("non-finite feature"));
    values.dedup();
    if values.len() < 2 {
        return Vec::new();
    }
    let mids: Vec<f64> = values
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    subsample_quantiles(&mids, max_cuts)
}

/// Keep at most `max` entries of a sorted list, chosen at evenly spaced
/// quantile ranks.
fn subsample_quantiles(sorted: &[f64], max: usize) -> Vec<f64> {
    if sorted.len() <= max {
        return sorted.to_vec();
    }
    let mut out = Vec::with_capacity(max);
    for j in 0..max {
        let rank = (j + 1) as f64 / (max + 1) as f64;
        let idx = (rank * (sorted.len() - 1) as f64 + 0.5) as usize;
        out.push(sorted[idx.min(sorted.len() - 1)]);
    }
    out.dedup();
    out
}

/// Pick two distinct node rows with distinct locations; `None` when the
/// node has no location diversity left to offer.
fn pick_location_pair(
    x: &Matrix,
    rows: &[usize],
    loc_idx: [usize; 2],
    rng: &mut ChaCha8Rng,
) -> Option<([f64; 2], [f64; 2])> {
    for _ in 0..16 {
        let a = rows[rng.gen_range(0..rows.len())];
        let b = rows[rng.gen_range(0..rows.len())];
        let pa = [x.get(a, loc_idx[0]), x.get(a, loc_idx[1])];
        let pb = [x.get(b, loc_idx[0]), x.get(b, loc_idx[1])];
        if a != b && (pa[0] != pb[0] || pa[1] != pb[1]) {
            return Some((pa, pb));
        }
    }
    None
}

/// Enumerate feasible split candidates for the rows of one node.
///
/// Axis-parallel candidates cover every feature; oblique and Gaussian
/// candidates are drawn from seeded random pairs of node locations, with
/// thresholds at projection (resp. focal-distance-sum) quantiles. Only
/// candidates leaving at least `msl` rows on both sides survive, so an
/// empty result is a valid outcome and the node becomes a leaf.
pub fn enumerate_candidates(
    dataset: &Dataset,
    rows: &[usize],
    config: &GrowConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<SplitRule> {
    let x = dataset.x();
    let loc = dataset.loc_idx();
    let mut raw: Vec<SplitRule> = Vec::new();

    if config.kinds.axis {
        for feature in 0..dataset.p() {
            let mut vals: Vec<f64> = rows.iter().map(|&r| x.get(r, feature)).collect();
            for threshold in axis_cut_points(&mut vals, config.max_axis_cuts) {
                raw.push(SplitRule::AxisParallel { feature, threshold });
            }
        }
    }

    if config.kinds.oblique {
        for _ in 0..config.n_oblique {
            let Some((pa, pb)) = pick_location_pair(x, rows, loc, rng) else {
                break;
            };
            let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
            let norm = math::sqrt(dx * dx + dy * dy);
            let (w1, w2) = (dx / norm, dy / norm);
            let mut projections: Vec<f64> = rows
                .iter()
                .map(|&r| w1 * x.get(r, loc[0]) + w2 * x.get(r, loc[1]))
                .collect();
            projections.sort_by(|a, b| a.partial_cmp(b).unwrap());
            projections.dedup();
            for threshold in subsample_quantiles(&projections, config.max_proj_cuts) {
                raw.push(SplitRule::Oblique { w1, w2, threshold });
            }
        }
    }

    if config.kinds.gaussian {
        for _ in 0..config.n_gauss {
            let Some((f1, f2)) = pick_location_pair(x, rows, loc, rng) else {
                break;
            };
            let mut sums: Vec<f64> = rows
                .iter()
                .map(|&r| {
                    let p = [x.get(r, loc[0]), x.get(r, loc[1])];
                    math::dist2d(p, f1) + math::dist2d(p, f2)
                })
                .collect();
            sums.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sums.dedup();
            for c in subsample_quantiles(&sums, config.max_proj_cuts) {
                raw.push(SplitRule::Gaussian { f1, f2, c });
            }
        }
    }

    raw.retain(|rule| {
        let left = rows
            .iter()
            .filter(|&&r| rule.routes_left(x.row(r), loc))
            .count();
        left >= config.msl && rows.len() - left >= config.msl
    });
    raw
}

/// Impurity reduction of applying `rule` at leaf `node`, in the
/// whole-training-set form: total MSE before the split minus total MSE
/// after, which equals the node's local sum-of-squares decrease divided
/// by n. Nonnegative for mean-fit leaves.
pub fn mse_gain(
    tree: &GeoTree,
    node: usize,
    rule: &SplitRule,
    dataset: &Dataset,
) -> Result<f64> {
    let rows = rows_at_node(tree, node, dataset)?;
    let (left_y, right_y) = partition_targets(dataset, &rows, rule);
    if left_y.is_empty() || right_y.is_empty() {
        return Ok(0.0);
    }
    Ok(split_gain_from_targets(
        &left_y,
        &right_y,
        dataset.n(),
    ))
}

fn split_gain_from_targets(left_y: &[f64], right_y: &[f64], n_total: usize) -> f64 {
    let mut all = Vec::with_capacity(left_y.len() + right_y.len());
    all.extend_from_slice(left_y);
    all.extend_from_slice(right_y);
    let before = math::sse_about_mean(&all);
    let after = math::sse_about_mean(left_y) + math::sse_about_mean(right_y);
    ((before - after) / n_total as f64).max(0.0)
}

fn rows_at_node(tree: &GeoTree, node: usize, dataset: &Dataset) -> Result<Vec<usize>> {
    if node >= tree.nodes().len() {
        return Err(Error::Parameter(format!("node {node} out of range")));
    }
    if !matches!(tree.nodes()[node], Node::Leaf { .. }) {
        return Err(Error::Parameter(format!("node {node} is not a leaf")));
    }
    if dataset.p() != tree.n_features() {
        return Err(Error::Shape {
            expected: tree.n_features(),
            got: dataset.p(),
        });
    }
    Ok((0..dataset.n())
        .filter(|&i| tree.leaf_index(dataset.x().row(i)) == node)
        .collect())
}

fn partition_targets(
    dataset: &Dataset,
    rows: &[usize],
    rule: &SplitRule,
) -> (Vec<f64>, Vec<f64>) {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &r in rows {
        if rule.routes_left(dataset.x().row(r), dataset.loc_idx()) {
            left.push(dataset.y()[r]);
        } else {
            right.push(dataset.y()[r]);
        }
    }
    (left, right)
}

/// Evaluate the full gain breakdown of splitting leaf `node` with `rule`:
/// the tentative sub-model (split applied, child means fit) is scored for
/// residual Moran's I over the whole training set and for the modularity
/// of the consensus between the basis network and the attribution network
/// of the tentative sub-model on the evaluation subsample.
pub fn evaluate_gain(
    tree: &GeoTree,
    node: usize,
    rule: &SplitRule,
    dataset: &Dataset,
    ctx: &GainContext<'_>,
) -> Result<GainBreakdown> {
    let rows = rows_at_node(tree, node, dataset)?;
    let mut left_y = Vec::new();
    let mut right_y = Vec::new();
    for &r in &rows {
        if rule.routes_left(dataset.x().row(r), dataset.loc_idx()) {
            left_y.push(dataset.y()[r]);
        } else {
            right_y.push(dataset.y()[r]);
        }
    }
    if left_y.is_empty() || right_y.is_empty() {
        return Err(Error::Parameter("rule routes every row to one side".into()));
    }
    let gain = split_gain_from_targets(&left_y, &right_y, dataset.n());
    let tentative = tree.with_split(
        node,
        rule.clone(),
        (math::mean(&left_y), left_y.len()),
        (math::mean(&right_y), right_y.len()),
    );

    let mut moran_i = None;
    let mut moran_factor = 1.0;
    if ctx.use_moran {
        let weights = ctx.weights.expect("checked in prepare");
        match moran::residual_morans_i(&tentative, dataset, weights) {
            Ok(i) => {
                moran_factor = (1.0 - i.abs()).max(0.0);
                moran_i = Some(i);
            }
            // perfect-fit sub-model: nothing left to penalize
            Err(Error::ZeroVariance) => moran_factor = 1.0,
            Err(e) => return Err(e),
        }
    }

    let mut modularity_q = None;
    let mut q_factor = 1.0;
    let mut degenerate = false;
    if ctx.use_modularity {
        match attribution_modularity(&tentative, dataset, ctx)? {
            Some(q) => {
                modularity_q = Some(q);
                q_factor = q;
            }
            None => {
                degenerate = true;
                q_factor = 0.0;
            }
        }
    }

    Ok(GainBreakdown {
        mse_gain: gain,
        moran_i,
        modularity_q,
        combined: moran_factor * q_factor * gain,
        degenerate_network: degenerate,
    })
}

/// Modularity of the consensus between the basis network and the
/// attribution network of `model` on the evaluation subsample; `None`
/// when the geometry degenerates anywhere along the chain.
fn attribution_modularity(
    model: &GeoTree,
    dataset: &Dataset,
    ctx: &GainContext<'_>,
) -> Result<Option<f64>> {
    let Some(basis) = &ctx.basis_network else {
        return Ok(None);
    };
    let foreground = dataset.x().select_rows(&ctx.eval_rows);
    let attr = shap::shap_values(model, &foreground, &ctx.background)?;
    let points = match ctx.variant {
        Variant::Feature => attr.phi().clone(),
        Variant::Gwr => shap::normalize_attributions(&attr, &ctx.eval_features, ctx.epsilon)?,
    };
    let distances = network::pairwise_distances(&points);
    let attr_net = match network::distance_to_similarity(&distances) {
        Ok(net) => net,
        Err(Error::DegenerateGeometry(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let consensus = match network::consensus(basis, &attr_net, ctx.sparsify_k) {
        Ok(net) => net,
        Err(Error::DegenerateGeometry(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    match network::maximize_modularity(&consensus, ctx.gamma, ctx.net_seed) {
        Ok(partition) => Ok(Some(partition.q())),
        Err(Error::DegenerateGeometry(_)) => Ok(None),
        Err(e) => return Err(e),
    }
}

/// Grow a tree by recursive binary splitting in breadth-first node order.
///
/// At each expandable node all candidates are ranked by impurity gain,
/// the top `shortlist_k` get the full combined-gain evaluation, and the
/// best positive combined gain wins (ties break toward the better
/// impurity rank, then enumeration order). When every shortlisted
/// candidate lost its network to degeneracy the choice falls back to the
/// impurity ranking so training never stalls on a pathological geometry.
pub fn grow_tree(
    dataset: &Dataset,
    ctx: &GainContext<'_>,
    config: &GrowConfig,
) -> Result<GeoTree> {
    if config.msl == 0 {
        return Err(Error::Parameter("msl must be >= 1".into()));
    }
    if dataset.n() < 2 * config.msl {
        return Err(Error::Parameter(format!(
            "need at least 2*msl={} rows, got {}",
            2 * config.msl,
            dataset.n()
        )));
    }
    let settings = TreeSettings {
        msl: config.msl,
        md: config.md,
        variant: config.variant,
        seed: config.seed,
    };
    let mut tree = GeoTree {
        nodes: vec![Node::Leaf {
            prediction: math::mean(dataset.y()),
            count: dataset.n(),
        }],
        n_features: dataset.p(),
        loc_idx: dataset.loc_idx(),
        settings,
    };

    // (node id, rows, depth) in breadth-first creation order
    let mut queue: Vec<(usize, Vec<usize>, usize)> =
        vec![(0, (0..dataset.n()).collect(), 0)];
    let mut head = 0;
    while head < queue.len() {
        let (node, rows, depth) = core::mem::take(&mut queue[head]);
        head += 1;
        if depth >= config.md || rows.len() < 2 * config.msl {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_add((node as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let candidates = enumerate_candidates(dataset, &rows, config, &mut rng);
        if candidates.is_empty() {
            continue;
        }

        // cheap impurity ranking over every candidate
        let mut ranked: Vec<(usize, f64)> = candidates
            .iter()
            .enumerate()
            .map(|(idx, rule)| {
                let (l, r) = partition_targets_rows(dataset, &rows, rule);
                (idx, split_gain_from_targets(&l, &r, dataset.n()))
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite gains")
                .then(a.0.cmp(&b.0))
        });

        let shortlist = &ranked[..ranked.len().min(config.shortlist_k.max(1))];
        let mut evaluated: Vec<(usize, GainBreakdown)> = Vec::with_capacity(shortlist.len());
        for &(idx, gain) in shortlist {
            if gain <= 0.0 {
                // zero impurity gain zeroes the product; skip the heavy terms
                evaluated.push((
                    idx,
                    GainBreakdown {
                        mse_gain: gain,
                        moran_i: None,
                        modularity_q: None,
                        combined: 0.0,
                        degenerate_network: false,
                    },
                ));
                continue;
            }
            let breakdown = evaluate_gain(&tree, node, &candidates[idx], dataset, ctx)?;
            evaluated.push((idx, breakdown));
        }

        let all_degenerate = ctx.use_modularity
            && !evaluated.is_empty()
            && evaluated
                .iter()
                .all(|(_, b)| b.degenerate_network || b.mse_gain <= 0.0);
        let chosen: Option<usize> = if all_degenerate {
            // fall back to the impurity ranking; the Moran factor still applies
            evaluated
                .iter()
                .position(|(_, b)| {
                    let moran_factor = b
                        .moran_i
                        .map_or(1.0, |i| (1.0 - i.abs()).max(0.0));
                    moran_factor * b.mse_gain > 0.0
                })
        } else {
            let mut best: Option<(usize, f64)> = None;
            for (pos, (_, b)) in evaluated.iter().enumerate() {
                let better = match best {
                    None => b.combined > 0.0,
                    Some((_, best_gain)) => b.combined > best_gain,
                };
                if better {
                    best = Some((pos, b.combined));
                }
            }
            best.map(|(pos, _)| pos)
        };

        let Some(pos) = chosen else {
            continue;
        };
        let idx = evaluated[pos].0;
        let rule = candidates[idx].clone();
        let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
        for &r in &rows {
            if rule.routes_left(dataset.x().row(r), dataset.loc_idx()) {
                left_rows.push(r);
            } else {
                right_rows.push(r);
            }
        }
        let left_mean = math::mean(&gather(dataset.y(), &left_rows));
        let right_mean = math::mean(&gather(dataset.y(), &right_rows));
        let left_id = tree.nodes.len();
        tree.nodes.push(Node::Leaf {
            prediction: left_mean,
            count: left_rows.len(),
        });
        let right_id = tree.nodes.len();
        tree.nodes.push(Node::Leaf {
            prediction: right_mean,
            count: right_rows.len(),
        });
        tree.nodes[node] = Node::Internal {
            rule,
            left: left_id,
            right: right_id,
        };
        queue.push((left_id, left_rows, depth + 1));
        queue.push((right_id, right_rows, depth + 1));
    }
    Ok(tree)
}

fn partition_targets_rows(
    dataset: &Dataset,
    rows: &[usize],
    rule: &SplitRule,
) -> (Vec<f64>, Vec<f64>) {
    partition_targets(dataset, rows, rule)
}

fn gather(values: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&r| values[r]).collect()
}
