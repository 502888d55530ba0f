//! CART regression trees and a bootstrap random forest.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Estimator, Model};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Fraction(f64),
}

impl MaxFeatures {
    pub fn count(&self, d: usize) -> usize {
        let m = match *self {
            MaxFeatures::All => d,
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::Fraction(f) => (f * d as f64).floor() as usize,
        };
        m.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or cannot be split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            seed: 42,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(Error::InvalidArgument("min_samples_split must be >= 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidArgument("min_samples_leaf must be >= 1".into()));
        }
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!("max_features fraction {f} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Weighted SSE reduction divided by the tree's total sample weight.
        impurity_decrease: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_features: usize,
    importance: Vec<f64>,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Unnormalized per-feature impurity decrease summed over splits. When
    /// several features tie exactly for the best split, the decrease is
    /// shared equally among them.
    pub fn raw_importance(&self) -> &[f64] {
        &self.importance
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.walk(|f| row[f])
    }

    fn walk(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if value(feature) <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        check_width(x, self.n_features)?;
        Ok(x.rows().into_iter().map(|r| self.walk(|f| r[f])).collect())
    }
}

fn check_width(x: &Array2<f64>, d: usize) -> Result<()> {
    if x.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.ncols(),
        });
    }
    Ok(())
}

fn check_training(x: &Array2<f64>, y: &Array1<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyDataset);
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("tree training data"));
    }
    Ok(())
}

/// Row indices sorted by each feature's value, ties by row index.
fn presort(x: &Array2<f64>) -> Vec<Vec<usize>> {
    (0..x.ncols())
        .map(|f| {
            let mut idx: Vec<usize> = (0..x.nrows()).collect();
            idx.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

pub fn tree_fit(x: &Array2<f64>, y: &Array1<f64>, params: &TreeParams) -> Result<RegressionTree> {
    check_training(x, y)?;
    params.validate()?;
    let weights = vec![1.0; x.nrows()];
    Ok(grow(x, y, &weights, &presort(x), params, &mut rng::seeded(params.seed)))
}

struct Candidate {
    proxy: f64,
    feature: usize,
    threshold: f64,
    tied: Vec<usize>,
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    y: &'a Array1<f64>,
    w: &'a [f64],
    orders: Vec<Vec<usize>>,
    params: &'a TreeParams,
    goes_left: Vec<bool>,
    buf: Vec<usize>,
}

impl Builder<'_> {
    fn best_split(&self, start: usize, end: usize, features: &[usize], best: &mut Option<Candidate>) {
        let min_leaf = self.params.min_samples_leaf;
        let count = end - start;
        for &f in features {
            let order = &self.orders[f][start..end];
            let (mut wl, mut sl) = (0.0, 0.0);
            let (wt, st): (f64, f64) = order
                .iter()
                .fold((0.0, 0.0), |(a, b), &r| (a + self.w[r], b + self.w[r] * self.y[r]));
            for p in 0..count - 1 {
                let r = order[p];
                wl += self.w[r];
                sl += self.w[r] * self.y[r];
                let (a, b) = (self.x[[r, f]], self.x[[order[p + 1], f]]);
                if a >= b || p + 1 < min_leaf || count - p - 1 < min_leaf {
                    continue;
                }
                let (wr, sr) = (wt - wl, st - sl);
                let proxy = sl * sl / wl + sr * sr / wr;
                match best {
                    Some(c) if proxy < c.proxy => {}
                    Some(c) if proxy == c.proxy => {
                        if !c.tied.contains(&f) {
                            c.tied.push(f);
                        }
                    }
                    _ => {
                        let mut t = a + (b - a) / 2.0;
                        if t >= b {
                            t = a;
                        }
                        *best = Some(Candidate {
                            proxy,
                            feature: f,
                            threshold: t,
                            tied: vec![f],
                        });
                    }
                }
            }
        }
    }

    fn partition(&mut self, start: usize, end: usize, feature: usize, threshold: f64) -> usize {
        for &r in &self.orders[feature][start..end] {
            self.goes_left[r] = self.x[[r, feature]] <= threshold;
        }
        let mut n_left = 0;
        for order in self.orders.iter_mut() {
            self.buf.clear();
            let seg = &mut order[start..end];
            let mut k = 0;
            for i in 0..seg.len() {
                let r = seg[i];
                if self.goes_left[r] {
                    seg[k] = r;
                    k += 1;
                } else {
                    self.buf.push(r);
                }
            }
            seg[k..].copy_from_slice(&self.buf);
            n_left = k;
        }
        start + n_left
    }
}

/// Grows one tree on the rows with positive weight. `orders` is a full
/// presort; rows with zero weight are filtered out here.
fn grow(
    x: &Array2<f64>,
    y: &Array1<f64>,
    w: &[f64],
    orders: &[Vec<usize>],
    params: &TreeParams,
    rng: &mut rng::Rng,
) -> RegressionTree {
    let d = x.ncols();
    let orders: Vec<Vec<usize>> = orders
        .iter()
        .map(|o| o.iter().copied().filter(|&r| w[r] > 0.0).collect())
        .collect();
    let n = orders[0].len();
    let total_w: f64 = orders[0].iter().map(|&r| w[r]).sum();
    let mut b = Builder {
        x,
        y,
        w,
        orders,
        params,
        goes_left: vec![false; x.nrows()],
        buf: Vec::with_capacity(n),
    };
    let m = params.max_features.count(d);
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0, weight: 0.0 }];
    let mut importance = vec![0.0; d];
    let mut stack = vec![(0usize, 0usize, n, 0usize)];
    while let Some((slot, start, end, depth)) = stack.pop() {
        let rows = &b.orders[0][start..end];
        let (mut wt, mut st, mut ymin, mut ymax) = (0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY);
        for &r in rows {
            wt += w[r];
            st += w[r] * y[r];
            ymin = ymin.min(y[r]);
            ymax = ymax.max(y[r]);
        }
        let count = end - start;
        let leaf = Node::Leaf {
            value: st / wt,
            weight: wt,
        };
        let stop = ymin == ymax
            || count < params.min_samples_split
            || count < 2 * params.min_samples_leaf
            || params.max_depth.is_some_and(|md| depth >= md);
        if stop {
            nodes[slot] = leaf;
            continue;
        }
        let mut best = None;
        if m < d {
            let mut drawn: Vec<usize> = index::sample(rng, d, m).into_vec();
            drawn.sort_unstable();
            b.best_split(start, end, &drawn, &mut best);
            if best.is_none() {
                let rest: Vec<usize> = (0..d).filter(|f| !drawn.contains(f)).collect();
                b.best_split(start, end, &rest, &mut best);
            }
        } else {
            let all: Vec<usize> = (0..d).collect();
            b.best_split(start, end, &all, &mut best);
        }
        let Some(c) = best else {
            nodes[slot] = leaf;
            continue;
        };
        let decrease = ((c.proxy - st * st / wt) / total_w).max(0.0);
        let share = decrease / c.tied.len() as f64;
        for &f in &c.tied {
            importance[f] += share;
        }
        let mid = b.partition(start, end, c.feature, c.threshold);
        let (left, right) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { value: 0.0, weight: 0.0 });
        nodes.push(Node::Leaf { value: 0.0, weight: 0.0 });
        nodes[slot] = Node::Split {
            feature: c.feature,
            threshold: c.threshold,
            left,
            right,
            impurity_decrease: decrease,
        };
        stack.push((right, mid, end, depth + 1));
        stack.push((left, start, mid, depth + 1));
    }
    RegressionTree {
        nodes,
        n_features: d,
        importance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub bootstrap: bool,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 100,
            bootstrap: true,
            tree: TreeParams::default(),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
    tree_seeds: Vec<u64>,
}

impl RandomForest {
    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn tree_seeds(&self) -> &[u64] {
        &self.tree_seeds
    }

    pub fn n_estimators(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        forest_predict(self, x)
    }
}

/// Trees are fitted in parallel; tree `t` uses `derive_seed(seed, t)` for
/// both its bootstrap draw and its feature subsampling.
pub fn forest_fit(x: &Array2<f64>, y: &Array1<f64>, params: &ForestParams) -> Result<RandomForest> {
    check_training(x, y)?;
    params.tree.validate()?;
    if params.n_estimators == 0 {
        return Err(Error::InvalidArgument("n_estimators must be >= 1".into()));
    }
    let n = x.nrows();
    let orders = presort(x);
    let tree_seeds: Vec<u64> = (0..params.n_estimators)
        .map(|t| rng::derive_seed(params.seed, t as u64))
        .collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut r = rng::seeded(s);
            let mut w = vec![0.0; n];
            if params.bootstrap {
                for _ in 0..n {
                    w[r.random_range(0..n)] += 1.0;
                }
            } else {
                w.fill(1.0);
            }
            grow(x, y, &w, &orders, &params.tree, &mut r)
        })
        .collect();
    Ok(RandomForest { trees, tree_seeds })
}

pub fn forest_predict(forest: &RandomForest, x: &Array2<f64>) -> Result<Array1<f64>> {
    let mut acc = Array1::zeros(x.nrows());
    for t in &forest.trees {
        acc += &t.predict(x)?;
    }
    Ok(acc / forest.trees.len() as f64)
}

/// Per-feature impurity decrease averaged over trees and normalized to sum
/// to one. A forest without any split reports all zeros.
pub fn impurity_importance(forest: &RandomForest) -> Vec<f64> {
    let d = forest.trees[0].n_features;
    let mut imp = vec![0.0; d];
    for t in &forest.trees {
        for (a, v) in imp.iter_mut().zip(&t.importance) {
            *a += v;
        }
    }
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        imp.iter_mut().for_each(|v| *v /= total);
    }
    imp
}

impl Model for RegressionTree {
    fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        RegressionTree::predict(self, x)
    }
}

impl Model for RandomForest {
    fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        forest_predict(self, x)
    }
}

impl Estimator for TreeParams {
    type Model = RegressionTree;

    fn fit(&self, x: &Array2<f64>, y: &Array1<f64>) -> Result<RegressionTree> {
        tree_fit(x, y, self)
    }
}

impl Estimator for ForestParams {
    type Model = RandomForest;

    fn fit(&self, x: &Array2<f64>, y: &Array1<f64>) -> Result<RandomForest> {
        forest_fit(x, y, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_target_is_one_leaf() {
        let x = array![[1.0], [2.0], [3.0]];
        let t = tree_fit(&x, &array![4.0, 4.0, 4.0], &TreeParams::default()).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&array![[10.0]]).unwrap()[0], 4.0);
    }

    #[test]
    fn step_split_at_depth_one() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let p = TreeParams {
            max_depth: Some(1),
            ..TreeParams::default()
        };
        let t = tree_fit(&x, &array![0.0, 0.0, 1.0, 1.0], &p).unwrap();
        match t.nodes()[0] {
            Node::Split { threshold, .. } => assert!((2.0..3.0).contains(&threshold)),
            _ => panic!("expected a split"),
        }
        assert_eq!(t.predict(&x).unwrap().to_vec(), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn unlimited_depth_interpolates() {
        let x = array![[0.3, 1.0], [0.1, 5.0], [0.9, 2.0], [0.5, 0.0], [0.7, 7.0]];
        let y = array![3.0, -1.0, 2.5, 0.0, 8.0];
        let t = tree_fit(&x, &y, &TreeParams::default()).unwrap();
        assert_eq!(t.predict(&x).unwrap(), y);
    }

    #[test]
    fn min_samples_leaf_is_respected() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let y = Array1::from_shape_fn(20, |i| (i * i % 7) as f64);
        let p = TreeParams {
            min_samples_leaf: 4,
            ..TreeParams::default()
        };
        let t = tree_fit(&x, &y, &p).unwrap();
        for n in t.nodes() {
            if let Node::Leaf { weight, .. } = n {
                assert!(*weight >= 4.0);
            }
        }
    }

    #[test]
    fn single_unbootstrapped_tree_equals_cart() {
        let x = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 13) % 11) as f64);
        let y = Array1::from_shape_fn(30, |i| (i % 5) as f64);
        let fp = ForestParams {
            n_estimators: 1,
            bootstrap: false,
            ..ForestParams::default()
        };
        let f = forest_fit(&x, &y, &fp).unwrap();
        let t = tree_fit(&x, &y, &TreeParams::default()).unwrap();
        assert_eq!(f.trees()[0], t);
        assert_eq!(f.predict(&x).unwrap(), t.predict(&x).unwrap());
    }

    #[test]
    fn importance_tracks_informative_feature() {
        let n = 200;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { i as f64 } else { ((i * 37) % 101) as f64 });
        let y = Array1::from_shape_fn(n, |i| (i as f64 / 20.0).floor());
        let fp = ForestParams {
            n_estimators: 20,
            ..ForestParams::default()
        };
        let imp = impurity_importance(&forest_fit(&x, &y, &fp).unwrap());
        assert!(imp[0] > 0.9, "{imp:?}");
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_target_forest() {
        let x = Array2::from_shape_fn((15, 2), |(i, j)| (i + j) as f64);
        let y = Array1::from_elem(15, 2.5);
        let f = forest_fit(&x, &y, &ForestParams { n_estimators: 5, ..ForestParams::default() }).unwrap();
        assert!(f.predict(&x).unwrap().iter().all(|&v| v == 2.5));
        assert_eq!(impurity_importance(&f), vec![0.0, 0.0]);
    }

    #[test]
    fn identical_columns_share_credit() {
        let x = Array2::from_shape_fn((40, 2), |(i, _)| ((i * 17) % 40) as f64);
        let y = Array1::from_shape_fn(40, |i| ((i * 17) % 40) as f64 * 0.5);
        let t = tree_fit(&x, &y, &TreeParams::default()).unwrap();
        let imp = t.raw_importance();
        assert_eq!(imp[0], imp[1]);
        assert!(imp[0] > 0.0);
    }

    #[test]
    fn max_features_counts() {
        assert_eq!(MaxFeatures::All.count(12), 12);
        assert_eq!(MaxFeatures::Sqrt.count(12), 3);
        assert_eq!(MaxFeatures::Fraction(0.5).count(12), 6);
        assert_eq!(MaxFeatures::Fraction(0.01).count(12), 1);
    }
}
