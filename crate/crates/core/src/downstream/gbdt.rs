use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtSpec {
    pub max_trees: usize,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub learning_rate: f64,
    /// Rounds without validation improvement before stopping; `None` disables early stopping.
    pub patience: Option<usize>,
}

impl Default for GbdtSpec {
    fn default() -> Self {
        Self { max_trees: 3000, max_leaves: 31, min_samples_leaf: 40, learning_rate: 0.02, patience: Some(50) }
    }
}

impl GbdtSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_leaves < 2 {
            return Err(Error::config("gbdt.max_leaves", "must be >= 2"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::config("gbdt.min_samples_leaf", "must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::config("gbdt.learning_rate", "must be >= 0"));
        }
        if self.patience == Some(0) {
            return Err(Error::config("gbdt.patience", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64, samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if row[*feature] < *threshold { *left } else { *right };
                }
                TreeNode::Leaf { value, .. } => return *value,
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value, samples } => Some((*value, *samples)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Training MSE after each tree (index 0 = base score only).
    pub train_loss: Vec<f64>,
    pub best_iteration: usize,
}

impl GbdtModel {
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| {
                let row = r.to_vec();
                self.base_score + self.trees.iter().map(|t| self.learning_rate * t.predict_row(&row)).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    /// Number of rows going left.
    n_left: usize,
}

/// A leaf under construction: row lists sorted by each feature.
struct GrowingLeaf {
    node: usize,
    sorted: Vec<Vec<usize>>,
    sum: f64,
    best: Option<SplitCandidate>,
}

fn best_split(x: &Matrix, g: &[f64], sorted: &[Vec<usize>], sum: f64, min_leaf: usize) -> Option<SplitCandidate> {
    let n = sorted.first()?.len();
    if n < 2 * min_leaf {
        return None;
    }
    let parent = sum * sum / n as f64;
    let mut best: Option<SplitCandidate> = None;
    for (f, rows) in sorted.iter().enumerate() {
        let mut left = 0.0;
        for i in 0..n - 1 {
            left += g[rows[i]];
            let nl = i + 1;
            if nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let (a, b) = (x[[rows[i], f]], x[[rows[i + 1], f]]);
            if !(a < b) {
                continue;
            }
            let right = sum - left;
            let gain = left * left / nl as f64 + right * right / (n - nl) as f64 - parent;
            if gain > 1e-12 * (1.0 + parent.abs()) && best.is_none_or(|c| gain > c.gain) {
                best = Some(SplitCandidate { gain, feature: f, threshold: a + 0.5 * (b - a), n_left: nl });
            }
        }
    }
    best
}

/// Leaf-wise regression tree on residuals `g` with exact split search.
fn grow_tree(x: &Matrix, g: &[f64], presorted: &[Vec<usize>], spec: &GbdtSpec) -> Tree {
    let mut nodes = vec![TreeNode::Leaf { value: 0.0, samples: 0 }];
    let sum: f64 = g.iter().sum();
    let root_sorted = presorted.to_vec();
    let best = best_split(x, g, &root_sorted, sum, spec.min_samples_leaf);
    let mut open = vec![GrowingLeaf { node: 0, sorted: root_sorted, sum, best }];
    let mut n_leaves = 1;
    while n_leaves < spec.max_leaves {
        // highest gain; ties go to the earliest-created leaf
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.map(|b| (i, b.gain)))
            .fold(None::<(usize, f64)>, |acc, (i, gain)| match acc {
                Some((_, g0)) if g0 >= gain => acc,
                _ => Some((i, gain)),
            });
        let Some((i, _)) = pick else { break };
        let leaf = open.remove(i);
        let split = leaf.best.expect("picked leaves have a split");
        let goes_left: std::collections::HashSet<usize> =
            leaf.sorted[split.feature][..split.n_left].iter().copied().collect();
        let (mut ls, mut rs) = (Vec::with_capacity(x.ncols()), Vec::with_capacity(x.ncols()));
        for rows in &leaf.sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|r| goes_left.contains(r));
            ls.push(l);
            rs.push(r);
        }
        let lsum: f64 = ls[0].iter().map(|&r| g[r]).sum();
        let rsum = leaf.sum - lsum;
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(TreeNode::Leaf { value: 0.0, samples: 0 });
        nodes.push(TreeNode::Leaf { value: 0.0, samples: 0 });
        nodes[leaf.node] = TreeNode::Split { feature: split.feature, threshold: split.threshold, left: li, right: ri };
        let lb = best_split(x, g, &ls, lsum, spec.min_samples_leaf);
        let rb = best_split(x, g, &rs, rsum, spec.min_samples_leaf);
        open.push(GrowingLeaf { node: li, sorted: ls, sum: lsum, best: lb });
        open.push(GrowingLeaf { node: ri, sorted: rs, sum: rsum, best: rb });
        n_leaves += 1;
    }
    for leaf in open {
        let n = leaf.sorted.first().map_or(0, Vec::len);
        nodes[leaf.node] = TreeNode::Leaf { value: if n > 0 { leaf.sum / n as f64 } else { 0.0 }, samples: n };
    }
    Tree { nodes }
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len().max(1) as f64
}

/// Gradient-boosted regression trees on squared error.
pub fn gbdt_fit(x: &Matrix, y: &[f64], validation: Option<(&Matrix, &[f64])>, spec: &GbdtSpec) -> Result<GbdtModel> {
    spec.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows for {} targets", x.nrows(), y.len())));
    }
    if y.len() < 2 * spec.min_samples_leaf {
        return Err(Error::Fit(format!(
            "gbdt needs at least {} rows (2 × min_samples_leaf), got {}",
            2 * spec.min_samples_leaf,
            y.len()
        )));
    }
    let validation = match (spec.patience, validation) {
        (Some(_), None) => return Err(Error::config("gbdt.patience", "early stopping needs a validation set")),
        (Some(_), Some((xv, yv))) if yv.is_empty() || xv.nrows() != yv.len() => {
            return Err(Error::config("gbdt.patience", "early stopping needs a non-empty validation set"))
        }
        (Some(_), v) => v,
        (None, _) => None,
    };
    let base = y.iter().sum::<f64>() / y.len() as f64;
    let presorted: Vec<Vec<usize>> = (0..x.ncols())
        .map(|f| {
            let mut idx: Vec<usize> = (0..x.nrows()).collect();
            idx.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut pred = vec![base; y.len()];
    let mut val_pred = validation.map(|(xv, _)| vec![base; xv.nrows()]);
    let mut trees = Vec::new();
    let mut train_loss = vec![mse(&pred, y)];
    let mut best = (validation.map(|(_, yv)| mse(val_pred.as_ref().unwrap(), yv)).unwrap_or(f64::INFINITY), 0usize);
    for t in 0..spec.max_trees {
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let tree = grow_tree(x, &resid, &presorted, spec);
        for (i, r) in x.rows().into_iter().enumerate() {
            pred[i] += spec.learning_rate * tree.predict_row(r.as_slice().expect("standard layout"));
        }
        train_loss.push(mse(&pred, y));
        if let (Some((xv, yv)), Some(vp)) = (validation, val_pred.as_mut()) {
            for (i, r) in xv.rows().into_iter().enumerate() {
                vp[i] += spec.learning_rate * tree.predict_row(&r.to_vec());
            }
            let v = mse(vp, yv);
            if v < best.0 {
                best = (v, t + 1);
            }
        }
        trees.push(tree);
        if let Some(p) = spec.patience {
            if t + 1 - best.1 >= p {
                break;
            }
        }
    }
    let best_iteration = if spec.patience.is_some() { best.1 } else { trees.len() };
    trees.truncate(best_iteration);
    train_loss.truncate(best_iteration + 1);
    Ok(GbdtModel { base_score: base, learning_rate: spec.learning_rate, trees, train_loss, best_iteration })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::Array2;
    use rand::Rng as _;

    fn no_stop() -> GbdtSpec {
        GbdtSpec { patience: None, ..Default::default() }
    }

    #[test]
    fn constant_target() {
        let x = Array2::from_shape_fn((100, 2), |(i, j)| (i * (j + 1)) as f64);
        let y = vec![3.5; 100];
        let m = gbdt_fit(&x, &y, None, &GbdtSpec { max_trees: 5, ..no_stop() }).unwrap();
        assert_eq!(m.base_score, 3.5);
        for t in &m.trees {
            assert_eq!(t.nodes.len(), 1);
        }
        assert!(m.predict(&x).iter().all(|p| *p == 3.5));
    }

    #[test]
    fn zero_learning_rate_and_zero_trees_predict_mean() {
        let mut r = rng::from_seed(1);
        let x = Array2::from_shape_fn((120, 3), |_| r.random_range(-1.0..1.0));
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] * 2.0 + r[1]).collect();
        let mean = y.iter().sum::<f64>() / 120.0;
        let m = gbdt_fit(&x, &y, None, &GbdtSpec { learning_rate: 0.0, max_trees: 10, ..no_stop() }).unwrap();
        assert!(m.predict(&x).iter().all(|p| (p - mean).abs() < 1e-12));
        let m = gbdt_fit(&x, &y, None, &GbdtSpec { max_trees: 0, ..no_stop() }).unwrap();
        assert!(m.predict(&x).iter().all(|p| (p - mean).abs() < 1e-12));
    }

    /// Brute-force best single split of `g` on one feature.
    fn brute_force_split(xs: &[f64], g: &[f64], min_leaf: usize) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, f64::NAN);
        let mut cands: Vec<f64> = xs.to_vec();
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        for w in cands.windows(2) {
            let t = w[0] + 0.5 * (w[1] - w[0]);
            let (l, r): (Vec<usize>, Vec<usize>) = (0..xs.len()).partition(|&i| xs[i] < t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let sse = |ix: &[usize]| {
                let m = ix.iter().map(|&i| g[i]).sum::<f64>() / ix.len() as f64;
                ix.iter().map(|&i| (g[i] - m).powi(2)).sum::<f64>()
            };
            let score = -(sse(&l) + sse(&r));
            if score > best.0 {
                best = (score, t);
            }
        }
        best
    }

    #[test]
    fn step_function_fixture() {
        let xs: Vec<f64> = (0..200).map(|i| -1.0 + 2.0 * i as f64 / 199.0).collect();
        let y: Vec<f64> = xs.iter().map(|&x| if x < 0.0 { 0.0 } else { 1.0 }).collect();
        let x = Array2::from_shape_vec((200, 1), xs.clone()).unwrap();
        let spec = GbdtSpec { max_trees: 50, learning_rate: 0.1, ..no_stop() };
        let m = gbdt_fit(&x, &y, None, &spec).unwrap();
        let resid: Vec<f64> = y.iter().map(|v| v - 0.5).collect();
        let (_, t_oracle) = brute_force_split(&xs, &resid, 40);
        match &m.trees[0].nodes[0] {
            TreeNode::Split { threshold, .. } => {
                assert_eq!(*threshold, t_oracle);
                assert!(threshold.abs() < 0.02);
            }
            other => panic!("root is not a split: {other:?}"),
        }
        assert!(*m.train_loss.last().unwrap() < 0.01, "{:?}", m.train_loss.last());
    }

    #[test]
    fn tree_contracts_on_random_data() {
        let mut r = rng::from_seed(5);
        let x: Matrix = Array2::from_shape_fn((600, 4), |_| r.random_range(-2.0..2.0));
        let y: Vec<f64> =
            x.rows().into_iter().map(|v| (v[0] * 2.0).sin() + v[1] * v[2] + 0.1 * r.random_range(-1.0f64..1.0)).collect();
        let m = gbdt_fit(&x, &y, None, &GbdtSpec { max_trees: 60, learning_rate: 0.2, ..no_stop() }).unwrap();
        for w in m.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        for t in &m.trees {
            assert!(t.leaves().count() <= 31);
            assert!(t.leaves().all(|(_, n)| n >= 40));
            assert_eq!(t.leaves().map(|(_, n)| n).sum::<usize>(), 600);
        }
        assert!(m.trees.iter().any(|t| t.leaves().count() > 8));
    }

    #[test]
    fn early_stopping_and_preconditions() {
        let mut r = rng::from_seed(6);
        let x = Array2::from_shape_fn((200, 2), |_| r.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..200).map(|_| r.random_range(-1.0..1.0)).collect();
        let xv = Array2::from_shape_fn((50, 2), |_| r.random_range(-1.0..1.0));
        let yv: Vec<f64> = (0..50).map(|_| r.random_range(-1.0..1.0)).collect();
        let spec = GbdtSpec { patience: Some(5), max_trees: 500, learning_rate: 0.3, ..Default::default() };
        let m = gbdt_fit(&x, &y, Some((&xv, &yv)), &spec).unwrap();
        assert!(m.trees.len() < 500);
        assert_eq!(m.trees.len(), m.best_iteration);
        assert!(matches!(gbdt_fit(&x, &y, None, &spec), Err(Error::Config { .. })));
        assert!(matches!(gbdt_fit(&x.slice(ndarray::s![..50, ..]).to_owned(), &y[..50], None, &no_stop()), Err(Error::Fit(_))));
    }
}
