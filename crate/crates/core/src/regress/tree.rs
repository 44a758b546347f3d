use super::{DesignMatrix, RegressError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART regression tree with squared-error splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    input_dim: usize,
    nodes: Vec<Node>,
}

impl Tree {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    y: &'a [f64],
    max_depth: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn mean(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64
    }

    /// Best `(feature, threshold, sse)` over midpoints between distinct
    /// sorted values; ties keep the earliest candidate.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let n = idx.len() as f64;
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent = total_sq - total * total / n;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..self.rows[0].len() {
            order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]).then(a.cmp(&b)));
            let (mut ls, mut lsq) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let yi = self.y[order[k]];
                ls += yi;
                lsq += yi * yi;
                let (lo, hi) = (self.rows[order[k]][f], self.rows[order[k + 1]][f]);
                if lo == hi {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = n - nl;
                let rs = total - ls;
                let rsq = total_sq - lsq;
                let sse = (lsq - ls * ls / nl) + (rsq - rs * rs / nr);
                if sse < parent - 1e-12 && best.is_none_or(|b| sse < b.2) {
                    best = Some((f, lo + (hi - lo) / 2.0, sse));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.mean(idx)));
        if depth >= self.max_depth || idx.len() < 2 {
            return id;
        }
        let Some((feature, threshold, _)) = self.best_split(idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.rows[i][feature] <= threshold);
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Grows a tree on the given rows (repeats allowed) against `targets`, which
/// need not be the design matrix targets.
fn grow_tree(rows: &[Vec<f64>], targets: &[f64], idx: &[usize], max_depth: usize) -> Tree {
    let mut b = Builder {
        rows,
        y: targets,
        max_depth,
        nodes: Vec::new(),
    };
    b.grow(idx, 0);
    Tree {
        input_dim: rows[0].len(),
        nodes: b.nodes,
    }
}

/// Single tree on all rows; `None` grows until leaves are pure.
pub fn fit_tree(data: &DesignMatrix, max_depth: Option<usize>) -> Tree {
    let idx: Vec<usize> = (0..data.len()).collect();
    grow_tree(data.rows(), data.targets(), &idx, max_depth.unwrap_or(usize::MAX))
}

/// Bootstrap ensemble of fully grown trees; every split considers all features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn input_dim(&self) -> usize {
        self.trees[0].input_dim
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

pub fn fit_rf(data: &DesignMatrix, trees: usize, seed: u64) -> Result<Forest> {
    if trees == 0 {
        return Err(RegressError::InvalidConfig("forest needs at least one tree".into()));
    }
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trees = (0..trees)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            grow_tree(data.rows(), data.targets(), &idx, usize::MAX)
        })
        .collect();
    Ok(Forest { trees })
}

/// Stagewise least-squares boosting of shallow trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boosted {
    input_dim: usize,
    init: f64,
    learning_rate: f64,
    stages: Vec<Tree>,
    /// Training mean squared error after the initial constant and each stage.
    pub train_loss: Vec<f64>,
}

impl Boosted {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn initial(&self) -> f64 {
        self.init
    }

    pub fn stages(&self) -> &[Tree] {
        &self.stages
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.init + self.learning_rate * self.stages.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

pub fn fit_gbt(data: &DesignMatrix, estimators: usize, depth: usize, learning_rate: f64) -> Result<Boosted> {
    let n = data.len();
    if n < 2 {
        return Err(RegressError::TooFewRows {
            method: "gradient boosting",
            needed: 2,
            got: n,
        });
    }
    let y = data.targets();
    let init = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![init; n];
    let idx: Vec<usize> = (0..n).collect();
    let mse = |f: &[f64]| f.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    let mut train_loss = vec![mse(&fitted)];
    let mut stages = Vec::with_capacity(estimators);
    for _ in 0..estimators {
        let residual: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        let tree = grow_tree(data.rows(), &residual, &idx, depth);
        for (f, r) in fitted.iter_mut().zip(data.rows()) {
            *f += learning_rate * tree.predict(r);
        }
        train_loss.push(mse(&fitted));
        stages.push(tree);
    }
    Ok(Boosted {
        input_dim: data.columns(),
        init,
        learning_rate,
        stages,
        train_loss,
    })
}
