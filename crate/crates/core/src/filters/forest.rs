use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

/// `H(n) = Σ_{i=1}^{n} 1/i`, summed exactly.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points: `c(n) = 2H(n−1) − 2(n−1)/n`, with `c(0) = c(1) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * harmonic(n - 1) - 2.0 * (n - 1) as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Per-tree subsample size `m`, clamped to the number of points.
    pub subsample: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Terminal node holding `size` training points.
    Leaf { size: usize },
    /// Points with `x[feature] < value` go to `left`.
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// A random partition tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<Node>,
}

impl IsolationTree {
    fn grow(points: &[&[f64]], idx: Vec<usize>, depth: usize, limit: usize, rng: &mut Rng, nodes: &mut Vec<Node>) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf { size: idx.len() });
        if depth >= limit || idx.len() <= 1 {
            return id;
        }
        let dim = points[idx[0]].len();
        let ranges: Vec<(usize, f64, f64)> = (0..dim)
            .filter_map(|f| {
                let lo = idx.iter().map(|&i| points[i][f]).fold(f64::INFINITY, f64::min);
                let hi = idx.iter().map(|&i| points[i][f]).fold(f64::NEG_INFINITY, f64::max);
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let mut value = rng.random_range(lo..hi);
        while value <= lo {
            value = rng.random_range(lo..hi);
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| points[i][feature] < value);
        let left = Self::grow(points, l, depth + 1, limit, rng, nodes);
        let right = Self::grow(points, r, depth + 1, limit, rng, nodes);
        nodes[id] = Node::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }

    /// Edges from the root to the leaf containing `x`, plus `c(size)` for
    /// the points left unseparated in that leaf.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0usize;
        loop {
            match &self.nodes[node] {
                Node::Leaf { size } => return depth as f64 + average_path_length(*size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *value { *left } else { *right };
                    depth += 1;
                }
            }
        }
    }

    pub fn height(&self) -> usize {
        fn h(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + h(nodes, *left).max(h(nodes, *right)),
            }
        }
        h(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<IsolationTree>,
    /// Effective subsample size `ψ = min(m, n)`.
    pub subsample: usize,
    pub height_limit: usize,
}

impl IsolationForest {
    pub fn fit<P: AsRef<[f64]>>(points: &[P], config: &ForestConfig, rng: &mut Rng) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "isolation forest needs at least 2 points, got {}",
                points.len()
            )));
        }
        if config.n_trees == 0 || config.subsample < 2 {
            return Err(Error::InvalidArgument("isolation forest needs ≥ 1 tree and subsample ≥ 2".into()));
        }
        let points: Vec<&[f64]> = points.iter().map(|p| p.as_ref()).collect();
        let psi = config.subsample.min(points.len());
        let limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..config.n_trees)
            .map(|_| {
                let idx = sample(rng, points.len(), psi).into_vec();
                let mut nodes = Vec::new();
                IsolationTree::grow(&points, idx, 0, limit, rng, &mut nodes);
                IsolationTree { nodes }
            })
            .collect();
        Ok(Self {
            trees,
            subsample: psi,
            height_limit: limit,
        })
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// `2^(−E[h(x)]/c(ψ))`; larger means easier to isolate.
    pub fn score(&self, x: &[f64]) -> f64 {
        (2f64).powf(-self.mean_path_length(x) / average_path_length(self.subsample))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn normalizer_values() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // c(3) = 2(1 + 1/2) − 4/3
        assert!((average_path_length(3) - (3.0 - 4.0 / 3.0)).abs() < 1e-15);
        // c(256) from the exact harmonic sum.
        let h255: f64 = (1..=255).map(|i| 1.0 / i as f64).sum();
        assert!((average_path_length(256) - (2.0 * h255 - 2.0 * 255.0 / 256.0)).abs() < 1e-12);
    }

    #[test]
    fn two_points_one_split() {
        let pts = [[0.0, 0.0], [1.0, 2.0]];
        let f = IsolationForest::fit(&pts, &ForestConfig { n_trees: 1, subsample: 2 }, &mut rng_from_seed(0)).unwrap();
        assert_eq!(f.height_limit, 1);
        let t = &f.trees[0];
        assert_eq!(t.nodes.len(), 3);
        assert!(matches!(t.nodes[0], Node::Split { .. }));
        assert_eq!(t.path_length(&pts[0]), 1.0);
        assert_eq!(t.path_length(&pts[1]), 1.0);
    }

    #[test]
    fn duplicates_are_never_split() {
        let pts = vec![[0.3, 0.3]; 16];
        let f = IsolationForest::fit(&pts, &ForestConfig { n_trees: 5, subsample: 8 }, &mut rng_from_seed(1)).unwrap();
        for t in &f.trees {
            assert_eq!(t.nodes, vec![Node::Leaf { size: 8 }]);
        }
        // Five equal terms averaged: exact up to summation rounding.
        assert!((f.mean_path_length(&[0.3, 0.3]) - average_path_length(8)).abs() < 1e-14);
        assert!((f.score(&[0.3, 0.3]) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn hand_built_root_leaf_scores_one_half() {
        let f = IsolationForest {
            trees: vec![IsolationTree {
                nodes: vec![Node::Leaf { size: 256 }],
            }],
            subsample: 256,
            height_limit: 8,
        };
        assert_eq!(f.score(&[123.0]), 0.5);
        // One level deeper on a split: E[h] = 1 + c(128) < c(256) → score > 0.5.
        let g = IsolationForest {
            trees: vec![IsolationTree {
                nodes: vec![
                    Node::Split {
                        feature: 0,
                        value: 0.0,
                        left: 1,
                        right: 2,
                    },
                    Node::Leaf { size: 128 },
                    Node::Leaf { size: 128 },
                ],
            }],
            subsample: 256,
            height_limit: 8,
        };
        let want = 2f64.powf(-(1.0 + average_path_length(128)) / average_path_length(256));
        assert_eq!(g.score(&[-1.0]), want);
        assert!(want > 0.5);
    }

    #[test]
    fn planted_outlier_is_isolated_first() {
        let mut rng = rng_from_seed(5);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut pts: Vec<Vec<f64>> = (0..300).map(|_| vec![n.sample(&mut rng), n.sample(&mut rng)]).collect();
        pts.push(vec![12.0, -12.0]);
        let f = IsolationForest::fit(&pts, &ForestConfig::default(), &mut rng_from_seed(6)).unwrap();
        let outlier = f.mean_path_length(&pts[300]);
        let cluster: f64 = pts[..300].iter().map(|p| f.mean_path_length(p)).sum::<f64>() / 300.0;
        assert!(outlier < cluster);
        let s = f.score(&pts[300]);
        assert!(pts[..300].iter().all(|p| f.score(p) < s));
        for t in &f.trees {
            assert!(t.height() <= f.height_limit);
        }
    }

    #[test]
    fn split_values_lie_inside_node_ranges() {
        // With m = n every tree sees all points, so the points reaching each
        // node can be recomputed.
        let pts: Vec<Vec<f64>> = (0..64).map(|i| vec![(i % 7) as f64, (i / 7) as f64 * 0.5]).collect();
        let f = IsolationForest::fit(&pts, &ForestConfig { n_trees: 20, subsample: 64 }, &mut rng_from_seed(8)).unwrap();
        fn walk(t: &IsolationTree, node: usize, pts: Vec<&Vec<f64>>) {
            match &t.nodes[node] {
                Node::Leaf { size } => assert_eq!(*size, pts.len()),
                Node::Split { feature, value, left, right } => {
                    let lo = pts.iter().map(|p| p[*feature]).fold(f64::INFINITY, f64::min);
                    let hi = pts.iter().map(|p| p[*feature]).fold(f64::NEG_INFINITY, f64::max);
                    assert!(lo < *value && *value < hi);
                    let (l, r): (Vec<_>, Vec<_>) = pts.into_iter().partition(|p| p[*feature] < *value);
                    walk(t, *left, l);
                    walk(t, *right, r);
                }
            }
        }
        for t in &f.trees {
            assert!(t.height() <= 6);
            walk(t, 0, pts.iter().collect());
        }
    }

    #[test]
    fn too_few_points() {
        assert!(IsolationForest::fit(&[[1.0]], &ForestConfig::default(), &mut rng_from_seed(0)).is_err());
    }
}
