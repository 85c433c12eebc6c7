//! CART decision trees (Gini criterion) and a bagged random forest.

use log::warn;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::primitive::N_PRIMITIVES;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// `floor(sqrt(F))`, at least one.
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        if self.min_samples_split < 2 || self.min_samples_leaf < 1 {
            return Err(Error::Config(
                "min_samples_split must be ≥ 2 and min_samples_leaf ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// `1 − Σ pᵢ²`.
pub fn gini_impurity(counts: &[f64]) -> Result<f64> {
    let n: f64 = counts.iter().sum();
    if n <= 0.0 || counts.iter().any(|&c| c < 0.0) {
        return Err(Error::Degenerate("gini impurity of an empty node".into()));
    }
    Ok(1.0 - counts.iter().map(|&c| (c / n) * (c / n)).sum::<f64>())
}

/// Training-time view of a feature matrix.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    /// Row-major `N×F`.
    pub x: &'a [f32],
    pub n_features: usize,
    pub y: &'a [usize],
}

impl Samples<'_> {
    #[inline]
    fn at(&self, row: usize, f: usize) -> f32 {
        self.x[row * self.n_features + f]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f32,
    /// Size-weighted Gini of the two children.
    pub impurity: f64,
}

fn counts_of(s: &Samples<'_>, idx: &[usize]) -> [f64; N_PRIMITIVES] {
    let mut c = [0.0; N_PRIMITIVES];
    for &i in idx {
        c[s.y[i]] += 1.0;
    }
    c
}

fn gini_sum(counts: &[f64; N_PRIMITIVES], n: f64) -> f64 {
    // n·gini = n − Σc²/n
    n - counts.iter().map(|c| c * c).sum::<f64>() / n
}

/// Midpoint between two consecutive distinct values, guaranteed to separate them.
fn midpoint(lo: f32, hi: f32) -> f32 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi || m < lo {
        lo
    } else {
        m
    }
}

/// Best Gini split of the samples `idx` among `features` (rows go left when
/// `x ≤ threshold`). Ties go to the lowest feature index, then the lowest threshold.
pub fn best_split(
    s: &Samples<'_>,
    idx: &[usize],
    features: &[usize],
    min_samples_split: usize,
    min_samples_leaf: usize,
) -> Option<Split> {
    let n = idx.len();
    if n < min_samples_split || n < 2 * min_samples_leaf {
        return None;
    }
    let total = counts_of(s, idx);
    let parent = gini_sum(&total, n as f64) / n as f64;
    let mut feats = features.to_vec();
    feats.sort_unstable();
    let mut best: Option<Split> = None;
    let mut order: Vec<(f32, usize)> = Vec::with_capacity(n);
    for &f in &feats {
        order.clear();
        order.extend(idx.iter().map(|&i| (s.at(i, f), s.y[i])));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0.0; N_PRIMITIVES];
        for pos in 0..n - 1 {
            left[order[pos].1] += 1.0;
            let (v, next) = (order[pos].0, order[pos + 1].0);
            if v == next {
                continue;
            }
            let nl = pos + 1;
            let nr = n - nl;
            if nl < min_samples_leaf || nr < min_samples_leaf {
                continue;
            }
            let mut right = total;
            for (r, l) in right.iter_mut().zip(&left) {
                *r -= l;
            }
            let imp = (gini_sum(&left, nl as f64) + gini_sum(&right, nr as f64)) / n as f64;
            if imp < parent - 1e-12 && best.map_or(true, |b| imp < b.impurity - 1e-12) {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(v, next),
                    impurity: imp,
                });
            }
        }
    }
    best
}

/// One array-encoded node. `feature < 0` marks a leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: i32,
    pub threshold: f32,
    pub left: u32,
    pub right: u32,
    /// Training-sample counts per primitive reaching this node.
    pub counts: [f32; N_PRIMITIVES],
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature < 0
    }

    pub fn proba(&self) -> [f64; N_PRIMITIVES] {
        let n: f64 = self.counts.iter().map(|&c| f64::from(c)).sum();
        let mut p = [0.0; N_PRIMITIVES];
        for (pi, &c) in p.iter_mut().zip(&self.counts) {
            *pi = f64::from(c) / n;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

impl DecisionTree {
    /// Grow a tree on the (possibly repeated) sample indices `idx`.
    pub fn grow(s: &Samples<'_>, idx: Vec<usize>, cfg: &ForestConfig, rng: &mut rng::Rng) -> DecisionTree {
        let k = cfg.max_features.resolve(s.n_features);
        let mut nodes: Vec<Node> = Vec::new();
        let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
        let mk = |idx: &[usize]| {
            let c = counts_of(s, idx);
            Node {
                feature: -1,
                threshold: 0.0,
                left: 0,
                right: 0,
                counts: c.map(|v| v as f32),
            }
        };
        nodes.push(mk(&idx));
        stack.push((0, idx));
        while let Some((id, idx)) = stack.pop() {
            let pure = nodes[id].counts.iter().filter(|&&c| c > 0.0).count() <= 1;
            if pure {
                continue;
            }
            let feats: Vec<usize> = if k >= s.n_features {
                (0..s.n_features).collect()
            } else {
                sample(rng, s.n_features, k).into_vec()
            };
            let Some(split) = best_split(s, &idx, &feats, cfg.min_samples_split, cfg.min_samples_leaf) else {
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) = idx
                .iter()
                .partition(|&&i| s.at(i, split.feature) <= split.threshold);
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(mk(&l));
            nodes.push(mk(&r));
            let node = &mut nodes[id];
            node.feature = split.feature as i32;
            node.threshold = split.threshold;
            node.left = li as u32;
            node.right = ri as u32;
            // right pushed first so the left subtree is expanded first
            stack.push((ri, r));
            stack.push((li, l));
        }
        DecisionTree {
            nodes,
            n_features: s.n_features,
        }
    }

    pub fn leaf_index(&self, row: &[f32]) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return i;
            }
            i = if row[n.feature as usize] <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

    pub fn predict_proba(&self, row: &[f32]) -> [f64; N_PRIMITIVES] {
        self.nodes[self.leaf_index(row)].proba()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub config: ForestConfig,
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
    /// Out-of-bag accuracy, when bootstrap was on and every sample was out of bag at least once.
    #[serde(default)]
    pub oob_accuracy: Option<f64>,
}

pub fn fit_forest(x: &[f32], n_features: usize, y: &[usize], config: &ForestConfig) -> Result<RandomForest> {
    config.validate()?;
    if n_features == 0 || x.len() != y.len() * n_features || y.is_empty() {
        return Err(Error::dims("fit_forest", &[x.len()], &[y.len(), n_features]));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= N_PRIMITIVES) {
        return Err(Error::Label { index: 0, label: bad });
    }
    let s = Samples { x, n_features, y };
    let n = y.len();
    let distinct = {
        let mut seen = [false; N_PRIMITIVES];
        y.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&b| b).count()
    };
    if distinct < 2 {
        warn!("training labels contain a single class; the forest is constant");
    }
    let grown = par::map(config.n_trees, |t| {
        let mut rng = rng::stream(config.seed, "tree", t as u64);
        let idx: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut in_bag = vec![false; n];
        idx.iter().for_each(|&i| in_bag[i] = true);
        (DecisionTree::grow(&s, idx, config, &mut rng), in_bag)
    });

    let oob_accuracy = if config.bootstrap {
        let mut votes = vec![[0.0f64; N_PRIMITIVES]; n];
        let mut seen = vec![false; n];
        for (tree, in_bag) in &grown {
            for i in (0..n).filter(|&i| !in_bag[i]) {
                let p = tree.predict_proba(&x[i * n_features..(i + 1) * n_features]);
                votes[i].iter_mut().zip(p).for_each(|(v, q)| *v += q);
                seen[i] = true;
            }
        }
        let scored: Vec<usize> = (0..n).filter(|&i| seen[i]).collect();
        (!scored.is_empty()).then(|| {
            let correct = scored.iter().filter(|&&i| argmax(&votes[i]) == y[i]).count();
            correct as f64 / scored.len() as f64
        })
    } else {
        None
    };

    Ok(RandomForest {
        config: config.clone(),
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        n_features,
        oob_accuracy,
    })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

impl RandomForest {
    /// Mean of leaf distributions across trees, one 5-vector per row.
    pub fn predict_proba(&self, x: &[f32]) -> Result<Vec<[f64; N_PRIMITIVES]>> {
        if x.len() % self.n_features != 0 {
            return Err(Error::Contract(format!(
                "feature rows of length {} expected; got {} values",
                self.n_features,
                x.len()
            )));
        }
        let rows = x.len() / self.n_features;
        let inv = 1.0 / self.trees.len() as f64;
        Ok(par::map(rows, |r| {
            let row = &x[r * self.n_features..(r + 1) * self.n_features];
            let mut acc = [0.0; N_PRIMITIVES];
            for t in &self.trees {
                acc.iter_mut().zip(t.predict_proba(row)).for_each(|(a, p)| *a += p);
            }
            acc.map(|v| v * inv)
        }))
    }

    pub fn predict(&self, x: &[f32]) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.iter().map(|p| argmax(p)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_values() {
        assert_eq!(gini_impurity(&[4.0, 0.0]).unwrap(), 0.0);
        assert!((gini_impurity(&[2.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((gini_impurity(&[1.0; 5]).unwrap() - 0.8).abs() < 1e-15);
        assert!(gini_impurity(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn midpoint_threshold() {
        let x = [1.0, 2.0, 10.0, 11.0];
        let y = [0, 0, 1, 1];
        let s = Samples { x: &x, n_features: 1, y: &y };
        let sp = best_split(&s, &[0, 1, 2, 3], &[0], 2, 1).unwrap();
        assert_eq!(sp.feature, 0);
        assert_eq!(sp.threshold, 6.0);
        assert_eq!(sp.impurity, 0.0);
    }

    #[test]
    fn unsplittable_and_small_nodes() {
        let x = [3.0; 4];
        let y = [0, 1, 0, 1];
        let s = Samples { x: &x, n_features: 1, y: &y };
        assert!(best_split(&s, &[0, 1, 2, 3], &[0], 2, 1).is_none());
        let x = [1.0, 2.0, 3.0, 4.0];
        let s = Samples { x: &x, n_features: 1, y: &y };
        assert!(best_split(&s, &[0, 1, 2, 3], &[0], 5, 1).is_none());
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // both features separate perfectly
        let x = [0.0, 5.0, 1.0, 6.0, 8.0, 0.0, 9.0, 1.0];
        let y = [0, 0, 1, 1];
        let s = Samples { x: &x, n_features: 2, y: &y };
        let sp = best_split(&s, &[0, 1, 2, 3], &[1, 0], 2, 1).unwrap();
        assert_eq!(sp.feature, 0);
    }

    #[test]
    fn averaging_two_trees() {
        let leaf = |k: usize| {
            let mut counts = [0.0; 5];
            counts[k] = 3.0;
            DecisionTree {
                nodes: vec![Node {
                    feature: -1,
                    threshold: 0.0,
                    left: 0,
                    right: 0,
                    counts,
                }],
                n_features: 1,
            }
        };
        let f = RandomForest {
            config: ForestConfig::default(),
            trees: vec![leaf(0), leaf(1)],
            n_features: 1,
            oob_accuracy: None,
        };
        assert_eq!(f.predict_proba(&[0.3]).unwrap()[0], [0.5, 0.5, 0.0, 0.0, 0.0]);
        assert!(f.predict_proba(&[0.3, 0.2]).is_ok());
        let g = RandomForest { n_features: 2, ..f };
        assert!(matches!(g.predict_proba(&[0.3]), Err(Error::Contract(_))));
    }
}
