//! Quantile regression forests: CART regression trees whose leaves keep
//! their training targets; a prediction is the average of the empirical
//! CDFs of the leaves reached in every tree.

mod tree;

pub use tree::{best_split, fit_tree, Split, TreeNode};

use crate::dist::math::seed_stream;
use crate::dist::EmpiricalCdf;
use crate::error::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

/// Split impurity criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Impurity {
    Mse,
    Mae,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Features drawn per split; clamped to the feature count (the paper's
    /// best models used the full set, decorrelating only via bootstrap).
    pub max_features: usize,
    pub impurity: Impurity,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            min_leaf: 30,
            max_features: usize::MAX,
            impurity: Impurity::Mse,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub params: ForestParams,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

/// Train a forest. Per-tree RNG streams are derived from the seed, so the
/// result is independent of thread scheduling.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], params: &ForestParams) -> Result<Forest> {
    if x.is_empty() || y.len() != x.len() {
        return Err(Error::DomainError("forest training data is empty or misaligned".into()));
    }
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(Error::DomainError("n_trees and min_leaf must be at least 1".into()));
    }
    let n = x.len();
    let p = x[0].len();
    let clamped = ForestParams { max_features: params.max_features.min(p).max(1), ..params.clone() };
    let trees: Vec<TreeNode> = (0..clamped.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed_stream(clamped.seed, "qrf-tree", t as u64);
            let indices: Vec<usize> = if clamped.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(x, y, &indices, &clamped, &mut rng)
        })
        .collect();
    Ok(Forest { params: clamped, n_features: p, trees })
}

/// Average of the per-leaf empirical CDFs: every reached target value gets
/// weight (1 / n_trees) * (1 / leaf size), merged and sorted.
pub fn predict_cdf(forest: &Forest, x: &[f64]) -> EmpiricalCdf {
    let tree_w = 1.0 / forest.trees.len() as f64;
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for tree in &forest.trees {
        let leaf = tree.leaf_for(x);
        let w = tree_w / leaf.len() as f64;
        pairs.extend(leaf.iter().map(|&v| (v, w)));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut values = Vec::with_capacity(pairs.len());
    let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
    for (v, w) in pairs {
        if values.last() == Some(&v) {
            *weights.last_mut().unwrap() += w;
        } else {
            values.push(v);
            weights.push(w);
        }
    }
    EmpiricalCdf::new(values, weights).expect("leaf targets are nonempty")
}

// Versioned little-endian binary forest format:
// magic "WPQF", u32 version, params, n_features, then each tree as a preorder
// node stream (tag 0 = internal: u32 feature, f64 threshold; tag 1 = leaf:
// u32 length, f64 values).
const FOREST_MAGIC: &[u8; 4] = b"WPQF";
const FOREST_VERSION: u32 = 1;

pub fn save_forest(forest: &Forest, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_forest(&mut w, forest)?;
    w.flush()?;
    Ok(())
}

pub fn write_forest(w: &mut impl Write, forest: &Forest) -> Result<()> {
    w.write_all(FOREST_MAGIC)?;
    w.write_all(&FOREST_VERSION.to_le_bytes())?;
    w.write_all(&(forest.params.n_trees as u32).to_le_bytes())?;
    w.write_all(&(forest.params.min_leaf as u32).to_le_bytes())?;
    let mf = if forest.params.max_features == usize::MAX {
        u32::MAX
    } else {
        forest.params.max_features as u32
    };
    w.write_all(&mf.to_le_bytes())?;
    w.write_all(&[match forest.params.impurity {
        Impurity::Mse => 0u8,
        Impurity::Mae => 1u8,
    }])?;
    w.write_all(&[u8::from(forest.params.bootstrap)])?;
    w.write_all(&forest.params.seed.to_le_bytes())?;
    w.write_all(&(forest.n_features as u32).to_le_bytes())?;
    for tree in &forest.trees {
        write_node(w, tree)?;
    }
    Ok(())
}

fn write_node(w: &mut impl Write, node: &TreeNode) -> Result<()> {
    match node {
        TreeNode::Internal { feature, threshold, left, right } => {
            w.write_all(&[0u8])?;
            w.write_all(&(*feature as u32).to_le_bytes())?;
            w.write_all(&threshold.to_le_bytes())?;
            write_node(w, left)?;
            write_node(w, right)?;
        }
        TreeNode::Leaf { targets } => {
            w.write_all(&[1u8])?;
            w.write_all(&(targets.len() as u32).to_le_bytes())?;
            for t in targets {
                w.write_all(&t.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn load_forest(path: &Path) -> Result<Forest> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    read_forest(&mut r, path)
}

pub fn read_forest(mut r: &mut impl Read, path: &Path) -> Result<Forest> {
    let err = |m: &str| Error::FormatError { file: path.display().to_string(), message: m.into() };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| err("missing magic"))?;
    if &magic != FOREST_MAGIC {
        return Err(err("not a forest file"));
    }
    let version = read_u32(&mut r).map_err(|_| err("missing version"))?;
    if version != FOREST_VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let n_trees = read_u32(&mut r).map_err(|_| err("truncated header"))? as usize;
    let min_leaf = read_u32(&mut r).map_err(|_| err("truncated header"))? as usize;
    let mf = read_u32(&mut r).map_err(|_| err("truncated header"))?;
    let mut impurity_b = [0u8; 1];
    r.read_exact(&mut impurity_b).map_err(|_| err("truncated header"))?;
    let impurity = match impurity_b[0] {
        0 => Impurity::Mse,
        1 => Impurity::Mae,
        _ => return Err(err("bad impurity tag")),
    };
    let mut boot_b = [0u8; 1];
    r.read_exact(&mut boot_b).map_err(|_| err("truncated header"))?;
    let mut seed_b = [0u8; 8];
    r.read_exact(&mut seed_b).map_err(|_| err("truncated header"))?;
    let n_features = read_u32(&mut r).map_err(|_| err("truncated header"))? as usize;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        trees.push(read_node(&mut r, path)?);
    }
    Ok(Forest {
        params: ForestParams {
            n_trees,
            min_leaf,
            max_features: if mf == u32::MAX { usize::MAX } else { mf as usize },
            impurity,
            bootstrap: boot_b[0] != 0,
            seed: u64::from_le_bytes(seed_b),
        },
        n_features,
        trees,
    })
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_node(r: &mut impl Read, path: &Path) -> Result<TreeNode> {
    let err = |m: &str| Error::FormatError { file: path.display().to_string(), message: m.into() };
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag).map_err(|_| err("truncated node stream"))?;
    match tag[0] {
        0 => {
            let feature = read_u32(r).map_err(|_| err("truncated internal node"))? as usize;
            let mut thr = [0u8; 8];
            r.read_exact(&mut thr).map_err(|_| err("truncated internal node"))?;
            let left = Box::new(read_node(r, path)?);
            let right = Box::new(read_node(r, path)?);
            Ok(TreeNode::Internal { feature, threshold: f64::from_le_bytes(thr), left, right })
        }
        1 => {
            let len = read_u32(r).map_err(|_| err("truncated leaf"))? as usize;
            let mut targets = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| err("truncated leaf values"))?;
                targets.push(f64::from_le_bytes(b));
            }
            Ok(TreeNode::Leaf { targets })
        }
        _ => Err(err("bad node tag")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::PredictiveDistribution;

    fn toy_data(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = seed_stream(seed, "toy", 0);
        let x: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| rng.random::<f64>() * 5.0).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] + 0.5 * r[1 % p] + rng.random::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn single_tree_without_bootstrap_equals_the_tree() {
        let (x, y) = toy_data(3, 120, 3);
        let params = ForestParams { n_trees: 1, min_leaf: 10, bootstrap: false, ..Default::default() };
        let forest = fit_forest(&x, &y, &params).unwrap();
        let mut rng = seed_stream(params.seed, "qrf-tree", 0);
        let idx: Vec<usize> = (0..x.len()).collect();
        let clamped = ForestParams { max_features: 3, ..params };
        let tree = fit_tree(&x, &y, &idx, &clamped, &mut rng);
        assert_eq!(forest.trees[0], tree);
        let probe = vec![2.0, 1.0, 4.0];
        let cdf = predict_cdf(&forest, &probe);
        let leaf = tree.leaf_for(&probe);
        assert_eq!(cdf.values.len(), {
            let mut v = leaf.to_vec();
            v.dedup();
            v.len()
        });
    }

    #[test]
    fn one_leaf_prediction_steps_through_targets() {
        let x = vec![vec![0.0], vec![0.0], vec![0.0]];
        let y = vec![1.0, 2.0, 3.0];
        let params = ForestParams { n_trees: 1, min_leaf: 3, bootstrap: false, ..Default::default() };
        let forest = fit_forest(&x, &y, &params).unwrap();
        let cdf = predict_cdf(&forest, &[0.0]);
        assert_eq!(cdf.values, vec![1.0, 2.0, 3.0]);
        let d = PredictiveDistribution::Empirical(cdf);
        assert!((d.cdf(2.0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.cdf(1.0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_point_forest_average() {
        // Two trees whose reached leaves hold {0} and {2}.
        let forest = Forest {
            params: ForestParams::default(),
            n_features: 1,
            trees: vec![
                TreeNode::Leaf { targets: vec![0.0] },
                TreeNode::Leaf { targets: vec![2.0] },
            ],
        };
        let cdf = predict_cdf(&forest, &[0.0]);
        let d = PredictiveDistribution::Empirical(cdf);
        assert!((d.cdf(0.0) - 0.5).abs() < 1e-12);
        assert!((d.cdf(2.0) - 1.0).abs() < 1e-12);
        assert_eq!(d.median(), 0.0);
    }

    #[test]
    fn forest_cdf_matches_per_tree_average_on_a_dense_grid() {
        let (x, y) = toy_data(11, 90, 2);
        let params = ForestParams { n_trees: 5, min_leaf: 8, ..Default::default() };
        let forest = fit_forest(&x, &y, &params).unwrap();
        let probe = vec![2.5, 2.5];
        let combined = PredictiveDistribution::Empirical(predict_cdf(&forest, &probe));
        let grid: Vec<f64> = (0..400).map(|k| k as f64 * 0.02).collect();
        for &g in &grid {
            let avg: f64 = forest
                .trees
                .iter()
                .map(|t| {
                    let leaf = t.leaf_for(&probe);
                    leaf.iter().filter(|&&v| v <= g).count() as f64 / leaf.len() as f64
                })
                .sum::<f64>()
                / forest.trees.len() as f64;
            assert!(
                (combined.cdf(g) - avg).abs() < 1e-12,
                "grid {g}: {} vs {avg}",
                combined.cdf(g)
            );
        }
    }

    #[test]
    fn forest_support_stays_within_training_range() {
        let (x, y) = toy_data(7, 200, 3);
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let forest = fit_forest(&x, &y, &ForestParams { n_trees: 20, min_leaf: 5, ..Default::default() }).unwrap();
        for probe in [vec![-10.0, 0.0, 99.0], vec![2.0, 2.0, 2.0]] {
            let cdf = predict_cdf(&forest, &probe);
            assert!(cdf.values[0] >= lo && *cdf.values.last().unwrap() <= hi);
            assert!((cdf.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn min_leaf_equal_to_n_reproduces_the_training_cdf() {
        let (x, y) = toy_data(5, 60, 2);
        let params = ForestParams {
            n_trees: 3,
            min_leaf: x.len(),
            bootstrap: false,
            ..Default::default()
        };
        let forest = fit_forest(&x, &y, &params).unwrap();
        let cdf = predict_cdf(&forest, &[1.0, 1.0]);
        let mut sorted = y.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cdf.values, sorted);
        for &w in &cdf.weights {
            assert!((w - 1.0 / 60.0).abs() < 1e-15);
        }
    }

    #[test]
    fn forests_are_identical_across_worker_counts() {
        let (x, y) = toy_data(9, 150, 3);
        let params = ForestParams { n_trees: 8, min_leaf: 10, ..Default::default() };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool8 = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let f1 = pool1.install(|| fit_forest(&x, &y, &params)).unwrap();
        let f8 = pool8.install(|| fit_forest(&x, &y, &params)).unwrap();
        assert_eq!(f1, f8);
    }

    #[test]
    fn forest_binary_round_trips() {
        let (x, y) = toy_data(13, 80, 2);
        let params = ForestParams { n_trees: 4, min_leaf: 6, ..Default::default() };
        let forest = fit_forest(&x, &y, &params).unwrap();
        let path = std::env::temp_dir().join(format!("windpost_forest_{}.bin", std::process::id()));
        save_forest(&forest, &path).unwrap();
        let back = load_forest(&path).unwrap();
        assert_eq!(forest, back);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn empty_dataset_is_a_domain_error() {
        assert!(matches!(
            fit_forest(&[], &[], &ForestParams::default()),
            Err(Error::DomainError(_))
        ));
    }
}
