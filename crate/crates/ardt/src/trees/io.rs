//! Versioned on-disk model format.
//!
//! Models are stored as self-describing JSON with a fixed header and node
//! records in preorder (a split record is followed by its full left subtree,
//! then its full right subtree), so files are portable across
//! implementations. Field names are part of the format and documented in the
//! project README.
//!
//! Token tree (`"kind": "token_tree"`):
//! `format_version`, `kind`, `window_len`, `dim`, `pad_token`, `nodes` where
//! each node is `{"op":"split","position":..,"coord":..,"threshold":..}` or
//! `{"op":"leaf","token":..}`.
//!
//! Regression ensemble (`"kind": "regression_ensemble"`):
//! `format_version`, `kind`, `input_dim`, `output_dim`, `shrinkage`, `base`,
//! `trees`, each tree `{"nodes":[..]}` with records
//! `{"op":"split","feature":..,"threshold":..,"gain":..}` or
//! `{"op":"leaf","value":[..]}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trees::regression::{RegNode, RegressionEnsemble, RegressionTree};
use crate::trees::{DecisionTree, Feature, SlidingWindowTree, TokenId, TreeNode};

/// Version written to and accepted from model files.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum TokenNodeRecord {
    Split { position: usize, coord: usize, threshold: f64 },
    Leaf { token: TokenId },
}

#[derive(Serialize, Deserialize)]
struct TokenTreeFile {
    format_version: u32,
    kind: String,
    window_len: usize,
    dim: usize,
    pad_token: TokenId,
    nodes: Vec<TokenNodeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum RegNodeRecord {
    Split { feature: usize, threshold: f64, gain: f64 },
    Leaf { value: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
struct RegTreeRecord {
    nodes: Vec<RegNodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleFile {
    format_version: u32,
    kind: String,
    input_dim: usize,
    output_dim: usize,
    shrinkage: f64,
    base: Vec<f64>,
    trees: Vec<RegTreeRecord>,
}

fn check_header(version: u32, kind: &str, expected_kind: &str) -> Result<()> {
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format_version {version}, expected {MODEL_FORMAT_VERSION}"
        )));
    }
    if kind != expected_kind {
        return Err(Error::ModelFormat(format!(
            "unexpected kind {kind:?}, expected {expected_kind:?}"
        )));
    }
    Ok(())
}

fn token_preorder(tree: &DecisionTree, idx: usize, out: &mut Vec<TokenNodeRecord>) {
    match &tree.nodes()[idx] {
        TreeNode::Leaf { token } => out.push(TokenNodeRecord::Leaf { token: *token }),
        TreeNode::Split { feature, threshold, left, right } => {
            out.push(TokenNodeRecord::Split {
                position: feature.position,
                coord: feature.coord,
                threshold: *threshold,
            });
            token_preorder(tree, *left, out);
            token_preorder(tree, *right, out);
        }
    }
}

fn token_from_preorder(
    records: &[TokenNodeRecord],
    cursor: &mut usize,
    nodes: &mut Vec<TreeNode>,
) -> Result<usize> {
    let record = records
        .get(*cursor)
        .ok_or_else(|| Error::ModelFormat("truncated preorder node list".into()))?;
    *cursor += 1;
    match record {
        TokenNodeRecord::Leaf { token } => {
            nodes.push(TreeNode::Leaf { token: *token });
            Ok(nodes.len() - 1)
        }
        TokenNodeRecord::Split { position, coord, threshold } => {
            let slot = nodes.len();
            nodes.push(TreeNode::Leaf { token: 0 }); // placeholder
            let left = token_from_preorder(records, cursor, nodes)?;
            let right = token_from_preorder(records, cursor, nodes)?;
            nodes[slot] = TreeNode::Split {
                feature: Feature { position: *position, coord: *coord },
                threshold: *threshold,
                left,
                right,
            };
            Ok(slot)
        }
    }
}

pub fn token_tree_to_json(tree: &SlidingWindowTree) -> String {
    let mut nodes = Vec::with_capacity(tree.tree.num_nodes());
    token_preorder(&tree.tree, 0, &mut nodes);
    let file = TokenTreeFile {
        format_version: MODEL_FORMAT_VERSION,
        kind: "token_tree".into(),
        window_len: tree.tree.window_len(),
        dim: tree.tree.dim(),
        pad_token: tree.pad,
        nodes,
    };
    serde_json::to_string_pretty(&file).expect("token tree serialization cannot fail")
}

pub fn token_tree_from_json(text: &str) -> Result<SlidingWindowTree> {
    let file: TokenTreeFile = serde_json::from_str(text)?;
    check_header(file.format_version, &file.kind, "token_tree")?;
    let mut nodes = Vec::with_capacity(file.nodes.len());
    let mut cursor = 0usize;
    token_from_preorder(&file.nodes, &mut cursor, &mut nodes)?;
    if cursor != file.nodes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing node records after the preorder tree",
            file.nodes.len() - cursor
        )));
    }
    let tree = DecisionTree::from_nodes(nodes, file.window_len, file.dim)?;
    Ok(SlidingWindowTree::new(tree, file.pad_token))
}

fn reg_preorder(tree: &RegressionTree, idx: usize, out: &mut Vec<RegNodeRecord>) {
    match &tree.nodes()[idx] {
        RegNode::Leaf { value } => out.push(RegNodeRecord::Leaf { value: value.clone() }),
        RegNode::Split { feature, threshold, gain, left, right } => {
            out.push(RegNodeRecord::Split {
                feature: *feature,
                threshold: *threshold,
                gain: *gain,
            });
            reg_preorder(tree, *left, out);
            reg_preorder(tree, *right, out);
        }
    }
}

fn reg_from_preorder(
    records: &[RegNodeRecord],
    cursor: &mut usize,
    nodes: &mut Vec<RegNode>,
    output_dim: usize,
) -> Result<usize> {
    let record = records
        .get(*cursor)
        .ok_or_else(|| Error::ModelFormat("truncated preorder node list".into()))?;
    *cursor += 1;
    match record {
        RegNodeRecord::Leaf { value } => {
            if value.len() != output_dim {
                return Err(Error::ModelFormat(format!(
                    "leaf value of length {}, expected {output_dim}",
                    value.len()
                )));
            }
            nodes.push(RegNode::Leaf { value: value.clone() });
            Ok(nodes.len() - 1)
        }
        RegNodeRecord::Split { feature, threshold, gain } => {
            let slot = nodes.len();
            nodes.push(RegNode::Leaf { value: Vec::new() });
            let left = reg_from_preorder(records, cursor, nodes, output_dim)?;
            let right = reg_from_preorder(records, cursor, nodes, output_dim)?;
            nodes[slot] = RegNode::Split {
                feature: *feature,
                threshold: *threshold,
                gain: *gain,
                left,
                right,
            };
            Ok(slot)
        }
    }
}

pub fn ensemble_to_json(ensemble: &RegressionEnsemble) -> String {
    let trees = ensemble
        .trees()
        .iter()
        .map(|t| {
            let mut nodes = Vec::with_capacity(t.num_nodes());
            reg_preorder(t, 0, &mut nodes);
            RegTreeRecord { nodes }
        })
        .collect();
    let file = EnsembleFile {
        format_version: MODEL_FORMAT_VERSION,
        kind: "regression_ensemble".into(),
        input_dim: ensemble.input_dim(),
        output_dim: ensemble.output_dim(),
        shrinkage: ensemble.shrinkage(),
        base: ensemble.base().to_vec(),
        trees,
    };
    serde_json::to_string(&file).expect("ensemble serialization cannot fail")
}

pub fn ensemble_from_json(text: &str) -> Result<RegressionEnsemble> {
    let file: EnsembleFile = serde_json::from_str(text)?;
    check_header(file.format_version, &file.kind, "regression_ensemble")?;
    if file.base.len() != file.output_dim {
        return Err(Error::ModelFormat(format!(
            "base vector of length {}, expected {}",
            file.base.len(),
            file.output_dim
        )));
    }
    let mut trees = Vec::with_capacity(file.trees.len());
    for record in &file.trees {
        let mut nodes = Vec::with_capacity(record.nodes.len());
        let mut cursor = 0usize;
        reg_from_preorder(&record.nodes, &mut cursor, &mut nodes, file.output_dim)?;
        if cursor != record.nodes.len() {
            return Err(Error::ModelFormat("trailing node records in tree".into()));
        }
        trees.push(RegressionTree::from_parts(nodes, file.input_dim, file.output_dim));
    }
    RegressionEnsemble::new(file.base, file.shrinkage, trees, file.input_dim)
}

pub fn save_token_tree(path: impl AsRef<Path>, tree: &SlidingWindowTree) -> Result<()> {
    fs::write(path, token_tree_to_json(tree))?;
    Ok(())
}

pub fn load_token_tree(path: impl AsRef<Path>) -> Result<SlidingWindowTree> {
    token_tree_from_json(&fs::read_to_string(path)?)
}

pub fn save_ensemble(path: impl AsRef<Path>, ensemble: &RegressionEnsemble) -> Result<()> {
    fs::write(path, ensemble_to_json(ensemble))?;
    Ok(())
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<RegressionEnsemble> {
    ensemble_from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::regression::{fit_ensemble, BoostParams};

    #[test]
    fn token_tree_round_trips() {
        let tree = DecisionTree::from_nodes(
            vec![
                TreeNode::Split {
                    feature: Feature { position: 1, coord: 0 },
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                TreeNode::Leaf { token: 3 },
                TreeNode::Split {
                    feature: Feature { position: 0, coord: 1 },
                    threshold: -1.25,
                    left: 3,
                    right: 4,
                },
                TreeNode::Leaf { token: 4 },
                TreeNode::Leaf { token: 5 },
            ],
            2,
            2,
        )
        .unwrap();
        let swt = SlidingWindowTree::new(tree, 9);
        let json = token_tree_to_json(&swt);
        let back = token_tree_from_json(&json).unwrap();
        assert_eq!(back.pad, 9);
        assert_eq!(back.tree.num_leaves(), 3);
        for window in [[0.0, 0.0, 0.0, 0.0], [0.0, -2.0, 1.0, 0.0], [1.0, 5.0, 0.6, 0.0]] {
            assert_eq!(back.tree.evaluate(&window).unwrap(), swt.tree.evaluate(&window).unwrap());
        }
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let json = r#"{"format_version": 99, "kind": "token_tree", "window_len": 1,
                       "dim": 1, "pad_token": 0, "nodes": [{"op": "leaf", "token": 0}]}"#;
        assert!(matches!(token_tree_from_json(json), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let json = r#"{"format_version": 1, "kind": "token_tree", "window_len": 1,
                       "dim": 1, "pad_token": 0, "nodes": [{"op": "leaf", "token": 0}]}"#;
        assert!(ensemble_from_json(json).is_err());
    }

    #[test]
    fn ensemble_round_trips_bit_exact() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut s = 42u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..64 {
            let a = next();
            let b = next();
            x.push(vec![a, b, next()]);
            y.push(vec![a + b, a - b]);
        }
        let fit = fit_ensemble(&x, &y, &BoostParams { rounds: 5, ..Default::default() }).unwrap();
        let json = ensemble_to_json(&fit.ensemble);
        let back = ensemble_from_json(&json).unwrap();
        for _ in 0..100 {
            let probe = vec![next() * 2.0 - 0.5, next() * 2.0 - 0.5, next()];
            let a = fit.ensemble.predict(&probe).unwrap();
            let b = back.predict(&probe).unwrap();
            assert_eq!(a, b, "round-trip changed a prediction");
        }
    }
}
