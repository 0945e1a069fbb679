//! Token-output decision trees over fixed-length windows of embedded tokens.
//!
//! A [`DecisionTree`] reads an `L x d` window (L tokens, d coordinates each)
//! and routes a sample from the root to a leaf: at a split on feature
//! `(position, coord)` with threshold `t`, the sample goes right iff
//! `window[position][coord] >= t`, else left. Leaves carry token ids.
//!
//! [`SlidingWindowTree`] extends a fixed-window tree to arbitrary-length
//! token sequences (pad on the left, truncate to the last `L` tokens), and
//! [`run_ardt`] applies such a tree autoregressively: each emitted token is
//! appended to the sequence before the next evaluation.

pub mod io;
pub mod regression;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer-coded token.
pub type TokenId = u32;

/// A split feature: one coordinate of one window position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    /// Window position in `[0, L)`. Position `L - 1` is the most recent token.
    pub position: usize,
    /// Coordinate of the token embedding, in `[0, d)`.
    pub coord: usize,
}

/// One node of a token-output decision tree, stored in an arena.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: Feature,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        token: TokenId,
    },
}

/// Binary decision tree mapping an `L x d` window to a token id.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
    window_len: usize,
    dim: usize,
}

impl DecisionTree {
    /// A tree with a single leaf emitting `token`.
    pub fn leaf(window_len: usize, dim: usize, token: TokenId) -> Self {
        DecisionTree {
            nodes: vec![TreeNode::Leaf { token }],
            window_len,
            dim,
        }
    }

    /// Builds a tree from an arena with root at index 0, checking that the
    /// arena is a well-formed binary tree: child indices in bounds, every
    /// node reachable from the root exactly once, features within the window.
    pub fn from_nodes(nodes: Vec<TreeNode>, window_len: usize, dim: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::MalformedTree("empty node arena".into()));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        let mut visited = 0usize;
        while let Some(i) = stack.pop() {
            if i >= nodes.len() {
                return Err(Error::MalformedTree(format!("child index {i} out of bounds")));
            }
            if seen[i] {
                return Err(Error::MalformedTree(format!("node {i} reached twice")));
            }
            seen[i] = true;
            visited += 1;
            if let TreeNode::Split { feature, left, right, .. } = &nodes[i] {
                if feature.position >= window_len || feature.coord >= dim {
                    return Err(Error::MalformedTree(format!(
                        "feature ({}, {}) outside {window_len} x {dim} window",
                        feature.position, feature.coord
                    )));
                }
                stack.push(*left);
                stack.push(*right);
            }
        }
        if visited != nodes.len() {
            return Err(Error::MalformedTree(format!(
                "{} of {} nodes unreachable from root",
                nodes.len() - visited,
                nodes.len()
            )));
        }
        Ok(DecisionTree { nodes, window_len, dim })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Number of leaves (the tree's size).
    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    /// Total node count (splits plus leaves).
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Longest root-to-leaf path, counted in edges. A single leaf has depth 0.
    pub fn depth(&self) -> usize {
        self.depth_from(0)
    }

    fn depth_from(&self, idx: usize) -> usize {
        match &self.nodes[idx] {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => {
                1 + self.depth_from(*left).max(self.depth_from(*right))
            }
        }
    }

    /// Routes `window` (row-major, `window[position * dim + coord]`) to a leaf
    /// and returns its token. Runtime is proportional to the path depth.
    pub fn evaluate(&self, window: &[f64]) -> Result<TokenId> {
        if window.len() != self.window_len * self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.window_len * self.dim,
                got: window.len(),
            });
        }
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { token } => return Ok(*token),
                TreeNode::Split { feature, threshold, left, right } => {
                    let v = window[feature.position * self.dim + feature.coord];
                    idx = if v >= *threshold { *right } else { *left };
                }
            }
        }
    }

    /// Returns a copy with the split at arena index `node` replaced by a leaf
    /// emitting `token`. Subtrees hanging off the removed split become
    /// unreachable and are dropped. Used to study trees that query fewer
    /// input positions than the original.
    pub fn with_collapsed_split(&self, node: usize, token: TokenId) -> Result<Self> {
        if node >= self.nodes.len() {
            return Err(Error::MalformedTree(format!("node index {node} out of bounds")));
        }
        if matches!(self.nodes[node], TreeNode::Leaf { .. }) {
            return Err(Error::MalformedTree(format!("node {node} is already a leaf")));
        }
        let mut nodes = self.nodes.clone();
        nodes[node] = TreeNode::Leaf { token };
        // Rebuild the arena keeping only nodes reachable from the root.
        let mut remap = vec![usize::MAX; nodes.len()];
        let mut kept: Vec<TreeNode> = Vec::new();
        let mut stack = vec![0usize];
        let mut order = Vec::new();
        while let Some(i) = stack.pop() {
            if remap[i] != usize::MAX {
                continue;
            }
            remap[i] = kept.len();
            kept.push(nodes[i].clone());
            order.push(i);
            if let TreeNode::Split { left, right, .. } = &nodes[i] {
                stack.push(*left);
                stack.push(*right);
            }
        }
        for n in kept.iter_mut() {
            if let TreeNode::Split { left, right, .. } = n {
                *left = remap[*left];
                *right = remap[*right];
            }
        }
        DecisionTree::from_nodes(kept, self.window_len, self.dim)
    }

    /// Indices of all split nodes in the arena.
    pub fn split_indices(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| matches!(n, TreeNode::Split { .. }).then_some(i))
            .collect()
    }

    /// Token of the first leaf found under `node` (leftmost descent).
    pub fn leftmost_leaf_token(&self, node: usize) -> TokenId {
        let mut idx = node;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { token } => return *token,
                TreeNode::Split { left, .. } => idx = *left,
            }
        }
    }
}

/// Maps token ids to fixed-width embedding rows.
pub trait TokenEmbedder {
    fn dim(&self) -> usize;
    /// Writes the embedding of `token` into `out` (length `dim()`).
    fn embed_into(&self, token: TokenId, out: &mut [f64]);
}

/// A fixed-window tree extended to arbitrary-length sequences: shorter inputs
/// are left-padded with `pad`, longer inputs are truncated to the last `L` tokens.
#[derive(Debug, Clone)]
pub struct SlidingWindowTree {
    pub tree: DecisionTree,
    pub pad: TokenId,
}

impl SlidingWindowTree {
    pub fn new(tree: DecisionTree, pad: TokenId) -> Self {
        SlidingWindowTree { tree, pad }
    }

    /// Materializes the window the tree sees for `sequence`: the last `L`
    /// tokens, left-padded with the pad token when the sequence is shorter.
    pub fn window_tokens(&self, sequence: &[TokenId]) -> Vec<TokenId> {
        let len = self.tree.window_len();
        let mut window = Vec::with_capacity(len);
        if sequence.len() >= len {
            window.extend_from_slice(&sequence[sequence.len() - len..]);
        } else {
            window.resize(len - sequence.len(), self.pad);
            window.extend_from_slice(sequence);
        }
        window
    }

    /// Evaluates the tree on a token sequence of any length.
    pub fn evaluate_sequence(
        &self,
        embedder: &impl TokenEmbedder,
        sequence: &[TokenId],
    ) -> Result<TokenId> {
        let len = self.tree.window_len();
        let dim = self.tree.dim();
        if embedder.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: embedder.dim() });
        }
        let tokens = self.window_tokens(sequence);
        let mut window = vec![0.0; len * dim];
        for (p, tok) in tokens.iter().enumerate() {
            embedder.embed_into(*tok, &mut window[p * dim..(p + 1) * dim]);
        }
        self.tree.evaluate(&window)
    }
}

/// Runs `tree` as an autoregressive next-token predictor: starting from
/// `prompt`, evaluates the tree, appends the emitted token, and repeats
/// `steps` times. Returns the `steps` generated tokens.
pub fn run_ardt(
    tree: &SlidingWindowTree,
    embedder: &impl TokenEmbedder,
    prompt: &[TokenId],
    steps: usize,
) -> Result<Vec<TokenId>> {
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be >= 1".into()));
    }
    let mut sequence = prompt.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let token = tree.evaluate_sequence(embedder, &sequence)?;
        sequence.push(token);
        out.push(token);
    }
    Ok(out)
}
