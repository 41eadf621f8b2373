//! Vocabularies and token datasets: edge memorization, path finding,
//! hardest-token supervision, tree-star splits and in-context examples.

mod io;
mod stream;

pub use io::Dataset;
pub use stream::Interleave;

use crate::error::{GeomemError, Result};
use crate::graph::{generate, Graph, TopologyTag};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

/// Special tokens, in id order after the node tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Special {
    Pause,
    Pad,
    Edge,
    Path,
    Fwd,
    Rev,
    Bos,
    Eos,
    Sep,
}

impl Special {
    pub const ALL: [Special; 9] = [
        Special::Pause,
        Special::Pad,
        Special::Edge,
        Special::Path,
        Special::Fwd,
        Special::Rev,
        Special::Bos,
        Special::Eos,
        Special::Sep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Special::Pause => "[PAUSE]",
            Special::Pad => "[PAD]",
            Special::Edge => "[EDGE]",
            Special::Path => "[PATH]",
            Special::Fwd => ">",
            Special::Rev => "<",
            Special::Bos => "[BOS]",
            Special::Eos => "[EOS]",
            Special::Sep => "[SEP]",
        }
    }
}

/// Node tokens `0..n_nodes` followed by the nine specials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    n_nodes: usize,
}

impl Vocab {
    pub const N_SPECIAL: usize = 9;

    pub fn new(n_nodes: usize) -> Self {
        Vocab { n_nodes }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn size(&self) -> usize {
        self.n_nodes + Self::N_SPECIAL
    }

    pub fn node(&self, id: usize) -> usize {
        debug_assert!(id < self.n_nodes);
        id
    }

    pub fn special(&self, s: Special) -> usize {
        self.n_nodes + s as usize
    }

    pub fn is_node(&self, token: usize) -> bool {
        token < self.n_nodes
    }

    /// Human-readable form of a token.
    pub fn describe(&self, token: usize) -> String {
        if token < self.n_nodes {
            token.to_string()
        } else if token < self.size() {
            Special::ALL[token - self.n_nodes].name().to_string()
        } else {
            format!("<oov:{token}>")
        }
    }
}

pub fn build_vocab(g: &Graph) -> Vocab {
    Vocab::new(g.n_nodes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    EdgeFwd,
    EdgeBwd,
    PathFwd,
    PathRev,
    FirstToken,
    InContext,
}

impl ExampleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExampleKind::EdgeFwd => "edge_fwd",
            ExampleKind::EdgeBwd => "edge_bwd",
            ExampleKind::PathFwd => "path_fwd",
            ExampleKind::PathRev => "path_rev",
            ExampleKind::FirstToken => "first_token",
            ExampleKind::InContext => "in_context",
        }
    }

    pub fn is_edge(self) -> bool {
        matches!(self, ExampleKind::EdgeFwd | ExampleKind::EdgeBwd)
    }
}

impl FromStr for ExampleKind {
    type Err = GeomemError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "edge_fwd" => ExampleKind::EdgeFwd,
            "edge_bwd" => ExampleKind::EdgeBwd,
            "path_fwd" => ExampleKind::PathFwd,
            "path_rev" => ExampleKind::PathRev,
            "first_token" => ExampleKind::FirstToken,
            "in_context" => ExampleKind::InContext,
            _ => return Err(GeomemError::Parse(format!("unknown example kind `{s}`"))),
        })
    }
}

impl fmt::Display for ExampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A token sequence with per-position loss mask. `loss_mask[t]` set means
/// token `t` is a prediction target (predicted from position `t - 1`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub loss_mask: Vec<bool>,
    pub kind: ExampleKind,
    /// Index of the first target-path token; the prefix is `tokens[..target_start]`.
    pub target_start: usize,
}

impl Example {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn prefix(&self) -> &[usize] {
        &self.tokens[..self.target_start]
    }

    pub fn target(&self) -> &[usize] {
        &self.tokens[self.target_start..]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeDir {
    Forward,
    Backward,
    Mixed,
}

impl FromStr for EdgeDir {
    type Err = GeomemError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fwd" | "forward" => EdgeDir::Forward,
            "bwd" | "backward" => EdgeDir::Backward,
            "mixed" => EdgeDir::Mixed,
            _ => return Err(GeomemError::Parse(format!("unknown edge direction `{s}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathDir {
    Forward,
    Reverse,
}

/// Which target positions carry loss in a path example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    FullPath,
    /// Only the first target position (the root in forward paths).
    FirstTokenOnly,
    /// Only the second target position: the arm decision `v1` in forward paths.
    DecisionToken,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub dir: PathDir,
    pub n_pause: usize,
    pub loss_mode: LossMode,
    /// Prepend BOS before the leaf prefix.
    #[serde(default)]
    pub bos: bool,
}

impl Default for PathSpec {
    fn default() -> Self {
        PathSpec {
            dir: PathDir::Forward,
            n_pause: 0,
            loss_mode: LossMode::FullPath,
            bos: false,
        }
    }
}

/// Train/test partition of a star graph's leaves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train_leaves: BTreeSet<usize>,
    pub test_leaves: BTreeSet<usize>,
    pub ratio: f64,
}

impl Split {
    /// Uniformly random partition with `round(ratio · |leaves|)` train leaves.
    pub fn random(g: &Graph, ratio: f64, seed: u64) -> Result<Split> {
        check_ratio(ratio)?;
        let mut leaves: Vec<usize> = g.leaves.iter().copied().collect();
        leaves.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (ratio * leaves.len() as f64).round() as usize;
        Ok(Split {
            train_leaves: leaves[..n_train].iter().copied().collect(),
            test_leaves: leaves[n_train..].iter().copied().collect(),
            ratio,
        })
    }

    fn validate(&self, g: &Graph) -> Result<()> {
        if !self.train_leaves.is_disjoint(&self.test_leaves) {
            return Err(GeomemError::Config("train and test leaves overlap".into()));
        }
        let union: BTreeSet<usize> = self
            .train_leaves
            .union(&self.test_leaves)
            .copied()
            .collect();
        if union != g.leaves {
            return Err(GeomemError::Config(
                "split does not cover the graph's leaves".into(),
            ));
        }
        Ok(())
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(GeomemError::param(
            "ratio",
            format!("{ratio} outside [0, 1]"),
        ));
    }
    Ok(())
}

/// One 2-token example per edge, loss on the second token.
pub fn edge_dataset(g: &Graph, v: &Vocab, dir: EdgeDir) -> Vec<Example> {
    let edge = |a: usize, b: usize, kind| Example {
        tokens: vec![v.node(a), v.node(b)],
        loss_mask: vec![false, true],
        kind,
        target_start: 1,
    };
    let fwd = || {
        g.edges_directed
            .iter()
            .map(|&(a, b)| edge(a, b, ExampleKind::EdgeFwd))
    };
    let bwd = || {
        g.edges_directed
            .iter()
            .map(|&(a, b)| edge(b, a, ExampleKind::EdgeBwd))
    };
    match dir {
        EdgeDir::Forward => fwd().collect(),
        EdgeDir::Backward => bwd().collect(),
        EdgeDir::Mixed => fwd().chain(bwd()).collect(),
    }
}

/// Path-finding examples for every arm, partitioned by `split`.
///
/// Forward tokens are `(leaf, PAUSE×n, root, v1, …, leaf)`; reverse tokens are
/// `(leaf, PAUSE×n, leaf, …, v1, root)`.
pub fn path_dataset(
    g: &Graph,
    v: &Vocab,
    spec: &PathSpec,
    split: &Split,
) -> Result<(Vec<Example>, Vec<Example>)> {
    if !g.topology.is_star() {
        return Err(GeomemError::UnsupportedTopology {
            op: "path_dataset",
            topology: g.topology.to_string(),
        });
    }
    split.validate(g)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for arm in &g.arms {
        let leaf = *arm.last().unwrap();
        let ex = path_example(v, arm, spec);
        if split.train_leaves.contains(&leaf) {
            train.push(ex);
        } else {
            test.push(ex);
        }
    }
    Ok((train, test))
}

fn path_example(v: &Vocab, arm: &[usize], spec: &PathSpec) -> Example {
    let leaf = *arm.last().unwrap();
    let mut tokens = Vec::with_capacity(arm.len() * 2 + spec.n_pause + 1);
    if spec.bos {
        tokens.push(v.special(Special::Bos));
    }
    tokens.push(v.node(leaf));
    tokens.extend(std::iter::repeat_n(v.special(Special::Pause), spec.n_pause));
    let target_start = tokens.len();
    match spec.dir {
        PathDir::Forward => tokens.extend(arm.iter().map(|&n| v.node(n))),
        PathDir::Reverse => tokens.extend(arm.iter().rev().map(|&n| v.node(n))),
    }
    let mut loss_mask = vec![false; tokens.len()];
    let kind = match spec.loss_mode {
        LossMode::FullPath => {
            loss_mask[target_start..].iter_mut().for_each(|m| *m = true);
            match spec.dir {
                PathDir::Forward => ExampleKind::PathFwd,
                PathDir::Reverse => ExampleKind::PathRev,
            }
        }
        LossMode::FirstTokenOnly => {
            loss_mask[target_start] = true;
            ExampleKind::FirstToken
        }
        LossMode::DecisionToken => {
            loss_mask[target_start + 1] = true;
            ExampleKind::FirstToken
        }
    };
    Example {
        tokens,
        loss_mask,
        kind,
        target_start,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeSplitMode {
    SplitAtFirstToken,
    SplitAtLeaf,
}

/// Leaf split for tree-star graphs: by whole root-child subtree, or by leaf.
pub fn tree_star_split(g: &Graph, mode: TreeSplitMode, ratio: f64, seed: u64) -> Result<Split> {
    if !matches!(g.topology, TopologyTag::TreeStar { .. }) {
        return Err(GeomemError::UnsupportedTopology {
            op: "tree_star_split",
            topology: g.topology.to_string(),
        });
    }
    check_ratio(ratio)?;
    match mode {
        TreeSplitMode::SplitAtLeaf => Split::random(g, ratio, seed),
        TreeSplitMode::SplitAtFirstToken => {
            let labels = g.arm_labels();
            let n_sub = labels.iter().flatten().max().map_or(0, |m| m + 1);
            let mut subs: Vec<usize> = (0..n_sub).collect();
            subs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_train = (ratio * n_sub as f64).round() as usize;
            let train_subs: BTreeSet<usize> = subs[..n_train].iter().copied().collect();
            let (train_leaves, test_leaves) = g
                .leaves
                .iter()
                .partition(|&&leaf| train_subs.contains(&labels[leaf].unwrap()));
            Ok(Split {
                train_leaves,
                test_leaves,
                ratio,
            })
        }
    }
}

/// A fresh path-star graph serialised as an in-context prompt.
///
/// Node labels are drawn without replacement from `0..vocab_pool`; tokens are
/// the shuffled edge bigrams joined by SEP, then `SEP root goal`, then the
/// root→goal path (the only positions with loss). Specials follow the pool in
/// `Vocab::new(vocab_pool)`.
pub fn in_context_example(d: usize, ell: usize, vocab_pool: usize, seed: u64) -> Result<Example> {
    let g = generate(TopologyTag::PathStar { d, ell }, seed)?;
    if vocab_pool < g.n_nodes {
        return Err(GeomemError::param(
            "vocab_pool",
            format!("{vocab_pool} < {} nodes", g.n_nodes),
        ));
    }
    let v = Vocab::new(vocab_pool);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut pool: Vec<usize> = (0..vocab_pool).collect();
    pool.shuffle(&mut rng);
    let label = &pool[..g.n_nodes];

    let mut edges: Vec<(usize, usize)> = g.edges_directed.clone();
    edges.shuffle(&mut rng);
    let sep = v.special(Special::Sep);
    let mut tokens = Vec::new();
    for (i, &(a, b)) in edges.iter().enumerate() {
        if i > 0 {
            tokens.push(sep);
        }
        tokens.push(label[a]);
        tokens.push(label[b]);
    }
    let arm = &g.arms[rand::Rng::random_range(&mut rng, 0..d)];
    tokens.push(sep);
    tokens.push(label[arm[0]]);
    tokens.push(label[*arm.last().unwrap()]);
    let target_start = tokens.len();
    tokens.extend(arm.iter().map(|&n| label[n]));
    let mut loss_mask = vec![false; tokens.len()];
    loss_mask[target_start..].iter_mut().for_each(|m| *m = true);
    Ok(Example {
        tokens,
        loss_mask,
        kind: ExampleKind::InContext,
        target_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(d: usize, ell: usize) -> Graph {
        generate(TopologyTag::PathStar { d, ell }, 11).unwrap()
    }

    #[test]
    fn vocab_sizes() {
        assert_eq!(build_vocab(&ps(4, 4)).size(), 22);
        assert_eq!(build_vocab(&ps(10_000, 6)).size(), 50_010);
        let c = generate(TopologyTag::Cycle { n: 15 }, 0).unwrap();
        assert_eq!(build_vocab(&c).size(), 24);
        let v = Vocab::new(13);
        let ids: BTreeSet<usize> = Special::ALL.iter().map(|&s| v.special(s)).collect();
        assert_eq!(ids, (13..22).collect());
    }

    #[test]
    fn edge_counts_and_masks() {
        let g = ps(4, 4);
        let v = build_vocab(&g);
        let mixed = edge_dataset(&g, &v, EdgeDir::Mixed);
        assert_eq!(mixed.len(), 24);
        assert!(mixed.iter().all(|e| e.loss_mask == [false, true]));
        let pairs: BTreeSet<(usize, usize)> =
            mixed.iter().map(|e| (e.tokens[0], e.tokens[1])).collect();
        assert!(pairs.iter().all(|&(a, b)| pairs.contains(&(b, a))));
        let c = generate(TopologyTag::Cycle { n: 15 }, 0).unwrap();
        assert_eq!(
            edge_dataset(&c, &build_vocab(&c), EdgeDir::Forward).len(),
            15
        );
    }

    #[test]
    fn forward_paths_layout() {
        let g = ps(4, 4);
        let v = build_vocab(&g);
        let split = Split::random(&g, 0.75, 3).unwrap();
        assert_eq!((split.train_leaves.len(), split.test_leaves.len()), (3, 1));
        let spec = PathSpec {
            n_pause: 2,
            ..PathSpec::default()
        };
        let (train, test) = path_dataset(&g, &v, &spec, &split).unwrap();
        assert_eq!((train.len(), test.len()), (3, 1));
        let pause = v.special(Special::Pause);
        for ex in train.iter().chain(&test) {
            assert_eq!(ex.len(), 7);
            assert_eq!(ex.loss_mask, [false, false, false, true, true, true, true]);
            // stripping pauses and the leaf prefix recovers the arm
            let stripped: Vec<usize> = ex.tokens[1..]
                .iter()
                .copied()
                .filter(|&t| t != pause)
                .collect();
            assert!(g.arms.iter().any(|a| *a == stripped));
            assert_eq!(ex.tokens[0], *stripped.last().unwrap());
            for (t, m) in ex.tokens.iter().zip(&ex.loss_mask) {
                if *t == pause {
                    assert!(!m);
                }
            }
        }
    }

    #[test]
    fn first_token_masks_sum_to_one() {
        let g = ps(4, 4);
        let v = build_vocab(&g);
        let split = Split::random(&g, 0.75, 3).unwrap();
        for (mode, offset) in [(LossMode::FirstTokenOnly, 0), (LossMode::DecisionToken, 1)] {
            let spec = PathSpec {
                n_pause: 2,
                loss_mode: mode,
                ..PathSpec::default()
            };
            let (train, _) = path_dataset(&g, &v, &spec, &split).unwrap();
            for ex in &train {
                assert_eq!(ex.loss_mask.iter().filter(|&&m| m).count(), 1);
                assert!(ex.loss_mask[ex.target_start + offset]);
                assert_eq!(ex.kind, ExampleKind::FirstToken);
            }
        }
        let root = g.root.unwrap();
        let spec = PathSpec {
            loss_mode: LossMode::FirstTokenOnly,
            ..PathSpec::default()
        };
        let (train, _) = path_dataset(&g, &v, &spec, &split).unwrap();
        assert!(train
            .iter()
            .all(|e| e.tokens[e.loss_mask.iter().position(|&m| m).unwrap()] == root));
    }

    #[test]
    fn reverse_paths_end_at_root() {
        let g = ps(3, 4);
        let v = build_vocab(&g);
        let split = Split::random(&g, 1.0, 0).unwrap();
        let spec = PathSpec {
            dir: PathDir::Reverse,
            n_pause: 1,
            ..PathSpec::default()
        };
        let (train, test) = path_dataset(&g, &v, &spec, &split).unwrap();
        assert!(test.is_empty());
        for ex in &train {
            assert_eq!(*ex.tokens.last().unwrap(), g.root.unwrap());
            assert_eq!(ex.tokens[0], ex.tokens[ex.target_start]);
        }
    }

    #[test]
    fn non_star_rejected() {
        let c = generate(TopologyTag::Cycle { n: 6 }, 0).unwrap();
        let split = Split {
            train_leaves: BTreeSet::new(),
            test_leaves: BTreeSet::new(),
            ratio: 1.0,
        };
        let r = path_dataset(&c, &build_vocab(&c), &PathSpec::default(), &split);
        assert!(matches!(r, Err(GeomemError::UnsupportedTopology { .. })));
        assert!(tree_star_split(&c, TreeSplitMode::SplitAtLeaf, 0.5, 0).is_err());
    }

    #[test]
    fn tree_star_splits() {
        let g = generate(TopologyTag::TreeStar { d: 4, ell: 4 }, 2).unwrap();
        let s = tree_star_split(&g, TreeSplitMode::SplitAtFirstToken, 0.75, 5).unwrap();
        assert_eq!((s.train_leaves.len(), s.test_leaves.len()), (12, 4));
        assert!(s.train_leaves.is_disjoint(&s.test_leaves));
        let first_hop =
            |leaf: usize| g.arms.iter().find(|a| *a.last().unwrap() == leaf).unwrap()[1];
        let train_first: BTreeSet<usize> = s.train_leaves.iter().map(|&l| first_hop(l)).collect();
        assert!(s
            .test_leaves
            .iter()
            .all(|&l| !train_first.contains(&first_hop(l))));

        let g = generate(TopologyTag::TreeStar { d: 2, ell: 6 }, 2).unwrap();
        assert_eq!(g.leaves.len(), 32);
        let s = tree_star_split(&g, TreeSplitMode::SplitAtLeaf, 0.5, 1).unwrap();
        assert_eq!((s.train_leaves.len(), s.test_leaves.len()), (16, 16));
    }

    #[test]
    fn in_context_structure() {
        let a = in_context_example(2, 5, 40, 1).unwrap();
        let b = in_context_example(2, 5, 40, 2).unwrap();
        assert_ne!(a.tokens, b.tokens);
        let sep = Vocab::new(40).special(Special::Sep);
        for ex in [&a, &b] {
            // adjacency segment: 8 bigrams joined by 7 separators, then SEP root goal
            let adj = &ex.tokens[..ex.target_start - 3];
            assert_eq!(adj.len(), 8 * 2 + 7);
            assert_eq!(adj.iter().filter(|&&t| t == sep).count(), 7);
            assert_eq!(ex.tokens[ex.target_start - 3], sep);
            assert_eq!(ex.target().len(), 5);
            assert_eq!(ex.tokens[ex.target_start - 2], ex.target()[0]);
            assert_eq!(ex.tokens[ex.target_start - 1], *ex.target().last().unwrap());
            assert_eq!(ex.loss_mask.iter().filter(|&&m| m).count(), 5);
        }
        assert!(matches!(
            in_context_example(2, 5, 8, 0),
            Err(GeomemError::Parameter {
                field: "vocab_pool",
                ..
            })
        ));
    }
}
