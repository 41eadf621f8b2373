//! Graph families (path-star, tree-star, grid, cycle, irregular) and their
//! normalised random-walk Laplacian.

mod io;
mod spectrum;

pub use spectrum::{fiedler_set, spectrum, symmetric_eigen, EigenSystem};

use crate::error::{GeomemError, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

/// Which family a graph belongs to, with its size parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TopologyTag {
    /// Root with `d` disjoint arms of `ell` nodes each (root included).
    PathStar {
        d: usize,
        ell: usize,
    },
    /// Root with `d` children; every further internal node has two children;
    /// every root→leaf path has `ell` nodes.
    TreeStar {
        d: usize,
        ell: usize,
    },
    Grid {
        rows: usize,
        cols: usize,
    },
    Cycle {
        n: usize,
    },
    Irregular {
        preset: usize,
    },
}

impl TopologyTag {
    pub fn is_star(&self) -> bool {
        matches!(
            self,
            TopologyTag::PathStar { .. } | TopologyTag::TreeStar { .. }
        )
    }
}

impl fmt::Display for TopologyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyTag::PathStar { d, ell } => write!(f, "path_star({d},{ell})"),
            TopologyTag::TreeStar { d, ell } => write!(f, "tree_star({d},{ell})"),
            TopologyTag::Grid { rows, cols } => write!(f, "grid({rows},{cols})"),
            TopologyTag::Cycle { n } => write!(f, "cycle({n})"),
            TopologyTag::Irregular { preset } => write!(f, "irregular({preset})"),
        }
    }
}

impl FromStr for TopologyTag {
    type Err = GeomemError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || GeomemError::Parse(format!("bad topology tag `{s}`"));
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let name = &s[..open];
        let args: Vec<usize> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let tag = match (name, args.as_slice()) {
            ("path_star", [d, ell]) => TopologyTag::PathStar { d: *d, ell: *ell },
            ("tree_star", [d, ell]) => TopologyTag::TreeStar { d: *d, ell: *ell },
            ("grid", [rows, cols]) => TopologyTag::Grid {
                rows: *rows,
                cols: *cols,
            },
            ("cycle", [n]) => TopologyTag::Cycle { n: *n },
            ("irregular", [preset]) => TopologyTag::Irregular { preset: *preset },
            _ => return Err(bad()),
        };
        Ok(tag)
    }
}

impl From<TopologyTag> for String {
    fn from(t: TopologyTag) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for TopologyTag {
    type Error = GeomemError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A labelled graph. Node ids are `0..n_nodes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub n_nodes: usize,
    pub root: Option<usize>,
    /// Parent→child pairs for star families; a fixed orientation otherwise.
    pub edges_directed: Vec<(usize, usize)>,
    /// Root→leaf node sequences (star families only).
    pub arms: Vec<Vec<usize>>,
    pub leaves: BTreeSet<usize>,
    pub topology: TopologyTag,
}

/// Fixed irregular preset: a 5-node tree plus a 6-node unicyclic component.
const IRREGULAR_PRESET_0: (usize, &[(usize, usize)]) = (
    11,
    &[
        // tree: 0-1-2-3 with 4 hanging off 2
        (0, 1),
        (1, 2),
        (2, 3),
        (2, 4),
        // triangle 5-6-7, tail 7-8-9, pendant 6-10
        (5, 6),
        (6, 7),
        (5, 7),
        (7, 8),
        (8, 9),
        (6, 10),
    ],
);

/// Builds a graph of the given family. Node ids are relabelled by a
/// seed-deterministic permutation so that an id carries no positional meaning.
pub fn generate(spec: TopologyTag, seed: u64) -> Result<Graph> {
    // canonical construction first, relabel afterwards
    let (n, root, edges, arms) = match spec {
        TopologyTag::PathStar { d, ell } => {
            if d < 2 {
                return Err(GeomemError::param("d", "path_star requires d >= 2"));
            }
            if ell < 2 {
                return Err(GeomemError::param("ell", "path_star requires ell >= 2"));
            }
            let n = 1 + d * (ell - 1);
            let mut edges = Vec::with_capacity(n - 1);
            let mut arms = Vec::with_capacity(d);
            for a in 0..d {
                let mut arm = vec![0];
                for k in 0..ell - 1 {
                    let v = 1 + a * (ell - 1) + k;
                    edges.push((*arm.last().unwrap(), v));
                    arm.push(v);
                }
                arms.push(arm);
            }
            (n, Some(0), edges, arms)
        }
        TopologyTag::TreeStar { d, ell } => {
            if d < 1 {
                return Err(GeomemError::param("d", "tree_star requires d >= 1"));
            }
            if ell < 2 {
                return Err(GeomemError::param("ell", "tree_star requires ell >= 2"));
            }
            if ell > 24 {
                return Err(GeomemError::param("ell", "tree_star depth too large"));
            }
            let mut edges = Vec::new();
            let mut next = 1usize;
            let mut frontier: Vec<Vec<usize>> = Vec::new();
            for _ in 0..d {
                edges.push((0, next));
                frontier.push(vec![0, next]);
                next += 1;
            }
            for _ in 2..ell {
                let mut grown = Vec::with_capacity(frontier.len() * 2);
                for path in frontier {
                    let tip = *path.last().unwrap();
                    for _ in 0..2 {
                        edges.push((tip, next));
                        let mut p = path.clone();
                        p.push(next);
                        grown.push(p);
                        next += 1;
                    }
                }
                frontier = grown;
            }
            (next, Some(0), edges, frontier)
        }
        TopologyTag::Grid { rows, cols } => {
            if rows < 1 || cols < 1 || rows * cols < 2 {
                return Err(GeomemError::param("rows", "grid needs at least 2 nodes"));
            }
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let id = r * cols + c;
                    if c + 1 < cols {
                        edges.push((id, id + 1));
                    }
                    if r + 1 < rows {
                        edges.push((id, id + cols));
                    }
                }
            }
            (rows * cols, None, edges, Vec::new())
        }
        TopologyTag::Cycle { n } => {
            if n < 3 {
                return Err(GeomemError::param("n", "cycle requires n >= 3"));
            }
            let edges = (0..n).map(|i| (i, (i + 1) % n)).collect();
            (n, None, edges, Vec::new())
        }
        TopologyTag::Irregular { preset } => {
            if preset != 0 {
                return Err(GeomemError::param(
                    "preset",
                    format!("unknown irregular preset {preset}"),
                ));
            }
            let (n, edges) = IRREGULAR_PRESET_0;
            (n, None, edges.to_vec(), Vec::new())
        }
    };

    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);

    let edges_directed: Vec<(usize, usize)> =
        edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    let arms: Vec<Vec<usize>> = arms
        .iter()
        .map(|arm| arm.iter().map(|&v| perm[v]).collect())
        .collect();
    let leaves = arms.iter().map(|a| *a.last().unwrap()).collect();
    Ok(Graph {
        n_nodes: n,
        root: root.map(|r| perm[r]),
        edges_directed,
        arms,
        leaves,
        topology: spec,
    })
}

impl Graph {
    pub fn edge_count(&self) -> usize {
        self.edges_directed.len()
    }

    /// Undirected neighbour lists, sorted.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n_nodes];
        for &(u, v) in &self.edges_directed {
            nb[u].push(v);
            nb[v].push(u);
        }
        for l in nb.iter_mut() {
            l.sort_unstable();
            l.dedup();
        }
        nb
    }

    /// Children under the stored edge orientation.
    pub fn out_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n_nodes];
        for &(u, v) in &self.edges_directed {
            nb[u].push(v);
        }
        for l in nb.iter_mut() {
            l.sort_unstable();
        }
        nb
    }

    /// Parents under the stored edge orientation.
    pub fn in_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n_nodes];
        for &(u, v) in &self.edges_directed {
            nb[v].push(u);
        }
        for l in nb.iter_mut() {
            l.sort_unstable();
        }
        nb
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors().iter().map(Vec::len).collect()
    }

    /// Symmetric 0/1 adjacency (edges treated as undirected).
    pub fn adjacency(&self) -> Tensor {
        let mut a = Tensor::zeros(self.n_nodes, self.n_nodes);
        for &(u, v) in &self.edges_directed {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        a
    }

    /// Row-stochastic `D⁻¹A`.
    pub fn random_walk(&self) -> Result<Tensor> {
        let mut a = self.adjacency();
        for i in 0..self.n_nodes {
            let deg: f64 = a.row(i).iter().sum();
            if deg == 0.0 {
                return Err(GeomemError::DegenerateDegree { node: i });
            }
            for x in a.row_mut(i) {
                *x /= deg;
            }
        }
        Ok(a)
    }

    /// Node → index of the arm containing it (root excluded). For tree-star
    /// graphs the arm is the root-child subtree.
    pub fn arm_labels(&self) -> Vec<Option<usize>> {
        let mut labels = vec![None; self.n_nodes];
        match self.topology {
            TopologyTag::TreeStar { .. } => {
                let mut firsts: Vec<usize> = self.arms.iter().map(|a| a[1]).collect();
                firsts.sort_unstable();
                firsts.dedup();
                for arm in &self.arms {
                    let sub = firsts.binary_search(&arm[1]).unwrap();
                    for &v in &arm[1..] {
                        labels[v] = Some(sub);
                    }
                }
            }
            _ => {
                for (i, arm) in self.arms.iter().enumerate() {
                    for &v in &arm[1..] {
                        labels[v] = Some(i);
                    }
                }
            }
        }
        labels
    }

    /// Number of connected components after deleting `removed`.
    pub fn components_without(&self, removed: Option<usize>) -> usize {
        let nb = self.neighbors();
        let mut seen = vec![false; self.n_nodes];
        if let Some(r) = removed {
            seen[r] = true;
        }
        let mut count = 0;
        for s in 0..self.n_nodes {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for &v in &nb[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }

    /// Stable hex digest of the serialised graph.
    pub fn content_hash(&self) -> String {
        crate::util::sha256_hex(self.to_text().as_bytes())
    }
}

/// `L = (I − D⁻¹A) + (I − D⁻¹A)ᵀ`.
pub fn laplacian(g: &Graph) -> Result<Tensor> {
    let rw = g.random_walk()?;
    let n = g.n_nodes;
    let mut l = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 2.0 } else { 0.0 };
            l.set(i, j, delta - rw.get(i, j) - rw.get(j, i));
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_star_counts() {
        let g = generate(TopologyTag::PathStar { d: 4, ell: 4 }, 1).unwrap();
        assert_eq!(g.n_nodes, 13);
        assert_eq!(g.edge_count(), 12);
        assert_eq!(g.arms.len(), 4);
        assert_eq!(g.leaves.len(), 4);
        let big = generate(TopologyTag::PathStar { d: 10_000, ell: 6 }, 0).unwrap();
        assert_eq!(big.n_nodes, 50_001);
    }

    #[test]
    fn path_star_arms_disjoint_and_single_parent() {
        let g = generate(TopologyTag::PathStar { d: 5, ell: 3 }, 7).unwrap();
        let root = g.root.unwrap();
        let mut seen = BTreeSet::new();
        for arm in &g.arms {
            assert_eq!(arm[0], root);
            for &v in &arm[1..] {
                assert!(seen.insert(v));
            }
        }
        let parents = g.in_neighbors();
        for v in 0..g.n_nodes {
            assert_eq!(parents[v].len(), usize::from(v != root));
        }
        assert_eq!(g.components_without(Some(root)), 5);
    }

    #[test]
    fn tree_star_shape() {
        let g = generate(TopologyTag::TreeStar { d: 4, ell: 4 }, 3).unwrap();
        let root = g.root.unwrap();
        let out = g.out_neighbors();
        assert_eq!(out[root].len(), 4);
        for v in 0..g.n_nodes {
            if v != root && !g.leaves.contains(&v) {
                assert_eq!(out[v].len(), 2);
            }
        }
        assert!(g.arms.iter().all(|a| a.len() == 4));
        assert_eq!(g.leaves.len(), 16);
    }

    #[test]
    fn cycle_and_grid_degrees() {
        let c = generate(TopologyTag::Cycle { n: 15 }, 0).unwrap();
        assert_eq!(c.edge_count(), 15);
        assert!(c.degrees().iter().all(|&d| d == 2));

        let g = generate(TopologyTag::Grid { rows: 4, cols: 4 }, 0).unwrap();
        let mut hist = [0usize; 5];
        for d in g.degrees() {
            hist[d] += 1;
        }
        assert_eq!(hist, [0, 0, 4, 8, 4]);
    }

    #[test]
    fn invalid_parameters_name_field() {
        let e = generate(TopologyTag::PathStar { d: 1, ell: 4 }, 0).unwrap_err();
        assert!(matches!(e, GeomemError::Parameter { field: "d", .. }));
        let e = generate(TopologyTag::PathStar { d: 3, ell: 1 }, 0).unwrap_err();
        assert!(matches!(e, GeomemError::Parameter { field: "ell", .. }));
    }

    #[test]
    fn labeling_depends_on_seed_only() {
        let spec = TopologyTag::PathStar { d: 3, ell: 4 };
        assert_eq!(generate(spec, 5).unwrap(), generate(spec, 5).unwrap());
        assert_ne!(
            generate(spec, 5).unwrap().arms,
            generate(spec, 6).unwrap().arms
        );
    }

    #[test]
    fn laplacian_diagonal_and_cycle_form() {
        let c = generate(TopologyTag::Cycle { n: 15 }, 2).unwrap();
        let l = laplacian(&c).unwrap();
        let a = c.adjacency();
        for i in 0..15 {
            for j in 0..15 {
                let expected = if i == j { 2.0 } else { 0.0 } - a.get(i, j);
                assert!((l.get(i, j) - expected).abs() < 1e-15);
            }
        }
        let g = generate(TopologyTag::Irregular { preset: 0 }, 0).unwrap();
        let l = laplacian(&g).unwrap();
        assert!((0..g.n_nodes).all(|i| l.get(i, i) == 2.0));
        assert_eq!(l.max_asymmetry(), 0.0);
    }

    #[test]
    fn isolated_node_is_degenerate() {
        let mut g = generate(TopologyTag::Cycle { n: 4 }, 0).unwrap();
        g.n_nodes = 5;
        assert!(matches!(
            laplacian(&g),
            Err(GeomemError::DegenerateDegree { node: 4 })
        ));
    }

    #[test]
    fn tag_round_trip() {
        for t in [
            TopologyTag::PathStar { d: 4, ell: 4 },
            TopologyTag::TreeStar { d: 2, ell: 5 },
            TopologyTag::Grid { rows: 4, cols: 3 },
            TopologyTag::Cycle { n: 15 },
            TopologyTag::Irregular { preset: 0 },
        ] {
            assert_eq!(t.to_string().parse::<TopologyTag>().unwrap(), t);
        }
        assert!("star(3)".parse::<TopologyTag>().is_err());
    }
}
