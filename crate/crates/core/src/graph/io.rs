use super::{Graph, TopologyTag};
use crate::error::{GeomemError, Result};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

impl Graph {
    /// Text form: `n <n> root <id|none> topo <tag>`, then `# arm i: ...`
    /// comment lines, then one `u v` edge per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let root = self.root.map_or("none".to_string(), |r| r.to_string());
        writeln!(
            out,
            "n {} root {} topo {}",
            self.n_nodes, root, self.topology
        )
        .unwrap();
        for (i, arm) in self.arms.iter().enumerate() {
            let ids: Vec<String> = arm.iter().map(usize::to_string).collect();
            writeln!(out, "# arm {}: {}", i, ids.join(" ")).unwrap();
        }
        for (u, v) in &self.edges_directed {
            writeln!(out, "{u} {v}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Graph> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| GeomemError::Parse("empty graph file".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() < 6 || parts[0] != "n" || parts[2] != "root" || parts[4] != "topo" {
            return Err(GeomemError::Parse(format!("bad graph header `{header}`")));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| GeomemError::Parse(format!("bad integer `{s}`")))
        };
        let n_nodes = num(parts[1])?;
        let root = match parts[3] {
            "none" => None,
            s => Some(num(s)?),
        };
        let topology: TopologyTag = parts[5..].join("").parse()?;

        let mut arms = Vec::new();
        let mut edges_directed = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# arm ") {
                let (_, ids) = rest
                    .split_once(':')
                    .ok_or_else(|| GeomemError::Parse(format!("bad arm line `{line}`")))?;
                arms.push(
                    ids.split_whitespace()
                        .map(num)
                        .collect::<Result<Vec<_>>>()?,
                );
            } else if line.starts_with('#') {
                continue;
            } else {
                let mut it = line.split_whitespace();
                match (it.next(), it.next(), it.next()) {
                    (Some(u), Some(v), None) => edges_directed.push((num(u)?, num(v)?)),
                    _ => return Err(GeomemError::Parse(format!("bad edge line `{line}`"))),
                }
            }
        }
        for &(u, v) in &edges_directed {
            if u >= n_nodes || v >= n_nodes {
                return Err(GeomemError::Parse(format!("edge ({u}, {v}) out of range")));
            }
        }
        let leaves: BTreeSet<usize> = arms
            .iter()
            .filter_map(|a: &Vec<usize>| a.last().copied())
            .collect();
        Ok(Graph {
            n_nodes,
            root,
            edges_directed,
            arms,
            leaves,
            topology,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Graph> {
        Graph::from_text(&std::fs::read_to_string(path)?)
    }
}
