use crate::error::{GeomemError, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MemoryMode {
    /// One `log2|V|`-bit pointer per stored edge.
    Associative,
    /// `m` coordinates of `log2(delta)` bits per node.
    Geometric { m: usize, delta: usize },
}

fn check(mode: MemoryMode) -> Result<()> {
    if let MemoryMode::Geometric { m, delta } = mode {
        if m < 1 {
            return Err(GeomemError::param("m", "must be at least 1"));
        }
        if delta < 2 {
            return Err(GeomemError::param("delta", "must be at least 2"));
        }
    }
    Ok(())
}

/// Bits to store `g`: associative `|E|·log2|V|` (doubled with both
/// directions), geometric `|V|·m·log2(delta)` (doubled when untied).
pub fn bit_complexity(
    g: &Graph,
    mode: MemoryMode,
    both_directions: bool,
    tied: bool,
) -> Result<f64> {
    check(mode)?;
    let v = g.n_nodes as f64;
    Ok(match mode {
        MemoryMode::Associative => {
            let bits = g.edge_count() as f64 * v.log2();
            if both_directions {
                2.0 * bits
            } else {
                bits
            }
        }
        MemoryMode::Geometric { m, delta } => {
            let bits = v * m as f64 * (delta as f64).log2();
            if tied {
                bits
            } else {
                2.0 * bits
            }
        }
    })
}

/// Margin-1 ℓ2 bounds: associative upper bound `√|E|` (×√2 with both
/// directions), geometric lower bound `√|V|` (×√2 when untied).
pub fn l2_complexity(
    g: &Graph,
    mode: MemoryMode,
    both_directions: bool,
    tied: bool,
) -> Result<f64> {
    check(mode)?;
    Ok(match mode {
        MemoryMode::Associative => {
            let b = (g.edge_count() as f64).sqrt();
            if both_directions {
                b * 2f64.sqrt()
            } else {
                b
            }
        }
        MemoryMode::Geometric { .. } => {
            let b = (g.n_nodes as f64).sqrt();
            if tied {
                b
            } else {
                b * 2f64.sqrt()
            }
        }
    })
}

/// Smallest logit margin `min_u (min_{w∈N(u)} s_uw − max_{x∉N(u), x≠u} s_ux)`
/// of the bilinear scores `s = VVᵀ`.
pub fn min_margin(v: &Tensor, g: &Graph) -> Result<f64> {
    if v.rows() != g.n_nodes {
        return Err(GeomemError::Config(format!(
            "embedding has {} rows, graph has {} nodes",
            v.rows(),
            g.n_nodes
        )));
    }
    let s = v.matmul_nt(v)?;
    let nbrs = g.neighbors();
    let mut margin = f64::INFINITY;
    for u in 0..g.n_nodes {
        if nbrs[u].is_empty() {
            continue;
        }
        let lo = nbrs[u]
            .iter()
            .map(|&w| s.get(u, w))
            .fold(f64::INFINITY, f64::min);
        let hi = (0..g.n_nodes)
            .filter(|&x| x != u && !nbrs[u].contains(&x))
            .map(|x| s.get(u, x))
            .fold(f64::NEG_INFINITY, f64::max);
        margin = margin.min(lo - hi);
    }
    Ok(margin)
}

/// `‖V‖_F` after rescaling `V` so that `min_margin` is exactly 1. Since the
/// scores are quadratic in `V` the factor is `1/√margin`.
pub fn margin_rescaled_norm(v: &Tensor, g: &Graph) -> Result<f64> {
    let margin = min_margin(v, g)?;
    if !(margin > 0.0) || !margin.is_finite() {
        return Err(GeomemError::Degenerate(format!(
            "embedding does not separate neighbours (margin {margin})"
        )));
    }
    Ok(v.frobenius() / margin.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub graph: String,
    pub assoc_bits: f64,
    pub assoc_bits_both: f64,
    pub geom_bits: f64,
    pub assoc_l2: f64,
    pub geom_l2: f64,
}

/// The closed-form table for `g` with geometric parameters `(m, delta)`.
pub fn complexity_row(g: &Graph, m: usize, delta: usize) -> Result<ComplexityRow> {
    let geo = MemoryMode::Geometric { m, delta };
    Ok(ComplexityRow {
        graph: g.topology.to_string(),
        assoc_bits: bit_complexity(g, MemoryMode::Associative, false, true)?,
        assoc_bits_both: bit_complexity(g, MemoryMode::Associative, true, true)?,
        geom_bits: bit_complexity(g, geo, false, true)?,
        assoc_l2: l2_complexity(g, MemoryMode::Associative, false, true)?,
        geom_l2: l2_complexity(g, geo, false, true)?,
    })
}

pub fn complexity_csv(rows: &[ComplexityRow]) -> String {
    let mut out = String::from("graph,assoc_bits,assoc_bits_both,geom_bits,assoc_l2,geom_l2\n");
    for r in rows {
        out.push_str(&format!(
            "\"{}\",{},{},{},{},{}\n",
            r.graph, r.assoc_bits, r.assoc_bits_both, r.geom_bits, r.assoc_l2, r.geom_l2
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, TopologyTag};

    fn ps44() -> Graph {
        generate(TopologyTag::PathStar { d: 4, ell: 4 }, 0).unwrap()
    }

    #[test]
    fn path_star_table() {
        let g = ps44();
        let r = complexity_row(&g, 4, 4).unwrap();
        // 12 · log2 13, evaluated independently
        assert!(
            (r.assoc_bits - 44.405_276_617_693_104).abs() < 1e-9,
            "{}",
            r.assoc_bits
        );
        assert!((r.assoc_bits_both - 88.810_553_235_386_21).abs() < 1e-9);
        assert!((r.geom_bits - 104.0).abs() < 1e-9);
        assert!((r.assoc_l2 - 3.464_101_615_137_754_6).abs() < 1e-9);
        assert!((r.geom_l2 - 3.605_551_275_463_989).abs() < 1e-9);
        let untied =
            bit_complexity(&g, MemoryMode::Geometric { m: 4, delta: 4 }, false, false).unwrap();
        assert_eq!(untied, 208.0);
    }

    #[test]
    fn cycle_bounds_coincide() {
        let g = generate(TopologyTag::Cycle { n: 15 }, 0).unwrap();
        let a = l2_complexity(&g, MemoryMode::Associative, false, true).unwrap();
        let b = l2_complexity(&g, MemoryMode::Geometric { m: 2, delta: 2 }, false, true).unwrap();
        assert_eq!(a, b);
        assert!((a - 15f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn handshake_identity() {
        for tag in [
            TopologyTag::PathStar { d: 4, ell: 4 },
            TopologyTag::Grid { rows: 4, cols: 4 },
            TopologyTag::Irregular { preset: 0 },
        ] {
            let g = generate(tag, 1).unwrap();
            let bits = bit_complexity(&g, MemoryMode::Associative, true, true).unwrap();
            let logv = (g.n_nodes as f64).log2();
            let per_vertex: f64 = g.degrees().iter().map(|&d| d as f64 * logv).sum();
            assert!((bits - per_vertex).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_geometric_parameters() {
        let g = ps44();
        assert!(bit_complexity(&g, MemoryMode::Geometric { m: 0, delta: 4 }, false, true).is_err());
        assert!(l2_complexity(&g, MemoryMode::Geometric { m: 4, delta: 1 }, false, true).is_err());
    }

    #[test]
    fn margin_rescale_is_scale_free() {
        // adjacency-indicator embedding separates neighbours with margin 1
        let g = ps44();
        let mut v = Tensor::zeros(13, g.edge_count());
        for (e, &(a, b)) in g.edges_directed.iter().enumerate() {
            v.set(a, e, 1.0);
            v.set(b, e, 1.0);
        }
        assert!((min_margin(&v, &g).unwrap() - 1.0).abs() < 1e-12);
        let base = margin_rescaled_norm(&v, &g).unwrap();
        let scaled = margin_rescaled_norm(&v.scale(3.0), &g).unwrap();
        assert!((base - scaled).abs() < 1e-9);
        assert!(margin_rescaled_norm(&Tensor::filled(13, 2, 1.0), &g).is_err());
    }
}
