use crate::error::{GeomemError, Result};
use crate::graph::Graph;
use crate::tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One-layer, one-hop Node2Vec: embeddings `V` (`n × m`) scored by
/// `P = row_softmax(VVᵀ)` over all nodes, the node itself included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node2Vec {
    pub v: Tensor,
}

impl Node2Vec {
    pub fn n(&self) -> usize {
        self.v.rows()
    }

    pub fn m(&self) -> usize {
        self.v.cols()
    }

    pub fn probabilities(&self) -> Tensor {
        self.v
            .matmul_nt(&self.v)
            .expect("square Gram matrix")
            .row_softmax()
    }

    /// `C = (R − P) + (R − P)ᵀ` with `R = D⁻¹A`, so that `∂J/∂V = C·V`.
    pub fn coefficient(&self, r: &Tensor) -> Result<Tensor> {
        if r.shape() != (self.n(), self.n()) {
            return Err(GeomemError::Shape {
                op: "n2v_coefficient",
                left: r.shape(),
                right: (self.n(), self.n()),
            });
        }
        let g = r.sub(&self.probabilities())?;
        g.add(&g.transpose())
    }

    /// Gradient-ascent step `V ← V + η·C·V`; returns the pre-step `C`.
    pub fn step_with(&mut self, r: &Tensor, eta: f64) -> Result<Tensor> {
        if !(eta > 0.0) {
            return Err(GeomemError::param("eta", format!("{eta} must be positive")));
        }
        let c = self.coefficient(r)?;
        let cv = c.matmul(&self.v)?;
        self.v.axpy(eta, &cv)?;
        if !self.v.is_finite() {
            return Err(GeomemError::Numeric {
                step: 0,
                what: "non-finite Node2Vec embedding".into(),
            });
        }
        Ok(c)
    }

    pub fn step(&self, g: &Graph, eta: f64) -> Result<(Node2Vec, Tensor)> {
        self.check_graph(g)?;
        let mut next = self.clone();
        let c = next.step_with(&g.random_walk()?, eta)?;
        Ok((next, c))
    }

    fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.n_nodes != self.n() {
            return Err(GeomemError::Config(format!(
                "graph has {} nodes, embedding has {} rows",
                g.n_nodes,
                self.n()
            )));
        }
        Ok(())
    }
}

/// Entries i.i.d. `N(0, scale²/m)`, so `V Vᵀ ≈ scale²·I` for large `m`.
pub fn n2v_init(n: usize, m: usize, scale: f64, seed: u64) -> Result<Node2Vec> {
    if !(scale > 0.0) {
        return Err(GeomemError::param(
            "scale",
            format!("{scale} must be positive"),
        ));
    }
    if n == 0 || m == 0 {
        return Err(GeomemError::param("m", "embedding shape must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Node2Vec {
        v: Tensor::randn(n, m, scale / (m as f64).sqrt(), &mut rng),
    })
}

/// `J = Σ_i (1/|nbr(i)|) Σ_{j∈nbr(i)} log p(i,j)`, a maximisation objective ≤ 0.
pub fn n2v_loss(s: &Node2Vec, g: &Graph) -> Result<f64> {
    s.check_graph(g)?;
    let r = g.random_walk()?;
    let gram = s.v.matmul_nt(&s.v)?;
    let mut j = 0.0;
    for i in 0..s.n() {
        let row = gram.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        for (k, &w) in r.row(i).iter().enumerate() {
            if w != 0.0 {
                j += w * (row[k] - lse);
            }
        }
    }
    Ok(j)
}

/// The same objective recorded on a tape, for gradient checks.
pub fn n2v_loss_on_tape(tape: &mut Tape, v: Var, r: &Tensor) -> Result<Var> {
    let gram = tape.matmul_nt(v, v)?;
    let p = tape.row_softmax(gram);
    let logp = tape.ln(p);
    tape.weighted_sum(logp, r.clone())
}

/// Indicator embedding with one dimension per undirected edge:
/// `v_u[i] = 1` iff node `u` is an endpoint of edge `i`.
pub fn n2v_assoc_indicator(g: &Graph) -> Node2Vec {
    let m = g.edge_count();
    let mut v = Tensor::zeros(g.n_nodes, m);
    for (i, &(a, b)) in g.edges_directed.iter().enumerate() {
        v.set(a, i, 1.0);
        v.set(b, i, 1.0);
    }
    Node2Vec { v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, laplacian, TopologyTag};
    use crate::tensor::grad_check;

    fn tiny() -> Graph {
        generate(TopologyTag::PathStar { d: 4, ell: 4 }, 0).unwrap()
    }

    #[test]
    fn init_is_near_orthogonal() {
        // off-diagonal v_i·v_j / scale² has standard deviation 1/√m = 0.1; a
        // Monte Carlo oracle (4000 draws) puts the max over 78 pairs at median
        // 0.264 and 99.99th percentile 0.458
        let s = n2v_init(13, 100, 3.0, 42).unwrap();
        let gram = s.v.matmul_nt(&s.v).unwrap();
        let mut worst = 0.0f64;
        let mut sq = 0.0;
        for i in 0..13 {
            assert!((gram.get(i, i) / 9.0 - 1.0).abs() < 0.5);
            for j in 0..13 {
                if i != j {
                    let x = gram.get(i, j) / 9.0;
                    worst = worst.max(x.abs());
                    sq += x * x;
                }
            }
        }
        assert!(worst < 0.46, "{worst}");
        let rms = (sq / 156.0).sqrt();
        assert!((rms - 0.1).abs() < 0.03, "{rms}");
        assert!(n2v_init(3, 3, 0.0, 0).is_err());
    }

    #[test]
    fn self_probability_closed_form() {
        // exactly orthogonal rows of norm 3
        let mut v = Tensor::zeros(13, 13);
        for i in 0..13 {
            v.set(i, i, 3.0);
        }
        let p = Node2Vec { v }.probabilities();
        let expected = 9f64.exp() / (9f64.exp() + 12.0);
        assert!((p.get(0, 0) - expected).abs() < 1e-12);
        assert!((expected - 0.99852).abs() < 1e-5);
    }

    #[test]
    fn two_node_symmetric_case() {
        let g = Graph {
            n_nodes: 2,
            root: None,
            edges_directed: vec![(0, 1)],
            arms: Vec::new(),
            leaves: Default::default(),
            topology: TopologyTag::Irregular { preset: 0 },
        };
        let s = Node2Vec {
            v: Tensor::filled(2, 3, 0.7),
        };
        assert!((s.probabilities().get(0, 1) - 0.5).abs() < 1e-15);
        let j = n2v_loss(&s, &g).unwrap();
        assert!((j - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lemma_gradient_matches_tape() {
        let g = tiny();
        let r = g.random_walk().unwrap();
        let s = n2v_init(13, 7, 1.0, 5).unwrap();
        let c = s.coefficient(&r).unwrap();
        let analytic = c.matmul(&s.v).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(s.v.clone());
        let j = n2v_loss_on_tape(&mut tape, v, &r).unwrap();
        assert!((tape.value(j).item() - n2v_loss(&s, &g).unwrap()).abs() < 1e-10);
        let grad = tape.backward(j).unwrap().get(v);
        let rel = analytic.sub(&grad).unwrap().max_abs() / grad.max_abs().max(1.0);
        assert!(rel < 1e-12, "{rel}");
        let fd = grad_check(
            |t, p| n2v_loss_on_tape(t, p[0], &r),
            &[s.v.clone()],
            1e-6,
            200,
        )
        .unwrap();
        assert!(fd < 1e-6, "{fd}");
    }

    #[test]
    fn rotation_invariance() {
        let g = tiny();
        let s = n2v_init(13, 4, 2.0, 1).unwrap();
        // Givens rotation in the (0, 2) plane
        let (c, sn) = (0.3f64.cos(), 0.3f64.sin());
        let mut q = Tensor::identity(4);
        q.set(0, 0, c);
        q.set(0, 2, -sn);
        q.set(2, 0, sn);
        q.set(2, 2, c);
        let rotated = Node2Vec {
            v: s.v.matmul(&q).unwrap(),
        };
        let a = n2v_loss(&s, &g).unwrap();
        let b = n2v_loss(&rotated, &g).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn initial_coefficient_approximates_negative_laplacian() {
        let g = tiny();
        let s = n2v_init(13, 100, 4.0, 0).unwrap();
        let c = s.coefficient(&g.random_walk().unwrap()).unwrap();
        let l = laplacian(&g).unwrap();
        assert!(c.add(&l).unwrap().max_abs() < 0.01);
    }

    #[test]
    fn step_update_and_fixed_point() {
        let g = tiny();
        let s = n2v_init(13, 10, 1.0, 2).unwrap();
        let (next, c) = s.step(&g, 0.1).unwrap();
        let expected = s.v.add(&c.matmul(&s.v).unwrap().scale(0.1)).unwrap();
        assert_eq!(next.v, expected);
        // zero embedding: C·V = 0, so the step leaves it unchanged
        let z = Node2Vec {
            v: Tensor::zeros(13, 3),
        };
        let (z2, _) = z.step(&g, 0.5).unwrap();
        assert_eq!(z2.v, z.v);
        assert!(s.step(&g, 0.0).is_err());
    }

    #[test]
    fn indicator_counts_shared_edges() {
        let g = tiny();
        let s = n2v_assoc_indicator(&g);
        assert_eq!(s.m(), 12);
        let gram = s.v.matmul_nt(&s.v).unwrap();
        let a = g.adjacency();
        let deg = g.degrees();
        for u in 0..13 {
            assert_eq!(gram.get(u, u), deg[u] as f64);
            for w in 0..13 {
                if u != w {
                    assert_eq!(gram.get(u, w), a.get(u, w));
                }
            }
        }
        let c = generate(TopologyTag::Cycle { n: 15 }, 0).unwrap();
        let s = n2v_assoc_indicator(&c);
        assert_eq!(s.v.shape(), (15, 15));
        assert!((0..15).all(|i| s.v.row(i).iter().sum::<f64>() == 2.0));
    }
}
