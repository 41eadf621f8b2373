use crate::error::{GeomemError, Result};
use crate::graph::{symmetric_eigen, Graph};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// `1 − cos(a, b)`, in `[0, 2]`.
fn cosine_distance(emb: &Tensor, a: usize, b: usize) -> Result<f64> {
    let (x, y) = (emb.row(a), emb.row(b));
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 {
        return Err(GeomemError::DegenerateVector { node: a });
    }
    if ny == 0.0 {
        return Err(GeomemError::DegenerateVector { node: b });
    }
    let cos = x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / (nx * ny);
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

/// All-pairs cosine distance between the rows of `emb`.
pub fn cosine_distance_matrix(emb: &Tensor) -> Result<Tensor> {
    let n = emb.rows();
    let mut out = Tensor::zeros(n, n);
    for a in 0..n {
        for b in a + 1..n {
            let d = cosine_distance(emb, a, b)?;
            out.set(a, b, d);
            out.set(b, a, d);
        }
    }
    if n == 1 {
        cosine_distance(emb, 0, 0)?;
    }
    Ok(out)
}

fn check_star(g: &Graph, emb: &Tensor, op: &'static str) -> Result<()> {
    if !g.topology.is_star() {
        return Err(GeomemError::UnsupportedTopology {
            op,
            topology: g.topology.to_string(),
        });
    }
    if emb.rows() < g.n_nodes {
        return Err(GeomemError::Config(format!(
            "{} embedding rows for {} nodes",
            emb.rows(),
            g.n_nodes
        )));
    }
    Ok(())
}

fn arm_subset(g: &Graph, arms: Option<&[usize]>) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..g.arms.len()).collect();
    let chosen = arms.map_or(all, <[usize]>::to_vec);
    if let Some(&a) = chosen.iter().find(|&&a| a >= g.arms.len()) {
        return Err(GeomemError::param("arms", format!("arm {a} out of range")));
    }
    Ok(chosen)
}

/// Entry `(i, j)` is the cosine distance between the leaf of arm `i` and the
/// first hop (the node after the root) of arm `j`. `arms` restricts to a
/// subset, e.g. the held-out arms.
pub fn leaf_first_heatmap(emb: &Tensor, g: &Graph, arms: Option<&[usize]>) -> Result<Tensor> {
    check_star(g, emb, "leaf_first_heatmap")?;
    let idx = arm_subset(g, arms)?;
    let k = idx.len();
    let mut out = Tensor::zeros(k, k);
    for (r, &i) in idx.iter().enumerate() {
        let leaf = *g.arms[i].last().unwrap();
        for (c, &j) in idx.iter().enumerate() {
            out.set(r, c, cosine_distance(emb, leaf, g.arms[j][1])?);
        }
    }
    Ok(out)
}

/// Intra-arm entries average the distance over all unordered pairs of an
/// arm's non-root nodes; inter-arm entries average over all cross pairs.
pub fn path_pair_heatmap(emb: &Tensor, g: &Graph, arms: Option<&[usize]>) -> Result<Tensor> {
    check_star(g, emb, "path_pair_heatmap")?;
    let idx = arm_subset(g, arms)?;
    for &i in &idx {
        if g.arms[i].len() < 3 {
            return Err(GeomemError::DegenerateArm { arm: i });
        }
    }
    let k = idx.len();
    let mut out = Tensor::zeros(k, k);
    for (r, &i) in idx.iter().enumerate() {
        let a = &g.arms[i][1..];
        for (c, &j) in idx.iter().enumerate() {
            let b = &g.arms[j][1..];
            let mut sum = 0.0;
            let mut count = 0usize;
            if i == j {
                for x in 0..a.len() {
                    for y in x + 1..a.len() {
                        sum += cosine_distance(emb, a[x], a[y])?;
                        count += 1;
                    }
                }
            } else {
                for &x in a {
                    for &y in b {
                        sum += cosine_distance(emb, x, y)?;
                        count += 1;
                    }
                }
            }
            out.set(r, c, sum / count as f64);
        }
    }
    Ok(out)
}

/// Mean off-diagonal minus mean diagonal.
pub fn diagonal_advantage(m: &Tensor) -> Result<f64> {
    let (r, c) = m.shape();
    if r != c {
        return Err(GeomemError::Shape {
            op: "diagonal_advantage",
            left: (r, c),
            right: (c, r),
        });
    }
    if r < 2 {
        return Err(GeomemError::Degenerate(
            "diagonal advantage needs at least 2 rows".into(),
        ));
    }
    let diag: f64 = (0..r).map(|i| m.get(i, i)).sum();
    let off = m.sum() - diag;
    Ok(off / (r * r - r) as f64 - diag / r as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub observed: f64,
    /// `(1 + #{null ≥ observed}) / (1 + permutations)`.
    pub p_value: f64,
    pub null_mean: f64,
    pub null_std: f64,
    pub permutations: usize,
}

/// Null distribution from independent row and column shuffles.
pub fn diagonal_permutation_test(
    m: &Tensor,
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    let observed = diagonal_advantage(m)?;
    if permutations == 0 {
        return Err(GeomemError::param("permutations", "must be positive"));
    }
    let n = m.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..n).collect();
    let mut cols: Vec<usize> = (0..n).collect();
    let mut null = Vec::with_capacity(permutations);
    let mut shuffled = Tensor::zeros(n, n);
    for _ in 0..permutations {
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        for i in 0..n {
            for j in 0..n {
                shuffled.set(i, j, m.get(rows[i], cols[j]));
            }
        }
        null.push(diagonal_advantage(&shuffled)?);
    }
    let exceed = null.iter().filter(|&&x| x >= observed).count();
    let mean = null.iter().sum::<f64>() / permutations as f64;
    let var = null.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / permutations as f64;
    Ok(PermutationTest {
        observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        null_mean: mean,
        null_std: var.sqrt(),
        permutations,
    })
}

/// Mean-centred projection onto the top-`k` principal directions.
pub fn pca_project(emb: &Tensor, k: usize) -> Result<Tensor> {
    let (n, m) = emb.shape();
    if k == 0 || k > n.min(m) {
        return Err(GeomemError::param(
            "k",
            format!("need 1 <= k <= {}", n.min(m)),
        ));
    }
    let mut x = emb.clone();
    for j in 0..m {
        let mean = (0..n).map(|i| emb.get(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            x.set(i, j, emb.get(i, j) - mean);
        }
    }
    let es = symmetric_eigen(&x.matmul_tn(&x)?)?;
    let dirs: Vec<Vec<f64>> = (0..m).map(|r| es.vectors.row(r)[..k].to_vec()).collect();
    x.matmul(&Tensor::from_rows(&dirs)?)
}

/// Mean silhouette (Euclidean) of labelled points; unlabelled rows are
/// skipped, as are singleton clusters (silhouette 0 by convention).
pub fn silhouette(points: &Tensor, labels: &[Option<usize>]) -> Result<f64> {
    if labels.len() != points.rows() {
        return Err(GeomemError::Shape {
            op: "silhouette",
            left: points.shape(),
            right: (labels.len(), 1),
        });
    }
    let items: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|l| (i, l)))
        .collect();
    let n_labels = items.iter().map(|x| x.1).max().map_or(0, |m| m + 1);
    let distinct = {
        let mut ls: Vec<usize> = items.iter().map(|x| x.1).collect();
        ls.sort_unstable();
        ls.dedup();
        ls.len()
    };
    if distinct < 2 {
        return Err(GeomemError::Degenerate(
            "silhouette needs at least 2 clusters".into(),
        ));
    }
    let dist = |a: usize, b: usize| {
        points
            .row(a)
            .iter()
            .zip(points.row(b))
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for &(i, li) in &items {
        let mut sums = vec![0.0; n_labels];
        let mut counts = vec![0usize; n_labels];
        for &(j, lj) in &items {
            if j != i {
                sums[lj] += dist(i, j);
                counts[lj] += 1;
            }
        }
        if counts[li] == 0 {
            continue;
        }
        let a = sums[li] / counts[li] as f64;
        let b = (0..n_labels)
            .filter(|&l| l != li && counts[l] > 0)
            .map(|l| sums[l] / counts[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / items.len() as f64)
}

/// Arm silhouette of the first `g.n_nodes` embedding rows under PCA(`k`),
/// root excluded.
pub fn arm_silhouette(emb: &Tensor, g: &Graph, k: usize) -> Result<f64> {
    check_star(g, emb, "arm_silhouette")?;
    let nodes = emb.select_rows(&(0..g.n_nodes).collect::<Vec<_>>());
    silhouette(&pca_project(&nodes, k)?, &g.arm_labels())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub leaf_first: Tensor,
    pub path_pair: Tensor,
    /// Diagonal advantage of `leaf_first`.
    pub diagonal_advantage: f64,
    pub path_pair_advantage: f64,
    pub pca_coords: Tensor,
    pub arm_silhouette: f64,
}

/// Geometry summary of node embeddings (rows `0..n` of `emb`).
pub fn geometry_report(
    emb: &Tensor,
    g: &Graph,
    k: usize,
    arms: Option<&[usize]>,
) -> Result<GeometryReport> {
    let leaf_first = leaf_first_heatmap(emb, g, arms)?;
    let path_pair = path_pair_heatmap(emb, g, arms)?;
    let nodes = emb.select_rows(&(0..g.n_nodes).collect::<Vec<_>>());
    let pca_coords = pca_project(&nodes, k)?;
    Ok(GeometryReport {
        diagonal_advantage: diagonal_advantage(&leaf_first)?,
        path_pair_advantage: diagonal_advantage(&path_pair)?,
        arm_silhouette: silhouette(&pca_coords, &g.arm_labels())?,
        leaf_first,
        path_pair,
        pca_coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, TopologyTag};
    use rand::Rng;

    fn star() -> Graph {
        generate(TopologyTag::PathStar { d: 4, ell: 4 }, 2).unwrap()
    }

    /// Every non-root node of arm `i` along basis axis `i`; root on all axes.
    fn arm_axes(g: &Graph) -> Tensor {
        let mut e = Tensor::zeros(g.n_nodes, g.arms.len());
        for (i, arm) in g.arms.iter().enumerate() {
            for &v in &arm[1..] {
                e.set(v, i, 1.0);
            }
        }
        for i in 0..g.arms.len() {
            e.set(g.root.unwrap(), i, 1.0);
        }
        e
    }

    fn random_rotation(m: usize, seed: u64) -> Tensor {
        // Gram-Schmidt on a Gaussian matrix
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for _ in 0..m {
            let mut v: Vec<f64> = (0..m).map(|_| rng.random::<f64>() - 0.5).collect();
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= n);
            cols.push(v);
        }
        Tensor::from_rows(&cols).unwrap().transpose()
    }

    #[test]
    fn identical_embeddings_give_zero_maps() {
        let g = star();
        let e = Tensor::filled(13, 5, 0.3);
        assert!(leaf_first_heatmap(&e, &g, None).unwrap().max_abs() < 1e-15);
        assert!(path_pair_heatmap(&e, &g, None).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn arm_orthogonal_embeddings_give_identity_pattern() {
        let g = star();
        let e = arm_axes(&g);
        for m in [
            leaf_first_heatmap(&e, &g, None).unwrap(),
            path_pair_heatmap(&e, &g, None).unwrap(),
        ] {
            for i in 0..4 {
                for j in 0..4 {
                    let want = if i == j { 0.0 } else { 1.0 };
                    assert!((m.get(i, j) - want).abs() < 1e-12);
                }
            }
            assert!((diagonal_advantage(&m).unwrap() - 1.0).abs() < 1e-12);
        }
        let sub = leaf_first_heatmap(&e, &g, Some(&[1, 3])).unwrap();
        assert_eq!(sub.shape(), (2, 2));
    }

    #[test]
    fn heatmaps_invariant_to_rotation() {
        let g = star();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = Tensor::randn(13, 6, 1.0, &mut rng);
        let rot = e.matmul(&random_rotation(6, 1)).unwrap();
        let a = leaf_first_heatmap(&e, &g, None).unwrap();
        let b = leaf_first_heatmap(&rot, &g, None).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-9);
        let a = path_pair_heatmap(&e, &g, None).unwrap();
        let b = path_pair_heatmap(&rot, &g, None).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        let g = star();
        let mut e = Tensor::filled(13, 3, 1.0);
        let leaf = *g.arms[2].last().unwrap();
        e.row_mut(leaf).iter_mut().for_each(|x| *x = 0.0);
        assert!(matches!(
            leaf_first_heatmap(&e, &g, None),
            Err(GeomemError::DegenerateVector { node }) if node == leaf
        ));
        let short = generate(TopologyTag::PathStar { d: 3, ell: 2 }, 0).unwrap();
        assert!(matches!(
            path_pair_heatmap(&Tensor::filled(4, 2, 1.0), &short, None),
            Err(GeomemError::DegenerateArm { arm: 0 })
        ));
        assert!(diagonal_advantage(&Tensor::filled(1, 1, 1.0)).is_err());
        let cyc = generate(TopologyTag::Cycle { n: 15 }, 0).unwrap();
        assert!(matches!(
            leaf_first_heatmap(&Tensor::filled(15, 2, 1.0), &cyc, None),
            Err(GeomemError::UnsupportedTopology { .. })
        ));
    }

    #[test]
    fn diagonal_advantage_examples() {
        assert!(
            diagonal_advantage(&Tensor::filled(3, 3, 0.7))
                .unwrap()
                .abs()
                < 1e-15
        );
        let id = Tensor::filled(3, 3, 1.0).sub(&Tensor::identity(3)).unwrap();
        assert_eq!(diagonal_advantage(&id).unwrap(), 1.0);
    }

    #[test]
    fn random_noise_sits_inside_permutation_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(12, 12, 1.0, &mut rng);
        let noise = x.add(&x.transpose()).unwrap();
        let t = diagonal_permutation_test(&noise, 999, 0).unwrap();
        assert!((t.observed - t.null_mean).abs() < 3.0 * t.null_std, "{t:?}");
        assert!(t.p_value > 0.01);
        let id = Tensor::filled(12, 12, 1.0)
            .sub(&Tensor::identity(12))
            .unwrap();
        let t = diagonal_permutation_test(&id, 999, 0).unwrap();
        assert!(t.p_value < 0.01);
    }

    #[test]
    fn pca_of_full_rank_data_is_an_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Tensor::randn(9, 3, 1.0, &mut rng);
        let p = pca_project(&e, 3).unwrap();
        for a in 0..9 {
            for b in 0..9 {
                let d = |t: &Tensor| {
                    t.row(a)
                        .iter()
                        .zip(t.row(b))
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt()
                };
                assert!((d(&e) - d(&p)).abs() < 1e-9);
            }
        }
        assert!(pca_project(&e, 4).is_err());
        assert!(pca_project(&e, 0).is_err());
    }

    #[test]
    fn pca_of_rank_one_data_has_flat_second_axis() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)])
            .collect();
        let p = pca_project(&Tensor::from_rows(&rows).unwrap(), 2).unwrap();
        assert!(p.column(1).iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn silhouette_separates_clusters() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.1],
            vec![5.0, 5.0],
            vec![5.0, 5.1],
        ];
        let p = Tensor::from_rows(&rows).unwrap();
        let s = silhouette(&p, &[Some(0), Some(0), Some(1), Some(1)]).unwrap();
        assert!(s > 0.95);
        let mixed = silhouette(&p, &[Some(0), Some(1), Some(0), Some(1)]).unwrap();
        assert!(mixed < 0.0);
        let g = star();
        assert!(arm_silhouette(&arm_axes(&g), &g, 3).unwrap() > 0.9);
    }
}
