use crate::error::{GeomemError, Result};
use crate::graph::{fiedler_set, laplacian, spectrum, symmetric_eigen, EigenSystem, Graph};
use crate::models::Node2Vec;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Eigenvalues within this relative gap share an eigenspace when matching.
const CLUSTER_TOL: f64 = 1e-8;

/// Per-eigenvector dynamics of a Node2Vec run against the fixed spectrum of
/// `−L`. Series are indexed `[eigen index][checkpoint]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub steps: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    /// `‖Vᵀe_i‖₂`.
    pub proj_v: Vec<Vec<f64>>,
    /// `‖C·e_i‖₂`.
    pub kill_c: Vec<Vec<f64>>,
    pub fiedler_indices: Vec<usize>,
    /// Share of `‖V‖²_F` on the Fiedler vectors plus the degenerate index 0.
    pub energy_fraction: Vec<f64>,
}

impl SpectralReport {
    /// Indices neither degenerate nor Fiedler.
    pub fn other_indices(&self) -> Vec<usize> {
        (1..self.eigenvalues.len())
            .filter(|i| !self.fiedler_indices.contains(i))
            .collect()
    }

    /// Long-form CSV: `step,eig_index,eigenvalue,proj_V,kill_C`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,eig_index,eigenvalue,proj_V,kill_C\n");
        for (t, step) in self.steps.iter().enumerate() {
            for i in 0..self.eigenvalues.len() {
                out.push_str(&format!(
                    "{step},{i},{},{},{}\n",
                    self.eigenvalues[i], self.proj_v[i][t], self.kill_c[i][t]
                ));
            }
        }
        out
    }

    pub fn energy_csv(&self) -> String {
        let mut out = String::from("step,energy_fraction\n");
        for (s, e) in self.steps.iter().zip(&self.energy_fraction) {
            out.push_str(&format!("{s},{e}\n"));
        }
        out
    }
}

/// Recomputes `P` and `C` at every stored `V` and projects onto the
/// eigenvectors of `−L`. `k` is the number of Fiedler vectors tracked.
pub fn spectral_trace(history: &[(usize, Tensor)], g: &Graph, k: usize) -> Result<SpectralReport> {
    let es = spectrum(&laplacian(g)?)?;
    let fiedler = fiedler_set(&es, k)?;
    let r = g.random_walk()?;
    let n = g.n_nodes;
    let mut report = SpectralReport {
        steps: Vec::with_capacity(history.len()),
        eigenvalues: es.values.clone(),
        proj_v: vec![Vec::with_capacity(history.len()); n],
        kill_c: vec![Vec::with_capacity(history.len()); n],
        fiedler_indices: fiedler.clone(),
        energy_fraction: Vec::with_capacity(history.len()),
    };
    for (step, v) in history {
        if v.rows() != n {
            return Err(GeomemError::Config(format!(
                "embedding at step {step} has {} rows, graph has {n} nodes",
                v.rows()
            )));
        }
        let c = Node2Vec { v: v.clone() }.coefficient(&r)?;
        let vt_e = es.vectors.matmul_tn(v)?.transpose(); // m × n, column i = Vᵀe_i
        let c_e = c.matmul(&es.vectors)?;
        let total = v.frobenius().powi(2);
        let mut kept = 0.0;
        for i in 0..n {
            let p = norm(&vt_e.column(i));
            report.proj_v[i].push(p);
            report.kill_c[i].push(norm(&c_e.column(i)));
            if i == 0 || fiedler.contains(&i) {
                kept += p * p;
            }
        }
        report.steps.push(*step);
        report.energy_fraction.push(if total > 0.0 {
            (kept / total).clamp(0.0, 1.0)
        } else {
            0.0
        });
    }
    Ok(report)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Checks of the spectral propositions at one embedding, with slack `delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub delta: f64,
    pub n: usize,
    /// `trace(P + Pᵀ)`, bounded by `2n`.
    pub trace_pp: f64,
    pub trace_ok: bool,
    pub pp_eig_min: f64,
    pub pp_eig_max: f64,
    /// Eigenvalues of `P + Pᵀ` in `[−δ, 2 + δ]`.
    pub pp_ok: bool,
    pub adj_eig_min: f64,
    pub adj_eig_max: f64,
    /// Eigenvalues of `D⁻¹A + (D⁻¹A)ᵀ` in `[−2 − δ, 2 + δ]`.
    pub adj_ok: bool,
    /// Index (in `C`'s descending order) of the eigenvector closest to the
    /// degenerate eigenvector of `−L`.
    pub c_degenerate_index: usize,
    /// Largest eigenvalue of `C` outside the degenerate index.
    pub c_eig_max: f64,
    pub c_ok: bool,
    /// Eigenvector alignment of `C` with `−L`.
    pub c_alignment: f64,
    /// Eigenvector alignment of `P + Pᵀ` with `VVᵀ`.
    pub softmax_alignment: f64,
}

impl DiagnosticsRecord {
    pub fn all_ok(&self) -> bool {
        self.trace_ok && self.pp_ok && self.adj_ok && self.c_ok
    }
}

pub fn spectral_diagnostics(v: &Tensor, g: &Graph, delta: f64) -> Result<DiagnosticsRecord> {
    let n = g.n_nodes;
    if v.rows() != n {
        return Err(GeomemError::Config(format!(
            "embedding has {} rows, graph has {n} nodes",
            v.rows()
        )));
    }
    let s = Node2Vec { v: v.clone() };
    let p = s.probabilities();
    let pp = p.add(&p.transpose())?;
    let pp_es = symmetric_eigen(&pp)?;
    let r = g.random_walk()?;
    let rr = r.add(&r.transpose())?;
    let adj_es = symmetric_eigen(&rr)?;
    let c_es = symmetric_eigen(&s.coefficient(&r)?)?;
    let neg_l = spectrum(&laplacian(g)?)?;
    let gram_es = symmetric_eigen(&v.matmul_nt(v)?)?;

    let e0 = neg_l.vector(0);
    let c_degenerate_index = (0..n)
        .max_by(|&a, &b| {
            let ca = dot(&c_es.vector(a), &e0).abs();
            let cb = dot(&c_es.vector(b), &e0).abs();
            ca.total_cmp(&cb).then(b.cmp(&a))
        })
        .unwrap_or(0);
    let c_eig_max = (0..n)
        .filter(|&i| i != c_degenerate_index)
        .map(|i| c_es.values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let (pp_min, pp_max) = extent(&pp_es.values);
    let (adj_min, adj_max) = extent(&adj_es.values);
    let trace_pp = pp.trace();
    Ok(DiagnosticsRecord {
        delta,
        n,
        trace_pp,
        trace_ok: trace_pp <= 2.0 * n as f64,
        pp_eig_min: pp_min,
        pp_eig_max: pp_max,
        pp_ok: pp_min >= -delta && pp_max <= 2.0 + delta,
        adj_eig_min: adj_min,
        adj_eig_max: adj_max,
        adj_ok: adj_min >= -2.0 - delta && adj_max <= 2.0 + delta,
        c_degenerate_index,
        c_eig_max,
        c_ok: c_eig_max <= delta,
        c_alignment: eigen_alignment(&c_es, &neg_l),
        softmax_alignment: eigen_alignment(&pp_es, &gram_es),
    })
}

fn extent(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean over the eigenvectors `w_j` of `a` of `max_S ‖U_Sᵀ w_j‖`, where `S`
/// ranges over the eigenspaces of `reference` (eigenvalues grouped within a
/// relative gap of 1e-8). Equals 1 exactly when every eigenvector of `a` lies
/// in an eigenspace of `reference`; a plain matched-cosine score would be
/// arbitrary inside degenerate eigenspaces.
pub fn eigen_alignment(a: &EigenSystem, reference: &EigenSystem) -> f64 {
    let n = reference.len();
    if n == 0 || a.len() != n {
        return 0.0;
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let joins = i > 0 && {
            let (x, y) = (reference.values[i - 1], reference.values[i]);
            (x - y).abs() <= CLUSTER_TOL * x.abs().max(y.abs()).max(1.0)
        };
        if joins {
            clusters.last_mut().unwrap().push(i);
        } else {
            clusters.push(vec![i]);
        }
    }
    let basis: Vec<Vec<f64>> = (0..n).map(|i| reference.vector(i)).collect();
    let mut total = 0.0;
    for j in 0..n {
        let w = a.vector(j);
        let best = clusters
            .iter()
            .map(|c| c.iter().map(|&i| dot(&basis[i], &w).powi(2)).sum::<f64>())
            .fold(0.0, f64::max);
        total += best.sqrt();
    }
    total / n as f64
}
