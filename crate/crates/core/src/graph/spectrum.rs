use crate::error::{GeomemError, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;
/// Eigenvalues closer than this are treated as tied for ordering purposes.
const TIE_TOL: f64 = 1e-9;

/// Eigen-decomposition of a symmetric matrix, sorted by descending value.
///
/// Column `i` of `vectors` is the unit eigenvector for `values[i]`; its first
/// component of largest magnitude is non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i)
    }
}

/// Spectrum of `−L` for a Laplacian `L`.
pub fn spectrum(l: &Tensor) -> Result<EigenSystem> {
    symmetric_eigen(&l.scale(-1.0))
}

/// The `k` eigenvectors following the degenerate top one: indices `1..=k`.
pub fn fiedler_set(es: &EigenSystem, k: usize) -> Result<Vec<usize>> {
    let n = es.len();
    if k == 0 || k + 1 > n {
        return Err(GeomemError::param(
            "k",
            format!("need 1 <= k <= {}", n.saturating_sub(1)),
        ));
    }
    Ok((1..=k).collect())
}

/// Cyclic Jacobi eigensolver for a dense symmetric matrix.
///
/// Sweeps rotate every off-diagonal pair in fixed row-major order until the
/// off-diagonal Frobenius norm drops below `1e-12 · max(1, ‖A‖_F)`.
pub fn symmetric_eigen(a: &Tensor) -> Result<EigenSystem> {
    let (n, cols) = a.shape();
    if n != cols {
        return Err(GeomemError::Shape {
            op: "symmetric_eigen",
            left: (n, cols),
            right: (cols, n),
        });
    }
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(GeomemError::Symmetry {
            max_asymmetry: asym,
        });
    }
    if !a.is_finite() {
        return Err(GeomemError::Numeric {
            step: 0,
            what: "non-finite entry in eigensolver input".into(),
        });
    }

    let mut m = a.data().to_vec();
    // symmetrise exactly so row and column updates stay consistent
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let tol = 1e-12 * a.frobenius().max(1.0);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off < tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, n, p, q, c, s);
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|i| {
            let mut col: Vec<f64> = (0..n).map(|k| v[k * n + i]).collect();
            normalise_sign(&mut col);
            (m[i * n + i], col)
        })
        .collect();
    pairs.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= TIE_TOL * a.0.abs().max(b.0.abs()).max(1.0) {
            lexicographic_desc(&a.1, &b.1)
        } else {
            b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal)
        }
    });

    let values = pairs.iter().map(|p| p.0).collect();
    let mut vectors = Tensor::zeros(n, n);
    for (i, (_, col)) in pairs.iter().enumerate() {
        for (k, x) in col.iter().enumerate() {
            vectors.set(k, i, *x);
        }
    }
    Ok(EigenSystem { values, vectors })
}

/// Applies `A ← Jᵀ A J` for the Givens rotation on the (p, q) plane.
fn rotate(m: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let akp = m[k * n + p];
        let akq = m[k * n + q];
        m[k * n + p] = c * akp - s * akq;
        m[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = m[p * n + k];
        let aqk = m[q * n + k];
        m[p * n + k] = c * apk - s * aqk;
        m[q * n + k] = s * apk + c * aqk;
    }
}

fn normalise_sign(col: &mut [f64]) {
    let max = col.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if max == 0.0 {
        return;
    }
    // first coordinate attaining the max, allowing for rounding noise
    let lead = col
        .iter()
        .position(|x| x.abs() >= max * (1.0 - 1e-10))
        .unwrap();
    if col[lead] < 0.0 {
        for x in col.iter_mut() {
            *x = -*x;
        }
    }
}

fn lexicographic_desc(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > TIE_TOL {
            return y.partial_cmp(x).unwrap_or(Ordering::Equal);
        }
    }
    Ordering::Equal
}
