use super::{dot, softmax_in_place, Tensor};
use crate::error::{GeomemError, Result};

const LAYERNORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    Ln(Var),
    Sum(Var),
    WeightedSum(Var, Tensor),
    RowSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    EmbedGather {
        table: Var,
        ids: Vec<usize>,
    },
    MaskedCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor,
        count: usize,
    },
    CausalAttention {
        qkv: Var,
        segments: Vec<(usize, usize)>,
        heads: usize,
        probs: Vec<Vec<f64>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of primitive applications.
///
/// Nodes are stored in insertion order, which is also a topological order;
/// [`Tape::backward`] walks them in exact reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient of a scalar loss with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &'static str, l: &Tensor, r: &Tensor) -> GeomemError {
    GeomemError::Shape {
        op,
        left: l.shape(),
        right: r.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 × cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(shape_err("add_row", av, bv));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    /// Elementwise natural log.
    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Ln(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// `Σ_ij w_ij a_ij` for a constant weight matrix `w`.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != weights.shape() {
            return Err(shape_err("weighted_sum", av, &weights));
        }
        let s = super::dot(av.data(), weights.data());
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a, weights)))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let out = self.value(a).row_softmax();
        self.push(out, Op::RowSoftmax(a))
    }

    /// Row-wise layer normalisation followed by a per-column affine map.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let c = xv.cols();
        if gv.shape() != (1, c) {
            return Err(shape_err("layernorm", xv, gv));
        }
        if bv.shape() != (1, c) {
            return Err(shape_err("layernorm", xv, bv));
        }
        let mut xhat = Tensor::zeros(xv.rows(), c);
        let mut out = Tensor::zeros(xv.rows(), c);
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std.push(inv);
            let xh = xhat.row_mut(r);
            for k in 0..c {
                xh[k] = (row[k] - mean) * inv;
            }
            let o = out.row_mut(r);
            for k in 0..c {
                o[k] = xh[k] * gv.data()[k] + bv.data()[k];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    /// Gathers rows of `table` by id.
    pub fn embed_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= tv.rows()) {
            return Err(GeomemError::Vocab {
                token: bad,
                vocab: tv.rows(),
            });
        }
        let out = tv.select_rows(ids);
        Ok(self.push(
            out,
            Op::EmbedGather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean negative log-likelihood of `targets` over rows where `mask` is set.
    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() || mask.len() != targets.len() {
            return Err(GeomemError::Shape {
                op: "masked_cross_entropy",
                left: lv.shape(),
                right: (targets.len(), mask.len()),
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(GeomemError::DegenerateLoss);
        }
        let probs = lv.row_softmax();
        let mut loss = 0.0;
        for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
            if !m {
                continue;
            }
            if t >= lv.cols() {
                return Err(GeomemError::Vocab {
                    token: t,
                    vocab: lv.cols(),
                });
            }
            // log-sum-exp form keeps the loss exact when p(target) underflows
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        let out = Tensor::scalar(loss / count as f64);
        Ok(self.push(
            out,
            Op::MaskedCrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Multi-head causal self-attention over packed sequences.
    ///
    /// `qkv` is `N × 3W` with query, key and value blocks side by side;
    /// `segments` lists `(start_row, length)` of each sequence. Rows attend
    /// only to earlier-or-equal rows of their own segment.
    pub fn causal_attention(
        &mut self,
        qkv: Var,
        segments: &[(usize, usize)],
        heads: usize,
    ) -> Result<Var> {
        let x = self.value(qkv);
        if x.cols() % 3 != 0 || heads == 0 || (x.cols() / 3) % heads != 0 {
            return Err(GeomemError::param(
                "heads",
                format!("width {} not divisible into {} heads", x.cols() / 3, heads),
            ));
        }
        let width = x.cols() / 3;
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(x.rows(), width);
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for &(start, len) in segments {
            if start + len > x.rows() {
                return Err(GeomemError::Shape {
                    op: "causal_attention",
                    left: x.shape(),
                    right: (start, len),
                });
            }
            for h in 0..heads {
                let qo = h * dh;
                let ko = width + h * dh;
                let vo = 2 * width + h * dh;
                let mut p = vec![0.0; len * len];
                for i in 0..len {
                    let qi = &x.row(start + i)[qo..qo + dh];
                    let prow = &mut p[i * len..i * len + i + 1];
                    for (j, pj) in prow.iter_mut().enumerate() {
                        *pj = scale * dot(qi, &x.row(start + j)[ko..ko + dh]);
                    }
                    softmax_in_place(prow);
                    let orow = &mut out.row_mut(start + i)[qo..qo + dh];
                    for (j, &pj) in prow.iter().enumerate() {
                        let vj = &x.row(start + j)[vo..vo + dh];
                        for (o, v) in orow.iter_mut().zip(vj) {
                            *o += pj * v;
                        }
                    }
                }
                probs.push(p);
            }
        }
        Ok(self.push(
            out,
            Op::CausalAttention {
                qkv,
                segments: segments.to_vec(),
                heads,
                probs,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(GeomemError::Shape {
                op: "backward",
                left: lv.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_tn(self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, bias) => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Hadamard(a, b) => {
                    let da = g.hadamard(self.value(*b))?;
                    let db = g.hadamard(self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Ln(a) => {
                    let da = g.zip_map(self.value(*a), |d, x| d / x);
                    accumulate(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Tensor::filled(r, c, g.item()));
                }
                Op::WeightedSum(a, w) => accumulate(&mut grads, *a, w.scale(g.item())),
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut da = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let inner = dot(yr, gr);
                        for (k, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d = yr[k] * (gr[k] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let c = xhat.cols();
                    let mut dgamma = Tensor::zeros(1, c);
                    let mut dbeta = Tensor::zeros(1, c);
                    let mut dx = Tensor::zeros(xhat.rows(), c);
                    let mut dxhat = vec![0.0; c];
                    for r in 0..xhat.rows() {
                        let (gr, xr) = (g.row(r), xhat.row(r));
                        for k in 0..c {
                            dgamma.data_mut()[k] += gr[k] * xr[k];
                            dbeta.data_mut()[k] += gr[k];
                            dxhat[k] = gr[k] * gv.data()[k];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2 = dot(&dxhat, xr);
                        let inv = inv_std[r];
                        let n = c as f64;
                        for (k, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = inv / n * (n * dxhat[k] - s1 - xr[k] * s2);
                        }
                    }
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gelu(a) => {
                    let da = g.zip_map(self.value(*a), |d, x| d * gelu_grad(x));
                    accumulate(&mut grads, *a, da);
                }
                Op::EmbedGather { table, ids } => {
                    let (r, c) = self.value(*table).shape();
                    let mut dt = Tensor::zeros(r, c);
                    for (i, &id) in ids.iter().enumerate() {
                        for (d, x) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::MaskedCrossEntropy {
                    logits,
                    targets,
                    mask,
                    probs,
                    count,
                } => {
                    let s = g.item() / *count as f64;
                    let mut dl = Tensor::zeros(probs.rows(), probs.cols());
                    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        let drow = dl.row_mut(r);
                        for (d, p) in drow.iter_mut().zip(probs.row(r)) {
                            *d = s * p;
                        }
                        drow[t] -= s;
                    }
                    accumulate(&mut grads, *logits, dl);
                }
                Op::CausalAttention {
                    qkv,
                    segments,
                    heads,
                    probs,
                } => {
                    let dqkv = attention_backward(self.value(*qkv), &g, segments, *heads, probs);
                    accumulate(&mut grads, *qkv, dqkv);
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        // the loss gradient itself was consumed by the loop; restore it
        grads[loss.0] = Some(Tensor::scalar(1.0));
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn attention_backward(
    x: &Tensor,
    g: &Tensor,
    segments: &[(usize, usize)],
    heads: usize,
    probs: &[Vec<f64>],
) -> Tensor {
    let width = x.cols() / 3;
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dx = Tensor::zeros(x.rows(), x.cols());
    let mut pi = 0;
    for &(start, len) in segments {
        for h in 0..heads {
            let p = &probs[pi];
            pi += 1;
            let qo = h * dh;
            let ko = width + h * dh;
            let vo = 2 * width + h * dh;
            let mut ds = vec![0.0; len];
            for i in 0..len {
                let gi = &g.row(start + i)[qo..qo + dh];
                let prow = &p[i * len..i * len + i + 1];
                // dp_ij = g_i · v_j ; dv_j += p_ij g_i
                let mut inner = 0.0;
                for j in 0..=i {
                    let dp = dot(gi, &x.row(start + j)[vo..vo + dh]);
                    ds[j] = dp;
                    inner += prow[j] * dp;
                    let dv = &mut dx.row_mut(start + j)[vo..vo + dh];
                    for (d, gv) in dv.iter_mut().zip(gi) {
                        *d += prow[j] * gv;
                    }
                }
                for j in 0..=i {
                    let s = prow[j] * (ds[j] - inner) * scale;
                    if s == 0.0 {
                        continue;
                    }
                    // dq_i += s k_j ; dk_j += s q_i
                    let kj: Vec<f64> = x.row(start + j)[ko..ko + dh].to_vec();
                    let qi: Vec<f64> = x.row(start + i)[qo..qo + dh].to_vec();
                    {
                        let dq = &mut dx.row_mut(start + i)[qo..qo + dh];
                        for (d, k) in dq.iter_mut().zip(&kj) {
                            *d += s * k;
                        }
                    }
                    let dk = &mut dx.row_mut(start + j)[ko..ko + dh];
                    for (d, q) in dk.iter_mut().zip(&qi) {
                        *d += s * q;
                    }
                }
            }
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_zero_and_constant_layernorm() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(1, 1));
        let y = tape.gelu(x);
        assert_eq!(tape.value(y).item(), 0.0);

        let row = tape.leaf(Tensor::filled(2, 4, 3.5));
        let gamma = tape.leaf(Tensor::filled(1, 4, 1.0));
        let beta = tape.leaf(Tensor::zeros(1, 4));
        let ln = tape.layernorm(row, gamma, beta).unwrap();
        assert!(tape.value(ln).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ce_is_zero_for_certain_target() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::from_rows(&[vec![0.0, 800.0, 0.0]]).unwrap());
        let loss = tape.masked_cross_entropy(logits, &[1], &[true]).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn empty_mask_is_degenerate() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(2, 3));
        let err = tape.masked_cross_entropy(logits, &[0, 1], &[false, false]);
        assert!(matches!(err, Err(GeomemError::DegenerateLoss)));
    }

    #[test]
    fn linear_sum_gradient_broadcasts_input() {
        // loss = sum(W x): dW[i][j] = x[j]
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let x = tape.leaf(Tensor::from_rows(&[vec![5.0], vec![-7.0]]).unwrap());
        let wx = tape.matmul(w, x).unwrap();
        let unused = tape.leaf(Tensor::filled(3, 3, 1.0));
        let loss = tape.sum(wx);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).data(), &[5.0, -7.0, 5.0, -7.0]);
        assert_eq!(grads.get(unused), Tensor::zeros(3, 3));
    }

    #[test]
    fn softmax_ce_gradient_at_uniform_logits() {
        let n = 5;
        let t = 2;
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(1, n));
        let loss = tape.masked_cross_entropy(logits, &[t], &[true]).unwrap();
        let g = tape.backward(loss).unwrap().get(logits);
        for k in 0..n {
            let expected = 1.0 / n as f64 - if k == t { 1.0 } else { 0.0 };
            assert!((g.get(0, k) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(a), Err(GeomemError::Shape { .. })));
    }

    #[test]
    fn attention_is_causal() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let base = Tensor::randn(4, 12, 1.0, &mut rng);
        let mut perturbed = base.clone();
        for c in 0..12 {
            perturbed.set(3, c, perturbed.get(3, c) + 1.0);
        }
        let run = |x: Tensor| {
            let mut tape = Tape::new();
            let v = tape.leaf(x);
            let o = tape.causal_attention(v, &[(0, 4)], 2).unwrap();
            tape.value(o).clone()
        };
        let (a, b) = (run(base), run(perturbed));
        for r in 0..3 {
            assert_eq!(a.row(r), b.row(r));
        }
    }
}
