use super::{LanguageModel, ParamSet};
use crate::error::{GeomemError, Result};
use crate::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab: usize,
    pub n_layer: usize,
    pub width: usize,
    pub heads: usize,
    pub context_len: usize,
    /// Standard deviation of the token-embedding initialisation.
    #[serde(default = "default_emb_std")]
    pub emb_init_std: f64,
}

fn default_emb_std() -> f64 {
    0.02
}

impl TransformerConfig {
    /// Single-layer configuration used for the tiny graphs.
    pub fn tiny(vocab: usize, context_len: usize) -> Self {
        TransformerConfig {
            vocab,
            n_layer: 1,
            width: 32,
            heads: 8,
            context_len,
            emb_init_std: default_emb_std(),
        }
    }

    /// Two layers of width 64 for the scaled path-star runs.
    pub fn desk(vocab: usize, context_len: usize) -> Self {
        TransformerConfig {
            vocab,
            n_layer: 2,
            width: 64,
            heads: 4,
            context_len,
            emb_init_std: default_emb_std(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 {
            return Err(GeomemError::param("vocab", "must be positive"));
        }
        if self.width == 0 || self.width % 2 != 0 {
            return Err(GeomemError::param("width", "must be positive and even"));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(GeomemError::param("heads", "must divide width"));
        }
        if self.context_len == 0 {
            return Err(GeomemError::param("context_len", "must be positive"));
        }
        if !(self.emb_init_std > 0.0) {
            return Err(GeomemError::param("emb_init_std", "must be positive"));
        }
        Ok(())
    }
}

/// Pre-norm decoder-only Transformer with tied token (un)embedding and fixed
/// sinusoidal positions. Sequences in a batch are packed row-wise and attend
/// only within themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transformer {
    pub config: TransformerConfig,
    params: ParamSet,
}

const EMB: usize = 0;
const PER_LAYER: usize = 12;

impl Transformer {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width;
        let mut params = ParamSet::new();
        params.push(
            "tok_emb",
            Tensor::randn(config.vocab, w, config.emb_init_std, &mut rng),
            false,
        );
        let mut linear = |params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut uniform = |r, c| {
                let data = (0..r * c)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Tensor::from_vec(r, c, data).unwrap()
            };
            let wt = uniform(fan_in, fan_out);
            let b = uniform(1, fan_out);
            params.push(format!("{name}.weight"), wt, false);
            params.push(format!("{name}.bias"), b, false);
        };
        for l in 0..config.n_layer {
            params.push(format!("h{l}.ln1.gamma"), Tensor::filled(1, w, 1.0), false);
            params.push(format!("h{l}.ln1.beta"), Tensor::zeros(1, w), false);
            linear(&mut params, &format!("h{l}.attn.qkv"), w, 3 * w);
            linear(&mut params, &format!("h{l}.attn.out"), w, w);
            params.push(format!("h{l}.ln2.gamma"), Tensor::filled(1, w, 1.0), false);
            params.push(format!("h{l}.ln2.beta"), Tensor::zeros(1, w), false);
            linear(&mut params, &format!("h{l}.mlp.fc"), w, 4 * w);
            linear(&mut params, &format!("h{l}.mlp.proj"), 4 * w, w);
        }
        params.push("lnf.gamma", Tensor::filled(1, w, 1.0), false);
        params.push("lnf.beta", Tensor::zeros(1, w), false);
        Ok(Transformer { config, params })
    }

    pub fn from_params(config: TransformerConfig, params: ParamSet) -> Result<Self> {
        let fresh = Transformer::new(config, 0)?;
        if fresh.params.names != params.names
            || fresh
                .params
                .tensors
                .iter()
                .zip(&params.tensors)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(GeomemError::Config(
                "parameter set does not match the configuration".into(),
            ));
        }
        Ok(Transformer { config, params })
    }

    /// Sinusoidal table: `pe[p, 2i] = sin(p / 10000^{2i/W})`, `pe[p, 2i+1] = cos(·)`.
    pub fn positional(&self, positions: impl Iterator<Item = usize>) -> Tensor {
        let w = self.config.width;
        let rows: Vec<Vec<f64>> = positions
            .map(|p| {
                let mut row = vec![0.0; w];
                for i in (0..w).step_by(2) {
                    let freq = (-(i as f64) * (10000f64).ln() / w as f64).exp();
                    row[i] = (p as f64 * freq).sin();
                    row[i + 1] = (p as f64 * freq).cos();
                }
                row
            })
            .collect();
        Tensor::from_rows(&rows).unwrap_or_else(|_| Tensor::zeros(0, w))
    }
}

impl LanguageModel for Transformer {
    fn vocab_size(&self) -> usize {
        self.config.vocab
    }

    fn context_len(&self) -> usize {
        self.config.context_len
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn embedding_table(&self) -> &Tensor {
        &self.params.tensors[EMB]
    }

    fn set_embeddings_frozen(&mut self, frozen: bool) {
        self.params.frozen[EMB] = frozen;
    }

    fn record(
        &self,
        tape: &mut Tape,
        p: &[Var],
        seqs: &[&[usize]],
        picks: &[(usize, usize)],
    ) -> Result<Var> {
        let mut ids = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        for s in seqs {
            segments.push((ids.len(), s.len()));
            ids.extend_from_slice(s);
        }
        let pe = self.positional(seqs.iter().flat_map(|s| 0..s.len()));
        let tok = tape.embed_gather(p[EMB], &ids)?;
        let pos = tape.leaf(pe);
        let mut x = tape.add(tok, pos)?;
        for l in 0..self.config.n_layer {
            let b = 1 + l * PER_LAYER;
            let h = tape.layernorm(x, p[b], p[b + 1])?;
            let qkv = tape.matmul(h, p[b + 2])?;
            let qkv = tape.add_row(qkv, p[b + 3])?;
            let att = tape.causal_attention(qkv, &segments, self.config.heads)?;
            let o = tape.matmul(att, p[b + 4])?;
            let o = tape.add_row(o, p[b + 5])?;
            x = tape.add(x, o)?;
            let h = tape.layernorm(x, p[b + 6], p[b + 7])?;
            let f = tape.matmul(h, p[b + 8])?;
            let f = tape.add_row(f, p[b + 9])?;
            let f = tape.gelu(f);
            let f = tape.matmul(f, p[b + 10])?;
            let f = tape.add_row(f, p[b + 11])?;
            x = tape.add(x, f)?;
        }
        let rows: Vec<usize> = picks
            .iter()
            .map(|&(s, pos)| {
                let (start, len) = segments[s];
                debug_assert!(pos < len);
                start + pos
            })
            .collect();
        let x = tape.embed_gather(x, &rows)?;
        let nf = 1 + self.config.n_layer * PER_LAYER;
        let h = tape.layernorm(x, p[nf], p[nf + 1])?;
        tape.matmul_nt(h, p[EMB])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, ExampleKind};
    use crate::tensor::grad_check;

    fn small() -> Transformer {
        let cfg = TransformerConfig {
            vocab: 7,
            n_layer: 2,
            width: 8,
            heads: 2,
            context_len: 6,
            emb_init_std: 0.5,
        };
        Transformer::new(cfg, 1).unwrap()
    }

    #[test]
    fn causal_perturbation_leaves_earlier_logits() {
        let m = small();
        let a = m.forward(&[1, 2, 3, 4]).unwrap();
        let b = m.forward(&[1, 2, 5, 4]).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
        assert_ne!(a.row(2), b.row(2));
    }

    #[test]
    fn shapes_and_errors() {
        let m = small();
        assert_eq!(m.forward(&[3]).unwrap().shape(), (1, 7));
        assert!(matches!(
            m.forward(&[0; 7]),
            Err(GeomemError::Length { len: 7, context: 6 })
        ));
        let bad = TransformerConfig {
            heads: 3,
            ..m.config
        };
        assert!(Transformer::new(bad, 0).is_err());
    }

    #[test]
    fn packing_matches_separate_forward() {
        let m = small();
        let s1 = [1usize, 2, 3];
        let s2 = [4usize, 0];
        let picks = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)];
        let packed = m.logits_at(&[&s1, &s2], &picks).unwrap();
        let a = m.forward(&s1).unwrap();
        let b = m.forward(&s2).unwrap();
        for r in 0..3 {
            for (x, y) in packed.row(r).iter().zip(a.row(r)) {
                assert!((x - y).abs() < 1e-13);
            }
        }
        for r in 0..2 {
            for (x, y) in packed.row(3 + r).iter().zip(b.row(r)) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn batch_loss_gradient_matches_finite_differences() {
        let m = small();
        let batch = [
            Example {
                tokens: vec![1, 5, 5, 2, 3],
                loss_mask: vec![false, false, false, true, true],
                kind: ExampleKind::PathFwd,
                target_start: 3,
            },
            Example {
                tokens: vec![4, 6],
                loss_mask: vec![false, true],
                kind: ExampleKind::EdgeFwd,
                target_start: 1,
            },
        ];
        let refs: Vec<&Example> = batch.iter().collect();
        let (loss, grads) = m.loss_and_grads(&refs).unwrap();
        assert!(loss > 0.0);
        assert_eq!(grads.len(), m.params().len());
        let seqs: Vec<&[usize]> = batch.iter().map(|e| e.tokens.as_slice()).collect();
        let picks = [(0, 2), (0, 3), (1, 0)];
        let targets = [2, 3, 6];
        let err = grad_check(
            |tape, vars| {
                let logits = m.record(tape, vars, &seqs, &picks)?;
                tape.masked_cross_entropy(logits, &targets, &[true; 3])
            },
            &m.params().tensors,
            1e-6,
            40,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn embeddings_are_tied() {
        let mut m = small();
        m.params_mut().tensors[EMB].set(2, 0, 10.0);
        // a larger first coordinate of token 2 must move its logit, since the
        // unembedding reads the same storage
        let before = small().forward(&[1]).unwrap().get(0, 2);
        let after = m.forward(&[1]).unwrap().get(0, 2);
        assert_ne!(before, after);
        m.set_embeddings_frozen(true);
        assert!(m.params().frozen[EMB]);
    }
}
