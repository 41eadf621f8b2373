use super::{LanguageModel, ParamSet};
use crate::error::{GeomemError, Result};
use crate::tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhiInit {
    /// `Φ = I` over the vocabulary.
    OneHot,
    /// Gaussian rows with variance `1/width`, nearly orthonormal for large width.
    Random { width: usize, seed: u64 },
}

/// Purely associative memory: `logit(w | u) = Φ(w)ᵀ · W · Φ(u)` with `Φ`
/// frozen and `W` the only trainable matrix. Each position sees only its own
/// token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssocProbe {
    params: ParamSet,
}

const PHI: usize = 0;
const W: usize = 1;

impl AssocProbe {
    pub fn new(vocab: usize, init: PhiInit) -> Result<Self> {
        let phi = match init {
            PhiInit::OneHot => Tensor::identity(vocab),
            PhiInit::Random { width, seed } => {
                if width == 0 {
                    return Err(GeomemError::param("width", "must be positive"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Tensor::randn(vocab, width, 1.0 / (width as f64).sqrt(), &mut rng)
            }
        };
        let width = phi.cols();
        let mut params = ParamSet::new();
        params.push("phi", phi, true);
        params.push("w_assoc", Tensor::zeros(width, width), false);
        Ok(AssocProbe { params })
    }

    pub fn phi(&self) -> &Tensor {
        &self.params.tensors[PHI]
    }

    pub fn w_assoc(&self) -> &Tensor {
        &self.params.tensors[W]
    }

    pub fn set_w_assoc(&mut self, w: Tensor) -> Result<()> {
        if w.shape() != self.w_assoc().shape() {
            return Err(GeomemError::Shape {
                op: "set_w_assoc",
                left: w.shape(),
                right: self.w_assoc().shape(),
            });
        }
        self.params.tensors[W] = w;
        Ok(())
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        if params.names != ["phi", "w_assoc"] {
            return Err(GeomemError::Config(
                "not an associative-probe parameter set".into(),
            ));
        }
        Ok(AssocProbe { params })
    }
}

impl LanguageModel for AssocProbe {
    fn vocab_size(&self) -> usize {
        self.phi().rows()
    }

    fn context_len(&self) -> usize {
        usize::MAX
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn embedding_table(&self) -> &Tensor {
        self.phi()
    }

    fn set_embeddings_frozen(&mut self, _frozen: bool) {
        // Φ is frozen by construction
    }

    fn record(
        &self,
        tape: &mut Tape,
        params: &[Var],
        seqs: &[&[usize]],
        picks: &[(usize, usize)],
    ) -> Result<Var> {
        let ids: Vec<usize> = picks.iter().map(|&(s, p)| seqs[s][p]).collect();
        let x = tape.embed_gather(params[PHI], &ids)?;
        let xw = tape.matmul_nt(x, params[W])?;
        tape.matmul_nt(xw, params[PHI])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_weights_make_neighbours_win() {
        let mut a = Tensor::zeros(4, 4);
        for (u, v) in [(0, 1), (1, 2), (2, 3)] {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
        let mut p = AssocProbe::new(4, PhiInit::OneHot).unwrap();
        p.set_w_assoc(a.clone()).unwrap();
        let logits = p.forward(&[1]).unwrap();
        for w in 0..4 {
            assert_eq!(logits.get(0, w), a.get(w, 1));
        }
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let p = AssocProbe::new(6, PhiInit::Random { width: 5, seed: 3 }).unwrap();
        let probs = p.forward(&[2, 4]).unwrap().row_softmax();
        assert!(probs.data().iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn gradient_reaches_only_w() {
        use crate::data::{Example, ExampleKind};
        let p = AssocProbe::new(5, PhiInit::OneHot).unwrap();
        assert!(p.params().frozen[PHI] && !p.params().frozen[W]);
        let ex = Example {
            tokens: vec![0, 3],
            loss_mask: vec![false, true],
            kind: ExampleKind::EdgeFwd,
            target_start: 1,
        };
        let (_, grads) = p.loss_and_grads(&[&ex]).unwrap();
        assert!(grads[W].max_abs() > 0.0);
        assert!(p.forward(&[7]).is_err());
    }
}
