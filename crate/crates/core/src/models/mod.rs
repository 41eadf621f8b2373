//! Model families: Node2Vec with analytic dynamics, the frozen-embedding
//! associative probe, and a small decoder-only Transformer.

mod node2vec;
mod probe;
mod transformer;

pub use node2vec::{n2v_assoc_indicator, n2v_init, n2v_loss, n2v_loss_on_tape, Node2Vec};
pub use probe::{AssocProbe, PhiInit};
pub use transformer::{Transformer, TransformerConfig};

use crate::data::Example;
use crate::error::{GeomemError, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::util::argmax;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Named parameter tensors with per-tensor frozen flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub frozen: Vec<bool>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            frozen: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor, frozen: bool) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.frozen.push(frozen);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn count_trainable(&self) -> usize {
        self.tensors
            .iter()
            .zip(&self.frozen)
            .filter(|(_, f)| !**f)
            .map(|(t, _)| t.len())
            .sum()
    }

    /// Registers every tensor as a tape leaf, in order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// A next-token model over a fixed vocabulary.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;
    fn context_len(&self) -> usize;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// The token embedding table, one row per token.
    fn embedding_table(&self) -> &Tensor;
    /// Freezes or unfreezes the token embedding table.
    fn set_embeddings_frozen(&mut self, frozen: bool);

    /// Records a forward pass over `seqs`, returning logits only for the
    /// `(sequence, position)` pairs in `picks`, one row per pick.
    fn record(
        &self,
        tape: &mut Tape,
        params: &[Var],
        seqs: &[&[usize]],
        picks: &[(usize, usize)],
    ) -> Result<Var>;

    fn check_tokens(&self, seqs: &[&[usize]]) -> Result<()> {
        for s in seqs {
            if s.len() > self.context_len() {
                return Err(GeomemError::Length {
                    len: s.len(),
                    context: self.context_len(),
                });
            }
            if let Some(&t) = s.iter().find(|&&t| t >= self.vocab_size()) {
                return Err(GeomemError::Vocab {
                    token: t,
                    vocab: self.vocab_size(),
                });
            }
        }
        Ok(())
    }

    /// Logits for every position of a single sequence.
    fn forward(&self, tokens: &[usize]) -> Result<Tensor> {
        let picks: Vec<(usize, usize)> = (0..tokens.len()).map(|p| (0, p)).collect();
        self.logits_at(&[tokens], &picks)
    }

    fn logits_at(&self, seqs: &[&[usize]], picks: &[(usize, usize)]) -> Result<Tensor> {
        self.check_tokens(seqs)?;
        let mut tape = Tape::new();
        let vars = self.params().leaves(&mut tape);
        let out = self.record(&mut tape, &vars, seqs, picks)?;
        Ok(tape.value(out).clone())
    }

    /// Masked next-token loss over a batch and its gradient per parameter.
    fn loss_and_grads(&self, batch: &[&Example]) -> Result<(f64, Vec<Tensor>)> {
        let seqs: Vec<&[usize]> = batch.iter().map(|e| e.tokens.as_slice()).collect();
        self.check_tokens(&seqs)?;
        let mut picks = Vec::new();
        let mut targets = Vec::new();
        for (s, ex) in batch.iter().enumerate() {
            for t in 1..ex.len() {
                if ex.loss_mask[t] {
                    picks.push((s, t - 1));
                    targets.push(ex.tokens[t]);
                }
            }
        }
        let mut tape = Tape::new();
        let vars = self.params().leaves(&mut tape);
        let logits = self.record(&mut tape, &vars, &seqs, &picks)?;
        let mask = vec![true; targets.len()];
        let loss = tape.masked_cross_entropy(logits, &targets, &mask)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        Ok((value, vars.iter().map(|&v| grads.take(v)).collect()))
    }
}

/// Extends each prefix by repeated argmax (ties to the lowest id) until
/// `max_len` new tokens or `eos` is emitted. All prefixes decode in lockstep.
pub fn greedy_decode_batch(
    model: &dyn LanguageModel,
    prefixes: &[Vec<usize>],
    max_len: usize,
    eos: Option<usize>,
) -> Result<Vec<Vec<usize>>> {
    if prefixes.iter().any(Vec::is_empty) {
        return Err(GeomemError::param("prefix", "empty prefix"));
    }
    let mut seqs: Vec<Vec<usize>> = prefixes.to_vec();
    let mut done = vec![false; seqs.len()];
    for _ in 0..max_len {
        let active: Vec<usize> = (0..seqs.len()).filter(|&i| !done[i]).collect();
        if active.is_empty() {
            break;
        }
        let views: Vec<&[usize]> = active.iter().map(|&i| seqs[i].as_slice()).collect();
        let picks: Vec<(usize, usize)> = views
            .iter()
            .enumerate()
            .map(|(k, s)| (k, s.len() - 1))
            .collect();
        let logits = model.logits_at(&views, &picks)?;
        for (k, &i) in active.iter().enumerate() {
            let next = argmax(logits.row(k));
            seqs[i].push(next);
            if Some(next) == eos {
                done[i] = true;
            }
        }
    }
    Ok(seqs)
}

pub fn greedy_decode(
    model: &dyn LanguageModel,
    prefix: &[usize],
    max_len: usize,
    eos: Option<usize>,
) -> Result<Vec<usize>> {
    Ok(greedy_decode_batch(model, &[prefix.to_vec()], max_len, eos)?.remove(0))
}

/// JSON checkpoint: format version, model kind, and named tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub step: usize,
    pub params: ParamSet,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn new(kind: &str, step: usize, params: &ParamSet) -> Self {
        Checkpoint {
            version: Self::VERSION,
            kind: kind.to_string(),
            step,
            params: params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let c: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if c.version != Self::VERSION {
            return Err(GeomemError::Parse(format!(
                "unsupported checkpoint version {}",
                c.version
            )));
        }
        Ok(c)
    }
}

/// `rows × cols` matrix as CSV without a header.
pub fn matrix_csv(t: &Tensor) -> String {
    let mut out = String::new();
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|x| format!("{x:.17e}")).collect();
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}

pub fn parse_matrix_csv(text: &str) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| GeomemError::Parse(format!("bad number `{x}`")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Tensor::from_rows(&rows)
}
