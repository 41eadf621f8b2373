use super::Example;
use crate::error::{GeomemError, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Source {
    examples: Vec<Example>,
    order: Vec<usize>,
    pos: usize,
    epochs: usize,
}

/// Infinite weighted mixture of datasets.
///
/// Each draw picks a source with probability proportional to its weight, then
/// takes that source's next example; sources walk through shuffled epochs.
pub struct Interleave {
    sources: Vec<Source>,
    cumulative: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Interleave {
    pub fn new(streams: Vec<(Vec<Example>, f64)>, seed: u64) -> Result<Self> {
        if streams.is_empty() {
            return Err(GeomemError::param("streams", "no streams to interleave"));
        }
        let mut total = 0.0;
        let mut cumulative = Vec::with_capacity(streams.len());
        let mut sources = Vec::with_capacity(streams.len());
        for (i, (examples, w)) in streams.into_iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                return Err(GeomemError::param(
                    "weight",
                    format!("stream {i} has weight {w}"),
                ));
            }
            if examples.is_empty() {
                return Err(GeomemError::param(
                    "streams",
                    format!("stream {i} is empty"),
                ));
            }
            total += w;
            cumulative.push(total);
            sources.push(Source {
                order: Vec::new(),
                pos: 0,
                epochs: 0,
                examples,
            });
        }
        for c in cumulative.iter_mut() {
            *c /= total;
        }
        Ok(Interleave {
            sources,
            cumulative,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Next example and the index of the stream it came from.
    pub fn next_ref(&mut self) -> (usize, &Example) {
        let k = if self.sources.len() == 1 {
            0
        } else {
            let u: f64 = self.rng.random();
            self.cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(self.sources.len() - 1)
        };
        let src = &mut self.sources[k];
        if src.pos == src.order.len() {
            src.order = (0..src.examples.len()).collect();
            src.order.shuffle(&mut self.rng);
            src.pos = 0;
            src.epochs += 1;
        }
        let idx = src.order[src.pos];
        src.pos += 1;
        (k, &self.sources[k].examples[idx])
    }

    /// Completed-or-started passes over stream `k`.
    pub fn epochs(&self, k: usize) -> usize {
        self.sources[k].epochs
    }

    pub fn stream_len(&self, k: usize) -> usize {
        self.sources[k].examples.len()
    }
}

impl Iterator for Interleave {
    type Item = Example;
    fn next(&mut self) -> Option<Example> {
        Some(self.next_ref().1.clone())
    }
}
