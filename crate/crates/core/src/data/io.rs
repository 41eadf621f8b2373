use super::{Example, ExampleKind, Special, Split, Vocab};
use crate::error::{GeomemError, Result};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

/// A serialisable list of examples plus the context needed to audit it.
///
/// Text form: a header `# geomem-dataset vocab <size> graph <sha256>`, an
/// optional `# split ratio <r> train <ids..> test <ids..>` line, then one
/// `kind<TAB>tokens<TAB>mask-bits` line per example.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab_size: usize,
    pub graph_hash: String,
    pub split: Option<Split>,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "# geomem-dataset vocab {} graph {}",
            self.vocab_size, self.graph_hash
        )
        .unwrap();
        if let Some(s) = &self.split {
            let ids = |set: &BTreeSet<usize>| {
                set.iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            writeln!(
                out,
                "# split ratio {} train {} test {}",
                s.ratio,
                ids(&s.train_leaves),
                ids(&s.test_leaves)
            )
            .unwrap();
        }
        for ex in &self.examples {
            let toks: Vec<String> = ex.tokens.iter().map(usize::to_string).collect();
            let bits: String = ex
                .loss_mask
                .iter()
                .map(|&m| if m { '1' } else { '0' })
                .collect();
            writeln!(out, "{}\t{}\t{}", ex.kind, toks.join(" "), bits).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Dataset> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| GeomemError::Parse("empty dataset file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 6 || h[1] != "geomem-dataset" || h[2] != "vocab" || h[4] != "graph" {
            return Err(GeomemError::Parse(format!("bad dataset header `{header}`")));
        }
        let vocab_size = parse_usize(h[3])?;
        if vocab_size < Vocab::N_SPECIAL {
            return Err(GeomemError::Parse(
                "vocab smaller than the special set".into(),
            ));
        }
        let vocab = Vocab::new(vocab_size - Vocab::N_SPECIAL);
        let graph_hash = h[5].to_string();

        let mut split = None;
        let mut examples = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("# split ") {
                split = Some(parse_split(rest)?);
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(GeomemError::Parse(format!(
                    "expected 3 tab-separated fields: `{line}`"
                )));
            }
            let kind: ExampleKind = cols[0].parse()?;
            let tokens: Vec<usize> = cols[1]
                .split_whitespace()
                .map(parse_usize)
                .collect::<Result<_>>()?;
            let loss_mask: Vec<bool> = cols[2]
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(GeomemError::Parse(format!("bad mask bit `{c}`"))),
                })
                .collect::<Result<_>>()?;
            if loss_mask.len() != tokens.len() {
                return Err(GeomemError::Parse(
                    "mask length differs from token count".into(),
                ));
            }
            if let Some(&t) = tokens.iter().find(|&&t| t >= vocab_size) {
                return Err(GeomemError::Vocab {
                    token: t,
                    vocab: vocab_size,
                });
            }
            let target_start = infer_target_start(kind, &tokens, &loss_mask, &vocab)?;
            examples.push(Example {
                tokens,
                loss_mask,
                kind,
                target_start,
            });
        }
        Ok(Dataset {
            vocab_size,
            graph_hash,
            split,
            examples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::from_text(&std::fs::read_to_string(path)?)
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| GeomemError::Parse(format!("bad integer `{s}`")))
}

fn parse_split(rest: &str) -> Result<Split> {
    let words: Vec<&str> = rest.split_whitespace().collect();
    let bad = || GeomemError::Parse(format!("bad split line `{rest}`"));
    if words.first() != Some(&"ratio") || words.get(2) != Some(&"train") {
        return Err(bad());
    }
    let ratio: f64 = words.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let test_at = words.iter().position(|&w| w == "test").ok_or_else(bad)?;
    let train_leaves = words[3..test_at]
        .iter()
        .map(|w| parse_usize(w))
        .collect::<Result<_>>()?;
    let test_leaves = words[test_at + 1..]
        .iter()
        .map(|w| parse_usize(w))
        .collect::<Result<_>>()?;
    Ok(Split {
        train_leaves,
        test_leaves,
        ratio,
    })
}

/// Recovers the prefix/target boundary from the token layout.
fn infer_target_start(
    kind: ExampleKind,
    tokens: &[usize],
    mask: &[bool],
    v: &Vocab,
) -> Result<usize> {
    let first_mask = || {
        mask.iter()
            .position(|&m| m)
            .ok_or_else(|| GeomemError::Parse(format!("{kind} example without targets")))
    };
    match kind {
        ExampleKind::EdgeFwd | ExampleKind::EdgeBwd => Ok(1),
        ExampleKind::PathFwd | ExampleKind::PathRev | ExampleKind::InContext => first_mask(),
        ExampleKind::FirstToken => {
            // [BOS] leaf PAUSE* | target
            let mut i = usize::from(tokens.first() == Some(&v.special(Special::Bos)));
            i += 1;
            while tokens.get(i) == Some(&v.special(Special::Pause)) {
                i += 1;
            }
            if i >= tokens.len() {
                return Err(GeomemError::Parse(
                    "first-token example without a target".into(),
                ));
            }
            Ok(i)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        build_vocab, edge_dataset, in_context_example, path_dataset, EdgeDir, LossMode, PathSpec,
    };
    use crate::graph::{generate, TopologyTag};

    #[test]
    fn round_trip_is_exact() {
        let g = generate(TopologyTag::PathStar { d: 5, ell: 4 }, 3).unwrap();
        let v = build_vocab(&g);
        let split = Split::random(&g, 0.75, 1).unwrap();
        let mut examples = edge_dataset(&g, &v, EdgeDir::Mixed);
        for (mode, bos) in [
            (LossMode::FullPath, false),
            (LossMode::FirstTokenOnly, true),
            (LossMode::DecisionToken, false),
        ] {
            let spec = PathSpec {
                n_pause: 3,
                loss_mode: mode,
                bos,
                ..PathSpec::default()
            };
            let (tr, te) = path_dataset(&g, &v, &spec, &split).unwrap();
            examples.extend(tr);
            examples.extend(te);
        }
        let ds = Dataset {
            vocab_size: v.size(),
            graph_hash: g.content_hash(),
            split: Some(split),
            examples,
        };
        let text = ds.to_text();
        let back = Dataset::from_text(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_text(), text);

        let ic = in_context_example(2, 5, 30, 4).unwrap();
        let ds = Dataset {
            vocab_size: 39,
            graph_hash: "none".into(),
            split: None,
            examples: vec![ic],
        };
        assert_eq!(Dataset::from_text(&ds.to_text()).unwrap(), ds);
    }

    #[test]
    fn rejects_out_of_vocab_and_bad_mask() {
        let head = "# geomem-dataset vocab 12 graph x\n";
        assert!(Dataset::from_text(&format!("{head}edge_fwd\t0 40\t01\n")).is_err());
        assert!(Dataset::from_text(&format!("{head}edge_fwd\t0 1\t0\n")).is_err());
        assert!(Dataset::from_text(&format!("{head}edge_fwd\t0 1\t0x\n")).is_err());
        assert!(Dataset::from_text(&format!("{head}edge_fwd\t0 1\t01\n")).is_ok());
    }
}
