use super::config::{AnalysisKind, ExperimentConfig, ModelConfig, PathsConfig};
use crate::data::{EdgeDir, LossMode, PathDir, TreeSplitMode};
use crate::error::{GeomemError, Result};
use crate::graph::TopologyTag;
use crate::models::PhiInit;
use crate::train::{Regime, TrainConfig};
use serde::{Deserialize, Serialize};

/// One row of a complexity table: a graph and its geometric parameters
/// (`delta = 0` means the node count).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexitySpec {
    pub graph: TopologyTag,
    pub m: usize,
    pub delta: usize,
}

/// A named batch of runs executed sequentially, plus optional closed-form
/// tables. Serialised presets are committed under `presets/`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub runs: Vec<ExperimentConfig>,
    #[serde(default)]
    pub complexity: Vec<ComplexitySpec>,
}

pub const PRESET_NAMES: [&str; 10] = [
    "tiny-n2v-spectral",
    "tiny-tf-geometry",
    "pathstar-inweights-d20",
    "hardest-token-d20",
    "frozen-control-d20",
    "edge-direction-ablation",
    "pause-ablation",
    "two-phase-vs-interleaved",
    "treestar-splits",
    "complexity-table",
];

pub fn tiny_graphs() -> [TopologyTag; 5] {
    [
        TopologyTag::PathStar { d: 4, ell: 4 },
        TopologyTag::TreeStar { d: 2, ell: 4 },
        TopologyTag::Grid { rows: 4, cols: 4 },
        TopologyTag::Cycle { n: 15 },
        TopologyTag::Irregular { preset: 0 },
    ]
}

fn slug(tag: TopologyTag) -> String {
    tag.to_string().replace(['(', ')'], "").replace(',', "_")
}

/// Node2Vec flow on a tiny graph with the large-scale initialisation under
/// which `C(0) ≈ −L`.
pub fn tiny_n2v(graph: TopologyTag, analysis: Vec<AnalysisKind>) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("{}-node2vec", slug(graph)),
        seed: 0,
        graph,
        edge_dir: EdgeDir::Mixed,
        paths: None,
        model: ModelConfig::Node2vec {
            m: 100,
            scale: 4.0,
            eta: 0.01,
            steps: 5000,
            record_every: 250,
        },
        train: TrainConfig::default(),
        analysis,
        fiedler_k: None,
        output_dir: None,
    }
}

/// Single-layer transformer memorising the mixed edges of a tiny graph.
pub fn tiny_transformer(graph: TopologyTag) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("{}-transformer", slug(graph)),
        seed: 0,
        graph,
        edge_dir: EdgeDir::Mixed,
        paths: None,
        model: ModelConfig::Transformer {
            n_layer: 1,
            width: 32,
            heads: 8,
            emb_init_std: 0.02,
        },
        train: TrainConfig {
            peak_lr: 1e-2,
            warmup_steps: 100,
            total_steps: 2000,
            weight_decay: 0.01,
            batch_size: 32,
            eval_interval: 250,
            path_weight: 0.0,
            ..TrainConfig::default()
        },
        analysis: vec![AnalysisKind::Geometry],
        fiedler_k: None,
        output_dir: None,
    }
}

/// Associative probe with a frozen random `Φ`: edges live only in `W`.
pub fn tiny_probe(graph: TopologyTag) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("{}-assoc_probe", slug(graph)),
        model: ModelConfig::AssocProbe {
            phi: PhiInit::Random { width: 32, seed: 0 },
        },
        train: TrainConfig {
            peak_lr: 5e-2,
            ..tiny_transformer(graph).train
        },
        ..tiny_transformer(graph)
    }
}

/// The scaled in-weights path-star run: d = 20, ℓ = 5, mixed edges, 75% of
/// leaves for training, five pause tokens, interleaved training.
pub fn d20(name: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        seed: 0,
        graph: TopologyTag::PathStar { d: 20, ell: 5 },
        edge_dir: EdgeDir::Mixed,
        paths: Some(PathsConfig {
            dir: PathDir::Forward,
            n_pause: 5,
            bos: false,
            split_ratio: 0.75,
            tree_split: None,
        }),
        model: ModelConfig::Transformer {
            n_layer: 2,
            width: 64,
            heads: 4,
            emb_init_std: 0.02,
        },
        train: TrainConfig {
            peak_lr: 1e-3,
            warmup_steps: 300,
            total_steps: 6000,
            weight_decay: 0.1,
            batch_size: 64,
            regime: Regime::Interleaved,
            loss_mode: LossMode::FullPath,
            seed: 0,
            eval_interval: 500,
            path_weight: 0.02,
            freeze_embeddings: false,
        },
        analysis: vec![AnalysisKind::Geometry],
        fiedler_k: None,
        output_dir: None,
    }
}

/// Edge memorisation on the d = 20 graph by the tiny architecture with its
/// embeddings frozen: the association must live in the other weights.
pub fn frozen_edges_d20() -> ExperimentConfig {
    let mut c = tiny_transformer(TopologyTag::PathStar { d: 20, ell: 5 });
    c.name = "frozen-edges-d20".into();
    c.train.freeze_embeddings = true;
    c.train.total_steps = 8000;
    c.train.eval_interval = 500;
    c
}

fn with_train(mut cfg: ExperimentConfig, f: impl FnOnce(&mut TrainConfig)) -> ExperimentConfig {
    f(&mut cfg.train);
    cfg
}

pub fn preset(name: &str) -> Result<Preset> {
    let (description, runs, complexity): (&str, Vec<ExperimentConfig>, Vec<ComplexitySpec>) = match name {
        "tiny-n2v-spectral" => (
            "Node2Vec spectral dynamics on path_star(4,4) with m = 100",
            vec![tiny_n2v(
                TopologyTag::PathStar { d: 4, ell: 4 },
                vec![
                    AnalysisKind::Spectral,
                    AnalysisKind::Diagnostics,
                    AnalysisKind::Geometry,
                    AnalysisKind::Complexity,
                ],
            )],
            vec![],
        ),
        "tiny-tf-geometry" => (
            "Five tiny graphs x {transformer, associative probe, node2vec}: edge memorization and geometry",
            tiny_graphs()
                .into_iter()
                .flat_map(|g| {
                    [
                        tiny_transformer(g),
                        tiny_probe(g),
                        tiny_n2v(g, vec![AnalysisKind::Geometry]),
                    ]
                })
                .collect(),
            vec![],
        ),
        "pathstar-inweights-d20" => (
            "In-weights path-star, d = 20, l = 5; compare decision-token accuracy with chance 1/20",
            vec![d20("pathstar-d20")],
            vec![],
        ),
        "hardest-token-d20" => (
            "Loss only on the decision token v1",
            vec![with_train(d20("decision-token-d20"), |t| t.loss_mode = LossMode::DecisionToken)],
            vec![],
        ),
        "frozen-control-d20" => (
            "Token embeddings frozen at initialisation: edges alone with the tiny model, and the full path pipeline",
            vec![frozen_edges_d20(), with_train(d20("frozen-d20"), |t| t.freeze_embeddings = true)],
            vec![],
        ),
        "edge-direction-ablation" => (
            "Forward-only, backward-only and mixed edge supervision",
            [
                ("edges-fwd", EdgeDir::Forward),
                ("edges-bwd", EdgeDir::Backward),
                ("edges-mixed", EdgeDir::Mixed),
            ]
            .into_iter()
            .map(|(n, dir)| ExperimentConfig {
                edge_dir: dir,
                ..d20(n)
            })
            .collect(),
            vec![],
        ),
        "pause-ablation" => (
            "Zero versus five pause tokens after the leaf",
            [0usize, 5]
                .into_iter()
                .map(|p| {
                    let mut c = d20(&format!("pause-{p}"));
                    c.paths.as_mut().unwrap().n_pause = p;
                    c
                })
                .collect(),
            vec![],
        ),
        "two-phase-vs-interleaved" => (
            "Edges first then paths, versus interleaving from the start",
            vec![
                d20("interleaved"),
                with_train(d20("two-phase"), |t| {
                    t.regime = Regime::TwoPhase {
                        edge_steps: 3000,
                        path_steps: 3000,
                        phase2_lr: 5e-4,
                    };
                    t.warmup_steps = 150;
                }),
            ],
            vec![],
        ),
        "treestar-splits" => (
            "tree_star(3,4): hold out whole root subtrees versus single leaves",
            [
                ("split-at-first-token", TreeSplitMode::SplitAtFirstToken),
                ("split-at-leaf", TreeSplitMode::SplitAtLeaf),
            ]
            .into_iter()
            .map(|(n, mode)| {
                let mut c = d20(n);
                c.graph = TopologyTag::TreeStar { d: 3, ell: 4 };
                c.paths.as_mut().unwrap().tree_split = Some(mode);
                c.train.total_steps = 4000;
                c.train.warmup_steps = 200;
                c
            })
            .collect(),
            vec![],
        ),
        "complexity-table" => (
            "Closed-form bit and l2 costs of associative versus geometric storage",
            vec![],
            tiny_graphs()
                .into_iter()
                .map(|g| {
                    let (m, delta) = super::default_geometry(g);
                    ComplexitySpec { graph: g, m, delta }
                })
                .collect(),
        ),
        other => {
            return Err(GeomemError::Config(format!(
                "unknown preset `{other}`; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(Preset {
        name: name.to_string(),
        description: description.to_string(),
        runs,
        complexity,
    })
}

impl Preset {
    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for r in &self.runs {
            r.validate()?;
            if !names.insert(r.name.as_str()) {
                return Err(GeomemError::Config(format!(
                    "duplicate run name `{}`",
                    r.name
                )));
            }
        }
        if self.runs.is_empty() && self.complexity.is_empty() {
            return Err(GeomemError::Config(format!(
                "preset `{}` is empty",
                self.name
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            p.validate().unwrap();
            let back: Preset = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
            assert_eq!(back, p);
        }
        assert_eq!(preset("tiny-tf-geometry").unwrap().runs.len(), 15);
        assert_eq!(preset("edge-direction-ablation").unwrap().runs.len(), 3);
        assert!(preset("nope").is_err());
    }
}
