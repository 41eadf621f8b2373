use crate::data::{EdgeDir, PathDir, PathSpec, TreeSplitMode};
use crate::error::{GeomemError, Result};
use crate::graph::{generate, TopologyTag};
use crate::models::PhiInit;
use crate::train::{N2vConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Path-finding data attached to a star graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathsConfig {
    #[serde(default = "forward")]
    pub dir: PathDir,
    #[serde(default)]
    pub n_pause: usize,
    #[serde(default)]
    pub bos: bool,
    /// Fraction of leaves used for training.
    pub split_ratio: f64,
    /// Tree-star graphs only: split whole root-child subtrees or single leaves.
    #[serde(default)]
    pub tree_split: Option<TreeSplitMode>,
}

fn forward() -> PathDir {
    PathDir::Forward
}

fn mixed() -> EdgeDir {
    EdgeDir::Mixed
}

fn default_std() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelConfig {
    Transformer {
        n_layer: usize,
        width: usize,
        heads: usize,
        #[serde(default = "default_std")]
        emb_init_std: f64,
    },
    AssocProbe {
        phi: PhiInit,
    },
    /// The Node2Vec gradient flow; uses no `train` block.
    Node2vec {
        m: usize,
        scale: f64,
        eta: f64,
        steps: usize,
        record_every: usize,
    },
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Transformer { .. } => "transformer",
            ModelConfig::AssocProbe { .. } => "assoc_probe",
            ModelConfig::Node2vec { .. } => "node2vec",
        }
    }

    pub fn n2v(&self, seed: u64) -> Option<N2vConfig> {
        match *self {
            ModelConfig::Node2vec {
                m,
                scale,
                eta,
                steps,
                record_every,
            } => Some(N2vConfig {
                m,
                scale,
                eta,
                steps,
                record_every,
                seed,
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    /// Projection and kill series against the spectrum of `−L` (Node2Vec).
    Spectral,
    /// Spectral proposition checks at every recorded checkpoint (Node2Vec).
    Diagnostics,
    /// Heatmaps, PCA and silhouette of the final node embeddings.
    Geometry,
    /// Closed-form memory-cost table of the graph.
    Complexity,
}

/// One reproducible run: graph, data, model, optimisation and analyses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub graph: TopologyTag,
    #[serde(default = "mixed")]
    pub edge_dir: EdgeDir,
    #[serde(default)]
    pub paths: Option<PathsConfig>,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: Vec<AnalysisKind>,
    /// Fiedler vectors tracked by the spectral analysis (default `d − 1` on
    /// star graphs, else 2).
    #[serde(default)]
    pub fiedler_k: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn path_spec(&self) -> Option<PathSpec> {
        self.paths.as_ref().map(|p| PathSpec {
            dir: p.dir,
            n_pause: p.n_pause,
            loss_mode: self.train.loss_mode,
            bos: p.bos,
        })
    }

    pub fn fiedler_k(&self) -> usize {
        self.fiedler_k.unwrap_or(match self.graph {
            TopologyTag::PathStar { d, .. } | TopologyTag::TreeStar { d, .. } => d - 1,
            _ => 2,
        })
    }

    /// Checks internal consistency; no compute.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(GeomemError::Config(format!(
                "invalid run name `{}`",
                self.name
            )));
        }
        // graph parameters are checked by building it, which is cheap
        let n = generate(self.graph, self.seed)?.n_nodes;
        let star = self.graph.is_star();
        let n2v = matches!(self.model, ModelConfig::Node2vec { .. });
        if let Some(p) = &self.paths {
            if !star {
                return Err(GeomemError::UnsupportedTopology {
                    op: "paths",
                    topology: self.graph.to_string(),
                });
            }
            if n2v {
                return Err(GeomemError::Config(
                    "node2vec runs take no path data".into(),
                ));
            }
            if !(0.0..=1.0).contains(&p.split_ratio) {
                return Err(GeomemError::param("split_ratio", "must lie in [0, 1]"));
            }
            if p.tree_split.is_some() && !matches!(self.graph, TopologyTag::TreeStar { .. }) {
                return Err(GeomemError::Config(
                    "tree_split needs a tree_star graph".into(),
                ));
            }
        }
        match &self.model {
            ModelConfig::Transformer {
                n_layer,
                width,
                heads,
                emb_init_std,
            } => {
                if *n_layer == 0 {
                    return Err(GeomemError::param("n_layer", "must be positive"));
                }
                if *width == 0 || width % 2 != 0 {
                    return Err(GeomemError::param("width", "must be positive and even"));
                }
                if *heads == 0 || width % heads != 0 {
                    return Err(GeomemError::param("heads", "must divide width"));
                }
                if !(*emb_init_std > 0.0) {
                    return Err(GeomemError::param("emb_init_std", "must be positive"));
                }
            }
            ModelConfig::AssocProbe { phi } => {
                if let PhiInit::Random { width: 0, .. } = phi {
                    return Err(GeomemError::param("phi.width", "must be positive"));
                }
            }
            ModelConfig::Node2vec {
                m,
                scale,
                eta,
                steps,
                record_every,
            } => {
                if *m == 0 || *steps == 0 || *record_every == 0 {
                    return Err(GeomemError::param(
                        "node2vec",
                        "m, steps and record_every must be positive",
                    ));
                }
                if !(*scale > 0.0) || !(*eta > 0.0) {
                    return Err(GeomemError::param(
                        "node2vec",
                        "scale and eta must be positive",
                    ));
                }
            }
        }
        if !n2v {
            self.train.validate()?;
            if self.paths.is_none() && self.train.path_weight > 0.0 {
                return Err(GeomemError::param(
                    "path_weight",
                    "must be 0 without path data",
                ));
            }
            if self.paths.is_some() && self.train.path_weight == 0.0 {
                return Err(GeomemError::param(
                    "path_weight",
                    "must be positive with path data",
                ));
            }
        }
        for a in &self.analysis {
            if matches!(a, AnalysisKind::Spectral | AnalysisKind::Diagnostics) && !n2v {
                return Err(GeomemError::Config(format!(
                    "{a:?} analysis needs a node2vec model"
                )));
            }
        }
        if self.analysis.contains(&AnalysisKind::Spectral) {
            let k = self.fiedler_k();
            if k == 0 || k + 1 > n {
                return Err(GeomemError::param(
                    "fiedler_k",
                    format!("need 1 <= k <= {}", n - 1),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig {
            name: "t".into(),
            seed: 0,
            graph: TopologyTag::PathStar { d: 4, ell: 4 },
            edge_dir: EdgeDir::Mixed,
            paths: None,
            model: ModelConfig::Transformer {
                n_layer: 1,
                width: 32,
                heads: 8,
                emb_init_std: 0.02,
            },
            train: TrainConfig {
                path_weight: 0.0,
                ..TrainConfig::default()
            },
            analysis: vec![AnalysisKind::Geometry],
            fiedler_k: None,
            output_dir: None,
        }
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let text = r#"{"name":"x","seed":3,"graph":"cycle(15)",
            "model":{"kind":"node2vec","m":8,"scale":2.0,"eta":0.1,"steps":10,"record_every":5},
            "analysis":["spectral"]}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.edge_dir, EdgeDir::Mixed);
        assert_eq!(cfg.fiedler_k(), 2);
        cfg.validate().unwrap();
        let back: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn inconsistent_configs_rejected() {
        base().validate().unwrap();
        let mut c = base();
        c.analysis = vec![AnalysisKind::Spectral];
        assert!(matches!(c.validate(), Err(GeomemError::Config(_))));
        let mut c = base();
        c.graph = TopologyTag::Grid { rows: 4, cols: 4 };
        c.paths = Some(PathsConfig {
            dir: PathDir::Forward,
            n_pause: 0,
            bos: false,
            split_ratio: 0.5,
            tree_split: None,
        });
        assert!(matches!(
            c.validate(),
            Err(GeomemError::UnsupportedTopology { .. })
        ));
        let mut c = base();
        c.model = ModelConfig::Transformer {
            n_layer: 1,
            width: 30,
            heads: 4,
            emb_init_std: 0.02,
        };
        assert!(c.validate().is_err());
        let mut c = base();
        c.train.path_weight = 0.2;
        assert!(c.validate().is_err());
    }
}
