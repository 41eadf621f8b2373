//! The `geomem` command line: graph and dataset export, single runs, named
//! presets, re-analysis and manifest verification.

mod config;
mod manifest;
mod pipeline;
mod presets;

pub use config::{AnalysisKind, ExperimentConfig, ModelConfig, PathsConfig};
pub use manifest::{verify, Artifacts, Manifest, MANIFEST};
pub use pipeline::{
    analyze_dir, run_experiment, summary_csv, RunSummary, PCA_K, PERMUTATIONS, SUMMARY_HEADER,
};
pub use presets::{
    d20, preset, tiny_graphs, tiny_n2v, tiny_probe, tiny_transformer, ComplexitySpec, Preset,
    PRESET_NAMES,
};

use crate::analysis::{complexity_csv, complexity_row};
use crate::data::{
    build_vocab, edge_dataset, path_dataset, tree_star_split, Dataset, EdgeDir, PathSpec, Split,
};
use crate::error::{GeomemError, Result};
use crate::graph::{generate, laplacian, spectrum, TopologyTag};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "geomem",
    version,
    about = "Associative vs. geometric memory of graphs in sequence models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print a generated graph (text form) and the leading spectrum of -L.
    Graph {
        topology: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the graph text here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write edge and path datasets for a graph.
    Data {
        topology: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// forward | backward | mixed
        #[arg(long, default_value = "mixed")]
        edge_dir: String,
        /// forward | reverse; omit for edges only.
        #[arg(long)]
        paths: Option<String>,
        #[arg(long, default_value_t = 0)]
        n_pause: usize,
        /// full_path | first_token_only | decision_token
        #[arg(long, default_value = "full_path")]
        loss_mode: String,
        #[arg(long, default_value_t = 0.75)]
        split_ratio: f64,
        /// split_at_first_token | split_at_leaf (tree_star only)
        #[arg(long)]
        tree_split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment from a JSON config.
    Train {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the analyses of a finished run directory.
    Analyze { dir: PathBuf },
    /// Print the closed-form memory-cost table (defaults to the tiny graphs).
    Complexity {
        topologies: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Embedding dimension of the geometric solution.
        #[arg(long)]
        m: Option<usize>,
        /// Margin-to-norm ratio of the geometric solution.
        #[arg(long)]
        delta: Option<usize>,
    },
    /// Run a named preset or a config/preset JSON file.
    Run {
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List presets, or export them as JSON files.
    Presets {
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Recompute every hash recorded in a manifest tree.
    Verify { dir: PathBuf },
}

/// Entry point; returns the process exit code (0 ok, 2 config, 3 numeric).
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn parse_enum<T: DeserializeOwned>(field: &'static str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| GeomemError::param(field, format!("unknown value `{s}`")))
}

fn parse_topology(s: &str) -> Result<TopologyTag> {
    s.parse()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GeomemError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| GeomemError::Config(format!("{}: {e}", path.display())))
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Graph {
            topology,
            seed,
            out,
        } => {
            let g = generate(parse_topology(&topology)?, seed)?;
            let text = g.to_text();
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
            let eig = spectrum(&laplacian(&g)?)?;
            let head: Vec<String> = eig
                .values
                .iter()
                .take(6)
                .map(|v| format!("{v:.4}"))
                .collect();
            eprintln!(
                "{}: {} nodes, {} edges, sha256 {}; top eigenvalues of -L: {}",
                g.topology,
                g.n_nodes,
                g.edge_count(),
                g.content_hash(),
                head.join(" ")
            );
            Ok(())
        }
        Cmd::Data {
            topology,
            seed,
            edge_dir,
            paths,
            n_pause,
            loss_mode,
            split_ratio,
            tree_split,
            out,
        } => {
            let g = generate(parse_topology(&topology)?, seed)?;
            let vocab = build_vocab(&g);
            let dir: EdgeDir = parse_enum("edge_dir", &edge_dir)?;
            std::fs::create_dir_all(&out)?;
            let ds = |examples, split: Option<&Split>| Dataset {
                vocab_size: vocab.size(),
                graph_hash: g.content_hash(),
                split: split.cloned(),
                examples,
            };
            ds(edge_dataset(&g, &vocab, dir), None).save(&out.join("edges.tsv"))?;
            if let Some(p) = paths {
                let spec = PathSpec {
                    dir: parse_enum("paths", &p)?,
                    n_pause,
                    loss_mode: parse_enum("loss_mode", &loss_mode)?,
                    bos: false,
                };
                let split = match tree_split {
                    Some(m) => {
                        tree_star_split(&g, parse_enum("tree_split", &m)?, split_ratio, seed)?
                    }
                    None => Split::random(&g, split_ratio, seed)?,
                };
                let (train, test) = path_dataset(&g, &vocab, &spec, &split)?;
                ds(train, Some(&split)).save(&out.join("paths_train.tsv"))?;
                ds(test, Some(&split)).save(&out.join("paths_test.tsv"))?;
            }
            eprintln!("wrote datasets to {}", out.display());
            Ok(())
        }
        Cmd::Train { config, out } => {
            let cfg: ExperimentConfig = read_json(&config)?;
            let dir = out.unwrap_or_else(|| default_dir(&cfg));
            let s = run_experiment(&cfg, &dir)?;
            print!("{}", summary_csv(&[s]));
            Ok(())
        }
        Cmd::Analyze { dir } => {
            let s = analyze_dir(&dir)?;
            print!("{}", summary_csv(&[s]));
            Ok(())
        }
        Cmd::Complexity {
            topologies,
            seed,
            m,
            delta,
        } => {
            let specs: Vec<ComplexitySpec> = if topologies.is_empty() {
                preset("complexity-table")?.complexity
            } else {
                topologies
                    .iter()
                    .map(|t| {
                        let graph = parse_topology(t)?;
                        let (dm, dd) = default_geometry(graph);
                        Ok(ComplexitySpec {
                            graph,
                            m: m.unwrap_or(dm),
                            delta: delta.unwrap_or(dd),
                        })
                    })
                    .collect::<Result<_>>()?
            };
            print!("{}", complexity_table(&specs, seed)?);
            Ok(())
        }
        Cmd::Run { target, out } => {
            let p = load_target(&target)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(&p.name));
            let rows = run_preset(&p, &dir)?;
            print!("{}", summary_csv(&rows));
            Ok(())
        }
        Cmd::Presets { export } => {
            for name in PRESET_NAMES {
                let p = preset(name)?;
                match &export {
                    Some(dir) => {
                        std::fs::create_dir_all(dir)?;
                        std::fs::write(dir.join(format!("{name}.json")), preset_json(&p)?)?;
                    }
                    None => println!("{name:<28} {}", p.description),
                }
            }
            Ok(())
        }
        Cmd::Verify { dir } => {
            let n = verify(&dir)?;
            println!("{}: {n} files verified", dir.display());
            Ok(())
        }
    }
}

fn default_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name))
}

/// `(m, Δ)` used when the caller gives none: `(d, ℓ)` on star graphs, else a
/// two-dimensional embedding with the node count as ratio.
pub fn default_geometry(tag: TopologyTag) -> (usize, usize) {
    match tag {
        TopologyTag::PathStar { d, ell } | TopologyTag::TreeStar { d, ell } => (d, ell),
        _ => (2, 0),
    }
}

pub fn complexity_table(specs: &[ComplexitySpec], seed: u64) -> Result<String> {
    let rows = specs
        .iter()
        .map(|s| {
            let g = generate(s.graph, seed)?;
            let delta = if s.delta == 0 { g.n_nodes } else { s.delta };
            complexity_row(&g, s.m, delta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(complexity_csv(&rows))
}

/// Canonical JSON of a preset, as committed under `presets/`.
pub fn preset_json(p: &Preset) -> Result<String> {
    Ok(serde_json::to_string_pretty(p)? + "\n")
}

/// A preset name, a preset JSON file, or a single-run config JSON file.
pub fn load_target(target: &str) -> Result<Preset> {
    let path = Path::new(target);
    if !path.is_file() {
        return preset(target);
    }
    let value: serde_json::Value = read_json(path)?;
    if value.get("runs").is_some() || value.get("complexity").is_some() {
        return serde_json::from_value(value)
            .map_err(|e| GeomemError::Config(format!("{target}: {e}")));
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| GeomemError::Config(format!("{target}: {e}")))?;
    Ok(Preset {
        name: cfg.name.clone(),
        description: String::new(),
        runs: vec![cfg],
        complexity: vec![],
    })
}

/// Runs every member of `p` under `dir/<run name>/`, then writes
/// `summary.csv` and a manifest that hashes each run's own manifest.
/// Every config is validated before any training starts; a failing run is
/// recorded and the remaining runs still execute.
pub fn run_preset(p: &Preset, dir: &Path) -> Result<Vec<RunSummary>> {
    p.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut art = Artifacts::open(dir, Default::default());
    let mut manifest = Manifest::for_preset(&p.name, serde_json::to_value(p)?);
    let mut rows = Vec::new();
    let mut first_err = None;
    for cfg in &p.runs {
        eprintln!("[{}] running {}", p.name, cfg.name);
        let sub = dir.join(&cfg.name);
        match run_experiment(cfg, &sub) {
            Ok(s) => rows.push(s),
            Err(e) => {
                eprintln!("[{}] {} failed: {e}", p.name, cfg.name);
                first_err.get_or_insert(e);
            }
        }
        let rel = format!("{}/{MANIFEST}", cfg.name);
        let bytes = std::fs::read(dir.join(&rel))?;
        art.files.insert(rel, crate::util::sha256_hex(&bytes));
    }
    if !p.runs.is_empty() {
        art.write("summary.csv", &summary_csv(&rows))?;
    }
    if !p.complexity.is_empty() {
        art.write("complexity.csv", &complexity_table(&p.complexity, 0)?)?;
    }
    manifest.files = art.files;
    if first_err.is_some() {
        manifest.status = "failed".into();
    }
    manifest.save(dir)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn committed_presets_match_builtins() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
        for name in PRESET_NAMES {
            let text = std::fs::read_to_string(dir.join(format!("{name}.json")))
                .unwrap_or_else(|e| panic!("presets/{name}.json: {e}"));
            assert_eq!(
                text,
                preset_json(&preset(name).unwrap()).unwrap(),
                "{name} drifted"
            );
        }
    }

    #[test]
    fn enum_arguments_parse_like_json() {
        assert_eq!(
            parse_enum::<EdgeDir>("edge_dir", "backward").unwrap(),
            EdgeDir::Backward
        );
        assert!(parse_enum::<EdgeDir>("edge_dir", "sideways").is_err());
    }
}
