use super::config::{AnalysisKind, ExperimentConfig, ModelConfig};
use super::manifest::{Artifacts, Manifest};
use crate::analysis::{
    complexity_csv, complexity_row, cosine_distance_matrix, diagonal_advantage,
    diagonal_permutation_test, heatmap_svg, leaf_first_heatmap, margin_rescaled_norm,
    path_pair_heatmap, pca_project, scatter_svg, silhouette, spectral_diagnostics, spectral_trace,
    DiagnosticsRecord, DEFAULT_DELTA,
};
use crate::data::{
    build_vocab, edge_dataset, path_dataset, tree_star_split, Dataset, Example, Split,
};
use crate::error::{GeomemError, Result};
use crate::graph::{generate, Graph, TopologyTag};
use crate::models::{
    matrix_csv, n2v_loss, parse_matrix_csv, AssocProbe, Checkpoint, LanguageModel, Node2Vec,
    ParamSet, Transformer, TransformerConfig,
};
use crate::tensor::Tensor;
use crate::train::{eval_embedding_edges, n2v_run, train_run, TrainData};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Permutations for the diagonal-advantage null.
pub const PERMUTATIONS: usize = 999;
/// PCA dimensionality for geometry outputs.
pub const PCA_K: usize = 3;

/// Headline numbers of one run; `None` where an analysis does not apply.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub model: String,
    pub graph: String,
    pub final_step: usize,
    pub edge_acc: f64,
    pub full_path_acc: Option<f64>,
    pub first_token_acc: Option<f64>,
    pub decision_token_acc: Option<f64>,
    pub train_full_path_acc: Option<f64>,
    pub n_test_paths: usize,
    pub diagonal_advantage: Option<f64>,
    pub diagonal_p_value: Option<f64>,
    pub test_diagonal_advantage: Option<f64>,
    pub path_pair_advantage: Option<f64>,
    pub silhouette: Option<f64>,
    pub energy_fraction: Option<f64>,
    /// Max over Fiedler indices of final/initial `‖C e_i‖`.
    pub fiedler_kill_ratio: Option<f64>,
    /// Max over other non-degenerate indices of final/initial `‖Vᵀe_i‖`.
    pub other_proj_ratio: Option<f64>,
    pub diagnostics_ok: Option<bool>,
    pub rescaled_norm: Option<f64>,
}

pub const SUMMARY_HEADER: &str = "name,model,graph,final_step,edge_acc,full_path_acc,first_token_acc,\
decision_token_acc,train_full_path_acc,n_test_paths,diagonal_advantage,diagonal_p_value,test_diagonal_advantage,\
path_pair_advantage,silhouette,energy_fraction,fiedler_kill_ratio,other_proj_ratio,diagnostics_ok,rescaled_norm";

impl RunSummary {
    pub fn csv_row(&self) -> String {
        let o = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        [
            self.name.clone(),
            self.model.clone(),
            format!("\"{}\"", self.graph),
            self.final_step.to_string(),
            self.edge_acc.to_string(),
            o(self.full_path_acc),
            o(self.first_token_acc),
            o(self.decision_token_acc),
            o(self.train_full_path_acc),
            self.n_test_paths.to_string(),
            o(self.diagonal_advantage),
            o(self.diagonal_p_value),
            o(self.test_diagonal_advantage),
            o(self.path_pair_advantage),
            o(self.silhouette),
            o(self.energy_fraction),
            o(self.fiedler_kill_ratio),
            o(self.other_proj_ratio),
            self.diagnostics_ok.map_or(String::new(), |b| b.to_string()),
            o(self.rescaled_norm),
        ]
        .join(",")
    }
}

pub fn summary_csv(rows: &[RunSummary]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Everything the analyses need, whether fresh from training or reloaded.
struct RunState<'a> {
    cfg: &'a ExperimentConfig,
    graph: &'a Graph,
    /// `(step, embedding table)`; rows `0..n` are the node tokens.
    history: Vec<(usize, Tensor)>,
    split: Option<Split>,
}

/// Runs one experiment into `dir`. Validation happens before any compute;
/// a mid-run failure leaves the partial artifacts plus `error.json`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let mut art = Artifacts::create(dir)?;
    let mut manifest = Manifest::new(cfg);
    let result = execute(cfg, &mut art, &mut manifest);
    if let Err(e) = &result {
        let record = serde_json::json!({ "error": e.to_string(), "exit_code": e.exit_code() });
        art.write("error.json", &serde_json::to_string_pretty(&record)?)?;
        manifest.status = "failed".into();
    }
    manifest.files = art.files.clone();
    manifest.save(dir)?;
    result
}

fn execute(
    cfg: &ExperimentConfig,
    art: &mut Artifacts,
    manifest: &mut Manifest,
) -> Result<RunSummary> {
    let g = generate(cfg.graph, cfg.seed)?;
    manifest.graph_hash = g.content_hash();
    art.write("graph.txt", &g.to_text())?;
    let mut summary = RunSummary {
        name: cfg.name.clone(),
        model: cfg.model.kind().into(),
        graph: cfg.graph.to_string(),
        ..RunSummary::default()
    };
    let state = match &cfg.model {
        ModelConfig::Node2vec { .. } => run_node2vec(cfg, &g, art, manifest, &mut summary)?,
        _ => run_language_model(cfg, &g, art, manifest, &mut summary)?,
    };
    analyze(&state, art, &mut summary)?;
    art.write("summary.json", &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

fn run_node2vec<'a>(
    cfg: &'a ExperimentConfig,
    g: &'a Graph,
    art: &mut Artifacts,
    manifest: &mut Manifest,
    summary: &mut RunSummary,
) -> Result<RunState<'a>> {
    let vocab = build_vocab(g);
    write_dataset(
        art,
        manifest,
        g,
        vocab.size(),
        "edges",
        &edge_dataset(g, &vocab, cfg.edge_dir),
        None,
    )?;
    let n2v = cfg.model.n2v(cfg.seed).expect("node2vec model");
    let (fin, history) = n2v_run(g, &n2v)?;
    let k = cfg.fiedler_k();
    let report = spectral_trace(&history, g, k)?;
    let mut csv = String::from("step,loss,edge_acc,frobenius,energy_fraction\n");
    for (t, (step, v)) in history.iter().enumerate() {
        let s = Node2Vec { v: v.clone() };
        csv.push_str(&format!(
            "{step},{},{},{},{}\n",
            n2v_loss(&s, g)?,
            eval_embedding_edges(v, g)?,
            v.frobenius(),
            report.energy_fraction[t]
        ));
        art.write(&format!("checkpoints/ckpt_{step}.csv"), &matrix_csv(v))?;
    }
    art.write("metrics.csv", &csv)?;
    let mut params = ParamSet::new();
    params.push("v", fin.v.clone(), false);
    art.write(
        "checkpoints/final.json",
        &serde_json::to_string(&Checkpoint::new("node2vec", n2v.steps, &params))?,
    )?;
    summary.final_step = n2v.steps;
    summary.edge_acc = eval_embedding_edges(&fin.v, g)?;
    Ok(RunState {
        cfg,
        graph: g,
        history,
        split: None,
    })
}

fn write_dataset(
    art: &mut Artifacts,
    manifest: &mut Manifest,
    g: &Graph,
    vocab_size: usize,
    name: &str,
    examples: &[Example],
    split: Option<&Split>,
) -> Result<()> {
    let ds = Dataset {
        vocab_size,
        graph_hash: g.content_hash(),
        split: split.cloned(),
        examples: examples.to_vec(),
    };
    let rel = format!("datasets/{name}.tsv");
    let digest = art.write(&rel, &ds.to_text())?;
    manifest.datasets.insert(rel, digest);
    Ok(())
}

fn build_model(
    cfg: &ExperimentConfig,
    vocab: usize,
    context: usize,
) -> Result<Box<dyn LanguageModel>> {
    Ok(match &cfg.model {
        ModelConfig::Transformer {
            n_layer,
            width,
            heads,
            emb_init_std,
        } => Box::new(Transformer::new(
            TransformerConfig {
                vocab,
                n_layer: *n_layer,
                width: *width,
                heads: *heads,
                context_len: context,
                emb_init_std: *emb_init_std,
            },
            cfg.seed,
        )?),
        ModelConfig::AssocProbe { phi } => Box::new(AssocProbe::new(vocab, *phi)?),
        ModelConfig::Node2vec { .. } => unreachable!("node2vec has its own runner"),
    })
}

fn run_language_model<'a>(
    cfg: &'a ExperimentConfig,
    g: &'a Graph,
    art: &mut Artifacts,
    manifest: &mut Manifest,
    summary: &mut RunSummary,
) -> Result<RunState<'a>> {
    let vocab = build_vocab(g);
    let edges = edge_dataset(g, &vocab, cfg.edge_dir);
    let mut save = |name: &str, examples: &[Example], split: Option<&Split>| {
        write_dataset(art, manifest, g, vocab.size(), name, examples, split)
    };
    save("edges", &edges, None)?;
    let (split, train_paths, test_paths) = match (cfg.path_spec(), &cfg.paths) {
        (Some(spec), Some(p)) => {
            let split = match p.tree_split {
                Some(mode) => tree_star_split(g, mode, p.split_ratio, cfg.seed)?,
                None => Split::random(g, p.split_ratio, cfg.seed)?,
            };
            // evaluation reads whole targets, whatever the loss mask
            let (tr, te) = path_dataset(g, &vocab, &spec, &split)?;
            save("paths_train", &tr, Some(&split))?;
            save("paths_test", &te, Some(&split))?;
            (Some(split), tr, te)
        }
        _ => (None, Vec::new(), Vec::new()),
    };
    let context = edges
        .iter()
        .chain(&train_paths)
        .chain(&test_paths)
        .map(Example::len)
        .max()
        .unwrap_or(2);
    let mut model = build_model(cfg, vocab.size(), context)?;
    let data = TrainData {
        edges,
        edge_dir: cfg.edge_dir,
        train_paths,
        test_paths,
    };
    let out = train_run(model.as_mut(), g, &data, &cfg.train)?;
    art.write("metrics.csv", &out.log.to_csv())?;
    for (step, emb) in &out.checkpoints {
        art.write(&format!("checkpoints/ckpt_{step}.csv"), &matrix_csv(emb))?;
    }
    let last = out.log.last().expect("at least the initial evaluation");
    art.write(
        "checkpoints/final.json",
        &serde_json::to_string(&Checkpoint::new(
            cfg.model.kind(),
            last.step,
            model.params(),
        ))?,
    )?;
    summary.final_step = last.step;
    summary.edge_acc = last.edge_acc;
    if !data.test_paths.is_empty() || !data.train_paths.is_empty() {
        summary.full_path_acc = Some(last.full_path_acc);
        summary.first_token_acc = Some(last.first_token_acc);
        summary.decision_token_acc = Some(last.decision_token_acc);
        summary.train_full_path_acc = Some(last.train_full_path_acc);
        summary.n_test_paths = data.test_paths.len();
    }
    Ok(RunState {
        cfg,
        graph: g,
        history: out.checkpoints,
        split,
    })
}

fn node_rows(emb: &Tensor, g: &Graph) -> Tensor {
    emb.select_rows(&(0..g.n_nodes).collect::<Vec<_>>())
}

fn analyze(state: &RunState, art: &mut Artifacts, summary: &mut RunSummary) -> Result<()> {
    let (cfg, g) = (state.cfg, state.graph);
    for kind in &cfg.analysis {
        match kind {
            AnalysisKind::Spectral => {
                let rep = spectral_trace(&state.history, g, cfg.fiedler_k())?;
                art.write("analysis/spectral.csv", &rep.to_csv())?;
                art.write("analysis/energy.csv", &rep.energy_csv())?;
                let t = rep.steps.len() - 1;
                let ratio = |series: &Vec<Vec<f64>>, idx: &[usize]| {
                    idx.iter()
                        .map(|&i| series[i][t] / series[i][0])
                        .fold(f64::NEG_INFINITY, f64::max)
                };
                summary.energy_fraction = Some(rep.energy_fraction[t]);
                summary.fiedler_kill_ratio = Some(ratio(&rep.kill_c, &rep.fiedler_indices));
                summary.other_proj_ratio = Some(ratio(&rep.proj_v, &rep.other_indices()));
                art.write(
                    "analysis/spectral_report.json",
                    &serde_json::to_string_pretty(&rep)?,
                )?;
            }
            AnalysisKind::Diagnostics => {
                let mut csv = String::from(
                    "step,delta,trace_pp,trace_ok,pp_eig_min,pp_eig_max,pp_ok,adj_eig_min,adj_eig_max,adj_ok,\
c_degenerate_index,c_eig_max,c_ok,c_alignment,softmax_alignment\n",
                );
                let mut all_ok = true;
                for (step, v) in &state.history {
                    let d: DiagnosticsRecord = spectral_diagnostics(v, g, DEFAULT_DELTA)?;
                    all_ok &= d.all_ok();
                    csv.push_str(&format!(
                        "{step},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                        d.delta,
                        d.trace_pp,
                        d.trace_ok,
                        d.pp_eig_min,
                        d.pp_eig_max,
                        d.pp_ok,
                        d.adj_eig_min,
                        d.adj_eig_max,
                        d.adj_ok,
                        d.c_degenerate_index,
                        d.c_eig_max,
                        d.c_ok,
                        d.c_alignment,
                        d.softmax_alignment
                    ));
                }
                art.write("analysis/diagnostics.csv", &csv)?;
                summary.diagnostics_ok = Some(all_ok);
            }
            AnalysisKind::Geometry => geometry(state, art, summary)?,
            AnalysisKind::Complexity => {
                let (m, delta) = match cfg.graph {
                    TopologyTag::PathStar { d, ell } | TopologyTag::TreeStar { d, ell } => (d, ell),
                    _ => (2, g.n_nodes),
                };
                let row = complexity_row(g, m, delta.max(2))?;
                art.write("analysis/complexity.csv", &complexity_csv(&[row]))?;
                if let (ModelConfig::Node2vec { .. }, Some((_, v))) =
                    (&cfg.model, state.history.last())
                {
                    // measured only when the embedding separates neighbours
                    summary.rescaled_norm = margin_rescaled_norm(v, g).ok();
                }
            }
        }
    }
    Ok(())
}

fn geometry(state: &RunState, art: &mut Artifacts, summary: &mut RunSummary) -> Result<()> {
    let g = state.graph;
    let Some((_, last)) = state.history.last() else {
        return Ok(());
    };
    let emb = node_rows(last, g);
    let dist = cosine_distance_matrix(&emb)?;
    art.write("analysis/distance.csv", &matrix_csv(&dist))?;
    art.write(
        "analysis/distance.svg",
        &heatmap_svg(&dist, "node cosine distance"),
    )?;
    let k = PCA_K.min(emb.rows()).min(emb.cols());
    let pca = pca_project(&emb, k)?;
    let labels = if g.topology.is_star() {
        g.arm_labels()
    } else {
        vec![None; g.n_nodes]
    };
    art.write("analysis/pca.csv", &matrix_csv(&pca))?;
    art.write(
        "analysis/pca.svg",
        &scatter_svg(&pca, &labels, "PCA of node embeddings"),
    )?;
    if !g.topology.is_star() {
        return Ok(());
    }
    summary.silhouette = Some(silhouette(&pca, &labels)?);
    let lf = leaf_first_heatmap(&emb, g, None)?;
    let perm = diagonal_permutation_test(&lf, PERMUTATIONS, state.cfg.seed)?;
    art.write("analysis/leaf_first.csv", &matrix_csv(&lf))?;
    art.write(
        "analysis/leaf_first.svg",
        &heatmap_svg(&lf, "leaf vs first-hop cosine distance"),
    )?;
    summary.diagonal_advantage = Some(perm.observed);
    summary.diagonal_p_value = Some(perm.p_value);
    if g.arms.iter().all(|a| a.len() >= 3) {
        let pp = path_pair_heatmap(&emb, g, None)?;
        art.write("analysis/path_pair.csv", &matrix_csv(&pp))?;
        art.write(
            "analysis/path_pair.svg",
            &heatmap_svg(&pp, "path-pair mean cosine distance"),
        )?;
        summary.path_pair_advantage = Some(diagonal_advantage(&pp)?);
    }
    if let Some(split) = &state.split {
        let test_arms: Vec<usize> = (0..g.arms.len())
            .filter(|&i| split.test_leaves.contains(g.arms[i].last().unwrap()))
            .collect();
        if test_arms.len() >= 2 {
            let lt = leaf_first_heatmap(&emb, g, Some(&test_arms))?;
            art.write("analysis/leaf_first_test.csv", &matrix_csv(&lt))?;
            art.write(
                "analysis/leaf_first_test.svg",
                &heatmap_svg(&lt, "held-out arms: leaf vs first hop"),
            )?;
            summary.test_diagonal_advantage = Some(diagonal_advantage(&lt)?);
        }
    }
    art.write(
        "analysis/permutation_test.json",
        &serde_json::to_string_pretty(&perm)?,
    )?;
    Ok(())
}

/// Re-runs the configured analyses over an existing run directory's
/// checkpoints, refreshing `analysis/`, `summary.json` and the manifest.
pub fn analyze_dir(dir: &Path) -> Result<RunSummary> {
    let mut manifest = Manifest::load(dir)?;
    let cfg: ExperimentConfig = serde_json::from_value(manifest.config.clone())?;
    let g = Graph::load(&dir.join("graph.txt"))?;
    let mut history = Vec::new();
    for entry in std::fs::read_dir(dir.join("checkpoints"))? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        if let Some(step) = name
            .strip_prefix("ckpt_")
            .and_then(|s| s.strip_suffix(".csv"))
        {
            let step: usize = step
                .parse()
                .map_err(|_| GeomemError::Parse(format!("bad checkpoint name `{name}`")))?;
            history.push((step, parse_matrix_csv(&std::fs::read_to_string(&path)?)?));
        }
    }
    history.sort_by_key(|h| h.0);
    let split = match Dataset::load(&dir.join("datasets/paths_test.tsv")) {
        Ok(ds) => ds.split,
        Err(_) => None,
    };
    let mut summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json"))?)?;
    let state = RunState {
        cfg: &cfg,
        graph: &g,
        history,
        split,
    };
    let mut art = Artifacts::open(dir, manifest.files.clone());
    analyze(&state, &mut art, &mut summary)?;
    art.write("summary.json", &serde_json::to_string_pretty(&summary)?)?;
    manifest.files = art.files;
    manifest.save(dir)?;
    Ok(summary)
}
