use geomem::cli::{
    analyze_dir, preset, run_experiment, run_preset, tiny_n2v, verify, AnalysisKind,
    ExperimentConfig, Preset,
};
use geomem::graph::TopologyTag;
use std::process::Command;

fn small_n2v() -> ExperimentConfig {
    let mut cfg = tiny_n2v(
        TopologyTag::PathStar { d: 4, ell: 4 },
        vec![
            AnalysisKind::Spectral,
            AnalysisKind::Diagnostics,
            AnalysisKind::Geometry,
            AnalysisKind::Complexity,
        ],
    );
    if let geomem::cli::ModelConfig::Node2vec {
        steps,
        record_every,
        ..
    } = &mut cfg.model
    {
        *steps = 200;
        *record_every = 50;
    }
    cfg
}

fn small_lm() -> ExperimentConfig {
    let mut cfg = geomem::cli::d20("lm");
    cfg.graph = TopologyTag::PathStar { d: 4, ell: 4 };
    cfg.model = geomem::cli::ModelConfig::Transformer {
        n_layer: 1,
        width: 16,
        heads: 2,
        emb_init_std: 0.02,
    };
    cfg.train.total_steps = 40;
    cfg.train.warmup_steps = 5;
    cfg.train.eval_interval = 20;
    cfg.train.batch_size = 8;
    cfg.paths.as_mut().unwrap().split_ratio = 0.5;
    cfg
}

#[test]
fn node2vec_run_writes_verifiable_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let s = run_experiment(&small_n2v(), tmp.path()).unwrap();
    assert_eq!(s.final_step, 200);
    assert!(s.energy_fraction.is_some() && s.silhouette.is_some());
    for f in [
        "manifest.json",
        "metrics.csv",
        "graph.txt",
        "analysis/spectral.csv",
        "analysis/diagnostics.csv",
        "analysis/leaf_first.svg",
        "checkpoints/ckpt_0.csv",
        "checkpoints/ckpt_200.csv",
    ] {
        assert!(tmp.path().join(f).is_file(), "{f} missing");
    }
    assert!(verify(tmp.path()).unwrap() > 5);
    // re-analysis from checkpoints reproduces the summary
    let again = analyze_dir(tmp.path()).unwrap();
    assert_eq!(again.energy_fraction, s.energy_fraction);
    assert_eq!(again.silhouette, s.silhouette);
    assert!(verify(tmp.path()).is_ok());
}

#[test]
fn language_model_runs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_experiment(&small_lm(), a.path()).unwrap();
    let sb = run_experiment(&small_lm(), b.path()).unwrap();
    assert_eq!(sa, sb);
    let read = |d: &std::path::Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(sa.n_test_paths, 2);
    assert!(a.path().join("datasets/paths_test.tsv").is_file());
}

#[test]
fn preset_directory_nests_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let mut lm = small_lm();
    lm.name = "second".into();
    let p = Preset {
        name: "mini".into(),
        description: String::new(),
        runs: vec![small_n2v(), lm],
        complexity: preset("complexity-table").unwrap().complexity,
    };
    let rows = run_preset(&p, tmp.path()).unwrap();
    assert_eq!(rows.len(), 2);
    let summary = std::fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(tmp.path().join("complexity.csv").is_file());
    let n = verify(tmp.path()).unwrap();
    // tampering with a nested run breaks the top-level verification
    std::fs::write(tmp.path().join("second/metrics.csv"), "x").unwrap();
    assert!(verify(tmp.path()).is_err());
    assert!(n > 10);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_geomem");
    let ok = Command::new(bin)
        .args(["complexity", "cycle(15)"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("cycle(15)"));

    let bad = Command::new(bin)
        .args(["graph", "path_star(0,3)"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_lm();
    cfg.train.path_weight = 0.0;
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = tmp.path().join("run");
    let st = Command::new(bin)
        .args([
            "train",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    // rejected before any output is produced
    assert!(!out.exists());

    let missing = Command::new(bin)
        .args(["verify", tmp.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn data_subcommand_writes_datasets() {
    let tmp = tempfile::tempdir().unwrap();
    let st = Command::new(env!("CARGO_BIN_EXE_geomem"))
        .args([
            "data",
            "tree_star(2,4)",
            "--paths",
            "forward",
            "--n-pause",
            "2",
            "--tree-split",
            "split_at_first_token",
            "--split-ratio",
            "0.5",
            "--out",
            tmp.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    let train = geomem::data::Dataset::load(&tmp.path().join("paths_train.tsv")).unwrap();
    let test = geomem::data::Dataset::load(&tmp.path().join("paths_test.tsv")).unwrap();
    assert_eq!(train.examples.len() + test.examples.len(), 8);
    assert!(train.examples.iter().all(|e| e.tokens.len() == 1 + 2 + 4));
}
