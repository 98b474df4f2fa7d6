use std::path::Path;
use std::process::{Command, Output};

fn geotok(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geotok"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn parse_smiles_writes_three_atoms() {
    let dir = tempfile::tempdir().unwrap();
    let out = geotok(dir.path(), &["parse", "--smiles", "CCO", "-o", "g.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.json")).unwrap()).unwrap();
    assert_eq!(json["atoms"].as_array().unwrap().len(), 3);
    assert_eq!(json["coords"].as_array().unwrap().len(), 3);
}

#[test]
fn parse_fiber_and_pdb() {
    let dir = tempfile::tempdir().unwrap();
    let out = geotok(dir.path(), &["parse", "--fiber", "ACGU", "--rna", "-o", "r.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(json["modality"], "rna");

    let pdb = "ATOM      1  N   GLY A   1      -0.500   1.200   0.000  1.00  0.00           N\n\
               ATOM      2  CA  GLY A   1       0.700   0.400   0.000  1.00  0.00           C\n";
    std::fs::write(dir.path().join("p.pdb"), pdb).unwrap();
    let out = geotok(dir.path(), &["parse", "--pdb", "p.pdb", "-o", "p.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("2 atoms"));
}

#[test]
fn bench_tokens_emits_nine_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = geotok(dir.path(), &["bench-tokens", "--sizes", "32,128,512", "--mode", "uniform"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["node_count", "method", "structural_tokens", "language_tokens", "ratio"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 9);
    let adaptive: Vec<&str> = rows.iter().filter(|r| &r[1] == "adaptive").map(|r| r.get(2).unwrap()).collect();
    assert_eq!(adaptive, ["4", "13", "52"]);

    let again = geotok(dir.path(), &["bench-tokens", "--sizes", "32,128,512", "-o", "curve.csv"]);
    assert!(again.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("curve.csv")).unwrap(), text);
}

#[test]
fn patch_reports_normalized_membership() {
    let dir = tempfile::tempdir().unwrap();
    assert!(geotok(dir.path(), &["parse", "--smiles", "c1ccccc1O", "-o", "phenol.json"]).status.success());
    let out = geotok(
        dir.path(),
        &["patch", "--graph", "phenol.json", "--instruction", "Describe this molecule.", "-o", "patch.json"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("patch.json")).unwrap()).unwrap();
    let k = json["k_g"].as_u64().unwrap() as usize;
    assert_eq!(json["anchors"].as_array().unwrap().len(), k);
    assert_eq!(json["token_norms"].as_array().unwrap().len(), k);
    for s in json["membership_row_sums"].as_array().unwrap() {
        assert!((s.as_f64().unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn staged_training_chain_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "graph_encoder_hidden_size": 8, "graph_encoder_depth": 1, "number_of_rbf_bases": 4,
        "fusion_block_count": 1, "attention_head_count": 2, "fusion_model_width": 8,
        "fusion_mlp_intermediate_size": 8, "gate_mlp_hidden_size": 8,
        "language_model_width": 8, "language_model_heads": 2, "language_model_blocks": 1,
        "language_model_ffn_multiplier": 2, "max_steps": 2, "per_device_train_batch_size": 2,
        "gradient_accumulation_steps": 1, "warmup_steps": 1, "evaluation_frequency": 1
    }"#;
    std::fs::write(dir.path().join("tiny.json"), config).unwrap();
    let steps: [&[&str]; 4] = [
        &["pretrain-encoder", "-o", "enc.json"],
        &["pretrain-decoder", "-o", "dec.json"],
        &["align", "--encoder", "enc.json", "--decoder", "dec.json", "-o", "align.json"],
        &["adapt", "--checkpoint", "align.json", "-o", "adapt.json"],
    ];
    for args in steps {
        let mut full = vec!["--config", "tiny.json", "--seed", "3"];
        full.extend_from_slice(args);
        let out = geotok(dir.path(), &full);
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
    }
    let csv = std::fs::read_to_string(dir.path().join("adapt.report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "step,loss,lr,grad_norm");
    assert_eq!(csv.lines().count(), 3);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("align.report.json")).unwrap()).unwrap();
    assert_eq!(report["stage"], "alignment");

    let out = geotok(
        dir.path(),
        &["bench-tokens", "--sizes", "16,64", "--mode", "trained", "--checkpoint", "align.json"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 7);
}

#[test]
fn unknown_subcommand_exits_two_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = geotok(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn failures_are_one_line_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = geotok(dir.path(), &["parse", "--smiles", "C(", "-o", "g.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("unbalanced parenthesis"), "{err}");

    let out = geotok(dir.path(), &["align", "--encoder", "missing.json", "-o", "a.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr(&out).lines().count(), 1);

    let out = geotok(dir.path(), &["bench-tokens", "--sizes", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"learning_rat": 0.1}"#).unwrap();
    let out = geotok(dir.path(), &["--config", "bad.json", "bench-tokens", "--sizes", "8"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("learning_rat"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = geotok(dir.path(), &["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}
