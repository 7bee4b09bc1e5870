use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn multictx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multictx"))
        .current_dir(dir)
        .args(["--log-level", "warn"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = multictx(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const SYNTH: &str = "n_events = 6\nsentences_per_article = 5\nbias_rate = 0.3\n";

const RUN: &str = r#"
output_dir = "OUT"
seeds = [3]

[corpus]
path = "corpus.jsonl"

[split]
k = 3

[triplets]
cap = 2

[cse]
epochs = 1
hidden_dim = 8
output_dim = 8

[gat]
heads = 1
head_dim = 4
epochs = 4
patience = 4

[run]
ablation = true
"#;

#[test]
fn stage_commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("synth.toml"), SYNTH).unwrap();
    let mut snapshots = Vec::new();
    for round in 0..2 {
        let o = |name: &str| format!("{name}{round}");
        ok(d, &["--seed", "5", "synth", "--config", "synth.toml", "--out", &o("c.jsonl")]);
        ok(d, &["--seed", "2", "split", "--input", &o("c.jsonl"), "--k", "3", "--out", &o("f.json")]);
        ok(d, &["--seed", "2", "mine-triplets", "--input", &o("c.jsonl"), "--cap", "3", "--out", &o("t.tsv")]);
        fs::write(d.join("cse.toml"), "epochs = 2\nhidden_dim = 8\noutput_dim = 8\n").unwrap();
        ok(d, &["train-cse", "--corpus", &o("c.jsonl"), "--triplets", &o("t.tsv"), "--base", "hash:64", "--config", "cse.toml", "--out-params", &o("e.ckpt")]);
        ok(d, &["embed", "--corpus", &o("c.jsonl"), "--params", &o("e.ckpt"), "--out", &o("emb.txt")]);
        ok(d, &["build-graph", "--corpus", &o("c.jsonl"), "--embeddings", &o("emb.txt"), "--theta", "0.5", "--out", &o("g.tsv")]);
        ok(d, &["filter", "--graph", &o("g.tsv"), "--corpus", &o("c.jsonl"), "--keep", "1,2,3", "--format", "graphml", "--out", &o("g.graphml")]);
        fs::write(d.join("gat.toml"), "heads = 1\nhead_dim = 4\nepochs = 5\n").unwrap();
        let gat = ok(d, &["train-gat", "--graph", &o("g.tsv"), "--features", &o("emb.txt"), "--corpus", &o("c.jsonl"), "--folds", &o("f.json"), "--fold-id", "1", "--config", "gat.toml", "--out", &o("gat.ckpt"), "--predictions", &o("p.tsv")]);
        let mut snap = vec![gat.stdout];
        for f in ["c.jsonl", "f.json", "t.tsv", "e.ckpt", "emb.txt", "g.tsv", "g.graphml", "gat.ckpt", "p.tsv"] {
            snap.push(fs::read(d.join(o(f))).unwrap());
        }
        snapshots.push(snap);
    }
    assert_eq!(snapshots[0], snapshots[1]);
    let stats = ok(d, &["ingest", "--input", "c.jsonl0", "--stats"]);
    let json: serde_json::Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(json["sentences"], 90);
    assert!(String::from_utf8_lossy(&fs::read(d.join("g.graphml0")).unwrap()).contains("<graphml"));
}

#[test]
fn run_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("synth.toml"), SYNTH).unwrap();
    ok(d, &["synth", "--config", "synth.toml", "--out", "corpus.jsonl"]);
    let mut reports = Vec::new();
    for (i, extra) in [&[][..], &["--workers", "2", "--cache-dir", "cache"][..], &["--cache-dir", "cache"][..]]
        .into_iter()
        .enumerate()
    {
        fs::write(d.join("run.toml"), RUN.replace("OUT", &format!("out{i}"))).unwrap();
        let mut args = extra.to_vec();
        args.extend(["run", "--config", "run.toml"]);
        let out = ok(d, &args);
        assert!(String::from_utf8_lossy(&out.stdout).contains("only Type 4"));
        let mut files = Vec::new();
        for f in ["table2.txt", "table3.txt", "cells.tsv", "report.json", "stats.json", "folds.json"] {
            files.push(fs::read(d.join(format!("out{i}")).join(f)).unwrap());
        }
        reports.push(files);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(multictx(d, &["--help"]).status.code(), Some(0));
    assert_eq!(multictx(d, &["--version"]).status.code(), Some(0));
    assert_eq!(multictx(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(multictx(d, &["ingest"]).status.code(), Some(1));
    assert_eq!(multictx(d, &["ingest", "--input", "missing.jsonl"]).status.code(), Some(1));

    fs::write(d.join("run.toml"), RUN).unwrap();
    let out = multictx(d, &["evaluate", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus.jsonl"));
    assert!(!d.join("OUT").exists());

    fs::write(d.join("bad.jsonl"), "{\"sentence_id\": 0}\n").unwrap();
    assert_eq!(multictx(d, &["ingest", "--input", "bad.jsonl"]).status.code(), Some(1));

    fs::write(d.join("synth.toml"), SYNTH).unwrap();
    ok(d, &["synth", "--config", "synth.toml", "--out", "c.jsonl"]);
    let basil = multictx(d, &["ingest", "--input", "c.jsonl", "--expect-basil"]);
    assert_eq!(basil.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&basil.stderr).contains("expected 7977"));

    // A write into a path below a regular file is a runtime failure.
    let out = multictx(d, &["split", "--input", "c.jsonl", "--k", "3", "--out", "c.jsonl/folds.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
