use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vbpe::eval::EmbeddingTable;
use vbpe::format::load_grids;
use vbpe::plan::PlanFile;
use vbpe::tokenizer::read_records;
use vbpe::Vocabulary;

fn vbpe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbpe"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = vbpe(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn markov(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let out = p(dir, name);
    ok(&[
        "gen-markov",
        "--n-symbols",
        "4",
        "--stay-right",
        "0.85",
        "--stay-down",
        "0.8",
        "--height",
        "12",
        "--width",
        "10",
        "--count",
        "30",
        "--seed",
        seed,
        "--out",
        s(&out),
    ]);
    out
}

fn trained(dir: &Path, corpus: &Path) -> PathBuf {
    let vocab = p(dir, "vocab.json");
    ok(&[
        "train-vocab",
        "--corpus",
        s(corpus),
        "--base-k",
        "4",
        "--ext-size",
        "40",
        "--n-text",
        "100",
        "--out",
        s(&vocab),
    ]);
    vocab
}

#[test]
fn train_encode_decode_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = markov(dir.path(), "c.vbpg", "7");
    let vocab = trained(dir.path(), &corpus);
    let tokens = p(dir.path(), "tokens.jsonl");
    let back = p(dir.path(), "back.vbpg");
    ok(&[
        "encode",
        "--vocab",
        s(&vocab),
        "--corpus",
        s(&corpus),
        "--out",
        s(&tokens),
    ]);
    ok(&[
        "decode",
        "--vocab",
        s(&vocab),
        "--tokens",
        s(&tokens),
        "--out",
        s(&back),
    ]);
    assert_eq!(fs::read(&corpus).unwrap(), fs::read(&back).unwrap());

    let records = read_records(fs::read(&tokens).unwrap().as_slice()).unwrap();
    assert_eq!(records.len(), 30);
    let cells: usize = records.iter().map(|r| (r.h * r.w) as usize).sum();
    let ids: usize = records.iter().map(|r| r.ids.len()).sum();
    assert!(records
        .iter()
        .all(|r| r.version == 1 && r.ids.len() <= (r.h * r.w) as usize));
    assert!(ids < cells);
}

#[test]
fn train_vocab_reports_progress_and_writes_layout() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = markov(dir.path(), "c.vbpg", "1");
    let vocab = p(dir.path(), "v.json");
    let out = ok(&[
        "train-vocab",
        "--corpus",
        s(&corpus),
        "--base-k",
        "4",
        "--ext-size",
        "5",
        "--n-text",
        "100",
        "--out",
        s(&vocab),
    ]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<_> = stderr.lines().filter(|l| l.starts_with("iter ")).collect();
    assert_eq!(lines.len(), 5);
    assert!(
        lines[0].contains("pair (") && lines[0].contains("\tP ") && lines[0].contains("regions ")
    );
    let v = Vocabulary::load(&vocab).unwrap();
    assert_eq!((v.n_text(), v.base_size(), v.ext_len()), (100, 4, 5));
}

#[test]
fn gen_markov_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = markov(dir.path(), "a.vbpg", "7");
    let b = markov(dir.path(), "b.vbpg", "7");
    let c = markov(dir.path(), "c.vbpg", "8");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let grids = load_grids(&a).unwrap();
    assert_eq!(grids.len(), 30);
    assert!(grids
        .iter()
        .all(|g| g.height() == 12 && g.width() == 10 && g.max_index().unwrap() < 4));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(vbpe(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(vbpe(&["encode", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        vbpe(&["train-vocab", "--corpus", "x"]).status.code(),
        Some(2)
    );
}

#[test]
fn module_errors_exit_1_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let missing = p(dir.path(), "missing.vbpg");
    let out = vbpe(&[
        "train-vocab",
        "--corpus",
        s(&missing),
        "--base-k",
        "4",
        "--ext-size",
        "1",
        "--out",
        s(&p(dir.path(), "v.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let truncated = p(dir.path(), "t.vbpg");
    fs::write(&truncated, b"VBPG\x01\x00\x02\x00\x00\x00").unwrap();
    let out = vbpe(&["stats", "--corpus", s(&truncated)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset"));

    // cell values beyond the declared codebook size
    let corpus = markov(dir.path(), "c.vbpg", "2");
    let out = vbpe(&[
        "train-vocab",
        "--corpus",
        s(&corpus),
        "--base-k",
        "3",
        "--ext-size",
        "1",
        "--out",
        s(&p(dir.path(), "v.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn layout_mismatch_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = markov(dir.path(), "c.vbpg", "3");
    let vocab = trained(dir.path(), &corpus);
    let tokens = p(dir.path(), "t.jsonl");
    for flag in [
        ["--n-text", "32000"],
        ["--base-k", "8"],
        ["--ext-size", "41"],
    ] {
        let mut args = vec![
            "encode",
            "--vocab",
            s(&vocab),
            "--corpus",
            s(&corpus),
            "--out",
            s(&tokens),
        ];
        args.extend(flag);
        let out = vbpe(&args);
        assert_eq!(out.status.code(), Some(1), "{flag:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
    }
    ok(&[
        "encode",
        "--vocab",
        s(&vocab),
        "--corpus",
        s(&corpus),
        "--out",
        s(&tokens),
        "--n-text",
        "100",
        "--base-k",
        "4",
        "--ext-size",
        "40",
    ]);
}

#[test]
fn decode_rejects_foreign_ids() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = markov(dir.path(), "c.vbpg", "4");
    let vocab = trained(dir.path(), &corpus);
    let tokens = p(dir.path(), "t.jsonl");
    fs::write(&tokens, "{\"version\":1,\"h\":1,\"w\":2,\"ids\":[7,100]}\n").unwrap();
    let out = vbpe(&[
        "decode",
        "--vocab",
        s(&vocab),
        "--tokens",
        s(&tokens),
        "--out",
        s(&p(dir.path(), "o.vbpg")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn assemble_wraps_image_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = markov(dir.path(), "c.vbpg", "5");
    let vocab = trained(dir.path(), &corpus);
    let tokens = p(dir.path(), "t.jsonl");
    ok(&[
        "encode",
        "--vocab",
        s(&vocab),
        "--corpus",
        s(&corpus),
        "--out",
        s(&tokens),
    ]);
    let text = p(dir.path(), "text.txt");
    fs::write(&text, "1 2 3\n".repeat(30)).unwrap();
    let seqs = p(dir.path(), "seq.jsonl");
    ok(&[
        "assemble",
        "--vocab",
        s(&vocab),
        "--text",
        s(&text),
        "--tokens",
        s(&tokens),
        "--out",
        s(&seqs),
    ]);
    let layout = Vocabulary::load(&vocab).unwrap().layout();
    let records = read_records(fs::read(&tokens).unwrap().as_slice()).unwrap();
    let body = fs::read_to_string(&seqs).unwrap();
    for (line, rec) in body.lines().zip(&records) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["version"], 1);
        let ids: Vec<u32> = serde_json::from_value(v["ids"].clone()).unwrap();
        assert_eq!(&ids[..4], &[1, 2, 3, layout.boi().0]);
        assert_eq!(&ids[4..ids.len() - 1], rec.ids.as_slice());
        assert_eq!(*ids.last().unwrap(), layout.eoi().0);
    }

    fs::write(&text, "1 2 100\n".repeat(30)).unwrap();
    let out = vbpe(&[
        "assemble",
        "--vocab",
        s(&vocab),
        "--text",
        s(&text),
        "--tokens",
        s(&tokens),
        "--out",
        s(&seqs),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stats_prints_ranked_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = markov(dir.path(), "c.vbpg", "6");
    let out = ok(&[
        "stats",
        "--corpus",
        s(&corpus),
        "--base-k",
        "4",
        "--n-text",
        "0",
        "--top",
        "5",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "left\tright\th_count\tv_count\tF\tS\tP");
    assert_eq!(lines.len(), 6);
    let p: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split('\t').nth(6).unwrap().parse().unwrap())
        .collect();
    assert!(p.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn eval_nll_reports_raw_and_vocab_rows() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = markov(dir.path(), "c.vbpg", "9");
    let vocab = trained(dir.path(), &corpus);
    let out = ok(&[
        "eval-nll",
        "--corpus",
        s(&corpus),
        "--vocab",
        s(&vocab),
        "--order",
        "1",
        "--lambda",
        "0.5",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][0], "raw");
    let col = rows[0].iter().position(|&c| c == "nll_per_cell").unwrap();
    let raw: f64 = rows[1][col].parse().unwrap();
    let bpe: f64 = rows[2][col].parse().unwrap();
    assert!(raw > 0.0 && bpe > 0.0);
    assert_eq!(rows[1][4], "24");
    assert_eq!(rows[1][5], "6");

    let out = vbpe(&["eval-nll", "--corpus", s(&corpus), "--order", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plan_file_is_versioned() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "plan.json");
    ok(&["plan", "--n-layers", "32", "--out", s(&out)]);
    let plan: PlanFile = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(plan.version, 1);
    assert_eq!(plan.stages.len(), 3);
    assert_eq!(plan.stages[1].mask.unfrozen_layers().len(), 8);
    assert_eq!(
        vbpe(&[
            "plan",
            "--stages",
            "custom",
            "--n-layers",
            "4",
            "--out",
            s(&out)
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn expand_embeddings_from_vocab_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = markov(dir.path(), "c.vbpg", "10");
    let vocab = trained(dir.path(), &corpus);
    let a = p(dir.path(), "a.bin");
    let b = p(dir.path(), "b.bin");
    ok(&[
        "expand-embeddings",
        "--vocab",
        s(&vocab),
        "--dim",
        "8",
        "--seed",
        "2",
        "--out",
        s(&a),
    ]);
    ok(&[
        "expand-embeddings",
        "--n-text",
        "100",
        "--base-k",
        "4",
        "--ext-size",
        "40",
        "--dim",
        "8",
        "--seed",
        "2",
        "--out",
        s(&b),
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let t = EmbeddingTable::load(&a).unwrap();
    assert_eq!((t.rows(), t.dim()), (146, 8));
    assert_eq!(&fs::read(&a).unwrap()[..4], b"VBPE");
    let out = vbpe(&[
        "expand-embeddings",
        "--vocab",
        s(&vocab),
        "--dim",
        "0",
        "--out",
        s(&a),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
