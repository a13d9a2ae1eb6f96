//! The `jmini` binary end to end on a seconds-long configuration.

use std::path::Path;
use std::process::{Command, Output};

const QUICK: &str = r#"
seed = 3
[paths]
corpus = "corpus"
run = "run"
[model]
embed_dim = 64
n_heads = 4
adaptor_hidden_dim = 64
ffn_dim = 128
[corpus]
understanding = 60
text = 30
generation = 120
[pretrain]
tokenizer_steps = 30
encoder_steps = 10
heldout = 8
[stage1]
steps = 6
[stage2]
steps = 12
early_stop_step = 8
[stage3]
steps = 6
[training]
probe_size = 8
"#;

fn jmini(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jmini"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env("JMINI_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = jmini(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    jmini(dir, args).status.code().expect("exited normally")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("quick.toml"), QUICK).unwrap();
    dir
}

#[test]
fn corpus_is_byte_identical_per_seed() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "quick.toml", "corpus", "--out", "a"]);
    ok(d, &["--config", "quick.toml", "corpus", "--out", "b"]);
    ok(d, &["--config", "quick.toml", "--seed", "4", "corpus", "--out", "c"]);
    for f in ["manifest.json", "generation/records.jsonl", "understanding/000003.png", "text/records.jsonl"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
        if f != "manifest.json" {
            assert_ne!(a, std::fs::read(d.join("c").join(f)).unwrap(), "{f}");
        }
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["generation_clean"], 60);
    assert_eq!(manifest["generation_augmented"], 60);
    assert_eq!(manifest["understanding"], 60);
}

#[test]
fn train_then_use_every_command() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "quick.toml", "corpus"]);
    let summary = ok(d, &["--config", "quick.toml", "train"]);
    assert!(summary.contains("stage 2: 8 steps"), "{summary}");
    for s in 0..=3 {
        assert!(d.join(format!("run/stage{s}.ckpt")).exists());
    }

    let inspect = ok(d, &["--config", "quick.toml", "inspect", "--checkpoint", "run/stage1.ckpt"]);
    for g in jmini::ParamGroup::ALL {
        assert!(inspect.contains(g.name()), "{g} missing from\n{inspect}");
    }
    assert!(inspect.contains("format version"));

    let p1 = ok(d, &["--config", "quick.toml", "--seed", "11", "generate", "a blue square", "--out", "g1"]);
    let p2 = ok(d, &["--config", "quick.toml", "--seed", "11", "generate", "a blue square", "--out", "g2"]);
    let png1 = std::fs::read(d.join(p1.trim())).unwrap();
    assert_eq!(png1, std::fs::read(d.join(p2.trim())).unwrap());
    assert!(d.join("g1/a_blue_square_11.json").exists());

    let table = ok(d, &["--config", "quick.toml", "eval", "--n-per-category", "2", "--out", "ev"]);
    let header = table.lines().next().unwrap();
    for col in ["Single Obj.", "Two Obj.", "Counting", "Colors", "Position", "Color Attri.", "Overall"] {
        assert!(header.contains(col), "{header}");
    }
    assert!(d.join("ev/report.json").exists());

    let answer = ok(d, &["--config", "quick.toml", "understand", "corpus/understanding/000000.png", "what color is the circle"]);
    assert!(answer.ends_with('\n'));

    // resuming a finished run is a no-op restart from the stage-1 output
    ok(d, &["--config", "quick.toml", "train", "--from-stage", "2", "--resume"]);
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[model]\nwidth = 3\n").unwrap();
    assert_eq!(code(d, &["--config", "bad.toml", "config"]), 2);
    assert_eq!(code(d, &["--scale", "huge", "config"]), 2);
    assert_eq!(
        jmini(d, &["--config", "quick.toml", "config"]).status.code(),
        Some(0)
    );
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_jmini"))
        .args(["--config", "quick.toml", "config"])
        .current_dir(d)
        .env("JMINI_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));

    assert_eq!(code(d, &["--config", "missing.toml", "config"]), 3);
    assert_eq!(code(d, &["--config", "quick.toml", "inspect", "--checkpoint", "nope.ckpt"]), 3);
    std::fs::write(d.join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(code(d, &["--config", "quick.toml", "inspect", "--checkpoint", "junk.ckpt"]), 5);

    // training without a corpus, or a later stage without its input, violates the contract
    assert_eq!(code(d, &["--config", "quick.toml", "train"]), 4);
    ok(d, &["--config", "quick.toml", "corpus"]);
    let out = jmini(d, &["--config", "quick.toml", "train", "--from-stage", "2"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage 1"));
}
