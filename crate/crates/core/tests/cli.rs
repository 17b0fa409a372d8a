mod common;

use std::process::Command;

use common::cli::{all_workflows, code, files, s, stderr, ttada, write_small_manifest};

#[test]
fn usage_and_validation_exit_codes() {
    let out = ttada(&[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).to_lowercase().contains("usage"), "{}", stderr(&out));

    assert_eq!(code(&ttada(&["adapt", "--no-such-flag"])), 1);
    assert_eq!(code(&ttada(&["--help"])), 0);
    assert_eq!(code(&ttada(&["adapt", "--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = ttada(&["gradcheck", "--trials", "0", "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"adapt": {"learning_rate": 0.1, "not_a_field": 3}}"#).unwrap();
    let out = ttada(&["gradcheck", "--config", s(&bad), "--out-dir", s(&out_dir)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("not_a_field"), "{}", stderr(&out));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ttw");
    let out = ttada(&["zeroshot", "--weights", s(&missing), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing.ttw"), "{}", stderr(&out));

    let junk = dir.path().join("junk.ttw");
    std::fs::write(&junk, b"definitely not weights").unwrap();
    assert_eq!(code(&ttada(&["zeroshot", "--weights", s(&junk), "--out-dir", s(dir.path())])), 2);
}

#[test]
fn gradcheck_reports_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ttada(&["gradcheck", "--seed", "0", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max relative error"), "{text}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["trials"].as_array().unwrap().len(), 20);
    assert!(report["max_rel_err"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, env_seed: Option<&str>, flag_seed: Option<&str>| {
        let out_dir = dir.path().join(sub);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ttada"));
        cmd.args(["gradcheck", "--trials", "3", "--out-dir", s(&out_dir)]);
        cmd.env_remove("TTADA_SEED");
        if let Some(v) = env_seed {
            cmd.env("TTADA_SEED", v);
        }
        if let Some(v) = flag_seed {
            cmd.args(["--seed", v]);
        }
        assert!(cmd.status().unwrap().success());
        std::fs::read(out_dir.join("gradcheck.json")).unwrap()
    };
    let from_env = run("env", Some("9"), None);
    let from_flag = run("flag", None, Some("9"));
    let flag_wins = run("both", Some("4"), Some("9"));
    let default = run("none", None, None);
    assert_eq!(from_env, from_flag);
    assert_eq!(flag_wins, from_flag);
    assert_ne!(default, from_flag);
}

#[test]
fn every_workflow_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_small_manifest(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let codes_a = all_workflows(&a, &manifest);
    let codes_b = all_workflows(&b, &manifest);
    assert!(codes_a.iter().all(|(_, c)| *c == 0), "{codes_a:?}");
    assert_eq!(codes_a, codes_b);

    let (fa, fb) = (files(&a), files(&b));
    let names: Vec<&String> = fa.keys().collect();
    for want in [
        "weights.ttw",
        "pretrain.json",
        "zeroshot.csv",
        "zeroshot.json",
        "adapt.csv",
        "adapt.json",
        "ablate.csv",
        "ablate.json",
        "grid.csv",
        "grid.json",
        "gradcheck.json",
        "augment_preview.json",
        "augment_views.f32",
    ] {
        assert!(fa.contains_key(want), "missing {want} in {names:?}");
    }
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs between runs");
    }

    // three domains, two seeds, two view counts, a 3x3 grid
    let lines = |name: &str| String::from_utf8_lossy(&fa[name]).lines().count();
    assert_eq!(lines("adapt.csv"), 3 * 2 + 1);
    assert_eq!(lines("ablate.csv"), 3 * 2 * 2 + 1);
    assert_eq!(lines("grid.csv"), 3 * 3 * 2 + 1);
    assert_eq!(lines("zeroshot.csv"), 3 + 1);
}
