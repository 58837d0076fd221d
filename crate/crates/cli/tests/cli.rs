use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gaze(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaze")).args(args).output().unwrap()
}

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mini").join(rel)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&gaze(&[])), 1);
    assert_eq!(code(&gaze(&["no-such-command"])), 1);
    assert_eq!(code(&gaze(&["segment", "--dispersion", "wide"])), 1);
    assert_eq!(code(&gaze(&["--help"])), 0);
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "t_ms,x\nnot,a,row\n").unwrap();
    let o = gaze(&["segment", "--input", s(&bad)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn empty_bundle_fails_validation_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gaze(&["validate", "--bundle", s(dir.path())])), 2);
}

#[test]
fn project_without_priors_names_weight_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    assert_eq!(
        code(&gaze(&["run", "--config", s(&data("config.toml")), "--out", s(&out)])),
        0
    );
    let o = gaze(&[
        "project",
        "--pseudo",
        s(&out.join("pseudo.json")),
        "--priors",
        s(&dir.path().join("absent.json")),
        "--shards",
        s(&out.join("shards.json")),
    ]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("weight_projection"), "{err}");
}

#[test]
fn run_is_byte_reproducible_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = gaze(&[
            "run",
            "--config",
            s(&data("config.toml")),
            "--out",
            s(out),
            "--seed",
            "42",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
    let o = gaze(&["validate", "--bundle", s(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tokens = data("gaze/filter_evens/tokens.json");
    let geometry = data("geometry.json");
    let fix = d.join("fix.json");
    let path = d.join("path.json");
    let ok = |o: Output| assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    ok(gaze(&[
        "segment",
        "--input",
        s(&data("gaze/filter_evens/session_000.csv")),
        "--geometry",
        s(&geometry),
        "-o",
        s(&fix),
    ]));
    ok(gaze(&[
        "align",
        "--fixations",
        s(&fix),
        "--tokens",
        s(&tokens),
        "-o",
        s(&path),
    ]));
    ok(gaze(&[
        "fit-priors",
        "--paths",
        s(&path),
        "--tokens",
        s(&tokens),
        "-o",
        s(&d.join("priors.json")),
    ]));
    ok(gaze(&[
        "fit-transitions",
        "--paths",
        s(&path),
        "--tokens",
        s(&tokens),
        "--prune",
        "1",
        "-o",
        s(&d.join("tables.json")),
    ]));
    ok(gaze(&[
        "gen-pseudo",
        "--tokens",
        s(&tokens),
        "--priors",
        s(&d.join("priors.json")),
        "--tables",
        s(&d.join("tables.json")),
        "-o",
        s(&d.join("pseudo.json")),
    ]));

    let priors: serde_json::Value = serde_json::from_slice(&fs::read(d.join("priors.json")).unwrap()).unwrap();
    assert!(priors.get("reading").is_some(), "{priors}");
    let pseudo: serde_json::Value = serde_json::from_slice(&fs::read(d.join("pseudo.json")).unwrap()).unwrap();
    assert_eq!(pseudo["examples"].as_array().unwrap().len(), 1);
}
