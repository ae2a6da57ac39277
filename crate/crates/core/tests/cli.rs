use std::path::Path;
use std::process::{Command, Output};

fn lookat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lookat"))
        .args(args)
        .current_dir(cwd)
        .env("LOOKAT_THREADS", "1")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn synth_train_encode_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("spec.json"),
        r#"{"head_count": 2, "seq_len": 200, "head_dim": 16, "seed": 4}"#,
    )
    .unwrap();
    let o = lookat(&["synth", "--spec", "spec.json", "--out", "d.lkat"], d);
    assert!(o.status.success(), "{o:?}");

    let o = lookat(
        &[
            "train", "--input", "d.lkat", "--m", "4", "--K", "64", "--out", "cb.lkcb",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).matches("subspace").count(), 4);

    // A spec JSON works as training input too.
    let o = lookat(
        &[
            "train",
            "--input",
            "spec.json",
            "--m",
            "4",
            "--K",
            "64",
            "--out",
            "cb2.lkcb",
        ],
        d,
    );
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(d.join("cb.lkcb")).unwrap(),
        std::fs::read(d.join("cb2.lkcb")).unwrap()
    );

    let o = lookat(
        &[
            "encode",
            "--input",
            "d.lkat",
            "--codebook",
            "cb.lkcb",
            "--out",
            "codes.lkcc",
        ],
        d,
    );
    assert!(o.status.success(), "{o:?}");
    let (cache, k) =
        lookat::CompressedKeyCache::from_bytes(&std::fs::read(d.join("codes.lkcc")).unwrap())
            .unwrap();
    assert_eq!(
        (
            cache.head_count(),
            cache.seq_len(),
            cache.num_subspaces(),
            k
        ),
        (2, 200, 4, 64)
    );
}

#[test]
fn cost_prints_reference_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let o = lookat(
        &["cost", "--L", "512", "--dk", "64", "--m", "4", "--K", "256"],
        dir.path(),
    );
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("standard,32768,-,65536,128"), "{s}");
    assert!(s.contains("lookat-4,18432,3072,2048,4"), "{s}");
    assert!(s.contains("32x"));
}

#[test]
fn sweep_prop_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = lookat(
        &[
            "sweep-prop",
            "--m-list",
            "2,4",
            "--k-list",
            "16,64",
            "--heads",
            "2",
            "--len",
            "256",
            "--json",
            "t.json",
        ],
        dir.path(),
    );
    assert!(
        o.status.code() == Some(0) || o.status.code() == Some(2),
        "{o:?}"
    );
    let table: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("t.json")).unwrap()).unwrap();
    assert_eq!(table["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn failed_cell_exits_two_and_still_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"input": {"dumps": ["missing.lkat"]}, "methods": ["int8"], "output_path": "r.json"}"#,
    )
    .unwrap();
    let o = lookat(&["eval", "--config", "cfg.json"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.lkat"));
    assert!(d.join("r.json").exists() && d.join("r.csv").exists());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = lookat(&["cost", "--L", "512", "--dk", "64", "--m", "5"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    std::fs::write(d.join("junk.lkat"), b"XXXXjunk").unwrap();
    let o = lookat(
        &[
            "encode",
            "--input",
            "junk.lkat",
            "--codebook",
            "none",
            "--out",
            "c",
        ],
        d,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!lookat(&["frobnicate"], d).status.success());
}
