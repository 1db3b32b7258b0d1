use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mrseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrseg"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mrseg(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "--seed",
            "1",
            "generate",
            "--out",
            "train.ply",
            "--config",
            "cfg.json",
            "--density",
            "500",
        ],
    );
    ok(
        d,
        &[
            "--seed",
            "2",
            "generate",
            "--out",
            "scan.ply",
            "--density",
            "500",
        ],
    );
    ok(
        d,
        &[
            "train",
            "--config",
            "cfg.json",
            "--in",
            "train.ply",
            "--stage1-model",
            "m1.json",
            "--stage2-models",
            "m2",
        ],
    );
    tmp
}

#[test]
fn pipeline_equals_subcommands_in_sequence() {
    let tmp = setup();
    let d = tmp.path();
    ok(
        d,
        &[
            "pipeline",
            "--config",
            "cfg.json",
            "--in",
            "scan.ply",
            "--stage1-model",
            "m1.json",
            "--stage2-models",
            "m2",
            "--out",
            "labels.txt",
            "--stats",
            "stats.json",
            "--initial",
            "init.txt",
        ],
    );

    // the generated scene has its lowest point at z = 0
    ok(
        d,
        &[
            "subsample",
            "--in",
            "scan.ply",
            "--voxel",
            "0.08",
            "--out",
            "low.ply",
            "--map",
            "sub.json",
        ],
    );
    ok(
        d,
        &[
            "features",
            "--in",
            "low.ply",
            "--k",
            "14",
            "--elevation-ref",
            "0",
            "--out",
            "low_f.txt",
        ],
    );
    ok(
        d,
        &[
            "predict",
            "--model",
            "m1.json",
            "--features",
            "low_f.txt",
            "--out",
            "low_l.txt",
        ],
    );
    ok(
        d,
        &[
            "project",
            "voxel",
            "--labels",
            "low_l.txt",
            "--low",
            "low.ply",
            "--map",
            "sub.json",
            "--full",
            "scan.ply",
            "--out",
            "init2.txt",
        ],
    );
    ok(
        d,
        &[
            "project",
            "extract",
            "--config",
            "cfg.json",
            "--initial",
            "init2.txt",
            "--in",
            "scan.ply",
            "--class",
            "wall",
            "--out",
            "wall.ply",
        ],
    );
    ok(
        d,
        &[
            "features",
            "--in",
            "wall.ply",
            "--k",
            "14",
            "--elevation-ref",
            "0",
            "--out",
            "wall_f.txt",
        ],
    );
    ok(
        d,
        &[
            "predict",
            "--model",
            "m2/wall.json",
            "--features",
            "wall_f.txt",
            "--out",
            "wall_l.txt",
        ],
    );
    ok(
        d,
        &[
            "project",
            "compose",
            "--config",
            "cfg.json",
            "--initial",
            "init2.txt",
            "--stage2",
            "wall=wall_l.txt",
            "--out",
            "final.txt",
        ],
    );

    let read = |f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read("init.txt"), read("init2.txt"));
    assert_eq!(read("labels.txt"), read("final.txt"));

    // external stage-two labels through the pipeline command give the same result
    ok(
        d,
        &[
            "pipeline",
            "--config",
            "cfg.json",
            "--in",
            "scan.ply",
            "--stage1-labels",
            "low_l.txt",
            "--stage2-labels",
            "wall=wall_l.txt",
            "--out",
            "ext.txt",
            "--stats",
            "ext.json",
        ],
    );
    assert_eq!(read("labels.txt"), read("ext.txt"));

    let stats: serde_json::Value = serde_json::from_slice(&read("stats.json")).unwrap();
    assert_eq!(stats["seed"], 42);
    assert_eq!(stats["stage_two_points"], stats["full_res_feature_rows"]);

    let report = ok(
        d,
        &[
            "evaluate",
            "--truth",
            "scan.ply",
            "--pred",
            "labels.txt",
            "--schema",
            "cfg.json",
            "--name",
            "Ours",
        ],
    );
    let table = String::from_utf8(report.stdout).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(&header[..5], ["|", "OA", "|", "mIoU", "|"]);
    assert!(table.lines().nth(1).unwrap().starts_with("Ours"));
    let merged = ok(
        d,
        &[
            "evaluate", "--truth", "scan.ply", "--pred", "init.txt", "--schema", "cfg.json",
            "--merged",
        ],
    );
    assert!(String::from_utf8(merged.stdout).unwrap().contains("n/a"));
}

#[test]
fn closest_projection_command() {
    let tmp = setup();
    let d = tmp.path();
    ok(
        d,
        &[
            "subsample",
            "--in",
            "scan.ply",
            "--voxel",
            "0.2",
            "--out",
            "coarse.ply",
            "--map",
            "sub.json",
        ],
    );
    ok(
        d,
        &[
            "project",
            "closest",
            "--partial",
            "coarse.ply",
            "--targets",
            "coarse.ply",
            "--out",
            "same.txt",
        ],
    );
    let labels = fs::read_to_string(d.join("same.txt")).unwrap();
    let low = mrseg::io::load_cloud(&d.join("coarse.ply")).unwrap();
    assert_eq!(labels, mrseg::io::write_labels(low.labels().unwrap()));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let code = |args: &[&str]| mrseg(d, args).status.code().unwrap();

    assert_eq!(
        code(&[
            "subsample",
            "--in",
            "missing.ply",
            "--voxel",
            "0.1",
            "--out",
            "o.ply",
            "--map",
            "m.json"
        ]),
        2
    );
    assert_eq!(code(&["subsample", "--bogus"]), 1);
    assert_eq!(code(&[]), 1);

    fs::write(
        d.join("bad.json"),
        r#"{"classes": [{"name": "a", "resolution": "high"}]}"#,
    )
    .unwrap();
    fs::write(d.join("p.txt"), "0 0 0\n1 0 0\n0 1 0\n").unwrap();
    let out = mrseg(
        d,
        &[
            "evaluate", "--truth", "p.txt", "--pred", "p.txt", "--schema", "bad.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));

    assert_eq!(
        code(&[
            "subsample",
            "--in",
            "p.txt",
            "--voxel",
            "-1",
            "--out",
            "o.ply",
            "--map",
            "m.json"
        ]),
        1
    );
    assert_eq!(
        code(&[
            "subsample",
            "--in",
            "p.txt",
            "--voxel",
            "0.5",
            "--out",
            "o.ply",
            "--map",
            "m.json"
        ]),
        0
    );

    let help = mrseg(d, &["subsample", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("meters"));
}
