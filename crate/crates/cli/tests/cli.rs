use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcm"))
        .args(args)
        .env("RCM_THREADS", "1")
        .output()
        .expect("rcm runs")
}

fn ok(args: &[&str]) -> String {
    let out = rcm(args);
    assert!(
        out.status.success(),
        "rcm {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    stderr
        .lines()
        .find(|l| l.starts_with("ERROR:"))
        .unwrap_or_else(|| panic!("no ERROR line in {stderr}"))
        .to_string()
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const TINY: &str = r#"{
  "scene": { "height": 16, "width": 16, "frames": 4 },
  "model": { "dim": 8, "blocks": 1, "heads": 2, "ff_mult": 2, "camera_hidden": 8, "time_features": 8 },
  "data": { "characters": 4 },
  "stages": {
    "stage_i": { "stage": "I", "steps": 3, "batch_size": 2, "seed": 1 },
    "stage_ii": { "stage": "II", "steps": 4, "batch_size": 2, "seed": 2 },
    "stage_iii": { "stage": "III", "steps": 3, "batch_size": 2, "seed": 3 }
  },
  "checkpoint_every": 2,
  "sampler": { "steps": 2 },
  "benchmark": { "count": 2 }
}"#;

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for cmd in ["", "gen-data", "train", "rotate", "eval"] {
        let mut args: Vec<&str> = Vec::new();
        if !cmd.is_empty() {
            args.push(cmd);
        }
        args.push("--help");
        let text = ok(&args);
        let name = if cmd.is_empty() { "help.txt".to_string() } else { format!("help_{cmd}.txt") };
        let path = golden.join(name);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            fs::write(&path, &text).unwrap();
        }
        assert_eq!(text, fs::read_to_string(&path).unwrap(), "help for '{cmd}' drifted");
    }
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen-data", "--stage", "III", "--count", "3", "--seed", "7", "--config", &cfg, "--out", s(out)]);
    }
    assert_eq!(tree(&a), tree(&b));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["count"], 3);
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 3);
}

#[test]
fn loosened_generator_reports_rejections() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("loose");
    ok(&[
        "gen-data", "--stage", "I", "--count", "1000", "--characters", "64", "--loose",
        "--set", "scene.height=8", "--set", "scene.width=8", "--set", "scene.frames=2",
        "--out", s(&out),
    ]);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["count"], 1000);
    let r = &manifest["rejections"];
    let total: u64 = ["occupancy", "asymmetry", "palette_contrast"].iter().map(|k| r[k].as_u64().unwrap()).sum();
    assert!(total > 0, "no rejections: {r}");
}

fn params_hash(ckpt: &Path) -> String {
    let m: serde_json::Value = serde_json::from_slice(&fs::read(ckpt.join("manifest.json")).unwrap()).unwrap();
    m["params_hash"].as_str().unwrap().to_string()
}

#[test]
fn curriculum_checkpoints_resume_and_joint_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let full = tmp.path().join("full");
    ok(&["train", "--curriculum", "--config", &cfg, "--out", s(&full)]);
    for expert in ["low", "high"] {
        for stage in ["I", "II", "III"] {
            let dir = full.join("checkpoints").join(expert).join(format!("stage_{stage}"));
            assert!(dir.join("manifest.json").is_file(), "missing {}", dir.display());
        }
    }
    let metrics = fs::read_to_string(full.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,stage,expert,loss,grad_norm,lr\n"));
    assert!(metrics.contains(",low,") && metrics.contains(",high,"));

    let part = tmp.path().join("part");
    let stdout = ok(&["train", "--curriculum", "--config", &cfg, "--out", s(&part), "--stop-after", "5"]);
    assert!(stdout.contains("paused"));
    assert!(!part.join("checkpoints/low/final").exists());
    ok(&["train", "--curriculum", "--resume", "--out", s(&part)]);
    for expert in ["low", "high"] {
        let a = full.join("checkpoints").join(expert).join("final");
        let b = part.join("checkpoints").join(expert).join("final");
        assert_eq!(params_hash(&a), params_hash(&b), "{expert} expert diverged after resume");
    }
    assert_eq!(metrics, fs::read_to_string(part.join("metrics.csv")).unwrap());

    let joint = tmp.path().join("joint");
    ok(&["train", "--no-stages", "--config", &cfg, "--out", s(&joint)]);
    assert!(joint.join("checkpoints/low/stage_joint/manifest.json").is_file());
    let jm = fs::read_to_string(joint.join("metrics.csv")).unwrap();
    assert!(jm.lines().skip(1).all(|l| l.split(',').nth(1) == Some("joint")));

    // Rotate from the trained pair of experts.
    let cond = tmp.path().join("cond.ppm");
    let mut ppm = b"P6\n16 16\n255\n".to_vec();
    ppm.extend((0..16 * 16 * 3).map(|i| (i % 251) as u8));
    fs::write(&cond, ppm).unwrap();
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    for out in [&r1, &r2] {
        ok(&["rotate", "--checkpoint", s(&full), "--image", s(&cond), "--frames", "4", "--steps", "2", "--out", s(out)]);
    }
    let frames = fs::read_dir(&r1).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ppm")).count();
    assert_eq!(frames, 4);
    assert_eq!(tree(&r1), tree(&r2));
    let poses: serde_json::Value = serde_json::from_slice(&fs::read(r1.join("poses.json")).unwrap()).unwrap();
    assert_eq!(poses.as_array().unwrap().len(), 4);

    let five: Vec<&str> = (0..5).flat_map(|_| ["--image", s(&cond)]).collect();
    let mut args = vec!["rotate", "--checkpoint", s(&full), "--out", s(&r1)];
    args.extend(five);
    assert!(error_line(&rcm(&args)).starts_with("ERROR:TooManyReferences:"));

    // Evaluate the trained model twice: identical reports.
    let (e1, e2) = (tmp.path().join("e1"), tmp.path().join("e2"));
    for out in [&e1, &e2] {
        ok(&["eval", "--checkpoint", s(&full), "--out", s(out)]);
    }
    assert_eq!(tree(&e1), tree(&e2));
    let csv = fs::read_to_string(e1.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 1);
}

#[test]
fn single_stage_from_shard() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let shard = tmp.path().join("shard");
    ok(&["gen-data", "--stage", "I", "--count", "6", "--config", &cfg, "--out", s(&shard)]);
    let out = tmp.path().join("run");
    ok(&["train", "--stage", "I", "--data", s(&shard), "--config", &cfg, "--set", "stages.stage_i.steps=3", "--out", s(&out)]);
    assert!(out.join("checkpoints/model/final/manifest.json").is_file());
    let short = tmp.path().join("short");
    let err = rcm(&["train", "--stage", "I", "--data", s(&shard), "--config", &cfg, "--set", "stages.stage_i.steps=4", "--out", s(&short)]);
    assert_eq!(error_line(&err), "ERROR:DataExhausted:data source exhausted after 6 samples");
}

#[test]
fn oracle_eval_is_perfect_and_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&["eval", "--oracle", "--config", &cfg, "--benchmark-seed-range", "4294967296..4294967299", "--out", s(out)]);
    }
    assert_eq!(tree(&a), tree(&b));
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,psnr,ssim,cam_err,smooth,identity,static"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!((f[1], f[2], f[3], f[5], f[6]), ("99", "1", "0", "1", "0"), "row {row}");
    }
    assert!(a.join("frames/4294967296/frame_00.ppm").is_file());
}

#[test]
fn failures_print_machine_readable_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = tmp.path().join("out");
    let e = rcm(&["eval", "--checkpoint", s(&missing), "--out", s(&out)]);
    assert!(error_line(&e).starts_with("ERROR:IoFailure:"));
    let e = rcm(&["train", "--curriculum", "--set", "model.dim=7", "--out", s(&out)]);
    assert!(error_line(&e).starts_with("ERROR:"));
    let e = rcm(&["gen-data", "--stage", "IV", "--out", s(&out)]);
    assert!(error_line(&e).starts_with("ERROR:Usage:"));
    let e = Command::new(env!("CARGO_BIN_EXE_rcm"))
        .args(["eval", "--oracle", "--out", s(&out)])
        .env("RCM_THREADS", "zero")
        .output()
        .unwrap();
    assert!(error_line(&e).starts_with("ERROR:InvalidArgument:"));
}
