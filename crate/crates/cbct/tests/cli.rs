use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn cbct(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbct")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cbct(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn phantom_pipes_into_project() {
    let dir = tempfile::tempdir().unwrap();
    let phantom = cbct(dir.path(), &["phantom", "--kind", "shepp3d", "--size", "16"]);
    assert!(phantom.status.success());
    let mut project = Command::new(env!("CARGO_BIN_EXE_cbct"))
        .current_dir(dir.path())
        .args(["project", "--views", "6", "--out", "p.proj"])
        .stdin(Stdio::piped())
        .spawn()
        .unwrap();
    project.stdin.take().unwrap().write_all(&phantom.stdout).unwrap();
    assert!(project.wait().unwrap().success());
    assert_eq!(fs::metadata(dir.path().join("p.proj")).unwrap().len(), 6 * 16 * 16 * 4);
    let side = json(&dir.path().join("p.proj.json"));
    assert_eq!(side["kind"], "projections");
    assert_eq!(side["geometry"]["n_views"], 6);
    let run = json(&dir.path().join("p.proj.run.json"));
    assert_eq!(run["command"], "project");
    assert_eq!(run["inputs"][0], "-");
}

#[test]
fn eval_of_identical_volumes_reports_the_sentinels() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["phantom", "--size", "12", "--out", "a.vol"]);
    let text = ok(dir.path(), &["eval", "--recon", "a.vol", "--ref", "a.vol", "--csv", "m.csv"]);
    assert!(text.contains("PSNR inf dB"), "{text}");
    assert!(text.contains("SSIM 1.000000"), "{text}");
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "a.vol,inf,1");
}

#[test]
fn classical_smoke_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["phantom", "--size", "24", "--out", "ref.vol"]);
    ok(dir.path(), &["project", "--input", "ref.vol", "--views", "60", "--out", "p.proj"]);
    ok(dir.path(), &["fdk", "--input", "p.proj", "--out", "fdk.vol"]);
    ok(dir.path(), &["sart", "--input", "p.proj", "--iterations", "3", "--like", "ref.vol", "--out", "sart.vol"]);
    for recon in ["fdk.vol", "sart.vol"] {
        let text = ok(dir.path(), &["eval", "--recon", recon, "--ref", "ref.vol"]);
        let psnr: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(psnr > 15.0, "{recon}: {text}");
    }
}

#[test]
fn commands_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.vol", "b.vol"] {
        ok(dir.path(), &["phantom", "--kind", "spheres", "--size", "16", "--seed", "5", "--out", out]);
    }
    for out in ["a.proj", "b.proj"] {
        let input = format!("{}.vol", &out[..1]);
        ok(dir.path(), &["project", "--input", &input, "--views", "4", "--out", out]);
    }
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.vol"), read("b.vol"));
    assert_eq!(read("a.vol.json"), read("b.vol.json"));
    assert_eq!(read("a.proj"), read("b.proj"));
    let (mut ma, mut mb) = (json(&dir.path().join("a.vol.run.json")), json(&dir.path().join("b.vol.run.json")));
    for m in [&mut ma, &mut mb] {
        m["wall_time_s"] = serde_json::Value::Null;
        m["outputs"] = serde_json::Value::Null;
    }
    assert_eq!(ma, mb);
    assert_eq!(ma["seeds"][0], 5);
}

#[test]
fn errors_exit_with_the_documented_codes() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = cbct(dir.path(), &["fdk", "--no-such-flag"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&unknown.stderr).lines().count(), 1);
    let missing = cbct(dir.path(), &["fdk", "--input", "missing.proj"]);
    assert_eq!(missing.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert!(stderr.starts_with("error: cannot read missing.proj.json"), "{stderr}");
    assert_eq!(cbct(dir.path(), &["phantom", "--threads", "0", "--out", "x.vol"]).status.code(), Some(2));

    ok(dir.path(), &["phantom", "--size", "8", "--out", "a.vol"]);
    ok(dir.path(), &["phantom", "--size", "10", "--out", "b.vol"]);
    let mismatch = cbct(dir.path(), &["eval", "--recon", "a.vol", "--ref", "b.vol"]);
    assert_eq!(mismatch.status.code(), Some(2));

    // An unwritable output is a runtime failure.
    let blocked = cbct(dir.path(), &["phantom", "--size", "8", "--out", "no/such/dir/x.vol"]);
    assert_eq!(blocked.status.code(), Some(3));
}

const TINY: &str = r#"{
  "model": {
    "feature_channels": 4, "unet_widths": [2, 3, 3, 4, 4], "n_scales": 2,
    "base_resolution": 3, "n_att_modules": 1, "attention_dim": 4, "ffn_dim": 6
  },
  "train": { "epochs": 4, "points_per_volume": 64, "lr0": 0.005, "momentum": 0.9 }
}"#;

#[test]
fn train_infer_and_robust_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.json"), TINY).unwrap();
    ok(d, &[
        "train", "--phantom", "spheres", "--size", "16", "--views", "3", "--config", "tiny.json", "--epochs", "2",
        "--checkpoint-every", "1", "--log", "steps.csv", "--out", "m.ckpt", "--threads", "1",
    ]);
    // Flags beat the file, the file beats the defaults.
    let run = json(&d.join("m.ckpt.run.json"));
    assert_eq!(run["config"]["train"]["epochs"], 2);
    assert_eq!(run["config"]["train"]["lr0"], 0.005);
    assert_eq!(run["config"]["train"]["batch_size"], 4);
    assert_eq!(run["config"]["model"]["feature_channels"], 4);
    assert_eq!(run["config"]["model"]["n_views"], 3);
    assert!(d.join("m.ckpt.epoch1").exists() && d.join("m.ckpt.epoch2").exists());
    let log = fs::read_to_string(d.join("steps.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,epoch,lr,loss,wall_ms");
    assert_eq!(log.lines().count(), 3);

    ok(d, &["phantom", "--kind", "spheres", "--size", "16", "--seed", "17", "--out", "ref.vol"]);
    ok(d, &["project", "--input", "ref.vol", "--views", "3", "--det-pixels", "32", "--out", "p.proj"]);
    ok(d, &["infer", "--checkpoint", "m.ckpt", "--projections", "p.proj", "--resolution", "10", "--out", "r.vol"]);
    assert_eq!(json(&d.join("r.vol.json"))["dims"], serde_json::json!([10, 10, 10]));

    let table = ok(d, &["robust", "--checkpoint", "m.ckpt", "--dso-noise", "2", "--csv", "robust.csv"]);
    let labels: Vec<&str> = table.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(labels, ["0°", "±2mm"]);
    let csv = fs::read_to_string(d.join("robust.csv")).unwrap();
    assert!(csv.lines().nth(2).unwrap().starts_with("±2mm,0,0,2,"));

    let wrong = cbct(d, &["infer", "--checkpoint", "m.ckpt", "--projections", "ref.vol"]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn slices_are_written_for_each_axis() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["phantom", "--size", "10", "--out", "a.vol"]);
    ok(dir.path(), &["slice", "--input", "a.vol", "--out", "s"]);
    for axis in ["axial", "coronal", "sagittal"] {
        let bytes = fs::read(dir.path().join(format!("s_{axis}_5.pgm"))).unwrap();
        assert_eq!(cbct::report::parse_pgm(&bytes).map(|(w, h, _)| (w, h)), Some((10, 10)));
    }
    ok(dir.path(), &["slice", "--input", "a.vol", "--axis", "axial", "--index", "0,9", "--out", "t"]);
    assert!(dir.path().join("t_axial_0.pgm").exists() && dir.path().join("t_axial_9.pgm").exists());
    assert_eq!(cbct(dir.path(), &["slice", "--input", "a.vol", "--index", "10", "--out", "u"]).status.code(), Some(2));
}
