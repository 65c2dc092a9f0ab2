use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use morphokit::ingest::GrayImage;
use morphokit::{Curve, Point2};

fn morphokit(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphokit"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("MORPHOKIT_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn kinetics(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/kinetics")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn write_circle(dir: &Path, name: &str, r: f64) -> String {
    let p = dir.join(name);
    Curve::circle(Point2::ORIGIN, r, 64).unwrap().with_label(name).write_csv(&p).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn missing_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = morphokit(dir.path(), &["segment", "/nonexistent/stage.pgm", "--threshold", "0:10"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("/nonexistent/stage.pgm"));
}

#[test]
fn unknown_config_field_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"mesh": {"hh": 1.0}}"#).unwrap();
    let o = morphokit(dir.path(), &["--config", cfg.to_str().unwrap(), "run"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("hh"));
}

#[test]
fn usage_error_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = morphokit(dir.path(), &["map", "--method", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn two_thresholds_write_two_curve_files() {
    let dir = tempfile::tempdir().unwrap();
    let img = GrayImage::from_fn(40, 20, 1.0, |c, r| match (c, r) {
        (4..=14, 4..=15) => 100,
        (24..=35, 4..=15) => 200,
        _ => 0,
    })
    .unwrap();
    let path = dir.path().join("blocks.pgm");
    img.write_pgm(&path, false).unwrap();
    let out = dir.path().join("out");
    let o = morphokit(
        &out,
        &["segment", path.to_str().unwrap(), "--threshold", "50:149:left", "--threshold", "150:255:right"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let left = Curve::read_csv(&out.join("curves/blocks_left.csv")).unwrap();
    let right = Curve::read_csv(&out.join("curves/blocks_right.csv")).unwrap();
    assert!(left.centroid().x < right.centroid().x);
    assert!(left.signed_area().unwrap() > 0.0 && right.signed_area().unwrap() > 0.0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest_segment.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "segment");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"].as_str().unwrap().ends_with("blocks_left.csv")));
    assert!(outputs.iter().all(|o| o["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn check_only_fails_a_mesh_that_misses_the_gradient_rule() {
    let dir = tempfile::tempdir().unwrap();
    let outer = write_circle(dir.path(), "outer.csv", 1.0);
    let out = dir.path().join("m");
    let o = morphokit(&out, &["mesh", &outer, "--h", "0.3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let msh = out.join("mesh.msh");
    assert!(msh.exists());
    let check = |l: &str| morphokit(&dir.path().join("c"), &["mesh", msh.to_str().unwrap(), "--check-only", "--gradient-length", l]);
    let bad = check("0.5");
    assert_eq!(bad.status.code(), Some(1), "{}", stderr(&bad));
    let good = check("100");
    assert!(good.status.success(), "{}", stderr(&good));
}

fn simulate(out: &Path, mesh: &Path, extra: &[&str], env_seed: Option<&str>) -> PathBuf {
    let model = kinetics("schnakenberg.json");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_morphokit"));
    cmd.arg("--out")
        .arg(out)
        .args(extra)
        .args(["simulate", "--mesh", mesh.to_str().unwrap(), "--model", &model, "--t-end", "1", "--dt", "0.1", "--no-svg"])
        .env_remove("MORPHOKIT_SEED");
    if let Some(s) = env_seed {
        cmd.env("MORPHOKIT_SEED", s);
    }
    let o = cmd.output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("frames/frame_00010.csv")
}

#[test]
fn seeds_make_runs_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let outer = write_circle(dir.path(), "outer.csv", 5.0);
    let mesh_dir = dir.path().join("mesh");
    assert!(morphokit(&mesh_dir, &["mesh", &outer, "--h", "0.8"]).status.success());
    let mesh = mesh_dir.join("mesh.msh");
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    let a = read(simulate(&dir.path().join("a"), &mesh, &["--seed", "3"], None));
    let b = read(simulate(&dir.path().join("b"), &mesh, &["--seed", "3"], Some("9")));
    let c = read(simulate(&dir.path().join("c"), &mesh, &[], Some("3")));
    let d = read(simulate(&dir.path().join("d"), &mesh, &[], Some("4")));
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_ne!(a, d);
}

#[test]
fn map_and_plot_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let c1 = write_circle(dir.path(), "c1.csv", 1.0);
    let c2 = write_circle(dir.path(), "c2.csv", 1.5);
    let out = dir.path().join("map");
    let o = morphokit(&out, &["map", &c1, &c2, "--method", "normal", "--points", "48"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let field = morphokit::mapping::DisplacementField::read_csv(&out.join("field.csv")).unwrap();
    assert_eq!(field.len(), 48);
    assert!(field.vectors().iter().all(|v| (v.norm() - 0.5).abs() < 1e-2));
    let quality: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("field_quality.json")).unwrap()).unwrap();
    assert_eq!(quality["quality"]["crossing_count"], 0, "{quality}");

    let plot = dir.path().join("plot");
    let o = morphokit(&plot, &["plot", "field", out.join("field.csv").to_str().unwrap(), &c1, &c2]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(plot.join("field.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}
