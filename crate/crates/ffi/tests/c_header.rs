use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "morphokit.h"

static void ring(double *xy, int n, double r) {
    for (int k = 0; k < n; ++k) {
        double t = 6.283185307179586 * k / n;
        xy[2 * k] = r * cos(t);
        xy[2 * k + 1] = r * sin(t);
    }
}

int main(void) {
    double a[128], b[128];
    ring(a, 64, 1.0);
    ring(b, 64, 1.5);
    MkCurve *c1 = NULL, *c2 = NULL;
    MkField *f = NULL;
    MkMesh *m = NULL;
    MkFieldQuality fq;
    MkMeshQuality mq;
    if (mk_curve_new(a, 64, true, &c1) != MK_STATUS_OK) return 1;
    if (mk_curve_new(b, 64, true, &c2) != MK_STATUS_OK) return 1;
    if (mk_map_curves(c1, c2, MK_METHOD_AUTO, 64, false, &f, &fq) != MK_STATUS_OK) return 2;
    if (mk_mesh_triangulate(c1, 0.2, 20.0, &m) != MK_STATUS_OK) return 3;
    if (mk_mesh_quality(m, 1.0, &mq) != MK_STATUS_OK) return 4;
    MkCurve *bad = NULL;
    MkStatus s = mk_curve_read_csv("/nonexistent.csv", &bad);
    printf("%s %zu %zu %d %d %d %s\n", mk_version(), mk_field_len(f), fq.crossing_count,
           mk_mesh_triangle_count(m) > 0, mq.passed, s, mk_last_error() ? "err" : "none");
    mk_field_free(f);
    mk_mesh_free(m);
    mk_curve_free(c1);
    mk_curve_free(c2);
    return 0;
}
"#;

fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = lib_dir();
    assert!(
        lib.join("libmorphokit_ffi.so").exists() || lib.join("libmorphokit_ffi.dylib").exists(),
        "shared library missing in {}",
        lib.display()
    );
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(&src)
        .arg("-o")
        .arg(&bin)
        .arg("-L")
        .arg(&lib)
        .arg(format!("-Wl,-rpath,{}", lib.display()))
        .args(["-lmorphokit_ffi", "-lm"])
        .output()
        .expect("C compiler available");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let line = String::from_utf8(run.stdout).unwrap();
    assert_eq!(line.trim(), format!("{} 64 0 1 1 3 err", env!("CARGO_PKG_VERSION")));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/morphokit.h")).unwrap();
    let source = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
