use std::ffi::{CStr, CString};
use std::ptr;

use morphokit_ffi::*;

fn circle(cx: f64, cy: f64, r: f64, n: usize) -> Vec<f64> {
    (0..n)
        .flat_map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            [cx + r * t.cos(), cy + r * t.sin()]
        })
        .collect()
}

fn curve(xy: &[f64]) -> *mut MkCurve {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { mk_curve_new(xy.as_ptr(), xy.len() / 2, true, &mut c) }, MkStatus::Ok);
    c
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mk_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn curve_round_trips_points() {
    let xy = circle(0.0, 0.0, 1.0, 40);
    let c = curve(&xy);
    unsafe {
        assert_eq!(mk_curve_len(c), 40);
        assert!(mk_curve_is_closed(c));
        assert!((mk_curve_length(c) - 80.0 * (std::f64::consts::PI / 40.0).sin()).abs() < 1e-12);
        let mut buf = vec![0.0; 80];
        assert_eq!(mk_curve_points(c, buf.as_mut_ptr(), buf.len()), MkStatus::Ok);
        assert_eq!(buf, xy);
        assert_eq!(mk_curve_points(c, buf.as_mut_ptr(), 79), MkStatus::BufferTooSmall);
        let mut r = ptr::null_mut();
        assert_eq!(mk_curve_resample(c, 17, &mut r), MkStatus::Ok);
        assert_eq!(mk_curve_len(r), 17);
        mk_curve_free(r);
        mk_curve_free(c);
    }
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        let mut c = ptr::null_mut();
        assert_eq!(mk_curve_new(ptr::null(), 3, true, &mut c), MkStatus::NullPointer);
        assert!(c.is_null());
        assert_eq!(mk_curve_len(ptr::null()), 0);
        assert!(mk_curve_length(ptr::null()).is_nan());
        assert_eq!(mk_mesh_write_msh(ptr::null(), ptr::null()), MkStatus::NullPointer);
        assert!(last_error().contains("null"));
        mk_curve_free(ptr::null_mut());
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let path = CString::new("/nonexistent/curve.csv").unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { mk_curve_read_csv(path.as_ptr(), &mut c) }, MkStatus::Io);
    assert!(c.is_null());
    assert!(last_error().contains("/nonexistent/curve.csv"));
}

#[test]
fn concentric_normal_mapping_is_radial() {
    let (c1, c2) = (curve(&circle(0.0, 0.0, 1.0, 64)), curve(&circle(0.0, 0.0, 2.0, 64)));
    unsafe {
        let mut f = ptr::null_mut();
        let mut q = MkFieldQuality::default();
        assert_eq!(mk_map_curves(c1, c2, MkMethod::Normal, 64, false, &mut f, &mut q), MkStatus::Ok);
        assert_eq!(q.crossing_count, 0);
        assert_eq!(mk_field_method(f), MkMethod::Normal);
        let n = mk_field_len(f);
        let (mut s, mut v) = (vec![0.0; 2 * n], vec![0.0; 2 * n]);
        assert_eq!(mk_field_sources(f, s.as_mut_ptr(), s.len()), MkStatus::Ok);
        assert_eq!(mk_field_vectors(f, v.as_mut_ptr(), v.len()), MkStatus::Ok);
        for k in 0..n {
            let (sx, sy, vx, vy) = (s[2 * k], s[2 * k + 1], v[2 * k], v[2 * k + 1]);
            assert!(((vx * vx + vy * vy).sqrt() - 1.0).abs() < 1e-2);
            assert!((sx * vy - sy * vx).abs() < 1e-2);
        }
        mk_field_free(f);
        mk_curve_free(c1);
        mk_curve_free(c2);
    }
}

#[test]
fn too_few_points_is_invalid_input() {
    let (c1, c2) = (curve(&circle(0.0, 0.0, 1.0, 16)), curve(&circle(0.0, 0.0, 2.0, 16)));
    let mut f = ptr::null_mut();
    let status = unsafe { mk_map_curves(c1, c2, MkMethod::Auto, 2, false, &mut f, ptr::null_mut()) };
    assert_eq!(status, MkStatus::InvalidInput);
    assert!(f.is_null());
    unsafe {
        mk_curve_free(c1);
        mk_curve_free(c2);
    }
}

#[test]
fn tps_reproduces_translation() {
    let src = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let dst = [2.0, 1.0, 3.0, 1.0, 2.0, 2.0];
    let q = [0.3, 0.7, -1.0, 5.0];
    let mut out = [0.0; 4];
    assert_eq!(
        unsafe { mk_tps_displace(src.as_ptr(), dst.as_ptr(), 3, q.as_ptr(), 2, out.as_mut_ptr()) },
        MkStatus::Ok
    );
    for p in out.chunks(2) {
        assert!((p[0] - 2.0).abs() < 1e-9 && (p[1] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn mesh_quality_and_msh_round_trip() {
    let c = curve(&circle(0.0, 0.0, 1.0, 48));
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.msh").to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(mk_mesh_triangulate(c, 0.15, 25.0, &mut m), MkStatus::Ok);
        let (nv, nt) = (mk_mesh_vertex_count(m), mk_mesh_triangle_count(m));
        assert!(nv > 48 && nt > 0);
        let mut q = MkMeshQuality::default();
        assert_eq!(mk_mesh_quality(m, 1.0, &mut q), MkStatus::Ok);
        assert!(q.passed && q.n_inverted == 0 && q.min_angle >= 25.0 - 1e-9);
        let mut tris = vec![0u32; 3 * nt];
        assert_eq!(mk_mesh_triangles(m, tris.as_mut_ptr(), tris.len()), MkStatus::Ok);
        assert!(tris.iter().all(|&i| (i as usize) < nv));
        assert_eq!(mk_mesh_write_msh(m, path.as_ptr()), MkStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(mk_mesh_read_msh(path.as_ptr(), &mut back), MkStatus::Ok);
        assert_eq!(mk_mesh_vertex_count(back), nv);
        assert!((mk_mesh_area(back) - mk_mesh_area(m)).abs() < 1e-9);
        mk_mesh_free(back);
        mk_mesh_free(m);
        mk_curve_free(c);
    }
}

#[test]
fn noiseless_start_stays_at_steady_state() {
    let json = CString::new(r#"{"kinetics": "schnakenberg", "diffusion": [1.0, 40.0], "params": {"a": 0.1, "b": 0.9}}"#).unwrap();
    let c = curve(&circle(0.0, 0.0, 1.0, 32));
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(mk_model_from_json(json.as_ptr(), &mut model), MkStatus::Ok, "{}", last_error());
        assert_eq!(mk_model_species(model), 2);
        let mut m = ptr::null_mut();
        assert_eq!(mk_mesh_triangulate(c, 0.3, 20.0, &mut m), MkStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(mk_simulate(m, model, 1.0, 0.1, 0.0, 1, &mut s), MkStatus::Ok, "{}", last_error());
        assert!((mk_state_time(s) - 1.0).abs() < 1e-12);
        let n = mk_mesh_vertex_count(m);
        let mut v = vec![0.0; n];
        assert_eq!(mk_state_values(s, 0, v.as_mut_ptr(), n), MkStatus::Ok);
        assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-10));
        assert_eq!(mk_state_values(s, 1, v.as_mut_ptr(), n), MkStatus::Ok);
        assert!(v.iter().all(|x| (x - 0.9).abs() < 1e-10));
        assert_eq!(mk_state_values(s, 2, v.as_mut_ptr(), n), MkStatus::InvalidInput);
        mk_state_free(s);
        mk_mesh_free(m);
        mk_model_free(model);
        mk_curve_free(c);
    }
}

#[test]
fn bad_model_json_is_a_parse_error() {
    let json = CString::new(r#"{"kinetics": "schnakenberg""#).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { mk_model_from_json(json.as_ptr(), &mut model) }, MkStatus::Parse);
    assert!(model.is_null());
}
