//! Writes the synthetic fixtures: a three-stage growing bud (PGM images),
//! offset circles and a kidney inside a circle (curve CSVs).
//!
//! cargo run -p morphokit --example make_fixtures -- fixtures

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use morphokit::ingest::GrayImage;
use morphokit::{Curve, Point2};

const PIXEL_UM: f64 = 0.5;
const SIZE_PX: usize = 100;

/// Egg-shaped bud with semi-axes `a` (x) and `b` (y), wider at +x.
fn bud_inside(p: Point2, a: f64, b: f64) -> f64 {
    let c = Point2::new(25.0, 25.0);
    let (x, y) = ((p.x - c.x) / a, (p.y - c.y) / b);
    let widen = 1.0 + 0.15 * x.clamp(-1.0, 1.0);
    (x * x + (y / widen).powi(2)).sqrt()
}

fn bud_image(a: f64, b: f64) -> GrayImage {
    GrayImage::from_fn(SIZE_PX, SIZE_PX, PIXEL_UM, |col, row| {
        // pixel centres, y up
        let p = Point2::new((col as f64 + 0.5) * PIXEL_UM, (SIZE_PX as f64 - row as f64 - 0.5) * PIXEL_UM);
        let r = bud_inside(p, a, b);
        let edge = 1.0 / (1.0 + ((r - 1.0) * a / 0.6).exp());
        (20.0 + 180.0 * edge).round() as u16
    })
    .expect("fixture image is well formed")
}

fn write_curve(dir: &Path, name: &str, c: &Curve) {
    c.write_csv(&dir.join(name)).expect("write curve");
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));

    let bud = root.join("growing_bud");
    std::fs::create_dir_all(&bud).unwrap();
    for (k, (a, b)) in [(10.0, 8.0), (13.0, 9.5), (16.0, 11.0)].into_iter().enumerate() {
        let path = bud.join(format!("stage_{k}.pgm"));
        bud_image(a, b).write_pgm(&path, true).unwrap();
        std::fs::write(path.with_extension("json"), format!("{{ \"pixel_size_um\": {PIXEL_UM} }}\n")).unwrap();
    }

    let offset = root.join("offset_circles");
    std::fs::create_dir_all(&offset).unwrap();
    let c1 = Curve::circle(Point2::ORIGIN, 1.0, 200).unwrap().with_label("c1");
    let c2 = Curve::circle(Point2::new(1.2, 0.3), 1.5, 200).unwrap().with_label("c2");
    write_curve(&offset, "c1.csv", &c1);
    write_curve(&offset, "c2.csv", &c2);

    let kidney = root.join("kidney_in_circle");
    std::fs::create_dir_all(&kidney).unwrap();
    let k = Curve::from_polar(200, "kidney", |t| {
        let d = (t - PI + PI).rem_euclid(2.0 * PI) - PI;
        let r = 1.0 - 0.55 * (-d * d / 0.2).exp();
        Point2::new(r * t.cos(), 0.8 * r * t.sin())
    })
    .unwrap();
    let circle = Curve::circle(Point2::ORIGIN, 2.0, 200).unwrap().with_label("circle");
    write_curve(&kidney, "kidney.csv", &k);
    write_curve(&kidney, "circle.csv", &circle);
    println!("fixtures written to {}", root.display());
}
