//! Static SVG plots of curves, displacement fields, meshes and
//! concentration maps. Coordinates are y-up; output is deterministic text.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::FieldState;
use crate::geometry::{Curve, Point2};
use crate::mapping::DisplacementField;
use crate::mesh::TriMesh;

const WIDTH: f64 = 800.0;
const MARGIN: f64 = 20.0;

/// Canvas mapping a world bounding box onto a fixed-width image.
pub struct Svg {
    lo: Point2,
    scale: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(points: impl IntoIterator<Item = Point2>) -> Svg {
        let (mut lo, mut hi) = (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if !lo.is_finite() || !hi.is_finite() {
            lo = Point2::ORIGIN;
            hi = Point2::new(1.0, 1.0);
        }
        let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-12);
        let scale = (WIDTH - 2.0 * MARGIN) / span;
        let height = (hi.y - lo.y) * scale + 2.0 * MARGIN;
        Svg {
            lo: Point2::new(lo.x, hi.y),
            scale,
            height,
            body: String::new(),
        }
    }

    fn xy(&self, p: Point2) -> (f64, f64) {
        (MARGIN + (p.x - self.lo.x) * self.scale, MARGIN + (self.lo.y - p.y) * self.scale)
    }

    fn coords(&self, pts: &[Point2]) -> String {
        pts.iter()
            .map(|&p| {
                let (x, y) = self.xy(p);
                format!("{x:.3},{y:.3}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn polyline(&mut self, pts: &[Point2], closed: bool, stroke: &str, width: f64) -> &mut Self {
        let tag = if closed { "polygon" } else { "polyline" };
        let _ = writeln!(
            self.body,
            r#"<{tag} points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
            self.coords(pts)
        );
        self
    }

    pub fn curve(&mut self, c: &Curve, stroke: &str) -> &mut Self {
        self.polyline(c.points(), c.is_closed(), stroke, 1.5)
    }

    pub fn triangle(&mut self, t: [Point2; 3], fill: &str, stroke: Option<&str>) -> &mut Self {
        let stroke = stroke.map_or(String::from(r#"stroke="none""#), |s| format!(r#"stroke="{s}" stroke-width="0.3""#));
        let _ = writeln!(self.body, r#"<polygon points="{}" fill="{fill}" {stroke}/>"#, self.coords(&t));
        self
    }

    pub fn arrow(&mut self, from: Point2, to: Point2, stroke: &str) -> &mut Self {
        let (x0, y0) = self.xy(from);
        let (x1, y1) = self.xy(to);
        let _ = writeln!(
            self.body,
            r#"<line x1="{x0:.3}" y1="{y0:.3}" x2="{x1:.3}" y2="{y1:.3}" stroke="{stroke}" stroke-width="0.8" marker-end="url(#head)"/>"#
        );
        self
    }

    pub fn text(&mut self, s: &str) -> &mut Self {
        let _ = writeln!(self.body, r#"<text x="{MARGIN}" y="{:.1}" font-size="12" font-family="monospace">{s}</text>"#, MARGIN - 6.0);
        self
    }

    pub fn finish(&self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{:.0}\" viewBox=\"0 0 {WIDTH} {:.3}\">\n\
             <defs><marker id=\"head\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\">\
             <path d=\"M0,0 L6,3 L0,6 z\" fill=\"black\"/></marker></defs>\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.height, self.height, self.body
        )
    }
}

/// Blue to yellow ramp for `t` in `[0, 1]`.
pub fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let stops = [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let x = t * (stops.len() - 1) as f64;
    let i = (x.floor() as usize).min(stops.len() - 2);
    let f = x - i as f64;
    let (a, b) = (stops[i], stops[i + 1]);
    let mix = |u: f64, v: f64| (u + f * (v - u)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Both boundaries with the displacement vectors drawn as arrows.
pub fn field_svg(c1: &Curve, c2: &Curve, field: &DisplacementField) -> String {
    let targets = field.targets();
    let mut svg = Svg::new(c1.points().iter().chain(c2.points()).chain(field.sources()).copied().chain(targets.iter().copied()));
    svg.curve(c1, "#1f77b4").curve(c2, "#d62728");
    for (&s, &t) in field.sources().iter().zip(&targets) {
        svg.arrow(s, t, "#333333");
    }
    svg.text(&format!("{} mapping, {} vectors", field.method(), field.len()));
    svg.finish()
}

pub fn mesh_svg(mesh: &TriMesh) -> String {
    let mut svg = Svg::new(mesh.vertices().iter().copied());
    let n_regions = mesh.region_labels().len().max(2) - 1;
    for t in 0..mesh.triangle_count() {
        let fill = color(mesh.triangle_region_tags()[t] as f64 / n_regions as f64 * 0.6 + 0.3);
        svg.triangle(mesh.triangle_points(t), &fill, Some("#222222"));
    }
    svg.text(&format!("{} vertices, {} triangles", mesh.vertex_count(), mesh.triangle_count()));
    svg.finish()
}

/// Species `s` colored by the element mean, scaled to the field range.
pub fn state_svg(state: &FieldState, s: usize) -> String {
    let mesh = state.mesh();
    let c = state.species(s);
    let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut svg = Svg::new(mesh.vertices().iter().copied());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let mean = (c[tri[0]] + c[tri[1]] + c[tri[2]]) / 3.0;
        svg.triangle(mesh.triangle_points(t), &color((mean - lo) / span), None);
    }
    svg.text(&format!("species {s} at t = {:.4}, range [{lo:.4e}, {hi:.4e}]", state.t()));
    svg.finish()
}

pub fn write(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{map_uniform, MappingMethod};

    #[test]
    fn ramp_endpoints() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
        assert_eq!(color(f64::NAN), "#440154");
    }

    #[test]
    fn field_plot_has_one_arrow_per_vector() {
        let a = Curve::circle(Point2::ORIGIN, 1.0, 12).unwrap();
        let b = Curve::circle(Point2::ORIGIN, 2.0, 12).unwrap();
        let f = map_uniform(&a, &b, 12).unwrap();
        let s = field_svg(&a, &b, &f);
        assert_eq!(s.matches("<line").count(), 12);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert_eq!(s, field_svg(&a, &b, &f));
        assert_eq!(f.method(), MappingMethod::Uniform);
    }

    #[test]
    fn y_axis_points_up() {
        let svg = Svg::new([Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)]);
        let (_, y_top) = svg.xy(Point2::new(0.0, 1.0));
        let (_, y_bottom) = svg.xy(Point2::new(0.0, 0.0));
        assert!(y_top < y_bottom);
    }

    #[test]
    fn state_plot_covers_every_triangle() {
        let m = std::sync::Arc::new(TriMesh::rectangle(0.0, 0.0, 1.0, 1.0, 3, 3).unwrap());
        let st = FieldState::uniform(m.clone(), &[1.0], 0.0).unwrap();
        assert_eq!(state_svg(&st, 0).matches("<polygon").count(), m.triangle_count());
        assert_eq!(mesh_svg(&m).matches("<polygon").count(), m.triangle_count());
    }
}
