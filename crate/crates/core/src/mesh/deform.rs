use std::sync::Arc;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::fem::HarmonicExtension;
use crate::geometry::Point2;
use crate::mapping::DisplacementField;

/// Moves boundary vertices by `s` times the field (interpolated at the
/// nearest point of the field's source polyline) and interior vertices by
/// the harmonic extension of those displacements. Topology and tags are
/// unchanged.
pub fn deform(mesh: &TriMesh, field: &DisplacementField, s: f64) -> Result<TriMesh> {
    if s == 0.0 {
        return Ok(mesh.clone());
    }
    Deformer::new(Arc::new(mesh.clone()))?.apply(field, s)
}

/// [`deform`] with the harmonic extension of one reference mesh factored
/// once, for repeated motion of the same mesh by different fields.
#[derive(Debug, Clone)]
pub struct Deformer {
    reference: Arc<TriMesh>,
    ext: HarmonicExtension,
}

impl Deformer {
    pub fn new(reference: Arc<TriMesh>) -> Result<Deformer> {
        let ext = HarmonicExtension::new(&reference)?;
        Ok(Deformer { reference, ext })
    }

    pub fn reference(&self) -> &Arc<TriMesh> {
        &self.reference
    }

    pub fn apply(&self, field: &DisplacementField, s: f64) -> Result<TriMesh> {
        if !s.is_finite() {
            return Err(Error::InvalidInput(format!("deformation fraction must be finite, got {s}")));
        }
        let mesh = &self.reference;
        let scale = mesh.vertices().iter().fold(1.0f64, |m, p| m.max(p.x.abs()).max(p.y.abs()));
        let src = field.sources();
        let nseg = if field.is_closed() { src.len() } else { src.len() - 1 };
        let spacing = (0..nseg).map(|i| src[i].dist(src[(i + 1) % src.len()])).sum::<f64>() / nseg as f64;
        // boundaries sampled from the same curve differ by at most a chord sagitta
        let tol = 1e-6 * scale + 0.5 * spacing;
        let mut disp = vec![Point2::ORIGIN; mesh.vertex_count()];
        for (v, (&p, &b)) in mesh.vertices().iter().zip(self.ext.boundary()).enumerate() {
            if !b {
                continue;
            }
            let (d, dist) = field.interpolate(p);
            if dist > tol {
                return Err(Error::Mapping(format!(
                    "boundary vertex {v} at ({:.6}, {:.6}) lies {dist:.3e} from the displacement field sources",
                    p.x, p.y
                )));
            }
            disp[v] = d * s;
        }
        let moved = self
            .ext
            .extend(&disp)
            .into_iter()
            .zip(mesh.vertices())
            .map(|(d, &p)| p + d)
            .collect();
        mesh.with_vertices(moved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::MappingMethod;
    use crate::mesh::triangulate;
    use crate::geometry::Curve;

    #[test]
    fn translation_moves_every_vertex() {
        let c = Curve::circle(Point2::ORIGIN, 1.0, 40).unwrap();
        let m = triangulate(&c, &[], 0.3, &[]).unwrap();
        let f = DisplacementField::new(c.points().to_vec(), vec![Point2::new(0.5, -0.25); 40], true, MappingMethod::Uniform).unwrap();
        let d = deform(&m, &f, 0.5).unwrap();
        for (p, q) in m.vertices().iter().zip(d.vertices()) {
            assert!((q.x - p.x - 0.25).abs() < 1e-12 && (q.y - p.y + 0.125).abs() < 1e-12);
        }
        assert_eq!(d.triangles(), m.triangles());
        assert_eq!(deform(&m, &f, 0.0).unwrap(), m);
    }

    #[test]
    fn foreign_boundary_is_rejected() {
        let m = TriMesh::rectangle(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let c = Curve::circle(Point2::new(5.0, 5.0), 1.0, 8).unwrap();
        let f = DisplacementField::zero(&c, MappingMethod::Uniform).unwrap();
        assert!(matches!(deform(&m, &f, 1.0), Err(Error::Mapping(_))));
    }

    #[test]
    fn inversion_is_reported() {
        let m = TriMesh::rectangle(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let c = Curve::new(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)], true, "b").unwrap();
        let v = vec![Point2::ORIGIN, Point2::new(-3.0, 0.0), Point2::ORIGIN, Point2::ORIGIN];
        let f = DisplacementField::new(c.points().to_vec(), v, true, MappingMethod::Uniform).unwrap();
        assert!(matches!(deform(&m, &f, 1.0), Err(Error::Inverted(_))));
    }
}
