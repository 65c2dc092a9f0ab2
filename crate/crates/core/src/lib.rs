pub mod cli;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod infer;
pub mod ingest;
pub mod mapping;
pub mod mesh;
pub mod svg;

pub use error::{Error, Result};
pub use geometry::{Curve, CurveTransform, Point2};
pub use mesh::TriMesh;
