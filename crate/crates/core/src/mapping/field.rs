use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{closest_on_segment, Curve, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingMethod {
    MinimalDistance,
    Uniform,
    Normal,
    ReverseNormal,
    Diffusion,
    ReverseDiffusion,
    Tps,
}

impl MappingMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MappingMethod::MinimalDistance => "minimal_distance",
            MappingMethod::Uniform => "uniform",
            MappingMethod::Normal => "normal",
            MappingMethod::ReverseNormal => "reverse_normal",
            MappingMethod::Diffusion => "diffusion",
            MappingMethod::ReverseDiffusion => "reverse_diffusion",
            MappingMethod::Tps => "tps",
        }
    }
}

impl std::fmt::Display for MappingMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MappingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidInput(format!("unknown mapping method '{s}'")))
    }
}

/// Displacement vectors sampled at points of the stage-t boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    sources: Vec<Point2>,
    vectors: Vec<Point2>,
    t: f64,
    dt: f64,
    method: MappingMethod,
    /// Sources form a closed loop.
    closed: bool,
    /// Samples that fell back to a nearest-point match.
    #[serde(default)]
    missing: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub t: f64,
    pub dt: f64,
    pub method: MappingMethod,
    #[serde(default)]
    pub closed: bool,
}

impl DisplacementField {
    pub fn new(
        sources: Vec<Point2>,
        vectors: Vec<Point2>,
        closed: bool,
        method: MappingMethod,
    ) -> Result<Self> {
        if sources.len() != vectors.len() {
            return Err(Error::InvalidInput(format!(
                "{} sources but {} vectors",
                sources.len(),
                vectors.len()
            )));
        }
        if sources.len() < 2 {
            return Err(Error::InvalidInput("a displacement field needs at least 2 samples".into()));
        }
        if let Some(i) = sources.iter().chain(&vectors).position(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite field entry {}", i % sources.len())));
        }
        Ok(DisplacementField {
            sources,
            vectors,
            t: 0.0,
            dt: 1.0,
            method,
            closed,
            missing: Vec::new(),
        })
    }

    /// Zero field on the points of `curve`.
    pub fn zero(curve: &Curve, method: MappingMethod) -> Result<Self> {
        DisplacementField::new(
            curve.points().to_vec(),
            vec![Point2::ORIGIN; curve.len()],
            curve.is_closed(),
            method,
        )
    }

    pub fn with_time(mut self, t: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite() && t.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid field time t={t}, dt={dt}")));
        }
        self.t = t;
        self.dt = dt;
        Ok(self)
    }

    pub(crate) fn with_missing(mut self, missing: Vec<usize>) -> Self {
        self.missing = missing;
        self
    }

    pub fn sources(&self) -> &[Point2] {
        &self.sources
    }

    pub fn vectors(&self) -> &[Point2] {
        &self.vectors
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn method(&self) -> MappingMethod {
        self.method
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn targets(&self) -> Vec<Point2> {
        self.sources.iter().zip(&self.vectors).map(|(&s, &v)| s + v).collect()
    }

    pub fn max_length(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Sampled velocity `vector / dt`.
    pub fn velocities(&self) -> Vec<Point2> {
        self.vectors.iter().map(|&v| v * (1.0 / self.dt)).collect()
    }

    /// Field with every source and target mapped through `f`.
    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> DisplacementField {
        let sources: Vec<Point2> = self.sources.iter().map(|&p| f(p)).collect();
        let vectors = self
            .targets()
            .into_iter()
            .zip(&sources)
            .map(|(q, &s)| f(q) - s)
            .collect();
        DisplacementField {
            sources,
            vectors,
            ..self.clone()
        }
    }

    /// Displacement at `p`, linearly interpolated along the source polyline
    /// (the nearest point of the polyline is used). Also returns the
    /// distance from `p` to the polyline.
    pub fn interpolate(&self, p: Point2) -> (Point2, f64) {
        let n = self.sources.len();
        let nseg = if self.closed { n } else { n - 1 };
        let mut best = (Point2::ORIGIN, f64::INFINITY);
        for i in 0..nseg {
            let j = (i + 1) % n;
            let (q, t) = closest_on_segment(self.sources[i], self.sources[j], p);
            let d = q.dist(p);
            if d < best.1 {
                best = (self.vectors[i].lerp(self.vectors[j], t), d);
            }
        }
        best
    }

    pub fn descriptor(&self) -> FieldDescriptor {
        FieldDescriptor {
            t: self.t,
            dt: self.dt,
            method: self.method,
            closed: self.closed,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("x,y,dx,dy\n");
        for (p, v) in self.sources.iter().zip(&self.vectors) {
            let _ = writeln!(s, "{:?},{:?},{:?},{:?}", p.x, p.y, v.x, v.y);
        }
        s
    }

    /// Writes the CSV and its `<stem>.json` descriptor; returns the
    /// descriptor path.
    pub fn write_csv(&self, path: &Path) -> Result<PathBuf> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))?;
        let desc = crate::geometry::descriptor_path(path);
        let json = serde_json::to_string_pretty(&self.descriptor())?;
        std::fs::write(&desc, json).map_err(|e| Error::io(&desc, e))?;
        Ok(desc)
    }

    pub fn read_csv(path: &Path) -> Result<DisplacementField> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or("");
        if header.trim().replace(' ', "") != "x,y,dx,dy" {
            return Err(Error::parse(path, format!("expected header 'x,y,dx,dy', got '{header}'")));
        }
        let (mut sources, mut vectors) = (Vec::new(), Vec::new());
        for (k, line) in lines.enumerate() {
            let f: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, format!("row {}: {e}", k + 2)))?;
            if f.len() != 4 {
                return Err(Error::parse(path, format!("row {}: expected 4 columns", k + 2)));
            }
            sources.push(Point2::new(f[0], f[1]));
            vectors.push(Point2::new(f[2], f[3]));
        }
        let desc_path = crate::geometry::descriptor_path(path);
        let desc: FieldDescriptor = match std::fs::read_to_string(&desc_path) {
            Ok(s) => serde_json::from_str(&s).map_err(|e| Error::parse(&desc_path, e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => FieldDescriptor {
                t: 0.0,
                dt: 1.0,
                method: MappingMethod::Uniform,
                closed: false,
            },
            Err(e) => return Err(Error::io(&desc_path, e)),
        };
        DisplacementField::new(sources, vectors, desc.closed, desc.method)?.with_time(desc.t, desc.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = DisplacementField::new(
            vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.1)],
            vec![Point2::new(0.5, 0.25), Point2::new(-1.0 / 3.0, 2.0)],
            false,
            MappingMethod::Normal,
        )
        .unwrap()
        .with_time(2.0, 0.5)
        .unwrap();
        let p = dir.path().join("f.csv");
        f.write_csv(&p).unwrap();
        let g = DisplacementField::read_csv(&p).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = vec![Point2::ORIGIN, Point2::new(1.0, 0.0)];
        assert!(DisplacementField::new(p.clone(), vec![Point2::ORIGIN], false, MappingMethod::Uniform).is_err());
        assert!(DisplacementField::new(vec![Point2::ORIGIN], vec![Point2::ORIGIN], false, MappingMethod::Uniform).is_err());
        assert!(DisplacementField::new(p.clone(), vec![Point2::new(f64::NAN, 0.0); 2], false, MappingMethod::Uniform).is_err());
    }

    #[test]
    fn interpolation_along_sources() {
        let f = DisplacementField::new(
            vec![Point2::new(0.0, 0.0), Point2::new(2.0, 0.0)],
            vec![Point2::new(0.0, 1.0), Point2::new(0.0, 3.0)],
            false,
            MappingMethod::Uniform,
        )
        .unwrap();
        let (v, d) = f.interpolate(Point2::new(0.5, 0.0));
        assert!((v.y - 1.5).abs() < 1e-15 && d == 0.0);
        assert_eq!("reverse_normal".parse::<MappingMethod>().unwrap(), MappingMethod::ReverseNormal);
    }
}
