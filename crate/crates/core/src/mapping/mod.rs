//! Displacement fields between the boundaries of consecutive stages.

mod diffusion;
mod field;
mod methods;
mod tps;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_direction, resample_equidistant, similarity_prescale, Curve, CurveTransform};

pub use diffusion::{map_diffusion, GapPotential};
pub use field::{DisplacementField, FieldDescriptor, MappingMethod};
pub use methods::{
    crossing_count, field_quality, map_minimal_distance, map_normal, map_uniform, vertex_normals, FieldQuality,
    MAX_MISSING_FRACTION,
};
pub use tps::{map_tps, tps_kernel, LandmarkSet, ThinPlateSpline};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    /// `None` chooses uniform for open curves and escalates normal,
    /// reverse normal, diffusion for closed curves until no vectors cross.
    pub method: Option<MappingMethod>,
    /// Equidistant samples per curve.
    pub n_points: usize,
    /// Similarity prescale of the first curve onto the second before
    /// matching.
    pub prescale: bool,
    /// Streamlines for diffusion mapping; `n_points` when absent.
    pub n_stream: Option<usize>,
    /// Gap mesh size for diffusion mapping; the mean sample spacing when
    /// absent.
    pub mesh_size: Option<f64>,
    /// Coverage radius for the quality report; one target sample spacing
    /// when absent.
    pub coverage_eps: Option<f64>,
    pub landmarks: Option<LandmarkSet>,
    pub t: f64,
    pub dt: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            method: None,
            n_points: 256,
            prescale: false,
            n_stream: None,
            mesh_size: None,
            coverage_eps: None,
            landmarks: None,
            t: 0.0,
            dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingAttempt {
    pub method: MappingMethod,
    pub crossing_count: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingOutcome {
    pub field: DisplacementField,
    pub quality: FieldQuality,
    pub attempts: Vec<MappingAttempt>,
}

struct Prepared {
    c1: Curve,
    c2: Curve,
    transform: CurveTransform,
}

fn run_method(method: MappingMethod, p: &Prepared, config: &MappingConfig) -> Result<DisplacementField> {
    let (a, b) = (&p.c1, &p.c2);
    let n = config.n_points;
    let h = config
        .mesh_size
        .unwrap_or_else(|| 0.5 * (a.length() / a.segment_count() as f64 + b.length() / b.segment_count() as f64));
    let field = match method {
        MappingMethod::MinimalDistance => map_minimal_distance(a, b),
        MappingMethod::Uniform => map_uniform(a, b, n)?,
        MappingMethod::Normal => map_normal(a, b, false)?,
        MappingMethod::ReverseNormal => map_normal(a, b, true)?,
        MappingMethod::Diffusion => map_diffusion(a, b, false, config.n_stream.unwrap_or(n), h)?,
        MappingMethod::ReverseDiffusion => map_diffusion(a, b, true, config.n_stream.unwrap_or(n), h)?,
        MappingMethod::Tps => {
            let l = config
                .landmarks
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("tps mapping needs a landmark set".into()))?;
            let v = map_tps(l, a.points())?;
            DisplacementField::new(a.points().to_vec(), v, a.is_closed(), MappingMethod::Tps)?
        }
    };
    // back to the unscaled first curve; targets stay where they are
    let missing = field.missing().to_vec();
    let sources: Vec<_> = field.sources().iter().map(|&s| p.transform.apply_inverse(s)).collect();
    let vectors = field.targets().iter().zip(&sources).map(|(&q, &s)| q - s).collect();
    Ok(DisplacementField::new(sources, vectors, field.is_closed(), method)?.with_missing(missing))
}

/// Prescale (optional), resampling and direction normalization followed by
/// the configured mapping method and a quality report against `c2`.
pub fn run_mapping_pipeline(c1: &Curve, c2: &Curve, config: &MappingConfig) -> Result<MappingOutcome> {
    if config.n_points < 3 {
        return Err(Error::InvalidInput(format!("n_points must be at least 3, got {}", config.n_points)));
    }
    let (c1s, transform) = if config.prescale {
        similarity_prescale(c1, c2)?
    } else {
        (c1.clone(), CurveTransform::identity())
    };
    let (a, b) = normalize_direction(
        &resample_equidistant(&c1s, config.n_points)?,
        &resample_equidistant(c2, config.n_points)?,
    );
    let prepared = Prepared { c1: a, c2: b, transform };
    let eps = config
        .coverage_eps
        .unwrap_or(prepared.c2.length() / prepared.c2.segment_count() as f64);
    let plan: Vec<MappingMethod> = match config.method {
        Some(m) => vec![m],
        None if !(c1.is_closed() && c2.is_closed()) => vec![MappingMethod::Uniform],
        None => vec![MappingMethod::Normal, MappingMethod::ReverseNormal, MappingMethod::Diffusion],
    };
    let mut attempts = Vec::new();
    let mut last_err = None;
    for (k, &method) in plan.iter().enumerate() {
        let is_last = k + 1 == plan.len();
        match run_method(method, &prepared, config) {
            Ok(field) => {
                let quality = field_quality(&field, &prepared.c2, eps);
                attempts.push(MappingAttempt {
                    method,
                    crossing_count: Some(quality.crossing_count),
                    error: None,
                });
                if quality.crossing_count == 0 || is_last {
                    if quality.crossing_count > 0 {
                        warn!("{method} mapping leaves {} crossing vectors", quality.crossing_count);
                    }
                    info!("mapped {} samples with {method}", field.len());
                    return Ok(MappingOutcome {
                        field: field.with_time(config.t, config.dt)?,
                        quality,
                        attempts,
                    });
                }
            }
            Err(e) => {
                attempts.push(MappingAttempt {
                    method,
                    crossing_count: None,
                    error: Some(e.to_string()),
                });
                last_err = Some(e);
            }
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Mapping("no mapping method succeeded".into())))
}
