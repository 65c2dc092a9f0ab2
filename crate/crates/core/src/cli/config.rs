use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{BoundaryConditions, InitialCondition, PreEquilibration, ReactionModel, Schedule};
use crate::infer::{Criterion, Metric, ParamBound, RefineOptions};
use crate::mapping::MappingConfig;
use crate::mesh::{QualityThresholds, RegionSeed};

/// One JSON document configuring every pipeline stage. Relative paths are
/// resolved against the directory of the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub segment: Option<SegmentSection>,
    pub map: Option<MapSection>,
    pub mesh: Option<MeshSection>,
    pub simulate: Option<SimulateSection>,
    pub fit: Option<FitSection>,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    pub images: Vec<PathBuf>,
    /// `LO:HI[:LABEL]` intervals.
    pub thresholds: Vec<String>,
    pub blur: f64,
    pub points: Option<usize>,
    pub pixel_size: Option<f64>,
    /// Stage time of each image; `0, 1, 2, ...` when absent.
    pub times: Option<Vec<f64>>,
}

/// Mapping options plus the `curves` read by `map`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value")]
pub struct MapSection {
    /// Curve files for `map`; the first two are used.
    pub curves: Vec<PathBuf>,
    #[serde(flatten)]
    pub mapping: MappingConfig,
}

impl TryFrom<serde_json::Value> for MapSection {
    type Error = serde_json::Error;

    fn try_from(mut v: serde_json::Value) -> std::result::Result<Self, Self::Error> {
        let curves = match v.as_object_mut().and_then(|o| o.remove("curves")) {
            Some(c) => serde_json::from_value(c)?,
            None => Vec::new(),
        };
        Ok(MapSection {
            curves,
            mapping: serde_json::from_value(v)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub outer: Option<PathBuf>,
    pub inner: Vec<PathBuf>,
    pub h: f64,
    pub min_angle: f64,
    pub seeds: Vec<RegionSeed>,
    /// Smallest expected gradient length for the quality check.
    pub gradient_length: Option<f64>,
    /// Vertex reduction factor applied after triangulation.
    pub coarsen: Option<f64>,
    /// Uniform refinement passes applied last.
    pub refine: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection {
            outer: None,
            inner: Vec::new(),
            h: 1.0,
            min_angle: 20.0,
            seeds: Vec::new(),
            gradient_length: None,
            coarsen: None,
            refine: 0,
        }
    }
}

/// Reaction model given inline or as a path to a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Path(PathBuf),
    Inline(ReactionModel),
}

impl ModelSpec {
    pub fn load(&self) -> Result<ReactionModel> {
        match self {
            ModelSpec::Inline(m) => {
                m.validate()?;
                Ok(m.clone())
            }
            ModelSpec::Path(p) => {
                let model: ReactionModel = read_json(p)?;
                model.validate().map_err(|e| Error::parse(p, e.to_string()))?;
                Ok(model)
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let ModelSpec::Path(p) = self {
            *p = base.join(&*p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub mesh: Option<PathBuf>,
    pub model: Option<ModelSpec>,
    pub bc: BoundaryConditions,
    pub initial: InitialCondition,
    pub schedule: Option<Schedule>,
    pub pre_equilibrate: Option<PreEquilibration>,
    /// Growth series JSON listing displacement-field files.
    pub growth: Option<PathBuf>,
    /// Write an SVG heat map next to every frame.
    pub svg: bool,
    /// Species drawn in the SVG frames.
    pub plot_species: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            mesh: None,
            model: None,
            bc: BoundaryConditions::default(),
            initial: InitialCondition::default(),
            schedule: None,
            pre_equilibrate: None,
            growth: None,
            svg: true,
            plot_species: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub path: PathBuf,
    /// Mesh of the target when it differs from the simulation mesh.
    #[serde(default)]
    pub mesh: Option<PathBuf>,
    #[serde(default = "Metric::sse")]
    pub metric: Metric,
    #[serde(default = "unit")]
    pub weight: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub tag: String,
    pub model: ModelSpec,
    pub parameters: Vec<ParamBound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Parameters of the simulate-section model.
    pub parameters: Vec<ParamBound>,
    /// Alternative models ranked against each other; replaces the
    /// simulate-section model when non-empty.
    pub candidates: Vec<CandidateSpec>,
    pub targets: Vec<TargetSpec>,
    /// Grid values per parameter.
    pub screen: usize,
    pub budget: Option<usize>,
    pub refine: bool,
    pub refine_options: RefineOptions,
    pub criterion: Criterion,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            parameters: Vec::new(),
            candidates: Vec::new(),
            targets: Vec::new(),
            screen: 5,
            budget: None,
            refine: false,
            refine_options: RefineOptions::default(),
            criterion: Criterion::Aic,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub quality: QualityThresholds,
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

impl RunConfig {
    /// Reads the file and makes every path in it absolute or relative to
    /// the working directory.
    pub fn read(path: &Path) -> Result<RunConfig> {
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| *p = base.join(&*p);
        if let Some(o) = &mut self.output {
            join(o);
        }
        if let Some(s) = &mut self.segment {
            s.images.iter_mut().for_each(join);
        }
        if let Some(m) = &mut self.map {
            m.curves.iter_mut().for_each(join);
        }
        if let Some(m) = &mut self.mesh {
            m.outer.iter_mut().for_each(join);
            m.inner.iter_mut().for_each(join);
        }
        if let Some(s) = &mut self.simulate {
            s.mesh.iter_mut().for_each(join);
            s.growth.iter_mut().for_each(join);
            if let Some(m) = &mut s.model {
                m.resolve(base);
            }
        }
        if let Some(f) = &mut self.fit {
            for t in &mut f.targets {
                join(&mut t.path);
                t.mesh.iter_mut().for_each(join);
            }
            for c in &mut f.candidates {
                c.model.resolve(base);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_resolve_against_config_dir() {
        let text = r#"{
            "seed": 3,
            "segment": {"images": ["a.pgm"], "thresholds": ["0:10:bud"]},
            "map": {"curves": ["c1.csv", "c2.csv"], "n_points": 64},
            "simulate": {"model": "kinetics/s.json", "schedule": {"t_end": 1, "dt": 0.1}}
        }"#;
        let mut cfg: RunConfig = serde_json::from_str(text).unwrap();
        cfg.resolve(Path::new("/data/run"));
        assert_eq!(cfg.segment.unwrap().images[0], PathBuf::from("/data/run/a.pgm"));
        let map = cfg.map.unwrap();
        assert_eq!(map.mapping.n_points, 64);
        assert_eq!(map.curves[1], PathBuf::from("/data/run/c2.csv"));
        assert_eq!(
            cfg.simulate.unwrap().model,
            Some(ModelSpec::Path(PathBuf::from("/data/run/kinetics/s.json")))
        );
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"mesh": {"hh": 1}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"map": {"n_point": 1}}"#).is_err());
    }

    #[test]
    fn inline_model_parses() {
        let text = r#"{"simulate": {"model": {"kinetics": "schnakenberg", "diffusion": [1, 40], "params": {"a": 0.1, "b": 0.9}}}}"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        let m = cfg.simulate.unwrap().model.unwrap().load().unwrap();
        assert_eq!(m.param("b"), Some(0.9));
    }
}
