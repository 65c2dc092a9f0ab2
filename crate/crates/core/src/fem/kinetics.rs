use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kinetics {
    /// `R_u = a - u + u^2 v`, `R_v = b - u^2 v`.
    Schnakenberg,
    /// `R_u = a - b u + u^2 / v`, `R_v = u^2 - v`.
    GiererMeinhardt,
    /// Receptor R and ligand L: `R' = rho_r - delta_r R + k R^2 L`,
    /// `L' = rho_l - delta_l L - k R^2 L`.
    LigandReceptorTuring,
    /// Sums of monomials per species plus optional linear decay.
    Custom,
}

/// `coefficient * prod_j c_j^powers[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coefficient: f64,
    pub powers: Vec<i32>,
}

impl Monomial {
    fn eval(&self, c: &[f64]) -> f64 {
        self.powers
            .iter()
            .zip(c)
            .fold(self.coefficient, |acc, (&p, &x)| if p == 0 { acc } else { acc * x.powi(p) })
    }

    fn derivative(&self, c: &[f64], j: usize) -> f64 {
        let pj = self.powers[j];
        if pj == 0 {
            return 0.0;
        }
        self.powers
            .iter()
            .zip(c)
            .enumerate()
            .fold(self.coefficient * pj as f64, |acc, (k, (&p, &x))| {
                let e = if k == j { p - 1 } else { p };
                if e == 0 {
                    acc
                } else {
                    acc * x.powi(e)
                }
            })
    }
}

/// Species count, diffusion coefficients and reaction terms. Linear decay
/// is kept separate from the other terms so the stepper can treat it
/// implicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionModel {
    pub kinetics: Kinetics,
    pub diffusion: Vec<f64>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Custom kinetics: monomial terms per species.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<Vec<Monomial>>,
    /// Custom kinetics: linear decay rate per species.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decay: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// Reaction terms with parameters substituted.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledKinetics {
    pub decay: Vec<f64>,
    pub terms: Vec<Vec<Monomial>>,
}

impl CompiledKinetics {
    pub fn n_species(&self) -> usize {
        self.decay.len()
    }

    /// Non-decay part of the rates.
    pub fn explicit(&self, c: &[f64], out: &mut [f64]) {
        for (s, terms) in self.terms.iter().enumerate() {
            out[s] = terms.iter().map(|m| m.eval(c)).sum();
        }
    }

    pub fn rates(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_species()];
        self.explicit(c, &mut out);
        for s in 0..out.len() {
            out[s] -= self.decay[s] * c[s];
        }
        out
    }

    /// Row-major Jacobian of `rates`.
    pub fn jacobian(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n_species();
        let mut j = vec![0.0; n * n];
        for s in 0..n {
            for k in 0..n {
                j[s * n + k] = self.terms[s].iter().map(|m| m.derivative(c, k)).sum::<f64>()
                    - if s == k { self.decay[s] } else { 0.0 };
            }
        }
        j
    }
}

fn mono(coefficient: f64, powers: &[i32]) -> Monomial {
    Monomial {
        coefficient,
        powers: powers.to_vec(),
    }
}

impl ReactionModel {
    pub fn schnakenberg(a: f64, b: f64, du: f64, dv: f64) -> Self {
        ReactionModel::builtin(Kinetics::Schnakenberg, &[("a", a), ("b", b)], vec![du, dv])
    }

    pub fn gierer_meinhardt(a: f64, b: f64, du: f64, dv: f64) -> Self {
        ReactionModel::builtin(Kinetics::GiererMeinhardt, &[("a", a), ("b", b)], vec![du, dv])
    }

    pub fn ligand_receptor(rho_r: f64, delta_r: f64, rho_l: f64, delta_l: f64, k: f64, d_r: f64, d_l: f64) -> Self {
        ReactionModel::builtin(
            Kinetics::LigandReceptorTuring,
            &[("rho_r", rho_r), ("delta_r", delta_r), ("rho_l", rho_l), ("delta_l", delta_l), ("k", k)],
            vec![d_r, d_l],
        )
    }

    /// Pure diffusion of `diffusion.len()` species.
    pub fn diffusion_only(diffusion: Vec<f64>) -> Self {
        let n = diffusion.len();
        ReactionModel::custom(diffusion, vec![Vec::new(); n], vec![0.0; n])
    }

    pub fn custom(diffusion: Vec<f64>, terms: Vec<Vec<Monomial>>, decay: Vec<f64>) -> Self {
        ReactionModel {
            kinetics: Kinetics::Custom,
            diffusion,
            params: BTreeMap::new(),
            terms,
            decay,
            notes: None,
        }
    }

    fn builtin(kinetics: Kinetics, params: &[(&str, f64)], diffusion: Vec<f64>) -> Self {
        ReactionModel {
            kinetics,
            diffusion,
            params: params.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            terms: Vec::new(),
            decay: Vec::new(),
            notes: None,
        }
    }

    pub fn n_species(&self) -> usize {
        self.diffusion.len()
    }

    fn required_params(&self) -> &'static [&'static str] {
        match self.kinetics {
            Kinetics::Schnakenberg | Kinetics::GiererMeinhardt => &["a", "b"],
            Kinetics::LigandReceptorTuring => &["rho_r", "delta_r", "rho_l", "delta_l", "k"],
            Kinetics::Custom => &[],
        }
    }

    /// Names accepted by [`ReactionModel::with_param`]: rate constants and
    /// `D0`, `D1`, ... for the diffusion coefficients.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.params.keys().cloned().collect();
        names.extend((0..self.n_species()).map(|i| format!("D{i}")));
        names
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        if let Some(i) = diffusion_index(name) {
            return self.diffusion.get(i).copied();
        }
        self.params.get(name).copied()
    }

    pub fn with_param(&self, name: &str, value: f64) -> Result<ReactionModel> {
        let mut m = self.clone();
        if let Some(i) = diffusion_index(name) {
            match m.diffusion.get_mut(i) {
                Some(d) => *d = value,
                None => return Err(Error::InvalidInput(format!("no diffusion coefficient {name}"))),
            }
        } else if let Some(p) = m.params.get_mut(name) {
            *p = value;
        } else {
            return Err(Error::InvalidInput(format!(
                "unknown parameter '{name}'; known: {:?}",
                self.parameter_names()
            )));
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.diffusion.is_empty() {
            return Err(Error::InvalidInput("reaction model has no species".into()));
        }
        if let Some(d) = self.diffusion.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::InvalidInput(format!("diffusion coefficient {d} must be finite and >= 0")));
        }
        for p in self.required_params() {
            match self.params.get(*p) {
                Some(v) if v.is_finite() => {}
                Some(v) => return Err(Error::InvalidInput(format!("parameter {p} = {v} is not finite"))),
                None => return Err(Error::InvalidInput(format!("{:?} kinetics needs parameter '{p}'", self.kinetics))),
            }
        }
        let n = self.n_species();
        match self.kinetics {
            Kinetics::Custom => {
                if self.terms.len() != n {
                    return Err(Error::InvalidInput(format!("custom kinetics: {} term lists for {n} species", self.terms.len())));
                }
                if !self.decay.is_empty() && self.decay.len() != n {
                    return Err(Error::InvalidInput(format!("custom kinetics: {} decay rates for {n} species", self.decay.len())));
                }
                for m in self.terms.iter().flatten() {
                    if m.powers.len() != n || !m.coefficient.is_finite() {
                        return Err(Error::InvalidInput("custom monomial must list one power per species".into()));
                    }
                }
            }
            _ if n != 2 => {
                return Err(Error::InvalidInput(format!("{:?} kinetics has 2 species, got {n} diffusion coefficients", self.kinetics)))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn compile(&self) -> Result<CompiledKinetics> {
        self.validate()?;
        let p = |k: &str| self.params[k];
        Ok(match self.kinetics {
            Kinetics::Schnakenberg => CompiledKinetics {
                decay: vec![1.0, 0.0],
                terms: vec![
                    vec![mono(p("a"), &[0, 0]), mono(1.0, &[2, 1])],
                    vec![mono(p("b"), &[0, 0]), mono(-1.0, &[2, 1])],
                ],
            },
            Kinetics::GiererMeinhardt => CompiledKinetics {
                decay: vec![p("b"), 1.0],
                terms: vec![vec![mono(p("a"), &[0, 0]), mono(1.0, &[2, -1])], vec![mono(1.0, &[2, 0])]],
            },
            Kinetics::LigandReceptorTuring => CompiledKinetics {
                decay: vec![p("delta_r"), p("delta_l")],
                terms: vec![
                    vec![mono(p("rho_r"), &[0, 0]), mono(p("k"), &[2, 1])],
                    vec![mono(p("rho_l"), &[0, 0]), mono(-p("k"), &[2, 1])],
                ],
            },
            Kinetics::Custom => CompiledKinetics {
                decay: if self.decay.is_empty() { vec![0.0; self.n_species()] } else { self.decay.clone() },
                terms: self.terms.clone(),
            },
        })
    }

    /// Total reaction rates at a concentration vector.
    pub fn rates(&self, c: &[f64]) -> Result<Vec<f64>> {
        Ok(self.compile()?.rates(c))
    }

    /// Spatially homogeneous steady state, by Newton iteration from
    /// `guess` (or a closed form for the built-in two-species kinetics).
    pub fn homogeneous_steady_state(&self, guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let k = self.compile()?;
        let n = self.n_species();
        let p = |name: &str| self.params.get(name).copied().unwrap_or(0.0);
        let mut c: Vec<f64> = match (guess, self.kinetics) {
            (Some(g), _) => g.to_vec(),
            (None, Kinetics::Schnakenberg) => {
                let (a, b) = (p("a"), p("b"));
                vec![a + b, b / ((a + b) * (a + b))]
            }
            (None, Kinetics::GiererMeinhardt) => {
                let u = (p("a") + 1.0) / p("b");
                vec![u, u * u]
            }
            (None, _) => vec![1.0; n],
        };
        for _ in 0..200 {
            let f = k.rates(&c);
            let norm = f.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if norm < 1e-13 {
                return Ok(c);
            }
            let j = nalgebra::DMatrix::from_row_slice(n, n, &k.jacobian(&c));
            let step = j
                .lu()
                .solve(&nalgebra::DVector::from_vec(f))
                .ok_or_else(|| Error::Singular("singular Jacobian in steady-state search".into()))?;
            let mut lambda = 1.0;
            // damped step keeping concentrations positive
            while c.iter().zip(step.iter()).any(|(x, d)| x - lambda * d <= 0.0) && lambda > 1e-6 {
                lambda *= 0.5;
            }
            for (x, d) in c.iter_mut().zip(step.iter()) {
                *x -= lambda * d;
            }
        }
        let f = k.rates(&c);
        if f.iter().all(|x| x.abs() < 1e-9) {
            Ok(c)
        } else {
            Err(Error::Simulation("no homogeneous steady state found".into()))
        }
    }
}

fn diffusion_index(name: &str) -> Option<usize> {
    let rest = name.strip_prefix('D')?;
    rest.strip_prefix('_').unwrap_or(rest).parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schnakenberg_rates_and_steady_state() {
        let m = ReactionModel::schnakenberg(0.1, 0.9, 1.0, 20.0);
        let r = m.rates(&[2.0, 0.5]).unwrap();
        assert!((r[0] - (0.1 - 2.0 + 4.0 * 0.5)).abs() < 1e-15);
        assert!((r[1] - (0.9 - 2.0)).abs() < 1e-15);
        let ss = m.homogeneous_steady_state(None).unwrap();
        assert!((ss[0] - 1.0).abs() < 1e-12 && (ss[1] - 0.9).abs() < 1e-12);
        let j = m.compile().unwrap().jacobian(&ss);
        let expect = [0.8, 1.0, -1.8, -1.0];
        for (a, b) in j.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gierer_meinhardt_steady_state() {
        let m = ReactionModel::gierer_meinhardt(0.1, 1.0, 1.0, 30.0);
        let ss = m.homogeneous_steady_state(None).unwrap();
        assert!(m.rates(&ss).unwrap().iter().all(|r| r.abs() < 1e-12));
        assert!((ss[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn ligand_receptor_newton() {
        let m = ReactionModel::ligand_receptor(0.1, 1.0, 0.9, 0.0, 1.0, 1.0, 20.0);
        let ss = m.homogeneous_steady_state(None).unwrap();
        assert!(m.rates(&ss).unwrap().iter().all(|r| r.abs() < 1e-9));
        // with delta_l = 0 and k = 1 this is Schnakenberg in disguise
        assert!((ss[0] - 1.0).abs() < 1e-9 && (ss[1] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = ReactionModel::gierer_meinhardt(0.3, 0.7, 1.0, 10.0).compile().unwrap();
        let c = [1.3, 0.8];
        let j = m.jacobian(&c);
        for k in 0..2 {
            let h = 1e-6;
            let mut cp = c;
            cp[k] += h;
            let mut cm = c;
            cm[k] -= h;
            let (fp, fm) = (m.rates(&cp), m.rates(&cm));
            for s in 0..2 {
                assert!(((fp[s] - fm[s]) / (2.0 * h) - j[s * 2 + k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn parameters_by_name() {
        let m = ReactionModel::schnakenberg(0.1, 0.9, 1.0, 20.0);
        let m2 = m.with_param("a", 0.2).unwrap().with_param("D1", 5.0).unwrap();
        assert_eq!(m2.param("a"), Some(0.2));
        assert_eq!(m2.diffusion[1], 5.0);
        assert!(m.with_param("zeta", 1.0).is_err());
        assert!(m.with_param("D0", -1.0).is_err());
    }

    #[test]
    fn config_round_trip() {
        let json = r#"{"kinetics":"custom","diffusion":[1.0],"terms":[[{"coefficient":2.0,"powers":[0]}]],"decay":[0.5]}"#;
        let m: ReactionModel = serde_json::from_str(json).unwrap();
        assert_eq!(m.rates(&[4.0]).unwrap(), vec![0.0]);
        let back: ReactionModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
