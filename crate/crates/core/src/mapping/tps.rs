use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{orient, Point2};

/// Corresponding points on two stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pairs: Vec<(Point2, Point2)>,
}

impl LandmarkSet {
    pub fn new(pairs: Vec<(Point2, Point2)>) -> Result<LandmarkSet> {
        if pairs.len() < 3 {
            return Err(Error::InvalidInput(format!("{} landmarks, at least 3 needed", pairs.len())));
        }
        if let Some(i) = pairs.iter().position(|(a, b)| !(a.is_finite() && b.is_finite())) {
            return Err(Error::InvalidInput(format!("landmark {i} is not finite")));
        }
        let mut src: Vec<(usize, Point2)> = pairs.iter().map(|p| p.0).enumerate().collect();
        src.sort_by(|a, b| (a.1.x, a.1.y).partial_cmp(&(b.1.x, b.1.y)).unwrap());
        if let Some(w) = src.windows(2).find(|w| w[0].1 == w[1].1) {
            return Err(Error::Singular(format!("landmarks {} and {} share a source point", w[0].0, w[1].0)));
        }
        let a = pairs[0].0;
        let b = pairs.iter().map(|p| p.0).max_by(|p, q| p.dist(a).total_cmp(&q.dist(a))).unwrap();
        if pairs.iter().all(|p| orient(a, b, p.0) == 0.0) {
            return Err(Error::Singular("landmark sources are collinear".into()));
        }
        Ok(LandmarkSet { pairs })
    }

    pub fn pairs(&self) -> &[(Point2, Point2)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// CSV with header `x0,y0,x1,y1`, one pair per row.
    pub fn read_csv(path: &Path) -> Result<LandmarkSet> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or("").replace(' ', "");
        if header != "x0,y0,x1,y1" {
            return Err(Error::parse(path, format!("expected header 'x0,y0,x1,y1', got '{header}'")));
        }
        let pairs = lines
            .enumerate()
            .map(|(k, l)| {
                let f: Vec<f64> = l
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(path, format!("row {}: {e}", k + 2)))?;
                if f.len() != 4 {
                    return Err(Error::parse(path, format!("row {}: expected 4 columns", k + 2)));
                }
                Ok((Point2::new(f[0], f[1]), Point2::new(f[2], f[3])))
            })
            .collect::<Result<Vec<_>>>()?;
        LandmarkSet::new(pairs)
    }
}

/// `U(r) = r^2 log r^2`, zero at the origin.
pub fn tps_kernel(r2: f64) -> f64 {
    if r2 > 0.0 {
        r2 * r2.ln()
    } else {
        0.0
    }
}

/// Thin-plate spline `f(p) = a0 + a1 x + a2 y + sum w_i U(|p - p_i|)`
/// per output coordinate, with `sum w_i = sum w_i x_i = sum w_i y_i = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinPlateSpline {
    centers: Vec<Point2>,
    weights: Vec<Point2>,
    affine: [Point2; 3],
}

impl ThinPlateSpline {
    /// Fits the interpolant; `lambda > 0` adds ridge smoothing.
    pub fn fit(landmarks: &LandmarkSet, lambda: f64) -> Result<ThinPlateSpline> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("regularization must be nonnegative, got {lambda}")));
        }
        let n = landmarks.len();
        let src: Vec<Point2> = landmarks.pairs().iter().map(|p| p.0).collect();
        let mut a = DMatrix::<f64>::zeros(n + 3, n + 3);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = tps_kernel((src[i] - src[j]).norm_sq());
            }
            a[(i, i)] += lambda;
            let row = [1.0, src[i].x, src[i].y];
            for (k, v) in row.into_iter().enumerate() {
                a[(i, n + k)] = v;
                a[(n + k, i)] = v;
            }
        }
        let mut rhs = DMatrix::<f64>::zeros(n + 3, 2);
        for (i, (_, q)) in landmarks.pairs().iter().enumerate() {
            rhs[(i, 0)] = q.x;
            rhs[(i, 1)] = q.y;
        }
        let lu = a.lu();
        let sol = lu
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Singular("thin-plate spline system is singular".into()))?;
        let weights = (0..n).map(|i| Point2::new(sol[(i, 0)], sol[(i, 1)])).collect();
        let affine = [0, 1, 2].map(|k| Point2::new(sol[(n + k, 0)], sol[(n + k, 1)]));
        Ok(ThinPlateSpline {
            centers: src,
            weights,
            affine,
        })
    }

    pub fn weights(&self) -> &[Point2] {
        &self.weights
    }

    /// Affine coefficients `[a0, a1, a2]`, one point per output coordinate
    /// pair.
    pub fn affine(&self) -> [Point2; 3] {
        self.affine
    }

    pub fn eval(&self, p: Point2) -> Point2 {
        let [a0, a1, a2] = self.affine;
        self.centers
            .iter()
            .zip(&self.weights)
            .fold(a0 + a1 * p.x + a2 * p.y, |acc, (&c, &w)| acc + w * tps_kernel((p - c).norm_sq()))
    }

    /// `sum_coords w^T K w`, proportional to the integrated bending energy.
    pub fn bending_energy(&self) -> f64 {
        let n = self.centers.len();
        let k = DMatrix::from_fn(n, n, |i, j| tps_kernel((self.centers[i] - self.centers[j]).norm_sq()));
        let wx = DVector::from_iterator(n, self.weights.iter().map(|w| w.x));
        let wy = DVector::from_iterator(n, self.weights.iter().map(|w| w.y));
        wx.dot(&(&k * &wx)) + wy.dot(&(&k * &wy))
    }
}

/// Displacements `f(q) - q` of the exact landmark interpolant at `queries`.
pub fn map_tps(landmarks: &LandmarkSet, queries: &[Point2]) -> Result<Vec<Point2>> {
    let tps = ThinPlateSpline::fit(landmarks, 0.0)?;
    Ok(queries.iter().map(|&q| tps.eval(q) - q).collect())
}
