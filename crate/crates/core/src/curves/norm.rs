//! Norms on the control space and their Minkowski (strong convexity) check.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

pub type NormFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum NormKind {
    /// `F(u) = sqrt(u^T Q u)`; `l_inv_t` maps the Euclidean unit ball onto the F-ball.
    Quadratic { q: DMatrix<f64>, l_inv_t: DMatrix<f64> },
    /// Arbitrary convex, positively homogeneous norm. `min_unit` is a lower
    /// estimate of `F` on the Euclidean unit sphere.
    Convex { f: Arc<NormFn>, min_unit: f64, max_unit: f64 },
}

/// A Minkowski norm on `R^k`, multiplied by a positive `scale`.
#[derive(Clone)]
pub struct ControlNorm {
    pub kind: NormKind,
    pub label: String,
    pub dim: usize,
    pub scale: f64,
}

impl fmt::Debug for ControlNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            NormKind::Quadratic { q, .. } => format!("quadratic {q:?}"),
            NormKind::Convex { .. } => "convex".to_string(),
        };
        f.debug_struct("ControlNorm")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("scale", &self.scale)
            .field("kind", &kind)
            .finish()
    }
}

const SPOT_CHECKS: usize = 256;

impl ControlNorm {
    pub fn euclidean(k: usize) -> Self {
        Self::quadratic(DMatrix::identity(k, k), "euclidean").expect("identity is positive definite")
    }

    /// Quadratic norm; rejects non-symmetric or non positive definite `q`.
    pub fn quadratic(q: DMatrix<f64>, label: &str) -> Result<Self> {
        let k = q.nrows();
        if k == 0 || q.ncols() != k {
            return Err(Error::InvalidNorm("Q must be a nonempty square matrix".into()));
        }
        let asym = (&q - q.transpose()).abs().max();
        if asym > 1e-12 * q.abs().max().max(1.0) {
            return Err(Error::InvalidNorm(format!("Q is not symmetric (defect {asym})")));
        }
        let eig = q.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min <= 0.0 {
            return Err(Error::InvalidNorm(format!("Q is not positive definite (eigenvalue {min})")));
        }
        let chol = q.clone().cholesky().ok_or_else(|| Error::InvalidNorm("Cholesky failed".into()))?;
        let l_inv_t = chol
            .l()
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::InvalidNorm("singular Cholesky factor".into()))?;
        Ok(Self { kind: NormKind::Quadratic { q, l_inv_t }, label: label.into(), dim: k, scale: 1.0 })
    }

    /// General convex norm, spot-checked for positivity and homogeneity on
    /// seeded random directions.
    pub fn convex(k: usize, f: Arc<NormFn>, label: &str) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidNorm("dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut min_unit = f64::INFINITY;
        let mut max_unit = 0.0f64;
        for i in 0..SPOT_CHECKS {
            let dir = random_unit(&mut rng, k);
            let v = f(&dir);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::DegenerateDirection(i));
            }
            for t in [0.5, 3.0] {
                let scaled: Vec<f64> = dir.iter().map(|x| t * x).collect();
                let ft = f(&scaled);
                if (ft - t * v).abs() > 1e-9 * t * v.max(1.0) {
                    return Err(Error::InvalidNorm(format!(
                        "not positively homogeneous: F({t} u) = {ft}, {t} F(u) = {}",
                        t * v
                    )));
                }
            }
            min_unit = min_unit.min(v);
            max_unit = max_unit.max(v);
        }
        Ok(Self {
            kind: NormKind::Convex { f, min_unit: 0.5 * min_unit, max_unit },
            label: label.into(),
            dim: k,
            scale: 1.0,
        })
    }

    /// The norm `c F`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::NonPositiveScale(c));
        }
        let mut out = self.clone();
        out.scale *= c;
        out.label = format!("{c}*{}", self.label);
        Ok(out)
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, NormKind::Quadratic { .. })
    }

    /// The norm without its scale factor.
    pub fn base_eval(&self, u: &[f64]) -> f64 {
        match &self.kind {
            NormKind::Quadratic { q, .. } => {
                let k = self.dim;
                let mut s = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        s += u[i] * q[(i, j)] * u[j];
                    }
                }
                s.max(0.0).sqrt()
            }
            NormKind::Convex { f, .. } => f(u),
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.scale * self.base_eval(u)
    }

    /// Gradient of `base_eval(u)^2`.
    pub fn base_energy_gradient(&self, u: &[f64]) -> Vec<f64> {
        match &self.kind {
            NormKind::Quadratic { q, .. } => {
                let v = q * DVector::from_column_slice(u);
                v.iter().map(|x| 2.0 * x).collect()
            }
            NormKind::Convex { f, .. } => {
                let h = 1e-6;
                let mut w = u.to_vec();
                (0..u.len())
                    .map(|i| {
                        w[i] = u[i] + h;
                        let p = f(&w).powi(2);
                        w[i] = u[i] - h;
                        let m = f(&w).powi(2);
                        w[i] = u[i];
                        (p - m) / (2.0 * h)
                    })
                    .collect()
            }
        }
    }

    /// Uniform sample from the unit ball of the unscaled norm.
    pub fn sample_unit_ball<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.dim;
        match &self.kind {
            NormKind::Quadratic { l_inv_t, .. } => {
                let dir = random_unit(rng, k);
                let rad: f64 = rng.random::<f64>().powf(1.0 / k as f64);
                let z = DVector::from_iterator(k, dir.into_iter().map(|x| x * rad));
                (l_inv_t * z).iter().copied().collect()
            }
            NormKind::Convex { f, min_unit, .. } => {
                // Direction density of the uniform F-ball is proportional to F(dir)^-k.
                loop {
                    let dir = random_unit(rng, k);
                    let fd = f(&dir);
                    let accept = (min_unit / fd).powi(k as i32).min(1.0);
                    if rng.random::<f64>() < accept {
                        let rad: f64 = rng.random::<f64>().powf(1.0 / k as f64) / fd;
                        return dir.into_iter().map(|x| x * rad).collect();
                    }
                }
            }
        }
    }
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MinkowskiSample {
    pub direction: Vec<f64>,
    pub min_eigenvalue: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MinkowskiReport {
    pub samples: Vec<MinkowskiSample>,
    pub min_eigenvalue: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Eigenvalues below this are treated as non-positive; absorbs the
/// finite-difference noise of a step around `1e-4`.
pub const MINKOWSKI_THRESHOLD: f64 = 1e-5;

/// Finite-difference Hessian of `F^2 / 2` at each direction.
pub fn minkowski_check(norm: &ControlNorm, dirs: &[Vec<f64>], h: f64) -> Result<MinkowskiReport> {
    let k = norm.dim;
    let phi = |u: &[f64]| 0.5 * norm.eval(u).powi(2);
    let mut samples = Vec::with_capacity(dirs.len());
    for (idx, u) in dirs.iter().enumerate() {
        if u.len() != k {
            return Err(Error::Shape(format!("direction {idx} has length {}, expected {k}", u.len())));
        }
        if norm.eval(u) <= 0.0 {
            return Err(Error::DegenerateDirection(idx));
        }
        let mut hess = DMatrix::<f64>::zeros(k, k);
        let mut w = u.clone();
        for i in 0..k {
            for j in i..k {
                let mut at = |si: f64, sj: f64| {
                    w.copy_from_slice(u);
                    w[i] += si * h;
                    w[j] += sj * h;
                    phi(&w)
                };
                let v = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        let min = hess.symmetric_eigen().eigenvalues.min();
        samples.push(MinkowskiSample { direction: u.clone(), min_eigenvalue: min });
    }
    let min_eigenvalue = samples.iter().map(|s| s.min_eigenvalue).fold(f64::INFINITY, f64::min);
    Ok(MinkowskiReport {
        passed: samples.iter().all(|s| s.min_eigenvalue > MINKOWSKI_THRESHOLD),
        samples,
        min_eigenvalue,
        threshold: MINKOWSKI_THRESHOLD,
    })
}
