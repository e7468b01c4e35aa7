//! Model manifolds: flat tori, round spheres and flat charts.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metric::{BaseMetric, FiniteMetricSpace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldModel {
    /// `R^dim / (circumference Z)^dim` with the flat quotient metric.
    Torus { dim: usize, circumference: f64 },
    /// Round sphere embedded in `R^3`, great-circle metric.
    Sphere { radius: f64 },
    /// Flat chart `R^dim`.
    Chart { dim: usize },
}

impl ManifoldModel {
    pub fn torus(dim: usize) -> Self {
        ManifoldModel::Torus { dim, circumference: 1.0 }
    }

    /// Number of coordinates per point.
    pub fn coord_dim(&self) -> usize {
        match *self {
            ManifoldModel::Torus { dim, .. } | ManifoldModel::Chart { dim } => dim,
            ManifoldModel::Sphere { .. } => 3,
        }
    }

    pub fn base_metric(&self) -> BaseMetric {
        match *self {
            ManifoldModel::Torus { circumference, .. } => BaseMetric::Torus { circumference },
            ManifoldModel::Sphere { radius } => BaseMetric::Sphere { radius },
            ManifoldModel::Chart { .. } => BaseMetric::Euclidean,
        }
    }

    /// Shortest displacement from `a` to `b` in coordinates (lattice-reduced on tori).
    pub fn displacement(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        match *self {
            ManifoldModel::Torus { circumference: c, .. } => a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let d = y - x;
                    d - c * (d / c).round()
                })
                .collect(),
            _ => a.iter().zip(b).map(|(x, y)| y - x).collect(),
        }
    }

    /// Upper bound on the diameter of the model.
    pub fn diameter_bound(&self) -> f64 {
        match *self {
            ManifoldModel::Torus { dim, circumference } => (dim as f64).sqrt() * circumference / 2.0,
            ManifoldModel::Sphere { radius } => std::f64::consts::PI * radius,
            ManifoldModel::Chart { .. } => f64::INFINITY,
        }
    }

    /// Uniform grid with `per_side` points per axis (tori and charts on `[0, c)^dim`).
    pub fn grid(&self, per_side: usize) -> Vec<Vec<f64>> {
        let (dim, c) = match *self {
            ManifoldModel::Torus { dim, circumference } => (dim, circumference),
            ManifoldModel::Chart { dim } => (dim, 1.0),
            ManifoldModel::Sphere { .. } => panic!("grid sampling is defined for tori and charts"),
        };
        let total = per_side.pow(dim as u32);
        (0..total)
            .map(|mut idx| {
                let mut p = vec![0.0; dim];
                for slot in p.iter_mut().rev() {
                    *slot = (idx % per_side) as f64 * c / per_side as f64;
                    idx /= per_side;
                }
                p
            })
            .collect()
    }

    pub fn grid_space(&self, per_side: usize) -> Result<FiniteMetricSpace> {
        FiniteMetricSpace::from_coords(self.grid(per_side), self.base_metric())
    }
}
