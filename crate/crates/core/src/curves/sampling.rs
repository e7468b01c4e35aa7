//! Sampling of curves with a Finsler speed (or length) budget.
//!
//! All base points share one [`ControlLibrary`]: curve `c` at radius `r` is
//! driven by the controls `r * w_c` wherever it starts, so bundles at different
//! radii and base points are structurally matched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::curve::{time_grid, Curve, DEFAULT_TIME_INTERVALS};
use super::norm::ControlNorm;
use super::system::AnchoredSystem;
use crate::error::{Error, Result};
use crate::metric::FiniteMetricSpace;
use crate::ode::{integrate_piecewise, Segment};

/// Default number of piecewise-constant control segments.
pub const DEFAULT_SEGMENTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingOptions {
    /// Grid intervals on `[0, 1]`.
    pub intervals: usize,
    /// Maximum integration step.
    pub dt: f64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self { intervals: DEFAULT_TIME_INTERVALS, dt: 1e-2 }
    }
}

/// Which curve budget a bundle realises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Filtration {
    /// `F(u(t)) <= r` for all `t`.
    SpeedBounded,
    /// `l(curve) <= r`, speed profile free.
    LengthFiltered,
}

/// Unit-ball control sequences, one per curve index.
#[derive(Clone, Debug)]
pub struct ControlLibrary {
    pub seed: u64,
    pub n_segments: usize,
    /// `controls[c][s]`: control of curve `c` on segment `s`, in the unscaled unit ball.
    pub controls: Vec<Vec<Vec<f64>>>,
    /// `profiles[c][s]`: positive speed profile with mean 1, used by the length filtration.
    pub profiles: Vec<Vec<f64>>,
}

const PROFILE_STREAM: u64 = 1 << 32;

impl ControlLibrary {
    /// Curve `c` draws from the ChaCha stream `c` of `seed`, so a library of
    /// `m` curves is a prefix of every larger library with the same seed.
    pub fn generate(norm: &ControlNorm, n_curves: usize, n_segments: usize, seed: u64) -> Result<Self> {
        if n_segments == 0 {
            return Err(Error::Config("n_segments must be at least 1".into()));
        }
        let mut controls = Vec::with_capacity(n_curves);
        let mut profiles = Vec::with_capacity(n_curves);
        for c in 0..n_curves {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            controls.push((0..n_segments).map(|_| norm.sample_unit_ball(&mut rng)).collect());
            let mut prng = ChaCha8Rng::seed_from_u64(seed);
            prng.set_stream(PROFILE_STREAM + c as u64);
            let raw: Vec<f64> = (0..n_segments).map(|_| prng.random_range(0.05..1.0)).collect();
            let mean = raw.iter().sum::<f64>() / n_segments as f64;
            profiles.push(raw.into_iter().map(|x| x / mean).collect());
        }
        Ok(Self { seed, n_segments, controls, profiles })
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn prefix(&self, m: usize) -> Self {
        Self {
            seed: self.seed,
            n_segments: self.n_segments,
            controls: self.controls[..m.min(self.len())].to_vec(),
            profiles: self.profiles[..m.min(self.len())].to_vec(),
        }
    }

    /// Control trace of curve `c` at budget `r` for a norm with the given scale.
    pub fn segments(&self, c: usize, r: f64, scale: f64, filtration: Filtration) -> Vec<Segment> {
        let s = self.n_segments;
        let factor = r / scale;
        (0..s)
            .map(|k| {
                let w = match filtration {
                    Filtration::SpeedBounded => factor,
                    Filtration::LengthFiltered => factor * self.profiles[c][k],
                };
                Segment {
                    t0: k as f64 / s as f64,
                    t1: (k + 1) as f64 / s as f64,
                    u: self.controls[c][k].iter().map(|x| x * w).collect(),
                }
            })
            .collect()
    }
}

/// The finite sample of `A_r(x)`: the constant curve, then one curve per library entry.
#[derive(Clone, Debug)]
pub struct CurveBundle {
    pub base_index: usize,
    pub radius: f64,
    pub curves: Vec<Curve>,
    pub library_seed: u64,
    pub filtration: Filtration,
}

impl CurveBundle {
    /// Number of library curves (the constant curve excluded).
    pub fn n_library(&self) -> usize {
        self.curves.len().saturating_sub(1)
    }

    pub fn truncated(&self, m: usize) -> Self {
        let mut b = self.clone();
        b.curves.truncate(m + 1);
        b
    }
}

/// Integrates the controls of `segments` from `x`.
pub fn integrate_curve(
    system: &AnchoredSystem,
    x: &[f64],
    segments: Vec<Segment>,
    opts: &SamplingOptions,
    point: usize,
) -> Result<Curve> {
    let times = time_grid(opts.intervals);
    let v = |y: &[f64], u: &[f64], out: &mut [f64]| system.velocity(y, u, out);
    let points = integrate_piecewise(&v, x, &segments, &times, opts.dt, point)?;
    Ok(Curve { points, segments: Some(segments), speed_bound: None })
}

/// Bundle at `x` for budget `r` from a shared library.
pub fn bundle_from_library(
    system: &AnchoredSystem,
    x: &[f64],
    base_index: usize,
    r: f64,
    library: &ControlLibrary,
    filtration: Filtration,
    opts: &SamplingOptions,
) -> Result<CurveBundle> {
    if !(r >= 0.0) {
        return Err(Error::NegativeRadius(r));
    }
    let mut curves = vec![Curve::constant(x, opts.intervals)];
    if r > 0.0 {
        for c in 0..library.len() {
            let segs = library.segments(c, r, system.norm.scale, filtration);
            let mut curve = integrate_curve(system, x, segs, opts, base_index)?;
            curve.speed_bound = Some(r);
            curves.push(curve);
        }
    }
    Ok(CurveBundle { base_index, radius: r, curves, library_seed: library.seed, filtration })
}

/// `n_curves` speed-bounded trajectories from `x` plus the constant curve.
#[allow(clippy::too_many_arguments)]
pub fn sample_bounded_curves(
    system: &AnchoredSystem,
    x: &[f64],
    base_index: usize,
    r: f64,
    n_curves: usize,
    n_segments: usize,
    seed: u64,
    opts: &SamplingOptions,
) -> Result<CurveBundle> {
    if !(r >= 0.0) {
        return Err(Error::NegativeRadius(r));
    }
    let library = ControlLibrary::generate(&system.norm, n_curves, n_segments, seed)?;
    bundle_from_library(system, x, base_index, r, &library, Filtration::SpeedBounded, opts)
}

/// Bundles for every point of `space` and every radius: `out[level][point]`.
pub fn bundle_grid(
    system: &AnchoredSystem,
    space: &FiniteMetricSpace,
    r_grid: &[f64],
    library: &ControlLibrary,
    filtration: Filtration,
    opts: &SamplingOptions,
) -> Result<Vec<Vec<CurveBundle>>> {
    let pts = space.points().ok_or_else(|| Error::Shape("curve sampling needs coordinates".into()))?;
    let per_point: Vec<Vec<CurveBundle>> = pts
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            r_grid
                .iter()
                .map(|&r| bundle_from_library(system, x, i, r, library, filtration, opts))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..r_grid.len())
        .map(|k| per_point.iter().map(|b| b[k].clone()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DMatrix;

    use super::*;
    use crate::curves::curve::curve_length;
    use crate::curves::system::AnchorFn;
    use crate::manifold::ManifoldModel;
    use crate::metric::BaseMetric;

    fn circle() -> AnchoredSystem {
        let anchor: Arc<AnchorFn> = Arc::new(|_x, u, out| out[0] = u[0]);
        AnchoredSystem::new(ManifoldModel::torus(1), 1, anchor, ControlNorm::euclidean(1), "circle").unwrap()
    }

    /// `X = d/dx`, `Y = d/dy + x d/dz` on a chart.
    fn heisenberg_chart() -> AnchoredSystem {
        let anchor: Arc<AnchorFn> = Arc::new(|x, u, out| {
            out[0] = u[0];
            out[1] = u[1];
            out[2] = x[0] * u[1];
        });
        AnchoredSystem::new(ManifoldModel::Chart { dim: 3 }, 2, anchor, ControlNorm::euclidean(2), "heis").unwrap()
    }

    #[test]
    fn zero_radius_gives_constant_curve_only() {
        let b = sample_bounded_curves(&circle(), &[0.25], 0, 0.0, 16, 8, 1, &SamplingOptions::default()).unwrap();
        assert_eq!(b.curves.len(), 1);
        assert!(b.curves[0].is_constant());
        assert!(matches!(
            sample_bounded_curves(&circle(), &[0.25], 0, -1.0, 16, 8, 1, &SamplingOptions::default()),
            Err(Error::NegativeRadius(_))
        ));
    }

    #[test]
    fn constant_control_on_circle() {
        let sys = circle();
        let r = 0.7;
        let segs = vec![Segment { t0: 0.0, t1: 1.0, u: vec![r] }];
        let c = integrate_curve(&sys, &[0.9], segs, &SamplingOptions::default(), 0).unwrap();
        let d = BaseMetric::Torus { circumference: 1.0 }.distance(&[0.9], c.end());
        // Arc distance of 0.7 on the unit-circumference circle is 0.3.
        assert!((d - 0.3).abs() < 1e-9);
        assert!((c.end()[0] - 1.6).abs() < 1e-9);
    }

    #[test]
    fn square_loop_holonomy_matches_area() {
        let sys = heisenberg_chart();
        let a = 0.3;
        // four legs of duration 1/4 each: +X, +Y, -X, -Y with side a.
        let s = 4.0 * a;
        let legs = [[s, 0.0], [0.0, s], [-s, 0.0], [0.0, -s]];
        let segs = legs
            .iter()
            .enumerate()
            .map(|(i, u)| Segment { t0: i as f64 / 4.0, t1: (i + 1) as f64 / 4.0, u: u.to_vec() })
            .collect();
        let x0 = [0.1, 0.0, 0.0];
        let c = integrate_curve(&sys, &x0, segs, &SamplingOptions::default(), 0).unwrap();
        // z gains x dy: (x0 + a) a on the +Y leg, minus x0 a on the -Y leg.
        let end = c.end();
        assert!((end[0] - 0.1).abs() < 1e-12 && end[1].abs() < 1e-12);
        assert!((end[2] - a * a).abs() < 1e-3, "{}", end[2]);
    }

    #[test]
    fn speed_bound_and_nesting() {
        let q = ControlNorm::quadratic(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]), "q").unwrap();
        let sys = heisenberg_chart().with_norm(q).unwrap();
        let lib = ControlLibrary::generate(&sys.norm, 12, 8, 7).unwrap();
        for r in [0.5, 1.5] {
            let b = bundle_from_library(&sys, &[0.2, 0.3, 0.4], 0, r, &lib, Filtration::SpeedBounded, &SamplingOptions::default())
                .unwrap();
            for c in &b.curves {
                assert!(curve_length(c, &sys).unwrap() <= r + 1e-12);
            }
        }
        let small = ControlLibrary::generate(&sys.norm, 5, 8, 7).unwrap();
        assert_eq!(small.controls[..], lib.controls[..5]);
    }

    #[test]
    fn length_filtration_respects_length_not_speed() {
        let sys = heisenberg_chart();
        let lib = ControlLibrary::generate(&sys.norm, 16, 8, 3).unwrap();
        let b = bundle_from_library(&sys, &[0.0; 3], 0, 1.0, &lib, Filtration::LengthFiltered, &SamplingOptions::default())
            .unwrap();
        let mut fastest = 0.0f64;
        for c in &b.curves {
            assert!(curve_length(c, &sys).unwrap() <= 1.0 + 1e-12);
            for s in c.segments.as_ref().unwrap() {
                fastest = fastest.max(sys.norm.eval(&s.u));
            }
        }
        assert!(fastest > 1.0);
    }
}
