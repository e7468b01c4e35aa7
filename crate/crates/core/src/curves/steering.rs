//! Steering between two points with piecewise-constant controls.
//!
//! Gauss-Newton on the endpoint map (least-norm steps through a pseudoinverse)
//! finds a control joining the points; a projected-gradient phase then lowers
//! the control energy along the constraint set. The result is an upper bound
//! on the admissible distance, realised by an explicit curve.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::system::{pinv_and_kernel, AnchoredSystem};
use crate::metric::FiniteMetricSpace;
use crate::ode::{integrate_piecewise, Segment};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteeringOptions {
    pub n_segments: usize,
    pub max_iter: usize,
    /// Accepted endpoint error.
    pub tol: f64,
    pub energy_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Samples of the recorded connector, minus one.
    pub record_intervals: usize,
    pub dt: f64,
}

impl Default for SteeringOptions {
    fn default() -> Self {
        Self {
            n_segments: 4,
            max_iter: 40,
            tol: 1e-6,
            energy_iters: 12,
            restarts: 2,
            seed: 0,
            record_intervals: 128,
            dt: 1.0 / 32.0,
        }
    }
}

/// A curve from `points[0]` to (within `residual`) the target, sampled at
/// constant speed. `length` includes the norm scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Connector {
    pub length: f64,
    pub points: Vec<Vec<f64>>,
    pub residual: f64,
}

impl Connector {
    /// The same curve run backwards (admissible for symmetric controls).
    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self { length: self.length, points, residual: self.residual }
    }

    /// Linear interpolation at arc-length fraction `s` in `[0, 1]`.
    pub fn at_into(&self, s: f64, out: &mut [f64]) {
        let n = self.points.len() - 1;
        let x = s.clamp(0.0, 1.0) * n as f64;
        let i = (x.floor() as usize).min(n - 1);
        let w = x - i as f64;
        let a = &self.points[i];
        let b = &self.points[i + 1];
        for k in 0..out.len() {
            out[k] = a[k] + w * (b[k] - a[k]);
        }
    }
}

struct Problem<'a> {
    system: &'a AnchoredSystem,
    from: &'a [f64],
    to: &'a [f64],
    s: usize,
    k: usize,
    dt: f64,
}

impl Problem<'_> {
    fn segments(&self, p: &[f64]) -> Vec<Segment> {
        (0..self.s)
            .map(|i| Segment {
                t0: i as f64 / self.s as f64,
                t1: (i + 1) as f64 / self.s as f64,
                u: p[i * self.k..(i + 1) * self.k].to_vec(),
            })
            .collect()
    }

    fn endpoint(&self, p: &[f64]) -> Option<Vec<f64>> {
        let v = |y: &[f64], u: &[f64], out: &mut [f64]| self.system.velocity(y, u, out);
        integrate_piecewise(&v, self.from, &self.segments(p), &[1.0], self.dt, 0)
            .ok()
            .map(|mut e| e.pop().unwrap())
    }

    fn residual(&self, p: &[f64]) -> Option<DVector<f64>> {
        let e = self.endpoint(p)?;
        Some(DVector::from_vec(self.system.manifold.displacement(self.to, &e)))
    }

    fn jacobian(&self, p: &[f64], base: &[f64]) -> Option<DMatrix<f64>> {
        let d = base.len();
        let n = p.len();
        let h = 1e-6;
        let mut j = DMatrix::zeros(d, n);
        let mut q = p.to_vec();
        for c in 0..n {
            q[c] = p[c] + h;
            let e = self.endpoint(&q)?;
            q[c] = p[c];
            for r in 0..d {
                j[(r, c)] = (e[r] - base[r]) / h;
            }
        }
        Some(j)
    }

    fn energy(&self, p: &[f64]) -> f64 {
        p.chunks(self.k).map(|u| self.system.norm.base_eval(u).powi(2)).sum()
    }

    fn base_length(&self, p: &[f64]) -> f64 {
        p.chunks(self.k).map(|u| self.system.norm.base_eval(u)).sum::<f64>() / self.s as f64
    }

    /// Gauss-Newton on the endpoint residual.
    fn solve(&self, mut p: Vec<f64>, iters: usize, tol: f64) -> Option<(Vec<f64>, f64)> {
        let mut r = self.residual(&p)?;
        for _ in 0..iters {
            if r.norm() <= tol {
                break;
            }
            let e = self.endpoint(&p)?;
            let j = self.jacobian(&p, &e)?;
            let (pinv, _) = pinv_and_kernel(&j, 1e-10);
            let step = -(pinv * &r);
            let mut alpha = 1.0;
            let mut improved = false;
            while alpha > 1e-4 {
                let q: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + alpha * b).collect();
                if let Some(rq) = self.residual(&q) {
                    if rq.norm() < r.norm() {
                        p = q;
                        r = rq;
                        improved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        let res = r.norm();
        Some((p, res))
    }

    fn energy_gradient(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            p.len(),
            p.chunks(self.k).flat_map(|u| self.system.norm.base_energy_gradient(u)),
        )
    }

    /// Projected gradient descent on the energy, re-projected onto the
    /// constraint by Gauss-Newton after every step.
    fn reduce_energy(&self, mut p: Vec<f64>, tol: f64, iters: usize) -> Vec<f64> {
        let mut en = self.energy(&p);
        let mut alpha = 0.1;
        for _ in 0..iters {
            let Some(e) = self.endpoint(&p) else { break };
            let Some(j) = self.jacobian(&p, &e) else { break };
            let (pinv, _) = pinv_and_kernel(&j, 1e-10);
            let g = self.energy_gradient(&p);
            let gn = &g - &pinv * (&j * &g);
            let gnorm = gn.norm();
            if gnorm < 1e-10 {
                break;
            }
            let scale = p.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
            let mut accepted = false;
            for _ in 0..6 {
                let q: Vec<f64> = p.iter().zip(gn.iter()).map(|(a, b)| a - alpha * scale * b / gnorm).collect();
                if let Some((q, res)) = self.solve(q, 6, tol * 0.1) {
                    let eq = self.energy(&q);
                    if res <= tol && eq < en {
                        p = q;
                        en = eq;
                        alpha = (alpha * 1.5).min(0.5);
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.4;
            }
            if !accepted {
                break;
            }
        }
        p
    }
}

/// Connector from `from` to `to`, or `None` when steering fails.
pub fn steer(
    system: &AnchoredSystem,
    from: &[f64],
    to: &[f64],
    opts: &SteeringOptions,
    stream: u64,
) -> Option<Connector> {
    let s = opts.n_segments.max(1);
    let k = system.control_dim;
    let prob = Problem { system, from, to, s, k, dt: opts.dt };
    let disp = DVector::from_vec(system.manifold.displacement(from, to));
    if disp.norm() == 0.0 {
        return Some(Connector { length: 0.0, points: vec![from.to_vec(); opts.record_intervals + 1], residual: 0.0 });
    }
    // Straight-line guess: least-norm constant control along the displacement.
    let b = system.anchor_matrix(from);
    let (pinv, _) = pinv_and_kernel(&b, 1e-10);
    let u0 = pinv * &disp;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let spread = 0.3 * disp.norm().max(0.1);
    let mut best: Option<Vec<f64>> = None;
    for _ in 0..opts.restarts.max(1) {
        let p0: Vec<f64> = (0..s)
            .flat_map(|_| u0.iter().copied().collect::<Vec<_>>())
            .map(|x| x + spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        let Some((p, res)) = prob.solve(p0, opts.max_iter, opts.tol * 0.1) else { continue };
        if res > opts.tol {
            continue;
        }
        let p = prob.reduce_energy(p, opts.tol, opts.energy_iters);
        let better = match &best {
            None => true,
            Some(q) => prob.base_length(&p) < prob.base_length(q),
        };
        if better {
            best = Some(p);
        }
    }
    let p = best?;
    let res = prob.residual(&p)?.norm();
    if res > opts.tol {
        return None;
    }
    let base_len = prob.base_length(&p);
    if !(base_len > 0.0) {
        return None;
    }
    // Constant-speed reparametrisation of the piecewise-constant control.
    let mut t = 0.0;
    let mut segs = Vec::with_capacity(s);
    for (i, u) in p.chunks(k).enumerate() {
        let len = system.norm.base_eval(u) / s as f64;
        if len <= 0.0 {
            continue;
        }
        let dur = len / base_len;
        let factor = (1.0 / s as f64) / dur;
        let t1 = if i + 1 == s { 1.0 } else { t + dur };
        segs.push(Segment { t0: t, t1, u: u.iter().map(|x| x * factor).collect() });
        t += dur;
    }
    if let Some(last) = segs.last_mut() {
        last.t1 = 1.0;
    }
    let times: Vec<f64> = (0..=opts.record_intervals).map(|i| i as f64 / opts.record_intervals as f64).collect();
    let v = |y: &[f64], u: &[f64], out: &mut [f64]| system.velocity(y, u, out);
    let mut points = integrate_piecewise(&v, from, &segs, &times, opts.dt / 4.0, 0).ok()?;
    let last = points.last_mut()?;
    let gap = system.manifold.displacement(last, to);
    let residual = DVector::from_vec(gap.clone()).norm();
    if residual > opts.tol {
        return None;
    }
    // Snap the endpoint onto the lift of `to`.
    last.iter_mut().zip(&gap).for_each(|(p, g)| *p += g);
    Some(Connector { length: system.norm.scale * base_len, points, residual })
}

/// Connectors between sample points: `get(from, to)`.
#[derive(Clone, Debug)]
pub struct ConnectorTable {
    pub n: usize,
    entries: Vec<Option<Connector>>,
}

impl ConnectorTable {
    /// Steers each unordered pair `i < j` that `link(i, j)` allows and stores
    /// the reverse curve for `j -> i`.
    pub fn build<L>(system: &AnchoredSystem, space: &FiniteMetricSpace, opts: &SteeringOptions, link: L) -> Self
    where
        L: Fn(usize, usize) -> bool + Sync,
    {
        let pts = space.points().expect("steering needs coordinates");
        let n = pts.len();
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).filter(|&(i, j)| link(i, j)).collect();
        let solved: Vec<Option<Connector>> = pairs
            .par_iter()
            .map(|&(i, j)| steer(system, &pts[i], &pts[j], opts, (i * n + j) as u64))
            .collect();
        let mut entries = vec![None; n * n];
        for (&(i, j), c) in pairs.iter().zip(solved) {
            if let Some(c) = c {
                entries[j * n + i] = Some(c.reversed());
                entries[i * n + j] = Some(c);
            }
        }
        for i in 0..n {
            entries[i * n + i] = Some(Connector {
                length: 0.0,
                points: vec![pts[i].clone(); opts.record_intervals + 1],
                residual: 0.0,
            });
        }
        Self { n, entries }
    }

    pub fn get(&self, from: usize, to: usize) -> Option<&Connector> {
        self.entries[from * self.n + to].as_ref()
    }

    /// Fraction of off-diagonal ordered pairs with a connector.
    pub fn coverage(&self) -> f64 {
        if self.n < 2 {
            return 1.0;
        }
        let found = (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.get(i, j).is_some())
            .count();
        found as f64 / (self.n * (self.n - 1)) as f64
    }

    /// `(i, j, length)` for every connector with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| ((i + 1)..self.n).map(move |j| (i, j)))
            .filter_map(|(i, j)| self.get(i, j).map(|c| (i, j, c.length)))
            .collect()
    }

    /// `(L(x -> y) + L(y -> x)) / 2`, when both exist.
    pub fn mean_length(&self, x: usize, y: usize) -> Option<f64> {
        Some(0.5 * (self.get(x, y)?.length + self.get(y, x)?.length))
    }
}
