//! Fixed-step classical Runge-Kutta integration.

use crate::error::{Error, Result};

/// Coordinates beyond this magnitude are treated as a blow-up.
pub const BLOW_UP_BOUND: f64 = 1e8;

/// Scratch buffers for one RK4 integration.
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// One step of size `h` of `x' = f(x)` in place.
    pub fn step<F>(&mut self, f: &F, x: &mut [f64], h: f64)
    where
        F: Fn(&[f64], &mut [f64]) + ?Sized,
    {
        let n = x.len();
        f(x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        f(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        f(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        f(&self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }

    /// Integrates over `[0, duration]` with steps of at most `max_step`.
    pub fn advance<F>(&mut self, f: &F, x: &mut [f64], duration: f64, max_step: f64)
    where
        F: Fn(&[f64], &mut [f64]) + ?Sized,
    {
        if duration <= 0.0 {
            return;
        }
        let steps = (duration / max_step - 1e-9).ceil().max(1.0) as usize;
        let h = duration / steps as f64;
        for _ in 0..steps {
            self.step(f, x, h);
        }
    }
}

fn check_finite(x: &[f64], point: usize, time: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite() && v.abs() < BLOW_UP_BOUND) {
        Ok(())
    } else {
        Err(Error::BlowUp { point, time })
    }
}

/// Trajectory of `x' = f(x)` sampled at every step `k * dt`, `k = 0..=steps`.
/// Returned flat, `(steps + 1) * dim` values.
pub fn trajectory<F>(f: &F, x0: &[f64], dt: f64, steps: usize, point: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]) + ?Sized,
{
    let dim = x0.len();
    let mut out = Vec::with_capacity((steps + 1) * dim);
    let mut x = x0.to_vec();
    let mut rk = Rk4::new(dim);
    out.extend_from_slice(&x);
    for k in 0..steps {
        rk.step(f, &mut x, dt);
        check_finite(&x, point, (k + 1) as f64 * dt)?;
        out.extend_from_slice(&x);
    }
    Ok(out)
}

/// A piece of a piecewise-constant control on `[t0, t1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub u: Vec<f64>,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }
}

/// Integrates a control system `x' = v(x, u(t))` with piecewise-constant `u`
/// and returns the state at each of the `samples` (ascending) times. Steps
/// never cross a segment breakpoint or a sample time and are at most `max_step`.
pub fn integrate_piecewise<V>(
    velocity: &V,
    x0: &[f64],
    segments: &[Segment],
    samples: &[f64],
    max_step: f64,
    point: usize,
) -> Result<Vec<Vec<f64>>>
where
    V: Fn(&[f64], &[f64], &mut [f64]) + ?Sized,
{
    let dim = x0.len();
    let mut rk = Rk4::new(dim);
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(samples.len());
    let mut t = samples.first().copied().unwrap_or(0.0).min(0.0);
    let mut seg = 0usize;
    for &target in samples {
        while t < target - 1e-15 {
            while seg < segments.len() && segments[seg].t1 <= t + 1e-15 {
                seg += 1;
            }
            let (end, u) = match segments.get(seg) {
                Some(s) if s.t0 <= t + 1e-15 => (s.t1.min(target), Some(&s.u)),
                Some(s) => (s.t0.min(target), None),
                None => (target, None),
            };
            if let Some(u) = u {
                let f = |y: &[f64], out: &mut [f64]| velocity(y, u, out);
                rk.advance(&f, &mut x, end - t, max_step);
                check_finite(&x, point, end)?;
            }
            t = end;
        }
        out.push(x.clone());
    }
    Ok(out)
}
