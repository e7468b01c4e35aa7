//! Time-discretised curves on `[0, 1]` and the operations admissible curve
//! families must be closed under.

use std::path::Path;

use super::system::{quotient_norm, AnchoredSystem};
use crate::error::{Error, Result};
use crate::metric::{format_f64, BaseMetric};
use crate::ode::Segment;

/// Default number of grid intervals on `[0, 1]` (65 samples).
pub const DEFAULT_TIME_INTERVALS: usize = 64;

/// Endpoint and base-point snapping tolerance.
pub const SNAP_TOL: f64 = 1e-6;

/// A curve sampled on the uniform grid `i / T`, `i = 0..=T`. Coordinates are
/// lifted (not reduced modulo any lattice). `segments` is the control trace
/// when the curve was produced by integrating piecewise-constant controls.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub points: Vec<Vec<f64>>,
    pub segments: Option<Vec<Segment>>,
    pub speed_bound: Option<f64>,
}

pub fn time_grid(intervals: usize) -> Vec<f64> {
    (0..=intervals).map(|i| i as f64 / intervals as f64).collect()
}

impl Curve {
    pub fn constant(x: &[f64], intervals: usize) -> Self {
        Self {
            points: vec![x.to_vec(); intervals + 1],
            segments: Some(Vec::new()),
            speed_bound: Some(0.0),
        }
    }

    pub fn intervals(&self) -> usize {
        self.points.len() - 1
    }

    pub fn times(&self) -> Vec<f64> {
        time_grid(self.intervals())
    }

    pub fn start(&self) -> &[f64] {
        &self.points[0]
    }

    pub fn end(&self) -> &[f64] {
        self.points.last().expect("curve has samples")
    }

    pub fn is_constant(&self) -> bool {
        self.points.iter().all(|p| p == &self.points[0])
    }

    /// Piecewise-linear interpolation at `t` in `[0, 1]`.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.points[0].len()];
        self.at_into(t, &mut out);
        out
    }

    pub fn at_into(&self, t: f64, out: &mut [f64]) {
        let n = self.intervals();
        let s = (t.clamp(0.0, 1.0) * n as f64).min(n as f64);
        let i = (s.floor() as usize).min(n.saturating_sub(1));
        let w = s - i as f64;
        let a = &self.points[i];
        let b = &self.points[(i + 1).min(n)];
        for k in 0..out.len() {
            out[k] = a[k] + w * (b[k] - a[k]);
        }
    }

    fn translated(&self, shift: &[f64]) -> Self {
        let mut c = self.clone();
        for p in c.points.iter_mut() {
            for (x, s) in p.iter_mut().zip(shift) {
                *x += s;
            }
        }
        c
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.points[0].len();
        let k = self
            .segments
            .as_ref()
            .and_then(|s| s.first().map(|s| s.u.len()))
            .unwrap_or(0);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend((1..=k).map(|i| format!("u{i}")));
        w.write_record(&header)?;
        for (t, p) in self.times().iter().zip(&self.points) {
            let mut row = vec![format_f64(*t)];
            row.extend(p.iter().map(|v| format_f64(*v)));
            if k > 0 {
                let u = self.control_at(*t).unwrap_or_else(|| vec![0.0; k]);
                row.extend(u.iter().map(|v| format_f64(*v)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Control active at `t` (right-continuous; the last segment is closed).
    pub fn control_at(&self, t: f64) -> Option<Vec<f64>> {
        let segs = self.segments.as_ref()?;
        segs.iter()
            .find(|s| s.t0 <= t && (t < s.t1 || (t == s.t1 && s.t1 >= 1.0)))
            .map(|s| s.u.clone())
    }
}

/// `l(c) = int_0^1 F(u(t)) dt`. Exact on the control trace if present,
/// otherwise finite-difference velocities resolved through the quotient norm.
pub fn curve_length(curve: &Curve, system: &AnchoredSystem) -> Result<f64> {
    if let Some(segs) = &curve.segments {
        return Ok(segs.iter().map(|s| system.norm.eval(&s.u) * s.duration()).sum());
    }
    Ok(cumulative_fd_length(curve, system)?.last().copied().unwrap_or(0.0))
}

/// Length of `curve` restricted to `[0, t_i]` at every grid time.
pub fn cumulative_length(curve: &Curve, system: &AnchoredSystem) -> Result<Vec<f64>> {
    match &curve.segments {
        Some(segs) => {
            let times = curve.times();
            Ok(times
                .iter()
                .map(|&t| {
                    segs.iter()
                        .map(|s| system.norm.eval(&s.u) * (t.min(s.t1) - s.t0).max(0.0))
                        .sum()
                })
                .collect())
        }
        None => cumulative_fd_length(curve, system),
    }
}

fn cumulative_fd_length(curve: &Curve, system: &AnchoredSystem) -> Result<Vec<f64>> {
    let n = curve.intervals();
    let dt = 1.0 / n as f64;
    let mut acc = vec![0.0; n + 1];
    for i in 0..n {
        let a = &curve.points[i];
        let b = &curve.points[i + 1];
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let v: Vec<f64> = a.iter().zip(b).map(|(x, y)| (y - x) / dt).collect();
        let f = quotient_norm(system, &mid, &v).map_err(|e| match e {
            Error::NotInRange(_) => Error::UnresolvableVelocity(i),
            other => other,
        })?;
        acc[i + 1] = acc[i] + f * dt;
    }
    Ok(acc)
}

/// Reparametrisation at constant speed `l(c)` over `[0, 1]`.
pub fn arc_length_reparametrize(curve: &Curve, system: &AnchoredSystem) -> Result<Curve> {
    let cum = cumulative_length(curve, system)?;
    let total = *cum.last().unwrap();
    if !(total > 1e-14) {
        return Err(Error::ZeroLength);
    }
    let n = curve.intervals();
    let dt = 1.0 / n as f64;
    let mut points = Vec::with_capacity(n + 1);
    let mut j = 0usize;
    for i in 0..=n {
        let target = total * i as f64 / n as f64;
        while j + 1 < n && cum[j + 1] < target {
            j += 1;
        }
        let span = cum[j + 1] - cum[j];
        let w = if span > 0.0 { ((target - cum[j]) / span).clamp(0.0, 1.0) } else { 0.0 };
        points.push(curve.at((j as f64 + w) * dt));
    }
    points[n] = curve.end().to_vec();
    let segments = curve.segments.as_ref().map(|segs| {
        let mut t = 0.0;
        segs.iter()
            .filter_map(|s| {
                let f = system.norm.eval(&s.u);
                let len = f * s.duration();
                if len <= 0.0 {
                    return None;
                }
                let dur = len / total;
                let factor = s.duration() / dur;
                let seg = Segment { t0: t, t1: t + dur, u: s.u.iter().map(|x| x * factor).collect() };
                t += dur;
                Some(seg)
            })
            .collect()
    });
    Ok(Curve { points, segments, speed_bound: Some(total) })
}

/// `a` on `[0, 1/2]` followed by `b` on `[1/2, 1]`, on the grid of `a`.
pub fn concatenate(a: &Curve, b: &Curve, metric: &BaseMetric) -> Result<Curve> {
    let gap = metric.distance(a.end(), b.start());
    if gap > SNAP_TOL {
        return Err(Error::EndpointMismatch(gap));
    }
    // Keep lifted coordinates continuous.
    let shift: Vec<f64> = match metric {
        BaseMetric::Torus { .. } => a.end().iter().zip(b.start()).map(|(x, y)| x - y).collect(),
        _ => vec![0.0; a.end().len()],
    };
    let b = b.translated(&shift);
    let n = a.intervals();
    let points = (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            if 2 * i <= n {
                a.at(2.0 * t)
            } else {
                b.at(2.0 * t - 1.0)
            }
        })
        .collect();
    let segments = match (&a.segments, &b.segments) {
        (Some(sa), Some(sb)) => {
            let first = sa.iter().map(|s| Segment {
                t0: s.t0 / 2.0,
                t1: s.t1 / 2.0,
                u: s.u.iter().map(|x| 2.0 * x).collect(),
            });
            let second = sb.iter().map(|s| Segment {
                t0: 0.5 + s.t0 / 2.0,
                t1: 0.5 + s.t1 / 2.0,
                u: s.u.iter().map(|x| 2.0 * x).collect(),
            });
            Some(first.chain(second).collect())
        }
        _ => None,
    };
    let speed_bound = match (a.speed_bound, b.speed_bound) {
        (Some(x), Some(y)) => Some(2.0 * x.max(y)),
        _ => None,
    };
    Ok(Curve { points, segments, speed_bound })
}

/// `c` restricted to `[t0, t1]` and reparametrised onto `[0, 1]`.
pub fn restrict_subcurve(c: &Curve, t0: f64, t1: f64) -> Result<Curve> {
    if !(0.0 <= t0 && t0 < t1 && t1 <= 1.0) {
        return Err(Error::BadInterval(t0, t1));
    }
    let n = c.intervals();
    let span = t1 - t0;
    let points = (0..=n).map(|i| c.at(t0 + span * i as f64 / n as f64)).collect();
    let segments = c.segments.as_ref().map(|segs| {
        segs.iter()
            .filter_map(|s| {
                let a = s.t0.max(t0);
                let b = s.t1.min(t1);
                (b > a).then(|| Segment {
                    t0: (a - t0) / span,
                    t1: (b - t0) / span,
                    u: s.u.iter().map(|x| x * span).collect(),
                })
            })
            .collect()
    });
    Ok(Curve { points, segments, speed_bound: c.speed_bound.map(|r| r * span) })
}
