//! Finite metric spaces and their covering / packing numbers.
//!
//! A [`FiniteMetricSpace`] is a labelled point sample with a distance that is
//! either stored densely, computed from coordinates by a [`BaseMetric`], or
//! formed as the max-product of two other spaces. All counting routines work
//! on anything implementing [`Distances`], so the same code counts balls for a
//! base space and for every level of a distance family.
//!
//! Conventions: ball membership is `d <= eps`, separation is `d > eps`.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for metric axioms.
pub const DEFAULT_TOL_METRIC: f64 = 1e-9;

/// Default number of points up to which exhaustive counts are allowed.
pub const DEFAULT_EXACT_LIMIT: usize = 12;

/// Hard cap of the bitmask-based exhaustive search.
pub const EXACT_HARD_LIMIT: usize = 64;

const PAR_THRESHOLD: usize = 2048;

/// Anything that can report pairwise distances between `len()` indexed points.
pub trait Distances: Sync {
    fn len(&self) -> usize;

    fn dist(&self, i: usize, j: usize) -> f64;

    /// Distance, allowed to stop early and return any value `>= bound` once the
    /// true distance is known to be at least `bound`.
    fn dist_bounded(&self, i: usize, j: usize, bound: f64) -> f64 {
        let _ = bound;
        self.dist(i, j)
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Coordinate metrics used by the model manifolds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseMetric {
    /// Flat chart metric.
    Euclidean,
    /// Flat quotient metric of `R^n / (c Z)^n`; in dimension one this is the arc metric.
    Torus { circumference: f64 },
    /// Great-circle metric on the sphere of the given radius (points embedded in `R^3`).
    Sphere { radius: f64 },
}

impl BaseMetric {
    #[inline]
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            BaseMetric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            BaseMetric::Torus { circumference } => a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let w = wrap_delta(x - y, circumference);
                    w * w
                })
                .sum::<f64>()
                .sqrt(),
            BaseMetric::Sphere { radius } => {
                let cross = [
                    a[1] * b[2] - a[2] * b[1],
                    a[2] * b[0] - a[0] * b[2],
                    a[0] * b[1] - a[1] * b[0],
                ];
                let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
                let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                radius * cn.atan2(dot)
            }
        }
    }

    /// Bounded variant used by orbit families: squared partial sums are compared
    /// against `bound^2` only for the Euclidean-type metrics.
    #[inline]
    pub fn distance_squared_flat(&self, a: &[f64], b: &[f64]) -> Option<f64> {
        match *self {
            BaseMetric::Euclidean => Some(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()),
            BaseMetric::Torus { circumference } => Some(
                a.iter()
                    .zip(b)
                    .map(|(x, y)| {
                        let w = wrap_delta(x - y, circumference);
                        w * w
                    })
                    .sum(),
            ),
            BaseMetric::Sphere { .. } => None,
        }
    }
}

/// Absolute value of the shortest representative of `delta` modulo `c`.
#[inline]
pub fn wrap_delta(delta: f64, c: f64) -> f64 {
    (delta - c * (delta / c).round()).abs()
}

#[derive(Clone, Debug)]
enum DistStore {
    Dense(Arc<Vec<f64>>),
    Geometric(BaseMetric),
    Product(Arc<FiniteMetricSpace>, Arc<FiniteMetricSpace>),
}

/// A sampled compact metric space.
#[derive(Clone, Debug)]
pub struct FiniteMetricSpace {
    labels: Vec<String>,
    dim: usize,
    coords: Option<Arc<Vec<f64>>>,
    store: DistStore,
}

impl FiniteMetricSpace {
    /// Dense space from a square matrix. Checks shape, finiteness and sign only;
    /// use [`validate_metric`] for the axioms.
    pub fn from_matrix(labels: Option<Vec<String>>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptySpace);
        }
        check_shape(&rows)?;
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteEntry { i, j });
                }
                if v < 0.0 {
                    return Err(Error::NegativeEntry { i, j, value: v });
                }
                flat.push(v);
            }
        }
        let labels = labels.unwrap_or_else(|| default_labels(n));
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {} points", labels.len(), n)));
        }
        Ok(Self { labels, dim: 0, coords: None, store: DistStore::Dense(Arc::new(flat)) })
    }

    /// Dense space from a flat row-major matrix (no checks beyond length).
    pub(crate) fn from_flat_unchecked(labels: Vec<String>, flat: Vec<f64>) -> Self {
        Self { labels, dim: 0, coords: None, store: DistStore::Dense(Arc::new(flat)) }
    }

    /// Space whose distances are computed on demand from coordinates.
    pub fn from_coords(points: Vec<Vec<f64>>, metric: BaseMetric) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptySpace);
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape("coordinate tuples of different lengths".into()));
        }
        let flat: Vec<f64> = points.into_iter().flatten().collect();
        Ok(Self {
            labels: default_labels(n),
            dim,
            coords: Some(Arc::new(flat)),
            store: DistStore::Geometric(metric),
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Shape(format!("{} labels for {} points", labels.len(), self.len())));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Coordinate dimension (0 when the space has no coordinates).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_coords(&self) -> bool {
        self.coords.is_some()
    }

    /// Coordinates of point `i`, if the space carries them.
    pub fn point(&self, i: usize) -> Option<&[f64]> {
        self.coords.as_ref().map(|c| &c[i * self.dim..(i + 1) * self.dim])
    }

    pub fn points(&self) -> Option<Vec<Vec<f64>>> {
        self.coords.as_ref().map(|c| c.chunks(self.dim.max(1)).map(|p| p.to_vec()).collect())
    }

    /// The coordinate metric, when distances are computed from coordinates.
    pub fn base_metric(&self) -> Option<BaseMetric> {
        match self.store {
            DistStore::Geometric(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.store, DistStore::Dense(_))
    }

    /// Full row-major distance matrix.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n).map(|i| (0..n).map(|j| self.dist(i, j)).collect()).collect()
    }

    pub fn diameter(&self) -> f64 {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| self.dist(i, j)).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max)
    }

    /// Checks the metric axioms at tolerance `tol`.
    pub fn validate(&self, tol: f64) -> ValidationReport {
        validate_distances(self, tol)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(path, &self.labels, self)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let (labels, rows) = read_matrix_csv(path)?;
        Self::from_matrix(Some(labels), rows)
    }
}

impl Distances for FiniteMetricSpace {
    fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        match &self.store {
            DistStore::Dense(m) => m[i * self.labels.len() + j],
            DistStore::Geometric(metric) => {
                let c = self.coords.as_ref().expect("geometric space has coordinates");
                let d = self.dim;
                metric.distance(&c[i * d..(i + 1) * d], &c[j * d..(j + 1) * d])
            }
            DistStore::Product(a, b) => {
                let nb = b.len();
                a.dist(i / nb, j / nb).max(b.dist(i % nb, j % nb))
            }
        }
    }
}

fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i}")).collect()
}

fn check_shape(rows: &[Vec<f64>]) -> Result<()> {
    let n = rows.len();
    for (row, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::NonSquare { rows: n, row, len: r.len() });
        }
    }
    Ok(())
}

/// One failed metric axiom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Diagonal { i: usize, value: f64 },
    Asymmetry { i: usize, j: usize, diff: f64 },
    /// `d(i,k) > d(i,j) + d(j,k) + tol`.
    Triangle { i: usize, j: usize, k: usize, excess: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Diagonal { i, value } => write!(f, "d({i},{i}) = {value} != 0"),
            Violation::Asymmetry { i, j, diff } => write!(f, "|d({i},{j}) - d({j},{i})| = {diff}"),
            Violation::Triangle { i, j, k, excess } => {
                write!(f, "triangle violated: d({i},{k}) exceeds d({i},{j}) + d({j},{k}) by {excess}")
            }
        }
    }
}

/// Result of an axiom check. At most `MAX_LISTED` violations are listed;
/// `total` counts all of them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub total: usize,
    pub worst_triangle_excess: f64,
}

const MAX_LISTED: usize = 32;

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.total == 0
    }
}

/// Validates a raw matrix: square, finite, nonnegative, then the three axioms.
pub fn validate_metric(dist: &[Vec<f64>], tol: f64) -> Result<ValidationReport> {
    check_shape(dist)?;
    for (i, row) in dist.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { i, j });
            }
            if v < 0.0 {
                return Err(Error::NegativeEntry { i, j, value: v });
            }
        }
    }
    let n = dist.len();
    let flat: Vec<f64> = dist.iter().flatten().copied().collect();
    let space = FiniteMetricSpace::from_flat_unchecked(default_labels(n), flat);
    Ok(validate_distances(&space, tol))
}

/// Axiom check against any distance oracle (O(n^3)).
pub fn validate_distances<D: Distances + ?Sized>(d: &D, tol: f64) -> ValidationReport {
    let n = d.len();
    let mut report = ValidationReport::default();
    let push = |r: &mut ValidationReport, v: Violation| {
        r.total += 1;
        if r.violations.len() < MAX_LISTED {
            r.violations.push(v);
        }
    };
    for i in 0..n {
        let v = d.dist(i, i);
        if v.abs() > tol {
            push(&mut report, Violation::Diagonal { i, value: v });
        }
        for j in (i + 1)..n {
            let diff = (d.dist(i, j) - d.dist(j, i)).abs();
            if diff > tol {
                push(&mut report, Violation::Asymmetry { i, j, diff });
            }
        }
    }
    // Triangle check in parallel over i; results merged in index order.
    let per_i: Vec<(Vec<Violation>, usize, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut found = Vec::new();
            let mut count = 0usize;
            let mut worst = 0.0f64;
            for j in 0..n {
                let dij = d.dist(i, j);
                for k in 0..n {
                    let excess = d.dist(i, k) - dij - d.dist(j, k);
                    if excess > worst {
                        worst = excess;
                    }
                    if excess > tol {
                        count += 1;
                        if found.len() < MAX_LISTED {
                            found.push(Violation::Triangle { i, j, k, excess });
                        }
                    }
                }
            }
            (found, count, worst)
        })
        .collect();
    for (found, count, worst) in per_i {
        report.worst_triangle_excess = report.worst_triangle_excess.max(worst);
        report.total += count;
        for v in found {
            if report.violations.len() < MAX_LISTED {
                report.violations.push(v);
            }
        }
    }
    report
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveEpsilon(eps))
    }
}

/// Greedy ball cover: the lowest-index uncovered point becomes a center and
/// covers everything within `eps`. Returns the number of centers.
pub fn greedy_cover_count<D: Distances + ?Sized>(d: &D, eps: f64) -> Result<usize> {
    check_eps(eps)?;
    let n = d.len();
    if n == 0 {
        return Err(Error::EmptySpace);
    }
    let mut covered = vec![false; n];
    let mut centers = 0;
    for c in 0..n {
        if covered[c] {
            continue;
        }
        centers += 1;
        let mark = |j: usize, flag: &mut bool| {
            if !*flag && d.dist_bounded(c, j, eps * (1.0 + 1e-12) + f64::MIN_POSITIVE) <= eps {
                *flag = true;
            }
        };
        if n >= PAR_THRESHOLD {
            covered.par_iter_mut().enumerate().for_each(|(j, f)| mark(j, f));
        } else {
            covered.iter_mut().enumerate().for_each(|(j, f)| mark(j, f));
        }
    }
    Ok(centers)
}

/// Farthest-point greedy packing. Starts from point 0 and keeps adding the
/// point farthest from the chosen set (lowest index on ties) while that
/// distance exceeds `eps`. The result is a maximal `eps`-separated set.
pub fn greedy_packing<D: Distances + ?Sized>(d: &D, eps: f64) -> Result<Vec<usize>> {
    greedy_packing_capped(d, eps, usize::MAX)
}

/// [`greedy_packing`] that stops once `cap` points are chosen.
pub fn greedy_packing_capped<D: Distances + ?Sized>(d: &D, eps: f64, cap: usize) -> Result<Vec<usize>> {
    check_eps(eps)?;
    let n = d.len();
    if n == 0 {
        return Err(Error::EmptySpace);
    }
    let mut chosen = vec![0usize];
    // Points within eps of the chosen set can never be picked, so only the
    // rest (in index order) carry their distance to the set.
    let first: Vec<(usize, f64)> = if n >= PAR_THRESHOLD {
        (1..n).into_par_iter().map(|j| (j, d.dist(0, j))).collect()
    } else {
        (1..n).map(|j| (j, d.dist(0, j))).collect()
    };
    let mut active: Vec<(usize, f64)> = first.into_iter().filter(|&(_, m)| m > eps).collect();
    while chosen.len() < cap && !active.is_empty() {
        let best = argmax_lowest(&active);
        let best_j = active[best].0;
        chosen.push(best_j);
        active.swap_remove(best);
        let update = |(j, m): &mut (usize, f64)| {
            let v = d.dist_bounded(best_j, *j, *m);
            if v < *m {
                *m = v;
            }
        };
        if active.len() >= PAR_THRESHOLD {
            active.par_iter_mut().for_each(update);
        } else {
            active.iter_mut().for_each(update);
        }
        active.retain(|&(_, m)| m > eps);
    }
    Ok(chosen)
}

pub fn greedy_packing_count<D: Distances + ?Sized>(d: &D, eps: f64) -> Result<usize> {
    greedy_packing(d, eps).map(|s| s.len())
}

fn argmax_lowest(v: &[(usize, f64)]) -> usize {
    let pick = |a: (usize, usize, f64), b: (usize, usize, f64)| {
        if b.2 > a.2 || (b.2 == a.2 && b.1 < a.1) {
            b
        } else {
            a
        }
    };
    let start = (usize::MAX, usize::MAX, f64::NEG_INFINITY);
    let best = if v.len() >= PAR_THRESHOLD {
        v.par_iter().enumerate().map(|(p, &(i, x))| (p, i, x)).reduce(|| start, pick)
    } else {
        v.iter().enumerate().map(|(p, &(i, x))| (p, i, x)).fold(start, pick)
    };
    best.0
}

/// Exact minimum cover and maximum packing by exhaustive branch and bound.
/// Centers are restricted to sample points.
pub fn exact_counts<D: Distances + ?Sized>(d: &D, eps: f64, size_limit: usize) -> Result<(usize, usize)> {
    check_eps(eps)?;
    let n = d.len();
    if n == 0 {
        return Err(Error::EmptySpace);
    }
    let limit = size_limit.min(EXACT_HARD_LIMIT);
    if n > limit {
        return Err(Error::TooLarge { n, limit });
    }
    let mut balls = vec![0u64; n];
    for i in 0..n {
        for j in 0..n {
            if d.dist(i, j) <= eps {
                balls[i] |= 1 << j;
            }
        }
        balls[i] |= 1 << i;
    }
    Ok((exact_min_cover(&balls, n), exact_max_packing(&balls, n, d, eps)))
}

fn exact_min_cover(balls: &[u64], n: usize) -> usize {
    let full: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let max_ball = balls.iter().map(|b| b.count_ones()).max().unwrap_or(1) as usize;
    // Upper bound from the greedy lowest-index cover.
    let mut best = {
        let mut covered = 0u64;
        let mut c = 0;
        for i in 0..n {
            if covered & (1 << i) == 0 {
                covered |= balls[i];
                c += 1;
            }
        }
        c
    };
    fn rec(covered: u64, depth: usize, best: &mut usize, balls: &[u64], full: u64, max_ball: usize) {
        if covered == full {
            *best = (*best).min(depth);
            return;
        }
        let uncovered = (full & !covered).count_ones() as usize;
        let lower = uncovered.div_ceil(max_ball);
        if depth + lower >= *best {
            return;
        }
        // Branch on the uncovered point with the fewest candidate centers.
        let mut pick = usize::MAX;
        let mut pick_count = u32::MAX;
        let mut rest = full & !covered;
        while rest != 0 {
            let p = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let c = balls[p].count_ones();
            if c < pick_count {
                pick_count = c;
                pick = p;
            }
        }
        let mut cands = balls[pick];
        while cands != 0 {
            let c = cands.trailing_zeros() as usize;
            cands &= cands - 1;
            rec(covered | balls[c], depth + 1, best, balls, full, max_ball);
        }
    }
    rec(0, 0, &mut best, balls, full, max_ball);
    best
}

fn exact_max_packing<D: Distances + ?Sized>(balls: &[u64], n: usize, d: &D, eps: f64) -> usize {
    // Conflict graph: i ~ j when d(i,j) <= eps or d(j,i) <= eps.
    let mut conflict = vec![0u64; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (balls[i] & (1 << j) != 0 || d.dist(j, i) <= eps) {
                conflict[i] |= 1 << j;
            }
        }
    }
    let full: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut best = 0usize;
    fn rec(cand: u64, size: usize, best: &mut usize, conflict: &[u64]) {
        if cand == 0 {
            *best = (*best).max(size);
            return;
        }
        if size + cand.count_ones() as usize <= *best {
            return;
        }
        let v = cand.trailing_zeros() as usize;
        let bit = 1u64 << v;
        rec(cand & !conflict[v] & !bit, size + 1, best, conflict);
        rec(cand & !bit, size, best, conflict);
    }
    rec(full, 0, &mut best, &conflict);
    best
}

/// Max-product of two spaces: `d((a,b),(a',b')) = max(d_A(a,a'), d_B(b,b'))`.
/// Point `(ia, ib)` has index `ia * |B| + ib`.
pub fn max_combine(a: &FiniteMetricSpace, b: &FiniteMetricSpace) -> FiniteMetricSpace {
    let labels = a
        .labels
        .iter()
        .flat_map(|la| b.labels.iter().map(move |lb| format!("{la}|{lb}")))
        .collect::<Vec<_>>();
    let (dim, coords) = match (&a.coords, &b.coords) {
        (Some(ca), Some(cb)) => {
            let mut flat = Vec::with_capacity(labels.len() * (a.dim + b.dim));
            for pa in ca.chunks(a.dim.max(1)) {
                for pb in cb.chunks(b.dim.max(1)) {
                    flat.extend_from_slice(pa);
                    flat.extend_from_slice(pb);
                }
            }
            (a.dim + b.dim, Some(Arc::new(flat)))
        }
        _ => (0, None),
    };
    FiniteMetricSpace {
        labels,
        dim,
        coords,
        store: DistStore::Product(Arc::new(a.clone()), Arc::new(b.clone())),
    }
}

/// Induced submetric on `indices` (in the given order).
pub fn restrict(space: &FiniteMetricSpace, indices: &[usize]) -> Result<FiniteMetricSpace> {
    if indices.is_empty() {
        return Err(Error::EmptySubset);
    }
    let n = space.len();
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let labels: Vec<String> = indices.iter().map(|&i| space.labels[i].clone()).collect();
    match space.store {
        DistStore::Geometric(metric) => {
            let pts = indices.iter().map(|&i| space.point(i).unwrap().to_vec()).collect();
            FiniteMetricSpace::from_coords(pts, metric)?.with_labels(labels)
        }
        _ => {
            let flat = indices
                .iter()
                .flat_map(|&i| indices.iter().map(move |&j| (i, j)))
                .map(|(i, j)| space.dist(i, j))
                .collect();
            let mut out = FiniteMetricSpace::from_flat_unchecked(labels, flat);
            if let Some(c) = &space.coords {
                let d = space.dim;
                let sub: Vec<f64> =
                    indices.iter().flat_map(|&i| c[i * d..(i + 1) * d].iter().copied()).collect();
                out.coords = Some(Arc::new(sub));
                out.dim = d;
            }
            Ok(out)
        }
    }
}

/// Seeded random metric: shortest-path closure of random edge weights in
/// `[0.1, 1]` on the complete graph. Used by oracle suites.
pub fn seeded_metric(n: usize, seed: u64) -> FiniteMetricSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let w = rng.random_range(0.1..1.0);
            m[i][j] = w;
            m[j][i] = w;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = m[i][k] + m[k][j];
                if via < m[i][j] {
                    m[i][j] = via;
                }
            }
        }
    }
    FiniteMetricSpace::from_matrix(None, m).expect("closure of positive weights is a valid matrix")
}

/// Writes a square matrix as CSV: a header row of labels, then one row per point.
pub fn write_matrix_csv<D: Distances + ?Sized>(path: &Path, labels: &[String], d: &D) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(labels)?;
    let n = d.len();
    for i in 0..n {
        w.write_record((0..n).map(|j| format_f64(d.dist(i, j))))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let labels: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((labels, rows))
}

/// Shortest round-trip decimal representation; keeps CSV output byte-stable.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}
