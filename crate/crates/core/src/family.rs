//! Increasing families of distances `{d_lambda}` on one finite sample.
//!
//! Levels are stored densely when that is affordable and otherwise evaluated
//! lazily from orbits (maps), trajectories (flows) or factor levels (products).

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{Connector, ConnectorTable, Curve, CurveBundle};
use crate::error::{Error, Result};
use crate::metric::{
    read_matrix_csv, validate_distances, write_matrix_csv, BaseMetric, Distances, FiniteMetricSpace,
    ValidationReport,
};
use crate::ode::trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Map,
    Pseudogroup,
    Flow,
    CurveBundle,
    Synthetic,
}

/// One distance of the family.
#[derive(Clone, Debug)]
pub enum Level {
    Dense { n: usize, data: Arc<Vec<f64>> },
    /// `max_{k <= depth} d(orbits[k][i], orbits[k][j])`.
    Orbit { base: Arc<FiniteMetricSpace>, orbits: Arc<Vec<Vec<u32>>>, depth: usize },
    /// `max_{s <= stop} metric(traj_i(s), traj_j(s))` over stored time samples.
    Trajectory { metric: BaseMetric, dim: usize, steps: usize, traj: Arc<Vec<Vec<f64>>>, stop: usize },
    /// Max-product, index `a * nb + b`.
    Product { a: Box<Level>, b: Box<Level>, nb: usize },
}

impl Distances for Level {
    fn len(&self) -> usize {
        match self {
            Level::Dense { n, .. } => *n,
            Level::Orbit { base, .. } => base.len(),
            Level::Trajectory { traj, .. } => traj.len(),
            Level::Product { a, nb, .. } => a.len() * nb,
        }
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist_bounded(i, j, f64::INFINITY)
    }

    #[inline]
    fn dist_bounded(&self, i: usize, j: usize, bound: f64) -> f64 {
        match self {
            Level::Dense { n, data } => data[i * n + j],
            Level::Orbit { base, orbits, depth } => {
                let mut m = 0.0f64;
                for orbit in orbits.iter().take(depth + 1) {
                    m = m.max(base.dist(orbit[i] as usize, orbit[j] as usize));
                    if m >= bound {
                        break;
                    }
                }
                m
            }
            Level::Trajectory { metric, dim, traj, stop, .. } => {
                let (a, b) = (&traj[i], &traj[j]);
                let d = *dim;
                let mut m = 0.0f64;
                match metric.distance_squared_flat(&a[..d], &b[..d]) {
                    Some(_) => {
                        let bound2 = bound * bound;
                        let mut m2 = 0.0f64;
                        for s in 0..=*stop {
                            let v = metric.distance_squared_flat(&a[s * d..(s + 1) * d], &b[s * d..(s + 1) * d]).unwrap();
                            m2 = m2.max(v);
                            if m2 >= bound2 {
                                break;
                            }
                        }
                        m = m2.sqrt();
                    }
                    None => {
                        for s in 0..=*stop {
                            m = m.max(metric.distance(&a[s * d..(s + 1) * d], &b[s * d..(s + 1) * d]));
                            if m >= bound {
                                break;
                            }
                        }
                    }
                }
                m
            }
            Level::Product { a, b, nb } => {
                let db = b.dist_bounded(i % nb, j % nb, bound);
                if db >= bound {
                    return db;
                }
                db.max(a.dist_bounded(i / nb, j / nb, bound))
            }
        }
    }
}

impl Level {
    fn dense_from_fn<F: Fn(usize, usize) -> f64 + Sync>(n: usize, f: F) -> Self {
        let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| (0..n).map(|j| f(i, j)).collect()).collect();
        Level::Dense { n, data: Arc::new(rows.into_iter().flatten().collect()) }
    }

    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n).map(|i| (0..n).map(|j| self.dist(i, j)).collect()).collect()
    }
}

/// Diagnostics attached by the builders.
#[derive(Clone, Debug, Default, Serialize)]
pub struct FamilyNotes {
    /// Largest triangle-inequality excess over all levels (dense families only).
    pub worst_triangle_excess: Option<f64>,
    /// Entries raised by the running max over the grid.
    pub monotone_repairs: usize,
    /// Fraction of ordered pairs with a steering connector.
    pub connector_coverage: Option<f64>,
}

/// Ascending grid plus one distance per grid value.
#[derive(Clone, Debug)]
pub struct DistanceFamily {
    pub kind: FamilyKind,
    pub grid: Vec<f64>,
    pub levels: Vec<Level>,
    pub labels: Arc<Vec<String>>,
    pub notes: FamilyNotes,
    /// Same construction from half of the curve sample.
    pub half_sample: Option<Arc<DistanceFamily>>,
}

impl DistanceFamily {
    pub fn new(kind: FamilyKind, grid: Vec<f64>, levels: Vec<Level>, labels: Vec<String>) -> Result<Self> {
        if grid.len() != levels.len() || grid.is_empty() {
            return Err(Error::Shape(format!("{} grid values for {} levels", grid.len(), levels.len())));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid[0] < 0.0 {
            return Err(Error::Config("family grid must be nonnegative and strictly ascending".into()));
        }
        let n = levels[0].len();
        if levels.iter().any(|l| l.len() != n) || labels.len() != n {
            return Err(Error::Shape("levels of different sizes".into()));
        }
        Ok(Self { kind, grid, levels, labels: Arc::new(labels), notes: FamilyNotes::default(), half_sample: None })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn level(&self, k: usize) -> &Level {
        &self.levels[k]
    }

    pub fn matrix(&self, k: usize) -> Vec<Vec<f64>> {
        self.levels[k].to_matrix()
    }

    /// True when every level is stored as a matrix.
    pub fn is_dense(&self) -> bool {
        self.levels.iter().all(|l| matches!(l, Level::Dense { .. }))
    }

    /// Worst violation of entrywise monotonicity (positive when violated).
    pub fn monotonicity_defect(&self) -> f64 {
        let n = self.n();
        self.levels
            .windows(2)
            .map(|w| {
                (0..n)
                    .into_par_iter()
                    .map(|i| (0..n).map(|j| w[0].dist(i, j) - w[1].dist(i, j)).fold(f64::MIN, f64::max))
                    .reduce(|| f64::MIN, f64::max)
            })
            .fold(f64::MIN, f64::max)
            .max(0.0)
    }

    /// Axiom check of every level.
    pub fn validate(&self, tol: f64) -> Vec<ValidationReport> {
        self.levels.iter().map(|l| validate_distances(l, tol)).collect()
    }

    /// Writes `manifest.json` and `level_<k>.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path, seed: Option<u64>, provenance: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = FamilyManifest {
            kind: self.kind,
            grid: self.grid.clone(),
            n: self.n(),
            seed,
            provenance: provenance.to_string(),
            files: (0..self.levels.len()).map(level_file).collect(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        for (k, level) in self.levels.iter().enumerate() {
            write_matrix_csv(&dir.join(level_file(k)), &self.labels, level)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: FamilyManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut labels = Vec::new();
        let mut levels = Vec::new();
        for f in &manifest.files {
            let (l, rows) = read_matrix_csv(&dir.join(f))?;
            let n = rows.len();
            levels.push(Level::Dense { n, data: Arc::new(rows.into_iter().flatten().collect()) });
            labels = l;
        }
        Self::new(manifest.kind, manifest.grid, levels, labels)
    }
}

fn level_file(k: usize) -> String {
    format!("level_{k:03}.csv")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyManifest {
    pub kind: FamilyKind,
    pub grid: Vec<f64>,
    pub n: usize,
    pub seed: Option<u64>,
    pub provenance: String,
    pub files: Vec<String>,
}

/// Dense levels are materialised only below this many stored entries.
const DENSE_BUDGET: usize = 40_000_000;

/// Bowen family `d_n = max_{i <= n} d(f^i x, f^i y)`, `n = 0..=n_max`.
pub fn bowen_family(space: &FiniteMetricSpace, map: &[usize], n_max: usize) -> Result<DistanceFamily> {
    let n = space.len();
    if n == 0 {
        return Err(Error::EmptySpace);
    }
    if map.len() != n {
        return Err(Error::Shape(format!("map has {} images for {n} points", map.len())));
    }
    if let Some(&bad) = map.iter().find(|&&m| m >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let mut orbits: Vec<Vec<u32>> = vec![(0..n as u32).collect()];
    for k in 0..n_max {
        let next = orbits[k].iter().map(|&i| map[i as usize] as u32).collect();
        orbits.push(next);
    }
    let base = Arc::new(space.clone());
    let orbits = Arc::new(orbits);
    let levels = (0..=n_max)
        .map(|depth| Level::Orbit { base: base.clone(), orbits: orbits.clone(), depth })
        .collect();
    let grid = (0..=n_max).map(|k| k as f64).collect();
    DistanceFamily::new(FamilyKind::Map, grid, levels, space.labels().to_vec())
}

/// A partial map on sample indices.
pub type PartialMap = Vec<Option<usize>>;

/// Pseudogroup family: `d_n(x, y) = sup` over compositions of at most `n`
/// generators defined along the whole chain at both points.
pub fn pseudogroup_family(space: &FiniteMetricSpace, generators: &[PartialMap], n_max: usize) -> Result<DistanceFamily> {
    let n = space.len();
    for g in generators {
        if g.len() != n {
            return Err(Error::Shape(format!("generator has {} entries for {n} points", g.len())));
        }
        if let Some(bad) = g.iter().flatten().find(|&&m| m >= n) {
            return Err(Error::IndexOutOfRange { index: *bad, len: n });
        }
    }
    if !generators.iter().any(|g| g.iter().enumerate().all(|(i, m)| *m == Some(i))) {
        return Err(Error::MissingIdentity);
    }
    for (gi, g) in generators.iter().enumerate() {
        let has_inverse = generators.iter().any(|h| {
            (0..n).all(|x| match g[x] {
                Some(y) => h[y] == Some(x),
                None => true,
            }) && (0..n).all(|y| match h[y] {
                Some(x) => g[x] == Some(y),
                None => true,
            })
        });
        if !has_inverse {
            return Err(Error::MissingInverse(gi));
        }
    }
    // V_k(a, b) = max(d(a, b), max_g V_{k-1}(g a, g b)).
    let base = Level::dense_from_fn(n, |i, j| space.dist(i, j));
    let mut levels = vec![base.clone()];
    let Level::Dense { data: d0, .. } = &base else { unreachable!() };
    for _ in 0..n_max {
        let prev = match levels.last().unwrap() {
            Level::Dense { data, .. } => data.clone(),
            _ => unreachable!(),
        };
        let next = Level::dense_from_fn(n, |a, b| {
            let mut v = d0[a * n + b];
            for g in generators {
                if let (Some(ga), Some(gb)) = (g[a], g[b]) {
                    v = v.max(prev[ga * n + gb]);
                }
            }
            v
        });
        levels.push(next);
    }
    let grid = (0..=n_max).map(|k| k as f64).collect();
    // Words defined at x and y but not at z can break the triangle inequality.
    let worst = levels.iter().map(|l| validate_distances(l, f64::INFINITY).worst_triangle_excess).fold(0.0, f64::max);
    let mut fam = DistanceFamily::new(FamilyKind::Pseudogroup, grid, levels, space.labels().to_vec())?;
    fam.notes.worst_triangle_excess = Some(worst);
    Ok(fam)
}

/// Flow family `d_r = sup_{0 <= s <= r} d(phi_s x, phi_s y)` over the RK4 time grid of step `dt`.
pub fn flow_family<F>(space: &FiniteMetricSpace, field: &F, r_grid: &[f64], dt: f64) -> Result<DistanceFamily>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let pts = space.points().ok_or_else(|| Error::Shape("flow family needs coordinates".into()))?;
    let metric = space
        .base_metric()
        .ok_or_else(|| Error::Shape("flow family needs a coordinate metric".into()))?;
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let stops: Vec<usize> = r_grid
        .iter()
        .map(|&r| {
            let s = (r / dt).round();
            if (s * dt - r).abs() > 1e-9 * r.max(1.0) || r < 0.0 {
                Err(Error::Config(format!("dt = {dt} does not divide grid value {r}")))
            } else {
                Ok(s as usize)
            }
        })
        .collect::<Result<_>>()?;
    let steps = *stops.iter().max().unwrap_or(&0);
    let dim = space.dim();
    let traj: Vec<Vec<f64>> = pts
        .par_iter()
        .enumerate()
        .map(|(i, x)| trajectory(field, x, dt, steps, i))
        .collect::<Result<_>>()?;
    let traj = Arc::new(traj);
    let n = pts.len();
    let lazy: Vec<Level> = stops
        .iter()
        .map(|&stop| Level::Trajectory { metric, dim, steps, traj: traj.clone(), stop })
        .collect();
    let levels = if n * n * stops.len() <= DENSE_BUDGET {
        // Running max over time, one block of steps per level.
        let mut out = Vec::with_capacity(stops.len());
        let mut prev: Option<(usize, Arc<Vec<f64>>)> = None;
        for &stop in &stops {
            let data: Vec<f64> = (0..n)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let traj = &traj;
                    let prev = &prev;
                    (0..n).map(move |j| {
                        let (from, mut m) = match prev {
                            Some((s, data)) if *s <= stop => (*s + 1, data[i * n + j]),
                            _ => (0, 0.0),
                        };
                        for s in from..=stop {
                            m = m.max(metric.distance(&traj[i][s * dim..(s + 1) * dim], &traj[j][s * dim..(s + 1) * dim]));
                        }
                        m
                    })
                })
                .collect();
            let data = Arc::new(data);
            out.push(Level::Dense { n, data: data.clone() });
            prev = Some((stop, data));
        }
        out
    } else {
        lazy
    };
    DistanceFamily::new(FamilyKind::Flow, r_grid.to_vec(), levels, space.labels().to_vec())
}

/// `sup_t d(gamma(t), mu(t))` over the shared time grid.
pub fn uniform_curve_distance(gamma: &Curve, mu: &Curve, metric: &BaseMetric) -> Result<f64> {
    if gamma.points.len() != mu.points.len() {
        return Err(Error::GridMismatch(gamma.points.len(), mu.points.len()));
    }
    Ok(gamma
        .points
        .iter()
        .zip(&mu.points)
        .map(|(a, b)| metric.distance(a, b))
        .fold(0.0, f64::max))
}

fn sup_distance_bounded(a: &[Vec<f64>], b: &[Vec<f64>], metric: &BaseMetric, bound: f64) -> f64 {
    let mut m = 0.0f64;
    for (p, q) in a.iter().zip(b) {
        m = m.max(metric.distance(p, q));
        if m >= bound {
            break;
        }
    }
    m
}

/// Inputs of [`curve_family`]: `bundles[level][point]` on an ascending radius grid.
#[derive(Clone, Debug)]
pub struct BundleGrid {
    pub r_grid: Vec<f64>,
    pub bundles: Vec<Vec<CurveBundle>>,
    pub metric: BaseMetric,
    /// Steering connectors used to extend the candidate sets of the inner infimum.
    pub connectors: Option<Arc<ConnectorTable>>,
}

impl BundleGrid {
    /// Keeps the constant curve and the first `m` library curves of every bundle.
    pub fn truncated(&self, m: usize) -> Self {
        Self {
            r_grid: self.r_grid.clone(),
            bundles: self.bundles.iter().map(|lv| lv.iter().map(|b| b.truncated(m)).collect()).collect(),
            metric: self.metric,
            connectors: self.connectors.clone(),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.bundles.len() != self.r_grid.len() {
            return Err(Error::Shape(format!("{} bundle levels for {} radii", self.bundles.len(), self.r_grid.len())));
        }
        let intervals = self.bundles[0][0].curves[0].intervals();
        for (k, level) in self.bundles.iter().enumerate() {
            if level.len() != n {
                return Err(Error::Shape(format!("level {k} has {} bundles for {n} points", level.len())));
            }
            for (i, b) in level.iter().enumerate() {
                let ok = b.base_index == i
                    && b.curves.first().is_some_and(|c| c.is_constant());
                if !ok {
                    return Err(Error::MissingConstantCurve(i));
                }
                if let Some(c) = b.curves.iter().find(|c| c.intervals() != intervals) {
                    return Err(Error::GridMismatch(c.points.len(), intervals + 1));
                }
                if k > 0 {
                    let prev = &self.bundles[k - 1][i];
                    let detail = if prev.radius > b.radius {
                        Some(format!("radius {} follows {}", b.radius, prev.radius))
                    } else if prev.library_seed != b.library_seed || prev.filtration != b.filtration {
                        Some("bundles come from different control libraries".to_string())
                    } else if prev.n_library() > b.n_library() {
                        Some(format!("{} curves follow {}", b.n_library(), prev.n_library()))
                    } else {
                        None
                    };
                    if let Some(detail) = detail {
                        return Err(Error::NonNestedBundles { point: i, detail });
                    }
                }
            }
        }
        Ok(())
    }
}

/// The composite `eta * gamma`: follow the connector from `y` to `gamma(0)` at
/// speed `r`, then replay `gamma` delayed by the travel time.
fn composite_into(gamma: &Curve, eta: &Connector, r: f64, out: &mut [Vec<f64>]) {
    let n = gamma.intervals();
    let tau = if r > 0.0 { eta.length / r } else { f64::INFINITY };
    let end = eta.points.last().unwrap();
    let start = gamma.start();
    for (i, slot) in out.iter_mut().enumerate() {
        let t = i as f64 / n as f64;
        if t <= tau {
            eta.at_into(t / tau, slot);
        } else {
            gamma.at_into(t - tau, slot);
            for k in 0..slot.len() {
                slot[k] += end[k] - start[k];
            }
        }
    }
}

/// `delta_r(x, y) = max_{gamma in A_r(x)} min_{mu in A_r(y)} sup_t d(gamma(t), mu(t))`
/// and `d_r = delta_r(x, y) + delta_r(y, x)`, followed by a running max over the
/// radius grid.
pub fn curve_family(space: &FiniteMetricSpace, grid: &BundleGrid) -> Result<DistanceFamily> {
    let n = space.len();
    grid.check(n)?;
    let metric = grid.metric;
    let levels_n = grid.r_grid.len();
    let intervals = grid.bundles[0][0].curves[0].intervals();
    let dim = grid.bundles[0][0].curves[0].points[0].len();
    // delta[k][x * n + y]
    let rows: Vec<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut scratch = vec![vec![0.0; dim]; intervals + 1];
            (0..levels_n)
                .map(|k| {
                    let r = grid.r_grid[k];
                    (0..n)
                        .map(|y| {
                            if x == y {
                                return 0.0;
                            }
                            let ax = &grid.bundles[k][x].curves;
                            let ay = &grid.bundles[k][y].curves;
                            let eta = grid.connectors.as_ref().and_then(|t| t.get(y, x));
                            let mut best = 0.0f64;
                            for (gi, gamma) in ax.iter().enumerate() {
                                let mut inner = f64::INFINITY;
                                if let Some(eta) = eta {
                                    composite_into(gamma, eta, r, &mut scratch);
                                    inner = sup_distance_bounded(&gamma.points, &scratch, &metric, inner);
                                }
                                // Same library index first, then the rest.
                                let order = std::iter::once(gi.min(ay.len() - 1))
                                    .chain((0..ay.len()).filter(|&m| m != gi));
                                for m in order {
                                    if inner <= best {
                                        break;
                                    }
                                    let v = sup_distance_bounded(&gamma.points, &ay[m].points, &metric, inner);
                                    inner = inner.min(v);
                                }
                                best = best.max(inner);
                            }
                            best
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut notes = FamilyNotes::default();
    let mut levels = Vec::with_capacity(levels_n);
    let mut prev: Option<Vec<f64>> = None;
    for k in 0..levels_n {
        let mut data = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                let v = rows[x][k][y] + rows[y][k][x];
                data[x * n + y] = match &prev {
                    Some(p) if p[x * n + y] > v => {
                        notes.monotone_repairs += 1;
                        p[x * n + y]
                    }
                    _ => v,
                };
            }
        }
        prev = Some(data.clone());
        levels.push(Level::Dense { n, data: Arc::new(data) });
    }
    let worst = levels
        .iter()
        .map(|l| validate_distances(l, f64::INFINITY).worst_triangle_excess)
        .fold(0.0, f64::max);
    notes.worst_triangle_excess = Some(worst);
    notes.connector_coverage = grid.connectors.as_ref().map(|t| t.coverage());
    let mut fam = DistanceFamily::new(FamilyKind::CurveBundle, grid.r_grid.clone(), levels, space.labels().to_vec())?;
    fam.notes = notes;
    Ok(fam)
}

/// Same matrices on the grid `c * grid`.
pub fn reindex_scale(family: &DistanceFamily, c: f64) -> Result<DistanceFamily> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::NonPositiveScale(c));
    }
    let mut out = family.clone();
    out.grid = family.grid.iter().map(|g| g * c).collect();
    out.half_sample = match &family.half_sample {
        Some(h) => Some(Arc::new(reindex_scale(h, c)?)),
        None => None,
    };
    Ok(out)
}

/// Level-wise max-product of two families on the same grid.
pub fn product_family(a: &DistanceFamily, b: &DistanceFamily) -> Result<DistanceFamily> {
    if a.grid != b.grid {
        return Err(Error::Shape("product families need identical grids".into()));
    }
    let nb = b.n();
    let levels = a
        .levels
        .iter()
        .zip(&b.levels)
        .map(|(la, lb)| Level::Product { a: Box::new(la.clone()), b: Box::new(lb.clone()), nb })
        .collect();
    let labels = a.labels.iter().flat_map(|la| b.labels.iter().map(move |lb| format!("{la}|{lb}"))).collect();
    DistanceFamily::new(a.kind, a.grid.clone(), levels, labels)
}

/// `d_lambda = g(lambda, d)` entrywise; `g` must be nondecreasing in `lambda`.
pub fn synthetic_family<G>(space: &FiniteMetricSpace, grid: &[f64], g: G) -> Result<DistanceFamily>
where
    G: Fn(f64, f64) -> f64 + Sync,
{
    let n = space.len();
    let levels = grid
        .iter()
        .map(|&lam| Level::dense_from_fn(n, |i, j| if i == j { 0.0 } else { g(lam, space.dist(i, j)) }))
        .collect();
    DistanceFamily::new(FamilyKind::Synthetic, grid.to_vec(), levels, space.labels().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::{
        bundle_grid, AnchorFn, AnchoredSystem, ControlLibrary, ControlNorm, Filtration, SamplingOptions,
    };
    use crate::manifold::ManifoldModel;
    use crate::metric::{exact_counts, seeded_metric};

    fn circle(n: usize) -> FiniteMetricSpace {
        ManifoldModel::torus(1).grid_space(n).unwrap()
    }

    #[test]
    fn bowen_identity_and_zero_depth() {
        let s = circle(8);
        let id: Vec<usize> = (0..8).collect();
        let f = bowen_family(&s, &id, 3).unwrap();
        for k in 0..=3 {
            assert_eq!(f.matrix(k), s.to_matrix());
        }
        let f0 = bowen_family(&s, &id, 0).unwrap();
        assert_eq!(f0.levels.len(), 1);
        assert!(matches!(bowen_family(&s, &[0, 1, 2, 3, 4, 5, 6, 9], 1), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn bowen_doubling_direct_iteration() {
        let s = circle(8);
        let dbl: Vec<usize> = (0..8).map(|i| (2 * i) % 8).collect();
        let f = bowen_family(&s, &dbl, 2).unwrap();
        assert!((f.level(2).dist(0, 1) - 0.5).abs() < 1e-12);
        // direct orbit oracle on all pairs
        for i in 0..8 {
            for j in 0..8 {
                let (mut a, mut b, mut m) = (i, j, 0.0f64);
                for _ in 0..=2 {
                    m = m.max(s.dist(a, b));
                    a = dbl[a];
                    b = dbl[b];
                }
                assert_eq!(f.level(2).dist(i, j), m);
            }
        }
        assert_eq!(f.monotonicity_defect(), 0.0);
    }

    #[test]
    fn pseudogroup_rules() {
        let s = circle(8);
        let id: PartialMap = (0..8).map(Some).collect();
        let f = pseudogroup_family(&s, &[id.clone()], 3).unwrap();
        assert_eq!(f.matrix(3), s.to_matrix());

        let rot: PartialMap = (0..8).map(|i| Some((i + 2) % 8)).collect();
        let inv: PartialMap = (0..8).map(|i| Some((i + 6) % 8)).collect();
        let f = pseudogroup_family(&s, &[id.clone(), rot.clone(), inv], 3).unwrap();
        for (a, b) in f.matrix(3).iter().flatten().zip(s.to_matrix().iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(pseudogroup_family(&s, &[rot.clone()], 1), Err(Error::MissingIdentity)));
        assert!(matches!(pseudogroup_family(&s, &[id, rot], 1), Err(Error::MissingInverse(1))));
    }

    #[test]
    fn pseudogroup_partial_doubling_matches_word_enumeration() {
        let n = 16;
        let s = circle(n);
        let id: PartialMap = (0..n).map(Some).collect();
        // doubling on the half circle [0, 1/2) onto the full circle is injective there.
        let g: PartialMap = (0..n).map(|i| (i < n / 2).then_some((2 * i) % n)).collect();
        let mut ginv: PartialMap = vec![None; n];
        for (i, gi) in g.iter().enumerate() {
            if let Some(j) = gi {
                ginv[*j] = Some(i);
            }
        }
        let gens = vec![id.clone(), g.clone(), ginv.clone()];
        let depth = 3;
        let f = pseudogroup_family(&s, &gens, depth).unwrap();
        // every word of length <= depth defined along the chain at both points
        let mut words: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..depth {
            let ext: Vec<Vec<usize>> =
                words.iter().flat_map(|w| (0..gens.len()).map(move |k| [w.clone(), vec![k]].concat())).collect();
            words.extend(ext);
        }
        let apply = |w: &[usize], mut x: usize| -> Option<usize> {
            for &k in w {
                x = gens[k][x]?;
            }
            Some(x)
        };
        for (a, b) in [(0, 5), (1, 2), (3, 12), (7, 9), (6, 14)] {
            let mut m = 0.0f64;
            for w in &words {
                if let (Some(x), Some(y)) = (apply(w, a), apply(w, b)) {
                    m = m.max(s.dist(x, y));
                }
            }
            assert!((f.level(depth).dist(a, b) - m).abs() < 1e-12, "pair ({a},{b})");
        }
        // Words defined at both ends but not at a middle point break the triangle inequality.
        let excess = f.notes.worst_triangle_excess.unwrap();
        let brute = (1..=depth)
            .flat_map(|k| (0..n * n * n).map(move |t| (k, t / (n * n), (t / n) % n, t % n)))
            .map(|(k, i, j, l)| f.level(k).dist(i, l) - f.level(k).dist(i, j) - f.level(k).dist(j, l))
            .fold(0.0, f64::max);
        assert!(excess > 0.0);
        assert!((excess - brute).abs() < 1e-12);
    }

    #[test]
    fn flow_trivial_fields() {
        let s = ManifoldModel::torus(2).grid_space(5).unwrap();
        let zero = |_x: &[f64], out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0);
        let f = flow_family(&s, &zero, &[0.0, 0.5, 1.0], 0.01).unwrap();
        assert_eq!(f.matrix(2), s.to_matrix());
        let c = |_x: &[f64], out: &mut [f64]| {
            out[0] = 0.37;
            out[1] = 1.1;
        };
        let f = flow_family(&s, &c, &[0.0, 0.5, 1.0], 0.01).unwrap();
        for (a, b) in f.matrix(2).iter().flatten().zip(s.to_matrix().iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(flow_family(&s, &c, &[0.0, 0.015], 0.01).is_err());
    }

    #[test]
    fn flow_saddle_matches_refined_reference() {
        let pts = vec![vec![0.1, 0.2], vec![-0.15, 0.05]];
        let s = FiniteMetricSpace::from_coords(pts.clone(), BaseMetric::Euclidean).unwrap();
        let saddle = |x: &[f64], out: &mut [f64]| {
            out[0] = x[0];
            out[1] = -x[1];
        };
        let f = flow_family(&s, &saddle, &[0.0, 1.0], 0.01).unwrap();
        let fine = 1e-4;
        let a = trajectory(&saddle, &pts[0], fine, 10_000, 0).unwrap();
        let b = trajectory(&saddle, &pts[1], fine, 10_000, 1).unwrap();
        let reference = (0..=10_000)
            .step_by(100)
            .map(|s| BaseMetric::Euclidean.distance(&a[2 * s..2 * s + 2], &b[2 * s..2 * s + 2]))
            .fold(0.0, f64::max);
        assert!((f.level(1).dist(0, 1) - reference).abs() < 1e-4);
    }

    #[test]
    fn lazy_and_dense_trajectory_levels_agree() {
        let s = ManifoldModel::torus(2).grid_space(4).unwrap();
        let field = |x: &[f64], out: &mut [f64]| {
            out[0] = (x[1] * 6.0).sin();
            out[1] = 0.5;
        };
        let f = flow_family(&s, &field, &[0.0, 0.3, 0.6], 0.01).unwrap();
        let pts = s.points().unwrap();
        let traj: Vec<Vec<f64>> = pts.iter().map(|x| trajectory(&field, x, 0.01, 60, 0).unwrap()).collect();
        let lazy = Level::Trajectory { metric: s.base_metric().unwrap(), dim: 2, steps: 60, traj: Arc::new(traj), stop: 30 };
        for i in 0..16 {
            for j in 0..16 {
                assert!((lazy.dist(i, j) - f.level(1).dist(i, j)).abs() < 1e-12);
                let b = lazy.dist_bounded(i, j, 0.1);
                assert!(b >= lazy.dist(i, j).min(0.1) - 1e-12);
            }
        }
    }

    #[test]
    fn uniform_curve_distance_examples() {
        let m = BaseMetric::Torus { circumference: 1.0 };
        let a = Curve::constant(&[0.1, 0.2], 8);
        let b = Curve::constant(&[0.4, 0.6], 8);
        assert_eq!(uniform_curve_distance(&a, &a, &m).unwrap(), 0.0);
        assert!((uniform_curve_distance(&a, &b, &m).unwrap() - 0.5).abs() < 1e-12);
        let c = Curve::constant(&[0.1, 0.2], 4);
        assert!(matches!(uniform_curve_distance(&a, &c, &m), Err(Error::GridMismatch(9, 5))));
        // spirals around the torus: exhaustive max over the grid
        let spiral = |x0: f64, w: f64| Curve {
            points: (0..=64).map(|i| {
                let t = i as f64 / 64.0;
                vec![x0 + 3.0 * t, 0.2 + w * t]
            }).collect(),
            segments: None,
            speed_bound: None,
        };
        let (s1, s2) = (spiral(0.0, 1.0), spiral(0.3, -2.0));
        let brute = s1.points.iter().zip(&s2.points).map(|(p, q)| m.distance(p, q)).fold(0.0, f64::max);
        assert_eq!(uniform_curve_distance(&s1, &s2, &m).unwrap(), brute);
    }

    fn circle_system() -> AnchoredSystem {
        let anchor: Arc<AnchorFn> = Arc::new(|x, u, out| out[0] = u[0] * (1.0 + 0.5 * (6.3 * x[0]).sin()));
        AnchoredSystem::new(ManifoldModel::torus(1), 1, anchor, ControlNorm::euclidean(1), "c").unwrap()
    }

    fn grid_for(space: &FiniteMetricSpace, r_grid: &[f64], n_curves: usize) -> BundleGrid {
        let sys = circle_system();
        let lib = ControlLibrary::generate(&sys.norm, n_curves, 4, 11).unwrap();
        let bundles = bundle_grid(&sys, space, r_grid, &lib, Filtration::SpeedBounded, &SamplingOptions::default()).unwrap();
        BundleGrid { r_grid: r_grid.to_vec(), bundles, metric: space.base_metric().unwrap(), connectors: None }
    }

    #[test]
    fn constant_bundles_give_twice_the_base_metric() {
        let s = circle(6);
        let g = grid_for(&s, &[0.0], 4);
        let f = curve_family(&s, &g).unwrap();
        for (a, b) in f.matrix(0).iter().flatten().zip(s.to_matrix().iter().flatten()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_family_matches_exhaustive_min_max() {
        let s = FiniteMetricSpace::from_coords(vec![vec![0.0], vec![0.3], vec![0.55]], BaseMetric::Torus { circumference: 1.0 })
            .unwrap();
        let g = grid_for(&s, &[0.0, 0.4], 2);
        let f = curve_family(&s, &g).unwrap();
        let delta = |x: usize, y: usize| {
            g.bundles[1][x]
                .curves
                .iter()
                .map(|gm| {
                    g.bundles[1][y]
                        .curves
                        .iter()
                        .map(|mu| uniform_curve_distance(gm, mu, &g.metric).unwrap())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        for x in 0..3 {
            assert_eq!(f.level(1).dist(x, x), 0.0);
            for y in 0..3 {
                if x != y {
                    let expect = (delta(x, y) + delta(y, x)).max(f.level(0).dist(x, y));
                    assert!((f.level(1).dist(x, y) - expect).abs() < 1e-12);
                    assert!(f.level(1).dist(x, y) >= 2.0 * s.dist(x, y) - 1e-12);
                }
            }
        }
    }

    #[test]
    fn curve_family_checks_inputs() {
        let s = circle(4);
        let mut g = grid_for(&s, &[0.0, 0.5], 3);
        g.bundles[1][2].curves.remove(0);
        assert!(matches!(curve_family(&s, &g), Err(Error::MissingConstantCurve(2))));
        let mut g = grid_for(&s, &[0.0, 0.5, 1.0], 3);
        g.bundles[2][1] = g.bundles[2][1].truncated(1);
        assert!(matches!(curve_family(&s, &g), Err(Error::NonNestedBundles { point: 1, .. })));
    }

    #[test]
    fn reindex_scale_examples() {
        let s = circle(8);
        let dbl: Vec<usize> = (0..8).map(|i| (2 * i) % 8).collect();
        let f = bowen_family(&s, &dbl, 2).unwrap();
        let g = reindex_scale(&f, 1.0).unwrap();
        assert_eq!(g.grid, f.grid);
        let g = reindex_scale(&f, 2.0).unwrap();
        assert_eq!(g.grid, vec![0.0, 2.0, 4.0]);
        assert_eq!(g.matrix(2), f.matrix(2));
        assert!(matches!(reindex_scale(&f, -1.0), Err(Error::NonPositiveScale(_))));
    }

    #[test]
    fn domination_transfers_to_packings() {
        // d' = C d entrywise implies N'(C eps) >= N(eps).
        let s = seeded_metric(9, 4);
        let grid = [0.0, 1.0, 2.0];
        let f = synthetic_family(&s, &grid, |l, d| d * (1.0 + 0.3 * l)).unwrap();
        let c = 1.7;
        let g = synthetic_family(&s, &grid, |l, d| c * d * (1.0 + 0.3 * l)).unwrap();
        for k in 0..3 {
            for eps in [0.2, 0.4] {
                let (_, n) = exact_counts(f.level(k), eps, 12).unwrap();
                let (_, n2) = exact_counts(g.level(k), c * eps, 12).unwrap();
                assert!(n2 >= n);
            }
        }
    }

    #[test]
    fn directory_roundtrip() {
        let s = seeded_metric(5, 2);
        let f = synthetic_family(&s, &[0.0, 1.0], |l, d| d * (1.0 + l)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        f.write_dir(dir.path(), Some(7), "unit test").unwrap();
        let back = DistanceFamily::read_dir(dir.path()).unwrap();
        assert_eq!(back.grid, f.grid);
        assert_eq!(back.matrix(1), f.matrix(1));
        assert_eq!(back.kind, FamilyKind::Synthetic);
    }

    #[test]
    fn product_levels_take_max() {
        let a = circle(4);
        let b = circle(3);
        let ida: Vec<usize> = (0..4).collect();
        let idb: Vec<usize> = (0..3).collect();
        let fa = bowen_family(&a, &ida, 1).unwrap();
        let fb = bowen_family(&b, &idb, 1).unwrap();
        let p = product_family(&fa, &fb).unwrap();
        assert_eq!(p.n(), 12);
        let prod = crate::metric::max_combine(&a, &b);
        assert_eq!(p.matrix(1), prod.to_matrix());
    }
}
