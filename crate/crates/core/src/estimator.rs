//! Growth-rate estimates of packing numbers and the structural checks around them.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::curves::AdmissibleGraph;
use crate::error::{Error, Result};
use crate::family::DistanceFamily;
use crate::metric::{exact_counts, format_f64, greedy_packing_capped, greedy_packing_count, Distances};

pub const DEFAULT_FIT_WINDOW: f64 = 0.5;
pub const DEFAULT_SATURATION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimatorConfig {
    /// Trailing fraction of the usable grid used by the fit.
    pub fit_window: f64,
    /// Counts at or above `saturation * n` no longer resolve growth.
    pub saturation: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { fit_window: DEFAULT_FIT_WINDOW, saturation: DEFAULT_SATURATION }
    }
}

impl EstimatorConfig {
    fn check(&self) -> Result<()> {
        if !(self.fit_window > 0.0 && self.fit_window <= 1.0) {
            return Err(Error::Config(format!("fit window {} outside (0, 1]", self.fit_window)));
        }
        if !(self.saturation > 0.0 && self.saturation <= 1.0) {
            return Err(Error::Config(format!("saturation {} outside (0, 1]", self.saturation)));
        }
        Ok(())
    }

    fn cap(&self, n: usize) -> usize {
        ((self.saturation * n as f64).ceil() as usize).clamp(1, n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountRow {
    pub lambda: f64,
    pub count: usize,
    pub ln_count: f64,
    pub in_window: bool,
    pub saturated: bool,
    /// False for levels after the first saturated one; `count` is then the cap.
    pub evaluated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the fit residuals.
    pub residual: f64,
    /// Grid indices `[start, end)` of the fit window.
    pub window: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsTable {
    pub epsilon: f64,
    pub rows: Vec<CountRow>,
    /// `None` when saturation leaves fewer than three usable levels.
    pub fit: Option<SlopeFit>,
}

impl EpsTable {
    pub fn slope(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.slope)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClaimCheck {
    pub expected: String,
    pub value: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Estimate from half of the curve sample.
    pub half_sample_h: Option<f64>,
    /// Consecutive ε pairs whose slopes decrease beyond count noise.
    pub eps_monotonicity_violations: Vec<(f64, f64)>,
    pub unresolved_eps: Vec<f64>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyReport {
    pub eps_grid: Vec<f64>,
    pub per_eps: Vec<EpsTable>,
    pub h_estimate: f64,
    pub config: EstimatorConfig,
    pub diagnostics: Diagnostics,
    pub claim_check: Option<ClaimCheck>,
}

impl EntropyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One file `eps_<k>.csv` per ε with columns lambda, epsilon, count, ln_count, in_window.
    pub fn write_csvs(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for (k, t) in self.per_eps.iter().enumerate() {
            let name = format!("eps_{k:02}.csv");
            let mut w = csv::Writer::from_path(dir.join(&name))?;
            w.write_record(["lambda", "epsilon", "count", "ln_count", "in_window", "saturated", "evaluated"])?;
            for r in &t.rows {
                w.write_record([
                    format_f64(r.lambda),
                    format_f64(t.epsilon),
                    r.count.to_string(),
                    format_f64(r.ln_count),
                    r.in_window.to_string(),
                    r.saturated.to_string(),
                    r.evaluated.to_string(),
                ])?;
            }
            w.flush()?;
            names.push(name);
        }
        Ok(names)
    }
}

/// Ordinary least squares of `ys` against `xs`; returns (slope, intercept, rms residual).
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    (slope, intercept, (ss / m).sqrt())
}

/// Fit over the trailing `max(3, ceil(frac * m))` points of the first `m`
/// unsaturated levels.
pub fn slope_from_counts(lambdas: &[f64], counts: &[usize], saturated: &[bool], frac: f64) -> Result<Option<SlopeFit>> {
    if lambdas.len() < 3 {
        return Err(Error::WindowTooSmall { got: lambdas.len() });
    }
    let m = saturated.iter().position(|&s| s).unwrap_or(lambdas.len());
    if m < 3 {
        return Ok(None);
    }
    let w = ((frac * m as f64).ceil() as usize).clamp(3, m);
    let start = m - w;
    let xs = &lambdas[start..m];
    let ys: Vec<f64> = counts[start..m].iter().map(|&c| (c as f64).ln()).collect();
    let (slope, intercept, residual) = least_squares(xs, &ys);
    Ok(Some(SlopeFit { slope, intercept, residual, window: (start, m) }))
}

/// Per-ε count tables and slopes.
pub fn growth_slopes(family: &DistanceFamily, eps_grid: &[f64], cfg: &EstimatorConfig) -> Result<Vec<EpsTable>> {
    cfg.check()?;
    if eps_grid.is_empty() {
        return Err(Error::Config("empty ε grid".into()));
    }
    if let Some(&e) = eps_grid.iter().find(|&&e| !(e > 0.0)) {
        return Err(Error::NonPositiveEpsilon(e));
    }
    if family.grid.len() < 3 {
        return Err(Error::WindowTooSmall { got: family.grid.len() });
    }
    let n = family.n();
    let cap = cfg.cap(n);
    let levels = family.grid.len();
    // Levels past the first saturated one never enter the fit, so counting stops there.
    let counts: Vec<Vec<usize>> = eps_grid
        .par_iter()
        .map(|&eps| {
            let mut c = Vec::with_capacity(levels);
            for k in 0..levels {
                let v = greedy_packing_capped(family.level(k), eps, cap)?.len();
                c.push(v);
                if n > 1 && v >= cap {
                    break;
                }
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    eps_grid
        .iter()
        .zip(counts)
        .map(|(&epsilon, evaluated)| {
            let done = evaluated.len();
            let mut c = evaluated;
            c.resize(levels, cap);
            let saturated: Vec<bool> = c.iter().map(|&x| n > 1 && x >= cap).collect();
            let fit = slope_from_counts(&family.grid, &c, &saturated, cfg.fit_window)?;
            let rows = (0..levels)
                .map(|k| CountRow {
                    lambda: family.grid[k],
                    count: c[k],
                    ln_count: (c[k] as f64).ln(),
                    in_window: fit.as_ref().is_some_and(|f| k >= f.window.0 && k < f.window.1),
                    saturated: saturated[k],
                    evaluated: k < done,
                })
                .collect();
            Ok(EpsTable { epsilon, rows, fit })
        })
        .collect()
}

/// Slope change attributable to one count per cell of the window.
fn count_noise(t: &EpsTable) -> f64 {
    let Some(f) = &t.fit else { return 0.0 };
    let rows = &t.rows[f.window.0..f.window.1];
    let span = rows.last().unwrap().lambda - rows[0].lambda;
    let cmin = rows.iter().map(|r| r.count).min().unwrap_or(1) as f64;
    if span > 0.0 {
        2.0 * (1.0 + 1.0 / cmin).ln() / span
    } else {
        0.0
    }
}

/// `h = max` of the resolved per-ε slopes.
pub fn entropy_estimate(family: &DistanceFamily, eps_grid: &[f64], cfg: &EstimatorConfig) -> Result<EntropyReport> {
    let mut eps: Vec<f64> = eps_grid.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let per_eps = growth_slopes(family, &eps, cfg)?;
    let resolved: Vec<f64> = per_eps.iter().filter_map(|t| t.slope()).collect();
    if resolved.is_empty() {
        return Err(Error::Unresolved);
    }
    let h_estimate = resolved.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut diagnostics = Diagnostics {
        unresolved_eps: per_eps.iter().filter(|t| t.fit.is_none()).map(|t| t.epsilon).collect(),
        ..Default::default()
    };
    for w in per_eps.windows(2) {
        if let (Some(a), Some(b)) = (w[0].slope(), w[1].slope()) {
            if b < a - count_noise(&w[0]).max(count_noise(&w[1])) {
                diagnostics.eps_monotonicity_violations.push((w[0].epsilon, w[1].epsilon));
            }
        }
    }
    if !diagnostics.eps_monotonicity_violations.is_empty() {
        diagnostics.notes.push("slopes decrease as ε decreases: ε grid under-resolved".into());
    }
    if let Some(half) = &family.half_sample {
        match entropy_estimate(half, &eps, cfg) {
            Ok(r) => diagnostics.half_sample_h = Some(r.h_estimate),
            Err(e) => diagnostics.notes.push(format!("half-sample estimate failed: {e}")),
        }
    }
    Ok(EntropyReport { eps_grid: eps, per_eps, h_estimate, config: *cfg, diagnostics, claim_check: None })
}

/// Upper bound `m * a` on entropy under covering growth `A eps^-m` and `d_lambda <= e^(a lambda + b) d`.
pub fn finiteness_bound(m: f64, a: f64) -> Result<f64> {
    if m < 0.0 || m.is_nan() {
        return Err(Error::NegativeInput(format!("m = {m}")));
    }
    if a < 0.0 || a.is_nan() {
        return Err(Error::NegativeInput(format!("a = {a}")));
    }
    Ok(m * a)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthBoundCheck {
    pub a: f64,
    pub b: f64,
    pub holds: bool,
    /// Largest `d_lambda / (e^(a lambda + b) d)` over off-diagonal pairs.
    pub worst_ratio: f64,
}

/// Entrywise check of `d_lambda <= e^(a lambda + b) d` against the base distance.
pub fn check_growth_bound<D: Distances + ?Sized>(family: &DistanceFamily, base: &D, a: f64, b: f64) -> Result<GrowthBoundCheck> {
    let n = family.n();
    if base.len() != n {
        return Err(Error::Shape(format!("base has {} points, family {n}", base.len())));
    }
    let mut worst = 0.0f64;
    for (k, &lam) in family.grid.iter().enumerate() {
        let factor = (a * lam + b).exp();
        let level = family.level(k);
        let w = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d = base.dist(i, j);
                        let v = level.dist(i, j);
                        if d > 0.0 {
                            v / (factor * d)
                        } else if v > 0.0 {
                            f64::INFINITY
                        } else {
                            0.0
                        }
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max);
        worst = worst.max(w);
    }
    Ok(GrowthBoundCheck { a, b, holds: worst <= 1.0 + 1e-12, worst_ratio: worst })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BracketRow {
    pub epsilon: f64,
    pub cover: usize,
    pub packing: usize,
    pub cover_half: usize,
    pub greedy_packing: usize,
    /// `M(eps) <= N(eps) <= M(eps / 2)`.
    pub holds: bool,
    /// `M(eps) <= greedy <= N(eps)`.
    pub greedy_in_bracket: bool,
}

/// Exact bracket table for one distance.
pub fn bracket_check<D: Distances + ?Sized>(d: &D, eps_grid: &[f64], size_limit: usize) -> Result<Vec<BracketRow>> {
    eps_grid
        .iter()
        .map(|&eps| {
            let (cover, packing) = exact_counts(d, eps, size_limit)?;
            let (cover_half, _) = exact_counts(d, eps / 2.0, size_limit)?;
            let greedy = greedy_packing_count(d, eps)?;
            Ok(BracketRow {
                epsilon: eps,
                cover,
                packing,
                cover_half,
                greedy_packing: greedy,
                holds: cover <= packing && packing <= cover_half,
                greedy_in_bracket: cover <= greedy && greedy <= packing,
            })
        })
        .collect()
}

/// Estimates of the leafwise admissible distance `d_M` per ordered pair.
#[derive(Clone, Debug)]
pub struct AdmissibleTable {
    n: usize,
    values: Vec<Option<f64>>,
    pub n_classes: usize,
}

impl AdmissibleTable {
    pub fn from_graph(graph: &AdmissibleGraph) -> Self {
        let n = graph.partition.labels.len();
        let values = (0..n * n).map(|k| graph.distance(k / n, k % n)).collect();
        Self { n, values, n_classes: graph.partition.n_classes }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.values[x * self.n + y]
    }

    /// Largest finite entry; `None` when no pair is joined.
    pub fn diameter(&self) -> Option<f64> {
        self.values.iter().flatten().copied().reduce(f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlateauPair {
    pub x: usize,
    pub y: usize,
    pub d_hat: f64,
    /// Largest `d_r(x, y)` over the levels with `r >= d_hat + margin`.
    pub d_plateau: f64,
    /// Growth of `d_r(x, y)` across those levels.
    pub plateau_rise: f64,
    /// False when no grid level lies beyond `d_hat + margin`.
    pub reached: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlateauReport {
    pub tol: f64,
    pub margin: f64,
    pub pairs: Vec<PlateauPair>,
    pub pass_fraction: f64,
}

/// `d_r(x, y) <= 2 d_hat(x, y) + tol` and `d_r2 - d_r1 <= tol` for all
/// grid radii beyond `d_hat + margin`. Unreached pairs count as failures.
pub fn plateau_check(family: &DistanceFamily, table: &AdmissibleTable, tol: f64, margin: f64) -> Result<PlateauReport> {
    if table.n_classes > 1 {
        return Err(Error::NotControllable(table.n_classes));
    }
    let n = family.n();
    let mut pairs = Vec::new();
    for x in 0..n {
        for y in (x + 1)..n {
            let d_hat = table.get(x, y).ok_or(Error::NotControllable(table.n_classes))?;
            let beyond: Vec<f64> = family
                .grid
                .iter()
                .enumerate()
                .filter(|(_, &r)| r >= d_hat + margin)
                .map(|(k, _)| family.level(k).dist(x, y))
                .collect();
            let reached = !beyond.is_empty();
            let d_plateau = beyond.iter().copied().fold(0.0, f64::max);
            let low = beyond.iter().copied().fold(f64::INFINITY, f64::min);
            let plateau_rise = if reached { d_plateau - low } else { 0.0 };
            let passed = reached && d_plateau <= 2.0 * d_hat + tol && plateau_rise <= tol;
            pairs.push(PlateauPair { x, y, d_hat, d_plateau, plateau_rise, reached, passed });
        }
    }
    let pass_fraction = if pairs.is_empty() {
        1.0
    } else {
        pairs.iter().filter(|p| p.passed).count() as f64 / pairs.len() as f64
    };
    Ok(PlateauReport { tol, margin, pairs, pass_fraction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{bowen_family, synthetic_family};
    use crate::manifold::ManifoldModel;
    use crate::metric::{seeded_metric, FiniteMetricSpace};
    use proptest::prelude::*;

    fn circle(n: usize) -> FiniteMetricSpace {
        ManifoldModel::torus(1).grid_space(n).unwrap()
    }

    #[test]
    fn exact_exponential_counts() {
        let lam = [0.0, 1.0, 2.0, 3.0];
        let e = std::f64::consts::E;
        let ys: Vec<f64> = [1.0, e, e * e, e * e * e].iter().map(|c: &f64| c.ln()).collect();
        let (s, i, r) = least_squares(&lam, &ys);
        assert!((s - 1.0).abs() < 1e-12 && i.abs() < 1e-12 && r < 1e-12);
    }

    #[test]
    fn all_ones_give_zero_slope() {
        let f = slope_from_counts(&[0.0, 1.0, 2.0], &[1, 1, 1], &[false; 3], 0.5).unwrap().unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.window, (0, 3));
    }

    #[test]
    fn window_rules() {
        assert!(matches!(slope_from_counts(&[0.0, 1.0], &[1, 2], &[false; 2], 0.5), Err(Error::WindowTooSmall { got: 2 })));
        let sat = [false, false, true, true];
        assert_eq!(slope_from_counts(&[0.0, 1.0, 2.0, 3.0], &[1, 2, 4, 4], &sat, 0.5).unwrap(), None);
        let lam: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let counts: Vec<usize> = (0..10).map(|k| 1 << k).collect();
        let f = slope_from_counts(&lam, &counts, &[false; 10], 0.5).unwrap().unwrap();
        assert_eq!(f.window, (5, 10));
        assert!((f.slope - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_family_zero_slope() {
        let s = circle(64);
        let rot: Vec<usize> = (0..64).map(|i| (i + 5) % 64).collect();
        let f = bowen_family(&s, &rot, 6).unwrap();
        let r = entropy_estimate(&f, &[0.1, 0.05], &EstimatorConfig::default()).unwrap();
        assert_eq!(r.h_estimate, 0.0);
        assert_eq!(r.eps_grid, vec![0.1, 0.05]);
    }

    #[test]
    fn doubling_small_circle() {
        let s = circle(1 << 12);
        let dbl: Vec<usize> = (0..1 << 12).map(|i| (2 * i) % (1 << 12)).collect();
        let f = bowen_family(&s, &dbl, 8).unwrap();
        let r = entropy_estimate(&f, &[0.1, 0.05], &EstimatorConfig::default()).unwrap();
        assert!((r.h_estimate - 2f64.ln()).abs() < 0.1, "{}", r.h_estimate);
    }

    #[test]
    fn all_saturated_is_unresolved() {
        let s = circle(16);
        let f = synthetic_family(&s, &[0.0, 1.0, 2.0], |_, d| d).unwrap();
        assert!(matches!(entropy_estimate(&f, &[0.01], &EstimatorConfig::default()), Err(Error::Unresolved)));
        let short = synthetic_family(&s, &[0.0, 1.0], |_, d| d).unwrap();
        assert!(matches!(
            entropy_estimate(&short, &[0.1], &EstimatorConfig::default()),
            Err(Error::WindowTooSmall { got: 2 })
        ));
    }

    #[test]
    fn finiteness_examples() {
        assert_eq!(finiteness_bound(2.0, 0.5).unwrap(), 1.0);
        assert_eq!(finiteness_bound(3.0, 0.0).unwrap(), 0.0);
        assert!(matches!(finiteness_bound(-1.0, 0.5), Err(Error::NegativeInput(_))));
    }

    #[test]
    fn growth_bound_check() {
        let s = circle(32);
        let grid: Vec<f64> = (0..6).map(|k| k as f64).collect();
        let f = synthetic_family(&s, &grid, |l, d| ((0.3 * l).exp() * d).min(0.5)).unwrap();
        assert!(check_growth_bound(&f, &s, 0.3, 0.0).unwrap().holds);
        assert!(!check_growth_bound(&f, &s, 0.1, 0.0).unwrap().holds);
    }

    #[test]
    fn bracket_examples() {
        let one = FiniteMetricSpace::from_matrix(None, vec![vec![0.0]]).unwrap();
        let r = bracket_check(&one, &[0.5], 12).unwrap();
        assert_eq!((r[0].cover, r[0].packing, r[0].cover_half), (1, 1, 1));
        let two = FiniteMetricSpace::from_matrix(None, vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let r = bracket_check(&two, &[0.8], 12).unwrap();
        assert_eq!((r[0].cover, r[0].packing, r[0].cover_half), (2, 2, 2));
        assert!(r[0].holds && r[0].greedy_in_bracket);
        assert!(matches!(bracket_check(&circle(13), &[0.1], 12), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn reindex_halves_estimate() {
        let s = circle(1 << 10);
        let dbl: Vec<usize> = (0..1 << 10).map(|i| (2 * i) % (1 << 10)).collect();
        let f = bowen_family(&s, &dbl, 8).unwrap();
        let cfg = EstimatorConfig::default();
        let a = entropy_estimate(&f, &[0.1], &cfg).unwrap();
        let b = entropy_estimate(&crate::family::reindex_scale(&f, 2.0).unwrap(), &[0.1], &cfg).unwrap();
        assert_eq!(a.per_eps[0].rows.iter().map(|r| r.count).collect::<Vec<_>>(),
                   b.per_eps[0].rows.iter().map(|r| r.count).collect::<Vec<_>>());
        assert!((b.h_estimate - a.h_estimate / 2.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn exact_packing_is_monotone_in_lambda(seed in 0u64..1000, rate in 0.0f64..1.0, eps in 0.1f64..0.8) {
            let s = seeded_metric(10, seed);
            let grid: Vec<f64> = (0..5).map(|k| k as f64).collect();
            let f = synthetic_family(&s, &grid, |l, d| (rate * l).exp() * d).unwrap();
            for k in 1..grid.len() {
                let (_, a) = exact_counts(f.level(k - 1), eps, 12).unwrap();
                let (_, b) = exact_counts(f.level(k), eps, 12).unwrap();
                prop_assert!(b >= a);
            }
        }

        #[test]
        fn reindexing_scales_slopes(seed in 0u64..1000, c in 0.1f64..10.0) {
            let s = seeded_metric(20, seed);
            let grid: Vec<f64> = (0..6).map(|k| k as f64).collect();
            let f = synthetic_family(&s, &grid, |l, d| (0.2 * l).exp() * d).unwrap();
            let cfg = EstimatorConfig { fit_window: 0.5, saturation: 1.0 };
            if let Ok(a) = entropy_estimate(&f, &[0.3, 0.6], &cfg) {
                let b = entropy_estimate(&crate::family::reindex_scale(&f, c).unwrap(), &[0.3, 0.6], &cfg).unwrap();
                prop_assert!((b.h_estimate - a.h_estimate / c).abs() <= 1e-9 * (1.0 + a.h_estimate.abs()));
            }
        }
    }
}
