//! Registry of ready-to-run experiments: model, family, estimator grid and
//! the expected outcome.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::curves::{
    bundle_grid, AdmissibleGraph, AnchorFn, AnchoredSystem, ControlLibrary, ControlNorm, ConnectorTable, Filtration,
    Partition, ProbeOptions, SamplingOptions, SteeringOptions,
};
use crate::error::{Error, Result};
use crate::estimator::{
    entropy_estimate, plateau_check, AdmissibleTable, ClaimCheck, EntropyReport, EstimatorConfig, PlateauReport,
};
use crate::family::{
    bowen_family, curve_family, flow_family, product_family, reindex_scale, BundleGrid, DistanceFamily,
};
use crate::manifold::ManifoldModel;
use crate::metric::{exact_counts, BaseMetric, Distances, FiniteMetricSpace, EXACT_HARD_LIMIT};

/// A parameter value; the default fixes the type accepted by overrides.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Int(u64),
    Num(f64),
    List(Vec<f64>),
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Num(v) => write!(f, "{v:?}"),
            Value::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

/// Effective scenario parameters, keyed by dotted names.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Params(BTreeMap<String, Value>);

impl Params {
    fn with(mut self, key: &str, v: Value) -> Self {
        self.0.insert(key.to_string(), v);
        self
    }

    fn int_(self, key: &str, v: u64) -> Self {
        self.with(key, Value::Int(v))
    }

    fn num_(self, key: &str, v: f64) -> Self {
        self.with(key, Value::Num(v))
    }

    fn list_(self, key: &str, v: &[f64]) -> Self {
        self.with(key, Value::List(v.to_vec()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    pub fn is_numeric(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    /// Replaces `key` with `raw` parsed as the type of its default.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let bad = |reason: String| Error::BadOverride { key: key.to_string(), reason };
        let slot = self.0.get_mut(key).ok_or_else(|| bad("no such parameter for this scenario".into()))?;
        let raw = raw.trim();
        let num = |s: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| bad(format!("`{s}` is not a number")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(bad(format!("{v} must be finite and nonnegative")));
            }
            Ok(v)
        };
        *slot = match slot {
            Value::Int(_) => Value::Int(raw.parse().map_err(|_| bad(format!("`{raw}` is not a nonnegative integer")))?),
            Value::Num(_) => Value::Num(num(raw)?),
            Value::List(_) => {
                let inner = raw.trim_start_matches('[').trim_end_matches(']');
                let vals = inner.split(',').map(num).collect::<Result<Vec<_>>>()?;
                if vals.is_empty() || vals.iter().any(|&v| v <= 0.0) {
                    return Err(bad("list entries must be positive".into()));
                }
                Value::List(vals)
            }
        };
        Ok(())
    }

    fn int(&self, key: &str) -> usize {
        match self.0.get(key) {
            Some(Value::Int(v)) => *v as usize,
            other => panic!("parameter {key} is {other:?}, expected an integer"),
        }
    }

    fn num(&self, key: &str) -> f64 {
        match self.0.get(key) {
            Some(Value::Num(v)) => *v,
            Some(Value::Int(v)) => *v as f64,
            other => panic!("parameter {key} is {other:?}, expected a number"),
        }
    }

    fn list(&self, key: &str) -> Vec<f64> {
        match self.0.get(key) {
            Some(Value::List(v)) => v.clone(),
            other => panic!("parameter {key} is {other:?}, expected a list"),
        }
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let v = self.num(key);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::BadOverride { key: key.into(), reason: format!("{v} must be positive") })
        }
    }

    fn count(&self, key: &str) -> Result<usize> {
        let v = self.int(key);
        if v > 0 {
            Ok(v)
        } else {
            Err(Error::BadOverride { key: key.into(), reason: "must be at least 1".into() })
        }
    }

    fn estimator(&self) -> Result<(Vec<f64>, EstimatorConfig)> {
        let cfg = EstimatorConfig {
            fit_window: self.positive("estimator.fit_window")?,
            saturation: self.positive("estimator.saturation")?,
        };
        Ok((self.list("estimator.eps"), cfg))
    }
}

/// What a scenario run is expected to show.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Expected {
    /// `lo <= quantity <= hi`.
    Interval { quantity: String, lo: f64, hi: f64 },
    /// `h <= tol`.
    ZeroSlope { tol: f64 },
    /// Lifted entropy at least the base entropy, and exact count domination.
    MonotonePair { tol: f64 },
    /// `|h(a x b) - h(a) - h(b)| <= tol`.
    AdditivityPair { tol: f64 },
    /// Diagnostic run, no target.
    None,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub manifold: &'static str,
    pub family: &'static str,
    pub target_claim: &'static str,
}

pub const NAMES: [&str; 12] = [
    "map_doubling",
    "map_cat",
    "map_rotation",
    "flow_linear_torus",
    "dist_full_rank",
    "dist_heisenberg",
    "fol_linear_torus",
    "fol_sphere_latitude",
    "submersion_lift",
    "product_pair",
    "scaled_finsler",
    "sing_flow_pair",
];

pub fn info(name: &str) -> Result<ScenarioInfo> {
    let (manifold, family, target_claim) = match name {
        "map_doubling" => ("circle", "bowen", "entropy of the doubling map is ln 2"),
        "map_cat" => ("2-torus", "bowen", "entropy of the cat map is ln((3 + sqrt 5) / 2)"),
        "map_rotation" => ("circle", "bowen", "isometries have zero entropy"),
        "flow_linear_torus" => ("2-torus", "flow", "linear flows of the torus have zero entropy"),
        "dist_full_rank" => ("2-torus", "curve bundle", "a controllable distribution has zero Finsler entropy"),
        "dist_heisenberg" => (
            "3-torus",
            "curve bundle",
            "a bracket-generating distribution with one leaf has zero Finsler entropy",
        ),
        "fol_linear_torus" => ("2-torus", "curve bundle", "a regular Riemannian foliation has zero entropy"),
        "fol_sphere_latitude" => (
            "2-sphere",
            "curve bundle",
            "the singular foliation by latitude circles has zero Finsler entropy",
        ),
        "submersion_lift" => ("2-torus over circle", "bowen", "entropy does not drop under lifting along a submersion"),
        "product_pair" => ("circle x circle", "bowen product", "entropy of a product is the sum of entropies"),
        "scaled_finsler" => ("2-torus", "curve bundle", "scaling the norm by c rescales the family parameter by c"),
        "sing_flow_pair" => (
            "2-torus",
            "flow and curve bundle",
            "flow entropy and bundle entropy of a field with an isolated zero",
        ),
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    let name = NAMES.iter().find(|n| **n == name).unwrap();
    Ok(ScenarioInfo { name, manifold, family, target_claim })
}

fn estimator_defaults(p: Params, eps: &[f64]) -> Params {
    p.list_("estimator.eps", eps).num_("estimator.fit_window", 0.5).num_("estimator.saturation", 0.5)
}

fn curve_defaults(p: Params, n_curves: u64) -> Params {
    p.int_("curves.n_curves", n_curves).int_("curves.n_segments", 8).int_("curves.intervals", 64)
}

fn probe_defaults(p: Params, r_diam: f64, eps_link: f64) -> Params {
    p.num_("probe.r_diam", r_diam).int_("probe.n", 16).num_("probe.eps_link", eps_link)
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Default parameters of `name`.
pub fn defaults(name: &str) -> Result<Params> {
    let p = Params::default();
    Ok(match name {
        "map_doubling" => estimator_defaults(p.int_("grid.n", 1024).int_("family.n_max", 10), &[0.1, 0.05, 0.02]),
        "map_cat" => estimator_defaults(p.int_("grid.n", 128).int_("family.n_max", 8), &[0.2, 0.1, 0.05]),
        "map_rotation" => estimator_defaults(
            p.int_("grid.n", 256).int_("family.n_max", 10).num_("map.rotation", GOLDEN).num_("claim.tol", 0.05),
            &[0.1, 0.05, 0.02],
        ),
        "flow_linear_torus" => estimator_defaults(
            p.int_("grid.n", 20)
                .num_("family.r_max", 10.0)
                .int_("family.r_steps", 11)
                .num_("family.dt", 0.01)
                .num_("field.slope", std::f64::consts::SQRT_2 - 1.0)
                .num_("claim.tol", 0.05),
            &[0.2, 0.1, 0.05],
        ),
        "dist_full_rank" => estimator_defaults(
            probe_defaults(
                curve_defaults(p.int_("grid.n", 8).num_("family.r_max_diam", 4.0).int_("family.r_steps", 9), 32),
                2.0,
                0.08,
            )
            .int_("steering.segments", 4)
            .num_("plateau.tol_fraction", 0.15)
            .num_("plateau.margin", 0.0)
            .num_("plateau.min_pass", 0.95)
            .num_("claim.tol", 0.05),
            &[0.8, 0.6, 0.45],
        ),
        "dist_heisenberg" => estimator_defaults(
            probe_defaults(
                curve_defaults(p.int_("grid.n", 4).num_("family.r_max_diam", 4.0).int_("family.r_steps", 9), 32),
                2.0,
                0.15,
            )
            .int_("steering.segments", 4)
            .num_("plateau.tol_fraction", 0.15)
            .num_("plateau.margin", 0.0)
            .num_("plateau.min_pass", 0.95)
            .num_("claim.tol", 0.05),
            &[1.0, 0.8, 0.6],
        ),
        "fol_linear_torus" => estimator_defaults(
            probe_defaults(
                curve_defaults(p.int_("grid.n", 8).num_("family.r_max", 4.0).int_("family.r_steps", 9), 16),
                2.0,
                0.08,
            )
            .num_("field.slope", GOLDEN)
            .num_("claim.tol", 0.05),
            &[0.8, 0.6, 0.45],
        ),
        "fol_sphere_latitude" => estimator_defaults(
            curve_defaults(
                p.int_("grid.rings", 6)
                    .int_("grid.ring_points", 12)
                    .num_("family.r_max", 2.0 * PI)
                    .int_("family.r_steps", 9),
                16,
            )
            .num_("probe.r", 2.0 * PI)
            .int_("probe.n", 16)
            .num_("probe.eps_link", 0.1)
            .num_("claim.tol", 0.05),
            &[1.2, 0.9, 0.7],
        ),
        "submersion_lift" => estimator_defaults(
            p.int_("grid.base", 256)
                .int_("grid.fiber", 4)
                .int_("family.n_max", 8)
                .int_("exact.base", 8)
                .int_("exact.fiber", 3)
                .int_("exact.n_max", 3)
                .list_("exact.eps", &[0.3, 0.2, 0.1])
                .num_("claim.tol", 0.05),
            &[0.1, 0.05, 0.02],
        ),
        "product_pair" => estimator_defaults(
            p.int_("grid.a", 256)
                .int_("grid.b", 64)
                .int_("family.n_max", 8)
                .num_("map.rotation", GOLDEN)
                .num_("claim.tol", 0.1),
            &[0.1, 0.05, 0.02],
        ),
        "scaled_finsler" => estimator_defaults(
            curve_defaults(p.int_("grid.n", 6).num_("family.r_max_diam", 4.0).int_("family.r_steps", 5), 16)
                .int_("steering.segments", 4)
                .num_("norm.scale", 2.0)
                .num_("claim.tol", 1e-9),
            &[0.8, 0.6, 0.45],
        ),
        "sing_flow_pair" => estimator_defaults(
            curve_defaults(
                p.int_("grid.n", 12)
                    .num_("family.r_max", 8.0)
                    .int_("family.r_steps", 9)
                    .num_("family.dt", 0.01)
                    .num_("field.slope", GOLDEN),
                16,
            ),
            &[0.3, 0.2, 0.1],
        ),
        other => return Err(Error::UnknownScenario(other.to_string())),
    })
}

/// The expected outcome of `name` under `params`.
pub fn expected(name: &str, params: &Params) -> Result<Expected> {
    Ok(match name {
        "map_doubling" => Expected::Interval { quantity: "h".into(), lo: 0.60, hi: 0.78 },
        "map_cat" => Expected::Interval { quantity: "h".into(), lo: 0.80, hi: 1.10 },
        "map_rotation" | "flow_linear_torus" | "dist_full_rank" | "dist_heisenberg" | "fol_linear_torus"
        | "fol_sphere_latitude" => Expected::ZeroSlope { tol: params.num("claim.tol") },
        "submersion_lift" => Expected::MonotonePair { tol: params.num("claim.tol") },
        "product_pair" => Expected::AdditivityPair { tol: params.num("claim.tol") },
        "scaled_finsler" => {
            Expected::Interval { quantity: "max_entry_diff".into(), lo: 0.0, hi: params.num("claim.tol") }
        }
        "sing_flow_pair" => Expected::None,
        other => return Err(Error::UnknownScenario(other.to_string())),
    })
}

/// Companion data needed by the evaluation of some scenarios.
#[derive(Clone, Debug)]
pub enum Companion {
    None,
    Plateau { table: AdmissibleTable, tol: f64, margin: f64, min_pass: f64 },
    Leaves { partition: Partition, analytic: Option<Vec<usize>> },
    Lift { base: DistanceFamily, exact_lift: DistanceFamily, exact_base: DistanceFamily, exact_eps: Vec<f64> },
    Product { a: DistanceFamily, b: DistanceFamily },
    Scaled { scale: f64, reindexed: DistanceFamily, resampled: DistanceFamily },
    Pair { bundle: DistanceFamily },
}

/// A constructed scenario.
#[derive(Clone, Debug)]
pub struct Built {
    pub info: ScenarioInfo,
    pub params: Params,
    pub seed: u64,
    pub expected: Expected,
    pub space: FiniteMetricSpace,
    pub family: DistanceFamily,
    pub quantities: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub companion: Companion,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Summary of a plateau report with the worst failing pairs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlateauSummary {
    pub tol: f64,
    pub pairs: usize,
    pub pass_fraction: f64,
    pub unreached: usize,
    pub worst: Vec<crate::estimator::PlateauPair>,
}

impl From<&PlateauReport> for PlateauSummary {
    fn from(r: &PlateauReport) -> Self {
        let mut failing: Vec<_> = r.pairs.iter().filter(|p| !p.passed).cloned().collect();
        failing.sort_by(|a, b| {
            let ea = a.d_plateau - 2.0 * a.d_hat;
            let eb = b.d_plateau - 2.0 * b.d_hat;
            eb.total_cmp(&ea).then(a.x.cmp(&b.x)).then(a.y.cmp(&b.y))
        });
        failing.truncate(10);
        Self {
            tol: r.tol,
            pairs: r.pairs.len(),
            pass_fraction: r.pass_fraction,
            unreached: r.pairs.iter().filter(|p| !p.reached).count(),
            worst: failing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub report: EntropyReport,
    pub companion_reports: BTreeMap<String, EntropyReport>,
    pub quantities: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub plateau: Option<PlateauSummary>,
    pub passed: bool,
}

fn circle_map_space(n: usize) -> Result<FiniteMetricSpace> {
    ManifoldModel::torus(1).grid_space(n)
}

/// Rotation by the grid step nearest to `alpha`; returns the shift and the snap displacement.
fn snapped_rotation(n: usize, alpha: f64) -> (usize, f64) {
    let k = (alpha * n as f64).round() as usize % n;
    (k, (alpha - k as f64 / n as f64).abs())
}

fn linear_r_grid(r_max: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::BadOverride { key: "family.r_steps".into(), reason: "must be at least 1".into() });
    }
    if steps == 1 {
        return Ok(vec![0.0]);
    }
    Ok((0..steps).map(|k| r_max * k as f64 / (steps - 1) as f64).collect())
}

/// Identity anchor on the flat `dim`-torus with the Euclidean norm.
pub fn flat_system(dim: usize) -> AnchoredSystem {
    let anchor: Arc<AnchorFn> = Arc::new(|_x, u, out| out.copy_from_slice(u));
    AnchoredSystem::new(ManifoldModel::torus(dim), dim, anchor, ControlNorm::euclidean(dim), "full rank")
        .expect("flat system")
}

/// `X = d/dx`, `Y = d/dy + sin(2 pi x) d/dz` with `F(u)^2 = u1^2 + 2 u2^2`,
/// so that the base speed never exceeds `F`.
pub fn heisenberg_system() -> AnchoredSystem {
    let anchor: Arc<AnchorFn> = Arc::new(|x, u, out| {
        out[0] = u[0];
        out[1] = u[1];
        out[2] = (2.0 * PI * x[0]).sin() * u[1];
    });
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
    AnchoredSystem::new(
        ManifoldModel::torus(3),
        2,
        anchor,
        ControlNorm::quadratic(q, "diag(1,2)").expect("positive definite"),
        "periodic heisenberg",
    )
    .expect("heisenberg system")
}

/// One generator `(1, slope) / |(1, slope)|` on the 2-torus.
fn line_system(slope: f64) -> AnchoredSystem {
    let norm = (1.0 + slope * slope).sqrt();
    let (a, b) = (1.0 / norm, slope / norm);
    let anchor: Arc<AnchorFn> = Arc::new(move |_x, u, out| {
        out[0] = a * u[0];
        out[1] = b * u[0];
    });
    AnchoredSystem::new(ManifoldModel::torus(2), 1, anchor, ControlNorm::euclidean(1), "irrational line")
        .expect("line system")
}

/// Smooth bump vanishing only at the origin of the torus.
fn bump(x: &[f64]) -> f64 {
    (1.0 - (2.0 * PI * x[0]).cos()) * (1.0 - (2.0 * PI * x[1]).cos()) / 4.0
}

/// Latitude rings with golden-angle azimuth offsets, north pole first and
/// south pole last. Returns points and ring labels.
pub fn sphere_rings(rings: usize, per_ring: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let mut pts = vec![vec![0.0, 0.0, 1.0]];
    let mut labels = vec![0];
    for k in 1..=rings {
        let theta = PI * k as f64 / (rings + 1) as f64;
        for j in 0..per_ring {
            let phi = 2.0 * PI * j as f64 / per_ring as f64 + k as f64 * golden_angle;
            pts.push(vec![theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]);
            labels.push(k);
        }
    }
    pts.push(vec![0.0, 0.0, -1.0]);
    labels.push(rings + 1);
    (pts, labels)
}

fn azimuthal_system() -> AnchoredSystem {
    let anchor: Arc<AnchorFn> = Arc::new(|x, u, out| {
        out[0] = -x[1] * u[0];
        out[1] = x[0] * u[0];
        out[2] = 0.0;
    });
    AnchoredSystem::new(ManifoldModel::Sphere { radius: 1.0 }, 1, anchor, ControlNorm::euclidean(1), "azimuthal")
        .expect("azimuthal system")
}

/// Curve family with its half-sample companion.
pub struct CurveSetup<'a> {
    pub system: &'a AnchoredSystem,
    pub space: &'a FiniteMetricSpace,
    pub r_grid: Vec<f64>,
    pub n_curves: usize,
    pub n_segments: usize,
    pub intervals: usize,
    pub seed: u64,
    pub filtration: Filtration,
    pub connectors: Option<Arc<ConnectorTable>>,
}

impl CurveSetup<'_> {
    pub fn build(&self) -> Result<DistanceFamily> {
        let library = ControlLibrary::generate(&self.system.norm, self.n_curves, self.n_segments, self.seed)?;
        let opts = SamplingOptions { intervals: self.intervals, ..SamplingOptions::default() };
        let bundles = bundle_grid(self.system, self.space, &self.r_grid, &library, self.filtration, &opts)?;
        let grid = BundleGrid {
            r_grid: self.r_grid.clone(),
            bundles,
            metric: self.space.base_metric().ok_or_else(|| Error::Shape("curve families need coordinates".into()))?,
            connectors: self.connectors.clone(),
        };
        let mut family = curve_family(self.space, &grid)?;
        if self.n_curves >= 2 {
            let half = curve_family(self.space, &grid.truncated(self.n_curves / 2))?;
            family.half_sample = Some(Arc::new(half));
        }
        Ok(family)
    }
}

fn steering_table(system: &AnchoredSystem, space: &FiniteMetricSpace, params: &Params, seed: u64) -> Arc<ConnectorTable> {
    let opts = SteeringOptions { n_segments: params.int("steering.segments").max(1), seed, ..SteeringOptions::default() };
    Arc::new(ConnectorTable::build(system, space, &opts, |_, _| true))
}

fn curve_setup_from<'a>(
    system: &'a AnchoredSystem,
    space: &'a FiniteMetricSpace,
    r_grid: Vec<f64>,
    params: &Params,
    seed: u64,
    connectors: Option<Arc<ConnectorTable>>,
) -> Result<CurveSetup<'a>> {
    Ok(CurveSetup {
        system,
        space,
        r_grid,
        n_curves: params.int("curves.n_curves"),
        n_segments: params.count("curves.n_segments")?,
        intervals: params.count("curves.intervals")?,
        seed,
        filtration: Filtration::SpeedBounded,
        connectors,
    })
}

/// Controllable distribution scenario: curve family, connectors and plateau table.
fn build_controllable(
    system: &AnchoredSystem,
    space: FiniteMetricSpace,
    params: &Params,
    seed: u64,
) -> Result<(FiniteMetricSpace, DistanceFamily, BTreeMap<String, f64>, Companion)> {
    let diam = space.diameter();
    let connectors = steering_table(system, &space, params, seed);
    let probe = ProbeOptions {
        r_probe: params.num("probe.r_diam") * diam,
        n_probe: params.count("probe.n")?,
        eps_link: params.positive("probe.eps_link")?,
        n_segments: params.count("curves.n_segments")?,
        seed: seed.wrapping_add(1),
    };
    let graph = AdmissibleGraph::build_with_edges(system, &space, &probe, &connectors.edges())?;
    let table = AdmissibleTable::from_graph(&graph);
    // The budget is a curve length, so it scales with the admissible diameter
    // when that exceeds the ambient one.
    let adm_diam = table.diameter().unwrap_or(diam);
    let r_grid = linear_r_grid(params.num("family.r_max_diam") * diam.max(adm_diam), params.count("family.r_steps")?)?;
    let family = curve_setup_from(system, &space, r_grid, params, seed, Some(connectors.clone()))?.build()?;
    let mut q = BTreeMap::new();
    q.insert("diameter".into(), diam);
    q.insert("admissible_diameter".into(), adm_diam);
    q.insert("connector_coverage".into(), connectors.coverage());
    q.insert("classes".into(), graph.partition.n_classes as f64);
    if let Some(w) = family.notes.worst_triangle_excess {
        q.insert("worst_triangle_excess".into(), w);
    }
    let companion = Companion::Plateau {
        table,
        tol: params.num("plateau.tol_fraction") * diam,
        margin: params.num("plateau.margin") * diam,
        min_pass: params.num("plateau.min_pass"),
    };
    Ok((space, family, q, companion))
}

/// Builds `name` with `overrides` applied on top of the defaults.
pub fn build_scenario(name: &str, overrides: &[(String, String)], seed: u64) -> Result<Built> {
    let info = info(name)?;
    let mut params = defaults(name)?;
    for (k, v) in overrides {
        params.set(k, v)?;
    }
    build_with_params(info, params, seed)
}

pub fn build_with_params(info: ScenarioInfo, params: Params, seed: u64) -> Result<Built> {
    let name = info.name;
    let expected = expected(name, &params)?;
    let mut quantities = BTreeMap::new();
    let mut notes = Vec::new();
    let mut companion = Companion::None;
    let (space, family) = match name {
        "map_doubling" => {
            let n = params.count("grid.n")?;
            let space = circle_map_space(n)?;
            let map: Vec<usize> = (0..n).map(|i| (2 * i) % n).collect();
            quantities.insert("snap_displacement".into(), 0.0);
            let f = bowen_family(&space, &map, params.int("family.n_max"))?;
            (space, f)
        }
        "map_cat" => {
            let n = params.count("grid.n")?;
            let space = ManifoldModel::torus(2).grid_space(n)?;
            // (a, b) -> (2a + b, a + b) mod n on the rational grid; exact.
            let map: Vec<usize> = (0..n * n)
                .map(|idx| {
                    let (a, b) = (idx / n, idx % n);
                    ((2 * a + b) % n) * n + (a + b) % n
                })
                .collect();
            quantities.insert("snap_displacement".into(), 0.0);
            let f = bowen_family(&space, &map, params.int("family.n_max"))?;
            (space, f)
        }
        "map_rotation" => {
            let n = params.count("grid.n")?;
            let space = circle_map_space(n)?;
            let (k, snap) = snapped_rotation(n, params.num("map.rotation"));
            quantities.insert("snap_displacement".into(), snap);
            quantities.insert("half_grid_pitch".into(), 0.5 / n as f64);
            notes.push(format!("rotation snapped to {k}/{n}"));
            let map: Vec<usize> = (0..n).map(|i| (i + k) % n).collect();
            let f = bowen_family(&space, &map, params.int("family.n_max"))?;
            (space, f)
        }
        "flow_linear_torus" => {
            let n = params.count("grid.n")?;
            let space = ManifoldModel::torus(2).grid_space(n)?;
            let slope = params.num("field.slope");
            let field = move |_x: &[f64], out: &mut [f64]| {
                out[0] = 1.0;
                out[1] = slope;
            };
            let r_grid = linear_r_grid(params.num("family.r_max"), params.count("family.r_steps")?)?;
            let f = flow_family(&space, &field, &r_grid, params.positive("family.dt")?)?;
            (space, f)
        }
        "dist_full_rank" => {
            let system = flat_system(2);
            let space = ManifoldModel::torus(2).grid_space(params.count("grid.n")?)?;
            let (space, f, q, c) = build_controllable(&system, space, &params, seed)?;
            quantities.extend(q);
            companion = c;
            (space, f)
        }
        "dist_heisenberg" => {
            let system = heisenberg_system();
            let space = ManifoldModel::torus(3).grid_space(params.count("grid.n")?)?;
            let (space, f, q, c) = build_controllable(&system, space, &params, seed)?;
            quantities.extend(q);
            companion = c;
            (space, f)
        }
        "fol_linear_torus" => {
            let system = line_system(params.num("field.slope"));
            let space = ManifoldModel::torus(2).grid_space(params.count("grid.n")?)?;
            let r_grid = linear_r_grid(params.num("family.r_max"), params.count("family.r_steps")?)?;
            let f = curve_setup_from(&system, &space, r_grid, &params, seed, None)?.build()?;
            let probe = ProbeOptions {
                r_probe: params.num("probe.r_diam") * space.diameter(),
                n_probe: params.count("probe.n")?,
                eps_link: params.positive("probe.eps_link")?,
                n_segments: params.count("curves.n_segments")?,
                seed: seed.wrapping_add(1),
            };
            let partition = AdmissibleGraph::build(&system, &space, &probe)?.partition;
            quantities.insert("classes".into(), partition.n_classes as f64);
            companion = Companion::Leaves { partition, analytic: None };
            (space, f)
        }
        "fol_sphere_latitude" => {
            let system = azimuthal_system();
            let (pts, analytic) = sphere_rings(params.count("grid.rings")?, params.count("grid.ring_points")?);
            let space = FiniteMetricSpace::from_coords(pts, BaseMetric::Sphere { radius: 1.0 })?;
            let r_grid = linear_r_grid(params.num("family.r_max"), params.count("family.r_steps")?)?;
            let f = curve_setup_from(&system, &space, r_grid, &params, seed, None)?.build()?;
            let probe = ProbeOptions {
                r_probe: params.positive("probe.r")?,
                n_probe: params.count("probe.n")?,
                eps_link: params.positive("probe.eps_link")?,
                n_segments: params.count("curves.n_segments")?,
                seed: seed.wrapping_add(1),
            };
            let partition = AdmissibleGraph::build(&system, &space, &probe)?.partition;
            quantities.insert("classes".into(), partition.n_classes as f64);
            companion = Companion::Leaves { partition, analytic: Some(analytic) };
            (space, f)
        }
        "submersion_lift" => {
            let lift_pair = |nb: usize, nf: usize, n_max: usize| -> Result<(FiniteMetricSpace, DistanceFamily, DistanceFamily)> {
                let base = circle_map_space(nb)?;
                let pts: Vec<Vec<f64>> = (0..nb * nf)
                    .map(|idx| vec![(idx / nf) as f64 / nb as f64, (idx % nf) as f64 / nf as f64])
                    .collect();
                let lift = FiniteMetricSpace::from_coords(pts, BaseMetric::Torus { circumference: 1.0 })?;
                let base_map: Vec<usize> = (0..nb).map(|i| (2 * i) % nb).collect();
                let lift_map: Vec<usize> = (0..nb * nf).map(|idx| ((2 * (idx / nf)) % nb) * nf + idx % nf).collect();
                Ok((lift.clone(), bowen_family(&lift, &lift_map, n_max)?, bowen_family(&base, &base_map, n_max)?))
            };
            let (lift, f, base) = lift_pair(params.count("grid.base")?, params.count("grid.fiber")?, params.int("family.n_max"))?;
            let (_, exact_lift, exact_base) =
                lift_pair(params.count("exact.base")?, params.count("exact.fiber")?, params.int("exact.n_max"))?;
            companion = Companion::Lift { base, exact_lift, exact_base, exact_eps: params.list("exact.eps") };
            (lift, f)
        }
        "product_pair" => {
            let (na, nb) = (params.count("grid.a")?, params.count("grid.b")?);
            let (sa, sb) = (circle_map_space(na)?, circle_map_space(nb)?);
            let n_max = params.int("family.n_max");
            let dbl: Vec<usize> = (0..na).map(|i| (2 * i) % na).collect();
            let (k, snap) = snapped_rotation(nb, params.num("map.rotation"));
            quantities.insert("snap_displacement".into(), snap);
            let rot: Vec<usize> = (0..nb).map(|i| (i + k) % nb).collect();
            let fa = bowen_family(&sa, &dbl, n_max)?;
            let fb = bowen_family(&sb, &rot, n_max)?;
            let f = product_family(&fa, &fb)?;
            let space = crate::metric::max_combine(&sa, &sb);
            companion = Companion::Product { a: fa, b: fb };
            (space, f)
        }
        "scaled_finsler" => {
            let system = flat_system(2);
            let c = params.positive("norm.scale")?;
            let scaled = system.with_norm(system.norm.scaled(c)?)?;
            let space = ManifoldModel::torus(2).grid_space(params.count("grid.n")?)?;
            let r_grid = linear_r_grid(params.num("family.r_max_diam") * space.diameter(), params.count("family.r_steps")?)?;
            let f = curve_setup_from(&system, &space, r_grid.clone(), &params, seed, Some(steering_table(&system, &space, &params, seed)))?
                .build()?;
            let r_scaled: Vec<f64> = r_grid.iter().map(|r| r * c).collect();
            let resampled = curve_setup_from(&scaled, &space, r_scaled, &params, seed, Some(steering_table(&scaled, &space, &params, seed)))?
                .build()?;
            let reindexed = reindex_scale(&f, c)?;
            companion = Companion::Scaled { scale: c, reindexed, resampled };
            (space, f)
        }
        "sing_flow_pair" => {
            let slope = params.num("field.slope");
            let space = ManifoldModel::torus(2).grid_space(params.count("grid.n")?)?;
            let field = move |x: &[f64], out: &mut [f64]| {
                let phi = bump(x);
                out[0] = phi;
                out[1] = phi * slope;
            };
            let r_grid = linear_r_grid(params.num("family.r_max"), params.count("family.r_steps")?)?;
            let f = flow_family(&space, &field, &r_grid, params.positive("family.dt")?)?;
            let anchor: Arc<AnchorFn> = Arc::new(move |x, u, out| {
                let phi = bump(x);
                out[0] = phi * u[0];
                out[1] = phi * slope * u[0];
            });
            let system = AnchoredSystem::new(ManifoldModel::torus(2), 1, anchor, ControlNorm::euclidean(1), "bump line")?;
            let bundle = curve_setup_from(&system, &space, r_grid, &params, seed, None)?.build()?;
            companion = Companion::Pair { bundle };
            (space, f)
        }
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    // Lazy orbit, trajectory and product levels are monotone by construction.
    if family.is_dense() {
        quantities.insert("monotonicity_defect".into(), family.monotonicity_defect());
    }
    if family.notes.monotone_repairs > 0 {
        notes.push(format!("running max raised {} entries", family.notes.monotone_repairs));
    }
    Ok(Built { info, params, seed, expected, space, family, quantities, notes, companion })
}

fn claim(expected: &Expected, value: f64, passed: bool) -> ClaimCheck {
    let text = match expected {
        Expected::Interval { quantity, lo, hi } => format!("{quantity} in [{lo}, {hi}]"),
        Expected::ZeroSlope { tol } => format!("h <= {tol}"),
        Expected::MonotonePair { tol } => format!("h(lift) >= h(base) - {tol} and M(lift, eps) >= M(base, eps)"),
        Expected::AdditivityPair { tol } => format!("|h(a x b) - h(a) - h(b)| <= {tol}"),
        Expected::None => "diagnostic".to_string(),
    };
    ClaimCheck { expected: text, value, passed }
}

fn max_entry_diff(a: &DistanceFamily, b: &DistanceFamily) -> f64 {
    if a.grid.len() != b.grid.len() || a.n() != b.n() {
        return f64::INFINITY;
    }
    let n = a.n();
    let mut worst = 0.0f64;
    for k in 0..a.grid.len() {
        worst = worst.max((a.grid[k] - b.grid[k]).abs());
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((a.level(k).dist(i, j) - b.level(k).dist(i, j)).abs());
            }
        }
    }
    worst
}

/// Runs the estimator and the scenario-specific checks.
pub fn evaluate(built: &Built) -> Result<Outcome> {
    let (eps, cfg) = built.params.estimator()?;
    let mut report = entropy_estimate(&built.family, &eps, &cfg)?;
    report.diagnostics.notes.extend(built.notes.iter().cloned());
    let h = report.h_estimate;
    let mut quantities = built.quantities.clone();
    quantities.insert("h".into(), h);
    let mut checks = Vec::new();
    let mut companion_reports = BTreeMap::new();
    let mut plateau = None;

    match &built.companion {
        Companion::None => {}
        Companion::Plateau { table, tol, margin, min_pass } => {
            let r = plateau_check(&built.family, table, *tol, *margin)?;
            quantities.insert("plateau_pass_fraction".into(), r.pass_fraction);
            checks.push(Check {
                name: "plateau".into(),
                passed: r.pass_fraction >= *min_pass,
                detail: format!("{:.4} of pairs within tol {tol:.4} (need {min_pass})", r.pass_fraction),
            });
            plateau = Some(PlateauSummary::from(&r));
        }
        Companion::Leaves { partition, analytic } => {
            if let Some(labels) = analytic {
                let ok = partition.matches(labels);
                checks.push(Check {
                    name: "leaf_labels".into(),
                    passed: ok,
                    detail: format!("{} sampled classes, {} analytic leaves", partition.n_classes, {
                        let mut l = labels.clone();
                        l.sort_unstable();
                        l.dedup();
                        l.len()
                    }),
                });
            }
        }
        Companion::Lift { base, exact_lift, exact_base, exact_eps } => {
            let rb = entropy_estimate(base, &eps, &cfg)?;
            quantities.insert("h_base".into(), rb.h_estimate);
            quantities.insert("h_lift".into(), h);
            companion_reports.insert("base".into(), rb);
            let mut violations = Vec::new();
            for k in 0..exact_lift.grid.len() {
                for &e in exact_eps {
                    let (ml, _) = exact_counts(exact_lift.level(k), e, EXACT_HARD_LIMIT)?;
                    let (mb, _) = exact_counts(exact_base.level(k), e, EXACT_HARD_LIMIT)?;
                    if ml < mb {
                        violations.push(format!("lambda {} eps {e}: {ml} < {mb}", exact_lift.grid[k]));
                    }
                }
            }
            checks.push(Check {
                name: "exact_count_domination".into(),
                passed: violations.is_empty(),
                detail: if violations.is_empty() {
                    format!("{} cells", exact_lift.grid.len() * exact_eps.len())
                } else {
                    violations.join("; ")
                },
            });
        }
        Companion::Product { a, b } => {
            let ra = entropy_estimate(a, &eps, &cfg)?;
            let rb = entropy_estimate(b, &eps, &cfg)?;
            quantities.insert("h_a".into(), ra.h_estimate);
            quantities.insert("h_b".into(), rb.h_estimate);
            quantities.insert("h_product".into(), h);
            companion_reports.insert("a".into(), ra);
            companion_reports.insert("b".into(), rb);
        }
        Companion::Scaled { scale, reindexed, resampled } => {
            let diff = max_entry_diff(reindexed, resampled);
            quantities.insert("max_entry_diff".into(), diff);
            let rr = entropy_estimate(reindexed, &eps, &cfg)?;
            let rs = entropy_estimate(resampled, &eps, &cfg)?;
            quantities.insert("h_reindexed".into(), rr.h_estimate);
            quantities.insert("h_resampled".into(), rs.h_estimate);
            let exact = (rr.h_estimate * scale - h).abs() <= 1e-12 * (1.0 + h.abs());
            checks.push(Check {
                name: "slope_scaling".into(),
                passed: exact,
                detail: format!("h = {h}, c * h(reindexed) = {}", rr.h_estimate * scale),
            });
            companion_reports.insert("reindexed".into(), rr);
            companion_reports.insert("resampled".into(), rs);
        }
        Companion::Pair { bundle } => {
            let rb = entropy_estimate(bundle, &eps, &cfg)?;
            quantities.insert("h_flow".into(), h);
            quantities.insert("h_bundle".into(), rb.h_estimate);
            companion_reports.insert("bundle".into(), rb);
        }
    }

    let (value, ok) = match &built.expected {
        Expected::Interval { quantity, lo, hi } => {
            let v = quantities.get(quantity).copied().unwrap_or(f64::NAN);
            (v, v >= *lo && v <= *hi)
        }
        Expected::ZeroSlope { tol } => (h, h <= *tol),
        Expected::MonotonePair { tol } => {
            let hb = quantities["h_base"];
            (h - hb, h >= hb - tol)
        }
        Expected::AdditivityPair { tol } => {
            let gap = (h - quantities["h_a"] - quantities["h_b"]).abs();
            (gap, gap <= *tol)
        }
        Expected::None => (h, true),
    };
    report.claim_check = Some(claim(&built.expected, value, ok));
    let passed = ok && checks.iter().all(|c| c.passed);
    Ok(Outcome { report, companion_reports, quantities, checks, plateau, passed })
}
