//! Experiment driver: configuration, runs, sweeps, self-test and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use crate::curves::{quotient_norm_with, AnchorFn, AnchoredSystem, ControlNorm, NormFn, QuotientOptions};
use crate::error::{Error, Result};
use crate::estimator::bracket_check;
use crate::family::{bowen_family, flow_family, pseudogroup_family, PartialMap};
use crate::manifold::ManifoldModel;
use crate::metric::{
    read_matrix_csv, seeded_metric, validate_distances, validate_metric, Distances, Violation, DEFAULT_TOL_METRIC,
};
use crate::scenarios::{build_scenario, evaluate, Expected, Outcome};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CLAIM: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERIC
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub seed: u64,
    pub output: PathBuf,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    /// Dotted scenario parameters, applied in order.
    pub overrides: Vec<(String, String)>,
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_seed(raw: &str) -> Result<u64> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("seed must be a nonnegative integer, got `{raw}`")))
}

impl RunConfig {
    /// Builds a config from key-value pairs (file first, then flags). `scenario`
    /// and `seed` are required.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut scenario = None;
        let mut seed = None;
        let mut output = PathBuf::from("out");
        let mut workers = 0;
        let mut overrides = Vec::new();
        for (k, v) in pairs {
            match k.as_str() {
                "scenario" => scenario = Some(v.clone()),
                "seed" => seed = Some(parse_seed(v)?),
                "output" => output = PathBuf::from(v),
                "workers" => {
                    workers = v
                        .parse()
                        .map_err(|_| Error::Config(format!("workers must be a nonnegative integer, got `{v}`")))?
                }
                _ => overrides.push((k.clone(), v.clone())),
            }
        }
        Ok(Self {
            scenario: scenario.ok_or_else(|| Error::Config("missing `scenario`".into()))?,
            seed: seed.ok_or_else(|| Error::Config("missing `seed`".into()))?,
            output,
            workers,
            overrides,
        })
    }

    pub fn load(path: &Path, extra: &[(String, String)]) -> Result<Self> {
        let mut pairs = parse_key_values(&fs::read_to_string(path)?)?;
        pairs.extend_from_slice(extra);
        Self::from_pairs(&pairs)
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub exit_code: i32,
    pub outcome: Option<Outcome>,
    pub error: Option<String>,
}

fn write_error(dir: &Path, e: &Error, code: i32) {
    let body = json!({ "kind": e.kind(), "message": e.to_string(), "exit_code": code, "version": VERSION });
    if fs::create_dir_all(dir).is_ok() {
        let _ = fs::write(dir.join("errors.json"), serde_json::to_string_pretty(&body).unwrap_or_default() + "\n");
    }
}

fn run_inner(cfg: &RunConfig) -> Result<(i32, Outcome)> {
    let built = build_scenario(&cfg.scenario, &cfg.overrides, cfg.seed)?;
    let outcome = evaluate(&built)?;
    let dir = &cfg.output;
    fs::create_dir_all(dir)?;
    let csvs = outcome.report.write_csvs(dir)?;
    let effective = json!({ "scenario": cfg.scenario, "seed": cfg.seed, "params": built.params });
    let manifest = json!({
        "version": VERSION,
        "scenario": built.info,
        "expected": built.expected,
        "config": effective,
        "files": { "report": "report.json", "tables": csvs },
        "family": { "kind": built.family.kind, "grid": built.family.grid, "n": built.family.n() },
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let report = json!({ "version": VERSION, "config": effective, "outcome": outcome });
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let _ = fs::remove_file(dir.join("errors.json"));
    let code = if outcome.passed || matches!(built.expected, Expected::None) { EXIT_PASS } else { EXIT_CLAIM };
    Ok((code, outcome))
}

/// Builds, estimates and writes `manifest.json`, `report.json` and per-ε CSVs
/// (or `errors.json`) into `cfg.output`.
pub fn run(cfg: &RunConfig) -> RunResult {
    let res = with_pool(cfg.workers, || run_inner(cfg)).and_then(|r| r);
    match res {
        Ok((exit_code, outcome)) => RunResult { exit_code, outcome: Some(outcome), error: None },
        Err(e) => {
            let code = exit_code(&e);
            write_error(&cfg.output, &e, code);
            RunResult { exit_code: code, outcome: None, error: Some(e.to_string()) }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub h_estimate: Option<f64>,
    pub exit_code: i32,
}

/// One run per value with a shared seed; writes `sweep.csv` into `cfg.output`.
pub fn sweep(cfg: &RunConfig, parameter: &str, values: &[String]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let params = crate::scenarios::defaults(&cfg.scenario)?;
    if !params.is_numeric(parameter) {
        return Err(Error::UnknownParameter(parameter.to_string()));
    }
    let mut rows = Vec::new();
    for v in values {
        let mut c = cfg.clone();
        c.overrides.push((parameter.to_string(), v.clone()));
        c.output = cfg.output.join(format!("{parameter}={v}"));
        let r = run(&c);
        if r.exit_code == EXIT_CONFIG {
            return Err(Error::Config(r.error.unwrap_or_default()));
        }
        rows.push(SweepRow {
            value: v.clone(),
            h_estimate: r.outcome.as_ref().map(|o| o.report.h_estimate),
            exit_code: r.exit_code,
        });
    }
    fs::create_dir_all(&cfg.output)?;
    let mut w = csv::Writer::from_path(cfg.output.join("sweep.csv"))?;
    w.write_record(["parameter", "value", "h_estimate", "exit_code"])?;
    for r in &rows {
        w.write_record([
            parameter.to_string(),
            r.value.clone(),
            r.h_estimate.map(crate::metric::format_f64).unwrap_or_default(),
            r.exit_code.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Self-test result: one line per suite, `ok` iff every suite passed.
#[derive(Clone, Debug)]
pub struct SelfTest {
    pub ok: bool,
    pub log: String,
}

/// Brute-force oracle suites: bracket on seeded spaces, axiom checks of the
/// builders on coarse grids, quotient norm against grid search, and an
/// optional metric fixture.
pub fn selftest(fixture: Option<&Path>) -> SelfTest {
    let mut log = String::new();
    let mut ok = true;
    let mut record = |name: &str, res: Result<Option<String>>| {
        match res {
            Ok(None) => {
                let _ = writeln!(log, "PASS {name}");
            }
            Ok(Some(why)) => {
                ok = false;
                let _ = writeln!(log, "FAIL {name}: {why}");
            }
            Err(e) => {
                ok = false;
                let _ = writeln!(log, "FAIL {name}: {e}");
            }
        }
    };

    record("bracket on seeded spaces", (|| {
        for seed in 0..50u64 {
            let n = 4 + (seed % 7) as usize;
            let d = seeded_metric(n, seed);
            for row in bracket_check(&d, &[0.15, 0.3, 0.6], 12)? {
                if !(row.holds && row.greedy_in_bracket) {
                    return Ok(Some(format!("seed {seed}: {row:?}")));
                }
            }
        }
        Ok(None)
    })());

    record("builder axioms on coarse grids", (|| {
        let circle = ManifoldModel::torus(1).grid_space(32)?;
        let dbl: Vec<usize> = (0..32).map(|i| (2 * i) % 32).collect();
        let torus = ManifoldModel::torus(2).grid_space(8)?;
        let cat: Vec<usize> = (0..64).map(|i| ((2 * (i / 8) + i % 8) % 8) * 8 + (i / 8 + i % 8) % 8).collect();
        let id: PartialMap = (0..32).map(Some).collect();
        let half: PartialMap = (0..32).map(|i| (i < 16).then_some(2 * i)).collect();
        let mut half_inv: PartialMap = vec![None; 32];
        for (i, h) in half.iter().enumerate() {
            if let Some(j) = h {
                half_inv[*j] = Some(i);
            }
        }
        let field = |x: &[f64], out: &mut [f64]| {
            out[0] = (2.0 * std::f64::consts::PI * x[1]).sin();
            out[1] = 0.3;
        };
        let families = [
            ("doubling", bowen_family(&circle, &dbl, 4)?, &circle, true),
            ("cat", bowen_family(&torus, &cat, 3)?, &torus, true),
            // Partial maps can break the triangle inequality; see the family notes.
            ("pseudogroup", pseudogroup_family(&circle, &[id, half, half_inv], 3)?, &circle, false),
            ("flow", flow_family(&torus, &field, &[0.0, 0.5, 1.0], 0.01)?, &torus, true),
        ];
        for (name, f, base, total) in &families {
            if f.monotonicity_defect() > 0.0 {
                return Ok(Some(format!("{name} family is not monotone")));
            }
            let n = f.n();
            if let Some((a, b)) = (0..n * n).map(|k| (k / n, k % n)).find(|&(a, b)| f.level(0).dist(a, b) != base.dist(a, b)) {
                return Ok(Some(format!("{name}: level 0 differs from the base metric at ({a}, {b})")));
            }
            for (k, level) in f.levels.iter().enumerate() {
                let r = validate_distances(level, DEFAULT_TOL_METRIC);
                let bad = r.violations.iter().find(|v| *total || !matches!(v, Violation::Triangle { .. }));
                if let Some(v) = bad {
                    return Ok(Some(format!("{name} level {k}: {v}")));
                }
            }
        }
        Ok(None)
    })());

    record("quotient norm against grid search", (|| {
        let anchor: Arc<AnchorFn> = Arc::new(|_x, u, out| out[0] = u[0] + u[1]);
        let l4: Arc<NormFn> = Arc::new(|u: &[f64]| u.iter().map(|x| x.powi(4)).sum::<f64>().powf(0.25));
        let sys = AnchoredSystem::new(ManifoldModel::Chart { dim: 1 }, 2, anchor, ControlNorm::convex(2, l4.clone(), "l4")?, "sum")?;
        for v in [0.3, 1.0, -2.5] {
            let (q, _) = quotient_norm_with(&sys, &[0.0], &[v], &QuotientOptions::default())?;
            // u = (v/2 + s, v/2 - s)
            let grid = (0..=4000)
                .map(|i| {
                    let s = -2.0 * v.abs() + 4.0 * v.abs() * i as f64 / 4000.0;
                    l4(&[v / 2.0 + s, v / 2.0 - s])
                })
                .fold(f64::INFINITY, f64::min);
            if (q - grid).abs() > 1e-3 * grid.max(1e-12) {
                return Ok(Some(format!("v = {v}: {q} vs grid {grid}")));
            }
        }
        Ok(None)
    })());

    if let Some(path) = fixture {
        record(&format!("fixture {}", path.display()), (|| {
            let (_, rows) = read_matrix_csv(path)?;
            let r = validate_metric(&rows, DEFAULT_TOL_METRIC)?;
            Ok((!r.is_valid()).then(|| {
                let list: Vec<String> = r.violations.iter().map(|v| v.to_string()).collect();
                format!("{} violations: {}", r.total, list.join("; "))
            }))
        })());
    }
    SelfTest { ok, log }
}

/// Validation of a metric CSV: exit code and a printable summary.
pub fn validate(path: &Path, tol: f64) -> (i32, String) {
    let res = read_matrix_csv(path).and_then(|(labels, rows)| Ok((labels, validate_metric(&rows, tol)?)));
    match res {
        Ok((labels, r)) => {
            let mut out = format!("{} points, {} violations, worst triangle excess {}\n", labels.len(), r.total, r.worst_triangle_excess);
            for v in &r.violations {
                let _ = writeln!(out, "{v}");
            }
            (if r.is_valid() { EXIT_PASS } else { EXIT_CLAIM }, out)
        }
        Err(e) => (exit_code(&e), format!("error: {e}\n")),
    }
}

/// Scenario names with their target claims, one per line.
pub fn list_scenarios() -> String {
    let mut out = String::new();
    for name in crate::scenarios::NAMES {
        let info = crate::scenarios::info(name).expect("registered");
        let _ = writeln!(out, "{:<22} {:<20} {}", info.name, info.manifold, info.target_claim);
    }
    out
}

/// Effective parameters of a scenario, for `list-scenarios --params`.
pub fn scenario_params(name: &str) -> Result<BTreeMap<String, String>> {
    let p = crate::scenarios::defaults(name)?;
    Ok(p.keys().map(|k| (k.clone(), p.get(k).unwrap().to_string())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn config_parsing() {
        let kv = parse_key_values("# run\nscenario = map_rotation\nseed=3 # fixed\n\ngrid.n = 64\n").unwrap();
        let c = RunConfig::from_pairs(&kv).unwrap();
        assert_eq!(c.scenario, "map_rotation");
        assert_eq!(c.seed, 3);
        assert_eq!(c.overrides, pairs(&[("grid.n", "64")]));
        assert!(RunConfig::from_pairs(&pairs(&[("scenario", "map_rotation"), ("seed", "-1")])).is_err());
        assert!(RunConfig::from_pairs(&pairs(&[("scenario", "map_rotation")])).is_err());
        assert!(parse_key_values("just words").is_err());
    }

    #[test]
    fn rotation_run_writes_reports() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            scenario: "map_rotation".into(),
            seed: 0,
            output: dir.path().to_path_buf(),
            workers: 1,
            overrides: vec![],
        };
        let r = run(&cfg);
        assert_eq!(r.exit_code, EXIT_PASS, "{:?}", r.error);
        assert!(r.outcome.unwrap().report.h_estimate <= 0.05);
        for f in ["manifest.json", "report.json", "eps_00.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let report = fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert!(report.contains(VERSION));
    }

    #[test]
    fn config_errors_exit_three() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig {
            scenario: "nope".into(),
            seed: 0,
            output: dir.path().to_path_buf(),
            workers: 1,
            overrides: vec![],
        };
        assert_eq!(run(&cfg).exit_code, EXIT_CONFIG);
        assert!(dir.path().join("errors.json").exists());
        cfg.scenario = "map_rotation".into();
        cfg.overrides = pairs(&[("grid.size", "3")]);
        assert_eq!(run(&cfg).exit_code, EXIT_CONFIG);
    }

    #[test]
    fn sweep_rules() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            scenario: "map_rotation".into(),
            seed: 0,
            output: dir.path().to_path_buf(),
            workers: 1,
            overrides: pairs(&[("grid.n", "64"), ("family.n_max", "4")]),
        };
        assert!(matches!(sweep(&cfg, "grid.n", &[]), Err(Error::Config(_))));
        assert!(matches!(sweep(&cfg, "curves.n_curves", &["8".into()]), Err(Error::UnknownParameter(_))));
        let rows = sweep(&cfg, "estimator.eps", &["0.2".into(), "0.1".into()]).unwrap();
        assert_eq!(rows.len(), 2);
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn corrupted_fixture_fails_selftest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let rows = vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 1.0], vec![5.0, 1.0, 0.0]];
        let labels: Vec<String> = (0..3).map(|i| format!("p{i}")).collect();
        let space = crate::metric::FiniteMetricSpace::from_matrix(Some(labels.clone()), rows).unwrap();
        crate::metric::write_matrix_csv(&path, &labels, &space).unwrap();
        let t = selftest(Some(&path));
        assert!(!t.ok);
        assert!(t.log.contains("triangle"), "{}", t.log);
        let (code, text) = validate(&path, 1e-9);
        assert_eq!(code, EXIT_CLAIM);
        assert!(text.contains("triangle"));
    }
}
