use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fentropy::driver::{self, RunConfig, EXIT_CONFIG, EXIT_PASS};

#[derive(Parser)]
#[command(name = "fentropy", version, about = "Entropy estimates for families of distances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Scenario name (see list-scenarios).
    #[arg(long)]
    scenario: Option<String>,
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Scenario parameter override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Registered scenarios and their target claims.
    ListScenarios {
        /// Also print the default parameters of this scenario.
        #[arg(long)]
        params: Option<String>,
    },
    /// Build, estimate and write reports for one scenario.
    Run(RunArgs),
    /// One run per value of a parameter; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        parameter: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true, default_value = "")]
        values: String,
    },
    /// Brute-force oracle suites.
    Selftest {
        /// Metric CSV to validate alongside the suites.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
    /// Check a distance-matrix CSV against the metric axioms.
    Validate {
        path: PathBuf,
        #[arg(long, default_value_t = fentropy::metric::DEFAULT_TOL_METRIC)]
        tol: f64,
    },
}

fn config(args: &RunArgs) -> fentropy::Result<RunConfig> {
    let mut pairs = Vec::new();
    if let Some(s) = &args.scenario {
        pairs.push(("scenario".to_string(), s.clone()));
    }
    if let Some(s) = &args.seed {
        pairs.push(("seed".to_string(), s.clone()));
    }
    if let Some(o) = &args.output {
        pairs.push(("output".to_string(), o.display().to_string()));
    }
    if let Some(w) = args.workers {
        pairs.push(("workers".to_string(), w.to_string()));
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| fentropy::Error::Config(format!("override `{kv}` is not key=value")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    match &args.config {
        Some(path) => RunConfig::load(path, &pairs),
        None => RunConfig::from_pairs(&pairs),
    }
}

fn config_failure(e: &fentropy::Error) -> ExitCode {
    let body = serde_json::json!({ "kind": e.kind(), "message": e.to_string(), "exit_code": EXIT_CONFIG });
    eprintln!("{body}");
    ExitCode::from(EXIT_CONFIG as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::ListScenarios { params } => match params {
            None => {
                print!("{}", driver::list_scenarios());
                EXIT_PASS
            }
            Some(name) => match driver::scenario_params(&name) {
                Ok(p) => {
                    for (k, v) in p {
                        println!("{k} = {v}");
                    }
                    EXIT_PASS
                }
                Err(e) => return config_failure(&e),
            },
        },
        Command::Run(args) => {
            let cfg = match config(&args) {
                Ok(c) => c,
                Err(e) => return config_failure(&e),
            };
            let r = driver::run(&cfg);
            match (&r.outcome, &r.error) {
                (Some(o), _) => {
                    let claim = o.report.claim_check.as_ref();
                    println!(
                        "{}: h = {:.4} ({}) -> {}",
                        cfg.scenario,
                        o.report.h_estimate,
                        claim.map(|c| c.expected.as_str()).unwrap_or("-"),
                        if o.passed { "pass" } else { "fail" }
                    );
                    for c in &o.checks {
                        println!("  {}: {} ({})", c.name, if c.passed { "pass" } else { "fail" }, c.detail);
                    }
                }
                (None, Some(e)) => eprintln!("error: {e}"),
                _ => {}
            }
            r.exit_code
        }
        Command::Sweep { run, parameter, values } => {
            let cfg = match config(&run) {
                Ok(c) => c,
                Err(e) => return config_failure(&e),
            };
            let values: Vec<String> =
                values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            match driver::sweep(&cfg, &parameter, &values) {
                Ok(rows) => {
                    for r in &rows {
                        let h = r.h_estimate.map(|h| format!("{h:.4}")).unwrap_or_else(|| "-".into());
                        println!("{parameter} = {}: h = {h} (exit {})", r.value, r.exit_code);
                    }
                    rows.iter().map(|r| r.exit_code).max().unwrap_or(EXIT_PASS)
                }
                Err(e) => return config_failure(&e),
            }
        }
        Command::Selftest { fixture } => {
            let t = driver::selftest(fixture.as_deref());
            print!("{}", t.log);
            if t.ok {
                EXIT_PASS
            } else {
                1
            }
        }
        Command::Validate { path, tol } => {
            let (code, text) = driver::validate(&path, tol);
            print!("{text}");
            code
        }
    };
    ExitCode::from(code as u8)
}
