//! `stability-lab` command-line runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use stability_lab::experiment::{
    csv_bytes, run_experiment, sweep, write_outputs, ExperimentConfig, ExperimentReport, Grid, ReportRow,
};
use stability_lab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "stability-lab",
    version,
    about = "Run stability, replicability and privacy experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    master_seed: Option<u64>,
    /// Largest tape length enumerated exactly.
    #[arg(long, global = true)]
    max_enum_bits: Option<usize>,
    /// Wall-clock budget per experiment; later verifiers are skipped.
    #[arg(long, global = true)]
    budget_secs: Option<f64>,
    /// Overrides the config's trial count.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// CSV destination; a JSON summary is written next to it.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformKind {
    Derandomize,
    Rep2glob,
    Glob2rep,
    Amplify,
}

impl TransformKind {
    fn kind(self) -> &'static str {
        match self {
            TransformKind::Derandomize => "derandomize",
            TransformKind::Rep2glob => "rep2glob",
            TransformKind::Glob2rep => "glob2rep",
            TransformKind::Amplify => "amplify",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config.
    Run { config: PathBuf },
    /// Run a config over the cross product of a grid of JSON-pointer overrides.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
    },
    /// Shared-tape replicability of the configured chain.
    EstimateRep {
        config: PathBuf,
        /// Use independent tapes (two-run collision) instead.
        #[arg(long)]
        independent: bool,
    },
    /// Global stability (collision of two independent runs).
    EstimateGlob { config: PathBuf },
    /// Outputs of weight at least `eta`.
    FindHh {
        config: PathBuf,
        #[arg(long)]
        eta: f64,
    },
    /// Exhaustive privacy audit over all neighboring datasets.
    AuditDp {
        config: PathBuf,
        #[arg(long)]
        domain: u32,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        epsilon: f64,
        /// Audit at user level with this many users.
        #[arg(long)]
        users: Option<usize>,
        /// Where to write the worst pair as JSON.
        #[arg(long)]
        witness: Option<PathBuf>,
    },
    /// Metrics before and after appending one transform.
    RunTransform {
        config: PathBuf,
        #[arg(long, value_enum)]
        transform: TransformKind,
        /// Transform parameters as a JSON object, or `@file`.
        #[arg(long, default_value = "{}")]
        params: String,
        /// Task for the confidence check, as JSON or `@file`.
        #[arg(long)]
        task: Option<String>,
    },
    /// Append the stability-to-privacy pipeline, optionally auditing it.
    Stab2dp {
        config: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        #[arg(long, default_value_t = 0.05)]
        beta: f64,
        #[arg(long)]
        outputs: u32,
        #[arg(long)]
        list_runs: Option<usize>,
        #[arg(long, requires = "audit_n")]
        audit_domain: Option<u32>,
        #[arg(long, requires = "audit_domain")]
        audit_n: Option<usize>,
    },
    /// Append the privacy-to-stability extraction and measure its stability.
    Dp2stab {
        config: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        users: usize,
        #[arg(long)]
        marginal_trials: Option<u64>,
        #[arg(long)]
        search_budget: Option<u64>,
    },
    /// Perfect-generalization check of the configured chain.
    CheckPg {
        config: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0.05)]
        beta: f64,
        #[arg(long, default_value_t = 20)]
        inputs: u64,
    },
    /// Replicable agnostic learner on a finite class with noisy labels.
    PacExperiment(PacArgs),
}

#[derive(Args)]
struct PacArgs {
    /// thresholds, intervals or random.
    #[arg(long, default_value = "thresholds")]
    class: String,
    /// Load the class from a JSON file instead.
    #[arg(long)]
    class_file: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    domain: usize,
    /// VC dimension of a random class.
    #[arg(long, default_value_t = 2)]
    vc: usize,
    /// Extra hypotheses of a random class.
    #[arg(long, default_value_t = 4)]
    extra: usize,
    #[arg(long, default_value_t = 1)]
    class_seed: u64,
    /// Index of the labeling hypothesis.
    #[arg(long, default_value_t = 8)]
    target: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.15)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    #[arg(long, default_value_t = 0.4)]
    rho: f64,
    #[arg(long)]
    learner_sample_size: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, default_value_t = 1)]
    list_runs: usize,
    #[arg(long, default_value_t = 0.5)]
    glob_eta: f64,
    #[arg(long, default_value_t = 64)]
    glob_runs: usize,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    if !v.is_object() {
        return Err(Error::Config {
            path: path.display().to_string(),
            reason: "expected a JSON object".into(),
        });
    }
    Ok(v)
}

/// Inline JSON, or the contents of a file when prefixed with `@`.
fn json_arg(arg: &str, name: &str) -> Result<Value> {
    match arg.strip_prefix('@') {
        Some(path) => read_json(Path::new(path)),
        None => serde_json::from_str(arg).map_err(|e| Error::Config {
            path: name.into(),
            reason: e.to_string(),
        }),
    }
}

impl Common {
    fn apply(&self, v: &mut Value) {
        if let Some(s) = self.master_seed {
            v["seed"] = json!(s);
        }
        if let Some(t) = self.trials {
            v["trials"] = json!(t);
        }
        if let Some(b) = self.budget_secs {
            v["budget_secs"] = json!(b);
        }
        if let Some(b) = self.max_enum_bits {
            if !v["caps"].is_object() {
                v["caps"] = json!({});
            }
            v["caps"]["max_enum_bits"] = json!(b);
        }
    }
}

/// Parsed config with its output path detached; the caller writes outputs.
fn finish(mut v: Value, common: &Common, origin: &str) -> Result<(ExperimentConfig, Value, Option<PathBuf>)> {
    common.apply(&mut v);
    let mut config = ExperimentConfig::from_json(&v.to_string(), origin)?;
    let output = common.output.clone().or(config.output.take());
    if let Some(obj) = v.as_object_mut() {
        obj.remove("output");
    }
    Ok((config, v, output))
}

fn with_verifiers(mut v: Value, verifiers: Value) -> Value {
    v["verifiers"] = verifiers;
    v
}

fn push_transform(v: &mut Value, t: Value) {
    match v["transforms"].as_array_mut() {
        Some(list) => list.push(t),
        None => v["transforms"] = json!([t]),
    }
}

fn relabel(mut rows: Vec<ReportRow>, label: &str) -> Vec<ReportRow> {
    for r in &mut rows {
        r.grid_point = label.into();
    }
    rows
}

fn single(v: Value, common: &Common, origin: &str) -> Result<(ExperimentReport, Value, Option<PathBuf>)> {
    let (config, v, output) = finish(v, common, origin)?;
    Ok((run_experiment(&config)?, v, output))
}

fn pac_config(a: &PacArgs) -> Result<Value> {
    let class = match &a.class_file {
        Some(path) => json!({"kind": "file", "path": path}),
        None => match a.class.as_str() {
            "thresholds" | "intervals" => json!({"kind": a.class, "domain": a.domain}),
            "random" => {
                json!({"kind": "random", "domain": a.domain, "vc": a.vc, "extra": a.extra, "seed": a.class_seed})
            }
            other => {
                return Err(Error::Config {
                    path: "--class".into(),
                    reason: format!("unknown class {other}"),
                })
            }
        },
    };
    let mut reduce = json!({"kind": "agnostic_reduce", "class": class, "alpha": a.alpha, "beta": a.beta});
    if let Some(n) = a.learner_sample_size {
        reduce["learner_sample_size"] = json!(n);
    }
    if let Some(t) = a.runs {
        reduce["runs"] = json!(t);
    }
    let task = json!({"kind": "pac", "class": class, "alpha": a.alpha});
    Ok(json!({
        "id": "pac-experiment",
        "trials": 1000,
        "data": {"kind": "labeled", "class": class, "target": a.target, "noise": a.noise},
        "algorithm": reduce,
        "transforms": [
            {"kind": "derandomize", "runs": a.list_runs},
            {"kind": "glob2rep", "eta": a.glob_eta, "rho": a.rho, "runs": a.glob_runs}
        ],
        "verifiers": [
            {"check": {"kind": "replicability"}, "expect": {"min": 0.5}},
            {"check": {"kind": "confidence", "task": task}, "expect": {"max": a.beta, "with_ci": true}}
        ]
    }))
}

fn execute(cli: &Cli) -> Result<ExperimentReport> {
    let common = &cli.common;
    let load = |p: &PathBuf| read_json(p).map(|v| (v, p.display().to_string()));
    let (report, config_value, output) = match &cli.command {
        Command::Run { config } => {
            let (v, origin) = load(config)?;
            single(v, common, &origin)?
        }
        Command::Sweep { config, grid } => {
            let (v, origin) = load(config)?;
            let (config, v, output) = finish(v, common, &origin)?;
            let grid: Grid = serde_json::from_value(read_json(grid)?).map_err(|e| Error::Config {
                path: grid.display().to_string(),
                reason: e.to_string(),
            })?;
            let report = sweep(&config, &grid)?;
            (report, json!({"base": v, "grid": grid}), output)
        }
        Command::EstimateRep { config, independent } => {
            let (v, origin) = load(config)?;
            let v = with_verifiers(v, json!([{"check": {"kind": "replicability", "shared": !independent}}]));
            single(v, common, &origin)?
        }
        Command::EstimateGlob { config } => {
            let (v, origin) = load(config)?;
            single(
                with_verifiers(v, json!([{"check": {"kind": "global_stability"}}])),
                common,
                &origin,
            )?
        }
        Command::FindHh { config, eta } => {
            let (v, origin) = load(config)?;
            single(
                with_verifiers(v, json!([{"check": {"kind": "heavy_hitters", "eta": eta}}])),
                common,
                &origin,
            )?
        }
        Command::AuditDp {
            config,
            domain,
            n,
            epsilon,
            users,
            witness,
        } => {
            let (v, origin) = load(config)?;
            let check =
                json!([{"check": {"kind": "dp_audit", "domain": domain, "n": n, "epsilon": epsilon, "users": users}}]);
            let out = single(with_verifiers(v, check), common, &origin)?;
            if let Some(path) = witness {
                let note = out
                    .0
                    .rows
                    .iter()
                    .find(|r| r.metric == "delta_max")
                    .and_then(|r| r.note.clone());
                let body = match note {
                    Some(n) => {
                        let mut w: Value = serde_json::from_str(&n).map_err(|e| Error::Io(e.to_string()))?;
                        w["epsilon"] = json!(epsilon);
                        w["delta"] = json!(out.0.rows[0].value);
                        w
                    }
                    None => json!({"error": out.0.rows[0].note}),
                };
                let text = serde_json::to_string_pretty(&body).map_err(|e| Error::Io(e.to_string()))?;
                std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            }
            out
        }
        Command::RunTransform {
            config,
            transform,
            params,
            task,
        } => {
            let (v, origin) = load(config)?;
            let mut checks = vec![
                json!({"check": {"kind": "replicability"}}),
                json!({"check": {"kind": "global_stability"}}),
            ];
            if let Some(t) = task {
                checks.push(json!({"check": {"kind": "confidence", "task": json_arg(t, "--task")?}}));
            }
            let before = with_verifiers(v, Value::Array(checks));
            let mut t = json_arg(params, "--params")?;
            if !t.is_object() {
                return Err(Error::Config {
                    path: "--params".into(),
                    reason: "expected a JSON object".into(),
                });
            }
            t["kind"] = json!(transform.kind());
            let mut after = before.clone();
            push_transform(&mut after, t);
            let (b, bv, output) = single(before, common, &origin)?;
            let (a, av, _) = single(after, common, &origin)?;
            let mut rows = relabel(b.rows, "before");
            rows.extend(relabel(a.rows, "after"));
            let report = ExperimentReport {
                id: b.id,
                rows,
                wall_time: b.wall_time + a.wall_time,
            };
            (report, json!({"before": bv, "after": av}), output)
        }
        Command::Stab2dp {
            config,
            epsilon,
            delta,
            users,
            eta,
            beta,
            outputs,
            list_runs,
            audit_domain,
            audit_n,
        } => {
            let (mut v, origin) = load(config)?;
            let mut t = json!({"kind": "stab2dp", "epsilon": epsilon, "delta": delta, "eta": eta, "beta": beta, "outputs": outputs});
            if let Some(u) = users {
                t["users"] = json!(u);
            }
            if let Some(m) = list_runs {
                t["list_runs"] = json!(m);
            }
            push_transform(&mut v, t);
            let checks = match (audit_domain, audit_n) {
                (Some(d), Some(n)) => json!([{
                    "check": {"kind": "dp_audit", "domain": d, "n": n, "epsilon": epsilon, "users": users},
                    "expect": {"max": delta}
                }]),
                _ => json!([]),
            };
            single(with_verifiers(v, checks), common, &origin)?
        }
        Command::Dp2stab {
            config,
            epsilon,
            delta,
            users,
            marginal_trials,
            search_budget,
        } => {
            let (mut v, origin) = load(config)?;
            let mut t = json!({"kind": "dp2stab", "users": users, "epsilon": epsilon, "delta": delta});
            if let Some(m) = marginal_trials {
                t["marginal_trials"] = json!(m);
            }
            if let Some(b) = search_budget {
                t["search_budget"] = json!(b);
            }
            push_transform(&mut v, t);
            single(
                with_verifiers(v, json!([{"check": {"kind": "global_stability"}}])),
                common,
                &origin,
            )?
        }
        Command::CheckPg {
            config,
            epsilon,
            delta,
            beta,
            inputs,
        } => {
            let (v, origin) = load(config)?;
            let check = json!([{"check": {"kind": "perfect_generalization", "epsilon": epsilon, "delta": delta, "beta": beta, "inputs": inputs}}]);
            single(with_verifiers(v, check), common, &origin)?
        }
        Command::PacExperiment(args) => single(pac_config(args)?, common, "pac-experiment")?,
    };
    if let Some(path) = &output {
        write_outputs(path, &report, &config_value)?;
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            match csv_bytes(&report.rows) {
                Ok(bytes) => print!("{}", String::from_utf8_lossy(&bytes)),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
            for r in report
                .rows
                .iter()
                .filter(|r| r.note.is_some() && r.metric != "delta_max")
            {
                eprintln!(
                    "{} {}: {}",
                    r.experiment,
                    r.metric,
                    r.note.as_deref().unwrap_or_default()
                );
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
