//! Batch experiments. A JSON config names a data distribution, a base
//! algorithm, a transform chain and a list of verifiers; the run produces
//! report rows written as CSV plus a JSON summary.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::algorithm::{
    AlgorithmRef, ConstantAlgorithm, MajorityBit, OracleAlgorithm, RoundedMean, TapeValueAlgorithm,
};
use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};
use crate::pac::{self, AgnosticParams, HypothesisClass, RealizableListLearner};
use crate::sample::Sampler;
use crate::seed::{derive_seed, stream_rng};
use crate::tape::{bits_for, fresh_tape, DEFAULT_MAX_ENUM_BITS};
use crate::task::{coin_bias, oracle_task, sign_task, Output, StatisticalTask};
use crate::transforms::dp::{
    check_perfect_generalization, dp_to_stab, stab_to_dp, DpPipelineParams, DpToStabParams, PgParams,
    RandomizedResponse,
};
use crate::transforms::rep::{
    amplify_replicability, derandomize_hh, derandomize_with_runs, glob_to_rep, rep_to_glob, threshold_analysis,
    AmplifyParams, SelectionRule, ThresholdingParams,
};
use crate::verify::{
    audit_dp_exact, estimate_confidence, estimate_law, estimate_replicability, find_heavy_hitters, heavy_hitter_trials,
    hoeffding_halfwidth, neighbors, sample_outputs,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    pub data: DataSpec,
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub transforms: Vec<TransformSpec>,
    #[serde(default)]
    pub verifiers: Vec<VerifierSpec>,
    #[serde(default)]
    pub caps: Caps,
    /// CSV destination; the JSON summary goes next to it.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Wall-clock budget; verifiers not started in time are reported as skipped.
    #[serde(default)]
    pub budget_secs: Option<f64>,
}

fn default_trials() -> u64 {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    #[serde(default = "default_enum_bits")]
    pub max_enum_bits: usize,
    #[serde(default = "default_universe")]
    pub max_universe: u64,
}

fn default_enum_bits() -> usize {
    DEFAULT_MAX_ENUM_BITS
}

fn default_universe() -> u64 {
    1 << 20
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_enum_bits: default_enum_bits(),
            max_universe: default_universe(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSpec {
    Thresholds {
        domain: usize,
    },
    Intervals {
        domain: usize,
    },
    Random {
        domain: usize,
        vc: usize,
        extra: usize,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

impl ClassSpec {
    pub fn build(&self) -> Result<HypothesisClass> {
        match self {
            ClassSpec::Thresholds { domain } => pac::thresholds(*domain),
            ClassSpec::Intervals { domain } => pac::intervals(*domain),
            ClassSpec::Random {
                domain,
                vc,
                extra,
                seed,
            } => pac::random_class(*domain, *vc, *extra, *seed),
            ClassSpec::File { path } => HypothesisClass::load(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Uniform {
        size: u32,
    },
    Probs {
        probs: Vec<f64>,
    },
    Pairs {
        pairs: Vec<(u32, f64)>,
    },
    /// Uniform points labeled by `class[target]` with label noise.
    Labeled {
        class: ClassSpec,
        target: usize,
        noise: f64,
    },
}

impl DataSpec {
    pub fn build(&self) -> Result<FiniteDistribution> {
        match self {
            DataSpec::Uniform { size } => FiniteDistribution::uniform(*size),
            DataSpec::Probs { probs } => FiniteDistribution::from_probs(probs),
            DataSpec::Pairs { pairs } => FiniteDistribution::new(pairs.iter().copied()),
            DataSpec::Labeled { class, target, noise } => {
                let class = class.build()?;
                let marginal = FiniteDistribution::uniform(class.domain() as u32)?;
                pac::noisy_labels(&class, *target, &marginal, *noise)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    /// Output law per tape value on the configured data distribution; the
    /// number of laws must be a power of two.
    Oracle {
        sample_size: usize,
        laws: Vec<Vec<(u32, f64)>>,
        #[serde(default)]
        salt: u64,
    },
    MajorityBit {
        n: usize,
    },
    RoundedMean {
        n: usize,
        step: f64,
    },
    Constant {
        value: Output,
        sample_size: usize,
    },
    TapeValue {
        bits: usize,
    },
    RandomizedResponse {
        bits: usize,
        keep: u64,
        sample_size: usize,
    },
    AgnosticReduce {
        class: ClassSpec,
        alpha: f64,
        beta: f64,
        #[serde(default)]
        learner_sample_size: Option<usize>,
        #[serde(default)]
        runs: Option<usize>,
        #[serde(default)]
        labeled: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobSpec {
    pub eta: f64,
    pub rho: f64,
    pub runs: usize,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub thresholds: Option<usize>,
    #[serde(default)]
    pub rule: Option<SelectionRule>,
}

impl GlobSpec {
    pub fn build(&self) -> Result<ThresholdingParams> {
        let mut p = ThresholdingParams::spread(self.eta, self.rho, self.runs)?;
        if let Some(t) = self.thresholds {
            p = p.with_thresholds(t)?;
        }
        if let Some(g) = self.gamma {
            p = p.with_gamma(g)?;
        }
        if let Some(rule) = self.rule {
            p = p.with_rule(rule);
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformSpec {
    /// Either an explicit run count or `(eta, gamma_prime)`.
    Derandomize {
        #[serde(default)]
        runs: Option<usize>,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        gamma_prime: Option<f64>,
    },
    Glob2rep(GlobSpec),
    Rep2glob {
        gamma: f64,
        tau: f64,
    },
    Amplify {
        nu: f64,
        rho: f64,
        beta: f64,
        tau_prime: f64,
        #[serde(default)]
        list_eta: Option<f64>,
        #[serde(default)]
        gamma_prime: Option<f64>,
        #[serde(default)]
        list_runs: Option<usize>,
        #[serde(default)]
        glob: Option<GlobSpec>,
    },
    Stab2dp {
        epsilon: f64,
        delta: f64,
        eta: f64,
        beta: f64,
        outputs: u32,
        #[serde(default)]
        users: Option<usize>,
        #[serde(default)]
        list_runs: Option<usize>,
    },
    Dp2stab {
        users: usize,
        epsilon: f64,
        delta: f64,
        #[serde(default)]
        marginal_trials: Option<u64>,
        #[serde(default)]
        search_budget: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Every output below `outputs` except `rejected` is accepted.
    Oracle {
        outputs: u32,
        #[serde(default)]
        rejected: BTreeSet<Output>,
    },
    Coin {
        coins: u32,
        step: f64,
        tolerance: f64,
    },
    Sign,
    Pac {
        class: ClassSpec,
        alpha: f64,
    },
}

impl TaskSpec {
    pub fn build(&self) -> Result<StatisticalTask> {
        match self {
            TaskSpec::Oracle { outputs, rejected } => Ok(oracle_task(*outputs, rejected.clone())),
            TaskSpec::Coin { coins, step, tolerance } => coin_bias(*coins, *step, *tolerance),
            TaskSpec::Sign => Ok(sign_task()),
            TaskSpec::Pac { class, alpha } => Ok(pac::pac_task(Arc::new(class.build()?), *alpha)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    Replicability {
        #[serde(default = "yes")]
        shared: bool,
    },
    GlobalStability,
    Confidence {
        task: TaskSpec,
    },
    HeavyHitters {
        eta: f64,
    },
    /// Exact per-threshold analysis of the last `glob2rep` stage.
    ThresholdAnalysis,
    DpAudit {
        domain: u32,
        n: usize,
        epsilon: f64,
        #[serde(default)]
        users: Option<usize>,
    },
    PerfectGeneralization {
        epsilon: f64,
        delta: f64,
        beta: f64,
        inputs: u64,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
    #[serde(default)]
    pub max_bits: Option<usize>,
    #[serde(default)]
    pub bits: Option<usize>,
    /// Compare `value ± ci` instead of the point estimate.
    #[serde(default)]
    pub with_ci: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierSpec {
    pub check: Check,
    #[serde(default)]
    pub expect: Option<Expect>,
    #[serde(default)]
    pub trials: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config {
            path: path.into(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// No expectation attached.
    Info,
    Error,
    Skipped,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Info => "info",
            Status::Error => "error",
            Status::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub grid_point: String,
    pub metric: String,
    pub value: f64,
    pub ci: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    /// Largest tape cursor observed; 0 when nothing was run.
    pub bits_used: usize,
    pub samples_used: u64,
    pub status: Status,
    /// Seconds spent on the verifier producing this row (JSON only).
    pub wall_time: f64,
    /// An expectation is attached (JSON only).
    pub checked: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub id: String,
    pub rows: Vec<ReportRow>,
    pub wall_time: f64,
}

impl ExperimentReport {
    /// True iff every checked row passed.
    pub fn passed(&self) -> bool {
        self.rows.iter().filter(|r| r.checked).all(|r| r.status == Status::Pass)
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "grid_point",
    "metric",
    "value",
    "ci",
    "trials",
    "seed",
    "bits_used",
    "samples_used",
    "status",
];

pub fn csv_bytes(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.grid_point.clone(),
            r.metric.clone(),
            format!("{}", r.value),
            r.ci.map(|c| format!("{c}")).unwrap_or_default(),
            r.trials.to_string(),
            r.seed.to_string(),
            r.bits_used.to_string(),
            r.samples_used.to_string(),
            r.status.as_str().to_string(),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Writes `<path>` (CSV) and `<path>` with a `.json` extension (summary).
pub fn write_outputs(path: &Path, report: &ExperimentReport, config: &Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        }
    }
    std::fs::write(path, csv_bytes(&report.rows)?).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let summary = serde_json::json!({
        "id": report.id,
        "passed": report.passed(),
        "wall_time": report.wall_time,
        "config": config,
        "rows": report.rows,
    });
    let json_path = path.with_extension("json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(&json_path, text).map_err(|e| Error::Io(format!("{}: {e}", json_path.display())))
}

// ---------------------------------------------------------------------------
// Building
// ---------------------------------------------------------------------------

/// Final algorithm plus what the verifiers need to know about the chain.
pub struct Chain {
    pub alg: AlgorithmRef,
    /// Parameters and inner law of the last threshold-selection stage, when
    /// the inner law is known exactly.
    pub thresholds: Option<(ThresholdingParams, Option<FiniteDistribution>)>,
}

fn build_base(spec: &AlgorithmSpec, data: &FiniteDistribution) -> Result<(AlgorithmRef, Option<FiniteDistribution>)> {
    Ok(match spec {
        AlgorithmSpec::Oracle {
            sample_size,
            laws,
            salt,
        } => {
            if laws.is_empty() || !laws.len().is_power_of_two() {
                return Err(Error::param(
                    "laws",
                    format!("{} laws, need a power of two", laws.len()),
                ));
            }
            let laws: Vec<FiniteDistribution> = laws
                .iter()
                .map(|l| FiniteDistribution::new(l.iter().copied()))
                .collect::<Result<_>>()?;
            let bits = bits_for(laws.len() as u64);
            let exact = (bits == 0).then(|| laws[0].clone());
            let alg = OracleAlgorithm::with_tape_laws(vec![(data.clone(), laws)], bits, *sample_size)?.salted(*salt);
            (Arc::new(alg), exact)
        }
        AlgorithmSpec::MajorityBit { n } => (Arc::new(MajorityBit { n: *n }), None),
        AlgorithmSpec::RoundedMean { n, step } => (Arc::new(RoundedMean { n: *n, step: *step }), None),
        AlgorithmSpec::Constant { value, sample_size } => (
            Arc::new(ConstantAlgorithm {
                value: *value,
                sample_size: *sample_size,
            }),
            Some(FiniteDistribution::point(*value)),
        ),
        AlgorithmSpec::TapeValue { bits } => (Arc::new(TapeValueAlgorithm { bits: *bits }), None),
        AlgorithmSpec::RandomizedResponse {
            bits,
            keep,
            sample_size,
        } => (
            Arc::new(RandomizedResponse {
                bits: *bits,
                keep: *keep,
                sample_size: *sample_size,
            }),
            None,
        ),
        AlgorithmSpec::AgnosticReduce {
            class,
            alpha,
            beta,
            learner_sample_size,
            runs,
            labeled,
        } => {
            let class = Arc::new(class.build()?);
            let mut learner = pac::default_realizable_list_learner(class.clone(), alpha / 8.0, 1.0 / 8.0)?;
            if let Some(n) = learner_sample_size {
                learner = learner.with_sample_size(*n)?;
            }
            let mut params = AgnosticParams::defaults(&class, &learner, *alpha, *beta)?;
            if let Some(t) = runs {
                params.runs = *t;
            }
            if let Some(l) = labeled {
                params.labeled = *l;
            }
            let learner: Arc<dyn RealizableListLearner> = Arc::new(learner);
            (Arc::new(pac::agnostic_reduce(class, learner, params)?), None)
        }
    })
}

/// Builds the data distribution and the transformed algorithm.
pub fn build_chain(config: &ExperimentConfig) -> Result<(FiniteDistribution, Chain)> {
    let data = config.data.build()?;
    let cap = config.caps.max_enum_bits;
    let (mut alg, mut law) = build_base(&config.algorithm, &data)?;
    let mut thresholds = None;
    for (i, t) in config.transforms.iter().enumerate() {
        alg = match t {
            TransformSpec::Derandomize { runs, eta, gamma_prime } => match (runs, eta, gamma_prime) {
                (Some(m), _, _) => Arc::new(derandomize_with_runs(alg, *m, cap)?),
                (None, Some(e), Some(g)) => Arc::new(derandomize_hh(alg, *e, *g, cap)?),
                _ => return Err(Error::param("derandomize", "give runs or both eta and gamma_prime")),
            },
            TransformSpec::Glob2rep(g) => {
                let params = g.build()?;
                thresholds = Some((params.clone(), law.take()));
                Arc::new(glob_to_rep(alg, params)?)
            }
            TransformSpec::Rep2glob { gamma, tau } => Arc::new(rep_to_glob(alg, *gamma, *tau)?),
            TransformSpec::Amplify {
                nu,
                rho,
                beta,
                tau_prime,
                list_eta,
                gamma_prime,
                list_runs,
                glob,
            } => {
                let mut p = AmplifyParams::defaults(*nu, *rho, *beta, *tau_prime)?;
                if let Some(e) = list_eta {
                    p.list_eta = *e;
                }
                if let Some(g) = gamma_prime {
                    p.gamma_prime = *g;
                }
                p.list_runs = list_runs.unwrap_or_else(|| crate::transforms::rep::list_runs(p.list_eta, p.gamma_prime));
                if let Some(g) = glob {
                    p.glob = g.build()?;
                }
                Arc::new(amplify_replicability(alg, p, cap)?)
            }
            TransformSpec::Stab2dp {
                epsilon,
                delta,
                eta,
                beta,
                outputs,
                users,
                list_runs,
            } => {
                let mut p = DpPipelineParams::defaults(*epsilon, *delta, *eta, *beta, *outputs)?;
                if let Some(u) = users {
                    p.users = *u;
                }
                if let Some(m) = list_runs {
                    p.list_runs = *m;
                }
                Arc::new(stab_to_dp(alg, p, cap)?)
            }
            TransformSpec::Dp2stab {
                users,
                epsilon,
                delta,
                marginal_trials,
                search_budget,
            } => {
                let mut p = DpToStabParams::new(*users, *epsilon, *delta);
                if let Some(t) = marginal_trials {
                    p.marginal_trials = *t;
                }
                if let Some(b) = search_budget {
                    p.search_budget = *b;
                }
                let seed = derive_seed(config.seed, &[0x7f, i as u64]);
                Arc::new(dp_to_stab(alg, &data, &p, cap, seed)?.det)
            }
        };
        law = None;
    }
    Ok((data, Chain { alg, thresholds }))
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct Measured {
    metric: String,
    value: f64,
    ci: Option<f64>,
    trials: u64,
    bits: usize,
    samples: u64,
    note: Option<String>,
}

fn measured(metric: &str, value: f64, ci: Option<f64>, trials: u64, bits: usize, samples: u64) -> Measured {
    Measured {
        metric: metric.into(),
        value,
        ci,
        trials,
        bits,
        samples,
        note: None,
    }
}

/// One metered run on a fresh sample, for verifiers that do not run the
/// algorithm on tapes themselves.
fn meter_once(alg: &AlgorithmRef, data: &FiniteDistribution, seed: u64) -> Result<(usize, u64)> {
    let n = alg.sample_size();
    let s = Sampler::new(data).sample(n, &mut stream_rng(seed, &[0x3e7]));
    let mut tape = fresh_tape(seed, u64::MAX, alg.bit_budget());
    alg.eval(s.view(), &mut tape)?;
    Ok((tape.cursor(), n as u64))
}

fn run_check(
    check: &Check,
    chain: &Chain,
    data: &FiniteDistribution,
    trials: u64,
    seed: u64,
    caps: &Caps,
) -> Result<Vec<Measured>> {
    let alg = &chain.alg;
    let cap = caps.max_enum_bits;
    Ok(match check {
        Check::Replicability { shared } => {
            let r = estimate_replicability(alg.as_ref(), data, trials, *shared, seed)?;
            let name = if *shared { "replicability" } else { "collision" };
            vec![measured(
                name,
                r.estimate,
                Some(r.ci_halfwidth),
                trials,
                r.bits_used,
                r.samples_used,
            )]
        }
        Check::GlobalStability => {
            let r = estimate_replicability(alg.as_ref(), data, trials, false, seed)?;
            vec![measured(
                "global_stability",
                r.estimate,
                Some(r.ci_halfwidth),
                trials,
                r.bits_used,
                r.samples_used,
            )]
        }
        Check::Confidence { task } => {
            let task = task.build()?;
            let r = estimate_confidence(alg.as_ref(), &task, data, trials, seed)?;
            let samples = trials * alg.sample_size() as u64;
            vec![measured(
                "failure_rate",
                r.failure_rate,
                Some(r.ci_halfwidth),
                trials,
                r.bits_used,
                samples,
            )]
        }
        Check::HeavyHitters { eta } => {
            let trials = trials.max(heavy_hitter_trials(*eta));
            let (_, bits) = sample_outputs(alg.as_ref(), data, 1, seed)?;
            let hitters = find_heavy_hitters(alg.as_ref(), data, *eta, trials, seed)?;
            let top = hitters.first().map(|h| h.1).unwrap_or(0.0);
            let samples = trials * alg.sample_size() as u64;
            vec![
                measured("heavy_hitter_weight", top, Some(eta / 4.0), trials, bits, samples),
                measured("heavy_hitter_count", hitters.len() as f64, None, trials, bits, samples),
            ]
        }
        Check::ThresholdAnalysis => {
            let Some((params, law)) = &chain.thresholds else {
                return Err(Error::param("threshold_analysis", "chain has no glob2rep stage"));
            };
            let Some(law) = law else {
                return Err(Error::param(
                    "threshold_analysis",
                    "inner law of the glob2rep stage is not known exactly",
                ));
            };
            let a = threshold_analysis(law, params)?;
            let (bits, samples) = meter_once(alg, data, seed)?;
            vec![
                measured("exact_replicability", a.replicability, None, 0, bits, samples),
                measured("near_thresholds", a.near_thresholds as f64, None, 0, bits, samples),
            ]
        }
        Check::DpAudit {
            domain,
            n,
            epsilon,
            users,
        } => {
            let pairs = neighbors(*domain, *n, *users, u128::from(caps.max_universe))?;
            let audit = audit_dp_exact(alg.as_ref(), &pairs, *epsilon, users.is_some(), cap)?;
            let first = &pairs.first().ok_or(Error::EmptyDataset)?.0;
            let mut tape = fresh_tape(seed, 0, alg.bit_budget());
            alg.eval(first.view(), &mut tape)?;
            let support = pairs
                .iter()
                .flat_map(|(a, b)| [a, b])
                .map(|s| alg.exact_law(s.view(), cap).map(|l| l.positive_support().len()))
                .try_fold(0usize, |m, k| k.map(|k| m.max(k)))?;
            let witness = audit
                .witness
                .as_ref()
                .map(|w| serde_json::json!({"witness": [w.0, w.1]}).to_string());
            vec![
                Measured {
                    note: witness,
                    ..measured("delta_max", audit.delta_max, None, 0, tape.cursor(), 0)
                },
                measured("max_support", support as f64, None, 0, tape.cursor(), 0),
                measured("pairs_audited", audit.pairs_audited as f64, None, 0, tape.cursor(), 0),
            ]
        }
        Check::PerfectGeneralization {
            epsilon,
            delta,
            beta,
            inputs,
        } => {
            let p = PgParams {
                epsilon: *epsilon,
                delta: *delta,
                beta: *beta,
                marginal_trials: trials,
                inputs: *inputs,
            };
            let r = check_perfect_generalization(alg.as_ref(), data, &p, cap, seed)?;
            let (bits, _) = meter_once(alg, data, seed)?;
            let samples = *inputs * alg.sample_size() as u64;
            vec![
                measured("pg_fraction_failing", r.fraction_failing, None, *inputs, bits, samples),
                measured("pg_worst_divergence", r.worst_divergence, None, *inputs, bits, samples),
            ]
        }
    })
}

fn judge(m: &Measured, expect: Option<&Expect>) -> Status {
    let Some(e) = expect else { return Status::Info };
    let ci = if e.with_ci { m.ci.unwrap_or(0.0) } else { 0.0 };
    let ok = e.min.is_none_or(|lo| m.value + ci >= lo)
        && e.max.is_none_or(|hi| m.value - ci <= hi)
        && e.max_bits.is_none_or(|b| m.bits <= b)
        && e.bits.is_none_or(|b| m.bits == b);
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn row(config: &ExperimentConfig, grid_point: &str, metric: String, seed: u64) -> ReportRow {
    ReportRow {
        experiment: config.id.clone(),
        grid_point: grid_point.into(),
        metric,
        value: f64::NAN,
        ci: None,
        trials: 0,
        seed,
        bits_used: 0,
        samples_used: 0,
        status: Status::Error,
        wall_time: 0.0,
        checked: false,
        note: None,
    }
}

fn check_name(check: &Check) -> &'static str {
    match check {
        Check::Replicability { .. } => "replicability",
        Check::GlobalStability => "global_stability",
        Check::Confidence { .. } => "confidence",
        Check::HeavyHitters { .. } => "heavy_hitters",
        Check::ThresholdAnalysis => "threshold_analysis",
        Check::DpAudit { .. } => "dp_audit",
        Check::PerfectGeneralization { .. } => "perfect_generalization",
    }
}

fn run_point(config: &ExperimentConfig, grid_point: &str) -> Vec<ReportRow> {
    let start = Instant::now();
    let chain = match build_chain(config) {
        Ok(c) => c,
        Err(e) => {
            let mut r = row(config, grid_point, "build".into(), config.seed);
            r.checked = config.verifiers.iter().any(|v| v.expect.is_some());
            r.note = Some(e.to_string());
            return vec![r];
        }
    };
    let (data, chain) = chain;
    let mut rows = Vec::new();
    for (i, v) in config.verifiers.iter().enumerate() {
        let seed = derive_seed(config.seed, &[i as u64]);
        if config.budget_secs.is_some_and(|b| start.elapsed().as_secs_f64() > b) {
            let mut r = row(config, grid_point, check_name(&v.check).into(), seed);
            r.status = Status::Skipped;
            r.checked = v.expect.is_some();
            rows.push(r);
            continue;
        }
        let t0 = Instant::now();
        let trials = v.trials.unwrap_or(config.trials);
        match run_check(&v.check, &chain, &data, trials, seed, &config.caps) {
            Ok(ms) => {
                let elapsed = t0.elapsed().as_secs_f64();
                for (k, m) in ms.into_iter().enumerate() {
                    let status = if k == 0 {
                        judge(&m, v.expect.as_ref())
                    } else {
                        Status::Info
                    };
                    rows.push(ReportRow {
                        value: m.value,
                        ci: m.ci,
                        trials: m.trials,
                        bits_used: m.bits,
                        samples_used: m.samples,
                        status,
                        wall_time: elapsed,
                        checked: k == 0 && v.expect.is_some(),
                        note: m.note,
                        ..row(config, grid_point, m.metric, seed)
                    });
                }
            }
            Err(e) => {
                let mut r = row(config, grid_point, check_name(&v.check).into(), seed);
                r.checked = v.expect.is_some();
                r.note = Some(e.to_string());
                r.wall_time = t0.elapsed().as_secs_f64();
                rows.push(r);
            }
        }
    }
    if config.verifiers.is_empty() {
        let mut r = row(config, grid_point, "bit_budget".into(), config.seed);
        match meter_once(&chain.alg, &data, config.seed) {
            Ok((bits, samples)) => {
                r.value = chain.alg.bit_budget() as f64;
                r.bits_used = bits;
                r.samples_used = samples;
                r.trials = 1;
                r.status = Status::Info;
            }
            Err(e) => r.note = Some(e.to_string()),
        }
        rows.push(r);
    }
    rows
}

/// Runs the chain and verifiers; writes outputs when `config.output` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let rows = run_point(config, "");
    let report = ExperimentReport {
        id: config.id.clone(),
        rows,
        wall_time: start.elapsed().as_secs_f64(),
    };
    if let Some(path) = &config.output {
        write_outputs(
            path,
            &report,
            &serde_json::to_value(config).map_err(|e| Error::Io(e.to_string()))?,
        )?;
    }
    Ok(report)
}

/// Axis values keyed by JSON pointer into the config, e.g.
/// `{"/transforms/0/rho": [0.45, 0.25]}`.
pub type Grid = BTreeMap<String, Vec<Value>>;

/// Config with each `(pointer, value)` override applied.
pub fn apply_overrides(base: &Value, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let mut v = base.clone();
    for (ptr, val) in overrides {
        let slot = v.pointer_mut(ptr).ok_or_else(|| Error::Config {
            path: ptr.clone(),
            reason: "no such field in the config".into(),
        })?;
        *slot = val.clone();
    }
    serde_json::from_value(v).map_err(|e| Error::Config {
        path: overrides.iter().map(|o| o.0.as_str()).collect::<Vec<_>>().join(","),
        reason: e.to_string(),
    })
}

/// All grid points in lexicographic axis order.
pub fn grid_points(grid: &Grid) -> Result<Vec<Vec<(String, Value)>>> {
    if grid.is_empty() || grid.values().any(|v| v.is_empty()) {
        return Err(Error::Config {
            path: "grid".into(),
            reason: "grid must have at least one value per axis".into(),
        });
    }
    let mut points: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (ptr, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((ptr.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

fn point_label(point: &[(String, Value)]) -> String {
    point
        .iter()
        .map(|(p, v)| format!("{p}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Runs every grid point (concurrently) and concatenates the rows in grid
/// order. Outputs go to the base config's `output`.
pub fn sweep(config: &ExperimentConfig, grid: &Grid) -> Result<ExperimentReport> {
    let start = Instant::now();
    let base = serde_json::to_value(config).map_err(|e| Error::Io(e.to_string()))?;
    let points = grid_points(grid)?;
    let configs: Vec<(String, ExperimentConfig)> = points
        .iter()
        .map(|p| Ok((point_label(p), apply_overrides(&base, p)?)))
        .collect::<Result<_>>()?;
    let per_point: Vec<Vec<ReportRow>> = configs.par_iter().map(|(label, c)| run_point(c, label)).collect();
    let report = ExperimentReport {
        id: config.id.clone(),
        rows: per_point.into_iter().flatten().collect(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    if let Some(path) = &config.output {
        let summary_config = serde_json::json!({ "base": base, "grid": grid });
        write_outputs(path, &report, &summary_config)?;
    }
    Ok(report)
}

/// Hoeffding half-width used for every Monte-Carlo row.
pub fn row_ci(trials: u64) -> f64 {
    hoeffding_halfwidth(trials)
}

/// Empirical law of the final algorithm (for ad-hoc inspection).
pub fn output_law(config: &ExperimentConfig) -> Result<FiniteDistribution> {
    let (data, chain) = build_chain(config)?;
    estimate_law(chain.alg.as_ref(), &data, config.trials, config.seed)
}
