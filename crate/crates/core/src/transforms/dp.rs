//! Stability and differential privacy: gap-truncated exponential selection,
//! the bounded-support stability-to-DP pipeline with randomness compression,
//! heavy-hitter extraction from a DP algorithm, and a perfect-generalization
//! check against the marginal output law.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::algorithm::{Algorithm, AlgorithmRef};
use crate::compress::{compress_f64, CompressedSampler};
use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};
use crate::sample::{sample, SampleRef};
use crate::tape::{bits_for, BitTape};
use crate::task::{Output, StatisticalTask};
use crate::transforms::rep::{derandomize_hh, list_runs, stability_bits, Derandomized, ListMode};
use crate::verify::{estimate_confidence, estimate_law, hoeffding_halfwidth};

/// Constant `c` of the selection gap `⌈c·ln(1/δ)/ε⌉`.
pub const GAP_CONSTANT: f64 = 4.0;

/// `⌈c·ln(1/δ)/ε⌉` with `c = 4`.
pub fn gap_bound(epsilon: f64, delta: f64) -> u64 {
    (GAP_CONSTANT * (1.0 / delta).ln() / epsilon).ceil() as u64
}

/// `⌈log2 x⌉` for real `x ≥ 1`.
pub fn ceil_log2(x: f64) -> usize {
    (x.log2() - 1e-9).ceil().max(0.0) as usize
}

fn check_privacy(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("{epsilon} not positive")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("{delta} not in (0,1)")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

/// Multiset of outputs over an output universe `0..universe`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SelectionDataset {
    counts: BTreeMap<Output, u64>,
    universe: u32,
}

impl SelectionDataset {
    pub fn new(counts: BTreeMap<Output, u64>, universe: u32) -> Result<Self> {
        let counts: BTreeMap<Output, u64> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        if counts.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { counts, universe })
    }

    pub fn from_outputs(outputs: impl IntoIterator<Item = Output>, universe: u32) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for y in outputs {
            *counts.entry(y).or_default() += 1;
        }
        Self::new(counts, universe)
    }

    pub fn counts(&self) -> &BTreeMap<Output, u64> {
        &self.counts
    }

    pub fn count(&self, y: Output) -> u64 {
        self.counts.get(&y).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Most frequent element, ties to the smallest id.
    pub fn mode(&self) -> (Output, u64) {
        let mut best = (0, 0);
        for (&y, &c) in &self.counts {
            if c > best.1 {
                best = (y, c);
            }
        }
        best
    }

    /// Every element (including unseen universe members) whose count is at
    /// least `mode − gap`.
    pub fn candidates(&self, gap: u64) -> Vec<(Output, u64)> {
        let (_, top) = self.mode();
        let floor = top.saturating_sub(gap);
        let mut out: BTreeMap<Output, u64> = self
            .counts
            .iter()
            .filter(|&(_, &c)| c >= floor)
            .map(|(&y, &c)| (y, c))
            .collect();
        if floor == 0 {
            for y in 0..self.universe {
                out.entry(y).or_insert(0);
            }
        }
        out.into_iter().collect()
    }
}

/// Tape bits of one selection: `⌈log2 |candidates|⌉ + ⌈log2(2/δ)⌉`.
pub fn selection_bits(candidates: usize, delta: f64) -> usize {
    bits_for(candidates as u64) + ceil_log2(2.0 / delta)
}

/// Compressed law of the selection: candidates weighted by `exp(ε·count/4)`
/// and floored to `bits` bits (default [`selection_bits`]).
pub fn selection_sampler(
    data: &SelectionDataset,
    epsilon: f64,
    delta: f64,
    bits: Option<usize>,
) -> Result<CompressedSampler> {
    check_privacy(epsilon, delta)?;
    let cands = data.candidates(gap_bound(epsilon, delta));
    let (_, top) = data.mode();
    let law = FiniteDistribution::from_weights(
        cands
            .iter()
            .map(|&(y, c)| (y, (epsilon * (c as f64 - top as f64) / GAP_CONSTANT).exp())),
    )?;
    compress_f64(&law, bits.unwrap_or_else(|| selection_bits(cands.len(), delta)))
}

/// One selection driven by the tape.
pub fn dp_select(data: &SelectionDataset, epsilon: f64, delta: f64, tape: &mut BitTape) -> Result<Output> {
    selection_sampler(data, epsilon, delta, None)?.draw(tape)
}

/// Selection as a metered algorithm whose data points are outputs.
#[derive(Debug, Clone)]
pub struct SelectionMechanism {
    pub epsilon: f64,
    pub delta: f64,
    pub universe: u32,
    pub sample_size: usize,
}

impl Algorithm for SelectionMechanism {
    fn sample_size(&self) -> usize {
        self.sample_size
    }

    fn bit_budget(&self) -> usize {
        selection_bits(self.universe as usize, self.delta)
    }

    fn eval(&self, sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output> {
        sample.check_len(self.sample_size)?;
        let data = SelectionDataset::from_outputs(sample.points.iter().copied(), self.universe)?;
        dp_select(&data, self.epsilon, self.delta, tape)
    }

    fn label(&self) -> String {
        format!("dp-select[eps={}, delta={}]", self.epsilon, self.delta)
    }
}

// ---------------------------------------------------------------------------
// Stability to DP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpPipelineParams {
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub beta: f64,
    /// Number of users `T`, one list-stage run each.
    pub users: usize,
    /// Runs of the inner algorithm per user.
    pub list_runs: usize,
    pub dummy: Output,
    /// Size of the output universe.
    pub outputs: u32,
    pub c1: f64,
}

impl DpPipelineParams {
    /// Defaults: `T = ⌈c₁·2^C·ln(1/δ)/ε⌉` with `c₁ = 8` and `C = ⌈log2(1/η)⌉`,
    /// list runs `⌈2·ln(1/β)/η²⌉`, dummy = output 0.
    pub fn defaults(epsilon: f64, delta: f64, eta: f64, beta: f64, outputs: u32) -> Result<Self> {
        check_privacy(epsilon, delta)?;
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::param("beta", format!("{beta} not in (0,1)")));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::param("eta", format!("{eta} not in (0,1]")));
        }
        let c1 = 8.0;
        let c = stability_bits(eta);
        let users = (c1 * (1u64 << c) as f64 * (1.0 / delta).ln() / epsilon).ceil() as usize;
        let p = Self {
            epsilon,
            delta,
            eta,
            beta,
            users,
            list_runs: list_runs(eta, beta),
            dummy: 0,
            outputs,
            c1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_privacy(self.epsilon, self.delta)?;
        if self.users == 0 {
            return Err(Error::param("users", "must be at least 1"));
        }
        if self.list_runs == 0 {
            return Err(Error::param("list_runs", "must be at least 1"));
        }
        if self.outputs == 0 || self.dummy >= self.outputs {
            return Err(Error::param(
                "dummy",
                format!("{} not in an output universe of {}", self.dummy, self.outputs),
            ));
        }
        Ok(())
    }

    pub fn gap(&self) -> u64 {
        gap_bound(self.epsilon, self.delta)
    }

    /// Dummy copies `t + 1`, so the dummy alone exceeds the gap.
    pub fn dummies(&self) -> u64 {
        self.gap() + 1
    }

    /// `⌈log2(T+1)⌉ + ⌈log2(2/δ)⌉`.
    pub fn bits(&self) -> usize {
        selection_bits(self.users + 1, self.delta)
    }
}

/// Strong-correctness bound `T·(2β/η)^{t/4}` with `t = ⌈4·ln(1/δ)/ε⌉`.
pub fn strong_correctness_bound(users: usize, beta: f64, eta: f64, epsilon: f64, delta: f64) -> f64 {
    (users as f64 * (2.0 * beta / eta).powf(gap_bound(epsilon, delta) as f64 / GAP_CONSTANT)).min(1.0)
}

/// `C + log2(1/ε) + log2(1/δ) + log2 log2(1/δ) + slack`.
pub fn dp_bit_bound(c_glob: u32, epsilon: f64, delta: f64, slack: f64) -> f64 {
    let l = (1.0 / delta).log2();
    c_glob as f64 + (1.0 / epsilon).log2() + l + l.log2() + slack
}

/// `T`-user DP algorithm: each user block feeds the list stage, `t + 1`
/// dummies are added, and a compressed selection picks the answer.
#[derive(Clone)]
pub struct StabToDp {
    list: ListMode,
    params: DpPipelineParams,
}

pub fn stab_to_dp(alg: AlgorithmRef, params: DpPipelineParams, cap: usize) -> Result<StabToDp> {
    params.validate()?;
    if alg.bit_budget() != 0 {
        return Err(Error::param(
            "alg",
            format!("needs a deterministic algorithm, budget is {}", alg.bit_budget()),
        ));
    }
    Ok(StabToDp {
        list: ListMode::new(alg, params.list_runs, cap)?,
        params,
    })
}

/// Checks the inner failure rate against `η/2` on each family distribution.
pub fn stab_to_dp_checked(
    alg: AlgorithmRef,
    params: DpPipelineParams,
    task: &StatisticalTask,
    family: &[FiniteDistribution],
    trials: u64,
    seed: u64,
    cap: usize,
) -> Result<StabToDp> {
    for (k, d) in family.iter().enumerate() {
        let r = estimate_confidence(alg.as_ref(), task, d, trials, seed.wrapping_add(k as u64))?;
        if r.failure_rate > params.eta / 2.0 {
            return Err(Error::Precondition {
                what: format!("failure rate on family member {k}"),
                measured: r.failure_rate,
                required: params.eta / 2.0,
            });
        }
    }
    stab_to_dp(alg, params, cap)
}

impl StabToDp {
    pub fn params(&self) -> &DpPipelineParams {
        &self.params
    }

    pub fn user_block(&self) -> usize {
        self.list.sample_size()
    }

    /// Selection dataset built from one input.
    pub fn dataset(&self, sample: SampleRef<'_>) -> Result<SelectionDataset> {
        sample.check_len(self.sample_size())?;
        let mut counts: BTreeMap<Output, u64> = BTreeMap::new();
        let mut empty = BitTape::empty();
        for block in sample.blocks_exact(self.user_block(), self.params.users) {
            *counts.entry(self.list.eval(block, &mut empty)?).or_default() += 1;
        }
        *counts.entry(self.params.dummy).or_default() += self.params.dummies();
        SelectionDataset::new(counts, self.params.outputs)
    }

    pub fn sampler(&self, sample: SampleRef<'_>) -> Result<CompressedSampler> {
        let data = self.dataset(sample)?;
        selection_sampler(&data, self.params.epsilon, self.params.delta, Some(self.params.bits()))
    }

    /// Law before compression.
    pub fn uncompressed_law(&self, sample: SampleRef<'_>) -> Result<FiniteDistribution> {
        let data = self.dataset(sample)?;
        let gap = self.params.gap();
        let (_, top) = data.mode();
        FiniteDistribution::from_weights(
            data.candidates(gap)
                .into_iter()
                .map(|(y, c)| (y, (self.params.epsilon * (c as f64 - top as f64) / GAP_CONSTANT).exp())),
        )
    }
}

impl Algorithm for StabToDp {
    fn sample_size(&self) -> usize {
        self.params.users * self.list.sample_size()
    }

    fn bit_budget(&self) -> usize {
        self.params.bits()
    }

    fn eval(&self, sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output> {
        self.sampler(sample)?.draw(tape)
    }

    fn exact_law(&self, sample: SampleRef<'_>, _cap: usize) -> Result<FiniteDistribution> {
        Ok(self.sampler(sample)?.law())
    }

    fn label(&self) -> String {
        format!("stab-to-dp[T={}, {}]", self.params.users, self.list.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongCorrectnessReport {
    /// Fraction of inputs whose output support leaves the accepted set.
    pub violation_rate: f64,
    pub ci_halfwidth: f64,
    pub trials: u64,
    pub bound: f64,
    pub max_support: usize,
}

/// Fraction of sampled inputs whose exact output support is not inside the
/// accepted set of `dist`.
pub fn estimate_strong_correctness(
    alg: &StabToDp,
    task: &StatisticalTask,
    dist: &FiniteDistribution,
    trials: u64,
    seed: u64,
) -> Result<StrongCorrectnessReport> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let n = alg.sample_size();
    let (bad, max_support) = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(u64, usize)> {
            let s = sample(dist, n, seed, t);
            let law = alg.exact_law(s.view(), 0)?;
            let support = law.positive_support();
            Ok((
                u64::from(!support.iter().all(|&y| task.is_correct(dist, y))),
                support.len(),
            ))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1.max(b.1))))?;
    let p = &alg.params;
    Ok(StrongCorrectnessReport {
        violation_rate: bad as f64 / trials as f64,
        ci_halfwidth: hoeffding_halfwidth(trials),
        trials,
        bound: strong_correctness_bound(p.users, p.beta, p.eta, p.epsilon, p.delta),
        max_support,
    })
}

// ---------------------------------------------------------------------------
// DP to stability
// ---------------------------------------------------------------------------

/// Mass `1/(2·e^{1/2})` that a perfectly generalizing algorithm puts on the
/// support of a typical conditional law.
pub fn pg_support_mass() -> f64 {
    0.5 / 0.5f64.exp()
}

/// Fails unless `ε ≤ c₂/sqrt(T·ln T)` and `δ ≤ c₂/T`.
pub fn dp_precondition(users: usize, epsilon: f64, delta: f64, c2: f64) -> Result<()> {
    let t = users as f64;
    let eps_max = if users <= 1 {
        f64::INFINITY
    } else {
        c2 / (t * t.ln()).sqrt()
    };
    if epsilon > eps_max {
        return Err(Error::Precondition {
            what: "epsilon above c2/sqrt(T ln T)".into(),
            measured: epsilon,
            required: eps_max,
        });
    }
    if delta > c2 / t {
        return Err(Error::Precondition {
            what: "delta above c2/T".into(),
            measured: delta,
            required: c2 / t,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpToStabParams {
    pub users: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub c2: f64,
    /// Slack below `1/(2·e^{1/2})` accepted when searching for a witness.
    pub tolerance: f64,
    pub gamma_prime: f64,
    pub marginal_trials: u64,
    pub search_budget: usize,
}

impl DpToStabParams {
    pub fn new(users: usize, epsilon: f64, delta: f64) -> Self {
        Self {
            users,
            epsilon,
            delta,
            c2: 0.125,
            tolerance: 0.02,
            gamma_prime: 0.05,
            marginal_trials: 20_000,
            search_budget: 200,
        }
    }
}

/// Extraction result: the derandomized algorithm and how it was found.
#[derive(Clone)]
pub struct DpToStab {
    pub det: Derandomized,
    pub witness: Vec<u32>,
    pub support: Vec<Output>,
    pub mass: f64,
    pub hitter: Output,
    pub weight: f64,
    pub marginal: FiniteDistribution,
    pub attempts: usize,
}

/// Finds an input whose exact output support carries marginal mass at least
/// `1/(2·e^{1/2}) − tolerance`, takes its heaviest element as heavy hitter
/// and derandomizes at that weight.
pub fn dp_to_stab(
    alg: AlgorithmRef,
    dist: &FiniteDistribution,
    params: &DpToStabParams,
    cap: usize,
    seed: u64,
) -> Result<DpToStab> {
    check_privacy(params.epsilon, params.delta)?;
    dp_precondition(params.users, params.epsilon, params.delta, params.c2)?;
    if alg.bit_budget() > cap {
        return Err(Error::EnumerationTooLarge {
            requested: alg.bit_budget(),
            cap,
        });
    }
    let marginal = estimate_law(alg.as_ref(), dist, params.marginal_trials, seed)?;
    let target = pg_support_mass() - params.tolerance;
    let mut best = 0.0f64;
    for attempt in 0..params.search_budget {
        let s = sample(dist, alg.sample_size(), seed, u64::MAX - attempt as u64);
        let support = alg.exact_law(s.view(), cap)?.positive_support();
        let mass: f64 = support.iter().map(|&y| marginal.prob(y)).sum();
        best = best.max(mass);
        if mass < target {
            continue;
        }
        let (hitter, weight) = support
            .iter()
            .map(|&y| (y, marginal.prob(y)))
            .fold((support[0], -1.0), |acc, (y, w)| if w > acc.1 { (y, w) } else { acc });
        if params.gamma_prime >= weight {
            return Err(Error::param(
                "gamma_prime",
                format!("{} not below the heavy-hitter weight {weight}", params.gamma_prime),
            ));
        }
        let det = derandomize_hh(alg.clone(), weight, params.gamma_prime, cap)?;
        return Ok(DpToStab {
            det,
            witness: s.points,
            support,
            mass,
            hitter,
            weight,
            marginal,
            attempts: attempt + 1,
        });
    }
    Err(Error::SearchFailed {
        what: "no input whose support carries the perfect-generalization mass".into(),
        best,
    })
}

/// `k`-ary randomized response over `2^bits` answers: the tape value `v` is
/// output unless `v < keep`, in which case the majority bit of the sample is.
#[derive(Debug, Clone)]
pub struct RandomizedResponse {
    pub bits: usize,
    pub keep: u64,
    pub sample_size: usize,
}

impl Algorithm for RandomizedResponse {
    fn sample_size(&self) -> usize {
        self.sample_size
    }

    fn bit_budget(&self) -> usize {
        self.bits
    }

    fn eval(&self, sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output> {
        sample.check_len(self.sample_size)?;
        let v = tape.read_bits(self.bits)?;
        if v < self.keep {
            let ones = sample.points.iter().filter(|&&x| x & 1 == 1).count();
            Ok(u32::from(2 * ones > sample.points.len()))
        } else {
            Ok(v as Output)
        }
    }

    fn label(&self) -> String {
        format!("randomized-response[{} bits, keep {}]", self.bits, self.keep)
    }
}

// ---------------------------------------------------------------------------
// Perfect generalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PgParams {
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    pub marginal_trials: u64,
    pub inputs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PgReport {
    pub fraction_failing: f64,
    pub inputs: u64,
    pub worst_divergence: f64,
    pub passed: bool,
}

/// Compares exact conditional laws on sampled inputs with an estimated
/// marginal law.
pub fn check_perfect_generalization(
    alg: &dyn Algorithm,
    dist: &FiniteDistribution,
    params: &PgParams,
    cap: usize,
    seed: u64,
) -> Result<PgReport> {
    let marginal = estimate_law(alg, dist, params.marginal_trials, seed)?;
    check_perfect_generalization_against(alg, dist, &marginal, params, cap, seed)
}

/// Same check against a given canonical law.
pub fn check_perfect_generalization_against(
    alg: &dyn Algorithm,
    dist: &FiniteDistribution,
    canonical: &FiniteDistribution,
    params: &PgParams,
    cap: usize,
    seed: u64,
) -> Result<PgReport> {
    check_privacy(params.epsilon, params.delta)?;
    if params.inputs == 0 {
        return Err(Error::param("inputs", "must be at least 1"));
    }
    let divergences = (0..params.inputs)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let s = sample(dist, alg.sample_size(), seed, k);
            let law = alg.exact_law(s.view(), cap)?;
            Ok(law
                .hockey_stick(canonical, params.epsilon)
                .max(canonical.hockey_stick(&law, params.epsilon)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let failing = divergences.iter().filter(|&&d| d > params.delta).count();
    let fraction_failing = failing as f64 / params.inputs as f64;
    Ok(PgReport {
        fraction_failing,
        inputs: params.inputs,
        worst_divergence: divergences.iter().copied().fold(0.0, f64::max),
        passed: fraction_failing <= params.beta,
    })
}
