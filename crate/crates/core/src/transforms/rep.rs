//! Transforms between heavy-hitter stability, deterministic global stability
//! and replicability: list-then-mode derandomization, majority amplification
//! on a shared tape, random-threshold selection, and generic amplification.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::algorithm::{plurality, Algorithm, AlgorithmRef};
use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};
use crate::sample::SampleRef;
use crate::tape::{bits_for, BitTape};
use crate::task::{Output, BOTTOM};
use crate::verify::{estimate_global_stability, estimate_replicability, ReplicabilityReport};

/// Largest number of count vectors the mode-law DP keeps at once.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;

const CACHE_LIMIT: usize = 200_000;

/// Relative tolerance under which two probabilities count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Smallest id whose probability is maximal up to [`TIE_TOLERANCE`].
pub fn argmax_phi(law: &FiniteDistribution) -> Output {
    let best = law.probs().iter().copied().fold(0.0, f64::max);
    law.iter()
        .find(|&(_, p)| p >= best * (1.0 - TIE_TOLERANCE))
        .map(|(y, _)| y)
        .unwrap_or(BOTTOM)
}

// ---------------------------------------------------------------------------
// Exact law of the mode of independent draws
// ---------------------------------------------------------------------------

type LawKey = Vec<(Output, u64)>;

fn law_key(law: &FiniteDistribution) -> LawKey {
    law.iter()
        .filter(|&(_, p)| p > 0.0)
        .map(|(y, p)| (y, p.to_bits()))
        .collect()
}

/// Memo of mode laws keyed by the multiset of per-block laws.
#[derive(Debug, Default)]
pub struct ModeCache {
    map: Mutex<HashMap<Vec<LawKey>, FiniteDistribution>>,
}

impl ModeCache {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("mode cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Exact law of the plurality (ties to the smallest id) of independent draws,
/// one from each law in `laws`. Dynamic program over count vectors.
pub fn mode_law(laws: &[FiniteDistribution], state_cap: usize) -> Result<FiniteDistribution> {
    if laws.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ids: Vec<Output> = laws.iter().flat_map(|l| l.positive_support()).collect();
    ids.sort_unstable();
    ids.dedup();
    let index: HashMap<Output, usize> = ids.iter().enumerate().map(|(i, &y)| (y, i)).collect();

    let mut base = vec![0u32; ids.len()];
    let mut states: HashMap<Vec<u32>, f64> = HashMap::new();
    states.insert(vec![0; ids.len()], 1.0);
    for law in laws {
        let atoms: Vec<(usize, f64)> = law
            .iter()
            .filter(|&(_, p)| p > 0.0)
            .map(|(y, p)| (index[&y], p))
            .collect();
        if let [(i, _)] = atoms[..] {
            base[i] += 1;
            continue;
        }
        let mut next: HashMap<Vec<u32>, f64> = HashMap::with_capacity(states.len() * atoms.len());
        for (state, w) in &states {
            for &(i, p) in &atoms {
                let mut s = state.clone();
                s[i] += 1;
                *next.entry(s).or_default() += w * p;
            }
        }
        if next.len() > state_cap {
            return Err(Error::param(
                "state_cap",
                format!("mode DP needs {} states, cap {state_cap}", next.len()),
            ));
        }
        states = next;
    }
    let mut acc: BTreeMap<Output, f64> = BTreeMap::new();
    for (state, w) in states {
        let mut best = 0usize;
        let mut best_count = 0u32;
        for (i, c) in state.iter().enumerate() {
            let total = c + base[i];
            if total > best_count {
                best = i;
                best_count = total;
            }
        }
        *acc.entry(ids[best]).or_default() += w;
    }
    FiniteDistribution::from_weights(acc)
}

/// Run count of the list stage: `⌈2·ln(1/γ′)/η²⌉`.
pub fn list_runs(eta: f64, gamma_prime: f64) -> usize {
    (2.0 * (1.0 / gamma_prime).ln() / (eta * eta)).ceil().max(1.0) as usize
}

/// Runs the inner algorithm on `runs` consecutive blocks, each with its own
/// slice of the tape, and outputs the plurality answer.
#[derive(Clone)]
pub struct ListMode {
    inner: AlgorithmRef,
    runs: usize,
    cap: usize,
    cache: Arc<ModeCache>,
}

impl ListMode {
    pub fn new(inner: AlgorithmRef, runs: usize, cap: usize) -> Result<Self> {
        Self::with_cache(inner, runs, cap, ModeCache::new())
    }

    pub fn with_cache(inner: AlgorithmRef, runs: usize, cap: usize, cache: Arc<ModeCache>) -> Result<Self> {
        if runs == 0 {
            return Err(Error::param("runs", "must be at least 1"));
        }
        Ok(Self {
            inner,
            runs,
            cap,
            cache,
        })
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn inner(&self) -> &AlgorithmRef {
        &self.inner
    }
}

impl Algorithm for ListMode {
    fn sample_size(&self) -> usize {
        self.runs * self.inner.sample_size()
    }

    fn bit_budget(&self) -> usize {
        self.runs * self.inner.bit_budget()
    }

    fn eval(&self, sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output> {
        sample.check_len(self.sample_size())?;
        let ell = self.inner.bit_budget();
        let mut outs = Vec::with_capacity(self.runs);
        for block in sample.blocks_exact(self.inner.sample_size(), self.runs) {
            let mut sub = tape.split_off(ell)?;
            outs.push(self.inner.eval(block, &mut sub)?);
        }
        Ok(plurality(outs).expect("at least one run"))
    }

    /// Per-block exact laws combined by [`mode_law`], memoized on the
    /// multiset of block laws.
    fn exact_law(&self, sample: SampleRef<'_>, cap: usize) -> Result<FiniteDistribution> {
        sample.check_len(self.sample_size())?;
        let laws = sample
            .blocks_exact(self.inner.sample_size(), self.runs)
            .into_iter()
            .map(|b| self.inner.exact_law(b, cap))
            .collect::<Result<Vec<_>>>()?;
        let mut key: Vec<LawKey> = laws.iter().map(law_key).collect();
        key.sort_unstable();
        if let Some(hit) = self.cache.map.lock().expect("mode cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let law = mode_law(&laws, DEFAULT_STATE_CAP)?;
        let mut map = self.cache.map.lock().expect("mode cache poisoned");
        if map.len() >= CACHE_LIMIT {
            map.clear();
        }
        map.insert(key, law.clone());
        Ok(law)
    }

    fn label(&self) -> String {
        format!("list-mode[{}×{}]", self.runs, self.inner.label())
    }
}

/// Budget-0 algorithm outputting the most likely answer of the list stage
/// over a uniform tape.
#[derive(Clone)]
pub struct Derandomized {
    list: ListMode,
}

impl Derandomized {
    pub fn from_list(list: ListMode) -> Self {
        Self { list }
    }

    pub fn list(&self) -> &ListMode {
        &self.list
    }

    /// Law of the list stage on `sample`, whose argmax is the output.
    pub fn list_law(&self, sample: SampleRef<'_>) -> Result<FiniteDistribution> {
        self.list.exact_law(sample, self.list.cap)
    }
}

impl Algorithm for Derandomized {
    fn sample_size(&self) -> usize {
        self.list.sample_size()
    }

    fn bit_budget(&self) -> usize {
        0
    }

    fn eval(&self, sample: SampleRef<'_>, _tape: &mut BitTape) -> Result<Output> {
        Ok(argmax_phi(&self.list_law(sample)?))
    }

    fn label(&self) -> String {
        format!("derandomized[{}]", self.list.label())
    }
}

/// Heavy-hitter to deterministic stability with the default run count.
pub fn derandomize_hh(alg: AlgorithmRef, eta: f64, gamma_prime: f64, cap: usize) -> Result<Derandomized> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::param("eta", format!("{eta} not in (0,1]")));
    }
    if !(gamma_prime > 0.0 && gamma_prime < eta) {
        return Err(Error::param("gamma_prime", format!("{gamma_prime} not in (0, eta)")));
    }
    derandomize_with_runs(alg, list_runs(eta, gamma_prime), cap)
}

pub fn derandomize_with_runs(alg: AlgorithmRef, runs: usize, cap: usize) -> Result<Derandomized> {
    if alg.bit_budget() > cap {
        return Err(Error::EnumerationTooLarge {
            requested: alg.bit_budget(),
            cap,
        });
    }
    Ok(Derandomized::from_list(ListMode::new(alg, runs, cap)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityCheck {
    pub collision: ReplicabilityReport,
    pub required: f64,
    pub passed: bool,
}

/// Measures two-run collision of a deterministic algorithm against a
/// required level; the verdict uses the upper confidence limit.
pub fn verify_stability(
    alg: &dyn Algorithm,
    dist: &FiniteDistribution,
    required: f64,
    trials: u64,
    seed: u64,
) -> Result<StabilityCheck> {
    let collision = estimate_global_stability(alg, dist, trials, seed)?;
    let passed = collision.estimate + collision.ci_halfwidth >= required;
    Ok(StabilityCheck {
        collision,
        required,
        passed,
    })
}

// ---------------------------------------------------------------------------
// Replicability to global stability
// ---------------------------------------------------------------------------

/// Block count `⌈ln(2/τ)/(2γ²)⌉` of the majority amplifier.
pub fn majority_blocks(gamma: f64, tau: f64) -> usize {
    ((2.0 / tau).ln() / (2.0 * gamma * gamma)).ceil().max(1.0) as usize
}

/// Plurality of the inner algorithm over consecutive blocks, every block
/// reading the same `ℓ` tape bits.
#[derive(Clone)]
pub struct MajorityAmplified {
    inner: AlgorithmRef,
    blocks: usize,
}

impl MajorityAmplified {
    pub fn new(inner: AlgorithmRef, blocks: usize) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::param("blocks", "must be at least 1"));
        }
        Ok(Self { inner, blocks })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }
}

impl Algorithm for MajorityAmplified {
    fn sample_size(&self) -> usize {
        self.blocks * self.inner.sample_size()
    }

    fn bit_budget(&self) -> usize {
        self.inner.bit_budget()
    }

    fn eval(&self, sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output> {
        sample.check_len(self.sample_size())?;
        let shared = tape.split_off(self.inner.bit_budget())?;
        let mut outs = Vec::with_capacity(self.blocks);
        for block in sample.blocks_exact(self.inner.sample_size(), self.blocks) {
            outs.push(self.inner.eval(block, &mut shared.replay())?);
        }
        Ok(plurality(outs).expect("at least one block"))
    }

    fn label(&self) -> String {
        format!("majority[{}×{}]", self.blocks, self.inner.label())
    }
}

pub fn rep_to_glob(alg: AlgorithmRef, gamma: f64, tau: f64) -> Result<MajorityAmplified> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::param("gamma", format!("{gamma} not in (0, 1/2)")));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::param("tau", format!("{tau} not in (0,1)")));
    }
    MajorityAmplified::new(alg, majority_blocks(gamma, tau))
}

/// Measured shared-tape (or independent-tape) replicability on every family
/// distribution; fails with the first measurement not exceeding `required`.
pub fn require_replicability(
    alg: &dyn Algorithm,
    family: &[FiniteDistribution],
    required: f64,
    shared: bool,
    trials: u64,
    seed: u64,
) -> Result<Vec<ReplicabilityReport>> {
    let mut reports = Vec::with_capacity(family.len());
    for (k, d) in family.iter().enumerate() {
        let r = estimate_replicability(alg, d, trials, shared, seed.wrapping_add(k as u64))?;
        if r.estimate <= required {
            return Err(Error::Precondition {
                what: format!("replicability on family member {k}"),
                measured: r.estimate,
                required,
            });
        }
        reports.push(r);
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// Global stability to replicability
// ---------------------------------------------------------------------------

/// How the answer is picked from the set of outputs above the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Smallest id in the set, so the answer depends only on the set.
    PhiFirst,
    /// Smallest empirical frequency in the set, ties by id.
    MinEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ThresholdingParams {
    /// Nominal threshold count `T`.
    pub thresholds: usize,
    pub eta: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Number of inner runs `N` behind the frequency estimates.
    pub runs: usize,
    pub rho: f64,
    pub rule: SelectionRule,
}

/// `⌈log2(1/η)⌉`.
pub fn stability_bits(eta: f64) -> u32 {
    ((1.0 / eta).log2() - 1e-9).ceil().max(0.0) as u32
}

/// `⌈(2^C − 1)/ρ⌉` with `C = ⌈log2(1/η)⌉`.
pub fn threshold_count(eta: f64, rho: f64) -> usize {
    let c = stability_bits(eta);
    ((((1u64 << c) - 1) as f64 / rho) - 1e-9).ceil().max(1.0) as usize
}

impl ThresholdingParams {
    /// Defaults: `γ = ηρ/(4T)` (kept so that `η − T′γ ≥ η/2`), `τ = γ/10` and
    /// `N = 4·⌈9/(2γ²)·ln(4/(β·τ′))⌉`, half of `τ′` going to estimation.
    pub fn defaults(eta: f64, rho: f64, beta: f64, tau_prime: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::param("beta", format!("{beta} not in (0,1)")));
        }
        if !(tau_prime > 0.0 && tau_prime < 1.0) {
            return Err(Error::param("tau_prime", format!("{tau_prime} not in (0,1)")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::param("rho", format!("{rho} not in (0,1)")));
        }
        let thresholds = threshold_count(eta, rho);
        let t_eff = thresholds.next_power_of_two();
        let mut gamma = eta * rho / (4.0 * thresholds as f64);
        if eta - t_eff as f64 * gamma < eta / 2.0 {
            gamma = eta / (2.0 * t_eff as f64);
        }
        let runs = 4 * (9.0 / (2.0 * gamma * gamma) * (4.0 / (beta * tau_prime)).ln()).ceil() as usize;
        let p = Self {
            thresholds,
            eta,
            gamma,
            tau: gamma / 10.0,
            runs,
            rho,
            rule: SelectionRule::PhiFirst,
        };
        p.validate()?;
        Ok(p)
    }

    /// Threshold grid spread evenly over `[η/2, η)`, with `N` runs.
    pub fn spread(eta: f64, rho: f64, runs: usize) -> Result<Self> {
        let thresholds = threshold_count(eta, rho);
        let gamma = eta / (2.0 * thresholds.next_power_of_two() as f64);
        let p = Self {
            thresholds,
            eta,
            gamma,
            tau: gamma / 10.0,
            runs,
            rho,
            rule: SelectionRule::PhiFirst,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.tau = gamma / 10.0;
        self.validate()?;
        Ok(self)
    }

    pub fn with_runs(mut self, runs: usize) -> Result<Self> {
        self.runs = runs;
        self.validate()?;
        Ok(self)
    }

    pub fn with_thresholds(mut self, thresholds: usize) -> Result<Self> {
        self.thresholds = thresholds;
        self.validate()?;
        Ok(self)
    }

    pub fn with_rule(mut self, rule: SelectionRule) -> Self {
        self.rule = rule;
        self
    }

    /// Threshold count after rounding up to a power of two.
    pub fn effective_thresholds(&self) -> usize {
        self.thresholds.next_power_of_two()
    }

    /// Tape bits needed to pick a threshold.
    pub fn bits(&self) -> usize {
        bits_for(self.effective_thresholds() as u64)
    }

    /// Threshold `η − iγ` for `i ∈ 1..=T′`.
    pub fn threshold(&self, i: usize) -> f64 {
        self.eta - i as f64 * self.gamma
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::param("eta", format!("{} not in (0,1]", self.eta)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::param("rho", format!("{} not in (0,1)", self.rho)));
        }
        if !(self.tau > 0.0 && self.tau < self.gamma && self.gamma < self.eta) {
            return Err(Error::param(
                "gamma",
                format!("need 0 < tau < gamma < eta, got tau={} gamma={}", self.tau, self.gamma),
            ));
        }
        if self.thresholds == 0 {
            return Err(Error::param("thresholds", "must be at least 1"));
        }
        if self.threshold(self.effective_thresholds()) <= 0.0 {
            return Err(Error::param("gamma", "lowest threshold is not positive"));
        }
        if self.runs == 0 {
            return Err(Error::param("runs", "must be at least 1"));
        }
        Ok(())
    }
}

/// Smallest count `c` with `c/N ≥ t`, or `N + 1` if none.
pub fn min_count(runs: usize, t: f64) -> usize {
    let guess = ((t * runs as f64).floor() as usize).saturating_sub(1).min(runs + 1);
    (guess..=runs)
        .find(|&c| c as f64 / runs as f64 >= t)
        .unwrap_or(runs + 1)
}

fn select(counts: &BTreeMap<Output, usize>, runs: usize, t: f64, rule: SelectionRule) -> Output {
    let above = counts.iter().filter(|&(_, &c)| c as f64 / runs as f64 >= t);
    let pick = match rule {
        SelectionRule::PhiFirst => above.map(|(&y, _)| y).next(),
        SelectionRule::MinEstimate => above.min_by_key(|&(&y, &c)| (c, y)).map(|(&y, _)| y),
    };
    pick.unwrap_or(BOTTOM)
}

/// Random-threshold selection over empirical frequencies of a deterministic
/// algorithm.
#[derive(Clone)]
pub struct GlobToRep {
    inner: AlgorithmRef,
    params: ThresholdingParams,
}

impl GlobToRep {
    pub fn params(&self) -> &ThresholdingParams {
        &self.params
    }

    fn counts(&self, sample: SampleRef<'_>) -> Result<BTreeMap<Output, usize>> {
        sample.check_len(self.sample_size())?;
        let mut counts = BTreeMap::new();
        let mut empty = BitTape::empty();
        for block in sample.blocks_exact(self.inner.sample_size(), self.params.runs) {
            *counts.entry(self.inner.eval(block, &mut empty)?).or_default() += 1;
        }
        Ok(counts)
    }
}

pub fn glob_to_rep(alg: AlgorithmRef, params: ThresholdingParams) -> Result<GlobToRep> {
    params.validate()?;
    if alg.bit_budget() != 0 {
        return Err(Error::param(
            "alg",
            format!("needs a deterministic algorithm, budget is {}", alg.bit_budget()),
        ));
    }
    Ok(GlobToRep { inner: alg, params })
}

impl Algorithm for GlobToRep {
    fn sample_size(&self) -> usize {
        self.params.runs * self.inner.sample_size()
    }

    fn bit_budget(&self) -> usize {
        self.params.bits()
    }

    fn eval(&self, sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output> {
        let counts = self.counts(sample)?;
        let i = tape.read_bits(self.params.bits())? as usize + 1;
        Ok(select(
            &counts,
            self.params.runs,
            self.params.threshold(i),
            self.params.rule,
        ))
    }

    fn exact_law(&self, sample: SampleRef<'_>, _cap: usize) -> Result<FiniteDistribution> {
        let counts = self.counts(sample)?;
        let t_eff = self.params.effective_thresholds();
        let mut acc: BTreeMap<Output, u64> = BTreeMap::new();
        for i in 1..=t_eff {
            *acc.entry(select(
                &counts,
                self.params.runs,
                self.params.threshold(i),
                self.params.rule,
            ))
            .or_default() += 1;
        }
        FiniteDistribution::from_counts(&acc)
    }

    fn label(&self) -> String {
        format!(
            "glob-to-rep[T={}, {}]",
            self.params.effective_thresholds(),
            self.inner.label()
        )
    }
}

/// Checks the inner algorithm's failure rate against `η/8` on every family
/// distribution before building the transform.
pub fn glob_to_rep_checked(
    alg: AlgorithmRef,
    params: ThresholdingParams,
    task: &crate::task::StatisticalTask,
    family: &[FiniteDistribution],
    trials: u64,
    seed: u64,
) -> Result<GlobToRep> {
    for (k, d) in family.iter().enumerate() {
        let r = crate::verify::estimate_confidence(alg.as_ref(), task, d, trials, seed.wrapping_add(k as u64))?;
        if r.failure_rate > params.eta / 8.0 {
            return Err(Error::Precondition {
                what: format!("failure rate on family member {k}"),
                measured: r.failure_rate,
                required: params.eta / 8.0,
            });
        }
    }
    glob_to_rep(alg, params)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub index: usize,
    pub threshold: f64,
    pub min_count: usize,
    pub bottom: f64,
    pub replicability: f64,
    /// Some true weight lies within `γ/3` of this threshold.
    pub near: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdAnalysis {
    pub rows: Vec<ThresholdRow>,
    /// Mean of the per-threshold agreement probabilities.
    pub replicability: f64,
    pub near_thresholds: usize,
    /// `(T′ − near)/T′`.
    pub far_fraction: f64,
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for i in 1..=n {
        out[i] = out[i - 1] + (i as f64).ln();
    }
    out
}

/// Exact shared-tape agreement of the smallest-id rule, threshold by
/// threshold, when each of the `N` inner runs is an independent draw from
/// `law`. The multinomial counts are peeled off in id order as conditional
/// binomials.
pub fn threshold_analysis(law: &FiniteDistribution, params: &ThresholdingParams) -> Result<ThresholdAnalysis> {
    params.validate()?;
    if params.rule != SelectionRule::PhiFirst {
        return Err(Error::param("rule", "exact analysis covers the smallest-id rule only"));
    }
    let n = params.runs;
    let lf = ln_factorials(n);
    let atoms: Vec<f64> = law.iter().filter(|&(_, p)| p > 0.0).map(|(_, p)| p).collect();
    let t_eff = params.effective_thresholds();
    let mut rows = Vec::with_capacity(t_eff);
    for i in 1..=t_eff {
        let t = params.threshold(i);
        let c = min_count(n, t);
        let mut w = vec![0.0; n + 1];
        w[n] = 1.0;
        let mut rest = 1.0;
        let mut agree = 0.0;
        for &p in &atoms {
            let q = (p / rest).min(1.0);
            rest -= p;
            let mut next = vec![0.0; n + 1];
            let mut hit = 0.0;
            for (r, &wr) in w.iter().enumerate() {
                if wr == 0.0 {
                    continue;
                }
                let mut below = 0.0;
                for v in 0..c.min(r + 1) {
                    let pmf = binomial_pmf(&lf, r, v, q);
                    below += pmf;
                    next[r - v] += wr * pmf;
                }
                hit += wr * (1.0 - below).max(0.0);
            }
            agree += hit * hit;
            w = next;
        }
        let bottom: f64 = w.iter().sum();
        agree += bottom * bottom;
        let near = law.iter().any(|(_, p)| (p - t).abs() < params.gamma / 3.0);
        rows.push(ThresholdRow {
            index: i,
            threshold: t,
            min_count: c,
            bottom,
            replicability: agree,
            near,
        });
    }
    let replicability = rows.iter().map(|r| r.replicability).sum::<f64>() / t_eff as f64;
    let near_thresholds = rows.iter().filter(|r| r.near).count();
    Ok(ThresholdAnalysis {
        rows,
        replicability,
        near_thresholds,
        far_fraction: (t_eff - near_thresholds) as f64 / t_eff as f64,
    })
}

fn binomial_pmf(lf: &[f64], n: usize, k: usize, q: f64) -> f64 {
    if q <= 0.0 {
        return f64::from(u8::from(k == 0));
    }
    if q >= 1.0 {
        return f64::from(u8::from(k == n));
    }
    (lf[n] - lf[k] - lf[n - k] + k as f64 * q.ln() + (n - k) as f64 * (-q).ln_1p()).exp()
}

// ---------------------------------------------------------------------------
// Amplification
// ---------------------------------------------------------------------------

/// Outputs the inner algorithm's answer under one of a fixed list of tapes,
/// the list index read from the tape.
#[derive(Clone)]
pub struct ListMember {
    inner: AlgorithmRef,
    tapes: Vec<BitTape>,
}

impl ListMember {
    pub fn new(inner: AlgorithmRef, tapes: Vec<BitTape>) -> Result<Self> {
        if tapes.is_empty() || !tapes.len().is_power_of_two() {
            return Err(Error::param(
                "tapes",
                format!("need a power-of-two list, got {}", tapes.len()),
            ));
        }
        Ok(Self { inner, tapes })
    }
}

impl Algorithm for ListMember {
    fn sample_size(&self) -> usize {
        self.inner.sample_size()
    }

    fn bit_budget(&self) -> usize {
        bits_for(self.tapes.len() as u64)
    }

    fn eval(&self, sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output> {
        let j = tape.read_bits(self.bit_budget())? as usize;
        self.inner.eval(sample, &mut self.tapes[j].replay())
    }

    /// Each distinct listed tape is evaluated once and weighted by its
    /// multiplicity.
    fn exact_law(&self, sample: SampleRef<'_>, _cap: usize) -> Result<FiniteDistribution> {
        let mut mult: HashMap<&BitTape, u64> = HashMap::new();
        for t in &self.tapes {
            *mult.entry(t).or_default() += 1;
        }
        let mut acc: BTreeMap<Output, u64> = BTreeMap::new();
        for (t, k) in mult {
            *acc.entry(self.inner.eval(sample, &mut t.replay())?).or_default() += k;
        }
        FiniteDistribution::from_counts(&acc)
    }

    fn label(&self) -> String {
        format!("list-member[{}×{}]", self.tapes.len(), self.inner.label())
    }
}

/// List size `⌈2·ln(2/ρ)/ν⌉`.
pub fn amplification_list_size(nu: f64, rho: f64) -> usize {
    (2.0 * (2.0 / rho).ln() / nu).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplifyParams {
    pub nu: f64,
    pub rho: f64,
    /// Listed tapes, a power of two.
    pub list_size: usize,
    /// Heavy-hitter level assumed for a uniform list member.
    pub list_eta: f64,
    pub gamma_prime: f64,
    pub list_runs: usize,
    /// Threshold selection at target `ρ/2`.
    pub glob: ThresholdingParams,
}

impl AmplifyParams {
    /// Defaults: `list_eta = ν/(2t)`, `γ′ = list_eta/4`, threshold selection
    /// at the largest power of two below `list_eta − γ′`.
    pub fn defaults(nu: f64, rho: f64, beta: f64, tau_prime: f64) -> Result<Self> {
        if !(nu > 0.0 && nu < 1.0) {
            return Err(Error::param("nu", format!("{nu} not in (0,1)")));
        }
        let t = amplification_list_size(nu, rho);
        let list_eta = nu / (2.0 * t as f64);
        let gamma_prime = list_eta / 4.0;
        let eta_glob = 0.5f64.powi(stability_bits(list_eta - gamma_prime) as i32);
        Ok(Self {
            nu,
            rho,
            list_size: t.next_power_of_two(),
            list_eta,
            gamma_prime,
            list_runs: list_runs(list_eta, gamma_prime),
            glob: ThresholdingParams::defaults(eta_glob, rho / 2.0, beta, tau_prime)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.list_size == 0 || !self.list_size.is_power_of_two() {
            return Err(Error::param(
                "list_size",
                format!("{} is not a power of two", self.list_size),
            ));
        }
        if self.list_runs == 0 {
            return Err(Error::param("list_runs", "must be at least 1"));
        }
        self.glob.validate()
    }
}

/// Reads a list of tapes for the inner algorithm from the shared tape, then
/// runs threshold selection on the derandomized uniform list member.
#[derive(Clone)]
pub struct Amplified {
    inner: AlgorithmRef,
    params: AmplifyParams,
    cap: usize,
    cache: Arc<ModeCache>,
}

impl Amplified {
    pub fn params(&self) -> &AmplifyParams {
        &self.params
    }
}

pub fn amplify_replicability(alg: AlgorithmRef, params: AmplifyParams, cap: usize) -> Result<Amplified> {
    params.validate()?;
    if bits_for(params.list_size as u64) > cap {
        return Err(Error::EnumerationTooLarge {
            requested: bits_for(params.list_size as u64),
            cap,
        });
    }
    Ok(Amplified {
        inner: alg,
        params,
        cap,
        cache: ModeCache::new(),
    })
}

impl Algorithm for Amplified {
    fn sample_size(&self) -> usize {
        self.params.glob.runs * self.params.list_runs * self.inner.sample_size()
    }

    fn bit_budget(&self) -> usize {
        self.params.list_size * self.inner.bit_budget() + self.params.glob.bits()
    }

    fn eval(&self, sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output> {
        let ell = self.inner.bit_budget();
        let tapes = (0..self.params.list_size)
            .map(|_| tape.split_off(ell))
            .collect::<Result<Vec<_>>>()?;
        let member: AlgorithmRef = Arc::new(ListMember::new(self.inner.clone(), tapes)?);
        let list = ListMode::with_cache(member, self.params.list_runs, self.cap, self.cache.clone())?;
        let det: AlgorithmRef = Arc::new(Derandomized::from_list(list));
        glob_to_rep(det, self.params.glob.clone())?.eval(sample, tape)
    }

    fn label(&self) -> String {
        format!("amplified[{}]", self.inner.label())
    }
}
