//! Agnostic PAC learning over finite hypothesis classes.
//!
//! Data points are labeled examples `(x, y)` encoded as `2x + y`; outputs are
//! hypothesis indices, so the tie-breaking order is the class order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algorithm::{Algorithm, AlgorithmRef};
use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};
use crate::sample::SampleRef;
use crate::seed::stream_rng;
use crate::tape::{bits_for, BitTape};
use crate::task::{Output, StatisticalTask, BOTTOM};
use crate::transforms::rep::{derandomize_with_runs, glob_to_rep, list_runs, GlobToRep, ThresholdingParams};

/// Largest supported `|X|` (hypotheses are `u64` masks).
pub const MAX_DOMAIN: usize = 63;
/// Largest `|X|` for which the brute-force shattering check runs.
pub const BRUTE_FORCE_VC_DOMAIN: usize = 16;

const TOL: f64 = 1e-12;

pub fn encode(x: u32, y: bool) -> u32 {
    2 * x + u32::from(y)
}

pub fn decode(point: u32) -> (u32, bool) {
    (point / 2, point % 2 == 1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HypothesisClass {
    domain: usize,
    hypotheses: Vec<u64>,
    vc_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassFile {
    domain: usize,
    hypotheses: Vec<Vec<u8>>,
}

impl HypothesisClass {
    /// Bit `x` of each mask is `h(x)`.
    pub fn new(domain: usize, hypotheses: Vec<u64>) -> Result<Self> {
        if domain == 0 || domain > MAX_DOMAIN {
            return Err(Error::param("domain", format!("{domain} not in 1..={MAX_DOMAIN}")));
        }
        if hypotheses.is_empty() {
            return Err(Error::param("hypotheses", "class is empty"));
        }
        let full = (1u64 << domain) - 1;
        let mut seen = BTreeSet::new();
        for &h in &hypotheses {
            if h & !full != 0 {
                return Err(Error::param("hypotheses", format!("mask {h:#x} exceeds the domain")));
            }
            if !seen.insert(h) {
                return Err(Error::param("hypotheses", format!("duplicate hypothesis {h:#x}")));
            }
        }
        let vc_dim = vc_dimension(domain, &hypotheses);
        Ok(Self {
            domain,
            hypotheses,
            vc_dim,
        })
    }

    pub fn from_rows(domain: usize, rows: &[Vec<bool>]) -> Result<Self> {
        let mut masks = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != domain {
                return Err(Error::param(
                    "hypotheses",
                    format!("row of length {} for domain {domain}", row.len()),
                ));
            }
            masks.push(row.iter().enumerate().fold(0u64, |m, (x, &b)| m | (u64::from(b) << x)));
        }
        Self::new(domain, masks)
    }

    /// `{"domain": n, "hypotheses": [[0,1,...], ...]}`, one 0/1 row per hypothesis.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ClassFile = serde_json::from_str(text).map_err(|e| Error::Config {
            path: String::new(),
            reason: e.to_string(),
        })?;
        let rows: Vec<Vec<bool>> = file
            .hypotheses
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(Error::param("hypotheses", format!("entry {other} is not 0 or 1"))),
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Self::from_rows(file.domain, &rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config { reason, .. } => Error::Config {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let file = ClassFile {
            domain: self.domain,
            hypotheses: self
                .hypotheses
                .iter()
                .map(|&h| (0..self.domain).map(|x| ((h >> x) & 1) as u8).collect())
                .collect(),
        };
        serde_json::to_string(&file).expect("class serializes")
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn hypotheses(&self) -> &[u64] {
        &self.hypotheses
    }

    pub fn mask(&self, h: usize) -> u64 {
        self.hypotheses[h]
    }

    pub fn vc_dim(&self) -> usize {
        self.vc_dim
    }

    pub fn predict(&self, h: usize, x: u32) -> bool {
        (self.hypotheses[h] >> x) & 1 == 1
    }

    /// Index of a hypothesis by mask.
    pub fn position(&self, mask: u64) -> Option<usize> {
        self.hypotheses.iter().position(|&h| h == mask)
    }
}

fn shattered(hypotheses: &[u64], set: u64) -> bool {
    let size = set.count_ones();
    if size >= 64 || (hypotheses.len() as u64) < 1u64 << size {
        return false;
    }
    let patterns: BTreeSet<u64> = hypotheses.iter().map(|&h| h & set).collect();
    patterns.len() as u64 == 1u64 << size
}

/// Largest shattered set size. Shattered sets are closed under subsets, so
/// the search grows them one element at a time.
pub fn vc_dimension(domain: usize, hypotheses: &[u64]) -> usize {
    let mut level: Vec<u64> = vec![0];
    let mut dim = 0;
    loop {
        let mut next = BTreeSet::new();
        for &set in &level {
            let start = 64 - set.leading_zeros() as usize;
            for x in start..domain {
                let grown = set | (1u64 << x);
                if shattered(hypotheses, grown) {
                    next.insert(grown);
                }
            }
        }
        if next.is_empty() {
            return dim;
        }
        dim += 1;
        level = next.into_iter().collect();
    }
}

/// VC dimension by checking every subset of `X`.
pub fn brute_force_vc(class: &HypothesisClass) -> Result<usize> {
    if class.domain > BRUTE_FORCE_VC_DOMAIN {
        return Err(Error::EnumerationTooLarge {
            requested: class.domain,
            cap: BRUTE_FORCE_VC_DOMAIN,
        });
    }
    Ok((0u64..1 << class.domain)
        .filter(|&s| shattered(&class.hypotheses, s))
        .map(|s| s.count_ones() as usize)
        .max()
        .unwrap_or(0))
}

/// `Σ_{i≤d} C(n, i)`.
pub fn sauer_bound(n: usize, vc: usize) -> u128 {
    let mut total = 0u128;
    let mut binom = 1u128;
    for i in 0..=vc.min(n) {
        if i > 0 {
            binom = binom * (n - i + 1) as u128 / i as u128;
        }
        total = total.saturating_add(binom);
    }
    total
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// `h_k(x) = [x ≥ k]` for `k = 0..=n`.
pub fn thresholds(domain: usize) -> Result<HypothesisClass> {
    let full = if domain >= 64 { u64::MAX } else { (1u64 << domain) - 1 };
    HypothesisClass::new(domain, (0..=domain).map(|k| full & !((1u64 << k) - 1)).collect())
}

/// Indicators of `[a, b)` for `0 ≤ a ≤ b ≤ n`, the empty interval once.
pub fn intervals(domain: usize) -> Result<HypothesisClass> {
    let mut masks = vec![0u64];
    for a in 0..domain {
        for b in a + 1..=domain {
            masks.push(((1u64 << (b - a)) - 1) << a);
        }
    }
    HypothesisClass::new(domain, masks)
}

/// Random class of VC dimension exactly `vc`: every pattern on a random
/// `vc`-set, plus `extra` random hypotheses with at most `vc` ones.
pub fn random_class(domain: usize, vc: usize, extra: usize, seed: u64) -> Result<HypothesisClass> {
    if vc > domain || vc > 16 {
        return Err(Error::param("vc", format!("{vc} exceeds the domain {domain} or 16")));
    }
    let mut rng = stream_rng(seed, &[0x5ac]);
    let core: Vec<usize> = sample_indices(&mut rng, domain, vc).into_vec();
    let mut masks: BTreeSet<u64> = (0u64..1 << vc)
        .map(|p| {
            core.iter()
                .enumerate()
                .filter(|&(i, _)| (p >> i) & 1 == 1)
                .fold(0, |m, (_, &x)| m | 1u64 << x)
        })
        .collect();
    for _ in 0..extra {
        let ones = rng.random_range(0..=vc);
        let mask = sample_indices(&mut rng, domain, ones)
            .into_iter()
            .fold(0u64, |m, x| m | 1u64 << x);
        masks.insert(mask);
    }
    let class = HypothesisClass::new(domain, masks.into_iter().collect())?;
    debug_assert_eq!(class.vc_dim, vc);
    Ok(class)
}

// ---------------------------------------------------------------------------
// Errors, tasks and labeled distributions
// ---------------------------------------------------------------------------

/// `err_D(h)` against a distribution over encoded examples.
pub fn err_dist(class: &HypothesisClass, h: usize, dist: &FiniteDistribution) -> f64 {
    dist.iter()
        .filter(|&(p, _)| {
            let (x, y) = decode(p);
            class.predict(h, x) != y
        })
        .map(|(_, w)| w)
        .sum()
}

/// `err_S(h)`, the empirical error on encoded examples.
pub fn err_sample(class: &HypothesisClass, h: usize, points: &[u32]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let wrong = points
        .iter()
        .filter(|&&p| {
            let (x, y) = decode(p);
            class.predict(h, x) != y
        })
        .count();
    wrong as f64 / points.len() as f64
}

/// `(h, OPT_D)` with the smallest index among the optimal hypotheses.
pub fn optimal(class: &HypothesisClass, dist: &FiniteDistribution) -> (usize, f64) {
    let errs: Vec<f64> = (0..class.len()).map(|h| err_dist(class, h, dist)).collect();
    let best = errs.iter().copied().fold(f64::INFINITY, f64::min);
    let h = errs.iter().position(|&e| e <= best + TOL).expect("class is nonempty");
    (h, best)
}

/// Examples with `x` drawn from `marginal` and label `h_target(x)` flipped
/// with probability `noise`.
pub fn noisy_labels(
    class: &HypothesisClass,
    target: usize,
    marginal: &FiniteDistribution,
    noise: f64,
) -> Result<FiniteDistribution> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::param("noise", format!("{noise} not in [0,1]")));
    }
    if target >= class.len() {
        return Err(Error::param("target", format!("{target} ≥ |H| = {}", class.len())));
    }
    let mut pairs = Vec::new();
    for (x, p) in marginal.iter() {
        if x as usize >= class.domain {
            return Err(Error::param("marginal", format!("point {x} outside the domain")));
        }
        let y = class.predict(target, x);
        pairs.push((encode(x, y), p * (1.0 - noise)));
        pairs.push((encode(x, !y), p * noise));
    }
    FiniteDistribution::from_weights(pairs)
}

/// Accepts `h` iff `err_D(h) ≤ OPT_D + α`.
pub fn pac_task(class: Arc<HypothesisClass>, alpha: f64) -> StatisticalTask {
    let name = format!("pac[|X|={}, |H|={}, alpha={alpha}]", class.domain, class.len());
    let (data, outputs) = (2 * class.domain as u32, class.len() as u32);
    StatisticalTask::new(name, data, outputs, move |d, y| {
        let (_, opt) = optimal(&class, d);
        err_dist(&class, y as usize, d) <= opt + alpha + TOL
    })
}

/// Distinct restrictions of the class to the points `xs`, as masks on the
/// set of distinct points. Panics if the Sauer bound is exceeded.
pub fn all_labelings(class: &HypothesisClass, xs: &[u32], cap: usize) -> Result<Vec<u64>> {
    let work = xs.len().saturating_mul(class.len());
    if work > cap {
        return Err(Error::EnumerationTooLarge { requested: work, cap });
    }
    let mut support = 0u64;
    for &x in xs {
        if x as usize >= class.domain {
            return Err(Error::param("xs", format!("point {x} outside the domain")));
        }
        support |= 1u64 << x;
    }
    Ok(labelings_on(class, support))
}

fn labelings_on(class: &HypothesisClass, support: u64) -> Vec<u64> {
    let set: BTreeSet<u64> = class.hypotheses.iter().map(|&h| h & support).collect();
    let bound = sauer_bound(support.count_ones() as usize, class.vc_dim);
    assert!(
        set.len() as u128 <= bound,
        "Sauer bound violated: {} labelings > {bound}",
        set.len()
    );
    set.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Realizable list learners
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledSample {
    pub points: Vec<(u32, bool)>,
}

impl LabeledSample {
    /// Per-point label counts `[#y=0, #y=1]`.
    pub fn counts(&self, domain: usize) -> Vec<[u32; 2]> {
        let mut c = vec![[0u32; 2]; domain];
        for &(x, y) in &self.points {
            c[x as usize][usize::from(y)] += 1;
        }
        c
    }
}

/// A learner for the realizable case returning a list of hypotheses. Learners
/// here only see label counts per point, so they are exchangeable.
pub trait RealizableListLearner: Send + Sync {
    fn sample_size(&self) -> usize;

    /// Declared weight of the list's heavy hitter.
    fn heavy_hitter_weight(&self) -> f64;

    /// Largest list the learner may return.
    fn list_bound(&self) -> usize;

    fn learn_counts(&self, counts: &[[u32; 2]]) -> Vec<usize>;

    fn learn(&self, sample: &LabeledSample, domain: usize) -> Vec<usize> {
        self.learn_counts(&sample.counts(domain))
    }
}

/// Returns every hypothesis with empirical error at most `α/2`.
#[derive(Debug, Clone)]
pub struct ConsistentListLearner {
    class: Arc<HypothesisClass>,
    alpha: f64,
    sample_size: usize,
}

/// `⌈(ln|H| + ln(1/β)) / (α/8)⌉`.
pub fn learner_sample_size(class_size: usize, alpha: f64, beta: f64) -> usize {
    (((class_size as f64).ln() + (1.0 / beta).ln()) / (alpha / 8.0))
        .ceil()
        .max(1.0) as usize
}

pub fn default_realizable_list_learner(
    class: Arc<HypothesisClass>,
    alpha: f64,
    beta: f64,
) -> Result<ConsistentListLearner> {
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", format!("{alpha} must be positive")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param("beta", format!("{beta} not in (0,1)")));
    }
    let sample_size = learner_sample_size(class.len(), alpha.min(1.0), beta);
    Ok(ConsistentListLearner {
        class,
        alpha,
        sample_size,
    })
}

impl ConsistentListLearner {
    pub fn with_sample_size(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("sample_size", "must be at least 1"));
        }
        self.sample_size = n;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl RealizableListLearner for ConsistentListLearner {
    fn sample_size(&self) -> usize {
        self.sample_size
    }

    fn heavy_hitter_weight(&self) -> f64 {
        1.0
    }

    fn list_bound(&self) -> usize {
        self.class.len()
    }

    fn learn_counts(&self, counts: &[[u32; 2]]) -> Vec<usize> {
        if self.alpha >= 1.0 {
            return (0..self.class.len()).collect();
        }
        let n: u32 = counts.iter().map(|c| c[0] + c[1]).sum();
        let allowed = self.alpha / 2.0 * n as f64 + TOL;
        (0..self.class.len())
            .filter(|&h| {
                let mask = self.class.hypotheses[h];
                let wrong: u32 = counts
                    .iter()
                    .enumerate()
                    .map(|(x, c)| c[usize::from((mask >> x) & 1 == 0)])
                    .sum();
                wrong as f64 <= allowed
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Agnostic-to-realizable reduction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgnosticParams {
    pub alpha: f64,
    pub beta: f64,
    /// Heavy-hitter weight of the list learner.
    pub nu: f64,
    /// Number of unlabeled samples `T`.
    pub runs: usize,
    /// Size `|S_L|` of the labeled pruning sample.
    pub labeled: usize,
    /// Count threshold as a fraction of the expected hits `νT`.
    pub prune_fraction: f64,
}

/// `⌈(8/ν)·ln(4/β)⌉`.
pub fn agnostic_runs(nu: f64, beta: f64) -> usize {
    ((8.0 / nu) * (4.0 / beta).ln()).ceil().max(1.0) as usize
}

/// `⌈2(ln|C| + ln(2/β))/α²⌉`.
pub fn labeled_sample_size(candidates: f64, alpha: f64, beta: f64) -> usize {
    (2.0 * (candidates.max(1.0).ln() + (2.0 / beta).ln()) / (alpha * alpha)).ceil() as usize
}

impl AgnosticParams {
    pub fn defaults(
        class: &HypothesisClass,
        learner: &dyn RealizableListLearner,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        let nu = learner.heavy_hitter_weight();
        let runs = agnostic_runs(nu, beta);
        let labelings = sauer_bound(learner.sample_size(), class.vc_dim).min(class.len() as u128) as f64;
        let multiset = runs as f64 * labelings * learner.list_bound() as f64;
        let p = Self {
            alpha,
            beta,
            nu,
            runs,
            labeled: labeled_sample_size(multiset, alpha, beta),
            prune_fraction: 0.5,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param("alpha", format!("{} not in (0,1]", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::param("beta", format!("{} not in (0,1)", self.beta)));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::param("nu", format!("{} not in (0,1]", self.nu)));
        }
        if self.runs == 0 || self.labeled == 0 {
            return Err(Error::param(
                "runs",
                "run count and labeled sample size must be positive",
            ));
        }
        if !(self.prune_fraction > 0.0 && self.prune_fraction <= 1.0) {
            return Err(Error::param(
                "prune_fraction",
                format!("{} not in (0,1]", self.prune_fraction),
            ));
        }
        Ok(())
    }

    /// Minimum multiplicity `c′·ν·T` for a candidate to survive pruning.
    pub fn count_threshold(&self) -> f64 {
        self.prune_fraction * self.nu * self.runs as f64
    }
}

/// Intermediate state of one run of the reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct Pruning {
    /// Multiplicities `w(h)` in `C(S_U)`.
    pub weights: BTreeMap<usize, u64>,
    /// Empirical errors on `S_L`, indexed by hypothesis.
    pub labeled_errors: Vec<f64>,
    pub min_error: f64,
    /// Survivors in class order.
    pub pruned: Vec<usize>,
    /// Most labelings seen on one unlabeled sample.
    pub max_labelings: usize,
}

#[derive(Clone)]
pub struct AgnosticReduce {
    class: Arc<HypothesisClass>,
    learner: Arc<dyn RealizableListLearner>,
    params: AgnosticParams,
    index_bits: usize,
}

pub fn agnostic_reduce(
    class: Arc<HypothesisClass>,
    learner: Arc<dyn RealizableListLearner>,
    params: AgnosticParams,
) -> Result<AgnosticReduce> {
    params.validate()?;
    let mut r = AgnosticReduce {
        class,
        learner,
        params,
        index_bits: 0,
    };
    r.index_bits = bits_for(r.pruned_bound() as u64);
    Ok(r)
}

impl AgnosticReduce {
    pub fn params(&self) -> &AgnosticParams {
        &self.params
    }

    pub fn class(&self) -> &Arc<HypothesisClass> {
        &self.class
    }

    /// Upper bound on `|Pruned|`: at most `T·Sauer(n)·list` entries in
    /// `C(S_U)`, each survivor holding at least `c′νT` of them.
    pub fn pruned_bound(&self) -> usize {
        let sauer = sauer_bound(self.learner.sample_size(), self.class.vc_dim);
        let entries = sauer.min(self.class.len() as u128) as f64 * self.learner.list_bound() as f64;
        let bound = (entries / (self.params.prune_fraction * self.params.nu)).floor();
        (bound as usize).clamp(1, self.class.len())
    }

    fn labeled_offset(&self) -> usize {
        self.params.runs * self.learner.sample_size()
    }

    /// Builds `C(S_U)`, the errors on `S_L` and the pruned set.
    pub fn prune(&self, sample: SampleRef<'_>) -> Result<Pruning> {
        sample.check_len(self.sample_size())?;
        let domain = self.class.domain;
        let n = self.learner.sample_size();
        let mut weights: BTreeMap<usize, u64> = BTreeMap::new();
        let mut max_labelings = 0;
        for block in sample.slice(0, self.labeled_offset()).blocks_exact(n, self.params.runs) {
            let mut seen = vec![0u32; domain];
            let mut support = 0u64;
            for &p in block.points {
                let (x, _) = decode(p);
                if x as usize >= domain {
                    return Err(Error::param("sample", format!("point {x} outside the domain")));
                }
                seen[x as usize] += 1;
                support |= 1u64 << x;
            }
            let labelings = labelings_on(&self.class, support);
            max_labelings = max_labelings.max(labelings.len());
            for g in labelings {
                let counts: Vec<[u32; 2]> = seen
                    .iter()
                    .enumerate()
                    .map(|(x, &c)| if (g >> x) & 1 == 1 { [0, c] } else { [c, 0] })
                    .collect();
                for h in self.learner.learn_counts(&counts) {
                    *weights.entry(h).or_default() += 1;
                }
            }
        }
        let labeled = sample.slice(self.labeled_offset(), sample.len());
        let labeled_errors: Vec<f64> = (0..self.class.len())
            .map(|h| err_sample(&self.class, h, labeled.points))
            .collect();
        let min_error = weights.keys().map(|&h| labeled_errors[h]).fold(f64::INFINITY, f64::min);
        let cut = min_error + 0.75 * self.params.alpha + TOL;
        let need = self.params.count_threshold() - TOL;
        let pruned: Vec<usize> = weights
            .iter()
            .filter(|&(&h, &w)| labeled_errors[h] <= cut && w as f64 >= need)
            .map(|(&h, _)| h)
            .collect();
        Ok(Pruning {
            weights,
            labeled_errors,
            min_error,
            pruned,
            max_labelings,
        })
    }

    fn pick(&self, pruned: &[usize], v: u64) -> Output {
        pruned[((v as u128 * pruned.len() as u128) >> self.index_bits) as usize] as Output
    }
}

impl Algorithm for AgnosticReduce {
    fn sample_size(&self) -> usize {
        self.labeled_offset() + self.params.labeled
    }

    fn bit_budget(&self) -> usize {
        self.index_bits
    }

    fn eval(&self, sample: SampleRef<'_>, tape: &mut BitTape) -> Result<Output> {
        let p = self.prune(sample)?;
        if p.pruned.is_empty() {
            return Ok(BOTTOM);
        }
        let v = tape.read_bits(self.index_bits)?;
        Ok(self.pick(&p.pruned, v))
    }

    fn exact_law(&self, sample: SampleRef<'_>, _cap: usize) -> Result<FiniteDistribution> {
        let p = self.prune(sample)?;
        if p.pruned.is_empty() {
            return Ok(FiniteDistribution::point(BOTTOM));
        }
        let mut counts: BTreeMap<Output, u64> = BTreeMap::new();
        for v in 0..1u64 << self.index_bits {
            *counts.entry(self.pick(&p.pruned, v)).or_default() += 1;
        }
        FiniteDistribution::from_counts(&counts)
    }

    fn label(&self) -> String {
        format!(
            "agnostic-reduce[T={}, n={}, L={}]",
            self.params.runs,
            self.learner.sample_size(),
            self.params.labeled
        )
    }
}

// ---------------------------------------------------------------------------
// Replicable agnostic learner
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicableLearnerParams {
    pub reduce: AgnosticParams,
    pub list_runs: usize,
    pub glob: ThresholdingParams,
}

/// Largest power of two not above `x` (for `x` in `(0, 1]`).
fn floor_pow2(x: f64) -> f64 {
    2f64.powi(x.log2().floor() as i32)
}

/// Heavy-hitter weight `ν/(2|Pruned|)` guaranteed by the reduction (1 when
/// the pruned set is a singleton).
pub fn reduction_heavy_hitter(nu: f64, pruned_bound: usize) -> f64 {
    if pruned_bound <= 1 {
        nu
    } else {
        nu / (2.0 * pruned_bound as f64)
    }
}

/// `⌈log2(2|Pruned|/ν)⌉ + ⌈log2(1/ρ)⌉ + 1`.
pub fn replicable_bit_bound(pruned_bound: usize, nu: f64, rho: f64) -> usize {
    let a = (2.0 * pruned_bound as f64 / nu).log2().ceil().max(0.0);
    let b = (1.0 / rho).log2().ceil().max(0.0);
    (a + b) as usize + 1
}

impl ReplicableLearnerParams {
    /// Stability taken from the reduction's guaranteed heavy hitter, list
    /// stage at `γ′ = η/4`, thresholds at the default constants.
    pub fn defaults(reduce: &AgnosticReduce, rho: f64) -> Result<Self> {
        let p = reduce.params();
        let eta = reduction_heavy_hitter(p.nu, reduce.pruned_bound());
        let gamma_prime = eta / 4.0;
        let eta_glob = if reduce.pruned_bound() == 1 {
            1.0
        } else {
            floor_pow2(eta - gamma_prime)
        };
        let glob = ThresholdingParams::defaults(eta_glob, rho, p.beta, rho / 4.0)?;
        Ok(Self {
            reduce: p.clone(),
            list_runs: list_runs(eta, gamma_prime),
            glob,
        })
    }
}

/// Reduction, then derandomization, then random thresholding.
pub fn agnostic_replicable_learner(
    class: Arc<HypothesisClass>,
    learner: Arc<dyn RealizableListLearner>,
    params: &ReplicableLearnerParams,
    cap: usize,
) -> Result<GlobToRep> {
    let reduce: AlgorithmRef = Arc::new(agnostic_reduce(class, learner, params.reduce.clone())?);
    let det = derandomize_with_runs(reduce, params.list_runs, cap)?;
    glob_to_rep(Arc::new(det), params.glob.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{sample, Sample};
    use crate::verify::{estimate_confidence, estimate_replicability};

    fn uniform_noisy(domain: usize, target: usize, noise: f64) -> (Arc<HypothesisClass>, FiniteDistribution) {
        let class = Arc::new(thresholds(domain).unwrap());
        let marginal = FiniteDistribution::uniform(domain as u32).unwrap();
        let d = noisy_labels(&class, target, &marginal, noise).unwrap();
        (class, d)
    }

    #[test]
    fn error_of_target_and_complement() {
        let class = HypothesisClass::new(4, vec![0b0011, 0b1100]).unwrap();
        let d = noisy_labels(&class, 0, &FiniteDistribution::uniform(4).unwrap(), 0.0).unwrap();
        assert_eq!(err_dist(&class, 0, &d), 0.0);
        assert_eq!(err_dist(&class, 1, &d), 1.0);
    }

    #[test]
    fn threshold_noise_error_closed_form() {
        let (class, d) = uniform_noisy(16, 8, 0.1);
        assert!((err_dist(&class, 8, &d) - 0.1).abs() < 1e-12);
        for k in 0..=16usize {
            let expected = 0.1 + 0.8 * k.abs_diff(8) as f64 / 16.0;
            assert!((err_dist(&class, k, &d) - expected).abs() < 1e-12);
        }
        assert_eq!(optimal(&class, &d), (8, err_dist(&class, 8, &d)));
    }

    #[test]
    fn vc_of_generated_classes() {
        assert_eq!(thresholds(16).unwrap().vc_dim(), 1);
        assert_eq!(intervals(10).unwrap().vc_dim(), 2);
        for (vc, seed) in [(0, 1), (1, 2), (3, 3), (4, 4)] {
            let c = random_class(12, vc, 20, seed).unwrap();
            assert_eq!(c.vc_dim(), vc);
            assert_eq!(brute_force_vc(&c).unwrap(), vc);
        }
        for c in [thresholds(9).unwrap(), intervals(8).unwrap()] {
            assert_eq!(brute_force_vc(&c).unwrap(), c.vc_dim());
        }
    }

    #[test]
    fn class_rejects_duplicates_and_round_trips_json() {
        assert!(HypothesisClass::new(3, vec![1, 1]).is_err());
        assert!(HypothesisClass::new(3, vec![8]).is_err());
        let c = intervals(5).unwrap();
        assert_eq!(HypothesisClass::from_json(&c.to_json()).unwrap(), c);
        assert!(HypothesisClass::from_json(r#"{"domain":2,"hypotheses":[[0,1]],"extra":1}"#).is_err());
        assert!(HypothesisClass::from_json(r#"{"domain":2,"hypotheses":[[0,2]]}"#).is_err());
    }

    #[test]
    fn labelings_counts() {
        let single = HypothesisClass::new(8, vec![0b1010]).unwrap();
        assert_eq!(all_labelings(&single, &[0, 1, 2, 3], 1000).unwrap().len(), 1);
        let th = thresholds(16).unwrap();
        for n in [1usize, 3, 7, 16] {
            let xs: Vec<u32> = (0..n as u32).map(|i| i * 16 / n as u32).collect();
            assert_eq!(all_labelings(&th, &xs, 1000).unwrap().len(), n + 1);
            assert_eq!(sauer_bound(n, 1), n as u128 + 1);
        }
        assert!(matches!(
            all_labelings(&th, &[0; 100], 50),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn sauer_values() {
        assert_eq!(sauer_bound(5, 0), 1);
        assert_eq!(sauer_bound(5, 2), 1 + 5 + 10);
        assert_eq!(sauer_bound(3, 5), 8);
    }

    #[test]
    fn learner_edge_cases() {
        let class = Arc::new(intervals(6).unwrap());
        let wide = default_realizable_list_learner(class.clone(), 1.0, 0.1).unwrap();
        let counts = vec![[3, 1]; 6];
        assert_eq!(wide.learn_counts(&counts), (0..class.len()).collect::<Vec<_>>());
        let single = Arc::new(HypothesisClass::new(6, vec![0b111]).unwrap());
        let l = default_realizable_list_learner(single, 0.1, 0.1).unwrap();
        let realizable: Vec<[u32; 2]> = (0..6).map(|x| if x < 3 { [0, 2] } else { [2, 0] }).collect();
        assert_eq!(l.learn_counts(&realizable), vec![0]);
        assert_eq!(
            learner_sample_size(17, 0.1, 0.1),
            ((17f64.ln() + 10f64.ln()) / 0.0125).ceil() as usize
        );
    }

    #[test]
    fn realizable_learner_keeps_target() {
        let (class, d) = uniform_noisy(16, 5, 0.0);
        let l = default_realizable_list_learner(class.clone(), 0.1, 0.05).unwrap();
        let mut hits = 0;
        for t in 0..200 {
            let s = sample(&d, l.sample_size(), 77, t);
            let ls = LabeledSample {
                points: s.points.iter().map(|&p| decode(p)).collect(),
            };
            let list = l.learn(&ls, 16);
            hits += u32::from(list.contains(&5));
            assert!(list.iter().all(|&h| err_dist(&class, h, &d) <= 0.1));
        }
        assert!(hits as f64 / 200.0 >= 0.95);
    }

    fn small_reduce(alpha: f64, beta: f64) -> (AgnosticReduce, Arc<HypothesisClass>, FiniteDistribution) {
        let (class, d) = uniform_noisy(16, 8, 0.1);
        let learner = default_realizable_list_learner(class.clone(), alpha / 8.0, 1.0 / 8.0)
            .unwrap()
            .with_sample_size(32)
            .unwrap();
        let mut p = AgnosticParams::defaults(&class, &learner, alpha, beta).unwrap();
        p.runs = 4;
        (agnostic_reduce(class.clone(), Arc::new(learner), p).unwrap(), class, d)
    }

    #[test]
    fn default_parameters() {
        let (class, _) = uniform_noisy(16, 8, 0.1);
        let learner = default_realizable_list_learner(class.clone(), 0.15 / 8.0, 1.0 / 8.0).unwrap();
        assert_eq!(learner.sample_size(), 2097);
        let p = AgnosticParams::defaults(&class, &learner, 0.15, 0.05).unwrap();
        assert_eq!(p.runs, 36);
        assert_eq!(p.count_threshold(), 18.0);
        let r = agnostic_reduce(class, Arc::new(learner), p).unwrap();
        assert_eq!(r.pruned_bound(), 17);
        assert_eq!(r.bit_budget(), 5);
        assert_eq!(replicable_bit_bound(17, 1.0, 0.4), 9);
    }

    #[test]
    fn pruning_is_sound_under_uniform_convergence() {
        let (r, class, d) = small_reduce(0.15, 0.05);
        let (_, opt) = optimal(&class, &d);
        for t in 0..300 {
            let s = sample(&d, r.sample_size(), 5, t);
            let p = r.prune(s.view()).unwrap();
            assert!(p.pruned.len() <= r.pruned_bound());
            let converged = p
                .weights
                .keys()
                .all(|&h| (err_dist(&class, h, &d) - p.labeled_errors[h]).abs() <= 0.15 / 8.0);
            if converged {
                assert!(p.pruned.iter().all(|&h| err_dist(&class, h, &d) <= opt + 0.15 + 1e-12));
            }
            let mut tape = crate::tape::fresh_tape(5, t, r.bit_budget());
            let y = r.eval(s.view(), &mut tape).unwrap();
            assert!(p.weights.contains_key(&(y as usize)));
        }
    }

    #[test]
    fn exact_law_matches_tape_enumeration() {
        let (r, _, d) = small_reduce(0.15, 0.05);
        let s = sample(&d, r.sample_size(), 9, 0);
        let fast = r.exact_law(s.view(), 24).unwrap();
        let slow = crate::algorithm::exact_law_over_tapes(&r, s.view(), 24).unwrap();
        assert_eq!(fast.to_pairs(), slow.to_pairs());
    }

    #[test]
    fn realizable_reduction_is_accurate() {
        let (r, class, _) = small_reduce(0.15, 0.05);
        let d = noisy_labels(&class, 8, &FiniteDistribution::uniform(16).unwrap(), 0.0).unwrap();
        let task = pac_task(class, 0.15);
        let rep = estimate_confidence(&r, &task, &d, 500, 3).unwrap();
        assert!(rep.failure_rate <= 0.05, "{rep:?}");
    }

    #[test]
    fn singleton_class_needs_no_bits() {
        let class = Arc::new(HypothesisClass::new(4, vec![0b0110]).unwrap());
        let d = noisy_labels(&class, 0, &FiniteDistribution::uniform(4).unwrap(), 0.2).unwrap();
        let learner = default_realizable_list_learner(class.clone(), 0.1 / 8.0, 1.0 / 8.0)
            .unwrap()
            .with_sample_size(4)
            .unwrap();
        let mut p = AgnosticParams::defaults(&class, &learner, 0.1, 0.05).unwrap();
        p.runs = 2;
        p.labeled = 8;
        let r = agnostic_reduce(class.clone(), Arc::new(learner.clone()), p).unwrap();
        assert_eq!(r.bit_budget(), 0);
        let mut params = ReplicableLearnerParams::defaults(&r, 0.4).unwrap();
        params.glob = params.glob.with_runs(4).unwrap();
        let alg = agnostic_replicable_learner(class, Arc::new(learner), &params, 24).unwrap();
        assert_eq!(alg.bit_budget(), 0);
        let rep = estimate_replicability(&alg, &d, 50, true, 1).unwrap();
        assert_eq!(rep.estimate, 1.0);
        assert_eq!(rep.bits_used, 0);
    }

    struct EmptyLearner;

    impl RealizableListLearner for EmptyLearner {
        fn sample_size(&self) -> usize {
            2
        }
        fn heavy_hitter_weight(&self) -> f64 {
            1.0
        }
        fn list_bound(&self) -> usize {
            1
        }
        fn learn_counts(&self, _counts: &[[u32; 2]]) -> Vec<usize> {
            Vec::new()
        }
    }

    #[test]
    fn bottom_on_empty_pruned_set() {
        let class = Arc::new(thresholds(4).unwrap());
        let p = AgnosticParams {
            alpha: 0.5,
            beta: 0.1,
            nu: 1.0,
            runs: 1,
            labeled: 1,
            prune_fraction: 0.5,
        };
        let r = agnostic_reduce(class, Arc::new(EmptyLearner), p).unwrap();
        let s = Sample::dataset(vec![encode(0, false), encode(2, true), encode(1, true)]);
        assert!(r.prune(s.view()).unwrap().pruned.is_empty());
        assert_eq!(r.eval(s.view(), &mut BitTape::empty()).unwrap(), BOTTOM);
        assert_eq!(r.exact_law(s.view(), 24).unwrap().to_pairs(), vec![(BOTTOM, 1.0)]);
    }
}
