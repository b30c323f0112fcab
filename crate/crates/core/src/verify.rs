//! Measurement harness: Monte-Carlo replicability, stability, heavy hitters
//! and confidence with Hoeffding intervals at confidence 0.999, plus exact
//! (ε, δ)-DP auditing over enumerated neighbor pairs.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::algorithm::Algorithm;
use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};
use crate::sample::{Sample, Sampler};
use crate::seed::{stream_rng, TAG_SAMPLE, TAG_SECOND};
use crate::tape::{fresh_tape, BitTape};
use crate::task::{Output, StatisticalTask};

/// Failure probability of every reported interval.
pub const CI_FAILURE: f64 = 0.001;

/// Hoeffding half-width `sqrt(ln(2/0.001) / (2·trials))`.
pub fn hoeffding_halfwidth(trials: u64) -> f64 {
    ((2.0 / CI_FAILURE).ln() / (2.0 * trials as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicabilityReport {
    pub estimate: f64,
    pub trials: u64,
    pub ci_halfwidth: f64,
    pub shared_tape: bool,
    /// Largest number of tape bits any single run consumed.
    pub bits_used: usize,
    pub samples_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceReport {
    pub failure_rate: f64,
    pub trials: u64,
    pub ci_halfwidth: f64,
    pub bits_used: usize,
}

struct Run {
    output: Output,
    bits: usize,
}

fn run_once(alg: &dyn Algorithm, sample: &Sample, mut tape: BitTape) -> Result<Run> {
    let output = alg.eval(sample.view(), &mut tape)?;
    Ok(Run {
        output,
        bits: tape.cursor(),
    })
}

fn trial_sample(sampler: &Sampler, n: usize, seed: u64, trial: u64, which: u64) -> Sample {
    let mut rng = stream_rng(seed, &[TAG_SAMPLE, trial, which]);
    sampler.sample(n, &mut rng)
}

/// Outputs of `trials` independent runs (fresh sample, fresh tape each).
pub fn sample_outputs(
    alg: &dyn Algorithm,
    dist: &FiniteDistribution,
    trials: u64,
    seed: u64,
) -> Result<(Vec<Output>, usize)> {
    let sampler = Sampler::new(dist);
    let n = alg.sample_size();
    let budget = alg.bit_budget();
    let runs: Vec<Run> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_sample(&sampler, n, seed, t, 0);
            run_once(alg, &s, fresh_tape(seed, 2 * t, budget))
        })
        .collect::<Result<_>>()?;
    let bits = runs.iter().map(|r| r.bits).max().unwrap_or(0);
    Ok((runs.into_iter().map(|r| r.output).collect(), bits))
}

/// Empirical output law over fresh samples and tapes.
pub fn estimate_law(
    alg: &dyn Algorithm,
    dist: &FiniteDistribution,
    trials: u64,
    seed: u64,
) -> Result<FiniteDistribution> {
    let (outs, _) = sample_outputs(alg, dist, trials, seed)?;
    let mut counts: BTreeMap<Output, u64> = BTreeMap::new();
    for y in outs {
        *counts.entry(y).or_default() += 1;
    }
    FiniteDistribution::from_counts(&counts)
}

/// Fraction of trials in which two runs on independent samples agree. With
/// `shared` the two runs read the same tape; otherwise independent tapes.
pub fn estimate_replicability(
    alg: &dyn Algorithm,
    dist: &FiniteDistribution,
    trials: u64,
    shared: bool,
    seed: u64,
) -> Result<ReplicabilityReport> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let sampler = Sampler::new(dist);
    let n = alg.sample_size();
    let budget = alg.bit_budget();
    let (agree, bits) = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(u64, usize)> {
            let tape = fresh_tape(seed, 2 * t, budget);
            let other = if shared {
                tape.replay()
            } else {
                fresh_tape(seed, 2 * t + 1, budget)
            };
            let a = run_once(alg, &trial_sample(&sampler, n, seed, t, 0), tape)?;
            let b = run_once(alg, &trial_sample(&sampler, n, seed, t, TAG_SECOND), other)?;
            Ok((u64::from(a.output == b.output), a.bits.max(b.bits)))
        })
        .try_reduce(|| (0, 0), |x, y| Ok((x.0 + y.0, x.1.max(y.1))))?;
    Ok(ReplicabilityReport {
        estimate: agree as f64 / trials as f64,
        trials,
        ci_halfwidth: hoeffding_halfwidth(trials),
        shared_tape: shared,
        bits_used: bits,
        samples_used: 2 * trials * n as u64,
    })
}

/// Two-run collision probability with independent tapes; for a deterministic
/// algorithm this is its global stability.
pub fn estimate_global_stability(
    alg: &dyn Algorithm,
    dist: &FiniteDistribution,
    trials: u64,
    seed: u64,
) -> Result<ReplicabilityReport> {
    estimate_replicability(alg, dist, trials, false, seed)
}

/// Minimum trial count for heavy-hitter weights to be `η/4`-accurate with
/// probability 0.999.
pub fn heavy_hitter_trials(threshold: f64) -> u64 {
    (8.0 * (2.0 / CI_FAILURE).ln() / (threshold * threshold)).ceil() as u64
}

/// Outputs with empirical weight at least `3η/4`, heaviest first (ties by id).
pub fn find_heavy_hitters(
    alg: &dyn Algorithm,
    dist: &FiniteDistribution,
    threshold: f64,
    trials: u64,
    seed: u64,
) -> Result<Vec<(Output, f64)>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::param("threshold", format!("{threshold} not in (0,1]")));
    }
    let needed = heavy_hitter_trials(threshold);
    if trials < needed {
        return Err(Error::param("trials", format!("{trials} below the required {needed}")));
    }
    let law = estimate_law(alg, dist, trials, seed)?;
    let cut = threshold - threshold / 4.0;
    let mut hitters: Vec<(Output, f64)> = law.iter().filter(|&(_, w)| w >= cut).collect();
    hitters.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    assert!(
        hitters.len() as f64 <= (1.0 / cut).ceil(),
        "more heavy hitters than 1/threshold"
    );
    Ok(hitters)
}

/// Fraction of runs whose output is not accepted on `dist`.
pub fn estimate_confidence(
    alg: &dyn Algorithm,
    task: &StatisticalTask,
    dist: &FiniteDistribution,
    trials: u64,
    seed: u64,
) -> Result<ConfidenceReport> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let (outs, bits) = sample_outputs(alg, dist, trials, seed)?;
    let failures = outs.iter().filter(|&&y| !task.is_correct(dist, y)).count();
    Ok(ConfidenceReport {
        failure_rate: failures as f64 / trials as f64,
        trials,
        ci_halfwidth: hoeffding_halfwidth(trials),
        bits_used: bits,
    })
}

// ---------------------------------------------------------------------------
// Exact privacy auditing
// ---------------------------------------------------------------------------

pub type NeighborPair = (Sample, Sample);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyAudit {
    pub epsilon: f64,
    pub delta_max: f64,
    /// Ordered pair `(S, S′)` attaining `delta_max` as δ(A(S) ‖ A(S′)).
    pub witness: Option<(Vec<u32>, Vec<u32>)>,
    pub user_level: bool,
    pub pairs_audited: usize,
}

/// Hockey-stick divergence δ(P‖Q) at privacy level ε.
pub fn hockey_stick(p: &FiniteDistribution, q: &FiniteDistribution, epsilon: f64) -> f64 {
    p.hockey_stick(q, epsilon)
}

/// Exact output laws of `alg` on every distinct dataset in `pairs`.
pub fn exact_laws(
    alg: &dyn Algorithm,
    pairs: &[NeighborPair],
    cap: usize,
) -> Result<HashMap<Sample, FiniteDistribution>> {
    let mut datasets: Vec<&Sample> = pairs.iter().flat_map(|(a, b)| [a, b]).collect();
    datasets.sort_by(|a, b| a.points.cmp(&b.points));
    datasets.dedup();
    datasets
        .into_par_iter()
        .map(|s| Ok((s.clone(), alg.exact_law(s.view(), cap)?)))
        .collect()
}

/// Worst hockey-stick divergence over all pairs, both orientations.
pub fn audit_dp_exact(
    alg: &dyn Algorithm,
    pairs: &[NeighborPair],
    epsilon: f64,
    user_level: bool,
    cap: usize,
) -> Result<PrivacyAudit> {
    if pairs.is_empty() {
        return Err(Error::param("neighbor_pairs", "empty"));
    }
    let laws = exact_laws(alg, pairs, cap)?;
    Ok(audit_with_laws(&laws, pairs, epsilon, user_level))
}

/// Audit reusing precomputed laws (e.g. for an ε sweep).
pub fn audit_with_laws(
    laws: &HashMap<Sample, FiniteDistribution>,
    pairs: &[NeighborPair],
    epsilon: f64,
    user_level: bool,
) -> PrivacyAudit {
    let mut delta_max = 0.0;
    let mut witness = None;
    for (a, b) in pairs {
        for (s, t) in [(a, b), (b, a)] {
            let d = hockey_stick(&laws[s], &laws[t], epsilon);
            if d > delta_max || witness.is_none() {
                delta_max = d;
                witness = Some((s.points.clone(), t.points.clone()));
            }
        }
    }
    PrivacyAudit {
        epsilon,
        delta_max,
        witness,
        user_level,
        pairs_audited: pairs.len(),
    }
}

/// Every dataset in `X^n` for `|X| = domain`.
pub fn all_datasets(domain: u32, n: usize, cap: u128) -> Result<Vec<Vec<u32>>> {
    let count = (domain as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::UniverseTooLarge { requested: count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut cur = vec![0u32; n];
    for _ in 0..count {
        out.push(cur.clone());
        for slot in cur.iter_mut().rev() {
            *slot += 1;
            if *slot < domain {
                break;
            }
            *slot = 0;
        }
    }
    Ok(out)
}

/// All ordered neighbor pairs over `X^n`. Item level: the datasets differ in
/// exactly one coordinate. User level with `users = T`: the sample is split
/// into `T` equal blocks and the datasets differ inside exactly one block.
pub fn neighbors(domain: u32, n: usize, users: Option<usize>, cap: u128) -> Result<Vec<NeighborPair>> {
    let block = match users {
        None => 1,
        Some(t) => {
            if t == 0 || !n.is_multiple_of(t) {
                return Err(Error::param("users", format!("{t} does not divide sample size {n}")));
            }
            n / t
        }
    };
    let datasets = all_datasets(domain, n, cap)?;
    let blocks = all_datasets(domain, block, cap)?;
    let mut pairs = Vec::new();
    for d in &datasets {
        for start in (0..n).step_by(block.max(1)) {
            for b in &blocks {
                if d[start..start + block] == b[..] {
                    continue;
                }
                let mut e = d.clone();
                e[start..start + block].copy_from_slice(b);
                pairs.push((Sample::dataset(d.clone()), Sample::dataset(e)));
            }
        }
    }
    Ok(pairs)
}
