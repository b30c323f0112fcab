use stability_lab::algorithm::{make_oracle_algorithm, OracleAlgorithm};
use stability_lab::tape::fresh_tape;
use stability_lab::verify::{estimate_law, estimate_replicability, hoeffding_halfwidth};
use stability_lab::FiniteDistribution;

fn figure_law() -> FiniteDistribution {
    FiniteDistribution::new([(0, 0.30), (1, 0.25), (2, 0.24), (3, 0.21)]).unwrap()
}

#[test]
fn oracle_outputs_follow_the_declared_law() {
    let data = FiniteDistribution::uniform(256).unwrap();
    let law = figure_law();
    let alg = make_oracle_algorithm(vec![(data.clone(), law.clone())], 3).unwrap();
    let trials = 1_000_000u64;
    let est = estimate_law(&alg, &data, trials, 17).unwrap();
    for (y, p) in law.iter() {
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        let q = est.prob(y);
        assert!((q - p).abs() <= 3.0 * sd, "output {y}: {q} vs {p} (3sd {})", 3.0 * sd);
    }
}

#[test]
fn fresh_tape_bits_are_balanced() {
    let tapes = 100_000u64;
    let mut ones = [0u64; 32];
    for t in 0..tapes {
        let mut tape = fresh_tape(5, t, 32);
        let v = tape.read_bits(32).unwrap();
        for (i, c) in ones.iter_mut().enumerate() {
            *c += (v >> i) & 1;
        }
    }
    for (i, c) in ones.iter().enumerate() {
        let mean = *c as f64 / tapes as f64;
        assert!((mean - 0.5).abs() <= 0.01, "bit {i}: mean {mean}");
    }
}

#[test]
fn hoeffding_interval_covers_known_collision() {
    // Per-tape laws (0.8, 0.2) and (0.2, 0.8): shared-tape agreement is
    // 0.8² + 0.2² = 0.68 under either tape.
    let data = FiniteDistribution::uniform(64).unwrap();
    let laws = vec![
        FiniteDistribution::new([(0, 0.8), (1, 0.2)]).unwrap(),
        FiniteDistribution::new([(0, 0.2), (1, 0.8)]).unwrap(),
    ];
    let alg = OracleAlgorithm::with_tape_laws(vec![(data.clone(), laws)], 1, 2).unwrap();
    let trials = 2000;
    let ci = hoeffding_halfwidth(trials);
    for seed in 0..20 {
        let shared = estimate_replicability(&alg, &data, trials, true, seed).unwrap();
        assert!((shared.estimate - 0.68).abs() <= ci, "seed {seed}: {}", shared.estimate);
        // Independent tapes: averaged law is (1/2, 1/2).
        let indep = estimate_replicability(&alg, &data, trials, false, seed).unwrap();
        assert!((indep.estimate - 0.5).abs() <= ci, "seed {seed}: {}", indep.estimate);
        assert_eq!(shared.bits_used, 1);
    }
}
