//! Query-complexity bound calculators and an empirical validation harness.
//!
//! The guarantee under study: a hard-label oracle whose answers flip with
//! probability at most `phi_max < 1/2` can be wrapped by repeating each
//! probe `R` times and majority-voting, turning any clean active learner
//! with query complexity `q` into a noise-tolerant one using
//! `Q = 8/(1-2*phi_max)^2 * q * ln(q/delta)` queries in total, succeeding
//! with probability at least `1 - 2*delta`. All arithmetic here is 64-bit.
//!
//! The harness instantiates the simplest concrete learner — binary search
//! for a threshold on [0, 1] — because the repeat-and-vote reduction does
//! not care which learner it wraps.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, stream};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("majority vote over an empty response list")]
    EmptyResponses,
}

pub type Result<T> = std::result::Result<T, TheoryError>;

/// Inputs of the bound: worst-case flip probability, the clean learner's
/// query complexity, the accuracy/confidence pair, and the derived repeat
/// count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub phi_max: f64,
    pub q_eps_delta: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub repeat: u64,
}

fn check_inputs(phi_max: f64, q: u64, delta: f64) -> Result<()> {
    if !(0.0..0.5).contains(&phi_max) {
        return Err(TheoryError::PreconditionViolated(format!(
            "phi_max {phi_max} must lie in [0, 0.5)"
        )));
    }
    if q < 1 {
        return Err(TheoryError::PreconditionViolated("q must be >= 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(TheoryError::PreconditionViolated(format!(
            "delta {delta} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Total query budget sufficient for noise-tolerant learning:
/// `8/(1 - 2*phi_max)^2 * q * ln(q/delta)`.
pub fn query_complexity_bound(phi_max: f64, q: u64, delta: f64) -> Result<f64> {
    check_inputs(phi_max, q, delta)?;
    let contraction = 1.0 - 2.0 * phi_max;
    Ok(8.0 / (contraction * contraction) * q as f64 * (q as f64 / delta).ln())
}

/// Per-probe repeat count: the bound divided by `q`, rounded up, and
/// clamped to at least one query per probe (the raw formula dips below 1
/// when `q/delta` is close to 1).
pub fn repeat_count(phi_max: f64, q: u64, delta: f64) -> Result<u64> {
    check_inputs(phi_max, q, delta)?;
    let contraction = 1.0 - 2.0 * phi_max;
    let exact = 8.0 / (contraction * contraction) * (q as f64 / delta).ln();
    Ok((exact.ceil() as u64).max(1))
}

/// Most frequent label; ties break toward the lowest class index.
pub fn majority_vote_label(responses: &[usize]) -> Result<usize> {
    if responses.is_empty() {
        return Err(TheoryError::EmptyResponses);
    }
    let k = responses.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; k];
    for &r in responses {
        counts[r] += 1;
    }
    let mut best = 0usize;
    for (label, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = label;
        }
    }
    Ok(best)
}

/// Clean query complexity of threshold binary search to accuracy epsilon.
pub fn binary_search_probes(epsilon: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(TheoryError::PreconditionViolated(format!(
            "epsilon {epsilon} must lie in (0, 1)"
        )));
    }
    Ok((1.0 / epsilon).log2().ceil() as u64)
}

/// Outcome of the empirical validation run; serializes to the report JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub phi: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub q: u64,
    #[serde(rename = "R")]
    pub r: u64,
    #[serde(rename = "Q_bound")]
    pub q_bound: f64,
    pub trials: usize,
    pub success_rate: f64,
    pub mean_queries_used: f64,
}

/// Monte-Carlo check of the guarantee on the threshold class over [0, 1].
///
/// Each trial draws a true threshold uniformly, runs binary search for
/// `q = ceil(log2(1/epsilon))` probes, asks every probe `R` times against
/// an oracle that flips each answer independently with probability `phi`,
/// majority-votes, and scores success when the estimate lands within
/// `epsilon` of the truth. Trials are seeded independently from
/// `master_seed`, so the run is reproducible and order-independent.
pub fn validate_theorem(
    phi: f64,
    epsilon: f64,
    delta: f64,
    trials: usize,
    master_seed: u64,
) -> Result<TheoremReport> {
    if trials == 0 {
        return Err(TheoryError::PreconditionViolated(
            "trials must be >= 1".into(),
        ));
    }
    let q = binary_search_probes(epsilon)?;
    check_inputs(phi, q, delta)?;
    let r = repeat_count(phi, q, delta)?;
    let q_bound = query_complexity_bound(phi, q, delta)?;
    let base = rng::derive_seed(master_seed, stream::THEORY);

    let mut successes = 0usize;
    let mut total_queries = 0u64;
    let mut votes = Vec::with_capacity(r as usize);
    for trial in 0..trials {
        let mut rng = rng::stream_rng(base, trial as u64);
        let theta_true: f64 = rng.gen_range(0.0..1.0);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut used = 0u64;
        for _ in 0..q {
            let mid = 0.5 * (lo + hi);
            let clean = usize::from(mid >= theta_true);
            votes.clear();
            for _ in 0..r {
                let flipped = rng.gen_bool(phi);
                votes.push(if flipped { 1 - clean } else { clean });
                used += 1;
            }
            if majority_vote_label(&votes)? == 1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let estimate = 0.5 * (lo + hi);
        if (estimate - theta_true).abs() <= epsilon {
            successes += 1;
        }
        total_queries += used;
    }
    Ok(TheoremReport {
        phi,
        epsilon,
        delta,
        q,
        r,
        q_bound,
        trials,
        success_rate: successes as f64 / trials as f64,
        mean_queries_used: total_queries as f64 / trials as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_noise_free_value() {
        // 8 * 100 * ln(1000)
        let q = query_complexity_bound(0.0, 100, 0.1).unwrap();
        let expect = 800.0 * (1000.0f64).ln();
        assert!((q - expect).abs() / expect < 1e-12);
        assert!((q - 5526.204223185709).abs() / expect < 1e-12);
    }

    #[test]
    fn bound_quarter_noise_value() {
        // contraction 0.5 squares to 0.25, so the factor is 32
        let q = query_complexity_bound(0.25, 100, 0.1).unwrap();
        assert!((q - 22104.816892742838).abs() / q < 1e-6);
    }

    #[test]
    fn bound_rejects_half_noise() {
        assert!(query_complexity_bound(0.5, 100, 0.1).is_err());
        assert!(query_complexity_bound(-0.01, 100, 0.1).is_err());
        assert!(query_complexity_bound(0.1, 0, 0.1).is_err());
        assert!(query_complexity_bound(0.1, 100, 0.0).is_err());
        assert!(query_complexity_bound(0.1, 100, 1.0).is_err());
    }

    #[test]
    fn bound_monotone_on_grid() {
        let phis = [0.0, 0.1, 0.2, 0.3, 0.4, 0.45, 0.49];
        for w in phis.windows(2) {
            let a = query_complexity_bound(w[0], 100, 0.1).unwrap();
            let b = query_complexity_bound(w[1], 100, 0.1).unwrap();
            assert!(b > a, "phi {} -> {} did not increase Q", w[0], w[1]);
        }
        for q in [1u64, 2, 10, 100, 1000] {
            let a = query_complexity_bound(0.1, q, 0.1).unwrap();
            let b = query_complexity_bound(0.1, q * 2, 0.1).unwrap();
            assert!(b > a);
            let ra = repeat_count(0.1, q, 0.1).unwrap();
            let rb = repeat_count(0.1, q * 2, 0.1).unwrap();
            assert!(rb >= ra);
        }
        for d in [(0.05, 0.1), (0.1, 0.2), (0.2, 0.4)] {
            let a = query_complexity_bound(0.1, 100, d.0).unwrap();
            let b = query_complexity_bound(0.1, 100, d.1).unwrap();
            assert!(a > b, "smaller delta must need more queries");
        }
    }

    #[test]
    fn repeat_count_noise_free_value() {
        // ceil(8 * ln 1000) = ceil(55.262) = 56
        assert_eq!(repeat_count(0.0, 100, 0.1).unwrap(), 56);
    }

    #[test]
    fn repeat_count_clamps_to_one() {
        // q/delta close to 1 drives ln toward 0
        assert_eq!(repeat_count(0.0, 1, 0.999999).unwrap(), 1);
    }

    #[test]
    fn repeat_quadruples_when_contraction_halves() {
        // pre-ceiling R scales as 1/(1-2phi)^2: phi 0 -> contraction 1,
        // phi 0.25 -> contraction 0.5, a factor of exactly 4
        let base = 8.0 * (100.0f64 / 0.1).ln();
        let quad = 32.0 * (100.0f64 / 0.1).ln();
        assert!((quad / base - 4.0).abs() < 1e-12);
        let r1 = repeat_count(0.0, 100, 0.1).unwrap() as f64;
        let r4 = repeat_count(0.25, 100, 0.1).unwrap() as f64;
        assert!((r4 - 4.0 * r1).abs() <= 4.0, "ceiling slack only");
    }

    #[test]
    fn bound_equals_repeat_times_q_pre_rounding() {
        let phi = 0.17;
        let (q, delta) = (37u64, 0.07);
        let bound = query_complexity_bound(phi, q, delta).unwrap();
        let contraction: f64 = 1.0 - 2.0 * phi;
        let r_exact = 8.0 / (contraction * contraction) * (q as f64 / delta).ln();
        assert!((bound - r_exact * q as f64).abs() / bound < 1e-12);
    }

    #[test]
    fn majority_vote_examples() {
        assert_eq!(majority_vote_label(&[1, 1, 0]).unwrap(), 1);
        assert_eq!(majority_vote_label(&[0, 1]).unwrap(), 0, "tie -> lowest");
        assert_eq!(majority_vote_label(&[2, 2, 1, 1, 0]).unwrap(), 1, "tie");
        assert_eq!(majority_vote_label(&[5]).unwrap(), 5);
        assert!(majority_vote_label(&[]).is_err());
    }

    #[test]
    fn majority_vote_recovers_label_under_quarter_noise() {
        // 56 repeats at flip rate 0.25; the vote-failure probability is
        // far below 1e-2, so 10k trials should nearly always recover 1
        let mut rng = rng::stream_rng(1234, stream::THEORY);
        let trials = 10_000;
        let mut recovered = 0;
        for _ in 0..trials {
            let draws: Vec<usize> = (0..56)
                .map(|_| if rng.gen_bool(0.25) { 0 } else { 1 })
                .collect();
            if majority_vote_label(&draws).unwrap() == 1 {
                recovered += 1;
            }
        }
        let rate = recovered as f64 / trials as f64;
        assert!(rate >= 0.99, "recovery rate {rate}");
    }

    #[test]
    fn majority_failure_within_chernoff_plus_slack() {
        // empirical failure rate <= exp(-R/2 * (1/2 - phi)^2) + 3 SE
        let (phi, r) = (0.3f64, 41u64);
        let mut rng = rng::stream_rng(77, stream::THEORY);
        let trials = 20_000;
        let mut failures = 0;
        for _ in 0..trials {
            let draws: Vec<usize> = (0..r)
                .map(|_| if rng.gen_bool(phi) { 0 } else { 1 })
                .collect();
            if majority_vote_label(&draws).unwrap() != 1 {
                failures += 1;
            }
        }
        let rate = failures as f64 / trials as f64;
        let bound = (-(r as f64) / 2.0 * (0.5 - phi) * (0.5 - phi)).exp();
        let se = (bound.max(rate) * (1.0 - bound.max(rate)) / trials as f64)
            .sqrt()
            .max(1.0 / trials as f64);
        assert!(
            rate <= bound + 3.0 * se,
            "failure {rate} vs chernoff {bound}"
        );
    }

    #[test]
    fn probes_formula() {
        assert_eq!(binary_search_probes(0.05).unwrap(), 5);
        assert_eq!(binary_search_probes(0.5).unwrap(), 1);
        assert_eq!(binary_search_probes(0.001).unwrap(), 10);
        assert!(binary_search_probes(0.0).is_err());
    }

    #[test]
    fn noise_free_search_always_succeeds() {
        let report = validate_theorem(0.0, 0.05, 0.1, 200, 9).unwrap();
        assert_eq!(report.success_rate, 1.0);
        assert_eq!(report.q, 5);
        // with phi = 0 each probe is asked R(0, 5, 0.1) times
        assert_eq!(report.r, repeat_count(0.0, 5, 0.1).unwrap());
    }

    #[test]
    fn noisy_search_meets_guarantee_and_budget() {
        let report = validate_theorem(0.1, 0.05, 0.1, 500, 4242).unwrap();
        assert!(
            report.success_rate >= 1.0 - 2.0 * report.delta,
            "success {} below {}",
            report.success_rate,
            1.0 - 2.0 * report.delta
        );
        // accounting identity: q probes, R repeats each, no more
        let per_trial = (report.q * report.r) as f64;
        assert_eq!(report.mean_queries_used, per_trial);
        assert!(
            per_trial <= report.q_bound + report.q as f64,
            "usage {per_trial} above bound {} + slack {}",
            report.q_bound,
            report.q
        );
    }

    #[test]
    fn validation_is_deterministic() {
        let a = validate_theorem(0.1, 0.05, 0.1, 50, 7).unwrap();
        let b = validate_theorem(0.1, 0.05, 0.1, 50, 7).unwrap();
        assert_eq!(a, b);
        let c = validate_theorem(0.1, 0.05, 0.1, 50, 8).unwrap();
        assert_eq!(a.q_bound, c.q_bound, "bound is seed-independent");
    }

    #[test]
    fn report_serializes_with_expected_keys() {
        let report = validate_theorem(0.1, 0.05, 0.1, 10, 7).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        for key in [
            "\"phi\"",
            "\"epsilon\"",
            "\"delta\"",
            "\"q\"",
            "\"R\"",
            "\"Q_bound\"",
            "\"trials\"",
            "\"success_rate\"",
            "\"mean_queries_used\"",
        ] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
    }
}
