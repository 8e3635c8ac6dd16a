//! The hard-label boundary between attacker and victim.
//!
//! Three oracle variants behind one interface: a local frozen target, a
//! label-flipping noisy wrapper, and a remote HTTP endpoint. Every
//! successful prediction is charged to a [`QueryLedger`] at one count per
//! sample; failed calls charge nothing. The ledger enforces the budget
//! atomically, so a batch either fits entirely or is refused.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::client::{self, ClientError, RemoteConfig};
use crate::nets::{NetError, Network};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("query budget exhausted: q = {q}, budget = {budget}, requested {requested}")]
    BudgetExceeded { q: u64, budget: u64, requested: u64 },
    #[error("flip probability {0} outside [0, 0.5)")]
    BadFlipProbability(f64),
    #[error("remote oracle unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("remote oracle returned a malformed response: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("oracle returned label {label} for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Atomic sample-count ledger with a hard budget.
///
/// `q` counts individual samples, not batches, and only ever moves on a
/// successful oracle response.
#[derive(Debug)]
pub struct QueryLedger {
    count: AtomicU64,
    budget: u64,
    history: Mutex<Vec<(u64, u64)>>,
}

impl QueryLedger {
    pub fn new(budget: u64) -> Self {
        Self {
            count: AtomicU64::new(0),
            budget,
            history: Mutex::new(Vec::new()),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn remaining(&self) -> u64 {
        self.budget.saturating_sub(self.count())
    }

    /// Reserves `n` samples against the budget; all-or-nothing.
    pub fn charge(&self, n: u64) -> Result<()> {
        self.count
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |q| {
                q.checked_add(n).filter(|&next| next <= self.budget)
            })
            .map(|_| ())
            .map_err(|q| OracleError::BudgetExceeded {
                q,
                budget: self.budget,
                requested: n,
            })
    }

    /// Appends an (epoch, cumulative q) record for trace emission.
    pub fn record_epoch(&self, epoch: u64) {
        self.history
            .lock()
            .expect("ledger history lock")
            .push((epoch, self.count()));
    }

    pub fn history(&self) -> Vec<(u64, u64)> {
        self.history.lock().expect("ledger history lock").clone()
    }
}

/// Oracle variants: local frozen target, noisy wrapper, remote endpoint.
pub enum OracleKind {
    Local(Network),
    Noisy {
        inner: Box<OracleKind>,
        flip_probability: f64,
        rng: Mutex<ChaCha8Rng>,
    },
    Remote(RemoteConfig),
}

impl OracleKind {
    pub fn local(target: Network) -> Self {
        OracleKind::Local(target)
    }

    /// Wraps an oracle so each response flips to a uniformly drawn wrong
    /// label with probability `flip_probability`.
    pub fn noisy(inner: OracleKind, flip_probability: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(0.0..0.5).contains(&flip_probability) {
            return Err(OracleError::BadFlipProbability(flip_probability));
        }
        Ok(OracleKind::Noisy {
            inner: Box::new(inner),
            flip_probability,
            rng: Mutex::new(rng),
        })
    }

    pub fn remote(config: RemoteConfig) -> Self {
        OracleKind::Remote(config)
    }

    pub fn num_classes(&self) -> usize {
        match self {
            OracleKind::Local(net) => net.spec().num_classes,
            OracleKind::Noisy { inner, .. } => inner.num_classes(),
            OracleKind::Remote(cfg) => cfg.num_classes,
        }
    }

    /// Raw labels without ledger accounting; used internally by
    /// [`predict_hard`] after the budget charge succeeds.
    fn predict_raw(&self, features: &[f32], n: usize) -> Result<Vec<usize>> {
        match self {
            OracleKind::Local(net) => {
                let labels = net.predict_labels(features, n)?;
                Ok(labels)
            }
            OracleKind::Noisy {
                inner,
                flip_probability,
                rng,
            } => {
                let clean = inner.predict_raw(features, n)?;
                let k = inner.num_classes();
                let mut rng = rng.lock().expect("noisy oracle rng lock");
                Ok(clean
                    .into_iter()
                    .map(|label| {
                        if k >= 2 && rng.gen_range(0.0..1.0) < *flip_probability {
                            // uniform over the k-1 incorrect labels
                            let offset = rng.gen_range(1..k);
                            (label + offset) % k
                        } else {
                            label
                        }
                    })
                    .collect())
            }
            OracleKind::Remote(cfg) => {
                let k = cfg.num_classes;
                let labels = match client::remote_predict(cfg, features, n) {
                    Ok(l) => l,
                    Err(ClientError::BudgetRejected) => {
                        return Err(OracleError::BudgetExceeded {
                            q: 0,
                            budget: 0,
                            requested: n as u64,
                        })
                    }
                    Err(ClientError::Malformed(m)) => {
                        return Err(OracleError::MalformedResponse(m))
                    }
                    Err(e) => return Err(OracleError::RemoteUnavailable(e.to_string())),
                };
                if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                    return Err(OracleError::LabelOutOfRange {
                        label: bad,
                        classes: k,
                    });
                }
                Ok(labels)
            }
        }
    }
}

/// Hard-label prediction with exact accounting: on success the ledger grows
/// by the number of samples; on any failure it is untouched.
///
/// For remote oracles the charge is taken only after a validated response,
/// so network failures never consume budget.
pub fn predict_hard(
    oracle: &OracleKind,
    ledger: &QueryLedger,
    features: &[f32],
    n: usize,
) -> Result<Vec<usize>> {
    let requested = n as u64;
    if ledger.remaining() < requested {
        return Err(OracleError::BudgetExceeded {
            q: ledger.count(),
            budget: ledger.budget(),
            requested,
        });
    }
    let labels = oracle.predict_raw(features, n)?;
    ledger.charge(requested)?;
    Ok(labels)
}

/// Single-sample noisy prediction, the theorem's imperfect-feedback
/// primitive. Flips with probability `flip_probability` to a uniformly
/// drawn incorrect label.
pub fn noisy_predict(
    true_label: usize,
    num_classes: usize,
    flip_probability: f64,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    if !(0.0..0.5).contains(&flip_probability) {
        return Err(OracleError::BadFlipProbability(flip_probability));
    }
    if num_classes < 2 || rng.gen_range(0.0..1.0) >= flip_probability {
        return Ok(true_label);
    }
    let offset = rng.gen_range(1..num_classes);
    Ok((true_label + offset) % num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{build_network, NetRole, NetworkSpec};
    use crate::rng::{stream_rng, stream};

    fn tiny_target(seed: u64) -> Network {
        build_network(&NetworkSpec::classifier(
            NetRole::Target,
            2,
            vec![8],
            2,
            seed,
        ))
        .unwrap()
    }

    #[test]
    fn ledger_counts_samples_exactly() {
        let oracle = OracleKind::local(tiny_target(1));
        let ledger = QueryLedger::new(100);
        let batch = vec![0.1f32; 32 * 2];
        predict_hard(&oracle, &ledger, &batch, 32).unwrap();
        assert_eq!(ledger.count(), 32);
        predict_hard(&oracle, &ledger, &batch, 32).unwrap();
        assert_eq!(ledger.count(), 64);
    }

    #[test]
    fn budget_refusal_is_atomic() {
        let oracle = OracleKind::local(tiny_target(1));
        let ledger = QueryLedger::new(10);
        let batch = vec![0.0f32; 64 * 2];
        let err = predict_hard(&oracle, &ledger, &batch, 64).unwrap_err();
        assert!(matches!(
            err,
            OracleError::BudgetExceeded {
                q: 0,
                budget: 10,
                requested: 64
            }
        ));
        assert_eq!(ledger.count(), 0);
    }

    #[test]
    fn local_oracle_argmax_with_tie_break() {
        // A weight-zero network produces identical logits everywhere, so
        // the documented tie-break (lowest index) must pick class 0.
        let mut net = tiny_target(1);
        let names: Vec<String> = net.params().iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let t = net.params_mut().get_mut(&name).unwrap();
            let zeros = vec![0.0; t.numel()];
            *t = crate::tensor::Tensor::new(t.shape().to_vec(), zeros)
                .unwrap()
                .with_grad();
        }
        let oracle = OracleKind::local(net);
        let ledger = QueryLedger::new(10);
        let labels = predict_hard(&oracle, &ledger, &[0.3, -0.7], 1).unwrap();
        assert_eq!(labels, vec![0]);
    }

    #[test]
    fn noisy_with_zero_phi_equals_inner() {
        let target = tiny_target(2);
        let reference = OracleKind::local(target.clone());
        let noisy = OracleKind::noisy(
            OracleKind::local(target),
            0.0,
            stream_rng(0, stream::ORACLE_NOISE),
        )
        .unwrap();
        let ledger_a = QueryLedger::new(1000);
        let ledger_b = QueryLedger::new(1000);
        let mut batch = Vec::new();
        for i in 0..64 {
            batch.push((i as f32) / 32.0 - 1.0);
            batch.push(((i * 7) % 13) as f32 / 6.5 - 1.0);
        }
        let a = predict_hard(&reference, &ledger_a, &batch, 64).unwrap();
        let b = predict_hard(&noisy, &ledger_b, &batch, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noisy_flip_rate_converges() {
        let mut rng = stream_rng(11, stream::ORACLE_NOISE);
        let mut flips = 0u32;
        let trials = 10_000;
        for _ in 0..trials {
            if noisy_predict(1, 2, 0.25, &mut rng).unwrap() != 1 {
                flips += 1;
            }
        }
        let rate = flips as f64 / trials as f64;
        assert!((rate - 0.25).abs() < 0.02, "empirical flip rate {rate}");
    }

    #[test]
    fn binary_flip_always_other_class() {
        let mut rng = stream_rng(3, stream::ORACLE_NOISE);
        for _ in 0..200 {
            let l = noisy_predict(0, 2, 0.49, &mut rng).unwrap();
            assert!(l == 0 || l == 1);
        }
    }

    #[test]
    fn phi_out_of_range_rejected() {
        let mut rng = stream_rng(0, stream::ORACLE_NOISE);
        assert!(noisy_predict(0, 2, 0.5, &mut rng).is_err());
        assert!(noisy_predict(0, 2, -0.1, &mut rng).is_err());
        assert!(
            OracleKind::noisy(OracleKind::local(tiny_target(0)), 0.75, rng).is_err()
        );
    }

    #[test]
    fn history_records_cumulative_counts() {
        let oracle = OracleKind::local(tiny_target(1));
        let ledger = QueryLedger::new(100);
        predict_hard(&oracle, &ledger, &[0.0, 0.0], 1).unwrap();
        ledger.record_epoch(0);
        predict_hard(&oracle, &ledger, &[0.0, 0.0, 1.0, 1.0], 2).unwrap();
        ledger.record_epoch(1);
        assert_eq!(ledger.history(), vec![(0, 1), (1, 3)]);
    }
}
