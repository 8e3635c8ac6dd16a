//! Objective functions for generator synthesis and substitute training.
//!
//! Five losses: mean cross-entropy classification, harmony (mean per-row
//! prediction variance, minimized on the decision boundary), diversity
//! (negative mean pairwise cosine dissimilarity within pairing groups),
//! the combined generator objective, and the disputed-weighted substitute
//! objective. Each is a graph builder over a [`Tape`] so gradients flow to
//! whatever produced the inputs; `*_value` wrappers evaluate eagerly.

use thiserror::Error;

use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("row {row} is not a probability vector (sum {sum})")]
    NotASimplex { row: usize, sum: f32 },
    #[error("feature row {row} has zero norm")]
    ZeroNormFeature { row: usize },
    #[error("no pairing group holds two or more samples")]
    NoEligiblePairs,
    #[error("label {index} out of range for {classes} classes")]
    LabelOutOfRange { index: usize, classes: usize },
    #[error("{what}: expected length {expect}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expect: usize,
        got: usize,
    },
    #[error("weight {name} = {value} is out of range")]
    BadWeight { name: &'static str, value: f32 },
    #[error("one-hot row {row} does not have exactly one unit entry")]
    NotOneHot { row: usize },
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Generator and substitute loss weights.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    /// Harmony (boundary-seeking) weight.
    pub alpha: f32,
    /// Diversity weight.
    pub beta: f32,
    /// Disputed-sample weight in the substitute loss.
    pub gamma: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            beta: 0.7,
            gamma: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(LossError::BadWeight {
                name: "alpha",
                value: self.alpha,
            });
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(LossError::BadWeight {
                name: "beta",
                value: self.beta,
            });
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(LossError::BadWeight {
                name: "gamma",
                value: self.gamma,
            });
        }
        Ok(())
    }
}

/// How diversity pairs are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// Pairs restricted to samples sharing a pseudo-label (default).
    SameClass,
    /// Every ordered pair in the batch.
    AllPairs,
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(LossError::LengthMismatch {
            what: "labels",
            expect: n,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(LossError::LabelOutOfRange {
            index: bad,
            classes: k,
        });
    }
    Ok(())
}

fn matrix_dims(tape: &Tape, v: Var, what: &'static str) -> Result<(usize, usize)> {
    match tape.shape(v) {
        [n, k] => Ok((*n, *k)),
        other => Err(LossError::Tensor(TensorError::NotAMatrix {
            op: what,
            shape: other.to_vec(),
        })),
    }
}

/// Converts a one-hot batch to class indices, validating hotness.
pub fn labels_from_one_hot(one_hot: &[f32], n: usize, k: usize) -> Result<Vec<usize>> {
    if one_hot.len() != n * k {
        return Err(LossError::LengthMismatch {
            what: "one_hot",
            expect: n * k,
            got: one_hot.len(),
        });
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let row = &one_hot[i * k..(i + 1) * k];
        let hot: Vec<usize> = (0..k).filter(|&j| row[j] != 0.0).collect();
        if hot.len() != 1 || row[hot[0]] != 1.0 {
            return Err(LossError::NotOneHot { row: i });
        }
        labels.push(hot[0]);
    }
    Ok(labels)
}

/// Mean cross-entropy of `logits` (`[n, k]`) against index labels, computed
/// through a numerically stable log-sum-exp.
pub fn classification_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, k) = matrix_dims(tape, logits, "classification_loss")?;
    check_labels(labels, n, k)?;
    let log_p = tape.log_softmax_rows(logits)?;
    let picked = tape.pick_targets(log_p, labels)?;
    let neg = tape.neg(picked)?;
    Ok(tape.mean_all(neg)?)
}

/// Mean per-row population variance of a probability batch (`[n, k]`).
///
/// Zero exactly when every row is uniform, which happens on the decision
/// boundary; rows must lie on the probability simplex within 1e-4.
pub fn harmony_loss(tape: &mut Tape, probs: Var) -> Result<Var> {
    let (n, k) = matrix_dims(tape, probs, "harmony_loss")?;
    for i in 0..n {
        let row = &tape.value(probs)[i * k..(i + 1) * k];
        let sum: f32 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-4 || row.iter().any(|&p| p < -1e-4) {
            return Err(LossError::NotASimplex { row: i, sum });
        }
    }
    let var = tape.row_variance(probs)?;
    Ok(tape.mean_all(var)?)
}

/// Negative mean pairwise cosine dissimilarity over ordered pairs within
/// each pairing group: `-(2/(M(M-1))) * sum_{i != j} (1 - cos(x_i, x_j))`
/// per group, averaged over groups with two or more members.
///
/// The most diverse batch (orthogonal pairs everywhere) scores -2; identical
/// features score 0.
pub fn diversity_loss(
    tape: &mut Tape,
    features: Var,
    labels: &[usize],
    mode: PairingMode,
) -> Result<Var> {
    let (n, d) = matrix_dims(tape, features, "diversity_loss")?;
    if d == 0 {
        return Err(LossError::Tensor(TensorError::Empty("diversity_loss")));
    }
    for i in 0..n {
        let row = &tape.value(features)[i * d..(i + 1) * d];
        if row.iter().all(|&v| v == 0.0) {
            return Err(LossError::ZeroNormFeature { row: i });
        }
    }

    // Group membership: one group per label, or a single all-pairs group.
    let groups: Vec<Vec<usize>> = match mode {
        PairingMode::AllPairs => vec![(0..n).collect()],
        PairingMode::SameClass => {
            let k = labels.iter().max().map_or(0, |m| m + 1);
            check_labels(labels, n, k.max(1))?;
            let mut g = vec![Vec::new(); k];
            for (i, &l) in labels.iter().enumerate() {
                g[l].push(i);
            }
            g
        }
    };
    let eligible: Vec<&Vec<usize>> = groups.iter().filter(|g| g.len() >= 2).collect();
    if eligible.is_empty() {
        return Err(LossError::NoEligiblePairs);
    }

    // L = sum_ij W_ij * (1 - S_ij) with W the per-group ordered-pair weight
    // -(2/(M(M-1)))/G; the constant part telescopes to exactly -2, leaving
    // L = -2 - sum(W . S).
    let g_count = eligible.len() as f32;
    let mut weight = vec![0.0f32; n * n];
    for group in &eligible {
        let m = group.len() as f32;
        let w = -(2.0 / (m * (m - 1.0))) / g_count;
        for &i in group.iter() {
            for &j in group.iter() {
                if i != j {
                    weight[i * n + j] = w;
                }
            }
        }
    }

    let sq = tape.mul(features, features)?;
    let norms = tape.row_sum(sq)?;
    let inv_norm = tape.rsqrt(norms)?;
    let unit = tape.scale_rows(features, inv_norm)?;
    let unit_t = tape.transpose(unit)?;
    let sim = tape.matmul(unit, unit_t)?;
    let w_leaf = tape.leaf_from(vec![n, n], weight, false)?;
    let weighted = tape.mul(w_leaf, sim)?;
    let s = tape.sum_all(weighted)?;
    let neg_s = tape.neg(s)?;
    Ok(tape.add_scalar(neg_s, -2.0)?)
}

/// Per-component values of one generator objective evaluation. Components
/// excluded from the objective are reported as 0, so
/// `total == clf + alpha*harmony + beta*diversity` holds for the logged
/// numbers in every ablation mode.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLossParts {
    pub total: Var,
    pub clf_value: f32,
    pub harmony_value: f32,
    pub diversity_value: f32,
}

impl GeneratorLossParts {
    pub fn total_value(&self, tape: &Tape) -> f32 {
        tape.item(self.total)
    }
}

/// Options controlling which generator loss components are active.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLossOpts {
    pub enable_harmony: bool,
    pub enable_diversity: bool,
    pub pairing: PairingMode,
}

impl Default for GeneratorLossOpts {
    fn default() -> Self {
        Self {
            enable_harmony: true,
            enable_diversity: true,
            pairing: PairingMode::SameClass,
        }
    }
}

/// Combined generator objective `L_clf + alpha*L_harm + beta*L_div`.
///
/// `probs` must be the softmax of `logits` built on the same tape so the
/// harmony gradient reaches the generator. With both extra components
/// disabled (or zero-weighted) the returned total is the classification
/// loss node itself, bit-identical.
pub fn generator_loss(
    tape: &mut Tape,
    logits: Var,
    probs: Var,
    features: Var,
    pseudo_labels: &[usize],
    weights: &LossWeights,
    opts: &GeneratorLossOpts,
) -> Result<GeneratorLossParts> {
    weights.validate()?;
    let clf = classification_loss(tape, logits, pseudo_labels)?;
    let clf_value = tape.item(clf);
    let mut total = clf;
    let mut harmony_value = 0.0;
    let mut diversity_value = 0.0;
    if opts.enable_harmony && weights.alpha != 0.0 {
        let h = harmony_loss(tape, probs)?;
        harmony_value = tape.item(h);
        let scaled = tape.scale(h, weights.alpha)?;
        total = tape.add(total, scaled)?;
    }
    if opts.enable_diversity && weights.beta != 0.0 {
        let d = diversity_loss(tape, features, pseudo_labels, opts.pairing)?;
        diversity_value = tape.item(d);
        let scaled = tape.scale(d, weights.beta)?;
        total = tape.add(total, scaled)?;
    }
    Ok(GeneratorLossParts {
        total,
        clf_value,
        harmony_value,
        diversity_value,
    })
}

/// Disputed-weighted substitute objective: mean over the batch of
/// per-sample cross-entropy, scaled by `gamma` where `disputed` and by 1
/// otherwise.
pub fn substitute_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    disputed: &[bool],
    gamma: f32,
) -> Result<Var> {
    let (n, k) = matrix_dims(tape, logits, "substitute_loss")?;
    check_labels(labels, n, k)?;
    if disputed.len() != n {
        return Err(LossError::LengthMismatch {
            what: "disputed mask",
            expect: n,
            got: disputed.len(),
        });
    }
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(LossError::BadWeight {
            name: "gamma",
            value: gamma,
        });
    }
    let log_p = tape.log_softmax_rows(logits)?;
    let picked = tape.pick_targets(log_p, labels)?;
    let per_sample = tape.neg(picked)?;
    let w: Vec<f32> = disputed
        .iter()
        .map(|&d| if d { gamma } else { 1.0 })
        .collect();
    let w_leaf = tape.leaf_from(vec![n], w, false)?;
    let weighted = tape.mul(per_sample, w_leaf)?;
    Ok(tape.mean_all(weighted)?)
}

/// Eager scalar evaluation of [`classification_loss`].
pub fn classification_loss_value(logits: &[f32], n: usize, k: usize, labels: &[usize]) -> Result<f32> {
    let mut tape = Tape::new();
    let v = tape.leaf_from(vec![n, k], logits.to_vec(), false)?;
    let loss = classification_loss(&mut tape, v, labels)?;
    Ok(tape.item(loss))
}

/// Eager scalar evaluation of [`harmony_loss`].
pub fn harmony_loss_value(probs: &[f32], n: usize, k: usize) -> Result<f32> {
    let mut tape = Tape::new();
    let v = tape.leaf_from(vec![n, k], probs.to_vec(), false)?;
    let loss = harmony_loss(&mut tape, v)?;
    Ok(tape.item(loss))
}

/// Eager scalar evaluation of [`diversity_loss`].
pub fn diversity_loss_value(
    features: &[f32],
    n: usize,
    d: usize,
    labels: &[usize],
    mode: PairingMode,
) -> Result<f32> {
    let mut tape = Tape::new();
    let v = tape.leaf_from(vec![n, d], features.to_vec(), false)?;
    let loss = diversity_loss(&mut tape, v, labels, mode)?;
    Ok(tape.item(loss))
}
