//! Fidelity metrics and transfer-attack protocols.
//!
//! Accuracy against ground truth, substitute/target consistency, Cohen's
//! kappa with its observed/chance agreement components, and the three
//! gradient-sign attacks (single-step, iterated, iterated with random
//! start). Adversarial examples are crafted on the substitute and judged
//! on the target; the L-infinity ball and the data range are hard
//! constraints enforced by clipping every step.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::losses::{self, LossError};
use crate::nets::{NetError, Network};
use crate::rng::{self, stream};
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty evaluation set")]
    EmptySet,
    #[error("no eligible samples after filtering")]
    EmptyDenominator,
    #[error("prediction vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid attack parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Gradient-sign attack family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackAlgo {
    Fgsm,
    Bim,
    Pgd,
}

impl AttackAlgo {
    pub fn name(&self) -> &'static str {
        match self {
            AttackAlgo::Fgsm => "fgsm",
            AttackAlgo::Bim => "bim",
            AttackAlgo::Pgd => "pgd",
        }
    }
}

/// Parameters of one adversarial crafting run.
#[derive(Debug, Clone, Copy)]
pub struct AttackParams {
    pub kind: AttackAlgo,
    /// L-infinity radius.
    pub epsilon: f32,
    /// Per-iteration step for bim/pgd; fgsm always steps by epsilon.
    pub step_size: f32,
    pub iterations: usize,
    pub targeted: bool,
    /// Seeds the pgd random start and targeted-label draws.
    pub seed: u64,
}

impl AttackParams {
    /// Standard setup: iteration count defaults to ceil(1.5 * eps / step).
    pub fn new(kind: AttackAlgo, epsilon: f32, step_size: f32, seed: u64) -> Self {
        let iterations = if step_size > 0.0 {
            ((1.5 * epsilon / step_size).ceil() as usize).max(1)
        } else {
            1
        };
        Self {
            kind,
            epsilon,
            step_size,
            iterations,
            targeted: false,
            seed,
        }
    }

    pub fn targeted(mut self) -> Self {
        self.targeted = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(EvalError::BadParams(format!("epsilon {}", self.epsilon)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(EvalError::BadParams(format!(
                "step_size {}",
                self.step_size
            )));
        }
        // the ball collapses to a point at epsilon 0, where any positive
        // step size is vacuously fine
        if self.epsilon > 0.0 && self.step_size > self.epsilon {
            return Err(EvalError::BadParams(format!(
                "step_size {} exceeds epsilon {}",
                self.step_size, self.epsilon
            )));
        }
        if self.iterations < 1 {
            return Err(EvalError::BadParams("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Valid feature range for crafted examples.
#[derive(Debug, Clone)]
pub enum ClipRange {
    /// [0, 1] on every dimension (image data).
    Unit,
    /// Per-dimension box, typically the training set's bounding box.
    Box { lo: Vec<f32>, hi: Vec<f32> },
}

impl ClipRange {
    fn clamp(&self, dim_index: usize, v: f32) -> f32 {
        match self {
            ClipRange::Unit => v.clamp(0.0, 1.0),
            ClipRange::Box { lo, hi } => v.clamp(lo[dim_index], hi[dim_index]),
        }
    }
}

/// Fraction of argmax predictions matching ground truth.
pub fn accuracy(model: &Network, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let preds = model.predict_labels(ds.features(), ds.len())?;
    let correct = preds
        .iter()
        .zip(ds.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Fraction of probes on which two models produce the same argmax label.
/// Needs no ground truth.
pub fn consistency_rate(
    substitute: &Network,
    target: &Network,
    probes: &[f32],
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(EvalError::EmptySet);
    }
    let a = substitute.predict_labels(probes, n)?;
    let b = target.predict_labels(probes, n)?;
    let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / n as f64)
}

/// Cohen's kappa and its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    /// Observed agreement: confusion-matrix diagonal mass / N.
    pub p_o: f64,
    /// Chance agreement: sum over classes of marginal products.
    pub p_e: f64,
}

/// Chance-corrected agreement between two prediction vectors.
pub fn cohens_kappa(a: &[usize], b: &[usize], num_classes: usize) -> Result<KappaResult> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let n = a.len() as f64;
    let k = num_classes;
    let mut confusion = vec![0u64; k * k];
    for (&x, &y) in a.iter().zip(b) {
        if x >= k || y >= k {
            return Err(EvalError::BadParams(format!(
                "label {} outside {k} classes",
                x.max(y)
            )));
        }
        confusion[x * k + y] += 1;
    }
    let p_o = (0..k).map(|c| confusion[c * k + c]).sum::<u64>() as f64 / n;
    let p_e = (0..k)
        .map(|c| {
            let row: u64 = (0..k).map(|j| confusion[c * k + j]).sum();
            let col: u64 = (0..k).map(|i| confusion[i * k + c]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum::<f64>();
    // p_e == 1 forces both predictors constant and identical, so perfect
    // agreement is the only consistent reading
    let kappa = if p_e >= 1.0 {
        1.0
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Ok(KappaResult { kappa, p_o, p_e })
}

fn sign(g: f32) -> f32 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of the mean cross-entropy with respect to the input batch.
fn input_gradient(model: &Network, x: &[f32], n: usize, labels: &[usize]) -> Result<Vec<f32>> {
    let dim = x.len() / n;
    let mut tape = Tape::new();
    let xv = tape.leaf_from(vec![n, dim], x.to_vec(), true)?;
    let bound = model.bind_params(&mut tape, false);
    let logits = model.forward_graph(&mut tape, xv, &bound)?;
    let loss = losses::classification_loss(&mut tape, logits, labels)?;
    tape.backward(loss)?;
    Ok(tape
        .grad(xv)
        .expect("input leaf requires gradients")
        .to_vec())
}

/// Crafts adversarial examples for a batch on `model`.
///
/// Untargeted mode ascends the loss on the true labels; targeted mode
/// descends the loss on the chosen target labels. Every iterate is clipped
/// to the epsilon ball around the original input and to the data range.
pub fn craft_adversarial(
    model: &Network,
    x: &[f32],
    n: usize,
    labels: &[usize],
    params: &AttackParams,
    clip: &ClipRange,
) -> Result<Vec<f32>> {
    params.validate()?;
    if n == 0 {
        return Err(EvalError::EmptySet);
    }
    let dim = x.len() / n;
    if params.epsilon == 0.0 {
        return Ok(x.to_vec());
    }
    let eps = params.epsilon;
    let direction = if params.targeted { -1.0 } else { 1.0 };
    let (step, iterations) = match params.kind {
        AttackAlgo::Fgsm => (eps, 1),
        AttackAlgo::Bim | AttackAlgo::Pgd => (params.step_size, params.iterations),
    };

    let mut adv = x.to_vec();
    if params.kind == AttackAlgo::Pgd {
        let mut rng = rng::stream_rng(params.seed, stream::ADVERSARIAL);
        for (j, v) in adv.iter_mut().enumerate() {
            *v += rng.gen_range(-eps..=eps);
            *v = v.clamp(x[j] - eps, x[j] + eps);
            *v = clip.clamp(j % dim, *v);
        }
    }
    for _ in 0..iterations {
        let grad = input_gradient(model, &adv, n, labels)?;
        for (j, g) in grad.iter().enumerate() {
            let v = adv[j] + direction * step * sign(*g);
            let v = v.clamp(x[j] - eps, x[j] + eps);
            adv[j] = clip.clamp(j % dim, v);
        }
    }
    Ok(adv)
}

/// A measured attack-success cell with its exact denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsrResult {
    pub rate: f64,
    pub successes: usize,
    pub n_evaluated: usize,
}

fn eligible_indices(target: &Network, ds: &Dataset) -> Result<Vec<usize>> {
    let preds = target.predict_labels(ds.features(), ds.len())?;
    Ok((0..ds.len())
        .filter(|&i| preds[i] == ds.labels()[i])
        .collect())
}

fn gather(ds: &Dataset, indices: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let dim = ds.dim();
    let mut x = Vec::with_capacity(indices.len() * dim);
    let mut y = Vec::with_capacity(indices.len());
    for &i in indices {
        x.extend_from_slice(ds.row(i));
        y.push(ds.labels()[i]);
    }
    (x, y)
}

/// Transfer attack-success rate: craft on `substitute`, judge on `target`.
///
/// Untargeted: eligible inputs are those the target classifies correctly;
/// success means the target's prediction on the crafted input leaves the
/// true label. Targeted: same eligibility; a target label distinct from
/// the truth is drawn uniformly per sample (seeded); success means the
/// target predicts exactly that label.
pub fn attack_success_rate(
    substitute: &Network,
    target: &Network,
    ds: &Dataset,
    params: &AttackParams,
    clip: &ClipRange,
) -> Result<AsrResult> {
    params.validate()?;
    if ds.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let eligible = eligible_indices(target, ds)?;
    if eligible.is_empty() {
        return Err(EvalError::EmptyDenominator);
    }
    let (x, true_labels) = gather(ds, &eligible);
    let n = eligible.len();
    let k = ds.num_classes();

    let craft_labels = if params.targeted {
        let mut rng = rng::stream_rng(params.seed, stream::EVAL);
        true_labels
            .iter()
            .map(|&t| {
                let offset = rng.gen_range(1..k);
                (t + offset) % k
            })
            .collect::<Vec<usize>>()
    } else {
        true_labels.clone()
    };

    let adv = craft_adversarial(substitute, &x, n, &craft_labels, params, clip)?;
    let verdicts = target.predict_labels(&adv, n)?;
    let successes = verdicts
        .iter()
        .enumerate()
        .filter(|(i, &p)| {
            if params.targeted {
                p == craft_labels[*i]
            } else {
                p != true_labels[*i]
            }
        })
        .count();
    Ok(AsrResult {
        rate: successes as f64 / n as f64,
        successes,
        n_evaluated: n,
    })
}

/// Baseline for transfer sanity: per-coordinate random sign perturbation
/// of the same magnitude, judged with the untargeted rule.
pub fn random_noise_success_rate(
    target: &Network,
    ds: &Dataset,
    epsilon: f32,
    clip: &ClipRange,
    seed: u64,
) -> Result<AsrResult> {
    if ds.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let eligible = eligible_indices(target, ds)?;
    if eligible.is_empty() {
        return Err(EvalError::EmptyDenominator);
    }
    let (x, true_labels) = gather(ds, &eligible);
    let n = eligible.len();
    let dim = ds.dim();
    let mut rng = rng::stream_rng(seed, stream::EVAL);
    let noisy: Vec<f32> = x
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            clip.clamp(j % dim, v + epsilon * s)
        })
        .collect();
    let verdicts = target.predict_labels(&noisy, n)?;
    let successes = verdicts
        .iter()
        .zip(&true_labels)
        .filter(|(p, t)| p != t)
        .count();
    Ok(AsrResult {
        rate: successes as f64 / n as f64,
        successes,
        n_evaluated: n,
    })
}

/// One row of the serialized ASR table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsrCell {
    pub attack: String,
    pub targeted: bool,
    pub epsilon: f32,
    /// Null when no samples survived filtering.
    pub asr: Option<f64>,
    pub n_evaluated: usize,
}

/// Full metrics artifact; serialized as JSON with this exact shape.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<KappaResult>,
    pub asr_table: Vec<AsrCell>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DataLayout, Dataset};
    use crate::nets::{build_network, NetRole, NetworkSpec};
    use crate::optim::ParamSet;
    use crate::tensor::Tensor;

    fn toy_dataset() -> Dataset {
        // four points, two per class, linearly separable on x0
        Dataset::new(
            vec![-1.0, 0.3, -0.8, -0.4, 0.9, 0.1, 0.7, -0.2],
            vec![0, 0, 1, 1],
            DataLayout::Vector { dim: 2 },
            2,
        )
        .unwrap()
    }

    /// Builds a 2-class linear model with chosen weights: logits = x.W + b.
    fn linear_model(w: &[f32], b: &[f32], input_dim: usize) -> Network {
        let spec = NetworkSpec::classifier(NetRole::Target, input_dim, vec![], 2, 0);
        let mut net = build_network(&spec).unwrap();
        let mut params = ParamSet::new(0);
        params
            .push("w0", Tensor::new(vec![input_dim, 2], w.to_vec()).unwrap())
            .unwrap();
        params
            .push("b0", Tensor::new(vec![2], b.to_vec()).unwrap())
            .unwrap();
        net.set_params(params).unwrap();
        net
    }

    fn x0_classifier() -> Network {
        // predicts class 1 iff x0 > 0
        linear_model(&[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0], 2)
    }

    #[test]
    fn accuracy_arithmetic() {
        let ds = toy_dataset();
        let net = x0_classifier();
        assert_eq!(accuracy(&net, &ds).unwrap(), 1.0);
        // a constant-class model scores exactly the class share
        let constant = linear_model(&[0.0, 0.0, 0.0, 0.0], &[1.0, 0.0], 2);
        assert_eq!(accuracy(&constant, &ds).unwrap(), 0.5);
    }

    #[test]
    fn consistency_self_is_one() {
        let net = x0_classifier();
        let probes = vec![0.5, 0.1, -0.3, 0.9, 0.0, 0.0];
        assert_eq!(consistency_rate(&net, &net, &probes, 3).unwrap(), 1.0);
    }

    #[test]
    fn consistency_always_disagreeing_is_zero() {
        let a = x0_classifier();
        // same boundary, labels swapped
        let b = linear_model(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0], 2);
        // off-boundary probes (x0 != 0) always disagree
        let probes = vec![0.5, 0.0, -0.5, 0.0, 2.0, 1.0, -2.0, -1.0];
        assert_eq!(consistency_rate(&a, &b, &probes, 4).unwrap(), 0.0);
    }

    #[test]
    fn kappa_hand_example() {
        let r = cohens_kappa(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(r.p_o, 0.75);
        assert_eq!(r.p_e, 0.5);
        assert_eq!(r.kappa, 0.5);
    }

    #[test]
    fn kappa_identical_predictions() {
        let r = cohens_kappa(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(r.kappa, 1.0);
        assert_eq!(r.p_o, 1.0);
    }

    #[test]
    fn kappa_degenerate_constant_pair() {
        let r = cohens_kappa(&[1, 1, 1], &[1, 1, 1], 2).unwrap();
        assert_eq!(r.kappa, 1.0);
        assert_eq!(r.p_e, 1.0);
    }

    #[test]
    fn kappa_independent_uniform_near_zero() {
        let mut rng = rng::stream_rng(99, stream::EVAL);
        let n = 10_000;
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let r = cohens_kappa(&a, &b, 2).unwrap();
        assert!(r.kappa.abs() < 0.05, "kappa {}", r.kappa);
    }

    #[test]
    fn kappa_invariant_under_joint_relabeling() {
        let a = [0usize, 0, 1, 2, 1, 0];
        let b = [0usize, 1, 1, 2, 2, 0];
        let r1 = cohens_kappa(&a, &b, 3).unwrap();
        // permutation 0->2, 1->0, 2->1 applied to both
        let p = |l: usize| (l + 2) % 3;
        let ap: Vec<usize> = a.iter().map(|&l| p(l)).collect();
        let bp: Vec<usize> = b.iter().map(|&l| p(l)).collect();
        let r2 = cohens_kappa(&ap, &bp, 3).unwrap();
        assert!((r1.kappa - r2.kappa).abs() < 1e-12);
    }

    #[test]
    fn fgsm_analytic_logistic_example() {
        // logits [0, 2x]; true label 0 at x=0; the loss gradient in x is
        // positive, so the untargeted step moves to exactly +epsilon
        let net = linear_model(&[0.0, 2.0], &[0.0, 0.0], 1);
        let params = AttackParams::new(AttackAlgo::Fgsm, 0.1, 0.01, 0);
        let clip = ClipRange::Box {
            lo: vec![-10.0],
            hi: vec![10.0],
        };
        let adv = craft_adversarial(&net, &[0.0], 1, &[0], &params, &clip).unwrap();
        assert!((adv[0] - 0.1).abs() < 1e-7, "{}", adv[0]);
    }

    #[test]
    fn epsilon_zero_is_identity_for_all_attacks() {
        let net = x0_classifier();
        let x = vec![0.4f32, -0.2, 0.1, 0.9];
        let clip = ClipRange::Unit;
        for kind in [AttackAlgo::Fgsm, AttackAlgo::Bim, AttackAlgo::Pgd] {
            let params = AttackParams::new(kind, 0.0, 0.01, 3);
            let adv = craft_adversarial(&net, &x, 2, &[0, 1], &params, &clip).unwrap();
            assert_eq!(adv, x);
        }
    }

    #[test]
    fn ball_constraint_holds_for_all_attacks() {
        let net = x0_classifier();
        let mut rng = rng::stream_rng(5, stream::EVAL);
        let x: Vec<f32> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let clip = ClipRange::Unit;
        for kind in [AttackAlgo::Fgsm, AttackAlgo::Bim, AttackAlgo::Pgd] {
            for eps in [0.05f32, 0.2, 0.3] {
                let params = AttackParams::new(kind, eps, 0.01, 11);
                let adv = craft_adversarial(&net, &x, 20, &labels, &params, &clip).unwrap();
                for (a, o) in adv.iter().zip(&x) {
                    assert!(
                        (a - o).abs() <= eps + 1e-6,
                        "{kind:?} eps {eps}: |{a} - {o}|"
                    );
                    assert!((0.0..=1.0).contains(a));
                }
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(AttackParams::new(AttackAlgo::Fgsm, 0.1, 0.01, 0)
            .validate()
            .is_ok());
        // step above epsilon rejected when the ball is non-degenerate
        assert!(AttackParams::new(AttackAlgo::Bim, 0.1, 0.2, 0)
            .validate()
            .is_err());
        // degenerate ball accepts any positive step
        assert!(AttackParams::new(AttackAlgo::Bim, 0.0, 0.01, 0)
            .validate()
            .is_ok());
        assert!(AttackParams::new(AttackAlgo::Bim, 0.1, -0.01, 0)
            .validate()
            .is_err());
    }

    #[test]
    fn asr_perfect_surrogate_matches_white_box() {
        let ds = toy_dataset();
        let net = x0_classifier();
        let (lo, hi) = ds.bounding_box();
        let clip = ClipRange::Box { lo, hi };
        let params = AttackParams::new(AttackAlgo::Fgsm, 0.3, 0.01, 7);
        let transfer = attack_success_rate(&net, &net, &ds, &params, &clip).unwrap();
        let white_box = attack_success_rate(&net, &net, &ds, &params, &clip).unwrap();
        assert_eq!(transfer, white_box);
    }

    #[test]
    fn asr_epsilon_zero_is_zero() {
        let ds = toy_dataset();
        let net = x0_classifier();
        let params = AttackParams::new(AttackAlgo::Pgd, 0.0, 0.01, 7);
        let r = attack_success_rate(&net, &net, &ds, &params, &ClipRange::Unit).unwrap();
        assert_eq!(r.rate, 0.0);
        assert_eq!(r.n_evaluated, 4);
    }

    #[test]
    fn asr_empty_denominator_is_explicit() {
        let ds = toy_dataset();
        // constant model classifies half the set right; flip labels so the
        // target gets everything wrong
        let wrong = Dataset::new(
            ds.features().to_vec(),
            ds.labels().iter().map(|&l| 1 - l).collect(),
            ds.layout(),
            2,
        )
        .unwrap();
        let net = x0_classifier();
        let params = AttackParams::new(AttackAlgo::Fgsm, 0.1, 0.01, 0);
        let err = attack_success_rate(&net, &net, &wrong, &params, &ClipRange::Unit).unwrap_err();
        assert!(matches!(err, EvalError::EmptyDenominator));
    }

    #[test]
    fn targeted_labels_differ_from_truth_and_success_counts_exact_hits() {
        // all four points sit within 0.4 of the x0 = 0 boundary, so an
        // epsilon of 0.5 always suffices to cross it in either direction
        let ds = Dataset::new(
            vec![-0.3, 0.3, -0.4, -0.4, 0.3, 0.1, 0.4, -0.2],
            vec![0, 0, 1, 1],
            DataLayout::Vector { dim: 2 },
            2,
        )
        .unwrap();
        let net = x0_classifier();
        let (lo, hi) = ds.bounding_box();
        let clip = ClipRange::Box { lo, hi };
        let params = AttackParams::new(AttackAlgo::Bim, 0.5, 0.1, 3).targeted();
        // binary task: the drawn target label is exactly the other class,
        // and the linear model's gradient walks straight across
        let r = attack_success_rate(&net, &net, &ds, &params, &clip).unwrap();
        assert_eq!(r.n_evaluated, 4);
        assert_eq!(r.rate, 1.0, "every targeted attack should land");
    }

    #[test]
    fn noise_baseline_reports_denominator() {
        let ds = toy_dataset();
        let net = x0_classifier();
        let r = random_noise_success_rate(&net, &ds, 0.1, &ClipRange::Unit, 5).unwrap();
        assert_eq!(r.n_evaluated, 4);
        assert!((0.0..=1.0).contains(&r.rate));
    }

    #[test]
    fn metrics_report_serializes_stably() {
        let report = MetricsReport {
            accuracy: Some(0.9),
            consistency: Some(0.95),
            kappa: Some(KappaResult {
                kappa: 0.5,
                p_o: 0.75,
                p_e: 0.5,
            }),
            asr_table: vec![AsrCell {
                attack: "fgsm".into(),
                targeted: false,
                epsilon: 0.1,
                asr: Some(0.25),
                n_evaluated: 100,
            }],
        };
        let a = serde_json::to_string_pretty(&report).unwrap();
        let b = serde_json::to_string_pretty(&report).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"p_o\": 0.75"));
    }
}
