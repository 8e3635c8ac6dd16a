//! The extraction attack driver.
//!
//! One outer epoch per oracle batch: synthesize a boundary-seeking batch
//! with E generator steps against the frozen substitute, spend one query
//! batch labeling it, append to the memory bank, then replay the bank
//! through the substitute with disputed-sample weighting and query-free
//! augmentation of agreeing samples. The loop runs until the remaining
//! budget cannot fund another full batch.
//!
//! Everything downstream of the seeds is deterministic: identical config
//! plus seeds yields an identical [`AttackTrace`].

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::augment::{augment, AugmentError, AugmentKind};
use crate::data::DataLayout;
use crate::losses::{
    self, GeneratorLossOpts, LossError, LossWeights, PairingMode,
};
use crate::nets::{
    build_network, sample_pseudo_labels, GeneratorInput, NetError, Network, NetworkSpec,
};
use crate::optim::{OptimError, OptimizerKind, OptimizerState};
use crate::oracle::{predict_hard, OracleError, OracleKind, QueryLedger};
use crate::rng::{self, stream};
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("invalid extraction config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

pub type Result<T> = std::result::Result<T, ExtractionError>;

/// One labeled synthetic sample; immutable once banked.
#[derive(Debug, Clone)]
pub struct MemoryBankEntry {
    pub feature: Vec<f32>,
    pub label: usize,
    pub epoch_added: u64,
}

/// Attack hyperparameters and toggles.
#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    pub weights: LossWeights,
    /// Inner generator steps per outer epoch (E).
    pub generator_steps: usize,
    pub batch_size: usize,
    pub query_budget: u64,
    pub layout: DataLayout,
    pub augmentations: Vec<AugmentKind>,
    pub enable_qa: bool,
    pub enable_harmony: bool,
    pub enable_diversity: bool,
    pub pairing: PairingMode,
    pub generator_opt: OptimizerKind,
    pub substitute_opt: OptimizerKind,
    /// Replay-set size cap; disputed entries are always replayed.
    pub replay_cap: usize,
    /// Global-norm gradient clip for every substitute update, applied
    /// identically in full and baseline modes. The disputed weight
    /// multiplies boundary-sample gradients; without a cap those batches
    /// can overshoot and lock the substitute into a limit cycle.
    pub substitute_grad_clip: Option<f32>,
    /// Seed for the attack stream (pseudo-labels, noise, shuffles,
    /// augmentation draws).
    pub seed: u64,
}

impl ExtractionConfig {
    pub fn new(layout: DataLayout, query_budget: u64, seed: u64) -> Self {
        let augmentations = match layout {
            DataLayout::Vector { .. } => vec![AugmentKind::Jitter { sigma: 0.04 }],
            DataLayout::Image { .. } => vec![
                AugmentKind::Hflip,
                AugmentKind::Vflip,
                AugmentKind::Rotate { max_degrees: 15.0 },
            ],
        };
        Self {
            weights: LossWeights::default(),
            generator_steps: 5,
            batch_size: 64,
            query_budget,
            layout,
            augmentations,
            enable_qa: true,
            enable_harmony: true,
            enable_diversity: true,
            pairing: PairingMode::SameClass,
            generator_opt: OptimizerKind::adam(0.001),
            substitute_opt: OptimizerKind::sgd(0.01, 0.9),
            replay_cap: 8192,
            substitute_grad_clip: Some(1.0),
            seed,
        }
    }

    /// The query-free baseline from prior work: plain cross-entropy
    /// synthesis and unweighted, unaugmented substitute updates.
    pub fn ce_only_baseline(mut self) -> Self {
        self.enable_qa = false;
        self.enable_harmony = false;
        self.enable_diversity = false;
        self.weights.gamma = 1.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.generator_steps < 1 {
            return Err(ExtractionError::InvalidConfig(
                "generator_steps must be >= 1".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(ExtractionError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.replay_cap < 1 {
            return Err(ExtractionError::InvalidConfig("replay_cap must be >= 1".into()));
        }
        if let Some(c) = self.substitute_grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(ExtractionError::InvalidConfig(format!(
                    "substitute_grad_clip must be positive and finite, got {c}"
                )));
            }
        }
        self.weights.validate()?;
        if self.enable_qa {
            if self.augmentations.is_empty() {
                return Err(ExtractionError::InvalidConfig(
                    "query-free augmentation enabled with an empty augmentation set".into(),
                ));
            }
            for op in &self.augmentations {
                op.validate(self.layout)?;
            }
        }
        Ok(())
    }
}

/// Loss components of the last generator step in an epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct GeneratorStepStats {
    pub l_clf: f32,
    pub l_harmony: f32,
    pub l_diversity: f32,
    pub l_total: f32,
}

/// One row of the attack trace.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TraceRecord {
    pub epoch: u64,
    pub q: u64,
    pub l_clf: f32,
    pub l_harmony: f32,
    pub l_diversity: f32,
    pub l_generator: f32,
    pub l_substitute: f32,
    pub disputed_fraction: f32,
    pub probe_consistency: Option<f32>,
}

/// Per-epoch attack telemetry; `q` is strictly increasing across records.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttackTrace {
    pub records: Vec<TraceRecord>,
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunOutcome {
    /// The remaining budget cannot fund another full batch.
    Completed,
    /// The oracle refused a batch mid-run (server-side guard or shared
    /// ledger); partial artifacts are still valid.
    BudgetTripped { at_epoch: u64 },
    /// The generator objective went non-finite.
    Aborted { at_epoch: u64, detail: String },
}

/// Everything a finished (or interrupted) attack produces.
pub struct ExtractionRun {
    pub substitute: Network,
    pub generator: Network,
    pub trace: AttackTrace,
    pub bank: Vec<MemoryBankEntry>,
    pub outcome: RunOutcome,
    pub queries_used: u64,
}

/// Fixed probe inputs with precomputed target labels, used for
/// consistency snapshots without spending queries.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub features: Vec<f32>,
    pub n: usize,
    pub target_labels: Vec<usize>,
}

impl ProbeSet {
    /// Labels the probe features with a locally available target network.
    pub fn from_target(features: Vec<f32>, n: usize, target: &Network) -> Result<Self> {
        let target_labels = target.predict_labels(&features, n)?;
        Ok(Self {
            features,
            n,
            target_labels,
        })
    }

    pub fn consistency(&self, substitute: &Network) -> Result<f32> {
        let preds = substitute.predict_labels(&self.features, self.n)?;
        let agree = preds
            .iter()
            .zip(&self.target_labels)
            .filter(|(a, b)| a == b)
            .count();
        Ok(agree as f32 / self.n as f32)
    }
}

/// Runs exactly E generator optimizer steps against the combined objective
/// with the substitute frozen, then emits the updated generator's batch.
/// Consumes zero oracle queries by construction.
pub fn synthesize_batch(
    generator: &mut Network,
    gen_opt: &mut OptimizerState,
    substitute: &Network,
    input: &GeneratorInput,
    config: &ExtractionConfig,
) -> Result<(Vec<f32>, GeneratorStepStats)> {
    let n = input.len();
    let opts = GeneratorLossOpts {
        enable_harmony: config.enable_harmony,
        enable_diversity: config.enable_diversity,
        pairing: config.pairing,
    };
    let mut stats = GeneratorStepStats::default();
    for _ in 0..config.generator_steps {
        let mut tape = Tape::new();
        let x_in = tape.leaf_from(vec![n, input.width()], input.matrix(), false)?;
        let gen_vars = generator.bind_params(&mut tape, true);
        let features = generator.forward_graph(&mut tape, x_in, &gen_vars)?;
        let sub_vars = substitute.bind_params(&mut tape, false);
        let logits = substitute.forward_graph(&mut tape, features, &sub_vars)?;
        let probs = tape.softmax_rows(logits)?;
        let parts = losses::generator_loss(
            &mut tape,
            logits,
            probs,
            features,
            input.labels(),
            &config.weights,
            &opts,
        )?;
        stats = GeneratorStepStats {
            l_clf: parts.clf_value,
            l_harmony: parts.harmony_value,
            l_diversity: parts.diversity_value,
            l_total: parts.total_value(&tape),
        };
        tape.backward(parts.total)?;
        generator.write_back_grads(&tape, &gen_vars)?;
        gen_opt.step(generator.params_mut())?;
    }
    let features = generator.forward_eager(&input.matrix(), n)?;
    Ok((features, stats))
}

/// Labels a synthetic batch through the oracle and appends the results to
/// the bank. All-or-nothing: a refused batch leaves the bank untouched.
pub fn query_and_bank(
    oracle: &OracleKind,
    ledger: &QueryLedger,
    features: &[f32],
    n: usize,
    epoch: u64,
    bank: &mut Vec<MemoryBankEntry>,
) -> Result<()> {
    let labels = predict_hard(oracle, ledger, features, n)?;
    let dim = features.len() / n;
    bank.extend((0..n).map(|i| MemoryBankEntry {
        feature: features[i * dim..(i + 1) * dim].to_vec(),
        label: labels[i],
        epoch_added: epoch,
    }));
    Ok(())
}

/// Replay indices for one epoch: the whole bank when it fits the cap,
/// otherwise every disputed entry plus a uniform sample of the rest.
fn replay_indices(
    disputed: &[bool],
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = disputed.len();
    if n <= cap {
        return (0..n).collect();
    }
    let mut picked: Vec<usize> = (0..n).filter(|&i| disputed[i]).collect();
    let mut rest: Vec<usize> = (0..n).filter(|&i| !disputed[i]).collect();
    let room = cap.saturating_sub(picked.len());
    if room > 0 && !rest.is_empty() {
        rest.shuffle(rng);
        rest.truncate(room);
        picked.extend(rest);
    }
    picked
}

/// Scales every gradient in `params` down so their joint Euclidean norm
/// does not exceed `max_norm`.
fn clip_global_grad_norm(params: &mut crate::optim::ParamSet, max_norm: f32) {
    let mut sq = 0.0f64;
    for (_, t) in params.iter() {
        if let Some(g) = t.grad() {
            sq += g.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        }
    }
    let norm = sq.sqrt() as f32;
    if norm > max_norm {
        let factor = max_norm / norm;
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let t = params.get_mut(&name).expect("name from iteration");
            if let Some(g) = t.grad() {
                let scaled: Vec<f32> = g.iter().map(|&v| v * factor).collect();
                t.set_grad(scaled).expect("same shape");
            }
        }
    }
}

/// One full substitute pass over the (capped) bank.
///
/// The disputed mask is fixed against the incoming parameters before any
/// update. Agreeing entries train on an augmented variant (stored label
/// reused, variant never banked); disputed entries train raw with weight
/// gamma. Returns the mean minibatch loss and the bank-wide disputed
/// fraction at epoch start. Zero oracle queries.
pub fn substitute_epoch(
    bank: &[MemoryBankEntry],
    substitute: &mut Network,
    sub_opt: &mut OptimizerState,
    config: &ExtractionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f32, f32)> {
    debug_assert!(!bank.is_empty());
    let dim = config.layout.dim();

    // Disputed mask over the whole bank against the pre-epoch substitute.
    let mut all_features = Vec::with_capacity(bank.len() * dim);
    for entry in bank {
        all_features.extend_from_slice(&entry.feature);
    }
    let preds = substitute.predict_labels(&all_features, bank.len())?;
    let disputed: Vec<bool> = preds
        .iter()
        .zip(bank)
        .map(|(p, e)| *p != e.label)
        .collect();
    let disputed_fraction =
        disputed.iter().filter(|&&d| d).count() as f32 / bank.len() as f32;

    let mut order = replay_indices(&disputed, config.replay_cap, rng);
    order.shuffle(rng);

    let mut loss_sum = 0.0f64;
    let mut batches = 0u32;
    for chunk in order.chunks(config.batch_size) {
        let n = chunk.len();
        let mut xb = Vec::with_capacity(n * dim);
        let mut yb = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for &i in chunk {
            let entry = &bank[i];
            if !disputed[i] && config.enable_qa {
                let op = *config
                    .augmentations
                    .choose(rng)
                    .expect("validated non-empty augmentation set");
                xb.extend_from_slice(&augment(&entry.feature, config.layout, op, rng)?);
            } else {
                xb.extend_from_slice(&entry.feature);
            }
            yb.push(entry.label);
            mask.push(disputed[i]);
        }
        let mut tape = Tape::new();
        let x = tape.leaf_from(vec![n, dim], xb, false)?;
        let bound = substitute.bind_params(&mut tape, true);
        let logits = substitute.forward_graph(&mut tape, x, &bound)?;
        let loss = losses::substitute_loss(&mut tape, logits, &yb, &mask, config.weights.gamma)?;
        loss_sum += tape.item(loss) as f64;
        batches += 1;
        tape.backward(loss)?;
        substitute.write_back_grads(&tape, &bound)?;
        if let Some(c) = config.substitute_grad_clip {
            clip_global_grad_norm(substitute.params_mut(), c);
        }
        sub_opt.step(substitute.params_mut())?;
    }
    let mean_loss = if batches == 0 {
        0.0
    } else {
        (loss_sum / batches as f64) as f32
    };
    Ok((mean_loss, disputed_fraction))
}

/// Runs the full attack loop against an oracle until the budget is spent.
///
/// `generator_spec`/`substitute_spec` are built fresh; `probe` supplies
/// query-free consistency snapshots for the trace.
pub fn run_extraction(
    oracle: &OracleKind,
    config: &ExtractionConfig,
    generator_spec: &NetworkSpec,
    substitute_spec: &NetworkSpec,
    probe: Option<&ProbeSet>,
) -> Result<ExtractionRun> {
    config.validate()?;
    let num_classes = substitute_spec.num_classes;
    let latent_dim = generator_spec.latent_dim.ok_or_else(|| {
        ExtractionError::InvalidConfig("generator spec lacks latent_dim".into())
    })?;
    if generator_spec.input_dim != substitute_spec.input_dim {
        return Err(ExtractionError::InvalidConfig(format!(
            "generator produces dim {}, substitute consumes dim {}",
            generator_spec.input_dim, substitute_spec.input_dim
        )));
    }
    if config.layout.dim() != substitute_spec.input_dim {
        return Err(ExtractionError::InvalidConfig(format!(
            "layout dim {} vs substitute input dim {}",
            config.layout.dim(),
            substitute_spec.input_dim
        )));
    }

    let mut generator = build_network(generator_spec)?;
    let mut substitute = build_network(substitute_spec)?;
    let mut gen_opt = OptimizerState::new(config.generator_opt)?;
    let mut sub_opt = OptimizerState::new(config.substitute_opt)?;
    let ledger = QueryLedger::new(config.query_budget);
    let mut attack_rng = rng::stream_rng(config.seed, stream::ATTACK);
    let mut bank: Vec<MemoryBankEntry> = Vec::new();
    let mut trace = AttackTrace::default();
    let mut outcome = RunOutcome::Completed;
    let batch = config.batch_size;

    let mut epoch: u64 = 0;
    while ledger.remaining() >= batch as u64 {
        let labels = sample_pseudo_labels(batch, num_classes, &mut attack_rng);
        let input = GeneratorInput::sample(labels, latent_dim, num_classes, &mut attack_rng)?;

        let (features, gen_stats) =
            match synthesize_batch(&mut generator, &mut gen_opt, &substitute, &input, config) {
                Ok(v) => v,
                Err(
                    e @ (ExtractionError::Tensor(TensorError::NonFinite { .. })
                    | ExtractionError::Net(NetError::Tensor(TensorError::NonFinite { .. }))
                    | ExtractionError::Optim(OptimError::NonFiniteGrad(_))),
                ) => {
                    outcome = RunOutcome::Aborted {
                        at_epoch: epoch,
                        detail: format!("generator objective non-finite: {e}"),
                    };
                    break;
                }
                Err(e) => return Err(e),
            };

        match query_and_bank(oracle, &ledger, &features, batch, epoch, &mut bank) {
            Ok(()) => {}
            Err(ExtractionError::Oracle(OracleError::BudgetExceeded { .. })) => {
                outcome = RunOutcome::BudgetTripped { at_epoch: epoch };
                break;
            }
            Err(e) => return Err(e),
        }

        let (l_substitute, disputed_fraction) =
            substitute_epoch(&bank, &mut substitute, &mut sub_opt, config, &mut attack_rng)?;

        let probe_consistency = match probe {
            Some(p) => Some(p.consistency(&substitute)?),
            None => None,
        };
        ledger.record_epoch(epoch);
        trace.records.push(TraceRecord {
            epoch,
            q: ledger.count(),
            l_clf: gen_stats.l_clf,
            l_harmony: gen_stats.l_harmony,
            l_diversity: gen_stats.l_diversity,
            l_generator: gen_stats.l_total,
            l_substitute,
            disputed_fraction,
            probe_consistency,
        });
        log::info!(
            "epoch {epoch}: q={} L_G={:.4} L_S={:.4} disputed={:.3}{}",
            ledger.count(),
            gen_stats.l_total,
            l_substitute,
            disputed_fraction,
            probe_consistency
                .map(|c| format!(" consistency={c:.3}"))
                .unwrap_or_default()
        );
        epoch += 1;
    }

    Ok(ExtractionRun {
        substitute,
        generator,
        trace,
        bank,
        outcome,
        queries_used: ledger.count(),
    })
}
