//! QEDG: a desk-scale laboratory for query-efficient, data-free model
//! stealing against hard-label oracles.
//!
//! The attack trains a conditional generator to synthesize inputs near the
//! substitute's decision boundary (where hard-label answers carry the most
//! information), spends its query budget labeling those inputs through an
//! oracle that returns top-1 classes only, and trains a substitute on the
//! growing memory bank with disputed-sample weighting plus query-free
//! augmentation. Everything — data synthesis, training, evaluation,
//! serving — is deterministic given a master seed.
//!
//! Module map:
//! - [`tensor`]: minimal reverse-mode autodiff on f32 tensors.
//! - [`optim`]: named parameter sets, SGD with momentum, Adam.
//! - [`rng`]: named deterministic seed streams.
//! - [`nets`]: MLP classifiers and the conditional generator.
//! - [`losses`]: classification, harmony (boundary-seeking), diversity,
//!   and disputed-weighted substitute objectives.
//! - [`data`]: synthetic planar datasets, ring images, IDX files.
//! - [`augment`]: label-preserving transforms for query-free supervision.
//! - [`oracle`]: hard-label oracles (local, noisy, remote) and the query
//!   ledger.
//! - [`extraction`]: the attack loop and its trace.
//! - [`eval`]: accuracy, consistency, Cohen's kappa, transfer attacks.
//! - [`theory`]: query-complexity bound calculators and the empirical
//!   validation harness.
//! - [`wire`] / [`client`] / [`serve`]: the HTTP predict protocol, its
//!   client, and the serving endpoint.
//! - [`checkpoint`] / [`config`] / [`report`]: artifacts and run plumbing.

pub mod augment;
pub mod checkpoint;
pub mod client;
pub mod config;
pub mod data;
pub mod eval;
pub mod extraction;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod serve;
pub mod tensor;
pub mod theory;
pub mod wire;
