//! Parameter sets and first-order optimizers.
//!
//! A [`ParamSet`] is an ordered, uniquely named list of tensors; order is
//! part of the contract because checkpoint layout and optimizer slot state
//! are keyed by it. [`OptimizerState`] carries per-parameter slot buffers
//! (momentum, Adam moments) across steps.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
    #[error("no parameter named {0:?}")]
    UnknownParam(String),
    #[error("parameter {0:?} has no gradient")]
    MissingGrad(String),
    #[error("gradient for {0:?} is non-finite")]
    NonFiniteGrad(String),
    #[error("hyperparameter {name} = {value} is out of range")]
    BadHyper { name: &'static str, value: f32 },
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// Ordered named parameters plus the seed used to initialize them.
#[derive(Debug, Clone)]
pub struct ParamSet {
    params: Vec<(String, Tensor)>,
    rng_seed: u64,
}

impl ParamSet {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            params: Vec::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(OptimError::DuplicateName(name));
        }
        self.params.push((name, tensor.with_grad()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn clear_grads(&mut self) {
        for (_, t) in &mut self.params {
            t.clear_grad();
        }
    }

    /// Gaussian init with the given standard deviation.
    pub fn init_normal(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f32,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| {
                // Box-Muller keeps us off rand_distr in the hot init path
                // and pins the exact byte stream consumed per value.
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                (z as f32) * std
            })
            .collect();
        self.push(name, Tensor::new(shape, data).expect("shape/data agree"))
    }

    pub fn init_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<()> {
        self.push(name, Tensor::zeros(shape))
    }
}

/// Optimizer kind and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// SGD with classical momentum: `v = m*v + g; p -= lr*v`.
    SgdMomentum { lr: f32, momentum: f32 },
    /// Adam with bias correction.
    Adam {
        lr: f32,
        beta1: f32,
        beta2: f32,
        eps: f32,
    },
}

impl OptimizerKind {
    pub fn sgd(lr: f32, momentum: f32) -> Self {
        Self::SgdMomentum { lr, momentum }
    }

    pub fn adam(lr: f32) -> Self {
        Self::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::SgdMomentum { lr, momentum } => {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(OptimError::BadHyper {
                        name: "lr",
                        value: lr,
                    });
                }
                if !(0.0..1.0).contains(&momentum) {
                    return Err(OptimError::BadHyper {
                        name: "momentum",
                        value: momentum,
                    });
                }
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(OptimError::BadHyper {
                        name: "lr",
                        value: lr,
                    });
                }
                if !(0.0..1.0).contains(&beta1) {
                    return Err(OptimError::BadHyper {
                        name: "beta1",
                        value: beta1,
                    });
                }
                if !(0.0..1.0).contains(&beta2) {
                    return Err(OptimError::BadHyper {
                        name: "beta2",
                        value: beta2,
                    });
                }
                if !(eps > 0.0) {
                    return Err(OptimError::BadHyper {
                        name: "eps",
                        value: eps,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct Slots {
    /// SGD momentum buffer, or Adam first moment.
    m: Vec<f32>,
    /// Adam second moment.
    v: Vec<f32>,
}

/// Persistent optimizer state: slot buffers keyed by parameter name plus a
/// global step count.
#[derive(Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    slots: HashMap<String, Slots>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            kind,
            slots: HashMap::new(),
            step_count: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update from the gradients stored on `params`, then clears
    /// them. Every parameter must carry a finite gradient.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for (name, t) in &params.params {
            let grad = t
                .grad()
                .ok_or_else(|| OptimError::MissingGrad(name.clone()))?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(OptimError::NonFiniteGrad(name.clone()));
            }
        }
        self.step_count += 1;
        let t_step = self.step_count;
        for (name, tensor) in &mut params.params {
            let grad = tensor.grad().expect("checked above").to_vec();
            let slots = self.slots.entry(name.clone()).or_insert_with(|| Slots {
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
            });
            match self.kind {
                OptimizerKind::SgdMomentum { lr, momentum } => {
                    for (i, g) in grad.iter().enumerate() {
                        slots.m[i] = momentum * slots.m[i] + g;
                    }
                    let m = &slots.m;
                    tensor.apply_update(|i, p| *p -= lr * m[i]);
                }
                OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let bc1 = 1.0 - beta1.powi(t_step as i32);
                    let bc2 = 1.0 - beta2.powi(t_step as i32);
                    for (i, g) in grad.iter().enumerate() {
                        slots.m[i] = beta1 * slots.m[i] + (1.0 - beta1) * g;
                        slots.v[i] = beta2 * slots.v[i] + (1.0 - beta2) * g * g;
                    }
                    let (m, v) = (&slots.m, &slots.v);
                    tensor.apply_update(|i, p| {
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        *p -= lr * mhat / (vhat.sqrt() + eps);
                    });
                }
            }
            tensor.clear_grad();
        }
        Ok(())
    }
}
