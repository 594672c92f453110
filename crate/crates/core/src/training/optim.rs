//! First-order optimizers over a flat parameter vector.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    /// Plain SGD with heavy-ball momentum.
    Sgd,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Moment buffers. `second` stays empty for SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub step: u64,
    pub first: Vec<T>,
    pub second: Vec<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        OptimizerState {
            kind,
            step: 0,
            first: vec![T::zero(); n],
            second: match kind {
                OptimizerKind::Adam => vec![T::zero(); n],
                OptimizerKind::Sgd => Vec::new(),
            },
        }
    }

    pub fn cast<U: Scalar>(&self) -> OptimizerState<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect();
        OptimizerState {
            kind: self.kind,
            step: self.step,
            first: c(&self.first),
            second: c(&self.second),
        }
    }

    /// Updates `params[trainable]` in place. Entries outside `trainable` are
    /// never written.
    pub fn step(
        &mut self,
        params: &mut [T],
        grad: &[T],
        trainable: Range<usize>,
        learning_rate: T,
        momentum: T,
    ) -> Result<()> {
        if grad.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::LengthMismatch {
                expected: params.len(),
                found: if grad.len() != params.len() { grad.len() } else { self.first.len() },
            });
        }
        if trainable.end > params.len() {
            return Err(Error::param("trainable range exceeds parameter count"));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for i in trainable {
                    self.first[i] = momentum * self.first[i] + grad[i];
                    params[i] = params[i] - learning_rate * self.first[i];
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
                let t = self.step as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let eps = T::lit(ADAM_EPS);
                for i in trainable {
                    self.first[i] = b1 * self.first[i] + (T::one() - b1) * grad[i];
                    self.second[i] = b2 * self.second[i] + (T::one() - b2) * grad[i] * grad[i];
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    params[i] = params[i] - learning_rate * m / (v.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
