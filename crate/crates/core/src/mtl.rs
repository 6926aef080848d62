//! Combination of the explanation loss `L_S` and rating loss `L_R`.
//!
//! * fixed:    `λ_R·L_R + λ_S·L_S`
//! * kendall:  `Σ_t L_t/(2λ_t²) + ln|λ_t|`
//! * positive: `Σ_t L_t/(2λ_t²) + ln(1 + λ_t²)`, non-negative whenever both
//!   task losses are.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};

/// Smallest magnitude λ is allowed to reach after an optimizer step.
pub const LAMBDA_MIN_ABS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossForm {
    Fixed,
    Kendall,
    #[default]
    Positive,
}

impl FromStr for LossForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "kendall" => Ok(Self::Kendall),
            "positive" => Ok(Self::Positive),
            other => Err(Error::Config(format!("unknown loss form {other:?} (fixed|kendall|positive)"))),
        }
    }
}

impl fmt::Display for LossForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Kendall => "kendall",
            Self::Positive => "positive",
        })
    }
}

/// Trainable task weights `λ_S` (explanation) and `λ_R` (rating).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskWeights<T> {
    pub sequence: T,
    pub rating: T,
}

impl<T: Scalar> Default for TaskWeights<T> {
    fn default() -> Self {
        Self {
            sequence: T::one(),
            rating: T::one(),
        }
    }
}

impl<T: Scalar> TaskWeights<T> {
    pub fn zero() -> Self {
        Self {
            sequence: T::zero(),
            rating: T::zero(),
        }
    }

    /// Pushes each weight away from zero to at least [`LAMBDA_MIN_ABS`].
    pub fn clip(&mut self) {
        let min = c::<T>(LAMBDA_MIN_ABS);
        for w in [&mut self.sequence, &mut self.rating] {
            if w.abs() < min {
                *w = if *w < T::zero() { -min } else { min };
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> TaskWeights<U> {
        TaskWeights {
            sequence: U::from_f64(self.sequence.as_f64()),
            rating: U::from_f64(self.rating.as_f64()),
        }
    }
}

pub fn joint_loss_fixed<T: Scalar>(l_s: T, l_r: T, lambda_s: T, lambda_r: T) -> T {
    lambda_r * l_r + lambda_s * l_s
}

fn nonzero<T: Scalar>(lambda: T) -> Result<T> {
    if lambda == T::zero() || !lambda.is_finite() {
        return Err(Error::Domain("task weight must be finite and nonzero"));
    }
    Ok(lambda)
}

pub fn joint_loss_kendall<T: Scalar>(l_s: T, l_r: T, lambda_s: T, lambda_r: T) -> Result<T> {
    let term = |l: T, lam: T| -> Result<T> {
        let lam = nonzero(lam)?;
        Ok(l / (c::<T>(2.0) * lam * lam) + lam.abs().ln())
    };
    Ok(term(l_s, lambda_s)? + term(l_r, lambda_r)?)
}

pub fn joint_loss_positive<T: Scalar>(l_s: T, l_r: T, lambda_s: T, lambda_r: T) -> Result<T> {
    let term = |l: T, lam: T| -> Result<T> {
        let lam = nonzero(lam)?;
        Ok(l / (c::<T>(2.0) * lam * lam) + (T::one() + lam * lam).ln())
    };
    Ok(term(l_s, lambda_s)? + term(l_r, lambda_r)?)
}

/// Joint loss value with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss<T> {
    pub value: T,
    /// `∂J/∂L_S`
    pub d_sequence_loss: T,
    /// `∂J/∂L_R`
    pub d_rating_loss: T,
    /// `∂J/∂λ_S`, `∂J/∂λ_R`
    pub d_weights: TaskWeights<T>,
}

impl LossForm {
    /// `∂J/∂L_S` and `∂J/∂L_R`, which depend only on the weights.
    pub fn task_scales<T: Scalar>(self, w: &TaskWeights<T>) -> Result<(T, T)> {
        match self {
            Self::Fixed => Ok((w.sequence, w.rating)),
            Self::Kendall | Self::Positive => {
                let s = nonzero(w.sequence)?;
                let r = nonzero(w.rating)?;
                let two = c::<T>(2.0);
                Ok((T::one() / (two * s * s), T::one() / (two * r * r)))
            }
        }
    }

    pub fn combine<T: Scalar>(self, l_s: T, l_r: T, w: &TaskWeights<T>) -> Result<JointLoss<T>> {
        let (d_sequence_loss, d_rating_loss) = self.task_scales(w)?;
        let (value, d_weights) = match self {
            Self::Fixed => (
                joint_loss_fixed(l_s, l_r, w.sequence, w.rating),
                TaskWeights { sequence: l_s, rating: l_r },
            ),
            Self::Kendall => (
                joint_loss_kendall(l_s, l_r, w.sequence, w.rating)?,
                TaskWeights {
                    sequence: kendall_lambda_grad(l_s, w.sequence),
                    rating: kendall_lambda_grad(l_r, w.rating),
                },
            ),
            Self::Positive => (
                joint_loss_positive(l_s, l_r, w.sequence, w.rating)?,
                TaskWeights {
                    sequence: positive_lambda_grad(l_s, w.sequence),
                    rating: positive_lambda_grad(l_r, w.rating),
                },
            ),
        };
        Ok(JointLoss {
            value,
            d_sequence_loss,
            d_rating_loss,
            d_weights,
        })
    }

    /// Whether λ receives gradient updates under this form.
    pub fn trains_weights(self) -> bool {
        !matches!(self, Self::Fixed)
    }
}

/// `-L/λ³ + 1/λ`
pub fn kendall_lambda_grad<T: Scalar>(l: T, lambda: T) -> T {
    -l / (lambda * lambda * lambda) + T::one() / lambda
}

/// `-L/λ³ + 2λ/(1+λ²)`
pub fn positive_lambda_grad<T: Scalar>(l: T, lambda: T) -> T {
    -l / (lambda * lambda * lambda) + c::<T>(2.0) * lambda / (T::one() + lambda * lambda)
}
