//! Matrix-factorization rating head over the shared embedding tables.

use crate::corpus::{MAX_RATING, MIN_RATING};
use crate::embeddings::EmbeddingTables;
use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::{axpy, dot};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingPrediction<T> {
    /// `uᵀi`; what the loss consumes.
    pub raw: T,
    /// `raw` clamped to the rating scale; what reports show.
    pub clamped: T,
}

impl<T: Scalar> RatingPrediction<T> {
    pub fn from_raw(raw: T) -> Self {
        Self {
            raw,
            clamped: raw.max(c(MIN_RATING)).min(c(MAX_RATING)),
        }
    }
}

pub fn predict_rating<T: Scalar>(user: usize, item: usize, tables: &EmbeddingTables<T>) -> Result<RatingPrediction<T>> {
    let u = tables.lookup_user(user)?;
    let i = tables.lookup_item(item)?;
    Ok(RatingPrediction::from_raw(dot(u, i)))
}

/// One observed rating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingTarget {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

/// Mean squared error of raw predictions.
pub fn rating_loss<T: Scalar>(batch: &[RatingTarget], tables: &EmbeddingTables<T>) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::UndefinedInput("empty rating batch"));
    }
    let mut sum = T::zero();
    for t in batch {
        let r = predict_rating(t.user, t.item, tables)?.raw;
        let e = c::<T>(t.rating) - r;
        sum += e * e;
    }
    Ok(sum / c(batch.len() as f64))
}

/// Squared error of one target and its gradient times `scale` accumulated
/// into `grads` (`∂/∂u = -2(r - uᵀi)·i`, symmetric for `i`).
pub fn rating_sq_error_backward<T: Scalar>(
    target: &RatingTarget,
    tables: &EmbeddingTables<T>,
    scale: T,
    grads: &mut EmbeddingTables<T>,
) -> Result<T> {
    let u = tables.lookup_user(target.user)?;
    let i = tables.lookup_item(target.item)?;
    let resid = c::<T>(target.rating) - dot(u, i);
    let g = c::<T>(-2.0) * resid * scale;
    axpy(g, i, grads.users.row_mut(target.user));
    axpy(g, u, grads.items.row_mut(target.item));
    Ok(resid * resid)
}

/// Root mean squared error of clamped predictions.
pub fn rmse<T: Scalar>(batch: &[RatingTarget], tables: &EmbeddingTables<T>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::UndefinedInput("empty rating batch"));
    }
    let mut sum = 0.0;
    for t in batch {
        let p = predict_rating(t.user, t.item, tables)?.clamped.as_f64();
        sum += (t.rating - p).powi(2);
    }
    Ok((sum / batch.len() as f64).sqrt())
}
