use crate::corpus::WordId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::smoothing::{ColumnEntry, Smoother};

/// Count features for every order of `smoother`, unigram first. `history`
/// holds the preceding ids, padded to at least `N - 1`.
pub fn context_features<T: Scalar>(smoother: &Smoother, history: &[WordId]) -> Result<Vec<T>> {
    let order = smoother.order();
    if history.len() + 1 < order {
        return Err(Error::InvalidArgument(format!(
            "history of {} ids for an order-{order} model",
            history.len()
        )));
    }
    let h = history.len();
    let mut out = Vec::with_capacity(order * smoother.features_per_order());
    for n in 1..=order {
        let e = smoother.context_summary::<T>(&history[h + 1 - n..])?;
        smoother.features_into(&e, &mut out);
    }
    Ok(out)
}

/// Count features from per-order entries already looked up for one token.
pub fn features_from_entries<T: Scalar>(
    smoother: &Smoother,
    entries: &[ColumnEntry<T>],
    out: &mut Vec<T>,
) {
    for e in entries {
        smoother.features_into(e, out);
    }
}

/// Column means of `rows` feature vectors of width `width`.
pub fn feature_mean<T: Scalar>(data: &[T], width: usize) -> Vec<T> {
    let mut mean = vec![T::zero(); width];
    if width == 0 || data.is_empty() {
        return mean;
    }
    let rows = data.len() / width;
    for row in data.chunks_exact(width) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    let n = T::of(rows as f64);
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Subtracts `mean` from each feature vector in `data` in place.
pub fn normalize_features<T: Scalar>(data: &mut [T], mean: &[T]) {
    if mean.is_empty() {
        return;
    }
    for row in data.chunks_exact_mut(mean.len()) {
        for (x, &m) in row.iter_mut().zip(mean) {
            *x -= m;
        }
    }
}
