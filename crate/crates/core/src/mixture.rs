//! The mixture-of-distributions core: `p = D λ`.
//!
//! `D` holds K count-based columns and, for neural and hybrid models, an
//! implicit `J x J` identity block. The identity block is never stored:
//! weight `λ[K + j]` is added directly to word `j`.

use crate::corpus::WordId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::smoothing::SparseDistribution;

/// Simplex weights over the columns of `D` (count columns first, then the
/// identity block when present).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights<T>(Vec<T>);

impl<T: Scalar> MixtureWeights<T> {
    /// Validates non-negativity and unit sum (within `1e-6`).
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "mixture weights must be finite and non-negative".into(),
            ));
        }
        let sum: T = values.iter().copied().sum();
        if (sum - T::one()).abs() > T::of(1e-6) {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {sum}, not 1"
            )));
        }
        Ok(MixtureWeights(values))
    }

    /// Wraps values already known to form a simplex vector.
    pub fn new_unchecked(values: Vec<T>) -> Self {
        MixtureWeights(values)
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

/// Zeroes the masked entries (`mask[k] == false`) and rescales the rest to
/// sum to one.
pub fn mask_and_renormalize<T: Scalar>(raw: &[T], valid: &[bool]) -> Result<MixtureWeights<T>> {
    if raw.len() != valid.len() {
        return Err(Error::Shape(format!(
            "mask of length {} for {} weights",
            valid.len(),
            raw.len()
        )));
    }
    let kept: T = raw
        .iter()
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|(&x, _)| x)
        .sum();
    if !(kept > T::zero()) {
        return Err(Error::InvalidArgument(
            "no mixture weight left after masking".into(),
        ));
    }
    Ok(MixtureWeights(
        raw.iter()
            .zip(valid)
            .map(|(&x, &v)| if v { x / kept } else { T::zero() })
            .collect(),
    ))
}

/// The column set of `D` for one context.
#[derive(Debug, Clone)]
pub struct ContextDistributions<T> {
    columns: Vec<SparseDistribution<T>>,
    identity: bool,
    vocab_size: usize,
}

impl<T: Scalar> ContextDistributions<T> {
    pub fn new(
        columns: Vec<SparseDistribution<T>>,
        identity: bool,
        vocab_size: usize,
    ) -> Result<Self> {
        if let Some(c) = columns.iter().find(|c| c.vocab_size() != vocab_size) {
            return Err(Error::Shape(format!(
                "column over {} words in a {vocab_size}-word mixture",
                c.vocab_size()
            )));
        }
        Ok(ContextDistributions {
            columns,
            identity,
            vocab_size,
        })
    }

    /// Identity block only (a standard neural LM).
    pub fn identity_only(vocab_size: usize) -> Self {
        ContextDistributions {
            columns: Vec::new(),
            identity: true,
            vocab_size,
        }
    }

    pub fn count_columns(&self) -> &[SparseDistribution<T>] {
        &self.columns
    }

    pub fn has_identity_block(&self) -> bool {
        self.identity
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Number of mixture weights expected: K, or K + J with the identity
    /// block.
    pub fn width(&self) -> usize {
        self.columns.len() + if self.identity { self.vocab_size } else { 0 }
    }

    /// Validity of every weight position; identity positions are always
    /// valid.
    pub fn mask(&self) -> Vec<bool> {
        let mut m: Vec<bool> = self.columns.iter().map(|c| !c.is_masked()).collect();
        if self.identity {
            m.resize(self.width(), true);
        }
        m
    }

    /// Row `d_j` restricted to the count columns.
    pub fn row(&self, word: WordId) -> Vec<T> {
        self.columns.iter().map(|c| c.prob(word)).collect()
    }

    fn check(&self, lambda: &MixtureWeights<T>, word: WordId) -> Result<()> {
        if lambda.len() != self.width() {
            return Err(Error::Shape(format!(
                "{} mixture weights for {} columns",
                lambda.len(),
                self.width()
            )));
        }
        if word as usize >= self.vocab_size {
            return Err(Error::WordOutOfRange {
                id: word as usize,
                size: self.vocab_size,
            });
        }
        Ok(())
    }
}

/// `p_j = sum_k λ_k d_{j,k}` (+ `λ[K + j]` with the identity block). Touches
/// one entry per count column.
pub fn word_probability<T: Scalar>(
    dists: &ContextDistributions<T>,
    lambda: &MixtureWeights<T>,
    word: WordId,
) -> Result<T> {
    dists.check(lambda, word)?;
    Ok(row_probability(
        &dists.row(word),
        dists.identity,
        lambda.values(),
        word,
    ))
}

/// Mixture probability from a precomputed row of count-column values.
#[inline]
pub fn row_probability<T: Scalar>(row: &[T], identity: bool, lambda: &[T], word: WordId) -> T {
    let k = row.len();
    let mut p = T::zero();
    for (d, l) in row.iter().zip(&lambda[..k]) {
        p += *d * *l;
    }
    if identity {
        p += lambda[k + word as usize];
    }
    p
}

/// Dense `p = D λ` over all `J` words.
pub fn full_distribution<T: Scalar>(
    dists: &ContextDistributions<T>,
    lambda: &MixtureWeights<T>,
) -> Result<Vec<T>> {
    dists.check(lambda, 0)?;
    let mut p = vec![T::zero(); dists.vocab_size];
    let lv = lambda.values();
    for (col, &l) in dists.columns.iter().zip(lv) {
        col.add_scaled_to(l, &mut p);
    }
    if dists.identity {
        let k = dists.columns.len();
        for (pj, &l) in p.iter_mut().zip(&lv[k..]) {
            *pj += l;
        }
    }
    Ok(p)
}

/// Negative log-likelihood of `word` and its gradient with respect to λ.
///
/// The gradient is `-d_{j,k} / p_j` on count columns and `-1 / p_j` at the
/// identity position of `word` (zero at other identity positions).
pub fn nll_and_lambda_gradient<T: Scalar>(
    dists: &ContextDistributions<T>,
    lambda: &MixtureWeights<T>,
    word: WordId,
    context: &[WordId],
) -> Result<(T, Vec<T>)> {
    dists.check(lambda, word)?;
    let row = dists.row(word);
    let p = row_probability(&row, dists.identity, lambda.values(), word);
    if !(p > T::zero()) {
        return Err(Error::ZeroProbability {
            context: context.to_vec(),
            word,
        });
    }
    let mut grad: Vec<T> = row.iter().map(|&d| -d / p).collect();
    if dists.identity {
        grad.resize(dists.width(), T::zero());
        grad[dists.columns.len() + word as usize] = -T::one() / p;
    }
    Ok((-p.ln(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothing::column_lookups;

    fn col(entries: &[(WordId, f64)], j: usize) -> SparseDistribution<f64> {
        SparseDistribution::from_unsorted(entries.to_vec(), j)
    }

    #[test]
    fn identity_mixture_probability() {
        let d = ContextDistributions::new(vec![col(&[(0, 1.0)], 2), col(&[(1, 1.0)], 2)], false, 2)
            .unwrap();
        let l = MixtureWeights::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(word_probability(&d, &l, 1).unwrap(), 0.7);
    }

    #[test]
    fn dot_product_probability() {
        let d = ContextDistributions::new(
            vec![
                col(&[(0, 0.5), (1, 0.5)], 3),
                col(&[(0, 0.25), (2, 0.75)], 3),
            ],
            false,
            3,
        )
        .unwrap();
        let l = MixtureWeights::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(word_probability(&d, &l, 0).unwrap(), 0.375);
    }

    #[test]
    fn masked_column_contributes_nothing() {
        let d = ContextDistributions::new(
            vec![SparseDistribution::masked(3), col(&[(1, 0.2), (2, 0.8)], 3)],
            false,
            3,
        )
        .unwrap();
        assert_eq!(d.mask(), vec![false, true]);
        let l = MixtureWeights::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(word_probability(&d, &l, 1).unwrap(), 0.2);
    }

    #[test]
    fn out_of_range_word_is_an_error() {
        let d = ContextDistributions::new(vec![col(&[(0, 1.0)], 2)], false, 2).unwrap();
        let l = MixtureWeights::new(vec![1.0]).unwrap();
        assert!(matches!(
            word_probability(&d, &l, 2),
            Err(Error::WordOutOfRange { .. })
        ));
    }

    #[test]
    fn identity_only_full_distribution_is_lambda() {
        let d = ContextDistributions::<f64>::identity_only(4);
        let l = MixtureWeights::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(full_distribution(&d, &l).unwrap(), l.values());
    }

    #[test]
    fn all_mass_on_unigram() {
        let uni = col(&[(0, 0.2), (1, 0.3), (2, 0.5)], 3);
        let d =
            ContextDistributions::new(vec![uni.clone(), col(&[(1, 1.0)], 3)], false, 3).unwrap();
        let l = MixtureWeights::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(full_distribution(&d, &l).unwrap(), vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn nll_gradient_example() {
        let d = ContextDistributions::new(
            vec![
                col(&[(0, 0.5), (1, 0.5)], 3),
                col(&[(0, 0.25), (2, 0.75)], 3),
            ],
            false,
            3,
        )
        .unwrap();
        let l = MixtureWeights::new(vec![0.5, 0.5]).unwrap();
        let (loss, g) = nll_and_lambda_gradient(&d, &l, 0, &[]).unwrap();
        assert!((loss + 0.375f64.ln()).abs() < 1e-15);
        assert!((g[0] + 4.0 / 3.0).abs() < 1e-12);
        assert!((g[1] + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nll_identity_certain_word() {
        let d = ContextDistributions::<f64>::identity_only(3);
        let l = MixtureWeights::new(vec![0.0, 1.0, 0.0]).unwrap();
        let (loss, g) = nll_and_lambda_gradient(&d, &l, 1, &[]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g, vec![0.0, -1.0, 0.0]);
    }

    #[test]
    fn zero_probability_is_reported() {
        let d = ContextDistributions::new(vec![col(&[(0, 1.0)], 2)], false, 2).unwrap();
        let l = MixtureWeights::new(vec![1.0]).unwrap();
        let err = nll_and_lambda_gradient(&d, &l, 1, &[7, 8]).unwrap_err();
        assert!(
            matches!(err, Error::ZeroProbability { ref context, word: 1 } if context == &[7, 8])
        );
    }

    #[test]
    fn mask_and_renormalize_examples() {
        let m = mask_and_renormalize(&[0.2, 0.3, 0.5], &[false, false, true]).unwrap();
        assert_eq!(m.values(), &[0.0, 0.0, 1.0]);
        let m = mask_and_renormalize(&[0.25; 4], &[true; 4]).unwrap();
        assert_eq!(m.values(), &[0.25; 4]);
        let m = mask_and_renormalize(&[0.5, 0.5, 0.0, 0.0], &[false, true, true, true]).unwrap();
        assert_eq!(m.values(), &[0.0, 1.0, 0.0, 0.0]);
        assert!(mask_and_renormalize(&[1.0, 0.0], &[false, true]).is_err());
    }

    #[test]
    fn word_probability_touches_only_k_entries() {
        let j = 10_000;
        let cols: Vec<_> = (0..5)
            .map(|k| col(&[(k as WordId, 0.5), (9_999, 0.5)], j))
            .collect();
        let d = ContextDistributions::new(cols, true, j).unwrap();
        let mut l = vec![0.0; 5 + j];
        l[0] = 0.5;
        l[5 + 3] = 0.5;
        let l = MixtureWeights::new(l).unwrap();
        let before = column_lookups();
        let p = word_probability(&d, &l, 3).unwrap();
        assert_eq!(column_lookups() - before, 5);
        assert_eq!(p, 0.5);
    }
}
