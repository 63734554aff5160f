use crate::corpus::WordId;
use crate::error::{Error, Result};
use crate::neural::features::{feature_mean, features_from_entries, normalize_features};
use crate::scalar::Scalar;
use crate::smoothing::Smoother;

/// What to precompute for each predicted token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowLayout {
    pub order: usize,
    /// Count-column values, validity, fallbacks and count features.
    pub count_columns: bool,
    /// Previous-word ids recorded per token (most recent last).
    pub context_words: usize,
}

/// Per-token inputs of the mixture: count-column values at the target,
/// which columns are observed, heuristic fallbacks, count features and
/// previous words. Tokens are stored sentence by sentence.
#[derive(Debug, Clone)]
pub struct TokenRows<T> {
    pub columns: usize,
    pub feature_width: usize,
    pub context_words: usize,
    pub values: Vec<T>,
    pub valid: Vec<bool>,
    pub fallbacks: Vec<T>,
    pub features: Vec<T>,
    pub words: Vec<WordId>,
    pub targets: Vec<WordId>,
    /// Whether the token takes part in training.
    pub active: Vec<bool>,
    sentence_starts: Vec<usize>,
}

impl<T: Scalar> TokenRows<T> {
    /// Looks up every token of `sentences` in every count source.
    pub fn build<'a, I>(
        sources: &[&Smoother],
        layout: RowLayout,
        bos: WordId,
        sentences: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [WordId]>,
    {
        let n = layout.order;
        if layout.count_columns && sources.iter().any(|s| s.order() != n) {
            return Err(Error::InvalidArgument(
                "count sources disagree with the model order".into(),
            ));
        }
        let (columns, feature_width) = if layout.count_columns {
            (
                n * sources.len(),
                sources.iter().map(|s| n * s.features_per_order()).sum(),
            )
        } else {
            (0, 0)
        };
        let mut rows = TokenRows {
            columns,
            feature_width,
            context_words: layout.context_words,
            values: Vec::new(),
            valid: Vec::new(),
            fallbacks: Vec::new(),
            features: Vec::new(),
            words: Vec::new(),
            targets: Vec::new(),
            active: Vec::new(),
            sentence_starts: vec![0],
        };
        let pad = (n - 1).max(layout.context_words);
        let mut history: Vec<WordId> = Vec::new();
        for sentence in sentences {
            history.clear();
            history.resize(pad, bos);
            for &w in sentence {
                if layout.count_columns {
                    for s in sources {
                        let entries = s.entries_at::<T>(&history, w)?;
                        for e in &entries {
                            rows.values.push(e.prob);
                            rows.valid.push(!e.masked);
                            rows.fallbacks.push(e.fallback);
                        }
                        features_from_entries(s, &entries, &mut rows.features);
                    }
                }
                rows.words
                    .extend_from_slice(&history[history.len() - layout.context_words..]);
                rows.targets.push(w);
                rows.active.push(true);
                history.push(w);
            }
            rows.sentence_starts.push(rows.targets.len());
        }
        Ok(rows)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sentences(&self) -> usize {
        self.sentence_starts.len() - 1
    }

    /// Token index range of sentence `i`.
    pub fn sentence(&self, i: usize) -> std::ops::Range<usize> {
        self.sentence_starts[i]..self.sentence_starts[i + 1]
    }

    pub fn row_values(&self, t: usize) -> &[T] {
        &self.values[t * self.columns..(t + 1) * self.columns]
    }

    pub fn row_valid(&self, t: usize) -> &[bool] {
        &self.valid[t * self.columns..(t + 1) * self.columns]
    }

    pub fn row_fallbacks(&self, t: usize) -> &[T] {
        &self.fallbacks[t * self.columns..(t + 1) * self.columns]
    }

    pub fn row_features(&self, t: usize) -> &[T] {
        &self.features[t * self.feature_width..(t + 1) * self.feature_width]
    }

    pub fn row_words(&self, t: usize) -> &[WordId] {
        &self.words[t * self.context_words..(t + 1) * self.context_words]
    }

    pub fn feature_sum(&self) -> Vec<T> {
        let n = T::of(self.len() as f64);
        feature_mean(&self.features, self.feature_width)
            .into_iter()
            .map(|m| m * n)
            .collect()
    }

    pub fn normalize(&mut self, mean: &[T]) {
        normalize_features(&mut self.features, mean);
    }

    /// Excludes tokens that no count column can predict (possible under
    /// cross-validation views). Returns how many were excluded.
    pub fn deactivate_unreachable(&mut self) -> usize {
        let mut n = 0;
        for t in 0..self.len() {
            if self.row_values(t).iter().all(|&v| v == T::zero()) {
                self.active[t] = false;
                n += 1;
            }
        }
        n
    }
}
