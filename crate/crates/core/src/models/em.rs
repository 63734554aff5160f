use super::model::{LanguageModel, TokenScore};
use crate::corpus::{Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct EmResult {
    pub weights: Vec<f64>,
    /// Mean validation NLL per event: at the starting weights, then after
    /// every iteration.
    pub nll_history: Vec<f64>,
}

impl EmResult {
    pub fn iterations(&self) -> usize {
        self.nll_history.len() - 1
    }
}

/// Context-independent mixture weights by EM. `probs[k][e]` is the
/// probability component `k` assigns to validation event `e`. Starts from
/// `init` (uniform when absent) and stops once the mean log-likelihood
/// improves by less than `tol`.
pub fn em_static_weights(
    probs: &[Vec<f64>],
    init: Option<&[f64]>,
    tol: f64,
    max_iters: usize,
) -> Result<EmResult> {
    let k = probs.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "static interpolation needs at least 2 components, got {k}"
        )));
    }
    let events = probs[0].len();
    if events == 0 {
        return Err(Error::EmptyCorpus);
    }
    if probs.iter().any(|p| p.len() != events) {
        return Err(Error::Shape(
            "components scored different numbers of events".into(),
        ));
    }
    if let Some(i) = probs.iter().position(|p| p.iter().all(|&x| !(x > 0.0))) {
        return Err(Error::InvalidArgument(format!(
            "component {i} assigns zero probability to every event"
        )));
    }
    let mut w = match init {
        Some(w) => crate::mixture::MixtureWeights::new(w.to_vec())?.into_inner(),
        None => vec![1.0 / k as f64; k],
    };
    if w.len() != k {
        return Err(Error::Shape(format!(
            "{} initial weights for {k} components",
            w.len()
        )));
    }
    let nll = |w: &[f64]| -> Result<f64> {
        let mut total = 0.0;
        for e in 0..events {
            let p: f64 = (0..k).map(|c| w[c] * probs[c][e]).sum();
            if !(p > 0.0) {
                return Err(Error::ZeroProbability {
                    context: Vec::new(),
                    word: e as WordId,
                });
            }
            total -= p.ln();
        }
        Ok(total / events as f64)
    };
    let mut history = vec![nll(&w)?];
    for _ in 0..max_iters {
        let mut acc = vec![0.0; k];
        for e in 0..events {
            let p: f64 = (0..k).map(|c| w[c] * probs[c][e]).sum();
            for c in 0..k {
                acc[c] += w[c] * probs[c][e] / p;
            }
        }
        w = acc.into_iter().map(|a| a / events as f64).collect();
        let now = nll(&w)?;
        let before = *history.last().expect("non-empty");
        debug_assert!(
            now <= before + 1e-12 * before.abs().max(1.0),
            "EM increased the NLL"
        );
        history.push(now);
        if before - now < tol {
            break;
        }
    }
    Ok(EmResult {
        weights: w,
        nll_history: history,
    })
}

/// Per-event probabilities of each model on `sentences`.
pub fn component_probabilities<T: Scalar>(
    models: &[&dyn LanguageModel<T>],
    sentences: &[Vec<WordId>],
) -> Result<Vec<Vec<f64>>> {
    models
        .iter()
        .map(|m| {
            let mut out = Vec::new();
            m.score(sentences, &mut |s| {
                out.push(s.prob.to_f64_lossy());
                Ok(())
            })?;
            Ok(out)
        })
        .collect()
}

/// Fixed-weight mixture of complete language models.
pub struct StaticInterpolation<'a, T> {
    components: Vec<&'a dyn LanguageModel<T>>,
    weights: Vec<f64>,
}

impl<'a, T: Scalar> StaticInterpolation<'a, T> {
    pub fn new(components: Vec<&'a dyn LanguageModel<T>>, weights: Vec<f64>) -> Result<Self> {
        if components.len() < 2 || components.len() != weights.len() {
            return Err(Error::InvalidArgument(
                "need one weight for each of at least 2 components".into(),
            ));
        }
        crate::mixture::MixtureWeights::new(weights.clone())?;
        let fp = components[0].vocabulary().fingerprint();
        if components
            .iter()
            .any(|c| c.vocabulary().fingerprint() != fp)
        {
            return Err(Error::VocabularyMismatch(
                "interpolated models use different vocabularies".into(),
            ));
        }
        Ok(StaticInterpolation {
            components,
            weights,
        })
    }

    /// Fits the weights on `validation` by EM.
    pub fn fit(
        components: Vec<&'a dyn LanguageModel<T>>,
        validation: &[Vec<WordId>],
        tol: f64,
        max_iters: usize,
    ) -> Result<(Self, EmResult)> {
        let probs = component_probabilities(&components, validation)?;
        let em = em_static_weights(&probs, None, tol, max_iters)?;
        Ok((
            StaticInterpolation::new(components, em.weights.clone())?,
            em,
        ))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl<T: Scalar> LanguageModel<T> for StaticInterpolation<'_, T> {
    fn vocabulary(&self) -> &Vocabulary {
        self.components[0].vocabulary()
    }

    fn has_dense_ratio(&self) -> bool {
        false
    }

    fn score(
        &self,
        sentences: &[Vec<WordId>],
        sink: &mut dyn FnMut(TokenScore<T>) -> Result<()>,
    ) -> Result<()> {
        let mut first: Vec<TokenScore<T>> = Vec::new();
        self.components[0].score(sentences, &mut |s| {
            first.push(TokenScore {
                prob: s.prob * T::of(self.weights[0]),
                dense_mass: None,
                ..s
            });
            Ok(())
        })?;
        for (c, &w) in self.components.iter().zip(&self.weights).skip(1) {
            let mut i = 0;
            c.score(sentences, &mut |s| {
                first[i].prob += s.prob * T::of(w);
                i += 1;
                Ok(())
            })?;
        }
        first.into_iter().try_for_each(|s| sink(s))
    }

    fn predict(&self, prefix: &[WordId]) -> Result<Vec<T>> {
        let mut out: Vec<T> = Vec::new();
        for (c, &w) in self.components.iter().zip(&self.weights) {
            let p = c.predict(prefix)?;
            if out.is_empty() {
                out = vec![T::zero(); p.len()];
            }
            for (o, x) in out.iter_mut().zip(p) {
                *o += x * T::of(w);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_posterior() {
        let probs = vec![vec![1.0], vec![0.25]];
        let r = em_static_weights(&probs, Some(&[0.5, 0.5]), 0.0, 1).unwrap();
        assert!((r.weights[0] - 0.8).abs() < 1e-15 && (r.weights[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn identical_components_keep_their_weights() {
        let p = vec![0.1, 0.3, 0.05];
        let r = em_static_weights(&[p.clone(), p], Some(&[0.3, 0.7]), 1e-9, 50).unwrap();
        assert!((r.weights[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn nll_never_increases() {
        let probs = vec![
            vec![0.5, 0.01, 0.2, 0.3],
            vec![0.1, 0.2, 0.02, 0.3],
            vec![0.05, 0.05, 0.4, 0.01],
        ];
        let r = em_static_weights(&probs, None, 1e-12, 200).unwrap();
        assert!(r.nll_history.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(em_static_weights(&[vec![0.5]], None, 1e-6, 10).is_err());
        assert!(em_static_weights(&[vec![0.5, 0.2], vec![0.0, 0.0]], None, 1e-6, 10).is_err());
    }
}
