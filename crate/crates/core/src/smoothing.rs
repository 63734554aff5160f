//! Count-based distribution columns and heuristic interpolation
//! coefficients.
//!
//! A column for order `n` is the conditional distribution given the last
//! `n-1` words. Contexts never seen in training yield a masked (all-zero)
//! column; the mixture layer zeroes their weights.

use std::cell::Cell;
use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::WordId;
use crate::counts::{ContextStats, CountKind, NGramCountStore};
use crate::error::Result;
use crate::scalar::Scalar;

thread_local! {
    static LOOKUPS: Cell<u64> = const { Cell::new(0) };
}

/// Number of single-word column lookups performed on this thread.
#[doc(hidden)]
pub fn column_lookups() -> u64 {
    LOOKUPS.with(Cell::get)
}

/// A probability distribution over the prediction vocabulary stored as
/// sparse entries plus a uniform mass shared by every word.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDistribution<T> {
    entries: Vec<(WordId, T)>,
    uniform: T,
    vocab_size: usize,
}

impl<T: Scalar> SparseDistribution<T> {
    /// The all-zero column of an unobserved context.
    pub fn masked(vocab_size: usize) -> Self {
        SparseDistribution {
            entries: Vec::new(),
            uniform: T::zero(),
            vocab_size,
        }
    }

    /// Entries must be sorted by word id without duplicates.
    pub fn from_sorted(entries: Vec<(WordId, T)>, uniform: T, vocab_size: usize) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        SparseDistribution {
            entries,
            uniform,
            vocab_size,
        }
    }

    pub fn from_unsorted(mut entries: Vec<(WordId, T)>, vocab_size: usize) -> Self {
        entries.sort_by_key(|e| e.0);
        SparseDistribution::from_sorted(entries, T::zero(), vocab_size)
    }

    pub fn is_masked(&self) -> bool {
        self.entries.is_empty() && self.uniform == T::zero()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn entries(&self) -> &[(WordId, T)] {
        &self.entries
    }

    /// Mass added to every word.
    pub fn uniform(&self) -> T {
        self.uniform
    }

    pub fn prob(&self, word: WordId) -> T {
        LOOKUPS.with(|c| c.set(c.get() + 1));
        match self.entries.binary_search_by_key(&word, |e| e.0) {
            Ok(i) => self.entries[i].1 + self.uniform,
            Err(_) => self.uniform,
        }
    }

    /// Total probability mass.
    pub fn total(&self) -> T {
        self.entries.iter().map(|e| e.1).sum::<T>() + self.uniform * T::of(self.vocab_size as f64)
    }

    /// Adds `weight * self` into a dense vector.
    pub fn add_scaled_to(&self, weight: T, dense: &mut [T]) {
        if weight == T::zero() {
            return;
        }
        if self.uniform != T::zero() {
            let u = weight * self.uniform;
            for p in dense.iter_mut() {
                *p += u;
            }
        }
        for &(w, p) in &self.entries {
            dense[w as usize] += weight * p;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Maximum-likelihood columns with Witten-Bell fallbacks.
    Ml,
    /// Kneser-Ney columns with discount fallback masses.
    Kn,
}

/// How KN discounts are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountPolicy {
    /// Three count-dependent discounts per order from count-of-counts.
    Modified,
    /// One discount per order, `n1 / (n1 + 2 n2)`.
    Single,
    /// Fixed discount per order (index 0 is the unigram order).
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub family: Family,
    pub discounts: DiscountPolicy,
}

impl SmoothingSpec {
    pub fn ml() -> Self {
        SmoothingSpec {
            family: Family::Ml,
            discounts: DiscountPolicy::Modified,
        }
    }

    pub fn kn() -> Self {
        SmoothingSpec {
            family: Family::Kn,
            discounts: DiscountPolicy::Modified,
        }
    }

    /// Whether columns are discounted (and features include the discounted
    /// mass).
    pub fn is_discounted(&self) -> bool {
        self.family == Family::Kn
    }
}

/// Discounts for successors seen once, twice and three or more times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discounts(pub [f64; 3]);

impl Discounts {
    pub fn uniform(d: f64) -> Self {
        Discounts([d, d, d])
    }

    #[inline]
    pub fn for_count(&self, c: u64) -> f64 {
        match c {
            0 => 0.0,
            1 => self.0[0],
            2 => self.0[1],
            _ => self.0[2],
        }
    }

    /// Total mass removed from a context.
    #[inline]
    pub fn removed(&self, stats: &ContextStats) -> f64 {
        self.0[0] * stats.n1 as f64 + self.0[1] * stats.n2 as f64 + self.0[2] * stats.n3plus as f64
    }
}

/// Closed-form modified-KN discounts from count-of-counts `n1..n4`.
///
/// Each discount is clamped to `[0, i]`; when any denominator vanishes all
/// three fall back to the single discount `Y = n1 / (n1 + 2 n2)`.
pub fn modified_kn_discounts(n: [u64; 4]) -> Discounts {
    let [n1, n2, n3, n4] = n.map(|x| x as f64);
    if n1 == 0.0 {
        return Discounts([0.0; 3]);
    }
    let y = n1 / (n1 + 2.0 * n2);
    if n2 == 0.0 || n3 == 0.0 {
        return Discounts::uniform(y.clamp(0.0, 1.0));
    }
    let d1 = 1.0 - 2.0 * y * n2 / n1;
    let d2 = 2.0 - 3.0 * y * n3 / n2;
    let d3 = 3.0 - 4.0 * y * n4 / n3;
    Discounts([d1.clamp(0.0, 1.0), d2.clamp(0.0, 2.0), d3.clamp(0.0, 3.0)])
}

/// Count table behind the order-`n` column.
fn kn_kind(n: usize, order: usize) -> CountKind {
    if n == order {
        CountKind::Raw
    } else {
        CountKind::Kn
    }
}

/// Discounts estimated for order `n` of a KN model.
pub fn estimate_discounts(store: &NGramCountStore, n: usize) -> Discounts {
    modified_kn_discounts(store.count_of_counts(n, kn_kind(n, store.order())).0)
}

/// Witten-Bell fallback `u / (c + u)`; 1 for unobserved contexts.
pub fn witten_bell_fallback<T: Scalar>(store: &NGramCountStore, context: &[WordId]) -> Result<T> {
    let stats = store.context_stats(context, CountKind::Raw)?;
    Ok(witten_bell(&stats))
}

fn witten_bell<T: Scalar>(stats: &ContextStats) -> T {
    if stats.total == 0 {
        return T::one();
    }
    T::of(stats.unique as f64 / (stats.total + stats.unique) as f64)
}

/// Converts fallback probabilities into mixture weights.
///
/// `alphas` lists the fallbacks of orders `N, N-1, .., 2`; the unigram never
/// falls back. The result is indexed by order - 1 (unigram first).
pub fn heuristic_lambda<T: Scalar>(alphas: &[T]) -> Vec<T> {
    let n = alphas.len() + 1;
    let mut lambda = vec![T::zero(); n];
    let mut carried = T::one();
    for (i, &a) in alphas.iter().enumerate() {
        lambda[n - 1 - i] = (T::one() - a) * carried;
        carried = carried * a;
    }
    lambda[0] = carried;
    lambda
}

/// ML column `c(context·w) / c(context)`.
pub fn ml_distribution<T: Scalar>(
    store: &NGramCountStore,
    context: &[WordId],
) -> Result<SparseDistribution<T>> {
    let (ws, cs) = store.successors(context, CountKind::Raw)?;
    let total: u64 = cs.iter().sum();
    if total == 0 {
        return Ok(SparseDistribution::masked(store.vocab_size()));
    }
    let t = total as f64;
    let entries = ws
        .iter()
        .zip(cs)
        .map(|(&w, &c)| (w, T::of(c as f64 / t)))
        .collect();
    Ok(SparseDistribution::from_sorted(
        entries,
        T::zero(),
        store.vocab_size(),
    ))
}

/// Absolute discounting of raw counts by `d`: returns the renormalized
/// discounted column and the freed mass `1 - sum(P_D)`.
pub fn discounted_distribution<T: Scalar>(
    store: &NGramCountStore,
    context: &[WordId],
    d: f64,
) -> Result<(SparseDistribution<T>, T)> {
    let (ws, cs) = store.successors(context, CountKind::Raw)?;
    discount_column(ws, cs, Discounts::uniform(d), store.vocab_size())
}

fn discount_column<T: Scalar>(
    ws: &[WordId],
    cs: &[u64],
    disc: Discounts,
    vocab_size: usize,
) -> Result<(SparseDistribution<T>, T)> {
    let total: u64 = cs.iter().sum();
    if total == 0 {
        return Ok((SparseDistribution::masked(vocab_size), T::one()));
    }
    let kept: f64 = cs
        .iter()
        .map(|&c| (c as f64 - disc.for_count(c)).max(0.0))
        .sum();
    if kept <= 0.0 {
        return Ok((SparseDistribution::masked(vocab_size), T::one()));
    }
    let beta = 1.0 - kept / total as f64;
    let entries = ws
        .iter()
        .zip(cs)
        .filter_map(|(&w, &c)| {
            let v = (c as f64 - disc.for_count(c)).max(0.0);
            (v > 0.0).then(|| (w, T::of(v / kept)))
        })
        .collect();
    Ok((
        SparseDistribution::from_sorted(entries, T::zero(), vocab_size),
        T::of(beta.max(0.0)),
    ))
}

/// Per-word view of one column: the value at the queried word and what the
/// heuristics and features need about the context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnEntry<T> {
    /// Column probability of the word (0 when masked).
    pub prob: T,
    /// Heuristic fallback probability of this context (1 when masked).
    pub fallback: T,
    pub masked: bool,
    /// Statistics of the context in the table the column reads.
    pub stats: ContextStats,
    /// Sum of discounted counts (equals `stats.total` for undiscounted columns).
    pub kept_mass: f64,
}

/// Column computations for one count store under one smoothing spec.
#[derive(Debug, Clone)]
pub struct Smoother {
    store: Arc<NGramCountStore>,
    spec: SmoothingSpec,
    discounts: Vec<Discounts>,
}

impl Smoother {
    pub fn new(store: Arc<NGramCountStore>, spec: SmoothingSpec) -> Result<Self> {
        let order = store.order();
        let discounts = match (&spec.family, &spec.discounts) {
            (Family::Ml, _) => vec![Discounts([0.0; 3]); order],
            (Family::Kn, DiscountPolicy::Modified) => {
                (1..=order).map(|n| estimate_discounts(&store, n)).collect()
            }
            (Family::Kn, DiscountPolicy::Single) => (1..=order)
                .map(|n| {
                    let [n1, n2, _, _] = store.count_of_counts(n, kn_kind(n, order)).0;
                    let y = if n1 == 0 {
                        0.0
                    } else {
                        n1 as f64 / (n1 + 2 * n2) as f64
                    };
                    Discounts::uniform(y)
                })
                .collect(),
            (Family::Kn, DiscountPolicy::Fixed(ds)) => {
                if ds.len() != order {
                    return Err(crate::Error::InvalidArgument(format!(
                        "expected {order} fixed discounts, got {}",
                        ds.len()
                    )));
                }
                if let Some(d) = ds.iter().find(|d| !(0.0..=1.0).contains(*d)) {
                    return Err(crate::Error::InvalidArgument(format!(
                        "fixed discount {d} outside [0, 1]"
                    )));
                }
                ds.iter().map(|&d| Discounts::uniform(d)).collect()
            }
        };
        Ok(Smoother {
            store,
            spec,
            discounts,
        })
    }

    pub fn store(&self) -> &Arc<NGramCountStore> {
        &self.store
    }

    pub fn spec(&self) -> &SmoothingSpec {
        &self.spec
    }

    pub fn order(&self) -> usize {
        self.store.order()
    }

    /// Discounts for order `n` (all zero for ML).
    pub fn discounts(&self, n: usize) -> Discounts {
        self.discounts[n - 1]
    }

    fn kind(&self, n: usize) -> CountKind {
        match self.spec.family {
            Family::Ml => CountKind::Raw,
            Family::Kn => kn_kind(n, self.order()),
        }
    }

    /// Value of the order-`(context.len() + 1)` column at `word`.
    pub fn entry<T: Scalar>(&self, context: &[WordId], word: WordId) -> Result<ColumnEntry<T>> {
        let n = context.len() + 1;
        LOOKUPS.with(|c| c.set(c.get() + 1));
        let (stats, count) = self.store.lookup(context, word, self.kind(n))?;
        Ok(self.entry_from(n, &stats, count))
    }

    fn entry_from<T: Scalar>(&self, n: usize, stats: &ContextStats, count: u64) -> ColumnEntry<T> {
        let masked_entry = |stats: ContextStats| ColumnEntry {
            prob: T::zero(),
            fallback: T::one(),
            masked: true,
            stats,
            kept_mass: 0.0,
        };
        let j = self.store.vocab_size() as f64;
        match self.spec.family {
            Family::Ml => {
                if stats.total == 0 {
                    return masked_entry(*stats);
                }
                ColumnEntry {
                    prob: T::of(count as f64 / stats.total as f64),
                    fallback: if n == 1 {
                        T::zero()
                    } else {
                        witten_bell(stats)
                    },
                    masked: false,
                    stats: *stats,
                    kept_mass: stats.total as f64,
                }
            }
            Family::Kn => {
                let disc = self.discounts[n - 1];
                let total = stats.total as f64;
                let kept = total - disc.removed(stats);
                if n == 1 {
                    // The unigram column spreads its freed mass uniformly, so
                    // it is never masked and never zero.
                    if stats.total == 0 {
                        return ColumnEntry {
                            prob: T::of(1.0 / j),
                            fallback: T::zero(),
                            masked: false,
                            stats: *stats,
                            kept_mass: 0.0,
                        };
                    }
                    let beta = 1.0 - kept / total;
                    let pd = (count as f64 - disc.for_count(count)).max(0.0) / total;
                    return ColumnEntry {
                        prob: T::of(pd + beta / j),
                        fallback: T::zero(),
                        masked: false,
                        stats: *stats,
                        kept_mass: kept,
                    };
                }
                if stats.total == 0 || kept <= 0.0 {
                    return masked_entry(*stats);
                }
                let pd = (count as f64 - disc.for_count(count)).max(0.0);
                ColumnEntry {
                    prob: T::of(pd / kept),
                    fallback: T::of((1.0 - kept / total).max(0.0)),
                    masked: false,
                    stats: *stats,
                    kept_mass: kept,
                }
            }
        }
    }

    /// Full sparse column for `context` (order `context.len() + 1`).
    pub fn column<T: Scalar>(&self, context: &[WordId]) -> Result<SparseDistribution<T>> {
        let n = context.len() + 1;
        let j = self.store.vocab_size();
        match self.spec.family {
            Family::Ml => ml_distribution(&self.store, context),
            Family::Kn => {
                let (ws, cs) = self.store.successors(context, self.kind(n))?;
                let disc = self.discounts[n - 1];
                if n > 1 {
                    return Ok(discount_column(ws, cs, disc, j)?.0);
                }
                let total: u64 = cs.iter().sum();
                if total == 0 {
                    return Ok(SparseDistribution::from_sorted(
                        Vec::new(),
                        T::of(1.0 / j as f64),
                        j,
                    ));
                }
                let t = total as f64;
                let mut kept = 0.0;
                let mut entries = Vec::with_capacity(ws.len());
                for (&w, &c) in ws.iter().zip(cs) {
                    let v = (c as f64 - disc.for_count(c)).max(0.0);
                    kept += v;
                    if v > 0.0 {
                        entries.push((w, T::of(v / t)));
                    }
                }
                let beta = 1.0 - kept / t;
                Ok(SparseDistribution::from_sorted(
                    entries,
                    T::of(beta / j as f64),
                    j,
                ))
            }
        }
    }

    /// Heuristic fallback of `context`: Witten-Bell for ML, freed discount
    /// mass for KN; 1 when the context is unobserved.
    pub fn fallback<T: Scalar>(&self, context: &[WordId]) -> Result<T> {
        Ok(self.context_summary::<T>(context)?.fallback)
    }

    /// Context statistics of the order-`(context.len() + 1)` column, with
    /// the value at no particular word (`prob` is meaningless).
    pub fn context_summary<T: Scalar>(&self, context: &[WordId]) -> Result<ColumnEntry<T>> {
        let n = context.len() + 1;
        let stats = self.store.context_stats(context, self.kind(n))?;
        Ok(self.entry_from(n, &stats, 0))
    }

    /// Column entries for every order at one position: `history` holds the
    /// preceding ids (already padded to at least `N-1`), entries are indexed
    /// by order - 1.
    pub fn entries_at<T: Scalar>(
        &self,
        history: &[WordId],
        word: WordId,
    ) -> Result<Vec<ColumnEntry<T>>> {
        let order = self.order();
        let h = history.len();
        (1..=order)
            .map(|n| self.entry(&history[h + 1 - n..], word))
            .collect()
    }

    /// Heuristic mixture weights (unigram first) from per-order entries.
    pub fn heuristic_weights<T: Scalar>(entries: &[ColumnEntry<T>]) -> Vec<T> {
        let alphas: Vec<T> = entries[1..].iter().rev().map(|e| e.fallback).collect();
        heuristic_lambda(&alphas)
    }

    /// Count features for one order: `[observed, log c, log u]` plus
    /// `log(sum of discounted counts)` for discounted columns; zeros when the
    /// context is unobserved.
    pub fn features_into<T: Scalar>(&self, entry: &ColumnEntry<T>, out: &mut Vec<T>) {
        let s = &entry.stats;
        let observed = s.total > 0;
        let ln = |x: f64| {
            if observed && x > 0.0 {
                T::of(x.ln())
            } else {
                T::zero()
            }
        };
        out.push(if observed { T::one() } else { T::zero() });
        out.push(ln(s.total as f64));
        out.push(ln(s.unique as f64));
        if self.spec.is_discounted() {
            out.push(ln(entry.kept_mass));
        }
    }

    /// Number of features per order.
    pub fn features_per_order(&self) -> usize {
        if self.spec.is_discounted() {
            4
        } else {
            3
        }
    }
}

/// Memoized full columns keyed by context; one cache per worker.
#[derive(Debug, Default)]
pub struct ColumnCache<T> {
    columns: HashMap<Vec<WordId>, Arc<SparseDistribution<T>>>,
}

impl<T: Scalar> ColumnCache<T> {
    pub fn new() -> Self {
        ColumnCache {
            columns: HashMap::new(),
        }
    }

    pub fn get(
        &mut self,
        smoother: &Smoother,
        context: &[WordId],
    ) -> Result<Arc<SparseDistribution<T>>> {
        if let Some(c) = self.columns.get(context) {
            return Ok(c.clone());
        }
        let col = Arc::new(smoother.column(context)?);
        self.columns.insert(context.to_vec(), col.clone());
        Ok(col)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}
