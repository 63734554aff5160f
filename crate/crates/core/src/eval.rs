//! Perplexity, frequency-bucketed perplexity, dense ratio and throughput.

use std::fmt::Write as _;
use std::time::Instant;

use crate::corpus::{EncodedCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{LanguageModel, TokenScore};
use crate::scalar::Scalar;

/// Perplexity over the tokens whose training frequency falls in one bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketResult {
    /// Exclusive lower bound of a disjoint bucket.
    pub above: Option<u64>,
    /// Upper bound (inclusive); `None` is unbounded.
    pub threshold: Option<u64>,
    pub tokens: u64,
    pub nll: f64,
}

impl BucketResult {
    /// `None` for an empty bucket.
    pub fn perplexity(&self) -> Option<f64> {
        (self.tokens > 0).then(|| (self.nll / self.tokens as f64).exp())
    }

    fn label(&self) -> String {
        self.threshold
            .map_or_else(|| "inf".to_string(), |t| t.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub total_nll: f64,
    pub token_count: u64,
    pub perplexity: f64,
    pub buckets: Vec<BucketResult>,
    pub disjoint_buckets: bool,
    pub dense_ratio: Option<f64>,
    pub words_per_second: Option<f64>,
}

impl EvalReport {
    /// Human-readable lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "tokens {}  nll {:.6}  ppl {:.4}",
            self.token_count, self.total_nll, self.perplexity
        );
        if let Some(d) = self.dense_ratio {
            let _ = writeln!(s, "dense ratio {d:.4}");
        }
        if let Some(w) = self.words_per_second {
            let _ = writeln!(s, "throughput {w:.1} words/s");
        }
        for b in &self.buckets {
            let range = match b.above {
                Some(a) => format!("({a}, {}]", b.label()),
                None if self.disjoint_buckets => format!("[0, {}]", b.label()),
                None => format!("<= {}", b.label()),
            };
            match b.perplexity() {
                Some(p) => {
                    let _ = writeln!(s, "bucket {range}: tokens {} ppl {p:.4}", b.tokens);
                }
                None => {
                    let _ = writeln!(s, "bucket {range}: empty");
                }
            }
        }
        s
    }

    /// `key=value` lines for scripts.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tokens={}", self.token_count);
        let _ = writeln!(s, "total_nll={}", self.total_nll);
        let _ = writeln!(s, "perplexity={}", self.perplexity);
        if let Some(d) = self.dense_ratio {
            let _ = writeln!(s, "dense_ratio={d}");
        }
        if let Some(w) = self.words_per_second {
            let _ = writeln!(s, "words_per_second={w}");
        }
        for b in &self.buckets {
            let _ = writeln!(s, "bucket_{}_tokens={}", b.label(), b.tokens);
            if let Some(p) = b.perplexity() {
                let _ = writeln!(s, "bucket_{}_perplexity={p}", b.label());
            }
        }
        s
    }

    /// Two-column `threshold perplexity` table; empty buckets are omitted.
    pub fn bucket_table(&self) -> String {
        let mut s = String::from("threshold\tperplexity\n");
        for b in &self.buckets {
            if let Some(p) = b.perplexity() {
                let _ = writeln!(s, "{}\t{p}", b.label());
            }
        }
        s
    }
}

/// Frequency buckets to report.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BucketSpec {
    /// Ascending finite thresholds; an unbounded bucket is always added.
    pub thresholds: Vec<u64>,
    /// Training frequency of each word id.
    pub train_counts: Vec<u64>,
    /// Ranges between consecutive thresholds instead of "at most t".
    pub disjoint: bool,
}

impl BucketSpec {
    fn buckets(&self) -> Result<Vec<BucketResult>> {
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "bucket thresholds must be strictly ascending".into(),
            ));
        }
        let mut prev = None;
        let mut out = Vec::new();
        for t in self
            .thresholds
            .iter()
            .copied()
            .map(Some)
            .chain(std::iter::once(None))
        {
            out.push(BucketResult {
                above: if self.disjoint { prev } else { None },
                threshold: t,
                tokens: 0,
                nll: 0.0,
            });
            prev = t;
        }
        Ok(out)
    }
}

/// Scores `corpus` once and aggregates perplexity, optional buckets and
/// (for hybrids) the dense ratio.
pub fn evaluate<T: Scalar>(
    model: &dyn LanguageModel<T>,
    corpus: &EncodedCorpus,
    buckets: Option<&BucketSpec>,
) -> Result<EvalReport> {
    check_vocabulary(model.vocabulary(), corpus)?;
    let mut rows = match buckets {
        Some(b) => {
            if b.train_counts.len() != model.vocabulary().len() {
                return Err(Error::Shape(
                    "training frequencies do not cover the vocabulary".into(),
                ));
            }
            b.buckets()?
        }
        None => Vec::new(),
    };
    let disjoint = buckets.is_some_and(|b| b.disjoint);
    let mut total = 0.0;
    let mut tokens = 0u64;
    let mut dense = 0.0;
    let mut dense_seen = false;
    model.score(corpus.sentences(), &mut |s: TokenScore<T>| {
        let p = s.prob.to_f64_lossy();
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::ZeroProbabilityAt {
                sentence: s.sentence,
                position: s.position,
                word: s.word,
            });
        }
        let nll = -p.ln();
        total += nll;
        tokens += 1;
        if let Some(d) = s.dense_mass {
            dense += d.to_f64_lossy();
            dense_seen = true;
        }
        if let Some(b) = buckets {
            let f = b.train_counts[s.word as usize];
            for r in rows.iter_mut() {
                if r.threshold.is_none_or(|t| f <= t) && r.above.is_none_or(|a| f > a) {
                    r.tokens += 1;
                    r.nll += nll;
                }
            }
        }
        Ok(())
    })?;
    if tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(EvalReport {
        total_nll: total,
        token_count: tokens,
        perplexity: (total / tokens as f64).exp(),
        buckets: rows,
        disjoint_buckets: disjoint,
        dense_ratio: dense_seen.then(|| dense / tokens as f64),
        words_per_second: None,
    })
}

/// `exp(sum of -ln P / tokens)` over every token including sentence ends.
pub fn perplexity<T: Scalar>(
    model: &dyn LanguageModel<T>,
    corpus: &EncodedCorpus,
) -> Result<EvalReport> {
    evaluate(model, corpus, None)
}

/// Perplexity restricted to target words whose training frequency is at
/// most each threshold (or within consecutive thresholds when disjoint).
pub fn bucketed_perplexity<T: Scalar>(
    model: &dyn LanguageModel<T>,
    corpus: &EncodedCorpus,
    train_counts: &[u64],
    thresholds: &[u64],
    disjoint: bool,
) -> Result<EvalReport> {
    let spec = BucketSpec {
        thresholds: thresholds.to_vec(),
        train_counts: train_counts.to_vec(),
        disjoint,
    };
    evaluate(model, corpus, Some(&spec))
}

/// Mean weight on count-based columns over all target words.
pub fn dense_ratio<T: Scalar>(model: &dyn LanguageModel<T>, corpus: &EncodedCorpus) -> Result<f64> {
    if !model.has_dense_ratio() {
        return Err(Error::InvalidArgument(
            "dense ratio needs a model with both count columns and the identity block".into(),
        ));
    }
    evaluate(model, corpus, None)?
        .dense_ratio
        .ok_or_else(|| Error::InvalidArgument("model reported no dense mass".into()))
}

/// Single-threaded scoring rate in tokens per second, after a warm-up pass
/// over a prefix of the corpus.
pub fn throughput<T: Scalar>(model: &dyn LanguageModel<T>, corpus: &EncodedCorpus) -> Result<f64> {
    check_vocabulary(model.vocabulary(), corpus)?;
    let warm = corpus.prefix(corpus.len().min(20));
    model.score(warm.sentences(), &mut |_| Ok(()))?;
    let start = Instant::now();
    let mut acc = 0.0;
    model.score(corpus.sentences(), &mut |s| {
        acc += s.prob.to_f64_lossy();
        Ok(())
    })?;
    let secs = start.elapsed().as_secs_f64();
    std::hint::black_box(acc);
    Ok(corpus.token_count() as f64 / secs.max(1e-9))
}

fn check_vocabulary(vocab: &Vocabulary, corpus: &EncodedCorpus) -> Result<()> {
    corpus.validate(vocab).map_err(|e| match e {
        Error::WordOutOfRange { id, size } => Error::VocabularyMismatch(format!(
            "corpus uses word id {id}, model vocabulary has {size} words"
        )),
        other => other,
    })
}
