use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;

use super::rows::{RowLayout, TokenRows};
use super::{CountSource, LambdaSource, ModelKind, ModelSpec};
use crate::corpus::{Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::mixture::{full_distribution, row_probability, ContextDistributions, MixtureWeights};
use crate::neural::{masked_softmax, Architecture, LambdaNet, NetInput, NetShape, Tensor};
use crate::scalar::Scalar;
use crate::smoothing::{heuristic_lambda, Smoother};

/// Probability a model assigns to one corpus token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenScore<T> {
    pub sentence: usize,
    pub position: usize,
    pub word: WordId,
    pub prob: T,
    /// Weight on count-based columns, for models that also have the
    /// identity block.
    pub dense_mass: Option<T>,
}

/// Anything that assigns in-sentence conditional probabilities.
pub trait LanguageModel<T: Scalar> {
    fn vocabulary(&self) -> &Vocabulary;

    /// Whether the model mixes count columns with the identity block.
    fn has_dense_ratio(&self) -> bool;

    /// Scores every token of `sentences` (each ending with the sentence
    /// end), in corpus order.
    fn score(
        &self,
        sentences: &[Vec<WordId>],
        sink: &mut dyn FnMut(TokenScore<T>) -> Result<()>,
    ) -> Result<()>;

    /// Distribution over all `J` words after the in-sentence `prefix`.
    fn predict(&self, prefix: &[WordId]) -> Result<Vec<T>>;
}

/// A heuristic or trained mixture-of-distributions model.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub(crate) spec: ModelSpec,
    pub(crate) vocab: Arc<Vocabulary>,
    pub(crate) vocab_path: Option<PathBuf>,
    pub(crate) counts: Option<CountSource>,
    pub(crate) smoothers: Vec<Arc<Smoother>>,
    pub(crate) net: Option<LambdaNet<T>>,
    pub(crate) feature_mean: Vec<T>,
    pub(crate) mask_count_columns: bool,
    pub(crate) seed: u64,
}

/// Target tokens per scoring batch.
const EVAL_BATCH_WORDS: usize = 1024;
const EVAL_BATCH_WORDS_IDENTITY: usize = 256;

impl<T: Scalar> Model<T> {
    /// A count-only model with heuristic weights.
    pub fn heuristic(spec: ModelSpec, vocab: Arc<Vocabulary>, counts: CountSource) -> Result<Self> {
        if spec.kind != ModelKind::HeuristicNGram {
            return Err(Error::InvalidArgument(
                "not a heuristic n-gram model spec".into(),
            ));
        }
        Model::from_parts(spec, vocab, Some(counts), None, Vec::new())
    }

    /// Assembles a model, checking that counts, network and feature means
    /// agree with the model spec.
    pub fn from_parts(
        spec: ModelSpec,
        vocab: Arc<Vocabulary>,
        counts: Option<CountSource>,
        net: Option<LambdaNet<T>>,
        feature_mean: Vec<T>,
    ) -> Result<Self> {
        let mut model = Model::shell(spec, vocab, counts)?;
        model.net = net;
        model.feature_mean = feature_mean;
        model.check_network()?;
        Ok(model)
    }

    /// A model whose network (if any) is freshly initialized from `rng`, with
    /// zero feature means.
    pub fn untrained<R: Rng + ?Sized>(
        spec: ModelSpec,
        vocab: Arc<Vocabulary>,
        counts: Option<CountSource>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Model::shell(spec, vocab, counts)?;
        if let Some(cfg) = model.spec.network.clone() {
            model.net = Some(LambdaNet::new(cfg, model.net_shape(), rng)?);
            model.feature_mean = vec![T::zero(); model.feature_width()];
        }
        model.check_network()?;
        Ok(model)
    }

    /// Model without network parameters or feature means.
    pub(crate) fn shell(
        spec: ModelSpec,
        vocab: Arc<Vocabulary>,
        counts: Option<CountSource>,
    ) -> Result<Self> {
        spec.validate()?;
        let mut smoothers = Vec::new();
        if spec.kind.has_count_columns() {
            let counts = counts.as_ref().ok_or_else(|| {
                Error::InvalidArgument("this model kind needs a count store".into())
            })?;
            for src in std::iter::once(counts).chain(&spec.extra_count_sources) {
                src.store.check_vocabulary(&vocab)?;
                if src.store.order() != spec.order {
                    return Err(Error::InvalidArgument(format!(
                        "count store of order {} for an order-{} model",
                        src.store.order(),
                        spec.order
                    )));
                }
                smoothers.push(Arc::new(Smoother::new(
                    src.store.clone(),
                    spec.smoothing.clone(),
                )?));
            }
        }
        Ok(Model {
            spec,
            vocab,
            vocab_path: None,
            counts: if smoothers.is_empty() { None } else { counts },
            smoothers,
            net: None,
            feature_mean: Vec::new(),
            mask_count_columns: false,
            seed: 0,
        })
    }

    fn check_network(&self) -> Result<()> {
        let uses_net = self.spec.kind.has_network();
        match (&self.net, uses_net) {
            (Some(net), true) => {
                if net.shape() != &self.net_shape() {
                    return Err(Error::Shape(format!(
                        "network shape {:?} does not match the model ({:?})",
                        net.shape(),
                        self.net_shape()
                    )));
                }
                if net.config().architecture
                    != self.spec.network.as_ref().expect("validated").architecture
                {
                    return Err(Error::InvalidArgument(
                        "network architecture differs from the model spec".into(),
                    ));
                }
            }
            (None, true) if self.spec.lambda_source == LambdaSource::Network => {
                return Err(Error::InvalidArgument(
                    "this model kind needs network parameters".into(),
                ));
            }
            (Some(_), false) => {
                return Err(Error::InvalidArgument(
                    "a heuristic model has no network".into(),
                ))
            }
            _ => {}
        }
        if self.feature_mean.len() != self.feature_width() && !self.feature_mean.is_empty() {
            return Err(Error::Shape(
                "feature mean does not match the feature width".into(),
            ));
        }
        Ok(())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn net_mut(&mut self) -> Option<&mut LambdaNet<T>> {
        self.net.as_mut()
    }

    pub fn net(&self) -> Option<&LambdaNet<T>> {
        self.net.as_ref()
    }

    pub fn feature_mean(&self) -> &[T] {
        &self.feature_mean
    }

    pub fn smoothers(&self) -> &[Arc<Smoother>] {
        &self.smoothers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Records where the vocabulary and count stores live, for saving.
    pub fn set_paths(&mut self, vocab: Option<PathBuf>, counts: Option<PathBuf>) {
        self.vocab_path = vocab;
        if let Some(c) = &mut self.counts {
            c.path = counts;
        }
    }

    /// Replaces the weighting of an n-gram model; heuristic weights ignore
    /// the network entirely.
    pub fn with_lambda_source(mut self, source: LambdaSource) -> Result<Self> {
        if !self.spec.kind.has_count_columns()
            || self.spec.kind == ModelKind::Hybrid && source == LambdaSource::Heuristic
        {
            return Err(Error::InvalidArgument(
                "heuristic weights need a pure n-gram model".into(),
            ));
        }
        if source == LambdaSource::Network && self.net.is_none() {
            return Err(Error::InvalidArgument(
                "no network to compute weights".into(),
            ));
        }
        self.spec.lambda_source = source;
        self.spec.validate()?;
        Ok(self)
    }

    /// Forces zero weight on every count column (the hybrid then scores
    /// with its identity block alone).
    pub fn with_count_columns_masked(mut self, masked: bool) -> Result<Self> {
        if masked && self.spec.kind != ModelKind::Hybrid {
            return Err(Error::InvalidArgument(
                "only a hybrid can drop its count columns".into(),
            ));
        }
        self.mask_count_columns = masked;
        Ok(self)
    }

    pub fn count_columns(&self) -> usize {
        self.spec.count_columns()
    }

    pub fn feature_width(&self) -> usize {
        if !matches!(
            self.spec.kind,
            ModelKind::NeurallyInterpolatedNGram | ModelKind::Hybrid
        ) {
            return 0;
        }
        self.smoothers
            .iter()
            .map(|s| self.spec.order * s.features_per_order())
            .sum()
    }

    pub fn net_shape(&self) -> NetShape {
        NetShape {
            features: self.feature_width(),
            context_words: self.spec.context_words(),
            count_columns: self.count_columns(),
            identity: self.spec.kind.has_identity_block(),
            vocab_size: self.vocab.len(),
        }
    }

    pub(crate) fn layout(&self) -> RowLayout {
        RowLayout {
            order: self.spec.order,
            count_columns: self.spec.kind.has_count_columns(),
            context_words: if self.uses_network() {
                self.spec.context_words()
            } else {
                0
            },
        }
    }

    fn uses_network(&self) -> bool {
        self.spec.kind.has_network() && self.spec.lambda_source == LambdaSource::Network
    }

    /// Per-token rows over the full counts, features normalized.
    pub fn rows<'a, I>(&self, sentences: I) -> Result<TokenRows<T>>
    where
        I: IntoIterator<Item = &'a [WordId]>,
    {
        let sources: Vec<&Smoother> = self.smoothers.iter().map(|s| s.as_ref()).collect();
        let mut rows = TokenRows::build(&sources, self.layout(), self.vocab.bos_id(), sentences)?;
        if self.uses_network() {
            rows.normalize(&self.feature_mean);
        }
        Ok(rows)
    }

    /// `(probability, dense mass)` of every token in `rows`, in row order.
    pub fn score_rows(&self, rows: &TokenRows<T>) -> Result<Vec<(T, Option<T>)>> {
        if !self.uses_network() {
            return Ok((0..rows.len())
                .map(|t| {
                    let fb = rows.row_fallbacks(t);
                    let alphas: Vec<T> = fb[1..].iter().rev().copied().collect();
                    let lambda = heuristic_lambda(&alphas);
                    (
                        row_probability(rows.row_values(t), false, &lambda, rows.targets[t]),
                        None,
                    )
                })
                .collect());
        }
        let net = self.net.as_ref().expect("network model");
        let mut out = vec![(T::zero(), None); rows.len()];
        let limit = self.batch_words();
        let mut start = 0;
        while start < rows.sentences() {
            let mut end = start;
            let mut words = 0;
            while end < rows.sentences()
                && (words == 0 || words + rows.sentence(end).len() <= limit)
            {
                words += rows.sentence(end).len();
                end += 1;
            }
            let chunk: Vec<usize> = (start..end).collect();
            let batch = assemble(net.config().architecture, &[(rows, chunk.as_slice())]);
            let logits = net.eval_logits(&batch.input)?;
            for (r, &(_, t)) in batch.order.iter().enumerate() {
                out[t] = self.mix_row(rows, t, logits.row(r));
            }
            start = end;
        }
        Ok(out)
    }

    fn mix_row(&self, rows: &TokenRows<T>, t: usize, logits: &[T]) -> (T, Option<T>) {
        let k = rows.columns;
        let identity = self.spec.kind.has_identity_block();
        let mut valid: Vec<bool> = if self.mask_count_columns {
            vec![false; k]
        } else {
            rows.row_valid(t).to_vec()
        };
        valid.resize(logits.len(), true);
        let lambda = masked_softmax(logits, &valid);
        let p = row_probability(rows.row_values(t), identity, &lambda, rows.targets[t]);
        let dense = (identity && k > 0).then(|| lambda[..k].iter().copied().sum());
        (p, dense)
    }

    fn batch_words(&self) -> usize {
        if self.spec.kind.has_identity_block() {
            EVAL_BATCH_WORDS_IDENTITY
        } else {
            EVAL_BATCH_WORDS
        }
    }
}

impl<T: Scalar> LanguageModel<T> for Model<T> {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn has_dense_ratio(&self) -> bool {
        self.spec.kind == ModelKind::Hybrid
    }

    fn score(
        &self,
        sentences: &[Vec<WordId>],
        sink: &mut dyn FnMut(TokenScore<T>) -> Result<()>,
    ) -> Result<()> {
        let limit = self.batch_words();
        let mut start = 0;
        while start < sentences.len() {
            let mut end = start;
            let mut words = 0;
            while end < sentences.len() && (words == 0 || words + sentences[end].len() <= limit) {
                words += sentences[end].len();
                end += 1;
            }
            let chunk = &sentences[start..end];
            let rows = self.rows(chunk.iter().map(Vec::as_slice))?;
            let scores = self.score_rows(&rows)?;
            for (i, s) in chunk.iter().enumerate() {
                let range = rows.sentence(i);
                for (pos, (t, &w)) in range.zip(s.iter()).enumerate() {
                    let (prob, dense_mass) = scores[t];
                    sink(TokenScore {
                        sentence: start + i,
                        position: pos,
                        word: w,
                        prob,
                        dense_mass,
                    })?;
                }
            }
            start = end;
        }
        Ok(())
    }

    fn predict(&self, prefix: &[WordId]) -> Result<Vec<T>> {
        let j = self.vocab.len();
        if let Some(&w) = prefix.iter().find(|&&w| w as usize >= j) {
            return Err(Error::WordOutOfRange {
                id: w as usize,
                size: j,
            });
        }
        let mut sentence = prefix.to_vec();
        sentence.push(self.vocab.eos_id());
        let rows = self.rows(std::iter::once(sentence.as_slice()))?;
        let last = rows.len() - 1;
        let n = self.spec.order;
        let history: Vec<WordId> = std::iter::repeat(self.vocab.bos_id())
            .take(n - 1)
            .chain(prefix.iter().copied())
            .collect();
        let h = history.len();
        let mut columns = Vec::with_capacity(rows.columns);
        for s in &self.smoothers {
            for m in 1..=n {
                columns.push(s.column(&history[h + 1 - m..])?);
            }
        }
        let identity = self.spec.kind.has_identity_block();
        let dists = ContextDistributions::new(columns, identity, j)?;
        let lambda = if !self.uses_network() {
            let fb = rows.row_fallbacks(last);
            let alphas: Vec<T> = fb[1..].iter().rev().copied().collect();
            heuristic_lambda(&alphas)
        } else {
            let net = self.net.as_ref().expect("network model");
            let input = match net.config().architecture {
                Architecture::Ff => NetInput {
                    features: Tensor::from_vec(
                        1,
                        rows.feature_width,
                        rows.row_features(last).to_vec(),
                    ),
                    words: rows.row_words(last).to_vec(),
                    steps: Vec::new(),
                },
                Architecture::Lstm => assemble(Architecture::Lstm, &[(&rows, &[0][..])]).input,
            };
            let logits = net.eval_logits(&input)?;
            let z = logits.row(logits.rows() - 1);
            let mut valid: Vec<bool> = if self.mask_count_columns {
                vec![false; rows.columns]
            } else {
                rows.row_valid(last).to_vec()
            };
            valid.resize(z.len(), true);
            masked_softmax(z, &valid)
        };
        full_distribution(&dists, &MixtureWeights::new_unchecked(lambda))
    }
}

/// Network inputs for whole sentences drawn from one or more row sets.
pub(crate) struct Batch<T> {
    pub input: NetInput<T>,
    /// `(row set, token)` of each network row.
    pub order: Vec<(usize, usize)>,
}

/// Lays out the sentences `parts[i].1` of row set `parts[i].0`: in order
/// for feed-forward networks, step-major and longest first for the LSTM.
pub(crate) fn assemble<T: Scalar>(
    arch: Architecture,
    parts: &[(&TokenRows<T>, &[usize])],
) -> Batch<T> {
    let mut order = Vec::new();
    let mut steps = Vec::new();
    match arch {
        Architecture::Ff => {
            for (set, (rows, sents)) in parts.iter().enumerate() {
                for &s in *sents {
                    order.extend(rows.sentence(s).map(|t| (set, t)));
                }
            }
        }
        Architecture::Lstm => {
            let mut seqs: Vec<(usize, std::ops::Range<usize>)> = parts
                .iter()
                .enumerate()
                .flat_map(|(set, (rows, sents))| {
                    sents.iter().map(move |&s| (set, rows.sentence(s)))
                })
                .collect();
            seqs.sort_by_key(|(_, r)| std::cmp::Reverse(r.len()));
            let longest = seqs.first().map_or(0, |(_, r)| r.len());
            for t in 0..longest {
                let live = seqs.iter().take_while(|(_, r)| r.len() > t).count();
                steps.push(live);
                order.extend(seqs[..live].iter().map(|(set, r)| (*set, r.start + t)));
            }
        }
    }
    let (fw, cw) = parts
        .first()
        .map_or((0, 0), |(r, _)| (r.feature_width, r.context_words));
    let mut features = Vec::with_capacity(order.len() * fw);
    let mut words = Vec::with_capacity(order.len() * cw);
    for &(set, t) in &order {
        features.extend_from_slice(parts[set].0.row_features(t));
        words.extend_from_slice(parts[set].0.row_words(t));
    }
    Batch {
        input: NetInput {
            features: Tensor::from_vec(order.len(), fw, features),
            words,
            steps,
        },
        order,
    }
}
