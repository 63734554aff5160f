use std::fmt;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{assemble, Model};
use super::rows::TokenRows;
use super::{CountSource, ModelKind, ModelSpec};
use crate::corpus::{EncodedCorpus, Vocabulary, WordId};
use crate::counts::{CountKind, FoldedCounts, NGramCountStore};
use crate::error::{Error, Result};
use crate::neural::{block_dropped, Adam, Graph, LambdaNet, MixtureTargets, NodeId, ParamSet};
use crate::scalar::Scalar;
use crate::smoothing::Smoother;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Whole sentences are grouped until a minibatch holds this many
    /// target words.
    pub minibatch_words: usize,
    pub learning_rate: f64,
    pub eval_interval_words: u64,
    pub max_epochs: usize,
    /// Evaluations without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Cross-validation folds for training-time count columns; below 2
    /// trains on the full counts.
    pub cv_folds: usize,
    pub clip_norm: f64,
    /// Verifies each cross-validation view against the full counts.
    pub audit_cv: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            minibatch_words: 512,
            learning_rate: 0.001,
            eval_interval_words: 100_000,
            max_epochs: 20,
            patience: 5,
            seed: 1,
            cv_folds: 10,
            clip_norm: 5.0,
            audit_cv: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch_words == 0
            || self.eval_interval_words == 0
            || self.max_epochs == 0
            || self.patience == 0
        {
            return Err(Error::InvalidArgument(
                "training sizes must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate and clip norm must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One periodic dev evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub words: u64,
    /// Mean training NLL per word since the previous entry.
    pub train_nll: f64,
    pub dev_ppl: f64,
    pub dense_ratio: Option<f64>,
    pub words_per_sec: f64,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "time={} words={} train_nll={:.6} dev_ppl={:.4}",
            self.timestamp, self.words, self.train_nll, self.dev_ppl
        )?;
        if let Some(d) = self.dense_ratio {
            write!(f, " dense_ratio={d:.4}")?;
        }
        write!(f, " words_per_sec={:.1}", self.words_per_sec)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
    pub best_dev_ppl: Option<f64>,
    pub diverged: bool,
    /// Training tokens no count column could predict (left out of the loss).
    pub skipped_tokens: usize,
}

/// Trains the network of `spec` on `train_corpus` with Adam, keeping the
/// parameters with the best dev likelihood. Heuristic models are returned
/// as is.
pub fn train<T: Scalar>(
    spec: ModelSpec,
    vocab: Arc<Vocabulary>,
    counts: Option<CountSource>,
    train_corpus: Arc<EncodedCorpus>,
    dev: &EncodedCorpus,
    config: &TrainingConfig,
    on_log: &mut dyn FnMut(&LogEntry),
) -> Result<(Model<T>, TrainingLog)> {
    config.validate()?;
    if spec.kind == ModelKind::HeuristicNGram {
        let counts = counts
            .ok_or_else(|| Error::InvalidArgument("a heuristic model needs counts".into()))?;
        return Ok((
            Model::heuristic(spec, vocab, counts)?,
            TrainingLog::default(),
        ));
    }
    if train_corpus.is_empty() || dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    train_corpus.validate(&vocab)?;
    dev.validate(&vocab)?;
    let mut model = Model::<T>::shell(spec, vocab, counts)?;
    model.seed = config.seed;
    let mut log = TrainingLog::default();

    let mut sets = training_rows(&model, &train_corpus, config)?;
    if model.spec.kind == ModelKind::NeurallyInterpolatedNGram {
        log.skipped_tokens = sets.iter_mut().map(TokenRows::deactivate_unreachable).sum();
    }
    let width = model.feature_width();
    let total: usize = sets.iter().map(TokenRows::len).sum();
    let mut mean = vec![T::zero(); width];
    for s in &sets {
        for (m, x) in mean.iter_mut().zip(s.feature_sum()) {
            *m += x;
        }
    }
    let n = T::of(total.max(1) as f64);
    mean.iter_mut().for_each(|m| *m /= n);
    for s in &mut sets {
        s.normalize(&mean);
    }
    model.feature_mean = mean;
    let dev_rows = model.rows(dev.sentences().iter().map(Vec::as_slice))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net_config = model.spec.network.clone().expect("validated");
    model.net = Some(LambdaNet::new(
        net_config.clone(),
        model.net_shape(),
        &mut rng,
    )?);

    let mut adam = Adam::<T>::new(config.learning_rate);
    let mut refs: Vec<(usize, usize)> = sets
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.sentences()).map(move |j| (i, j)))
        .collect();
    let kind = model.spec.kind;
    let identity = kind.has_identity_block();
    let use_dropout = matches!(kind, ModelKind::NeuralLM | ModelKind::Hybrid);
    let block_rate = if kind == ModelKind::Hybrid {
        net_config.block_dropout_rate
    } else {
        0.0
    };

    let mut best: Option<(f64, ParamSet<T>)> = None;
    let mut stale = 0;
    let mut words: u64 = 0;
    let (mut since_words, mut since_nll) = (0u64, 0.0f64);
    let mut clock = Instant::now();
    let mut stop = false;

    'epochs: for _ in 0..config.max_epochs {
        refs.shuffle(&mut rng);
        let mut i = 0;
        while i < refs.len() {
            let mut batch_refs = Vec::new();
            let mut batch_words = 0;
            while i < refs.len() && batch_words < config.minibatch_words {
                let (s, j) = refs[i];
                batch_words += sets[s].sentence(j).len();
                batch_refs.push(refs[i]);
                i += 1;
            }
            let net = model.net.as_mut().expect("network created");
            match train_step(
                net,
                &sets,
                &batch_refs,
                identity,
                use_dropout,
                block_rate,
                config,
                &mut adam,
                &mut rng,
            ) {
                Ok(Some((sum, count))) => {
                    words += count as u64;
                    since_words += count as u64;
                    since_nll += sum;
                }
                Ok(None) => {}
                Err(e) if e.is_numeric() => {
                    log.diverged = true;
                    stop = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            if since_words >= config.eval_interval_words {
                let entry = evaluate(&model, &dev_rows, words, since_nll, since_words, clock)?;
                on_log(&entry);
                stale = if improve(&mut best, &entry, &model) {
                    0
                } else {
                    stale + 1
                };
                log.entries.push(entry);
                since_words = 0;
                since_nll = 0.0;
                clock = Instant::now();
                if stale >= config.patience {
                    stop = true;
                    break 'epochs;
                }
            }
        }
    }
    if !stop && since_words > 0 {
        let entry = evaluate(&model, &dev_rows, words, since_nll, since_words, clock)?;
        on_log(&entry);
        improve(&mut best, &entry, &model);
        log.entries.push(entry);
    }
    match best {
        Some((ppl, params)) => {
            log.best_dev_ppl = Some(ppl);
            *model.net.as_mut().expect("network created").params_mut() = params;
        }
        None if log.diverged => return Err(Error::Divergence { words }),
        None => {}
    }
    Ok((model, log))
}

fn improve<T: Scalar>(
    best: &mut Option<(f64, ParamSet<T>)>,
    entry: &LogEntry,
    model: &Model<T>,
) -> bool {
    if !entry.dev_ppl.is_finite() || best.as_ref().is_some_and(|(b, _)| entry.dev_ppl >= *b) {
        return false;
    }
    *best = Some((
        entry.dev_ppl,
        model
            .net
            .as_ref()
            .expect("network created")
            .params()
            .clone(),
    ));
    true
}

fn evaluate<T: Scalar>(
    model: &Model<T>,
    dev_rows: &TokenRows<T>,
    words: u64,
    since_nll: f64,
    since_words: u64,
    clock: Instant,
) -> Result<LogEntry> {
    let scores = model.score_rows(dev_rows)?;
    let mut nll = 0.0;
    let mut dense = 0.0;
    for (t, &(p, d)) in scores.iter().enumerate() {
        let p = p.to_f64_lossy();
        if !(p > 0.0) {
            return Err(Error::ZeroProbability {
                context: Vec::new(),
                word: dev_rows.targets[t],
            });
        }
        nll -= p.ln();
        dense += d.map_or(0.0, |d| d.to_f64_lossy());
    }
    let n = scores.len().max(1) as f64;
    let elapsed = clock.elapsed().as_secs_f64();
    Ok(LogEntry {
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        words,
        train_nll: since_nll / since_words.max(1) as f64,
        dev_ppl: (nll / n).exp(),
        dense_ratio: model.has_dense().then_some(dense / n),
        words_per_sec: if elapsed > 0.0 {
            since_words as f64 / elapsed
        } else {
            0.0
        },
    })
}

impl<T: Scalar> Model<T> {
    fn has_dense(&self) -> bool {
        self.spec.kind == ModelKind::Hybrid
    }
}

/// One Adam update on a minibatch; returns the summed NLL and the number of
/// tokens in the loss.
#[allow(clippy::too_many_arguments)]
fn train_step<T: Scalar>(
    net: &mut LambdaNet<T>,
    sets: &[TokenRows<T>],
    batch: &[(usize, usize)],
    identity: bool,
    use_dropout: bool,
    block_rate: f64,
    config: &TrainingConfig,
    adam: &mut Adam<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(f64, usize)>> {
    let mut grouped: Vec<Vec<usize>> = vec![Vec::new(); sets.len()];
    for &(s, j) in batch {
        grouped[s].push(j);
    }
    let parts: Vec<(&TokenRows<T>, &[usize])> = sets
        .iter()
        .zip(&grouped)
        .filter(|(_, g)| !g.is_empty())
        .map(|(s, g)| (s, g.as_slice()))
        .collect();
    let Some((g, loss, count)) = batch_graph(net, &parts, identity, use_dropout, block_rate, rng)?
    else {
        return Ok(None);
    };
    let mean = g.value(loss).data()[0].to_f64_lossy();
    if !mean.is_finite() {
        return Err(Error::Divergence { words: 0 });
    }
    let params = net.params_mut();
    params.zero_grads();
    g.backward(loss, params)?;
    params.clip_grad_norm(T::of(config.clip_norm));
    adam.step(params)?;
    Ok(Some((mean * count as f64, count)))
}

/// Training rows, one set per cross-validation fold (or a single set over
/// the full counts).
fn training_rows<T: Scalar>(
    model: &Model<T>,
    corpus: &EncodedCorpus,
    config: &TrainingConfig,
) -> Result<Vec<TokenRows<T>>> {
    let layout = model.layout();
    let bos = model.vocab.bos_id();
    let sentences = corpus.sentences();
    if !layout.count_columns || config.cv_folds < 2 {
        let sources: Vec<&Smoother> = model.smoothers.iter().map(|s| s.as_ref()).collect();
        let rows = TokenRows::build(&sources, layout, bos, sentences.iter().map(Vec::as_slice))?;
        return Ok(vec![rows]);
    }
    let folded = FoldedCounts::new(
        Arc::new(corpus.clone()),
        model.vocab.clone(),
        model.spec.order,
        config.cv_folds,
    )?;
    let mut sets = Vec::with_capacity(config.cv_folds);
    for f in 0..config.cv_folds {
        let view = Arc::new(folded.view(f)?);
        if config.audit_cv {
            let full = &model.counts.as_ref().expect("count model").store;
            audit_view(
                &view,
                full,
                folded.fold_sentences(f).map(|i| sentences[i].as_slice()),
                bos,
            )?;
        }
        let primary = Smoother::new(view, model.spec.smoothing.clone())?;
        let mut sources: Vec<&Smoother> = vec![&primary];
        sources.extend(model.smoothers[1..].iter().map(|s| s.as_ref()));
        let rows = TokenRows::build(
            &sources,
            layout,
            bos,
            folded.fold_sentences(f).map(|i| sentences[i].as_slice()),
        )?;
        sets.push(rows);
    }
    Ok(sets)
}

/// Checks that a held-out view holds exactly the full counts minus the
/// held-out sentences' own n-grams, so no sentence sees its own counts.
fn audit_view<'a>(
    view: &NGramCountStore,
    full: &NGramCountStore,
    held_out: impl Iterator<Item = &'a [WordId]>,
    bos: WordId,
) -> Result<()> {
    let n = view.order();
    let grams = |s: &[WordId]| {
        let mut padded = vec![bos; n - 1];
        padded.extend_from_slice(s);
        let mut out = Vec::new();
        for end in n - 1..padded.len() {
            for m in 1..=n {
                out.push(padded[end + 1 - m..=end].to_vec());
            }
        }
        out
    };
    let held: Vec<&[WordId]> = held_out.collect();
    let mut own = std::collections::HashMap::<Vec<WordId>, u64>::new();
    for s in &held {
        for g in grams(s) {
            *own.entry(g).or_default() += 1;
        }
    }
    for (gram, &c) in &own {
        let (ctx, w) = gram.split_at(gram.len() - 1);
        let in_view = view.count(ctx, w[0], CountKind::Raw)?;
        let in_full = full.count(ctx, w[0], CountKind::Raw)?;
        if in_view + c != in_full {
            return Err(Error::InvalidArgument(format!(
                "count view holds {in_view} of n-gram {gram:?}, expected {} outside its fold",
                in_full.saturating_sub(c)
            )));
        }
    }
    Ok(())
}

/// Mean-per-word training loss graph over sentences of `rows`.
fn batch_graph<T: Scalar>(
    net: &LambdaNet<T>,
    parts: &[(&TokenRows<T>, &[usize])],
    identity: bool,
    use_dropout: bool,
    block_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(Graph<T>, NodeId, usize)>> {
    let b = assemble(net.config().architecture, parts);
    let k = parts[0].0.columns;
    let mut targets = MixtureTargets {
        count_columns: k,
        identity,
        column_values: Vec::with_capacity(b.order.len() * k),
        valid: Vec::with_capacity(b.order.len() * k),
        targets: Vec::with_capacity(b.order.len()),
        active: Vec::with_capacity(b.order.len()),
    };
    for &(set, t) in &b.order {
        let rows = parts[set].0;
        targets.column_values.extend_from_slice(rows.row_values(t));
        if k > 0 && block_dropped(block_rate, rng) {
            targets.valid.extend(std::iter::repeat(false).take(k));
        } else {
            targets.valid.extend_from_slice(rows.row_valid(t));
        }
        targets.targets.push(rows.targets[t]);
        targets.active.push(rows.active[t]);
    }
    let count = targets.active.iter().filter(|&&a| a).count();
    if count == 0 {
        return Ok(None);
    }
    let mut g = Graph::new();
    let logits = net.logits(
        &mut g,
        &b.input,
        if use_dropout { Some(&mut *rng) } else { None },
    )?;
    let weight = T::one() / T::of(count as f64);
    let loss = g.mixture_nll(logits, targets, weight)?;
    Ok(Some((g, loss, count)))
}

/// The training loss of `net` on sentences `sentences` of `rows`, exactly
/// as a minibatch step builds it. Dropout and block dropout draw from `rng`
/// when given.
pub fn minibatch_loss<T: Scalar>(
    net: &LambdaNet<T>,
    rows: &TokenRows<T>,
    sentences: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Option<(Graph<T>, NodeId)>> {
    let identity = net.shape().identity;
    let mut fallback = ChaCha8Rng::seed_from_u64(0);
    let (use_dropout, block_rate, rng) = match rng {
        Some(r) => (true, net.config().block_dropout_rate, r),
        None => (false, 0.0, &mut fallback),
    };
    Ok(batch_graph(
        net,
        &[(rows, sentences)],
        identity,
        use_dropout,
        block_rate,
        rng,
    )?
    .map(|(g, l, _)| (g, l)))
}
