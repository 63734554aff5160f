use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use modlm::corpus::{build_vocabulary, read_lines, EncodedCorpus, Vocabulary};
use modlm::counts::{FoldedCounts, NGramCountStore};
use modlm::eval::{evaluate, perplexity, throughput, BucketSpec};
use modlm::models::{
    attach_count_source, load_model, save_model, train as train_model, CountSource, LanguageModel,
    ModelSpec, StaticInterpolation, TrainingConfig,
};
use modlm::neural::{Architecture, InputFeatures, NetworkConfig};
use modlm::smoothing::{DiscountPolicy, Family, SmoothingSpec};
use modlm::Model;

use crate::args::{
    BuildVocabArgs, CountArgs, DiscountArg, DistArg, EvalArgs, FeaturesArg, InterpArgs, ModelArg,
    NetArg, TrainArgs,
};
use crate::config::render;
use crate::{usage, UsageError};

fn required<T: Clone>(value: &Option<T>, flag: &str) -> anyhow::Result<T> {
    match value {
        Some(v) => Ok(v.clone()),
        None => usage(format!("--{flag} is required")),
    }
}

fn canonical(path: &Path) -> anyhow::Result<PathBuf> {
    path.canonicalize()
        .with_context(|| format!("cannot resolve {}", path.display()))
}

fn load_vocab(path: &Path) -> anyhow::Result<Vocabulary> {
    Ok(Vocabulary::load(path)?)
}

fn load_store(path: &Path, vocab: &Vocabulary) -> anyhow::Result<NGramCountStore> {
    let store = NGramCountStore::load(path)?;
    store
        .check_vocabulary(vocab)
        .with_context(|| format!("{} does not match the vocabulary", path.display()))?;
    Ok(store)
}

pub fn build_vocab(a: BuildVocabArgs) -> anyhow::Result<()> {
    print!("{}", render("build-vocab", &a));
    let input = required(&a.input, "input")?;
    let output = required(&a.output, "output")?;
    if a.max_size == Some(0) {
        return usage("--max-size must be positive");
    }
    let lines = read_lines(&input)?;
    let vocab = build_vocabulary(&lines, a.max_size)?;
    vocab.save(&output)?;
    println!(
        "vocabulary: J={} words ({} lines) -> {}",
        vocab.len(),
        lines.len(),
        output.display()
    );
    Ok(())
}

pub fn count(a: CountArgs) -> anyhow::Result<()> {
    print!("{}", render("count", &a));
    let vocab = load_vocab(&required(&a.vocab, "vocab")?)?;
    let output = required(&a.output, "output")?;
    if a.order == Some(0) {
        return usage("--order must be at least 1");
    }
    let (store, corpus) = match (&a.import_text, &a.input) {
        (Some(_), Some(_)) => return usage("--import-text and --input are exclusive"),
        (None, None) => return usage("one of --input or --import-text is required"),
        (Some(dump), None) => {
            if a.cv_folds.is_some() {
                return usage("--cv-folds needs a corpus (--input)");
            }
            let f = File::open(dump).with_context(|| format!("cannot open {}", dump.display()))?;
            (
                NGramCountStore::read_text(BufReader::new(f), &vocab, a.order)?,
                None,
            )
        }
        (None, Some(input)) => {
            let order = required(&a.order, "order")?;
            let corpus = EncodedCorpus::read(input, &vocab)?;
            (
                NGramCountStore::accumulate(&corpus, &vocab, order)?,
                Some(corpus),
            )
        }
    };
    store.save(&output)?;
    if let Some(path) = &a.export_text {
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(f);
        store.write_text(&vocab, &mut w)?;
        w.flush()?;
    }
    let sizes: Vec<String> = (1..=store.order())
        .map(|n| store.ngram_count(n).to_string())
        .collect();
    println!(
        "order {} n-grams per order [{}] -> {}",
        store.order(),
        sizes.join(", "),
        output.display()
    );
    if let (Some(folds), Some(corpus)) = (a.cv_folds, corpus) {
        let folded = FoldedCounts::new(Arc::new(corpus), Arc::new(vocab), store.order(), folds)?;
        for f in 0..folds {
            let path = PathBuf::from(format!("{}.cv{f}", output.display()));
            folded.view(f)?.save(&path)?;
            println!("held-out view {f} -> {}", path.display());
        }
    }
    Ok(())
}

fn reject(given: bool, flag: &str, model: &str) -> anyhow::Result<()> {
    if given {
        return usage(format!("--{flag} does not apply to --model {model}"));
    }
    Ok(())
}

fn smoothing(a: &TrainArgs) -> SmoothingSpec {
    SmoothingSpec {
        family: match a.dist.unwrap_or(DistArg::Kn) {
            DistArg::Ml => Family::Ml,
            DistArg::Kn => Family::Kn,
        },
        discounts: match a.discounts.unwrap_or(DiscountArg::Modified) {
            DiscountArg::Modified => DiscountPolicy::Modified,
            DiscountArg::Single => DiscountPolicy::Single,
        },
    }
}

fn network(a: &TrainArgs, model: ModelArg) -> anyhow::Result<NetworkConfig> {
    let default_net = if model == ModelArg::Ninterp {
        NetArg::Ff
    } else {
        NetArg::Lstm
    };
    let cfg = NetworkConfig {
        architecture: match a.net.unwrap_or(default_net) {
            NetArg::Ff => Architecture::Ff,
            NetArg::Lstm => Architecture::Lstm,
        },
        hidden_size: a.hidden_size.unwrap_or(200),
        embedding_size: a.embedding_size.unwrap_or(200),
        input_features: match a.features.unwrap_or(FeaturesArg::C) {
            FeaturesArg::C => InputFeatures::C,
            FeaturesArg::Cr => InputFeatures::Cr,
        },
        dropout_rate: if model == ModelArg::Ninterp {
            0.0
        } else {
            a.dropout.unwrap_or(0.5)
        },
        block_dropout_rate: if model == ModelArg::Hybrid {
            a.block_dropout.unwrap_or(0.5)
        } else {
            0.0
        },
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

fn training_config(a: &TrainArgs) -> anyhow::Result<TrainingConfig> {
    let d = TrainingConfig::default();
    let cfg = TrainingConfig {
        minibatch_words: a.minibatch_words.unwrap_or(d.minibatch_words),
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        eval_interval_words: a.eval_interval.unwrap_or(d.eval_interval_words),
        max_epochs: a.max_epochs.unwrap_or(d.max_epochs),
        patience: a.patience.unwrap_or(d.patience),
        seed: a.seed.unwrap_or(d.seed),
        cv_folds: a.cv_folds.unwrap_or(d.cv_folds),
        clip_norm: a.clip_norm.unwrap_or(d.clip_norm),
        audit_cv: a.audit_cv.unwrap_or(d.audit_cv),
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

fn build_spec(a: &TrainArgs, model: ModelArg, order: usize) -> anyhow::Result<ModelSpec> {
    let name = format!("{model:?}").to_lowercase();
    let net_flags = a.net.is_some() || a.hidden_size.is_some() || a.embedding_size.is_some();
    match model {
        ModelArg::HeurNgram => {
            reject(net_flags, "net", &name)?;
            reject(a.features.is_some(), "features", &name)?;
            reject(a.dropout.is_some(), "dropout", &name)?;
            reject(a.block_dropout.is_some(), "block-dropout", &name)?;
            reject(!a.extra_counts.is_empty(), "extra-counts", &name)?;
            Ok(ModelSpec::heuristic(order, smoothing(a)))
        }
        ModelArg::Ninterp => {
            reject(a.dropout.is_some(), "dropout", &name)?;
            reject(a.block_dropout.is_some(), "block-dropout", &name)?;
            Ok(ModelSpec::neurally_interpolated(
                order,
                smoothing(a),
                network(a, model)?,
            ))
        }
        ModelArg::Neural => {
            reject(a.dist.is_some(), "dist", &name)?;
            reject(a.discounts.is_some(), "discounts", &name)?;
            reject(a.features.is_some(), "features", &name)?;
            reject(a.block_dropout.is_some(), "block-dropout", &name)?;
            reject(a.counts.is_some(), "counts", &name)?;
            reject(!a.extra_counts.is_empty(), "extra-counts", &name)?;
            Ok(ModelSpec::neural_lm(order, network(a, model)?))
        }
        ModelArg::Hybrid => {
            reject(a.features.is_some(), "features", &name)?;
            Ok(ModelSpec::hybrid(order, smoothing(a), network(a, model)?))
        }
    }
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    print!("{}", render("train", &a));
    let model_arg = required(&a.model, "model")?;
    let order = a.order.unwrap_or(5);
    if order == 0 {
        return usage("--order must be at least 1");
    }
    let mut spec = build_spec(&a, model_arg, order)?;
    let config = training_config(&a)?;
    let vocab_path = canonical(&required(&a.vocab, "vocab")?)?;
    let output = required(&a.output, "output")?;
    let has_net = spec.kind.has_network();
    if has_net && (a.train.is_none() || a.dev.is_none()) {
        return usage("--train and --dev are required for trained models");
    }
    let vocab = Arc::new(load_vocab(&vocab_path)?);
    let train_corpus = match &a.train {
        Some(p) => Some(Arc::new(EncodedCorpus::read(p, &vocab)?)),
        None => None,
    };

    let counts = if spec.kind.has_count_columns() {
        let path = match &a.counts {
            Some(p) => p.clone(),
            None => {
                let Some(corpus) = &train_corpus else {
                    return usage("--counts or --train is required");
                };
                let path = output.with_extension("cnt");
                NGramCountStore::accumulate(corpus, &vocab, order)?.save(&path)?;
                println!("counted training data -> {}", path.display());
                path
            }
        };
        let store = load_store(&path, &vocab)?;
        Some(CountSource {
            store: Arc::new(store),
            path: Some(canonical(&path)?),
        })
    } else {
        None
    };
    for extra in &a.extra_counts {
        let store = load_store(extra, &vocab)?;
        let src = CountSource {
            store: Arc::new(store),
            path: Some(canonical(extra)?),
        };
        spec = attach_count_source(&spec, &vocab, src)?;
    }

    let log_path = a
        .log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.log", output.display())));
    let (mut model, log) = if has_net {
        let dev = EncodedCorpus::read(required(&a.dev, "dev")?, &vocab)?;
        let mut log_file = BufWriter::new(
            File::create(&log_path)
                .with_context(|| format!("cannot create {}", log_path.display()))?,
        );
        let mut write_err = None;
        let result = train_model::<f64>(
            spec,
            vocab.clone(),
            counts.clone(),
            train_corpus.expect("checked above"),
            &dev,
            &config,
            &mut |entry| {
                println!("{entry}");
                if let Err(e) = writeln!(log_file, "{entry}").and_then(|_| log_file.flush()) {
                    write_err.get_or_insert(e);
                }
            },
        )?;
        if let Some(e) = write_err {
            return Err(e).with_context(|| format!("cannot write {}", log_path.display()));
        }
        (result.0, Some(result.1))
    } else {
        (
            Model::heuristic(spec, vocab.clone(), counts.clone().expect("count model"))?,
            None,
        )
    };
    model.set_paths(Some(vocab_path), counts.and_then(|c| c.path));
    save_model(&model, &output)?;
    match &log {
        Some(log) => {
            if log.skipped_tokens > 0 {
                println!(
                    "{} training tokens had no count support under held-out counts",
                    log.skipped_tokens
                );
            }
            match log.best_dev_ppl {
                Some(p) => println!("saved {} (best dev ppl {p:.4})", output.display()),
                None => println!("saved {}", output.display()),
            }
            if log.diverged {
                let words = log.entries.last().map_or(0, |e| e.words);
                return Err(anyhow::Error::new(modlm::Error::Divergence { words }))
                    .context("training diverged; the best checkpoint was saved");
            }
        }
        None => println!("saved {}", output.display()),
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    print!("{}", render("eval", &a));
    let model_path = required(&a.model, "model")?;
    let input = required(&a.input, "input")?;
    let model: Model = load_model(&model_path)?;
    if a.dense_ratio == Some(true) && !model.has_dense_ratio() {
        return usage("--dense-ratio needs a hybrid model");
    }
    let buckets = match &a.buckets {
        Some(thresholds) => {
            if thresholds.windows(2).any(|w| w[1] <= w[0]) {
                return usage("--buckets must be strictly ascending");
            }
            let train_counts = match (&a.train_counts, model.smoothers().first()) {
                (Some(p), _) => load_store(p, model.vocab())?.unigram_counts(),
                (None, Some(s)) => s.store().unigram_counts(),
                (None, None) => {
                    return usage("--buckets needs --train-counts for a model without counts")
                }
            };
            Some(BucketSpec {
                thresholds: thresholds.clone(),
                train_counts,
                disjoint: a.disjoint_buckets.unwrap_or(false),
            })
        }
        None => None,
    };
    let corpus = EncodedCorpus::read(&input, model.vocab())?;
    let mut report = evaluate(&model, &corpus, buckets.as_ref())?;
    if a.dense_ratio != Some(true) {
        report.dense_ratio = None;
    }
    if a.throughput == Some(true) {
        report.words_per_second = Some(throughput(&model, &corpus)?);
    }
    print!("{}", report.to_text());
    if let Some(p) = &a.report {
        std::fs::write(p, report.to_key_values())
            .with_context(|| format!("cannot write {}", p.display()))?;
    }
    if let Some(p) = &a.bucket_table {
        if buckets.is_none() {
            return usage("--bucket-table needs --buckets");
        }
        std::fs::write(p, report.bucket_table())
            .with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

pub fn interp_em(a: InterpArgs) -> anyhow::Result<()> {
    print!("{}", render("interp-em", &a));
    if a.models.len() < 2 {
        return usage("--models needs at least two model files");
    }
    let valid_path = required(&a.valid, "valid")?;
    let output = required(&a.output, "output")?;
    let tol = a.tol.unwrap_or(1e-6);
    let max_iters = a.max_iters.unwrap_or(200);
    if !(tol >= 0.0) || max_iters == 0 {
        return usage("--tol must be non-negative and --max-iters positive");
    }
    let models: Vec<Model> = a
        .models
        .iter()
        .map(load_model)
        .collect::<modlm::Result<_>>()?;
    let vocab = models[0].vocab().clone();
    let valid = EncodedCorpus::read(&valid_path, &vocab)?;
    let test = match &a.test {
        Some(p) => Some(EncodedCorpus::read(p, &vocab)?),
        None => None,
    };
    let refs: Vec<&dyn LanguageModel<f64>> = models
        .iter()
        .map(|m| m as &dyn LanguageModel<f64>)
        .collect();
    let (mix, em) = StaticInterpolation::fit(refs, valid.sentences(), tol, max_iters)?;
    for (m, path) in models.iter().zip(&a.models) {
        let v = perplexity(m, &valid)?.perplexity;
        let t = test.as_ref().map(|t| perplexity(m, t)).transpose()?;
        match t {
            Some(t) => println!(
                "component {}: valid ppl {v:.4} test ppl {:.4}",
                path.display(),
                t.perplexity
            ),
            None => println!("component {}: valid ppl {v:.4}", path.display()),
        }
    }
    let mut text = String::new();
    for (w, path) in mix.weights().iter().zip(&a.models) {
        text.push_str(&format!("{w}\t{}\n", path.display()));
    }
    std::fs::write(&output, text).with_context(|| format!("cannot write {}", output.display()))?;
    println!(
        "weights [{}] after {} iterations -> {}",
        fmt_weights(mix.weights()),
        em.iterations(),
        output.display()
    );
    println!(
        "combined valid ppl {:.4}",
        perplexity(&mix, &valid)?.perplexity
    );
    if let Some(t) = &test {
        println!("combined test ppl {:.4}", perplexity(&mix, t)?.perplexity);
    }
    Ok(())
}

fn fmt_weights(w: &[f64]) -> String {
    w.iter()
        .map(|x| format!("{x:.6}"))
        .collect::<Vec<_>>()
        .join(", ")
}
