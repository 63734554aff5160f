//! Check bodies shared by the test targets and the acceptance report.

use std::sync::Arc;

use modlm::corpus::{build_vocabulary, EncodedCorpus, Vocabulary};
use modlm::counts::{CountKind, FoldedCounts, NGramCountStore};
use modlm::eval::perplexity;
use modlm::mixture::{full_distribution, mask_and_renormalize, ContextDistributions};
use modlm::models::{
    em_static_weights, minibatch_loss, train, LambdaSource, LanguageModel, ModelSpec,
    TrainingConfig, TrainingLog,
};
use modlm::neural::{
    gradient_check, masked_softmax, Architecture, Graph, InputFeatures, LambdaNet, MixtureTargets,
    NetInput, NetShape, NetworkConfig, ParamSet, Tensor,
};
use modlm::smoothing::{DiscountPolicy, Family, Smoother, SmoothingSpec};
use modlm::Model;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{modified_discounts, recursive_prob, BruteCounts, OracleSmoothing};

pub const CASES: u32 = 48;

pub fn setup(
    lines: &[String],
    order: usize,
) -> (Arc<Vocabulary>, EncodedCorpus, Arc<NGramCountStore>) {
    let v = build_vocabulary(lines, None).unwrap();
    let c = EncodedCorpus::encode(lines, &v);
    let s = NGramCountStore::accumulate(&c, &v, order).unwrap();
    (Arc::new(v), c, Arc::new(s))
}

fn specs(order: usize, fixed: f64) -> Vec<SmoothingSpec> {
    vec![
        SmoothingSpec::ml(),
        SmoothingSpec::kn(),
        SmoothingSpec {
            family: Family::Kn,
            discounts: DiscountPolicy::Single,
        },
        SmoothingSpec {
            family: Family::Kn,
            discounts: DiscountPolicy::Fixed(vec![fixed; order]),
        },
    ]
}

/// Every context of every order that occurs in the data, plus a few that
/// do not.
fn contexts(b: &BruteCounts) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = Vec::new();
    for n in 1..=b.order {
        let mut cs: Vec<Vec<u32>> = b.raw[n - 1].keys().map(|g| g[..n - 1].to_vec()).collect();
        cs.sort();
        cs.dedup();
        out.extend(cs);
        if n > 1 {
            out.push(vec![2; n - 1]);
            out.push(
                (0..n as u32 - 1)
                    .map(|i| 2 + i % (b.vocab_size as u32 - 2))
                    .collect(),
            );
        }
    }
    out
}

pub fn columns_are_normalized_cases() -> impl Strategy<Value = (Vec<String>, usize, f64)> {
    (super::corpus_strategy(30), 1usize..=4, 0.0f64..=1.0)
}

pub fn columns_are_normalized(
    (lines, order, fixed): (Vec<String>, usize, f64),
) -> Result<(), TestCaseError> {
    let (v, c, store) = setup(&lines, order);
    let b = BruteCounts::new(c.sentences(), v.len(), order);
    for spec in specs(order, fixed) {
        let sm = Smoother::new(store.clone(), spec).unwrap();
        for ctx in contexts(&b) {
            let col = sm.column::<f64>(&ctx).unwrap();
            let dense: f64 = (0..v.len() as u32)
                .map(|w| sm.entry::<f64>(&ctx, w).unwrap().prob)
                .sum();
            if col.is_masked() {
                prop_assert_eq!(dense, 0.0);
            } else {
                prop_assert!(
                    (col.total() - 1.0).abs() < 1e-6,
                    "column sums to {}",
                    col.total()
                );
                prop_assert!((dense - 1.0).abs() < 1e-6, "entries sum to {}", dense);
            }
        }
    }
    Ok(())
}

pub fn mixtures_are_normalized_cases() -> impl Strategy<Value = (Vec<String>, usize, Vec<f64>, bool)>
{
    (
        super::corpus_strategy(30),
        1usize..=4,
        prop::collection::vec(-8.0f64..8.0, 64),
        any::<bool>(),
    )
}

pub fn mixtures_are_normalized(
    (lines, order, logits, identity): (Vec<String>, usize, Vec<f64>, bool),
) -> Result<(), TestCaseError> {
    let (v, c, store) = setup(&lines, order);
    let b = BruteCounts::new(c.sentences(), v.len(), order);
    let sm = Smoother::new(store, SmoothingSpec::kn()).unwrap();
    for ctx in contexts(&b).into_iter().filter(|x| x.len() + 1 == order) {
        let cols = (1..=order)
            .map(|n| sm.column::<f64>(&ctx[order - n..]).unwrap())
            .collect();
        let d = ContextDistributions::new(cols, identity, v.len()).unwrap();
        let width = d.width();
        let raw: Vec<f64> = (0..width).map(|i| logits[i % logits.len()].exp()).collect();
        let lambda = mask_and_renormalize(&raw, &d.mask()).unwrap();
        let p = full_distribution(&d, &lambda).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let z: Vec<f64> = (0..width).map(|i| logits[(i * 7) % logits.len()]).collect();
        let soft = masked_softmax(&z, &d.mask());
        prop_assert!((soft.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(soft.iter().zip(d.mask()).all(|(&s, m)| m || s == 0.0));
    }
    Ok(())
}

pub fn heuristic_mixture_matches_recursion_cases(
) -> impl Strategy<Value = (Vec<String>, Vec<String>, usize, f64)> {
    (
        super::corpus_strategy(50),
        super::corpus_strategy(5),
        1usize..=4,
        0.05f64..=1.0,
    )
}

pub fn heuristic_mixture_matches_recursion(
    (lines, probe, order, fixed): (Vec<String>, Vec<String>, usize, f64),
) -> Result<(), TestCaseError> {
    let (v, c, store) = setup(&lines, order);
    let b = BruteCounts::new(c.sentences(), v.len(), order);
    let test = EncodedCorpus::encode(lines.iter().take(5).chain(&probe), &v);
    for spec in specs(order, fixed) {
        let sm = match (&spec.family, &spec.discounts) {
            (Family::Ml, _) => OracleSmoothing::WittenBell,
            (_, DiscountPolicy::Modified) => OracleSmoothing::Kn(
                (1..=order)
                    .map(|n| modified_discounts(b.count_of_counts(n, true)))
                    .collect(),
            ),
            (_, DiscountPolicy::Single) => OracleSmoothing::Kn(
                (1..=order)
                    .map(|n| {
                        let [n1, n2, _, _] = b.count_of_counts(n, true);
                        let y = if n1 == 0 {
                            0.0
                        } else {
                            n1 as f64 / (n1 + 2 * n2) as f64
                        };
                        [y; 3]
                    })
                    .collect(),
            ),
            (_, DiscountPolicy::Fixed(d)) => {
                OracleSmoothing::Kn(d.iter().map(|&x| [x; 3]).collect())
            }
        };
        let model = Model::heuristic(
            ModelSpec::heuristic(order, spec),
            v.clone(),
            super::source(&store),
        )
        .unwrap();
        let mut checked = 0;
        model
            .score(test.sentences(), &mut |s| {
                let sent = &test.sentences()[s.sentence];
                let mut hist = vec![b.bos; order - 1];
                hist.extend_from_slice(&sent[..s.position]);
                let ctx = &hist[hist.len() + 1 - order..];
                let want = recursive_prob(&b, &sm, ctx, s.word);
                assert!(
                    (s.prob - want).abs() < 1e-9,
                    "{:?} {ctx:?} {} got {} want {want}",
                    model.spec().smoothing,
                    s.word,
                    s.prob
                );
                checked += 1;
                Ok(())
            })
            .unwrap();
        prop_assert_eq!(checked as u64, test.token_count());
    }
    Ok(())
}

pub fn store_matches_enumeration_cases() -> impl Strategy<Value = (Vec<String>, usize)> {
    (super::corpus_strategy(40), 1usize..=5)
}

pub fn store_matches_enumeration(
    (lines, order): (Vec<String>, usize),
) -> Result<(), TestCaseError> {
    let (v, c, store) = setup(&lines, order);
    let b = BruteCounts::new(c.sentences(), v.len(), order);
    for n in 1..=order {
        for kn in [false, true] {
            let kind = if kn { CountKind::Kn } else { CountKind::Raw };
            prop_assert_eq!(store.count_of_counts(n, kind).0, b.count_of_counts(n, kn));
            prop_assert_eq!(store.ngram_count(n), b.raw[n - 1].len());
            for (g, &cnt) in b.table(n, kn) {
                prop_assert_eq!(store.count(&g[..n - 1], g[n - 1], kind).unwrap(), cnt);
                let st = store.context_stats(&g[..n - 1], kind).unwrap();
                prop_assert_eq!(
                    [st.total, st.unique, st.n1, st.n2, st.n3plus],
                    b.stats(&g[..n - 1], kn)
                );
            }
        }
        // an n-gram that cannot occur: eos inside the context
        if n > 1 {
            prop_assert_eq!(store.count(&vec![0; n - 1], 2, CountKind::Raw).unwrap(), 0);
        }
    }
    let uni = store.unigram_counts();
    for w in 0..v.len() as u32 {
        prop_assert_eq!(
            uni[w as usize],
            b.raw[0].get(&vec![w]).copied().unwrap_or(0)
        );
    }
    Ok(())
}

pub fn cv_views_partition_the_counts_cases() -> impl Strategy<Value = (Vec<String>, usize, usize)> {
    (super::corpus_strategy(40), 1usize..=4, 2usize..=5)
}

pub fn cv_views_partition_the_counts(
    (lines, order, folds): (Vec<String>, usize, usize),
) -> Result<(), TestCaseError> {
    let (v, c, store) = setup(&lines, order);
    prop_assume!(c.len() >= folds);
    let folded = FoldedCounts::new(Arc::new(c.clone()), v.clone(), order, folds).unwrap();
    let mut seen = vec![0usize; c.len()];
    for f in 0..folds {
        for i in folded.fold_sentences(f) {
            seen[i] += 1;
            prop_assert_eq!(i % folds, f);
        }
        let view = folded.view(f).unwrap();
        let own = folded.fold_only(f).unwrap();
        for (ctx, w, full) in store.iter_ngrams() {
            let a = view.count(ctx, w, CountKind::Raw).unwrap();
            let b = own.count(ctx, w, CountKind::Raw).unwrap();
            prop_assert_eq!(a + b, full);
        }
    }
    prop_assert!(seen.iter().all(|&k| k == 1));
    Ok(())
}

pub fn em_never_increases_validation_nll_cases() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)>
{
    (
        prop::collection::vec(prop::collection::vec(1e-6f64..1.0, 20), 2..5),
        prop::collection::vec(0.05f64..1.0, 5),
    )
}

pub fn em_never_increases_validation_nll(
    (probs, init): (Vec<Vec<f64>>, Vec<f64>),
) -> Result<(), TestCaseError> {
    let k = probs.len();
    let s: f64 = init[..k].iter().sum();
    let w: Vec<f64> = init[..k].iter().map(|x| x / s).collect();
    let r = em_static_weights(&probs, Some(&w), 0.0, 60).unwrap();
    for pair in r.nll_history.windows(2) {
        prop_assert!(pair[1] <= pair[0] + 1e-12, "{} -> {}", pair[0], pair[1]);
    }
    prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    Ok(())
}

pub const TOL: f64 = 1e-4;
pub const EPS: f64 = 1e-6;

pub fn grad_config(arch: Architecture, dropout: f64, block: f64) -> NetworkConfig {
    NetworkConfig {
        architecture: arch,
        hidden_size: 4,
        embedding_size: 3,
        input_features: InputFeatures::Cr,
        dropout_rate: dropout,
        block_dropout_rate: block,
    }
}

/// Spreads the small initial weights out so the check sees real curvature.
fn widen(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) {
    for i in 0..params.len() {
        for x in params.value_mut(i).data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
}

fn targets(
    rng: &mut ChaCha8Rng,
    rows: usize,
    k: usize,
    vocab: usize,
    identity: bool,
) -> MixtureTargets<f64> {
    let mut valid: Vec<bool> = (0..rows * k).map(|_| rng.gen_bool(0.7)).collect();
    if !identity {
        for r in 0..rows {
            valid[r * k] = true;
        }
    }
    MixtureTargets {
        count_columns: k,
        identity,
        column_values: (0..rows * k)
            .map(|i| {
                if valid[i] {
                    rng.gen_range(0.01..1.0)
                } else {
                    0.0
                }
            })
            .collect(),
        valid,
        targets: (0..rows).map(|_| rng.gen_range(0..vocab as u32)).collect(),
        active: (0..rows).map(|r| r != 1).collect(),
    }
}

pub fn check_net(arch: Architecture, identity: bool, steps: Vec<usize>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: usize = steps.iter().sum();
    let cw = if arch == Architecture::Lstm { 1 } else { 2 };
    let shape = NetShape {
        features: 5,
        context_words: cw,
        count_columns: 3,
        identity,
        vocab_size: 6,
    };
    let cfg = grad_config(arch, 0.3, 0.0);
    let mut net = LambdaNet::<f64>::new(cfg.clone(), shape, &mut rng).unwrap();
    widen(net.params_mut(), &mut rng);
    let input = NetInput {
        features: Tensor::from_vec(
            rows,
            5,
            (0..rows * 5).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        ),
        words: (0..rows * cw).map(|_| rng.gen_range(0..=6)).collect(),
        steps: if arch == Architecture::Lstm {
            steps
        } else {
            Vec::new()
        },
    };
    let t = targets(&mut rng, rows, 3, 6, identity);
    let mut params = net.params().clone();
    gradient_check(
        &mut params,
        |p| {
            let net = LambdaNet::from_params(cfg.clone(), shape, p.clone())?;
            let mut g = Graph::new();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(3);
            let z = net.logits(&mut g, &input, Some(&mut drop_rng))?;
            let loss = g.mixture_nll(z, t.clone(), 1.0 / rows as f64)?;
            Ok((g, loss))
        },
        EPS,
    )
    .unwrap()
}

/// Relative gradient errors from count features and word ids through the
/// network, masked softmax, mixture and NLL, with dropout and block dropout
/// active.
pub fn loss_path_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let (v, c, store) = super::toy(2);
    for arch in [Architecture::Ff, Architecture::Lstm] {
        for spec in [
            ModelSpec::hybrid(2, SmoothingSpec::kn(), grad_config(arch, 0.2, 0.5)),
            ModelSpec::neurally_interpolated(2, SmoothingSpec::ml(), grad_config(arch, 0.0, 0.0)),
            ModelSpec::neural_lm(2, grad_config(arch, 0.2, 0.0)),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut model = Model::untrained(
                spec.clone(),
                v.clone(),
                Some(super::source(&store)),
                &mut rng,
            )
            .unwrap();
            widen(model.net_mut().unwrap().params_mut(), &mut rng);
            let net = model.net().unwrap().clone();
            let shape = *net.shape();
            let rows = model.rows(c.sentences().iter().map(Vec::as_slice)).unwrap();
            let cfg = spec.network.clone().unwrap();
            let mut params = net.params().clone();
            let err = gradient_check(
                &mut params,
                |p| {
                    let net = LambdaNet::from_params(cfg.clone(), shape, p.clone())?;
                    let mut r = ChaCha8Rng::seed_from_u64(9);
                    Ok(minibatch_loss(&net, &rows, &[0, 1], Some(&mut r))?.expect("active rows"))
                },
                EPS,
            )
            .unwrap();
            out.push((format!("{:?} {arch:?}", spec.kind), err));
        }
    }
    out
}

pub fn net(arch: Architecture, features: InputFeatures) -> NetworkConfig {
    NetworkConfig {
        architecture: arch,
        hidden_size: 8,
        embedding_size: 6,
        input_features: features,
        dropout_rate: 0.2,
        block_dropout_rate: 0.5,
    }
}

pub fn quick() -> TrainingConfig {
    TrainingConfig {
        minibatch_words: 128,
        eval_interval_words: 1500,
        max_epochs: 2,
        cv_folds: 4,
        ..Default::default()
    }
}

pub fn scores(m: &dyn LanguageModel<f64>, sentences: &[Vec<u32>]) -> Vec<f64> {
    let mut out = Vec::new();
    m.score(sentences, &mut |s| {
        out.push(s.prob);
        Ok(())
    })
    .unwrap();
    out
}

pub fn params_bits(m: &Model) -> Vec<u64> {
    m.net()
        .unwrap()
        .params()
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect()
}

pub fn masked_hybrid_is_the_neural_lm() {
    let d = super::synthetic(3, 60, 40, 10, 10);
    let store = Arc::new(NGramCountStore::accumulate(&d.train, &d.vocab, 3).unwrap());
    for arch in [Architecture::Ff, Architecture::Lstm] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = net(arch, InputFeatures::C);
        let neural = Model::untrained(
            ModelSpec::neural_lm(3, cfg.clone()),
            d.vocab.clone(),
            None,
            &mut rng,
        )
        .unwrap();
        let mut hybrid = Model::untrained(
            ModelSpec::hybrid(3, SmoothingSpec::kn(), cfg),
            d.vocab.clone(),
            Some(super::source(&store)),
            &mut rng,
        )
        .unwrap();
        let k = hybrid.count_columns();
        let src = neural.net().unwrap().params().clone();
        let dst = hybrid.net_mut().unwrap().params_mut();
        for name in ["embedding", "w_in", "b_in", "w_rec", "w_out", "b_out"] {
            let (Some(s), Some(t)) = (src.find(name), dst.find(name)) else {
                continue;
            };
            let from = src.value(s).clone();
            let to = dst.value_mut(t);
            match name {
                // feature rows follow the embedding rows and get zero weight
                "w_in" => {
                    to.fill(0.0);
                    to.data_mut()[..from.len()].copy_from_slice(from.data());
                }
                // count-column outputs keep their random values; they are masked
                "w_out" | "b_out" => {
                    for r in 0..from.rows() {
                        to.row_mut(r)[k..].copy_from_slice(from.row(r));
                    }
                }
                _ => to.data_mut().copy_from_slice(from.data()),
            }
        }
        let hybrid = hybrid.with_count_columns_masked(true).unwrap();
        let a = scores(&neural, d.test.sentences());
        let b = scores(&hybrid, d.test.sentences());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs(), "{arch:?}: {x} vs {y}");
        }
        let (pa, pb) = (
            neural.predict(&d.test.sentences()[0][..2]).unwrap(),
            hybrid.predict(&d.test.sentences()[0][..2]).unwrap(),
        );
        assert!(pa.iter().zip(&pb).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}

pub fn heuristic_weights_reproduce_the_heuristic_model() {
    let d = super::synthetic(4, 60, 80, 10, 20);
    let store = Arc::new(NGramCountStore::accumulate(&d.train, &d.vocab, 3).unwrap());
    for smoothing in [SmoothingSpec::kn(), SmoothingSpec::ml()] {
        let heur = Model::heuristic(
            ModelSpec::heuristic(3, smoothing.clone()),
            d.vocab.clone(),
            super::source(&store),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ninterp = Model::untrained(
            ModelSpec::neurally_interpolated(3, smoothing, net(Architecture::Ff, InputFeatures::C)),
            d.vocab.clone(),
            Some(super::source(&store)),
            &mut rng,
        )
        .unwrap()
        .with_lambda_source(LambdaSource::Heuristic)
        .unwrap();
        // ML gives unseen words no mass, so score text the counts cover
        let text = d.train.prefix(20);
        let (a, b) = (
            perplexity(&heur, &text).unwrap(),
            perplexity(&ninterp, &text).unwrap(),
        );
        assert_eq!(a.total_nll.to_bits(), b.total_nll.to_bits());
        assert_eq!(
            scores(&heur, d.test.sentences()),
            scores(&ninterp, d.test.sentences())
        );
    }
}

pub fn run(
    spec: ModelSpec,
    d: &super::SyntheticData,
    store: &Arc<NGramCountStore>,
    cfg: &TrainingConfig,
) -> (Model, TrainingLog) {
    train(
        spec,
        d.vocab.clone(),
        Some(super::source(store)),
        d.train.clone(),
        &d.dev,
        cfg,
        &mut |_| {},
    )
    .unwrap()
}

pub fn fixed_seed_training_is_bit_reproducible() {
    let d = super::synthetic(5, 80, 150, 20, 20);
    let store = Arc::new(NGramCountStore::accumulate(&d.train, &d.vocab, 3).unwrap());
    for spec in [
        ModelSpec::hybrid(
            3,
            SmoothingSpec::kn(),
            net(Architecture::Lstm, InputFeatures::C),
        ),
        ModelSpec::neurally_interpolated(
            3,
            SmoothingSpec::kn(),
            net(Architecture::Ff, InputFeatures::Cr),
        ),
    ] {
        let cfg = TrainingConfig {
            max_epochs: 1,
            ..quick()
        };
        let (a, la) = run(spec.clone(), &d, &store, &cfg);
        let (b, lb) = run(spec.clone(), &d, &store, &cfg);
        assert_eq!(params_bits(&a), params_bits(&b));
        let dev: Vec<u64> = la.entries.iter().map(|e| e.dev_ppl.to_bits()).collect();
        assert_eq!(
            dev,
            lb.entries
                .iter()
                .map(|e| e.dev_ppl.to_bits())
                .collect::<Vec<_>>()
        );
        let (c, _) = run(spec, &d, &store, &TrainingConfig { seed: 2, ..cfg });
        assert_ne!(params_bits(&a), params_bits(&c));
    }
}
