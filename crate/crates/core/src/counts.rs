//! N-gram statistics for orders `1..=N`.
//!
//! Every sentence is left-padded with `N-1` start symbols, so each predicted
//! position has a context of full length. For each order the store keeps
//! context records (total, unique successors, successor counts) sorted by
//! context, with a hashed index over the flat context array.
//!
//! Besides the raw counts the store derives the Kneser-Ney count tables for
//! orders below `N`: an n-gram's KN count is the number of distinct words
//! seen immediately to its left (its continuation count). N-grams that begin
//! with the start padding have no genuine left extension and keep their raw
//! count.

use std::collections::BTreeMap;
use std::fs::File;
use std::hash::BuildHasher;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use hashbrown::HashTable;
use rustc_hash::FxBuildHasher;

use crate::corpus::{EncodedCorpus, Vocabulary, WordId, BOS, EOS};
use crate::error::{Error, Result};

const STORE_MAGIC: &[u8; 8] = b"MODLMCNT";
const STORE_VERSION: u32 = 1;

/// Count statistics of a single context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ContextStats {
    /// Sum of successor counts.
    pub total: u64,
    /// Number of distinct successors.
    pub unique: u64,
    /// Successors seen exactly once.
    pub n1: u64,
    /// Successors seen exactly twice.
    pub n2: u64,
    /// Successors seen three or more times.
    pub n3plus: u64,
}

impl ContextStats {
    pub fn observed(&self) -> bool {
        self.total > 0
    }
}

#[derive(Debug, Clone, Copy)]
struct Record {
    total: u64,
    start: u32,
    unique: u32,
    n1: u32,
    n2: u32,
    n3plus: u32,
}

/// All n-grams of one order, grouped by context.
#[derive(Debug, Clone)]
struct OrderTable {
    /// Context length (n - 1).
    ctx_len: usize,
    /// Flat sorted context ids, `ctx_len` per record.
    contexts: Vec<WordId>,
    records: Vec<Record>,
    words: Vec<WordId>,
    counts: Vec<u64>,
    index: HashTable<u32>,
}

impl OrderTable {
    /// Builds from n-grams in strictly increasing lexicographic order.
    fn from_sorted(order: usize, keys: &[WordId], counts: &[u64]) -> Self {
        let ctx_len = order - 1;
        let n = counts.len();
        debug_assert_eq!(keys.len(), n * order);
        let mut table = OrderTable {
            ctx_len,
            contexts: Vec::new(),
            records: Vec::new(),
            words: Vec::with_capacity(n),
            counts: Vec::with_capacity(n),
            index: HashTable::new(),
        };
        for i in 0..n {
            let gram = &keys[i * order..(i + 1) * order];
            let (ctx, w) = gram.split_at(ctx_len);
            let c = counts[i];
            let new_ctx = match table.records.last() {
                None => true,
                Some(_) => table.last_context() != ctx,
            };
            if new_ctx {
                table.contexts.extend_from_slice(ctx);
                table.records.push(Record {
                    total: 0,
                    start: table.words.len() as u32,
                    unique: 0,
                    n1: 0,
                    n2: 0,
                    n3plus: 0,
                });
            }
            let r = table.records.last_mut().expect("record pushed above");
            r.total += c;
            r.unique += 1;
            match c {
                1 => r.n1 += 1,
                2 => r.n2 += 1,
                _ => r.n3plus += 1,
            }
            table.words.push(w[0]);
            table.counts.push(c);
        }
        table.rebuild_index();
        table
    }

    fn last_context(&self) -> &[WordId] {
        let k = self.records.len() - 1;
        &self.contexts[k * self.ctx_len..(k + 1) * self.ctx_len]
    }

    fn context_at(&self, k: usize) -> &[WordId] {
        &self.contexts[k * self.ctx_len..(k + 1) * self.ctx_len]
    }

    fn rebuild_index(&mut self) {
        let mut index = HashTable::with_capacity(self.records.len());
        let hasher = FxBuildHasher;
        for k in 0..self.records.len() {
            let h = hasher.hash_one(self.context_at(k));
            index.insert_unique(h, k as u32, |&j| {
                hasher.hash_one(self.context_at(j as usize))
            });
        }
        self.index = index;
    }

    fn find(&self, ctx: &[WordId]) -> Option<usize> {
        if ctx.len() != self.ctx_len {
            return None;
        }
        let h = FxBuildHasher.hash_one(ctx);
        self.index
            .find(h, |&k| self.context_at(k as usize) == ctx)
            .map(|&k| k as usize)
    }

    fn stats_at(&self, k: usize) -> ContextStats {
        let r = &self.records[k];
        ContextStats {
            total: r.total,
            unique: r.unique as u64,
            n1: r.n1 as u64,
            n2: r.n2 as u64,
            n3plus: r.n3plus as u64,
        }
    }

    fn successors_at(&self, k: usize) -> (&[WordId], &[u64]) {
        let r = &self.records[k];
        let (s, e) = (r.start as usize, r.start as usize + r.unique as usize);
        (&self.words[s..e], &self.counts[s..e])
    }

    fn count_in(&self, k: usize, word: WordId) -> u64 {
        let (ws, cs) = self.successors_at(k);
        match ws.binary_search(&word) {
            Ok(i) => cs[i],
            Err(_) => 0,
        }
    }

    fn ngram_count(&self) -> usize {
        self.words.len()
    }

    /// Iterates (context, word, count) in sorted order.
    fn iter(&self) -> impl Iterator<Item = (&[WordId], WordId, u64)> + '_ {
        (0..self.records.len()).flat_map(move |k| {
            let ctx = self.context_at(k);
            let (ws, cs) = self.successors_at(k);
            ws.iter().zip(cs).map(move |(&w, &c)| (ctx, w, c))
        })
    }

    /// Flat n-gram keys (context followed by word) with their counts.
    fn flat_ngrams(&self) -> (Vec<WordId>, Vec<u64>) {
        let order = self.ctx_len + 1;
        let mut keys = Vec::with_capacity(self.ngram_count() * order);
        for (ctx, w, _) in self.iter() {
            keys.extend_from_slice(ctx);
            keys.push(w);
        }
        (keys, self.counts.clone())
    }
}

/// Sorts flat rows of width `order` and collapses duplicates, summing their
/// weights.
fn sort_and_count(
    order: usize,
    rows: &[WordId],
    weights: Option<&[u64]>,
) -> (Vec<WordId>, Vec<u64>) {
    let n = rows.len() / order;
    let mut idx: Vec<u32> = (0..n as u32).collect();
    let row = |i: u32| &rows[i as usize * order..(i as usize + 1) * order];
    idx.sort_unstable_by(|&a, &b| row(a).cmp(row(b)));
    let mut keys = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    let mut prev: Option<u32> = None;
    for &i in &idx {
        let w = weights.map_or(1, |ws| ws[i as usize]);
        match prev {
            Some(p) if row(p) == row(i) => *counts.last_mut().expect("run started") += w,
            _ => {
                keys.extend_from_slice(row(i));
                counts.push(w);
            }
        }
        prev = Some(i);
    }
    (keys, counts)
}

/// Count-of-counts `n1..=n4` over the n-grams of one order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountOfCounts(pub [u64; 4]);

/// Which count table to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountKind {
    Raw,
    /// Continuation (Kneser-Ney) counts; identical to raw at the top order.
    Kn,
}

/// Immutable n-gram statistics for orders `1..=N`.
#[derive(Debug, Clone)]
pub struct NGramCountStore {
    order: usize,
    vocab_size: usize,
    bos: WordId,
    fingerprint: u64,
    raw: Vec<OrderTable>,
    /// KN tables for orders `1..N` (index `n - 1`).
    kn: Vec<OrderTable>,
}

impl NGramCountStore {
    /// Counts every n-gram of `corpus` up to `order`.
    pub fn accumulate(corpus: &EncodedCorpus, vocab: &Vocabulary, order: usize) -> Result<Self> {
        Self::accumulate_sentences(corpus.sentences().iter().map(Vec::as_slice), vocab, order)
    }

    pub fn accumulate_sentences<'a, I>(
        sentences: I,
        vocab: &Vocabulary,
        order: usize,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [WordId]> + Clone,
    {
        if order == 0 {
            return Err(Error::InvalidArgument(
                "n-gram order must be at least 1".into(),
            ));
        }
        let j = vocab.len();
        let bos = vocab.bos_id();
        let mut padded = Vec::new();
        let mut per_order: Vec<Vec<WordId>> = vec![Vec::new(); order];
        for s in sentences {
            if let Some(&id) = s.iter().find(|&&id| id as usize >= j) {
                return Err(Error::WordOutOfRange {
                    id: id as usize,
                    size: j,
                });
            }
            padded.clear();
            padded.resize(order - 1, bos);
            padded.extend_from_slice(s);
            for pos in order - 1..padded.len() {
                for n in 1..=order {
                    per_order[n - 1].extend_from_slice(&padded[pos + 1 - n..=pos]);
                }
            }
        }
        let raw: Vec<OrderTable> = per_order
            .into_iter()
            .enumerate()
            .map(|(i, rows)| {
                let (keys, counts) = sort_and_count(i + 1, &rows, None);
                OrderTable::from_sorted(i + 1, &keys, &counts)
            })
            .collect();
        Ok(Self::from_raw_tables(
            order,
            j,
            bos,
            vocab.fingerprint(),
            raw,
        ))
    }

    fn from_raw_tables(
        order: usize,
        vocab_size: usize,
        bos: WordId,
        fingerprint: u64,
        raw: Vec<OrderTable>,
    ) -> Self {
        let kn = (1..order)
            .map(|n| kn_table(n, bos, &raw[n - 1], &raw[n]))
            .collect();
        NGramCountStore {
            order,
            vocab_size,
            bos,
            fingerprint,
            raw,
            kn,
        }
    }

    /// Builds a store from explicit n-gram counts (duplicates are summed).
    /// Each key is the full n-gram: context followed by the predicted word.
    pub fn from_ngram_counts<I>(ngrams: I, vocab: &Vocabulary, order: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<WordId>, u64)>,
    {
        if order == 0 {
            return Err(Error::InvalidArgument(
                "n-gram order must be at least 1".into(),
            ));
        }
        let j = vocab.len();
        let bos = vocab.bos_id();
        let mut rows: Vec<Vec<WordId>> = vec![Vec::new(); order];
        let mut weights: Vec<Vec<u64>> = vec![Vec::new(); order];
        for (gram, c) in ngrams {
            let n = gram.len();
            if n == 0 || n > order {
                return Err(Error::ContextTooLong {
                    len: n.saturating_sub(1),
                    max: order - 1,
                    order,
                });
            }
            let (ctx, w) = gram.split_at(n - 1);
            if w[0] as usize >= j {
                return Err(Error::WordOutOfRange {
                    id: w[0] as usize,
                    size: j,
                });
            }
            if let Some(&id) = ctx.iter().find(|&&id| id as usize > j) {
                return Err(Error::WordOutOfRange {
                    id: id as usize,
                    size: j + 1,
                });
            }
            if c == 0 {
                continue;
            }
            rows[n - 1].extend_from_slice(&gram);
            weights[n - 1].push(c);
        }
        let raw = (0..order)
            .map(|i| {
                let (keys, counts) = sort_and_count(i + 1, &rows[i], Some(&weights[i]));
                OrderTable::from_sorted(i + 1, &keys, &counts)
            })
            .collect();
        Ok(Self::from_raw_tables(
            order,
            j,
            bos,
            vocab.fingerprint(),
            raw,
        ))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Prediction vocabulary size `J`.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn bos_id(&self) -> WordId {
        self.bos
    }

    pub fn vocab_fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size || vocab.fingerprint() != self.fingerprint {
            return Err(Error::VocabularyMismatch(format!(
                "count store built for J={} (fingerprint {:016x}), vocabulary has J={} (fingerprint {:016x})",
                self.vocab_size,
                self.fingerprint,
                vocab.len(),
                vocab.fingerprint()
            )));
        }
        Ok(())
    }

    fn check_context(&self, context: &[WordId]) -> Result<()> {
        if context.len() >= self.order {
            return Err(Error::ContextTooLong {
                len: context.len(),
                max: self.order - 1,
                order: self.order,
            });
        }
        Ok(())
    }

    fn table(&self, n: usize, kind: CountKind) -> &OrderTable {
        match kind {
            CountKind::Kn if n < self.order => &self.kn[n - 1],
            _ => &self.raw[n - 1],
        }
    }

    /// `(c(context·word), c(context), u(context))`; zeros when unobserved.
    pub fn query(&self, context: &[WordId], word: WordId) -> Result<(u64, u64, u64)> {
        self.check_context(context)?;
        let table = &self.raw[context.len()];
        Ok(match table.find(context) {
            Some(k) => {
                let r = &table.records[k];
                (table.count_in(k, word), r.total, r.unique as u64)
            }
            None => (0, 0, 0),
        })
    }

    /// Statistics of `context` in the chosen table.
    pub fn context_stats(&self, context: &[WordId], kind: CountKind) -> Result<ContextStats> {
        self.check_context(context)?;
        let table = self.table(context.len() + 1, kind);
        Ok(table
            .find(context)
            .map(|k| table.stats_at(k))
            .unwrap_or_default())
    }

    /// Count of `word` after `context` in the chosen table.
    pub fn count(&self, context: &[WordId], word: WordId, kind: CountKind) -> Result<u64> {
        self.check_context(context)?;
        let table = self.table(context.len() + 1, kind);
        Ok(table.find(context).map_or(0, |k| table.count_in(k, word)))
    }

    /// Statistics and the count of `word` in one lookup.
    pub fn lookup(
        &self,
        context: &[WordId],
        word: WordId,
        kind: CountKind,
    ) -> Result<(ContextStats, u64)> {
        self.check_context(context)?;
        let table = self.table(context.len() + 1, kind);
        Ok(match table.find(context) {
            Some(k) => (table.stats_at(k), table.count_in(k, word)),
            None => (ContextStats::default(), 0),
        })
    }

    /// Successor words and counts of `context`, sorted by word id.
    pub fn successors(&self, context: &[WordId], kind: CountKind) -> Result<(&[WordId], &[u64])> {
        self.check_context(context)?;
        let table = self.table(context.len() + 1, kind);
        Ok(table
            .find(context)
            .map_or((&[][..], &[][..]), |k| table.successors_at(k)))
    }

    /// Number of distinct left neighbours of `word` (unigram continuation count).
    pub fn continuation_count(&self, word: WordId) -> u64 {
        if self.order < 2 {
            return 0;
        }
        self.kn[0]
            .find(&[])
            .map_or(0, |k| self.kn[0].count_in(k, word))
    }

    /// Number of distinct bigram types.
    pub fn bigram_types(&self) -> u64 {
        if self.order < 2 {
            return 0;
        }
        self.raw[1].ngram_count() as u64
    }

    /// Count-of-counts `n1..n4` over order-`n` n-grams of the chosen table.
    pub fn count_of_counts(&self, n: usize, kind: CountKind) -> CountOfCounts {
        let mut coc = [0u64; 4];
        for &c in &self.table(n, kind).counts {
            if (1..=4).contains(&c) {
                coc[c as usize - 1] += 1;
            }
        }
        CountOfCounts(coc)
    }

    /// Number of distinct contexts stored at order `n`.
    pub fn context_count(&self, n: usize) -> usize {
        self.raw[n - 1].records.len()
    }

    pub fn ngram_count(&self, n: usize) -> usize {
        self.raw[n - 1].ngram_count()
    }

    /// Raw training frequency of each prediction id (unigram counts).
    pub fn unigram_counts(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.vocab_size];
        if let Some(k) = self.raw[0].find(&[]) {
            let (ws, cs) = self.raw[0].successors_at(k);
            for (&w, &c) in ws.iter().zip(cs) {
                out[w as usize] = c;
            }
        }
        out
    }

    /// Iterates every stored raw n-gram as (context, word, count), by order
    /// then lexicographically.
    pub fn iter_ngrams(&self) -> impl Iterator<Item = (&[WordId], WordId, u64)> + '_ {
        self.raw.iter().flat_map(OrderTable::iter)
    }

    /// Serializes to the versioned binary container.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let records: u64 = self.raw.iter().map(|t| t.records.len() as u64).sum();
        out.write_all(STORE_MAGIC)?;
        out.write_all(&STORE_VERSION.to_le_bytes())?;
        out.write_all(&(self.order as u32).to_le_bytes())?;
        out.write_all(&(self.vocab_size as u32).to_le_bytes())?;
        out.write_all(&self.bos.to_le_bytes())?;
        out.write_all(&self.fingerprint.to_le_bytes())?;
        out.write_all(&records.to_le_bytes())?;
        for (i, t) in self.raw.iter().enumerate() {
            for k in 0..t.records.len() {
                out.write_all(&[(i + 1) as u8])?;
                for &id in t.context_at(k) {
                    out.write_all(&id.to_le_bytes())?;
                }
                let r = &t.records[k];
                out.write_all(&r.total.to_le_bytes())?;
                out.write_all(&r.unique.to_le_bytes())?;
                let (ws, cs) = t.successors_at(k);
                for (&w, &c) in ws.iter().zip(cs) {
                    out.write_all(&w.to_le_bytes())?;
                    out.write_all(&c.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = LeReader(input);
        let mut magic = [0u8; 8];
        r.0.read_exact(&mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(Error::format("count store", "bad magic"));
        }
        let version = r.u32()?;
        if version != STORE_VERSION {
            return Err(Error::format(
                "count store",
                format!("unsupported version {version}"),
            ));
        }
        let order = r.u32()? as usize;
        let vocab_size = r.u32()? as usize;
        let bos = r.u32()?;
        let fingerprint = r.u64()?;
        let n_records = r.u64()?;
        if order == 0 || order > 255 {
            return Err(Error::format("count store", format!("bad order {order}")));
        }
        let mut keys: Vec<Vec<WordId>> = vec![Vec::new(); order];
        let mut counts: Vec<Vec<u64>> = vec![Vec::new(); order];
        let mut ctx = Vec::new();
        for _ in 0..n_records {
            let n = r.u8()? as usize;
            if n == 0 || n > order {
                return Err(Error::format("count store", format!("record of order {n}")));
            }
            ctx.clear();
            for _ in 0..n - 1 {
                ctx.push(r.u32()?);
            }
            let total = r.u64()?;
            let unique = r.u32()?;
            let mut sum = 0u64;
            for _ in 0..unique {
                let w = r.u32()?;
                let c = r.u64()?;
                if w as usize >= vocab_size || c == 0 {
                    return Err(Error::format("count store", "bad successor entry"));
                }
                keys[n - 1].extend_from_slice(&ctx);
                keys[n - 1].push(w);
                counts[n - 1].push(c);
                sum += c;
            }
            if sum != total {
                return Err(Error::format(
                    "count store",
                    "context total does not match successors",
                ));
            }
        }
        let mut raw = Vec::with_capacity(order);
        for n in 1..=order {
            let (k, c) = (&keys[n - 1], &counts[n - 1]);
            let sorted = (0..c.len().saturating_sub(1))
                .all(|i| k[i * n..(i + 1) * n] < k[(i + 1) * n..(i + 2) * n]);
            if !sorted {
                return Err(Error::format("count store", "records not sorted"));
            }
            raw.push(OrderTable::from_sorted(n, k, c));
        }
        Ok(Self::from_raw_tables(
            order,
            vocab_size,
            bos,
            fingerprint,
            raw,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }

    /// Writes the plain-text dump: one `context TAB word TAB count` line per
    /// n-gram, context words space-separated, by order then id order.
    pub fn write_text<W: Write>(&self, vocab: &Vocabulary, mut out: W) -> Result<()> {
        self.check_vocabulary(vocab)?;
        let name = |id: WordId| vocab.word(id).unwrap_or(BOS);
        for (ctx, w, c) in self.iter_ngrams() {
            let ctx_words: Vec<&str> = ctx.iter().map(|&i| name(i)).collect();
            writeln!(out, "{}\t{}\t{}", ctx_words.join(" "), name(w), c)?;
        }
        Ok(())
    }

    /// Reads a text dump (possibly produced elsewhere). Out-of-vocabulary
    /// words map to unk and their counts merge. The order is the longest
    /// n-gram seen unless given.
    pub fn read_text<R: BufRead>(
        input: R,
        vocab: &Vocabulary,
        order: Option<usize>,
    ) -> Result<Self> {
        let mut grams: BTreeMap<Vec<WordId>, u64> = BTreeMap::new();
        let mut max_len = 0;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(
                    "count dump",
                    format!("line {}: expected 3 tab-separated fields", lineno + 1),
                ));
            }
            let count: u64 = fields[2].trim().parse().map_err(|_| {
                Error::format(
                    "count dump",
                    format!("line {}: bad count {:?}", lineno + 1, fields[2]),
                )
            })?;
            let lookup = |w: &str| match w {
                BOS => vocab.bos_id(),
                EOS => vocab.eos_id(),
                _ => vocab.id(w),
            };
            let mut gram: Vec<WordId> = fields[0].split_whitespace().map(lookup).collect();
            gram.push(lookup(fields[1].trim()));
            max_len = max_len.max(gram.len());
            *grams.entry(gram).or_insert(0) += count;
        }
        let order = order.unwrap_or(max_len);
        if order == 0 {
            return Err(Error::EmptyCorpus);
        }
        Self::from_ngram_counts(grams, vocab, order)
    }
}

fn kn_table(n: usize, bos: WordId, raw_n: &OrderTable, raw_up: &OrderTable) -> OrderTable {
    // Continuation counts: each distinct (n+1)-gram contributes one to its
    // order-n suffix.
    let mut rows = Vec::with_capacity(raw_up.ngram_count() * n);
    for (ctx, w, _) in raw_up.iter() {
        let suffix_ctx = &ctx[1..];
        if suffix_ctx.first() == Some(&bos) {
            continue;
        }
        rows.extend_from_slice(suffix_ctx);
        rows.push(w);
    }
    let (cont_keys, cont_counts) = sort_and_count(n, &rows, None);

    // Merge with the raw order-n n-grams (same key set for accumulated
    // stores); start-padded or unextended n-grams keep their raw count.
    let (raw_keys, raw_counts) = raw_n.flat_ngrams();
    let mut counts = Vec::with_capacity(raw_counts.len());
    let mut j = 0usize;
    let n_cont = cont_counts.len();
    for (i, &rc) in raw_counts.iter().enumerate() {
        let key = &raw_keys[i * n..(i + 1) * n];
        while j < n_cont && &cont_keys[j * n..(j + 1) * n] < key {
            j += 1;
        }
        let c = if key[0] == bos {
            rc
        } else if j < n_cont && &cont_keys[j * n..(j + 1) * n] == key {
            cont_counts[j]
        } else {
            rc
        };
        counts.push(c);
    }
    OrderTable::from_sorted(n, &raw_keys, &counts)
}

struct LeReader<R>(R);

impl<R: Read> LeReader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.0.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
}

/// Cross-validation count views: view `f` holds the counts of every
/// sentence outside fold `f`, where sentence `i` belongs to fold
/// `i mod folds`.
///
/// Views are built on demand; a full set of views for a large corpus would
/// not fit in memory at once.
#[derive(Debug, Clone)]
pub struct FoldedCounts {
    corpus: Arc<EncodedCorpus>,
    vocab: Arc<Vocabulary>,
    order: usize,
    folds: usize,
}

impl FoldedCounts {
    pub fn new(
        corpus: Arc<EncodedCorpus>,
        vocab: Arc<Vocabulary>,
        order: usize,
        folds: usize,
    ) -> Result<Self> {
        if folds < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 folds, got {folds}"
            )));
        }
        if order == 0 {
            return Err(Error::InvalidArgument(
                "n-gram order must be at least 1".into(),
            ));
        }
        if corpus.len() < folds {
            return Err(Error::InvalidArgument(format!(
                "too few sentences ({}) for {folds} folds",
                corpus.len()
            )));
        }
        Ok(FoldedCounts {
            corpus,
            vocab,
            order,
            folds,
        })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn fold_of(&self, sentence: usize) -> usize {
        sentence % self.folds
    }

    /// Indices of the sentences assigned to fold `f`.
    pub fn fold_sentences(&self, f: usize) -> impl Iterator<Item = usize> + '_ {
        (f..self.corpus.len()).step_by(self.folds)
    }

    /// Counts over all sentences not in fold `f`.
    pub fn view(&self, f: usize) -> Result<NGramCountStore> {
        self.counts_where(|i| i % self.folds != f)
    }

    /// Counts over the sentences of fold `f` only.
    pub fn fold_only(&self, f: usize) -> Result<NGramCountStore> {
        self.counts_where(|i| i % self.folds == f)
    }

    fn counts_where(&self, keep: impl Fn(usize) -> bool) -> Result<NGramCountStore> {
        let sents: Vec<&[WordId]> = self
            .corpus
            .sentences()
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, s)| s.as_slice())
            .collect();
        NGramCountStore::accumulate_sentences(sents.iter().copied(), &self.vocab, self.order)
    }
}

/// Counts over `corpus` with `folds` cross-validation views.
pub fn cv_fold_counts(
    corpus: Arc<EncodedCorpus>,
    vocab: Arc<Vocabulary>,
    order: usize,
    folds: usize,
) -> Result<FoldedCounts> {
    FoldedCounts::new(corpus, vocab, order, folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;

    fn toy(order: usize) -> (Vocabulary, EncodedCorpus, NGramCountStore) {
        let lines = ["a b a", "a c"];
        let v = build_vocabulary(lines, None).unwrap();
        let c = EncodedCorpus::encode(lines, &v);
        let s = NGramCountStore::accumulate(&c, &v, order).unwrap();
        (v, c, s)
    }

    #[test]
    fn toy_bigram_counts() {
        let (v, _, s) = toy(2);
        let a = v.id("a");
        let stats = s.context_stats(&[a], CountKind::Raw).unwrap();
        assert_eq!((stats.total, stats.unique), (3, 3));
        for w in [v.id("b"), v.id("c"), v.eos_id()] {
            assert_eq!(s.count(&[a], w, CountKind::Raw).unwrap(), 1);
        }
        let empty = s.context_stats(&[], CountKind::Raw).unwrap();
        assert_eq!(empty.total, 7);
        assert_eq!(s.unigram_counts(), vec![2, 0, 3, 1, 1]);
    }

    #[test]
    fn toy_continuation_counts() {
        let (v, _, s) = toy(2);
        assert_eq!(s.continuation_count(v.id("a")), 2);
        assert_eq!(s.continuation_count(v.eos_id()), 2);
        assert_eq!(s.continuation_count(v.id("b")), 1);
        assert_eq!(s.bigram_types(), 6);
        assert_eq!(s.context_stats(&[], CountKind::Kn).unwrap().total, 6);
    }

    #[test]
    fn query_examples() {
        let (v, _, s) = toy(2);
        let (a, b) = (v.id("a"), v.id("b"));
        assert_eq!(s.query(&[a], b).unwrap(), (1, 3, 3));
        assert!(matches!(
            s.query(&[b, a], a),
            Err(Error::ContextTooLong { .. })
        ));
        assert_eq!(s.query(&[v.unk_id()], a).unwrap(), (0, 0, 0));
    }

    #[test]
    fn zero_order_is_rejected() {
        let lines = ["a"];
        let v = build_vocabulary(lines, None).unwrap();
        let c = EncodedCorpus::encode(lines, &v);
        assert!(NGramCountStore::accumulate(&c, &v, 0).is_err());
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let v = build_vocabulary(["a"], None).unwrap();
        let c = EncodedCorpus::from_sentences(vec![vec![9, 0]]);
        assert!(matches!(
            NGramCountStore::accumulate(&c, &v, 2),
            Err(Error::WordOutOfRange { .. })
        ));
    }

    #[test]
    fn start_padded_contexts_are_counted() {
        let (v, _, s) = toy(3);
        let bos = v.bos_id();
        let stats = s.context_stats(&[bos, bos], CountKind::Raw).unwrap();
        assert_eq!((stats.total, stats.unique), (2, 1));
        assert_eq!(
            s.count(&[bos, v.id("a")], v.id("b"), CountKind::Raw)
                .unwrap(),
            1
        );
        // Start-padded n-grams keep raw counts in the KN table.
        assert_eq!(s.count(&[bos], v.id("a"), CountKind::Kn).unwrap(), 2);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let (_, _, s) = toy(3);
        let mut a = Vec::new();
        s.write_to(&mut a).unwrap();
        let back = NGramCountStore::read_from(a.as_slice()).unwrap();
        let mut b = Vec::new();
        back.write_to(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a[..8], b"MODLMCNT");
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let (_, _, s) = toy(2);
        let mut a = Vec::new();
        s.write_to(&mut a).unwrap();
        a.truncate(a.len() - 3);
        assert!(NGramCountStore::read_from(a.as_slice()).is_err());
    }

    #[test]
    fn text_dump_round_trip() {
        let (v, _, s) = toy(3);
        let mut text = Vec::new();
        s.write_text(&v, &mut text).unwrap();
        let dump = String::from_utf8(text.clone()).unwrap();
        assert!(dump.lines().any(|l| l == "a\tb\t1"));
        assert!(dump.lines().any(|l| l == "\ta\t3"));
        let back = NGramCountStore::read_text(text.as_slice(), &v, None).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        s.write_to(&mut x).unwrap();
        back.write_to(&mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn two_fold_views() {
        let lines = ["a b a", "a c"];
        let v = Arc::new(build_vocabulary(lines, None).unwrap());
        let c = Arc::new(EncodedCorpus::encode(lines, &v));
        let folds = cv_fold_counts(c, v.clone(), 2, 2).unwrap();
        let v0 = folds.view(0).unwrap();
        let v1 = folds.view(1).unwrap();
        // view 0 excludes sentence 0 ("a b a"), view 1 excludes "a c"
        assert_eq!(v0.context_stats(&[], CountKind::Raw).unwrap().total, 3);
        assert_eq!(v0.count(&[], v.id("c"), CountKind::Raw).unwrap(), 1);
        assert_eq!(v0.count(&[], v.id("b"), CountKind::Raw).unwrap(), 0);
        assert_eq!(v1.context_stats(&[], CountKind::Raw).unwrap().total, 4);
        assert_eq!(v1.count(&[], v.id("c"), CountKind::Raw).unwrap(), 0);
    }

    #[test]
    fn too_few_sentences_for_folds() {
        let lines = ["a b a", "a c"];
        let v = Arc::new(build_vocabulary(lines, None).unwrap());
        let c = Arc::new(EncodedCorpus::encode(lines, &v));
        assert!(cv_fold_counts(c.clone(), v.clone(), 2, 3).is_err());
        assert!(cv_fold_counts(c, v, 2, 1).is_err());
    }

    #[test]
    fn count_of_counts_for_toy() {
        let (_, _, s) = toy(2);
        // unigrams a:3 b:1 c:1 eos:2
        assert_eq!(
            s.count_of_counts(1, CountKind::Raw),
            CountOfCounts([2, 1, 1, 0])
        );
        // continuation a:2 b:1 c:1 eos:2
        assert_eq!(
            s.count_of_counts(1, CountKind::Kn),
            CountOfCounts([2, 2, 0, 0])
        );
    }
}
