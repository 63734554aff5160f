//! Vocabulary construction and integer encoding of sentences.
//!
//! Ids `0..J` are prediction targets; the sentence-end symbol is id 0 and
//! the unknown-word symbol id 1. The sentence-start padding symbol takes id
//! `J`: it only ever appears inside contexts and is never predicted.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type WordId = u32;

pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";

const VOCAB_MAGIC: &str = "#modlm-vocab";
const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, WordId>,
    id_to_word: Vec<String>,
    eos_id: WordId,
    unk_id: WordId,
    bos_id: WordId,
}

impl Vocabulary {
    /// Builds a vocabulary from reserved symbols followed by `words` in id order.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_word = vec![EOS.to_string(), UNK.to_string()];
        for w in words {
            let w = w.into();
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!(
                    "invalid vocabulary entry {w:?}"
                )));
            }
            if is_reserved(&w) {
                continue;
            }
            id_to_word.push(w);
        }
        let bos_id = id_to_word.len() as WordId;
        id_to_word.push(BOS.to_string());
        let mut word_to_id = HashMap::with_capacity(id_to_word.len());
        for (i, w) in id_to_word.iter().enumerate() {
            if word_to_id.insert(w.clone(), i as WordId).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary entry {w:?}"
                )));
            }
        }
        Ok(Vocabulary {
            word_to_id,
            id_to_word,
            eos_id: 0,
            unk_id: 1,
            bos_id,
        })
    }

    /// Prediction vocabulary size (excludes the start padding symbol).
    pub fn len(&self) -> usize {
        self.bos_id as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eos_id(&self) -> WordId {
        self.eos_id
    }

    pub fn unk_id(&self) -> WordId {
        self.unk_id
    }

    pub fn bos_id(&self) -> WordId {
        self.bos_id
    }

    /// Id of `word`, or `None` when it is out of vocabulary.
    pub fn get(&self, word: &str) -> Option<WordId> {
        self.word_to_id.get(word).copied()
    }

    /// Id of `word`, mapping out-of-vocabulary and reserved forms to unk.
    pub fn id(&self, word: &str) -> WordId {
        match self.word_to_id.get(word) {
            Some(&id) if id != self.bos_id && id != self.eos_id => id,
            _ => self.unk_id,
        }
    }

    pub fn word(&self, id: WordId) -> Option<&str> {
        self.id_to_word.get(id as usize).map(String::as_str)
    }

    /// Surface forms of all prediction ids, in id order.
    pub fn words(&self) -> &[String] {
        &self.id_to_word[..self.len()]
    }

    /// Stable digest of the id-ordered word list; equal vocabularies have
    /// equal fingerprints.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for w in &self.id_to_word {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<WordId> {
        let mut ids: Vec<WordId> = tokens.iter().map(|t| self.id(t.as_ref())).collect();
        ids.push(self.eos_id);
        ids
    }

    pub fn encode_line(&self, line: &str) -> Vec<WordId> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        self.encode(&tokens)
    }

    /// Inverse of [`Vocabulary::encode`]: drops the trailing sentence end.
    pub fn decode(&self, ids: &[WordId]) -> Vec<String> {
        let body = match ids.last() {
            Some(&last) if last == self.eos_id => &ids[..ids.len() - 1],
            _ => ids,
        };
        body.iter()
            .map(|&i| self.word(i).unwrap_or(UNK).to_string())
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "{VOCAB_MAGIC} {VOCAB_VERSION} J={} eos={} unk={} bos={}",
            self.len(),
            self.eos_id,
            self.unk_id,
            self.bos_id
        )?;
        for w in &self.id_to_word {
            writeln!(out, "{w}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("vocabulary", "missing header"))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != VOCAB_MAGIC {
            return Err(Error::format(
                "vocabulary",
                format!("bad header {header:?}"),
            ));
        }
        if fields[1] != VOCAB_VERSION.to_string() {
            return Err(Error::format(
                "vocabulary",
                format!("unsupported version {}", fields[1]),
            ));
        }
        let mut kv = HashMap::new();
        for f in &fields[2..] {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| Error::format("vocabulary", format!("bad header field {f:?}")))?;
            let v: usize = v
                .parse()
                .map_err(|_| Error::format("vocabulary", format!("bad header field {f:?}")))?;
            kv.insert(k, v);
        }
        let words: Vec<String> = lines.collect::<std::io::Result<_>>()?;
        let j = kv.get("J").copied().unwrap_or(usize::MAX);
        if words.len() != j + 1
            || kv.get("eos") != Some(&0)
            || kv.get("unk") != Some(&1)
            || kv.get("bos") != Some(&j)
        {
            return Err(Error::format("vocabulary", "header does not match entries"));
        }
        if words[0] != EOS || words[1] != UNK || words[j] != BOS {
            return Err(Error::format("vocabulary", "reserved symbols out of place"));
        }
        let v = Vocabulary::from_words(words[2..j].iter().cloned())?;
        debug_assert_eq!(v.len(), j);
        Ok(v)
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
}

fn is_reserved(w: &str) -> bool {
    w == EOS || w == UNK || w == BOS
}

/// Builds a vocabulary from whitespace-tokenized sentences.
///
/// The `max_size` most frequent surface forms (excluding the reserved
/// symbols) receive ids, frequency ties going to the earlier first
/// occurrence. `None` keeps every form.
pub fn build_vocabulary<I, S>(lines: I, max_size: Option<usize>) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    // word -> (count, first occurrence)
    let mut freq: HashMap<String, (u64, usize)> = HashMap::new();
    let mut n_lines = 0usize;
    let mut position = 0usize;
    for line in lines {
        n_lines += 1;
        for tok in line.as_ref().split_whitespace() {
            if is_reserved(tok) {
                continue;
            }
            let e = freq.entry(tok.to_string()).or_insert((0, position));
            e.0 += 1;
            position += 1;
        }
    }
    if n_lines == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut entries: Vec<(String, u64, usize)> =
        freq.into_iter().map(|(w, (c, p))| (w, c, p)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    if let Some(max) = max_size {
        entries.truncate(max);
    }
    Vocabulary::from_words(entries.into_iter().map(|e| e.0))
}

/// Sentences encoded as id sequences, each terminated by the sentence end.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodedCorpus {
    sentences: Vec<Vec<WordId>>,
    token_count: u64,
}

impl EncodedCorpus {
    pub fn encode<I, S>(lines: I, vocab: &Vocabulary) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let sentences = lines
            .into_iter()
            .map(|l| vocab.encode_line(l.as_ref()))
            .collect();
        Self::from_sentences(sentences)
    }

    /// Wraps already-encoded sentences; each must end with the sentence end.
    pub fn from_sentences(sentences: Vec<Vec<WordId>>) -> Self {
        let token_count = sentences.iter().map(|s| s.len() as u64).sum();
        EncodedCorpus {
            sentences,
            token_count,
        }
    }

    pub fn read(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = BufReader::new(f)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        Ok(Self::encode(lines, vocab))
    }

    pub fn sentences(&self) -> &[Vec<WordId>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Number of predicted tokens: words plus one sentence end per sentence.
    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    /// The first `n` sentences.
    pub fn prefix(&self, n: usize) -> Self {
        Self::from_sentences(self.sentences[..n.min(self.len())].to_vec())
    }

    /// Checks that every id is a prediction id of `vocab` and every sentence
    /// is terminated.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        for s in &self.sentences {
            if s.last() != Some(&vocab.eos_id()) {
                return Err(Error::InvalidArgument("sentence without end marker".into()));
            }
            if let Some(&id) = s.iter().find(|&&id| id as usize >= vocab.len()) {
                return Err(Error::WordOutOfRange {
                    id: id as usize,
                    size: vocab.len(),
                });
            }
        }
        Ok(())
    }
}

/// Reads non-empty lines of a text file.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}
