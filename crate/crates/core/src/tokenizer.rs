//! Byte-pair-encoding subword vocabulary: training, encode/decode and the
//! text vocabulary file.
//!
//! Text is split on single spaces. Every piece is prefixed with the
//! word-boundary marker `▁` (U+2581), so runs of spaces survive as lone
//! markers and `decode(encode(s)) == s` for any text whose characters are in
//! the inventory. A literal `▁` in the input is treated as an unknown
//! character.
//!
//! Vocabulary file:
//!
//! ```text
//! P2TX-VOCAB v1 size=V merges=M
//! 0<TAB><pad>
//! ...                      (V token lines, "id<TAB>token")
//! left<TAB>right<TAB>result (M merge lines, in training order)
//! ```
//!
//! Backslash, tab, newline and carriage return inside tokens are written as
//! `\\`, `\t`, `\n` and `\r`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::ops::Deref;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
pub const MARKER: char = '\u{2581}';
pub const UNKNOWN_RENDERING: char = '\u{FFFD}';

const HEADER_PREFIX: &str = "P2TX-VOCAB v1";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocabulary size {requested} is below the {required} symbols needed for the character inventory and specials")]
    VocabTooSmall { requested: usize, required: usize },
    #[error("no training text")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("malformed vocabulary file, line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Token ids produced by [`Vocabulary::encode`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence(pub Vec<u32>);

impl Deref for TokenSequence {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        Self(ids)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Merge {
    pub left: String,
    pub right: String,
    pub result: String,
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    merges: Vec<Merge>,
    index: HashMap<String, u32>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges
    }
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, merges: Vec<Merge>) -> Result<Self, String> {
        if tokens.len() < SPECIALS.len()
            || tokens[..SPECIALS.len()].iter().zip(SPECIALS).any(|(t, s)| t != s)
        {
            return Err("the first four tokens must be the specials".into());
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate().skip(SPECIALS.len()) {
            if SPECIALS.contains(&tok.as_str()) || index.insert(tok.clone(), id as u32).is_some() {
                return Err(format!("duplicate token `{tok}`"));
            }
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, m) in merges.iter().enumerate() {
            let lookup = |s: &str| {
                index
                    .get(s)
                    .copied()
                    .ok_or_else(|| format!("merge {rank} references unknown token `{s}`"))
            };
            let (l, r, out) = (lookup(&m.left)?, lookup(&m.right)?, lookup(&m.result)?);
            if format!("{}{}", m.left, m.right) != m.result {
                return Err(format!("merge {rank} result is not the concatenation"));
            }
            ranks.entry((l, r)).or_insert((rank, out));
        }
        Ok(Self {
            tokens,
            merges,
            index,
            ranks,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        if let Some(i) = SPECIALS.iter().position(|s| *s == token) {
            return Some(i as u32);
        }
        self.index.get(token).copied()
    }

    /// Single-character tokens (including the marker).
    pub fn characters(&self) -> BTreeSet<char> {
        self.tokens[SPECIALS.len()..]
            .iter()
            .filter_map(|t| {
                let mut it = t.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                }
            })
            .collect()
    }

    fn char_id(&self, c: char) -> u32 {
        if c == MARKER {
            return UNK;
        }
        let mut buf = [0u8; 4];
        self.index.get(&*c.encode_utf8(&mut buf)).copied().unwrap_or(UNK)
    }

    fn marker_id(&self) -> u32 {
        let mut buf = [0u8; 4];
        self.index.get(&*MARKER.encode_utf8(&mut buf)).copied().unwrap_or(UNK)
    }

    fn encode_piece(&self, piece: &str, out: &mut Vec<u32>) {
        let mut symbols: Vec<u32> = Vec::with_capacity(piece.len() + 1);
        symbols.push(self.marker_id());
        symbols.extend(piece.chars().map(|c| self.char_id(c)));
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, out)| (rank, w[0], w[1], out)))
                .min_by_key(|&(rank, ..)| rank);
            let Some((_, l, r, merged)) = best else { break };
            let mut next = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = next;
        }
        out.extend(symbols);
    }

    /// Splits on spaces, marks word starts and applies merges in training order.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        if text.is_empty() {
            return TokenSequence(ids);
        }
        for piece in text.split(' ') {
            self.encode_piece(piece, &mut ids);
        }
        TokenSequence(ids)
    }

    /// Concatenates tokens, turns markers back into spaces, drops pad/bos/eos
    /// and renders unknown as U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut text = String::new();
        for &id in ids {
            match id {
                PAD | BOS | EOS => {}
                UNK => text.push(UNKNOWN_RENDERING),
                _ => {
                    let tok = self.token(id).ok_or(TokenizerError::IdOutOfRange {
                        id,
                        size: self.len(),
                    })?;
                    text.push_str(tok);
                }
            }
        }
        let text = text.replace(MARKER, " ");
        Ok(match text.strip_prefix(' ') {
            Some(rest) => rest.to_string(),
            None => text,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{HEADER_PREFIX} size={} merges={}",
            self.tokens.len(),
            self.merges.len()
        )
        .unwrap();
        for (id, tok) in self.tokens.iter().enumerate() {
            writeln!(out, "{id}\t{}", escape(tok)).unwrap();
        }
        for m in &self.merges {
            writeln!(out, "{}\t{}\t{}", escape(&m.left), escape(&m.right), escape(&m.result)).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let err = |line: usize, message: String| TokenizerError::Parse { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let rest = header
            .strip_prefix(HEADER_PREFIX)
            .ok_or_else(|| err(1, format!("expected `{HEADER_PREFIX}` header")))?;
        let mut size = None;
        let mut merges = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("size", v)) => size = v.parse::<usize>().ok(),
                Some(("merges", v)) => merges = v.parse::<usize>().ok(),
                _ => return Err(err(1, format!("unexpected header field `{field}`"))),
            }
        }
        let (size, n_merges) = size
            .zip(merges)
            .ok_or_else(|| err(1, "header needs size= and merges=".into()))?;
        let mut tokens = Vec::with_capacity(size);
        for expected in 0..size {
            let (no, line) = lines.next().ok_or_else(|| err(0, "missing token lines".into()))?;
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| err(no, "expected id<TAB>token".into()))?;
            if id.parse::<usize>().ok() != Some(expected) {
                return Err(err(no, format!("expected id {expected}")));
            }
            tokens.push(unescape(tok).map_err(|m| err(no, m))?);
        }
        let mut merge_list = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let (no, line) = lines.next().ok_or_else(|| err(0, "missing merge lines".into()))?;
            let mut parts = line.split('\t');
            let (Some(l), Some(r), Some(o), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(err(no, "expected left<TAB>right<TAB>result".into()));
            };
            merge_list.push(Merge {
                left: unescape(l).map_err(|m| err(no, m))?,
                right: unescape(r).map_err(|m| err(no, m))?,
                result: unescape(o).map_err(|m| err(no, m))?,
            });
        }
        if let Some((no, _)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(err(no, "trailing content".into()));
        }
        Self::from_parts(tokens, merge_list).map_err(|m| err(0, m))
    }

    /// Hex SHA-256 of the serialized vocabulary.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape `\\{}`", other.map_or(String::new(), String::from))),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// training

#[derive(PartialEq, Eq)]
struct Candidate {
    count: u64,
    merged: String,
    left: String,
    pair: (u32, u32),
}

impl Ord for Candidate {
    // Max-heap: higher count first, then lexicographically smaller merged
    // string, then smaller left part.
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.merged.cmp(&self.merged))
            .then_with(|| other.left.cmp(&self.left))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Trainer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    words: Vec<(Vec<u32>, u64)>,
    counts: HashMap<(u32, u32), u64>,
    occurrences: HashMap<(u32, u32), HashSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl Trainer {
    fn candidate(&self, pair: (u32, u32), count: u64) -> Candidate {
        let left = self.tokens[pair.0 as usize].clone();
        let merged = format!("{left}{}", self.tokens[pair.1 as usize]);
        Candidate {
            count,
            merged,
            left,
            pair,
        }
    }

    fn add_word_pairs(&mut self, w: usize, sign: i64, touched: &mut HashSet<(u32, u32)>) {
        let (symbols, freq) = &self.words[w];
        for pair in symbols.windows(2).map(|p| (p[0], p[1])) {
            if pair.0 == UNK || pair.1 == UNK {
                continue;
            }
            let c = self.counts.entry(pair).or_insert(0);
            if sign > 0 {
                *c += freq;
                self.occurrences.entry(pair).or_default().insert(w);
            } else {
                *c -= freq;
            }
            touched.insert(pair);
        }
    }

    fn apply(&mut self, pair: (u32, u32), merged_id: u32) {
        let words: Vec<usize> = self
            .occurrences
            .get(&pair)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        let mut touched = HashSet::new();
        for w in words {
            if !self.words[w].0.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            self.add_word_pairs(w, -1, &mut touched);
            let symbols = &self.words[w].0;
            let mut next = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
                    next.push(merged_id);
                    i += 2;
                } else {
                    next.push(symbols[i]);
                    i += 1;
                }
            }
            self.words[w].0 = next;
            self.add_word_pairs(w, 1, &mut touched);
        }
        for p in touched {
            let count = self.counts[&p];
            if count > 0 {
                let cand = self.candidate(p, count);
                self.heap.push(cand);
            }
        }
    }
}

/// Trains a BPE vocabulary of (at most) `vocab_size` tokens on the
/// concatenated corpora, one sentence per line.
///
/// The initial inventory is every character seen plus the boundary marker.
/// Merges greedily take the most frequent adjacent pair, ties going to the
/// lexicographically smallest merged string, and stop once the vocabulary is
/// full or no pair occurs at least twice. The achieved size may therefore be
/// below `vocab_size`.
pub fn train_vocab<S: AsRef<str>>(corpora: &[S], vocab_size: usize) -> Result<Vocabulary, TokenizerError> {
    let mut word_freq: HashMap<&str, u64> = HashMap::new();
    for corpus in corpora {
        for line in corpus.as_ref().lines() {
            if line.is_empty() {
                continue;
            }
            for piece in line.split(' ') {
                *word_freq.entry(piece).or_insert(0) += 1;
            }
        }
    }
    if word_freq.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut chars: BTreeSet<char> = word_freq
        .keys()
        .flat_map(|w| w.chars())
        .filter(|&c| c != MARKER)
        .collect();
    chars.insert(MARKER);
    let required = SPECIALS.len() + chars.len();
    if vocab_size < required {
        return Err(TokenizerError::VocabTooSmall {
            requested: vocab_size,
            required,
        });
    }

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(chars.iter().map(|c| c.to_string()));
    let index: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .skip(SPECIALS.len())
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let marker = index[&MARKER.to_string()];

    // Sorted so word indices do not depend on hash order.
    let mut sorted: Vec<(&str, u64)> = word_freq.into_iter().collect();
    sorted.sort_unstable();
    let words: Vec<(Vec<u32>, u64)> = sorted
        .into_iter()
        .map(|(w, f)| {
            let mut symbols = vec![marker];
            symbols.extend(w.chars().map(|c| if c == MARKER { UNK } else { index[&c.to_string()] }));
            (symbols, f)
        })
        .collect();

    let mut trainer = Trainer {
        tokens,
        index,
        words,
        counts: HashMap::new(),
        occurrences: HashMap::new(),
        heap: BinaryHeap::new(),
    };
    let mut touched = HashSet::new();
    for w in 0..trainer.words.len() {
        trainer.add_word_pairs(w, 1, &mut touched);
    }
    for pair in touched {
        let cand = trainer.candidate(pair, trainer.counts[&pair]);
        trainer.heap.push(cand);
    }

    let mut merges = Vec::new();
    while trainer.tokens.len() < vocab_size {
        let Some(best) = trainer.heap.pop() else { break };
        if trainer.counts.get(&best.pair).copied() != Some(best.count) {
            continue;
        }
        if best.count < 2 {
            break;
        }
        if SPECIALS.contains(&best.merged.as_str()) {
            trainer.counts.insert(best.pair, 0);
            continue;
        }
        let merged_id = match trainer.index.get(&best.merged) {
            Some(&id) => id,
            None => {
                let id = trainer.tokens.len() as u32;
                trainer.tokens.push(best.merged.clone());
                trainer.index.insert(best.merged.clone(), id);
                id
            }
        };
        merges.push(Merge {
            left: best.left.clone(),
            right: trainer.tokens[best.pair.1 as usize].clone(),
            result: best.merged.clone(),
        });
        trainer.apply(best.pair, merged_id);
    }
    if trainer.tokens.len() < vocab_size {
        log::warn!(
            "corpus supports only {} of the requested {vocab_size} tokens",
            trainer.tokens.len()
        );
    }
    Ok(Vocabulary::from_parts(trainer.tokens, merges).expect("trainer produces a consistent vocabulary"))
}
