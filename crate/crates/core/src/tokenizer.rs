//! Deterministic source-code tokenization with byte-span alignment.
//!
//! Splitting is whitespace + punctuation based: maximal runs of
//! `[A-Za-z0-9_]` form word tokens, every other non-whitespace character is
//! its own token. Spans index bytes of the original source, which is what
//! lets the AST module line tokens up with parse-tree nodes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

/// Surface forms of the reserved ids. Angle brackets make them unreachable
/// by the splitter (`<` is punctuation), so they can never collide with a
/// real corpus token.
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<cls>", "<sep>", "<unk>"];

/// Immutable token -> id table. Ids are dense, reserved ids come first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id for a surface token, falling back to UNK.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.lookup(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Splits source into (start, end) byte spans of surface tokens.
/// Word characters are ASCII alphanumerics and `_`; any other
/// non-whitespace character stands alone.
pub fn split_surface(source: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut word_start: Option<usize> = None;
    for (pos, ch) in source.char_indices() {
        let is_word = ch.is_ascii_alphanumeric() || ch == '_';
        if is_word {
            if word_start.is_none() {
                word_start = Some(pos);
            }
            continue;
        }
        if let Some(start) = word_start.take() {
            spans.push((start, pos));
        }
        if !ch.is_whitespace() {
            spans.push((pos, pos + ch.len_utf8()));
        }
    }
    if let Some(start) = word_start {
        spans.push((start, source.len()));
    }
    spans
}

/// Builds a frequency-ordered vocabulary over the corpus. Reserved ids come
/// first; ties in frequency break lexicographically so the result is a pure
/// function of the corpus contents.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::invalid("corpus is empty"));
    }
    if max_size <= RESERVED_TOKENS.len() {
        return Err(Error::invalid(format!(
            "max_size must exceed {}",
            RESERVED_TOKENS.len()
        )));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        let doc = doc.as_ref();
        for (s, e) in split_surface(doc) {
            *counts.entry(&doc[s..e]).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        ranked
            .into_iter()
            .take(max_size - RESERVED_TOKENS.len())
            .map(|(t, _)| t.to_string()),
    );
    Ok(Vocabulary::from_tokens(tokens))
}

/// A tokenized source file: vocab ids plus the byte span each token covers.
/// CLS is first and SEP last; both carry empty spans since they do not
/// correspond to source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedCode {
    ids: Vec<u32>,
    spans: Vec<(usize, usize)>,
    source: String,
}

impl TokenizedCode {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn is_special(&self, index: usize) -> bool {
        matches!(self.ids[index], PAD_ID | CLS_ID | SEP_ID)
    }

    pub fn surface(&self, index: usize) -> &str {
        let (s, e) = self.spans[index];
        &self.source[s..e]
    }

    /// Index of the token whose span starts at `start_byte`, ignoring
    /// specials. Used by tests that need to re-locate a token after a
    /// source edit.
    pub fn token_at_start(&self, start_byte: usize) -> Option<usize> {
        (0..self.len())
            .find(|&i| !self.is_special(i) && self.spans[i].0 == start_byte)
    }
}

/// Tokenizes `source` against `vocab`, keeping at most `max_len` ids
/// including the CLS/SEP wrappers (head truncation).
pub fn tokenize(source: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenizedCode> {
    if max_len < 3 {
        return Err(Error::invalid("max_len must be >= 3"));
    }
    let surface = split_surface(source);
    let budget = max_len - 2;
    let mut ids = Vec::with_capacity(surface.len().min(budget) + 2);
    let mut spans = Vec::with_capacity(ids.capacity());
    ids.push(CLS_ID);
    spans.push((0, 0));
    for &(s, e) in surface.iter().take(budget) {
        ids.push(vocab.id_or_unk(&source[s..e]));
        spans.push((s, e));
    }
    ids.push(SEP_ID);
    spans.push((source.len(), source.len()));
    Ok(TokenizedCode {
        ids,
        spans,
        source: source.to_string(),
    })
}

/// Vocab file: one token per line, line number = id, reserved tokens first.
pub fn write_vocab_file(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for t in vocab.tokens() {
        writeln!(w, "{t}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vocab_file(path: &Path) -> Result<Vocabulary> {
    let r = BufReader::new(File::open(path)?);
    let mut tokens = Vec::new();
    for line in r.lines() {
        tokens.push(line?);
    }
    if tokens.len() < RESERVED_TOKENS.len() {
        return Err(Error::format(format!(
            "{}: vocab file shorter than the reserved prefix",
            path.display()
        )));
    }
    for (i, want) in RESERVED_TOKENS.iter().enumerate() {
        if tokens[i] != *want {
            return Err(Error::format(format!(
                "{}: line {i} is {:?}, expected reserved token {want:?}",
                path.display(),
                tokens[i]
            )));
        }
    }
    Ok(Vocabulary::from_tokens(tokens))
}

/// Token dump: `id<TAB>start<TAB>end<TAB>surface` per token.
pub fn format_token_dump(toks: &TokenizedCode, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for i in 0..toks.len() {
        let (s, e) = toks.spans()[i];
        let surface = if toks.is_special(i) {
            vocab.token(toks.ids()[i]).unwrap_or("?")
        } else {
            toks.surface(i)
        };
        let _ = writeln!(out, "{}\t{}\t{}\t{}", toks.ids()[i], s, e, surface);
    }
    out
}
