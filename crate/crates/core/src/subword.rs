//! WordPiece segmentation, word/subword alignment and mean pooling.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::treebank::Sentence;

pub const DEFAULT_CONTINUATION_PREFIX: &str = "##";
pub const DEFAULT_UNK: &str = "[UNK]";
pub const DEFAULT_MAX_WORD_CHARS: usize = 200;

#[derive(Clone, Debug)]
pub struct SubwordVocab {
    ids: HashMap<String, usize>,
    pieces: Vec<String>,
    unk_token: String,
    prefix: String,
    max_word_chars: usize,
}

impl SubwordVocab {
    /// Builds a vocabulary; ids follow the order of `entries`.
    pub fn new<I, S>(entries: I, unk_token: &str) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ids = HashMap::new();
        let mut pieces = Vec::new();
        for entry in entries {
            let entry = entry.into();
            if !ids.contains_key(&entry) {
                ids.insert(entry.clone(), pieces.len());
                pieces.push(entry);
            }
        }
        if pieces.is_empty() {
            return Err(Error::Vocab("vocabulary is empty".into()));
        }
        if !ids.contains_key(unk_token) {
            return Err(Error::Vocab(format!("unknown token '{}' is not in the vocabulary", unk_token)));
        }
        Ok(SubwordVocab {
            ids,
            pieces,
            unk_token: unk_token.to_string(),
            prefix: DEFAULT_CONTINUATION_PREFIX.to_string(),
            max_word_chars: DEFAULT_MAX_WORD_CHARS,
        })
    }

    /// One entry per line, line number is the id.
    pub fn from_text(text: &str, unk_token: &str) -> Result<Self> {
        Self::new(
            text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).filter(|l| !l.is_empty()),
            unk_token,
        )
    }

    pub fn load(path: impl AsRef<Path>, unk_token: &str) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, unk_token)
    }

    pub fn with_continuation_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefix = prefix.into();
        self
    }

    pub fn with_max_word_chars(mut self, max: usize) -> Self {
        self.max_word_chars = max;
        self
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.ids.contains_key(piece)
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.ids.get(piece).copied()
    }

    pub fn unk_token(&self) -> &str {
        &self.unk_token
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = self.pieces.join("\n");
        out.push('\n');
        out
    }
}

/// Greedy longest-match-first WordPiece segmentation. A word that cannot be
/// fully segmented maps to the single unknown token.
pub fn wordpiece_tokenize(word: &str, vocab: &SubwordVocab) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() || chars.len() > vocab.max_word_chars {
        return vec![vocab.unk_token.clone()];
    }

    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let mut candidate: String = chars[start..end].iter().collect();
            if start > 0 {
                candidate.insert_str(0, &vocab.prefix);
            }
            if vocab.contains(&candidate) {
                found = Some(candidate);
                break;
            }
            end -= 1;
        }
        match found {
            Some(piece) => pieces.push(piece),
            None => return vec![vocab.unk_token.clone()],
        }
        start = end;
    }
    pieces
}

/// Per word, the half-open range of its subwords.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordAlignment {
    ranges: Vec<Range<usize>>,
}

impl SubwordAlignment {
    /// Checks that ranges are non-empty, ordered and contiguous from 0.
    pub fn new(ranges: Vec<Range<usize>>) -> Result<Self> {
        let mut expected = 0;
        for range in &ranges {
            if range.start != expected || range.end <= range.start {
                return Err(Error::Dimension(format!("invalid subword range {:?}", range)));
            }
            expected = range.end;
        }
        Ok(SubwordAlignment { ranges })
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn words(&self) -> usize {
        self.ranges.len()
    }

    pub fn subwords(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }
}

pub fn align_words<S: AsRef<str>>(words: &[S], vocab: &SubwordVocab) -> (Vec<String>, SubwordAlignment) {
    let mut subwords = Vec::new();
    let mut ranges = Vec::with_capacity(words.len());
    for word in words {
        let start = subwords.len();
        subwords.extend(wordpiece_tokenize(word.as_ref(), vocab));
        ranges.push(start..subwords.len());
    }
    (subwords, SubwordAlignment { ranges })
}

pub fn align(sentence: &Sentence, vocab: &SubwordVocab) -> (Vec<String>, SubwordAlignment) {
    align_words(&sentence.forms(), vocab)
}

/// Word vectors as the mean of their subword vectors.
pub fn pool_word_vectors(subword_vectors: ArrayView2<f64>, alignment: &SubwordAlignment) -> Result<Array2<f64>> {
    if subword_vectors.nrows() != alignment.subwords() {
        return Err(Error::Dimension(format!(
            "{} subword vectors for {} aligned subwords",
            subword_vectors.nrows(),
            alignment.subwords()
        )));
    }
    let mut pooled = Array2::zeros((alignment.words(), subword_vectors.ncols()));
    for (i, range) in alignment.ranges.iter().enumerate() {
        let block = subword_vectors.slice(ndarray::s![range.clone(), ..]);
        pooled.row_mut(i).assign(&block.mean_axis(Axis(0)).unwrap());
    }
    Ok(pooled)
}
