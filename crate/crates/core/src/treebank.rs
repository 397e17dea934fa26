//! CoNLL-U reading and writing, and structural validation of dependency trees.
//!
//! Only basic syntactic word rows (integer IDs) take part in scoring and
//! decoding. Multiword token ranges (`1-2`) and empty nodes (`3.1`) are kept
//! verbatim so that a read/write cycle reproduces the input.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// A syntactic word row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: String,
    /// Head index, 0 is ROOT.
    pub head: usize,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
    /// Character span `[start, end)` in the sentence text, when it could be recovered.
    pub char_span: Option<(usize, usize)>,
}

impl Token {
    pub fn new(index: usize, form: impl Into<String>, head: usize, deprel: impl Into<String>) -> Self {
        Token {
            index,
            form: form.into(),
            lemma: "_".into(),
            upos: "_".into(),
            xpos: "_".into(),
            feats: "_".into(),
            head,
            deprel: deprel.into(),
            deps: "_".into(),
            misc: "_".into(),
            char_span: None,
        }
    }

    fn columns(&self) -> [String; 10] {
        [
            self.index.to_string(),
            self.form.clone(),
            self.lemma.clone(),
            self.upos.clone(),
            self.xpos.clone(),
            self.feats.clone(),
            self.head.to_string(),
            self.deprel.clone(),
            self.deps.clone(),
            self.misc.clone(),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecialKind {
    /// Surface token spanning several words, e.g. `1-2`.
    Multiword { first: usize, last: usize },
    /// Empty node of the enhanced graph, e.g. `3.1`.
    Empty,
}

/// A row that is preserved but never scored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecialRow {
    /// Number of word rows that precede this row in the source.
    pub position: usize,
    pub kind: SpecialKind,
    /// The ten columns, verbatim.
    pub columns: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    /// Comment lines including the leading `#`.
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
    pub special: Vec<SpecialRow>,
    pub sent_id: String,
    pub raw_text: Option<String>,
}

impl Sentence {
    /// Builds a sentence from (form, head, deprel) triples.
    pub fn from_triples<S: AsRef<str>>(sent_id: impl Into<String>, words: &[(S, usize, S)]) -> Self {
        let tokens = words
            .iter()
            .enumerate()
            .map(|(i, (form, head, rel))| Token::new(i + 1, form.as_ref(), *head, rel.as_ref()))
            .collect();
        Sentence {
            sent_id: sent_id.into(),
            tokens,
            ..Default::default()
        }
    }

    /// Unannotated sentence from raw text, one word per whitespace-separated
    /// chunk.
    pub fn from_raw_text(sent_id: impl Into<String>, text: &str) -> Self {
        let sent_id = sent_id.into();
        let tokens = text
            .split_whitespace()
            .enumerate()
            .map(|(i, form)| Token::new(i + 1, form, 0, "_"))
            .collect();
        let mut sentence = Sentence {
            comments: vec![format!("# sent_id = {}", sent_id)],
            tokens,
            sent_id,
            ..Sentence::default()
        };
        sentence.set_text(text.trim());
        sentence
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    /// Sets `raw_text` and a matching `# text =` comment.
    pub fn set_text(&mut self, text: impl Into<String>) {
        let text = text.into();
        self.comments.retain(|c| metadata_value(c, "text").is_none());
        self.comments.push(format!("# text = {}", text));
        self.raw_text = Some(text);
        self.attach_char_offsets();
    }

    /// Recovers character offsets of every word by greedy left-to-right
    /// matching of surface forms against `raw_text`, skipping whitespace.
    ///
    /// Words inside a multiword token share the span of that token. Once a
    /// form cannot be found, it and all following words are left without a
    /// span.
    pub fn attach_char_offsets(&mut self) {
        for token in &mut self.tokens {
            token.char_span = None;
        }
        let Some(text) = &self.raw_text else { return };
        let chars: Vec<char> = text.chars().collect();

        let mut units: Vec<(String, usize, usize)> = Vec::new();
        let mut word = 1;
        while word <= self.tokens.len() {
            let mwt = self.special.iter().find_map(|row| match row.kind {
                SpecialKind::Multiword { first, last } if first == word => Some((row.columns[1].clone(), last)),
                _ => None,
            });
            match mwt {
                Some((form, last)) => {
                    let last = last.min(self.tokens.len()).max(word);
                    units.push((form, word, last));
                    word = last + 1;
                }
                None => {
                    units.push((self.tokens[word - 1].form.clone(), word, word));
                    word += 1;
                }
            }
        }

        let mut cursor = 0;
        for (form, first, last) in units {
            let form: Vec<char> = form.chars().collect();
            while cursor < chars.len() && chars[cursor].is_whitespace() {
                cursor += 1;
            }
            let Some(start) = find_chars(&chars, &form, cursor) else { return };
            let end = start + form.len();
            for token in &mut self.tokens[first - 1..last] {
                token.char_span = Some((start, end));
            }
            cursor = end;
        }
    }
}

fn find_chars(haystack: &[char], needle: &[char], from: usize) -> Option<usize> {
    if needle.is_empty() || from + needle.len() > haystack.len() {
        return None;
    }
    (from..=haystack.len() - needle.len()).find(|&i| haystack[i..i + needle.len()] == *needle)
}

fn metadata_value<'a>(comment: &'a str, key: &str) -> Option<&'a str> {
    let rest = comment.strip_prefix('#')?.trim_start();
    let rest = rest.strip_prefix(key)?.trim_start();
    let value = rest.strip_prefix('=')?;
    Some(value.strip_prefix(' ').unwrap_or(value))
}

fn conllu_error(line: usize, message: impl Into<String>) -> Error {
    Error::Conllu {
        line,
        message: message.into(),
    }
}

/// Reads all sentences from CoNLL-U text.
///
/// Sentences without a `# sent_id` comment get their 1-based position in
/// the input as identifier.
pub fn parse_conllu(text: &str) -> Result<Vec<Sentence>> {
    read_conllu(text, false)
}

/// Like [`parse_conllu`], but accepts `_` in the HEAD column (read as 0),
/// for input that is yet to be parsed.
pub fn parse_conllu_unannotated(text: &str) -> Result<Vec<Sentence>> {
    read_conllu(text, true)
}

fn read_conllu(text: &str, allow_missing_heads: bool) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut current = Sentence::default();
    let mut in_block = false;

    let finish = |sentence: &mut Sentence, sentences: &mut Vec<Sentence>| {
        let mut sentence = std::mem::take(sentence);
        if sentence.sent_id.is_empty() {
            sentence.sent_id = (sentences.len() + 1).to_string();
        }
        sentence.attach_char_offsets();
        sentences.push(sentence);
    };

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);

        if line.trim().is_empty() {
            if in_block {
                finish(&mut current, &mut sentences);
                in_block = false;
            }
            continue;
        }
        in_block = true;

        if line.starts_with('#') {
            if let Some(id) = metadata_value(line, "sent_id") {
                current.sent_id = id.trim().to_string();
            } else if let Some(text) = metadata_value(line, "text") {
                current.raw_text = Some(text.to_string());
            }
            current.comments.push(line.to_string());
            continue;
        }

        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != 10 {
            return Err(conllu_error(lineno, format!("expected 10 columns, found {}", columns.len())));
        }
        let id = columns[0];
        let position = current.tokens.len();

        if let Some((first, last)) = id.split_once('-') {
            let (first, last) = match (first.parse::<usize>(), last.parse::<usize>()) {
                (Ok(f), Ok(l)) if f >= 1 && f <= l => (f, l),
                _ => return Err(conllu_error(lineno, format!("malformed ID '{}'", id))),
            };
            current.special.push(SpecialRow {
                position,
                kind: SpecialKind::Multiword { first, last },
                columns: columns.iter().map(|c| c.to_string()).collect(),
            });
        } else if let Some((word, sub)) = id.split_once('.') {
            if word.parse::<usize>().is_err() || sub.parse::<usize>().is_err() {
                return Err(conllu_error(lineno, format!("malformed ID '{}'", id)));
            }
            current.special.push(SpecialRow {
                position,
                kind: SpecialKind::Empty,
                columns: columns.iter().map(|c| c.to_string()).collect(),
            });
        } else {
            let index: usize = id
                .parse()
                .map_err(|_| conllu_error(lineno, format!("malformed ID '{}'", id)))?;
            if index != position + 1 {
                return Err(conllu_error(
                    lineno,
                    format!("malformed ID '{}': expected {}", id, position + 1),
                ));
            }
            let head: usize = match columns[6] {
                "_" if allow_missing_heads => 0,
                value => value
                    .parse()
                    .map_err(|_| conllu_error(lineno, format!("non-integer HEAD '{}'", value)))?,
            };
            current.tokens.push(Token {
                index,
                form: columns[1].to_string(),
                lemma: columns[2].to_string(),
                upos: columns[3].to_string(),
                xpos: columns[4].to_string(),
                feats: columns[5].to_string(),
                head,
                deprel: columns[7].to_string(),
                deps: columns[8].to_string(),
                misc: columns[9].to_string(),
                char_span: None,
            });
        }
    }
    if in_block {
        finish(&mut current, &mut sentences);
    }

    Ok(sentences)
}

/// Serializes sentences as CoNLL-U, each block followed by one blank line.
pub fn write_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for sentence in sentences {
        for comment in &sentence.comments {
            out.push_str(comment);
            out.push('\n');
        }
        let mut special = sentence.special.iter().peekable();
        for (i, token) in sentence.tokens.iter().enumerate() {
            while let Some(row) = special.next_if(|row| row.position <= i) {
                out.push_str(&row.columns.join("\t"));
                out.push('\n');
            }
            out.push_str(&token.columns().join("\t"));
            out.push('\n');
        }
        for row in special {
            out.push_str(&row.columns.join("\t"));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    HeadOutOfRange { token: usize, head: usize },
    SelfLoop { token: usize },
    Cycle(BTreeSet<usize>),
    RootChildren(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::HeadOutOfRange { token, head } => write!(f, "token {} has out-of-range head {}", token, head),
            Violation::SelfLoop { token } => write!(f, "token {} is its own head", token),
            Violation::Cycle(nodes) => {
                let nodes: Vec<String> = nodes.iter().map(|n| n.to_string()).collect();
                write!(f, "cycle {{{}}}", nodes.join(","))
            }
            Violation::RootChildren(count) => write!(f, "{} root children", count),
        }
    }
}

/// Checks that `heads` (entry `i` is the head of word `i + 1`) forms a tree
/// rooted at ROOT.
pub fn validate_heads(heads: &[usize], single_root: bool) -> std::result::Result<(), Vec<Violation>> {
    let n = heads.len();
    let mut violations = Vec::new();

    for (i, &head) in heads.iter().enumerate() {
        let token = i + 1;
        if head > n {
            violations.push(Violation::HeadOutOfRange { token, head });
        } else if head == token {
            violations.push(Violation::SelfLoop { token });
        }
    }

    // 0 unvisited, 1 on current path, 2 done
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut node = start;
        loop {
            if node > n || state[node] == 2 {
                break;
            }
            if state[node] == 1 {
                let pos = path.iter().position(|&v| v == node).unwrap();
                let cycle: BTreeSet<usize> = path[pos..].iter().copied().collect();
                if cycle.len() > 1 {
                    violations.push(Violation::Cycle(cycle));
                }
                break;
            }
            state[node] = 1;
            path.push(node);
            node = heads[node - 1];
        }
        for v in path {
            state[v] = 2;
        }
    }

    if single_root {
        let root_children = heads.iter().filter(|&&h| h == 0).count();
        if root_children > 1 {
            violations.push(Violation::RootChildren(root_children));
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

pub fn validate_tree(sentence: &Sentence, single_root: bool) -> std::result::Result<(), Vec<Violation>> {
    validate_heads(&sentence.heads(), single_root)
}

/// Like [`validate_tree`], but as an error value.
pub fn ensure_tree(sentence: &Sentence, single_root: bool) -> Result<()> {
    validate_tree(sentence, single_root).map_err(|v| Error::InvalidTree {
        sent_id: sentence.sent_id.clone(),
        violations: v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const MINIMAL: &str = "1\tthe\t_\t_\t_\t_\t2\tdet\t_\t_\n2\tcat\t_\t_\t_\t_\t0\troot\t_\t_\n";

    #[test]
    fn parses_minimal_block() {
        let sentences = parse_conllu(MINIMAL).unwrap();
        assert_eq!(sentences.len(), 1);
        assert_eq!(sentences[0].len(), 2);
        assert_eq!(sentences[0].heads(), vec![2, 0]);
        assert_eq!(sentences[0].sent_id, "1");
    }

    #[test]
    fn empty_input() {
        assert!(parse_conllu("").unwrap().is_empty());
        assert!(parse_conllu("\n\n").unwrap().is_empty());
    }

    #[test]
    fn non_integer_head_names_line() {
        let text = "# sent_id = a\n1\tthe\t_\t_\t_\t_\tx\tdet\t_\t_\n";
        match parse_conllu(text) {
            Err(Error::Conllu { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn malformed_id() {
        let text = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\nx\tb\t_\t_\t_\t_\t1\tdep\t_\t_\n";
        match parse_conllu(text) {
            Err(Error::Conllu { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("malformed ID"));
            }
            other => panic!("unexpected {:?}", other),
        }
        assert!(parse_conllu("1-x\ta\t_\t_\t_\t_\t_\t_\t_\t_\n").is_err());
        assert!(parse_conllu("2\ta\t_\t_\t_\t_\t0\troot\t_\t_\n").is_err());
    }

    #[test]
    fn comments_before_tokens_and_one_blank_line_between_blocks() {
        let text = format!("# sent_id = s1\n# text = the cat\n{}\n# sent_id = s2\n{}\n", MINIMAL, MINIMAL);
        let sentences = parse_conllu(&text).unwrap();
        assert_eq!(sentences[0].sent_id, "s1");
        assert_eq!(sentences[0].raw_text.as_deref(), Some("the cat"));
        let written = write_conllu(&sentences);
        assert_eq!(written, text);
        assert!(written.starts_with("# sent_id = s1\n# text = the cat\n1\t"));
        assert_eq!(written.matches("\n\n").count(), 2);
    }

    #[test]
    fn multiword_tokens_are_preserved_but_not_scored() {
        let text = "# text = Vámonos al mar\n\
1-2\tVámonos\t_\t_\t_\t_\t_\t_\t_\t_\n\
1\tVamos\tir\tVERB\t_\t_\t0\troot\t_\t_\n\
2\tnos\tnosotros\tPRON\t_\t_\t1\tobj\t_\t_\n\
3-4\tal\t_\t_\t_\t_\t_\t_\t_\t_\n\
3\ta\ta\tADP\t_\t_\t5\tcase\t_\t_\n\
4\tel\tel\tDET\t_\t_\t5\tdet\t_\t_\n\
5\tmar\tmar\tNOUN\t_\t_\t1\tobl\t_\tSpaceAfter=No\n\
5.1\tvan\tir\tVERB\t_\t_\t_\t_\t1:conj\t_\n\n";
        let sentences = parse_conllu(text).unwrap();
        let s = &sentences[0];
        assert_eq!(s.len(), 5);
        assert_eq!(s.special.len(), 3);
        assert_eq!(write_conllu(&sentences), text);
        assert_eq!(s.tokens[0].char_span, Some((0, 7)));
        assert_eq!(s.tokens[1].char_span, Some((0, 7)));
        assert_eq!(s.tokens[2].char_span, Some((8, 10)));
        assert_eq!(s.tokens[4].char_span, Some((11, 14)));
    }

    #[test]
    fn char_offsets_skip_whitespace_and_count_chars() {
        let mut s = Sentence::from_triples("x", &[("Čau", 0, "root"), ("!", 1, "punct")]);
        s.set_text("  Čau!");
        assert_eq!(s.tokens[0].char_span, Some((2, 5)));
        assert_eq!(s.tokens[1].char_span, Some((5, 6)));

        let mut s = Sentence::from_triples("x", &[("a", 0, "root"), ("zz", 1, "dep"), ("b", 1, "dep")]);
        s.set_text("a b");
        assert_eq!(s.tokens[0].char_span, Some((0, 1)));
        assert_eq!(s.tokens[1].char_span, None);
        assert_eq!(s.tokens[2].char_span, None);
    }

    #[test]
    fn validate_examples() {
        assert_eq!(validate_heads(&[0, 1, 2], true), Ok(()));
        let err = validate_heads(&[2, 1], true).unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].to_string(), "cycle {1,2}");
        let err = validate_heads(&[0, 0], true).unwrap_err();
        assert_eq!(err[0].to_string(), "2 root children");
        assert_eq!(validate_heads(&[0, 0], false), Ok(()));
        assert!(matches!(
            validate_heads(&[0, 5], false).unwrap_err()[0],
            Violation::HeadOutOfRange { token: 2, head: 5 }
        ));
        assert!(matches!(validate_heads(&[0, 2], false).unwrap_err()[0], Violation::SelfLoop { token: 2 }));
    }

    fn reachability_ok(heads: &[usize], single_root: bool) -> bool {
        let n = heads.len();
        if heads.iter().any(|&h| h > n) {
            return false;
        }
        let mut visits = vec![0usize; n + 1];
        let mut stack = vec![0];
        let mut steps = 0;
        while let Some(node) = stack.pop() {
            visits[node] += 1;
            steps += 1;
            if steps > 4 * (n + 1) {
                return false;
            }
            for (i, &h) in heads.iter().enumerate() {
                if h == node {
                    stack.push(i + 1);
                }
            }
        }
        let tree = visits.iter().all(|&v| v == 1);
        tree && (!single_root || heads.iter().filter(|&&h| h == 0).count() == 1)
    }

    proptest! {
        #[test]
        fn validate_agrees_with_reachability(
            heads in (1usize..7).prop_flat_map(|n| prop::collection::vec(0..=n, n)),
            single_root in any::<bool>(),
        ) {
            prop_assert_eq!(validate_heads(&heads, single_root).is_ok(), reachability_ok(&heads, single_root));
        }
    }
}
