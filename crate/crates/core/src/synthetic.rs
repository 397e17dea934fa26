//! Seeded toy treebanks and a matching subword vocabulary, for smoke tests
//! and small training runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::subword::{SubwordVocab, DEFAULT_UNK};
use crate::treebank::{Sentence, Token};

const NOUNS: [&str; 8] = ["dog", "cat", "river", "teacher", "garden", "window", "farmer", "song"];
const VERBS: [&str; 6] = ["sees", "likes", "paints", "follows", "hears", "builds"];
const ADJECTIVES: [&str; 5] = ["small", "green", "quiet", "unaffable", "clever"];
const DETERMINERS: [&str; 3] = ["the", "a", "every"];
const ADVERBS: [&str; 3] = ["often", "slowly", "today"];

/// Pieces that split some lexicon words into several subwords.
const SPLIT_PIECES: [&str; 8] = ["un", "##aff", "##able", "teach", "##er", "gard", "##en", "##s"];

fn noun_phrase(rng: &mut ChaCha8Rng, words: &mut Vec<(String, &'static str)>) -> usize {
    // returns offset of the noun within the pushed words
    let start = words.len();
    words.push((DETERMINERS.choose(rng).unwrap().to_string(), "det"));
    if rng.gen_bool(0.4) {
        words.push((ADJECTIVES.choose(rng).unwrap().to_string(), "amod"));
    }
    words.push((NOUNS.choose(rng).unwrap().to_string(), ""));
    words.len() - 1 - start
}

/// Subject-verb-object clauses with optional adjectives and adverbs.
pub fn toy_sentence(rng: &mut ChaCha8Rng, sent_id: String) -> Sentence {
    let mut words: Vec<(String, &'static str)> = Vec::new();
    let subject = noun_phrase(rng, &mut words);
    let subject_len = words.len();
    let verb = words.len();
    words.push((VERBS.choose(rng).unwrap().to_string(), "root"));
    let object_start = words.len();
    let object = object_start + noun_phrase(rng, &mut words);
    let adverb = rng.gen_bool(0.5).then(|| {
        words.push((ADVERBS.choose(rng).unwrap().to_string(), "advmod"));
        words.len() - 1
    });

    let mut tokens = Vec::with_capacity(words.len());
    for (i, (form, label)) in words.into_iter().enumerate() {
        let (head, label) = if i == verb {
            (0, "root")
        } else if i == subject {
            (verb + 1, "nsubj")
        } else if i == object {
            (verb + 1, "obj")
        } else if Some(i) == adverb {
            (verb + 1, label)
        } else if i < subject_len {
            (subject + 1, label)
        } else {
            (object + 1, label)
        };
        tokens.push(Token::new(i + 1, form, head, label));
    }
    let mut sentence = Sentence {
        comments: vec![format!("# sent_id = {}", sent_id)],
        tokens,
        sent_id,
        ..Sentence::default()
    };
    let text = sentence.forms().join(" ");
    sentence.set_text(text);
    sentence
}

pub fn toy_treebank(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| toy_sentence(&mut rng, format!("toy-{}", i + 1))).collect()
}

/// Covers every lexicon word; a few words only tokenize into pieces.
pub fn toy_vocab() -> SubwordVocab {
    let whole = NOUNS
        .iter()
        .chain(&VERBS)
        .chain(&ADJECTIVES)
        .chain(&DETERMINERS)
        .chain(&ADVERBS)
        .filter(|w| !matches!(**w, "unaffable" | "teacher" | "garden"));
    let entries: Vec<&str> = std::iter::once(DEFAULT_UNK)
        .chain(whole.copied())
        .chain(SPLIT_PIECES)
        .collect();
    SubwordVocab::new(entries, DEFAULT_UNK).expect("toy vocabulary is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subword::wordpiece_tokenize;
    use crate::treebank::validate_tree;

    #[test]
    fn toy_sentences_are_single_root_trees() {
        for s in toy_treebank(200, 5) {
            assert!(validate_tree(&s, true).is_ok(), "{:?}", s.heads());
            assert!(s.len() >= 5);
            assert_eq!(s.raw_text.as_deref(), Some(s.forms().join(" ").as_str()));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(toy_treebank(20, 9), toy_treebank(20, 9));
        assert_ne!(toy_treebank(20, 9), toy_treebank(20, 10));
    }

    #[test]
    fn vocab_covers_lexicon_without_unk() {
        let vocab = toy_vocab();
        assert_eq!(wordpiece_tokenize("unaffable", &vocab), ["un", "##aff", "##able"]);
        assert_eq!(wordpiece_tokenize("teacher", &vocab), ["teach", "##er"]);
        for s in toy_treebank(100, 1) {
            for t in &s.tokens {
                assert!(!wordpiece_tokenize(&t.form, &vocab).contains(&DEFAULT_UNK.to_string()));
            }
        }
    }
}
