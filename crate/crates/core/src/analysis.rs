//! Transfer-analysis metrics, training-mix construction and report output.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::subword::{wordpiece_tokenize, SubwordVocab};
use crate::treebank::{parse_conllu, Sentence};

fn wordpiece_pieces<'a>(corpus: &'a [Sentence], vocab: &'a SubwordVocab) -> impl Iterator<Item = String> + 'a {
    corpus
        .iter()
        .flat_map(|s| s.tokens.iter())
        .flat_map(move |t| wordpiece_tokenize(&t.form, vocab))
}

/// Percentage of test WordPiece types that also occur in the training data.
pub fn tau(train: &[Sentence], test: &[Sentence], vocab: &SubwordVocab) -> Result<f64> {
    let train_types: BTreeSet<String> = wordpiece_pieces(train, vocab).collect();
    let test_types: BTreeSet<String> = wordpiece_pieces(test, vocab).collect();
    if test_types.is_empty() {
        return Err(Error::Analysis("test corpus has no WordPiece types".into()));
    }
    let shared = test_types.intersection(&train_types).count();
    Ok(100.0 * shared as f64 / test_types.len() as f64)
}

/// Words per WordPiece token, in percent; 100 means nothing was split.
pub fn eta(test: &[Sentence], vocab: &SubwordVocab) -> Result<f64> {
    let words: usize = test.iter().map(Sentence::len).sum();
    let pieces = wordpiece_pieces(test, vocab).count();
    if pieces == 0 {
        return Err(Error::Analysis("test corpus has no words".into()));
    }
    Ok(100.0 * words as f64 / pieces as f64)
}

/// Syntactic typology data: per-language feature vectors or a pairwise
/// distance table.
#[derive(Clone, Debug, PartialEq)]
pub enum Typology {
    Features(HashMap<String, Vec<f64>>),
    Distances(HashMap<(String, String), f64>),
}

impl Typology {
    /// Reads `LANGFEAT v1` (`lang f1 .. fk`) or `DIST v1` (`langA langB d`).
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (_, header) = lines.next().ok_or_else(|| Error::Analysis("empty typology file".into()))?;
        let bad = |i: usize, what: &str| Error::Analysis(format!("line {}: {}", i + 1, what));
        match header.trim() {
            "LANGFEAT v1" => {
                let mut features = HashMap::new();
                let mut width = None;
                for (i, line) in lines {
                    let mut fields = line.split_whitespace();
                    let lang = fields.next().unwrap().to_string();
                    let values = fields
                        .map(|f| f.parse::<f64>().map_err(|_| bad(i, "invalid feature value")))
                        .collect::<Result<Vec<_>>>()?;
                    if *width.get_or_insert(values.len()) != values.len() {
                        return Err(bad(i, "feature vectors differ in length"));
                    }
                    if features.insert(lang, values).is_some() {
                        return Err(bad(i, "duplicate language"));
                    }
                }
                Ok(Typology::Features(features))
            }
            "DIST v1" => {
                let mut distances = HashMap::new();
                for (i, line) in lines {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    if fields.len() != 3 {
                        return Err(bad(i, "expected 'langA langB d'"));
                    }
                    let d: f64 = fields[2].parse().map_err(|_| bad(i, "invalid distance"))?;
                    distances.insert((fields[0].to_string(), fields[1].to_string()), d);
                }
                Ok(Typology::Distances(distances))
            }
            other => Err(Error::Analysis(format!("unknown typology header '{}'", other))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Typology::parse(&fs::read_to_string(path)?)
    }

    pub fn distance(&self, a: &str, b: &str) -> Result<f64> {
        match self {
            Typology::Distances(table) => table
                .get(&(a.to_string(), b.to_string()))
                .or_else(|| table.get(&(b.to_string(), a.to_string())))
                .copied()
                .or(if a == b { Some(0.0) } else { None })
                .ok_or_else(|| Error::Analysis(format!("no distance between '{}' and '{}'", a, b))),
            Typology::Features(features) => {
                let get = |lang: &str| {
                    features
                        .get(lang)
                        .ok_or_else(|| Error::Analysis(format!("no features for '{}'", lang)))
                };
                cosine_distance(get(a)?, get(b)?)
            }
        }
    }
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Analysis(format!(
            "feature vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Analysis("cosine distance of an all-zero feature vector".into()));
    }
    Ok(1.0 - dot / (na * nb))
}

/// Mean of `1 - d` between the test language and each training language.
pub fn sigma_bar<S: AsRef<str>>(test: &str, train: &[S], typology: &Typology) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::Analysis("no training languages".into()));
    }
    let mut total = 0.0;
    for lang in train {
        let d = typology.distance(test, lang.as_ref())?;
        total += (1.0 - d).clamp(0.0, 1.0);
    }
    Ok(total / train.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixSource {
    pub lang: String,
    pub path: PathBuf,
    /// Word budget.
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixSpec {
    pub sources: Vec<MixSource>,
    pub seed: u64,
}

/// Languages and per-language word budgets of the named training mixes.
pub fn preset(name: &str) -> Option<Vec<(&'static str, usize)>> {
    let each = |langs: &[&'static str], budget| langs.iter().map(|&l| (l, budget)).collect();
    match name {
        "expEn" => Some(each(&["en"], 200_000)),
        "expLatin" => Some(each(&["en", "it", "no", "cs"], 50_000)),
        "expSOV" => Some(each(&["hi", "ko"], 100_000)),
        "expMix" => Some(each(&["en", "it", "no", "cs", "ru", "hi", "ko", "ar"], 50_000)),
        _ => None,
    }
}

pub const PRESETS: [&str; 4] = ["expEn", "expLatin", "expSOV", "expMix"];

impl MixSpec {
    pub fn total_budget(&self) -> usize {
        self.sources.iter().map(|s| s.budget).sum()
    }

    pub fn from_preset(name: &str, paths: &HashMap<String, PathBuf>, seed: u64) -> Result<Self> {
        let langs = preset(name).ok_or_else(|| Error::Analysis(format!("unknown preset '{}'", name)))?;
        let sources = langs
            .into_iter()
            .map(|(lang, budget)| {
                let path = paths
                    .get(lang)
                    .ok_or_else(|| Error::Analysis(format!("preset {} needs a treebank for '{}'", name, lang)))?;
                Ok(MixSource {
                    lang: lang.to_string(),
                    path: path.clone(),
                    budget,
                })
            })
            .collect::<Result<_>>()?;
        Ok(MixSpec { sources, seed })
    }

    /// Text form: `seed N`, then either `preset NAME` followed by
    /// `path LANG FILE` lines, or `LANG FILE BUDGET` lines. Relative paths
    /// resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut seed = 0;
        let mut preset_name = None;
        let mut paths = HashMap::new();
        let mut sources = Vec::new();
        let bad = |i: usize, what: &str| Error::Analysis(format!("mix spec line {}: {}", i + 1, what));
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                [first, ..] if first.starts_with('#') => {}
                ["seed", value] => seed = value.parse().map_err(|_| bad(i, "invalid seed"))?,
                ["preset", name] => preset_name = Some(name.to_string()),
                ["path", lang, file] => {
                    paths.insert(lang.to_string(), base.join(file));
                }
                [lang, file, budget] => {
                    let budget: usize = budget.parse().map_err(|_| bad(i, "invalid budget"))?;
                    if budget == 0 {
                        return Err(bad(i, "budget must be positive"));
                    }
                    sources.push(MixSource {
                        lang: lang.to_string(),
                        path: base.join(file),
                        budget,
                    });
                }
                _ => return Err(bad(i, "unrecognized line")),
            }
        }
        match preset_name {
            Some(name) => {
                if !sources.is_empty() {
                    return Err(Error::Analysis("mix spec mixes a preset with explicit sources".into()));
                }
                MixSpec::from_preset(&name, &paths, seed)
            }
            None if sources.is_empty() => Err(Error::Analysis("mix spec lists no sources".into())),
            None => Ok(MixSpec { sources, seed }),
        }
    }
}

/// Takes sentences in shuffled order until the word count first reaches
/// `budget`, keeping the sentence that crosses it. Returns `None` as the
/// second element when the budget was met, or the corpus size when it was
/// not.
pub fn take_budget(corpus: &[Sentence], budget: usize, rng: &mut ChaCha8Rng) -> (Vec<Sentence>, Option<usize>) {
    let total: usize = corpus.iter().map(Sentence::len).sum();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(rng);
    if total <= budget {
        return (order.into_iter().map(|i| corpus[i].clone()).collect(), Some(total));
    }
    let mut taken = Vec::new();
    let mut words = 0;
    for i in order {
        if words >= budget {
            break;
        }
        words += corpus[i].len();
        taken.push(corpus[i].clone());
    }
    (taken, None)
}

#[derive(Clone, Debug)]
pub struct MixOutput {
    pub sentences: Vec<Sentence>,
    pub warnings: Vec<String>,
    /// Realized word count per language, in source order.
    pub words: Vec<(String, usize)>,
}

/// Mixes in-memory corpora `(lang, sentences, budget)`.
pub fn mix_corpora(corpora: &[(String, Vec<Sentence>, usize)], seed: u64) -> MixOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::new();
    let mut warnings = Vec::new();
    let mut words = Vec::new();
    for (lang, corpus, budget) in corpora {
        let (taken, short) = take_budget(corpus, *budget, &mut rng);
        if let Some(total) = short {
            let message = format!(
                "{}: budget {} words is not below the treebank size {}; using the whole treebank",
                lang, budget, total
            );
            warn!("{}", message);
            warnings.push(message);
        }
        words.push((lang.clone(), taken.iter().map(Sentence::len).sum()));
        sentences.extend(taken);
    }
    sentences.shuffle(&mut rng);
    MixOutput {
        sentences,
        warnings,
        words,
    }
}

pub fn mix_treebanks(spec: &MixSpec) -> Result<MixOutput> {
    let corpora = spec
        .sources
        .iter()
        .map(|source| {
            let text = fs::read_to_string(&source.path).map_err(|e| {
                Error::Analysis(format!("cannot read treebank {}: {}", source.path.display(), e))
            })?;
            Ok((source.lang.clone(), parse_conllu(&text)?, source.budget))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mix_corpora(&corpora, spec.seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferRecord {
    pub lang: String,
    pub las: f64,
    pub tau: f64,
    pub eta: f64,
    pub sigma_bar: f64,
    /// True when no training language shares the test language's family.
    pub no_related_training_language: bool,
}

pub const REPORT_HEADER: &str = "lang\tLAS\ttau\teta\tsigma_bar\tno_family_in_train";

fn sorted(records: &[TransferRecord]) -> Vec<&TransferRecord> {
    let mut rows: Vec<&TransferRecord> = records.iter().collect();
    rows.sort_by(|a, b| b.las.total_cmp(&a.las));
    rows
}

/// One row per record, LAS descending.
pub fn emit_report(records: &[TransferRecord]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in sorted(records) {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.lang, r.las, r.tau, r.eta, r.sigma_bar, r.no_related_training_language as u8
        )
        .unwrap();
    }
    out
}

/// Long format `lang, metric, value` for plotting, LAS descending.
pub fn emit_plot_table(records: &[TransferRecord]) -> String {
    let mut out = String::from("lang\tmetric\tvalue\n");
    for r in sorted(records) {
        for (metric, value) in [("LAS", r.las), ("tau", r.tau), ("eta", r.eta), ("sigma_bar", r.sigma_bar)] {
            writeln!(out, "{}\t{}\t{}", r.lang, metric, value).unwrap();
        }
    }
    out
}

pub fn parse_report(text: &str) -> Result<Vec<TransferRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_HEADER => {}
        _ => return Err(Error::Analysis("missing report header".into())),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = || Error::Analysis(format!("report row {}: malformed", i + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(TransferRecord {
                lang: f[0].to_string(),
                las: num(f[1])?,
                tau: num(f[2])?,
                eta: num(f[3])?,
                sigma_bar: num(f[4])?,
                no_related_training_language: match f[5] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad()),
                },
            })
        })
        .collect()
}
