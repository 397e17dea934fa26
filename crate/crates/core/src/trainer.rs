//! Training loop: Adam updates on the globally normalized loss, periodic
//! dev evaluation, early stopping and parsing with a trained checkpoint.

use std::fmt::Write as _;

use log::info;
use ndarray::{Array1, Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::decoder::{assign_labels, mst_decode};
use crate::embeddings::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::eval::{score, Mode};
use crate::mtt::{arc_nll_and_grad, label_index, label_nll_and_grad, local_normalize};
use crate::scorer::{forward, BiaffineParams, Checkpoint, ScorerDims, DEFAULT_ARC_DIM, DEFAULT_LABEL_DIM};
use crate::subword::{align, pool_word_vectors, SubwordVocab};
use crate::treebank::{ensure_tree, Sentence};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub arc_dim: usize,
    pub label_dim: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub single_root: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient norm bound, `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Hard cap on the number of updates, `None` runs until early stopping.
    pub max_updates: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-6,
            arc_dim: DEFAULT_ARC_DIM,
            label_dim: DEFAULT_LABEL_DIM,
            eval_every: 500,
            patience: 10,
            batch_size: 32,
            seed: 1,
            single_root: true,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(5.0),
            max_updates: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{}' for {}", value, key)))
}

fn parse_optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value {
        "none" | "off" => Ok(None),
        _ => parse_value(key, value).map(Some),
    }
}

/// Splits flat `key = value` text; `#` starts a comment line.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

impl TrainConfig {
    /// Sets one field by name. Returns `Ok(false)` for keys that are not
    /// training options.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "arc_dim" => self.arc_dim = parse_value(key, value)?,
            "label_dim" => self.label_dim = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "single_root" => self.single_root = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_optional(key, value)?,
            "max_updates" => self.max_updates = parse_optional(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        for (key, value) in parse_key_values(text)? {
            if !config.set(&key, &value)? {
                return Err(Error::Config(format!("unknown key '{}'", key)));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_key_values(&self) -> String {
        let optional = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut out = String::new();
        writeln!(out, "learning_rate = {}", self.learning_rate).unwrap();
        writeln!(out, "arc_dim = {}", self.arc_dim).unwrap();
        writeln!(out, "label_dim = {}", self.label_dim).unwrap();
        writeln!(out, "eval_every = {}", self.eval_every).unwrap();
        writeln!(out, "patience = {}", self.patience).unwrap();
        writeln!(out, "batch_size = {}", self.batch_size).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        writeln!(out, "single_root = {}", self.single_root).unwrap();
        writeln!(out, "beta1 = {}", self.beta1).unwrap();
        writeln!(out, "beta2 = {}", self.beta2).unwrap();
        writeln!(out, "epsilon = {}", self.epsilon).unwrap();
        writeln!(out, "clip_norm = {}", optional(self.clip_norm.map(|v| v.to_string()))).unwrap();
        writeln!(out, "max_updates = {}", optional(self.max_updates.map(|v| v.to_string()))).unwrap();
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.arc_dim > 0
            && self.label_dim > 0
            && self.eval_every > 0
            && self.patience > 0
            && self.batch_size > 0
            && self.epsilon > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0)
            && self.max_updates.is_none_or(|m| m > 0);
        if !positive {
            return Err(Error::Config("training options must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Turns sentences into pooled word vectors.
#[derive(Clone, Copy)]
pub struct Featurizer<'a> {
    pub vocab: &'a SubwordVocab,
    pub provider: &'a EmbeddingProvider,
}

impl<'a> Featurizer<'a> {
    pub fn new(vocab: &'a SubwordVocab, provider: &'a EmbeddingProvider) -> Self {
        Featurizer { vocab, provider }
    }

    pub fn word_vectors(&self, sentence: &Sentence) -> Result<Array2<f64>> {
        let (subwords, alignment) = align(sentence, self.vocab);
        let vectors = self.provider.embed_sentence(&subwords, &sentence.sent_id)?;
        pool_word_vectors(vectors.view(), &alignment)
    }

    pub fn check_coverage(&self, sentence: &Sentence) -> Result<()> {
        let (subwords, _) = align(sentence, self.vocab);
        self.provider.check_coverage(&sentence.sent_id, &subwords)
    }
}

/// A gold sentence in the form the optimizer consumes.
#[derive(Clone, Debug)]
pub struct Example {
    pub words: Array2<f64>,
    pub heads: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Example {
    pub fn new(sentence: &Sentence, featurizer: &Featurizer, labels: &[String]) -> Result<Self> {
        Ok(Example {
            words: featurizer.word_vectors(sentence)?,
            heads: sentence.heads(),
            labels: sentence
                .tokens
                .iter()
                .map(|t| label_index(labels, &t.deprel))
                .collect::<Result<_>>()?,
        })
    }
}

/// Summed (not averaged) loss of one sentence and the matching parameter
/// gradient.
pub fn sentence_gradient(params: &BiaffineParams, example: &Example, single_root: bool) -> Result<(f64, BiaffineParams)> {
    let fwd = forward(example.words.view(), params)?;
    let (arc_nll, d_scores) = arc_nll_and_grad(&fwd.scores, &example.heads, single_root)?;
    let mut label_nll = 0.0;
    let mut d_labels: Vec<(usize, usize, Array1<f64>)> = Vec::with_capacity(example.heads.len());
    for (i, (&head, &label)) in example.heads.iter().zip(&example.labels).enumerate() {
        let scores = fwd.label_scores_for(params, head, i + 1);
        let (nll, grad) = label_nll_and_grad(scores.view(), label);
        label_nll += nll;
        d_labels.push((head, i + 1, grad));
    }
    let grads = fwd.backward(params, d_scores.view(), &d_labels);
    Ok((arc_nll + label_nll, grads))
}

/// Token-averaged loss over a batch and its gradient. Per-sentence work
/// runs in parallel; the reduction is sequential so results do not depend
/// on thread scheduling.
pub fn batch_loss_and_gradient(
    params: &BiaffineParams,
    batch: &[&Example],
    single_root: bool,
) -> Result<(f64, BiaffineParams)> {
    let parts: Vec<(f64, BiaffineParams)> = batch
        .par_iter()
        .map(|example| sentence_gradient(params, example, single_root))
        .collect::<Result<_>>()?;
    let tokens: usize = batch.iter().map(|e| e.heads.len()).sum();
    let scale = 1.0 / tokens as f64;
    let mut total = 0.0;
    let mut grads = params.zeros_like();
    for (loss, g) in &parts {
        total += loss;
        grads.scaled_add(scale, g);
    }
    Ok((total * scale, grads))
}

pub struct Adam {
    first: BiaffineParams,
    second: BiaffineParams,
    steps: i32,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(params: &BiaffineParams, config: &TrainConfig) -> Self {
        Adam {
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }

    pub fn step(&mut self, params: &mut BiaffineParams, grads: &BiaffineParams) {
        self.steps += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);
        let c1 = 1.0 - b1.powi(self.steps);
        let c2 = 1.0 - b2.powi(self.steps);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut())
            .zip(grads.tensors());
        for ((((_, p), (_, m)), (_, v)), (_, g)) in tensors {
            Zip::from(p).and(m).and(v).and(&g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

pub fn clip_gradient(grads: &mut BiaffineParams, max_norm: f64) -> f64 {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Validation {
    Improved,
    Stale,
    Stop,
}

/// Stops after `patience` consecutive validations without a strict
/// improvement of the best LAS.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, las: f64) -> Validation {
        if self.best.is_none_or(|best| las > best) {
            self.best = Some(las);
            self.stale = 0;
            Validation::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Validation::Stop
            } else {
                Validation::Stale
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub update: usize,
    pub train_loss: f64,
    pub dev_las: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EarlyStopping,
    MaxUpdates,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation.
    pub checkpoint: Checkpoint,
    pub best_las: f64,
    pub best_update: usize,
    pub updates: usize,
    pub stop_reason: StopReason,
    pub log: Vec<LogEntry>,
}

impl TrainOutcome {
    /// Tab-separated `(update, train_loss, dev_LAS)` rows after a header of
    /// `#`-prefixed configuration lines.
    pub fn log_tsv(&self, config: &TrainConfig) -> String {
        let mut out = String::new();
        for line in config.to_key_values().lines() {
            writeln!(out, "# {}", line).unwrap();
        }
        out.push_str("update\ttrain_loss\tdev_LAS\n");
        for entry in &self.log {
            writeln!(out, "{}\t{}\t{}", entry.update, entry.train_loss, entry.dev_las).unwrap();
        }
        out
    }
}

/// Sorted set of relation labels in a corpus.
pub fn label_inventory(sentences: &[Sentence]) -> Vec<String> {
    let mut labels: Vec<String> = sentences
        .iter()
        .flat_map(|s| s.tokens.iter().map(|t| t.deprel.clone()))
        .collect();
    labels.sort();
    labels.dedup();
    labels
}

/// Core loop with a caller-supplied validation function returning dev LAS.
pub fn train_with_validator<V>(
    config: &TrainConfig,
    examples: &[Example],
    labels: Vec<String>,
    input_dim: usize,
    mut validate: V,
) -> Result<TrainOutcome>
where
    V: FnMut(&Checkpoint) -> Result<f64>,
{
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = ScorerDims {
        input: input_dim,
        arc: config.arc_dim,
        label: config.label_dim,
        labels: labels.len(),
    };
    let mut checkpoint = Checkpoint {
        params: BiaffineParams::init(dims, &mut rng),
        labels,
    };
    let mut adam = Adam::new(&checkpoint.params, config);
    let mut stopping = EarlyStopping::new(config.patience);

    let mut best: Option<(Checkpoint, usize, f64)> = None;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut updates = 0;
    let mut loss_since_eval = 0.0;
    let mut batches_since_eval = 0;

    let stop_reason = 'training: loop {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, mut grads) = batch_loss_and_gradient(&checkpoint.params, &batch, config.single_root)?;
            if let Some(max_norm) = config.clip_norm {
                clip_gradient(&mut grads, max_norm);
            }
            adam.step(&mut checkpoint.params, &grads);
            updates += 1;
            loss_since_eval += loss;
            batches_since_eval += 1;

            let at_cap = config.max_updates.is_some_and(|m| updates >= m);
            if updates % config.eval_every == 0 || at_cap {
                let las = validate(&checkpoint)?;
                let train_loss = loss_since_eval / batches_since_eval as f64;
                info!("update {}: train loss {:.6}, dev LAS {:.2}", updates, train_loss, las);
                log.push(LogEntry {
                    update: updates,
                    train_loss,
                    dev_las: las,
                });
                loss_since_eval = 0.0;
                batches_since_eval = 0;

                let decision = stopping.observe(las);
                if decision == Validation::Improved {
                    best = Some((checkpoint.clone(), updates, las));
                }
                if decision == Validation::Stop {
                    break 'training StopReason::EarlyStopping;
                }
            }
            if at_cap {
                break 'training StopReason::MaxUpdates;
            }
        }
    };

    let (checkpoint, best_update, best_las) = best.expect("at least one validation ran");
    Ok(TrainOutcome {
        checkpoint,
        best_las,
        best_update,
        updates,
        stop_reason,
        log,
    })
}

/// Trains on `train_set`, scoring LAS on `dev_set` in gold-tokenization mode.
pub fn train(
    config: &TrainConfig,
    train_set: &[Sentence],
    dev_set: &[Sentence],
    featurizer: &Featurizer,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Config("training and dev sets must be non-empty".into()));
    }
    for sentence in train_set.iter().chain(dev_set) {
        if sentence.is_empty() {
            return Err(Error::Config(format!("sentence '{}' has no words", sentence.sent_id)));
        }
        featurizer.check_coverage(sentence)?;
    }
    for sentence in train_set {
        ensure_tree(sentence, config.single_root)?;
    }

    let labels = label_inventory(train_set);
    let examples = train_set
        .iter()
        .map(|s| Example::new(s, featurizer, &labels))
        .collect::<Result<Vec<_>>>()?;
    let dev_vectors = dev_set
        .iter()
        .map(|s| featurizer.word_vectors(s))
        .collect::<Result<Vec<_>>>()?;

    train_with_validator(config, &examples, labels, featurizer.provider.dim(), |checkpoint| {
        let predicted = dev_set
            .par_iter()
            .zip(&dev_vectors)
            .map(|(s, v)| predict_sentence(checkpoint, s, v, config.single_root))
            .collect::<Result<Vec<_>>>()?;
        Ok(score(dev_set, &predicted, Mode::Gold)?.las.f1)
    })
}

/// Copies `sentence` with HEAD and DEPREL predicted from `word_vectors`.
pub fn predict_sentence(
    checkpoint: &Checkpoint,
    sentence: &Sentence,
    word_vectors: &Array2<f64>,
    single_root: bool,
) -> Result<Sentence> {
    let fwd = forward(word_vectors.view(), &checkpoint.params)?;
    let normalized = local_normalize(&fwd.scores)?;
    let heads = mst_decode(&normalized, single_root);
    let labels = assign_labels(&fwd.label_scores(&checkpoint.params), &heads);
    let mut out = sentence.clone();
    for ((token, head), label) in out.tokens.iter_mut().zip(heads).zip(labels) {
        token.head = head;
        token.deprel = checkpoint.labels[label].clone();
    }
    Ok(out)
}

/// Parses sentences with a trained checkpoint; every column other than
/// HEAD and DEPREL is copied from the input.
pub fn parse(
    checkpoint: &Checkpoint,
    sentences: &[Sentence],
    featurizer: &Featurizer,
    single_root: bool,
) -> Result<Vec<Sentence>> {
    if featurizer.provider.dim() != checkpoint.params.dims().input {
        return Err(Error::Dimension(format!(
            "checkpoint expects {}-dimensional embeddings, provider gives {}",
            checkpoint.params.dims().input,
            featurizer.provider.dim()
        )));
    }
    sentences
        .par_iter()
        .map(|sentence| {
            if sentence.is_empty() {
                return Ok(sentence.clone());
            }
            let vectors = featurizer.word_vectors(sentence)?;
            predict_sentence(checkpoint, sentence, &vectors, single_root)
        })
        .collect()
}
