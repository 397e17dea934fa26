//! Acceptance checks, one line of output per criterion.

use std::collections::HashMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use graphdep::analysis::{eta, mix_corpora, sigma_bar, tau, Typology};
use graphdep::decoder::mst_decode;
use graphdep::embeddings::EmbeddingProvider;
use graphdep::eval::{score, Mode};
use graphdep::mtt::{arc_marginals, local_normalize, log_partition, tree_log_prob, NormalizedScores};
use graphdep::scorer::{arc_scores, BiaffineParams, ScorerDims};
use graphdep::subword::SubwordVocab;
use graphdep::synthetic::{toy_treebank, toy_vocab};
use graphdep::trainer::{
    parse, sentence_gradient, train, train_with_validator, Example, Featurizer, StopReason, TrainConfig,
};
use graphdep::treebank::{parse_conllu, validate_heads, write_conllu, Sentence};

type Check = Result<String, String>;

fn ensure(condition: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(message())
    }
}

/// Every head vector of length `n` forming a tree, by exhaustive search.
fn enumerate_trees(n: usize, single_root: bool) -> Vec<Vec<usize>> {
    let mut trees = Vec::new();
    let mut heads = vec![0; n];
    loop {
        let reaches_root = (0..n).all(|start| {
            let mut node = start + 1;
            for _ in 0..=n {
                if node == 0 {
                    return true;
                }
                node = heads[node - 1];
            }
            node == 0
        });
        let no_self = heads.iter().enumerate().all(|(i, &h)| h != i + 1);
        let roots = heads.iter().filter(|&&h| h == 0).count();
        if reaches_root && no_self && (!single_root || roots == 1) {
            trees.push(heads.clone());
        }
        let mut k = 0;
        loop {
            if k == n {
                return trees;
            }
            heads[k] += 1;
            if heads[k] <= n {
                break;
            }
            heads[k] = 0;
            k += 1;
        }
    }
}

fn tree_sum(weights: &Array2<f64>, heads: &[usize]) -> f64 {
    heads.iter().enumerate().map(|(i, &h)| weights[[h, i]]).sum()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn fill_uniform(tensor: ArrayViewMutD<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    let mut tensor = tensor;
    tensor.mapv_inplace(|_| rng.gen_range(-scale..scale));
}

fn random_params(rng: &mut ChaCha8Rng, dims: ScorerDims) -> BiaffineParams {
    let mut params = BiaffineParams::zeros(dims);
    for (_, tensor) in params.tensors_mut() {
        fill_uniform(tensor, rng, 1.0);
    }
    params
}

/// Normalized scores produced by the full scorer on random D=4 inputs.
fn random_instances(count: usize, seed: u64) -> Vec<NormalizedScores> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ScorerDims {
        input: 4,
        arc: 5,
        label: 3,
        labels: 2,
    };
    (0..count)
        .map(|i| {
            let n = 1 + i % 5;
            let params = random_params(&mut rng, dims);
            let words = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-2.0..2.0));
            local_normalize(&arc_scores(words.view(), &params).unwrap()).unwrap()
        })
        .collect()
}

fn close_relative(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let instances = random_instances(200, 101);
    let mut worst: f64 = 0.0;
    for single_root in [true, false] {
        for scores in &instances {
            let weights = scores.view().to_owned();
            let trees = enumerate_trees(scores.n(), single_root);
            let oracle = log_sum_exp(&trees.iter().map(|t| tree_sum(&weights, t)).collect::<Vec<_>>());
            let value = log_partition(scores, single_root).map_err(|e| e.to_string())?;
            ensure(close_relative(value, oracle, 1e-8), || {
                format!("n={} single_root={}: {} vs oracle {}", scores.n(), single_root, value, oracle)
            })?;
            worst = worst.max((value - oracle).abs() / oracle.abs().max(1.0));
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {:?}", elapsed))?;
    Ok(format!("400 cases, max rel err {:.1e}, {:.2?}", worst, elapsed))
}

fn criterion_2() -> Check {
    let mut worst: f64 = 0.0;
    for single_root in [true, false] {
        for scores in random_instances(200, 101) {
            let mut total = 0.0;
            for tree in enumerate_trees(scores.n(), single_root) {
                total += tree_log_prob(&scores, &tree, single_root).map_err(|e| e.to_string())?.exp();
            }
            worst = worst.max((total - 1.0).abs());
        }
    }
    ensure(worst <= 1e-8, || format!("max deviation {:e}", worst))?;
    Ok(format!("max |sum - 1| = {:.1e}", worst))
}

fn criterion_3() -> Check {
    let h = 1e-5;
    let mut worst_fd: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for single_root in [true, false] {
        for scores in random_instances(100, 303) {
            let n = scores.n();
            let mu = arc_marginals(&scores, single_root).map_err(|e| e.to_string())?;
            for head in 0..=n {
                for dep in 1..=n {
                    if head == dep {
                        continue;
                    }
                    let shifted = |delta: f64| {
                        let mut w = scores.view().to_owned();
                        w[[head, dep - 1]] += delta;
                        log_partition(&NormalizedScores::from_log_weights(w).unwrap(), single_root).unwrap()
                    };
                    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                    worst_fd = worst_fd.max((fd - mu[[head, dep - 1]]).abs());
                }
            }
            for dep in 0..n {
                worst_sum = worst_sum.max((mu.column(dep).sum() - 1.0).abs());
            }
            if single_root {
                worst_sum = worst_sum.max((mu.row(0).sum() - 1.0).abs());
            }
        }
    }
    ensure(worst_fd <= 1e-4, || format!("finite-difference error {:e}", worst_fd))?;
    ensure(worst_sum <= 1e-10, || format!("marginal sum error {:e}", worst_sum))?;
    Ok(format!("max FD err {:.1e}, max sum err {:.1e}", worst_fd, worst_sum))
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let dims = ScorerDims {
        input: 4,
        arc: 3,
        label: 2,
        labels: 3,
    };
    let fixtures: [(&[usize], &[usize]); 3] = [(&[2, 0, 2], &[0, 1, 2]), (&[0, 1, 1], &[1, 2, 0]), (&[3, 3, 0], &[2, 2, 1])];
    let h = 1e-6;
    let mut checked = 0;
    let mut near_zero = 0;
    let mut worst: f64 = 0.0;
    for single_root in [true, false] {
        for (heads, labels) in fixtures {
            let params = random_params(&mut rng, dims);
            let example = Example {
                words: Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.5..1.5)),
                heads: heads.to_vec(),
                labels: labels.to_vec(),
            };
            let (_, grads) = sentence_gradient(&params, &example, single_root).map_err(|e| e.to_string())?;
            let analytic: Vec<(&str, Vec<f64>)> =
                grads.tensors().into_iter().map(|(name, t)| (name, t.iter().copied().collect())).collect();
            for (t, (name, values)) in analytic.iter().enumerate() {
                for (k, &a) in values.iter().enumerate() {
                    let loss_at = |delta: f64| {
                        let mut p = params.clone();
                        let mut tensors = p.tensors_mut();
                        let entry = tensors[t].1.iter_mut().nth(k).unwrap();
                        *entry += delta;
                        drop(tensors);
                        sentence_gradient(&p, &example, single_root).unwrap().0
                    };
                    let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
                    let err = (a - fd).abs();
                    ensure(err <= 1e-4 * a.abs().max(fd.abs()) + 1e-8, || {
                        format!("{}[{}] analytic {} vs FD {}", name, k, a, fd)
                    })?;
                    let magnitude = a.abs().max(fd.abs());
                    if magnitude > 1e-6 {
                        worst = worst.max(err / magnitude);
                    } else {
                        near_zero += 1;
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!(
        "{} parameter entries, max rel err {:.1e} ({} entries below 1e-6 checked absolutely)",
        checked, worst, near_zero
    ))
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut trees = HashMap::new();
    for _ in 0..1000 {
        let n = rng.gen_range(1..=5);
        let raw = Array2::from_shape_fn((n + 1, n), |_| rng.gen_range(-5.0..5.0));
        let scores = NormalizedScores::from_log_weights(raw).unwrap();
        let weights = scores.view().to_owned();
        for single_root in [true, false] {
            let all = trees.entry((n, single_root)).or_insert_with(|| enumerate_trees(n, single_root));
            let best = all.iter().map(|t| tree_sum(&weights, t)).fold(f64::NEG_INFINITY, f64::max);
            let decoded = mst_decode(&scores, single_root);
            ensure(validate_heads(&decoded, single_root).is_ok(), || format!("invalid tree {:?}", decoded))?;
            let got = tree_sum(&weights, &decoded);
            ensure(got == best, || format!("n={} single_root={}: {} vs {}", n, single_root, got, best))?;
        }
    }
    Ok("2000 decodes equal the brute-force optimum".into())
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        arc_dim: 64,
        label_dim: 32,
        batch_size: 10,
        eval_every: 50,
        max_updates: Some(5000),
        seed: 3,
        ..TrainConfig::default()
    }
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let data = toy_treebank(50, 7);
    let vocab = toy_vocab();
    let provider = EmbeddingProvider::pseudo_random(11, 64).unwrap();
    let featurizer = Featurizer::new(&vocab, &provider);
    let config = overfit_config();
    let first = train(&config, &data, &data, &featurizer).map_err(|e| e.to_string())?;
    let second = train(&config, &data, &data, &featurizer).map_err(|e| e.to_string())?;

    let reached = first.log.iter().find(|e| e.dev_las >= 99.0).map(|e| e.update);
    ensure(reached.is_some_and(|u| u <= 5000), || "LAS never reached 99%".into())?;
    ensure(first.log == second.log, || "training logs differ between runs".into())?;
    ensure(first.checkpoint.to_text() == second.checkpoint.to_text(), || "checkpoints differ between runs".into())?;

    let parsed = parse(&first.checkpoint, &data, &featurizer, true).map_err(|e| e.to_string())?;
    let las = score(&data, &parsed, Mode::Gold).map_err(|e| e.to_string())?.las.f1;
    ensure(las >= 99.0, || format!("parsed training LAS {}", las))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {:?}", elapsed))?;
    Ok(format!(
        "LAS >= 99 at update {}, final training LAS {:.2}, reproducible, {:.1?}",
        reached.unwrap(),
        las,
        elapsed
    ))
}

fn criterion_7() -> Check {
    let example = Example {
        words: Array2::from_elem((2, 3), 0.5),
        heads: vec![0, 1],
        labels: vec![0, 0],
    };
    let mut scripted = vec![50.0, 60.0];
    scripted.extend([59.0; 10]);
    scripted.extend([99.0; 5]);
    let config = TrainConfig {
        eval_every: 1,
        arc_dim: 2,
        label_dim: 2,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let mut seen = Vec::new();
    let outcome = train_with_validator(&config, &[example], vec!["root".into()], 3, |checkpoint| {
        seen.push(checkpoint.to_text());
        Ok(scripted[seen.len() - 1])
    })
    .map_err(|e| e.to_string())?;
    ensure(outcome.stop_reason == StopReason::EarlyStopping, || "did not stop early".into())?;
    ensure(seen.len() == 12, || format!("{} validations ran", seen.len()))?;
    ensure(outcome.updates == 12, || format!("stopped at update {}", outcome.updates))?;
    ensure(outcome.best_las == 60.0 && outcome.best_update == 2, || {
        format!("best LAS {} at update {}", outcome.best_las, outcome.best_update)
    })?;
    ensure(outcome.checkpoint.to_text() == seen[1], || "returned checkpoint is not the LAS-60 one".into())?;
    Ok("halted after validation 12, returned the LAS-60 checkpoint".into())
}

fn four_token_gold() -> Sentence {
    let mut s = Sentence::from_triples(
        "e1",
        &[("Dogs", 2, "nsubj"), ("chase", 0, "root"), ("red", 4, "amod"), ("cars", 2, "obj")],
    );
    s.set_text("Dogs chase red cars");
    s
}

fn criterion_8() -> Check {
    let gold = vec![four_token_gold()];
    let metrics = |system: Sentence| score(&gold, &[system], Mode::Gold).map(|m| (m.uas.f1, m.las.f1));
    let same = metrics(four_token_gold()).map_err(|e| e.to_string())?;
    let mut head = four_token_gold();
    head.tokens[2].head = 2;
    let head = metrics(head).map_err(|e| e.to_string())?;
    let mut label = four_token_gold();
    label.tokens[3].deprel = "iobj".into();
    let label = metrics(label).map_err(|e| e.to_string())?;
    ensure(same == (100.0, 100.0), || format!("identical: {:?}", same))?;
    ensure(head == (75.0, 75.0), || format!("wrong head: {:?}", head))?;
    ensure(label == (100.0, 75.0), || format!("wrong label: {:?}", label))?;

    let corpus = toy_treebank(40, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let system: Vec<Sentence> = corpus
        .iter()
        .map(|s| {
            let mut s = s.clone();
            let n = s.len();
            for t in &mut s.tokens {
                if rng.gen_bool(0.2) {
                    t.head = (t.index % n) + 1;
                }
                if rng.gen_bool(0.2) {
                    t.deprel = "dep".into();
                }
            }
            s
        })
        .collect();
    let raw = score(&corpus, &system, Mode::Raw).map_err(|e| e.to_string())?;
    let gold_mode = score(&corpus, &system, Mode::Gold).map_err(|e| e.to_string())?;
    ensure(raw == gold_mode, || format!("raw {:?} vs gold {:?}", raw, gold_mode))?;
    ensure(raw.las.f1 < 100.0, || "perturbation had no effect".into())?;
    Ok(format!("fixtures ok; toy corpus raw = gold = LAS {:.2}", raw.las.f1))
}

fn one_sentence(words: &[&str]) -> Vec<Sentence> {
    let triples: Vec<(&str, usize, &str)> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (*w, if i == 0 { 0 } else { 1 }, if i == 0 { "root" } else { "dep" }))
        .collect();
    vec![Sentence::from_triples("m1", &triples)]
}

fn criterion_9() -> Check {
    let vocab = SubwordVocab::new(["[UNK]", "a", "b", "c", "x", "y", "##z"], "[UNK]").unwrap();
    let t = tau(&one_sentence(&["b", "c"]), &one_sentence(&["a", "b"]), &vocab).map_err(|e| e.to_string())?;
    let e = eta(&one_sentence(&["xz", "yz", "xz"]), &vocab).map_err(|e| e.to_string())?;
    let table = Typology::parse("DIST v1\nfo en 0.2\nfo no 0.4\n").map_err(|e| e.to_string())?;
    let s = sigma_bar("fo", &["en", "no"], &table).map_err(|e| e.to_string())?;
    ensure(t == 50.0, || format!("tau {}", t))?;
    ensure(e == 50.0, || format!("eta {}", e))?;
    ensure(s == 0.7, || format!("sigma_bar {}", s))?;
    Ok(format!("tau {}, eta {}, sigma_bar {}", t, e, s))
}

fn criterion_10() -> Check {
    let four = |i: usize| {
        Sentence::from_triples(
            format!("w{}", i),
            &[("a", 0, "root"), ("b", 1, "dep"), ("c", 1, "dep"), ("d", 1, "dep")],
        )
    };
    let corpus: Vec<Sentence> = (0..6).map(four).collect();
    let out = mix_corpora(&[("xx".into(), corpus.clone(), 10)], 21);
    ensure(out.sentences.len() == 3, || format!("{} sentences", out.sentences.len()))?;

    let varied = toy_treebank(60, 12);
    let sources = vec![("aa".to_string(), varied[..30].to_vec(), 80), ("bb".to_string(), varied[30..].to_vec(), 50)];
    let a = write_conllu(&mix_corpora(&sources, 99).sentences);
    let b = write_conllu(&mix_corpora(&sources, 99).sentences);
    ensure(a == b, || "same seed gave different corpora".into())?;
    Ok("3 sentences for budget 10; identical seeds give identical bytes".into())
}

const ROUND_TRIP_FIXTURES: &[&str] = &[
    "# sent_id = mwt-es\n# text = Vámonos al mar.\n1-2\tVámonos\t_\t_\t_\t_\t_\t_\t_\t_\n1\tVamos\tir\tVERB\t_\tMood=Imp|Number=Plur\t0\troot\t_\t_\n2\tnos\tnosotros\tPRON\t_\tCase=Acc\t1\tobj\t_\t_\n3-4\tal\t_\t_\t_\t_\t_\t_\t_\t_\n3\ta\ta\tADP\t_\t_\t5\tcase\t_\t_\n4\tel\tel\tDET\t_\tDefinite=Def\t5\tdet\t_\t_\n5\tmar\tmar\tNOUN\t_\tGender=Masc\t1\tobl\t_\tSpaceAfter=No\n6\t.\t.\tPUNCT\t_\t_\t1\tpunct\t_\t_\n\n",
    "# newdoc id = d1\n# sent_id = en-1\n# text = The cat sat.\n1\tThe\tthe\tDET\tDT\tDefinite=Def|PronType=Art\t2\tdet\t2:det\t_\n2\tcat\tcat\tNOUN\tNN\tNumber=Sing\t3\tnsubj\t3:nsubj\t_\n3\tsat\tsit\tVERB\tVBD\tTense=Past\t0\troot\t0:root\tSpaceAfter=No\n4\t.\t.\tPUNCT\t.\t_\t3\tpunct\t3:punct\t_\n\n",
    "# sent_id = empty-node\n1\tSue\tSue\tPROPN\t_\t_\t2\tnsubj\t_\t_\n2\tlikes\tlike\tVERB\t_\t_\t0\troot\t_\t_\n3\tcoffee\tcoffee\tNOUN\t_\t_\t2\tobj\t_\t_\n4\tand\tand\tCCONJ\t_\t_\t5\tcc\t_\t_\n5\tBill\tBill\tPROPN\t_\t_\t2\tconj\t_\t_\n5.1\tlikes\tlike\tVERB\t_\t_\t_\t_\t2:conj\tCopyOf=2\n6\ttea\ttea\tNOUN\t_\t_\t5\torphan\t5.1:obj\t_\n\n",
    "# sent_id = de-mwt\n1\tIch\tich\tPRON\t_\t_\t2\tnsubj\t_\t_\n2\tgehe\tgehen\tVERB\t_\t_\t0\troot\t_\t_\n3-4\tzum\t_\t_\t_\t_\t_\t_\t_\tSpaceAfter=No\n3\tzu\tzu\tADP\t_\t_\t5\tcase\t_\t_\n4\tdem\tder\tDET\t_\t_\t5\tdet\t_\t_\n5\tBahnhof\tBahnhof\tNOUN\t_\t_\t2\tobl:arg\t_\t_\n\n# sent_id = second\n1\tJa\tja\tINTJ\t_\t_\t0\troot\t_\t_\n\n",
];

fn criterion_11() -> Check {
    let mut checked = 0;
    for fixture in ROUND_TRIP_FIXTURES {
        let first = parse_conllu(fixture).map_err(|e| e.to_string())?;
        let written = write_conllu(&first);
        ensure(written == *fixture, || format!("rewritten text differs:\n{}", written))?;
        let second = parse_conllu(&written).map_err(|e| e.to_string())?;
        ensure(first == second, || "reparsed sentences differ".into())?;
        checked += first.len();
    }
    let toy = toy_treebank(30, 4);
    ensure(parse_conllu(&write_conllu(&toy)).map_err(|e| e.to_string())? == toy, || "toy corpus differs".into())?;
    Ok(format!("{} fixture sentences and 30 toy sentences round-trip", checked))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("partition function matches enumeration", criterion_1),
        ("tree probabilities sum to one", criterion_2),
        ("marginals match finite differences", criterion_3),
        ("end-to-end gradient check", criterion_4),
        ("decoder matches brute force", criterion_5),
        ("overfits a 50-sentence toy treebank", criterion_6),
        ("early stopping boundary", criterion_7),
        ("evaluator fixtures", criterion_8),
        ("transfer metric fixtures", criterion_9),
        ("treebank mixer", criterion_10),
        ("CoNLL-U round trip", criterion_11),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {}: {}", i + 1, name, detail),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} FAIL  {}: {}", i + 1, name, detail);
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
