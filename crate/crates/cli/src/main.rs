use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use graphdep::analysis::{
    emit_plot_table, emit_report, eta, mix_treebanks, sigma_bar, tau, MixSpec, TransferRecord, Typology,
};
use graphdep::decoder::{brute_force_best_tree, for_each_tree, mst_decode, MAX_BRUTE_FORCE_N};
use graphdep::embeddings::EmbeddingProvider;
use graphdep::eval::{score, Mode};
use graphdep::mtt::{arc_marginals, log_partition, NormalizedScores};
use graphdep::scorer::Checkpoint;
use graphdep::subword::{SubwordVocab, DEFAULT_UNK};
use graphdep::synthetic::{toy_treebank, toy_vocab};
use graphdep::trainer::{parse, parse_key_values, train, Featurizer, TrainConfig};
use graphdep::treebank::{parse_conllu, parse_conllu_unannotated, write_conllu, Sentence};
use graphdep::Error;

#[derive(Parser)]
#[command(name = "graphdep", version, about = "Globally normalized biaffine dependency parser")]
struct Cli {
    /// Worker threads for per-sentence work (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Random seed, overriding the one in config files
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Require exactly one dependent of ROOT (default)
    #[arg(long, global = true, conflicts_with = "multi_root")]
    single_root: bool,

    /// Allow several dependents of ROOT
    #[arg(long, global = true)]
    multi_root: bool,

    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a parser from a key = value config file
    Train(TrainArgs),
    /// Parse CoNLL-U or raw text with a trained checkpoint
    Parse(ParseArgs),
    /// Score a system CoNLL-U file against a gold one
    Evaluate(EvaluateArgs),
    /// Compute transfer metrics and write a report
    Analyze(AnalyzeArgs),
    /// Build a multilingual training mix
    Mix(MixArgs),
    /// Exhaustive reference computations for small sentences
    Oracle(OracleArgs),
    /// Write a synthetic treebank and matching vocabulary
    Toy(ToyArgs),
}

#[derive(Args)]
struct TrainArgs {
    config: PathBuf,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Embedding table file or `pseudo:<seed>:<dim>`
    #[arg(long)]
    embeddings: String,
    #[arg(long, default_value = DEFAULT_UNK)]
    unk_token: String,
    /// Input is raw text, one sentence per line, whitespace tokenized
    #[arg(long)]
    raw: bool,
    /// Input file, `-` for stdin
    input: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    gold: PathBuf,
    system: PathBuf,
    #[arg(long, default_value = "gold")]
    mode: String,
    /// Print JSON instead of tab-separated values
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value = DEFAULT_UNK)]
    unk_token: String,
    /// Training treebank, repeatable
    #[arg(long = "train", required = true)]
    train: Vec<PathBuf>,
    /// Training language code, repeatable
    #[arg(long = "train-lang", required = true)]
    train_langs: Vec<String>,
    /// LANGFEAT or DIST file
    #[arg(long)]
    typology: PathBuf,
    /// Test language as LANG GOLD SYSTEM, repeatable
    #[arg(long = "test", num_args = 3, value_names = ["LANG", "GOLD", "SYSTEM"], required = true)]
    test: Vec<String>,
    /// Test language without a related training language, repeatable
    #[arg(long = "unrelated")]
    unrelated: Vec<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the long-format plot table here
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct MixArgs {
    /// Mix specification file
    spec: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(subcommand)]
    command: OracleCommand,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Number of dependency trees over N words
    Count { n: usize },
    /// Compare decoding and partition function with exhaustive search on
    /// a whitespace-separated (n+1) x n matrix of log arc weights
    Check { scores: PathBuf },
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 50)]
    sentences: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn read_input(path: &Path) -> Result<String, Failure> {
    if path == Path::new("-") {
        let mut text = String::new();
        io::stdin().read_to_string(&mut text)?;
        Ok(text)
    } else {
        fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {}", path.display(), e)))
    }
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {}", path.display(), e))),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_treebank(path: &Path) -> Result<Vec<Sentence>, Failure> {
    parse_conllu(&read_input(path)?).map_err(|e| Failure::Data(format!("{}: {}", path.display(), e)))
}

fn single_root(cli: &Cli, default: bool) -> bool {
    if cli.multi_root {
        false
    } else if cli.single_root {
        true
    } else {
        default
    }
}

fn run_train(cli: &Cli, args: &TrainArgs) -> CliResult {
    let text = read_input(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let mut config = TrainConfig::default();
    let mut files: HashMap<String, String> = HashMap::new();
    for (key, value) in parse_key_values(&text)? {
        if !config.set(&key, &value)? {
            match key.as_str() {
                "train" | "dev" | "vocab" | "embeddings" | "output" | "log" | "unk_token" => {
                    files.insert(key, value);
                }
                _ => return Err(Failure::Usage(format!("unknown config key '{}'", key))),
            }
        }
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.single_root = single_root(cli, config.single_root);
    config.validate()?;

    let required = |key: &str| {
        files
            .get(key)
            .cloned()
            .ok_or_else(|| Failure::Usage(format!("config is missing '{}'", key)))
    };
    let path = |key: &str| required(key).map(|v| base.join(v));
    let train_set = read_treebank(&path("train")?)?;
    let dev_set = read_treebank(&path("dev")?)?;
    let unk = files.get("unk_token").map_or(DEFAULT_UNK, String::as_str);
    let vocab = SubwordVocab::load(path("vocab")?, unk)?;
    let embeddings = required("embeddings")?;
    let provider = if embeddings.starts_with("pseudo:") {
        EmbeddingProvider::from_spec(&embeddings)?
    } else {
        EmbeddingProvider::from_spec(&base.join(&embeddings).to_string_lossy())?
    };
    let output = path("output")?;
    let log_path = match files.get("log") {
        Some(log) => base.join(log),
        None => PathBuf::from(format!("{}.log", output.display())),
    };

    let featurizer = Featurizer::new(&vocab, &provider);
    let outcome = train(&config, &train_set, &dev_set, &featurizer)?;
    outcome.checkpoint.save(&output)?;
    let mut saved_config = config.to_key_values();
    let mut keys: Vec<_> = files.iter().collect();
    keys.sort();
    for (key, value) in keys {
        saved_config.push_str(&format!("{} = {}\n", key, value));
    }
    fs::write(format!("{}.config", output.display()), saved_config)?;
    fs::write(&log_path, outcome.log_tsv(&config))?;
    println!(
        "best dev LAS {:.2} at update {} of {}; checkpoint written to {}",
        outcome.best_las,
        outcome.best_update,
        outcome.updates,
        output.display()
    );
    Ok(())
}

fn run_parse(cli: &Cli, args: &ParseArgs) -> CliResult {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let vocab = SubwordVocab::load(&args.vocab, &args.unk_token)?;
    let provider = EmbeddingProvider::from_spec(&args.embeddings)?;
    let text = read_input(&args.input)?;
    let sentences = if args.raw {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| Sentence::from_raw_text((i + 1).to_string(), line))
            .collect()
    } else {
        parse_conllu_unannotated(&text)?
    };
    info!("parsing {} sentences", sentences.len());
    let parsed = parse(&checkpoint, &sentences, &Featurizer::new(&vocab, &provider), single_root(cli, true))?;
    write_output(args.output.as_deref(), &write_conllu(&parsed))
}

fn run_evaluate(args: &EvaluateArgs) -> CliResult {
    let mode: Mode = args.mode.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let gold = read_treebank(&args.gold)?;
    let system = read_treebank(&args.system)?;
    let metrics = score(&gold, &system, mode)?;
    let report = if args.json {
        format!("{}\n", metrics.to_json())
    } else {
        metrics.to_tsv()
    };
    write_output(None, &report)
}

fn run_analyze(args: &AnalyzeArgs) -> CliResult {
    let vocab = SubwordVocab::load(&args.vocab, &args.unk_token)?;
    let typology = Typology::load(&args.typology)?;
    let mut train = Vec::new();
    for path in &args.train {
        train.extend(read_treebank(path)?);
    }
    let mut records = Vec::new();
    for triple in args.test.chunks(3) {
        let [lang, gold_path, system_path] = triple else {
            return Err(Failure::Usage("--test takes LANG GOLD SYSTEM".into()));
        };
        let gold = read_treebank(Path::new(gold_path))?;
        let system = read_treebank(Path::new(system_path))?;
        records.push(TransferRecord {
            lang: lang.clone(),
            las: score(&gold, &system, Mode::Gold)?.las.f1,
            tau: tau(&train, &gold, &vocab)?,
            eta: eta(&gold, &vocab)?,
            sigma_bar: sigma_bar(lang, &args.train_langs, &typology)?,
            no_related_training_language: args.unrelated.contains(lang),
        });
    }
    if let Some(plot) = &args.plot {
        fs::write(plot, emit_plot_table(&records))?;
    }
    write_output(args.output.as_deref(), &emit_report(&records))
}

fn run_mix(cli: &Cli, args: &MixArgs) -> CliResult {
    let text = read_input(&args.spec)?;
    let mut spec = MixSpec::parse(&text, args.spec.parent().unwrap_or(Path::new(".")))
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let mixed = mix_treebanks(&spec)?;
    for warning in &mixed.warnings {
        eprintln!("warning: {}", warning);
    }
    for (lang, words) in &mixed.words {
        info!("{}: {} words", lang, words);
    }
    write_output(args.output.as_deref(), &write_conllu(&mixed.sentences))
}

fn read_matrix(path: &Path) -> Result<NormalizedScores, Failure> {
    let text = read_input(path)?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|v| match v {
                    "-inf" => Ok(f64::NEG_INFINITY),
                    _ => v.parse::<f64>(),
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Data(format!("{}: {}", path.display(), e)))?;
    let n = rows.first().map_or(0, Vec::len);
    if rows.len() != n + 1 || rows.iter().any(|r| r.len() != n) {
        return Err(Failure::Data(format!("{}: expected an (n+1) x n matrix", path.display())));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let matrix = graphdep::ndarray::Array2::from_shape_vec((n + 1, n), flat).expect("shape checked");
    Ok(NormalizedScores::from_log_weights(matrix)?)
}

fn run_oracle(cli: &Cli, args: &OracleArgs) -> CliResult {
    let single = single_root(cli, true);
    match &args.command {
        OracleCommand::Count { n } => {
            let mut count = 0u64;
            for_each_tree(*n, single, |_| count += 1)?;
            println!("{}", count);
        }
        OracleCommand::Check { scores } => {
            let scores = read_matrix(scores)?;
            if scores.n() > MAX_BRUTE_FORCE_N {
                return Err(Error::TooLarge {
                    n: scores.n(),
                    max: MAX_BRUTE_FORCE_N,
                }
                .into());
            }
            let mut trees = Vec::new();
            for_each_tree(scores.n(), single, |heads| trees.push(scores.tree_score(heads)))?;
            let max = trees.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let brute_log_z = max + trees.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
            let best = brute_force_best_tree(&scores, single)?;
            let decoded = mst_decode(&scores, single);
            let join = |h: &[usize]| h.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
            println!("trees\t{}", trees.len());
            println!("log_partition\t{}", log_partition(&scores, single)?);
            println!("log_partition_enumerated\t{}", brute_log_z);
            println!("mst_heads\t{}\t{}", join(&decoded), scores.tree_score(&decoded));
            println!("best_heads\t{}\t{}", join(&best), scores.tree_score(&best));
            let marginals = arc_marginals(&scores, single)?;
            for row in marginals.rows() {
                println!("marginals\t{}", row.iter().map(|v| format!("{:.6}", v)).collect::<Vec<_>>().join("\t"));
            }
        }
    }
    Ok(())
}

fn run_toy(cli: &Cli, args: &ToyArgs) -> CliResult {
    fs::create_dir_all(&args.out_dir)?;
    let seed = cli.seed.unwrap_or(1);
    let train = toy_treebank(args.sentences, seed);
    let dev = toy_treebank(args.sentences.div_ceil(5).max(1), seed.wrapping_add(1));
    fs::write(args.out_dir.join("train.conllu"), write_conllu(&train))?;
    fs::write(args.out_dir.join("dev.conllu"), write_conllu(&dev))?;
    fs::write(args.out_dir.join("vocab.txt"), toy_vocab().to_text())?;
    let config = "train = train.conllu\ndev = dev.conllu\nvocab = vocab.txt\nembeddings = pseudo:11:64\n\
                  output = model.ckpt\nlearning_rate = 1e-3\narc_dim = 64\nlabel_dim = 32\n\
                  batch_size = 10\neval_every = 50\nmax_updates = 2000\n";
    fs::write(args.out_dir.join("train.cfg"), config)?;
    println!("wrote toy treebank, vocabulary and train.cfg to {}", args.out_dir.display());
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Train(args) => run_train(cli, args),
        Command::Parse(args) => run_parse(cli, args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Analyze(args) => run_analyze(args),
        Command::Mix(args) => run_mix(cli, args),
        Command::Oracle(args) => run_oracle(cli, args),
        Command::Toy(args) => run_toy(cli, args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {}", e);
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(message)) => {
            eprintln!("error: {}", message);
            ExitCode::from(1)
        }
        Err(Failure::Data(message)) => {
            eprintln!("error: {}", message);
            ExitCode::from(2)
        }
    }
}
