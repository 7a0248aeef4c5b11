//! Command-line surface: train, evaluate, predict, generate synthetic data
//! and run diagnostics.
//!
//! Exit codes: 0 success, 2 I/O or input validation, 3 schema mismatch,
//! 4 diagnostic failure. Results go to stdout, progress logs to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jointex::corpus::{load_corpus, save_corpus, LoadedCorpus, Sentence};
use jointex::error::Error;
use jointex::eval::{error_report, score};
use jointex::model::SentencePrediction;
use jointex::synthetic::{generate_synthetic_corpus, SyntheticSpec};
use jointex::train::{
    build_model, load_checkpoint, save_checkpoint, train, EpochLog, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "jointex",
    version,
    about = "Joint extraction of entity mentions, event triggers and argument roles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a corpus and write the checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint against an annotated corpus.
    Eval(EvalArgs),
    /// Extract entities and events; prints one corpus record per sentence.
    Predict(PredictArgs),
    /// Generate a deterministic synthetic corpus.
    GenData(GenDataArgs),
    /// Run the built-in diagnostic suites.
    Diag(DiagArgs),
}

#[derive(Args)]
struct CommonModelArgs {
    /// TOML file with [model] and [train] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch count override.
    #[arg(long)]
    epochs: Option<usize>,
    /// Entity loss weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Trigger loss weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Role loss weight.
    #[arg(long)]
    gamma: Option<f64>,
    /// Local context window radius.
    #[arg(long)]
    u: Option<usize>,
    /// Drop all externally derived features: token inputs reduce to the
    /// word embedding and the pairwise discrete block disappears.
    #[arg(long)]
    ablate_external_features: bool,
    /// Feed the pairwise label slots exactly as printed instead of the
    /// default coherent reading.
    #[arg(long)]
    eq1_literal_indexing: bool,
}

impl CommonModelArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut run = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            run.train.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            run.train.epochs = epochs;
        }
        if let Some(alpha) = self.alpha {
            run.train.alpha = alpha;
        }
        if let Some(beta) = self.beta {
            run.train.beta = beta;
        }
        if let Some(gamma) = self.gamma {
            run.train.gamma = gamma;
        }
        if let Some(u) = self.u {
            run.model.u = u;
        }
        if self.ablate_external_features {
            run.model.use_external_features = false;
        }
        if self.eq1_literal_indexing {
            run.model.eq1_literal_indexing = true;
        }
        run.train.validate()?;
        Ok(run)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (line-delimited JSON).
    #[arg(long)]
    corpus: PathBuf,
    /// Development corpus for model selection.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Pre-trained embedding file (plain text, word then floats per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    common: CommonModelArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Also print the MISSED/INCORRECT trigger breakdown and role confusions.
    #[arg(long)]
    errors: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus of sentences; gold annotations are ignored if present.
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of sentences.
    #[arg(long, default_value_t = 100)]
    sentences: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Fraction of triggers drawn from the two-type pool.
    #[arg(long, default_value_t = 0.0)]
    ambiguity: f64,
    /// Skip POS/chunk/dependency annotations.
    #[arg(long)]
    no_linguistic: bool,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagArgs {
    /// Which suite to run.
    #[arg(value_parser = ["gradcheck", "viterbi-oracle"])]
    mode: String,
    /// Negative control: corrupt the gradient evaluation and expect the
    /// checker to notice.
    #[arg(long)]
    corrupt: bool,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::SchemaMismatch(_) => 3,
        Error::Diagnostic(_) => 4,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::Annotation(_)
        | Error::Config(_)
        | Error::Checkpoint(_) => 2,
        Error::ShapeMismatch { .. } | Error::NotScalar { .. } => 1,
    }
}

fn load_corpus_logged(path: &Path) -> Result<Vec<Sentence>, Error> {
    let LoadedCorpus { sentences, warnings } = load_corpus(path)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(sentences)
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let run = args.common.resolve()?;
    let corpus = load_corpus_logged(&args.corpus)?;
    if corpus.is_empty() {
        return Err(Error::Config(format!("{}: corpus is empty", args.corpus.display())));
    }
    let dev = args.dev.as_ref().map(|p| load_corpus_logged(p)).transpose()?;
    let mut model = build_model(&corpus, &run, args.embeddings.as_deref())?;
    eprintln!(
        "training on {} sentences ({} parameters, seed {})",
        corpus.len(),
        model.params.num_coords(),
        run.train.seed
    );
    let report = train(&mut model, &corpus, dev.as_deref(), &run.train, |log: &EpochLog| {
        match &log.dev {
            Some(dev) => println!(
                "epoch {:>4}  loss {:>10.6}  dev entity F1 {:.3}  trigger F1 {:.3}  role F1 {:.3}",
                log.epoch, log.mean_loss, dev.entity_f1, dev.trigger_f1, dev.role_f1
            ),
            None => println!("epoch {:>4}  loss {:>10.6}", log.epoch, log.mean_loss),
        }
        true
    })?;
    if let Some(best) = report.best_epoch {
        eprintln!("keeping parameters from dev-best epoch {best}");
    }
    save_checkpoint(&args.out, &model, &run.train)?;
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let corpus = load_corpus_logged(&args.corpus)?;
    if corpus.is_empty() {
        return Err(Error::Config(format!("{}: corpus is empty", args.corpus.display())));
    }
    for s in &corpus {
        s.check_schema(&model.schema)?;
    }
    let predictions: Vec<SentencePrediction> =
        corpus.iter().map(|s| model.predict(s)).collect::<Result<_, _>>()?;
    let report = score(&predictions, &corpus, &model.schema)?;
    print!("{report}");
    if args.errors {
        println!();
        print!("{}", error_report(&predictions, &corpus, &model.schema)?);
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<(), Error> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let corpus = load_corpus_logged(&args.corpus)?;
    for sentence in &corpus {
        let prediction = model.predict(sentence)?;
        let record = prediction.to_sentence(sentence, &model.schema);
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Checkpoint(format!("serializing prediction: {e}")))?;
        println!("{line}");
    }
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<(), Error> {
    let spec = SyntheticSpec::new(args.sentences, args.seed)
        .with_ambiguity(args.ambiguity)
        .with_linguistic(!args.no_linguistic);
    let corpus = generate_synthetic_corpus(&spec);
    match &args.out {
        Some(path) => {
            save_corpus(path, &corpus)?;
            eprintln!("wrote {} sentences to {}", corpus.len(), path.display());
        }
        None => {
            for s in &corpus {
                println!("{}", serde_json::to_string(s).expect("sentence serializes"));
            }
        }
    }
    Ok(())
}

fn cmd_diag(args: &DiagArgs) -> Result<(), Error> {
    match args.mode.as_str() {
        "gradcheck" => {
            let outcome = jointex::diag::gradcheck(args.corrupt)?;
            println!(
                "gradcheck: max relative error {:.3e} over {} coordinates (tolerance {:.0e})",
                outcome.report.max_rel_error, outcome.report.coords_checked, outcome.tolerance
            );
            if let Some((name, coord)) = &outcome.report.worst_param {
                println!("worst parameter: {name}[{coord}]");
            }
            if outcome.passed {
                println!("gradcheck: PASS");
                Ok(())
            } else {
                let offender = outcome
                    .report
                    .worst_param
                    .map(|(name, coord)| format!("{name}[{coord}]"))
                    .unwrap_or_default();
                Err(Error::Diagnostic(format!(
                    "gradient check failed at {offender}: relative error {:.3e}",
                    outcome.report.max_rel_error
                )))
            }
        }
        "viterbi-oracle" => {
            let outcome = jointex::diag::viterbi_oracle(100, 10_000, args.seed);
            println!(
                "viterbi-oracle: {} exact trials, {} validity trials",
                outcome.exact_trials, outcome.validity_trials
            );
            if outcome.passed() {
                println!("viterbi-oracle: PASS");
                Ok(())
            } else {
                for f in &outcome.failures {
                    eprintln!("{f}");
                }
                Err(Error::Diagnostic(format!(
                    "viterbi oracle failed on {} instances",
                    outcome.failures.len()
                )))
            }
        }
        other => Err(Error::Config(format!("unknown diagnostic mode {other:?}"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::GenData(args) => cmd_gen_data(args),
        Command::Diag(args) => cmd_diag(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
