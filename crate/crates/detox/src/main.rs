use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use detox::backends::Role;
use detox::config::Settings;
use detox::corpus::{read_corpus, Fields, InputFormat};
use detox::pipeline::{self, evaluate_rewrites, Explanation, Pipeline};
use detox::Result;

/// Counterfactual detoxification: minimal token substitutions that flip a
/// toxicity classifier, with corpus-level evaluation.
#[derive(Parser)]
#[command(name = "detox", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detoxify a corpus and write results.jsonl, report.json and report.txt.
    Run(Flags),
    /// Show targeting scores and counterfactuals for a single text.
    Explain {
        #[arg(long)]
        text: String,
        #[command(flatten)]
        flags: Flags,
    },
    /// Score rewrites produced by another system against their originals.
    Eval {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        rewritten: PathBuf,
        #[arg(long)]
        oracle_url: Option<String>,
        /// Toy oracle lexicon, used when no oracle URL is given.
        #[arg(long)]
        oracle_lexicon: Option<PathBuf>,
        #[arg(long)]
        text_field: Option<String>,
        #[arg(long)]
        id_field: Option<String>,
        /// Write report.json here as well as printing the table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct Flags {
    /// Flat key = value configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// jsonl or csv (default: from the file extension).
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    text_field: Option<String>,
    #[arg(long)]
    id_field: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// toy or http.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    oracle_backend: Option<String>,
    #[arg(long)]
    steering_url: Option<String>,
    #[arg(long)]
    oracle_url: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    steering_lexicon: Option<PathBuf>,
    #[arg(long)]
    oracle_lexicon: Option<PathBuf>,
    /// kshap, ig or attention.
    #[arg(long)]
    lfi: Option<String>,
    #[arg(long)]
    kshap_samples: Option<usize>,
    #[arg(long)]
    ig_steps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    max_edit_fraction: Option<f64>,
    #[arg(long)]
    max_expansions: Option<usize>,
    #[arg(long, overrides_with = "no_refine")]
    refine: bool,
    #[arg(long, overrides_with = "refine")]
    no_refine: bool,
    #[arg(long)]
    seed: Option<u64>,
}

impl Flags {
    fn settings(self) -> Result<Settings> {
        let base = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let refine = match (self.refine, self.no_refine) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        };
        Ok(base.overlay(Settings {
            input: self.input,
            format: self.format,
            text_field: self.text_field,
            id_field: self.id_field,
            out: self.out,
            workers: self.workers,
            backend: self.backend,
            oracle_backend: self.oracle_backend,
            steering_url: self.steering_url,
            oracle_url: self.oracle_url,
            timeout_ms: self.timeout_ms,
            max_retries: self.max_retries,
            steering_lexicon: self.steering_lexicon,
            oracle_lexicon: self.oracle_lexicon,
            lfi: self.lfi,
            kshap_samples: self.kshap_samples,
            ig_steps: self.ig_steps,
            alpha: self.alpha,
            beam_width: self.beam_width,
            top_k: self.top_k,
            max_edit_fraction: self.max_edit_fraction,
            max_expansions: self.max_expansions,
            refine,
            seed: self.seed,
            ..Settings::default()
        }))
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn run(flags: Flags) -> Result<u8> {
    let config = flags.settings()?.resolve()?;
    let output = pipeline::run(&config)?;
    emit(&output.report.table());
    emit(&format!("artifacts written to {}\n", output.out_dir.display()));
    Ok(output.report.exit_code() as u8)
}

fn explain(text: &str, flags: Flags) -> Result<u8> {
    let pipeline = Pipeline::from_settings(&flags.settings()?)?;
    let explanation = pipeline::explain(&pipeline, text)?;
    emit(&explanation.render());
    if let (Explanation::Detoxified { .. }, false) = (&explanation, pipeline.refines()) {
        emit("(refinement disabled)\n");
    }
    Ok(0)
}

fn eval(
    original: PathBuf,
    rewritten: PathBuf,
    oracle: Settings,
    out: Option<PathBuf>,
) -> Result<u8> {
    let fields = Fields {
        text: oracle.text_field.as_deref().unwrap_or("text"),
        id: oracle.id_field.as_deref().unwrap_or("id"),
    };
    let originals = read_corpus(&original, InputFormat::from_path(&original), &fields)?;
    let rewrites = read_corpus(&rewritten, InputFormat::from_path(&rewritten), &fields)?;
    let suite = oracle.oracle_backend()?.build(Role::Oracle)?;
    let report = evaluate_rewrites(suite.as_ref(), &originals, &rewrites)?;
    emit(&report.table("external"));
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| detox::DetoxError::io(&dir, e))?;
        let path = dir.join("report.json");
        let json = serde_json::to_vec_pretty(&report)?;
        std::fs::write(&path, json).map_err(|e| detox::DetoxError::io(&path, e))?;
    }
    Ok(u8::from(report.n_failed > 0))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(flags) => run(flags),
        Command::Explain { text, flags } => explain(&text, flags),
        Command::Eval {
            original,
            rewritten,
            oracle_url,
            oracle_lexicon,
            text_field,
            id_field,
            out,
        } => eval(
            original,
            rewritten,
            Settings {
                oracle_url,
                oracle_lexicon,
                text_field,
                id_field,
                ..Settings::default()
            },
            out,
        ),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
