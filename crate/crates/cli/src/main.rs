use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use durel_cli::commands::{self, AnalyzeArgs, IngestArgs, PlotArgs, ServeArgs};
use durel_cli::config::parse_threshold;
use durel_cli::{CliError, StudyConfig};
use durel_core::DuplicatePolicy;

#[derive(Parser)]
#[command(name = "durel", version, about = "Diachronic usage-relatedness studies: sample, annotate, analyze")]
struct Cli {
    /// Study config file (flat key = value)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sampling seed, overrides `seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Classification threshold, overrides `threshold`
    #[arg(long, global = true, value_parser = parse_threshold)]
    threshold: Option<f64>,
    /// Duplicate judgment policy: reject or latest-wins
    #[arg(long, global = true, value_parser = parse_policy)]
    policy: Option<DuplicatePolicy>,
    /// Output directory, overrides `out_dir`
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn parse_policy(s: &str) -> Result<DuplicatePolicy, String> {
    s.parse().map_err(|e: durel_core::judgments::JudgmentError| e.to_string())
}

fn parse_filled(s: &str) -> Result<(String, PathBuf), String> {
    let (a, p) = s
        .split_once('=')
        .ok_or_else(|| format!("expected ANNOTATOR=PATH, got {s:?}"))?;
    if a.is_empty() {
        return Err("annotator name is empty".into());
    }
    Ok((a.to_owned(), PathBuf::from(p)))
}

#[derive(Subcommand)]
enum Command {
    /// Parse the corpus and report sizes and per-target use counts
    ImportCheck {
        /// Corpus file, overrides `corpus`
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Draw use pairs and write task.csv and key.csv
    Sample,
    /// Run the annotation service
    Serve {
        /// Study storage, default <out_dir>/studies
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Require this bearer token on study-level routes
        #[arg(long, env = "DUREL_ADMIN_TOKEN")]
        admin_token: Option<String>,
        /// Create this study from <out_dir>/task.csv and key.csv at startup
        #[arg(long, requires = "roster")]
        study: Option<String>,
        /// Comma-separated annotator names for --study
        #[arg(long, value_delimiter = ',')]
        roster: Vec<String>,
    },
    /// Validate judgments and merge them into <out_dir>/judgments.csv
    Ingest {
        /// Key file, default <out_dir>/key.csv
        #[arg(long)]
        key: Option<PathBuf>,
        /// Filled task file of one annotator
        #[arg(long, value_name = "ANNOTATOR=PATH", value_parser = parse_filled)]
        filled: Vec<(String, PathBuf)>,
        /// Judgment CSV, e.g. a service export
        #[arg(long)]
        judgments: Vec<PathBuf>,
    },
    /// Compute change measures, agreement and histograms
    Analyze {
        /// Key file, default <out_dir>/key.csv
        #[arg(long)]
        key: Option<PathBuf>,
        /// Judgment CSVs, default <out_dir>/judgments.csv
        #[arg(long)]
        judgments: Vec<PathBuf>,
    },
    /// Write figure CSVs and SVGs under <out_dir>/figures
    Plot {
        /// default <out_dir>/measures.csv
        #[arg(long)]
        measures: Option<PathBuf>,
        /// default <out_dir>/histograms.csv
        #[arg(long)]
        histograms: Option<PathBuf>,
    },
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => StudyConfig::load(p)?,
        None => StudyConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.sampling.seed = s;
    }
    if let Some(t) = cli.threshold {
        cfg.threshold = t;
    }
    if let Some(p) = cli.policy {
        cfg.policy = p;
    }
    if let Some(d) = cli.out_dir {
        cfg.out_dir = d;
    }
    let in_out = |name: &str| cfg.out_dir.join(name);

    match cli.command {
        Command::ImportCheck { corpus } => {
            if corpus.is_some() {
                cfg.corpus = corpus;
            }
            commands::import_check(&cfg, out)
        }
        Command::Sample => commands::sample(&cfg, out),
        Command::Serve {
            data_dir,
            addr,
            admin_token,
            study,
            roster,
        } => {
            let args = ServeArgs {
                data_dir: data_dir.unwrap_or_else(|| in_out("studies")),
                addr,
                admin_token,
                study: study.map(|s| (s, roster)),
            };
            commands::serve(&cfg, args, out)
        }
        Command::Ingest { key, filled, judgments } => {
            let args = IngestArgs {
                key: key.unwrap_or_else(|| in_out(commands::KEY_FILE)),
                filled,
                judgments,
            };
            commands::ingest(&cfg, args, out)
        }
        Command::Analyze { key, judgments } => {
            let args = AnalyzeArgs {
                key: key.unwrap_or_else(|| in_out(commands::KEY_FILE)),
                judgments: if judgments.is_empty() {
                    vec![in_out(commands::JUDGMENTS_FILE)]
                } else {
                    judgments
                },
            };
            commands::analyze(&cfg, args, out)
        }
        Command::Plot { measures, histograms } => {
            let args = PlotArgs {
                measures: measures.unwrap_or_else(|| in_out(commands::MEASURES_FILE)),
                histograms: histograms.unwrap_or_else(|| in_out(commands::HISTOGRAMS_FILE)),
            };
            commands::plot(&cfg, args, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
