//! Subcommand implementations. Each writes its report lines to `out`.

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use durel_core::agreement::{AgreementReport, Significance, MEAN_PAIRWISE};
use durel_core::corpus::{extract_uses_with, import_vertical_with};
use durel_core::judgments::{assemble_matrix, ingest_filled_task, read_judgments_csv, write_judgments_csv};
use durel_core::measures::{all_measures, format_measure, histogram, rank_targets, write_measures_csv, MeasureName};
use durel_core::sampling::{blinding_violations, build_study_pairs_with, build_task};
use durel_core::{AnnotationTask, Corpus, GroupId, Judgment, StudyRng, TargetSpec, TaskKey};
use durel_service::store::RosterEntry;
use durel_service::{router, StudyPayload, StudyStore};

use crate::config::StudyConfig;
use crate::error::{at, CliError};
use crate::plot;

pub const TASK_FILE: &str = "task.csv";
pub const KEY_FILE: &str = "key.csv";
pub const JUDGMENTS_FILE: &str = "judgments.csv";
pub const MEASURES_FILE: &str = "measures.csv";
pub const AGREEMENT_FILE: &str = "agreement.csv";
pub const HISTOGRAMS_FILE: &str = "histograms.csv";
pub const FIGURES_DIR: &str = "figures";

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<File, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    create(path)?.write_all(bytes).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_corpus(cfg: &StudyConfig) -> Result<Corpus, CliError> {
    let path = cfg.corpus()?;
    let corpus = at(path, import_vertical_with(BufReader::new(open(path)?), &cfg.import))?;
    Ok(match cfg.orthography()? {
        Some(map) => corpus.normalized(&map),
        None => corpus,
    })
}

pub fn read_key(path: &Path) -> Result<TaskKey, CliError> {
    at(path, TaskKey::read_csv(open(path)?))
}

fn read_judgments(paths: &[PathBuf]) -> Result<Vec<Judgment>, CliError> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(at(p, read_judgments_csv(open(p)?))?);
    }
    Ok(all)
}

pub fn import_check(cfg: &StudyConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let sentences: usize = corpus.documents.iter().map(|d| d.sentences.len()).sum();
    let years = corpus.documents.iter().map(|d| d.year);
    let (lo, hi) = (years.clone().min(), years.max());
    writeln!(
        out,
        "documents {}, sentences {}, tokens {}",
        corpus.documents.len(),
        sentences,
        corpus.token_count()
    )?;
    if let (Some(lo), Some(hi)) = (lo, hi) {
        writeln!(out, "years {lo}-{hi}")?;
    }
    if cfg.earlier.is_some() || cfg.later.is_some() {
        let (e, l) = cfg.periods()?;
        for t in &cfg.targets {
            let ne = extract_uses_with(&corpus, t, &e, cfg.lemma_match).len();
            let nl = extract_uses_with(&corpus, t, &l, cfg.lemma_match).len();
            writeln!(out, "{t}: earlier {ne} uses, later {nl} uses")?;
        }
    }
    Ok(())
}

/// Pair-id prefix of a target; the POS joins in when a lemma is listed twice.
fn id_prefix(t: &TargetSpec, all: &[TargetSpec]) -> String {
    if all.iter().filter(|o| o.lemma == t.lemma).count() > 1 {
        format!("{}_{}", t.lemma, t.pos_str())
    } else {
        t.lemma.clone()
    }
}

pub fn sample(cfg: &StudyConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let (early, late) = cfg.periods()?;
    let targets = cfg.require_targets()?;
    let corpus = load_corpus(cfg)?;

    let pools: Vec<_> = targets
        .iter()
        .map(|t| {
            let e = extract_uses_with(&corpus, t, &early, cfg.lemma_match);
            let l = extract_uses_with(&corpus, t, &late, cfg.lemma_match);
            (t, e, l)
        })
        .collect();
    for (t, e, l) in &pools {
        writeln!(out, "{t}: earlier {} uses, later {} uses", e.len(), l.len())?;
    }

    let mut rng = StudyRng::from_seed(cfg.sampling.seed);
    let mut pairs = Vec::new();
    for (t, e, l) in &pools {
        pairs.extend(build_study_pairs_with(t, e, l, &cfg.sampling, &id_prefix(t, targets), &mut rng)?);
    }
    let (task, key) = build_task(pairs, &mut rng)?;

    let task_csv = task.to_csv_string();
    let leaked = blinding_violations(&task_csv, &key, &[early, late]);
    if !leaked.is_empty() {
        writeln!(out, "warning: task text contains key metadata: {}", leaked.join(", "))?;
    }
    let task_path = cfg.out_dir.join(TASK_FILE);
    let key_path = cfg.out_dir.join(KEY_FILE);
    write_file(&task_path, task_csv.as_bytes())?;
    write_file(&key_path, key.to_csv_string().as_bytes())?;
    writeln!(
        out,
        "wrote {} rows to {} and {}",
        task.rows.len(),
        task_path.display(),
        key_path.display()
    )?;
    Ok(())
}

pub struct ServeArgs {
    pub data_dir: PathBuf,
    pub addr: SocketAddr,
    pub admin_token: Option<String>,
    /// Study created (or confirmed) from `out_dir`'s task and key at startup.
    pub study: Option<(String, Vec<String>)>,
}

pub fn serve(cfg: &StudyConfig, args: ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let store = Arc::new(StudyStore::open(&args.data_dir)?);
    if let Some((id, roster)) = args.study {
        let task_path = cfg.out_dir.join(TASK_FILE);
        let (task, _) = at(&task_path, AnnotationTask::read_csv(open(&task_path)?))?;
        let key = read_key(&cfg.out_dir.join(KEY_FILE))?;
        let created = store.create_study(
            &id,
            StudyPayload {
                task,
                key,
                roster: roster.into_iter().map(RosterEntry::Name).collect(),
                policy: cfg.policy,
            },
        )?;
        writeln!(
            out,
            "study {} {} with {} pairs",
            created.study_id,
            if created.created { "created" } else { "already present" },
            created.pairs
        )?;
        for (annotator, token) in &created.tokens {
            writeln!(out, "token {annotator} {token}")?;
        }
    }

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        writeln!(out, "listening on http://{}", listener.local_addr()?)?;
        out.flush()?;
        durel_service::serve(listener, router(store, args.admin_token)).await?;
        Ok::<(), CliError>(())
    })
}

pub struct IngestArgs {
    pub key: PathBuf,
    /// (annotator, filled task file)
    pub filled: Vec<(String, PathBuf)>,
    pub judgments: Vec<PathBuf>,
}

pub fn ingest(cfg: &StudyConfig, args: IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let key = read_key(&args.key)?;
    let mut all = Vec::new();
    for (annotator, path) in &args.filled {
        let outcome = at(path, ingest_filled_task(open(path)?, annotator, &key))?;
        writeln!(
            out,
            "{annotator}: {} judgments, {} rows left empty",
            outcome.judgments.len(),
            outcome.missing.len()
        )?;
        all.extend(outcome.judgments);
    }
    let exported = read_judgments(&args.judgments)?;
    if !args.judgments.is_empty() {
        writeln!(out, "{} judgments from exports", exported.len())?;
    }
    all.extend(exported);
    if all.is_empty() {
        return Err(CliError::Invalid("no judgments found in the inputs".into()));
    }
    let matrix = assemble_matrix(&all, &key, cfg.policy)?;

    let path = cfg.out_dir.join(JUDGMENTS_FILE);
    at(&path, write_judgments_csv(create(&path)?, &all))?;
    writeln!(
        out,
        "wrote {} judgments ({} cells, {} annotators) to {}",
        all.len(),
        matrix.filled_cells(),
        matrix.annotators().len(),
        path.display()
    )?;
    Ok(())
}

pub struct AnalyzeArgs {
    pub key: PathBuf,
    pub judgments: Vec<PathBuf>,
}

pub fn analyze(cfg: &StudyConfig, args: AnalyzeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let key = read_key(&args.key)?;
    let judgments = read_judgments(&args.judgments)?;
    if judgments.is_empty() {
        return Err(CliError::Invalid("no judgments to analyze".into()));
    }
    let matrix = assemble_matrix(&judgments, &key, cfg.policy)?;

    let measures = rank_targets(&all_measures(&matrix, &key, cfg.threshold)?, MeasureName::DeltaLater);
    let path = cfg.out_dir.join(MEASURES_FILE);
    at(&path, write_measures_csv(create(&path)?, &measures))?;
    for m in &measures {
        writeln!(
            out,
            "{:<24} delta_later {:>10} {}",
            m.target.to_string(),
            format_measure(m.delta_later),
            m.class.map_or("undefined", |c| c.as_str())
        )?;
    }

    let path = cfg.out_dir.join(AGREEMENT_FILE);
    match AgreementReport::compute(&matrix, Significance::Auto) {
        Ok(report) => {
            report.write_csv(create(&path)?).map_err(|e| CliError::io(&path, e))?;
            match report.mean_pairwise {
                Some(m) => writeln!(out, "{MEAN_PAIRWISE} {m:.6}")?,
                None => writeln!(out, "{MEAN_PAIRWISE} undefined")?,
            }
        }
        Err(e) => {
            let _ = fs::remove_file(&path);
            writeln!(out, "agreement not computed: {e}")?;
        }
    }

    let mut targets = key.targets();
    targets.sort();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut rows = vec![plot::HISTOGRAMS_HEADER.map(str::to_owned).to_vec()];
    for t in &targets {
        for g in GroupId::ALL {
            let h = histogram(&matrix, &key, t, g);
            let mut row = vec![t.lemma.clone(), t.pos_str().to_owned(), g.as_str().to_owned()];
            row.extend(h.counts.iter().map(u64::to_string));
            row.push(h.total().to_string());
            rows.push(row);
        }
    }
    for r in &rows {
        w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&cfg.out_dir.join(HISTOGRAMS_FILE), &bytes)?;
    writeln!(out, "wrote reports to {}", cfg.out_dir.display())?;
    Ok(())
}

pub struct PlotArgs {
    pub measures: PathBuf,
    pub histograms: PathBuf,
}

pub fn plot(cfg: &StudyConfig, args: PlotArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = cfg.out_dir.join(FIGURES_DIR);
    let missing = |p: &Path| CliError::Invalid(format!("{} not found; run analyze first", p.display()));
    for p in [&args.measures, &args.histograms] {
        if !p.exists() {
            return Err(missing(p));
        }
    }

    let rank_csv = dir.join("delta_later.csv");
    write_file(&rank_csv, at(&args.measures, plot::rank_figure_csv(&read_text(&args.measures)?))?.as_bytes())?;
    let svg = at(&rank_csv, plot::render_rank_svg(&read_text(&rank_csv)?))?;
    write_file(&dir.join("delta_later.svg"), svg.as_bytes())?;

    let figures = at(&args.histograms, plot::histogram_figure_csvs(&read_text(&args.histograms)?))?;
    for fig in &figures {
        let csv_path = dir.join(format!("{}.csv", fig.stem));
        write_file(&csv_path, fig.csv.as_bytes())?;
        let svg = at(&csv_path, plot::render_histogram_svg(&fig.label, &read_text(&csv_path)?))?;
        write_file(&dir.join(format!("{}.svg", fig.stem)), svg.as_bytes())?;
    }
    writeln!(
        out,
        "wrote ranked chart and {} histogram figures to {}",
        figures.len(),
        dir.display()
    )?;
    Ok(())
}
