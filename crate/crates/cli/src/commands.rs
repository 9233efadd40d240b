//! Subcommand implementations. Every stage reads its predecessors' files,
//! writes its own artifacts, and prints a key=value report to standard error
//! (duplicated to `--report` when given), so runs are auditable after the
//! fact and reruns with the same inputs and seed are byte-identical.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;

use botsense_core::dataset::{
    assemble_row, read_table, write_table, FeatureRow, FeatureSet, LabeledDataset,
};
use botsense_core::labeling::{
    label_sessions, ManualMap, RobotLists, SessionLabel, UAPatternDB, Verdict,
};
use botsense_core::log_ingest::{
    classify_resource, ingest, open_log_file, parse_line, render_line, LogDialect, LogEntry,
    ResourceClass, ResourceRuleSet,
};
use botsense_core::model::{
    anova_f_scores, chi2_scores, default_fractions, evaluate, learning_curve, load_gbdt,
    load_logreg, render_scores, save_gbdt, save_logreg, split_rows, train_gbdt_traced,
    train_logreg, GbdtParams, LogRegModel, LogRegParams, ModelError,
};
use botsense_core::semantic_features::extract_semantic;
use botsense_core::sessionize::{
    read_session_file, session_stats, sessionize_indexed, write_session_file, Session,
    DEFAULT_MIN_REQUESTS, DEFAULT_TIMEOUT_SECS,
};
use botsense_core::simple_features::{extract_simple_cfg, SimpleFeatureConfig};
use botsense_core::synth::{self, SynthConfig};
use botsense_core::topic_model::{
    build_corpus, infer_doc_topics, load_model, read_corpus_lines, read_topic_table, save_model,
    tokenize, train_lda_traced, truncate_top_m, LdaConfig, PreprocessOptions, SparseTopicVector,
    DEFAULT_INFER_SWEEPS, DEFAULT_TOP_M,
};
use botsense_core::GBDTModel;

use crate::config::{pick, pick_opt, FileConfig};

// ---------------------------------------------------------------------------
// Shared plumbing

/// Header line of a normalized entries file; the suffix is the dialect name.
const ENTRIES_HEADER_PREFIX: &str = "# botsense entries v1 dialect=";

fn out_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating directory {}", parent.display()))?;
        }
    }
    let file =
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn in_file(path: &Path, what: &str) -> Result<BufReader<File>> {
    let file =
        File::open(path).with_context(|| format!("cannot open {what} {}", path.display()))?;
    Ok(BufReader::new(file))
}

/// Print the report to stderr and, when requested, to a file.
fn emit_report(text: &str, path: Option<&Path>) -> Result<()> {
    eprint!("{text}");
    if let Some(path) = path {
        fs::write(path, text)
            .with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(())
}

fn parse_dialect_name(name: &str) -> Result<LogDialect> {
    LogDialect::parse_name(name)
        .ok_or_else(|| anyhow!("unknown dialect {name:?} (expected `combined` or `combined-app`)"))
}

fn load_rules(flag: Option<&Path>, cfg: Option<&Path>) -> Result<ResourceRuleSet> {
    match flag.or(cfg) {
        Some(path) => ResourceRuleSet::load(path)
            .with_context(|| format!("resource rules {}", path.display())),
        None => Ok(ResourceRuleSet::builtin()),
    }
}

/// Write the normalized entries file: a dialect header, then one rendered
/// line per kept entry. Always uses the app-extended dialect so the country,
/// username, and web-service columns survive the round trip.
fn write_entries(path: &Path, entries: &[(LogEntry, ResourceClass)]) -> Result<()> {
    let mut w = out_file(path)?;
    writeln!(w, "{ENTRIES_HEADER_PREFIX}combined-app")?;
    for (entry, _) in entries {
        writeln!(w, "{}", render_line(entry, LogDialect::CombinedWithAppFields))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a normalized entries file back, classifying each line.
///
/// The dialect comes from the file header; `--dialect` overrides for files
/// that lack one (e.g. a clean raw log used without `ingest`). Unlike
/// `ingest`, any unparsable line is an error: normalized input is expected to
/// be clean, and silently skipping lines would shift the session ordinals.
fn read_entries(
    path: &Path,
    rules: &ResourceRuleSet,
    dialect_flag: Option<LogDialect>,
) -> Result<Vec<(LogEntry, ResourceClass)>> {
    let reader =
        open_log_file(path).with_context(|| format!("cannot open entries file {}", path.display()))?;
    let mut entries = Vec::new();
    let mut dialect = dialect_flag;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.with_context(|| format!("reading entries file {}", path.display()))?;
        let lineno = idx + 1;
        if let Some(name) = line.strip_prefix(ENTRIES_HEADER_PREFIX) {
            let header_dialect = parse_dialect_name(name.trim())
                .with_context(|| format!("entries file {} header", path.display()))?;
            if let Some(flag) = dialect_flag {
                if flag != header_dialect {
                    bail!(
                        "entries file {} declares dialect {} but --dialect says {}",
                        path.display(),
                        header_dialect.name(),
                        flag.name()
                    );
                }
            }
            dialect = Some(header_dialect);
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let dialect = dialect.ok_or_else(|| {
            anyhow!(
                "entries file {} has no dialect header; run `ingest` first or pass --dialect",
                path.display()
            )
        })?;
        let entry = parse_line(&line, dialect)
            .map_err(|e| anyhow!("entries file {} line {lineno}: {e}", path.display()))?;
        let class = classify_resource(&entry.path, rules);
        entries.push((entry, class));
    }
    Ok(entries)
}

fn load_sessions(path: &Path, entries: &[(LogEntry, ResourceClass)]) -> Result<Vec<Session>> {
    let reader = in_file(path, "sessions file")?;
    read_session_file(reader, entries)
        .with_context(|| format!("sessions file {}", path.display()))
}

fn load_topics(path: &Path) -> Result<HashMap<String, SparseTopicVector>> {
    let reader = in_file(path, "topic table")?;
    read_topic_table(reader).with_context(|| format!("topic table {}", path.display()))
}

fn read_feature_rows(path: &Path, what: &str) -> Result<Vec<FeatureRow>> {
    let reader = in_file(path, what)?;
    read_table(reader).with_context(|| format!("{what} {}", path.display()))
}

fn feature_set_arg(flag: Option<&str>, cfg: Option<&str>) -> Result<FeatureSet> {
    let name = flag.or(cfg).unwrap_or("both");
    FeatureSet::parse_name(name)
        .ok_or_else(|| anyhow!("unknown feature set {name:?} (expected simple, semantic, or both)"))
}

fn gbdt_params(
    n_trees: Option<usize>,
    max_depth: Option<usize>,
    learning_rate: Option<f64>,
    min_leaf: Option<usize>,
    seed: Option<u64>,
    cfg: &FileConfig,
) -> GbdtParams {
    let d = GbdtParams::default();
    GbdtParams {
        n_trees: pick(n_trees, cfg.train.n_trees, d.n_trees),
        max_depth: pick(max_depth, cfg.train.max_depth, d.max_depth),
        learning_rate: pick(learning_rate, cfg.train.learning_rate, d.learning_rate),
        min_leaf: pick(min_leaf, cfg.train.min_leaf, d.min_leaf),
        seed: pick(seed, cfg.seed, d.seed),
    }
}

fn preprocess_options(
    min_token_len: Option<usize>,
    min_doc_freq: Option<usize>,
    stopwords: Option<&Path>,
    cfg: &FileConfig,
) -> Result<PreprocessOptions> {
    let mut opts = PreprocessOptions::default();
    if let Some(v) = pick_opt(min_token_len, cfg.lda.min_token_len) {
        opts.min_token_len = v;
    }
    if let Some(v) = pick_opt(min_doc_freq, cfg.lda.min_doc_freq) {
        opts.min_doc_freq = v;
    }
    if let Some(path) = stopwords.map(Path::to_path_buf).or_else(|| cfg.lda.stopwords.clone()) {
        let text = fs::read_to_string(&path)
            .with_context(|| format!("cannot open stop-word file {}", path.display()))?;
        opts.stopwords = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
    }
    Ok(opts)
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Args, Debug, Default)]
pub struct IngestArgs {
    /// Raw access log; gzip input is detected by its magic bytes.
    #[arg(long)]
    pub log: PathBuf,
    /// Input column layout: `combined` or `combined-app` (default).
    #[arg(long)]
    pub dialect: Option<String>,
    /// Resource classification rules (TSV); built-in rules when absent.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Normalized entries file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the key=value report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// TOML config supplying defaults for flags not given.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run_ingest(args: IngestArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let dialect_name = pick(args.dialect, cfg.ingest.dialect, "combined-app".to_string());
    let dialect = parse_dialect_name(&dialect_name)?;
    let rules = load_rules(args.rules.as_deref(), cfg.ingest.rules.as_deref())?;

    let reader = open_log_file(&args.log)
        .with_context(|| format!("cannot open log file {}", args.log.display()))?;
    let (entries, report) = ingest(reader, dialect, &rules).context("parsing log")?;
    write_entries(&args.out, &entries)?;
    emit_report(&report.render(), args.report.as_deref())
}

// ---------------------------------------------------------------------------
// sessionize

#[derive(Args, Debug, Default)]
pub struct SessionizeArgs {
    /// Normalized entries file from `ingest`.
    #[arg(long)]
    pub entries: PathBuf,
    /// Sessions file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Inactivity gap in seconds that starts a new session; a gap strictly
    /// greater than this splits.
    #[arg(long)]
    pub timeout_secs: Option<i64>,
    /// Sessions with fewer requests than this are dropped.
    #[arg(long)]
    pub min_requests: Option<usize>,
    /// Dialect override for entries files without a header.
    #[arg(long)]
    pub dialect: Option<String>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run_sessionize(args: SessionizeArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let timeout = pick(args.timeout_secs, cfg.sessionize.timeout_secs, DEFAULT_TIMEOUT_SECS);
    let min_requests = pick(args.min_requests, cfg.sessionize.min_requests, DEFAULT_MIN_REQUESTS);
    let rules = load_rules(args.rules.as_deref(), cfg.ingest.rules.as_deref())?;
    let dialect = args.dialect.as_deref().map(parse_dialect_name).transpose()?;

    let entries = read_entries(&args.entries, &rules, dialect)?;
    let indexed = sessionize_indexed(&entries, timeout, min_requests);
    let mut w = out_file(&args.out)?;
    write_session_file(&mut w, &indexed, timeout, min_requests)?;
    w.flush()?;

    let sessions: Vec<Session> = indexed.into_iter().map(|(s, _)| s).collect();
    let report = match session_stats(&sessions) {
        Ok(stats) => format!(
            "sessions={}\nmean_requests={:.3}\nmedian_requests={:.3}\n\
             mean_duration_secs={:.3}\nmedian_duration_secs={:.3}\n\
             mean_gap_secs={:.3}\nunique_articles={}\n",
            stats.session_count,
            stats.mean_requests,
            stats.median_requests,
            stats.mean_duration_secs,
            stats.median_duration_secs,
            stats.mean_gap_secs,
            stats.unique_articles
        ),
        Err(_) => "sessions=0\n".to_string(),
    };
    emit_report(&report, args.report.as_deref())
}

// ---------------------------------------------------------------------------
// lda-train

#[derive(Args, Debug, Default)]
pub struct LdaTrainArgs {
    /// Corpus file, one `doc_id<TAB>text` line per document.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Topic model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of topics.
    #[arg(long)]
    pub k: Option<usize>,
    /// Dirichlet prior on document-topic mixtures; defaults to 50/k.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Dirichlet prior on topic-word distributions.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Gibbs sweeps over the corpus.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop tokens shorter than this many characters.
    #[arg(long)]
    pub min_token_len: Option<usize>,
    /// Drop terms appearing in fewer documents than this.
    #[arg(long)]
    pub min_doc_freq: Option<usize>,
    /// Stop-word file, one word per line; built-in English list when absent.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Write `sweep<TAB>log_likelihood` lines here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run_lda_train(args: LdaTrainArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let k = pick(args.k, cfg.lda.k, 50);
    let mut lda_cfg = LdaConfig::with_k(k);
    if let Some(alpha) = pick_opt(args.alpha, cfg.lda.alpha) {
        lda_cfg.alpha = alpha;
    }
    if let Some(beta) = pick_opt(args.beta, cfg.lda.beta) {
        lda_cfg.beta = beta;
    }
    if let Some(iterations) = pick_opt(args.iterations, cfg.lda.iterations) {
        lda_cfg.iterations = iterations;
    }
    lda_cfg.seed = pick(args.seed, cfg.seed, 0);
    let opts = preprocess_options(
        args.min_token_len,
        args.min_doc_freq,
        args.stopwords.as_deref(),
        &cfg,
    )?;

    let raw = read_corpus_lines(in_file(&args.corpus, "corpus file")?)
        .with_context(|| format!("corpus file {}", args.corpus.display()))?;
    let (corpus, prep) = build_corpus(&raw, &opts)
        .with_context(|| format!("corpus file {}", args.corpus.display()))?;
    if corpus.documents.is_empty() {
        bail!("corpus is empty after preprocessing (started with {} documents)", prep.docs_in);
    }

    let (model, trace) = train_lda_traced(&corpus, &lda_cfg).context("training topic model")?;
    let mut w = out_file(&args.out)?;
    save_model(&model, &mut w)?;
    w.flush()?;

    if let Some(trace_path) = &args.trace {
        let mut w = out_file(trace_path)?;
        writeln!(w, "# sweep\tlog_likelihood")?;
        for (sweep, ll) in trace.log_likelihood.iter().enumerate() {
            writeln!(w, "{}\t{ll}", sweep + 1)?;
        }
        w.flush()?;
    }

    let final_ll = trace.log_likelihood.last().copied().unwrap_or(f64::NAN);
    let report = format!(
        "docs_in={}\ndocs_kept={}\ndocs_dropped_empty={}\nvocabulary_size={}\ntotal_tokens={}\n\
         k={k}\nalpha={}\nbeta={}\niterations={}\nseed={}\nfinal_log_likelihood={final_ll:.3}\n",
        prep.docs_in,
        prep.docs_kept,
        prep.docs_dropped_empty,
        prep.vocabulary_size,
        prep.total_tokens,
        lda_cfg.alpha,
        lda_cfg.beta,
        lda_cfg.iterations,
        lda_cfg.seed
    );
    emit_report(&report, args.report.as_deref())
}

// ---------------------------------------------------------------------------
// topics-export

#[derive(Args, Debug, Default)]
pub struct TopicsExportArgs {
    /// Trained topic model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Topic table to write: `doc_id<TAB>topic:prob,...` per document.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only the top-m topics per document (no renormalization).
    #[arg(long)]
    pub top_m: Option<usize>,
    /// Corpus file of held-out documents to fold in with fixed topics.
    #[arg(long)]
    pub fold_in: Option<PathBuf>,
    /// Gibbs sweeps per folded-in document.
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Token filters for fold-in text; must match the training run.
    #[arg(long)]
    pub min_token_len: Option<usize>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run_topics_export(args: TopicsExportArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let top_m = pick(args.top_m, cfg.lda.top_m, DEFAULT_TOP_M);
    let model = load_model(in_file(&args.model, "topic model")?)
        .with_context(|| format!("topic model {}", args.model.display()))?;

    let mut rows: Vec<(String, SparseTopicVector)> = model
        .doc_ids
        .iter()
        .zip(&model.doc_topic)
        .map(|(id, theta)| (id.clone(), truncate_top_m(theta, top_m)))
        .collect();
    let trained = rows.len();

    let mut folded = 0usize;
    let mut skipped_empty = 0usize;
    let mut skipped_duplicate = 0usize;
    if let Some(fold_path) = &args.fold_in {
        let sweeps = pick(args.sweeps, cfg.lda.infer_sweeps, DEFAULT_INFER_SWEEPS);
        let seed = pick(args.seed, cfg.seed, 0);
        let opts = preprocess_options(args.min_token_len, None, args.stopwords.as_deref(), &cfg)?;
        let known: HashSet<&str> = model.doc_ids.iter().map(String::as_str).collect();
        let index: HashMap<&str, u32> = model
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, term)| (term.as_str(), i as u32))
            .collect();
        let raw = read_corpus_lines(in_file(fold_path, "fold-in corpus")?)
            .with_context(|| format!("fold-in corpus {}", fold_path.display()))?;
        for (i, (doc_id, text)) in raw.iter().enumerate() {
            if known.contains(doc_id.as_str()) {
                skipped_duplicate += 1;
                continue;
            }
            let tokens: Vec<u32> = tokenize(text, &opts)
                .iter()
                .filter_map(|t| index.get(t.as_str()).copied())
                .collect();
            if tokens.is_empty() {
                skipped_empty += 1;
                continue;
            }
            let theta = infer_doc_topics(&model, &tokens, sweeps, seed.wrapping_add(i as u64))
                .with_context(|| format!("folding in document {doc_id:?}"))?;
            rows.push((doc_id.clone(), truncate_top_m(&theta, top_m)));
            folded += 1;
        }
    }

    let mut w = out_file(&args.out)?;
    writeln!(w, "# botsense topic table v1")?;
    writeln!(w, "# k={} top_m={top_m}", model.k)?;
    botsense_core::topic_model::write_topic_table(
        &mut w,
        rows.iter().map(|(id, v)| (id.as_str(), v)),
    )?;
    w.flush()?;

    let report = format!(
        "documents={}\ntrained={trained}\nfolded_in={folded}\nskipped_empty={skipped_empty}\n\
         skipped_duplicate={skipped_duplicate}\nk={}\ntop_m={top_m}\n",
        rows.len(),
        model.k
    );
    emit_report(&report, args.report.as_deref())
}

// ---------------------------------------------------------------------------
// features

#[derive(Args, Debug, Default)]
pub struct FeaturesArgs {
    /// Normalized entries file from `ingest`.
    #[arg(long)]
    pub entries: PathBuf,
    /// Sessions file from `sessionize`.
    #[arg(long)]
    pub sessions: PathBuf,
    /// Topic table from `topics-export`.
    #[arg(long)]
    pub topics: PathBuf,
    /// Feature table to write (labels left unlabeled; see `label`).
    #[arg(long)]
    pub out: PathBuf,
    /// Ignore query strings when counting repeated requests.
    #[arg(long)]
    pub no_repeat_query: bool,
    #[arg(long)]
    pub dialect: Option<String>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run_features(args: FeaturesArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let rules = load_rules(args.rules.as_deref(), cfg.ingest.rules.as_deref())?;
    let dialect = args.dialect.as_deref().map(parse_dialect_name).transpose()?;
    let simple_cfg = SimpleFeatureConfig {
        repeat_includes_query: if args.no_repeat_query {
            false
        } else {
            cfg.features.repeat_includes_query.unwrap_or(true)
        },
    };

    let entries = read_entries(&args.entries, &rules, dialect)?;
    let sessions = load_sessions(&args.sessions, &entries)?;
    let topics = load_topics(&args.topics)?;

    let mut rows = Vec::with_capacity(sessions.len());
    let mut requests = 0usize;
    let mut mapped = 0usize;
    for session in &sessions {
        let vectors: Vec<SparseTopicVector> = session
            .requests
            .iter()
            .filter_map(|(_, class)| class.article_id().and_then(|id| topics.get(id)))
            .cloned()
            .collect();
        requests += session.n();
        mapped += vectors.len();
        let simple = extract_simple_cfg(session, simple_cfg);
        let semantic = extract_semantic(&vectors, session.n());
        rows.push(assemble_row(session, &simple, &semantic, None));
    }
    let mut w = out_file(&args.out)?;
    write_table(&mut w, &rows)?;
    w.flush()?;

    let coverage = if requests == 0 { 0.0 } else { mapped as f64 / requests as f64 };
    let report = format!(
        "sessions={}\nrequests={requests}\nrequests_with_topics={mapped}\nmean_coverage={coverage:.3}\n",
        rows.len()
    );
    emit_report(&report, args.report.as_deref())
}

// ---------------------------------------------------------------------------
// label

#[derive(Args, Debug, Default)]
pub struct LabelArgs {
    #[arg(long)]
    pub entries: PathBuf,
    #[arg(long)]
    pub sessions: PathBuf,
    /// Feature table whose label columns will be filled.
    #[arg(long)]
    pub features: PathBuf,
    /// Labeled feature table to write.
    #[arg(long)]
    pub out: PathBuf,
    /// User-agent class database (`regex<TAB>class`); built-in when absent.
    #[arg(long)]
    pub ua_classes: Option<PathBuf>,
    /// Robot list file (one regex per line); repeatable. Built-in counter
    /// and analytics lists when absent.
    #[arg(long = "robot-list")]
    pub robot_lists: Vec<PathBuf>,
    /// Patterns to drop from the robot lists; built-in exclusions when absent.
    #[arg(long)]
    pub robot_exclusions: Option<PathBuf>,
    /// Manual user-agent verdicts (`ua<TAB>robot|human`); built-in when absent.
    #[arg(long)]
    pub manual_labels: Option<PathBuf>,
    #[arg(long)]
    pub dialect: Option<String>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn load_labelers(args: &LabelArgs, cfg: &FileConfig) -> Result<(UAPatternDB, RobotLists, ManualMap)> {
    let ua_path = args.ua_classes.clone().or_else(|| cfg.label.ua_classes.clone());
    let db = match ua_path {
        Some(path) => {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("cannot open user-agent classes {}", path.display()))?;
            UAPatternDB::parse(&text, &path.display().to_string())?
        }
        None => UAPatternDB::builtin(),
    };

    let list_paths: Vec<PathBuf> = if args.robot_lists.is_empty() {
        cfg.label.robot_lists.clone().unwrap_or_default()
    } else {
        args.robot_lists.clone()
    };
    let exclusions_path = args
        .robot_exclusions
        .clone()
        .or_else(|| cfg.label.robot_exclusions.clone());
    let lists = if list_paths.is_empty() && exclusions_path.is_none() {
        RobotLists::builtin()
    } else {
        let exclusions = match &exclusions_path {
            Some(path) => fs::read_to_string(path)
                .with_context(|| format!("cannot open robot exclusions {}", path.display()))?,
            None => botsense_core::assets::ROBOT_EXCLUSIONS.to_string(),
        };
        let texts: Vec<(String, String)> = if list_paths.is_empty() {
            vec![
                ("counter".into(), botsense_core::assets::ROBOT_LIST_COUNTER.into()),
                ("analytics".into(), botsense_core::assets::ROBOT_LIST_ANALYTICS.into()),
            ]
        } else {
            list_paths
                .iter()
                .map(|path| {
                    let name = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| path.display().to_string());
                    let text = fs::read_to_string(path).with_context(|| {
                        format!("cannot open robot list {}", path.display())
                    })?;
                    Ok((name, text))
                })
                .collect::<Result<_>>()?
        };
        let named: Vec<(&str, &str)> =
            texts.iter().map(|(n, t)| (n.as_str(), t.as_str())).collect();
        RobotLists::load(&named, &exclusions)?
    };

    let manual_path = args.manual_labels.clone().or_else(|| cfg.label.manual_labels.clone());
    let manual = match manual_path {
        Some(path) => {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("cannot open manual labels {}", path.display()))?;
            ManualMap::parse(&text, &path.display().to_string())?
        }
        None => ManualMap::builtin(),
    };
    Ok((db, lists, manual))
}

pub fn run_label(args: LabelArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let rules = load_rules(args.rules.as_deref(), cfg.ingest.rules.as_deref())?;
    let dialect = args.dialect.as_deref().map(parse_dialect_name).transpose()?;
    let (db, lists, manual) = load_labelers(&args, &cfg)?;

    let entries = read_entries(&args.entries, &rules, dialect)?;
    let sessions = load_sessions(&args.sessions, &entries)?;
    let (labels, label_report) = label_sessions(&sessions, &db, &lists, &manual);
    let by_id: HashMap<&str, &SessionLabel> = sessions
        .iter()
        .map(|s| s.id.as_str())
        .zip(labels.iter())
        .collect();

    let mut rows = read_feature_rows(&args.features, "features file")?;
    for row in &mut rows {
        let label = by_id.get(row.session_id.as_str()).ok_or_else(|| {
            anyhow!(
                "session {} from the feature table is not in the sessions file; \
                 the artifacts were built from different inputs",
                row.session_id
            )
        })?;
        row.label = label.verdict;
        row.label_stage = label.stage;
        row.label_evidence = label.evidence.clone();
    }
    let mut w = out_file(&args.out)?;
    write_table(&mut w, &rows)?;
    w.flush()?;

    let report = format!(
        "robots={}\nhumans={}\nunlabeled={}\nconflicts={}\nexcluded_patterns={}\n",
        label_report.robots,
        label_report.humans,
        label_report.unlabeled,
        label_report.conflicts,
        lists.removed.len()
    );
    emit_report(&report, args.report.as_deref())
}

// ---------------------------------------------------------------------------
// split

#[derive(Args, Debug, Default)]
pub struct SplitArgs {
    /// Labeled feature table.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out_train: PathBuf,
    #[arg(long)]
    pub out_test: PathBuf,
    /// Leading time-ordered fraction that becomes the training set.
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run_split(args: SplitArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let train_frac = pick(args.train_frac, cfg.split.train_frac, 0.7);

    let rows = read_feature_rows(&args.features, "features file")?;
    let labeled: Vec<FeatureRow> = rows
        .iter()
        .filter(|r| r.label != Verdict::Unlabeled)
        .cloned()
        .collect();
    let dropped = rows.len() - labeled.len();
    let (train, test) = split_rows(&labeled, train_frac).context("splitting feature table")?;

    let mut w = out_file(&args.out_train)?;
    write_table(&mut w, &train)?;
    w.flush()?;
    let mut w = out_file(&args.out_test)?;
    write_table(&mut w, &test)?;
    w.flush()?;

    let report = format!(
        "rows={}\nlabeled={}\nunlabeled_dropped={dropped}\ntrain_rows={}\ntest_rows={}\ntrain_frac={train_frac}\n",
        rows.len(),
        labeled.len(),
        train.len(),
        test.len()
    );
    emit_report(&report, args.report.as_deref())
}

// ---------------------------------------------------------------------------
// train

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Labeled training feature table.
    #[arg(long)]
    pub features: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// `gbdt` (default) or `logreg`.
    #[arg(long)]
    pub algorithm: Option<String>,
    /// `simple`, `semantic`, or `both` (default).
    #[arg(long)]
    pub feature_set: Option<String>,
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write `round<TAB>log_loss` lines here (gbdt only).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let set = feature_set_arg(args.feature_set.as_deref(), cfg.train.feature_set.as_deref())?;
    let algorithm = pick(args.algorithm.clone(), cfg.train.algorithm.clone(), "gbdt".to_string());

    let rows = read_feature_rows(&args.features, "features file")?;
    let ds = LabeledDataset::from_rows(&rows, set).context("building training dataset")?;
    let robots = ds.labels().iter().filter(|&&r| r).count();
    let humans = ds.len() - robots;

    let report = match algorithm.as_str() {
        "gbdt" => {
            let params = gbdt_params(
                args.n_trees,
                args.max_depth,
                args.learning_rate,
                args.min_leaf,
                args.seed,
                &cfg,
            );
            let (model, trace) =
                train_gbdt_traced(&ds, &params).context("training gradient-boosted trees")?;
            let mut w = out_file(&args.out)?;
            save_gbdt(&model, &mut w)?;
            w.flush()?;
            if let Some(trace_path) = &args.trace {
                let mut w = out_file(trace_path)?;
                writeln!(w, "# round\tlog_loss")?;
                for (round, loss) in trace.log_loss.iter().enumerate() {
                    writeln!(w, "{}\t{loss}", round + 1)?;
                }
                w.flush()?;
            }
            let final_loss = trace.log_loss.last().copied().unwrap_or(f64::NAN);
            format!(
                "algorithm=gbdt\nrows={}\nrobots={robots}\nhumans={humans}\nfeature_set={}\n\
                 trees={}\nmax_depth={}\nlearning_rate={}\nmin_leaf={}\nseed={}\nfinal_log_loss={final_loss:.6}\n",
                ds.len(),
                set.name(),
                params.n_trees,
                params.max_depth,
                params.learning_rate,
                params.min_leaf,
                params.seed
            )
        }
        "logreg" => {
            if args.trace.is_some() {
                eprintln!("note: --trace applies to gbdt only; ignored");
            }
            let params = LogRegParams::default();
            let model =
                train_logreg(&ds, &params).context("training logistic regression")?;
            let mut w = out_file(&args.out)?;
            save_logreg(&model, &mut w)?;
            w.flush()?;
            format!(
                "algorithm=logreg\nrows={}\nrobots={robots}\nhumans={humans}\nfeature_set={}\nepochs={}\n",
                ds.len(),
                set.name(),
                params.epochs
            )
        }
        other => bail!("unknown algorithm {other:?} (expected gbdt or logreg)"),
    };
    emit_report(&report, args.report.as_deref())
}

// ---------------------------------------------------------------------------
// evaluate

pub enum AnyModel {
    Gbdt(GBDTModel),
    LogReg(LogRegModel),
}

impl AnyModel {
    pub fn feature_names(&self) -> &[String] {
        match self {
            AnyModel::Gbdt(m) => &m.feature_names,
            AnyModel::LogReg(m) => &m.feature_names,
        }
    }

    pub fn predict(&self, ds: &LabeledDataset) -> Result<Vec<bool>, ModelError> {
        match self {
            AnyModel::Gbdt(m) => m.predict_dataset(ds),
            AnyModel::LogReg(m) => m.predict_dataset(ds),
        }
    }
}

pub fn load_any_model(path: &Path) -> Result<AnyModel> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot open model file {}", path.display()))?;
    let header = text.lines().next().unwrap_or_default();
    match header {
        "botsense-gbdt v1" => Ok(AnyModel::Gbdt(
            load_gbdt(text.as_bytes()).with_context(|| format!("model file {}", path.display()))?,
        )),
        "botsense-logreg v1" => Ok(AnyModel::LogReg(
            load_logreg(text.as_bytes())
                .with_context(|| format!("model file {}", path.display()))?,
        )),
        other => bail!("model file {}: unrecognized header {other:?}", path.display()),
    }
}

fn feature_set_of_names(names: &[String]) -> Result<FeatureSet> {
    [FeatureSet::Simple, FeatureSet::Semantic, FeatureSet::Both]
        .into_iter()
        .find(|set| set.names() == names)
        .ok_or_else(|| anyhow!("model feature list does not match any known feature set"))
}

#[derive(Args, Debug, Default)]
pub struct EvaluateArgs {
    /// Trained model file (gbdt or logreg; detected from the header).
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled feature table to evaluate on.
    #[arg(long)]
    pub features: PathBuf,
    /// Metrics report file; the metrics always go to standard output too.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the metrics as one JSON object here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let model = load_any_model(&args.model)?;
    let set = feature_set_of_names(model.feature_names())?;
    let rows = read_feature_rows(&args.features, "features file")?;
    let ds = LabeledDataset::from_rows(&rows, set).context("building evaluation dataset")?;
    let preds = model.predict(&ds).context("predicting")?;
    let metrics = evaluate(&preds, &ds.labels()).context("computing metrics")?;

    let text = format!("{}\n", metrics.render());
    print!("{text}");
    if let Some(path) = &args.out {
        let mut w = out_file(path)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
    }
    if let Some(path) = &args.json {
        let mut w = out_file(path)?;
        writeln!(w, "{}", metrics.to_json())?;
        w.flush()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// score-features

#[derive(Args, Debug, Default)]
pub struct ScoreFeaturesArgs {
    /// Labeled feature table.
    #[arg(long)]
    pub features: PathBuf,
    /// `f-test` (default) or `chi2`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub feature_set: Option<String>,
    /// Scores file; the ranking always goes to standard output too.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run_score_features(args: ScoreFeaturesArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let set = feature_set_arg(args.feature_set.as_deref(), cfg.train.feature_set.as_deref())?;
    let rows = read_feature_rows(&args.features, "features file")?;
    let ds = LabeledDataset::from_rows(&rows, set).context("building dataset")?;

    let method = args.method.as_deref().unwrap_or("f-test");
    let scores = match method {
        "f-test" | "f" => anova_f_scores(&ds).context("computing F scores")?,
        "chi2" => chi2_scores(&ds).context("computing chi-square scores")?,
        other => bail!("unknown method {other:?} (expected f-test or chi2)"),
    };

    let text = format!(
        "# botsense feature scores v1\n# method={method} feature_set={}\n{}",
        set.name(),
        render_scores(&scores)
    );
    print!("{text}");
    if let Some(path) = &args.out {
        let mut w = out_file(path)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// learning-curve

#[derive(Args, Debug, Default)]
pub struct LearningCurveArgs {
    /// Labeled training feature table.
    #[arg(long)]
    pub train: PathBuf,
    /// Labeled test feature table.
    #[arg(long)]
    pub test: PathBuf,
    /// Curve file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub feature_set: Option<String>,
    /// Comma-separated training fractions in (0, 1]; default 0.1..=1.0.
    #[arg(long)]
    pub fractions: Option<String>,
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run_learning_curve(args: LearningCurveArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let set = feature_set_arg(args.feature_set.as_deref(), cfg.train.feature_set.as_deref())?;
    let params = gbdt_params(
        args.n_trees,
        args.max_depth,
        args.learning_rate,
        args.min_leaf,
        args.seed,
        &cfg,
    );
    let fractions: Vec<f64> = match &args.fractions {
        Some(list) => list
            .split(',')
            .map(|part| {
                part.trim()
                    .parse::<f64>()
                    .map_err(|_| anyhow!("bad fraction {part:?} in --fractions"))
            })
            .collect::<Result<_>>()?,
        None => cfg.curve.fractions.clone().unwrap_or_else(default_fractions),
    };

    let train_rows = read_feature_rows(&args.train, "training features file")?;
    let test_rows = read_feature_rows(&args.test, "test features file")?;
    let train_ds = LabeledDataset::from_rows(&train_rows, set).context("building training dataset")?;
    let test_ds = LabeledDataset::from_rows(&test_rows, set).context("building test dataset")?;

    let (points, warnings) =
        learning_curve(&train_ds, &test_ds, &params, &fractions).context("learning curve")?;
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }

    let mut w = out_file(&args.out)?;
    writeln!(w, "# botsense learning curve v1")?;
    writeln!(w, "# feature_set={} n_trees={} max_depth={}", set.name(), params.n_trees, params.max_depth)?;
    writeln!(w, "# fraction\ttrain_rows\ttrain_ba\ttest_ba")?;
    for p in &points {
        writeln!(w, "{}\t{}\t{}\t{}", p.fraction, p.train_rows, p.train_ba, p.test_ba)?;
    }
    w.flush()?;

    let report = format!("points={}\nskipped={}\n", points.len(), warnings.len());
    emit_report(&report, args.report.as_deref())
}

// ---------------------------------------------------------------------------
// synth

#[derive(Args, Debug, Default)]
pub struct SynthArgs {
    /// Directory for corpus.tsv, access.log, and truth.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub doc_length: Option<usize>,
    #[arg(long)]
    pub human_sessions: Option<usize>,
    #[arg(long)]
    pub bot_sessions: Option<usize>,
    /// Probability a human's next page stays in their home cluster.
    #[arg(long)]
    pub stickiness: Option<f64>,
    /// Probability a bot page draw is uniform over the whole corpus.
    #[arg(long)]
    pub bot_uniformity: Option<f64>,
    /// Fraction of human sessions with a logged-in username.
    #[arg(long)]
    pub login_fraction: Option<f64>,
    /// Give bots browser user-agents so they land in the unlabeled pool.
    #[arg(long)]
    pub mask_bots: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn synth_config(args: &SynthArgs, cfg: &FileConfig) -> SynthConfig {
    let d = SynthConfig::default();
    let s = &cfg.synth;
    SynthConfig {
        n_docs: pick(args.docs, s.docs, d.n_docs),
        vocab_size: pick(args.vocab, s.vocab, d.vocab_size),
        n_clusters: pick(args.clusters, s.clusters, d.n_clusters),
        doc_length: pick(args.doc_length, s.doc_length, d.doc_length),
        n_human_sessions: pick(args.human_sessions, s.human_sessions, d.n_human_sessions),
        n_bot_sessions: pick(args.bot_sessions, s.bot_sessions, d.n_bot_sessions),
        human_cluster_stickiness: pick(args.stickiness, s.stickiness, d.human_cluster_stickiness),
        bot_uniformity: pick(args.bot_uniformity, s.bot_uniformity, d.bot_uniformity),
        human_login_fraction: pick(args.login_fraction, s.login_fraction, d.human_login_fraction),
        mask_bots: args.mask_bots || s.mask_bots.unwrap_or(d.mask_bots),
        human_session_min: s.human_session_min.unwrap_or(d.human_session_min),
        human_session_max: s.human_session_max.unwrap_or(d.human_session_max),
        bot_session_min: s.bot_session_min.unwrap_or(d.bot_session_min),
        bot_session_max: s.bot_session_max.unwrap_or(d.bot_session_max),
        human_gap_median_secs: s.human_gap_median_secs.unwrap_or(d.human_gap_median_secs),
        human_gap_sigma: s.human_gap_sigma.unwrap_or(d.human_gap_sigma),
        bot_gap_secs: s.bot_gap_secs.unwrap_or(d.bot_gap_secs),
        bot_gap_jitter: s.bot_gap_jitter.unwrap_or(d.bot_gap_jitter),
        seed: pick(args.seed, cfg.seed, d.seed),
    }
}

pub fn run_synth(args: SynthArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let synth_cfg = synth_config(&args, &cfg);
    let output = synth::generate(&synth_cfg).context("generating synthetic data")?;

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating directory {}", args.out_dir.display()))?;
    fs::write(args.out_dir.join("corpus.tsv"), &output.corpus_text)?;
    fs::write(args.out_dir.join("access.log"), &output.log_text)?;
    fs::write(args.out_dir.join("truth.tsv"), &output.truth_text)?;

    let report = format!(
        "documents={}\nhuman_sessions={}\nbot_sessions={}\nrequests={}\nlogged_in_humans={}\nseed={}\n",
        output.stats.documents,
        output.stats.human_sessions,
        output.stats.bot_sessions,
        output.stats.requests,
        output.stats.logged_in_humans,
        synth_cfg.seed
    );
    emit_report(&report, args.report.as_deref())
}

// ---------------------------------------------------------------------------
// pipeline

#[derive(Args, Debug, Default)]
pub struct PipelineArgs {
    /// Raw access log; defaults to [paths].log from the config.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Article corpus; defaults to [paths].corpus from the config.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Directory for every artifact; defaults to [paths].out_dir.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Ground-truth file from `synth`; label agreement is reported when given.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub dialect: Option<String>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub feature_set: Option<String>,
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Also compute the learning curve (the slowest optional stage).
    #[arg(long)]
    pub with_curve: bool,
    /// One seed for every stochastic stage.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn truth_agreement(truth_path: &Path, rows: &[FeatureRow]) -> Result<String> {
    let truth = synth::read_truth(in_file(truth_path, "truth file")?)
        .with_context(|| format!("truth file {}", truth_path.display()))?;
    let mut matched = 0usize;
    let mut agree = 0usize;
    for row in rows {
        if let Some(verdict) = truth.get(&row.session_id) {
            matched += 1;
            if *verdict == row.label {
                agree += 1;
            }
        }
    }
    Ok(format!(
        "truth_sessions={}\ntruth_matched={matched}\ntruth_agreement={:.4}\n",
        truth.len(),
        agree as f64 / matched.max(1) as f64
    ))
}

pub fn run_pipeline(args: PipelineArgs) -> Result<()> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let log = args
        .log
        .clone()
        .or_else(|| cfg.paths.log.clone())
        .ok_or_else(|| anyhow!("no input log: pass --log or set [paths].log in the config"))?;
    let corpus = args
        .corpus
        .clone()
        .or_else(|| cfg.paths.corpus.clone())
        .ok_or_else(|| anyhow!("no corpus: pass --corpus or set [paths].corpus in the config"))?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.paths.out_dir.clone())
        .ok_or_else(|| anyhow!("no output directory: pass --out-dir or set [paths].out_dir"))?;
    let truth = args.truth.clone().or_else(|| cfg.paths.truth.clone());
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating directory {}", out_dir.display()))?;

    let entries = out_dir.join("entries.log");
    let sessions = out_dir.join("sessions.tsv");
    let topic_model = out_dir.join("topic_model.txt");
    let topics = out_dir.join("topics.tsv");
    let features = out_dir.join("features.tsv");
    let labeled = out_dir.join("labeled.tsv");
    let train = out_dir.join("train.tsv");
    let test = out_dir.join("test.tsv");
    let model = out_dir.join("model.txt");
    let metrics = out_dir.join("metrics.txt");
    let metrics_json = out_dir.join("metrics.json");
    let scores = out_dir.join("feature_scores.tsv");
    let curve = out_dir.join("curve.tsv");

    eprintln!("==> ingest");
    run_ingest(IngestArgs {
        log,
        dialect: args.dialect.clone(),
        rules: args.rules.clone(),
        out: entries.clone(),
        report: None,
        config: args.config.clone(),
    })
    .context("stage ingest")?;

    eprintln!("==> sessionize");
    run_sessionize(SessionizeArgs {
        entries: entries.clone(),
        out: sessions.clone(),
        config: args.config.clone(),
        ..Default::default()
    })
    .context("stage sessionize")?;

    eprintln!("==> lda-train");
    run_lda_train(LdaTrainArgs {
        corpus,
        out: topic_model.clone(),
        k: args.k,
        iterations: args.iterations,
        seed: args.seed,
        config: args.config.clone(),
        ..Default::default()
    })
    .context("stage lda-train")?;

    eprintln!("==> topics-export");
    run_topics_export(TopicsExportArgs {
        model: topic_model,
        out: topics.clone(),
        seed: args.seed,
        config: args.config.clone(),
        ..Default::default()
    })
    .context("stage topics-export")?;

    eprintln!("==> features");
    run_features(FeaturesArgs {
        entries: entries.clone(),
        sessions: sessions.clone(),
        topics,
        out: features.clone(),
        config: args.config.clone(),
        ..Default::default()
    })
    .context("stage features")?;

    eprintln!("==> label");
    run_label(LabelArgs {
        entries,
        sessions,
        features,
        out: labeled.clone(),
        config: args.config.clone(),
        ..Default::default()
    })
    .context("stage label")?;

    if let Some(truth_path) = &truth {
        let rows = read_feature_rows(&labeled, "labeled features file")?;
        eprint!("{}", truth_agreement(truth_path, &rows).context("stage label")?);
    }

    eprintln!("==> split");
    run_split(SplitArgs {
        features: labeled.clone(),
        out_train: train.clone(),
        out_test: test.clone(),
        train_frac: args.train_frac,
        report: None,
        config: args.config.clone(),
    })
    .context("stage split")?;

    eprintln!("==> train");
    run_train(TrainArgs {
        features: train.clone(),
        out: model.clone(),
        algorithm: args.algorithm.clone(),
        feature_set: args.feature_set.clone(),
        seed: args.seed,
        config: args.config.clone(),
        ..Default::default()
    })
    .context("stage train")?;

    eprintln!("==> evaluate");
    run_evaluate(EvaluateArgs {
        model,
        features: test.clone(),
        out: Some(metrics),
        json: Some(metrics_json),
    })
    .context("stage evaluate")?;

    eprintln!("==> score-features");
    run_score_features(ScoreFeaturesArgs {
        features: labeled,
        method: None,
        feature_set: args.feature_set.clone(),
        out: Some(scores),
        config: args.config.clone(),
    })
    .context("stage score-features")?;

    if args.with_curve {
        eprintln!("==> learning-curve");
        run_learning_curve(LearningCurveArgs {
            train,
            test,
            out: curve,
            feature_set: args.feature_set.clone(),
            seed: args.seed,
            config: args.config.clone(),
            ..Default::default()
        })
        .context("stage learning-curve")?;
    }
    Ok(())
}
