//! LDA topic modeling of the article corpus via collapsed Gibbs sampling.
//!
//! A trained model maps every article to a distribution over `k` topics;
//! downstream we keep only the top-10 entries per article (see
//! [`truncate_top_m`]) and feed those sparse vectors to the semantic
//! feature extractor.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Default number of kept topics per document.
pub const DEFAULT_TOP_M: usize = 10;
/// Default Gibbs sweeps for fold-in inference of a single document.
pub const DEFAULT_INFER_SWEEPS: usize = 50;

const STOPWORDS_EN: &[&str] = &[
    "the", "and", "for", "are", "but", "not", "you", "all", "any", "can", "had", "her", "was",
    "one", "our", "out", "day", "get", "has", "him", "his", "how", "man", "new", "now", "old",
    "see", "two", "way", "who", "its", "did", "that", "this", "with", "from", "they", "she",
    "been", "have", "were", "which", "their", "will", "would", "there", "what", "about", "when",
    "than", "then", "them", "these", "some", "into", "only", "other", "such", "also", "more",
    "most", "over", "between", "each", "both", "while", "where", "after", "before", "under",
    "above", "during", "through",
];

// ---------------------------------------------------------------------------
// Corpus

#[derive(Debug, Clone)]
pub struct Document {
    pub doc_id: String,
    /// Token indexes into the corpus vocabulary.
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocabulary: Vec<String>,
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(|d| d.tokens.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct PreprocessOptions {
    /// Tokens shorter than this many characters are dropped.
    pub min_token_len: usize,
    /// Terms occurring in fewer documents than this are dropped.
    pub min_doc_freq: usize,
    pub stopwords: HashSet<String>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            min_token_len: 3,
            min_doc_freq: 2,
            stopwords: STOPWORDS_EN.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PreprocessReport {
    pub docs_in: usize,
    pub docs_kept: usize,
    /// Documents left without tokens after filtering, and therefore dropped.
    pub docs_dropped_empty: usize,
    pub vocabulary_size: usize,
    pub total_tokens: usize,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: expected `doc_id<TAB>text`")]
    BadLine { line: usize },
    #[error("duplicate doc_id {id:?}")]
    DuplicateDocId { id: String },
    #[error("corpus I/O: {0}")]
    Io(#[from] io::Error),
}

/// Read raw documents from `doc_id TAB text` lines. Blank lines are skipped.
pub fn read_corpus_lines<R: BufRead>(reader: R) -> Result<Vec<(String, String)>, CorpusError> {
    let mut docs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or(CorpusError::BadLine { line: idx + 1 })?;
        docs.push((id.to_string(), text.to_string()));
    }
    Ok(docs)
}

/// Lowercase, split on non-alphanumeric characters, and apply the length and
/// stop-word filters. Exposed so held-out documents can be tokenized the same
/// way before fold-in inference.
pub fn tokenize(text: &str, opts: &PreprocessOptions) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= opts.min_token_len)
        .filter(|t| !opts.stopwords.contains(*t))
        .map(|t| t.to_string())
        .collect()
}

/// Tokenize raw documents and build an indexed corpus.
///
/// Terms below the document-frequency floor are dropped, and documents left
/// empty after filtering are dropped (counted in the report). The vocabulary
/// is sorted so indexes do not depend on input order.
pub fn build_corpus(
    raw: &[(String, String)],
    opts: &PreprocessOptions,
) -> Result<(Corpus, PreprocessReport), CorpusError> {
    let mut seen_ids = HashSet::new();
    for (id, _) in raw {
        if !seen_ids.insert(id.as_str()) {
            return Err(CorpusError::DuplicateDocId { id: id.clone() });
        }
    }

    let tokenized: Vec<Vec<String>> = raw.iter().map(|(_, text)| tokenize(text, opts)).collect();

    let mut doc_freq: HashMap<&str, usize> = HashMap::new();
    for tokens in &tokenized {
        for term in tokens.iter().collect::<HashSet<_>>() {
            *doc_freq.entry(term).or_insert(0) += 1;
        }
    }

    let mut vocabulary: Vec<String> = doc_freq
        .iter()
        .filter(|(_, &df)| df >= opts.min_doc_freq)
        .map(|(term, _)| term.to_string())
        .collect();
    vocabulary.sort();
    let index: HashMap<&str, u32> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i as u32))
        .collect();

    let mut documents = Vec::new();
    let mut dropped = 0usize;
    let mut total_tokens = 0usize;
    for ((id, _), tokens) in raw.iter().zip(&tokenized) {
        let mapped: Vec<u32> = tokens
            .iter()
            .filter_map(|t| index.get(t.as_str()).copied())
            .collect();
        if mapped.is_empty() {
            dropped += 1;
            continue;
        }
        total_tokens += mapped.len();
        documents.push(Document {
            doc_id: id.clone(),
            tokens: mapped,
        });
    }

    let report = PreprocessReport {
        docs_in: raw.len(),
        docs_kept: documents.len(),
        docs_dropped_empty: dropped,
        vocabulary_size: vocabulary.len(),
        total_tokens,
    };
    Ok((
        Corpus {
            vocabulary,
            documents,
        },
        report,
    ))
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdaConfig {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaConfig {
    /// Defaults for a given topic count: alpha = 50/k, beta = 0.01, 500 sweeps.
    pub fn with_k(k: usize) -> Self {
        LdaConfig {
            k,
            alpha: 50.0 / k as f64,
            beta: 0.01,
            iterations: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum LdaError {
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("document has no tokens")]
    EmptyDocument,
    #[error("token index {index} outside vocabulary of size {vocab}")]
    TokenOutOfRange { index: u32, vocab: usize },
}

#[derive(Debug, Clone)]
pub struct TopicModel {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub iterations: usize,
    pub vocabulary: Vec<String>,
    /// k rows of V probabilities; each row sums to 1.
    pub topic_word: Vec<Vec<f64>>,
    pub doc_ids: Vec<String>,
    /// One row of k probabilities per training document.
    pub doc_topic: Vec<Vec<f64>>,
}

/// Joint log-likelihood trace, one value per sweep.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub log_likelihood: Vec<f64>,
}

struct GibbsState {
    k: usize,
    v: usize,
    alpha: f64,
    beta: f64,
    /// Flattened D×k document-topic counts.
    ndk: Vec<u32>,
    /// Flattened k×V topic-word counts.
    nkv: Vec<u32>,
    nd: Vec<u32>,
    nk: Vec<u32>,
    /// Topic assignment per token, parallel to each document's tokens.
    z: Vec<Vec<u32>>,
}

impl GibbsState {
    fn init(corpus: &Corpus, k: usize, alpha: f64, beta: f64, rng: &mut ChaCha8Rng) -> GibbsState {
        let d = corpus.documents.len();
        let v = corpus.vocabulary.len();
        let mut s = GibbsState {
            k,
            v,
            alpha,
            beta,
            ndk: vec![0; d * k],
            nkv: vec![0; k * v],
            nd: vec![0; d],
            nk: vec![0; k],
            z: Vec::with_capacity(d),
        };
        for (di, doc) in corpus.documents.iter().enumerate() {
            let mut zd = Vec::with_capacity(doc.tokens.len());
            for &w in &doc.tokens {
                let t = rng.gen_range(0..k) as u32;
                s.ndk[di * k + t as usize] += 1;
                s.nkv[t as usize * v + w as usize] += 1;
                s.nd[di] += 1;
                s.nk[t as usize] += 1;
                zd.push(t);
            }
            s.z.push(zd);
        }
        s
    }

    fn sweep(&mut self, corpus: &Corpus, rng: &mut ChaCha8Rng, cumulative: &mut Vec<f64>) {
        let k = self.k;
        let v = self.v;
        let v_beta = v as f64 * self.beta;
        cumulative.resize(k, 0.0);
        for (di, doc) in corpus.documents.iter().enumerate() {
            for (ti, &w) in doc.tokens.iter().enumerate() {
                let w = w as usize;
                let old = self.z[di][ti] as usize;
                self.ndk[di * k + old] -= 1;
                self.nkv[old * v + w] -= 1;
                self.nk[old] -= 1;

                let mut total = 0.0;
                for j in 0..k {
                    let wgt = (self.ndk[di * k + j] as f64 + self.alpha)
                        * (self.nkv[j * v + w] as f64 + self.beta)
                        / (self.nk[j] as f64 + v_beta);
                    total += wgt;
                    cumulative[j] = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = cumulative.partition_point(|&c| c <= u).min(k - 1);

                self.ndk[di * k + new] += 1;
                self.nkv[new * v + w] += 1;
                self.nk[new] += 1;
                self.z[di][ti] = new as u32;
            }
        }
        #[cfg(debug_assertions)]
        self.check_counts(corpus);
    }

    #[cfg(debug_assertions)]
    fn check_counts(&self, corpus: &Corpus) {
        let total = corpus.total_tokens() as u64;
        debug_assert_eq!(self.nk.iter().map(|&c| c as u64).sum::<u64>(), total);
        debug_assert_eq!(self.nd.iter().map(|&c| c as u64).sum::<u64>(), total);
        debug_assert_eq!(self.ndk.iter().map(|&c| c as u64).sum::<u64>(), total);
        debug_assert_eq!(self.nkv.iter().map(|&c| c as u64).sum::<u64>(), total);
    }

    /// Joint log p(w, z) from the collapsed Dirichlet-multinomial form.
    fn log_likelihood(&self) -> f64 {
        let k = self.k;
        let v = self.v;
        let d = self.nd.len();
        let ka = k as f64 * self.alpha;
        let vb = v as f64 * self.beta;
        let mut ll = d as f64 * (ln_gamma(ka) - k as f64 * ln_gamma(self.alpha));
        for di in 0..d {
            for j in 0..k {
                ll += ln_gamma(self.ndk[di * k + j] as f64 + self.alpha);
            }
            ll -= ln_gamma(self.nd[di] as f64 + ka);
        }
        ll += k as f64 * (ln_gamma(vb) - v as f64 * ln_gamma(self.beta));
        for j in 0..k {
            for w in 0..v {
                ll += ln_gamma(self.nkv[j * v + w] as f64 + self.beta);
            }
            ll -= ln_gamma(self.nk[j] as f64 + vb);
        }
        ll
    }
}

fn validate_config(cfg: &LdaConfig) -> Result<(), LdaError> {
    if cfg.k < 1 {
        return Err(LdaError::InvalidHyperparameter("k must be >= 1".into()));
    }
    if !(cfg.alpha > 0.0) {
        return Err(LdaError::InvalidHyperparameter("alpha must be > 0".into()));
    }
    if !(cfg.beta > 0.0) {
        return Err(LdaError::InvalidHyperparameter("beta must be > 0".into()));
    }
    if cfg.iterations < 1 {
        return Err(LdaError::InvalidHyperparameter(
            "iterations must be >= 1".into(),
        ));
    }
    Ok(())
}

pub fn train_lda(corpus: &Corpus, cfg: &LdaConfig) -> Result<TopicModel, LdaError> {
    train_lda_traced(corpus, cfg).map(|(m, _)| m)
}

/// Train and also return the per-sweep log-likelihood trace.
pub fn train_lda_traced(
    corpus: &Corpus,
    cfg: &LdaConfig,
) -> Result<(TopicModel, TrainTrace), LdaError> {
    validate_config(cfg)?;
    if corpus.documents.is_empty() {
        return Err(LdaError::EmptyCorpus);
    }
    let v = corpus.vocabulary.len();
    for doc in &corpus.documents {
        if doc.tokens.is_empty() {
            return Err(LdaError::EmptyDocument);
        }
        if let Some(&bad) = doc.tokens.iter().find(|&&t| t as usize >= v) {
            return Err(LdaError::TokenOutOfRange {
                index: bad,
                vocab: v,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = GibbsState::init(corpus, cfg.k, cfg.alpha, cfg.beta, &mut rng);
    let mut trace = TrainTrace::default();
    let mut cumulative = Vec::new();
    for _ in 0..cfg.iterations {
        state.sweep(corpus, &mut rng, &mut cumulative);
        trace.log_likelihood.push(state.log_likelihood());
    }

    let k = cfg.k;
    let topic_word = (0..k)
        .map(|j| {
            let denom = state.nk[j] as f64 + v as f64 * cfg.beta;
            (0..v)
                .map(|w| (state.nkv[j * v + w] as f64 + cfg.beta) / denom)
                .collect()
        })
        .collect();
    let doc_topic = corpus
        .documents
        .iter()
        .enumerate()
        .map(|(di, _)| {
            let denom = state.nd[di] as f64 + k as f64 * cfg.alpha;
            (0..k)
                .map(|j| (state.ndk[di * k + j] as f64 + cfg.alpha) / denom)
                .collect()
        })
        .collect();

    Ok((
        TopicModel {
            k,
            alpha: cfg.alpha,
            beta: cfg.beta,
            seed: cfg.seed,
            iterations: cfg.iterations,
            vocabulary: corpus.vocabulary.clone(),
            topic_word,
            doc_ids: corpus.documents.iter().map(|d| d.doc_id.clone()).collect(),
            doc_topic,
        },
        trace,
    ))
}

/// Fold-in inference for a document outside the training set: Gibbs sweeps
/// with the topic-word distributions held fixed.
pub fn infer_doc_topics(
    model: &TopicModel,
    tokens: &[u32],
    sweeps: usize,
    seed: u64,
) -> Result<Vec<f64>, LdaError> {
    if tokens.is_empty() {
        return Err(LdaError::EmptyDocument);
    }
    let v = model.vocabulary.len();
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= v) {
        return Err(LdaError::TokenOutOfRange {
            index: bad,
            vocab: v,
        });
    }

    let k = model.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ndk = vec![0u32; k];
    let mut z: Vec<u32> = tokens
        .iter()
        .map(|_| {
            let t = rng.gen_range(0..k) as u32;
            ndk[t as usize] += 1;
            t
        })
        .collect();

    let mut cumulative = vec![0.0f64; k];
    for _ in 0..sweeps.max(1) {
        for (ti, &w) in tokens.iter().enumerate() {
            let old = z[ti] as usize;
            ndk[old] -= 1;
            let mut total = 0.0;
            for j in 0..k {
                let wgt = (ndk[j] as f64 + model.alpha) * model.topic_word[j][w as usize];
                total += wgt;
                cumulative[j] = total;
            }
            let u = rng.gen::<f64>() * total;
            let new = cumulative.partition_point(|&c| c <= u).min(k - 1);
            ndk[new] += 1;
            z[ti] = new as u32;
        }
    }

    let denom = tokens.len() as f64 + k as f64 * model.alpha;
    Ok((0..k)
        .map(|j| (ndk[j] as f64 + model.alpha) / denom)
        .collect())
}

// ---------------------------------------------------------------------------
// Sparse vectors

/// A truncated per-document topic distribution: the top-m topics by
/// probability. Discarded topics count as probability zero; the kept entries
/// are deliberately not renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTopicVector {
    /// (topic_id, probability) sorted by descending probability,
    /// ties broken by lower topic id.
    pub entries: Vec<(u32, f64)>,
}

impl SparseTopicVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn support(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|&(t, _)| t)
    }

    pub fn get(&self, topic: u32) -> f64 {
        self.entries
            .iter()
            .find(|&&(t, _)| t == topic)
            .map(|&(_, p)| p)
            .unwrap_or(0.0)
    }
}

/// Keep the top-m topics of a dense distribution. Zero-probability topics are
/// never included; a tie at the m-th place is resolved toward the lower id.
pub fn truncate_top_m(theta: &[f64], m: usize) -> SparseTopicVector {
    let mut entries: Vec<(u32, f64)> = theta
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p > 0.0)
        .map(|(j, &p)| (j as u32, p))
        .collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    entries.truncate(m);
    SparseTopicVector { entries }
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("model I/O: {0}")]
    Io(#[from] io::Error),
    #[error("model file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Write a model in the versioned text layout (see README for the format).
pub fn save_model<W: Write>(model: &TopicModel, mut w: W) -> Result<(), ModelIoError> {
    writeln!(w, "botsense-topic-model v1")?;
    writeln!(w, "k {}", model.k)?;
    writeln!(w, "alpha {}", model.alpha)?;
    writeln!(w, "beta {}", model.beta)?;
    writeln!(w, "seed {}", model.seed)?;
    writeln!(w, "iterations {}", model.iterations)?;
    writeln!(w, "vocabulary {}", model.vocabulary.len())?;
    writeln!(w, "documents {}", model.doc_ids.len())?;
    for term in &model.vocabulary {
        writeln!(w, "{term}")?;
    }
    writeln!(w, "topic_word")?;
    for row in &model.topic_word {
        let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    writeln!(w, "doc_topic")?;
    for (id, row) in model.doc_ids.iter().zip(&model.doc_topic) {
        let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        writeln!(w, "{id}\t{}", line.join(" "))?;
    }
    Ok(())
}

pub fn load_model<R: BufRead>(reader: R) -> Result<TopicModel, ModelIoError> {
    let mut lines = reader.lines().enumerate();
    let mut next = || -> Result<(usize, String), ModelIoError> {
        match lines.next() {
            Some((idx, Ok(line))) => Ok((idx + 1, line)),
            Some((_, Err(e))) => Err(ModelIoError::Io(e)),
            None => Err(ModelIoError::Parse {
                line: 0,
                reason: "unexpected end of file".into(),
            }),
        }
    };

    let (line_no, header) = next()?;
    if header != "botsense-topic-model v1" {
        return Err(ModelIoError::Parse {
            line: line_no,
            reason: format!("unrecognized header {header:?}"),
        });
    }

    fn field<T: std::str::FromStr>(
        pair: (usize, String),
        name: &str,
    ) -> Result<T, ModelIoError> {
        let (line, text) = pair;
        let value = text
            .strip_prefix(name)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| ModelIoError::Parse {
                line,
                reason: format!("expected `{name} <value>`"),
            })?;
        value.parse().map_err(|_| ModelIoError::Parse {
            line,
            reason: format!("invalid {name} value {value:?}"),
        })
    }

    let k: usize = field(next()?, "k")?;
    let alpha: f64 = field(next()?, "alpha")?;
    let beta: f64 = field(next()?, "beta")?;
    let seed: u64 = field(next()?, "seed")?;
    let iterations: usize = field(next()?, "iterations")?;
    let v: usize = field(next()?, "vocabulary")?;
    let d: usize = field(next()?, "documents")?;

    let mut vocabulary = Vec::with_capacity(v);
    for _ in 0..v {
        vocabulary.push(next()?.1);
    }

    let (line_no, marker) = next()?;
    if marker != "topic_word" {
        return Err(ModelIoError::Parse {
            line: line_no,
            reason: "expected `topic_word` section".into(),
        });
    }
    let mut topic_word = Vec::with_capacity(k);
    for _ in 0..k {
        let (line_no, row) = next()?;
        let parsed = parse_row(&row, v, line_no)?;
        topic_word.push(parsed);
    }

    let (line_no, marker) = next()?;
    if marker != "doc_topic" {
        return Err(ModelIoError::Parse {
            line: line_no,
            reason: "expected `doc_topic` section".into(),
        });
    }
    let mut doc_ids = Vec::with_capacity(d);
    let mut doc_topic = Vec::with_capacity(d);
    for _ in 0..d {
        let (line_no, row) = next()?;
        let (id, rest) = row.split_once('\t').ok_or_else(|| ModelIoError::Parse {
            line: line_no,
            reason: "expected `doc_id<TAB>probabilities`".into(),
        })?;
        doc_ids.push(id.to_string());
        doc_topic.push(parse_row(rest, k, line_no)?);
    }

    let model = TopicModel {
        k,
        alpha,
        beta,
        seed,
        iterations,
        vocabulary,
        topic_word,
        doc_ids,
        doc_topic,
    };
    for (i, row) in model.topic_word.iter().enumerate() {
        check_distribution(row, || format!("topic_word row {i}"))?;
    }
    for (i, row) in model.doc_topic.iter().enumerate() {
        check_distribution(row, || format!("doc_topic row {i}"))?;
    }
    Ok(model)
}

fn parse_row(text: &str, expected: usize, line: usize) -> Result<Vec<f64>, ModelIoError> {
    let row: Result<Vec<f64>, _> = text.split(' ').map(str::parse).collect();
    let row = row.map_err(|_| ModelIoError::Parse {
        line,
        reason: "invalid probability".into(),
    })?;
    if row.len() != expected {
        return Err(ModelIoError::Parse {
            line,
            reason: format!("expected {expected} probabilities, found {}", row.len()),
        });
    }
    Ok(row)
}

fn check_distribution(
    row: &[f64],
    context: impl Fn() -> String,
) -> Result<(), ModelIoError> {
    if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(ModelIoError::Parse {
            line: 0,
            reason: format!("{}: negative or non-finite entry", context()),
        });
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(ModelIoError::Parse {
            line: 0,
            reason: format!("{}: probabilities sum to {sum}, not 1", context()),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Topic table export

#[derive(Debug, Error)]
pub enum TopicTableError {
    #[error("topic table I/O: {0}")]
    Io(#[from] io::Error),
    #[error("topic table line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Write `doc_id TAB topic:prob,...` lines, one per document.
pub fn write_topic_table<'a, W, I>(mut w: W, rows: I) -> Result<(), TopicTableError>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a SparseTopicVector)>,
{
    for (doc_id, vector) in rows {
        let cells: Vec<String> = vector
            .entries
            .iter()
            .map(|(t, p)| format!("{t}:{p}"))
            .collect();
        writeln!(w, "{doc_id}\t{}", cells.join(","))?;
    }
    Ok(())
}

pub fn read_topic_table<R: BufRead>(
    reader: R,
) -> Result<HashMap<String, SparseTopicVector>, TopicTableError> {
    let mut table = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (doc_id, rest) = line.split_once('\t').ok_or_else(|| TopicTableError::Parse {
            line: line_no,
            reason: "expected `doc_id<TAB>topic:prob,...`".into(),
        })?;
        let mut entries = Vec::new();
        if !rest.is_empty() {
            for cell in rest.split(',') {
                let (t, p) = cell.split_once(':').ok_or_else(|| TopicTableError::Parse {
                    line: line_no,
                    reason: format!("bad cell {cell:?}"),
                })?;
                let topic: u32 = t.parse().map_err(|_| TopicTableError::Parse {
                    line: line_no,
                    reason: format!("bad topic id {t:?}"),
                })?;
                let prob: f64 = p.parse().map_err(|_| TopicTableError::Parse {
                    line: line_no,
                    reason: format!("bad probability {p:?}"),
                })?;
                if !(prob > 0.0 && prob <= 1.0 + 1e-9) {
                    return Err(TopicTableError::Parse {
                        line: line_no,
                        reason: format!("probability {prob} outside (0, 1]"),
                    });
                }
                entries.push((topic, prob));
            }
        }
        let mut ids: Vec<u32> = entries.iter().map(|&(t, _)| t).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != entries.len() {
            return Err(TopicTableError::Parse {
                line: line_no,
                reason: "duplicate topic id".into(),
            });
        }
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        if table
            .insert(doc_id.to_string(), SparseTopicVector { entries })
            .is_some()
        {
            return Err(TopicTableError::Parse {
                line: line_no,
                reason: format!("duplicate doc_id {doc_id:?}"),
            });
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(docs: &[(&str, &str)]) -> Vec<(String, String)> {
        docs.iter()
            .map(|(id, text)| (id.to_string(), text.to_string()))
            .collect()
    }

    /// All terms kept: no stopwords, single-occurrence terms allowed.
    fn lax_opts() -> PreprocessOptions {
        PreprocessOptions {
            min_token_len: 1,
            min_doc_freq: 1,
            stopwords: HashSet::new(),
        }
    }

    fn two_cluster_corpus(docs_per_side: usize, tokens_per_doc: usize) -> Corpus {
        let mut docs = Vec::new();
        for i in 0..docs_per_side {
            let text: Vec<String> = (0..tokens_per_doc)
                .map(|t| format!("alpha{:02}", (i + t) % 10))
                .collect();
            docs.push((format!("a{i}"), text.join(" ")));
        }
        for i in 0..docs_per_side {
            let text: Vec<String> = (0..tokens_per_doc)
                .map(|t| format!("bravo{:02}", (i + 2 * t) % 10))
                .collect();
            docs.push((format!("b{i}"), text.join(" ")));
        }
        build_corpus(&raw(&docs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect::<Vec<_>>()), &lax_opts())
            .unwrap()
            .0
    }

    #[test]
    fn preprocessing_filters_and_indexes() {
        let docs = raw(&[
            ("d1", "The quick brown fox jumps over the lazy dog"),
            ("d2", "A quick brown cat naps by the dog"),
            ("d3", "xy zz!"),
        ]);
        let (corpus, report) = build_corpus(&docs, &PreprocessOptions::default()).unwrap();
        // "the"/"over" are stopwords, len<3 drops "a"/"xy"/"zz",
        // min_doc_freq 2 keeps only terms shared by d1 and d2.
        assert_eq!(corpus.vocabulary, vec!["brown", "dog", "quick"]);
        assert_eq!(report.docs_in, 3);
        assert_eq!(report.docs_kept, 2);
        assert_eq!(report.docs_dropped_empty, 1);
        assert_eq!(report.total_tokens, 6);
        for doc in &corpus.documents {
            assert!(doc.tokens.iter().all(|&t| (t as usize) < corpus.vocabulary.len()));
        }
    }

    #[test]
    fn duplicate_doc_id_rejected() {
        let docs = raw(&[("d1", "one two"), ("d1", "three four")]);
        assert!(matches!(
            build_corpus(&docs, &lax_opts()),
            Err(CorpusError::DuplicateDocId { .. })
        ));
    }

    #[test]
    fn corpus_line_reader() {
        let text = "d1\thello world\n\nd2\tmore text here\n";
        let docs = read_corpus_lines(text.as_bytes()).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0], ("d1".to_string(), "hello world".to_string()));
        assert!(read_corpus_lines("no tab line".as_bytes()).is_err());
    }

    #[test]
    fn single_topic_degenerate_case() {
        let docs = raw(&[("d1", "apple apple banana"), ("d2", "banana cherry")]);
        let (corpus, _) = build_corpus(&docs, &lax_opts()).unwrap();
        let cfg = LdaConfig {
            iterations: 5,
            ..LdaConfig::with_k(1)
        };
        let model = train_lda(&corpus, &cfg).unwrap();
        for row in &model.doc_topic {
            assert_eq!(row, &vec![1.0]);
        }
        // Single topic: topic_word is the smoothed corpus-wide unigram distribution.
        let v = corpus.vocabulary.len();
        let total = corpus.total_tokens() as f64;
        let mut counts = vec![0usize; v];
        for doc in &corpus.documents {
            for &t in &doc.tokens {
                counts[t as usize] += 1;
            }
        }
        for (w, &c) in counts.iter().enumerate() {
            let expected = (c as f64 + cfg.beta) / (total + v as f64 * cfg.beta);
            assert!((model.topic_word[0][w] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_are_distributions() {
        let corpus = two_cluster_corpus(5, 8);
        let cfg = LdaConfig {
            iterations: 20,
            ..LdaConfig::with_k(3)
        };
        let model = train_lda(&corpus, &cfg).unwrap();
        for row in model.topic_word.iter().chain(&model.doc_topic) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row sums to {sum}");
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn disjoint_vocabularies_separate() {
        let corpus = two_cluster_corpus(8, 20);
        let cfg = LdaConfig {
            alpha: 0.1,
            iterations: 200,
            ..LdaConfig::with_k(2)
        };
        let model = train_lda(&corpus, &cfg).unwrap();
        let dominant: Vec<usize> = model
            .doc_topic
            .iter()
            .map(|row| if row[0] >= row[1] { 0 } else { 1 })
            .collect();
        let a_topic = dominant[0];
        for (i, id) in model.doc_ids.iter().enumerate() {
            let expected = if id.starts_with('a') { a_topic } else { 1 - a_topic };
            assert_eq!(dominant[i], expected, "doc {id}");
            assert!(
                model.doc_topic[i][expected] >= 0.9,
                "doc {id} mass {}",
                model.doc_topic[i][expected]
            );
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let corpus = two_cluster_corpus(4, 10);
        let cfg = LdaConfig {
            iterations: 30,
            ..LdaConfig::with_k(4)
        };
        let m1 = train_lda(&corpus, &cfg).unwrap();
        let m2 = train_lda(&corpus, &cfg).unwrap();
        assert_eq!(m1.topic_word, m2.topic_word);
        assert_eq!(m1.doc_topic, m2.doc_topic);
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        save_model(&m1, &mut b1).unwrap();
        save_model(&m2, &mut b2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn log_likelihood_trend_improves() {
        let corpus = two_cluster_corpus(30, 12); // 60 documents
        let cfg = LdaConfig {
            alpha: 0.5,
            iterations: 60,
            ..LdaConfig::with_k(2)
        };
        let (_, trace) = train_lda_traced(&corpus, &cfg).unwrap();
        let first: f64 = trace.log_likelihood[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = trace.log_likelihood[50..].iter().sum::<f64>() / 10.0;
        assert!(
            last >= first,
            "mean LL of last 10 sweeps {last} < first 10 {first}"
        );
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        let docs = raw(&[("d1", "one two three")]);
        let (corpus, _) = build_corpus(&docs, &lax_opts()).unwrap();
        for cfg in [
            LdaConfig { k: 0, ..LdaConfig::with_k(1) },
            LdaConfig { alpha: 0.0, ..LdaConfig::with_k(2) },
            LdaConfig { beta: -1.0, ..LdaConfig::with_k(2) },
            LdaConfig { iterations: 0, ..LdaConfig::with_k(2) },
        ] {
            assert!(matches!(
                train_lda(&corpus, &cfg),
                Err(LdaError::InvalidHyperparameter(_))
            ));
        }
        let empty = Corpus { vocabulary: vec![], documents: vec![] };
        assert!(matches!(
            train_lda(&empty, &LdaConfig::with_k(2)),
            Err(LdaError::EmptyCorpus)
        ));
    }

    #[test]
    fn fold_in_single_topic() {
        let docs = raw(&[("d1", "one two two")]);
        let (corpus, _) = build_corpus(&docs, &lax_opts()).unwrap();
        let model = train_lda(&corpus, &LdaConfig { iterations: 3, ..LdaConfig::with_k(1) }).unwrap();
        let theta = infer_doc_topics(&model, &[0, 1], 10, 7).unwrap();
        assert_eq!(theta, vec![1.0]);
    }

    #[test]
    fn fold_in_follows_concentrated_topic_word() {
        // Hand-built model: word 0 belongs to topic 1 with near-certainty.
        let model = TopicModel {
            k: 2,
            alpha: 0.01,
            beta: 0.01,
            seed: 0,
            iterations: 0,
            vocabulary: vec!["w0".into(), "w1".into()],
            topic_word: vec![vec![0.005, 0.995], vec![0.995, 0.005]],
            doc_ids: vec![],
            doc_topic: vec![],
        };
        let theta = infer_doc_topics(&model, &[0], 20, 3).unwrap();
        let argmax = if theta[0] >= theta[1] { 0 } else { 1 };
        assert_eq!(argmax, 1);
        assert!(infer_doc_topics(&model, &[], 20, 3).is_err());
        assert!(infer_doc_topics(&model, &[9], 20, 3).is_err());
    }

    #[test]
    fn fold_in_close_to_training_theta() {
        let corpus = two_cluster_corpus(8, 20);
        let cfg = LdaConfig {
            alpha: 0.1,
            iterations: 150,
            ..LdaConfig::with_k(2)
        };
        let model = train_lda(&corpus, &cfg).unwrap();
        let doc = &corpus.documents[0];
        let theta = infer_doc_topics(&model, &doc.tokens, 80, 11).unwrap();
        let l1: f64 = theta
            .iter()
            .zip(&model.doc_topic[0])
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 < 0.2, "fold-in L1 distance {l1}");
    }

    #[test]
    fn truncate_selects_and_breaks_ties() {
        let v = truncate_top_m(&[0.5, 0.3, 0.2], 2);
        assert_eq!(v.entries, vec![(0, 0.5), (1, 0.3)]);

        // Tie at the m-th place: topic 1 wins over topic 2.
        let v = truncate_top_m(&[0.4, 0.3, 0.3], 2);
        assert_eq!(v.entries, vec![(0, 0.4), (1, 0.3)]);

        // Zero-probability entries never appear even with room to spare.
        let v = truncate_top_m(&[0.0, 1.0, 0.0], 10);
        assert_eq!(v.entries, vec![(1, 1.0)]);
    }

    #[test]
    fn truncate_is_idempotent() {
        let theta = [0.05, 0.3, 0.0, 0.25, 0.4];
        let first = truncate_top_m(&theta, 3);
        let mut dense = vec![0.0; 5];
        for &(t, p) in &first.entries {
            dense[t as usize] = p;
        }
        assert_eq!(truncate_top_m(&dense, 3), first);
    }

    #[test]
    fn model_roundtrip() {
        let corpus = two_cluster_corpus(3, 6);
        let model = train_lda(&corpus, &LdaConfig { iterations: 10, ..LdaConfig::with_k(3) }).unwrap();
        let mut buf = Vec::new();
        save_model(&model, &mut buf).unwrap();
        let loaded = load_model(&buf[..]).unwrap();
        assert_eq!(loaded.k, model.k);
        assert_eq!(loaded.alpha, model.alpha);
        assert_eq!(loaded.vocabulary, model.vocabulary);
        assert_eq!(loaded.topic_word, model.topic_word);
        assert_eq!(loaded.doc_ids, model.doc_ids);
        assert_eq!(loaded.doc_topic, model.doc_topic);
    }

    #[test]
    fn model_load_rejects_bad_input() {
        assert!(matches!(
            load_model("not a model\n".as_bytes()),
            Err(ModelIoError::Parse { .. })
        ));
        let truncated = "botsense-topic-model v1\nk 2\n";
        assert!(load_model(truncated.as_bytes()).is_err());
    }

    #[test]
    fn topic_table_roundtrip() {
        let a = SparseTopicVector { entries: vec![(3, 0.6), (0, 0.4)] };
        let b = SparseTopicVector { entries: vec![(1, 1.0)] };
        let mut buf = Vec::new();
        write_topic_table(&mut buf, vec![("doc-a", &a), ("doc-b", &b)]).unwrap();
        let table = read_topic_table(&buf[..]).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table["doc-a"], a);
        assert_eq!(table["doc-b"], b);
    }

    #[test]
    fn topic_table_rejects_bad_rows() {
        assert!(read_topic_table("doc-a 3:0.5\n".as_bytes()).is_err());
        assert!(read_topic_table("doc-a\t3:0.5,3:0.2\n".as_bytes()).is_err());
        assert!(read_topic_table("doc-a\t3:1.5\n".as_bytes()).is_err());
        assert!(read_topic_table("doc-a\t3:0.5\ndoc-a\t1:0.5\n".as_bytes()).is_err());
    }
}
