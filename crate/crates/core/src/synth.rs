//! Synthetic benchmark generator: a clustered article corpus plus human and
//! bot traffic over it. Humans walk mostly inside one topical cluster with
//! heavy-tailed think times; bots sweep the whole corpus with near-constant
//! gaps. The emitted log parses under the app-extended dialect and carries
//! ground truth on the side, so the full pipeline can be checked end to end.

use std::collections::HashMap;
use std::io::{self, BufRead};

use chrono::{DateTime, FixedOffset, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use thiserror::Error;

use crate::labeling::Verdict;
use crate::log_ingest::{render_line, LogDialect, LogEntry};
use crate::sessionize::{session_id, UserKey};

const HUMAN_UAS: &[&str] = &[
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/91.0.4472.124 Safari/537.36",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/14.1.1 Safari/605.1.15",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64; rv:89.0) Gecko/20100101 Firefox/89.0",
    "Mozilla/5.0 (X11; Linux x86_64; rv:78.0) Gecko/20100101 Firefox/78.0",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/91.0.4472.124 Safari/537.36 Edg/91.0.864.67",
    "Mozilla/5.0 (iPhone; CPU iPhone OS 14_6 like Mac OS X) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/14.1.1 Mobile/15E148 Safari/604.1",
];

const BOT_UAS: &[&str] = &[
    "Mozilla/5.0 (compatible; Googlebot/2.1; +http://www.google.com/bot.html)",
    "Mozilla/5.0 (compatible; bingbot/2.0; +http://www.bing.com/bingbot.htm)",
    "Mozilla/5.0 (compatible; AhrefsBot/7.0; +http://ahrefs.com/robot/)",
    "Mozilla/5.0 (compatible; SemrushBot/6~bl; +http://www.semrush.com/bot.html)",
    "curl/7.64.1",
    "Wget/1.19.5 (linux-gnu)",
    "python-requests/2.22.0",
    "Scrapy/2.5.0 (+https://scrapy.org)",
    "okhttp/3.12.1",
    "Apache-HttpClient/4.5.2 (Java/1.8.0_151)",
];

const COUNTRIES: &[&str] = &["US", "GB", "DE", "GR", "FR", "NL", "CN", "JP"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub vocab_size: usize,
    /// Topical clusters with disjoint vocabularies; documents and terms are
    /// assigned round-robin by index.
    pub n_clusters: usize,
    /// Tokens per generated document.
    pub doc_length: usize,
    pub n_human_sessions: usize,
    pub n_bot_sessions: usize,
    /// Probability a human's next page stays in their home cluster.
    pub human_cluster_stickiness: f64,
    /// Probability a bot page draw is uniform over the whole corpus
    /// (otherwise it stays in the bot's home cluster).
    pub bot_uniformity: f64,
    /// Fraction of human sessions with a logged-in username.
    pub human_login_fraction: f64,
    /// Emit browser user-agents for bots so they land in the unlabeled pool.
    pub mask_bots: bool,
    pub human_session_min: usize,
    pub human_session_max: usize,
    pub bot_session_min: usize,
    pub bot_session_max: usize,
    /// Median of the lognormal human think time, seconds.
    pub human_gap_median_secs: f64,
    /// Lognormal shape (sigma in log space) of the human think time.
    pub human_gap_sigma: f64,
    pub bot_gap_secs: f64,
    /// Uniform jitter added to the bot gap, seconds.
    pub bot_gap_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_docs: 1000,
            vocab_size: 2000,
            n_clusters: 5,
            doc_length: 60,
            n_human_sessions: 500,
            n_bot_sessions: 500,
            human_cluster_stickiness: 0.9,
            bot_uniformity: 1.0,
            human_login_fraction: 1.0,
            mask_bots: false,
            human_session_min: 5,
            human_session_max: 30,
            bot_session_min: 15,
            bot_session_max: 60,
            human_gap_median_secs: 25.0,
            human_gap_sigma: 1.2,
            bot_gap_secs: 4.0,
            bot_gap_jitter: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("truth file I/O: {0}")]
    Io(#[from] io::Error),
    #[error("truth file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

fn validate(cfg: &SynthConfig) -> Result<(), SynthError> {
    let fail = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
    if cfg.n_clusters < 1 || cfg.n_docs < cfg.n_clusters {
        return fail("need n_docs >= n_clusters >= 1");
    }
    if cfg.vocab_size < cfg.n_clusters {
        return fail("need vocab_size >= n_clusters");
    }
    if cfg.doc_length < 1 {
        return fail("doc_length must be >= 1");
    }
    if cfg.n_human_sessions + cfg.n_bot_sessions < 1 {
        return fail("need at least one session");
    }
    for (name, p) in [
        ("human_cluster_stickiness", cfg.human_cluster_stickiness),
        ("bot_uniformity", cfg.bot_uniformity),
        ("human_login_fraction", cfg.human_login_fraction),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return fail(&format!("{name} must be in [0, 1]"));
        }
    }
    // Sessions below the sessionizer's default floor would vanish downstream.
    if cfg.human_session_min < 3 || cfg.bot_session_min < 3 {
        return fail("session length minimums must be >= 3");
    }
    if cfg.human_session_max < cfg.human_session_min || cfg.bot_session_max < cfg.bot_session_min {
        return fail("session length max must be >= min");
    }
    if !(cfg.human_gap_median_secs >= 1.0) || !(cfg.human_gap_sigma > 0.0) {
        return fail("human gap parameters must be positive");
    }
    if !(cfg.bot_gap_secs >= 1.0) || cfg.bot_gap_jitter < 0.0 {
        return fail("bot gap must be >= 1 with non-negative jitter");
    }
    Ok(())
}

/// The article id of document `index`.
pub fn doc_id_for(index: usize) -> String {
    format!("10.5555/syn{index:05}")
}

/// Inverse of [`doc_id_for`].
pub fn doc_index_of(article_id: &str) -> Option<usize> {
    article_id.strip_prefix("10.5555/syn")?.parse().ok()
}

/// Cluster of document or term `index` under the round-robin assignment.
pub fn cluster_of(index: usize, n_clusters: usize) -> usize {
    index % n_clusters
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SynthStats {
    pub documents: usize,
    pub human_sessions: usize,
    pub bot_sessions: usize,
    pub requests: usize,
    pub logged_in_humans: usize,
}

impl SynthStats {
    pub fn render(&self) -> String {
        format!(
            "generated {} documents, {} human + {} bot sessions, {} requests ({} humans logged in)",
            self.documents, self.human_sessions, self.bot_sessions, self.requests, self.logged_in_humans
        )
    }
}

pub struct SynthOutput {
    /// `doc_id TAB text` lines for the corpus builder.
    pub corpus_text: String,
    /// App-dialect access log lines in timestamp order.
    pub log_text: String,
    /// `session_id TAB label TAB user_agent` ground-truth lines.
    pub truth_text: String,
    pub stats: SynthStats,
}

/// Uniform member of `cluster` among `n` round-robin-assigned indexes.
fn draw_in_cluster(rng: &mut ChaCha8Rng, n: usize, n_clusters: usize, cluster: usize) -> usize {
    let count = n / n_clusters + usize::from(cluster < n % n_clusters);
    cluster + n_clusters * rng.gen_range(0..count)
}

fn weighted<'a, T>(rng: &mut ChaCha8Rng, table: &'a [(T, f64)]) -> &'a T {
    let total: f64 = table.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    for (item, w) in table {
        u -= w;
        if u <= 0.0 {
            return item;
        }
    }
    &table[table.len() - 1].0
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Corpus: each document draws its tokens uniformly from its cluster's
    // share of the vocabulary, so cluster vocabularies are disjoint.
    let mut corpus_text = String::new();
    for d in 0..cfg.n_docs {
        let cluster = cluster_of(d, cfg.n_clusters);
        let mut tokens = Vec::with_capacity(cfg.doc_length);
        for _ in 0..cfg.doc_length {
            let term = draw_in_cluster(&mut rng, cfg.vocab_size, cfg.n_clusters, cluster);
            tokens.push(format!("syn{term:05}"));
        }
        corpus_text.push_str(&doc_id_for(d));
        corpus_text.push('\t');
        corpus_text.push_str(&tokens.join(" "));
        corpus_text.push('\n');
    }

    let base = FixedOffset::east_opt(0)
        .unwrap()
        .with_ymd_and_hms(2024, 3, 1, 0, 0, 0)
        .unwrap();
    let human_gap = LogNormal::new(cfg.human_gap_median_secs.ln(), cfg.human_gap_sigma)
        .expect("validated lognormal parameters");

    let total_sessions = cfg.n_human_sessions + cfg.n_bot_sessions;
    let mut entries: Vec<(i64, usize, LogEntry)> = Vec::new();
    let mut truth_text = String::from("# botsense synth truth v1\n");
    let mut stats = SynthStats {
        documents: cfg.n_docs,
        ..SynthStats::default()
    };

    let mut humans_emitted = 0usize;
    let mut bots_emitted = 0usize;
    let mut seq = 0usize;
    for i in 0..total_sessions {
        // Alternate classes along the timeline so both appear on each side
        // of a time-ordered split.
        let is_human = if humans_emitted >= cfg.n_human_sessions {
            false
        } else if bots_emitted >= cfg.n_bot_sessions {
            true
        } else {
            i % 2 == 0
        };

        let ip = format!(
            "10.{}.{}.{}",
            (i >> 16) & 0xff,
            (i >> 8) & 0xff,
            i & 0xff
        );
        let ua = if is_human || cfg.mask_bots {
            HUMAN_UAS[rng.gen_range(0..HUMAN_UAS.len())]
        } else {
            BOT_UAS[rng.gen_range(0..BOT_UAS.len())]
        };
        let home_cluster = rng.gen_range(0..cfg.n_clusters);
        let length = if is_human {
            rng.gen_range(cfg.human_session_min..=cfg.human_session_max)
        } else {
            rng.gen_range(cfg.bot_session_min..=cfg.bot_session_max)
        };
        let username = if is_human && rng.gen::<f64>() < cfg.human_login_fraction {
            stats.logged_in_humans += 1;
            Some(format!("user{humans_emitted:04}"))
        } else {
            None
        };
        let country = COUNTRIES[rng.gen_range(0..COUNTRIES.len())];
        // A slice of bot traffic hops between countries mid-session.
        let second_country = if !is_human && rng.gen::<f64>() < 0.15 {
            Some(COUNTRIES[rng.gen_range(0..COUNTRIES.len())])
        } else {
            None
        };

        let start = base + chrono::Duration::seconds(i as i64 * 137 + rng.gen_range(0..60) as i64);
        let mut at = start;
        let mut prev_path: Option<String> = None;
        for r in 0..length {
            if r > 0 {
                let gap = if is_human {
                    // Clamp below the session timeout so a generated session
                    // never splits during sessionization.
                    (human_gap.sample(&mut rng).round() as i64).clamp(1, 1700)
                } else {
                    let jitter = rng.gen_range(-cfg.bot_gap_jitter..=cfg.bot_gap_jitter);
                    ((cfg.bot_gap_secs + jitter).round() as i64).max(1)
                };
                at += chrono::Duration::seconds(gap);
            }

            let doc = if is_human {
                if rng.gen::<f64>() < cfg.human_cluster_stickiness || cfg.n_clusters == 1 {
                    draw_in_cluster(&mut rng, cfg.n_docs, cfg.n_clusters, home_cluster)
                } else {
                    let other = (home_cluster
                        + 1
                        + rng.gen_range(0..cfg.n_clusters - 1))
                        % cfg.n_clusters;
                    draw_in_cluster(&mut rng, cfg.n_docs, cfg.n_clusters, other)
                }
            } else if rng.gen::<f64>() < cfg.bot_uniformity {
                rng.gen_range(0..cfg.n_docs)
            } else {
                draw_in_cluster(&mut rng, cfg.n_docs, cfg.n_clusters, home_cluster)
            };

            let kind_table: &[(&str, f64)] = if is_human {
                &[("abs", 0.45), ("full", 0.30), ("pdf", 0.15), ("ref", 0.05), ("suppl", 0.05)]
            } else {
                &[("abs", 0.35), ("pdf", 0.40), ("full", 0.15), ("ref", 0.05), ("suppl", 0.05)]
            };
            let kind = *weighted(&mut rng, kind_table);
            let path = format!("/doi/{kind}/{}", doc_id_for(doc));

            let status_table: &[(u16, f64)] = if is_human {
                &[(200, 0.96), (302, 0.02), (404, 0.015), (500, 0.005)]
            } else {
                &[(200, 0.90), (404, 0.06), (302, 0.03), (500, 0.01)]
            };
            let status = *weighted(&mut rng, status_table);

            let referer = if is_human {
                match &prev_path {
                    Some(p) => Some(format!("https://journals.example.org{p}")),
                    None if rng.gen::<f64>() < 0.5 => {
                        Some("https://scholar.example.com/".to_string())
                    }
                    None => None,
                }
            } else {
                None
            };

            let row_country = match second_country {
                Some(c) if r % 2 == 1 => c,
                _ => country,
            };
            let via_web_service = if is_human {
                rng.gen::<f64>() < 0.01
            } else {
                rng.gen::<f64>() < 0.2
            };

            let entry = LogEntry {
                ip: ip.clone(),
                timestamp: at,
                method: "GET".to_string(),
                path: path.clone(),
                protocol: "HTTP/1.1".to_string(),
                status,
                bytes: Some(rng.gen_range(2_000..90_000)),
                referer,
                user_agent: Some(ua.to_string()),
                country: Some(row_country.to_string()),
                username: username.clone(),
                via_web_service,
            };
            entries.push((at.with_timezone(&Utc).timestamp(), seq, entry));
            seq += 1;
            prev_path = Some(path);
        }

        let key = UserKey {
            ip: ip.clone(),
            user_agent: ua.to_string(),
        };
        let sid = session_id(&key, start.with_timezone(&Utc));
        let label = if is_human { Verdict::Human } else { Verdict::Robot };
        truth_text.push_str(&format!("{sid}\t{}\t{ua}\n", label.name()));

        if is_human {
            humans_emitted += 1;
        } else {
            bots_emitted += 1;
        }
        stats.requests += length;
    }
    stats.human_sessions = humans_emitted;
    stats.bot_sessions = bots_emitted;

    entries.sort_by_key(|&(ts, seq, _)| (ts, seq));
    let mut log_text = String::new();
    for (_, _, entry) in &entries {
        log_text.push_str(&render_line(entry, LogDialect::CombinedWithAppFields));
        log_text.push('\n');
    }

    Ok(SynthOutput {
        corpus_text,
        log_text,
        truth_text,
        stats,
    })
}

/// Read a ground-truth file back into a session_id → label map.
pub fn read_truth<R: BufRead>(reader: R) -> Result<HashMap<String, Verdict>, SynthError> {
    let mut map = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (sid, label) = match (parts.next(), parts.next()) {
            (Some(s), Some(l)) => (s, l),
            _ => {
                return Err(SynthError::Parse {
                    line: line_no,
                    reason: "expected `session_id<TAB>label<TAB>user_agent`".into(),
                })
            }
        };
        let verdict = Verdict::parse_name(label).ok_or_else(|| SynthError::Parse {
            line: line_no,
            reason: format!("bad label {label:?}"),
        })?;
        if map.insert(sid.to_string(), verdict).is_some() {
            return Err(SynthError::Parse {
                line: line_no,
                reason: format!("duplicate session id {sid:?}"),
            });
        }
    }
    Ok(map)
}

/// Base timestamp of generated traffic (handy for tests).
pub fn base_time() -> DateTime<FixedOffset> {
    FixedOffset::east_opt(0)
        .unwrap()
        .with_ymd_and_hms(2024, 3, 1, 0, 0, 0)
        .unwrap()
}
