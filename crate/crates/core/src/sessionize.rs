//! Group classified log entries into user sessions keyed by (IP, user-agent),
//! split on an inactivity timeout, and drop sessions that are too short to
//! carry a signal.

use std::collections::HashMap;
use std::collections::HashSet;

use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::log_ingest::{LogEntry, ResourceClass};

pub const DEFAULT_TIMEOUT_SECS: i64 = 1800;
pub const DEFAULT_MIN_REQUESTS: usize = 3;

/// Identifies one user: exact byte equality on both fields.
/// An absent user-agent normalizes to the empty string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserKey {
    pub ip: String,
    pub user_agent: String,
}

impl UserKey {
    pub fn of(entry: &LogEntry) -> UserKey {
        UserKey {
            ip: entry.ip.clone(),
            user_agent: entry.user_agent.clone().unwrap_or_default(),
        }
    }
}

/// A time-ordered request group for one user key; the unit of classification.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub key: UserKey,
    pub requests: Vec<(LogEntry, ResourceClass)>,
}

impl Session {
    pub fn n(&self) -> usize {
        self.requests.len()
    }

    pub fn first_instant(&self) -> DateTime<Utc> {
        self.requests[0].0.instant()
    }

    pub fn last_instant(&self) -> DateTime<Utc> {
        self.requests[self.requests.len() - 1].0.instant()
    }

    pub fn duration_secs(&self) -> i64 {
        (self.last_instant() - self.first_instant()).num_seconds()
    }

    /// True when any request carries a logged-in username.
    pub fn has_username(&self) -> bool {
        self.requests.iter().any(|(e, _)| e.username.is_some())
    }

    pub fn user_agent(&self) -> &str {
        &self.key.user_agent
    }
}

/// Stable session identifier: first 8 bytes of
/// sha256(ip \0 user_agent \0 first-request unix seconds), hex-encoded.
pub fn session_id(key: &UserKey, first: DateTime<Utc>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(key.ip.as_bytes());
    hasher.update([0]);
    hasher.update(key.user_agent.as_bytes());
    hasher.update([0]);
    hasher.update(first.timestamp().to_be_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(16);
    for byte in &digest[..8] {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Split entries into sessions.
///
/// Entries are bucketed by [`UserKey`] and stably sorted by timestamp within
/// each bucket, so ties keep input order. Within a key a new session starts
/// when the gap to the previous request is strictly greater than `timeout_secs`
/// (a gap of exactly the timeout stays in-session). Sessions shorter than
/// `min_requests` are discarded after splitting. Output is ordered by
/// (key, first timestamp).
pub fn sessionize(
    entries: Vec<(LogEntry, ResourceClass)>,
    timeout_secs: i64,
    min_requests: usize,
) -> Vec<Session> {
    sessionize_indexed(&entries, timeout_secs, min_requests)
        .into_iter()
        .map(|(s, _)| s)
        .collect()
}

/// Like [`sessionize`], but each session also carries the zero-based ordinals
/// of its entries in the input slice, so sessions can be persisted as index
/// lists against the normalized log they came from.
pub fn sessionize_indexed(
    entries: &[(LogEntry, ResourceClass)],
    timeout_secs: i64,
    min_requests: usize,
) -> Vec<(Session, Vec<usize>)> {
    let mut buckets: HashMap<UserKey, Vec<usize>> = HashMap::new();
    for (i, pair) in entries.iter().enumerate() {
        buckets.entry(UserKey::of(&pair.0)).or_default().push(i);
    }

    let mut keys: Vec<UserKey> = buckets.keys().cloned().collect();
    keys.sort();

    let mut sessions = Vec::new();
    for key in keys {
        let mut bucket = buckets.remove(&key).unwrap();
        // Bucket is in input order, so the stable sort keeps ties input-ordered.
        bucket.sort_by_key(|&i| entries[i].0.instant());

        let mut current: Vec<usize> = Vec::new();
        for idx in bucket {
            let split = match current.last() {
                Some(&prev) => {
                    (entries[idx].0.instant() - entries[prev].0.instant()).num_seconds()
                        > timeout_secs
                }
                None => false,
            };
            if split {
                emit(&key, std::mem::take(&mut current), entries, min_requests, &mut sessions);
            }
            current.push(idx);
        }
        emit(&key, current, entries, min_requests, &mut sessions);
    }
    sessions
}

fn emit(
    key: &UserKey,
    indexes: Vec<usize>,
    entries: &[(LogEntry, ResourceClass)],
    min_requests: usize,
    out: &mut Vec<(Session, Vec<usize>)>,
) {
    if indexes.len() >= min_requests {
        let requests: Vec<(LogEntry, ResourceClass)> =
            indexes.iter().map(|&i| entries[i].clone()).collect();
        let first = requests[0].0.instant();
        let session = Session {
            id: session_id(key, first),
            key: key.clone(),
            requests,
        };
        out.push((session, indexes));
    }
}

/// Dataset-level statistics over a session list.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub session_count: usize,
    pub mean_requests: f64,
    pub median_requests: f64,
    pub mean_duration_secs: f64,
    pub median_duration_secs: f64,
    pub mean_gap_secs: f64,
    pub unique_articles: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no sessions to summarize")]
    EmptyInput,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// The request-count, duration, gap, and unique-article statistics of a run.
pub fn session_stats(sessions: &[Session]) -> Result<SummaryStats, StatsError> {
    if sessions.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let mut counts: Vec<f64> = sessions.iter().map(|s| s.n() as f64).collect();
    let mut durations: Vec<f64> = sessions.iter().map(|s| s.duration_secs() as f64).collect();
    counts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    durations.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut gap_sum = 0.0;
    let mut gap_count = 0usize;
    let mut articles: HashSet<&str> = HashSet::new();
    for s in sessions {
        for pair in s.requests.windows(2) {
            gap_sum += (pair[1].0.instant() - pair[0].0.instant()).num_seconds() as f64;
            gap_count += 1;
        }
        for (_, class) in &s.requests {
            if let Some(id) = class.article_id() {
                articles.insert(id);
            }
        }
    }

    let n = sessions.len() as f64;
    Ok(SummaryStats {
        session_count: sessions.len(),
        mean_requests: counts.iter().sum::<f64>() / n,
        median_requests: median(&counts),
        mean_duration_secs: durations.iter().sum::<f64>() / n,
        median_duration_secs: median(&durations),
        mean_gap_secs: if gap_count == 0 {
            0.0
        } else {
            gap_sum / gap_count as f64
        },
        unique_articles: articles.len(),
    })
}

#[derive(Debug, Error)]
pub enum SessionFileError {
    #[error("session file line {line}: {msg}")]
    BadLine { line: usize, msg: String },
    #[error("session file line {line}: entry index {index} out of range (log has {len} entries)")]
    IndexOutOfRange { line: usize, index: usize, len: usize },
    #[error(
        "session file line {line}: recorded id {recorded} does not match the log \
         (recomputed {recomputed}); the session file was built from a different log"
    )]
    IdMismatch { line: usize, recorded: String, recomputed: String },
    #[error("reading session file: {0}")]
    Io(#[from] std::io::Error),
}

fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Persist sessions as one line each: id, ip, user-agent, and the
/// comma-separated ordinals of the session's entries in the normalized log.
/// The header records the split parameters so reruns can verify provenance.
pub fn write_session_file<W: std::io::Write>(
    w: &mut W,
    sessions: &[(Session, Vec<usize>)],
    timeout_secs: i64,
    min_requests: usize,
) -> std::io::Result<()> {
    writeln!(w, "# botsense sessions v1")?;
    writeln!(w, "# timeout_secs={timeout_secs} min_requests={min_requests}")?;
    for (session, indexes) in sessions {
        let ordinals: Vec<String> = indexes.iter().map(|i| i.to_string()).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            session.id,
            escape_field(&session.key.ip),
            escape_field(&session.key.user_agent),
            ordinals.join(",")
        )?;
    }
    Ok(())
}

/// Rebuild sessions from a session file against the same normalized log it was
/// written from. Each recorded id is recomputed from the log and must match,
/// which catches a session file paired with the wrong log.
pub fn read_session_file<R: std::io::BufRead>(
    r: R,
    entries: &[(LogEntry, ResourceClass)],
) -> Result<Vec<Session>, SessionFileError> {
    let mut sessions = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(SessionFileError::BadLine {
                line: lineno,
                msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let key = UserKey {
            ip: unescape_field(fields[1]),
            user_agent: unescape_field(fields[2]),
        };
        let mut requests = Vec::new();
        for part in fields[3].split(',') {
            let index: usize = part.parse().map_err(|_| SessionFileError::BadLine {
                line: lineno,
                msg: format!("bad entry index {part:?}"),
            })?;
            let pair = entries.get(index).ok_or(SessionFileError::IndexOutOfRange {
                line: lineno,
                index,
                len: entries.len(),
            })?;
            requests.push(pair.clone());
        }
        if requests.is_empty() {
            return Err(SessionFileError::BadLine { line: lineno, msg: "empty session".into() });
        }
        let recomputed = session_id(&key, requests[0].0.instant());
        if recomputed != fields[0] {
            return Err(SessionFileError::IdMismatch {
                line: lineno,
                recorded: fields[0].to_string(),
                recomputed,
            });
        }
        sessions.push(Session { id: recomputed, key, requests });
    }
    Ok(sessions)
}


#[cfg(test)]
mod tests {
    use super::test_support::entry_at;
    use super::*;

    #[test]
    fn timeout_splits_and_min_requests_filters() {
        // gaps [10 s, 29 min, 31 min, 5 s]: the 31-minute gap splits, leaving
        // groups of 3 and 2; the 2-request group is dropped.
        let times = [0, 10, 10 + 29 * 60, 10 + 29 * 60 + 31 * 60, 10 + 29 * 60 + 31 * 60 + 5];
        let entries = times
            .iter()
            .map(|&t| entry_at("1.1.1.1", "ua", t, "/doi/abs/a"))
            .collect();
        let sessions = sessionize(entries, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS);
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].n(), 3);
    }

    #[test]
    fn single_request_yields_no_session() {
        let entries = vec![entry_at("1.1.1.1", "ua", 0, "/doi/abs/a")];
        assert!(sessionize(entries, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS).is_empty());
    }

    #[test]
    fn gap_of_exactly_timeout_stays_in_session() {
        let entries = vec![
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 10, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 10 + 1800, "/doi/abs/a"),
        ];
        let sessions = sessionize(entries, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS);
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].n(), 3);
    }

    #[test]
    fn keys_differ_on_user_agent() {
        let mut entries = Vec::new();
        for t in [0, 10, 20] {
            entries.push(entry_at("1.1.1.1", "ua-a", t, "/doi/abs/a"));
            entries.push(entry_at("1.1.1.1", "ua-b", t, "/doi/abs/b"));
        }
        let sessions = sessionize(entries, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS);
        assert_eq!(sessions.len(), 2);
        assert_ne!(sessions[0].key, sessions[1].key);
    }

    #[test]
    fn ids_are_deterministic() {
        let make = || {
            let entries = vec![
                entry_at("1.1.1.1", "ua", 0, "/doi/abs/a"),
                entry_at("1.1.1.1", "ua", 10, "/doi/abs/a"),
                entry_at("1.1.1.1", "ua", 20, "/doi/abs/a"),
            ];
            sessionize(entries, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS)
        };
        let a = make();
        let b = make();
        assert_eq!(a[0].id, b[0].id);
        assert_eq!(a[0].id.len(), 16);
    }

    #[test]
    fn stats_mean_median() {
        let mut entries = Vec::new();
        for (i, count) in [3usize, 4, 5].iter().enumerate() {
            for t in 0..*count {
                entries.push(entry_at(&format!("10.0.0.{i}"), "ua", t as i64 * 10, "/doi/abs/a"));
            }
        }
        let sessions = sessionize(entries, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS);
        let stats = session_stats(&sessions).unwrap();
        assert_eq!(stats.session_count, 3);
        assert!((stats.mean_requests - 4.0).abs() < 1e-12);
        assert!((stats.median_requests - 4.0).abs() < 1e-12);
    }

    #[test]
    fn stats_zero_duration_and_unique_articles() {
        let entries = vec![
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/b"),
            entry_at("2.2.2.2", "ua", 0, "/doi/abs/b"),
            entry_at("2.2.2.2", "ua", 0, "/doi/abs/c"),
            entry_at("2.2.2.2", "ua", 0, "/doi/abs/c"),
        ];
        let sessions = sessionize(entries, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS);
        let stats = session_stats(&sessions).unwrap();
        assert_eq!(stats.mean_duration_secs, 0.0);
        assert_eq!(stats.unique_articles, 3);
    }

    #[test]
    fn stats_empty_is_error() {
        assert_eq!(session_stats(&[]), Err(StatsError::EmptyInput));
    }

    #[test]
    fn indexed_ordinals_point_at_input_entries() {
        // Interleave two users so ordinals are non-contiguous.
        let mut entries = Vec::new();
        for t in [0i64, 10, 20] {
            entries.push(entry_at("1.1.1.1", "ua-a", t, "/doi/abs/a"));
            entries.push(entry_at("2.2.2.2", "ua-b", t, "/doi/abs/b"));
        }
        let indexed = sessionize_indexed(&entries, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS);
        assert_eq!(indexed.len(), 2);
        for (session, indexes) in &indexed {
            assert_eq!(session.n(), indexes.len());
            for (req, &i) in session.requests.iter().zip(indexes) {
                assert_eq!(req.0.ip, entries[i].0.ip);
                assert_eq!(req.0.instant(), entries[i].0.instant());
            }
        }
        assert_eq!(indexed[0].1, vec![0, 2, 4]);
        assert_eq!(indexed[1].1, vec![1, 3, 5]);
    }

    #[test]
    fn session_file_roundtrip() {
        let mut entries = Vec::new();
        for t in [0i64, 10, 20, 3000, 3010, 3020] {
            entries.push(entry_at("1.1.1.1", "ua with\ttab", t, "/doi/abs/a"));
        }
        let indexed = sessionize_indexed(&entries, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS);
        assert_eq!(indexed.len(), 2);

        let mut buf = Vec::new();
        write_session_file(&mut buf, &indexed, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS)
            .unwrap();
        let back = read_session_file(buf.as_slice(), &entries).unwrap();
        assert_eq!(back.len(), indexed.len());
        for (got, (want, _)) in back.iter().zip(&indexed) {
            assert_eq!(got.id, want.id);
            assert_eq!(got.key, want.key);
            assert_eq!(got.n(), want.n());
            assert_eq!(got.first_instant(), want.first_instant());
        }
    }

    #[test]
    fn session_file_rejects_mismatched_log() {
        let entries = vec![
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 10, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 20, "/doi/abs/a"),
        ];
        let indexed = sessionize_indexed(&entries, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS);
        let mut buf = Vec::new();
        write_session_file(&mut buf, &indexed, DEFAULT_TIMEOUT_SECS, DEFAULT_MIN_REQUESTS)
            .unwrap();

        // Same shape, different timestamps: ids no longer match.
        let other = vec![
            entry_at("1.1.1.1", "ua", 100, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 110, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 120, "/doi/abs/a"),
        ];
        let err = read_session_file(buf.as_slice(), &other).unwrap_err();
        assert!(matches!(err, SessionFileError::IdMismatch { .. }));

        let err = read_session_file(buf.as_slice(), &entries[..2]).unwrap_err();
        assert!(matches!(err, SessionFileError::IndexOutOfRange { .. }));
    }
}
