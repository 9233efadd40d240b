//! The thirteen session features computable from the log alone: volume,
//! timing, repetition, response-code mix, PDF share, and the application
//! extras (unique content, multiple countries, web service).

use std::collections::HashSet;

use crate::log_ingest::ResourceKind;
use crate::sessionize::Session;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpleFeatures {
    pub total_requests: usize,
    /// Seconds between the first and the last request.
    pub session_duration: f64,
    /// Mean of the consecutive inter-request gaps.
    pub avg_time: f64,
    /// Population standard deviation of the gaps.
    pub std_time: f64,
    /// Fraction of requests whose (path, method) pair occurred earlier in the session.
    pub repeated_requests: f64,
    pub http_2xx: f64,
    pub http_3xx: f64,
    pub http_4xx: f64,
    pub http_5xx: f64,
    pub pdf_requests: f64,
    /// Number of distinct articles requested, regardless of format.
    pub unique_content: usize,
    pub multiple_countries: bool,
    pub web_service: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimpleFeatureConfig {
    /// Whether repeated-request identity includes the query string.
    pub repeat_includes_query: bool,
}

impl Default for SimpleFeatureConfig {
    fn default() -> Self {
        SimpleFeatureConfig {
            repeat_includes_query: true,
        }
    }
}

/// Extract with the default configuration.
pub fn extract_simple(session: &Session) -> SimpleFeatures {
    extract_simple_cfg(session, SimpleFeatureConfig::default())
}

pub fn extract_simple_cfg(session: &Session, cfg: SimpleFeatureConfig) -> SimpleFeatures {
    let n = session.n();
    let nf = n as f64;

    let gaps: Vec<f64> = session
        .requests
        .windows(2)
        .map(|p| (p[1].0.instant() - p[0].0.instant()).num_seconds() as f64)
        .collect();
    let (avg_time, std_time) = if gaps.is_empty() {
        (0.0, 0.0)
    } else {
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64;
        (mean, var.sqrt())
    };

    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut repeats = 0usize;
    for (entry, _) in &session.requests {
        let path = if cfg.repeat_includes_query {
            entry.path.as_str()
        } else {
            entry.path_without_query()
        };
        if !seen.insert((path, entry.method.as_str())) {
            repeats += 1;
        }
    }

    let mut buckets = [0usize; 4];
    for (entry, _) in &session.requests {
        match entry.status / 100 {
            2 => buckets[0] += 1,
            3 => buckets[1] += 1,
            4 => buckets[2] += 1,
            5 => buckets[3] += 1,
            _ => {} // 1xx falls in no bucket
        }
    }

    let pdf = session
        .requests
        .iter()
        .filter(|(_, c)| c.kind() == ResourceKind::FullTextPdf)
        .count();

    let unique_content = session
        .requests
        .iter()
        .filter_map(|(_, c)| c.article_id())
        .collect::<HashSet<_>>()
        .len();

    let countries: HashSet<&str> = session
        .requests
        .iter()
        .filter_map(|(e, _)| e.country.as_deref())
        .collect();

    SimpleFeatures {
        total_requests: n,
        session_duration: session.duration_secs() as f64,
        avg_time,
        std_time,
        repeated_requests: repeats as f64 / nf,
        http_2xx: buckets[0] as f64 / nf,
        http_3xx: buckets[1] as f64 / nf,
        http_4xx: buckets[2] as f64 / nf,
        http_5xx: buckets[3] as f64 / nf,
        pdf_requests: pdf as f64 / nf,
        unique_content,
        multiple_countries: countries.len() > 1,
        web_service: session.requests.iter().any(|(e, _)| e.via_web_service),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log_ingest::{LogEntry, ResourceClass};
    use crate::sessionize::{sessionize, test_support::entry_at};

    fn session_of(entries: Vec<(LogEntry, ResourceClass)>) -> Session {
        let mut sessions = sessionize(entries, 1800, 1);
        assert_eq!(sessions.len(), 1);
        sessions.remove(0)
    }

    #[test]
    fn spec_example_three_identical_requests() {
        let s = session_of(vec![
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 10, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 20, "/doi/abs/a"),
        ]);
        let f = extract_simple(&s);
        assert_eq!(f.total_requests, 3);
        assert_eq!(f.session_duration, 20.0);
        assert_eq!(f.avg_time, 10.0);
        assert_eq!(f.std_time, 0.0);
        assert!((f.repeated_requests - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.http_2xx, 1.0);
        assert_eq!(f.pdf_requests, 0.0);
        assert_eq!(f.unique_content, 1);
    }

    #[test]
    fn status_buckets() {
        let mut entries = vec![
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 10, "/doi/abs/b"),
            entry_at("1.1.1.1", "ua", 20, "/doi/abs/c"),
        ];
        entries[0].0.status = 200;
        entries[1].0.status = 301;
        entries[2].0.status = 404;
        let f = extract_simple(&session_of(entries));
        assert!((f.http_2xx - 1.0 / 3.0).abs() < 1e-12);
        assert!((f.http_3xx - 1.0 / 3.0).abs() < 1e-12);
        assert!((f.http_4xx - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.http_5xx, 0.0);
    }

    #[test]
    fn informational_status_falls_in_no_bucket() {
        let mut entries = vec![
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 10, "/doi/abs/b"),
            entry_at("1.1.1.1", "ua", 20, "/doi/abs/c"),
        ];
        entries[0].0.status = 101;
        let f = extract_simple(&session_of(entries));
        let total = f.http_2xx + f.http_3xx + f.http_4xx + f.http_5xx;
        assert!((total - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_country_no_web_service() {
        let mut entries = vec![
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 10, "/doi/abs/b"),
            entry_at("1.1.1.1", "ua", 20, "/doi/abs/c"),
        ];
        for (e, _) in entries.iter_mut() {
            e.country = Some("GR".into());
        }
        let f = extract_simple(&session_of(entries));
        assert!(!f.multiple_countries);
        assert!(!f.web_service);
    }

    #[test]
    fn two_countries_trigger_flag_but_absent_does_not() {
        let mut entries = vec![
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 10, "/doi/abs/b"),
            entry_at("1.1.1.1", "ua", 20, "/doi/abs/c"),
        ];
        entries[0].0.country = Some("GR".into());
        // one absent country plus one distinct present value: still single
        entries[1].0.country = None;
        entries[2].0.country = Some("GR".into());
        let f = extract_simple(&session_of(entries.clone()));
        assert!(!f.multiple_countries);

        entries[2].0.country = Some("US".into());
        let f = extract_simple(&session_of(entries));
        assert!(f.multiple_countries);
    }

    #[test]
    fn query_string_toggle_changes_repeat_identity() {
        let entries = vec![
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/a?x=1"),
            entry_at("1.1.1.1", "ua", 10, "/doi/abs/a?x=2"),
            entry_at("1.1.1.1", "ua", 20, "/doi/abs/a?x=3"),
        ];
        let s = session_of(entries);
        let with_query = extract_simple_cfg(&s, SimpleFeatureConfig { repeat_includes_query: true });
        assert_eq!(with_query.repeated_requests, 0.0);
        let without = extract_simple_cfg(&s, SimpleFeatureConfig { repeat_includes_query: false });
        assert!((without.repeated_requests - 2.0 / 3.0).abs() < 1e-12);
    }
}
