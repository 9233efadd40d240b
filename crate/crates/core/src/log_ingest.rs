//! Access-log ingestion: parse raw log lines into structured records and keep
//! only the content requests that carry semantic value.
//!
//! The supported grammar is the combined log format, optionally extended with
//! three trailing application columns (country, username, web-service flag),
//! each quoted like the referer/user-agent fields. `-` placeholders map to
//! absent values throughout.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, FixedOffset, Utc};
use flate2::read::MultiGzDecoder;
use regex::Regex;
use thiserror::Error;

/// Which columns a log file carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogDialect {
    /// Plain combined log format.
    #[default]
    Combined,
    /// Combined log format followed by `"country" "username" "webservice"`.
    CombinedWithAppFields,
}

impl LogDialect {
    pub fn parse_name(name: &str) -> Option<LogDialect> {
        match name {
            "combined" => Some(LogDialect::Combined),
            "combined-app" => Some(LogDialect::CombinedWithAppFields),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LogDialect::Combined => "combined",
            LogDialect::CombinedWithAppFields => "combined-app",
        }
    }
}

/// One parsed access-log record.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub ip: String,
    /// Instant with the original zone offset retained; compare via [`LogEntry::instant`].
    pub timestamp: DateTime<FixedOffset>,
    pub method: String,
    /// Request path including any query string.
    pub path: String,
    pub protocol: String,
    pub status: u16,
    /// `-` in the size column means unknown, not zero.
    pub bytes: Option<u64>,
    pub referer: Option<String>,
    pub user_agent: Option<String>,
    pub country: Option<String>,
    pub username: Option<String>,
    pub via_web_service: bool,
}

impl LogEntry {
    /// The UTC instant used for ordering and gap computation.
    pub fn instant(&self) -> DateTime<Utc> {
        self.timestamp.with_timezone(&Utc)
    }

    /// Path without its query string.
    pub fn path_without_query(&self) -> &str {
        match self.path.split_once('?') {
            Some((p, _)) => p,
            None => &self.path,
        }
    }
}

/// Article page categories retained by the content filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResourceKind {
    AbstractHtml,
    FullTextHtml,
    FullTextPdf,
    ReferencesHtml,
    SupplementaryHtml,
    Other,
}

impl ResourceKind {
    pub fn parse_name(name: &str) -> Option<ResourceKind> {
        match name {
            "abstract" => Some(ResourceKind::AbstractHtml),
            "fulltext_html" => Some(ResourceKind::FullTextHtml),
            "fulltext_pdf" => Some(ResourceKind::FullTextPdf),
            "references" => Some(ResourceKind::ReferencesHtml),
            "supplementary" => Some(ResourceKind::SupplementaryHtml),
            "other" => Some(ResourceKind::Other),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ResourceKind::AbstractHtml => "abstract",
            ResourceKind::FullTextHtml => "fulltext_html",
            ResourceKind::FullTextPdf => "fulltext_pdf",
            ResourceKind::ReferencesHtml => "references",
            ResourceKind::SupplementaryHtml => "supplementary",
            ResourceKind::Other => "other",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Resource category of a request plus the article it refers to.
///
/// `article_id` is present exactly when the kind is not [`ResourceKind::Other`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResourceClass {
    kind: ResourceKind,
    article_id: Option<String>,
}

impl ResourceClass {
    pub fn article(kind: ResourceKind, article_id: impl Into<String>) -> ResourceClass {
        assert!(kind != ResourceKind::Other, "Other carries no article id");
        ResourceClass {
            kind,
            article_id: Some(article_id.into()),
        }
    }

    pub fn other() -> ResourceClass {
        ResourceClass {
            kind: ResourceKind::Other,
            article_id: None,
        }
    }

    pub fn kind(&self) -> ResourceKind {
        self.kind
    }

    pub fn article_id(&self) -> Option<&str> {
        self.article_id.as_deref()
    }

    pub fn is_other(&self) -> bool {
        self.kind == ResourceKind::Other
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    /// A skippable bad record; `column` names the field that failed.
    #[error("malformed line at {column}: {reason}")]
    MalformedLine { column: &'static str, reason: String },
}

impl ParseError {
    fn at(column: &'static str, reason: impl Into<String>) -> ParseError {
        ParseError::MalformedLine {
            column,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("invalid rule at line {line}: {reason}")]
    InvalidRule { line: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error after {read} lines: {source}")]
    Io {
        read: u64,
        #[source]
        source: io::Error,
        report: IngestReport,
    },
}

/// Cursor over the remaining text of one log line.
struct Scanner<'a> {
    rest: &'a str,
}

impl<'a> Scanner<'a> {
    fn new(line: &'a str) -> Scanner<'a> {
        Scanner { rest: line }
    }

    fn skip_spaces(&mut self) {
        self.rest = self.rest.trim_start_matches(' ');
    }

    /// Next run of non-space characters.
    fn token(&mut self, column: &'static str) -> Result<&'a str, ParseError> {
        self.skip_spaces();
        if self.rest.is_empty() {
            return Err(ParseError::at(column, "unexpected end of line"));
        }
        let end = self.rest.find(' ').unwrap_or(self.rest.len());
        let (tok, rest) = self.rest.split_at(end);
        self.rest = rest;
        Ok(tok)
    }

    /// `[...]`-delimited field.
    fn bracketed(&mut self, column: &'static str) -> Result<&'a str, ParseError> {
        self.skip_spaces();
        let inner = self
            .rest
            .strip_prefix('[')
            .ok_or_else(|| ParseError::at(column, "expected '['"))?;
        let end = inner
            .find(']')
            .ok_or_else(|| ParseError::at(column, "missing ']'"))?;
        self.rest = &inner[end + 1..];
        Ok(&inner[..end])
    }

    /// `"..."`-delimited field. Quotes inside values are not supported by the grammar.
    fn quoted(&mut self, column: &'static str) -> Result<&'a str, ParseError> {
        self.skip_spaces();
        let inner = self
            .rest
            .strip_prefix('"')
            .ok_or_else(|| ParseError::at(column, "expected '\"'"))?;
        let end = inner
            .find('"')
            .ok_or_else(|| ParseError::at(column, "missing closing '\"'"))?;
        self.rest = &inner[end + 1..];
        Ok(&inner[..end])
    }

    fn at_end(&self) -> bool {
        self.rest.trim_start_matches(' ').is_empty()
    }
}

fn dash_to_none(s: &str) -> Option<String> {
    if s == "-" {
        None
    } else {
        Some(s.to_string())
    }
}

const CLF_TIME_FORMAT: &str = "%d/%b/%Y:%H:%M:%S %z";

/// Parse one record of the configured dialect.
pub fn parse_line(line: &str, dialect: LogDialect) -> Result<LogEntry, ParseError> {
    let mut sc = Scanner::new(line);

    let ip = sc.token("ip")?.to_string();
    if ip.is_empty() {
        return Err(ParseError::at("ip", "empty"));
    }
    // identd and authuser are parsed and discarded
    sc.token("identd")?;
    sc.token("authuser")?;

    let time_str = sc.bracketed("timestamp")?;
    let timestamp = DateTime::parse_from_str(time_str, CLF_TIME_FORMAT)
        .map_err(|e| ParseError::at("timestamp", e.to_string()))?;

    let request = sc.quoted("request")?;
    let mut req_parts = request.split(' ');
    let method = req_parts
        .next()
        .filter(|m| !m.is_empty())
        .ok_or_else(|| ParseError::at("request", "missing method"))?
        .to_string();
    let path = req_parts
        .next()
        .ok_or_else(|| ParseError::at("request", "missing path"))?
        .to_string();
    let protocol = req_parts
        .next()
        .ok_or_else(|| ParseError::at("request", "missing protocol"))?
        .to_string();
    if req_parts.next().is_some() {
        return Err(ParseError::at("request", "trailing tokens in request"));
    }

    let status_str = sc.token("status")?;
    let status: u16 = status_str
        .parse()
        .map_err(|_| ParseError::at("status", format!("not a number: {status_str}")))?;
    if !(100..=599).contains(&status) {
        return Err(ParseError::at("status", "out of range"));
    }

    let bytes_str = sc.token("bytes")?;
    let bytes = if bytes_str == "-" {
        None
    } else {
        Some(
            bytes_str
                .parse()
                .map_err(|_| ParseError::at("bytes", format!("not a number: {bytes_str}")))?,
        )
    };

    let referer = dash_to_none(sc.quoted("referer")?);
    let user_agent = dash_to_none(sc.quoted("user_agent")?);

    let (country, username, via_web_service) = match dialect {
        LogDialect::Combined => (None, None, false),
        LogDialect::CombinedWithAppFields => {
            let country = dash_to_none(sc.quoted("country")?);
            let username = dash_to_none(sc.quoted("username")?);
            let ws = match sc.quoted("web_service")? {
                "-" | "0" => false,
                "1" => true,
                other => {
                    return Err(ParseError::at(
                        "web_service",
                        format!("expected 0/1/-, got {other}"),
                    ))
                }
            };
            (country, username, ws)
        }
    };

    if !sc.at_end() {
        return Err(ParseError::at("end", "trailing content"));
    }

    Ok(LogEntry {
        ip,
        timestamp,
        method,
        path,
        protocol,
        status,
        bytes,
        referer,
        user_agent,
        country,
        username,
        via_web_service,
    })
}

fn quote_opt(v: Option<&str>) -> String {
    format!("\"{}\"", v.unwrap_or("-"))
}

/// Render an entry back into the dialect grammar. Inverse of [`parse_line`].
pub fn render_line(entry: &LogEntry, dialect: LogDialect) -> String {
    let bytes = match entry.bytes {
        Some(b) => b.to_string(),
        None => "-".to_string(),
    };
    let mut line = format!(
        "{} - - [{}] \"{} {} {}\" {} {} {} {}",
        entry.ip,
        entry.timestamp.format(CLF_TIME_FORMAT),
        entry.method,
        entry.path,
        entry.protocol,
        entry.status,
        bytes,
        quote_opt(entry.referer.as_deref()),
        quote_opt(entry.user_agent.as_deref()),
    );
    if dialect == LogDialect::CombinedWithAppFields {
        line.push_str(&format!(
            " {} {} \"{}\"",
            quote_opt(entry.country.as_deref()),
            quote_opt(entry.username.as_deref()),
            if entry.via_web_service { "1" } else { "0" },
        ));
    }
    line
}

/// One classification rule: a path template with a single `{id}` capture.
#[derive(Debug, Clone)]
struct ResourceRule {
    regex: Regex,
    kind: ResourceKind,
    /// Rules whose pattern contains `?` match against the full path including query.
    matches_query: bool,
}

/// Ordered first-match-wins resource rules.
#[derive(Debug, Clone, Default)]
pub struct ResourceRuleSet {
    rules: Vec<ResourceRule>,
}

impl ResourceRuleSet {
    /// Parse rules from `pattern TAB class` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<ResourceRuleSet, RuleError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (pattern, class_name) = line.split_once('\t').ok_or(RuleError::InvalidRule {
                line: lineno,
                reason: "expected 'pattern TAB class'".into(),
            })?;
            let kind =
                ResourceKind::parse_name(class_name.trim()).ok_or(RuleError::InvalidRule {
                    line: lineno,
                    reason: format!("unknown class {:?}", class_name.trim()),
                })?;
            if kind == ResourceKind::Other {
                return Err(RuleError::InvalidRule {
                    line: lineno,
                    reason: "rules may not target 'other'".into(),
                });
            }
            let regex = compile_template(pattern).map_err(|reason| RuleError::InvalidRule {
                line: lineno,
                reason,
            })?;
            rules.push(ResourceRule {
                regex,
                kind,
                matches_query: pattern.contains('?'),
            });
        }
        Ok(ResourceRuleSet { rules })
    }

    pub fn load(path: &Path) -> Result<ResourceRuleSet, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|e| RuleError::InvalidRule {
            line: 0,
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        ResourceRuleSet::parse(&text)
    }

    /// The resource rules shipped with the crate.
    pub fn builtin() -> ResourceRuleSet {
        ResourceRuleSet::parse(crate::assets::DEFAULT_RESOURCE_RULES)
            .expect("shipped resource rules must parse")
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Turn a `{id}` path template into an anchored regex with an `id` capture group.
fn compile_template(pattern: &str) -> Result<Regex, String> {
    let captures = pattern.matches("{id}").count();
    if captures != 1 {
        return Err(format!("expected exactly one {{id}} capture, found {captures}"));
    }
    let (before, after) = pattern.split_once("{id}").unwrap();
    let source = format!("^{}(?P<id>.+?){}$", regex::escape(before), regex::escape(after));
    Regex::new(&source).map_err(|e| e.to_string())
}

/// First matching rule wins; no match is `Other`. Total over all paths.
pub fn classify_resource(path: &str, rules: &ResourceRuleSet) -> ResourceClass {
    let without_query = match path.split_once('?') {
        Some((p, _)) => p,
        None => path,
    };
    for rule in &rules.rules {
        let target = if rule.matches_query { path } else { without_query };
        if let Some(cap) = rule.regex.captures(target) {
            return ResourceClass::article(rule.kind, &cap["id"]);
        }
    }
    ResourceClass::other()
}

/// Counters for one ingest run. `read = kept + dropped + malformed` always.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub read: u64,
    pub kept: u64,
    pub dropped: u64,
    pub malformed: u64,
}

impl IngestReport {
    pub fn render(&self) -> String {
        format!(
            "read={}\nkept={}\ndropped={}\nmalformed={}\n",
            self.read, self.kept, self.dropped, self.malformed
        )
    }
}

/// Parse and classify every line of a stream, keeping only article requests.
///
/// Output preserves input order. Lines classified `Other` are dropped but
/// counted; malformed lines are counted and skipped.
pub fn ingest<R: BufRead>(
    reader: R,
    dialect: LogDialect,
    rules: &ResourceRuleSet,
) -> Result<(Vec<(LogEntry, ResourceClass)>, IngestReport), IngestError> {
    let mut kept = Vec::new();
    let mut report = IngestReport::default();
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(source) => {
                return Err(IngestError::Io {
                    read: report.read,
                    source,
                    report,
                })
            }
        };
        report.read += 1;
        match parse_line(&line, dialect) {
            Ok(entry) => {
                let class = classify_resource(&entry.path, rules);
                if class.is_other() {
                    report.dropped += 1;
                } else {
                    report.kept += 1;
                    kept.push((entry, class));
                }
            }
            Err(_) => report.malformed += 1,
        }
    }
    Ok((kept, report))
}

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Open a log file, transparently decompressing gzip (detected by magic bytes).
pub fn open_log_file(path: &Path) -> io::Result<Box<dyn BufRead>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let file = File::open(path)?;
    if n == 2 && magic == GZIP_MAGIC {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_rules() -> ResourceRuleSet {
        ResourceRuleSet::parse(crate::assets::DEFAULT_RESOURCE_RULES).unwrap()
    }

    #[test]
    fn parses_combined_line() {
        let line = r#"10.0.0.1 - - [05/Jan/2014:10:00:00 +0200] "GET /doi/abs/10.1/j.1 HTTP/1.1" 200 5120 "-" "Mozilla/5.0""#;
        let e = parse_line(line, LogDialect::Combined).unwrap();
        assert_eq!(e.ip, "10.0.0.1");
        assert_eq!(e.instant().to_rfc3339(), "2014-01-05T08:00:00+00:00");
        assert_eq!(e.method, "GET");
        assert_eq!(e.path, "/doi/abs/10.1/j.1");
        assert_eq!(e.protocol, "HTTP/1.1");
        assert_eq!(e.status, 200);
        assert_eq!(e.bytes, Some(5120));
        assert_eq!(e.referer, None);
        assert_eq!(e.user_agent.as_deref(), Some("Mozilla/5.0"));
        assert!(!e.via_web_service);
    }

    #[test]
    fn dash_bytes_is_absent_not_zero() {
        let line = r#"10.0.0.1 - - [05/Jan/2014:10:00:00 +0200] "GET /doi/abs/10.1/j.1 HTTP/1.1" 200 - "-" "Mozilla/5.0""#;
        let e = parse_line(line, LogDialect::Combined).unwrap();
        assert_eq!(e.bytes, None);
        let zero = line.replace(" - \"-\"", " 0 \"-\"");
        let e0 = parse_line(&zero, LogDialect::Combined).unwrap();
        assert_eq!(e0.bytes, Some(0));
        assert_ne!(e.bytes, e0.bytes);
    }

    #[test]
    fn out_of_range_status_is_malformed() {
        let line = r#"10.0.0.1 - - [05/Jan/2014:10:00:00 +0200] "GET /x HTTP/1.1" 700 1 "-" "-""#;
        let err = parse_line(line, LogDialect::Combined).unwrap_err();
        assert_eq!(
            err,
            ParseError::MalformedLine {
                column: "status",
                reason: "out of range".into()
            }
        );
    }

    #[test]
    fn parses_app_fields() {
        let line = r#"10.0.0.1 - - [05/Jan/2014:10:00:00 +0200] "GET /doi/pdf/10.1/j.2 HTTP/1.1" 200 99 "-" "curl/7.5" "GR" "alice" "1""#;
        let e = parse_line(line, LogDialect::CombinedWithAppFields).unwrap();
        assert_eq!(e.country.as_deref(), Some("GR"));
        assert_eq!(e.username.as_deref(), Some("alice"));
        assert!(e.via_web_service);
    }

    #[test]
    fn app_dialect_rejects_missing_columns() {
        let line = r#"10.0.0.1 - - [05/Jan/2014:10:00:00 +0200] "GET /x HTTP/1.1" 200 1 "-" "-""#;
        assert!(parse_line(line, LogDialect::CombinedWithAppFields).is_err());
    }

    #[test]
    fn classify_matches_first_rule() {
        let rules = default_rules();
        let c = classify_resource("/doi/abs/10.1/j.1", &rules);
        assert_eq!(c.kind(), ResourceKind::AbstractHtml);
        assert_eq!(c.article_id(), Some("10.1/j.1"));

        let c = classify_resource("/doi/pdf/10.1/j.2", &rules);
        assert_eq!(c.kind(), ResourceKind::FullTextPdf);
        assert_eq!(c.article_id(), Some("10.1/j.2"));
    }

    #[test]
    fn classify_no_match_is_other() {
        let rules = default_rules();
        let c = classify_resource("/search?q=x", &rules);
        assert!(c.is_other());
        assert_eq!(c.article_id(), None);
    }

    #[test]
    fn classify_ignores_query_string_by_default() {
        let rules = default_rules();
        let c = classify_resource("/doi/abs/10.1/j.1?cookie=1", &rules);
        assert_eq!(c.kind(), ResourceKind::AbstractHtml);
        assert_eq!(c.article_id(), Some("10.1/j.1"));
    }

    #[test]
    fn rule_targeting_other_is_invalid() {
        assert!(ResourceRuleSet::parse("/x/{id}\tother").is_err());
    }

    #[test]
    fn rule_without_capture_is_invalid() {
        assert!(ResourceRuleSet::parse("/x/y\tabstract").is_err());
    }

    #[test]
    fn ingest_counts_add_up() {
        let rules = default_rules();
        let lines = [
            r#"10.0.0.1 - - [05/Jan/2014:10:00:00 +0200] "GET /doi/abs/a HTTP/1.1" 200 1 "-" "-""#,
            r#"10.0.0.1 - - [05/Jan/2014:10:00:01 +0200] "GET /search?q=1 HTTP/1.1" 200 1 "-" "-""#,
            r#"10.0.0.1 - - [05/Jan/2014:10:00:02 +0200] "GET /doi/full/b HTTP/1.1" 200 1 "-" "-""#,
            r#"garbage"#,
            r#"10.0.0.1 - - [05/Jan/2014:10:00:03 +0200] "GET /doi/ref/c HTTP/1.1" 200 1 "-" "-""#,
        ]
        .join("\n");
        let (entries, report) = ingest(lines.as_bytes(), LogDialect::Combined, &rules).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(
            report,
            IngestReport {
                read: 5,
                kept: 3,
                dropped: 1,
                malformed: 1
            }
        );
        assert_eq!(report.read, report.kept + report.dropped + report.malformed);
    }

    #[test]
    fn ingest_empty_stream() {
        let rules = default_rules();
        let (entries, report) = ingest(&b""[..], LogDialect::Combined, &rules).unwrap();
        assert!(entries.is_empty());
        assert_eq!(report, IngestReport::default());
    }

    #[test]
    fn gzip_detection_roundtrip() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        use std::io::Write;

        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("a.log");
        let gz = dir.path().join("a.log.gz");
        let line = r#"10.0.0.1 - - [05/Jan/2014:10:00:00 +0200] "GET /doi/abs/a HTTP/1.1" 200 1 "-" "-""#;
        std::fs::write(&plain, format!("{line}\n")).unwrap();
        let mut enc = GzEncoder::new(File::create(&gz).unwrap(), Compression::default());
        enc.write_all(format!("{line}\n").as_bytes()).unwrap();
        enc.finish().unwrap();

        for path in [&plain, &gz] {
            let rules = default_rules();
            let reader = open_log_file(path).unwrap();
            let (entries, report) = ingest(reader, LogDialect::Combined, &rules).unwrap();
            assert_eq!(entries.len(), 1, "failed for {}", path.display());
            assert_eq!(report.kept, 1);
        }
    }
}
