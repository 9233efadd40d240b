//! Three-stage session labeling: user-agent classification, robot-list
//! matching, and a manual verdict map, followed by the logged-in-user rule.
//! Robot evidence always wins over login evidence; such conflicts are
//! counted rather than silently resolved.

use std::collections::HashMap;
use std::fmt;

use regex::{Regex, RegexBuilder};
use thiserror::Error;

use crate::assets;
use crate::sessionize::Session;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UAClass {
    CloudClient,
    Console,
    OfflineBrowser,
    LinkChecker,
    Crawler,
    FeedFetcher,
    Library,
    MobileBrowser,
    Validator,
    Browser,
    Unknown,
    Other,
}

impl UAClass {
    pub fn name(self) -> &'static str {
        match self {
            UAClass::CloudClient => "CloudClient",
            UAClass::Console => "Console",
            UAClass::OfflineBrowser => "OfflineBrowser",
            UAClass::LinkChecker => "LinkChecker",
            UAClass::Crawler => "Crawler",
            UAClass::FeedFetcher => "FeedFetcher",
            UAClass::Library => "Library",
            UAClass::MobileBrowser => "MobileBrowser",
            UAClass::Validator => "Validator",
            UAClass::Browser => "Browser",
            UAClass::Unknown => "Unknown",
            UAClass::Other => "Other",
        }
    }

    pub fn parse_name(name: &str) -> Option<UAClass> {
        [
            UAClass::CloudClient,
            UAClass::Console,
            UAClass::OfflineBrowser,
            UAClass::LinkChecker,
            UAClass::Crawler,
            UAClass::FeedFetcher,
            UAClass::Library,
            UAClass::MobileBrowser,
            UAClass::Validator,
            UAClass::Browser,
            UAClass::Unknown,
            UAClass::Other,
        ]
        .into_iter()
        .find(|c| c.name() == name)
    }
}

impl fmt::Display for UAClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum LabelConfigError {
    #[error("{file} line {line}: {reason}")]
    BadLine {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file} line {line}: invalid regex: {source}")]
    InvalidRegex {
        file: String,
        line: usize,
        source: regex::Error,
    },
}

fn compile_ci(pattern: &str, file: &str, line: usize) -> Result<Regex, LabelConfigError> {
    RegexBuilder::new(pattern)
        .case_insensitive(true)
        .build()
        .map_err(|source| LabelConfigError::InvalidRegex {
            file: file.to_string(),
            line,
            source,
        })
}

/// Ordered user-agent class patterns; first match wins, no match is Unknown.
pub struct UAPatternDB {
    rules: Vec<(Regex, UAClass)>,
}

impl UAPatternDB {
    /// Parse `regex TAB class` lines; `#` starts a comment.
    pub fn parse(text: &str, file: &str) -> Result<UAPatternDB, LabelConfigError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (pattern, class) =
                line.split_once('\t')
                    .ok_or_else(|| LabelConfigError::BadLine {
                        file: file.to_string(),
                        line: idx + 1,
                        reason: "expected `regex<TAB>class`".into(),
                    })?;
            let class = UAClass::parse_name(class.trim()).ok_or_else(|| {
                LabelConfigError::BadLine {
                    file: file.to_string(),
                    line: idx + 1,
                    reason: format!("unknown class {:?}", class.trim()),
                }
            })?;
            rules.push((compile_ci(pattern, file, idx + 1)?, class));
        }
        Ok(UAPatternDB { rules })
    }

    /// The pattern database shipped with the crate.
    pub fn builtin() -> UAPatternDB {
        UAPatternDB::parse(assets::UA_CLASS_DB, "builtin:ua_classes.tsv")
            .expect("shipped pattern DB must parse")
    }

    pub fn classify(&self, ua: &str) -> UAClass {
        if ua.is_empty() {
            return UAClass::Unknown;
        }
        self.rules
            .iter()
            .find(|(re, _)| re.is_match(ua))
            .map(|&(_, class)| class)
            .unwrap_or(UAClass::Unknown)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// One named robot list: compiled patterns in file order.
pub struct RobotList {
    pub name: String,
    patterns: Vec<(String, Regex)>,
}

/// The ordered robot lists with exclusions already removed.
pub struct RobotLists {
    lists: Vec<RobotList>,
    /// Patterns dropped at load time because the exclusion file names them.
    pub removed: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RobotMatch<'a> {
    pub list: &'a str,
    pub pattern: &'a str,
}

fn parse_pattern_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(idx, raw)| (idx + 1, raw.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
}

impl RobotLists {
    /// Load named lists (one regex per line, `#` comments). Patterns whose
    /// text appears in the exclusion file are removed before compilation.
    pub fn load(named: &[(&str, &str)], exclusions: &str) -> Result<RobotLists, LabelConfigError> {
        let excluded: Vec<&str> = parse_pattern_lines(exclusions).map(|(_, p)| p).collect();
        let mut lists = Vec::new();
        let mut removed = Vec::new();
        for (name, text) in named {
            let mut patterns = Vec::new();
            for (line, pattern) in parse_pattern_lines(text) {
                if excluded.contains(&pattern) {
                    removed.push(pattern.to_string());
                    continue;
                }
                patterns.push((pattern.to_string(), compile_ci(pattern, name, line)?));
            }
            lists.push(RobotList {
                name: name.to_string(),
                patterns,
            });
        }
        Ok(RobotLists { lists, removed })
    }

    /// The two lists shipped with the crate, with the shipped exclusions.
    pub fn builtin() -> RobotLists {
        RobotLists::load(
            &[
                ("counter", assets::ROBOT_LIST_COUNTER),
                ("analytics", assets::ROBOT_LIST_ANALYTICS),
            ],
            assets::ROBOT_EXCLUSIONS,
        )
        .expect("shipped robot lists must parse")
    }

    /// First matching pattern across the lists, in list order.
    pub fn match_ua(&self, ua: &str) -> Option<RobotMatch<'_>> {
        for list in &self.lists {
            for (pattern, re) in &list.patterns {
                if re.is_match(ua) {
                    return Some(RobotMatch {
                        list: &list.name,
                        pattern,
                    });
                }
            }
        }
        None
    }

    pub fn pattern_count(&self) -> usize {
        self.lists.iter().map(|l| l.patterns.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManualVerdict {
    Robot,
    Human,
}

/// Exact-match manual verdicts for user agents the class DB leaves Unknown.
pub struct ManualMap {
    map: HashMap<String, ManualVerdict>,
}

impl ManualMap {
    /// Parse `ua TAB robot|human` lines; `#` starts a comment.
    pub fn parse(text: &str, file: &str) -> Result<ManualMap, LabelConfigError> {
        let mut map = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (ua, verdict) = line
                .split_once('\t')
                .ok_or_else(|| LabelConfigError::BadLine {
                    file: file.to_string(),
                    line: idx + 1,
                    reason: "expected `ua<TAB>robot|human`".into(),
                })?;
            let verdict = match verdict.trim() {
                "robot" => ManualVerdict::Robot,
                "human" => ManualVerdict::Human,
                other => {
                    return Err(LabelConfigError::BadLine {
                        file: file.to_string(),
                        line: idx + 1,
                        reason: format!("unknown verdict {other:?}"),
                    })
                }
            };
            map.insert(ua.to_string(), verdict);
        }
        Ok(ManualMap { map })
    }

    pub fn builtin() -> ManualMap {
        ManualMap::parse(assets::MANUAL_LABELS, "builtin:manual_labels.tsv")
            .expect("shipped manual labels must parse")
    }

    pub fn empty() -> ManualMap {
        ManualMap {
            map: HashMap::new(),
        }
    }

    pub fn get(&self, ua: &str) -> Option<ManualVerdict> {
        self.map.get(ua).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Robot,
    Human,
    Unlabeled,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Robot => "robot",
            Verdict::Human => "human",
            Verdict::Unlabeled => "unlabeled",
        }
    }

    pub fn parse_name(name: &str) -> Option<Verdict> {
        match name {
            "robot" => Some(Verdict::Robot),
            "human" => Some(Verdict::Human),
            "unlabeled" => Some(Verdict::Unlabeled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelStage {
    UAClassifier,
    RobotList,
    ManualList,
    LoggedInUser,
    None,
}

impl LabelStage {
    pub fn name(self) -> &'static str {
        match self {
            LabelStage::UAClassifier => "ua-classifier",
            LabelStage::RobotList => "robot-list",
            LabelStage::ManualList => "manual-list",
            LabelStage::LoggedInUser => "logged-in-user",
            LabelStage::None => "none",
        }
    }

    pub fn parse_name(name: &str) -> Option<LabelStage> {
        match name {
            "ua-classifier" => Some(LabelStage::UAClassifier),
            "robot-list" => Some(LabelStage::RobotList),
            "manual-list" => Some(LabelStage::ManualList),
            "logged-in-user" => Some(LabelStage::LoggedInUser),
            "none" => Some(LabelStage::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionLabel {
    pub verdict: Verdict,
    pub stage: LabelStage,
    /// Matched pattern, class name, or username behind the verdict.
    pub evidence: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelReport {
    pub robots: usize,
    pub humans: usize,
    pub unlabeled: usize,
    /// Sessions with both robot evidence and a logged-in user; robot wins.
    pub conflicts: usize,
}

impl LabelReport {
    pub fn render(&self) -> String {
        format!(
            "labeled {} robot, {} human, {} unlabeled ({} robot/login conflicts)",
            self.robots, self.humans, self.unlabeled, self.conflicts
        )
    }
}

/// Label one session. Returns the label and whether robot evidence collided
/// with login evidence.
pub fn label_session(
    session: &Session,
    db: &UAPatternDB,
    lists: &RobotLists,
    manual: &ManualMap,
) -> (SessionLabel, bool) {
    let ua = session.user_agent();
    let class = db.classify(ua);

    let robot: Option<(LabelStage, String)> = if class == UAClass::Crawler {
        Some((LabelStage::UAClassifier, class.name().to_string()))
    } else if let Some(m) = lists.match_ua(ua) {
        Some((LabelStage::RobotList, m.pattern.to_string()))
    } else if class == UAClass::Unknown && manual.get(ua) == Some(ManualVerdict::Robot) {
        Some((LabelStage::ManualList, ua.to_string()))
    } else {
        None
    };

    let logged_in = session.has_username();
    match robot {
        Some((stage, evidence)) => (
            SessionLabel {
                verdict: Verdict::Robot,
                stage,
                evidence: Some(evidence),
            },
            logged_in,
        ),
        None if logged_in => {
            let username = session
                .requests
                .iter()
                .find_map(|(e, _)| e.username.clone());
            (
                SessionLabel {
                    verdict: Verdict::Human,
                    stage: LabelStage::LoggedInUser,
                    evidence: username,
                },
                false,
            )
        }
        None => (
            SessionLabel {
                verdict: Verdict::Unlabeled,
                stage: LabelStage::None,
                evidence: None,
            },
            false,
        ),
    }
}

pub fn label_sessions(
    sessions: &[Session],
    db: &UAPatternDB,
    lists: &RobotLists,
    manual: &ManualMap,
) -> (Vec<SessionLabel>, LabelReport) {
    let mut labels = Vec::with_capacity(sessions.len());
    let mut report = LabelReport::default();
    for session in sessions {
        let (label, conflict) = label_session(session, db, lists, manual);
        match label.verdict {
            Verdict::Robot => report.robots += 1,
            Verdict::Human => report.humans += 1,
            Verdict::Unlabeled => report.unlabeled += 1,
        }
        if conflict {
            report.conflicts += 1;
        }
        labels.push(label);
    }
    (labels, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sessionize::{sessionize, test_support::entry_at};

    const CHROME_UA: &str = "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/55.0.2883.87 Safari/537.36";
    const GOOGLEBOT_UA: &str = "Googlebot/2.1 (+http://www.google.com/bot.html)";

    fn make_session(ua: &str, username: Option<&str>) -> Session {
        let mut entries = vec![
            entry_at("9.9.9.9", ua, 0, "/doi/abs/x"),
            entry_at("9.9.9.9", ua, 10, "/doi/abs/y"),
            entry_at("9.9.9.9", ua, 20, "/doi/abs/z"),
        ];
        if let Some(u) = username {
            entries[1].0.username = Some(u.to_string());
        }
        sessionize(entries, 1800, 3).remove(0)
    }

    #[test]
    fn builtin_db_classifies_known_agents() {
        let db = UAPatternDB::builtin();
        assert_eq!(db.classify(GOOGLEBOT_UA), UAClass::Crawler);
        assert_eq!(db.classify(CHROME_UA), UAClass::Browser);
        assert_eq!(db.classify("curl/7.51.0"), UAClass::Library);
        assert_eq!(db.classify("Wget/1.19"), UAClass::OfflineBrowser);
        assert_eq!(
            db.classify("Mozilla/5.0 (iPhone; CPU iPhone OS 10_0) Mobile Safari/602.1"),
            UAClass::MobileBrowser
        );
        assert_eq!(db.classify(""), UAClass::Unknown);
        assert_eq!(db.classify("EntirelyNovelAgent/0.1"), UAClass::Unknown);
    }

    #[test]
    fn classification_is_first_match_and_case_insensitive() {
        let db = UAPatternDB::parse("foo\tCrawler\nfoobar\tBrowser\n", "test").unwrap();
        assert_eq!(db.classify("xFOOBARx"), UAClass::Crawler);
        assert_eq!(UAPatternDB::builtin().classify("GOOGLEBOT"), UAClass::Crawler);
    }

    #[test]
    fn pattern_db_rejects_bad_lines() {
        assert!(matches!(
            UAPatternDB::parse("no-tab-here\n", "test"),
            Err(LabelConfigError::BadLine { .. })
        ));
        assert!(matches!(
            UAPatternDB::parse("x\tNotAClass\n", "test"),
            Err(LabelConfigError::BadLine { .. })
        ));
        assert!(matches!(
            UAPatternDB::parse("([\tCrawler\n", "test"),
            Err(LabelConfigError::InvalidRegex { .. })
        ));
    }

    #[test]
    fn robot_lists_match_and_exclude() {
        let lists = RobotLists::builtin();
        let m = lists.match_ua("curl/7.5").unwrap();
        assert_eq!(m.pattern, "curl");

        // The questionable ^Mozilla patterns ship in the list file but are
        // removed by the exclusion file, so bare browser strings stay clean.
        assert_eq!(lists.removed.len(), 3);
        assert!(lists.removed.iter().any(|p| p == "^Mozilla$"));
        assert!(lists.match_ua("Mozilla/4.0").is_none());
        assert!(lists.match_ua(CHROME_UA).is_none());

        // Analytics lists treat an empty user agent as a robot signature.
        assert!(lists.match_ua("").is_some());
    }

    #[test]
    fn robot_list_load_rejects_bad_regex() {
        assert!(RobotLists::load(&[("x", "([\n")], "").is_err());
    }

    #[test]
    fn stage_rules() {
        let db = UAPatternDB::builtin();
        let lists = RobotLists::builtin();
        let manual = ManualMap::builtin();

        let (label, conflict) =
            label_session(&make_session(GOOGLEBOT_UA, None), &db, &lists, &manual);
        assert_eq!(label.verdict, Verdict::Robot);
        assert_eq!(label.stage, LabelStage::UAClassifier);
        assert_eq!(label.evidence.as_deref(), Some("Crawler"));
        assert!(!conflict);

        let (label, _) = label_session(&make_session("curl/7.5", None), &db, &lists, &manual);
        assert_eq!(label.verdict, Verdict::Robot);
        assert_eq!(label.stage, LabelStage::RobotList);

        let (label, _) = label_session(&make_session("Zotero/5.0", None), &db, &lists, &manual);
        assert_eq!(label.verdict, Verdict::Robot);
        assert_eq!(label.stage, LabelStage::ManualList);

        let (label, _) =
            label_session(&make_session(CHROME_UA, Some("alice")), &db, &lists, &manual);
        assert_eq!(label.verdict, Verdict::Human);
        assert_eq!(label.stage, LabelStage::LoggedInUser);
        assert_eq!(label.evidence.as_deref(), Some("alice"));

        let (label, _) = label_session(&make_session(CHROME_UA, None), &db, &lists, &manual);
        assert_eq!(label.verdict, Verdict::Unlabeled);
        assert_eq!(label.stage, LabelStage::None);
        assert_eq!(label.evidence, None);
    }

    #[test]
    fn robot_wins_over_login_and_is_counted() {
        let db = UAPatternDB::builtin();
        let lists = RobotLists::builtin();
        let manual = ManualMap::builtin();
        let sessions = vec![
            make_session("curl/7.5", Some("mallory")),
            make_session(CHROME_UA, Some("alice")),
            make_session(CHROME_UA, None),
        ];
        let (labels, report) = label_sessions(&sessions, &db, &lists, &manual);
        assert_eq!(labels.len(), sessions.len());
        assert_eq!(labels[0].verdict, Verdict::Robot);
        assert_eq!(report.robots, 1);
        assert_eq!(report.humans, 1);
        assert_eq!(report.unlabeled, 1);
        assert_eq!(report.conflicts, 1);
    }

    #[test]
    fn manual_human_still_requires_login() {
        let db = UAPatternDB::builtin();
        let lists = RobotLists::builtin();
        let manual = ManualMap::builtin();
        let ua = "ResearchKiosk Touch Terminal 3.1";
        assert_eq!(db.classify(ua), UAClass::Unknown);
        assert_eq!(manual.get(ua), Some(ManualVerdict::Human));

        let (label, _) = label_session(&make_session(ua, Some("kiosk1")), &db, &lists, &manual);
        assert_eq!(label.verdict, Verdict::Human);
        let (label, _) = label_session(&make_session(ua, None), &db, &lists, &manual);
        assert_eq!(label.verdict, Verdict::Unlabeled);
    }

    #[test]
    fn manual_map_only_applies_to_unknown() {
        let db = UAPatternDB::builtin();
        let lists = RobotLists::load(&[("empty", "")], "").unwrap();
        // Chrome classifies as Browser, so a manual robot entry for it is ignored.
        let manual = ManualMap::parse(&format!("{CHROME_UA}\trobot\n"), "test").unwrap();
        let (label, _) = label_session(&make_session(CHROME_UA, None), &db, &lists, &manual);
        assert_eq!(label.verdict, Verdict::Unlabeled);
    }

    #[test]
    fn adding_patterns_never_unmakes_robots() {
        let db = UAPatternDB::builtin();
        let manual = ManualMap::builtin();
        let base = RobotLists::load(&[("one", "curl\n")], "").unwrap();
        let extended = RobotLists::load(&[("one", "curl\nspecialagent\n")], "").unwrap();
        let sessions = vec![
            make_session("curl/7.5", None),
            make_session("SpecialAgent/2.0", None),
            make_session(GOOGLEBOT_UA, None),
        ];
        let (before, _) = label_sessions(&sessions, &db, &base, &manual);
        let (after, _) = label_sessions(&sessions, &db, &extended, &manual);
        for (b, a) in before.iter().zip(&after) {
            if b.verdict == Verdict::Robot {
                assert_eq!(a.verdict, Verdict::Robot);
            }
        }
        assert_eq!(after[1].verdict, Verdict::Robot);
    }

    #[test]
    fn manual_map_parse_errors() {
        assert!(ManualMap::parse("ua only\n", "test").is_err());
        assert!(ManualMap::parse("ua\tmaybe\n", "test").is_err());
    }
}
