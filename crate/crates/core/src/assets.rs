//! Data files shipped with the crate: default resource rules, the offline
//! user-agent class database, robot lists with their exclusions, and manual
//! label seeds. All are plain text and can be overridden by operator files.

pub const DEFAULT_RESOURCE_RULES: &str = include_str!("../assets/resource_rules.tsv");
pub const UA_CLASS_DB: &str = include_str!("../assets/ua_classes.tsv");
pub const ROBOT_LIST_COUNTER: &str = include_str!("../assets/robot_list_counter.tsv");
pub const ROBOT_LIST_ANALYTICS: &str = include_str!("../assets/robot_list_analytics.tsv");
pub const ROBOT_EXCLUSIONS: &str = include_str!("../assets/robot_exclusions.tsv");
pub const MANUAL_LABELS: &str = include_str!("../assets/manual_labels.tsv");
