//! Commit provenance checks.
//!
//! Commits declare AI involvement through git trailers:
//!
//! ```text
//! AI-Assisted: yes
//! AI-Tool: some-agent
//! AI-Model: model-name
//! Issue: #397
//! Session-Log: logs/s1.jsonl
//! ```
//!
//! [`run_checks`] walks a commit range through a [`RepositoryReader`] and
//! reports violations of a [`GovernancePolicy`]. Exit codes follow
//! [`EXIT_PASS`], [`EXIT_VIOLATIONS`] and [`EXIT_USAGE`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATIONS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Stable rule identifiers.
pub mod rules {
    pub const INVOLVEMENT_MISSING: &str = "trailer-missing-ai-assisted";
    pub const INVOLVEMENT_INVALID: &str = "trailer-invalid-ai-assisted";
    pub const TOOL_MISSING: &str = "trailer-missing-ai-tool";
    pub const MODEL_MISSING: &str = "trailer-missing-ai-model";
    pub const SESSION_LOG_TRAILER_MISSING: &str = "trailer-missing-session-log";
    pub const ISSUE_MISSING: &str = "issue-reference-missing";
    pub const SESSION_LOG_NOT_FOUND: &str = "session-log-not-found";
    pub const SESSION_LOG_MALFORMED: &str = "session-log-malformed";
    pub const SESSION_LOG_EXTENSION: &str = "session-log-bad-extension";
    pub const AGENTS_MD_MISSING: &str = "agents-md-missing";
    pub const AGENTS_MD_SECTION_MISSING: &str = "agents-md-section-missing";

    pub const ALL: [&str; 11] = [
        INVOLVEMENT_MISSING,
        INVOLVEMENT_INVALID,
        TOOL_MISSING,
        MODEL_MISSING,
        SESSION_LOG_TRAILER_MISSING,
        ISSUE_MISSING,
        SESSION_LOG_NOT_FOUND,
        SESSION_LOG_MALFORMED,
        SESSION_LOG_EXTENSION,
        AGENTS_MD_MISSING,
        AGENTS_MD_SECTION_MISSING,
    ];

    /// Rule id for a missing conditionally-required trailer.
    pub fn missing_trailer(key: &str) -> String {
        format!("trailer-missing-{}", key.to_ascii_lowercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

impl std::fmt::Display for Severity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub severity: Severity,
    /// Commit id or file path.
    pub location: String,
    pub message: String,
}

/// Ordered trailer entries; keys are in canonical case.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trailers(Vec<(String, String)>);

impl Trailers {
    /// First value for `key` (case-insensitive).
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.0
            .iter()
            .filter(move |(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Distinct keys with their values in order of appearance.
    pub fn to_map(&self) -> BTreeMap<String, Vec<String>> {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (k, v) in &self.0 {
            map.entry(k.clone()).or_default().push(v.clone());
        }
        map
    }
}

impl FromIterator<(String, String)> for Trailers {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Trailers(iter.into_iter().map(|(k, v)| (canonical_key(&k), v)).collect())
    }
}

/// `ai-model` → `AI-Model`, `session-log` → `Session-Log`.
pub fn canonical_key(key: &str) -> String {
    key.split('-')
        .map(|part| {
            if part.eq_ignore_ascii_case("ai") {
                "AI".to_string()
            } else {
                let mut chars = part.chars();
                match chars.next() {
                    Some(c) => c.to_ascii_uppercase().to_string() + &chars.as_str().to_ascii_lowercase(),
                    None => String::new(),
                }
            }
        })
        .collect::<Vec<_>>()
        .join("-")
}

fn trailer_line(line: &str) -> Option<(&str, &str)> {
    let (key, value) = line.split_once(':')?;
    let valid_key = !key.is_empty()
        && key.chars().next().is_some_and(|c| c.is_ascii_alphanumeric())
        && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
    let value = value.trim();
    (valid_key && !value.is_empty()).then_some((key, value))
}

/// Parses the final paragraph of `message` when every line in it is a
/// `Key: value` trailer (indented lines continue the previous value). The
/// subject paragraph never counts.
pub fn parse_trailers(message: &str) -> Trailers {
    let text = message.replace("\r\n", "\n");
    let paragraphs: Vec<&str> = text
        .split("\n\n")
        .map(|p| p.trim_matches('\n'))
        .filter(|p| !p.trim().is_empty())
        .collect();
    if paragraphs.len() < 2 {
        return Trailers::default();
    }
    let block = paragraphs[paragraphs.len() - 1];
    let mut entries: Vec<(String, String)> = Vec::new();
    for line in block.lines() {
        if line.starts_with([' ', '\t']) && !entries.is_empty() {
            let last = entries.last_mut().expect("checked nonempty");
            last.1.push(' ');
            last.1.push_str(line.trim());
            continue;
        }
        match trailer_line(line) {
            Some((k, v)) => entries.push((canonical_key(k), v.to_string())),
            None => return Trailers::default(),
        }
    }
    Trailers(entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitMeta {
    pub id: String,
    pub message: String,
    pub trailers: Trailers,
    pub changed_paths: Vec<String>,
}

impl CommitMeta {
    pub fn new(id: impl Into<String>, message: impl Into<String>, changed_paths: Vec<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::domain("commit identifier must be nonempty"));
        }
        let message = message.into();
        Ok(Self {
            trailers: parse_trailers(&message),
            id,
            message,
            changed_paths,
        })
    }

    pub fn subject(&self) -> &str {
        self.message.lines().next().unwrap_or("")
    }
}

/// Checked governance rules and their parameters.
#[derive(Debug, Clone)]
pub struct GovernancePolicy {
    pub involvement_key: String,
    pub allowed_involvement: Vec<String>,
    /// Involvement values that require the keys in `required_when_assisted`.
    pub assisted_values: Vec<String>,
    pub required_when_assisted: Vec<String>,
    pub session_log_key: String,
    pub session_log_extension: String,
    pub issue_pattern: Regex,
    pub agents_md_path: String,
    pub agents_md_sections: Vec<String>,
    pub severities: BTreeMap<String, Severity>,
}

impl Default for GovernancePolicy {
    fn default() -> Self {
        let mut severities: BTreeMap<String, Severity> =
            rules::ALL.iter().map(|r| (r.to_string(), Severity::Error)).collect();
        severities.insert(rules::AGENTS_MD_MISSING.into(), Severity::Warning);
        severities.insert(rules::AGENTS_MD_SECTION_MISSING.into(), Severity::Warning);
        Self {
            involvement_key: "AI-Assisted".into(),
            allowed_involvement: vec!["yes".into(), "no".into(), "partial".into()],
            assisted_values: vec!["yes".into(), "partial".into()],
            required_when_assisted: vec!["AI-Tool".into(), "AI-Model".into(), "Session-Log".into()],
            session_log_key: "Session-Log".into(),
            session_log_extension: "jsonl".into(),
            issue_pattern: Regex::new(r"#\d+").expect("static pattern"),
            agents_md_path: "AGENTS.md".into(),
            agents_md_sections: vec![
                "task execution".into(),
                "testing".into(),
                "documentation".into(),
                "provenance".into(),
            ],
            severities,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    #[serde(default)]
    trailers: TrailerSection,
    #[serde(default)]
    issue: IssueSection,
    #[serde(default)]
    session_log: SessionLogSection,
    #[serde(default)]
    agents_md: AgentsSection,
    #[serde(default)]
    severity: BTreeMap<String, Severity>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrailerSection {
    involvement_key: Option<String>,
    allowed_values: Option<Vec<String>>,
    assisted_values: Option<Vec<String>>,
    required_when_assisted: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IssueSection {
    pattern: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionLogSection {
    key: Option<String>,
    extension: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentsSection {
    path: Option<String>,
    required_sections: Option<Vec<String>>,
}

impl GovernancePolicy {
    /// Reads a TOML policy; absent keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: PolicyFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut p = Self::default();
        let t = file.trailers;
        if let Some(v) = t.involvement_key {
            p.involvement_key = v;
        }
        if let Some(v) = t.allowed_values {
            p.allowed_involvement = v;
        }
        if let Some(v) = t.assisted_values {
            p.assisted_values = v;
        }
        if let Some(v) = t.required_when_assisted {
            p.required_when_assisted = v;
        }
        if let Some(v) = file.issue.pattern {
            p.issue_pattern = Regex::new(&v).map_err(|e| Error::Parse(format!("issue pattern: {e}")))?;
        }
        if let Some(v) = file.session_log.key {
            p.session_log_key = v;
        }
        if let Some(v) = file.session_log.extension {
            p.session_log_extension = v.trim_start_matches('.').to_string();
        }
        if let Some(v) = file.agents_md.path {
            p.agents_md_path = v;
        }
        if let Some(v) = file.agents_md.required_sections {
            p.agents_md_sections = v;
        }
        for (rule, severity) in file.severity {
            p.severities.insert(rule, severity);
        }
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn severity(&self, rule: &str) -> Severity {
        self.severities.get(rule).copied().unwrap_or(Severity::Error)
    }

    fn violation(&self, rule: &str, location: &str, message: String) -> Violation {
        Violation {
            rule: rule.to_string(),
            severity: self.severity(rule),
            location: location.to_string(),
            message,
        }
    }
}

/// Trailer and issue-reference rules for one commit.
pub fn check_commit(meta: &CommitMeta, policy: &GovernancePolicy) -> Vec<Violation> {
    let mut out = Vec::new();
    let key = &policy.involvement_key;
    match meta.trailers.get(key) {
        None => out.push(policy.violation(
            rules::INVOLVEMENT_MISSING,
            &meta.id,
            format!("no `{key}` trailer"),
        )),
        Some(value) => {
            let v = value.trim().to_ascii_lowercase();
            if !policy.allowed_involvement.iter().any(|a| a.eq_ignore_ascii_case(&v)) {
                out.push(policy.violation(
                    rules::INVOLVEMENT_INVALID,
                    &meta.id,
                    format!("`{key}: {value}` is not one of {}", policy.allowed_involvement.join(", ")),
                ));
            } else if policy.assisted_values.iter().any(|a| a.eq_ignore_ascii_case(&v)) {
                for required in &policy.required_when_assisted {
                    if meta.trailers.get(required).is_none() {
                        out.push(policy.violation(
                            &rules::missing_trailer(required),
                            &meta.id,
                            format!("`{key}: {value}` requires a `{required}` trailer"),
                        ));
                    }
                }
            }
        }
    }
    if !policy.issue_pattern.is_match(&meta.message) {
        out.push(policy.violation(
            rules::ISSUE_MISSING,
            &meta.id,
            format!("no issue reference matching `{}`", policy.issue_pattern.as_str()),
        ));
    }
    out
}

/// Presence and JSON-Lines validity of the declared session log.
/// `read_file` returns the file content at the commit, or `None`.
pub fn check_session_log<F>(meta: &CommitMeta, policy: &GovernancePolicy, read_file: F) -> Vec<Violation>
where
    F: Fn(&str) -> Option<Vec<u8>>,
{
    let mut out = Vec::new();
    for path in meta.trailers.get_all(&policy.session_log_key) {
        let location = format!("{}:{path}", meta.id);
        let ext_ok = Path::new(path)
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case(&policy.session_log_extension));
        if !ext_ok {
            out.push(policy.violation(
                rules::SESSION_LOG_EXTENSION,
                &location,
                format!("session log must have a .{} extension", policy.session_log_extension),
            ));
        }
        let Some(bytes) = read_file(path) else {
            let why = if meta.changed_paths.iter().any(|p| p == path) {
                "is listed as changed but cannot be read"
            } else {
                "is neither changed in the commit nor tracked"
            };
            out.push(policy.violation(rules::SESSION_LOG_NOT_FOUND, &location, format!("session log {why}")));
            continue;
        };
        let Ok(text) = String::from_utf8(bytes) else {
            out.push(policy.violation(rules::SESSION_LOG_MALFORMED, &location, "session log is not UTF-8".into()));
            continue;
        };
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Err(e) = serde_json::from_str::<serde_json::Value>(line) {
                out.push(policy.violation(
                    rules::SESSION_LOG_MALFORMED,
                    &location,
                    format!("line {} is not valid JSON: {e}", n + 1),
                ));
                break;
            }
        }
    }
    out
}

fn heading_text(line: &str) -> Option<String> {
    let t = line.trim_start();
    let hashes = t.chars().take_while(|&c| c == '#').count();
    if !(1..=6).contains(&hashes) {
        return None;
    }
    let rest = &t[hashes..];
    if !rest.is_empty() && !rest.starts_with([' ', '\t']) {
        return None;
    }
    Some(
        rest.trim()
            .trim_end_matches('#')
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase(),
    )
}

/// One violation per required section with no matching heading. A heading
/// matches when its text contains the section name, case-insensitively.
pub fn check_agents_md(content: &str, policy: &GovernancePolicy) -> Vec<Violation> {
    let headings: Vec<String> = content.lines().filter_map(heading_text).collect();
    policy
        .agents_md_sections
        .iter()
        .filter(|section| {
            let want = section.to_lowercase();
            !headings.iter().any(|h| h.contains(&want))
        })
        .map(|section| {
            policy.violation(
                rules::AGENTS_MD_SECTION_MISSING,
                &policy.agents_md_path,
                format!("no heading for the `{section}` section"),
            )
        })
        .collect()
}

/// Read access to commit history.
pub trait RepositoryReader: Sync {
    /// Commit ids in the range, oldest first.
    fn resolve_range(&self, spec: &str) -> Result<Vec<String>>;
    fn commit(&self, id: &str) -> Result<CommitMeta>;
    /// Content of `path` as of commit `id`.
    fn read_file(&self, id: &str, path: &str) -> Option<Vec<u8>>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitStatus {
    pub id: String,
    pub subject: String,
    pub errors: usize,
    pub warnings: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub range: String,
    pub commits: Vec<CommitStatus>,
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
    pub exit_code: i32,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn error_count(&self) -> usize {
        self.violations.iter().filter(|v| v.severity == Severity::Error).count()
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        for c in &self.commits {
            let mark = if c.passed { "ok  " } else { "FAIL" };
            let _ = writeln!(s, "{mark} {} {}", short(&c.id), c.subject);
        }
        for v in &self.violations {
            let _ = writeln!(s, "{}: [{}] {}: {}", v.severity, v.rule, v.location, v.message);
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        let warnings = self.violations.len() - self.error_count();
        let _ = writeln!(
            s,
            "{} commit(s) checked, {} error(s), {} warning(s)",
            self.commits.len(),
            self.error_count(),
            warnings
        );
        s
    }
}

fn short(id: &str) -> &str {
    &id[..id.len().min(12)]
}

/// Checks every commit in `range` and the AGENTS.md file at its tip.
pub fn run_checks(range: &str, reader: &dyn RepositoryReader, policy: &GovernancePolicy) -> Result<Report> {
    let ids = reader.resolve_range(range)?;
    let metas: Vec<CommitMeta> = ids.iter().map(|id| reader.commit(id)).collect::<Result<_>>()?;
    let per_commit: Vec<Vec<Violation>> = metas
        .par_iter()
        .map(|meta| {
            let mut v = check_commit(meta, policy);
            v.extend(check_session_log(meta, policy, |p| reader.read_file(&meta.id, p)));
            v
        })
        .collect();

    let mut notes = Vec::new();
    let mut violations = Vec::new();
    let mut commits = Vec::with_capacity(metas.len());
    for (meta, v) in metas.iter().zip(per_commit) {
        let errors = v.iter().filter(|x| x.severity == Severity::Error).count();
        commits.push(CommitStatus {
            id: meta.id.clone(),
            subject: meta.subject().to_string(),
            errors,
            warnings: v.len() - errors,
            passed: errors == 0,
        });
        violations.extend(v);
    }
    match ids.last() {
        None => notes.push("no commits checked".to_string()),
        Some(tip) => match reader.read_file(tip, &policy.agents_md_path) {
            None => violations.push(policy.violation(
                rules::AGENTS_MD_MISSING,
                &policy.agents_md_path,
                format!("{} is not tracked at {}", policy.agents_md_path, short(tip)),
            )),
            Some(bytes) => violations.extend(check_agents_md(&String::from_utf8_lossy(&bytes), policy)),
        },
    }
    let exit_code = if violations.iter().any(|v| v.severity == Severity::Error) {
        EXIT_VIOLATIONS
    } else {
        EXIT_PASS
    };
    Ok(Report {
        range: range.to_string(),
        commits,
        violations,
        notes,
        exit_code,
    })
}

/// A commit in an [`InMemoryRepository`]. `files` lists paths written by the
/// commit; a `None` content deletes the path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureCommit {
    pub id: String,
    pub message: String,
    #[serde(default)]
    pub files: BTreeMap<String, Option<String>>,
}

/// Linear history held in memory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InMemoryRepository {
    pub commits: Vec<FixtureCommit>,
}

impl InMemoryRepository {
    pub fn new(commits: Vec<FixtureCommit>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &commits {
            if c.id.trim().is_empty() || !seen.insert(c.id.clone()) {
                return Err(Error::domain(format!("commit ids must be nonempty and unique: `{}`", c.id)));
            }
        }
        Ok(Self { commits })
    }

    /// Reads a TOML corpus with one `[[commits]]` table per commit.
    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Corpus {
            commits: Vec<TomlCommit>,
        }
        #[derive(Deserialize)]
        struct TomlCommit {
            id: String,
            message: String,
            #[serde(default)]
            files: BTreeMap<String, String>,
        }
        let corpus: Corpus = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(
            corpus
                .commits
                .into_iter()
                .map(|c| FixtureCommit {
                    id: c.id,
                    message: c.message,
                    files: c.files.into_iter().map(|(k, v)| (k, Some(v))).collect(),
                })
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    fn index(&self, id: &str) -> Result<usize> {
        self.commits
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::domain(format!("unknown revision `{id}`")))
    }
}

impl RepositoryReader for InMemoryRepository {
    /// Accepts `A..B` (after A up to and including B), `..B`, `A..` and a
    /// single id meaning everything up to it.
    fn resolve_range(&self, spec: &str) -> Result<Vec<String>> {
        let spec = spec.trim();
        let (start, end) = match spec.split_once("..") {
            Some((a, b)) => {
                let start = if a.is_empty() { 0 } else { self.index(a)? + 1 };
                let end = if b.is_empty() { self.commits.len() } else { self.index(b)? + 1 };
                (start, end)
            }
            None if spec.is_empty() => return Err(Error::domain("empty revision range")),
            None => (0, self.index(spec)? + 1),
        };
        Ok(self.commits[start.min(end)..end].iter().map(|c| c.id.clone()).collect())
    }

    fn commit(&self, id: &str) -> Result<CommitMeta> {
        let c = &self.commits[self.index(id)?];
        CommitMeta::new(c.id.clone(), c.message.clone(), c.files.keys().cloned().collect())
    }

    fn read_file(&self, id: &str, path: &str) -> Option<Vec<u8>> {
        let end = self.index(id).ok()?;
        self.commits[..=end]
            .iter()
            .rev()
            .find_map(|c| c.files.get(path))
            .and_then(|content| content.clone())
            .map(String::into_bytes)
    }
}

/// Reads history through the `git` command-line tool.
#[derive(Debug, Clone)]
pub struct GitRepository {
    root: PathBuf,
}

impl GitRepository {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let repo = Self { root: root.into() };
        repo.git(&["rev-parse", "--git-dir"])?;
        Ok(repo)
    }

    fn git(&self, args: &[&str]) -> Result<Vec<u8>> {
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.root)
            .args(args)
            .output()
            .map_err(|e| Error::io("git", e))?;
        if out.status.success() {
            Ok(out.stdout)
        } else {
            Err(Error::domain(format!(
                "git {}: {}",
                args.join(" "),
                String::from_utf8_lossy(&out.stderr).trim()
            )))
        }
    }
}

impl RepositoryReader for GitRepository {
    fn resolve_range(&self, spec: &str) -> Result<Vec<String>> {
        if spec.trim().is_empty() || spec.trim_start().starts_with('-') {
            return Err(Error::domain(format!("invalid revision range `{spec}`")));
        }
        let out = self.git(&["rev-list", "--reverse", spec.trim(), "--"])?;
        Ok(String::from_utf8_lossy(&out).lines().map(str::to_string).collect())
    }

    fn commit(&self, id: &str) -> Result<CommitMeta> {
        let message = String::from_utf8_lossy(&self.git(&["log", "-1", "--format=%B", id])?).into_owned();
        let changed = self.git(&["diff-tree", "--no-commit-id", "--name-only", "-r", "--root", id])?;
        let changed = String::from_utf8_lossy(&changed).lines().map(str::to_string).collect();
        CommitMeta::new(id, message.trim_end(), changed)
    }

    fn read_file(&self, id: &str, path: &str) -> Option<Vec<u8>> {
        self.git(&["show", &format!("{id}:{path}")]).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const COMPLIANT: &str = "Add solver\n\nBody text.\n\nAI-Assisted: yes\nAI-Tool: some-agent\nAI-Model: m-1\nIssue: #397\nSession-Log: logs/s1.jsonl";

    fn ids(v: &[Violation]) -> Vec<&str> {
        v.iter().map(|x| x.rule.as_str()).collect()
    }

    #[test]
    fn trailer_block_parsing() {
        let t = parse_trailers(COMPLIANT);
        assert_eq!(t.len(), 5);
        assert_eq!(t.get("ai-model"), Some("m-1"));
        assert!(parse_trailers("Subject only").is_empty());
        assert!(parse_trailers("Subject\n\nKey: value in body\n\nplain closing words").is_empty());
        let t = parse_trailers("S\n\nsee-also: a\nSEE-ALSO: b\n  continued");
        assert_eq!(t.get_all("See-Also").collect::<Vec<_>>(), vec!["a", "b continued"]);
        assert_eq!(t.iter().next().unwrap().0, "See-Also");
    }

    #[test]
    fn commit_rules() {
        let p = GovernancePolicy::default();
        let ok = CommitMeta::new("a", COMPLIANT, vec![]).unwrap();
        assert!(check_commit(&ok, &p).is_empty());
        let no_log = CommitMeta::new("b", COMPLIANT.replace("\nSession-Log: logs/s1.jsonl", ""), vec![]).unwrap();
        assert_eq!(ids(&check_commit(&no_log, &p)), vec![rules::SESSION_LOG_TRAILER_MISSING]);
        let human = CommitMeta::new("c", "Fix typo (#12)\n\nAI-Assisted: no", vec![]).unwrap();
        assert!(check_commit(&human, &p).is_empty());
        let bad = CommitMeta::new("d", "Tweak\n\nAI-Assisted: maybe", vec![]).unwrap();
        assert_eq!(ids(&check_commit(&bad, &p)), vec![rules::INVOLVEMENT_INVALID, rules::ISSUE_MISSING]);
        assert!(CommitMeta::new(" ", "x", vec![]).is_err());
    }

    #[test]
    fn session_log_rules() {
        let p = GovernancePolicy::default();
        let meta = CommitMeta::new("a", COMPLIANT, vec!["logs/s1.jsonl".into()]).unwrap();
        let good = "{\"a\":1}\n\n[1,2]\n\"x\"\n";
        assert!(check_session_log(&meta, &p, |_| Some(good.into())).is_empty());
        let v = check_session_log(&meta, &p, |_| None);
        assert_eq!(ids(&v), vec![rules::SESSION_LOG_NOT_FOUND]);
        let v = check_session_log(&meta, &p, |_| Some("{}\n{oops\n".into()));
        assert_eq!(ids(&v), vec![rules::SESSION_LOG_MALFORMED]);
        assert!(v[0].message.contains("line 2"));
        let txt = CommitMeta::new("b", COMPLIANT.replace(".jsonl", ".txt"), vec![]).unwrap();
        assert_eq!(ids(&check_session_log(&txt, &p, |_| Some("{}".into()))), vec![rules::SESSION_LOG_EXTENSION]);
    }

    #[test]
    fn agents_md_rules() {
        let p = GovernancePolicy::default();
        let doc = "# Agents\n### Provenance rules\n## Testing\ntext\n## Documentation\n# Task execution #\n";
        assert!(check_agents_md(doc, &p).is_empty());
        let v = check_agents_md("", &p);
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|x| x.severity == Severity::Warning));
        assert_eq!(check_agents_md("#Testing\ntesting in prose", &p).len(), 4);
    }

    #[test]
    fn policy_file_overrides() {
        let p = GovernancePolicy::from_toml(
            "[issue]\npattern = 'PROJ-\\d+'\n[severity]\nissue-reference-missing = \"warning\"\n[agents_md]\nrequired_sections = [\"review\"]\n",
        )
        .unwrap();
        assert!(p.issue_pattern.is_match("PROJ-7"));
        assert_eq!(p.severity(rules::ISSUE_MISSING), Severity::Warning);
        assert_eq!(p.agents_md_sections, vec!["review"]);
        assert!(GovernancePolicy::from_toml("[bogus]\n").is_err());
        assert!(GovernancePolicy::from_toml("[issue]\npattern = '('\n").is_err());
    }

    #[test]
    fn in_memory_ranges() {
        let c = |id: &str| FixtureCommit {
            id: id.into(),
            message: "m".into(),
            files: BTreeMap::new(),
        };
        let r = InMemoryRepository::new(vec![c("a"), c("b"), c("c")]).unwrap();
        assert_eq!(r.resolve_range("a..c").unwrap(), vec!["b", "c"]);
        assert_eq!(r.resolve_range("b").unwrap(), vec!["a", "b"]);
        assert_eq!(r.resolve_range("..").unwrap().len(), 3);
        assert!(r.resolve_range("c..c").unwrap().is_empty());
        assert!(r.resolve_range("x..c").is_err());
        assert!(InMemoryRepository::new(vec![c("a"), c("a")]).is_err());
    }

    proptest! {
        #[test]
        fn human_commits_never_need_tool_model_or_log(
            extra in proptest::collection::vec(("[A-Za-z][A-Za-z-]{0,10}", "[a-z0-9#]{1,8}"), 0..5),
            value in prop::sample::select(vec!["no", "No", "NO"]),
        ) {
            let mut msg = String::from("Subject\n\nAI-Assisted: ");
            msg.push_str(value);
            for (k, v) in &extra {
                msg.push_str(&format!("\n{k}: {v}"));
            }
            let meta = CommitMeta::new("x", msg, vec![]).unwrap();
            let p = GovernancePolicy::default();
            let v = check_commit(&meta, &p);
            let conditional = [rules::TOOL_MISSING, rules::MODEL_MISSING, rules::SESSION_LOG_TRAILER_MISSING];
            prop_assert!(v.iter().all(|x| !conditional.contains(&x.rule.as_str())));
            prop_assert_eq!(v.clone(), check_commit(&meta, &p));
        }
    }
}
