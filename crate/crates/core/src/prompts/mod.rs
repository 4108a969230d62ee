//! Prompt construction for the four pipeline steps, and parsing of model
//! output. Everything here is pure text manipulation.

mod presets;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use presets::{preset, preset_names, Preset, FAIRNESS_SENTENCE};

pub const LEN_PLACEHOLDER: &str = "__LEN__";
pub const K_PLACEHOLDER: &str = "__NUM_CLASSES_CLUSTER__";
pub const CLASSES_PLACEHOLDER: &str = "__CLASSES__";

/// Explanation of the dictionary notation used for raw-label counts.
pub const DICT_EXPLANATION: &str = "For example, if the input is given as \"{'a': 15, 'b': 25, 'c': 17}\", it means that the label 'a', 'b', and 'c' appeared 15, 25, 17 times in the data, respectively.";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CriterionError {
    #[error("{field} is missing placeholder {placeholder}")]
    MissingPlaceholder {
        field: &'static str,
        placeholder: &'static str,
    },
    #[error("K must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
}

#[derive(Debug, Deserialize)]
struct RawCriterion {
    criterion_id: String,
    #[serde(default)]
    description: String,
    step1_prompt: String,
    step2a_prompt: String,
    step2b_template: String,
    step3_template: String,
    k: usize,
}

/// The user's text criterion and the step prompts it parameterizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCriterion")]
pub struct TextCriterion {
    pub criterion_id: String,
    pub description: String,
    pub step1_prompt: String,
    pub step2a_prompt: String,
    pub step2b_template: String,
    pub step3_template: String,
    pub k: usize,
}

impl TryFrom<RawCriterion> for TextCriterion {
    type Error = CriterionError;

    fn try_from(r: RawCriterion) -> Result<Self, CriterionError> {
        let tc = TextCriterion {
            criterion_id: r.criterion_id,
            description: r.description,
            step1_prompt: r.step1_prompt,
            step2a_prompt: r.step2a_prompt,
            step2b_template: r.step2b_template,
            step3_template: r.step3_template,
            k: r.k,
        };
        tc.validate()?;
        Ok(tc)
    }
}

impl TextCriterion {
    pub fn validate(&self) -> Result<(), CriterionError> {
        if self.k < 2 {
            return Err(CriterionError::KTooSmall(self.k));
        }
        for (field, value) in [
            ("step1_prompt", &self.step1_prompt),
            ("step2a_prompt", &self.step2a_prompt),
        ] {
            if value.trim().is_empty() {
                return Err(CriterionError::EmptyField(field));
            }
        }
        for placeholder in [LEN_PLACEHOLDER, K_PLACEHOLDER] {
            if !self.step2b_template.contains(placeholder) {
                return Err(CriterionError::MissingPlaceholder {
                    field: "step2b_template",
                    placeholder,
                });
            }
        }
        if !self.step3_template.contains(CLASSES_PLACEHOLDER) {
            return Err(CriterionError::MissingPlaceholder {
                field: "step3_template",
                placeholder: CLASSES_PLACEHOLDER,
            });
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse {
            path: "<criterion>".into(),
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("criterion serializes")
    }

    /// Loads a criterion document; `.json` files are read as JSON, anything
    /// else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message,
        })
    }
}

/// Replaces `[NAME]` and then any bare `NAME` with `value`.
fn substitute(template: &str, placeholder: &str, value: &str) -> String {
    template
        .replace(&format!("[{placeholder}]"), value)
        .replace(placeholder, value)
}

/// Step-2b prompt for a dictionary of `dict_len` entries.
pub fn render_step2b(tc: &TextCriterion, dict_len: usize) -> Result<String> {
    if dict_len == 0 {
        return Err(Error::InvalidArgument(
            "step-2b prompt needs a non-empty dictionary".into(),
        ));
    }
    let out = substitute(&tc.step2b_template, LEN_PLACEHOLDER, &dict_len.to_string());
    let mut out = substitute(&out, K_PLACEHOLDER, &tc.k.to_string());
    if !out.contains(DICT_EXPLANATION) {
        out.push_str("\n\n");
        out.push_str(DICT_EXPLANATION);
    }
    Ok(out)
}

/// `["a", "b"]`, in cluster order.
pub fn quoted_list(names: &[String]) -> String {
    let items: Vec<String> = names
        .iter()
        .map(|n| format!("\"{}\"", n.replace('\\', "\\\\").replace('"', "\\\"")))
        .collect();
    format!("[{}]", items.join(", "))
}

pub fn render_step3(tc: &TextCriterion, clusters: &ClusterSet) -> Result<String> {
    if clusters.len() != tc.k {
        return Err(Error::InvalidArgument(format!(
            "criterion asks for {} clusters but the cluster set has {}",
            tc.k,
            clusters.len()
        )));
    }
    Ok(substitute(
        &tc.step3_template,
        CLASSES_PLACEHOLDER,
        &quoted_list(clusters.names()),
    ))
}

/// Appends a per-image input (description) to a step prompt.
pub fn with_input(prompt: &str, input: &str) -> String {
    format!("{prompt}\n\n\"\"\"\n{input}\n\"\"\"")
}

/// True if any placeholder token survives in rendered text.
pub fn has_placeholder(text: &str) -> bool {
    [LEN_PLACEHOLDER, K_PLACEHOLDER, CLASSES_PLACEHOLDER]
        .iter()
        .any(|p| text.contains(p))
}

fn strip_wrapping(mut s: &str) -> &str {
    const TRAILING: &[char] = &['.', ',', ';', ':', '!', '?'];
    const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];
    loop {
        let before = s;
        s = s.trim();
        s = s.trim_end_matches(TRAILING);
        if let Some(inner) = s
            .strip_prefix(QUOTES)
            .and_then(|t| t.strip_suffix(QUOTES))
        {
            s = inner;
        }
        if s == before {
            return s;
        }
    }
}

/// Offset just past a line-initial `Answer:` marker, ignoring leading
/// whitespace, quotes and markdown emphasis.
fn marker_end(line: &str) -> Option<usize> {
    let lead = line.len() - line.trim_start_matches([' ', '\t', '"', '\'', '*', '`']).len();
    let rest = &line[lead..];
    let head = rest.get(..7)?;
    if !head.eq_ignore_ascii_case("answer:") {
        return None;
    }
    let mut end = lead + 7;
    // "**Answer:**" style emphasis after the colon
    end += line[end..].len() - line[end..].trim_start_matches('*').len();
    Some(end)
}

/// The text after the last line-initial `Answer:` marker, trimmed and with
/// trailing punctuation and surrounding quotes removed. Without a marker
/// the whole text is returned, trimmed the same way.
pub fn extract_answer(response_text: &str) -> String {
    let lines: Vec<&str> = response_text.lines().collect();
    for (i, line) in lines.iter().enumerate().rev() {
        if let Some(end) = marker_end(line) {
            let mut answer = strip_wrapping(&line[end..]);
            if answer.is_empty() {
                // marker alone on its line; take the next non-empty line
                if let Some(next) = lines[i + 1..].iter().find(|l| !l.trim().is_empty()) {
                    answer = strip_wrapping(next);
                }
            }
            return answer.to_string();
        }
    }
    strip_wrapping(response_text).to_string()
}

/// Lowercase, collapse whitespace, drop leading articles and trailing
/// periods. Applied to a fixpoint, so it is idempotent.
pub fn normalize_label(raw: &str) -> String {
    let mut s = raw
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    loop {
        let before = s.clone();
        for article in ["a ", "an ", "the "] {
            if let Some(rest) = s.strip_prefix(article) {
                s = rest.to_string();
            }
        }
        s = s.trim_end_matches('.').trim_end().to_string();
        if s == before {
            return s;
        }
    }
}

/// Ordered list of unique, normalized, non-empty cluster names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClusterSet {
    names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusterSetError {
    #[error("cluster set is empty")]
    Empty,
    #[error("cluster name {0:?} is empty after normalization")]
    EmptyName(String),
    #[error("duplicate cluster name {0:?}")]
    Duplicate(String),
}

impl ClusterSet {
    /// Normalizes each name; rejects empties and duplicates.
    pub fn new<I, S>(names: I) -> Result<Self, ClusterSetError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for raw in names {
            let name = normalize_label(raw.as_ref());
            if name.is_empty() {
                return Err(ClusterSetError::EmptyName(raw.as_ref().to_string()));
            }
            if !seen.insert(name.clone()) {
                return Err(ClusterSetError::Duplicate(name));
            }
            out.push(name);
        }
        if out.is_empty() {
            return Err(ClusterSetError::Empty);
        }
        Ok(ClusterSet { names: out })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for ClusterSet {
    type Error = ClusterSetError;

    fn try_from(v: Vec<String>) -> Result<Self, ClusterSetError> {
        ClusterSet::new(v)
    }
}

impl From<ClusterSet> for Vec<String> {
    fn from(c: ClusterSet) -> Self {
        c.names
    }
}

/// A cluster-list response that did not yield exactly K unique names.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseFailure {
    pub required: usize,
    /// Number of `index: name` lines found.
    pub found: usize,
    /// Number of distinct names among them.
    pub unique: usize,
    pub offending_lines: Vec<String>,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "expected {} clusters, found {} ({} unique)",
            self.required, self.found, self.unique
        )
    }
}

impl ParseFailure {
    /// Corrective sentence appended to the next attempt's prompt.
    pub fn corrective_message(&self) -> String {
        let mut msg = format!(
            "Your previous answer listed {} clusters ({} unique), but exactly {} are required.",
            self.found, self.unique, self.required
        );
        if !self.offending_lines.is_empty() {
            msg.push_str(" Problematic lines: ");
            msg.push_str(&self.offending_lines.join(" | "));
            msg.push('.');
        }
        msg.push_str(&format!(
            " Please output exactly {k} lines in the format \"{{index}}: {{name}}\", where {{index}} ranges from 1 to {k}, with no duplicate names.",
            k = self.required
        ));
        msg
    }
}

/// `(index, name)` from `3: name`, `Answer 3: name` or `Answer3: name`.
fn parse_index_line(line: &str) -> Option<(usize, &str)> {
    let mut rest = line.trim().trim_start_matches(['*', '-', ' ']);
    if rest.len() >= 6 && rest[..6].eq_ignore_ascii_case("answer") {
        rest = rest[6..].trim_start();
    }
    let digits = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let index = rest[..digits].parse().ok()?;
    let after = rest[digits..].trim_start();
    let name = after.strip_prefix(':')?;
    Some((index, name.trim().trim_matches('*').trim()))
}

/// Parses an `index: name` list. Succeeds iff there are exactly `k` lines
/// with indices `1..=k` in order and `k` distinct non-empty names.
pub fn parse_cluster_list(response_text: &str, k: usize) -> Result<ClusterSet, ParseFailure> {
    let entries: Vec<(usize, &str, &str)> = response_text
        .lines()
        .filter_map(|l| parse_index_line(l).map(|(i, n)| (i, n, l)))
        .collect();

    let mut names = Vec::new();
    let mut seen = HashSet::new();
    let mut offending = Vec::new();
    for (pos, (index, raw_name, line)) in entries.iter().enumerate() {
        let name = normalize_label(extract_answer(raw_name).as_str());
        let bad_index = *index != pos + 1;
        if name.is_empty() || bad_index || !seen.insert(name.clone()) {
            offending.push(line.trim().to_string());
            continue;
        }
        names.push(name);
    }

    if entries.len() == k && names.len() == k && offending.is_empty() {
        if let Ok(set) = ClusterSet::new(&names) {
            return Ok(set);
        }
    }
    if entries.len() > k {
        offending.extend(entries[k..].iter().map(|e| e.2.trim().to_string()));
        offending.dedup();
    }
    Err(ParseFailure {
        required: k,
        found: entries.len(),
        unique: seen.len(),
        offending_lines: offending,
    })
}
