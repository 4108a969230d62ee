use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::error::Error;

/// Failure of a single item after the gateway's retry budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub kind: String,
    pub message: String,
}

impl ItemError {
    pub fn from_error(e: &Error) -> Self {
        ItemError {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }

    pub fn upstream(stage: Stage) -> Self {
        ItemError {
            kind: "upstream_failed".into(),
            message: format!("no usable {stage} output for this image"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub image_id: String,
    pub text: String,
    pub request_key: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ItemError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLabel {
    pub image_id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ItemError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Exact,
    Substring,
    Fuzzy,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub image_id: String,
    pub cluster_index: usize,
    pub matched_name: String,
    pub raw_answer: String,
    pub match_kind: MatchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ItemError>,
}

/// Next stage to execute; `Done` once assignments are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Step1,
    Step2a,
    Step2b,
    Step3,
    Done,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Step1, Stage::Step2a, Stage::Step2b, Stage::Step3, Stage::Done];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Step1 => "step1",
            Stage::Step2a => "step2a",
            Stage::Step2b => "step2b",
            Stage::Step3 => "step3",
            Stage::Done => "done",
        }
    }

    pub fn next(self) -> Stage {
        match self {
            Stage::Step1 => Stage::Step2a,
            Stage::Step2a => Stage::Step2b,
            Stage::Step2b => Stage::Step3,
            Stage::Step3 | Stage::Done => Stage::Done,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounter {
    pub done: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub total: u64,
    pub step1: StageCounter,
    pub step2a: StageCounter,
    /// Step-2b LLM calls, including K-enforcement retries and chunk parts.
    pub step2b_calls: u64,
    pub step3: StageCounter,
    pub step3_fallback: u64,
}
