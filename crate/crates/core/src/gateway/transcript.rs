use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ModelKind, ModelRequest, Sampling};
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::fsutil;

pub const TRANSCRIPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    transcript_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_key: Digest,
    pub kind: ModelKind,
    pub model_id: String,
    pub prompt: String,
    pub image_hash: Option<Digest>,
    pub sampling: Sampling,
    pub response_text: String,
}

impl TranscriptEntry {
    pub fn new(request_key: Digest, request: &ModelRequest, response_text: &str) -> Self {
        TranscriptEntry {
            request_key,
            kind: request.kind,
            model_id: request.model_id.clone(),
            prompt: request.prompt.clone(),
            image_hash: request.image_hash,
            sampling: request.sampling.clone(),
            response_text: response_text.to_string(),
        }
    }

    /// Key recomputed from the stored request fields.
    pub fn computed_key(&self) -> Digest {
        ModelRequest {
            kind: self.kind,
            model_id: self.model_id.clone(),
            prompt: self.prompt.clone(),
            image_hash: self.image_hash,
            image_bytes: None,
            sampling: self.sampling.clone(),
        }
        .key()
    }
}

/// Recorded request/response pairs, unique by key and kept sorted by key
/// so that concurrent recording still produces a byte-stable file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn from_entries(mut entries: Vec<TranscriptEntry>) -> Self {
        entries.sort_by(|a, b| a.request_key.cmp(&b.request_key));
        entries.dedup_by(|a, b| a.request_key == b.request_key);
        Transcript { entries }
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Combines two transcripts; entries of `other` win on key collisions.
    pub fn merge(&self, other: &Transcript) -> Transcript {
        let mut map: HashMap<Digest, TranscriptEntry> =
            self.entries.iter().map(|e| (e.request_key, e.clone())).collect();
        for e in &other.entries {
            map.insert(e.request_key, e.clone());
        }
        Transcript::from_entries(map.into_values().collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&Header {
            transcript_version: TRANSCRIPT_VERSION,
        })
        .expect("header serializes");
        out.push(b'\n');
        out.extend(fsutil::to_json_lines(&self.entries).expect("entries serialize"));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, source: &str) -> Result<Transcript> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Parse {
            path: source.to_string(),
            line: 1,
            message: "missing transcript header".into(),
        })?;
        let header: Header = serde_json::from_str(first).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: 1,
            message: format!("bad transcript header: {e}"),
        })?;
        if header.transcript_version != TRANSCRIPT_VERSION {
            return Err(Error::TranscriptVersion {
                found: header.transcript_version,
                expected: TRANSCRIPT_VERSION,
            });
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let entry: TranscriptEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Transcript::from_entries(entries))
    }

    pub fn load(path: &Path) -> Result<Transcript> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Transcript::parse(&text, &path.display().to_string())
    }
}

/// Answers exclusively from a transcript.
pub struct ReplayBackend {
    responses: HashMap<Digest, String>,
    vlm_model: String,
    llm_model: String,
}

impl ReplayBackend {
    pub fn new(transcript: &Transcript) -> Self {
        let model_for = |kind| {
            transcript
                .entries
                .iter()
                .find(|e| e.kind == kind)
                .map(|e| e.model_id.clone())
                .unwrap_or_default()
        };
        ReplayBackend {
            vlm_model: model_for(ModelKind::Vlm),
            llm_model: model_for(ModelKind::Llm),
            responses: transcript
                .entries
                .iter()
                .map(|e| (e.request_key, e.response_text.clone()))
                .collect(),
        }
    }

    /// Overrides the model ids reported for new requests.
    pub fn with_models(mut self, vlm: impl Into<String>, llm: impl Into<String>) -> Self {
        self.vlm_model = vlm.into();
        self.llm_model = llm.into();
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(ReplayBackend::new(&Transcript::load(path)?))
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn model_id(&self, kind: ModelKind) -> String {
        match kind {
            ModelKind::Vlm => self.vlm_model.clone(),
            ModelKind::Llm => self.llm_model.clone(),
        }
    }

    fn call(&self, request: &ModelRequest) -> std::result::Result<String, BackendError> {
        let key = request.key();
        self.responses
            .get(&key)
            .cloned()
            .ok_or(BackendError::ReplayMiss(key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, GatewayConfig, GatewayError};
    use std::sync::Arc;

    fn entry(prompt: &str, text: &str) -> TranscriptEntry {
        let req = ModelRequest::llm("llm-x", prompt, Sampling::default());
        TranscriptEntry::new(req.key(), &req, text)
    }

    #[test]
    fn round_trip_and_version_check() {
        let t = Transcript::from_entries(vec![entry("a", "1"), entry("b", "2")]);
        let text = String::from_utf8(t.to_bytes()).unwrap();
        assert!(text.starts_with("{\"transcript_version\":1}\n"));
        assert_eq!(Transcript::parse(&text, "t").unwrap(), t);
        for e in t.entries() {
            assert_eq!(e.computed_key(), e.request_key);
        }
        let bumped = text.replacen("\"transcript_version\":1", "\"transcript_version\":9", 1);
        match Transcript::parse(&bumped, "t") {
            Err(Error::TranscriptVersion { found: 9, expected: 1 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn replay_miss_names_key() {
        let t = Transcript::from_entries(vec![entry("known", "yes")]);
        let gw = Gateway::new(Arc::new(ReplayBackend::new(&t)), GatewayConfig::default());
        assert_eq!(gw.complete(&gw.llm_request("known".into())).unwrap().text, "yes");
        let req = gw.llm_request("unknown".into());
        let err = gw.complete(&req).unwrap_err();
        assert_eq!(err, GatewayError::ReplayMiss(req.key()));
        assert!(err.to_string().contains(&req.key().to_hex()));
    }
}
