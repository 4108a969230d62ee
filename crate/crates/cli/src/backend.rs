use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context};
use critclust::gateway::{Backend, GatewayConfig, HttpBackend, ReplayBackend, ScriptedBackend};
use critclust::pipeline::RunStore;

/// `mock:<script.json>`, `replay:<transcript.jsonl>` or `live:<endpoints.toml>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock(PathBuf),
    Replay(PathBuf),
    Live(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let Some((scheme, path)) = s.split_once(':') else {
            bail!("backend {s:?} is not of the form mock:PATH, replay:PATH or live:PATH");
        };
        if path.is_empty() {
            bail!("backend {s:?} has an empty path");
        }
        let path = PathBuf::from(path);
        Ok(match scheme {
            "mock" => BackendSpec::Mock(path),
            "replay" => BackendSpec::Replay(path),
            "live" => BackendSpec::Live(path),
            other => bail!("unknown backend scheme {other:?}"),
        })
    }
}

impl BackendSpec {
    pub fn open(&self) -> anyhow::Result<Arc<dyn Backend>> {
        Ok(match self {
            BackendSpec::Mock(p) => {
                Arc::new(ScriptedBackend::load(p).with_context(|| format!("loading mock script {}", p.display()))?)
            }
            BackendSpec::Replay(p) => Arc::new(ReplayBackend::load(p)?),
            BackendSpec::Live(p) => Arc::new(HttpBackend::load(p)?),
        })
    }

    pub fn is_replay(&self) -> bool {
        matches!(self, BackendSpec::Replay(_))
    }
}

/// Gateway settings for a store. Replays skip the on-disk cache: answers
/// must come from the transcript alone.
pub fn gateway_config(store: &RunStore, spec: &BackendSpec, max_concurrency: usize, record: bool) -> GatewayConfig {
    let base = GatewayConfig {
        max_concurrency,
        record,
        ..GatewayConfig::default()
    };
    if spec.is_replay() {
        base
    } else {
        store.gateway_config(base)
    }
}
