#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use critclust::gateway::{Backend, BackendError, FnBackend, GatewayConfig, ModelKind, Rule, Script};
use critclust::prompts::TextCriterion;

pub const CLASSES: [&str; 3] = ["bird", "cat", "dog"];

/// Fake PNGs under `root/<class>/`; the bytes are hashed, never decoded.
pub fn write_images(root: &Path, per_class: usize) {
    for class in CLASSES {
        let dir = root.join(class);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let mut bytes = b"\x89PNG\r\n\x1a\n".to_vec();
            bytes.extend_from_slice(format!("class={class} idx={i:04}").as_bytes());
            fs::write(dir.join(format!("{class}_{i:04}.png")), bytes).unwrap();
        }
    }
}

pub fn criterion() -> TextCriterion {
    TextCriterion {
        criterion_id: "animals".into(),
        description: "Animal species".into(),
        step1_prompt: "STEP1 Describe the main animal in the image.".into(),
        step2a_prompt: "STEP2A Name the animal described below. Answer in the format \"Answer: {animal}\".".into(),
        step2b_template: "STEP2B You are given [__LEN__] animal labels with counts. Cluster them into [__NUM_CLASSES_CLUSTER__] species, one per line as \"{index}: {species}\".".into(),
        step3_template: "STEP3 Choose the species of the animal from [__CLASSES__]. Answer in the format \"Answer: {species}\".".into(),
        k: 3,
    }
}

/// Same clustering prompts, reworded Step 3.
pub fn edited_criterion() -> TextCriterion {
    TextCriterion {
        criterion_id: "animals-v2".into(),
        step3_template: "STEP3 Which of [__CLASSES__] is the animal? Reply \"Answer: {species}\".".into(),
        ..criterion()
    }
}

fn description(class: &str) -> String {
    format!("The photo shows a {class} sitting in the sun.")
}

pub fn perfect_rules() -> Vec<Rule> {
    let mut rules = Vec::new();
    for class in CLASSES {
        rules.push(Rule::vlm(&format!("class={class} "), &description(class)));
        rules.push(Rule::llm(&["STEP2A", &format!("a {class} ")], &format!("Answer: {class}")));
        rules.push(Rule::llm(&["STEP3", &format!("a {class} ")], &format!("Answer: {class}")));
    }
    rules.push(Rule::llm(&["STEP2B"], "1: cat\n2: dog\n3: bird"));
    rules
}

pub fn perfect_script() -> Script {
    Script {
        vlm_model: "mock-vlm".into(),
        llm_model: "mock-llm".into(),
        prompt_budget: None,
        rules: perfect_rules(),
        default_response: None,
    }
}

/// Writes images, a criterion file and a mock script under `dir`.
pub struct Fixture {
    pub dir: PathBuf,
    pub images: PathBuf,
    pub criterion: PathBuf,
    pub script: PathBuf,
    pub store: PathBuf,
}

impl Fixture {
    pub fn new(dir: &Path, per_class: usize) -> Self {
        let images = dir.join("images");
        write_images(&images, per_class);
        let criterion = dir.join("criterion.toml");
        fs::write(&criterion, self::criterion().to_toml_string()).unwrap();
        let script = dir.join("script.json");
        fs::write(&script, serde_json::to_vec_pretty(&perfect_script()).unwrap()).unwrap();
        Fixture {
            dir: dir.to_path_buf(),
            images,
            criterion,
            script,
            store: dir.join("store"),
        }
    }

    pub fn backend_arg(&self) -> String {
        format!("mock:{}", self.script.display())
    }
}

/// Answers like the mock script, with a pause before every Step-3 call.
/// Descriptions name the image index, so no two Step-3 prompts coincide.
pub fn slow_step3_backend(delay: Duration) -> Arc<dyn Backend> {
    Arc::new(FnBackend::new(move |req| {
        let class = CLASSES.iter().find(|c| match req.kind {
            ModelKind::Vlm => req
                .image_bytes
                .as_ref()
                .is_some_and(|b| String::from_utf8_lossy(b).contains(&format!("class={c} "))),
            ModelKind::Llm => req.prompt.contains(&format!("a {c} ")),
        });
        if req.prompt.starts_with("STEP2B") {
            return Ok("1: cat\n2: dog\n3: bird".into());
        }
        let Some(class) = class else {
            return Err(BackendError::Rejected { status: 400, message: "unexpected request".into() });
        };
        Ok(match req.kind {
            ModelKind::Vlm => {
                let bytes = String::from_utf8_lossy(req.image_bytes.as_deref().unwrap()).into_owned();
                let idx = bytes.split("idx=").nth(1).unwrap_or("?").to_string();
                format!("{} Frame {idx}.", description(class))
            }
            ModelKind::Llm => {
                if req.prompt.starts_with("STEP3") {
                    std::thread::sleep(delay);
                }
                format!("Answer: {class}")
            }
        })
    }))
}

pub fn fast_config() -> GatewayConfig {
    GatewayConfig {
        base_backoff: Duration::from_millis(1),
        max_backoff: Duration::from_millis(4),
        ..GatewayConfig::default()
    }
}
