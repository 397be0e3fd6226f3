//! Encyclopedia extracts used to prime object generation.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Duration;

use crate::skg::{slug, Scene};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub scene_id: String,
    pub source_url: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeMode {
    #[default]
    Offline,
    Live,
}

#[derive(Debug, Clone)]
pub struct KnowledgeFetcher {
    pub mode: KnowledgeMode,
    pub cache_dir: PathBuf,
    /// Summary endpoint; the URL-encoded title is appended.
    pub endpoint: String,
    pub max_chars: usize,
    pub timeout: Duration,
}

impl KnowledgeFetcher {
    pub fn offline() -> Self {
        Self::new(KnowledgeMode::Offline, PathBuf::from("cache/knowledge"))
    }

    pub fn new(mode: KnowledgeMode, cache_dir: PathBuf) -> Self {
        Self {
            mode,
            cache_dir,
            endpoint: "https://en.wikipedia.org/api/rest_v1/page/summary/".into(),
            max_chars: 4000,
            timeout: Duration::from_secs(20),
        }
    }

    fn cache_path(&self, scene: &Scene) -> PathBuf {
        self.cache_dir.join(format!("{}.json", slug(&scene.name)))
    }

    /// Returns up to three documents. Failures are logged and yield an empty
    /// list since augmentation is optional.
    pub fn fetch(&self, scene: &Scene) -> Vec<KnowledgeDoc> {
        if self.mode == KnowledgeMode::Offline {
            return Vec::new();
        }
        let path = self.cache_path(scene);
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(docs) = serde_json::from_str::<Vec<KnowledgeDoc>>(&text) {
                return docs;
            }
        }
        match self.fetch_live(scene) {
            Ok(docs) => {
                let write = std::fs::create_dir_all(&self.cache_dir).and_then(|_| {
                    std::fs::write(&path, serde_json::to_vec_pretty(&docs).expect("docs serialize"))
                });
                if let Err(e) = write {
                    log::warn!("knowledge cache write {}: {e}", path.display());
                }
                docs
            }
            Err(e) => {
                log::warn!("knowledge fetch for {:?} failed: {e}", scene.name);
                Vec::new()
            }
        }
    }

    fn fetch_live(&self, scene: &Scene) -> Result<Vec<KnowledgeDoc>, String> {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(self.timeout)).build().into();
        let title: String = scene
            .name
            .split_whitespace()
            .collect::<Vec<_>>()
            .join("_")
            .bytes()
            .map(|b| {
                if b.is_ascii_alphanumeric() || b == b'_' {
                    (b as char).to_string()
                } else {
                    format!("%{b:02X}")
                }
            })
            .collect();
        let url = format!("{}{}", self.endpoint, title);
        let body: serde_json::Value = agent
            .get(&url)
            .header("User-Agent", "spatialkg/0.1")
            .call()
            .map_err(|e| e.to_string())?
            .body_mut()
            .read_json()
            .map_err(|e| e.to_string())?;
        let extract = body.get("extract").and_then(|v| v.as_str()).unwrap_or("").trim();
        if extract.is_empty() {
            return Ok(Vec::new());
        }
        let source_url = body
            .pointer("/content_urls/desktop/page")
            .and_then(|v| v.as_str())
            .unwrap_or(&url)
            .to_string();
        Ok(vec![KnowledgeDoc {
            scene_id: scene.id.clone(),
            source_url,
            text: extract.chars().take(self.max_chars).collect(),
        }])
    }
}
