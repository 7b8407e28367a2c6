use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vizrec_core::llm::{Gateway, HttpProvider, LlmSettings, MockProvider, ResponseCache, DEFAULT_API_BASE};
use vizrec_core::pipeline::BootstrapConfig;
use vizrec_core::prompt::Templates;
use vizrec_core::retrieval::RetrievalConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Live API, no cache
    Live,
    /// Live API behind the on-disk response cache
    CachedLive,
    /// Scripted transcript
    Mock,
}

/// Everything a command needs besides its input and output paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `retrieval.seed` when set.
    pub seed: Option<u64>,
    pub backend: Backend,
    pub api_base: String,
    pub cache_dir: Option<PathBuf>,
    pub mock_transcript: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub retrieval: RetrievalConfig,
    pub bootstrap: BootstrapConfig,
    pub llm: LlmSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            backend: Backend::Live,
            api_base: DEFAULT_API_BASE.into(),
            cache_dir: None,
            mock_transcript: None,
            templates_dir: None,
            parallelism: 4,
            retrieval: RetrievalConfig::default(),
            bootstrap: BootstrapConfig::default(),
            llm: LlmSettings::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file, then dotted-path overrides.
    pub fn load(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut merged = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            if !doc.is_object() {
                bail!("config {} must be a JSON object", path.display());
            }
            merge(&mut merged, doc);
        }
        for (key, value) in overrides {
            set_path(&mut merged, key, value.clone())?;
        }
        let mut cfg: RunConfig = serde_json::from_value(merged).context("invalid configuration")?;
        if let Some(seed) = cfg.seed {
            cfg.retrieval.seed = seed;
        }
        cfg.retrieval.validate()?;
        cfg.bootstrap.validate()?;
        if cfg.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        Ok(cfg)
    }

    /// Builds the model backend. Fails fast on a missing credential or
    /// transcript so no work is done with an unusable backend.
    pub fn gateway(&self) -> Result<Gateway> {
        let cache = self.cache_dir.as_ref().map(|d| ResponseCache::open(d.clone())).transpose()?;
        Ok(match self.backend {
            Backend::Mock => {
                let path = self.mock_transcript.as_ref().context("backend mock needs --mock-transcript")?;
                Gateway::new(Box::new(MockProvider::from_transcript_file(path)?), cache)
            }
            Backend::Live => {
                if cache.is_some() {
                    warn!("backend live ignores --cache-dir; use cached-live to read and record the cache");
                }
                Gateway::new(Box::new(HttpProvider::from_env(&self.api_base)?), None)
            }
            Backend::CachedLive => {
                let cache = cache.context("backend cached-live needs --cache-dir")?;
                Gateway::new(Box::new(HttpProvider::from_env(&self.api_base)?), Some(cache))
            }
        })
    }

    pub fn templates(&self) -> Result<Templates> {
        Ok(match &self.templates_dir {
            Some(dir) => Templates::load_dir(dir)?,
            None => Templates::default(),
        })
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, dotted: &str, value: Value) -> Result<()> {
    let mut node = root;
    let mut parts = dotted.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = node.as_object_mut().with_context(|| format!("{dotted}: not an object above {part:?}"))?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part).or_insert_with(|| Value::Object(Default::default()));
    }
    bail!("empty configuration key")
}
