//! Training-text augmentation: five LLM-generated variants per study, a
//! prompt cache, and the cyclic schedule that decides which text a training
//! step sees.

mod cache;
mod http;
mod llm;
mod mock;
mod prompt;

pub use cache::{prompt_hash, AugCache, CacheEntry, DEFAULT_CACHE_FILE};
pub use http::{HttpChatClient, API_KEY_ENV};
pub use llm::{CompletionRequest, LlmClient, LlmError};
pub use mock::MockClient;
pub use prompt::{build_aug_prompt, instruction, AUG_HEADER};

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::StudyRecord;

/// The five generated text kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugVariantKind {
    /// Synonymous title, substantially reworded.
    TitleSynMajor,
    /// Synonymous title, minimally reworded.
    TitleSynMinor,
    Abstract,
    ExperimentDesign,
    Keywords,
}

impl AugVariantKind {
    pub const ALL: [AugVariantKind; 5] = [
        AugVariantKind::TitleSynMajor,
        AugVariantKind::TitleSynMinor,
        AugVariantKind::Abstract,
        AugVariantKind::ExperimentDesign,
        AugVariantKind::Keywords,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AugVariantKind::TitleSynMajor => "title_syn_major",
            AugVariantKind::TitleSynMinor => "title_syn_minor",
            AugVariantKind::Abstract => "abstract",
            AugVariantKind::ExperimentDesign => "experiment_design",
            AugVariantKind::Keywords => "keywords",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl std::fmt::Display for AugVariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            AugVariantKind::TitleSynMajor => "TitleSynMajor",
            AugVariantKind::TitleSynMinor => "TitleSynMinor",
            AugVariantKind::Abstract => "Abstract",
            AugVariantKind::ExperimentDesign => "ExperimentDesign",
            AugVariantKind::Keywords => "Keywords",
        };
        f.write_str(name)
    }
}

/// Which text of a study a training step feeds to the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TextSelector {
    Title,
    Variant(AugVariantKind),
}

const SCHEDULE: [TextSelector; 7] = [
    TextSelector::Title,
    TextSelector::Variant(AugVariantKind::TitleSynMajor),
    TextSelector::Variant(AugVariantKind::TitleSynMinor),
    TextSelector::Variant(AugVariantKind::Abstract),
    TextSelector::Variant(AugVariantKind::ExperimentDesign),
    TextSelector::Variant(AugVariantKind::Keywords),
    TextSelector::Title,
];

pub const SCHEDULE_PERIOD: usize = SCHEDULE.len();

/// Period-7 cycle: title, major synonym, minor synonym, abstract,
/// experiment design, keywords, title.
pub fn variant_schedule(step: u64) -> TextSelector {
    SCHEDULE[(step % SCHEDULE_PERIOD as u64) as usize]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub client: String,
    /// Unix seconds; zero for deterministic clients.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedStudy {
    pub study_id: String,
    pub variants: BTreeMap<AugVariantKind, String>,
    pub provenance: Provenance,
}

impl AugmentedStudy {
    /// Text for a schedule slot; falls back to the title when a variant is
    /// missing.
    pub fn text<'a>(&'a self, title: &'a str, selector: TextSelector) -> &'a str {
        match selector {
            TextSelector::Title => title,
            TextSelector::Variant(k) => self.variants.get(&k).map_or(title, String::as_str),
        }
    }
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("study {0:?} has an empty title")]
    EmptyTitle(String),
    #[error("client failed on {kind} after {attempts} attempt(s): {source}")]
    Client {
        kind: AugVariantKind,
        attempts: u32,
        #[source]
        source: LlmError,
    },
    #[error("client returned an empty completion for {0}")]
    EmptyCompletion(AugVariantKind),
    #[error("cache error: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct AugmentOptions {
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            retries: 2,
            max_tokens: 256,
            temperature: 0.0,
            seed: Some(0),
        }
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Produces all five variants, consulting the cache first. Each completion is
/// cached as soon as it arrives, so a failure part-way keeps earlier kinds.
pub fn augment_study(
    client: &dyn LlmClient,
    cache: &AugCache,
    study: &StudyRecord,
    opts: &AugmentOptions,
) -> Result<AugmentedStudy, AugmentError> {
    if study.title.trim().is_empty() {
        return Err(AugmentError::EmptyTitle(study.id.clone()));
    }
    let mut variants = BTreeMap::new();
    let mut clients: Vec<String> = Vec::new();
    let mut timestamp = 0;
    for kind in AugVariantKind::ALL {
        let prompt = build_aug_prompt(study, kind)?;
        let hash = prompt_hash(&prompt);
        let entry = match cache.get(&study.id, kind, &hash) {
            Some(e) => e,
            None => {
                let req = CompletionRequest {
                    prompt,
                    max_tokens: opts.max_tokens,
                    temperature: opts.temperature,
                    seed: opts.seed,
                };
                let text = complete_with_retries(client, &req, opts.retries)
                    .map_err(|(attempts, source)| AugmentError::Client {
                        kind,
                        attempts,
                        source,
                    })?;
                let text = text.trim().to_string();
                if text.is_empty() {
                    return Err(AugmentError::EmptyCompletion(kind));
                }
                let entry = CacheEntry {
                    study_id: study.id.clone(),
                    kind,
                    prompt_hash: hash,
                    completion: text,
                    client: client.identifier(),
                    timestamp: if client.is_deterministic() { 0 } else { now_unix() },
                };
                cache.put(entry.clone())?;
                entry
            }
        };
        if !clients.contains(&entry.client) {
            clients.push(entry.client.clone());
        }
        timestamp = timestamp.max(entry.timestamp);
        variants.insert(kind, entry.completion);
    }
    Ok(AugmentedStudy {
        study_id: study.id.clone(),
        variants,
        provenance: Provenance {
            client: clients.join("+"),
            timestamp,
        },
    })
}

pub(crate) fn complete_with_retries(
    client: &dyn LlmClient,
    req: &CompletionRequest,
    retries: u32,
) -> Result<String, (u32, LlmError)> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match client.complete(req) {
            Ok(t) => return Ok(t),
            Err(e) if attempt > retries || !e.is_retryable() => return Err((attempt, e)),
            Err(_) => continue,
        }
    }
}
