//! Query refinement: retrieve similar training titles by keyword, prompt a
//! client with them, and iterate with good/bad example feedback, keeping the
//! candidate most similar to the retrieved titles.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::augment::{complete_with_retries, CompletionRequest, LlmClient, LlmError};
use crate::corpus::{tokenize, TfIdfIndex, MASK_TOKEN};

pub const T2S_INSTRUCTION: &str =
    "Rewrite the text query as a concise semantic query describing the brain activity it refers to. Use the similar studies as reference.";
pub const QUERY_LABEL: &str = "Query:";
pub const RETRIEVED_LABEL: &str = "Similar studies:";
pub const POSITIVE_LABEL: &str = "Good examples:";
pub const NEGATIVE_LABEL: &str = "Bad examples:";
pub const ANSWER_LABEL: &str = "Semantic query:";

#[derive(Debug, Clone)]
pub struct T2sConfig {
    pub retrieve_k: usize,
    pub iterations: usize,
    pub keyword_count: usize,
    pub max_tokens: u32,
    pub retries: u32,
}

impl Default for T2sConfig {
    fn default() -> Self {
        T2sConfig {
            retrieve_k: 5,
            iterations: 3,
            keyword_count: 8,
            max_tokens: 64,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub prompt: String,
    pub candidate: String,
    pub score: f64,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemanticQuery {
    pub original: String,
    pub keywords: Vec<String>,
    pub retrieved: Vec<String>,
    pub history: Vec<IterationRecord>,
    /// Position of the best candidate in `history`.
    pub best_index: usize,
}

impl SemanticQuery {
    pub fn best(&self) -> &IterationRecord {
        &self.history[self.best_index]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }
}

#[derive(Debug, Error)]
pub enum T2sError {
    #[error("retrieve_k must be at least 1")]
    InvalidConfig,
    #[error("no training sample shares vocabulary with the query")]
    NoRetrieval,
    #[error("cannot score against an empty retrieved set")]
    EmptyRetrieved,
    #[error("unknown retrieved id {0:?}")]
    UnknownId(String),
    #[error("client failed after {} completed iteration(s): {source}", partial.len())]
    Client {
        partial: Vec<IterationRecord>,
        #[source]
        source: LlmError,
    },
}

/// Distinct tokens of `text` ranked by tf·idf under the index, ties by
/// ascending token. Unknown tokens use the unseen-term idf; the masking
/// placeholder is never a keyword.
pub fn extract_keywords(index: &TfIdfIndex, text: &str, m: usize) -> Vec<String> {
    let mut tf: HashMap<String, usize> = HashMap::new();
    for t in tokenize(text).into_iter().filter(|t| t != MASK_TOKEN) {
        *tf.entry(t).or_default() += 1;
    }
    let mut scored: Vec<(String, f64)> = tf
        .into_iter()
        .map(|(t, c)| {
            let w = c as f64 * index.idf(&t);
            (t, w)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().take(m).map(|(t, _)| t).collect()
}

pub fn build_dynamic_prompt(
    query: &str,
    retrieved_titles: &[&str],
    positives: &[String],
    negatives: &[String],
) -> String {
    let mut p = format!("{T2S_INSTRUCTION}\n{QUERY_LABEL} {}\n", query.trim());
    let mut section = |label: &str, items: &mut dyn Iterator<Item = &str>| {
        let items: Vec<&str> = items.collect();
        if !items.is_empty() {
            p.push_str(label);
            p.push('\n');
            for i in items {
                p.push_str("- ");
                p.push_str(i.trim());
                p.push('\n');
            }
        }
    };
    section(RETRIEVED_LABEL, &mut retrieved_titles.iter().copied());
    section(POSITIVE_LABEL, &mut positives.iter().map(String::as_str));
    section(NEGATIVE_LABEL, &mut negatives.iter().map(String::as_str));
    p.push_str(ANSWER_LABEL);
    p
}

/// Mean cosine between the candidate and each retrieved document.
pub fn score_candidate(index: &TfIdfIndex, candidate: &str, retrieved: &[String]) -> Result<f64, T2sError> {
    if retrieved.is_empty() {
        return Err(T2sError::EmptyRetrieved);
    }
    let mut sum = 0.0;
    for id in retrieved {
        sum += index
            .similarity_to(candidate, id)
            .map_err(|_| T2sError::UnknownId(id.clone()))?;
    }
    Ok(sum / retrieved.len() as f64)
}

pub fn classify_example(score: f64, best_so_far: f64) -> Classification {
    if score > best_so_far {
        Classification::Positive
    } else {
        Classification::Negative
    }
}

pub fn refine_query(
    index: &TfIdfIndex,
    config: &T2sConfig,
    client: &dyn LlmClient,
    raw_query: &str,
) -> Result<SemanticQuery, T2sError> {
    if config.retrieve_k == 0 {
        return Err(T2sError::InvalidConfig);
    }
    let keywords = extract_keywords(index, raw_query, config.keyword_count);
    let retrieved: Vec<String> = index
        .search(&keywords.join(" "), config.retrieve_k)
        .into_iter()
        .map(|h| h.id)
        .collect();
    if retrieved.is_empty() {
        return Err(T2sError::NoRetrieval);
    }
    let titles: Vec<&str> = retrieved.iter().map(|id| index.text(id).unwrap_or("")).collect();

    let mut history: Vec<IterationRecord> = Vec::with_capacity(config.iterations + 1);
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut best = 0.0;
    let mut best_index = 0;
    for iteration in 0..=config.iterations {
        let prompt = build_dynamic_prompt(raw_query, &titles, &positives, &negatives);
        let req = CompletionRequest {
            prompt: prompt.clone(),
            max_tokens: config.max_tokens,
            temperature: 0.0,
            seed: Some(iteration as u64),
        };
        let candidate = match complete_with_retries(client, &req, config.retries) {
            Ok(c) => c.trim().to_string(),
            Err((_, source)) => return Err(T2sError::Client { partial: history, source }),
        };
        let score = score_candidate(index, &candidate, &retrieved)?;
        let classification = classify_example(score, best);
        match classification {
            Classification::Positive => {
                best = score;
                best_index = iteration;
                positives.push(candidate.clone());
            }
            Classification::Negative => negatives.push(candidate.clone()),
        }
        history.push(IterationRecord {
            iteration,
            prompt,
            candidate,
            score,
            classification,
        });
    }
    Ok(SemanticQuery {
        original: raw_query.to_string(),
        keywords,
        retrieved,
        history,
        best_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::MockClient;

    fn toy() -> TfIdfIndex {
        TfIdfIndex::build([
            ("a", "pain anticipation insula"),
            ("b", "pain empathy cingulate"),
            ("c", "visual motion area"),
            ("d", "pain in the brain"),
        ])
        .unwrap()
    }

    #[test]
    fn keywords_basic() {
        let ix = toy();
        assert!(extract_keywords(&ix, "", 8).is_empty());
        let all = extract_keywords(&ix, "pain visual pain", 10);
        assert_eq!(all.len(), 2);
        assert_eq!(extract_keywords(&ix, "mask insula mask", 8), ["insula"]);
    }

    #[test]
    fn rare_repeated_term_ranks_first() {
        let ix = toy();
        // insula: df 1, tf 2; pain: df 3, tf 1; the: df 1, tf 1
        let kw = extract_keywords(&ix, "pain insula the insula", 3);
        let w = |t: &str, tf: f64| tf * ix.idf(t);
        assert!(w("insula", 2.0) > w("the", 1.0) && w("the", 1.0) > w("pain", 1.0));
        assert_eq!(kw, ["insula", "the", "pain"]);
    }

    #[test]
    fn prompt_sections() {
        let p = build_dynamic_prompt("pain", &["t1"], &[], &[]);
        assert!(!p.contains(POSITIVE_LABEL) && !p.contains(NEGATIVE_LABEL));
        assert!(p.contains("- t1"));
        let p2 = build_dynamic_prompt("pain", &["t1"], &["good one".into()], &[]);
        let after = &p2[p2.find(POSITIVE_LABEL).unwrap()..];
        assert!(after.contains("- good one"));
        assert_eq!(p2, build_dynamic_prompt("pain", &["t1"], &["good one".into()], &[]));
    }

    #[test]
    fn scoring() {
        let ix = toy();
        let t = ix.text("a").unwrap().to_string();
        assert!((score_candidate(&ix, &t, &["a".into()]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(score_candidate(&ix, "visual motion", &["a".into(), "b".into()]).unwrap(), 0.0);
        let half = score_candidate(&ix, "visual motion area", &["c".into(), "a".into()]).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        assert!(matches!(score_candidate(&ix, "x", &[]), Err(T2sError::EmptyRetrieved)));
    }

    #[test]
    fn reordering_does_not_change_score() {
        let ix = toy();
        let ids = ["a".to_string(), "b".to_string()];
        let s1 = score_candidate(&ix, "pain insula empathy", &ids).unwrap();
        let s2 = score_candidate(&ix, "empathy pain insula", &ids).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn classification_is_strict() {
        assert_eq!(classify_example(0.4, 0.3), Classification::Positive);
        assert_eq!(classify_example(0.3, 0.3), Classification::Negative);
        assert_eq!(classify_example(0.0, 0.0), Classification::Negative);
    }

    #[test]
    fn refine_history_and_best() {
        let ix = toy();
        let client = MockClient::new();
        let cfg = T2sConfig { iterations: 0, ..Default::default() };
        let q = refine_query(&ix, &cfg, &client, "pain mask").unwrap();
        assert_eq!(q.history.len(), 1);
        assert_eq!(q.best_index, 0);

        let cfg = T2sConfig::default();
        let q = refine_query(&ix, &cfg, &client, "pain mask insula").unwrap();
        assert_eq!(q.history.len(), 4);
        let max = q.history.iter().map(|r| r.score).fold(f64::MIN, f64::max);
        assert_eq!(q.best().score, max);
        let first_max = q.history.iter().position(|r| r.score == max).unwrap();
        assert_eq!(q.best_index, first_max);
        assert_eq!(q, refine_query(&ix, &cfg, &client, "pain mask insula").unwrap());
        let json: serde_json::Value = serde_json::from_str(&q.to_json()).unwrap();
        assert_eq!(json["history"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let ix = toy();
        let err = refine_query(&ix, &T2sConfig::default(), &MockClient::new(), "mask mask").unwrap_err();
        assert!(matches!(err, T2sError::NoRetrieval));
    }

    #[test]
    fn client_failure_carries_partial_history() {
        struct FailSecond(std::sync::atomic::AtomicUsize);
        impl LlmClient for FailSecond {
            fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
                if self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst) >= 1 {
                    return Err(LlmError::Response("bad".into()));
                }
                MockClient::new().complete(req)
            }
            fn identifier(&self) -> String {
                "fail".into()
            }
        }
        let err = refine_query(&toy(), &T2sConfig::default(), &FailSecond(Default::default()), "pain").unwrap_err();
        match err {
            T2sError::Client { partial, .. } => assert_eq!(partial.len(), 1),
            other => panic!("{other:?}"),
        }
    }
}
