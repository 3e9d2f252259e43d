//! Offline stand-in for a chat model. Output depends only on the prompt, so
//! the whole pipeline runs reproducibly without network access.

use std::collections::HashMap;
use std::hash::Hasher;

use fnv::FnvHasher;

use super::{AugVariantKind, CompletionRequest, LlmClient, LlmError};
use crate::corpus::{tokenize, MASK_TOKEN};
use crate::t2s::{ANSWER_LABEL, NEGATIVE_LABEL, POSITIVE_LABEL, QUERY_LABEL, RETRIEVED_LABEL};

const STOP_WORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "by", "during", "for", "from", "in", "into", "is", "of",
    "on", "or", "the", "to", "under", "versus", "vs", "with", "within",
];

const SYNONYMS: &[(&str, &str)] = &[
    ("activation", "response"),
    ("anticipation", "expectation"),
    ("attention", "attentional focus"),
    ("brain", "cerebral"),
    ("cognitive", "mental"),
    ("control", "regulation"),
    ("cortex", "cortical region"),
    ("decision", "choice"),
    ("detection", "recognition"),
    ("effects", "influence"),
    ("emotion", "affect"),
    ("emotional", "affective"),
    ("fear", "threat"),
    ("hand", "manual"),
    ("imaging", "neuroimaging"),
    ("language", "linguistic"),
    ("learning", "acquisition"),
    ("memory", "recall"),
    ("motor", "movement"),
    ("network", "circuit"),
    ("neural", "neuronal"),
    ("pain", "nociception"),
    ("perception", "sensing"),
    ("processing", "handling"),
    ("reading", "word recognition"),
    ("retrieval", "recollection"),
    ("reward", "incentive"),
    ("speech", "verbal production"),
    ("study", "investigation"),
    ("task", "paradigm"),
    ("visual", "vision"),
    ("working", "short term"),
];

const MAJOR_PREFIX: &[&str] = &["neural correlates of", "brain mechanisms underlying", "an imaging account of"];
const ABSTRACT_OPENING: &[&str] = &[
    "This functional imaging study examines",
    "We investigated",
    "Using fMRI we characterised",
];

fn is_stop(token: &str) -> bool {
    STOP_WORDS.contains(&token)
}

fn synonym(token: &str) -> Option<&'static str> {
    SYNONYMS.iter().find(|(w, _)| *w == token).map(|(_, s)| *s)
}

fn seed_of(text: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(text.as_bytes());
    h.finish()
}

/// Content tokens ranked by count, then by first appearance.
fn ranked_terms<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    let mut order = 0;
    for text in texts {
        for t in tokenize(text) {
            if is_stop(&t) || t == MASK_TOKEN {
                continue;
            }
            let e = counts.entry(t).or_insert((0, order));
            e.0 += 1;
            order += 1;
        }
    }
    let mut terms: Vec<_> = counts.into_iter().collect();
    terms.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    terms.into_iter().map(|(t, _)| t).collect()
}

/// Deterministic rule-based rewriter.
#[derive(Debug, Clone, Default)]
pub struct MockClient;

impl MockClient {
    pub fn new() -> Self {
        MockClient
    }

    fn augment(&self, kind: AugVariantKind, title: &str, seed: u64) -> String {
        let tokens = tokenize(title);
        let content: Vec<&str> = tokens.iter().map(String::as_str).filter(|t| !is_stop(t)).collect();
        let keywords = ranked_terms([title]);
        let pick = |options: &[&'static str]| options[(seed % options.len() as u64) as usize];
        match kind {
            AugVariantKind::TitleSynMajor => {
                let body: Vec<&str> = content.iter().map(|t| synonym(t).unwrap_or(t)).collect();
                format!("{} {}", pick(MAJOR_PREFIX), body.join(" "))
            }
            AugVariantKind::TitleSynMinor => {
                let mut swapped = false;
                let words: Vec<&str> = tokens
                    .iter()
                    .map(|t| match synonym(t) {
                        Some(s) if !swapped => {
                            swapped = true;
                            s
                        }
                        _ => t.as_str(),
                    })
                    .collect();
                let mut out = words.join(" ");
                if !swapped {
                    out.push_str(" revisited");
                }
                out
            }
            AugVariantKind::Abstract => {
                let focus = keywords.iter().take(3).cloned().collect::<Vec<_>>().join(", ");
                format!(
                    "{} {}. Participants performed a task engaging {}. Activation was compared against a matched baseline and reported in MNI152 space.",
                    pick(ABSTRACT_OPENING),
                    title.trim().to_lowercase(),
                    if focus.is_empty() { "the studied process".to_string() } else { focus }
                )
            }
            AugVariantKind::ExperimentDesign => {
                let main = keywords.first().map_or("the target process", String::as_str);
                format!(
                    "Block design contrasting {main} conditions with a control condition; healthy adult participants; whole-brain analysis of {}.",
                    content.join(" ")
                )
            }
            AugVariantKind::Keywords => keywords.iter().take(8).cloned().collect::<Vec<_>>().join(", "),
        }
    }

    fn semantic_query(&self, prompt: &str) -> String {
        let mut query = "";
        let mut retrieved = Vec::new();
        let mut examples = 0;
        let mut section = "";
        for line in prompt.lines() {
            if let Some(q) = line.strip_prefix(QUERY_LABEL) {
                query = q.trim();
                section = "";
            } else if line == RETRIEVED_LABEL || line == POSITIVE_LABEL || line == NEGATIVE_LABEL {
                section = line;
            } else if let Some(item) = line.strip_prefix("- ") {
                if section == RETRIEVED_LABEL {
                    retrieved.push(item);
                } else if !section.is_empty() {
                    examples += 1;
                }
            } else {
                section = "";
            }
        }
        let mut out: Vec<String> = Vec::new();
        for t in tokenize(query) {
            if t != MASK_TOKEN && !out.contains(&t) {
                out.push(t);
            }
        }
        let budget = 2 * (1 + examples);
        out.extend(
            ranked_terms(retrieved)
                .into_iter()
                .filter(|t| !tokenize(query).contains(t))
                .take(budget),
        );
        out.join(" ")
    }
}

impl LlmClient for MockClient {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let prompt = req.prompt.as_str();
        let field = |label: &str| {
            prompt
                .lines()
                .find_map(|l| l.strip_prefix(label))
                .map(str::trim)
        };
        if let (Some(tag), Some(title)) = (field("Variant:"), field("Title:")) {
            let kind = AugVariantKind::from_tag(tag)
                .ok_or_else(|| LlmError::Response(format!("unknown variant {tag:?}")))?;
            return Ok(self.augment(kind, title, seed_of(prompt)));
        }
        if prompt.trim_end().ends_with(ANSWER_LABEL) {
            return Ok(self.semantic_query(prompt));
        }
        Ok(ranked_terms([prompt]).into_iter().take(8).collect::<Vec<_>>().join(" "))
    }

    fn identifier(&self) -> String {
        "mock".to_string()
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::build_aug_prompt;
    use crate::corpus::StudyRecord;

    fn run(prompt: &str) -> String {
        MockClient::new().complete(&CompletionRequest::new(prompt)).unwrap()
    }

    #[test]
    fn variants_are_nonempty_and_stable() {
        let s = StudyRecord::new("a", "Working memory load in the prefrontal cortex", vec![]);
        for k in AugVariantKind::ALL {
            let p = build_aug_prompt(&s, k).unwrap();
            let a = run(&p);
            assert!(!a.is_empty());
            assert_eq!(a, run(&p));
        }
        let kw = run(&build_aug_prompt(&s, AugVariantKind::Keywords).unwrap());
        assert_eq!(kw, "working, memory, load, prefrontal, cortex");
        let minor = run(&build_aug_prompt(&s, AugVariantKind::TitleSynMinor).unwrap());
        assert_eq!(minor, "short term memory load in the prefrontal cortex");
    }

    #[test]
    fn semantic_query_restores_retrieved_vocabulary() {
        let prompt = format!(
            "Task.\n{QUERY_LABEL} pain mask insula\n{RETRIEVED_LABEL}\n- pain anticipation insula\n- pain empathy\n{ANSWER_LABEL}"
        );
        assert_eq!(run(&prompt), "pain insula anticipation empathy");
        let with_example = format!(
            "Task.\n{QUERY_LABEL} mask\n{RETRIEVED_LABEL}\n- a b c d e\n{POSITIVE_LABEL}\n- x\n{ANSWER_LABEL}"
        );
        assert_eq!(run(&with_example), "b c d e");
    }
}
