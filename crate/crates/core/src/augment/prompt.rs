use super::{AugVariantKind, AugmentError};
use crate::corpus::StudyRecord;

pub const AUG_HEADER: &str = "You are assisting with a neuroimaging literature dataset.";

/// The task sentence for one kind.
pub fn instruction(kind: AugVariantKind) -> &'static str {
    match kind {
        AugVariantKind::TitleSynMajor => {
            "Write a new title that is synonymous with the original title but uses significantly different wording."
        }
        AugVariantKind::TitleSynMinor => {
            "Write a new title that is synonymous with the original title and changes only a few words."
        }
        AugVariantKind::Abstract => "Write a short abstract that the study with this title would plausibly have.",
        AugVariantKind::ExperimentDesign => {
            "Describe the experimental design (task, participants, contrasts) the study with this title would plausibly use."
        }
        AugVariantKind::Keywords => "List the keywords that best summarize the title, separated by commas.",
    }
}

pub fn build_aug_prompt(study: &StudyRecord, kind: AugVariantKind) -> Result<String, AugmentError> {
    let title = study.title.trim();
    if title.is_empty() {
        return Err(AugmentError::EmptyTitle(study.id.clone()));
    }
    Ok(format!(
        "{AUG_HEADER}\nVariant: {}\nInstruction: {}\nTitle: {}\nAnswer with the requested text only.",
        kind.tag(),
        instruction(kind),
        title
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn rec(title: &str) -> StudyRecord {
        StudyRecord::new("s", title, vec![])
    }

    #[test]
    fn keywords_prompt_embeds_title_and_instruction() {
        let p = build_aug_prompt(&rec("pain processing"), AugVariantKind::Keywords).unwrap();
        assert!(p.contains("pain processing"));
        assert!(p.contains(instruction(AugVariantKind::Keywords)));
    }

    #[test]
    fn deterministic_and_distinct() {
        let r = rec("pain processing");
        let a = build_aug_prompt(&r, AugVariantKind::Abstract).unwrap();
        assert_eq!(a, build_aug_prompt(&r, AugVariantKind::Abstract).unwrap());
        let all: HashSet<_> = AugVariantKind::ALL
            .iter()
            .map(|&k| build_aug_prompt(&r, k).unwrap())
            .collect();
        assert_eq!(all.len(), 5);
    }

    #[test]
    fn empty_title_is_error() {
        assert!(matches!(
            build_aug_prompt(&rec(""), AugVariantKind::Keywords),
            Err(AugmentError::EmptyTitle(_))
        ));
    }
}
