//! Deterministic synthetic corpora: each study belongs to a concept cluster,
//! draws its title words from the cluster vocabulary and its peaks from
//! jittered cluster region centres.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, StudyRecord};
use crate::volgrid::PeakCoordinate;

#[derive(Debug, Clone, Copy)]
pub struct Concept {
    pub name: &'static str,
    pub vocabulary: &'static [&'static str],
    /// MNI millimetres.
    pub centers: &'static [[f64; 3]],
}

pub const CONCEPTS: [Concept; 8] = [
    Concept {
        name: "pain",
        vocabulary: &["pain", "nociceptive", "thermal", "noxious", "heat", "insula", "somatosensory", "painful"],
        centers: &[[38.0, 4.0, 4.0], [2.0, 20.0, 36.0], [-50.0, -24.0, 18.0]],
    },
    Concept {
        name: "working-memory",
        vocabulary: &["working", "memory", "load", "nback", "maintenance", "delay", "prefrontal", "updating"],
        centers: &[[-44.0, 30.0, 28.0], [-32.0, -56.0, 46.0], [40.0, 34.0, 30.0]],
    },
    Concept {
        name: "visual",
        vocabulary: &["visual", "faces", "objects", "fusiform", "occipital", "recognition", "scenes", "shapes"],
        centers: &[[40.0, -52.0, -18.0], [4.0, -86.0, 2.0], [-38.0, -74.0, -10.0]],
    },
    Concept {
        name: "motor",
        vocabulary: &["motor", "finger", "tapping", "movement", "handgrip", "execution", "grasping", "force"],
        centers: &[[-38.0, -22.0, 56.0], [-4.0, -6.0, 58.0], [18.0, -52.0, -22.0]],
    },
    Concept {
        name: "language",
        vocabulary: &["language", "speech", "reading", "semantic", "words", "comprehension", "sentences", "syntax"],
        centers: &[[-48.0, 16.0, 8.0], [-56.0, -44.0, 12.0], [-54.0, -8.0, -12.0]],
    },
    Concept {
        name: "reward",
        vocabulary: &["reward", "monetary", "incentive", "striatum", "gain", "valuation", "outcome", "gambling"],
        centers: &[[10.0, 10.0, -6.0], [-10.0, 10.0, -6.0], [2.0, 46.0, -8.0]],
    },
    Concept {
        name: "emotion",
        vocabulary: &["fear", "amygdala", "emotional", "threat", "aversive", "anxiety", "arousal", "negative"],
        centers: &[[22.0, -4.0, -18.0], [-22.0, -4.0, -18.0], [4.0, 40.0, 20.0]],
    },
    Concept {
        name: "auditory",
        vocabulary: &["auditory", "tones", "sounds", "music", "pitch", "listening", "acoustic", "melody"],
        centers: &[[52.0, -20.0, 6.0], [-52.0, -22.0, 6.0], [60.0, -30.0, 10.0]],
    },
];

/// Shared words that carry no cluster information.
const FILLER: &[&str] = &["task", "study", "healthy", "adults", "during", "effects", "network", "activity"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub studies: usize,
    /// Number of concepts used, at most `CONCEPTS.len()`.
    pub clusters: usize,
    pub concept_words: usize,
    pub filler_words: usize,
    /// Peaks per study, each near one of the cluster centres.
    pub peaks: usize,
    pub jitter_mm: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            studies: 50,
            clusters: 4,
            concept_words: 4,
            filler_words: 2,
            peaks: 3,
            jitter_mm: 6.0,
            seed: 0,
        }
    }
}

/// Study `i` belongs to concept `i % clusters`; ids are `syn-00000`, ...
pub fn synthetic_corpus(cfg: &SynthConfig) -> Corpus {
    let clusters = cfg.clusters.clamp(1, CONCEPTS.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let records = (0..cfg.studies)
        .map(|i| {
            let c = &CONCEPTS[i % clusters];
            let mut words: Vec<&str> = c
                .vocabulary
                .choose_multiple(&mut rng, cfg.concept_words.min(c.vocabulary.len()))
                .copied()
                .collect();
            words.extend(FILLER.choose_multiple(&mut rng, cfg.filler_words.min(FILLER.len())));
            words.shuffle(&mut rng);
            let coordinates = (0..cfg.peaks)
                .map(|p| {
                    let [x, y, z] = c.centers[p % c.centers.len()];
                    let mut j = || rng.random_range(-cfg.jitter_mm..=cfg.jitter_mm);
                    PeakCoordinate::new(x + j(), y + j(), z + j())
                })
                .collect();
            StudyRecord::new(format!("syn-{i:05}"), words.join(" "), coordinates)
        })
        .collect();
    Corpus::from_records(records).expect("generated ids are unique")
}

/// Cluster index of a generated study.
pub fn concept_of(index: usize, clusters: usize) -> usize {
    index % clusters.clamp(1, CONCEPTS.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    #[test]
    fn deterministic_and_sized() {
        let cfg = SynthConfig::default();
        let a = synthetic_corpus(&cfg);
        assert_eq!(a.len(), 50);
        assert_eq!(a, synthetic_corpus(&cfg));
        let b = synthetic_corpus(&SynthConfig { seed: 1, ..cfg });
        assert_ne!(a, b);
    }

    #[test]
    fn titles_use_cluster_vocabulary() {
        let cfg = SynthConfig { studies: 16, ..Default::default() };
        let c = synthetic_corpus(&cfg);
        for (i, r) in c.records().iter().enumerate() {
            let concept = &CONCEPTS[concept_of(i, cfg.clusters)];
            let toks = tokenize(&r.title);
            assert_eq!(toks.len(), 6);
            let own = toks.iter().filter(|t| concept.vocabulary.contains(&t.as_str())).count();
            assert_eq!(own, 4, "{}", r.title);
            assert_eq!(r.coordinates.len(), 3);
        }
    }

    #[test]
    fn vocabularies_are_disjoint() {
        let mut all: Vec<&str> = CONCEPTS.iter().flat_map(|c| c.vocabulary.iter().copied()).collect();
        all.extend(FILLER);
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn peaks_stay_near_centres() {
        let c = synthetic_corpus(&SynthConfig::default());
        for (i, r) in c.records().iter().enumerate() {
            let centres = CONCEPTS[concept_of(i, 4)].centers;
            for (p, pk) in r.coordinates.iter().enumerate() {
                let ctr = centres[p % centres.len()];
                for a in 0..3 {
                    assert!((pk.as_array()[a] - ctr[a]).abs() <= 6.0);
                }
            }
        }
    }
}
