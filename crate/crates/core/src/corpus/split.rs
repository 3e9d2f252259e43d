use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let r = [self.train, self.val, self.test];
        let ok = r.iter().all(|v| v.is_finite() && *v >= 0.0)
            && (r.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::InvalidRatios(r))
        }
    }

    /// Floors each share, then hands leftovers to val and test alternately.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        // the epsilon absorbs representation error such as 0.6·10 = 5.999…
        let share = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let mut sizes = [share(self.train), share(self.val), share(self.test)];
        let mut assigned: usize = sizes.iter().sum();
        while assigned > n {
            // only reachable with ratios summing to slightly above 1
            let i = (0..3).rev().find(|&i| sizes[i] > 0).unwrap();
            sizes[i] -= 1;
            assigned -= 1;
        }
        let mut next = 1;
        while assigned < n {
            sizes[next] += 1;
            assigned += 1;
            next = if next == 1 { 2 } else { 1 };
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub ratios: SplitRatios,
    pub seed: u64,
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<Split> {
        self.assignment.get(id).copied()
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in self.assignment.values() {
            c[*s as usize] += 1;
        }
        c
    }
}

/// Sorts ids, shuffles them with a ChaCha8 stream seeded from `seed`
/// (Fisher–Yates via `SliceRandom::shuffle`), and cuts the shuffled list into
/// train, val and test blocks of [`SplitRatios::sizes`].
pub fn split_corpus(
    corpus: &Corpus,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment, CorpusError> {
    ratios.validate()?;
    let mut ids: Vec<&str> = corpus.ids().collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let [n_train, n_val, _] = ratios.sizes(ids.len());
    let assignment = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.to_string(), s)
        })
        .collect();
    Ok(SplitAssignment {
        ratios,
        seed,
        assignment,
    })
}
