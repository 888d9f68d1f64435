//! Analyses and calibration/test splits.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Analysis {
    #[serde(rename = "lh-rh")]
    LhRh,
    #[serde(rename = "rh-f")]
    RhF,
    #[serde(rename = "all")]
    All,
}

pub const ALL_ANALYSES: [Analysis; 3] = [Analysis::LhRh, Analysis::RhF, Analysis::All];

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Analysis::LhRh => "lh-rh",
            Analysis::RhF => "rh-f",
            Analysis::All => "all",
        }
    }

    /// Fixed class pair of a binary analysis; negative class first.
    pub fn binary_classes(self) -> Option<[&'static str; 2]> {
        match self {
            Analysis::LhRh => Some(["lh", "rh"]),
            Analysis::RhF => Some(["rh", "f"]),
            Analysis::All => None,
        }
    }

    /// Classes this analysis uses on a receiver with `vocab`, in label order,
    /// or `None` if the receiver lacks one of them.
    pub fn classes_for(self, vocab: &[String]) -> Option<Vec<String>> {
        match self.binary_classes() {
            Some(pair) => pair
                .iter()
                .all(|c| vocab.iter().any(|v| v == c))
                .then(|| pair.iter().map(|c| c.to_string()).collect()),
            None => (vocab.len() >= 2).then(|| vocab.to_vec()),
        }
    }

    /// Metric name carried by score records; binary analyses name their
    /// positive class.
    pub fn metric_name(self) -> &'static str {
        match self {
            Analysis::LhRh => "roc_auc_rh",
            Analysis::RhF => "roc_auc_f",
            Analysis::All => "accuracy",
        }
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Analysis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_ANALYSES
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid("analysis", format!("unknown analysis {s:?} (lh-rh, rh-f, all)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Ascending.
    pub calib: Vec<usize>,
    /// Ascending; every index not in `calib`.
    pub test: Vec<usize>,
}

/// Whether every class has strictly more than `k` examples.
pub fn is_applicable(class_counts: &[usize], k: usize) -> bool {
    !class_counts.is_empty() && class_counts.iter().all(|&c| c > k)
}

/// Draws `k` calibration examples per class uniformly without replacement;
/// the rest form the test set.
pub fn sample_calibration(labels: &[usize], n_classes: usize, k: usize, rng: &mut impl Rng) -> Result<Split> {
    if k == 0 {
        return Err(Error::invalid("k", "must be >= 1"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| Error::invalid("labels", format!("label {l} out of range")))?
            .push(i);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    if !is_applicable(&counts, k) {
        return Err(Error::NotApplicable(format!(
            "k = {k} needs more than {k} examples per class, have {counts:?}"
        )));
    }
    let mut in_calib = vec![false; labels.len()];
    for members in &by_class {
        for j in index::sample(rng, members.len(), k) {
            in_calib[members[j]] = true;
        }
    }
    let (calib, test) = (0..labels.len()).partition(|&i| in_calib[i]);
    Ok(Split { calib, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn split_sizes() {
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let s = sample_calibration(&labels, 2, 16, &mut rng()).unwrap();
        assert_eq!((s.calib.len(), s.test.len()), (32, 168));
        let s = sample_calibration(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2, 1, &mut rng()).unwrap();
        assert_eq!((s.calib.len(), s.test.len()), (2, 8));
    }

    #[test]
    fn strictly_more_than_k() {
        let labels: Vec<usize> = [vec![0; 20], vec![1; 16]].concat();
        assert!(matches!(
            sample_calibration(&labels, 2, 16, &mut rng()),
            Err(Error::NotApplicable(_))
        ));
        assert!(sample_calibration(&labels, 2, 15, &mut rng()).is_ok());
    }

    #[test]
    fn per_class_counts_and_partition() {
        let labels: Vec<usize> = (0..90).map(|i| (i * 7) % 3).collect();
        let s = sample_calibration(&labels, 3, 4, &mut rng()).unwrap();
        for c in 0..3 {
            assert_eq!(s.calib.iter().filter(|&&i| labels[i] == c).count(), 4);
        }
        let mut all = [s.calib.clone(), s.test.clone()].concat();
        all.sort();
        assert_eq!(all, (0..90).collect::<Vec<_>>());
    }

    #[test]
    fn analysis_classes() {
        let vocab: Vec<String> = ["f", "lh", "rh"].map(String::from).to_vec();
        assert_eq!(Analysis::LhRh.classes_for(&vocab).unwrap(), ["lh", "rh"]);
        assert_eq!(Analysis::RhF.classes_for(&vocab).unwrap(), ["rh", "f"]);
        assert_eq!(Analysis::All.classes_for(&vocab).unwrap(), vocab);
        let no_feet: Vec<String> = ["lh", "rh"].map(String::from).to_vec();
        assert!(Analysis::RhF.classes_for(&no_feet).is_none());
        assert_eq!("rh-f".parse::<Analysis>().unwrap(), Analysis::RhF);
        assert!("feet".parse::<Analysis>().is_err());
        assert_eq!(serde_json::to_string(&Analysis::LhRh).unwrap(), "\"lh-rh\"");
    }
}
