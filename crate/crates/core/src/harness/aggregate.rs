//! Averaging scores into (donor, receiver, analysis, k) cells.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::transfer::ScoreRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Folds → sessions → subjects, each level an unweighted mean.
    #[default]
    Hierarchical,
    /// One mean over every score of the cell.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub donor: String,
    pub receiver: String,
    pub analysis: String,
    pub k: usize,
    pub mean: f64,
    pub n_scores: usize,
    pub n_subjects: usize,
    pub n_sessions: usize,
}

/// Mean of values summed in ascending order, so the result does not depend
/// on input order.
fn mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

type CellId = (String, String, String, usize);

pub fn aggregate(records: &[ScoreRecord], averaging: Averaging) -> Vec<AggregateCell> {
    // cell → subject → session → fold values
    let mut tree: BTreeMap<CellId, BTreeMap<&str, BTreeMap<&str, Vec<f64>>>> = BTreeMap::new();
    for r in records {
        tree.entry((r.donor.clone(), r.receiver.clone(), r.analysis.clone(), r.k))
            .or_default()
            .entry(&r.subject)
            .or_default()
            .entry(&r.session)
            .or_default()
            .push(r.value);
    }
    tree.into_iter()
        .map(|((donor, receiver, analysis, k), subjects)| {
            let n_sessions = subjects.values().map(BTreeMap::len).sum();
            let n_scores = subjects.values().flat_map(|s| s.values()).map(Vec::len).sum();
            let value = match averaging {
                Averaging::Hierarchical => mean(
                    subjects
                        .values()
                        .map(|sessions| mean(sessions.values().map(|f| mean(f.clone())).collect()))
                        .collect(),
                ),
                Averaging::Flat => mean(subjects.values().flat_map(|s| s.values()).flatten().copied().collect()),
            };
            AggregateCell {
                donor,
                receiver,
                analysis,
                k,
                mean: value,
                n_scores,
                n_subjects: subjects.len(),
                n_sessions,
            }
        })
        .collect()
}
