//! Enumeration of evaluation cells.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::catalog::Catalog;
use crate::harness::plan::{cell_seed, ExperimentPlan};
use crate::registry::Registry;
use crate::transfer::Analysis;

/// One (donor, receiver, analysis, k, subject, session) cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub donor: String,
    pub receiver: String,
    pub analysis: Analysis,
    pub k: usize,
    pub subject: String,
    pub session: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDescriptor {
    pub key: CellKey,
    pub seed: u64,
}

/// Applicable cells of the plan. A cell is kept when the receiver's
/// registry entry has every analysis class and strictly more than `k`
/// examples per class; subjects and sessions are those present on disk.
pub fn enumerate_runs(plan: &ExperimentPlan, registry: &Registry, catalog: &Catalog) -> Result<Vec<RunDescriptor>> {
    plan.validate()?;
    for d in &plan.donor_ids {
        registry.get(d)?;
    }
    let mut runs = Vec::new();
    for receiver in &plan.receiver_ids {
        registry.get(receiver)?;
        catalog.sessions(receiver)?;
    }
    for donor in &plan.donor_ids {
        for receiver in &plan.receiver_ids {
            let desc = registry.get(receiver)?;
            let sessions = catalog.sessions(receiver)?;
            for &analysis in &plan.analyses {
                if analysis.classes_for(&desc.class_vocab).is_none() {
                    continue;
                }
                for &k in &plan.k_values {
                    if desc.examples_per_cell <= k {
                        continue;
                    }
                    for s in sessions {
                        runs.push(RunDescriptor {
                            seed: cell_seed(plan.master_seed, donor, receiver, analysis, k, &s.subject, &s.session),
                            key: CellKey {
                                donor: donor.clone(),
                                receiver: receiver.clone(),
                                analysis,
                                k,
                                subject: s.subject.clone(),
                                session: s.session.clone(),
                            },
                        });
                    }
                }
            }
        }
    }
    Ok(runs)
}

/// Scores the runs should produce when no fold is skipped.
pub fn expected_scores(runs: &[RunDescriptor], n_folds: usize) -> usize {
    runs.len() * n_folds
}
