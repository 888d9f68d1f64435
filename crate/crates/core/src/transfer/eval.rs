//! Within-session cross-validation on frozen embeddings and the score table.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{Error, Result};
use crate::transfer::calibration::{is_applicable, sample_calibration, Analysis};
use crate::transfer::extractor::FrozenExtractor;
use crate::transfer::head::{fit_linear_head, Features, HeadOptions};
use crate::transfer::metrics::{accuracy, roc_auc};

pub const SCORE_COLUMNS: [&str; 9] = [
    "donor", "receiver", "subject", "session", "analysis", "k", "fold", "metric", "value",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub donor: String,
    pub receiver: String,
    pub subject: String,
    pub session: String,
    pub analysis: String,
    pub k: usize,
    pub fold: usize,
    pub metric: String,
    pub value: f64,
}

impl ScoreRecord {
    /// Canonical row order: every column but the value.
    pub fn sort_key(&self) -> (&str, &str, &str, &str, &str, usize, usize, &str) {
        (
            &self.donor,
            &self.receiver,
            &self.subject,
            &self.session,
            &self.analysis,
            self.k,
            self.fold,
            &self.metric,
        )
    }
}

pub fn sort_records(records: &mut [ScoreRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Who produced a cell's scores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordContext {
    pub donor: String,
    pub receiver: String,
    pub subject: String,
    pub session: String,
}

/// All trials of one session passed through an extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionEmbedding {
    pub features: Features,
    pub labels: Vec<usize>,
    pub class_vocab: Vec<String>,
}

impl SessionEmbedding {
    pub fn compute(extractor: &FrozenExtractor, session: &EpochSet) -> Result<Self> {
        Ok(SessionEmbedding {
            features: extractor.embed(session)?,
            labels: session.labels.clone(),
            class_vocab: session.class_vocab.clone(),
        })
    }

    /// Rows of the analysis classes with labels remapped to the analysis
    /// order, or `None` when a class is missing from the vocabulary.
    pub fn restrict(&self, analysis: Analysis) -> Option<(Features, Vec<usize>, Vec<String>)> {
        let present: Vec<String> = self
            .class_vocab
            .iter()
            .enumerate()
            .filter(|(c, _)| self.labels.contains(c))
            .map(|(_, name)| name.clone())
            .collect();
        let classes = analysis.classes_for(&present)?;
        let map: Vec<Option<usize>> = self
            .class_vocab
            .iter()
            .map(|c| classes.iter().position(|k| k == c))
            .collect();
        let rows: Vec<usize> = (0..self.labels.len()).filter(|&i| map[self.labels[i]].is_some()).collect();
        let labels = rows.iter().map(|&i| map[self.labels[i]].unwrap()).collect();
        Some((self.features.select(&rows), labels, classes))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellOutcome {
    pub records: Vec<ScoreRecord>,
    /// Folds without a score, with the reason.
    pub skipped_folds: Vec<(usize, String)>,
    /// Set when the cell does not participate at all.
    pub not_applicable: Option<String>,
}

/// Random generator of one fold: the cell seed selects the key, the fold
/// index the stream.
pub fn fold_rng(seed: u64, fold: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64);
    rng
}

/// Runs `n_folds` calibration/test splits on precomputed embeddings.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_cell(
    emb: &SessionEmbedding,
    ctx: &RecordContext,
    analysis: Analysis,
    k: usize,
    n_folds: usize,
    seed: u64,
    opts: &HeadOptions,
) -> Result<CellOutcome> {
    let Some((x, labels, classes)) = emb.restrict(analysis) else {
        return Ok(CellOutcome {
            not_applicable: Some(format!("receiver lacks classes for {analysis}")),
            ..Default::default()
        });
    };
    let n_classes = classes.len();
    let mut counts = vec![0; n_classes];
    for &l in &labels {
        counts[l] += 1;
    }
    if !is_applicable(&counts, k) {
        return Ok(CellOutcome {
            not_applicable: Some(format!("k = {k} with class counts {counts:?}")),
            ..Default::default()
        });
    }
    let mut out = CellOutcome::default();
    for fold in 0..n_folds {
        let split = sample_calibration(&labels, n_classes, k, &mut fold_rng(seed, fold))?;
        let calib_y: Vec<usize> = split.calib.iter().map(|&i| labels[i]).collect();
        let test_y: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
        let head = fit_linear_head(&x.select(&split.calib), &calib_y, n_classes, opts)?;
        let test_x = x.select(&split.test);
        let value = if analysis == Analysis::All {
            accuracy(&head.predict(&test_x), &test_y)
        } else {
            roc_auc(&head.binary_scores(&test_x)?, &test_y)
        };
        match value {
            Ok(value) => out.records.push(ScoreRecord {
                donor: ctx.donor.clone(),
                receiver: ctx.receiver.clone(),
                subject: ctx.subject.clone(),
                session: ctx.session.clone(),
                analysis: analysis.name().to_string(),
                k,
                fold,
                metric: analysis.metric_name().to_string(),
                value,
            }),
            Err(Error::UndefinedMetric(reason)) => {
                log::warn!("{ctx:?} {analysis} k={k} fold {fold} skipped: {reason}");
                out.skipped_folds.push((fold, reason));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Embeds the session once, then evaluates every fold.
#[allow(clippy::too_many_arguments)]
pub fn within_session_eval(
    extractor: &FrozenExtractor,
    session: &EpochSet,
    analysis: Analysis,
    k: usize,
    n_folds: usize,
    seed: u64,
    opts: &HeadOptions,
) -> Result<CellOutcome> {
    let emb = SessionEmbedding::compute(extractor, session)?;
    let ctx = RecordContext {
        donor: extractor.donor_id().to_string(),
        receiver: session.dataset_id.clone(),
        subject: session.subject_id.clone(),
        session: session.session_id.clone(),
    };
    evaluate_cell(&emb, &ctx, analysis, k, n_folds, seed, opts)
}

/// Score table text with a header row.
pub fn scores_to_csv(records: &[ScoreRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if records.is_empty() {
        w.write_record(SCORE_COLUMNS).map_err(csv_err)?;
    }
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("scores", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("scores", e)
}

/// Parses score table text; rows must carry the fixed column order.
pub fn scores_from_csv(text: &str, origin: &Path) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::format(origin, e))?;
    if header.iter().ne(SCORE_COLUMNS) {
        return Err(Error::format(origin, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        let rec: ScoreRecord = row.map_err(|e| Error::format(origin, e))?;
        if !(0.0..=1.0).contains(&rec.value) {
            return Err(Error::format(origin, format!("score {} outside [0, 1]", rec.value)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    crate::epochs::write_atomic(path, scores_to_csv(records)?.as_bytes())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scores_from_csv(&text, path)
}

/// Appends rows (no header) to an open score file.
pub fn append_scores(out: &mut impl Write, records: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("scores", e.to_string()))?;
    out.write_all(&bytes).map_err(|e| Error::io("scores", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(fold: usize, value: f64) -> ScoreRecord {
        ScoreRecord {
            donor: "A".into(),
            receiver: "B".into(),
            subject: "1".into(),
            session: "0".into(),
            analysis: "lh-rh".into(),
            k: 4,
            fold,
            metric: "roc_auc_rh".into(),
            value,
        }
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![record(0, 0.1 + 0.2), record(1, 1.0), record(2, 0.0)];
        let text = scores_to_csv(&recs).unwrap();
        assert!(text.starts_with("donor,receiver,subject,session,analysis,k,fold,metric,value\n"));
        assert_eq!(scores_from_csv(&text, Path::new("x")).unwrap(), recs);
        assert_eq!(scores_to_csv(&[]).unwrap().lines().count(), 1);
    }

    #[test]
    fn csv_rejects_bad_header_and_values() {
        assert!(scores_from_csv("a,b\n1,2\n", Path::new("x")).is_err());
        let text = scores_to_csv(&[record(0, 0.5)]).unwrap().replace("0.5", "1.5");
        assert!(scores_from_csv(&text, Path::new("x")).is_err());
    }

    fn blobs(n_per_class: usize) -> SessionEmbedding {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..3 * n_per_class {
            let c = i % 3;
            let jitter = ((i * 37) % 11) as f64 / 11.0;
            values.extend([c as f64 + jitter * 0.3, -(c as f64) + jitter * 0.2]);
            labels.push(c);
        }
        SessionEmbedding {
            features: Features::new(2, values).unwrap(),
            labels,
            class_vocab: ["lh", "rh", "f"].map(String::from).to_vec(),
        }
    }

    fn ctx() -> RecordContext {
        RecordContext {
            donor: "D".into(),
            receiver: "R".into(),
            subject: "1".into(),
            session: "0".into(),
        }
    }

    #[test]
    fn sixteen_records_per_valid_cell() {
        let out = evaluate_cell(&blobs(20), &ctx(), Analysis::RhF, 4, 16, 3, &HeadOptions::default()).unwrap();
        assert_eq!(out.records.len(), 16);
        assert!(out.records.iter().all(|r| r.metric == "roc_auc_f" && r.value > 0.9));
        let folds: Vec<usize> = out.records.iter().map(|r| r.fold).collect();
        assert_eq!(folds, (0..16).collect::<Vec<_>>());
        let all = evaluate_cell(&blobs(20), &ctx(), Analysis::All, 4, 16, 3, &HeadOptions::default()).unwrap();
        assert!(all.records.iter().all(|r| r.metric == "accuracy"));
    }

    #[test]
    fn oversized_k_not_applicable() {
        let out = evaluate_cell(&blobs(20), &ctx(), Analysis::LhRh, 20, 16, 3, &HeadOptions::default()).unwrap();
        assert!(out.records.is_empty() && out.not_applicable.is_some());
    }

    #[test]
    fn deterministic_in_seed() {
        let a = evaluate_cell(&blobs(10), &ctx(), Analysis::LhRh, 2, 16, 9, &HeadOptions::default()).unwrap();
        let b = evaluate_cell(&blobs(10), &ctx(), Analysis::LhRh, 2, 16, 9, &HeadOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
