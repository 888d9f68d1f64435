//! Running a plan: pretraining (cached), embedding (cached), scoring,
//! resumable output.
//!
//! Output directory layout:
//!
//! ```text
//! scores.csv         score table, canonical row order once the run ends
//! progress.jsonl     one line per finished cell: key, record count, status
//! summary.json       counts of the last run
//! plan.toml          the plan as executed
//! cache/extractors/  trunk checkpoints keyed by donor data and settings
//! cache/embeddings/  per (extractor, session, preprocessing) embeddings
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::epochs::{data_bytes, f32_from_le_bytes, load_epochs, write_atomic, EpochSet};
use crate::error::{Error, Result};
use crate::harness::catalog::{Catalog, SessionRef};
use crate::harness::plan::{pretrain_seed, ExperimentPlan};
use crate::harness::runs::{enumerate_runs, expected_scores, CellKey, RunDescriptor};
use crate::preprocess::{preprocess_pipeline, PreprocessConfig};
use crate::transfer::eval::{append_scores, scores_from_csv, sort_records, write_scores};
use crate::transfer::{evaluate_cell, pretrain_donor, Features, FrozenExtractor, RecordContext, ScoreRecord, SessionEmbedding};

pub const SCORES_FILE: &str = "scores.csv";
pub const PROGRESS_FILE: &str = "progress.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone)]
pub struct ExecuteOptions {
    pub out_dir: PathBuf,
    pub data_root: PathBuf,
    /// Worker threads; 0 picks the number of CPUs.
    pub jobs: usize,
    /// Defaults to `{out_dir}/cache`.
    pub cache_dir: Option<PathBuf>,
}

impl ExecuteOptions {
    fn cache(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub expected_cells: usize,
    pub expected_scores: usize,
    /// Cells already finished by an earlier run.
    pub resumed_cells: usize,
    pub completed_cells: usize,
    pub records_total: usize,
    pub not_applicable: Vec<(CellKey, String)>,
    pub skipped_folds: Vec<(CellKey, usize, String)>,
    pub failed: Vec<(CellKey, String)>,
    pub extractor_cache_hits: usize,
    pub embedding_cache_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProgressLine {
    cell: CellKey,
    records: usize,
    status: String,
}

fn record_cell(r: &ScoreRecord) -> Option<CellKey> {
    Some(CellKey {
        donor: r.donor.clone(),
        receiver: r.receiver.clone(),
        analysis: r.analysis.parse().ok()?,
        k: r.k,
        subject: r.subject.clone(),
        session: r.session.clone(),
    })
}

/// Text up to and including the last newline; a torn final line is dropped.
fn complete_lines(text: &str) -> &str {
    match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    }
}

/// Finished cells and their records, reconciled between the progress log
/// and the score file. A cell counts as finished only when the score file
/// holds exactly the number of records the log promises.
fn load_previous(out: &Path) -> Result<(BTreeMap<CellKey, ProgressLine>, Vec<ScoreRecord>)> {
    let progress_path = out.join(PROGRESS_FILE);
    let scores_path = out.join(SCORES_FILE);
    let mut progress = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(&progress_path) {
        for line in complete_lines(&text).lines() {
            match serde_json::from_str::<ProgressLine>(line) {
                Ok(p) => {
                    progress.insert(p.cell.clone(), p);
                }
                Err(e) => log::warn!("ignoring progress line {line:?}: {e}"),
            }
        }
    }
    let mut records = Vec::new();
    if let Ok(text) = fs::read_to_string(&scores_path) {
        let body = complete_lines(&text);
        if !body.is_empty() {
            records = scores_from_csv(body, &scores_path)?;
        }
    }
    let mut counts: HashMap<CellKey, usize> = HashMap::new();
    for r in &records {
        if let Some(c) = record_cell(r) {
            *counts.entry(c).or_default() += 1;
        }
    }
    progress.retain(|cell, p| counts.get(cell).copied().unwrap_or(0) == p.records);
    records.retain(|r| record_cell(r).is_some_and(|c| progress.contains_key(&c)));
    Ok((progress, records))
}

fn sha_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("settings serialize")
}

fn load_and_preprocess(s: &SessionRef, cfg: &PreprocessConfig) -> Result<(EpochSet, String)> {
    let raw = load_epochs(&s.dir)?;
    let checksum = raw.checksum();
    let mut set = preprocess_pipeline(&raw, cfg)?;
    // identity comes from the directory layout
    set.dataset_id = s.dataset.clone();
    set.subject_id = s.subject.clone();
    set.session_id = s.session.clone();
    Ok((set, checksum))
}

struct Shared<'a> {
    plan: &'a ExperimentPlan,
    catalog: &'a Catalog,
    cache: PathBuf,
    extractor_hits: Mutex<usize>,
    embedding_hits: Mutex<usize>,
}

impl Shared<'_> {
    fn extractor(&self, donor: &str) -> Result<FrozenExtractor> {
        let plan = self.plan;
        let refs = self.catalog.sessions(donor)?;
        let mut sessions = Vec::with_capacity(refs.len());
        let mut checksums = Vec::with_capacity(refs.len());
        for r in refs {
            let raw = load_epochs(&r.dir)?;
            checksums.push(raw.checksum());
            sessions.push(raw);
        }
        let train = crate::net::TrainConfig {
            seed: pretrain_seed(plan.master_seed, donor),
            ..plan.train.clone()
        };
        let key = sha_hex(&[
            donor.as_bytes(),
            checksums.join(",").as_bytes(),
            &json(&plan.preprocess),
            &json(&plan.net),
            &json(&train),
        ]);
        let dir = self.cache.join("extractors").join(&key);
        if dir.exists() {
            match FrozenExtractor::load(&dir) {
                Ok(e) => {
                    *self.extractor_hits.lock().unwrap() += 1;
                    log::info!("{donor}: using cached extractor {key}");
                    return Ok(e);
                }
                Err(e) => log::warn!("{donor}: cached extractor unusable ({e}), retraining"),
            }
        }
        let mut pre = Vec::with_capacity(sessions.len());
        for (raw, r) in sessions.iter().zip(refs) {
            let mut set = preprocess_pipeline(raw, &plan.preprocess)?;
            set.dataset_id = r.dataset.clone();
            pre.push(set);
        }
        let (extractor, _) = pretrain_donor(&pre, &plan.net, &train)?;
        extractor.save(&dir)?;
        Ok(extractor)
    }

    fn embedding(&self, ex: &FrozenExtractor, set: &EpochSet, session_checksum: &str) -> Result<SessionEmbedding> {
        let key = sha_hex(&[
            ex.checksum().as_bytes(),
            session_checksum.as_bytes(),
            &json(&self.plan.preprocess),
        ]);
        let dir = self.cache.join("embeddings");
        let meta_path = dir.join(format!("{key}.json"));
        let blob_path = dir.join(format!("{key}.bin"));
        if meta_path.exists() {
            match read_embedding(&meta_path, &blob_path) {
                Ok(e) if e.labels == set.labels && e.class_vocab == set.class_vocab => {
                    *self.embedding_hits.lock().unwrap() += 1;
                    return Ok(e);
                }
                Ok(_) => log::warn!("embedding cache {key} disagrees with session labels, recomputing"),
                Err(e) => log::warn!("embedding cache {key} unusable ({e}), recomputing"),
            }
        }
        let emb32 = ex.embed_tensor(&crate::net::eegnet::epochs_tensor(set)?)?;
        let blob = data_bytes(emb32.values());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_atomic(&blob_path, &blob)?;
        let meta = EmbeddingMeta {
            dim: ex.embedding_dim(),
            labels: set.labels.clone(),
            class_vocab: set.class_vocab.clone(),
            sha256: hex::encode(Sha256::digest(&blob)),
        };
        write_atomic(&meta_path, &json(&meta))?;
        Ok(SessionEmbedding {
            features: Features::new(meta.dim, emb32.values().iter().map(|&v| v as f64).collect())?,
            labels: meta.labels,
            class_vocab: meta.class_vocab,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingMeta {
    dim: usize,
    labels: Vec<usize>,
    class_vocab: Vec<String>,
    sha256: String,
}

fn read_embedding(meta_path: &Path, blob_path: &Path) -> Result<SessionEmbedding> {
    let text = fs::read(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let meta: EmbeddingMeta = serde_json::from_slice(&text).map_err(|e| Error::format(meta_path, e))?;
    let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
    if hex::encode(Sha256::digest(&blob)) != meta.sha256 {
        return Err(Error::Checksum(blob_path.to_path_buf()));
    }
    let values: Vec<f64> = f32_from_le_bytes(&blob).into_iter().map(|v| v as f64).collect();
    if values.len() != meta.labels.len() * meta.dim {
        return Err(Error::format(blob_path, "embedding blob size disagrees with metadata"));
    }
    Ok(SessionEmbedding {
        features: Features::new(meta.dim, values)?,
        labels: meta.labels,
        class_vocab: meta.class_vocab,
    })
}

struct Sink {
    scores: File,
    progress: File,
}

struct CellResult {
    key: CellKey,
    outcome: std::result::Result<crate::transfer::CellOutcome, String>,
}

/// Executes every applicable cell not finished by an earlier run into
/// `opts.out_dir`. The final score table depends only on the plan, never on
/// `jobs`, cache state or interruptions.
pub fn execute(plan: &ExperimentPlan, opts: &ExecuteOptions) -> Result<ExecutionReport> {
    plan.validate()?;
    let catalog = Catalog::scan(&opts.data_root)?;
    let registry = catalog.registry()?;
    let runs = enumerate_runs(plan, &registry, &catalog)?;
    let out = &opts.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("plan.toml"), plan.to_toml()?.as_bytes())?;

    let wanted: BTreeSet<&CellKey> = runs.iter().map(|r| &r.key).collect();
    let (mut done, mut records) = load_previous(out)?;
    done.retain(|k, _| wanted.contains(k));
    records.retain(|r| record_cell(r).is_some_and(|c| done.contains_key(&c)));
    sort_records(&mut records);
    write_scores(&out.join(SCORES_FILE), &records)?;
    let progress_text: String = done
        .values()
        .map(|p| String::from_utf8(json(p)).expect("utf-8") + "\n")
        .collect();
    write_atomic(&out.join(PROGRESS_FILE), progress_text.as_bytes())?;

    let mut report = ExecutionReport {
        expected_cells: runs.len(),
        expected_scores: expected_scores(&runs, plan.n_folds),
        resumed_cells: done.len(),
        ..Default::default()
    };
    let pending: Vec<&RunDescriptor> = runs.iter().filter(|r| !done.contains_key(&r.key)).collect();
    log::info!(
        "{} cells planned ({} scores), {} already done, {} to run",
        runs.len(),
        report.expected_scores,
        done.len(),
        pending.len()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))?;
    let shared = Shared {
        plan,
        catalog: &catalog,
        cache: opts.cache(),
        extractor_hits: Mutex::new(0),
        embedding_hits: Mutex::new(0),
    };
    let sink = Mutex::new(Sink {
        scores: OpenOptions::new()
            .append(true)
            .open(out.join(SCORES_FILE))
            .map_err(|e| Error::io(out.join(SCORES_FILE), e))?,
        progress: OpenOptions::new()
            .append(true)
            .open(out.join(PROGRESS_FILE))
            .map_err(|e| Error::io(out.join(PROGRESS_FILE), e))?,
    });

    // sessions → donors → cells
    let mut groups: BTreeMap<(&str, &str, &str), BTreeMap<&str, Vec<&RunDescriptor>>> = BTreeMap::new();
    for r in &pending {
        groups
            .entry((&r.key.receiver, &r.key.subject, &r.key.session))
            .or_default()
            .entry(&r.key.donor)
            .or_default()
            .push(r);
    }
    let donors: Vec<&str> = plan
        .donor_ids
        .iter()
        .map(String::as_str)
        .filter(|d| pending.iter().any(|r| r.key.donor == *d))
        .collect();

    let results: Vec<CellResult> = pool.install(|| {
        let extractors: HashMap<&str, std::result::Result<Arc<FrozenExtractor>, String>> = donors
            .par_iter()
            .map(|&d| (d, shared.extractor(d).map(Arc::new).map_err(|e| e.to_string())))
            .collect();
        groups
            .par_iter()
            .flat_map_iter(|(&(receiver, subject, session), by_donor)| {
                run_session_group(&shared, &extractors, &sink, receiver, subject, session, by_donor)
            })
            .collect()
    });

    for r in results {
        match r.outcome {
            Ok(o) => {
                report.completed_cells += 1;
                if let Some(reason) = o.not_applicable {
                    report.not_applicable.push((r.key.clone(), reason));
                }
                for (fold, reason) in o.skipped_folds {
                    report.skipped_folds.push((r.key.clone(), fold, reason));
                }
            }
            Err(msg) => {
                log::error!("cell {:?} failed: {msg}", r.key);
                report.failed.push((r.key, msg));
            }
        }
    }
    drop(sink);
    report.not_applicable.sort();
    report.skipped_folds.sort();
    report.failed.sort();
    report.extractor_cache_hits = *shared.extractor_hits.lock().unwrap();
    report.embedding_cache_hits = *shared.embedding_hits.lock().unwrap();

    let (_, mut all) = load_previous(out)?;
    sort_records(&mut all);
    report.records_total = all.len();
    write_scores(&out.join(SCORES_FILE), &all)?;
    let summary = serde_json::to_vec_pretty(&report).map_err(|e| Error::format(out.join(SUMMARY_FILE), e))?;
    write_atomic(&out.join(SUMMARY_FILE), &summary)?;
    Ok(report)
}

fn run_session_group(
    shared: &Shared<'_>,
    extractors: &HashMap<&str, std::result::Result<Arc<FrozenExtractor>, String>>,
    sink: &Mutex<Sink>,
    receiver: &str,
    subject: &str,
    session: &str,
    by_donor: &BTreeMap<&str, Vec<&RunDescriptor>>,
) -> Vec<CellResult> {
    let all_failed = |msg: String| -> Vec<CellResult> {
        by_donor
            .values()
            .flatten()
            .map(|r| CellResult {
                key: r.key.clone(),
                outcome: Err(msg.clone()),
            })
            .collect()
    };
    let sref = match shared.catalog.sessions(receiver).map(|s| {
        s.iter()
            .find(|x| x.subject == subject && x.session == session)
            .cloned()
    }) {
        Ok(Some(s)) => s,
        Ok(None) => return all_failed(format!("session {receiver}/{subject}/{session} vanished")),
        Err(e) => return all_failed(e.to_string()),
    };
    let (set, checksum) = match load_and_preprocess(&sref, &shared.plan.preprocess) {
        Ok(x) => x,
        Err(e) => return all_failed(e.to_string()),
    };
    let mut out = Vec::new();
    for (donor, cells) in by_donor {
        let emb = match &extractors[donor] {
            Ok(ex) => shared.embedding(ex, &set, &checksum).map_err(|e| e.to_string()),
            Err(e) => Err(format!("pretraining {donor} failed: {e}")),
        };
        let emb = match emb {
            Ok(e) => e,
            Err(msg) => {
                out.extend(cells.iter().map(|r| CellResult {
                    key: r.key.clone(),
                    outcome: Err(msg.clone()),
                }));
                continue;
            }
        };
        let ctx = RecordContext {
            donor: donor.to_string(),
            receiver: receiver.to_string(),
            subject: subject.to_string(),
            session: session.to_string(),
        };
        for r in cells {
            let plan = shared.plan;
            let outcome = evaluate_cell(&emb, &ctx, r.key.analysis, r.key.k, plan.n_folds, r.seed, &plan.head)
                .and_then(|o| {
                    commit(sink, &r.key, &o)?;
                    Ok(o)
                })
                .map_err(|e| e.to_string());
            out.push(CellResult {
                key: r.key.clone(),
                outcome,
            });
        }
    }
    out
}

/// Appends a cell's records, then its progress line, under the writer lock.
fn commit(sink: &Mutex<Sink>, key: &CellKey, o: &crate::transfer::CellOutcome) -> Result<()> {
    let mut s = sink.lock().unwrap();
    let mut rows = Vec::new();
    append_scores(&mut rows, &o.records)?;
    s.scores.write_all(&rows).map_err(|e| Error::io(SCORES_FILE, e))?;
    s.scores.flush().map_err(|e| Error::io(SCORES_FILE, e))?;
    let line = ProgressLine {
        cell: key.clone(),
        records: o.records.len(),
        status: if o.not_applicable.is_some() {
            "not_applicable".into()
        } else {
            "scored".into()
        },
    };
    let mut bytes = json(&line);
    bytes.push(b'\n');
    s.progress.write_all(&bytes).map_err(|e| Error::io(PROGRESS_FILE, e))?;
    s.progress.flush().map_err(|e| Error::io(PROGRESS_FILE, e))
}
