use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use mi_transfer::epochs::load_epochs;
use mi_transfer::error::{Error, Result};
use mi_transfer::harness::{
    aggregate, cells_to_csv, emit_curves, emit_score_table, execute, pretrain_seed, Averaging, Catalog,
    Direction, ExecuteOptions, ExperimentPlan, SyntheticDataset, DATA_ROOT_ENV,
};
use mi_transfer::preprocess::preprocess_pipeline;
use mi_transfer::registry::{task_description, Registry};
use mi_transfer::transfer::{eval::read_scores, pretrain_donor, Analysis};

#[derive(Parser)]
#[command(name = "mi-transfer", version, about = "Cross-dataset transfer of pretrained EEG feature extractors")]
struct Cli {
    /// Master seed; overrides the plan's `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all CPUs).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Root of the epoch containers.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic datasets into the data root.
    Synth {
        /// TOML file with one `[[dataset]]` table per dataset.
        #[arg(long)]
        spec: PathBuf,
    },
    /// Pretrain one donor and save its frozen trunk under `--out`.
    Pretrain {
        #[arg(long)]
        donor: String,
        /// Plan supplying preprocessing, network and training settings.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Run every cell of a plan; resumes an interrupted run in `--out`.
    Eval {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Aggregate a score file into tables and curves.
    Report {
        #[arg(long)]
        scores: PathBuf,
        /// Average all scores of a cell at once instead of per subject.
        #[arg(long)]
        flat: bool,
        /// Table for this k only (default: every k present).
        #[arg(long)]
        k: Option<usize>,
        /// Restrict to one analysis.
        #[arg(long)]
        analysis: Option<Analysis>,
    },
    /// Print the dataset registry and the container format.
    Describe { dataset: Option<String> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthFile {
    dataset: Vec<SyntheticDataset>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { spec } => synth(cli, spec),
        Command::Pretrain { donor, plan } => pretrain(cli, donor, plan.as_deref()),
        Command::Eval { plan } => eval(cli, plan),
        Command::Report {
            scores,
            flat,
            k,
            analysis,
        } => report(cli, scores, *flat, *k, *analysis),
        Command::Describe { dataset } => describe(cli, dataset.as_deref()),
    }
}

fn data_root(cli: &Cli, plan: Option<&ExperimentPlan>) -> Result<PathBuf> {
    plan.and_then(|p| p.data_root.clone())
        .or_else(|| cli.data_root.clone())
        .ok_or_else(|| Error::Validation {
            field: "data_root",
            message: format!("pass --data-root or set {DATA_ROOT_ENV}"),
        })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn synth(cli: &Cli, spec: &Path) -> Result<()> {
    let root = data_root(cli, None)?;
    let text = fs::read_to_string(spec).map_err(|e| Error::Io {
        path: spec.to_path_buf(),
        source: e,
    })?;
    let file: SynthFile = toml::from_str(&text).map_err(|e| Error::Format {
        path: spec.to_path_buf(),
        message: e.to_string(),
    })?;
    let seed = cli.seed.unwrap_or(0);
    for ds in &file.dataset {
        let d = ds.write(&root, seed)?;
        println!(
            "{}: {} subjects x {} sessions, classes {:?}, {} trials per class",
            d.dataset_id,
            d.n_subjects,
            ds.sessions_per_subject,
            d.class_vocab,
            d.examples_per_cell
        );
    }
    Ok(())
}

fn load_plan(cli: &Cli, path: &Path) -> Result<ExperimentPlan> {
    let mut plan = ExperimentPlan::load(path)?;
    if let Some(s) = cli.seed {
        plan.master_seed = s;
    }
    Ok(plan)
}

fn pretrain(cli: &Cli, donor: &str, plan_path: Option<&Path>) -> Result<()> {
    let mut plan = match plan_path {
        Some(p) => load_plan(cli, p)?,
        None => ExperimentPlan {
            master_seed: cli.seed.unwrap_or(0),
            ..Default::default()
        },
    };
    let root = data_root(cli, Some(&plan))?;
    let catalog = Catalog::scan(&root)?;
    let mut sessions = Vec::new();
    for r in catalog.sessions(donor)? {
        let mut set = preprocess_pipeline(&load_epochs(&r.dir)?, &plan.preprocess)?;
        set.dataset_id = r.dataset.clone();
        sessions.push(set);
    }
    plan.train.seed = pretrain_seed(plan.master_seed, donor);
    let (extractor, log) = pretrain_donor(&sessions, &plan.net, &plan.train)?;
    let dir = cli.out.join(donor);
    let digest = extractor.save(&dir)?;
    println!(
        "{donor}: final loss {:.4}, trunk {digest} written to {}",
        log.epoch_loss.last().copied().unwrap_or(f64::NAN),
        dir.display()
    );
    Ok(())
}

fn eval(cli: &Cli, plan_path: &Path) -> Result<()> {
    let plan = load_plan(cli, plan_path)?;
    let opts = ExecuteOptions {
        out_dir: cli.out.clone(),
        data_root: data_root(cli, Some(&plan))?,
        jobs: cli.jobs,
        cache_dir: None,
    };
    let rep = execute(&plan, &opts)?;
    println!(
        "{} cells ({} resumed, {} run), {} scores, {} not applicable, {} skipped folds, {} failed",
        rep.expected_cells,
        rep.resumed_cells,
        rep.completed_cells,
        rep.records_total,
        rep.not_applicable.len(),
        rep.skipped_folds.len(),
        rep.failed.len()
    );
    for (key, msg) in &rep.failed {
        eprintln!("failed: {key:?}: {msg}");
    }
    if rep.failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation {
            field: "cells",
            message: format!("{} cells failed", rep.failed.len()),
        })
    }
}

fn report(cli: &Cli, scores: &Path, flat: bool, k: Option<usize>, analysis: Option<Analysis>) -> Result<()> {
    let records = read_scores(scores)?;
    let averaging = if flat { Averaging::Flat } else { Averaging::Hierarchical };
    let cells = aggregate(&records, averaging);
    write_file(&cli.out.join("cells.csv"), &cells_to_csv(&cells))?;
    let analyses: Vec<String> = match analysis {
        Some(a) => vec![a.to_string()],
        None => {
            let mut v: Vec<String> = cells.iter().map(|c| c.analysis.clone()).collect();
            v.sort();
            v.dedup();
            v
        }
    };
    for a in &analyses {
        let mut ks: Vec<usize> = cells.iter().filter(|c| &c.analysis == a).map(|c| c.k).collect();
        ks.sort_unstable();
        ks.dedup();
        if let Some(k) = k {
            ks.retain(|&x| x == k);
        }
        for k in ks {
            let grid = emit_score_table(&cells, a, k, None, None)?;
            let stem = format!("table_{a}_k{k}");
            write_file(&cli.out.join(format!("{stem}.csv")), &grid.to_csv())?;
            let md = grid.to_markdown();
            write_file(&cli.out.join(format!("{stem}.md")), &md)?;
            println!("{md}");
        }
        for direction in [Direction::AcrossReceivers, Direction::AcrossDonors] {
            let curves = emit_curves(&cells, direction, a);
            let stem = format!("curves_{}_{a}", direction.name());
            write_file(&cli.out.join(format!("{stem}.csv")), &curves.to_csv())?;
            write_file(&cli.out.join(format!("{stem}.svg")), &curves.to_svg())?;
        }
    }
    println!("reports written to {}", cli.out.display());
    Ok(())
}

const FORMAT_HELP: &str = "\
Container layout: {root}/{dataset}/{subject}/{session}/
  metadata.json  format_version, dataset_id, subject_id, session_id,
                 channel_names, sampling_rate_hz, tmin_s, class_vocab,
                 labels, shape [trials, channels, samples], dtype, data_file
  data.bin       float32 little-endian samples, microvolts, row-major
Optional {root}/{dataset}/descriptor.json overrides or adds a registry entry.";

fn describe(cli: &Cli, dataset: Option<&str>) -> Result<()> {
    let registry = match &cli.data_root {
        Some(root) if root.is_dir() => Catalog::scan(root)?.registry()?,
        _ => Registry::builtin(),
    };
    let show = |d: &mi_transfer::registry::DatasetDescriptor| {
        let sessions = match &d.sessions_per_subject {
            mi_transfer::registry::Sessions::Uniform(n) => n.to_string(),
            mi_transfer::registry::Sessions::PerSubject { default, overrides } => {
                let ex: Vec<String> = overrides.iter().map(|(s, n)| format!("{s}:{n}")).collect();
                format!("{default} ({})", ex.join(", "))
            }
        };
        println!(
            "{:<18} subjects {:>3}  sessions {:<22} trials/class {:>3}  classes {}",
            d.dataset_id,
            d.n_subjects,
            sessions,
            d.examples_per_cell,
            d.class_vocab.join(",")
        );
    };
    match dataset {
        Some(id) => {
            let d = registry.get(id)?;
            show(d);
            for c in &d.class_vocab {
                println!("  {c:<5} {}", task_description(c).unwrap_or("?"));
            }
        }
        None => {
            registry.iter().for_each(show);
            println!("\n{FORMAT_HELP}");
        }
    }
    Ok(())
}
