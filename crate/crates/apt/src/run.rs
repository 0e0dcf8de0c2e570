//! Run orchestration: dataset loading, run-directory layout, and the
//! complete training schedule (LM text pass, then the staged curriculum)
//! driven off a rendered dataset directory.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::curriculum::{
    load_params, load_train_state, metrics_header, pretrain_lm, run_stage, save_train_state, Adam,
    Phase, StageSpec,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_task, EvalReport};
use crate::io::metrics::CsvLog;
use crate::io::{manifest, Record, RunConfig};
use crate::model::{Model, Vocabulary};
use crate::pipeline::{Features, Runner};
use crate::tasks::render::{ClipStore, DatasetPaths};
use crate::tasks::{templates, Task};

/// Where a run directory keeps its pieces.
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> RunPaths {
        RunPaths { root: root.into() }
    }

    /// The completed-phase artifact: full train state, loadable either
    /// for exact resume or parameters-only for chaining and evaluation.
    pub fn phase_checkpoint(&self, phase: Phase) -> PathBuf {
        match phase {
            Phase::LmText => self.root.join("lm.aptf"),
            Phase::Stage(s) => self.root.join(format!("stage{s}.aptf")),
        }
    }

    /// Mid-phase state written every `save_every` steps; an interrupted
    /// run restarts from here.
    pub fn resume_checkpoint(&self) -> PathBuf {
        self.root.join("resume.aptf")
    }

    pub fn metrics(&self, phase: Phase) -> PathBuf {
        match phase {
            Phase::LmText => self.root.join("metrics_lm.csv"),
            Phase::Stage(s) => self.root.join(format!("metrics_stage{s}.csv")),
        }
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    /// The last checkpoint of the schedule that exists on disk, if any.
    pub fn latest_checkpoint(&self) -> Option<PathBuf> {
        PHASES
            .iter()
            .rev()
            .map(|&p| self.phase_checkpoint(p))
            .find(|p| p.exists())
    }
}

/// Every run shares one tokenizer, closed over the template corpus.
pub fn build_vocab() -> Vocabulary {
    let corpus = templates::vocab_corpus();
    Vocabulary::build(corpus.iter().map(String::as_str))
}

/// A dataset directory loaded for training: per-stage record pools and
/// clip access.
pub struct Corpus {
    pub stages: [Vec<Record>; 3],
    pub clips: ClipStore,
    /// Digest over the stage manifests; two runs trained on byte-identical
    /// data if and only if these match.
    pub train_hash: String,
}

/// Hex sha256 over the stage manifests, in stage order.
pub fn dataset_hash(data_dir: &Path) -> Result<String> {
    let paths = DatasetPaths::new(data_dir);
    let mut outer = Sha256::new();
    for stage in 0..3 {
        let h = manifest::file_hash(&paths.stage_manifest(stage))?;
        outer.update(h.as_bytes());
    }
    Ok(outer
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Load the stage manifests. When `include_nlar` is off, reasoning records
/// are dropped from the pools but the dataset hash still covers the files
/// as rendered, so runs that differ only in task selection report the same
/// data identity.
pub fn load_corpus(data_dir: &Path, include_nlar: bool) -> Result<Corpus> {
    let paths = DatasetPaths::new(data_dir);
    let mut stages: [Vec<Record>; 3] = Default::default();
    for (stage, pool) in stages.iter_mut().enumerate() {
        let path = paths.stage_manifest(stage);
        if !path.exists() {
            return Err(Error::Dependency(format!(
                "{} not found; render the dataset first",
                path.display()
            )));
        }
        let mut records = manifest::load(&path)?;
        if !include_nlar {
            records.retain(|r| r.task != Task::Nlar.tag());
        }
        *pool = records;
    }
    let train_hash = dataset_hash(data_dir)?;
    Ok(Corpus {
        stages,
        clips: ClipStore::Disk(DatasetPaths::new(data_dir)),
        train_hash,
    })
}

/// Load one task's evaluation manifest.
pub fn load_eval(data_dir: &Path, task: Task) -> Result<Vec<Record>> {
    let path = DatasetPaths::new(data_dir).eval_manifest(task);
    if !path.exists() {
        return Err(Error::Dependency(format!(
            "{} not found; render the dataset first",
            path.display()
        )));
    }
    manifest::load(&path)
}

/// Schedule order: the LM text pass, then the curriculum stages.
pub const PHASES: [Phase; 4] = [
    Phase::LmText,
    Phase::Stage(0),
    Phase::Stage(1),
    Phase::Stage(2),
];

fn phase_index(phase: Phase) -> usize {
    match phase {
        Phase::LmText => 0,
        Phase::Stage(s) => 1 + s as usize,
    }
}

fn phase_steps(cfg: &RunConfig, phase: Phase) -> Result<usize> {
    Ok(match phase {
        Phase::LmText => cfg.lm_steps,
        Phase::Stage(s) => StageSpec::from_config(cfg, s)?.steps,
    })
}

/// Final losses per phase; skipped phases stay unset.
#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub last_loss: [Option<f64>; 4],
}

impl TrainOutcome {
    pub fn loss(&self, phase: Phase) -> Option<f64> {
        self.last_loss[phase_index(phase)]
    }
}

/// One phase from `start` to completion, checkpointing every `save_every`
/// steps (0 disables) and once at the end. A fresh optimizer is used when
/// none is handed in; resume passes the restored one.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    model: &mut Model<f32>,
    corpus: &Corpus,
    features: &Features<f32>,
    paths: &RunPaths,
    phase: Phase,
    start: usize,
    opt: Option<Adam>,
    save_every: usize,
) -> Result<f64> {
    let total = phase_steps(cfg, phase)?;
    if total == 0 {
        return Err(Error::config(format!("{phase:?} has no steps configured")));
    }
    let mut opt = opt.unwrap_or_default();
    let mut log = CsvLog::create(&paths.metrics(phase), &metrics_header(phase).join(","))?;
    let mut step = start;
    let mut last = f64::NAN;
    while step < total {
        let next = if save_every == 0 {
            total
        } else {
            (step + save_every).min(total)
        };
        last = match phase {
            Phase::LmText => {
                pretrain_lm(model, vocab, cfg, &mut opt, step, Some(next), Some(&mut log))?
            }
            Phase::Stage(s) => {
                let spec = StageSpec::from_config(cfg, s)?;
                run_stage(
                    model,
                    vocab,
                    &corpus.clips,
                    features,
                    &corpus.stages[s as usize],
                    &spec,
                    &mut opt,
                    cfg.seed,
                    cfg.include_nlar,
                    step,
                    Some(next),
                    Some(&mut log),
                )?
            }
        };
        step = next;
        if step < total {
            save_train_state(&paths.resume_checkpoint(), &model.store, &opt, phase, step)?;
        }
    }
    save_train_state(
        &paths.phase_checkpoint(phase),
        &model.store,
        &opt,
        phase,
        total,
    )?;
    Ok(last)
}

/// Run the schedule from `first` onward on an already-positioned model.
/// Phases configured with zero steps are skipped; `mid` carries a restored
/// optimizer and start step into the first phase.
#[allow(clippy::too_many_arguments)]
fn run_from(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    model: &mut Model<f32>,
    corpus: &Corpus,
    paths: &RunPaths,
    first: Phase,
    mid: Option<(Adam, usize)>,
    save_every: usize,
) -> Result<TrainOutcome> {
    fs::create_dir_all(&paths.root)?;
    fs::write(paths.config_snapshot(), cfg.render())?;
    let features = Features::new(&model.cfg)?;
    let mut outcome = TrainOutcome::default();
    let mut mid = mid;
    for &phase in &PHASES[phase_index(first)..] {
        let (opt, start) = match mid.take() {
            Some((opt, start)) => (Some(opt), start),
            None => (None, 0),
        };
        if phase_steps(cfg, phase)? == 0 {
            if start > 0 {
                return Err(Error::config(format!(
                    "resume points into {phase:?}, which has no steps configured"
                )));
            }
            continue;
        }
        let loss = run_phase(
            cfg, vocab, model, corpus, &features, paths, phase, start, opt, save_every,
        )?;
        outcome.last_loss[phase_index(phase)] = Some(loss);
    }
    Ok(outcome)
}

/// Train every phase in order on a freshly initialized model: the LM text
/// pass, then the curriculum stages. One checkpoint and one metrics CSV
/// per phase land under `paths`.
pub fn train_all(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    model: &mut Model<f32>,
    corpus: &Corpus,
    paths: &RunPaths,
    save_every: usize,
) -> Result<TrainOutcome> {
    run_from(
        cfg,
        vocab,
        model,
        corpus,
        paths,
        Phase::LmText,
        None,
        save_every,
    )
}

/// Short name for messages and flags.
pub fn phase_name(phase: Phase) -> String {
    match phase {
        Phase::LmText => "lm".into(),
        Phase::Stage(s) => format!("stage {s}"),
    }
}

/// The phase whose artifact seeds `phase` when it is trained alone: the
/// last earlier phase with steps configured.
fn predecessor(cfg: &RunConfig, phase: Phase) -> Result<Option<Phase>> {
    for &p in PHASES[..phase_index(phase)].iter().rev() {
        if phase_steps(cfg, p)? > 0 {
            return Ok(Some(p));
        }
    }
    Ok(None)
}

/// Train exactly one phase. Unless `from_scratch`, the model is first
/// positioned on the preceding phase's artifact, so a schedule can be run
/// one phase per invocation; asking for a later phase before its
/// predecessor has produced a checkpoint is an error. Chained this way the
/// final parameters match a single uninterrupted run bit for bit.
pub fn train_phase(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    model: &mut Model<f32>,
    corpus: &Corpus,
    paths: &RunPaths,
    phase: Phase,
    save_every: usize,
    from_scratch: bool,
) -> Result<f64> {
    fs::create_dir_all(&paths.root)?;
    fs::write(paths.config_snapshot(), cfg.render())?;
    if !from_scratch {
        if let Some(prev) = predecessor(cfg, phase)? {
            let ckpt = paths.phase_checkpoint(prev);
            if !ckpt.exists() {
                return Err(Error::Dependency(format!(
                    "{} chains from {}, whose checkpoint {} does not exist; train it first",
                    phase_name(phase),
                    phase_name(prev),
                    ckpt.display()
                )));
            }
            load_params(&ckpt, &mut model.store)?;
        }
    }
    let features = Features::new(&model.cfg)?;
    run_phase(
        cfg, vocab, model, corpus, &features, paths, phase, 0, None, save_every,
    )
}

/// Pick up an interrupted run from a train-state checkpoint: finish its
/// phase exactly as the uninterrupted run would have, then continue
/// through the rest of the schedule.
#[allow(clippy::too_many_arguments)]
pub fn resume_all(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    model: &mut Model<f32>,
    corpus: &Corpus,
    paths: &RunPaths,
    checkpoint: &Path,
    save_every: usize,
) -> Result<TrainOutcome> {
    let mut opt = Adam::new();
    let (phase, step) = load_train_state(checkpoint, &mut model.store, &mut opt)?;
    run_from(
        cfg,
        vocab,
        model,
        corpus,
        paths,
        phase,
        Some((opt, step)),
        save_every,
    )
}

/// Score the given tasks against a dataset directory's eval manifests.
pub fn evaluate_tasks(
    model: &Model<f32>,
    vocab: &Vocabulary,
    data_dir: &Path,
    tasks: &[Task],
) -> Result<Vec<EvalReport>> {
    let clips = ClipStore::Disk(DatasetPaths::new(data_dir));
    let features = Features::new(&model.cfg)?;
    let runner = Runner {
        model,
        vocab,
        clips: &clips,
        features: &features,
        train_encoder: false,
    };
    tasks
        .iter()
        .map(|&t| {
            let records = load_eval(data_dir, t)?;
            evaluate_task(&runner, t, &records)
        })
        .collect()
}
