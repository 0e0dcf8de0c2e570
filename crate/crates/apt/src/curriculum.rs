//! Optimizer, learning-rate schedule, and the staged training loop. The
//! encoder and LM stay frozen through every stage: stage 0 trains the
//! aligner alone on caption pairs with the triplet objectives, stages 1
//! and 2 train aligner plus audio marker on interleaved sequences. A
//! text-only pretraining pass gives the LM its token statistics first.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::checkpoint::{self, TensorEntry};
use crate::io::metrics::{fmt_f, CsvLog};
use crate::io::{Record, RunConfig};
use crate::model::{Group, Model, ParamGrads, ParamStore, Vocabulary};
use crate::model::vocab;
use crate::objectives;
use crate::pipeline::{Features, Runner};
use crate::tasks::render::{render_record_text, RenderOpts};
use crate::tasks::render::ClipStore;
use crate::tasks::{mix_seed, stage_tasks, Task};
use crate::tensor::{sc, Scalar, IGNORE_INDEX};

// ── Optimizer ────────────────────────────────────────────────────────────

/// Adam with bias correction. Moments are kept in f32 so a checkpoint
/// round-trip is bit-exact and a resumed run retraces the original one.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: HashMap<String, Vec<f32>>,
    v: HashMap<String, Vec<f32>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new()
    }
}

impl Adam {
    pub fn new() -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over every parameter that received a gradient.
    pub fn step<F: Scalar>(
        &mut self,
        store: &mut ParamStore<F>,
        grads: &ParamGrads<F>,
        lr: f64,
    ) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.iter() {
            let p = store.get_mut(id);
            debug_assert!(p.trainable, "gradient for frozen parameter {}", p.name);
            let m = self
                .m
                .entry(p.name.clone())
                .or_insert_with(|| vec![0.0; p.values.len()]);
            let v = self
                .v
                .entry(p.name.clone())
                .or_insert_with(|| vec![0.0; p.values.len()]);
            for i in 0..p.values.len() {
                let gi = g[i].to_f64v();
                m[i] = (self.beta1 * m[i] as f64 + (1.0 - self.beta1) * gi) as f32;
                v[i] = (self.beta2 * v[i] as f64 + (1.0 - self.beta2) * gi * gi) as f32;
                let mhat = m[i] as f64 / c1;
                let vhat = v[i] as f64 / c2;
                let next = p.values[i].to_f64v() - lr * mhat / (vhat.sqrt() + self.eps);
                p.values[i] = sc::<F>(next);
            }
        }
    }
}

// ── Schedule ─────────────────────────────────────────────────────────────

/// Linear warmup to `base`, then cosine decay to zero at `total`.
pub fn lr_at(step: usize, total: usize, base: f64, warmup: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::config("schedule with zero steps"));
    }
    if warmup >= total {
        return Err(Error::config(format!(
            "warmup {warmup} must be shorter than the {total}-step schedule"
        )));
    }
    if step > total {
        return Err(Error::contract(format!(
            "step {step} beyond the {total}-step schedule"
        )));
    }
    if step < warmup {
        return Ok(base * step as f64 / warmup as f64);
    }
    let phase = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(base * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos()))
}

// ── Train-state checkpoints ──────────────────────────────────────────────

const COUNTERS: &str = "train.counters";

/// Phase codes stored in the counters tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    LmText,
    Stage(u8),
}

impl Phase {
    fn code(self) -> f32 {
        match self {
            Phase::LmText => 100.0,
            Phase::Stage(s) => s as f32,
        }
    }

    fn from_code(c: f32) -> Result<Phase> {
        match c as i64 {
            100 => Ok(Phase::LmText),
            s @ 0..=2 => Ok(Phase::Stage(s as u8)),
            other => Err(Error::Checkpoint(format!("unknown phase code {other}"))),
        }
    }
}

/// Serialize parameters, optimizer moments, and loop position.
pub fn save_train_state<F: Scalar>(
    path: &Path,
    store: &ParamStore<F>,
    opt: &Adam,
    phase: Phase,
    next_step: usize,
) -> Result<()> {
    let mut entries = Vec::with_capacity(store.len() + 2 * opt.m.len() + 1);
    for (_, p) in store.iter() {
        let values: Vec<f32> = p.values.iter().map(|v| v.to_f64v() as f32).collect();
        entries.push(TensorEntry::new(p.name.clone(), p.rows, p.cols, values));
    }
    let mut names: Vec<&String> = opt.m.keys().collect();
    names.sort();
    for name in names {
        entries.push(TensorEntry::new(
            format!("opt.m.{name}"),
            1,
            opt.m[name].len(),
            opt.m[name].clone(),
        ));
        entries.push(TensorEntry::new(
            format!("opt.v.{name}"),
            1,
            opt.v[name].len(),
            opt.v[name].clone(),
        ));
    }
    entries.push(TensorEntry::new(
        COUNTERS.to_string(),
        1,
        3,
        vec![opt.t as f32, phase.code(), next_step as f32],
    ));
    checkpoint::save(path, &entries)
}

fn apply_params<F: Scalar>(
    store: &mut ParamStore<F>,
    by_name: &HashMap<String, &TensorEntry>,
) -> Result<()> {
    let metas: Vec<(crate::model::ParamId, String, usize, usize)> = store
        .iter()
        .map(|(id, p)| (id, p.name.clone(), p.rows, p.cols))
        .collect();
    for (id, name, rows, cols) in metas {
        let e = by_name.get(name.as_str()).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint is missing parameter '{name}'"))
        })?;
        if (e.rows as usize, e.cols as usize) != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}' is {}x{} in the checkpoint, model wants {rows}x{cols}",
                e.rows, e.cols
            )));
        }
        let p = store.get_mut(id);
        for (dst, &src) in p.values.iter_mut().zip(&e.values) {
            *dst = sc::<F>(src as f64);
        }
    }
    Ok(())
}

/// Load parameters only (evaluation, stage chaining).
pub fn load_params<F: Scalar>(path: &Path, store: &mut ParamStore<F>) -> Result<()> {
    let entries = checkpoint::load(path)?;
    let by_name: HashMap<String, &TensorEntry> =
        entries.iter().map(|e| (e.name.clone(), e)).collect();
    apply_params(store, &by_name)
}

/// Load parameters, moments, and loop position for an exact resume.
pub fn load_train_state<F: Scalar>(
    path: &Path,
    store: &mut ParamStore<F>,
    opt: &mut Adam,
) -> Result<(Phase, usize)> {
    let entries = checkpoint::load(path)?;
    let by_name: HashMap<String, &TensorEntry> =
        entries.iter().map(|e| (e.name.clone(), e)).collect();
    apply_params(store, &by_name)?;
    opt.m.clear();
    opt.v.clear();
    for e in &entries {
        if let Some(name) = e.name.strip_prefix("opt.m.") {
            if store.by_name(name).is_none() {
                return Err(Error::Checkpoint(format!(
                    "moment for unknown parameter '{name}'"
                )));
            }
            opt.m.insert(name.to_string(), e.values.clone());
        } else if let Some(name) = e.name.strip_prefix("opt.v.") {
            opt.v.insert(name.to_string(), e.values.clone());
        }
    }
    let counters = by_name
        .get(COUNTERS)
        .ok_or_else(|| Error::Checkpoint("checkpoint has no loop counters".into()))?;
    if counters.values.len() != 3 {
        return Err(Error::Checkpoint("malformed loop counters".into()));
    }
    opt.t = counters.values[0] as u64;
    let phase = Phase::from_code(counters.values[1])?;
    Ok((phase, counters.values[2] as usize))
}

// ── LM text pretraining ──────────────────────────────────────────────────

/// Tokens per packed pretraining sequence.
const LM_PACK_LEN: usize = 96;

fn record_text(record: &Record) -> String {
    let mut parts: Vec<&str> = Vec::new();
    for t in &record.meta.clip_texts {
        if !t.is_empty() {
            parts.push(t);
        }
    }
    if !record.prompt.is_empty() {
        parts.push(&record.prompt);
    }
    parts.push(&record.target);
    parts.join(" ")
}

/// Pack task texts into one training sequence: `<bos>` then each text
/// closed by `<eos>`, until the length budget is met.
fn packed_ids(
    vocab: &Vocabulary,
    cfg: &RunConfig,
    opts: &RenderOpts,
    step: usize,
) -> Result<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 3, step as u64]));
    let tasks: Vec<Task> = Task::ALL
        .iter()
        .copied()
        .filter(|&t| cfg.include_nlar || t != Task::Nlar)
        .collect();
    let mut ids = vec![vocab::BOS];
    while ids.len() < LM_PACK_LEN {
        let task = tasks[rng.gen_range(0..tasks.len())];
        let index = rng.gen_range(0..1_000_000usize);
        let record = render_record_text(task, "lmtext", index, opts, cfg.seed)?;
        ids.extend(vocab.encode(&record_text(&record)));
        ids.push(vocab::EOS);
    }
    Ok(ids)
}

/// Train the LM (alone) on the textual side of the task distribution.
/// Runs steps `start_step..until` (the whole schedule when `until` is
/// None); the learning-rate schedule always spans `cfg.lm_steps`, so an
/// interrupted run stitched back together retraces an uninterrupted one.
/// Returns the final step's loss.
pub fn pretrain_lm(
    model: &mut Model<f32>,
    vocab: &Vocabulary,
    cfg: &RunConfig,
    opt: &mut Adam,
    start_step: usize,
    until: Option<usize>,
    mut log: Option<&mut CsvLog>,
) -> Result<f64> {
    if cfg.lm_steps == 0 {
        return Err(Error::config("lm pretraining needs at least one step"));
    }
    let end = until.unwrap_or(cfg.lm_steps);
    if end > cfg.lm_steps {
        return Err(Error::contract(format!(
            "cannot run to step {end} of a {}-step schedule",
            cfg.lm_steps
        )));
    }
    let opts = RenderOpts::from_config(cfg);
    model.store.set_trainable_groups(&[Group::Lm]);
    let mut last = f64::NAN;
    for step in start_step..end {
        let ids = packed_ids(vocab, cfg, &opts, step)?;
        let mut targets: Vec<usize> = ids[1..].iter().map(|&t| t as usize).collect();
        targets.push(IGNORE_INDEX);
        let lr = lr_at(step, cfg.lm_steps, cfg.lm_lr, cfg.lm_warmup)?;
        let mut g = model.graph();
        let rows = model
            .lm
            .token_rows(&mut g, model.marker, &ids, model.cfg.vocab_size)?;
        let logits = model.lm.forward_embedded(&mut g, &model.cfg, rows)?;
        let loss = g.tape.cross_entropy(logits, &targets)?;
        last = g.tape.value(loss)[0] as f64;
        if !last.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "lm-text".into(),
                step: step as u64,
                task: "pack".into(),
            });
        }
        let grads = g.backward(loss)?;
        opt.step(&mut model.store, &grads, lr);
        if let Some(csv) = log.as_deref_mut() {
            csv.row(&[step.to_string(), fmt_f(lr), fmt_f(last)])?;
        }
    }
    Ok(last)
}

// ── Stage training ───────────────────────────────────────────────────────

/// One stage's loop parameters.
#[derive(Debug, Clone)]
pub struct StageSpec {
    pub stage: u8,
    pub steps: usize,
    pub lr: f64,
    pub warmup: usize,
    /// Caption batch size; stage 0 only.
    pub batch: usize,
}

impl StageSpec {
    pub fn from_config(cfg: &RunConfig, stage: u8) -> Result<StageSpec> {
        let (steps, lr, warmup, batch) = match stage {
            0 => (cfg.stage0_steps, cfg.stage0_lr, cfg.stage0_warmup, cfg.stage0_batch),
            1 => (cfg.stage1_steps, cfg.stage1_lr, cfg.stage1_warmup, 1),
            2 => (cfg.stage2_steps, cfg.stage2_lr, cfg.stage2_warmup, 1),
            other => return Err(Error::config(format!("no stage {other}"))),
        };
        Ok(StageSpec {
            stage,
            steps,
            lr,
            warmup,
            batch,
        })
    }

    fn trainable(&self) -> &'static [Group] {
        if self.stage == 0 {
            &[Group::Aligner]
        } else {
            &[Group::Aligner, Group::AudioMarker]
        }
    }
}

/// The class key of a caption: everything before the descriptor colon.
fn caption_key(target: &str) -> &str {
    target.split(':').next().unwrap_or(target).trim()
}

/// Stage-0 batch: records with pairwise distinct classes so shifted
/// captions are true negatives.
fn pick_caption_batch<'r>(
    rng: &mut ChaCha8Rng,
    records: &'r [Record],
    batch: usize,
) -> Result<Vec<&'r Record>> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut seen = HashSet::new();
    let mut picked = Vec::with_capacity(batch);
    for idx in order {
        let r = &records[idx];
        if seen.insert(caption_key(&r.target).to_string()) {
            picked.push(r);
            if picked.len() == batch {
                break;
            }
        }
    }
    if picked.len() < 2 {
        return Err(Error::contract(
            "stage 0 needs records from at least two classes",
        ));
    }
    Ok(picked)
}

fn stage0_step(
    runner: &Runner<'_, f32>,
    rng: &mut ChaCha8Rng,
    records: &[Record],
    batch: usize,
) -> Result<(f64, f64, f64, f64, ParamGrads<f32>)> {
    let picked = pick_caption_batch(rng, records, batch)?;
    let items: Vec<(String, String)> = picked
        .iter()
        .map(|r| (r.audio_refs[0].clone(), r.target.clone()))
        .collect();
    let mut g = runner.model.graph();
    let b = runner.caption_batch(&mut g, &items)?;
    let alg = runner.model.alg.query()?;
    let losses = objectives::triplet_losses(&mut g, &runner.model.cfg, alg, &b)?;
    let vals = (
        g.tape.value(losses.matching)[0] as f64,
        g.tape.value(losses.generation)[0] as f64,
        g.tape.value(losses.contrastive)[0] as f64,
        g.tape.value(losses.total)[0] as f64,
    );
    let grads = g.backward(losses.total)?;
    Ok((vals.0, vals.1, vals.2, vals.3, grads))
}

/// Records grouped by task, in stage task order.
fn records_by_task<'r>(
    records: &'r [Record],
    stage: u8,
    include_nlar: bool,
) -> Result<Vec<(Task, Vec<&'r Record>)>> {
    let tasks = stage_tasks(stage as usize, include_nlar)?;
    let mut grouped: Vec<(Task, Vec<&Record>)> =
        tasks.iter().map(|&t| (t, Vec::new())).collect();
    for r in records {
        match grouped
            .iter_mut()
            .find(|(t, _)| t.tag() == r.task)
        {
            Some((_, v)) => v.push(r),
            None => {
                return Err(Error::contract(format!(
                    "record task '{}' does not belong to stage {stage}",
                    r.task
                )))
            }
        }
    }
    for (t, v) in &grouped {
        if v.is_empty() {
            return Err(Error::Dependency(format!(
                "stage {stage} has no records for task '{}'",
                t.tag()
            )));
        }
    }
    Ok(grouped)
}

/// Run (part of) one stage: steps `start_step..until`, or the whole stage
/// when `until` is None. The learning-rate schedule always spans
/// `spec.steps`, and per-step randomness is derived statelessly, so
/// re-entering at any step with restored parameters and optimizer retraces
/// an uninterrupted run exactly. Returns the last step's loss.
#[allow(clippy::too_many_arguments)]
pub fn run_stage(
    model: &mut Model<f32>,
    vocab: &Vocabulary,
    clips: &ClipStore,
    features: &Features<f32>,
    records: &[Record],
    spec: &StageSpec,
    opt: &mut Adam,
    master_seed: u64,
    include_nlar: bool,
    start_step: usize,
    until: Option<usize>,
    mut log: Option<&mut CsvLog>,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Dependency(format!(
            "stage {} has no training records",
            spec.stage
        )));
    }
    let end = until.unwrap_or(spec.steps);
    if end > spec.steps {
        return Err(Error::contract(format!(
            "cannot run to step {end} of a {}-step schedule",
            spec.steps
        )));
    }
    model.store.set_trainable_groups(spec.trainable());
    let grouped = if spec.stage == 0 {
        Vec::new()
    } else {
        records_by_task(records, spec.stage, include_nlar)?
    };
    let mut last = f64::NAN;
    for step in start_step..end {
        let lr = lr_at(step, spec.steps, spec.lr, spec.warmup)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            master_seed,
            10 + spec.stage as u64,
            step as u64,
        ]));
        let runner = Runner {
            model: &*model,
            vocab,
            clips,
            features,
            train_encoder: false,
        };
        let (task_tag, loss, grads) = if spec.stage == 0 {
            let (lm, lg, lc, lt, grads) = stage0_step(&runner, &mut rng, records, spec.batch)?;
            if let Some(csv) = log.as_deref_mut() {
                csv.row(&[
                    step.to_string(),
                    "captions".into(),
                    fmt_f(lr),
                    fmt_f(lt),
                    fmt_f(lm),
                    fmt_f(lg),
                    fmt_f(lc),
                ])?;
            }
            ("captions".to_string(), lt, grads)
        } else {
            let (task, pool) = &grouped[step % grouped.len()];
            let record = pool[rng.gen_range(0..pool.len())];
            let mut g = runner.model.graph();
            let loss = runner.record_loss(&mut g, record)?;
            let value = g.tape.value(loss)[0] as f64;
            let grads = g.backward(loss)?;
            if let Some(csv) = log.as_deref_mut() {
                csv.row(&[
                    step.to_string(),
                    task.tag().to_string(),
                    fmt_f(lr),
                    fmt_f(value),
                ])?;
            }
            (task.tag().to_string(), value, grads)
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: format!("stage{}", spec.stage),
                step: step as u64,
                task: task_tag,
            });
        }
        last = loss;
        opt.step(&mut model.store, &grads, lr);
    }
    Ok(last)
}

/// Column headers for the per-phase metrics CSVs.
pub fn metrics_header(phase: Phase) -> &'static [&'static str] {
    match phase {
        Phase::LmText => &["step", "lr", "loss"],
        Phase::Stage(0) => &["step", "task", "lr", "total", "matching", "generation", "contrastive"],
        Phase::Stage(_) => &["step", "task", "lr", "loss"],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tasks::render::render_many;
    use crate::tasks::templates;

    fn vocab() -> Vocabulary {
        let corpus = templates::vocab_corpus();
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        Vocabulary::build(refs.iter().copied())
    }

    #[test]
    fn schedule_matches_closed_form() {
        assert!((lr_at(50, 1000, 1e-4, 100).unwrap() - 5e-5).abs() < 1e-18);
        assert!((lr_at(100, 1000, 1e-4, 100).unwrap() - 1e-4).abs() < 1e-18);
        assert!(lr_at(1000, 1000, 1e-4, 100).unwrap().abs() < 1e-18);
        assert_eq!(lr_at(0, 1000, 1e-4, 100).unwrap(), 0.0);
        assert!(lr_at(0, 100, 1e-4, 100).is_err());
        assert!(lr_at(5, 0, 1e-4, 0).is_err());
        // Monotone through warmup, decaying after.
        let a = lr_at(550, 1000, 1e-4, 100).unwrap();
        let b = lr_at(551, 1000, 1e-4, 100).unwrap();
        assert!(b < a);
    }

    #[test]
    fn adam_moves_only_trainable_params() {
        let v = vocab();
        let mut m: Model<f32> = Model::init(ModelConfig::desk(v.len()), 1).unwrap();
        m.store.set_trainable_groups(&[Group::AudioMarker]);
        let before_marker = m.store.get(m.marker).values.clone();
        let before_lm = m.store.group_bytes(Group::Lm);
        let mut g = m.graph();
        let rows = m
            .lm
            .token_rows(&mut g, m.marker, &[vocab::BOS, vocab::AUDIO], m.cfg.vocab_size)
            .unwrap();
        let loss = g.tape.mean(rows).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut opt = Adam::new();
        opt.step(&mut m.store, &grads, 1e-2);
        assert_ne!(m.store.get(m.marker).values, before_marker);
        assert_eq!(m.store.group_bytes(Group::Lm), before_lm);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // With zero moments the first bias-corrected update is lr * sign(g).
        let v = vocab();
        let mut m: Model<f32> = Model::init(ModelConfig::desk(v.len()), 1).unwrap();
        m.store.set_trainable_groups(&[Group::AudioMarker]);
        let before = m.store.get(m.marker).values.clone();
        let mut g = m.graph();
        let leaf = g.p(m.marker).unwrap();
        let loss = g.tape.mean(leaf).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut opt = Adam::new();
        opt.step(&mut m.store, &grads, 1e-3);
        let after = &m.store.get(m.marker).values;
        for (b, a) in before.iter().zip(after.iter()) {
            // Gradient of the mean is uniformly positive.
            let delta = (b - a) as f64;
            assert!((delta - 1e-3).abs() < 1e-6, "delta {delta}");
        }
    }

    #[test]
    fn train_state_roundtrips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.aptf");
        let v = vocab();
        let mut m: Model<f32> = Model::init(ModelConfig::desk(v.len()), 2).unwrap();
        m.store.set_trainable_groups(&[Group::AudioMarker]);
        let mut opt = Adam::new();
        let mut g = m.graph();
        let leaf = g.p(m.marker).unwrap();
        let loss = g.tape.mean(leaf).unwrap();
        let grads = g.backward(loss).unwrap();
        opt.step(&mut m.store, &grads, 1e-3);
        save_train_state(&path, &m.store, &opt, Phase::Stage(1), 17).unwrap();

        let mut m2: Model<f32> = Model::init(ModelConfig::desk(v.len()), 99).unwrap();
        let mut opt2 = Adam::new();
        let (phase, step) = load_train_state(&path, &mut m2.store, &mut opt2).unwrap();
        assert_eq!(phase, Phase::Stage(1));
        assert_eq!(step, 17);
        assert_eq!(opt2.steps_taken(), 1);
        for (id, p) in m.store.iter() {
            assert_eq!(p.values, m2.store.get(id).values, "{}", p.name);
        }
        assert_eq!(opt.m.get("marker"), opt2.m.get("marker"));
        assert_eq!(opt.v.get("marker"), opt2.v.get("marker"));
    }

    #[test]
    fn caption_batch_picks_distinct_classes() {
        let opts = RenderOpts {
            sample_rate: 16_000,
            fsc_ways: 2,
            fsc_shots: 1,
        };
        let records: Vec<Record> = (0..24)
            .map(|i| render_record_text(Task::Aac, "t", i, &opts, 5).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let picked = pick_caption_batch(&mut rng, &records, 6).unwrap();
        let keys: HashSet<&str> = picked.iter().map(|r| caption_key(&r.target)).collect();
        assert_eq!(keys.len(), picked.len());
        assert!(picked.len() >= 2);
    }

    #[test]
    fn lm_pretraining_reduces_loss() {
        let v = vocab();
        let mut cfg = RunConfig::default();
        cfg.lm_steps = 80;
        cfg.lm_warmup = 8;
        cfg.lm_lr = 2e-3;
        let mut m: Model<f32> = Model::init(cfg.model_config(v.len()), cfg.seed).unwrap();
        let opts = RenderOpts::from_config(&cfg);
        // Loss of the untouched model on step-0 text.
        let initial = {
            let ids = packed_ids(&v, &cfg, &opts, 0).unwrap();
            let mut targets: Vec<usize> = ids[1..].iter().map(|&t| t as usize).collect();
            targets.push(IGNORE_INDEX);
            let mut g = m.graph();
            let rows = m
                .lm
                .token_rows(&mut g, m.marker, &ids, m.cfg.vocab_size)
                .unwrap();
            let logits = m.lm.forward_embedded(&mut g, &m.cfg, rows).unwrap();
            let loss = g.tape.cross_entropy(logits, &targets).unwrap();
            g.tape.value(loss)[0] as f64
        };
        let mut opt = Adam::new();
        let last = pretrain_lm(&mut m, &v, &cfg, &mut opt, 0, None, None).unwrap();
        assert!(
            last < initial * 0.7,
            "loss {initial} -> {last} after 80 steps"
        );
    }

    #[test]
    fn stage_run_resumes_bit_exactly() {
        let v = vocab();
        let mut cfg = RunConfig::default();
        cfg.train_per_task = 4;
        cfg.stage0_steps = 6;
        cfg.stage0_warmup = 2;
        cfg.stage0_batch = 3;
        let opts = RenderOpts::from_config(&cfg);
        let mut rendered = Vec::new();
        for task in stage_tasks(0, cfg.include_nlar).unwrap() {
            rendered.extend(render_many(task, "train0", cfg.train_per_task, &opts, cfg.seed).unwrap());
        }
        let records: Vec<Record> = rendered.iter().map(|r| r.record.clone()).collect();
        let clips = ClipStore::from_rendered(&rendered);
        let spec = StageSpec::from_config(&cfg, 0).unwrap();

        // Straight-through run.
        let mut m1: Model<f32> = Model::init(cfg.model_config(v.len()), cfg.seed).unwrap();
        let f1 = Features::new(&m1.cfg).unwrap();
        let mut o1 = Adam::new();
        run_stage(&mut m1, &v, &clips, &f1, &records, &spec, &mut o1, cfg.seed, false, 0, None, None)
            .unwrap();

        // Interrupted after 3 steps, saved, reloaded, finished.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.aptf");
        let mut m2: Model<f32> = Model::init(cfg.model_config(v.len()), cfg.seed).unwrap();
        let f2 = Features::new(&m2.cfg).unwrap();
        let mut o2 = Adam::new();
        run_stage(&mut m2, &v, &clips, &f2, &records, &spec, &mut o2, cfg.seed, false, 0, Some(3), None)
            .unwrap();
        save_train_state(&path, &m2.store, &o2, Phase::Stage(0), 3).unwrap();

        let mut m3: Model<f32> = Model::init(cfg.model_config(v.len()), cfg.seed + 1).unwrap();
        let mut o3 = Adam::new();
        let (phase, next) = load_train_state(&path, &mut m3.store, &mut o3).unwrap();
        assert_eq!(phase, Phase::Stage(0));
        let f3 = Features::new(&m3.cfg).unwrap();
        run_stage(&mut m3, &v, &clips, &f3, &records, &spec, &mut o3, cfg.seed, false, next, None, None)
            .unwrap();

        for (id, p) in m1.store.iter() {
            let q = m3.store.get(id);
            assert_eq!(p.values, q.values, "parameter {} diverged", p.name);
        }
    }

    #[test]
    fn stage1_step_trains_marker_and_freezes_lm() {
        let v = vocab();
        let mut cfg = RunConfig::default();
        cfg.train_per_task = 2;
        cfg.stage1_steps = 2;
        cfg.stage1_warmup = 1;
        let opts = RenderOpts::from_config(&cfg);
        let mut rendered = Vec::new();
        for task in stage_tasks(1, cfg.include_nlar).unwrap() {
            rendered.extend(render_many(task, "train1", cfg.train_per_task, &opts, cfg.seed).unwrap());
        }
        let records: Vec<Record> = rendered.iter().map(|r| r.record.clone()).collect();
        let clips = ClipStore::from_rendered(&rendered);
        let mut m: Model<f32> = Model::init(cfg.model_config(v.len()), cfg.seed).unwrap();
        let features = Features::new(&m.cfg).unwrap();
        let mut opt = Adam::new();
        let spec = StageSpec::from_config(&cfg, 1).unwrap();
        let lm_before = m.store.group_bytes(Group::Lm);
        let enc_before = m.store.group_bytes(Group::Encoder);
        let marker_before = m.store.get(m.marker).values.clone();
        let last = run_stage(
            &mut m, &v, &clips, &features, &records, &spec, &mut opt, cfg.seed, false, 0, None, None,
        )
        .unwrap();
        assert!(last.is_finite());
        assert_eq!(m.store.group_bytes(Group::Lm), lm_before);
        assert_eq!(m.store.group_bytes(Group::Encoder), enc_before);
        assert_ne!(m.store.get(m.marker).values, marker_before);
    }
}
