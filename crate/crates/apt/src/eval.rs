//! Evaluation: answer normalization, text metrics, retrieval scoring,
//! and the per-task protocols. Generative tasks decode greedily and score
//! exact match or token F1; retrieval ranks clips against class names by
//! cosine in the aligner's shared space.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::io::Record;
use crate::model::aligner::conditioning_ids;
use crate::model::vocab::tokenize;
use crate::model::MaskMode;
use crate::pipeline::Runner;
use crate::tasks::{nlar, Task};
use crate::tensor::Scalar;

// ── Text metrics ─────────────────────────────────────────────────────────

/// Case-fold and drop terminal punctuation; decoding often closes an
/// answer with a period the reference lacks.
pub fn normalize_answer(s: &str) -> String {
    let folded = s.trim().to_lowercase();
    let trimmed = folded.trim_end_matches(['.', ',', '!', '?', ';', ':']);
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn exact_match(pred: &str, gold: &str) -> bool {
    normalize_answer(pred) == normalize_answer(gold)
}

/// Bag-of-tokens F1 between prediction and reference.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = tokenize(&normalize_answer(pred));
    let g = tokenize(&normalize_answer(gold));
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts = std::collections::HashMap::new();
    for t in &g {
        *counts.entry(t.as_str()).or_insert(0usize) += 1;
    }
    let mut overlap = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

// ── Retrieval ────────────────────────────────────────────────────────────

/// Average precision of one ranking. Items are ranked by descending
/// similarity with index order breaking ties, so results are deterministic.
pub fn average_precision(sims: &[f64], relevant: &[bool]) -> Result<f64> {
    if sims.len() != relevant.len() || sims.is_empty() {
        return Err(Error::contract("ranking needs matched, non-empty inputs"));
    }
    if !relevant.iter().any(|&r| r) {
        return Err(Error::contract("ranking with no relevant items"));
    }
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if relevant[idx] {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / hits as f64)
}

pub fn mean_average_precision(sims: &[Vec<f64>], relevant: &[Vec<bool>]) -> Result<f64> {
    if sims.len() != relevant.len() || sims.is_empty() {
        return Err(Error::contract("no retrieval queries"));
    }
    let mut total = 0.0;
    for (s, r) in sims.iter().zip(relevant) {
        total += average_precision(s, r)?;
    }
    Ok(total / sims.len() as f64)
}

// ── Embeddings ───────────────────────────────────────────────────────────

fn l2n(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= n;
    }
    v
}

/// Clip embedding: mean-pooled query rows of an isolated-stream forward,
/// unit-normalized.
pub fn audio_embedding<F: Scalar>(runner: &Runner<'_, F>, reference: &str) -> Result<Vec<f64>> {
    let mut g = runner.model.graph();
    let fm = runner.stacked_feature_map(&mut g, reference)?;
    let alg = runner.model.alg.query()?;
    let out = alg.forward(&mut g, &runner.model.cfg, Some(fm), &[], MaskMode::Unimodal)?;
    let (nq, d) = g.tape.shape(out.queries);
    let vals = g.tape.value(out.queries);
    let mut pooled = vec![0.0f64; d];
    for r in 0..nq {
        for c in 0..d {
            pooled[c] += vals[r * d + c].to_f64v();
        }
    }
    for x in &mut pooled {
        *x /= nq as f64;
    }
    Ok(l2n(pooled))
}

/// Text embedding: the first caption position of an isolated-stream
/// forward, unit-normalized.
pub fn text_embedding<F: Scalar>(runner: &Runner<'_, F>, text: &str) -> Result<Vec<f64>> {
    let cfg = &runner.model.cfg;
    let ids = conditioning_ids(runner.vocab, text, cfg.alg_max_text);
    if ids.is_empty() {
        return Err(Error::contract(format!("text '{text}' has no tokens")));
    }
    let mut g = runner.model.graph();
    let alg = runner.model.alg.query()?;
    let out = alg.forward(&mut g, cfg, None, &ids, MaskMode::Unimodal)?;
    let rows = out
        .text
        .ok_or_else(|| Error::contract("aligner returned no text rows"))?;
    let first = g.tape.slice(rows, 0, 0, 1)?;
    let vals = g.tape.value(first).iter().map(|v| v.to_f64v()).collect();
    Ok(l2n(vals))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ── Per-task protocols ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMetric {
    ExactMatch,
    TokenF1,
    RetrievalMap,
}

impl TaskMetric {
    pub fn name(self) -> &'static str {
        match self {
            TaskMetric::ExactMatch => "exact_match",
            TaskMetric::TokenF1 => "token_f1",
            TaskMetric::RetrievalMap => "map",
        }
    }
}

pub fn metric_for(task: Task) -> TaskMetric {
    match task {
        Task::At => TaskMetric::RetrievalMap,
        Task::Aac | Task::Qsed => TaskMetric::TokenF1,
        _ => TaskMetric::ExactMatch,
    }
}

/// Decode budget per task; sequence descriptions run long.
pub fn max_new_tokens(task: Task) -> usize {
    match task {
        Task::Qsed => 48,
        Task::Aac => 16,
        _ => 8,
    }
}

/// One scored evaluation item: a generated answer against its reference,
/// or a retrieval query with the quality of its ranking.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ItemScore {
    pub prompt: String,
    pub target: String,
    pub prediction: String,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub task: Task,
    pub metric: &'static str,
    pub score: f64,
    pub n: usize,
    pub items: Vec<ItemScore>,
}

fn check_task(records: &[Record], task: Task) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Dependency(format!(
            "no evaluation records for task '{}'",
            task.tag()
        )));
    }
    if let Some(r) = records.iter().find(|r| r.task != task.tag()) {
        return Err(Error::contract(format!(
            "record of task '{}' in the '{}' evaluation",
            r.task,
            task.tag()
        )));
    }
    Ok(())
}

/// Text-to-audio retrieval over the evaluation pool: each distinct class
/// name queries the clip embeddings.
fn retrieval_map<F: Scalar>(
    runner: &Runner<'_, F>,
    records: &[Record],
) -> Result<(f64, Vec<ItemScore>)> {
    let clip_embs: Vec<Vec<f64>> = records
        .iter()
        .map(|r| audio_embedding(runner, &r.audio_refs[0]))
        .collect::<Result<_>>()?;
    let classes: BTreeSet<&str> = records.iter().map(|r| r.target.as_str()).collect();
    if classes.len() < 2 {
        return Err(Error::contract(
            "retrieval pool needs at least two classes",
        ));
    }
    let mut items = Vec::with_capacity(classes.len());
    for class in classes {
        let q = text_embedding(runner, class)?;
        let sims: Vec<f64> = clip_embs.iter().map(|e| cosine(&q, e)).collect();
        let relevant: Vec<bool> = records.iter().map(|r| r.target == class).collect();
        items.push(ItemScore {
            prompt: class.to_string(),
            target: class.to_string(),
            prediction: String::new(),
            score: average_precision(&sims, &relevant)?,
        });
    }
    let score = items.iter().map(|i| i.score).sum::<f64>() / items.len() as f64;
    Ok((score, items))
}

/// Score one task's records with its own protocol.
pub fn evaluate_task<F: Scalar>(
    runner: &Runner<'_, F>,
    task: Task,
    records: &[Record],
) -> Result<EvalReport> {
    check_task(records, task)?;
    let metric = metric_for(task);
    let (score, items) = match metric {
        TaskMetric::RetrievalMap => retrieval_map(runner, records)?,
        TaskMetric::ExactMatch | TaskMetric::TokenF1 => {
            let mut items = Vec::with_capacity(records.len());
            for r in records {
                let pred = runner.generate(r, max_new_tokens(task))?;
                let score = match metric {
                    TaskMetric::ExactMatch => exact_match(&pred, &r.target) as usize as f64,
                    _ => token_f1(&pred, &r.target),
                };
                items.push(ItemScore {
                    prompt: r.prompt.clone(),
                    target: r.target.clone(),
                    prediction: pred,
                    score,
                });
            }
            let mean = items.iter().map(|i| i.score).sum::<f64>() / records.len() as f64;
            (mean, items)
        }
    };
    Ok(EvalReport {
        task,
        metric: metric.name(),
        score,
        n: records.len(),
        items,
    })
}

/// Accuracy of always answering the most common target.
pub fn majority_baseline(records: &[Record]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::HashMap::new();
    for r in records {
        *counts.entry(r.target.as_str()).or_insert(0usize) += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    best as f64 / records.len() as f64
}

/// Order sensitivity over the reasoning records that have it: a record
/// counts only when the model answers correctly with the clips as given
/// and again with the clips swapped.
pub fn order_flip_accuracy<F: Scalar>(
    runner: &Runner<'_, F>,
    records: &[Record],
) -> Result<(f64, usize)> {
    let sensitive: Vec<&Record> = records
        .iter()
        .filter(|r| r.meta.order_sensitive)
        .collect();
    if sensitive.is_empty() {
        return Ok((0.0, 0));
    }
    let mut hits = 0usize;
    for r in &sensitive {
        let swapped = nlar::swapped_record(r)?;
        let a = runner.generate(r, max_new_tokens(Task::Nlar))?;
        let b = runner.generate(&swapped, max_new_tokens(Task::Nlar))?;
        if exact_match(&a, &r.target) && exact_match(&b, &swapped.target) {
            hits += 1;
        }
    }
    Ok((hits as f64 / sensitive.len() as f64, sensitive.len()))
}
