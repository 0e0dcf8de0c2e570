//! Ablation bench: paired runs that differ on exactly one axis, trained
//! on one shared rendered dataset and reported side by side. Desk-scale
//! scores are directional evidence only, so the bench asserts completion
//! and report integrity, never an ordering between arms.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::io::RunConfig;
use crate::model::{AlignerArch, Model, PoolKind};
use crate::run::{build_vocab, evaluate_tasks, load_corpus, train_all, RunPaths};
use crate::tasks::render::{write_dataset, DatasetPaths};
use crate::tasks::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    AlignerArch,
    Pooling,
    TokenCount,
    Curriculum,
    NlarTraining,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::AlignerArch,
        Axis::Pooling,
        Axis::TokenCount,
        Axis::Curriculum,
        Axis::NlarTraining,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::AlignerArch => "aligner",
            Axis::Pooling => "pooling",
            Axis::TokenCount => "tokens",
            Axis::Curriculum => "curriculum",
            Axis::NlarTraining => "nlar",
        }
    }

    pub fn parse(s: &str) -> Result<Axis> {
        Axis::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation axis '{s}'")))
    }

    /// What each arm is scored on after training.
    pub fn eval_tasks(self) -> &'static [Task] {
        match self {
            Axis::AlignerArch | Axis::Pooling => &[Task::Aac, Task::Sec],
            Axis::TokenCount => &[Task::Aac],
            Axis::Curriculum => &[Task::Aac, Task::Sec, Task::Aqa],
            Axis::NlarTraining => &[Task::Nlar],
        }
    }

    /// The arms, as deviations from the base configuration. The caption
    /// pretraining stage needs the aligner's text path, so linear arms
    /// drop it; that skip is part of the arm, not a second axis.
    pub fn arms(self, base: &RunConfig) -> Vec<Arm> {
        let arm = |name: &str, f: &dyn Fn(&mut RunConfig)| {
            let mut cfg = base.clone();
            f(&mut cfg);
            Arm {
                name: name.to_string(),
                cfg,
            }
        };
        match self {
            Axis::AlignerArch => vec![
                arm("transformer", &|c| {
                    c.aligner_arch = AlignerArch::Transformer;
                }),
                arm("linear", &|c| {
                    c.aligner_arch = AlignerArch::Linear;
                    c.stage0_steps = 0;
                }),
            ],
            Axis::Pooling => vec![
                arm("mean", &|c| {
                    c.aligner_arch = AlignerArch::Linear;
                    c.stage0_steps = 0;
                    c.pooling = PoolKind::Mean;
                }),
                arm("learnable", &|c| {
                    c.aligner_arch = AlignerArch::Linear;
                    c.stage0_steps = 0;
                    c.pooling = PoolKind::Learnable;
                }),
            ],
            Axis::TokenCount => [16usize, 32, 64]
                .iter()
                .map(|&q| {
                    arm(&format!("q{q}"), &move |c: &mut RunConfig| {
                        c.n_queries = q;
                    })
                })
                .collect(),
            Axis::Curriculum => vec![
                arm("staged", &|_| {}),
                arm("single", &|c| {
                    c.stage2_steps = c.stage0_steps + c.stage1_steps + c.stage2_steps;
                    c.stage0_steps = 0;
                    c.stage1_steps = 0;
                }),
            ],
            Axis::NlarTraining => vec![
                arm("with", &|c| c.include_nlar = true),
                arm("without", &|c| c.include_nlar = false),
            ],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Arm {
    pub name: String,
    pub cfg: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArmStatus {
    Completed,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct ArmReport {
    pub name: String,
    pub status: ArmStatus,
    pub data_hash: String,
    pub final_loss: Option<f64>,
    pub scores: Vec<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct AxisReport {
    pub axis: Axis,
    pub arms: Vec<ArmReport>,
}

impl AxisReport {
    /// Long-form table: one row per arm and task.
    pub fn csv(&self) -> String {
        let mut s = String::from("axis,arm,status,data_hash,final_loss,task,metric,score,n\n");
        for arm in &self.arms {
            let status = match &arm.status {
                ArmStatus::Completed => "completed".to_string(),
                ArmStatus::Failed(why) => format!("failed: {}", why.replace(',', ";")),
            };
            let loss = arm
                .final_loss
                .map(|l| format!("{l:.6}"))
                .unwrap_or_default();
            if arm.scores.is_empty() {
                let _ = writeln!(
                    s,
                    "{},{},{status},{},{loss},,,,0",
                    self.axis.name(),
                    arm.name,
                    arm.data_hash
                );
            }
            for r in &arm.scores {
                let _ = writeln!(
                    s,
                    "{},{},{status},{},{loss},{},{},{:.6},{}",
                    self.axis.name(),
                    arm.name,
                    arm.data_hash,
                    r.task.tag(),
                    r.metric,
                    r.score,
                    r.n
                );
            }
        }
        s
    }

    /// Human-readable side-by-side table with per-task deltas between the
    /// first two arms. Deltas are recorded, not asserted.
    pub fn summary(&self) -> String {
        let tasks = self.axis.eval_tasks();
        let mut s = format!("axis: {}\n", self.axis.name());
        let _ = write!(s, "{:<14}{:<12}{:<14}", "arm", "status", "data");
        for t in tasks {
            let _ = write!(s, "{:<18}", format!("{}", t.tag()));
        }
        s.push('\n');
        for arm in &self.arms {
            let status = match &arm.status {
                ArmStatus::Completed => "completed",
                ArmStatus::Failed(_) => "failed",
            };
            let _ = write!(
                s,
                "{:<14}{:<12}{:<14}",
                arm.name,
                status,
                &arm.data_hash[..12.min(arm.data_hash.len())]
            );
            for t in tasks {
                match arm.scores.iter().find(|r| r.task == *t) {
                    Some(r) => {
                        let _ = write!(s, "{:<18}", format!("{}={:.4}", r.metric, r.score));
                    }
                    None => {
                        let _ = write!(s, "{:<18}", "-");
                    }
                }
            }
            s.push('\n');
        }
        if self.arms.len() >= 2 {
            let (a, b) = (&self.arms[0], &self.arms[1]);
            if a.status == ArmStatus::Completed && b.status == ArmStatus::Completed {
                let mut deltas = Vec::new();
                for t in tasks {
                    let sa = a.scores.iter().find(|r| r.task == *t);
                    let sb = b.scores.iter().find(|r| r.task == *t);
                    if let (Some(sa), Some(sb)) = (sa, sb) {
                        deltas.push(format!("{} {:+.4}", t.tag(), sa.score - sb.score));
                    }
                }
                if !deltas.is_empty() {
                    let _ = writeln!(
                        s,
                        "delta ({} - {}): {}",
                        a.name,
                        b.name,
                        deltas.join(", ")
                    );
                }
            }
        }
        match self.axis {
            Axis::Curriculum => {
                s.push_str(
                    "note: staged training is expected to land at or above the single-stage \
                     arm; the bench records the delta and asserts nothing.\n",
                );
            }
            Axis::NlarTraining => {
                s.push_str(
                    "note: training with the reasoning task is expected to help its own eval; \
                     the bench records the delta and asserts nothing.\n",
                );
            }
            _ => {}
        }
        s
    }
}

/// Render the shared dataset once. Reasoning records are always included
/// so the with/without arms read the same files and select from them.
pub fn ensure_bench_data(base: &RunConfig, data_dir: &Path) -> Result<()> {
    let probe = DatasetPaths::new(data_dir).stage_manifest(0);
    if probe.exists() {
        return Ok(());
    }
    let mut render_cfg = base.clone();
    render_cfg.include_nlar = true;
    write_dataset(data_dir, &render_cfg)?;
    Ok(())
}

/// Train and score every arm of one axis. Arms whose training diverges
/// are marked failed; the comparison is still emitted.
pub fn run_axis(axis: Axis, base: &RunConfig, bench_root: &Path) -> Result<AxisReport> {
    base.validate()?;
    let data_dir = bench_root.join("data");
    ensure_bench_data(base, &data_dir)?;
    let vocab = build_vocab();
    let mut reports = Vec::new();
    for arm in axis.arms(base) {
        let corpus = load_corpus(&data_dir, arm.cfg.include_nlar)?;
        let mut model: Model<f32> =
            Model::init(arm.cfg.model_config(vocab.len()), arm.cfg.seed)?;
        let paths = RunPaths::new(bench_root.join(axis.name()).join(&arm.name));
        let (status, final_loss, scores) =
            match train_all(&arm.cfg, &vocab, &mut model, &corpus, &paths, 0) {
                Ok(outcome) => {
                    let scores = evaluate_tasks(&model, &vocab, &data_dir, axis.eval_tasks())?;
                    let last = outcome.last_loss.iter().rev().find_map(|l| *l);
                    (ArmStatus::Completed, last, scores)
                }
                Err(Error::NonFiniteLoss { stage, step, task }) => (
                    ArmStatus::Failed(format!("{stage} step {step} ({task}): non-finite loss")),
                    None,
                    Vec::new(),
                ),
                Err(e) => return Err(e),
            };
        reports.push(ArmReport {
            name: arm.name,
            status,
            data_hash: corpus.train_hash,
            final_loss,
            scores,
        });
    }
    let first = &reports[0].data_hash;
    if reports.iter().any(|r| &r.data_hash != first) {
        return Err(Error::contract(format!(
            "{} arms trained on different data",
            axis.name()
        )));
    }
    let report = AxisReport { axis, arms: reports };
    let dir = bench_root.join(axis.name());
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("comparison.csv"), report.csv())?;
    fs::write(dir.join("summary.txt"), report.summary())?;
    Ok(report)
}

/// Run several axes and write the combined summary.
pub fn run_bench(axes: &[Axis], base: &RunConfig, bench_root: &Path) -> Result<Vec<AxisReport>> {
    let mut all = Vec::new();
    for &axis in axes {
        all.push(run_axis(axis, base, bench_root)?);
    }
    let combined: Vec<String> = all.iter().map(AxisReport::summary).collect();
    fs::create_dir_all(bench_root)?;
    fs::write(bench_root.join("summary.txt"), combined.join("\n"))?;
    Ok(all)
}

/// The bench's comparison CSV path for one axis.
pub fn axis_csv_path(bench_root: &Path, axis: Axis) -> PathBuf {
    bench_root.join(axis.name()).join("comparison.csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// Keys on which a pair of arms may differ.
    fn allowed(axis: Axis) -> BTreeSet<&'static str> {
        match axis {
            Axis::AlignerArch => ["aligner_arch", "stage0_steps"].into(),
            Axis::Pooling => ["pooling"].into(),
            Axis::TokenCount => ["n_queries"].into(),
            Axis::Curriculum => ["stage0_steps", "stage1_steps", "stage2_steps"].into(),
            Axis::NlarTraining => ["include_nlar"].into(),
        }
    }

    fn diff_keys(a: &RunConfig, b: &RunConfig) -> BTreeSet<String> {
        a.render()
            .lines()
            .zip(b.render().lines())
            .filter(|(x, y)| x != y)
            .map(|(x, _)| x.split('=').next().unwrap().trim().to_string())
            .collect()
    }

    #[test]
    fn arms_differ_only_on_their_axis() {
        let base = RunConfig::default();
        for axis in Axis::ALL {
            let arms = axis.arms(&base);
            assert!(arms.len() >= 2, "{} needs paired arms", axis.name());
            for i in 0..arms.len() {
                for j in i + 1..arms.len() {
                    let diff = diff_keys(&arms[i].cfg, &arms[j].cfg);
                    let allowed = allowed(axis);
                    assert!(
                        diff.iter().all(|k| allowed.contains(k.as_str())),
                        "{}: arms {} and {} differ on {:?}",
                        axis.name(),
                        arms[i].name,
                        arms[j].name,
                        diff
                    );
                    assert!(!diff.is_empty(), "{}: identical arms", axis.name());
                }
            }
        }
        // The single-stage arm keeps the total step budget.
        let curr = Axis::Curriculum.arms(&base);
        let staged = &curr[0].cfg;
        let single = &curr[1].cfg;
        assert_eq!(
            single.stage2_steps,
            staged.stage0_steps + staged.stage1_steps + staged.stage2_steps
        );
        assert_eq!(single.stage0_steps, 0);
        // Every arm of every axis still validates.
        for axis in Axis::ALL {
            for arm in axis.arms(&base) {
                arm.cfg.validate().unwrap();
            }
        }
    }

    #[test]
    fn axis_names_roundtrip() {
        for axis in Axis::ALL {
            assert_eq!(Axis::parse(axis.name()).unwrap(), axis);
        }
        assert!(Axis::parse("dropout").is_err());
    }

    #[test]
    fn failed_arm_still_appears_in_reports() {
        let report = AxisReport {
            axis: Axis::Curriculum,
            arms: vec![
                ArmReport {
                    name: "staged".into(),
                    status: ArmStatus::Completed,
                    data_hash: "aa".repeat(32),
                    final_loss: Some(1.25),
                    scores: vec![EvalReport {
                        task: Task::Aac,
                        metric: "token_f1",
                        score: 0.5,
                        n: 4,
                        items: Vec::new(),
                    }],
                },
                ArmReport {
                    name: "single".into(),
                    status: ArmStatus::Failed("stage2 step 7 (aqa): non-finite loss".into()),
                    data_hash: "aa".repeat(32),
                    final_loss: None,
                    scores: vec![],
                },
            ],
        };
        let csv = report.csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "axis,arm,status,data_hash,final_loss,task,metric,score,n");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].contains("failed"));
        assert!(lines[2].ends_with(",0"));
        // Every data row has the full column count.
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 9, "{line}");
        }
        let text = report.summary();
        assert!(text.contains("staged"));
        assert!(text.contains("failed"));
        assert!(text.contains("note:"));
    }

    #[test]
    fn pooling_axis_runs_end_to_end_on_a_micro_config() {
        let tmp = tempfile::tempdir().unwrap();
        let mut base = RunConfig::default();
        base.train_per_task = 3;
        base.eval_per_task = 2;
        base.lm_steps = 4;
        base.lm_warmup = 1;
        base.stage0_steps = 3;
        base.stage0_warmup = 1;
        base.stage0_batch = 3;
        base.stage1_steps = 3;
        base.stage1_warmup = 1;
        base.stage2_steps = 3;
        base.stage2_warmup = 1;
        let report = run_axis(Axis::Pooling, &base, tmp.path()).unwrap();
        assert_eq!(report.arms.len(), 2);
        for arm in &report.arms {
            assert_eq!(arm.status, ArmStatus::Completed, "{}", arm.name);
            assert_eq!(arm.scores.len(), 2);
        }
        assert_eq!(report.arms[0].data_hash, report.arms[1].data_hash);
        assert!(axis_csv_path(tmp.path(), Axis::Pooling).exists());
        assert!(tmp.path().join("pooling/summary.txt").exists());
    }
}
