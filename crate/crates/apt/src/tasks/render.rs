//! Record rendering and dataset writing. A record is fully determined by
//! (run seed, split, task, index); the writer lays clips and manifests
//! out under a dataset directory, and the same renderer can hand records
//! straight to a trainer without touching disk.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{synthesize_clip, write_wav, Annotation, AudioClip};
use crate::error::{Error, Result};
use crate::io::{manifest, Meta, Record, RunConfig};
use crate::tasks::{episodes, mix_seed, nlar, scenes, stage_tasks, templates, Task};

#[derive(Debug, Clone)]
pub struct RenderOpts {
    pub sample_rate: u32,
    pub fsc_ways: usize,
    pub fsc_shots: usize,
}

impl RenderOpts {
    pub fn from_config(cfg: &RunConfig) -> RenderOpts {
        RenderOpts {
            sample_rate: 16_000,
            fsc_ways: cfg.fsc_ways,
            fsc_shots: cfg.fsc_shots,
        }
    }
}

pub struct RenderedRecord {
    pub record: Record,
    /// Parallel to `record.audio_refs`.
    pub clips: Vec<AudioClip>,
}

fn task_ordinal(task: Task) -> u64 {
    Task::ALL.iter().position(|&t| t == task).unwrap() as u64
}

fn split_ordinal(split: &str) -> u64 {
    split.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64))
}

/// Build one record's scenes and text without synthesizing audio.
fn compose_record(
    task: Task,
    split: &str,
    index: usize,
    opts: &RenderOpts,
    run_seed: u64,
) -> Result<(Record, Vec<Annotation>)> {
    let seed = mix_seed(&[run_seed, task_ordinal(task), split_ordinal(split), index as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut template_id = 0u32;
    let mut order_sensitive = false;
    let mut clip_texts: Vec<String> = Vec::new();

    let (annotations, prompt, target): (Vec<Annotation>, String, String) = match task {
        Task::At => {
            let (ann, class) = scenes::single_event(&mut rng, true);
            (vec![ann], String::new(), class.name.to_string())
        }
        Task::Aac => {
            template_id = rng.gen_range(0..templates::AAC_PROMPTS.len() as u32);
            let (ann, class) = scenes::single_event(&mut rng, true);
            (
                vec![ann],
                templates::AAC_PROMPTS[template_id as usize].to_string(),
                templates::caption(class),
            )
        }
        Task::Sec => {
            template_id = rng.gen_range(0..templates::SEC_PROMPTS.len() as u32);
            let (ann, class) = scenes::single_event(&mut rng, true);
            (
                vec![ann],
                templates::SEC_PROMPTS[template_id as usize].to_string(),
                class.name.to_string(),
            )
        }
        Task::Aqa => {
            template_id = rng.gen_range(0..3u32);
            match template_id {
                0 => {
                    let (ann, class, count) = scenes::counting_scene(&mut rng);
                    (
                        vec![ann],
                        templates::aqa_count_prompt(class.name),
                        templates::count_answer(count),
                    )
                }
                1 => {
                    let (ann, class) = scenes::single_event(&mut rng, true);
                    let present: bool = rng.gen();
                    let about = if present {
                        class.name.to_string()
                    } else {
                        loop {
                            let other = crate::audio::ONTOLOGY
                                [rng.gen_range(0..crate::audio::ONTOLOGY.len())]
                            .name;
                            if other != class.name {
                                break other.to_string();
                            }
                        }
                    };
                    (
                        vec![ann],
                        templates::aqa_presence_prompt(&about),
                        nlar::yes_no(present).to_string(),
                    )
                }
                _ => {
                    let continuous: bool = rng.gen();
                    let ann = if continuous {
                        scenes::throughout_scene(&mut rng).0
                    } else {
                        scenes::counting_scene(&mut rng).0
                    };
                    (
                        vec![ann],
                        templates::AQA_CONTINUOUS_PROMPT.to_string(),
                        nlar::yes_no(continuous).to_string(),
                    )
                }
            }
        }
        Task::Qsed => {
            template_id = rng.gen_range(0..templates::QSED_PROMPTS.len() as u32);
            let n = rng.gen_range(2..=3usize);
            let (ann, _) = scenes::sequence_scene(&mut rng, n);
            let target = templates::qsed_target(&ann);
            (
                vec![ann],
                templates::QSED_PROMPTS[template_id as usize].to_string(),
                target,
            )
        }
        Task::Ter => {
            template_id = rng.gen_range(0..3u32);
            let n = 2 + rng.gen_range(0..2usize);
            let (ann, labels) = scenes::sequence_scene(&mut rng, n);
            match template_id {
                0 => (
                    vec![ann],
                    templates::TER_FIRST_PROMPT.to_string(),
                    labels[0].name.to_string(),
                ),
                1 => (
                    vec![ann],
                    templates::TER_LAST_PROMPT.to_string(),
                    labels.last().unwrap().name.to_string(),
                ),
                _ => {
                    let forward: bool = rng.gen();
                    let (x, y) = if forward {
                        (labels[0], labels[1])
                    } else {
                        (labels[1], labels[0])
                    };
                    (
                        vec![ann],
                        templates::ter_before_prompt(x.name, y.name),
                        nlar::yes_no(forward).to_string(),
                    )
                }
            }
        }
        Task::Fsc => {
            let e = episodes::render_episode(&mut rng, opts.fsc_ways, opts.fsc_shots)?;
            clip_texts = e.clip_texts;
            (e.clips, templates::FSC_PROMPT.to_string(), e.query_label)
        }
        Task::Nlar => {
            let family = nlar::Family::ALL[rng.gen_range(0..nlar::Family::ALL.len())];
            template_id = nlar::Family::ALL.iter().position(|&f| f == family).unwrap() as u32;
            order_sensitive = family.order_sensitive();
            let e = nlar::render_example(&mut rng, family)?;
            (vec![e.clip_a, e.clip_b], e.prompt, e.target)
        }
    };

    let mut audio_refs = Vec::with_capacity(annotations.len());
    for (k, ann) in annotations.iter().enumerate() {
        ann.validate()?;
        audio_refs.push(format!("clips/{split}_{}_{index:04}_{k}.wav", task.tag()));
    }
    let record = Record {
        task: task.tag().to_string(),
        audio_refs,
        prompt,
        target,
        meta: Meta {
            template_id,
            seed,
            order_sensitive,
            clip_texts,
        },
    };
    record.validate()?;
    Ok((record, annotations))
}

/// Render one record. The produced scenes, text, and audio depend only on
/// the arguments.
pub fn render_record(
    task: Task,
    split: &str,
    index: usize,
    opts: &RenderOpts,
    run_seed: u64,
) -> Result<RenderedRecord> {
    let (record, annotations) = compose_record(task, split, index, opts, run_seed)?;
    let clips = annotations
        .iter()
        .enumerate()
        .map(|(k, ann)| {
            let clip_seed = mix_seed(&[record.meta.seed, k as u64]);
            synthesize_clip(ann, opts.sample_rate, clip_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RenderedRecord { record, clips })
}

/// The text skeleton of a record, skipping audio synthesis. Used to
/// pretrain the LM on the task text distribution.
pub fn render_record_text(
    task: Task,
    split: &str,
    index: usize,
    opts: &RenderOpts,
    run_seed: u64,
) -> Result<Record> {
    compose_record(task, split, index, opts, run_seed).map(|(r, _)| r)
}

pub fn render_many(
    task: Task,
    split: &str,
    count: usize,
    opts: &RenderOpts,
    run_seed: u64,
) -> Result<Vec<RenderedRecord>> {
    (0..count)
        .map(|i| render_record(task, split, i, opts, run_seed))
        .collect()
}

/// Where a dataset directory keeps its pieces.
pub struct DatasetPaths {
    pub root: PathBuf,
}

impl DatasetPaths {
    pub fn new(root: impl Into<PathBuf>) -> DatasetPaths {
        DatasetPaths { root: root.into() }
    }

    pub fn stage_manifest(&self, stage: usize) -> PathBuf {
        self.root.join(format!("train_stage{stage}.jsonl"))
    }

    pub fn eval_manifest(&self, task: Task) -> PathBuf {
        self.root.join(format!("eval_{}.jsonl", task.tag()))
    }

    pub fn clip(&self, reference: &str) -> PathBuf {
        self.root.join(reference)
    }
}

#[derive(Debug, Default)]
pub struct DatasetSummary {
    pub clips: usize,
    pub train_records: usize,
    pub eval_records: usize,
    pub stage_counts: [usize; 3],
    pub eval_counts: Vec<(Task, usize)>,
}

fn write_clips(paths: &DatasetPaths, rendered: &[RenderedRecord]) -> Result<usize> {
    let mut written = 0;
    for rr in rendered {
        for (reference, clip) in rr.record.audio_refs.iter().zip(&rr.clips) {
            let wav = paths.clip(reference);
            if let Some(dir) = wav.parent() {
                std::fs::create_dir_all(dir)?;
            }
            write_wav(&wav, clip.sample_rate, &clip.samples)?;
            clip.annotation.save(&wav.with_extension("json"))?;
            written += 1;
        }
    }
    Ok(written)
}

/// Render and write the full dataset: one train manifest per curriculum
/// stage and one eval manifest per task.
pub fn write_dataset(root: &Path, cfg: &RunConfig) -> Result<DatasetSummary> {
    cfg.validate()?;
    let opts = RenderOpts::from_config(cfg);
    let paths = DatasetPaths::new(root);
    std::fs::create_dir_all(root)?;
    let mut summary = DatasetSummary::default();
    for stage in 0..3 {
        let split = format!("train{stage}");
        let mut records = Vec::new();
        for task in stage_tasks(stage, cfg.include_nlar)? {
            let rendered = render_many(task, &split, cfg.train_per_task, &opts, cfg.seed)?;
            summary.clips += write_clips(&paths, &rendered)?;
            records.extend(rendered.into_iter().map(|r| r.record));
        }
        summary.train_records += records.len();
        summary.stage_counts[stage] = records.len();
        manifest::save(&paths.stage_manifest(stage), &records)?;
    }
    for task in Task::ALL {
        if task == Task::Nlar && !cfg.include_nlar {
            continue;
        }
        let rendered = render_many(task, "eval", cfg.eval_per_task, &opts, cfg.seed)?;
        summary.clips += write_clips(&paths, &rendered)?;
        let records: Vec<Record> = rendered.into_iter().map(|r| r.record).collect();
        summary.eval_records += records.len();
        summary.eval_counts.push((task, records.len()));
        manifest::save(&paths.eval_manifest(task), &records)?;
    }
    Ok(summary)
}

/// Clip access for training and evaluation: a dataset directory or an
/// in-memory map keyed by audio reference.
pub enum ClipStore {
    Disk(DatasetPaths),
    Memory(HashMap<String, AudioClip>),
}

impl ClipStore {
    pub fn from_rendered(rendered: &[RenderedRecord]) -> ClipStore {
        let mut map = HashMap::new();
        for rr in rendered {
            for (reference, clip) in rr.record.audio_refs.iter().zip(&rr.clips) {
                map.insert(reference.clone(), clip.clone());
            }
        }
        ClipStore::Memory(map)
    }

    pub fn load(&self, reference: &str) -> Result<AudioClip> {
        match self {
            ClipStore::Memory(map) => map
                .get(reference)
                .cloned()
                .ok_or_else(|| Error::Manifest(format!("unknown audio reference '{reference}'"))),
            ClipStore::Disk(paths) => {
                let wav = paths.clip(reference);
                let (sample_rate, samples) = crate::audio::read_wav(&wav)?;
                let annotation = Annotation::load(&wav.with_extension("json"))?;
                Ok(AudioClip {
                    sample_rate,
                    samples,
                    annotation,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::vocab::Vocabulary;

    fn opts() -> RenderOpts {
        RenderOpts {
            sample_rate: 16_000,
            fsc_ways: 4,
            fsc_shots: 1,
        }
    }

    #[test]
    fn records_are_reproducible_per_seed() {
        for task in Task::ALL {
            let a = render_record(task, "train1", 3, &opts(), 42).unwrap();
            let b = render_record(task, "train1", 3, &opts(), 42).unwrap();
            assert_eq!(a.record, b.record);
            assert_eq!(a.clips[0].samples, b.clips[0].samples);
            let c = render_record(task, "train1", 4, &opts(), 42).unwrap();
            assert_ne!(a.record.meta.seed, c.record.meta.seed);
        }
    }

    #[test]
    fn every_rendered_text_is_in_vocabulary() {
        let corpus = templates::vocab_corpus();
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        let v = Vocabulary::build(refs.iter().copied());
        for task in Task::ALL {
            for i in 0..12 {
                let rr = render_record(task, "cov", i, &opts(), 7).unwrap();
                assert!(
                    v.covers(&rr.record.prompt),
                    "{}: prompt '{}'",
                    task.tag(),
                    rr.record.prompt
                );
                assert!(
                    v.covers(&rr.record.target),
                    "{}: target '{}'",
                    task.tag(),
                    rr.record.target
                );
                for t in &rr.record.meta.clip_texts {
                    assert!(v.covers(t), "{}: clip text '{t}'", task.tag());
                }
            }
        }
    }

    #[test]
    fn fsc_records_carry_support_labels() {
        let rr = render_record(Task::Fsc, "train2", 0, &opts(), 9).unwrap();
        assert_eq!(rr.record.audio_refs.len(), 5);
        assert_eq!(rr.record.meta.clip_texts.len(), 5);
        assert!(rr.record.meta.clip_texts[4].is_empty());
        assert!(rr
            .record
            .meta
            .clip_texts
            .iter()
            .any(|t| t.trim_end_matches('.') == rr.record.target));
    }

    #[test]
    fn memory_store_roundtrips_clips() {
        let rr = render_record(Task::Nlar, "train2", 1, &opts(), 11).unwrap();
        let refs = rr.record.audio_refs.clone();
        let store = ClipStore::from_rendered(&[rr]);
        for r in &refs {
            let clip = store.load(r).unwrap();
            assert_eq!(clip.sample_rate, 16_000);
            assert!(!clip.samples.is_empty());
        }
        assert!(store.load("clips/nope.wav").is_err());
    }

    #[test]
    fn disk_dataset_writes_and_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.train_per_task = 2;
        cfg.eval_per_task = 2;
        let summary = write_dataset(dir.path(), &cfg).unwrap();
        assert!(summary.clips > 0);
        let paths = DatasetPaths::new(dir.path());
        let stage1 = manifest::load(&paths.stage_manifest(1)).unwrap();
        assert_eq!(stage1.len(), 3 * 2);
        let store = ClipStore::Disk(DatasetPaths::new(dir.path()));
        let clip = store.load(&stage1[0].audio_refs[0]).unwrap();
        assert_eq!(clip.samples.len(), 160_000);
        clip.annotation.validate().unwrap();
    }
}
