//! Few-shot classification episodes: N ways, K shots, one query. Support
//! clips are interleaved with their label text so the frozen LM can read
//! the mapping in context; the query clip arrives unlabeled.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{Annotation, SoundClass};
use crate::error::{Error, Result};
use crate::tasks::scenes;

pub struct Episode {
    /// Supports first (shuffled across ways), then the query.
    pub clips: Vec<Annotation>,
    /// Parallel to `clips`: "{label}." after each support, "" after the
    /// query.
    pub clip_texts: Vec<String>,
    pub query_label: String,
}

impl Episode {
    pub fn n_clips(ways: usize, shots: usize) -> usize {
        ways * shots + 1
    }
}

/// One countable-class clip for episode slots.
fn episode_clip(rng: &mut ChaCha8Rng, class: &SoundClass) -> Annotation {
    let count = rng.gen_range(1..=4u32);
    let onset = rng.gen_range(0..=40) as f64 / 10.0;
    let offset = onset + rng.gen_range(20..=50) as f64 / 10.0;
    let offset = offset.min(scenes::CLIP_SECONDS);
    Annotation {
        duration: scenes::CLIP_SECONDS,
        events: vec![crate::audio::EventSpec {
            label: class.name.to_string(),
            onset,
            offset,
            count: crate::audio::CountTag::Times(count),
        }],
    }
}

pub fn render_episode(rng: &mut ChaCha8Rng, ways: usize, shots: usize) -> Result<Episode> {
    let mut pool = scenes::countable_classes();
    if ways < 2 || ways > pool.len() {
        return Err(Error::config(format!(
            "{ways}-way episode needs between 2 and {} classes",
            pool.len()
        )));
    }
    if shots == 0 {
        return Err(Error::config("episodes need at least one shot"));
    }
    let mut chosen = Vec::with_capacity(ways);
    for _ in 0..ways {
        let i = rng.gen_range(0..pool.len());
        chosen.push(pool.swap_remove(i));
    }
    // Supports in shuffled order so the query class position is not a cue.
    let mut slots: Vec<&SoundClass> = Vec::with_capacity(ways * shots);
    for class in &chosen {
        for _ in 0..shots {
            slots.push(class);
        }
    }
    for i in (1..slots.len()).rev() {
        let j = rng.gen_range(0..=i);
        slots.swap(i, j);
    }
    let mut clips = Vec::with_capacity(slots.len() + 1);
    let mut clip_texts = Vec::with_capacity(slots.len() + 1);
    for class in &slots {
        clips.push(episode_clip(rng, class));
        clip_texts.push(format!("{}.", class.name));
    }
    let query_class = chosen[rng.gen_range(0..chosen.len())];
    clips.push(episode_clip(rng, query_class));
    clip_texts.push(String::new());
    Ok(Episode {
        clips,
        clip_texts,
        query_label: query_class.name.to_string(),
    })
}
