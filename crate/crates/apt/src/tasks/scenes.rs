//! Deterministic audio scene construction. All event boundaries land on
//! the 0.1s grid so rendered timestamps match the annotation exactly, and
//! every scene fits one 10-second clip.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{Annotation, CountTag, EventSpec, SoundClass, ONTOLOGY};

pub const CLIP_SECONDS: f64 = 10.0;

/// Snap to the 0.1s grid.
pub fn grid(t: f64) -> f64 {
    (t * 10.0).round() / 10.0
}

pub fn countable_classes() -> Vec<&'static SoundClass> {
    ONTOLOGY.iter().filter(|c| !c.continuous).collect()
}

pub fn continuous_classes() -> Vec<&'static SoundClass> {
    ONTOLOGY.iter().filter(|c| c.continuous).collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, set: &[&'a SoundClass]) -> &'a SoundClass {
    set[rng.gen_range(0..set.len())]
}

/// A grid interval [onset, offset] inside [lo, hi] with span at least
/// `min_span` seconds.
fn grid_interval(rng: &mut ChaCha8Rng, lo: f64, hi: f64, min_span: f64) -> (f64, f64) {
    let lo_t = (lo * 10.0).round() as i64;
    let hi_t = (hi * 10.0).round() as i64;
    let min_t = (min_span * 10.0).round() as i64;
    debug_assert!(hi_t - lo_t >= min_t);
    let onset_t = rng.gen_range(lo_t..=hi_t - min_t);
    let offset_t = rng.gen_range(onset_t + min_t..=hi_t);
    (onset_t as f64 / 10.0, offset_t as f64 / 10.0)
}

fn bursts(label: &str, onset: f64, offset: f64, count: u32) -> EventSpec {
    EventSpec {
        label: label.to_string(),
        onset,
        offset,
        count: CountTag::Times(count),
    }
}

/// One continuous class covering the whole clip.
pub fn throughout_scene(rng: &mut ChaCha8Rng) -> (Annotation, &'static SoundClass) {
    let class = pick(rng, &continuous_classes());
    let ann = Annotation {
        duration: CLIP_SECONDS,
        events: vec![EventSpec {
            label: class.name.to_string(),
            onset: 0.0,
            offset: CLIP_SECONDS,
            count: CountTag::Throughout,
        }],
    };
    (ann, class)
}

/// One class, one event. Continuous classes span the clip; countable ones
/// get 1..=4 bursts somewhere inside it.
pub fn single_event(rng: &mut ChaCha8Rng, allow_continuous: bool) -> (Annotation, &'static SoundClass) {
    if allow_continuous && rng.gen_range(0..4) == 0 {
        return throughout_scene(rng);
    }
    let class = pick(rng, &countable_classes());
    let count = rng.gen_range(1..=4u32);
    let (onset, offset) = grid_interval(rng, 0.0, CLIP_SECONDS, 2.0);
    let ann = Annotation {
        duration: CLIP_SECONDS,
        events: vec![bursts(class.name, onset, offset, count)],
    };
    (ann, class)
}

/// Countable single-class scene with an interesting burst count.
pub fn counting_scene(rng: &mut ChaCha8Rng) -> (Annotation, &'static SoundClass, u32) {
    let class = pick(rng, &countable_classes());
    let count = rng.gen_range(2..=9u32);
    let (onset, offset) = grid_interval(rng, 0.0, CLIP_SECONDS, 4.0);
    let ann = Annotation {
        duration: CLIP_SECONDS,
        events: vec![bursts(class.name, onset, offset, count)],
    };
    (ann, class, count)
}

/// `n` distinct countable classes in strictly sequential, non-overlapping
/// intervals. Returned labels are in temporal order.
pub fn sequence_scene(rng: &mut ChaCha8Rng, n: usize) -> (Annotation, Vec<&'static SoundClass>) {
    debug_assert!(n >= 2 && n <= 4);
    let mut pool = countable_classes();
    let mut chosen = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.gen_range(0..pool.len());
        chosen.push(pool.swap_remove(i));
    }
    let slot = CLIP_SECONDS / n as f64;
    let mut events = Vec::with_capacity(n);
    for (i, class) in chosen.iter().enumerate() {
        let lo = grid(i as f64 * slot + 0.2);
        let hi = grid((i + 1) as f64 * slot - 0.2);
        let (onset, offset) = grid_interval(rng, lo, hi, 1.0);
        events.push(bursts(class.name, onset, offset, rng.gen_range(1..=3u32)));
    }
    (
        Annotation {
            duration: CLIP_SECONDS,
            events,
        },
        chosen,
    )
}
