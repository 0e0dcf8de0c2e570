//! Reasoning over two recordings in natural language. Answer logic is
//! split into pure functions over annotations so every family has an
//! oracle independent of the renderer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::audio::Annotation;
use crate::error::{Error, Result};
use crate::io::Record;
use crate::tasks::{scenes, templates};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// "more than m events in total?" -> yes/no
    SumBinary,
    /// "how many events in total?" -> digits
    SumCount,
    /// "does the first/second recording create a continuous sound?" -> yes/no
    QualBinary,
    /// "which recording contains the X sound?" -> first/second
    WhichRecording,
    /// "does the first contain r times as many events as the second?" -> yes/no
    CompareBinary,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::SumBinary,
        Family::SumCount,
        Family::QualBinary,
        Family::WhichRecording,
        Family::CompareBinary,
    ];

    /// Only this family's answer depends on clip order alone.
    pub fn order_sensitive(self) -> bool {
        self == Family::WhichRecording
    }
}

pub fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn sum_count_answer(a: &Annotation, b: &Annotation) -> String {
    templates::count_answer(a.counted_events() + b.counted_events())
}

pub fn sum_binary_answer(a: &Annotation, b: &Annotation, m: u32) -> &'static str {
    yes_no(a.counted_events() + b.counted_events() > m)
}

pub fn qual_answer(ann: &Annotation) -> &'static str {
    yes_no(ann.has_throughout())
}

/// Which clip holds `label`; errors unless exactly one does.
pub fn which_answer(a: &Annotation, b: &Annotation, label: &str) -> Result<&'static str> {
    let in_a = a.labels().contains(&label);
    let in_b = b.labels().contains(&label);
    match (in_a, in_b) {
        (true, false) => Ok("first"),
        (false, true) => Ok("second"),
        _ => Err(Error::contract(format!(
            "'{label}' must appear in exactly one of the two clips"
        ))),
    }
}

pub fn compare_answer(a: &Annotation, b: &Annotation, r: u32) -> &'static str {
    yes_no(a.counted_events() == r * b.counted_events())
}

pub struct NlarExample {
    pub family: Family,
    pub clip_a: Annotation,
    pub clip_b: Annotation,
    pub prompt: String,
    pub target: String,
}

/// Single-class scene with exactly `count` bursts.
fn count_scene(rng: &mut ChaCha8Rng, count: u32) -> Annotation {
    loop {
        let (ann, _, _) = scenes::counting_scene(rng);
        // Rewrite the count; the interval and class are fine as sampled.
        let mut ann = ann;
        ann.events[0].count = crate::audio::CountTag::Times(count);
        if ann.validate().is_ok() {
            return ann;
        }
    }
}

pub fn render_example(rng: &mut ChaCha8Rng, family: Family) -> Result<NlarExample> {
    let ex = match family {
        Family::SumCount => {
            let (ka, kb) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
            let a = count_scene(rng, ka);
            let b = count_scene(rng, kb);
            let target = sum_count_answer(&a, &b);
            NlarExample {
                family,
                clip_a: a,
                clip_b: b,
                prompt: templates::NLAR_SUM_COUNT_PROMPT.into(),
                target,
            }
        }
        Family::SumBinary => {
            let (ka, kb) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
            let a = count_scene(rng, ka);
            let b = count_scene(rng, kb);
            let total = a.counted_events() + b.counted_events();
            let m = match rng.gen_range(0..4u32) {
                0 => total,
                1 => total + 1,
                2 => total.saturating_sub(1).max(1),
                _ => total.saturating_sub(2).max(1),
            };
            let target = sum_binary_answer(&a, &b, m).to_string();
            NlarExample {
                family,
                clip_a: a,
                clip_b: b,
                prompt: templates::nlar_sum_binary_prompt(m),
                target,
            }
        }
        Family::QualBinary => {
            let continuous_first: bool = rng.gen();
            let (cont, _) = scenes::throughout_scene(rng);
            let (plain, _, _) = scenes::counting_scene(rng);
            let (a, b) = if continuous_first {
                (cont, plain)
            } else {
                (plain, cont)
            };
            let ordinal = if rng.gen() { "first" } else { "second" };
            let asked = if ordinal == "first" { &a } else { &b };
            let target = qual_answer(asked).to_string();
            NlarExample {
                family,
                prompt: templates::nlar_qual_prompt(ordinal),
                target,
                clip_a: a,
                clip_b: b,
            }
        }
        Family::WhichRecording => {
            let (a, ca) = scenes::single_event(rng, false);
            let b = loop {
                let (b, cb) = scenes::single_event(rng, false);
                if cb.name != ca.name {
                    break b;
                }
            };
            // Ask about either clip's class so "first" and "second" are
            // both common answers.
            let ask_first: bool = rng.gen();
            let label = if ask_first {
                a.labels()[0].to_string()
            } else {
                b.labels()[0].to_string()
            };
            let target = which_answer(&a, &b, &label)?.to_string();
            NlarExample {
                family,
                prompt: templates::nlar_which_prompt(&label),
                target,
                clip_a: a,
                clip_b: b,
            }
        }
        Family::CompareBinary => {
            let r = rng.gen_range(2..=3u32);
            let kb = rng.gen_range(1..=3u32);
            let ka = if rng.gen() {
                r * kb
            } else {
                // Off by at least one, still positive and small.
                let mut k = rng.gen_range(1..=9u32);
                while k == r * kb {
                    k = rng.gen_range(1..=9u32);
                }
                k
            };
            let a = count_scene(rng, ka);
            let b = count_scene(rng, kb);
            let target = compare_answer(&a, &b, r).to_string();
            NlarExample {
                family,
                prompt: templates::nlar_compare_prompt(r),
                target,
                clip_a: a,
                clip_b: b,
            }
        }
    };
    Ok(ex)
}

/// Order-swapped copy of an order-sensitive record: the clips trade
/// places and the positional answer flips.
pub fn swapped_record(r: &Record) -> Result<Record> {
    if !r.meta.order_sensitive {
        return Err(Error::contract(format!(
            "cannot order-swap a record of task '{}' that is not order sensitive",
            r.task
        )));
    }
    if r.audio_refs.len() != 2 {
        return Err(Error::contract("order swap expects exactly two clips"));
    }
    let mut out = r.clone();
    out.audio_refs.swap(0, 1);
    if !out.meta.clip_texts.is_empty() {
        out.meta.clip_texts.swap(0, 1);
    }
    out.target = match r.target.as_str() {
        "first" => "second".to_string(),
        "second" => "first".to_string(),
        other => {
            return Err(Error::contract(format!(
                "order-sensitive target '{other}' is not positional"
            )))
        }
    };
    Ok(out)
}
