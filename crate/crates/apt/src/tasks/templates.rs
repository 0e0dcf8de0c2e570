//! Prompt templates and target phrase builders. Everything any renderer
//! can emit is also enumerated by [`vocab_corpus`], which is what the
//! shared vocabulary is built from: rendering can never step outside the
//! token set.

use crate::audio::{Annotation, CountTag, SoundClass, ONTOLOGY};

pub const AAC_PROMPTS: [&str; 3] = [
    "Describe the audio clip concisely.",
    "Summarize the audio with key words.",
    "What does this audio sound like?",
];

pub const SEC_PROMPTS: [&str; 3] = [
    "This is a sound of",
    "What sound is it? Answer with the class name.",
    "Name the sound event in the recording.",
];

pub const QSED_PROMPTS: [&str; 2] = [
    "Identify the sound events with their time intervals.",
    "List each sound event and when it occurs.",
];

pub const TER_FIRST_PROMPT: &str = "Which sound occurs first in the recording?";
pub const TER_LAST_PROMPT: &str = "Which sound occurs last in the recording?";

pub fn ter_before_prompt(a: &str, b: &str) -> String {
    format!("Does the {a} sound occur before the {b} sound?")
}

pub fn aqa_count_prompt(label: &str) -> String {
    format!("How many times does the {label} sound occur?")
}

pub fn aqa_presence_prompt(label: &str) -> String {
    format!("Is there a {label} sound in the recording?")
}

pub const AQA_CONTINUOUS_PROMPT: &str =
    "Does the recording contain a continuous sound throughout?";

pub const FSC_PROMPT: &str = "This is a sound of";

pub const NLAR_SUM_COUNT_PROMPT: &str =
    "How many sound events occur across both recordings in total?";

pub fn nlar_sum_binary_prompt(m: u32) -> String {
    format!("Do the two recordings together contain more than {m} sound events?")
}

pub fn nlar_qual_prompt(ordinal: &str) -> String {
    format!("Does the {ordinal} recording create a continuous sound throughout?")
}

pub fn nlar_which_prompt(label: &str) -> String {
    format!("Which recording contains the {label} sound?")
}

pub fn nlar_compare_prompt(r: u32) -> String {
    format!("Does the first recording contain {r} times as many sound events as the second?")
}

/// Caption for a single-event clip. The label leads so the contrastive
/// text embedding (first text position) carries the class.
pub fn caption(class: &SoundClass) -> String {
    format!("{}: {}", class.name, class.descriptor)
}

pub fn ts(t: f64) -> String {
    format!("{:.1}s", t)
}

/// Detection target: events in onset order, intervals on the 0.1s grid.
pub fn qsed_target(ann: &Annotation) -> String {
    let mut events: Vec<_> = ann.events.iter().collect();
    events.sort_by(|a, b| a.onset.partial_cmp(&b.onset).unwrap());
    let phrases: Vec<String> = events
        .iter()
        .map(|e| match e.count {
            CountTag::Throughout => format!("{} throughout the recording", e.label),
            CountTag::Times(_) => {
                format!("{} from {} to {}", e.label, ts(e.onset), ts(e.offset))
            }
        })
        .collect();
    phrases.join(", ")
}

/// Digit-string answer for counting questions.
pub fn count_answer(n: u32) -> String {
    n.to_string()
}

/// Every line of text the system can produce or consume. The vocabulary is
/// built from this corpus alone, so it is independent of any particular
/// rendered dataset.
pub fn vocab_corpus() -> Vec<String> {
    let mut lines: Vec<String> = Vec::new();
    for p in AAC_PROMPTS.iter().chain(&SEC_PROMPTS).chain(&QSED_PROMPTS) {
        lines.push(p.to_string());
    }
    lines.push(TER_FIRST_PROMPT.into());
    lines.push(TER_LAST_PROMPT.into());
    lines.push(AQA_CONTINUOUS_PROMPT.into());
    lines.push(FSC_PROMPT.into());
    lines.push(NLAR_SUM_COUNT_PROMPT.into());
    lines.push(nlar_sum_binary_prompt(0));
    lines.push(nlar_compare_prompt(0));
    lines.push(nlar_qual_prompt("first"));
    lines.push(nlar_qual_prompt("second"));
    for class in ONTOLOGY.iter() {
        lines.push(caption(class));
        lines.push(ter_before_prompt(class.name, class.name));
        lines.push(aqa_count_prompt(class.name));
        lines.push(aqa_presence_prompt(class.name));
        lines.push(nlar_which_prompt(class.name));
        lines.push(format!(
            "{} from 0.0s to 0.1s, {} throughout the recording",
            class.name, class.name
        ));
    }
    lines.push("yes no first second".into());
    let numbers: Vec<String> = (0..=30u32).map(|n| n.to_string()).collect();
    lines.push(numbers.join(" "));
    let stamps: Vec<String> = (0..=100u32)
        .map(|i| format!("{}.{}s", i / 10, i % 10))
        .collect();
    lines.push(stamps.join(" "));
    lines
}
