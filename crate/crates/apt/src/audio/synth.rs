//! Synthetic clip generation and fixed-length segmentation.
//!
//! A clip is described by an [`Annotation`]: a duration plus a list of
//! labeled events. Countable events render as evenly spaced bursts of the
//! class recipe; "throughout" events fill the whole recording. Synthesis is
//! deterministic in (annotation, seed).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ontology::{class_by_name, SynthKind};
use crate::error::{Error, Result};

/// Sentinel string for events that span the whole recording.
pub const THROUGHOUT: &str = "throughout the recording";

/// How often an event occurs inside its interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountTag {
    /// The event happens this many times (positive).
    Times(u32),
    /// The event is continuous for the whole recording.
    Throughout,
}

impl Serialize for CountTag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CountTag::Times(n) => s.serialize_u32(*n),
            CountTag::Throughout => s.serialize_str(THROUGHOUT),
        }
    }
}

impl<'de> Deserialize<'de> for CountTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => {
                let n = n
                    .as_u64()
                    .ok_or_else(|| D::Error::custom("count-tag must be a positive integer"))?;
                Ok(CountTag::Times(n as u32))
            }
            serde_json::Value::String(s) if s == THROUGHOUT => Ok(CountTag::Throughout),
            other => Err(D::Error::custom(format!(
                "count-tag must be an integer or \"{THROUGHOUT}\", got {other}"
            ))),
        }
    }
}

/// One labeled occurrence group: `count` bursts inside [onset, offset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub label: String,
    pub onset: f64,
    pub offset: f64,
    pub count: CountTag,
}

/// Ground-truth description of a clip; written as the WAV's sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub duration: f64,
    pub events: Vec<EventSpec>,
}

impl Annotation {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::UnsupportedAnnotation(format!(
                "duration {} must be positive",
                self.duration
            )));
        }
        for e in &self.events {
            class_by_name(&e.label)?;
            match e.count {
                CountTag::Times(0) => {
                    return Err(Error::UnsupportedAnnotation(format!(
                        "'{}' has count-tag 0",
                        e.label
                    )));
                }
                CountTag::Times(_) => {
                    if !(e.onset >= 0.0 && e.onset < e.offset && e.offset <= self.duration) {
                        return Err(Error::UnsupportedAnnotation(format!(
                            "'{}' interval [{}, {}) outside [0, {}]",
                            e.label, e.onset, e.offset, self.duration
                        )));
                    }
                }
                CountTag::Throughout => {
                    if e.onset != 0.0 || e.offset != self.duration {
                        return Err(Error::UnsupportedAnnotation(format!(
                            "throughout event '{}' must span the whole recording",
                            e.label
                        )));
                    }
                }
            }
        }
        for (i, a) in self.events.iter().enumerate() {
            for b in &self.events[i + 1..] {
                if a.label == b.label && a.onset == b.onset {
                    return Err(Error::UnsupportedAnnotation(format!(
                        "two '{}' events share onset {}",
                        a.label, a.onset
                    )));
                }
            }
        }
        Ok(())
    }

    /// Distinct labels ordered by first onset.
    pub fn labels(&self) -> Vec<&str> {
        let mut seen: Vec<(&str, f64)> = Vec::new();
        for e in &self.events {
            match seen.iter_mut().find(|(l, _)| *l == e.label.as_str()) {
                Some((_, onset)) => {
                    if e.onset < *onset {
                        *onset = e.onset;
                    }
                }
                None => seen.push((&e.label, e.onset)),
            }
        }
        seen.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(b.0)));
        seen.into_iter().map(|(l, _)| l).collect()
    }

    /// Total burst count for a label. Errors when any event with the label is
    /// tagged "throughout": counting a continuous sound is unsupported.
    pub fn count_of(&self, label: &str) -> Result<u32> {
        let mut total = 0u32;
        let mut found = false;
        for e in self.events.iter().filter(|e| e.label == label) {
            found = true;
            match e.count {
                CountTag::Times(n) => total += n,
                CountTag::Throughout => {
                    return Err(Error::UnsupportedAnnotation(format!(
                        "'{label}' is tagged \"{THROUGHOUT}\" and has no burst count"
                    )));
                }
            }
        }
        if !found {
            return Err(Error::UnsupportedAnnotation(format!(
                "no '{label}' event in annotation"
            )));
        }
        Ok(total)
    }

    pub fn has_throughout(&self) -> bool {
        self.events.iter().any(|e| e.count == CountTag::Throughout)
    }

    /// Sum of all burst counts. Continuous ("throughout") events are
    /// background, not countable events, and contribute zero.
    pub fn counted_events(&self) -> u32 {
        self.events
            .iter()
            .map(|e| match e.count {
                CountTag::Times(n) => n,
                CountTag::Throughout => 0,
            })
            .sum()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::contract(format!("annotation serialize: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ann: Annotation = serde_json::from_str(&text)
            .map_err(|e| Error::contract(format!("annotation parse {}: {e}", path.display())))?;
        ann.validate()?;
        Ok(ann)
    }
}

/// A synthesized clip together with its ground truth.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
    pub annotation: Annotation,
}

/// Render an annotation to audio. Bursts superpose additively; silence is
/// exactly zero.
pub fn synthesize_clip(annotation: &Annotation, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    annotation.validate()?;
    let sr = sample_rate as f64;
    let n = (annotation.duration * sr).round() as usize;
    let mut samples = vec![0.0f32; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in &annotation.events {
        let class = class_by_name(&e.label)?;
        match e.count {
            CountTag::Throughout => {
                render_burst(
                    &mut samples,
                    sr,
                    e.onset,
                    e.offset - e.onset,
                    class.synth,
                    0.3,
                    &mut rng,
                );
            }
            CountTag::Times(count) => {
                let span = e.offset - e.onset;
                let slot = span / count as f64;
                let burst = (slot * 0.5).clamp(0.04, 0.3);
                for k in 0..count {
                    render_burst(
                        &mut samples,
                        sr,
                        e.onset + k as f64 * slot,
                        burst,
                        class.synth,
                        0.5,
                        &mut rng,
                    );
                }
            }
        }
    }
    Ok(AudioClip {
        sample_rate,
        samples,
        annotation: annotation.clone(),
    })
}

fn render_burst(
    samples: &mut [f32],
    sr: f64,
    start: f64,
    dur: f64,
    kind: SynthKind,
    amp: f64,
    rng: &mut ChaCha8Rng,
) {
    let i0 = (start * sr).round() as usize;
    let len = ((dur * sr).round() as usize).max(1);
    let attack = (len / 8).max(1);
    let tau = std::f64::consts::TAU;
    // Band noise is a fixed set of random-phase partials inside the band,
    // which keeps the mel signature of each class localized and distinctive.
    let partials: Vec<(f64, f64)> = match kind {
        SynthKind::NoiseBurst { low, high } => (0..24)
            .map(|_| (rng.gen::<f64>() * (high - low) + low, rng.gen::<f64>() * tau))
            .collect(),
        _ => Vec::new(),
    };
    for k in 0..len {
        let idx = i0 + k;
        if idx >= samples.len() {
            break;
        }
        let t = k as f64 / sr;
        let v = match kind {
            SynthKind::Tone { freq } => (tau * freq * t).sin(),
            SynthKind::Chirp { f0, f1 } => {
                let frac = k as f64 / len as f64;
                (tau * (f0 * t + 0.5 * (f1 - f0) * frac * t)).sin()
            }
            SynthKind::NoiseBurst { .. } => {
                let mut s = 0.0;
                for &(f, p) in &partials {
                    s += (tau * f * t + p).sin();
                }
                s / (partials.len() as f64).sqrt()
            }
        };
        let env = {
            let rise = (k as f64 / attack as f64).min(1.0);
            let fall = ((len - 1 - k) as f64 / attack as f64).min(1.0);
            rise.min(fall)
        };
        samples[idx] += (v * env * amp) as f32;
    }
}

/// Split into fixed-length segments, zero-padding the last one. The segment
/// count is ceil(len / segment_len) and every output has exactly
/// `segment_len` samples.
pub fn segment_clip(samples: &[f32], segment_len: usize) -> Result<Vec<Vec<f32>>> {
    if segment_len == 0 {
        return Err(Error::contract("segment_clip: segment length is zero"));
    }
    if samples.is_empty() {
        return Err(Error::contract("segment_clip: empty clip"));
    }
    let count = samples.len().div_ceil(segment_len);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let lo = i * segment_len;
        let hi = ((i + 1) * segment_len).min(samples.len());
        let mut seg = samples[lo..hi].to_vec();
        seg.resize(segment_len, 0.0);
        out.push(seg);
    }
    Ok(out)
}
