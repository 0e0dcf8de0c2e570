//! The closed world of synthesizable sound classes.
//!
//! Each class carries a synthesis recipe (how bursts of it sound), a short
//! acoustic descriptor used by caption rendering, and a continuity flag:
//! continuous classes are rendered as events that span the whole recording
//! rather than countable bursts.

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use crate::error::{Error, Result};

/// How bursts of a class are synthesized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    /// Pure sinusoid at a fixed frequency (Hz).
    Tone { freq: f64 },
    /// Band-limited noise between two frequencies (Hz).
    NoiseBurst { low: f64, high: f64 },
    /// Linear frequency sweep from `f0` to `f1` (Hz).
    Chirp { f0: f64, f1: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct SoundClass {
    pub name: &'static str,
    pub descriptor: &'static str,
    pub synth: SynthKind,
    /// Continuous classes fill the whole recording ("throughout" events).
    pub continuous: bool,
}

use SynthKind::{Chirp, NoiseBurst, Tone};

pub const ONTOLOGY: [SoundClass; 24] = [
    SoundClass { name: "dog bark", descriptor: "sharp, repetitive, and alert barking", synth: NoiseBurst { low: 300.0, high: 1500.0 }, continuous: false },
    SoundClass { name: "wood creaking", descriptor: "rustic, rhythmic, and creaky", synth: NoiseBurst { low: 150.0, high: 700.0 }, continuous: false },
    SoundClass { name: "thunder", descriptor: "explosive, rumbling, and reverberating", synth: NoiseBurst { low: 40.0, high: 300.0 }, continuous: false },
    SoundClass { name: "rain", descriptor: "gentle, pitter-patter, rhythmic", synth: NoiseBurst { low: 800.0, high: 5000.0 }, continuous: true },
    SoundClass { name: "tapping glass", descriptor: "crisp, clear, and tingling sound", synth: Tone { freq: 2400.0 }, continuous: false },
    SoundClass { name: "water draining", descriptor: "rapid, and draining water sound", synth: NoiseBurst { low: 400.0, high: 2500.0 }, continuous: true },
    SoundClass { name: "shower", descriptor: "droplets, soothingly cascading", synth: NoiseBurst { low: 1200.0, high: 6500.0 }, continuous: true },
    SoundClass { name: "bird chirp", descriptor: "bright, rising, cheerful chirps", synth: Chirp { f0: 2500.0, f1: 4200.0 }, continuous: false },
    SoundClass { name: "siren", descriptor: "wailing, sweeping, urgent tone", synth: Chirp { f0: 600.0, f1: 1300.0 }, continuous: false },
    SoundClass { name: "phone ringing", descriptor: "steady, insistent electronic ring", synth: Tone { freq: 1300.0 }, continuous: false },
    SoundClass { name: "door knock", descriptor: "dull, knocking thuds on wood", synth: NoiseBurst { low: 100.0, high: 500.0 }, continuous: false },
    SoundClass { name: "footsteps", descriptor: "soft, regular stepping thumps", synth: NoiseBurst { low: 80.0, high: 400.0 }, continuous: false },
    SoundClass { name: "clapping", descriptor: "crisp, scattered hand claps", synth: NoiseBurst { low: 700.0, high: 3200.0 }, continuous: false },
    SoundClass { name: "bell", descriptor: "resonant, ringing metallic strike", synth: Tone { freq: 1800.0 }, continuous: false },
    SoundClass { name: "drum beat", descriptor: "deep, punchy percussive hits", synth: NoiseBurst { low: 50.0, high: 250.0 }, continuous: false },
    SoundClass { name: "whistle", descriptor: "piercing, steady high whistle", synth: Tone { freq: 2900.0 }, continuous: false },
    SoundClass { name: "beep", descriptor: "short, flat electronic beep", synth: Tone { freq: 1000.0 }, continuous: false },
    SoundClass { name: "horn", descriptor: "low, blaring warning blast", synth: Tone { freq: 420.0 }, continuous: false },
    SoundClass { name: "wind", descriptor: "airy, howling, sustained gusts", synth: NoiseBurst { low: 60.0, high: 600.0 }, continuous: true },
    SoundClass { name: "engine idling", descriptor: "low, throbbing mechanical hum", synth: NoiseBurst { low: 30.0, high: 180.0 }, continuous: true },
    SoundClass { name: "static noise", descriptor: "harsh, hissing broadband static", synth: NoiseBurst { low: 2500.0, high: 7800.0 }, continuous: true },
    SoundClass { name: "alarm clock", descriptor: "sharp, repeating alarm tone", synth: Tone { freq: 1550.0 }, continuous: false },
    SoundClass { name: "slide whistle", descriptor: "sliding, comical rising sweep", synth: Chirp { f0: 900.0, f1: 2100.0 }, continuous: false },
    SoundClass { name: "piano note", descriptor: "warm, sustained musical tone", synth: Tone { freq: 523.0 }, continuous: false },
];

pub fn class_by_name(name: &str) -> Result<&'static SoundClass> {
    ONTOLOGY
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::UnsupportedAnnotation(format!("unknown sound class '{name}'")))
}

pub fn class_index(name: &str) -> Option<usize> {
    ONTOLOGY.iter().position(|c| c.name == name)
}

/// Source of one-line acoustic descriptors for caption rendering.
pub trait DescriptorSource {
    fn describe(&mut self, label: &str) -> Result<String>;
}

/// Default source: the fixed descriptor column of the ontology.
pub struct RuleDescriptors;

impl DescriptorSource for RuleDescriptors {
    fn describe(&mut self, label: &str) -> Result<String> {
        Ok(class_by_name(label)?.descriptor.to_string())
    }
}

/// Optional external generator: spawns a command, writes one prompt line per
/// request to its stdin, and reads one completion line from its stdout.
/// Disabled unless a command is configured.
pub struct ExternalDescriptors {
    child: std::process::Child,
    stdin: std::process::ChildStdin,
    stdout: BufReader<std::process::ChildStdout>,
}

impl ExternalDescriptors {
    pub fn spawn(command: &str) -> Result<Self> {
        let parts: Vec<&str> = command.split_whitespace().collect();
        if parts.is_empty() {
            return Err(Error::config("external generator command is empty"));
        }
        let mut child = Command::new(parts[0])
            .args(&parts[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::config(format!("external generator spawn failed: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ExternalDescriptors {
            child,
            stdin,
            stdout,
        })
    }
}

impl DescriptorSource for ExternalDescriptors {
    fn describe(&mut self, label: &str) -> Result<String> {
        writeln!(
            self.stdin,
            "describe the acoustic characteristic of {label} precisely with a sentence less than 10 words"
        )?;
        self.stdin.flush()?;
        let mut line = String::new();
        self.stdout.read_line(&mut line)?;
        let line = line.trim();
        if line.is_empty() {
            return Err(Error::contract(format!(
                "external generator returned no completion for '{label}'"
            )));
        }
        Ok(line.to_string())
    }
}

impl Drop for ExternalDescriptors {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
