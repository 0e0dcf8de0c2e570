//! Audio domain: the sound ontology, clip synthesis, segmentation, the
//! log-mel front end, and WAV IO. Everything here is pure DSP and data;
//! the trainable patch encoder that consumes spectrograms lives in
//! [`crate::model`].

pub mod mel;
pub mod ontology;
pub mod synth;
pub mod wav;

pub use mel::{log_mel, log_mel_with, MelConfig, MelFilterbank, Spectrogram};
pub use ontology::{class_by_name, class_index, DescriptorSource, RuleDescriptors, SoundClass, ONTOLOGY};
pub use synth::{segment_clip, synthesize_clip, Annotation, AudioClip, CountTag, EventSpec, THROUGHOUT};
pub use wav::{read_wav, write_wav};
