//! Task definitions and dataset rendering: what each training example
//! looks like, how its audio scene is constructed, and which tasks each
//! curriculum stage mixes.

pub mod episodes;
pub mod nlar;
pub mod render;
pub mod scenes;
pub mod templates;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Audio-text pairs (label text) for aligner pretraining.
    At,
    /// Audio captioning.
    Aac,
    /// Sound event classification.
    Sec,
    /// Audio question answering (counting, presence, continuity).
    Aqa,
    /// Sound event detection with time intervals.
    Qsed,
    /// Temporal event reasoning over one clip.
    Ter,
    /// Few-shot classification episodes.
    Fsc,
    /// Natural-language reasoning over two clips.
    Nlar,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::At,
        Task::Aac,
        Task::Sec,
        Task::Aqa,
        Task::Qsed,
        Task::Ter,
        Task::Fsc,
        Task::Nlar,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Task::At => "at",
            Task::Aac => "aac",
            Task::Sec => "sec",
            Task::Aqa => "aqa",
            Task::Qsed => "qsed",
            Task::Ter => "ter",
            Task::Fsc => "fsc",
            Task::Nlar => "nlar",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        Task::ALL
            .into_iter()
            .find(|t| t.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown task '{s}'")))
    }
}

/// Tasks mixed at each curriculum stage. Stage 0 trains the aligner alone
/// on pair data; stage 1 teaches the LM interface on single-clip tasks;
/// stage 2 adds temporal, few-shot, and multi-clip reasoning.
pub fn stage_tasks(stage: usize, include_nlar: bool) -> Result<Vec<Task>> {
    match stage {
        0 => Ok(vec![Task::At, Task::Aac]),
        1 => Ok(vec![Task::Aac, Task::Sec, Task::Aqa]),
        2 => {
            let mut t = vec![
                Task::Aac,
                Task::Sec,
                Task::Aqa,
                Task::Qsed,
                Task::Ter,
                Task::Fsc,
            ];
            if include_nlar {
                t.push(Task::Nlar);
            }
            Ok(t)
        }
        _ => Err(Error::config(format!("no stage {stage}, the curriculum has 3"))),
    }
}

/// splitmix64; used to derive independent seeds from (run seed, context).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E3779B97F4A7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        h = z ^ (z >> 31);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_roundtrip() {
        for t in Task::ALL {
            assert_eq!(Task::parse(t.tag()).unwrap(), t);
        }
        assert!(Task::parse("asr").is_err());
    }

    #[test]
    fn stage_membership() {
        assert_eq!(stage_tasks(0, true).unwrap(), vec![Task::At, Task::Aac]);
        let s1 = stage_tasks(1, true).unwrap();
        assert!(!s1.contains(&Task::Nlar) && !s1.contains(&Task::Fsc));
        let s2 = stage_tasks(2, true).unwrap();
        assert!(s2.contains(&Task::Nlar) && s2.contains(&Task::Fsc));
        assert!(!stage_tasks(2, false).unwrap().contains(&Task::Nlar));
        assert!(stage_tasks(3, true).is_err());
    }

    #[test]
    fn mix_seed_separates_contexts() {
        let a = mix_seed(&[7, 0, 13]);
        let b = mix_seed(&[7, 1, 13]);
        let c = mix_seed(&[7, 0, 13]);
        assert_eq!(a, c);
        assert_ne!(a, b);
    }
}
