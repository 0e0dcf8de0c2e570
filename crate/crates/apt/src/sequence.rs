//! Interleaved audio-text sequences for the frozen LM. Each clip
//! contributes a learnable `[AUDIO]` marker row followed by its prompt
//! rows (n_queries per segment) and optional clip text; the instruction
//! and answer follow as ordinary tokens. A single-clip sequence is
//! therefore exactly the prefix form: all audio ahead of all text.

use crate::error::{Error, Result};
use crate::io::Record;
use crate::model::vocab::{self, Vocabulary};
use crate::model::{Graph, LmParams, ParamId};
use crate::tensor::{Scalar, TensorId, IGNORE_INDEX};

/// One LM input position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Token(u32),
    /// Row `row` of clip `clip`'s prompt block.
    Prompt { clip: usize, row: usize },
}

#[derive(Debug, Clone)]
pub struct SequencePlan {
    pub positions: Vec<Position>,
    /// Next-token target per position; `IGNORE_INDEX` everywhere except
    /// positions that predict the answer and the closing `<eos>`.
    pub targets: Vec<usize>,
    /// Token count of the answer span (without `<eos>`).
    pub answer_len: usize,
}

impl SequencePlan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn supervised_positions(&self) -> usize {
        self.targets.iter().filter(|&&t| t != IGNORE_INDEX).count()
    }
}

fn encode_checked(v: &Vocabulary, text: &str, what: &str) -> Result<Vec<u32>> {
    let ids = v.encode(text);
    if ids.contains(&vocab::UNK) {
        return Err(Error::contract(format!(
            "{what} '{text}' contains tokens outside the vocabulary"
        )));
    }
    Ok(ids)
}

/// Build the training layout for a record. `segments_per_clip` must be
/// parallel to `record.audio_refs`. When `with_answer` is false the plan
/// stops after the instruction (the generation prefix) and supervises
/// nothing.
pub fn plan(
    record: &Record,
    v: &Vocabulary,
    n_queries: usize,
    segments_per_clip: &[usize],
    with_answer: bool,
) -> Result<SequencePlan> {
    if segments_per_clip.len() != record.audio_refs.len() {
        return Err(Error::contract(format!(
            "{} segment counts for {} clips",
            segments_per_clip.len(),
            record.audio_refs.len()
        )));
    }
    let mut positions = vec![Position::Token(vocab::BOS)];
    for (clip, &segments) in segments_per_clip.iter().enumerate() {
        if segments == 0 {
            return Err(Error::contract("clip with zero segments"));
        }
        positions.push(Position::Token(vocab::AUDIO));
        for row in 0..segments * n_queries {
            positions.push(Position::Prompt { clip, row });
        }
        let text = record.clip_text(clip);
        if !text.is_empty() {
            for id in encode_checked(v, text, "clip text")? {
                positions.push(Position::Token(id));
            }
        }
    }
    if !record.prompt.is_empty() {
        for id in encode_checked(v, &record.prompt, "prompt")? {
            positions.push(Position::Token(id));
        }
    }
    let mut answer_len = 0;
    let mut targets = vec![IGNORE_INDEX; positions.len()];
    if with_answer {
        let answer_ids = encode_checked(v, &record.target, "target")?;
        if answer_ids.is_empty() {
            return Err(Error::contract("record with empty answer"));
        }
        answer_len = answer_ids.len();
        for id in answer_ids.iter().chain(std::iter::once(&vocab::EOS)) {
            // The previous position predicts this token.
            targets.push(IGNORE_INDEX);
            let p = positions.len() - 1;
            targets[p] = *id as usize;
            positions.push(Position::Token(*id));
        }
        targets.truncate(positions.len());
    }
    debug_assert_eq!(targets.len(), positions.len());
    Ok(SequencePlan {
        positions,
        targets,
        answer_len,
    })
}

/// Turn a plan into LM input rows. `prompt_blocks[clip]` must hold that
/// clip's stacked prompt rows, (segments * n_queries, lm width).
pub fn assemble<F: Scalar>(
    g: &mut Graph<'_, F>,
    lm: &LmParams,
    marker: ParamId,
    vocab_size: usize,
    plan: &SequencePlan,
    prompt_blocks: &[TensorId],
) -> Result<TensorId> {
    let mut parts: Vec<TensorId> = Vec::new();
    let mut run: Vec<u32> = Vec::new();
    let mut i = 0;
    while i < plan.positions.len() {
        match plan.positions[i] {
            Position::Token(id) => {
                run.push(id);
                i += 1;
            }
            Position::Prompt { clip, row } => {
                if !run.is_empty() {
                    parts.push(lm.token_rows(g, marker, &run, vocab_size)?);
                    run.clear();
                }
                let block = *prompt_blocks.get(clip).ok_or_else(|| {
                    Error::contract(format!("no prompt block for clip {clip}"))
                })?;
                let (rows, _) = g.tape.shape(block);
                if row != 0 {
                    return Err(Error::contract("prompt rows out of order in plan"));
                }
                // Consume the whole block; verify the plan expects as many
                // rows as the block carries.
                let mut expect = 0;
                while i < plan.positions.len() {
                    match plan.positions[i] {
                        Position::Prompt { clip: c, row: r } if c == clip && r == expect => {
                            expect += 1;
                            i += 1;
                        }
                        _ => break,
                    }
                }
                if expect != rows {
                    return Err(Error::contract(format!(
                        "plan expects {expect} prompt rows for clip {clip}, block has {rows}"
                    )));
                }
                parts.push(block);
            }
        }
    }
    if !run.is_empty() {
        parts.push(lm.token_rows(g, marker, &run, vocab_size)?);
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.tape.concat(&parts, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::Meta;
    use crate::tasks::templates;

    fn vocab() -> Vocabulary {
        let corpus = templates::vocab_corpus();
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        Vocabulary::build(refs.iter().copied())
    }

    fn record(n_clips: usize, prompt: &str, target: &str) -> Record {
        Record {
            task: "sec".into(),
            audio_refs: (0..n_clips).map(|i| format!("clips/{i}.wav")).collect(),
            prompt: prompt.into(),
            target: target.into(),
            meta: Meta {
                template_id: 0,
                seed: 0,
                order_sensitive: false,
                clip_texts: vec![],
            },
        }
    }

    #[test]
    fn single_clip_length_and_prefix_shape() {
        let v = vocab();
        let r = record(1, "This is a sound of", "rain");
        let p = plan(&r, &v, 32, &[1], true).unwrap();
        // bos + marker + 32 prompt rows + 5 prompt tokens + answer + eos
        assert_eq!(p.len(), 1 + 1 + 32 + 5 + 1 + 1);
        assert_eq!(p.len(), 41);
        // Prefix form: audio strictly precedes all instruction text.
        assert_eq!(p.positions[0], Position::Token(vocab::BOS));
        assert_eq!(p.positions[1], Position::Token(vocab::AUDIO));
        for (i, pos) in p.positions[2..34].iter().enumerate() {
            assert_eq!(*pos, Position::Prompt { clip: 0, row: i });
        }
        assert!(p.positions[34..]
            .iter()
            .all(|pos| matches!(pos, Position::Token(_))));
        assert_eq!(*p.positions.last().unwrap(), Position::Token(vocab::EOS));
    }

    #[test]
    fn three_segment_clip_length() {
        let v = vocab();
        let r = record(1, "This is a sound of", "rain");
        let p = plan(&r, &v, 32, &[3], true).unwrap();
        assert_eq!(p.len(), 1 + 1 + 96 + 5 + 1 + 1);
        assert_eq!(p.len(), 105);
    }

    #[test]
    fn supervision_covers_answer_plus_eos() {
        let v = vocab();
        let r = record(1, "This is a sound of", "wood creaking");
        let p = plan(&r, &v, 8, &[1], true).unwrap();
        assert_eq!(p.answer_len, 2);
        assert_eq!(p.supervised_positions(), p.answer_len + 1);
        // The supervised targets read off the answer then eos.
        let supervised: Vec<usize> = p
            .targets
            .iter()
            .copied()
            .filter(|&t| t != IGNORE_INDEX)
            .collect();
        let wood = v.id("wood").unwrap() as usize;
        let creaking = v.id("creaking").unwrap() as usize;
        assert_eq!(supervised, vec![wood, creaking, vocab::EOS as usize]);
    }

    #[test]
    fn prefix_plan_supervises_nothing() {
        let v = vocab();
        let r = record(2, "Which recording contains the rain sound?", "first");
        let p = plan(&r, &v, 4, &[1, 1], false).unwrap();
        assert_eq!(p.supervised_positions(), 0);
        assert_eq!(p.answer_len, 0);
        // bos + 2 * (marker + 4 prompt rows) + question tokens
        assert_eq!(p.len(), 1 + 2 * 5 + v.encode(&r.prompt).len());
    }

    #[test]
    fn clip_texts_follow_their_clip() {
        let v = vocab();
        let mut r = record(2, "This is a sound of", "rain");
        r.meta.clip_texts = vec!["thunder.".into(), String::new()];
        let p = plan(&r, &v, 2, &[1, 1], true).unwrap();
        // bos, marker, q, q, "thunder", ".", marker, q, q, prompt...
        let thunder = v.id("thunder").unwrap();
        assert_eq!(p.positions[4], Position::Token(thunder));
        assert_eq!(p.positions[6], Position::Token(vocab::AUDIO));
    }

    #[test]
    fn assembly_matches_manual_concat() {
        use crate::model::{Model, ModelConfig};
        let v = vocab();
        let cfg = ModelConfig::desk(v.len());
        let m: Model<f64> = Model::init(cfg, 11).unwrap();
        let r = record(1, "This is a sound of", "rain");
        let p = plan(&r, &v, m.cfg.n_queries, &[1], true).unwrap();

        let block_vals: Vec<f64> = (0..m.cfg.n_queries * m.cfg.lm_dim)
            .map(|i| (i as f64).sin())
            .collect();

        let mut g = m.graph();
        let block = g
            .tape
            .constant(m.cfg.n_queries, m.cfg.lm_dim, block_vals.clone())
            .unwrap();
        let x = assemble(&mut g, &m.lm, m.marker, m.cfg.vocab_size, &p, &[block]).unwrap();
        let got = g.tape.value(x).to_vec();

        let mut g2 = m.graph();
        let head = m
            .lm
            .token_rows(&mut g2, m.marker, &[vocab::BOS, vocab::AUDIO], m.cfg.vocab_size)
            .unwrap();
        let block2 = g2
            .tape
            .constant(m.cfg.n_queries, m.cfg.lm_dim, block_vals)
            .unwrap();
        let tail_ids: Vec<u32> = p.positions[2 + m.cfg.n_queries..]
            .iter()
            .map(|pos| match pos {
                Position::Token(id) => *id,
                Position::Prompt { .. } => unreachable!(),
            })
            .collect();
        let tail = m
            .lm
            .token_rows(&mut g2, m.marker, &tail_ids, m.cfg.vocab_size)
            .unwrap();
        let manual = g2.tape.concat(&[head, block2, tail], 0).unwrap();
        let want = g2.tape.value(manual).to_vec();

        assert_eq!(g.tape.shape(x), (p.len(), m.cfg.lm_dim));
        assert_eq!(got, want);
    }

    #[test]
    fn assembly_rejects_wrong_block_height() {
        use crate::model::{Model, ModelConfig};
        let v = vocab();
        let cfg = ModelConfig::desk(v.len());
        let m: Model<f64> = Model::init(cfg, 11).unwrap();
        let r = record(1, "This is a sound of", "rain");
        let p = plan(&r, &v, m.cfg.n_queries, &[2], true).unwrap();
        let mut g = m.graph();
        // Block sized for one segment, plan expects two.
        let block = g
            .tape
            .constant(
                m.cfg.n_queries,
                m.cfg.lm_dim,
                vec![0.0; m.cfg.n_queries * m.cfg.lm_dim],
            )
            .unwrap();
        assert!(assemble(&mut g, &m.lm, m.marker, m.cfg.vocab_size, &p, &[block]).is_err());
    }

    #[test]
    fn unknown_words_are_rejected() {
        let v = vocab();
        let r = record(1, "Transcribe the zebra", "rain");
        assert!(plan(&r, &v, 4, &[1], true).is_err());
    }

    #[test]
    fn segment_count_mismatch_is_rejected() {
        let v = vocab();
        let r = record(2, "This is a sound of", "rain");
        assert!(plan(&r, &v, 4, &[1], true).is_err());
    }
}
