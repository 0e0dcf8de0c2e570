//! Small causal language model. It is trained once on text alone, then
//! frozen; audio reaches it only through prompt rows spliced into its
//! input embeddings, plus the one trainable `[AUDIO]` marker row.

use crate::error::{Error, Result};
use crate::model::attn::BlockParams;
use crate::model::{vocab, Graph, Group, InitRng, ModelConfig, ParamId, ParamStore};
use crate::tensor::{Mask, Scalar, TensorId};

#[derive(Debug, Clone)]
pub struct LmParams {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<BlockParams>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
    pub head_w: ParamId,
}

impl LmParams {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut InitRng,
        cfg: &ModelConfig,
    ) -> LmParams {
        let g = Group::Lm;
        let d = cfg.lm_dim;
        let tok_emb = store.add(
            "lm.tok_emb",
            g,
            cfg.vocab_size,
            d,
            rng.uniform(cfg.vocab_size * d, 0.05),
        );
        let pos_emb = store.add(
            "lm.pos_emb",
            g,
            cfg.lm_max_pos,
            d,
            rng.uniform(cfg.lm_max_pos * d, 0.02),
        );
        let blocks = (0..cfg.lm_depth)
            .map(|i| BlockParams::init(store, rng, &format!("lm.block{i}"), g, d, cfg.lm_ffn))
            .collect();
        let lnf_g = store.add("lm.lnf.g", g, 1, d, crate::model::ones(d));
        let lnf_b = store.add("lm.lnf.b", g, 1, d, crate::model::zeros(d));
        let head_w = store.add(
            "lm.head.w",
            g,
            d,
            cfg.vocab_size,
            rng.xavier(d, cfg.vocab_size),
        );
        LmParams {
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
        }
    }

    /// Embedding rows for a token run. The `[AUDIO]` id routes to the
    /// marker parameter instead of the embedding table, so the marker can
    /// train while the table stays frozen.
    pub fn token_rows<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        marker: ParamId,
        ids: &[u32],
        vocab_size: usize,
    ) -> Result<TensorId> {
        if ids.is_empty() {
            return Err(Error::contract("empty token run"));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::contract(format!(
                "token id {bad} outside vocabulary of {vocab_size}"
            )));
        }
        let mut parts = Vec::new();
        let mut run: Vec<usize> = Vec::new();
        for &id in ids {
            if id == vocab::AUDIO {
                if !run.is_empty() {
                    let table = g.p(self.tok_emb)?;
                    parts.push(g.tape.embed(table, &run)?);
                    run.clear();
                }
                parts.push(g.p(marker)?);
            } else {
                run.push(id as usize);
            }
        }
        if !run.is_empty() {
            let table = g.p(self.tok_emb)?;
            parts.push(g.tape.embed(table, &run)?);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            g.tape.concat(&parts, 0)
        }
    }

    /// Causal forward over already-embedded rows: logits (L, vocab).
    /// Positions are added here, once, for the whole sequence.
    pub fn forward_embedded<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        cfg: &ModelConfig,
        x: TensorId,
    ) -> Result<TensorId> {
        let (l, d) = g.tape.shape(x);
        if d != cfg.lm_dim {
            return Err(Error::contract(format!(
                "embedded rows of width {d}, lm expects {}",
                cfg.lm_dim
            )));
        }
        if l > cfg.lm_max_pos {
            return Err(Error::contract(format!(
                "sequence of {l} positions exceeds the {} position table",
                cfg.lm_max_pos
            )));
        }
        let pos_table = g.p(self.pos_emb)?;
        let pos = g.tape.slice(pos_table, 0, 0, l)?;
        let mut h = g.tape.add(x, pos)?;
        let mask = Mask::from_fn(l, l, |r, c| c <= r);
        for block in &self.blocks {
            h = block.forward(g, h, &mask, cfg.lm_heads)?;
        }
        let normed = {
            let gain = g.p(self.lnf_g)?;
            let bias = g.p(self.lnf_b)?;
            g.tape.layer_norm(h, gain, bias)?
        };
        let w = g.p(self.head_w)?;
        g.tape.matmul(normed, w)
    }
}

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax_lowest<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding. `build_prefix` reconstructs the prompt embeddings on a
/// fresh graph each step (there is no activation cache); generation stops
/// at `<eos>` or after `max_new` tokens, whichever comes first. The
/// returned ids exclude `<eos>`.
pub fn greedy_decode<F, B>(
    lm: &LmParams,
    marker: ParamId,
    store: &ParamStore<F>,
    cfg: &ModelConfig,
    build_prefix: B,
    max_new: usize,
) -> Result<Vec<u32>>
where
    F: Scalar,
    B: Fn(&mut Graph<'_, F>) -> Result<TensorId>,
{
    let mut generated: Vec<u32> = Vec::new();
    for _ in 0..max_new {
        let mut g = Graph::new(store);
        let prefix = build_prefix(&mut g)?;
        let x = if generated.is_empty() {
            prefix
        } else {
            let gen_rows = lm.token_rows(&mut g, marker, &generated, cfg.vocab_size)?;
            g.tape.concat(&[prefix, gen_rows], 0)?
        };
        let logits = lm.forward_embedded(&mut g, cfg, x)?;
        let (l, v) = g.tape.shape(logits);
        let last = &g.tape.value(logits)[(l - 1) * v..];
        let next = argmax_lowest(last) as u32;
        if next == vocab::EOS {
            break;
        }
        generated.push(next);
    }
    Ok(generated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::MelConfig;
    use crate::model::{AlignerArch, Model, ModelConfig, PoolKind};

    fn tiny() -> ModelConfig {
        ModelConfig {
            sample_rate: 16_000,
            segment_samples: 800,
            mel: MelConfig {
                sample_rate: 16_000,
                window: 200,
                hop: 200,
                n_mels: 8,
                floor: 1e-10,
            },
            enc_dim: 8,
            enc_depth: 2,
            enc_heads: 2,
            enc_ffn: 16,
            grid_rows: 2,
            grid_cols: 2,
            aligner_arch: AlignerArch::Transformer,
            pooling: PoolKind::Mean,
            n_queries: 2,
            alg_dim: 8,
            alg_depth: 1,
            alg_heads: 2,
            alg_ffn: 16,
            alg_max_text: 16,
            lm_dim: 8,
            lm_depth: 2,
            lm_heads: 2,
            lm_ffn: 16,
            lm_max_pos: 32,
            vocab_size: 24,
        }
    }

    #[test]
    fn token_rows_route_marker_rows() {
        let m: Model<f64> = Model::init(tiny(), 17).unwrap();
        let mut g = m.graph();
        let ids = [5u32, vocab::AUDIO, 6, 7, vocab::AUDIO];
        let rows = m
            .lm
            .token_rows(&mut g, m.marker, &ids, m.cfg.vocab_size)
            .unwrap();
        assert_eq!(g.tape.shape(rows), (5, 8));
        let marker_vals: Vec<f64> = m.store.get(m.marker).values.clone();
        let v = g.tape.value(rows);
        assert_eq!(&v[8..16], &marker_vals[..]);
        assert_eq!(&v[32..40], &marker_vals[..]);
        let emb5: Vec<f64> = m.store.get(m.lm.tok_emb).values[5 * 8..6 * 8].to_vec();
        assert_eq!(&v[0..8], &emb5[..]);
    }

    #[test]
    fn forward_is_causal() {
        let m: Model<f64> = Model::init(tiny(), 8).unwrap();
        let run = |ids: &[u32]| {
            let mut g = m.graph();
            let rows = m
                .lm
                .token_rows(&mut g, m.marker, ids, m.cfg.vocab_size)
                .unwrap();
            let logits = m.lm.forward_embedded(&mut g, &m.cfg, rows).unwrap();
            g.tape.value(logits).to_vec()
        };
        let a = run(&[5, 6, 7]);
        let b = run(&[5, 6, 9]);
        let v = m.cfg.vocab_size;
        // Positions 0 and 1 cannot see position 2.
        assert_eq!(a[..2 * v], b[..2 * v]);
        assert_ne!(a[2 * v..], b[2 * v..]);
    }

    #[test]
    fn oversize_sequence_rejected() {
        let m: Model<f64> = Model::init(tiny(), 8).unwrap();
        let ids: Vec<u32> = (0..33).map(|i| 5 + (i % 3) as u32).collect();
        let mut g = m.graph();
        let rows = m
            .lm
            .token_rows(&mut g, m.marker, &ids, m.cfg.vocab_size)
            .unwrap();
        assert!(m.lm.forward_embedded(&mut g, &m.cfg, rows).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[5.0]), 0);
        assert_eq!(argmax_lowest(&[2.0, 2.0, 2.0]), 0);
    }

    #[test]
    fn greedy_decode_terminates_and_stays_in_vocab() {
        let m: Model<f32> = Model::init(tiny(), 8).unwrap();
        let out = greedy_decode(
            &m.lm,
            m.marker,
            &m.store,
            &m.cfg,
            |g| {
                let table = g.p(m.lm.tok_emb)?;
                g.tape.embed(table, &[vocab::BOS as usize, 5, 6])
            },
            6,
        )
        .unwrap();
        assert!(out.len() <= 6);
        assert!(out.iter().all(|&t| (t as usize) < m.cfg.vocab_size));
        assert!(out.iter().all(|&t| t != vocab::EOS));
    }

    #[test]
    fn greedy_decode_is_deterministic() {
        let m: Model<f32> = Model::init(tiny(), 21).unwrap();
        let gen = || {
            greedy_decode(
                &m.lm,
                m.marker,
                &m.store,
                &m.cfg,
                |g| {
                    let table = g.p(m.lm.tok_emb)?;
                    g.tape.embed(table, &[vocab::BOS as usize, 7])
                },
                8,
            )
            .unwrap()
        };
        assert_eq!(gen(), gen());
    }
}
