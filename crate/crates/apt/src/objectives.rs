//! Training losses. The aligner pretrains on caption pairs with three
//! heads at once: a binary match discriminator, grounded next-token
//! generation, and a symmetric contrastive loss between query rows and
//! the first caption position. Downstream stages train on the plain
//! next-token loss over assembled interleaved sequences.

use crate::error::{Error, Result};
use crate::model::vocab;
use crate::model::{Graph, LmParams, MaskMode, ModelConfig, ParamId};
use crate::model::aligner::QueryAligner;
use crate::sequence::{self, SequencePlan};
use crate::tensor::{sc, Scalar, TensorId};

/// Softmax temperature for the contrastive objective.
pub const CONTRASTIVE_TAU: f64 = 0.07;

/// One pretraining batch: per item a feature map already on the graph
/// (constant or encoder output) and its caption token ids.
pub struct TripletBatch {
    pub feature_maps: Vec<TensorId>,
    pub texts: Vec<Vec<u32>>,
}

impl TripletBatch {
    fn validate(&self) -> Result<()> {
        if self.feature_maps.len() != self.texts.len() {
            return Err(Error::contract(format!(
                "{} feature maps for {} captions",
                self.feature_maps.len(),
                self.texts.len()
            )));
        }
        if self.feature_maps.len() < 2 {
            return Err(Error::contract(
                "pretraining batch needs at least two items for negatives",
            ));
        }
        if self.texts.iter().any(Vec::is_empty) {
            return Err(Error::contract("pretraining batch with an empty caption"));
        }
        Ok(())
    }
}

pub struct TripletLosses {
    pub matching: TensorId,
    pub generation: TensorId,
    pub contrastive: TensorId,
    pub total: TensorId,
}

/// Next-token targets for a caption: each position predicts its successor
/// and the last position predicts `<eos>`.
pub fn shifted_targets(text: &[u32]) -> Vec<usize> {
    let mut t: Vec<usize> = text[1..].iter().map(|&id| id as usize).collect();
    t.push(vocab::EOS as usize);
    t
}

/// Binary matching loss: each item scored against its own caption (label 1)
/// and against its neighbour's caption (label 0).
pub fn matching_loss<F: Scalar>(
    g: &mut Graph<'_, F>,
    cfg: &ModelConfig,
    alg: &QueryAligner,
    batch: &TripletBatch,
) -> Result<TensorId> {
    batch.validate()?;
    let b = batch.feature_maps.len();
    let mut logits = Vec::with_capacity(2 * b);
    let mut labels = Vec::with_capacity(2 * b);
    for i in 0..b {
        let out = alg.forward(
            g,
            cfg,
            Some(batch.feature_maps[i]),
            &batch.texts[i],
            MaskMode::Bidirectional,
        )?;
        logits.push(alg.match_logit(g, out.queries)?);
        labels.push(F::one());
    }
    for i in 0..b {
        let out = alg.forward(
            g,
            cfg,
            Some(batch.feature_maps[i]),
            &batch.texts[(i + 1) % b],
            MaskMode::Bidirectional,
        )?;
        logits.push(alg.match_logit(g, out.queries)?);
        labels.push(F::zero());
    }
    let stacked = g.tape.concat(&logits, 0)?;
    g.tape.sigmoid_bce(stacked, &labels)
}

/// Grounded generation loss: captions decoded causally over the audio,
/// supervised with the shifted caption plus `<eos>`.
pub fn generation_loss<F: Scalar>(
    g: &mut Graph<'_, F>,
    cfg: &ModelConfig,
    alg: &QueryAligner,
    batch: &TripletBatch,
) -> Result<TensorId> {
    batch.validate()?;
    let mut logit_parts = Vec::with_capacity(batch.texts.len());
    let mut targets = Vec::new();
    for (fm, text) in batch.feature_maps.iter().zip(&batch.texts) {
        let out = alg.forward(g, cfg, Some(*fm), text, MaskMode::MultimodalCausal)?;
        let rows = out
            .text
            .ok_or_else(|| Error::contract("generation loss needs caption rows"))?;
        logit_parts.push(alg.gen_logits(g, rows)?);
        targets.extend(shifted_targets(text));
    }
    let logits = if logit_parts.len() == 1 {
        logit_parts[0]
    } else {
        g.tape.concat(&logit_parts, 0)?
    };
    g.tape.cross_entropy(logits, &targets)
}

/// Symmetric InfoNCE over precomputed sides: `audio[i]` holds that item's
/// query rows, `text_rows[j]` one caption embedding row. The similarity is
/// the best-matching query per caption, both directions averaged.
pub fn contrastive_from_sides<F: Scalar>(
    g: &mut Graph<'_, F>,
    audio: &[TensorId],
    text_rows: &[TensorId],
    tau: f64,
) -> Result<TensorId> {
    if audio.len() != text_rows.len() || audio.len() < 2 {
        return Err(Error::contract(
            "contrastive loss needs matched sides of at least two items",
        ));
    }
    let b = audio.len();
    let eps = sc::<F>(1e-12);
    let inv_tau = sc::<F>(1.0 / tau);
    let audio_n: Vec<TensorId> = audio
        .iter()
        .map(|&a| g.tape.l2_normalize_rows(a, eps))
        .collect::<Result<_>>()?;
    let text_n: Vec<TensorId> = text_rows
        .iter()
        .map(|&t| g.tape.l2_normalize_rows(t, eps))
        .collect::<Result<_>>()?;
    // sims[i * b + j]: audio item i against caption j.
    let mut sims = Vec::with_capacity(b * b);
    for i in 0..b {
        for j in 0..b {
            let per_query = g.tape.matmul_t(text_n[j], audio_n[i], true)?;
            let best = g.tape.max_last_dim(per_query)?;
            sims.push(g.tape.scale(best, inv_tau)?);
        }
    }
    let mut audio_rows = Vec::with_capacity(b);
    let mut text_rows_m = Vec::with_capacity(b);
    for i in 0..b {
        audio_rows.push(g.tape.concat(&sims[i * b..(i + 1) * b], 1)?);
        let col: Vec<TensorId> = (0..b).map(|j| sims[j * b + i]).collect();
        text_rows_m.push(g.tape.concat(&col, 1)?);
    }
    let s_audio = g.tape.concat(&audio_rows, 0)?;
    let s_text = g.tape.concat(&text_rows_m, 0)?;
    let diag: Vec<usize> = (0..b).collect();
    let a2t = g.tape.cross_entropy(s_audio, &diag)?;
    let t2a = g.tape.cross_entropy(s_text, &diag)?;
    let sum = g.tape.add(a2t, t2a)?;
    g.tape.scale(sum, sc::<F>(0.5))
}

/// Contrastive loss over a batch: isolated-stream forwards give the audio
/// side (query rows) and the text side (first caption position) without
/// cross-modal leakage inside one pass.
pub fn contrastive_loss<F: Scalar>(
    g: &mut Graph<'_, F>,
    cfg: &ModelConfig,
    alg: &QueryAligner,
    batch: &TripletBatch,
) -> Result<TensorId> {
    batch.validate()?;
    let mut audio = Vec::with_capacity(batch.texts.len());
    let mut text_rows = Vec::with_capacity(batch.texts.len());
    for (fm, text) in batch.feature_maps.iter().zip(&batch.texts) {
        let out = alg.forward(g, cfg, Some(*fm), text, MaskMode::Unimodal)?;
        let rows = out
            .text
            .ok_or_else(|| Error::contract("contrastive loss needs caption rows"))?;
        audio.push(out.queries);
        text_rows.push(g.tape.slice(rows, 0, 0, 1)?);
    }
    contrastive_from_sides(g, &audio, &text_rows, CONTRASTIVE_TAU)
}

/// All three pretraining losses plus their unweighted sum.
pub fn triplet_losses<F: Scalar>(
    g: &mut Graph<'_, F>,
    cfg: &ModelConfig,
    alg: &QueryAligner,
    batch: &TripletBatch,
) -> Result<TripletLosses> {
    let matching = matching_loss(g, cfg, alg, batch)?;
    let generation = generation_loss(g, cfg, alg, batch)?;
    let contrastive = contrastive_loss(g, cfg, alg, batch)?;
    let mg = g.tape.add(matching, generation)?;
    let total = g.tape.add(mg, contrastive)?;
    Ok(TripletLosses {
        matching,
        generation,
        contrastive,
        total,
    })
}

/// Next-token loss over one assembled interleaved sequence.
pub fn sequence_loss<F: Scalar>(
    g: &mut Graph<'_, F>,
    lm: &LmParams,
    marker: ParamId,
    cfg: &ModelConfig,
    plan: &SequencePlan,
    prompt_blocks: &[TensorId],
) -> Result<TensorId> {
    if plan.supervised_positions() == 0 {
        return Err(Error::contract("sequence plan supervises nothing"));
    }
    let x = sequence::assemble(g, lm, marker, cfg.vocab_size, plan, prompt_blocks)?;
    let logits = lm.forward_embedded(g, cfg, x)?;
    g.tape.cross_entropy(logits, &plan.targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::MelConfig;
    use crate::io::{Meta, Record};
    use crate::model::{AlignerArch, Group, Model, ModelConfig, PoolKind, Vocabulary};
    use crate::tasks::templates;

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
            lm_max_pos: 64,
            vocab_size: 24,
        }
    }

    fn fm<F: Scalar>(g: &mut Graph<'_, F>, cfg: &ModelConfig, seed: u64) -> TensorId {
        let n = cfg.n_patches() * cfg.enc_dim;
        let vals: Vec<F> = (0..n)
            .map(|i| sc::<F>(((i as f64 + seed as f64 * 31.7).sin()) * 0.5))
            .collect();
        g.tape.constant(cfg.n_patches(), cfg.enc_dim, vals).unwrap()
    }

    fn batch<F: Scalar>(g: &mut Graph<'_, F>, cfg: &ModelConfig, b: usize) -> TripletBatch {
        TripletBatch {
            feature_maps: (0..b).map(|i| fm(g, cfg, i as u64)).collect(),
            texts: (0..b)
                .map(|i| vec![6 + i as u32, 7, 8 + i as u32])
                .collect(),
        }
    }

    #[test]
    fn shifted_targets_append_eos() {
        assert_eq!(
            shifted_targets(&[10, 11, 12]),
            vec![11, 12, vocab::EOS as usize]
        );
        assert_eq!(shifted_targets(&[9]), vec![vocab::EOS as usize]);
    }

    #[test]
    fn zeroed_match_head_scores_ln2() {
        let mut m: Model<f64> = Model::init(tiny(), 3).unwrap();
        let alg = m.alg.query().unwrap().clone();
        m.store.get_mut(alg.match_w).values.fill(0.0);
        m.store.get_mut(alg.match_b).values.fill(0.0);
        let mut g = m.graph();
        let b = batch(&mut g, &m.cfg, 3);
        let loss = matching_loss(&mut g, &m.cfg, &alg, &b).unwrap();
        let got = g.tape.value(loss)[0];
        assert!((got - std::f64::consts::LN_2).abs() < 1e-12, "{got}");
    }

    #[test]
    fn identical_sides_make_contrastive_uniform() {
        let m: Model<f64> = Model::init(tiny(), 3).unwrap();
        let mut g = m.graph();
        let q_vals: Vec<f64> = (0..2 * 8).map(|i| (i as f64 * 0.3).cos()).collect();
        let t_vals: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin() + 0.1).collect();
        let audio: Vec<TensorId> = (0..3)
            .map(|_| g.tape.constant(2, 8, q_vals.clone()).unwrap())
            .collect();
        let text: Vec<TensorId> = (0..3)
            .map(|_| g.tape.constant(1, 8, t_vals.clone()).unwrap())
            .collect();
        let loss = contrastive_from_sides(&mut g, &audio, &text, 0.07).unwrap();
        let got = g.tape.value(loss)[0];
        let want = (3.0f64).ln();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn contrastive_prefers_matched_pairs() {
        // One-hot sides: item i's queries point along axis i, caption too.
        let m: Model<f64> = Model::init(tiny(), 3).unwrap();
        let mut g = m.graph();
        let mut audio = Vec::new();
        let mut text = Vec::new();
        for i in 0..3usize {
            let mut q = vec![0.0; 2 * 8];
            q[i] = 1.0;
            q[8 + i] = 1.0;
            let mut t = vec![0.0; 8];
            t[i] = 1.0;
            audio.push(g.tape.constant(2, 8, q).unwrap());
            text.push(g.tape.constant(1, 8, t).unwrap());
        }
        let loss = contrastive_from_sides(&mut g, &audio, &text, 0.07).unwrap();
        let got = g.tape.value(loss)[0];
        // Diagonal similarity 1/tau, off-diagonal 0: near-zero loss.
        assert!(got < 1e-5, "{got}");
    }

    #[test]
    fn triplet_grads_reach_aligner_but_not_projection() {
        let mut m: Model<f64> = Model::init(tiny(), 5).unwrap();
        m.store.set_trainable_groups(&[Group::Aligner]);
        let alg = m.alg.query().unwrap();
        let mut g = m.graph();
        let b = batch(&mut g, &m.cfg, 2);
        let losses = triplet_losses(&mut g, &m.cfg, alg, &b).unwrap();
        for l in [
            losses.matching,
            losses.generation,
            losses.contrastive,
            losses.total,
        ] {
            assert!(g.tape.value(l)[0].is_finite());
        }
        let grads = g.backward(losses.total).unwrap();
        for id in [alg.query, alg.tok_emb, alg.match_w, alg.gen_w, alg.lnf_g] {
            assert!(grads.get(id).is_some(), "missing grad");
        }
        // The LM-space projection plays no part in pretraining.
        assert!(grads.get(alg.proj_w).is_none());
        assert!(grads.get(alg.proj_b).is_none());
    }

    #[test]
    fn undersized_batch_is_rejected() {
        let m: Model<f64> = Model::init(tiny(), 5).unwrap();
        let alg = m.alg.query().unwrap();
        let mut g = m.graph();
        let b = batch(&mut g, &m.cfg, 1);
        assert!(matching_loss(&mut g, &m.cfg, alg, &b).is_err());
    }

    #[test]
    fn sequence_loss_trains_marker_and_projection() {
        let corpus = templates::vocab_corpus();
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        let v = Vocabulary::build(refs.iter().copied());
        let mut m: Model<f64> = Model::init(ModelConfig::desk(v.len()), 9).unwrap();
        m.store
            .set_trainable_groups(&[Group::Aligner, Group::AudioMarker, Group::Lm]);
        let record = Record {
            task: "sec".into(),
            audio_refs: vec!["clips/a.wav".into()],
            prompt: "This is a sound of".into(),
            target: "rain".into(),
            meta: Meta {
                template_id: 0,
                seed: 0,
                order_sensitive: false,
                clip_texts: vec![],
            },
        };
        let plan = sequence::plan(&record, &v, m.cfg.n_queries, &[1], true).unwrap();
        let mut g = m.graph();
        let map = fm(&mut g, &m.cfg, 1);
        let instr = crate::model::aligner::conditioning_ids(&v, &record.prompt, m.cfg.alg_max_text);
        let block = m.alg.prompt_block(&mut g, &m.cfg, &[map], &instr).unwrap();
        let loss = sequence_loss(&mut g, &m.lm, m.marker, &m.cfg, &plan, &[block]).unwrap();
        assert!(g.tape.value(loss)[0].is_finite());
        let alg = m.alg.query().unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(m.marker).is_some());
        assert!(grads.get(alg.proj_w).is_some());
        assert!(grads.get(alg.query).is_some());
        let head = m.store.by_name("lm.head.w").unwrap();
        assert!(grads.get(head).is_some());
    }
}
