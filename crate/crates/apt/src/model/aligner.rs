//! Instruction-conditioned aligner: a fixed set of learned query tokens
//! that pull acoustic evidence out of the encoder feature map through
//! cross-attention, optionally mixing with conditioning text through a
//! shared self-attention whose mask picks the training objective.
//!
//! Four mask regimes over the (queries ++ text) row block:
//! * bidirectional: everything sees everything (matching head),
//! * multimodal-causal: queries see only queries; text position i sees all
//!   queries plus text up to i (grounded generation head),
//! * unimodal: queries and text are isolated, text stays causal
//!   (contrastive pairs from one forward),
//! * inference: everything visible, projected queries become the prompt.

use crate::error::{Error, Result};
use crate::model::attn::{multi_head_attention, AttnParams};
use crate::model::{vocab, Graph, Group, InitRng, ModelConfig, ParamId, ParamStore, PoolKind};
use crate::tensor::{Mask, Scalar, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Bidirectional,
    MultimodalCausal,
    Unimodal,
    Inference,
}

impl MaskMode {
    pub const ALL: [MaskMode; 4] = [
        MaskMode::Bidirectional,
        MaskMode::MultimodalCausal,
        MaskMode::Unimodal,
        MaskMode::Inference,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            MaskMode::Bidirectional => "bidirectional",
            MaskMode::MultimodalCausal => "multimodal-causal",
            MaskMode::Unimodal => "unimodal",
            MaskMode::Inference => "inference",
        }
    }
}

/// Self-attention visibility over `n_q` query rows followed by `n_t` text
/// rows.
pub fn build_mask(n_q: usize, n_t: usize, mode: MaskMode) -> Mask {
    let n = n_q + n_t;
    match mode {
        MaskMode::Bidirectional | MaskMode::Inference => Mask::full(n, n),
        MaskMode::MultimodalCausal => {
            Mask::from_fn(n, n, |r, c| if r < n_q { c < n_q } else { c < n_q || c <= r })
        }
        MaskMode::Unimodal => {
            Mask::from_fn(n, n, |r, c| if r < n_q { c < n_q } else { c >= n_q && c <= r })
        }
    }
}

/// One aligner layer: shared self-attention, cross-attention applied to the
/// query rows only, shared feed-forward.
#[derive(Debug, Clone)]
pub struct AlignerBlock {
    pub ln_s_g: ParamId,
    pub ln_s_b: ParamId,
    pub self_attn: AttnParams,
    pub ln_x_g: ParamId,
    pub ln_x_b: ParamId,
    pub cross_attn: AttnParams,
    pub ln_f_g: ParamId,
    pub ln_f_b: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

impl AlignerBlock {
    fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut InitRng,
        prefix: &str,
        dim: usize,
        enc_dim: usize,
        ffn: usize,
    ) -> AlignerBlock {
        let g = Group::Aligner;
        let ln = |store: &mut ParamStore<F>, name: &str, one: bool| {
            let v = if one {
                crate::model::ones(dim)
            } else {
                crate::model::zeros(dim)
            };
            store.add(format!("{prefix}.{name}"), g, 1, dim, v)
        };
        let ln_s_g = ln(store, "ln_s.g", true);
        let ln_s_b = ln(store, "ln_s.b", false);
        let self_attn = AttnParams::init(store, rng, &format!("{prefix}.self"), g, dim, dim, dim);
        let ln_x_g = ln(store, "ln_x.g", true);
        let ln_x_b = ln(store, "ln_x.b", false);
        let cross_attn =
            AttnParams::init(store, rng, &format!("{prefix}.cross"), g, dim, enc_dim, dim);
        let ln_f_g = ln(store, "ln_f.g", true);
        let ln_f_b = ln(store, "ln_f.b", false);
        let ffn_w1 = store.add(format!("{prefix}.ffn.w1"), g, dim, ffn, rng.xavier(dim, ffn));
        let ffn_b1 = store.add(format!("{prefix}.ffn.b1"), g, 1, ffn, crate::model::zeros(ffn));
        let ffn_w2 = store.add(format!("{prefix}.ffn.w2"), g, ffn, dim, rng.xavier(ffn, dim));
        let ffn_b2 = store.add(format!("{prefix}.ffn.b2"), g, 1, dim, crate::model::zeros(dim));
        AlignerBlock {
            ln_s_g,
            ln_s_b,
            self_attn,
            ln_x_g,
            ln_x_b,
            cross_attn,
            ln_f_g,
            ln_f_b,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
        }
    }
}

/// Outputs of one aligner forward, post final layer norm.
pub struct AlignOut {
    /// (n_queries, alg_dim)
    pub queries: TensorId,
    /// (n_text, alg_dim); absent when no conditioning text was given.
    pub text: Option<TensorId>,
}

/// The query-token aligner.
#[derive(Debug, Clone)]
pub struct QueryAligner {
    pub query: ParamId,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<AlignerBlock>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub match_w: ParamId,
    pub match_b: ParamId,
    pub gen_w: ParamId,
}

impl QueryAligner {
    fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut InitRng,
        cfg: &ModelConfig,
    ) -> QueryAligner {
        let g = Group::Aligner;
        let d = cfg.alg_dim;
        let query = store.add(
            "alg.query",
            g,
            cfg.n_queries,
            d,
            rng.uniform(cfg.n_queries * d, 0.05),
        );
        let tok_emb = store.add(
            "alg.tok_emb",
            g,
            cfg.vocab_size,
            d,
            rng.uniform(cfg.vocab_size * d, 0.05),
        );
        let pos_emb = store.add(
            "alg.pos_emb",
            g,
            cfg.alg_max_text,
            d,
            rng.uniform(cfg.alg_max_text * d, 0.02),
        );
        let blocks = (0..cfg.alg_depth)
            .map(|i| {
                AlignerBlock::init(
                    store,
                    rng,
                    &format!("alg.block{i}"),
                    d,
                    cfg.enc_dim,
                    cfg.alg_ffn,
                )
            })
            .collect();
        let lnf_g = store.add("alg.lnf.g", g, 1, d, crate::model::ones(d));
        let lnf_b = store.add("alg.lnf.b", g, 1, d, crate::model::zeros(d));
        let proj_w = store.add("alg.proj.w", g, d, cfg.lm_dim, rng.xavier(d, cfg.lm_dim));
        let proj_b = store.add("alg.proj.b", g, 1, cfg.lm_dim, crate::model::zeros(cfg.lm_dim));
        let match_w = store.add("alg.match.w", g, d, 1, rng.xavier(d, 1));
        let match_b = store.add("alg.match.b", g, 1, 1, crate::model::zeros(1));
        let gen_w = store.add(
            "alg.gen.w",
            g,
            d,
            cfg.vocab_size,
            rng.xavier(d, cfg.vocab_size),
        );
        QueryAligner {
            query,
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
            proj_w,
            proj_b,
            match_w,
            match_b,
            gen_w,
        }
    }

    /// Run queries (and optional text) against an optional feature map.
    /// `feature_map` is (n_patches, enc_dim) from the encoder; when absent
    /// the cross-attention step is skipped (text-only embedding).
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        cfg: &ModelConfig,
        feature_map: Option<TensorId>,
        text: &[u32],
        mode: MaskMode,
    ) -> Result<AlignOut> {
        let n_q = cfg.n_queries;
        let n_t = text.len();
        if n_t > cfg.alg_max_text {
            return Err(Error::contract(format!(
                "conditioning text of {n_t} tokens exceeds the {} position table",
                cfg.alg_max_text
            )));
        }
        if text.iter().any(|&t| t as usize >= cfg.vocab_size) {
            return Err(Error::contract("text token id outside vocabulary"));
        }
        let queries = g.p(self.query)?;
        let mut x = if n_t > 0 {
            let emb_table = g.p(self.tok_emb)?;
            let ids: Vec<usize> = text.iter().map(|&t| t as usize).collect();
            let tok = g.tape.embed(emb_table, &ids)?;
            let pos_table = g.p(self.pos_emb)?;
            let pos = g.tape.slice(pos_table, 0, 0, n_t)?;
            let emb = g.tape.add(tok, pos)?;
            g.tape.concat(&[queries, emb], 0)?
        } else {
            queries
        };
        let mask = build_mask(n_q, n_t, mode);
        let cross_mask = feature_map.map(|fm| {
            let (t, _) = g.tape.shape(fm);
            Mask::full(n_q, t)
        });
        for block in &self.blocks {
            let normed = {
                let gain = g.p(block.ln_s_g)?;
                let bias = g.p(block.ln_s_b)?;
                g.tape.layer_norm(x, gain, bias)?
            };
            let sa = multi_head_attention(g, &block.self_attn, cfg.alg_heads, normed, normed, &mask)?;
            x = g.tape.add(x, sa)?;
            if let (Some(fm), Some(cm)) = (feature_map, cross_mask.as_ref()) {
                let q_rows = g.tape.slice(x, 0, 0, n_q)?;
                let qn = {
                    let gain = g.p(block.ln_x_g)?;
                    let bias = g.p(block.ln_x_b)?;
                    g.tape.layer_norm(q_rows, gain, bias)?
                };
                let ca = multi_head_attention(g, &block.cross_attn, cfg.alg_heads, qn, fm, cm)?;
                let q_rows = g.tape.add(q_rows, ca)?;
                x = if n_t > 0 {
                    let t_rows = g.tape.slice(x, 0, n_q, n_t)?;
                    g.tape.concat(&[q_rows, t_rows], 0)?
                } else {
                    q_rows
                };
            }
            let normed2 = {
                let gain = g.p(block.ln_f_g)?;
                let bias = g.p(block.ln_f_b)?;
                g.tape.layer_norm(x, gain, bias)?
            };
            let w1 = g.p(block.ffn_w1)?;
            let up = g.tape.matmul(normed2, w1)?;
            let up = g.add_bias(up, block.ffn_b1)?;
            let act = g.tape.gelu(up)?;
            let w2 = g.p(block.ffn_w2)?;
            let down = g.tape.matmul(act, w2)?;
            let down = g.add_bias(down, block.ffn_b2)?;
            x = g.tape.add(x, down)?;
        }
        let out = {
            let gain = g.p(self.lnf_g)?;
            let bias = g.p(self.lnf_b)?;
            g.tape.layer_norm(x, gain, bias)?
        };
        let queries = g.tape.slice(out, 0, 0, n_q)?;
        let text_out = if n_t > 0 {
            Some(g.tape.slice(out, 0, n_q, n_t)?)
        } else {
            None
        };
        Ok(AlignOut {
            queries,
            text: text_out,
        })
    }

    /// Project query outputs into LM width; this is the acoustic prompt.
    pub fn project<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        queries: TensorId,
    ) -> Result<TensorId> {
        let w = g.p(self.proj_w)?;
        let p = g.tape.matmul(queries, w)?;
        g.add_bias(p, self.proj_b)
    }

    /// Matching head: per-query binary logits averaged into one scalar.
    pub fn match_logit<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        queries: TensorId,
    ) -> Result<TensorId> {
        let w = g.p(self.match_w)?;
        let per_query = g.tape.matmul(queries, w)?;
        let per_query = g.add_bias(per_query, self.match_b)?;
        g.tape.mean(per_query)
    }

    /// Grounded-generation head over text-row outputs.
    pub fn gen_logits<F: Scalar>(&self, g: &mut Graph<'_, F>, text: TensorId) -> Result<TensorId> {
        let w = g.p(self.gen_w)?;
        g.tape.matmul(text, w)
    }
}

/// Pooling baseline: no queries, no text path. The feature map is pooled
/// down to `n_queries` rows and linearly mapped to LM width.
#[derive(Debug, Clone)]
pub struct LinearAligner {
    pub pooling: PoolKind,
    /// One (enc_dim, lm_dim) weight per within-group offset; mean pooling
    /// uses a single shared weight.
    pub down: Vec<ParamId>,
    pub bias: ParamId,
}

impl LinearAligner {
    fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut InitRng,
        cfg: &ModelConfig,
    ) -> LinearAligner {
        let g = Group::Aligner;
        let group = cfg.n_patches() / cfg.n_queries;
        let n_w = match cfg.pooling {
            PoolKind::Mean => 1,
            PoolKind::Learnable => group,
        };
        let down = (0..n_w)
            .map(|o| {
                store.add(
                    format!("alg.lin.down{o}"),
                    g,
                    cfg.enc_dim,
                    cfg.lm_dim,
                    rng.xavier(cfg.enc_dim, cfg.lm_dim),
                )
            })
            .collect();
        let bias = store.add("alg.lin.b", g, 1, cfg.lm_dim, crate::model::zeros(cfg.lm_dim));
        LinearAligner {
            pooling: cfg.pooling,
            down,
            bias,
        }
    }

    /// (n_queries, lm_dim) prompt rows from one feature map.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        cfg: &ModelConfig,
        feature_map: TensorId,
    ) -> Result<TensorId> {
        let (t, _) = g.tape.shape(feature_map);
        let n_q = cfg.n_queries;
        if t % n_q != 0 {
            return Err(Error::contract(format!(
                "{t} feature rows do not pool into {n_q} outputs"
            )));
        }
        let group = t / n_q;
        let pooled = match self.pooling {
            PoolKind::Mean => {
                // P (n_q, t) with 1/group at each group member.
                let mut p = vec![F::zero(); n_q * t];
                let w = F::one() / crate::tensor::sc::<F>(group as f64);
                for q in 0..n_q {
                    for o in 0..group {
                        p[q * t + q * group + o] = w;
                    }
                }
                let p = g.tape.constant(n_q, t, p)?;
                let mixed = g.tape.matmul(p, feature_map)?;
                let w0 = g.p(self.down[0])?;
                g.tape.matmul(mixed, w0)?
            }
            PoolKind::Learnable => {
                // Strided projection: each offset inside a group has its own
                // weight, summed. S_o (n_q, t) selects row q*group+o.
                let mut acc: Option<TensorId> = None;
                for (o, &w_id) in self.down.iter().enumerate() {
                    let mut s = vec![F::zero(); n_q * t];
                    for q in 0..n_q {
                        s[q * t + q * group + o] = F::one();
                    }
                    let s = g.tape.constant(n_q, t, s)?;
                    let picked = g.tape.matmul(s, feature_map)?;
                    let w = g.p(w_id)?;
                    let term = g.tape.matmul(picked, w)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => g.tape.add(a, term)?,
                    });
                }
                acc.expect("at least one pooling weight")
            }
        };
        g.add_bias(pooled, self.bias)
    }
}

/// The aligner slot of the model: either the full query aligner or the
/// pooling baseline.
pub enum AlignerParams {
    Query(QueryAligner),
    Linear(LinearAligner),
}

impl AlignerParams {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut InitRng,
        cfg: &ModelConfig,
    ) -> AlignerParams {
        match cfg.aligner_arch {
            super::AlignerArch::Transformer => {
                AlignerParams::Query(QueryAligner::init(store, rng, cfg))
            }
            super::AlignerArch::Linear => {
                AlignerParams::Linear(LinearAligner::init(store, rng, cfg))
            }
        }
    }

    pub fn query(&self) -> Result<&QueryAligner> {
        match self {
            AlignerParams::Query(q) => Ok(q),
            AlignerParams::Linear(_) => Err(Error::config(
                "this operation needs the query aligner, not the pooling baseline",
            )),
        }
    }

    /// The prompt rows for one clip: per-segment aligner outputs projected
    /// to LM width and stacked, (n_segments * n_queries, lm_dim).
    pub fn prompt_block<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        cfg: &ModelConfig,
        feature_maps: &[TensorId],
        instruction: &[u32],
    ) -> Result<TensorId> {
        if feature_maps.is_empty() {
            return Err(Error::contract("clip with no segments"));
        }
        let mut parts = Vec::with_capacity(feature_maps.len());
        for &fm in feature_maps {
            let rows = match self {
                AlignerParams::Query(q) => {
                    let out = q.forward(g, cfg, Some(fm), instruction, MaskMode::Inference)?;
                    q.project(g, out.queries)?
                }
                AlignerParams::Linear(l) => l.forward(g, cfg, fm)?,
            };
            parts.push(rows);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            g.tape.concat(&parts, 0)
        }
    }
}

/// Build the conditioning-text ids for the aligner, truncating to the
/// position table if needed. The id stream never includes control tokens.
pub fn conditioning_ids(v: &vocab::Vocabulary, text: &str, max_text: usize) -> Vec<u32> {
    let mut ids = v.encode(text);
    ids.truncate(max_text);
    ids
}
