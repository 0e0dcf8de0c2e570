//! Multi-head attention and the pre-norm transformer block shared by the
//! encoder, the aligner, and the LM.

use crate::error::Result;
use crate::model::{Graph, Group, InitRng, ParamId, ParamStore};
use crate::tensor::{sc, Mask, Scalar, TensorId};

/// Projection weights for one attention. Key/value fan-in may differ from
/// the query fan-in (cross-attention reads an encoder-width source).
#[derive(Debug, Clone)]
pub struct AttnParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttnParams {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut InitRng,
        prefix: &str,
        group: Group,
        q_in: usize,
        kv_in: usize,
        dim: usize,
    ) -> AttnParams {
        let mut w = |name: &str, fi: usize, fo: usize| {
            store.add(
                format!("{prefix}.{name}"),
                group,
                fi,
                fo,
                rng.xavier(fi, fo),
            )
        };
        let wq = w("wq", q_in, dim);
        let wk = w("wk", kv_in, dim);
        let wv = w("wv", kv_in, dim);
        let wo = w("wo", dim, dim);
        let mut b = |name: &str, d: usize| {
            store.add(format!("{prefix}.{name}"), group, 1, d, crate::model::zeros(d))
        };
        let bq = b("bq", dim);
        let bk = b("bk", dim);
        let bv = b("bv", dim);
        let bo = b("bo", dim);
        AttnParams {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }
}

/// Scaled dot-product attention with `heads` heads. `mask` is (Lq, Lkv) or
/// row-broadcast (1, Lkv); a false bit removes that key from the row's
/// attention entirely.
pub fn multi_head_attention<F: Scalar>(
    g: &mut Graph<'_, F>,
    p: &AttnParams,
    heads: usize,
    x_q: TensorId,
    x_kv: TensorId,
    mask: &Mask,
) -> Result<TensorId> {
    let q = {
        let wq = g.p(p.wq)?;
        let t = g.tape.matmul(x_q, wq)?;
        g.add_bias(t, p.bq)?
    };
    let k = {
        let wk = g.p(p.wk)?;
        let t = g.tape.matmul(x_kv, wk)?;
        g.add_bias(t, p.bk)?
    };
    let v = {
        let wv = g.p(p.wv)?;
        let t = g.tape.matmul(x_kv, wv)?;
        g.add_bias(t, p.bv)?
    };
    let (_, dim) = g.tape.shape(q);
    debug_assert_eq!(dim % heads, 0);
    let dh = dim / heads;
    let scale = sc::<F>(1.0 / (dh as f64).sqrt());
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.tape.slice(q, 1, h * dh, dh)?;
        let kh = g.tape.slice(k, 1, h * dh, dh)?;
        let vh = g.tape.slice(v, 1, h * dh, dh)?;
        let scores = g.tape.matmul_t(qh, kh, true)?;
        let scaled = g.tape.scale(scores, scale)?;
        let probs = g.tape.masked_softmax(scaled, mask)?;
        head_outs.push(g.tape.matmul(probs, vh)?);
    }
    let cat = g.tape.concat(&head_outs, 1)?;
    let wo = g.p(p.wo)?;
    let out = g.tape.matmul(cat, wo)?;
    g.add_bias(out, p.bo)
}

/// Pre-norm block: x + attn(LN(x)), then h + ffn(LN(h)).
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub attn: AttnParams,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

impl BlockParams {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut InitRng,
        prefix: &str,
        group: Group,
        dim: usize,
        ffn: usize,
    ) -> BlockParams {
        let ln = |store: &mut ParamStore<F>, name: &str, one: bool| {
            let v = if one {
                crate::model::ones(dim)
            } else {
                crate::model::zeros(dim)
            };
            store.add(format!("{prefix}.{name}"), group, 1, dim, v)
        };
        let ln1_g = ln(store, "ln1.g", true);
        let ln1_b = ln(store, "ln1.b", false);
        let attn = AttnParams::init(store, rng, &format!("{prefix}.attn"), group, dim, dim, dim);
        let ln2_g = ln(store, "ln2.g", true);
        let ln2_b = ln(store, "ln2.b", false);
        let ffn_w1 = store.add(
            format!("{prefix}.ffn.w1"),
            group,
            dim,
            ffn,
            rng.xavier(dim, ffn),
        );
        let ffn_b1 = store.add(format!("{prefix}.ffn.b1"), group, 1, ffn, crate::model::zeros(ffn));
        let ffn_w2 = store.add(
            format!("{prefix}.ffn.w2"),
            group,
            ffn,
            dim,
            rng.xavier(ffn, dim),
        );
        let ffn_b2 = store.add(format!("{prefix}.ffn.b2"), group, 1, dim, crate::model::zeros(dim));
        BlockParams {
            ln1_g,
            ln1_b,
            attn,
            ln2_g,
            ln2_b,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        x: TensorId,
        mask: &Mask,
        heads: usize,
    ) -> Result<TensorId> {
        let normed = {
            let gain = g.p(self.ln1_g)?;
            let bias = g.p(self.ln1_b)?;
            g.tape.layer_norm(x, gain, bias)?
        };
        let attended = multi_head_attention(g, &self.attn, heads, normed, normed, mask)?;
        let h = g.tape.add(x, attended)?;
        let normed2 = {
            let gain = g.p(self.ln2_g)?;
            let bias = g.p(self.ln2_b)?;
            g.tape.layer_norm(h, gain, bias)?
        };
        let w1 = g.p(self.ffn_w1)?;
        let up = g.tape.matmul(normed2, w1)?;
        let up = g.add_bias(up, self.ffn_b1)?;
        let act = g.tape.gelu(up)?;
        let w2 = g.p(self.ffn_w2)?;
        let down = g.tape.matmul(act, w2)?;
        let down = g.add_bias(down, self.ffn_b2)?;
        g.tape.add(h, down)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Group;

    fn toy_store() -> (ParamStore<f64>, AttnParams) {
        let mut store = ParamStore::new();
        let mut rng = InitRng::new(7);
        let attn = AttnParams::init(&mut store, &mut rng, "t", Group::Lm, 6, 6, 6);
        (store, attn)
    }

    #[test]
    fn attention_rows_are_convex_mixes_of_values() {
        // With identity-ish value path disabled we can still check shape and
        // that masking a key column makes the output independent of it.
        let (store, attn) = toy_store();
        let mask_full = Mask::full(2, 3);
        let mask_cut = Mask::from_fn(2, 3, |_, c| c != 2);

        let run = |mask: &Mask, third_row: f64| {
            let mut g = Graph::new(&store);
            let kv = g
                .tape
                .leaf(
                    3,
                    6,
                    vec![
                        0.1, 0.2, 0.3, 0.4, 0.5, 0.6, //
                        0.6, 0.5, 0.4, 0.3, 0.2, 0.1, //
                        third_row, 0.9, 0.8, 0.7, 0.6, 0.5,
                    ],
                    false,
                )
                .unwrap();
            let q = g
                .tape
                .leaf(2, 6, vec![0.3; 12], false)
                .unwrap();
            let out = multi_head_attention(&mut g, &attn, 2, q, kv, mask).unwrap();
            g.tape.value(out).to_vec()
        };

        // Masked: varying the hidden key/value row must not change anything.
        let a = run(&mask_cut, 1.0);
        let b = run(&mask_cut, -4.0);
        assert_eq!(a, b);
        // Unmasked: it must.
        let c = run(&mask_full, 1.0);
        let d = run(&mask_full, -4.0);
        assert_ne!(c, d);
    }

    #[test]
    fn block_forward_shape_and_grads_flow() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = InitRng::new(3);
        let block = BlockParams::init(&mut store, &mut rng, "b0", Group::Lm, 6, 12);
        store.set_trainable_groups(&[Group::Lm]);
        let mut g = Graph::new(&store);
        let x = g
            .tape
            .leaf(4, 6, (0..24).map(|i| i as f64 * 0.05).collect(), false)
            .unwrap();
        let mask = Mask::from_fn(4, 4, |r, c| c <= r);
        let y = block.forward(&mut g, x, &mask, 2).unwrap();
        assert_eq!(g.tape.shape(y), (4, 6));
        let m = g.tape.mean(y).unwrap();
        let grads = g.backward(m).unwrap();
        let got = grads.get(block.attn.wq).expect("wq gradient");
        assert!(got.iter().any(|&v| v != 0.0));
    }
}
