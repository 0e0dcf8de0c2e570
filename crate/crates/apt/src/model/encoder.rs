//! Patch encoder over log-mel spectrograms: the segment is standardized,
//! cut into a fixed grid of patches, linearly embedded, and run through a
//! small bidirectional transformer. The feature map handed to the aligner
//! is the penultimate block's output; the final block belongs to the
//! encoder's own reconstruction-style pretraining and is never consumed
//! downstream.

use crate::audio::Spectrogram;
use crate::error::{Error, Result};
use crate::model::attn::BlockParams;
use crate::model::{Graph, Group, InitRng, ModelConfig, ParamId, ParamStore};
use crate::tensor::{sc, Scalar, Mask, TensorId};

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    pub pos: ParamId,
    pub blocks: Vec<BlockParams>,
}

impl EncoderParams {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut InitRng,
        cfg: &ModelConfig,
    ) -> Result<EncoderParams> {
        let patch_len = cfg.patch_len()?;
        let n = cfg.n_patches();
        let d = cfg.enc_dim;
        let patch_w = store.add(
            "enc.patch.w",
            Group::Encoder,
            patch_len,
            d,
            rng.xavier(patch_len, d),
        );
        let patch_b = store.add("enc.patch.b", Group::Encoder, 1, d, crate::model::zeros(d));
        let pos = store.add("enc.pos", Group::Encoder, n, d, rng.uniform(n * d, 0.02));
        let blocks = (0..cfg.enc_depth)
            .map(|i| {
                BlockParams::init(
                    store,
                    rng,
                    &format!("enc.block{i}"),
                    Group::Encoder,
                    d,
                    cfg.enc_ffn,
                )
            })
            .collect();
        Ok(EncoderParams {
            patch_w,
            patch_b,
            pos,
            blocks,
        })
    }

    /// Flatten a spectrogram into standardized patch rows, patch-major by
    /// (grid row, grid column), values frame-major within a patch.
    pub fn patch_values<F: Scalar>(
        spec: &Spectrogram,
        grid_rows: usize,
        grid_cols: usize,
    ) -> Result<Vec<F>> {
        if grid_rows == 0 || spec.frames % grid_rows != 0 {
            return Err(Error::contract(format!(
                "{} frames do not split into {} patch rows",
                spec.frames, grid_rows
            )));
        }
        if grid_cols == 0 || spec.mels % grid_cols != 0 {
            return Err(Error::contract(format!(
                "{} mel bins do not split into {} patch columns",
                spec.mels, grid_cols
            )));
        }
        let n = spec.data.len() as f64;
        let mean = spec.data.iter().sum::<f64>() / n;
        let var = spec.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-6);
        let pf = spec.frames / grid_rows;
        let pm = spec.mels / grid_cols;
        let mut out = Vec::with_capacity(spec.data.len());
        for gr in 0..grid_rows {
            for gc in 0..grid_cols {
                for f in 0..pf {
                    let frame = gr * pf + f;
                    for m in 0..pm {
                        let mel = gc * pm + m;
                        let v = spec.data[frame * spec.mels + mel];
                        out.push(sc::<F>((v - mean) / std));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Feature map for one segment: (n_patches, enc_dim) rows off the
    /// penultimate block.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        cfg: &ModelConfig,
        spec: &Spectrogram,
    ) -> Result<TensorId> {
        let n = cfg.n_patches();
        let patch_len = cfg.patch_len()?;
        let values = Self::patch_values(spec, cfg.grid_rows, cfg.grid_cols)?;
        let tokens = g.tape.constant(n, patch_len, values)?;
        let w = g.p(self.patch_w)?;
        let embedded = g.tape.matmul(tokens, w)?;
        let embedded = g.add_bias(embedded, self.patch_b)?;
        let pos = g.p(self.pos)?;
        let mut x = g.tape.add(embedded, pos)?;
        let mask = Mask::full(n, n);
        for block in &self.blocks[..self.blocks.len() - 1] {
            x = block.forward(g, x, &mask, cfg.enc_heads)?;
        }
        Ok(x)
    }
}
