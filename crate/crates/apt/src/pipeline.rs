//! Shared forward machinery for training and evaluation: clip loading,
//! segmentation, encoder feature maps, per-clip prompt blocks, sequence
//! losses and greedy generation. Mel spectrograms are cached per audio
//! reference; encoder outputs are cached too while the encoder is frozen,
//! which keeps the encoder out of every training step's tape.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::audio::{log_mel_with, segment_clip, MelFilterbank, Spectrogram};
use crate::error::{Error, Result};
use crate::io::Record;
use crate::model::aligner::conditioning_ids;
use crate::model::lm::greedy_decode;
use crate::model::{Graph, Model, ModelConfig, Vocabulary};
use crate::objectives::{self, TripletBatch};
use crate::sequence::{self, SequencePlan};
use crate::tasks::render::ClipStore;
use crate::tensor::{Scalar, TensorId};

/// Per-reference caches. The feature-map cache assumes encoder parameters
/// do not change between uses; call [`Features::clear_feature_maps`] after
/// any encoder update.
pub struct Features<F: Scalar> {
    bank: MelFilterbank,
    specs: RefCell<HashMap<String, Rc<Vec<Spectrogram>>>>,
    maps: RefCell<HashMap<String, Rc<Vec<Vec<F>>>>>,
}

impl<F: Scalar> Features<F> {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Ok(Features {
            bank: MelFilterbank::new(&cfg.mel)?,
            specs: RefCell::new(HashMap::new()),
            maps: RefCell::new(HashMap::new()),
        })
    }

    pub fn clear_feature_maps(&self) {
        self.maps.borrow_mut().clear();
    }

    /// Per-segment spectrograms for one clip, computed once.
    pub fn spectrograms(
        &self,
        cfg: &ModelConfig,
        clips: &ClipStore,
        reference: &str,
    ) -> Result<Rc<Vec<Spectrogram>>> {
        if let Some(s) = self.specs.borrow().get(reference) {
            return Ok(Rc::clone(s));
        }
        let clip = clips.load(reference)?;
        if clip.sample_rate != cfg.sample_rate {
            return Err(Error::contract(format!(
                "clip '{reference}' has sample rate {}, model expects {}",
                clip.sample_rate, cfg.sample_rate
            )));
        }
        let segments = segment_clip(&clip.samples, cfg.segment_samples)?;
        let specs: Vec<Spectrogram> = segments
            .iter()
            .map(|s| log_mel_with(s, &cfg.mel, &self.bank))
            .collect::<Result<_>>()?;
        let rc = Rc::new(specs);
        self.specs
            .borrow_mut()
            .insert(reference.to_string(), Rc::clone(&rc));
        Ok(rc)
    }

    pub fn segment_count(
        &self,
        cfg: &ModelConfig,
        clips: &ClipStore,
        reference: &str,
    ) -> Result<usize> {
        Ok(self.spectrograms(cfg, clips, reference)?.len())
    }
}

/// One training or evaluation context. `train_encoder` routes encoder
/// forwards through the live graph instead of the frozen-feature cache.
pub struct Runner<'a, F: Scalar> {
    pub model: &'a Model<F>,
    pub vocab: &'a Vocabulary,
    pub clips: &'a ClipStore,
    pub features: &'a Features<F>,
    pub train_encoder: bool,
}

impl<'a, F: Scalar> Runner<'a, F> {
    /// Feature map tensors for every segment of one clip.
    pub fn feature_maps(
        &self,
        g: &mut Graph<'_, F>,
        reference: &str,
    ) -> Result<Vec<TensorId>> {
        let cfg = &self.model.cfg;
        let specs = self.features.spectrograms(cfg, self.clips, reference)?;
        if self.train_encoder {
            return specs
                .iter()
                .map(|s| self.model.enc.forward(g, cfg, s))
                .collect();
        }
        let cached = {
            let maps = self.features.maps.borrow();
            maps.get(reference).map(Rc::clone)
        };
        let values = match cached {
            Some(v) => v,
            None => {
                let mut scratch = self.model.graph();
                let mut out = Vec::with_capacity(specs.len());
                for s in specs.iter() {
                    let t = self.model.enc.forward(&mut scratch, cfg, s)?;
                    out.push(scratch.tape.value(t).to_vec());
                }
                let rc = Rc::new(out);
                self.features
                    .maps
                    .borrow_mut()
                    .insert(reference.to_string(), Rc::clone(&rc));
                rc
            }
        };
        values
            .iter()
            .map(|v| g.tape.constant(cfg.n_patches(), cfg.enc_dim, v.clone()))
            .collect()
    }

    /// All segments of one clip as a single stacked feature map.
    pub fn stacked_feature_map(
        &self,
        g: &mut Graph<'_, F>,
        reference: &str,
    ) -> Result<TensorId> {
        let maps = self.feature_maps(g, reference)?;
        if maps.len() == 1 {
            Ok(maps[0])
        } else {
            g.tape.concat(&maps, 0)
        }
    }

    /// Per-clip prompt blocks for a record, conditioned on its prompt.
    pub fn prompt_blocks(
        &self,
        g: &mut Graph<'_, F>,
        record: &Record,
    ) -> Result<Vec<TensorId>> {
        let cfg = &self.model.cfg;
        let instruction = conditioning_ids(self.vocab, &record.prompt, cfg.alg_max_text);
        record
            .audio_refs
            .iter()
            .map(|r| {
                let fms = self.feature_maps(g, r)?;
                self.model.alg.prompt_block(g, cfg, &fms, &instruction)
            })
            .collect()
    }

    pub fn plan(&self, record: &Record, with_answer: bool) -> Result<SequencePlan> {
        let cfg = &self.model.cfg;
        let segments: Vec<usize> = record
            .audio_refs
            .iter()
            .map(|r| self.features.segment_count(cfg, self.clips, r))
            .collect::<Result<_>>()?;
        sequence::plan(record, self.vocab, cfg.n_queries, &segments, with_answer)
    }

    /// Next-token loss for one record's full sequence.
    pub fn record_loss(&self, g: &mut Graph<'_, F>, record: &Record) -> Result<TensorId> {
        let plan = self.plan(record, true)?;
        let blocks = self.prompt_blocks(g, record)?;
        objectives::sequence_loss(
            g,
            &self.model.lm,
            self.model.marker,
            &self.model.cfg,
            &plan,
            &blocks,
        )
    }

    /// Pretraining batch from (reference, caption) pairs. Captions are
    /// encoded and truncated to the aligner's text window.
    pub fn caption_batch(
        &self,
        g: &mut Graph<'_, F>,
        items: &[(String, String)],
    ) -> Result<TripletBatch> {
        let cfg = &self.model.cfg;
        let mut feature_maps = Vec::with_capacity(items.len());
        let mut texts = Vec::with_capacity(items.len());
        for (reference, caption) in items {
            feature_maps.push(self.stacked_feature_map(g, reference)?);
            let ids = conditioning_ids(self.vocab, caption, cfg.alg_max_text);
            if ids.is_empty() {
                return Err(Error::contract(format!("empty caption for '{reference}'")));
            }
            texts.push(ids);
        }
        Ok(TripletBatch {
            feature_maps,
            texts,
        })
    }

    /// Greedy generation for a record. The interleaved prefix is computed
    /// once as plain values; each decode step then rebuilds only the LM
    /// forward over prefix plus generated tokens.
    pub fn generate(&self, record: &Record, max_new: usize) -> Result<String> {
        let cfg = &self.model.cfg;
        let plan = self.plan(record, false)?;
        let (rows, cols, vals) = {
            let mut g = self.model.graph();
            let blocks = self.prompt_blocks(&mut g, record)?;
            let x = sequence::assemble(
                &mut g,
                &self.model.lm,
                self.model.marker,
                cfg.vocab_size,
                &plan,
                &blocks,
            )?;
            let (r, c) = g.tape.shape(x);
            (r, c, g.tape.value(x).to_vec())
        };
        let ids = greedy_decode(
            &self.model.lm,
            self.model.marker,
            &self.model.store,
            cfg,
            |g| g.tape.constant(rows, cols, vals.clone()),
            max_new,
        )?;
        Ok(self.vocab.decode(&ids))
    }
}
