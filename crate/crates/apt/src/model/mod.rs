//! Trainable model state: the named parameter store, the per-step graph
//! wrapper that binds parameters onto a tape, and the three networks
//! (patch encoder, aligner, causal LM) built on top.

pub mod aligner;
pub mod attn;
pub mod encoder;
pub mod lm;
pub mod vocab;

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::MelConfig;
use crate::error::{Error, Result};
use crate::tensor::{sc, Gradients, Scalar, Tape, TensorId};

// ── Parameter store ─────────────────────────────────────────────────────

/// Freezing granularity. Trainability is toggled per group; the audio
/// marker is its own group so it can train while the rest of the LM stays
/// frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Group {
    Encoder,
    Aligner,
    AudioMarker,
    Lm,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Encoder, Group::Aligner, Group::AudioMarker, Group::Lm];

    pub fn tag(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::Aligner => "aligner",
            Group::AudioMarker => "audio-marker",
            Group::Lm => "lm",
        }
    }

    pub fn parse(s: &str) -> Result<Group> {
        Group::ALL
            .into_iter()
            .find(|g| g.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown parameter group '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<F: Scalar> {
    pub name: String,
    pub group: Group,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<F>,
    pub trainable: bool,
}

/// Ordered, named collection of all persistent tensors. Iteration order is
/// creation order and is what the checkpoint format serializes.
pub struct ParamStore<F: Scalar> {
    params: Vec<Param<F>>,
    by_name: BTreeMap<String, usize>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        group: Group,
        rows: usize,
        cols: usize,
        values: Vec<F>,
    ) -> ParamId {
        let name = name.into();
        assert_eq!(values.len(), rows * cols, "param {name}: value count");
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            group,
            rows,
            cols,
            values,
            trainable: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total scalar count, optionally restricted to trainable parameters.
    pub fn scalar_count(&self, trainable_only: bool) -> usize {
        self.params
            .iter()
            .filter(|p| !trainable_only || p.trainable)
            .map(|p| p.values.len())
            .sum()
    }

    /// Mark exactly the given groups trainable.
    pub fn set_trainable_groups(&mut self, groups: &[Group]) {
        for p in &mut self.params {
            p.trainable = groups.contains(&p.group);
        }
    }

    /// Little-endian f32 bytes of every parameter in a group, in store
    /// order. Used to assert freezing byte-for-byte.
    pub fn group_bytes(&self, group: Group) -> Vec<u8> {
        let mut out = Vec::new();
        for p in self.params.iter().filter(|p| p.group == group) {
            for &v in &p.values {
                out.extend_from_slice(&(v.to_f64v() as f32).to_le_bytes());
            }
        }
        out
    }
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Deterministic initializer over a seeded stream.
pub struct InitRng {
    rng: ChaCha8Rng,
}

impl InitRng {
    pub fn new(seed: u64) -> Self {
        InitRng {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform(-scale, scale).
    pub fn uniform<F: Scalar>(&mut self, n: usize, scale: f64) -> Vec<F> {
        (0..n)
            .map(|_| sc::<F>((self.rng.gen::<f64>() * 2.0 - 1.0) * scale))
            .collect()
    }

    /// Glorot-style uniform for a (fan_in, fan_out) weight.
    pub fn xavier<F: Scalar>(&mut self, fan_in: usize, fan_out: usize) -> Vec<F> {
        let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(fan_in * fan_out, scale)
    }
}

pub fn zeros<F: Scalar>(n: usize) -> Vec<F> {
    vec![F::zero(); n]
}

pub fn ones<F: Scalar>(n: usize) -> Vec<F> {
    vec![F::one(); n]
}

// ── Graph: tape + bound parameters ──────────────────────────────────────

/// Gradients of one backward sweep keyed by parameter.
pub struct ParamGrads<F: Scalar> {
    by_param: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> ParamGrads<F> {
    pub fn get(&self, id: ParamId) -> Option<&[F]> {
        self.by_param.get(id.0).and_then(|g| g.as_deref())
    }

    /// Iterate (param, gradient) pairs that were bound trainable this step.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[F])> {
        self.by_param
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }

    /// L2 norm of all gradients belonging to `group`.
    pub fn group_norm(&self, store: &ParamStore<F>, group: Group) -> f64 {
        let mut ss = 0.0f64;
        for (id, g) in self.iter() {
            if store.get(id).group == group {
                for &v in g {
                    let v = v.to_f64v();
                    ss += v * v;
                }
            }
        }
        ss.sqrt()
    }
}

/// One training step's graph: a tape plus the parameters bound onto it.
/// Binding the same parameter twice returns the same leaf, so gradients
/// from every use accumulate into one buffer.
pub struct Graph<'s, F: Scalar> {
    pub tape: Tape<F>,
    store: &'s ParamStore<F>,
    bound: Vec<Option<TensorId>>,
    ones_cache: HashMap<usize, TensorId>,
}

impl<'s, F: Scalar> Graph<'s, F> {
    pub fn new(store: &'s ParamStore<F>) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            ones_cache: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore<F> {
        self.store
    }

    /// Bind a parameter onto the tape (once per graph).
    pub fn p(&mut self, id: ParamId) -> Result<TensorId> {
        if let Some(t) = self.bound[id.0] {
            return Ok(t);
        }
        let param = self.store.get(id);
        let t = self.tape.leaf(
            param.rows,
            param.cols,
            param.values.clone(),
            param.trainable,
        )?;
        self.bound[id.0] = Some(t);
        Ok(t)
    }

    /// x(n,d) + row-broadcast bias(1,d), expressed as ones(n,1)*bias + x so
    /// the op set needs no broadcasting add.
    pub fn add_bias(&mut self, x: TensorId, bias: ParamId) -> Result<TensorId> {
        let (n, _) = self.tape.shape(x);
        let ones_col = match self.ones_cache.get(&n) {
            Some(&t) => t,
            None => {
                let t = self.tape.constant(n, 1, ones(n))?;
                self.ones_cache.insert(n, t);
                t
            }
        };
        let b = self.p(bias)?;
        let rows = self.tape.matmul(ones_col, b)?;
        self.tape.add(x, rows)
    }

    /// Backward sweep; translates node gradients back to parameter ids.
    pub fn backward(mut self, loss: TensorId) -> Result<ParamGrads<F>> {
        let grads: Gradients<F> = self.tape.backward(loss)?;
        let mut by_param: Vec<Option<Vec<F>>> = vec![None; self.store.len()];
        for (pi, bound) in self.bound.iter().enumerate() {
            if let Some(t) = bound {
                if let Some(g) = grads.get(*t) {
                    by_param[pi] = Some(g.to_vec());
                }
            }
        }
        Ok(ParamGrads { by_param })
    }
}

// ── Model configuration ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignerArch {
    /// Query-token transformer with a text path (the full aligner).
    Transformer,
    /// Baseline: pooled feature map through a learned projection, no text
    /// conditioning and no pretraining objectives.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Mean,
    Learnable,
}

/// Shape of the whole stack. Audio geometry (mel, segmentation, patch grid)
/// is part of the model because the patch embedding's fan-in depends on it.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub segment_samples: usize,
    pub mel: MelConfig,
    pub enc_dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub enc_ffn: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub aligner_arch: AlignerArch,
    pub pooling: PoolKind,
    pub n_queries: usize,
    pub alg_dim: usize,
    pub alg_depth: usize,
    pub alg_heads: usize,
    pub alg_ffn: usize,
    /// Longest conditioning text the aligner embeds.
    pub alg_max_text: usize,
    pub lm_dim: usize,
    pub lm_depth: usize,
    pub lm_heads: usize,
    pub lm_ffn: usize,
    pub lm_max_pos: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// Frames the mel front end produces per segment.
    pub fn frames(&self) -> Result<usize> {
        self.mel.frames_for(self.segment_samples)
    }

    pub fn patch_len(&self) -> Result<usize> {
        let frames = self.frames()?;
        Ok((frames / self.grid_rows) * (self.mel.n_mels / self.grid_cols))
    }

    pub fn n_patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        let frames = self.frames()?;
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::config("patch grid must be nonzero"));
        }
        if frames % self.grid_rows != 0 {
            return Err(Error::config(format!(
                "patch grid: {} frames per segment not divisible by {} grid rows",
                frames, self.grid_rows
            )));
        }
        if self.mel.n_mels % self.grid_cols != 0 {
            return Err(Error::config(format!(
                "patch grid: {} mel bins not divisible by {} grid columns",
                self.mel.n_mels, self.grid_cols
            )));
        }
        for (dim, heads, what) in [
            (self.enc_dim, self.enc_heads, "encoder"),
            (self.alg_dim, self.alg_heads, "aligner"),
            (self.lm_dim, self.lm_heads, "lm"),
        ] {
            if heads == 0 || dim % heads != 0 {
                return Err(Error::config(format!(
                    "{what}: width {dim} not divisible by {heads} heads"
                )));
            }
        }
        if self.enc_depth < 2 {
            return Err(Error::config(
                "encoder depth must be at least 2 for a penultimate-block tap",
            ));
        }
        if self.n_queries == 0 {
            return Err(Error::config("need at least one query token"));
        }
        if self.aligner_arch == AlignerArch::Linear && self.n_patches() % self.n_queries != 0 {
            return Err(Error::config(format!(
                "linear aligner: {} patches not divisible into {} outputs",
                self.n_patches(),
                self.n_queries
            )));
        }
        if self.vocab_size < vocab::RESERVED {
            return Err(Error::config("vocabulary smaller than its reserved tokens"));
        }
        Ok(())
    }

    /// Desk-scale defaults; the vocabulary size is patched in after the
    /// vocabulary is built.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            sample_rate: 16_000,
            segment_samples: 160_000,
            mel: MelConfig {
                sample_rate: 16_000,
                window: 400,
                hop: 192,
                n_mels: 40,
                floor: 1e-10,
            },
            enc_dim: 64,
            enc_depth: 4,
            enc_heads: 4,
            enc_ffn: 128,
            grid_rows: 8,
            grid_cols: 8,
            aligner_arch: AlignerArch::Transformer,
            pooling: PoolKind::Mean,
            n_queries: 32,
            alg_dim: 64,
            alg_depth: 2,
            alg_heads: 4,
            alg_ffn: 128,
            alg_max_text: 64,
            lm_dim: 64,
            lm_depth: 4,
            lm_heads: 4,
            lm_ffn: 128,
            lm_max_pos: 1024,
            vocab_size,
        }
    }

    /// Smallest geometry that still exercises every path: short clips,
    /// minimal widths and depths. Built for double-precision gradient
    /// verification, where the whole model must stay under about a
    /// thousand scalars so finite differences finish quickly.
    pub fn micro(vocab_size: usize) -> Self {
        ModelConfig {
            sample_rate: 16_000,
            segment_samples: 2_000,
            mel: MelConfig {
                sample_rate: 16_000,
                window: 400,
                hop: 200,
                n_mels: 4,
                floor: 1e-10,
            },
            enc_dim: 4,
            enc_depth: 2,
            enc_heads: 2,
            enc_ffn: 5,
            grid_rows: 3,
            grid_cols: 2,
            aligner_arch: AlignerArch::Transformer,
            pooling: PoolKind::Mean,
            n_queries: 2,
            alg_dim: 4,
            alg_depth: 1,
            alg_heads: 2,
            alg_ffn: 5,
            alg_max_text: 6,
            lm_dim: 4,
            lm_depth: 1,
            lm_heads: 2,
            lm_ffn: 5,
            lm_max_pos: 12,
            vocab_size,
        }
    }
}

// ── The assembled model ─────────────────────────────────────────────────

pub use aligner::{AlignerParams, MaskMode};
pub use attn::{AttnParams, BlockParams};
pub use encoder::EncoderParams;
pub use lm::LmParams;
pub use vocab::Vocabulary;

pub struct Model<F: Scalar> {
    pub cfg: ModelConfig,
    pub store: ParamStore<F>,
    pub enc: EncoderParams,
    pub alg: AlignerParams,
    pub lm: LmParams,
    /// The learnable `[AUDIO]` marker row (1 x lm width). It lives in its
    /// own group so stages can train it while the LM stays frozen.
    pub marker: ParamId,
}

impl<F: Scalar> Model<F> {
    /// Deterministic initialization of every parameter from one seed.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = InitRng::new(seed);
        let enc = EncoderParams::init(&mut store, &mut rng, &cfg)?;
        let alg = AlignerParams::init(&mut store, &mut rng, &cfg);
        let marker = store.add(
            "marker",
            Group::AudioMarker,
            1,
            cfg.lm_dim,
            rng.uniform(cfg.lm_dim, 0.05),
        );
        let lm = LmParams::init(&mut store, &mut rng, &cfg);
        Ok(Model {
            cfg,
            store,
            enc,
            alg,
            lm,
            marker,
        })
    }

    pub fn graph(&self) -> Graph<'_, F> {
        Graph::new(&self.store)
    }
}
