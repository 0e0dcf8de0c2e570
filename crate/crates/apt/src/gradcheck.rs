//! Model-level gradient verification behind the gradcheck command.
//!
//! The ops scope runs the kernel suite; the other scopes build a loss
//! around a sub-thousand-scalar model at double precision and verify every
//! parameter of the relevant groups by central differences. A parameter
//! the backward pass left out of the gradient map is treated as a claimed
//! zero gradient, so an accidentally disconnected path fails the check
//! instead of slipping past it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::synth::{synthesize_clip, Annotation, CountTag, EventSpec};
use crate::error::{Error, Result};
use crate::io::{Meta, Record};
use crate::model::aligner::conditioning_ids;
use crate::model::{Graph, Group, MaskMode, Model, ModelConfig, Vocabulary};
use crate::objectives::{triplet_losses, TripletBatch};
use crate::pipeline::{Features, Runner};
use crate::tasks::render::ClipStore;
use crate::tensor::gradcheck::{central_difference, check_all_ops, GradCheckReport};
use crate::tensor::TensorId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Aligner,
    Objectives,
    End2end,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::Ops, Scope::Aligner, Scope::Objectives, Scope::End2end];

    pub fn name(self) -> &'static str {
        match self {
            Scope::Ops => "ops",
            Scope::Aligner => "aligner",
            Scope::Objectives => "objectives",
            Scope::End2end => "end2end",
        }
    }

    pub fn parse(s: &str) -> Result<Scope> {
        Scope::ALL
            .iter()
            .copied()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::config(format!("unknown gradcheck scope '{s}'")))
    }

    /// Kernel and single-forward checks hold to 1e-6. The objective and
    /// end-to-end losses run through a hard max over queries and much
    /// longer chains, so their finite differences are noisier; they get
    /// the looser bound that still sits orders below any real defect.
    fn tolerance(self) -> f64 {
        match self {
            Scope::Ops | Scope::Aligner => 1e-6,
            Scope::Objectives | Scope::End2end => 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScopeReport {
    pub scope: Scope,
    pub scalars: usize,
    pub rows: Vec<(String, GradCheckReport)>,
}

impl ScopeReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|(_, r)| r.passed())
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows
            .iter()
            .map(|(_, r)| r.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "scope {} ({} checks, {} scalars)\n",
            self.scope.name(),
            self.rows.len(),
            self.scalars
        );
        for (name, r) in &self.rows {
            s.push_str(&format!(
                "  {:<28} coords {:<5} max rel err {:<12.3e} {}\n",
                name,
                r.coords,
                r.max_rel_err,
                if r.passed() { "pass" } else { "FAIL" }
            ));
        }
        s.push_str(&format!(
            "scope {}: max rel err {:.3e} -> {}\n",
            self.scope.name(),
            self.max_rel_err(),
            if self.passed() { "pass" } else { "FAIL" }
        ));
        s
    }
}

/// The micro model and the vocabulary it is checked with.
pub fn micro_model(seed: u64) -> Result<(Model<f64>, Vocabulary)> {
    let vocab = Vocabulary::build(["is it yes"]);
    let model = Model::init(ModelConfig::micro(vocab.len()), seed)?;
    Ok((model, vocab))
}

/// Verify every parameter of `groups` against central differences of the
/// loss that `build` assembles. `build` must be deterministic in the
/// store's current values.
fn check_model_params(
    model: &mut Model<f64>,
    groups: &[Group],
    build: &mut dyn FnMut(&Model<f64>, &mut Graph<'_, f64>) -> Result<TensorId>,
    epsilon: f64,
    tolerance: f64,
) -> Result<Vec<(String, GradCheckReport)>> {
    model.store.set_trainable_groups(groups);
    let checked: Vec<_> = model
        .store
        .iter()
        .filter(|(_, p)| groups.contains(&p.group))
        .map(|(id, p)| (id, p.name.clone(), p.values.len()))
        .collect();
    let grads = {
        let mut g = model.graph();
        let loss = build(model, &mut g)?;
        g.backward(loss)?
    };
    let analytic: Vec<Vec<f64>> = checked
        .iter()
        .map(|&(id, _, len)| grads.get(id).map(<[f64]>::to_vec).unwrap_or(vec![0.0; len]))
        .collect();
    let mut rows = Vec::with_capacity(checked.len());
    for ((id, name, _), analytic) in checked.into_iter().zip(analytic) {
        let point = model.store.get(id).values.clone();
        let mut eval = |vals: &[f64]| -> Result<f64> {
            model.store.get_mut(id).values.copy_from_slice(vals);
            let mut g = model.graph();
            let loss = build(model, &mut g)?;
            Ok(g.tape.value(loss)[0])
        };
        let report = central_difference(&mut eval, &point, &analytic, epsilon, tolerance)?;
        model.store.get_mut(id).values.copy_from_slice(&point);
        rows.push((name, report));
    }
    Ok(rows)
}

fn random_feature_map(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Vec<f64> {
    (0..cfg.n_patches() * cfg.enc_dim)
        .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
        .collect()
}

/// Aligner scope: one conditioned forward through every head.
fn check_aligner(seed: u64, tolerance: f64) -> Result<ScopeReport> {
    let (mut model, vocab) = micro_model(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11);
    let fm_vals = random_feature_map(&mut rng, &model.cfg);
    let text = conditioning_ids(&vocab, "is it yes", model.cfg.alg_max_text);
    let scalars = model.store.scalar_count(false);
    let mut build = move |m: &Model<f64>, g: &mut Graph<'_, f64>| -> Result<TensorId> {
        let cfg = &m.cfg;
        let alg = m.alg.query()?;
        let fm = g.tape.constant(cfg.n_patches(), cfg.enc_dim, fm_vals.clone())?;
        let out = alg.forward(g, cfg, Some(fm), &text, MaskMode::MultimodalCausal)?;
        let projected = alg.project(g, out.queries)?;
        let q = g.tape.mean(projected)?;
        let t = g.tape.mean(out.text.ok_or_else(|| Error::contract("no text rows"))?)?;
        let m_logit = alg.match_logit(g, out.queries)?;
        let gen = alg.gen_logits(g, out.text.unwrap())?;
        let gen = g.tape.mean(gen)?;
        let a = g.tape.add(q, t)?;
        let b = g.tape.add(m_logit, gen)?;
        g.tape.add(a, b)
    };
    let rows = check_model_params(&mut model, &[Group::Aligner], &mut build, 3e-6, tolerance)?;
    Ok(ScopeReport {
        scope: Scope::Aligner,
        scalars,
        rows,
    })
}

/// Objectives scope: the summed pretraining losses on a two-item batch.
fn check_objectives(seed: u64, tolerance: f64) -> Result<ScopeReport> {
    let (mut model, vocab) = micro_model(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b1);
    let fm_a = random_feature_map(&mut rng, &model.cfg);
    let fm_b = random_feature_map(&mut rng, &model.cfg);
    let texts = vec![
        conditioning_ids(&vocab, "is it", model.cfg.alg_max_text),
        conditioning_ids(&vocab, "yes", model.cfg.alg_max_text),
    ];
    let scalars = model.store.scalar_count(false);
    let mut build = move |m: &Model<f64>, g: &mut Graph<'_, f64>| -> Result<TensorId> {
        let cfg = &m.cfg;
        let alg = m.alg.query()?;
        let n = cfg.n_patches();
        let batch = TripletBatch {
            feature_maps: vec![
                g.tape.constant(n, cfg.enc_dim, fm_a.clone())?,
                g.tape.constant(n, cfg.enc_dim, fm_b.clone())?,
            ],
            texts: texts.clone(),
        };
        Ok(triplet_losses(g, cfg, alg, &batch)?.total)
    };
    let rows = check_model_params(&mut model, &[Group::Aligner], &mut build, 3e-6, tolerance)?;
    Ok(ScopeReport {
        scope: Scope::Objectives,
        scalars,
        rows,
    })
}

/// End-to-end scope: waveform to supervised sequence loss, every group
/// trainable, encoder live.
fn check_end2end(seed: u64, tolerance: f64) -> Result<ScopeReport> {
    let (mut model, vocab) = micro_model(seed)?;
    let duration = model.cfg.segment_samples as f64 / model.cfg.sample_rate as f64;
    let clip = synthesize_clip(
        &Annotation {
            duration,
            events: vec![EventSpec {
                label: "rain".into(),
                onset: 0.0,
                offset: duration,
                count: CountTag::Throughout,
            }],
        },
        model.cfg.sample_rate,
        seed,
    )?;
    let reference = "clips/check.wav".to_string();
    let clips = ClipStore::Memory([(reference.clone(), clip)].into());
    let record = Record {
        task: "sec".into(),
        audio_refs: vec![reference],
        prompt: "is it".into(),
        target: "yes".into(),
        meta: Meta {
            template_id: 0,
            seed,
            order_sensitive: false,
            clip_texts: vec![],
        },
    };
    let features: Features<f64> = Features::new(&model.cfg)?;
    let scalars = model.store.scalar_count(false);
    let groups = [Group::Encoder, Group::Aligner, Group::AudioMarker, Group::Lm];
    let vocab_ref = &vocab;
    let clips_ref = &clips;
    let features_ref = &features;
    let record_ref = &record;
    let mut build = move |m: &Model<f64>, g: &mut Graph<'_, f64>| -> Result<TensorId> {
        let runner = Runner {
            model: m,
            vocab: vocab_ref,
            clips: clips_ref,
            features: features_ref,
            train_encoder: true,
        };
        runner.record_loss(g, record_ref)
    };
    let rows = check_model_params(&mut model, &groups, &mut build, 1e-5, tolerance)?;
    Ok(ScopeReport {
        scope: Scope::End2end,
        scalars,
        rows,
    })
}

/// Run one scope's suite at double precision.
pub fn run_scope(scope: Scope, seed: u64) -> Result<ScopeReport> {
    let tolerance = scope.tolerance();
    match scope {
        Scope::Ops => {
            let rows = check_all_ops::<f64>(seed, 1e-5, tolerance)?
                .into_iter()
                .map(|(n, r)| (n.to_string(), r))
                .collect();
            Ok(ScopeReport {
                scope,
                scalars: 0,
                rows,
            })
        }
        Scope::Aligner => check_aligner(seed, tolerance),
        Scope::Objectives => check_objectives(seed, tolerance),
        Scope::End2end => check_end2end(seed, tolerance),
    }
}
