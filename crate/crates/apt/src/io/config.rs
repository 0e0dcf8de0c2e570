//! Run configuration: a flat `key = value` file over desk-scale defaults.
//! Unknown keys are errors, `#` starts a comment, and the `APT_SEED`
//! environment variable overrides the seed without touching the file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{AlignerArch, ModelConfig, PoolKind};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,

    pub n_queries: usize,
    pub alg_depth: usize,
    pub aligner_arch: AlignerArch,
    pub pooling: PoolKind,

    pub train_per_task: usize,
    pub eval_per_task: usize,
    pub fsc_ways: usize,
    pub fsc_shots: usize,
    pub include_nlar: bool,

    pub lm_steps: usize,
    pub lm_lr: f64,
    pub lm_warmup: usize,

    pub stage0_steps: usize,
    pub stage0_lr: f64,
    pub stage0_warmup: usize,
    pub stage0_batch: usize,

    pub stage1_steps: usize,
    pub stage1_lr: f64,
    pub stage1_warmup: usize,

    pub stage2_steps: usize,
    pub stage2_lr: f64,
    pub stage2_warmup: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("runs/default"),
            n_queries: 32,
            alg_depth: 2,
            aligner_arch: AlignerArch::Transformer,
            pooling: PoolKind::Mean,
            train_per_task: 32,
            eval_per_task: 24,
            fsc_ways: 4,
            fsc_shots: 1,
            include_nlar: true,
            lm_steps: 1200,
            lm_lr: 3e-3,
            lm_warmup: 60,
            stage0_steps: 240,
            stage0_lr: 1e-3,
            stage0_warmup: 24,
            stage0_batch: 8,
            stage1_steps: 600,
            stage1_lr: 1.5e-3,
            stage1_warmup: 40,
            stage2_steps: 900,
            stage2_lr: 1.5e-3,
            stage2_warmup: 40,
        }
    }
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

macro_rules! parse_num {
    ($v:expr, $key:expr, $t:ty) => {
        $v.parse::<$t>()
            .map_err(|_| Error::config(format!("{}: cannot parse '{}'", $key, $v)))
    };
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected 'key = value'", ln + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => cfg.seed = parse_num!(value, key, u64)?,
                "data_dir" => cfg.data_dir = PathBuf::from(value),
                "run_dir" => cfg.run_dir = PathBuf::from(value),
                "n_queries" => cfg.n_queries = parse_num!(value, key, usize)?,
                "alg_depth" => cfg.alg_depth = parse_num!(value, key, usize)?,
                "aligner_arch" => {
                    cfg.aligner_arch = match value {
                        "transformer" => AlignerArch::Transformer,
                        "linear" => AlignerArch::Linear,
                        _ => {
                            return Err(Error::config(format!(
                                "aligner_arch: expected transformer or linear, got '{value}'"
                            )))
                        }
                    }
                }
                "pooling" => {
                    cfg.pooling = match value {
                        "mean" => PoolKind::Mean,
                        "learnable" => PoolKind::Learnable,
                        _ => {
                            return Err(Error::config(format!(
                                "pooling: expected mean or learnable, got '{value}'"
                            )))
                        }
                    }
                }
                "train_per_task" => cfg.train_per_task = parse_num!(value, key, usize)?,
                "eval_per_task" => cfg.eval_per_task = parse_num!(value, key, usize)?,
                "fsc_ways" => cfg.fsc_ways = parse_num!(value, key, usize)?,
                "fsc_shots" => cfg.fsc_shots = parse_num!(value, key, usize)?,
                "include_nlar" => cfg.include_nlar = parse_bool(value, key)?,
                "lm_steps" => cfg.lm_steps = parse_num!(value, key, usize)?,
                "lm_lr" => cfg.lm_lr = parse_num!(value, key, f64)?,
                "lm_warmup" => cfg.lm_warmup = parse_num!(value, key, usize)?,
                "stage0_steps" => cfg.stage0_steps = parse_num!(value, key, usize)?,
                "stage0_lr" => cfg.stage0_lr = parse_num!(value, key, f64)?,
                "stage0_warmup" => cfg.stage0_warmup = parse_num!(value, key, usize)?,
                "stage0_batch" => cfg.stage0_batch = parse_num!(value, key, usize)?,
                "stage1_steps" => cfg.stage1_steps = parse_num!(value, key, usize)?,
                "stage1_lr" => cfg.stage1_lr = parse_num!(value, key, f64)?,
                "stage1_warmup" => cfg.stage1_warmup = parse_num!(value, key, usize)?,
                "stage2_steps" => cfg.stage2_steps = parse_num!(value, key, usize)?,
                "stage2_lr" => cfg.stage2_lr = parse_num!(value, key, f64)?,
                "stage2_warmup" => cfg.stage2_warmup = parse_num!(value, key, usize)?,
                _ => return Err(Error::config(format!("unknown key '{key}'"))),
            }
        }
        Ok(cfg)
    }

    /// Parse a file and apply the `APT_SEED` environment override.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var("APT_SEED") {
            if let Ok(seed) = v.trim().parse::<u64>() {
                self.seed = seed;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (steps, warmup, what) in [
            (self.lm_steps, self.lm_warmup, "lm"),
            (self.stage0_steps, self.stage0_warmup, "stage0"),
            (self.stage1_steps, self.stage1_warmup, "stage1"),
            (self.stage2_steps, self.stage2_warmup, "stage2"),
        ] {
            if steps > 0 && steps <= warmup {
                return Err(Error::config(format!(
                    "{what}: {steps} total steps must exceed {warmup} warmup steps"
                )));
            }
        }
        if self.stage0_batch < 2 && self.stage0_steps > 0 {
            return Err(Error::config(
                "stage0: the contrastive objective needs a batch of at least 2",
            ));
        }
        if self.fsc_ways < 2 {
            return Err(Error::config("fsc_ways must be at least 2"));
        }
        if self.fsc_shots == 0 {
            return Err(Error::config("fsc_shots must be at least 1"));
        }
        if self.train_per_task == 0 || self.eval_per_task == 0 {
            return Err(Error::config("records per task must be positive"));
        }
        Ok(())
    }

    /// Model geometry for this run; `vocab_size` comes from the built
    /// vocabulary.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut mc = ModelConfig::desk(vocab_size);
        mc.n_queries = self.n_queries;
        mc.alg_depth = self.alg_depth;
        mc.aligner_arch = self.aligner_arch;
        mc.pooling = self.pooling;
        mc
    }

    /// Effective configuration in file syntax, for run provenance.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let arch = match self.aligner_arch {
            AlignerArch::Transformer => "transformer",
            AlignerArch::Linear => "linear",
        };
        let pool = match self.pooling {
            PoolKind::Mean => "mean",
            PoolKind::Learnable => "learnable",
        };
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "data_dir = {}", self.data_dir.display());
        let _ = writeln!(s, "run_dir = {}", self.run_dir.display());
        let _ = writeln!(s, "n_queries = {}", self.n_queries);
        let _ = writeln!(s, "alg_depth = {}", self.alg_depth);
        let _ = writeln!(s, "aligner_arch = {arch}");
        let _ = writeln!(s, "pooling = {pool}");
        let _ = writeln!(s, "train_per_task = {}", self.train_per_task);
        let _ = writeln!(s, "eval_per_task = {}", self.eval_per_task);
        let _ = writeln!(s, "fsc_ways = {}", self.fsc_ways);
        let _ = writeln!(s, "fsc_shots = {}", self.fsc_shots);
        let _ = writeln!(s, "include_nlar = {}", self.include_nlar);
        let _ = writeln!(s, "lm_steps = {}", self.lm_steps);
        let _ = writeln!(s, "lm_lr = {}", self.lm_lr);
        let _ = writeln!(s, "lm_warmup = {}", self.lm_warmup);
        let _ = writeln!(s, "stage0_steps = {}", self.stage0_steps);
        let _ = writeln!(s, "stage0_lr = {}", self.stage0_lr);
        let _ = writeln!(s, "stage0_warmup = {}", self.stage0_warmup);
        let _ = writeln!(s, "stage0_batch = {}", self.stage0_batch);
        let _ = writeln!(s, "stage1_steps = {}", self.stage1_steps);
        let _ = writeln!(s, "stage1_lr = {}", self.stage1_lr);
        let _ = writeln!(s, "stage1_warmup = {}", self.stage1_warmup);
        let _ = writeln!(s, "stage2_steps = {}", self.stage2_steps);
        let _ = writeln!(s, "stage2_lr = {}", self.stage2_lr);
        let _ = writeln!(s, "stage2_warmup = {}", self.stage2_warmup);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_overrides_and_comments() {
        let cfg = RunConfig::parse(
            "# run setup\nseed = 11\nn_queries = 16 # fewer prompts\naligner_arch = linear\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.n_queries, 16);
        assert_eq!(cfg.aligner_arch, AlignerArch::Linear);
        assert_eq!(cfg.alg_depth, RunConfig::default().alg_depth);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(RunConfig::parse("learning_rate = 3").is_err());
    }

    #[test]
    fn warmup_not_below_steps_is_rejected() {
        let cfg = RunConfig::parse("stage1_steps = 10\nstage1_warmup = 10").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn render_parse_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 123;
        cfg.pooling = PoolKind::Learnable;
        cfg.stage2_steps = 77;
        let back = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
    }
}
