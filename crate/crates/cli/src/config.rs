//! Experiment configuration file.
//!
//! One TOML file per experiment. Every section except the top-level keys is
//! optional and falls back to the defaults below.
//!
//! ```toml
//! schema_version = 1
//! run_id = "rabo-singing"
//! output_dir = "runs"
//! seed = 7
//!
//! [corpus]
//! mix = "singingonly"
//! n_samples = 256
//! frames_per_sample = 64
//!
//! [train]
//! kind = "rabo"
//! latent_size = 16
//! p_global = 0.1
//! steps = 20000
//! ```
//!
//! All seeds derive from `seed`: the training corpus from
//! `derive_seed(seed, "corpus/train")`, the evaluation corpus from
//! `"corpus/eval"` and the training run from `"train"` unless `train.seed` is
//! set. Sweep cells set `train.seed` to
//! `derive_seed(seed, "cell/<kind>/<n_l>/<p_g>/<mix>")`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vasb::bottleneck::{BottleneckConfig, BottleneckKind};
use vasb::eval::EvalConfig;
use vasb::model::{ModelConfig, TrainConfig};
use vasb::ndcore::derive_seed;
use vasb::synthdata::{GenParams, Mix, VoiceType};
use vasb::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub run_id: String,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub mix: Mix,
    pub n_samples: usize,
    pub frames_per_sample: usize,
    pub params: GenParams,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            mix: Mix::SingingOnly,
            n_samples: 256,
            frames_per_sample: 64,
            params: GenParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub context: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_width: 256,
            hidden_layers: 3,
            context: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub kind: BottleneckKind,
    pub latent_size: usize,
    pub p_global: f64,
    pub target_size: BTreeMap<VoiceType, usize>,
    pub rescale_kept: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub batch_frames: usize,
    /// Steps per loss-trace record.
    pub log_every: u64,
    /// Steps between checkpoints; the final step is always saved.
    pub checkpoint_every: u64,
    /// Overrides the training seed derived from the top-level seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let b = BottleneckConfig::new(BottleneckKind::Rabo, 16, 0.1);
        let t = TrainConfig::new(b.clone(), 20_000, 0);
        Self {
            kind: b.kind,
            latent_size: b.latent_size,
            p_global: b.p_global,
            target_size: b.target_size,
            rescale_kept: b.rescale_kept,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            steps: t.steps,
            batch_frames: t.batch_frames,
            log_every: 100,
            checkpoint_every: 5_000,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_samples: usize,
    pub frames_per_sample: usize,
    pub metrics: EvalConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_samples: 48,
            frames_per_sample: 64,
            metrics: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub kinds: Vec<BottleneckKind>,
    pub latent_sizes: Vec<usize>,
    pub p_globals: Vec<f64>,
    pub mixes: Vec<Mix>,
    pub workers: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            kinds: BottleneckKind::ALL.to_vec(),
            latent_sizes: vec![16, 64],
            p_globals: vec![0.0, 0.1, 0.2, 0.3],
            mixes: Mix::ALL.to_vec(),
            workers: 1,
        }
    }
}

fn field(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(field(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(field("run_id", "must be non-empty and use only [A-Za-z0-9._-]"));
        }
        if self.corpus.n_samples == 0 {
            return Err(field("corpus.n_samples", "must be at least 1"));
        }
        if self.corpus.frames_per_sample == 0 {
            return Err(field("corpus.frames_per_sample", "must be at least 1"));
        }
        self.corpus
            .params
            .validate()
            .map_err(|e| prefix("corpus.params", e))?;
        if self.eval.n_samples == 0 || self.eval.frames_per_sample == 0 {
            return Err(field("eval", "n_samples and frames_per_sample must be at least 1"));
        }
        self.eval.metrics.validate().map_err(|e| prefix_replace("eval.", "eval.metrics.", e))?;
        if self.model.hidden_width == 0 {
            return Err(field("model.hidden_width", "must be at least 1"));
        }
        if self.train.log_every == 0 {
            return Err(field("train.log_every", "must be at least 1"));
        }
        if self.train.checkpoint_every == 0 {
            return Err(field("train.checkpoint_every", "must be at least 1"));
        }
        self.train_config().validate().map_err(|e| prefix_replace("bottleneck.", "train.", e))?;

        let s = &self.sweep;
        if s.workers == 0 {
            return Err(field("sweep.workers", "must be at least 1"));
        }
        for (name, empty) in [
            ("kinds", s.kinds.is_empty()),
            ("latent_sizes", s.latent_sizes.is_empty()),
            ("p_globals", s.p_globals.is_empty()),
            ("mixes", s.mixes.is_empty()),
        ] {
            if empty {
                return Err(field(&format!("sweep.{name}"), "must list at least one value"));
            }
        }
        let max_nb = self.train.target_size.values().copied().max().unwrap_or(0);
        for (i, &n_l) in s.latent_sizes.iter().enumerate() {
            if n_l < max_nb.max(1) {
                return Err(field(
                    &format!("sweep.latent_sizes[{i}]"),
                    format!("{n_l} is below the largest target size {max_nb}"),
                ));
            }
        }
        for (i, &p) in s.p_globals.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(field(&format!("sweep.p_globals[{i}]"), format!("{p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    pub fn train_corpus_seed(&self) -> u64 {
        derive_seed(self.seed, "corpus/train")
    }

    pub fn eval_corpus_seed(&self) -> u64 {
        derive_seed(self.seed, "corpus/eval")
    }

    pub fn bottleneck(&self) -> BottleneckConfig {
        BottleneckConfig {
            kind: self.train.kind,
            latent_size: self.train.latent_size,
            target_size: self.train.target_size.clone(),
            p_global: self.train.p_global,
            rescale_kept: self.train.rescale_kept,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            bottleneck: self.bottleneck(),
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            steps: t.steps,
            batch_frames: t.batch_frames,
            seed: t.seed.unwrap_or_else(|| derive_seed(self.seed, "train")),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden_width: self.model.hidden_width,
            hidden_layers: self.model.hidden_layers,
            context: self.model.context,
            ..ModelConfig::new(&self.corpus.params, self.train.latent_size)
        }
    }
}

fn prefix(path: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{path}.{}", m.trim_start_matches("gen."))),
        other => other,
    }
}

fn prefix_replace(from: &str, to: &str, e: Error) -> Error {
    match e {
        Error::Config(m) if m.starts_with(from) => Error::Config(format!("{to}{}", &m[from.len()..])),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\nrun_id = \"t\"\nseed = 3\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.corpus.params, GenParams::default());
        assert_eq!(c.train.latent_size, 16);
        assert_eq!(c.sweep.kinds.len(), 3);
        let again = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn seeds_are_distinct() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        let seeds = [c.train_corpus_seed(), c.eval_corpus_seed(), c.train_config().seed];
        assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2] && seeds[0] != seeds[2]);
    }

    #[test]
    fn rejects_values_with_field_paths() {
        let cases = [
            ("[train]\np_global = 1.5\n", "train.p_global"),
            ("[sweep]\np_globals = [0.0, 2.0]\n", "sweep.p_globals[1]"),
            ("[sweep]\nlatent_sizes = [4]\n", "sweep.latent_sizes[0]"),
            ("[corpus]\nn_samples = 0\n", "corpus.n_samples"),
            ("[train]\nlr = 0.0\n", "train.lr"),
            ("[eval.metrics]\nwindow = -1.0\n", "eval.metrics.window"),
            ("[corpus.params]\nunvoiced_fraction = 1.5\n", "corpus.params.unvoiced_fraction"),
        ];
        for (extra, path) in cases {
            let err = ExperimentConfig::parse(&format!("{MINIMAL}{extra}")).unwrap_err();
            assert!(err.to_string().contains(path), "{extra:?} -> {err}");
        }
        assert!(ExperimentConfig::parse("schema_version = 2\nrun_id = \"t\"\nseed = 1\n").is_err());
        assert!(ExperimentConfig::parse(&format!("{MINIMAL}bogus = 1\n")).is_err());
        assert!(ExperimentConfig::parse(&format!("{MINIMAL}[train]\nkind = \"vq\"\n")).is_err());
    }
}
