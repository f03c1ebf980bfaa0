//! Experiment configuration: one TOML file, dotted-key overrides, and a resolved copy
//! written next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use transducer_core::adaptation::{AdaptConfig, FreezeList};
use transducer_core::data::{SyntheticParams, TokenUnit};
use transducer_core::models::{Arch, ModelConfig};
use transducer_core::training::TrainConfig;
use transducer_core::OptimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub adapt: AdaptSection,
    pub lm: LmSection,
    pub decode: DecodeSection,
    pub average: AverageSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Vocabulary size including `<unk>`.
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub noise: f64,
    pub pair_separation: f64,
    pub prototype_scale: f64,
    pub len_min: usize,
    pub len_max: usize,
    pub concentration: f64,
    /// Language shift of the target domain, 0 (identical) to 1.
    pub shift: f64,
    pub source_train: usize,
    pub source_dev: usize,
    pub target_text: usize,
    pub target_dev: usize,
    pub target_test: usize,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub arch: String,
    pub joint_dim: usize,
    pub enc_width: usize,
    pub enc_layers: usize,
    pub dec_width: usize,
    pub embed_dim: usize,
    pub lambda_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptSection {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Gitignore-style; the last matching pattern wins and `!` marks trainable.
    pub freeze: Vec<String>,
}

/// Standalone external LM training (for shallow fusion).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmSection {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    /// `greedy` or `beam`.
    pub search: String,
    pub beam: usize,
    pub lambda_t: f64,
    /// Hypotheses per utterance written to `nbest.tsv` (beam search only).
    pub nbest: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AverageSection {
    /// Average the last N checkpoints of `paths.checkpoint_dir`.
    pub last: usize,
}

/// Inputs. Unset entries fall back to the standard layout under `data_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub manifest: Option<PathBuf>,
    pub text: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub external_lm: Option<PathBuf>,
    pub hyp: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            adapt: AdaptSection::default(),
            lm: LmSection::default(),
            decode: DecodeSection::default(),
            average: AverageSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            vocab_size: 30,
            feat_dim: 12,
            frames_min: 3,
            frames_max: 5,
            noise: 0.5,
            pair_separation: 1.0,
            prototype_scale: 1.0,
            len_min: 4,
            len_max: 8,
            concentration: 0.2,
            shift: 0.8,
            source_train: 2000,
            source_dev: 200,
            target_text: 2000,
            target_dev: 300,
            target_test: 300,
            unit: "word".into(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            arch: "ifnt".into(),
            joint_dim: 32,
            enc_width: 16,
            enc_layers: 1,
            dec_width: 32,
            embed_dim: 16,
            lambda_f: 0.3,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 2000,
            batch_size: 8,
            learning_rate: 3e-3,
            warmup_steps: 0,
            clip_norm: 5.0,
            checkpoint_every: 100,
        }
    }
}

impl Default for AdaptSection {
    fn default() -> Self {
        AdaptSection {
            steps: 150,
            batch_size: 16,
            learning_rate: 5e-4,
            clip_norm: 5.0,
            freeze: FreezeList::default().patterns().to_vec(),
        }
    }
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection {
            steps: 1500,
            batch_size: 16,
            learning_rate: 3e-3,
            clip_norm: 5.0,
        }
    }
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            search: "beam".into(),
            beam: 5,
            lambda_t: 0.1,
            nbest: 1,
        }
    }
}

impl Default for AverageSection {
    fn default() -> Self {
        AverageSection { last: 5 }
    }
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            data_dir: PathBuf::from("data"),
            manifest: None,
            text: None,
            checkpoint: None,
            checkpoint_dir: None,
            checkpoints: Vec::new(),
            external_lm: None,
            hyp: None,
            reference: None,
        }
    }
}

/// Decoding strategy resolved from `[decode]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Search {
    Greedy,
    Beam(usize),
}

impl ExperimentConfig {
    /// Reads `path` (if given), applies `key=value` overrides, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| anyhow!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.lambda_f < 0.0 || self.decode.lambda_t < 0.0 {
            bail!("lambda_f and lambda_t must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.data.shift) {
            bail!("data.shift must lie in [0, 1]");
        }
        self.arch()?;
        self.unit()?;
        self.search()?;
        FreezeList::new(&self.adapt.freeze)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the resolved config to `{out_dir}/config.toml`.
    pub fn write_resolved(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir)?;
        fs::write(self.out_dir.join("config.toml"), self.to_toml())?;
        Ok(())
    }

    pub fn arch(&self) -> Result<Arch> {
        Ok(self.model.arch.parse::<Arch>()?)
    }

    pub fn unit(&self) -> Result<TokenUnit> {
        Ok(self.data.unit.parse::<TokenUnit>()?)
    }

    pub fn search(&self) -> Result<Search> {
        match self.decode.search.as_str() {
            "greedy" => Ok(Search::Greedy),
            "beam" if self.decode.beam >= 1 => Ok(Search::Beam(self.decode.beam)),
            "beam" => bail!("decode.beam must be >= 1"),
            other => bail!("decode.search must be `greedy` or `beam`, got `{other}`"),
        }
    }

    pub fn synthetic_params(&self) -> SyntheticParams {
        let d = &self.data;
        SyntheticParams {
            vocab_size: d.vocab_size,
            feat_dim: d.feat_dim,
            frames_min: d.frames_min,
            frames_max: d.frames_max,
            noise: d.noise,
            pair_separation: d.pair_separation,
            prototype_scale: d.prototype_scale,
            len_min: d.len_min,
            len_max: d.len_max,
            concentration: d.concentration,
            seed: derive_seed(self.seed, "domain"),
        }
    }

    pub fn model_config(&self, arch: Arch, vocab_size: usize, feat_dim: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            arch,
            vocab_size,
            joint_dim: m.joint_dim,
            feat_dim,
            enc_width: m.enc_width,
            enc_layers: m.enc_layers,
            dec_width: m.dec_width,
            embed_dim: m.embed_dim,
            lambda_f: m.lambda_f,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            optim: OptimConfig {
                learning_rate: t.learning_rate,
                warmup_steps: t.warmup_steps,
                seed: derive_seed(self.seed, "train"),
                ..OptimConfig::default()
            },
            clip_norm: t.clip_norm,
            checkpoint_every: t.checkpoint_every,
        }
    }

    pub fn adapt_config(&self) -> Result<AdaptConfig> {
        let a = &self.adapt;
        Ok(AdaptConfig {
            steps: a.steps,
            batch_size: a.batch_size,
            optim: OptimConfig {
                learning_rate: a.learning_rate,
                seed: derive_seed(self.seed, "adapt"),
                ..OptimConfig::default()
            },
            clip_norm: a.clip_norm,
            freeze: FreezeList::new(&a.freeze)?,
        })
    }

    pub fn lm_config(&self) -> AdaptConfig {
        let l = &self.lm;
        AdaptConfig {
            steps: l.steps,
            batch_size: l.batch_size,
            optim: OptimConfig {
                learning_rate: l.learning_rate,
                seed: derive_seed(self.seed, "lm"),
                ..OptimConfig::default()
            },
            clip_norm: l.clip_norm,
            freeze: FreezeList::new(&[] as &[&str]).expect("empty list"),
        }
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }

    pub fn data_path(&self, name: &str) -> PathBuf {
        self.paths.data_dir.join(name)
    }
}

/// Independent per-stage seed: FNV-1a over the tag, mixed with the master seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Applies `a.b.c=value`. The value is parsed as a TOML value when possible and
/// taken as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = parse_value(raw);
    let mut parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is malformed");
    }
    let last = parts.pop().expect("non-empty key");
    let mut node = table;
    for p in parts {
        node = node
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{p}` is not a section"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
