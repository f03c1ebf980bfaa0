use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::models::{Arch, ModelConfig};
use crate::numerics::{Container, ParamStore, Tensor};

/// Architecture config plus parameters.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Free-form metadata carried through checkpoints (e.g. averaging sources).
    pub extra: BTreeMap<String, String>,
}

impl PartialEq for ModelBundle {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.params.step() == other.params.step()
            && self.extra == other.extra
    }
}

/// Scalar parameter count of one top-level subtree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtreeCount {
    pub subtree: String,
    pub scalars: usize,
}

enum Init {
    Xavier,
    Embedding,
    Zero,
}

impl ModelBundle {
    /// Fresh parameters. Each tensor draws from its own stream seeded by
    /// `(seed, name)`, so shared subtrees initialize identically across architectures.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, init) in layout(&config) {
            let value = init_tensor(&shape, &init, seed, &name);
            params.insert(name, value)?;
        }
        Ok(ModelBundle {
            config,
            params,
            extra: BTreeMap::new(),
        })
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn step(&self) -> u64 {
        self.params.step()
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Scalar counts grouped by top-level subtree, in name order.
    pub fn param_report(&self) -> Vec<SubtreeCount> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for (name, p) in self.params.iter() {
            let subtree = name.split('.').next().unwrap_or(name).to_string();
            *counts.entry(subtree).or_default() += p.value.len();
        }
        counts
            .into_iter()
            .map(|(subtree, scalars)| SubtreeCount { subtree, scalars })
            .collect()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        for (k, v) in self.config.to_pairs() {
            c.metadata.insert(format!("model.{k}"), v);
        }
        c.metadata.insert("step".into(), self.step().to_string());
        c.metadata.insert("kind".into(), "model".into());
        for (k, v) in &self.extra {
            c.metadata.insert(format!("extra.{k}"), v.clone());
        }
        for (name, p) in self.params.iter() {
            c.tensors.insert(name.to_string(), p.value.clone());
        }
        c
    }

    pub fn from_container(c: &Container, origin: &str) -> Result<Self> {
        let fmt_err = |reason: String| Error::Format {
            path: origin.to_string(),
            reason,
        };
        let config = ModelConfig::from_lookup(|k| {
            c.metadata
                .get(&format!("model.{k}"))
                .cloned()
                .ok_or_else(|| fmt_err(format!("missing metadata `model.{k}`")))
        })?;
        let step: u64 = c
            .meta("step")
            .map_err(|_| fmt_err("missing step".into()))?
            .parse()
            .map_err(|_| fmt_err("bad step".into()))?;
        let expected = layout(&config);
        if expected.len() != c.tensors.len() {
            return Err(fmt_err(format!(
                "expected {} tensors for arch {}, found {}",
                expected.len(),
                config.arch,
                c.tensors.len()
            )));
        }
        let mut params = ParamStore::new();
        for (name, shape, _) in expected {
            let t = c
                .tensors
                .get(&name)
                .ok_or_else(|| fmt_err(format!("missing tensor `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "checkpoint tensor",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
            params.insert(name, t.clone())?;
        }
        params.set_step(step);
        let extra = c
            .metadata
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("extra.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(ModelBundle {
            config,
            params,
            extra,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let c = Container::load(path)?;
        Self::from_container(&c, &path.display().to_string())
    }

    /// Rejects the bundle unless its architecture is one of `allowed`.
    pub fn require_arch(&self, allowed: &[Arch], what: &str) -> Result<()> {
        if allowed.contains(&self.arch()) {
            Ok(())
        } else {
            let names: Vec<&str> = allowed.iter().map(|a| a.as_str()).collect();
            Err(Error::Architecture(format!(
                "{what} requires arch {}, model is {}",
                names.join("|"),
                self.arch()
            )))
        }
    }
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (v, d, h, e) = (cfg.vocab_size, cfg.joint_dim, cfg.dec_width, cfg.embed_dim);
    let enc = cfg.enc_width;
    let mut out = Vec::new();
    let linear = |out: &mut Vec<_>, prefix: &str, fan_in: usize, fan_out: usize| {
        out.push((format!("{prefix}.weight"), vec![fan_in, fan_out], Init::Xavier));
        out.push((format!("{prefix}.bias"), vec![fan_out], Init::Zero));
    };
    let recurrence = |out: &mut Vec<_>, prefix: &str| {
        out.push((format!("{prefix}.embedding"), vec![v + 1, e], Init::Embedding));
        out.push((format!("{prefix}.rnn.weight"), vec![h + e, h], Init::Xavier));
        out.push((format!("{prefix}.rnn.bias"), vec![h], Init::Zero));
    };

    if cfg.arch.is_transducer() {
        for i in 0..cfg.enc_layers {
            let fan_in = if i == 0 { cfg.feat_dim } else { enc };
            linear(&mut out, &format!("encoder.layer{i}"), fan_in, enc);
        }
    }
    match cfg.arch {
        Arch::Nt => {
            recurrence(&mut out, "predictor");
            linear(&mut out, "joint.enc_proj", enc, d);
            linear(&mut out, "joint.pred_proj", h, d);
            linear(&mut out, "joint.out", d, v + 1);
        }
        Arch::Fnt | Arch::Ifnt => {
            recurrence(&mut out, "blank_decoder");
            linear(&mut out, "blank_joint.enc_proj", enc, d);
            linear(&mut out, "blank_joint.pred_proj", h, d);
            linear(&mut out, "blank_joint.out", d, 1);
            recurrence(&mut out, "vocab_lm");
            linear(&mut out, "vocab_lm.out", h, v + 1);
            if cfg.arch == Arch::Fnt {
                linear(&mut out, "vocab_joint.enc_proj", enc, v);
            } else {
                linear(&mut out, "vocab_joint.enc_proj", enc, d);
                linear(&mut out, "vocab_joint.lm_proj", h, d);
                linear(&mut out, "vocab_joint.out", d, v);
            }
        }
        Arch::Lm => {
            recurrence(&mut out, "vocab_lm");
            linear(&mut out, "vocab_lm.out", h, v + 1);
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the model seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn init_tensor(shape: &[usize], init: &Init, seed: u64, name: &str) -> Tensor {
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
    let data = match init {
        Init::Zero => vec![0.0; n],
        Init::Xavier => {
            let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            let dist = Uniform::new(-limit, limit).expect("valid range");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        }
        Init::Embedding => {
            let dist = Normal::new(0.0, 0.5).expect("valid sigma");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        }
    };
    Tensor::new(shape.to_vec(), data).expect("layout shapes are consistent")
}
