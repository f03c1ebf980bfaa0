//! The three transducer architectures (standard, factorized, improved factorized)
//! plus the standalone language model used for shallow fusion.
//!
//! All architectures share the same frame-wise feed-forward encoder. Decoders are
//! single-layer tanh recurrences over the label history whose first input is a
//! start-of-sequence symbol (embedding row `V`).
//!
//! Parameter subtrees:
//!
//! | subtree           | NT | FNT | IFNT | LM |
//! |-------------------|----|-----|------|----|
//! | `encoder.*`       | x  | x   | x    |    |
//! | `predictor.*`     | x  |     |      |    |
//! | `joint.*`         | x  |     |      |    |
//! | `blank_decoder.*` |    | x   | x    |    |
//! | `blank_joint.*`   |    | x   | x    |    |
//! | `vocab_lm.*`      |    | x   | x    | x  |
//! | `vocab_joint.*`   |    | x   | x    |    |

mod blocks;
mod bundle;
mod forward;
mod state;

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

pub use bundle::{ModelBundle, SubtreeCount};
pub use forward::{
    compute_loss, compute_loss_no_grad, encode, joint_fnt, joint_ifnt, joint_nt, lattice,
    lm_sentence_loss, vocab_lm_logprobs, LossBreakdown, VocabLmOutput,
};
pub use state::{AcousticCache, LabelState};
pub(crate) use forward::compute_loss_with_input_grad;

/// Prefix of every parameter that belongs to the vocabulary decoder (internal LM).
pub const VOCAB_LM_PREFIX: &str = "vocab_lm.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    /// Standard neural transducer.
    Nt,
    /// Factorized transducer.
    Fnt,
    /// Improved factorized transducer.
    Ifnt,
    /// Standalone vocabulary LM (external LM for shallow fusion).
    Lm,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Nt => "nt",
            Arch::Fnt => "fnt",
            Arch::Ifnt => "ifnt",
            Arch::Lm => "lm",
        }
    }

    /// Whether the architecture owns a vocabulary decoder that behaves as an LM.
    pub fn has_vocab_lm(self) -> bool {
        matches!(self, Arch::Fnt | Arch::Ifnt | Arch::Lm)
    }

    pub fn is_transducer(self) -> bool {
        !matches!(self, Arch::Lm)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nt" => Ok(Arch::Nt),
            "fnt" => Ok(Arch::Fnt),
            "ifnt" => Ok(Arch::Ifnt),
            "lm" => Ok(Arch::Lm),
            other => invalid(format!("unknown architecture `{other}` (expected nt|fnt|ifnt|lm)")),
        }
    }
}

/// Architecture and dimensions of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Vocabulary size excluding blank (and excluding the LM's end-of-sequence class).
    pub vocab_size: usize,
    /// Joint dimension `D`.
    pub joint_dim: usize,
    pub feat_dim: usize,
    pub enc_width: usize,
    pub enc_layers: usize,
    pub dec_width: usize,
    pub embed_dim: usize,
    /// Weight of the LM cross-entropy term in the training objective.
    pub lambda_f: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Ifnt,
            vocab_size: 30,
            joint_dim: 32,
            feat_dim: 12,
            enc_width: 32,
            enc_layers: 1,
            dec_width: 32,
            embed_dim: 16,
            lambda_f: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return invalid(format!("vocab size must be >= 2, got {}", self.vocab_size));
        }
        if self.joint_dim < 1 {
            return invalid("joint dimension must be >= 1");
        }
        if self.arch.is_transducer() && (self.feat_dim == 0 || self.enc_width == 0 || self.enc_layers == 0) {
            return invalid("encoder dimensions must be positive");
        }
        if self.dec_width == 0 || self.embed_dim == 0 {
            return invalid("decoder dimensions must be positive");
        }
        if !(self.lambda_f >= 0.0 && self.lambda_f.is_finite()) {
            return invalid(format!("lambda_f must be >= 0, got {}", self.lambda_f));
        }
        Ok(())
    }

    /// Blank index in the lattice class axis.
    pub fn blank_id(&self) -> usize {
        self.vocab_size
    }

    /// End-of-sequence index in the LM class axis.
    pub fn eos_id(&self) -> usize {
        self.vocab_size
    }

    /// Start-of-sequence row in decoder embeddings.
    pub fn sos_id(&self) -> usize {
        self.vocab_size
    }

    /// Key/value view used by checkpoint metadata.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("arch", self.arch.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("joint_dim", self.joint_dim.to_string()),
            ("feat_dim", self.feat_dim.to_string()),
            ("enc_width", self.enc_width.to_string()),
            ("enc_layers", self.enc_layers.to_string()),
            ("dec_width", self.dec_width.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            // exact bits so metadata round-trips losslessly
            ("lambda_f", format!("{:?}", self.lambda_f)),
        ]
    }

    pub fn from_lookup(get: impl Fn(&str) -> Result<String>) -> Result<Self> {
        fn parse<T: FromStr>(key: &str, v: String) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Invalid(format!("bad value `{v}` for `{key}`")))
        }
        let cfg = ModelConfig {
            arch: get("arch")?.parse()?,
            vocab_size: parse("vocab_size", get("vocab_size")?)?,
            joint_dim: parse("joint_dim", get("joint_dim")?)?,
            feat_dim: parse("feat_dim", get("feat_dim")?)?,
            enc_width: parse("enc_width", get("enc_width")?)?,
            enc_layers: parse("enc_layers", get("enc_layers")?)?,
            dec_width: parse("dec_width", get("dec_width")?)?,
            embed_dim: parse("embed_dim", get("embed_dim")?)?,
            lambda_f: parse("lambda_f", get("lambda_f")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Name of the first differing field, if any.
    pub fn first_difference(&self, other: &ModelConfig) -> Option<(String, String, String)> {
        self.to_pairs()
            .into_iter()
            .zip(other.to_pairs())
            .find(|((_, a), (_, b))| a != b)
            .map(|((k, a), (_, b))| (k.to_string(), a, b))
    }
}
