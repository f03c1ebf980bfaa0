//! Incremental scoring for decoders: per-frame projections are computed once per
//! utterance and label-side states are advanced one token at a time. Cell
//! log-probabilities are bit-identical to the corresponding lattice entries.

use crate::error::{invalid, Result};
use crate::models::blocks::{linear, recurrence_initial, recurrence_step};
use crate::models::{Arch, ModelBundle};
use crate::numerics::{log_softmax_row, sigmoid, tanh, Tensor};

/// Per-utterance acoustic side of the joint.
#[derive(Debug, Clone)]
pub struct AcousticCache {
    arch: Arch,
    /// `joint.enc_proj` (NT) or `blank_joint.enc_proj` (factorized), `[T, D]`.
    enc_proj: Tensor,
    /// `vocab_joint.enc_proj` output: `[T, V]` (FNT) or `[T, D]` (IFNT).
    vocab_proj: Option<Tensor>,
}

impl AcousticCache {
    pub fn new(m: &ModelBundle, feats: &Tensor) -> Result<Self> {
        let f = crate::models::encode(m, feats)?;
        Self::from_encoded(m, &f)
    }

    /// Builds the cache from encoder outputs `[T, enc_width]`.
    pub fn from_encoded(m: &ModelBundle, f: &Tensor) -> Result<Self> {
        m.require_arch(&[Arch::Nt, Arch::Fnt, Arch::Ifnt], "acoustic cache")?;
        let p = &m.params;
        let (enc_proj, vocab_proj) = match m.arch() {
            Arch::Nt => (linear(p, "joint.enc_proj", f)?, None),
            _ => (
                linear(p, "blank_joint.enc_proj", f)?,
                Some(linear(p, "vocab_joint.enc_proj", f)?),
            ),
        };
        Ok(AcousticCache {
            arch: m.arch(),
            enc_proj,
            vocab_proj,
        })
    }

    pub fn frames(&self) -> usize {
        self.enc_proj.rows()
    }

    /// `log P(. | t, state)` over `V+1` classes (blank last).
    pub fn cell_logprobs(&self, m: &ModelBundle, t: usize, state: &LabelState) -> Result<Vec<f64>> {
        if m.arch() != self.arch {
            return invalid(format!("cache built for {} used with a {} model", self.arch, m.arch()));
        }
        if t >= self.frames() {
            return invalid(format!("frame {t} out of range (T = {})", self.frames()));
        }
        let p = &m.params;
        let primary = state
            .primary
            .as_ref()
            .expect("transducer states carry a primary recurrence");
        let fused = |proj: &[f64], other: &[f64]| -> Tensor {
            let d = proj.len();
            tanh(&Tensor::new(vec![1, d], proj.iter().zip(other).map(|(a, b)| a + b).collect()).expect("row"))
        };
        let fp = self.enc_proj.row(t);
        if self.arch == Arch::Nt {
            let z = fused(fp, &primary.proj);
            let mut out = linear(p, "joint.out", &z)?.into_data();
            log_softmax_row(&mut out);
            return Ok(out);
        }
        let lm = state.lm.as_ref().expect("factorized states carry the LM");
        let v = m.config.vocab_size;
        let blank = linear(p, "blank_joint.out", &fused(fp, &primary.proj))?.data()[0];
        let vp = self.vocab_proj.as_ref().expect("factorized cache").row(t);
        let mut row: Vec<f64> = if self.arch == Arch::Fnt {
            vp.iter().zip(&lm.logprobs[..v]).map(|(a, b)| a + b).collect()
        } else {
            let gp = lm.fused_proj.as_ref().expect("IFNT state carries the fusion projection");
            let mut s = linear(p, "vocab_joint.out", &fused(vp, gp))?.into_data();
            for (x, l) in s.iter_mut().zip(&lm.logprobs[..v]) {
                *x += l;
            }
            s
        };
        row.push(blank);
        log_softmax_row(&mut row);
        Ok(row)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Recurrence {
    hidden: Vec<f64>,
    /// Joint-side projection of `hidden`.
    proj: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct LmState {
    hidden: Vec<f64>,
    /// `V+1` log-probabilities (end-of-sequence last).
    logprobs: Vec<f64>,
    /// IFNT only: `vocab_joint.lm_proj(sigmoid(hidden))`.
    fused_proj: Option<Vec<f64>>,
}

/// Label-side state after consuming a token prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelState {
    primary: Option<Recurrence>,
    lm: Option<LmState>,
}

fn row_tensor(v: &[f64]) -> Tensor {
    Tensor::new(vec![1, v.len()], v.to_vec()).expect("row")
}

impl LabelState {
    /// State after the start-of-sequence symbol (empty prefix).
    pub fn start(m: &ModelBundle) -> Result<Self> {
        let init = recurrence_initial(&m.config);
        Self::step_from(m, &init, init.as_slice(), m.config.sos_id())
    }

    /// State after additionally consuming `token`.
    pub fn advance(&self, m: &ModelBundle, token: usize) -> Result<Self> {
        if token >= m.config.vocab_size {
            return invalid(format!("token id {token} outside [0, {})", m.config.vocab_size));
        }
        let primary = self.primary.as_ref().map(|r| r.hidden.as_slice());
        let lm = self.lm.as_ref().map(|l| l.hidden.as_slice());
        let empty = Vec::new();
        Self::step_from(m, primary.unwrap_or(&empty), lm.unwrap_or(&empty), token)
    }

    fn step_from(m: &ModelBundle, primary: &[f64], lm: &[f64], token: usize) -> Result<Self> {
        let p = &m.params;
        let primary = match m.arch() {
            Arch::Nt => {
                let hidden = recurrence_step(p, "predictor", primary, token)?;
                let proj = linear(p, "joint.pred_proj", &row_tensor(&hidden))?.into_data();
                Some(Recurrence { hidden, proj })
            }
            Arch::Fnt | Arch::Ifnt => {
                let hidden = recurrence_step(p, "blank_decoder", primary, token)?;
                let proj = linear(p, "blank_joint.pred_proj", &row_tensor(&hidden))?.into_data();
                Some(Recurrence { hidden, proj })
            }
            Arch::Lm => None,
        };
        let lm = if m.arch().has_vocab_lm() {
            let hidden = recurrence_step(p, "vocab_lm", lm, token)?;
            let h = row_tensor(&hidden);
            let mut logprobs = linear(p, "vocab_lm.out", &h)?.into_data();
            log_softmax_row(&mut logprobs);
            let fused_proj = if m.arch() == Arch::Ifnt {
                Some(linear(p, "vocab_joint.lm_proj", &sigmoid(&h))?.into_data())
            } else {
                None
            };
            Some(LmState {
                hidden,
                logprobs,
                fused_proj,
            })
        } else {
            None
        };
        Ok(LabelState { primary, lm })
    }

    /// Vocabulary-decoder log-probabilities over `V+1` classes (end-of-sequence last),
    /// for architectures that have one.
    pub fn lm_logprobs(&self) -> Option<&[f64]> {
        self.lm.as_ref().map(|l| l.logprobs.as_slice())
    }
}
