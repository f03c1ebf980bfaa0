//! Lattice construction for each architecture and the training objective.
//!
//! Lattice class layout is `[v_0 .. v_{V-1}, blank]`. For the factorized models the
//! vocabulary scores and the scalar blank logit are concatenated and normalized
//! with a single log-softmax over the `V+1` classes.

use crate::error::{invalid, Error, Result};
use crate::models::blocks::{
    encoder_backward, encoder_forward, linear, linear_backward, recurrence_backward,
    recurrence_forward, EncoderCache, RecurrenceCache,
};
use crate::models::{Arch, ModelBundle, ModelConfig};
use crate::numerics::{
    broadcast_add, broadcast_add_backward, log_softmax, log_softmax_backward, sigmoid,
    sigmoid_backward, tanh, tanh_backward, ParamStore, Tensor,
};
use crate::rnnt_loss::{loss_and_grad, EmissionLattice};

/// Components of the training objective for one utterance (or a sum over a batch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Transducer loss, nats.
    pub j_t: f64,
    /// Teacher-forced LM cross-entropy including end-of-sequence, nats (0 for NT).
    pub lm_ce: f64,
    /// `j_t + lambda_f * lm_ce`.
    pub j_f: f64,
    pub lambda_f: f64,
}

impl LossBreakdown {
    pub fn new(j_t: f64, lm_ce: f64, lambda_f: f64) -> Self {
        LossBreakdown {
            j_t,
            lm_ce,
            j_f: j_t + lambda_f * lm_ce,
            lambda_f,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.j_t.is_finite() && self.lm_ce.is_finite() && self.j_f.is_finite()
    }

    /// Component-wise sum (same `lambda_f`).
    pub fn add(&self, other: &LossBreakdown) -> LossBreakdown {
        LossBreakdown {
            j_t: self.j_t + other.j_t,
            lm_ce: self.lm_ce + other.lm_ce,
            j_f: self.j_f + other.j_f,
            lambda_f: self.lambda_f,
        }
    }

    pub fn scaled(&self, factor: f64) -> LossBreakdown {
        LossBreakdown {
            j_t: self.j_t * factor,
            lm_ce: self.lm_ce * factor,
            j_f: self.j_f * factor,
            lambda_f: self.lambda_f,
        }
    }
}

fn check_feats(cfg: &ModelConfig, feats: &Tensor) -> Result<()> {
    if feats.shape().len() != 2 || feats.shape()[1] != cfg.feat_dim {
        return Err(Error::Shape {
            op: "encode",
            left: feats.shape().to_vec(),
            right: vec![cfg.feat_dim],
        });
    }
    if feats.shape()[0] == 0 {
        return invalid("cannot encode an empty input (T = 0)");
    }
    Ok(())
}

fn check_labels(cfg: &ModelConfig, labels: &[usize]) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= cfg.vocab_size) {
        return invalid(format!("token id {bad} outside [0, {})", cfg.vocab_size));
    }
    Ok(())
}

/// Per-frame acoustic representations `f_t`, `[T, enc_width]`.
pub fn encode(m: &ModelBundle, feats: &Tensor) -> Result<Tensor> {
    m.require_arch(&[Arch::Nt, Arch::Fnt, Arch::Ifnt], "encode")?;
    check_feats(&m.config, feats)?;
    Ok(encoder_forward(&m.params, &m.config, feats)?.output().clone())
}

/// Output of the vocabulary decoder for a token prefix.
#[derive(Debug, Clone)]
pub struct VocabLmOutput {
    /// `[U+1, V]`: row `u` is `log P_LM(. | y_1..y_u)` restricted to the vocabulary
    /// and renormalized (end-of-sequence excluded).
    pub logprobs: Tensor,
    /// `[U+1, V+1]`: the full distribution including end-of-sequence (last column).
    /// The lattice consumes the first `V` columns of this as-is.
    pub with_eos: Tensor,
    /// `[U+1, dec_width]` recurrence states.
    pub hidden: Tensor,
}

/// Runs the vocabulary decoder (internal LM) over `prefix`.
pub fn vocab_lm_logprobs(m: &ModelBundle, prefix: &[usize]) -> Result<VocabLmOutput> {
    m.require_arch(&[Arch::Fnt, Arch::Ifnt, Arch::Lm], "vocabulary LM")?;
    check_labels(&m.config, prefix)?;
    let lm = LmForward::run(&m.params, &m.config, prefix)?;
    let logprobs = log_softmax(&lm.vocab_scores(m.config.vocab_size));
    Ok(VocabLmOutput {
        logprobs,
        with_eos: lm.logprobs,
        hidden: lm.hidden,
    })
}

struct LmForward {
    rec: RecurrenceCache,
    hidden: Tensor,
    logprobs: Tensor,
}

impl LmForward {
    fn run(params: &ParamStore, cfg: &ModelConfig, labels: &[usize]) -> Result<Self> {
        let rec = recurrence_forward(params, "vocab_lm", cfg, labels)?;
        let hidden = rec.hidden();
        let logprobs = log_softmax(&linear(params, "vocab_lm.out", &hidden)?);
        Ok(LmForward {
            rec,
            hidden,
            logprobs,
        })
    }

    /// First `V` columns (end-of-sequence dropped, no renormalization).
    fn vocab_scores(&self, v: usize) -> Tensor {
        take_cols(&self.logprobs, v)
    }

    /// Backprop `d_logprobs[U+1, V+1]` (plus an optional extra hidden-state gradient).
    fn backward(
        &self,
        params: &mut ParamStore,
        d_logprobs: &Tensor,
        d_hidden_extra: Option<&Tensor>,
    ) -> Result<()> {
        let d_logits = log_softmax_backward(&self.logprobs, d_logprobs);
        let mut d_hidden = linear_backward(params, "vocab_lm.out", &self.hidden, &d_logits)?;
        if let Some(extra) = d_hidden_extra {
            d_hidden.add_assign(extra)?;
        }
        recurrence_backward(params, "vocab_lm", &self.rec, &d_hidden);
        Ok(())
    }
}

/// Teacher-forced LM cross-entropy of `labels` followed by end-of-sequence.
fn lm_ce(lm: &LmForward, labels: &[usize], eos: usize) -> f64 {
    labels
        .iter()
        .copied()
        .chain(std::iter::once(eos))
        .enumerate()
        .map(|(u, y)| -lm.logprobs.get2(u, y))
        .sum()
}

fn lm_ce_grad(lm: &LmForward, labels: &[usize], eos: usize, weight: f64) -> Tensor {
    let mut d = Tensor::zeros(lm.logprobs.shape());
    for (u, y) in labels.iter().copied().chain(std::iter::once(eos)).enumerate() {
        d.row_mut(u)[y] -= weight;
    }
    d
}

/// Sentence-level LM loss `-log P_LM(labels, EOS)` of a model with a vocabulary
/// decoder; accumulates gradients into `vocab_lm.*` when `with_grad` is set.
pub fn lm_sentence_loss(m: &mut ModelBundle, labels: &[usize], with_grad: bool) -> Result<f64> {
    m.require_arch(&[Arch::Fnt, Arch::Ifnt, Arch::Lm], "LM loss")?;
    check_labels(&m.config, labels)?;
    let eos = m.config.eos_id();
    let lm = LmForward::run(&m.params, &m.config, labels)?;
    let ce = lm_ce(&lm, labels, eos);
    if with_grad {
        let d = lm_ce_grad(&lm, labels, eos, 1.0);
        lm.backward(&mut m.params, &d, None)?;
    }
    Ok(ce)
}

fn take_cols(x: &Tensor, n: usize) -> Tensor {
    let (rows, _) = x.as_matrix();
    let data = (0..rows).flat_map(|r| x.row(r)[..n].iter().copied()).collect();
    Tensor::new(vec![rows, n], data).expect("column slice")
}

/// Concatenates `[scores | blank_logit]` and log-normalizes each row.
fn concat_normalize(scores: &Tensor, blank_logit: &Tensor) -> Tensor {
    let (rows, v) = scores.as_matrix();
    let mut data = Vec::with_capacity(rows * (v + 1));
    for r in 0..rows {
        data.extend_from_slice(scores.row(r));
        data.push(blank_logit.data()[r]);
    }
    log_softmax(&Tensor::new(vec![rows, v + 1], data).expect("concat"))
}

fn into_lattice(logp: Tensor, t_len: usize, target: &[usize]) -> Result<EmissionLattice> {
    let k = logp.cols();
    let logp = logp.reshape(&[t_len, target.len() + 1, k])?;
    EmissionLattice::new_unnormalized(logp, target.to_vec())
}

fn check_rows(op: &'static str, x: &Tensor, rows: usize, cols: usize) -> Result<()> {
    if x.shape() != [rows, cols] {
        return Err(Error::Shape {
            op,
            left: x.shape().to_vec(),
            right: vec![rows, cols],
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// standard transducer joint

struct NtJoint {
    fp: Tensor,
    gp: Tensor,
    z: Tensor,
    logp: Tensor,
}

impl NtJoint {
    fn forward(params: &ParamStore, f: &Tensor, g: &Tensor) -> Result<Self> {
        let fp = linear(params, "joint.enc_proj", f)?;
        let gp = linear(params, "joint.pred_proj", g)?;
        let z = tanh(&broadcast_add(&fp, &gp)?);
        let logp = log_softmax(&linear(params, "joint.out", &z)?);
        Ok(NtJoint { fp, gp, z, logp })
    }

    /// Returns `(df, dg)`.
    fn backward(
        &self,
        params: &mut ParamStore,
        f: &Tensor,
        g: &Tensor,
        d_logp: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let d_logits = log_softmax_backward(&self.logp, d_logp);
        let dz = linear_backward(params, "joint.out", &self.z, &d_logits)?;
        let d_pre = tanh_backward(&self.z, &dz);
        let (dfp, dgp) = broadcast_add_backward(&d_pre, self.fp.rows(), self.gp.rows());
        let df = linear_backward(params, "joint.enc_proj", f, &dfp)?;
        let dg = linear_backward(params, "joint.pred_proj", g, &dgp)?;
        Ok((df, dg))
    }
}

/// Standard transducer joint: project `f` and `g` to `D`, add, tanh, project to
/// `V+1`, log-softmax.
pub fn joint_nt(m: &ModelBundle, f: &Tensor, g: &Tensor, target: &[usize]) -> Result<EmissionLattice> {
    m.require_arch(&[Arch::Nt], "joint_nt")?;
    check_rows("joint_nt encoder", f, f.rows(), m.config.enc_width)?;
    check_rows("joint_nt decoder", g, target.len() + 1, m.config.dec_width)?;
    let j = NtJoint::forward(&m.params, f, g)?;
    into_lattice(j.logp, f.rows(), target)
}

// ---------------------------------------------------------------------------
// blank branch shared by the factorized models

struct BlankJoint {
    fp: Tensor,
    gp: Tensor,
    z: Tensor,
    logit: Tensor,
}

impl BlankJoint {
    fn forward(params: &ParamStore, f: &Tensor, g: &Tensor) -> Result<Self> {
        let fp = linear(params, "blank_joint.enc_proj", f)?;
        let gp = linear(params, "blank_joint.pred_proj", g)?;
        let z = tanh(&broadcast_add(&fp, &gp)?);
        let logit = linear(params, "blank_joint.out", &z)?;
        Ok(BlankJoint { fp, gp, z, logit })
    }

    fn backward(
        &self,
        params: &mut ParamStore,
        f: &Tensor,
        g: &Tensor,
        d_logit: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let dz = linear_backward(params, "blank_joint.out", &self.z, d_logit)?;
        let d_pre = tanh_backward(&self.z, &dz);
        let (dfp, dgp) = broadcast_add_backward(&d_pre, self.fp.rows(), self.gp.rows());
        let df = linear_backward(params, "blank_joint.enc_proj", f, &dfp)?;
        let dg = linear_backward(params, "blank_joint.pred_proj", g, &dgp)?;
        Ok((df, dg))
    }
}

// ---------------------------------------------------------------------------
// factorized vocabulary branch: proj_V(f_t) + log P_LM

struct FntVocab {
    enc_v: Tensor,
    scores: Tensor,
}

impl FntVocab {
    fn forward(params: &ParamStore, f: &Tensor, lm_v: &Tensor) -> Result<Self> {
        let enc_v = linear(params, "vocab_joint.enc_proj", f)?;
        let scores = broadcast_add(&enc_v, lm_v)?;
        Ok(FntVocab { enc_v, scores })
    }

    /// Returns `(df, d_lm_v)`.
    fn backward(
        &self,
        params: &mut ParamStore,
        f: &Tensor,
        u_cols: usize,
        d_scores: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let (d_enc_v, d_lm) = broadcast_add_backward(d_scores, self.enc_v.rows(), u_cols);
        let df = linear_backward(params, "vocab_joint.enc_proj", f, &d_enc_v)?;
        Ok((df, d_lm))
    }
}

/// Factorized joint: blank logit from an NT-style joint with a scalar output;
/// vocabulary scores are the encoder projected to `V` plus the LM log-probabilities;
/// the two are concatenated and log-normalized.
pub fn joint_fnt(
    m: &ModelBundle,
    f: &Tensor,
    g_blank: &Tensor,
    lm_logprobs: &Tensor,
    target: &[usize],
) -> Result<EmissionLattice> {
    m.require_arch(&[Arch::Fnt], "joint_fnt")?;
    let cfg = &m.config;
    let u_cols = target.len() + 1;
    check_rows("joint_fnt encoder", f, f.rows(), cfg.enc_width)?;
    check_rows("joint_fnt blank decoder", g_blank, u_cols, cfg.dec_width)?;
    let lm_v = lm_vocab_view(lm_logprobs, u_cols, cfg.vocab_size)?;
    let blank = BlankJoint::forward(&m.params, f, g_blank)?;
    let vocab = FntVocab::forward(&m.params, f, &lm_v)?;
    into_lattice(concat_normalize(&vocab.scores, &blank.logit), f.rows(), target)
}

/// Accepts LM log-probabilities with or without the end-of-sequence column.
fn lm_vocab_view(lm_logprobs: &Tensor, u_cols: usize, v: usize) -> Result<Tensor> {
    match lm_logprobs.shape() {
        [r, c] if *r == u_cols && *c == v => Ok(lm_logprobs.clone()),
        [r, c] if *r == u_cols && *c == v + 1 => Ok(take_cols(lm_logprobs, v)),
        other => Err(Error::Shape {
            op: "LM log-probabilities",
            left: other.to_vec(),
            right: vec![u_cols, v],
        }),
    }
}

// ---------------------------------------------------------------------------
// improved factorized vocabulary branch

struct IfntVocab {
    fp: Tensor,
    squashed: Tensor,
    gp: Tensor,
    z: Tensor,
    scores: Tensor,
}

impl IfntVocab {
    fn forward(params: &ParamStore, f: &Tensor, lm_hidden: &Tensor, lm_v: &Tensor) -> Result<Self> {
        let fp = linear(params, "vocab_joint.enc_proj", f)?;
        let squashed = sigmoid(lm_hidden);
        let gp = linear(params, "vocab_joint.lm_proj", &squashed)?;
        let z = tanh(&broadcast_add(&fp, &gp)?);
        let mut scores = linear(params, "vocab_joint.out", &z)?;
        let u_cols = lm_v.rows();
        for (r, row) in scores.data_mut().chunks_mut(lm_v.cols()).enumerate() {
            for (s, l) in row.iter_mut().zip(lm_v.row(r % u_cols)) {
                *s += l;
            }
        }
        Ok(IfntVocab {
            fp,
            squashed,
            gp,
            z,
            scores,
        })
    }

    /// Returns `(df, d_lm_hidden, d_lm_v)`.
    fn backward(
        &self,
        params: &mut ParamStore,
        f: &Tensor,
        d_scores: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let (t_len, u_cols) = (self.fp.rows(), self.gp.rows());
        let v = d_scores.cols();
        let mut d_lm = Tensor::zeros(&[u_cols, v]);
        for r in 0..t_len * u_cols {
            for (a, g) in d_lm.row_mut(r % u_cols).iter_mut().zip(d_scores.row(r)) {
                *a += g;
            }
        }
        let dz = linear_backward(params, "vocab_joint.out", &self.z, d_scores)?;
        let d_pre = tanh_backward(&self.z, &dz);
        let (dfp, dgp) = broadcast_add_backward(&d_pre, t_len, u_cols);
        let df = linear_backward(params, "vocab_joint.enc_proj", f, &dfp)?;
        let d_squashed = linear_backward(params, "vocab_joint.lm_proj", &self.squashed, &dgp)?;
        let d_hidden = sigmoid_backward(&self.squashed, &d_squashed);
        Ok((df, d_hidden, d_lm))
    }
}

/// Improved factorized joint: the sigmoid-squashed LM state is projected to `D` and
/// fused with the encoder NT-style; the result is projected to `V` and the LM
/// log-probabilities are added before the shared normalization with the blank logit.
pub fn joint_ifnt(
    m: &ModelBundle,
    f: &Tensor,
    g_blank: &Tensor,
    lm_hidden: &Tensor,
    lm_logprobs: &Tensor,
    target: &[usize],
) -> Result<EmissionLattice> {
    m.require_arch(&[Arch::Ifnt], "joint_ifnt")?;
    let cfg = &m.config;
    let u_cols = target.len() + 1;
    check_rows("joint_ifnt encoder", f, f.rows(), cfg.enc_width)?;
    check_rows("joint_ifnt blank decoder", g_blank, u_cols, cfg.dec_width)?;
    check_rows("joint_ifnt LM hidden", lm_hidden, u_cols, cfg.dec_width)?;
    let lm_v = lm_vocab_view(lm_logprobs, u_cols, cfg.vocab_size)?;
    let blank = BlankJoint::forward(&m.params, f, g_blank)?;
    let vocab = IfntVocab::forward(&m.params, f, lm_hidden, &lm_v)?;
    into_lattice(concat_normalize(&vocab.scores, &blank.logit), f.rows(), target)
}

// ---------------------------------------------------------------------------
// full model

enum Branches {
    Nt {
        pred: RecurrenceCache,
        g: Tensor,
        joint: NtJoint,
    },
    Factorized {
        blank_rec: RecurrenceCache,
        g_blank: Tensor,
        blank: BlankJoint,
        lm: LmForward,
        vocab: VocabBranch,
    },
}

enum VocabBranch {
    Fnt(FntVocab),
    Ifnt(IfntVocab),
}

struct ModelForward {
    enc: EncoderCache,
    branches: Branches,
    logp: Tensor,
}

impl ModelForward {
    fn run(m: &ModelBundle, feats: &Tensor, target: &[usize]) -> Result<Self> {
        m.require_arch(&[Arch::Nt, Arch::Fnt, Arch::Ifnt], "transducer forward")?;
        let cfg = &m.config;
        check_feats(cfg, feats)?;
        check_labels(cfg, target)?;
        let p = &m.params;
        let enc = encoder_forward(p, cfg, feats)?;
        let f = enc.output();
        let (branches, logp) = match cfg.arch {
            Arch::Nt => {
                let pred = recurrence_forward(p, "predictor", cfg, target)?;
                let g = pred.hidden();
                let joint = NtJoint::forward(p, f, &g)?;
                let logp = joint.logp.clone();
                (Branches::Nt { pred, g, joint }, logp)
            }
            Arch::Fnt | Arch::Ifnt => {
                let blank_rec = recurrence_forward(p, "blank_decoder", cfg, target)?;
                let g_blank = blank_rec.hidden();
                let blank = BlankJoint::forward(p, f, &g_blank)?;
                let lm = LmForward::run(p, cfg, target)?;
                let lm_v = lm.vocab_scores(cfg.vocab_size);
                let vocab = if cfg.arch == Arch::Fnt {
                    VocabBranch::Fnt(FntVocab::forward(p, f, &lm_v)?)
                } else {
                    VocabBranch::Ifnt(IfntVocab::forward(p, f, &lm.hidden, &lm_v)?)
                };
                let scores = match &vocab {
                    VocabBranch::Fnt(v) => &v.scores,
                    VocabBranch::Ifnt(v) => &v.scores,
                };
                let logp = concat_normalize(scores, &blank.logit);
                (
                    Branches::Factorized {
                        blank_rec,
                        g_blank,
                        blank,
                        lm,
                        vocab,
                    },
                    logp,
                )
            }
            Arch::Lm => unreachable!("rejected above"),
        };
        Ok(ModelForward {
            enc,
            branches,
            logp,
        })
    }

    fn lattice(&self, target: &[usize]) -> Result<EmissionLattice> {
        into_lattice(self.logp.clone(), self.enc.output().rows(), target)
    }

    /// Backpropagates the lattice gradient (and the weighted LM cross-entropy) into
    /// every parameter; returns the gradient with respect to the input features.
    fn backward(
        &self,
        params: &mut ParamStore,
        cfg: &ModelConfig,
        target: &[usize],
        d_lattice: &Tensor,
    ) -> Result<Tensor> {
        let f = self.enc.output();
        let k = cfg.vocab_size + 1;
        let d_logp = d_lattice.clone().reshape(&[self.logp.rows(), k])?;
        let df = match &self.branches {
            Branches::Nt { pred, g, joint } => {
                let (df, dg) = joint.backward(params, f, g, &d_logp)?;
                recurrence_backward(params, "predictor", pred, &dg);
                df
            }
            Branches::Factorized {
                blank_rec,
                g_blank,
                blank,
                lm,
                vocab,
            } => {
                let d_logits = log_softmax_backward(&self.logp, &d_logp);
                let v = cfg.vocab_size;
                let d_scores = take_cols(&d_logits, v);
                let d_blank =
                    Tensor::new(vec![d_logits.rows(), 1], d_logits.data().chunks(k).map(|r| r[v]).collect())?;
                let (mut df, dgb) = blank.backward(params, f, g_blank, &d_blank)?;
                recurrence_backward(params, "blank_decoder", blank_rec, &dgb);

                let u_cols = target.len() + 1;
                let (df_v, d_lm_v, d_hidden_extra) = match vocab {
                    VocabBranch::Fnt(b) => {
                        let (df_v, d_lm) = b.backward(params, f, u_cols, &d_scores)?;
                        (df_v, d_lm, None)
                    }
                    VocabBranch::Ifnt(b) => {
                        let (df_v, d_hidden, d_lm) = b.backward(params, f, &d_scores)?;
                        (df_v, d_lm, Some(d_hidden))
                    }
                };
                df.add_assign(&df_v)?;

                let mut d_lm_full = lm_ce_grad(lm, target, cfg.eos_id(), cfg.lambda_f);
                for u in 0..u_cols {
                    for (a, g) in d_lm_full.row_mut(u)[..v].iter_mut().zip(d_lm_v.row(u)) {
                        *a += g;
                    }
                }
                lm.backward(params, &d_lm_full, d_hidden_extra.as_ref())?;
                df
            }
        };
        encoder_backward(params, cfg, &self.enc, &df)
    }

    fn lm_ce(&self, cfg: &ModelConfig, target: &[usize]) -> f64 {
        match &self.branches {
            Branches::Nt { .. } => 0.0,
            Branches::Factorized { lm, .. } => lm_ce(lm, target, cfg.eos_id()),
        }
    }
}

/// Emission lattice of a transducer model for `(feats, target)`.
pub fn lattice(m: &ModelBundle, feats: &Tensor, target: &[usize]) -> Result<EmissionLattice> {
    ModelForward::run(m, feats, target)?.lattice(target)
}

/// Training objective for one utterance; accumulates the gradient of `j_f` into the
/// model's parameter gradients.
pub fn compute_loss(m: &mut ModelBundle, feats: &Tensor, target: &[usize]) -> Result<LossBreakdown> {
    compute_loss_with_input_grad(m, feats, target).map(|(l, _)| l)
}

/// Like [`compute_loss`], also returning `d j_f / d feats`.
pub(crate) fn compute_loss_with_input_grad(
    m: &mut ModelBundle,
    feats: &Tensor,
    target: &[usize],
) -> Result<(LossBreakdown, Tensor)> {
    if target.is_empty() {
        return invalid("target must be non-empty");
    }
    let fwd = ModelForward::run(m, feats, target)?;
    let (j_t, d_lattice) = loss_and_grad(&fwd.lattice(target)?)?;
    let lm_ce = fwd.lm_ce(&m.config, target);
    let d_feats = fwd.backward(&mut m.params, &m.config, target, &d_lattice)?;
    Ok((LossBreakdown::new(j_t, lm_ce, m.config.lambda_f), d_feats))
}

/// Objective without touching gradients.
pub fn compute_loss_no_grad(m: &ModelBundle, feats: &Tensor, target: &[usize]) -> Result<LossBreakdown> {
    if target.is_empty() {
        return invalid("target must be non-empty");
    }
    let fwd = ModelForward::run(m, feats, target)?;
    let (_, loglik) = crate::rnnt_loss::forward_backward(&fwd.lattice(target)?)?;
    let lm_ce = fwd.lm_ce(&m.config, target);
    Ok(LossBreakdown::new(-loglik, lm_ce, m.config.lambda_f))
}
