//! Greedy and frame-synchronous beam search for all transducer architectures, with
//! optional shallow fusion of an external LM.
//!
//! Both searches share the same expansion rules so that a beam of one reproduces
//! greedy decoding exactly:
//!
//! * at most [`MAX_SYMBOLS_PER_FRAME`] labels are emitted per frame and at most
//!   `2 T` labels per utterance; once a cap is hit the blank is taken (and scored);
//! * ties prefer blank, then the smaller token id (lexicographic token order).

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{invalid, Error, Result};
use crate::models::{AcousticCache, Arch, LabelState, ModelBundle};
use crate::numerics::{logaddexp, Tensor};

pub const MAX_SYMBOLS_PER_FRAME: usize = 5;

/// Label cap for an utterance of `frames` frames.
pub fn max_labels(frames: usize) -> usize {
    2 * frames
}

#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Sum of log-probabilities of every emitted symbol, blanks included.
    pub e2e_logscore: f64,
    /// External-LM log-probability of `tokens` (0 without fusion).
    pub lm_logscore: f64,
    state: LabelState,
    lm_state: Option<LabelState>,
}

impl Hypothesis {
    pub fn state(&self) -> &LabelState {
        &self.state
    }
}

/// `e2e + lambda_t * lm`.
pub fn fuse_score(h: &Hypothesis, lambda_t: f64) -> f64 {
    fused(h.e2e_logscore, h.lm_logscore, lambda_t)
}

fn fused(e2e: f64, lm: f64, lambda_t: f64) -> f64 {
    if lambda_t == 0.0 {
        e2e
    } else {
        e2e + lambda_t * lm
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusionConfig<'a> {
    pub lambda_t: f64,
    pub external_lm: &'a ModelBundle,
}

impl FusionConfig<'_> {
    pub fn validate(&self, asr: &ModelBundle) -> Result<()> {
        if !(self.lambda_t >= 0.0 && self.lambda_t.is_finite()) {
            return invalid(format!("fusion weight must be >= 0, got {}", self.lambda_t));
        }
        self.external_lm.require_arch(&[Arch::Lm], "shallow fusion")?;
        let (a, b) = (asr.config.vocab_size, self.external_lm.config.vocab_size);
        if a != b {
            return Err(Error::ConfigMismatch {
                field: "vocab_size".into(),
                left: a.to_string(),
                right: b.to_string(),
            });
        }
        Ok(())
    }
}

/// Search result with the number of joint evaluations spent.
#[derive(Debug, Clone)]
pub struct SearchOutput {
    /// Best first.
    pub hypotheses: Vec<Hypothesis>,
    pub joint_evals: usize,
}

struct Scorer<'a> {
    m: &'a ModelBundle,
    cache: AcousticCache,
    evals: usize,
}

impl<'a> Scorer<'a> {
    fn new(m: &'a ModelBundle, feats: &Tensor) -> Result<Self> {
        Ok(Scorer {
            m,
            cache: AcousticCache::new(m, feats)?,
            evals: 0,
        })
    }

    fn cell(&mut self, t: usize, state: &LabelState) -> Result<Vec<f64>> {
        self.evals += 1;
        self.cache.cell_logprobs(self.m, t, state)
    }
}

/// Blank if it is at least as likely as every token, else the smallest best token.
fn greedy_choice(logp: &[f64]) -> Option<usize> {
    let blank = logp.len() - 1;
    let mut best = blank;
    for k in 0..blank {
        if logp[k] > logp[best] || (best != blank && logp[k] == logp[best] && k < best) {
            best = k;
        }
    }
    // ties with blank resolve to blank
    if best != blank && logp[best] <= logp[blank] {
        best = blank;
    }
    (best != blank).then_some(best)
}

/// Greedy search returning the scored best path.
pub fn greedy_search(m: &ModelBundle, feats: &Tensor) -> Result<SearchOutput> {
    let mut scorer = Scorer::new(m, feats)?;
    let frames = scorer.cache.frames();
    let cap = max_labels(frames);
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        e2e_logscore: 0.0,
        lm_logscore: 0.0,
        state: LabelState::start(m)?,
        lm_state: None,
    };
    for t in 0..frames {
        let mut emitted = 0;
        loop {
            let logp = scorer.cell(t, &hyp.state)?;
            let blank = logp.len() - 1;
            let may_emit = emitted < MAX_SYMBOLS_PER_FRAME && hyp.tokens.len() < cap;
            match greedy_choice(&logp).filter(|_| may_emit) {
                Some(k) => {
                    hyp.e2e_logscore += logp[k];
                    hyp.state = hyp.state.advance(m, k)?;
                    hyp.tokens.push(k);
                    emitted += 1;
                }
                None => {
                    hyp.e2e_logscore += logp[blank];
                    break;
                }
            }
        }
    }
    Ok(SearchOutput {
        hypotheses: vec![hyp],
        joint_evals: scorer.evals,
    })
}

/// Best token sequence under greedy search (may be empty).
pub fn greedy_decode(m: &ModelBundle, feats: &Tensor) -> Result<Vec<usize>> {
    Ok(greedy_search(m, feats)?.hypotheses.swap_remove(0).tokens)
}

/// Candidate extension before its states are materialized.
struct Candidate {
    parent: usize,
    /// `None` is blank.
    token: Option<usize>,
    e2e: f64,
    lm: f64,
    score: f64,
}

fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_tokens.cmp(b_tokens))
}

fn candidate_tokens(parent: &Hypothesis, token: Option<usize>) -> Vec<usize> {
    let mut t = parent.tokens.clone();
    t.extend(token);
    t
}

/// Frame-synchronous beam search; returns up to `beam` hypotheses, best first.
pub fn beam_search(
    m: &ModelBundle,
    feats: &Tensor,
    beam: usize,
    fusion: Option<&FusionConfig>,
) -> Result<Vec<Hypothesis>> {
    Ok(beam_search_detailed(m, feats, beam, fusion)?.hypotheses)
}

/// Beam search that also reports the joint evaluations spent.
///
/// A pruned search of width `b` can miss a path that width `b - 1` keeps, so the
/// result for width `b` pools the finals of every width `1..=b` (identical token
/// sequences keep their best score). The best returned score is therefore
/// non-decreasing in `beam`, at roughly `(beam + 1) / 2` times the cost of one pass.
pub fn beam_search_detailed(
    m: &ModelBundle,
    feats: &Tensor,
    beam: usize,
    fusion: Option<&FusionConfig>,
) -> Result<SearchOutput> {
    if beam < 1 {
        return invalid("beam size must be >= 1");
    }
    if let Some(f) = fusion {
        f.validate(m)?;
    }
    let lambda_t = fusion.map_or(0.0, |f| f.lambda_t);
    let mut scorer = Scorer::new(m, feats)?;
    let mut pooled: BTreeMap<Vec<usize>, Hypothesis> = BTreeMap::new();
    for width in 1..=beam {
        for h in search_width(&mut scorer, m, width, fusion)? {
            match pooled.get_mut(&h.tokens) {
                Some(existing) if existing.e2e_logscore >= h.e2e_logscore => {}
                Some(existing) => *existing = h,
                None => {
                    pooled.insert(h.tokens.clone(), h);
                }
            }
        }
    }
    let mut hyps: Vec<Hypothesis> = pooled.into_values().collect();
    sort_hypotheses(&mut hyps, lambda_t);
    hyps.truncate(beam);
    Ok(SearchOutput {
        hypotheses: hyps,
        joint_evals: scorer.evals,
    })
}

fn search_width(
    scorer: &mut Scorer,
    m: &ModelBundle,
    beam: usize,
    fusion: Option<&FusionConfig>,
) -> Result<Vec<Hypothesis>> {
    let lambda_t = fusion.map_or(0.0, |f| f.lambda_t);
    let frames = scorer.cache.frames();
    let cap = max_labels(frames);

    let mut hyps = vec![Hypothesis {
        tokens: Vec::new(),
        e2e_logscore: 0.0,
        lm_logscore: 0.0,
        state: LabelState::start(m)?,
        lm_state: fusion.map(|f| LabelState::start(f.external_lm)).transpose()?,
    }];

    for t in 0..frames {
        // finished (blank-terminated) hypotheses for this frame, keyed by tokens
        let mut done: BTreeMap<Vec<usize>, Hypothesis> = BTreeMap::new();
        let mut active = std::mem::take(&mut hyps);
        for step in 0..=MAX_SYMBOLS_PER_FRAME {
            if active.is_empty() {
                break;
            }
            let mut pool = Vec::new();
            for (i, h) in active.iter().enumerate() {
                let logp = scorer.cell(t, &h.state)?;
                let blank = logp.len() - 1;
                let e2e = h.e2e_logscore + logp[blank];
                pool.push(Candidate {
                    parent: i,
                    token: None,
                    e2e,
                    lm: h.lm_logscore,
                    score: fused(e2e, h.lm_logscore, lambda_t),
                });
                if step == MAX_SYMBOLS_PER_FRAME || h.tokens.len() >= cap {
                    continue;
                }
                let ext_lm = h.lm_state.as_ref().and_then(|s| s.lm_logprobs());
                for (k, &lp) in logp[..blank].iter().enumerate() {
                    let e2e = h.e2e_logscore + lp;
                    let lm = h.lm_logscore + ext_lm.map_or(0.0, |row| row[k]);
                    pool.push(Candidate {
                        parent: i,
                        token: Some(k),
                        e2e,
                        lm,
                        score: fused(e2e, lm, lambda_t),
                    });
                }
            }
            pool.sort_by(|a, b| {
                b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| {
                    let ta = active[a.parent].tokens.iter().chain(a.token.iter());
                    ta.cmp(active[b.parent].tokens.iter().chain(b.token.iter()))
                })
            });
            pool.truncate(beam);

            let mut next = Vec::new();
            for c in pool {
                let parent = &active[c.parent];
                match c.token {
                    None => {
                        let tokens = parent.tokens.clone();
                        match done.get_mut(&tokens) {
                            Some(existing) => {
                                existing.e2e_logscore = logaddexp(existing.e2e_logscore, c.e2e);
                            }
                            None => {
                                let h = Hypothesis {
                                    tokens: tokens.clone(),
                                    e2e_logscore: c.e2e,
                                    lm_logscore: c.lm,
                                    state: parent.state.clone(),
                                    lm_state: parent.lm_state.clone(),
                                };
                                done.insert(tokens, h);
                            }
                        }
                    }
                    Some(k) => {
                        let lm_state = match (&parent.lm_state, fusion) {
                            (Some(s), Some(f)) => Some(s.advance(f.external_lm, k)?),
                            _ => None,
                        };
                        next.push(Hypothesis {
                            tokens: candidate_tokens(parent, Some(k)),
                            e2e_logscore: c.e2e,
                            lm_logscore: c.lm,
                            state: parent.state.advance(m, k)?,
                            lm_state,
                        });
                    }
                }
            }
            active = next;
        }
        hyps = done.into_values().collect();
        sort_hypotheses(&mut hyps, lambda_t);
        hyps.truncate(beam);
    }
    Ok(hyps)
}

/// Best fused score first, ties by token order.
pub fn sort_hypotheses(hyps: &mut [Hypothesis], lambda_t: f64) {
    hyps.sort_by(|a, b| rank(fuse_score(a, lambda_t), &a.tokens, fuse_score(b, lambda_t), &b.tokens));
}
