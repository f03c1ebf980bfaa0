//! Text-only adaptation of the vocabulary decoder, external LM training and
//! perplexity.

use glob::Pattern;

use crate::data::TextCorpus;
use crate::error::{invalid, Error, Result};
use crate::models::{lm_sentence_loss, Arch, ModelBundle, VOCAB_LM_PREFIX};
use crate::numerics::{adam_step_filtered, OptimConfig};
use crate::training::{clip_gradients, Sampler};

/// Gitignore-style freeze list: patterns are matched against parameter names in
/// order, the last match wins, and a leading `!` marks a match as trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct FreezeList {
    rules: Vec<(bool, Pattern)>,
    source: Vec<String>,
}

impl FreezeList {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self> {
        let mut rules = Vec::with_capacity(patterns.len());
        for p in patterns {
            let p = p.as_ref();
            let (trainable, body) = match p.strip_prefix('!') {
                Some(rest) => (true, rest),
                None => (false, p),
            };
            let pat = Pattern::new(body).map_err(|e| Error::Invalid(format!("bad freeze pattern {p:?}: {e}")))?;
            rules.push((trainable, pat));
        }
        Ok(FreezeList {
            rules,
            source: patterns.iter().map(|p| p.as_ref().to_string()).collect(),
        })
    }

    /// Names that match no pattern are trainable.
    pub fn is_frozen(&self, name: &str) -> bool {
        self.rules
            .iter()
            .rev()
            .find(|(_, p)| p.matches(name))
            .is_some_and(|(trainable, _)| !trainable)
    }

    pub fn patterns(&self) -> &[String] {
        &self.source
    }
}

impl Default for FreezeList {
    fn default() -> Self {
        FreezeList::new(&["*", "!vocab_lm.*"]).expect("valid default patterns")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub steps: u64,
    /// Sentences per update.
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub clip_norm: f64,
    pub freeze: FreezeList,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            steps: 300,
            batch_size: 16,
            optim: OptimConfig {
                learning_rate: 1e-3,
                ..OptimConfig::default()
            },
            clip_norm: 5.0,
            freeze: FreezeList::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return invalid("steps must be >= 1");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be >= 1");
        }
        if !(self.clip_norm >= 0.0) {
            return invalid("clip_norm must be >= 0");
        }
        self.optim.validate()
    }
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    /// Mean per-sentence cross-entropy of each update batch (nats, including EOS).
    pub losses: Vec<f64>,
    pub trainable: Vec<String>,
    pub frozen: Vec<String>,
}

/// Updates only the vocabulary decoder of an FNT or IFNT model on target-domain
/// text. Everything outside `vocab_lm.*` is left bit-identical. Optimizer moments
/// start fresh; the step counter of the checkpoint continues.
pub fn adapt_text_only(m: &mut ModelBundle, corpus: &TextCorpus, cfg: &AdaptConfig) -> Result<AdaptOutcome> {
    match m.arch() {
        Arch::Fnt | Arch::Ifnt => {}
        Arch::Nt => {
            return Err(Error::Architecture(
                "text-only adaptation needs a model with a vocabulary decoder (fnt or ifnt); \
                 for nt, train an external LM on the target text and decode with shallow fusion"
                    .into(),
            ))
        }
        Arch::Lm => {
            return Err(Error::Architecture(
                "text-only adaptation applies to transducers; use LM training for arch lm".into(),
            ))
        }
    }
    let trainable: Vec<String> = m
        .params
        .names()
        .filter(|n| !cfg.freeze.is_frozen(n))
        .map(str::to_string)
        .collect();
    if let Some(bad) = trainable.iter().find(|n| !n.starts_with(VOCAB_LM_PREFIX)) {
        return invalid(format!(
            "freeze patterns leave {bad} trainable; text-only data only reaches {VOCAB_LM_PREFIX}*"
        ));
    }
    if trainable.is_empty() {
        return invalid("freeze patterns leave nothing trainable");
    }
    let losses = fit_lm(m, corpus, cfg, |n| !cfg.freeze.is_frozen(n))?;
    let frozen = m
        .params
        .names()
        .filter(|n| cfg.freeze.is_frozen(n))
        .map(str::to_string)
        .collect();
    Ok(AdaptOutcome { losses, trainable, frozen })
}

/// Trains a standalone LM (arch `lm`) in place; returns per-update mean losses.
pub fn train_lm(m: &mut ModelBundle, corpus: &TextCorpus, cfg: &AdaptConfig) -> Result<Vec<f64>> {
    m.require_arch(&[Arch::Lm], "LM training")?;
    fit_lm(m, corpus, cfg, |_| true)
}

fn fit_lm(
    m: &mut ModelBundle,
    corpus: &TextCorpus,
    cfg: &AdaptConfig,
    trainable: impl Fn(&str) -> bool,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_vocab(m, corpus)?;
    if corpus.is_empty() {
        return invalid("text corpus is empty");
    }
    // Fresh moments for the new objective, keeping the global step count.
    let resume = m.step();
    m.params.reset_optimizer();
    let mut sampler = Sampler::new(corpus.len(), cfg.optim.seed);
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    m.params.zero_grads();
    for step in 1..=cfg.steps {
        let picked = sampler.next_batch(cfg.batch_size);
        let mut total = 0.0;
        for &i in &picked {
            total += lm_sentence_loss(m, &corpus.sentences()[i], true)?;
        }
        let mean = total / picked.len() as f64;
        if !mean.is_finite() {
            m.params.zero_grads();
            m.params.set_step(resume + step - 1);
            return Err(Error::NonFiniteLoss { step: resume + step });
        }
        m.params.scale_grads(1.0 / picked.len() as f64);
        clip_gradients(&mut m.params, cfg.clip_norm, &trainable);
        adam_step_filtered(&mut m.params, &cfg.optim, &trainable)?;
        losses.push(mean);
    }
    m.params.set_step(resume + cfg.steps);
    Ok(losses)
}

fn check_vocab(m: &ModelBundle, corpus: &TextCorpus) -> Result<()> {
    if corpus.vocab_size() != m.config.vocab_size {
        return Err(Error::ConfigMismatch {
            field: "vocab_size".into(),
            left: m.config.vocab_size.to_string(),
            right: corpus.vocab_size().to_string(),
        });
    }
    Ok(())
}

/// Corpus perplexity of the model's LM over `V+1` outcomes:
/// `exp(total cross-entropy / total predicted symbols)`, with one end-of-sequence
/// prediction per sentence.
pub fn perplexity(m: &ModelBundle, corpus: &TextCorpus) -> Result<f64> {
    m.require_arch(&[Arch::Fnt, Arch::Ifnt, Arch::Lm], "perplexity")?;
    check_vocab(m, corpus)?;
    if corpus.is_empty() {
        return invalid("text corpus is empty");
    }
    let mut scratch = m.clone();
    let mut total = 0.0;
    for s in corpus.sentences() {
        total += lm_sentence_loss(&mut scratch, s, false)?;
    }
    let symbols = corpus.num_tokens() + corpus.len();
    Ok((total / symbols as f64).exp())
}
