//! Vocabulary and tokenization, corpora and manifests, batching, and the synthetic
//! two-domain generator.

mod io;
mod synth;
mod vocab;

pub use io::{
    load_utterances, read_features, read_manifest, read_text_corpus, write_features,
    write_manifest_corpus, write_text_corpus, ManifestEntry,
};
pub use synth::{
    generate_domain, kl_divergence, make_shifted_domain, pair_partner, total_variation,
    DomainSpec, SyntheticParams,
};
pub use vocab::{syllable_names, TokenUnit, Tokenized, Vocabulary, UNK, UNK_ID};

use crate::error::{invalid, Error, Result};
use crate::numerics::Tensor;

/// Paired features and transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `[T, feat_dim]`, `T >= 1`.
    pub feats: Tensor,
    pub transcript: Vec<usize>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.feats.rows()
    }
}

/// Text-only corpus of token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCorpus {
    sentences: Vec<Vec<usize>>,
    vocab_size: usize,
}

impl TextCorpus {
    pub fn new(sentences: Vec<Vec<usize>>, vocab_size: usize) -> Result<Self> {
        for (i, s) in sentences.iter().enumerate() {
            if s.is_empty() {
                return invalid(format!("sentence {i} is empty"));
            }
            if let Some(&bad) = s.iter().find(|&&y| y >= vocab_size) {
                return invalid(format!("sentence {i}: token id {bad} outside [0, {vocab_size})"));
            }
        }
        Ok(TextCorpus { sentences, vocab_size })
    }

    pub fn sentences(&self) -> &[Vec<usize>] {
        &self.sentences
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Zero-padded batch of utterances.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[B, max_frames, feat_dim]`; frames past `frame_lens[b]` are zero.
    pub feats: Tensor,
    pub frame_lens: Vec<usize>,
    pub targets: Vec<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn label_lens(&self) -> Vec<usize> {
        self.targets.iter().map(Vec::len).collect()
    }

    /// Unpadded features of item `b`.
    pub fn item_feats(&self, b: usize) -> Tensor {
        let (t_max, d) = (self.feats.shape()[1], self.feats.shape()[2]);
        let start = b * t_max * d;
        let data = self.feats.data()[start..start + self.frame_lens[b] * d].to_vec();
        Tensor::new(vec![self.frame_lens[b], d], data).expect("in bounds")
    }
}

/// Groups utterances, in order, into batches of at most `batch_size`, each padded to
/// `max_frames`.
pub fn batchify(utts: &[Utterance], batch_size: usize, max_frames: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return invalid("batch size must be >= 1");
    }
    let Some(first) = utts.first() else {
        return Ok(Vec::new());
    };
    let d = first.feats.cols();
    if let Some(u) = utts.iter().find(|u| u.frames() > max_frames) {
        return invalid(format!(
            "utterance {} has {} frames, more than max_frames = {max_frames}",
            u.id,
            u.frames()
        ));
    }
    if let Some(u) = utts.iter().find(|u| u.feats.cols() != d) {
        return Err(Error::Shape {
            op: "batchify",
            left: u.feats.shape().to_vec(),
            right: vec![max_frames, d],
        });
    }
    utts.chunks(batch_size)
        .map(|chunk| {
            let mut data = vec![0.0; chunk.len() * max_frames * d];
            for (b, u) in chunk.iter().enumerate() {
                let start = b * max_frames * d;
                data[start..start + u.feats.len()].copy_from_slice(u.feats.data());
            }
            Ok(Batch {
                ids: chunk.iter().map(|u| u.id.clone()).collect(),
                feats: Tensor::new(vec![chunk.len(), max_frames, d], data)?,
                frame_lens: chunk.iter().map(Utterance::frames).collect(),
                targets: chunk.iter().map(|u| u.transcript.clone()).collect(),
            })
        })
        .collect()
}
