//! On-disk corpora: feature files, manifests and text corpora.
//!
//! A manifest has one line per utterance: `id<TAB>feature path<TAB>transcript`.
//! Feature paths are stored relative to the manifest's directory. Feature files use
//! the tensor container format with a single tensor named `feats`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{TextCorpus, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{Container, Tensor};

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn write_features(path: impl AsRef<Path>, feats: &Tensor) -> Result<()> {
    let mut c = Container::default();
    c.metadata.insert("kind".into(), "features".into());
    c.tensors.insert("feats".into(), feats.clone());
    c.save(path)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut c = Container::load(path)?;
    match c.tensors.remove("feats") {
        Some(t) if t.shape().len() == 2 && t.rows() > 0 => Ok(t),
        Some(t) => Err(format_err(path, format!("feature tensor has shape {:?}", t.shape()))),
        None => Err(format_err(path, "no `feats` tensor")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Resolved path of the feature file.
    pub path: PathBuf,
    pub transcript: String,
}

/// Writes `{dir}/{name}.tsv` and one feature file per utterance under
/// `{dir}/{name}/`. Returns the manifest path.
pub fn write_manifest_corpus(dir: impl AsRef<Path>, name: &str, utts: &[Utterance], vocab: &Vocabulary) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let feat_dir = dir.join(name);
    fs::create_dir_all(&feat_dir)?;
    let mut manifest = String::new();
    for u in utts {
        if u.id.contains(['\t', '\n', '/']) {
            return Err(Error::Invalid(format!("utterance id {:?} is not file-name safe", u.id)));
        }
        let rel = format!("{name}/{}.feats", u.id);
        write_features(dir.join(&rel), &u.feats)?;
        writeln!(manifest, "{}\t{}\t{}", u.id, rel, vocab.detokenize(&u.transcript)?).expect("string write");
    }
    let path = dir.join(format!("{name}.tsv"));
    fs::write(&path, manifest)?;
    Ok(path)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let mut parts = line.splitn(3, '\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(id), Some(p), Some(tr)) if !id.is_empty() && !p.is_empty() => Ok(ManifestEntry {
                    id: id.to_string(),
                    path: base.join(p),
                    transcript: tr.to_string(),
                }),
                _ => Err(format_err(path, format!("line {}: expected id<TAB>path<TAB>transcript", i + 1))),
            }
        })
        .collect()
}

/// Reads a manifest and its feature files; transcripts are tokenized with `vocab`.
/// Returns the utterances and the number of out-of-vocabulary symbols seen.
pub fn load_utterances(manifest: impl AsRef<Path>, vocab: &Vocabulary) -> Result<(Vec<Utterance>, usize)> {
    let mut oov = 0;
    let utts = read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let tok = vocab.tokenize(&e.transcript);
            oov += tok.oov;
            Ok(Utterance {
                id: e.id,
                feats: read_features(&e.path)?,
                transcript: tok.ids,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((utts, oov))
}

/// One detokenized sentence per line.
pub fn write_text_corpus(path: impl AsRef<Path>, corpus: &TextCorpus, vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    for s in corpus.sentences() {
        out.push_str(&vocab.detokenize(s)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads one sentence per line (blank lines skipped). Returns the corpus and the
/// number of out-of-vocabulary symbols mapped to `<unk>`.
pub fn read_text_corpus(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<(TextCorpus, usize)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut oov = 0;
    let sentences = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let t = vocab.tokenize(l);
            oov += t.oov;
            t.ids
        })
        .filter(|ids| !ids.is_empty())
        .collect();
    Ok((TextCorpus::new(sentences, vocab.len())?, oov))
}
