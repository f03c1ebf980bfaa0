//! Pipeline stages. Each command reads its inputs from the config, writes its
//! artifacts under `out_dir` together with the resolved config, and returns a
//! summary for programmatic callers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use transducer_core::adaptation::{adapt_text_only, perplexity, train_lm};
use transducer_core::data::{
    generate_domain, kl_divergence, load_utterances, make_shifted_domain,
    read_text_corpus, syllable_names, total_variation, write_manifest_corpus, write_text_corpus,
    DomainSpec, TextCorpus, TokenUnit, Utterance, Vocabulary,
};
use transducer_core::decoding::{beam_search, fuse_score, greedy_search, FusionConfig, Hypothesis};
use transducer_core::metrics::{average_checkpoints, edit_distance, WerReport};
use transducer_core::models::{Arch, ModelBundle};
use transducer_core::training::train;
use transducer_core::Error as CoreError;

use crate::config::{derive_seed, ExperimentConfig, Search};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const SOURCE_TRAIN: &str = "source_train";
pub const SOURCE_DEV: &str = "source_dev";
pub const TARGET_DEV: &str = "target_dev";
pub const TARGET_TEST: &str = "target_test";
pub const TARGET_TEXT: &str = "target_train.txt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const ADAPTED_CHECKPOINT: &str = "adapted.ckpt";
pub const AVERAGED_CHECKPOINT: &str = "averaged.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const HYP_FILE: &str = "hyp.txt";

fn symbol_names(count: usize, unit: TokenUnit) -> Result<Vec<String>> {
    match unit {
        TokenUnit::Word => Ok(syllable_names(count)),
        TokenUnit::Char => {
            let pool: Vec<char> = ('a'..='z').chain('A'..='Z').chain('0'..='9').collect();
            if count > pool.len() {
                bail!("character vocabularies support at most {} symbols", pool.len() + 1);
            }
            Ok(pool[..count].iter().map(|c| c.to_string()).collect())
        }
    }
}

pub fn load_vocab(cfg: &ExperimentConfig) -> Result<Vocabulary> {
    let path = cfg.data_path(VOCAB_FILE);
    Vocabulary::load(&path, cfg.unit()?).with_context(|| format!("loading vocabulary {}", path.display()))
}

fn manifest_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.tsv"))
}

fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSummary {
    pub vocab_size: usize,
    pub source_train: usize,
    pub target_text_sentences: usize,
    /// Mean per-row total variation between source and target bigram rows.
    pub mean_row_tv: f64,
    pub mean_row_kl: f64,
}

/// Writes the vocabulary, both domain specs, paired source train/dev and target
/// dev/test corpora, and a text-only target training corpus. No paired target
/// training data is produced.
pub fn make_data(cfg: &ExperimentConfig) -> Result<DataSummary> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;
    cfg.write_resolved()?;
    let source = DomainSpec::synthetic(&cfg.synthetic_params())?;
    let target = make_shifted_domain(&source, cfg.data.shift)?;
    let vocab = Vocabulary::new(symbol_names(cfg.data.vocab_size - 1, cfg.unit()?)?, cfg.unit()?)?;
    vocab.save(out.join(VOCAB_FILE))?;
    source.to_container().save(out.join("source.domain"))?;
    target.to_container().save(out.join("target.domain"))?;

    let d = &cfg.data;
    let corpus = |spec: &DomainSpec, n: usize, tag: &str| generate_domain(spec, n, derive_seed(cfg.seed, tag));
    let (src_train, _) = corpus(&source, d.source_train, SOURCE_TRAIN)?;
    write_manifest_corpus(out, SOURCE_TRAIN, &src_train, &vocab)?;
    write_manifest_corpus(out, SOURCE_DEV, &corpus(&source, d.source_dev, SOURCE_DEV)?.0, &vocab)?;
    // Paired target data is for evaluation only; its transcripts are also written
    // as text so held-out perplexity can be measured.
    for (name, n) in [(TARGET_DEV, d.target_dev), (TARGET_TEST, d.target_test)] {
        let (utts, text) = corpus(&target, n, name)?;
        write_manifest_corpus(out, name, &utts, &vocab)?;
        write_text_corpus(out.join(format!("{name}.txt")), &text, &vocab)?;
    }
    let (_, target_text) = corpus(&target, d.target_text, "target_text")?;
    write_text_corpus(out.join(TARGET_TEXT), &target_text, &vocab)?;

    let v = source.vocab_size;
    let rows = 1..v;
    let mean_row_tv = rows
        .clone()
        .map(|i| total_variation(source.transitions.row(i), target.transitions.row(i)))
        .sum::<f64>()
        / (v - 1) as f64;
    let mean_row_kl = rows
        .map(|i| kl_divergence(target.transitions.row(i), source.transitions.row(i)))
        .sum::<f64>()
        / (v - 1) as f64;
    let summary = DataSummary {
        vocab_size: vocab.len(),
        source_train: src_train.len(),
        target_text_sentences: target_text.len(),
        mean_row_tv,
        mean_row_kl,
    };
    fs::write(
        out.join("domain_stats.txt"),
        format!(
            "vocab_size={}\nshift={}\nmean_row_tv={:.6}\nmean_row_kl_target_source={:.6}\n",
            summary.vocab_size, cfg.data.shift, mean_row_tv, mean_row_kl
        ),
    )?;
    Ok(summary)
}

fn text_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.paths.text.clone().unwrap_or_else(|| cfg.data_path(TARGET_TEXT))
}

fn load_text(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<(PathBuf, TextCorpus)> {
    let path = text_path(cfg);
    let (corpus, _) = read_text_corpus(&path, vocab).with_context(|| format!("reading text {}", path.display()))?;
    Ok((path, corpus))
}

fn load_paired(path: &Path, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    let (utts, _) = load_utterances(path, vocab).with_context(|| format!("reading manifest {}", path.display()))?;
    if utts.is_empty() {
        bail!("manifest {} is empty", path.display());
    }
    Ok(utts)
}

fn load_checkpoint(path: Option<&PathBuf>, what: &str) -> Result<(PathBuf, ModelBundle)> {
    let path = path.ok_or_else(|| anyhow!("paths.{what} is required"))?;
    let m = ModelBundle::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok((path.clone(), m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub first_j_f: f64,
    pub last_j_f: f64,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains `model.arch`. Transducers train on the paired manifest (default: source
/// train); `arch = "lm"` trains a standalone LM on `paths.text` (default: target
/// text). Periodic checkpoints go to `checkpoints/`, the final model to `final.ckpt`.
pub fn train_cmd(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out.join(CHECKPOINT_DIR))?;
    cfg.write_resolved()?;
    let vocab = load_vocab(cfg)?;
    let arch = cfg.arch()?;
    let mut run_log = String::new();
    if arch == Arch::Lm {
        let (path, corpus) = load_text(cfg, &vocab)?;
        writeln!(run_log, "arch=lm\ntext={}", path.display())?;
        let mut m = ModelBundle::init(cfg.model_config(Arch::Lm, vocab.len(), cfg.data.feat_dim), cfg.init_seed())?;
        let losses = train_lm(&mut m, &corpus, &cfg.lm_config())?;
        write_csv(
            &out.join("train_log.csv"),
            "step,lm_ce",
            losses.iter().enumerate().map(|(i, l)| format!("{},{l}", i + 1)),
        )?;
        let final_checkpoint = out.join(FINAL_CHECKPOINT);
        m.save(&final_checkpoint)?;
        fs::write(out.join("run.log"), run_log)?;
        return Ok(TrainSummary {
            final_checkpoint,
            first_j_f: losses[0],
            last_j_f: *losses.last().expect("steps >= 1"),
            checkpoints: Vec::new(),
        });
    }
    let manifest = cfg
        .paths
        .manifest
        .clone()
        .unwrap_or_else(|| manifest_path(&cfg.paths.data_dir, SOURCE_TRAIN));
    let utts = load_paired(&manifest, &vocab)?;
    writeln!(run_log, "arch={arch}\nmanifest={}\nutterances={}", manifest.display(), utts.len())?;
    let feat_dim = utts[0].feats.cols();
    let mut m = ModelBundle::init(cfg.model_config(arch, vocab.len(), feat_dim), cfg.init_seed())?;
    let mut checkpoints = Vec::new();
    let result = train(&mut m, &utts, &cfg.train_config(), |model, step| {
        let path = out.join(CHECKPOINT_DIR).join(format!("step_{step:06}.ckpt"));
        model.save(&path)?;
        checkpoints.push(path);
        Ok(())
    });
    let log = match result {
        Ok(log) => log,
        Err(e @ CoreError::NonFiniteLoss { .. }) => {
            let kept = checkpoints
                .last()
                .map_or("none".to_string(), |p| p.display().to_string());
            writeln!(run_log, "aborted: {e}; last good checkpoint: {kept}")?;
            fs::write(out.join("run.log"), run_log)?;
            return Err(anyhow::Error::new(e).context(format!("training aborted (last good checkpoint: {kept})")));
        }
        Err(e) => return Err(e.into()),
    };
    write_csv(
        &out.join("train_log.csv"),
        "step,j_t,lm_ce,j_f",
        log.iter()
            .map(|r| format!("{},{},{},{}", r.step, r.loss.j_t, r.loss.lm_ce, r.loss.j_f)),
    )?;
    let mut report = String::new();
    for s in m.param_report() {
        writeln!(report, "{}\t{}", s.subtree, s.scalars)?;
    }
    writeln!(report, "total\t{}", m.num_params())?;
    fs::write(out.join("params.txt"), report)?;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    m.save(&final_checkpoint)?;
    fs::write(out.join("run.log"), run_log)?;
    Ok(TrainSummary {
        final_checkpoint,
        first_j_f: log[0].loss.j_f,
        last_j_f: log.last().expect("steps >= 1").loss.j_f,
        checkpoints,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptSummary {
    pub checkpoint: PathBuf,
    pub trainable: Vec<String>,
    pub frozen: Vec<String>,
}

/// Text-only adaptation of an FNT/IFNT checkpoint's vocabulary decoder.
pub fn adapt_cmd(cfg: &ExperimentConfig) -> Result<AdaptSummary> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;
    cfg.write_resolved()?;
    let (ckpt_path, mut m) = load_checkpoint(cfg.paths.checkpoint.as_ref(), "checkpoint")?;
    let vocab = load_vocab(cfg)?;
    let (text, corpus) = load_text(cfg, &vocab)?;
    let outcome = adapt_text_only(&mut m, &corpus, &cfg.adapt_config()?)?;
    let checkpoint = out.join(ADAPTED_CHECKPOINT);
    m.save(&checkpoint)?;
    write_csv(
        &out.join("adapt_log.csv"),
        "update,lm_ce",
        outcome.losses.iter().enumerate().map(|(i, l)| format!("{},{l}", i + 1)),
    )?;
    let mut log = String::new();
    writeln!(log, "checkpoint={}", ckpt_path.display())?;
    writeln!(log, "text_only_input={}", text.display())?;
    writeln!(log, "sentences={}", corpus.len())?;
    writeln!(log, "trainable={}", outcome.trainable.join(","))?;
    writeln!(log, "frozen={}", outcome.frozen.join(","))?;
    fs::write(out.join("run.log"), log)?;
    Ok(AdaptSummary {
        checkpoint,
        trainable: outcome.trainable,
        frozen: outcome.frozen,
    })
}

/// Best hypothesis per utterance (and the n-best list when beam searching).
pub fn decode_utterances(
    m: &ModelBundle,
    utts: &[Utterance],
    search: Search,
    fusion: Option<&FusionConfig>,
) -> Result<Vec<Vec<Hypothesis>>> {
    utts.iter()
        .map(|u| {
            Ok(match search {
                Search::Greedy => {
                    let mut out = greedy_search(m, &u.feats)?;
                    std::mem::take(&mut out.hypotheses)
                }
                Search::Beam(b) => beam_search(m, &u.feats, b, fusion)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeSummary {
    pub hyp_file: PathBuf,
    pub hypotheses: Vec<(String, Vec<usize>)>,
}

/// Decodes `paths.manifest` with `paths.checkpoint`, optionally fusing
/// `paths.external_lm` with weight `decode.lambda_t`.
pub fn decode_cmd(cfg: &ExperimentConfig) -> Result<DecodeSummary> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;
    cfg.write_resolved()?;
    let (_, m) = load_checkpoint(cfg.paths.checkpoint.as_ref(), "checkpoint")?;
    let vocab = load_vocab(cfg)?;
    let manifest = cfg
        .paths
        .manifest
        .clone()
        .ok_or_else(|| anyhow!("paths.manifest is required"))?;
    let utts = load_paired(&manifest, &vocab)?;
    let search = cfg.search()?;
    let lm = match &cfg.paths.external_lm {
        Some(p) => Some(ModelBundle::load(p).with_context(|| format!("loading external LM {}", p.display()))?),
        None => None,
    };
    let fusion = lm.as_ref().map(|lm| FusionConfig {
        lambda_t: cfg.decode.lambda_t,
        external_lm: lm,
    });
    if let Some(f) = &fusion {
        f.validate(&m)?;
        if search == Search::Greedy {
            bail!("shallow fusion requires decode.search = \"beam\"");
        }
    }
    let results = decode_utterances(&m, &utts, search, fusion.as_ref())?;
    let lambda_t = fusion.as_ref().map_or(0.0, |f| f.lambda_t);
    let mut hyp = String::new();
    let mut nbest = String::new();
    let mut hypotheses = Vec::with_capacity(utts.len());
    for (u, hyps) in utts.iter().zip(&results) {
        let best = &hyps[0];
        writeln!(hyp, "{}\t{}", u.id, vocab.detokenize(&best.tokens)?)?;
        for (rank, h) in hyps.iter().take(cfg.decode.nbest.max(1)).enumerate() {
            writeln!(
                nbest,
                "{}\t{}\t{}\t{}\t{}\t{}",
                u.id,
                rank + 1,
                vocab.detokenize(&h.tokens)?,
                h.e2e_logscore,
                h.lm_logscore,
                fuse_score(h, lambda_t)
            )?;
        }
        hypotheses.push((u.id.clone(), best.tokens.clone()));
    }
    let hyp_file = out.join(HYP_FILE);
    fs::write(&hyp_file, hyp)?;
    if cfg.decode.nbest > 1 {
        fs::write(out.join("nbest.tsv"), format!("id\trank\thyp\te2e\tlm\tfused\n{nbest}"))?;
    }
    Ok(DecodeSummary { hyp_file, hypotheses })
}

/// `id -> transcript` from a hypothesis file (`id<TAB>text`) or a manifest
/// (`id<TAB>path<TAB>text`); the last column is the text.
pub fn read_transcripts(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            match cols.as_slice() {
                [id, text] | [id, _, text] => Ok((id.to_string(), text.to_string())),
                _ => Err(anyhow::Error::new(CoreError::Format {
                    path: path.display().to_string(),
                    reason: format!("line {}: expected 2 or 3 tab-separated columns", i + 1),
                })),
            }
        })
        .collect()
}

/// Word-level WER between two transcript files matched by utterance id.
pub fn score_files(reference: &Path, hyp: &Path) -> Result<WerReport> {
    let refs = read_transcripts(reference)?;
    let hyps: HashMap<String, String> = read_transcripts(hyp)?.into_iter().collect();
    if hyps.len() != refs.len() {
        bail!("{} references but {} hypotheses", refs.len(), hyps.len());
    }
    let mut report = WerReport::default();
    for (id, r) in &refs {
        let h = hyps.get(id).ok_or_else(|| anyhow!("no hypothesis for utterance {id}"))?;
        let rw: Vec<&str> = r.split_whitespace().collect();
        let hw: Vec<&str> = h.split_whitespace().collect();
        let c = edit_distance(&rw, &hw);
        report.counts.substitutions += c.substitutions;
        report.counts.insertions += c.insertions;
        report.counts.deletions += c.deletions;
        report.reference_len += rw.len();
        report.utterances += 1;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSummary {
    pub wer: Option<WerReport>,
    pub ppl: Option<f64>,
}

/// WER of `paths.hyp` against `paths.reference` (or `paths.manifest`), and/or PPL of
/// `paths.checkpoint` on `paths.text`. Writes `report.txt` and `report.kv`.
pub fn eval_cmd(cfg: &ExperimentConfig) -> Result<EvalSummary> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;
    cfg.write_resolved()?;
    let mut summary = EvalSummary::default();
    let mut text = String::new();
    let mut kv = String::new();
    if let Some(hyp) = &cfg.paths.hyp {
        let reference = cfg
            .paths
            .reference
            .as_ref()
            .or(cfg.paths.manifest.as_ref())
            .ok_or_else(|| anyhow!("WER needs paths.reference or paths.manifest"))?;
        let r = score_files(reference, hyp)?;
        let c = r.counts;
        writeln!(
            text,
            "WER {:.2}% [ S={} I={} D={} N={} ] over {} utterances ({})",
            100.0 * r.wer(),
            c.substitutions,
            c.insertions,
            c.deletions,
            r.reference_len,
            r.utterances,
            hyp.display()
        )?;
        writeln!(kv, "wer={}", r.wer())?;
        writeln!(kv, "substitutions={}", c.substitutions)?;
        writeln!(kv, "insertions={}", c.insertions)?;
        writeln!(kv, "deletions={}", c.deletions)?;
        writeln!(kv, "reference_tokens={}", r.reference_len)?;
        writeln!(kv, "utterances={}", r.utterances)?;
        summary.wer = Some(r);
    }
    if cfg.paths.checkpoint.is_some() {
        let (ckpt, m) = load_checkpoint(cfg.paths.checkpoint.as_ref(), "checkpoint")?;
        if m.arch().has_vocab_lm() {
            let vocab = load_vocab(cfg)?;
            let (path, corpus) = load_text(cfg, &vocab)?;
            let ppl = perplexity(&m, &corpus)?;
            writeln!(text, "PPL {ppl:.4} ({} on {})", ckpt.display(), path.display())?;
            writeln!(kv, "ppl={ppl}")?;
            summary.ppl = Some(ppl);
        } else if cfg.paths.hyp.is_none() {
            bail!("perplexity needs a model with a language model (fnt, ifnt or lm), got {}", m.arch());
        }
    }
    if summary.wer.is_none() && summary.ppl.is_none() {
        bail!("nothing to evaluate: set paths.hyp (WER) and/or paths.checkpoint (PPL)");
    }
    fs::write(out.join("report.txt"), text)?;
    fs::write(out.join("report.kv"), kv)?;
    Ok(summary)
}

/// Averages `paths.checkpoints`, or the last `average.last` files of
/// `paths.checkpoint_dir` in name order, into `averaged.ckpt`.
pub fn average_cmd(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;
    cfg.write_resolved()?;
    let mut paths = cfg.paths.checkpoints.clone();
    if paths.is_empty() {
        let dir = cfg
            .paths
            .checkpoint_dir
            .as_ref()
            .ok_or_else(|| anyhow!("set paths.checkpoints or paths.checkpoint_dir"))?;
        let mut found: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        found.retain(|p| p.extension().is_some_and(|e| e == "ckpt"));
        found.sort();
        if cfg.average.last == 0 {
            bail!("average.last must be >= 1");
        }
        let skip = found.len().saturating_sub(cfg.average.last);
        paths = found.split_off(skip);
    }
    if paths.is_empty() {
        bail!("no checkpoints to average");
    }
    let models = paths
        .iter()
        .map(|p| ModelBundle::load(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let avg = average_checkpoints(&models)?;
    let path = out.join(AVERAGED_CHECKPOINT);
    avg.save(&path)?;
    let list: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    fs::write(out.join("run.log"), format!("averaged={}\n", list.join(",")))?;
    Ok(path)
}
