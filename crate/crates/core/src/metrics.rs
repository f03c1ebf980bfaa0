//! Word error rate and checkpoint averaging.

use std::cmp::Ordering;

use crate::error::{invalid, Error, Result};
use crate::models::ModelBundle;
use crate::numerics::{ParamStore, Tensor};

/// Alignment counts between a reference and a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimum-edit alignment of `hyp` against `reference`. Among minimum alignments the
/// one with the most substitutions is chosen; since `insertions - deletions` is fixed
/// by the lengths, the counts are unique. Swapping the arguments swaps insertions and
/// deletions.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    // Cost (edits, -substitutions) compared lexicographically.
    type Cost = (usize, isize);
    let cols = hyp.len() + 1;
    let mut prev: Vec<(Cost, EditCounts)> = (0..cols)
        .map(|j| {
            (
                (j, 0),
                EditCounts {
                    insertions: j,
                    ..EditCounts::default()
                },
            )
        })
        .collect();
    for (i, r) in reference.iter().enumerate() {
        let mut cur = Vec::with_capacity(cols);
        cur.push((
            (i + 1, 0),
            EditCounts {
                deletions: i + 1,
                ..EditCounts::default()
            },
        ));
        for (j, h) in hyp.iter().enumerate() {
            let (dc, dn) = prev[j];
            let diag = if r == h {
                (dc, dn)
            } else {
                (
                    (dc.0 + 1, dc.1 - 1),
                    EditCounts {
                        substitutions: dn.substitutions + 1,
                        ..dn
                    },
                )
            };
            let (uc, un) = prev[j + 1];
            let del = (
                (uc.0 + 1, uc.1),
                EditCounts {
                    deletions: un.deletions + 1,
                    ..un
                },
            );
            let (lc, ln) = cur[j];
            let ins = (
                (lc.0 + 1, lc.1),
                EditCounts {
                    insertions: ln.insertions + 1,
                    ..ln
                },
            );
            let best = [diag, del, ins]
                .into_iter()
                .min_by(|a, b| a.0.cmp(&b.0))
                .expect("three candidates");
            cur.push(best);
        }
        prev = cur;
    }
    prev[hyp.len()].1
}

/// Pooled word error statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WerReport {
    pub counts: EditCounts,
    /// Reference tokens.
    pub reference_len: usize,
    pub utterances: usize,
}

impl WerReport {
    /// Errors over reference length; 0 for an empty reference set with no
    /// insertions, infinite with insertions.
    pub fn wer(&self) -> f64 {
        let errors = self.counts.total();
        if self.reference_len == 0 {
            return if errors == 0 { 0.0 } else { f64::INFINITY };
        }
        errors as f64 / self.reference_len as f64
    }

    pub fn add(&mut self, reference: &[usize], hyp: &[usize]) {
        let c = edit_distance(reference, hyp);
        self.counts.substitutions += c.substitutions;
        self.counts.insertions += c.insertions;
        self.counts.deletions += c.deletions;
        self.reference_len += reference.len();
        self.utterances += 1;
    }
}

/// Corpus WER with counts pooled over utterances (not a mean of per-utterance rates).
pub fn corpus_wer<R: AsRef<[usize]>, H: AsRef<[usize]>>(references: &[R], hyps: &[H]) -> Result<WerReport> {
    if references.len() != hyps.len() {
        return invalid(format!(
            "{} references but {} hypotheses",
            references.len(),
            hyps.len()
        ));
    }
    let mut report = WerReport::default();
    for (r, h) in references.iter().zip(hyps) {
        report.add(r.as_ref(), h.as_ref());
    }
    Ok(report)
}

fn compare_bits(a: &Tensor, b: &Tensor) -> Ordering {
    a.data()
        .iter()
        .map(|x| x.to_bits())
        .cmp(b.data().iter().map(|x| x.to_bits()))
}

/// Element-wise arithmetic mean of checkpoints with identical configs.
///
/// Inputs are first put in a canonical order (step, then parameter bits) so the
/// result does not depend on argument order. Elements that agree across all inputs
/// are copied unchanged. The result carries the largest source step, and the source
/// steps are recorded under `extra["averaged_steps"]`.
pub fn average_checkpoints(models: &[ModelBundle]) -> Result<ModelBundle> {
    let Some(first) = models.first() else {
        return invalid("nothing to average");
    };
    for m in &models[1..] {
        if let Some((field, left, right)) = first.config.first_difference(&m.config) {
            return Err(Error::ConfigMismatch { field, left, right });
        }
    }
    let mut sorted: Vec<&ModelBundle> = models.iter().collect();
    sorted.sort_by(|a, b| {
        a.step().cmp(&b.step()).then_with(|| {
            a.params
                .iter()
                .zip(b.params.iter())
                .map(|((_, pa), (_, pb))| compare_bits(&pa.value, &pb.value))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
    });
    let n = sorted.len() as f64;
    let mut params = ParamStore::new();
    for (name, p0) in sorted[0].params.iter() {
        let mut out = p0.value.clone();
        for (k, x) in out.data_mut().iter_mut().enumerate() {
            let vals = sorted.iter().map(|m| m.params.value(name).data()[k]);
            if vals.clone().all(|v| v.to_bits() == x.to_bits()) {
                continue;
            }
            *x = vals.sum::<f64>() / n;
        }
        params.insert(name, out)?;
    }
    let last_step = sorted.iter().map(|m| m.step()).max().unwrap_or(0);
    params.set_step(last_step);
    let mut extra = sorted[0].extra.clone();
    extra.insert(
        "averaged_steps".into(),
        sorted.iter().map(|m| m.step().to_string()).collect::<Vec<_>>().join(","),
    );
    Ok(ModelBundle {
        config: first.config.clone(),
        params,
        extra,
    })
}
