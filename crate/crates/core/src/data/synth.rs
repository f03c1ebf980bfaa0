//! Synthetic "toy speech" domains.
//!
//! A domain is a bigram language over the vocabulary plus an acoustic channel:
//! each token is rendered as a random number of frames of its prototype vector with
//! Gaussian noise. Prototypes come in close pairs, so some tokens are acoustically
//! confusable and can only be told apart with help from the language model. Shifting
//! a domain changes its bigram statistics and leaves the acoustics untouched.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::data::vocab::UNK_ID;
use crate::data::{TextCorpus, Utterance};
use crate::error::{invalid, Error, Result};
use crate::numerics::{Container, Tensor};

/// Mass spread uniformly over the allowed successors of every row, keeping rows
/// strictly positive on their support.
const UNIFORM_FLOOR: f64 = 0.03;

/// Knobs for building a [`DomainSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    /// `V`, including the reserved `<unk>` at id 0 (never generated).
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub noise: f64,
    /// Distance between the two prototypes of a confusable pair.
    pub pair_separation: f64,
    /// Standard deviation of prototype coordinates.
    pub prototype_scale: f64,
    pub len_min: usize,
    pub len_max: usize,
    /// Dirichlet concentration of the bigram rows; small values give peaked rows.
    pub concentration: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            vocab_size: 30,
            feat_dim: 12,
            frames_min: 2,
            frames_max: 4,
            noise: 0.6,
            pair_separation: 1.0,
            prototype_scale: 1.0,
            len_min: 4,
            len_max: 8,
            concentration: 0.3,
            seed: 1,
        }
    }
}

/// Language and acoustic statistics of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub seed: u64,
    pub vocab_size: usize,
    /// `[V, V]`, rows sum to 1; column `<unk>` is always 0.
    pub transitions: Tensor,
    /// First-token distribution, length `V`.
    pub start: Vec<f64>,
    /// `[V, feat_dim]`.
    pub prototypes: Tensor,
    pub frames_min: usize,
    pub frames_max: usize,
    pub noise: f64,
    pub len_min: usize,
    pub len_max: usize,
    /// Dirichlet concentration the language was drawn with (reused when shifting).
    pub concentration: f64,
}

/// Partner of `id` in its confusable pair (`1 <-> 2`, `3 <-> 4`, ...).
pub fn pair_partner(id: usize, vocab_size: usize) -> Option<usize> {
    if id == UNK_ID {
        return None;
    }
    let partner = if id % 2 == 1 { id + 1 } else { id - 1 };
    (partner < vocab_size).then_some(partner)
}

/// Tokens that may follow `prev` (`None` = sentence start): never `<unk>`, never the
/// same token again, never its confusable partner.
fn allowed_successors(prev: Option<usize>, v: usize) -> Vec<usize> {
    (1..v)
        .filter(|&j| match prev {
            None | Some(UNK_ID) => true,
            Some(p) => j != p && Some(j) != pair_partner(p, v),
        })
        .collect()
}

fn sample_row(rng: &mut ChaCha8Rng, allowed: &[usize], v: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let draws: Vec<f64> = allowed.iter().map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let n = allowed.len() as f64;
    let mut row = vec![0.0; v];
    for (&j, &g) in allowed.iter().zip(&draws) {
        let dir = if total > 0.0 { g / total } else { 1.0 / n };
        row[j] = (1.0 - UNIFORM_FLOOR) * dir + UNIFORM_FLOOR / n;
    }
    row
}

fn sample_language(v: usize, concentration: f64, seed: u64) -> (Tensor, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = sample_row(&mut rng, &allowed_successors(None, v), v, concentration);
    let rows: Vec<Vec<f64>> = (0..v)
        .map(|i| sample_row(&mut rng, &allowed_successors(Some(i), v), v, concentration))
        .collect();
    (Tensor::from_rows(&rows).expect("square"), start)
}

/// Independent seed for the alternative language of a shifted domain.
fn shifted_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17) ^ 0x5851_F42D_4C95_7F2D
}

impl DomainSpec {
    pub fn synthetic(p: &SyntheticParams) -> Result<Self> {
        if p.vocab_size < 4 {
            return invalid(format!("synthetic vocabulary needs >= 4 symbols, got {}", p.vocab_size));
        }
        if !(p.concentration > 0.0 && p.concentration.is_finite()) {
            return invalid("concentration must be positive");
        }
        if !(p.pair_separation >= 0.0 && p.prototype_scale >= 0.0) {
            return invalid("prototype scales must be non-negative");
        }
        let (transitions, start) = sample_language(p.vocab_size, p.concentration, p.seed);

        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(1);
        let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        let mut protos = vec![vec![0.0; p.feat_dim]; p.vocab_size];
        for id in 1..p.vocab_size {
            match pair_partner(id, p.vocab_size) {
                Some(q) if q < id => {
                    let dir: Vec<f64> = (0..p.feat_dim).map(|_| gauss(&mut rng)).collect();
                    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    protos[id] = protos[q]
                        .iter()
                        .zip(&dir)
                        .map(|(b, d)| b + p.pair_separation * d / norm)
                        .collect();
                }
                _ => {
                    protos[id] = (0..p.feat_dim).map(|_| p.prototype_scale * gauss(&mut rng)).collect();
                }
            }
        }
        let spec = DomainSpec {
            seed: p.seed,
            vocab_size: p.vocab_size,
            transitions,
            start,
            prototypes: Tensor::from_rows(&protos)?,
            frames_min: p.frames_min,
            frames_max: p.frames_max,
            noise: p.noise,
            len_min: p.len_min,
            len_max: p.len_max,
            concentration: p.concentration,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn feat_dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vocab_size;
        if self.transitions.shape() != [v, v] || self.start.len() != v || self.prototypes.rows() != v {
            return invalid("domain spec tensors disagree with the vocabulary size");
        }
        if self.prototypes.shape().len() != 2 || self.feat_dim() == 0 {
            return invalid("prototypes must be a non-empty [V, feat_dim] matrix");
        }
        let rows = (0..v).map(|i| self.transitions.row(i)).chain(std::iter::once(self.start.as_slice()));
        for (i, row) in rows.enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return invalid(format!("transition row {i} is not a distribution (sum {total})"));
            }
            if row[UNK_ID] != 0.0 {
                return invalid(format!("transition row {i} generates <unk>"));
            }
        }
        if self.frames_min < 1 || self.frames_max < self.frames_min {
            return invalid(format!(
                "frames per token range [{}, {}] is invalid",
                self.frames_min, self.frames_max
            ));
        }
        if self.len_min < 1 || self.len_max < self.len_min {
            return invalid(format!("sentence length range [{}, {}] is invalid", self.len_min, self.len_max));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return invalid("concentration must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return invalid(format!("noise scale must be >= 0, got {}", self.noise));
        }
        if !self.prototypes.all_finite() {
            return invalid("prototypes must be finite");
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        for (k, v) in [
            ("kind", "domain".to_string()),
            ("seed", self.seed.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("frames_min", self.frames_min.to_string()),
            ("frames_max", self.frames_max.to_string()),
            ("noise", format!("{:?}", self.noise)),
            ("len_min", self.len_min.to_string()),
            ("len_max", self.len_max.to_string()),
            ("concentration", format!("{:?}", self.concentration)),
        ] {
            c.metadata.insert(k.to_string(), v);
        }
        c.tensors.insert("transitions".into(), self.transitions.clone());
        c.tensors.insert("start".into(), Tensor::vector(self.start.clone()));
        c.tensors.insert("prototypes".into(), self.prototypes.clone());
        c
    }

    pub fn from_container(c: &Container, origin: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: origin.to_string(),
            reason,
        };
        let num = |key: &str| -> Result<String> {
            c.metadata.get(key).cloned().ok_or_else(|| bad(format!("missing `{key}`")))
        };
        let parse_usize = |key: &str| -> Result<usize> { num(key)?.parse().map_err(|_| bad(format!("bad `{key}`"))) };
        let tensor = |key: &str| -> Result<Tensor> { c.tensors.get(key).cloned().ok_or_else(|| bad(format!("missing tensor `{key}`"))) };
        if c.metadata.get("kind").map(String::as_str) != Some("domain") {
            return Err(bad("not a domain spec".into()));
        }
        let spec = DomainSpec {
            seed: num("seed")?.parse().map_err(|_| bad("bad `seed`".into()))?,
            vocab_size: parse_usize("vocab_size")?,
            transitions: tensor("transitions")?,
            start: tensor("start")?.into_data(),
            prototypes: tensor("prototypes")?,
            frames_min: parse_usize("frames_min")?,
            frames_max: parse_usize("frames_max")?,
            noise: num("noise")?.parse().map_err(|_| bad("bad `noise`".into()))?,
            len_min: parse_usize("len_min")?,
            len_max: parse_usize("len_max")?,
            concentration: num("concentration")?.parse().map_err(|_| bad("bad `concentration`".into()))?,
        };
        spec.validate().map_err(|e| bad(e.to_string()))?;
        Ok(spec)
    }
}

/// Samples `n_utts` utterances. Utterance `i` uses its own random stream derived from
/// `(corpus_seed, i)`, so any prefix of a larger corpus is identical.
pub fn generate_domain(spec: &DomainSpec, n_utts: usize, corpus_seed: u64) -> Result<(Vec<Utterance>, TextCorpus)> {
    spec.validate()?;
    if n_utts == 0 {
        return invalid("n_utts must be >= 1");
    }
    let dist = |row: &[f64]| WeightedIndex::new(row).map_err(|e| Error::Invalid(format!("bad transition row: {e}")));
    let start = dist(&spec.start)?;
    let rows = (0..spec.vocab_size)
        .map(|i| dist(spec.transitions.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let feat_dim = spec.feat_dim();
    let mut utts = Vec::with_capacity(n_utts);
    for i in 0..n_utts {
        let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed);
        rng.set_stream(i as u64);
        let len = rng.random_range(spec.len_min..=spec.len_max);
        let mut tokens = Vec::with_capacity(len);
        let mut cur = start.sample(&mut rng);
        tokens.push(cur);
        while tokens.len() < len {
            cur = rows[cur].sample(&mut rng);
            tokens.push(cur);
        }
        let mut data = Vec::new();
        for &tok in &tokens {
            let frames = rng.random_range(spec.frames_min..=spec.frames_max);
            for _ in 0..frames {
                for &p in spec.prototypes.row(tok) {
                    let eps: f64 = rng.sample(StandardNormal);
                    data.push(if spec.noise == 0.0 { p } else { p + spec.noise * eps });
                }
            }
        }
        let t = data.len() / feat_dim;
        utts.push(Utterance {
            id: format!("utt{i:06}"),
            feats: Tensor::new(vec![t, feat_dim], data)?,
            transcript: tokens,
        });
    }
    let corpus = TextCorpus::new(utts.iter().map(|u| u.transcript.clone()).collect(), spec.vocab_size)?;
    Ok((utts, corpus))
}

/// Same acoustics; bigram rows (and start distribution) blended toward an
/// independently seeded language: `(1 - shift) * src + shift * alt`.
pub fn make_shifted_domain(src: &DomainSpec, shift: f64) -> Result<DomainSpec> {
    if !(0.0..=1.0).contains(&shift) {
        return invalid(format!("shift must lie in [0, 1], got {shift}"));
    }
    src.validate()?;
    if shift == 0.0 {
        return Ok(src.clone());
    }
    let (alt, alt_start) = sample_language(src.vocab_size, src.concentration, shifted_seed(src.seed));
    let blend = |a: &[f64], b: &[f64]| -> Vec<f64> {
        if shift == 1.0 {
            return b.to_vec();
        }
        a.iter().zip(b).map(|(x, y)| (1.0 - shift) * x + shift * y).collect()
    };
    let rows: Vec<Vec<f64>> = (0..src.vocab_size).map(|i| blend(src.transitions.row(i), alt.row(i))).collect();
    let mut out = src.clone();
    out.transitions = Tensor::from_rows(&rows)?;
    out.start = blend(&src.start, &alt_start);
    out.validate()?;
    Ok(out)
}

/// `KL(p || q)` in nats over the support of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// Total-variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
