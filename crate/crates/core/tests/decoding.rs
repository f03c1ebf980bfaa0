use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transducer_core::decoding::{
    beam_search, beam_search_detailed, fuse_score, greedy_decode, greedy_search, max_labels,
    sort_hypotheses, FusionConfig,
};
use transducer_core::models::{Arch, ModelBundle, ModelConfig};
use transducer_core::Tensor;

fn cfg(arch: Arch) -> ModelConfig {
    ModelConfig {
        arch,
        vocab_size: 6,
        joint_dim: 8,
        feat_dim: 4,
        enc_width: 8,
        enc_layers: 1,
        dec_width: 8,
        embed_dim: 4,
        lambda_f: 0.1,
    }
}

/// Random model with enough spread that decoding emits tokens.
fn model(arch: Arch, seed: u64) -> ModelBundle {
    let mut m = ModelBundle::init(cfg(arch), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    for (_, p) in m.params.iter_mut() {
        for v in p.value.data_mut() {
            *v = *v * 2.0 + rng.random_range(-0.5..0.5);
        }
    }
    m
}

fn feats(t: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![t, 4], (0..t * 4).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

const ARCHS: [Arch; 3] = [Arch::Nt, Arch::Fnt, Arch::Ifnt];

#[test]
fn beam_of_one_equals_greedy() {
    let mut emitted = 0;
    for arch in ARCHS {
        let m = model(arch, 3);
        for i in 0..50 {
            let x = feats(1 + i % 7, 100 + i as u64);
            let g = greedy_search(&m, &x).unwrap().hypotheses.remove(0);
            let b = beam_search(&m, &x, 1, None).unwrap().remove(0);
            assert_eq!(g.tokens, b.tokens, "{arch} input {i}");
            assert!((g.e2e_logscore - b.e2e_logscore).abs() < 1e-12);
            emitted += g.tokens.len();
        }
    }
    assert!(emitted > 0, "random models should emit something");
}

#[test]
fn blank_dominant_model_decodes_to_nothing() {
    let mut m = model(Arch::Nt, 1);
    m.params.value_mut("joint.out.bias").data_mut()[6] = 100.0;
    assert!(greedy_decode(&m, &feats(5, 1)).unwrap().is_empty());
    assert!(beam_search(&m, &feats(5, 1), 4, None).unwrap()[0].tokens.is_empty());
}

#[test]
fn single_frame_forced_path() {
    // LM predicts token 1 strongly after start-of-sequence and nothing in particular
    // afterwards; a constant blank logit of -1 sits between the two.
    let c = ModelConfig {
        arch: Arch::Fnt,
        vocab_size: 3,
        dec_width: 2,
        embed_dim: 2,
        ..cfg(Arch::Fnt)
    };
    let mut m = ModelBundle::init(c, 0).unwrap();
    for name in ["vocab_joint.enc_proj.weight", "vocab_joint.enc_proj.bias", "blank_joint.out.weight"] {
        m.params.value_mut(name).fill(0.0);
    }
    m.params.value_mut("blank_joint.out.bias").data_mut()[0] = -1.0;
    *m.params.value_mut("vocab_lm.embedding") =
        Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 5.0], vec![0.0, 0.0], vec![5.0, 0.0]]).unwrap();
    *m.params.value_mut("vocab_lm.rnn.weight") =
        Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    m.params.value_mut("vocab_lm.rnn.bias").fill(0.0);
    *m.params.value_mut("vocab_lm.out.weight") =
        Tensor::from_rows(&[vec![0.0, 10.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0]]).unwrap();
    m.params.value_mut("vocab_lm.out.bias").fill(0.0);

    let x = feats(1, 3);
    assert_eq!(greedy_decode(&m, &x).unwrap(), vec![1]);
    assert_eq!(beam_search(&m, &x, 1, None).unwrap()[0].tokens, vec![1]);
    // a wider beam finds the better-scoring empty path: blank alone costs less than
    // token 1 followed by blank
    let wide = beam_search(&m, &x, 3, None).unwrap();
    assert!(wide[0].tokens.is_empty());
    assert!(wide.iter().any(|h| h.tokens == [1]));
}

#[test]
fn caps_bound_emissions_and_joint_evaluations() {
    // a model that always prefers token 0 hits both caps
    let mut m = model(Arch::Nt, 2);
    m.params.value_mut("joint.out.bias").data_mut()[0] = 100.0;
    for t in [1usize, 2, 3, 8] {
        let x = feats(t, 4);
        let g = greedy_search(&m, &x).unwrap();
        assert_eq!(g.hypotheses[0].tokens.len(), max_labels(t).min(5 * t));
        assert!(g.joint_evals <= t * (max_labels(t) + 1));
        for beam in [1usize, 3] {
            let out = beam_search_detailed(&m, &x, beam, None).unwrap();
            assert!(out.hypotheses[0].tokens.len() <= max_labels(t));
            // widths 1..=beam are each searched once
            let passes = beam * (beam + 1) / 2;
            assert!(out.joint_evals <= passes * t * (max_labels(t) + 1));
        }
    }
}

#[test]
fn beam_search_rejects_bad_arguments() {
    let m = model(Arch::Nt, 1);
    let x = feats(3, 1);
    assert!(beam_search(&m, &x, 0, None).is_err());
    let lm = ModelBundle::init(ModelConfig { arch: Arch::Lm, vocab_size: 7, ..cfg(Arch::Lm) }, 0).unwrap();
    let fusion = FusionConfig { lambda_t: 0.3, external_lm: &lm };
    let err = beam_search(&m, &x, 2, Some(&fusion)).unwrap_err();
    assert_eq!(err.kind(), "config-mismatch");
    let not_lm = model(Arch::Fnt, 1);
    let fusion = FusionConfig { lambda_t: 0.3, external_lm: &not_lm };
    assert!(beam_search(&m, &x, 2, Some(&fusion)).is_err());
}

#[test]
fn zero_fusion_weight_keeps_ranking() {
    let lm = model(Arch::Lm, 9);
    for arch in ARCHS {
        let m = model(arch, 5);
        for i in 0..10 {
            let x = feats(4 + i % 3, 50 + i as u64);
            let plain = beam_search(&m, &x, 4, None).unwrap();
            let fused = beam_search(&m, &x, 4, Some(&FusionConfig { lambda_t: 0.0, external_lm: &lm })).unwrap();
            let a: Vec<_> = plain.iter().map(|h| (h.tokens.clone(), h.e2e_logscore)).collect();
            let b: Vec<_> = fused.iter().map(|h| (h.tokens.clone(), h.e2e_logscore)).collect();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn fusion_scores_tokens_with_the_external_lm() {
    let lm = model(Arch::Lm, 9);
    let m = model(Arch::Nt, 5);
    let x = feats(5, 1);
    let hyps = beam_search(&m, &x, 4, Some(&FusionConfig { lambda_t: 0.5, external_lm: &lm })).unwrap();
    for h in &hyps {
        let expected = if h.tokens.is_empty() {
            0.0
        } else {
            -transducer_core::models::lm_sentence_loss(&mut lm.clone(), &h.tokens, false).unwrap()
                - eos_logprob(&lm, &h.tokens)
        };
        assert!((h.lm_logscore - expected).abs() < 1e-9, "{} vs {}", h.lm_logscore, expected);
    }
    for w in hyps.windows(2) {
        assert!(fuse_score(&w[0], 0.5) >= fuse_score(&w[1], 0.5));
    }
}

/// `log P(EOS | tokens)`, which the sentence loss includes and fusion does not.
fn eos_logprob(lm: &ModelBundle, tokens: &[usize]) -> f64 {
    let out = transducer_core::models::vocab_lm_logprobs(lm, tokens).unwrap();
    out.with_eos.get2(tokens.len(), lm.config.eos_id())
}

#[test]
fn decoding_is_deterministic() {
    let lm = model(Arch::Lm, 9);
    let m = model(Arch::Ifnt, 6);
    let x = feats(6, 2);
    let f = FusionConfig { lambda_t: 0.2, external_lm: &lm };
    let a = beam_search(&m, &x, 5, Some(&f)).unwrap();
    let b = beam_search(&m, &x, 5, Some(&f)).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.tokens, y.tokens);
        assert_eq!(x.e2e_logscore.to_bits(), y.e2e_logscore.to_bits());
        assert_eq!(x.lm_logscore.to_bits(), y.lm_logscore.to_bits());
    }
}

#[test]
fn constant_lm_offset_keeps_fused_ranking() {
    let m = model(Arch::Fnt, 4);
    let mut hyps = beam_search(&m, &feats(6, 8), 5, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for h in hyps.iter_mut() {
        h.lm_logscore = rng.random_range(-5.0..0.0);
    }
    sort_hypotheses(&mut hyps, 0.4);
    let before: Vec<_> = hyps.iter().map(|h| h.tokens.clone()).collect();
    for h in hyps.iter_mut() {
        h.lm_logscore -= 3.25;
    }
    sort_hypotheses(&mut hyps, 0.4);
    let after: Vec<_> = hyps.iter().map(|h| h.tokens.clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn wider_beams_never_find_worse_best_scores() {
    let lm = model(Arch::Lm, 9);
    let mut checked = 0;
    for arch in ARCHS {
        let m = model(arch, 12);
        for i in 0..8 {
            let x = feats(3 + i % 4, 300 + i as u64);
            for lambda_t in [0.0, 0.3] {
                let f = FusionConfig { lambda_t, external_lm: &lm };
                let mut prev = f64::NEG_INFINITY;
                for beam in 1..=5 {
                    let best = &beam_search(&m, &x, beam, Some(&f)).unwrap()[0];
                    let score = fuse_score(best, lambda_t);
                    assert!(score >= prev - 1e-12, "{arch} input {i} beam {beam}: {score} < {prev}");
                    prev = score;
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 3 * 8 * 2 * 5);
}

#[test]
fn ifnt_lm_changes_move_decoding_with_acoustics_frozen() {
    let m = model(Arch::Ifnt, 7);
    let inputs: Vec<Tensor> = (0..20).map(|i| feats(6, 700 + i)).collect();
    let before: Vec<_> = inputs.iter().map(|x| greedy_decode(&m, x).unwrap()).collect();
    let mut shifted = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (name, p) in shifted.params.iter_mut() {
        if name.starts_with("vocab_lm.") {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-1.5..1.5));
        }
    }
    let after: Vec<_> = inputs.iter().map(|x| greedy_decode(&shifted, x).unwrap()).collect();
    assert!(before != after);
}
