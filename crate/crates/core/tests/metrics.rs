use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transducer_core::metrics::{average_checkpoints, corpus_wer, edit_distance, EditCounts};
use transducer_core::models::{Arch, ModelBundle, ModelConfig};

fn counts(s: usize, i: usize, d: usize) -> EditCounts {
    EditCounts {
        substitutions: s,
        insertions: i,
        deletions: d,
    }
}

#[test]
fn edit_distance_known_cases() {
    assert_eq!(edit_distance::<usize>(&[], &[]), counts(0, 0, 0));
    assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), counts(0, 0, 0));
    assert_eq!(edit_distance(&[1, 2, 3], &[]), counts(0, 0, 3));
    assert_eq!(edit_distance(&[], &[4, 5]), counts(0, 2, 0));
    assert_eq!(edit_distance(&[1, 2, 3], &[1, 9, 3]), counts(1, 0, 0));
    assert_eq!(edit_distance(&[1, 2, 3], &[1, 3]), counts(0, 0, 1));
    assert_eq!(edit_distance(&[1, 2], &[3, 1, 2]), counts(0, 1, 0));
    // two edits either way; substitutions are preferred over insert+delete
    assert_eq!(edit_distance(&[1, 2], &[2, 3]), counts(2, 0, 0));
    assert_eq!(edit_distance(&"kitten".chars().collect::<Vec<_>>(), &"sitting".chars().collect::<Vec<_>>()), counts(2, 1, 0));
}

#[test]
fn corpus_wer_pools_counts() {
    let refs = vec![vec![1, 2, 3, 4], vec![5]];
    let hyps = vec![vec![1, 2, 3, 4], vec![6, 7]];
    let r = corpus_wer(&refs, &hyps).unwrap();
    assert_eq!(r.counts, counts(1, 1, 0));
    assert_eq!(r.reference_len, 5);
    assert_eq!(r.utterances, 2);
    // pooled 2/5, not the mean of 0 and 2
    assert!((r.wer() - 0.4).abs() < 1e-15);
    assert!(corpus_wer(&refs, &hyps[..1]).is_err());
    let empty: Vec<Vec<usize>> = vec![vec![]];
    assert_eq!(corpus_wer(&empty, &empty).unwrap().wer(), 0.0);
}

fn seq() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..4, 0..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn edit_distance_is_symmetric(a in seq(), b in seq()) {
        let ab = edit_distance(&a, &b);
        let ba = edit_distance(&b, &a);
        prop_assert_eq!(ab.substitutions, ba.substitutions);
        prop_assert_eq!(ab.insertions, ba.deletions);
        prop_assert_eq!(ab.deletions, ba.insertions);
    }

    #[test]
    fn edit_distance_is_a_metric(a in seq(), b in seq(), c in seq()) {
        let d = |x: &[usize], y: &[usize]| edit_distance(x, y).total();
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) <= a.len().max(b.len()));
        prop_assert!(d(&a, &b) >= a.len().abs_diff(b.len()));
        let e = edit_distance(&a, &b);
        prop_assert_eq!(e.insertions as isize - e.deletions as isize, b.len() as isize - a.len() as isize);
    }
}

fn tiny(arch: Arch) -> ModelConfig {
    ModelConfig {
        arch,
        vocab_size: 5,
        joint_dim: 6,
        feat_dim: 3,
        enc_width: 6,
        enc_layers: 1,
        dec_width: 6,
        embed_dim: 3,
        lambda_f: 0.2,
    }
}

fn perturbed(seed: u64, step: u64) -> ModelBundle {
    let mut m = ModelBundle::init(tiny(Arch::Ifnt), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in m.params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-1.0..1.0));
    }
    m.params.set_step(step);
    m
}

#[test]
fn averaging_is_the_elementwise_mean() {
    let ms: Vec<_> = (0..4).map(|i| perturbed(i, 100 * (i + 1))).collect();
    let avg = average_checkpoints(&ms).unwrap();
    for (name, p) in avg.params.iter() {
        for (k, &x) in p.value.data().iter().enumerate() {
            let mean = ms.iter().map(|m| m.params.value(name).data()[k]).sum::<f64>() / 4.0;
            assert!((x - mean).abs() <= 1e-12 * mean.abs().max(1.0), "{name}[{k}]");
        }
    }
    assert_eq!(avg.step(), 400);
    assert_eq!(avg.extra["averaged_steps"], "100,200,300,400");
    assert_eq!(avg.config, ms[0].config);
}

#[test]
fn averaging_ignores_argument_order() {
    let ms: Vec<_> = (0..5).map(|i| perturbed(i, 10)).collect();
    let a = average_checkpoints(&ms).unwrap();
    let mut rev = ms.clone();
    rev.reverse();
    rev.swap(0, 2);
    let b = average_checkpoints(&rev).unwrap();
    assert_eq!(a, b);
}

#[test]
fn averaging_identical_checkpoints_is_identity() {
    let m = perturbed(7, 42);
    for n in 1..=6 {
        let avg = average_checkpoints(&vec![m.clone(); n]).unwrap();
        assert_eq!(avg.params, m.params);
        assert_eq!(avg.step(), 42);
        for (name, p) in avg.params.iter() {
            assert!(p.value.bitwise_eq(m.params.value(name)));
        }
    }
}

#[test]
fn averaging_rejects_mismatched_configs() {
    let a = ModelBundle::init(tiny(Arch::Ifnt), 0).unwrap();
    let b = ModelBundle::init(ModelConfig { joint_dim: 7, ..tiny(Arch::Ifnt) }, 0).unwrap();
    let err = average_checkpoints(&[a.clone(), b]).unwrap_err();
    assert_eq!(err.kind(), "config-mismatch");
    assert!(err.to_string().contains("joint_dim"), "{err}");
    let c = ModelBundle::init(tiny(Arch::Fnt), 0).unwrap();
    assert!(average_checkpoints(&[a, c]).unwrap_err().to_string().contains("arch"));
    assert!(average_checkpoints(&[]).is_err());
}
