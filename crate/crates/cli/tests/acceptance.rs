//! Acceptance suite: runs every criterion and prints one PASS/FAIL line each.
//! Criteria 7-9 run the full pipeline (make-data, train, average, adapt, LM
//! training, decode, eval) on five seeds; criterion 12 drives the binary twice.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transducer_cli::commands::{
    adapt_cmd, average_cmd, decode_cmd, eval_cmd, make_data, train_cmd, AVERAGED_CHECKPOINT,
    CHECKPOINT_DIR, SOURCE_DEV, TARGET_DEV, TARGET_TEST,
};
use transducer_cli::ExperimentConfig;
use transducer_core::data::{batchify, generate_domain, DomainSpec, SyntheticParams, Utterance};
use transducer_core::decoding::{beam_search, greedy_search, FusionConfig};
use transducer_core::metrics::average_checkpoints;
use transducer_core::models::{compute_loss, lattice, Arch, ModelBundle, ModelConfig};
use transducer_core::numerics::{grad_check, logsumexp, ParamStore, Tensor};
use transducer_core::rnnt_loss::{brute_force_loss, forward_backward, EmissionLattice};
use transducer_core::training::batch_loss;

type Outcome = Result<String, String>;

const ARCHS: [Arch; 3] = [Arch::Nt, Arch::Fnt, Arch::Ifnt];
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_logits(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
}

fn normalized(mut logits: Tensor) -> Tensor {
    let k = *logits.shape().last().unwrap();
    for cell in logits.data_mut().chunks_mut(k) {
        let z = logsumexp(cell);
        cell.iter_mut().for_each(|x| *x -= z);
    }
    logits
}

fn loss_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let t = rng.random_range(1..=5);
        let u = rng.random_range(0..=4);
        let v = rng.random_range(1..=4);
        let target: Vec<usize> = (0..u).map(|_| rng.random_range(0..v)).collect();
        let logp = normalized(random_logits(&mut rng, &[t, u + 1, v + 1]));
        let lat = EmissionLattice::new(logp, target).map_err(|e| e.to_string())?;
        let (_, loglik) = forward_backward(&lat).map_err(|e| e.to_string())?;
        let oracle = brute_force_loss(&lat).map_err(|e| e.to_string())?;
        worst = worst.max((-loglik - oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-9 && secs < 10.0, format!("max |dp - enumeration| = {worst:.2e} in {secs:.2}s"))
}

fn tiny(arch: Arch) -> ModelConfig {
    ModelConfig {
        arch,
        vocab_size: 5,
        joint_dim: 8,
        feat_dim: 3,
        enc_width: 6,
        enc_layers: 1,
        dec_width: 5,
        embed_dim: 3,
        lambda_f: 0.3,
    }
}

fn perturbed(cfg: ModelConfig, seed: u64) -> ModelBundle {
    let mut m = ModelBundle::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 17);
    for (_, p) in m.params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    m
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lines = Vec::new();
    let mut ok = true;
    for arch in ARCHS {
        let mut m = perturbed(tiny(arch), 3);
        let feats = random_logits(&mut rng, &[4, 3]);
        let target = [1usize, 4, 2];
        let mut params = std::mem::take(&mut m.params);
        let report = grad_check(
            |p: &mut ParamStore| {
                std::mem::swap(&mut m.params, p);
                let l = compute_loss(&mut m, &feats, &target).unwrap().j_f;
                std::mem::swap(&mut m.params, p);
                l
            },
            &mut params,
            1e-5,
        );
        ok &= report.max_rel_error < 1e-4;
        lines.push(format!("{arch} {:.1e} ({} entries)", report.max_rel_error, report.entries_checked));
    }
    let secs = start.elapsed().as_secs_f64();
    check(ok && secs < 60.0, format!("max rel error {} in {secs:.2}s", lines.join(", ")))
}

fn uniform_lattices() -> Outcome {
    let cases: [(usize, &[usize], f64); 3] = [
        (1, &[], 3f64.ln()),
        (2, &[1], (27.0f64 / 2.0).ln()),
        (3, &[0, 1], (243.0f64 / 6.0).ln()),
    ];
    let mut worst = 0.0f64;
    for (t, target, expected) in cases {
        let logp = Tensor::full(&[t, target.len() + 1, 3], -(3f64.ln()));
        let lat = EmissionLattice::new(logp, target.to_vec()).map_err(|e| e.to_string())?;
        let (_, loglik) = forward_backward(&lat).map_err(|e| e.to_string())?;
        worst = worst.max((-loglik - expected).abs());
    }
    check(worst < 1e-10, format!("max deviation from ln 3, ln 27/2, ln 243/6: {worst:.2e}"))
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut cells = 0;
    for arch in ARCHS {
        for s in 0..20 {
            let m = perturbed(tiny(arch), s);
            let t = rng.random_range(1..=6);
            let u = rng.random_range(0..=4);
            let target: Vec<usize> = (0..u).map(|_| rng.random_range(0..5)).collect();
            let lat = lattice(&m, &random_logits(&mut rng, &[t, 3]), &target).map_err(|e| e.to_string())?;
            for cell in lat.logp().data().chunks(6) {
                worst = worst.max((logsumexp(cell).exp() - 1.0).abs());
                cells += 1;
            }
        }
    }
    check(worst < 1e-8, format!("{cells} cells, max |sum - 1| = {worst:.2e}"))
}

fn toy_utterances(n: usize, seed: u64) -> Vec<Utterance> {
    let spec = DomainSpec::synthetic(&SyntheticParams {
        vocab_size: 5,
        feat_dim: 3,
        frames_min: 1,
        frames_max: 2,
        len_min: 1,
        len_max: 3,
        ..SyntheticParams::default()
    })
    .unwrap();
    generate_domain(&spec, n, seed).unwrap().0
}

fn objective_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut exact_zero = true;
    for (i, arch) in ARCHS.into_iter().enumerate() {
        for s in 0..5u64 {
            let utts = toy_utterances(6, 100 + s);
            let batch = batchify(&utts, 6, 8).unwrap().remove(0);
            let mut m = perturbed(ModelConfig { lambda_f: 0.1 + 0.2 * s as f64, ..tiny(arch) }, s + i as u64);
            let (l, _) = batch_loss(&mut m, &batch, true).map_err(|e| e.to_string())?;
            worst = worst.max((l.j_f - (l.j_t + l.lambda_f * l.lm_ce)).abs());
            let mut z = perturbed(ModelConfig { lambda_f: 0.0, ..tiny(arch) }, s);
            let (l0, _) = batch_loss(&mut z, &batch, false).map_err(|e| e.to_string())?;
            exact_zero &= l0.j_f.to_bits() == l0.j_t.to_bits();
        }
    }
    check(
        worst < 1e-12 && exact_zero,
        format!("max |J_f - J_t - lambda_f lm_ce| = {worst:.2e}; lambda_f = 0 exact: {exact_zero}"),
    )
}

fn decoding_consistency() -> Outcome {
    let utts = toy_utterances(50, 5);
    let lm = perturbed(tiny(Arch::Lm), 9);
    let mut mismatches = 0;
    let mut rank_changes = 0;
    for arch in ARCHS {
        let m = perturbed(tiny(arch), 21);
        for u in &utts {
            let g = greedy_search(&m, &u.feats).map_err(|e| e.to_string())?.hypotheses.remove(0);
            let b = beam_search(&m, &u.feats, 1, None).map_err(|e| e.to_string())?.remove(0);
            mismatches += usize::from(g.tokens != b.tokens || g.e2e_logscore != b.e2e_logscore);
            let plain = beam_search(&m, &u.feats, 4, None).map_err(|e| e.to_string())?;
            let fused = beam_search(&m, &u.feats, 4, Some(&FusionConfig { lambda_t: 0.0, external_lm: &lm }))
                .map_err(|e| e.to_string())?;
            let key = |h: &[transducer_core::decoding::Hypothesis]| -> Vec<(Vec<usize>, u64)> {
                h.iter().map(|x| (x.tokens.clone(), x.e2e_logscore.to_bits())).collect()
            };
            rank_changes += usize::from(key(&plain) != key(&fused));
        }
    }
    check(
        mismatches == 0 && rank_changes == 0,
        format!("150 inputs: beam=1 vs greedy mismatches {mismatches}, lambda_T=0 ranking changes {rank_changes}"),
    )
}

// ---------------------------------------------------------------------------
// Pipeline criteria (7-11)

struct Stage<'a> {
    base: &'a ExperimentConfig,
}

impl Stage<'_> {
    fn cfg(&self, out: &Path, sets: &[(&str, String)]) -> ExperimentConfig {
        let mut overrides: Vec<String> = sets.iter().map(|(k, v)| format!("{k}={v}")).collect();
        overrides.push(format!("out_dir={:?}", out.display().to_string()));
        let mut table: toml::Table = toml::from_str(&self.base.to_toml()).unwrap();
        for o in &overrides {
            transducer_cli::config::apply_override(&mut table, o).unwrap();
        }
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().unwrap();
        cfg.validate().unwrap();
        cfg
    }
}

fn q(p: &Path) -> String {
    format!("{:?}", p.display().to_string())
}

#[derive(Debug, Default, Clone)]
struct SeedResult {
    source_dev: BTreeMap<&'static str, f64>,
    target_test: BTreeMap<&'static str, f64>,
    adapted_target: BTreeMap<&'static str, f64>,
    adapted_source: BTreeMap<&'static str, f64>,
    ppl_before: BTreeMap<&'static str, f64>,
    ppl_after: BTreeMap<&'static str, f64>,
    fused_lambda: f64,
    fused_target: f64,
    frozen_identical: bool,
    frozen_checked: usize,
    averaging_error: f64,
    averaging_identity: bool,
}

fn wer_of(stage: &Stage, dir: &Path, ckpt: &Path, manifest: &Path, lm: Option<(&Path, f64)>) -> Result<f64, String> {
    let mut sets = vec![("paths.checkpoint", q(ckpt)), ("paths.manifest", q(manifest))];
    if let Some((lm, lambda)) = lm {
        sets.push(("paths.external_lm", q(lm)));
        sets.push(("decode.lambda_t", lambda.to_string()));
    }
    let cfg = stage.cfg(dir, &sets);
    let hyp = decode_cmd(&cfg).map_err(|e| format!("{e:#}"))?.hyp_file;
    let eval = stage.cfg(&dir.join("eval"), &[("paths.hyp", q(&hyp)), ("paths.reference", q(manifest))]);
    let r = eval_cmd(&eval).map_err(|e| format!("{e:#}"))?;
    Ok(100.0 * r.wer.expect("wer requested").wer())
}

fn ppl_of(stage: &Stage, dir: &Path, ckpt: &Path, text: &Path) -> Result<f64, String> {
    let cfg = stage.cfg(dir, &[("paths.checkpoint", q(ckpt)), ("paths.text", q(text))]);
    Ok(eval_cmd(&cfg).map_err(|e| format!("{e:#}"))?.ppl.expect("ppl requested"))
}

fn run_seed(root: &Path, seed: u64) -> Result<SeedResult, String> {
    let err = |e: anyhow::Error| format!("seed {seed}: {e:#}");
    let mut base = ExperimentConfig::default();
    base.seed = seed;
    let data = root.join("data");
    base.paths.data_dir = data.clone();
    base.out_dir = data.clone();
    make_data(&base).map_err(err)?;
    let stage = Stage { base: &base };
    let manifest = |name: &str| data.join(format!("{name}.tsv"));
    let mut res = SeedResult::default();

    let mut averaged = BTreeMap::new();
    for arch in ARCHS {
        let name = arch.as_str();
        let dir = root.join(name);
        train_cmd(&stage.cfg(&dir, &[("model.arch", q(Path::new(name)))])).map_err(err)?;
        let avg = average_cmd(&stage.cfg(&dir, &[("paths.checkpoint_dir", q(&dir.join(CHECKPOINT_DIR)))])).map_err(err)?;
        assert_eq!(avg, dir.join(AVERAGED_CHECKPOINT));
        res.source_dev
            .insert(name, wer_of(&stage, &dir.join("dec_src"), &avg, &manifest(SOURCE_DEV), None)?);
        res.target_test
            .insert(name, wer_of(&stage, &dir.join("dec_tgt"), &avg, &manifest(TARGET_TEST), None)?);
        averaged.insert(name, avg);
    }

    // Checkpoint averaging of the last five NT checkpoints, recomputed here.
    let ckpts: Vec<ModelBundle> = {
        let mut files: Vec<PathBuf> = fs::read_dir(root.join("nt").join(CHECKPOINT_DIR))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files[files.len() - 5..].iter().map(|p| ModelBundle::load(p).unwrap()).collect()
    };
    let avg = ModelBundle::load(&averaged["nt"]).unwrap();
    for (name, p) in avg.params.iter() {
        for (k, &x) in p.value.data().iter().enumerate() {
            let mean = ckpts.iter().map(|c| c.params.value(name).data()[k]).sum::<f64>() / ckpts.len() as f64;
            res.averaging_error = res.averaging_error.max((x - mean).abs() / mean.abs().max(1.0));
        }
    }
    let same = average_checkpoints(&vec![ckpts[4].clone(); 5]).unwrap();
    res.averaging_identity = same.params == ckpts[4].params && same.step() == ckpts[4].step();

    // Text-only adaptation of the factorized models.
    let text = data.join("target_train.txt");
    let test_text = data.join(format!("{TARGET_TEST}.txt"));
    for arch in [Arch::Fnt, Arch::Ifnt] {
        let name = arch.as_str();
        let dir = root.join(format!("{name}_adapted"));
        let before = &averaged[name];
        res.ppl_before.insert(name, ppl_of(&stage, &dir.join("ppl0"), before, &test_text)?);
        let out = adapt_cmd(&stage.cfg(&dir, &[("paths.checkpoint", q(before)), ("paths.text", q(&text))])).map_err(err)?;
        res.ppl_after.insert(name, ppl_of(&stage, &dir.join("ppl1"), &out.checkpoint, &test_text)?);
        res.adapted_target
            .insert(name, wer_of(&stage, &dir.join("dec_tgt"), &out.checkpoint, &manifest(TARGET_TEST), None)?);
        res.adapted_source
            .insert(name, wer_of(&stage, &dir.join("dec_src"), &out.checkpoint, &manifest(SOURCE_DEV), None)?);
        let a = ModelBundle::load(before).unwrap();
        let b = ModelBundle::load(&out.checkpoint).unwrap();
        res.frozen_identical = arch == Arch::Fnt || res.frozen_identical;
        for (n, p) in a.params.iter().filter(|(n, _)| !n.starts_with("vocab_lm.")) {
            res.frozen_identical &= p.value.bitwise_eq(b.params.value(n));
            res.frozen_checked += 1;
        }
    }

    // Shallow fusion for NT: external LM on target text, lambda_T tuned on target dev.
    let lm_dir = root.join("lm");
    let lm = train_cmd(&stage.cfg(&lm_dir, &[("model.arch", "\"lm\"".into()), ("paths.text", q(&text))]))
        .map_err(err)?
        .final_checkpoint;
    let mut best = (f64::INFINITY, 0.0);
    for lambda in [0.0, 0.1, 0.3] {
        let w = wer_of(&stage, &lm_dir.join(format!("dev_{lambda}")), &averaged["nt"], &manifest(TARGET_DEV), Some((&lm, lambda)))?;
        if w < best.0 {
            best = (w, lambda);
        }
    }
    res.fused_lambda = best.1;
    res.fused_target = wer_of(&stage, &lm_dir.join("test"), &averaged["nt"], &manifest(TARGET_TEST), Some((&lm, best.1)))?;
    Ok(res)
}

fn fmt_map(m: &BTreeMap<&'static str, f64>) -> String {
    m.iter().map(|(k, v)| format!("{k} {v:.2}")).collect::<Vec<_>>().join(", ")
}

fn pipeline_criteria(results: &[SeedResult], elapsed: f64) -> Vec<(u32, &'static str, Outcome)> {
    let first = &results[0];
    let dev = &first.source_dev;
    let spread = dev.values().cloned().fold(f64::NEG_INFINITY, f64::max) - dev.values().cloned().fold(f64::INFINITY, f64::min);
    let c7 = check(
        dev.values().all(|&w| w < 10.0) && spread <= 3.0,
        format!("seed 1 source-dev WER: {} (spread {spread:.2})", fmt_map(dev)),
    );

    let mut failures = Vec::new();
    let mut ifnt_wins = 0;
    for (s, r) in SEEDS.iter().zip(results) {
        for name in ["fnt", "ifnt"] {
            if r.ppl_after[name] >= r.ppl_before[name] {
                failures.push(format!("seed {s} {name} PPL {:.2} -> {:.2}", r.ppl_before[name], r.ppl_after[name]));
            }
            if r.adapted_target[name] >= r.target_test[name] {
                failures.push(format!("seed {s} {name} target WER {:.2} -> {:.2}", r.target_test[name], r.adapted_target[name]));
            }
            if r.adapted_source[name] >= 1.5 * r.source_dev[name] {
                failures.push(format!("seed {s} {name} source WER {:.2} -> {:.2}", r.source_dev[name], r.adapted_source[name]));
            }
        }
        ifnt_wins += usize::from(r.adapted_target["ifnt"] <= r.adapted_target["fnt"]);
    }
    let summary: Vec<String> = results
        .iter()
        .map(|r| {
            format!(
                "PPL fnt {:.1}->{:.1} ifnt {:.1}->{:.1}; tgt WER fnt {:.2}->{:.2} ifnt {:.2}->{:.2}; src WER fnt {:.2}->{:.2} ifnt {:.2}->{:.2}",
                r.ppl_before["fnt"], r.ppl_after["fnt"], r.ppl_before["ifnt"], r.ppl_after["ifnt"],
                r.target_test["fnt"], r.adapted_target["fnt"], r.target_test["ifnt"], r.adapted_target["ifnt"],
                r.source_dev["fnt"], r.adapted_source["fnt"], r.source_dev["ifnt"], r.adapted_source["ifnt"],
            )
        })
        .collect();
    let c8 = check(
        failures.is_empty() && ifnt_wins >= 4 && elapsed < 900.0,
        format!(
            "adapted IFNT <= FNT on {ifnt_wins}/5 seeds; pipeline {elapsed:.0}s; {}{}",
            if failures.is_empty() { "a/b/d hold on all seeds".to_string() } else { format!("violations: {}", failures.join("; ")) },
            summary.iter().enumerate().map(|(i, s)| format!("\n      seed {}: {s}", i + 1)).collect::<String>()
        ),
    );

    let fusion_wins = results.iter().filter(|r| r.fused_target < r.target_test["nt"]).count();
    let c9 = check(
        fusion_wins >= 4,
        format!(
            "NT+LM better on {fusion_wins}/5 seeds: {}",
            results
                .iter()
                .map(|r| format!("{:.2}->{:.2} (lambda_T {})", r.target_test["nt"], r.fused_target, r.fused_lambda))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );

    let frozen = results.iter().all(|r| r.frozen_identical);
    let checked: usize = results.iter().map(|r| r.frozen_checked).sum();
    let c10 = check(frozen, format!("{checked} frozen tensors compared bitwise across 10 adaptations"));

    let avg_err = results.iter().map(|r| r.averaging_error).fold(0.0, f64::max);
    let identity = results.iter().all(|r| r.averaging_identity);
    let c11 = check(
        avg_err < 1e-12 && identity,
        format!("last-5 average max rel deviation {avg_err:.2e}; identical-input identity: {identity}"),
    );
    vec![
        (7, "toy-task learnability", c7),
        (8, "text-only adaptation effect", c8),
        (9, "shallow-fusion effect", c9),
        (10, "freezing contract", c10),
        (11, "checkpoint averaging", c11),
    ]
}

// ---------------------------------------------------------------------------
// Criterion 12: the binary, run twice with the same config and seed.

const SMALL_CONFIG: &str = r#"
seed = 3

[data]
source_train = 40
source_dev = 10
target_text = 40
target_dev = 10
target_test = 10

[train]
steps = 12
checkpoint_every = 4

[adapt]
steps = 5

[lm]
steps = 5

[decode]
nbest = 3
"#;

fn run_bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_transducer"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn run_pipeline_binary(run: &Path) -> Result<(), String> {
    let cfg = run.join("experiment.toml");
    fs::create_dir_all(run).map_err(|e| e.to_string())?;
    fs::write(&cfg, SMALL_CONFIG).map_err(|e| e.to_string())?;
    let c = cfg.to_str().unwrap();
    let p = |x: &str| run.join(x).display().to_string();
    let data = format!("paths.data_dir={:?}", p("data"));
    run_bin(&["make-data", "--config", c, "--out", &p("data")])?;
    for arch in ["nt", "ifnt"] {
        let set = format!("model.arch={arch}");
        run_bin(&["train", "--config", c, "--set", &data, "--set", &set, "--out", &p(arch)])?;
        let dir = format!("paths.checkpoint_dir={:?}", p(&format!("{arch}/checkpoints")));
        run_bin(&["average", "--config", c, "--set", &dir, "--out", &p(arch)])?;
    }
    run_bin(&["train", "--config", c, "--set", &data, "--set", "model.arch=lm", "--out", &p("lm")])?;
    let ifnt = format!("paths.checkpoint={:?}", p("ifnt/averaged.ckpt"));
    run_bin(&["adapt", "--config", c, "--set", &data, "--set", &ifnt, "--out", &p("adapt")])?;
    let nt = format!("paths.checkpoint={:?}", p("nt/averaged.ckpt"));
    let man = format!("paths.manifest={:?}", p("data/target_test.tsv"));
    let lm = format!("paths.external_lm={:?}", p("lm/final.ckpt"));
    run_bin(&["decode", "--config", c, "--set", &data, "--set", &nt, "--set", &man, "--set", &lm, "--out", &p("decode")])?;
    let hyp = format!("paths.hyp={:?}", p("decode/hyp.txt"));
    let text = format!("paths.text={:?}", p("data/target_test.txt"));
    let adapted = format!("paths.checkpoint={:?}", p("adapt/adapted.ckpt"));
    run_bin(&["eval", "--config", c, "--set", &data, "--set", &hyp, "--set", &man, "--set", &adapted, "--set", &text, "--out", &p("eval")])?;
    Ok(())
}

fn collect_files(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect_files(&p, root, out);
        } else {
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
        }
    }
}

fn determinism(root: &Path) -> Outcome {
    let run = root.join("run");
    run_pipeline_binary(&run)?;
    let first = root.join("first");
    fs::rename(&run, &first).map_err(|e| e.to_string())?;
    run_pipeline_binary(&run)?;
    let (mut a, mut b) = (BTreeMap::new(), BTreeMap::new());
    collect_files(&first, &first, &mut a);
    collect_files(&run, &run, &mut b);
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let stages = ["data", "nt", "ifnt", "lm", "adapt", "decode", "eval"];
    check(
        differing.is_empty() && a.len() == b.len() && stages.iter().all(|s| first.join(s).is_dir()),
        if differing.is_empty() {
            format!("{} artifacts across {} stages byte-identical", a.len(), stages.len())
        } else {
            format!("differing artifacts: {}", differing.join(", "))
        },
    )
}

fn main() {
    // Respect `cargo test -- <filter>` style invocations that target other tests.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut rows: Vec<(u32, &'static str, Outcome)> = vec![
        (1, "loss-oracle equivalence", loss_oracle()),
        (2, "gradient correctness", gradient_check()),
        (3, "uniform-lattice analytics", uniform_lattices()),
        (4, "normalization invariant", normalization()),
        (5, "factorized objective identity", objective_identity()),
        (6, "decoding consistency", decoding_consistency()),
    ];
    let start = Instant::now();
    let results: Result<Vec<SeedResult>, String> =
        SEEDS.iter().map(|&s| run_seed(&tmp.path().join(format!("seed{s}")), s)).collect();
    let elapsed = start.elapsed().as_secs_f64();
    match results {
        Ok(r) => rows.extend(pipeline_criteria(&r, elapsed)),
        Err(e) => {
            for (n, name) in [(7, "toy-task learnability"), (8, "text-only adaptation effect"), (9, "shallow-fusion effect"), (10, "freezing contract"), (11, "checkpoint averaging")] {
                rows.push((n, name, Err(format!("pipeline failed: {e}"))));
            }
        }
    }
    rows.push((12, "determinism", determinism(&tmp.path().join("determinism"))));

    let mut failed = 0;
    for (n, name, outcome) in &rows {
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", rows.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
