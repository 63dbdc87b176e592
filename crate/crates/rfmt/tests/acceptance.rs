//! Acceptance suite: one test per exit criterion, each printing a PASS line
//! with its measured numbers. Run with `cargo test --test acceptance`
//! (release recommended for the end-to-end comparison).

use std::time::Instant;

use rfmt::cli::{build_data, run_experiment, ExperimentSpec};
use rfmt::corpus::TaskSpec;
use rfmt::gec::{GecCorrector, IdentityCorrector};
use rfmt::metrics::{bleu, paired_bootstrap, sentence_bleu, ter_sentence, TerOptions};
use rfmt::model::{Embedder, MaskedLm, MlmConfig, NmtConfig, NmtModel, OracleEmbedder};
use rfmt::noise::{inject_noise_with_stats, NoiseConfig};
use rfmt::scoring::{bert_loss, bertscore, composite_risk, mlm_score, ScoreWeights};
use rfmt::text::{normalize_question, TokenSeq, Vocab};
use rfmt::training::RiskMode;
use rfmt::util::derive_rng;
use rfmt::verify::{grad_check_mlm, grad_check_mrt, grad_check_nmt};
use rand::Rng;

fn small_vocab() -> Vocab {
    Vocab::build(&["a b c d e f g ?".to_string()], 1).unwrap()
}

fn small_nmt(vocab: &Vocab, seed: u64) -> NmtModel {
    // reduced width keeps the finite-difference sweep fast; the forward code
    // path is the same as the full architecture
    let cfg = NmtConfig {
        vocab_size: vocab.len(),
        layers: 2,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        dropout: 0.0,
        max_len: 16,
    };
    let mut model = NmtModel::new(cfg, seed).unwrap();
    // perturb the zero-initialized output projection so logits carry signal
    for (name, t) in model.params.iter_mut() {
        if name == "out.w" {
            for (i, x) in t.data_mut().iter_mut().enumerate() {
                *x = ((i * 23 % 97) as f64 / 97.0 - 0.5) * 0.4;
            }
        }
    }
    model
}

#[test]
fn acceptance_1_gradient_correctness() {
    let started = Instant::now();
    let vocab = small_vocab();
    let model = small_nmt(&vocab, 3);

    let batch =
        vec![(vocab.tokenize("a b c"), vocab.tokenize("d e")), (vocab.tokenize("f g"), vocab.tokenize("a b c"))];
    let nmt_err = grad_check_nmt(&model, &batch, 1e-5).unwrap();
    assert!(nmt_err < 1e-3, "NMT gradient error {nmt_err}");

    let mlm_cfg = MlmConfig {
        vocab_size: vocab.len(),
        layers: 2,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        dropout: 0.0,
        max_len: 16,
    };
    let mut mlm = MaskedLm::new(mlm_cfg, 5).unwrap();
    for (name, t) in mlm.params.iter_mut() {
        if name == "out.w" {
            for (i, x) in t.data_mut().iter_mut().enumerate() {
                *x = ((i * 31 % 89) as f64 / 89.0 - 0.5) * 0.4;
            }
        }
    }
    let mlm_batch = vec![
        (vocab.tokenize("a b c d"), vec![1, 3]),
        (vocab.tokenize("e f g"), vec![0]),
    ];
    let mlm_err = grad_check_mlm(&mlm, &mlm_batch, 1e-5).unwrap();
    assert!(mlm_err < 1e-3, "MLM gradient error {mlm_err}");

    let src = vocab.tokenize("a b c");
    let candidates =
        vec![(vocab.tokenize("d e"), 0.7), (vocab.tokenize("e d f"), 0.25), (vocab.tokenize("g"), 0.4)];
    let literal = grad_check_mrt(&model, &src, &candidates, RiskMode::Literal, 1e-5).unwrap();
    assert!(literal < 1e-3, "literal MRT gradient error {literal}");
    let normalized = grad_check_mrt(&model, &src, &candidates, RiskMode::Normalized, 1e-5).unwrap();
    assert!(normalized < 1e-3, "normalized MRT gradient error {normalized}");

    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 120.0, "gradient checks took {secs:.1}s");
    println!(
        "ACCEPTANCE 1 (gradient correctness): PASS \
         (nmt {nmt_err:.2e}, mlm {mlm_err:.2e}, mrt literal {literal:.2e} / normalized {normalized:.2e}, {secs:.1}s)"
    );
}

#[test]
fn acceptance_2_scorer_oracle_equivalence() {
    let started = Instant::now();

    // bertscore against the brute-force double loop, exact, 1000 instances
    let mut checked = 0usize;
    for seed in 0..1000u64 {
        let mut rng = derive_rng(seed, &[41]);
        let d = rng.gen_range(2..8);
        let nx = rng.gen_range(1..7);
        let ny = rng.gen_range(1..7);
        let unit = |rng: &mut rand_chacha::ChaCha12Rng| {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let x: Vec<Vec<f64>> = (0..nx).map(|_| unit(&mut rng)).collect();
        let y: Vec<Vec<f64>> = (0..ny).map(|_| unit(&mut rng)).collect();
        let t = bertscore(&x, &y).unwrap();
        let best = |a: &[f64], pool: &[Vec<f64>]| {
            pool.iter()
                .map(|b| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let recall = x.iter().map(|xi| best(xi, &y)).sum::<f64>() / nx as f64;
        let precision = y.iter().map(|yj| best(yj, &x)).sum::<f64>() / ny as f64;
        assert_eq!(t.recall, recall, "seed {seed}");
        assert_eq!(t.precision, precision, "seed {seed}");
        checked += 1;
    }
    assert_eq!(checked, 1000);

    // mlm_score against the naive one-mask-at-a-time loop on 200 sentences
    let vocab = small_vocab();
    let cfg = MlmConfig {
        vocab_size: vocab.len(),
        layers: 1,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        dropout: 0.0,
        max_len: 24,
    };
    let mut mlm = MaskedLm::new(cfg, 9).unwrap();
    for (name, t) in mlm.params.iter_mut() {
        if name == "out.w" {
            for (i, x) in t.data_mut().iter_mut().enumerate() {
                *x = ((i * 7 % 61) as f64 / 61.0 - 0.5) * 0.5;
            }
        }
    }
    let words = ["a", "b", "c", "d", "e", "f", "g", "?"];
    for seed in 0..200u64 {
        let mut rng = derive_rng(seed, &[42]);
        let len = rng.gen_range(1..9);
        let text: Vec<&str> = (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect();
        let seq = vocab.tokenize(&text.join(" "));
        let batched = mlm_score(&mlm, &seq, false).unwrap();
        let naive: f64 = (0..seq.len()).map(|p| mlm.mlm_logprob_at(&seq, p).unwrap()).sum();
        assert_eq!(batched, naive, "sentence {seed}");
    }

    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 120.0, "scorer equivalence took {secs:.1}s");
    println!(
        "ACCEPTANCE 2 (scorer oracle equivalence): PASS \
         (1000 bertscore instances exact, 200 mlm sentences exact, {secs:.1}s)"
    );
}

#[test]
fn acceptance_3_metric_golden_cases() {
    let started = Instant::now();

    let counts = rfmt::metrics::bleu_counts("the the the the the the the", "the cat is on the mat");
    assert_eq!((counts.matches[0], counts.totals[0]), (2, 7), "clipped unigram 2/7");

    let with = ter_sentence("b a", "a b", TerOptions::default()).unwrap();
    assert_eq!((with.edits, with.shifts, with.ref_len), (1, 1, 2));
    let without = ter_sentence("b a", "a b", TerOptions { shifts: false, max_block: 10 }).unwrap();
    assert_eq!(without.edits, 2);

    let same = vec!["does it work with alpha ?".to_string()];
    assert_eq!(bleu(&same, &same, false).unwrap(), 100.0);
    assert_eq!(rfmt::metrics::ter(&same, &same).unwrap(), 0.0);
    assert!(sentence_bleu("a b c", "x y z") > 0.0);

    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 10.0, "metric cases took {secs:.1}s");
    println!("ACCEPTANCE 3 (metric golden cases): PASS ({secs:.2}s)");
}

#[test]
fn acceptance_4_risk_arithmetic() {
    // composite = 0.15 * 2.0 + 0.85 * 0.4 = 0.64 exactly in f64
    let w = ScoreWeights::default();
    assert_eq!(w.alpha * 2.0 + w.beta * 0.4, 0.64);

    // the same arithmetic through the full scoring path
    let task = rfmt::corpus::Task::new(TaskSpec::default()).unwrap();
    let embedder = Embedder::Oracle(OracleEmbedder::from_dictionary(task.dictionary()));
    let gec = GecCorrector::from_task(&task);
    let corpus = vec![
        "does it work with alpha ?".to_string(),
        task.gold_translate("does it work with alpha ?").unwrap(),
    ];
    let vocab = Vocab::build(&corpus, 1).unwrap();
    let cfg = MlmConfig {
        vocab_size: vocab.len(),
        layers: 1,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        dropout: 0.0,
        max_len: 24,
    };
    let mlm = MaskedLm::new(cfg, 1).unwrap();
    let x = vocab.tokenize(&corpus[0]);
    let y = vocab.tokenize(&corpus[1]);
    let risk = composite_risk(&x, &y, &mlm, &embedder, &gec, &w, &vocab).unwrap();
    assert_eq!(risk.composite, w.alpha * risk.l_mlm + w.beta * risk.l_bert);

    // bert_loss max form: equals 1 - max of the two directly computed F1s
    let x_vecs = embedder.embed_tokens(&x).unwrap();
    let y_vecs = embedder.embed_tokens(&y).unwrap();
    let f_raw = bertscore(&x_vecs, &y_vecs).unwrap().f1;
    let corrected = vocab.tokenize(&gec.correct(&x.surface()));
    let c_vecs = embedder.embed_tokens(&corrected).unwrap();
    let f_cor = bertscore(&c_vecs, &y_vecs).unwrap().f1;
    let loss = bert_loss(&x, &y, &embedder, &gec, &vocab).unwrap();
    assert_eq!(loss, 1.0 - f_raw.max(f_cor));

    // identity corrector: exactly 1 - F(x, y)
    let loss_id = bert_loss(&x, &y, &embedder, &IdentityCorrector, &vocab).unwrap();
    assert_eq!(loss_id, 1.0 - f_raw);

    println!("ACCEPTANCE 4 (composite risk arithmetic): PASS (0.15*2.0 + 0.85*0.4 == 0.64)");
}

#[test]
fn acceptance_5_toy_end_to_end_comparison() {
    let started = Instant::now();
    // defaults: 5000/200 clean pretraining pairs, 2000 noisy source-only
    // fine-tuning questions, 500 held-out test triples, median of 3 seeds
    let spec = ExperimentSpec::default();
    assert_eq!(spec.seeds.len(), 3);
    let out = tempfile::tempdir().unwrap();
    let table = run_experiment(&spec, out.path(), &out.path().join("cache"), true).unwrap();
    let row = |name: &str| table.rows.iter().find(|r| r.system == name).unwrap();
    let baseline = row("baseline");
    let mle = row("mle_ft");
    let ours = row("ours");

    let qmark_gain = ours.qmark_rate - baseline.qmark_rate;
    assert!(
        qmark_gain >= 0.20,
        "question-mark rate gain {:.3} (ours {:.3} vs baseline {:.3})",
        qmark_gain,
        ours.qmark_rate,
        baseline.qmark_rate
    );
    assert!(
        ours.bleu >= mle.bleu,
        "composite BLEU {:.2} below MLE fine-tuning {:.2}",
        ours.bleu,
        mle.bleu
    );
    assert!(
        baseline.bleu <= mle.bleu && mle.bleu <= ours.bleu,
        "median ordering violated: baseline {:.2}, mle {:.2}, ours {:.2}",
        baseline.bleu,
        mle.bleu,
        ours.bleu
    );

    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 1800.0, "end-to-end comparison took {secs:.0}s");
    println!(
        "ACCEPTANCE 5 (toy end-to-end comparison): PASS \
         (BLEU baseline {:.2} <= mle_ft {:.2} <= ours {:.2}; ?-rate {:.1}% -> {:.1}% (+{:.1} points); {:.0}s)",
        baseline.bleu,
        mle.bleu,
        ours.bleu,
        baseline.qmark_rate * 100.0,
        ours.qmark_rate * 100.0,
        qmark_gain * 100.0,
        secs
    );
}

#[test]
fn acceptance_6_robust_baseline_pipeline() {
    let started = Instant::now();

    // measured rates on one million characters within +-0.5% of 1%/5%/5%
    let text = "does it work with the blender and the samsung charger ".repeat(18_200);
    assert!(text.len() >= 1_000_000);
    let cfg = NoiseConfig::new(0.01, 0.05, 0.05, 1234).unwrap();
    let (_, stats) = inject_noise_with_stats(&text, &cfg);
    let (nr, kr, vr) = (stats.natural_rate(), stats.keyboard_rate(), stats.vowel_rate());
    assert!((nr - 0.01).abs() < 0.005, "natural rate {nr}");
    assert!((kr - 0.05).abs() < 0.005, "keyboard rate {kr}");
    assert!((vr - 0.05).abs() < 0.005, "vowel rate {vr}");

    // robust pre-training completes and evaluates without error (reduced scale)
    let task = TaskSpec {
        pretrain_size: 220,
        adapt_size: 60,
        mono_size: 40,
        pretrain_valid_fraction: 20.0 / 220.0,
        adapt_valid_fraction: 10.0 / 60.0,
        adapt_test_fraction: 20.0 / 60.0,
        seed: 9,
        ..TaskSpec::default()
    };
    let bundle = build_data(task, 1).unwrap();
    let pairs = rfmt::cli::robust_pairs(&bundle.pretrain_train, &bundle.vocab, 9).unwrap();
    assert_eq!(pairs.len(), 4 * bundle.pretrain_train.len());
    let cfg = rfmt::training::TrainConfig {
        steps: 40,
        checkpoint_every: 20,
        lr: rfmt::training::LrSchedule::Fixed { lr: 2e-3 },
        seed: 9,
        max_decode_len: 16,
        ..Default::default()
    };
    let arch = NmtConfig {
        vocab_size: bundle.vocab.len(),
        layers: 1,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        dropout: 0.1,
        max_len: 24,
    };
    let model = NmtModel::new(arch, 9).unwrap();
    let valid = rfmt::training::ValidationSet {
        sources: bundle.pretrain_valid.iter().map(|t| bundle.vocab.tokenize(&t.noisy_src)).collect(),
        references: bundle.pretrain_valid.iter().map(|t| t.tgt.clone()).collect(),
    };
    let (model, _) = rfmt::training::train_mle(model, &pairs, &valid, &bundle.vocab, &cfg, None).unwrap();
    let test_sources: Vec<TokenSeq> =
        bundle.adapt.test.iter().map(|t| bundle.vocab.tokenize(&t.noisy_src)).collect();
    let refs: Vec<String> = bundle.adapt.test.iter().map(|t| t.tgt.clone()).collect();
    let hyps = rfmt::training::forward_translate(&model, &test_sources, &bundle.vocab, 16).unwrap();
    let report = rfmt::metrics::evaluate(&hyps, &refs).unwrap();
    assert!(report.bleu.is_finite());

    let secs = started.elapsed().as_secs_f64();
    println!(
        "ACCEPTANCE 6 (robust baseline pipeline): PASS \
         (rates {:.3}%/{:.3}%/{:.3}% on {} chars; robust pretrain + eval ok; {:.1}s)",
        nr * 100.0,
        kr * 100.0,
        vr * 100.0,
        stats.chars_seen,
        secs
    );
}

#[test]
fn acceptance_7_significance_sanity() {
    let task = rfmt::corpus::Task::new(TaskSpec { adapt_size: 120, seed: 31, ..TaskSpec::default() }).unwrap();
    let refs: Vec<String> = task.gen_adapt().unwrap().iter().map(|t| t.tgt.clone()).collect();
    let identical = paired_bootstrap(&refs, &refs, &refs, 1000, 5).unwrap();
    assert!(identical >= 0.99, "identical systems p = {identical}");

    let mut rng = derive_rng(77, &[7]);
    let garbage: Vec<String> = refs
        .iter()
        .map(|_| {
            let n = rng.gen_range(2..6);
            (0..n).map(|_| "zz").collect::<Vec<_>>().join(" ")
        })
        .collect();
    let p = paired_bootstrap(&refs, &garbage, &refs, 1000, 5).unwrap();
    assert!(p < 0.01, "shuffled-garbage p = {p}");

    println!(
        "ACCEPTANCE 7 (significance sanity): PASS (identical p = {identical:.3}, garbage p = {p:.4})"
    );
}

#[test]
fn acceptance_8_experiment_determinism() {
    let started = Instant::now();
    // reduced scale, two systems, fresh caches: both runs compute from
    // scratch and must emit byte-identical tables
    let task = TaskSpec {
        pretrain_size: 320,
        adapt_size: 160,
        mono_size: 220,
        pretrain_valid_fraction: 20.0 / 320.0,
        adapt_valid_fraction: 20.0 / 160.0,
        adapt_test_fraction: 40.0 / 160.0,
        ..TaskSpec::default()
    };
    let mut spec = ExperimentSpec {
        task: Some(task),
        systems: vec![
            rfmt::cli::SystemId::Baseline,
            rfmt::cli::SystemId::Ours,
        ],
        seeds: vec![4, 5],
        ..ExperimentSpec::default()
    };
    spec.arch = rfmt::cli::ArchSpec { layers: 1, heads: 2, d_model: 24, d_ff: 48, dropout: 0.2, max_len: 32 };
    spec.pretrain.steps = 150;
    spec.pretrain.checkpoint_every = 75;
    spec.mlm_train.steps = 100;
    spec.mlm_train.checkpoint_every = 50;
    spec.finetune_mrt.steps = 20;
    spec.finetune_mrt.checkpoint_every = 10;
    spec.resamples = 200;

    let out1 = tempfile::tempdir().unwrap();
    let out2 = tempfile::tempdir().unwrap();
    run_experiment(&spec, out1.path(), &out1.path().join("cache"), false).unwrap();
    run_experiment(&spec, out2.path(), &out2.path().join("cache"), false).unwrap();

    let t1 = std::fs::read(out1.path().join("results.txt")).unwrap();
    let t2 = std::fs::read(out2.path().join("results.txt")).unwrap();
    assert_eq!(t1, t2, "human-readable tables differ between runs");
    let j1 = std::fs::read(out1.path().join("results.json")).unwrap();
    let j2 = std::fs::read(out2.path().join("results.json")).unwrap();
    assert_eq!(j1, j2, "machine-readable tables differ between runs");

    let secs = started.elapsed().as_secs_f64();
    println!(
        "ACCEPTANCE 8 (experiment determinism): PASS (byte-identical tables across fresh runs, {secs:.0}s)"
    );
}
