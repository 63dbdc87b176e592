//! Implementations behind each subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::args::{Cli, Command};
use super::pipeline::{
    self, load_task, load_train_config, load_triples_file, pairs_from_triples, robust_pairs,
    validation_from_triples, write_report,
};
use super::{experiment, CliError};
use crate::corpus::{read_lines, write_lines};
use crate::gec::{Corrector, GecCorrector};
use crate::metrics::{evaluate, paired_bootstrap};
use crate::model::{
    beam_search, load_mlm, load_nmt, save_mlm, save_nmt, Embedder, MaskedLm, MlmConfig, NmtConfig,
    NmtModel, OracleEmbedder, TrainedEmbedder,
};
use crate::noise::{inject_noise_lines, NoiseConfig};
use crate::rerank::{rerank, RerankScorer};
use crate::scoring::{bert_loss, mlm_score, ScoreWeights};
use crate::text::{normalize_question, Vocab};
use crate::training::{
    forward_translate, train_mle, train_mlm, train_mrt_bleu, train_mrt_composite, MrtScorers,
};
use crate::util::write_atomic;

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let json = cli.json;
    match cli.cmd {
        Command::GenData { task, out_dir, seed, min_count } => {
            let task = load_task(task.as_deref(), seed)?;
            let bundle = pipeline::build_data(task.spec.clone(), min_count)?;
            pipeline::write_data(&bundle, &out_dir)?;
            let summary = serde_json::json!({
                "out_dir": out_dir,
                "pretrain_train": bundle.pretrain_train.len(),
                "pretrain_valid": bundle.pretrain_valid.len(),
                "adapt_train": bundle.adapt.train.len(),
                "adapt_valid": bundle.adapt.valid.len(),
                "adapt_test": bundle.adapt.test.len(),
                "mono": bundle.mono.src.len(),
                "vocab": bundle.vocab.len(),
            });
            if json {
                println!("{summary}");
            } else {
                println!(
                    "wrote {} (pretrain {}+{}, adapt {}/{}/{}, mono {}, vocab {})",
                    out_dir.display(),
                    bundle.pretrain_train.len(),
                    bundle.pretrain_valid.len(),
                    bundle.adapt.train.len(),
                    bundle.adapt.valid.len(),
                    bundle.adapt.test.len(),
                    bundle.mono.src.len(),
                    bundle.vocab.len()
                );
            }
            Ok(())
        }

        Command::TrainMlm { data, valid, vocab, out, config, report } => {
            train_masked_model(&data, valid.as_deref(), &vocab, &out, config.as_deref(), report.as_deref(), json)
        }

        Command::TrainEmbedder { data, valid, vocab, out, config, report } => {
            // same objective as train-mlm, but conventionally over mixed
            // source+target text
            train_masked_model(&data, valid.as_deref(), &vocab, &out, config.as_deref(), report.as_deref(), json)
        }

        Command::Pretrain { data, valid, vocab, out, config, robust, report } => {
            let vocab = Vocab::load(&vocab)?;
            let cfg = load_train_config(config.as_deref())?;
            let train = load_triples_file(&data)?;
            let valid_triples = load_triples_file(&valid)?;
            let pairs = if robust {
                robust_pairs(&train, &vocab, cfg.seed)?
            } else {
                pairs_from_triples(&train, &vocab)
            };
            let valid_set = validation_from_triples(&valid_triples, &vocab);
            let model = NmtModel::new(NmtConfig::standard(vocab.len()), cfg.seed)?;
            let (model, train_report) = train_mle(model, &pairs, &valid_set, &vocab, &cfg, None)?;
            save_nmt(&out, &model)?;
            write_report(report.as_deref(), &train_report)?;
            finish_train(json, &out, "bleu", train_report.best_metric);
            Ok(())
        }

        Command::FinetuneMle { init, sources, pairs, valid, vocab, out, config, report } => {
            let vocab = Vocab::load(&vocab)?;
            let cfg = load_train_config(config.as_deref())?;
            let model = load_nmt(&init, None)?;
            let train_pairs = match (&sources, &pairs) {
                (Some(src_path), None) => {
                    let lines = read_lines(src_path)?;
                    let seqs: Vec<_> = lines.iter().map(|l| vocab.tokenize(l)).collect();
                    let synth = forward_translate(&model, &seqs, &vocab, cfg.max_decode_len)?;
                    seqs.into_iter().zip(synth.iter().map(|t| vocab.tokenize(t))).collect()
                }
                (None, Some(pairs_path)) => pairs_from_triples(&load_triples_file(pairs_path)?, &vocab),
                _ => {
                    return Err(CliError::Usage(
                        "finetune-mle needs exactly one of --sources or --pairs".into(),
                    ))
                }
            };
            let valid_set = validation_from_triples(&load_triples_file(&valid)?, &vocab);
            let (model, train_report) =
                train_mle(model, &train_pairs, &valid_set, &vocab, &cfg, None)?;
            save_nmt(&out, &model)?;
            write_report(report.as_deref(), &train_report)?;
            finish_train(json, &out, "bleu", train_report.best_metric);
            Ok(())
        }

        Command::FinetuneMrt {
            init,
            sources,
            mlm,
            task,
            embedder,
            valid,
            vocab,
            out,
            config,
            alpha,
            beta,
            report,
        } => {
            let vocab = Vocab::load(&vocab)?;
            let mut cfg = load_train_config(config.as_deref())?;
            if let Some(a) = alpha {
                cfg.weights.alpha = a;
            }
            if let Some(b) = beta {
                cfg.weights.beta = b;
            }
            ScoreWeights::checked(cfg.weights.alpha, cfg.weights.beta, cfg.weights.mlm_normalize)?;
            let model = load_nmt(&init, None)?;
            let mlm = load_mlm(&mlm, None)?;
            let task = load_task(Some(&task), None)?;
            let gec = GecCorrector::from_task(&task);
            let emb = match embedder {
                Some(p) => Embedder::Trained(TrainedEmbedder::new(load_mlm(&p, None)?)),
                None => Embedder::Oracle(OracleEmbedder::from_dictionary(task.dictionary())),
            };
            let scorers = MrtScorers { mlm: &mlm, embedder: &emb, gec: &gec };
            let lines = read_lines(&sources)?;
            let seqs: Vec<_> = lines.iter().map(|l| vocab.tokenize(l)).collect();
            let valid_set = validation_from_triples(&load_triples_file(&valid)?, &vocab);
            let (model, train_report) =
                train_mrt_composite(model, &seqs, &scorers, &valid_set, &vocab, &cfg, None)?;
            save_nmt(&out, &model)?;
            write_report(report.as_deref(), &train_report)?;
            finish_train(json, &out, "bleu", train_report.best_metric);
            Ok(())
        }

        Command::FinetuneMrtBleu { init, sources, refs, valid, vocab, out, config, report } => {
            let vocab = Vocab::load(&vocab)?;
            let cfg = load_train_config(config.as_deref())?;
            let model = load_nmt(&init, None)?;
            let lines = read_lines(&sources)?;
            let seqs: Vec<_> = lines.iter().map(|l| vocab.tokenize(l)).collect();
            let references = match refs {
                Some(p) => read_lines(&p)?,
                None => forward_translate(&model, &seqs, &vocab, cfg.max_decode_len)?,
            };
            if references.len() != seqs.len() {
                return Err(CliError::Data(format!(
                    "reference count {} does not match source count {}",
                    references.len(),
                    seqs.len()
                )));
            }
            let pairs: Vec<_> = seqs.into_iter().zip(references).collect();
            let valid_set = validation_from_triples(&load_triples_file(&valid)?, &vocab);
            let (model, train_report) =
                train_mrt_bleu(model, &pairs, &valid_set, &vocab, &cfg, None)?;
            save_nmt(&out, &model)?;
            write_report(report.as_deref(), &train_report)?;
            finish_train(json, &out, "bleu", train_report.best_metric);
            Ok(())
        }

        Command::Translate {
            model,
            vocab,
            input,
            output,
            beam,
            append_qmark,
            gec_pre,
            task,
            dump_beam,
            max_len,
        } => {
            let vocab = Vocab::load(&vocab)?;
            let model = load_nmt(&model, None)?;
            let gec = match (&task, gec_pre) {
                (Some(p), true) => Some(GecCorrector::from_task(&load_task(Some(p), None)?)),
                (None, true) => {
                    return Err(CliError::Usage("--gec-pre requires --task".into()));
                }
                _ => None,
            };
            let lines = read_lines(&input)?;
            let mut outputs = Vec::with_capacity(lines.len());
            let mut dumps = Vec::new();
            for line in &lines {
                let mut text = line.clone();
                if append_qmark || gec_pre {
                    text = normalize_question(&text);
                }
                if let Some(g) = &gec {
                    text = g.correct(&text);
                }
                let src = vocab.tokenize(&text);
                let cands = beam_search(&model, &vocab, &src, beam.max(1), max_len)?;
                outputs.push(cands[0].tokens.surface());
                if dump_beam.is_some() {
                    dumps.push(BeamDump {
                        src: line.clone(),
                        candidates: cands
                            .iter()
                            .map(|c| CandidateDump {
                                text: c.tokens.surface(),
                                total_logprob: c.total_logprob,
                                token_logprobs: c.token_logprobs.clone(),
                                finished: c.finished,
                            })
                            .collect(),
                    });
                }
            }
            write_lines(&output, &outputs)?;
            if let Some(p) = dump_beam {
                write_jsonl(&p, &dumps)?;
            }
            if json {
                println!("{}", serde_json::json!({ "lines": outputs.len(), "output": output }));
            }
            Ok(())
        }

        Command::Rerank { model, mlm, vocab, input, output, k, dump, lm_score, max_len } => {
            let vocab = Vocab::load(&vocab)?;
            let model = load_nmt(&model, None)?;
            let mlm = load_mlm(&mlm, None)?;
            let scorer = if lm_score { RerankScorer::LmLeftToRight } else { RerankScorer::Mlm };
            let lines = read_lines(&input)?;
            let mut outputs = Vec::with_capacity(lines.len());
            let mut dumps = Vec::new();
            for line in &lines {
                let src = vocab.tokenize(line);
                let choice = rerank(&model, &mlm, &vocab, &src, k, max_len, scorer, true)?;
                outputs.push(choice.chosen().tokens.surface());
                if dump.is_some() {
                    dumps.push(RerankDump {
                        src: line.clone(),
                        chosen_index: choice.chosen_index,
                        scores: choice.scores.clone(),
                        candidates: choice
                            .candidates
                            .iter()
                            .map(|c| c.tokens.surface())
                            .collect(),
                    });
                }
            }
            write_lines(&output, &outputs)?;
            if let Some(p) = dump {
                write_jsonl(&p, &dumps)?;
            }
            Ok(())
        }

        Command::Score { mlm, task, embedder, vocab, input, output, alpha, beta, mlm_sum } => {
            let vocab = Vocab::load(&vocab)?;
            let mlm = load_mlm(&mlm, None)?;
            let task = load_task(Some(&task), None)?;
            let gec = GecCorrector::from_task(&task);
            let emb = match embedder {
                Some(p) => Embedder::Trained(TrainedEmbedder::new(load_mlm(&p, None)?)),
                None => Embedder::Oracle(OracleEmbedder::from_dictionary(task.dictionary())),
            };
            let weights = ScoreWeights::checked(alpha, beta, !mlm_sum)?;
            let rows: Vec<ScoreInput> = read_jsonl(&input)?;
            let mut out_rows = Vec::with_capacity(rows.len());
            for row in rows {
                let x = vocab.tokenize(&normalize_question(&row.src));
                let y = vocab.tokenize(&normalize_question(&row.hyp));
                let l_mlm = -mlm_score(&mlm, &y, weights.mlm_normalize)?;
                let l_bert = bert_loss(&x, &y, &emb, &gec, &vocab)?;
                out_rows.push(ScoreOutput {
                    src: row.src,
                    hyp: row.hyp,
                    l_mlm,
                    l_bert,
                    composite: weights.alpha * l_mlm + weights.beta * l_bert,
                });
            }
            write_jsonl(&output, &out_rows)?;
            Ok(())
        }

        Command::Evaluate { hyp, reference, output } => {
            let hyps = read_lines(&hyp)?;
            let refs = read_lines(&reference)?;
            let report = evaluate(&hyps, &refs)?;
            if let Some(p) = output {
                write_atomic(&p, serde_json::to_string_pretty(&report)?.as_bytes())?;
            }
            if json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                println!("lines               {}", report.lines);
                println!("BLEU                {:.2}", report.bleu);
                println!("TER                 {:.4}", report.ter);
                println!("question-mark rate  {:.1}%", report.question_final_rate * 100.0);
                println!("tokenizer           {}", report.tokenizer);
                println!("shift block limit   {}", report.shift_block_limit);
            }
            Ok(())
        }

        Command::Significance { hyp_a, hyp_b, reference, resamples, seed } => {
            let a = read_lines(&hyp_a)?;
            let b = read_lines(&hyp_b)?;
            let refs = read_lines(&reference)?;
            let p = paired_bootstrap(&a, &b, &refs, resamples, seed)?;
            if json {
                println!("{}", serde_json::json!({ "p_value": p, "resamples": resamples }));
            } else {
                println!("p = {p:.4} (fraction of {resamples} resamples where B >= A)");
            }
            Ok(())
        }

        Command::InjectNoise { input, output, natural, keyboard, vowel, seed } => {
            let cfg = NoiseConfig::new(natural, keyboard, vowel, seed)?;
            let lines = read_lines(&input)?;
            let (noised, stats) = inject_noise_lines(&lines, &cfg);
            write_lines(&output, &noised)?;
            if json {
                println!(
                    "{}",
                    serde_json::json!({
                        "chars": stats.chars_seen,
                        "natural_rate": stats.natural_rate(),
                        "keyboard_rate": stats.keyboard_rate(),
                        "vowel_rate": stats.vowel_rate(),
                    })
                );
            } else {
                println!(
                    "{} chars; rates: natural {:.3}%, keyboard {:.3}%, vowel {:.3}%",
                    stats.chars_seen,
                    stats.natural_rate() * 100.0,
                    stats.keyboard_rate() * 100.0,
                    stats.vowel_rate() * 100.0
                );
            }
            Ok(())
        }

        Command::Gec { task, input, output } => {
            let task = load_task(task.as_deref(), None)?;
            let gec = GecCorrector::from_task(&task);
            let lines = read_lines(&input)?;
            let corrected: Vec<String> = lines.iter().map(|l| gec.correct(l)).collect();
            write_lines(&output, &corrected)?;
            Ok(())
        }

        Command::Experiment { spec, out_dir, resume, cache_dir } => {
            let spec: experiment::ExperimentSpec =
                serde_json::from_str(&std::fs::read_to_string(&spec)?)?;
            let cache = resolve_cache_dir(cache_dir, &out_dir);
            let table = experiment::run_experiment(&spec, &out_dir, &cache, resume)?;
            if json {
                println!("{}", serde_json::to_string(&table)?);
            } else {
                print!("{}", table.render());
            }
            Ok(())
        }

        Command::SweepAlphaBeta { spec, out_dir, resume, cache_dir } => {
            let spec: experiment::ExperimentSpec =
                serde_json::from_str(&std::fs::read_to_string(&spec)?)?;
            let cache = resolve_cache_dir(cache_dir, &out_dir);
            let table = experiment::run_sweep(&spec, &out_dir, &cache, resume)?;
            if json {
                println!("{}", serde_json::to_string(&table)?);
            } else {
                print!("{table}");
            }
            Ok(())
        }
    }
}

fn resolve_cache_dir(flag: Option<PathBuf>, out_dir: &Path) -> PathBuf {
    flag.or_else(|| std::env::var_os(super::CACHE_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| out_dir.join("cache"))
}

fn finish_train(json: bool, out: &Path, metric: &str, value: f64) {
    if json {
        println!(
            "{}",
            serde_json::json!({ "checkpoint": out, "metric": metric, "best": value })
        );
    } else {
        println!("saved {} (best {metric} {value:.3})", out.display());
    }
}

/// Shared by train-mlm and train-embedder.
fn train_masked_model(
    data: &Path,
    valid: Option<&Path>,
    vocab_path: &Path,
    out: &Path,
    config: Option<&Path>,
    report: Option<&Path>,
    json: bool,
) -> Result<(), CliError> {
    let vocab = Vocab::load(vocab_path)?;
    let cfg = load_train_config(config)?;
    let lines = read_lines(data)?;
    let seqs: Vec<_> = lines.iter().map(|l| vocab.tokenize(l)).collect();
    let valid_seqs: Vec<_> = match valid {
        Some(p) => read_lines(p)?.iter().map(|l| vocab.tokenize(l)).collect(),
        None => {
            // tail slice as held-out data
            let n = (seqs.len() / 20).max(1).min(seqs.len());
            seqs[seqs.len() - n..].to_vec()
        }
    };
    let mlm = MaskedLm::new(MlmConfig::standard(vocab.len()), cfg.seed)?;
    let (mlm, train_report) = train_mlm(mlm, &seqs, &valid_seqs, &cfg, None)?;
    save_mlm(out, &mlm)?;
    write_report(report, &train_report)?;
    finish_train(json, out, "masked_nll", train_report.best_metric);
    Ok(())
}

#[derive(Serialize)]
struct CandidateDump {
    text: String,
    total_logprob: f64,
    token_logprobs: Vec<f64>,
    finished: bool,
}

#[derive(Serialize)]
struct BeamDump {
    src: String,
    candidates: Vec<CandidateDump>,
}

#[derive(Serialize)]
struct RerankDump {
    src: String,
    chosen_index: usize,
    scores: Vec<f64>,
    candidates: Vec<String>,
}

#[derive(Deserialize)]
struct ScoreInput {
    src: String,
    hyp: String,
}

#[derive(Serialize)]
struct ScoreOutput {
    src: String,
    hyp: String,
    l_mlm: f64,
    l_bert: f64,
    composite: f64,
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
