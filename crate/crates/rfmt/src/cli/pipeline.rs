//! Shared stage builders: data generation, corpus conversions, and the
//! robust-pretraining augmentation.

use std::path::Path;

use super::CliError;
use crate::corpus::{
    read_triples, split, write_lines, write_triples, CorpusTriple, MonoCorpus, Splits, Task,
    TaskSpec,
};
use crate::noise::{inject_noise_lines, NoiseConfig};
use crate::text::{TokenSeq, Vocab};
use crate::training::{TrainConfig, ValidationSet};
use crate::util::{label, write_atomic};

/// Everything the training pipeline consumes, in memory.
pub struct DataBundle {
    pub task: Task,
    pub vocab: Vocab,
    pub pretrain_train: Vec<CorpusTriple>,
    pub pretrain_valid: Vec<CorpusTriple>,
    pub adapt: Splits,
    pub mono: MonoCorpus,
}

/// Generate corpora, splits, and the vocabulary from a task spec.
pub fn build_data(spec: TaskSpec, min_count: usize) -> Result<DataBundle, CliError> {
    let task = Task::new(spec)?;
    let pretrain = task.gen_pretrain()?;
    let adapt_all = task.gen_adapt()?;
    let mono = task.gen_monolingual()?;

    let pv = task.spec.pretrain_valid_fraction;
    let pretrain_splits =
        split(&pretrain, [1.0 - pv, pv, 0.0], task.spec.seed ^ label("pretrain-split"))?;
    let (av, at) = (task.spec.adapt_valid_fraction, task.spec.adapt_test_fraction);
    let adapt = split(&adapt_all, [1.0 - av - at, av, at], task.spec.seed ^ label("adapt-split"))?;

    // vocabulary text: everything the models legitimately see at training
    // time (never the test split)
    let mut corpus_text: Vec<String> = Vec::new();
    for t in &pretrain {
        corpus_text.push(t.noisy_src.clone());
        corpus_text.push(t.tgt.clone());
    }
    corpus_text.extend(mono.src.iter().cloned());
    corpus_text.extend(mono.tgt.iter().cloned());
    for t in &adapt.train {
        corpus_text.push(t.noisy_src.clone());
    }
    let vocab = Vocab::build(&corpus_text, min_count)?;

    Ok(DataBundle {
        task,
        vocab,
        pretrain_train: pretrain_splits.train,
        pretrain_valid: pretrain_splits.valid,
        adapt,
        mono,
    })
}

/// File layout produced by `gen-data` (and consumed by the file-based
/// subcommands).
pub fn write_data(bundle: &DataBundle, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    write_atomic(
        &dir.join("task.json"),
        serde_json::to_string_pretty(&bundle.task.spec)?.as_bytes(),
    )?;
    bundle.vocab.save(&dir.join("vocab.txt"))?;
    write_triples(&dir.join("pretrain_train.jsonl"), &bundle.pretrain_train)?;
    write_triples(&dir.join("pretrain_valid.jsonl"), &bundle.pretrain_valid)?;
    write_triples(&dir.join("adapt_train.jsonl"), &bundle.adapt.train)?;
    write_triples(&dir.join("adapt_valid.jsonl"), &bundle.adapt.valid)?;
    write_triples(&dir.join("adapt_test.jsonl"), &bundle.adapt.test)?;
    write_lines(&dir.join("mono_src.txt"), &bundle.mono.src)?;
    write_lines(&dir.join("mono_tgt.txt"), &bundle.mono.tgt)?;
    write_lines(&dir.join("mono_mixed.txt"), &bundle.mono.mixed())?;
    Ok(())
}

/// Teacher-forcing pairs (noisy source -> gold target).
pub fn pairs_from_triples(triples: &[CorpusTriple], vocab: &Vocab) -> Vec<(TokenSeq, TokenSeq)> {
    triples.iter().map(|t| (vocab.tokenize(&t.noisy_src), vocab.tokenize(&t.tgt))).collect()
}

/// Validation set (noisy sources against gold reference strings).
pub fn validation_from_triples(triples: &[CorpusTriple], vocab: &Vocab) -> ValidationSet {
    ValidationSet {
        sources: triples.iter().map(|t| vocab.tokenize(&t.noisy_src)).collect(),
        references: triples.iter().map(|t| t.tgt.clone()).collect(),
    }
}

/// Robust pre-training corpus: the clean pairs plus three copies whose
/// source side carries one noise type each (natural 1%, keyboard 5%,
/// vowel removal 5%).
pub fn robust_pairs(
    triples: &[CorpusTriple],
    vocab: &Vocab,
    seed: u64,
) -> Result<Vec<(TokenSeq, TokenSeq)>, CliError> {
    let sources: Vec<String> = triples.iter().map(|t| t.noisy_src.clone()).collect();
    let mut out = pairs_from_triples(triples, vocab);
    let profiles = [
        NoiseConfig::new(0.01, 0.0, 0.0, seed ^ label("robust-natural"))?,
        NoiseConfig::new(0.0, 0.05, 0.0, seed ^ label("robust-keyboard"))?,
        NoiseConfig::new(0.0, 0.0, 0.05, seed ^ label("robust-vowel"))?,
    ];
    for cfg in profiles {
        let (noised, _) = inject_noise_lines(&sources, &cfg);
        for (line, triple) in noised.iter().zip(triples) {
            out.push((vocab.tokenize(line), vocab.tokenize(&triple.tgt)));
        }
    }
    Ok(out)
}

pub fn load_task(path: Option<&Path>, seed_override: Option<u64>) -> Result<Task, CliError> {
    let mut spec: TaskSpec = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TaskSpec::default(),
    };
    if let Some(seed) = seed_override {
        spec.seed = seed;
    }
    Ok(Task::new(spec)?)
}

pub fn load_train_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    let cfg: TrainConfig = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    Ok(cfg)
}

pub fn load_triples_file(path: &Path) -> Result<Vec<CorpusTriple>, CliError> {
    Ok(read_triples(path)?)
}

pub fn write_report(path: Option<&Path>, report: &crate::training::TrainReport) -> Result<(), CliError> {
    if let Some(p) = path {
        write_atomic(p, serde_json::to_string_pretty(report)?.as_bytes())?;
    }
    Ok(())
}
