//! The system-comparison harness: builds every requested system from shared,
//! content-addressed pipeline stages, evaluates on the held-out test split,
//! and aggregates medians over seeds.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::{build_data, pairs_from_triples, robust_pairs, validation_from_triples, DataBundle};
use super::CliError;
use crate::corpus::TaskSpec;
use crate::gec::{Corrector, GecCorrector};
use crate::metrics::{evaluate, paired_bootstrap, EvalReport};
use crate::model::{
    load_mlm, load_nmt, save_mlm, save_nmt, Embedder, MaskedLm, MlmConfig, NmtConfig, NmtModel,
    OracleEmbedder, TrainedEmbedder,
};
use crate::scoring::ScoreWeights;
use crate::text::{normalize_question, TokenSeq};
use crate::training::{
    forward_translate, train_mle, train_mlm, train_mrt_bleu, train_mrt_composite, LrSchedule,
    MrtScorers, TrainConfig,
};
use crate::util::{sha256_hex, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemId {
    Baseline,
    RobustBaseline,
    MleFt,
    MrtBleu,
    Ours,
    OursRobust,
}

impl SystemId {
    pub fn name(&self) -> &'static str {
        match self {
            SystemId::Baseline => "baseline",
            SystemId::RobustBaseline => "robust_baseline",
            SystemId::MleFt => "mle_ft",
            SystemId::MrtBleu => "mrt_bleu",
            SystemId::Ours => "ours",
            SystemId::OursRobust => "ours_robust",
        }
    }

    fn has_mle_counterpart(&self) -> bool {
        matches!(self, SystemId::MrtBleu | SystemId::Ours | SystemId::OursRobust)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderChoice {
    #[default]
    Oracle,
    Trained,
}

/// Transformer dimensions shared by the NMT model and the masked LMs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArchSpec {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec { layers: 2, heads: 2, d_model: 64, d_ff: 128, dropout: 0.2, max_len: 64 }
    }
}

impl ArchSpec {
    fn nmt(&self, vocab: usize) -> NmtConfig {
        NmtConfig {
            vocab_size: vocab,
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            dropout: self.dropout,
            max_len: self.max_len,
        }
    }

    fn mlm(&self, vocab: usize) -> MlmConfig {
        MlmConfig {
            vocab_size: vocab,
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            dropout: self.dropout,
            max_len: self.max_len,
        }
    }
}

fn default_systems() -> Vec<SystemId> {
    vec![SystemId::Baseline, SystemId::MleFt, SystemId::MrtBleu, SystemId::Ours]
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_pretrain_cfg() -> TrainConfig {
    TrainConfig {
        steps: 1500,
        lr: LrSchedule::InverseSqrt { scale: 0.08, warmup: 400 },
        ..TrainConfig::default()
    }
}

fn default_mlm_cfg() -> TrainConfig {
    TrainConfig {
        steps: 900,
        checkpoint_every: 300,
        lr: LrSchedule::InverseSqrt { scale: 0.08, warmup: 300 },
        ..TrainConfig::default()
    }
}

fn default_mle_ft_cfg() -> TrainConfig {
    TrainConfig {
        steps: 400,
        checkpoint_every: 100,
        lr: LrSchedule::Fixed { lr: 7e-4 },
        ..TrainConfig::default()
    }
}

fn default_mrt_cfg() -> TrainConfig {
    TrainConfig {
        steps: 150,
        checkpoint_every: 50,
        lr: LrSchedule::Fixed { lr: 2e-4 },
        ..TrainConfig::default()
    }
}

fn default_resamples() -> usize {
    1000
}

fn default_min_count() -> usize {
    2
}

/// The weight grid of the sensitivity sweep.
pub fn default_sweep_grid() -> Vec<[f64; 2]> {
    vec![[0.5, 0.5], [0.4, 0.6], [0.3, 0.7], [0.2, 0.8], [0.15, 0.85], [0.1, 0.9]]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Inline task spec; `task_path` (when set) wins.
    #[serde(default)]
    pub task: Option<TaskSpec>,
    #[serde(default)]
    pub task_path: Option<PathBuf>,
    #[serde(default = "default_systems")]
    pub systems: Vec<SystemId>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Append "?" to test inputs before decoding.
    #[serde(default)]
    pub append_qmark: bool,
    /// Run the corrector on test inputs before decoding.
    #[serde(default)]
    pub gec_pre: bool,
    #[serde(default)]
    pub embedder: EmbedderChoice,
    #[serde(default)]
    pub arch: ArchSpec,
    #[serde(default = "default_pretrain_cfg")]
    pub pretrain: TrainConfig,
    #[serde(default = "default_mlm_cfg")]
    pub mlm_train: TrainConfig,
    #[serde(default = "default_mle_ft_cfg")]
    pub finetune_mle: TrainConfig,
    #[serde(default = "default_mrt_cfg")]
    pub finetune_mrt: TrainConfig,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_sweep_grid")]
    pub sweep: Vec<[f64; 2]>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.systems.is_empty() {
            return Err(CliError::Usage("experiment needs at least one system".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Usage("experiment needs at least one seed".into()));
        }
        Ok(())
    }

    fn task_spec(&self) -> Result<TaskSpec, CliError> {
        if let Some(p) = &self.task_path {
            return Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?);
        }
        Ok(self.task.clone().unwrap_or_default())
    }
}

// ── content-addressed stages ─────────────────────────────────────────

struct Stager {
    root: PathBuf,
    resume: bool,
    built: RefCell<HashSet<PathBuf>>,
}

impl Stager {
    fn new(root: &Path, resume: bool) -> Stager {
        Stager { root: root.to_path_buf(), resume, built: RefCell::new(HashSet::new()) }
    }

    /// Run or reuse a stage. Within one harness run a completed stage is
    /// always shared; across runs only with `resume`.
    fn run(
        &self,
        name: &str,
        key_material: &str,
        build: impl FnOnce(&Path) -> Result<(), CliError>,
    ) -> Result<PathBuf, CliError> {
        let key = sha256_hex(format!("{name}|{key_material}").as_bytes());
        let dir = self.root.join(format!("{name}-{}", &key[..16]));
        let done = dir.join("DONE");
        let fresh = self.built.borrow().contains(&dir);
        if done.exists() && (self.resume || fresh) {
            return Ok(dir);
        }
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        build(&dir)?;
        write_atomic(&done, b"ok")?;
        self.built.borrow_mut().insert(dir.clone());
        Ok(dir)
    }
}

fn cfg_key<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable config")
}

// ── per-seed pipeline ────────────────────────────────────────────────

struct SeedPipeline<'a> {
    spec: &'a ExperimentSpec,
    stager: &'a Stager,
    seed: u64,
    data: DataBundle,
    data_key: String,
}

impl<'a> SeedPipeline<'a> {
    fn new(spec: &'a ExperimentSpec, stager: &'a Stager, seed: u64) -> Result<Self, CliError> {
        let mut task_spec = spec.task_spec()?;
        task_spec.seed = seed;
        let data_key = format!("{}|{}", cfg_key(&task_spec), spec.min_count);
        let data = build_data(task_spec, spec.min_count)?;
        Ok(SeedPipeline { spec, stager, seed, data, data_key })
    }

    fn mlm(&self) -> Result<MaskedLm, CliError> {
        let key = format!(
            "{}|{}|{}|{}",
            self.data_key,
            cfg_key(&self.spec.mlm_train),
            cfg_key(&self.spec.arch),
            self.seed
        );
        let dir = self.stager.run("mlm", &key, |dir| {
            let mut cfg = self.spec.mlm_train.clone();
            cfg.seed = self.seed;
            let seqs: Vec<TokenSeq> =
                self.data.mono.tgt.iter().map(|l| self.data.vocab.tokenize(l)).collect();
            let n_valid = (seqs.len() / 20).max(1);
            let (train, valid) = seqs.split_at(seqs.len() - n_valid);
            let mlm = MaskedLm::new(self.spec.arch.mlm(self.data.vocab.len()), self.seed)?;
            let (mlm, report) = train_mlm(mlm, train, valid, &cfg, None)?;
            save_mlm(&dir.join("mlm.rfmt"), &mlm)?;
            write_atomic(&dir.join("report.json"), serde_json::to_string(&report)?.as_bytes())?;
            Ok(())
        })?;
        Ok(load_mlm(&dir.join("mlm.rfmt"), None)?)
    }

    fn trained_embedder(&self) -> Result<MaskedLm, CliError> {
        let key = format!(
            "emb|{}|{}|{}|{}",
            self.data_key,
            cfg_key(&self.spec.mlm_train),
            cfg_key(&self.spec.arch),
            self.seed
        );
        let dir = self.stager.run("embedder", &key, |dir| {
            let mut cfg = self.spec.mlm_train.clone();
            cfg.seed = self.seed;
            let mixed = self.data.mono.mixed();
            let seqs: Vec<TokenSeq> = mixed.iter().map(|l| self.data.vocab.tokenize(l)).collect();
            let n_valid = (seqs.len() / 20).max(1);
            let (train, valid) = seqs.split_at(seqs.len() - n_valid);
            let mlm = MaskedLm::new(self.spec.arch.mlm(self.data.vocab.len()), self.seed ^ 0xe)?;
            let (mlm, _) = train_mlm(mlm, train, valid, &cfg, None)?;
            save_mlm(&dir.join("embedder.rfmt"), &mlm)?;
            Ok(())
        })?;
        Ok(load_mlm(&dir.join("embedder.rfmt"), None)?)
    }

    fn pretrained(&self, robust: bool) -> Result<NmtModel, CliError> {
        let name = if robust { "robust-baseline" } else { "baseline" };
        let key = format!(
            "{}|{}|{}|{}|{robust}",
            self.data_key,
            cfg_key(&self.spec.pretrain),
            cfg_key(&self.spec.arch),
            self.seed
        );
        let dir = self.stager.run(name, &key, |dir| {
            let mut cfg = self.spec.pretrain.clone();
            cfg.seed = self.seed;
            let pairs = if robust {
                robust_pairs(&self.data.pretrain_train, &self.data.vocab, self.seed)?
            } else {
                pairs_from_triples(&self.data.pretrain_train, &self.data.vocab)
            };
            let valid = validation_from_triples(&self.data.pretrain_valid, &self.data.vocab);
            let model = NmtModel::new(self.spec.arch.nmt(self.data.vocab.len()), self.seed)?;
            let (model, report) = train_mle(model, &pairs, &valid, &self.data.vocab, &cfg, None)?;
            save_nmt(&dir.join("model.rfmt"), &model)?;
            write_atomic(&dir.join("report.json"), serde_json::to_string(&report)?.as_bytes())?;
            Ok(())
        })?;
        Ok(load_nmt(&dir.join("model.rfmt"), None)?)
    }

    fn adapt_sources(&self) -> Vec<TokenSeq> {
        self.data.adapt.train.iter().map(|t| self.data.vocab.tokenize(&t.noisy_src)).collect()
    }

    /// Build (or reuse) the fine-tuned model for one system.
    fn system_model(&self, system: SystemId, weights: Option<ScoreWeights>) -> Result<NmtModel, CliError> {
        match system {
            SystemId::Baseline => self.pretrained(false),
            SystemId::RobustBaseline => self.pretrained(true),
            SystemId::MleFt => {
                let key = format!(
                    "{}|{}|{}",
                    self.data_key,
                    cfg_key(&self.spec.finetune_mle),
                    self.seed
                );
                let dir = self.stager.run("mle-ft", &key, |dir| {
                    let mut cfg = self.spec.finetune_mle.clone();
                    cfg.seed = self.seed;
                    let baseline = self.pretrained(false)?;
                    let sources = self.adapt_sources();
                    let synth =
                        forward_translate(&baseline, &sources, &self.data.vocab, cfg.max_decode_len)?;
                    let pairs: Vec<(TokenSeq, TokenSeq)> = sources
                        .into_iter()
                        .zip(synth.iter().map(|t| self.data.vocab.tokenize(t)))
                        .collect();
                    let valid = validation_from_triples(&self.data.adapt.valid, &self.data.vocab);
                    let (model, report) =
                        train_mle(baseline, &pairs, &valid, &self.data.vocab, &cfg, None)?;
                    save_nmt(&dir.join("model.rfmt"), &model)?;
                    write_atomic(&dir.join("report.json"), serde_json::to_string(&report)?.as_bytes())?;
                    Ok(())
                })?;
                Ok(load_nmt(&dir.join("model.rfmt"), None)?)
            }
            SystemId::MrtBleu => {
                let key = format!(
                    "{}|{}|{}",
                    self.data_key,
                    cfg_key(&self.spec.finetune_mrt),
                    self.seed
                );
                let dir = self.stager.run("mrt-bleu", &key, |dir| {
                    let mut cfg = self.spec.finetune_mrt.clone();
                    cfg.seed = self.seed;
                    let baseline = self.pretrained(false)?;
                    let sources = self.adapt_sources();
                    let synth =
                        forward_translate(&baseline, &sources, &self.data.vocab, cfg.max_decode_len)?;
                    let pairs: Vec<(TokenSeq, String)> = sources.into_iter().zip(synth).collect();
                    let valid = validation_from_triples(&self.data.adapt.valid, &self.data.vocab);
                    let (model, report) =
                        train_mrt_bleu(baseline, &pairs, &valid, &self.data.vocab, &cfg, None)?;
                    save_nmt(&dir.join("model.rfmt"), &model)?;
                    write_atomic(&dir.join("report.json"), serde_json::to_string(&report)?.as_bytes())?;
                    Ok(())
                })?;
                Ok(load_nmt(&dir.join("model.rfmt"), None)?)
            }
            SystemId::Ours | SystemId::OursRobust => {
                let robust = system == SystemId::OursRobust;
                let mut cfg = self.spec.finetune_mrt.clone();
                cfg.seed = self.seed;
                if let Some(w) = weights {
                    cfg.weights = w;
                }
                let key = format!(
                    "{}|{}|{}|{:?}|{robust}",
                    self.data_key,
                    cfg_key(&cfg),
                    self.seed,
                    self.spec.embedder
                );
                let name = if robust { "ours-robust" } else { "ours" };
                let dir = self.stager.run(name, &key, |dir| {
                    let init = self.pretrained(robust)?;
                    let mlm = self.mlm()?;
                    let embedder = match self.spec.embedder {
                        EmbedderChoice::Oracle => Embedder::Oracle(OracleEmbedder::from_dictionary(
                            self.data.task.dictionary(),
                        )),
                        EmbedderChoice::Trained => {
                            Embedder::Trained(TrainedEmbedder::new(self.trained_embedder()?))
                        }
                    };
                    let gec = GecCorrector::from_task(&self.data.task);
                    let scorers = MrtScorers { mlm: &mlm, embedder: &embedder, gec: &gec };
                    let sources = self.adapt_sources();
                    let valid = validation_from_triples(&self.data.adapt.valid, &self.data.vocab);
                    let (model, report) = train_mrt_composite(
                        init,
                        &sources,
                        &scorers,
                        &valid,
                        &self.data.vocab,
                        &cfg,
                        None,
                    )?;
                    save_nmt(&dir.join("model.rfmt"), &model)?;
                    write_atomic(&dir.join("report.json"), serde_json::to_string(&report)?.as_bytes())?;
                    Ok(())
                })?;
                Ok(load_nmt(&dir.join("model.rfmt"), None)?)
            }
        }
    }

    /// Decode the held-out test split with the configured test-time options.
    fn translate_test(&self, model: &NmtModel) -> Result<Vec<String>, CliError> {
        let gec = if self.spec.gec_pre { Some(GecCorrector::from_task(&self.data.task)) } else { None };
        let sources: Vec<TokenSeq> = self
            .data
            .adapt
            .test
            .iter()
            .map(|t| {
                let mut text = t.noisy_src.clone();
                if self.spec.append_qmark || self.spec.gec_pre {
                    text = normalize_question(&text);
                }
                if let Some(g) = &gec {
                    text = g.correct(&text);
                }
                self.data.vocab.tokenize(&text)
            })
            .collect();
        Ok(forward_translate(model, &sources, &self.data.vocab, self.spec.finetune_mrt.max_decode_len)?)
    }

    fn test_references(&self) -> Vec<String> {
        self.data.adapt.test.iter().map(|t| t.tgt.clone()).collect()
    }
}

// ── aggregation ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct ResultsRow {
    pub system: String,
    pub bleu: f64,
    pub ter: f64,
    pub qmark_rate: f64,
    pub delta_bleu: f64,
    pub delta_ter: f64,
    pub p_value_vs_mle: Option<f64>,
    pub per_seed_bleu: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultsTable {
    pub seeds: Vec<u64>,
    pub append_qmark: bool,
    pub gec_pre: bool,
    pub rows: Vec<ResultsRow>,
}

impl ResultsTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "system            BLEU    TER    ?-rate  dBLEU   dTER    p(vs mle_ft)  seeds={:?}\n",
            self.seeds
        ));
        for r in &self.rows {
            let p = r
                .p_value_vs_mle
                .map(|p| format!("{p:.4}"))
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!(
                "{:<16} {:>6.2} {:>6.3} {:>6.1}% {:>+6.2} {:>+6.3}  {:>12}\n",
                r.system,
                r.bleu,
                r.ter,
                r.qmark_rate * 100.0,
                r.delta_bleu,
                r.delta_ter,
                p
            ));
        }
        out
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Serialize)]
struct RawSeedResult {
    seed: u64,
    system: String,
    report: EvalReport,
}

/// Run every (system, seed) pipeline and aggregate the medians.
pub fn run_experiment(
    spec: &ExperimentSpec,
    out_dir: &Path,
    cache_dir: &Path,
    resume: bool,
) -> Result<ResultsTable, CliError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let stager = Stager::new(cache_dir, resume);

    // hypotheses per (system, seed), plus references per seed
    let mut hyps: BTreeMap<(String, u64), Vec<String>> = BTreeMap::new();
    let mut refs: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    let mut raw: Vec<RawSeedResult> = Vec::new();

    let mut systems = spec.systems.clone();
    // p-values need the MLE counterpart even if it was not requested
    let needs_mle = systems.iter().any(|s| s.has_mle_counterpart());
    if needs_mle && !systems.contains(&SystemId::MleFt) {
        systems.push(SystemId::MleFt);
    }

    for &seed in &spec.seeds {
        let pipe = SeedPipeline::new(spec, &stager, seed)?;
        refs.insert(seed, pipe.test_references());
        for &system in &systems {
            let model = pipe.system_model(system, None)?;
            let outputs = pipe.translate_test(&model)?;
            let report = evaluate(&outputs, &refs[&seed])?;
            let seed_dir = out_dir.join(format!("seed{seed}"));
            std::fs::create_dir_all(&seed_dir)?;
            crate::corpus::write_lines(&seed_dir.join(format!("{}.hyp.txt", system.name())), &outputs)?;
            raw.push(RawSeedResult { seed, system: system.name().to_string(), report });
            hyps.insert((system.name().to_string(), seed), outputs);
        }
        crate::corpus::write_lines(&out_dir.join(format!("seed{seed}/refs.txt")), &refs[&seed])?;
    }

    let eval_of = |system: SystemId, seed: u64| -> &EvalReport {
        raw.iter()
            .find(|r| r.seed == seed && r.system == system.name())
            .map(|r| &r.report)
            .expect("evaluated")
    };

    let baseline_bleu: Vec<f64> = if raw.iter().any(|r| r.system == "baseline") {
        spec.seeds.iter().map(|&s| eval_of(SystemId::Baseline, s).bleu).collect()
    } else {
        Vec::new()
    };
    let baseline_ter: Vec<f64> = if baseline_bleu.is_empty() {
        Vec::new()
    } else {
        spec.seeds.iter().map(|&s| eval_of(SystemId::Baseline, s).ter).collect()
    };

    let mut rows = Vec::new();
    for &system in &spec.systems {
        let bleus: Vec<f64> = spec.seeds.iter().map(|&s| eval_of(system, s).bleu).collect();
        let ters: Vec<f64> = spec.seeds.iter().map(|&s| eval_of(system, s).ter).collect();
        let qrates: Vec<f64> =
            spec.seeds.iter().map(|&s| eval_of(system, s).question_final_rate).collect();
        let p_value = if system.has_mle_counterpart() {
            let ps: Vec<f64> = spec
                .seeds
                .iter()
                .map(|&s| {
                    let sys_h = &hyps[&(system.name().to_string(), s)];
                    let mle_h = &hyps[&("mle_ft".to_string(), s)];
                    paired_bootstrap(sys_h, mle_h, &refs[&s], spec.resamples, s)
                })
                .collect::<Result<_, _>>()?;
            Some(median(&ps))
        } else {
            None
        };
        let bleu_med = median(&bleus);
        let ter_med = median(&ters);
        rows.push(ResultsRow {
            system: system.name().to_string(),
            bleu: bleu_med,
            ter: ter_med,
            qmark_rate: median(&qrates),
            delta_bleu: if baseline_bleu.is_empty() { 0.0 } else { bleu_med - median(&baseline_bleu) },
            delta_ter: if baseline_ter.is_empty() { 0.0 } else { ter_med - median(&baseline_ter) },
            p_value_vs_mle: p_value,
            per_seed_bleu: bleus,
        });
    }

    let table = ResultsTable {
        seeds: spec.seeds.clone(),
        append_qmark: spec.append_qmark,
        gec_pre: spec.gec_pre,
        rows,
    };
    write_atomic(&out_dir.join("results.json"), serde_json::to_string_pretty(&table)?.as_bytes())?;
    write_atomic(&out_dir.join("results.txt"), table.render().as_bytes())?;
    write_atomic(&out_dir.join("results_raw.json"), serde_json::to_string_pretty(&raw)?.as_bytes())?;
    Ok(table)
}

// ── alpha/beta sweep ─────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub bleu: f64,
    pub ter: f64,
    pub qmark_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl fmt::Display for SweepTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "alpha  beta   BLEU    TER    ?-rate   (seed {})", self.seed)?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<6.2} {:<6.2} {:>6.2} {:>6.3} {:>6.1}%",
                r.alpha,
                r.beta,
                r.bleu,
                r.ter,
                r.qmark_rate * 100.0
            )?;
        }
        Ok(())
    }
}

/// Train and evaluate the proposed system once per (alpha, beta) pair on the
/// first seed, sharing the data/baseline/MLM stages.
pub fn run_sweep(
    spec: &ExperimentSpec,
    out_dir: &Path,
    cache_dir: &Path,
    resume: bool,
) -> Result<SweepTable, CliError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let stager = Stager::new(cache_dir, resume);
    let seed = spec.seeds[0];
    let pipe = SeedPipeline::new(spec, &stager, seed)?;
    let refs = pipe.test_references();
    let mut rows = Vec::new();
    for &[alpha, beta] in &spec.sweep {
        let weights = ScoreWeights { alpha, beta, mlm_normalize: spec.finetune_mrt.weights.mlm_normalize };
        let model = pipe.system_model(SystemId::Ours, Some(weights))?;
        let outputs = pipe.translate_test(&model)?;
        let report = evaluate(&outputs, &refs)?;
        rows.push(SweepRow {
            alpha,
            beta,
            bleu: report.bleu,
            ter: report.ter,
            qmark_rate: report.question_final_rate,
        });
    }
    let table = SweepTable { seed, rows };
    write_atomic(&out_dir.join("sweep.json"), serde_json::to_string_pretty(&table)?.as_bytes())?;
    write_atomic(&out_dir.join("sweep.txt"), table.to_string().as_bytes())?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_defaults_and_validation() {
        let spec = ExperimentSpec::default();
        assert_eq!(spec.seeds, vec![1, 2, 3]);
        assert!(spec.systems.contains(&SystemId::Ours));
        assert!(spec.sweep.contains(&[0.15, 0.85]));
        spec.validate().unwrap();
        let bad = ExperimentSpec { systems: vec![], ..ExperimentSpec::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn median_handles_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn table_rendering_is_stable() {
        let table = ResultsTable {
            seeds: vec![1],
            append_qmark: false,
            gec_pre: false,
            rows: vec![ResultsRow {
                system: "baseline".into(),
                bleu: 41.234,
               ter: 0.4567,
                qmark_rate: 0.031,
                delta_bleu: 0.0,
                delta_ter: 0.0,
                p_value_vs_mle: None,
                per_seed_bleu: vec![41.234],
            }],
        };
        let a = table.render();
        let b = table.render();
        assert_eq!(a, b);
        assert!(a.contains("baseline"));
    }
}
