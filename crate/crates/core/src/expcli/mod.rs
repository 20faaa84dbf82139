//! Run configuration, artifact layout and the experiment verbs that chain
//! world generation, SyFiS data, translator pretraining, agent training,
//! evaluation and reporting.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    apply_override, load_config, Ablations, AgentPhase, ModelConfig, OptimizerConfig,
    PretrainPhase, RunConfig, SplitConfig,
};

use crate::evalmetrics::{
    aggregate, evaluate, overlap_report, report_table, results_csv, Aggregate, EvalResult,
    OverlapEpisode, OverlapHistogram, ReportRow, TrajectoryPair,
};
use crate::landmark::{LabelVocabulary, LandmarkError, SyntheticDetector, DEFAULT_LABELS};
use crate::navagent::{
    episode_specs_from_records, rollout, split_counts, train_step, AgentConfig, AgentModel,
    Episode, EpisodeSpec, NavError, NavLossConfig, NavLosses, RolloutMode, SplitCounts, WorldMap,
};
use crate::numcore::{load_checkpoint, save_checkpoint, NumError, ParameterStore};
use crate::syfis::{
    generate_dataset, mix_seed, read_jsonl, write_jsonl, Dataset, DatasetStats, Language,
    MotionDictionary, SyfisConfig, SyfisError, SyfisRecord, PAD,
};
use crate::translator::{
    candidate_inputs, examples_from_records, PretrainConfig, PretrainExample, PretrainLosses,
    TranslatorConfig, TranslatorModel,
};
use crate::worldsim::{
    generate_world, read_world, write_world, EnvironmentGraph, Split, WorldError,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum ExpError {
    #[error("{0}")]
    Config(String),
    #[error("missing prerequisite {0}")]
    Dependency(String),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Landmark(#[from] LandmarkError),
    #[error(transparent)]
    Syfis(#[from] SyfisError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Nav(#[from] NavError),
}

impl ExpError {
    /// Stable machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            ExpError::Config(_) => "config",
            ExpError::Dependency(_) => "dependency",
            ExpError::Usage(_) => "usage",
            ExpError::Io { .. } => "io",
            ExpError::World(_) => "world",
            ExpError::Landmark(_) => "landmark",
            ExpError::Syfis(_) => "syfis",
            ExpError::Num(_) => "numeric",
            ExpError::Nav(_) => "navigation",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExpError + '_ {
    move |source| ExpError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    GenWorlds,
    GenSyfis,
    PretrainTranslator,
    TrainAgent,
    Evaluate,
    Translate,
    Report,
}

impl Verb {
    pub const ALL: [Verb; 7] = [
        Verb::GenWorlds,
        Verb::GenSyfis,
        Verb::PretrainTranslator,
        Verb::TrainAgent,
        Verb::Evaluate,
        Verb::Translate,
        Verb::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::GenWorlds => "gen-worlds",
            Verb::GenSyfis => "gen-syfis",
            Verb::PretrainTranslator => "pretrain-translator",
            Verb::TrainAgent => "train-agent",
            Verb::Evaluate => "evaluate",
            Verb::Translate => "translate",
            Verb::Report => "report",
        }
    }
}

impl FromStr for Verb {
    type Err = ExpError;

    fn from_str(s: &str) -> Result<Self, ExpError> {
        Verb::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ExpError::Usage(format!("unknown verb `{s}`")))
    }
}

// RNG stream ids mixed with the run seed.
const STREAM_SYFIS_SEEN: u64 = 1;
const STREAM_SYFIS_UNSEEN: u64 = 2;
const STREAM_TRANSLATOR_INIT: u64 = 3;
const STREAM_PRETRAIN: u64 = 4;
const STREAM_AGENT_INIT: u64 = 5;
const STREAM_AGENT_TRAIN: u64 = 6;

/// File layout of one output directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn world(&self, world_id: &str) -> PathBuf {
        self.root.join("worlds").join(format!("{world_id}.json"))
    }

    pub fn syfis(&self, split: &str) -> PathBuf {
        self.root.join("syfis").join(format!("{split}.jsonl"))
    }

    pub fn syfis_stats(&self) -> PathBuf {
        self.root.join("syfis").join("stats.json")
    }

    pub fn translator_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("translator.ckpt")
    }

    pub fn agent_checkpoint(&self, label: &str) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("agent-{label}.ckpt"))
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.jsonl"))
    }

    pub fn episodes(&self, label: &str, split: &str) -> PathBuf {
        self.root
            .join("episodes")
            .join(format!("{label}-{split}.jsonl"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn manifest(&self, verb: Verb, label: Option<&str>) -> PathBuf {
        let name = match label {
            Some(l) => format!("{}-{l}.json", verb.name()),
            None => format!("{}.json", verb.name()),
        };
        self.root.join("manifests").join(name)
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.root)
            .unwrap_or(p)
            .display()
            .to_string()
    }
}

fn require(path: &Path) -> Result<(), ExpError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(ExpError::Dependency(path.display().to_string()))
    }
}

fn ensure_parent(path: &Path) -> Result<(), ExpError> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(io_err(dir)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExpError> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExpError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ExpError> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("serializable"));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Artifacts and timings of one verb invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub verb: Verb,
    pub model: Option<String>,
    pub config_hash: String,
    pub tool_version: String,
    pub config: RunConfig,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    /// Seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    fn write(&self, paths: &RunPaths) -> Result<PathBuf, ExpError> {
        for a in &self.artifacts {
            let p = paths.root.join(a);
            if !p.is_file() {
                return Err(ExpError::Dependency(format!(
                    "{} (listed in the {} manifest)",
                    p.display(),
                    self.verb.name()
                )));
            }
        }
        let path = paths.manifest(self.verb, self.model.as_deref());
        write_json(&path, self)?;
        Ok(path)
    }
}

// ---------------------------------------------------------------------------
// In-memory building blocks

pub fn label_vocabulary(cfg: &RunConfig) -> Result<LabelVocabulary, ExpError> {
    let n = cfg.world.label_count;
    if n > DEFAULT_LABELS.len() {
        return Err(ExpError::Config(format!(
            "world.label_count must be <= {}, got {n}",
            DEFAULT_LABELS.len()
        )));
    }
    Ok(LabelVocabulary::new(
        DEFAULT_LABELS[..n].iter().map(|s| s.to_string()).collect(),
    )?)
}

pub fn language(cfg: &RunConfig) -> Result<Language, ExpError> {
    let dictionary = match &cfg.syfis.dictionary_path {
        Some(p) => MotionDictionary::from_json_file(Path::new(p))?,
        None => MotionDictionary::default(),
    };
    Ok(Language::new(
        dictionary,
        label_vocabulary(cfg)?,
        cfg.syfis.max_subinstruction_tokens,
    ))
}

pub fn detector(cfg: &RunConfig) -> SyntheticDetector {
    SyntheticDetector {
        labels: cfg.world.label_count,
    }
}

/// Seen and unseen worlds from their disjoint seed ranges.
pub fn build_worlds(
    cfg: &RunConfig,
) -> Result<(Vec<EnvironmentGraph>, Vec<EnvironmentGraph>), ExpError> {
    let s = &cfg.splits;
    let seen = (0..s.seen_worlds as u64)
        .map(|i| generate_world(s.seen_seed_base + i, &cfg.world))
        .collect::<Result<Vec<_>, _>>()?;
    let unseen = (0..s.unseen_worlds as u64)
        .map(|i| Ok(generate_world(s.unseen_seed_base + i, &cfg.world)?.with_split(Split::Unseen)))
        .collect::<Result<Vec<_>, ExpError>>()?;
    Ok((seen, unseen))
}

pub fn world_ids(cfg: &RunConfig) -> Vec<String> {
    let s = &cfg.splits;
    (0..s.seen_worlds as u64)
        .map(|i| s.seen_seed_base + i)
        .chain((0..s.unseen_worlds as u64).map(|i| s.unseen_seed_base + i))
        .map(|seed| format!("world-{seed}"))
        .collect()
}

pub fn world_map(worlds: impl IntoIterator<Item = EnvironmentGraph>) -> WorldMap {
    worlds
        .into_iter()
        .map(|w| (w.world_id.clone(), w))
        .collect()
}

pub struct Datasets {
    pub seen: Dataset,
    pub unseen: Dataset,
}

pub fn build_datasets(
    cfg: &RunConfig,
    seen: &[EnvironmentGraph],
    unseen: &[EnvironmentGraph],
) -> Result<Datasets, ExpError> {
    let lang = language(cfg)?;
    let det = detector(cfg);
    let seen_ds = generate_dataset(
        seen,
        &det,
        &cfg.syfis,
        &lang,
        mix_seed(cfg.seed, STREAM_SYFIS_SEEN),
    )?;
    let unseen_cfg = SyfisConfig {
        trajectories_per_world: cfg.splits.unseen_trajectories_per_world,
        ..cfg.syfis.clone()
    };
    let unseen_ds = generate_dataset(
        unseen,
        &det,
        &unseen_cfg,
        &lang,
        mix_seed(cfg.seed, STREAM_SYFIS_UNSEEN),
    )?;
    Ok(Datasets {
        seen: seen_ds,
        unseen: unseen_ds,
    })
}

/// Splits seen-world records into (train, held-out) by trajectory id.
pub fn split_seen(
    cfg: &RunConfig,
    records: &[SyfisRecord],
) -> (Vec<SyfisRecord>, Vec<SyfisRecord>) {
    records
        .iter()
        .cloned()
        .partition(|r| r.trajectory_id % cfg.splits.holdout_every != 0)
}

pub fn translator_model(cfg: &RunConfig, vocab: usize) -> Result<TranslatorModel, ExpError> {
    Ok(TranslatorModel::new(TranslatorConfig {
        dim: cfg.model.dim,
        mlp_hidden: cfg.model.mlp_hidden,
        vocab,
        feature_dim: cfg.world.label_count,
        max_len: cfg.model.max_len,
    })?)
}

pub fn agent_model(cfg: &RunConfig, vocab: usize) -> Result<AgentModel, ExpError> {
    Ok(AgentModel::new(AgentConfig {
        dim: cfg.model.dim,
        vocab,
        feature_dim: cfg.world.label_count,
    })?)
}

/// Fixed-size batches over an index set, reshuffled every pass.
struct Batcher {
    order: Vec<usize>,
    batch: usize,
    cursor: usize,
}

impl Batcher {
    fn new(len: usize, batch: usize) -> Self {
        Self {
            order: (0..len).collect(),
            batch: batch.min(len),
            cursor: len,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let out = &self.order[self.cursor..self.cursor + self.batch];
        self.cursor += self.batch;
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainLogLine {
    pub step: usize,
    #[serde(flatten)]
    pub losses: PretrainLosses,
}

/// Registers a fresh translator and runs the configured pretraining steps.
pub fn pretrain_translator(
    cfg: &RunConfig,
    model: &TranslatorModel,
    train: &[PretrainExample],
) -> Result<(ParameterStore, Vec<PretrainLogLine>), ExpError> {
    if train.is_empty() {
        return Err(ExpError::Usage("no pretraining records".into()));
    }
    let mut store = ParameterStore::new();
    model.register(
        &mut store,
        &mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_TRANSLATOR_INIT)),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_PRETRAIN));
    let p = &cfg.pretrain;
    let (alpha_sig, alpha_dsl) = cfg.effective_alphas();
    let losses = PretrainConfig {
        alpha_sig,
        alpha_dsl,
        margin: p.margin,
        dsl_form: p.dsl_form,
    };
    let opt = cfg.optimizer.adamw(p.lr);
    let mut batcher = Batcher::new(train.len(), p.batch_size);
    let mut log = Vec::new();
    for step in 0..p.steps {
        let batch: Vec<PretrainExample> = batcher
            .next(&mut rng)
            .iter()
            .map(|&i| train[i].clone())
            .collect();
        let l = model.pretrain_step(&mut store, &batch, &losses, &opt)?;
        if step % p.log_every == 0 || step + 1 == p.steps {
            log::info!(
                "pretrain step {step}: total {:.4} sig {:.4} dsl {:.4}",
                l.total,
                l.sig,
                l.dsl
            );
            log.push(PretrainLogLine { step, losses: l });
        }
    }
    Ok((store, log))
}

/// Held-out quality of a pretrained translator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub examples: usize,
    pub token_accuracy: f64,
    pub mean_positive: f64,
    pub mean_hard: f64,
    pub mean_easy: f64,
    pub hard_margin: f64,
}

pub fn pretrain_report(
    model: &TranslatorModel,
    store: &ParameterStore,
    heldout: &[PretrainExample],
) -> Result<PretrainReport, ExpError> {
    let geo = model.geometry(store, heldout)?;
    Ok(PretrainReport {
        examples: heldout.len(),
        token_accuracy: model.token_accuracy(store, heldout)?,
        mean_positive: geo.mean_positive(),
        mean_hard: geo.mean_hard(),
        mean_easy: geo.mean_easy(),
        hard_margin: geo.hard_margin(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentLogLine {
    pub step: usize,
    #[serde(flatten)]
    pub losses: NavLosses,
}

/// Trains a fresh agent, jointly with `translator` (model and pretrained
/// parameters) when given. Returns the combined parameter store.
pub fn train_agent(
    cfg: &RunConfig,
    agent: &AgentModel,
    translator: Option<(&TranslatorModel, ParameterStore)>,
    worlds: &WorldMap,
    train: &[EpisodeSpec],
) -> Result<(ParameterStore, Vec<AgentLogLine>), ExpError> {
    if train.is_empty() {
        return Err(ExpError::Usage("no training episodes".into()));
    }
    let mut store = ParameterStore::new();
    agent.register(
        &mut store,
        &mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_AGENT_INIT)),
    );
    let model = match translator {
        Some((m, pretrained)) => {
            store.merge(pretrained)?;
            Some(m)
        }
        None => None,
    };
    let a = &cfg.agent;
    let (beta_nav, beta_sig, beta_ss) = cfg.effective_betas();
    let losses = NavLossConfig {
        beta_nav,
        beta_sig,
        beta_ss,
        lambda: a.lambda,
        ss_form: a.ss_form,
    };
    let opt = cfg.optimizer.adamw(a.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_AGENT_TRAIN));
    let mut batcher = Batcher::new(train.len(), a.batch_size);
    let mut log = Vec::new();
    for step in 0..a.steps {
        let idx = batcher.next(&mut rng).to_vec();
        let batch: Vec<&EpisodeSpec> = idx.iter().map(|&i| &train[i]).collect();
        let l = train_step(
            &mut store,
            agent,
            model,
            worlds,
            &batch,
            &losses,
            &cfg.rollout,
            &opt,
            &mut rng,
        )?;
        if step % a.log_every == 0 || step + 1 == a.steps {
            log::info!(
                "agent step {step}: objective {:.4} rl {:.4} il {:.4} sig {:.4} ss {:.4}",
                l.objective,
                l.rl,
                l.il,
                l.sig,
                l.ss
            );
            log.push(AgentLogLine { step, losses: l });
        }
    }
    Ok((store, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: Episode,
    pub result: EvalResult,
}

/// Greedy rollouts scored against their reference paths.
pub fn run_episodes(
    cfg: &RunConfig,
    store: &ParameterStore,
    agent: &AgentModel,
    translator: Option<&TranslatorModel>,
    worlds: &WorldMap,
    specs: &[EpisodeSpec],
) -> Result<Vec<EpisodeLog>, ExpError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    specs
        .iter()
        .map(|spec| {
            let graph = worlds
                .get(&spec.world_id)
                .ok_or_else(|| ExpError::Dependency(format!("world {}", spec.world_id)))?;
            let episode = rollout(
                store,
                agent,
                translator,
                graph,
                spec,
                RolloutMode::Greedy,
                &cfg.rollout,
                &mut rng,
            )?;
            let pair = TrajectoryPair::new(
                graph,
                episode.path.clone(),
                spec.path.clone(),
                cfg.rollout.success_radius,
            )?;
            let result = evaluate(&pair)?;
            Ok(EpisodeLog { episode, result })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub metrics: Aggregate,
    pub split_mask: Option<SplitMaskReport>,
    pub overlap: OverlapHistogram,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMaskReport {
    pub counts: SplitCounts,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub splits: Vec<SplitReport>,
}

/// Landmark label ids named by each trajectory's sub-instructions.
fn instruction_landmarks(
    records: &[SyfisRecord],
    vocab: &LabelVocabulary,
) -> Result<BTreeMap<(String, usize), Vec<usize>>, ExpError> {
    let mut out: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    for r in records {
        let id = vocab.id_of(&r.positive.landmark)?;
        out.entry((r.world_id.clone(), r.trajectory_id))
            .or_default()
            .push(id);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_split(
    cfg: &RunConfig,
    split: &str,
    store: &ParameterStore,
    agent: &AgentModel,
    translator: Option<&TranslatorModel>,
    worlds: &WorldMap,
    records: &[SyfisRecord],
) -> Result<(SplitReport, Vec<EpisodeLog>), ExpError> {
    let specs = episode_specs_from_records(records)?;
    let logs = run_episodes(cfg, store, agent, translator, worlds, &specs)?;
    let results: Vec<EvalResult> = logs.iter().map(|l| l.result).collect();
    let split_mask = match translator {
        Some(t) => {
            let counts = split_counts(store, agent, t, worlds, &specs, &cfg.rollout)?;
            Some(SplitMaskReport {
                counts,
                f1: counts.f1(),
            })
        }
        None => None,
    };
    let landmarks = instruction_landmarks(records, &label_vocabulary(cfg)?)?;
    let overlap_eps: Vec<OverlapEpisode> = specs
        .iter()
        .zip(&logs)
        .map(|(spec, log)| OverlapEpisode {
            graph: &worlds[&spec.world_id],
            instruction_landmarks: landmarks
                .get(&(spec.world_id.clone(), spec.trajectory_id))
                .cloned()
                .unwrap_or_default(),
            path: log.episode.path.clone(),
            initial_heading: spec.initial_heading,
            success: log.result.sr == 1.0,
        })
        .collect();
    let overlap = overlap_report(
        &overlap_eps,
        &detector(cfg),
        cfg.syfis.top_k,
        cfg.syfis.temperature,
    )?;
    Ok((
        SplitReport {
            split: split.to_string(),
            metrics: aggregate(&results),
            split_mask,
            overlap,
        },
        logs,
    ))
}

/// Text-level view of one translator pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationReport {
    pub record_id: String,
    pub instruction: String,
    pub target: String,
    /// Argmax token per instruction position, PAD dropped.
    pub generated: String,
    /// Instruction tokens whose split-mask value is at least 0.5.
    pub selected: String,
    pub split_mask: Vec<f64>,
}

/// Runs the translator on the trajectory instruction that contains
/// `record`, observed from the record's viewpoint.
pub fn translate_record(
    model: &TranslatorModel,
    store: &ParameterStore,
    lang: &Language,
    worlds: &WorldMap,
    records: &[SyfisRecord],
    record: &SyfisRecord,
) -> Result<TranslationReport, ExpError> {
    let graph = worlds
        .get(&record.world_id)
        .ok_or_else(|| ExpError::Dependency(format!("world {}", record.world_id)))?;
    let mut same: Vec<SyfisRecord> = records
        .iter()
        .filter(|r| r.world_id == record.world_id && r.trajectory_id == record.trajectory_id)
        .cloned()
        .collect();
    same.sort_by_key(|r| r.step_index);
    let instruction = match episode_specs_from_records(&same)?.pop() {
        Some(spec) => spec.instruction,
        None => record.positive.tokens.clone(),
    };
    let obs = graph.observe(record.source, record.heading)?;
    let out = model.translate(
        store,
        &instruction,
        &candidate_inputs(&obs.candidates),
        None,
    )?;
    let generated: Vec<usize> = (0..out.token_dists.rows())
        .map(|r| out.token_dists.argmax_row(r))
        .filter(|&t| t != PAD)
        .collect();
    let selected: Vec<usize> = instruction
        .iter()
        .zip(&out.split_mask)
        .filter_map(|(&t, &m)| (m >= 0.5).then_some(t))
        .collect();
    Ok(TranslationReport {
        record_id: record.record_id.clone(),
        instruction: lang.tokens.detokenize(&instruction),
        target: record.positive.text(),
        generated: lang.tokens.detokenize(&generated),
        selected: lang.tokens.detokenize(&selected),
        split_mask: out.split_mask,
    })
}

// ---------------------------------------------------------------------------
// Verbs over an output directory

/// Verb-specific options beyond the config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Record id for `translate`; defaults to the first held-out record.
    pub record: Option<String>,
}

fn read_records(path: &Path) -> Result<Vec<SyfisRecord>, ExpError> {
    require(path)?;
    let f = fs::File::open(path).map_err(io_err(path))?;
    Ok(read_jsonl(BufReader::new(f))?)
}

fn write_records(path: &Path, records: &[SyfisRecord]) -> Result<(), ExpError> {
    ensure_parent(path)?;
    let f = fs::File::create(path).map_err(io_err(path))?;
    write_jsonl(records, BufWriter::new(f)).map_err(io_err(path))
}

fn load_worlds(cfg: &RunConfig, paths: &RunPaths) -> Result<WorldMap, ExpError> {
    let ids = world_ids(cfg);
    for id in &ids {
        require(&paths.world(id))?;
    }
    ids.iter()
        .map(|id| Ok((id.clone(), read_world(&paths.world(id))?)))
        .collect()
}

fn load_translator(
    cfg: &RunConfig,
    paths: &RunPaths,
    vocab: usize,
) -> Result<(TranslatorModel, ParameterStore), ExpError> {
    let ckpt = paths.translator_checkpoint();
    require(&ckpt)?;
    let model = translator_model(cfg, vocab)?;
    let mut store = ParameterStore::new();
    model.register(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
    load_checkpoint(&mut store, &ckpt)?;
    Ok((model, store))
}

struct Timer {
    timings: BTreeMap<String, f64>,
    start: Instant,
}

impl Timer {
    fn new() -> Self {
        Self {
            timings: BTreeMap::new(),
            start: Instant::now(),
        }
    }

    fn lap(&mut self, name: &str) {
        self.timings
            .insert(name.into(), self.start.elapsed().as_secs_f64());
        self.start = Instant::now();
    }
}

/// Runs one verb against `cfg.output_dir` and returns the manifest path.
pub fn run_command(verb: Verb, cfg: &RunConfig, opts: &RunOptions) -> Result<PathBuf, ExpError> {
    cfg.validate()?;
    let paths = RunPaths::new(&cfg.output_dir);
    let mut timer = Timer::new();
    let mut artifacts: Vec<PathBuf> = Vec::new();
    let mut model_label = None;
    match verb {
        Verb::GenWorlds => {
            let (seen, unseen) = build_worlds(cfg)?;
            for w in seen.iter().chain(&unseen) {
                let p = paths.world(&w.world_id);
                ensure_parent(&p)?;
                write_world(w, &p)?;
                artifacts.push(p);
            }
            timer.lap("generate");
        }
        Verb::GenSyfis => {
            let mut worlds = load_worlds(cfg, &paths)?;
            // generation order, not map order: world-10 must not precede world-2
            let (seen, unseen): (Vec<_>, Vec<_>) = world_ids(cfg)
                .iter()
                .filter_map(|id| worlds.remove(id))
                .partition(|w| w.split == Split::Seen);
            timer.lap("load");
            let ds = build_datasets(cfg, &seen, &unseen)?;
            timer.lap("generate");
            let (train, heldout) = split_seen(cfg, &ds.seen.records);
            for (name, recs) in [
                ("train", &train),
                ("val_seen", &heldout),
                ("unseen", &ds.unseen.records),
            ] {
                let p = paths.syfis(name);
                write_records(&p, recs)?;
                artifacts.push(p);
            }
            let stats: BTreeMap<&str, &DatasetStats> =
                [("seen", &ds.seen.stats), ("unseen", &ds.unseen.stats)]
                    .into_iter()
                    .collect();
            write_json(&paths.syfis_stats(), &stats)?;
            artifacts.push(paths.syfis_stats());
            timer.lap("write");
        }
        Verb::PretrainTranslator => {
            let train_path = paths.syfis("train");
            let val_path = paths.syfis("val_seen");
            require(&train_path)?;
            require(&val_path)?;
            let worlds = load_worlds(cfg, &paths)?;
            let train = examples_from_records(&read_records(&train_path)?, &worlds)?;
            let heldout = examples_from_records(&read_records(&val_path)?, &worlds)?;
            let vocab = language(cfg)?.tokens.len();
            let model = translator_model(cfg, vocab)?;
            timer.lap("load");
            let (store, log) = pretrain_translator(cfg, &model, &train)?;
            timer.lap("train");
            ensure_parent(&paths.translator_checkpoint())?;
            save_checkpoint(&store, &paths.translator_checkpoint())?;
            write_lines(&paths.log("pretrain"), &log)?;
            let report = pretrain_report(&model, &store, &heldout)?;
            write_json(&paths.report("pretrain.json"), &report)?;
            timer.lap("evaluate");
            artifacts.extend([
                paths.translator_checkpoint(),
                paths.log("pretrain"),
                paths.report("pretrain.json"),
            ]);
        }
        Verb::TrainAgent => {
            let label = cfg.ablation.label();
            let train_path = paths.syfis("train");
            require(&train_path)?;
            if !cfg.ablation.no_translator {
                require(&paths.translator_checkpoint())?;
            }
            let worlds = load_worlds(cfg, &paths)?;
            let specs = episode_specs_from_records(&read_records(&train_path)?)?;
            let vocab = language(cfg)?.tokens.len();
            let agent = agent_model(cfg, vocab)?;
            let translator = if cfg.ablation.no_translator {
                None
            } else {
                Some(load_translator(cfg, &paths, vocab)?)
            };
            timer.lap("load");
            let (store, log) = train_agent(
                cfg,
                &agent,
                translator.as_ref().map(|(m, s)| (m, s.clone())),
                &worlds,
                &specs,
            )?;
            timer.lap("train");
            let ckpt = paths.agent_checkpoint(&label);
            ensure_parent(&ckpt)?;
            save_checkpoint(&store, &ckpt)?;
            let log_path = paths.log(&format!("agent-{label}"));
            write_lines(&log_path, &log)?;
            artifacts.extend([ckpt, log_path]);
            model_label = Some(label);
        }
        Verb::Evaluate => {
            let label = cfg.ablation.label();
            let ckpt = paths.agent_checkpoint(&label);
            require(&ckpt)?;
            let split_files = [
                ("val_seen", paths.syfis("val_seen")),
                ("unseen", paths.syfis("unseen")),
            ];
            for (_, p) in &split_files {
                require(p)?;
            }
            let worlds = load_worlds(cfg, &paths)?;
            let vocab = language(cfg)?.tokens.len();
            let agent = agent_model(cfg, vocab)?;
            let mut store = ParameterStore::new();
            let mut init = ChaCha8Rng::seed_from_u64(0);
            agent.register(&mut store, &mut init);
            let translator = if cfg.ablation.no_translator {
                None
            } else {
                let t = translator_model(cfg, vocab)?;
                t.register(&mut store, &mut init);
                Some(t)
            };
            load_checkpoint(&mut store, &ckpt)?;
            timer.lap("load");
            let mut splits = Vec::new();
            for (split, p) in &split_files {
                let records = read_records(p)?;
                let (report, logs) = evaluate_split(
                    cfg,
                    split,
                    &store,
                    &agent,
                    translator.as_ref(),
                    &worlds,
                    &records,
                )?;
                let ep_path = paths.episodes(&label, split);
                write_lines(&ep_path, &logs)?;
                let rows: Vec<(String, EvalResult)> = logs
                    .iter()
                    .map(|l| {
                        (
                            format!("{}/{}", l.episode.world_id, l.episode.trajectory_id),
                            l.result,
                        )
                    })
                    .collect();
                let csv = paths.report(&format!("results-{label}-{split}.csv"));
                write_file(&csv, results_csv(&rows).as_bytes())?;
                let overlap = paths.report(&format!("overlap-{label}-{split}.csv"));
                write_file(&overlap, report.overlap.to_csv().as_bytes())?;
                artifacts.extend([ep_path, csv, overlap]);
                splits.push(report);
                timer.lap(split);
            }
            let eval_path = paths.report(&format!("eval-{label}.json"));
            write_json(
                &eval_path,
                &EvalReport {
                    model: label.clone(),
                    splits,
                },
            )?;
            artifacts.push(eval_path);
            model_label = Some(label);
        }
        Verb::Translate => {
            let val_path = paths.syfis("val_seen");
            require(&val_path)?;
            let lang = language(cfg)?;
            let (model, store) = load_translator(cfg, &paths, lang.tokens.len())?;
            let worlds = load_worlds(cfg, &paths)?;
            let records = read_records(&val_path)?;
            let record = match &opts.record {
                Some(id) => records.iter().find(|r| &r.record_id == id).ok_or_else(|| {
                    ExpError::Usage(format!("record `{id}` not found in {}", val_path.display()))
                })?,
                None => records
                    .first()
                    .ok_or_else(|| ExpError::Usage(format!("{} is empty", val_path.display())))?,
            };
            let report = translate_record(&model, &store, &lang, &worlds, &records, record)?;
            let out = paths.report("translate.json");
            write_json(&out, &report)?;
            artifacts.push(out);
            timer.lap("translate");
        }
        Verb::Report => {
            let dir = paths.root.join("reports");
            let mut evals: Vec<PathBuf> = match fs::read_dir(&dir) {
                Ok(entries) => entries
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("eval-") && n.ends_with(".json"))
                    })
                    .collect(),
                Err(_) => Vec::new(),
            };
            if evals.is_empty() {
                return Err(ExpError::Dependency(
                    paths.report("eval-full.json").display().to_string(),
                ));
            }
            evals.sort();
            let mut rows = Vec::new();
            for p in &evals {
                let text = fs::read_to_string(p).map_err(io_err(p))?;
                let eval: EvalReport = serde_json::from_str(&text)
                    .map_err(|e| ExpError::Config(format!("{}: {e}", p.display())))?;
                for s in eval.splits {
                    rows.push(ReportRow {
                        model: eval.model.clone(),
                        split: s.split,
                        metrics: s.metrics,
                    });
                }
            }
            let out = paths.report("report.tsv");
            write_file(&out, report_table(&rows).as_bytes())?;
            artifacts.push(out);
            timer.lap("report");
        }
    }
    let manifest = RunManifest {
        verb,
        model: model_label,
        config_hash: cfg.hash(),
        tool_version: TOOL_VERSION.into(),
        config: cfg.clone(),
        artifacts: artifacts.iter().map(|p| paths.relative(p)).collect(),
        timings: timer.timings,
    };
    let path = manifest.write(&paths)?;
    Ok(path)
}

/// The verbs of a complete run for the configured ablation, in order.
pub fn pipeline_verbs(cfg: &RunConfig) -> Vec<Verb> {
    let mut verbs = vec![Verb::GenWorlds, Verb::GenSyfis];
    if !cfg.ablation.no_translator {
        verbs.push(Verb::PretrainTranslator);
    }
    verbs.extend([Verb::TrainAgent, Verb::Evaluate, Verb::Report]);
    verbs
}
