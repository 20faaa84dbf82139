//! Synthetic fine-grained sub-instruction data: motion categories, template
//! composition, positive / negative / anchor construction per navigation
//! step, full-trajectory instructions with split labels, and JSONL output.

mod dictionary;
mod tokens;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::landmark::{
    classify_landmarks, Detector, LabelVocabulary, LandmarkError, LandmarkPartition,
};
use crate::worldsim::{
    CandidateSet, EnvironmentGraph, ViewpointId, WorldError, ANGLE_STEP_DEG, HEADINGS,
};

pub use dictionary::{normalize, select_motion_category, MotionCategory, MotionDictionary};
pub use tokens::{TokenVocabulary, PAD, THE, UNK};

#[derive(Debug, Error)]
pub enum SyfisError {
    #[error("motion dictionary: {0}")]
    Dictionary(String),
    #[error("word `{0}` is not in the token vocabulary")]
    Vocabulary(String),
    #[error(transparent)]
    Landmark(#[from] LandmarkError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("step index {index} out of range for a trajectory of {len} steps")]
    StepIndex { index: usize, len: usize },
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
    #[error("sub-instruction has {len} tokens, limit is {max}")]
    TooLong { len: usize, max: usize },
    #[error("cannot sample a trajectory in {0}")]
    Sampling(String),
    #[error("invalid record: {0}")]
    Record(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyfisConfig {
    /// Recognizable landmarks per view.
    pub top_k: usize,
    /// Softmax temperature for label probabilities.
    pub temperature: f64,
    /// Degrees beyond which a step counts as a turn or a vertical move.
    pub angle_threshold: f64,
    /// Trajectory length range in viewpoints, inclusive.
    pub min_path_len: usize,
    pub max_path_len: usize,
    pub trajectories_per_world: usize,
    pub max_subinstruction_tokens: usize,
    pub dictionary_path: Option<String>,
}

impl Default for SyfisConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            temperature: 0.1,
            angle_threshold: ANGLE_STEP_DEG,
            min_path_len: 5,
            max_path_len: 7,
            trajectories_per_world: 100,
            max_subinstruction_tokens: 8,
            dictionary_path: None,
        }
    }
}

/// Everything needed to compose sub-instructions.
#[derive(Clone, Debug)]
pub struct Language {
    pub dictionary: MotionDictionary,
    pub labels: LabelVocabulary,
    pub tokens: TokenVocabulary,
    pub max_tokens: usize,
}

impl Language {
    pub fn new(dictionary: MotionDictionary, labels: LabelVocabulary, max_tokens: usize) -> Self {
        let tokens = TokenVocabulary::build(&dictionary, &labels);
        Self {
            dictionary,
            labels,
            tokens,
            max_tokens,
        }
    }
}

impl Default for Language {
    fn default() -> Self {
        Self::new(MotionDictionary::default(), LabelVocabulary::default(), 8)
    }
}

/// `<motion phrase> the <landmark>` with its token ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubInstruction {
    pub phrase: String,
    pub landmark: String,
    pub tokens: Vec<usize>,
    #[serde(skip, default = "default_category")]
    pub category: MotionCategory,
}

fn default_category() -> MotionCategory {
    MotionCategory::Forward
}

impl SubInstruction {
    pub fn text(&self) -> String {
        format!("{} the {}", self.phrase, self.landmark)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeKind {
    Easy,
    Hard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Negative {
    #[serde(flatten)]
    pub sub: SubInstruction,
    pub kind: NegativeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyfisRecord {
    pub record_id: String,
    pub world_id: String,
    pub trajectory_id: usize,
    pub step_index: usize,
    pub source: ViewpointId,
    pub target: ViewpointId,
    pub candidates: Vec<ViewpointId>,
    pub category: MotionCategory,
    /// Agent heading (degrees) when the step's candidates are observed.
    pub heading: f64,
    pub anchor: SubInstruction,
    pub positive: SubInstruction,
    pub negatives: Vec<Negative>,
}

impl SyfisRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, SyfisError> {
        let mut r: SyfisRecord =
            serde_json::from_str(line).map_err(|e| SyfisError::Record(e.to_string()))?;
        r.anchor.category = r.category;
        r.positive.category = r.category;
        for n in &mut r.negatives {
            n.sub.category = r.category;
        }
        if r.negatives.len() != 3 {
            return Err(SyfisError::Record(format!(
                "{} has {} negatives",
                r.record_id,
                r.negatives.len()
            )));
        }
        Ok(r)
    }

    pub fn is_stop(&self) -> bool {
        self.category == MotionCategory::Stop
    }
}

/// A reference route: consecutive viewpoints plus the initial heading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub world_id: String,
    pub trajectory_id: usize,
    pub path: Vec<ViewpointId>,
    pub initial_heading: f64,
}

impl Trajectory {
    /// One step per viewpoint: moves to each next viewpoint, then STOP.
    pub fn num_steps(&self) -> usize {
        self.path.len()
    }

    /// Heading at every step.
    pub fn headings(&self, graph: &EnvironmentGraph) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.path.len());
        let mut h = self.initial_heading;
        for (i, &v) in self.path.iter().enumerate() {
            if i > 0 {
                h = graph.heading_after_move(self.path[i - 1], v, h);
            }
            out.push(h);
        }
        out
    }
}

/// Candidate context of one trajectory step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepContext {
    pub step_index: usize,
    pub source: ViewpointId,
    pub target: ViewpointId,
    pub heading: f64,
    pub candidates: CandidateSet,
    pub target_index: usize,
    pub category: MotionCategory,
}

pub fn step_context(
    graph: &EnvironmentGraph,
    trajectory: &Trajectory,
    step_index: usize,
    angle_threshold: f64,
) -> Result<StepContext, SyfisError> {
    let len = trajectory.num_steps();
    if step_index >= len {
        return Err(SyfisError::StepIndex {
            index: step_index,
            len,
        });
    }
    let heading = trajectory.headings(graph)[step_index];
    let source = trajectory.path[step_index];
    let candidates = graph.observe(source, heading)?.candidates;
    let (target, target_index) = if step_index + 1 == len {
        (source, candidates.stop_index())
    } else {
        let t = trajectory.path[step_index + 1];
        let idx = candidates.index_of(t).ok_or_else(|| {
            SyfisError::MalformedTrajectory(format!("{source} and {t} are not adjacent"))
        })?;
        (t, idx)
    };
    let entry = &candidates.entries[target_index];
    let category = select_motion_category(
        entry.rel_heading,
        entry.rel_elevation,
        entry.is_stop,
        angle_threshold,
    );
    Ok(StepContext {
        step_index,
        source,
        target,
        heading,
        candidates,
        target_index,
        category,
    })
}

/// Composes `<phrase> the <landmark>` with a phrase drawn uniformly from the
/// category.
pub fn compose_subinstruction(
    language: &Language,
    category: MotionCategory,
    landmark: &str,
    rng: &mut impl Rng,
) -> Result<SubInstruction, SyfisError> {
    let phrase = language
        .dictionary
        .phrases(category)
        .choose(rng)
        .ok_or_else(|| SyfisError::Dictionary(format!("no phrases for {category}")))?
        .clone();
    with_phrase(language, category, &phrase, landmark)
}

fn with_phrase(
    language: &Language,
    category: MotionCategory,
    phrase: &str,
    landmark: &str,
) -> Result<SubInstruction, SyfisError> {
    language.labels.id_of(landmark)?;
    let mut tokens = language.tokens.tokenize(phrase)?;
    tokens.push(THE);
    tokens.extend(language.tokens.tokenize(landmark)?);
    if tokens.len() > language.max_tokens {
        return Err(SyfisError::TooLong {
            len: tokens.len(),
            max: language.max_tokens,
        });
    }
    Ok(SubInstruction {
        phrase: normalize(phrase),
        landmark: landmark.to_string(),
        tokens,
        category,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NoDistinctive,
    TooFewNegatives,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum BuildOutcome {
    Emitted(SyfisRecord, LandmarkPartition),
    Skipped(SkipReason, LandmarkPartition),
}

/// Landmark partition of a step: target candidate against every other
/// entry of the candidate set (the STOP pseudo-candidate included).
pub fn step_partition(
    ctx: &StepContext,
    detector: &dyn Detector,
    config: &SyfisConfig,
) -> Result<LandmarkPartition, SyfisError> {
    let target = &ctx.candidates.entries[ctx.target_index].feature;
    let others: Vec<&[f64]> = ctx
        .candidates
        .entries
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != ctx.target_index)
        .map(|(_, c)| c.feature.as_slice())
        .collect();
    Ok(classify_landmarks(
        target,
        &others,
        detector,
        config.top_k,
        config.temperature,
    )?)
}

/// Builds the contrastive bundle of one step.
///
/// The positive uses the most probable distinctive landmark; the hard
/// negative the most probable nondistinctive one; easy negatives fill the
/// remaining slots from the irrelevant set. When a pool runs dry the other
/// pool supplies the rest. Negatives reuse the positive's phrase; the anchor
/// swaps in a different phrase of the same category.
pub fn build_record(
    graph: &EnvironmentGraph,
    trajectory: &Trajectory,
    step_index: usize,
    detector: &dyn Detector,
    config: &SyfisConfig,
    language: &Language,
    rng: &mut impl Rng,
) -> Result<BuildOutcome, SyfisError> {
    let ctx = step_context(graph, trajectory, step_index, config.angle_threshold)?;
    let partition = step_partition(&ctx, detector, config)?;
    let Some(&positive_label) = partition.distinctive.first() else {
        return Ok(BuildOutcome::Skipped(SkipReason::NoDistinctive, partition));
    };

    let mut negatives: Vec<(usize, NegativeKind)> = Vec::with_capacity(3);
    let mut hard = partition.nondistinctive.iter();
    let mut easy = partition.irrelevant.iter();
    if let Some(&h) = hard.next() {
        negatives.push((h, NegativeKind::Hard));
    }
    while negatives.len() < 3 {
        if let Some(&e) = easy.next() {
            negatives.push((e, NegativeKind::Easy));
        } else if let Some(&h) = hard.next() {
            negatives.push((h, NegativeKind::Hard));
        } else {
            return Ok(BuildOutcome::Skipped(
                SkipReason::TooFewNegatives,
                partition,
            ));
        }
    }

    let label = |id: usize| language.labels.label(id).to_string();
    let positive = compose_subinstruction(language, ctx.category, &label(positive_label), rng)?;
    let alternatives: Vec<&String> = language
        .dictionary
        .phrases(ctx.category)
        .iter()
        .filter(|p| **p != positive.phrase)
        .collect();
    let anchor_phrase = match alternatives.choose(rng) {
        Some(p) => (*p).clone(),
        None => {
            log::warn!(
                "category {} has a single phrase; anchor reuses it",
                ctx.category
            );
            positive.phrase.clone()
        }
    };
    let anchor = with_phrase(language, ctx.category, &anchor_phrase, &positive.landmark)?;
    let negatives = negatives
        .into_iter()
        .map(|(id, kind)| {
            Ok(Negative {
                sub: with_phrase(language, ctx.category, &positive.phrase, &label(id))?,
                kind,
            })
        })
        .collect::<Result<Vec<_>, SyfisError>>()?;

    let record = SyfisRecord {
        record_id: format!(
            "{}/{}/{}",
            trajectory.world_id, trajectory.trajectory_id, step_index
        ),
        world_id: trajectory.world_id.clone(),
        trajectory_id: trajectory.trajectory_id,
        step_index,
        source: ctx.source,
        target: ctx.target,
        candidates: ctx.candidates.ids(),
        category: ctx.category,
        heading: ctx.heading,
        anchor,
        positive,
        negatives,
    };
    Ok(BuildOutcome::Emitted(record, partition))
}

/// Full instruction of a trajectory and the per-step token masks
/// (1 on the step's own sub-instruction span).
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryInstruction {
    pub tokens: Vec<usize>,
    pub masks: Vec<Vec<u8>>,
    pub spans: Vec<(usize, usize)>,
}

pub fn compose_trajectory_instruction(
    records: &[&SyfisRecord],
) -> Result<TrajectoryInstruction, SyfisError> {
    let first = records
        .first()
        .ok_or_else(|| SyfisError::MalformedTrajectory("no records".into()))?;
    let mut tokens = Vec::new();
    let mut spans = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.world_id != first.world_id || r.trajectory_id != first.trajectory_id {
            return Err(SyfisError::MalformedTrajectory(format!(
                "{} does not belong to {}/{}",
                r.record_id, first.world_id, first.trajectory_id
            )));
        }
        if r.step_index != i {
            return Err(SyfisError::MalformedTrajectory(format!(
                "expected step {i}, found step {} in {}",
                r.step_index, r.record_id
            )));
        }
        spans.push((tokens.len(), r.positive.tokens.len()));
        tokens.extend_from_slice(&r.positive.tokens);
    }
    let masks = spans
        .iter()
        .map(|&(start, len)| {
            (0..tokens.len())
                .map(|t| u8::from(t >= start && t < start + len))
                .collect()
        })
        .collect();
    Ok(TrajectoryInstruction {
        tokens,
        masks,
        spans,
    })
}

/// SplitMix64 step, used to derive independent per-stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples a shortest-path route whose viewpoint count lies in the
/// configured range, with a random initial heading on the 30° grid.
pub fn sample_trajectory(
    graph: &EnvironmentGraph,
    trajectory_id: usize,
    config: &SyfisConfig,
    rng: &mut impl Rng,
) -> Result<Trajectory, SyfisError> {
    for _ in 0..200 {
        let start = rng.random_range(0..graph.len());
        let mut goals = Vec::new();
        for goal in 0..graph.len() {
            let (path, _) = graph.shortest_path(start, goal)?;
            if (config.min_path_len..=config.max_path_len).contains(&path.len()) {
                goals.push(path);
            }
        }
        if let Some(path) = goals.choose(rng) {
            let initial_heading = rng.random_range(0..HEADINGS) as f64 * ANGLE_STEP_DEG;
            return Ok(Trajectory {
                world_id: graph.world_id.clone(),
                trajectory_id,
                path: path.clone(),
                initial_heading,
            });
        }
    }
    Err(SyfisError::Sampling(graph.world_id.clone()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub worlds: usize,
    pub trajectories: usize,
    pub complete_trajectories: usize,
    pub total_steps: usize,
    pub emitted: usize,
    pub skipped: usize,
    pub skip_reasons: BTreeMap<SkipReason, usize>,
    pub categories: BTreeMap<MotionCategory, usize>,
    pub distinctive_sizes: BTreeMap<usize, usize>,
    pub nondistinctive_sizes: BTreeMap<usize, usize>,
    pub irrelevant_sizes: BTreeMap<usize, usize>,
    pub hard_negatives: usize,
    pub easy_negatives: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<SyfisRecord>,
    pub trajectories: Vec<Trajectory>,
    pub stats: DatasetStats,
}

impl Dataset {
    /// Trajectories for which every step produced a record, with their
    /// records in step order.
    pub fn complete_trajectories(&self) -> Vec<(&Trajectory, Vec<&SyfisRecord>)> {
        let mut by_key: BTreeMap<(&str, usize), Vec<&SyfisRecord>> = BTreeMap::new();
        for r in &self.records {
            by_key
                .entry((r.world_id.as_str(), r.trajectory_id))
                .or_default()
                .push(r);
        }
        self.trajectories
            .iter()
            .filter_map(|t| {
                let recs = by_key.get(&(t.world_id.as_str(), t.trajectory_id))?;
                (recs.len() == t.num_steps()).then(|| (t, recs.clone()))
            })
            .collect()
    }
}

/// Samples `trajectories_per_world` routes in every world and builds a
/// record for each of their steps. Output is sorted by
/// `(world_id, trajectory_id, step_index)` and depends only on the inputs
/// and `seed`.
pub fn generate_dataset(
    worlds: &[EnvironmentGraph],
    detector: &dyn Detector,
    config: &SyfisConfig,
    language: &Language,
    seed: u64,
) -> Result<Dataset, SyfisError> {
    if worlds.is_empty() {
        return Err(SyfisError::Sampling("an empty world list".into()));
    }
    let mut stats = DatasetStats {
        worlds: worlds.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    let mut trajectories = Vec::new();
    for (wi, graph) in worlds.iter().enumerate() {
        let mut traj_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, wi as u64));
        for tid in 0..config.trajectories_per_world {
            let traj = sample_trajectory(graph, tid, config, &mut traj_rng)?;
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, wi as u64), tid as u64 + 1));
            let mut complete = true;
            for step in 0..traj.num_steps() {
                stats.total_steps += 1;
                let outcome =
                    build_record(graph, &traj, step, detector, config, language, &mut rng)?;
                let partition = match &outcome {
                    BuildOutcome::Emitted(_, p) | BuildOutcome::Skipped(_, p) => p,
                };
                *stats
                    .distinctive_sizes
                    .entry(partition.distinctive.len())
                    .or_default() += 1;
                *stats
                    .nondistinctive_sizes
                    .entry(partition.nondistinctive.len())
                    .or_default() += 1;
                *stats
                    .irrelevant_sizes
                    .entry(partition.irrelevant.len())
                    .or_default() += 1;
                match outcome {
                    BuildOutcome::Emitted(r, _) => {
                        stats.emitted += 1;
                        *stats.categories.entry(r.category).or_default() += 1;
                        for n in &r.negatives {
                            match n.kind {
                                NegativeKind::Hard => stats.hard_negatives += 1,
                                NegativeKind::Easy => stats.easy_negatives += 1,
                            }
                        }
                        records.push(r);
                    }
                    BuildOutcome::Skipped(reason, _) => {
                        complete = false;
                        stats.skipped += 1;
                        *stats.skip_reasons.entry(reason).or_default() += 1;
                    }
                }
            }
            stats.trajectories += 1;
            stats.complete_trajectories += usize::from(complete);
            trajectories.push(traj);
        }
    }
    records.sort_by(|a, b| {
        (a.world_id.as_str(), a.trajectory_id, a.step_index).cmp(&(
            b.world_id.as_str(),
            b.trajectory_id,
            b.step_index,
        ))
    });
    trajectories.sort_by(|a, b| {
        (a.world_id.as_str(), a.trajectory_id).cmp(&(b.world_id.as_str(), b.trajectory_id))
    });
    Ok(Dataset {
        records,
        trajectories,
        stats,
    })
}

pub fn write_jsonl<W: Write>(records: &[SyfisRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        out.write_all(r.to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<SyfisRecord>, SyfisError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|source| SyfisError::Io {
            path: format!("line {}", i + 1),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(SyfisRecord::from_json_line(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmark::SyntheticDetector;
    use crate::worldsim::{generate_world, WorldGenConfig};

    /// RNG whose first `random_range` draw returns the given index.
    fn rng_picking(phrases: &[String], wanted: &str) -> ChaCha8Rng {
        let idx = phrases.iter().position(|p| p == wanted).unwrap();
        (0..10_000u64)
            .map(ChaCha8Rng::seed_from_u64)
            .find(|r| {
                let mut r = r.clone();
                phrases.choose(&mut r).unwrap() == &phrases[idx]
            })
            .unwrap()
    }

    #[test]
    fn template_composition() {
        let lang = Language::default();
        let phrases = lang.dictionary.phrases(MotionCategory::Right).to_vec();
        let mut rng = rng_picking(&phrases, "turn right to");
        let s = compose_subinstruction(&lang, MotionCategory::Right, "kitchen", &mut rng).unwrap();
        assert_eq!(s.text(), "turn right to the kitchen");
        assert_eq!(
            lang.tokens.detokenize(&s.tokens),
            "turn right to the kitchen"
        );

        let phrases = lang.dictionary.phrases(MotionCategory::Stop).to_vec();
        let mut rng = rng_picking(&phrases, "stop at");
        let s = compose_subinstruction(&lang, MotionCategory::Stop, "sofa", &mut rng).unwrap();
        assert_eq!(s.text(), "stop at the sofa");
        assert!(compose_subinstruction(&lang, MotionCategory::Stop, "unicorn", &mut rng).is_err());
    }

    #[test]
    fn composition_is_deterministic_in_seed() {
        let lang = Language::default();
        let a = compose_subinstruction(
            &lang,
            MotionCategory::Up,
            "stairs",
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let b = compose_subinstruction(
            &lang,
            MotionCategory::Up,
            "stairs",
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    fn fake_record(traj: usize, step: usize, len: usize) -> SyfisRecord {
        let sub = SubInstruction {
            phrase: "go".into(),
            landmark: "x".into(),
            tokens: vec![5; len],
            category: MotionCategory::Forward,
        };
        SyfisRecord {
            record_id: format!("w/{traj}/{step}"),
            world_id: "w".into(),
            trajectory_id: traj,
            step_index: step,
            source: 0,
            target: 1,
            candidates: vec![1],
            category: MotionCategory::Forward,
            heading: 0.0,
            anchor: sub.clone(),
            positive: sub.clone(),
            negatives: vec![],
        }
    }

    #[test]
    fn trajectory_instruction_masks() {
        let (a, b) = (fake_record(0, 0, 4), fake_record(0, 1, 5));
        let ti = compose_trajectory_instruction(&[&a, &b]).unwrap();
        assert_eq!(ti.tokens.len(), 9);
        assert_eq!(ti.masks[0], vec![1, 1, 1, 1, 0, 0, 0, 0, 0]);
        assert_eq!(ti.masks[1], vec![0, 0, 0, 0, 1, 1, 1, 1, 1]);
        let one = compose_trajectory_instruction(&[&a]).unwrap();
        assert_eq!(one.masks[0], vec![1; 4]);
        let gap = fake_record(0, 2, 3);
        assert!(matches!(
            compose_trajectory_instruction(&[&a, &gap]),
            Err(SyfisError::MalformedTrajectory(_))
        ));
        let other = fake_record(1, 1, 3);
        assert!(compose_trajectory_instruction(&[&a, &other]).is_err());
    }

    #[test]
    fn step_index_out_of_range() {
        let g = generate_world(1, &WorldGenConfig::default()).unwrap();
        let cfg = SyfisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_trajectory(&g, 0, &cfg, &mut rng).unwrap();
        let det = SyntheticDetector { labels: 24 };
        let err = build_record(&g, &t, 99, &det, &cfg, &Language::default(), &mut rng);
        assert!(matches!(err, Err(SyfisError::StepIndex { index: 99, .. })));
    }

    #[test]
    fn small_dataset_accounting() {
        let g = generate_world(11, &WorldGenConfig::default()).unwrap();
        let cfg = SyfisConfig {
            min_path_len: 6,
            max_path_len: 6,
            trajectories_per_world: 10,
            ..Default::default()
        };
        let det = SyntheticDetector { labels: 24 };
        let ds = generate_dataset(&[g], &det, &cfg, &Language::default(), 3).unwrap();
        assert_eq!(ds.stats.total_steps, 60);
        assert!(ds.records.len() <= 60);
        assert_eq!(ds.stats.emitted + ds.stats.skipped, ds.stats.total_steps);
        assert!(ds.records.iter().all(|r| r.negatives.len() == 3));
        let mut buf = Vec::new();
        write_jsonl(&ds.records, &mut buf).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, ds.records);
    }
}
