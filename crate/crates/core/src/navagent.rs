//! Navigation policy: a recurrent state plus one cross-attention layer over
//! the (optionally translator-augmented) instruction, scoring candidates by
//! state–candidate affinity. Training mixes imitation and policy gradient.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numcore::{AdamW, Graph, Linear, Lstm, NumError, ParameterStore, Tensor, Var};
use crate::syfis::{compose_trajectory_instruction, Dataset, SyfisError, SyfisRecord, PAD};
use crate::translator::{
    attended_instruction, candidate_inputs, loss_sig, TranslatorModel, CANDIDATE_EXTRA,
};
use crate::worldsim::{EnvironmentGraph, ViewpointId, WorldError};

/// Worlds by id.
pub type WorldMap = BTreeMap<String, EnvironmentGraph>;

#[derive(Debug, thiserror::Error)]
pub enum NavError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Syfis(#[from] SyfisError),
    #[error("invalid episode: {0}")]
    Episode(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub dim: usize,
    pub vocab: usize,
    pub feature_dim: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            vocab: 0,
            feature_dim: 24,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AgentModel {
    pub config: AgentConfig,
    embed: String,
    state0: String,
    score: String,
    text_fwd: Lstm,
    text_bwd: Lstm,
    vision: Linear,
    query: Linear,
    key: Linear,
    value: Linear,
    update: Linear,
}

/// Graph nodes produced by one policy step.
#[derive(Clone, Copy, Debug)]
pub struct PolicyStep {
    pub next_state: Var,
    pub log_probs: Var,
}

impl AgentModel {
    pub const PREFIX: &'static str = "agent";

    pub fn new(config: AgentConfig) -> Result<Self, NumError> {
        if config.dim < 2
            || !config.dim.is_multiple_of(2)
            || config.vocab < 3
            || config.feature_dim == 0
        {
            return Err(NumError::InvalidParameter(format!(
                "agent needs an even dim >= 2, vocab >= 3 and a feature width, got {config:?}"
            )));
        }
        let p = Self::PREFIX;
        let d = config.dim;
        Ok(Self {
            embed: format!("{p}.embed"),
            state0: format!("{p}.state0"),
            score: format!("{p}.score"),
            text_fwd: Lstm::new(format!("{p}.text_fwd"), d, d / 2),
            text_bwd: Lstm::new(format!("{p}.text_bwd"), d, d / 2),
            vision: Linear::new(
                format!("{p}.vision"),
                config.feature_dim + CANDIDATE_EXTRA,
                d,
            ),
            query: Linear::new(format!("{p}.query"), d, d),
            key: Linear::new(format!("{p}.key"), d, d),
            value: Linear::new(format!("{p}.value"), d, d),
            update: Linear::new(format!("{p}.update"), 2 * d, d),
            config,
        })
    }

    pub fn register(&self, store: &mut ParameterStore, rng: &mut impl Rng) {
        let d = self.config.dim;
        store.insert_uniform(&self.embed, self.config.vocab, d, 0.5, rng);
        store.insert_uniform(&self.state0, 1, d, 0.1, rng);
        store.insert_xavier(&self.score, d, d, rng);
        self.text_fwd.register(store, rng);
        self.text_bwd.register(store, rng);
        for l in [
            &self.vision,
            &self.query,
            &self.key,
            &self.value,
            &self.update,
        ] {
            l.register(store, rng);
        }
    }

    /// X: bidirectional LSTM over the instruction embeddings (L × d).
    pub fn encode_instruction(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        tokens: &[usize],
    ) -> Result<Var, NumError> {
        if tokens.is_empty() {
            return Err(NumError::InvalidInput("empty instruction".into()));
        }
        let table = g.param(store, &self.embed)?;
        let x = g.embedding(table, tokens)?;
        let fv = self.text_fwd.load(g, store)?;
        let bv = self.text_bwd.load(g, store)?;
        let f = self.text_fwd.sequence(g, &fv, x, false)?;
        let b = self.text_bwd.sequence(g, &bv, x, true)?;
        g.concat_cols(&[f, b])
    }

    pub fn initial_state(&self, g: &mut Graph, store: &ParameterStore) -> Result<Var, NumError> {
        g.param(store, &self.state0)
    }

    /// Keys and values of text rows for the cross-attention.
    pub fn text_memory(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        text: Var,
    ) -> Result<TextMemory, NumError> {
        Ok(TextMemory {
            keys: self.key.forward(g, store, text)?,
            values: self.value.forward(g, store, text)?,
        })
    }

    /// One decision: [S; V] attends over the text rows, the attended state
    /// scores the attended candidates, and the state is updated from the
    /// attended state and the probability-weighted candidates.
    pub fn policy_step(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        text: Var,
        state: Var,
        candidates: &Tensor,
    ) -> Result<PolicyStep, NumError> {
        let memory = self.text_memory(g, store, text)?;
        self.policy_step_with(g, store, &memory, state, candidates)
    }

    /// [`Self::policy_step`] over already projected text rows.
    pub fn policy_step_with(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        memory: &TextMemory,
        state: Var,
        candidates: &Tensor,
    ) -> Result<PolicyStep, NumError> {
        let n = candidates.rows();
        if n == 0 {
            return Err(NumError::InvalidInput("no candidates".into()));
        }
        let d = self.config.dim;
        let raw = g.input(candidates.clone())?;
        let v = self.vision.forward(g, store, raw)?;
        let v = g.tanh(v)?;
        let h_in = g.concat_rows(&[state, v])?;

        let q = self.query.forward(g, store, h_in)?;
        let kt = g.transpose(memory.keys)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
        let attn = g.softmax_rows(scores)?;
        let ctx = g.matmul(attn, memory.values)?;
        let h = g.add(h_in, ctx)?;
        let h = g.tanh(h)?;

        let s_hat = g.slice_rows(h, 0, 1)?;
        let v_hat = g.slice_rows(h, 1, n)?;
        let w = g.param(store, &self.score)?;
        let sw = g.matmul(s_hat, w)?;
        let vt = g.transpose(v_hat)?;
        let logits = g.matmul(sw, vt)?;
        let log_probs = g.log_softmax_rows(logits)?;

        let probs = g.softmax_rows(logits)?;
        let visual = g.matmul(probs, v_hat)?;
        let joint = g.concat_cols(&[s_hat, visual])?;
        let next = self.update.forward(g, store, joint)?;
        let next_state = g.tanh(next)?;
        Ok(PolicyStep {
            next_state,
            log_probs,
        })
    }
}

/// Projected text rows. Projection is row-wise, so the memory of stacked
/// text equals the stacked memories.
#[derive(Clone, Copy, Debug)]
pub struct TextMemory {
    pub keys: Var,
    pub values: Var,
}

impl TextMemory {
    pub fn concat(g: &mut Graph, parts: &[TextMemory]) -> Result<TextMemory, NumError> {
        let keys: Vec<Var> = parts.iter().map(|m| m.keys).collect();
        let values: Vec<Var> = parts.iter().map(|m| m.values).collect();
        Ok(TextMemory {
            keys: g.concat_rows(&keys)?,
            values: g.concat_rows(&values)?,
        })
    }
}

fn check_aligned(g: &Graph, x: Var, hidden: Var, attended: Var) -> Result<(), NumError> {
    let (a, b, c) = (g.value(x), g.value(hidden), g.value(attended));
    if a.shape() != b.shape() || a.shape() != c.shape() {
        return Err(NumError::Shape {
            op: "augment_text",
            left: a.shape().to_vec(),
            right: if a.shape() != b.shape() { b } else { c }.shape().to_vec(),
        });
    }
    Ok(())
}

/// [X; X̃′; X″] along the sequence axis.
pub fn augment_text(g: &mut Graph, x: Var, hidden: Var, attended: Var) -> Result<Var, NumError> {
    check_aligned(g, x, hidden, attended)?;
    g.concat_rows(&[x, hidden, attended])
}

/// Reference route with its instruction and per-step split supervision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub world_id: String,
    pub trajectory_id: usize,
    pub path: Vec<ViewpointId>,
    pub initial_heading: f64,
    pub instruction: Vec<usize>,
    /// (start, length) of each step's sub-instruction in `instruction`.
    pub spans: Vec<(usize, usize)>,
}

impl EpisodeSpec {
    pub fn start(&self) -> ViewpointId {
        self.path[0]
    }

    pub fn goal(&self) -> ViewpointId {
        *self.path.last().expect("non-empty path")
    }

    /// Ground-truth split mask of step `s`.
    pub fn split_target(&self, s: usize) -> Vec<f64> {
        let (start, len) = self.spans[s];
        (0..self.instruction.len())
            .map(|t| {
                if t >= start && t < start + len {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Token targets of step `s`: the step's span in place, PAD elsewhere.
    pub fn sig_target(&self, s: usize) -> Vec<usize> {
        let (start, len) = self.spans[s];
        self.instruction
            .iter()
            .enumerate()
            .map(|(t, &tok)| {
                if t >= start && t < start + len {
                    tok
                } else {
                    PAD
                }
            })
            .collect()
    }
}

/// Episode specs for every trajectory whose steps all produced records.
pub fn episode_specs(dataset: &Dataset) -> Result<Vec<EpisodeSpec>, SyfisError> {
    dataset
        .complete_trajectories()
        .into_iter()
        .map(|(t, records)| {
            let ti = compose_trajectory_instruction(&records)?;
            Ok(EpisodeSpec {
                world_id: t.world_id.clone(),
                trajectory_id: t.trajectory_id,
                path: t.path.clone(),
                initial_heading: t.initial_heading,
                instruction: ti.tokens,
                spans: ti.spans,
            })
        })
        .collect()
}

/// Episode specs rebuilt from records alone: a trajectory qualifies when
/// its steps run contiguously from 0 and end with the STOP step. Records
/// must be grouped by trajectory in step order, as datasets are written.
pub fn episode_specs_from_records(records: &[SyfisRecord]) -> Result<Vec<EpisodeSpec>, SyfisError> {
    let mut groups: BTreeMap<(&str, usize), Vec<&SyfisRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.world_id.as_str(), r.trajectory_id))
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for ((world_id, trajectory_id), mut recs) in groups {
        recs.sort_by_key(|r| r.step_index);
        let contiguous = recs.iter().enumerate().all(|(i, r)| r.step_index == i);
        let ends = recs.last().is_some_and(|r| r.is_stop());
        let stops_early = recs[..recs.len() - 1].iter().any(|r| r.is_stop());
        if !contiguous || !ends || stops_early {
            continue;
        }
        let ti = compose_trajectory_instruction(&recs)?;
        out.push(EpisodeSpec {
            world_id: world_id.to_string(),
            trajectory_id,
            path: recs.iter().map(|r| r.source).collect(),
            initial_heading: recs[0].heading,
            instruction: ti.tokens,
            spans: ti.spans,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    Teacher,
    Sample,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Stopped,
    MaxSteps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub viewpoint: ViewpointId,
    pub heading: f64,
    /// Candidate viewpoint ids in canonical order; the STOP entry is last
    /// and carries the current viewpoint.
    pub candidates: Vec<ViewpointId>,
    pub probs: Vec<f64>,
    pub action: usize,
    /// Geodesic distance-to-goal reduction of this step.
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub world_id: String,
    pub trajectory_id: usize,
    pub start: ViewpointId,
    pub goal: ViewpointId,
    pub instruction: Vec<usize>,
    pub steps: Vec<StepLog>,
    pub path: Vec<ViewpointId>,
    pub final_viewpoint: ViewpointId,
    pub stop_reason: StopReason,
    pub terminal_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub max_steps: usize,
    pub success_radius: f64,
    pub discount: f64,
    pub terminal_reward: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_steps: 15,
            success_radius: 1.0,
            discount: 0.9,
            terminal_reward: 2.0,
        }
    }
}

/// Graph nodes recorded along a rollout.
#[derive(Clone, Debug, Default)]
pub struct RolloutVars {
    /// Log-probabilities (1 × n) per step.
    pub log_probs: Vec<Var>,
    /// Translator heads per step, when a translator is attached; token
    /// distributions are recorded in teacher mode only.
    pub token_dists: Vec<Var>,
    pub split_masks: Vec<Var>,
}

/// Draws an index from a probability vector with one uniform variate.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Index of the largest probability (first one on ties).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Instruction encodings shared by every rollout of one episode spec.
#[derive(Clone, Copy, Debug)]
pub struct EncodedText {
    /// X (agent encoder).
    pub agent: Var,
    /// X̃ (translator encoder), when a translator is attached.
    pub translator: Option<Var>,
}

pub fn encode_text(
    g: &mut Graph,
    store: &ParameterStore,
    agent: &AgentModel,
    translator: Option<&TranslatorModel>,
    tokens: &[usize],
) -> Result<EncodedText, NumError> {
    let x = agent.encode_instruction(g, store, tokens)?;
    let x_tr = match translator {
        Some(t) => Some(t.encode_text(g, store, tokens)?),
        None => None,
    };
    Ok(EncodedText {
        agent: x,
        translator: x_tr,
    })
}

/// Runs one episode on `g`, recording per-step nodes for training.
#[allow(clippy::too_many_arguments)]
pub fn rollout_on(
    g: &mut Graph,
    store: &ParameterStore,
    agent: &AgentModel,
    translator: Option<&TranslatorModel>,
    graph: &EnvironmentGraph,
    spec: &EpisodeSpec,
    mode: RolloutMode,
    config: &RolloutConfig,
    rng: &mut impl Rng,
) -> Result<(Episode, RolloutVars), NavError> {
    let text = encode_text(g, store, agent, translator, &spec.instruction)?;
    rollout_encoded(
        g, store, agent, translator, graph, spec, text, mode, config, rng,
    )
}

/// [`rollout_on`] with the instruction already encoded on `g`.
#[allow(clippy::too_many_arguments)]
pub fn rollout_encoded(
    g: &mut Graph,
    store: &ParameterStore,
    agent: &AgentModel,
    translator: Option<&TranslatorModel>,
    graph: &EnvironmentGraph,
    spec: &EpisodeSpec,
    encoded: EncodedText,
    mode: RolloutMode,
    config: &RolloutConfig,
    rng: &mut impl Rng,
) -> Result<(Episode, RolloutVars), NavError> {
    if spec.world_id != graph.world_id {
        return Err(NavError::Episode(format!(
            "episode of {} run in {}",
            spec.world_id, graph.world_id
        )));
    }
    if spec.path.is_empty() || config.max_steps == 0 {
        return Err(NavError::Episode("empty path or zero step budget".into()));
    }
    let goal = spec.goal();
    let x = encoded.agent;
    let x_tr = encoded.translator;
    let x_memory = agent.text_memory(g, store, x)?;
    let mut state = agent.initial_state(g, store)?;
    let mut current = spec.start();
    let mut heading = spec.initial_heading;
    let mut steps = Vec::new();
    let mut vars = RolloutVars::default();
    let mut path = vec![current];
    let mut stop_reason = StopReason::MaxSteps;

    for _ in 0..config.max_steps {
        let obs = graph.observe(current, heading)?;
        let cands = candidate_inputs(&obs.candidates);
        let memory = match (translator, x_tr) {
            (Some(t), Some(xt)) => {
                let vision = t.encode_vision(g, store, &cands)?;
                let (hidden, _) = t.attend(g, store, xt, vision)?;
                let mask = t.split_mask(g, store, hidden)?;
                // Token distributions only feed the generation loss, which is
                // taken on teacher-forced steps.
                if mode == RolloutMode::Teacher {
                    vars.token_dists.push(t.generate_tokens(g, store, hidden)?);
                }
                vars.split_masks.push(mask);
                let attended = attended_instruction(g, mask, x)?;
                check_aligned(g, x, hidden, attended)?;
                let hidden = agent.text_memory(g, store, hidden)?;
                let attended = agent.text_memory(g, store, attended)?;
                TextMemory::concat(g, &[x_memory, hidden, attended])?
            }
            _ => x_memory,
        };
        let step = agent.policy_step_with(g, store, &memory, state, &cands)?;
        state = step.next_state;
        let probs: Vec<f64> = g
            .value(step.log_probs)
            .data()
            .iter()
            .map(|l| l.exp())
            .collect();
        let action = match mode {
            RolloutMode::Teacher => graph.teacher_action(current, goal, heading)?,
            RolloutMode::Sample => sample_index(&probs, rng),
            RolloutMode::Greedy => argmax(&probs),
        };
        vars.log_probs.push(step.log_probs);
        let chosen = &obs.candidates.entries[action];
        let before = graph.distance(current, goal)?;
        let candidates = obs.candidates.entries.iter().map(|c| c.viewpoint).collect();
        if chosen.is_stop {
            steps.push(StepLog {
                viewpoint: current,
                heading,
                candidates,
                probs,
                action,
                reward: 0.0,
            });
            stop_reason = StopReason::Stopped;
            break;
        }
        let next = chosen.viewpoint;
        let reward = before - graph.distance(next, goal)?;
        steps.push(StepLog {
            viewpoint: current,
            heading,
            candidates,
            probs,
            action,
            reward,
        });
        heading = graph.heading_after_move(current, next, heading);
        current = next;
        path.push(current);
    }
    let success = graph.distance(current, goal)? <= config.success_radius;
    let terminal_reward = if success {
        config.terminal_reward
    } else {
        -config.terminal_reward
    };
    Ok((
        Episode {
            world_id: spec.world_id.clone(),
            trajectory_id: spec.trajectory_id,
            start: spec.start(),
            goal,
            instruction: spec.instruction.clone(),
            steps,
            path,
            final_viewpoint: current,
            stop_reason,
            terminal_reward,
        },
        vars,
    ))
}

/// Value-only rollout.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    store: &ParameterStore,
    agent: &AgentModel,
    translator: Option<&TranslatorModel>,
    graph: &EnvironmentGraph,
    spec: &EpisodeSpec,
    mode: RolloutMode,
    config: &RolloutConfig,
    rng: &mut impl Rng,
) -> Result<Episode, NavError> {
    let mut g = Graph::new();
    Ok(rollout_on(
        &mut g, store, agent, translator, graph, spec, mode, config, rng,
    )?
    .0)
}

/// Discounted returns; the terminal reward is added to the last step.
pub fn discounted_returns(episode: &Episode, discount: f64) -> Vec<f64> {
    let n = episode.steps.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let mut r = episode.steps[t].reward;
        if t + 1 == n {
            r += episode.terminal_reward;
        }
        acc = r + discount * acc;
        out[t] = acc;
    }
    out
}

/// Sampled-episode term: −Σ_t A_t log p(a_t) with A_t = return_t minus the
/// mean return over all steps of the batch, averaged over sampled steps.
pub fn rl_loss(
    g: &mut Graph,
    sampled: &[(Episode, RolloutVars)],
    discount: f64,
) -> Result<Var, NavError> {
    if sampled.is_empty() {
        return Err(NavError::Num(NumError::InvalidInput("empty batch".into())));
    }
    let returns: Vec<Vec<f64>> = sampled
        .iter()
        .map(|(e, _)| discounted_returns(e, discount))
        .collect();
    let count: usize = returns.iter().map(Vec::len).sum();
    let baseline = returns.iter().flatten().sum::<f64>() / count as f64;
    let mut terms = Vec::with_capacity(count);
    for ((episode, vars), rets) in sampled.iter().zip(&returns) {
        for ((step, &lp), ret) in episode.steps.iter().zip(&vars.log_probs).zip(rets) {
            let picked = g.pick(lp, &[step.action])?;
            terms.push(g.scale(picked, -(ret - baseline))?);
        }
    }
    let all = g.concat_rows(&terms)?;
    let total = g.sum(all)?;
    Ok(g.scale(total, 1.0 / count as f64)?)
}

/// Teacher-forced term: −Σ_t log p(a*_t), averaged over episodes.
pub fn il_loss(g: &mut Graph, teacher: &[(Episode, RolloutVars)]) -> Result<Var, NavError> {
    if teacher.is_empty() {
        return Err(NavError::Num(NumError::InvalidInput("empty batch".into())));
    }
    let mut terms = Vec::new();
    for (episode, vars) in teacher {
        for (step, &lp) in episode.steps.iter().zip(&vars.log_probs) {
            let picked = g.pick(lp, &[step.action])?;
            terms.push(g.neg(picked)?);
        }
    }
    let all = g.concat_rows(&terms)?;
    let total = g.sum(all)?;
    Ok(g.scale(total, 1.0 / teacher.len() as f64)?)
}

/// RL + λ·IL.
pub fn loss_nav(
    g: &mut Graph,
    sampled: &[(Episode, RolloutVars)],
    teacher: &[(Episode, RolloutVars)],
    lambda: f64,
    discount: f64,
) -> Result<(Var, Var, Var), NavError> {
    let rl = rl_loss(g, sampled, discount)?;
    let il = il_loss(g, teacher)?;
    let wil = g.scale(il, lambda)?;
    let total = g.add(rl, wil)?;
    Ok((total, rl, il))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsForm {
    /// −(1/L) Σ [y log p + (1 − y) log(1 − p)].
    Full,
    /// −(1/L) Σ y log p.
    PositiveOnly,
}

const PROB_FLOOR: f64 = 1e-12;

/// Binary cross-entropy between a predicted mask (L × 1) and its target.
pub fn loss_ss(g: &mut Graph, mask: Var, target: &[f64], form: SsForm) -> Result<Var, NumError> {
    let m = g.value(mask);
    if m.cols() != 1 || m.rows() != target.len() {
        return Err(NumError::Shape {
            op: "loss_ss",
            left: m.shape().to_vec(),
            right: vec![target.len()],
        });
    }
    if m.data()
        .iter()
        .any(|&p| !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p))
    {
        log::warn!("split mask probability clamped to [{PROB_FLOOR}, 1 - {PROB_FLOOR}]");
    }
    let l = target.len();
    let y = g.input(Tensor::new(vec![l, 1], target.to_vec())?)?;
    let p = g.clamp(mask, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
    let logp = g.log(p)?;
    let pos = g.mul(y, logp)?;
    let summed = match form {
        SsForm::PositiveOnly => pos,
        SsForm::Full => {
            let one_minus_y = g.input(Tensor::new(
                vec![l, 1],
                target.iter().map(|t| 1.0 - t).collect(),
            )?)?;
            let np = g.neg(p)?;
            let q = g.add_scalar(np, 1.0)?;
            let logq = g.log(q)?;
            let neg = g.mul(one_minus_y, logq)?;
            g.add(pos, neg)?
        }
    };
    let s = g.sum(summed)?;
    g.scale(s, -1.0 / l as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavLossConfig {
    pub beta_nav: f64,
    pub beta_sig: f64,
    pub beta_ss: f64,
    pub lambda: f64,
    pub ss_form: SsForm,
}

impl Default for NavLossConfig {
    fn default() -> Self {
        Self {
            beta_nav: 1.0,
            beta_sig: 1.0,
            beta_ss: 0.1,
            lambda: 0.2,
            ss_form: SsForm::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NavLosses {
    pub objective: f64,
    pub nav: f64,
    pub rl: f64,
    pub il: f64,
    pub sig: f64,
    pub ss: f64,
}

/// Graph nodes of the training objective over a batch.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub objective: Var,
    pub nav: Var,
    pub rl: Var,
    pub il: Var,
    pub sig: Option<Var>,
    pub ss: Option<Var>,
}

/// Translator supervision along teacher-forced episodes: step s of a
/// teacher rollout sits at path[s], so its targets are span s.
fn translator_terms(
    g: &mut Graph,
    specs: &[&EpisodeSpec],
    teacher: &[(Episode, RolloutVars)],
    form: SsForm,
) -> Result<(Var, Var), NavError> {
    let mut sigs = Vec::new();
    let mut sss = Vec::new();
    for (spec, (episode, vars)) in specs.iter().zip(teacher) {
        if episode.steps.len() != spec.spans.len() {
            return Err(NavError::Episode(format!(
                "teacher rollout of {}/{} took {} steps for {} sub-instructions",
                spec.world_id,
                spec.trajectory_id,
                episode.steps.len(),
                spec.spans.len()
            )));
        }
        for s in 0..episode.steps.len() {
            sigs.push(loss_sig(g, vars.token_dists[s], &spec.sig_target(s))?);
            sss.push(loss_ss(
                g,
                vars.split_masks[s],
                &spec.split_target(s),
                form,
            )?);
        }
    }
    let a = g.concat_rows(&sigs)?;
    let sig = g.mean(a)?;
    let b = g.concat_rows(&sss)?;
    let ss = g.mean(b)?;
    Ok((sig, ss))
}

/// Builds L_obj = β1·L_nav + β2·L_SIG + β3·L_SS for a batch: one
/// teacher-forced and one sampled rollout per spec. Without a translator
/// the objective is β1·L_nav.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    g: &mut Graph,
    store: &ParameterStore,
    agent: &AgentModel,
    translator: Option<&TranslatorModel>,
    worlds: &WorldMap,
    batch: &[&EpisodeSpec],
    losses: &NavLossConfig,
    rollout_cfg: &RolloutConfig,
    rng: &mut impl Rng,
) -> Result<ObjectiveVars, NavError> {
    if batch.is_empty() {
        return Err(NavError::Num(NumError::InvalidInput("empty batch".into())));
    }
    let mut teacher = Vec::with_capacity(batch.len());
    let mut sampled = Vec::with_capacity(batch.len());
    for spec in batch {
        let graph = worlds
            .get(&spec.world_id)
            .ok_or_else(|| NavError::Episode(format!("unknown world {}", spec.world_id)))?;
        let text = encode_text(g, store, agent, translator, &spec.instruction)?;
        for mode in [RolloutMode::Teacher, RolloutMode::Sample] {
            let out = rollout_encoded(
                g,
                store,
                agent,
                translator,
                graph,
                spec,
                text,
                mode,
                rollout_cfg,
                rng,
            )?;
            match mode {
                RolloutMode::Teacher => teacher.push(out),
                _ => sampled.push(out),
            }
        }
    }
    let (nav, rl, il) = loss_nav(g, &sampled, &teacher, losses.lambda, rollout_cfg.discount)?;
    let mut objective = g.scale(nav, losses.beta_nav)?;
    let (mut sig, mut ss) = (None, None);
    if translator.is_some() {
        let (s, m) = translator_terms(g, batch, &teacher, losses.ss_form)?;
        let ws = g.scale(s, losses.beta_sig)?;
        let wm = g.scale(m, losses.beta_ss)?;
        objective = g.add(objective, ws)?;
        objective = g.add(objective, wm)?;
        sig = Some(s);
        ss = Some(m);
    }
    Ok(ObjectiveVars {
        objective,
        nav,
        rl,
        il,
        sig,
        ss,
    })
}

fn breakdown(g: &Graph, v: &ObjectiveVars) -> NavLosses {
    NavLosses {
        objective: g.scalar(v.objective),
        nav: g.scalar(v.nav),
        rl: g.scalar(v.rl),
        il: g.scalar(v.il),
        sig: v.sig.map_or(0.0, |s| g.scalar(s)),
        ss: v.ss.map_or(0.0, |s| g.scalar(s)),
    }
}

/// One AdamW step over every parameter in `store` (agent plus translator
/// when attached).
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    store: &mut ParameterStore,
    agent: &AgentModel,
    translator: Option<&TranslatorModel>,
    worlds: &WorldMap,
    batch: &[&EpisodeSpec],
    losses: &NavLossConfig,
    rollout_cfg: &RolloutConfig,
    optimizer: &AdamW,
    rng: &mut impl Rng,
) -> Result<NavLosses, NavError> {
    let mut g = Graph::new();
    let vars = objective(
        &mut g,
        store,
        agent,
        translator,
        worlds,
        batch,
        losses,
        rollout_cfg,
        rng,
    )?;
    store.zero_grad();
    g.backward(vars.objective, store)?;
    store.adamw_update(optimizer)?;
    Ok(breakdown(&g, &vars))
}

/// Token-level split-mask counts (threshold 0.5) over teacher-forced
/// steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl SplitCounts {
    pub fn f1(&self) -> f64 {
        let tp = self.true_positive as f64;
        let denom = 2.0 * tp + self.false_positive as f64 + self.false_negative as f64;
        if denom == 0.0 {
            1.0
        } else {
            2.0 * tp / denom
        }
    }
}

/// Split-mask quality along teacher-forced rollouts.
pub fn split_counts(
    store: &ParameterStore,
    agent: &AgentModel,
    translator: &TranslatorModel,
    worlds: &WorldMap,
    specs: &[EpisodeSpec],
    rollout_cfg: &RolloutConfig,
) -> Result<SplitCounts, NavError> {
    let mut counts = SplitCounts::default();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    for spec in specs {
        let graph = worlds
            .get(&spec.world_id)
            .ok_or_else(|| NavError::Episode(format!("unknown world {}", spec.world_id)))?;
        let mut g = Graph::new();
        let (episode, vars) = rollout_on(
            &mut g,
            store,
            agent,
            Some(translator),
            graph,
            spec,
            RolloutMode::Teacher,
            rollout_cfg,
            &mut rng,
        )?;
        for s in 0..episode.steps.len().min(spec.spans.len()) {
            let predicted = g.value(vars.split_masks[s]).data();
            for (p, y) in predicted.iter().zip(spec.split_target(s)) {
                match (*p >= 0.5, y == 1.0) {
                    (true, true) => counts.true_positive += 1,
                    (true, false) => counts.false_positive += 1,
                    (false, true) => counts.false_negative += 1,
                    (false, false) => counts.true_negative += 1,
                }
            }
        }
    }
    Ok(counts)
}

/// Minimal no-translator policy path kept separate from the augmented one;
/// with the translator disabled and β2 = β3 = 0 both must produce the
/// same losses bit for bit.
pub mod baseline {
    use super::*;

    #[allow(clippy::too_many_arguments)]
    fn run(
        g: &mut Graph,
        store: &ParameterStore,
        agent: &AgentModel,
        graph: &EnvironmentGraph,
        spec: &EpisodeSpec,
        teacher: bool,
        config: &RolloutConfig,
        rng: &mut impl Rng,
    ) -> Result<(Vec<StepLog>, Vec<Var>, f64), NavError> {
        let goal = spec.goal();
        let x = agent.encode_instruction(g, store, &spec.instruction)?;
        let mut state = agent.initial_state(g, store)?;
        let (mut current, mut heading) = (spec.start(), spec.initial_heading);
        let mut steps = Vec::new();
        let mut lps = Vec::new();
        for _ in 0..config.max_steps {
            let obs = graph.observe(current, heading)?;
            let step = agent.policy_step(g, store, x, state, &candidate_inputs(&obs.candidates))?;
            state = step.next_state;
            let probs: Vec<f64> = g
                .value(step.log_probs)
                .data()
                .iter()
                .map(|l| l.exp())
                .collect();
            let action = if teacher {
                graph.teacher_action(current, goal, heading)?
            } else {
                sample_index(&probs, rng)
            };
            lps.push(step.log_probs);
            let chosen = &obs.candidates.entries[action];
            let log = |reward| StepLog {
                viewpoint: current,
                heading,
                candidates: vec![],
                probs: vec![],
                action,
                reward,
            };
            if chosen.is_stop {
                steps.push(log(0.0));
                break;
            }
            let reward = graph.distance(current, goal)? - graph.distance(chosen.viewpoint, goal)?;
            steps.push(log(reward));
            heading = graph.heading_after_move(current, chosen.viewpoint, heading);
            current = chosen.viewpoint;
        }
        let terminal = if graph.distance(current, goal)? <= config.success_radius {
            config.terminal_reward
        } else {
            -config.terminal_reward
        };
        Ok((steps, lps, terminal))
    }

    /// β1·(RL + λ·IL) of a batch, together with (RL, IL).
    #[allow(clippy::too_many_arguments)]
    pub fn losses(
        g: &mut Graph,
        store: &ParameterStore,
        agent: &AgentModel,
        worlds: &WorldMap,
        batch: &[&EpisodeSpec],
        beta_nav: f64,
        lambda: f64,
        config: &RolloutConfig,
        rng: &mut impl Rng,
    ) -> Result<(Var, Var, Var), NavError> {
        let mut teacher = Vec::new();
        let mut sampled = Vec::new();
        for spec in batch {
            let graph = worlds
                .get(&spec.world_id)
                .ok_or_else(|| NavError::Episode(format!("unknown world {}", spec.world_id)))?;
            teacher.push(run(g, store, agent, graph, spec, true, config, rng)?);
            sampled.push(run(g, store, agent, graph, spec, false, config, rng)?);
        }
        let returns: Vec<Vec<f64>> = sampled
            .iter()
            .map(|(steps, _, terminal)| {
                let mut out = vec![0.0; steps.len()];
                let mut acc = 0.0;
                for t in (0..steps.len()).rev() {
                    let r = steps[t].reward + if t + 1 == steps.len() { *terminal } else { 0.0 };
                    acc = r + config.discount * acc;
                    out[t] = acc;
                }
                out
            })
            .collect();
        let count: usize = returns.iter().map(Vec::len).sum();
        let mean = returns.iter().flatten().sum::<f64>() / count as f64;
        let mut rl_terms = Vec::new();
        for ((steps, lps, _), rets) in sampled.iter().zip(&returns) {
            for ((s, &lp), r) in steps.iter().zip(lps).zip(rets) {
                let p = g.pick(lp, &[s.action])?;
                rl_terms.push(g.scale(p, -(r - mean))?);
            }
        }
        let rl_all = g.concat_rows(&rl_terms)?;
        let rl_sum = g.sum(rl_all)?;
        let rl = g.scale(rl_sum, 1.0 / count as f64)?;
        let mut il_terms = Vec::new();
        for (steps, lps, _) in &teacher {
            for (s, &lp) in steps.iter().zip(lps) {
                let p = g.pick(lp, &[s.action])?;
                il_terms.push(g.neg(p)?);
            }
        }
        let il_all = g.concat_rows(&il_terms)?;
        let il_sum = g.sum(il_all)?;
        let il = g.scale(il_sum, 1.0 / teacher.len() as f64)?;
        let wil = g.scale(il, lambda)?;
        let nav = g.add(rl, wil)?;
        let objective = g.scale(nav, beta_nav)?;
        Ok((objective, rl, il))
    }
}
