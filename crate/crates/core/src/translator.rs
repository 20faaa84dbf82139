//! Translator: turns an instruction plus the current candidate views into a
//! visually attended text representation, per-token word distributions,
//! and a per-token split mask over the instruction.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numcore::{
    pairwise_distance, AdamW, Graph, Lstm, Mlp, NumError, ParameterStore, Tensor, Var,
};
use crate::syfis::{NegativeKind, SyfisRecord, PAD};
use crate::worldsim::{CandidateSet, EnvironmentGraph, WorldError};

/// Orientation and STOP columns appended to each candidate's view feature.
pub const CANDIDATE_EXTRA: usize = 5;

/// Per-candidate input rows: view feature, sin/cos of relative heading,
/// sin/cos of relative elevation, STOP flag.
pub fn candidate_inputs(set: &CandidateSet) -> Tensor {
    let rows: Vec<Vec<f64>> = set
        .entries
        .iter()
        .map(|c| {
            let (h, e) = (c.rel_heading.to_radians(), c.rel_elevation.to_radians());
            let mut row = c.feature.clone();
            row.extend([
                h.sin(),
                h.cos(),
                e.sin(),
                e.cos(),
                f64::from(u8::from(c.is_stop)),
            ]);
            row
        })
        .collect();
    Tensor::from_rows(&rows).expect("candidate rows share the feature width")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DslForm {
    /// `max(D(a,p) − D(a,n) + m, 0)`.
    Anchor,
    /// Second distance taken between the anchor's generated distribution and
    /// the negative's hidden representation; only defined when the
    /// vocabulary size equals the hidden width.
    Generated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslatorConfig {
    /// Hidden width d; each direction of the bidirectional encoders gets d/2.
    pub dim: usize,
    pub mlp_hidden: usize,
    pub vocab: usize,
    pub feature_dim: usize,
    /// Longest token sequence accepted by `encode`.
    pub max_len: usize,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            mlp_hidden: 32,
            vocab: 0,
            feature_dim: 24,
            max_len: 96,
        }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<(), NumError> {
        if self.dim < 2 || !self.dim.is_multiple_of(2) {
            return Err(NumError::InvalidParameter(format!(
                "translator dim must be even and >= 2, got {}",
                self.dim
            )));
        }
        if self.vocab < 3 || self.mlp_hidden == 0 || self.feature_dim == 0 || self.max_len == 0 {
            return Err(NumError::InvalidParameter(
                "translator vocab >= 3 and non-zero widths required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TranslatorModel {
    pub config: TranslatorConfig,
    embed: String,
    attn: String,
    text_fwd: Lstm,
    text_bwd: Lstm,
    vis_fwd: Lstm,
    vis_bwd: Lstm,
    gen: Mlp,
    split: Mlp,
}

/// Graph nodes of one translator pass.
#[derive(Clone, Copy, Debug)]
pub struct TranslatorVars {
    pub hidden: Var,
    pub attention: Var,
    pub token_dists: Var,
    pub split_mask: Var,
}

/// Plain-value translator outputs for one (text, candidates) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslatorOutput {
    pub hidden: Tensor,
    pub token_dists: Tensor,
    pub split_mask: Vec<f64>,
    pub attended: Option<Tensor>,
}

impl TranslatorModel {
    pub const PREFIX: &'static str = "translator";

    pub fn new(config: TranslatorConfig) -> Result<Self, NumError> {
        config.validate()?;
        let p = Self::PREFIX;
        let (d, h) = (config.dim, config.dim / 2);
        let vis_in = config.feature_dim + CANDIDATE_EXTRA;
        Ok(Self {
            embed: format!("{p}.embed"),
            attn: format!("{p}.attn"),
            text_fwd: Lstm::new(format!("{p}.text_fwd"), d, h),
            text_bwd: Lstm::new(format!("{p}.text_bwd"), d, h),
            vis_fwd: Lstm::new(format!("{p}.vis_fwd"), vis_in, h),
            vis_bwd: Lstm::new(format!("{p}.vis_bwd"), vis_in, h),
            gen: Mlp::new(&format!("{p}.gen"), d, config.mlp_hidden, config.vocab),
            split: Mlp::new(&format!("{p}.split"), d, config.mlp_hidden, 1),
            config,
        })
    }

    pub fn register(&self, store: &mut ParameterStore, rng: &mut impl Rng) {
        let d = self.config.dim;
        store.insert_uniform(&self.embed, self.config.vocab, d, 0.5, rng);
        store.insert_xavier(&self.attn, d, d, rng);
        for lstm in [&self.text_fwd, &self.text_bwd, &self.vis_fwd, &self.vis_bwd] {
            lstm.register(store, rng);
        }
        self.gen.register(store, rng);
        self.split.register(store, rng);
    }

    pub fn attention_name(&self) -> &str {
        &self.attn
    }

    pub fn generation_head(&self) -> &Mlp {
        &self.gen
    }

    pub fn split_head(&self) -> &Mlp {
        &self.split
    }

    fn bidirectional(
        g: &mut Graph,
        store: &ParameterStore,
        fwd: &Lstm,
        bwd: &Lstm,
        xs: Var,
    ) -> Result<Var, NumError> {
        let fv = fwd.load(g, store)?;
        let bv = bwd.load(g, store)?;
        let f = fwd.sequence(g, &fv, xs, false)?;
        let b = bwd.sequence(g, &bv, xs, true)?;
        g.concat_cols(&[f, b])
    }

    /// X̃: bidirectional LSTM over token embeddings (L × d).
    pub fn encode_text(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        tokens: &[usize],
    ) -> Result<Var, NumError> {
        if tokens.is_empty() {
            return Err(NumError::InvalidInput("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_len {
            return Err(NumError::InvalidInput(format!(
                "{} tokens exceed the limit of {}",
                tokens.len(),
                self.config.max_len
            )));
        }
        let table = g.param(store, &self.embed)?;
        let x = g.embedding(table, tokens)?;
        Self::bidirectional(g, store, &self.text_fwd, &self.text_bwd, x)
    }

    /// Ṽ: bidirectional LSTM over candidate input rows in canonical order
    /// (n × d).
    pub fn encode_vision(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        candidates: &Tensor,
    ) -> Result<Var, NumError> {
        if candidates.rows() == 0 {
            return Err(NumError::InvalidInput("no candidates".into()));
        }
        let v = g.input(candidates.clone())?;
        Self::bidirectional(g, store, &self.vis_fwd, &self.vis_bwd, v)
    }

    /// Soft attention of text rows over candidate rows:
    /// returns (X̃′ = softmax(X̃ W Ṽᵀ) Ṽ, attention weights).
    pub fn attend(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        text: Var,
        vision: Var,
    ) -> Result<(Var, Var), NumError> {
        let w = g.param(store, &self.attn)?;
        let q = g.matmul(text, w)?;
        let vt = g.transpose(vision)?;
        let logits = g.matmul(q, vt)?;
        let attention = g.softmax_rows(logits)?;
        let hidden = g.matmul(attention, vision)?;
        Ok((hidden, attention))
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        tokens: &[usize],
        candidates: &Tensor,
    ) -> Result<Var, NumError> {
        let text = self.encode_text(g, store, tokens)?;
        let vision = self.encode_vision(g, store, candidates)?;
        Ok(self.attend(g, store, text, vision)?.0)
    }

    /// X′: per-position softmax over the vocabulary.
    pub fn generate_tokens(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        hidden: Var,
    ) -> Result<Var, NumError> {
        let logits = self.gen.forward(g, store, hidden)?;
        g.softmax_rows(logits)
    }

    /// X′_m: per-token sigmoid scalar (L × 1).
    pub fn split_mask(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        hidden: Var,
    ) -> Result<Var, NumError> {
        let logits = self.split.forward(g, store, hidden)?;
        g.sigmoid(logits)
    }

    /// Every head from already encoded text and vision.
    pub fn heads(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        text: Var,
        vision: Var,
    ) -> Result<TranslatorVars, NumError> {
        let (hidden, attention) = self.attend(g, store, text, vision)?;
        let token_dists = self.generate_tokens(g, store, hidden)?;
        let split_mask = self.split_mask(g, store, hidden)?;
        Ok(TranslatorVars {
            hidden,
            attention,
            token_dists,
            split_mask,
        })
    }

    /// Forward pass returning plain values; `instruction` (the navigator's
    /// own text rows, L × d) is masked into X″ when given.
    pub fn translate(
        &self,
        store: &ParameterStore,
        tokens: &[usize],
        candidates: &Tensor,
        instruction: Option<&Tensor>,
    ) -> Result<TranslatorOutput, NumError> {
        let mut g = Graph::new();
        let text = self.encode_text(&mut g, store, tokens)?;
        let vision = self.encode_vision(&mut g, store, candidates)?;
        let vars = self.heads(&mut g, store, text, vision)?;
        let attended = match instruction {
            Some(x) => {
                let x = g.input(x.clone())?;
                let a = attended_instruction(&mut g, vars.split_mask, x)?;
                Some(g.value(a).clone())
            }
            None => None,
        };
        Ok(TranslatorOutput {
            hidden: g.value(vars.hidden).clone(),
            token_dists: g.value(vars.token_dists).clone(),
            split_mask: g.value(vars.split_mask).data().to_vec(),
            attended,
        })
    }
}

/// X″: row t of `x` scaled by `mask[t]`.
pub fn attended_instruction(g: &mut Graph, mask: Var, x: Var) -> Result<Var, NumError> {
    let (m, t) = (g.value(mask), g.value(x));
    if m.cols() != 1 || m.rows() != t.rows() {
        return Err(NumError::Shape {
            op: "attended_instruction",
            left: m.shape().to_vec(),
            right: t.shape().to_vec(),
        });
    }
    g.mul_col(x, mask)
}

/// Mean negative log-probability of the target tokens; PAD targets are
/// excluded from both sum and count.
pub fn loss_sig(g: &mut Graph, token_dists: Var, targets: &[usize]) -> Result<Var, NumError> {
    let rows = g.value(token_dists).rows();
    if targets.len() != rows {
        return Err(NumError::Shape {
            op: "loss_sig",
            left: g.value(token_dists).shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let count = targets.iter().filter(|&&t| t != PAD).count();
    if count == 0 {
        return Err(NumError::InvalidInput("no non-PAD target tokens".into()));
    }
    let weights: Vec<f64> = targets
        .iter()
        .map(|&t| if t == PAD { 0.0 } else { -1.0 / count as f64 })
        .collect();
    let picked = g.pick(token_dists, targets)?;
    let logp = g.log(picked)?;
    let w = g.input(Tensor::new(vec![rows, 1], weights)?)?;
    let weighted = g.mul(logp, w)?;
    g.sum(weighted)
}

/// `max(d_ap − d_an + margin, 0)` on scalar nodes.
pub fn triplet_hinge(g: &mut Graph, d_ap: Var, d_an: Var, margin: f64) -> Result<Var, NumError> {
    let diff = g.sub(d_ap, d_an)?;
    let shifted = g.add_scalar(diff, margin)?;
    g.relu(shifted)
}

/// One contrastive record in tensor-ready form.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainExample {
    pub anchor: Vec<usize>,
    pub positive: Vec<usize>,
    pub negatives: Vec<(Vec<usize>, NegativeKind)>,
    pub candidates: Tensor,
}

impl PretrainExample {
    pub fn from_record(record: &SyfisRecord, graph: &EnvironmentGraph) -> Result<Self, WorldError> {
        let obs = graph.observe(record.source, record.heading)?;
        Ok(Self {
            anchor: record.anchor.tokens.clone(),
            positive: record.positive.tokens.clone(),
            negatives: record
                .negatives
                .iter()
                .map(|n| (n.sub.tokens.clone(), n.kind))
                .collect(),
            candidates: candidate_inputs(&obs.candidates),
        })
    }
}

/// Converts records using their worlds, looked up by `world_id`.
pub fn examples_from_records(
    records: &[SyfisRecord],
    worlds: &BTreeMap<String, EnvironmentGraph>,
) -> Result<Vec<PretrainExample>, WorldError> {
    records
        .iter()
        .map(|r| {
            let g = worlds
                .get(&r.world_id)
                .ok_or_else(|| WorldError::Malformed(format!("unknown world {}", r.world_id)))?;
            PretrainExample::from_record(r, g)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub alpha_sig: f64,
    pub alpha_dsl: f64,
    pub margin: f64,
    pub dsl_form: DslForm,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            alpha_sig: 1.0,
            alpha_dsl: 1.0,
            margin: 0.5,
            dsl_form: DslForm::Anchor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainLosses {
    pub total: f64,
    pub sig: f64,
    pub dsl: f64,
}

/// Graph nodes of the pretraining objective over a batch.
#[derive(Clone, Copy, Debug)]
pub struct PretrainVars {
    pub total: Var,
    pub sig: Var,
    pub dsl: Var,
}

impl TranslatorModel {
    /// Triplet loss of one (anchor, positive, negative) given the shared
    /// vision encoding.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_dsl(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        vision: Var,
        anchor: &[usize],
        positive: &[usize],
        negative: &[usize],
        margin: f64,
        form: DslForm,
    ) -> Result<Var, NumError> {
        let a = self.encode_text(g, store, anchor)?;
        let (ha, _) = self.attend(g, store, a, vision)?;
        let p = self.encode_text(g, store, positive)?;
        let (hp, _) = self.attend(g, store, p, vision)?;
        let n = self.encode_text(g, store, negative)?;
        let (hn, _) = self.attend(g, store, n, vision)?;
        self.dsl_from_hidden(g, store, ha, hp, hn, margin, form)
    }

    #[allow(clippy::too_many_arguments)]
    fn dsl_from_hidden(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        ha: Var,
        hp: Var,
        hn: Var,
        margin: f64,
        form: DslForm,
    ) -> Result<Var, NumError> {
        let d_ap = pairwise_distance(g, ha, hp)?;
        let d_an = match form {
            DslForm::Anchor => pairwise_distance(g, ha, hn)?,
            DslForm::Generated => {
                let generated = self.generate_tokens(g, store, ha)?;
                pairwise_distance(g, generated, hn)?
            }
        };
        triplet_hinge(g, d_ap, d_an, margin)
    }

    /// α1·L_SIG + α2·L_DSL averaged over the batch; L_DSL of a record is
    /// the mean over its triplets. The SIG input is the positive itself.
    pub fn pretrain_loss(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        batch: &[PretrainExample],
        config: &PretrainConfig,
    ) -> Result<PretrainVars, NumError> {
        if batch.is_empty() {
            return Err(NumError::InvalidInput("empty pretraining batch".into()));
        }
        let mut sigs = Vec::with_capacity(batch.len());
        let mut dsls = Vec::with_capacity(batch.len());
        for ex in batch {
            if ex.negatives.is_empty() {
                return Err(NumError::InvalidInput("record without negatives".into()));
            }
            let vision = self.encode_vision(g, store, &ex.candidates)?;
            let p = self.encode_text(g, store, &ex.positive)?;
            let (hp, _) = self.attend(g, store, p, vision)?;
            let dists = self.generate_tokens(g, store, hp)?;
            sigs.push(loss_sig(g, dists, &ex.positive)?);

            let a = self.encode_text(g, store, &ex.anchor)?;
            let (ha, _) = self.attend(g, store, a, vision)?;
            let mut triplets = Vec::with_capacity(ex.negatives.len());
            for (neg, _) in &ex.negatives {
                let n = self.encode_text(g, store, neg)?;
                let (hn, _) = self.attend(g, store, n, vision)?;
                triplets.push(self.dsl_from_hidden(
                    g,
                    store,
                    ha,
                    hp,
                    hn,
                    config.margin,
                    config.dsl_form,
                )?);
            }
            let stacked = g.concat_rows(&triplets)?;
            dsls.push(g.mean(stacked)?);
        }
        let sig = {
            let s = g.concat_rows(&sigs)?;
            g.mean(s)?
        };
        let dsl = {
            let s = g.concat_rows(&dsls)?;
            g.mean(s)?
        };
        let ws = g.scale(sig, config.alpha_sig)?;
        let wd = g.scale(dsl, config.alpha_dsl)?;
        let total = g.add(ws, wd)?;
        Ok(PretrainVars { total, sig, dsl })
    }

    /// One AdamW step on the pretraining objective.
    pub fn pretrain_step(
        &self,
        store: &mut ParameterStore,
        batch: &[PretrainExample],
        config: &PretrainConfig,
        optimizer: &AdamW,
    ) -> Result<PretrainLosses, NumError> {
        let mut g = Graph::new();
        let vars = self.pretrain_loss(&mut g, store, batch, config)?;
        store.zero_grad();
        g.backward(vars.total, store)?;
        store.adamw_update(optimizer)?;
        Ok(PretrainLosses {
            total: g.scalar(vars.total),
            sig: g.scalar(vars.sig),
            dsl: g.scalar(vars.dsl),
        })
    }

    /// Argmax token per position for a positive reconstructed from itself.
    pub fn decode(
        &self,
        store: &ParameterStore,
        tokens: &[usize],
        candidates: &Tensor,
    ) -> Result<Vec<usize>, NumError> {
        let out = self.translate(store, tokens, candidates, None)?;
        Ok((0..out.token_dists.rows())
            .map(|r| out.token_dists.argmax_row(r))
            .collect())
    }

    /// Fraction of positive tokens reproduced by argmax decoding.
    pub fn token_accuracy(
        &self,
        store: &ParameterStore,
        examples: &[PretrainExample],
    ) -> Result<f64, NumError> {
        let (mut hit, mut total) = (0usize, 0usize);
        for ex in examples {
            let decoded = self.decode(store, &ex.positive, &ex.candidates)?;
            for (d, t) in decoded.iter().zip(&ex.positive) {
                if *t != PAD {
                    total += 1;
                    hit += usize::from(d == t);
                }
            }
        }
        if total == 0 {
            return Err(NumError::InvalidInput("no tokens to score".into()));
        }
        Ok(hit as f64 / total as f64)
    }

    /// Mean pooled distances from the anchor to the positive and to each
    /// negative kind.
    pub fn geometry(
        &self,
        store: &ParameterStore,
        examples: &[PretrainExample],
    ) -> Result<Geometry, NumError> {
        let mut out = Geometry::default();
        for ex in examples {
            let mut g = Graph::new();
            let vision = self.encode_vision(&mut g, store, &ex.candidates)?;
            let hidden = |g: &mut Graph, t: &[usize]| -> Result<Var, NumError> {
                let x = self.encode_text(g, store, t)?;
                Ok(self.attend(g, store, x, vision)?.0)
            };
            let ha = hidden(&mut g, &ex.anchor)?;
            let hp = hidden(&mut g, &ex.positive)?;
            let d = pairwise_distance(&mut g, ha, hp)?;
            out.positive_sum += g.scalar(d);
            out.positive_count += 1;
            for (neg, kind) in &ex.negatives {
                let hn = hidden(&mut g, neg)?;
                let d = pairwise_distance(&mut g, ha, hn)?;
                match kind {
                    NegativeKind::Hard => {
                        out.hard_sum += g.scalar(d);
                        out.hard_count += 1;
                    }
                    NegativeKind::Easy => {
                        out.easy_sum += g.scalar(d);
                        out.easy_count += 1;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Accumulated anchor distances.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Geometry {
    pub positive_sum: f64,
    pub positive_count: usize,
    pub hard_sum: f64,
    pub hard_count: usize,
    pub easy_sum: f64,
    pub easy_count: usize,
}

impl Geometry {
    fn mean(sum: f64, count: usize) -> f64 {
        if count == 0 {
            f64::NAN
        } else {
            sum / count as f64
        }
    }

    pub fn mean_positive(&self) -> f64 {
        Self::mean(self.positive_sum, self.positive_count)
    }

    pub fn mean_hard(&self) -> f64 {
        Self::mean(self.hard_sum, self.hard_count)
    }

    pub fn mean_easy(&self) -> f64 {
        Self::mean(self.easy_sum, self.easy_count)
    }

    /// Mean D(anchor, hard negative) − mean D(anchor, positive).
    pub fn hard_margin(&self) -> f64 {
        self.mean_hard() - self.mean_positive()
    }
}
