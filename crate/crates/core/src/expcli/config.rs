use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::ExpError;
use crate::navagent::{RolloutConfig, SsForm};
use crate::numcore::AdamW;
use crate::syfis::SyfisConfig;
use crate::translator::DslForm;
use crate::worldsim::WorldGenConfig;

/// Seen worlds are generated from `seen_seed_base..+seen_worlds`, unseen
/// worlds from a disjoint range. Every `holdout_every`-th trajectory of a
/// seen world is held out of training and evaluated as the seen split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub seen_worlds: usize,
    pub unseen_worlds: usize,
    pub seen_seed_base: u64,
    pub unseen_seed_base: u64,
    pub holdout_every: usize,
    pub unseen_trajectories_per_world: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seen_worlds: 22,
            unseen_worlds: 6,
            seen_seed_base: 0,
            unseen_seed_base: 1_000_000,
            holdout_every: 5,
            unseen_trajectories_per_world: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub mlp_hidden: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            mlp_hidden: 32,
            max_len: 96,
        }
    }
}

/// AdamW settings shared by both training phases; each phase sets its own
/// learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = AdamW::default();
        Self {
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            weight_decay: d.weight_decay,
        }
    }
}

impl OptimizerConfig {
    pub fn adamw(&self, lr: f64) -> AdamW {
        AdamW {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainPhase {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha_sig: f64,
    pub alpha_dsl: f64,
    pub margin: f64,
    pub dsl_form: DslForm,
    pub log_every: usize,
}

impl Default for PretrainPhase {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 64,
            lr: 2e-2,
            alpha_sig: 1.0,
            alpha_dsl: 1.0,
            margin: 0.5,
            dsl_form: DslForm::Anchor,
            log_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentPhase {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub beta_nav: f64,
    pub beta_sig: f64,
    pub beta_ss: f64,
    pub ss_form: SsForm,
    pub log_every: usize,
}

impl Default for AgentPhase {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 8,
            lr: 3e-3,
            lambda: 0.2,
            beta_nav: 1.0,
            beta_sig: 1.0,
            beta_ss: 0.1,
            ss_form: SsForm::Full,
            log_every: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    pub no_translator: bool,
    pub no_sig: bool,
    pub no_dsl: bool,
    pub no_ss: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 4] = ["no-translator", "no-sig", "no-dsl", "no-ss"];

    pub fn enable(&mut self, name: &str) -> Result<(), ExpError> {
        match name {
            "no-translator" => self.no_translator = true,
            "no-sig" => self.no_sig = true,
            "no-dsl" => self.no_dsl = true,
            "no-ss" => self.no_ss = true,
            other => {
                return Err(ExpError::Config(format!(
                    "unknown ablation `{other}`, expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Row label used in reports.
    pub fn label(&self) -> String {
        if self.no_translator {
            return "baseline".into();
        }
        let off: Vec<&str> = [
            (self.no_sig, "no-sig"),
            (self.no_dsl, "no-dsl"),
            (self.no_ss, "no-ss"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        if off.is_empty() {
            "full".into()
        } else {
            off.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldGenConfig,
    pub splits: SplitConfig,
    pub syfis: SyfisConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub pretrain: PretrainPhase,
    pub agent: AgentPhase,
    pub rollout: RolloutConfig,
    pub ablation: Ablations,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            world: WorldGenConfig::default(),
            splits: SplitConfig::default(),
            syfis: SyfisConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            pretrain: PretrainPhase::default(),
            agent: AgentPhase::default(),
            rollout: RolloutConfig::default(),
            ablation: Ablations::default(),
            output_dir: "runs/default".into(),
        }
    }
}

fn non_negative(key: &str, v: f64) -> Result<(), ExpError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ExpError::Config(format!(
            "{key} must be finite and >= 0, got {v}"
        )))
    }
}

fn positive(key: &str, v: f64) -> Result<(), ExpError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ExpError::Config(format!(
            "{key} must be finite and > 0, got {v}"
        )))
    }
}

fn at_least(key: &str, v: usize, min: usize) -> Result<(), ExpError> {
    if v >= min {
        Ok(())
    } else {
        Err(ExpError::Config(format!("{key} must be >= {min}, got {v}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ExpError> {
        self.world
            .validate()
            .map_err(|e| ExpError::Config(format!("world: {e}")))?;
        let s = &self.splits;
        at_least("splits.seen_worlds", s.seen_worlds, 1)?;
        at_least("splits.unseen_worlds", s.unseen_worlds, 1)?;
        at_least("splits.holdout_every", s.holdout_every, 2)?;
        at_least(
            "splits.unseen_trajectories_per_world",
            s.unseen_trajectories_per_world,
            1,
        )?;
        let seen = (
            s.seen_seed_base,
            s.seen_seed_base.saturating_add(s.seen_worlds as u64),
        );
        let unseen = (
            s.unseen_seed_base,
            s.unseen_seed_base.saturating_add(s.unseen_worlds as u64),
        );
        if seen.0 < unseen.1 && unseen.0 < seen.1 {
            return Err(ExpError::Config(format!(
                "seen seeds {}..{} overlap unseen seeds {}..{}",
                seen.0, seen.1, unseen.0, unseen.1
            )));
        }
        let y = &self.syfis;
        at_least("syfis.top_k", y.top_k, 1)?;
        positive("syfis.temperature", y.temperature)?;
        positive("syfis.angle_threshold", y.angle_threshold)?;
        at_least("syfis.min_path_len", y.min_path_len, 2)?;
        at_least("syfis.max_path_len", y.max_path_len, y.min_path_len)?;
        at_least("syfis.trajectories_per_world", y.trajectories_per_world, 1)?;
        at_least(
            "syfis.max_subinstruction_tokens",
            y.max_subinstruction_tokens,
            2,
        )?;
        let m = &self.model;
        at_least("model.dim", m.dim, 2)?;
        if !m.dim.is_multiple_of(2) {
            return Err(ExpError::Config(format!(
                "model.dim must be even, got {}",
                m.dim
            )));
        }
        at_least("model.mlp_hidden", m.mlp_hidden, 1)?;
        at_least("model.max_len", m.max_len, 1)?;
        let o = &self.optimizer;
        for (k, v) in [("optimizer.beta1", o.beta1), ("optimizer.beta2", o.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(ExpError::Config(format!("{k} must lie in [0, 1), got {v}")));
            }
        }
        positive("optimizer.eps", o.eps)?;
        non_negative("optimizer.weight_decay", o.weight_decay)?;
        let p = &self.pretrain;
        at_least("pretrain.batch_size", p.batch_size, 1)?;
        at_least("pretrain.log_every", p.log_every, 1)?;
        positive("pretrain.lr", p.lr)?;
        non_negative("pretrain.alpha_sig", p.alpha_sig)?;
        non_negative("pretrain.alpha_dsl", p.alpha_dsl)?;
        non_negative("pretrain.margin", p.margin)?;
        let a = &self.agent;
        at_least("agent.batch_size", a.batch_size, 1)?;
        at_least("agent.log_every", a.log_every, 1)?;
        positive("agent.lr", a.lr)?;
        for (k, v) in [
            ("agent.lambda", a.lambda),
            ("agent.beta_nav", a.beta_nav),
            ("agent.beta_sig", a.beta_sig),
            ("agent.beta_ss", a.beta_ss),
        ] {
            non_negative(k, v)?;
        }
        let r = &self.rollout;
        at_least("rollout.max_steps", r.max_steps, 1)?;
        positive("rollout.success_radius", r.success_radius)?;
        if !(0.0..=1.0).contains(&r.discount) {
            return Err(ExpError::Config(format!(
                "rollout.discount must lie in [0, 1], got {}",
                r.discount
            )));
        }
        non_negative("rollout.terminal_reward", r.terminal_reward)?;
        if self.output_dir.is_empty() {
            return Err(ExpError::Config("output_dir must not be empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Pretraining coefficients after ablations.
    pub fn effective_alphas(&self) -> (f64, f64) {
        let a = &self.ablation;
        (
            if a.no_sig {
                0.0
            } else {
                self.pretrain.alpha_sig
            },
            if a.no_dsl {
                0.0
            } else {
                self.pretrain.alpha_dsl
            },
        )
    }

    /// (β1, β2, β3) after ablations; without a translator only β1 acts.
    pub fn effective_betas(&self) -> (f64, f64, f64) {
        let a = &self.ablation;
        if a.no_translator {
            return (self.agent.beta_nav, 0.0, 0.0);
        }
        (
            self.agent.beta_nav,
            if a.no_sig { 0.0 } else { self.agent.beta_sig },
            if a.no_ss { 0.0 } else { self.agent.beta_ss },
        )
    }
}

/// Sets a dotted key (`agent.lambda`) in a JSON object tree. The value is
/// parsed as JSON when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<(), ExpError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ExpError::Config(format!("malformed override key `{key}`")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| {
            ExpError::Config(format!("override `{key}` descends into a non-object"))
        })?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| ExpError::Config(format!("override `{key}` descends into a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads a JSON config (or starts from `{}`), applies `key=value`
/// overrides, fills defaults and validates.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig, ExpError> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ExpError::Io {
                path: p.display().to_string(),
                source,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| ExpError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !root.is_object() {
        return Err(ExpError::Config("config root must be a JSON object".into()));
    }
    for (k, v) in overrides {
        apply_override(&mut root, k, v)?;
    }
    let cfg: RunConfig =
        serde_json::from_value(root).map_err(|e| ExpError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_object_gives_defaults() {
        let f = write("{}");
        assert_eq!(
            load_config(Some(f.path()), &[]).unwrap(),
            RunConfig::default()
        );
        assert_eq!(load_config(None, &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn override_beats_file() {
        let f = write(r#"{"agent": {"lambda": 0.7}, "seed": 3}"#);
        let cfg = load_config(Some(f.path()), &[("agent.lambda".into(), "0.5".into())]).unwrap();
        assert_eq!(cfg.agent.lambda, 0.5);
        assert_eq!(cfg.seed, 3);
        let cfg = load_config(Some(f.path()), &[]).unwrap();
        assert_eq!(cfg.agent.lambda, 0.7);
    }

    #[test]
    fn unknown_keys_are_named() {
        let f = write(r#"{"beta9": 1}"#);
        let msg = load_config(Some(f.path()), &[]).unwrap_err().to_string();
        assert!(msg.contains("beta9"), "{msg}");
        let msg = load_config(None, &[("agent.beta9".into(), "1".into())])
            .unwrap_err()
            .to_string();
        assert!(msg.contains("beta9"), "{msg}");
    }

    #[test]
    fn invalid_values_name_range() {
        let msg = load_config(None, &[("agent.lambda".into(), "-1".into())])
            .unwrap_err()
            .to_string();
        assert!(
            msg.contains("agent.lambda") && msg.contains(">= 0"),
            "{msg}"
        );
        let msg = load_config(None, &[("splits.unseen_seed_base".into(), "10".into())])
            .unwrap_err()
            .to_string();
        assert!(msg.contains("overlap"), "{msg}");
    }

    #[test]
    fn hash_tracks_effective_values() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.agent.lambda = 0.3;
        assert_ne!(a.hash(), b.hash());
        b.agent.lambda = 0.2;
        assert_eq!(a.hash(), b.hash());
        let f = write(r#"{"agent": {"lambda": 0.2}}"#);
        assert_eq!(load_config(Some(f.path()), &[]).unwrap().hash(), a.hash());
    }

    #[test]
    fn ablation_labels_and_coefficients() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.ablation.label(), "full");
        assert_eq!(cfg.effective_betas(), (1.0, 1.0, 0.1));
        cfg.ablation.enable("no-ss").unwrap();
        assert_eq!(cfg.ablation.label(), "no-ss");
        assert_eq!(cfg.effective_betas(), (1.0, 1.0, 0.0));
        cfg.ablation.enable("no-translator").unwrap();
        assert_eq!(cfg.ablation.label(), "baseline");
        assert_eq!(cfg.effective_betas(), (1.0, 0.0, 0.0));
        assert!(cfg.ablation.enable("no-agent").is_err());
    }
}
