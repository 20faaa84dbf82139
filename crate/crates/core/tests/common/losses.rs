//! Finite-difference checks of every training loss on the tiny models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlnlab::navagent::{
    baseline, loss_nav, loss_ss, objective, rollout_on, NavError, NavLossConfig, RolloutConfig,
    RolloutMode, SsForm,
};
use vlnlab::numcore::{check_gradients, GradCheckReport, Graph, NumError};
use vlnlab::translator::{loss_sig, DslForm, PretrainConfig};

use super::*;

pub const H: f64 = 1e-5;

fn nav_err(e: NavError) -> NumError {
    NumError::InvalidInput(e.to_string())
}

pub fn sig() -> GradCheckReport {
    let t = tiny_translator(4);
    let mut s = registered(1, None, Some(&t));
    let ex = &tiny_examples()[0];
    check_gradients(&mut s, H, |g, st| {
        let x = t.encode_text(g, st, &ex.positive)?;
        let v = t.encode_vision(g, st, &ex.candidates)?;
        let heads = t.heads(g, st, x, v)?;
        loss_sig(g, heads.token_dists, &ex.positive)
    })
    .unwrap()
}

/// The generated form compares token distributions with embeddings, so it
/// needs dim equal to the vocabulary size.
pub fn dsl(form: DslForm) -> GradCheckReport {
    let dim = match form {
        DslForm::Anchor => 4,
        DslForm::Generated => TINY_VOCAB,
    };
    let t = tiny_translator(dim);
    let mut s = registered(2, None, Some(&t));
    let ex = &tiny_examples()[1];
    // a wide margin keeps every hinge active
    check_gradients(&mut s, H, |g, st| {
        let v = t.encode_vision(g, st, &ex.candidates)?;
        t.loss_dsl(
            g,
            st,
            v,
            &ex.anchor,
            &ex.positive,
            &ex.negatives[0].0,
            10.0,
            form,
        )
    })
    .unwrap()
}

pub fn pretraining() -> GradCheckReport {
    let t = tiny_translator(4);
    let mut s = registered(3, None, Some(&t));
    let batch = tiny_examples();
    let cfg = PretrainConfig {
        alpha_sig: 0.7,
        alpha_dsl: 1.3,
        margin: 10.0,
        dsl_form: DslForm::Anchor,
    };
    check_gradients(&mut s, H, |g, st| {
        Ok(t.pretrain_loss(g, st, &batch, &cfg)?.total)
    })
    .unwrap()
}

pub fn split_supervision(form: SsForm) -> GradCheckReport {
    let t = tiny_translator(4);
    let mut s = registered(4, None, Some(&t));
    let spec = tiny_spec();
    let ex = &tiny_examples()[0];
    check_gradients(&mut s, H, |g, st| {
        let x = t.encode_text(g, st, &spec.instruction)?;
        let v = t.encode_vision(g, st, &ex.candidates)?;
        let mask = t.heads(g, st, x, v)?.split_mask;
        loss_ss(g, mask, &spec.split_target(1), form)
    })
    .unwrap()
}

pub fn navigation() -> GradCheckReport {
    let agent = tiny_agent();
    let mut s = registered(5, Some(&agent), None);
    let worlds = tiny_worlds();
    let spec = tiny_spec();
    let cfg = RolloutConfig::default();
    check_gradients(&mut s, H, |g, st| {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let graph = &worlds["tiny"];
        let run = |g: &mut Graph, mode, rng: &mut ChaCha8Rng| {
            rollout_on(g, st, &agent, None, graph, &spec, mode, &cfg, rng).map_err(nav_err)
        };
        let teacher = vec![run(g, RolloutMode::Teacher, &mut rng)?];
        let sampled = vec![
            run(g, RolloutMode::Sample, &mut rng)?,
            run(g, RolloutMode::Sample, &mut rng)?,
        ];
        Ok(loss_nav(g, &sampled, &teacher, 0.2, cfg.discount)
            .map_err(nav_err)?
            .0)
    })
    .unwrap()
}

pub fn full_objective() -> GradCheckReport {
    let agent = tiny_agent();
    let t = tiny_translator(4);
    let mut s = registered(6, Some(&agent), Some(&t));
    let worlds = tiny_worlds();
    let spec = tiny_spec();
    let cfg = RolloutConfig::default();
    let losses = NavLossConfig {
        beta_nav: 1.0,
        beta_sig: 0.5,
        beta_ss: 0.3,
        lambda: 0.2,
        ss_form: SsForm::Full,
    };
    check_gradients(&mut s, H, |g, st| {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let v = objective(
            g,
            st,
            &agent,
            Some(&t),
            &worlds,
            &[&spec, &spec],
            &losses,
            &cfg,
            &mut rng,
        )
        .map_err(nav_err)?;
        Ok(v.objective)
    })
    .unwrap()
}

pub fn baseline_objective() -> GradCheckReport {
    let agent = tiny_agent();
    let mut s = registered(7, Some(&agent), None);
    let worlds = tiny_worlds();
    let spec = tiny_spec();
    let cfg = RolloutConfig::default();
    check_gradients(&mut s, H, |g, st| {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (obj, _, _) =
            baseline::losses(g, st, &agent, &worlds, &[&spec], 1.0, 0.2, &cfg, &mut rng)
                .map_err(nav_err)?;
        Ok(obj)
    })
    .unwrap()
}

/// Every loss by name.
pub fn all() -> Vec<(&'static str, GradCheckReport)> {
    vec![
        ("sig", sig()),
        ("dsl-anchor", dsl(DslForm::Anchor)),
        ("dsl-generated", dsl(DslForm::Generated)),
        ("pretraining", pretraining()),
        ("ss-full", split_supervision(SsForm::Full)),
        ("ss-positive", split_supervision(SsForm::PositiveOnly)),
        ("navigation", navigation()),
        ("objective", full_objective()),
        ("baseline", baseline_objective()),
    ]
}
