//! Every emitted record checked against landmark classes recomputed by
//! brute force from the raw view features.

mod common;

use std::collections::BTreeMap;

use common::{brute_candidate_views, detector, syfis_soundness};
use vlnlab::syfis::{generate_dataset, Language, SyfisConfig};
use vlnlab::worldsim::{generate_world, WorldGenConfig};

#[test]
fn records_satisfy_landmark_definitions() {
    let worlds: Vec<_> = (0..100u64)
        .map(|s| generate_world(2000 + s, &WorldGenConfig::default()).unwrap())
        .collect();
    let lang = Language::default();
    let cfg = SyfisConfig {
        trajectories_per_world: 10,
        ..Default::default()
    };
    let ds = generate_dataset(&worlds, &detector(24), &cfg, &lang, 3).unwrap();
    let map: BTreeMap<_, _> = worlds
        .into_iter()
        .map(|w| (w.world_id.clone(), w))
        .collect();
    let (counts, messages) = syfis_soundness(&ds.records, &map, lang.labels.labels(), cfg.top_k);
    assert!(counts.records >= 2000, "{counts:?}");
    assert!(counts.hard > 0 && counts.easy > 0, "{counts:?}");
    assert_eq!(
        counts.violations,
        0,
        "{:?}",
        &messages[..messages.len().min(5)]
    );
}

#[test]
fn recomputed_candidate_views_match_observation() {
    let w = generate_world(77, &WorldGenConfig::default()).unwrap();
    let ds = generate_dataset(
        std::slice::from_ref(&w),
        &detector(24),
        &SyfisConfig {
            trajectories_per_world: 20,
            ..Default::default()
        },
        &Language::default(),
        1,
    )
    .unwrap();
    assert!(!ds.records.is_empty());
    for r in &ds.records {
        let obs = w.observe(r.source, r.heading).unwrap();
        let target_idx = if r.is_stop() {
            obs.candidates.stop_index()
        } else {
            obs.candidates.index_of(r.target).unwrap()
        };
        let (target, others) = brute_candidate_views(&w, r);
        assert_eq!(
            target,
            obs.candidates.entries[target_idx].feature.as_slice()
        );
        let mut want: Vec<&[f64]> = obs
            .candidates
            .entries
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != target_idx)
            .map(|(_, c)| c.feature.as_slice())
            .collect();
        let mut got = others.clone();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(want, got);
        assert_eq!(r.candidates, obs.candidates.ids());
    }
}
