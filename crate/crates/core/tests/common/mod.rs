#![allow(dead_code)]

pub mod losses;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlnlab::evalmetrics::dtw;
use vlnlab::landmark::SyntheticDetector;
use vlnlab::navagent::{AgentConfig, AgentModel, EpisodeSpec, WorldMap};
use vlnlab::numcore::{GradCheckReport, ParameterStore};
use vlnlab::syfis::{NegativeKind, SyfisRecord};
use vlnlab::translator::{candidate_inputs, PretrainExample, TranslatorConfig, TranslatorModel};
use vlnlab::worldsim::{
    bearing_deg, elevation_bin, elevation_deg, heading_bin, EnvironmentGraph, Split, Vec3, View,
    Viewpoint, ViewpointId, VIEWS_PER_VIEWPOINT,
};

pub const TINY_FEATURES: usize = 4;
pub const TINY_VOCAB: usize = 8;

fn random_views(rng: &mut ChaCha8Rng) -> Vec<View> {
    (0..VIEWS_PER_VIEWPOINT)
        .map(|_| View {
            objects: vec![],
            feature: (0..TINY_FEATURES)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        })
        .collect()
}

/// Four viewpoints on a bent line, so no viewpoint has more than two
/// neighbours (at most three candidates with STOP).
pub fn tiny_world() -> EnvironmentGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let positions = [
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(1.5, 1.0, 0.0),
        Vec3::new(1.5, 2.0, 0.8),
    ];
    let vps: Vec<Viewpoint> = positions
        .iter()
        .enumerate()
        .map(|(id, &position)| Viewpoint {
            id,
            position,
            views: random_views(&mut rng),
        })
        .collect();
    let edges = (0..3)
        .map(|i| (i, i + 1, positions[i].distance(positions[i + 1])))
        .collect();
    EnvironmentGraph::new("tiny".into(), 0, Split::Seen, vps, edges).unwrap()
}

pub fn tiny_worlds() -> WorldMap {
    let w = tiny_world();
    [(w.world_id.clone(), w)].into_iter().collect()
}

pub fn tiny_translator(dim: usize) -> TranslatorModel {
    TranslatorModel::new(TranslatorConfig {
        dim,
        mlp_hidden: 3,
        vocab: TINY_VOCAB,
        feature_dim: TINY_FEATURES,
        max_len: 8,
    })
    .unwrap()
}

pub fn tiny_agent() -> AgentModel {
    AgentModel::new(AgentConfig {
        dim: 4,
        vocab: TINY_VOCAB,
        feature_dim: TINY_FEATURES,
    })
    .unwrap()
}

pub fn registered(
    seed: u64,
    agent: Option<&AgentModel>,
    translator: Option<&TranslatorModel>,
) -> ParameterStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    if let Some(a) = agent {
        a.register(&mut store, &mut rng);
    }
    if let Some(t) = translator {
        t.register(&mut store, &mut rng);
    }
    store
}

/// Route 0 → 1 → 2 with a two-token sub-instruction per step.
pub fn tiny_spec() -> EpisodeSpec {
    EpisodeSpec {
        world_id: "tiny".into(),
        trajectory_id: 0,
        path: vec![0, 1, 2],
        initial_heading: 0.0,
        instruction: vec![3, 4, 5, 6, 7, 2],
        spans: vec![(0, 2), (2, 2), (4, 2)],
    }
}

pub fn tiny_examples() -> Vec<PretrainExample> {
    let w = tiny_world();
    let at = |id: ViewpointId, heading: f64| {
        candidate_inputs(&w.observe(id, heading).unwrap().candidates)
    };
    vec![
        PretrainExample {
            anchor: vec![5, 2, 3],
            positive: vec![4, 2, 3],
            negatives: vec![
                (vec![4, 2, 6], NegativeKind::Hard),
                (vec![4, 2, 7], NegativeKind::Easy),
                (vec![4, 2, 5], NegativeKind::Easy),
            ],
            candidates: at(1, 0.0),
        },
        PretrainExample {
            anchor: vec![6, 7, 2, 5],
            positive: vec![3, 2, 5],
            negatives: vec![
                (vec![3, 2, 4], NegativeKind::Hard),
                (vec![3, 2, 6], NegativeKind::Hard),
                (vec![3, 2, 7], NegativeKind::Easy),
            ],
            candidates: at(2, 45.0),
        },
    ]
}

pub fn passes(report: &GradCheckReport) -> bool {
    report.max_rel_error < 1e-4 && report.checked > 0
}

// ---------------------------------------------------------------------------
// Oracles

/// Bellman-Ford single-source distances over the undirected edge list.
pub fn bellman_ford(
    n: usize,
    edges: &[(ViewpointId, ViewpointId, f64)],
    src: ViewpointId,
) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; n];
    d[src] = 0.0;
    for _ in 0..n {
        let mut changed = false;
        for &(a, b, w) in edges {
            for (u, v) in [(a, b), (b, a)] {
                if d[u] + w < d[v] {
                    d[v] = d[u] + w;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    d
}

/// Minimum alignment cost over every monotone alignment, by explicit
/// enumeration of all warping paths.
pub fn exhaustive_dtw(cost: &dyn Fn(usize, usize) -> f64, n: usize, m: usize) -> f64 {
    fn walk(
        i: usize,
        j: usize,
        acc: f64,
        n: usize,
        m: usize,
        cost: &dyn Fn(usize, usize) -> f64,
        best: &mut f64,
    ) {
        let acc = acc + cost(i, j);
        if i + 1 == n && j + 1 == m {
            *best = best.min(acc);
            return;
        }
        if i + 1 < n {
            walk(i + 1, j, acc, n, m, cost, best);
        }
        if j + 1 < m {
            walk(i, j + 1, acc, n, m, cost, best);
        }
        if i + 1 < n && j + 1 < m {
            walk(i + 1, j + 1, acc, n, m, cost, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(0, 0, 0.0, n, m, cost, &mut best);
    best
}

/// Fixed six-viewpoint graph for the metric oracles.
pub fn six_node_graph() -> EnvironmentGraph {
    let positions = [
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(2.0, 0.5, 0.0),
        Vec3::new(2.0, 1.7, 0.0),
        Vec3::new(1.0, 2.0, 0.8),
        Vec3::new(0.2, 1.1, 0.8),
    ];
    let vps = positions
        .iter()
        .enumerate()
        .map(|(id, &position)| Viewpoint {
            id,
            position,
            views: (0..VIEWS_PER_VIEWPOINT)
                .map(|_| View {
                    objects: vec![],
                    feature: vec![1.0],
                })
                .collect(),
        })
        .collect();
    let pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)];
    let edges = pairs
        .iter()
        .map(|&(a, b)| (a, b, positions[a].distance(positions[b])))
        .collect();
    EnvironmentGraph::new("six".into(), 0, Split::Seen, vps, edges).unwrap()
}

/// Viewpoints 0..n one metre apart on a straight line.
pub fn unit_line(n: usize) -> EnvironmentGraph {
    let vps = (0..n)
        .map(|id| Viewpoint {
            id,
            position: Vec3::new(id as f64, 0.0, 0.0),
            views: (0..VIEWS_PER_VIEWPOINT)
                .map(|_| View {
                    objects: vec![],
                    feature: vec![1.0],
                })
                .collect(),
        })
        .collect();
    let edges = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
    EnvironmentGraph::new("line".into(), 0, Split::Seen, vps, edges).unwrap()
}

/// Every walk of 1..=max_len viewpoints.
pub fn all_walks(g: &EnvironmentGraph, max_len: usize) -> Vec<Vec<ViewpointId>> {
    let mut out: Vec<Vec<ViewpointId>> = (0..g.len()).map(|v| vec![v]).collect();
    let mut frontier = out.clone();
    for _ in 1..max_len {
        let mut next = Vec::new();
        for w in &frontier {
            for &(u, _) in g.neighbors(*w.last().unwrap()).unwrap() {
                let mut e = w.clone();
                e.push(u);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Checks the DP against enumeration for every pair of walks; returns
/// (pairs checked, max abs difference).
pub fn dtw_oracle_sweep() -> (usize, f64) {
    let g = six_node_graph();
    let walks = all_walks(&g, 5);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for p in &walks {
        for r in &walks {
            let dp = dtw(&g, p, r).unwrap();
            let cost = |i: usize, j: usize| g.distance(p[i], r[j]).unwrap();
            let ex = exhaustive_dtw(&cost, p.len(), r.len());
            worst = worst.max((dp - ex).abs());
            count += 1;
        }
    }
    (count, worst)
}

/// Top-k labels of a feature by cosine with the label's unit vector;
/// ties go to the smaller label id.
pub fn brute_recognizable(feature: &[f64], k: usize) -> BTreeSet<usize> {
    let norm = feature.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, usize)> = feature
        .iter()
        .enumerate()
        .map(|(c, &x)| (if norm == 0.0 { 0.0 } else { x / norm }, c))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, c)| c).collect()
}

/// Feature of every candidate of a record, recomputed from positions:
/// neighbours through the view bin that contains them, STOP through the
/// downward view in the current heading. Returns (target features, other
/// candidates' features).
pub fn brute_candidate_views<'a>(
    g: &'a EnvironmentGraph,
    r: &SyfisRecord,
) -> (&'a [f64], Vec<&'a [f64]>) {
    let src = g.viewpoint(r.source).unwrap();
    let stop_view = src
        .view(heading_bin(r.heading.rem_euclid(360.0)), 0)
        .feature
        .as_slice();
    let mut others = Vec::new();
    let mut target = None;
    for &(nb, _) in g.neighbors(r.source).unwrap() {
        let p = g.viewpoint(nb).unwrap().position;
        let f = src
            .view(
                heading_bin(bearing_deg(src.position, p)),
                elevation_bin(elevation_deg(src.position, p)),
            )
            .feature
            .as_slice();
        if !r.is_stop() && nb == r.target {
            target = Some(f);
        } else {
            others.push(f);
        }
    }
    if r.is_stop() {
        target = Some(stop_view);
    } else {
        others.push(stop_view);
    }
    (target.expect("target among neighbours"), others)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SoundnessCounts {
    pub records: usize,
    pub positives: usize,
    pub hard: usize,
    pub easy: usize,
    pub violations: usize,
}

/// Recomputes the landmark classes of every record and checks positives
/// are distinctive, hard negatives nondistinctive and easy negatives
/// irrelevant.
pub fn syfis_soundness(
    records: &[SyfisRecord],
    worlds: &BTreeMap<String, EnvironmentGraph>,
    labels: &[String],
    k: usize,
) -> (SoundnessCounts, Vec<String>) {
    let id_of = |name: &str| labels.iter().position(|l| l == name).expect("known label");
    let mut c = SoundnessCounts::default();
    let mut messages = Vec::new();
    for r in records {
        let g = &worlds[&r.world_id];
        let (target, others) = brute_candidate_views(g, r);
        let t = brute_recognizable(target, k);
        let o: BTreeSet<usize> = others
            .iter()
            .flat_map(|f| brute_recognizable(f, k))
            .collect();
        c.records += 1;
        let pos = id_of(&r.positive.landmark);
        c.positives += 1;
        if !(t.contains(&pos) && !o.contains(&pos)) || r.anchor.landmark != r.positive.landmark {
            c.violations += 1;
            messages.push(format!(
                "{}: positive {} not distinctive",
                r.record_id, r.positive.landmark
            ));
        }
        for n in &r.negatives {
            let id = id_of(&n.sub.landmark);
            let ok = match n.kind {
                NegativeKind::Hard => {
                    c.hard += 1;
                    t.contains(&id) && o.contains(&id)
                }
                NegativeKind::Easy => {
                    c.easy += 1;
                    !t.contains(&id) && o.contains(&id)
                }
            };
            if !ok {
                c.violations += 1;
                messages.push(format!(
                    "{}: {:?} negative {} misclassified",
                    r.record_id, n.kind, n.sub.landmark
                ));
            }
        }
    }
    (c, messages)
}

pub fn detector(labels: usize) -> SyntheticDetector {
    SyntheticDetector { labels }
}

// ---------------------------------------------------------------------------
// Experiment configs

/// A run small enough to go through every verb in a couple of seconds.
pub fn tiny_run_config(dir: &std::path::Path) -> vlnlab::expcli::RunConfig {
    let mut cfg = vlnlab::expcli::RunConfig::default();
    cfg.splits.seen_worlds = 3;
    cfg.splits.unseen_worlds = 2;
    cfg.splits.unseen_trajectories_per_world = 4;
    cfg.syfis.trajectories_per_world = 10;
    cfg.model.dim = 8;
    cfg.model.mlp_hidden = 8;
    cfg.pretrain.steps = 20;
    cfg.pretrain.batch_size = 8;
    cfg.pretrain.log_every = 5;
    cfg.agent.steps = 10;
    cfg.agent.batch_size = 4;
    cfg.agent.log_every = 5;
    cfg.output_dir = dir.display().to_string();
    cfg
}

/// Relative path → bytes for everything under `root` except manifests,
/// which carry wall-clock timings.
pub fn snapshot(root: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(root).unwrap().display().to_string();
            if !rel.starts_with("manifests") {
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
