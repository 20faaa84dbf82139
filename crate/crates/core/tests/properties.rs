mod common;

use common::{all_walks, registered, six_node_graph, tiny_agent};
use proptest::prelude::*;
use vlnlab::evalmetrics::dtw;
use vlnlab::expcli::RunConfig;
use vlnlab::navagent::{augment_text, TextMemory};
use vlnlab::numcore::{read_checkpoint, write_checkpoint, Graph, ParameterStore, Tensor};
use vlnlab::worldsim::{generate_world, relative_orientation, Vec3, WorldGenConfig};

fn vec3() -> impl Strategy<Value = Vec3> {
    (-5.0..5.0f64, -5.0..5.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_worlds_are_connected_and_metric(seed in 0u64..10_000, nodes in 2usize..40) {
        let cfg = WorldGenConfig { node_count: nodes, ..Default::default() };
        let w = generate_world(seed, &cfg).unwrap();
        prop_assert_eq!(w.len(), nodes);
        prop_assert!(w.is_connected());
        for &(a, b, len) in w.edges() {
            let pa = w.viewpoint(a).unwrap().position;
            let pb = w.viewpoint(b).unwrap().position;
            prop_assert!((len - pa.distance(pb)).abs() < 1e-12);
            prop_assert!(len > 0.0);
        }
    }

    #[test]
    fn candidates_sorted_with_stop_last(seed in 0u64..10_000, heading in 0.0..360.0f64) {
        let w = generate_world(seed, &WorldGenConfig::default()).unwrap();
        let id = (seed as usize) % w.len();
        let obs = w.observe(id, heading).unwrap();
        let entries = &obs.candidates.entries;
        prop_assert!(entries.last().unwrap().is_stop);
        prop_assert_eq!(entries.len(), w.neighbors(id).unwrap().len() + 1);
        for pair in entries[..entries.len() - 1].windows(2) {
            let key = |c: &vlnlab::worldsim::Candidate| (c.rel_heading, c.rel_elevation, c.viewpoint);
            prop_assert!(key(&pair[0]) <= key(&pair[1]));
        }
        for c in &entries[..entries.len() - 1] {
            prop_assert!(w.are_adjacent(id, c.viewpoint));
        }
    }

    #[test]
    fn relative_orientation_in_range(a in vec3(), b in vec3(), heading in -720.0..720.0f64) {
        let (h, e) = relative_orientation(a, heading, b);
        prop_assert!(h > -180.0 && h <= 180.0, "heading {}", h);
        prop_assert!((-90.0..=90.0).contains(&e), "elevation {}", e);
    }

    #[test]
    fn dtw_symmetric_and_non_negative(i in 0usize..2000, j in 0usize..2000) {
        let g = six_node_graph();
        let walks = all_walks(&g, 4);
        let (p, r) = (&walks[i % walks.len()], &walks[j % walks.len()]);
        let d = dtw(&g, p, r).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d.to_bits(), dtw(&g, r, p).unwrap().to_bits());
        prop_assert_eq!(dtw(&g, p, p).unwrap(), 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise(
        tensors in prop::collection::vec((1usize..4, 1usize..4, any::<u64>()), 1..6)
    ) {
        let mut store = ParameterStore::new();
        for (k, &(r, c, seed)) in tensors.iter().enumerate() {
            let data: Vec<f64> = (0..r * c)
                .map(|i| f64::from_bits(seed.rotate_left(i as u32) >> 2) - 1.0)
                .collect();
            store.insert(format!("p{k}"), Tensor::new(vec![r, c], data).unwrap());
        }
        let loaded = read_checkpoint(&write_checkpoint(&store).unwrap()).unwrap();
        prop_assert_eq!(loaded.len(), store.len());
        for (name, p) in store.iter() {
            let q = loaded.value(name).unwrap();
            prop_assert_eq!(q.shape(), p.value.shape());
            prop_assert_eq!(bits(q), bits(&p.value));
        }
    }

    #[test]
    fn config_hash_tracks_content(seed in any::<u64>(), lambda in 0.0..1.0f64) {
        let mut cfg = RunConfig { seed, ..Default::default() };
        cfg.agent.lambda = lambda;
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = seed.wrapping_add(1);
        prop_assert_ne!(other.hash(), cfg.hash());
    }

    /// Projecting the stacked text equals stacking the projections.
    #[test]
    fn augmented_memory_is_rowwise(len in 1usize..6, seed in 0u64..1000) {
        let agent = tiny_agent();
        let store = registered(seed, Some(&agent), None);
        let row = |k: usize| -> Vec<f64> {
            (0..4).map(|c| ((seed as usize + 7 * k + 3 * c) % 11) as f64 / 5.0 - 1.0).collect()
        };
        let block = |g: &mut Graph, off: usize| {
            let rows: Vec<Vec<f64>> = (0..len).map(|k| row(off + k)).collect();
            g.input(Tensor::from_rows(&rows).unwrap()).unwrap()
        };
        let mut g = Graph::new();
        let (x, h, a) = (block(&mut g, 0), block(&mut g, 10), block(&mut g, 20));
        let stacked = augment_text(&mut g, x, h, a).unwrap();
        let direct = agent.text_memory(&mut g, &store, stacked).unwrap();
        let parts = [x, h, a].map(|v| agent.text_memory(&mut g, &store, v).unwrap());
        let joined = TextMemory::concat(&mut g, &parts).unwrap();
        prop_assert_eq!(bits(g.value(direct.keys)), bits(g.value(joined.keys)));
        prop_assert_eq!(bits(g.value(direct.values)), bits(g.value(joined.values)));
    }
}
