use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    bearing_deg, elevation_bin, elevation_deg, heading_bin, EnvironmentGraph, Split, Vec3, View,
    Viewpoint, ViewpointId, WorldError, ELEVATIONS, HEADINGS,
};

/// Parameters of the perturbed-lattice world generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldGenConfig {
    pub node_count: usize,
    pub floors: usize,
    pub floor_height: f64,
    pub jitter: f64,
    pub drop_edge_prob: f64,
    pub extra_edge_prob: f64,
    pub label_count: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub zipf_exponent: f64,
    pub feature_noise: f64,
}

impl Default for WorldGenConfig {
    fn default() -> Self {
        Self {
            node_count: 30,
            floors: 2,
            floor_height: 0.8,
            jitter: 0.15,
            drop_edge_prob: 0.2,
            extra_edge_prob: 0.15,
            label_count: 24,
            min_objects: 2,
            max_objects: 4,
            zipf_exponent: 1.0,
            feature_noise: 0.05,
        }
    }
}

impl WorldGenConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::InvalidParameter(m));
        if self.node_count < 2 {
            return bad(format!("node_count must be >= 2, got {}", self.node_count));
        }
        if self.label_count < 2 {
            return bad(format!(
                "label_count must be >= 2, got {}",
                self.label_count
            ));
        }
        if self.floors == 0 {
            return bad("floors must be >= 1".into());
        }
        if self.min_objects > self.max_objects || self.max_objects > self.label_count {
            return bad("need min_objects <= max_objects <= label_count".into());
        }
        for (name, p) in [
            ("drop_edge_prob", self.drop_edge_prob),
            ("extra_edge_prob", self.extra_edge_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return bad("feature_noise must be finite and >= 0".into());
        }
        if !(self.jitter >= 0.0 && self.jitter < 0.5) {
            return bad("jitter must lie in [0, 0.5)".into());
        }
        if self.floor_height.is_nan() || self.floor_height <= 0.0 {
            return bad("floor_height must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Cell {
    floor: usize,
    row: usize,
    col: usize,
}

/// Builds a connected world on a jittered multi-floor lattice.
///
/// Lattice edges are randomly dropped while connectivity holds, diagonal
/// edges are added where they do not share a view bin with an existing edge,
/// and floors are joined by sloped stair edges. Positions are finally scaled
/// so the mean edge length is 1. Per-view objects follow a Zipf-like label
/// distribution; features are L2-normalised indicators plus Gaussian noise.
pub fn generate_world(seed: u64, params: &WorldGenConfig) -> Result<EnvironmentGraph, WorldError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.node_count;
    let floors = params.floors.min(n);
    let per_floor = n.div_ceil(floors);
    let cols = (per_floor as f64).sqrt().ceil() as usize;

    let cells: Vec<Cell> = (0..n)
        .map(|k| {
            let idx = k % per_floor;
            Cell {
                floor: k / per_floor,
                row: idx / cols,
                col: idx % cols,
            }
        })
        .collect();
    let mut positions: Vec<Vec3> = cells
        .iter()
        .map(|c| {
            Vec3::new(
                c.col as f64 + rng.random_range(-params.jitter..=params.jitter),
                c.row as f64 + rng.random_range(-params.jitter..=params.jitter),
                c.floor as f64 * params.floor_height + rng.random_range(-0.02..=0.02),
            )
        })
        .collect();
    let find = |floor: usize, row: isize, col: isize| -> Option<usize> {
        if row < 0 || col < 0 || col as usize >= cols {
            return None;
        }
        let k = floor * per_floor + row as usize * cols + col as usize;
        (k < n && k < (floor + 1) * per_floor).then_some(k)
    };

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut lattice = Vec::new();
    for (k, c) in cells.iter().enumerate() {
        let (r, cc) = (c.row as isize, c.col as isize);
        for (dr, dc) in [(0, 1), (1, 0)] {
            if let Some(j) = find(c.floor, r + dr, cc + dc) {
                lattice.push((k, j));
            }
        }
    }
    edges.extend(lattice.iter().copied());

    let bins = |positions: &[Vec3], a: usize, b: usize| {
        let (pa, pb) = (positions[a], positions[b]);
        (
            heading_bin(bearing_deg(pa, pb)),
            elevation_bin(elevation_deg(pa, pb)),
        )
    };
    let collides = |edges: &BTreeSet<(usize, usize)>, positions: &[Vec3], a: usize, b: usize| {
        let at = |x: usize, y: usize| {
            let want = bins(positions, x, y);
            edges.iter().any(|&(u, v)| {
                (u == x && v != y && bins(positions, x, v) == want)
                    || (v == x && u != y && bins(positions, x, u) == want)
            })
        };
        at(a, b) || at(b, a)
    };

    for f in 0..floors.saturating_sub(1) {
        let lower: Vec<usize> = (0..n).filter(|&k| cells[k].floor == f).collect();
        let upper: Vec<usize> = (0..n).filter(|&k| cells[k].floor == f + 1).collect();
        let stairs = 1 + usize::from(rng.random_bool(0.5));
        let mut placed = 0;
        let mut order = lower.clone();
        order.shuffle(&mut rng);
        for &a in &order {
            if placed == stairs {
                break;
            }
            let ca = cells[a];
            let mut options: Vec<usize> = upper
                .iter()
                .copied()
                .filter(|&b| {
                    let cb = cells[b];
                    cb.row.abs_diff(ca.row) + cb.col.abs_diff(ca.col) == 1
                })
                .collect();
            options.shuffle(&mut rng);
            if let Some(&b) = options
                .iter()
                .find(|&&b| !collides(&edges, &positions, a.min(b), a.max(b)))
            {
                edges.insert((a.min(b), a.max(b)));
                placed += 1;
            }
        }
        if placed == 0 {
            // tiny floors: join the horizontally closest pair
            let (a, b) = lower
                .iter()
                .flat_map(|&a| upper.iter().map(move |&b| (a, b)))
                .min_by(|x, y| {
                    let h = |p: (usize, usize)| {
                        let d = positions[p.1] - positions[p.0];
                        d.x * d.x + d.y * d.y
                    };
                    h(*x).total_cmp(&h(*y)).then(x.cmp(y))
                })
                .expect("both floors populated");
            edges.insert((a.min(b), a.max(b)));
        }
    }

    let mut droppable = lattice.clone();
    droppable.shuffle(&mut rng);
    for e in droppable {
        if rng.random_bool(params.drop_edge_prob) {
            edges.remove(&e);
            if !connected(n, &edges) {
                edges.insert(e);
            }
        }
    }

    for (k, c) in cells.iter().enumerate() {
        let (r, cc) = (c.row as isize, c.col as isize);
        for dc in [-1isize, 1] {
            if let Some(j) = find(c.floor, r + 1, cc + dc) {
                let e = (k.min(j), k.max(j));
                if rng.random_bool(params.extra_edge_prob)
                    && !collides(&edges, &positions, e.0, e.1)
                {
                    edges.insert(e);
                }
            }
        }
    }

    let mean = edges
        .iter()
        .map(|&(a, b)| positions[a].distance(positions[b]))
        .sum::<f64>()
        / edges.len() as f64;
    for p in &mut positions {
        *p = Vec3::new(p.x / mean, p.y / mean, p.z / mean);
    }

    let weights: Vec<f64> = (0..params.label_count)
        .map(|i| 1.0 / ((i + 1) as f64).powf(params.zipf_exponent))
        .collect();
    let noise = Normal::new(0.0, params.feature_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| WorldError::InvalidParameter(e.to_string()))?;
    let viewpoints = positions
        .iter()
        .enumerate()
        .map(|(id, &position)| {
            let views = (0..HEADINGS * ELEVATIONS)
                .map(|_| {
                    let count = rng.random_range(params.min_objects..=params.max_objects);
                    let objects = sample_without_replacement(&weights, count, &mut rng);
                    let feature = bag_of_objects(
                        &objects,
                        params.label_count,
                        params.feature_noise,
                        &noise,
                        &mut rng,
                    );
                    View { objects, feature }
                })
                .collect();
            Viewpoint {
                id,
                position,
                views,
            }
        })
        .collect();

    let edge_list: Vec<(ViewpointId, ViewpointId, f64)> = edges
        .iter()
        .map(|&(a, b)| (a, b, positions[a].distance(positions[b])))
        .collect();
    EnvironmentGraph::new(
        format!("world-{seed}"),
        seed,
        Split::Seen,
        viewpoints,
        edge_list,
    )
}

fn connected(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn sample_without_replacement(weights: &[f64], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = w.iter().sum();
        let mut x = rng.random_range(0.0..total);
        let mut pick = w.len() - 1;
        for (i, &wi) in w.iter().enumerate() {
            if wi > 0.0 && x < wi {
                pick = i;
                break;
            }
            x -= wi;
        }
        while w[pick] == 0.0 {
            pick -= 1;
        }
        w[pick] = 0.0;
        out.push(pick);
    }
    out.sort_unstable();
    out
}

/// L2-normalised indicator over `dim` labels plus i.i.d. Gaussian noise.
fn bag_of_objects(
    objects: &[usize],
    dim: usize,
    sigma: f64,
    noise: &Normal<f64>,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut f = vec![0.0; dim];
    if !objects.is_empty() {
        let v = 1.0 / (objects.len() as f64).sqrt();
        for &o in objects {
            f[o] = v;
        }
    }
    if sigma > 0.0 {
        for x in &mut f {
            *x += noise.sample(rng);
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generates_connected_world_of_requested_size() {
        let g = generate_world(42, &WorldGenConfig::default()).unwrap();
        assert_eq!(g.len(), 30);
        assert!(g.is_connected());
        assert!((g.mean_edge_length() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_too_few_nodes() {
        let p = WorldGenConfig {
            node_count: 0,
            ..Default::default()
        };
        assert!(matches!(
            generate_world(1, &p),
            Err(WorldError::InvalidParameter(_))
        ));
    }

    #[test]
    fn two_node_world_is_connected() {
        let p = WorldGenConfig {
            node_count: 2,
            ..Default::default()
        };
        let g = generate_world(3, &p).unwrap();
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn zipf_sampling_is_distinct_and_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: Vec<f64> = (0..6).map(|i| 1.0 / (i + 1) as f64).collect();
        for _ in 0..200 {
            let s = sample_without_replacement(&w, 6, &mut rng);
            assert_eq!(s, vec![0, 1, 2, 3, 4, 5]);
            let s = sample_without_replacement(&w, 3, &mut rng);
            assert!(s.windows(2).all(|p| p[0] < p[1]));
        }
    }
}
