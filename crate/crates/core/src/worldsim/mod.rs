//! Immutable graph worlds with panoramic observations, candidate viewpoints,
//! geodesic distances and shortest-path teacher actions.

mod generate;
mod json;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate_world, WorldGenConfig};
pub use json::{read_world, world_from_json, world_to_json, write_world};

pub const HEADINGS: usize = 12;
pub const ELEVATIONS: usize = 3;
pub const VIEWS_PER_VIEWPOINT: usize = HEADINGS * ELEVATIONS;
pub const ANGLE_STEP_DEG: f64 = 30.0;

/// Relative tolerance used when comparing path lengths.
const PATH_EPS: f64 = 1e-9;

pub type ViewpointId = usize;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world parameter: {0}")]
    InvalidParameter(String),
    #[error("viewpoint {0} not found")]
    NotFound(ViewpointId),
    #[error("no path from {from} to {to}")]
    NoPath { from: ViewpointId, to: ViewpointId },
    #[error("malformed world: {0}")]
    Malformed(String),
    #[error("world json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Seen,
    Unseen,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;

    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// One of the 36 directional images at a viewpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    /// Ground-truth label ids, sorted ascending.
    pub objects: Vec<usize>,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Viewpoint {
    pub id: ViewpointId,
    pub position: Vec3,
    /// Indexed by [`view_index`].
    pub views: Vec<View>,
}

impl Viewpoint {
    pub fn view(&self, heading_index: usize, elevation_index: usize) -> &View {
        &self.views[view_index(heading_index, elevation_index)]
    }
}

/// Position of the view with the given heading (0..12, 30° apart, clockwise
/// from +y) and elevation (0 = −30°, 1 = level, 2 = +30°) indices.
pub fn view_index(heading_index: usize, elevation_index: usize) -> usize {
    heading_index * ELEVATIONS + elevation_index
}

/// Clockwise bearing from +y in degrees, in `[0, 360)`.
pub fn bearing_deg(from: Vec3, to: Vec3) -> f64 {
    let d = to - from;
    let b = d.x.atan2(d.y).to_degrees();
    if b < 0.0 {
        b + 360.0
    } else {
        b
    }
}

/// Vertical angle of the displacement in degrees, in `[−90, 90]`.
pub fn elevation_deg(from: Vec3, to: Vec3) -> f64 {
    let d = to - from;
    let horizontal = (d.x * d.x + d.y * d.y).sqrt();
    if horizontal == 0.0 && d.z == 0.0 {
        return 0.0;
    }
    d.z.atan2(horizontal).to_degrees()
}

/// Maps an angle to `(−180, 180]`.
pub fn normalize_deg(angle: f64) -> f64 {
    let mut a = (angle + 180.0).rem_euclid(360.0) - 180.0;
    if a <= -180.0 {
        a += 360.0;
    }
    a
}

pub fn heading_bin(bearing: f64) -> usize {
    ((bearing / ANGLE_STEP_DEG).round() as usize) % HEADINGS
}

pub fn elevation_bin(elevation: f64) -> usize {
    if elevation > ANGLE_STEP_DEG / 2.0 {
        2
    } else if elevation < -ANGLE_STEP_DEG / 2.0 {
        0
    } else {
        1
    }
}

/// Heading and elevation of `target` relative to an observer at `current`
/// facing `heading` degrees. Coincident positions give `(0, 0)`.
pub fn relative_orientation(current: Vec3, heading: f64, target: Vec3) -> (f64, f64) {
    if current == target {
        return (0.0, 0.0);
    }
    let d = target - current;
    let dh = if d.x == 0.0 && d.y == 0.0 {
        0.0
    } else {
        normalize_deg(bearing_deg(current, target) - heading)
    };
    (dh, elevation_deg(current, target))
}

/// A neighbour the agent may move to, or the STOP pseudo-candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub viewpoint: ViewpointId,
    pub rel_heading: f64,
    pub rel_elevation: f64,
    pub heading_index: usize,
    pub elevation_index: usize,
    pub feature: Vec<f64>,
    pub objects: Vec<usize>,
    pub is_stop: bool,
}

/// Neighbour candidates ordered by ascending relative heading (ties by
/// relative elevation, then id), followed by the STOP pseudo-candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub entries: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stop_index(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn index_of(&self, id: ViewpointId) -> Option<usize> {
        self.entries
            .iter()
            .position(|c| !c.is_stop && c.viewpoint == id)
    }

    pub fn ids(&self) -> Vec<ViewpointId> {
        self.entries
            .iter()
            .filter(|c| !c.is_stop)
            .map(|c| c.viewpoint)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation<'a> {
    pub panorama: &'a [View],
    pub candidates: CandidateSet,
}

#[derive(Clone, Debug)]
pub struct EnvironmentGraph {
    pub world_id: String,
    pub seed: u64,
    pub split: Split,
    viewpoints: Vec<Viewpoint>,
    edges: Vec<(ViewpointId, ViewpointId, f64)>,
    adjacency: Vec<Vec<(ViewpointId, f64)>>,
    distances: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, ViewpointId);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl EnvironmentGraph {
    /// Validates the invariants and precomputes geodesic distances.
    /// Connectivity is not required here; use [`EnvironmentGraph::is_connected`].
    pub fn new(
        world_id: String,
        seed: u64,
        split: Split,
        viewpoints: Vec<Viewpoint>,
        mut edges: Vec<(ViewpointId, ViewpointId, f64)>,
    ) -> Result<Self, WorldError> {
        let n = viewpoints.len();
        let mut feature_dim = None;
        for (i, vp) in viewpoints.iter().enumerate() {
            if vp.id != i {
                return Err(WorldError::Malformed(format!(
                    "viewpoint at position {i} has id {}",
                    vp.id
                )));
            }
            if !vp.position.is_finite() {
                return Err(WorldError::Malformed(format!(
                    "viewpoint {i} has a non-finite position"
                )));
            }
            if vp.views.len() != VIEWS_PER_VIEWPOINT {
                return Err(WorldError::Malformed(format!(
                    "viewpoint {i} has {} views",
                    vp.views.len()
                )));
            }
            for v in &vp.views {
                let d = *feature_dim.get_or_insert(v.feature.len());
                if v.feature.len() != d {
                    return Err(WorldError::Malformed(
                        "non-uniform feature dimension".into(),
                    ));
                }
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for e in &mut edges {
            if e.0 > e.1 {
                *e = (e.1, e.0, e.2);
            }
            let (a, b, w) = *e;
            if a == b {
                return Err(WorldError::Malformed(format!("self-loop at {a}")));
            }
            if b >= n {
                return Err(WorldError::NotFound(b));
            }
            let euclid = viewpoints[a].position.distance(viewpoints[b].position);
            if (euclid - w).abs() > 1e-9 {
                return Err(WorldError::Malformed(format!(
                    "edge {a}-{b} weight {w} differs from euclidean distance {euclid}"
                )));
            }
            if adjacency[a].iter().any(|&(u, _)| u == b) {
                return Err(WorldError::Malformed(format!("duplicate edge {a}-{b}")));
            }
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        edges.sort_by_key(|e| (e.0, e.1));
        for list in &mut adjacency {
            list.sort_by_key(|&(u, _)| u);
        }
        let mut g = Self {
            world_id,
            seed,
            split,
            viewpoints,
            edges,
            adjacency,
            distances: Vec::new(),
        };
        let mut distances = Vec::with_capacity(n * n);
        for s in 0..n {
            distances.extend(g.dijkstra(s));
        }
        g.distances = distances;
        Ok(g)
    }

    fn dijkstra(&self, source: ViewpointId) -> Vec<f64> {
        let n = self.viewpoints.len();
        let mut dist = vec![f64::INFINITY; n];
        dist[source] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapItem(0.0, source));
        while let Some(HeapItem(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &self.adjacency[u] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(HeapItem(nd, v));
                }
            }
        }
        dist
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.viewpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viewpoints.is_empty()
    }

    pub fn viewpoints(&self) -> &[Viewpoint] {
        &self.viewpoints
    }

    pub fn edges(&self) -> &[(ViewpointId, ViewpointId, f64)] {
        &self.edges
    }

    pub fn viewpoint(&self, id: ViewpointId) -> Result<&Viewpoint, WorldError> {
        self.viewpoints.get(id).ok_or(WorldError::NotFound(id))
    }

    /// Neighbours sorted by id, with edge lengths.
    pub fn neighbors(&self, id: ViewpointId) -> Result<&[(ViewpointId, f64)], WorldError> {
        self.adjacency
            .get(id)
            .map(Vec::as_slice)
            .ok_or(WorldError::NotFound(id))
    }

    pub fn feature_dim(&self) -> usize {
        self.viewpoints
            .first()
            .map_or(0, |vp| vp.views[0].feature.len())
    }

    pub fn are_adjacent(&self, a: ViewpointId, b: ViewpointId) -> bool {
        self.adjacency
            .get(a)
            .is_some_and(|l| l.iter().any(|&(u, _)| u == b))
    }

    pub fn edge_length(&self, a: ViewpointId, b: ViewpointId) -> Option<f64> {
        self.adjacency
            .get(a)?
            .iter()
            .find(|&&(u, _)| u == b)
            .map(|&(_, w)| w)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn mean_edge_length(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        self.edges.iter().map(|e| e.2).sum::<f64>() / self.edges.len() as f64
    }

    /// Geodesic distance between two viewpoints.
    pub fn distance(&self, a: ViewpointId, b: ViewpointId) -> Result<f64, WorldError> {
        let n = self.len();
        if a >= n {
            return Err(WorldError::NotFound(a));
        }
        if b >= n {
            return Err(WorldError::NotFound(b));
        }
        let d = self.distances[a * n + b];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(WorldError::NoPath { from: a, to: b })
        }
    }

    /// Next hop from `current` on a shortest path to `goal`, ties broken by
    /// smallest id. `None` when `current == goal`.
    pub fn next_hop(
        &self,
        current: ViewpointId,
        goal: ViewpointId,
    ) -> Result<Option<ViewpointId>, WorldError> {
        let remaining = self.distance(current, goal)?;
        if current == goal {
            return Ok(None);
        }
        let tol = PATH_EPS * remaining.max(1.0);
        for &(u, w) in &self.adjacency[current] {
            let du = self.distance(u, goal)?;
            if (w + du - remaining).abs() <= tol {
                return Ok(Some(u));
            }
        }
        // unreachable for a consistent distance table
        Err(WorldError::NoPath {
            from: current,
            to: goal,
        })
    }

    /// Shortest path from `a` to `b` obtained by repeatedly taking
    /// [`EnvironmentGraph::next_hop`]; length is the sum of its edge weights.
    pub fn shortest_path(
        &self,
        a: ViewpointId,
        b: ViewpointId,
    ) -> Result<(Vec<ViewpointId>, f64), WorldError> {
        let mut path = vec![a];
        let mut length = 0.0;
        let mut cur = a;
        while let Some(next) = self.next_hop(cur, b)? {
            length += self.edge_length(cur, next).expect("adjacent");
            path.push(next);
            cur = next;
            if path.len() > self.len() {
                return Err(WorldError::NoPath { from: a, to: b });
            }
        }
        Ok((path, length))
    }

    /// Length of a walk along consecutive adjacent viewpoints.
    pub fn path_length(&self, path: &[ViewpointId]) -> Result<f64, WorldError> {
        let mut total = 0.0;
        for w in path.windows(2) {
            if w[0] == w[1] {
                continue;
            }
            total += self
                .edge_length(w[0], w[1])
                .ok_or(WorldError::Malformed(format!(
                    "{} and {} are not adjacent",
                    w[0], w[1]
                )))?;
        }
        Ok(total)
    }

    /// Panorama and candidate set at `id` for an agent facing `heading`.
    ///
    /// Each neighbour is seen through the panoramic view whose heading and
    /// elevation bins contain it. The STOP pseudo-candidate uses the downward
    /// view in the current heading bin.
    pub fn observe(&self, id: ViewpointId, heading: f64) -> Result<Observation<'_>, WorldError> {
        let vp = self.viewpoint(id)?;
        let mut entries: Vec<Candidate> = self.adjacency[id]
            .iter()
            .map(|&(u, _)| {
                let target = self.viewpoints[u].position;
                let (rh, re) = relative_orientation(vp.position, heading, target);
                let hi = heading_bin(bearing_deg(vp.position, target));
                let ei = elevation_bin(elevation_deg(vp.position, target));
                let view = vp.view(hi, ei);
                Candidate {
                    viewpoint: u,
                    rel_heading: rh,
                    rel_elevation: re,
                    heading_index: hi,
                    elevation_index: ei,
                    feature: view.feature.clone(),
                    objects: view.objects.clone(),
                    is_stop: false,
                }
            })
            .collect();
        entries.sort_by(|a, b| {
            a.rel_heading
                .total_cmp(&b.rel_heading)
                .then(a.rel_elevation.total_cmp(&b.rel_elevation))
                .then(a.viewpoint.cmp(&b.viewpoint))
        });
        let hi = heading_bin(heading.rem_euclid(360.0));
        let stop_view = vp.view(hi, 0);
        entries.push(Candidate {
            viewpoint: id,
            rel_heading: 0.0,
            rel_elevation: 0.0,
            heading_index: hi,
            elevation_index: 0,
            feature: stop_view.feature.clone(),
            objects: stop_view.objects.clone(),
            is_stop: true,
        });
        Ok(Observation {
            panorama: &vp.views,
            candidates: CandidateSet { entries },
        })
    }

    /// Index of the teacher action in the candidate set observed at
    /// `current` with `heading`: STOP at the goal, otherwise the next hop.
    pub fn teacher_action(
        &self,
        current: ViewpointId,
        goal: ViewpointId,
        heading: f64,
    ) -> Result<usize, WorldError> {
        let obs = self.observe(current, heading)?;
        match self.next_hop(current, goal)? {
            None => Ok(obs.candidates.stop_index()),
            Some(next) => Ok(obs.candidates.index_of(next).expect("neighbour present")),
        }
    }

    /// Heading after moving from `from` to `to`; staying keeps `heading`.
    pub fn heading_after_move(&self, from: ViewpointId, to: ViewpointId, heading: f64) -> f64 {
        if from == to {
            return heading;
        }
        let (a, b) = (self.viewpoints[from].position, self.viewpoints[to].position);
        if a.x == b.x && a.y == b.y {
            heading
        } else {
            bearing_deg(a, b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank_views(dim: usize) -> Vec<View> {
        (0..VIEWS_PER_VIEWPOINT)
            .map(|_| View {
                objects: vec![],
                feature: vec![0.0; dim],
            })
            .collect()
    }

    /// a–b–c on the y axis with weights 1 and 2.
    pub(crate) fn line_graph() -> EnvironmentGraph {
        let pts = [0.0, 1.0, 3.0];
        let vps = pts
            .iter()
            .enumerate()
            .map(|(i, &y)| Viewpoint {
                id: i,
                position: Vec3::new(0.0, y, 0.0),
                views: blank_views(2),
            })
            .collect();
        EnvironmentGraph::new(
            "line".into(),
            0,
            Split::Seen,
            vps,
            vec![(0, 1, 1.0), (1, 2, 2.0)],
        )
        .unwrap()
    }

    #[test]
    fn shortest_path_identity_and_line() {
        let g = line_graph();
        assert_eq!(g.shortest_path(0, 0).unwrap(), (vec![0], 0.0));
        assert_eq!(g.shortest_path(0, 2).unwrap(), (vec![0, 1, 2], 3.0));
        assert!(matches!(
            g.shortest_path(0, 7),
            Err(WorldError::NotFound(7))
        ));
    }

    #[test]
    fn relative_orientation_cases() {
        let o = Vec3::new(0.0, 0.0, 0.0);
        assert_eq!(
            relative_orientation(o, 0.0, Vec3::new(0.0, 2.0, 0.0)),
            (0.0, 0.0)
        );
        let (dh, _) = relative_orientation(o, 0.0, Vec3::new(1.0, 0.0, 0.0));
        assert!((dh - 90.0).abs() < 1e-12);
        let t = Vec3::new(10f64.to_radians().sin(), 10f64.to_radians().cos(), 0.0);
        let (dh, _) = relative_orientation(o, 350.0, t);
        assert!((dh - 20.0).abs() < 1e-9);
        assert_eq!(relative_orientation(o, 123.0, o), (0.0, 0.0));
        assert_eq!(normalize_deg(-180.0), 180.0);
        assert_eq!(normalize_deg(540.0), 180.0);
    }

    #[test]
    fn observe_line_graph() {
        let g = line_graph();
        let obs = g.observe(1, 0.0).unwrap();
        assert_eq!(obs.candidates.len(), 3);
        assert_eq!(obs.panorama.len(), 36);
        // behind (−180 → 180) sorts after ahead (0)
        assert_eq!(obs.candidates.ids(), vec![2, 0]);
        assert!(obs.candidates.entries[2].is_stop);
        let end = g.observe(0, 0.0).unwrap();
        assert_eq!(end.candidates.len(), 2);
        assert_eq!(g.observe(1, 0.0).unwrap(), obs);
        assert!(matches!(g.observe(9, 0.0), Err(WorldError::NotFound(9))));
    }

    #[test]
    fn teacher_action_cases() {
        let g = line_graph();
        let obs = g.observe(0, 0.0).unwrap();
        assert_eq!(
            g.teacher_action(0, 0, 0.0).unwrap(),
            obs.candidates.stop_index()
        );
        let idx = g.teacher_action(0, 2, 0.0).unwrap();
        assert_eq!(obs.candidates.entries[idx].viewpoint, 1);
    }

    #[test]
    fn malformed_edges_rejected() {
        let mk = |edges| {
            let vps = (0..2)
                .map(|i| Viewpoint {
                    id: i,
                    position: Vec3::new(i as f64, 0.0, 0.0),
                    views: blank_views(1),
                })
                .collect();
            EnvironmentGraph::new("x".into(), 0, Split::Seen, vps, edges)
        };
        assert!(mk(vec![(0, 0, 0.0)]).is_err());
        assert!(mk(vec![(0, 1, 1.5)]).is_err());
        assert!(mk(vec![(0, 1, 1.0)]).is_ok());
    }
}
