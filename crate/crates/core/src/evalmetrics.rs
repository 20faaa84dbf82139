//! Trajectory metrics (NE, SR, SPL, DTW/nDTW/sDTW, CLS), aggregation,
//! report emission and the instruction-landmark overlap histogram.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::landmark::{recognizable_landmarks, Detector, LandmarkError};
use crate::worldsim::{
    bearing_deg, elevation_bin, elevation_deg, heading_bin, EnvironmentGraph, View, ViewpointId,
    WorldError,
};

/// A predicted and a reference path in the same world.
#[derive(Clone, Debug)]
pub struct TrajectoryPair<'a> {
    pub graph: &'a EnvironmentGraph,
    pub predicted: Vec<ViewpointId>,
    pub reference: Vec<ViewpointId>,
    pub success_radius: f64,
}

impl<'a> TrajectoryPair<'a> {
    pub fn new(
        graph: &'a EnvironmentGraph,
        predicted: Vec<ViewpointId>,
        reference: Vec<ViewpointId>,
        success_radius: f64,
    ) -> Result<Self, WorldError> {
        if !(success_radius > 0.0 && success_radius.is_finite()) {
            return Err(WorldError::InvalidParameter(format!(
                "success radius must be positive, got {success_radius}"
            )));
        }
        for (name, path) in [("predicted", &predicted), ("reference", &reference)] {
            if path.is_empty() {
                return Err(WorldError::Malformed(format!("{name} path is empty")));
            }
            for &v in path.iter() {
                graph.viewpoint(v)?;
            }
            for w in path.windows(2) {
                if !graph.are_adjacent(w[0], w[1]) {
                    return Err(WorldError::Malformed(format!(
                        "{name} path steps from {} to non-adjacent {}",
                        w[0], w[1]
                    )));
                }
            }
        }
        Ok(Self {
            graph,
            predicted,
            reference,
            success_radius,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
    pub cls: f64,
    pub ndtw: f64,
    pub sdtw: f64,
    pub dtw: f64,
    pub path_length: f64,
}

/// Geodesic distance from the predicted end to the reference end.
pub fn navigation_error(pair: &TrajectoryPair) -> Result<f64, WorldError> {
    let p = *pair.predicted.last().expect("non-empty");
    let r = *pair.reference.last().expect("non-empty");
    pair.graph.distance(p, r)
}

/// Success (0/1) and success weighted by normalized inverse path length.
pub fn success_rate_spl(pair: &TrajectoryPair) -> Result<(f64, f64), WorldError> {
    let ne = navigation_error(pair)?;
    let sr = if ne <= pair.success_radius { 1.0 } else { 0.0 };
    let goal = *pair.reference.last().expect("non-empty");
    let l = pair.graph.distance(pair.predicted[0], goal)?;
    let p = pair.graph.path_length(&pair.predicted)?;
    let denom = p.max(l);
    let spl = if denom == 0.0 { sr } else { sr * l / denom };
    Ok((sr, spl))
}

/// Minimum over monotone alignments of the summed geodesic distances.
pub fn dtw(
    graph: &EnvironmentGraph,
    predicted: &[ViewpointId],
    reference: &[ViewpointId],
) -> Result<f64, WorldError> {
    let (n, m) = (predicted.len(), reference.len());
    let mut table = vec![vec![f64::INFINITY; m + 1]; n + 1];
    table[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let cost = graph.distance(predicted[i - 1], reference[j - 1])?;
            let best = table[i - 1][j]
                .min(table[i][j - 1])
                .min(table[i - 1][j - 1]);
            table[i][j] = cost + best;
        }
    }
    Ok(table[n][m])
}

/// (dtw, ndtw = exp(−dtw / (|R|·d_th)), sdtw = sr · ndtw).
pub fn dtw_ndtw_sdtw(pair: &TrajectoryPair) -> Result<(f64, f64, f64), WorldError> {
    let d = dtw(pair.graph, &pair.predicted, &pair.reference)?;
    let ndtw = (-d / (pair.reference.len() as f64 * pair.success_radius)).exp();
    let (sr, _) = success_rate_spl(pair)?;
    Ok((d, ndtw, sr * ndtw))
}

/// Coverage weighted by length score.
pub fn cls(pair: &TrajectoryPair) -> Result<f64, WorldError> {
    let g = pair.graph;
    let mut coverage = 0.0;
    for &r in &pair.reference {
        let mut nearest = f64::INFINITY;
        for &p in &pair.predicted {
            nearest = nearest.min(g.distance(r, p)?);
        }
        coverage += (-nearest / pair.success_radius).exp();
    }
    let pc = coverage / pair.reference.len() as f64;
    let epl = pc * g.path_length(&pair.reference)?;
    let pl = g.path_length(&pair.predicted)?;
    let denom = epl + (epl - pl).abs();
    let ls = if denom == 0.0 { 1.0 } else { epl / denom };
    Ok(pc * ls)
}

pub fn evaluate(pair: &TrajectoryPair) -> Result<EvalResult, WorldError> {
    let ne = navigation_error(pair)?;
    let (sr, spl) = success_rate_spl(pair)?;
    let (dtw, ndtw, sdtw) = dtw_ndtw_sdtw(pair)?;
    Ok(EvalResult {
        ne,
        sr,
        spl,
        cls: cls(pair)?,
        ndtw,
        sdtw,
        dtw,
        path_length: pair.graph.path_length(&pair.predicted)?,
    })
}

/// Means over episodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub episodes: usize,
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
    pub cls: f64,
    pub ndtw: f64,
    pub sdtw: f64,
}

pub fn aggregate(results: &[EvalResult]) -> Aggregate {
    if results.is_empty() {
        return Aggregate::default();
    }
    let n = results.len() as f64;
    let mean = |f: fn(&EvalResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    Aggregate {
        episodes: results.len(),
        ne: mean(|r| r.ne),
        sr: mean(|r| r.sr),
        spl: mean(|r| r.spl),
        cls: mean(|r| r.cls),
        ndtw: mean(|r| r.ndtw),
        sdtw: mean(|r| r.sdtw),
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One CSV row per episode.
pub fn results_csv(rows: &[(String, EvalResult)]) -> String {
    let mut out = String::from("episode,ne,sr,spl,cls,ndtw,sdtw\n");
    for (id, r) in rows {
        writeln!(
            out,
            "{id},{:.6},{:.0},{:.6},{:.6},{:.6},{:.6}",
            r.ne, r.sr, r.spl, r.cls, r.ndtw, r.sdtw
        )
        .expect("string write");
    }
    out
}

/// A labelled row of the aggregate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub split: String,
    pub metrics: Aggregate,
}

/// Tab-separated aggregate table.
pub fn report_table(rows: &[ReportRow]) -> String {
    let mut out = String::from("model\tsplit\tepisodes\tNE↓\tSR↑\tSPL↑\tCLS↑\tsDTW↑\tnDTW↑\n");
    for r in rows {
        let m = &r.metrics;
        writeln!(
            out,
            "{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
            r.model, r.split, m.episodes, m.ne, m.sr, m.spl, m.cls, m.sdtw, m.ndtw
        )
        .expect("string write");
    }
    out
}

/// Views the agent passed through: at every move the view toward the next
/// viewpoint, and at the end the downward view in the final heading.
pub fn path_views<'a>(
    graph: &'a EnvironmentGraph,
    path: &[ViewpointId],
    initial_heading: f64,
) -> Result<Vec<&'a View>, WorldError> {
    let mut views = Vec::with_capacity(path.len());
    let mut heading = initial_heading;
    for w in path.windows(2) {
        let (a, b) = (graph.viewpoint(w[0])?, graph.viewpoint(w[1])?);
        let hi = heading_bin(bearing_deg(a.position, b.position));
        let ei = elevation_bin(elevation_deg(a.position, b.position));
        views.push(a.view(hi, ei));
        heading = graph.heading_after_move(w[0], w[1], heading);
    }
    let last = graph.viewpoint(
        *path
            .last()
            .ok_or_else(|| WorldError::Malformed("empty path".into()))?,
    )?;
    views.push(last.view(heading_bin(heading.rem_euclid(360.0)), 0));
    Ok(views)
}

/// One episode's input to the overlap analysis.
#[derive(Clone, Debug)]
pub struct OverlapEpisode<'a> {
    pub graph: &'a EnvironmentGraph,
    pub instruction_landmarks: Vec<usize>,
    pub path: Vec<ViewpointId>,
    pub initial_heading: f64,
    pub success: bool,
}

/// Ten equal-width overlap bins; 100% falls in the last one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapHistogram {
    pub all: Vec<usize>,
    pub successful: Vec<usize>,
    pub excluded: usize,
}

impl OverlapHistogram {
    pub const BINS: usize = 10;

    pub fn bin_of(fraction: f64) -> usize {
        ((fraction * Self::BINS as f64).floor() as usize).min(Self::BINS - 1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("overlap_bin,all,successful\n");
        for b in 0..Self::BINS {
            let lo = b * 100 / Self::BINS;
            let hi = (b + 1) * 100 / Self::BINS;
            writeln!(out, "{lo}-{hi}%,{},{}", self.all[b], self.successful[b])
                .expect("string write");
        }
        out
    }
}

/// Overlap between instruction landmarks and the landmarks recognizable
/// along the executed path, binned over all and over successful episodes.
pub fn overlap_report(
    episodes: &[OverlapEpisode],
    detector: &dyn Detector,
    k: usize,
    temperature: f64,
) -> Result<OverlapHistogram, LandmarkError> {
    let mut hist = OverlapHistogram {
        all: vec![0; OverlapHistogram::BINS],
        successful: vec![0; OverlapHistogram::BINS],
        excluded: 0,
    };
    for ep in episodes {
        let wanted: BTreeSet<usize> = ep.instruction_landmarks.iter().copied().collect();
        if wanted.is_empty() {
            hist.excluded += 1;
            continue;
        }
        let views = path_views(ep.graph, &ep.path, ep.initial_heading)
            .map_err(|e| LandmarkError::InvalidParameter(e.to_string()))?;
        let mut seen = BTreeSet::new();
        for v in views {
            seen.extend(recognizable_landmarks(
                detector,
                &v.feature,
                k,
                temperature,
            )?);
        }
        let fraction = wanted.intersection(&seen).count() as f64 / wanted.len() as f64;
        let b = OverlapHistogram::bin_of(fraction);
        hist.all[b] += 1;
        if ep.success {
            hist.successful[b] += 1;
        }
    }
    Ok(hist)
}
