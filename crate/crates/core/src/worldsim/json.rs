//! Canonical world JSON: fixed field order and 17-significant-digit floats so
//! that writing, reading and writing again is byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{EnvironmentGraph, Split, Vec3, View, Viewpoint, WorldError, ELEVATIONS, HEADINGS};

fn float(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("string write");
}

fn floats(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        float(out, x);
    }
    out.push(']');
}

pub fn world_to_json(g: &EnvironmentGraph) -> String {
    let mut s = String::new();
    let split = match g.split {
        Split::Seen => "seen",
        Split::Unseen => "unseen",
    };
    s.push_str("{\"world_id\":");
    s.push_str(&serde_json::to_string(&g.world_id).expect("string"));
    write!(
        s,
        ",\"seed\":{},\"split\":\"{split}\",\"viewpoints\":[",
        g.seed
    )
    .expect("write");
    for (i, vp) in g.viewpoints().iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{{\"id\":{},\"position\":", vp.id).expect("write");
        floats(&mut s, &[vp.position.x, vp.position.y, vp.position.z]);
        s.push_str(",\"views\":[");
        for h in 0..HEADINGS {
            for e in 0..ELEVATIONS {
                let v = vp.view(h, e);
                if h + e > 0 {
                    s.push(',');
                }
                write!(s, "{{\"h\":{h},\"e\":{e},\"objects\":[").expect("write");
                for (k, o) in v.objects.iter().enumerate() {
                    if k > 0 {
                        s.push(',');
                    }
                    write!(s, "{o}").expect("write");
                }
                s.push_str("],\"feature\":");
                floats(&mut s, &v.feature);
                s.push('}');
            }
        }
        s.push_str("]}");
    }
    s.push_str("],\"edges\":[");
    for (i, &(a, b, d)) in g.edges().iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "[{a},{b},").expect("write");
        float(&mut s, d);
        s.push(']');
    }
    s.push_str("]}");
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldDoc {
    world_id: String,
    seed: u64,
    split: Split,
    viewpoints: Vec<ViewpointDoc>,
    edges: Vec<(usize, usize, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewpointDoc {
    id: usize,
    position: [f64; 3],
    views: Vec<ViewDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewDoc {
    h: usize,
    e: usize,
    objects: Vec<usize>,
    feature: Vec<f64>,
}

pub fn world_from_json(text: &str) -> Result<EnvironmentGraph, WorldError> {
    let doc: WorldDoc = serde_json::from_str(text)?;
    let mut viewpoints = Vec::with_capacity(doc.viewpoints.len());
    for vp in doc.viewpoints {
        let mut views: Vec<Option<View>> = vec![None; HEADINGS * ELEVATIONS];
        for v in vp.views {
            if v.h >= HEADINGS || v.e >= ELEVATIONS {
                return Err(WorldError::Malformed(format!(
                    "view index ({}, {}) out of range",
                    v.h, v.e
                )));
            }
            views[super::view_index(v.h, v.e)] = Some(View {
                objects: v.objects,
                feature: v.feature,
            });
        }
        let views = views
            .into_iter()
            .collect::<Option<Vec<View>>>()
            .ok_or_else(|| WorldError::Malformed(format!("viewpoint {} lacks views", vp.id)))?;
        let [x, y, z] = vp.position;
        viewpoints.push(Viewpoint {
            id: vp.id,
            position: Vec3::new(x, y, z),
            views,
        });
    }
    EnvironmentGraph::new(doc.world_id, doc.seed, doc.split, viewpoints, doc.edges)
}

pub fn write_world(g: &EnvironmentGraph, path: &Path) -> Result<(), WorldError> {
    fs::write(path, world_to_json(g)).map_err(|source| WorldError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_world(path: &Path) -> Result<EnvironmentGraph, WorldError> {
    let text = fs::read_to_string(path).map_err(|source| WorldError::Io {
        path: path.display().to_string(),
        source,
    })?;
    world_from_json(&text)
}
