//! Reader for R2R-style splits over Matterport connectivity graphs.
//!
//! A split file is a JSON array of `{scan, path_id, path: [viewpoint ids],
//! heading, instructions: [..]}`. Each scan needs
//! `<dir>/<scan>_connectivity.json`: an array of `{image_id, pose: [16 floats,
//! row-major 4x4], included, unobstructed: [bool per node]}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ivln_core::environment::{NavGraph, Scene, SceneKind};
use ivln_core::tourgen::Episode;
use ivln_core::Point3;
use serde::Deserialize;

use crate::formats::FormatError;

#[derive(Debug, Clone, Deserialize)]
pub struct R2rRecord {
    pub scan: String,
    pub path_id: serde_json::Value,
    pub path: Vec<String>,
    pub heading: f64,
    pub instructions: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct ConnectivityNode {
    image_id: String,
    pose: Vec<f64>,
    included: bool,
    unobstructed: Vec<bool>,
}

fn parse_err(path: &Path, source: serde_json::Error) -> FormatError {
    FormatError::Parse {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn invalid(path: &Path, message: String) -> FormatError {
    FormatError::Invalid {
        path: path.to_path_buf(),
        message,
    }
}

pub fn read_connectivity(path: &Path, scan: &str) -> Result<Scene, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let nodes: Vec<ConnectivityNode> = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
    let mut points = Vec::new();
    let mut edges = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        if !n.included {
            continue;
        }
        if n.pose.len() != 16 {
            return Err(invalid(path, format!("node {} pose must have 16 entries", n.image_id)));
        }
        points.push((n.image_id.clone(), Point3::new(n.pose[3], n.pose[7], n.pose[11])));
        for (j, &open) in n.unobstructed.iter().enumerate() {
            if open && j > i && nodes.get(j).is_some_and(|m| m.included) {
                edges.push((n.image_id.clone(), nodes[j].image_id.clone()));
            }
        }
    }
    let graph = NavGraph::new(points, edges).map_err(|e| invalid(path, e.to_string()))?;
    Ok(Scene::new(scan, SceneKind::Graph(graph)))
}

fn path_id_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Loads a split and the graphs of every scan it mentions.
pub fn load_split(split: &Path, connectivity_dir: &Path) -> Result<(BTreeMap<String, Scene>, Vec<Episode>), FormatError> {
    let text = fs::read_to_string(split).map_err(|e| io_err(split, e))?;
    let records: Vec<R2rRecord> = serde_json::from_str(&text).map_err(|e| parse_err(split, e))?;
    let scans: BTreeSet<&str> = records.iter().map(|r| r.scan.as_str()).collect();
    let mut scenes = BTreeMap::new();
    for scan in scans {
        let p: PathBuf = connectivity_dir.join(format!("{scan}_connectivity.json"));
        scenes.insert(scan.to_string(), read_connectivity(&p, scan)?);
    }
    let mut episodes = Vec::new();
    for r in &records {
        let graph = scenes[&r.scan].graph().expect("connectivity scenes are graphs");
        let path = r
            .path
            .iter()
            .map(|v| {
                graph
                    .index_of(v)
                    .map(|i| graph.position(i))
                    .ok_or_else(|| invalid(split, format!("viewpoint {v} missing from scan {}", r.scan)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if path.is_empty() {
            return Err(invalid(split, "empty path".into()));
        }
        let pid = path_id_text(&r.path_id);
        for (k, text) in r.instructions.iter().enumerate() {
            episodes.push(Episode {
                episode_id: format!("{pid}_{k}"),
                path_id: pid.clone(),
                scene_id: r.scan.clone(),
                path: path.clone(),
                start_heading: r.heading,
                instruction_id: format!("{pid}_{k}"),
                instruction: text.clone(),
            });
        }
    }
    Ok((scenes, episodes))
}
