//! Versioned JSON / JSONL file formats.
//!
//! Grids store `navigable` as a base64 bitmask (row-major, least significant
//! bit first) and `semantic` as base64 bytes, one label per cell.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ivln_core::environment::{GridWorld, NavGraph, Scene, SceneKind};
use ivln_core::harness::AgentAction;
use ivln_core::mapper::{EgocentricCrop, MapMode, SemanticOccMap};
use ivln_core::metrics::{EpisodeTrace, OracleKind, OracleSegment, TourTrace};
use ivln_core::tourgen::{Episode, Tour, TourStats};
use ivln_core::Point3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: unsupported format_version {found} (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u32 },
}

fn invalid(path: &Path, message: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| FormatError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn check_version(path: &Path, found: u32) -> Result<(), FormatError> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(FormatError::Version {
            path: path.to_path_buf(),
            found,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
}

pub fn pack_bits(bits: &[bool]) -> String {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    B64.encode(bytes)
}

pub fn unpack_bits(text: &str, n: usize) -> Option<Vec<bool>> {
    let bytes = B64.decode(text).ok()?;
    if bytes.len() != n.div_ceil(8) {
        return None;
    }
    Some((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

fn p3(a: [f64; 3]) -> Point3 {
    Point3::from(a)
}

// ---------------------------------------------------------------- scenes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub resolution: f64,
    pub origin: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub floor_z: f64,
    pub ceiling_z: f64,
    pub navigable: String,
    pub semantic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snap_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snap_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub format_version: u32,
    pub scene_id: String,
    /// `grid` or `graph`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphRecord>,
}

impl SceneFile {
    pub fn from_scene(scene: &Scene) -> Self {
        let (kind, grid, graph) = match &scene.kind {
            SceneKind::Grid(g) => (
                "grid",
                Some(GridRecord {
                    resolution: g.resolution,
                    origin: g.origin.to_array(),
                    width: g.width,
                    height: g.height,
                    floor_z: g.floor_z,
                    ceiling_z: g.ceiling_z,
                    navigable: pack_bits(g.navigable_mask()),
                    semantic: B64.encode(g.semantic_labels()),
                    snap_radius: Some(g.snap_radius),
                }),
                None,
            ),
            SceneKind::Graph(g) => (
                "graph",
                None,
                Some(GraphRecord {
                    nodes: (0..g.node_count())
                        .map(|i| NodeRecord {
                            id: g.id(i).to_string(),
                            position: g.position(i).to_array(),
                        })
                        .collect(),
                    edges: g.edges().iter().map(|&(a, b)| [g.id(a).to_string(), g.id(b).to_string()]).collect(),
                    snap_radius: Some(g.snap_radius),
                }),
            ),
        };
        Self {
            format_version: FORMAT_VERSION,
            scene_id: scene.scene_id.clone(),
            kind: kind.into(),
            grid,
            graph,
        }
    }

    pub fn into_scene(self, path: &Path) -> Result<Scene, FormatError> {
        check_version(path, self.format_version)?;
        let kind = match (self.kind.as_str(), self.grid, self.graph) {
            ("grid", Some(g), None) => {
                let n = g.width * g.height;
                let nav = unpack_bits(&g.navigable, n).ok_or_else(|| invalid(path, "navigable bitmask has the wrong size"))?;
                let sem = B64
                    .decode(&g.semantic)
                    .map_err(|e| invalid(path, format!("semantic layer: {e}")))?;
                let mut grid = GridWorld::new(g.resolution, p3(g.origin), g.width, g.height, nav, sem, g.floor_z, g.ceiling_z)
                    .map_err(|e| invalid(path, e.to_string()))?;
                if let Some(r) = g.snap_radius {
                    grid.snap_radius = r;
                }
                SceneKind::Grid(grid)
            }
            ("graph", None, Some(g)) => {
                let mut graph = NavGraph::new(
                    g.nodes.into_iter().map(|n| (n.id, p3(n.position))),
                    g.edges.into_iter().map(|[a, b]| (a, b)),
                )
                .map_err(|e| invalid(path, e.to_string()))?;
                if let Some(r) = g.snap_radius {
                    graph.snap_radius = r;
                }
                SceneKind::Graph(graph)
            }
            (k, _, _) => return Err(invalid(path, format!("scene kind `{k}` must carry exactly its own section"))),
        };
        Ok(Scene::new(self.scene_id, kind))
    }
}

pub fn read_scene(path: &Path) -> Result<Scene, FormatError> {
    read_json::<SceneFile>(path)?.into_scene(path)
}

pub fn write_scene(path: &Path, scene: &Scene) -> anyhow::Result<()> {
    write_json(path, &SceneFile::from_scene(scene))
}

/// Loads scene files; directories contribute every `*.json` inside them.
pub fn read_scenes(paths: &[PathBuf]) -> Result<BTreeMap<String, Scene>, FormatError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = fs::read_dir(p).map_err(|source| FormatError::Io { path: p.clone(), source })?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let mut out = BTreeMap::new();
    for f in files {
        let s = read_scene(&f)?;
        if out.contains_key(&s.scene_id) {
            return Err(invalid(&f, format!("duplicate scene id {}", s.scene_id)));
        }
        out.insert(s.scene_id.clone(), s);
    }
    Ok(out)
}

// -------------------------------------------------------------- episodes

/// One path with its instructions; expands to one episode per instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_id: Option<String>,
    pub path_id: String,
    pub scene_id: String,
    pub path: Vec<[f64; 3]>,
    pub heading: f64,
    pub instructions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodesFile {
    pub format_version: u32,
    pub episodes: Vec<EpisodeRecord>,
}

/// Expands records: `episode_id` is the record id (or path id) when there is
/// one instruction and `{id}_{k}` otherwise; `instruction_id` is
/// `{path_id}_{k}`.
pub fn expand_records(records: Vec<EpisodeRecord>, path: &Path) -> Result<Vec<Episode>, FormatError> {
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for r in records {
        if r.path.is_empty() {
            return Err(invalid(path, format!("path {} has no points", r.path_id)));
        }
        if r.instructions.is_empty() {
            return Err(invalid(path, format!("path {} has no instructions", r.path_id)));
        }
        if r.path.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid(path, format!("path {} has non-finite coordinates", r.path_id)));
        }
        let base = r.episode_id.clone().unwrap_or_else(|| r.path_id.clone());
        let n = r.instructions.len();
        let points: Vec<Point3> = r.path.iter().copied().map(p3).collect();
        for (k, text) in r.instructions.into_iter().enumerate() {
            let episode_id = if n == 1 { base.clone() } else { format!("{base}_{k}") };
            if !seen.insert(episode_id.clone()) {
                return Err(invalid(path, format!("duplicate episode id {episode_id}")));
            }
            out.push(Episode {
                episode_id,
                path_id: r.path_id.clone(),
                scene_id: r.scene_id.clone(),
                path: points.clone(),
                start_heading: r.heading,
                instruction_id: format!("{}_{k}", r.path_id),
                instruction: text,
            });
        }
    }
    Ok(out)
}

/// Groups expanded episodes back into per-path records.
pub fn collapse_episodes(episodes: &[Episode]) -> Vec<EpisodeRecord> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_path: BTreeMap<&str, Vec<&Episode>> = BTreeMap::new();
    for e in episodes {
        let slot = by_path.entry(&e.path_id).or_default();
        if slot.is_empty() {
            order.push(&e.path_id);
        }
        slot.push(e);
    }
    order
        .into_iter()
        .map(|pid| {
            let eps = &by_path[pid];
            let first = eps[0];
            let episode_id = (eps.len() == 1 && first.episode_id != first.path_id).then(|| first.episode_id.clone());
            EpisodeRecord {
                episode_id,
                path_id: first.path_id.clone(),
                scene_id: first.scene_id.clone(),
                path: first.path.iter().map(|p| p.to_array()).collect(),
                heading: first.start_heading,
                instructions: eps.iter().map(|e| e.instruction.clone()).collect(),
            }
        })
        .collect()
}

pub fn read_episodes(path: &Path) -> Result<Vec<Episode>, FormatError> {
    let file: EpisodesFile = read_json(path)?;
    check_version(path, file.format_version)?;
    expand_records(file.episodes, path)
}

pub fn write_episodes(path: &Path, episodes: &[Episode]) -> anyhow::Result<()> {
    write_json(
        path,
        &EpisodesFile {
            format_version: FORMAT_VERSION,
            episodes: collapse_episodes(episodes),
        },
    )
}

pub fn episode_index(episodes: Vec<Episode>) -> BTreeMap<String, Episode> {
    episodes.into_iter().map(|e| (e.episode_id.clone(), e)).collect()
}

// ----------------------------------------------------------------- tours

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourRecord {
    pub tour_id: String,
    pub scene_id: String,
    pub episodes: Vec<String>,
}

/// Dataset-level tour statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub scenes: usize,
    pub episodes: usize,
    pub tours: usize,
    pub tours_per_scene: f64,
    pub length_mean: f64,
    pub length_min: usize,
    pub length_max: usize,
    pub length_stddev: f64,
}

impl From<&TourStats> for StatsRecord {
    fn from(s: &TourStats) -> Self {
        Self {
            scenes: s.scenes,
            episodes: s.episodes,
            tours: s.tours,
            tours_per_scene: s.tours_per_scene,
            length_mean: s.length_mean,
            length_min: s.length_min,
            length_max: s.length_max,
            length_stddev: s.length_stddev,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToursFile {
    pub format_version: u32,
    #[serde(default)]
    pub config: serde_json::Value,
    pub tours: Vec<TourRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<StatsRecord>,
}

pub fn read_tours(path: &Path) -> Result<Vec<Tour>, FormatError> {
    let file: ToursFile = read_json(path)?;
    check_version(path, file.format_version)?;
    Ok(file
        .tours
        .into_iter()
        .map(|t| Tour {
            tour_id: t.tour_id,
            scene_id: t.scene_id,
            episodes: t.episodes,
        })
        .collect())
}

pub fn tours_file(tours: &[Tour], stats: Option<&TourStats>, config: serde_json::Value) -> ToursFile {
    ToursFile {
        format_version: FORMAT_VERSION,
        config,
        tours: tours
            .iter()
            .map(|t| TourRecord {
                tour_id: t.tour_id.clone(),
                scene_id: t.scene_id.clone(),
                episodes: t.episodes.clone(),
            })
            .collect(),
        stats: stats.map(StatsRecord::from),
    }
}

// ---------------------------------------------------------------- traces

pub fn action_to_wire(a: &AgentAction) -> String {
    match a {
        AgentAction::GotoNode(id) => format!("goto:{id}"),
        other => other.name().to_string(),
    }
}

pub fn action_from_wire(s: &str) -> Option<AgentAction> {
    Some(match s {
        "forward" => AgentAction::Forward,
        "left" => AgentAction::Left,
        "right" => AgentAction::Right,
        "stop" => AgentAction::Stop,
        _ => AgentAction::GotoNode(s.strip_prefix("goto:")?.to_string()),
    })
}

pub const PHASE_AGENT: &str = "agent";
pub const PHASE_END: &str = "tour_end";

/// One line of a trace file: an agent phase, an oracle segment, or the
/// end-of-tour status line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub format_version: u32,
    pub tour_id: String,
    /// `agent`, `oracle_goal`, `oracle_transit` or `tour_end`.
    pub phase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_called: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_position: Option<[f64; 3]>,
    /// `complete` or `partial` on the end line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TraceRecord {
    fn blank(tour_id: &str, phase: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            tour_id: tour_id.into(),
            phase: phase.into(),
            episode_id: None,
            episode_index: None,
            path: Vec::new(),
            actions: Vec::new(),
            steps: None,
            stop_called: None,
            final_position: None,
            status: None,
            error: None,
        }
    }
}

/// Trace lines in rollout order: each agent phase followed by its oracle
/// segments, then an end line.
pub fn trace_records(trace: &TourTrace, error: Option<&str>) -> Vec<TraceRecord> {
    let mut out = Vec::new();
    for (i, ep) in trace.episode_traces.iter().enumerate() {
        let mut r = TraceRecord::blank(&trace.tour_id, PHASE_AGENT);
        r.episode_id = Some(ep.episode_id.clone());
        r.episode_index = Some(i);
        r.path = ep.agent_path.iter().map(|p| p.to_array()).collect();
        r.actions = ep.actions.iter().map(action_to_wire).collect();
        r.steps = Some(ep.actions.len());
        r.stop_called = Some(ep.stop_called);
        r.final_position = Some(ep.final_position.to_array());
        out.push(r);
        for seg in trace.oracle_segments.iter().filter(|s| s.episode_id == ep.episode_id) {
            let mut r = TraceRecord::blank(&trace.tour_id, seg.kind.as_str());
            r.episode_id = Some(seg.episode_id.clone());
            r.episode_index = Some(i);
            r.path = seg.path.iter().map(|p| p.to_array()).collect();
            r.actions = seg.actions.iter().map(action_to_wire).collect();
            r.steps = Some(seg.actions.len());
            out.push(r);
        }
    }
    let mut end = TraceRecord::blank(&trace.tour_id, PHASE_END);
    end.status = Some(if error.is_some() { "partial" } else { "complete" }.into());
    end.error = error.map(str::to_string);
    out.push(end);
    out
}

pub fn write_trace_lines<W: Write>(w: &mut W, trace: &TourTrace, error: Option<&str>) -> anyhow::Result<()> {
    for r in trace_records(trace, error) {
        serde_json::to_writer(&mut *w, &r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// A tour read back from a trace file. Reference paths are filled in later
/// from the episodes file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrace {
    pub trace: TourTrace,
    pub complete: bool,
    pub error: Option<String>,
}

pub fn read_traces(path: &Path) -> Result<Vec<LoadedTrace>, FormatError> {
    let file = fs::File::open(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut order: Vec<String> = Vec::new();
    let mut tours: BTreeMap<String, LoadedTrace> = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TraceRecord = serde_json::from_str(&line).map_err(|source| FormatError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        check_version(path, r.format_version)?;
        let at = |msg: &str| invalid(path, format!("line {}: {msg}", n + 1));
        let entry = tours.entry(r.tour_id.clone()).or_insert_with(|| {
            order.push(r.tour_id.clone());
            LoadedTrace {
                trace: TourTrace::new(r.tour_id.clone()),
                complete: false,
                error: None,
            }
        });
        let actions = r
            .actions
            .iter()
            .map(|a| action_from_wire(a).ok_or_else(|| at(&format!("unknown action {a}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let points: Vec<Point3> = r.path.iter().copied().map(p3).collect();
        let episode_id = || r.episode_id.clone().ok_or_else(|| at("missing episode_id"));
        match r.phase.as_str() {
            PHASE_AGENT => {
                let final_position = r.final_position.map(p3).or_else(|| points.last().copied()).ok_or_else(|| at("empty agent path"))?;
                entry.trace.episode_traces.push(EpisodeTrace {
                    episode_id: episode_id()?,
                    agent_path: points,
                    reference_path: Vec::new(),
                    final_position,
                    stop_called: r.stop_called.unwrap_or(false),
                    actions,
                });
            }
            "oracle_goal" | "oracle_transit" => {
                let kind = if r.phase == "oracle_goal" { OracleKind::GoalCorrection } else { OracleKind::Transit };
                entry.trace.oracle_segments.push(OracleSegment {
                    kind,
                    episode_id: episode_id()?,
                    path: points,
                    actions,
                });
            }
            PHASE_END => {
                entry.complete = r.status.as_deref() == Some("complete");
                entry.error = r.error;
            }
            other => return Err(at(&format!("unknown phase {other}"))),
        }
    }
    Ok(order.into_iter().map(|id| tours.remove(&id).expect("recorded")).collect())
}

// ------------------------------------------------------------------ maps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub format_version: u32,
    pub resolution: f64,
    pub origin: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub mode: String,
    pub occupancy: String,
    pub observed: String,
    pub semantic: String,
}

pub fn map_mode_name(m: MapMode) -> &'static str {
    match m {
        MapMode::Episodic => "episodic",
        MapMode::Iterative => "iterative",
        MapMode::Known => "known",
    }
}

pub fn parse_map_mode(s: &str) -> Option<Option<MapMode>> {
    Some(match s {
        "episodic" => Some(MapMode::Episodic),
        "iterative" => Some(MapMode::Iterative),
        "known" => Some(MapMode::Known),
        "none" => None,
        _ => return None,
    })
}

impl MapSnapshot {
    pub fn from_map(m: &SemanticOccMap) -> Self {
        let occ: Vec<bool> = m.occupancy().iter().map(|&o| o == 1).collect();
        Self {
            format_version: FORMAT_VERSION,
            resolution: m.resolution,
            origin: m.origin.to_array(),
            width: m.width,
            height: m.height,
            mode: map_mode_name(m.mode).into(),
            occupancy: pack_bits(&occ),
            observed: pack_bits(m.observed()),
            semantic: B64.encode(m.semantic()),
        }
    }

    pub fn into_map(self, path: &Path) -> Result<SemanticOccMap, FormatError> {
        check_version(path, self.format_version)?;
        let n = self.width * self.height;
        let mode = parse_map_mode(&self.mode)
            .flatten()
            .ok_or_else(|| invalid(path, format!("unknown map mode {}", self.mode)))?;
        let occ = unpack_bits(&self.occupancy, n).ok_or_else(|| invalid(path, "occupancy layer has the wrong size"))?;
        let obs = unpack_bits(&self.observed, n).ok_or_else(|| invalid(path, "observed layer has the wrong size"))?;
        let sem = B64.decode(&self.semantic).map_err(|e| invalid(path, format!("semantic layer: {e}")))?;
        SemanticOccMap::from_layers(
            self.resolution,
            p3(self.origin),
            self.width,
            self.height,
            mode,
            occ.into_iter().map(u8::from).collect(),
            sem,
            obs,
        )
        .map_err(|e| invalid(path, e.to_string()))
    }
}

pub fn read_map(path: &Path) -> Result<SemanticOccMap, FormatError> {
    read_json::<MapSnapshot>(path)?.into_map(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropFile {
    pub format_version: u32,
    pub shape: [usize; 3],
    pub pose: [f64; 4],
    pub data: Vec<f32>,
}

impl CropFile {
    pub fn new(crop: &EgocentricCrop, pose: [f64; 4]) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            shape: [crop.data.len() / (crop.size * crop.size), crop.size, crop.size],
            pose,
            data: crop.data.clone(),
        }
    }
}
