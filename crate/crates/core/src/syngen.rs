//! Seeded synthetic floorplans and episode sets.
//!
//! Rooms sit on a rectangular lattice and share one-cell walls. Doors are
//! carved along a random spanning tree of the room lattice; each door is then
//! sealed with the configured probability, which splits the plan into
//! disconnected regions. Walls carry label 1 and each room's floor carries one
//! of the labels 2..=13, so rendered depth frames see labeled walls only.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::environment::{GridWorld, NavGraph, Scene, SceneKind, NUM_SEMANTIC_CLASSES};
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::tourgen::Episode;

pub const WALL_LABEL: u8 = 1;

/// Landmark words used by the instruction templates, indexed by label.
pub const LANDMARKS: [&str; 14] = [
    "void", "wall", "hallway rug", "chair", "table", "sofa", "bed", "cabinet", "plant", "sink", "toilet",
    "picture", "shelf", "counter",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FloorplanSpec {
    pub rooms: usize,
    /// Room interior side lengths, meters.
    pub room_size: (f64, f64),
    pub door_width: f64,
    pub sealed_door_probability: f64,
    /// Floor label per room, cycled; empty means 2, 3, ..., 13, 2, ...
    pub room_labels: Vec<u8>,
    pub resolution: f64,
    pub floor_z: f64,
    pub ceiling_z: f64,
    /// Spacing of graph waypoints inside a room.
    pub waypoint_spacing: f64,
    pub seed: u64,
}

impl Default for FloorplanSpec {
    fn default() -> Self {
        Self {
            rooms: 6,
            room_size: (4.0, 7.0),
            door_width: 1.0,
            sealed_door_probability: 0.0,
            room_labels: Vec::new(),
            resolution: 0.25,
            floor_z: 0.0,
            ceiling_z: 2.5,
            waypoint_spacing: 2.0,
            seed: 0,
        }
    }
}

/// A room's interior cell rectangle, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoomRect {
    pub col0: usize,
    pub row0: usize,
    pub col1: usize,
    pub row1: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Door {
    pub rooms: (usize, usize),
    /// Wall cells opened (empty when sealed).
    pub cells: Vec<usize>,
    pub sealed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene_id: String,
    pub grid: GridWorld,
    pub graph: NavGraph,
    pub rooms: Vec<RoomRect>,
    pub doors: Vec<Door>,
}

impl GeneratedScene {
    pub fn grid_scene(&self) -> Scene {
        Scene::new(self.scene_id.clone(), SceneKind::Grid(self.grid.clone()))
    }

    pub fn graph_scene(&self) -> Scene {
        Scene::new(self.scene_id.clone(), SceneKind::Graph(self.graph.clone()))
    }
}

fn infeasible(msg: impl Into<String>) -> Error {
    Error::SpecInfeasible(msg.into())
}

fn validate(spec: &FloorplanSpec) -> Result<()> {
    let (lo, hi) = spec.room_size;
    if spec.rooms == 0 {
        return Err(infeasible("at least one room is required"));
    }
    if !(spec.resolution > 0.0) {
        return Err(infeasible("resolution must be positive"));
    }
    if !(spec.floor_z < spec.ceiling_z) {
        return Err(infeasible("floor must lie below ceiling"));
    }
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(infeasible(format!("room size range {lo}..{hi} is empty")));
    }
    if spec.door_width < 2.0 * spec.resolution {
        return Err(infeasible("door width must span at least two cells"));
    }
    if spec.door_width > lo {
        return Err(infeasible(format!("door width {} exceeds the smallest room side {lo}", spec.door_width)));
    }
    if !(0.0..=1.0).contains(&spec.sealed_door_probability) {
        return Err(infeasible("sealed_door_probability must lie in [0, 1]"));
    }
    if spec.room_labels.iter().any(|&l| l < 2 || l > NUM_SEMANTIC_CLASSES) {
        return Err(infeasible("room labels must lie in 2..=13"));
    }
    if !(spec.waypoint_spacing > 0.0) {
        return Err(infeasible("waypoint spacing must be positive"));
    }
    if spec.rooms > 4096 {
        return Err(infeasible(format!("{} rooms cannot be placed", spec.rooms)));
    }
    Ok(())
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

pub fn generate_scene(scene_id: &str, spec: &FloorplanSpec) -> Result<GeneratedScene> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let res = spec.resolution;
    let lattice_cols = libm::ceil(libm::sqrt(spec.rooms as f64)) as usize;
    let lattice_rows = spec.rooms.div_ceil(lattice_cols);
    let cells_of = |m: f64| libm::round(m / res).max(1.0) as usize;
    let side = |rng: &mut ChaCha8Rng| {
        let m = if spec.room_size.0 == spec.room_size.1 {
            spec.room_size.0
        } else {
            rng.gen_range(spec.room_size.0..=spec.room_size.1)
        };
        cells_of(m)
    };
    let col_w: Vec<usize> = (0..lattice_cols).map(|_| side(&mut rng)).collect();
    let row_h: Vec<usize> = (0..lattice_rows).map(|_| side(&mut rng)).collect();
    let width = col_w.iter().sum::<usize>() + lattice_cols + 1;
    let height = row_h.iter().sum::<usize>() + lattice_rows + 1;
    if width * height > 16_000_000 {
        return Err(infeasible("floorplan exceeds the grid size limit"));
    }

    let mut grid = GridWorld::blank(res, Point3::new(0.0, 0.0, spec.floor_z), width, height, spec.floor_z, spec.ceiling_z)?;
    for r in 0..height {
        for c in 0..width {
            grid.set_cell(c, r, false, WALL_LABEL);
        }
    }
    let label_for = |k: usize| -> u8 {
        if spec.room_labels.is_empty() {
            2 + (k % 12) as u8
        } else {
            spec.room_labels[k % spec.room_labels.len()]
        }
    };
    let mut rooms = Vec::with_capacity(spec.rooms);
    let mut slot = BTreeMap::new();
    for k in 0..spec.rooms {
        let (lc, lr) = (k % lattice_cols, k / lattice_cols);
        let col0 = 1 + col_w[..lc].iter().sum::<usize>() + lc;
        let row0 = 1 + row_h[..lr].iter().sum::<usize>() + lr;
        let rect = RoomRect {
            col0,
            row0,
            col1: col0 + col_w[lc] - 1,
            row1: row0 + row_h[lr] - 1,
        };
        for r in rect.row0..=rect.row1 {
            for c in rect.col0..=rect.col1 {
                grid.set_cell(c, r, true, label_for(k));
            }
        }
        rooms.push(rect);
        slot.insert((lc, lr), k);
    }

    // candidate doors between lattice neighbors, in a seeded random order
    let mut pairs = Vec::new();
    for (&(lc, lr), &k) in &slot {
        if let Some(&j) = slot.get(&(lc + 1, lr)) {
            pairs.push((k, j));
        }
        if let Some(&j) = slot.get(&(lc, lr + 1)) {
            pairs.push((k, j));
        }
    }
    pairs.shuffle(&mut rng);
    let mut parent: Vec<usize> = (0..spec.rooms).collect();
    let mut tree = Vec::new();
    for (a, b) in pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            tree.push((a.min(b), a.max(b)));
        }
    }
    tree.sort_unstable();

    let door_cells = cells_of(spec.door_width);
    let mut doors = Vec::with_capacity(tree.len());
    for (a, b) in tree {
        let (ra, rb) = (rooms[a], rooms[b]);
        let sealed = rng.gen::<f64>() < spec.sealed_door_probability;
        let mut cells = Vec::new();
        if ra.row0 == rb.row0 {
            // side by side: wall column between them
            let wall_c = ra.col1 + 1;
            let span = (ra.row1 - ra.row0 + 1).min(rb.row1 - rb.row0 + 1);
            let start = ra.row0 + rng.gen_range(0..=span - door_cells.min(span));
            for r in start..start + door_cells.min(span) {
                cells.push(grid.index(wall_c, r));
            }
        } else {
            let wall_r = ra.row1 + 1;
            let span = (ra.col1 - ra.col0 + 1).min(rb.col1 - rb.col0 + 1);
            let start = ra.col0 + rng.gen_range(0..=span - door_cells.min(span));
            for c in start..start + door_cells.min(span) {
                cells.push(grid.index(c, wall_r));
            }
        }
        if sealed {
            cells.clear();
        }
        for &i in &cells {
            let (c, r) = grid.col_row(i);
            grid.set_cell(c, r, true, label_for(a));
        }
        doors.push(Door {
            rooms: (a, b),
            cells,
            sealed,
        });
    }

    let graph = derive_graph(&grid, &rooms, &doors, spec)?;
    Ok(GeneratedScene {
        scene_id: scene_id.to_string(),
        grid,
        graph,
        rooms,
        doors,
    })
}

/// Waypoints on a per-room lattice plus one node per open door.
fn derive_graph(grid: &GridWorld, rooms: &[RoomRect], doors: &[Door], spec: &FloorplanSpec) -> Result<NavGraph> {
    let mut nodes: Vec<(String, Point3)> = Vec::new();
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut room_nodes: Vec<Vec<(String, Point3)>> = Vec::with_capacity(rooms.len());
    let step = libm::round(spec.waypoint_spacing / grid.resolution).max(1.0) as usize;
    let z = spec.floor_z;
    for (k, rect) in rooms.iter().enumerate() {
        let axis = |lo: usize, hi: usize| -> Vec<usize> {
            let n = hi - lo + 1;
            let count = (n / step).max(1);
            // evenly spaced, centered in the span
            (0..count).map(|i| lo + (2 * i + 1) * n / (2 * count)).collect()
        };
        let cols = axis(rect.col0, rect.col1);
        let rows = axis(rect.row0, rect.row1);
        let mut mine = Vec::new();
        for (j, &r) in rows.iter().enumerate() {
            for (i, &c) in cols.iter().enumerate() {
                let id = format!("r{k}_{i}_{j}");
                let mut p = grid.cell_center(grid.index(c, r));
                p.z = z;
                mine.push((id.clone(), p));
                nodes.push((id.clone(), p));
                if i > 0 {
                    edges.push((format!("r{k}_{}_{j}", i - 1), id.clone()));
                }
                if j > 0 {
                    edges.push((format!("r{k}_{i}_{}", j - 1), id));
                }
            }
        }
        room_nodes.push(mine);
    }
    for door in doors.iter().filter(|d| !d.sealed) {
        let mid = door.cells[door.cells.len() / 2];
        let mut p = grid.cell_center(mid);
        p.z = z;
        let id = format!("d{}_{}", door.rooms.0, door.rooms.1);
        nodes.push((id.clone(), p));
        for room in [door.rooms.0, door.rooms.1] {
            let nearest = room_nodes[room]
                .iter()
                .min_by(|a, b| a.1.distance(&p).total_cmp(&b.1.distance(&p)))
                .expect("rooms have at least one waypoint");
            edges.push((id.clone(), nearest.0.clone()));
        }
    }
    NavGraph::new(nodes, edges)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathLength {
    /// Geodesic length range in meters (grid scenes).
    Meters(f64, f64),
    /// Node count range (graph scenes).
    Nodes(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    /// Number of distinct paths.
    pub paths: usize,
    pub length: PathLength,
    pub instructions_per_path: usize,
    pub seed: u64,
    pub max_attempts: usize,
}

impl EpisodeSpec {
    /// Defaults suited to the scene kind: 5–15 m or 4–6 nodes.
    pub fn for_scene(scene: &Scene, paths: usize) -> Self {
        let length = match scene.kind {
            SceneKind::Grid(_) => PathLength::Meters(5.0, 15.0),
            SceneKind::Graph(_) => PathLength::Nodes(4, 6),
        };
        Self {
            paths,
            length,
            instructions_per_path: 1,
            seed: 0,
            max_attempts: 10_000,
        }
    }
}

fn landmark(scene: &Scene, p: &Point3) -> &'static str {
    match &scene.kind {
        SceneKind::Grid(g) => g
            .cell_of(p)
            .map_or("room", |i| LANDMARKS[g.semantic(i) as usize]),
        SceneKind::Graph(_) => "room",
    }
}

fn instruction_text(scene: &Scene, path: &[Point3], variant: usize) -> String {
    let from = landmark(scene, &path[0]);
    let to = landmark(scene, &path[path.len() - 1]);
    let via = landmark(scene, &path[path.len() / 2]);
    let waypoints = path.len().saturating_sub(1);
    match variant % 3 {
        0 => format!("Start by the {from}, walk past the {via} and stop at the {to}."),
        1 => format!("Leave the {from} area and head toward the {to}; it is {waypoints} steps away."),
        _ => format!("Go from the {from} through the {via} and wait near the {to}."),
    }
}

/// Samples reachable start/goal pairs whose shortest path length falls in the
/// requested range. Episodes are returned grouped by path, `n` per path.
pub fn generate_episodes(scene: &Scene, spec: &EpisodeSpec) -> Result<Vec<Episode>> {
    if spec.paths == 0 || spec.instructions_per_path == 0 {
        return Err(Error::InvalidInput("episode and instruction counts must be at least 1".into()));
    }
    let in_range = |len_m: f64, nodes: usize| match spec.length {
        PathLength::Meters(lo, hi) => len_m >= lo && len_m <= hi,
        PathLength::Nodes(lo, hi) => nodes >= lo && nodes <= hi,
    };
    let candidates: Vec<usize> = match &scene.kind {
        SceneKind::Grid(g) => (0..g.cell_count()).filter(|&i| g.is_navigable(i)).collect(),
        SceneKind::Graph(g) => (0..g.node_count()).collect(),
    };
    if candidates.is_empty() {
        return Err(Error::SamplingExhausted {
            attempts: 0,
            found: 0,
            requested: spec.paths,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.paths * spec.instructions_per_path);
    let mut attempts = 0;
    let mut found = 0;
    while found < spec.paths {
        if attempts >= spec.max_attempts {
            return Err(Error::SamplingExhausted {
                attempts,
                found,
                requested: spec.paths,
            });
        }
        attempts += 1;
        let start = candidates[rng.gen_range(0..candidates.len())];
        let field = scene.distance_field(start);
        // goals whose route qualifies; node counts need the route itself
        let goals: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&t| t != start && field.dist[t].is_finite())
            .filter(|&t| match spec.length {
                PathLength::Meters(..) => in_range(field.dist[t], 0),
                PathLength::Nodes(..) => field.path_to(t).is_some_and(|p| in_range(0.0, p.len())),
            })
            .collect();
        if goals.is_empty() {
            continue;
        }
        let goal = goals[rng.gen_range(0..goals.len())];
        let route = field.path_to(goal).expect("goal is reachable");
        let path: Vec<Point3> = route.iter().map(|&i| scene.location(i)).collect();
        let heading_step = rng.gen_range(0..24u32);
        let path_id = format!("{}_p{found:04}", scene.scene_id);
        for k in 0..spec.instructions_per_path {
            let episode_id = if spec.instructions_per_path == 1 {
                path_id.clone()
            } else {
                format!("{path_id}_{k}")
            };
            out.push(Episode {
                episode_id,
                path_id: path_id.clone(),
                scene_id: scene.scene_id.clone(),
                path: path.clone(),
                start_heading: heading_step as f64 * core::f64::consts::TAU / 24.0,
                instruction_id: format!("{path_id}_{k}"),
                instruction: instruction_text(scene, &path, k),
            });
        }
        found += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::path_length;
    use alloc::vec;
    use crate::tourgen::partition_paths;

    fn spec(rooms: usize, sealed: f64, seed: u64) -> FloorplanSpec {
        FloorplanSpec {
            rooms,
            sealed_door_probability: sealed,
            seed,
            ..FloorplanSpec::default()
        }
    }

    /// Flood fill over 8-connected legal steps.
    fn components(g: &GridWorld) -> usize {
        let mut seen = vec![false; g.cell_count()];
        let mut count = 0;
        for s in 0..g.cell_count() {
            if !g.is_navigable(s) || seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(i) = stack.pop() {
                for d in 0..8 {
                    if let Some(j) = g.can_step(i, d) {
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn one_room_is_open() {
        let g = generate_scene("one", &spec(1, 0.0, 3)).unwrap();
        assert_eq!(components(&g.grid), 1);
        assert!(g.doors.is_empty());
        assert!(g.graph.validate().is_ok());
    }

    #[test]
    fn fully_sealed_pair_is_split() {
        let g = generate_scene("two", &spec(2, 1.0, 3)).unwrap();
        assert_eq!(components(&g.grid), 2);
        assert!(g.doors.iter().all(|d| d.sealed));
    }

    #[test]
    fn open_plan_is_connected() {
        for seed in 0..5 {
            let g = generate_scene("six", &spec(6, 0.0, seed)).unwrap();
            assert_eq!(components(&g.grid), 1);
            assert_eq!(g.doors.len(), 5);
            // graph is connected too
            let s = g.graph_scene();
            let f = s.distance_field(0);
            assert!(f.dist.iter().all(|d| d.is_finite()), "seed {seed}");
        }
    }

    #[test]
    fn graph_edges_stay_in_free_space() {
        let g = generate_scene("six", &spec(6, 0.3, 11)).unwrap();
        for &(a, b) in g.graph.edges() {
            let (pa, pb) = (g.graph.position(a), g.graph.position(b));
            for t in 0..=20 {
                let f = t as f64 / 20.0;
                let p = Point3::new(pa.x + f * (pb.x - pa.x), pa.y + f * (pb.y - pa.y), 0.0);
                assert!(g.grid.is_navigable(g.grid.cell_of(&p).unwrap()));
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_scene("x", &spec(5, 0.4, 9)).unwrap();
        let b = generate_scene("x", &spec(5, 0.4, 9)).unwrap();
        assert_eq!(a, b);
        let s = a.grid_scene();
        let es = EpisodeSpec {
            seed: 4,
            ..EpisodeSpec::for_scene(&s, 10)
        };
        assert_eq!(generate_episodes(&s, &es).unwrap(), generate_episodes(&s, &es).unwrap());
    }

    #[test]
    fn infeasible_specs() {
        assert!(matches!(generate_scene("x", &spec(0, 0.0, 0)), Err(Error::SpecInfeasible(_))));
        let narrow = FloorplanSpec {
            door_width: 0.25,
            ..FloorplanSpec::default()
        };
        assert!(matches!(generate_scene("x", &narrow), Err(Error::SpecInfeasible(_))));
        let tiny = FloorplanSpec {
            room_size: (0.5, 0.5),
            ..FloorplanSpec::default()
        };
        assert!(matches!(generate_scene("x", &tiny), Err(Error::SpecInfeasible(_))));
    }

    #[test]
    fn single_episode_in_one_room() {
        let g = generate_scene("one", &spec(1, 0.0, 1)).unwrap();
        let s = g.grid_scene();
        let eps = generate_episodes(&s, &EpisodeSpec::for_scene(&s, 1)).unwrap();
        assert_eq!(eps.len(), 1);
        assert!(s.geodesic_distance(&eps[0].start(), &eps[0].goal()).unwrap().is_finite());
    }

    #[test]
    fn instruction_variants_per_path() {
        let g = generate_scene("six", &spec(6, 0.0, 2)).unwrap();
        let s = g.grid_scene();
        let es = EpisodeSpec {
            instructions_per_path: 3,
            ..EpisodeSpec::for_scene(&s, 7)
        };
        let eps = generate_episodes(&s, &es).unwrap();
        assert_eq!(eps.len(), 21);
        let mut per_path: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in &eps {
            per_path.entry(&e.path_id).or_default().push(&e.instruction_id);
        }
        assert_eq!(per_path.len(), 7);
        assert!(per_path.values().all(|v| v.len() == 3));
    }

    #[test]
    fn lengths_respect_range() {
        let g = generate_scene("six", &spec(6, 0.2, 5)).unwrap();
        let s = g.grid_scene();
        let es = EpisodeSpec {
            seed: 8,
            ..EpisodeSpec::for_scene(&s, 100)
        };
        for e in generate_episodes(&s, &es).unwrap() {
            let len = path_length(&e.path);
            assert!((5.0 - 1e-9..=15.0 + 1e-9).contains(&len), "{len}");
            assert!((len - s.geodesic_distance(&e.start(), &e.goal()).unwrap()).abs() < 1e-6);
        }
        let gs = g.graph_scene();
        let es = EpisodeSpec {
            seed: 8,
            ..EpisodeSpec::for_scene(&gs, 100)
        };
        for e in generate_episodes(&gs, &es).unwrap() {
            assert!((4..=6).contains(&e.path.len()));
        }
    }

    #[test]
    fn impossible_lengths_exhaust() {
        let g = generate_scene("one", &spec(1, 0.0, 1)).unwrap();
        let s = g.grid_scene();
        let es = EpisodeSpec {
            length: PathLength::Meters(500.0, 600.0),
            max_attempts: 20,
            ..EpisodeSpec::for_scene(&s, 2)
        };
        assert!(matches!(generate_episodes(&s, &es), Err(Error::SamplingExhausted { attempts: 20, .. })));
    }

    #[test]
    fn sealed_plans_partition() {
        let g = generate_scene("two", &spec(2, 1.0, 6)).unwrap();
        let s = g.grid_scene();
        let es = EpisodeSpec {
            seed: 1,
            length: PathLength::Meters(1.0, 4.0),
            ..EpisodeSpec::for_scene(&s, 12)
        };
        let eps = generate_episodes(&s, &es).unwrap();
        let rooms_hit: alloc::collections::BTreeSet<usize> = eps
            .iter()
            .map(|e| {
                let i = g.grid.cell_of(&e.start()).unwrap();
                let (c, r) = g.grid.col_row(i);
                g.rooms.iter().position(|q| (q.col0..=q.col1).contains(&c) && (q.row0..=q.row1).contains(&r)).unwrap()
            })
            .collect();
        if rooms_hit.len() == 2 {
            assert!(partition_paths(&eps, &s).unwrap().len() >= 2);
        }
    }
}
