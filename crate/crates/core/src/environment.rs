//! Navigable worlds and geodesic queries.
//!
//! A [`Scene`] is either a [`NavGraph`] (discrete nodes joined by straight edges)
//! or a [`GridWorld`] (an occupancy grid standing in for a navigation mesh).
//! Both reduce to the same thing for queries: a set of locations indexed by
//! `usize`, a neighbor relation with nonnegative costs, and a snap rule mapping
//! arbitrary points onto locations. Distances between disconnected locations are
//! `f64::INFINITY`.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::geom::Point3;

pub const DEFAULT_GRAPH_SNAP_RADIUS: f64 = 0.5;
pub const DEFAULT_GRID_SNAP_RADIUS: f64 = 1.0;
pub const DEFAULT_GRID_RESOLUTION: f64 = 0.25;
/// Semantic labels are `0` (void) or `1..=NUM_SEMANTIC_CLASSES`.
pub const NUM_SEMANTIC_CLASSES: u8 = 13;

const EDGE_WEIGHT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct NavGraph {
    ids: Vec<String>,
    positions: Vec<Point3>,
    index: BTreeMap<String, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    edges: Vec<(usize, usize)>,
    pub snap_radius: f64,
}

impl NavGraph {
    /// Builds a graph; node indices follow the lexicographic order of ids.
    ///
    /// Edges are undirected and weighted by the Euclidean distance of their
    /// endpoints. Duplicate edges are collapsed.
    pub fn new<I, E>(nodes: I, edges: E) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Point3)>,
        E: IntoIterator<Item = (String, String)>,
    {
        let mut sorted = BTreeMap::new();
        for (id, p) in nodes {
            if !p.is_finite() {
                return Err(Error::InvalidInput(alloc::format!("node {id} has non-finite position")));
            }
            if sorted.insert(id.clone(), p).is_some() {
                return Err(Error::InvalidInput(alloc::format!("duplicate node id {id}")));
            }
        }
        let ids: Vec<String> = sorted.keys().cloned().collect();
        let positions: Vec<Point3> = sorted.values().copied().collect();
        let index: BTreeMap<String, usize> =
            ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();

        let mut adjacency = vec![Vec::new(); ids.len()];
        let mut edge_list = Vec::new();
        for (a, b) in edges {
            let ia = *index
                .get(&a)
                .ok_or_else(|| Error::InvalidInput(alloc::format!("edge references unknown node {a}")))?;
            let ib = *index
                .get(&b)
                .ok_or_else(|| Error::InvalidInput(alloc::format!("edge references unknown node {b}")))?;
            if ia == ib {
                continue;
            }
            let key = (ia.min(ib), ia.max(ib));
            if edge_list.contains(&key) {
                continue;
            }
            edge_list.push(key);
            let w = positions[ia].distance(&positions[ib]);
            adjacency[ia].push((ib, w));
            adjacency[ib].push((ia, w));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(j, _)| j);
        }
        edge_list.sort_unstable();
        Ok(Self {
            ids,
            positions,
            index,
            adjacency,
            edges: edge_list,
            snap_radius: DEFAULT_GRAPH_SNAP_RADIUS,
        })
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn position(&self, i: usize) -> Point3 {
        self.positions[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Neighbors of node `i` in ascending index order, with edge weights.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    /// Undirected edges as `(low, high)` index pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].iter().any(|&(j, _)| j == b)
    }

    /// Nearest node within the snap radius; ties go to the lower index.
    pub fn snap(&self, p: &Point3) -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, q) in self.positions.iter().enumerate() {
            let d = p.distance(q);
            if d <= self.snap_radius && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i).ok_or(Error::SnapFailure {
            point: *p,
            radius: self.snap_radius,
            context: None,
        })
    }

    /// Checks the stored edge weights against endpoint distances.
    pub fn validate(&self) -> Result<()> {
        for (i, adj) in self.adjacency.iter().enumerate() {
            for &(j, w) in adj {
                let d = self.positions[i].distance(&self.positions[j]);
                if (d - w).abs() > EDGE_WEIGHT_TOLERANCE {
                    return Err(Error::InvalidInput(alloc::format!(
                        "edge {}-{} weight {w} differs from length {d}",
                        self.ids[i],
                        self.ids[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Row-major occupancy grid. Cell `(col, row)` has its center at
/// `origin + (col * resolution, row * resolution, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub resolution: f64,
    pub origin: Point3,
    pub width: usize,
    pub height: usize,
    navigable: Vec<bool>,
    semantic: Vec<u8>,
    pub floor_z: f64,
    pub ceiling_z: f64,
    pub snap_radius: f64,
}

/// The eight lattice directions, counter-clockwise from +x.
pub const DIRECTIONS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

impl GridWorld {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        resolution: f64,
        origin: Point3,
        width: usize,
        height: usize,
        navigable: Vec<bool>,
        semantic: Vec<u8>,
        floor_z: f64,
        ceiling_z: f64,
    ) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidInput("resolution must be positive".to_string()));
        }
        if !(floor_z < ceiling_z) {
            return Err(Error::InvalidInput("floor_z must be below ceiling_z".to_string()));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidInput("origin must be finite".to_string()));
        }
        let n = width * height;
        if navigable.len() != n || semantic.len() != n {
            return Err(Error::InvalidInput(alloc::format!(
                "expected {n} cells, got {} navigable and {} semantic",
                navigable.len(),
                semantic.len()
            )));
        }
        if let Some(bad) = semantic.iter().find(|&&l| l > NUM_SEMANTIC_CLASSES) {
            return Err(Error::InvalidInput(alloc::format!("semantic label {bad} out of range")));
        }
        Ok(Self {
            resolution,
            origin,
            width,
            height,
            navigable,
            semantic,
            floor_z,
            ceiling_z,
            snap_radius: DEFAULT_GRID_SNAP_RADIUS,
        })
    }

    /// An all-blocked grid with void semantics.
    pub fn blank(resolution: f64, origin: Point3, width: usize, height: usize, floor_z: f64, ceiling_z: f64) -> Result<Self> {
        let n = width * height;
        Self::new(resolution, origin, width, height, vec![false; n], vec![0; n], floor_z, ceiling_z)
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn col_row(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    pub fn cell_center(&self, idx: usize) -> Point3 {
        let (c, r) = self.col_row(idx);
        Point3::new(
            self.origin.x + c as f64 * self.resolution,
            self.origin.y + r as f64 * self.resolution,
            self.origin.z,
        )
    }

    /// Cell containing `p` in the horizontal plane, if inside the grid.
    pub fn cell_of(&self, p: &Point3) -> Option<usize> {
        let c = libm::round((p.x - self.origin.x) / self.resolution);
        let r = libm::round((p.y - self.origin.y) / self.resolution);
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some(self.index(c as usize, r as usize))
    }

    pub fn is_navigable(&self, idx: usize) -> bool {
        self.navigable[idx]
    }

    pub fn semantic(&self, idx: usize) -> u8 {
        self.semantic[idx]
    }

    pub fn navigable_mask(&self) -> &[bool] {
        &self.navigable
    }

    pub fn semantic_labels(&self) -> &[u8] {
        &self.semantic
    }

    pub fn set_cell(&mut self, col: usize, row: usize, navigable: bool, label: u8) {
        let i = self.index(col, row);
        self.navigable[i] = navigable;
        self.semantic[i] = label.min(NUM_SEMANTIC_CLASSES);
    }

    /// Cell one lattice step from `idx` in direction `dir` (index into [`DIRECTIONS`]).
    pub fn offset(&self, idx: usize, dir: usize) -> Option<usize> {
        let (c, r) = self.col_row(idx);
        let (dc, dr) = DIRECTIONS[dir];
        let nc = c as i64 + dc;
        let nr = r as i64 + dr;
        if nc < 0 || nr < 0 || nc >= self.width as i64 || nr >= self.height as i64 {
            return None;
        }
        Some(self.index(nc as usize, nr as usize))
    }

    /// Whether a single lattice step from `idx` along `dir` is legal: the
    /// target is navigable and, for diagonals, neither flanking cell is blocked.
    pub fn can_step(&self, idx: usize, dir: usize) -> Option<usize> {
        let target = self.offset(idx, dir)?;
        if !self.navigable[target] {
            return None;
        }
        let (dc, dr) = DIRECTIONS[dir];
        if dc != 0 && dr != 0 {
            let (c, r) = self.col_row(idx);
            let side_a = self.index((c as i64 + dc) as usize, r);
            let side_b = self.index(c, (r as i64 + dr) as usize);
            if !self.navigable[side_a] || !self.navigable[side_b] {
                return None;
            }
        }
        Some(target)
    }

    /// Direction index that moves `from` to the adjacent cell `to`.
    pub fn direction_between(&self, from: usize, to: usize) -> Option<usize> {
        let (fc, fr) = self.col_row(from);
        let (tc, tr) = self.col_row(to);
        let d = (tc as i64 - fc as i64, tr as i64 - fr as i64);
        DIRECTIONS.iter().position(|&x| x == d)
    }

    fn push_neighbors(&self, idx: usize, out: &mut Vec<(usize, f64)>) {
        let (c, r) = self.col_row(idx);
        // row-major order of the 3x3 block gives ascending indices
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let nc = c as i64 + dc;
                let nr = r as i64 + dr;
                if nc < 0 || nr < 0 || nc >= self.width as i64 || nr >= self.height as i64 {
                    continue;
                }
                let j = self.index(nc as usize, nr as usize);
                if !self.navigable[j] {
                    continue;
                }
                let diagonal = dc != 0 && dr != 0;
                if diagonal
                    && (!self.navigable[self.index(nc as usize, r)] || !self.navigable[self.index(c, nr as usize)])
                {
                    continue;
                }
                let cost = if diagonal { self.resolution * SQRT_2 } else { self.resolution };
                out.push((j, cost));
            }
        }
    }

    /// Nearest navigable cell center within the snap radius (planar distance).
    pub fn snap(&self, p: &Point3) -> Result<usize> {
        let fail = Error::SnapFailure {
            point: *p,
            radius: self.snap_radius,
            context: None,
        };
        if !p.is_finite() {
            return Err(fail);
        }
        let reach = libm::ceil(self.snap_radius / self.resolution) as i64 + 1;
        let cc = libm::round((p.x - self.origin.x) / self.resolution) as i64;
        let cr = libm::round((p.y - self.origin.y) / self.resolution) as i64;
        let mut best: Option<(usize, f64)> = None;
        for r in (cr - reach).max(0)..=(cr + reach).min(self.height as i64 - 1) {
            for c in (cc - reach).max(0)..=(cc + reach).min(self.width as i64 - 1) {
                let i = self.index(c as usize, r as usize);
                if !self.navigable[i] {
                    continue;
                }
                let d = self.cell_center(i).planar_distance(p);
                if d <= self.snap_radius && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
        }
        best.map(|(i, _)| i).ok_or(fail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneKind {
    Graph(NavGraph),
    Grid(GridWorld),
}

/// An immutable navigable world.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub kind: SceneKind,
}

/// Single-source shortest-path result over a scene's locations.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub source: usize,
    pub dist: Vec<f64>,
    pred: Vec<usize>,
}

impl DistanceField {
    /// Locations from the source to `target`, or `None` when unreachable.
    pub fn path_to(&self, target: usize) -> Option<Vec<usize>> {
        if !self.dist[target].is_finite() {
            return None;
        }
        let mut path = vec![target];
        let mut cur = target;
        while cur != self.source {
            cur = self.pred[cur];
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, node)
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Scene {
    pub fn new(scene_id: impl Into<String>, kind: SceneKind) -> Self {
        Self {
            scene_id: scene_id.into(),
            kind,
        }
    }

    pub fn graph(&self) -> Option<&NavGraph> {
        match &self.kind {
            SceneKind::Graph(g) => Some(g),
            SceneKind::Grid(_) => None,
        }
    }

    pub fn grid(&self) -> Option<&GridWorld> {
        match &self.kind {
            SceneKind::Grid(g) => Some(g),
            SceneKind::Graph(_) => None,
        }
    }

    pub fn location_count(&self) -> usize {
        match &self.kind {
            SceneKind::Graph(g) => g.node_count(),
            SceneKind::Grid(g) => g.cell_count(),
        }
    }

    pub fn snap(&self, p: &Point3) -> Result<usize> {
        match &self.kind {
            SceneKind::Graph(g) => g.snap(p),
            SceneKind::Grid(g) => g.snap(p),
        }
    }

    /// World position of a location (node position or cell center).
    pub fn location(&self, idx: usize) -> Point3 {
        match &self.kind {
            SceneKind::Graph(g) => g.position(idx),
            SceneKind::Grid(g) => g.cell_center(idx),
        }
    }

    fn neighbors_into(&self, idx: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        match &self.kind {
            SceneKind::Graph(g) => out.extend_from_slice(g.neighbors(idx)),
            SceneKind::Grid(g) => g.push_neighbors(idx, out),
        }
    }

    /// Dijkstra from `source`. Stops early once `target` is settled.
    ///
    /// Ties between equal tentative distances settle the lower index first and
    /// predecessors only change on strict improvement, so paths are
    /// reproducible.
    pub fn distance_field_until(&self, source: usize, target: Option<usize>) -> DistanceField {
        let n = self.location_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        let mut nbrs = Vec::with_capacity(8);
        dist[source] = 0.0;
        pred[source] = source;
        heap.push(Frontier { dist: 0.0, node: source });
        while let Some(Frontier { dist: d, node }) = heap.pop() {
            if done[node] {
                continue;
            }
            done[node] = true;
            if Some(node) == target {
                break;
            }
            self.neighbors_into(node, &mut nbrs);
            for &(j, w) in &nbrs {
                let nd = d + w;
                if nd < dist[j] {
                    dist[j] = nd;
                    pred[j] = node;
                    heap.push(Frontier { dist: nd, node: j });
                }
            }
        }
        DistanceField { source, dist, pred }
    }

    pub fn distance_field(&self, source: usize) -> DistanceField {
        self.distance_field_until(source, None)
    }

    /// Shortest navigable distance between two points, `INFINITY` when
    /// disconnected.
    pub fn geodesic_distance(&self, a: &Point3, b: &Point3) -> Result<f64> {
        let ia = self.snap(a)?;
        let ib = self.snap(b)?;
        Ok(self.location_distance(ia, ib))
    }

    pub fn location_distance(&self, ia: usize, ib: usize) -> f64 {
        if ia == ib {
            return 0.0;
        }
        self.distance_field_until(ia, Some(ib)).dist[ib]
    }

    /// Location indices of a shortest route between two locations.
    pub fn shortest_route(&self, ia: usize, ib: usize) -> Result<Vec<usize>> {
        if ia == ib {
            return Ok(vec![ia]);
        }
        self.distance_field_until(ia, Some(ib))
            .path_to(ib)
            .ok_or_else(|| Error::Disconnected {
                from: self.location(ia),
                to: self.location(ib),
                context: None,
            })
    }

    /// Shortest route between two points as world positions, starting at
    /// snapped `a` and ending at snapped `b`.
    pub fn shortest_path(&self, a: &Point3, b: &Point3) -> Result<Vec<Point3>> {
        let ia = self.snap(a)?;
        let ib = self.snap(b)?;
        let route = self.shortest_route(ia, ib).map_err(|e| match e {
            Error::Disconnected { context, .. } => Error::Disconnected {
                from: *a,
                to: *b,
                context,
            },
            other => other,
        })?;
        Ok(route.into_iter().map(|i| self.location(i)).collect())
    }

    /// Entry `(i, j)` is the geodesic distance from the end of path `i` to the
    /// start of path `j`. `endpoints` holds `(start, end)` per path.
    pub fn connectivity_matrix(&self, endpoints: &[(Point3, Point3)]) -> Result<Vec<Vec<f64>>> {
        if endpoints.is_empty() {
            return Err(Error::InvalidInput("connectivity matrix needs at least one path".to_string()));
        }
        let snap_at = |p: &Point3, i: usize, what: &str| {
            self.snap(p)
                .map_err(|e| e.with_context(alloc::format!("{what} of path {i}")))
        };
        let mut starts = Vec::with_capacity(endpoints.len());
        let mut ends = Vec::with_capacity(endpoints.len());
        for (i, (s, e)) in endpoints.iter().enumerate() {
            starts.push(snap_at(s, i, "start")?);
            ends.push(snap_at(e, i, "end")?);
        }
        let mut fields: BTreeMap<usize, DistanceField> = BTreeMap::new();
        let mut matrix = Vec::with_capacity(endpoints.len());
        for &e in &ends {
            let field = fields.entry(e).or_insert_with(|| self.distance_field(e));
            matrix.push(starts.iter().map(|&s| field.dist[s]).collect());
        }
        Ok(matrix)
    }
}

/// Total length of a polyline.
pub fn path_length(points: &[Point3]) -> f64 {
    points.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn corridor(len: usize, res: f64) -> GridWorld {
        // one navigable row surrounded by walls
        let (w, h) = (len + 2, 3);
        let mut g = GridWorld::blank(res, Point3::default(), w, h, 0.0, 2.5).unwrap();
        for c in 1..=len {
            g.set_cell(c, 1, true, 0);
        }
        g
    }

    fn grid_scene(g: GridWorld) -> Scene {
        Scene::new("s", SceneKind::Grid(g))
    }

    fn from_ascii(rows: &[&str], res: f64) -> GridWorld {
        let h = rows.len();
        let w = rows[0].len();
        let mut g = GridWorld::blank(res, Point3::default(), w, h, 0.0, 2.5).unwrap();
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                if ch == '.' {
                    g.set_cell(c, r, true, 0);
                }
            }
        }
        g
    }

    /// Independent oracle: Bellman-Ford relaxation over the 8-connected grid.
    fn brute_force(g: &GridWorld, src: usize) -> Vec<f64> {
        let n = g.cell_count();
        let mut d = vec![f64::INFINITY; n];
        d[src] = 0.0;
        loop {
            let mut changed = false;
            for i in 0..n {
                if !d[i].is_finite() {
                    continue;
                }
                for dir in 0..8 {
                    if let Some(j) = g.can_step(i, dir) {
                        let w = if dir % 2 == 1 { g.resolution * SQRT_2 } else { g.resolution };
                        if d[i] + w < d[j] - 1e-12 {
                            d[j] = d[i] + w;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                return d;
            }
        }
    }

    #[test]
    fn identity_distance_is_zero() {
        let s = grid_scene(corridor(10, 0.25));
        let p = Point3::new(0.5, 0.25, 0.0);
        assert_eq!(s.geodesic_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(s.shortest_path(&p, &p).unwrap(), vec![p]);
    }

    #[test]
    fn corridor_end_to_end() {
        let g = corridor(10, 0.25);
        let a = g.cell_center(g.index(1, 1));
        let b = g.cell_center(g.index(10, 1));
        let oracle = brute_force(&g, g.index(1, 1))[g.index(10, 1)];
        assert!((oracle - 2.25).abs() < 1e-12);
        let s = grid_scene(g);
        assert!((s.geodesic_distance(&a, &b).unwrap() - 2.25).abs() < 1e-12);
    }

    #[test]
    fn walled_rooms_are_disconnected() {
        let g = from_ascii(&["#########", "#...#...#", "#...#...#", "#########"], 0.25);
        let a = g.cell_center(g.index(1, 1));
        let b = g.cell_center(g.index(7, 2));
        let s = grid_scene(g);
        assert_eq!(s.geodesic_distance(&a, &b).unwrap(), f64::INFINITY);
        assert_eq!(s.geodesic_distance(&b, &a).unwrap(), f64::INFINITY);
        assert!(matches!(s.shortest_path(&a, &b), Err(Error::Disconnected { .. })));
    }

    #[test]
    fn snap_failure_outside_radius() {
        let s = grid_scene(corridor(3, 0.25));
        let far = Point3::new(10.0, 10.0, 0.0);
        assert!(matches!(s.geodesic_distance(&far, &far), Err(Error::SnapFailure { .. })));
    }

    fn abc() -> Scene {
        let g = NavGraph::new(
            [
                ("A".to_string(), Point3::new(0.0, 0.0, 0.0)),
                ("B".to_string(), Point3::new(1.0, 0.0, 0.0)),
                ("C".to_string(), Point3::new(1.0, 2.0, 0.0)),
            ],
            [("A".to_string(), "B".to_string()), ("B".to_string(), "C".to_string())],
        )
        .unwrap();
        Scene::new("g", SceneKind::Graph(g))
    }

    #[test]
    fn path_graph_route() {
        let s = abc();
        let g = s.graph().unwrap();
        let a = g.position(0);
        let c = g.position(2);
        // the only simple path A..C is A-B-C
        assert_eq!(s.shortest_path(&a, &c).unwrap(), vec![a, g.position(1), c]);
        assert!((s.geodesic_distance(&a, &c).unwrap() - 3.0).abs() < 1e-12);
        g.validate().unwrap();
    }

    #[test]
    fn graph_snap_radius() {
        let s = abc();
        assert_eq!(s.snap(&Point3::new(0.4, 0.0, 0.0)).unwrap(), 0);
        assert!(s.snap(&Point3::new(0.0, 0.6, 0.0)).is_err());
    }

    #[test]
    fn unknown_edge_node_is_rejected() {
        let r = NavGraph::new(
            [("A".to_string(), Point3::default())],
            [("A".to_string(), "Z".to_string())],
        );
        assert!(r.is_err());
    }

    #[test]
    fn l_corridor_staircase() {
        let g = from_ascii(
            &[
                "########",
                "#......#",
                "#......#",
                "#####..#",
                "#####..#",
                "#####..#",
                "########",
            ],
            0.25,
        );
        let a = g.index(1, 1);
        let b = g.index(5, 5);
        let oracle = brute_force(&g, a)[b];
        let s = grid_scene(g.clone());
        let path = s.shortest_path(&g.cell_center(a), &g.cell_center(b)).unwrap();
        assert_eq!(path.first(), Some(&g.cell_center(a)));
        assert_eq!(path.last(), Some(&g.cell_center(b)));
        for w in path.windows(2) {
            let i = g.cell_of(&w[0]).unwrap();
            let j = g.cell_of(&w[1]).unwrap();
            assert!(g.direction_between(i, j).is_some());
        }
        let d = s.geodesic_distance(&g.cell_center(a), &g.cell_center(b)).unwrap();
        assert!((d - oracle).abs() < 1e-9);
        assert!((path_length(&path) - d).abs() <= 1e-6 * d);
    }

    #[test]
    fn diagonal_does_not_cut_corners() {
        let g = from_ascii(&["####", "#.##", "##.#", "####"], 0.25);
        let s = grid_scene(g.clone());
        let d = s
            .geodesic_distance(&g.cell_center(g.index(1, 1)), &g.cell_center(g.index(2, 2)))
            .unwrap();
        assert_eq!(d, f64::INFINITY);
    }

    #[test]
    fn connectivity_matrix_cases() {
        let s = grid_scene(corridor(10, 0.25));
        let g = s.grid().unwrap();
        let p = |c| g.cell_center(g.index(c, 1));
        assert_eq!(s.connectivity_matrix(&[(p(2), p(2))]).unwrap(), vec![vec![0.0]]);

        // three paths on a line, compared with per-pair brute force
        let paths = [(p(1), p(3)), (p(4), p(6)), (p(7), p(10))];
        let m = s.connectivity_matrix(&paths).unwrap();
        for (i, pi) in paths.iter().enumerate() {
            let field = brute_force(g, g.cell_of(&pi.1).unwrap());
            for (j, pj) in paths.iter().enumerate() {
                assert!((m[i][j] - field[g.cell_of(&pj.0).unwrap()]).abs() < 1e-9);
            }
        }

        let rooms = grid_scene(from_ascii(&["#########", "#...#...#", "#########"], 0.25));
        let r = rooms.grid().unwrap();
        let q = |c| r.cell_center(r.index(c, 1));
        let m = rooms.connectivity_matrix(&[(q(1), q(3)), (q(5), q(7))]).unwrap();
        assert!(m[0][1].is_infinite() && m[1][0].is_infinite());
        assert!(m[0][0].is_finite() && m[1][1].is_finite());

        let err = rooms
            .connectivity_matrix(&[(q(1), q(3)), (Point3::new(50.0, 0.0, 0.0), q(7))])
            .unwrap_err();
        match err {
            Error::SnapFailure { context: Some(c), .. } => assert!(c.contains("path 1")),
            e => panic!("unexpected {e:?}"),
        }
    }

    fn random_grid(w: usize, h: usize, bits: &[bool]) -> GridWorld {
        let mut g = GridWorld::blank(0.25, Point3::default(), w, h, 0.0, 2.5).unwrap();
        for r in 0..h {
            for c in 0..w {
                if bits[r * w + c] {
                    g.set_cell(c, r, true, 0);
                }
            }
        }
        g
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn grid_distance_properties(bits in proptest::collection::vec(proptest::bool::weighted(0.7), 64), picks in proptest::collection::vec(0usize..64, 3)) {
            let g = random_grid(8, 8, &bits);
            let nav: Vec<usize> = (0..64).filter(|&i| g.is_navigable(i)).collect();
            prop_assume!(nav.len() >= 3);
            let [a, b, c] = [nav[picks[0] % nav.len()], nav[picks[1] % nav.len()], nav[picks[2] % nav.len()]];
            let s = grid_scene(g.clone());
            let pa = g.cell_center(a);
            let pb = g.cell_center(b);
            let pc = g.cell_center(c);
            let dab = s.geodesic_distance(&pa, &pb).unwrap();
            let dba = s.geodesic_distance(&pb, &pa).unwrap();
            prop_assert_eq!(dab.is_finite(), dba.is_finite());
            let oracle = brute_force(&g, a)[b];
            prop_assert!((dab.is_infinite() && oracle.is_infinite()) || (dab - oracle).abs() < 1e-9);
            if dab.is_finite() {
                prop_assert!(dab + 1e-12 >= pa.planar_distance(&pb));
                let path = s.shortest_path(&pa, &pb).unwrap();
                prop_assert!((path_length(&path) - dab).abs() <= 1e-6 * dab.max(1.0));
            }
            let dac = s.geodesic_distance(&pa, &pc).unwrap();
            let dbc = s.geodesic_distance(&pb, &pc).unwrap();
            if dab.is_finite() && dbc.is_finite() {
                prop_assert!(dac <= dab + dbc + 2.0 * g.snap_radius);
            }
        }
    }
}
