//! Turning an episode set into tours.
//!
//! The pipeline per scene is: collect the unique paths, split them into groups
//! whose members can reach each other ([`partition_paths`]), order each group to
//! minimize the oracle travel between consecutive paths ([`order_paths`], an
//! open-path ATSP), then duplicate the ordering once per instruction
//! ([`expand_instruction_tours`]).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::environment::Scene;
use crate::error::{Error, Result};
use crate::geom::Point3;

/// Largest instance [`held_karp_exact`] accepts.
pub const HELD_KARP_MAX_NODES: usize = 15;

// Moves must beat the incumbent by more than this to be applied.
const IMPROVEMENT_EPS: f64 = 1e-9;

/// One instruction paired with its reference path.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: String,
    pub path_id: String,
    pub scene_id: String,
    pub path: Vec<Point3>,
    pub start_heading: f64,
    pub instruction_id: String,
    pub instruction: String,
}

impl Episode {
    pub fn start(&self) -> Point3 {
        self.path[0]
    }

    pub fn goal(&self) -> Point3 {
        self.path[self.path.len() - 1]
    }
}

/// Paths (by id) that are mutually reachable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathGroup {
    pub scene_id: String,
    pub paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tour {
    pub tour_id: String,
    pub scene_id: String,
    pub episodes: Vec<String>,
}

impl Tour {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TourStats {
    pub scenes: usize,
    pub episodes: usize,
    pub tours: usize,
    pub tours_per_scene: f64,
    pub length_mean: f64,
    pub length_min: usize,
    pub length_max: usize,
    pub length_stddev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    /// Nearest-neighbor construction only.
    NearestNeighbor,
    /// Nearest-neighbor followed by Or-opt and segment-swap 3-opt.
    #[default]
    LocalSearch,
    /// Held-Karp dynamic program; limited to small groups.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TourConfig {
    pub instructions_per_path: usize,
    pub seed: u64,
    pub solver: Solver,
}

impl Default for TourConfig {
    fn default() -> Self {
        Self {
            instructions_per_path: 1,
            seed: 0,
            solver: Solver::LocalSearch,
        }
    }
}

/// First episode seen for every path id, keyed by path id.
pub fn unique_paths(episodes: &[Episode]) -> BTreeMap<&str, &Episode> {
    let mut out = BTreeMap::new();
    for e in episodes {
        out.entry(e.path_id.as_str()).or_insert(e);
    }
    out
}

fn check_scene(episodes: &[Episode], scene: &Scene) -> Result<()> {
    for e in episodes {
        if e.scene_id != scene.scene_id {
            return Err(Error::InvalidInput(alloc::format!(
                "episode {} belongs to scene {}, not {}",
                e.episode_id,
                e.scene_id,
                scene.scene_id
            )));
        }
        if e.path.is_empty() {
            return Err(Error::EmptySequence {
                context: Some(alloc::format!("path of episode {}", e.episode_id)),
            });
        }
    }
    Ok(())
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Splits the scene's unique paths into mutually reachable groups.
///
/// Two paths share a group when either end-to-start distance between them is
/// finite; scenes are undirected so one direction implies the other. Groups are
/// ordered by their lexicographically smallest path id.
pub fn partition_paths(episodes: &[Episode], scene: &Scene) -> Result<Vec<PathGroup>> {
    check_scene(episodes, scene)?;
    let paths = unique_paths(episodes);
    if paths.is_empty() {
        return Ok(Vec::new());
    }
    let ids: Vec<&str> = paths.keys().copied().collect();
    let endpoints: Vec<(Point3, Point3)> = paths.values().map(|e| (e.start(), e.goal())).collect();
    let matrix = scene.connectivity_matrix(&endpoints).map_err(|e| match e {
        Error::SnapFailure { point, radius, context } => {
            let idx = context
                .as_deref()
                .and_then(|c| c.rsplit(' ').next())
                .and_then(|s| s.parse::<usize>().ok());
            let ctx = match idx {
                Some(i) => alloc::format!("path {}", ids[i]),
                None => context.unwrap_or_default(),
            };
            Error::SnapFailure {
                point,
                radius,
                context: Some(ctx),
            }
        }
        other => other,
    })?;
    let n = ids.len();
    let mut sets = DisjointSet::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if matrix[i][j].is_finite() || matrix[j][i].is_finite() {
                sets.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        groups.entry(sets.find(i)).or_default().push(id.to_string());
    }
    Ok(groups
        .into_values()
        .map(|paths| PathGroup {
            scene_id: scene.scene_id.clone(),
            paths,
        })
        .collect())
}

/// Orders a group's paths to minimize summed end-to-start travel.
pub fn order_paths(group: &PathGroup, episodes: &[Episode], scene: &Scene, solver: Solver) -> Result<Vec<String>> {
    let by_path = unique_paths(episodes);
    let mut endpoints = Vec::with_capacity(group.paths.len());
    for id in &group.paths {
        let e = by_path
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidInput(alloc::format!("path {id} has no episode")))?;
        endpoints.push((e.start(), e.goal()));
    }
    if endpoints.is_empty() {
        return Ok(Vec::new());
    }
    let cost = scene.connectivity_matrix(&endpoints)?;
    for (i, row) in cost.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if i != j && !c.is_finite() {
                return Err(Error::InvalidInput(alloc::format!(
                    "paths {} and {} are not inter-navigable",
                    group.paths[i],
                    group.paths[j]
                )));
            }
        }
    }
    let order = match solver {
        Solver::NearestNeighbor => nearest_neighbor_path(&cost),
        Solver::LocalSearch => solve_atsp(&cost),
        Solver::Exact => held_karp_exact(&cost)?.0,
    };
    Ok(order.into_iter().map(|i| group.paths[i].clone()).collect())
}

/// Cost of visiting `order` as an open path; the diagonal is never used.
pub fn path_cost(cost: &[Vec<f64>], order: &[usize]) -> f64 {
    order.windows(2).map(|w| cost[w[0]][w[1]]).sum()
}

/// Cost matrix extended with a dummy node (index `n`) that is free to enter
/// and leave, turning the open path into a cycle.
struct DummyCycle<'a> {
    cost: &'a [Vec<f64>],
    n: usize,
}

impl DummyCycle<'_> {
    #[inline]
    fn c(&self, i: usize, j: usize) -> f64 {
        if i == self.n || j == self.n {
            0.0
        } else {
            self.cost[i][j]
        }
    }

    fn nearest_neighbor(&self) -> Vec<usize> {
        let mut visited = vec![false; self.n];
        let mut cycle = Vec::with_capacity(self.n + 1);
        cycle.push(self.n);
        let mut cur = self.n;
        for _ in 0..self.n {
            let mut best: Option<(usize, f64)> = None;
            for (j, seen) in visited.iter().enumerate() {
                if *seen {
                    continue;
                }
                let c = self.c(cur, j);
                if best.is_none_or(|(_, bc)| c < bc) {
                    best = Some((j, c));
                }
            }
            let (j, _) = best.expect("unvisited node remains");
            visited[j] = true;
            cycle.push(j);
            cur = j;
        }
        cycle
    }

    /// Moves one segment of 1..=3 nodes elsewhere, keeping its direction.
    fn or_opt_pass(&self, cycle: &mut Vec<usize>) -> bool {
        let m = cycle.len();
        for len in 1..=3usize {
            if len + 2 > m {
                break;
            }
            // segment occupies positions s..s+len; position 0 (dummy) never moves
            for s in 1..=(m - len) {
                let e = s + len - 1;
                let prev = cycle[s - 1];
                let next = cycle[(e + 1) % m];
                let head = cycle[s];
                let tail = cycle[e];
                let removed = self.c(prev, head) + self.c(tail, next) - self.c(prev, next);
                for p in 0..m {
                    // insert between p and p+1; both must lie outside the segment
                    if (s - 1..=e).contains(&p) {
                        continue;
                    }
                    let a = cycle[p];
                    let b = cycle[(p + 1) % m];
                    let added = self.c(a, head) + self.c(tail, b) - self.c(a, b);
                    if added - removed < -IMPROVEMENT_EPS {
                        let seg: Vec<usize> = cycle.drain(s..=e).collect();
                        let at = if p > e { p + 1 - len } else { p + 1 };
                        for (k, v) in seg.into_iter().enumerate() {
                            cycle.insert(at + k, v);
                        }
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Sequential 3-opt without reversal: cut three edges and swap the two
    /// middle segments. Orientation of every segment is kept, so the delta is
    /// exact for asymmetric costs.
    fn three_opt_pass(&self, cycle: &mut Vec<usize>) -> bool {
        let m = cycle.len();
        if m < 4 {
            return false;
        }
        for i in 0..m - 2 {
            let (a, a1) = (cycle[i], cycle[i + 1]);
            let d_a = self.c(a, a1);
            for j in (i + 1)..m - 1 {
                let (b, b1) = (cycle[j], cycle[j + 1]);
                let d_ab = d_a + self.c(b, b1);
                let cross = self.c(a, b1);
                for k in (j + 1)..m {
                    let (c, c1) = (cycle[k], cycle[(k + 1) % m]);
                    let before = d_ab + self.c(c, c1);
                    let after = cross + self.c(c, a1) + self.c(b, c1);
                    if after - before < -IMPROVEMENT_EPS {
                        // a[0..=i] + a[j+1..=k] + a[i+1..=j] + a[k+1..]
                        let mut next = Vec::with_capacity(m);
                        next.extend_from_slice(&cycle[..=i]);
                        next.extend_from_slice(&cycle[j + 1..=k]);
                        next.extend_from_slice(&cycle[i + 1..=j]);
                        next.extend_from_slice(&cycle[k + 1..]);
                        *cycle = next;
                        return true;
                    }
                }
            }
        }
        false
    }

    fn descend(&self, cycle: &mut Vec<usize>) {
        loop {
            if self.or_opt_pass(cycle) {
                continue;
            }
            if self.three_opt_pass(cycle) {
                continue;
            }
            break;
        }
    }

    fn cycle_cost(&self, cycle: &[usize]) -> f64 {
        let m = cycle.len();
        (0..m).map(|t| self.c(cycle[t], cycle[(t + 1) % m])).sum()
    }

    fn into_path(&self, cycle: &[usize]) -> Vec<usize> {
        let at = cycle.iter().position(|&v| v == self.n).expect("dummy in cycle");
        cycle[at + 1..]
            .iter()
            .chain(cycle[..at].iter())
            .copied()
            .collect()
    }
}

fn check_square(cost: &[Vec<f64>]) {
    let n = cost.len();
    assert!(cost.iter().all(|r| r.len() == n), "cost matrix must be square");
}

/// Nearest-neighbor open path, started from the free dummy node (so the first
/// real node is the one with the smallest index).
pub fn nearest_neighbor_path(cost: &[Vec<f64>]) -> Vec<usize> {
    check_square(cost);
    if cost.is_empty() {
        return Vec::new();
    }
    let dc = DummyCycle { cost, n: cost.len() };
    let cycle = dc.nearest_neighbor();
    dc.into_path(&cycle)
}

/// Heuristic open-path ATSP.
///
/// A zero-cost dummy node closes the path into a cycle. Starting from the
/// nearest-neighbor cycle, Or-opt relocations and segment-swap 3-opt moves are
/// applied first-improvement until a full pass of both finds nothing strictly
/// better. The local optimum is then perturbed by seeded random segment swaps,
/// re-optimized, and kept only when strictly cheaper. The returned cost never
/// exceeds the nearest-neighbor cost, and the result depends only on `cost`.
pub fn solve_atsp(cost: &[Vec<f64>]) -> Vec<usize> {
    check_square(cost);
    let n = cost.len();
    if n <= 1 {
        return (0..n).collect();
    }
    let dc = DummyCycle { cost, n };
    let mut best = dc.nearest_neighbor();
    dc.descend(&mut best);
    let mut best_cost = dc.cycle_cost(&best);
    let m = best.len();
    if m < 4 {
        return dc.into_path(&best);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(KICK_SEED);
    for _ in 0..kick_budget(m) {
        let mut trial = best.clone();
        let swaps = rng.gen_range(1..=3);
        for _ in 0..swaps {
            let mut cuts = [0usize; 3];
            for c in &mut cuts {
                *c = rng.gen_range(0..m);
            }
            cuts.sort_unstable();
            let [i, j, k] = cuts;
            if i == j || j == k {
                continue;
            }
            let mut next = Vec::with_capacity(m);
            next.extend_from_slice(&trial[..=i]);
            next.extend_from_slice(&trial[j + 1..=k]);
            next.extend_from_slice(&trial[i + 1..=j]);
            next.extend_from_slice(&trial[k + 1..]);
            trial = next;
        }
        dc.descend(&mut trial);
        let c = dc.cycle_cost(&trial);
        if c < best_cost - IMPROVEMENT_EPS {
            best = trial;
            best_cost = c;
        }
    }
    dc.into_path(&best)
}

const KICK_SEED: u64 = 0x1f2e_3d4c_5b6a_7988;

// Each descent pass is O(m^3); keep the total around 2e7 move evaluations.
fn kick_budget(m: usize) -> usize {
    let per = (m * m * m).max(1);
    (20_000_000 / per).clamp(10, 100 * m)
}

/// Optimal open Hamiltonian path by dynamic programming over subsets.
pub fn held_karp_exact(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    check_square(cost);
    let n = cost.len();
    if n > HELD_KARP_MAX_NODES {
        return Err(Error::SizeLimit {
            n,
            max: HELD_KARP_MAX_NODES,
        });
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let full = 1usize << n;
    let mut best = vec![f64::INFINITY; full * n];
    let mut parent = vec![usize::MAX; full * n];
    for v in 0..n {
        best[(1 << v) * n + v] = 0.0;
    }
    for mask in 1..full {
        for last in 0..n {
            if mask & (1 << last) == 0 {
                continue;
            }
            let cur = best[mask * n + last];
            if !cur.is_finite() {
                continue;
            }
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let nm = mask | (1 << next);
                let cand = cur + cost[last][next];
                if cand < best[nm * n + next] {
                    best[nm * n + next] = cand;
                    parent[nm * n + next] = last;
                }
            }
        }
    }
    let mask = full - 1;
    let (mut last, total) = (0..n)
        .map(|v| (v, best[mask * n + v]))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let mut order = Vec::with_capacity(n);
    let mut m = mask;
    loop {
        order.push(last);
        let p = parent[m * n + last];
        m &= !(1 << last);
        if p == usize::MAX {
            break;
        }
        last = p;
    }
    order.reverse();
    Ok((order, total))
}

/// Builds `n` tours over one path ordering, one per instruction slot.
///
/// With `n > 1` every path must carry exactly `n` episodes (instructions);
/// each path's episodes are shuffled with a generator seeded from `seed` and
/// dealt out one per tour, so across the `n` tours every instruction of every
/// path is used exactly once.
pub fn expand_instruction_tours(
    tour_prefix: &str,
    scene_id: &str,
    ordered_paths: &[String],
    episodes: &[Episode],
    n: usize,
    seed: u64,
) -> Result<Vec<Tour>> {
    if n == 0 {
        return Err(Error::InvalidInput("instructions per path must be at least 1".to_string()));
    }
    let wanted: BTreeSet<&str> = ordered_paths.iter().map(String::as_str).collect();
    let mut per_path: BTreeMap<&str, Vec<&Episode>> = BTreeMap::new();
    for e in episodes {
        if wanted.contains(e.path_id.as_str()) {
            per_path.entry(e.path_id.as_str()).or_default().push(e);
        }
    }
    let mismatched: Vec<String> = ordered_paths
        .iter()
        .filter(|p| per_path.get(p.as_str()).map_or(0, Vec::len) != n)
        .cloned()
        .collect();
    if !mismatched.is_empty() {
        return Err(Error::InstructionCountMismatch {
            expected: n,
            path_ids: mismatched,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<Vec<String>> = vec![Vec::with_capacity(ordered_paths.len()); n];
    for path in ordered_paths {
        let mut eps = per_path[path.as_str()].clone();
        eps.sort_by(|a, b| {
            a.instruction_id
                .cmp(&b.instruction_id)
                .then_with(|| a.episode_id.cmp(&b.episode_id))
        });
        if n > 1 {
            eps.shuffle(&mut rng);
        }
        for (slot, e) in slots.iter_mut().zip(eps) {
            slot.push(e.episode_id.clone());
        }
    }
    Ok(slots
        .into_iter()
        .enumerate()
        .map(|(k, episodes)| Tour {
            tour_id: alloc::format!("{tour_prefix}_{k}"),
            scene_id: scene_id.to_string(),
            episodes,
        })
        .collect())
}

fn group_seed(seed: u64, group: usize) -> u64 {
    // splitmix64 step so neighboring groups get unrelated streams
    let mut z = seed.wrapping_add((group as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Full pipeline for one scene: partition, order, expand.
pub fn generate_tours(scene: &Scene, episodes: &[Episode], config: &TourConfig) -> Result<Vec<Tour>> {
    let groups = partition_paths(episodes, scene)?;
    let mut tours = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        let order = order_paths(group, episodes, scene, config.solver)?;
        let prefix = alloc::format!("{}_g{gi}", scene.scene_id);
        tours.extend(expand_instruction_tours(
            &prefix,
            &scene.scene_id,
            &order,
            episodes,
            config.instructions_per_path,
            group_seed(config.seed, gi),
        )?);
    }
    Ok(tours)
}

/// Summary statistics over episodes per tour (population standard deviation).
pub fn compute_tour_stats(tours: &[Tour]) -> Result<TourStats> {
    if tours.is_empty() {
        return Err(Error::InvalidInput("no tours".to_string()));
    }
    let scenes: BTreeSet<&str> = tours.iter().map(|t| t.scene_id.as_str()).collect();
    let lengths: Vec<usize> = tours.iter().map(Tour::len).collect();
    let total: usize = lengths.iter().sum();
    let mean = total as f64 / lengths.len() as f64;
    let var = lengths
        .iter()
        .map(|&l| (l as f64 - mean) * (l as f64 - mean))
        .sum::<f64>()
        / lengths.len() as f64;
    Ok(TourStats {
        scenes: scenes.len(),
        episodes: total,
        tours: tours.len(),
        tours_per_scene: tours.len() as f64 / scenes.len() as f64,
        length_mean: mean,
        length_min: *lengths.iter().min().unwrap(),
        length_max: *lengths.iter().max().unwrap(),
        length_stddev: libm::sqrt(var),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{GridWorld, SceneKind};

    /// Exhaustive oracle: every permutation via Heap's algorithm.
    fn brute_force_best(cost: &[Vec<f64>]) -> f64 {
        let n = cost.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut c = vec![0usize; n];
        let mut best = path_cost(cost, &perm);
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                best = best.min(path_cost(cost, &perm));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { rng.gen_range(0.0..100.0) }).collect())
            .collect()
    }

    fn is_permutation(p: &[usize], n: usize) -> bool {
        let mut seen = vec![false; n];
        p.len() == n && p.iter().all(|&i| i < n && !core::mem::replace(&mut seen[i], true))
    }

    #[test]
    fn trivial_sizes() {
        assert_eq!(solve_atsp(&[vec![0.0]]), vec![0]);
        assert_eq!(held_karp_exact(&[vec![0.0]]).unwrap(), (vec![0], 0.0));
        let two = vec![vec![0.0, 5.0], vec![3.0, 0.0]];
        assert_eq!(held_karp_exact(&two).unwrap(), (vec![1, 0], 3.0));
        assert_eq!(solve_atsp(&two), vec![1, 0]);
        let two = vec![vec![0.0, 1.0], vec![10.0, 0.0]];
        assert_eq!(solve_atsp(&two), vec![0, 1]);
    }

    #[test]
    fn four_node_chain() {
        let m = vec![
            vec![0.0, 1.0, 9.0, 9.0],
            vec![9.0, 0.0, 1.0, 9.0],
            vec![9.0, 9.0, 0.0, 1.0],
            vec![1.0, 9.0, 9.0, 0.0],
        ];
        let (hk, hk_cost) = held_karp_exact(&m).unwrap();
        assert_eq!(hk_cost, 3.0);
        let p = solve_atsp(&m);
        assert_eq!(path_cost(&m, &p), 3.0);
        assert_eq!(path_cost(&m, &hk), 3.0);
        assert_eq!(brute_force_best(&m), 3.0);
    }

    #[test]
    fn held_karp_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=8 {
            for _ in 0..5 {
                let m = random_matrix(&mut rng, n);
                let (p, c) = held_karp_exact(&m).unwrap();
                assert!(is_permutation(&p, n));
                assert!((path_cost(&m, &p) - c).abs() < 1e-9);
                assert!(c <= brute_force_best(&m) + 1e-9);
            }
        }
    }

    #[test]
    fn held_karp_size_limit() {
        let m = vec![vec![0.0; 16]; 16];
        assert!(matches!(held_karp_exact(&m), Err(Error::SizeLimit { n: 16, .. })));
    }

    #[test]
    fn local_search_never_worse_than_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in (2..=30).step_by(4) {
            let m = random_matrix(&mut rng, n);
            let p = solve_atsp(&m);
            assert!(is_permutation(&p, n));
            let nn = nearest_neighbor_path(&m);
            assert!(path_cost(&m, &p) <= path_cost(&m, &nn) + 1e-9);
        }
    }

    #[test]
    fn nine_node_instance_reaches_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let m = random_matrix(&mut rng, 9);
        let (_, best) = held_karp_exact(&m).unwrap();
        let p = solve_atsp(&m);
        assert!((path_cost(&m, &p) - best).abs() < 1e-9);
    }

    fn ep(id: &str, path_id: &str, scene: &str, path: Vec<Point3>, instr: &str) -> Episode {
        Episode {
            episode_id: id.to_string(),
            path_id: path_id.to_string(),
            scene_id: scene.to_string(),
            path,
            start_heading: 0.0,
            instruction_id: instr.to_string(),
            instruction: alloc::format!("instruction {instr}"),
        }
    }

    fn rooms_scene(rows: &[&str]) -> Scene {
        let h = rows.len();
        let w = rows[0].len();
        let mut g = GridWorld::blank(0.25, Point3::default(), w, h, 0.0, 2.5).unwrap();
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                if ch == '.' {
                    g.set_cell(c, r, true, 0);
                }
            }
        }
        Scene::new("s", SceneKind::Grid(g))
    }

    fn cell(s: &Scene, c: usize, r: usize) -> Point3 {
        let g = s.grid().unwrap();
        g.cell_center(g.index(c, r))
    }

    #[test]
    fn partition_open_room_is_one_group() {
        let s = rooms_scene(&["########", "#......#", "#......#", "########"]);
        let eps = vec![
            ep("e1", "p1", "s", vec![cell(&s, 1, 1), cell(&s, 3, 1)], "i1"),
            ep("e2", "p2", "s", vec![cell(&s, 4, 2), cell(&s, 6, 2)], "i2"),
            ep("e3", "p3", "s", vec![cell(&s, 2, 2)], "i3"),
        ];
        let groups = partition_paths(&eps, &s).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].paths, vec!["p1", "p2", "p3"]);
    }

    #[test]
    fn partition_sealed_rooms() {
        // rooms A | B : C, door between A and B open, B-C sealed
        let s = rooms_scene(&[
            "#############",
            "#...#...#...#",
            "#.......#...#",
            "#...#...#...#",
            "#############",
        ]);
        let eps = vec![
            ep("e1", "a1", "s", vec![cell(&s, 1, 1), cell(&s, 3, 3)], "i"),
            ep("e2", "a2", "s", vec![cell(&s, 2, 2)], "i"),
            ep("e3", "b1", "s", vec![cell(&s, 5, 1), cell(&s, 7, 3)], "i"),
            ep("e4", "c1", "s", vec![cell(&s, 9, 1), cell(&s, 11, 3)], "i"),
            ep("e5", "c2", "s", vec![cell(&s, 10, 2)], "i"),
        ];
        let groups = partition_paths(&eps, &s).unwrap();
        let got: Vec<Vec<String>> = groups.into_iter().map(|g| g.paths).collect();
        assert_eq!(got, vec![vec!["a1", "a2", "b1"], vec!["c1", "c2"]]);
    }

    #[test]
    fn partition_reports_path_on_snap_failure() {
        let s = rooms_scene(&["#####", "#...#", "#####"]);
        let eps = vec![
            ep("e1", "good", "s", vec![cell(&s, 1, 1)], "i"),
            ep("e2", "bad", "s", vec![Point3::new(30.0, 0.0, 0.0)], "i"),
        ];
        match partition_paths(&eps, &s).unwrap_err() {
            Error::SnapFailure { context: Some(c), .. } => assert!(c.contains("bad"), "{c}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn order_prefers_cheap_direction() {
        // p1 ends near where p2 starts, far from the reverse
        let s = rooms_scene(&["##############################################", "#............................................#", "##############################################"]);
        let eps = vec![
            ep("e1", "A", "s", vec![cell(&s, 1, 1), cell(&s, 40, 1)], "i"),
            ep("e2", "B", "s", vec![cell(&s, 44, 1), cell(&s, 20, 1)], "i"),
        ];
        let g = PathGroup {
            scene_id: "s".into(),
            paths: vec!["A".into(), "B".into()],
        };
        for solver in [Solver::NearestNeighbor, Solver::LocalSearch, Solver::Exact] {
            assert_eq!(order_paths(&g, &eps, &s, solver).unwrap(), vec!["A", "B"]);
        }
        let single = PathGroup {
            scene_id: "s".into(),
            paths: vec!["B".into()],
        };
        assert_eq!(order_paths(&single, &eps, &s, Solver::LocalSearch).unwrap(), vec!["B"]);
    }

    fn instr_eps(paths: &[&str], n: usize) -> Vec<Episode> {
        let mut out = Vec::new();
        for p in paths {
            for k in 0..n {
                out.push(ep(
                    &alloc::format!("{p}{k}"),
                    p,
                    "s",
                    vec![Point3::default()],
                    &alloc::format!("{p}_{k}"),
                ));
            }
        }
        out
    }

    #[test]
    fn expand_single_instruction() {
        let eps = instr_eps(&["a", "b", "c"], 1);
        let order: Vec<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        let tours = expand_instruction_tours("t", "s", &order, &eps, 1, 0).unwrap();
        assert_eq!(tours.len(), 1);
        assert_eq!(tours[0].episodes, vec!["c0", "a0", "b0"]);
    }

    #[test]
    fn expand_exact_cover_and_determinism() {
        let eps = instr_eps(&["a", "b"], 3);
        let order: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let tours = expand_instruction_tours("t", "s", &order, &eps, 3, 42).unwrap();
        assert_eq!(tours.len(), 3);
        let mut used_a: Vec<&str> = tours.iter().map(|t| t.episodes[0].as_str()).collect();
        let mut used_b: Vec<&str> = tours.iter().map(|t| t.episodes[1].as_str()).collect();
        used_a.sort();
        used_b.sort();
        assert_eq!(used_a, vec!["a0", "a1", "a2"]);
        assert_eq!(used_b, vec!["b0", "b1", "b2"]);
        assert_eq!(tours, expand_instruction_tours("t", "s", &order, &eps, 3, 42).unwrap());
    }

    #[test]
    fn expand_count_mismatch() {
        let mut eps = instr_eps(&["a", "b"], 2);
        eps.pop();
        let order: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        match expand_instruction_tours("t", "s", &order, &eps, 2, 0).unwrap_err() {
            Error::InstructionCountMismatch { path_ids, .. } => assert_eq!(path_ids, vec!["b"]),
            e => panic!("{e:?}"),
        }
    }

    fn tour(scene: &str, len: usize) -> Tour {
        Tour {
            tour_id: "t".into(),
            scene_id: scene.into(),
            episodes: (0..len).map(|i| alloc::format!("e{i}")).collect(),
        }
    }

    #[test]
    fn stats() {
        let s = compute_tour_stats(&[tour("s", 5)]).unwrap();
        assert_eq!((s.length_mean, s.length_min, s.length_max, s.length_stddev), (5.0, 5, 5, 0.0));
        let s = compute_tour_stats(&[tour("s", 2), tour("s", 11)]).unwrap();
        assert_eq!(s.length_mean, 6.5);
        assert_eq!((s.length_min, s.length_max, s.episodes, s.scenes), (2, 11, 13, 1));
        assert_eq!(s.length_stddev, 4.5);
        assert!(compute_tour_stats(&[]).is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.0f64..10.0, n), n).prop_map(|mut m| {
            for (i, row) in m.iter_mut().enumerate() {
                row[i] = 0.0;
            }
            m
        })
    }

    fn fake_episodes(paths: usize, n: usize) -> Vec<Episode> {
        (0..paths)
            .flat_map(|p| {
                (0..n).map(move |k| Episode {
                    episode_id: alloc::format!("p{p}_{k}"),
                    path_id: alloc::format!("p{p}"),
                    scene_id: "s".into(),
                    path: alloc::vec![Point3::new(p as f64, 0.0, 0.0)],
                    start_heading: 0.0,
                    instruction_id: alloc::format!("p{p}_{k}"),
                    instruction: String::new(),
                })
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn solver_returns_a_permutation_no_worse_than_construction(m in (1usize..12).prop_flat_map(matrix)) {
            let order = solve_atsp(&m);
            let mut sorted = order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..m.len()).collect::<Vec<_>>());
            prop_assert!(path_cost(&m, &order) <= path_cost(&m, &nearest_neighbor_path(&m)) + 1e-9);
        }

        #[test]
        fn exact_solver_is_a_lower_bound(m in (1usize..8).prop_flat_map(matrix)) {
            let (order, best) = held_karp_exact(&m).unwrap();
            prop_assert!((path_cost(&m, &order) - best).abs() < 1e-9);
            prop_assert!(best <= path_cost(&m, &solve_atsp(&m)) + 1e-9);
        }

        #[test]
        fn expansion_is_an_exact_cover(paths in 1usize..8, n in 1usize..5, seed in any::<u64>()) {
            let eps = fake_episodes(paths, n);
            let order: Vec<String> = (0..paths).rev().map(|p| alloc::format!("p{p}")).collect();
            let tours = expand_instruction_tours("t", "s", &order, &eps, n, seed).unwrap();
            prop_assert_eq!(tours.len(), n);
            let mut used: Vec<&str> = Vec::new();
            for t in &tours {
                let path_ids: Vec<String> = t.episodes.iter().map(|e| e.split('_').next().unwrap().into()).collect();
                prop_assert_eq!(&path_ids, &order);
                used.extend(t.episodes.iter().map(String::as_str));
            }
            used.sort_unstable();
            let mut all: Vec<&str> = eps.iter().map(|e| e.episode_id.as_str()).collect();
            all.sort_unstable();
            prop_assert_eq!(used, all);
        }
    }
}
