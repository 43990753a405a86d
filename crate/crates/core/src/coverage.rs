//! How much of each upcoming episode, and of the whole tour region, an
//! oracle-driven agent has already seen.
//!
//! In grid scenes the observation cells of a point are the cells whose centers
//! lie within the model radius, optionally minus cells hidden behind blocked
//! cells (the first blocked cell on a ray is itself visible). Graph scenes
//! have no occupancy, so nodes within the radius count and occlusion is
//! ignored.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::environment::{GridWorld, Scene, SceneKind};
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::harness::tour_episodes;
use crate::mapper::cast_ray;
use crate::tourgen::{Episode, Tour};

pub const DEFAULT_COVERAGE_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationModel {
    pub radius: f64,
    pub occlusion: bool,
}

impl Default for ObservationModel {
    fn default() -> Self {
        Self {
            radius: DEFAULT_COVERAGE_RADIUS,
            occlusion: true,
        }
    }
}

impl ObservationModel {
    pub fn validate(&self) -> Result<()> {
        if self.radius > 0.0 && self.radius.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("coverage radius {} must be positive", self.radius)))
        }
    }
}

/// Whether `target`'s center is visible from `p` (no blocked cell in between).
pub fn cell_visible(grid: &GridWorld, p: &Point3, target: usize) -> bool {
    let c = grid.cell_center(target);
    let (dx, dy) = (c.x - p.x, c.y - p.y);
    let d = libm::hypot(dx, dy);
    if d == 0.0 {
        return true;
    }
    match cast_ray(grid, p.x, p.y, dx / d, dy / d, d) {
        None => true,
        Some(h) => h.cell == Some(target) || h.enter >= d,
    }
}

fn grid_cells_near(grid: &GridWorld, p: &Point3, model: &ObservationModel, out: &mut BTreeSet<usize>) {
    let res = grid.resolution;
    let span = libm::ceil(model.radius / res) as i64 + 1;
    let c0 = libm::round((p.x - grid.origin.x) / res) as i64;
    let r0 = libm::round((p.y - grid.origin.y) / res) as i64;
    for r in (r0 - span).max(0)..=(r0 + span).min(grid.height as i64 - 1) {
        for c in (c0 - span).max(0)..=(c0 + span).min(grid.width as i64 - 1) {
            let i = grid.index(c as usize, r as usize);
            if out.contains(&i) || grid.cell_center(i).planar_distance(p) > model.radius {
                continue;
            }
            if !model.occlusion || cell_visible(grid, p, i) {
                out.insert(i);
            }
        }
    }
}

/// Union of observation cells (grid) or nodes (graph) over a path.
pub fn observed_cells(path: &[Point3], scene: &Scene, model: &ObservationModel) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    match &scene.kind {
        SceneKind::Grid(g) => {
            let mut done: Vec<Point3> = Vec::new();
            for p in path {
                if done.contains(p) {
                    continue;
                }
                done.push(*p);
                grid_cells_near(g, p, model, &mut out);
            }
        }
        SceneKind::Graph(g) => {
            for p in path {
                for i in 0..g.node_count() {
                    if g.position(i).planar_distance(p) <= model.radius {
                        out.insert(i);
                    }
                }
            }
        }
    }
    out
}

/// Coverage record for one tour; entry `k` is measured before episode `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TourCoverage {
    pub tour_id: String,
    pub upcoming_pct: Vec<f64>,
    pub tour_pct: Vec<f64>,
    /// Tour-region coverage once the last episode has been walked.
    pub final_tour_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveragePoint {
    /// 1-based episode index within the tour.
    pub episode_index: usize,
    pub upcoming_pct_mean: f64,
    pub tour_pct_mean: f64,
    pub n_tours: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCurve {
    pub model: ObservationModel,
    pub points: Vec<CoveragePoint>,
    pub tours: Vec<TourCoverage>,
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Walks the oracle through a tour: each reference path, then the transit to
/// the next start.
pub fn tour_coverage(
    tour: &Tour,
    episodes: &BTreeMap<String, Episode>,
    scene: &Scene,
    model: &ObservationModel,
) -> Result<TourCoverage> {
    model.validate()?;
    let eps = tour_episodes(tour, episodes)?;
    let mut episode_cells = Vec::with_capacity(eps.len());
    let mut transit_cells = Vec::with_capacity(eps.len());
    for (k, ep) in eps.iter().enumerate() {
        episode_cells.push(observed_cells(&ep.path, scene, model));
        let transit = match eps.get(k + 1) {
            Some(next) => scene
                .shortest_path(&ep.goal(), &next.start())
                .map_err(|e| e.with_context(format!("transit after episode {}", ep.episode_id)))?,
            None => Vec::new(),
        };
        transit_cells.push(observed_cells(&transit, scene, model));
    }
    let region: BTreeSet<usize> = episode_cells.iter().chain(&transit_cells).flatten().copied().collect();
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut upcoming_pct = Vec::with_capacity(eps.len());
    let mut tour_pct = Vec::with_capacity(eps.len());
    for (cells, transit) in episode_cells.iter().zip(&transit_cells) {
        upcoming_pct.push(pct(cells.intersection(&seen).count(), cells.len()));
        tour_pct.push(pct(seen.len(), region.len()));
        seen.extend(cells);
        seen.extend(transit);
    }
    Ok(TourCoverage {
        tour_id: tour.tour_id.clone(),
        upcoming_pct,
        tour_pct,
        final_tour_pct: pct(seen.len(), region.len()),
    })
}

/// Averages per-tour records by episode index. An index only averages the
/// tours long enough to reach it.
pub fn merge_coverage(mut tours: Vec<TourCoverage>, model: ObservationModel) -> CoverageCurve {
    tours.sort_by(|a, b| a.tour_id.cmp(&b.tour_id));
    let longest = tours.iter().map(|t| t.upcoming_pct.len()).max().unwrap_or(0);
    let points = (0..longest)
        .map(|k| {
            let rows: Vec<&TourCoverage> = tours.iter().filter(|t| t.upcoming_pct.len() > k).collect();
            let n = rows.len() as f64;
            CoveragePoint {
                episode_index: k + 1,
                upcoming_pct_mean: rows.iter().map(|t| t.upcoming_pct[k]).sum::<f64>() / n,
                tour_pct_mean: rows.iter().map(|t| t.tour_pct[k]).sum::<f64>() / n,
                n_tours: rows.len(),
            }
        })
        .collect();
    CoverageCurve { model, points, tours }
}

pub fn coverage_curves(
    tours: &[Tour],
    episodes: &BTreeMap<String, Episode>,
    scene: &Scene,
    model: &ObservationModel,
) -> Result<CoverageCurve> {
    let per_tour = tours
        .iter()
        .map(|t| tour_coverage(t, episodes, scene, model))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_coverage(per_tour, *model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn open(w: usize, h: usize) -> GridWorld {
        let mut g = GridWorld::blank(0.25, Point3::default(), w, h, 0.0, 2.5).unwrap();
        for r in 0..h {
            for c in 0..w {
                g.set_cell(c, r, true, 2);
            }
        }
        g
    }

    fn scene(g: GridWorld) -> Scene {
        Scene::new("s", SceneKind::Grid(g))
    }

    #[test]
    fn empty_path_sees_nothing() {
        let s = scene(open(10, 10));
        assert!(observed_cells(&[], &s, &ObservationModel::default()).is_empty());
    }

    #[test]
    fn disc_matches_brute_force() {
        let g = open(40, 40);
        let p = Point3::new(4.9, 5.1, 0.0);
        let brute: BTreeSet<usize> = (0..g.cell_count())
            .filter(|&i| g.cell_center(i).planar_distance(&p) <= 3.0)
            .collect();
        let s = scene(g);
        for occlusion in [false, true] {
            let got = observed_cells(&[p], &s, &ObservationModel { radius: 3.0, occlusion });
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn wall_blocks_view() {
        let mut g = open(30, 30);
        for r in 0..30 {
            g.set_cell(15, r, false, 1);
        }
        let p = g.cell_center(g.index(13, 15));
        let s = scene(g.clone());
        let seen = observed_cells(&[p], &s, &ObservationModel::default());
        assert!(seen.iter().all(|&i| g.col_row(i).0 <= 15));
        // the wall face straight ahead is visible
        assert!(seen.contains(&g.index(15, 15)));
        let unoccluded = observed_cells(&[p], &s, &ObservationModel { radius: 3.0, occlusion: false });
        assert!(unoccluded.iter().any(|&i| g.col_row(i).0 > 15));
    }

    fn ep(id: &str, path: Vec<Point3>) -> Episode {
        Episode {
            episode_id: id.into(),
            path_id: id.into(),
            scene_id: "s".into(),
            path,
            start_heading: 0.0,
            instruction_id: id.into(),
            instruction: String::new(),
        }
    }

    fn corridor_tour(s: &Scene, specs: &[(usize, usize, usize, usize)]) -> (Tour, BTreeMap<String, Episode>) {
        let g = s.grid().unwrap();
        let mut map = BTreeMap::new();
        let mut ids = Vec::new();
        for (k, &(c0, r0, c1, r1)) in specs.iter().enumerate() {
            let id = format!("e{k}");
            let path = s
                .shortest_path(&g.cell_center(g.index(c0, r0)), &g.cell_center(g.index(c1, r1)))
                .unwrap();
            map.insert(id.clone(), ep(&id, path));
            ids.push(id);
        }
        let tour = Tour {
            tour_id: "t".into(),
            scene_id: "s".into(),
            episodes: ids,
        };
        (tour, map)
    }

    #[test]
    fn retrace_is_fully_covered() {
        let s = scene(open(60, 20));
        let (tour, map) = corridor_tour(&s, &[(2, 5, 40, 5), (2, 5, 40, 5)]);
        let c = tour_coverage(&tour, &map, &s, &ObservationModel::default()).unwrap();
        assert_eq!(c.upcoming_pct[0], 0.0);
        assert_eq!(c.tour_pct[0], 0.0);
        assert_eq!(c.upcoming_pct[1], 100.0);
        assert_eq!(c.final_tour_pct, 100.0);
    }

    #[test]
    fn averaging_counts_contributing_tours() {
        let a = TourCoverage {
            tour_id: "a".into(),
            upcoming_pct: vec![0.0, 50.0],
            tour_pct: vec![0.0, 40.0],
            final_tour_pct: 100.0,
        };
        let b = TourCoverage {
            tour_id: "b".into(),
            upcoming_pct: vec![0.0],
            tour_pct: vec![0.0],
            final_tour_pct: 100.0,
        };
        let curve = merge_coverage(vec![b, a], ObservationModel::default());
        assert_eq!(curve.points.len(), 2);
        assert_eq!(curve.points[0].n_tours, 2);
        assert_eq!(curve.points[1].n_tours, 1);
        assert_eq!(curve.points[1].upcoming_pct_mean, 50.0);
        assert_eq!(curve.tours[0].tour_id, "a");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn tour_region_is_monotone(
            specs in proptest::collection::vec((1usize..39, 1usize..19, 1usize..39, 1usize..19), 1..6),
            occlusion in any::<bool>(),
        ) {
            let mut g = open(40, 20);
            for r in 0..14 {
                g.set_cell(20, r, false, 1);
            }
            let s = scene(g);
            let specs: Vec<_> = specs.into_iter().filter(|&(c0, r0, c1, r1)| c0 != 20 && c1 != 20 || (r0 >= 14 && r1 >= 14)).collect();
            prop_assume!(!specs.is_empty());
            let (tour, map) = corridor_tour(&s, &specs);
            let model = ObservationModel { radius: 2.0, occlusion };
            let c = tour_coverage(&tour, &map, &s, &model).unwrap();
            prop_assert_eq!(c.tour_pct[0], 0.0);
            for w in c.tour_pct.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            for &v in c.upcoming_pct.iter().chain(&c.tour_pct) {
                prop_assert!((0.0..=100.0).contains(&v));
            }
            prop_assert_eq!(c.final_tour_pct, 100.0);
            prop_assert_eq!(&c, &tour_coverage(&tour, &map, &s, &model).unwrap());
        }
    }
}
