//! Top-down occupancy and semantic maps built from depth frames.
//!
//! Camera convention: pixel `(u, v)` with depth `d` (distance along the optical
//! axis) maps to the camera-frame point `((u - cx) d / fx, (v - cy) d / fy, d)`
//! with x right, y down, z forward. The camera frame is rotated about the
//! vertical axis by the pose heading and translated to the pose position.
//!
//! Points are collapsed across height into a 2D grid: any point between the
//! floor and ceiling planes marks its cell occupied, and the cell's label comes
//! from the highest labeled point seen in that column.

use alloc::vec;
use alloc::vec::Vec;

use crate::environment::{GridWorld, NUM_SEMANTIC_CLASSES};
use crate::error::{Error, Result};
use crate::geom::{Point3, Pose};

pub const DEFAULT_MAP_RESOLUTION: f64 = 0.25;
pub const DEFAULT_CROP_SIZE: usize = 64;
/// Thirteen one-hot semantic channels plus occupancy.
pub const CROP_CHANNELS: usize = NUM_SEMANTIC_CLASSES as usize + 1;
pub const DEFAULT_BAND_MARGIN: f64 = 0.1;
pub const DEFAULT_CAMERA_HEIGHT: f64 = 1.25;
pub const DEFAULT_MAX_DEPTH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Square-pixel camera with the principal point at the image center.
    pub fn from_hfov(width: usize, height: usize, hfov: f64) -> Self {
        let fx = (width as f64 / 2.0) / libm::tan(hfov / 2.0);
        Self {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(alloc::format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Projects a world point seen from `camera` to `(u, v, depth)`.
    /// Returns `None` for points at or behind the camera plane.
    pub fn project(&self, camera: &Pose, p: &Point3) -> Option<(f64, f64, f64)> {
        let (fx_, fy_) = camera.forward();
        let (rx, ry) = camera.right();
        let rel = (p.x - camera.position.x, p.y - camera.position.y, p.z - camera.position.z);
        let z = rel.0 * fx_ + rel.1 * fy_;
        if z <= 0.0 {
            return None;
        }
        let x = rel.0 * rx + rel.1 * ry;
        let y = -rel.2;
        Some((self.fx * x / z + self.cx, self.fy * y / z + self.cy, z))
    }
}

/// Row-major depth image in meters; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub depth: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    /// Camera pose; `position.z` is the optical center height.
    pub pose: Pose,
}

/// Row-major per-pixel labels aligned with a depth frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFrame {
    pub labels: Vec<u8>,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub point: Point3,
    pub label: u8,
}

/// Inverse pinhole projection of every valid depth pixel into world space.
pub fn unproject(depth: &DepthFrame, semantics: Option<&SemanticFrame>) -> Result<Vec<LabeledPoint>> {
    let k = &depth.intrinsics;
    if depth.depth.len() != k.width * k.height {
        return Err(Error::DimensionMismatch {
            depth: (k.width, k.height),
            semantics: (depth.depth.len(), 1),
        });
    }
    if let Some(s) = semantics {
        if s.width != k.width || s.height != k.height || s.labels.len() != s.width * s.height {
            return Err(Error::DimensionMismatch {
                depth: (k.width, k.height),
                semantics: (s.width, s.height),
            });
        }
    }
    let (fwx, fwy) = depth.pose.forward();
    let (rx, ry) = depth.pose.right();
    let origin = depth.pose.position;
    let mut out = Vec::new();
    for v in 0..k.height {
        for u in 0..k.width {
            let i = v * k.width + u;
            let d = depth.depth[i];
            if !(d > 0.0) || !d.is_finite() {
                continue;
            }
            let xc = (u as f64 - k.cx) * d / k.fx;
            let yc = (v as f64 - k.cy) * d / k.fy;
            let point = Point3::new(
                origin.x + xc * rx + d * fwx,
                origin.y + xc * ry + d * fwy,
                origin.z - yc,
            );
            let label = semantics.map_or(0, |s| s.labels[i]);
            out.push(LabeledPoint { point, label });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapMode {
    /// Cleared at the start of every episode.
    #[default]
    Episodic,
    /// Cleared at the start of every tour.
    Iterative,
    /// Precomputed from the scene; never cleared or updated.
    Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetEvent {
    EpisodeStart,
    TourStart,
}

/// Floor/ceiling band used to drop floor and ceiling returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightBand {
    pub floor_z: f64,
    pub ceiling_z: f64,
    pub margin: f64,
}

impl HeightBand {
    pub fn new(floor_z: f64, ceiling_z: f64) -> Self {
        Self {
            floor_z,
            ceiling_z,
            margin: DEFAULT_BAND_MARGIN,
        }
    }
}

/// Global 2D map: one occupancy bit and one label per cell.
///
/// Cell geometry matches [`GridWorld`]: cell `(c, r)` is centered at
/// `origin + (c, r) * resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticOccMap {
    pub resolution: f64,
    pub origin: Point3,
    pub width: usize,
    pub height: usize,
    pub mode: MapMode,
    occupancy: Vec<u8>,
    semantic: Vec<u8>,
    observed: Vec<bool>,
    label_z: Vec<f64>,
}

impl SemanticOccMap {
    pub fn new(resolution: f64, origin: Point3, width: usize, height: usize, mode: MapMode) -> Self {
        let n = width * height;
        Self {
            resolution,
            origin,
            width,
            height,
            mode,
            occupancy: vec![0; n],
            semantic: vec![0; n],
            observed: vec![false; n],
            label_z: vec![f64::NEG_INFINITY; n],
        }
    }

    /// Empty map covering the same cells as `grid`.
    pub fn for_grid(grid: &GridWorld, mode: MapMode) -> Self {
        Self::new(grid.resolution, grid.origin, grid.width, grid.height, mode)
    }

    /// Rebuilds a map from stored layers (e.g. a snapshot).
    #[allow(clippy::too_many_arguments)]
    pub fn from_layers(
        resolution: f64,
        origin: Point3,
        width: usize,
        height: usize,
        mode: MapMode,
        occupancy: Vec<u8>,
        semantic: Vec<u8>,
        observed: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if occupancy.len() != n || semantic.len() != n || observed.len() != n {
            return Err(Error::InvalidInput(alloc::format!("map layers must have {n} cells")));
        }
        if occupancy.iter().any(|&o| o > 1) || semantic.iter().any(|&s| s > NUM_SEMANTIC_CLASSES) {
            return Err(Error::InvalidInput("map layer value out of range".into()));
        }
        if semantic.iter().zip(&observed).any(|(&s, &o)| s != 0 && !o) {
            return Err(Error::InvalidInput("unobserved cell carries a label".into()));
        }
        Ok(Self {
            resolution,
            origin,
            width,
            height,
            mode,
            occupancy,
            semantic,
            observed,
            label_z: vec![f64::NEG_INFINITY; n],
        })
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn cell_center(&self, idx: usize) -> Point3 {
        let (c, r) = (idx % self.width, idx / self.width);
        Point3::new(
            self.origin.x + c as f64 * self.resolution,
            self.origin.y + r as f64 * self.resolution,
            self.origin.z,
        )
    }

    pub fn cell_of(&self, p: &Point3) -> Option<usize> {
        let c = libm::round((p.x - self.origin.x) / self.resolution);
        let r = libm::round((p.y - self.origin.y) / self.resolution);
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some(self.index(c as usize, r as usize))
    }

    pub fn occupancy(&self) -> &[u8] {
        &self.occupancy
    }

    pub fn semantic(&self) -> &[u8] {
        &self.semantic
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn clear(&mut self) {
        self.occupancy.fill(0);
        self.semantic.fill(0);
        self.observed.fill(false);
        self.label_z.fill(f64::NEG_INFINITY);
    }

    /// Applies the mode's reset rule to a tour or episode boundary.
    pub fn reset(&mut self, event: ResetEvent) {
        let clears = matches!(
            (self.mode, event),
            (MapMode::Episodic, ResetEvent::EpisodeStart) | (MapMode::Iterative, ResetEvent::TourStart)
        );
        if clears {
            self.clear();
        }
    }

    /// Collapses a labeled point cloud into the map.
    ///
    /// The band is anchored at the agent: points must lie strictly between
    /// `agent.z + margin` and `agent.z + (ceiling_z - floor_z) - margin`.
    /// Surviving points mark their cell observed and occupied; the cell label
    /// is that of the highest labeled point seen in the column so far.
    pub fn integrate(&mut self, cloud: &[LabeledPoint], agent_pose: &Pose, band: &HeightBand) -> Result<()> {
        if self.mode == MapMode::Known {
            return Err(Error::ImmutableMap);
        }
        let base = agent_pose.position.z;
        let lo = base + band.margin;
        let hi = base + (band.ceiling_z - band.floor_z) - band.margin;
        for lp in cloud {
            let z = lp.point.z;
            if !(z > lo && z < hi) {
                continue;
            }
            let Some(i) = self.cell_of(&lp.point) else { continue };
            self.observed[i] = true;
            self.occupancy[i] = 1;
            if lp.label != 0 && lp.label <= NUM_SEMANTIC_CLASSES && z > self.label_z[i] {
                self.label_z[i] = z;
                self.semantic[i] = lp.label;
            }
        }
        Ok(())
    }
}

/// Free-function form of [`SemanticOccMap::integrate`] using the default margin.
pub fn integrate(map: &mut SemanticOccMap, cloud: &[LabeledPoint], agent_pose: &Pose, floor_z: f64, ceiling_z: f64) -> Result<()> {
    map.integrate(cloud, agent_pose, &HeightBand::new(floor_z, ceiling_z))
}

/// Non-navigable cells that share an edge with a navigable cell.
pub fn wall_surface_cells(grid: &GridWorld) -> Vec<bool> {
    let mut out = vec![false; grid.cell_count()];
    for (i, flag) in out.iter_mut().enumerate() {
        if grid.is_navigable(i) {
            continue;
        }
        *flag = [0, 2, 4, 6]
            .iter()
            .any(|&d| grid.offset(i, d).is_some_and(|j| grid.is_navigable(j)));
    }
    out
}

/// Whole-scene map: occupancy on wall surfaces, scene labels everywhere,
/// every cell observed.
pub fn known_map(grid: &GridWorld) -> SemanticOccMap {
    let mut m = SemanticOccMap::for_grid(grid, MapMode::Known);
    for (i, wall) in wall_surface_cells(grid).into_iter().enumerate() {
        m.occupancy[i] = u8::from(wall);
    }
    m.semantic.copy_from_slice(grid.semantic_labels());
    m.observed.fill(true);
    m
}

/// 14-channel egocentric tensor in channel-major order
/// (`channel * size * size + row * size + col`).
#[derive(Debug, Clone, PartialEq)]
pub struct EgocentricCrop {
    pub size: usize,
    pub data: Vec<f32>,
}

impl EgocentricCrop {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; CROP_CHANNELS * size * size],
        }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.size + row) * self.size + col]
    }

    pub fn channel_sum(&self, channel: usize) -> f32 {
        let n = self.size * self.size;
        self.data[channel * n..(channel + 1) * n].iter().sum()
    }
}

/// Heading-aligned window around the agent.
///
/// The agent sits at crop cell `(size/2, size/2)`; row 0 is the far edge in
/// front of it and column 0 its left. Each crop cell samples the nearest map
/// cell after rotating into the world frame; samples outside the map are zero.
pub fn crop_egocentric(map: &SemanticOccMap, agent: &Pose, size: usize, crop_resolution: f64) -> EgocentricCrop {
    let mut crop = EgocentricCrop::zeros(size);
    let (fx, fy) = agent.forward();
    let (rx, ry) = agent.right();
    let half = (size / 2) as f64;
    let plane = size * size;
    for row in 0..size {
        let ahead = (half - row as f64) * crop_resolution;
        for col in 0..size {
            let side = (col as f64 - half) * crop_resolution;
            let p = Point3::new(
                agent.position.x + ahead * fx + side * rx,
                agent.position.y + ahead * fy + side * ry,
                agent.position.z,
            );
            let Some(i) = map.cell_of(&p) else { continue };
            let at = row * size + col;
            let label = map.semantic[i];
            if label > 0 {
                crop.data[(label as usize - 1) * plane + at] = 1.0;
            }
            crop.data[(CROP_CHANNELS - 1) * plane + at] = f32::from(map.occupancy[i]);
        }
    }
    crop
}

/// Depth camera mounted on the agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics,
    /// Optical center height above the agent's floor.
    pub mount_height: f64,
    pub max_depth: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::from_hfov(64, 48, core::f64::consts::FRAC_PI_2),
            mount_height: DEFAULT_CAMERA_HEIGHT,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

/// First blocked cell along a planar ray.
///
/// Returns the distances at which the ray enters and leaves that cell, and
/// the cell itself. Leaving the grid counts as a hit on void (`None`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RayHit {
    pub enter: f64,
    pub exit: f64,
    pub cell: Option<usize>,
}

pub(crate) fn cast_ray(grid: &GridWorld, x0: f64, y0: f64, dx: f64, dy: f64, max_dist: f64) -> Option<RayHit> {
    let res = grid.resolution;
    // continuous cell coordinates, cell c spans [c - 0.5, c + 0.5)
    let gx = (x0 - grid.origin.x) / res + 0.5;
    let gy = (y0 - grid.origin.y) / res + 0.5;
    let mut cx = libm::floor(gx) as i64;
    let mut cy = libm::floor(gy) as i64;
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { res / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { res / dy.abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        (libm::floor(gx) + 1.0 - gx) * res / dx
    } else if dx < 0.0 {
        (gx - libm::floor(gx)) * res / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (libm::floor(gy) + 1.0 - gy) * res / dy
    } else if dy < 0.0 {
        (gy - libm::floor(gy)) * res / -dy
    } else {
        f64::INFINITY
    };
    let inside = |c: i64, r: i64| c >= 0 && r >= 0 && (c as usize) < grid.width && (r as usize) < grid.height;
    let mut t = 0.0;
    loop {
        if !inside(cx, cy) {
            return Some(RayHit { enter: t, exit: t, cell: None });
        }
        let idx = grid.index(cx as usize, cy as usize);
        if !grid.is_navigable(idx) {
            return Some(RayHit {
                enter: t,
                exit: t_max_x.min(t_max_y),
                cell: Some(idx),
            });
        }
        if t > max_dist {
            return None;
        }
        if t_max_x < t_max_y {
            t = t_max_x;
            t_max_x += t_delta_x;
            cx += step_x;
        } else {
            t = t_max_y;
            t_max_y += t_delta_y;
            cy += step_y;
        }
    }
}

/// Renders a synthetic depth + semantic frame from a grid scene.
///
/// Walls are extruded from floor to ceiling; the floor and ceiling are planes.
/// Wall returns are placed just inside the struck cell (halfway through the
/// ray's run across it, at most 0.05 cells deep) and carry its label; floor
/// and ceiling returns are unlabeled.
pub fn render_frames(grid: &GridWorld, rig: &CameraRig, agent: &Pose) -> (DepthFrame, SemanticFrame) {
    let k = rig.intrinsics;
    let cam_z = agent.position.z + rig.mount_height;
    let room = grid.ceiling_z - grid.floor_z;
    let above_floor = rig.mount_height;
    let below_ceiling = room - rig.mount_height;
    let (fx_, fy_) = agent.forward();
    let (rx, ry) = agent.right();
    let inset = 0.1 * grid.resolution;
    let mut depth = vec![0.0; k.width * k.height];
    let mut labels = vec![0u8; k.width * k.height];
    for u in 0..k.width {
        let xc = (u as f64 - k.cx) / k.fx;
        let (dx, dy) = (fx_ + xc * rx, fy_ + xc * ry);
        let norm = libm::hypot(dx, dy);
        let hit = cast_ray(grid, agent.position.x, agent.position.y, dx / norm, dy / norm, rig.max_depth * norm);
        // depth along the optical axis per unit of horizontal travel is 1 / norm
        // return from the middle of the ray's run through the struck cell
        let wall = hit.map(|h| ((h.enter + 0.5 * (h.exit - h.enter).min(inset)) / norm, h.cell));
        for v in 0..k.height {
            let yc = (v as f64 - k.cy) / k.fy;
            let mut best = f64::INFINITY;
            let mut label = 0u8;
            if let Some((d, cell)) = wall {
                best = d;
                label = cell.map_or(0, |c| grid.semantic(c));
            }
            if yc > 0.0 {
                let d = above_floor / yc;
                if d < best {
                    best = d;
                    label = 0;
                }
            } else if yc < 0.0 {
                let d = below_ceiling / -yc;
                if d < best {
                    best = d;
                    label = 0;
                }
            }
            if best <= rig.max_depth {
                depth[v * k.width + u] = best;
                labels[v * k.width + u] = label;
            }
        }
    }
    let mut camera = *agent;
    camera.position.z = cam_z;
    (
        DepthFrame {
            depth,
            intrinsics: k,
            pose: camera,
        },
        SemanticFrame {
            labels,
            width: k.width,
            height: k.height,
        },
    )
}

/// Renders the agent's view and folds it into `map`.
pub fn observe_into(map: &mut SemanticOccMap, grid: &GridWorld, rig: &CameraRig, agent: &Pose, margin: f64) -> Result<()> {
    if map.mode == MapMode::Known {
        return Ok(());
    }
    let (d, s) = render_frames(grid, rig, agent);
    let cloud = unproject(&d, Some(&s))?;
    let band = HeightBand {
        floor_z: grid.floor_z,
        ceiling_z: grid.ceiling_z,
        margin,
    };
    map.integrate(&cloud, agent, &band)
}

/// Scripted sweep: every `stride`-th navigable cell (in both axes), turning
/// through `headings` evenly spaced directions.
pub fn sweep_poses(grid: &GridWorld, stride: usize, headings: usize) -> Vec<Pose> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for r in (0..grid.height).step_by(stride) {
        for c in (0..grid.width).step_by(stride) {
            let i = grid.index(c, r);
            if !grid.is_navigable(i) {
                continue;
            }
            let mut p = grid.cell_center(i);
            p.z = grid.floor_z;
            for h in 0..headings {
                out.push(Pose::new(p, core::f64::consts::TAU * h as f64 / headings as f64));
            }
        }
    }
    out
}

/// Intersection-over-union of two boolean masks.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
