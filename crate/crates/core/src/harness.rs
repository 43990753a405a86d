//! Tour rollouts: alternating agent and oracle phases.
//!
//! Continuous agents live on grid cell centers. Headings are kept on a 15°
//! lattice; `Forward` steps to the 8-neighbor whose direction is nearest the
//! heading (multiples of 15° never sit exactly between two of them). Stepping
//! into a blocked cell, or diagonally past a blocked flank, leaves the agent in
//! place but still consumes the action. Discrete agents hop between adjacent
//! graph nodes.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::environment::{Scene, SceneKind};
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::mapper::{
    crop_egocentric, known_map, observe_into, CameraRig, EgocentricCrop, MapMode, ResetEvent, SemanticOccMap,
    DEFAULT_BAND_MARGIN, DEFAULT_CROP_SIZE,
};
use crate::metrics::{EpisodeTrace, OracleKind, OracleSegment, TourTrace};
use crate::tourgen::{Episode, Tour};

pub const DEFAULT_CORRECTION_RADIUS: f64 = 0.5;
pub const DEFAULT_MAX_STEPS_CONTINUOUS: usize = 500;
pub const DEFAULT_MAX_STEPS_DISCRETE: usize = 15;
/// Heading lattice: 24 steps of 15°.
pub const HEADING_STEPS: u32 = 24;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentAction {
    Forward,
    Left,
    Right,
    Stop,
    GotoNode(String),
}

impl AgentAction {
    /// Wire name (`forward`, `left`, `right`, `stop`, `goto`).
    pub fn name(&self) -> &'static str {
        match self {
            AgentAction::Forward => "forward",
            AgentAction::Left => "left",
            AgentAction::Right => "right",
            AgentAction::Stop => "stop",
            AgentAction::GotoNode(_) => "goto",
        }
    }
}

/// Everything a policy sees before acting (or while being moved by the oracle).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub instruction: String,
    pub pose: Pose,
    pub crop: Option<EgocentricCrop>,
    pub steps_remaining: usize,
    pub episode_index_in_tour: usize,
    pub passive: bool,
    /// Ids of adjacent nodes; empty in grid scenes.
    pub neighbors: Vec<String>,
}

/// Episode briefing handed to the policy before its agent phase.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeContext<'a> {
    pub episode: &'a Episode,
    pub index_in_tour: usize,
    pub scene: &'a Scene,
}

pub trait Policy {
    fn reset(&mut self, tour_id: &str) -> Result<()>;
    fn begin_episode(&mut self, ctx: &EpisodeContext<'_>) -> Result<()>;
    fn act(&mut self, obs: &Observation) -> Result<AgentAction>;
    fn observe_passive(&mut self, obs: &Observation) -> Result<()>;
    /// Whether observations should carry a map crop.
    fn wants_crop(&self) -> bool {
        true
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn reset(&mut self, tour_id: &str) -> Result<()> {
        (**self).reset(tour_id)
    }
    fn begin_episode(&mut self, ctx: &EpisodeContext<'_>) -> Result<()> {
        (**self).begin_episode(ctx)
    }
    fn act(&mut self, obs: &Observation) -> Result<AgentAction> {
        (**self).act(obs)
    }
    fn observe_passive(&mut self, obs: &Observation) -> Result<()> {
        (**self).observe_passive(obs)
    }
    fn wants_crop(&self) -> bool {
        (**self).wants_crop()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `None` picks 500 for grid scenes and 15 for graph scenes.
    pub max_steps_per_episode: Option<usize>,
    pub oracle_correction_radius: f64,
    /// `None` disables mapping.
    pub map_mode: Option<MapMode>,
    pub seed: u64,
    pub rig: CameraRig,
    pub crop_size: usize,
    pub band_margin: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_steps_per_episode: None,
            oracle_correction_radius: DEFAULT_CORRECTION_RADIUS,
            map_mode: Some(MapMode::Episodic),
            seed: 0,
            rig: CameraRig::default(),
            crop_size: DEFAULT_CROP_SIZE,
            band_margin: DEFAULT_BAND_MARGIN,
        }
    }
}

impl RunConfig {
    pub fn max_steps_for(&self, scene: &Scene) -> usize {
        self.max_steps_per_episode.unwrap_or(match scene.kind {
            SceneKind::Grid(_) => DEFAULT_MAX_STEPS_CONTINUOUS,
            SceneKind::Graph(_) => DEFAULT_MAX_STEPS_DISCRETE,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps_per_episode == Some(0) {
            return Err(Error::InvalidInput("max_steps_per_episode must be at least 1".into()));
        }
        if !(self.oracle_correction_radius > 0.0) {
            return Err(Error::InvalidInput("oracle_correction_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Nearest lattice heading step for an angle in radians.
pub fn heading_step_of(theta: f64) -> u32 {
    let s = libm::round(crate::geom::normalize_heading(theta) / TAU * HEADING_STEPS as f64) as u32;
    s % HEADING_STEPS
}

fn step_angle(step: u32) -> f64 {
    step as f64 * TAU / HEADING_STEPS as f64
}

/// 8-neighbor direction a heading step moves toward.
fn direction_of(step: u32) -> usize {
    (((step + 1) / 3) % 8) as usize
}

/// Agent location plus heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub location: usize,
    /// Lattice heading (grid scenes).
    pub heading_step: u32,
    /// Free heading (graph scenes).
    pub heading: f64,
}

impl AgentState {
    pub fn new(scene: &Scene, location: usize, heading: f64) -> Self {
        let heading_step = heading_step_of(heading);
        let heading = match scene.kind {
            SceneKind::Grid(_) => step_angle(heading_step),
            SceneKind::Graph(_) => crate::geom::normalize_heading(heading),
        };
        Self {
            location,
            heading_step,
            heading,
        }
    }

    pub fn pose(&self, scene: &Scene) -> Pose {
        Pose::new(scene.location(self.location), self.heading)
    }

    /// Applies one action. Returns whether the location changed.
    pub fn apply(&mut self, scene: &Scene, action: &AgentAction) -> Result<bool> {
        match (&scene.kind, action) {
            (_, AgentAction::Stop) => Ok(false),
            (SceneKind::Grid(g), AgentAction::Forward) => match g.can_step(self.location, direction_of(self.heading_step)) {
                Some(next) => {
                    self.location = next;
                    Ok(true)
                }
                None => Ok(false),
            },
            (SceneKind::Grid(_), AgentAction::Left) => {
                self.heading_step = (self.heading_step + 1) % HEADING_STEPS;
                self.heading = step_angle(self.heading_step);
                Ok(false)
            }
            (SceneKind::Grid(_), AgentAction::Right) => {
                self.heading_step = (self.heading_step + HEADING_STEPS - 1) % HEADING_STEPS;
                self.heading = step_angle(self.heading_step);
                Ok(false)
            }
            (SceneKind::Graph(g), AgentAction::GotoNode(id)) => {
                let target = g
                    .index_of(id)
                    .filter(|&t| g.is_adjacent(self.location, t))
                    .ok_or_else(|| {
                        Error::ProtocolViolation(format!("goto {id} is not adjacent to node {}", g.id(self.location)))
                    })?;
                let (a, b) = (g.position(self.location), g.position(target));
                if a.planar_distance(&b) > 0.0 {
                    self.heading = crate::geom::normalize_heading(libm::atan2(b.y - a.y, b.x - a.x));
                }
                self.location = target;
                Ok(true)
            }
            (SceneKind::Grid(_), AgentAction::GotoNode(_)) => {
                Err(Error::ProtocolViolation("goto is not available in grid scenes".into()))
            }
            (SceneKind::Graph(_), a) => Err(Error::ProtocolViolation(format!(
                "{} is not available in graph scenes",
                a.name()
            ))),
        }
    }

    /// Every action legal in the current state, in a fixed order.
    pub fn legal_actions(&self, scene: &Scene) -> Vec<AgentAction> {
        match &scene.kind {
            SceneKind::Grid(_) => alloc::vec![AgentAction::Forward, AgentAction::Left, AgentAction::Right, AgentAction::Stop],
            SceneKind::Graph(g) => {
                let mut v: Vec<AgentAction> = g
                    .neighbors(self.location)
                    .iter()
                    .map(|&(n, _)| AgentAction::GotoNode(g.id(n).into()))
                    .collect();
                v.push(AgentAction::Stop);
                v
            }
        }
    }
}

/// One action that moves `state` toward the adjacent location `target`.
fn step_toward(scene: &Scene, state: &AgentState, target: usize) -> AgentAction {
    match &scene.kind {
        SceneKind::Graph(g) => AgentAction::GotoNode(g.id(target).into()),
        SceneKind::Grid(g) => {
            let d = g
                .direction_between(state.location, target)
                .expect("route steps are 8-neighbors");
            if direction_of(state.heading_step) == d {
                return AgentAction::Forward;
            }
            let want = 3 * d as u32;
            let diff = (want + HEADING_STEPS - state.heading_step) % HEADING_STEPS;
            if diff <= HEADING_STEPS / 2 {
                AgentAction::Left
            } else {
                AgentAction::Right
            }
        }
    }
}

/// Turns needed to reach a heading step, shortest way round.
fn turns_to(scene: &Scene, state: &AgentState, heading: f64) -> Vec<AgentAction> {
    if scene.grid().is_none() {
        return Vec::new();
    }
    let want = heading_step_of(heading);
    let diff = (want + HEADING_STEPS - state.heading_step) % HEADING_STEPS;
    if diff <= HEADING_STEPS / 2 {
        alloc::vec![AgentAction::Left; diff as usize]
    } else {
        alloc::vec![AgentAction::Right; (HEADING_STEPS - diff) as usize]
    }
}

/// Location sequence threading an episode's reference points.
fn reference_route(scene: &Scene, episode: &Episode) -> Result<Vec<usize>> {
    let ctx = |e: Error| e.with_context(format!("episode {}", episode.episode_id));
    let mut route: Vec<usize> = Vec::new();
    for p in &episode.path {
        let loc = scene.snap(p).map_err(ctx)?;
        match route.last() {
            None => route.push(loc),
            Some(&last) if last == loc => {}
            Some(&last) => {
                let leg = scene.shortest_route(last, loc).map_err(ctx)?;
                route.extend_from_slice(&leg[1..]);
            }
        }
    }
    Ok(route)
}

/// Follows a location route, rerouting back onto it after deviations.
#[derive(Debug, Clone)]
struct RouteTracker {
    route: Vec<usize>,
    k: usize,
}

impl RouteTracker {
    fn next(&mut self, scene: &Scene, state: &AgentState) -> Result<AgentAction> {
        let cur = state.location;
        if let Some(j) = self.route[self.k..].iter().position(|&c| c == cur) {
            self.k += j;
        }
        if self.route[self.k] == cur {
            if self.k + 1 == self.route.len() {
                return Ok(AgentAction::Stop);
            }
            return Ok(step_toward(scene, state, self.route[self.k + 1]));
        }
        let back = scene.shortest_route(cur, self.route[self.k])?;
        Ok(step_toward(scene, state, back[1]))
    }
}

/// The action sequence that walks an episode's reference path and stops.
pub fn oracle_follower(scene: &Scene, episode: &Episode) -> Result<Vec<AgentAction>> {
    let route = reference_route(scene, episode)?;
    let mut state = AgentState::new(scene, route[0], episode.start_heading);
    let mut tracker = RouteTracker { route, k: 0 };
    let mut out = Vec::new();
    loop {
        let a = tracker.next(scene, &state)?;
        state.apply(scene, &a)?;
        let stop = a == AgentAction::Stop;
        out.push(a);
        if stop {
            return Ok(out);
        }
    }
}

/// Oracle follower that, with probability `p_error` per step, substitutes a
/// uniformly random legal action. After a deviation it routes back to the
/// first reference location it has not yet reached.
#[derive(Debug, Clone)]
pub struct NoisyOracle<'s> {
    scene: &'s Scene,
    p_error: f64,
    seed: u64,
    rng: ChaCha8Rng,
    tracker: Option<RouteTracker>,
    state: Option<AgentState>,
}

impl<'s> NoisyOracle<'s> {
    pub fn new(scene: &'s Scene, p_error: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_error) {
            return Err(Error::InvalidInput(format!("p_error {p_error} outside [0, 1]")));
        }
        Ok(Self {
            scene,
            p_error,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tracker: None,
            state: None,
        })
    }
}

/// Seed for one tour, independent of the order tours are run in.
pub fn tour_seed(seed: u64, tour_id: &str) -> u64 {
    // FNV-1a over the id, folded with the run seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tour_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn state_from_obs(scene: &Scene, obs: &Observation) -> Result<AgentState> {
    let loc = scene.snap(&obs.pose.position)?;
    Ok(AgentState::new(scene, loc, obs.pose.heading()))
}

impl Policy for NoisyOracle<'_> {
    fn reset(&mut self, tour_id: &str) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(tour_seed(self.seed, tour_id));
        Ok(())
    }

    fn begin_episode(&mut self, ctx: &EpisodeContext<'_>) -> Result<()> {
        let route = reference_route(self.scene, ctx.episode)?;
        self.tracker = Some(RouteTracker { route, k: 0 });
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<AgentAction> {
        let state = state_from_obs(self.scene, obs)?;
        self.state = Some(state);
        let tracker = self
            .tracker
            .as_mut()
            .ok_or_else(|| Error::ProtocolViolation("act before episode".into()))?;
        // draw every step so the noise stream does not depend on p_error
        let roll: f64 = self.rng.gen();
        let legal = state.legal_actions(self.scene);
        let pick = self.rng.gen_range(0..legal.len());
        if roll < self.p_error {
            return Ok(legal[pick].clone());
        }
        tracker.next(self.scene, &state)
    }

    fn observe_passive(&mut self, _obs: &Observation) -> Result<()> {
        Ok(())
    }

    fn wants_crop(&self) -> bool {
        false
    }
}

/// Stops immediately every episode.
#[derive(Debug, Clone, Copy, Default)]
pub struct StopPolicy;

impl Policy for StopPolicy {
    fn reset(&mut self, _tour_id: &str) -> Result<()> {
        Ok(())
    }
    fn begin_episode(&mut self, _ctx: &EpisodeContext<'_>) -> Result<()> {
        Ok(())
    }
    fn act(&mut self, _obs: &Observation) -> Result<AgentAction> {
        Ok(AgentAction::Stop)
    }
    fn observe_passive(&mut self, _obs: &Observation) -> Result<()> {
        Ok(())
    }
    fn wants_crop(&self) -> bool {
        false
    }
}

/// Uniformly random legal actions.
#[derive(Debug, Clone)]
pub struct RandomPolicy<'s> {
    inner: NoisyOracle<'s>,
}

impl<'s> RandomPolicy<'s> {
    pub fn new(scene: &'s Scene, seed: u64) -> Self {
        Self {
            inner: NoisyOracle::new(scene, 1.0, seed).expect("1.0 is a valid probability"),
        }
    }
}

impl Policy for RandomPolicy<'_> {
    fn reset(&mut self, tour_id: &str) -> Result<()> {
        self.inner.reset(tour_id)
    }
    fn begin_episode(&mut self, ctx: &EpisodeContext<'_>) -> Result<()> {
        self.inner.begin_episode(ctx)
    }
    fn act(&mut self, obs: &Observation) -> Result<AgentAction> {
        self.inner.act(obs)
    }
    fn observe_passive(&mut self, _obs: &Observation) -> Result<()> {
        Ok(())
    }
    fn wants_crop(&self) -> bool {
        false
    }
}

/// A rollout that stopped early, with everything recorded up to the error.
#[derive(Debug, Clone, PartialEq)]
pub struct TourFailure {
    pub error: Error,
    pub partial: TourTrace,
}

impl core::fmt::Display for TourFailure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "tour {}: {}", self.partial.tour_id, self.error)
    }
}

struct Rollout<'a, P: Policy + ?Sized> {
    scene: &'a Scene,
    config: &'a RunConfig,
    policy: &'a mut P,
    map: Option<SemanticOccMap>,
    state: AgentState,
    trace: TourTrace,
}

impl<P: Policy + ?Sized> Rollout<'_, P> {
    fn update_map(&mut self) -> Result<()> {
        let (Some(map), Some(grid)) = (self.map.as_mut(), self.scene.grid()) else {
            return Ok(());
        };
        let mut pose = self.state.pose(self.scene);
        pose.position.z = grid.floor_z;
        observe_into(map, grid, &self.config.rig, &pose, self.config.band_margin)
    }

    fn observation(&self, instruction: &str, steps_remaining: usize, index: usize, passive: bool) -> Observation {
        let pose = self.state.pose(self.scene);
        let crop = match &self.map {
            Some(m) if self.policy.wants_crop() => Some(crop_egocentric(m, &pose, self.config.crop_size, m.resolution)),
            _ => None,
        };
        let neighbors = match self.scene.graph() {
            Some(g) => g.neighbors(self.state.location).iter().map(|&(n, _)| g.id(n).into()).collect(),
            None => Vec::new(),
        };
        Observation {
            instruction: instruction.into(),
            pose,
            crop,
            steps_remaining,
            episode_index_in_tour: index,
            passive,
            neighbors,
        }
    }

    /// Drives the agent with oracle actions, delivering passive observations.
    fn oracle_drive(&mut self, kind: OracleKind, episode_id: &str, index: usize, target: usize, heading: Option<f64>) -> Result<()> {
        let route = self
            .scene
            .shortest_route(self.state.location, target)
            .map_err(|e| e.with_context(format!("oracle {} after episode {episode_id}", kind.as_str())))?;
        let mut seg = OracleSegment {
            kind,
            episode_id: episode_id.into(),
            path: alloc::vec![self.scene.location(self.state.location)],
            actions: Vec::new(),
        };
        let mut tracker = RouteTracker { route, k: 0 };
        loop {
            let a = tracker.next(self.scene, &self.state)?;
            if a == AgentAction::Stop {
                break;
            }
            self.oracle_step(&mut seg, index, a)?;
        }
        if let Some(h) = heading {
            for a in turns_to(self.scene, &self.state, h) {
                self.oracle_step(&mut seg, index, a)?;
            }
            if self.scene.graph().is_some() {
                self.state.heading = crate::geom::normalize_heading(h);
            }
        }
        self.trace.oracle_segments.push(seg);
        Ok(())
    }

    fn oracle_step(&mut self, seg: &mut OracleSegment, index: usize, a: AgentAction) -> Result<()> {
        if self.state.apply(self.scene, &a)? {
            seg.path.push(self.scene.location(self.state.location));
        }
        seg.actions.push(a);
        self.update_map()?;
        let obs = self.observation("", 0, index, true);
        self.policy.observe_passive(&obs)
    }

    fn run_episode(&mut self, episode: &Episode, index: usize, next: Option<&Episode>) -> Result<()> {
        if let Some(m) = self.map.as_mut() {
            m.reset(ResetEvent::EpisodeStart);
        }
        self.update_map()?;
        self.policy.begin_episode(&EpisodeContext {
            episode,
            index_in_tour: index,
            scene: self.scene,
        })?;
        let max_steps = self.config.max_steps_for(self.scene);
        let mut ep = EpisodeTrace {
            episode_id: episode.episode_id.clone(),
            agent_path: alloc::vec![self.scene.location(self.state.location)],
            reference_path: episode.path.clone(),
            final_position: self.scene.location(self.state.location),
            stop_called: false,
            actions: Vec::new(),
        };
        let result = self.agent_phase(episode, index, max_steps, &mut ep);
        ep.final_position = self.scene.location(self.state.location);
        let ne = self.scene.geodesic_distance(&ep.final_position, &episode.goal());
        self.trace.episode_traces.push(ep);
        result?;
        let ne = ne.map_err(|e| e.with_context(format!("episode {}", episode.episode_id)))?;
        if ne > self.config.oracle_correction_radius {
            let goal = self.scene.snap(&episode.goal())?;
            self.oracle_drive(OracleKind::GoalCorrection, &episode.episode_id, index, goal, None)?;
        }
        if let Some(next) = next {
            let start = self
                .scene
                .snap(&next.start())
                .map_err(|e| e.with_context(format!("episode {}", next.episode_id)))?;
            self.oracle_drive(OracleKind::Transit, &episode.episode_id, index, start, Some(next.start_heading))?;
        }
        Ok(())
    }

    fn agent_phase(&mut self, episode: &Episode, index: usize, max_steps: usize, ep: &mut EpisodeTrace) -> Result<()> {
        for t in 0..max_steps {
            let obs = self.observation(&episode.instruction, max_steps - t, index, false);
            let a = self.policy.act(&obs)?;
            let moved = self.state.apply(self.scene, &a)?;
            let stop = a == AgentAction::Stop;
            ep.actions.push(a);
            if stop {
                ep.stop_called = true;
                return Ok(());
            }
            if moved {
                ep.agent_path.push(self.scene.location(self.state.location));
                self.update_map()?;
            }
        }
        Ok(())
    }
}

/// Resolves a tour's episode ids.
pub fn tour_episodes<'e>(tour: &Tour, episodes: &'e BTreeMap<String, Episode>) -> Result<Vec<&'e Episode>> {
    tour.episodes
        .iter()
        .map(|id| episodes.get(id).ok_or_else(|| Error::MissingEpisode(id.clone())))
        .collect()
}

/// Runs one tour: for each episode an agent phase, an optional goal
/// correction when the agent stops more than the correction radius from the
/// goal, and a transit to the next episode's start.
pub fn run_tour<P: Policy + ?Sized>(
    scene: &Scene,
    tour: &Tour,
    episodes: &BTreeMap<String, Episode>,
    policy: &mut P,
    config: &RunConfig,
) -> core::result::Result<TourTrace, TourFailure> {
    run_tour_with_map(scene, tour, episodes, policy, config).map(|(t, _)| t)
}

/// [`run_tour`], also returning the map as it stood at the end of the tour.
pub fn run_tour_with_map<P: Policy + ?Sized>(
    scene: &Scene,
    tour: &Tour,
    episodes: &BTreeMap<String, Episode>,
    policy: &mut P,
    config: &RunConfig,
) -> core::result::Result<(TourTrace, Option<SemanticOccMap>), TourFailure> {
    let fail = |error: Error, partial: TourTrace| TourFailure { error, partial };
    let empty = || TourTrace::new(tour.tour_id.clone());
    if let Err(e) = config.validate() {
        return Err(fail(e, empty()));
    }
    let eps = match tour_episodes(tour, episodes) {
        Ok(v) if !v.is_empty() => v,
        Ok(_) => {
            return Err(fail(
                Error::EmptySequence {
                    context: Some(format!("tour {}", tour.tour_id)),
                },
                empty(),
            ))
        }
        Err(e) => return Err(fail(e, empty())),
    };
    let start = match scene.snap(&eps[0].start()) {
        Ok(s) => s,
        Err(e) => return Err(fail(e.with_context(format!("episode {}", eps[0].episode_id)), empty())),
    };
    let map = match (config.map_mode, scene.grid()) {
        (Some(MapMode::Known), Some(g)) => Some(known_map(g)),
        (Some(mode), Some(g)) => Some(SemanticOccMap::for_grid(g, mode)),
        _ => None,
    };
    let mut r = Rollout {
        scene,
        config,
        policy,
        map,
        state: AgentState::new(scene, start, eps[0].start_heading),
        trace: empty(),
    };
    if let Some(m) = r.map.as_mut() {
        m.reset(ResetEvent::TourStart);
    }
    if let Err(e) = r.policy.reset(&tour.tour_id) {
        return Err(fail(e, r.trace));
    }
    for (i, ep) in eps.iter().enumerate() {
        if let Err(e) = r.run_episode(ep, i, eps.get(i + 1).copied()) {
            return Err(fail(e, r.trace));
        }
    }
    Ok((r.trace, r.map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;
    use crate::environment::{GridWorld, NavGraph};
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    /// Two rooms joined by a doorway, 0.25 m cells.
    fn rooms() -> Scene {
        let (w, h) = (30, 14);
        let mut g = GridWorld::blank(0.25, Point3::default(), w, h, 0.0, 2.5).unwrap();
        for r in 0..h {
            for c in 0..w {
                let wall = r == 0 || c == 0 || r == h - 1 || c == w - 1 || (c == 15 && r != 7);
                g.set_cell(c, r, !wall, if wall { 1 } else { 2 });
            }
        }
        Scene::new("rooms", SceneKind::Grid(g))
    }

    fn cell(scene: &Scene, c: usize, r: usize) -> Point3 {
        let g = scene.grid().unwrap();
        g.cell_center(g.index(c, r))
    }

    fn episode(scene: &Scene, id: &str, a: Point3, b: Point3, heading: f64) -> Episode {
        Episode {
            episode_id: id.into(),
            path_id: id.into(),
            scene_id: scene.scene_id.clone(),
            path: scene.shortest_path(&a, &b).unwrap(),
            start_heading: heading,
            instruction_id: id.into(),
            instruction: format!("go somewhere ({id})"),
        }
    }

    fn tour_of(eps: &[Episode]) -> (Tour, BTreeMap<String, Episode>) {
        let tour = Tour {
            tour_id: "t0".into(),
            scene_id: eps[0].scene_id.clone(),
            episodes: eps.iter().map(|e| e.episode_id.clone()).collect(),
        };
        let map = eps.iter().map(|e| (e.episode_id.clone(), e.clone())).collect();
        (tour, map)
    }

    fn three_episodes(scene: &Scene) -> Vec<Episode> {
        vec![
            episode(scene, "e0", cell(scene, 2, 2), cell(scene, 12, 10), 0.0),
            episode(scene, "e1", cell(scene, 13, 3), cell(scene, 25, 11), 1.0),
            episode(scene, "e2", cell(scene, 20, 2), cell(scene, 3, 12), 4.0),
        ]
    }

    fn no_map() -> RunConfig {
        RunConfig {
            map_mode: None,
            ..RunConfig::default()
        }
    }

    fn abc() -> Scene {
        let g = NavGraph::new(
            [
                ("A".to_string(), Point3::new(0.0, 0.0, 0.0)),
                ("B".to_string(), Point3::new(2.0, 0.0, 0.0)),
                ("C".to_string(), Point3::new(4.0, 1.0, 0.0)),
                ("D".to_string(), Point3::new(2.0, 3.0, 0.0)),
            ],
            [
                ("A".to_string(), "B".to_string()),
                ("B".to_string(), "C".to_string()),
                ("B".to_string(), "D".to_string()),
            ],
        )
        .unwrap();
        Scene::new("abc", SceneKind::Graph(g))
    }

    #[test]
    fn heading_lattice_never_ties() {
        for s in 0..HEADING_STEPS {
            let theta = step_angle(s);
            let exact = theta / (core::f64::consts::PI / 4.0);
            let frac = exact - libm::floor(exact);
            assert!((frac - 0.5).abs() > 0.1);
            assert_eq!(direction_of(s), (libm::round(exact) as usize) % 8, "step {s}");
        }
    }

    #[test]
    fn follower_single_point() {
        let s = rooms();
        let mut e = episode(&s, "x", cell(&s, 3, 3), cell(&s, 3, 3), 0.0);
        e.path.truncate(1);
        assert_eq!(oracle_follower(&s, &e).unwrap(), vec![AgentAction::Stop]);
    }

    #[test]
    fn follower_straight_meter() {
        let s = rooms();
        let e = episode(&s, "x", cell(&s, 2, 5), cell(&s, 6, 5), 0.0);
        let mut want = vec![AgentAction::Forward; 4];
        want.push(AgentAction::Stop);
        assert_eq!(oracle_follower(&s, &e).unwrap(), want);
    }

    #[test]
    fn follower_on_graph() {
        let s = abc();
        let e = Episode {
            episode_id: "g".into(),
            path_id: "g".into(),
            scene_id: "abc".into(),
            path: vec![Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0), Point3::new(4.0, 1.0, 0.0)],
            start_heading: 0.0,
            instruction_id: "g".into(),
            instruction: "walk".into(),
        };
        assert_eq!(
            oracle_follower(&s, &e).unwrap(),
            vec![AgentAction::GotoNode("B".into()), AgentAction::GotoNode("C".into()), AgentAction::Stop]
        );
    }

    #[test]
    fn oracle_tour_reproduces_references() {
        let s = rooms();
        let eps = three_episodes(&s);
        let (tour, map) = tour_of(&eps);
        let mut p = NoisyOracle::new(&s, 0.0, 3).unwrap();
        let trace = run_tour(&s, &tour, &map, &mut p, &no_map()).unwrap();
        assert_eq!(trace.episode_traces.len(), 3);
        for (t, e) in trace.episode_traces.iter().zip(&eps) {
            assert_eq!(t.agent_path, e.path);
            assert!(t.stop_called);
        }
        assert!(trace.oracle_segments.iter().all(|s| s.kind == OracleKind::Transit));
        assert_eq!(trace.oracle_segments.len(), 2);
        // actions match the standalone follower
        for (t, e) in trace.episode_traces.iter().zip(&eps) {
            assert_eq!(t.actions, oracle_follower(&s, e).unwrap());
        }
    }

    #[test]
    fn stop_policy_hand_trace() {
        let s = rooms();
        let eps = vec![
            episode(&s, "far", cell(&s, 2, 2), cell(&s, 10, 2), 0.0),
            // start-to-goal 0.25 m: inside the correction radius
            episode(&s, "near", cell(&s, 20, 5), cell(&s, 21, 5), 0.0),
        ];
        let (tour, map) = tour_of(&eps);
        let trace = run_tour(&s, &tour, &map, &mut StopPolicy, &no_map()).unwrap();
        for t in &trace.episode_traces {
            assert_eq!(t.agent_path.len(), 1);
            assert_eq!(t.actions, vec![AgentAction::Stop]);
        }
        let kinds: Vec<(OracleKind, &str)> = trace.oracle_segments.iter().map(|s| (s.kind, s.episode_id.as_str())).collect();
        assert_eq!(kinds, vec![(OracleKind::GoalCorrection, "far"), (OracleKind::Transit, "far")]);
        let corr = &trace.oracle_segments[0];
        assert_eq!(corr.path.first(), Some(&cell(&s, 2, 2)));
        assert_eq!(corr.path.last(), Some(&cell(&s, 10, 2)));
        let transit = &trace.oracle_segments[1];
        assert_eq!(transit.path.last(), Some(&cell(&s, 20, 5)));
    }

    #[test]
    fn noisy_zero_matches_oracle_and_is_deterministic() {
        let s = rooms();
        let eps = three_episodes(&s);
        let (tour, map) = tour_of(&eps);
        let a = run_tour(&s, &tour, &map, &mut NoisyOracle::new(&s, 0.0, 1).unwrap(), &no_map()).unwrap();
        let b = run_tour(&s, &tour, &map, &mut NoisyOracle::new(&s, 0.0, 99).unwrap(), &no_map()).unwrap();
        assert_eq!(a, b);
        let c = run_tour(&s, &tour, &map, &mut NoisyOracle::new(&s, 0.4, 5).unwrap(), &no_map()).unwrap();
        let d = run_tour(&s, &tour, &map, &mut NoisyOracle::new(&s, 0.4, 5).unwrap(), &no_map()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn illegal_goto_aborts_with_partial_trace() {
        struct Jumper;
        impl Policy for Jumper {
            fn reset(&mut self, _: &str) -> Result<()> {
                Ok(())
            }
            fn begin_episode(&mut self, _: &EpisodeContext<'_>) -> Result<()> {
                Ok(())
            }
            fn act(&mut self, _: &Observation) -> Result<AgentAction> {
                Ok(AgentAction::GotoNode("C".into()))
            }
            fn observe_passive(&mut self, _: &Observation) -> Result<()> {
                Ok(())
            }
        }
        let s = abc();
        let e = Episode {
            episode_id: "g".into(),
            path_id: "g".into(),
            scene_id: "abc".into(),
            path: vec![Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)],
            start_heading: 0.0,
            instruction_id: "g".into(),
            instruction: "walk".into(),
        };
        let (tour, map) = tour_of(&[e]);
        let err = run_tour(&s, &tour, &map, &mut Jumper, &no_map()).unwrap_err();
        assert!(matches!(err.error, Error::ProtocolViolation(_)));
        assert_eq!(err.partial.episode_traces.len(), 1);
        assert_eq!(err.partial.episode_traces[0].agent_path.len(), 1);
    }

    #[test]
    fn missing_episode_reported() {
        let s = rooms();
        let eps = three_episodes(&s);
        let (mut tour, map) = tour_of(&eps);
        tour.episodes.push("ghost".into());
        let err = run_tour(&s, &tour, &map, &mut StopPolicy, &no_map()).unwrap_err();
        assert_eq!(err.error, Error::MissingEpisode("ghost".into()));
    }

    #[test]
    fn graph_budget_defaults_to_fifteen() {
        let s = abc();
        let e = Episode {
            episode_id: "g".into(),
            path_id: "g".into(),
            scene_id: "abc".into(),
            path: vec![Point3::new(0.0, 0.0, 0.0), Point3::new(4.0, 1.0, 0.0)],
            start_heading: 0.0,
            instruction_id: "g".into(),
            instruction: "walk".into(),
        };
        let (tour, map) = tour_of(&[e]);
        struct Pacer(bool);
        impl Policy for Pacer {
            fn reset(&mut self, _: &str) -> Result<()> {
                Ok(())
            }
            fn begin_episode(&mut self, _: &EpisodeContext<'_>) -> Result<()> {
                Ok(())
            }
            fn act(&mut self, _: &Observation) -> Result<AgentAction> {
                self.0 = !self.0;
                Ok(AgentAction::GotoNode(if self.0 { "B" } else { "A" }.into()))
            }
            fn observe_passive(&mut self, _: &Observation) -> Result<()> {
                Ok(())
            }
        }
        let t = run_tour(&s, &tour, &map, &mut Pacer(false), &no_map()).unwrap();
        assert_eq!(t.episode_traces[0].actions.len(), 15);
        assert!(!t.episode_traces[0].stop_called);
    }

    #[test]
    fn passive_observations_cover_every_oracle_step() {
        struct Counter {
            passive: usize,
            crops: usize,
        }
        impl Policy for Counter {
            fn reset(&mut self, _: &str) -> Result<()> {
                Ok(())
            }
            fn begin_episode(&mut self, _: &EpisodeContext<'_>) -> Result<()> {
                Ok(())
            }
            fn act(&mut self, o: &Observation) -> Result<AgentAction> {
                assert!(!o.passive);
                self.crops += usize::from(o.crop.is_some());
                Ok(AgentAction::Stop)
            }
            fn observe_passive(&mut self, o: &Observation) -> Result<()> {
                assert!(o.passive);
                self.passive += 1;
                Ok(())
            }
        }
        let s = rooms();
        let eps = three_episodes(&s);
        let (tour, map) = tour_of(&eps);
        let mut c = Counter { passive: 0, crops: 0 };
        let cfg = RunConfig {
            map_mode: Some(MapMode::Iterative),
            ..RunConfig::default()
        };
        let (t, m) = run_tour_with_map(&s, &tour, &map, &mut c, &cfg).unwrap();
        let oracle_actions: usize = t.oracle_segments.iter().map(|s| s.actions.len()).sum();
        assert_eq!(c.passive, oracle_actions);
        assert_eq!(c.crops, 3);
        assert!(m.unwrap().observed_count() > 0);
    }

    #[test]
    fn map_modes_differ_in_memory() {
        let s = rooms();
        let eps = three_episodes(&s);
        let (tour, map) = tour_of(&eps);
        let run = |mode| {
            let cfg = RunConfig {
                map_mode: Some(mode),
                ..RunConfig::default()
            };
            let (_, m) = run_tour_with_map(&s, &tour, &map, &mut StopPolicy, &cfg).unwrap();
            m.unwrap()
        };
        let episodic = run(MapMode::Episodic);
        let iterative = run(MapMode::Iterative);
        let known = run(MapMode::Known);
        assert!(iterative.observed_count() > episodic.observed_count());
        assert_eq!(known, crate::mapper::known_map(s.grid().unwrap()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn phase_invariants(seed in 0u64..10_000, p in 0.0f64..=1.0, budget in 1usize..60) {
            let s = rooms();
            let eps = three_episodes(&s);
            let (tour, map) = tour_of(&eps);
            let cfg = RunConfig { max_steps_per_episode: Some(budget), ..no_map() };
            let mut pol = NoisyOracle::new(&s, p, seed).unwrap();
            let t = run_tour(&s, &tour, &map, &mut pol, &cfg).unwrap();
            prop_assert_eq!(t.episode_traces.len(), 3);
            for (i, (et, e)) in t.episode_traces.iter().zip(&eps).enumerate() {
                prop_assert!(et.actions.len() <= budget);
                prop_assert_eq!(et.agent_path[0], e.start());
                let ne = s.geodesic_distance(&et.final_position, &e.goal()).unwrap();
                let corrections = t.oracle_segments.iter()
                    .filter(|o| o.kind == OracleKind::GoalCorrection && o.episode_id == e.episode_id).count();
                prop_assert_eq!(corrections, usize::from(ne > 0.5));
                let transits = t.oracle_segments.iter()
                    .filter(|o| o.kind == OracleKind::Transit && o.episode_id == e.episode_id).count();
                prop_assert_eq!(transits, usize::from(i + 1 < eps.len()));
                // agent path is exactly the positions reached by agent moves
                let mut st = AgentState::new(&s, s.snap(&e.start()).unwrap(), e.start_heading);
                let mut replay = vec![e.start()];
                for a in &et.actions {
                    if st.apply(&s, a).unwrap() {
                        replay.push(s.location(st.location));
                    }
                }
                prop_assert_eq!(&replay, &et.agent_path);
            }
        }
    }
}
