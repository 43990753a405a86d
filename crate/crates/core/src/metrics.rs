//! Path-alignment and success metrics.
//!
//! nDTW scores one candidate path `Q` against a reference `R` as
//! `exp(-DTW(R, Q) / (|R| * d_th))`. For tours the candidate and reference are
//! the concatenations of the per-episode agent paths and reference paths, with
//! every cross-episode pairing forbidden. Because both concatenations list the
//! episodes in the same order, a monotone warping path can only cross between
//! episodes at block corners, so the masked DTW equals the sum of per-episode
//! DTW costs. [`tour_dtw`] relies on that identity; the test suite checks it
//! against the full masked matrix.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::environment::{path_length, Scene};
use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::harness::AgentAction;

pub const DEFAULT_D_TH: f64 = 3.0;
pub const DEFAULT_SUCCESS_RADIUS: f64 = 3.0;

/// Pointwise distance used inside DTW and for goal distances.
pub trait PointDistance {
    fn distance(&self, a: &Point3, b: &Point3) -> Result<f64>;

    /// Distances from `a` to each of `bs`.
    fn one_to_many(&self, a: &Point3, bs: &[Point3]) -> Result<Vec<f64>> {
        bs.iter().map(|b| self.distance(a, b)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl PointDistance for Euclidean {
    fn distance(&self, a: &Point3, b: &Point3) -> Result<f64> {
        Ok(a.distance(b))
    }
}

/// Graph or grid shortest-path distance within a scene.
#[derive(Debug, Clone, Copy)]
pub struct Geodesic<'a>(pub &'a Scene);

impl PointDistance for Geodesic<'_> {
    fn distance(&self, a: &Point3, b: &Point3) -> Result<f64> {
        self.0.geodesic_distance(a, b)
    }

    fn one_to_many(&self, a: &Point3, bs: &[Point3]) -> Result<Vec<f64>> {
        let src = self.0.snap(a)?;
        let targets = bs.iter().map(|b| self.0.snap(b)).collect::<Result<Vec<_>>>()?;
        if targets.iter().all(|&t| t == src) {
            return Ok(vec![0.0; bs.len()]);
        }
        let field = self.0.distance_field(src);
        Ok(targets.into_iter().map(|t| field.dist[t]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    #[default]
    Euclidean,
    Geodesic,
}

impl DistanceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceMode::Euclidean => "euclidean",
            DistanceMode::Geodesic => "geodesic",
        }
    }
}

/// Resolves a mode to a concrete metric over `scene`.
pub fn metric_for(mode: DistanceMode, scene: &Scene) -> alloc::boxed::Box<dyn PointDistance + '_> {
    match mode {
        DistanceMode::Euclidean => alloc::boxed::Box::new(Euclidean),
        DistanceMode::Geodesic => alloc::boxed::Box::new(Geodesic(scene)),
    }
}

/// Classic DTW with steps (1,0), (0,1), (1,1), anchored at both ends.
pub fn dtw(reference: &[Point3], query: &[Point3], dist: &dyn PointDistance) -> Result<f64> {
    if reference.is_empty() || query.is_empty() {
        return Err(Error::EmptySequence { context: None });
    }
    let m = query.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for (i, r) in reference.iter().enumerate() {
        let row = dist.one_to_many(r, query)?;
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            cur[j] = row[j] + best;
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

fn check_threshold(d_th: f64) -> Result<()> {
    if d_th > 0.0 && d_th.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(alloc::format!("d_th must be positive, got {d_th}")))
    }
}

/// Normalized DTW in `[0, 1]`, 1 for a perfect match.
pub fn ndtw(reference: &[Point3], query: &[Point3], d_th: f64, dist: &dyn PointDistance) -> Result<f64> {
    check_threshold(d_th)?;
    let cost = dtw(reference, query, dist)?;
    Ok(libm::exp(-cost / (reference.len() as f64 * d_th)))
}

/// One episode's share of a tour rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub episode_id: String,
    /// Positions visited during the agent phase, starting with the start pose.
    pub agent_path: Vec<Point3>,
    pub reference_path: Vec<Point3>,
    pub final_position: Point3,
    pub stop_called: bool,
    pub actions: Vec<AgentAction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    /// Forced motion from where the agent stopped to the episode goal.
    GoalCorrection,
    /// Forced motion from the episode goal to the next episode's start.
    Transit,
}

impl OracleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OracleKind::GoalCorrection => "oracle_goal",
            OracleKind::Transit => "oracle_transit",
        }
    }
}

/// Oracle-driven motion. Logged for completeness, never scored.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSegment {
    pub kind: OracleKind,
    /// Episode the segment follows.
    pub episode_id: String,
    pub path: Vec<Point3>,
    pub actions: Vec<AgentAction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TourTrace {
    pub tour_id: String,
    pub episode_traces: Vec<EpisodeTrace>,
    pub oracle_segments: Vec<OracleSegment>,
}

impl TourTrace {
    pub fn new(tour_id: impl Into<String>) -> Self {
        Self {
            tour_id: tour_id.into(),
            episode_traces: Vec::new(),
            oracle_segments: Vec::new(),
        }
    }

    /// Number of reference points across all episodes.
    pub fn reference_len(&self) -> usize {
        self.episode_traces.iter().map(|e| e.reference_path.len()).sum()
    }
}

/// DTW over the concatenated tour paths with cross-episode cells forbidden,
/// computed as the sum of per-episode DTW costs.
pub fn tour_dtw(trace: &TourTrace, dist: &dyn PointDistance) -> Result<f64> {
    if trace.episode_traces.is_empty() {
        return Err(Error::EmptySequence {
            context: Some(alloc::format!("tour {}", trace.tour_id)),
        });
    }
    let mut total = 0.0;
    for ep in &trace.episode_traces {
        total += dtw(&ep.reference_path, &ep.agent_path, dist)
            .map_err(|e| e.with_context(alloc::format!("episode {}", ep.episode_id)))?;
    }
    Ok(total)
}

/// nDTW of a whole tour, normalized by the total reference length.
pub fn tour_ndtw(trace: &TourTrace, d_th: f64, dist: &dyn PointDistance) -> Result<f64> {
    check_threshold(d_th)?;
    let cost = tour_dtw(trace, dist)?;
    Ok(libm::exp(-cost / (trace.reference_len() as f64 * d_th)))
}

/// Split-level score: tour scores weighted by episode count.
///
/// `tours` holds `(episode_count, tour_ndtw)` pairs.
pub fn aggregate_t_ndtw(tours: &[(usize, f64)]) -> Result<f64> {
    let weight: usize = tours.iter().map(|&(n, _)| n).sum();
    if weight == 0 {
        return Err(Error::InvalidInput("no episodes to aggregate".to_string()));
    }
    let num: f64 = tours.iter().map(|&(n, s)| n as f64 * s).sum();
    Ok(num / weight as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringParams {
    pub d_th: f64,
    pub success_radius: f64,
    /// Metric for NE, OS and the SPL shortest-path length.
    pub nav_distance: DistanceMode,
    /// Cell metric inside DTW.
    pub dtw_distance: DistanceMode,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            d_th: DEFAULT_D_TH,
            success_radius: DEFAULT_SUCCESS_RADIUS,
            nav_distance: DistanceMode::Geodesic,
            dtw_distance: DistanceMode::Euclidean,
        }
    }
}

/// Standard per-episode metrics. `os` and `sr` are 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode_id: String,
    pub tl: f64,
    pub ne: f64,
    pub os: f64,
    pub sr: f64,
    pub spl: f64,
    pub ndtw: f64,
}

pub fn episodic_metrics(trace: &EpisodeTrace, scene: &Scene, params: &ScoringParams) -> Result<EpisodeMetrics> {
    if trace.agent_path.is_empty() || trace.reference_path.is_empty() {
        return Err(Error::EmptySequence {
            context: Some(alloc::format!("episode {}", trace.episode_id)),
        });
    }
    let ctx = |e: Error| e.with_context(alloc::format!("episode {}", trace.episode_id));
    let nav = metric_for(params.nav_distance, scene);
    let dtw_metric = metric_for(params.dtw_distance, scene);
    let goal = trace.reference_path[trace.reference_path.len() - 1];
    let start = trace.reference_path[0];

    let tl = path_length(&trace.agent_path);
    let ne = nav.distance(&trace.final_position, &goal).map_err(ctx)?;
    let to_goal = nav.one_to_many(&goal, &trace.agent_path).map_err(ctx)?;
    let os = if to_goal.iter().any(|&d| d <= params.success_radius) { 1.0 } else { 0.0 };
    let sr = if ne <= params.success_radius { 1.0 } else { 0.0 };
    let shortest = nav.distance(&start, &goal).map_err(ctx)?;
    let denom = shortest.max(tl);
    let spl = if denom > 0.0 { sr * shortest / denom } else { sr };
    let ndtw = ndtw(&trace.reference_path, &trace.agent_path, params.d_th, dtw_metric.as_ref()).map_err(ctx)?;
    Ok(EpisodeMetrics {
        episode_id: trace.episode_id.clone(),
        tl,
        ne,
        os,
        sr,
        spl,
        ndtw,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TourScore {
    pub tour_id: String,
    pub t_ndtw: f64,
    pub episode_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    /// Episode-weighted tour nDTW in `[0, 1]`.
    pub t_ndtw: f64,
    pub tours: usize,
    pub episodes: usize,
    pub tl: f64,
    pub ne: f64,
    pub os: f64,
    pub sr: f64,
    pub spl: f64,
    pub ndtw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub params: ScoringParams,
    pub episodes: Vec<EpisodeMetrics>,
    pub tours: Vec<TourScore>,
    pub split: SplitSummary,
}

/// Scores a split: per-episode metrics, per-tour t-nDTW, and aggregates.
pub fn score_split(tours: &[(&TourTrace, &Scene)], params: &ScoringParams) -> Result<MetricReport> {
    check_threshold(params.d_th)?;
    let mut episodes = Vec::new();
    let mut scores = Vec::with_capacity(tours.len());
    for (trace, scene) in tours {
        let dtw_metric = metric_for(params.dtw_distance, scene);
        let t = tour_ndtw(trace, params.d_th, dtw_metric.as_ref())?;
        scores.push(TourScore {
            tour_id: trace.tour_id.clone(),
            t_ndtw: t,
            episode_count: trace.episode_traces.len(),
        });
        for ep in &trace.episode_traces {
            episodes.push(episodic_metrics(ep, scene, params)?);
        }
    }
    let pairs: Vec<(usize, f64)> = scores.iter().map(|s| (s.episode_count, s.t_ndtw)).collect();
    let t_ndtw = aggregate_t_ndtw(&pairs)?;
    let n = episodes.len() as f64;
    let mean = |f: fn(&EpisodeMetrics) -> f64| episodes.iter().map(f).sum::<f64>() / n;
    let split = SplitSummary {
        t_ndtw,
        tours: scores.len(),
        episodes: episodes.len(),
        tl: mean(|e| e.tl),
        ne: mean(|e| e.ne),
        os: mean(|e| e.os),
        sr: mean(|e| e.sr),
        spl: mean(|e| e.spl),
        ndtw: mean(|e| e.ndtw),
    };
    Ok(MetricReport {
        params: *params,
        episodes,
        tours: scores,
        split,
    })
}
