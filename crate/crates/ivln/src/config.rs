//! Layered configuration: built-in defaults, then the file named by
//! `IVLN_CONFIG`, then a `--config` file, then command-line flags.
//!
//! Files are TOML with one table per module, e.g.
//!
//! ```toml
//! [metrics]
//! d_th = 3.0
//! [harness]
//! map_mode = "iterative"
//! ```

use std::path::Path;

use anyhow::{bail, Context};
use ivln_core::coverage::ObservationModel;
use ivln_core::harness::RunConfig;
use ivln_core::mapper::{CameraIntrinsics, CameraRig};
use ivln_core::metrics::{DistanceMode, ScoringParams};
use ivln_core::tourgen::{Solver, TourConfig};
use serde::{Deserialize, Serialize};

use crate::formats::parse_map_mode;

pub const CONFIG_ENV: &str = "IVLN_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub graph_snap_radius: f64,
    pub grid_snap_radius: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            graph_snap_radius: ivln_core::environment::DEFAULT_GRAPH_SNAP_RADIUS,
            grid_snap_radius: ivln_core::environment::DEFAULT_GRID_SNAP_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToursConfig {
    /// `nearest-neighbor`, `local-search` or `exact`.
    pub solver: String,
    /// Zero means: use the count found in the episodes file.
    pub instructions_per_path: usize,
    pub seed: u64,
}

impl Default for ToursConfig {
    fn default() -> Self {
        Self {
            solver: "local-search".into(),
            instructions_per_path: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub d_th: f64,
    pub success_radius: f64,
    /// `geodesic` or `euclidean`, for NE, OS and SPL.
    pub nav_distance: String,
    /// `euclidean` or `geodesic`, inside DTW.
    pub dtw_distance: String,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            d_th: ivln_core::metrics::DEFAULT_D_TH,
            success_radius: ivln_core::metrics::DEFAULT_SUCCESS_RADIUS,
            nav_distance: "geodesic".into(),
            dtw_distance: "euclidean".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub oracle_correction_radius: f64,
    pub max_steps_continuous: usize,
    pub max_steps_discrete: usize,
    /// `episodic`, `iterative`, `known` or `none`.
    pub map_mode: String,
    pub seed: u64,
    pub policy_timeout_secs: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            oracle_correction_radius: ivln_core::harness::DEFAULT_CORRECTION_RADIUS,
            max_steps_continuous: ivln_core::harness::DEFAULT_MAX_STEPS_CONTINUOUS,
            max_steps_discrete: ivln_core::harness::DEFAULT_MAX_STEPS_DISCRETE,
            map_mode: "episodic".into(),
            seed: 0,
            policy_timeout_secs: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapperConfig {
    pub crop_size: usize,
    pub band_margin: f64,
    pub camera_width: usize,
    pub camera_height: usize,
    pub camera_hfov_deg: f64,
    pub camera_mount_height: f64,
    pub max_depth: f64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        let rig = CameraRig::default();
        Self {
            crop_size: ivln_core::mapper::DEFAULT_CROP_SIZE,
            band_margin: ivln_core::mapper::DEFAULT_BAND_MARGIN,
            camera_width: rig.intrinsics.width,
            camera_height: rig.intrinsics.height,
            camera_hfov_deg: 90.0,
            camera_mount_height: rig.mount_height,
            max_depth: rig.max_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub radius: f64,
    pub occlusion: bool,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        let m = ObservationModel::default();
        Self {
            radius: m.radius,
            occlusion: m.occlusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub environment: EnvironmentConfig,
    pub tours: ToursConfig,
    pub metrics: MetricsConfig,
    pub harness: HarnessConfig,
    pub mapper: MapperConfig,
    pub coverage: CoverageConfig,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_distance(s: &str) -> anyhow::Result<DistanceMode> {
    Ok(match s {
        "geodesic" => DistanceMode::Geodesic,
        "euclidean" => DistanceMode::Euclidean,
        _ => bail!("unknown distance mode `{s}` (expected geodesic or euclidean)"),
    })
}

impl Config {
    /// Defaults overlaid with `IVLN_CONFIG` (if set) and then `explicit`.
    pub fn load(explicit: Option<&Path>) -> anyhow::Result<Self> {
        let env = std::env::var_os(CONFIG_ENV).map(std::path::PathBuf::from);
        let files: Vec<&Path> = env.as_deref().into_iter().chain(explicit).collect();
        Self::from_files(&files)
    }

    pub fn from_files(files: &[&Path]) -> anyhow::Result<Self> {
        let mut value = toml::Value::try_from(Config::default())?;
        for f in files {
            let text = std::fs::read_to_string(f).with_context(|| format!("cannot read config {}", f.display()))?;
            let layer: toml::Value = toml::from_str(&text).with_context(|| format!("cannot parse config {}", f.display()))?;
            merge(&mut value, layer);
        }
        let cfg: Config = value.try_into().context("invalid configuration")?;
        Ok(cfg)
    }

    /// Checks every value against its module's preconditions.
    pub fn validate(&self) -> anyhow::Result<()> {
        let pos = |name: &str, v: f64| -> anyhow::Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                bail!("{name} must be positive, got {v}")
            }
        };
        pos("environment.graph_snap_radius", self.environment.graph_snap_radius)?;
        pos("environment.grid_snap_radius", self.environment.grid_snap_radius)?;
        self.solver()?;
        pos("metrics.d_th", self.metrics.d_th)?;
        if !(self.metrics.success_radius >= 0.0) {
            bail!("metrics.success_radius must be non-negative");
        }
        parse_distance(&self.metrics.nav_distance)?;
        parse_distance(&self.metrics.dtw_distance)?;
        pos("harness.oracle_correction_radius", self.harness.oracle_correction_radius)?;
        if self.harness.max_steps_continuous == 0 || self.harness.max_steps_discrete == 0 {
            bail!("harness step budgets must be at least 1");
        }
        if parse_map_mode(&self.harness.map_mode).is_none() {
            bail!("unknown harness.map_mode `{}`", self.harness.map_mode);
        }
        pos("harness.policy_timeout_secs", self.harness.policy_timeout_secs)?;
        if self.mapper.crop_size == 0 || self.mapper.camera_width == 0 || self.mapper.camera_height == 0 {
            bail!("mapper sizes must be at least 1");
        }
        if !(self.mapper.camera_hfov_deg > 0.0 && self.mapper.camera_hfov_deg < 180.0) {
            bail!("mapper.camera_hfov_deg must lie in (0, 180)");
        }
        pos("mapper.max_depth", self.mapper.max_depth)?;
        if !(self.mapper.band_margin >= 0.0) {
            bail!("mapper.band_margin must be non-negative");
        }
        self.observation_model().validate()?;
        Ok(())
    }

    pub fn solver(&self) -> anyhow::Result<Solver> {
        Ok(match self.tours.solver.as_str() {
            "nearest-neighbor" => Solver::NearestNeighbor,
            "local-search" => Solver::LocalSearch,
            "exact" => Solver::Exact,
            s => bail!("unknown solver `{s}` (expected nearest-neighbor, local-search or exact)"),
        })
    }

    pub fn tour_config(&self) -> anyhow::Result<TourConfig> {
        Ok(TourConfig {
            instructions_per_path: self.tours.instructions_per_path,
            seed: self.tours.seed,
            solver: self.solver()?,
        })
    }

    pub fn scoring(&self) -> anyhow::Result<ScoringParams> {
        Ok(ScoringParams {
            d_th: self.metrics.d_th,
            success_radius: self.metrics.success_radius,
            nav_distance: parse_distance(&self.metrics.nav_distance)?,
            dtw_distance: parse_distance(&self.metrics.dtw_distance)?,
        })
    }

    pub fn rig(&self) -> CameraRig {
        let m = &self.mapper;
        CameraRig {
            intrinsics: CameraIntrinsics::from_hfov(m.camera_width, m.camera_height, m.camera_hfov_deg.to_radians()),
            mount_height: m.camera_mount_height,
            max_depth: m.max_depth,
        }
    }

    /// Run settings for one scene kind.
    pub fn run_config(&self, graph: bool) -> anyhow::Result<RunConfig> {
        Ok(RunConfig {
            max_steps_per_episode: Some(if graph {
                self.harness.max_steps_discrete
            } else {
                self.harness.max_steps_continuous
            }),
            oracle_correction_radius: self.harness.oracle_correction_radius,
            map_mode: parse_map_mode(&self.harness.map_mode)
                .ok_or_else(|| anyhow::anyhow!("unknown map mode {}", self.harness.map_mode))?,
            seed: self.harness.seed,
            rig: self.rig(),
            crop_size: self.mapper.crop_size,
            band_margin: self.mapper.band_margin,
        })
    }

    pub fn observation_model(&self) -> ObservationModel {
        ObservationModel {
            radius: self.coverage.radius,
            occlusion: self.coverage.occlusion,
        }
    }

    /// Applies the configured snap radii to a scene.
    pub fn apply_snap_radii(&self, scene: &mut ivln_core::environment::Scene) {
        use ivln_core::environment::SceneKind;
        match &mut scene.kind {
            SceneKind::Graph(g) => g.snap_radius = self.environment.graph_snap_radius,
            SceneKind::Grid(g) => g.snap_radius = self.environment.grid_snap_radius,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
