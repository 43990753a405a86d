//! Subcommands of the `ivln` binary.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ivln_core::coverage::{merge_coverage, tour_coverage, CoverageCurve};
use ivln_core::environment::Scene;
use ivln_core::harness::{run_tour, tour_seed, NoisyOracle, Policy, RandomPolicy, StopPolicy};
use ivln_core::mapper::{crop_egocentric, observe_into, sweep_poses, MapMode, SemanticOccMap};
use ivln_core::metrics::{score_split, MetricReport, TourTrace};
use ivln_core::syngen::{generate_episodes, generate_scene, EpisodeSpec, FloorplanSpec, PathLength};
use ivln_core::tourgen::{compute_tour_stats, generate_tours, unique_paths, Episode, Tour};
use ivln_core::{Point3, Pose};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::external::ExternalPolicy;
use crate::formats::{self, FormatError, MapSnapshot, StatsRecord, FORMAT_VERSION};
use crate::r2r;

#[derive(Debug, Parser)]
#[command(name = "ivln", version, about = "Iterative vision-and-language navigation toolkit")]
pub struct Cli {
    /// TOML file layered over the defaults and $IVLN_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic floorplan scene.
    GenEnv(GenEnvArgs),
    /// Sample episodes in a scene.
    GenEpisodes(GenEpisodesArgs),
    /// Group episodes into tours.
    GenTours(GenToursArgs),
    /// Roll a policy out over tours and write a trace.
    Run(RunArgs),
    /// Score a trace.
    Eval(EvalArgs),
    /// Prior-exposure coverage curves of oracle tours.
    Coverage(CoverageArgs),
    /// Tour statistics.
    Stats(StatsArgs),
    /// Build a semantic map from a scripted sweep.
    BuildMap(BuildMapArgs),
    /// Convert an R2R split and connectivity graphs into scene and episode files.
    ImportR2r(ImportR2rArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneKindArg {
    Grid,
    Graph,
}

#[derive(Debug, Args)]
pub struct GenEnvArgs {
    #[arg(long, default_value_t = 6)]
    pub rooms: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability that a door is sealed.
    #[arg(long, default_value_t = 0.0)]
    pub sealed: f64,
    #[arg(long, default_value_t = 4.0)]
    pub room_min: f64,
    #[arg(long, default_value_t = 7.0)]
    pub room_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub door_width: f64,
    #[arg(long, default_value_t = 0.25)]
    pub resolution: f64,
    #[arg(long, value_enum, default_value_t = SceneKindArg::Grid)]
    pub kind: SceneKindArg,
    /// Defaults to `synth_<seed>`.
    #[arg(long)]
    pub scene_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenEpisodesArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Number of distinct paths.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Instructions per path.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Minimum path length: meters on grids, nodes on graphs.
    #[arg(long)]
    pub min_len: Option<f64>,
    #[arg(long)]
    pub max_len: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenToursArgs {
    #[arg(long)]
    pub episodes: PathBuf,
    /// Scene files or directories of them.
    #[arg(long = "scene", required = true)]
    pub scenes: Vec<PathBuf>,
    /// Instructions per path; inferred from the episodes when omitted.
    #[arg(long)]
    pub n: Option<usize>,
    /// nearest-neighbor, local-search or exact.
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Transport {
    Stdio,
    Socket,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long = "scene", required = true)]
    pub scenes: Vec<PathBuf>,
    #[arg(long)]
    pub tours: PathBuf,
    #[arg(long)]
    pub episodes: PathBuf,
    /// oracle, noisy:<p>, stop, random, or ext:<command or socket path>.
    #[arg(long, default_value = "oracle")]
    pub policy: String,
    #[arg(long, value_enum, default_value_t = Transport::Stdio)]
    pub transport: Transport,
    /// episodic, iterative, known or none.
    #[arg(long)]
    pub map: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Per-step policy timeout, seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long = "scene", required = true)]
    pub scenes: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-split summary CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Score incomplete tours on the episodes they reached instead of failing.
    #[arg(long)]
    pub allow_partial: bool,
    #[arg(long)]
    pub d_th: Option<f64>,
    #[arg(long)]
    pub success_radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long = "scene", required = true)]
    pub scenes: Vec<PathBuf>,
    #[arg(long)]
    pub tours: PathBuf,
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub occlusion: Option<bool>,
    /// Curve as CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Curve and per-tour records as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub tours: PathBuf,
    /// Statistics as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-tour lengths as CSV.
    #[arg(long)]
    pub lengths: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildMapArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Sample every `stride`-th navigable cell along each axis.
    #[arg(long, default_value_t = 3)]
    pub stride: usize,
    #[arg(long, default_value_t = 24)]
    pub headings: usize,
    /// episodic, iterative or known.
    #[arg(long, default_value = "iterative")]
    pub mode: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Egocentric crop pose as `x,y,heading_deg`.
    #[arg(long, requires = "crop_out")]
    pub crop_at: Option<String>,
    #[arg(long)]
    pub crop_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportR2rArgs {
    /// R2R split JSON.
    #[arg(long)]
    pub split: PathBuf,
    /// Directory holding `<scan>_connectivity.json` files.
    #[arg(long)]
    pub connectivity: PathBuf,
    /// Directory receiving one scene file per scan.
    #[arg(long)]
    pub scenes_out: PathBuf,
    #[arg(long)]
    pub episodes_out: PathBuf,
}

/// Malformed command-line values.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Process exit code for an error: 2 for unreadable or invalid input,
/// 3 for infeasible requests, 4 for policy failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use ivln_core::Error as E;
    for cause in err.chain() {
        if cause.is::<FormatError>() || cause.is::<UsageError>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::PolicyTimeout { .. } | E::ProtocolViolation(_) => 4,
                E::SnapFailure { .. }
                | E::Disconnected { .. }
                | E::SizeLimit { .. }
                | E::InstructionCountMismatch { .. }
                | E::SpecInfeasible(_)
                | E::SamplingExhausted { .. } => 3,
                E::MissingEpisode(_) | E::InvalidInput(_) | E::EmptySequence { .. } | E::DimensionMismatch { .. } => 2,
                E::UnsupportedScene | E::ImmutableMap => 1,
            };
        }
    }
    1
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenEnv(a) => gen_env(a),
        Command::GenEpisodes(a) => gen_episodes(&config, a),
        Command::GenTours(a) => {
            if let Some(s) = &a.solver {
                config.tours.solver = s.clone();
            }
            if let Some(s) = a.seed {
                config.tours.seed = s;
            }
            if let Some(n) = a.n {
                config.tours.instructions_per_path = n;
            }
            config.validate()?;
            gen_tours(&config, a)
        }
        Command::Run(a) => {
            if let Some(m) = &a.map {
                config.harness.map_mode = m.clone();
            }
            if let Some(s) = a.seed {
                config.harness.seed = s;
            }
            if let Some(n) = a.max_steps {
                config.harness.max_steps_continuous = n;
                config.harness.max_steps_discrete = n;
            }
            if let Some(t) = a.timeout {
                config.harness.policy_timeout_secs = t;
            }
            config.validate()?;
            run(&config, a)
        }
        Command::Eval(a) => {
            if let Some(d) = a.d_th {
                config.metrics.d_th = d;
            }
            if let Some(r) = a.success_radius {
                config.metrics.success_radius = r;
            }
            config.validate()?;
            eval(&config, a)
        }
        Command::Coverage(a) => {
            if let Some(r) = a.radius {
                config.coverage.radius = r;
            }
            if let Some(o) = a.occlusion {
                config.coverage.occlusion = o;
            }
            config.validate()?;
            coverage(&config, a)
        }
        Command::Stats(a) => stats(a),
        Command::BuildMap(a) => {
            config.validate()?;
            build_map(&config, a)
        }
        Command::ImportR2r(a) => import_r2r(a),
    }
}

fn load_scenes(config: &Config, paths: &[PathBuf]) -> anyhow::Result<BTreeMap<String, Scene>> {
    let mut scenes = formats::read_scenes(paths)?;
    for s in scenes.values_mut() {
        config.apply_snap_radii(s);
    }
    Ok(scenes)
}

fn scene_for<'s>(scenes: &'s BTreeMap<String, Scene>, id: &str) -> anyhow::Result<&'s Scene> {
    scenes
        .get(id)
        .ok_or_else(|| usage(format!("scene {id} is referenced but no scene file provides it")))
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))
}

// ---------------------------------------------------------------- gen-env

fn gen_env(a: GenEnvArgs) -> anyhow::Result<()> {
    let spec = FloorplanSpec {
        rooms: a.rooms,
        room_size: (a.room_min, a.room_max),
        door_width: a.door_width,
        sealed_door_probability: a.sealed,
        resolution: a.resolution,
        seed: a.seed,
        ..FloorplanSpec::default()
    };
    let id = a.scene_id.unwrap_or_else(|| format!("synth_{}", a.seed));
    let generated = generate_scene(&id, &spec)?;
    let scene = match a.kind {
        SceneKindArg::Grid => generated.grid_scene(),
        SceneKindArg::Graph => generated.graph_scene(),
    };
    formats::write_scene(&a.out, &scene)?;
    let sealed = generated.doors.iter().filter(|d| d.sealed).count();
    println!(
        "wrote {} ({} rooms, {} doors, {} sealed, {} locations)",
        a.out.display(),
        generated.rooms.len(),
        generated.doors.len(),
        sealed,
        scene.location_count()
    );
    Ok(())
}

// ----------------------------------------------------------- gen-episodes

fn gen_episodes(config: &Config, a: GenEpisodesArgs) -> anyhow::Result<()> {
    let mut scene = formats::read_scene(&a.scene)?;
    config.apply_snap_radii(&mut scene);
    let mut spec = EpisodeSpec::for_scene(&scene, a.count);
    spec.instructions_per_path = a.n;
    spec.seed = a.seed;
    match (&mut spec.length, a.min_len, a.max_len) {
        (_, None, None) => {}
        (PathLength::Meters(lo, hi), min, max) => {
            *lo = min.unwrap_or(*lo);
            *hi = max.unwrap_or(*hi);
        }
        (PathLength::Nodes(lo, hi), min, max) => {
            let whole = |v: f64| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(usage(format!("graph path lengths are node counts, got {v}")))
                }
            };
            *lo = min.map(whole).transpose()?.unwrap_or(*lo);
            *hi = max.map(whole).transpose()?.unwrap_or(*hi);
        }
    }
    let episodes = generate_episodes(&scene, &spec)?;
    formats::write_episodes(&a.out, &episodes)?;
    println!("wrote {} episodes over {} paths to {}", episodes.len(), a.count, a.out.display());
    Ok(())
}

// -------------------------------------------------------------- gen-tours

/// The number of instructions every path carries, if it is the same for all.
fn uniform_instruction_count(episodes: &[Episode]) -> Option<usize> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in episodes {
        *counts.entry(e.path_id.as_str()).or_default() += 1;
    }
    let distinct: BTreeSet<usize> = counts.values().copied().collect();
    (distinct.len() == 1).then(|| *distinct.iter().next().expect("one value"))
}

fn gen_tours(config: &Config, a: GenToursArgs) -> anyhow::Result<()> {
    let scenes = load_scenes(config, &a.scenes)?;
    let episodes = formats::read_episodes(&a.episodes)?;
    let mut tcfg = config.tour_config()?;
    if tcfg.instructions_per_path == 0 {
        tcfg.instructions_per_path = uniform_instruction_count(&episodes).ok_or_else(|| {
            usage("paths carry different numbers of instructions; pass --n to choose one")
        })?;
    }
    let mut by_scene: BTreeMap<&str, Vec<Episode>> = BTreeMap::new();
    for e in &episodes {
        by_scene.entry(e.scene_id.as_str()).or_default().push(e.clone());
    }
    let per_scene: Vec<anyhow::Result<Vec<Tour>>> = by_scene
        .par_iter()
        .map(|(id, eps)| {
            let scene = scene_for(&scenes, id)?;
            generate_tours(scene, eps, &tcfg).with_context(|| format!("scene {id}"))
        })
        .collect();
    let mut tours = Vec::new();
    for r in per_scene {
        tours.extend(r?);
    }
    let stats = compute_tour_stats(&tours)?;
    let mut cfg_json = config.to_json();
    cfg_json["tours"]["instructions_per_path"] = tcfg.instructions_per_path.into();
    formats::write_json(&a.out, &formats::tours_file(&tours, Some(&stats), cfg_json))?;
    print_stats(&StatsRecord::from(&stats));
    Ok(())
}

fn print_stats(s: &StatsRecord) {
    println!(
        "{:>7} {:>9} {:>6} {:>12} {:>8} {:>5} {:>5} {:>7}",
        "scenes", "episodes", "tours", "tours/scene", "mean", "min", "max", "stddev"
    );
    println!(
        "{:>7} {:>9} {:>6} {:>12.1} {:>8.1} {:>5} {:>5} {:>7.1}",
        s.scenes, s.episodes, s.tours, s.tours_per_scene, s.length_mean, s.length_min, s.length_max, s.length_stddev
    );
}

// -------------------------------------------------------------------- run

enum PolicySpec {
    Oracle(f64),
    Stop,
    Random,
    External(String),
}

fn parse_policy(s: &str) -> anyhow::Result<PolicySpec> {
    Ok(match s {
        "oracle" => PolicySpec::Oracle(0.0),
        "stop" => PolicySpec::Stop,
        "random" => PolicySpec::Random,
        _ => {
            if let Some(p) = s.strip_prefix("noisy:") {
                let p: f64 = p.parse().map_err(|_| usage(format!("bad error rate in policy `{s}`")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(usage(format!("error rate {p} outside [0, 1]")));
                }
                PolicySpec::Oracle(p)
            } else if let Some(cmd) = s.strip_prefix("ext:") {
                if cmd.is_empty() {
                    return Err(usage("ext: needs a command or socket path"));
                }
                PolicySpec::External(cmd.to_string())
            } else {
                return Err(usage(format!(
                    "unknown policy `{s}` (expected oracle, noisy:<p>, stop, random or ext:<cmd>)"
                )));
            }
        }
    })
}

fn make_policy<'s>(
    spec: &PolicySpec,
    scene: &'s Scene,
    tour: &Tour,
    seed: u64,
    transport: Transport,
    timeout: Duration,
) -> anyhow::Result<Box<dyn Policy + 's>> {
    Ok(match spec {
        PolicySpec::Oracle(p) => Box::new(NoisyOracle::new(scene, *p, seed)?),
        PolicySpec::Stop => Box::new(StopPolicy),
        PolicySpec::Random => Box::new(RandomPolicy::new(scene, tour_seed(seed, &tour.tour_id))),
        PolicySpec::External(target) => match transport {
            Transport::Stdio => Box::new(
                ExternalPolicy::spawn(target, timeout).with_context(|| format!("cannot start policy `{target}`"))?,
            ),
            #[cfg(unix)]
            Transport::Socket => Box::new(
                ExternalPolicy::connect(Path::new(target), timeout)
                    .with_context(|| format!("cannot connect to policy socket {target}"))?,
            ),
            #[cfg(not(unix))]
            Transport::Socket => bail!("socket transport needs a Unix platform"),
        },
    })
}

struct TourOutcome {
    trace: TourTrace,
    error: Option<anyhow::Error>,
}

fn run(config: &Config, a: RunArgs) -> anyhow::Result<()> {
    let spec = parse_policy(&a.policy)?;
    let scenes = load_scenes(config, &a.scenes)?;
    let tours = formats::read_tours(&a.tours)?;
    let episodes = formats::episode_index(formats::read_episodes(&a.episodes)?);
    let timeout = Duration::from_secs_f64(config.harness.policy_timeout_secs);
    let seed = config.harness.seed;
    for t in &tours {
        scene_for(&scenes, &t.scene_id)?;
    }

    let one = |tour: &Tour| -> TourOutcome {
        let scene = &scenes[&tour.scene_id];
        let result = config
            .run_config(scene.graph().is_some())
            .and_then(|rc| Ok((rc, make_policy(&spec, scene, tour, seed, a.transport, timeout)?)));
        let (rc, mut policy) = match result {
            Ok(v) => v,
            Err(e) => {
                return TourOutcome {
                    trace: TourTrace::new(tour.tour_id.clone()),
                    error: Some(e),
                }
            }
        };
        match run_tour(scene, tour, &episodes, policy.as_mut(), &rc) {
            Ok(trace) => TourOutcome { trace, error: None },
            Err(f) => TourOutcome {
                trace: f.partial,
                error: Some(anyhow::Error::new(f.error).context(format!("tour {}", tour.tour_id))),
            },
        }
    };
    let outcomes: Vec<TourOutcome> = if a.jobs == 1 {
        tours.iter().map(one).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(a.jobs)
            .build()
            .context("cannot start worker threads")?
            .install(|| tours.par_iter().map(one).collect())
    };

    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = fs::File::create(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    let mut failures = Vec::new();
    for o in outcomes {
        let msg = o.error.as_ref().map(|e| format!("{e:#}"));
        formats::write_trace_lines(&mut w, &o.trace, msg.as_deref())?;
        if let Some(e) = o.error {
            failures.push(e);
        }
    }
    w.flush()?;
    let done = tours.len() - failures.len();
    println!("ran {done}/{} tours, trace in {}", tours.len(), a.out.display());
    match failures.into_iter().next() {
        None => Ok(()),
        Some(first) => {
            eprintln!("{} tour(s) failed; partial traces were written", tours.len() - done);
            Err(first)
        }
    }
}

// ------------------------------------------------------------------- eval

#[derive(Debug, Serialize)]
struct ParamsRecord {
    d_th: f64,
    success_radius: f64,
    nav_distance: String,
    dtw_distance: String,
}

#[derive(Debug, Serialize)]
struct EpisodeRow {
    episode_id: String,
    tl: f64,
    ne: f64,
    os: f64,
    sr: f64,
    spl: f64,
    ndtw: f64,
}

#[derive(Debug, Serialize)]
struct TourRow {
    tour_id: String,
    t_ndtw: f64,
    episode_count: usize,
    complete: bool,
}

#[derive(Debug, Serialize)]
struct SplitRow {
    tours: usize,
    episodes: usize,
    t_ndtw: f64,
    tl: f64,
    ne: f64,
    os: f64,
    sr: f64,
    spl: f64,
    ndtw: f64,
}

#[derive(Debug, Serialize)]
struct ReportFile {
    format_version: u32,
    config: serde_json::Value,
    params: ParamsRecord,
    split: SplitRow,
    tours: Vec<TourRow>,
    episodes: Vec<EpisodeRow>,
}

fn report_file(config: &Config, report: &MetricReport, complete: &BTreeMap<String, bool>) -> ReportFile {
    let s = &report.split;
    ReportFile {
        format_version: FORMAT_VERSION,
        config: config.to_json(),
        params: ParamsRecord {
            d_th: report.params.d_th,
            success_radius: report.params.success_radius,
            nav_distance: config.metrics.nav_distance.clone(),
            dtw_distance: config.metrics.dtw_distance.clone(),
        },
        split: SplitRow {
            tours: s.tours,
            episodes: s.episodes,
            t_ndtw: s.t_ndtw,
            tl: s.tl,
            ne: s.ne,
            os: s.os,
            sr: s.sr,
            spl: s.spl,
            ndtw: s.ndtw,
        },
        tours: report
            .tours
            .iter()
            .map(|t| TourRow {
                tour_id: t.tour_id.clone(),
                t_ndtw: t.t_ndtw,
                episode_count: t.episode_count,
                complete: complete.get(&t.tour_id).copied().unwrap_or(true),
            })
            .collect(),
        episodes: report
            .episodes
            .iter()
            .map(|e| EpisodeRow {
                episode_id: e.episode_id.clone(),
                tl: e.tl,
                ne: e.ne,
                os: e.os,
                sr: e.sr,
                spl: e.spl,
                ndtw: e.ndtw,
            })
            .collect(),
    }
}

fn eval(config: &Config, a: EvalArgs) -> anyhow::Result<()> {
    let scenes = load_scenes(config, &a.scenes)?;
    let episodes = formats::episode_index(formats::read_episodes(&a.episodes)?);
    let mut loaded = formats::read_traces(&a.trace)?;

    let missing: BTreeSet<String> = loaded
        .iter()
        .flat_map(|l| l.trace.episode_traces.iter().map(|e| &e.episode_id))
        .filter(|id| !episodes.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        let list: Vec<String> = missing.into_iter().collect();
        return Err(ivln_core::Error::MissingEpisode(list.join(", ")).into());
    }
    let incomplete: Vec<&str> = loaded.iter().filter(|l| !l.complete).map(|l| l.trace.tour_id.as_str()).collect();
    if !incomplete.is_empty() && !a.allow_partial {
        bail!(
            "{} incomplete tour(s) in the trace ({}); pass --allow-partial to score them as far as they got",
            incomplete.len(),
            incomplete.join(", ")
        );
    }
    loaded.retain(|l| !l.trace.episode_traces.is_empty());

    let mut pairs: Vec<(TourTrace, &Scene)> = Vec::with_capacity(loaded.len());
    let mut complete = BTreeMap::new();
    for l in loaded {
        let mut trace = l.trace;
        let scene_id = &episodes[&trace.episode_traces[0].episode_id].scene_id;
        let scene = scene_for(&scenes, scene_id)?;
        for e in &mut trace.episode_traces {
            let ep = &episodes[&e.episode_id];
            if &ep.scene_id != scene_id {
                bail!("tour {} mixes scenes {} and {}", trace.tour_id, scene_id, ep.scene_id);
            }
            e.reference_path = ep.path.clone();
        }
        complete.insert(trace.tour_id.clone(), l.complete);
        pairs.push((trace, scene));
    }
    if pairs.is_empty() {
        bail!("the trace holds no scored episodes");
    }
    let refs: Vec<(&TourTrace, &Scene)> = pairs.iter().map(|(t, s)| (t, *s)).collect();
    let report = score_split(&refs, &config.scoring()?)?;
    let file = report_file(config, &report, &complete);
    formats::write_json(&a.out, &file)?;
    if let Some(path) = &a.csv {
        let mut w = csv_writer(path)?;
        w.serialize(&file.split)?;
        w.flush()?;
    }
    let s = &report.split;
    println!("tours {}  episodes {}", s.tours, s.episodes);
    println!("t-nDTW {:.1}", 100.0 * s.t_ndtw);
    println!(
        "TL {:.2}  NE {:.2}  OS {:.1}  SR {:.1}  SPL {:.1}  nDTW {:.1}",
        s.tl,
        s.ne,
        100.0 * s.os,
        100.0 * s.sr,
        100.0 * s.spl,
        100.0 * s.ndtw
    );
    Ok(())
}

// --------------------------------------------------------------- coverage

#[derive(Debug, Serialize)]
struct CoveragePointRow {
    episode_index: usize,
    upcoming_pct_mean: f64,
    tour_pct_mean: f64,
    n_tours: usize,
}

#[derive(Debug, Serialize)]
struct TourCoverageRow {
    tour_id: String,
    upcoming_pct: Vec<f64>,
    tour_pct: Vec<f64>,
    final_tour_pct: f64,
}

#[derive(Debug, Serialize)]
struct CoverageFile {
    format_version: u32,
    radius: f64,
    occlusion: bool,
    points: Vec<CoveragePointRow>,
    tours: Vec<TourCoverageRow>,
}

fn point_rows(curve: &CoverageCurve) -> Vec<CoveragePointRow> {
    curve
        .points
        .iter()
        .map(|p| CoveragePointRow {
            episode_index: p.episode_index,
            upcoming_pct_mean: p.upcoming_pct_mean,
            tour_pct_mean: p.tour_pct_mean,
            n_tours: p.n_tours,
        })
        .collect()
}

fn coverage(config: &Config, a: CoverageArgs) -> anyhow::Result<()> {
    let scenes = load_scenes(config, &a.scenes)?;
    let tours = formats::read_tours(&a.tours)?;
    let episodes = formats::episode_index(formats::read_episodes(&a.episodes)?);
    let model = config.observation_model();
    let per_tour = tours
        .par_iter()
        .map(|t| {
            let scene = scene_for(&scenes, &t.scene_id)?;
            tour_coverage(t, &episodes, scene, &model).with_context(|| format!("tour {}", t.tour_id))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let curve = merge_coverage(per_tour, model);
    let rows = point_rows(&curve);
    let mut w = csv_writer(&a.out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["episode_index", "upcoming_pct_mean", "tour_pct_mean", "n_tours"])?;
    }
    w.flush()?;
    if let Some(path) = &a.json {
        let file = CoverageFile {
            format_version: FORMAT_VERSION,
            radius: model.radius,
            occlusion: model.occlusion,
            points: rows,
            tours: curve
                .tours
                .iter()
                .map(|t| TourCoverageRow {
                    tour_id: t.tour_id.clone(),
                    upcoming_pct: t.upcoming_pct.clone(),
                    tour_pct: t.tour_pct.clone(),
                    final_tour_pct: t.final_tour_pct,
                })
                .collect(),
        };
        formats::write_json(path, &file)?;
    }
    if let Some(last) = curve.points.last() {
        println!(
            "{} tours; at episode {} upcoming coverage is {:.1}%",
            curve.tours.len(),
            last.episode_index,
            last.upcoming_pct_mean
        );
    }
    Ok(())
}

// ------------------------------------------------------------------ stats

#[derive(Debug, Serialize)]
struct LengthRow<'a> {
    tour_id: &'a str,
    scene_id: &'a str,
    episodes: usize,
}

fn stats(a: StatsArgs) -> anyhow::Result<()> {
    let tours = formats::read_tours(&a.tours)?;
    let s = StatsRecord::from(&compute_tour_stats(&tours)?);
    print_stats(&s);
    if let Some(path) = &a.out {
        formats::write_json(path, &s)?;
    }
    if let Some(path) = &a.lengths {
        let mut w = csv_writer(path)?;
        for t in &tours {
            w.serialize(LengthRow {
                tour_id: &t.tour_id,
                scene_id: &t.scene_id,
                episodes: t.len(),
            })?;
        }
        w.flush()?;
    }
    Ok(())
}

// -------------------------------------------------------------- build-map

fn parse_crop_pose(s: &str) -> anyhow::Result<Pose> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("crop pose `{s}` must be x,y,heading_deg")))?;
    match v.as_slice() {
        [x, y, h] => Ok(Pose::new(Point3::new(*x, *y, 0.0), h.to_radians())),
        _ => Err(usage(format!("crop pose `{s}` must be x,y,heading_deg"))),
    }
}

/// The map a scripted sweep of `scene` produces.
pub fn sweep_map(config: &Config, scene: &Scene, mode: MapMode, stride: usize, headings: usize) -> anyhow::Result<SemanticOccMap> {
    let grid = scene.grid().ok_or(ivln_core::Error::UnsupportedScene)?;
    if mode == MapMode::Known {
        return Ok(ivln_core::mapper::known_map(grid));
    }
    if headings == 0 {
        return Err(usage("--headings must be at least 1"));
    }
    let mut map = SemanticOccMap::for_grid(grid, mode);
    let rig = config.rig();
    for pose in sweep_poses(grid, stride, headings) {
        observe_into(&mut map, grid, &rig, &pose, config.mapper.band_margin)?;
    }
    Ok(map)
}

fn build_map(config: &Config, a: BuildMapArgs) -> anyhow::Result<()> {
    let mut scene = formats::read_scene(&a.scene)?;
    config.apply_snap_radii(&mut scene);
    let mode = formats::parse_map_mode(&a.mode)
        .flatten()
        .ok_or_else(|| usage(format!("unknown map mode `{}` (expected episodic, iterative or known)", a.mode)))?;
    let map = sweep_map(config, &scene, mode, a.stride, a.headings)?;
    formats::write_json(&a.out, &MapSnapshot::from_map(&map))?;
    println!("wrote {} ({} of {} cells observed)", a.out.display(), map.observed_count(), map.width * map.height);
    if let (Some(at), Some(out)) = (&a.crop_at, &a.crop_out) {
        let mut pose = parse_crop_pose(at)?;
        pose.position.z = scene.grid().map_or(0.0, |g| g.floor_z);
        let crop = crop_egocentric(&map, &pose, config.mapper.crop_size, map.resolution);
        let p = pose.position;
        formats::write_json(out, &formats::CropFile::new(&crop, [p.x, p.y, p.z, pose.heading()]))?;
    }
    Ok(())
}

// ------------------------------------------------------------- import-r2r

fn import_r2r(a: ImportR2rArgs) -> anyhow::Result<()> {
    let (scenes, episodes) = r2r::load_split(&a.split, &a.connectivity)?;
    fs::create_dir_all(&a.scenes_out).with_context(|| format!("cannot create {}", a.scenes_out.display()))?;
    for (id, scene) in &scenes {
        formats::write_scene(&a.scenes_out.join(format!("{id}.json")), scene)?;
    }
    formats::write_episodes(&a.episodes_out, &episodes)?;
    println!(
        "imported {} scans, {} paths, {} episodes",
        scenes.len(),
        unique_paths(&episodes).len(),
        episodes.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::anyhow;

    #[test]
    fn policy_specs() {
        assert!(matches!(parse_policy("oracle").unwrap(), PolicySpec::Oracle(p) if p == 0.0));
        assert!(matches!(parse_policy("noisy:0.3").unwrap(), PolicySpec::Oracle(p) if p == 0.3));
        assert!(matches!(parse_policy("ext:python3 agent.py").unwrap(), PolicySpec::External(c) if c == "python3 agent.py"));
        for bad in ["noisy:1.5", "noisy:x", "ext:", "greedy"] {
            let e = parse_policy(bad).err().unwrap();
            assert_eq!(exit_code(&e), 2, "{bad}");
        }
    }

    #[test]
    fn exit_codes_follow_the_error_kind() {
        let infeasible: anyhow::Error = ivln_core::Error::SpecInfeasible("x".into()).into();
        assert_eq!(exit_code(&infeasible.context("while generating")), 3);
        let timeout: anyhow::Error = ivln_core::Error::PolicyTimeout { millis: 5 }.into();
        assert_eq!(exit_code(&timeout), 4);
        assert_eq!(exit_code(&anyhow!("plain")), 1);
    }

    #[test]
    fn instruction_count_inference() {
        let ep = |path: &str, k: usize| Episode {
            episode_id: format!("{path}_{k}"),
            path_id: path.into(),
            scene_id: "s".into(),
            path: vec![Point3::default()],
            start_heading: 0.0,
            instruction_id: format!("{path}_{k}"),
            instruction: String::new(),
        };
        assert_eq!(uniform_instruction_count(&[ep("a", 0), ep("a", 1), ep("b", 0), ep("b", 1)]), Some(2));
        assert_eq!(uniform_instruction_count(&[ep("a", 0), ep("a", 1), ep("b", 0)]), None);
    }

    #[test]
    fn crop_pose_parsing() {
        let p = parse_crop_pose("1.5, 2, 90").unwrap();
        assert_eq!(p.position, Point3::new(1.5, 2.0, 0.0));
        assert!((p.heading() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(parse_crop_pose("1,2").is_err());
    }
}
