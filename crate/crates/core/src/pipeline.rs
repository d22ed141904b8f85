//! End-to-end drivers: simulate a scenario into KITTI-layout directories,
//! and run perception → fusion → tracking → evaluation → export.
//!
//! Randomness comes from one root seed. Each consumer derives its own stream
//! with [`seeds::derive`]: `lidar/{sensor}` and `perception/{sensor}`,
//! indexed by frame.
//!
//! Simulation output, one directory per sensor:
//!
//! ```text
//! {out}/scenario.toml
//! {out}/{sensor}/velodyne_points/data/NNNNNNNNNN.bin
//! {out}/{sensor}/oxts/data/NNNNNNNNNN.txt     parent pose (ego, mast, or world)
//! {out}/{sensor}/label/0000.txt               truth in the sensor frame
//! {out}/{sensor}/tracklet_labels.xml          truth in the sensor frame
//! {out}/{sensor}/calib.txt
//! {out}/timing.json, {out}/timing.txt
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{
    earliness_report, match_to_truth, mot_metrics, set_stream_visibility, timing_report,
    FrameMetrics, MotMetrics, Phase, TargetEarliness, TimingRecord, TruthBox, DEFAULT_MATCH_IOU,
};
use crate::fusion::{
    merge, suppress_ego, to_global, FusionError, FusionParams, SensorKind, SensorRegistration,
};
use crate::geometry::{iou_bev, transform_box, Pose};
use crate::kitti_io::{
    self, box_to_label, label_path, oxts_path, read_labels, read_oxts, read_velodyne,
    velodyne_path, KittiError, LabelRecord, OxtsRecord, Tracklet,
};
use crate::lidar_sim::{scan, PointCloud};
use crate::perception::{detect, ingest_external, Detection, DetectorParams, PerceptionError};
use crate::scenario::{
    step_world, ScenarioConfig, ScenarioError, SensorSpec, WorldSnapshot, WORLD,
};
use crate::seeds;
use crate::stream_export::{
    pack_frame, truth_class_label, write_scene, ExportError, Family, FrameArtifacts, FrameBundle,
    SceneManifest, SensorFrame, TrackSet,
};
use crate::tracking::{TrackOutput, Tracker, TrackerParams, TrackerParamsError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Kitti { path: PathBuf, source: KittiError },
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Tracker(#[from] TrackerParamsError),
}

impl PipelineError {
    /// True for failures of the file system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            PipelineError::Io { .. }
                | PipelineError::Kitti {
                    source: KittiError::Io(_),
                    ..
                }
                | PipelineError::Export(ExportError::Io { .. })
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn kitti_err(path: &Path) -> impl FnOnce(KittiError) -> PipelineError + '_ {
    move |source| match source {
        KittiError::Io(e) if e.kind() == io::ErrorKind::NotFound => {
            PipelineError::MissingInput(path.display().to_string())
        }
        source => PipelineError::Kitti {
            path: path.to_path_buf(),
            source,
        },
    }
}

fn create_file(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let mut f = create_file(path)?;
    f.write_all(bytes)
        .and_then(|_| f.flush())
        .map_err(io_err(path))
}

fn open_file(path: &Path) -> Result<File, PipelineError> {
    File::open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            PipelineError::MissingInput(path.display().to_string())
        } else {
            PipelineError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

/// Ground truth boxes of detectable actors, as seen from `sensor`.
///
/// `track_id` is the actor's index among the scenario's detectable actors,
/// which is also its tracklet index.
fn truth_labels(
    config: &ScenarioConfig,
    world: &WorldSnapshot,
    sensor_pose: &Pose,
    exclude: &str,
) -> Vec<LabelRecord> {
    let inv = sensor_pose.inverse();
    detectable_actors(config)
        .filter(|(_, id)| *id != exclude)
        .filter_map(|(k, id)| {
            let o = world.get(id)?;
            let class = o.kind.object_class()?;
            let local = transform_box(&inv, &o.bbox);
            Some(box_to_label(
                &local,
                world.frame as i64,
                k as i64,
                class.as_str(),
                None,
            ))
        })
        .collect()
}

fn detectable_actors(config: &ScenarioConfig) -> impl Iterator<Item = (usize, &str)> {
    config
        .actors
        .iter()
        .filter(|a| a.kind.object_class().is_some())
        .map(|a| a.id.as_str())
        .enumerate()
}

/// World as occluders for `sensor`: everything except its parent actor.
fn scan_world(world: &WorldSnapshot, parent: &str) -> WorldSnapshot {
    if parent == WORLD {
        world.clone()
    } else {
        world.without(parent)
    }
}

/// One sweep of `sensor` at `frame`, from the same random stream the
/// simulate and pipeline commands use. `root_seed` is the run seed.
pub fn scan_sensor(
    config: &ScenarioConfig,
    world: &WorldSnapshot,
    sensor: &SensorSpec,
    frame: usize,
    root_seed: u64,
) -> Result<(Pose, PointCloud), PipelineError> {
    let pose = config.sensor_pose(&sensor.id, frame)?;
    let seed = seeds::derive(root_seed, &format!("lidar/{}", sensor.id), frame as u64);
    Ok((
        pose,
        scan(
            &sensor.id,
            &pose,
            &sensor.lidar,
            &scan_world(world, &sensor.parent),
            seed,
        ),
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub frames: usize,
    pub sensors: Vec<String>,
    pub points_per_sensor: Vec<usize>,
    pub mean_simulate_seconds: f64,
}

/// Writes the per-sensor KITTI layout for every frame of `config`.
pub fn simulate(
    config: &ScenarioConfig,
    out: &Path,
    seed: u64,
) -> Result<SimulationSummary, PipelineError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let toml_text = toml::to_string(config).map_err(|e| PipelineError::Config(e.to_string()))?;
    write_file(&out.join("scenario.toml"), toml_text.as_bytes())?;

    let mut timing = Vec::new();
    let mut labels: Vec<Vec<LabelRecord>> = vec![Vec::new(); config.sensors.len()];
    // Keyed by detectable-actor index; every actor is labeled every frame, so
    // poses stay contiguous.
    let mut tracklets: Vec<BTreeMap<usize, Tracklet>> = vec![BTreeMap::new(); config.sensors.len()];
    let mut points = vec![0usize; config.sensors.len()];

    for frame in 0..config.frame_count {
        let total = Instant::now();
        let t0 = Instant::now();
        let world = step_world(config, frame)?;
        let mut clouds = Vec::with_capacity(config.sensors.len());
        for s in &config.sensors {
            clouds.push(scan_sensor(config, &world, s, frame, seed)?);
        }
        let sim_seconds = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        for (si, (s, (pose, cloud))) in config.sensors.iter().zip(&clouds).enumerate() {
            let dir = out.join(&s.id);
            let path = velodyne_path(&dir, frame);
            let mut f = create_file(&path)?;
            kitti_io::write_velodyne(cloud, &mut f)
                .and_then(|_| f.flush())
                .map_err(io_err(&path))?;
            points[si] += cloud.len();

            let parent = config.parent_pose(&s.id, frame)?;
            let rec = OxtsRecord::from_pose(&config.geo_origin, &parent)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            let path = oxts_path(&dir, frame);
            let mut f = create_file(&path)?;
            kitti_io::write_oxts(&rec, &mut f)
                .and_then(|_| f.flush())
                .map_err(io_err(&path))?;

            let frame_labels = truth_labels(config, &world, pose, &s.parent);
            for l in &frame_labels {
                let b = kitti_io::label_to_box(l).expect("truth dims validated");
                tracklets[si]
                    .entry(l.track_id as usize)
                    .or_insert_with(|| Tracklet {
                        object_type: l.object_type.clone(),
                        height: b.dims.height,
                        width: b.dims.width,
                        length: b.dims.length,
                        first_frame: frame,
                        poses: Vec::new(),
                    })
                    .poses
                    .push(Tracklet::pose_of(&b));
            }
            labels[si].extend(frame_labels);
        }
        let save_seconds = t1.elapsed().as_secs_f64();
        timing.push(TimingRecord {
            frame,
            phase: Phase::Simulate,
            seconds: sim_seconds,
        });
        timing.push(TimingRecord {
            frame,
            phase: Phase::SaveDisk,
            seconds: save_seconds,
        });
        timing.push(TimingRecord {
            frame,
            phase: Phase::Total,
            seconds: total.elapsed().as_secs_f64(),
        });
    }

    for (si, s) in config.sensors.iter().enumerate() {
        let dir = out.join(&s.id);
        let path = label_path(&dir, 0);
        let mut f = create_file(&path)?;
        kitti_io::write_labels(&labels[si], &mut f)
            .and_then(|_| f.flush())
            .map_err(io_err(&path))?;
        let list: Vec<Tracklet> = tracklets[si].values().cloned().collect();
        let path = dir.join("tracklet_labels.xml");
        let mut f = create_file(&path)?;
        kitti_io::write_tracklets(&list, &mut f)
            .and_then(|_| f.flush())
            .map_err(io_err(&path))?;
        let path = dir.join("calib.txt");
        let mut f = create_file(&path)?;
        kitti_io::write_calib(&mut f)
            .and_then(|_| f.flush())
            .map_err(io_err(&path))?;
    }
    write_timing(out, &timing)?;
    let report = timing_report(&timing);
    Ok(SimulationSummary {
        frames: config.frame_count,
        sensors: config.sensors.iter().map(|s| s.id.clone()).collect(),
        points_per_sensor: points,
        mean_simulate_seconds: report
            .phase(Phase::Simulate)
            .map_or(0.0, |p| p.mean_seconds),
    })
}

/// Timing files are wall-clock measurements and differ between runs.
pub fn write_timing(out: &Path, records: &[TimingRecord]) -> Result<(), PipelineError> {
    let report = timing_report(records);
    let json = serde_json::json!({ "records": records, "summary": report });
    write_file(
        &out.join("timing.json"),
        serde_json::to_string_pretty(&json).unwrap().as_bytes(),
    )?;
    write_file(&out.join("timing.txt"), report.to_table().as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineSelector {
    VehicleOnly,
    Cooperative,
    Both,
}

impl PipelineSelector {
    fn vehicle_only(self) -> bool {
        matches!(self, PipelineSelector::VehicleOnly | PipelineSelector::Both)
    }

    fn cooperative(self) -> bool {
        matches!(self, PipelineSelector::Cooperative | PipelineSelector::Both)
    }
}

impl std::str::FromStr for PipelineSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vehicle_only" => Ok(Self::VehicleOnly),
            "cooperative" => Ok(Self::Cooperative),
            "both" => Ok(Self::Both),
            other => Err(format!(
                "unknown pipeline `{other}` (vehicle_only | cooperative | both)"
            )),
        }
    }
}

/// Where tracking sits relative to fusion in the cooperative variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    /// Fuse detections, then run one tracker over the fused set.
    #[default]
    FuseThenTrack,
    /// Track each sensor on its own, then fuse the confirmed tracks.
    TrackThenFuse,
}

impl std::str::FromStr for StageOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fuse_then_track" => Ok(Self::FuseThenTrack),
            "track_then_fuse" => Ok(Self::TrackThenFuse),
            other => Err(format!(
                "unknown order `{other}` (fuse_then_track | track_then_fuse)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub selector: PipelineSelector,
    pub order: StageOrder,
    pub seed: u64,
    /// Read clouds and oxts from a `simulate` output instead of scanning.
    pub sim_dir: Option<PathBuf>,
    /// External detections: `{dir}/{sensor}/label/0000.txt`, sensor frame.
    pub labels_dir: Option<PathBuf>,
    pub detector: DetectorParams,
    pub fusion: FusionParams,
    pub tracker: TrackerParams,
    /// Sustain length for first-detection earliness.
    pub sustain: usize,
    pub point_decimation: usize,
    pub future_steps: usize,
    /// Roadside detections of the ego (BEV IoU at or above this) are dropped.
    pub ego_suppression_iou: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            selector: PipelineSelector::Both,
            order: StageOrder::FuseThenTrack,
            seed: 0,
            sim_dir: None,
            labels_dir: None,
            detector: DetectorParams::default(),
            fusion: FusionParams::default(),
            tracker: TrackerParams::default(),
            sustain: 1,
            point_decimation: 4,
            future_steps: 10,
            ego_suppression_iou: 0.1,
        }
    }
}

/// Metrics of one pipeline variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub name: String,
    pub frames: Vec<FrameMetrics>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub tracking: MotMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub scenario: String,
    pub seed: u64,
    pub selector: PipelineSelector,
    pub order: StageOrder,
    pub vehicle_only: Option<VariantMetrics>,
    pub cooperative: Option<VariantMetrics>,
    /// Present for selector `both`.
    pub earliness: Option<Vec<TargetEarliness>>,
}

impl PipelineReport {
    pub fn earliness_of(&self, target: &str) -> Option<i64> {
        self.earliness
            .as_ref()?
            .iter()
            .find(|e| e.target == target)?
            .earliness_frames
    }
}

struct SensorSetup {
    id: String,
    parent: String,
    registration: SensorRegistration,
    external: Option<Vec<Vec<LabelRecord>>>,
}

fn load_external(path: &Path, frame_count: usize) -> Result<Vec<Vec<LabelRecord>>, PipelineError> {
    let mut f = open_file(path)?;
    let records = read_labels(&mut f).map_err(kitti_err(path))?;
    let mut frames = vec![Vec::new(); frame_count];
    for r in records {
        if r.frame >= 0 && (r.frame as usize) < frame_count {
            frames[r.frame as usize].push(r);
        }
    }
    Ok(frames)
}

fn variant_metrics(name: &str, frames: Vec<FrameMetrics>, tracking: MotMetrics) -> VariantMetrics {
    let n = frames.len().max(1) as f64;
    VariantMetrics {
        name: name.to_string(),
        mean_precision: frames.iter().map(FrameMetrics::precision).sum::<f64>() / n,
        mean_recall: frames.iter().map(FrameMetrics::recall).sum::<f64>() / n,
        frames,
        tracking,
    }
}

/// Folds several global-frame detection streams into one set.
fn fuse_streams(streams: &[&[Detection]], params: &FusionParams) -> Vec<Detection> {
    let mut acc: Vec<Detection> = Vec::new();
    for s in streams {
        acc = merge(&acc, s, params);
    }
    acc
}

/// Fuses per-sensor track outputs. Each fused box inherits the id and
/// velocity of the source track it overlaps most; ids are namespaced by
/// sensor index in the high 32 bits.
fn fuse_tracks(per_sensor: &[(&str, Vec<TrackOutput>)], params: &FusionParams) -> Vec<TrackOutput> {
    let as_dets: Vec<Vec<Detection>> = per_sensor
        .iter()
        .map(|(id, tracks)| {
            tracks
                .iter()
                .map(|t| Detection {
                    bbox: t.bbox,
                    class: t.class,
                    score: t.score,
                    source: id.to_string(),
                })
                .collect()
        })
        .collect();
    let streams: Vec<&[Detection]> = as_dets.iter().map(Vec::as_slice).collect();
    fuse_streams(&streams, params)
        .into_iter()
        .map(|d| {
            let (index, tracks) = per_sensor
                .iter()
                .enumerate()
                .find(|(_, (id, _))| *id == d.source)
                .map(|(i, (_, t))| (i, t))
                .expect("fused boxes keep their source");
            let origin = tracks
                .iter()
                .filter(|t| t.class == d.class)
                .max_by(|a, b| iou_bev(&a.bbox, &d.bbox).total_cmp(&iou_bev(&b.bbox, &d.bbox)))
                .expect("source stream holds the box");
            TrackOutput {
                id: ((index as u64) << 32) | origin.id,
                bbox: d.bbox,
                class: d.class,
                score: d.score,
                velocity: origin.velocity,
            }
        })
        .collect()
}

/// Runs perception → fusion → tracking → evaluation over every frame and
/// writes `metrics/`, `tracks/` and `scene/` under `out`.
pub fn run_pipeline(
    config: &ScenarioConfig,
    options: &PipelineOptions,
    out: &Path,
) -> Result<PipelineReport, PipelineError> {
    options.detector.validate()?;
    options.fusion.validate()?;
    options.tracker.validate()?;
    if !config
        .sensors
        .iter()
        .any(|s| config.sensor_kind(s) == SensorKind::Vehicle)
    {
        return Err(PipelineError::Config(
            "scenario has no vehicle sensor".into(),
        ));
    }

    let sensors: Vec<SensorSetup> = config
        .sensors
        .iter()
        .map(|s| {
            let kind = config.sensor_kind(s);
            let registration = match kind {
                SensorKind::Vehicle => SensorRegistration::vehicle(&s.id, s.mount),
                SensorKind::Roadside => {
                    SensorRegistration::roadside(&s.id, config.parent_pose(&s.id, 0)?, s.mount)
                }
            };
            let external = match &options.labels_dir {
                Some(dir) => Some(load_external(
                    &label_path(&dir.join(&s.id), 0),
                    config.frame_count,
                )?),
                None => None,
            };
            Ok(SensorSetup {
                id: s.id.clone(),
                parent: s.parent.clone(),
                registration,
                external,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    let wanted = |s: &SensorSetup| {
        s.registration.kind == SensorKind::Vehicle || options.selector.cooperative()
    };

    let ego = config.ego();
    let mut vehicle_tracker = Tracker::new(options.tracker.clone(), config.frame_dt)?;
    let mut fused_tracker = Tracker::new(options.tracker.clone(), config.frame_dt)?;
    let mut sensor_trackers = sensors
        .iter()
        .map(|_| Tracker::new(options.tracker.clone(), config.frame_dt))
        .collect::<Result<Vec<_>, _>>()?;
    let mut timing = Vec::new();
    let mut bundles: Vec<FrameBundle> = Vec::with_capacity(config.frame_count);
    let (mut v_metrics, mut f_metrics) = (Vec::new(), Vec::new());
    let (mut v_tracks, mut f_tracks) = (Vec::new(), Vec::new());
    let mut truth_frames = Vec::new();

    for frame in 0..config.frame_count {
        let total = Instant::now();
        let world = step_world(config, frame)?;

        // Ego pose comes back through the GPS/IMU record, as on a real car.
        let t_sim = Instant::now();
        let ego_record = match &options.sim_dir {
            Some(dir) => {
                let vehicle = sensors
                    .iter()
                    .find(|s| s.registration.kind == SensorKind::Vehicle)
                    .expect("checked above");
                let path = oxts_path(&dir.join(&vehicle.id), frame);
                read_oxts(&mut open_file(&path)?).map_err(kitti_err(&path))?
            }
            None => OxtsRecord::from_pose(
                &config.geo_origin,
                &world.get(&ego.id).expect("ego in world").pose,
            )
            .map_err(|e| PipelineError::Config(e.to_string()))?,
        };
        let ego_pose = ego_record
            .to_pose(&config.geo_origin)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let ego_box = world.get(&ego.id).expect("ego in world").bbox;

        let mut clouds: Vec<Option<PointCloud>> = Vec::with_capacity(sensors.len());
        for (s, spec) in sensors.iter().zip(&config.sensors) {
            if !wanted(s) {
                clouds.push(None);
                continue;
            }
            let cloud = match &options.sim_dir {
                Some(dir) => {
                    let path = velodyne_path(&dir.join(&s.id), frame);
                    read_velodyne(&mut open_file(&path)?, &s.id).map_err(kitti_err(&path))?
                }
                None => scan_sensor(config, &world, spec, frame, options.seed)?.1,
            };
            clouds.push(Some(cloud));
        }
        let sim_seconds = t_sim.elapsed().as_secs_f64();

        let t_perceive = Instant::now();
        let mut poses = Vec::with_capacity(sensors.len());
        let mut global: Vec<Option<Vec<Detection>>> = Vec::with_capacity(sensors.len());
        for (s, cloud) in sensors.iter().zip(&clouds) {
            let vehicle_pose = (s.registration.kind == SensorKind::Vehicle).then_some(&ego_pose);
            let pose = s.registration.sensor_pose(vehicle_pose)?;
            poses.push(pose);
            let Some(cloud) = cloud else {
                global.push(None);
                continue;
            };
            let local = match &s.external {
                Some(frames) => ingest_external(&frames[frame], &s.id)?.detections,
                None => {
                    let truth = scan_world(&world, &s.parent).relative_to(&s.id, &pose);
                    let seed =
                        seeds::derive(options.seed, &format!("perception/{}", s.id), frame as u64);
                    detect(cloud, &truth, &options.detector, seed)?
                }
            };
            let mut dets = to_global(&local, &s.registration, vehicle_pose)?;
            if s.registration.kind == SensorKind::Roadside {
                dets = suppress_ego(dets, &ego_box, options.ego_suppression_iou);
            }
            global.push(Some(dets));
        }
        let perceive_seconds = t_perceive.elapsed().as_secs_f64();

        let t_fuse = Instant::now();
        let streams_of = |kind: Option<SensorKind>| -> Vec<&[Detection]> {
            sensors
                .iter()
                .zip(&global)
                .filter(|(s, _)| kind.is_none_or(|k| s.registration.kind == k))
                .filter_map(|(_, d)| d.as_deref())
                .collect()
        };
        let vehicle_dets = fuse_streams(&streams_of(Some(SensorKind::Vehicle)), &options.fusion);
        let fused_dets = options
            .selector
            .cooperative()
            .then(|| fuse_streams(&streams_of(None), &options.fusion));
        let fuse_seconds = t_fuse.elapsed().as_secs_f64();

        let truth = truth_boxes(&world);

        let t_track = Instant::now();
        let mut frame_v_tracks: Vec<TrackOutput> = Vec::new();
        let mut frame_f_tracks: Vec<TrackOutput> = Vec::new();
        if options.selector.vehicle_only() {
            v_metrics.push(match_to_truth(
                frame,
                &vehicle_dets,
                &truth,
                DEFAULT_MATCH_IOU,
            ));
            frame_v_tracks = vehicle_tracker.step(&vehicle_dets);
        }
        if let Some(fused) = &fused_dets {
            let mut m = match_to_truth(frame, fused, &truth, DEFAULT_MATCH_IOU);
            let per_stream: Vec<(&str, &[Detection])> = sensors
                .iter()
                .zip(&global)
                .filter_map(|(s, d)| Some((s.id.as_str(), d.as_deref()?)))
                .collect();
            set_stream_visibility(&mut m, &per_stream, &truth, DEFAULT_MATCH_IOU);
            f_metrics.push(m);
            frame_f_tracks = match options.order {
                StageOrder::FuseThenTrack => fused_tracker.step(fused),
                StageOrder::TrackThenFuse => {
                    let per_sensor: Vec<(&str, Vec<TrackOutput>)> = sensors
                        .iter()
                        .zip(&global)
                        .zip(&mut sensor_trackers)
                        .filter_map(|((s, d), tr)| Some((s.id.as_str(), tr.step(d.as_deref()?))))
                        .collect();
                    fuse_tracks(&per_sensor, &options.fusion)
                }
            };
        }
        let track_seconds = t_track.elapsed().as_secs_f64();

        let global_points: Vec<Option<Vec<Vector3<f64>>>> = clouds
            .iter()
            .zip(&poses)
            .map(|(c, p)| c.as_ref().map(|c| c.transformed_xyz(p)))
            .collect();
        let mut sensor_frames = Vec::new();
        for (i, s) in sensors.iter().enumerate() {
            if !wanted(s) {
                continue;
            }
            sensor_frames.push(SensorFrame {
                stream_id: &s.id,
                kind: s.registration.kind,
                pose: poses[i],
                points: global_points[i].as_deref(),
                detections: global[i].as_deref(),
            });
        }
        let mut track_sets = Vec::new();
        if options.selector.vehicle_only() {
            track_sets.push(TrackSet {
                name: "vehicle_only",
                family: Family::Sensor(SensorKind::Vehicle),
                tracks: &frame_v_tracks,
            });
        }
        if options.selector.cooperative() {
            track_sets.push(TrackSet {
                name: "fused",
                family: Family::Fused,
                tracks: &frame_f_tracks,
            });
        }
        let gt = world
            .objects
            .iter()
            .filter(|o| !o.kind.is_static())
            .map(|o| {
                let kind = serde_json::to_value(o.kind).unwrap();
                (
                    o.id.clone(),
                    truth_class_label(o.kind.object_class(), kind.as_str().unwrap_or("")),
                    o.bbox,
                )
            })
            .collect();
        bundles.push(pack_frame(&FrameArtifacts {
            frame,
            timestamp: config.timestamp(frame),
            sensors: sensor_frames,
            tracks: track_sets,
            ground_truth: Some(gt),
            point_decimation: options.point_decimation,
            future_steps: options.future_steps,
            dt: config.frame_dt,
        })?);

        v_tracks.push(frame_v_tracks);
        f_tracks.push(frame_f_tracks);
        truth_frames.push(truth);
        for (phase, seconds) in [
            (Phase::Simulate, sim_seconds),
            (Phase::Perceive, perceive_seconds),
            (Phase::Fuse, fuse_seconds),
            (Phase::Track, track_seconds),
            (Phase::Total, total.elapsed().as_secs_f64()),
        ] {
            timing.push(TimingRecord {
                frame,
                phase,
                seconds,
            });
        }
    }

    let vehicle_sensor_pose = |frame: usize| -> Result<Pose, PipelineError> {
        let s = config
            .sensors
            .iter()
            .find(|s| config.sensor_kind(s) == SensorKind::Vehicle)
            .expect("checked above");
        Ok(config.sensor_pose(&s.id, frame)?)
    };
    let write_tracks = |name: &str, tracks: &[Vec<TrackOutput>]| -> Result<(), PipelineError> {
        let mut records = Vec::new();
        for (frame, ts) in tracks.iter().enumerate() {
            let pose = vehicle_sensor_pose(frame)?;
            records.extend(ts.iter().map(|t| t.to_label(frame as i64, &pose)));
        }
        let path = label_path(&out.join("tracks").join(name), 0);
        let mut f = create_file(&path)?;
        kitti_io::write_labels(&records, &mut f)
            .and_then(|_| f.flush())
            .map_err(io_err(&path))
    };

    let mut report = PipelineReport {
        scenario: config.name.clone(),
        seed: options.seed,
        selector: options.selector,
        order: options.order,
        vehicle_only: None,
        cooperative: None,
        earliness: None,
    };
    if options.selector.vehicle_only() {
        write_tracks("vehicle_only", &v_tracks)?;
        let mot = mot_metrics(&v_tracks, &truth_frames, DEFAULT_MATCH_IOU);
        report.vehicle_only = Some(variant_metrics("vehicle_only", v_metrics, mot));
    }
    if options.selector.cooperative() {
        write_tracks("fused", &f_tracks)?;
        let mot = mot_metrics(&f_tracks, &truth_frames, DEFAULT_MATCH_IOU);
        report.cooperative = Some(variant_metrics("cooperative", f_metrics, mot));
    }
    if let (Some(v), Some(c)) = (&report.vehicle_only, &report.cooperative) {
        report.earliness = Some(earliness_report(&v.frames, &c.frames, options.sustain));
    }

    let metrics_dir = out.join("metrics");
    write_file(
        &metrics_dir.join("report.json"),
        serde_json::to_string_pretty(&report).unwrap().as_bytes(),
    )?;
    write_file(
        &metrics_dir.join("summary.txt"),
        summary_text(&report).as_bytes(),
    )?;

    let mut manifest = SceneManifest {
        scenario: config.name.clone(),
        frame_count: config.frame_count,
        frame_dt: config.frame_dt,
        streams: Vec::new(),
        lanes: config.lane_polylines(),
    };
    manifest.catalog_from(&bundles);
    write_scene(&bundles, &manifest, &out.join("scene"))?;
    write_timing(out, &timing)?;
    Ok(report)
}

/// Human-readable digest of a report.
pub fn summary_text(report: &PipelineReport) -> String {
    let mut s = format!("scenario {} seed {}\n", report.scenario, report.seed);
    for v in [&report.vehicle_only, &report.cooperative]
        .into_iter()
        .flatten()
    {
        s += &format!(
            "{:<13} precision {:.4} recall {:.4} mota {:.4} id_switches {}\n",
            v.name, v.mean_precision, v.mean_recall, v.tracking.mota, v.tracking.id_switches
        );
    }
    if let Some(rows) = &report.earliness {
        s += "target         vehicle_first  fused_first  earliness\n";
        let show = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        for e in rows {
            s += &format!(
                "{:<14} {:>13}  {:>11}  {:>9}\n",
                e.target,
                show(e.vehicle_first_frame),
                show(e.fused_first_frame),
                e.earliness_frames
                    .map_or("-".to_string(), |v| v.to_string())
            );
        }
    }
    s
}

/// Global-frame truth boxes, for callers that need them outside the pipeline.
pub fn truth_boxes(world: &WorldSnapshot) -> Vec<TruthBox> {
    world
        .objects
        .iter()
        .filter(|o| !o.is_ego)
        .filter_map(|o| {
            Some(TruthBox {
                id: o.id.clone(),
                class: o.kind.object_class()?,
                bbox: o.bbox,
            })
        })
        .collect()
}
