//! Per-frame stream bundles for the viewer, scene persistence, and the
//! read-only HTTP service.
//!
//! A scene directory holds `manifest.json` and `frames/NNNNNN.json`. Every
//! coordinate is in the global frame. The JSON layout is documented in
//! `docs/scene_format.md`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::SensorKind;
use crate::geometry::Pose;
use crate::perception::{Detection, ObjectClass};
use crate::tracking::TrackOutput;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("duplicate stream path `{0}`")]
    DuplicateStream(String),
    #[error("frame {frame}: stream `{stream}` is not in the manifest catalog")]
    Uncataloged { frame: usize, stream: String },
    #[error("missing frame {frame} ({path})")]
    MissingFrame { frame: usize, path: PathBuf },
    #[error("frame file {path} holds frame {found}, expected {expected}")]
    FrameIndex {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("frame {frame}: timestamp {timestamp} does not increase")]
    NonMonotonic { frame: usize, timestamp: f64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("failed to start server: {0}")]
    Server(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Points,
    Boxes,
    Pose,
}

/// One box in a `boxes` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxItem {
    /// Track id, actor id, or per-frame detection index.
    pub id: String,
    pub class: String,
    pub score: f64,
    pub source: String,
    pub center: [f64; 3],
    /// length, width, height
    pub size: [f64; 3],
    pub yaw: f64,
    /// Constant-velocity extrapolation of the center, tracks only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub future: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// Flat `x, y, z` triples.
    Points {
        points: Vec<f32>,
    },
    Boxes {
        boxes: Vec<BoxItem>,
    },
    Pose {
        position: [f64; 3],
        roll: f64,
        pitch: f64,
        yaw: f64,
    },
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Points { .. } => PayloadKind::Points,
            Payload::Boxes { .. } => PayloadKind::Boxes,
            Payload::Pose { .. } => PayloadKind::Pose,
        }
    }

    pub fn pose(p: &Pose) -> Self {
        Payload::Pose {
            position: p.position.into(),
            roll: p.roll,
            pitch: p.pitch,
            yaw: p.yaw,
        }
    }

    /// Global-frame points, keeping every `decimation`-th one.
    pub fn points(points: &[Vector3<f64>], decimation: usize) -> Self {
        Payload::Points {
            points: points
                .iter()
                .step_by(decimation.max(1))
                .flat_map(|p| [p.x as f32, p.y as f32, p.z as f32])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamData {
    pub color: String,
    #[serde(flatten)]
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBundle {
    pub frame: usize,
    pub timestamp: f64,
    pub streams: BTreeMap<String, StreamData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub path: String,
    pub kind: PayloadKind,
    pub color: String,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scenario: String,
    pub frame_count: usize,
    pub frame_dt: f64,
    pub streams: Vec<StreamInfo>,
    pub lanes: Vec<Vec<[f64; 3]>>,
}

impl SceneManifest {
    pub fn stream(&self, path: &str) -> Option<&StreamInfo> {
        self.streams.iter().find(|s| s.path == path)
    }

    /// Catalog entries for every stream in `bundles`, keeping existing ones.
    pub fn catalog_from(&mut self, bundles: &[FrameBundle]) {
        for b in bundles {
            for (path, data) in &b.streams {
                if self.stream(path).is_none() {
                    self.streams.push(StreamInfo {
                        path: path.clone(),
                        kind: data.payload.kind(),
                        color: data.color.clone(),
                        visible: true,
                    });
                }
            }
        }
        self.streams.sort_by(|a, b| a.path.cmp(&b.path));
    }
}

// ---------------------------------------------------------------------------
// colors

const BLUES: [&str; 4] = ["#1f77b4", "#4a90d9", "#0b3d91", "#7fb3e6"];
const GREENS: [&str; 4] = ["#2ca02c", "#56c256", "#146314", "#98df8a"];
const ORANGES: [&str; 3] = ["#ff7f0e", "#ffa64d", "#c85a00"];
const GRAY: &str = "#9a9a9a";

/// Role of a stream within its source family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    Lidar,
    Detections,
    Tracks,
    Pose,
}

impl StreamRole {
    fn shade(self) -> usize {
        match self {
            StreamRole::Lidar => 0,
            StreamRole::Detections => 1,
            StreamRole::Tracks => 2,
            StreamRole::Pose => 3,
        }
    }
}

/// Family a stream belongs to for coloring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Sensor(SensorKind),
    Fused,
    GroundTruth,
}

pub fn default_color(family: Family, role: StreamRole) -> &'static str {
    match family {
        Family::Sensor(SensorKind::Vehicle) => BLUES[role.shade()],
        Family::Sensor(SensorKind::Roadside) => GREENS[role.shade()],
        Family::Fused => ORANGES[role.shade().min(ORANGES.len() - 1)],
        Family::GroundTruth => GRAY,
    }
}

// ---------------------------------------------------------------------------
// packing

/// One sensor's contribution to a frame.
#[derive(Debug, Clone)]
pub struct SensorFrame<'a> {
    pub stream_id: &'a str,
    pub kind: SensorKind,
    /// Global sensor pose.
    pub pose: Pose,
    /// Points already in the global frame, if exported.
    pub points: Option<&'a [Vector3<f64>]>,
    /// Global-frame detections, if this pipeline ran the sensor's detector.
    pub detections: Option<&'a [Detection]>,
}

/// Named track set (e.g. `fused` or `vehicle`).
#[derive(Debug, Clone)]
pub struct TrackSet<'a> {
    pub name: &'a str,
    pub family: Family,
    pub tracks: &'a [TrackOutput],
}

#[derive(Debug, Clone)]
pub struct FrameArtifacts<'a> {
    pub frame: usize,
    pub timestamp: f64,
    pub sensors: Vec<SensorFrame<'a>>,
    pub tracks: Vec<TrackSet<'a>>,
    /// `(actor id, class, box)` in the global frame.
    pub ground_truth: Option<Vec<(String, String, crate::geometry::Box3D)>>,
    pub point_decimation: usize,
    pub future_steps: usize,
    pub dt: f64,
}

fn box_item(
    id: String,
    class: &str,
    score: f64,
    source: &str,
    b: &crate::geometry::Box3D,
) -> BoxItem {
    BoxItem {
        id,
        class: class.to_string(),
        score,
        source: source.to_string(),
        center: b.center.into(),
        size: [b.dims.length, b.dims.width, b.dims.height],
        yaw: b.yaw,
        future: Vec::new(),
    }
}

/// Center positions after `1..=steps` constant-velocity steps of `dt`.
pub fn future_polyline(
    center: &Vector3<f64>,
    velocity: &[f64; 3],
    steps: usize,
    dt: f64,
) -> Vec<[f64; 3]> {
    let v = Vector3::from(*velocity);
    (1..=steps)
        .map(|k| (center + v * (k as f64 * dt)).into())
        .collect()
}

fn insert(
    streams: &mut BTreeMap<String, StreamData>,
    path: String,
    color: &str,
    payload: Payload,
) -> Result<(), ExportError> {
    if streams.contains_key(&path) {
        return Err(ExportError::DuplicateStream(path));
    }
    streams.insert(
        path,
        StreamData {
            color: color.to_string(),
            payload,
        },
    );
    Ok(())
}

/// Assembles the streams of one synchronized frame.
///
/// Paths: `/{sensor}/lidar`, `/{sensor}/pose`, `/{sensor}/detections`,
/// `/{set}/tracks`, `/ground_truth/boxes`.
pub fn pack_frame(a: &FrameArtifacts<'_>) -> Result<FrameBundle, ExportError> {
    let mut streams = BTreeMap::new();
    for s in &a.sensors {
        let fam = Family::Sensor(s.kind);
        if let Some(points) = s.points {
            insert(
                &mut streams,
                format!("/{}/lidar", s.stream_id),
                default_color(fam, StreamRole::Lidar),
                Payload::points(points, a.point_decimation),
            )?;
        }
        insert(
            &mut streams,
            format!("/{}/pose", s.stream_id),
            default_color(fam, StreamRole::Pose),
            Payload::pose(&s.pose),
        )?;
        if let Some(dets) = s.detections {
            let boxes = dets
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    box_item(i.to_string(), d.class.as_str(), d.score, &d.source, &d.bbox)
                })
                .collect();
            insert(
                &mut streams,
                format!("/{}/detections", s.stream_id),
                default_color(fam, StreamRole::Detections),
                Payload::Boxes { boxes },
            )?;
        }
    }
    for set in &a.tracks {
        let boxes = set
            .tracks
            .iter()
            .map(|t| BoxItem {
                future: future_polyline(&t.bbox.center, &t.velocity, a.future_steps, a.dt),
                ..box_item(
                    t.id.to_string(),
                    t.class.as_str(),
                    t.score,
                    set.name,
                    &t.bbox,
                )
            })
            .collect();
        insert(
            &mut streams,
            format!("/{}/tracks", set.name),
            default_color(set.family, StreamRole::Tracks),
            Payload::Boxes { boxes },
        )?;
    }
    if let Some(gt) = &a.ground_truth {
        let boxes = gt
            .iter()
            .map(|(id, class, b)| box_item(id.clone(), class, 1.0, "ground_truth", b))
            .collect();
        insert(
            &mut streams,
            "/ground_truth/boxes".into(),
            default_color(Family::GroundTruth, StreamRole::Detections),
            Payload::Boxes { boxes },
        )?;
    }
    Ok(FrameBundle {
        frame: a.frame,
        timestamp: a.timestamp,
        streams,
    })
}

/// Class label used for ground-truth boxes of non-target actors.
pub fn truth_class_label(class: Option<ObjectClass>, kind_name: &str) -> String {
    class
        .map(|c| c.as_str().to_string())
        .unwrap_or_else(|| kind_name.to_string())
}

// ---------------------------------------------------------------------------
// persistence

pub fn frame_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join("frames").join(format!("{frame:06}.json"))
}

/// Serialized bytes of a frame file; identical inputs give identical bytes.
pub fn frame_bytes(bundle: &FrameBundle) -> Vec<u8> {
    serde_json::to_vec(bundle).expect("bundle is always serializable")
}

pub fn write_scene(
    bundles: &[FrameBundle],
    manifest: &SceneManifest,
    dir: &Path,
) -> Result<(), ExportError> {
    check_scene(manifest, bundles)?;
    let frames = dir.join("frames");
    fs::create_dir_all(&frames).map_err(io_err(&frames))?;
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_vec_pretty(manifest).expect("manifest is always serializable");
    fs::write(&mpath, text).map_err(io_err(&mpath))?;
    for b in bundles {
        let path = frame_path(dir, b.frame);
        fs::write(&path, frame_bytes(b)).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<SceneManifest, ExportError> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&bytes).map_err(|source| ExportError::Json { path, source })
}

fn check_scene(manifest: &SceneManifest, bundles: &[FrameBundle]) -> Result<(), ExportError> {
    let mut last = f64::NEG_INFINITY;
    for (i, b) in bundles.iter().enumerate() {
        if b.frame != i {
            return Err(ExportError::FrameIndex {
                path: PathBuf::from(format!("frames/{i:06}.json")),
                expected: i,
                found: b.frame,
            });
        }
        if b.timestamp.is_nan() || b.timestamp <= last {
            return Err(ExportError::NonMonotonic {
                frame: b.frame,
                timestamp: b.timestamp,
            });
        }
        last = b.timestamp;
        if let Some(path) = b.streams.keys().find(|p| manifest.stream(p).is_none()) {
            return Err(ExportError::Uncataloged {
                frame: b.frame,
                stream: path.clone(),
            });
        }
    }
    Ok(())
}

/// Loads and validates a whole scene.
pub fn read_scene(dir: &Path) -> Result<(SceneManifest, Vec<FrameBundle>), ExportError> {
    let manifest = read_manifest(dir)?;
    let mut bundles = Vec::with_capacity(manifest.frame_count);
    for frame in 0..manifest.frame_count {
        let path = frame_path(dir, frame);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(ExportError::MissingFrame { frame, path })
            }
            Err(source) => return Err(ExportError::Io { path, source }),
        };
        let bundle: FrameBundle =
            serde_json::from_slice(&bytes).map_err(|source| ExportError::Json {
                path: path.clone(),
                source,
            })?;
        if bundle.frame != frame {
            return Err(ExportError::FrameIndex {
                path,
                expected: frame,
                found: bundle.frame,
            });
        }
        bundles.push(bundle);
    }
    check_scene(&manifest, &bundles)?;
    Ok((manifest, bundles))
}

// ---------------------------------------------------------------------------
// HTTP

#[cfg(feature = "server")]
pub mod server {
    //! `GET /manifest` and `GET /frames/{i}` over a scene loaded at startup.

    use std::net::SocketAddr;
    use std::path::Path;
    use std::sync::Arc;

    use axum::extract::{Path as UrlPath, State};
    use axum::http::{header, StatusCode};
    use axum::response::{IntoResponse, Response};
    use axum::routing::get;
    use axum::Router;
    use tokio::net::TcpListener;
    use tower_http::cors::CorsLayer;

    use super::{frame_bytes, read_scene, ExportError};

    struct Scene {
        manifest: Vec<u8>,
        frames: Vec<Vec<u8>>,
    }

    fn json(bytes: &[u8]) -> Response {
        ([(header::CONTENT_TYPE, "application/json")], bytes.to_vec()).into_response()
    }

    async fn get_manifest(State(scene): State<Arc<Scene>>) -> Response {
        json(&scene.manifest)
    }

    async fn get_frame(
        State(scene): State<Arc<Scene>>,
        UrlPath(index): UrlPath<String>,
    ) -> Response {
        match index
            .parse::<usize>()
            .ok()
            .and_then(|i| scene.frames.get(i))
        {
            Some(bytes) => json(bytes),
            None => (StatusCode::NOT_FOUND, format!("no frame {index}")).into_response(),
        }
    }

    /// Loads and validates `dir`, then builds the router. Fails before any
    /// socket is opened if the scene is malformed.
    pub fn router(dir: &Path) -> Result<Router, ExportError> {
        let (manifest, bundles) = read_scene(dir)?;
        let scene = Scene {
            manifest: serde_json::to_vec(&manifest).expect("manifest is always serializable"),
            frames: bundles.iter().map(frame_bytes).collect(),
        };
        Ok(Router::new()
            .route("/manifest", get(get_manifest))
            .route("/frames/{index}", get(get_frame))
            .layer(CorsLayer::permissive())
            .with_state(Arc::new(scene)))
    }

    /// Binds `addr`; returns the listener so callers can learn the port.
    pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ExportError> {
        TcpListener::bind(addr)
            .await
            .map_err(|e| ExportError::Server(format!("cannot bind {addr}: {e}")))
    }

    /// Serves until `shutdown` resolves.
    pub async fn serve_with_shutdown(
        router: Router,
        listener: TcpListener,
        shutdown: impl std::future::Future<Output = ()> + Send + 'static,
    ) -> Result<(), ExportError> {
        axum::serve(listener, router)
            .with_graceful_shutdown(shutdown)
            .await
            .map_err(|e| ExportError::Server(e.to_string()))
    }

    /// Validates the scene, binds `0.0.0.0:port`, serves until Ctrl-C.
    pub async fn serve(dir: &Path, port: u16) -> Result<(), ExportError> {
        let router = router(dir)?;
        let listener = bind(SocketAddr::from(([0, 0, 0, 0], port))).await?;
        serve_with_shutdown(router, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Box3D, Dims};

    fn manifest(frame_count: usize) -> SceneManifest {
        SceneManifest {
            scenario: "t".into(),
            frame_count,
            frame_dt: 0.1,
            streams: Vec::new(),
            lanes: vec![vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]],
        }
    }

    fn artifacts<'a>(frame: usize, sensors: Vec<SensorFrame<'a>>) -> FrameArtifacts<'a> {
        FrameArtifacts {
            frame,
            timestamp: frame as f64 * 0.1,
            sensors,
            tracks: Vec::new(),
            ground_truth: None,
            point_decimation: 1,
            future_steps: 5,
            dt: 0.1,
        }
    }

    #[test]
    fn vehicle_cloud_only_frame() {
        let pts = [Vector3::new(1.0, 2.0, 3.0)];
        let b = pack_frame(&artifacts(
            0,
            vec![SensorFrame {
                stream_id: "vehicle",
                kind: SensorKind::Vehicle,
                pose: Pose::identity(),
                points: Some(&pts),
                detections: None,
            }],
        ))
        .unwrap();
        let paths: Vec<&str> = b.streams.keys().map(String::as_str).collect();
        assert_eq!(paths, vec!["/vehicle/lidar", "/vehicle/pose"]);
        assert_eq!(
            b.streams["/vehicle/lidar"].payload,
            Payload::Points {
                points: vec![1.0, 2.0, 3.0]
            }
        );
    }

    #[test]
    fn duplicate_stream_is_rejected() {
        let s = SensorFrame {
            stream_id: "vehicle",
            kind: SensorKind::Vehicle,
            pose: Pose::identity(),
            points: None,
            detections: None,
        };
        let err = pack_frame(&artifacts(0, vec![s.clone(), s])).unwrap_err();
        assert!(matches!(err, ExportError::DuplicateStream(p) if p == "/vehicle/pose"));
    }

    #[test]
    fn future_polyline_offsets() {
        let line = future_polyline(&Vector3::zeros(), &[10.0, 0.0, 0.0], 5, 0.1);
        let xs: Vec<f64> = line.iter().map(|p| p[0]).collect();
        for (x, want) in xs.iter().zip([1.0, 2.0, 3.0, 4.0, 5.0]) {
            assert!((x - want).abs() < 1e-12);
        }
    }

    #[test]
    fn source_families_have_distinct_colors() {
        let d = [Detection {
            bbox: Box3D::new(Vector3::zeros(), Dims::new(1.0, 1.0, 1.0).unwrap(), 0.0),
            class: ObjectClass::Car,
            score: 1.0,
            source: "x".into(),
        }];
        let sensor = |id, kind| SensorFrame {
            stream_id: id,
            kind,
            pose: Pose::identity(),
            points: None,
            detections: Some(&d),
        };
        let b = pack_frame(&artifacts(
            0,
            vec![
                sensor("vehicle", SensorKind::Vehicle),
                sensor("roadside", SensorKind::Roadside),
            ],
        ))
        .unwrap();
        assert_ne!(
            b.streams["/vehicle/detections"].color,
            b.streams["/roadside/detections"].color
        );
        let all: Vec<&str> = [
            Family::Sensor(SensorKind::Vehicle),
            Family::Sensor(SensorKind::Roadside),
            Family::Fused,
        ]
        .iter()
        .flat_map(|f| {
            [
                StreamRole::Lidar,
                StreamRole::Detections,
                StreamRole::Tracks,
            ]
            .map(|r| default_color(*f, r))
        })
        .chain([GRAY])
        .collect();
        let unique: std::collections::BTreeSet<_> = all.iter().collect();
        assert_eq!(unique.len(), all.len());
    }

    #[test]
    fn pack_is_byte_deterministic() {
        let pts: Vec<_> = (0..50)
            .map(|i| Vector3::new(i as f64 * 0.37, 1.0, -0.5))
            .collect();
        let make = || {
            frame_bytes(
                &pack_frame(&artifacts(
                    3,
                    vec![SensorFrame {
                        stream_id: "roadside",
                        kind: SensorKind::Roadside,
                        pose: Pose::from_xyz_yaw(1.0, 2.0, 6.0, 0.3),
                        points: Some(&pts),
                        detections: None,
                    }],
                ))
                .unwrap(),
            )
        };
        assert_eq!(make(), make());
    }

    fn scene(n: usize) -> (SceneManifest, Vec<FrameBundle>) {
        let pts = [Vector3::new(1.0, 2.0, 3.0)];
        let bundles: Vec<_> = (0..n)
            .map(|f| {
                pack_frame(&artifacts(
                    f,
                    vec![SensorFrame {
                        stream_id: "vehicle",
                        kind: SensorKind::Vehicle,
                        pose: Pose::from_xyz_yaw(f as f64, 0.0, 0.0, 0.0),
                        points: Some(&pts),
                        detections: None,
                    }],
                ))
                .unwrap()
            })
            .collect();
        let mut m = manifest(n);
        m.catalog_from(&bundles);
        (m, bundles)
    }

    #[test]
    fn scene_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (m, b) = scene(10);
        write_scene(&b, &m, dir.path()).unwrap();
        let (m2, b2) = read_scene(dir.path()).unwrap();
        assert_eq!(m2, m);
        assert_eq!(b2, b);
    }

    #[test]
    fn empty_scene_loads() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(&[], &manifest(0), dir.path()).unwrap();
        let (m, b) = read_scene(dir.path()).unwrap();
        assert_eq!(m.frame_count, 0);
        assert!(b.is_empty());
    }

    #[test]
    fn missing_frame_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (m, b) = scene(4);
        write_scene(&b, &m, dir.path()).unwrap();
        fs::remove_file(frame_path(dir.path(), 2)).unwrap();
        let err = read_scene(dir.path()).unwrap_err();
        assert!(
            matches!(err, ExportError::MissingFrame { frame: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn uncataloged_stream_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (m, mut b) = scene(5);
        b[3].streams.insert(
            "/roadside/pose".into(),
            StreamData {
                color: GREENS[3].into(),
                payload: Payload::pose(&Pose::identity()),
            },
        );
        let mut full = m.clone();
        full.catalog_from(&b);
        write_scene(&b, &full, dir.path()).unwrap();
        fs::write(
            dir.path().join("manifest.json"),
            serde_json::to_vec(&m).unwrap(),
        )
        .unwrap();
        let err = read_scene(dir.path()).unwrap_err().to_string();
        assert!(
            err.contains("/roadside/pose") && err.contains("frame 3"),
            "{err}"
        );
        assert!(write_scene(&b, &m, dir.path()).is_err());
    }
}
