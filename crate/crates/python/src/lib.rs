//! Python bindings. The module is imported as `coopsim`.

use std::path::PathBuf;

use coopsim::fusion::{self, FusionParams, KeepRule};
use coopsim::geometry::{self, Dims};
use coopsim::kitti_io;
use coopsim::perception::{self, DetectorParams, ObjectClass};
use coopsim::pipeline::{self, PipelineError, PipelineOptions, PipelineSelector, StageOrder};
use coopsim::scenario::{self, ScenarioConfig};
use coopsim::tracking::{self, TrackerParams};
use nalgebra::{DMatrix, Vector3};
use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else {
        value_err(e)
    }
}

fn kitti_err(e: kitti_io::KittiError) -> PyErr {
    match e {
        kitti_io::KittiError::Io(io) => PyIOError::new_err(io.to_string()),
        other => value_err(other),
    }
}

fn open(path: &str) -> PyResult<std::fs::File> {
    std::fs::File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
}

fn create(path: &str) -> PyResult<std::fs::File> {
    std::fs::File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Oriented box: bottom-to-top extent around `center`, rotated by `yaw`
/// about z.
#[pyclass(name = "Box3D", module = "coopsim", frozen, from_py_object)]
#[derive(Clone)]
struct PyBox {
    inner: geometry::Box3D,
}

#[pymethods]
impl PyBox {
    #[new]
    #[pyo3(signature = (center, size, yaw = 0.0))]
    fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> PyResult<Self> {
        let dims = Dims::new(size[0], size[1], size[2]).map_err(value_err)?;
        Ok(Self {
            inner: geometry::Box3D::new(Vector3::from(center), dims, yaw),
        })
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.inner.center.into()
    }

    /// (length, width, height)
    #[getter]
    fn size(&self) -> [f64; 3] {
        let d = self.inner.dims;
        [d.length, d.width, d.height]
    }

    #[getter]
    fn yaw(&self) -> f64 {
        self.inner.yaw
    }

    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    fn corners(&self) -> Vec<[f64; 3]> {
        self.inner.corners().iter().map(|c| (*c).into()).collect()
    }

    fn contains(&self, point: [f64; 3]) -> bool {
        self.inner.contains_strict(&Vector3::from(point))
    }

    fn __repr__(&self) -> String {
        let [x, y, z] = self.center();
        let [l, w, h] = self.size();
        format!(
            "Box3D(center=({x}, {y}, {z}), size=({l}, {w}, {h}), yaw={})",
            self.inner.yaw
        )
    }
}

#[pyfunction]
fn iou_3d(a: &PyBox, b: &PyBox) -> f64 {
    geometry::iou_3d(&a.inner, &b.inner)
}

#[pyfunction]
fn iou_bev(a: &PyBox, b: &PyBox) -> f64 {
    geometry::iou_bev(&a.inner, &b.inner)
}

/// Minimum-cost assignment; returns (row, col) pairs sorted by row.
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<Vec<(usize, usize)>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(value_err("cost rows differ in length"));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(value_err("cost entries must be finite"));
    }
    Ok(geometry::hungarian(&DMatrix::from_fn(
        rows,
        cols,
        |r, c| cost[r][c],
    )))
}

#[pyclass(name = "Detection", module = "coopsim", from_py_object)]
#[derive(Clone)]
struct PyDetection {
    inner: perception::Detection,
}

#[pymethods]
impl PyDetection {
    #[new]
    #[pyo3(signature = (bbox, class_name, score, source = "python".to_string()))]
    fn new(bbox: PyBox, class_name: &str, score: f64, source: String) -> PyResult<Self> {
        let class: ObjectClass = class_name.parse().map_err(value_err)?;
        Ok(Self {
            inner: perception::Detection {
                bbox: bbox.inner,
                class,
                score,
                source,
            },
        })
    }

    #[getter]
    fn bbox(&self) -> PyBox {
        PyBox {
            inner: self.inner.bbox,
        }
    }

    #[getter]
    fn class_name(&self) -> &'static str {
        self.inner.class.as_str()
    }

    #[getter]
    fn score(&self) -> f64 {
        self.inner.score
    }

    #[getter]
    fn source(&self) -> &str {
        &self.inner.source
    }

    fn __repr__(&self) -> String {
        format!(
            "Detection({}, score={:.3}, source={:?}, {})",
            self.inner.class.as_str(),
            self.inner.score,
            self.inner.source,
            self.bbox().__repr__()
        )
    }
}

fn unwrap_detections(dets: &[PyDetection]) -> Vec<perception::Detection> {
    dets.iter().map(|d| d.inner.clone()).collect()
}

fn wrap_detections(dets: Vec<perception::Detection>) -> Vec<PyDetection> {
    dets.into_iter()
        .map(|inner| PyDetection { inner })
        .collect()
}

/// Merges vehicle and roadside detections already in one frame.
#[pyfunction]
#[pyo3(signature = (vehicle, roadside, iou_threshold = 0.3, keep = "higher_score"))]
fn fuse(
    vehicle: Vec<PyDetection>,
    roadside: Vec<PyDetection>,
    iou_threshold: f64,
    keep: &str,
) -> PyResult<Vec<PyDetection>> {
    let keep_rule = match keep {
        "higher_score" => KeepRule::HigherScore,
        "weighted_average" => KeepRule::WeightedAverage,
        other => return Err(value_err(format!("unknown keep rule {other:?}"))),
    };
    let params = FusionParams {
        dedup_iou_threshold: iou_threshold,
        keep_rule,
    };
    params.validate().map_err(value_err)?;
    Ok(wrap_detections(fusion::merge(
        &unwrap_detections(&vehicle),
        &unwrap_detections(&roadside),
        &params,
    )))
}

#[pyclass(name = "Tracker", module = "coopsim")]
struct PyTracker {
    inner: tracking::Tracker,
}

#[pymethods]
impl PyTracker {
    #[new]
    #[pyo3(signature = (dt = 0.1, iou_threshold = 0.1, min_hits = 3, max_age = 2))]
    fn new(dt: f64, iou_threshold: f64, min_hits: u32, max_age: u32) -> PyResult<Self> {
        let params = TrackerParams {
            iou_threshold,
            min_hits,
            max_age,
            ..TrackerParams::default()
        };
        let inner = tracking::Tracker::new(params, dt).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// One predict/associate/update cycle. Returns the emitted tracks as
    /// dicts with id, bbox, class_name, score and velocity.
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        detections: Vec<PyDetection>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .step(&unwrap_detections(&detections))
            .into_iter()
            .map(|t| {
                let d = PyDict::new(py);
                d.set_item("id", t.id)?;
                d.set_item("bbox", PyBox { inner: t.bbox })?;
                d.set_item("class_name", t.class.as_str())?;
                d.set_item("score", t.score)?;
                d.set_item("velocity", t.velocity)?;
                Ok(d)
            })
            .collect()
    }

    #[getter]
    fn live_tracks(&self) -> usize {
        self.inner.tracks().len()
    }
}

#[pyclass(name = "Scenario", module = "coopsim", frozen)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn bundled(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::load_bundled(name).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn bundled_names() -> Vec<&'static str> {
        scenario::bundled_names().collect()
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: scenario::load_scenario(text).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::from_toml(&text)
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.inner).map_err(value_err)
    }

    /// Copy with a different frame count, handy for short runs.
    fn with_frame_count(&self, frame_count: usize) -> PyResult<Self> {
        let mut inner = self.inner.clone();
        inner.frame_count = frame_count;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.frame_count
    }

    #[getter]
    fn frame_dt(&self) -> f64 {
        self.inner.frame_dt
    }

    #[getter]
    fn actors(&self) -> Vec<String> {
        self.inner.actors.iter().map(|a| a.id.clone()).collect()
    }

    #[getter]
    fn sensors(&self) -> Vec<String> {
        self.inner.sensors.iter().map(|s| s.id.clone()).collect()
    }

    /// Global-frame boxes of every actor: list of (id, kind, Box3D).
    fn world(&self, frame: usize) -> PyResult<Vec<(String, String, PyBox)>> {
        self.check_frame(frame)?;
        let w = scenario::step_world(&self.inner, frame).map_err(value_err)?;
        Ok(w.objects
            .into_iter()
            .map(|o| {
                (
                    o.id,
                    format!("{:?}", o.kind).to_lowercase(),
                    PyBox { inner: o.bbox },
                )
            })
            .collect())
    }

    /// One LiDAR sweep in the sensor frame as (x, y, z, intensity) rows,
    /// drawn from the same random stream the pipeline uses.
    #[pyo3(signature = (sensor, frame, seed = None))]
    fn scan(&self, sensor: &str, frame: usize, seed: Option<u64>) -> PyResult<Vec<[f32; 4]>> {
        self.check_frame(frame)?;
        let sensor_spec = self
            .inner
            .sensor(sensor)
            .ok_or_else(|| value_err(format!("unknown sensor {sensor:?}")))?;
        let world = scenario::step_world(&self.inner, frame).map_err(value_err)?;
        let root = seed.unwrap_or(self.inner.seed);
        let (_, cloud) = pipeline::scan_sensor(&self.inner, &world, sensor_spec, frame, root)
            .map_err(pipeline_err)?;
        Ok(cloud.points)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario({:?}, {} frames, actors={:?}, sensors={:?})",
            self.inner.name,
            self.inner.frame_count,
            self.actors(),
            self.sensors()
        )
    }
}

impl PyScenario {
    fn check_frame(&self, frame: usize) -> PyResult<()> {
        if frame >= self.inner.frame_count {
            return Err(PyIndexError::new_err(format!(
                "frame {frame} out of range (frame_count {})",
                self.inner.frame_count
            )));
        }
        Ok(())
    }
}

/// Writes the KITTI-style sensor directories; returns a summary dict.
#[pyfunction]
#[pyo3(signature = (scenario, out, seed = None))]
fn simulate<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    out: PathBuf,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let config = &scenario.inner;
    let summary = py
        .detach(|| pipeline::simulate(config, &out, seed.unwrap_or(config.seed)))
        .map_err(pipeline_err)?;
    let d = PyDict::new(py);
    d.set_item("frames", summary.frames)?;
    d.set_item("sensors", summary.sensors)?;
    d.set_item("points_per_sensor", summary.points_per_sensor)?;
    d.set_item("mean_simulate_seconds", summary.mean_simulate_seconds)?;
    Ok(d.into_any())
}

/// Runs perception, fusion, tracking and evaluation; returns the report as
/// plain Python data (the same document as `metrics/report.json`).
#[pyfunction]
#[pyo3(signature = (scenario, out, pipeline = "both", order = "fuse_then_track", seed = None, sim_dir = None, labels_dir = None, sustain = 1, noiseless = false))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    out: PathBuf,
    pipeline: &str,
    order: &str,
    seed: Option<u64>,
    sim_dir: Option<PathBuf>,
    labels_dir: Option<PathBuf>,
    sustain: usize,
    noiseless: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let config = &scenario.inner;
    let selector: PipelineSelector = pipeline.parse().map_err(value_err)?;
    let options = PipelineOptions {
        selector,
        order: order.parse::<StageOrder>().map_err(value_err)?,
        seed: seed.unwrap_or(config.seed),
        sim_dir,
        labels_dir,
        sustain,
        detector: if noiseless {
            DetectorParams::noiseless()
        } else {
            DetectorParams::default()
        },
        ..PipelineOptions::default()
    };
    let report = py
        .detach(|| pipeline::run_pipeline(config, &options, &out))
        .map_err(pipeline_err)?;
    json_to_py(py, &report)
}

#[pyfunction]
fn read_velodyne(path: &str) -> PyResult<Vec<[f32; 4]>> {
    Ok(kitti_io::read_velodyne(&mut open(path)?, "velodyne")
        .map_err(kitti_err)?
        .points)
}

#[pyfunction]
fn write_velodyne(path: &str, points: Vec<[f32; 4]>) -> PyResult<()> {
    let mut cloud = coopsim::lidar_sim::PointCloud::new("velodyne");
    cloud.points = points;
    kitti_io::write_velodyne(&cloud, &mut create(path)?)
        .map_err(|e| PyIOError::new_err(e.to_string()))
}

/// The 30 values of an oxts record, in file order.
#[pyfunction]
fn read_oxts(path: &str) -> PyResult<Vec<f64>> {
    Ok(kitti_io::read_oxts(&mut open(path)?)
        .map_err(kitti_err)?
        .values()
        .to_vec())
}

/// Label rows as dicts keyed by the record field names.
#[pyfunction]
fn read_labels<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    let labels = kitti_io::read_labels(&mut open(path)?).map_err(kitti_err)?;
    json_to_py(py, &labels)
}

#[pyfunction]
fn read_tracklets<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    let tracklets = kitti_io::read_tracklets(&mut open(path)?).map_err(kitti_err)?;
    json_to_py(py, &tracklets)
}

#[pymodule]
#[pyo3(name = "coopsim")]
fn coopsim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox>()?;
    m.add_class::<PyDetection>()?;
    m.add_class::<PyTracker>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(iou_3d, m)?)?;
    m.add_function(wrap_pyfunction!(iou_bev, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(read_velodyne, m)?)?;
    m.add_function(wrap_pyfunction!(write_velodyne, m)?)?;
    m.add_function(wrap_pyfunction!(read_oxts, m)?)?;
    m.add_function(wrap_pyfunction!(read_labels, m)?)?;
    m.add_function(wrap_pyfunction!(read_tracklets, m)?)?;
    Ok(())
}
