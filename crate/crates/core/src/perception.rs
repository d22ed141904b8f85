//! Per-sensor object detection.
//!
//! [`detect`] is an oracle-driven surrogate for a learned point-cloud
//! detector: a ground-truth box is reported when enough LiDAR returns fall
//! inside it, with Gaussian noise on its geometry. [`ingest_external`]
//! brings in detections produced elsewhere, in KITTI label format.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_3d, Box3D, Dims};
use crate::kitti_io::{label_to_box, LabelRecord};
use crate::lidar_sim::PointCloud;
use crate::scenario::WorldSnapshot;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [
        ObjectClass::Car,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Cyclist => "Cyclist",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Car" => Ok(ObjectClass::Car),
            "Pedestrian" => Ok(ObjectClass::Pedestrian),
            "Cyclist" => Ok(ObjectClass::Cyclist),
            other => Err(format!("unknown class `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: Box3D,
    pub class: ObjectClass,
    pub score: f64,
    /// Stream id of the producing sensor, e.g. `vehicle` or `roadside`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    pub min_points: usize,
    pub center_noise_sigma: f64,
    pub yaw_noise_sigma: f64,
    pub dims_noise_sigma: f64,
    pub max_detect_range: f64,
    pub score_saturation_points: usize,
    /// Mean number of spurious detections per call (Poisson). Zero keeps
    /// the detector free of false positives.
    pub clutter_rate: f64,
    /// Noise draws whose box overlaps the truth below this IoU are redrawn,
    /// so every emitted detection still matches its object. Zero disables
    /// the truncation.
    pub min_truth_iou: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            min_points: 20,
            center_noise_sigma: 0.15,
            yaw_noise_sigma: 0.05,
            dims_noise_sigma: 0.05,
            max_detect_range: 80.0,
            score_saturation_points: 200,
            clutter_rate: 0.0,
            min_truth_iou: 0.5,
        }
    }
}

impl DetectorParams {
    pub fn noiseless() -> Self {
        Self {
            center_noise_sigma: 0.0,
            yaw_noise_sigma: 0.0,
            dims_noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        let sigmas = [
            self.center_noise_sigma,
            self.yaw_noise_sigma,
            self.dims_noise_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(PerceptionError::InvalidParams(
                "noise sigmas must be >= 0".into(),
            ));
        }
        if self.min_points < 1 || self.score_saturation_points < 1 {
            return Err(PerceptionError::InvalidParams(
                "min_points and score_saturation_points must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_truth_iou) {
            return Err(PerceptionError::InvalidParams(
                "min_truth_iou must be in [0, 1]".into(),
            ));
        }
        if self.max_detect_range.is_nan()
            || self.max_detect_range <= 0.0
            || !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite())
        {
            return Err(PerceptionError::InvalidParams(
                "max_detect_range must be > 0 and clutter_rate >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("frame mismatch: cloud in `{cloud}`, truth in `{truth}`")]
    FrameMismatch { cloud: String, truth: String },
    #[error("labels span several frames ({0} and {1})")]
    MixedFrames(i64, i64),
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
}

fn sample(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma checked").sample(rng)
    } else {
        0.0
    }
}

/// Smallest dimension a noisy box may take, meters.
const MIN_NOISY_DIM: f64 = 0.05;

/// Redraws allowed before falling back to the exact truth box.
const MAX_NOISE_DRAWS: usize = 64;

fn noisy_box(b: &Box3D, params: &DetectorParams, rng: &mut ChaCha8Rng) -> Box3D {
    let center = b.center
        + Vector3::new(
            sample(rng, params.center_noise_sigma),
            sample(rng, params.center_noise_sigma),
            sample(rng, params.center_noise_sigma),
        );
    let mut dim = |d: f64| (d + sample(rng, params.dims_noise_sigma)).max(MIN_NOISY_DIM);
    let dims = Dims {
        length: dim(b.dims.length),
        width: dim(b.dims.width),
        height: dim(b.dims.height),
    };
    let yaw = b.yaw + sample(rng, params.yaw_noise_sigma);
    Box3D::new(center, dims, yaw)
}

/// Detects the truth boxes that hold at least `min_points` cloud points.
///
/// `truth` must be expressed in the cloud's sensor frame. Each target draws
/// its noise from its own stream (seeded from `seed` and the actor id), so
/// one target's visibility never perturbs another's box. Output is ordered by
/// ascending center range.
pub fn detect(
    cloud: &PointCloud,
    truth: &WorldSnapshot,
    params: &DetectorParams,
    seed: u64,
) -> Result<Vec<Detection>, PerceptionError> {
    if cloud.frame != truth.frame_id {
        return Err(PerceptionError::FrameMismatch {
            cloud: cloud.frame.clone(),
            truth: truth.frame_id.clone(),
        });
    }
    params.validate()?;
    let points: Vec<Vector3<f64>> = (0..cloud.len()).map(|i| cloud.xyz(i)).collect();

    let mut found: Vec<(f64, Detection)> = Vec::new();
    for obj in &truth.objects {
        let Some(class) = obj.kind.object_class() else {
            continue;
        };
        let range = obj.bbox.center.norm();
        if range > params.max_detect_range {
            continue;
        }
        let count = points
            .iter()
            .filter(|p| obj.bbox.contains_strict(p))
            .count();
        if count < params.min_points {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &obj.id, 0));
        let b = &obj.bbox;
        let bbox = (0..MAX_NOISE_DRAWS)
            .map(|_| noisy_box(b, params, &mut rng))
            .find(|n| params.min_truth_iou == 0.0 || iou_3d(n, b) >= params.min_truth_iou)
            .unwrap_or(*b);
        let score = (count as f64 / params.score_saturation_points as f64).min(1.0);
        found.push((
            range,
            Detection {
                bbox,
                class,
                score,
                source: cloud.frame.clone(),
            },
        ));
    }

    if params.clutter_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, "clutter", 0));
        let n = Poisson::new(params.clutter_rate)
            .expect("rate checked")
            .sample(&mut rng) as usize;
        for _ in 0..n {
            let r = params.max_detect_range * rng.random::<f64>().sqrt();
            let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let center = Vector3::new(r * theta.cos(), r * theta.sin(), 0.0);
            found.push((
                r,
                Detection {
                    bbox: Box3D::new(
                        center,
                        Dims {
                            length: 4.2,
                            width: 1.8,
                            height: 1.5,
                        },
                        rng.random_range(-3.1..3.1),
                    ),
                    class: ObjectClass::Car,
                    score: rng.random_range(0.1..0.5),
                    source: cloud.frame.clone(),
                },
            ));
        }
    }

    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(found.into_iter().map(|(_, d)| d).collect())
}

/// Result of [`ingest_external`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ingested {
    pub detections: Vec<Detection>,
    /// Labels dropped for an unknown class or unusable geometry.
    pub skipped: usize,
}

/// Converts one frame of KITTI labels (camera convention) into detections in
/// the velodyne frame of `source`. Missing scores default to 1.
pub fn ingest_external(labels: &[LabelRecord], source: &str) -> Result<Ingested, PerceptionError> {
    if let Some(first) = labels.first() {
        if let Some(other) = labels.iter().find(|l| l.frame != first.frame) {
            return Err(PerceptionError::MixedFrames(first.frame, other.frame));
        }
    }
    let mut out = Ingested::default();
    for label in labels {
        let Ok(class) = label.object_type.parse::<ObjectClass>() else {
            out.skipped += 1;
            continue;
        };
        let Ok(bbox) = label_to_box(label) else {
            out.skipped += 1;
            continue;
        };
        out.detections.push(Detection {
            bbox,
            class,
            score: label.score.unwrap_or(1.0).clamp(0.0, 1.0),
            source: source.to_string(),
        });
    }
    Ok(out)
}
