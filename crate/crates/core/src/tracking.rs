//! 3D multi-object tracking: constant-velocity Kalman filters per track,
//! class-gated Hungarian association on 3D IoU, birth/death lifecycle.
//!
//! State layout is `(x, y, z, yaw, l, w, h, vx, vy, vz)`; the measurement is
//! the first seven entries.

use nalgebra::{DMatrix, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{hungarian, iou_3d, normalize_angle, transform_box, Box3D, Dims, Pose};
use crate::kitti_io::{box_to_label, LabelRecord};
use crate::perception::{Detection, ObjectClass};

pub type StateVector = SVector<f64, 10>;
pub type Covariance = SMatrix<f64, 10, 10>;
type Measurement = SVector<f64, 7>;
type MeasurementMatrix = SMatrix<f64, 7, 10>;

const VELOCITY: std::ops::Range<usize> = 7..10;

#[derive(Debug, Error, PartialEq)]
#[error("invalid tracker parameters: {0}")]
pub struct TrackerParamsError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    pub iou_threshold: f64,
    pub min_hits: u32,
    pub max_age: u32,
    /// Multiplies the velocity process noise (0.01 per step).
    pub process_noise_scale: f64,
    /// Multiplies the measurement noise (0.01·I).
    pub measurement_noise_scale: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            iou_threshold: 0.1,
            min_hits: 3,
            max_age: 2,
            process_noise_scale: 1.0,
            measurement_noise_scale: 1.0,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), TrackerParamsError> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(TrackerParamsError(format!(
                "iou_threshold {} not in [0, 1]",
                self.iou_threshold
            )));
        }
        if self.min_hits < 1 {
            return Err(TrackerParamsError("min_hits must be >= 1".into()));
        }
        if !(self.process_noise_scale >= 0.0 && self.process_noise_scale.is_finite()) {
            return Err(TrackerParamsError(
                "process_noise_scale must be >= 0".into(),
            ));
        }
        if !(self.measurement_noise_scale > 0.0 && self.measurement_noise_scale.is_finite()) {
            return Err(TrackerParamsError(
                "measurement_noise_scale must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: u64,
    pub class: ObjectClass,
    pub x: StateVector,
    pub p: Covariance,
    pub hits: u32,
    pub age_since_update: u32,
    pub frames_alive: u32,
    /// Score of the last associated detection.
    pub score: f64,
}

impl TrackState {
    fn new(id: u64, det: &Detection) -> Self {
        let b = &det.bbox;
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<7>(0).copy_from(&measurement_of(b));
        let mut p = Covariance::identity() * 10.0;
        for i in VELOCITY {
            p[(i, i)] = 1000.0;
        }
        Self {
            id,
            class: det.class,
            x,
            p,
            hits: 1,
            age_since_update: 0,
            frames_alive: 1,
            score: det.score,
        }
    }

    pub fn bbox(&self) -> Box3D {
        let x = &self.x;
        // Dimensions can drift below zero under a bad update; keep the box valid.
        let d = |v: f64| v.max(1e-3);
        Box3D::new(
            Vector3::new(x[0], x[1], x[2]),
            Dims {
                length: d(x[4]),
                width: d(x[5]),
                height: d(x[6]),
            },
            x[3],
        )
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.x[7], self.x[8], self.x[9])
    }
}

fn measurement_of(b: &Box3D) -> Measurement {
    Measurement::from_column_slice(&[
        b.center.x,
        b.center.y,
        b.center.z,
        b.yaw,
        b.dims.length,
        b.dims.width,
        b.dims.height,
    ])
}

fn h_matrix() -> MeasurementMatrix {
    let mut h = MeasurementMatrix::zeros();
    for i in 0..7 {
        h[(i, i)] = 1.0;
    }
    h
}

/// One emitted track for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: Box3D,
    pub class: ObjectClass,
    pub score: f64,
    pub velocity: [f64; 3],
}

impl TrackOutput {
    /// Label row in the frame of a sensor at `sensor_pose` (global).
    pub fn to_label(&self, frame: i64, sensor_pose: &Pose) -> LabelRecord {
        let local = transform_box(&sensor_pose.inverse(), &self.bbox);
        box_to_label(
            &local,
            frame,
            self.id as i64,
            self.class.as_str(),
            Some(self.score),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Hungarian assignment on `1 − iou_3d`, run separately per class; pairs
/// below `iou_threshold` are returned as unmatched.
pub fn associate(
    predicted: &[(Box3D, ObjectClass)],
    detections: &[Detection],
    iou_threshold: f64,
) -> Association {
    let mut out = Association::default();
    let mut track_used = vec![false; predicted.len()];
    let mut det_used = vec![false; detections.len()];
    for class in ObjectClass::ALL {
        let tracks: Vec<usize> = (0..predicted.len())
            .filter(|&i| predicted[i].1 == class)
            .collect();
        let dets: Vec<usize> = (0..detections.len())
            .filter(|&j| detections[j].class == class)
            .collect();
        if tracks.is_empty() || dets.is_empty() {
            continue;
        }
        let iou = DMatrix::from_fn(tracks.len(), dets.len(), |r, c| {
            iou_3d(&predicted[tracks[r]].0, &detections[dets[c]].bbox)
        });
        let cost = iou.map(|v| 1.0 - v);
        for (r, c) in hungarian(&cost) {
            if iou[(r, c)] >= iou_threshold && iou[(r, c)] > 0.0 {
                out.matches.push((tracks[r], dets[c]));
                track_used[tracks[r]] = true;
                det_used[dets[c]] = true;
            }
        }
    }
    out.matches.sort_unstable();
    out.unmatched_tracks = (0..predicted.len()).filter(|&i| !track_used[i]).collect();
    out.unmatched_detections = (0..detections.len()).filter(|&j| !det_used[j]).collect();
    out
}

/// Stateful tracker; not shared between threads while stepping.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub params: TrackerParams,
    pub dt: f64,
    tracks: Vec<TrackState>,
    next_id: u64,
    frame_count: u32,
}

impl Tracker {
    pub fn new(params: TrackerParams, dt: f64) -> Result<Self, TrackerParamsError> {
        params.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TrackerParamsError(format!("dt must be > 0, got {dt}")));
        }
        Ok(Self {
            params,
            dt,
            tracks: Vec::new(),
            next_id: 0,
            frame_count: 0,
        })
    }

    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Advances every track one step; returns the predicted boxes in track order.
    pub fn predict(&mut self) -> Vec<(Box3D, ObjectClass)> {
        let mut f = Covariance::identity();
        for i in 0..3 {
            f[(i, 7 + i)] = self.dt;
        }
        let mut q = Covariance::zeros();
        for i in VELOCITY {
            q[(i, i)] = 0.01 * self.params.process_noise_scale;
        }
        for t in &mut self.tracks {
            t.x = f * t.x;
            t.x[3] = normalize_angle(t.x[3]);
            t.p = f * t.p * f.transpose() + q;
            t.p = (t.p + t.p.transpose()) * 0.5;
            t.age_since_update += 1;
            t.frames_alive += 1;
        }
        self.tracks.iter().map(|t| (t.bbox(), t.class)).collect()
    }

    /// Applies an association computed on this frame's prediction, spawns
    /// tracks for unmatched detections, retires stale tracks, and returns the
    /// confirmed tracks.
    ///
    /// A track is emitted when it was updated this frame and either has
    /// `min_hits` hits or the tracker is still within its first `min_hits`
    /// frames.
    pub fn update(&mut self, detections: &[Detection], assoc: &Association) -> Vec<TrackOutput> {
        self.frame_count += 1;
        let h = h_matrix();
        let r = SMatrix::<f64, 7, 7>::identity() * (0.01 * self.params.measurement_noise_scale);
        for &(ti, di) in &assoc.matches {
            let t = &mut self.tracks[ti];
            let det = &detections[di];
            let mut z = measurement_of(&det.bbox);
            let mut d = normalize_angle(z[3] - t.x[3]);
            if d.abs() > std::f64::consts::FRAC_PI_2 {
                d = normalize_angle(d + std::f64::consts::PI);
            }
            z[3] = t.x[3] + d;
            let s = h * t.p * h.transpose() + r;
            let Some(s_inv) = s.try_inverse() else {
                continue;
            };
            let k = t.p * h.transpose() * s_inv;
            t.x += k * (z - h * t.x);
            t.x[3] = normalize_angle(t.x[3]);
            let ikh = Covariance::identity() - k * h;
            t.p = ikh * t.p * ikh.transpose() + k * r * k.transpose();
            t.p = (t.p + t.p.transpose()) * 0.5;
            t.hits += 1;
            t.age_since_update = 0;
            t.score = det.score;
        }
        for &di in &assoc.unmatched_detections {
            self.tracks
                .push(TrackState::new(self.next_id, &detections[di]));
            self.next_id += 1;
        }
        let max_age = self.params.max_age;
        self.tracks.retain(|t| t.age_since_update <= max_age);

        let warm_up = self.frame_count <= self.params.min_hits;
        self.tracks
            .iter()
            .filter(|t| t.age_since_update == 0 && (t.hits >= self.params.min_hits || warm_up))
            .map(|t| TrackOutput {
                id: t.id,
                bbox: t.bbox(),
                class: t.class,
                score: t.score,
                velocity: t.velocity().into(),
            })
            .collect()
    }

    /// predict → associate → update for one frame.
    pub fn step(&mut self, detections: &[Detection]) -> Vec<TrackOutput> {
        let predicted = self.predict();
        let assoc = associate(&predicted, detections, self.params.iou_threshold);
        self.update(detections, &assoc)
    }
}

/// Runs a fresh tracker over an ordered detection sequence.
pub fn track_sequence(
    frames: &[Vec<Detection>],
    params: &TrackerParams,
    dt: f64,
) -> Result<Vec<Vec<TrackOutput>>, TrackerParamsError> {
    let mut tracker = Tracker::new(params.clone(), dt)?;
    Ok(frames.iter().map(|d| tracker.step(d)).collect())
}
