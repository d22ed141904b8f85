//! Coordinate unification and decision-level fusion.
//!
//! Every stream is lifted into the global frame with
//! `T_global_sensor = parent ∘ mount`, where the parent is the ego pose of
//! the current frame for vehicle streams and the fixed install pose for
//! roadside streams. Fusion then deduplicates cross-source pairs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_3d, iou_bev, normalize_angle, transform_box, Box3D, Dims, Pose};
use crate::perception::Detection;

/// Source tag of boxes produced by averaging.
pub const FUSED_SOURCE: &str = "fused";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Vehicle,
    Roadside,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRegistration {
    pub stream_id: String,
    pub kind: SensorKind,
    /// Sensor relative to its parent.
    pub mount: Pose,
    /// Roadside parent pose in the global frame; `None` for vehicle streams.
    pub install_pose: Option<Pose>,
}

impl SensorRegistration {
    pub fn vehicle(stream_id: impl Into<String>, mount: Pose) -> Self {
        Self {
            stream_id: stream_id.into(),
            kind: SensorKind::Vehicle,
            mount,
            install_pose: None,
        }
    }

    pub fn roadside(stream_id: impl Into<String>, install_pose: Pose, mount: Pose) -> Self {
        Self {
            stream_id: stream_id.into(),
            kind: SensorKind::Roadside,
            mount,
            install_pose: Some(install_pose),
        }
    }

    /// Global pose of the sensor for one frame.
    pub fn sensor_pose(&self, vehicle_pose: Option<&Pose>) -> Result<Pose, FusionError> {
        let parent = match (self.kind, vehicle_pose, &self.install_pose) {
            (SensorKind::Vehicle, Some(p), _) => *p,
            (SensorKind::Vehicle, None, _) => {
                return Err(FusionError::MissingVehiclePose(self.stream_id.clone()))
            }
            (SensorKind::Roadside, Some(_), _) => {
                return Err(FusionError::UnexpectedVehiclePose(self.stream_id.clone()))
            }
            (SensorKind::Roadside, None, Some(p)) => *p,
            (SensorKind::Roadside, None, None) => {
                return Err(FusionError::MissingInstallPose(self.stream_id.clone()))
            }
        };
        Ok(parent.compose(&self.mount))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("vehicle stream `{0}` needs the ego pose of the frame")]
    MissingVehiclePose(String),
    #[error("roadside stream `{0}` must not be given a vehicle pose")]
    UnexpectedVehiclePose(String),
    #[error("roadside stream `{0}` has no install pose")]
    MissingInstallPose(String),
    #[error("invalid fusion parameters: {0}")]
    InvalidParams(String),
}

/// Re-expresses sensor-frame detections in the global frame.
pub fn to_global(
    detections: &[Detection],
    registration: &SensorRegistration,
    vehicle_pose: Option<&Pose>,
) -> Result<Vec<Detection>, FusionError> {
    let pose = registration.sensor_pose(vehicle_pose)?;
    Ok(detections
        .iter()
        .map(|d| Detection {
            bbox: transform_box(&pose, &d.bbox),
            ..d.clone()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KeepRule {
    #[default]
    HigherScore,
    WeightedAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    pub dedup_iou_threshold: f64,
    pub keep_rule: KeepRule,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            dedup_iou_threshold: 0.3,
            keep_rule: KeepRule::HigherScore,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<(), FusionError> {
        if (0.0..=1.0).contains(&self.dedup_iou_threshold) {
            Ok(())
        } else {
            Err(FusionError::InvalidParams(format!(
                "dedup_iou_threshold {} not in [0, 1]",
                self.dedup_iou_threshold
            )))
        }
    }
}

fn weighted_average(a: &Detection, b: &Detection) -> Detection {
    let (wa, wb) = if a.score + b.score > 0.0 {
        (a.score / (a.score + b.score), b.score / (a.score + b.score))
    } else {
        (0.5, 0.5)
    };
    let mix = |x: f64, y: f64| wa * x + wb * y;
    // Circular mean so that yaws near ±π average correctly.
    let yaw = (wa * a.bbox.yaw.sin() + wb * b.bbox.yaw.sin())
        .atan2(wa * a.bbox.yaw.cos() + wb * b.bbox.yaw.cos());
    Detection {
        bbox: Box3D::new(
            a.bbox.center * wa + b.bbox.center * wb,
            Dims {
                length: mix(a.bbox.dims.length, b.bbox.dims.length),
                width: mix(a.bbox.dims.width, b.bbox.dims.width),
                height: mix(a.bbox.dims.height, b.bbox.dims.height),
            },
            normalize_angle(yaw),
        ),
        class: a.class,
        score: a.score.max(b.score),
        source: FUSED_SOURCE.to_string(),
    }
}

/// Orders fused output: score descending, then source, then center x, then y.
pub fn output_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.source.cmp(&b.source))
        .then_with(|| a.bbox.center.x.total_cmp(&b.bbox.center.x))
        .then_with(|| a.bbox.center.y.total_cmp(&b.bbox.center.y))
}

/// Decision-level fusion of two global-frame detection sets.
///
/// Cross-source, same-class pairs with `iou_3d ≥ dedup_iou_threshold` are
/// resolved greedily in descending IoU order; each detection takes part in at
/// most one resolution.
pub fn merge(
    vehicle: &[Detection],
    roadside: &[Detection],
    params: &FusionParams,
) -> Vec<Detection> {
    let mut pairs = Vec::new();
    for (i, v) in vehicle.iter().enumerate() {
        for (j, r) in roadside.iter().enumerate() {
            if v.class != r.class {
                continue;
            }
            let iou = iou_3d(&v.bbox, &r.bbox);
            if iou >= params.dedup_iou_threshold && iou > 0.0 {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut v_done = vec![false; vehicle.len()];
    let mut r_done = vec![false; roadside.len()];
    let mut out = Vec::with_capacity(vehicle.len() + roadside.len());
    for (_, i, j) in pairs {
        if v_done[i] || r_done[j] {
            continue;
        }
        v_done[i] = true;
        r_done[j] = true;
        let (v, r) = (&vehicle[i], &roadside[j]);
        out.push(match params.keep_rule {
            KeepRule::HigherScore => {
                // Ties keep the vehicle's own detection.
                if r.score > v.score {
                    r.clone()
                } else {
                    v.clone()
                }
            }
            KeepRule::WeightedAverage => weighted_average(v, r),
        });
    }
    out.extend(
        vehicle
            .iter()
            .zip(&v_done)
            .filter(|(_, d)| !**d)
            .map(|(d, _)| d.clone()),
    );
    out.extend(
        roadside
            .iter()
            .zip(&r_done)
            .filter(|(_, d)| !**d)
            .map(|(d, _)| d.clone()),
    );
    out.sort_by(output_order);
    out
}

/// Drops roadside detections of the ego itself (BEV IoU ≥ `min_iou` with the
/// ego's box); the ego is not a target of its own perception.
pub fn suppress_ego(detections: Vec<Detection>, ego_box: &Box3D, min_iou: f64) -> Vec<Detection> {
    detections
        .into_iter()
        .filter(|d| iou_bev(&d.bbox, ego_box) < min_iou)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::ObjectClass;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use std::f64::consts::FRAC_PI_2;

    fn det(x: f64, y: f64, score: f64, source: &str) -> Detection {
        Detection {
            bbox: Box3D::new(
                Vector3::new(x, y, 0.8),
                Dims::new(4.0, 2.0, 1.6).unwrap(),
                0.0,
            ),
            class: ObjectClass::Car,
            score,
            source: source.into(),
        }
    }

    #[test]
    fn identity_registration_is_a_no_op() {
        let reg = SensorRegistration::vehicle("vehicle", Pose::identity());
        let d = vec![det(3.0, 4.0, 0.5, "vehicle")];
        assert_eq!(to_global(&d, &reg, Some(&Pose::identity())).unwrap(), d);
    }

    #[test]
    fn roadside_hand_transform() {
        let reg = SensorRegistration::roadside(
            "roadside",
            Pose::from_xyz_yaw(50.0, 10.0, 0.0, FRAC_PI_2),
            Pose::identity(),
        );
        let mut d = det(10.0, 0.0, 0.5, "roadside");
        d.bbox.center.z = 0.0;
        let g = to_global(&[d], &reg, None).unwrap();
        assert_abs_diff_eq!(
            g[0].bbox.center,
            Vector3::new(50.0, 20.0, 0.0),
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(g[0].bbox.yaw, FRAC_PI_2, epsilon = 1e-12);
        assert_eq!(g[0].source, "roadside");
    }

    #[test]
    fn pose_presence_is_checked() {
        let v = SensorRegistration::vehicle("vehicle", Pose::identity());
        assert_eq!(
            to_global(&[], &v, None),
            Err(FusionError::MissingVehiclePose("vehicle".into()))
        );
        let r = SensorRegistration::roadside("roadside", Pose::identity(), Pose::identity());
        assert!(matches!(
            to_global(&[], &r, Some(&Pose::identity())),
            Err(FusionError::UnexpectedVehiclePose(_))
        ));
    }

    #[test]
    fn global_sensor_global_round_trip() {
        // Boxes carry yaw only, so the round trip is exact for level mounts.
        let mount = Pose::from_xyz_yaw(1.0, 0.2, 1.9, 0.03);
        let reg = SensorRegistration::vehicle("vehicle", mount);
        let ego = Pose::from_xyz_yaw(-20.0, 5.0, 0.0, 2.5);
        let sensor = reg.sensor_pose(Some(&ego)).unwrap();
        let original = det(7.0, -3.0, 0.5, "vehicle");
        let local = Detection {
            bbox: transform_box(&sensor.inverse(), &original.bbox),
            ..original.clone()
        };
        let back = to_global(&[local], &reg, Some(&ego)).unwrap();
        assert_abs_diff_eq!(back[0].bbox.center, original.bbox.center, epsilon = 1e-9);
        assert_abs_diff_eq!(back[0].bbox.yaw, original.bbox.yaw, epsilon = 1e-9);
    }

    #[test]
    fn empty_roadside_returns_vehicle_set() {
        let v = vec![
            det(0.0, 0.0, 0.9, "vehicle"),
            det(10.0, 0.0, 0.8, "vehicle"),
        ];
        assert_eq!(merge(&v, &[], &FusionParams::default()), v);
    }

    #[test]
    fn identical_duplicates_collapse() {
        let v = det(0.0, 0.0, 0.6, "vehicle");
        let r = det(0.0, 0.0, 0.8, "roadside");
        let out = merge(&[v], std::slice::from_ref(&r), &FusionParams::default());
        assert_eq!(out, vec![r]);
    }

    #[test]
    fn higher_score_wins_at_iou_point_six() {
        // Same-size boxes shifted along their length: IoU = (4 − s)/(4 + s).
        // s = 1 gives 0.6.
        let v = det(0.0, 0.0, 0.9, "vehicle");
        let r = det(1.0, 0.0, 0.5, "roadside");
        assert_abs_diff_eq!(iou_3d(&v.bbox, &r.bbox), 0.6, epsilon = 1e-12);
        let out = merge(std::slice::from_ref(&v), &[r], &FusionParams::default());
        assert_eq!(out, vec![v]);
    }

    #[test]
    fn different_classes_are_never_merged() {
        let v = det(0.0, 0.0, 0.9, "vehicle");
        let mut r = det(0.0, 0.0, 0.5, "roadside");
        r.class = ObjectClass::Cyclist;
        assert_eq!(merge(&[v], &[r], &FusionParams::default()).len(), 2);
    }

    #[test]
    fn weighted_average_rule() {
        let v = det(0.0, 0.0, 0.75, "vehicle");
        let r = det(1.0, 0.0, 0.25, "roadside");
        let params = FusionParams {
            keep_rule: KeepRule::WeightedAverage,
            ..Default::default()
        };
        let out = merge(&[v], &[r], &params);
        assert_eq!(out.len(), 1);
        assert_abs_diff_eq!(out[0].bbox.center.x, 0.25, epsilon = 1e-12);
        assert_eq!(out[0].score, 0.75);
        assert_eq!(out[0].source, FUSED_SOURCE);
    }

    #[test]
    fn weighted_average_handles_wrapping_yaw() {
        let mut a = det(0.0, 0.0, 0.5, "vehicle");
        let mut b = det(0.0, 0.0, 0.5, "roadside");
        a.bbox.yaw = std::f64::consts::PI - 0.1;
        b.bbox.yaw = -std::f64::consts::PI + 0.1;
        let m = weighted_average(&a, &b);
        assert_abs_diff_eq!(m.bbox.yaw.abs(), std::f64::consts::PI, epsilon = 1e-9);
    }

    #[test]
    fn greedy_order_prefers_highest_iou() {
        let v = det(0.0, 0.0, 0.9, "vehicle");
        let r_near = det(0.5, 0.0, 0.95, "roadside");
        let r_far = det(1.5, 0.0, 0.99, "roadside");
        let out = merge(
            &[v],
            &[r_far.clone(), r_near.clone()],
            &FusionParams::default(),
        );
        assert_eq!(out, vec![r_far, r_near]);
    }

    #[test]
    fn merge_is_idempotent_and_ordered() {
        let v = vec![
            det(0.0, 0.0, 0.5, "vehicle"),
            det(20.0, 0.0, 0.5, "vehicle"),
        ];
        let r = vec![
            det(0.3, 0.0, 0.7, "roadside"),
            det(-20.0, 0.0, 0.5, "roadside"),
        ];
        let p = FusionParams::default();
        let once = merge(&v, &r, &p);
        assert_eq!(merge(&once, &[], &p), once);
        let order: Vec<(&str, f64)> = once
            .iter()
            .map(|d| (d.source.as_str(), d.bbox.center.x))
            .collect();
        assert_eq!(
            order,
            vec![("roadside", 0.3), ("roadside", -20.0), ("vehicle", 20.0)]
        );
    }

    #[test]
    fn ego_suppression() {
        let ego = det(0.0, 0.0, 1.0, "truth").bbox;
        let kept = suppress_ego(
            vec![
                det(0.2, 0.0, 0.9, "roadside"),
                det(10.0, 0.0, 0.9, "roadside"),
            ],
            &ego,
            0.1,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox.center.x, 10.0);
    }

    #[test]
    fn params_validation() {
        assert!(FusionParams::default().validate().is_ok());
        assert!(FusionParams {
            dedup_iou_threshold: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
