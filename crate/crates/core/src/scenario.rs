//! Scenario configuration and the stateless simulation controller.
//!
//! A scenario is a TOML document (schema in `docs/scenario_schema.md`).
//! Actor poses mark the bottom center of the actor's box, so a car resting
//! on the road has `z = 0` and its box center sits at half its height.
//! Every query is a pure function of `(config, frame_index)`.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::SensorKind;
use crate::geometry::{normalize_angle, Box3D, Dims, GeoOrigin, Pose};
use crate::lidar_sim::LidarParams;
use crate::perception::ObjectClass;

/// Parent id for sensors fixed in the global frame.
pub const WORLD: &str = "world";

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown actor id `{0}`")]
    UnknownActor(String),
    #[error("unknown sensor id `{0}`")]
    UnknownSensor(String),
    #[error("frame {frame} out of range (frame_count {frame_count})")]
    FrameOutOfRange { frame: usize, frame_count: usize },
    #[error("unknown bundled scenario `{0}`")]
    UnknownBundled(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadKind {
    Straight,
    Curve,
    Intersection,
}

/// Carried into exports as metadata; sensors ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    #[default]
    Sunny,
    Cloudy,
    Foggy,
    Rainy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Car,
    Pedestrian,
    Cyclist,
    Building,
    RoadsideMast,
}

impl ActorKind {
    pub fn is_static(&self) -> bool {
        matches!(self, ActorKind::Building | ActorKind::RoadsideMast)
    }

    /// Detector class, or `None` for infrastructure that is never detected.
    pub fn object_class(&self) -> Option<ObjectClass> {
        match self {
            ActorKind::Car => Some(ObjectClass::Car),
            ActorKind::Pedestrian => Some(ObjectClass::Pedestrian),
            ActorKind::Cyclist => Some(ObjectClass::Cyclist),
            ActorKind::Building | ActorKind::RoadsideMast => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub time: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MotionScript {
    #[default]
    Constant,
    /// Straight-line travel along the initial heading, m/s.
    Linear { speed: f64 },
    /// Piecewise-linear interpolation; angles take the shortest arc.
    Waypoints { points: Vec<Waypoint> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    pub id: String,
    pub kind: ActorKind,
    pub dims: Dims,
    pub initial_pose: Pose,
    #[serde(default)]
    pub motion: MotionScript,
    #[serde(default)]
    pub is_ego: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorType {
    #[default]
    Lidar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub id: String,
    #[serde(default)]
    pub kind: SensorType,
    /// Actor id, or `"world"`.
    pub parent: String,
    #[serde(default)]
    pub mount: Pose,
    #[serde(default)]
    pub lidar: LidarParams,
}

/// Road layout used for lane drawing. Physics ignore it beyond the z = 0
/// ground plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadGeometry {
    pub length: f64,
    /// Curve roads: arc radius, turning left from the origin.
    pub radius: f64,
    pub lane_width: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            length: 200.0,
            radius: 60.0,
            lane_width: 3.5,
        }
    }
}

fn default_name() -> String {
    "scenario".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub road_kind: RoadKind,
    #[serde(default)]
    pub road: RoadGeometry,
    #[serde(default)]
    pub weather: Weather,
    pub frame_count: usize,
    pub frame_dt: f64,
    pub geo_origin: GeoOrigin,
    #[serde(default)]
    pub seed: u64,
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub sensors: Vec<SensorSpec>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

const BUNDLED: &[(&str, &str)] = &[
    (
        "occluded_intersection",
        include_str!("../scenarios/occluded_intersection.toml"),
    ),
    (
        "ego_occludes_target",
        include_str!("../scenarios/ego_occludes_target.toml"),
    ),
    (
        "straight_road",
        include_str!("../scenarios/straight_road.toml"),
    ),
    ("curve_road", include_str!("../scenarios/curve_road.toml")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled_text(name: &str) -> Result<&'static str, ScenarioError> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| ScenarioError::UnknownBundled(name.to_string()))
}

pub fn load_bundled(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    load_scenario(bundled_text(name)?)
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

fn pose_is_finite(p: &Pose) -> bool {
    p.position.iter().all(|v| v.is_finite())
        && p.roll.is_finite()
        && p.pitch.is_finite()
        && p.yaw.is_finite()
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.frame_dt > 0.0 && self.frame_dt.is_finite()) {
            return invalid("frame_dt must be > 0");
        }
        if self.frame_count < 1 {
            return invalid("frame_count must be >= 1");
        }
        if self.geo_origin.lat0.abs() >= 90.0 || !self.geo_origin.lon0.is_finite() {
            return invalid("geo_origin.lat0 must satisfy |lat0| < 90");
        }
        let road = &self.road;
        if !(road.length > 0.0 && road.radius > 0.0 && road.lane_width > 0.0) {
            return invalid("road length, radius and lane_width must be > 0");
        }

        let mut ids = HashSet::new();
        for actor in &self.actors {
            if !ids.insert(actor.id.as_str()) {
                return invalid(format!("duplicate actor id `{}`", actor.id));
            }
            if actor.id == WORLD {
                return invalid(format!("actor id `{WORLD}` is reserved"));
            }
            if actor.dims.validate().is_err() {
                return invalid(format!(
                    "actor `{}` dims must be strictly positive",
                    actor.id
                ));
            }
            if !pose_is_finite(&actor.initial_pose) {
                return invalid(format!("actor `{}` initial_pose must be finite", actor.id));
            }
            if actor.kind.is_static() && actor.motion != MotionScript::Constant {
                return invalid(format!(
                    "static actor `{}` must use constant motion",
                    actor.id
                ));
            }
            if actor.is_ego && actor.kind.is_static() {
                return invalid(format!(
                    "ego actor `{}` cannot be static infrastructure",
                    actor.id
                ));
            }
            self.validate_motion(actor)?;
        }
        let egos: Vec<&str> = self
            .actors
            .iter()
            .filter(|a| a.is_ego)
            .map(|a| a.id.as_str())
            .collect();
        match egos.len() {
            0 => return invalid("no ego actor (exactly one required)"),
            1 => {}
            _ => {
                return invalid(format!(
                    "two ego actors: `{}` and `{}` (exactly one required)",
                    egos[0], egos[1]
                ))
            }
        }

        let mut sensor_ids = HashSet::new();
        for sensor in &self.sensors {
            if !sensor_ids.insert(sensor.id.as_str()) {
                return invalid(format!("duplicate sensor id `{}`", sensor.id));
            }
            if !pose_is_finite(&sensor.mount) {
                return invalid(format!("sensor `{}` mount must be finite", sensor.id));
            }
            if let Err(e) = sensor.lidar.validate() {
                return invalid(format!("sensor `{}`: {e}", sensor.id));
            }
            if sensor.parent != WORLD {
                let Some(parent) = self.actor(&sensor.parent) else {
                    return invalid(format!(
                        "sensor `{}` references unknown parent `{}`",
                        sensor.id, sensor.parent
                    ));
                };
                if !parent.is_ego && !parent.kind.is_static() {
                    return invalid(format!(
                        "roadside sensor `{}` must be mounted on `{WORLD}` or a static actor",
                        sensor.id
                    ));
                }
            }
        }
        Ok(())
    }

    fn validate_motion(&self, actor: &ActorSpec) -> Result<(), ScenarioError> {
        match &actor.motion {
            MotionScript::Constant => Ok(()),
            MotionScript::Linear { speed } => {
                if speed.is_finite() {
                    Ok(())
                } else {
                    invalid(format!("actor `{}` speed must be finite", actor.id))
                }
            }
            MotionScript::Waypoints { points } => {
                if points.is_empty() {
                    return invalid(format!("actor `{}` has no waypoints", actor.id));
                }
                if points
                    .iter()
                    .any(|w| !w.time.is_finite() || !pose_is_finite(&w.pose))
                {
                    return invalid(format!("actor `{}` waypoints must be finite", actor.id));
                }
                if points.windows(2).any(|w| w[1].time <= w[0].time) {
                    return invalid(format!(
                        "actor `{}` waypoint times must be strictly increasing",
                        actor.id
                    ));
                }
                let end = self.frame_count as f64 * self.frame_dt;
                let (first, last) = (points[0].time, points[points.len() - 1].time);
                if first > 0.0 || last < end - 1e-9 {
                    return invalid(format!(
                        "actor `{}` waypoints must cover [0, {end}] s (got [{first}, {last}])",
                        actor.id
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn actor(&self, id: &str) -> Option<&ActorSpec> {
        self.actors.iter().find(|a| a.id == id)
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorSpec> {
        self.sensors.iter().find(|s| s.id == id)
    }

    pub fn ego(&self) -> &ActorSpec {
        self.actors
            .iter()
            .find(|a| a.is_ego)
            .expect("validated: one ego")
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 * self.frame_dt
    }

    /// Vehicle sensors ride on the ego; everything else is roadside.
    pub fn sensor_kind(&self, sensor: &SensorSpec) -> SensorKind {
        match self.actor(&sensor.parent) {
            Some(a) if a.is_ego => SensorKind::Vehicle,
            _ => SensorKind::Roadside,
        }
    }

    fn check_frame(&self, frame: usize) -> Result<(), ScenarioError> {
        if frame < self.frame_count {
            Ok(())
        } else {
            Err(ScenarioError::FrameOutOfRange {
                frame,
                frame_count: self.frame_count,
            })
        }
    }

    /// Pose of the sensor's parent (identity for `"world"`).
    pub fn parent_pose(&self, sensor_id: &str, frame: usize) -> Result<Pose, ScenarioError> {
        let sensor = self
            .sensor(sensor_id)
            .ok_or_else(|| ScenarioError::UnknownSensor(sensor_id.to_string()))?;
        if sensor.parent == WORLD {
            self.check_frame(frame)?;
            Ok(Pose::identity())
        } else {
            actor_pose(self, &sensor.parent, frame)
        }
    }

    /// Global pose of a sensor: parent pose composed with the mount.
    pub fn sensor_pose(&self, sensor_id: &str, frame: usize) -> Result<Pose, ScenarioError> {
        let parent = self.parent_pose(sensor_id, frame)?;
        let sensor = self.sensor(sensor_id).expect("checked by parent_pose");
        Ok(parent.compose(&sensor.mount))
    }

    /// Lane lines (edges and center line) as polylines on the ground plane.
    pub fn lane_polylines(&self) -> Vec<Vec<[f64; 3]>> {
        let RoadGeometry {
            length,
            radius,
            lane_width,
        } = self.road;
        let straight = |dir: [f64; 2]| -> Vec<Vec<[f64; 3]>> {
            let normal = [-dir[1], dir[0]];
            [-lane_width, 0.0, lane_width]
                .iter()
                .map(|off| {
                    [-length / 2.0, length / 2.0]
                        .iter()
                        .map(|s| {
                            [
                                dir[0] * s + normal[0] * off,
                                dir[1] * s + normal[1] * off,
                                0.0,
                            ]
                        })
                        .collect()
                })
                .collect()
        };
        match self.road_kind {
            RoadKind::Straight => straight([1.0, 0.0]),
            RoadKind::Intersection => {
                let mut lines = straight([1.0, 0.0]);
                lines.extend(straight([0.0, 1.0]));
                lines
            }
            RoadKind::Curve => {
                // Arc centered at (0, radius), starting at the origin heading +x.
                let sweep = (length / radius).min(2.0 * PI);
                let samples = ((sweep * radius / 2.0).ceil() as usize).max(2);
                [radius + lane_width, radius, radius - lane_width]
                    .iter()
                    .filter(|r| **r > 0.0)
                    .map(|r| {
                        (0..=samples)
                            .map(|i| {
                                let theta = sweep * i as f64 / samples as f64;
                                [r * theta.sin(), radius - r * theta.cos(), 0.0]
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

fn interpolate(a: &Pose, b: &Pose, s: f64) -> Pose {
    let lerp_angle = |x: f64, y: f64| x + normalize_angle(y - x) * s;
    Pose::new(
        a.position + (b.position - a.position) * s,
        lerp_angle(a.roll, b.roll),
        lerp_angle(a.pitch, b.pitch),
        lerp_angle(a.yaw, b.yaw),
    )
}

fn pose_at_time(actor: &ActorSpec, t: f64) -> Pose {
    match &actor.motion {
        MotionScript::Constant => actor.initial_pose,
        MotionScript::Linear { speed } => {
            let p = actor.initial_pose;
            let d = speed * t;
            Pose {
                position: p.position + Vector3::new(p.yaw.cos() * d, p.yaw.sin() * d, 0.0),
                ..p
            }
        }
        MotionScript::Waypoints { points } => {
            let first = &points[0];
            if t <= first.time {
                return first.pose;
            }
            for w in points.windows(2) {
                if t <= w[1].time {
                    let s = (t - w[0].time) / (w[1].time - w[0].time);
                    return interpolate(&w[0].pose, &w[1].pose, s);
                }
            }
            points[points.len() - 1].pose
        }
    }
}

/// Pose of an actor at `t = frame · frame_dt`.
pub fn actor_pose(
    config: &ScenarioConfig,
    actor_id: &str,
    frame: usize,
) -> Result<Pose, ScenarioError> {
    let actor = config
        .actor(actor_id)
        .ok_or_else(|| ScenarioError::UnknownActor(actor_id.to_string()))?;
    config.check_frame(frame)?;
    Ok(pose_at_time(actor, config.timestamp(frame)))
}

/// Box of an actor standing at `pose` (pose marks the bottom center).
pub fn actor_box(dims: &Dims, pose: &Pose) -> Box3D {
    Box3D::new(
        pose.position + Vector3::new(0.0, 0.0, dims.height / 2.0),
        *dims,
        pose.yaw,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: String,
    pub kind: ActorKind,
    pub is_ego: bool,
    pub pose: Pose,
    pub bbox: Box3D,
}

/// Every actor's box at one instant, in the frame named by `frame_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub frame: usize,
    pub timestamp: f64,
    pub frame_id: String,
    pub objects: Vec<WorldObject>,
}

impl WorldSnapshot {
    pub fn get(&self, id: &str) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn without(&self, id: &str) -> WorldSnapshot {
        WorldSnapshot {
            objects: self
                .objects
                .iter()
                .filter(|o| o.id != id)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Re-expresses the snapshot in the frame of a sensor at `sensor_pose`.
    pub fn relative_to(&self, frame_id: &str, sensor_pose: &Pose) -> WorldSnapshot {
        let inv = sensor_pose.inverse();
        WorldSnapshot {
            frame: self.frame,
            timestamp: self.timestamp,
            frame_id: frame_id.to_string(),
            objects: self
                .objects
                .iter()
                .map(|o| WorldObject {
                    pose: inv.compose(&o.pose),
                    bbox: crate::geometry::transform_box(&inv, &o.bbox),
                    ..o.clone()
                })
                .collect(),
        }
    }
}

/// Frame id of snapshots produced by [`step_world`].
pub const GLOBAL_FRAME: &str = "global";

/// Positions every actor for one frame, in declaration order.
pub fn step_world(config: &ScenarioConfig, frame: usize) -> Result<WorldSnapshot, ScenarioError> {
    config.check_frame(frame)?;
    let t = config.timestamp(frame);
    let objects = config
        .actors
        .iter()
        .map(|a| {
            let pose = pose_at_time(a, t);
            WorldObject {
                id: a.id.clone(),
                kind: a.kind,
                is_ego: a.is_ego,
                pose,
                bbox: actor_box(&a.dims, &pose),
            }
        })
        .collect();
    Ok(WorldSnapshot {
        frame,
        timestamp: t,
        frame_id: GLOBAL_FRAME.to_string(),
        objects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const MINIMAL: &str = r#"
name = "minimal"
road_kind = "straight"
frame_count = 10
frame_dt = 0.1
geo_origin = { lat0 = 49.0, lon0 = 8.4, alt0 = 110.0 }

[[actors]]
id = "ego"
kind = "car"
dims = { length = 4.5, width = 1.8, height = 1.5 }
initial_pose = { position = [0.0, 0.0, 0.0] }
motion = { type = "linear", speed = 10.0 }
is_ego = true
"#;

    fn with_actor(extra: &str) -> String {
        format!("{MINIMAL}\n{extra}")
    }

    #[test]
    fn minimal_config_loads() {
        let c = load_scenario(MINIMAL).unwrap();
        assert_eq!(c.frame_count, 10);
        assert_eq!(c.weather, Weather::Sunny);
        assert_eq!(c.ego().id, "ego");
        assert!(c.sensors.is_empty());
    }

    #[test]
    fn duplicate_actor_id_rejected() {
        let text = with_actor(
            r#"
[[actors]]
id = "ego"
kind = "car"
dims = { length = 4.5, width = 1.8, height = 1.5 }
initial_pose = { position = [10.0, 0.0, 0.0] }
"#,
        );
        let err = load_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate actor id"), "{err}");
    }

    #[test]
    fn two_egos_rejected() {
        let text = with_actor(
            r#"
[[actors]]
id = "other"
kind = "car"
dims = { length = 4.5, width = 1.8, height = 1.5 }
initial_pose = { position = [10.0, 0.0, 0.0] }
is_ego = true
"#,
        );
        let err = load_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("two ego actors"), "{err}");
    }

    #[test]
    fn schema_errors_name_field_and_line() {
        let text = MINIMAL.replace("frame_dt = 0.1\n", "");
        match load_scenario(&text).unwrap_err() {
            ScenarioError::Parse { message, .. } => {
                assert!(message.contains("frame_dt"), "{message}")
            }
            e => panic!("unexpected {e:?}"),
        }
        let text = MINIMAL.replace("frame_dt = 0.1", "frame_dt = \"fast\"");
        match load_scenario(&text).unwrap_err() {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 5),
            e => panic!("unexpected {e:?}"),
        }
        let text = MINIMAL.replace("kind = \"car\"", "kind = \"truck\"");
        match load_scenario(&text).unwrap_err() {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 10),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn invariant_violations() {
        let text = MINIMAL.replace("frame_dt = 0.1", "frame_dt = 0.0");
        assert!(load_scenario(&text)
            .unwrap_err()
            .to_string()
            .contains("frame_dt"));
        let text = MINIMAL.replace("is_ego = true", "is_ego = false");
        assert!(load_scenario(&text)
            .unwrap_err()
            .to_string()
            .contains("no ego"));
        let text = with_actor(
            r#"
[[actors]]
id = "house"
kind = "building"
dims = { length = 10.0, width = 10.0, height = 8.0 }
initial_pose = { position = [20.0, 20.0, 0.0] }
motion = { type = "linear", speed = 1.0 }
"#,
        );
        assert!(load_scenario(&text)
            .unwrap_err()
            .to_string()
            .contains("constant motion"));
        let text = with_actor(
            r#"
[[sensors]]
id = "lidar"
parent = "nobody"
"#,
        );
        assert!(load_scenario(&text)
            .unwrap_err()
            .to_string()
            .contains("unknown parent"));
        let text = with_actor(
            r#"
[[actors]]
id = "other"
kind = "car"
dims = { length = 4.5, width = 1.8, height = 1.5 }
initial_pose = { position = [10.0, 0.0, 0.0] }
motion = { type = "linear", speed = 3.0 }

[[sensors]]
id = "lidar"
parent = "other"
"#,
        );
        assert!(load_scenario(&text)
            .unwrap_err()
            .to_string()
            .contains("static actor"));
        let text = with_actor(
            r#"
[[sensors]]
id = "a"
parent = "world"

[[sensors]]
id = "a"
parent = "ego"
"#,
        );
        assert!(load_scenario(&text)
            .unwrap_err()
            .to_string()
            .contains("duplicate sensor id"));
    }

    #[test]
    fn constant_and_linear_motion() {
        let c = load_scenario(MINIMAL).unwrap();
        let p = actor_pose(&c, "ego", 5).unwrap();
        assert_abs_diff_eq!(p.position.x, 5.0, epsilon = 1e-12);
        assert!(matches!(
            actor_pose(&c, "ghost", 0),
            Err(ScenarioError::UnknownActor(_))
        ));
        assert!(matches!(
            actor_pose(&c, "ego", 10),
            Err(ScenarioError::FrameOutOfRange { .. })
        ));

        let text = with_actor(
            r#"
[[actors]]
id = "parked"
kind = "car"
dims = { length = 4.5, width = 1.8, height = 1.5 }
initial_pose = { position = [7.0, 3.0, 0.0], yaw = 0.5 }
"#,
        );
        let c = load_scenario(&text).unwrap();
        for f in 0..10 {
            assert_eq!(
                actor_pose(&c, "parked", f).unwrap(),
                c.actor("parked").unwrap().initial_pose
            );
        }
    }

    #[test]
    fn waypoint_interpolation() {
        let text = r#"
road_kind = "curve"
frame_count = 4
frame_dt = 0.25
geo_origin = { lat0 = 0.0, lon0 = 0.0 }

[[actors]]
id = "ego"
kind = "car"
dims = { length = 4.5, width = 1.8, height = 1.5 }
initial_pose = { position = [0.0, 0.0, 0.0] }
is_ego = true
motion = { type = "waypoints", points = [
    { time = 0.0, pose = { position = [0.0, 0.0, 0.0], yaw = 3.0 } },
    { time = 1.0, pose = { position = [10.0, 0.0, 0.0], yaw = -3.0 } },
] }
"#;
        let c = load_scenario(text).unwrap();
        let p = actor_pose(&c, "ego", 1).unwrap();
        assert_abs_diff_eq!(p.position, Vector3::new(2.5, 0.0, 0.0), epsilon = 1e-12);
        // Shortest arc from 3.0 to −3.0 passes through π.
        let expected = normalize_angle(3.0 + (2.0 * PI - 6.0) * 0.25);
        assert_abs_diff_eq!(p.yaw, expected, epsilon = 1e-12);

        let short = text.replace("time = 1.0", "time = 0.5");
        assert!(load_scenario(&short)
            .unwrap_err()
            .to_string()
            .contains("cover"));
    }

    #[test]
    fn step_world_is_pure() {
        let c = load_bundled("occluded_intersection").unwrap();
        let w0 = step_world(&c, 0).unwrap();
        for (obj, actor) in w0.objects.iter().zip(&c.actors) {
            assert_eq!(obj.pose, actor.initial_pose);
            assert_abs_diff_eq!(
                obj.bbox.bottom(),
                actor.initial_pose.position.z,
                epsilon = 1e-12
            );
        }
        let later = step_world(&c, 7).unwrap();
        assert_eq!(step_world(&c, 7).unwrap(), later);
        assert_eq!(step_world(&c, 0).unwrap(), w0);
    }

    #[test]
    fn collision_course_distance_shrinks() {
        let text = with_actor(
            r#"
[[actors]]
id = "oncoming"
kind = "car"
dims = { length = 4.5, width = 1.8, height = 1.5 }
initial_pose = { position = [60.0, 0.0, 0.0], yaw = 3.141592653589793 }
motion = { type = "linear", speed = 8.0 }
"#,
        );
        let c = load_scenario(&text).unwrap();
        let dist = |f| {
            let w = step_world(&c, f).unwrap();
            (w.get("ego").unwrap().bbox.center - w.get("oncoming").unwrap().bbox.center).norm()
        };
        // Closing speed 18 m/s from 60 m: d(t) = 60 − 18 t.
        for f in 0..10 {
            assert_abs_diff_eq!(dist(f), 60.0 - 18.0 * 0.1 * f as f64, epsilon = 1e-9);
            if f > 0 {
                assert!(dist(f) < dist(f - 1));
            }
        }
    }

    #[test]
    fn bundled_scenarios_cover_every_road_kind() {
        let mut kinds = HashSet::new();
        for name in bundled_names() {
            let c = load_bundled(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            kinds.insert(format!("{:?}", c.road_kind));
            assert!(!c.lane_polylines().is_empty());
        }
        assert_eq!(kinds.len(), 3);
    }

    #[test]
    fn occluded_intersection_layout() {
        let c = load_bundled("occluded_intersection").unwrap();
        assert_eq!(c.actors.len(), 4);
        assert_eq!(c.sensors.len(), 2);
        let kinds: Vec<_> = c.sensors.iter().map(|s| c.sensor_kind(s)).collect();
        assert!(kinds.contains(&SensorKind::Vehicle) && kinds.contains(&SensorKind::Roadside));
    }

    #[test]
    fn sensor_pose_composes_parent_and_mount() {
        let c = load_bundled("occluded_intersection").unwrap();
        let s = c
            .sensors
            .iter()
            .find(|s| c.sensor_kind(s) == SensorKind::Vehicle)
            .unwrap();
        let parent = actor_pose(&c, &s.parent, 3).unwrap();
        let pose = c.sensor_pose(&s.id, 3).unwrap();
        assert_abs_diff_eq!(
            pose.position,
            parent.transform_point(&s.mount.position),
            epsilon = 1e-12
        );
    }
}
