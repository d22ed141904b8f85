//! Coordinate frames, rigid transforms, oriented boxes and the overlap /
//! assignment math shared by every stage of the pipeline.
//!
//! Conventions: the global frame is right-handed and z-up with x pointing
//! east and y pointing north. Sensor frames follow the velodyne layout
//! (x forward, y left, z up). Yaw is measured counterclockwise from +x.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Equatorial radius used by the flat-earth projection, meters.
pub const EARTH_RADIUS: f64 = 6_378_137.0;

/// Intersections below this area (m²) are treated as empty.
const DEGENERATE_AREA: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("latitude {0} is outside (-90, 90)")]
    LatitudeOutOfRange(f64),
    #[error("box dimensions must be strictly positive, got {length} x {width} x {height}")]
    NonPositiveDims {
        length: f64,
        width: f64,
        height: f64,
    },
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Rigid transform: rotation (roll about x, pitch about y, yaw about z,
/// applied in that order) followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    #[serde(default)]
    pub roll: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default)]
    pub yaw: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(position: Vector3<f64>, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            position,
            roll: normalize_angle(roll),
            pitch: normalize_angle(pitch),
            yaw: normalize_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
        }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), 0.0, 0.0, 0.0)
    }

    /// Planar pose: translation plus a rotation about +z.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(Vector3::new(x, y, z), 0.0, 0.0, yaw)
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw)
    }

    fn from_parts(rotation: Rotation3<f64>, position: Vector3<f64>) -> Self {
        let (roll, pitch, yaw) = rotation.euler_angles();
        Self::new(position, roll, pitch, yaw)
    }

    /// Maps a point expressed in this pose's child frame into its parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.position
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * v
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation().inverse();
        Self::from_parts(r_inv, -(r_inv * self.position))
    }

    /// `self ∘ other`: maps a point through `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        let r = self.rotation();
        Self::from_parts(r * other.rotation(), r * other.position + self.position)
    }
}

/// Free-function form of [`Pose::compose`].
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Dims {
    pub fn new(length: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let dims = Self {
            length,
            width,
            height,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        // Written so that NaN fails as well.
        if self.length > 0.0 && self.width > 0.0 && self.height > 0.0 {
            Ok(())
        } else {
            Err(GeometryError::NonPositiveDims {
                length: self.length,
                width: self.width,
                height: self.height,
            })
        }
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }
}

/// Gravity-aligned oriented box. `center` is the geometric center; length
/// runs along the heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Vector3<f64>,
    pub dims: Dims,
    pub yaw: f64,
}

impl Box3D {
    pub fn new(center: Vector3<f64>, dims: Dims, yaw: f64) -> Self {
        Self {
            center,
            dims,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn volume(&self) -> f64 {
        self.dims.volume()
    }

    pub fn bottom(&self) -> f64 {
        self.center.z - self.dims.height / 2.0
    }

    pub fn top(&self) -> f64 {
        self.center.z + self.dims.height / 2.0
    }

    /// Footprint corners in counterclockwise order.
    pub fn footprint(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.dims.length / 2.0;
        let hw = self.dims.width / 2.0;
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(dx, dy)| {
            Vector2::new(
                self.center.x + c * dx - s * dy,
                self.center.y + s * dx + c * dy,
            )
        })
    }

    /// The eight corners: footprint at the bottom face, then at the top face.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let fp = self.footprint();
        let (b, t) = (self.bottom(), self.top());
        std::array::from_fn(|i| {
            let p = fp[i % 4];
            Vector3::new(p.x, p.y, if i < 4 { b } else { t })
        })
    }

    /// Expresses a point in the box's own axes, relative to its center.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    /// Strict interior test.
    pub fn contains_strict(&self, p: &Vector3<f64>) -> bool {
        let l = self.to_local(p);
        l.x.abs() < self.dims.length / 2.0
            && l.y.abs() < self.dims.width / 2.0
            && l.z.abs() < self.dims.height / 2.0
    }
}

/// Maps a box through a pose. Only the yaw of the pose is added to the box
/// heading; boxes stay gravity-aligned.
pub fn transform_box(pose: &Pose, b: &Box3D) -> Box3D {
    Box3D::new(pose.transform_point(&b.center), b.dims, b.yaw + pose.yaw)
}

fn cross(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

pub(crate) fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let twice: f64 = (0..poly.len())
        .map(|i| cross(poly[i], poly[(i + 1) % poly.len()]))
        .sum();
    twice.abs() / 2.0
}

/// Sutherland–Hodgman: clips `subject` against the convex counterclockwise
/// polygon `clip`.
pub(crate) fn clip_convex(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let edge = b - a;
        let inside = |p: Vector2<f64>| cross(edge, p - a) >= 0.0;
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (cur_in, prev_in) = (inside(cur), inside(prev));
            if cur_in != prev_in {
                let d = cur - prev;
                let denom = cross(edge, d);
                if denom != 0.0 {
                    let t = cross(a - prev, edge) / -denom;
                    output.push(prev + d * t);
                }
            }
            if cur_in {
                output.push(cur);
            }
        }
    }
    output
}

/// Orders a pair canonically so the overlap routines are exactly symmetric.
fn canonical<'a>(a: &'a Box3D, b: &'a Box3D) -> (&'a Box3D, &'a Box3D) {
    let key = |x: &Box3D| {
        [
            x.center.x,
            x.center.y,
            x.center.z,
            x.yaw,
            x.dims.length,
            x.dims.width,
            x.dims.height,
        ]
    };
    let (ka, kb) = (key(a), key(b));
    for (u, v) in ka.iter().zip(kb.iter()) {
        match u.total_cmp(v) {
            std::cmp::Ordering::Less => return (a, b),
            std::cmp::Ordering::Greater => return (b, a),
            std::cmp::Ordering::Equal => {}
        }
    }
    (a, b)
}

/// Footprint intersection area of two boxes, m².
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let (a, b) = canonical(a, b);
    let area = polygon_area(&clip_convex(&a.footprint(), &b.footprint()));
    if area < DEGENERATE_AREA {
        0.0
    } else {
        area
    }
}

/// Bird's-eye-view IoU of the rotated footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.dims.length * a.dims.width + b.dims.length * b.dims.width - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU of two gravity-aligned oriented boxes.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let z_overlap = (a.top().min(b.top()) - a.bottom().max(b.bottom())).max(0.0);
    if z_overlap == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * z_overlap;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Minimum-cost assignment (Kuhn–Munkres with potentials).
///
/// Returns `min(rows, cols)` disjoint `(row, col)` pairs sorted by row. Costs
/// must be finite. Among equal-cost candidates the search prefers the lowest
/// column index, so the result is deterministic.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|c| c.is_finite()), "non-finite cost");
    if rows > cols {
        let mut pairs: Vec<_> = hungarian(&cost.transpose())
            .into_iter()
            .map(|(c, r)| (r, c))
            .collect();
        pairs.sort_unstable();
        return pairs;
    }

    // 1-based potentials; column 0 is the virtual source.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Geodetic anchor of the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoOrigin {
    pub lat0: f64,
    pub lon0: f64,
    #[serde(default)]
    pub alt0: f64,
}

impl GeoOrigin {
    pub fn new(lat0: f64, lon0: f64, alt0: f64) -> Result<Self, GeometryError> {
        check_latitude(lat0)?;
        Ok(Self { lat0, lon0, alt0 })
    }
}

fn check_latitude(lat: f64) -> Result<(), GeometryError> {
    if lat.abs() < 90.0 {
        Ok(())
    } else {
        Err(GeometryError::LatitudeOutOfRange(lat))
    }
}

/// Flat-earth projection of a geodetic position into the local ENU frame.
pub fn latlon_to_local(
    origin: &GeoOrigin,
    lat: f64,
    lon: f64,
    alt: f64,
) -> Result<Vector3<f64>, GeometryError> {
    check_latitude(lat)?;
    check_latitude(origin.lat0)?;
    let x = EARTH_RADIUS * origin.lat0.to_radians().cos() * (lon - origin.lon0).to_radians();
    let y = EARTH_RADIUS * (lat - origin.lat0).to_radians();
    Ok(Vector3::new(x, y, alt - origin.alt0))
}

/// Inverse of [`latlon_to_local`]; returns `(lat, lon, alt)`.
pub fn local_to_latlon(
    origin: &GeoOrigin,
    p: &Vector3<f64>,
) -> Result<(f64, f64, f64), GeometryError> {
    check_latitude(origin.lat0)?;
    let lat = origin.lat0 + (p.y / EARTH_RADIUS).to_degrees();
    let lon = origin.lon0 + (p.x / (EARTH_RADIUS * origin.lat0.to_radians().cos())).to_degrees();
    check_latitude(lat)?;
    Ok((lat, lon, p.z + origin.alt0))
}
