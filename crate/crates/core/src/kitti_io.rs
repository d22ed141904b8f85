//! Readers and writers for the KITTI raw / tracking artifacts.
//!
//! Layout of a sequence directory:
//!
//! ```text
//! velodyne_points/data/0000000000.bin   little-endian f32 (x, y, z, i) quadruples
//! oxts/data/0000000000.txt              one line, 30 values
//! tracklet_labels.xml                   boost-serialized tracklets
//! label/0000.txt                        tracking-benchmark labels, all frames
//! calib.txt                             projection + velodyne→camera transform
//! ```
//!
//! Labels use the KITTI camera convention (x right, y down, z forward,
//! location at the bottom center of the box). Simulated sequences use a
//! camera frame that is the velodyne frame rotated with zero translation;
//! [`box_to_label`] and [`label_to_box`] are the only places where the two
//! conventions meet.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    latlon_to_local, local_to_latlon, normalize_angle, Box3D, Dims, GeoOrigin, GeometryError, Pose,
};
use crate::lidar_sim::PointCloud;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(
        "velodyne payload of {0} bytes is not a whole number of 16-byte points (truncated file?)"
    )]
    Truncated(usize),
    #[error("expected 30 fields, found {0}")]
    OxtsFieldCount(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed tracklet XML: {0}")]
    Xml(String),
    #[error("missing element <{element}> in {context}")]
    MissingElement { element: String, context: String },
    #[error("invalid label geometry: {0}")]
    Geometry(#[from] GeometryError),
}

/// Name of frame-indexed files: ten-digit zero padded.
pub fn frame_file_name(frame: usize, extension: &str) -> String {
    format!("{frame:010}.{extension}")
}

pub fn velodyne_path(sequence_dir: &Path, frame: usize) -> PathBuf {
    sequence_dir
        .join("velodyne_points/data")
        .join(frame_file_name(frame, "bin"))
}

pub fn oxts_path(sequence_dir: &Path, frame: usize) -> PathBuf {
    sequence_dir
        .join("oxts/data")
        .join(frame_file_name(frame, "txt"))
}

pub fn label_path(sequence_dir: &Path, sequence: usize) -> PathBuf {
    sequence_dir
        .join("label")
        .join(format!("{sequence:04}.txt"))
}

// ---------------------------------------------------------------------------
// velodyne

pub fn write_velodyne(cloud: &PointCloud, sink: &mut impl Write) -> io::Result<()> {
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)
}

pub fn read_velodyne(source: &mut impl Read, frame: &str) -> Result<PointCloud, KittiError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(KittiError::Truncated(bytes.len()));
    }
    let points = bytes
        .chunks_exact(16)
        .map(|c| {
            std::array::from_fn(|k| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap()))
        })
        .collect();
    Ok(PointCloud {
        frame: frame.to_string(),
        points,
    })
}

// ---------------------------------------------------------------------------
// oxts

/// Names of the 30 oxts columns, in file order.
pub const OXTS_FIELDS: [&str; 30] = [
    "lat",
    "lon",
    "alt",
    "roll",
    "pitch",
    "yaw",
    "vn",
    "ve",
    "vf",
    "vl",
    "vu",
    "ax",
    "ay",
    "az",
    "af",
    "al",
    "au",
    "wx",
    "wy",
    "wz",
    "wf",
    "wl",
    "wu",
    "pos_accuracy",
    "vel_accuracy",
    "navstat",
    "numsats",
    "posmode",
    "velmode",
    "orimode",
];

/// One GPS/IMU sample. `extra` holds columns 7–30 in file order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OxtsRecord {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub extra: [f64; 24],
}

const NAVSTAT: usize = 19;
const NUMSATS: usize = 20;

impl OxtsRecord {
    /// A record as written by the simulator: motion columns zero, navstat 4,
    /// numsats 10, modes 0.
    pub fn simulated(lat: f64, lon: f64, alt: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        let mut extra = [0.0; 24];
        extra[NAVSTAT] = 4.0;
        extra[NUMSATS] = 10.0;
        Self {
            lat,
            lon,
            alt,
            roll,
            pitch,
            yaw,
            extra,
        }
    }

    /// Encodes a global-frame pose.
    pub fn from_pose(origin: &GeoOrigin, pose: &Pose) -> Result<Self, GeometryError> {
        let (lat, lon, alt) = local_to_latlon(origin, &pose.position)?;
        Ok(Self::simulated(
            lat, lon, alt, pose.roll, pose.pitch, pose.yaw,
        ))
    }

    /// Recovers the global-frame pose (flat-earth position plus the IMU
    /// attitude; yaw is heading from east, counterclockwise).
    pub fn to_pose(&self, origin: &GeoOrigin) -> Result<Pose, GeometryError> {
        let position = latlon_to_local(origin, self.lat, self.lon, self.alt)?;
        Ok(Pose::new(position, self.roll, self.pitch, self.yaw))
    }

    pub fn values(&self) -> [f64; 30] {
        let mut v = [0.0; 30];
        v[..6].copy_from_slice(&[
            self.lat, self.lon, self.alt, self.roll, self.pitch, self.yaw,
        ]);
        v[6..].copy_from_slice(&self.extra);
        v
    }

    pub fn from_values(v: &[f64; 30]) -> Self {
        Self {
            lat: v[0],
            lon: v[1],
            alt: v[2],
            roll: v[3],
            pitch: v[4],
            yaw: v[5],
            extra: v[6..].try_into().unwrap(),
        }
    }

    pub fn to_line(&self) -> String {
        self.values()
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_line(line: &str) -> Result<Self, KittiError> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 30 {
            return Err(KittiError::OxtsFieldCount(fields.len()));
        }
        let mut v = [0.0; 30];
        for (i, f) in fields.iter().enumerate() {
            v[i] = f.parse().map_err(|_| KittiError::Parse {
                line: 1,
                message: format!("field `{}` is not numeric: {f:?}", OXTS_FIELDS[i]),
            })?;
        }
        Ok(Self::from_values(&v))
    }
}

pub fn write_oxts(record: &OxtsRecord, sink: &mut impl Write) -> io::Result<()> {
    writeln!(sink, "{}", record.to_line())
}

pub fn read_oxts(source: &mut impl Read) -> Result<OxtsRecord, KittiError> {
    let text = read_text(source)?;
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    OxtsRecord::parse_line(line)
}

fn read_text(source: &mut impl Read) -> Result<String, KittiError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    String::from_utf8(bytes).map_err(|e| KittiError::Parse {
        line: 1,
        message: format!("not valid UTF-8: {e}"),
    })
}

// ---------------------------------------------------------------------------
// labels

/// One row of a tracking-benchmark label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub frame: i64,
    /// −1 for detection-only rows.
    pub track_id: i64,
    pub object_type: String,
    pub truncated: f64,
    pub occluded: i64,
    pub alpha: f64,
    /// left, top, right, bottom (pixels).
    pub bbox: [f64; 4],
    pub height: f64,
    pub width: f64,
    pub length: f64,
    /// Bottom center in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {} {} {:.6} {} {:.6}",
            self.frame, self.track_id, self.object_type, self.truncated, self.occluded, self.alpha
        );
        for v in self
            .bbox
            .iter()
            .chain(&[self.height, self.width, self.length])
            .chain(&self.location)
            .chain(std::iter::once(&self.rotation_y))
            .chain(self.score.as_ref())
        {
            write!(s, " {v:.6}").unwrap();
        }
        s
    }

    pub fn parse_line(text: &str, line: usize) -> Result<Self, KittiError> {
        let f: Vec<&str> = text.split_whitespace().collect();
        if f.len() != 17 && f.len() != 18 {
            return Err(KittiError::Parse {
                line,
                message: format!("expected 17 or 18 fields, found {}", f.len()),
            });
        }
        const NAMES: [&str; 18] = [
            "frame",
            "track_id",
            "type",
            "truncated",
            "occluded",
            "alpha",
            "bbox_left",
            "bbox_top",
            "bbox_right",
            "bbox_bottom",
            "height",
            "width",
            "length",
            "x",
            "y",
            "z",
            "rotation_y",
            "score",
        ];
        let num = |i: usize| -> Result<f64, KittiError> {
            f[i].parse::<f64>().map_err(|_| KittiError::Parse {
                line,
                message: format!("field `{}` is not numeric: {:?}", NAMES[i], f[i]),
            })
        };
        let int = |i: usize| -> Result<i64, KittiError> {
            match f[i].parse::<i64>() {
                Ok(v) => Ok(v),
                Err(_) => {
                    let v = num(i)?;
                    if v.fract() == 0.0 && v.abs() < 1e15 {
                        Ok(v as i64)
                    } else {
                        Err(KittiError::Parse {
                            line,
                            message: format!("field `{}` is not an integer: {:?}", NAMES[i], f[i]),
                        })
                    }
                }
            }
        };
        Ok(Self {
            frame: int(0)?,
            track_id: int(1)?,
            object_type: f[2].to_string(),
            truncated: num(3)?,
            occluded: int(4)?,
            alpha: num(5)?,
            bbox: [num(6)?, num(7)?, num(8)?, num(9)?],
            height: num(10)?,
            width: num(11)?,
            length: num(12)?,
            location: [num(13)?, num(14)?, num(15)?],
            rotation_y: num(16)?,
            score: if f.len() == 18 { Some(num(17)?) } else { None },
        })
    }
}

pub fn write_labels(records: &[LabelRecord], sink: &mut impl Write) -> io::Result<()> {
    for r in records {
        writeln!(sink, "{}", r.to_line())?;
    }
    Ok(())
}

pub fn read_labels(source: &mut impl Read) -> Result<Vec<LabelRecord>, KittiError> {
    let text = read_text(source)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| LabelRecord::parse_line(l, i + 1))
        .collect()
}

// ---------------------------------------------------------------------------
// velodyne <-> camera label conversion

/// Default pinhole intrinsics for simulated labels (KITTI left color camera).
pub const FOCAL_PX: f64 = 721.5377;
pub const PRINCIPAL_X: f64 = 609.5593;
pub const PRINCIPAL_Y: f64 = 172.8540;
pub const IMAGE_WIDTH: f64 = 1242.0;
pub const IMAGE_HEIGHT: f64 = 375.0;
/// Corners closer than this along the optical axis are not projected.
const MIN_DEPTH: f64 = 0.1;

/// Velodyne (x fwd, y left, z up) → camera (x right, y down, z fwd).
pub fn velo_to_cam(p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-p.y, -p.z, p.x)
}

pub fn cam_to_velo(p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(p.z, -p.x, -p.y)
}

/// Axis-aligned image hull of the projected corners, clamped to the image;
/// `[-1; 4]` when the box is entirely behind the camera.
pub fn project_bbox(b: &Box3D) -> [f64; 4] {
    let projected: Vec<(f64, f64)> = b
        .corners()
        .iter()
        .map(velo_to_cam)
        .filter(|c| c.z > MIN_DEPTH)
        .map(|c| {
            (
                FOCAL_PX * c.x / c.z + PRINCIPAL_X,
                FOCAL_PX * c.y / c.z + PRINCIPAL_Y,
            )
        })
        .collect();
    if projected.is_empty() {
        return [-1.0; 4];
    }
    let (mut l, mut t, mut r, mut btm) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for (u, v) in projected {
        l = l.min(u);
        r = r.max(u);
        t = t.min(v);
        btm = btm.max(v);
    }
    let cu = |u: f64| u.clamp(0.0, IMAGE_WIDTH - 1.0);
    let cv = |v: f64| v.clamp(0.0, IMAGE_HEIGHT - 1.0);
    [cu(l), cv(t), cu(r), cv(btm)]
}

/// Converts a velodyne-frame box into a label row.
pub fn box_to_label(
    b: &Box3D,
    frame: i64,
    track_id: i64,
    object_type: &str,
    score: Option<f64>,
) -> LabelRecord {
    let bottom = Vector3::new(b.center.x, b.center.y, b.bottom());
    let loc = velo_to_cam(&bottom);
    let rotation_y = normalize_angle(-b.yaw - FRAC_PI_2);
    LabelRecord {
        frame,
        track_id,
        object_type: object_type.to_string(),
        truncated: 0.0,
        occluded: 0,
        alpha: normalize_angle(rotation_y - loc.x.atan2(loc.z)),
        bbox: project_bbox(b),
        height: b.dims.height,
        width: b.dims.width,
        length: b.dims.length,
        location: [loc.x, loc.y, loc.z],
        rotation_y,
        score,
    }
}

/// Inverse of [`box_to_label`]; fails for non-positive dimensions (e.g.
/// `DontCare` rows).
pub fn label_to_box(label: &LabelRecord) -> Result<Box3D, KittiError> {
    let dims = Dims::new(label.length, label.width, label.height)?;
    let bottom = cam_to_velo(&Vector3::from(label.location));
    Ok(Box3D::new(
        bottom + Vector3::new(0.0, 0.0, dims.height / 2.0),
        dims,
        -label.rotation_y - FRAC_PI_2,
    ))
}

/// Writes an object-benchmark style `calib.txt` for the simulated camera.
pub fn write_calib(sink: &mut impl Write) -> io::Result<()> {
    let fmt = |vals: &[f64]| {
        vals.iter()
            .map(|v| format!("{v:.12e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let p = [
        FOCAL_PX,
        0.0,
        PRINCIPAL_X,
        0.0,
        0.0,
        FOCAL_PX,
        PRINCIPAL_Y,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
    ];
    for name in ["P0", "P1", "P2", "P3"] {
        writeln!(sink, "{name}: {}", fmt(&p))?;
    }
    writeln!(
        sink,
        "R0_rect: {}",
        fmt(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    )?;
    writeln!(
        sink,
        "Tr_velo_to_cam: {}",
        fmt(&[0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    )?;
    writeln!(
        sink,
        "Tr_imu_to_velo: {}",
        fmt(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    )
}

// ---------------------------------------------------------------------------
// tracklets

/// Per-frame tracklet pose; translation marks the bottom center of the box
/// in the velodyne frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackletPose {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub object_type: String,
    pub height: f64,
    pub width: f64,
    pub length: f64,
    pub first_frame: usize,
    pub poses: Vec<TrackletPose>,
}

impl Tracklet {
    pub fn last_frame(&self) -> usize {
        self.first_frame + self.poses.len() - 1
    }

    pub fn box_at(&self, pose_index: usize) -> Result<Box3D, KittiError> {
        let p = &self.poses[pose_index];
        let dims = Dims::new(self.length, self.width, self.height)?;
        Ok(Box3D::new(
            Vector3::new(p.tx, p.ty, p.tz + dims.height / 2.0),
            dims,
            p.rz,
        ))
    }

    pub fn pose_of(b: &Box3D) -> TrackletPose {
        TrackletPose {
            tx: b.center.x,
            ty: b.center.y,
            tz: b.bottom(),
            rz: b.yaw,
        }
    }
}

fn child<'a, 'i>(
    node: roxmltree::Node<'a, 'i>,
    name: &str,
    context: &str,
) -> Result<roxmltree::Node<'a, 'i>, KittiError> {
    node.children()
        .find(|c| c.has_tag_name(name))
        .ok_or_else(|| KittiError::MissingElement {
            element: name.to_string(),
            context: context.to_string(),
        })
}

fn child_text<'a>(
    node: roxmltree::Node<'a, '_>,
    name: &str,
    context: &str,
) -> Result<&'a str, KittiError> {
    Ok(child(node, name, context)?.text().unwrap_or("").trim())
}

fn child_num<T: std::str::FromStr>(
    node: roxmltree::Node<'_, '_>,
    name: &str,
    context: &str,
) -> Result<T, KittiError> {
    let text = child_text(node, name, context)?;
    text.parse()
        .map_err(|_| KittiError::Xml(format!("<{name}> in {context} is not numeric: {text:?}")))
}

pub fn read_tracklets(source: &mut impl Read) -> Result<Vec<Tracklet>, KittiError> {
    let text = read_text(source)?;
    parse_tracklets(&text)
}

pub fn parse_tracklets(text: &str) -> Result<Vec<Tracklet>, KittiError> {
    let options = roxmltree::ParsingOptions {
        allow_dtd: true,
        ..Default::default()
    };
    let doc = roxmltree::Document::parse_with_options(text, options)
        .map_err(|e| KittiError::Xml(e.to_string()))?;
    let root = doc.root_element();
    let tracklets = if root.has_tag_name("tracklets") {
        root
    } else {
        child(root, "tracklets", &format!("<{}>", root.tag_name().name()))?
    };
    let mut out = Vec::new();
    for (index, item) in tracklets
        .children()
        .filter(|c| c.has_tag_name("item"))
        .enumerate()
    {
        let ctx = format!("tracklet {index}");
        let poses_node = child(item, "poses", &ctx)?;
        let mut poses = Vec::new();
        for (k, p) in poses_node
            .children()
            .filter(|c| c.has_tag_name("item"))
            .enumerate()
        {
            let pctx = format!("tracklet {index} pose {k}");
            poses.push(TrackletPose {
                tx: child_num(p, "tx", &pctx)?,
                ty: child_num(p, "ty", &pctx)?,
                tz: child_num(p, "tz", &pctx)?,
                rz: child_num(p, "rz", &pctx)?,
            });
        }
        if poses.is_empty() {
            return Err(KittiError::MissingElement {
                element: "item".into(),
                context: format!("{ctx} <poses>"),
            });
        }
        out.push(Tracklet {
            object_type: child_text(item, "objectType", &ctx)?.to_string(),
            height: child_num(item, "h", &ctx)?,
            width: child_num(item, "w", &ctx)?,
            length: child_num(item, "l", &ctx)?,
            first_frame: child_num(item, "first_frame", &ctx)?,
            poses,
        });
    }
    Ok(out)
}

/// Writes tracklets in the boost-serialization schema of KITTI raw.
pub fn write_tracklets(tracklets: &[Tracklet], sink: &mut impl Write) -> io::Result<()> {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"yes\" ?>\n");
    s.push_str("<!DOCTYPE boost_serialization>\n");
    s.push_str("<boost_serialization signature=\"serialization::archive\" version=\"9\">\n");
    s.push_str("<tracklets class_id=\"0\" tracking_level=\"0\" version=\"0\">\n");
    writeln!(s, "\t<count>{}</count>", tracklets.len()).unwrap();
    s.push_str("\t<item_version>1</item_version>\n");
    for (i, t) in tracklets.iter().enumerate() {
        if i == 0 {
            s.push_str("\t<item class_id=\"1\" tracking_level=\"0\" version=\"1\">\n");
        } else {
            s.push_str("\t<item>\n");
        }
        writeln!(
            s,
            "\t\t<objectType>{}</objectType>",
            xml_escape(&t.object_type)
        )
        .unwrap();
        writeln!(
            s,
            "\t\t<h>{}</h>\n\t\t<w>{}</w>\n\t\t<l>{}</l>",
            t.height, t.width, t.length
        )
        .unwrap();
        writeln!(s, "\t\t<first_frame>{}</first_frame>", t.first_frame).unwrap();
        if i == 0 {
            s.push_str("\t\t<poses class_id=\"2\" tracking_level=\"0\" version=\"0\">\n");
        } else {
            s.push_str("\t\t<poses>\n");
        }
        writeln!(
            s,
            "\t\t\t<count>{}</count>\n\t\t\t<item_version>2</item_version>",
            t.poses.len()
        )
        .unwrap();
        for (k, p) in t.poses.iter().enumerate() {
            if i == 0 && k == 0 {
                s.push_str("\t\t\t<item class_id=\"3\" tracking_level=\"0\" version=\"2\">\n");
            } else {
                s.push_str("\t\t\t<item>\n");
            }
            writeln!(
                s,
                "\t\t\t\t<tx>{}</tx>\n\t\t\t\t<ty>{}</ty>\n\t\t\t\t<tz>{}</tz>\n\t\t\t\t<rx>0</rx>\n\t\t\t\t<ry>0</ry>\n\t\t\t\t<rz>{}</rz>",
                p.tx, p.ty, p.tz, p.rz
            )
            .unwrap();
            s.push_str(
                "\t\t\t\t<state>1</state>\n\t\t\t\t<occlusion>0</occlusion>\n\t\t\t\t<occlusion_kf>0</occlusion_kf>\n\t\t\t\t<truncation>0</truncation>\n\t\t\t\t<amt_occlusion>0</amt_occlusion>\n\t\t\t\t<amt_occlusion_kf>-1</amt_occlusion_kf>\n\t\t\t\t<amt_border_l>0</amt_border_l>\n\t\t\t\t<amt_border_r>0</amt_border_r>\n\t\t\t\t<amt_border_kf>-1</amt_border_kf>\n",
            );
            s.push_str("\t\t\t</item>\n");
        }
        s.push_str("\t\t</poses>\n\t\t<finished>1</finished>\n\t</item>\n");
    }
    s.push_str("</tracklets>\n</boost_serialization>\n");
    sink.write_all(s.as_bytes())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Expands tracklets into per-frame label rows; `track_id` is the tracklet's
/// index in `tracklets`.
pub fn tracklets_to_frame_labels(
    tracklets: &[Tracklet],
    frame_count: usize,
) -> Result<Vec<Vec<LabelRecord>>, KittiError> {
    let mut frames = vec![Vec::new(); frame_count];
    for (id, t) in tracklets.iter().enumerate() {
        for k in 0..t.poses.len() {
            let frame = t.first_frame + k;
            if frame >= frame_count {
                break;
            }
            let b = t.box_at(k)?;
            frames[frame].push(box_to_label(
                &b,
                frame as i64,
                id as i64,
                &t.object_type,
                None,
            ));
        }
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn velodyne_encoding_is_little_endian_f32() {
        let cloud = PointCloud {
            frame: "v".into(),
            points: vec![[1.0, 2.0, 3.0, 0.5]],
        };
        let mut buf = Vec::new();
        write_velodyne(&cloud, &mut buf).unwrap();
        let hex: String = buf.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, "0000803f00000040000040400000003f");
        assert_eq!(buf.len(), 16);
        assert_eq!(read_velodyne(&mut buf.as_slice(), "v").unwrap(), cloud);
    }

    #[test]
    fn empty_velodyne_round_trip() {
        let mut buf = Vec::new();
        write_velodyne(&PointCloud::new("v"), &mut buf).unwrap();
        assert!(buf.is_empty());
        assert!(read_velodyne(&mut buf.as_slice(), "v").unwrap().is_empty());
    }

    #[test]
    fn truncated_velodyne_is_rejected() {
        let err = read_velodyne(&mut [0u8; 17].as_slice(), "v").unwrap_err();
        assert!(matches!(err, KittiError::Truncated(17)));
    }

    #[test]
    fn oxts_field_count_error() {
        let line = vec!["0"; 29].join(" ");
        let err = OxtsRecord::parse_line(&line).unwrap_err();
        assert_eq!(err.to_string(), "expected 30 fields, found 29");
    }

    #[test]
    fn simulated_oxts_round_trip() {
        let origin = GeoOrigin::new(49.0, 8.4, 110.0).unwrap();
        let pose = Pose::new(Vector3::new(12.5, -7.25, 0.3), 0.01, -0.02, 2.9);
        let rec = OxtsRecord::from_pose(&origin, &pose).unwrap();
        assert_eq!(rec.extra[NAVSTAT], 4.0);
        assert_eq!(rec.extra[NUMSATS], 10.0);
        assert!(rec.extra[..19].iter().all(|v| *v == 0.0));
        let mut buf = Vec::new();
        write_oxts(&rec, &mut buf).unwrap();
        let back = read_oxts(&mut buf.as_slice()).unwrap();
        assert_eq!(back, rec);
        let p = back.to_pose(&origin).unwrap();
        assert_abs_diff_eq!(p.position, pose.position, epsilon = 1e-6);
        assert_abs_diff_eq!(p.yaw, pose.yaw, epsilon = 1e-12);
    }

    #[test]
    fn label_line_format() {
        let r = LabelRecord {
            frame: 3,
            track_id: 7,
            object_type: "Car".into(),
            truncated: 0.0,
            occluded: 1,
            alpha: -1.5,
            bbox: [10.0, 20.0, 30.5, 40.25],
            height: 1.5,
            width: 1.6,
            length: 3.9,
            location: [1.0, 1.7, 20.0],
            rotation_y: -1.57,
            score: None,
        };
        assert_eq!(
            r.to_line(),
            "3 7 Car 0.000000 1 -1.500000 10.000000 20.000000 30.500000 40.250000 1.500000 1.600000 3.900000 1.000000 1.700000 20.000000 -1.570000"
        );
        let mut with_score = r.clone();
        with_score.score = Some(0.875);
        assert!(with_score.to_line().ends_with(" 0.875000"));
        assert_eq!(
            LabelRecord::parse_line(&with_score.to_line(), 1).unwrap(),
            with_score
        );
    }

    #[test]
    fn label_parse_errors_carry_line_numbers() {
        let text = "0 1 Car 0 0 0 0 0 0 0 1 1 1 0 0 0 0\n0 2 Car 0 0 abc 0 0 0 0 1 1 1 0 0 0 0\n";
        let err = read_labels(&mut text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
        assert!(err.to_string().contains("alpha"));
        assert!(read_labels(&mut "0 1 Car\n".as_bytes()).is_err());
        assert!(read_labels(&mut "".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn box_label_round_trip() {
        let b = Box3D::new(
            Vector3::new(15.0, 2.0, 0.9),
            Dims::new(4.4, 1.8, 1.6).unwrap(),
            0.4,
        );
        let label = box_to_label(&b, 0, 1, "Car", Some(0.5));
        // Bottom center 15 m ahead, 2 m left → camera x −2, y −0.1, z 15.
        assert_abs_diff_eq!(label.location[0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(label.location[1], -0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(label.location[2], 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(label.rotation_y, -0.4 - FRAC_PI_2, epsilon = 1e-12);
        let back = label_to_box(&label).unwrap();
        assert_abs_diff_eq!(back.center, b.center, epsilon = 1e-9);
        assert_abs_diff_eq!(back.yaw, b.yaw, epsilon = 1e-12);
        // In front of the camera the 2D box is a proper rectangle inside the image.
        let [l, t, r, btm] = label.bbox;
        assert!(
            0.0 <= l
                && l < r
                && r <= IMAGE_WIDTH - 1.0
                && 0.0 <= t
                && t < btm
                && btm <= IMAGE_HEIGHT - 1.0
        );
    }

    #[test]
    fn box_behind_camera_has_no_2d_box() {
        let b = Box3D::new(
            Vector3::new(-15.0, 0.0, 0.9),
            Dims::new(4.4, 1.8, 1.6).unwrap(),
            0.0,
        );
        assert_eq!(project_bbox(&b), [-1.0; 4]);
    }

    const MINIMAL_TRACKLETS: &str = r#"<?xml version="1.0" encoding="UTF-8" standalone="yes" ?>
<!DOCTYPE boost_serialization>
<boost_serialization signature="serialization::archive" version="9">
<tracklets class_id="0" tracking_level="0" version="0">
	<count>1</count>
	<item_version>1</item_version>
	<item class_id="1" tracking_level="0" version="1">
		<objectType>Car</objectType>
		<h>1.5</h>
		<w>1.6</w>
		<l>4.0</l>
		<first_frame>2</first_frame>
		<poses class_id="2" tracking_level="0" version="0">
			<count>3</count>
			<item_version>2</item_version>
			<item class_id="3" tracking_level="0" version="2">
				<tx>10.0</tx><ty>1.0</ty><tz>-1.7</tz><rx>0</rx><ry>0</ry><rz>0.1</rz>
			</item>
			<item><tx>11.0</tx><ty>1.0</ty><tz>-1.7</tz><rx>0</rx><ry>0</ry><rz>0.1</rz></item>
			<item><tx>12.0</tx><ty>1.0</ty><tz>-1.7</tz><rx>0</rx><ry>0</ry><rz>0.1</rz></item>
		</poses>
		<finished>1</finished>
	</item>
</tracklets>
</boost_serialization>
"#;

    #[test]
    fn parses_minimal_tracklet_document() {
        let ts = parse_tracklets(MINIMAL_TRACKLETS).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].poses.len(), 3);
        assert_eq!(ts[0].first_frame, 2);
        assert_eq!(ts[0].last_frame(), 4);
        let empty = MINIMAL_TRACKLETS
            .split("<item class_id=\"1\"")
            .next()
            .unwrap()
            .replace("<count>1</count>", "<count>0</count>")
            .to_string()
            + "</tracklets>\n</boost_serialization>\n";
        assert!(parse_tracklets(&empty).unwrap().is_empty());
    }

    #[test]
    fn tracklet_errors_name_the_element() {
        let broken = MINIMAL_TRACKLETS.replace("<h>1.5</h>", "");
        let err = parse_tracklets(&broken).unwrap_err();
        assert!(err.to_string().contains("<h>"), "{err}");
        assert!(matches!(
            parse_tracklets("<tracklets><item>"),
            Err(KittiError::Xml(_))
        ));
    }

    #[test]
    fn tracklet_write_read_round_trip() {
        let ts = parse_tracklets(MINIMAL_TRACKLETS).unwrap();
        let mut buf = Vec::new();
        write_tracklets(&ts, &mut buf).unwrap();
        assert_eq!(read_tracklets(&mut buf.as_slice()).unwrap(), ts);
    }

    #[test]
    fn tracklets_expand_to_frames() {
        let mut ts = parse_tracklets(MINIMAL_TRACKLETS).unwrap();
        let mut second = ts[0].clone();
        second.first_frame = 3;
        second.poses[0].ty = -5.0;
        ts.push(second);
        let frames = tracklets_to_frame_labels(&ts, 6).unwrap();
        let present: Vec<usize> = (0..6)
            .filter(|&f| frames[f].iter().any(|l| l.track_id == 0))
            .collect();
        assert_eq!(present, vec![2, 3, 4]);
        let ids: Vec<i64> = frames[3].iter().map(|l| l.track_id).collect();
        assert_eq!(ids, vec![0, 1]);
        for (k, label) in frames[2..5].iter().map(|f| &f[0]).enumerate() {
            let b = label_to_box(label).unwrap();
            let back = Tracklet::pose_of(&b);
            let want = ts[0].poses[k];
            assert_abs_diff_eq!(back.tx, want.tx, epsilon = 1e-6);
            assert_abs_diff_eq!(back.ty, want.ty, epsilon = 1e-6);
            assert_abs_diff_eq!(back.tz, want.tz, epsilon = 1e-6);
            assert_abs_diff_eq!(back.rz, want.rz, epsilon = 1e-6);
        }
        // Frames past the horizon are dropped.
        assert!(tracklets_to_frame_labels(&ts, 3).unwrap()[2].len() == 1);
    }

    proptest! {
        #[test]
        fn readers_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = read_velodyne(&mut bytes.as_slice(), "x");
            let _ = read_oxts(&mut bytes.as_slice());
            let _ = read_labels(&mut bytes.as_slice());
            let _ = read_tracklets(&mut bytes.as_slice());
        }

        #[test]
        fn velodyne_round_trip_is_bit_exact(points in proptest::collection::vec(any::<[u32; 4]>(), 0..64)) {
            let cloud = PointCloud {
                frame: "x".into(),
                points: points.iter().map(|p| p.map(f32::from_bits)).collect(),
            };
            let mut buf = Vec::new();
            write_velodyne(&cloud, &mut buf).unwrap();
            let back = read_velodyne(&mut buf.as_slice(), "x").unwrap();
            let bits = |c: &PointCloud| c.points.iter().map(|p| p.map(f32::to_bits)).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&cloud));
        }
    }
}
