//! Detection scoring, first-detection earliness and timing summaries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_3d, Box3D};
use crate::perception::{Detection, ObjectClass};
use crate::tracking::TrackOutput;

/// IoU at which a detection counts as a true positive.
pub const DEFAULT_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("unknown target id `{0}`")]
    UnknownTarget(String),
}

/// A ground-truth object in the evaluation frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub id: String,
    pub class: ObjectClass,
    pub bbox: Box3D,
}

/// Per-target outcome for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVisibility {
    pub id: String,
    /// Matched one-to-one by the greedy assignment.
    pub detected: bool,
    /// Sources with any same-class detection at the match IoU, matched or
    /// not; see also [`set_stream_visibility`].
    pub sources: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub targets: Vec<TargetVisibility>,
}

impl FrameMetrics {
    pub fn precision(&self) -> f64 {
        let denom = self.true_positives + self.false_positives;
        if denom == 0 {
            1.0
        } else {
            self.true_positives as f64 / denom as f64
        }
    }

    /// 1 for a frame without ground truth.
    pub fn recall(&self) -> f64 {
        let denom = self.true_positives + self.false_negatives;
        if denom == 0 {
            1.0
        } else {
            self.true_positives as f64 / denom as f64
        }
    }

    pub fn target(&self, id: &str) -> Option<&TargetVisibility> {
        self.targets.iter().find(|t| t.id == id)
    }
}

/// Greedy one-to-one matching by descending IoU, same class only.
pub fn match_to_truth(
    frame: usize,
    detections: &[Detection],
    truth: &[TruthBox],
    iou_threshold: f64,
) -> FrameMetrics {
    let mut pairs = Vec::new();
    let mut sources: Vec<BTreeSet<String>> = vec![BTreeSet::new(); truth.len()];
    for (i, d) in detections.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            if d.class != t.class {
                continue;
            }
            let iou = iou_3d(&d.bbox, &t.bbox);
            if iou >= iou_threshold && iou > 0.0 {
                pairs.push((iou, i, j));
                sources[j].insert(d.source.clone());
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; detections.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !det_used[i] && !truth_used[j] {
            det_used[i] = true;
            truth_used[j] = true;
            tp += 1;
        }
    }
    FrameMetrics {
        frame,
        true_positives: tp,
        false_positives: detections.len() - tp,
        false_negatives: truth.len() - tp,
        targets: truth
            .iter()
            .zip(truth_used)
            .zip(sources)
            .map(|((t, detected), sources)| TargetVisibility {
                id: t.id.clone(),
                detected,
                sources,
            })
            .collect(),
    }
}

/// Replaces each target's `sources` with the streams that detect it on
/// their own (one-to-one match against truth, before any fusion).
pub fn set_stream_visibility(
    metrics: &mut FrameMetrics,
    streams: &[(&str, &[Detection])],
    truth: &[TruthBox],
    iou_threshold: f64,
) {
    for t in &mut metrics.targets {
        t.sources.clear();
    }
    for (name, dets) in streams {
        let own = match_to_truth(metrics.frame, dets, truth, iou_threshold);
        for (t, o) in metrics.targets.iter_mut().zip(&own.targets) {
            if o.detected {
                t.sources.insert(name.to_string());
            }
        }
    }
}

/// First frame from which `target` is detected for `sustain` consecutive
/// frames.
pub fn first_detection(metrics: &[FrameMetrics], target: &str, sustain: usize) -> Option<usize> {
    let sustain = sustain.max(1);
    let hit: Vec<bool> = metrics
        .iter()
        .map(|m| m.target(target).is_some_and(|t| t.detected))
        .collect();
    (0..hit.len()).find(|&f| f + sustain <= hit.len() && hit[f..f + sustain].iter().all(|h| *h))
}

/// Vehicle-only first detection minus fused first detection, in frames.
///
/// `None` when neither pipeline detects the target. A pipeline that never
/// detects it is scored as detecting at `len` (one past the last frame), so
/// the result is a lower bound in that case.
pub fn earliness(
    vehicle_only: &[FrameMetrics],
    fused: &[FrameMetrics],
    target: &str,
    sustain: usize,
) -> Result<Option<i64>, EvaluationError> {
    let known = vehicle_only
        .iter()
        .chain(fused)
        .any(|m| m.target(target).is_some());
    if !known {
        return Err(EvaluationError::UnknownTarget(target.to_string()));
    }
    let v = first_detection(vehicle_only, target, sustain);
    let f = first_detection(fused, target, sustain);
    Ok(match (v, f) {
        (None, None) => None,
        (v, f) => Some(v.unwrap_or(vehicle_only.len()) as i64 - f.unwrap_or(fused.len()) as i64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEarliness {
    pub target: String,
    pub vehicle_first_frame: Option<usize>,
    pub fused_first_frame: Option<usize>,
    pub earliness_frames: Option<i64>,
}

/// Earliness for every target that appears in the metrics, sorted by id.
pub fn earliness_report(
    vehicle_only: &[FrameMetrics],
    fused: &[FrameMetrics],
    sustain: usize,
) -> Vec<TargetEarliness> {
    let ids: BTreeSet<&str> = vehicle_only
        .iter()
        .chain(fused)
        .flat_map(|m| m.targets.iter().map(|t| t.id.as_str()))
        .collect();
    ids.into_iter()
        .map(|id| TargetEarliness {
            target: id.to_string(),
            vehicle_first_frame: first_detection(vehicle_only, id, sustain),
            fused_first_frame: first_detection(fused, id, sustain),
            earliness_frames: earliness(vehicle_only, fused, id, sustain)
                .expect("id taken from metrics"),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Simulate,
    SaveDisk,
    Perceive,
    Fuse,
    Track,
    Total,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Simulate => "simulate",
            Phase::SaveDisk => "save_disk",
            Phase::Perceive => "perceive",
            Phase::Fuse => "fuse",
            Phase::Track => "track",
            Phase::Total => "total",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub frame: usize,
    pub phase: Phase,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phase: Phase,
    pub count: usize,
    pub mean_seconds: f64,
    pub max_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TimingReport {
    pub phases: Vec<PhaseStats>,
}

impl TimingReport {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseStats> {
        self.phases.iter().find(|p| p.phase == phase)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:>6} {:>12} {:>12}\n",
            "phase", "frames", "mean_s", "max_s"
        );
        for p in &self.phases {
            writeln!(
                s,
                "{:<10} {:>6} {:>12.6} {:>12.6}",
                p.phase.as_str(),
                p.count,
                p.mean_seconds,
                p.max_seconds
            )
            .unwrap();
        }
        s
    }
}

/// Per-phase mean and max, phases in declaration order.
pub fn timing_report(records: &[TimingRecord]) -> TimingReport {
    let mut acc: BTreeMap<Phase, (usize, f64, f64)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.phase).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += r.seconds;
        e.2 = e.2.max(r.seconds);
    }
    TimingReport {
        phases: acc
            .into_iter()
            .map(|(phase, (count, sum, max))| PhaseStats {
                phase,
                count,
                mean_seconds: sum / count as f64,
                max_seconds: max,
            })
            .collect(),
    }
}

/// CLEAR-MOT style summary of a track sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotMetrics {
    pub ground_truth: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
    pub mota: f64,
}

/// Scores tracks against truth frame by frame (greedy IoU matching, same
/// class); an id switch is a truth object matched to a different track id
/// than at its previous match.
pub fn mot_metrics(
    tracks: &[Vec<TrackOutput>],
    truth: &[Vec<TruthBox>],
    iou_threshold: f64,
) -> MotMetrics {
    let mut last_id: HashMap<&str, u64> = HashMap::new();
    let (mut gt, mut fp, mut misses, mut idsw) = (0, 0, 0, 0);
    for (frame_tracks, frame_truth) in tracks.iter().zip(truth) {
        let mut pairs = Vec::new();
        for (i, t) in frame_tracks.iter().enumerate() {
            for (j, g) in frame_truth.iter().enumerate() {
                if t.class == g.class {
                    let iou = iou_3d(&t.bbox, &g.bbox);
                    if iou >= iou_threshold && iou > 0.0 {
                        pairs.push((iou, i, j));
                    }
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut t_used = vec![false; frame_tracks.len()];
        let mut g_used = vec![false; frame_truth.len()];
        let mut matched = 0;
        for (_, i, j) in pairs {
            if t_used[i] || g_used[j] {
                continue;
            }
            t_used[i] = true;
            g_used[j] = true;
            matched += 1;
            let id = frame_tracks[i].id;
            if let Some(prev) = last_id.insert(frame_truth[j].id.as_str(), id) {
                if prev != id {
                    idsw += 1;
                }
            }
        }
        gt += frame_truth.len();
        fp += frame_tracks.len() - matched;
        misses += frame_truth.len() - matched;
    }
    MotMetrics {
        ground_truth: gt,
        false_positives: fp,
        misses,
        id_switches: idsw,
        mota: if gt == 0 {
            1.0
        } else {
            1.0 - (fp + misses + idsw) as f64 / gt as f64
        },
    }
}
