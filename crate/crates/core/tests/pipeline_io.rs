use std::fs;
use std::path::Path;

use coopsim::kitti_io::{oxts_path, read_tracklets, velodyne_path};
use coopsim::perception::DetectorParams;
use coopsim::pipeline::{run_pipeline, simulate, PipelineOptions, PipelineSelector};
use coopsim::scenario::{load_bundled, ScenarioConfig};
use coopsim::stream_export::read_scene;

fn short(name: &str, frames: usize) -> ScenarioConfig {
    let mut c = load_bundled(name).unwrap();
    c.frame_count = frames;
    c
}

fn options(c: &ScenarioConfig) -> PipelineOptions {
    PipelineOptions {
        seed: c.seed,
        ..PipelineOptions::default()
    }
}

fn count(dir: &Path) -> usize {
    fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

#[test]
fn simulate_writes_one_file_per_frame_and_sensor() {
    let c = short("occluded_intersection", 50);
    let dir = tempfile::tempdir().unwrap();
    let summary = simulate(&c, dir.path(), c.seed).unwrap();
    assert_eq!(summary.frames, 50);
    for sensor in ["vehicle", "roadside"] {
        let seq = dir.path().join(sensor);
        assert_eq!(count(&seq.join("velodyne_points/data")), 50);
        assert_eq!(count(&seq.join("oxts/data")), 50);
        assert!(velodyne_path(&seq, 49).is_file());
        assert!(oxts_path(&seq, 49).is_file());
        let labels = fs::read_to_string(seq.join("label/0000.txt")).unwrap();
        let frames: std::collections::BTreeSet<&str> = labels
            .lines()
            .map(|l| l.split_whitespace().next().unwrap())
            .collect();
        assert_eq!(frames.len(), 50);
        let tracklets =
            read_tracklets(&mut fs::File::open(seq.join("tracklet_labels.xml")).unwrap()).unwrap();
        assert!(tracklets.iter().all(|t| t.poses.len() == 50));
    }
    assert!(dir.path().join("timing.json").is_file());
}

#[test]
fn reading_a_simulated_directory_matches_scanning_live() {
    let c = short("occluded_intersection", 30);
    let (sim, live, replay) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    simulate(&c, sim.path(), c.seed).unwrap();
    let direct = run_pipeline(&c, &options(&c), live.path()).unwrap();
    let from_disk = run_pipeline(
        &c,
        &PipelineOptions {
            sim_dir: Some(sim.path().to_path_buf()),
            ..options(&c)
        },
        replay.path(),
    )
    .unwrap();
    assert_eq!(direct, from_disk);
}

#[test]
fn external_truth_labels_give_perfect_vehicle_recall() {
    let c = short("occluded_intersection", 40);
    let (sim, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(&c, sim.path(), c.seed).unwrap();
    let report = run_pipeline(
        &c,
        &PipelineOptions {
            labels_dir: Some(sim.path().to_path_buf()),
            ..options(&c)
        },
        out.path(),
    )
    .unwrap();
    let vehicle = report.vehicle_only.unwrap();
    assert!(vehicle
        .frames
        .iter()
        .all(|f| f.recall() == 1.0 && f.precision() == 1.0));
    // Nothing left to gain from the roadside.
    assert_eq!(report.earliness.unwrap()[0].earliness_frames, Some(0));
}

#[test]
fn vehicle_only_run_has_no_roadside_streams() {
    let c = short("occluded_intersection", 10);
    let out = tempfile::tempdir().unwrap();
    let report = run_pipeline(
        &c,
        &PipelineOptions {
            selector: PipelineSelector::VehicleOnly,
            ..options(&c)
        },
        out.path(),
    )
    .unwrap();
    assert!(report.cooperative.is_none() && report.earliness.is_none());
    let (manifest, frames) = read_scene(&out.path().join("scene")).unwrap();
    assert!(manifest
        .streams
        .iter()
        .all(|s| !s.path.starts_with("/roadside") && !s.path.starts_with("/fused")));
    assert!(frames
        .iter()
        .all(|f| f.streams.keys().all(|p| !p.starts_with("/roadside"))));
    assert!(!out.path().join("tracks/fused").exists());
}

#[test]
fn noiseless_detector_keeps_recall_dominance_everywhere() {
    for name in [
        "occluded_intersection",
        "ego_occludes_target",
        "straight_road",
        "curve_road",
    ] {
        let c = load_bundled(name).unwrap();
        let out = tempfile::tempdir().unwrap();
        let report = run_pipeline(
            &c,
            &PipelineOptions {
                detector: DetectorParams::noiseless(),
                ..options(&c)
            },
            out.path(),
        )
        .unwrap();
        let (v, f) = (report.vehicle_only.unwrap(), report.cooperative.unwrap());
        for (a, b) in v.frames.iter().zip(&f.frames) {
            assert!(b.recall() >= a.recall(), "{name} frame {}", a.frame);
        }
    }
}

#[test]
fn tracking_before_fusion_also_runs() {
    use coopsim::pipeline::StageOrder;
    let c = short("occluded_intersection", 40);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let late = run_pipeline(
        &c,
        &PipelineOptions {
            order: StageOrder::TrackThenFuse,
            ..options(&c)
        },
        a.path(),
    )
    .unwrap();
    let early = run_pipeline(&c, &options(&c), b.path()).unwrap();
    // Detection-level metrics do not depend on where tracking sits.
    assert_eq!(
        late.cooperative.as_ref().unwrap().frames,
        early.cooperative.as_ref().unwrap().frames
    );
    assert_eq!(late.earliness, early.earliness);
    let mota = late.cooperative.unwrap().tracking.mota;
    assert!(mota > 0.8, "mota {mota}");
    let labels = fs::read_to_string(a.path().join("tracks/fused/label/0000.txt")).unwrap();
    // The target is only in roadside view early on, so its id carries the
    // roadside sensor's namespace.
    let roadside = c.sensors.iter().position(|s| s.id == "roadside").unwrap() as i64;
    let first: i64 = labels
        .lines()
        .next()
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(first >> 32, roadside);
}
