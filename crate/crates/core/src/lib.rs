//! Vehicle–road cooperative perception simulator and fusion pipeline.
//!
//! Scenarios are scripted in TOML, simulated LiDAR sweeps are written in
//! KITTI layout, and detections from the ego vehicle and roadside masts are
//! fused in a shared global frame (ENU, z up) before tracking, evaluation
//! and export to the scene viewer.

pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod kitti_io;
pub mod lidar_sim;
pub mod perception;
pub mod pipeline;
pub mod scenario;
pub mod seeds;
pub mod stream_export;
pub mod tracking;
