//! Synthetic indoor scene and device-trajectory generation.
//!
//! Replaces real feature extraction with a geometric stand-in: map points
//! are sampled in a box, the device performs a bounded random walk, and a
//! frame's point set is whatever falls inside a range-limited horizontal
//! view cone (thinned by a detection probability). Keyframes are the frames
//! whose point sets are sufficiently novel against the previous keyframe.
//!
//! Real data enters through the plain-text trace format
//! ([`Trace::save`] / [`Trace::load`]).

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covis::{Frame, FrameId, MapPointId};

/// Axis-aligned box, min strictly below max on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, SceneError> {
        for axis in 0..3 {
            if min[axis].is_nan() || max[axis].is_nan() || min[axis] >= max[axis] {
                return Err(SceneError::DegenerateBounds { axis });
            }
        }
        Ok(Aabb { min, max })
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }
}

/// The static environment: map-point positions indexed by [`MapPointId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    points: Vec<[f64; 3]>,
    bounds: Aabb,
}

impl Scene {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn point(&self, id: MapPointId) -> [f64; 3] {
        self.points[id.0 as usize]
    }
}

/// Device pose: position plus heading. The generator walks in 4 DoF; the
/// uncertainty metric's 6-DoF information block is independent of this.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: [f64; 3],
    /// Heading in [-pi, pi).
    pub yaw: f64,
}

/// Range-and-cone visibility stand-in for feature detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityModel {
    /// Cone half-angle in radians, within (0, pi).
    pub fov: f64,
    pub max_range: f64,
    /// Probability a point inside the cone is actually detected, in (0, 1].
    pub detect_prob: f64,
}

impl VisibilityModel {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.fov.is_nan() || self.fov <= 0.0 || self.fov >= PI {
            return Err(SceneError::BadConfig("fov must lie in (0, pi)"));
        }
        if self.max_range.is_nan() || self.max_range <= 0.0 {
            return Err(SceneError::BadConfig("max_range must be positive"));
        }
        if self.detect_prob.is_nan() || self.detect_prob <= 0.0 || self.detect_prob > 1.0 {
            return Err(SceneError::BadConfig("detect_prob must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Bounded random-walk parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkParams {
    /// Maximum per-step position perturbation per axis, meters.
    pub step: f64,
    /// Maximum per-step yaw perturbation, radians.
    pub turn: f64,
}

/// All frames captured during one slot; keyframes carry the flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBatch {
    pub slot: usize,
    pub frames: Vec<Frame>,
}

impl FrameBatch {
    pub fn keyframes(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(|f| f.is_keyframe)
    }

    pub fn frame(&self, id: FrameId) -> Option<&Frame> {
        self.frames.iter().find(|f| f.frame_id == id)
    }
}

/// Per-slot generation knobs shared by the environment and the twin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotGenConfig {
    pub frames_per_slot: usize,
    pub walk: WalkParams,
    pub visibility: VisibilityModel,
    /// Jaccard-novelty keyframe threshold in [0, 1].
    pub jaccard_threshold: f64,
}

impl SlotGenConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.frames_per_slot == 0 {
            return Err(SceneError::BadConfig("frames_per_slot must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.jaccard_threshold) {
            return Err(SceneError::BadConfig("jaccard_threshold must lie in [0, 1]"));
        }
        self.visibility.validate()
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("bounds are degenerate on axis {axis}")]
    DegenerateBounds { axis: usize },
    #[error("scene needs at least one map point")]
    EmptyScene,
    #[error("{0}")]
    BadConfig(&'static str),
    #[error("trace line {line}: {msg}")]
    TraceParse { line: usize, msg: String },
    #[error("trace i/o: {0}")]
    TraceIo(#[from] std::io::Error),
}

/// Samples `n_points` positions uniformly inside `bounds`, deterministic
/// per seed.
pub fn generate_scene(n_points: usize, bounds: Aabb, seed: u64) -> Result<Scene, SceneError> {
    if n_points == 0 {
        return Err(SceneError::EmptyScene);
    }
    let mut rng = crate::seeded_rng(seed, 0x5ce);
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let mut p = [0.0; 3];
        for (axis, coord) in p.iter_mut().enumerate() {
            *coord = bounds.min[axis] + rng.gen::<f64>() * (bounds.max[axis] - bounds.min[axis]);
        }
        points.push(p);
    }
    Ok(Scene { points, bounds })
}

fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can land exactly on PI; keep the half-open convention.
    if a >= PI {
        a = -PI;
    }
    a
}

fn reflect(mut x: f64, min: f64, max: f64) -> f64 {
    // Fold back into [min, max]; a bounded step needs at most a couple of
    // reflections.
    loop {
        if x < min {
            x = 2.0 * min - x;
        } else if x > max {
            x = 2.0 * max - x;
        } else {
            return x;
        }
    }
}

/// Advances the pose by one bounded random-walk step, reflecting at the
/// bounds. Draw order: x, y, z perturbations, then yaw.
pub fn step_pose(p: &Pose, walk: &WalkParams, bounds: &Aabb, rng: &mut impl Rng) -> Pose {
    let mut position = p.position;
    for (axis, coord) in position.iter_mut().enumerate() {
        let delta = (2.0 * rng.gen::<f64>() - 1.0) * walk.step;
        *coord = reflect(*coord + delta, bounds.min[axis], bounds.max[axis]);
    }
    let dyaw = (2.0 * rng.gen::<f64>() - 1.0) * walk.turn;
    Pose { position, yaw: wrap_angle(p.yaw + dyaw) }
}

/// Map points inside the pose's horizontal view cone and range, each kept
/// independently with `detect_prob`. One rng draw per candidate point.
pub fn visible_points(
    scene: &Scene,
    pose: &Pose,
    vis: &VisibilityModel,
    rng: &mut impl Rng,
) -> BTreeSet<MapPointId> {
    let mut out = BTreeSet::new();
    let range2 = vis.max_range * vis.max_range;
    for (idx, pt) in scene.points.iter().enumerate() {
        let dx = pt[0] - pose.position[0];
        let dy = pt[1] - pose.position[1];
        let dz = pt[2] - pose.position[2];
        if dx * dx + dy * dy + dz * dz > range2 {
            continue;
        }
        // Points directly above or below have no defined bearing; treat
        // them as in-cone.
        let in_cone = if dx == 0.0 && dy == 0.0 {
            true
        } else {
            wrap_angle(dy.atan2(dx) - pose.yaw).abs() <= vis.fov
        };
        if !in_cone {
            continue;
        }
        if rng.gen::<f64>() < vis.detect_prob {
            out.insert(MapPointId(idx as u32));
        }
    }
    out
}

/// Jaccard similarity of two point sets; two empty sets count as identical.
pub fn jaccard(a: &BTreeSet<MapPointId>, b: &BTreeSet<MapPointId>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Indices of the keyframes: the first frame, then every frame whose
/// Jaccard similarity to the most recent keyframe falls strictly below the
/// threshold.
pub fn select_keyframes(frames: &[Frame], jaccard_threshold: f64) -> Vec<usize> {
    let mut selected = Vec::new();
    let mut last_keyframe: Option<&BTreeSet<MapPointId>> = None;
    for (i, f) in frames.iter().enumerate() {
        let novel = match last_keyframe {
            None => true,
            Some(prev) => jaccard(prev, &f.points) < jaccard_threshold,
        };
        if novel {
            selected.push(i);
            last_keyframe = Some(&f.points);
        }
    }
    selected
}

/// Generates one slot's frame batch: advances the pose once per frame,
/// captures the visibility set, assigns fresh frame ids, and tags
/// keyframes. Returns the batch and the end pose.
pub fn make_slot_frames(
    scene: &Scene,
    start_pose: &Pose,
    cfg: &SlotGenConfig,
    slot: usize,
    next_frame_id: &mut u64,
    rng: &mut impl Rng,
) -> (FrameBatch, Pose) {
    let mut pose = *start_pose;
    let mut frames = Vec::with_capacity(cfg.frames_per_slot);
    for _ in 0..cfg.frames_per_slot {
        pose = step_pose(&pose, &cfg.walk, scene.bounds(), rng);
        let points = visible_points(scene, &pose, &cfg.visibility, rng);
        frames.push(Frame {
            frame_id: FrameId(*next_frame_id),
            slot,
            points,
            is_keyframe: false,
        });
        *next_frame_id += 1;
    }
    for idx in select_keyframes(&frames, cfg.jaccard_threshold) {
        frames[idx].is_keyframe = true;
    }
    (FrameBatch { slot, frames }, pose)
}

const TRACE_HEADER_PREFIX: &str = "maptwin-trace v1 n_points=";

/// A recorded frame sequence: the ingestion point for real exports and the
/// round-trippable form of synthetic runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Size of the map-point universe; every recorded id must be below it.
    pub n_points: usize,
    pub batches: Vec<FrameBatch>,
}

impl Trace {
    /// Renders the line-oriented text form: a header, then one
    /// `slot frame_id is_keyframe p1,p2,...` record per frame (`-` for an
    /// empty point set).
    pub fn to_text(&self) -> String {
        let mut out = format!("{}{}\n", TRACE_HEADER_PREFIX, self.n_points);
        for batch in &self.batches {
            for f in &batch.frames {
                write!(out, "{} {} {} ", batch.slot, f.frame_id.0, u8::from(f.is_keyframe))
                    .expect("write to string");
                if f.points.is_empty() {
                    out.push('-');
                } else {
                    let mut first = true;
                    for p in &f.points {
                        if !first {
                            out.push(',');
                        }
                        write!(out, "{}", p.0).expect("write to string");
                        first = false;
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Trace, SceneError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(SceneError::TraceParse { line: 1, msg: "empty file".into() })?;
        let n_points: usize = header
            .strip_prefix(TRACE_HEADER_PREFIX)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| SceneError::TraceParse {
                line: 1,
                msg: format!("bad header, expected `{TRACE_HEADER_PREFIX}<count>`"),
            })?;

        let mut batches: Vec<FrameBatch> = Vec::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parse = |msg: &str| SceneError::TraceParse { line: line_no, msg: msg.into() };
            let mut fields = raw.split_whitespace();
            let slot: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse("bad slot"))?;
            let frame_id: u64 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse("bad frame id"))?;
            let is_keyframe = match fields.next() {
                Some("0") => false,
                Some("1") => true,
                _ => return Err(parse("is_keyframe must be 0 or 1")),
            };
            let points_field = fields.next().ok_or_else(|| parse("missing point list"))?;
            if fields.next().is_some() {
                return Err(parse("trailing fields"));
            }
            let mut points = BTreeSet::new();
            if points_field != "-" {
                for tok in points_field.split(',') {
                    let id: u32 = tok
                        .parse()
                        .map_err(|_| parse(&format!("bad point id `{tok}`")))?;
                    if id as usize >= n_points {
                        return Err(parse(&format!(
                            "point id {id} outside universe of {n_points}"
                        )));
                    }
                    points.insert(MapPointId(id));
                }
            }
            let frame = Frame { frame_id: FrameId(frame_id), slot, points, is_keyframe };
            match batches.last_mut() {
                Some(b) if b.slot == slot => b.frames.push(frame),
                Some(b) if b.slot > slot => {
                    return Err(parse("slot indices must be non-decreasing"))
                }
                _ => batches.push(FrameBatch { slot, frames: vec![frame] }),
            }
        }
        for b in &batches {
            if b.keyframes().next().is_none() {
                return Err(SceneError::TraceParse {
                    line: 0,
                    msg: format!("slot {} has no keyframe", b.slot),
                });
            }
        }
        Ok(Trace { n_points, batches })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Trace, SceneError> {
        Trace::from_text(&std::fs::read_to_string(path)?)
    }
}
