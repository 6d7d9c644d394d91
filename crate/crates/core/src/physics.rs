//! Deterministic quasi-static planar physics.
//!
//! The transition model is positional projection: the gripper moves along an
//! interpolated path in substeps, penetrated objects are displaced out along
//! the minimal translation vector with a lever-arm rotation term, and
//! displaced objects recursively push their neighbours. There is no momentum;
//! nothing moves unless something is pushing it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{polygon_overlap, wrap_angle, Polygon, Pose2, Vec2};

/// The discrete action set. Index order is fixed: it matches the output
/// neurons of the value network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveForward,
    MoveBack,
    MoveLeft,
    MoveRight,
    RotateCw,
    RotateCcw,
    OpenGripper,
    CloseGripper,
}

pub const ACTION_COUNT: usize = 8;

pub const ALL_ACTIONS: [Action; ACTION_COUNT] = [
    Action::MoveForward,
    Action::MoveBack,
    Action::MoveLeft,
    Action::MoveRight,
    Action::RotateCw,
    Action::RotateCcw,
    Action::OpenGripper,
    Action::CloseGripper,
];

impl Action {
    pub fn index(self) -> usize {
        ALL_ACTIONS.iter().position(|&a| a == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Action> {
        ALL_ACTIONS.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveForward => "move_forward",
            Action::MoveBack => "move_back",
            Action::MoveLeft => "move_left",
            Action::MoveRight => "move_right",
            Action::RotateCw => "rotate_cw",
            Action::RotateCcw => "rotate_ccw",
            Action::OpenGripper => "open_gripper",
            Action::CloseGripper => "close_gripper",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectRole {
    Desired,
    Clutter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub shape: Polygon,
    pub pose: Pose2,
    pub role: ObjectRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    pub pose: Pose2,
    /// 0 closed, 1 fully open.
    pub aperture: f64,
    pub held_object: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRegion {
    pub center: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Bounds {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    /// The 50 cm × 50 cm manipulation surface centered at the origin.
    pub fn desk() -> Self {
        Bounds::new(-0.25, 0.25, -0.25, 0.25)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.x_min <= p.x && p.x <= self.x_max && self.y_min <= p.y && p.y <= self.y_max
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            p.x.clamp(self.x_min, self.x_max),
            p.y.clamp(self.y_min, self.y_max),
        )
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn half_width(&self) -> f64 {
        (self.x_max - self.x_min) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: Vec<ObjectState>,
    pub gripper: GripperState,
    pub target: TargetRegion,
    pub bounds: Bounds,
    pub step_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsConfig {
    /// Meters per move action.
    pub translation_step: f64,
    /// Radians per rotate action.
    pub rotation_step: f64,
    /// Contact-resolution substeps per action.
    pub substeps: u32,
    /// Episode cap in actions.
    pub max_episode_steps: u32,
    /// Maximum finger opening (Robotiq 2F-85 span).
    pub finger_span: f64,
    pub finger_length: f64,
    pub finger_thickness: f64,
    pub body_length: f64,
    pub body_width: f64,
    /// Scales the lever-arm rotation applied to pushed objects.
    pub push_rotation_gain: f64,
    /// Regularizer for the lever-arm denominator, m².
    pub push_rotation_reg: f64,
    /// Residual penetration allowed after a step, meters.
    pub penetration_tolerance: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            translation_step: 0.03,
            rotation_step: 20.0_f64.to_radians(),
            substeps: 10,
            max_episode_steps: 50,
            finger_span: 0.085,
            finger_length: 0.05,
            finger_thickness: 0.01,
            body_length: 0.04,
            body_width: 0.06,
            push_rotation_gain: 0.5,
            push_rotation_reg: 4e-4,
            penetration_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    Goal,
    Invalid,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: WorldState,
    pub reward: f64,
    pub terminal: bool,
    pub terminal_kind: TerminalKind,
}

pub const REWARD_GOAL: f64 = 0.0;
pub const REWARD_STEP: f64 = -1.0;
pub const REWARD_INVALID: f64 = -50.0;

impl WorldState {
    pub fn desired_index(&self) -> usize {
        self.objects
            .iter()
            .position(|o| o.role == ObjectRole::Desired)
            .expect("world has a desired object")
    }

    /// Structural invariants; scene construction and ingestion call this.
    pub fn validate(&self) -> Result<()> {
        let desired = self
            .objects
            .iter()
            .filter(|o| o.role == ObjectRole::Desired)
            .count();
        if desired != 1 {
            return Err(Error::SceneValidation {
                field: "objects".into(),
                reason: format!("expected exactly one desired object, found {desired}"),
            });
        }
        if self.target.radius <= 0.0 {
            return Err(Error::SceneValidation {
                field: "target.radius".into(),
                reason: format!("must be positive, got {}", self.target.radius),
            });
        }
        if !self.bounds.contains(self.target.center) {
            return Err(Error::SceneValidation {
                field: "target.center".into(),
                reason: "outside surface bounds".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.gripper.aperture) {
            return Err(Error::SceneValidation {
                field: "gripper.aperture".into(),
                reason: format!("must be in [0,1], got {}", self.gripper.aperture),
            });
        }
        if let Some(i) = self.gripper.held_object {
            if i >= self.objects.len() {
                return Err(Error::SceneValidation {
                    field: "gripper.held_object".into(),
                    reason: format!("index {i} out of range"),
                });
            }
        }
        Ok(())
    }

    /// Worst pairwise penetration depth, gripper assembly included.
    pub fn max_penetration(&self, cfg: &PhysicsConfig) -> f64 {
        let mut worst = 0.0f64;
        let parts = gripper_parts(cfg, self.gripper.aperture);
        for (k, obj) in self.objects.iter().enumerate() {
            if self.gripper.held_object == Some(k) {
                continue;
            }
            for (poly, local) in &parts {
                let pose = self.gripper.pose.compose(*local);
                if let Some(mtv) = polygon_overlap(poly, pose, &obj.shape, obj.pose) {
                    worst = worst.max(mtv.norm());
                }
            }
        }
        for i in 0..self.objects.len() {
            for j in (i + 1)..self.objects.len() {
                let (a, b) = (&self.objects[i], &self.objects[j]);
                if let Some(mtv) = polygon_overlap(&a.shape, a.pose, &b.shape, b.pose) {
                    worst = worst.max(mtv.norm());
                }
            }
        }
        worst
    }
}

/// True iff every object centroid lies within the surface bounds (inclusive).
pub fn is_valid(w: &WorldState) -> bool {
    w.objects.iter().all(|o| w.bounds.contains(o.pose.position))
}

/// True iff the world is valid and the desired object centroid is within the
/// target radius (inclusive).
pub fn is_goal(w: &WorldState) -> bool {
    if !is_valid(w) {
        return false;
    }
    let desired = &w.objects[w.desired_index()];
    (desired.pose.position - w.target.center).norm() <= w.target.radius
}

/// Gripper collision geometry in the gripper local frame: palm body plus two
/// fingers separated by the aperture-scaled gap. +x is the heading.
pub fn gripper_parts(cfg: &PhysicsConfig, aperture: f64) -> Vec<(Polygon, Pose2)> {
    let gap = aperture.clamp(0.0, 1.0) * cfg.finger_span;
    let body = Polygon::rectangle(cfg.body_length, cfg.body_width)
        .expect("body rectangle is valid");
    let finger = Polygon::rectangle(cfg.finger_length, cfg.finger_thickness)
        .expect("finger rectangle is valid");
    let fx = cfg.finger_length / 2.0;
    let fy = gap / 2.0 + cfg.finger_thickness / 2.0;
    vec![
        (body, Pose2::new(-cfg.body_length / 2.0, 0.0, 0.0)),
        (finger.clone(), Pose2::new(fx, fy, 0.0)),
        (finger, Pose2::new(fx, -fy, 0.0)),
    ]
}

/// Everything rigid that moves with the gripper: its parts plus a held object.
fn assembly(
    w: &WorldState,
    cfg: &PhysicsConfig,
) -> Vec<(Polygon, Pose2)> {
    let mut parts: Vec<(Polygon, Pose2)> = gripper_parts(cfg, w.gripper.aperture)
        .into_iter()
        .map(|(poly, local)| (poly, w.gripper.pose.compose(local)))
        .collect();
    if let Some(i) = w.gripper.held_object {
        parts.push((w.objects[i].shape.clone(), w.objects[i].pose));
    }
    parts
}

const MAX_RESOLVE_ITERS: usize = 24;
const RESOLVE_SLOP: f64 = 1e-6;

/// Push a free object out along the MTV, rotating it about its centroid by a
/// lever-arm term derived from the contact offset.
fn push_object(obj: &mut ObjectState, mtv: Vec2, cfg: &PhysicsConfig) {
    let depth = mtv.norm();
    if depth <= 0.0 {
        return;
    }
    let n = mtv.scale(1.0 / depth);
    // Contact approximated by the support vertices facing the pusher.
    let verts = obj.shape.world_vertices(obj.pose);
    let min_proj = verts
        .iter()
        .map(|v| v.dot(n))
        .fold(f64::INFINITY, f64::min);
    let mut acc = Vec2::ZERO;
    let mut count = 0.0;
    for v in &verts {
        if v.dot(n) - min_proj < 1e-6 {
            acc = acc + *v;
            count += 1.0;
        }
    }
    let contact = acc.scale(1.0 / count);
    let r = contact - obj.pose.position;
    let dtheta = cfg.push_rotation_gain * r.cross(n) * depth / (r.norm_sq() + cfg.push_rotation_reg);
    obj.pose.position = obj.pose.position + mtv.scale(1.0 + RESOLVE_SLOP);
    obj.pose.angle = wrap_angle(obj.pose.angle + dtheta);
}

/// Positional projection until no pair penetrates. The gripper assembly is
/// kinematic; free objects move. Object-object contacts split the correction.
fn resolve_contacts(w: &mut WorldState, cfg: &PhysicsConfig) {
    let held = w.gripper.held_object;
    let n_obj = w.objects.len();
    for _ in 0..MAX_RESOLVE_ITERS {
        let mut moved = false;
        let parts = assembly(w, cfg);
        for k in 0..n_obj {
            if held == Some(k) {
                continue;
            }
            for (poly, pose) in &parts {
                if let Some(mtv) =
                    polygon_overlap(poly, *pose, &w.objects[k].shape, w.objects[k].pose)
                {
                    push_object(&mut w.objects[k], mtv, cfg);
                    moved = true;
                }
            }
        }
        for i in 0..n_obj {
            for j in (i + 1)..n_obj {
                if held == Some(i) || held == Some(j) {
                    continue;
                }
                let (a, b) = (&w.objects[i], &w.objects[j]);
                if let Some(mtv) = polygon_overlap(&a.shape, a.pose, &b.shape, b.pose) {
                    let half = mtv.scale(0.5);
                    push_object(&mut w.objects[j], half, cfg);
                    push_object(&mut w.objects[i], -half, cfg);
                    moved = true;
                }
            }
        }
        if !moved {
            return;
        }
    }
    squeeze_out(w, cfg);
}

/// Fallback for the rare jammed configuration (an object caught between two
/// kinematic faces ping-pongs instead of converging): eject it radially from
/// the gripper center until clear.
fn squeeze_out(w: &mut WorldState, cfg: &PhysicsConfig) {
    let held = w.gripper.held_object;
    for _ in 0..MAX_RESOLVE_ITERS {
        let parts = assembly(w, cfg);
        let mut worst: Option<(usize, f64)> = None;
        for k in 0..w.objects.len() {
            if held == Some(k) {
                continue;
            }
            for (poly, pose) in &parts {
                if let Some(mtv) =
                    polygon_overlap(poly, *pose, &w.objects[k].shape, w.objects[k].pose)
                {
                    let d = mtv.norm();
                    if worst.map_or(true, |(_, wd)| d > wd) {
                        worst = Some((k, d));
                    }
                }
            }
        }
        let Some((k, depth)) = worst else { return };
        let dir = (w.objects[k].pose.position - w.gripper.pose.position).normalized();
        let dir = if dir == Vec2::ZERO { Vec2::new(1.0, 0.0) } else { dir };
        w.objects[k].pose.position =
            w.objects[k].pose.position + dir.scale(depth + cfg.penetration_tolerance / 2.0);
        // a radial ejection can re-penetrate neighbours; settle them
        let mut settle = w.clone();
        settle_objects(&mut settle, cfg);
        *w = settle;
    }
}

/// One pass of object-object splitting without the gripper, used after an
/// ejection.
fn settle_objects(w: &mut WorldState, cfg: &PhysicsConfig) {
    let held = w.gripper.held_object;
    for _ in 0..MAX_RESOLVE_ITERS {
        let mut moved = false;
        for i in 0..w.objects.len() {
            for j in (i + 1)..w.objects.len() {
                if held == Some(i) || held == Some(j) {
                    continue;
                }
                let (a, b) = (&w.objects[i], &w.objects[j]);
                if let Some(mtv) = polygon_overlap(&a.shape, a.pose, &b.shape, b.pose) {
                    let half = mtv.scale(0.5);
                    push_object(&mut w.objects[j], half, cfg);
                    push_object(&mut w.objects[i], -half, cfg);
                    moved = true;
                }
            }
        }
        if !moved {
            return;
        }
    }
}

/// Lateral width of an object across the finger axis, in the gripper frame.
fn lateral_width(obj: &ObjectState, gripper_pose: Pose2) -> f64 {
    let lateral = Vec2::new(0.0, 1.0).rotated(gripper_pose.angle);
    obj.shape.extent_along(obj.pose, lateral)
}

/// Object the closing fingers would seize: centroid inside the sweep region
/// and narrow enough to fit between the fingers at full span.
fn grasp_candidate(w: &WorldState, cfg: &PhysicsConfig) -> Option<(usize, f64)> {
    let gap = w.gripper.aperture * cfg.finger_span;
    let mut best: Option<(usize, f64, f64)> = None;
    for (k, obj) in w.objects.iter().enumerate() {
        if w.gripper.held_object == Some(k) {
            continue;
        }
        let local = w.gripper.pose.inverse_transform(obj.pose.position);
        if local.x < 0.0 || local.x > cfg.finger_length || local.y.abs() > gap / 2.0 {
            continue;
        }
        let width = lateral_width(obj, w.gripper.pose);
        if width > cfg.finger_span {
            continue;
        }
        if best.map_or(true, |(_, bx, _)| local.x < bx) {
            best = Some((k, local.x, width));
        }
    }
    best.map(|(k, _, width)| (k, width))
}

/// Whether a closing gripper could grasp this object from some pose: the
/// graspability predicate used by the scene size classes.
pub fn is_graspable(shape: &Polygon, cfg: &PhysicsConfig) -> bool {
    shape.min_width() <= cfg.finger_span
}

/// Apply one action. Total: every action is defined in every state, gripper
/// motion that would exit the bounds is clipped at the boundary.
pub fn step(w: &WorldState, action: Action, cfg: &PhysicsConfig) -> StepOutcome {
    let mut next = w.clone();
    let start_pose = w.gripper.pose;
    let start_aperture = w.gripper.aperture;

    let heading = Vec2::new(1.0, 0.0).rotated(start_pose.angle);
    let left = Vec2::new(0.0, 1.0).rotated(start_pose.angle);
    let (delta_pos, delta_angle) = match action {
        Action::MoveForward => (heading.scale(cfg.translation_step), 0.0),
        Action::MoveBack => (heading.scale(-cfg.translation_step), 0.0),
        Action::MoveLeft => (left.scale(cfg.translation_step), 0.0),
        Action::MoveRight => (left.scale(-cfg.translation_step), 0.0),
        Action::RotateCw => (Vec2::ZERO, -cfg.rotation_step),
        Action::RotateCcw => (Vec2::ZERO, cfg.rotation_step),
        Action::OpenGripper | Action::CloseGripper => (Vec2::ZERO, 0.0),
    };

    if action == Action::OpenGripper {
        next.gripper.held_object = None;
    }
    let mut held_offset = next
        .gripper
        .held_object
        .map(|i| next.gripper.pose.relative_to(next.objects[i].pose));

    let n = cfg.substeps.max(1);
    for i in 1..=n {
        let t = f64::from(i) / f64::from(n);
        let mut pose = Pose2 {
            position: start_pose.position + delta_pos.scale(t),
            angle: start_pose.angle + delta_angle * t,
        };
        pose.position = next.bounds.clamp(pose.position);
        next.gripper.pose = pose;

        match action {
            Action::OpenGripper => {
                next.gripper.aperture = start_aperture + (1.0 - start_aperture) * t;
            }
            Action::CloseGripper if next.gripper.held_object.is_none() => {
                let target_aperture = start_aperture * (1.0 - t);
                match grasp_candidate(&next, cfg) {
                    Some((k, width)) if width >= target_aperture * cfg.finger_span => {
                        // Fingers meet the object this substep: seize it and
                        // center it laterally between the fingertips.
                        let lateral = Vec2::new(0.0, 1.0).rotated(next.gripper.pose.angle);
                        let verts = next.objects[k].shape.world_vertices(next.objects[k].pose);
                        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                        let origin = next.gripper.pose.position;
                        for v in &verts {
                            let p = (*v - origin).dot(lateral);
                            lo = lo.min(p);
                            hi = hi.max(p);
                        }
                        let shift = lateral.scale(-(lo + hi) / 2.0);
                        next.objects[k].pose.position = next.objects[k].pose.position + shift;
                        next.gripper.aperture = (width / cfg.finger_span).min(1.0);
                        next.gripper.held_object = Some(k);
                        held_offset =
                            Some(next.gripper.pose.relative_to(next.objects[k].pose));
                    }
                    _ => next.gripper.aperture = target_aperture,
                }
            }
            _ => {}
        }

        if let (Some(k), Some(offset)) = (next.gripper.held_object, held_offset) {
            next.objects[k].pose = next.gripper.pose.compose(offset);
        }

        resolve_contacts(&mut next, cfg);
    }

    next.step_count = w.step_count.saturating_add(1);

    let (reward, terminal, terminal_kind) = if is_goal(&next) {
        (REWARD_GOAL, true, TerminalKind::Goal)
    } else if !is_valid(&next) {
        (REWARD_INVALID, true, TerminalKind::Invalid)
    } else if next.step_count >= cfg.max_episode_steps {
        (REWARD_STEP, true, TerminalKind::None)
    } else {
        (REWARD_STEP, false, TerminalKind::None)
    };

    StepOutcome {
        next_state: next,
        reward,
        terminal,
        terminal_kind,
    }
}
