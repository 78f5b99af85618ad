//! Planar bevel-tip needle model.
//!
//! A push advances the tip along a circular arc whose turning direction is
//! given by the bevel orientation; a rotate flips the bevel by half a turn in
//! place. Pulling back never invents geometry: it walks back along the
//! recorded insertion trace.

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::GameState;
use crate::regions::{Point, Rect};

/// Arc-length tolerance for trace bookkeeping.
const ARC_EPS: f64 = 1e-9;

pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Bevel orientation; `Plus` bends counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bevel {
    Plus,
    Minus,
}

impl Bevel {
    pub fn sign(self) -> f64 {
        match self {
            Bevel::Plus => 1.0,
            Bevel::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Bevel {
        match self {
            Bevel::Plus => Bevel::Minus,
            Bevel::Minus => Bevel::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedlePose {
    pub x: f64,
    pub y: f64,
    /// Heading in `[0, 2π)`.
    pub theta: f64,
    pub bevel: Bevel,
}

impl NeedlePose {
    pub fn new(x: f64, y: f64, theta: f64, bevel: Bevel) -> Self {
        Self { x, y, theta: normalize_angle(theta), bevel }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn with_position(self, p: Point) -> Self {
        Self { x: p.x, y: p.y, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Push,
    Rotate,
    /// Readjustment only; never produced by synthesis.
    Pull,
}

impl Action {
    pub fn bit(self) -> u8 {
        match self {
            Action::Push => 0b001,
            Action::Rotate => 0b010,
            Action::Pull => 0b100,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Push => "push",
            Action::Rotate => "rotate",
            Action::Pull => "pull",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicParams {
    /// Arc length of one push (mm).
    pub step_len: f64,
    /// Turning radius (mm); `f64::INFINITY` gives straight insertion.
    pub radius: f64,
    /// Largest heading perturbation a single push may suffer (rad).
    pub max_deviation: f64,
}

impl Default for KinematicParams {
    fn default() -> Self {
        Self {
            step_len: 2.0,
            radius: 50.0,
            max_deviation: TAU / GridSpec::default().headings as f64,
        }
    }
}

impl KinematicParams {
    pub fn curvature(&self, bevel: Bevel) -> f64 {
        bevel.sign() / self.radius
    }
}

/// Advance `pose` by `len` along an arc of signed `curvature`, heading untouched
/// by noise.
pub fn advance_arc(pose: NeedlePose, len: f64, curvature: f64) -> NeedlePose {
    let turn = curvature * len;
    let (x, y) = if turn.abs() < 1e-12 {
        (pose.x + len * pose.theta.cos(), pose.y + len * pose.theta.sin())
    } else {
        let t1 = pose.theta + turn;
        (
            pose.x + (t1.sin() - pose.theta.sin()) / curvature,
            pose.y - (t1.cos() - pose.theta.cos()) / curvature,
        )
    };
    NeedlePose::new(x, y, pose.theta + turn, pose.bevel)
}

/// Positions along a push arc at spacing no larger than `spacing`, excluding
/// the start and including the end.
pub fn arc_points(pose: NeedlePose, params: &KinematicParams, spacing: f64) -> Vec<Point> {
    let n = (params.step_len / spacing).ceil().max(1.0) as usize;
    let k = params.curvature(pose.bevel);
    (1..=n)
        .map(|i| advance_arc(pose, params.step_len * i as f64 / n as f64, k).position())
        .collect()
}

/// Apply a synthesis action to a pose. `deviation` perturbs the heading after
/// a push and must not exceed `params.max_deviation`.
pub fn apply_action(
    pose: NeedlePose,
    action: Action,
    params: &KinematicParams,
    deviation: f64,
) -> Result<NeedlePose> {
    if !(params.step_len > 0.0 && params.radius > 0.0) {
        return Err(Error::Config("step length and radius must be positive".into()));
    }
    if deviation.abs() > params.max_deviation + 1e-12 {
        return Err(Error::Usage(format!(
            "deviation {deviation} exceeds bound {}",
            params.max_deviation
        )));
    }
    match action {
        Action::Push => {
            let end = advance_arc(pose, params.step_len, params.curvature(pose.bevel));
            Ok(NeedlePose::new(end.x, end.y, end.theta + deviation, end.bevel))
        }
        Action::Rotate => Ok(NeedlePose { bevel: pose.bevel.flipped(), ..pose }),
        Action::Pull => Err(Error::Usage("pull is a readjustment; use invert_path".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub pose: NeedlePose,
    /// Action that produced this sample; `None` for the insertion pose.
    pub action: Option<Action>,
    /// Cumulative inserted arc length at this sample (mm).
    pub arc: f64,
}

/// Executed history of the needle, one sample per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    samples: Vec<TraceSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pullback {
    pub pose: NeedlePose,
    pub trace: Trace,
    pub start_reached: bool,
}

impl Trace {
    pub fn new(insertion: NeedlePose) -> Self {
        Self { samples: vec![TraceSample { pose: insertion, action: None, arc: 0.0 }] }
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn insertion(&self) -> NeedlePose {
        self.samples[0].pose
    }

    pub fn tip(&self) -> NeedlePose {
        self.samples[self.samples.len() - 1].pose
    }

    pub fn inserted_length(&self) -> f64 {
        self.samples[self.samples.len() - 1].arc
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Record the result of `action`, which advanced the tip by `advance` mm.
    pub fn record(&mut self, pose: NeedlePose, action: Action, advance: f64) {
        let arc = self.inserted_length() + advance;
        self.samples.push(TraceSample { pose, action: Some(action), arc });
    }

    /// Replace the tip pose without changing the arc bookkeeping.
    pub fn correct_tip(&mut self, pose: NeedlePose) {
        let last = self.samples.len() - 1;
        self.samples[last].pose = pose;
    }

    pub fn positions(&self) -> impl Iterator<Item = Point> + '_ {
        self.samples.iter().map(|s| s.pose.position())
    }

    /// Pull the tip back by at least `pullback_len` mm along the recorded
    /// trace. The result is the latest recorded sample at or behind the target
    /// arc position; reaching arc position zero clamps to the insertion pose.
    pub fn invert_path(&self, pullback_len: f64) -> Result<Pullback> {
        if !(pullback_len >= 0.0) {
            return Err(Error::Usage(format!("pullback length must be >= 0, got {pullback_len}")));
        }
        let target = self.inserted_length() - pullback_len;
        if target <= ARC_EPS && self.inserted_length() > 0.0 || target < -ARC_EPS {
            let trace = Trace::new(self.insertion());
            return Ok(Pullback { pose: self.insertion(), trace, start_reached: true });
        }
        let keep = self
            .samples
            .iter()
            .rposition(|s| s.arc <= target + ARC_EPS)
            .unwrap_or(0);
        let trace = Trace { samples: self.samples[..=keep].to_vec() };
        let start_reached = trace.samples.len() == 1;
        Ok(Pullback { pose: trace.tip(), trace, start_reached })
    }
}

/// Quantization grid of the discrete game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cell edge length (mm).
    pub cell: f64,
    /// Number of heading sectors.
    pub headings: u16,
}

impl Default for GridSpec {
    fn default() -> Self {
        // 314 sectors make one sector half the turn of a default push (2 mm at
        // 50 mm radius), so a one-sector deviation cannot cancel the bevel.
        Self { cell: 1.0, headings: 314 }
    }
}

impl GridSpec {
    pub fn heading_quantum(&self) -> f64 {
        TAU / self.headings as f64
    }

    pub fn heading_index(&self, theta: f64) -> u16 {
        let q = self.heading_quantum();
        ((normalize_angle(theta) / q).round() as i64).rem_euclid(self.headings as i64) as u16
    }
}

/// Map a continuous pose to its game state.
pub fn quantize(pose: NeedlePose, grid: &GridSpec, workspace: &Rect) -> Result<GameState> {
    let p = pose.position();
    if !workspace.contains(p) {
        return Err(Error::OutsideWorkspace { x: p.x, y: p.y });
    }
    let nx = (workspace.width() / grid.cell).ceil() as i32;
    let ny = (workspace.height() / grid.cell).ceil() as i32;
    let cx = (((p.x - workspace.x_min) / grid.cell).floor() as i32).min(nx - 1);
    let cy = (((p.y - workspace.y_min) / grid.cell).floor() as i32).min(ny - 1);
    Ok(GameState { cx: cx as u16, cy: cy as u16, heading: grid.heading_index(pose.theta), bevel: pose.bevel })
}
