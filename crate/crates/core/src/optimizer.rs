//! Plan scoring by a fixed weighting of the soft requirements.
//!
//! Every plan a strategy admits already reaches the target and avoids the
//! known CRs and DRs. Among them we prefer few rotations, short paths, large
//! clearance to CRs, little travel through unexplored tissue, and ending close
//! to the target center. The weighted sum turns the choice into a scalar
//! minimization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ActionPath, StateId};
use crate::kinematics::{apply_action, Action, KinematicParams, NeedlePose};
use crate::regions::{Point, RegionMap, RegionType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Per rotation.
    pub rot: f64,
    /// Per mm of path.
    pub len: f64,
    /// Per mm of clearance below the clearance target.
    pub clear: f64,
    /// Per mm travelled through unknown regions.
    pub ur: f64,
    /// Per mm between the final tip and the target center.
    pub center: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { rot: 5.0, len: 1.0, clear: 3.0, ur: 10.0, center: 2.0 }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rot, self.len, self.clear, self.ur, self.center];
        if all.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("cost weights must be finite and non-negative: {self:?}")))
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rot: self.rot * c,
            len: self.len * c,
            clear: self.clear * c,
            ur: self.ur * c,
            center: self.center * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub rotations: usize,
    pub length_mm: f64,
    pub min_clearance_mm: f64,
    pub ur_length_mm: f64,
    pub final_center_dist_mm: f64,
}

impl PlanMetrics {
    /// Recompute all metrics from a pose sequence against `map`.
    pub fn compute(actions: &[Action], poses: &[NeedlePose], map: &RegionMap) -> Self {
        let rotations = actions.iter().filter(|a| **a == Action::Rotate).count();
        let mut length_mm = 0.0;
        let mut ur_length_mm = 0.0;
        for w in poses.windows(2) {
            let seg = w[0].position().dist(w[1].position());
            length_mm += seg;
            if seg > 0.0 && map.classify(w[1].position()).unwrap_or(RegionType::Unknown) == RegionType::Unknown {
                ur_length_mm += seg;
            }
        }
        let points: Vec<Point> = poses.iter().map(NeedlePose::position).collect();
        let last = points.last().copied().unwrap_or(map.tr().center);
        Self {
            rotations,
            length_mm,
            min_clearance_mm: map.min_clearance(&points),
            ur_length_mm,
            final_center_dist_mm: last.dist(map.tr().center),
        }
    }
}

/// A concrete action plan with its nominal pose prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub actions: Vec<Action>,
    /// Game states along the plan (empty when the plan was not extracted
    /// from a game).
    pub states: Vec<StateId>,
    /// `actions.len() + 1` predicted poses, starting at the anchor.
    pub poses: Vec<NeedlePose>,
    /// Inserted arc length at each predicted pose, relative to the anchor.
    pub arcs: Vec<f64>,
    pub metrics: PlanMetrics,
}

impl Plan {
    /// Predict the poses of `actions` from `anchor` with zero deviation.
    pub fn predict(
        actions: &[Action],
        states: &[StateId],
        anchor: NeedlePose,
        kin: &KinematicParams,
        map: &RegionMap,
    ) -> Result<Self> {
        let mut poses = Vec::with_capacity(actions.len() + 1);
        let mut arcs = Vec::with_capacity(actions.len() + 1);
        poses.push(anchor);
        arcs.push(0.0);
        let mut pose = anchor;
        let mut arc = 0.0;
        for &a in actions {
            pose = apply_action(pose, a, kin, 0.0)?;
            if a == Action::Push {
                arc += kin.step_len;
            }
            poses.push(pose);
            arcs.push(arc);
        }
        let metrics = PlanMetrics::compute(actions, &poses, map);
        Ok(Self { actions: actions.to_vec(), states: states.to_vec(), poses, arcs, metrics })
    }

    pub fn from_path(path: &ActionPath, anchor: NeedlePose, kin: &KinematicParams, map: &RegionMap) -> Result<Self> {
        Self::predict(&path.actions, &path.states, anchor, kin, map)
    }

    pub fn total_arc(&self) -> f64 {
        self.arcs.last().copied().unwrap_or(0.0)
    }

    /// Predicted position after `progress` mm of insertion along the plan.
    pub fn position_at_arc(&self, progress: f64) -> Point {
        let i = self.arcs.partition_point(|&a| a <= progress + 1e-9);
        let i = i.max(1) - 1;
        let here = self.poses[i].position();
        if i + 1 >= self.poses.len() || progress <= self.arcs[i] + 1e-9 {
            return here;
        }
        let there = self.poses[i + 1].position();
        let span = self.arcs[i + 1] - self.arcs[i];
        let t = ((progress - self.arcs[i]) / span).clamp(0.0, 1.0);
        Point::new(here.x + t * (there.x - here.x), here.y + t * (there.y - here.y))
    }
}

pub fn plan_cost(plan: &Plan, w: &CostWeights, clearance_target: f64) -> f64 {
    let m = &plan.metrics;
    let deficit = (clearance_target - m.min_clearance_mm).max(0.0);
    w.rot * m.rotations as f64
        + w.len * m.length_mm
        + w.clear * deficit
        + w.ur * m.ur_length_mm
        + w.center * m.final_center_dist_mm
}

/// Index of the cheapest plan; the first one wins ties.
pub fn select_plan(plans: &[Plan], w: &CostWeights, clearance_target: f64) -> Result<usize> {
    if plans.is_empty() {
        return Err(Error::Usage("cannot select from an empty plan list".into()));
    }
    let mut best = 0;
    let mut best_cost = plan_cost(&plans[0], w, clearance_target);
    for (i, p) in plans.iter().enumerate().skip(1) {
        let c = plan_cost(p, w, clearance_target);
        if c < best_cost {
            best = i;
            best_cost = c;
        }
    }
    Ok(best)
}
