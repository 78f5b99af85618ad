//! Data matcher: accepts or rejects an observation batch against the active
//! plan.

use serde::{Deserialize, Serialize};

use crate::kinematics::NeedlePose;
use crate::optimizer::Plan;
use crate::plant::{detect_dr, Observation};
use crate::regions::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MatchResult {
    Ok,
    Deviation { observed_pose: NeedlePose, predicted_pose: NeedlePose, distance_mm: f64 },
    DetectionEvent { est_boundary_point: Point },
}

/// Predicted pose after `progress` mm along `plan`: position interpolated on
/// the predicted samples, heading and bevel of the latest sample reached.
pub fn predicted_pose(plan: &Plan, progress: f64) -> NeedlePose {
    let i = plan.arcs.partition_point(|&a| a <= progress + 1e-9).max(1) - 1;
    plan.poses[i].with_position(plan.position_at_arc(progress))
}

/// Match one action's observations. A force above `force_threshold` wins over
/// any positional disagreement; otherwise the last measured position is
/// compared with the prediction at equal arc-length progress.
pub fn match_batch(
    obs: &[Observation],
    plan: &Plan,
    progress: f64,
    eps_match: f64,
    force_threshold: f64,
) -> MatchResult {
    let Some(last) = obs.last() else {
        return MatchResult::Ok;
    };
    if let Some(d) = detect_dr(obs, force_threshold) {
        return MatchResult::DetectionEvent { est_boundary_point: d.est_boundary_point };
    }
    let predicted = predicted_pose(plan, progress);
    let distance_mm = last.measured_pos.dist(predicted.position());
    if distance_mm > eps_match {
        MatchResult::Deviation {
            observed_pose: predicted.with_position(last.measured_pos),
            predicted_pose: predicted,
            distance_mm,
        }
    } else {
        MatchResult::Ok
    }
}
