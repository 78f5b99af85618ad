//! Ground-truth simulator: the real tissue (all CRs, known or not) and the
//! needle moving through it, observed by a noisy position tracker and a force
//! sensor that responds inside detection regions.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{advance_arc, apply_action, Action, KinematicParams, NeedlePose, Trace};
use crate::regions::{Point, RegionMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceModel {
    /// Force reading in plain tissue.
    pub baseline: f64,
    /// Additional force per mm of penetration into a DR.
    pub dr_gain: f64,
}

impl Default for ForceModel {
    fn default() -> Self {
        Self { baseline: 1.0, dr_gain: 10.0 }
    }
}

impl ForceModel {
    /// Threshold that trips after `depth` mm of DR penetration.
    pub fn threshold_at_depth(&self, depth: f64) -> f64 {
        self.baseline + self.dr_gain * depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    /// Tip progress between two observations (mm).
    pub sample_spacing: f64,
    /// Bound of the per-episode tracker offset (mm).
    pub static_offset_max: f64,
    /// Bound of the per-sample tracker jitter (mm).
    pub jitter_max: f64,
    /// Bound of the heading perturbation per push (rad).
    pub deviation_max: f64,
    pub force: ForceModel,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            sample_spacing: 0.5,
            static_offset_max: 2.5,
            jitter_max: 0.5,
            deviation_max: KinematicParams::default().max_deviation,
            force: ForceModel::default(),
        }
    }
}

impl PlantConfig {
    /// Worst-case distance between measured and true tip position.
    pub fn pos_error_max(&self) -> f64 {
        self.static_offset_max + self.jitter_max
    }

    pub fn noiseless(self) -> Self {
        Self { static_offset_max: 0.0, jitter_max: 0.0, deviation_max: 0.0, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub measured_pos: Point,
    pub force: f64,
    pub sample_index: u64,
}

/// One logged sensor sample together with the hidden true position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t_index: u64,
    pub true_pos: Point,
    pub measured_pos: Point,
    pub force: f64,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Index within the observation batch.
    pub index: usize,
    pub est_boundary_point: Point,
}

/// First observation whose force exceeds `threshold`.
pub fn detect_dr(obs: &[Observation], threshold: f64) -> Option<Detection> {
    obs.iter()
        .position(|o| o.force > threshold)
        .map(|index| Detection { index, est_boundary_point: obs[index].measured_pos })
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    true_map: RegionMap,
    pose: NeedlePose,
    trace: Trace,
    kin: KinematicParams,
    cfg: PlantConfig,
    rng: ChaCha8Rng,
    static_offset: Point,
    next_sample: u64,
    pullbacks: usize,
    log: Vec<SampleRecord>,
}

impl GroundTruth {
    pub fn new(true_map: RegionMap, insertion: NeedlePose, kin: KinematicParams, cfg: PlantConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mag = rng.gen::<f64>() * cfg.static_offset_max;
        let ang = rng.gen::<f64>() * TAU;
        Self {
            true_map,
            pose: insertion,
            trace: Trace::new(insertion),
            kin,
            cfg,
            rng,
            static_offset: Point::new(mag * ang.cos(), mag * ang.sin()),
            next_sample: 0,
            pullbacks: 0,
            log: Vec::new(),
        }
    }

    pub fn pose(&self) -> NeedlePose {
        self.pose
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn true_map(&self) -> &RegionMap {
        &self.true_map
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    pub fn pullbacks(&self) -> usize {
        self.pullbacks
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.log
    }

    pub fn into_parts(self) -> (Trace, Vec<SampleRecord>) {
        (self.trace, self.log)
    }

    /// Depth (mm) of `p` inside the nearest DR; CR interiors read deeper than
    /// the full DR width.
    pub fn dr_penetration(&self, p: Point) -> f64 {
        let d = self.true_map.crs().iter().map(|cr| cr.boundary_dist(p)).fold(f64::INFINITY, f64::min);
        (self.true_map.dr_width() - d).max(0.0)
    }

    pub fn force_at(&self, p: Point) -> f64 {
        self.cfg.force.baseline + self.cfg.force.dr_gain * self.dr_penetration(p)
    }

    fn sense(&mut self, p: Point, action: Action) -> Observation {
        let r = self.cfg.jitter_max * self.rng.gen::<f64>().sqrt();
        let a = self.rng.gen::<f64>() * TAU;
        let measured_pos = Point::new(
            p.x + self.static_offset.x + r * a.cos(),
            p.y + self.static_offset.y + r * a.sin(),
        );
        let o = Observation { measured_pos, force: self.force_at(p), sample_index: self.next_sample };
        self.log.push(SampleRecord { t_index: o.sample_index, true_pos: p, measured_pos, force: o.force, action });
        self.next_sample += 1;
        o
    }

    /// A single reading of the tip at rest.
    pub fn observe(&mut self) -> Observation {
        let p = self.pose.position();
        self.sense(p, Action::Push)
    }

    /// Execute a push or rotate and return the observations taken while the
    /// tip moved. A push that would leave the workspace is refused and leaves
    /// the plant untouched.
    pub fn step(&mut self, action: Action) -> Result<Vec<Observation>> {
        match action {
            Action::Pull => Err(Error::Usage("pullbacks go through GroundTruth::pullback".into())),
            Action::Rotate => {
                self.pose = apply_action(self.pose, Action::Rotate, &self.kin, 0.0)?;
                self.trace.record(self.pose, Action::Rotate, 0.0);
                Ok(Vec::new())
            }
            Action::Push => {
                let dev = if self.cfg.deviation_max > 0.0 {
                    self.rng.gen_range(-self.cfg.deviation_max..=self.cfg.deviation_max)
                } else {
                    0.0
                };
                let n = (self.kin.step_len / self.cfg.sample_spacing).ceil().max(1.0) as usize;
                let k = self.kin.curvature(self.pose.bevel);
                let points: Vec<Point> = (1..=n)
                    .map(|i| advance_arc(self.pose, self.kin.step_len * i as f64 / n as f64, k).position())
                    .collect();
                let ws = self.true_map.workspace();
                if let Some(p) = points.iter().find(|p| !ws.contains(**p)) {
                    return Err(Error::StepRejected(format!("push would leave the workspace at ({:.2}, {:.2})", p.x, p.y)));
                }
                let kin = KinematicParams { max_deviation: self.cfg.deviation_max, ..self.kin };
                let next = apply_action(self.pose, Action::Push, &kin, dev)?;
                let obs = points.into_iter().map(|p| self.sense(p, Action::Push)).collect();
                self.pose = next;
                self.trace.record(next, Action::Push, self.kin.step_len);
                Ok(obs)
            }
        }
    }

    /// Pull the needle back along its own trace. Returns whether the insertion
    /// pose was re-reached.
    pub fn pullback(&mut self, len: f64) -> Result<bool> {
        let pb = self.trace.invert_path(len)?;
        self.pose = pb.pose;
        self.trace = pb.trace;
        self.pullbacks += 1;
        Ok(pb.start_reached)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Bevel;
    use crate::regions::{Rect, Region};

    fn open_map(crs: Vec<Region>) -> RegionMap {
        RegionMap::new(Rect::default(), Region::target(Point::new(90.0, 50.0), 4.0), crs, 5.0, 1.0).unwrap()
    }

    fn straight() -> KinematicParams {
        KinematicParams { step_len: 2.0, radius: f64::INFINITY, max_deviation: 0.0 }
    }

    #[test]
    fn rotate_produces_no_observations() {
        let mut w = GroundTruth::new(open_map(vec![]), NeedlePose::new(10.0, 50.0, 0.0, Bevel::Plus), straight(), PlantConfig::default(), 1);
        let obs = w.step(Action::Rotate).unwrap();
        assert!(obs.is_empty());
        assert_eq!(w.pose().bevel, Bevel::Minus);
    }

    #[test]
    fn baseline_force_far_from_crs() {
        let cfg = PlantConfig::default().noiseless();
        let mut w = GroundTruth::new(open_map(vec![]), NeedlePose::new(10.0, 50.0, 0.0, Bevel::Plus), straight(), cfg, 1);
        let obs = w.step(Action::Push).unwrap();
        assert_eq!(obs.len(), 4);
        assert!(obs.iter().all(|o| o.force == cfg.force.baseline));
    }

    #[test]
    fn force_inside_dr_follows_penetration() {
        // CR at x = 24, r = 3: the DR starts at x = 16. Push from 13 to 17.
        let cr = Region::critical(Point::new(24.0, 50.0), 3.0);
        let cfg = PlantConfig::default().noiseless();
        let kin = KinematicParams { step_len: 4.0, ..straight() };
        let mut w = GroundTruth::new(open_map(vec![cr]), NeedlePose::new(13.0, 50.0, 0.0, Bevel::Plus), kin, cfg, 3);
        let obs = w.step(Action::Push).unwrap();
        let last = obs.last().unwrap();
        // analytic: the tip at x = 17 is 7 mm from the CR center, 4 mm from its
        // boundary, so 1 mm into the 5 mm band
        let depth = 5.0 - ((24.0f64 - 17.0).abs() - 3.0);
        assert!((depth - 1.0).abs() < 1e-12);
        assert!((last.force - (1.0 + 10.0 * depth)).abs() < 1e-9);
        assert_eq!(obs[0].force, 1.0);
    }

    #[test]
    fn detection_rules() {
        let mk = |f: &[f64]| -> Vec<Observation> {
            f.iter()
                .enumerate()
                .map(|(i, &force)| Observation { measured_pos: Point::new(i as f64, 0.0), force, sample_index: i as u64 })
                .collect()
        };
        assert!(detect_dr(&mk(&[1.0, 1.0, 1.0]), 5.0).is_none());
        let d = detect_dr(&mk(&[1.0, 1.0, 12.0]), 5.0).unwrap();
        assert_eq!(d.index, 2);
        assert_eq!(d.est_boundary_point, Point::new(2.0, 0.0));
    }

    #[test]
    fn start_and_full_pullback() {
        let cfg = PlantConfig::default().noiseless();
        let mut w = GroundTruth::new(open_map(vec![]), NeedlePose::new(10.0, 50.0, 0.0, Bevel::Plus), straight(), cfg, 1);
        for _ in 0..5 {
            w.step(Action::Push).unwrap();
        }
        assert!(!w.pullback(0.0).unwrap());
        assert!((w.pose().x - 20.0).abs() < 1e-12);
        assert!(!w.pullback(4.0).unwrap());
        assert!((w.pose().x - 16.0).abs() < 1e-12);
        assert!(w.pullback(6.0).unwrap());
        assert_eq!(w.pose(), NeedlePose::new(10.0, 50.0, 0.0, Bevel::Plus));
        assert_eq!(w.pullbacks(), 3);
    }

    #[test]
    fn leaving_workspace_is_refused() {
        let mut w = GroundTruth::new(open_map(vec![]), NeedlePose::new(99.0, 50.0, 0.0, Bevel::Plus), straight(), PlantConfig::default(), 1);
        let before = w.pose();
        assert!(matches!(w.step(Action::Push), Err(Error::StepRejected(_))));
        assert_eq!(w.pose(), before);
        assert_eq!(w.trace().len(), 1);
    }
}
