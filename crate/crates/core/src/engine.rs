//! The online strategy synthesis loop for one episode.
//!
//! The model starts with the a-priori known CRs, synthesizes a strategy,
//! picks a plan and executes it action by action on the plant. After every
//! action the observations are matched against the plan: a force spike adds
//! a discovered CR and triggers a pullback, a positional deviation snaps the
//! model to the observation. Whenever the current state is outside the
//! winning region the game is rebuilt; if that fails too the needle is pulled
//! back along its own trace. Re-reaching the insertion pose without a
//! strategy aborts the episode.

use std::collections::HashSet;
use std::fmt;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{build_game, extract_plans, solve, GameGraph, GameScope, GameState, StateId, Strategy, DEAD, GOAL};
use crate::harness::scenario::Scenario;
use crate::kinematics::{apply_action, quantize, Action, GridSpec, KinematicParams, NeedlePose, Trace};
use crate::matcher::{match_batch, MatchResult};
use crate::optimizer::{select_plan, CostWeights, Plan};
use crate::plant::{GroundTruth, Observation, PlantConfig, SampleRecord};
use crate::regions::{Cell, Point, Region, RegionMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub grid: GridSpec,
    pub kin: KinematicParams,
    pub scope: GameScope,
    pub plant: PlantConfig,
    /// Largest accepted distance between observed and predicted tip (mm).
    pub eps_match: f64,
    /// Force reading that signals a DR.
    pub force_threshold: f64,
    /// Arc length removed by one readjustment (mm).
    pub pullback_len: f64,
    pub max_plans: usize,
    pub weights: CostWeights,
    /// Clearance below which plans are penalized; `None` means twice the DR
    /// width.
    pub clearance_target: Option<f64>,
    /// Executed actions after which the episode times out.
    pub step_budget: usize,
    /// Wall-clock limit; `None` disables it.
    pub wall_timeout: Option<Duration>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let plant = PlantConfig::default();
        Self {
            grid: GridSpec::default(),
            kin: KinematicParams::default(),
            scope: GameScope { clearance: 1.5, ..GameScope::default() },
            plant,
            eps_match: 2.0,
            force_threshold: plant.force.threshold_at_depth(0.5),
            pullback_len: 6.0,
            max_plans: 32,
            weights: CostWeights::default(),
            clearance_target: None,
            step_budget: 400,
            wall_timeout: Some(Duration::from_secs(120)),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.pullback_len < self.kin.step_len {
            return Err(Error::Config(format!(
                "pullback length {} must be at least one push ({})",
                self.pullback_len, self.kin.step_len
            )));
        }
        if self.max_plans == 0 || self.step_budget == 0 {
            return Err(Error::Config("max_plans and step_budget must be positive".into()));
        }
        if !(self.eps_match > 0.0) || !(self.plant.sample_spacing > 0.0) {
            return Err(Error::Config("eps_match and sample spacing must be positive".into()));
        }
        Ok(())
    }

    /// Worst-case error of a tracker reading after removing the offset
    /// measured at insertion.
    pub fn calibrated_error(&self) -> f64 {
        2.0 * self.plant.jitter_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Aborted,
    Timeout,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Aborted => 1,
            Outcome::Timeout => 2,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeoutCause {
    WallClock,
    StepBudget,
}

/// One executed action with the strategy's verdict at the time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub state: GameState,
    pub action: Action,
    /// Allowed-action bits of the active strategy in `state`.
    pub allowed: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub timeout_cause: Option<TimeoutCause>,
    pub readjustments: usize,
    /// Number of pullbacks the plant executed.
    pub pullbacks: usize,
    pub synthesis_times: Vec<f64>,
    pub overall_time: f64,
    pub discovered: Vec<Region>,
    /// Batches the matcher rejected for positional disagreement.
    pub deviations: usize,
    /// Force spikes, including those explained by CRs already modeled.
    pub detections: usize,
    pub steps: usize,
    pub final_trace: Trace,
    pub samples: Vec<SampleRecord>,
    pub audit: Vec<AuditEntry>,
    /// Predicted poses of the plans offered by the first strategy.
    pub initial_plans: Vec<Vec<NeedlePose>>,
}

impl EpisodeResult {
    pub fn discovered_crs(&self) -> usize {
        self.discovered.len()
    }

    pub fn final_pose(&self) -> NeedlePose {
        self.final_trace.tip()
    }
}

impl fmt::Display for EpisodeResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.synthesis_times.len();
        let max = self.synthesis_times.iter().copied().fold(0.0, f64::max);
        let avg = if n > 0 { self.synthesis_times.iter().sum::<f64>() / n as f64 } else { 0.0 };
        write!(
            f,
            "outcome={} readjustments={} syntheses={} synth_avg={:.3}s synth_max={:.3}s overall={:.3}s discovered={} steps={}",
            self.outcome,
            self.readjustments,
            n,
            avg,
            max,
            self.overall_time,
            self.discovered_crs(),
            self.steps
        )
    }
}

/// Graph and strategy for one model snapshot.
pub struct Synthesis {
    pub graph: GameGraph,
    pub strategy: Option<Strategy>,
    pub seconds: f64,
}

/// Build and solve the game for `map` from `pose`. When the buffered game of
/// `cfg.scope` is lost, the game without extra clearance is tried as well.
pub fn synthesize(map: &RegionMap, cfg: &EngineConfig, pose: NeedlePose) -> Result<Synthesis> {
    let t = Instant::now();
    let mut graph = build_game(map, &cfg.grid, &cfg.kin, pose, &cfg.scope)?;
    let mut strategy = solve(&graph);
    if strategy.is_none() && cfg.scope.clearance > 0.0 {
        let bare = GameScope { clearance: 0.0, ..cfg.scope };
        graph = build_game(map, &cfg.grid, &cfg.kin, pose, &bare)?;
        strategy = solve(&graph);
    }
    Ok(Synthesis { graph, strategy, seconds: t.elapsed().as_secs_f64() })
}

struct Active {
    graph: GameGraph,
    strategy: Strategy,
    map_version: usize,
    /// Current abstract state. It advances along nominal successors and is
    /// re-anchored to the continuous model pose after every matched batch.
    at: StateId,
}

impl Active {
    fn nominal_successor(&self, s: StateId, a: Action) -> Option<StateId> {
        self.graph.moves(s).find(|(b, _)| *b == a).map(|(_, succ)| succ[0])
    }
}

struct PlanCursor {
    plan: Plan,
    next: usize,
    progress: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pulled {
    Moved,
    AtStart,
    /// Back at the insertion pose with knowledge that was already tried.
    Exhausted,
}

struct Episode<'a> {
    cfg: &'a EngineConfig,
    plant: GroundTruth,
    model: RegionMap,
    map_version: usize,
    model_pose: NeedlePose,
    model_trace: Trace,
    offset: Point,
    assumed_radius: f64,
    clearance_target: f64,
    readjustments: usize,
    synthesis_times: Vec<f64>,
    discovered: Vec<Region>,
    deviations: usize,
    detections: usize,
    steps: usize,
    audit: Vec<AuditEntry>,
    initial_plans: Vec<Vec<NeedlePose>>,
    seen_after_pullback: HashSet<(GameState, usize)>,
}

impl Episode<'_> {
    fn calibrate(&self, o: &Observation) -> Observation {
        Observation {
            measured_pos: Point::new(o.measured_pos.x - self.offset.x, o.measured_pos.y - self.offset.y),
            ..*o
        }
    }

    fn clamp_into_workspace(&self, pose: NeedlePose) -> NeedlePose {
        let ws = self.model.workspace();
        let p = Point::new(pose.x.clamp(ws.x_min, ws.x_max), pose.y.clamp(ws.y_min, ws.y_max));
        pose.with_position(p)
    }

    fn snap_model_to(&mut self, pose: NeedlePose) {
        self.model_pose = self.clamp_into_workspace(pose);
        self.model_trace.correct_tip(self.model_pose);
    }

    fn quantized(&self) -> Result<GameState> {
        quantize(self.model_pose, &self.cfg.grid, &self.model.workspace())
    }

    fn synthesize(&mut self) -> Result<Option<Active>> {
        let syn = synthesize(&self.model, self.cfg, self.model_pose)?;
        debug!(
            "synthesis: {} states, winning={} in {:.3}s",
            syn.graph.len(),
            syn.strategy.is_some(),
            syn.seconds
        );
        self.synthesis_times.push(syn.seconds);
        let at = syn.graph.start();
        Ok(syn.strategy.map(|strategy| Active { graph: syn.graph, strategy, map_version: self.map_version, at }))
    }

    fn extract(&mut self, active: &Active) -> Result<PlanCursor> {
        let paths = extract_plans(&active.strategy, &active.graph, active.at, self.cfg.max_plans)?;
        let plans = paths
            .iter()
            .map(|p| Plan::from_path(p, self.model_pose, &self.cfg.kin, &self.model))
            .collect::<Result<Vec<_>>>()?;
        if self.initial_plans.is_empty() {
            self.initial_plans = plans.iter().map(|p| p.poses.clone()).collect();
        }
        let best = select_plan(&plans, &self.cfg.weights, self.clearance_target)?;
        let plan = plans.into_iter().nth(best).expect("selected index");
        Ok(PlanCursor { plan, next: 0, progress: 0.0 })
    }

    /// Pull back plant and model together. Pullbacks repeat while they land
    /// on a (state, knowledge) pair already seen after an earlier pullback.
    fn readjust(&mut self) -> Result<Pulled> {
        loop {
            if self.model_trace.len() > 1 {
                self.readjustments += 1;
                let plant_at_start = self.plant.pullback(self.cfg.pullback_len)?;
                let pb = self.model_trace.invert_path(self.cfg.pullback_len)?;
                debug_assert_eq!(pb.trace.len(), self.plant.trace().len());
                debug_assert_eq!(pb.start_reached, plant_at_start);
                self.model_trace = pb.trace;
                self.model_pose = pb.pose;
            }
            let key = (self.quantized()?, self.model.crs().len());
            let fresh = self.seen_after_pullback.insert(key);
            if self.model_trace.len() == 1 {
                return Ok(if fresh { Pulled::AtStart } else { Pulled::Exhausted });
            }
            if fresh {
                return Ok(Pulled::Moved);
            }
            debug!("pullback revisited {key:?} without new knowledge, pulling further");
        }
    }

    fn mark_swept(&mut self, obs: &[Observation]) {
        let cells: Vec<Cell> = obs.iter().filter_map(|o| self.model.cell_of(o.measured_pos).ok()).collect();
        if !cells.is_empty() {
            self.model = self.model.mark_safe(&cells);
        }
    }

    /// Re-anchor the abstract state on the continuous model pose. The game
    /// only holds states reachable from cell-center representatives, so the
    /// pose's own cell may be missing; the winning state with the nearest
    /// representative among the neighbouring cells and sectors is taken
    /// instead. Returns false when there is none.
    fn reanchor(&self, active: &mut Active) -> Result<bool> {
        let p = self.model_pose.position();
        if self.model.is_blocked(p) {
            return Ok(false);
        }
        let q = self.quantized()?;
        let h = self.cfg.grid.headings as i32;
        let mut best: Option<(f64, StateId)> = None;
        for dy in -1..=1 {
            for dx in -1..=1 {
                for dh in -1..=1 {
                    let (cx, cy) = (q.cx as i32 + dx, q.cy as i32 + dy);
                    if cx < 0 || cy < 0 {
                        continue;
                    }
                    let heading = (q.heading as i32 + dh).rem_euclid(h) as u16;
                    let s = GameState { cx: cx as u16, cy: cy as u16, heading, ..q };
                    let Some(sid) = active.graph.state_id(&s) else { continue };
                    if !active.strategy.is_winning(sid) {
                        continue;
                    }
                    let rep = active.graph.representative(sid).expect("labeled state");
                    // heading mismatch weighs like the drift it causes over one push
                    let d = rep.position().dist(p) + (dh.abs() as f64) * self.cfg.grid.heading_quantum() * self.cfg.kin.step_len;
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, sid));
                    }
                }
            }
        }
        match best {
            Some((_, sid)) => {
                active.at = sid;
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

/// Run one closed-loop episode on `scenario` with plant randomness seeded by
/// `seed`.
pub fn run_episode(scenario: &Scenario, cfg: &EngineConfig, seed: u64) -> Result<EpisodeResult> {
    cfg.validate()?;
    let true_map = scenario.true_map(cfg.grid.cell)?;
    if !true_map.validate_margins(cfg.plant.sample_spacing, cfg.plant.pos_error_max()) {
        return Err(Error::Config(format!(
            "DR width {} must exceed sample spacing {} plus sensor error {}",
            true_map.dr_width(),
            cfg.plant.sample_spacing,
            cfg.plant.pos_error_max()
        )));
    }
    // The model aims for a target shrunk by the calibrated tracking error, so
    // that a model pose inside it implies a true pose inside the real target.
    let model = scenario.known_map(cfg.grid.cell, cfg.calibrated_error())?;
    let started = Instant::now();
    let start = scenario.start;
    let mut plant = GroundTruth::new(true_map.clone(), start, cfg.kin, cfg.plant, seed);
    let cal = plant.observe();
    let offset = Point::new(cal.measured_pos.x - start.x, cal.measured_pos.y - start.y);

    let mut ep = Episode {
        cfg,
        plant,
        model,
        map_version: 0,
        model_pose: start,
        model_trace: Trace::new(start),
        offset,
        assumed_radius: scenario.assumed_cr_radius,
        clearance_target: cfg.clearance_target.unwrap_or(2.0 * true_map.dr_width()),
        readjustments: 0,
        synthesis_times: Vec::new(),
        discovered: Vec::new(),
        deviations: 0,
        detections: 0,
        steps: 0,
        audit: Vec::new(),
        initial_plans: Vec::new(),
        seen_after_pullback: HashSet::new(),
    };

    let mut active: Option<Active> = None;
    let mut cursor: Option<PlanCursor> = None;
    let mut timeout_cause = None;

    let outcome = loop {
        if cfg.wall_timeout.is_some_and(|limit| started.elapsed() > limit) {
            warn!("episode seed {seed}: wall-clock limit reached after {} steps", ep.steps);
            timeout_cause = Some(TimeoutCause::WallClock);
            break Outcome::Timeout;
        }
        if ep.steps >= cfg.step_budget {
            warn!("episode seed {seed}: step budget {} exhausted", cfg.step_budget);
            timeout_cause = Some(TimeoutCause::StepBudget);
            break Outcome::Timeout;
        }

        if active.as_ref().is_some_and(|a| a.map_version != ep.map_version) {
            active = None;
        }
        if active.is_none() {
            cursor = None;
            active = ep.synthesize()?;
            if active.as_ref().is_some_and(|a| a.at == DEAD) {
                active = None;
            }
            if active.is_none() {
                if ep.model_trace.len() == 1 {
                    info!("episode seed {seed}: no strategy at the insertion pose");
                    break Outcome::Aborted;
                }
                if ep.readjust()? == Pulled::Exhausted {
                    info!("episode seed {seed}: back at insertion with nothing new to try");
                    break Outcome::Aborted;
                }
                continue;
            }
        }
        let a = active.as_mut().expect("active strategy");

        if a.at == GOAL {
            if true_map.tr().contains(ep.plant.pose().position()) {
                break Outcome::Success;
            }
            // the plant disagrees: trust a fresh calibrated reading instead
            let o = ep.plant.observe();
            let seen = ep.calibrate(&o).measured_pos;
            debug!("target not confirmed, re-anchoring at ({:.2}, {:.2})", seen.x, seen.y);
            ep.snap_model_to(ep.model_pose.with_position(seen));
            active = None;
            continue;
        }

        let sid = a.at;
        let needs_plan = match &cursor {
            None => true,
            Some(c) => c.next >= c.plan.actions.len() || !a.strategy.allows(sid, c.plan.actions[c.next]),
        };
        if needs_plan {
            cursor = Some(ep.extract(a)?);
        }
        let c = cursor.as_mut().expect("plan");
        let action = c.plan.actions[c.next];
        let state = a.graph.label(sid).expect("inner states carry labels");
        ep.audit.push(AuditEntry { state, action, allowed: a.strategy.allowed(sid) });

        let obs = match ep.plant.step(action) {
            Ok(obs) => obs,
            Err(Error::StepRejected(msg)) => {
                debug!("episode seed {seed}: {msg}");
                active = None;
                if ep.readjust()? == Pulled::Exhausted {
                    break Outcome::Aborted;
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        ep.steps += 1;
        let advance = if action == Action::Push { cfg.kin.step_len } else { 0.0 };
        ep.model_pose = apply_action(ep.model_pose, action, &cfg.kin, 0.0)?;
        ep.model_trace.record(ep.model_pose, action, advance);
        a.at = a.nominal_successor(sid, action).expect("allowed action is a move of the state");
        c.next += 1;
        c.progress += advance;

        let calibrated: Vec<Observation> = obs.iter().map(|o| ep.calibrate(o)).collect();
        ep.mark_swept(&calibrated);
        match match_batch(&calibrated, &c.plan, c.progress, cfg.eps_match, cfg.force_threshold) {
            MatchResult::Ok => {
                // follow the continuous pose where the strategy covers it, so
                // cell rounding does not pile up along nominal successors
                let nominal = a.at;
                if ep.reanchor(a)? {
                    if a.at != nominal {
                        cursor = None;
                    }
                } else {
                    a.at = nominal;
                }
            }
            MatchResult::Deviation { observed_pose, distance_mm, .. } => {
                debug!("deviation of {distance_mm:.2} mm, snapping model");
                ep.deviations += 1;
                ep.snap_model_to(observed_pose);
                cursor = None;
                if !ep.reanchor(a)? {
                    active = None;
                }
            }
            MatchResult::DetectionEvent { est_boundary_point } => {
                debug!("force spike near ({:.2}, {:.2})", est_boundary_point.x, est_boundary_point.y);
                ep.detections += 1;
                // a spike inside a DR the model already has is no news
                if !ep.model.is_blocked_with(est_boundary_point, cfg.calibrated_error()) {
                    ep.model = ep.model.add_discovered_cr(est_boundary_point, ep.assumed_radius)?;
                    ep.discovered.push(Region::critical(est_boundary_point, ep.assumed_radius));
                    ep.map_version += 1;
                }
                active = None;
                if ep.readjust()? == Pulled::Exhausted {
                    break Outcome::Aborted;
                }
            }
        }
    };

    let overall_time = started.elapsed().as_secs_f64();
    let pullbacks = ep.plant.pullbacks();
    let (final_trace, samples) = ep.plant.into_parts();
    Ok(EpisodeResult {
        outcome,
        timeout_cause,
        readjustments: ep.readjustments,
        pullbacks,
        synthesis_times: ep.synthesis_times,
        overall_time,
        discovered: ep.discovered,
        deviations: ep.deviations,
        detections: ep.detections,
        steps: ep.steps,
        final_trace,
        samples,
        audit: ep.audit,
        initial_plans: ep.initial_plans,
    })
}

/// Per-sample log of an episode: hidden true position, tracker reading and
/// force.
pub fn write_trace_csv(result: &EpisodeResult, out: &mut dyn std::io::Write) -> std::io::Result<()> {
    writeln!(out, "t_index,action,true_x,true_y,measured_x,measured_y,force")?;
    for s in &result.samples {
        writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
            s.t_index, s.action, s.true_pos.x, s.true_pos.y, s.measured_pos.x, s.measured_pos.y, s.force
        )?;
    }
    Ok(())
}
