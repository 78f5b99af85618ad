//! Discrete two-player reachability game and its solver.
//!
//! The controller picks an [`Action`] in a pose state; the environment then
//! picks one of the action's successors (a bounded heading deviation for a
//! push). Two sink states close the arena: [`GOAL`] (the target region was
//! entered) and [`DEAD`] (a CR or DR of the model was swept, or the needle
//! left the modeled scope).
//!
//! Graphs are stored in compressed form: per state a contiguous run of moves,
//! per move a contiguous run of successor ids. The first successor of a move
//! is its nominal (zero deviation) outcome.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{advance_arc, quantize, Action, Bevel, GridSpec, KinematicParams, NeedlePose};
use crate::regions::{Point, Rect, RegionMap};

pub type StateId = u32;

pub const GOAL: StateId = 0;
pub const DEAD: StateId = 1;

/// Rank of states outside the winning region.
pub const LOSING: u32 = u32::MAX;

/// Quantized needle pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GameState {
    pub cx: u16,
    pub cy: u16,
    pub heading: u16,
    pub bevel: Bevel,
}

/// Collision-check sampling along a push arc (mm).
pub const SWEEP_SPACING: f64 = 0.5;

/// Rectangular block of cells the game is built over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    cx0: u16,
    cy0: u16,
    nx: u16,
    ny: u16,
}

#[derive(Debug, Clone)]
struct NeedleContext {
    grid: GridSpec,
    workspace: Rect,
    window: Window,
    dense: Vec<StateId>,
}

impl NeedleContext {
    fn slot(&self, s: &GameState) -> Option<usize> {
        let w = &self.window;
        if s.cx < w.cx0 || s.cy < w.cy0 || s.cx - w.cx0 >= w.nx || s.cy - w.cy0 >= w.ny {
            return None;
        }
        let cell = (s.cy - w.cy0) as usize * w.nx as usize + (s.cx - w.cx0) as usize;
        let b = match s.bevel {
            Bevel::Plus => 0,
            Bevel::Minus => 1,
        };
        Some((cell * self.grid.headings as usize + s.heading as usize) * 2 + b)
    }

    fn representative(&self, s: &GameState) -> NeedlePose {
        NeedlePose::new(
            self.workspace.x_min + (s.cx as f64 + 0.5) * self.grid.cell,
            self.workspace.y_min + (s.cy as f64 + 0.5) * self.grid.cell,
            s.heading as f64 * self.grid.heading_quantum(),
            s.bevel,
        )
    }
}

/// Options for building the needle game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameScope {
    /// The game covers the bounding box of the start pose and the target
    /// disc, grown by this margin (mm) and clipped to the workspace. `None`
    /// covers the whole workspace.
    pub margin: Option<f64>,
    /// Extra distance (mm) push sweeps must keep from every DR.
    #[serde(default)]
    pub clearance: f64,
}

impl Default for GameScope {
    fn default() -> Self {
        Self { margin: Some(20.0), clearance: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct GameGraph {
    labels: Vec<Option<GameState>>,
    move_start: Vec<u32>,
    move_action: Vec<Action>,
    move_owner: Vec<StateId>,
    succ_start: Vec<u32>,
    succ: Vec<StateId>,
    start: StateId,
    needle: Option<NeedleContext>,
}

impl GameGraph {
    fn empty(start_hint: StateId) -> Self {
        Self {
            labels: vec![None, None],
            move_start: vec![0, 0, 0],
            move_action: Vec::new(),
            move_owner: Vec::new(),
            succ_start: vec![0],
            succ: Vec::new(),
            start: start_hint,
            needle: None,
        }
    }

    /// Build an arbitrary game from an adjacency description. Index 0 is GOAL
    /// and index 1 is DEAD; their move lists must be empty. Duplicate
    /// successors within a move are merged.
    pub fn from_moves(start: StateId, moves: Vec<Vec<(Action, Vec<StateId>)>>) -> Result<Self> {
        let n = moves.len();
        if n < 2 || start as usize >= n {
            return Err(Error::Construction("need GOAL, DEAD and a valid start".into()));
        }
        if !moves[GOAL as usize].is_empty() || !moves[DEAD as usize].is_empty() {
            return Err(Error::Construction("sink states cannot have moves".into()));
        }
        let mut g = Self::empty(start);
        g.labels = vec![None; n];
        g.move_start = vec![0];
        for (s, mut ms) in moves.into_iter().enumerate() {
            ms.sort_by_key(|(a, _)| *a);
            for (a, succs) in ms {
                if succs.is_empty() || succs.iter().any(|&t| t as usize >= n) {
                    return Err(Error::Construction(format!("bad successor list at state {s}")));
                }
                g.push_move(s as StateId, a, &succs);
            }
            g.move_start.push(g.move_action.len() as u32);
        }
        Ok(g)
    }

    fn push_move(&mut self, owner: StateId, action: Action, succs: &[StateId]) {
        self.move_action.push(action);
        self.move_owner.push(owner);
        let first = self.succ.len();
        for &t in succs {
            if !self.succ[first..].contains(&t) {
                self.succ.push(t);
            }
        }
        self.succ_start.push(self.succ.len() as u32);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    /// Quantized pose of a state; `None` for the sinks and for abstract games.
    pub fn label(&self, s: StateId) -> Option<GameState> {
        self.labels[s as usize]
    }

    pub fn moves(&self, s: StateId) -> impl Iterator<Item = (Action, &[StateId])> + '_ {
        let lo = self.move_start[s as usize] as usize;
        let hi = self.move_start[s as usize + 1] as usize;
        (lo..hi).map(move |m| (self.move_action[m], self.move_succs(m)))
    }

    fn move_succs(&self, m: usize) -> &[StateId] {
        &self.succ[self.succ_start[m] as usize..self.succ_start[m + 1] as usize]
    }

    pub fn move_count(&self) -> usize {
        self.move_action.len()
    }

    /// Id of a quantized pose, if the state was explored.
    pub fn state_id(&self, s: &GameState) -> Option<StateId> {
        let ctx = self.needle.as_ref()?;
        let slot = ctx.slot(s)?;
        let id = ctx.dense[slot];
        (id != StateId::MAX).then_some(id)
    }

    /// Cell-center pose of a labeled state.
    pub fn representative(&self, s: StateId) -> Option<NeedlePose> {
        let ctx = self.needle.as_ref()?;
        Some(ctx.representative(self.labels[s as usize].as_ref()?))
    }

    /// Write a line-oriented dump of the graph, annotated with the strategy
    /// when given.
    pub fn dump(&self, strategy: Option<&Strategy>, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "# states {} moves {} start {}", self.len(), self.move_count(), self.start)?;
        for s in 0..self.len() as StateId {
            let name = match (s, self.label(s)) {
                (GOAL, _) => "GOAL".to_string(),
                (DEAD, _) => "DEAD".to_string(),
                (_, Some(l)) => format!("{} {} {} {:?}", l.cx, l.cy, l.heading, l.bevel),
                (_, None) => "-".to_string(),
            };
            write!(out, "state {s} {name}")?;
            if let Some(st) = strategy {
                let r = st.rank(s);
                if r == LOSING {
                    write!(out, " losing")?;
                } else {
                    write!(out, " rank={r} allowed={}", action_list(st.allowed(s)))?;
                }
            }
            writeln!(out)?;
            for (a, succs) in self.moves(s) {
                let list: Vec<String> = succs.iter().map(|t| t.to_string()).collect();
                writeln!(out, "  {a} -> {}", list.join(","))?;
            }
        }
        Ok(())
    }
}

fn action_list(bits: u8) -> String {
    [Action::Push, Action::Rotate, Action::Pull]
        .iter()
        .filter(|a| bits & a.bit() != 0)
        .map(|a| a.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Precomputed push geometry for one (heading, bevel) pair, relative to the
/// start position.
struct PushTemplate {
    sweep: Vec<Point>,
    end: Point,
    end_theta: f64,
}

/// Build the needle game for `map` from `start`.
///
/// Only states reachable from the start are materialized. A push whose arc
/// sweep touches a CR or DR of `map`, or leaves the workspace or the modeled
/// scope, leads to DEAD for every deviation; a push ending in the TR leads to
/// GOAL.
pub fn build_game(
    map: &RegionMap,
    grid: &GridSpec,
    kin: &KinematicParams,
    start: NeedlePose,
    scope: &GameScope,
) -> Result<GameGraph> {
    let ws = map.workspace();
    if !(ws.width() > 0.0 && ws.height() > 0.0) {
        return Err(Error::Construction("empty workspace".into()));
    }
    let tr = map.tr();
    if !ws.contains(tr.center) {
        return Err(Error::Construction("target center outside the workspace".into()));
    }
    if grid.headings < 2 || !(grid.cell > 0.0) {
        return Err(Error::Construction("grid needs a positive cell and at least two headings".into()));
    }
    let start_state = quantize(start, grid, &ws)?;

    let nx_all = (ws.width() / grid.cell).ceil() as i64;
    let ny_all = (ws.height() / grid.cell).ceil() as i64;
    if nx_all > u16::MAX as i64 || ny_all > u16::MAX as i64 {
        return Err(Error::Construction("grid too large".into()));
    }
    let window = match scope.margin {
        None => Window { cx0: 0, cy0: 0, nx: nx_all as u16, ny: ny_all as u16 },
        Some(m) => {
            let sp = start.position();
            let lo_x = sp.x.min(tr.center.x - tr.radius) - m;
            let hi_x = sp.x.max(tr.center.x + tr.radius) + m;
            let lo_y = sp.y.min(tr.center.y - tr.radius) - m;
            let hi_y = sp.y.max(tr.center.y + tr.radius) + m;
            let c = |v: f64, o: f64, n: i64| (((v - o) / grid.cell).floor() as i64).clamp(0, n - 1);
            let (x0, x1) = (c(lo_x, ws.x_min, nx_all), c(hi_x, ws.x_min, nx_all));
            let (y0, y1) = (c(lo_y, ws.y_min, ny_all), c(hi_y, ws.y_min, ny_all));
            Window { cx0: x0 as u16, cy0: y0 as u16, nx: (x1 - x0 + 1) as u16, ny: (y1 - y0 + 1) as u16 }
        }
    };
    let h = grid.headings as usize;
    let dense_len = window.nx as usize * window.ny as usize * h * 2;
    let mut ctx = NeedleContext { grid: *grid, workspace: ws, window, dense: vec![StateId::MAX; dense_len] };

    // Push geometry only depends on heading and bevel.
    let q = grid.heading_quantum();
    let templates: Vec<PushTemplate> = (0..h * 2)
        .map(|i| {
            let bevel = if i % 2 == 0 { Bevel::Plus } else { Bevel::Minus };
            let pose = NeedlePose::new(0.0, 0.0, (i / 2) as f64 * q, bevel);
            let sweep = crate::kinematics::arc_points(pose, kin, SWEEP_SPACING);
            let end = advance_arc(pose, kin.step_len, kin.curvature(bevel));
            PushTemplate { sweep, end: end.position(), end_theta: end.theta }
        })
        .collect();

    // Cells whose neighbourhood can be swept into a CR/DR by one push.
    let reach = kin.step_len + grid.cell * std::f64::consts::SQRT_2 + scope.clearance;
    let near: Vec<bool> = (0..window.ny as usize)
        .flat_map(|y| (0..window.nx as usize).map(move |x| (x, y)))
        .map(|(x, y)| {
            let c = Point::new(
                ws.x_min + (window.cx0 as f64 + x as f64 + 0.5) * grid.cell,
                ws.y_min + (window.cy0 as f64 + y as f64 + 0.5) * grid.cell,
            );
            map.crs().iter().any(|cr| cr.boundary_dist(c) <= map.dr_width() + reach)
        })
        .collect();
    let win_lo = Point::new(
        ws.x_min + window.cx0 as f64 * grid.cell,
        ws.y_min + window.cy0 as f64 * grid.cell,
    );
    let win_hi = Point::new(
        (win_lo.x + window.nx as f64 * grid.cell).min(ws.x_max),
        (win_lo.y + window.ny as f64 * grid.cell).min(ws.y_max),
    );
    let scope_rect = Rect::new(win_lo.x, win_lo.y, win_hi.x, win_hi.y);

    let mut g = GameGraph::empty(DEAD);
    g.labels = vec![None, None];
    g.move_start = vec![0, 0, 0];

    let intern = |g: &mut GameGraph, ctx: &mut NeedleContext, s: GameState| -> StateId {
        match ctx.slot(&s) {
            None => DEAD,
            Some(slot) => {
                if ctx.dense[slot] == StateId::MAX {
                    ctx.dense[slot] = g.labels.len() as StateId;
                    g.labels.push(Some(s));
                }
                ctx.dense[slot]
            }
        }
    };

    let sp = start.position();
    g.start = if map.is_blocked(sp) {
        DEAD
    } else if tr.contains(sp) {
        GOAL
    } else {
        intern(&mut g, &mut ctx, start_state)
    };

    let mut next = 2usize;
    while next < g.labels.len() {
        let s = g.labels[next].expect("pose state");
        let id = next as StateId;
        let rep = ctx.representative(&s).position();
        let t = &templates[s.heading as usize * 2 + usize::from(s.bevel == Bevel::Minus)];
        let local = (s.cy - window.cy0) as usize * window.nx as usize + (s.cx - window.cx0) as usize;
        let check_obstacles = near[local];
        let blocked = t.sweep.iter().any(|o| {
            let p = Point::new(rep.x + o.x, rep.y + o.y);
            !scope_rect.contains(p) || (check_obstacles && map.is_blocked_with(p, scope.clearance))
        });
        let push: [StateId; 3] = if blocked {
            [DEAD; 3]
        } else {
            let end = Point::new(rep.x + t.end.x, rep.y + t.end.y);
            if tr.contains(end) {
                [GOAL; 3]
            } else {
                let mut out = [DEAD; 3];
                // nominal first, then -1 and +1 sectors
                for (k, dev) in [0.0, -1.0, 1.0].into_iter().enumerate() {
                    let pose = NeedlePose::new(end.x, end.y, t.end_theta + dev * kin.max_deviation, s.bevel);
                    out[k] = match quantize(pose, grid, &ws) {
                        Ok(gs) => intern(&mut g, &mut ctx, gs),
                        Err(_) => DEAD,
                    };
                }
                out
            }
        };
        g.push_move(id, Action::Push, &push);
        let flipped = GameState { bevel: s.bevel.flipped(), ..s };
        let rot = intern(&mut g, &mut ctx, flipped);
        g.push_move(id, Action::Rotate, &[rot]);
        g.move_start.push(g.move_action.len() as u32);
        next += 1;
    }
    g.needle = Some(ctx);
    Ok(g)
}

/// Result of the attractor computation: the winning region with attractor
/// ranks, and the permissive progress strategy on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Strategy {
    rank: Vec<u32>,
    allowed: Vec<u8>,
    start: StateId,
    iterations: usize,
}

impl Strategy {
    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn is_winning(&self, s: StateId) -> bool {
        self.rank[s as usize] != LOSING
    }

    pub fn start_is_winning(&self) -> bool {
        self.is_winning(self.start)
    }

    /// Attractor layer of `s`: the number of moves within which the
    /// controller can force GOAL. [`LOSING`] outside the winning region.
    pub fn rank(&self, s: StateId) -> u32 {
        self.rank[s as usize]
    }

    /// Bit set of allowed actions (see [`Action::bit`]).
    pub fn allowed(&self, s: StateId) -> u8 {
        self.allowed[s as usize]
    }

    pub fn allows(&self, s: StateId, a: Action) -> bool {
        self.allowed[s as usize] & a.bit() != 0
    }

    pub fn winning_region(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.rank.len() as StateId).filter(|&s| self.is_winning(s))
    }

    pub fn winning_count(&self) -> usize {
        self.rank.iter().filter(|&&r| r != LOSING).count()
    }

    /// Number of attractor layers added before the fixpoint.
    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Classical attractor fixpoint for the controller towards GOAL.
///
/// Layer `i + 1` contains every state with a move whose successors all lie in
/// layers `<= i`. A move is allowed in `s` iff all its successors have a rank
/// strictly below `rank(s)`, which guarantees progress along every path that
/// follows the strategy.
pub fn attractor(g: &GameGraph) -> Strategy {
    let n = g.len();
    let m = g.move_count();

    // Reverse adjacency: successor -> moves that can reach it.
    let mut pred_start = vec![0u32; n + 1];
    for &t in &g.succ {
        pred_start[t as usize + 1] += 1;
    }
    for i in 0..n {
        pred_start[i + 1] += pred_start[i];
    }
    let mut fill = pred_start.clone();
    let mut preds = vec![0u32; g.succ.len()];
    for mv in 0..m {
        for &t in g.move_succs(mv) {
            preds[fill[t as usize] as usize] = mv as u32;
            fill[t as usize] += 1;
        }
    }

    let mut remaining: Vec<u32> = (0..m).map(|mv| g.move_succs(mv).len() as u32).collect();
    let mut rank = vec![LOSING; n];
    rank[GOAL as usize] = 0;
    let mut layer = vec![GOAL];
    let mut iterations = 0;
    while !layer.is_empty() {
        let mut next = Vec::new();
        for &t in &layer {
            for &mv in &preds[pred_start[t as usize] as usize..pred_start[t as usize + 1] as usize] {
                let r = &mut remaining[mv as usize];
                *r -= 1;
                if *r == 0 {
                    let owner = g.move_owner[mv as usize];
                    if rank[owner as usize] == LOSING {
                        rank[owner as usize] = iterations as u32 + 1;
                        next.push(owner);
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        iterations += 1;
        layer = next;
    }

    let mut allowed = vec![0u8; n];
    for s in 0..n {
        let r = rank[s];
        if r == LOSING || s == GOAL as usize {
            continue;
        }
        for (a, succs) in g.moves(s as StateId) {
            if succs.iter().all(|&t| rank[t as usize] < r) {
                allowed[s] |= a.bit();
            }
        }
    }
    Strategy { rank, allowed, start: g.start(), iterations }
}

/// Solve the game; `None` when the controller cannot force GOAL from the
/// start state.
pub fn solve(g: &GameGraph) -> Option<Strategy> {
    let st = attractor(g);
    st.start_is_winning().then_some(st)
}

/// Action sequence through the game under nominal environment behavior.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionPath {
    pub actions: Vec<Action>,
    /// Visited states, starting with the start state and ending in GOAL.
    pub states: Vec<StateId>,
}

/// Enumerate up to `max_plans` nominal plans from `start` to GOAL following
/// allowed actions, depth first with pushes explored before rotations.
pub fn extract_plans(st: &Strategy, g: &GameGraph, start: StateId, max_plans: usize) -> Result<Vec<ActionPath>> {
    if !st.is_winning(start) {
        return Err(Error::Usage(format!("state {start} is not in the winning region")));
    }
    let mut plans = Vec::new();
    if start == GOAL {
        plans.push(ActionPath { actions: vec![], states: vec![GOAL] });
        return Ok(plans);
    }
    // Each frame: state, index of the next move to try.
    let mut stack: Vec<(StateId, usize)> = vec![(start, 0)];
    let mut actions: Vec<Action> = Vec::new();
    while let Some(&(s, next_move)) = stack.last() {
        if plans.len() >= max_plans {
            break;
        }
        if s == GOAL {
            plans.push(ActionPath { actions: actions.clone(), states: stack.iter().map(|f| f.0).collect() });
            stack.pop();
            actions.pop();
            continue;
        }
        let candidate = g.moves(s).enumerate().skip(next_move).find(|(_, (a, _))| st.allows(s, *a));
        match candidate {
            Some((i, (a, succs))) => {
                if let Some(top) = stack.last_mut() {
                    top.1 = i + 1;
                }
                actions.push(a);
                stack.push((succs[0], 0));
            }
            None => {
                stack.pop();
                actions.pop();
            }
        }
    }
    Ok(plans)
}

/// Independent check that following `st` from its start state reaches GOAL
/// against every environment choice: no reachable DEAD, no reachable state
/// without allowed actions, and no cycle in the strategy-closed graph.
pub fn check_winning(st: &Strategy, g: &GameGraph) -> bool {
    if st.rank.len() != g.len() {
        return false;
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let mut mark = vec![Mark::New; g.len()];
    let expand = |s: StateId| -> Vec<StateId> {
        g.moves(s)
            .filter(|(a, _)| st.allows(s, *a))
            .flat_map(|(_, succs)| succs.iter().copied())
            .collect()
    };
    let mut stack: Vec<(StateId, Vec<StateId>)> = Vec::new();
    let root = st.start();
    let visit = |s: StateId| -> std::result::Result<Option<Vec<StateId>>, ()> {
        if s == GOAL {
            return Ok(None);
        }
        if s == DEAD {
            return Err(());
        }
        let succ = expand(s);
        if succ.is_empty() {
            return Err(());
        }
        Ok(Some(succ))
    };
    match visit(root) {
        Err(()) => return false,
        Ok(None) => return true,
        Ok(Some(succ)) => {
            mark[root as usize] = Mark::Open;
            stack.push((root, succ));
        }
    }
    while let Some((s, pending)) = stack.last_mut() {
        match pending.pop() {
            None => {
                mark[*s as usize] = Mark::Done;
                stack.pop();
            }
            Some(t) => match mark[t as usize] {
                Mark::Done => {}
                Mark::Open => return false,
                Mark::New => match visit(t) {
                    Err(()) => return false,
                    Ok(None) => mark[t as usize] = Mark::Done,
                    Ok(Some(succ)) => {
                        mark[t as usize] = Mark::Open;
                        stack.push((t, succ));
                    }
                },
            },
        }
    }
    true
}

/// Breadth-first reachability from the start over all moves, ignoring who
/// chooses. Used to tell "blocked for everyone" apart from "lost to the
/// environment".
pub fn reachable_from_start(g: &GameGraph) -> Vec<bool> {
    let mut seen = vec![false; g.len()];
    let mut q = VecDeque::from([g.start()]);
    seen[g.start() as usize] = true;
    while let Some(s) = q.pop_front() {
        for (_, succs) in g.moves(s) {
            for &t in succs {
                if !seen[t as usize] {
                    seen[t as usize] = true;
                    q.push_back(t);
                }
            }
        }
    }
    seen
}
