//! Scenarios: a workspace with CRs and a TR placed around a random reference
//! needle path, plus which CRs the controller knows up front.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::game::{build_game, solve, GameScope};
use crate::kinematics::{advance_arc, apply_action, Action, Bevel, NeedlePose};
use crate::optimizer::CostWeights;
use crate::regions::{Point, Rect, Region, RegionMap};

pub const N_CRS: [usize; 6] = [0, 1, 2, 5, 10, 20];
pub const CR_SIZES: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 10.0];
pub const TR_DISTS: [f64; 5] = [10.0, 20.0, 30.0, 40.0, 50.0];
pub const KNOWN_PCTS: [f64; 6] = [0.0, 20.0, 40.0, 60.0, 80.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub n_crs: usize,
    /// True CR radius (mm).
    pub cr_size: f64,
    /// Radius assumed for CRs discovered online (mm).
    pub assumed_cr_size: f64,
    /// Arc length from the insertion point to the TR center along the
    /// reference path (mm).
    pub tr_dist: f64,
    /// Percentage of CRs known before insertion.
    pub known_pct: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self { n_crs: 5, cr_size: 3.0, assumed_cr_size: 3.0, tr_dist: 30.0, known_pct: 0.0 }
    }
}

impl ScenarioParams {
    /// Check every value against the experiment's value sets.
    pub fn validate(&self) -> Result<()> {
        let ok = N_CRS.contains(&self.n_crs)
            && CR_SIZES.contains(&self.cr_size)
            && CR_SIZES.contains(&self.assumed_cr_size)
            && TR_DISTS.contains(&self.tr_dist)
            && KNOWN_PCTS.contains(&self.known_pct);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("parameters outside the experiment value sets: {self:?}")))
        }
    }

    pub fn known_count(&self) -> usize {
        (self.n_crs as f64 * self.known_pct / 100.0).round() as usize
    }
}

impl fmt::Display for ScenarioParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n_crs={} cr_size={} assumed_cr_size={} tr_dist={} known_pct={}",
            self.n_crs, self.cr_size, self.assumed_cr_size, self.tr_dist, self.known_pct
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrSpec {
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub known: bool,
}

impl CrSpec {
    pub fn region(&self) -> Region {
        Region::critical(Point::new(self.x, self.y), self.r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub workspace: Rect,
    pub start: NeedlePose,
    pub crs: Vec<CrSpec>,
    pub tr: Disc,
    pub dr_width: f64,
    pub assumed_cr_radius: f64,
    #[serde(default)]
    pub reference_path: Vec<NeedlePose>,
    #[serde(default)]
    pub params: Option<ScenarioParams>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub weights: Option<CostWeights>,
}

impl Scenario {
    pub fn tr_region(&self) -> Region {
        Region::target(Point::new(self.tr.x, self.tr.y), self.tr.r)
    }

    /// The real tissue: every CR.
    pub fn true_map(&self, cell: f64) -> Result<RegionMap> {
        let crs = self.crs.iter().map(CrSpec::region).collect();
        RegionMap::new(self.workspace, self.tr_region(), crs, self.dr_width, cell)
    }

    /// The controller's initial model: known CRs only, with the TR shrunk by
    /// `tr_shrink`.
    pub fn known_map(&self, cell: f64, tr_shrink: f64) -> Result<RegionMap> {
        let crs = self.crs.iter().filter(|c| c.known).map(CrSpec::region).collect();
        self.model_map(crs, cell, tr_shrink)
    }

    /// Every CR known, TR shrunk by `tr_shrink`.
    pub fn full_map(&self, cell: f64, tr_shrink: f64) -> Result<RegionMap> {
        let crs = self.crs.iter().map(CrSpec::region).collect();
        self.model_map(crs, cell, tr_shrink)
    }

    fn model_map(&self, crs: Vec<Region>, cell: f64, tr_shrink: f64) -> Result<RegionMap> {
        let r = self.tr.r - tr_shrink;
        if !(r > 0.0) {
            return Err(Error::Config(format!(
                "TR radius {} leaves nothing after removing the tracking error {}",
                self.tr.r, tr_shrink
            )));
        }
        RegionMap::new(self.workspace, Region::target(Point::new(self.tr.x, self.tr.y), r), crs, self.dr_width, cell)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Geometry knobs of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub workspace: Rect,
    pub dr_width: f64,
    pub tr_radius: f64,
    /// Insertion x coordinate; y is drawn around the workspace middle.
    pub start_x: f64,
    pub start_y_spread: f64,
    pub rotate_prob: f64,
    /// Minimum free space between a CR's DR and the reference path (mm).
    pub lateral_margin: f64,
    /// Extra lateral offset drawn uniformly from `[0, lateral_spread]`.
    pub lateral_spread: f64,
    /// How far before the target along the path CRs may sit, as a fraction of
    /// the TR distance.
    pub cr_arc_from: f64,
    pub max_attempts: usize,
    /// Grid, kinematics and scope of the solvability check. Its clearance
    /// is ignored: a scenario only needs one plan that avoids every CR∪DR.
    pub engine: EngineConfig,
}

impl Default for Generator {
    fn default() -> Self {
        Self {
            workspace: Rect::default(),
            dr_width: 5.0,
            tr_radius: 4.0,
            start_x: 5.0,
            start_y_spread: 10.0,
            rotate_prob: 0.2,
            lateral_margin: 1.0,
            lateral_spread: 2.0,
            cr_arc_from: 0.1,
            max_attempts: 40,
            engine: EngineConfig::default(),
        }
    }
}

/// Dense positions along a pose sequence.
fn dense_path(poses: &[NeedlePose], cfg: &EngineConfig) -> Vec<Point> {
    let mut pts = vec![poses[0].position()];
    for w in poses.windows(2) {
        if w[0].position() == w[1].position() {
            continue;
        }
        let k = cfg.kin.curvature(w[0].bevel);
        let n = (cfg.kin.step_len / 0.25).ceil() as usize;
        pts.extend((1..=n).map(|i| advance_arc(w[0], cfg.kin.step_len * i as f64 / n as f64, k).position()));
    }
    pts
}

impl Generator {
    pub fn generate(&self, p: &ScenarioParams, seed: u64) -> Result<Scenario> {
        p.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..self.max_attempts {
            if let Some(s) = self.attempt(p, seed, &mut rng)? {
                return Ok(s);
            }
        }
        Err(Error::Generation(format!("no valid scenario for {p} with seed {seed} after {} attempts", self.max_attempts)))
    }

    fn reference_path(&self, p: &ScenarioParams, rng: &mut ChaCha8Rng) -> Result<Option<Vec<NeedlePose>>> {
        let kin = &self.engine.kin;
        let y = self.workspace.y_min + self.workspace.height() / 2.0 + rng.gen_range(-1.0..=1.0) * self.start_y_spread;
        let bevel = if rng.gen_bool(0.5) { Bevel::Plus } else { Bevel::Minus };
        let mut pose = NeedlePose::new(self.start_x, y, 0.0, bevel);
        let mut path = vec![pose];
        let mut arc = 0.0;
        let mut rotated = false;
        while arc + 1e-9 < p.tr_dist {
            let action = if !rotated && rng.gen_bool(self.rotate_prob) { Action::Rotate } else { Action::Push };
            rotated = action == Action::Rotate;
            pose = apply_action(pose, action, kin, 0.0)?;
            if action == Action::Push {
                arc += kin.step_len;
            }
            if !self.workspace.contains(pose.position()) {
                return Ok(None);
            }
            path.push(pose);
        }
        Ok(Some(path))
    }

    fn attempt(&self, p: &ScenarioParams, seed: u64, rng: &mut ChaCha8Rng) -> Result<Option<Scenario>> {
        let Some(path) = self.reference_path(p, rng)? else {
            return Ok(None);
        };
        let start = path[0];
        let tr_center = path.last().expect("nonempty path").position();
        let dense = dense_path(&path, &self.engine);
        let r = p.cr_size;
        let keep_out = r + self.dr_width + self.lateral_margin;

        let mut crs: Vec<CrSpec> = Vec::with_capacity(p.n_crs);
        for _ in 0..p.n_crs {
            let mut placed = None;
            for _ in 0..200 {
                let lo = ((dense.len() - 1) as f64 * self.cr_arc_from) as usize;
                let i = rng.gen_range(lo..dense.len());
                let (a, b) = if i + 1 < dense.len() { (dense[i], dense[i + 1]) } else { (dense[i - 1], dense[i]) };
                let heading = (b.y - a.y).atan2(b.x - a.x);
                let side = if rng.gen_bool(0.5) { FRAC_PI_2 } else { -FRAC_PI_2 };
                let off = keep_out + rng.gen_range(0.0..=self.lateral_spread);
                let c = Point::new(dense[i].x + off * (heading + side).cos(), dense[i].y + off * (heading + side).sin());
                let inside = c.x - r >= self.workspace.x_min
                    && c.x + r <= self.workspace.x_max
                    && c.y - r >= self.workspace.y_min
                    && c.y + r <= self.workspace.y_max;
                let clear_path = dense.iter().all(|q| q.dist(c) >= keep_out);
                let clear_tr = c.dist(tr_center) >= r + self.dr_width + self.tr_radius;
                if inside && clear_path && clear_tr {
                    placed = Some(c);
                    break;
                }
            }
            let Some(c) = placed else {
                return Ok(None);
            };
            crs.push(CrSpec { x: c.x, y: c.y, r, known: false });
        }
        let mut order: Vec<usize> = (0..crs.len()).collect();
        order.shuffle(rng);
        for &i in order.iter().take(p.known_count()) {
            crs[i].known = true;
        }

        let scenario = Scenario {
            workspace: self.workspace,
            start,
            crs,
            tr: Disc { x: tr_center.x, y: tr_center.y, r: self.tr_radius },
            dr_width: self.dr_width,
            assumed_cr_radius: p.assumed_cr_size,
            reference_path: path,
            params: Some(*p),
            seed: Some(seed),
            weights: None,
        };
        Ok(self.solvable(&scenario)?.then_some(scenario))
    }

    /// Whether the controller wins with every CR known.
    pub fn solvable(&self, s: &Scenario) -> Result<bool> {
        let cfg = &self.engine;
        let map = s.full_map(cfg.grid.cell, cfg.calibrated_error())?;
        let scope = GameScope { clearance: 0.0, ..cfg.scope };
        let g = build_game(&map, &cfg.grid, &cfg.kin, s.start, &scope)?;
        Ok(solve(&g).is_some())
    }
}

/// Generate a scenario with the default generator.
pub fn generate_scenario(p: &ScenarioParams, seed: u64) -> Result<Scenario> {
    Generator::default().generate(p, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_bold_values() {
        let p = ScenarioParams::default();
        assert_eq!((p.n_crs, p.cr_size, p.assumed_cr_size, p.tr_dist, p.known_pct), (5, 3.0, 3.0, 30.0, 0.0));
        p.validate().unwrap();
    }

    #[test]
    fn default_scenario_has_five_unknown_crs() {
        let s = generate_scenario(&ScenarioParams::default(), 3).unwrap();
        assert_eq!(s.crs.len(), 5);
        assert!(s.crs.iter().all(|c| !c.known && c.r == 3.0));
    }

    #[test]
    fn no_crs_only_target() {
        let p = ScenarioParams { n_crs: 0, ..Default::default() };
        let s = generate_scenario(&p, 1).unwrap();
        assert!(s.crs.is_empty());
        assert!(Generator::default().solvable(&s).unwrap());
    }

    #[test]
    fn known_flags_follow_percentage() {
        let p = ScenarioParams { known_pct: 40.0, ..Default::default() };
        let s = generate_scenario(&p, 5).unwrap();
        assert_eq!(s.crs.iter().filter(|c| c.known).count(), 2);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let p = ScenarioParams::default();
        let a = generate_scenario(&p, 11).unwrap();
        assert_eq!(a, generate_scenario(&p, 11).unwrap());
        let back: Scenario = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn rejects_values_off_the_grid() {
        let p = ScenarioParams { n_crs: 3, ..Default::default() };
        assert!(matches!(generate_scenario(&p, 0), Err(Error::Config(_))));
    }
}
