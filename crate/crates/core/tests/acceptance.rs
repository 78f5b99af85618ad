//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs the full 580-episode sweep, so expect well under a
//! minute on one core with optimizations on.

use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use onss::engine::{run_episode, EngineConfig, Outcome, TimeoutCause};
use onss::game::{attractor, check_winning, solve, GameGraph, StateId, GOAL};
use onss::harness::batch::{default_sweep, run_batch, RowOutcome};
use onss::harness::scenario::{Generator, Scenario, ScenarioParams};
use onss::kinematics::{apply_action, Action, Bevel, KinematicParams, NeedlePose, Trace};
use onss::matcher::{match_batch, MatchResult};
use onss::optimizer::Plan;
use onss::plant::{GroundTruth, PlantConfig};
use onss::regions::{Point, Rect, Region, RegionMap, RegionType};

const RUNS_PER_POINT: usize = 20;

/// Keeps warnings so the timeout log line can be checked.
struct Capture(Mutex<Vec<String>>);

impl log::Log for Capture {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::Level::Warn
    }

    fn log(&self, r: &log::Record) {
        if self.enabled(r.metadata()) {
            self.0.lock().unwrap().push(format!("{}", r.args()));
        }
    }

    fn flush(&self) {}
}

static LOGS: Capture = Capture(Mutex::new(Vec::new()));

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

type Moves = Vec<Vec<(Action, Vec<StateId>)>>;

fn random_game(rng: &mut ChaCha8Rng) -> Moves {
    let n = rng.gen_range(3..=2000);
    let mut moves: Moves = vec![vec![], vec![]];
    for _ in 2..n {
        let mut acts = vec![Action::Push, Action::Rotate, Action::Pull];
        let k = rng.gen_range(0..=3);
        moves.push(
            (0..k)
                .map(|_| {
                    let a = acts.remove(rng.gen_range(0..acts.len()));
                    (a, (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..n) as StateId).collect())
                })
                .collect(),
        );
    }
    moves
}

fn brute_force(moves: &Moves) -> Vec<bool> {
    let mut win = vec![false; moves.len()];
    win[GOAL as usize] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for s in 2..moves.len() {
            if !win[s] && moves[s].iter().any(|(_, succ)| succ.iter().all(|&t| win[t as usize])) {
                win[s] = true;
                changed = true;
            }
        }
    }
    win
}

fn oracle_equivalence(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut games, mut mismatches, mut unchecked) = (0, 0, 0);
    for _ in 0..120 {
        let moves = random_game(&mut rng);
        let start = rng.gen_range(2..moves.len()) as StateId;
        let g = GameGraph::from_moves(start, moves.clone()).unwrap();
        let st = attractor(&g);
        let oracle = brute_force(&moves);
        mismatches += (0..moves.len()).filter(|&s| st.is_winning(s as StateId) != oracle[s]).count();
        if let Some(st) = solve(&g) {
            unchecked += usize::from(!check_winning(&st, &g));
        }
        games += 1;
    }
    rep.line(
        "solver oracle equivalence",
        games >= 100 && mismatches == 0 && unchecked == 0,
        format!("{games} games, {mismatches} state mismatches, {unchecked} strategies failing the checker"),
    );
}

fn zero_cr_baseline(rep: &mut Report) {
    let p = ScenarioParams { n_crs: 0, ..ScenarioParams::default() };
    let g = Generator::default();
    let cfg = EngineConfig::default();
    // default heading noise is one sector per push, far below eps_match
    let (mut ok, mut readj) = (0, 0);
    for seed in 0..50 {
        let s = g.generate(&p, seed).unwrap();
        let r = run_episode(&s, &cfg, seed).unwrap();
        ok += usize::from(r.outcome == Outcome::Success);
        readj += r.readjustments;
    }
    rep.line("zero-CR baseline", ok == 50 && readj == 0, format!("{ok}/50 successes, {readj} readjustments"));
}

fn default_calibration(rep: &mut Report) {
    let g = Generator::default();
    let cfg = EngineConfig::default();
    let (mut ok, mut readj) = (0, 0);
    for seed in 0..100 {
        let s = g.generate(&ScenarioParams::default(), seed).unwrap();
        let r = run_episode(&s, &cfg, seed).unwrap();
        ok += usize::from(r.outcome == Outcome::Success);
        readj += r.readjustments;
    }
    let rate = ok as f64;
    let avg = readj as f64 / 100.0;
    rep.line(
        "default calibration",
        (70.0..=95.0).contains(&rate) && avg <= 3.0,
        format!("success {rate:.0}% over 100 runs (band 70..95), avg readjustments {avg:.2} (<= 3)"),
    );
}

fn sweep_criteria(rep: &mut Report) {
    let sweep = default_sweep();
    let cfg = EngineConfig::default();
    let table = run_batch(&sweep, RUNS_PER_POINT, 0, &Generator::default(), &cfg).unwrap();

    let ran = table.episodes.iter().filter(|e| e.outcome != RowOutcome::GenError).count();
    let violations = table.total_violations();
    rep.line(
        "global safety",
        ran >= 500 && violations == 0,
        format!("{ran} episodes over the full sweep, {violations} true samples inside a true CR"),
    );

    let times: Vec<f64> = table.episodes.iter().flat_map(|e| e.synthesis_times.iter().copied()).collect();
    let max = times.iter().copied().fold(0.0, f64::max);
    let avg = times.iter().sum::<f64>() / times.len().max(1) as f64;
    rep.line(
        "synthesis latency",
        !times.is_empty() && max <= 7.0 && avg <= 3.0,
        format!("{} syntheses, max {max:.3}s (<= 7), avg {avg:.3}s (<= 3)", times.len()),
    );

    let unclassified = table.episodes.iter().filter(|e| e.outcome == RowOutcome::GenError).count();
    let over_budget = table.episodes.iter().filter(|e| e.steps > cfg.step_budget).count();
    let timeouts = table.episodes.iter().filter(|e| e.outcome == RowOutcome::Episode(Outcome::Timeout)).count();

    // a zero wall-clock budget must end in a logged Timeout
    let s = Generator::default().generate(&ScenarioParams::default(), 0).unwrap();
    let zero = EngineConfig { wall_timeout: Some(Duration::ZERO), ..cfg };
    let r = run_episode(&s, &zero, 0).unwrap();
    let logged = LOGS.0.lock().unwrap().iter().any(|l| l.contains("wall-clock limit"));
    let rule = cfg.wall_timeout == Some(Duration::from_secs(120));
    rep.line(
        "termination",
        unclassified == 0
            && over_budget == 0
            && rule
            && r.outcome == Outcome::Timeout
            && r.timeout_cause == Some(TimeoutCause::WallClock)
            && logged,
        format!(
            "{} episodes classified ({timeouts} timeouts), {unclassified} generation errors, {over_budget} over the step budget; \
             120 s limit {}, zero-budget run {} and {}",
            table.episodes.len() - unclassified,
            if rule { "set" } else { "missing" },
            r.outcome,
            if logged { "logged" } else { "not logged" }
        ),
    );

    let mut csv = Vec::new();
    table.write_csv(&mut csv, false).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let data_rows = text.lines().skip(1).filter(|l| !l.contains(",aggregate,")).count();
    rep.line(
        "sweep shape",
        sweep.len() == 29 && table.episodes.len() == 580 && data_rows == 580 && table.rows.len() == 29,
        format!("{} parametrizations x {RUNS_PER_POINT} runs = {data_rows} episode rows", sweep.len()),
    );
}

/// One quick randomized check per module invariant family. The full suites
/// live in the other test targets of this crate.
fn property_spot_checks(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = Vec::new();

    // regions: classification priority and monotone discovery
    let map = RegionMap::new(Rect::default(), Region::target(Point::new(60.0, 50.0), 4.0), vec![], 5.0, 1.0).unwrap();
    for _ in 0..200 {
        let c = Point::new(rng.gen_range(10.0..90.0), rng.gen_range(10.0..90.0));
        let r = rng.gen_range(1.0..6.0);
        let m2 = map.add_discovered_cr(c, r).unwrap();
        let p = Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
        let d = c.dist(p) - r;
        let want = if d <= 0.0 {
            RegionType::Critical
        } else if d <= 5.0 {
            RegionType::Detection
        } else if Point::new(60.0, 50.0).dist(p) <= 4.0 {
            RegionType::Target
        } else {
            RegionType::Unknown
        };
        if m2.classify(p).unwrap() != want {
            failures.push("regions priority");
            break;
        }
    }

    // kinematics: rotate is an involution, pullbacks never stop short
    let kin = KinematicParams::default();
    for _ in 0..100 {
        let p = NeedlePose::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), rng.gen_range(0.0..6.28), Bevel::Plus);
        let twice = apply_action(apply_action(p, Action::Rotate, &kin, 0.0).unwrap(), Action::Rotate, &kin, 0.0).unwrap();
        if twice != p {
            failures.push("rotate involution");
            break;
        }
        let mut t = Trace::new(p);
        let mut q = p;
        for _ in 0..rng.gen_range(1..20) {
            q = apply_action(q, Action::Push, &kin, 0.0).unwrap();
            t.record(q, Action::Push, kin.step_len);
        }
        let len = rng.gen_range(0.0..50.0);
        if t.invert_path(len).unwrap().trace.inserted_length() > (t.inserted_length() - len).max(0.0) + 1e-9 {
            failures.push("pullback length");
            break;
        }
    }

    // plant and matcher: bounded sensor error, noiseless runs match the plan
    let start = NeedlePose::new(10.0, 50.0, 0.0, Bevel::Plus);
    for seed in 0..50 {
        let cfg = PlantConfig::default();
        let mut g = GroundTruth::new(map.clone(), start, kin, cfg, seed);
        for _ in 0..10 {
            g.step(Action::Push).unwrap();
        }
        if g.samples().iter().any(|s| s.true_pos.dist(s.measured_pos) > cfg.pos_error_max() + 1e-9) {
            failures.push("sensor error bound");
            break;
        }
        let acts = [Action::Push, Action::Rotate, Action::Push, Action::Push];
        let plan = Plan::predict(&acts, &[], start, &kin, &map).unwrap();
        let mut g = GroundTruth::new(map.clone(), start, kin, cfg.noiseless(), seed);
        for (i, &a) in acts.iter().enumerate() {
            let obs = g.step(a).unwrap();
            if match_batch(&obs, &plan, plan.arcs[i + 1], 1e-6, 6.0) != MatchResult::Ok {
                failures.push("noiseless matching");
                break;
            }
        }
    }

    // engine: audit trail stays inside the strategy, pullbacks are counted once
    for seed in 0..10 {
        let s: Scenario = Generator::default().generate(&ScenarioParams::default(), seed).unwrap();
        let r = run_episode(&s, &EngineConfig::default(), seed).unwrap();
        if r.audit.iter().any(|e| e.allowed & e.action.bit() == 0) || r.readjustments != r.pullbacks {
            failures.push("engine audit");
            break;
        }
        if r.outcome == Outcome::Success && !s.tr_region().contains(r.final_pose().position()) {
            failures.push("success outside the target");
            break;
        }
    }

    rep.line(
        "property spot checks",
        failures.is_empty(),
        if failures.is_empty() { "regions, kinematics, plant, matcher, engine".into() } else { failures.join(", ") },
    );
}

fn main() -> ExitCode {
    log::set_logger(&LOGS).unwrap();
    log::set_max_level(log::LevelFilter::Warn);
    let mut rep = Report { failed: 0 };
    oracle_equivalence(&mut rep);
    zero_cr_baseline(&mut rep);
    default_calibration(&mut rep);
    sweep_criteria(&mut rep);
    property_spot_checks(&mut rep);
    println!("{} criteria failed", rep.failed);
    if rep.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
