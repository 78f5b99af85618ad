use proptest::prelude::*;

use onss::kinematics::{apply_action, Action, Bevel, KinematicParams, NeedlePose};
use onss::matcher::{match_batch, MatchResult};
use onss::optimizer::{plan_cost, select_plan, CostWeights, Plan};
use onss::plant::{GroundTruth, Observation, PlantConfig};
use onss::regions::{Point, Rect, Region, RegionMap};

fn map_with(crs: Vec<Region>) -> RegionMap {
    RegionMap::new(Rect::default(), Region::target(Point::new(90.0, 50.0), 4.0), crs, 5.0, 1.0).unwrap()
}

fn start() -> NeedlePose {
    NeedlePose::new(10.0, 50.0, 0.0, Bevel::Plus)
}

fn actions() -> impl Strategy<Value = Vec<Action>> {
    prop::collection::vec(prop_oneof![3 => Just(Action::Push), 1 => Just(Action::Rotate)], 1..30)
}

fn weights() -> impl Strategy<Value = CostWeights> {
    (0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0)
        .prop_map(|(rot, len, clear, ur, center)| CostWeights { rot, len, clear, ur, center })
}

fn plans(map: &RegionMap, sets: &[Vec<Action>]) -> Vec<Plan> {
    sets.iter().map(|a| Plan::predict(a, &[], start(), &KinematicParams::default(), map).unwrap()).collect()
}

proptest! {
    #[test]
    fn cost_is_non_negative(a in actions(), w in weights(), target in 0.0f64..20.0) {
        let map = map_with(vec![Region::critical(Point::new(30.0, 40.0), 3.0)]);
        let p = &plans(&map, &[a])[0];
        prop_assert!(plan_cost(p, &w, target) >= 0.0);
    }

    #[test]
    fn scaling_weights_keeps_the_choice(sets in prop::collection::vec(actions(), 1..8), w in weights(), c in 0.01f64..100.0) {
        let map = map_with(vec![Region::critical(Point::new(30.0, 56.0), 2.0)]);
        let ps = plans(&map, &sets);
        let a = select_plan(&ps, &w, 10.0).unwrap();
        let b = select_plan(&ps, &w.scaled(c), 10.0).unwrap();
        // ties may be resolved differently only if the costs really tie
        let ca = plan_cost(&ps[a], &w, 10.0);
        let cb = plan_cost(&ps[b], &w, 10.0);
        prop_assert!((ca - cb).abs() <= 1e-9 * ca.abs().max(1.0));
    }

    #[test]
    fn more_clearance_weight_never_picks_a_tighter_plan(
        sets in prop::collection::vec(actions(), 2..8),
        w in weights(),
        extra in 0.0f64..50.0,
    ) {
        let map = map_with(vec![Region::critical(Point::new(24.0, 52.0), 2.0)]);
        let ps = plans(&map, &sets);
        let target = 10.0;
        let deficit = |p: &Plan| (target - p.metrics.min_clearance_mm).max(0.0);
        let a = select_plan(&ps, &w, target).unwrap();
        let b = select_plan(&ps, &CostWeights { clear: w.clear + extra, ..w }, target).unwrap();
        prop_assert!(deficit(&ps[b]) <= deficit(&ps[a]) + 1e-9);
    }

    #[test]
    fn selection_is_the_argmin(sets in prop::collection::vec(actions(), 1..8), w in weights()) {
        let map = map_with(vec![]);
        let ps = plans(&map, &sets);
        let i = select_plan(&ps, &w, 10.0).unwrap();
        let best = ps.iter().map(|p| plan_cost(p, &w, 10.0)).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(plan_cost(&ps[i], &w, 10.0), best);
        // first minimum on ties
        prop_assert!(ps[..i].iter().all(|p| plan_cost(p, &w, 10.0) > best));
    }

    #[test]
    fn sensor_error_is_bounded(a in actions(), seed in any::<u64>()) {
        let cfg = PlantConfig::default();
        let mut g = GroundTruth::new(map_with(vec![]), start(), KinematicParams::default(), cfg, seed);
        g.observe();
        for act in a {
            if g.step(act).is_err() {
                break;
            }
        }
        for s in g.samples() {
            prop_assert!(s.true_pos.dist(s.measured_pos) <= cfg.pos_error_max() + 1e-9);
        }
    }

    #[test]
    fn force_grows_with_depth(cx in 30.0f64..70.0, cy in 30.0f64..70.0, r in 1.0f64..6.0, t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let map = map_with(vec![Region::critical(Point::new(cx, cy), r)]);
        let g = GroundTruth::new(map, start(), KinematicParams::default(), PlantConfig::default(), 0);
        // walk inwards along a ray from outside the DR up to the center
        let at = |d: f64| Point::new(cx + r + 6.0 - d, cy);
        let (d1, d2) = (t1 * (r + 6.0), t2 * (r + 6.0));
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(g.force_at(at(lo)) <= g.force_at(at(hi)));
        prop_assert!(g.force_at(at(0.0)) == PlantConfig::default().force.baseline);
    }

    #[test]
    fn equal_seeds_give_equal_episodes(a in actions(), seed in any::<u64>()) {
        let run = || {
            let mut g = GroundTruth::new(map_with(vec![]), start(), KinematicParams::default(), PlantConfig::default(), seed);
            let obs: Vec<Observation> = a.iter().flat_map(|&x| g.step(x).unwrap_or_default()).collect();
            (obs, g.pose())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn noiseless_plant_follows_the_model(a in actions(), seed in any::<u64>()) {
        let kin = KinematicParams::default();
        let mut g = GroundTruth::new(map_with(vec![]), start(), kin, PlantConfig::default().noiseless(), seed);
        let mut p = start();
        for &act in &a {
            g.step(act).unwrap();
            p = apply_action(p, act, &kin, 0.0).unwrap();
            prop_assert_eq!(g.pose(), p);
        }
        for s in g.samples() {
            prop_assert_eq!(s.true_pos, s.measured_pos);
        }
    }

    #[test]
    fn noiseless_execution_never_deviates(a in actions(), seed in any::<u64>()) {
        let kin = KinematicParams::default();
        let map = map_with(vec![]);
        let plan = Plan::predict(&a, &[], start(), &kin, &map).unwrap();
        let mut g = GroundTruth::new(map, start(), kin, PlantConfig::default().noiseless(), seed);
        for (i, &act) in a.iter().enumerate() {
            let obs = g.step(act).unwrap();
            prop_assert_eq!(match_batch(&obs, &plan, plan.arcs[i + 1], 1e-6, 6.0), MatchResult::Ok);
        }
    }

    #[test]
    fn force_spike_beats_any_offset(k in 1usize..6, spike in 0usize..6, off in 0.0f64..50.0, progress in 0.0f64..8.0) {
        let kin = KinematicParams::default();
        let plan = Plan::predict(&[Action::Push; 4], &[], start(), &kin, &map_with(vec![])).unwrap();
        let spike = spike % k;
        let obs: Vec<Observation> = (0..k)
            .map(|i| Observation {
                measured_pos: Point::new(10.0 + i as f64, 50.0 + off),
                force: if i >= spike { 9.0 } else { 1.0 },
                sample_index: i as u64,
            })
            .collect();
        prop_assert_eq!(
            match_batch(&obs, &plan, progress, 2.0, 6.0),
            MatchResult::DetectionEvent { est_boundary_point: obs[spike].measured_pos }
        );
    }
}
