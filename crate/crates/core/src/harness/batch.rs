//! Parameter sweeps and the metrics table.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::scenario::{Generator, ScenarioParams, CR_SIZES, KNOWN_PCTS, N_CRS, TR_DISTS};
use crate::engine::{run_episode, EngineConfig, EpisodeResult, Outcome};
use crate::error::{Error, Result};
use crate::harness::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    NCrs,
    CrSize,
    AssumedCrSize,
    TrDist,
    KnownPct,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Axis::NCrs, Axis::CrSize, Axis::AssumedCrSize, Axis::TrDist, Axis::KnownPct];

    pub fn name(self) -> &'static str {
        match self {
            Axis::NCrs => "n_crs",
            Axis::CrSize => "cr_size",
            Axis::AssumedCrSize => "assumed_cr_size",
            Axis::TrDist => "tr_dist",
            Axis::KnownPct => "known_pct",
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        Axis::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn value(self, p: &ScenarioParams) -> f64 {
        match self {
            Axis::NCrs => p.n_crs as f64,
            Axis::CrSize => p.cr_size,
            Axis::AssumedCrSize => p.assumed_cr_size,
            Axis::TrDist => p.tr_dist,
            Axis::KnownPct => p.known_pct,
        }
    }

    /// Every value of this axis, with defaults on the other axes.
    pub fn points(self) -> Vec<SweepPoint> {
        let d = ScenarioParams::default();
        let params: Vec<ScenarioParams> = match self {
            Axis::NCrs => N_CRS.iter().map(|&n_crs| ScenarioParams { n_crs, ..d }).collect(),
            Axis::CrSize => CR_SIZES.iter().map(|&cr_size| ScenarioParams { cr_size, ..d }).collect(),
            Axis::AssumedCrSize => {
                CR_SIZES.iter().map(|&assumed_cr_size| ScenarioParams { assumed_cr_size, ..d }).collect()
            }
            Axis::TrDist => TR_DISTS.iter().map(|&tr_dist| ScenarioParams { tr_dist, ..d }).collect(),
            Axis::KnownPct => KNOWN_PCTS.iter().map(|&known_pct| ScenarioParams { known_pct, ..d }).collect(),
        };
        params.into_iter().map(|params| SweepPoint { axis: self, params }).collect()
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: Axis,
    pub params: ScenarioParams,
}

impl SweepPoint {
    pub fn value(&self) -> f64 {
        self.axis.value(&self.params)
    }
}

/// One axis at a time, defaults elsewhere: 6 + 6 + 6 + 5 + 6 points. The
/// default parametrization appears once per axis.
pub fn default_sweep() -> Vec<SweepPoint> {
    Axis::ALL.into_iter().flat_map(Axis::points).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowOutcome {
    Episode(Outcome),
    GenError,
}

impl fmt::Display for RowOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowOutcome::Episode(o) => write!(f, "{o}"),
            RowOutcome::GenError => f.write_str("GenError"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub point: usize,
    pub axis: Axis,
    pub value: f64,
    pub seed: u64,
    pub outcome: RowOutcome,
    pub readjustments: usize,
    pub synthesis_times: Vec<f64>,
    pub overall_s: f64,
    pub discovered: usize,
    pub steps: usize,
    /// True samples or trace poses found inside a true CR.
    pub cr_violations: usize,
    pub timed_out_by_clock: bool,
}

impl EpisodeRow {
    pub fn synth_stats(&self) -> Option<MinAvgMax> {
        MinAvgMax::of(self.synthesis_times.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinAvgMax {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
}

impl MinAvgMax {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let (mut n, mut sum, mut min, mut max) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            n += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        (n > 0).then(|| Self { min, avg: sum / n as f64, max })
    }
}

/// Aggregates of one parametrization over its non-GenError runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub axis: Axis,
    pub value: f64,
    pub params: ScenarioParams,
    pub runs: usize,
    pub gen_errors: usize,
    pub success_rate: f64,
    pub readjustments: Option<MinAvgMax>,
    pub synthesis_time: Option<MinAvgMax>,
    /// Over successful runs only.
    pub overall_time: Option<MinAvgMax>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsTable {
    pub episodes: Vec<EpisodeRow>,
    pub rows: Vec<AggregateRow>,
}

pub const CSV_HEADER: &str = "param_axis,param_value,seed,outcome,readjustments,n_synth,synth_min,synth_avg,synth_max,overall_s";

fn fmt_time(v: Option<f64>, timing: bool) -> String {
    match v {
        Some(v) if timing => format!("{v:.4}"),
        _ => String::new(),
    }
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

impl MetricsTable {
    /// Count true-CR hits of an episode, checking every logged sample and
    /// every trace pose.
    pub fn violations(scenario: &Scenario, result: &EpisodeResult) -> usize {
        let crs: Vec<_> = scenario.crs.iter().map(|c| c.region()).collect();
        let hit = |p| crs.iter().any(|c| c.contains(p));
        result.samples.iter().filter(|s| hit(s.true_pos)).count()
            + result.final_trace.positions().filter(|p| hit(*p)).count()
    }

    pub fn total_violations(&self) -> usize {
        self.episodes.iter().map(|e| e.cr_violations).sum()
    }

    /// Episode rows, then one aggregate row per parametrization whose seed
    /// column reads `aggregate` and whose outcome column holds the success
    /// rate in percent. With `timing` off every wall-clock column is left
    /// empty, making the output byte-reproducible.
    pub fn write_csv(&self, out: &mut dyn Write, timing: bool) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for e in &self.episodes {
            let s = e.synth_stats();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                e.axis,
                fmt_value(e.value),
                e.seed,
                e.outcome,
                e.readjustments,
                e.synthesis_times.len(),
                fmt_time(s.map(|s| s.min), timing),
                fmt_time(s.map(|s| s.avg), timing),
                fmt_time(s.map(|s| s.max), timing),
                fmt_time(matches!(e.outcome, RowOutcome::Episode(_)).then_some(e.overall_s), timing),
            )?;
        }
        for r in &self.rows {
            let n_synth: usize = self
                .episodes
                .iter()
                .filter(|e| e.axis == r.axis && e.value == r.value)
                .map(|e| e.synthesis_times.len())
                .sum();
            writeln!(
                out,
                "{},{},aggregate,{:.2},{},{},{},{},{},{}",
                r.axis,
                fmt_value(r.value),
                r.success_rate,
                r.readjustments.map(|m| format!("{:.2}", m.avg)).unwrap_or_default(),
                n_synth,
                fmt_time(r.synthesis_time.map(|s| s.min), timing),
                fmt_time(r.synthesis_time.map(|s| s.avg), timing),
                fmt_time(r.synthesis_time.map(|s| s.max), timing),
                fmt_time(r.overall_time.map(|s| s.avg), timing),
            )?;
        }
        Ok(())
    }

    /// The (min, avg, max) table, one line per parametrization.
    pub fn write_summary_csv(&self, out: &mut dyn Write, timing: bool) -> std::io::Result<()> {
        writeln!(
            out,
            "param_axis,param_value,runs,gen_errors,tr_reach_pct,readj_min,readj_avg,readj_max,synth_min,synth_avg,synth_max,overall_min,overall_avg,overall_max"
        )?;
        for r in &self.rows {
            let m = |x: Option<MinAvgMax>, f: fn(&MinAvgMax) -> f64| x.as_ref().map(f);
            let readj = |f: fn(&MinAvgMax) -> f64| m(r.readjustments, f).map(|v| format!("{v:.2}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{:.2},{},{},{},{},{},{},{},{},{}",
                r.axis,
                fmt_value(r.value),
                r.runs,
                r.gen_errors,
                r.success_rate,
                readj(|x| x.min),
                readj(|x| x.avg),
                readj(|x| x.max),
                fmt_time(m(r.synthesis_time, |x| x.min), timing),
                fmt_time(m(r.synthesis_time, |x| x.avg), timing),
                fmt_time(m(r.synthesis_time, |x| x.max), timing),
                fmt_time(m(r.overall_time, |x| x.min), timing),
                fmt_time(m(r.overall_time, |x| x.avg), timing),
                fmt_time(m(r.overall_time, |x| x.max), timing),
            )?;
        }
        Ok(())
    }
}

fn aggregate(point: &SweepPoint, rows: &[EpisodeRow]) -> AggregateRow {
    let ran: Vec<&EpisodeRow> = rows.iter().filter(|e| e.outcome != RowOutcome::GenError).collect();
    let successes: Vec<&&EpisodeRow> = ran.iter().filter(|e| e.outcome == RowOutcome::Episode(Outcome::Success)).collect();
    AggregateRow {
        axis: point.axis,
        value: point.value(),
        params: point.params,
        runs: ran.len(),
        gen_errors: rows.len() - ran.len(),
        success_rate: if ran.is_empty() { 0.0 } else { 100.0 * successes.len() as f64 / ran.len() as f64 },
        readjustments: MinAvgMax::of(ran.iter().map(|e| e.readjustments as f64)),
        synthesis_time: MinAvgMax::of(ran.iter().flat_map(|e| e.synthesis_times.iter().copied())),
        overall_time: MinAvgMax::of(successes.iter().map(|e| e.overall_s)),
    }
}

/// Generate and run one episode of a sweep point.
pub fn run_one(
    index: usize,
    point: &SweepPoint,
    seed: u64,
    generator: &Generator,
    cfg: &EngineConfig,
) -> Result<EpisodeRow> {
    let mut row = EpisodeRow {
        point: index,
        axis: point.axis,
        value: point.value(),
        seed,
        outcome: RowOutcome::GenError,
        readjustments: 0,
        synthesis_times: Vec::new(),
        overall_s: 0.0,
        discovered: 0,
        steps: 0,
        cr_violations: 0,
        timed_out_by_clock: false,
    };
    let scenario = match generator.generate(&point.params, seed) {
        Ok(s) => s,
        Err(Error::Generation(msg)) => {
            log::warn!("{msg}");
            return Ok(row);
        }
        Err(e) => return Err(e),
    };
    let mut cfg = *cfg;
    if let Some(w) = scenario.weights {
        cfg.weights = w;
    }
    let res = run_episode(&scenario, &cfg, seed)?;
    row.outcome = RowOutcome::Episode(res.outcome);
    row.readjustments = res.readjustments;
    row.overall_s = res.overall_time;
    row.discovered = res.discovered_crs();
    row.steps = res.steps;
    row.cr_violations = MetricsTable::violations(&scenario, &res);
    row.timed_out_by_clock = res.timeout_cause == Some(crate::engine::TimeoutCause::WallClock);
    row.synthesis_times = res.synthesis_times;
    Ok(row)
}

/// Run `runs_per_point` episodes per sweep point with seeds
/// `base_seed + run`. Episodes run on all available cores; the row order is
/// (point, run) regardless.
pub fn run_batch(
    sweep: &[SweepPoint],
    runs_per_point: usize,
    base_seed: u64,
    generator: &Generator,
    cfg: &EngineConfig,
) -> Result<MetricsTable> {
    if runs_per_point == 0 {
        return Err(Error::Usage("runs_per_point must be at least 1".into()));
    }
    let jobs: Vec<(usize, u64)> =
        (0..sweep.len()).flat_map(|p| (0..runs_per_point as u64).map(move |r| (p, base_seed + r))).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let chunk = jobs.len().div_ceil(workers);
    let results: Vec<Result<Vec<EpisodeRow>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter().map(|&(p, seed)| run_one(p, &sweep[p], seed, generator, cfg)).collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("batch worker panicked")).collect()
    });
    let mut episodes = Vec::with_capacity(jobs.len());
    for r in results {
        episodes.extend(r?);
    }
    let rows = sweep
        .iter()
        .enumerate()
        .map(|(i, point)| {
            let mine: Vec<EpisodeRow> = episodes.iter().filter(|e| e.point == i).cloned().collect();
            aggregate(point, &mine)
        })
        .collect();
    Ok(MetricsTable { episodes, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_has_29_points() {
        let s = default_sweep();
        assert_eq!(s.len(), 29);
        let per_axis: Vec<usize> = Axis::ALL.iter().map(|a| s.iter().filter(|p| p.axis == *a).count()).collect();
        assert_eq!(per_axis, vec![6, 6, 6, 5, 6]);
        for p in &s {
            p.params.validate().unwrap();
        }
    }

    #[test]
    fn min_avg_max() {
        assert_eq!(MinAvgMax::of([]), None);
        let m = MinAvgMax::of([2.0, 4.0, 9.0]).unwrap();
        assert_eq!((m.min, m.avg, m.max), (2.0, 5.0, 9.0));
    }

    #[test]
    fn axis_names_round_trip() {
        for a in Axis::ALL {
            assert_eq!(Axis::parse(a.name()), Some(a));
        }
    }
}
