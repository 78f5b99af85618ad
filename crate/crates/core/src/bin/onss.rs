use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use onss::engine::{run_episode, synthesize, write_trace_csv, EngineConfig};
use onss::game::extract_plans;
use onss::harness::batch::{default_sweep, run_batch, Axis};
use onss::harness::render::render_trace;
use onss::harness::scenario::{Generator, Scenario, ScenarioParams};
use onss::optimizer::{plan_cost, CostWeights, Plan};
use onss::{Error, Result};

#[derive(Parser)]
#[command(name = "onss", version, about = "Online strategy synthesis for bevel-tip needle steering")]
struct Cli {
    /// Directory for outputs given as bare file names.
    #[arg(long, env = "ONSS_OUT_DIR", default_value = ".", global = true)]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scenario and write it as JSON.
    Gen {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        geometry: GenArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "scenario.json")]
        out: PathBuf,
        /// Also draw the scenario and its reference path.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Build and solve the game for a scenario's initial model.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        /// Write the game graph and strategy as text.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Run one closed-loop episode.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        engine: EngineArgs,
        /// Per-sample CSV log.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run a parameter sweep and write the metrics CSVs.
    Batch {
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        /// Restrict the sweep to these axes (n_crs, cr_size, assumed_cr_size,
        /// tr_dist, known_pct).
        #[arg(long, value_delimiter = ',')]
        axes: Vec<String>,
        #[command(flatten)]
        geometry: GenArgs,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value = "batch.csv")]
        out: PathBuf,
        #[arg(long, default_value = "summary.csv")]
        summary: PathBuf,
        /// Leave wall-clock columns empty so equal seeds give equal bytes.
        #[arg(long)]
        no_timing: bool,
    },
    /// Run an episode and draw it.
    Render {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value = "trace.svg")]
        out: PathBuf,
        /// Omit the initial plan set.
        #[arg(long)]
        no_plans: bool,
    },
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long, default_value_t = 5)]
    n_crs: usize,
    #[arg(long, default_value_t = 3.0)]
    cr_size: f64,
    #[arg(long, default_value_t = 3.0)]
    assumed_cr_size: f64,
    #[arg(long, default_value_t = 30.0)]
    tr_dist: f64,
    #[arg(long, default_value_t = 0.0)]
    known_pct: f64,
}

impl ParamArgs {
    fn params(&self) -> ScenarioParams {
        ScenarioParams {
            n_crs: self.n_crs,
            cr_size: self.cr_size,
            assumed_cr_size: self.assumed_cr_size,
            tr_dist: self.tr_dist,
            known_pct: self.known_pct,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// TR radius (mm).
    #[arg(long)]
    tr_radius: Option<f64>,
    /// Free space kept between a CR's DR and the reference path (mm).
    #[arg(long)]
    lateral_margin: Option<f64>,
    /// Upper bound of the random extra lateral CR offset (mm).
    #[arg(long)]
    lateral_spread: Option<f64>,
}

impl GenArgs {
    fn generator(&self, engine: EngineConfig) -> Generator {
        let d = Generator::default();
        Generator {
            tr_radius: self.tr_radius.unwrap_or(d.tr_radius),
            lateral_margin: self.lateral_margin.unwrap_or(d.lateral_margin),
            lateral_spread: self.lateral_spread.unwrap_or(d.lateral_spread),
            engine,
            ..d
        }
    }
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long)]
    headings: Option<u16>,
    #[arg(long)]
    cell: Option<f64>,
    #[arg(long)]
    eps_match: Option<f64>,
    #[arg(long)]
    force_threshold: Option<f64>,
    #[arg(long)]
    pullback_len: Option<f64>,
    #[arg(long)]
    max_plans: Option<usize>,
    #[arg(long)]
    step_budget: Option<usize>,
    /// Seconds; 0 disables the limit.
    #[arg(long)]
    wall_timeout: Option<f64>,
    /// Cost weights as rot,len,clear,ur,center.
    #[arg(long, value_delimiter = ',', num_args = 5)]
    weights: Option<Vec<f64>>,
}

impl EngineArgs {
    fn config(&self, scenario: Option<&Scenario>) -> Result<EngineConfig> {
        let mut c = EngineConfig::default();
        if let Some(w) = scenario.and_then(|s| s.weights) {
            c.weights = w;
        }
        if let Some(h) = self.headings {
            c.grid.headings = h;
        }
        if let Some(v) = self.cell {
            c.grid.cell = v;
        }
        if let Some(v) = self.eps_match {
            c.eps_match = v;
        }
        if let Some(v) = self.force_threshold {
            c.force_threshold = v;
        }
        if let Some(v) = self.pullback_len {
            c.pullback_len = v;
        }
        if let Some(v) = self.max_plans {
            c.max_plans = v;
        }
        if let Some(v) = self.step_budget {
            c.step_budget = v;
        }
        if let Some(v) = self.wall_timeout {
            c.wall_timeout = (v > 0.0).then(|| Duration::from_secs_f64(v));
        }
        if let Some(w) = &self.weights {
            c.weights = CostWeights { rot: w[0], len: w[1], clear: w[2], ur: w[3], center: w[4] };
        }
        c.validate()?;
        Ok(c)
    }
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() || p.parent().is_some_and(|d| !d.as_os_str().is_empty()) {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn create(dir: &Path, p: &Path) -> Result<BufWriter<File>> {
    let path = resolve(dir, p);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn real_main(cli: Cli) -> Result<u8> {
    let dir = cli.out_dir.as_path();
    match cli.cmd {
        Command::Gen { params, geometry, seed, out, svg } => {
            let s = geometry.generator(EngineConfig::default()).generate(&params.params(), seed)?;
            let path = resolve(dir, &out);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            s.save(&path)?;
            if let Some(svg) = svg {
                create(dir, &svg)?.write_all(render_trace(None, &s, false).as_bytes())?;
            }
            println!("wrote {} ({} CRs, TR at ({:.2}, {:.2}))", path.display(), s.crs.len(), s.tr.x, s.tr.y);
            Ok(0)
        }
        Command::Synth { scenario, engine, dump } => {
            let s = Scenario::load(&scenario)?;
            let cfg = engine.config(Some(&s))?;
            let map = s.known_map(cfg.grid.cell, cfg.calibrated_error())?;
            let syn = synthesize(&map, &cfg, s.start)?;
            if let Some(d) = dump {
                syn.graph.dump(syn.strategy.as_ref(), &mut create(dir, &d)?)?;
            }
            println!("states={} moves={} time={:.3}s", syn.graph.len(), syn.graph.move_count(), syn.seconds);
            match &syn.strategy {
                None => {
                    println!("no strategy");
                    Ok(1)
                }
                Some(st) => {
                    let target = cfg.clearance_target.unwrap_or(2.0 * map.dr_width());
                    let paths = extract_plans(st, &syn.graph, syn.graph.start(), cfg.max_plans)?;
                    println!("winning states={} plans={}", st.winning_count(), paths.len());
                    for (i, p) in paths.iter().enumerate() {
                        let plan = Plan::from_path(p, s.start, &cfg.kin, &map)?;
                        let acts: String = plan.actions.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ");
                        println!("plan {i}: cost={:.2} {acts}", plan_cost(&plan, &cfg.weights, target));
                    }
                    Ok(0)
                }
            }
        }
        Command::Run { scenario, seed, engine, trace, svg } => {
            let s = Scenario::load(&scenario)?;
            let cfg = engine.config(Some(&s))?;
            let res = run_episode(&s, &cfg, seed)?;
            println!("{res}");
            if let Some(t) = trace {
                write_trace_csv(&res, &mut create(dir, &t)?)?;
            }
            if let Some(p) = svg {
                create(dir, &p)?.write_all(render_trace(Some(&res), &s, true).as_bytes())?;
            }
            Ok(res.outcome.exit_code() as u8)
        }
        Command::Batch { runs, base_seed, axes, geometry, engine, out, summary, no_timing } => {
            let cfg = engine.config(None)?;
            let sweep = if axes.is_empty() {
                default_sweep()
            } else {
                let mut v = Vec::new();
                for name in &axes {
                    let a = Axis::parse(name).ok_or_else(|| Error::Usage(format!("unknown axis {name}")))?;
                    v.extend(a.points());
                }
                v
            };
            let gen = geometry.generator(cfg);
            let table = run_batch(&sweep, runs, base_seed, &gen, &cfg)?;
            let mut w = create(dir, &out)?;
            table.write_csv(&mut w, !no_timing)?;
            w.flush()?;
            let mut w = create(dir, &summary)?;
            table.write_summary_csv(&mut w, !no_timing)?;
            w.flush()?;
            let stdout = io::stdout();
            table.write_summary_csv(&mut stdout.lock(), !no_timing)?;
            let violations = table.total_violations();
            println!("episodes={} cr_violations={violations}", table.episodes.len());
            Ok(u8::from(violations > 0))
        }
        Command::Render { scenario, seed, engine, out, no_plans } => {
            let s = Scenario::load(&scenario)?;
            let cfg = engine.config(Some(&s))?;
            let res = run_episode(&s, &cfg, seed)?;
            create(dir, &out)?.write_all(render_trace(Some(&res), &s, !no_plans).as_bytes())?;
            println!("{res}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
