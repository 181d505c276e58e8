use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use aplight::harness::{self, ControllerKind, EvalOptions, ExperimentConfig, RunReport, Scenario};
use aplight::netmodel::{build_grid, grid_flow, save_flow, save_network, GridDemand};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aplight", about = "Traffic-signal control experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a controller as described by a TOML config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Scenario directory with roadnet*.json and a flow file.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Write the simulator event log of the evaluation episode.
        #[arg(long)]
        log_events: bool,
        /// Write one JSON line per critique/tune decision.
        #[arg(long)]
        ct_diagnostics: bool,
    },
    /// Run one greedy episode from a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log_events: bool,
        #[arg(long)]
        ct_diagnostics: bool,
    },
    /// Train several controllers on a synthetic grid and compare them.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "bct_aplight,ap_dqn,dqn,fixedtime,maxpressure")]
        controllers: Vec<String>,
        /// Grid size as RxC.
        #[arg(long, default_value = "1x1")]
        grid: String,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// Seeds seed, seed+1, ..., seed+seeds-1.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Base config; controller, scenario, episodes and seed are replaced.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episode_seconds: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log_events: bool,
        #[arg(long)]
        ct_diagnostics: bool,
    },
    /// Write a synthetic grid scenario as CityFlow roadnet and flow files.
    Scenario {
        #[arg(long, default_value = "1x1")]
        grid: String,
        #[arg(long, default_value_t = 300.0)]
        road_length: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("grid must look like 2x2, got {s:?}"))?;
    Ok((r.trim().parse()?, c.trim().parse()?))
}

fn base_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn summary(r: &RunReport) {
    let m = r.final_metrics;
    println!(
        "{:<12} seed {:<4} ATT {:>8.2}  AQL {:>7.3}  AWT {:>8.2}  reward {:>8.4}  CT reject {:.3} override {:.3}  {:.1}s{}",
        r.controller,
        r.seed,
        m.att,
        m.aql,
        m.awt,
        r.final_reward,
        r.ct.reject_rate,
        r.ct.override_rate,
        r.wall_seconds,
        r.aborted.as_deref().map(|a| format!("  ABORTED: {a}")).unwrap_or_default()
    );
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            config,
            seed,
            out,
            controller,
            episodes,
            scenario,
            log_events,
            ct_diagnostics,
        } => {
            let mut cfg = base_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = controller {
                cfg.controller = c.parse()?;
            }
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if let Some(dir) = scenario {
                cfg.scenario = Scenario::from_dir(dir)?;
            }
            if out.is_some() {
                cfg.out_dir = out;
            }
            cfg.log_events |= log_events;
            cfg.ct_diagnostics |= ct_diagnostics;
            let report = harness::train(cfg)?;
            summary(&report);
            if report.aborted.is_some() {
                bail!("run aborted");
            }
        }
        Command::Eval {
            checkpoint,
            scenario,
            seed,
            out,
            log_events,
            ct_diagnostics,
        } => {
            let opts = EvalOptions {
                scenario: scenario.map(Scenario::from_dir).transpose()?,
                seed,
                out,
                log_events,
                ct_diagnostics,
            };
            let report = harness::evaluate(&checkpoint, opts)?;
            summary(&report);
        }
        Command::Bench {
            controllers,
            grid,
            episodes,
            seeds,
            seed,
            config,
            episode_seconds,
            out,
            log_events,
            ct_diagnostics,
        } => {
            let (rows, cols) = parse_grid(&grid)?;
            let base = base_config(config.as_ref())?;
            let kinds = controllers
                .iter()
                .map(|c| c.parse::<ControllerKind>())
                .collect::<std::result::Result<Vec<_>, _>>()?;
            for s in seed..seed + seeds {
                for &kind in &kinds {
                    let mut cfg = base.clone();
                    cfg.controller = kind;
                    cfg.seed = s;
                    cfg.episodes = episodes;
                    cfg.log_events = log_events;
                    cfg.ct_diagnostics = ct_diagnostics;
                    // Keep the base config's road length and demand, resize the grid.
                    cfg.scenario = match cfg.scenario {
                        Scenario::Grid { road_length, demand, .. } => Scenario::Grid {
                            rows,
                            cols,
                            road_length,
                            demand,
                        },
                        Scenario::Files { .. } => Scenario::grid(rows, cols),
                    };
                    if let Some(e) = episode_seconds {
                        cfg.sim.episode_seconds = e;
                    }
                    cfg.out_dir = out.as_ref().map(|d| d.join(format!("{kind}_seed{s}")));
                    let report = harness::train(cfg)?;
                    summary(&report);
                }
            }
        }
        Command::Scenario { grid, road_length, out } => {
            let (rows, cols) = parse_grid(&grid)?;
            let net = build_grid(rows, cols, road_length)?;
            let flow = grid_flow(&net, &GridDemand::default());
            std::fs::create_dir_all(&out)?;
            save_network(&net, out.join(format!("roadnet_{rows}_{cols}.json")))?;
            save_flow(&flow, &net, out.join("flow.json"))?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
