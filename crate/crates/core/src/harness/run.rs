use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ControllerKind, CritiqueMode, ExperimentConfig, Scenario};
use super::policy::{fixed_time, max_pressure, random_phase};
use super::report::{CtRecord, CtTotals, EpisodeStats, RunReport};
use super::{io_err, HarnessError, Result};
use crate::critique::interval::{critique, Verdict};
use crate::critique::CriticState;
use crate::dqn::{
    reward, select_action, soft_update, td_update, Observation, PredictionNet, QNet, ReplayBuffer, Transition,
    NUM_ACTIONS,
};
use crate::netmodel::{FlowSpec, IntersectionId, Network};
use crate::simcore::SimState;
use crate::tune::tune;

// Independent random streams of one run.
const STREAM_INIT: u64 = 0;
const STREAM_ACTION: u64 = 1;
const STREAM_REPLAY: u64 = 2;
const STREAM_CRITIQUE: u64 = 3;
const STREAM_SIM: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Learned state shared by all intersections, plus the per-intersection
/// histories the critique and tune layers read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub online: QNet,
    pub target: QNet,
    pub prediction: PredictionNet,
    pub buffer: ReplayBuffer,
}

impl Agent {
    fn new(kind: ControllerKind, cfg: &ExperimentConfig, intersections: usize, rng: &mut ChaCha8Rng) -> Option<Self> {
        let enc = kind.encoding()?;
        let online = QNet::new(enc, &cfg.train, rng);
        let prediction = PredictionNet::new(&cfg.train.pred_hidden, rng);
        Some(Agent {
            target: online.clone(),
            online,
            prediction,
            buffer: ReplayBuffer::new(cfg.train.buffer_capacity, cfg.critique.window, intersections),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub config_hash: String,
    /// Training episodes completed.
    pub episode: usize,
    /// Learned state; transitions are not stored, histories are.
    pub agent: Option<Agent>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| HarnessError::Serde(e.to_string()))?;
        std::fs::write(path, json).map_err(io_err(path))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| HarnessError::Serde(e.to_string()))?;
    if ck.config.hash() != ck.config_hash {
        return Err(HarnessError::CheckpointMismatch(
            "stored config hash does not match the stored config".into(),
        ));
    }
    if ck.agent.is_some() != ck.config.controller.learns() {
        return Err(HarnessError::CheckpointMismatch(format!(
            "controller {} and stored parameters disagree",
            ck.config.controller
        )));
    }
    Ok(ck)
}

/// One run's mutable state: network, agent and random streams.
pub struct Runner {
    pub cfg: ExperimentConfig,
    pub net: Arc<Network>,
    pub flow: FlowSpec,
    pub agent: Option<Agent>,
    rng_action: ChaCha8Rng,
    rng_replay: ChaCha8Rng,
    rng_critique: ChaCha8Rng,
    rng_sim: ChaCha8Rng,
    diagnostics: Vec<CtRecord>,
    last_events: Option<Vec<crate::simcore::SimEvent>>,
}

struct Decision {
    obs: Option<(Observation, [f64; NUM_ACTIONS])>,
    phase: u8,
    switched: bool,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (net, flow) = cfg.scenario.load()?;
        let mut init = stream(cfg.seed, STREAM_INIT);
        let agent = Agent::new(cfg.controller, &cfg, net.intersections.len(), &mut init);
        Ok(Runner {
            rng_action: stream(cfg.seed, STREAM_ACTION),
            rng_replay: stream(cfg.seed, STREAM_REPLAY),
            rng_critique: stream(cfg.seed, STREAM_CRITIQUE),
            rng_sim: stream(cfg.seed, STREAM_SIM),
            cfg,
            net,
            flow,
            agent,
            diagnostics: Vec::new(),
            last_events: None,
        })
    }

    /// Critique/tune records collected so far.
    pub fn diagnostics(&self) -> &[CtRecord] {
        &self.diagnostics
    }

    /// Event log of the most recent episode run with event logging.
    pub fn events(&self) -> Option<&[crate::simcore::SimEvent]> {
        self.last_events.as_deref()
    }

    fn ct_active(&self, episode: usize) -> bool {
        self.cfg.controller == ControllerKind::BctAplight && episode > self.cfg.ct_start_episode
    }

    fn fit_critics(&mut self, stats: &mut EpisodeStats) -> Vec<CriticState> {
        let n = self.net.intersections.len();
        let Some(agent) = &self.agent else {
            return vec![CriticState::WarmUp; n];
        };
        if self.cfg.critique_mode == CritiqueMode::AlwaysAccept {
            return vec![CriticState::WarmUp; n];
        }
        (0..n)
            .map(|i| {
                let hist: Vec<f64> = agent.buffer.rewards[i].iter().copied().collect();
                let (c, rep) = CriticState::fit(&hist, &self.cfg.critique, &mut self.rng_critique);
                log::debug!("critic {i}: {} {:?}", rep.state, rep.order);
                if c.is_ready() {
                    stats.critics_ready += 1;
                }
                c
            })
            .collect()
    }

    /// Run one episode. `episode` is 1-based; with `eval` the policy is
    /// greedy and nothing is learned.
    pub fn run_episode(&mut self, episode: usize, eval: bool, log_events: bool) -> Result<EpisodeStats> {
        let started = Instant::now();
        let kind = self.cfg.controller;
        let epsilon = if eval { 0.0 } else { self.cfg.train.epsilon(episode) };
        let ct_active = self.ct_active(episode);
        let mut stats = EpisodeStats {
            episode,
            eval,
            epsilon,
            ct_active,
            actions: self.cfg.record_actions.then(Vec::new),
            ..Default::default()
        };
        let critics_needed = ct_active && self.cfg.critique_mode == CritiqueMode::Bayesian;
        let mut critics = if critics_needed {
            self.fit_critics(&mut stats)
        } else {
            Vec::new()
        };

        let sim_seed: u64 = self.rng_sim.random();
        let mut sim = SimState::reset(self.net.clone(), &self.flow, self.cfg.sim.clone(), sim_seed)?;
        if log_events {
            sim.enable_event_log();
        }
        let n = self.net.intersections.len();
        let spa = sim.config().steps_per_action();
        let horizon = self.cfg.critique.horizon;
        let mut reward_sums = vec![0.0; n];
        let mut td_losses = (0.0, 0usize);
        let mut pred_losses = (0.0, 0usize);
        let mut interval = 0usize;

        while !sim.done() {
            let mut decisions = Vec::with_capacity(n);
            for i in 0..n {
                let id = IntersectionId(i);
                let raw = sim.observe(id);
                let (phase, obs) = match (&self.agent, kind) {
                    (Some(agent), _) => {
                        let obs = Observation::from_raw(&raw);
                        let q = agent.online.q_values(&obs)?;
                        let act = select_action(&q, epsilon, raw.phase, &mut self.rng_action);
                        let mut phase = act.phase;
                        if ct_active {
                            stats.ct_decisions += 1;
                            let mut rec = CtRecord {
                                episode,
                                interval,
                                intersection: i,
                                dqn_phase: act.phase,
                                predicted_reward: None,
                                lower: None,
                                upper: None,
                                rejected: false,
                                tune: None,
                                applied_phase: act.phase,
                            };
                            if let Some(critic) = critics.get(i) {
                                if let Some(ci) = critic.interval(horizon, &mut self.rng_critique) {
                                    let r_hat = agent.prediction.predict(&obs, &q)?;
                                    rec.predicted_reward = Some(r_hat);
                                    rec.lower = Some(ci.lower);
                                    rec.upper = Some(ci.upper);
                                    rec.rejected = critique(r_hat, &ci) == Verdict::Reject;
                                }
                            }
                            if rec.rejected {
                                stats.rejects += 1;
                                let hist: Vec<Vec<f64>> = agent.buffer.q_history[i]
                                    .iter()
                                    .map(|h| h.iter().copied().collect())
                                    .collect();
                                if let Some(d) = tune(&q, &hist, &self.cfg.tune)? {
                                    if d.chosen != phase {
                                        stats.overrides += 1;
                                        phase = d.chosen;
                                    }
                                    rec.tune = Some(d);
                                }
                            }
                            rec.applied_phase = phase;
                            if self.cfg.ct_diagnostics {
                                self.diagnostics.push(rec);
                            }
                        }
                        (phase, Some((obs, q)))
                    }
                    (None, ControllerKind::Fixedtime) => (fixed_time(interval), None),
                    (None, ControllerKind::Maxpressure) => (max_pressure(&raw), None),
                    (None, _) => (random_phase(&mut self.rng_action), None),
                };
                if let Some(a) = stats.actions.as_mut() {
                    a.push(phase);
                }
                decisions.push(Decision {
                    obs,
                    phase,
                    switched: false,
                });
            }
            for (i, d) in decisions.iter_mut().enumerate() {
                d.switched = sim.apply_action(IntersectionId(i), d.phase)?;
            }

            let mut throughput = vec![0usize; n];
            let mut queue = vec![0usize; n];
            for _ in 0..spa {
                if sim.done() {
                    break;
                }
                let rep = sim.step();
                for (i, s) in rep.intersections.iter().enumerate() {
                    throughput[i] += s.throughput;
                    queue[i] = s.queue;
                }
            }

            for (i, d) in decisions.into_iter().enumerate() {
                let r = reward(queue[i] as f64, throughput[i] as f64, d.switched, &self.cfg.train.reward);
                reward_sums[i] += r;
                stats.decisions += 1;
                let Some(agent) = self.agent.as_mut() else {
                    continue;
                };
                let (obs, q) = d.obs.expect("learned controllers record observations");
                agent.buffer.record_q(i, &q, self.cfg.critique.window);
                agent.buffer.record_reward(i, r);
                if let Some(c) = critics.get_mut(i) {
                    c.observe(r);
                }
                if !eval {
                    if kind == ControllerKind::BctAplight {
                        let l = agent.prediction.train_step(
                            &obs,
                            &q,
                            r,
                            self.cfg.train.pred_lr,
                            self.cfg.train.grad_clip,
                        )?;
                        pred_losses.0 += l;
                        pred_losses.1 += 1;
                    }
                    let next = Observation::from_raw(&sim.observe(IntersectionId(i)));
                    agent.buffer.push(Transition {
                        state: obs,
                        action: d.phase,
                        reward: r,
                        next,
                    });
                }
            }

            if let (false, Some(agent)) = (eval, self.agent.as_mut()) {
                if agent.buffer.len() >= self.cfg.train.warmup_transitions.max(1) {
                    for _ in 0..self.cfg.train.updates_per_step {
                        let batch = agent.buffer.sample(self.cfg.train.batch_size, &mut self.rng_replay);
                        let loss = td_update(&mut agent.online, &agent.target, &batch, &self.cfg.train)?;
                        soft_update(&mut agent.target, &agent.online, self.cfg.train.tau)?;
                        td_losses.0 += loss;
                        td_losses.1 += 1;
                    }
                }
            }
            interval += 1;
        }

        stats.metrics = sim.finalize_metrics();
        let per = interval.max(1) as f64;
        stats.intersection_rewards = reward_sums.iter().map(|s| s / per).collect();
        stats.mean_reward = reward_sums.iter().sum::<f64>() / (per * n.max(1) as f64);
        stats.td_loss = td_losses.0 / td_losses.1.max(1) as f64;
        stats.prediction_loss = pred_losses.0 / pred_losses.1.max(1) as f64;
        stats.wall_seconds = started.elapsed().as_secs_f64();
        self.last_events = sim.events().map(<[_]>::to_vec);
        Ok(stats)
    }

    pub fn checkpoint(&self, episode: usize) -> Checkpoint {
        let agent = self.agent.clone().map(|mut a| {
            a.buffer.transitions.clear();
            a
        });
        Checkpoint {
            config_hash: self.cfg.hash(),
            config: self.cfg.clone(),
            episode,
            agent,
        }
    }

    fn write_diagnostics(&self, dir: &Path) -> Result<()> {
        let p = dir.join("ct_diagnostics.jsonl");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&p).map_err(io_err(&p))?);
        for r in &self.diagnostics {
            let line = serde_json::to_string(r).map_err(|e| HarnessError::Serde(e.to_string()))?;
            writeln!(f, "{line}").map_err(io_err(&p))?;
        }
        f.flush().map_err(io_err(&p))
    }

    fn write_events(&self, dir: &Path) -> Result<()> {
        let Some(events) = &self.last_events else {
            return Ok(());
        };
        let p = dir.join("events.log");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&p).map_err(io_err(&p))?);
        for e in events {
            writeln!(f, "{e}").map_err(io_err(&p))?;
        }
        f.flush().map_err(io_err(&p))
    }

    /// Write the per-run side files (diagnostics, event log) into `dir`.
    pub fn write_side_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        if self.cfg.ct_diagnostics {
            self.write_diagnostics(dir)?;
        }
        if self.cfg.log_events {
            self.write_events(dir)?;
        }
        Ok(())
    }
}

fn finish(report: &mut RunReport, started: Instant) {
    let last = report.final_eval.as_ref().or(report.episodes.last());
    if let Some(e) = last {
        report.final_metrics = e.metrics;
        report.final_reward = e.mean_reward;
    }
    report.ct = CtTotals::from_episodes(&report.episodes);
    report.wall_seconds = started.elapsed().as_secs_f64();
}

fn empty_report(cfg: &ExperimentConfig) -> RunReport {
    RunReport {
        controller: cfg.controller.to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        episodes: Vec::new(),
        final_eval: None,
        final_metrics: Default::default(),
        final_reward: 0.0,
        ct: CtTotals::default(),
        wall_seconds: 0.0,
        aborted: None,
    }
}

/// Train for `cfg.episodes` episodes, then run one greedy evaluation
/// episode. Component errors stop the run and are reported in `aborted`.
pub fn train(cfg: ExperimentConfig) -> Result<RunReport> {
    let (report, _) = train_with_runner(cfg)?;
    Ok(report)
}

/// As [`train`], also returning the runner for inspection.
pub fn train_with_runner(cfg: ExperimentConfig) -> Result<(RunReport, Runner)> {
    let started = Instant::now();
    let mut runner = Runner::new(cfg)?;
    let cfg = runner.cfg.clone();
    let mut report = empty_report(&cfg);
    let out = cfg.out_dir.clone();
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let p = dir.join("config.toml");
        std::fs::write(&p, cfg.to_toml()?).map_err(io_err(&p))?;
    }
    let save = |runner: &Runner, ep: usize, name: String| -> Result<()> {
        if let Some(dir) = &out {
            runner.checkpoint(ep).save(&dir.join(name))?;
        }
        Ok(())
    };

    for ep in 1..=cfg.episodes {
        match runner.run_episode(ep, false, false) {
            Ok(s) => {
                log::info!(
                    "{} ep {ep}: att {:.1} aql {:.2} awt {:.1} reward {:.3} rejects {}/{} ({:.1}s)",
                    cfg.controller,
                    s.metrics.att,
                    s.metrics.aql,
                    s.metrics.awt,
                    s.mean_reward,
                    s.rejects,
                    s.ct_decisions,
                    s.wall_seconds
                );
                report.episodes.push(s);
            }
            Err(e) => {
                log::error!("episode {ep} aborted: {e}");
                report.aborted = Some(format!("episode {ep}: {e}"));
                break;
            }
        }
        if cfg.checkpoint_every > 0 && ep % cfg.checkpoint_every == 0 {
            save(&runner, ep, format!("checkpoint_ep{ep:04}.json"))?;
        }
    }
    let done = report.episodes.len();
    if report.aborted.is_none() && cfg.final_eval {
        match runner.run_episode(done + 1, true, cfg.log_events) {
            Ok(s) => report.final_eval = Some(s),
            Err(e) => report.aborted = Some(format!("evaluation: {e}")),
        }
    }
    finish(&mut report, started);
    if let Some(dir) = &out {
        save(&runner, done, "checkpoint_final.json".into())?;
        report.write(dir)?;
        runner.write_side_files(dir)?;
    }
    Ok((report, runner))
}

/// Overrides for [`evaluate`].
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    /// Results directory.
    pub out: Option<PathBuf>,
    pub log_events: bool,
    pub ct_diagnostics: bool,
}

/// One greedy episode from a checkpoint.
pub fn evaluate(checkpoint: impl AsRef<Path>, opts: EvalOptions) -> Result<RunReport> {
    let started = Instant::now();
    let ck = load_checkpoint(checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(s) = opts.scenario {
        cfg.scenario = s;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    cfg.log_events |= opts.log_events;
    cfg.ct_diagnostics |= opts.ct_diagnostics;
    let out = opts.out;
    cfg.out_dir = out.clone();
    let mut runner = Runner::new(cfg.clone())?;
    if let Some(mut agent) = ck.agent {
        let n = runner.net.intersections.len();
        if agent.buffer.rewards.len() != n {
            if cfg.controller == ControllerKind::BctAplight {
                return Err(HarnessError::CheckpointMismatch(format!(
                    "checkpoint has histories for {} intersections, scenario has {n}",
                    agent.buffer.rewards.len()
                )));
            }
            agent.buffer = ReplayBuffer::new(agent.buffer.capacity, agent.buffer.history_cap, n);
        }
        let fresh = runner.agent.as_ref().expect("learning controller");
        if fresh.online.param_count() != agent.online.param_count() {
            return Err(HarnessError::CheckpointMismatch("parameter shapes differ".into()));
        }
        runner.agent = Some(agent);
    }
    let mut report = empty_report(&cfg);
    let s = runner.run_episode(ck.episode + 1, true, cfg.log_events)?;
    report.final_eval = Some(s);
    finish(&mut report, started);
    if let Some(dir) = &out {
        report.write(dir)?;
        runner.write_side_files(dir)?;
    }
    Ok(report)
}
