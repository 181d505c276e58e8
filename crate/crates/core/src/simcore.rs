//! Discrete-time queue simulator.
//!
//! Vehicles traverse a lane at free speed, then queue at the stop line until
//! the signal serves their lane and the target lane has room. Each step runs,
//! in order: exits of vehicles done with their route, stop-line discharge
//! (lanes served in a seeded random order), injection of due vehicles,
//! waiting bookkeeping, and signal stage timers.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{
    Direction, FlowSpec, IntersectionId, LaneId, LaneKind, Network, RoadId, NUM_PHASES,
    VEHICLE_GAP,
};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("phase {0} out of range 1..=8")]
    PhaseOutOfRange(u8),
    #[error("unknown intersection {0}")]
    UnknownIntersection(usize),
    #[error("invalid simulator config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub step_seconds: f64,
    pub min_action_duration: f64,
    pub yellow: f64,
    pub all_red: f64,
    /// Vehicles per green second per upstream lane.
    pub saturation_flow: f64,
    pub vehicle_gap: f64,
    pub free_speed: f64,
    pub episode_seconds: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            step_seconds: 1.0,
            min_action_duration: 30.0,
            yellow: 3.0,
            all_red: 2.0,
            saturation_flow: 1.0,
            vehicle_gap: VEHICLE_GAP,
            free_speed: 11.0,
            episode_seconds: 3600.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("step_seconds", self.step_seconds),
            ("min_action_duration", self.min_action_duration),
            ("saturation_flow", self.saturation_flow),
            ("vehicle_gap", self.vehicle_gap),
            ("free_speed", self.free_speed),
            ("episode_seconds", self.episode_seconds),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.yellow >= 0.0 && self.all_red >= 0.0) {
            return Err(SimError::Config("yellow and all_red must be non-negative".into()));
        }
        if self.min_action_duration <= self.yellow + self.all_red {
            return Err(SimError::Config(
                "min_action_duration must exceed yellow + all_red".into(),
            ));
        }
        if self.saturation_flow * self.step_seconds < 1.0 {
            return Err(SimError::Config(
                "saturation_flow * step_seconds must allow at least one vehicle per step".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self, seconds: f64) -> u64 {
        (seconds / self.step_seconds).round() as u64
    }

    pub fn steps_per_action(&self) -> u64 {
        self.steps(self.min_action_duration)
    }

    pub fn episode_steps(&self) -> u64 {
        self.steps(self.episode_seconds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalStage {
    Green,
    Yellow,
    AllRed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalState {
    /// Phase that is green, or that will be green once the clearance ends.
    pub phase: u8,
    pub stage: SignalStage,
    /// Steps left in a yellow or all-red stage.
    pub remaining: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub id: usize,
    pub route: Arc<[RoadId]>,
    /// Index into `route` of the road the vehicle is on (or will enter).
    pub route_pos: usize,
    pub lane: Option<LaneId>,
    pub scheduled_time: f64,
    pub enter_time: Option<f64>,
    pub exit_time: Option<f64>,
    pub lane_enter_time: f64,
    pub stopline_time: f64,
    pub waiting: bool,
    pub waiting_time: f64,
}

impl VehicleRecord {
    pub fn in_network(&self) -> bool {
        self.enter_time.is_some() && self.exit_time.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Enter,
    Move,
    Exit,
    Wait,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Enter => "enter",
            EventKind::Move => "move",
            EventKind::Exit => "exit",
            EventKind::Wait => "wait",
        })
    }
}

/// One line of the optional event log. `time` is when the event takes effect.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub vehicle: usize,
    pub lane: Option<LaneId>,
    pub kind: EventKind,
}

impl fmt::Display for SimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.lane {
            Some(l) => write!(f, "{} {} {} {}", self.time, self.vehicle, l.0, self.kind),
            None => write!(f, "{} {} - {}", self.time, self.vehicle, self.kind),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsAccumulator {
    pub steps: u64,
    /// Sum over steps of the network-wide waiting count.
    pub queued_vehicle_steps: f64,
    pub entered: usize,
    pub exited: usize,
    /// Sum of (exit - enter) over exited vehicles.
    pub completed_travel_time: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub att: f64,
    pub aql: f64,
    pub awt: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntersectionStep {
    /// Waiting vehicles on the 12 upstream lanes after the step.
    pub queue: usize,
    /// Running vehicles on the 12 upstream lanes after the step.
    pub running: usize,
    /// Vehicles that crossed the stop line this step.
    pub throughput: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Clock after the step.
    pub time: f64,
    pub intersections: Vec<IntersectionStep>,
    pub entered: usize,
    pub exited: usize,
    pub waiting: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneCounts {
    pub waiting: u32,
    pub running: u32,
}

impl LaneCounts {
    pub fn total(&self) -> u32 {
        self.waiting + self.running
    }
}

/// Per-lane counts around one intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub intersection: IntersectionId,
    pub phase: u8,
    /// `upstream[approach][kind]`.
    pub upstream: [[LaneCounts; 3]; 4],
    /// `downstream[exit][lane index]`.
    pub downstream: [[LaneCounts; 3]; 4],
    /// Waiting total on the upstream lanes of the neighbor on each side,
    /// zero at the boundary.
    pub neighbor_queues: [f64; 4],
}

impl RawObservation {
    pub fn upstream_queue(&self) -> u32 {
        self.upstream.iter().flatten().map(|c| c.waiting).sum()
    }
}

#[derive(Debug, Clone)]
struct LaneState {
    queue: VecDeque<usize>,
    capacity: usize,
    /// Seconds to traverse the lane at free speed.
    travel: f64,
}

#[derive(Debug, Clone)]
struct Injection {
    step: u64,
    vehicle: usize,
}

/// Dynamic simulator state. Cloning gives an independent replica.
#[derive(Debug, Clone)]
pub struct SimState {
    net: Arc<Network>,
    cfg: SimConfig,
    rng: ChaCha8Rng,
    step_index: u64,
    lanes: Vec<LaneState>,
    signals: Vec<SignalState>,
    vehicles: Vec<VehicleRecord>,
    schedule: Vec<Injection>,
    next_injection: usize,
    pending: Vec<VecDeque<usize>>,
    served_lanes: Vec<(usize, LaneId)>,
    metrics: MetricsAccumulator,
    events: Option<Vec<SimEvent>>,
    yellow_steps: u64,
    all_red_steps: u64,
    per_step_discharge: usize,
}

/// Lane kind a vehicle uses on `route[pos]`.
pub fn lane_choice(net: &Network, route: &[RoadId], pos: usize) -> LaneKind {
    if pos + 1 < route.len() {
        if let Some(k) = net.turn(route[pos], route[pos + 1]) {
            return k;
        }
    }
    if pos > 0 {
        if let Some(k) = net.turn(route[pos - 1], route[pos]) {
            return k;
        }
    }
    LaneKind::Straight
}

fn lane_for(net: &Network, route: &[RoadId], pos: usize) -> LaneId {
    net.road(route[pos]).lanes[lane_choice(net, route, pos).index()]
}

impl SimState {
    /// Fresh state at clock 0 with every injection of `flow` scheduled.
    pub fn reset(net: Arc<Network>, flow: &FlowSpec, cfg: SimConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let lanes = net
            .lanes
            .iter()
            .map(|l| LaneState {
                queue: VecDeque::new(),
                capacity: ((l.length / cfg.vehicle_gap).floor() as usize).max(1),
                travel: l.length / cfg.free_speed,
            })
            .collect();
        let signals = net
            .intersections
            .iter()
            .map(|_| SignalState {
                phase: 1,
                stage: SignalStage::Green,
                remaining: 0,
            })
            .collect();

        let mut timed: Vec<(f64, usize, Arc<[RoadId]>)> = Vec::new();
        for (ri, rule) in flow.rules.iter().enumerate() {
            let route: Arc<[RoadId]> = rule.route.clone().into();
            for t in rule.times(cfg.episode_seconds) {
                timed.push((t, ri, route.clone()));
            }
        }
        timed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut vehicles = Vec::with_capacity(timed.len());
        let mut schedule = Vec::with_capacity(timed.len());
        for (t, _, route) in timed {
            let id = vehicles.len();
            let lane = lane_for(&net, &route, 0);
            vehicles.push(VehicleRecord {
                id,
                route,
                route_pos: 0,
                lane: Some(lane),
                scheduled_time: t,
                enter_time: None,
                exit_time: None,
                lane_enter_time: 0.0,
                stopline_time: 0.0,
                waiting: false,
                waiting_time: 0.0,
            });
            schedule.push(Injection {
                step: (t / cfg.step_seconds).ceil() as u64,
                vehicle: id,
            });
        }

        let mut served_lanes = Vec::new();
        for inter in &net.intersections {
            for lane in inter.upstream_lanes() {
                served_lanes.push((inter.id.0, lane));
            }
        }
        let n_lanes = net.lanes.len();
        Ok(SimState {
            yellow_steps: cfg.steps(cfg.yellow),
            all_red_steps: cfg.steps(cfg.all_red),
            per_step_discharge: (cfg.saturation_flow * cfg.step_seconds).floor() as usize,
            net,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step_index: 0,
            lanes,
            signals,
            vehicles,
            schedule,
            next_injection: 0,
            pending: vec![VecDeque::new(); n_lanes],
            served_lanes,
            metrics: MetricsAccumulator::default(),
            events: None,
        })
    }

    pub fn enable_event_log(&mut self) {
        self.events.get_or_insert_with(Vec::new);
    }

    pub fn events(&self) -> Option<&[SimEvent]> {
        self.events.as_deref()
    }

    pub fn network(&self) -> &Arc<Network> {
        &self.net
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn clock(&self) -> f64 {
        self.step_index as f64 * self.cfg.step_seconds
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn done(&self) -> bool {
        self.step_index >= self.cfg.episode_steps()
    }

    pub fn signal(&self, i: IntersectionId) -> &SignalState {
        &self.signals[i.0]
    }

    pub fn vehicles(&self) -> &[VehicleRecord] {
        &self.vehicles
    }

    pub fn metrics(&self) -> &MetricsAccumulator {
        &self.metrics
    }

    pub fn lane_occupancy(&self, lane: LaneId) -> usize {
        self.lanes[lane.0].queue.len()
    }

    pub fn lane_capacity(&self, lane: LaneId) -> usize {
        self.lanes[lane.0].capacity
    }

    /// Vehicle ids on a lane, front of queue first.
    pub fn lane_vehicles(&self, lane: LaneId) -> impl Iterator<Item = usize> + '_ {
        self.lanes[lane.0].queue.iter().copied()
    }

    /// Vehicles due for injection but held back by a full entry lane, or not
    /// yet due.
    pub fn pending_count(&self) -> usize {
        self.pending.iter().map(VecDeque::len).sum::<usize>()
            + (self.schedule.len() - self.next_injection)
    }

    pub fn in_network_count(&self) -> usize {
        self.lanes.iter().map(|l| l.queue.len()).sum()
    }

    /// Request `phase` at intersection `i`. Returns whether a switch was
    /// scheduled (yellow then all-red before the new green).
    pub fn apply_action(&mut self, i: IntersectionId, phase: u8) -> Result<bool> {
        if !(1..=NUM_PHASES as u8).contains(&phase) {
            return Err(SimError::PhaseOutOfRange(phase));
        }
        let sig = self
            .signals
            .get_mut(i.0)
            .ok_or(SimError::UnknownIntersection(i.0))?;
        if sig.phase == phase {
            return Ok(false);
        }
        sig.phase = phase;
        if self.yellow_steps > 0 {
            sig.stage = SignalStage::Yellow;
            sig.remaining = self.yellow_steps;
        } else if self.all_red_steps > 0 {
            sig.stage = SignalStage::AllRed;
            sig.remaining = self.all_red_steps;
        } else {
            sig.stage = SignalStage::Green;
            sig.remaining = 0;
        }
        Ok(true)
    }

    /// Whether the upstream lane (approach, kind) at `i` may discharge now.
    pub fn lane_allowed(&self, i: IntersectionId, approach: Direction, kind: LaneKind) -> bool {
        if kind == LaneKind::Right {
            return true;
        }
        let sig = &self.signals[i.0];
        sig.stage == SignalStage::Green
            && self.net.intersections[i.0]
                .phase(sig.phase)
                .is_some_and(|p| p.allows(approach, kind))
    }

    fn log(&mut self, time: f64, vehicle: usize, lane: Option<LaneId>, kind: EventKind) {
        if let Some(ev) = self.events.as_mut() {
            ev.push(SimEvent {
                time,
                vehicle,
                lane,
                kind,
            });
        }
    }

    pub fn step(&mut self) -> StepReport {
        let dt = self.cfg.step_seconds;
        let t = self.clock();
        let t_next = (self.step_index + 1) as f64 * dt;
        let mut moved = vec![false; self.vehicles.len()];
        let mut throughput = vec![0usize; self.net.intersections.len()];

        // Exits at the end of the route.
        for li in 0..self.lanes.len() {
            while let Some(&v) = self.lanes[li].queue.front() {
                let veh = &self.vehicles[v];
                if veh.stopline_time > t || veh.route_pos + 1 < veh.route.len() {
                    break;
                }
                self.lanes[li].queue.pop_front();
                let veh = &mut self.vehicles[v];
                veh.exit_time = Some(t_next);
                veh.lane = None;
                moved[v] = true;
                let enter = veh.enter_time.expect("vehicle in network has entered");
                self.metrics.exited += 1;
                self.metrics.completed_travel_time += t_next - enter;
                self.log(t_next, v, Some(LaneId(li)), EventKind::Exit);
            }
        }

        // Stop-line discharge.
        let mut order = std::mem::take(&mut self.served_lanes);
        order.shuffle(&mut self.rng);
        for &(inter, lane) in &order {
            let (approach, kind) = {
                let l = self.net.lane(lane);
                (l.direction.opposite(), l.kind)
            };
            if !self.lane_allowed(IntersectionId(inter), approach, kind) {
                continue;
            }
            for _ in 0..self.per_step_discharge {
                let Some(&v) = self.lanes[lane.0].queue.front() else {
                    break;
                };
                let veh = &self.vehicles[v];
                if veh.stopline_time > t {
                    break;
                }
                let next_pos = veh.route_pos + 1;
                if next_pos >= veh.route.len() {
                    break;
                }
                let target = lane_for(&self.net, &veh.route, next_pos);
                if self.lanes[target.0].queue.len() >= self.lanes[target.0].capacity {
                    break;
                }
                self.lanes[lane.0].queue.pop_front();
                self.lanes[target.0].queue.push_back(v);
                let travel = self.lanes[target.0].travel;
                let veh = &mut self.vehicles[v];
                veh.route_pos = next_pos;
                veh.lane = Some(target);
                veh.lane_enter_time = t_next;
                veh.stopline_time = t_next + travel;
                moved[v] = true;
                throughput[inter] += 1;
                self.log(t_next, v, Some(target), EventKind::Move);
            }
        }
        self.served_lanes = order;

        // Injection.
        while self.next_injection < self.schedule.len()
            && self.schedule[self.next_injection].step <= self.step_index
        {
            let v = self.schedule[self.next_injection].vehicle;
            let lane = self.vehicles[v].lane.expect("scheduled vehicle has an entry lane");
            self.pending[lane.0].push_back(v);
            self.next_injection += 1;
        }
        for li in 0..self.lanes.len() {
            while !self.pending[li].is_empty()
                && self.lanes[li].queue.len() < self.lanes[li].capacity
            {
                let v = self.pending[li].pop_front().expect("nonempty");
                self.lanes[li].queue.push_back(v);
                let travel = self.lanes[li].travel;
                let veh = &mut self.vehicles[v];
                veh.enter_time = Some(t_next);
                veh.lane_enter_time = t_next;
                veh.stopline_time = t_next + travel;
                moved[v] = true;
                self.metrics.entered += 1;
                self.log(t_next, v, Some(LaneId(li)), EventKind::Enter);
            }
        }

        // Waiting flags.
        let mut waiting_total = 0usize;
        for li in 0..self.lanes.len() {
            for qi in 0..self.lanes[li].queue.len() {
                let v = self.lanes[li].queue[qi];
                let veh = &mut self.vehicles[v];
                veh.waiting = !moved[v] && veh.stopline_time <= t;
                if veh.waiting {
                    veh.waiting_time += dt;
                    waiting_total += 1;
                    if let Some(ev) = self.events.as_mut() {
                        ev.push(SimEvent {
                            time: t_next,
                            vehicle: v,
                            lane: Some(LaneId(li)),
                            kind: EventKind::Wait,
                        });
                    }
                }
            }
        }
        self.metrics.steps += 1;
        self.metrics.queued_vehicle_steps += waiting_total as f64;

        // Signal timers.
        for sig in &mut self.signals {
            if sig.stage == SignalStage::Green {
                continue;
            }
            sig.remaining = sig.remaining.saturating_sub(1);
            if sig.remaining == 0 {
                if sig.stage == SignalStage::Yellow && self.all_red_steps > 0 {
                    sig.stage = SignalStage::AllRed;
                    sig.remaining = self.all_red_steps;
                } else {
                    sig.stage = SignalStage::Green;
                }
            }
        }

        self.step_index += 1;
        let intersections = (0..self.net.intersections.len())
            .map(|i| {
                let (queue, running) = self.upstream_counts(IntersectionId(i));
                IntersectionStep {
                    queue,
                    running,
                    throughput: throughput[i],
                }
            })
            .collect();
        StepReport {
            time: self.clock(),
            intersections,
            entered: self.metrics.entered,
            exited: self.metrics.exited,
            waiting: waiting_total,
        }
    }

    fn lane_counts(&self, lane: LaneId) -> LaneCounts {
        let now = self.clock();
        let mut c = LaneCounts::default();
        for &v in &self.lanes[lane.0].queue {
            if self.vehicles[v].stopline_time <= now {
                c.waiting += 1;
            } else {
                c.running += 1;
            }
        }
        c
    }

    fn upstream_counts(&self, i: IntersectionId) -> (usize, usize) {
        let mut q = 0;
        let mut r = 0;
        for lane in self.net.intersections[i.0].upstream_lanes() {
            let c = self.lane_counts(lane);
            q += c.waiting as usize;
            r += c.running as usize;
        }
        (q, r)
    }

    /// Lane counts around `i`. A vehicle counts as waiting once it has
    /// reached the stop line.
    pub fn observe(&self, i: IntersectionId) -> RawObservation {
        let inter = &self.net.intersections[i.0];
        let upstream = inter.upstream.map(|row| row.map(|l| self.lane_counts(l)));
        let downstream = inter.downstream.map(|row| row.map(|l| self.lane_counts(l)));
        let neighbor_queues = inter
            .neighbors
            .map(|n| n.map_or(0.0, |n| self.upstream_counts(n).0 as f64));
        RawObservation {
            intersection: i,
            phase: self.signals[i.0].phase,
            upstream,
            downstream,
            neighbor_queues,
        }
    }

    /// ATT with in-network vehicles censored at the current clock, AQL as the
    /// time-average of the network waiting count, AWT as the mean accumulated
    /// waiting time per entered vehicle. All zero when nothing entered.
    pub fn finalize_metrics(&self) -> Metrics {
        let entered = self.metrics.entered;
        if entered == 0 {
            return Metrics::default();
        }
        let now = self.clock();
        let censored: f64 = self
            .vehicles
            .iter()
            .filter(|v| v.in_network())
            .map(|v| now - v.enter_time.expect("entered"))
            .sum();
        let waiting: f64 = self
            .vehicles
            .iter()
            .filter(|v| v.enter_time.is_some())
            .map(|v| v.waiting_time)
            .sum();
        let aql = if self.metrics.steps == 0 {
            0.0
        } else {
            self.metrics.queued_vehicle_steps / self.metrics.steps as f64
        };
        Metrics {
            att: (self.metrics.completed_travel_time + censored) / entered as f64,
            aql,
            awt: waiting / entered as f64,
        }
    }
}

/// Metrics recomputed from an event log alone: enter/exit times for ATT,
/// wait events for AWT and AQL.
pub fn metrics_from_events(events: &[SimEvent], end_time: f64, steps: u64, step_seconds: f64) -> Metrics {
    use std::collections::BTreeMap;
    let mut enter: BTreeMap<usize, f64> = BTreeMap::new();
    let mut exit: BTreeMap<usize, f64> = BTreeMap::new();
    let mut waits = 0usize;
    for e in events {
        match e.kind {
            EventKind::Enter => {
                enter.insert(e.vehicle, e.time);
            }
            EventKind::Exit => {
                exit.insert(e.vehicle, e.time);
            }
            EventKind::Wait => waits += 1,
            EventKind::Move => {}
        }
    }
    if enter.is_empty() {
        return Metrics::default();
    }
    let n = enter.len() as f64;
    let travel: f64 = enter
        .iter()
        .map(|(v, t0)| exit.get(v).copied().unwrap_or(end_time) - t0)
        .sum();
    Metrics {
        att: travel / n,
        aql: if steps == 0 { 0.0 } else { waits as f64 / steps as f64 },
        awt: waits as f64 * step_seconds / n,
    }
}
