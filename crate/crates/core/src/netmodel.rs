//! Road network topology and CityFlow-compatible scenario files.
//!
//! A [`Network`] is a directed graph of controlled intersections, virtual
//! boundary nodes and three-lane roads. Every controlled intersection has one
//! incoming and one outgoing road on each of its four sides, which gives the
//! fixed 12 upstream / 12 downstream lane layout the controllers rely on.
//!
//! Roadnet and flow files use the subset of the CityFlow JSON format listed
//! below. Fields outside that subset are ignored with a warning.
//!
//! Roadnet:
//!
//! ```text
//! { "intersections": [ { "id": str, "point": {"x": f64, "y": f64},
//!                        "virtual": bool, ... } ],
//!   "roads": [ { "id": str, "points": [{"x": f64, "y": f64}, ...],
//!                "lanes": [{"width": f64, "maxSpeed": f64}] x3,
//!                "startIntersection": str, "endIntersection": str } ] }
//! ```
//!
//! Flow: `[ { "vehicle": {...}, "route": [road ids], "interval": f64,
//! "startTime": f64, "endTime": f64 } ]`. A negative `endTime` means the rule
//! stays active for the whole episode.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Space reserved per queued vehicle, in meters.
pub const VEHICLE_GAP: f64 = 7.5;

/// Default lane speed limit written to generated roadnets (m/s).
pub const DEFAULT_MAX_SPEED: f64 = 11.111;

/// Number of signal phases at every controlled intersection.
pub const NUM_PHASES: usize = 8;

/// Lanes per road.
pub const LANES_PER_ROAD: usize = 3;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("route error: {0}")]
    Route(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NetError>;

/// Compass side of an intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    E,
    W,
    S,
    N,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::E, Direction::W, Direction::S, Direction::N];

    pub fn index(self) -> usize {
        match self {
            Direction::E => 0,
            Direction::W => 1,
            Direction::S => 2,
            Direction::N => 3,
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::E => Direction::W,
            Direction::W => Direction::E,
            Direction::S => Direction::N,
            Direction::N => Direction::S,
        }
    }

    /// Unit vector pointing toward this side (x grows east, y grows north).
    pub fn unit(self) -> (f64, f64) {
        match self {
            Direction::E => (1.0, 0.0),
            Direction::W => (-1.0, 0.0),
            Direction::S => (0.0, -1.0),
            Direction::N => (0.0, 1.0),
        }
    }

    /// Side a heading vector points to, bucketed by dominant axis.
    pub fn from_vector(dx: f64, dy: f64) -> Option<Direction> {
        if dx == 0.0 && dy == 0.0 {
            return None;
        }
        Some(if dx.abs() >= dy.abs() {
            if dx > 0.0 {
                Direction::E
            } else {
                Direction::W
            }
        } else if dy > 0.0 {
            Direction::N
        } else {
            Direction::S
        })
    }

    fn left_of_heading(self) -> Direction {
        match self {
            Direction::E => Direction::N,
            Direction::N => Direction::W,
            Direction::W => Direction::S,
            Direction::S => Direction::E,
        }
    }

    fn right_of_heading(self) -> Direction {
        self.left_of_heading().opposite()
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::E => "E",
            Direction::W => "W",
            Direction::S => "S",
            Direction::N => "N",
        };
        f.write_str(s)
    }
}

/// Turn served by a lane. Lane index 0 is left, 1 straight, 2 right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LaneKind {
    Left,
    Straight,
    Right,
}

impl LaneKind {
    pub const ALL: [LaneKind; 3] = [LaneKind::Left, LaneKind::Straight, LaneKind::Right];

    pub fn index(self) -> usize {
        match self {
            LaneKind::Left => 0,
            LaneKind::Straight => 1,
            LaneKind::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<LaneKind> {
        LaneKind::ALL.get(i).copied()
    }
}

impl fmt::Display for LaneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LaneKind::Left => "lef",
            LaneKind::Straight => "str",
            LaneKind::Right => "rig",
        };
        f.write_str(s)
    }
}

/// Exit side reached by a vehicle arriving from `approach` and making `turn`.
pub fn turn_target(approach: Direction, turn: LaneKind) -> Direction {
    let heading = approach.opposite();
    match turn {
        LaneKind::Left => heading.left_of_heading(),
        LaneKind::Straight => heading,
        LaneKind::Right => heading.right_of_heading(),
    }
}

/// Approach side whose `turn` lane feeds the road leaving toward `exit`.
pub fn feeder(exit: Direction, turn: LaneKind) -> Direction {
    Direction::ALL
        .into_iter()
        .find(|&a| turn_target(a, turn) == exit)
        .expect("every exit side has one feeder per turn")
}

/// Turn taken when entering from `approach` and leaving toward `exit`, if legal.
pub fn turn_between(approach: Direction, exit: Direction) -> Option<LaneKind> {
    LaneKind::ALL
        .into_iter()
        .find(|&k| turn_target(approach, k) == exit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IntersectionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundaryId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RoadId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LaneId(pub usize);

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Intersection(IntersectionId),
    Boundary(BoundaryId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub id: RoadId,
    pub name: String,
    pub start: Endpoint,
    pub end: Endpoint,
    pub points: Vec<Point>,
    /// Lanes ordered left, straight, right.
    pub lanes: [LaneId; LANES_PER_ROAD],
    pub length: f64,
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: LaneId,
    pub road: RoadId,
    /// Heading of travel.
    pub direction: Direction,
    pub kind: LaneKind,
    pub length: f64,
    pub capacity: usize,
}

/// Flow of traffic from one upstream lane into one downstream lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Movement {
    pub from: LaneId,
    pub to: LaneId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    /// 1..=8.
    pub index: u8,
    /// Approach lanes with green, excluding the always-permitted right turns.
    pub green: Vec<(Direction, LaneKind)>,
    /// Every movement permitted while this phase is green, right turns included.
    pub movements: Vec<Movement>,
}

impl Phase {
    pub fn allows(&self, approach: Direction, kind: LaneKind) -> bool {
        kind == LaneKind::Right || self.green.contains(&(approach, kind))
    }
}

/// Green approach lanes of the fixed eight-phase scheme, indexed by phase - 1.
pub fn phase_scheme(index: u8) -> Option<[(Direction, LaneKind); 2]> {
    use Direction::*;
    use LaneKind::*;
    Some(match index {
        1 => [(W, Straight), (E, Straight)],
        2 => [(N, Straight), (S, Straight)],
        3 => [(W, Left), (E, Left)],
        4 => [(N, Left), (S, Left)],
        5 => [(W, Straight), (W, Left)],
        6 => [(E, Straight), (E, Left)],
        7 => [(N, Straight), (N, Left)],
        8 => [(S, Straight), (S, Left)],
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: IntersectionId,
    pub name: String,
    pub point: Point,
    /// Incoming road per approach side.
    pub in_roads: [RoadId; 4],
    /// Outgoing road per exit side.
    pub out_roads: [RoadId; 4],
    /// `upstream[approach][kind]`.
    pub upstream: [[LaneId; 3]; 4],
    /// `downstream[exit][lane index]`.
    pub downstream: [[LaneId; 3]; 4],
    pub phases: Vec<Phase>,
    /// Controlled intersection at the far end of each incoming road.
    pub neighbors: [Option<IntersectionId>; 4],
}

impl Intersection {
    pub fn upstream_lane(&self, approach: Direction, kind: LaneKind) -> LaneId {
        self.upstream[approach.index()][kind.index()]
    }

    pub fn phase(&self, index: u8) -> Option<&Phase> {
        self.phases.get(usize::from(index).checked_sub(1)?)
    }

    pub fn upstream_lanes(&self) -> impl Iterator<Item = LaneId> + '_ {
        self.upstream.iter().flatten().copied()
    }

    pub fn downstream_lanes(&self) -> impl Iterator<Item = LaneId> + '_ {
        self.downstream.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryNode {
    pub id: BoundaryId,
    pub name: String,
    pub point: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub intersections: Vec<Intersection>,
    pub boundary: Vec<BoundaryNode>,
    pub roads: Vec<Road>,
    pub lanes: Vec<Lane>,
    /// (rows, cols) of the controlled intersections.
    pub grid_dims: (usize, usize),
}

impl Network {
    pub fn road(&self, id: RoadId) -> &Road {
        &self.roads[id.0]
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id.0]
    }

    pub fn intersection(&self, id: IntersectionId) -> &Intersection {
        &self.intersections[id.0]
    }

    pub fn road_by_name(&self, name: &str) -> Option<RoadId> {
        self.roads.iter().find(|r| r.name == name).map(|r| r.id)
    }

    /// Side of `road`'s end intersection the road arrives from.
    pub fn approach_side(&self, road: RoadId) -> Option<Direction> {
        let r = self.road(road);
        match r.end {
            Endpoint::Intersection(i) => {
                let inter = self.intersection(i);
                Direction::ALL
                    .into_iter()
                    .find(|d| inter.in_roads[d.index()] == road)
            }
            Endpoint::Boundary(_) => None,
        }
    }

    /// Side of `road`'s start intersection the road leaves toward.
    pub fn exit_side(&self, road: RoadId) -> Option<Direction> {
        let r = self.road(road);
        match r.start {
            Endpoint::Intersection(i) => {
                let inter = self.intersection(i);
                Direction::ALL
                    .into_iter()
                    .find(|d| inter.out_roads[d.index()] == road)
            }
            Endpoint::Boundary(_) => None,
        }
    }

    /// Turn made at the junction between two consecutive route roads.
    pub fn turn(&self, from: RoadId, to: RoadId) -> Option<LaneKind> {
        let a = self.road(from);
        let b = self.road(to);
        if a.end != b.start {
            return None;
        }
        let Endpoint::Intersection(_) = a.end else {
            return None;
        };
        turn_between(self.approach_side(from)?, self.exit_side(to)?)
    }

    pub fn num_upstream_lanes(&self) -> usize {
        self.intersections.len() * 12
    }
}

// ---------------------------------------------------------------------------
// Synthetic grids

fn grid_node_name(x: usize, y: usize) -> String {
    format!("intersection_{x}_{y}")
}

/// CityFlow road heading code: 0 east, 1 north, 2 west, 3 south.
fn heading_code(d: Direction) -> usize {
    match d {
        Direction::E => 0,
        Direction::N => 1,
        Direction::W => 2,
        Direction::S => 3,
    }
}

/// Build a `rows` x `cols` grid with the CityFlow naming convention
/// (`intersection_x_y`, `road_x_y_heading`), boundary nodes one block outside.
pub fn build_grid(rows: usize, cols: usize, lane_length: f64) -> Result<Network> {
    if rows == 0 || cols == 0 {
        return Err(NetError::Argument(format!(
            "grid dims must be positive, got {rows}x{cols}"
        )));
    }
    if !(lane_length.is_finite() && lane_length > 0.0) {
        return Err(NetError::Argument(format!(
            "lane length must be positive, got {lane_length}"
        )));
    }
    let mut doc = RoadnetDoc::default();
    let exists = |x: usize, y: usize| {
        let inner_x = (1..=cols).contains(&x);
        let inner_y = (1..=rows).contains(&y);
        (inner_x && inner_y)
            || (inner_y && (x == 0 || x == cols + 1))
            || (inner_x && (y == 0 || y == rows + 1))
    };
    let controlled = |x: usize, y: usize| (1..=cols).contains(&x) && (1..=rows).contains(&y);
    for y in 0..=rows + 1 {
        for x in 0..=cols + 1 {
            if exists(x, y) {
                doc.intersections.push(NodeDoc {
                    id: grid_node_name(x, y),
                    point: Point {
                        x: x as f64 * lane_length,
                        y: y as f64 * lane_length,
                    },
                    is_virtual: !controlled(x, y),
                    ..Default::default()
                });
            }
        }
    }
    for y in 0..=rows + 1 {
        for x in 0..=cols + 1 {
            if !exists(x, y) {
                continue;
            }
            for d in [Direction::E, Direction::N, Direction::W, Direction::S] {
                let (dx, dy) = d.unit();
                let nx = x as i64 + dx as i64;
                let ny = y as i64 + dy as i64;
                if nx < 0 || ny < 0 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if !exists(nx, ny) || !(controlled(x, y) || controlled(nx, ny)) {
                    continue;
                }
                doc.roads.push(RoadDoc {
                    id: format!("road_{x}_{y}_{}", heading_code(d)),
                    points: vec![
                        Point {
                            x: x as f64 * lane_length,
                            y: y as f64 * lane_length,
                        },
                        Point {
                            x: nx as f64 * lane_length,
                            y: ny as f64 * lane_length,
                        },
                    ],
                    lanes: vec![LaneDoc::default(); LANES_PER_ROAD],
                    start_intersection: grid_node_name(x, y),
                    end_intersection: grid_node_name(nx, ny),
                    extra: HashMap::new(),
                });
            }
        }
    }
    from_doc(doc)
}

// ---------------------------------------------------------------------------
// CityFlow JSON documents

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LaneDoc {
    #[serde(default = "default_lane_width")]
    width: f64,
    #[serde(rename = "maxSpeed", default = "default_max_speed")]
    max_speed: f64,
}

fn default_lane_width() -> f64 {
    3.0
}

fn default_max_speed() -> f64 {
    DEFAULT_MAX_SPEED
}

impl Default for LaneDoc {
    fn default() -> Self {
        LaneDoc {
            width: default_lane_width(),
            max_speed: DEFAULT_MAX_SPEED,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RoadDoc {
    id: String,
    points: Vec<Point>,
    lanes: Vec<LaneDoc>,
    #[serde(rename = "startIntersection")]
    start_intersection: String,
    #[serde(rename = "endIntersection")]
    end_intersection: String,
    #[serde(flatten)]
    extra: HashMap<String, Value>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct NodeDoc {
    id: String,
    point: Point,
    #[serde(rename = "virtual", default)]
    is_virtual: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roads: Option<Vec<String>>,
    #[serde(rename = "roadLinks", default, skip_serializing_if = "Option::is_none")]
    road_links: Option<Value>,
    #[serde(rename = "trafficLight", default, skip_serializing_if = "Option::is_none")]
    traffic_light: Option<Value>,
    #[serde(flatten)]
    extra: HashMap<String, Value>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RoadnetDoc {
    intersections: Vec<NodeDoc>,
    roads: Vec<RoadDoc>,
    #[serde(flatten)]
    extra: HashMap<String, Value>,
}

fn warn_extra(context: &str, extra: &HashMap<String, Value>) {
    if !extra.is_empty() {
        let mut keys: Vec<_> = extra.keys().cloned().collect();
        keys.sort();
        log::warn!("{context}: ignoring unrecognized fields {keys:?}");
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| NetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load and validate a CityFlow roadnet file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let text = read_text(path.as_ref())?;
    parse_network(&text)
}

pub fn parse_network(text: &str) -> Result<Network> {
    let doc: RoadnetDoc =
        serde_json::from_str(text).map_err(|e| NetError::Parse(e.to_string()))?;
    from_doc(doc)
}

fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].dist(&w[1])).sum()
}

fn from_doc(doc: RoadnetDoc) -> Result<Network> {
    warn_extra("roadnet", &doc.extra);
    let mut node_index: HashMap<&str, Endpoint> = HashMap::new();
    let mut intersections_raw = Vec::new();
    let mut boundary = Vec::new();
    for node in &doc.intersections {
        warn_extra(&format!("intersection {}", node.id), &node.extra);
        let ep = if node.is_virtual {
            let id = BoundaryId(boundary.len());
            boundary.push(BoundaryNode {
                id,
                name: node.id.clone(),
                point: node.point,
            });
            Endpoint::Boundary(id)
        } else {
            let id = IntersectionId(intersections_raw.len());
            intersections_raw.push((id, node.id.clone(), node.point));
            Endpoint::Intersection(id)
        };
        if node_index.insert(node.id.as_str(), ep).is_some() {
            return Err(NetError::Topology(format!(
                "duplicate intersection id {}",
                node.id
            )));
        }
    }

    let mut roads = Vec::with_capacity(doc.roads.len());
    let mut lanes = Vec::with_capacity(doc.roads.len() * LANES_PER_ROAD);
    let mut road_names: HashMap<&str, RoadId> = HashMap::new();
    for rd in &doc.roads {
        warn_extra(&format!("road {}", rd.id), &rd.extra);
        let lookup = |name: &str| {
            node_index.get(name).copied().ok_or_else(|| {
                NetError::Topology(format!("road {} references unknown intersection {name}", rd.id))
            })
        };
        let start = lookup(&rd.start_intersection)?;
        let end = lookup(&rd.end_intersection)?;
        if rd.lanes.len() != LANES_PER_ROAD {
            return Err(NetError::Topology(format!(
                "road {} has {} lanes, expected {LANES_PER_ROAD}",
                rd.id,
                rd.lanes.len()
            )));
        }
        if rd.points.len() < 2 {
            return Err(NetError::Topology(format!("road {} needs at least two points", rd.id)));
        }
        let length = polyline_length(&rd.points);
        if !(length > 0.0 && length.is_finite()) {
            return Err(NetError::Topology(format!("road {} has zero length", rd.id)));
        }
        let first = rd.points[0];
        let last = rd.points[rd.points.len() - 1];
        let heading = Direction::from_vector(last.x - first.x, last.y - first.y)
            .ok_or_else(|| NetError::Topology(format!("road {} is degenerate", rd.id)))?;
        let id = RoadId(roads.len());
        let mut lane_ids = [LaneId(0); LANES_PER_ROAD];
        for (k, slot) in lane_ids.iter_mut().enumerate() {
            let lid = LaneId(lanes.len());
            *slot = lid;
            lanes.push(Lane {
                id: lid,
                road: id,
                direction: heading,
                kind: LaneKind::from_index(k).expect("three lanes"),
                length,
                capacity: ((length / VEHICLE_GAP).floor() as usize).max(1),
            });
        }
        if road_names.insert(rd.id.as_str(), id).is_some() {
            return Err(NetError::Topology(format!("duplicate road id {}", rd.id)));
        }
        roads.push(Road {
            id,
            name: rd.id.clone(),
            start,
            end,
            points: rd.points.clone(),
            lanes: lane_ids,
            length,
            max_speed: rd.lanes[0].max_speed,
        });
    }

    let mut intersections = Vec::with_capacity(intersections_raw.len());
    for (id, name, point) in intersections_raw {
        let mut in_roads: [Option<RoadId>; 4] = [None; 4];
        let mut out_roads: [Option<RoadId>; 4] = [None; 4];
        for road in &roads {
            if road.end == Endpoint::Intersection(id) {
                let n = road.points.len();
                let (a, b) = (road.points[n - 2], road.points[n - 1]);
                let heading = Direction::from_vector(b.x - a.x, b.y - a.y).ok_or_else(|| {
                    NetError::Topology(format!("road {} has a degenerate final segment", road.name))
                })?;
                let side = heading.opposite();
                if in_roads[side.index()].replace(road.id).is_some() {
                    return Err(NetError::Topology(format!(
                        "intersection {name} has two incoming roads from {side}"
                    )));
                }
            }
            if road.start == Endpoint::Intersection(id) {
                let (a, b) = (road.points[0], road.points[1]);
                let side = Direction::from_vector(b.x - a.x, b.y - a.y).ok_or_else(|| {
                    NetError::Topology(format!("road {} has a degenerate first segment", road.name))
                })?;
                if out_roads[side.index()].replace(road.id).is_some() {
                    return Err(NetError::Topology(format!(
                        "intersection {name} has two outgoing roads toward {side}"
                    )));
                }
            }
        }
        let n_up = in_roads.iter().flatten().count() * LANES_PER_ROAD;
        let n_down = out_roads.iter().flatten().count() * LANES_PER_ROAD;
        if n_up != 12 || n_down != 12 {
            return Err(NetError::Topology(format!(
                "intersection {name} has {n_up} upstream and {n_down} downstream lanes, expected 12 and 12"
            )));
        }
        let in_roads = in_roads.map(|r| r.expect("checked"));
        let out_roads = out_roads.map(|r| r.expect("checked"));
        let upstream = in_roads.map(|r| roads[r.0].lanes);
        let downstream = out_roads.map(|r| roads[r.0].lanes);
        let neighbors = in_roads.map(|r| match roads[r.0].start {
            Endpoint::Intersection(n) => Some(n),
            Endpoint::Boundary(_) => None,
        });
        let phases = (1..=NUM_PHASES as u8)
            .map(|index| build_phase(index, &upstream, &downstream))
            .collect();
        intersections.push(Intersection {
            id,
            name,
            point,
            in_roads,
            out_roads,
            upstream,
            downstream,
            phases,
            neighbors,
        });
    }

    let grid_dims = infer_grid_dims(&intersections);
    Ok(Network {
        intersections,
        boundary,
        roads,
        lanes,
        grid_dims,
    })
}

fn build_phase(index: u8, upstream: &[[LaneId; 3]; 4], downstream: &[[LaneId; 3]; 4]) -> Phase {
    let green = phase_scheme(index).expect("index in 1..=8").to_vec();
    let mut movements = Vec::new();
    for approach in Direction::ALL {
        for kind in LaneKind::ALL {
            if kind == LaneKind::Right || green.contains(&(approach, kind)) {
                let from = upstream[approach.index()][kind.index()];
                let exit = turn_target(approach, kind);
                for &to in &downstream[exit.index()] {
                    movements.push(Movement { from, to });
                }
            }
        }
    }
    Phase {
        index,
        green,
        movements,
    }
}

fn infer_grid_dims(intersections: &[Intersection]) -> (usize, usize) {
    if intersections.is_empty() {
        return (0, 0);
    }
    let distinct = |vals: Vec<f64>| {
        let mut v = vals;
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        v.len()
    };
    let rows = distinct(intersections.iter().map(|i| i.point.y).collect());
    let cols = distinct(intersections.iter().map(|i| i.point.x).collect());
    (rows, cols)
}

fn endpoint_name(net: &Network, ep: Endpoint) -> &str {
    match ep {
        Endpoint::Intersection(i) => &net.intersections[i.0].name,
        Endpoint::Boundary(b) => &net.boundary[b.0].name,
    }
}

fn turn_type(kind: LaneKind) -> &'static str {
    match kind {
        LaneKind::Left => "turn_left",
        LaneKind::Straight => "go_straight",
        LaneKind::Right => "turn_right",
    }
}

/// Serialize to a CityFlow roadnet document, including road links and the
/// eight-phase light program so the file also runs in CityFlow itself.
pub fn network_to_json(net: &Network) -> String {
    let mut doc = RoadnetDoc::default();
    for inter in &net.intersections {
        let mut links = Vec::new();
        let mut link_of = HashMap::new();
        for approach in Direction::ALL {
            for kind in LaneKind::ALL {
                let exit = turn_target(approach, kind);
                link_of.insert((approach, kind), links.len());
                let lane_links: Vec<Value> = (0..LANES_PER_ROAD)
                    .map(|j| {
                        serde_json::json!({
                            "startLaneIndex": kind.index(),
                            "endLaneIndex": j,
                            "points": []
                        })
                    })
                    .collect();
                links.push(serde_json::json!({
                    "type": turn_type(kind),
                    "startRoad": net.road(inter.in_roads[approach.index()]).name,
                    "endRoad": net.road(inter.out_roads[exit.index()]).name,
                    "direction": exit.index(),
                    "laneLinks": lane_links,
                }));
            }
        }
        let rights: Vec<usize> = Direction::ALL
            .into_iter()
            .map(|a| link_of[&(a, LaneKind::Right)])
            .collect();
        let mut light_phases = vec![serde_json::json!({"time": 5, "availableRoadLinks": rights})];
        for phase in &inter.phases {
            let mut avail: Vec<usize> = phase.green.iter().map(|g| link_of[g]).collect();
            avail.extend(rights.iter().copied());
            avail.sort_unstable();
            light_phases.push(serde_json::json!({"time": 30, "availableRoadLinks": avail}));
        }
        let mut road_names: Vec<String> = inter
            .in_roads
            .iter()
            .chain(inter.out_roads.iter())
            .map(|r| net.road(*r).name.clone())
            .collect();
        road_names.sort();
        doc.intersections.push(NodeDoc {
            id: inter.name.clone(),
            point: inter.point,
            is_virtual: false,
            width: Some(15.0),
            roads: Some(road_names),
            road_links: Some(Value::Array(links)),
            traffic_light: Some(serde_json::json!({
                "roadLinkIndices": (0..12).collect::<Vec<_>>(),
                "lightphases": light_phases,
            })),
            extra: HashMap::new(),
        });
    }
    for b in &net.boundary {
        let roads: Vec<String> = net
            .roads
            .iter()
            .filter(|r| r.start == Endpoint::Boundary(b.id) || r.end == Endpoint::Boundary(b.id))
            .map(|r| r.name.clone())
            .collect();
        doc.intersections.push(NodeDoc {
            id: b.name.clone(),
            point: b.point,
            is_virtual: true,
            width: Some(0.0),
            roads: Some(roads),
            road_links: Some(Value::Array(vec![])),
            traffic_light: None,
            extra: HashMap::new(),
        });
    }
    for road in &net.roads {
        doc.roads.push(RoadDoc {
            id: road.name.clone(),
            points: road.points.clone(),
            lanes: vec![
                LaneDoc {
                    width: 3.0,
                    max_speed: road.max_speed,
                };
                LANES_PER_ROAD
            ],
            start_intersection: endpoint_name(net, road.start).to_string(),
            end_intersection: endpoint_name(net, road.end).to_string(),
            extra: HashMap::new(),
        });
    }
    serde_json::to_string_pretty(&doc).expect("roadnet serializes")
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, network_to_json(net)).map_err(|source| NetError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Vehicle flows

/// Vehicles on `route` injected at `start_time`, then every `interval`
/// seconds while the time is at most `end_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRule {
    pub route: Vec<RoadId>,
    pub start_time: f64,
    pub interval: f64,
    pub end_time: f64,
}

impl FlowRule {
    /// Injection times up to (and including) `horizon`.
    pub fn times(&self, horizon: f64) -> Vec<f64> {
        let end = self.end_time.min(horizon);
        if self.start_time > end {
            return Vec::new();
        }
        if self.interval <= 0.0 || self.end_time <= self.start_time {
            return vec![self.start_time];
        }
        let mut out = Vec::new();
        let mut k = 0u64;
        loop {
            let t = self.start_time + k as f64 * self.interval;
            if t > end {
                break;
            }
            out.push(t);
            k += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub rules: Vec<FlowRule>,
}

impl FlowSpec {
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FlowDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vehicle: Option<Value>,
    route: Vec<String>,
    #[serde(default = "default_interval")]
    interval: f64,
    #[serde(rename = "startTime", default)]
    start_time: f64,
    #[serde(rename = "endTime", default)]
    end_time: f64,
    #[serde(flatten)]
    extra: HashMap<String, Value>,
}

fn default_interval() -> f64 {
    1.0
}

/// Check that a route is a connected, U-turn-free path through controlled
/// intersections.
pub fn validate_route(net: &Network, route: &[RoadId]) -> Result<()> {
    if route.is_empty() {
        return Err(NetError::Route("empty route".into()));
    }
    for w in route.windows(2) {
        let (a, b) = (net.road(w[0]), net.road(w[1]));
        if a.end != b.start {
            return Err(NetError::Route(format!(
                "road {} does not connect to road {}",
                a.name, b.name
            )));
        }
        if net.turn(w[0], w[1]).is_none() {
            return Err(NetError::Route(format!(
                "no legal turn from road {} to road {}",
                a.name, b.name
            )));
        }
    }
    Ok(())
}

pub fn load_flow(path: impl AsRef<Path>, net: &Network) -> Result<FlowSpec> {
    let text = read_text(path.as_ref())?;
    parse_flow(&text, net)
}

pub fn parse_flow(text: &str, net: &Network) -> Result<FlowSpec> {
    let docs: Vec<FlowDoc> =
        serde_json::from_str(text).map_err(|e| NetError::Parse(e.to_string()))?;
    let names: HashMap<&str, RoadId> = net.roads.iter().map(|r| (r.name.as_str(), r.id)).collect();
    let mut warned = false;
    let mut rules = Vec::with_capacity(docs.len());
    for (i, d) in docs.into_iter().enumerate() {
        if !warned && !d.extra.is_empty() {
            warn_extra(&format!("flow entry {i}"), &d.extra);
            warned = true;
        }
        let route = d
            .route
            .iter()
            .map(|name| {
                names
                    .get(name.as_str())
                    .copied()
                    .ok_or_else(|| NetError::Route(format!("flow entry {i}: unknown road {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        validate_route(net, &route).map_err(|e| match e {
            NetError::Route(msg) => NetError::Route(format!("flow entry {i}: {msg}")),
            other => other,
        })?;
        let end_time = if d.end_time < 0.0 { f64::INFINITY } else { d.end_time };
        if d.start_time > end_time {
            return Err(NetError::Parse(format!(
                "flow entry {i}: startTime {} after endTime {}",
                d.start_time, d.end_time
            )));
        }
        rules.push(FlowRule {
            route,
            start_time: d.start_time,
            interval: d.interval,
            end_time,
        });
    }
    Ok(FlowSpec { rules })
}

pub fn flow_to_json(flow: &FlowSpec, net: &Network) -> String {
    let docs: Vec<FlowDoc> = flow
        .rules
        .iter()
        .map(|r| FlowDoc {
            vehicle: Some(serde_json::json!({
                "length": 5.0, "width": 2.0, "maxPosAcc": 2.0, "maxNegAcc": 4.5,
                "usualPosAcc": 2.0, "usualNegAcc": 4.5, "minGap": 2.5,
                "maxSpeed": DEFAULT_MAX_SPEED, "headwayTime": 1.5
            })),
            route: r.route.iter().map(|id| net.road(*id).name.clone()).collect(),
            interval: r.interval,
            start_time: r.start_time,
            end_time: if r.end_time.is_finite() { r.end_time } else { -1.0 },
            extra: HashMap::new(),
        })
        .collect();
    serde_json::to_string_pretty(&docs).expect("flow serializes")
}

pub fn save_flow(flow: &FlowSpec, net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, flow_to_json(flow, net)).map_err(|source| NetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Demand pattern for synthetic grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridDemand {
    /// Seconds between vehicles on each north-south through route.
    pub ns_interval: f64,
    /// Seconds between vehicles on each east-west through route.
    pub ew_interval: f64,
    /// Seconds between vehicles on each turning route (per entry road and turn).
    pub turn_interval: f64,
    /// Last injection time; negative means the whole episode.
    pub end_time: f64,
}

impl Default for GridDemand {
    fn default() -> Self {
        GridDemand {
            ns_interval: 6.0,
            ew_interval: 15.0,
            turn_interval: 30.0,
            end_time: -1.0,
        }
    }
}

/// Straight-through plus left/right turning routes from every boundary entry
/// road. Turning routes turn at the first intersection and then go straight.
pub fn grid_flow(net: &Network, demand: &GridDemand) -> FlowSpec {
    let mut rules = Vec::new();
    let end_time = if demand.end_time < 0.0 {
        f64::INFINITY
    } else {
        demand.end_time
    };
    let entries: Vec<&Road> = net
        .roads
        .iter()
        .filter(|r| matches!(r.start, Endpoint::Boundary(_)))
        .collect();
    for entry in entries {
        let Some(approach) = net.approach_side(entry.id) else {
            continue;
        };
        let heading = approach.opposite();
        let through_interval = match heading {
            Direction::N | Direction::S => demand.ns_interval,
            Direction::E | Direction::W => demand.ew_interval,
        };
        for (turn, interval) in [
            (LaneKind::Straight, through_interval),
            (LaneKind::Left, demand.turn_interval),
            (LaneKind::Right, demand.turn_interval),
        ] {
            if !(interval > 0.0 && interval.is_finite()) {
                continue;
            }
            let route = route_with_first_turn(net, entry.id, turn);
            // Stagger starts so rules sharing an entry do not arrive together.
            let offset = (turn.index() as f64 * 0.37 * interval).floor();
            rules.push(FlowRule {
                route,
                start_time: offset,
                interval,
                end_time,
            });
        }
    }
    FlowSpec { rules }
}

fn route_with_first_turn(net: &Network, entry: RoadId, first: LaneKind) -> Vec<RoadId> {
    let mut route = vec![entry];
    let mut turn = first;
    let mut current = entry;
    while let Endpoint::Intersection(i) = net.road(current).end {
        let approach = net.approach_side(current).expect("incoming road");
        let exit = turn_target(approach, turn);
        current = net.intersection(i).out_roads[exit.index()];
        route.push(current);
        turn = LaneKind::Straight;
    }
    route
}
