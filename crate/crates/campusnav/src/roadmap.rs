//! Road-network data model, global routing, and navigation task management.
//!
//! The map is a directed lane graph: nodes are waypoints, edges carry a
//! centerline polyline, a scenario tag, a reference speed limit, and the
//! drivable half-widths. Stations, observation areas, stop lines, and curb
//! polygons hang off the graph. Maps load from a versioned JSON document
//! and are immutable afterwards.

use crate::geom::{polyline_heading_at, polyline_length, polyline_point_at, Vec2};
use crate::{EGO_WIDTH, MAX_SPEED};
use serde::{Deserialize, Serialize};
use std::collections::BinaryHeap;
use thiserror::Error;

pub type NodeId = usize;
pub type EdgeId = usize;

/// Scenario class of a lane segment; selects the behavior preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioTag {
    Common,
    Parking,
    Intersection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

impl Node {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Directed lane segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    /// Centerline points in meters; arc length must equal `length`.
    pub polyline: Vec<Vec2>,
    pub length: f64,
    pub tag: ScenarioTag,
    /// Reference speed limit in m/s, capped at 15 km/h.
    pub speed_limit: f64,
    pub half_width_left: f64,
    pub half_width_right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub name: String,
    pub edge: EdgeId,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationArea {
    pub edge: EdgeId,
    pub polygons: Vec<Vec<Vec2>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopLine {
    pub edge: EdgeId,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadMap {
    pub version: u32,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub stations: Vec<Station>,
    #[serde(default)]
    pub observation_areas: Vec<ObservationArea>,
    #[serde(default)]
    pub stop_lines: Vec<StopLine>,
    #[serde(default)]
    pub curbs: Vec<Vec<Vec2>>,
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported map schema version {0} (expected 1)")]
    Version(u32),
    #[error("map invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Error)]
#[error("no route from edge {start_edge} to station '{goal}'")]
pub struct NoRoute {
    pub start_edge: EdgeId,
    pub goal: String,
}

impl RoadMap {
    /// Parse and validate a map document.
    pub fn load(text: &str) -> Result<RoadMap, MapError> {
        let map: RoadMap = serde_json::from_str(text)?;
        if map.version != 1 {
            return Err(MapError::Version(map.version));
        }
        map.validate()?;
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("map serialization")
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let inv = |msg: String| Err(MapError::Invariant(msg));
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return inv(format!("node ids must be dense: node at index {i} has id {}", n.id));
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.id != i {
                return inv(format!("edge ids must be dense: edge at index {i} has id {}", e.id));
            }
            if e.from >= self.nodes.len() || e.to >= self.nodes.len() {
                return inv(format!("edge {} references unknown node", e.id));
            }
            if e.polyline.len() < 2 {
                return inv(format!("edge {} polyline needs at least 2 points", e.id));
            }
            let arc = polyline_length(&e.polyline);
            if (arc - e.length).abs() > 1e-6 {
                return inv(format!(
                    "edge {} length {} does not match polyline arc length {arc}",
                    e.id, e.length
                ));
            }
            if !(e.speed_limit > 0.0 && e.speed_limit <= MAX_SPEED + 1e-9) {
                return inv(format!(
                    "edge {} speed limit {} outside (0, {MAX_SPEED:.4}] m/s",
                    e.id, e.speed_limit
                ));
            }
            if e.half_width_left <= 0.0 || e.half_width_right <= 0.0 {
                return inv(format!("edge {} half-widths must be positive", e.id));
            }
        }
        for st in &self.stations {
            let e = self.edge(st.edge).ok_or_else(|| {
                MapError::Invariant(format!("station '{}' references unknown edge {}", st.name, st.edge))
            })?;
            if st.s < 0.0 || st.s > e.length {
                return inv(format!(
                    "station '{}' arc position {} outside [0, {}]",
                    st.name, st.s, e.length
                ));
            }
        }
        for sl in &self.stop_lines {
            let e = self.edge(sl.edge).ok_or_else(|| {
                MapError::Invariant(format!("stop line references unknown edge {}", sl.edge))
            })?;
            if sl.s < 0.0 || sl.s > e.length {
                return inv(format!("stop line on edge {} outside [0, {}]", sl.edge, e.length));
            }
        }
        for oa in &self.observation_areas {
            if self.edge(oa.edge).is_none() {
                return inv(format!("observation area references unknown edge {}", oa.edge));
            }
            if oa.polygons.iter().any(|p| p.len() < 3) {
                return inv(format!("observation area on edge {} has a degenerate polygon", oa.edge));
            }
        }
        for e in &self.edges {
            if e.tag == ScenarioTag::Intersection {
                let areas = self
                    .observation_areas
                    .iter()
                    .filter(|oa| oa.edge == e.id)
                    .map(|oa| oa.polygons.len())
                    .sum::<usize>();
                if areas == 0 {
                    return inv(format!("intersection edge {} has no observation area", e.id));
                }
                let stops = self.stop_lines.iter().filter(|sl| sl.edge == e.id).count();
                if stops != 1 {
                    return inv(format!(
                        "intersection edge {} must have exactly 1 stop line, found {stops}",
                        e.id
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.edges.get(id)
    }

    pub fn station(&self, name: &str) -> Option<&Station> {
        self.stations.iter().find(|s| s.name == name)
    }

    pub fn stop_line_on(&self, edge: EdgeId) -> Option<&StopLine> {
        self.stop_lines.iter().find(|sl| sl.edge == edge)
    }

    pub fn observation_polygons_on(&self, edge: EdgeId) -> Vec<&Vec<Vec2>> {
        self.observation_areas
            .iter()
            .filter(|oa| oa.edge == edge)
            .flat_map(|oa| oa.polygons.iter())
            .collect()
    }

    /// Outgoing edges of a node, sorted by edge id for determinism.
    fn out_edges(&self, node: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == node)
    }
}

/// A station (or fallback stop) mapped onto route arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteStation {
    pub name: String,
    pub route_s: f64,
}

/// Stop line / observation area of an intersection edge mapped onto the route.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteIntersection {
    pub edge: EdgeId,
    pub stop_line_s: f64,
    pub areas: Vec<Vec<Vec2>>,
}

/// Routed waypoint sequence stitched from map edges.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRoute {
    pub edges: Vec<EdgeId>,
    /// Stitched centerline; `s[i]` is the cumulative arc length of `points[i]`.
    pub points: Vec<Vec2>,
    pub s: Vec<f64>,
    /// Route arc span covered by each edge of `edges`.
    pub spans: Vec<(EdgeId, f64, f64)>,
    pub destination: String,
    pub active: bool,
    /// Stations passed along the route, ascending in s.
    pub stations: Vec<RouteStation>,
    pub intersections: Vec<RouteIntersection>,
    /// Original destination preserved across a drop-off truncation.
    pub resumption: Option<String>,
    /// Arc position on the first edge where the route begins.
    pub start_trim: f64,
    /// Per-span metadata, parallel to `spans`.
    pub tags: Vec<ScenarioTag>,
    pub speed_limits: Vec<f64>,
    pub half_widths: Vec<(f64, f64)>,
}

impl GlobalRoute {
    pub fn length(&self) -> f64 {
        *self.s.last().unwrap_or(&0.0)
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        polyline_point_at(&self.points, s.clamp(0.0, self.length()))
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        polyline_heading_at(&self.points, s.clamp(0.0, self.length()))
    }

    fn span_index(&self, s: f64) -> usize {
        let s = s.clamp(0.0, self.length());
        for (i, (_, lo, hi)) in self.spans.iter().enumerate() {
            if s >= *lo && (s < *hi || i == self.spans.len() - 1) {
                return i;
            }
        }
        self.spans.len().saturating_sub(1)
    }

    pub fn tag_at(&self, s: f64) -> ScenarioTag {
        self.tags[self.span_index(s)]
    }

    pub fn edge_at(&self, s: f64) -> EdgeId {
        self.spans[self.span_index(s)].0
    }

    pub fn speed_limit_at(&self, s: f64) -> f64 {
        self.speed_limits[self.span_index(s)]
    }

    pub fn half_widths_at(&self, s: f64) -> (f64, f64) {
        self.half_widths[self.span_index(s)]
    }

    /// Next intersection whose stop line is at or after `s`.
    pub fn next_intersection(&self, s: f64) -> Option<&RouteIntersection> {
        self.intersections
            .iter()
            .find(|ix| ix.stop_line_s >= s - 1e-9)
    }

    /// Map a route arc position back to (edge id, arc position on edge).
    pub fn edge_position_at(&self, s: f64) -> (EdgeId, f64) {
        let i = self.span_index(s);
        let (eid, lo, _) = self.spans[i];
        let on_edge = if i == 0 {
            self.start_trim + (s - lo)
        } else {
            s - lo
        };
        (eid, on_edge.max(0.0))
    }
}

/// Min-heap entry for A*; ordered by f-cost, then node id for determinism.
struct QueueEntry {
    f: f64,
    node: NodeId,
}

impl PartialEq for QueueEntry {
    fn eq(&self, o: &Self) -> bool {
        self.f == o.f && self.node == o.node
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        // Reversed: BinaryHeap is a max-heap.
        o.f.total_cmp(&self.f)
            .then_with(|| o.node.cmp(&self.node))
    }
}

/// A* over the lane graph from a position on an edge to a station.
///
/// Edge cost is centerline length; the heuristic is straight-line distance
/// to the goal edge's entry node, which is admissible because an edge is
/// never shorter than its chord. Equal-cost relaxations prefer the smaller
/// incoming edge id.
pub fn plan_global_route(
    map: &RoadMap,
    start_edge: EdgeId,
    start_s: f64,
    goal: &str,
) -> Result<GlobalRoute, NoRoute> {
    let no_route = || NoRoute {
        start_edge,
        goal: goal.to_string(),
    };
    let station = map.station(goal).ok_or_else(no_route)?;
    let se = map.edge(start_edge).ok_or_else(no_route)?;
    let ge = map.edge(station.edge).expect("validated station edge");

    if start_edge == station.edge && start_s <= station.s {
        return Ok(stitch(map, &[start_edge], start_s, station.s, goal));
    }

    // A* from the start edge's exit node to the goal edge's entry node.
    let source = se.to;
    let target = ge.from;
    let goal_pos = map.nodes[target].position();
    let n = map.nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred_edge: Vec<Option<EdgeId>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(QueueEntry {
        f: map.nodes[source].position().dist(goal_pos),
        node: source,
    });
    while let Some(QueueEntry { node, .. }) = heap.pop() {
        if settled[node] {
            continue;
        }
        settled[node] = true;
        if node == target {
            break;
        }
        for e in map.out_edges(node) {
            let nd = dist[node] + e.length;
            let better = nd < dist[e.to]
                || (nd == dist[e.to] && pred_edge[e.to].map_or(false, |p| e.id < p));
            if better && !settled[e.to] {
                dist[e.to] = nd;
                pred_edge[e.to] = Some(e.id);
                heap.push(QueueEntry {
                    f: nd + map.nodes[e.to].position().dist(goal_pos),
                    node: e.to,
                });
            }
        }
    }
    if !dist[target].is_finite() {
        return Err(no_route());
    }

    let mut chain = vec![station.edge];
    let mut node = target;
    while node != source {
        let eid = pred_edge[node].expect("predecessor chain");
        chain.push(eid);
        node = map.edges[eid].from;
    }
    chain.push(start_edge);
    chain.reverse();
    Ok(stitch(map, &chain, start_s, station.s, goal))
}

/// Build the stitched route over `chain`, trimming the first edge at
/// `start_s` and the last at `goal_s`.
fn stitch(map: &RoadMap, chain: &[EdgeId], start_s: f64, goal_s: f64, destination: &str) -> GlobalRoute {
    let mut points: Vec<Vec2> = Vec::new();
    let mut s: Vec<f64> = Vec::new();
    let mut spans = Vec::new();
    let mut tags = Vec::new();
    let mut speed_limits = Vec::new();
    let mut half_widths = Vec::new();
    let mut stations = Vec::new();
    let mut intersections = Vec::new();
    let mut acc = 0.0;

    for (i, &eid) in chain.iter().enumerate() {
        let e = map.edge(eid).expect("edge in chain");
        let lo = if i == 0 { start_s } else { 0.0 };
        let hi = if i == chain.len() - 1 { goal_s } else { e.length };
        let span_lo = acc;
        let seg = clip_polyline(&e.polyline, lo, hi);
        for p in seg {
            match points.last() {
                Some(last) if last.dist(p) < 1e-9 => continue,
                Some(last) => {
                    acc += last.dist(p);
                    points.push(p);
                    s.push(acc);
                }
                None => {
                    points.push(p);
                    s.push(acc);
                }
            }
        }
        // Use exact edge arithmetic for the span end to avoid drift.
        let span_hi = span_lo + (hi - lo);
        acc = span_hi;
        spans.push((eid, span_lo, span_hi));
        tags.push(e.tag);
        speed_limits.push(e.speed_limit);
        half_widths.push((e.half_width_left, e.half_width_right));

        for st in map.stations.iter().filter(|st| st.edge == eid) {
            if st.s >= lo - 1e-9 && st.s <= hi + 1e-9 {
                stations.push(RouteStation {
                    name: st.name.clone(),
                    route_s: span_lo + (st.s - lo),
                });
            }
        }
        if e.tag == ScenarioTag::Intersection {
            if let Some(sl) = map.stop_line_on(eid) {
                if sl.s >= lo - 1e-9 && sl.s <= hi + 1e-9 {
                    intersections.push(RouteIntersection {
                        edge: eid,
                        stop_line_s: span_lo + (sl.s - lo),
                        areas: map
                            .observation_polygons_on(eid)
                            .into_iter()
                            .cloned()
                            .collect(),
                    });
                }
            }
        }
    }
    stations.sort_by(|a, b| a.route_s.total_cmp(&b.route_s));

    GlobalRoute {
        edges: chain.to_vec(),
        points,
        s,
        spans,
        destination: destination.to_string(),
        active: true,
        stations,
        intersections,
        resumption: None,
        start_trim: start_s,
        tags,
        speed_limits,
        half_widths,
    }
}

/// Sub-polyline between arc positions `lo` and `hi` with interpolated ends.
fn clip_polyline(pts: &[Vec2], lo: f64, hi: f64) -> Vec<Vec2> {
    let mut out = vec![polyline_point_at(pts, lo)];
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let seg = w[0].dist(w[1]);
        let end = acc + seg;
        if end > lo + 1e-12 && end < hi - 1e-12 {
            out.push(w[1]);
        }
        acc = end;
    }
    out.push(polyline_point_at(pts, hi));
    out
}

/// Clamp for truncation target: stop this far past the request, minimum.
pub const DROPOFF_SAFETY_MARGIN: f64 = 5.0;

/// Truncate an active route for an unscheduled drop-off request at
/// `current_s`. Prefers the nearest station ahead; falls back to the next
/// arc position where the drivable half-width on both sides reaches
/// vehicle width + 0.5 m. Returns the route unchanged when nothing ahead
/// qualifies.
pub fn truncate_route(map: &RoadMap, route: &GlobalRoute, current_s: f64) -> GlobalRoute {
    if !route.active {
        return route.clone();
    }
    let min_s = current_s + DROPOFF_SAFETY_MARGIN;
    // Only intermediate stations qualify: the route already terminates at
    // the final one.
    if let Some(st) = route
        .stations
        .iter()
        .find(|st| st.route_s > min_s && st.route_s < route.length() - 1e-9)
    {
        let mut r = truncate_at(map, route, st.route_s);
        r.resumption = Some(route.destination.clone());
        r.destination = st.name.clone();
        return r;
    }
    // No station ahead: scan the width profile for a safe shoulder.
    let need = EGO_WIDTH + 0.5;
    let mut s = min_s;
    while s < route.length() - 1e-9 {
        let (l, r) = route.half_widths_at(s);
        if l.min(r) >= need {
            let mut out = truncate_at(map, route, s);
            out.resumption = Some(route.destination.clone());
            return out;
        }
        s += 0.5;
    }
    route.clone()
}

fn truncate_at(map: &RoadMap, route: &GlobalRoute, cut_s: f64) -> GlobalRoute {
    // Re-stitch over the surviving edge chain with a trimmed final edge.
    let idx = route.span_index(cut_s);
    let chain: Vec<EdgeId> = route.spans[..=idx].iter().map(|(e, _, _)| *e).collect();
    let (_, lo, _) = route.spans[idx];
    let cut_on_edge = if idx == 0 {
        route.start_trim + (cut_s - lo)
    } else {
        cut_s - lo
    };
    let mut r = stitch(map, &chain, route.start_trim, cut_on_edge, &route.destination);
    r.resumption = route.resumption.clone();
    r
}

/// Navigation phase of the task manager.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Driving,
    Dwelling,
    Idle,
}

/// Station dwell bookkeeping for the planning loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub phase: Phase,
    pub dwell_timer: f64,
    pub dwell_duration: f64,
    pub pending_dropoff: Option<String>,
    pub pedestrian_clear_radius: f64,
}

impl Default for TaskState {
    fn default() -> Self {
        TaskState {
            phase: Phase::Driving,
            dwell_timer: 0.0,
            dwell_duration: 8.0,
            pending_dropoff: None,
            pedestrian_clear_radius: 2.0,
        }
    }
}

impl TaskState {
    pub fn begin_dwell(&mut self) {
        self.phase = Phase::Dwelling;
        self.dwell_timer = 0.0;
    }

    pub fn resume_driving(&mut self) {
        self.phase = Phase::Driving;
        self.dwell_timer = 0.0;
    }

    pub fn finish(&mut self) {
        self.phase = Phase::Idle;
    }
}

/// Advance the dwell timer by `dt` and report whether the vehicle may
/// resume: the dwell period has elapsed and no pedestrian stands within
/// the clear radius of the ego footprint.
pub fn resume_check(
    task: &mut TaskState,
    nearby: &[crate::world::AgentState],
    dt: f64,
    ego: &crate::geom::Obb,
) -> bool {
    assert_eq!(task.phase, Phase::Dwelling, "resume_check requires Dwelling");
    task.dwell_timer = (task.dwell_timer + dt).min(task.dwell_duration);
    if task.dwell_timer < task.dwell_duration {
        return false;
    }
    let ego_poly = ego.corners();
    !nearby.iter().any(|a| {
        a.class == crate::world::AgentClass::Pedestrian
            && crate::geom::polygon_distance(&a.footprint().corners(), &ego_poly)
                < task.pedestrian_clear_radius
    })
}
