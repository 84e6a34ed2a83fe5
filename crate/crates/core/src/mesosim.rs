//! Point-queue mesoscopic simulator.
//!
//! Each lane holds a FIFO of vehicles travelling at free-flow speed toward the
//! stop line and a FIFO queue at the stop line. Queued vehicles discharge at
//! the lane's service rate while the lane has right of way and the chosen
//! downstream lane has storage left. Time advances in fixed one-second ticks.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::netmodel::{IntersectionId, IntersectionKind, LaneId, LinkId, RegionId, Scenario};

pub const TICK_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: usize,
    pub od: usize,
    pub destination: LinkId,
    pub dest_region: RegionId,
    /// Full link path; `route[pos]` is the current link.
    pub route: Vec<LinkId>,
    pub pos: usize,
    pub lane: Option<LaneId>,
    pub link_entry_s: f64,
    pub stop_arrival_s: f64,
    pub queued: bool,
    pub created_s: f64,
    pub finished_s: Option<f64>,
}

impl Vehicle {
    pub fn current_link(&self) -> LinkId {
        self.route[self.pos]
    }

    pub fn remaining(&self) -> &[LinkId] {
        &self.route[self.pos..]
    }

    pub fn in_network(&self) -> bool {
        self.lane.is_some() && self.finished_s.is_none()
    }
}

#[derive(Debug, Clone, Default)]
struct LaneState {
    running: VecDeque<usize>,
    queue: VecDeque<usize>,
    credit: f64,
}

impl LaneState {
    fn occupancy(&self) -> usize {
        self.running.len() + self.queue.len()
    }
}

/// Cumulative event counters since the start of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Counters {
    /// `[i][h]` crossings through gating intersections.
    pub gating_crossings: Vec<Vec<u64>>,
    /// `[i][h]` crossings through non-gating intersections.
    pub nongating_crossings: Vec<Vec<u64>>,
    /// Trips ended inside region `i`.
    pub internal_completions: Vec<u64>,
    /// `[i][j]` vehicles that entered the network in region `i` bound for `j`.
    pub entries: Vec<Vec<u64>>,
    /// Per-lane discharges.
    pub lane_discharges: Vec<u64>,
}

impl Counters {
    fn new(regions: usize, lanes: usize) -> Self {
        Counters {
            gating_crossings: vec![vec![0; regions]; regions],
            nongating_crossings: vec![vec![0; regions]; regions],
            internal_completions: vec![0; regions],
            entries: vec![vec![0; regions]; regions],
            lane_discharges: vec![0; lanes],
        }
    }

    pub fn crossings(&self, i: usize, h: usize) -> u64 {
        self.gating_crossings[i][h] + self.nongating_crossings[i][h]
    }

    /// Element-wise `self - earlier`.
    pub fn since(&self, earlier: &Counters) -> Counters {
        let m = |a: &Vec<Vec<u64>>, b: &Vec<Vec<u64>>| -> Vec<Vec<u64>> {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
                .collect()
        };
        let v = |a: &Vec<u64>, b: &Vec<u64>| -> Vec<u64> {
            a.iter().zip(b).map(|(p, q)| p - q).collect()
        };
        Counters {
            gating_crossings: m(&self.gating_crossings, &earlier.gating_crossings),
            nongating_crossings: m(&self.nongating_crossings, &earlier.nongating_crossings),
            internal_completions: v(&self.internal_completions, &earlier.internal_completions),
            entries: m(&self.entries, &earlier.entries),
            lane_discharges: v(&self.lane_discharges, &earlier.lane_discharges),
        }
    }
}

/// Snapshot handed to controllers at a micro-step boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroObservation {
    pub t: f64,
    /// `[i][j]` vehicles on region `i` links bound for region `j`.
    pub n_od: Vec<Vec<f64>>,
    pub lane_queue: Vec<u32>,
    pub lane_occupancy: Vec<u32>,
    /// Vehicles able to reach the stop line within the coming micro step.
    pub lane_reachable: Vec<u32>,
    pub counters: Counters,
}

impl MicroObservation {
    pub fn accumulation(&self, i: usize) -> f64 {
        self.n_od[i].iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Shortest link path starting on `from` and ending on `to`, where traversing
/// a link costs `cost[link]` (the cost of `from` itself is not counted).
pub fn shortest_path(
    scenario: &Scenario,
    from: LinkId,
    to: LinkId,
    cost: &[f64],
) -> Option<Vec<LinkId>> {
    let net = &scenario.network;
    let n = net.links.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev: Vec<Option<LinkId>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[from.idx()] = 0.0;
    heap.push(std::cmp::Reverse((Cost(0.0), from)));
    while let Some(std::cmp::Reverse((Cost(d), l))) = heap.pop() {
        if d > dist[l.idx()] {
            continue;
        }
        if l == to {
            break;
        }
        for &m in net.successors(l) {
            let nd = d + cost[m.idx()];
            if nd < dist[m.idx()] {
                dist[m.idx()] = nd;
                prev[m.idx()] = Some(l);
                heap.push(std::cmp::Reverse((Cost(nd), m)));
            }
        }
    }
    if !dist[to.idx()].is_finite() {
        return None;
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[cur.idx()]?;
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

pub struct Simulator<'a> {
    scenario: &'a Scenario,
    t: f64,
    rng: ChaCha8Rng,
    vehicles: Vec<Vehicle>,
    lanes: Vec<LaneState>,
    /// Vehicles generated but not yet admitted, per origin link.
    entry: Vec<VecDeque<usize>>,
    /// Active phase per intersection (gating only).
    phase: Vec<usize>,
    od_routes: Vec<Vec<LinkId>>,
    counters: Counters,
    in_network: usize,
    waiting: usize,
    /// Vehicle-seconds spent in the system after warm-up.
    ttt_s: f64,
    completed_after_warmup: u64,
    demand_open: bool,
}

impl<'a> Simulator<'a> {
    pub fn new(scenario: &'a Scenario, seed: u64) -> Self {
        let net = &scenario.network;
        let free: Vec<f64> = net.links.iter().map(|l| l.free_flow_s()).collect();
        let od_routes = scenario
            .demand
            .ods
            .iter()
            .map(|od| {
                shortest_path(scenario, od.origin, od.destination, &free)
                    .expect("validated scenarios have reachable destinations")
            })
            .collect();
        Simulator {
            scenario,
            t: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            vehicles: Vec::new(),
            lanes: vec![LaneState::default(); net.lanes.len()],
            entry: vec![VecDeque::new(); net.links.len()],
            phase: vec![0; net.intersections.len()],
            od_routes,
            counters: Counters::new(scenario.region_count(), net.lanes.len()),
            in_network: 0,
            waiting: 0,
            ttt_s: 0.0,
            completed_after_warmup: 0,
            demand_open: true,
        }
    }

    pub fn scenario(&self) -> &'a Scenario {
        self.scenario
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn vehicles_in_system(&self) -> usize {
        self.in_network + self.waiting
    }

    pub fn total_travel_time_s(&self) -> f64 {
        self.ttt_s
    }

    pub fn completed_after_warmup(&self) -> u64 {
        self.completed_after_warmup
    }

    /// Stops generating new demand (used once the horizon is reached).
    pub fn close_demand(&mut self) {
        self.demand_open = false;
    }

    pub fn set_phase(&mut self, x: IntersectionId, phase: usize) {
        assert!(phase < self.scenario.network.intersection(x).phases.len().max(1));
        self.phase[x.idx()] = phase;
    }

    pub fn phase(&self, x: IntersectionId) -> usize {
        self.phase[x.idx()]
    }

    /// Applies a multi-phase plan of boundary `b`.
    pub fn apply_plan(&mut self, b: usize, plan: usize) {
        let p = &self.scenario.boundaries[b].plans[plan];
        for &(x, ph) in &p.phases {
            self.phase[x.idx()] = ph;
        }
    }

    /// Clears discharge credit so that service counts restart at a
    /// micro-step boundary.
    pub fn reset_service_credit(&mut self) {
        for l in &mut self.lanes {
            l.credit = 0.0;
        }
    }

    /// Current link travel-time estimate: free flow plus queue clearance.
    pub fn link_costs(&self) -> Vec<f64> {
        let net = &self.scenario.network;
        net.links
            .iter()
            .map(|link| {
                let q: f64 = link
                    .lanes
                    .iter()
                    .map(|&l| self.lanes[l.idx()].queue.len() as f64 / net.lane(l).sat_flow)
                    .sum::<f64>()
                    / link.lane_count() as f64;
                link.free_flow_s() + q
            })
            .collect()
    }

    pub fn lane_queue(&self, l: LaneId) -> usize {
        self.lanes[l.idx()].queue.len()
    }

    pub fn lane_occupancy(&self, l: LaneId) -> usize {
        self.lanes[l.idx()].occupancy()
    }

    /// Replaces the remainder of a vehicle's route. `path[0]` must be the
    /// vehicle's current link and the current lane must reach `path[1]`.
    /// Returns whether the change was applied.
    pub fn reroute(&mut self, v: usize, path: &[LinkId]) -> bool {
        let veh = &self.vehicles[v];
        if path.first() != Some(&veh.current_link()) || path.last() != Some(&veh.destination) {
            return false;
        }
        if let (Some(lane), Some(&next)) = (veh.lane, path.get(1)) {
            if !self.scenario.network.lane_reaches(lane, next) {
                return false;
            }
        }
        let veh = &mut self.vehicles[v];
        veh.route.truncate(veh.pos);
        veh.route.extend_from_slice(path);
        true
    }

    pub fn observe(&self, t_micro: f64) -> MicroObservation {
        let net = &self.scenario.network;
        let r = self.scenario.region_count();
        let mut n_od = vec![vec![0.0; r]; r];
        for v in self.vehicles.iter().filter(|v| v.in_network()) {
            let i = net.link(v.current_link()).region.idx();
            n_od[i][v.dest_region.idx()] += 1.0;
        }
        let horizon = self.t + t_micro;
        let lane_reachable = self
            .lanes
            .iter()
            .map(|l| {
                let moving = l
                    .running
                    .iter()
                    .take_while(|&&v| self.vehicles[v].stop_arrival_s <= horizon)
                    .count();
                (l.queue.len() + moving) as u32
            })
            .collect();
        MicroObservation {
            t: self.t,
            n_od,
            lane_queue: self.lanes.iter().map(|l| l.queue.len() as u32).collect(),
            lane_occupancy: self.lanes.iter().map(|l| l.occupancy() as u32).collect(),
            lane_reachable,
            counters: self.counters.clone(),
        }
    }

    /// Advances by `seconds` (rounded to whole ticks).
    pub fn advance(&mut self, seconds: f64) {
        let ticks = (seconds / TICK_S).round() as usize;
        for _ in 0..ticks {
            self.tick();
        }
    }

    fn lane_service_rate(&self, l: LaneId) -> f64 {
        let net = &self.scenario.network;
        let lane = net.lane(l);
        let Some(x) = net.intersection_at_end(lane.link) else {
            return lane.sat_flow;
        };
        let ix = net.intersection(x);
        match ix.kind {
            IntersectionKind::Interior => lane.sat_flow,
            IntersectionKind::NonGating => ix.pass_rate.unwrap_or(lane.sat_flow),
            IntersectionKind::Gating => match ix.phases.get(self.phase[x.idx()]) {
                Some(p) if p.lanes.contains(&l) => lane.sat_flow,
                _ => 0.0,
            },
        }
    }

    /// Lane on `link` to enter from `from_lane` (or from outside), given that
    /// the vehicle continues to `after` if any: least occupied lane with room,
    /// preferring lanes that reach `after`, ties to the lowest id.
    fn pick_lane(
        &self,
        candidates: impl Iterator<Item = LaneId>,
        after: Option<LinkId>,
    ) -> Option<LaneId> {
        let net = &self.scenario.network;
        candidates
            .filter(|&l| self.lanes[l.idx()].occupancy() < net.lane(l).capacity_veh as usize)
            .min_by_key(|&l| {
                let reaches = after.is_none_or(|a| net.lane_reaches(l, a));
                (!reaches, self.lanes[l.idx()].occupancy(), l)
            })
    }

    fn place(&mut self, v: usize, lane: LaneId, now: f64) {
        let link = self.scenario.network.lane(lane).link;
        let ff = self.scenario.network.link(link).free_flow_s();
        let veh = &mut self.vehicles[v];
        veh.lane = Some(lane);
        veh.link_entry_s = now;
        veh.stop_arrival_s = now + ff;
        veh.queued = false;
        self.lanes[lane.idx()].running.push_back(v);
    }

    fn finish(&mut self, v: usize, now: f64) {
        let region = self.scenario.network.link(self.vehicles[v].destination).region;
        self.vehicles[v].finished_s = Some(now);
        self.vehicles[v].lane = None;
        self.counters.internal_completions[region.idx()] += 1;
        self.in_network -= 1;
        if now > self.scenario.demand.warmup_s {
            self.completed_after_warmup += 1;
        }
    }

    fn tick(&mut self) {
        let now = self.t;
        let next = now + TICK_S;
        let net = &self.scenario.network;

        // Demand.
        if self.demand_open {
            for (k, od) in self.scenario.demand.ods.iter().enumerate() {
                let rate = od.rate_at(now);
                if rate <= 0.0 {
                    continue;
                }
                let count = Poisson::new(rate * TICK_S)
                    .expect("positive rate")
                    .sample(&mut self.rng) as usize;
                for _ in 0..count {
                    let id = self.vehicles.len();
                    let route = self.od_routes[k].clone();
                    self.vehicles.push(Vehicle {
                        id,
                        od: k,
                        destination: od.destination,
                        dest_region: net.link(od.destination).region,
                        route,
                        pos: 0,
                        lane: None,
                        link_entry_s: now,
                        stop_arrival_s: now,
                        queued: false,
                        created_s: now,
                        finished_s: None,
                    });
                    self.entry[od.origin.idx()].push_back(id);
                    self.waiting += 1;
                }
            }
        }

        // Arrivals at stop lines.
        for li in 0..self.lanes.len() {
            while let Some(&v) = self.lanes[li].running.front() {
                if self.vehicles[v].stop_arrival_s > next {
                    break;
                }
                self.lanes[li].running.pop_front();
                let veh = &self.vehicles[v];
                if veh.current_link() == veh.destination {
                    self.finish(v, veh.stop_arrival_s.max(now));
                } else {
                    self.vehicles[v].queued = true;
                    self.lanes[li].queue.push_back(v);
                }
            }
        }

        // Discharge.
        for li in 0..self.lanes.len() {
            let lane_id = LaneId::from(li);
            let rate = self.lane_service_rate(lane_id);
            if rate <= 0.0 {
                self.lanes[li].credit = 0.0;
                continue;
            }
            self.lanes[li].credit += rate * TICK_S;
            while self.lanes[li].credit >= 1.0 - 1e-12 {
                let Some(&v) = self.lanes[li].queue.front() else {
                    break;
                };
                let veh = &self.vehicles[v];
                let next_link = veh.route[veh.pos + 1];
                let after = veh.route.get(veh.pos + 2).copied();
                let outs = net.lane(lane_id).outputs.iter().copied();
                let Some(target) =
                    self.pick_lane(outs.filter(|&o| net.lane(o).link == next_link), after)
                else {
                    break;
                };
                self.lanes[li].queue.pop_front();
                self.lanes[li].credit -= 1.0;
                self.counters.lane_discharges[li] += 1;
                let from_r = net.lane_region(lane_id);
                let to_r = net.lane_region(target);
                if from_r != to_r {
                    let x = net
                        .intersection_at_end(net.lane(lane_id).link)
                        .expect("region changes happen at intersections");
                    let c = if net.intersection(x).kind == IntersectionKind::Gating {
                        &mut self.counters.gating_crossings
                    } else {
                        &mut self.counters.nongating_crossings
                    };
                    c[from_r.idx()][to_r.idx()] += 1;
                }
                self.vehicles[v].pos += 1;
                self.place(v, target, next);
            }
            // No banking of unused service.
            let cap = if self.lanes[li].queue.is_empty() { rate * TICK_S } else { 1.0f64.max(rate * TICK_S) };
            self.lanes[li].credit = self.lanes[li].credit.min(cap);
        }

        // Admission from origin buffers.
        for link in 0..self.entry.len() {
            while let Some(&v) = self.entry[link].front() {
                let after = self.vehicles[v].route.get(1).copied();
                let lanes = net.links[link].lanes.iter().copied();
                let Some(lane) = self.pick_lane(lanes, after) else {
                    break;
                };
                self.entry[link].pop_front();
                self.waiting -= 1;
                self.in_network += 1;
                let r = net.lane_region(lane).idx();
                let j = self.vehicles[v].dest_region.idx();
                self.counters.entries[r][j] += 1;
                self.place(v, lane, next);
            }
        }

        if now >= self.scenario.demand.warmup_s {
            self.ttt_s += (self.in_network + self.waiting) as f64 * TICK_S;
        }
        self.t = next;
    }

    /// Per-vehicle travel times (creation to exit) of finished trips created
    /// after warm-up.
    pub fn travel_times(&self) -> Vec<f64> {
        self.vehicles
            .iter()
            .filter(|v| v.created_s >= self.scenario.demand.warmup_s)
            .filter_map(|v| v.finished_s.map(|f| f - v.created_s))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles_in_system() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn free_flow_path_on_corridor() {
        let s = fixtures::corridor();
        let free: Vec<f64> = s.network.links.iter().map(|l| l.free_flow_s()).collect();
        let w0 = s.network.link_by_name("w0").unwrap();
        let e1 = s.network.link_by_name("e1").unwrap();
        let p = shortest_path(&s, w0, e1, &free).unwrap();
        assert_eq!(p.len(), 4);
        // Equal costs: lowest-id branch (w1 through the gating signal).
        assert_eq!(s.network.link(p[1]).id, "w1");
    }

    #[test]
    fn closed_gate_holds_vehicles() {
        let s = fixtures::corridor();
        let mut sim = Simulator::new(&s, 3);
        let b = 0;
        let closed = s.boundaries[b].plans.iter().position(|p| p.id == "closed").unwrap();
        sim.apply_plan(b, closed);
        sim.advance(300.0);
        assert_eq!(sim.counters().gating_crossings[0][1], 0);
        assert!(sim.vehicles_in_system() > 0);
    }

    #[test]
    fn conservation_of_vehicles() {
        let s = fixtures::corridor();
        let mut sim = Simulator::new(&s, 5);
        sim.advance(600.0);
        let generated = sim.vehicles().len();
        let finished = sim.vehicles().iter().filter(|v| v.finished_s.is_some()).count();
        assert_eq!(generated, finished + sim.vehicles_in_system());
        assert!(finished > 0);
        let obs = sim.observe(10.0);
        let on_links: f64 = obs.n_od.iter().flatten().sum();
        let occ: u32 = obs.lane_occupancy.iter().sum();
        assert_eq!(on_links as u32, occ);
    }

    #[test]
    fn service_rate_limits_discharge() {
        let s = fixtures::corridor();
        let mut sim = Simulator::new(&s, 9);
        let w1 = s.network.link(s.network.link_by_name("w1").unwrap()).lanes[0];
        let mut last = 0;
        for _ in 0..60 {
            sim.reset_service_credit();
            sim.advance(10.0);
            let d = sim.counters().lane_discharges[w1.idx()];
            assert!(d - last <= 5, "0.5 veh/s over 10 s");
            last = d;
        }
    }

    #[test]
    fn identical_seeds_identical_runs() {
        let s = fixtures::corridor();
        let mut a = Simulator::new(&s, 11);
        let mut b = Simulator::new(&s, 11);
        a.advance(400.0);
        b.advance(400.0);
        assert_eq!(a.vehicles(), b.vehicles());
    }

    #[test]
    fn reroute_requires_current_link() {
        let s = fixtures::corridor();
        let mut sim = Simulator::new(&s, 1);
        sim.advance(5.0);
        let Some(v) = sim.vehicles().iter().position(|v| v.in_network()) else {
            return;
        };
        let e1 = s.network.link_by_name("e1").unwrap();
        assert!(!sim.reroute(v, &[e1]));
        let path: Vec<LinkId> = ["w0", "w2", "e2", "e1"]
            .iter()
            .map(|n| s.network.link_by_name(n).unwrap())
            .collect();
        assert!(sim.reroute(v, &path));
        assert_eq!(sim.vehicles()[v].remaining(), &path[..]);
    }
}
