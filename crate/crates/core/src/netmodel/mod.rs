//! Static scenario definitions: road network, region partition, boundary plan
//! sets, demand and control parameters.
//!
//! Everything here is immutable once a [`Scenario`] has been loaded and
//! validated; the simulator and all controllers borrow it.

pub mod schema;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mfd::MfdModel;

pub use schema::{load_scenario, parse_scenario, save_scenario, ScenarioFile};

macro_rules! index_id {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn idx(self) -> usize {
                self.0 as usize
            }
        }

        impl From<usize> for $name {
            #[inline]
            fn from(i: usize) -> Self {
                $name(i as u32)
            }
        }
    };
}

index_id!(
    /// Index of a node in [`Network::nodes`].
    NodeId
);
index_id!(
    /// Index of a link in [`Network::links`].
    LinkId
);
index_id!(
    /// Index of a lane in [`Network::lanes`].
    LaneId
);
index_id!(
    /// Index of an intersection in [`Network::intersections`].
    IntersectionId
);
index_id!(
    /// Index of a region in [`RegionPartition::names`].
    RegionId
);

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{context} references unknown {kind} `{id}`")]
    Dangling {
        kind: &'static str,
        id: String,
        context: String,
    },
    #[error("duplicate {kind} id `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("invariant violated ({rule}): {detail}")]
    Invariant { rule: &'static str, detail: String },
    #[error("route is not connected between `{from}` and `{to}`")]
    DisconnectedRoute { from: String, to: String },
    #[error("cannot serialize scenario: {0}")]
    Serialize(String),
}

impl ScenarioError {
    pub(crate) fn invariant(rule: &'static str, detail: impl Into<String>) -> Self {
        ScenarioError::Invariant {
            rule,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub from: NodeId,
    pub to: NodeId,
    pub length_m: f64,
    pub speed_mps: f64,
    pub region: RegionId,
    pub lanes: Vec<LaneId>,
}

impl Link {
    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn free_flow_s(&self) -> f64 {
        self.length_m / self.speed_mps
    }

    /// Lane-meters of the link, the denominator of link density.
    pub fn lane_length_m(&self) -> f64 {
        self.lanes.len() as f64 * self.length_m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub link: LinkId,
    /// Saturation flow, veh/s.
    pub sat_flow: f64,
    /// Storage, vehicles.
    pub capacity_veh: u32,
    /// Downstream lanes reachable from this lane's stop line. Empty for sinks.
    pub outputs: Vec<LaneId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntersectionKind {
    Gating,
    NonGating,
    Interior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub id: String,
    /// Input lanes with right of way under this phase.
    pub lanes: Vec<LaneId>,
    /// Subsets of `lanes` whose movements cross from the first region into the second.
    pub crossings: Vec<((RegionId, RegionId), Vec<LaneId>)>,
}

impl Phase {
    pub fn crossing_lanes(&self, from: RegionId, to: RegionId) -> &[LaneId] {
        self.crossings
            .iter()
            .find(|(pair, _)| *pair == (from, to))
            .map(|(_, lanes)| lanes.as_slice())
            .unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: String,
    pub node: NodeId,
    pub kind: IntersectionKind,
    pub phases: Vec<Phase>,
    /// Unordered region pair (stored with the smaller id first) for boundary intersections.
    pub boundary: Option<(RegionId, RegionId)>,
    /// Per-lane service rate at non-gating intersections, veh/s. Defaults to the lane's saturation flow.
    pub pass_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub lanes: Vec<Lane>,
    pub intersections: Vec<Intersection>,
    node_intersection: Vec<Option<IntersectionId>>,
    successors: Vec<Vec<LinkId>>,
}

impl Network {
    pub(crate) fn new(
        nodes: Vec<Node>,
        links: Vec<Link>,
        lanes: Vec<Lane>,
        intersections: Vec<Intersection>,
    ) -> Self {
        let mut node_intersection = vec![None; nodes.len()];
        for (i, x) in intersections.iter().enumerate() {
            node_intersection[x.node.idx()] = Some(IntersectionId::from(i));
        }
        let successors = links
            .iter()
            .map(|link| {
                let set: BTreeSet<LinkId> = link
                    .lanes
                    .iter()
                    .flat_map(|l| lanes[l.idx()].outputs.iter().map(|o| lanes[o.idx()].link))
                    .collect();
                set.into_iter().collect()
            })
            .collect();
        Network {
            nodes,
            links,
            lanes,
            intersections,
            node_intersection,
            successors,
        }
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.idx()]
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id.idx()]
    }

    pub fn intersection(&self, id: IntersectionId) -> &Intersection {
        &self.intersections[id.idx()]
    }

    /// Intersection controlling the downstream end of `link`, if any.
    pub fn intersection_at_end(&self, link: LinkId) -> Option<IntersectionId> {
        self.node_intersection[self.links[link.idx()].to.idx()]
    }

    pub fn intersection_at_node(&self, node: NodeId) -> Option<IntersectionId> {
        self.node_intersection[node.idx()]
    }

    /// Links reachable through at least one lane connection from `link`.
    pub fn successors(&self, link: LinkId) -> &[LinkId] {
        &self.successors[link.idx()]
    }

    pub fn lane_region(&self, lane: LaneId) -> RegionId {
        self.links[self.lanes[lane.idx()].link.idx()].region
    }

    /// Whether `lane` has an output lane on `next`.
    pub fn lane_reaches(&self, lane: LaneId, next: LinkId) -> bool {
        self.lanes[lane.idx()]
            .outputs
            .iter()
            .any(|o| self.lanes[o.idx()].link == next)
    }

    pub fn link_by_name(&self, name: &str) -> Option<LinkId> {
        self.links
            .iter()
            .position(|l| l.id == name)
            .map(LinkId::from)
    }

    pub fn lane_by_name(&self, name: &str) -> Option<LaneId> {
        self.lanes
            .iter()
            .position(|l| l.id == name)
            .map(LaneId::from)
    }

    /// Region sequence visited by `route`, consecutive duplicates collapsed.
    pub fn candidate_hyper_path(&self, route: &[LinkId]) -> Result<Vec<RegionId>, ScenarioError> {
        let mut out: Vec<RegionId> = Vec::new();
        for (k, &link) in route.iter().enumerate() {
            if k > 0 {
                let prev = route[k - 1];
                if !self.successors(prev).contains(&link) {
                    return Err(ScenarioError::DisconnectedRoute {
                        from: self.links[prev.idx()].id.clone(),
                        to: self.links[link.idx()].id.clone(),
                    });
                }
            }
            let region = self.links[link.idx()].region;
            if out.last() != Some(&region) {
                out.push(region);
            }
        }
        Ok(out)
    }
}

/// Regions and their adjacency. Link membership lives on [`Link::region`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    pub names: Vec<String>,
    /// Sorted neighbor lists; symmetric.
    pub neighbors: Vec<Vec<RegionId>>,
}

impl RegionPartition {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn region_by_name(&self, name: &str) -> Option<RegionId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(RegionId::from)
    }

    pub fn are_adjacent(&self, a: RegionId, b: RegionId) -> bool {
        self.neighbors[a.idx()].contains(&b)
    }

    /// Ordered region pairs `(i, h)` with `h` a neighbor of `i`, in lexicographic order.
    pub fn arcs(&self) -> Vec<(RegionId, RegionId)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().map(move |&h| (RegionId::from(i), h)))
            .collect()
    }
}

/// One phase per gating intersection of a boundary, applied together for one micro step.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPhasePlan {
    pub id: String,
    /// `(intersection, phase index)` pairs aligned with [`Boundary::gating`].
    pub phases: Vec<(IntersectionId, usize)>,
}

/// Everything attached to one unordered pair of adjacent regions.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    /// Smaller region id first.
    pub regions: (RegionId, RegionId),
    pub gating: Vec<IntersectionId>,
    pub non_gating: Vec<IntersectionId>,
    pub plans: Vec<MultiPhasePlan>,
}

/// Piecewise-constant rate: `rate` veh/s from `start_s` until the next step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateStep {
    pub start_s: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdDemand {
    pub origin: LinkId,
    pub destination: LinkId,
    pub profile: Vec<RateStep>,
}

impl OdDemand {
    /// Arrival rate at time `t`; zero before the first step.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.profile
            .iter()
            .rev()
            .find(|s| s.start_s <= t)
            .map(|s| s.rate)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandScenario {
    pub ods: Vec<OdDemand>,
    /// End of the demand window, s.
    pub horizon_s: f64,
    pub warmup_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DemandForecast {
    /// Realized network entries of the previous macro step.
    #[default]
    Previous,
    /// Scheduled OD rates over the coming macro step.
    Scheduled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionProxy {
    /// Boundary outflow plus trips ending inside the region.
    #[default]
    OutflowPlusInternal,
    /// Boundary outflow only.
    Outflow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub t_macro_s: f64,
    pub t_micro_s: f64,
    /// Base tolerance fraction of the feasible-plan test.
    pub sigma: f64,
    /// Absolute tolerance (veh/s) used when the expected rate is zero.
    pub sigma_abs: f64,
    /// Weight of the target-matching term in the route-choice program.
    pub beta: f64,
    /// Logit scale, 1/s.
    pub theta: f64,
    /// Gains of the perimeter PI controller used by the baselines.
    pub kp: f64,
    pub ki: f64,
    /// Fraction of critical accumulation that activates control.
    pub activation_threshold: f64,
    /// Lower limit on the joint program's excess objective; with `Some(0.0)`
    /// regions below critical accumulation do not constrain it.
    pub excess_floor: Option<f64>,
    pub demand_forecast: DemandForecast,
    pub completion_proxy: CompletionProxy,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            t_macro_s: 100.0,
            t_micro_s: 10.0,
            sigma: 0.1,
            sigma_abs: 0.05,
            beta: 10.0,
            theta: 0.01,
            kp: 0.05,
            ki: 0.01,
            activation_threshold: 0.3,
            excess_floor: Some(0.0),
            demand_forecast: DemandForecast::Previous,
            completion_proxy: CompletionProxy::OutflowPlusInternal,
        }
    }
}

impl ControlConfig {
    /// Micro steps per macro step.
    pub fn micro_per_macro(&self) -> usize {
        (self.t_macro_s / self.t_micro_s).round() as usize
    }
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: Network,
    pub partition: RegionPartition,
    pub boundaries: Vec<Boundary>,
    pub demand: DemandScenario,
    pub control: ControlConfig,
    pub mfd: Option<MfdModel>,
}

impl Scenario {
    pub fn boundary_index(&self, a: RegionId, b: RegionId) -> Option<usize> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.boundaries.iter().position(|x| x.regions == key)
    }

    pub fn region_count(&self) -> usize {
        self.partition.len()
    }

    /// Copy of the scenario with every OD rate multiplied by `factor`.
    pub fn scaled_demand(&self, factor: f64) -> Scenario {
        let mut s = self.clone();
        for od in &mut s.demand.ods {
            for step in &mut od.profile {
                step.rate *= factor;
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn hyper_path_single_region() {
        let s = fixtures::corridor();
        let net = &s.network;
        let a = net.link_by_name("w0").unwrap();
        let b = net.link_by_name("w1").unwrap();
        assert_eq!(net.candidate_hyper_path(&[a, b]).unwrap(), vec![RegionId(0)]);
    }

    #[test]
    fn hyper_path_collapses_and_keeps_reentry() {
        let s = fixtures::grid(&fixtures::GridParams::default());
        let net = &s.network;
        let ids = |names: &[&str]| -> Vec<LinkId> {
            names.iter().map(|n| net.link_by_name(n).unwrap()).collect()
        };
        let east = ids(&["l0_01_02", "g0_1_0_in0", "g0_1_0_out1", "l1_00_01"]);
        assert_eq!(
            net.candidate_hyper_path(&east).unwrap(),
            vec![RegionId(0), RegionId(1)]
        );
        let back = ids(&[
            "l0_01_02",
            "g0_1_0_in0",
            "g0_1_0_out1",
            "l1_00_01",
            "l1_01_11",
            "l1_11_10",
            "l1_10_00",
            "g0_1_0_in1",
            "g0_1_0_out0",
        ]);
        assert_eq!(
            net.candidate_hyper_path(&back).unwrap(),
            vec![RegionId(0), RegionId(1), RegionId(0)]
        );
    }

    #[test]
    fn hyper_path_rejects_disconnected_route() {
        let s = fixtures::corridor();
        let net = &s.network;
        let a = net.link_by_name("w0").unwrap();
        let c = net.link_by_name("e1").unwrap();
        assert!(matches!(
            net.candidate_hyper_path(&[a, c]),
            Err(ScenarioError::DisconnectedRoute { .. })
        ));
    }

    #[test]
    fn rate_profile_lookup() {
        let od = OdDemand {
            origin: LinkId(0),
            destination: LinkId(1),
            profile: vec![
                RateStep { start_s: 0.0, rate: 0.2 },
                RateStep { start_s: 100.0, rate: 0.0 },
            ],
        };
        assert_eq!(od.rate_at(50.0), 0.2);
        assert_eq!(od.rate_at(100.0), 0.0);
        assert_eq!(od.rate_at(-1.0), 0.0);
    }
}
