//! TOML scenario file format. See `docs/scenario-format.md` for the schema.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::*;
use crate::mfd::{MfdModel, RegionMfd};

fn default_speed() -> f64 {
    13.89
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub partition: PartitionFile,
    pub links: Vec<LinkFile>,
    #[serde(default)]
    pub intersections: Vec<IntersectionFile>,
    #[serde(default)]
    pub plans: Vec<PlanFile>,
    pub demand: DemandFile,
    #[serde(default)]
    pub control: ControlFile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mfd: Vec<MfdFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionFile {
    pub regions: Vec<String>,
    /// Neighbor lists per region; must be symmetric.
    pub neighbors: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFile {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length_m: f64,
    #[serde(default = "default_speed")]
    pub speed_mps: f64,
    pub region: String,
    pub lanes: Vec<LaneFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneFile {
    pub id: String,
    pub sat_flow: f64,
    pub capacity: u32,
    #[serde(default)]
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionFile {
    pub id: String,
    pub node: String,
    pub kind: IntersectionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_rate: Option<f64>,
    #[serde(default)]
    pub phases: Vec<PhaseFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseFile {
    pub id: String,
    pub lanes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub id: String,
    pub boundary: [String; 2],
    /// Gating intersection id -> phase id.
    pub phases: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandFile {
    pub horizon_s: f64,
    pub warmup_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub od: Vec<OdFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdFile {
    pub origin: String,
    pub destination: String,
    /// `[start_s, veh_per_s]` steps.
    pub rates: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlFile {
    pub t_macro_s: f64,
    pub t_micro_s: f64,
    pub sigma: f64,
    pub sigma_abs: f64,
    pub beta: f64,
    pub theta: f64,
    pub kp: f64,
    pub ki: f64,
    pub activation_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excess_floor: Option<f64>,
    pub demand_forecast: DemandForecast,
    pub completion_proxy: CompletionProxy,
}

impl Default for ControlFile {
    fn default() -> Self {
        ControlConfig::default().into()
    }
}

impl From<ControlConfig> for ControlFile {
    fn from(c: ControlConfig) -> Self {
        ControlFile {
            t_macro_s: c.t_macro_s,
            t_micro_s: c.t_micro_s,
            sigma: c.sigma,
            sigma_abs: c.sigma_abs,
            beta: c.beta,
            theta: c.theta,
            kp: c.kp,
            ki: c.ki,
            activation_threshold: c.activation_threshold,
            excess_floor: c.excess_floor,
            demand_forecast: c.demand_forecast,
            completion_proxy: c.completion_proxy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfdFile {
    pub region: String,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub n_crit: f64,
    /// Upper end of the accumulation range the cubic was fitted on.
    pub n_max: f64,
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_col(text, span.start))
            .unwrap_or((0, 0));
        ScenarioError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    Scenario::from_file(&file)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    let text = scenario.to_toml()?;
    std::fs::write(path, text).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map(|p| offset - p).unwrap_or(offset + 1);
    (line, column)
}

fn index_names<'a>(
    kind: &'static str,
    names: impl Iterator<Item = &'a str>,
) -> Result<HashMap<&'a str, usize>, ScenarioError> {
    let mut map = HashMap::new();
    for (i, n) in names.enumerate() {
        if map.insert(n, i).is_some() {
            return Err(ScenarioError::Duplicate {
                kind,
                id: n.to_string(),
            });
        }
    }
    Ok(map)
}

fn lookup(
    map: &HashMap<&str, usize>,
    kind: &'static str,
    id: &str,
    context: impl FnOnce() -> String,
) -> Result<usize, ScenarioError> {
    map.get(id).copied().ok_or_else(|| ScenarioError::Dangling {
        kind,
        id: id.to_string(),
        context: context(),
    })
}

fn ordered(a: RegionId, b: RegionId) -> (RegionId, RegionId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Scenario {
    pub fn from_file(file: &ScenarioFile) -> Result<Scenario, ScenarioError> {
        // Regions and adjacency.
        let region_ix = index_names("region", file.partition.regions.iter().map(|s| s.as_str()))?;
        let mut neighbors = vec![Vec::new(); file.partition.regions.len()];
        for (name, ns) in &file.partition.neighbors {
            let i = lookup(&region_ix, "region", name, || "partition.neighbors".into())?;
            for n in ns {
                let h = lookup(&region_ix, "region", n, || format!("neighbors of `{name}`"))?;
                if h == i {
                    return Err(ScenarioError::invariant(
                        "a region is not its own neighbor",
                        name.clone(),
                    ));
                }
                neighbors[i].push(RegionId::from(h));
            }
            neighbors[i].sort();
            neighbors[i].dedup();
        }
        for (i, ns) in neighbors.iter().enumerate() {
            for h in ns {
                if !neighbors[h.idx()].contains(&RegionId::from(i)) {
                    return Err(ScenarioError::invariant(
                        "adjacency is symmetric",
                        format!(
                            "`{}` lists `{}` but not vice versa",
                            file.partition.regions[i],
                            file.partition.regions[h.idx()]
                        ),
                    ));
                }
            }
        }
        let partition = RegionPartition {
            names: file.partition.regions.clone(),
            neighbors,
        };

        // Nodes are implied by link endpoints, in order of first appearance.
        let mut node_names: Vec<String> = Vec::new();
        let mut node_ix: HashMap<String, usize> = HashMap::new();
        for l in &file.links {
            for n in [&l.from, &l.to] {
                if !node_ix.contains_key(n) {
                    node_ix.insert(n.clone(), node_names.len());
                    node_names.push(n.clone());
                }
            }
        }
        let link_ix = index_names("link", file.links.iter().map(|l| l.id.as_str()))?;
        let lane_ix = index_names(
            "lane",
            file.links
                .iter()
                .flat_map(|l| l.lanes.iter().map(|x| x.id.as_str())),
        )?;

        let mut links = Vec::with_capacity(file.links.len());
        let mut lanes = Vec::new();
        for (li, lf) in file.links.iter().enumerate() {
            if !(lf.length_m > 0.0) {
                return Err(ScenarioError::invariant(
                    "link length_m > 0",
                    format!("link `{}`", lf.id),
                ));
            }
            if !(lf.speed_mps > 0.0) {
                return Err(ScenarioError::invariant(
                    "link speed_mps > 0",
                    format!("link `{}`", lf.id),
                ));
            }
            if lf.lanes.is_empty() {
                return Err(ScenarioError::invariant(
                    "lane_count >= 1",
                    format!("link `{}`", lf.id),
                ));
            }
            let region = lookup(&region_ix, "region", &lf.region, || {
                format!("link `{}`", lf.id)
            })?;
            let mut lane_ids = Vec::new();
            for lane in &lf.lanes {
                if !(lane.sat_flow > 0.0) {
                    return Err(ScenarioError::invariant(
                        "sat_flow > 0",
                        format!("lane `{}`", lane.id),
                    ));
                }
                if lane.capacity < 1 {
                    return Err(ScenarioError::invariant(
                        "capacity >= 1",
                        format!("lane `{}`", lane.id),
                    ));
                }
                let mut outputs = Vec::new();
                for o in &lane.outputs {
                    let oi = lookup(&lane_ix, "lane", o, || {
                        format!("output_lanes of lane `{}`", lane.id)
                    })?;
                    outputs.push(LaneId::from(oi));
                }
                lane_ids.push(LaneId::from(lanes.len()));
                lanes.push(Lane {
                    id: lane.id.clone(),
                    link: LinkId::from(li),
                    sat_flow: lane.sat_flow,
                    capacity_veh: lane.capacity,
                    outputs,
                });
            }
            links.push(Link {
                id: lf.id.clone(),
                from: NodeId::from(node_ix[&lf.from]),
                to: NodeId::from(node_ix[&lf.to]),
                length_m: lf.length_m,
                speed_mps: lf.speed_mps,
                region: RegionId::from(region),
                lanes: lane_ids,
            });
        }
        for lane in &lanes {
            let link = &links[lane.link.idx()];
            for o in &lane.outputs {
                let out_link = &links[lanes[o.idx()].link.idx()];
                if out_link.from != link.to {
                    return Err(ScenarioError::invariant(
                        "output lanes start where the lane's link ends",
                        format!("lane `{}` -> `{}`", lane.id, lanes[o.idx()].id),
                    ));
                }
            }
        }

        // Intersections.
        index_names("intersection", file.intersections.iter().map(|x| x.id.as_str()))?;
        let mut intersections = Vec::new();
        let mut node_taken = vec![false; node_names.len()];
        for xf in &file.intersections {
            let node = *node_ix.get(&xf.node).ok_or_else(|| ScenarioError::Dangling {
                kind: "node",
                id: xf.node.clone(),
                context: format!("intersection `{}`", xf.id),
            })?;
            if std::mem::replace(&mut node_taken[node], true) {
                return Err(ScenarioError::invariant(
                    "at most one intersection per node",
                    format!("node `{}`", xf.node),
                ));
            }
            let boundary = match (&xf.boundary, xf.kind) {
                (None, IntersectionKind::Interior) => None,
                (Some(_), IntersectionKind::Interior) | (None, _) => {
                    return Err(ScenarioError::invariant(
                        "boundary is set iff kind is not interior",
                        format!("intersection `{}`", xf.id),
                    ))
                }
                (Some([a, b]), _) => {
                    let ctx = || format!("boundary of intersection `{}`", xf.id);
                    let a = RegionId::from(lookup(&region_ix, "region", a, ctx)?);
                    let b = RegionId::from(lookup(&region_ix, "region", b, ctx)?);
                    if !partition.are_adjacent(a, b) {
                        return Err(ScenarioError::invariant(
                            "boundary regions are adjacent",
                            format!("intersection `{}`", xf.id),
                        ));
                    }
                    Some(ordered(a, b))
                }
            };
            if xf.kind == IntersectionKind::Gating && xf.phases.len() < 2 {
                return Err(ScenarioError::invariant(
                    "gating intersections have >= 2 phases",
                    format!("intersection `{}`", xf.id),
                ));
            }
            if let Some(r) = xf.pass_rate {
                if !(r > 0.0) || xf.kind != IntersectionKind::NonGating {
                    return Err(ScenarioError::invariant(
                        "pass_rate > 0 and only on non-gating intersections",
                        format!("intersection `{}`", xf.id),
                    ));
                }
            }
            index_names("phase", xf.phases.iter().map(|p| p.id.as_str()))?;
            let mut phases = Vec::new();
            for pf in &xf.phases {
                let mut plane = Vec::new();
                for l in &pf.lanes {
                    let li = LaneId::from(lookup(&lane_ix, "lane", l, || {
                        format!("phase `{}` of intersection `{}`", pf.id, xf.id)
                    })?);
                    if links[lanes[li.idx()].link.idx()].to.idx() != node {
                        return Err(ScenarioError::invariant(
                            "phase lanes approach the intersection",
                            format!("lane `{l}` in phase `{}` of `{}`", pf.id, xf.id),
                        ));
                    }
                    plane.push(li);
                }
                let mut crossings: BTreeMap<(RegionId, RegionId), Vec<LaneId>> = BTreeMap::new();
                for &li in &plane {
                    let from = links[lanes[li.idx()].link.idx()].region;
                    let tos: BTreeSet<RegionId> = lanes[li.idx()]
                        .outputs
                        .iter()
                        .map(|o| links[lanes[o.idx()].link.idx()].region)
                        .filter(|&r| r != from)
                        .collect();
                    for to in tos {
                        crossings.entry((from, to)).or_default().push(li);
                    }
                }
                phases.push(Phase {
                    id: pf.id.clone(),
                    lanes: plane,
                    crossings: crossings.into_iter().collect(),
                });
            }
            intersections.push(Intersection {
                id: xf.id.clone(),
                node: NodeId::from(node),
                kind: xf.kind,
                phases,
                boundary,
                pass_rate: xf.pass_rate,
            });
        }
        let nodes = node_names.into_iter().map(|id| Node { id }).collect();
        let network = Network::new(nodes, links, lanes, intersections);

        // Region changes only happen at declared boundary intersections.
        for lane in &network.lanes {
            let link = network.link(lane.link);
            for o in &lane.outputs {
                let to = network.link(network.lane(*o).link).region;
                if to == link.region {
                    continue;
                }
                let ok = network
                    .intersection_at_node(link.to)
                    .map(|x| network.intersection(x).boundary == Some(ordered(link.region, to)))
                    .unwrap_or(false);
                if !ok {
                    return Err(ScenarioError::invariant(
                        "region changes only at boundary intersections of that region pair",
                        format!("lane `{}` -> `{}`", lane.id, network.lane(*o).id),
                    ));
                }
            }
        }

        // Boundaries and plan sets.
        let mut boundaries: Vec<Boundary> = Vec::new();
        for (i, ns) in partition.neighbors.iter().enumerate() {
            for &h in ns {
                let i = RegionId::from(i);
                if i < h {
                    let gating = network
                        .intersections
                        .iter()
                        .enumerate()
                        .filter(|(_, x)| {
                            x.boundary == Some((i, h)) && x.kind == IntersectionKind::Gating
                        })
                        .map(|(k, _)| IntersectionId::from(k))
                        .collect::<Vec<_>>();
                    let non_gating = network
                        .intersections
                        .iter()
                        .enumerate()
                        .filter(|(_, x)| {
                            x.boundary == Some((i, h)) && x.kind == IntersectionKind::NonGating
                        })
                        .map(|(k, _)| IntersectionId::from(k))
                        .collect::<Vec<_>>();
                    if gating.is_empty() {
                        return Err(ScenarioError::invariant(
                            "each boundary owns >= 1 gating intersection",
                            format!(
                                "{}-{}",
                                partition.names[i.idx()],
                                partition.names[h.idx()]
                            ),
                        ));
                    }
                    boundaries.push(Boundary {
                        regions: (i, h),
                        gating,
                        non_gating,
                        plans: Vec::new(),
                    });
                }
            }
        }
        index_names("plan", file.plans.iter().map(|p| p.id.as_str()))?;
        for pf in &file.plans {
            let ctx = || format!("plan `{}`", pf.id);
            let a = RegionId::from(lookup(&region_ix, "region", &pf.boundary[0], ctx)?);
            let b = RegionId::from(lookup(&region_ix, "region", &pf.boundary[1], ctx)?);
            let bi = boundaries
                .iter()
                .position(|x| x.regions == ordered(a, b))
                .ok_or_else(|| {
                    ScenarioError::invariant("plan boundary regions are adjacent", ctx())
                })?;
            let mut phases = Vec::new();
            for &g in &boundaries[bi].gating {
                let x = network.intersection(g);
                let pname = pf.phases.get(&x.id).ok_or_else(|| {
                    ScenarioError::invariant(
                        "exactly one phase per gating intersection of the boundary",
                        format!("plan `{}` misses `{}`", pf.id, x.id),
                    )
                })?;
                let pi = x.phases.iter().position(|p| &p.id == pname).ok_or_else(|| {
                    ScenarioError::Dangling {
                        kind: "phase",
                        id: pname.clone(),
                        context: format!("plan `{}` at `{}`", pf.id, x.id),
                    }
                })?;
                phases.push((g, pi));
            }
            if pf.phases.len() != phases.len() {
                return Err(ScenarioError::invariant(
                    "exactly one phase per gating intersection of the boundary",
                    format!("plan `{}` names intersections outside its boundary", pf.id),
                ));
            }
            boundaries[bi].plans.push(MultiPhasePlan {
                id: pf.id.clone(),
                phases,
            });
        }
        for b in &boundaries {
            if b.plans.is_empty() {
                return Err(ScenarioError::invariant(
                    "every boundary has at least one plan",
                    format!(
                        "{}-{}",
                        partition.names[b.regions.0.idx()],
                        partition.names[b.regions.1.idx()]
                    ),
                ));
            }
        }

        // Demand.
        let d = &file.demand;
        if !(d.warmup_s >= 0.0 && d.warmup_s < d.horizon_s) {
            return Err(ScenarioError::invariant(
                "0 <= warmup_s < horizon_s",
                format!("warmup {} horizon {}", d.warmup_s, d.horizon_s),
            ));
        }
        let mut ods = Vec::new();
        for (k, o) in d.od.iter().enumerate() {
            let ctx = || format!("demand.od[{k}]");
            let origin = LinkId::from(lookup(&link_ix, "link", &o.origin, ctx)?);
            let destination = LinkId::from(lookup(&link_ix, "link", &o.destination, ctx)?);
            let mut profile = Vec::new();
            for [start_s, rate] in &o.rates {
                if !(*rate >= 0.0) {
                    return Err(ScenarioError::invariant("rates >= 0", ctx()));
                }
                if profile.last().is_some_and(|p: &RateStep| p.start_s >= *start_s) {
                    return Err(ScenarioError::invariant(
                        "rate steps are strictly increasing in time",
                        ctx(),
                    ));
                }
                profile.push(RateStep {
                    start_s: *start_s,
                    rate: *rate,
                });
            }
            if !reachable(&network, origin, destination) {
                return Err(ScenarioError::invariant(
                    "destination reachable from origin",
                    format!("`{}` -> `{}`", o.origin, o.destination),
                ));
            }
            ods.push(OdDemand {
                origin,
                destination,
                profile,
            });
        }
        let demand = DemandScenario {
            ods,
            horizon_s: d.horizon_s,
            warmup_s: d.warmup_s,
            seed: d.seed,
        };

        let c = &file.control;
        let control = ControlConfig {
            t_macro_s: c.t_macro_s,
            t_micro_s: c.t_micro_s,
            sigma: c.sigma,
            sigma_abs: c.sigma_abs,
            beta: c.beta,
            theta: c.theta,
            kp: c.kp,
            ki: c.ki,
            activation_threshold: c.activation_threshold,
            excess_floor: c.excess_floor,
            demand_forecast: c.demand_forecast,
            completion_proxy: c.completion_proxy,
        };
        let ratio = control.t_macro_s / control.t_micro_s;
        if !(control.t_micro_s > 0.0 && ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return Err(ScenarioError::invariant(
                "t_macro_s = u * t_micro_s for an integer u >= 1",
                format!("{} / {}", control.t_macro_s, control.t_micro_s),
            ));
        }
        if !(control.sigma > 0.0 && control.sigma_abs > 0.0) {
            return Err(ScenarioError::invariant("sigma > 0", "control"));
        }
        if !(control.activation_threshold > 0.0 && control.activation_threshold < 1.0) {
            return Err(ScenarioError::invariant(
                "activation threshold in (0,1)",
                "control",
            ));
        }
        if !(control.theta > 0.0 && control.beta >= 0.0 && control.kp >= 0.0 && control.ki >= 0.0)
        {
            return Err(ScenarioError::invariant(
                "theta > 0, beta >= 0, gains >= 0",
                "control",
            ));
        }

        let mfd = if file.mfd.is_empty() {
            None
        } else {
            let mut regions: Vec<Option<RegionMfd>> = vec![None; partition.len()];
            for m in &file.mfd {
                let r = lookup(&region_ix, "region", &m.region, || "mfd".into())?;
                regions[r] = Some(RegionMfd {
                    beta1: m.beta1,
                    beta2: m.beta2,
                    beta3: m.beta3,
                    n_crit: m.n_crit,
                    n_max: m.n_max,
                });
            }
            let regions = regions
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    r.ok_or_else(|| {
                        ScenarioError::invariant(
                            "mfd covers every region",
                            partition.names[i].clone(),
                        )
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(MfdModel::new(regions))
        };

        Ok(Scenario {
            network,
            partition,
            boundaries,
            demand,
            control,
            mfd,
        })
    }

    pub fn to_file(&self) -> ScenarioFile {
        let net = &self.network;
        let pname = |r: RegionId| self.partition.names[r.idx()].clone();
        let partition = PartitionFile {
            regions: self.partition.names.clone(),
            neighbors: self
                .partition
                .neighbors
                .iter()
                .enumerate()
                .map(|(i, ns)| {
                    (
                        self.partition.names[i].clone(),
                        ns.iter().map(|&h| pname(h)).collect(),
                    )
                })
                .collect(),
        };
        let links = net
            .links
            .iter()
            .map(|l| LinkFile {
                id: l.id.clone(),
                from: net.nodes[l.from.idx()].id.clone(),
                to: net.nodes[l.to.idx()].id.clone(),
                length_m: l.length_m,
                speed_mps: l.speed_mps,
                region: pname(l.region),
                lanes: l
                    .lanes
                    .iter()
                    .map(|&x| {
                        let lane = net.lane(x);
                        LaneFile {
                            id: lane.id.clone(),
                            sat_flow: lane.sat_flow,
                            capacity: lane.capacity_veh,
                            outputs: lane
                                .outputs
                                .iter()
                                .map(|o| net.lane(*o).id.clone())
                                .collect(),
                        }
                    })
                    .collect(),
            })
            .collect();
        let intersections = net
            .intersections
            .iter()
            .map(|x| IntersectionFile {
                id: x.id.clone(),
                node: net.nodes[x.node.idx()].id.clone(),
                kind: x.kind,
                boundary: x.boundary.map(|(a, b)| [pname(a), pname(b)]),
                pass_rate: x.pass_rate,
                phases: x
                    .phases
                    .iter()
                    .map(|p| PhaseFile {
                        id: p.id.clone(),
                        lanes: p.lanes.iter().map(|l| net.lane(*l).id.clone()).collect(),
                    })
                    .collect(),
            })
            .collect();
        let plans = self
            .boundaries
            .iter()
            .flat_map(|b| {
                b.plans.iter().map(move |p| PlanFile {
                    id: p.id.clone(),
                    boundary: [pname(b.regions.0), pname(b.regions.1)],
                    phases: p
                        .phases
                        .iter()
                        .map(|&(x, pi)| {
                            let x = net.intersection(x);
                            (x.id.clone(), x.phases[pi].id.clone())
                        })
                        .collect(),
                })
            })
            .collect();
        let demand = DemandFile {
            horizon_s: self.demand.horizon_s,
            warmup_s: self.demand.warmup_s,
            seed: self.demand.seed,
            od: self
                .demand
                .ods
                .iter()
                .map(|o| OdFile {
                    origin: net.link(o.origin).id.clone(),
                    destination: net.link(o.destination).id.clone(),
                    rates: o.profile.iter().map(|s| [s.start_s, s.rate]).collect(),
                })
                .collect(),
        };
        let mfd = self
            .mfd
            .as_ref()
            .map(|m| {
                m.regions()
                    .iter()
                    .enumerate()
                    .map(|(i, r)| MfdFile {
                        region: self.partition.names[i].clone(),
                        beta1: r.beta1,
                        beta2: r.beta2,
                        beta3: r.beta3,
                        n_crit: r.n_crit,
                        n_max: r.n_max,
                    })
                    .collect()
            })
            .unwrap_or_default();
        ScenarioFile {
            partition,
            links,
            intersections,
            plans,
            demand,
            control: self.control.clone().into(),
            mfd,
        }
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(&self.to_file()).map_err(|e| ScenarioError::Serialize(e.to_string()))
    }
}

fn reachable(net: &Network, from: LinkId, to: LinkId) -> bool {
    let mut seen = vec![false; net.links.len()];
    let mut queue = VecDeque::from([from]);
    seen[from.idx()] = true;
    while let Some(l) = queue.pop_front() {
        if l == to {
            return true;
        }
        for &n in net.successors(l) {
            if !std::mem::replace(&mut seen[n.idx()], true) {
                queue.push_back(n);
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[partition]
regions = ["a", "b"]
neighbors = { a = ["b"], b = ["a"] }

[[links]]
id = "x"
from = "n0"
to = "n1"
length_m = 100.0
region = "a"
[[links.lanes]]
id = "x0"
sat_flow = 0.5
capacity = 10
outputs = ["y0"]

[[links]]
id = "y"
from = "n1"
to = "n2"
length_m = 100.0
region = "b"
[[links.lanes]]
id = "y0"
sat_flow = 0.5
capacity = 10

[[intersections]]
id = "g"
node = "n1"
kind = "gating"
boundary = ["a", "b"]
[[intersections.phases]]
id = "go"
lanes = ["x0"]
[[intersections.phases]]
id = "stop"
lanes = []

[[plans]]
id = "open"
boundary = ["a", "b"]
phases = { g = "go" }

[demand]
horizon_s = 600.0
warmup_s = 0.0
seed = 1
[[demand.od]]
origin = "x"
destination = "y"
rates = [[0.0, 0.1]]
"#;

    #[test]
    fn minimal_two_region_scenario_loads() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.partition.len(), 2);
        assert_eq!(s.network.links.len(), 2);
        assert_eq!(s.boundaries.len(), 1);
        let g = &s.network.intersections[0];
        assert_eq!(g.phases[0].crossing_lanes(RegionId(0), RegionId(1)), &[LaneId(0)]);
        assert_eq!(s.control, ControlConfig::default());
    }

    #[test]
    fn dangling_output_lane_is_reported() {
        let text = MINIMAL.replace(r#"outputs = ["y0"]"#, r#"outputs = ["nope"]"#);
        match parse_scenario(&text) {
            Err(ScenarioError::Dangling { kind, id, .. }) => {
                assert_eq!(kind, "lane");
                assert_eq!(id, "nope");
            }
            other => panic!("expected dangling error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line() {
        let text = MINIMAL.replace("length_m = 100.0\nregion = \"b\"", "length_m = \"x\"\nregion = \"b\"");
        match parse_scenario(&text) {
            Err(ScenarioError::Parse { line, .. }) => assert!(line > 20, "line {line}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        let text = MINIMAL.replace(r#"b = ["a"]"#, "b = []");
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::Invariant { rule: "adjacency is symmetric", .. })
        ));
    }

    #[test]
    fn crossing_at_undeclared_node_rejected() {
        let text = MINIMAL.replace("kind = \"gating\"\nboundary = [\"a\", \"b\"]", "kind = \"interior\"");
        assert!(parse_scenario(&text).is_err());
    }

    #[test]
    fn warmup_must_precede_horizon() {
        let text = MINIMAL.replace("warmup_s = 0.0", "warmup_s = 600.0");
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::Invariant { .. })
        ));
    }

    #[test]
    fn toml_round_trip_is_identity() {
        let s = parse_scenario(MINIMAL).unwrap();
        let again = parse_scenario(&s.to_toml().unwrap()).unwrap();
        assert_eq!(s, again);
    }
}
