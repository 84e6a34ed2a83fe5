//! Generated scenarios used by tests, benchmarks and the CLI `generate`
//! command: a two-region corridor and a rows×cols grid of regions joined by
//! signalized gateways.

use std::collections::BTreeMap;

use crate::netmodel::schema::{
    DemandFile, IntersectionFile, LaneFile, LinkFile, OdFile, PartitionFile, PhaseFile, PlanFile,
};
use crate::netmodel::{ControlConfig, IntersectionKind, Scenario, ScenarioFile};

const VEH_SPACING_M: f64 = 7.5;

fn lane(link: &str, length_m: f64, sat_flow: f64, outputs: Vec<String>) -> LaneFile {
    LaneFile {
        id: format!("{link}.0"),
        sat_flow,
        capacity: (length_m / VEH_SPACING_M).floor() as u32,
        outputs,
    }
}

fn link(id: &str, from: &str, to: &str, length_m: f64, region: &str, lane: LaneFile) -> LinkFile {
    LinkFile {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        length_m,
        speed_mps: 13.89,
        region: region.into(),
        lanes: vec![lane],
    }
}

/// Two regions `w` and `e` joined by one gating and one non-gating crossing.
///
/// ```text
///          w1 -> [g]  -> e0
/// w0 -> n1                  n3 -> e1
///          w2 -> [ng] -> e2
/// ```
pub fn corridor_file() -> ScenarioFile {
    let mut links = Vec::new();
    let mk = |id: &str, from: &str, to: &str, len: f64, region: &str, outs: &[&str]| {
        link(
            id,
            from,
            to,
            len,
            region,
            lane(id, len, 0.5, outs.iter().map(|o| format!("{o}.0")).collect()),
        )
    };
    links.push(mk("w0", "n0", "n1", 300.0, "w", &["w1", "w2"]));
    links.push(mk("w1", "n1", "g", 150.0, "w", &["e0"]));
    links.push(mk("w2", "n1", "ng", 150.0, "w", &["e2"]));
    links.push(mk("e0", "g", "n3", 150.0, "e", &["e1"]));
    links.push(mk("e2", "ng", "n3", 150.0, "e", &["e1"]));
    links.push(mk("e1", "n3", "n4", 300.0, "e", &[]));

    let pair = || Some(["w".to_string(), "e".to_string()]);
    let intersections = vec![
        IntersectionFile {
            id: "g".into(),
            node: "g".into(),
            kind: IntersectionKind::Gating,
            boundary: pair(),
            pass_rate: None,
            phases: vec![
                PhaseFile { id: "go".into(), lanes: vec!["w1.0".into()] },
                PhaseFile { id: "stop".into(), lanes: vec![] },
            ],
        },
        IntersectionFile {
            id: "ng".into(),
            node: "ng".into(),
            kind: IntersectionKind::NonGating,
            boundary: pair(),
            pass_rate: Some(0.2),
            phases: vec![],
        },
    ];
    let plans = vec![
        PlanFile {
            id: "open".into(),
            boundary: ["w".into(), "e".into()],
            phases: BTreeMap::from([("g".into(), "go".into())]),
        },
        PlanFile {
            id: "closed".into(),
            boundary: ["w".into(), "e".into()],
            phases: BTreeMap::from([("g".into(), "stop".into())]),
        },
    ];
    ScenarioFile {
        partition: PartitionFile {
            regions: vec!["w".into(), "e".into()],
            neighbors: BTreeMap::from([
                ("w".into(), vec!["e".into()]),
                ("e".into(), vec!["w".into()]),
            ]),
        },
        links,
        intersections,
        plans,
        demand: DemandFile {
            horizon_s: 1200.0,
            warmup_s: 100.0,
            seed: 1,
            od: vec![OdFile {
                origin: "w0".into(),
                destination: "e1".into(),
                rates: vec![[0.0, 0.3]],
            }],
        },
        control: ControlConfig::default().into(),
        mfd: Vec::new(),
    }
}

pub fn corridor() -> Scenario {
    Scenario::from_file(&corridor_file()).expect("corridor fixture is valid")
}

/// Region-to-region demand of the grid fixture, veh/s.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionDemand {
    pub origin: usize,
    pub destination: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridParams {
    pub rows: usize,
    pub cols: usize,
    /// Intersections per region side.
    pub side: usize,
    pub link_length_m: f64,
    /// Total length of a gateway (two halves). Each half should take at
    /// least one micro step to traverse at free speed, so that every vehicle
    /// able to cross within a micro step is already visible on the approach.
    pub gateway_length_m: f64,
    pub sat_flow: f64,
    pub horizon_s: f64,
    pub warmup_s: f64,
    pub seed: u64,
    /// Demand ramps up over `[0, peak_end_s)` then drops to `tail_factor`.
    pub peak_end_s: f64,
    pub tail_factor: f64,
    pub demand: Vec<RegionDemand>,
}

impl Default for GridParams {
    fn default() -> Self {
        let d = |o, t, r| RegionDemand {
            origin: o,
            destination: t,
            rate: r,
        };
        GridParams {
            rows: 2,
            cols: 3,
            side: 3,
            link_length_m: 200.0,
            gateway_length_m: 280.0,
            sat_flow: 0.5,
            horizon_s: 3600.0,
            warmup_s: 200.0,
            seed: 1,
            peak_end_s: 2400.0,
            tail_factor: 0.25,
            demand: vec![
                d(0, 2, 0.66),
                d(2, 0, 0.66),
                d(0, 1, 0.18),
                d(1, 2, 0.18),
                d(1, 1, 0.24),
                d(3, 5, 0.18),
                d(5, 3, 0.18),
                d(4, 4, 0.12),
                d(3, 1, 0.12),
                d(5, 1, 0.12),
            ],
        }
    }
}

fn region_name(r: usize) -> String {
    format!("R{r}")
}

fn node(r: usize, a: usize, b: usize) -> String {
    format!("n{r}_{a}_{b}")
}

fn internal_link(r: usize, from: (usize, usize), to: (usize, usize)) -> String {
    format!("l{r}_{}{}_{}{}", from.0, from.1, to.0, to.1)
}

/// Grid of `rows × cols` regions, each a `side × side` lattice of two-way
/// links. Adjacent regions are joined by a two-way gateway at every row (or
/// column) of the shared edge; each gateway is a two-phase gating
/// signal alternating the two directions.
pub fn grid_file(p: &GridParams) -> ScenarioFile {
    assert!(p.side >= 2 && p.rows >= 1 && p.cols >= 1);
    let nr = p.rows * p.cols;
    let side = p.side;
    // One gateway per row (or column) along the shared edge.
    let gate_offsets: Vec<usize> = (0..side).collect();

    // Directed edges as (from node, to node, link id, region, length).
    struct Edge {
        from: String,
        to: String,
        id: String,
        region: usize,
        length: f64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    for r in 0..nr {
        for a in 0..side {
            for b in 0..side {
                for (da, db) in [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)] {
                    let (a2, b2) = (a as i64 + da, b as i64 + db);
                    if a2 < 0 || b2 < 0 || a2 >= side as i64 || b2 >= side as i64 {
                        continue;
                    }
                    let (a2, b2) = (a2 as usize, b2 as usize);
                    edges.push(Edge {
                        from: node(r, a, b),
                        to: node(r, a2, b2),
                        id: internal_link(r, (a, b), (a2, b2)),
                        region: r,
                        length: p.link_length_m,
                    });
                }
            }
        }
    }

    let mut neighbors: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut intersections = Vec::new();
    let mut plans = Vec::new();
    for r in 0..nr {
        let (row, col) = (r / p.cols, r % p.cols);
        let mut adj = Vec::new();
        if col + 1 < p.cols {
            adj.push((r + 1, true));
        }
        if row + 1 < p.rows {
            adj.push((r + p.cols, false));
        }
        for (s, horizontal) in adj {
            neighbors.entry(region_name(r)).or_default().push(region_name(s));
            neighbors.entry(region_name(s)).or_default().push(region_name(r));
            let mut gates = Vec::new();
            for &k in &gate_offsets {
                let (edge_r, edge_s) = if horizontal {
                    (node(r, k, side - 1), node(s, k, 0))
                } else {
                    (node(r, side - 1, k), node(s, 0, k))
                };
                let g = format!("g{r}_{s}_{k}");
                let half = p.gateway_length_m / 2.0;
                for (x, from, region) in [(r, &edge_r, r), (s, &edge_s, s)] {
                    edges.push(Edge {
                        from: from.clone(),
                        to: g.clone(),
                        id: format!("{g}_in{x}"),
                        region,
                        length: half,
                    });
                    edges.push(Edge {
                        from: g.clone(),
                        to: from.clone(),
                        id: format!("{g}_out{x}"),
                        region,
                        length: half,
                    });
                }
                intersections.push(IntersectionFile {
                    id: g.clone(),
                    node: g.clone(),
                    kind: IntersectionKind::Gating,
                    boundary: Some([region_name(r), region_name(s)]),
                    pass_rate: None,
                    phases: vec![
                        PhaseFile {
                            id: "fwd".into(),
                            lanes: vec![format!("{g}_in{r}.0")],
                        },
                        PhaseFile {
                            id: "rev".into(),
                            lanes: vec![format!("{g}_in{s}.0")],
                        },
                    ],
                });
                gates.push(g);
            }
            // Every combination of gateway phases.
            let n = gates.len();
            for mask in 0..(1usize << n) {
                let mut phases = BTreeMap::new();
                let mut id = format!("b{r}_{s}_");
                for (gi, g) in gates.iter().enumerate() {
                    let fwd = mask & (1 << gi) == 0;
                    phases.insert(g.clone(), if fwd { "fwd" } else { "rev" }.to_string());
                    id.push(if fwd { 'f' } else { 'r' });
                }
                plans.push(PlanFile {
                    id,
                    boundary: [region_name(r), region_name(s)],
                    phases,
                });
            }
        }
    }
    for v in neighbors.values_mut() {
        v.sort();
    }

    let links: Vec<LinkFile> = edges
        .iter()
        .map(|e| {
            let outputs = edges
                .iter()
                .filter(|o| o.from == e.to && o.to != e.from)
                .map(|o| format!("{}.0", o.id))
                .collect();
            link(
                &e.id,
                &e.from,
                &e.to,
                e.length,
                &region_name(e.region),
                lane(&e.id, e.length, p.sat_flow, outputs),
            )
        })
        .collect();

    // Each region's trips start on the links leaving its center and end on the
    // links entering it.
    let c = side / 2;
    let center_adjacent = || -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for (da, db) in [(-1i64, 0i64), (0, 1), (1, 0), (0, -1)] {
            let (a2, b2) = (c as i64 + da, c as i64 + db);
            if a2 >= 0 && b2 >= 0 && (a2 as usize) < side && (b2 as usize) < side {
                v.push(((a2 as usize), (b2 as usize)));
            }
        }
        v
    };
    let mut od = Vec::new();
    for d in &p.demand {
        let outs = center_adjacent();
        let ins = center_adjacent();
        let k = outs.len() as f64;
        for (oi, &o) in outs.iter().enumerate() {
            // Destination approach chosen opposite to the origin approach so
            // intra-region trips cross the region.
            let t = ins[(oi + ins.len() / 2) % ins.len()];
            let rate = d.rate / k;
            od.push(OdFile {
                origin: internal_link(d.origin, (c, c), o),
                destination: internal_link(d.destination, t, (c, c)),
                rates: vec![[0.0, rate], [p.peak_end_s, rate * p.tail_factor]],
            });
        }
    }

    ScenarioFile {
        partition: PartitionFile {
            regions: (0..nr).map(region_name).collect(),
            neighbors,
        },
        links,
        intersections,
        plans,
        demand: DemandFile {
            horizon_s: p.horizon_s,
            warmup_s: p.warmup_s,
            seed: p.seed,
            od,
        },
        control: ControlConfig::default().into(),
        mfd: Vec::new(),
    }
}

pub fn grid(p: &GridParams) -> Scenario {
    Scenario::from_file(&grid_file(p)).expect("grid fixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::RegionId;

    #[test]
    fn corridor_shape() {
        let s = corridor();
        assert_eq!(s.partition.len(), 2);
        assert_eq!(s.boundaries.len(), 1);
        assert_eq!(s.boundaries[0].gating.len(), 1);
        assert_eq!(s.boundaries[0].non_gating.len(), 1);
        assert_eq!(s.boundaries[0].plans.len(), 2);
    }

    #[test]
    fn grid_shape() {
        let s = grid(&GridParams::default());
        assert_eq!(s.partition.len(), 6);
        // 7 adjacent pairs in a 2x3 layout, 3 gateways each, 8 plans each.
        assert_eq!(s.boundaries.len(), 7);
        for b in &s.boundaries {
            assert_eq!(b.gating.len(), 3);
            assert!(b.non_gating.is_empty());
            assert_eq!(b.plans.len(), 8);
        }
        assert_eq!(
            s.partition.neighbors[1],
            vec![RegionId(0), RegionId(2), RegionId(4)]
        );
        // 6 regions * 24 internal links + 21 gateways * 4 links
        assert_eq!(s.network.links.len(), 6 * 24 + 21 * 4);
    }

    #[test]
    fn grid_round_trips_through_toml() {
        let s = grid(&GridParams::default());
        let text = s.to_toml().unwrap();
        let back = crate::netmodel::parse_scenario(&text).unwrap();
        assert_eq!(back, s);
    }
}
