//! Micro-level boundary control: spreads each macro-step boundary-flow target
//! over the micro steps, keeps the multi-phase plans whose estimated flow is
//! close enough to the remaining per-step rate in both directions, and
//! activates the one with the highest max-pressure weight.
//!
//! Directions of a boundary `(a, b)` are indexed `0` for `a → b` and `1` for
//! `b → a`.

use crate::mesosim::{Counters, MicroObservation};
use crate::netmodel::{Boundary, IntersectionId, LaneId, RegionId, Scenario};

/// Per-micro-step rate still needed to meet `target` (veh/s over the macro
/// step) at micro step `k` (1-based) of `u`, given the vehicles already
/// moved. Never negative.
pub fn expected_rate(target: f64, realized_veh: f64, k: usize, u: usize, t_micro: f64) -> f64 {
    let t_macro = u as f64 * t_micro;
    let remaining = target * t_macro - realized_veh;
    (remaining / ((u - k + 1) as f64 * t_micro)).max(0.0)
}

/// Lane-level estimate of vehicles movable in one micro step:
/// `min{ reachable, c_l T, mean free storage of the outputs }`.
pub fn lane_flow(scenario: &Scenario, lane: LaneId, obs: &MicroObservation, t_micro: f64) -> f64 {
    let net = &scenario.network;
    let l = net.lane(lane);
    let reach = obs.lane_reachable[lane.idx()] as f64;
    let service = l.sat_flow * t_micro;
    let space = if l.outputs.is_empty() {
        f64::INFINITY
    } else {
        l.outputs
            .iter()
            .map(|o| net.lane(*o).capacity_veh as f64 - obs.lane_occupancy[o.idx()] as f64)
            .sum::<f64>()
            / l.outputs.len() as f64
    };
    reach.min(service).min(space.max(0.0))
}

/// Estimated crossing rate `from → to` (veh/s) over the coming micro step if
/// `plan` of boundary `b` is active.
pub fn plan_flow(
    scenario: &Scenario,
    b: usize,
    plan: usize,
    from: RegionId,
    to: RegionId,
    obs: &MicroObservation,
    t_micro: f64,
) -> f64 {
    let net = &scenario.network;
    let mut total = 0.0;
    for &(x, ph) in &scenario.boundaries[b].plans[plan].phases {
        let phase = &net.intersection(x).phases[ph];
        for &l in phase.crossing_lanes(from, to) {
            total += lane_flow(scenario, l, obs, t_micro);
        }
    }
    total / t_micro
}

/// Max-pressure weight of a phase: `Σ_l (q_l - mean_o q_o) c_l`.
pub fn phase_pressure(
    scenario: &Scenario,
    x: IntersectionId,
    phase: usize,
    obs: &MicroObservation,
) -> f64 {
    let net = &scenario.network;
    net.intersection(x).phases[phase]
        .lanes
        .iter()
        .map(|&l| {
            let lane = net.lane(l);
            let down = if lane.outputs.is_empty() {
                0.0
            } else {
                lane.outputs
                    .iter()
                    .map(|o| obs.lane_queue[o.idx()] as f64)
                    .sum::<f64>()
                    / lane.outputs.len() as f64
            };
            (obs.lane_queue[l.idx()] as f64 - down) * lane.sat_flow
        })
        .sum()
}

pub fn plan_pressure(scenario: &Scenario, b: usize, plan: usize, obs: &MicroObservation) -> f64 {
    scenario.boundaries[b].plans[plan]
        .phases
        .iter()
        .map(|&(x, ph)| phase_pressure(scenario, x, ph, obs))
        .sum()
}

/// Tolerances of the feasible-plan test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub sigma: f64,
    pub sigma_abs: f64,
}

/// Whether an estimate (including non-gating flow) is acceptable against the
/// expected rate at step `k` of `u`.
pub fn within_tolerance(estimate: f64, expected: f64, k: usize, u: usize, tol: Tolerance) -> bool {
    if expected > 0.0 {
        (estimate - expected).abs() / expected < (u - k + 1) as f64 * tol.sigma
    } else {
        estimate < tol.sigma_abs
    }
}

fn deviation(estimate: f64, expected: f64, tol: Tolerance) -> f64 {
    if expected > 0.0 {
        (estimate - expected).abs() / expected
    } else {
        estimate / tol.sigma_abs
    }
}

/// Plans (by index) passing the test in both directions.
pub fn feasible_plans(
    estimates: &[[f64; 2]],
    expected: [f64; 2],
    k: usize,
    u: usize,
    tol: Tolerance,
) -> Vec<usize> {
    estimates
        .iter()
        .enumerate()
        .filter(|(_, e)| (0..2).all(|d| within_tolerance(e[d], expected[d], k, u, tol)))
        .map(|(s, _)| s)
        .collect()
}

/// Highest-weight plan among `candidates`, ties to the lowest index.
pub fn select_plan(candidates: &[usize], weights: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &s in candidates {
        match best {
            Some(b) if weights[s] < weights[b] || (weights[s] == weights[b] && s > b) => {}
            _ => best = Some(s),
        }
    }
    best
}

/// Plan minimizing the summed relative deviation of both directions.
pub fn fallback_plan(estimates: &[[f64; 2]], expected: [f64; 2], tol: Tolerance) -> usize {
    let mut best = 0;
    let mut best_dev = f64::INFINITY;
    for (s, e) in estimates.iter().enumerate() {
        let dev: f64 = (0..2).map(|d| deviation(e[d], expected[d], tol)).sum();
        if dev < best_dev {
            best = s;
            best_dev = dev;
        }
    }
    best
}

/// Flow envelope of one direction: `[min_s m̂^s, max_s m̂^s] + ng`.
pub fn flow_bounds(estimates: &[[f64; 2]], dir: usize, nongating: f64) -> (f64, f64) {
    let lo = estimates.iter().map(|e| e[dir]).fold(f64::INFINITY, f64::min);
    let hi = estimates.iter().map(|e| e[dir]).fold(f64::NEG_INFINITY, f64::max);
    if estimates.is_empty() {
        (nongating, nongating)
    } else {
        (lo + nongating, hi + nongating)
    }
}

fn directions(b: &Boundary) -> [(RegionId, RegionId); 2] {
    let (a, c) = b.regions;
    [(a, c), (c, a)]
}

/// Plan estimates `[a→b, b→a]` for every plan of boundary `b`.
pub fn plan_estimates(
    scenario: &Scenario,
    b: usize,
    obs: &MicroObservation,
    t_micro: f64,
) -> Vec<[f64; 2]> {
    let dirs = directions(&scenario.boundaries[b]);
    (0..scenario.boundaries[b].plans.len())
        .map(|s| {
            [
                plan_flow(scenario, b, s, dirs[0].0, dirs[0].1, obs, t_micro),
                plan_flow(scenario, b, s, dirs[1].0, dirs[1].1, obs, t_micro),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryDecision {
    pub boundary: usize,
    pub k: usize,
    pub plan: usize,
    pub expected: [f64; 2],
    pub estimate: [f64; 2],
    pub nongating: [f64; 2],
    pub feasible: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
struct Track {
    target: [f64; 2],
    tracking: bool,
}

/// Stateful per-boundary tracker across the micro steps of a macro step.
#[derive(Debug, Clone)]
pub struct BoundaryController {
    u: usize,
    t_micro: f64,
    tol: Tolerance,
    tracks: Vec<Track>,
    k: usize,
    macro_start: Option<Counters>,
    prev_step: Option<Counters>,
}

impl BoundaryController {
    pub fn new(scenario: &Scenario) -> Self {
        let c = &scenario.control;
        BoundaryController {
            u: c.micro_per_macro(),
            t_micro: c.t_micro_s,
            tol: Tolerance {
                sigma: c.sigma,
                sigma_abs: c.sigma_abs,
            },
            tracks: vec![
                Track {
                    target: [0.0; 2],
                    tracking: false,
                };
                scenario.boundaries.len()
            ],
            k: 1,
            macro_start: None,
            prev_step: None,
        }
    }

    /// Envelopes `[(M^min, M^max); 2]` per boundary for the coming macro
    /// step, from the plan estimates at its first micro step plus the
    /// non-gating flow of the previous micro step.
    pub fn envelopes(&self, scenario: &Scenario, obs: &MicroObservation) -> Vec<[(f64, f64); 2]> {
        (0..scenario.boundaries.len())
            .map(|b| {
                let est = plan_estimates(scenario, b, obs, self.t_micro);
                let ng = self.nongating_rate(scenario, b, obs);
                [flow_bounds(&est, 0, ng[0]), flow_bounds(&est, 1, ng[1])]
            })
            .collect()
    }

    /// Starts a macro step. `targets[b]` is `Some([a→b, b→a])` to track
    /// boundary-flow targets, `None` to run pure max pressure.
    pub fn start_macro(&mut self, obs: &MicroObservation, targets: &[Option<[f64; 2]>]) {
        for (t, tgt) in self.tracks.iter_mut().zip(targets) {
            t.tracking = tgt.is_some();
            t.target = tgt.unwrap_or([0.0; 2]);
        }
        self.k = 1;
        self.macro_start = Some(obs.counters.clone());
    }

    fn nongating_rate(&self, scenario: &Scenario, b: usize, obs: &MicroObservation) -> [f64; 2] {
        let Some(prev) = &self.prev_step else {
            return [0.0; 2];
        };
        let d = directions(&scenario.boundaries[b]);
        let rate = |(i, h): (RegionId, RegionId)| {
            (obs.counters.nongating_crossings[i.idx()][h.idx()]
                - prev.nongating_crossings[i.idx()][h.idx()]) as f64
                / self.t_micro
        };
        [rate(d[0]), rate(d[1])]
    }

    /// Vehicles moved `[a→b, b→a]` since the start of the macro step.
    pub fn realized(&self, scenario: &Scenario, b: usize, obs: &MicroObservation) -> [f64; 2] {
        let Some(start) = &self.macro_start else {
            return [0.0; 2];
        };
        let d = directions(&scenario.boundaries[b]);
        let moved = |(i, h): (RegionId, RegionId)| {
            (obs.counters.crossings(i.idx(), h.idx()) - start.crossings(i.idx(), h.idx())) as f64
        };
        [moved(d[0]), moved(d[1])]
    }

    /// Chooses a plan for every boundary at the current micro step.
    pub fn step(&mut self, scenario: &Scenario, obs: &MicroObservation) -> Vec<BoundaryDecision> {
        let k = self.k.min(self.u);
        let mut out = Vec::with_capacity(scenario.boundaries.len());
        for b in 0..scenario.boundaries.len() {
            let est = plan_estimates(scenario, b, obs, self.t_micro);
            let ng = self.nongating_rate(scenario, b, obs);
            let weights: Vec<f64> = (0..est.len())
                .map(|s| plan_pressure(scenario, b, s, obs))
                .collect();
            let track = &self.tracks[b];
            let (plan, expected, feasible, fallback) = if track.tracking {
                let done = self.realized(scenario, b, obs);
                let expected = [
                    expected_rate(track.target[0], done[0], k, self.u, self.t_micro),
                    expected_rate(track.target[1], done[1], k, self.u, self.t_micro),
                ];
                let with_ng: Vec<[f64; 2]> =
                    est.iter().map(|e| [e[0] + ng[0], e[1] + ng[1]]).collect();
                let cand = feasible_plans(&with_ng, expected, k, self.u, self.tol);
                match select_plan(&cand, &weights) {
                    Some(s) => (s, expected, cand.len(), false),
                    None => {
                        let s = fallback_plan(&with_ng, expected, self.tol);
                        log::debug!(
                            "boundary {b} step {k}: no feasible plan, fallback to {s} (expected {expected:?})"
                        );
                        (s, expected, 0, true)
                    }
                }
            } else {
                let all: Vec<usize> = (0..est.len()).collect();
                let s = select_plan(&all, &weights).unwrap_or(0);
                (s, [f64::NAN; 2], all.len(), false)
            };
            out.push(BoundaryDecision {
                boundary: b,
                k,
                plan,
                expected,
                estimate: est.get(plan).copied().unwrap_or([0.0; 2]),
                nongating: ng,
                feasible,
                fallback,
            });
        }
        self.k += 1;
        self.prev_step = Some(obs.counters.clone());
        out
    }
}
