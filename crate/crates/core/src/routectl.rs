//! Route guidance: candidate routes per vehicle and the route-choice
//! quadratic program.
//!
//! Each vehicle in the network has one or two candidate routes: its current
//! one and the instantaneous shortest path. The program chooses route
//! probabilities `φ_vr` so that the resulting next-region shares of every OD
//! pair match the upper-level splits `c_ihj` (weighted by `β`) while keeping
//! the projected link densities close to their regional mean.

use std::collections::BTreeMap;

use rand::Rng;

use crate::macrodyn::RegionGraph;
use crate::mesosim::{shortest_path, Simulator};
use crate::netmodel::{LinkId, Scenario};

const MAX_SWEEPS: usize = 2000;
const STEP_TOL: f64 = 1e-13;
const CG_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct RouteOption {
    /// Remaining links, starting with the current one.
    pub path: Vec<LinkId>,
    /// First region other than the current one along the path.
    pub next_region: Option<usize>,
    /// Link the vehicle is projected to occupy at the end of the step.
    pub projected: LinkId,
    /// Current travel-time estimate of the path beyond the current link, s.
    pub cost_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedVehicle {
    pub vehicle: usize,
    pub region: usize,
    pub dest_region: usize,
    /// Option 0 is the current route.
    pub options: Vec<RouteOption>,
}

/// Every vehicle in the network with its candidate routes, plus the static
/// link data the program needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteSet {
    pub vehicles: Vec<GuidedVehicle>,
    /// `lanes × length` per link, m.
    pub link_extent_m: Vec<f64>,
    pub link_region: Vec<usize>,
    /// `N_i / Σ_{x∈i} extent_x`.
    pub mean_density: Vec<f64>,
    /// `N_ij` vehicle counts.
    pub n_od: Vec<Vec<f64>>,
}

fn next_region(scenario: &Scenario, path: &[LinkId]) -> Option<usize> {
    let here = scenario.network.link(path[0]).region;
    path.iter()
        .map(|&l| scenario.network.link(l).region)
        .find(|&r| r != here)
        .map(|r| r.idx())
}

/// Builds candidate routes for every vehicle in the network. Vehicles on their
/// destination link or one link away keep a single option.
pub fn generate_routes(sim: &Simulator, t_micro: f64) -> RouteSet {
    let scenario = sim.scenario();
    let net = &scenario.network;
    let costs = sim.link_costs();
    let horizon = sim.time() + t_micro;
    let r = scenario.region_count();
    let path_cost = |p: &[LinkId]| -> f64 { p[1..].iter().map(|l| costs[l.idx()]).sum() };

    let mut vehicles = Vec::new();
    let mut n_od = vec![vec![0.0; r]; r];
    for v in sim.vehicles().iter().filter(|v| v.in_network()) {
        let here = v.current_link();
        let region = net.link(here).region.idx();
        n_od[region][v.dest_region.idx()] += 1.0;
        let moves_on = !v.queued && v.stop_arrival_s <= horizon;
        let option = |path: Vec<LinkId>| {
            let projected = if moves_on && path.len() > 1 { path[1] } else { path[0] };
            RouteOption {
                next_region: next_region(scenario, &path),
                projected,
                cost_s: path_cost(&path),
                path,
            }
        };
        let current = v.remaining().to_vec();
        let mut options = vec![option(current.clone())];
        if current.len() > 2 {
            if let Some(alt) = shortest_path(scenario, here, v.destination, &costs) {
                let lane_ok = v.lane.map_or(true, |l| net.lane_reaches(l, alt[1]));
                if alt != current && lane_ok {
                    options.push(option(alt));
                }
            }
        }
        vehicles.push(GuidedVehicle {
            vehicle: v.id,
            region,
            dest_region: v.dest_region.idx(),
            options,
        });
    }
    let link_extent_m: Vec<f64> = net
        .links
        .iter()
        .map(|l| l.lane_count() as f64 * l.length_m)
        .collect();
    let link_region: Vec<usize> = net.links.iter().map(|l| l.region.idx()).collect();
    let mut region_extent = vec![0.0; r];
    for (x, &e) in link_extent_m.iter().enumerate() {
        region_extent[link_region[x]] += e;
    }
    let mean_density = (0..r)
        .map(|i| n_od[i].iter().sum::<f64>() / region_extent[i])
        .collect();
    RouteSet {
        vehicles,
        link_extent_m,
        link_region,
        mean_density,
        n_od,
    }
}

/// Next-region shares implied by `phi`, split-indexed:
/// `Σ_v Σ_r φ_vr [next_r = h] / N_ij` over vehicles in `i` bound for `j`.
pub fn split_shares(set: &RouteSet, graph: &RegionGraph, phi: &[Vec<f64>]) -> Vec<f64> {
    let mut shares = vec![0.0; graph.splits().len()];
    for (v, p) in set.vehicles.iter().zip(phi) {
        if v.region == v.dest_region {
            continue;
        }
        for (o, &w) in v.options.iter().zip(p) {
            if let Some(s) = o.next_region.and_then(|h| graph.split(v.region, h, v.dest_region)) {
                shares[s] += w / set.n_od[v.region][v.dest_region];
            }
        }
    }
    shares
}

/// Projected link densities implied by `phi`, veh/m.
pub fn density_fields(set: &RouteSet, phi: &[Vec<f64>]) -> Vec<f64> {
    let mut d = vec![0.0; set.link_extent_m.len()];
    for (v, p) in set.vehicles.iter().zip(phi) {
        for (o, &w) in v.options.iter().zip(p) {
            d[o.projected.idx()] += w / set.link_extent_m[o.projected.idx()];
        }
    }
    d
}

/// Program objective at `phi`.
pub fn objective(set: &RouteSet, graph: &RegionGraph, c: &[f64], beta: f64, phi: &[Vec<f64>]) -> f64 {
    let shares = split_shares(set, graph, phi);
    let mut f = 0.0;
    for (s, &(i, _, j)) in graph.splits().iter().enumerate() {
        if set.n_od[i][j] > 0.0 {
            f += beta * (shares[s] - c[s]).powi(2);
        }
    }
    for (x, d) in density_fields(set, phi).iter().enumerate() {
        f += (d - set.mean_density[set.link_region[x]]).powi(2);
    }
    f
}

/// Everyone keeps the current route.
pub fn keep_current(set: &RouteSet) -> Vec<Vec<f64>> {
    set.vehicles
        .iter()
        .map(|v| {
            let mut p = vec![0.0; v.options.len()];
            p[0] = 1.0;
            p
        })
        .collect()
}

/// Solves the route-choice program over the probability of the alternative
/// route of each two-option vehicle: exact coordinate sweeps alternating with
/// conjugate-gradient steps on the variables strictly inside `[0, 1]`.
pub fn solve_probabilities(set: &RouteSet, graph: &RegionGraph, c: &[f64], beta: f64) -> Vec<Vec<f64>> {
    let mut phi = keep_current(set);
    let shares = split_shares(set, graph, &phi);
    // Residuals of the split terms (only those with vehicles) and density terms.
    let mut e_split: Vec<f64> = (0..graph.splits().len())
        .map(|s| shares[s] - c[s])
        .collect();
    let mut e_dens: Vec<f64> = density_fields(set, &phi)
        .iter()
        .enumerate()
        .map(|(x, d)| d - set.mean_density[set.link_region[x]])
        .collect();

    // Sparse directions: moving δ of mass from option 0 to option 1.
    struct Dir {
        v: usize,
        split: Vec<(usize, f64)>,
        dens: Vec<(usize, f64)>,
        curvature: f64,
    }
    let mut dirs = Vec::new();
    for (vi, v) in set.vehicles.iter().enumerate() {
        if v.options.len() < 2 {
            continue;
        }
        let mut split = Vec::new();
        if v.region != v.dest_region {
            let n = set.n_od[v.region][v.dest_region];
            for (o, sign) in [(&v.options[0], -1.0), (&v.options[1], 1.0)] {
                if let Some(s) = o.next_region.and_then(|h| graph.split(v.region, h, v.dest_region)) {
                    split.push((s, sign / n));
                }
            }
        }
        let mut dens = vec![
            (v.options[0].projected.idx(), -1.0 / set.link_extent_m[v.options[0].projected.idx()]),
            (v.options[1].projected.idx(), 1.0 / set.link_extent_m[v.options[1].projected.idx()]),
        ];
        merge(&mut split);
        merge(&mut dens);
        let curvature = beta * split.iter().map(|(_, a)| a * a).sum::<f64>()
            + dens.iter().map(|(_, b)| b * b).sum::<f64>();
        if curvature > 0.0 {
            dirs.push(Dir { v: vi, split, dens, curvature });
        }
    }

    let grad = |d: &Dir, e_split: &[f64], e_dens: &[f64]| {
        beta * d.split.iter().map(|&(s, a)| a * e_split[s]).sum::<f64>()
            + d.dens.iter().map(|&(x, b)| b * e_dens[x]).sum::<f64>()
    };
    for _ in 0..MAX_SWEEPS {
        // Exact coordinate minimization settles which bounds are active ...
        let mut biggest: f64 = 0.0;
        for d in &dirs {
            let g = grad(d, &e_split, &e_dens);
            let p = phi[d.v][1];
            let target = (p - g / d.curvature).clamp(0.0, 1.0);
            let delta = target - p;
            if delta == 0.0 {
                continue;
            }
            phi[d.v][1] = target;
            phi[d.v][0] = 1.0 - target;
            for &(s, a) in &d.split {
                e_split[s] += a * delta;
            }
            for &(x, b) in &d.dens {
                e_dens[x] += b * delta;
            }
            biggest = biggest.max(delta.abs());
        }
        if biggest < STEP_TOL {
            break;
        }
        // ... and conjugate gradients on the interior variables handle the
        // badly conditioned couplings that coordinate steps crawl along.
        let free: Vec<usize> = (0..dirs.len())
            .filter(|&k| {
                let p = phi[dirs[k].v][1];
                p > 0.0 && p < 1.0
            })
            .collect();
        if free.is_empty() {
            continue;
        }
        let mut step = vec![0.0; free.len()];
        let mut r: Vec<f64> = free.iter().map(|&k| -grad(&dirs[k], &e_split, &e_dens)).collect();
        let mut dir = r.clone();
        let mut rr: f64 = r.iter().map(|x| x * x).sum();
        for _ in 0..free.len().min(CG_ITERS) {
            if rr < 1e-30 {
                break;
            }
            // Residual changes along `dir`; they give both d'Hd and Hd.
            let mut hs = BTreeMap::new();
            let mut hd = BTreeMap::new();
            for (&k, &wk) in free.iter().zip(&dir) {
                for &(s, a) in &dirs[k].split {
                    *hs.entry(s).or_insert(0.0) += a * wk;
                }
                for &(x, b) in &dirs[k].dens {
                    *hd.entry(x).or_insert(0.0) += b * wk;
                }
            }
            let curv = beta * hs.values().map(|v: &f64| v * v).sum::<f64>()
                + hd.values().map(|v: &f64| v * v).sum::<f64>();
            if curv <= 0.0 {
                break;
            }
            let alpha = rr / curv;
            for (i, &k) in free.iter().enumerate() {
                let hv = beta * dirs[k].split.iter().map(|(s, a)| a * hs.get(s).copied().unwrap_or(0.0)).sum::<f64>()
                    + dirs[k].dens.iter().map(|(x, b)| b * hd.get(x).copied().unwrap_or(0.0)).sum::<f64>();
                step[i] += alpha * dir[i];
                r[i] -= alpha * hv;
            }
            let next: f64 = r.iter().map(|x| x * x).sum();
            for (d, ri) in dir.iter_mut().zip(&r) {
                *d = ri + next / rr * *d;
            }
            rr = next;
        }
        // Largest fraction of the step that stays inside the box.
        let mut frac: f64 = 1.0;
        for (i, &k) in free.iter().enumerate() {
            let p = phi[dirs[k].v][1];
            if step[i] > 0.0 {
                frac = frac.min((1.0 - p) / step[i]);
            } else if step[i] < 0.0 {
                frac = frac.min(p / -step[i]);
            }
        }
        for (i, &k) in free.iter().enumerate() {
            let d = &dirs[k];
            let p = phi[d.v][1];
            let target = (p + frac * step[i]).clamp(0.0, 1.0);
            let delta = target - p;
            phi[d.v][1] = target;
            phi[d.v][0] = 1.0 - target;
            for &(s, a) in &d.split {
                e_split[s] += a * delta;
            }
            for &(x, b) in &d.dens {
                e_dens[x] += b * delta;
            }
        }
    }
    phi
}

fn merge(terms: &mut Vec<(usize, f64)>) {
    terms.sort_by_key(|t| t.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
    for &(k, v) in terms.iter() {
        match out.last_mut() {
            Some(last) if last.0 == k => last.1 += v,
            _ => out.push((k, v)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    *terms = out;
}

/// Samples one route per two-option vehicle from `phi` and applies it.
/// Returns the number of vehicles switched to their alternative.
pub fn assign_routes(sim: &mut Simulator, set: &RouteSet, phi: &[Vec<f64>], rng: &mut impl Rng) -> usize {
    let mut switched = 0;
    for (v, p) in set.vehicles.iter().zip(phi) {
        if v.options.len() < 2 {
            continue;
        }
        let u: f64 = rng.gen();
        if u < p[1] && sim.reroute(v.vehicle, &v.options[1].path) {
            switched += 1;
        }
    }
    switched
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::LinkId;

    /// Two-region instance with hand-built vehicles; link 0..3 in region 0,
    /// link 4..5 in region 1.
    fn tiny(n_vehicles: usize) -> (RouteSet, RegionGraph) {
        let graph = RegionGraph::from_neighbors(vec![vec![1], vec![0]]);
        let opt = |path: &[u32], next: Option<usize>, proj: u32| RouteOption {
            path: path.iter().map(|&l| LinkId(l)).collect(),
            next_region: next,
            projected: LinkId(proj),
            cost_s: 0.0,
        };
        let mut vehicles = vec![GuidedVehicle {
            vehicle: 0,
            region: 0,
            dest_region: 1,
            options: vec![opt(&[0, 1, 4], Some(1), 1), opt(&[0, 2, 4], Some(1), 2)],
        }];
        if n_vehicles > 1 {
            vehicles.push(GuidedVehicle {
                vehicle: 1,
                region: 0,
                dest_region: 0,
                options: vec![opt(&[3, 1, 0], None, 1), opt(&[3, 2, 0], None, 3)],
            });
        }
        let link_extent_m = vec![200.0, 100.0, 300.0, 150.0, 200.0, 200.0];
        let link_region = vec![0, 0, 0, 0, 1, 1];
        let mut n_od = vec![vec![0.0; 2]; 2];
        for v in &vehicles {
            n_od[v.region][v.dest_region] += 1.0;
        }
        let mean_density = vec![
            n_od[0].iter().sum::<f64>() / 750.0,
            n_od[1].iter().sum::<f64>() / 400.0,
        ];
        (
            RouteSet {
                vehicles,
                link_extent_m,
                link_region,
                mean_density,
                n_od,
            },
            graph,
        )
    }

    #[test]
    fn shares_and_densities_by_hand() {
        let (set, graph) = tiny(2);
        let phi = vec![vec![0.25, 0.75], vec![0.6, 0.4]];
        let shares = split_shares(&set, &graph, &phi);
        assert_eq!(shares[graph.split(0, 1, 1).unwrap()], 1.0);
        let d = density_fields(&set, &phi);
        assert_eq!(d[1], 0.25 / 100.0 + 0.6 / 100.0);
        assert_eq!(d[2], 0.75 / 300.0);
        assert_eq!(d[3], 0.4 / 150.0);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn density_only_program_balances_links() {
        // Vehicle 0 can be projected onto link 1 (short) or link 2 (long); the
        // optimum puts more of it on the longer link.
        let (set, graph) = tiny(1);
        let c = vec![1.0, 1.0];
        let phi = solve_probabilities(&set, &graph, &c, 10.0);
        assert!(phi[0][1] > 0.5);
        let f_opt = objective(&set, &graph, &c, 10.0, &phi);
        let f_keep = objective(&set, &graph, &c, 10.0, &keep_current(&set));
        assert!(f_opt <= f_keep);
    }

    #[test]
    fn merge_collapses_duplicates() {
        let mut t = vec![(3, 1.0), (1, 2.0), (3, -1.0)];
        merge(&mut t);
        assert_eq!(t, vec![(1, 2.0)]);
    }
}
