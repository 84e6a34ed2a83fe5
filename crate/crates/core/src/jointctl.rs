//! Upper-level joint perimeter and route-split program.
//!
//! Chooses perimeter fractions `b_ih` and route splits `c_ihj` minimizing the
//! largest predicted excess over critical accumulation, `z ≥ N_i(t+1) - N_i^crit`,
//! subject to boundary-flow envelopes `M^min ≤ M_ih ≤ M^max` and split bounds.
//! The program is bilinear in `(b, c)`; it is solved by alternating the two
//! linear programs obtained by fixing one block, from a few starting splits.
//! With a single neighbor per region the splits are pinned and one LP is exact.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::lp::{Cmp, Lp, LpError};
use crate::macrodyn::{completion_split, CompletionSplit, MacroState, RegionGraph};
use crate::mfd::MfdModel;

/// Accumulations below this are treated as empty: release is pinned to 1 and
/// the boundary-flow envelope of the region's outgoing arcs is dropped.
pub const EMPTY_REGION_VEH: f64 = 1.0;
const MAX_ALTERNATIONS: usize = 40;
const Z_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum JointError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("split bounds of od ({i},{j}) are inconsistent")]
    InconsistentSplitBounds { i: usize, j: usize },
    #[error("linear program failed: {0}")]
    Solver(String),
}

/// Boundary-flow envelopes (arc-indexed, veh/s) and split bounds (split-indexed).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds {
    pub m_min: Vec<f64>,
    pub m_max: Vec<f64>,
    pub c_min: Vec<f64>,
    pub c_max: Vec<f64>,
    /// Preferred splits (usually the shares of current routes); among
    /// minimizers the program stays as close to them as it can. `None` uses
    /// the balanced split.
    pub c_ref: Option<Vec<f64>>,
}

impl ControlBounds {
    /// No envelope, unconstrained splits.
    pub fn open(graph: &RegionGraph) -> Self {
        ControlBounds {
            m_min: vec![0.0; graph.arcs().len()],
            m_max: vec![f64::INFINITY; graph.arcs().len()],
            c_min: vec![0.0; graph.splits().len()],
            c_max: vec![1.0; graph.splits().len()],
            c_ref: None,
        }
    }
}

/// One vehicle's candidate next regions, for split bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleOptions {
    pub region: usize,
    pub destination: usize,
    pub next_regions: BTreeSet<usize>,
}

/// `c^max_ihj` is the share of `(i,j)` vehicles that could be sent toward `h`,
/// `c^min_ihj` the share that can only go toward `h`. ODs without vehicles get
/// `[0, 1]`.
pub fn route_bounds(graph: &RegionGraph, vehicles: &[VehicleOptions]) -> (Vec<f64>, Vec<f64>) {
    let r = graph.region_count();
    let mut count = vec![vec![0usize; r]; r];
    let mut can = vec![0usize; graph.splits().len()];
    let mut only = vec![0usize; graph.splits().len()];
    for v in vehicles {
        if v.region == v.destination {
            continue;
        }
        count[v.region][v.destination] += 1;
        for &h in &v.next_regions {
            if let Some(s) = graph.split(v.region, h, v.destination) {
                can[s] += 1;
                if v.next_regions.len() == 1 {
                    only[s] += 1;
                }
            }
        }
    }
    let mut c_min = vec![0.0; graph.splits().len()];
    let mut c_max = vec![1.0; graph.splits().len()];
    for (s, &(i, _, j)) in graph.splits().iter().enumerate() {
        let n = count[i][j];
        if n > 0 {
            c_min[s] = only[s] as f64 / n as f64;
            c_max[s] = can[s] as f64 / n as f64;
        }
    }
    (c_min, c_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    /// Arc-indexed perimeter fractions.
    pub b: Vec<f64>,
    /// Split-indexed route shares.
    pub c: Vec<f64>,
    pub z: f64,
    /// Target boundary flows per arc, veh/s.
    pub m_ih: Vec<f64>,
    /// Predicted accumulations at the next step.
    pub predicted: Vec<f64>,
    /// False when all regions are below the activation threshold.
    pub active: bool,
    /// Arcs whose lower flow bound had to be lowered to keep the program feasible.
    pub relaxed_arcs: Vec<usize>,
}

struct Problem<'a> {
    graph: &'a RegionGraph,
    cs: CompletionSplit,
    /// `N_i + Q_i - N^II_i`.
    base: Vec<f64>,
    n_crit: Vec<f64>,
    /// Lower limit of z (`-∞` for the plain min-max program).
    floor: f64,
    empty: Vec<bool>,
    t: f64,
    bounds: &'a ControlBounds,
}

impl Problem<'_> {
    /// `A_ih(c) = Σ_j c_ihj N^I_ij`.
    fn outflow_potential(&self, c: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.graph.arcs().len()];
        for (s, &(i, h, j)) in self.graph.splits().iter().enumerate() {
            a[self.graph.arc(i, h).unwrap()] += c[s] * self.cs.type1[i][j];
        }
        a
    }

    fn predicted(&self, b: &[f64], c: &[f64]) -> Vec<f64> {
        let a = self.outflow_potential(c);
        let mut n = self.base.clone();
        for (arc, &(i, h)) in self.graph.arcs().iter().enumerate() {
            n[i] -= b[arc] * a[arc];
            n[h] += b[arc] * a[arc];
        }
        n
    }

    fn objective(&self, b: &[f64], c: &[f64]) -> f64 {
        self.predicted(b, c)
            .iter()
            .zip(&self.n_crit)
            .map(|(n, k)| n - k)
            .fold(self.floor, f64::max)
    }

    /// Bounds on `b` for an arc with outflow potential `a`. An (almost)
    /// empty region releases as much as its upper envelope allows.
    fn b_bounds(&self, arc: usize, a: f64) -> (f64, f64) {
        let (i, _) = self.graph.arcs()[arc];
        if self.empty[i] {
            let cap = self.bounds.m_max[arc] * self.t;
            let b = if a > cap { cap / a } else { 1.0 };
            (b, b)
        } else {
            (0.0, 1.0)
        }
    }

    /// Minimizes z over `b` with `c` fixed. When `z_cap` is given, instead
    /// maximizes total boundary flow subject to `z ≤ z_cap`.
    fn solve_b(
        &self,
        c: &[f64],
        z_cap: Option<f64>,
        relaxed: &mut BTreeSet<usize>,
    ) -> Result<(Vec<f64>, f64), JointError> {
        let a = self.outflow_potential(c);
        let mut lp = if z_cap.is_some() { Lp::maximize() } else { Lp::minimize() };
        let (zlo, zhi) = match z_cap {
            Some(cap) => (self.floor, cap),
            None => (self.floor, f64::INFINITY),
        };
        let z = lp.var(if z_cap.is_some() { 0.0 } else { 1.0 }, zlo, zhi);
        let bv: Vec<usize> = (0..self.graph.arcs().len())
            .map(|arc| {
                let (lo, hi) = self.b_bounds(arc, a[arc]);
                let obj = if z_cap.is_some() { a[arc] } else { 0.0 };
                lp.var(obj, lo, hi)
            })
            .collect();
        for i in 0..self.graph.region_count() {
            let mut row = vec![(z, 1.0)];
            for &h in self.graph.neighbors(i) {
                let out = self.graph.arc(i, h).unwrap();
                let inc = self.graph.arc(h, i).unwrap();
                row.push((bv[out], a[out]));
                row.push((bv[inc], -a[inc]));
            }
            lp.row(&row, Cmp::Ge, self.base[i] - self.n_crit[i]);
        }
        for (arc, &(i, _)) in self.graph.arcs().iter().enumerate() {
            if self.empty[i] || a[arc] <= 0.0 {
                if self.bounds.m_min[arc] * self.t > a[arc] {
                    relaxed.insert(arc);
                }
                continue;
            }
            let hi = self.bounds.m_max[arc] * self.t;
            let mut lo = self.bounds.m_min[arc] * self.t;
            if lo > a[arc] {
                relaxed.insert(arc);
                lo = a[arc];
            }
            lp.row(&[(bv[arc], a[arc])], Cmp::Ge, lo.min(hi));
            if hi.is_finite() {
                lp.row(&[(bv[arc], a[arc])], Cmp::Le, hi);
            }
        }
        let (x, _) = lp.solve().map_err(|e| JointError::Solver(format!("{e:?}")))?;
        let b: Vec<f64> = bv.iter().map(|&v| x[v].clamp(0.0, 1.0)).collect();
        let zval = self.objective(&b, c);
        Ok((b, zval))
    }

    /// Minimizes z over `c` with `b` fixed. `None` when infeasible.
    fn solve_c(&self, b: &[f64]) -> Result<Option<(Vec<f64>, f64)>, JointError> {
        self.solve_c_with(b, None)
    }

    /// With `(z_cap, reference)`, instead minimizes `Σ |c - reference|`
    /// subject to `z ≤ z_cap`.
    fn solve_c_with(
        &self,
        b: &[f64],
        near: Option<(f64, &[f64])>,
    ) -> Result<Option<(Vec<f64>, f64)>, JointError> {
        let g = self.graph;
        let mut lp = Lp::minimize();
        let z = match near {
            Some((cap, _)) => lp.var(0.0, self.floor, cap),
            None => lp.var(1.0, self.floor, f64::INFINITY),
        };
        let cv: Vec<usize> = (0..g.splits().len())
            .map(|s| lp.var(0.0, self.bounds.c_min[s], self.bounds.c_max[s]))
            .collect();
        if let Some((_, reference)) = near {
            for (s, &v) in cv.iter().enumerate() {
                let d = lp.var(1.0, 0.0, f64::INFINITY);
                lp.row(&[(d, 1.0), (v, -1.0)], Cmp::Ge, -reference[s]);
                lp.row(&[(d, 1.0), (v, 1.0)], Cmp::Ge, reference[s]);
            }
        }
        let mut rows: Vec<Vec<(usize, f64)>> = (0..g.region_count()).map(|_| vec![(z, 1.0)]).collect();
        let mut flow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); g.arcs().len()];
        for (s, &(i, h, j)) in g.splits().iter().enumerate() {
            let arc = g.arc(i, h).unwrap();
            let coef = b[arc] * self.cs.type1[i][j];
            rows[i].push((cv[s], coef));
            rows[h].push((cv[s], -coef));
            flow[arc].push((cv[s], coef));
        }
        for (i, row) in rows.iter().enumerate() {
            lp.row(row, Cmp::Ge, self.base[i] - self.n_crit[i]);
        }
        for (arc, &(i, _)) in g.arcs().iter().enumerate() {
            if self.empty[i] {
                continue;
            }
            lp.row(&flow[arc], Cmp::Ge, self.bounds.m_min[arc] * self.t);
            let hi = self.bounds.m_max[arc] * self.t;
            if hi.is_finite() {
                lp.row(&flow[arc], Cmp::Le, hi);
            }
        }
        for i in 0..g.region_count() {
            for j in 0..g.region_count() {
                let ids = g.od_splits(i, j);
                if ids.is_empty() {
                    continue;
                }
                let row: Vec<(usize, f64)> = ids.iter().map(|&s| (cv[s], 1.0)).collect();
                lp.row(&row, Cmp::Eq, 1.0);
            }
        }
        match lp.solve() {
            Ok((x, _)) => {
                let mut c: Vec<f64> = cv.iter().map(|&v| x[v]).collect();
                self.renormalize(&mut c);
                let zval = self.objective(b, &c);
                Ok(Some((c, zval)))
            }
            Err(LpError::Infeasible) => Ok(None),
            Err(e) => Err(JointError::Solver(format!("{e:?}"))),
        }
    }

    /// Removes solver round-off so each OD's shares sum to exactly one.
    fn renormalize(&self, c: &mut [f64]) {
        let g = self.graph;
        for i in 0..g.region_count() {
            for j in 0..g.region_count() {
                let ids = g.od_splits(i, j);
                if ids.is_empty() {
                    continue;
                }
                for &s in ids {
                    c[s] = c[s].clamp(self.bounds.c_min[s], self.bounds.c_max[s]);
                }
                let sum: f64 = ids.iter().map(|&s| c[s]).sum();
                if sum > 0.0 {
                    for &s in ids {
                        c[s] /= sum;
                    }
                }
            }
        }
    }
}

/// Feasible split interpolating the bounds: `c^min + λ (c^max - c^min)`.
pub fn balanced_split(graph: &RegionGraph, bounds: &ControlBounds) -> Result<Vec<f64>, JointError> {
    let mut c = vec![0.0; graph.splits().len()];
    for i in 0..graph.region_count() {
        for j in 0..graph.region_count() {
            let ids = graph.od_splits(i, j);
            if ids.is_empty() {
                continue;
            }
            let lo: f64 = ids.iter().map(|&s| bounds.c_min[s]).sum();
            let hi: f64 = ids.iter().map(|&s| bounds.c_max[s]).sum();
            if lo > 1.0 + 1e-9 || hi < 1.0 - 1e-9 {
                return Err(JointError::InconsistentSplitBounds { i, j });
            }
            let lambda = if hi - lo > 0.0 { (1.0 - lo) / (hi - lo) } else { 0.0 };
            for &s in ids {
                c[s] = bounds.c_min[s] + lambda * (bounds.c_max[s] - bounds.c_min[s]);
            }
        }
    }
    Ok(c)
}

/// Split pushing every OD as far as allowed toward the neighbor with the
/// lowest relative accumulation.
fn relief_split(
    graph: &RegionGraph,
    bounds: &ControlBounds,
    load: &[f64],
    start: &[f64],
) -> Vec<f64> {
    let mut c = start.to_vec();
    for i in 0..graph.region_count() {
        for j in 0..graph.region_count() {
            let ids = graph.od_splits(i, j);
            if ids.len() < 2 {
                continue;
            }
            let mut order: Vec<usize> = ids.to_vec();
            order.sort_by(|&x, &y| {
                let (_, hx, _) = graph.splits()[x];
                let (_, hy, _) = graph.splits()[y];
                let lx = if hx == j { f64::NEG_INFINITY } else { load[hx] };
                let ly = if hy == j { f64::NEG_INFINITY } else { load[hy] };
                lx.total_cmp(&ly).then(x.cmp(&y))
            });
            for &s in ids {
                c[s] = bounds.c_min[s];
            }
            let mut rest = 1.0 - ids.iter().map(|&s| c[s]).sum::<f64>();
            for &s in &order {
                let add = (bounds.c_max[s] - c[s]).min(rest).max(0.0);
                c[s] += add;
                rest -= add;
            }
        }
    }
    c
}

fn dims(graph: &RegionGraph, state: &MacroState, bounds: &ControlBounds) -> Result<(), JointError> {
    let ok = state.regions() == graph.region_count()
        && bounds.m_min.len() == graph.arcs().len()
        && bounds.m_max.len() == graph.arcs().len()
        && bounds.c_min.len() == graph.splits().len()
        && bounds.c_max.len() == graph.splits().len();
    if ok {
        Ok(())
    } else {
        Err(JointError::Dimension("state or bounds do not match the region graph".into()))
    }
}

/// Solves the joint program for the coming macro step. `state.q` holds the
/// demand forecast. With `excess_floor` the objective becomes
/// `max(floor, max_i N_i(t+1) - N_i^crit)`, so that once every region is below
/// the floor the tie-break (maximum release) decides.
pub fn solve(
    graph: &RegionGraph,
    state: &MacroState,
    mfd: &MfdModel,
    bounds: &ControlBounds,
    activation_threshold: f64,
    excess_floor: Option<f64>,
) -> Result<JointSolution, JointError> {
    dims(graph, state, bounds)?;
    let r = graph.region_count();
    let acc = state.accumulations();
    let n_crit: Vec<f64> = (0..r).map(|i| mfd.regions()[i].n_crit).collect();
    let cs = completion_split(state, mfd);
    let base: Vec<f64> = (0..r)
        .map(|i| acc[i] + state.q[i].iter().sum::<f64>() - cs.type2[i])
        .collect();
    let problem = Problem {
        graph,
        cs,
        base,
        n_crit: n_crit.clone(),
        floor: excess_floor.unwrap_or(f64::NEG_INFINITY),
        empty: acc.iter().map(|&n| n < EMPTY_REGION_VEH).collect(),
        t: state.t_macro,
        bounds,
    };
    let start = balanced_split(graph, bounds)?;

    let active = (0..r).any(|i| acc[i] >= activation_threshold * n_crit[i]);
    if !active {
        let b = vec![1.0; graph.arcs().len()];
        return Ok(finish(&problem, b, start, false, BTreeSet::new()));
    }

    let load: Vec<f64> = (0..r).map(|i| acc[i] / n_crit[i]).collect();
    let starts = [start.clone(), relief_split(graph, bounds, &load, &start)];
    let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let mut relaxed = BTreeSet::new();
    for c0 in starts {
        let mut c = c0;
        let (mut b, mut z) = problem.solve_b(&c, None, &mut relaxed)?;
        for _ in 0..MAX_ALTERNATIONS {
            let Some((c_new, z_c)) = problem.solve_c(&b)? else {
                break;
            };
            let mut scratch = BTreeSet::new();
            let (b_new, z_b) = problem.solve_b(&c_new, None, &mut scratch)?;
            let z_new = z_b.min(z_c);
            let improved = z_new < z - Z_TOL;
            if z_b <= z_c {
                b = b_new;
                relaxed.extend(scratch);
            }
            c = c_new;
            z = problem.objective(&b, &c);
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, _, bz)| z < *bz - Z_TOL) {
            best = Some((b, c, z));
        }
    }
    let (b, mut c, z) = best.expect("at least one start");
    let cap = z + Z_TOL * (1.0 + z.abs());
    // Among minimizers, change routes as little as possible, then release as
    // much as possible.
    let reference = bounds.c_ref.clone().unwrap_or(start);
    if let Some((near, _)) = problem.solve_c_with(&b, Some((cap, &reference)))? {
        if problem.objective(&b, &near) <= cap {
            c = near;
        }
    }
    let mut scratch = BTreeSet::new();
    let (b, _) = problem.solve_b(&c, Some(cap), &mut scratch)?;
    relaxed.extend(scratch);
    Ok(finish(&problem, b, c, true, relaxed))
}

fn finish(
    problem: &Problem,
    b: Vec<f64>,
    c: Vec<f64>,
    active: bool,
    relaxed: BTreeSet<usize>,
) -> JointSolution {
    let a = problem.outflow_potential(&c);
    let m_ih = b.iter().zip(&a).map(|(b, a)| b * a / problem.t).collect();
    JointSolution {
        predicted: problem.predicted(&b, &c),
        z: problem.objective(&b, &c),
        b,
        c,
        m_ih,
        active,
        relaxed_arcs: relaxed.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macrodyn;
    use crate::mfd::RegionMfd;

    fn mfd(n: usize) -> MfdModel {
        MfdModel::new(vec![
            RegionMfd::from_coefficients(4.46e-3, -1.57e-6, 1.44e-10, None).unwrap();
            n
        ])
    }

    fn triangle() -> RegionGraph {
        RegionGraph::from_neighbors(vec![vec![1, 2], vec![0, 2], vec![0, 1]])
    }

    #[test]
    fn route_bounds_from_options() {
        let g = triangle();
        let v = |i, j, hs: &[usize]| VehicleOptions {
            region: i,
            destination: j,
            next_regions: hs.iter().copied().collect(),
        };
        let vehicles = vec![v(0, 1, &[1]), v(0, 1, &[1, 2]), v(0, 1, &[1, 2]), v(0, 1, &[2])];
        let (lo, hi) = route_bounds(&g, &vehicles);
        let s01 = g.split(0, 1, 1).unwrap();
        let s02 = g.split(0, 2, 1).unwrap();
        assert_eq!((lo[s01], hi[s01]), (0.25, 0.75));
        assert_eq!((lo[s02], hi[s02]), (0.25, 0.75));
        let vac = g.split(1, 0, 2).unwrap();
        assert_eq!((lo[vac], hi[vac]), (0.0, 1.0));
    }

    #[test]
    fn inactive_below_threshold() {
        let g = triangle();
        let mut s = MacroState::zeros(3, 100.0);
        s.n[0][1] = 10.0;
        let bounds = ControlBounds::open(&g);
        let sol = solve(&g, &s, &mfd(3), &bounds, 0.3, None).unwrap();
        assert!(!sol.active);
        assert!(sol.b.iter().all(|&b| b == 1.0));
    }

    #[test]
    fn congested_sender_releases_toward_empty_neighbor() {
        let g = RegionGraph::from_neighbors(vec![vec![1], vec![0]]);
        let mut s = MacroState::zeros(2, 100.0);
        s.n[0][1] = 2500.0;
        s.n[1][1] = 100.0;
        let sol = solve(&g, &s, &mfd(2), &ControlBounds::open(&g), 0.3, None).unwrap();
        assert!(sol.active);
        assert!((sol.b[g.arc(0, 1).unwrap()] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prediction_matches_macro_model() {
        let g = triangle();
        let mut s = MacroState::zeros(3, 100.0);
        s.n = vec![
            vec![300.0, 900.0, 500.0],
            vec![400.0, 1200.0, 700.0],
            vec![100.0, 200.0, 300.0],
        ];
        s.q[0][1] = 30.0;
        let sol = solve(&g, &s, &mfd(3), &ControlBounds::open(&g), 0.3, None).unwrap();
        let out = macrodyn::step(&g, &s, &mfd(3), &sol.b, &sol.c).unwrap();
        for (p, q) in sol.predicted.iter().zip(&out.unclamped_totals) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn respects_flow_envelope_and_split_bounds() {
        let g = triangle();
        let mut s = MacroState::zeros(3, 100.0);
        s.n = vec![
            vec![300.0, 900.0, 500.0],
            vec![400.0, 1200.0, 700.0],
            vec![100.0, 200.0, 300.0],
        ];
        let mut bounds = ControlBounds::open(&g);
        for arc in 0..g.arcs().len() {
            bounds.m_min[arc] = 0.05;
            bounds.m_max[arc] = 0.4;
        }
        for s in 0..g.splits().len() {
            bounds.c_min[s] = 0.1;
            bounds.c_max[s] = 0.9;
        }
        let sol = solve(&g, &s, &mfd(3), &bounds, 0.3, None).unwrap();
        for (arc, &m) in sol.m_ih.iter().enumerate() {
            if !sol.relaxed_arcs.contains(&arc) {
                assert!(m >= 0.05 - 1e-7 && m <= 0.4 + 1e-7, "arc {arc}: {m}");
            }
        }
        for &c in &sol.c {
            assert!((0.1 - 1e-9..=0.9 + 1e-9).contains(&c));
        }
    }

    #[test]
    fn empty_region_pins_release() {
        let g = RegionGraph::from_neighbors(vec![vec![1], vec![0]]);
        let mut s = MacroState::zeros(2, 100.0);
        s.n[1][0] = 2000.0;
        s.n[0][1] = 0.5;
        let mut bounds = ControlBounds::open(&g);
        bounds.m_min = vec![5.0, 0.0];
        let sol = solve(&g, &s, &mfd(2), &bounds, 0.3, None).unwrap();
        let arc = g.arc(0, 1).unwrap();
        assert_eq!(sol.b[arc], 1.0);
        assert_eq!(sol.relaxed_arcs, vec![arc]);

        // A tight upper envelope still binds.
        bounds.m_min = vec![0.0, 0.0];
        bounds.m_max = vec![sol.m_ih[arc] / 4.0, f64::INFINITY];
        let capped = solve(&g, &s, &mfd(2), &bounds, 0.3, None).unwrap();
        assert!((capped.b[arc] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn excess_floor_keeps_underloaded_regions_open() {
        // Both regions stay well below critical whatever b is: without a
        // floor the program prefers holding vehicles back in the sender,
        // with a floor at zero every b is optimal and release is maximal.
        let g = RegionGraph::from_neighbors(vec![vec![1], vec![0]]);
        let mut s = MacroState::zeros(2, 100.0);
        s.n[0][1] = 400.0;
        s.n[1][0] = 300.0;
        let open = ControlBounds::open(&g);
        let pure = solve(&g, &s, &mfd(2), &open, 0.0, None).unwrap();
        assert!(pure.z < 0.0);
        let floored = solve(&g, &s, &mfd(2), &open, 0.0, Some(0.0)).unwrap();
        assert_eq!(floored.z, 0.0);
        assert!(floored.b.iter().all(|&b| (b - 1.0).abs() < 1e-9));
    }
}
