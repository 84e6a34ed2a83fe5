//! Two-time-scale closed loop: upper-level decisions every macro step,
//! boundary plans and route guidance every micro step, the simulator in
//! between. Also MFD calibration runs, multi-seed comparisons and CSV output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{logit_probabilities, PiController};
use crate::boundaryctl::BoundaryController;
use crate::jointctl::{self, route_bounds, ControlBounds, JointError, VehicleOptions};
use crate::macrodyn::{MacroState, RegionGraph};
use crate::mesosim::{Counters, MicroObservation, Simulator};
use crate::mfd::{self, FitReport, MfdError, MfdSample};
use crate::netmodel::{CompletionProxy, DemandForecast, RegionId, Scenario};
use crate::routectl::{assign_routes, generate_routes, keep_current, solve_probabilities, split_shares};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("strategy `{0}` needs a calibrated MFD; run `calibrate` first")]
    MissingMfd(Strategy),
    #[error(transparent)]
    Joint(#[from] JointError),
    #[error(transparent)]
    Mfd(#[from] MfdError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Joint perimeter control and route guidance.
    Msjc,
    /// PI perimeter control with logit routing.
    MspcLr,
    /// Backpressure with logit routing.
    BpLr,
    /// PI perimeter control only.
    Mspc,
    /// Backpressure only.
    Bp,
    /// Plans cycled in order every micro step; used for calibration.
    Fixed,
}

impl Strategy {
    pub const COMPARED: [Strategy; 5] = [
        Strategy::Msjc,
        Strategy::MspcLr,
        Strategy::BpLr,
        Strategy::Mspc,
        Strategy::Bp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Msjc => "msjc",
            Strategy::MspcLr => "mspc-lr",
            Strategy::BpLr => "bp-lr",
            Strategy::Mspc => "mspc",
            Strategy::Bp => "bp",
            Strategy::Fixed => "fixed",
        }
    }

    fn needs_mfd(self) -> bool {
        matches!(self, Strategy::Msjc | Strategy::MspcLr | Strategy::Mspc)
    }

    fn logit_routing(self) -> bool {
        matches!(self, Strategy::MspcLr | Strategy::BpLr)
    }

    fn pi_gating(self) -> bool {
        matches!(self, Strategy::MspcLr | Strategy::Mspc)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Strategy::COMPARED.as_slice(), &[Strategy::Fixed]]
            .concat()
            .into_iter()
            .find(|x| x.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown strategy `{s}` (msjc, mspc-lr, bp-lr, mspc, bp, fixed)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub seed: u64,
    /// Keep simulating after the horizon, without new demand, until the
    /// network is empty or `cap_s` is reached.
    pub until_cleared: bool,
    /// Hard stop; defaults to four horizons.
    pub cap_s: Option<f64>,
}

impl RunConfig {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        RunConfig {
            strategy,
            seed,
            until_cleared: false,
            cap_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub strategy: Strategy,
    pub seed: u64,
    /// Vehicle-hours in the system (network and entry queues) after warm-up.
    pub ttt_veh_h: f64,
    /// Trips completed after warm-up by the end of the run (at clearance for
    /// until-cleared runs).
    pub throughput: u64,
    /// Mean travel time of finished trips created after warm-up, s.
    pub mean_travel_time_s: f64,
    pub generated: u64,
    pub unfinished: u64,
    pub end_time_s: f64,
    pub micro_steps: u64,
    pub fallbacks: u64,
    pub relaxed_arcs: u64,
}

/// One arc over one macro step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcRecord {
    pub t_s: f64,
    pub from: usize,
    pub to: usize,
    /// Whether the boundary tracked a flow target during this step.
    pub tracked: bool,
    pub target: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub realized: f64,
    /// Fallback decisions at this arc's boundary during the step.
    pub fallbacks: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub t_s: f64,
    pub region: usize,
    pub accumulation: f64,
    pub n_crit: f64,
    pub completions: u64,
    pub predicted_next: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub t_s: f64,
    pub boundary: usize,
    pub k: usize,
    pub plan: usize,
    pub expected_ab: f64,
    pub expected_ba: f64,
    pub estimate_ab: f64,
    pub estimate_ba: f64,
    pub feasible: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub arcs: Vec<ArcRecord>,
    pub regions: Vec<RegionRecord>,
    pub plans: Vec<PlanRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub log: RunLog,
}

fn region_completions(c: &Counters, i: usize, proxy: CompletionProxy) -> u64 {
    let out: u64 = (0..c.gating_crossings.len()).map(|h| c.crossings(i, h)).sum();
    match proxy {
        CompletionProxy::OutflowPlusInternal => out + c.internal_completions[i],
        CompletionProxy::Outflow => out,
    }
}

fn demand_forecast(scenario: &Scenario, obs_since: Option<&Counters>, t: f64) -> Vec<Vec<f64>> {
    let r = scenario.region_count();
    match scenario.control.demand_forecast {
        DemandForecast::Previous => match obs_since {
            Some(c) => c
                .entries
                .iter()
                .map(|row| row.iter().map(|&x| x as f64).collect())
                .collect(),
            None => vec![vec![0.0; r]; r],
        },
        DemandForecast::Scheduled => {
            let net = &scenario.network;
            let mut q = vec![vec![0.0; r]; r];
            for od in &scenario.demand.ods {
                let i = net.link(od.origin).region.idx();
                let j = net.link(od.destination).region.idx();
                q[i][j] += od.rate_at(t) * scenario.control.t_macro_s;
            }
            q
        }
    }
}

/// Runs one strategy on one seed.
pub fn run(scenario: &Scenario, cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let strategy = cfg.strategy;
    let mfd_model = match (&scenario.mfd, strategy.needs_mfd()) {
        (Some(m), _) => Some(m),
        (None, true) => return Err(RunError::MissingMfd(strategy)),
        (None, false) => None,
    };
    let control = &scenario.control;
    let u = control.micro_per_macro();
    let t_micro = control.t_micro_s;
    let horizon = scenario.demand.horizon_s;
    let cap = cfg.cap_s.unwrap_or(4.0 * horizon);
    let end = if cfg.until_cleared { cap } else { horizon.min(cap) };
    let graph = RegionGraph::new(&scenario.partition);
    let arcs = graph.arcs().to_vec();
    let r = scenario.region_count();

    let mut sim = Simulator::new(scenario, cfg.seed);
    let mut route_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut bctl = BoundaryController::new(scenario);
    let mut pis: Vec<PiController> = arcs
        .iter()
        .map(|_| PiController::new(control.kp, control.ki))
        .collect();
    let mut log = RunLog::default();
    let mut prev_macro: Option<Counters> = None;
    let mut micro_steps = 0u64;
    let mut fallbacks = 0u64;
    let mut relaxed = 0u64;
    let mut fixed_cursor = 0usize;

    while sim.time() < end - 1e-9 {
        let t0 = sim.time();
        if t0 >= horizon {
            sim.close_demand();
            if sim.is_empty() {
                break;
            }
        }
        let obs0 = sim.observe(t_micro);
        let since_prev = prev_macro.as_ref().map(|p| obs0.counters.since(p));
        let envelopes = bctl.envelopes(scenario, &obs0);
        let arc_env = |arc: usize| -> (f64, f64) {
            let (i, h) = arcs[arc];
            let b = scenario
                .boundary_index(RegionId::from(i), RegionId::from(h))
                .expect("every adjacent pair has a boundary");
            let dir = if scenario.boundaries[b].regions.0.idx() == i { 0 } else { 1 };
            envelopes[b][dir]
        };

        // Upper level.
        let mut arc_target: Vec<Option<f64>> = vec![None; arcs.len()];
        let mut c_target: Option<Vec<f64>> = None;
        let mut predicted = vec![f64::NAN; r];
        if strategy == Strategy::Msjc {
            let mfd_model = mfd_model.expect("checked above");
            let state = MacroState {
                t: (t0 / control.t_macro_s).round() as usize,
                n: obs0.n_od.clone(),
                q: demand_forecast(scenario, since_prev.as_ref(), t0),
                t_macro: control.t_macro_s,
            };
            let set = generate_routes(&sim, t_micro);
            let options: Vec<VehicleOptions> = set
                .vehicles
                .iter()
                .map(|v| VehicleOptions {
                    region: v.region,
                    destination: v.dest_region,
                    next_regions: v.options.iter().filter_map(|o| o.next_region).collect(),
                })
                .collect();
            let (c_min, c_max) = route_bounds(&graph, &options);
            let (m_min, m_max): (Vec<f64>, Vec<f64>) = (0..arcs.len()).map(arc_env).unzip();
            let bounds = ControlBounds {
                m_min,
                m_max,
                c_min,
                c_max,
                c_ref: Some(split_shares(&set, &graph, &keep_current(&set))),
            };
            let sol = jointctl::solve(
                &graph,
                &state,
                mfd_model,
                &bounds,
                control.activation_threshold,
                control.excess_floor,
            )?;
            relaxed += sol.relaxed_arcs.len() as u64;
            predicted = sol.predicted.clone();
            if sol.active {
                for (arc, m) in sol.m_ih.iter().enumerate() {
                    arc_target[arc] = Some(*m);
                }
                c_target = Some(sol.c);
            }
        } else if strategy.pi_gating() {
            let mfd_model = mfd_model.expect("checked above");
            for (arc, &(_, h)) in arcs.iter().enumerate() {
                let (lo, hi) = arc_env(arc);
                let n_h = obs0.accumulation(h);
                arc_target[arc] = Some(pis[arc].update(n_h, mfd_model.regions()[h].n_crit, lo, hi));
            }
        }
        let targets: Vec<Option<[f64; 2]>> = scenario
            .boundaries
            .iter()
            .map(|b| {
                let (a, c) = (b.regions.0.idx(), b.regions.1.idx());
                let ab = arc_target[graph.arc(a, c).unwrap()];
                let ba = arc_target[graph.arc(c, a).unwrap()];
                match (ab, ba) {
                    (Some(x), Some(y)) => Some([x, y]),
                    _ => None,
                }
            })
            .collect();
        bctl.start_macro(&obs0, &targets);

        // Lower level.
        let mut boundary_fallbacks = vec![0u32; scenario.boundaries.len()];
        for _ in 0..u {
            if sim.time() >= end - 1e-9 {
                break;
            }
            let obs = sim.observe(t_micro);
            if strategy == Strategy::Fixed {
                for b in 0..scenario.boundaries.len() {
                    let n = scenario.boundaries[b].plans.len();
                    sim.apply_plan(b, fixed_cursor % n);
                }
                fixed_cursor += 1;
            } else {
                for d in bctl.step(scenario, &obs) {
                    sim.apply_plan(d.boundary, d.plan);
                    if d.fallback {
                        fallbacks += 1;
                        boundary_fallbacks[d.boundary] += 1;
                    }
                    log.plans.push(PlanRecord {
                        t_s: obs.t,
                        boundary: d.boundary,
                        k: d.k,
                        plan: d.plan,
                        expected_ab: d.expected[0],
                        expected_ba: d.expected[1],
                        estimate_ab: d.estimate[0],
                        estimate_ba: d.estimate[1],
                        feasible: d.feasible,
                        fallback: d.fallback,
                    });
                }
            }
            sim.reset_service_credit();
            if let Some(c) = &c_target {
                let set = generate_routes(&sim, t_micro);
                let phi = solve_probabilities(&set, &graph, c, control.beta);
                assign_routes(&mut sim, &set, &phi, &mut route_rng);
            } else if strategy.logit_routing() {
                let set = generate_routes(&sim, t_micro);
                let phi = logit_probabilities(&set, control.theta);
                assign_routes(&mut sim, &set, &phi, &mut route_rng);
            }
            sim.advance(t_micro);
            micro_steps += 1;
        }

        let obs1 = sim.observe(t_micro);
        let step = obs1.counters.since(&obs0.counters);
        let dt = sim.time() - t0;
        for (arc, &(i, h)) in arcs.iter().enumerate() {
            let (lo, hi) = arc_env(arc);
            let b = scenario
                .boundary_index(RegionId::from(i), RegionId::from(h))
                .unwrap();
            log.arcs.push(ArcRecord {
                t_s: t0,
                from: i,
                to: h,
                tracked: targets[b].is_some(),
                target: arc_target[arc].unwrap_or(f64::NAN),
                m_min: lo,
                m_max: hi,
                realized: step.crossings(i, h) as f64 / dt,
                fallbacks: boundary_fallbacks[b],
            });
        }
        for i in 0..r {
            log.regions.push(RegionRecord {
                t_s: t0,
                region: i,
                accumulation: obs0.accumulation(i),
                n_crit: mfd_model.map_or(f64::NAN, |m| m.regions()[i].n_crit),
                completions: region_completions(&step, i, control.completion_proxy),
                predicted_next: predicted[i],
            });
        }
        prev_macro = Some(obs0.counters);
    }

    let warm = scenario.demand.warmup_s;
    let tts = sim.travel_times();
    let metrics = RunMetrics {
        strategy,
        seed: cfg.seed,
        ttt_veh_h: sim.total_travel_time_s() / 3600.0,
        throughput: sim
            .vehicles()
            .iter()
            .filter(|v| v.finished_s.is_some_and(|f| f > warm))
            .count() as u64,
        mean_travel_time_s: if tts.is_empty() {
            0.0
        } else {
            tts.iter().sum::<f64>() / tts.len() as f64
        },
        generated: sim.vehicles().len() as u64,
        unfinished: sim.vehicles_in_system() as u64,
        end_time_s: sim.time(),
        micro_steps,
        fallbacks,
        relaxed_arcs: relaxed,
    };
    log::info!(
        "{} seed {}: ttt {:.1} veh·h, throughput {}, unfinished {}",
        strategy,
        cfg.seed,
        metrics.ttt_veh_h,
        metrics.throughput,
        metrics.unfinished
    );
    Ok(RunOutput { metrics, log })
}

/// Accumulation/completion samples, one per region per macro step.
pub fn mfd_samples(scenario: &Scenario, log: &RunLog, window_offset: usize) -> Vec<MfdSample> {
    let t_macro = scenario.control.t_macro_s;
    log.regions
        .iter()
        .filter(|r| r.t_s >= scenario.demand.warmup_s)
        .map(|r| MfdSample {
            region: RegionId::from(r.region),
            accumulation: r.accumulation,
            flow: r.completions as f64 / t_macro,
            window: window_offset + (r.t_s / t_macro).round() as usize,
        })
        .collect()
}

/// Demand multipliers used by [`calibrate`] by default.
pub const CALIBRATION_FACTORS: [f64; 8] = [0.2, 0.4, 0.6, 0.8, 1.0, 1.3, 1.6, 2.0];

/// Fits per-region MFDs from backpressure-signal runs at several demand
/// levels.
pub fn calibrate(scenario: &Scenario, factors: &[f64], seed: u64) -> Result<FitReport, RunError> {
    let logs: Vec<Result<RunLog, RunError>> = factors
        .par_iter()
        .map(|&f| {
            let s = scenario.scaled_demand(f);
            run(&s, &RunConfig::new(Strategy::Bp, seed)).map(|o| o.log)
        })
        .collect();
    let mut samples = Vec::new();
    for (k, l) in logs.into_iter().enumerate() {
        samples.extend(mfd_samples(scenario, &l?, k * 100_000));
    }
    Ok(mfd::fit(&samples, scenario.region_count())?)
}

/// Every strategy on every seed, in parallel; results ordered by strategy
/// then seed.
pub fn compare(
    scenario: &Scenario,
    strategies: &[Strategy],
    seeds: &[u64],
    until_cleared: bool,
    cap_s: Option<f64>,
) -> Result<Vec<RunOutput>, RunError> {
    let jobs: Vec<RunConfig> = strategies
        .iter()
        .flat_map(|&s| {
            seeds.iter().map(move |&seed| RunConfig {
                strategy: s,
                seed,
                until_cleared,
                cap_s,
            })
        })
        .collect();
    jobs.par_iter().map(|cfg| run(scenario, cfg)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub runs: usize,
    pub ttt_veh_h_mean: f64,
    pub ttt_veh_h_sd: f64,
    pub throughput_mean: f64,
    pub mean_travel_time_s: f64,
    pub fallbacks_mean: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Per-strategy means over seeds, in first-appearance order.
pub fn summarize(metrics: &[RunMetrics]) -> Vec<SummaryRow> {
    let mut order: Vec<Strategy> = Vec::new();
    for m in metrics {
        if !order.contains(&m.strategy) {
            order.push(m.strategy);
        }
    }
    order
        .into_iter()
        .map(|s| {
            let rows: Vec<&RunMetrics> = metrics.iter().filter(|m| m.strategy == s).collect();
            let col = |f: fn(&RunMetrics) -> f64| rows.iter().map(|m| f(m)).collect::<Vec<_>>();
            let (ttt, sd) = mean_sd(&col(|m| m.ttt_veh_h));
            SummaryRow {
                strategy: s,
                runs: rows.len(),
                ttt_veh_h_mean: ttt,
                ttt_veh_h_sd: sd,
                throughput_mean: mean_sd(&col(|m| m.throughput as f64)).0,
                mean_travel_time_s: mean_sd(&col(|m| m.mean_travel_time_s)).0,
                fallbacks_mean: mean_sd(&col(|m| m.fallbacks as f64)).0,
            }
        })
        .collect()
}

/// Plain-text table of a summary.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<9} {:>4} {:>12} {:>9} {:>11} {:>10} {:>10}\n",
        "strategy", "runs", "ttt[veh·h]", "sd", "throughput", "mean_tt[s]", "fallbacks"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<9} {:>4} {:>12.2} {:>9.2} {:>11.1} {:>10.1} {:>10.1}\n",
            r.strategy.name(),
            r.runs,
            r.ttt_veh_h_mean,
            r.ttt_veh_h_sd,
            r.throughput_mean,
            r.mean_travel_time_s,
            r.fallbacks_mean
        ));
    }
    s
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<RunMetrics>, RunError> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.deserialize().map(|r| r.map_err(RunError::from)).collect()
}

/// Reproducibility record written next to the CSV outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub scenario: String,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub until_cleared: bool,
    pub cap_s: Option<f64>,
    pub files: Vec<String>,
}

/// Writes `metrics.csv`, `summary.csv`, per-run `arcs/regions/plans` CSVs
/// and `manifest.toml` under `dir`.
pub fn write_outputs(dir: &Path, outputs: &[RunOutput], manifest: &Manifest) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    let metrics: Vec<RunMetrics> = outputs.iter().map(|o| o.metrics.clone()).collect();
    let p = dir.join("metrics.csv");
    write_csv(&p, &metrics)?;
    files.push(p);
    let p = dir.join("summary.csv");
    write_csv(&p, &summarize(&metrics))?;
    files.push(p);
    for o in outputs {
        let stem = format!("{}_seed{}", o.metrics.strategy, o.metrics.seed);
        let p = dir.join(format!("{stem}_arcs.csv"));
        write_csv(&p, &o.log.arcs)?;
        files.push(p);
        let p = dir.join(format!("{stem}_regions.csv"));
        write_csv(&p, &o.log.regions)?;
        files.push(p);
        let p = dir.join(format!("{stem}_plans.csv"));
        write_csv(&p, &o.log.plans)?;
        files.push(p);
    }
    let mut m = manifest.clone();
    m.files = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    let p = dir.join("manifest.toml");
    let text = toml::to_string_pretty(&m).map_err(|e| RunError::Format(e.to_string()))?;
    fs::write(&p, text).map_err(io_err(&p))?;
    files.push(p);
    Ok(files)
}

/// Observation helper for callers that need realized flows between two
/// snapshots, veh/s.
pub fn realized_flow(a: &MicroObservation, b: &MicroObservation, i: usize, h: usize) -> f64 {
    let dt = b.t - a.t;
    if dt <= 0.0 {
        return 0.0;
    }
    (b.counters.crossings(i, h) - a.counters.crossings(i, h)) as f64 / dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mfd::{MfdModel, RegionMfd};

    fn corridor_with_mfd() -> Scenario {
        let mut s = fixtures::corridor();
        let m = RegionMfd::from_coefficients(0.01, -2e-4, 0.0, Some(60.0)).unwrap();
        s.mfd = Some(MfdModel::new(vec![m.clone(), m]));
        s
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::COMPARED {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("nope".parse::<Strategy>().is_err());
    }

    #[test]
    fn mfd_required_for_model_based_strategies() {
        let s = fixtures::corridor();
        let err = run(&s, &RunConfig::new(Strategy::Msjc, 1)).unwrap_err();
        assert!(matches!(err, RunError::MissingMfd(Strategy::Msjc)));
        assert!(run(&s, &RunConfig::new(Strategy::Bp, 1)).is_ok());
    }

    #[test]
    fn every_strategy_runs_on_corridor() {
        let s = corridor_with_mfd();
        for strat in Strategy::COMPARED {
            let out = run(&s, &RunConfig::new(strat, 2)).unwrap();
            assert!(out.metrics.throughput > 0, "{strat}");
            assert_eq!(out.log.regions.len(), 12 * 2);
        }
    }

    #[test]
    fn until_cleared_empties_network() {
        let s = corridor_with_mfd();
        let cfg = RunConfig {
            until_cleared: true,
            ..RunConfig::new(Strategy::Bp, 4)
        };
        let out = run(&s, &cfg).unwrap();
        assert_eq!(out.metrics.unfinished, 0);
        assert!(out.metrics.end_time_s > s.demand.horizon_s);
    }

    #[test]
    fn summary_statistics() {
        let mk = |seed, ttt| RunMetrics {
            strategy: Strategy::Bp,
            seed,
            ttt_veh_h: ttt,
            throughput: 10,
            mean_travel_time_s: 1.0,
            generated: 10,
            unfinished: 0,
            end_time_s: 0.0,
            micro_steps: 0,
            fallbacks: 0,
            relaxed_arcs: 0,
        };
        let rows = summarize(&[mk(1, 2.0), mk(2, 4.0)]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].ttt_veh_h_mean, 3.0);
        assert!((rows[0].ttt_veh_h_sd - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn outputs_are_written_and_read_back() {
        let s = corridor_with_mfd();
        let outs = compare(&s, &[Strategy::Bp], &[1, 2], false, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest {
            tool_version: "test".into(),
            command: "compare".into(),
            scenario: "corridor".into(),
            strategies: vec![Strategy::Bp],
            seeds: vec![1, 2],
            until_cleared: false,
            cap_s: None,
            files: vec![],
        };
        let files = write_outputs(dir.path(), &outs, &manifest).unwrap();
        assert_eq!(files.len(), 2 + 2 * 3 + 1);
        let back = read_metrics(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], outs[0].metrics);
    }
}
