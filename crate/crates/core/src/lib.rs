//! Multi-region traffic simulation with a two-level control stack: an upper
//! level that plans boundary transfers and regional route splits from
//! macroscopic fundamental diagrams, and a lower level that realizes them with
//! boundary signal plans and per-vehicle route choice.
//!
//! The crate is organized bottom-up:
//!
//! * [`netmodel`] — static network, region partition, plan sets, demand, scenario files.
//! * [`mesosim`] — point-queue mesoscopic simulator producing [`mesosim::MicroObservation`]s.
//! * [`mfd`] — cubic MFD fitting and evaluation.
//! * [`macrodyn`] — region-level accumulation dynamics.
//! * [`jointctl`] — upper-level joint perimeter/route-split program.
//! * [`boundaryctl`] — micro-level expected-flow tracking and max-pressure plan activation.
//! * [`routectl`] — candidate routes and the route-choice quadratic program.
//! * [`baselines`] — PI gating, logit routing and pure backpressure.
//! * [`runner`] — two-time-scale orchestration, metrics, calibration and CSV reports.

pub mod baselines;
pub mod boundaryctl;
pub mod fixtures;
pub mod jointctl;
pub mod macrodyn;
pub mod mesosim;
pub mod mfd;
pub mod netmodel;
pub mod routectl;
pub mod runner;

mod lp;

pub use macrodyn::{MacroState, RegionGraph};
pub use mesosim::{MicroObservation, Simulator};
pub use mfd::MfdModel;
pub use netmodel::{
    ControlConfig, DemandScenario, LaneId, LinkId, Network, RegionId, RegionPartition, Scenario,
    ScenarioError,
};
pub use runner::{RunConfig, RunMetrics, Strategy};
