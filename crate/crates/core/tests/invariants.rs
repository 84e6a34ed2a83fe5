use proptest::prelude::*;

use regionctl_core::fixtures::{corridor, grid, GridParams};
use regionctl_core::jointctl::{self, ControlBounds};
use regionctl_core::mfd::RegionMfd;
use regionctl_core::netmodel::parse_scenario;
use regionctl_core::{MacroState, MfdModel, RegionGraph, Simulator};

fn check_books(sim: &Simulator, obs_occupancy: &[u32]) {
    let s = sim.scenario();
    let c = sim.counters();
    let entered: u64 = c.entries.iter().flatten().sum();
    let inside = sim.vehicles().iter().filter(|v| v.in_network()).count() as u64;
    let finished = sim.vehicles().iter().filter(|v| v.finished_s.is_some()).count() as u64;
    assert_eq!(entered, inside + finished);
    for (l, &occ) in obs_occupancy.iter().enumerate() {
        assert!(occ <= s.network.lanes[l].capacity_veh, "lane {l} over capacity");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn simulator_keeps_its_books(seed in 0u64..1000, phases in prop::collection::vec(0usize..8, 40)) {
        let s = corridor();
        let mut sim = Simulator::new(&s, seed);
        for (k, &p) in phases.iter().enumerate() {
            for b in 0..s.boundaries.len() {
                sim.apply_plan(b, p % s.boundaries[b].plans.len());
            }
            sim.reset_service_credit();
            sim.advance(10.0);
            let obs = sim.observe(10.0);
            check_books(&sim, &obs.lane_occupancy);
            prop_assert!((sim.time() - 10.0 * (k + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn joint_solution_respects_its_bounds(
        n in prop::collection::vec(0.0..900.0f64, 9),
        q in prop::collection::vec(0.0..30.0f64, 9),
        lo in prop::collection::vec(0.0..1.0f64, 4),
        width in prop::collection::vec(0.0..2.0f64, 4),
    ) {
        // Three regions on a path 0 - 1 - 2.
        let graph = RegionGraph::from_neighbors(vec![vec![1], vec![0, 2], vec![1]]);
        let mfd = MfdModel::new(vec![
            RegionMfd::from_coefficients(4.46e-3, -1.57e-6, 1.44e-10, None).unwrap(),
            RegionMfd::from_coefficients(6.59e-3, -3.40e-6, 4.50e-10, None).unwrap(),
            RegionMfd::from_coefficients(4.95e-3, -1.49e-6, -7.38e-10, None).unwrap(),
        ]);
        let mut state = MacroState::zeros(3, 100.0);
        for i in 0..3 {
            for j in 0..3 {
                state.n[i][j] = n[3 * i + j];
                state.q[i][j] = q[3 * i + j];
            }
        }
        let bounds = ControlBounds {
            m_min: lo.clone(),
            m_max: lo.iter().zip(&width).map(|(a, w)| a + w).collect(),
            c_min: vec![0.0; graph.splits().len()],
            c_max: vec![1.0; graph.splits().len()],
            c_ref: None,
        };
        for floor in [None, Some(0.0)] {
            let sol = jointctl::solve(&graph, &state, &mfd, &bounds, 0.0, floor).unwrap();
            for (a, &b) in sol.b.iter().enumerate() {
                prop_assert!((-1e-9..=1.0 + 1e-9).contains(&b));
                // A relaxed arc only keeps its upper bound.
                let lo = if sol.relaxed_arcs.contains(&a) { f64::NEG_INFINITY } else { bounds.m_min[a] };
                prop_assert!(sol.m_ih[a] >= lo - 1e-6 && sol.m_ih[a] <= bounds.m_max[a] + 1e-6,
                    "arc {a}: {} outside [{lo}, {}]", sol.m_ih[a], bounds.m_max[a]);
            }
            for i in 0..3 {
                for j in 0..3 {
                    let ids = graph.od_splits(i, j);
                    if !ids.is_empty() {
                        let total: f64 = ids.iter().map(|&s| sol.c[s]).sum();
                        prop_assert!((total - 1.0).abs() < 1e-6);
                    }
                }
            }
            if let Some(f) = floor {
                prop_assert!(sol.z >= f - 1e-9);
            }
        }
    }
}

#[test]
fn grid_scenario_survives_a_toml_round_trip() {
    let s = grid(&GridParams::default());
    let text = s.to_toml().unwrap();
    let back = parse_scenario(&text).unwrap();
    assert_eq!(back.to_toml().unwrap(), text);
    assert_eq!(back.network.lanes.len(), s.network.lanes.len());
    assert_eq!(back.boundaries.len(), s.boundaries.len());
}
