#![allow(clippy::needless_range_loop)]

mod common;

use common::{params, scenario};
use proptest::prelude::*;
use wpmec::{
    check_feasibility, gen_predictions, harvested_energy, min_power_wpt, myopic_offload_split, solve_myopic, solve_offline,
    solve_sliding_window, verify_monotonicity, EnergyDemandProfile, OfflineOptions, OnlineOptions, PredictionErrorModel,
    Tolerances,
};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 12, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn offline_is_feasible_and_certified(seed in 0u64..10_000, k in 1usize..4, n in 2usize..7, high in 5e5f64..4e6) {
        let p = params(k, n, 0.02, 4);
        let scen = scenario(seed, &p, 3.0, 0.0, high);
        let sol = solve_offline(&scen, &p, &OfflineOptions::default()).unwrap();
        let rep = check_feasibility(&sol.allocation, &scen, &p, &Tolerances { relative: 1e-6 });
        prop_assert!(rep.feasible, "{rep:?}");
        prop_assert!(sol.dual_value <= sol.objective * (1.0 + 1e-9));
        prop_assert!(sol.duality_gap <= 1e-3 * sol.objective);
        let max_bits = scen.arrivals.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(verify_monotonicity(&sol.allocation, 1e-6 * max_bits).passed);
    }

    #[test]
    fn online_trajectory_is_feasible(seed in 0u64..10_000, m in 1usize..5, sigma in 0.0f64..0.4, carry: bool) {
        let p = params(3, 6, 0.05, 4);
        let scen = scenario(seed, &p, 4.0, 1e5, 2e6);
        let mut pred = gen_predictions(&scen, &PredictionErrorModel::uniform(sigma), &common::geometry(3, 4.0), seed + 1).unwrap();
        let opts = OnlineOptions { energy_carry: carry, ..Default::default() };
        let res = solve_sliding_window(&scen, &mut pred, m, &p, &opts).unwrap();
        let rep = check_feasibility(&res.trajectory, &scen, &p, &Tolerances { relative: 1e-6 });
        prop_assert!(rep.feasible, "{rep:?}");
        let logged: f64 = res.logs.iter().map(|l| l.energy).sum();
        prop_assert!((logged - res.objective).abs() <= 1e-9 * res.objective.max(1.0));
        prop_assert!(res.logs.last().unwrap().user_residual.iter().all(|&r| r <= 1e-6 * 2e6));
    }

    #[test]
    fn myopic_split_conserves_bits(seed in 0u64..10_000, bits in 0.0f64..5e6) {
        let p = params(1, 2, 0.02, 4);
        let scen = scenario(seed, &p, 4.0, 1e5, 1e6);
        let (off, loc) = myopic_offload_split(bits, &scen.offload_channels[0][0], 0, &p).unwrap();
        prop_assert!(off >= 0.0 && loc >= 0.0);
        prop_assert!((off + loc - bits).abs() <= 1e-9 * bits.max(1.0));
    }

    #[test]
    fn wpt_meets_every_demand(seed in 0u64..10_000, k in 1usize..4, n in 1usize..5) {
        let p = params(k, n, 0.05, 4);
        let scen = scenario(seed, &p, 3.0, 1e5, 1e6);
        let cumulative: Vec<Vec<f64>> = (0..k)
            .map(|u| (0..n).scan(0.0, |acc, i| { *acc += 1e-6 * (1 + (u + i) % 3) as f64; Some(*acc) }).collect())
            .collect();
        let profile = EnergyDemandProfile { cumulative: cumulative.clone() };
        let sol = min_power_wpt(&profile, &scen.wpt_channels, &p, 1e-8).unwrap();
        for u in 0..k {
            let mut got = 0.0;
            for i in 0..n {
                got += harvested_energy(&sol.covariances[i], &scen.wpt_channels[u][i], p.harvest_efficiency[u], p.slot_duration).unwrap();
                prop_assert!(got >= cumulative[u][i] * (1.0 - 1e-7));
            }
        }
        prop_assert!(sol.gap <= 1e-6 * sol.total_energy);
    }
}

#[test]
fn myopic_is_feasible() {
    let p = params(4, 8, 0.02, 4);
    let scen = scenario(5, &p, 4.0, 0.0, 4e6);
    let sol = solve_myopic(&scen, &p).unwrap();
    assert!(sol.diagnostics.feasibility.feasible, "{:?}", sol.diagnostics.feasibility);
}
