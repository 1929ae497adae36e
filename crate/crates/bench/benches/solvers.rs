use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use wpmec::{
    gen_predictions, gen_scenario, min_power_wpt, solve_myopic, solve_offline, solve_sliding_window, ChannelGeometry,
    EnergyDemandProfile, OfflineMethod, OfflineOptions, OnlineOptions, PredictionErrorModel, SystemParams,
};

fn offline(c: &mut Criterion) {
    let mut group = c.benchmark_group("offline");
    group.sample_size(10);
    for (k, n) in [(2, 5), (4, 10), (6, 20)] {
        let p = SystemParams::with_defaults(k, n, 0.02);
        let geom = ChannelGeometry::uniform(k, 4.0, 3.0, -32.0, 3.0);
        let scen = gen_scenario(1, &geom, 0.0, 4e6, &p).unwrap();
        for (name, method) in [("auto", OfflineMethod::Auto), ("interior_point", OfflineMethod::InteriorPoint)] {
            let opts = OfflineOptions { method, ..Default::default() };
            group.bench_with_input(BenchmarkId::new(name, format!("K{k}_N{n}")), &scen, |b, s| {
                b.iter(|| solve_offline(black_box(s), &p, &opts).unwrap())
            });
        }
    }
    group.finish();
}

fn wpt(c: &mut Criterion) {
    let mut group = c.benchmark_group("min_power_wpt");
    for (k, n) in [(2, 4), (4, 10), (8, 20)] {
        let p = SystemParams::with_defaults(k, n, 0.05);
        let geom = ChannelGeometry::uniform(k, 3.0, 3.0, -32.0, 3.0);
        let scen = gen_scenario(2, &geom, 0.0, 1e6, &p).unwrap();
        let per_slot: Vec<Vec<f64>> = (0..k).map(|u| (0..n).map(|i| 1e-6 * (1 + (u + i) % 4) as f64).collect()).collect();
        let profile = EnergyDemandProfile::from_per_slot(&per_slot, &vec![0.0; k]);
        group.bench_function(format!("K{k}_N{n}"), |b| {
            b.iter(|| min_power_wpt(black_box(&profile), &scen.wpt_channels, &p, 1e-8).unwrap())
        });
    }
    group.finish();
}

fn myopic(c: &mut Criterion) {
    let p = SystemParams::with_defaults(8, 30, 0.05);
    let geom = ChannelGeometry::uniform(8, 5.0, 3.0, -32.0, 3.0);
    let scen = gen_scenario(3, &geom, 1e6, 5e6, &p).unwrap();
    c.bench_function("myopic/K8_N30", |b| b.iter(|| solve_myopic(black_box(&scen), &p).unwrap()));
}

fn online(c: &mut Criterion) {
    let mut group = c.benchmark_group("online");
    group.sample_size(10);
    let p = SystemParams::with_defaults(4, 20, 0.1);
    let geom = ChannelGeometry::uniform(4, 3.0, 3.0, -32.0, 3.0);
    let scen = gen_scenario(4, &geom, 1e6, 4e6, &p).unwrap();
    let pred = gen_predictions(&scen, &PredictionErrorModel::uniform(0.1), &geom, 5).unwrap();
    for m in [1, 2, 8] {
        group.bench_with_input(BenchmarkId::new("window", m), &m, |b, &m| {
            b.iter(|| {
                let mut pr = pred.clone();
                solve_sliding_window(black_box(&scen), &mut pr, m, &p, &OnlineOptions::default()).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, offline, wpt, myopic, online);
criterion_main!(benches);
