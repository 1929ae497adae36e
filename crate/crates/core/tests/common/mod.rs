#![allow(dead_code)]

use wpmec::{
    causality_dominating_slots, gen_scenario, local_energy, mec_energy, offload_energy, ChannelGeometry, Scenario,
    SystemParams,
};

/// Table-default parameters with `nt` antennas.
pub fn params(k: usize, n: usize, tau: f64, nt: usize) -> SystemParams {
    let mut p = SystemParams::with_defaults(k, n, tau);
    p.num_antennas = nt;
    p
}

pub fn geometry(k: usize, d: f64) -> ChannelGeometry {
    ChannelGeometry::uniform(k, d, 3.0, -32.0, 3.0)
}

pub fn scenario(seed: u64, p: &SystemParams, d: f64, low: f64, high: f64) -> Scenario {
    gen_scenario(seed, &geometry(p.num_users, d), low, high, p).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Energy of a single-user schedule: greedy WPT at the dominating slots plus
/// edge computing with the best split of offloaded bits over later slots.
fn single_user_cost(l: &[f64], o: &[f64], scen: &Scenario, p: &SystemParams) -> f64 {
    let n = l.len();
    let tau = p.slot_duration;
    let h = &scen.wpt_channels[0];
    let dom = causality_dominating_slots(h);
    let mut wpt = 0.0;
    for j in 0..n {
        let e = local_energy(l[j], p.user_capacitance[0], p.user_cycles_per_bit[0], tau).unwrap()
            + offload_energy(o[j], &scen.offload_channels[0][j], p.noise_power, p.bandwidth, tau).unwrap();
        wpt += e / (p.harvest_efficiency[0] * h[dom[j]].norm_squared());
    }
    let mec_bits = match n {
        2 => vec![o[0]],
        3 => {
            let total = o[0] + o[1];
            let first = o[0].min(total / 2.0);
            vec![first, total - first]
        }
        _ => unreachable!(),
    };
    let mec: f64 = mec_bits.iter().map(|&m| mec_energy(m, p.ap_capacitance, p.ap_cycles_per_bit, tau).unwrap()).sum();
    wpt + mec
}

/// Minimum energy of a one-user instance with two or three slots by a
/// zooming grid over bit splits: per slot, the executed share of the
/// backlog and the offloaded share of the executed bits.
pub fn grid_oracle(scen: &Scenario, p: &SystemParams) -> f64 {
    let n = p.num_slots;
    assert!(p.num_users == 1 && (n == 2 || n == 3));
    let a = &scen.arrivals[0];
    let dims = 2 * (n - 1);
    let eval = |x: &[f64]| -> f64 {
        let mut l = vec![0.0; n];
        let mut o = vec![0.0; n];
        let mut backlog = 0.0;
        for j in 0..n - 1 {
            backlog += a[j];
            let exec = x[2 * j] * backlog;
            o[j] = x[2 * j + 1] * exec;
            l[j] = exec - o[j];
            backlog -= exec;
        }
        l[n - 1] = backlog + a[n - 1];
        single_user_cost(&l, &o, scen, p)
    };
    const G: usize = 11;
    let mut lo = vec![0.0; dims];
    let mut hi = vec![1.0; dims];
    let mut best = (f64::INFINITY, vec![0.0; dims]);
    let mut x = vec![0.0; dims];
    for _level in 0..60 {
        let step: Vec<f64> = (0..dims).map(|d| (hi[d] - lo[d]) / (G - 1) as f64).collect();
        for idx in 0..G.pow(dims as u32) {
            let mut r = idx;
            for d in 0..dims {
                x[d] = lo[d] + step[d] * (r % G) as f64;
                r /= G;
            }
            let v = eval(&x);
            if v < best.0 {
                best = (v, x.clone());
            }
        }
        for d in 0..dims {
            lo[d] = (best.1[d] - 3.0 * step[d]).max(0.0);
            hi[d] = (best.1[d] + 3.0 * step[d]).min(1.0);
        }
    }
    best.0
}

/// Outcome of comparing two Monte-Carlo means with ±2 standard-error bands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Below,
    Above,
    Overlap,
}

pub fn compare(mean_a: f64, se_a: f64, mean_b: f64, se_b: f64) -> Order {
    if mean_a + 2.0 * se_a < mean_b - 2.0 * se_b {
        Order::Below
    } else if mean_a - 2.0 * se_a > mean_b + 2.0 * se_b {
        Order::Above
    } else {
        Order::Overlap
    }
}
