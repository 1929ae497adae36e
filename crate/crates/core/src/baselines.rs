//! Benchmark policies: local computing only, full offloading, and the
//! slot-by-slot myopic design.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dual::DualVariables;
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};
use crate::model::{check_feasibility, total_objective, Allocation, Scenario, SystemParams, Tolerances};
use crate::offline::{solve_offline, Diagnostics, OfflineMethod, OfflineOptions, OfflineSolution};
use crate::problem::{min_energy_split, Restriction};
use crate::wpt::{min_power_wpt, mrc_covariance, EnergyDemandProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    LocalOnly,
    FullOffload,
    Myopic,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::LocalOnly, BaselineKind::FullOffload, BaselineKind::Myopic];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::LocalOnly => "local_only",
            BaselineKind::FullOffload => "full_offload",
            BaselineKind::Myopic => "myopic",
        }
    }

    /// Restriction applying the policy to the sliding-window scheme; the
    /// myopic design corresponds to a window of one slot instead.
    pub fn restriction(self) -> Restriction {
        match self {
            BaselineKind::LocalOnly => Restriction::LocalOnly,
            BaselineKind::FullOffload => Restriction::FullOffload,
            BaselineKind::Myopic => Restriction::None,
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown baseline {s:?}")))
    }
}

/// Splits `bits` of user `k` into `(offloaded, local)` minimizing the slot's
/// user energy for offloading channel `g`.
pub fn myopic_offload_split(bits: f64, g: &CVec, k: usize, p: &SystemParams) -> Result<(f64, f64)> {
    if !(bits >= 0.0 && bits.is_finite()) {
        return Err(Error::Domain("bits must be nonnegative".into()));
    }
    let off = min_energy_split(bits, p.local_coef(k), p.offload_coef(g), p.bits_scale());
    Ok((off, bits - off))
}

/// Single-slot covariance covering `demands` (joules per user).
fn slot_covariance(demands: &[f64], channels: &[&CVec], p: &SystemParams, tol: f64) -> Result<CMat> {
    let nt = p.num_antennas;
    let active: Vec<usize> = (0..demands.len()).filter(|&k| demands[k] > 0.0).collect();
    match active.len() {
        0 => Ok(CMat::zeros(nt, nt)),
        1 => {
            let k = active[0];
            let h = channels[k];
            let power = demands[k] / (p.slot_duration * p.harvest_efficiency[k] * h.norm_squared());
            mrc_covariance(h, power)
        }
        _ => {
            let profile = EnergyDemandProfile { cumulative: demands.iter().map(|&d| vec![d.max(0.0)]).collect() };
            let ch: Vec<Vec<CVec>> = channels.iter().map(|&h| vec![h.clone()]).collect();
            let mut q = p.clone();
            q.num_slots = 1;
            Ok(min_power_wpt(&profile, &ch, &q, tol)?.covariances.remove(0))
        }
    }
}

/// Slot-by-slot design: every user finishes its arrivals in the slot they
/// arrive, the AP finishes the previous slot's offloads, and nothing is
/// offloaded in the last slot.
pub fn solve_myopic(scen: &Scenario, p: &SystemParams) -> Result<OfflineSolution> {
    let start = Instant::now();
    p.validate()?;
    scen.validate(p)?;
    let (k_n, n) = (p.num_users, p.num_slots);
    let mut alloc = Allocation::zeros(k_n, n, p.num_antennas);
    for i in 0..n {
        let mut demands = vec![0.0; k_n];
        for k in 0..k_n {
            let a = scen.arrivals[k][i];
            let (off, loc) = if i + 1 < n { myopic_offload_split(a, &scen.offload_channels[k][i], k, p)? } else { (0.0, a) };
            alloc.local_bits[k][i] = loc;
            alloc.offload_bits[k][i] = off;
            demands[k] = p.local_coef(k) * loc.powi(3)
                + p.offload_coef(&scen.offload_channels[k][i]) * (std::f64::consts::LN_2 * off / p.bits_scale()).exp_m1();
        }
        if i > 0 {
            alloc.mec_bits[i] = (0..k_n).map(|k| alloc.offload_bits[k][i - 1]).sum();
        }
        let ch: Vec<&CVec> = (0..k_n).map(|k| &scen.wpt_channels[k][i]).collect();
        alloc.covariances[i] = slot_covariance(&demands, &ch, p, 1e-9)?;
    }
    let objective = total_objective(&alloc, p)?;
    let feasibility = check_feasibility(&alloc, scen, p, &Tolerances::default());
    Ok(OfflineSolution {
        allocation: alloc,
        objective,
        dual_value: 0.0,
        duality_gap: objective,
        dual: DualVariables::zeros(k_n, n),
        diagnostics: Diagnostics {
            method: OfflineMethod::InteriorPoint,
            iterations: n,
            converged: true,
            feasibility,
            runtime_s: start.elapsed().as_secs_f64(),
        },
        single_user: None,
    })
}

/// Offline optimum without offloading.
pub fn solve_local_only(scen: &Scenario, p: &SystemParams, opts: &OfflineOptions) -> Result<OfflineSolution> {
    let o = OfflineOptions { restriction: Restriction::LocalOnly, ..opts.clone() };
    solve_offline(scen, p, &o)
}

/// Offline optimum without local computing, except in the last slot where
/// offloading is impossible.
pub fn solve_full_offload(scen: &Scenario, p: &SystemParams, opts: &OfflineOptions) -> Result<OfflineSolution> {
    if p.num_slots < 2 {
        return Err(Error::Infeasible("full offloading needs at least two slots".into()));
    }
    let o = OfflineOptions { restriction: Restriction::FullOffload, ..opts.clone() };
    solve_offline(scen, p, &o)
}

/// Runs one baseline offline.
pub fn solve_baseline(kind: BaselineKind, scen: &Scenario, p: &SystemParams, opts: &OfflineOptions) -> Result<OfflineSolution> {
    match kind {
        BaselineKind::LocalOnly => solve_local_only(scen, p, opts),
        BaselineKind::FullOffload => solve_full_offload(scen, p, opts),
        BaselineKind::Myopic => solve_myopic(scen, p),
    }
}
