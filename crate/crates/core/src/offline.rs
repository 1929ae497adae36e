//! Offline optimum with full knowledge of arrivals and channels.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::barrier::{solve_full, BarrierOptions};
use crate::dual::{
    default_lambda_floor, ellipsoid_maximize, polish, project_feasible, Coord, DualVariables,
    EllipsoidOptions,
};
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};
use crate::model::{check_feasibility, total_objective, Allocation, FeasibilityReport, Scenario, SystemParams, Tolerances};
use crate::problem::{BitPlan, Problem, Restriction};
use crate::scenario::{pairs_to_vec, vec_to_pairs};
use crate::wpt::{min_power_wpt, mrc_covariance, EnergyDemandProfile};

/// Solver used for an instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OfflineMethod {
    /// Central-cut ellipsoid on the dual, closed-form primal recovery.
    Ellipsoid,
    /// Log-barrier on the primal, dual read off the barrier multipliers.
    InteriorPoint,
    /// Log-barrier primal; the dual bound is sharpened by the ellipsoid up to
    /// [`OfflineOptions::ellipsoid_max_dim`] dual variables.
    #[default]
    Auto,
}

#[derive(Clone, Debug)]
pub struct OfflineOptions {
    pub method: OfflineMethod,
    pub ellipsoid: EllipsoidOptions,
    pub barrier: BarrierOptions,
    pub ellipsoid_max_dim: usize,
    /// Compute a dual bound; without it `dual_value` is zero.
    pub certify: bool,
    /// Relative duality-gap target of covariance recovery.
    pub wpt_tol: f64,
    pub restriction: Restriction,
}

impl Default for OfflineOptions {
    fn default() -> Self {
        Self {
            method: OfflineMethod::Auto,
            ellipsoid: EllipsoidOptions::default(),
            barrier: BarrierOptions::default(),
            ellipsoid_max_dim: 96,
            certify: true,
            wpt_tol: 1e-8,
            restriction: Restriction::None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: OfflineMethod,
    /// Newton steps plus ellipsoid iterations.
    pub iterations: usize,
    pub converged: bool,
    pub feasibility: FeasibilityReport,
    pub runtime_s: f64,
}

/// Structure of the single-user optimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleUserStructure {
    /// Running argmax slot of the WPT channel gain for every slot.
    pub dominating_index: Vec<usize>,
    /// Number of slots served by each dominating slot, zero elsewhere.
    pub interval_lengths: Vec<usize>,
    /// Transmit power per slot in watts.
    pub powers: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct OfflineSolution {
    pub allocation: Allocation,
    pub objective: f64,
    pub dual_value: f64,
    pub duality_gap: f64,
    pub dual: DualVariables,
    pub diagnostics: Diagnostics,
    pub single_user: Option<SingleUserStructure>,
}

/// Solution of one [`Problem`] before it is mapped onto a scenario.
#[derive(Clone, Debug)]
pub(crate) struct InstanceSolution {
    pub plan: BitPlan,
    pub covariances: Vec<CMat>,
    pub dual: DualVariables,
    pub dual_value: f64,
    pub method: OfflineMethod,
    pub iterations: usize,
    pub converged: bool,
}

/// Cheapest covariances powering a plan, accounting for carried energy.
pub(crate) fn covariances_for_plan(pr: &Problem, plan: &BitPlan, tol: f64) -> Result<Vec<CMat>> {
    let profile = EnergyDemandProfile::from_per_slot(&pr.energy_demands(plan), &pr.energy_carry);
    if pr.num_users() == 1 {
        let (covs, _) = single_user_covariances(&profile.increments()[0], &pr.wpt_channels[0], &pr.params)?;
        return Ok(covs);
    }
    Ok(min_power_wpt(&profile, &pr.wpt_channels, &pr.params, tol)?.covariances)
}

/// Makes a plan satisfy every bit constraint exactly: execution is trimmed to
/// what has arrived, the remainder is executed at the last slot, and the AP
/// runs no more than its backlog and clears it at the end.
pub(crate) fn repair_plan(pr: &Problem, plan: &BitPlan) -> BitPlan {
    let (k_n, m) = (pr.num_users(), pr.num_slots());
    let mut out = BitPlan::zeros(k_n, m);
    for k in 0..k_n {
        let mut backlog = 0.0;
        for j in 0..m {
            backlog += pr.available(k, j);
            let mut loc = if pr.loc_active(k, j) { plan.local[k][j].max(0.0) } else { 0.0 };
            let mut off = if pr.off_active(k, j) { plan.offload[k][j].max(0.0) } else { 0.0 };
            let exec = loc + off;
            if exec > backlog {
                let f = backlog / exec;
                loc *= f;
                off *= f;
            }
            if j + 1 == m {
                let rest = (backlog - loc - off).max(0.0);
                if pr.loc_active(k, j) {
                    loc += rest;
                } else {
                    off += rest;
                }
            }
            backlog = (backlog - loc - off).max(0.0);
            out.local[k][j] = loc;
            out.offload[k][j] = off;
        }
    }
    let mut z = pr.ap_backlog;
    for j in 0..m {
        if j > 0 && pr.off_reaches_ap(j - 1) {
            z += (0..k_n).map(|k| out.offload[k][j - 1]).sum::<f64>();
        }
        let mut e = if pr.mec_active(j) { plan.mec[j].clamp(0.0, z) } else { 0.0 };
        if j + 1 == m {
            e = z;
        }
        out.mec[j] = e;
        z -= e;
    }
    out
}

/// Dual certificate for barrier multipliers: tails converted to multipliers,
/// projected onto the dual-feasible set, unresolved coordinates maximized.
fn certify(pr: &Problem, tails: &DualVariables, unresolved: &[Coord]) -> Result<(DualVariables, f64)> {
    let (k_n, m) = (pr.num_users(), pr.num_slots());
    let mut dv = tails.clone();
    for k in 0..k_n {
        for j in 0..m {
            let next = if j + 1 < m { tails.lambda[k][j + 1] } else { 0.0 };
            dv.lambda[k][j] = (tails.lambda[k][j] - next).max(0.0);
        }
    }
    project_feasible(pr, &mut dv, default_lambda_floor(pr))?;
    let mut coords: Vec<Coord> = unresolved.to_vec();
    for k in 0..k_n {
        if !coords.contains(&Coord::Mu(k, m - 1)) {
            coords.push(Coord::Mu(k, m - 1));
        }
    }
    if !coords.contains(&Coord::Nu(m - 1)) {
        coords.push(Coord::Nu(m - 1));
    }
    let value = polish(pr, &mut dv, &coords, 2)?;
    Ok((dv, value))
}

fn zero_instance(pr: &Problem) -> bool {
    pr.ap_backlog <= 0.0 && (0..pr.num_users()).all(|k| pr.total_bits(k) <= 0.0)
}

/// Solves one instance with the configured method.
pub(crate) fn solve_instance(pr: &Problem, opts: &OfflineOptions) -> Result<InstanceSolution> {
    pr.validate()?;
    let (k_n, m) = (pr.num_users(), pr.num_slots());
    let nt = pr.params.num_antennas;
    let method = opts.method;
    if zero_instance(pr) {
        return Ok(InstanceSolution {
            plan: BitPlan::zeros(k_n, m),
            covariances: vec![CMat::zeros(nt, nt); m],
            dual: DualVariables::zeros(k_n, m),
            dual_value: 0.0,
            method,
            iterations: 0,
            converged: true,
        });
    }
    match method {
        OfflineMethod::Ellipsoid => {
            let res = ellipsoid_maximize(pr, &opts.ellipsoid)?;
            let plan = repair_plan(pr, &res.plan);
            let covariances = covariances_for_plan(pr, &plan, opts.wpt_tol)?;
            Ok(InstanceSolution {
                plan,
                covariances,
                dual: res.dual,
                dual_value: res.value,
                method: OfflineMethod::Ellipsoid,
                iterations: res.iterations,
                converged: res.converged,
            })
        }
        OfflineMethod::InteriorPoint | OfflineMethod::Auto => {
            let fb = solve_full(pr, &opts.barrier)?;
            let (mut dual, mut dual_value) =
                if opts.certify { certify(pr, &fb.dual, &fb.unresolved)? } else { (DualVariables::zeros(k_n, m), 0.0) };
            let (mut iterations, mut converged) = (fb.newton_steps, fb.converged);
            if opts.certify && method == OfflineMethod::Auto && pr.dual_dim() <= opts.ellipsoid_max_dim {
                let res = ellipsoid_maximize(pr, &opts.ellipsoid)?;
                iterations += res.iterations;
                converged &= res.converged;
                if res.value > dual_value {
                    dual = res.dual;
                    dual_value = res.value;
                }
            }
            let mut covariances = fb.covariances;
            if k_n == 1 {
                covariances = covariances_for_plan(pr, &fb.plan, opts.wpt_tol)?;
            }
            Ok(InstanceSolution {
                plan: fb.plan,
                covariances,
                dual,
                dual_value,
                method,
                iterations,
                converged,
            })
        }
    }
}

pub(crate) fn allocation_from(plan: &BitPlan, covariances: Vec<CMat>) -> Allocation {
    Allocation {
        covariances,
        mec_bits: plan.mec.clone(),
        local_bits: plan.local.clone(),
        offload_bits: plan.offload.clone(),
    }
}

/// Computes the offline optimum of a scenario.
pub fn solve_offline(scen: &Scenario, p: &SystemParams, opts: &OfflineOptions) -> Result<OfflineSolution> {
    let start = Instant::now();
    let pr = Problem::offline(scen, p)?.with_restriction(opts.restriction);
    if opts.restriction == Restriction::FullOffload && p.num_slots == 1 && scen.total_arrivals() > 0.0 {
        return Err(Error::Infeasible("full offloading needs at least two slots".into()));
    }
    let sol = solve_instance(&pr, opts)?;
    let single_user = if p.num_users == 1 {
        Some(recover_single_user_wpt(&sol.plan.local[0], &sol.plan.offload[0], scen, p)?.1)
    } else {
        None
    };
    let allocation = allocation_from(&sol.plan, sol.covariances);
    let objective = total_objective(&allocation, p)?;
    let feasibility = check_feasibility(&allocation, scen, p, &Tolerances::default());
    Ok(OfflineSolution {
        allocation,
        objective,
        dual_value: sol.dual_value,
        duality_gap: objective - sol.dual_value,
        dual: sol.dual,
        diagnostics: Diagnostics {
            method: sol.method,
            iterations: sol.iterations,
            converged: sol.converged,
            feasibility,
            runtime_s: start.elapsed().as_secs_f64(),
        },
        single_user,
    })
}

/// Running argmax of `‖h_j‖²`, earliest slot on ties.
pub fn causality_dominating_slots(channels: &[CVec]) -> Vec<usize> {
    let mut out = Vec::with_capacity(channels.len());
    let mut best = 0usize;
    for (j, h) in channels.iter().enumerate() {
        if h.norm_squared() > channels[best].norm_squared() {
            best = j;
        }
        out.push(best);
    }
    out
}

/// Per-slot demand increments powered at the dominating slots.
fn single_user_covariances(increments: &[f64], channels: &[CVec], p: &SystemParams) -> Result<(Vec<CMat>, SingleUserStructure)> {
    let m = increments.len();
    let dom = causality_dominating_slots(channels);
    let mut powers = vec![0.0; m];
    let mut lengths = vec![0usize; m];
    for j in 0..m {
        let i = dom[j];
        lengths[i] += 1;
        powers[i] += increments[j].max(0.0) / (p.slot_duration * p.harvest_efficiency[0] * channels[i].norm_squared());
    }
    let covs = (0..m)
        .map(|j| {
            if powers[j] > 0.0 {
                mrc_covariance(&channels[j], powers[j])
            } else {
                Ok(CMat::zeros(p.num_antennas, p.num_antennas))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((covs, SingleUserStructure { dominating_index: dom, interval_lengths: lengths, powers }))
}

/// Closed-form covariances of a single-user schedule: MRC beams at the
/// dominating slots, each carrying the energy consumed until the next one.
pub fn recover_single_user_wpt(
    local: &[f64],
    offload: &[f64],
    scen: &Scenario,
    p: &SystemParams,
) -> Result<(Vec<CMat>, SingleUserStructure)> {
    if p.num_users != 1 || scen.num_users() != 1 {
        return Err(Error::InvalidParameter("single-user recovery needs exactly one user".into()));
    }
    let m = scen.num_slots();
    if local.len() != m || offload.len() != m {
        return Err(Error::Dimension("bit vectors do not match the scenario".into()));
    }
    let pr = Problem::offline(scen, p)?;
    let inc: Vec<f64> = (0..m).map(|j| pr.user_energy(0, j, local[j], offload[j])).collect();
    single_user_covariances(&inc, &scen.wpt_channels[0], p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    /// `"local"` or `"mec"`.
    pub series: String,
    pub user: Option<usize>,
    /// Slot `i` with `x[i] > x[i + 1] + tol`.
    pub slot: usize,
    pub drop: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub passed: bool,
    pub violations: Vec<MonotonicityViolation>,
}

/// Checks that local bits and (from the second slot on) edge bits never decrease.
pub fn verify_monotonicity(alloc: &Allocation, tol: f64) -> MonotonicityReport {
    let mut violations = Vec::new();
    for (k, row) in alloc.local_bits.iter().enumerate() {
        for i in 0..row.len().saturating_sub(1) {
            if row[i] > row[i + 1] + tol {
                violations.push(MonotonicityViolation { series: "local".into(), user: Some(k), slot: i, drop: row[i] - row[i + 1] });
            }
        }
    }
    let mec = &alloc.mec_bits;
    for i in 1..mec.len().saturating_sub(1) {
        if mec[i] > mec[i + 1] + tol {
            violations.push(MonotonicityViolation { series: "mec".into(), user: None, slot: i, drop: mec[i] - mec[i + 1] });
        }
    }
    MonotonicityReport { passed: violations.is_empty(), violations }
}

#[derive(Serialize, Deserialize)]
struct SolutionDoc {
    objective: f64,
    dual_value: f64,
    duality_gap: f64,
    local_bits: Vec<Vec<f64>>,
    offload_bits: Vec<Vec<f64>>,
    mec_bits: Vec<f64>,
    powers: Vec<f64>,
    /// `[slot][row][col]` as `[re, im]`.
    covariances: Vec<Vec<Vec<[f64; 2]>>>,
    diagnostics: Diagnostics,
}

impl OfflineSolution {
    pub fn to_json(&self) -> Result<String> {
        let a = &self.allocation;
        let doc = SolutionDoc {
            objective: self.objective,
            dual_value: self.dual_value,
            duality_gap: self.duality_gap,
            local_bits: a.local_bits.clone(),
            offload_bits: a.offload_bits.clone(),
            mec_bits: a.mec_bits.clone(),
            powers: a.covariances.iter().map(|s| s.trace().re).collect(),
            covariances: a
                .covariances
                .iter()
                .map(|s| (0..s.nrows()).map(|r| vec_to_pairs(&s.row(r).transpose())).collect())
                .collect(),
            diagnostics: self.diagnostics.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Reads the allocation and headline numbers back from [`Self::to_json`] output.
    pub fn allocation_from_json(text: &str) -> Result<(Allocation, f64)> {
        let doc: SolutionDoc = serde_json::from_str(text)?;
        let covariances = doc
            .covariances
            .iter()
            .map(|rows| {
                let n = rows.len();
                let mut m = CMat::zeros(n, n);
                for (r, row) in rows.iter().enumerate() {
                    let v = pairs_to_vec(row);
                    for c in 0..n {
                        m[(r, c)] = v.get(c).copied().unwrap_or(Complex64::new(0.0, 0.0));
                    }
                }
                m
            })
            .collect();
        let alloc = Allocation {
            covariances,
            mec_bits: doc.mec_bits,
            local_bits: doc.local_bits,
            offload_bits: doc.offload_bits,
        };
        Ok((alloc, doc.objective))
    }
}
