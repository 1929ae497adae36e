//! Sliding-window online scheduling with causal information.
//!
//! At every slot a window instance covering the next `M` slots is built from
//! the true arrivals and channels of the current slot and predictions for the
//! rest, solved, and only its first-slot decisions are committed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::quad_form;
use crate::model::{total_objective, Allocation, Scenario, SystemParams};
use crate::offline::{solve_instance, OfflineMethod, OfflineOptions};
use crate::problem::{Problem, Restriction};
use crate::scenario::PredictedScenario;

/// Source of predictions made at a given slot.
pub trait Predictor {
    /// Predictions available when deciding slot `slot`; only entries after
    /// `slot` are read.
    fn predict(&mut self, slot: usize) -> Result<PredictedScenario>;
}

impl Predictor for PredictedScenario {
    fn predict(&mut self, _slot: usize) -> Result<PredictedScenario> {
        Ok(self.clone())
    }
}

impl<F: FnMut(usize) -> Result<PredictedScenario>> Predictor for F {
    fn predict(&mut self, slot: usize) -> Result<PredictedScenario> {
        self(slot)
    }
}

#[derive(Clone, Debug)]
pub struct OnlineOptions {
    pub solver: OfflineOptions,
    /// Adds each user's banked surplus energy to the next window's budget.
    pub energy_carry: bool,
    pub restriction: Restriction,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self {
            solver: OfflineOptions { method: OfflineMethod::InteriorPoint, certify: false, ..Default::default() },
            energy_carry: false,
            restriction: Restriction::None,
        }
    }
}

/// State carried between slots.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineState {
    /// Next slot to decide.
    pub slot: usize,
    /// Arrived but unexecuted bits per user.
    pub user_residual: Vec<f64>,
    /// Offloaded but unexecuted bits at the AP.
    pub ap_residual: f64,
    /// Harvested minus consumed energy per user.
    pub energy_surplus: Vec<f64>,
    /// Committed decisions; slots not yet decided are zero.
    pub trajectory: Allocation,
}

impl OnlineState {
    pub fn new(p: &SystemParams) -> Self {
        Self {
            slot: 0,
            user_residual: vec![0.0; p.num_users],
            ap_residual: 0.0,
            energy_surplus: vec![0.0; p.num_users],
            trajectory: Allocation::zeros(p.num_users, p.num_slots, p.num_antennas),
        }
    }
}

/// Window instance for one slot.
#[derive(Clone, Debug)]
pub struct WindowProblem {
    pub start: usize,
    pub size: usize,
    pub problem: Problem,
}

/// Builds the window instance at `state.slot` with window size at most `window`.
pub fn build_window_problem(
    state: &OnlineState,
    truth: &Scenario,
    pred: &PredictedScenario,
    window: usize,
    p: &SystemParams,
    opts: &OnlineOptions,
) -> Result<WindowProblem> {
    let n = p.num_slots;
    let i = state.slot;
    if window == 0 || window > n {
        return Err(Error::InvalidParameter(format!("window size {window} outside 1..={n}")));
    }
    if i >= n {
        return Err(Error::InvalidParameter("horizon already finished".into()));
    }
    let size = window.min(n - i);
    let k_n = p.num_users;
    let pick = |true_row: &[f64], pred_row: &[f64]| -> Vec<f64> {
        (0..size).map(|j| if j == 0 { true_row[i] } else { pred_row[i + j].max(0.0) }).collect()
    };
    let pick_ch = |t: &[crate::linalg::CVec], q: &[crate::linalg::CVec]| -> Vec<crate::linalg::CVec> {
        (0..size).map(|j| if j == 0 { t[i].clone() } else { q[i + j].clone() }).collect()
    };
    let mut params = p.clone();
    params.num_slots = size;
    let problem = Problem {
        params,
        arrivals: (0..k_n).map(|k| pick(&truth.arrivals[k], &pred.arrivals[k])).collect(),
        wpt_channels: (0..k_n).map(|k| pick_ch(&truth.wpt_channels[k], &pred.wpt_channels[k])).collect(),
        offload_channels: (0..k_n).map(|k| pick_ch(&truth.offload_channels[k], &pred.offload_channels[k])).collect(),
        user_backlog: state.user_residual.clone(),
        ap_backlog: state.ap_residual,
        energy_carry: if opts.energy_carry { state.energy_surplus.clone() } else { vec![0.0; k_n] },
        ends_at_horizon: i + size == n,
        restriction: opts.restriction,
    };
    Ok(WindowProblem { start: i, size, problem })
}

/// Applies committed decisions of the current slot and advances it.
///
/// Residuals that would turn negative by more than a rounding margin are an
/// error; smaller negative values are clamped to zero.
pub fn update_residuals(
    state: &mut OnlineState,
    local: &[f64],
    offload: &[f64],
    mec: f64,
    arrivals: &[f64],
) -> Result<()> {
    let i = state.slot;
    for k in 0..state.user_residual.len() {
        let before = state.user_residual[k] + arrivals[k];
        let after = before - local[k] - offload[k];
        if after < -1e-9 * before.max(1.0) {
            return Err(Error::Solver(format!("user {k} executed more than it holds at slot {i}")));
        }
        state.user_residual[k] = after.max(0.0);
        state.trajectory.local_bits[k][i] = local[k];
        state.trajectory.offload_bits[k][i] = offload[k];
    }
    let after = state.ap_residual - mec;
    if after < -1e-9 * state.ap_residual.max(1.0) {
        return Err(Error::Solver(format!("AP executed more than its backlog at slot {i}")));
    }
    state.ap_residual = after.max(0.0) + offload.iter().sum::<f64>();
    state.trajectory.mec_bits[i] = mec;
    state.slot += 1;
    Ok(())
}

/// One row of the per-slot log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotLog {
    pub slot: usize,
    pub window: usize,
    pub local_bits: Vec<f64>,
    pub offload_bits: Vec<f64>,
    pub mec_bits: f64,
    /// Transmit plus edge-computing energy of the slot.
    pub energy: f64,
    pub user_residual: Vec<f64>,
    pub ap_residual: f64,
}

#[derive(Clone, Debug)]
pub struct OnlineResult {
    pub trajectory: Allocation,
    pub objective: f64,
    pub logs: Vec<SlotLog>,
}

/// Runs the sliding-window scheme over the whole horizon.
pub fn solve_sliding_window(
    truth: &Scenario,
    predictor: &mut dyn Predictor,
    window: usize,
    p: &SystemParams,
    opts: &OnlineOptions,
) -> Result<OnlineResult> {
    p.validate()?;
    truth.validate(p)?;
    let n = p.num_slots;
    if opts.restriction == Restriction::FullOffload && n == 1 && truth.total_arrivals() > 0.0 {
        return Err(Error::Infeasible("full offloading needs at least two slots".into()));
    }
    let mut state = OnlineState::new(p);
    let mut logs = Vec::with_capacity(n);
    for i in 0..n {
        let pred = predictor.predict(i)?;
        let wp = build_window_problem(&state, truth, &pred, window, p, opts)?;
        let sol = solve_instance(&wp.problem, &opts.solver)?;
        let k_n = p.num_users;
        let local: Vec<f64> = (0..k_n).map(|k| sol.plan.local[k][0]).collect();
        // Offloads at the final global slot cannot be executed.
        let offload: Vec<f64> = (0..k_n).map(|k| if i + 1 < n { sol.plan.offload[k][0] } else { 0.0 }).collect();
        let mec = sol.plan.mec[0];
        let cov = sol.covariances[0].clone();
        let arrivals: Vec<f64> = (0..k_n).map(|k| truth.arrivals[k][i]).collect();
        for k in 0..k_n {
            let got = p.slot_duration * p.harvest_efficiency[k] * quad_form(&cov, &truth.wpt_channels[k][i]);
            let used = wp.problem.user_energy(k, 0, local[k], offload[k]);
            state.energy_surplus[k] = (state.energy_surplus[k] + got - used).max(0.0);
        }
        state.trajectory.covariances[i] = cov.clone();
        update_residuals(&mut state, &local, &offload, mec, &arrivals)?;
        logs.push(SlotLog {
            slot: i,
            window: wp.size,
            local_bits: local,
            offload_bits: offload,
            mec_bits: mec,
            energy: p.slot_duration * cov.trace().re + p.mec_coef() * mec.powi(3),
            user_residual: state.user_residual.clone(),
            ap_residual: state.ap_residual,
        });
    }
    let objective = total_objective(&state.trajectory, p)?;
    Ok(OnlineResult { trajectory: state.trajectory, objective, logs })
}

/// Writes slot logs as CSV: `slot,window,user,local_bits,offload_bits,mec_bits,energy_J,user_residual,ap_residual`,
/// one row per user and slot.
pub fn write_slot_logs<W: Write>(logs: &[SlotLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "slot",
        "window",
        "user",
        "local_bits",
        "offload_bits",
        "mec_bits",
        "energy_J",
        "user_residual",
        "ap_residual",
    ])?;
    let f = |x: f64| format!("{x:.9e}");
    for l in logs {
        for k in 0..l.local_bits.len() {
            w.write_record([
                l.slot.to_string(),
                l.window.to_string(),
                k.to_string(),
                f(l.local_bits[k]),
                f(l.offload_bits[k]),
                f(l.mec_bits),
                f(l.energy),
                f(l.user_residual[k]),
                f(l.ap_residual),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{gen_scenario, ChannelGeometry};

    fn setup(n: usize) -> (SystemParams, Scenario) {
        let p = SystemParams::with_defaults(2, n, 0.02);
        let g = ChannelGeometry::uniform(2, 3.0, 3.0, -32.0, 3.0);
        (p.clone(), gen_scenario(3, &g, 1e4, 3e4, &p).unwrap())
    }

    #[test]
    fn window_sizes_shrink_at_horizon() {
        let (p, s) = setup(4);
        let mut st = OnlineState::new(&p);
        let pred = PredictedScenario::exact(&s);
        let o = OnlineOptions::default();
        assert_eq!(build_window_problem(&st, &s, &pred, 3, &p, &o).unwrap().size, 3);
        st.slot = 3;
        let w = build_window_problem(&st, &s, &pred, 3, &p, &o).unwrap();
        assert_eq!(w.size, 1);
        assert!(w.problem.ends_at_horizon && !w.problem.off_active(0, 0));
        assert!(build_window_problem(&st, &s, &pred, 5, &p, &o).is_err());
        assert!(build_window_problem(&st, &s, &pred, 0, &p, &o).is_err());
    }

    #[test]
    fn residual_bookkeeping() {
        let (p, _) = setup(3);
        let mut st = OnlineState::new(&p);
        update_residuals(&mut st, &[0.0, 0.0], &[0.0, 0.0], 0.0, &[5.0, 7.0]).unwrap();
        assert_eq!(st.user_residual, vec![5.0, 7.0]);
        update_residuals(&mut st, &[2.0, 0.0], &[3.0, 1.0], 0.0, &[0.0, 1.0]).unwrap();
        assert_eq!(st.user_residual, vec![0.0, 7.0]);
        assert_eq!(st.ap_residual, 4.0);
        assert!(update_residuals(&mut st, &[0.0, 0.0], &[0.0, 0.0], 5.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn window_one_at_start_is_single_slot() {
        let (p, s) = setup(3);
        let st = OnlineState::new(&p);
        let w = build_window_problem(&st, &s, &PredictedScenario::exact(&s), 1, &p, &OnlineOptions::default()).unwrap();
        assert_eq!(w.problem.num_slots(), 1);
        assert!(!w.problem.ends_at_horizon && w.problem.off_active(0, 0) && !w.problem.off_reaches_ap(0));
    }
}
