//! A solvable instance of the joint WPT/offloading problem over a run of
//! consecutive slots.
//!
//! The offline problem, sliding-window problems and the restricted baselines
//! are all instances of [`Problem`]. A window carries residual backlogs at the
//! users and at the AP, an optional energy carry, and a flag telling whether
//! its last slot is the last slot of the global horizon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CVec;
use crate::model::{offload_energy_coef, Scenario, SystemParams};

/// Which execution modes the instance allows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Restriction {
    #[default]
    None,
    /// No offloading and no edge computing.
    LocalOnly,
    /// No local computing, except at the final slot of the global horizon
    /// where nothing can be offloaded any more.
    FullOffload,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub params: SystemParams,
    /// Bits arriving at the start of each window slot, `[user][slot]`.
    pub arrivals: Vec<Vec<f64>>,
    pub wpt_channels: Vec<Vec<CVec>>,
    pub offload_channels: Vec<Vec<CVec>>,
    /// Unexecuted bits at each user before the first slot.
    pub user_backlog: Vec<f64>,
    /// Offloaded but unexecuted bits at the AP before the first slot.
    pub ap_backlog: f64,
    /// Energy each user holds before the first slot.
    pub energy_carry: Vec<f64>,
    pub ends_at_horizon: bool,
    pub restriction: Restriction,
}

/// Bit decisions of an instance, `[user][slot]` and `[slot]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BitPlan {
    pub local: Vec<Vec<f64>>,
    pub offload: Vec<Vec<f64>>,
    pub mec: Vec<f64>,
}

impl BitPlan {
    pub fn zeros(num_users: usize, num_slots: usize) -> Self {
        Self {
            local: vec![vec![0.0; num_slots]; num_users],
            offload: vec![vec![0.0; num_slots]; num_users],
            mec: vec![0.0; num_slots],
        }
    }
}

impl Problem {
    /// The offline instance over the whole horizon.
    pub fn offline(scen: &Scenario, p: &SystemParams) -> Result<Self> {
        p.validate()?;
        scen.validate(p)?;
        Ok(Self {
            params: p.clone(),
            arrivals: scen.arrivals.clone(),
            wpt_channels: scen.wpt_channels.clone(),
            offload_channels: scen.offload_channels.clone(),
            user_backlog: vec![0.0; p.num_users],
            ap_backlog: 0.0,
            energy_carry: vec![0.0; p.num_users],
            ends_at_horizon: true,
            restriction: Restriction::None,
        })
    }

    pub fn with_restriction(mut self, r: Restriction) -> Self {
        self.restriction = r;
        self
    }

    pub fn num_users(&self) -> usize {
        self.arrivals.len()
    }

    pub fn num_slots(&self) -> usize {
        self.arrivals.first().map_or(0, Vec::len)
    }

    /// Dimension of the dual vector: `2 M K + M`.
    pub fn dual_dim(&self) -> usize {
        let (k, m) = (self.num_users(), self.num_slots());
        2 * m * k + m
    }

    pub fn validate(&self) -> Result<()> {
        let (k, m) = (self.num_users(), self.num_slots());
        if k != self.params.num_users || m == 0 {
            return Err(Error::Dimension("instance does not match system parameters".into()));
        }
        let ok = self.arrivals.iter().all(|r| r.len() == m)
            && [&self.wpt_channels, &self.offload_channels]
                .iter()
                .all(|c| c.len() == k && c.iter().all(|r| r.len() == m && r.iter().all(|h| h.len() == self.params.num_antennas)))
            && self.user_backlog.len() == k
            && self.energy_carry.len() == k;
        if !ok {
            return Err(Error::Dimension("instance arrays have inconsistent shapes".into()));
        }
        let nonneg = |x: &f64| *x >= 0.0 && x.is_finite();
        if !(self.arrivals.iter().flatten().all(nonneg)
            && self.user_backlog.iter().all(nonneg)
            && self.energy_carry.iter().all(nonneg)
            && nonneg(&self.ap_backlog))
        {
            return Err(Error::Domain("arrivals, backlogs and carries must be nonnegative".into()));
        }
        if self.offload_channels.iter().flatten().any(|g| !(g.norm_squared() > 0.0)) {
            return Err(Error::Domain("zero offloading channel".into()));
        }
        if self.restriction == Restriction::LocalOnly && self.ap_backlog > 0.0 {
            return Err(Error::Infeasible("local-only instance with an AP backlog".into()));
        }
        Ok(())
    }

    /// Bits available at user `k` in slot `j` (arrivals plus the backlog at `j = 0`).
    pub fn available(&self, k: usize, j: usize) -> f64 {
        self.arrivals[k][j] + if j == 0 { self.user_backlog[k] } else { 0.0 }
    }

    pub fn total_bits(&self, k: usize) -> f64 {
        self.user_backlog[k] + self.arrivals[k].iter().sum::<f64>()
    }

    fn is_last(&self, j: usize) -> bool {
        j + 1 == self.num_slots()
    }

    pub fn loc_active(&self, _k: usize, j: usize) -> bool {
        self.restriction != Restriction::FullOffload || (self.ends_at_horizon && self.is_last(j))
    }

    pub fn off_active(&self, _k: usize, j: usize) -> bool {
        self.restriction != Restriction::LocalOnly && !(self.ends_at_horizon && self.is_last(j))
    }

    pub fn mec_active(&self, j: usize) -> bool {
        self.restriction != Restriction::LocalOnly && (j > 0 || self.ap_backlog > 0.0)
    }

    /// Whether offloads at slot `j` enter the AP constraints of this instance.
    pub fn off_reaches_ap(&self, j: usize) -> bool {
        !self.is_last(j)
    }

    /// Execution at `(k, j)` is forced to zero when nothing has arrived yet.
    pub fn forced_idle(&self, k: usize, j: usize) -> bool {
        self.user_backlog[k] + self.arrivals[k][..=j].iter().sum::<f64>() <= 0.0
    }

    pub fn local_coef(&self, k: usize) -> f64 {
        self.params.local_coef(k)
    }

    pub fn offload_coef(&self, k: usize, j: usize) -> f64 {
        self.params.offload_coef(&self.offload_channels[k][j])
    }

    /// Energy user `k` spends in slot `j`.
    pub fn user_energy(&self, k: usize, j: usize, loc: f64, off: f64) -> f64 {
        self.local_coef(k) * loc.max(0.0).powi(3)
            + offload_energy_coef(off.max(0.0), self.offload_coef(k, j), self.params.bits_scale())
    }

    pub fn mec_cost(&self, bits: &[f64]) -> f64 {
        let c0 = self.params.mec_coef();
        bits.iter().map(|&l| c0 * l.max(0.0).powi(3)).sum()
    }

    /// Per-slot user energy demands implied by a bit plan.
    pub fn energy_demands(&self, plan: &BitPlan) -> Vec<Vec<f64>> {
        (0..self.num_users())
            .map(|k| {
                (0..self.num_slots())
                    .map(|j| self.user_energy(k, j, plan.local[k][j], plan.offload[k][j]))
                    .collect()
            })
            .collect()
    }

    /// Largest violation of the bit constraints by `plan`, in bits.
    pub fn bit_violation(&self, plan: &BitPlan) -> f64 {
        let (k_n, m) = (self.num_users(), self.num_slots());
        let mut worst: f64 = 0.0;
        for k in 0..k_n {
            let mut backlog = self.user_backlog[k];
            for j in 0..m {
                backlog += self.arrivals[k][j] - plan.local[k][j] - plan.offload[k][j];
                worst = worst.max(-backlog).max(-plan.local[k][j]).max(-plan.offload[k][j]);
                if !self.loc_active(k, j) {
                    worst = worst.max(plan.local[k][j].abs());
                }
                if !self.off_active(k, j) {
                    worst = worst.max(plan.offload[k][j].abs());
                }
            }
            worst = worst.max(backlog.abs());
        }
        let mut z = self.ap_backlog;
        for j in 0..m {
            if j > 0 {
                z += (0..k_n).map(|k| plan.offload[k][j - 1]).sum::<f64>();
            }
            z -= plan.mec[j];
            worst = worst.max(-z).max(-plan.mec[j]);
            if !self.mec_active(j) {
                worst = worst.max(plan.mec[j].abs());
            }
        }
        worst.max(z.abs())
    }

    /// Total bits the plan must move, for tolerance scaling.
    pub fn bit_scale(&self) -> f64 {
        (0..self.num_users()).map(|k| self.total_bits(k)).sum::<f64>() + self.ap_backlog
    }
}

/// Offloaded share minimizing `a (e - l)³ + β (2^{l/s} - 1)` over `l ∈ [0, e]`,
/// found by bisection on the derivative.
pub fn min_energy_split(e: f64, a: f64, beta: f64, s: f64) -> f64 {
    if !(e > 0.0) {
        return 0.0;
    }
    let deriv = |l: f64| -3.0 * a * (e - l).powi(2) + beta * std::f64::consts::LN_2 / s * (l / s).exp2();
    if deriv(0.0) >= 0.0 {
        return 0.0;
    }
    if deriv(e) <= 0.0 {
        return e;
    }
    let (mut lo, mut hi) = (0.0, e);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}
