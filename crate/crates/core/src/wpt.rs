//! Minimum-energy transmit covariances for given harvesting demands.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::barrier::{solve_wpt, BarrierOptions};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, outer, CMat, CVec};
use crate::model::SystemParams;

/// Cumulative energy each user must have harvested by the end of each slot,
/// `[user][slot]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyDemandProfile {
    pub cumulative: Vec<Vec<f64>>,
}

impl EnergyDemandProfile {
    /// Builds the profile from per-slot consumption, net of energy already held.
    pub fn from_per_slot(per_slot: &[Vec<f64>], held: &[f64]) -> Self {
        let cumulative = per_slot
            .iter()
            .zip(held)
            .map(|(row, &h)| {
                let mut acc = 0.0;
                row.iter()
                    .map(|&e| {
                        acc += e.max(0.0);
                        (acc - h).max(0.0)
                    })
                    .collect()
            })
            .collect();
        Self { cumulative }
    }

    pub fn num_users(&self) -> usize {
        self.cumulative.len()
    }

    pub fn num_slots(&self) -> usize {
        self.cumulative.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_slots();
        for row in &self.cumulative {
            if row.len() != m {
                return Err(Error::Dimension("demand rows differ in length".into()));
            }
            let mut prev = 0.0;
            for &d in row {
                if !(d.is_finite() && d >= prev) {
                    return Err(Error::Domain("cumulative demands must be finite, nonnegative and nondecreasing".into()));
                }
                prev = d;
            }
        }
        Ok(())
    }

    /// Per-slot increments.
    pub fn increments(&self) -> Vec<Vec<f64>> {
        self.cumulative
            .iter()
            .map(|row| {
                let mut prev = 0.0;
                row.iter()
                    .map(|&d| {
                        let inc = d - prev;
                        prev = d;
                        inc
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WptSolution {
    pub covariances: Vec<CMat>,
    /// `τ Σ tr(S_i)` in joules.
    pub total_energy: f64,
    /// Multipliers of the cumulative demand constraints, `[user][slot]`.
    pub dual_certificate: Vec<Vec<f64>>,
    pub dual_value: f64,
    /// `total_energy − dual_value`.
    pub gap: f64,
    pub converged: bool,
}

/// Rank-one covariance `p h hᴴ / ‖h‖²`.
pub fn mrc_covariance(h: &CVec, p: f64) -> Result<CMat> {
    if !(p >= 0.0 && p.is_finite()) {
        return Err(Error::Domain("power must be nonnegative".into()));
    }
    let n2 = h.norm_squared();
    if n2 <= 0.0 {
        return Err(Error::Domain("zero channel".into()));
    }
    Ok(outer(h) * Complex64::new(p / n2, 0.0))
}

/// Tightest dual bound for given slot-wise multiplier tails, after scaling the
/// tails so that every slot's dual matrix stays positive semidefinite.
/// Returns `(value, cumulative multipliers)`.
pub(crate) fn wpt_dual_bound(
    tails: &[Vec<f64>],
    demands: &EnergyDemandProfile,
    channels: &[Vec<CVec>],
    eta: &[f64],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (k_n, m) = (demands.num_users(), demands.num_slots());
    // Monotone tails from nonnegative increments.
    let mut y = vec![vec![0.0; m]; k_n];
    for k in 0..k_n {
        for j in 0..m {
            let next = if j + 1 < m { tails[k][j + 1] } else { 0.0 };
            y[k][j] = (tails[k][j].max(0.0) - next.max(0.0)).max(0.0);
        }
    }
    let mut lam = vec![vec![0.0; m]; k_n];
    for k in 0..k_n {
        let mut acc = 0.0;
        for j in (0..m).rev() {
            acc += y[k][j];
            lam[k][j] = acc;
        }
    }
    let nt = channels.first().and_then(|r| r.first()).map_or(0, |h| h.len());
    let mut worst: f64 = 0.0;
    for j in 0..m {
        let mut a = CMat::zeros(nt, nt);
        let mut any = false;
        for k in 0..k_n {
            if lam[k][j] > 0.0 {
                a += outer(&channels[k][j]) * Complex64::new(lam[k][j] * eta[k], 0.0);
                any = true;
            }
        }
        if any {
            let (ev, _) = hermitian_eig(&a)?;
            worst = worst.max(*ev.last().unwrap());
        }
    }
    let shrink = if worst > 1.0 { 1.0 / worst } else { 1.0 };
    let incs = demands.increments();
    let mut value = 0.0;
    for k in 0..k_n {
        for j in 0..m {
            y[k][j] *= shrink;
            value += lam[k][j] * shrink * incs[k][j];
        }
    }
    Ok((value, y))
}

/// Minimizes `τ Σ tr(S_i)` such that every user's cumulative harvested energy
/// meets its demand profile. `tol` bounds the relative duality gap.
pub fn min_power_wpt(
    demands: &EnergyDemandProfile,
    channels: &[Vec<CVec>],
    p: &SystemParams,
    tol: f64,
) -> Result<WptSolution> {
    demands.validate()?;
    let (k_n, m) = (demands.num_users(), demands.num_slots());
    if channels.len() != k_n || channels.iter().any(|r| r.len() != m || r.iter().any(|h| h.len() != p.num_antennas)) {
        return Err(Error::Dimension("channels do not match the demand profile".into()));
    }
    if p.harvest_efficiency.len() != k_n {
        return Err(Error::Dimension("efficiencies do not match the demand profile".into()));
    }
    let incs = demands.increments();
    let carry = vec![0.0; k_n];
    let opts = BarrierOptions { rel_gap: (tol * 1e-3).clamp(1e-13, 1e-6), ..Default::default() };
    let out = solve_wpt(&incs, &carry, channels, &p.harvest_efficiency, p.slot_duration, p.num_antennas, &opts)?;
    let total_energy = p.slot_duration * out.covariances.iter().map(|s| s.trace().re).sum::<f64>();
    let mut best = wpt_dual_bound(&out.lambda, demands, channels, &p.harvest_efficiency)?;
    for tails in &out.lambda_snapshots {
        let cand = wpt_dual_bound(tails, demands, channels, &p.harvest_efficiency)?;
        if cand.0 > best.0 {
            best = cand;
        }
    }
    let (dual_value, y) = best;
    let gap = total_energy - dual_value;
    let converged = out.converged && gap <= tol * total_energy.max(f64::MIN_POSITIVE) + 1e-300;
    Ok(WptSolution { covariances: out.covariances, total_energy, dual_certificate: y, dual_value, gap, converged })
}
