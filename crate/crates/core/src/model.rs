//! Domain types, energy functions, the total objective and the exact
//! feasibility checker of the offline energy-minimization problem.
//!
//! Slots are indexed from 0 in code; slot `0` is the first slot of the horizon
//! and slot `N - 1` the last.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_asymmetry, min_eigenvalue, quad_form, CMat, CVec};

/// Physical constants of the system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub num_users: usize,
    pub num_slots: usize,
    pub num_antennas: usize,
    /// Slot length τ in seconds.
    pub slot_duration: f64,
    /// Per-user bandwidth B in Hz.
    pub bandwidth: f64,
    /// Receiver noise power σ² in watts.
    pub noise_power: f64,
    /// SNR gap Γ; must be 1.
    pub snr_penalty: f64,
    pub harvest_efficiency: Vec<f64>,
    pub user_capacitance: Vec<f64>,
    pub ap_capacitance: f64,
    pub user_cycles_per_bit: Vec<f64>,
    pub ap_cycles_per_bit: f64,
}

impl SystemParams {
    /// Table-of-defaults constructor: η = 0.3, ζ_k = 1e-28, ζ_0 = 1e-29,
    /// C_k = C_0 = 1e3, σ² = 1e-9 W, B = 2 MHz, N_t = 4.
    pub fn with_defaults(num_users: usize, num_slots: usize, slot_duration: f64) -> Self {
        Self {
            num_users,
            num_slots,
            num_antennas: 4,
            slot_duration,
            bandwidth: 2e6,
            noise_power: 1e-9,
            snr_penalty: 1.0,
            harvest_efficiency: vec![0.3; num_users],
            user_capacitance: vec![1e-28; num_users],
            ap_capacitance: 1e-29,
            user_cycles_per_bit: vec![1e3; num_users],
            ap_cycles_per_bit: 1e3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.num_users == 0 || self.num_slots == 0 || self.num_antennas == 0 {
            return bad("dimensions must be positive");
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.slot_duration) || !positive(self.bandwidth) || !positive(self.noise_power) {
            return bad("slot duration, bandwidth and noise power must be positive");
        }
        if self.snr_penalty != 1.0 {
            return bad("snr penalty is fixed to 1");
        }
        if !positive(self.ap_capacitance) || !positive(self.ap_cycles_per_bit) {
            return bad("AP constants must be positive");
        }
        for v in [&self.harvest_efficiency, &self.user_capacitance, &self.user_cycles_per_bit] {
            if v.len() != self.num_users {
                return Err(Error::Dimension("per-user parameter length differs from K".into()));
            }
            if !v.iter().all(|&x| positive(x)) {
                return bad("per-user constants must be positive");
            }
        }
        if self.harvest_efficiency.iter().any(|&e| e > 1.0) {
            return bad("harvest efficiency above 1");
        }
        Ok(())
    }

    /// Cubic coefficient `ζ_k C_k³ / τ²` of user `k`'s local energy.
    pub fn local_coef(&self, k: usize) -> f64 {
        self.user_capacitance[k] * self.user_cycles_per_bit[k].powi(3) / self.slot_duration.powi(2)
    }

    /// Cubic coefficient `ζ_0 C_0³ / τ²` of the edge server's energy.
    pub fn mec_coef(&self) -> f64 {
        self.ap_capacitance * self.ap_cycles_per_bit.powi(3) / self.slot_duration.powi(2)
    }

    /// Bits per slot at unit spectral efficiency, `τ B`.
    pub fn bits_scale(&self) -> f64 {
        self.slot_duration * self.bandwidth
    }

    /// Offload energy prefactor `τ Γ σ² / ‖g‖²`.
    pub fn offload_coef(&self, g: &CVec) -> f64 {
        self.slot_duration * self.snr_penalty * self.noise_power / g.norm_squared()
    }
}

/// Ground-truth arrivals and channels, indexed `[user][slot]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub arrivals: Vec<Vec<f64>>,
    pub wpt_channels: Vec<Vec<CVec>>,
    pub offload_channels: Vec<Vec<CVec>>,
}

impl Scenario {
    pub fn num_users(&self) -> usize {
        self.arrivals.len()
    }

    pub fn num_slots(&self) -> usize {
        self.arrivals.first().map_or(0, Vec::len)
    }

    /// Checks dimensions against `p`, nonnegative arrivals and nonzero channels.
    pub fn validate(&self, p: &SystemParams) -> Result<()> {
        let (k, n) = (p.num_users, p.num_slots);
        let shape_ok = |lens: Vec<usize>| lens.len() == k && lens.iter().all(|&l| l == n);
        if !shape_ok(self.arrivals.iter().map(Vec::len).collect())
            || !shape_ok(self.wpt_channels.iter().map(Vec::len).collect())
            || !shape_ok(self.offload_channels.iter().map(Vec::len).collect())
        {
            return Err(Error::Dimension(format!("scenario is not {k}x{n}")));
        }
        for chans in [&self.wpt_channels, &self.offload_channels] {
            for h in chans.iter().flatten() {
                if h.len() != p.num_antennas {
                    return Err(Error::Dimension("channel length differs from N_t".into()));
                }
                if !(h.norm_squared() > 0.0) {
                    return Err(Error::Domain("zero channel vector".into()));
                }
            }
        }
        if self.arrivals.iter().flatten().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::Domain("arrivals must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn total_arrivals(&self) -> f64 {
        self.arrivals.iter().flatten().sum()
    }
}

/// Decision variables: per-slot covariances and bit splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub covariances: Vec<CMat>,
    pub mec_bits: Vec<f64>,
    pub local_bits: Vec<Vec<f64>>,
    pub offload_bits: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn zeros(num_users: usize, num_slots: usize, num_antennas: usize) -> Self {
        Self {
            covariances: vec![CMat::zeros(num_antennas, num_antennas); num_slots],
            mec_bits: vec![0.0; num_slots],
            local_bits: vec![vec![0.0; num_slots]; num_users],
            offload_bits: vec![vec![0.0; num_slots]; num_users],
        }
    }

    pub fn num_slots(&self) -> usize {
        self.covariances.len()
    }

    fn check_dims(&self, p: &SystemParams) -> Result<()> {
        let n = p.num_slots;
        let ok = self.covariances.len() == n
            && self.mec_bits.len() == n
            && self.local_bits.len() == p.num_users
            && self.offload_bits.len() == p.num_users
            && self.local_bits.iter().chain(&self.offload_bits).all(|v| v.len() == n)
            && self
                .covariances
                .iter()
                .all(|s| s.nrows() == p.num_antennas && s.ncols() == p.num_antennas);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("allocation does not match system parameters".into()))
        }
    }
}

/// Local computing energy `ζ C³ l³ / τ²`.
pub fn local_energy(l: f64, zeta: f64, cycles: f64, tau: f64) -> Result<f64> {
    if !(l >= 0.0) {
        return Err(Error::Domain(format!("negative bit count {l}")));
    }
    Ok(zeta * cycles.powi(3) * l.powi(3) / (tau * tau))
}

/// Offloading energy `τ σ² (2^{l/(τB)} - 1) / ‖g‖²`.
pub fn offload_energy(l: f64, g: &CVec, noise_power: f64, bandwidth: f64, tau: f64) -> Result<f64> {
    if !(l >= 0.0) {
        return Err(Error::Domain(format!("negative bit count {l}")));
    }
    let gain = g.norm_squared();
    if !(gain > 0.0) {
        return Err(Error::Domain("zero offloading channel".into()));
    }
    Ok(offload_energy_coef(l, tau * noise_power / gain, tau * bandwidth))
}

/// Offload energy with precomputed prefactor, `coef · (2^{l/scale} - 1)`.
pub(crate) fn offload_energy_coef(l: f64, coef: f64, scale: f64) -> f64 {
    coef * (std::f64::consts::LN_2 * l / scale).exp_m1()
}

/// Energy harvested by a user: `τ η hᴴ S h`.
pub fn harvested_energy(s: &CMat, h: &CVec, eta: f64, tau: f64) -> Result<f64> {
    let scale = s.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if hermitian_asymmetry(s) > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain("covariance is not Hermitian".into()));
    }
    Ok(tau * eta * quad_form(s, h))
}

/// Edge-server computing energy `ζ_0 C_0³ l³ / τ²`.
pub fn mec_energy(l: f64, zeta0: f64, cycles0: f64, tau: f64) -> Result<f64> {
    local_energy(l, zeta0, cycles0, tau)
}

/// Total AP energy: transmit energy plus edge computing energy.
pub fn total_objective(alloc: &Allocation, p: &SystemParams) -> Result<f64> {
    if alloc.covariances.len() != alloc.mec_bits.len() {
        return Err(Error::Dimension("covariance and MEC series lengths differ".into()));
    }
    if alloc.covariances.iter().any(|s| s.nrows() != p.num_antennas) {
        return Err(Error::Dimension("covariance size differs from N_t".into()));
    }
    let mut total = 0.0;
    for (s, &l) in alloc.covariances.iter().zip(&alloc.mec_bits) {
        total += p.slot_duration * s.trace().re;
        total += mec_energy(l.max(0.0), p.ap_capacitance, p.ap_cycles_per_bit, p.slot_duration)?;
    }
    Ok(total)
}

/// Relative tolerances for [`check_feasibility`].
///
/// Bit constraints are scaled by the total arrival volume, energy constraints
/// by the largest cumulative consumption, PSD by the largest trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub relative: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { relative: 1e-6 }
    }
}

/// Worst violation per constraint family.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub energy_harvesting: f64,
    pub user_task_causality: f64,
    pub user_deadline: f64,
    pub ap_task_causality: f64,
    pub ap_deadline: f64,
    pub nonnegativity: f64,
    pub psd: f64,
    pub feasible: bool,
}

/// Per-user cumulative consumed and harvested energy, `[user][slot]`.
pub fn energy_ledger(alloc: &Allocation, scen: &Scenario, p: &SystemParams) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (k_n, n) = (p.num_users, p.num_slots);
    let mut used = vec![vec![0.0; n]; k_n];
    let mut got = vec![vec![0.0; n]; k_n];
    for k in 0..k_n {
        let (mut cu, mut ch) = (0.0, 0.0);
        for i in 0..n {
            let l = alloc.local_bits[k][i].max(0.0);
            let o = alloc.offload_bits[k][i].max(0.0);
            cu += p.local_coef(k) * l.powi(3)
                + offload_energy_coef(o, p.offload_coef(&scen.offload_channels[k][i]), p.bits_scale());
            ch += p.slot_duration
                * p.harvest_efficiency[k]
                * quad_form(&alloc.covariances[i], &scen.wpt_channels[k][i]);
            used[k][i] = cu;
            got[k][i] = ch;
        }
    }
    (used, got)
}

/// Evaluates every constraint of the offline problem and reports the worst
/// violation per family.
pub fn check_feasibility(
    alloc: &Allocation,
    scen: &Scenario,
    p: &SystemParams,
    tol: &Tolerances,
) -> FeasibilityReport {
    let mut rep = FeasibilityReport::default();
    if alloc.check_dims(p).is_err() || scen.validate(p).is_err() {
        rep.nonnegativity = f64::INFINITY;
        return rep;
    }
    let (k_n, n) = (p.num_users, p.num_slots);

    let (used, got) = energy_ledger(alloc, scen, p);
    let mut energy_scale: f64 = 0.0;
    for k in 0..k_n {
        energy_scale = energy_scale.max(used[k][n - 1]);
        for i in 0..n {
            rep.energy_harvesting = rep.energy_harvesting.max(used[k][i] - got[k][i]);
        }
    }

    let mut neg: f64 = 0.0;
    for k in 0..k_n {
        let (mut arrived, mut executed) = (0.0, 0.0);
        for i in 0..n {
            arrived += scen.arrivals[k][i];
            executed += alloc.local_bits[k][i] + alloc.offload_bits[k][i];
            neg = neg.max(-alloc.local_bits[k][i]).max(-alloc.offload_bits[k][i]);
            if i + 1 < n {
                rep.user_task_causality = rep.user_task_causality.max(executed - arrived);
            }
        }
        let deadline = arrived - (executed - alloc.offload_bits[k][n - 1]);
        rep.user_deadline = rep.user_deadline.max(deadline.abs());
        neg = neg.max(alloc.offload_bits[k][n - 1].abs());
    }

    let (mut offloaded, mut served) = (0.0, 0.0);
    for i in 0..n {
        served += alloc.mec_bits[i];
        neg = neg.max(-alloc.mec_bits[i]);
        if i + 1 < n {
            rep.ap_task_causality = rep.ap_task_causality.max(served - offloaded);
        }
        if i + 1 < n {
            offloaded += alloc.offload_bits.iter().map(|v| v[i]).sum::<f64>();
        }
    }
    rep.ap_deadline = (offloaded - served).abs();
    neg = neg.max(alloc.mec_bits[0].abs());
    rep.nonnegativity = neg.max(0.0);

    let mut trace_scale: f64 = 0.0;
    for s in &alloc.covariances {
        trace_scale = trace_scale.max(s.trace().re.abs());
        let asym = hermitian_asymmetry(s);
        let min_eig = if asym <= 1e-10 * s.norm().max(f64::MIN_POSITIVE) {
            min_eigenvalue(s).unwrap_or(f64::NEG_INFINITY)
        } else {
            f64::NEG_INFINITY
        };
        rep.psd = rep.psd.max(-min_eig).max(0.0);
    }

    let bits_tol = tol.relative * scen.total_arrivals().max(1.0);
    let energy_tol = tol.relative * energy_scale.max(f64::MIN_POSITIVE);
    let psd_tol = tol.relative * trace_scale.max(f64::MIN_POSITIVE);
    rep.energy_harvesting = rep.energy_harvesting.max(0.0);
    rep.user_task_causality = rep.user_task_causality.max(0.0);
    rep.ap_task_causality = rep.ap_task_causality.max(0.0);
    rep.feasible = rep.energy_harvesting <= energy_tol
        && rep.user_task_causality <= bits_tol
        && rep.user_deadline <= bits_tol
        && rep.ap_task_causality <= bits_tol
        && rep.ap_deadline <= bits_tol
        && rep.nonnegativity <= bits_tol
        && rep.psd <= psd_tol;
    rep
}
