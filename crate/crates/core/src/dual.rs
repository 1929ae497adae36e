//! Lagrange dual of the joint WPT/offloading problem: closed-form subproblem
//! minimizers, dual-function evaluation, supergradients, separating cuts for
//! the dual-feasible set, and an ellipsoid outer loop.
//!
//! Dual vectors are flattened as `[λ (user-major), μ (user-major), ν]`, total
//! length `2MK + M` for an `M`-slot instance.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, outer, CMat};
use crate::problem::{BitPlan, Problem};

const LN2: f64 = std::f64::consts::LN_2;

/// Multipliers of the energy (λ), user task (μ) and AP task (ν) constraints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualVariables {
    pub lambda: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub nu: Vec<f64>,
}

/// Tail sums `Σ_{j ≥ i}` of the multipliers.
#[derive(Clone, Debug, PartialEq)]
pub struct DualTailSums {
    pub lambda: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub nu: Vec<f64>,
}

fn tails(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    let mut acc = 0.0;
    for i in (0..v.len()).rev() {
        acc += v[i];
        out[i] = acc;
    }
    out
}

impl DualTailSums {
    /// AP tail sum starting at slot `j`, zero past the end.
    pub fn nu_at(&self, j: usize) -> f64 {
        self.nu.get(j).copied().unwrap_or(0.0)
    }
}

impl DualVariables {
    pub fn zeros(num_users: usize, num_slots: usize) -> Self {
        Self {
            lambda: vec![vec![0.0; num_slots]; num_users],
            mu: vec![vec![0.0; num_slots]; num_users],
            nu: vec![0.0; num_slots],
        }
    }

    pub fn num_users(&self) -> usize {
        self.lambda.len()
    }

    pub fn num_slots(&self) -> usize {
        self.nu.len()
    }

    pub fn tails(&self) -> DualTailSums {
        DualTailSums {
            lambda: self.lambda.iter().map(|v| tails(v)).collect(),
            mu: self.mu.iter().map(|v| tails(v)).collect(),
            nu: tails(&self.nu),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lambda.iter().flatten().copied().collect();
        v.extend(self.mu.iter().flatten());
        v.extend(&self.nu);
        v
    }

    pub fn from_vec(v: &[f64], num_users: usize, num_slots: usize) -> Result<Self> {
        let (k, m) = (num_users, num_slots);
        if v.len() != 2 * m * k + m {
            return Err(Error::Dimension(format!("dual vector of length {} for K={k}, M={m}", v.len())));
        }
        let block = |off: usize| (0..k).map(|u| v[off + u * m..off + (u + 1) * m].to_vec()).collect();
        Ok(Self { lambda: block(0), mu: block(m * k), nu: v[2 * m * k..].to_vec() })
    }
}

/// Edge-server bits minimizing `c0 l³ + ν̃ l` for `c0 = ζ_0 C_0³/τ²`.
pub(crate) fn mec_bits(nu_tail: f64, c0: f64) -> f64 {
    if nu_tail >= 0.0 {
        0.0
    } else {
        (-nu_tail / (3.0 * c0)).sqrt()
    }
}

/// Local bits minimizing `Λ a l³ + μ̃ l`.
pub(crate) fn loc_bits(lambda_tail: f64, mu_tail: f64, a: f64) -> f64 {
    if mu_tail >= 0.0 {
        0.0
    } else {
        (-mu_tail / (3.0 * a * lambda_tail)).sqrt()
    }
}

/// Offloaded bits minimizing `Λ β (2^{l/s} - 1) + w l` with `w = μ̃ - ν̃_next`.
pub(crate) fn off_bits(lambda_tail: f64, w: f64, beta: f64, scale: f64) -> f64 {
    let threshold = lambda_tail * beta * LN2 / scale;
    if -w <= threshold {
        0.0
    } else {
        scale * (-w / threshold).log2()
    }
}

/// Edge-server bits per slot from AP tail sums; the first slot carries none.
pub fn solve_mec_subproblem(nu_tail: &[f64], zeta0: f64, cycles0: f64, tau: f64) -> Vec<f64> {
    let c0 = zeta0 * cycles0.powi(3) / (tau * tau);
    nu_tail
        .iter()
        .enumerate()
        .map(|(i, &v)| if i == 0 { 0.0 } else { mec_bits(v, c0) })
        .collect()
}

/// Local bits of one user in one slot.
pub fn solve_loc_subproblem(lambda_tail: f64, mu_tail: f64, zeta: f64, cycles: f64, tau: f64) -> Result<f64> {
    if !(lambda_tail > 0.0) {
        return Err(Error::Domain("energy multiplier tail must be positive".into()));
    }
    Ok(loc_bits(lambda_tail, mu_tail, zeta * cycles.powi(3) / (tau * tau)))
}

/// Offloaded bits of one user in one slot; `nu_tail` is the AP tail sum
/// starting at the slot where these bits reach the AP.
pub fn solve_off_subproblem(
    lambda_tail: f64,
    mu_tail: f64,
    nu_tail: f64,
    g: &crate::linalg::CVec,
    noise_power: f64,
    bandwidth: f64,
    tau: f64,
) -> Result<f64> {
    if !(lambda_tail > 0.0) {
        return Err(Error::Domain("energy multiplier tail must be positive".into()));
    }
    let gain = g.norm_squared();
    if !(gain > 0.0) {
        return Err(Error::Domain("zero offloading channel".into()));
    }
    Ok(off_bits(lambda_tail, mu_tail - nu_tail, tau * noise_power / gain, tau * bandwidth))
}

/// Dual value and the Lagrangian minimizers at one dual point.
#[derive(Clone, Debug)]
pub struct DualEvaluation {
    pub value: f64,
    pub plan: BitPlan,
}

/// Evaluates the dual function at `dv`; the covariance part is zero on the
/// dual-feasible set.
pub fn dual_function(dv: &DualVariables, pr: &Problem) -> Result<DualEvaluation> {
    let (k_n, m) = (pr.num_users(), pr.num_slots());
    if dv.num_users() != k_n || dv.num_slots() != m {
        return Err(Error::Dimension("dual variables do not match the instance".into()));
    }
    let t = dv.tails();
    let mut plan = BitPlan::zeros(k_n, m);
    let mut value = 0.0;
    let c0 = pr.params.mec_coef();
    let s = pr.params.bits_scale();
    for j in 0..m {
        if pr.mec_active(j) {
            let l = mec_bits(t.nu[j], c0);
            plan.mec[j] = l;
            value += c0 * l.powi(3) + t.nu[j] * l;
        }
    }
    value -= t.nu_at(0) * pr.ap_backlog;
    for k in 0..k_n {
        let a = pr.local_coef(k);
        for j in 0..m {
            let (lam, mu) = (t.lambda[k][j], t.mu[k][j]);
            let loc_on = pr.loc_active(k, j);
            let off_on = pr.off_active(k, j);
            if (loc_on || off_on) && !(lam > 0.0) {
                return Err(Error::Domain(format!("energy multiplier tail {lam} at user {k}, slot {j}")));
            }
            if loc_on {
                let l = loc_bits(lam, mu, a);
                plan.local[k][j] = l;
                value += lam * a * l.powi(3) + mu * l;
            }
            if off_on {
                let beta = pr.offload_coef(k, j);
                let w = mu - t.nu_at(j + 1);
                let l = off_bits(lam, w, beta, s);
                plan.offload[k][j] = l;
                value += lam * beta * (LN2 * l / s).exp_m1() + w * l;
            }
            value -= mu * pr.available(k, j);
        }
        value -= t.lambda[k][0] * pr.energy_carry[k];
    }
    Ok(DualEvaluation { value, plan })
}

/// Supergradient of the dual function: the constraint residuals at the
/// Lagrangian minimizers `plan`.
pub fn dual_subgradient(pr: &Problem, plan: &BitPlan) -> Vec<f64> {
    let (k_n, m) = (pr.num_users(), pr.num_slots());
    let mut g = vec![0.0; 2 * m * k_n + m];
    for k in 0..k_n {
        let (mut energy, mut exec, mut arrived) = (-pr.energy_carry[k], 0.0, 0.0);
        for j in 0..m {
            energy += pr.user_energy(k, j, plan.local[k][j], plan.offload[k][j]);
            exec += plan.local[k][j] + plan.offload[k][j];
            arrived += pr.available(k, j);
            g[k * m + j] = energy;
            g[m * k_n + k * m + j] = exec - arrived;
        }
    }
    let (mut served, mut offloaded) = (0.0, pr.ap_backlog);
    for j in 0..m {
        if j > 0 {
            offloaded += (0..k_n).map(|k| plan.offload[k][j - 1]).sum::<f64>();
        }
        served += plan.mec[j];
        g[2 * m * k_n + j] = served - offloaded;
    }
    g
}

/// Kind of ellipsoid cut.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutKind {
    Sign,
    Floor,
    Psd,
    Objective,
}

impl CutKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CutKind::Sign => "sign",
            CutKind::Floor => "floor",
            CutKind::Psd => "psd",
            CutKind::Objective => "objective",
        }
    }
}

/// Half-space `normal · y <= rhs` containing the dual-feasible set and
/// excluding the current point.
#[derive(Clone, Debug)]
pub struct Cut {
    pub kind: CutKind,
    pub normal: Vec<f64>,
    pub rhs: f64,
}

/// `H̆_j = I - Σ_k Λ_{k,j} η_k h hᴴ`.
pub(crate) fn breve_h(pr: &Problem, lambda_tails: &[Vec<f64>], j: usize) -> CMat {
    let nt = pr.params.num_antennas;
    let mut h = CMat::identity(nt, nt);
    for k in 0..pr.num_users() {
        let w = lambda_tails[k][j] * pr.params.harvest_efficiency[k];
        if w != 0.0 {
            h -= outer(&pr.wpt_channels[k][j]) * num_complex::Complex64::new(w, 0.0);
        }
    }
    h
}

/// Returns the first violated dual-feasibility condition as a cut, or `None`.
pub fn feasibility_cut(dv: &DualVariables, pr: &Problem, lambda_floor: f64) -> Result<Option<Cut>> {
    let (k_n, m) = (pr.num_users(), pr.num_slots());
    let n = 2 * m * k_n + m;
    let unit = |idx: usize| {
        let mut a = vec![0.0; n];
        a[idx] = -1.0;
        Some(Cut { kind: CutKind::Sign, normal: a, rhs: 0.0 })
    };
    for k in 0..k_n {
        for j in 0..m {
            if dv.lambda[k][j] < 0.0 {
                return Ok(unit(k * m + j));
            }
        }
    }
    for k in 0..k_n {
        for j in 0..m.saturating_sub(1) {
            if dv.mu[k][j] < 0.0 {
                return Ok(unit(m * k_n + k * m + j));
            }
        }
    }
    for j in 0..m.saturating_sub(1) {
        if dv.nu[j] < 0.0 {
            return Ok(unit(2 * m * k_n + j));
        }
    }
    let t = dv.tails();
    for k in 0..k_n {
        for j in 0..m {
            if t.lambda[k][j] < lambda_floor {
                let mut a = vec![0.0; n];
                a[k * m + j..(k + 1) * m].iter_mut().for_each(|x| *x = -1.0);
                return Ok(Some(Cut { kind: CutKind::Floor, normal: a, rhs: -lambda_floor }));
            }
        }
    }
    for j in 0..m {
        let hb = breve_h(pr, &t.lambda, j);
        let (vals, vecs) = hermitian_eig(&hb)?;
        if vals[0] < 0.0 {
            let x = vecs.column(0).into_owned();
            let mut a = vec![0.0; n];
            for k in 0..k_n {
                let c = (x.adjoint() * &pr.wpt_channels[k][j])[(0, 0)].norm_sqr() * pr.params.harvest_efficiency[k];
                a[k * m + j..(k + 1) * m].iter_mut().for_each(|e| *e = c);
            }
            return Ok(Some(Cut { kind: CutKind::Psd, normal: a, rhs: 1.0 }));
        }
    }
    Ok(None)
}

/// Options of the ellipsoid outer loop.
#[derive(Clone, Debug)]
pub struct EllipsoidOptions {
    /// Starting center; defaults to small energy multipliers and zero task multipliers.
    pub initial_center: Option<DualVariables>,
    /// Radius of a starting ball; defaults to a per-coordinate box from problem scale.
    pub initial_radius: Option<f64>,
    /// Reported in the log only.
    pub lipschitz_bound: Option<f64>,
    /// Stop when the gap bound is below this fraction of the best dual value.
    pub target_accuracy: f64,
    pub max_iterations: usize,
    /// Lower bound on every energy-multiplier tail; defaults to 1e-10 of its scale.
    pub lambda_floor: Option<f64>,
    /// Iterations without improvement required before stopping.
    pub stagnation_window: usize,
}

impl Default for EllipsoidOptions {
    fn default() -> Self {
        Self {
            initial_center: None,
            initial_radius: None,
            lipschitz_bound: None,
            target_accuracy: 1e-7,
            max_iterations: 2_000_000,
            lambda_floor: None,
            stagnation_window: 50,
        }
    }
}

/// One ellipsoid iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Dual value at the center; NaN on feasibility cuts.
    pub dual_value: f64,
    /// Current upper bound minus best dual value.
    pub gap_bound: f64,
    pub cut: CutKind,
    /// Change of `ln vol` caused by this iteration's update.
    pub log_volume_change: f64,
}

#[derive(Clone, Debug)]
pub struct EllipsoidResult {
    pub dual: DualVariables,
    pub value: f64,
    pub plan: BitPlan,
    pub upper_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log: Vec<IterationRecord>,
}

/// Writes an iteration log as CSV rows `iter,dual_value,gap_bound,cut_type`.
pub fn write_iteration_log<W: Write>(log: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "dual_value", "gap_bound", "cut_type"])?;
    for r in log {
        w.write_record([
            r.iter.to_string(),
            format!("{:.9e}", r.dual_value),
            format!("{:.9e}", r.gap_bound),
            r.cut.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scale of the energy multipliers: `1 / (η max ‖h‖²)`.
pub(crate) fn lambda_scale(pr: &Problem) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..pr.num_users() {
        for h in &pr.wpt_channels[k] {
            worst = worst.max(pr.params.harvest_efficiency[k] * h.norm_squared());
        }
    }
    1.0 / worst
}

pub(crate) fn default_lambda_floor(pr: &Problem) -> f64 {
    1e-10 * lambda_scale(pr)
}

fn default_center(pr: &Problem) -> DualVariables {
    let (k_n, m) = (pr.num_users(), pr.num_slots());
    let mut dv = DualVariables::zeros(k_n, m);
    let c = 0.5 * lambda_scale(pr) / (m * k_n) as f64;
    dv.lambda.iter_mut().flatten().for_each(|x| *x = c);
    dv
}

fn default_radii(pr: &Problem) -> Vec<f64> {
    let (k_n, m) = (pr.num_users(), pr.num_slots());
    let mut r = vec![0.0; 2 * m * k_n + m];
    let mut total = pr.ap_backlog;
    let mut umax: f64 = 0.0;
    for k in 0..k_n {
        let eta = pr.params.harvest_efficiency[k];
        let mut lmax: f64 = 0.0;
        let mut run = f64::INFINITY;
        for j in 0..m {
            let bound = 1.0 / (eta * pr.wpt_channels[k][j].norm_squared());
            run = run.min(bound);
            lmax = lmax.max(bound);
            r[k * m + j] = run;
        }
        let tk = pr.total_bits(k).max(1.0);
        total += tk;
        // An extra bit can always be executed locally in the last slot.
        let marginal = 3.0 * pr.local_coef(k) * tk * tk;
        let u = 2.0 * lmax * marginal;
        umax = umax.max(u);
        r[m * k_n + k * m..m * k_n + (k + 1) * m].iter_mut().for_each(|x| *x = u);
    }
    // AP multipliers price offloaded bits, so they reach the users' scale.
    let v = (2.0 * 3.0 * pr.params.mec_coef() * total * total).max(umax);
    r[2 * m * k_n..].iter_mut().for_each(|x| *x = v.max(f64::MIN_POSITIVE));
    r
}

/// Maximizes the dual function with central-cut ellipsoid iterations.
pub fn ellipsoid_maximize(pr: &Problem, opts: &EllipsoidOptions) -> Result<EllipsoidResult> {
    pr.validate()?;
    if !(opts.target_accuracy > 0.0) || opts.initial_radius.is_some_and(|r| !(r > 0.0)) {
        return Err(Error::InvalidParameter("ellipsoid accuracy and radius must be positive".into()));
    }
    let (k_n, m) = (pr.num_users(), pr.num_slots());
    let n = 2 * m * k_n + m;
    let floor = opts.lambda_floor.unwrap_or_else(|| default_lambda_floor(pr));
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter("lambda floor must be positive".into()));
    }
    let center = opts.initial_center.clone().unwrap_or_else(|| default_center(pr));
    let mut x = center.to_vec();
    let radii = match opts.initial_radius {
        Some(r) => vec![r; n],
        None => default_radii(pr),
    };
    // P is stored dense, row-major.
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        p[i * n + i] = n as f64 * radii[i] * radii[i];
    }
    let nf = n as f64;
    let expand = nf * nf / (nf * nf - 1.0);
    let shrink = 2.0 / (nf + 1.0);
    let step_log_vol = 0.5 * (nf * (expand).ln() + (1.0 - shrink).ln());

    let mut best: Option<(f64, Vec<f64>, BitPlan)> = None;
    let mut upper = f64::INFINITY;
    let mut last_improve = 0usize;
    let mut log = Vec::new();
    let mut pa = vec![0.0; n];
    let mut converged = false;
    let mut iter = 0;
    while iter < opts.max_iterations {
        iter += 1;
        let dv = DualVariables::from_vec(&x, k_n, m)?;
        let (kind, a, value) = match feasibility_cut(&dv, pr, floor)? {
            Some(cut) => (cut.kind, cut.normal, f64::NAN),
            None => {
                let ev = dual_function(&dv, pr)?;
                let g = dual_subgradient(pr, &ev.plan);
                let gpg = quad(&p, &g, n);
                upper = upper.min(ev.value + gpg.max(0.0).sqrt());
                let improve_tol = 0.1 * opts.target_accuracy * ev.value.abs().max(f64::MIN_POSITIVE);
                match &best {
                    Some((b, _, _)) if ev.value <= *b => {}
                    Some((b, _, _)) => {
                        if ev.value - b > improve_tol {
                            last_improve = iter;
                        }
                        best = Some((ev.value, x.clone(), ev.plan));
                    }
                    None => {
                        last_improve = iter;
                        best = Some((ev.value, x.clone(), ev.plan));
                    }
                }
                if g.iter().all(|&v| v == 0.0) {
                    upper = upper.min(ev.value);
                }
                (CutKind::Objective, g.iter().map(|v| -v).collect::<Vec<_>>(), ev.value)
            }
        };
        let best_val = best.as_ref().map_or(f64::NAN, |b| b.0);
        let gap = upper - best_val;
        log.push(IterationRecord { iter, dual_value: value, gap_bound: gap, cut: kind, log_volume_change: step_log_vol });
        if best.is_some() {
            let tol = opts.target_accuracy * best_val.abs().max(f64::MIN_POSITIVE);
            if gap <= tol && iter - last_improve >= opts.stagnation_window {
                converged = true;
                break;
            }
            if gap <= 0.0 {
                converged = true;
                break;
            }
        }
        // Central-cut update.
        for i in 0..n {
            let row = &p[i * n..(i + 1) * n];
            pa[i] = row.iter().zip(&a).map(|(u, v)| u * v).sum();
        }
        let apa: f64 = pa.iter().zip(&a).map(|(u, v)| u * v).sum();
        if !(apa > 0.0) || !apa.is_finite() {
            break;
        }
        let inv = 1.0 / apa.sqrt();
        for (xi, pi) in x.iter_mut().zip(&pa) {
            *xi -= pi * inv / (nf + 1.0);
        }
        let c = shrink * inv * inv;
        for i in 0..n {
            for j in i..n {
                let v = expand * (p[i * n + j] - c * pa[i] * pa[j]);
                p[i * n + j] = v;
                p[j * n + i] = v;
            }
        }
    }
    let (value, xb, plan) = best.ok_or_else(|| Error::Solver("ellipsoid found no dual-feasible point".into()))?;
    Ok(EllipsoidResult {
        dual: DualVariables::from_vec(&xb, k_n, m)?,
        value,
        plan,
        upper_bound: upper,
        iterations: iter,
        converged,
        log,
    })
}

fn quad(p: &[f64], g: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        if g[i] == 0.0 {
            continue;
        }
        let row = &p[i * n..(i + 1) * n];
        s += g[i] * row.iter().zip(g).map(|(u, v)| u * v).sum::<f64>();
    }
    s
}

/// A coordinate of the dual vector adjusted by [`polish`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Coord {
    Mu(usize, usize),
    Nu(usize),
}

/// Makes multipliers dual feasible: clips signs, enforces the λ floor on the
/// last slot, and scales λ so every `H̆_j` is PSD.
pub(crate) fn project_feasible(pr: &Problem, dv: &mut DualVariables, floor: f64) -> Result<()> {
    let m = pr.num_slots();
    for k in 0..pr.num_users() {
        for j in 0..m {
            dv.lambda[k][j] = dv.lambda[k][j].max(0.0);
            if j + 1 < m {
                dv.mu[k][j] = dv.mu[k][j].max(0.0);
            }
        }
        dv.lambda[k][m - 1] = dv.lambda[k][m - 1].max(floor);
    }
    for j in 0..m.saturating_sub(1) {
        dv.nu[j] = dv.nu[j].max(0.0);
    }
    let t = dv.tails();
    let mut worst: f64 = 0.0;
    for j in 0..m {
        let (vals, _) = hermitian_eig(&breve_h(pr, &t.lambda, j))?;
        worst = worst.max(1.0 - vals[0]);
    }
    if worst > 1.0 {
        let s = (1.0 - 1e-12) / worst;
        dv.lambda.iter_mut().flatten().for_each(|x| *x *= s);
    }
    Ok(())
}

/// Coordinate ascent on the listed multipliers, each maximized exactly along
/// its axis by bisection on the supergradient. Sign-constrained coordinates
/// stay nonnegative.
pub(crate) fn polish(pr: &Problem, dv: &mut DualVariables, coords: &[Coord], sweeps: usize) -> Result<f64> {
    let (k_n, m) = (pr.num_users(), pr.num_slots());
    for _ in 0..sweeps {
        for &c in coords {
            let (idx, free) = match c {
                Coord::Mu(k, j) => (m * k_n + k * m + j, j + 1 == m),
                Coord::Nu(j) => (2 * m * k_n + j, j + 1 == m),
            };
            let deriv = |dv: &DualVariables, v: f64| -> Result<f64> {
                let mut d = dv.clone();
                match c {
                    Coord::Mu(k, j) => d.mu[k][j] = v,
                    Coord::Nu(j) => d.nu[j] = v,
                }
                let ev = dual_function(&d, pr)?;
                Ok(dual_subgradient(pr, &ev.plan)[idx])
            };
            let cur = match c {
                Coord::Mu(k, j) => dv.mu[k][j],
                Coord::Nu(j) => dv.nu[j],
            };
            let d0 = deriv(dv, cur)?;
            if d0 == 0.0 {
                continue;
            }
            let mut step = cur.abs().max(1e-30);
            let (mut lo, mut hi);
            if d0 > 0.0 {
                lo = cur;
                hi = cur + step;
                while deriv(dv, hi)? > 0.0 {
                    lo = hi;
                    step *= 4.0;
                    hi = cur + step;
                    if !hi.is_finite() || step > 1e300 {
                        break;
                    }
                }
            } else {
                hi = cur;
                if !free && cur <= 0.0 {
                    continue;
                }
                lo = cur - step;
                if !free {
                    lo = lo.max(0.0);
                }
                loop {
                    if !free && lo <= 0.0 {
                        lo = 0.0;
                        break;
                    }
                    if deriv(dv, lo)? >= 0.0 {
                        break;
                    }
                    hi = lo;
                    step *= 4.0;
                    lo = cur - step;
                    if !free {
                        lo = lo.max(0.0);
                    }
                    if step > 1e300 {
                        break;
                    }
                }
                if !free && lo == 0.0 && deriv(dv, 0.0)? < 0.0 {
                    hi = 0.0;
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if deriv(dv, mid)? > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            // Pick the better endpoint of the final bracket.
            let eval = |v: f64| -> Result<f64> {
                let mut d = dv.clone();
                match c {
                    Coord::Mu(k, j) => d.mu[k][j] = v,
                    Coord::Nu(j) => d.nu[j] = v,
                }
                Ok(dual_function(&d, pr)?.value)
            };
            let choice = if eval(lo)? >= eval(hi)? { lo } else { hi };
            match c {
                Coord::Mu(k, j) => dv.mu[k][j] = choice,
                Coord::Nu(j) => dv.nu[j] = choice,
            }
        }
    }
    Ok(dual_function(dv, pr)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CVec;
    use crate::model::SystemParams;
    use crate::scenario::{gen_scenario, ChannelGeometry};
    use num_complex::Complex64;

    fn inst(k: usize, n: usize, seed: u64) -> Problem {
        let mut p = SystemParams::with_defaults(k, n, 0.02);
        p.num_antennas = 2;
        let g = ChannelGeometry::uniform(k, 3.0, 3.0, -32.0, 3.0);
        let s = gen_scenario(seed, &g, 5e4, 1e5, &p).unwrap();
        Problem::offline(&s, &p).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let l = solve_mec_subproblem(&[-3.0, -3.0, 1.0], 1.0 / 3.0, 1.0, 1.0);
        assert_eq!(l[0], 0.0);
        assert!((l[1] - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(l[2], 0.0);
        assert!((solve_loc_subproblem(3.0, -3.0, 1.0 / 3.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(solve_loc_subproblem(3.0, 2.0, 1.0 / 3.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(solve_loc_subproblem(0.0, -1.0, 1.0, 1.0, 1.0).is_err());
        let a = solve_loc_subproblem(2.0, -5.0, 0.7, 2.0, 0.3).unwrap();
        let b = solve_loc_subproblem(6.0, -15.0, 0.7, 2.0, 0.3).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
        let g = CVec::from_vec(vec![Complex64::new(1.0, 0.0)]);
        assert_eq!(solve_off_subproblem(1.0, 1.0, 0.5, &g, 1.0, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn off_hand_example() {
        // σ² ln2/(B‖g‖²) = 1 and (ν̃ - μ̃)/Λ = 4 with τB = 1 gives 2 bits.
        let g = CVec::from_vec(vec![Complex64::new(1.0, 0.0)]);
        let l = solve_off_subproblem(1.0, -4.0, 0.0, &g, 1.0 / LN2, 1.0, 1.0).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
        let g2 = CVec::from_vec(vec![Complex64::new(1.5, 0.0)]);
        assert!(solve_off_subproblem(1.0, -4.0, 0.0, &g2, 1.0 / LN2, 1.0, 1.0).unwrap() > l);
    }

    #[test]
    fn closed_forms_satisfy_kkt() {
        let (lam, mu, nu, a, beta, s, c0) = (0.7, -2.3, 1.1, 0.9, 0.4, 1.7, 0.35);
        let l = loc_bits(lam, mu, a);
        assert!((3.0 * lam * a * l * l + mu).abs() < 1e-9 * mu.abs());
        let o = off_bits(lam, mu - nu, beta, s);
        let deriv = lam * beta * LN2 / s * (o / s).exp2() + (mu - nu);
        assert!(deriv.abs() < 1e-9 * (mu - nu).abs());
        let z = off_bits(lam, 0.01, beta, s);
        assert_eq!(z, 0.0);
        let v = mec_bits(-1.3, c0);
        assert!((3.0 * c0 * v * v - 1.3).abs() < 1e-12);
    }

    #[test]
    fn flatten_round_trip() {
        let pr = inst(2, 3, 1);
        let mut dv = DualVariables::zeros(2, 3);
        dv.lambda[1][2] = 4.0;
        dv.mu[0][1] = -2.0;
        dv.nu[2] = 1.5;
        let v = dv.to_vec();
        assert_eq!(v.len(), pr.dual_dim());
        assert_eq!(v[5], 4.0);
        assert_eq!(v[7], -2.0);
        assert_eq!(v[14], 1.5);
        assert_eq!(DualVariables::from_vec(&v, 2, 3).unwrap(), dv);
    }

    #[test]
    fn tiny_lambda_gives_zero() {
        let pr = inst(2, 3, 2);
        let mut dv = DualVariables::zeros(2, 3);
        let eps = default_lambda_floor(&pr);
        for k in 0..2 {
            dv.lambda[k][2] = eps;
        }
        assert!(feasibility_cut(&dv, &pr, eps).unwrap().is_none());
        let ev = dual_function(&dv, &pr).unwrap();
        assert_eq!(ev.value, 0.0);
        assert!(ev.plan.local.iter().flatten().all(|&x| x == 0.0));
        let g = dual_subgradient(&pr, &ev.plan);
        let mut cum = 0.0;
        for j in 0..3 {
            cum += pr.arrivals[0][j];
            assert!((g[6 + j] + cum).abs() < 1e-9);
        }
    }

    #[test]
    fn cuts() {
        let pr = inst(2, 3, 3);
        let eps = default_lambda_floor(&pr);
        let mut dv = default_center(&pr);
        dv.mu[1][0] = -1.0;
        let c = feasibility_cut(&dv, &pr, eps).unwrap().unwrap();
        assert_eq!(c.kind, CutKind::Sign);
        assert_eq!(c.normal[6 + 3], -1.0);
        let mut dv = default_center(&pr);
        dv.lambda.iter_mut().flatten().for_each(|x| *x = 10.0 * lambda_scale(&pr));
        let c = feasibility_cut(&dv, &pr, eps).unwrap().unwrap();
        assert_eq!(c.kind, CutKind::Psd);
        let x = dv.to_vec();
        let lhs: f64 = c.normal.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!(lhs > c.rhs);
        // Feasible points satisfy the cut.
        let y = default_center(&pr).to_vec();
        let lhs_y: f64 = c.normal.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!(lhs_y <= c.rhs);
        // The free last-slot multipliers never trigger a sign cut.
        let mut dv = default_center(&pr);
        dv.mu[0][2] = -5.0;
        dv.nu[2] = -5.0;
        assert!(feasibility_cut(&dv, &pr, eps).unwrap().is_none());
    }

    #[test]
    fn dual_is_concave_on_segments() {
        let pr = inst(2, 3, 4);
        let s = lambda_scale(&pr);
        let mut a = default_center(&pr);
        let mut b = default_center(&pr);
        for k in 0..2 {
            for j in 0..3 {
                a.mu[k][j] = -1e-7 * (j as f64 + 1.0);
                b.mu[k][j] = -3e-7 * (k as f64 + 1.0);
                b.lambda[k][j] = 0.2 * s / 6.0;
            }
        }
        a.nu = vec![0.0, 1e-8, -2e-7];
        b.nu = vec![0.0, 0.0, -5e-8];
        let (va, vb) = (dual_function(&a, &pr).unwrap().value, dual_function(&b, &pr).unwrap().value);
        let mid = DualVariables::from_vec(
            &a.to_vec().iter().zip(b.to_vec()).map(|(x, y)| 0.5 * (x + y)).collect::<Vec<_>>(),
            2,
            3,
        )
        .unwrap();
        let vm = dual_function(&mid, &pr).unwrap().value;
        assert!(vm >= 0.5 * (va + vb) - 1e-9 * va.abs().max(vb.abs()));
    }

    #[test]
    fn subgradient_finite_difference() {
        let pr = inst(1, 3, 5);
        let mut dv = default_center(&pr);
        dv.mu[0] = vec![1e-7, 2e-7, -8e-7];
        dv.nu = vec![0.0, 1e-7, -4e-7];
        let ev = dual_function(&dv, &pr).unwrap();
        let g = dual_subgradient(&pr, &ev.plan);
        let x = dv.to_vec();
        for idx in 0..x.len() {
            let h = 1e-6 * x[idx].abs().max(1e-12);
            let mut y = x.clone();
            y[idx] += h;
            let d = DualVariables::from_vec(&y, 1, 3).unwrap();
            let gv = dual_function(&d, &pr).unwrap().value;
            let fd = (gv - ev.value) / h;
            assert!(fd <= g[idx] + 1e-4 * g[idx].abs().max(1e-3), "coord {idx}: fd {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn ellipsoid_volume_factor() {
        for n in [3usize, 5, 15, 90, 300] {
            let nf = n as f64;
            let d = 0.5 * (nf * (nf * nf / (nf * nf - 1.0)).ln() + (1.0 - 2.0 / (nf + 1.0)).ln());
            assert!(d < -1.0 / (2.0 * (nf + 1.0)));
        }
    }
}
