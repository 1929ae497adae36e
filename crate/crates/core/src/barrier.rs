//! Primal log-barrier interior-point solver for the joint WPT/offloading
//! problem and for its covariance-only subproblem.
//!
//! Equality constraints are eliminated through backlog states: user backlogs
//! `q_{k,j}` and the AP backlog `z_j` after each slot are the variables, and
//! executed bits are differences of consecutive backlogs. Per-slot energy
//! budgets use a nonnegative battery level `b_{k,j}`. Each covariance is
//! restricted to the span of the channels that slot serves and parametrized
//! by real coordinates in a Hermitian basis. The resulting Newton systems have
//! a narrow envelope when variables are ordered by slot, and are factored with
//! [`Skyline`].

use num_complex::Complex64;

use crate::dual::{DualVariables};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_cholesky, hermitian_inverse_logdet, span_basis, CMat, CVec, Skyline};
use crate::problem::{min_energy_split, BitPlan, Problem};

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Kind {
    /// `scale · u³`
    Cube,
    /// `scale · (e^{rate u} - 1)`
    Exp(f64),
}

/// Nonlinear term `φ(c + Σ coef_i x_{idx_i})`.
#[derive(Clone, Debug)]
pub(crate) struct Term {
    kind: Kind,
    scale: f64,
    idx: Vec<usize>,
    coef: Vec<f64>,
    c: f64,
}

impl Term {
    #[inline]
    fn arg(&self, x: &[f64], map: &[usize]) -> f64 {
        self.c + self.idx.iter().zip(&self.coef).map(|(&i, a)| a * x[map[i]]).sum::<f64>()
    }

    /// Value, first and second derivative in the argument.
    #[inline]
    fn eval(&self, u: f64) -> (f64, f64, f64) {
        match self.kind {
            Kind::Cube => (self.scale * u * u * u, 3.0 * self.scale * u * u, 6.0 * self.scale * u),
            Kind::Exp(r) => {
                let e = (r * u).exp();
                (self.scale * (r * u).exp_m1(), self.scale * r * e, self.scale * r * r * e)
            }
        }
    }
}

/// Affine expression over global variable indices.
#[derive(Clone, Debug, Default)]
pub(crate) struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub c: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), c }
    }

    pub fn add_var(&mut self, i: Option<usize>, coef: f64) {
        if let Some(i) = i {
            self.terms.push((i, coef));
        }
    }

    pub fn add(&mut self, other: &Affine, scale: f64) {
        self.terms.extend(other.terms.iter().map(|&(i, a)| (i, a * scale)));
        self.c += other.c * scale;
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, a)| a == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.c + self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>()
    }
}

/// Constraint `lin(x) + Σ terms(x) < 0` stored over its local support.
#[derive(Clone, Debug)]
struct Constraint {
    support: Vec<usize>,
    lin: Vec<f64>,
    c: f64,
    terms: Vec<Term>,
}

impl Constraint {
    fn new(lin: &Affine, terms: Vec<(Kind, f64, Affine)>) -> Self {
        let mut support: Vec<usize> = lin.terms.iter().map(|t| t.0).collect();
        for (_, _, a) in &terms {
            support.extend(a.terms.iter().map(|t| t.0));
        }
        support.sort_unstable();
        support.dedup();
        let local = |i: usize| support.binary_search(&i).unwrap();
        let mut lv = vec![0.0; support.len()];
        for &(i, a) in &lin.terms {
            lv[local(i)] += a;
        }
        let terms = terms
            .into_iter()
            .map(|(kind, scale, a)| Term {
                kind,
                scale,
                idx: a.terms.iter().map(|t| local(t.0)).collect(),
                coef: a.terms.iter().map(|t| t.1).collect(),
                c: a.c,
            })
            .collect();
        Self { c: lin.c, lin: lv, support, terms }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.c + self.support.iter().zip(&self.lin).map(|(&i, a)| a * x[i]).sum::<f64>();
        for t in &self.terms {
            v += t.eval(t.arg(x, &self.support)).0;
        }
        v
    }
}

/// Convex program: minimize `obj_lin · x + Σ obj_terms` subject to
/// constraints `< 0` and Hermitian blocks `≻ 0`.
#[derive(Clone, Debug, Default)]
pub(crate) struct Program {
    n: usize,
    obj_lin: Vec<f64>,
    obj_terms: Vec<Term>,
    cons: Vec<Constraint>,
    psd: Vec<(usize, usize)>,
    /// Slot tag of every variable, used to order the Newton system.
    tags: Vec<usize>,
    /// Tag given to newly created variables.
    pub tag: usize,
}

impl Program {
    pub fn add_var(&mut self) -> usize {
        self.n += 1;
        self.obj_lin.push(0.0);
        self.tags.push(self.tag);
        self.n - 1
    }

    /// Allocates `r²` coordinates of an `r × r` Hermitian block kept positive definite.
    pub fn add_psd_block(&mut self, r: usize) -> usize {
        let off = self.n;
        for _ in 0..r * r {
            self.add_var();
        }
        self.psd.push((off, r));
        off
    }

    pub fn add_constraint(&mut self, lin: &Affine, terms: Vec<(Kind, f64, Affine)>) -> usize {
        self.cons.push(Constraint::new(lin, terms));
        self.cons.len() - 1
    }

    /// Adds `expr > 0`.
    pub fn add_positive(&mut self, expr: &Affine) -> usize {
        let mut neg = Affine::default();
        neg.add(expr, -1.0);
        self.add_constraint(&neg, Vec::new())
    }

    pub fn add_objective_linear(&mut self, i: usize, c: f64) {
        self.obj_lin[i] += c;
    }

    pub fn add_objective_term(&mut self, kind: Kind, scale: f64, a: &Affine) {
        let map: Vec<usize> = a.terms.iter().map(|t| t.0).collect();
        self.obj_terms.push(Term {
            kind,
            scale,
            idx: map,
            coef: a.terms.iter().map(|t| t.1).collect(),
            c: a.c,
        });
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let mut v: f64 = self.obj_lin.iter().zip(x).map(|(a, b)| a * b).sum();
        for t in &self.obj_terms {
            let u = t.c + t.idx.iter().zip(&t.coef).map(|(&i, a)| a * x[i]).sum::<f64>();
            v += t.eval(u).0;
        }
        v
    }

    fn envelope(&self) -> Vec<usize> {
        let mut first: Vec<usize> = (0..self.n).collect();
        let mut touch = |ids: &mut dyn Iterator<Item = usize>| {
            let ids: Vec<usize> = ids.collect();
            if let Some(&mn) = ids.iter().min() {
                for &i in &ids {
                    first[i] = first[i].min(mn);
                }
            }
        };
        for c in &self.cons {
            touch(&mut c.support.iter().copied());
        }
        for t in &self.obj_terms {
            touch(&mut t.idx.iter().copied());
        }
        for &(off, r) in &self.psd {
            touch(&mut (off..off + r * r));
        }
        first
    }

    fn barrier_degree(&self) -> f64 {
        (self.cons.len() + self.psd.iter().map(|b| b.1).sum::<usize>()) as f64
    }

    /// Barrier-augmented objective, or `None` outside the domain.
    fn psi(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut v = 0.0;
        for c in &self.cons {
            let f = c.value(x);
            if !(f < 0.0) || !f.is_finite() {
                return None;
            }
            v -= (-f).ln();
        }
        for &(off, r) in &self.psd {
            let m = herm_from(&x[off..off + r * r], r);
            let l = hermitian_cholesky(&m)?;
            v -= 2.0 * (0..r).map(|i| l[(i, i)].re.ln()).sum::<f64>();
        }
        let f0 = self.objective(x);
        if !f0.is_finite() {
            return None;
        }
        Some(v + t * f0)
    }
}

/// Hermitian matrix from coordinates: diagonal first, then `(re, im)` of each
/// strictly upper entry in row-major order.
pub(crate) fn herm_from(x: &[f64], r: usize) -> CMat {
    let mut m = CMat::zeros(r, r);
    for p in 0..r {
        m[(p, p)] = Complex64::new(x[p], 0.0);
    }
    let mut a = r;
    for p in 0..r {
        for q in (p + 1)..r {
            let z = Complex64::new(x[a], x[a + 1]);
            m[(p, q)] = z;
            m[(q, p)] = z.conj();
            a += 2;
        }
    }
    m
}

/// `tr(M B_a)` for every basis element `B_a` of [`herm_from`].
pub(crate) fn herm_coeffs(m: &CMat) -> Vec<f64> {
    let r = m.nrows();
    let mut out = Vec::with_capacity(r * r);
    for p in 0..r {
        out.push(m[(p, p)].re);
    }
    for p in 0..r {
        for q in (p + 1)..r {
            let z = m[(p, q)];
            out.push(2.0 * z.re);
            out.push(2.0 * z.im);
        }
    }
    out
}

fn herm_basis(a: usize, r: usize) -> CMat {
    let mut e = vec![0.0; r * r];
    e[a] = 1.0;
    herm_from(&e, r)
}

#[derive(Clone, Debug)]
pub struct BarrierOptions {
    /// Stop when the barrier duality-gap bound is below this fraction of the objective.
    pub rel_gap: f64,
    /// Factor by which the barrier weight grows per outer iteration.
    pub growth: f64,
    pub max_newton: usize,
    /// Multipliers are read at the first centered point whose gap bound is
    /// below this fraction of the objective; later points lose precision.
    pub dual_gap: f64,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { rel_gap: 1e-10, growth: 30.0, max_newton: 2000, dual_gap: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BarrierOutput {
    pub x: Vec<f64>,
    /// Constraint multipliers in objective units.
    pub multipliers: Vec<f64>,
    /// Multipliers at every later centered point with a gap bound below 1e-5.
    pub snapshots: Vec<Vec<f64>>,
    pub newton_steps: usize,
    pub converged: bool,
}

/// Minimizes a [`Program`] from a strictly feasible starting point.
pub(crate) fn solve_program(prog: &Program, x0: Vec<f64>, opts: &BarrierOptions) -> Result<BarrierOutput> {
    let n = prog.n;
    let mut x = x0;
    if prog.psi(&x, 1.0).is_none() {
        return Err(Error::Solver("barrier start point is not strictly feasible".into()));
    }
    let degree = prog.barrier_degree();
    let f_start = prog.objective(&x).abs().max(f64::MIN_POSITIVE);
    let mut t = degree.max(1.0) / f_start;
    let mut sky = Skyline::new(prog.envelope());
    let mut grad = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut steps = 0usize;
    let mut converged = false;
    let linear: Vec<bool> = prog.cons.iter().map(|c| c.terms.is_empty()).collect();
    let mut gl: Vec<f64> = Vec::new();
    let mut multipliers = None;
    let mut snapshots = Vec::new();

    'outer: loop {
        // Centering.
        for _inner in 0..200 {
            if steps >= opts.max_newton {
                break 'outer;
            }
            steps += 1;
            assemble(prog, &x, t, &mut sky, &mut grad, &mut gl)?;
            let diag = sky.diagonal();
            let mut reg = 0.0;
            let mut fact = sky.clone();
            while !fact.factor() {
                let dmax = diag.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
                if !dmax.is_finite() {
                    return Err(Error::Solver("non-finite Newton system".into()));
                }
                reg = if reg == 0.0 { 1e-14 * dmax.max(1e-300) } else { reg * 100.0 };
                fact = sky.clone();
                for i in 0..n {
                    fact.add(i, i, reg + 1e-14 * diag[i].abs());
                }
                if reg > 1e10 * dmax.max(1e-300) {
                    return Err(Error::Solver("Newton system could not be factored".into()));
                }
            }
            dx.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
            fact.solve(&mut dx);
            let dec: f64 = -grad.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>();
            if !dec.is_finite() {
                return Err(Error::Solver("non-finite Newton decrement".into()));
            }
            let psi0 = prog.psi(&x, t).unwrap_or(f64::INFINITY);
            // Below the rounding level of psi no step can be verified.
            if dec * 0.5 <= 1e-11 || (multipliers.is_some() && dec * 0.5 <= 1e-15 * psi0.abs()) {
                break;
            }
            // Largest step keeping linear constraints strictly satisfied.
            let mut amax: f64 = 1.0;
            for (c, &lin) in prog.cons.iter().zip(&linear) {
                if !lin {
                    continue;
                }
                let slope: f64 = c.support.iter().zip(&c.lin).map(|(&i, a)| a * dx[i]).sum();
                if slope > 0.0 {
                    let f = c.value(&x);
                    amax = amax.min(-f / slope);
                }
            }
            let mut alpha = if amax < 1.0 { 0.99 * amax } else { 1.0 };
            let slope = grad.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>();
            let mut xn = vec![0.0; n];
            let mut accepted = false;
            let mut stalled = false;
            for _ in 0..80 {
                for i in 0..n {
                    xn[i] = x[i] + alpha * dx[i];
                }
                if let Some(p) = prog.psi(&xn, t) {
                    if p <= psi0 + 0.01 * alpha * slope {
                        accepted = true;
                        break;
                    }
                    // Decrease below rounding of psi: take the step and stop centering.
                    if dec < 1e-6 && p <= psi0 + 1e-9 * psi0.abs() {
                        accepted = true;
                        stalled = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            std::mem::swap(&mut x, &mut xn);
            if stalled {
                break;
            }
        }
        // The floor covers instances whose optimal value is zero.
        let f0 = prog.objective(&x).abs().max(1e-6 * f_start);
        if degree / t <= 1e-5 * f0 {
            snapshots.push(read_multipliers(prog, &x, t));
        }
        if multipliers.is_none() && degree / t <= opts.dual_gap * f0 {
            multipliers = Some(read_multipliers(prog, &x, t));
        }
        if degree / t <= opts.rel_gap * f0 || degree == 0.0 {
            converged = true;
            break;
        }
        t *= opts.growth;
    }
    let multipliers = multipliers.unwrap_or_else(|| read_multipliers(prog, &x, t));
    Ok(BarrierOutput { x, multipliers, snapshots, newton_steps: steps, converged })
}

fn read_multipliers(prog: &Program, x: &[f64], t: f64) -> Vec<f64> {
    prog.cons.iter().map(|c| 1.0 / (t * -c.value(x))).collect()
}

fn assemble(prog: &Program, x: &[f64], t: f64, sky: &mut Skyline, grad: &mut [f64], gl: &mut Vec<f64>) -> Result<()> {
    sky.clear();
    for (g, a) in grad.iter_mut().zip(&prog.obj_lin) {
        *g = t * a;
    }
    for term in &prog.obj_terms {
        let u = term.c + term.idx.iter().zip(&term.coef).map(|(&i, a)| a * x[i]).sum::<f64>();
        let (_, d1, d2) = term.eval(u);
        for (p, (&i, &ai)) in term.idx.iter().zip(&term.coef).enumerate() {
            grad[i] += t * d1 * ai;
            for (&j, &aj) in term.idx[..=p].iter().zip(&term.coef) {
                sky.add(i, j, t * d2 * ai * aj);
            }
        }
    }
    for c in &prog.cons {
        let s = c.support.len();
        gl.clear();
        gl.extend_from_slice(&c.lin);
        let mut f = c.c + c.support.iter().zip(&c.lin).map(|(&i, a)| a * x[i]).sum::<f64>();
        let mut curv: Vec<(usize, f64)> = Vec::new();
        for (ti, term) in c.terms.iter().enumerate() {
            let u = term.arg(x, &c.support);
            let (v, d1, d2) = term.eval(u);
            f += v;
            for (&li, &a) in term.idx.iter().zip(&term.coef) {
                gl[li] += d1 * a;
            }
            curv.push((ti, d2));
        }
        if !(f < 0.0) {
            return Err(Error::Solver("iterate left the barrier domain".into()));
        }
        let d = -1.0 / f;
        for p in 0..s {
            let gp = gl[p];
            grad[c.support[p]] += d * gp;
            if gp != 0.0 {
                for q in 0..=p {
                    let v = d * d * gp * gl[q];
                    if v != 0.0 {
                        sky.add(c.support[p], c.support[q], v);
                    }
                }
            }
        }
        for (ti, d2) in curv {
            let term = &c.terms[ti];
            for (p, (&li, &ai)) in term.idx.iter().zip(&term.coef).enumerate() {
                for (&lj, &aj) in term.idx[..=p].iter().zip(&term.coef) {
                    sky.add(c.support[li], c.support[lj], d * d2 * ai * aj);
                }
            }
        }
    }
    for &(off, r) in &prog.psd {
        let m = herm_from(&x[off..off + r * r], r);
        let (w, _) = hermitian_inverse_logdet(&m).ok_or_else(|| Error::Solver("covariance block lost definiteness".into()))?;
        let gw = herm_coeffs(&w);
        for a in 0..r * r {
            grad[off + a] -= gw[a];
        }
        for a in 0..r * r {
            let wbw = &w * herm_basis(a, r) * &w;
            let h = herm_coeffs(&wbw);
            for b in 0..=a {
                sky.add(off + a, off + b, h[b]);
            }
        }
    }
    Ok(())
}

/// Covariance block of one slot: orthonormal basis of the served channels and
/// a power scale.
#[derive(Clone, Debug)]
struct CovBlock {
    basis: CMat,
    offset: usize,
    scale: f64,
}

impl CovBlock {
    fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Coefficients of `hᴴ S h` in the block coordinates.
    fn harvest_coeffs(&self, h: &CVec) -> Vec<f64> {
        let hh = self.basis.adjoint() * h;
        herm_coeffs(&(&hh * hh.adjoint())).into_iter().map(|c| c * self.scale).collect()
    }

    fn covariance(&self, x: &[f64]) -> CMat {
        let r = self.rank();
        let xm = herm_from(&x[self.offset..self.offset + r * r], r) * Complex64::new(self.scale, 0.0);
        let s = &self.basis * xm * self.basis.adjoint();
        (&s + s.adjoint()) * Complex64::new(0.5, 0.0)
    }
}

fn identity_coords(r: usize) -> Vec<f64> {
    let mut v = vec![0.0; r * r];
    v[..r].iter_mut().for_each(|d| *d = 1.0);
    v
}

/// Adds per-slot covariance blocks sized so that the initial harvest covers
/// twice the given per-slot energy need of every served user.
fn add_cov_blocks(
    prog: &mut Program,
    x0: &mut Vec<f64>,
    channels: &[Vec<CVec>],
    eta: &[f64],
    tau: f64,
    served: &[bool],
    need: &[Vec<f64>],
    nt: usize,
) -> Vec<Option<CovBlock>> {
    let m = channels.first().map_or(0, Vec::len);
    let mut raw = vec![0.0; m];
    for j in 0..m {
        for k in 0..channels.len() {
            if served[k] {
                let p = 2.0 * need[k][j] / (tau * eta[k] * channels[k][j].norm_squared());
                raw[j] = f64::max(raw[j], p);
            }
        }
    }
    let positive: Vec<f64> = raw.iter().copied().filter(|&p| p > 0.0).collect();
    let floor = if positive.is_empty() { 1.0 } else { 1e-3 * positive.iter().sum::<f64>() / positive.len() as f64 };
    let mut blocks = Vec::with_capacity(m);
    for j in 0..m {
        let hs: Vec<&CVec> = (0..channels.len()).filter(|&k| served[k]).map(|k| &channels[k][j]).collect();
        if hs.is_empty() {
            blocks.push(None);
            continue;
        }
        let basis = span_basis(&hs, nt, 1e-9);
        let r = basis.ncols();
        prog.tag = j;
        let offset = prog.add_psd_block(r);
        x0.extend(identity_coords(r));
        let scale = raw[j].max(floor);
        for a in 0..r {
            prog.add_objective_linear(offset + a, tau * scale);
        }
        blocks.push(Some(CovBlock { basis, offset, scale }));
    }
    blocks
}

/// Adds the cumulative energy budget of one served user, written with
/// battery levels: `E_j + b_j - b_{j-1} - harvest_j < 0` and `b_j > 0`.
/// Returns the energy-constraint indices and the per-slot battery variables.
#[allow(clippy::too_many_arguments)]
fn add_energy_chain(
    prog: &mut Program,
    x0: &mut Vec<f64>,
    blocks: &[Option<CovBlock>],
    h: &[CVec],
    eta: f64,
    tau: f64,
    carry: f64,
    unit: f64,
    usage: &[(Affine, Vec<(Kind, f64, Affine)>)],
    battery0: f64,
) -> (Vec<usize>, Vec<usize>) {
    let m = h.len();
    let mut cons = Vec::with_capacity(m);
    let mut bats = Vec::with_capacity(m);
    let mut prev: Option<usize> = None;
    for j in 0..m {
        prog.tag = j;
        let b = prog.add_var();
        x0.push(battery0 / unit);
        bats.push(b);
        let (base, terms) = &usage[j];
        let mut lin = Affine::default();
        lin.add(base, 1.0 / unit);
        lin.add_var(Some(b), 1.0);
        lin.add_var(prev, -1.0);
        if j == 0 {
            lin.c -= carry / unit;
        }
        if let Some(blk) = &blocks[j] {
            for (a, c) in blk.harvest_coeffs(&h[j]).into_iter().enumerate() {
                if c != 0.0 {
                    lin.add_var(Some(blk.offset + a), -tau * eta * c / unit);
                }
            }
        }
        let terms = terms.iter().map(|(kd, s, a)| (*kd, s / unit, a.clone())).collect();
        cons.push(prog.add_constraint(&lin, terms));
        let mut pos = Affine::default();
        pos.add_var(Some(b), 1.0);
        prog.add_positive(&pos);
        prev = Some(b);
    }
    (cons, bats)
}

fn finalize_objective_scale(prog: &mut Program, x0: &[f64]) -> f64 {
    let s = prog.objective(x0).abs().max(f64::MIN_POSITIVE);
    prog.obj_lin.iter_mut().for_each(|a| *a /= s);
    prog.obj_terms.iter_mut().for_each(|t| t.scale /= s);
    s
}

/// Result of the covariance-only problem.
#[derive(Clone, Debug)]
pub(crate) struct WptBarrier {
    pub covariances: Vec<CMat>,
    /// Raw multipliers of the per-slot energy constraints, `[user][slot]`.
    pub lambda: Vec<Vec<f64>>,
    /// The same multipliers read at successive barrier weights.
    pub lambda_snapshots: Vec<Vec<Vec<f64>>>,
    pub converged: bool,
}

/// Minimizes `τ Σ tr(S_j)` subject to cumulative harvest covering
/// `carry + Σ_{m≤j} harvest ≥ Σ_{m≤j} demand` for every user and slot.
pub(crate) fn solve_wpt(
    demands: &[Vec<f64>],
    carry: &[f64],
    channels: &[Vec<CVec>],
    eta: &[f64],
    tau: f64,
    nt: usize,
    opts: &BarrierOptions,
) -> Result<WptBarrier> {
    let k_n = demands.len();
    let m = demands.first().map_or(0, Vec::len);
    // Users whose demand ever exceeds what they already hold.
    let served: Vec<bool> = (0..k_n)
        .map(|k| {
            let mut cum = -carry[k];
            demands[k].iter().any(|&d| {
                cum += d;
                cum > 0.0
            })
        })
        .collect();
    let zero = WptBarrier {
        covariances: vec![CMat::zeros(nt, nt); m],
        lambda: vec![vec![0.0; m]; k_n],
        lambda_snapshots: Vec::new(),
        converged: true,
    };
    if !served.iter().any(|&s| s) {
        return Ok(zero);
    }
    let mut prog = Program::default();
    let mut x0 = Vec::new();
    let units: Vec<f64> = (0..k_n)
        .map(|k| demands[k].iter().fold(0.0f64, |a, &b| a.max(b)).max(carry[k]).max(f64::MIN_POSITIVE))
        .collect();
    let need: Vec<Vec<f64>> = (0..k_n)
        .map(|k| demands[k].iter().map(|&d| d + 1e-3 * units[k]).collect())
        .collect();
    let blocks = add_cov_blocks(&mut prog, &mut x0, channels, eta, tau, &served, &need, nt);
    let mut cons = vec![Vec::new(); k_n];
    for k in 0..k_n {
        if !served[k] {
            continue;
        }
        let usage: Vec<(Affine, Vec<(Kind, f64, Affine)>)> =
            demands[k].iter().map(|&d| (Affine::constant(d), Vec::new())).collect();
        let (c, _) = add_energy_chain(&mut prog, &mut x0, &blocks, &channels[k], eta[k], tau, carry[k], units[k], &usage, 1e-3 * units[k]);
        cons[k] = c;
    }
    let scale = finalize_objective_scale(&mut prog, &x0);
    let (out, x) = solve_ordered(&prog, x0, opts)?;
    let covariances = blocks
        .iter()
        .map(|b| b.as_ref().map_or_else(|| CMat::zeros(nt, nt), |b| b.covariance(&x)))
        .collect();
    let map = |mult: &[f64]| -> Vec<Vec<f64>> {
        (0..k_n)
            .map(|k| if served[k] { cons[k].iter().map(|&c| scale * mult[c] / units[k]).collect() } else { vec![0.0; m] })
            .collect()
    };
    let lambda = map(&out.multipliers);
    let lambda_snapshots = out.snapshots.iter().map(|v| map(v)).collect();
    Ok(WptBarrier { covariances, lambda, lambda_snapshots, converged: out.converged })
}

/// Barrier solution of a full instance, before dual certification.
#[derive(Clone, Debug)]
pub(crate) struct FullBarrier {
    pub plan: BitPlan,
    pub covariances: Vec<CMat>,
    /// Multipliers read off the barrier; last-slot task multipliers and those
    /// of eliminated constraints are zero and flagged in `unresolved`.
    pub dual: DualVariables,
    pub unresolved: Vec<crate::dual::Coord>,
    pub newton_steps: usize,
    pub converged: bool,
}

/// Solves a full instance with the barrier method.
pub(crate) fn solve_full(pr: &Problem, opts: &BarrierOptions) -> Result<FullBarrier> {
    use crate::dual::Coord;
    pr.validate()?;
    let (k_n, m) = (pr.num_users(), pr.num_slots());
    let nt = pr.params.num_antennas;
    let s = pr.params.bits_scale();
    let tau = pr.params.slot_duration;
    let eta = &pr.params.harvest_efficiency;

    // Which slots can hold work.
    let idle: Vec<Vec<bool>> = (0..k_n).map(|k| (0..m).map(|j| pr.forced_idle(k, j)).collect()).collect();
    let served: Vec<bool> = (0..k_n).map(|k| pr.total_bits(k) > 0.0).collect();
    let loc_on = |k: usize, j: usize| pr.loc_active(k, j) && !idle[k][j];
    let off_on = |k: usize, j: usize| pr.off_active(k, j) && !idle[k][j];
    let off_to_ap = |k: usize, j: usize| off_on(k, j) && pr.off_reaches_ap(j);
    let mut ap_live = vec![false; m];
    {
        let mut any = pr.ap_backlog > 0.0;
        for j in 0..m {
            if j > 0 && (0..k_n).any(|k| off_to_ap(k, j - 1)) {
                any = true;
            }
            ap_live[j] = any && pr.mec_active(j);
        }
    }

    // Initial plan: spread each backlog evenly over the remaining slots.
    let mut exec0 = vec![vec![0.0; m]; k_n];
    let mut off0 = vec![vec![0.0; m]; k_n];
    let mut q0 = vec![vec![0.0; m]; k_n];
    for k in 0..k_n {
        let a = pr.local_coef(k);
        let mut backlog = 0.0;
        for j in 0..m {
            backlog += pr.available(k, j);
            let remaining = (m - j) as f64;
            let mut e = if j + 1 == m { backlog } else { backlog / remaining };
            if !loc_on(k, j) && j + 1 < m {
                e = e.min(20.0 * s);
            }
            exec0[k][j] = e;
            backlog -= e;
            q0[k][j] = backlog;
            if off_on(k, j) && loc_on(k, j) {
                let split = min_energy_split(e, a, pr.offload_coef(k, j), s);
                off0[k][j] = split.clamp(0.05 * e, 0.95 * e);
            } else if off_on(k, j) {
                off0[k][j] = e;
            }
        }
    }
    let mut z0 = vec![0.0; m];
    let mut mec0 = vec![0.0; m];
    {
        let mut z = pr.ap_backlog;
        for j in 0..m {
            if j > 0 && pr.off_reaches_ap(j - 1) {
                z += (0..k_n).map(|k| off0[k][j - 1]).sum::<f64>();
            }
            let take = if j + 1 == m { z } else if ap_live[j] { z / (m - j) as f64 } else { 0.0 };
            mec0[j] = take;
            z -= take;
            z0[j] = z;
        }
    }
    let energy0: Vec<Vec<f64>> = (0..k_n)
        .map(|k| (0..m).map(|j| pr.user_energy(k, j, exec0[k][j] - off0[k][j], off0[k][j])).collect())
        .collect();
    let units: Vec<f64> = (0..k_n)
        .map(|k| energy0[k].iter().fold(0.0f64, |a, &b| a.max(b)).max(pr.energy_carry[k]).max(f64::MIN_POSITIVE))
        .collect();
    let need: Vec<Vec<f64>> = (0..k_n)
        .map(|k| energy0[k].iter().map(|&e| e + 1e-3 * units[k]).collect())
        .collect();

    let mut prog = Program::default();
    let mut x0: Vec<f64> = Vec::new();
    let blocks = add_cov_blocks(&mut prog, &mut x0, &pr.wpt_channels, eta, tau, &served, &need, nt);

    // Bit variables, slot by slot.
    let mut off_var = vec![vec![None; m]; k_n];
    let mut q_var = vec![vec![None; m]; k_n];
    let mut z_var = vec![None; m];
    for j in 0..m {
        prog.tag = j;
        for k in 0..k_n {
            if off_on(k, j) && loc_on(k, j) {
                off_var[k][j] = Some(prog.add_var());
                x0.push(off0[k][j] / s);
            }
        }
        for k in 0..k_n {
            if j + 1 < m && !idle[k][j] {
                q_var[k][j] = Some(prog.add_var());
                x0.push(q0[k][j] / s);
            }
        }
        if j + 1 < m && ap_live[j] {
            z_var[j] = Some(prog.add_var());
            x0.push(z0[j] / s);
        }
    }
    let exec = |k: usize, j: usize| -> Affine {
        let mut a = Affine::constant(pr.available(k, j) / s);
        if j > 0 {
            a.add_var(q_var[k][j - 1], 1.0);
        }
        a.add_var(q_var[k][j], -1.0);
        a
    };
    let off_expr = |k: usize, j: usize| -> Option<Affine> {
        if !off_on(k, j) {
            None
        } else if off_var[k][j].is_some() {
            let mut a = Affine::default();
            a.add_var(off_var[k][j], 1.0);
            Some(a)
        } else {
            Some(exec(k, j))
        }
    };
    let loc_expr = |k: usize, j: usize| -> Option<Affine> {
        if !loc_on(k, j) {
            return None;
        }
        let mut a = exec(k, j);
        a.add_var(off_var[k][j], -1.0);
        Some(a)
    };
    let mec_expr = |j: usize| -> Option<Affine> {
        if !ap_live[j] {
            return None;
        }
        let mut a = Affine::constant(if j == 0 { pr.ap_backlog / s } else { 0.0 });
        if j > 0 {
            a.add_var(z_var[j - 1], 1.0);
            for k in 0..k_n {
                if pr.off_reaches_ap(j - 1) {
                    if let Some(o) = off_expr(k, j - 1) {
                        a.add(&o, 1.0);
                    }
                }
            }
        }
        a.add_var(z_var[j], -1.0);
        Some(a)
    };

    // Nonnegativity of bit quantities.
    let mut q_con = vec![vec![None; m]; k_n];
    let mut z_con = vec![None; m];
    let c0 = pr.params.mec_coef();
    for j in 0..m {
        for k in 0..k_n {
            if let Some(v) = q_var[k][j] {
                let mut a = Affine::default();
                a.add_var(Some(v), 1.0);
                q_con[k][j] = Some(prog.add_positive(&a));
            }
            if let Some(e) = loc_expr(k, j) {
                if !e.is_constant() {
                    prog.add_positive(&e);
                }
            }
            if let Some(e) = off_expr(k, j) {
                if !e.is_constant() && off_var[k][j].is_some() {
                    prog.add_positive(&e);
                }
                if !e.is_constant() && off_var[k][j].is_none() && loc_expr(k, j).is_none() {
                    prog.add_positive(&e);
                }
            }
        }
        if let Some(v) = z_var[j] {
            let mut a = Affine::default();
            a.add_var(Some(v), 1.0);
            z_con[j] = Some(prog.add_positive(&a));
        }
        if let Some(e) = mec_expr(j) {
            if !e.is_constant() {
                prog.add_positive(&e);
                prog.add_objective_term(Kind::Cube, c0 * s.powi(3), &e);
            }
        }
    }
    // Energy budgets.
    let mut e_con = vec![Vec::new(); k_n];
    for k in 0..k_n {
        if !served[k] {
            continue;
        }
        let a = pr.local_coef(k);
        let usage: Vec<(Affine, Vec<(Kind, f64, Affine)>)> = (0..m)
            .map(|j| {
                let mut terms = Vec::new();
                let mut base = Affine::default();
                if let Some(l) = loc_expr(k, j) {
                    if l.is_constant() {
                        base.c += a * (l.c * s).max(0.0).powi(3);
                    } else {
                        terms.push((Kind::Cube, a * s.powi(3), l));
                    }
                }
                if let Some(o) = off_expr(k, j) {
                    let beta = pr.offload_coef(k, j);
                    if o.is_constant() {
                        base.c += beta * (LN2 * o.c).exp_m1();
                    } else {
                        terms.push((Kind::Exp(LN2), beta, o));
                    }
                }
                (base, terms)
            })
            .collect();
        let (c, _) = add_energy_chain(
            &mut prog,
            &mut x0,
            &blocks,
            &pr.wpt_channels[k],
            eta[k],
            tau,
            pr.energy_carry[k],
            units[k],
            &usage,
            1e-3 * units[k],
        );
        e_con[k] = c;
    }

    let scale = finalize_objective_scale(&mut prog, &x0);
    let (out, x) = solve_ordered(&prog, x0, opts)?;

    let mut plan = BitPlan::zeros(k_n, m);
    for k in 0..k_n {
        for j in 0..m {
            if let Some(l) = loc_expr(k, j) {
                plan.local[k][j] = (l.eval(&x) * s).max(0.0);
            }
            if let Some(o) = off_expr(k, j) {
                plan.offload[k][j] = (o.eval(&x) * s).max(0.0);
            }
        }
    }
    for j in 0..m {
        if let Some(e) = mec_expr(j) {
            plan.mec[j] = (e.eval(&x) * s).max(0.0);
        }
    }
    let covariances = blocks
        .iter()
        .map(|b| b.as_ref().map_or_else(|| CMat::zeros(nt, nt), |b| b.covariance(&x)))
        .collect();

    let mut dual = DualVariables::zeros(k_n, m);
    let mut unresolved = Vec::new();
    for k in 0..k_n {
        if served[k] {
            for j in 0..m {
                dual.lambda[k][j] = scale * out.multipliers[e_con[k][j]] / units[k];
            }
        }
        for j in 0..m {
            match q_con[k][j] {
                Some(c) => dual.mu[k][j] = scale * out.multipliers[c] / s,
                None => unresolved.push(Coord::Mu(k, j)),
            }
        }
    }
    for j in 0..m {
        match z_con[j] {
            Some(c) => dual.nu[j] = scale * out.multipliers[c] / s,
            None => unresolved.push(Coord::Nu(j)),
        }
    }
    Ok(FullBarrier {
        plan,
        covariances,
        dual,
        unresolved,
        newton_steps: out.newton_steps,
        converged: out.converged,
    })
}

/// Solves after renumbering variables by slot tag, so that each slot's
/// variables are contiguous. Returns the output and `x` in original order.
fn solve_ordered(prog: &Program, x0: Vec<f64>, opts: &BarrierOptions) -> Result<(BarrierOutput, Vec<f64>)> {
    let n = prog.n;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (prog.tags[i], i));
    let mut perm = vec![0usize; n];
    for (new, &orig) in order.iter().enumerate() {
        perm[orig] = new;
    }
    let mut out = Program { n, tag: 0, ..Default::default() };
    out.obj_lin = vec![0.0; n];
    out.tags = vec![0; n];
    for orig in 0..n {
        out.obj_lin[perm[orig]] = prog.obj_lin[orig];
        out.tags[perm[orig]] = prog.tags[orig];
    }
    out.obj_terms = prog.obj_terms.clone();
    for t in &mut out.obj_terms {
        t.idx.iter_mut().for_each(|v| *v = perm[*v]);
    }
    out.cons = prog
        .cons
        .iter()
        .map(|c| {
            let lin = Affine { terms: c.support.iter().zip(&c.lin).map(|(&i, &a)| (perm[i], a)).collect(), c: c.c };
            let terms = c
                .terms
                .iter()
                .map(|t| {
                    let a = Affine {
                        terms: t.idx.iter().zip(&t.coef).map(|(&li, &a)| (perm[c.support[li]], a)).collect(),
                        c: t.c,
                    };
                    (t.kind, t.scale, a)
                })
                .collect();
            Constraint::new(&lin, terms)
        })
        .collect();
    out.psd = prog.psd.iter().map(|&(off, r)| (perm[off], r)).collect();
    let mut y0 = vec![0.0; n];
    for orig in 0..n {
        y0[perm[orig]] = x0[orig];
    }
    let res = solve_program(&out, y0, opts)?;
    let x = (0..n).map(|orig| res.x[perm[orig]]).collect();
    Ok((res, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn herm_round_trip() {
        let x = [1.0, 2.0, 3.0, 0.5, -0.25, 0.1, 0.2, -0.3, 0.4];
        let m = herm_from(&x, 3);
        assert_eq!(m[(0, 1)], Complex64::new(0.5, -0.25));
        assert_eq!(m[(1, 0)], Complex64::new(0.5, 0.25));
        // tr(M B_a) recovers 2× off-diagonal coordinates and the diagonal.
        let c = herm_coeffs(&m);
        assert_eq!(c[0], 1.0);
        assert!((c[3] - 1.0).abs() < 1e-15 && (c[4] + 0.5).abs() < 1e-15);
        // Quadratic forms through coefficients.
        let h = CVec::from_vec(vec![Complex64::new(0.3, 0.1), Complex64::new(-1.0, 0.4), Complex64::new(0.2, -0.7)]);
        let direct = (h.adjoint() * &m * &h)[(0, 0)].re;
        let via: f64 = herm_coeffs(&(&h * h.adjoint())).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((direct - via).abs() < 1e-12);
    }

    #[test]
    fn scalar_lp() {
        // min x s.t. x > 1.
        let mut p = Program::default();
        let v = p.add_var();
        p.add_objective_linear(v, 1.0);
        let mut a = Affine::constant(-1.0);
        a.add_var(Some(v), 1.0);
        p.add_positive(&a);
        let out = solve_program(&p, vec![3.0], &BarrierOptions::default()).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-8);
        assert!((out.multipliers[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn single_slot_wpt() {
        let h = vec![vec![CVec::from_vec(vec![Complex64::new(1.0, 0.5), Complex64::new(0.2, -0.3)])]];
        let out = solve_wpt(&[vec![2.0]], &[0.0], &h, &[0.5], 0.1, 2, &BarrierOptions::default()).unwrap();
        let expect = 2.0 / (0.5 * h[0][0].norm_squared());
        let energy = 0.1 * out.covariances[0].trace().re;
        assert!((energy - expect).abs() < 1e-8 * expect, "{energy} vs {expect}");
    }
}
