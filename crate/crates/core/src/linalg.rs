//! Small dense complex linear algebra: a cyclic Jacobi eigensolver for
//! Hermitian matrices, Hermitian Cholesky, span bases, and a skyline
//! (envelope) Cholesky factorization for the barrier solver's Newton systems.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

const MAX_SWEEPS: usize = 100;

/// Largest elementwise deviation from Hermitian symmetry, `max |m_ij - conj(m_ji)|`.
pub fn hermitian_asymmetry(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

/// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns.
pub fn hermitian_eig(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", n, m.ncols())));
    }
    let scale = max_abs(m);
    if hermitian_asymmetry(m) > 1e-10 * scale.max(1.0) {
        return Err(Error::Domain("matrix is not Hermitian".into()));
    }
    let mut a = m.clone();
    for i in 0..n {
        a[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
    }
    let mut v = CMat::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let b = a[(p, q)];
                let g = b.norm();
                if g <= 1e-300 {
                    continue;
                }
                let phase = b / g;
                let (app, aqq) = (a[(p, p)].re, a[(q, q)].re);
                let theta = (aqq - app) / (2.0 * g);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // U = diag(1, conj(phase)) * [[c, s], [-s, c]]
                let u11 = Complex64::new(c, 0.0);
                let u12 = Complex64::new(s, 0.0);
                let u21 = -phase.conj() * s;
                let u22 = phase.conj() * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = akp * u11 + akq * u21;
                    a[(k, q)] = akp * u12 + akq * u22;
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vkp * u11 + vkq * u21;
                    v[(k, q)] = vkp * u12 + vkq * u22;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = u11.conj() * apk + u21.conj() * aqk;
                    a[(q, k)] = u12.conj() * apk + u22.conj() * aqk;
                }
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMat) -> Result<f64> {
    Ok(hermitian_eig(m)?.0.first().copied().unwrap_or(0.0))
}

/// Outer product `h hᴴ`.
pub fn outer(h: &CVec) -> CMat {
    h * h.adjoint()
}

/// Quadratic form `hᴴ S h`, real part.
pub fn quad_form(s: &CMat, h: &CVec) -> f64 {
    (h.adjoint() * s * h)[(0, 0)].re
}

/// Lower Cholesky factor of a Hermitian positive definite matrix, or `None`.
pub fn hermitian_cholesky(m: &CMat) -> Option<CMat> {
    let n = m.nrows();
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Inverse of a Hermitian positive definite matrix from its Cholesky factor,
/// together with `log det`.
pub fn hermitian_inverse_logdet(m: &CMat) -> Option<(CMat, f64)> {
    let l = hermitian_cholesky(m)?;
    let n = m.nrows();
    let logdet = 2.0 * (0..n).map(|i| l[(i, i)].re.ln()).sum::<f64>();
    // Solve L Y = I, then Lᴴ X = Y.
    let mut y = CMat::identity(n, n);
    for c in 0..n {
        for i in 0..n {
            let mut s = y[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * y[(k, c)];
            }
            y[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)].conj() * y[(k, c)];
            }
            y[(i, c)] = s / l[(i, i)];
        }
    }
    Some((y, logdet))
}

/// Orthonormal basis (as columns) of the span of `vectors`, by modified
/// Gram-Schmidt with relative rank tolerance `tol`.
pub fn span_basis(vectors: &[&CVec], dim: usize, tol: f64) -> CMat {
    let scale = vectors.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut basis: Vec<CVec> = Vec::new();
    for v in vectors {
        let mut w = (*v).clone();
        for _ in 0..2 {
            for b in &basis {
                let c = (b.adjoint() * &w)[(0, 0)];
                w -= b * c;
            }
        }
        let nrm = w.norm();
        if nrm > tol * scale && basis.len() < dim {
            basis.push(w / Complex64::new(nrm, 0.0));
        }
    }
    let mut q = CMat::zeros(dim, basis.len());
    for (c, b) in basis.iter().enumerate() {
        q.set_column(c, b);
    }
    q
}

/// Symmetric positive definite matrix in skyline (variable band) storage.
///
/// Row `i` stores the entries from column `first[i]` through the diagonal.
/// Cholesky factorization fills in only within this envelope.
#[derive(Clone, Debug)]
pub struct Skyline {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl Skyline {
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "envelope start beyond diagonal");
            start.push(total);
            total += i - f + 1;
        }
        start.push(total);
        Self { first, start, data: vec![0.0; total] }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    /// Adds `v` to entry `(i, j)` of the symmetric matrix; `(i, j)` must be inside the envelope.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(j >= self.first[i]);
        self.data[self.start[i] + j - self.first[i]] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if j < self.first[i] {
            0.0
        } else {
            self.data[self.start[i] + j - self.first[i]]
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    /// In-place `L Lᵀ` factorization. Returns `false` on a nonpositive pivot.
    pub fn factor(&mut self) -> bool {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..=i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut s = self.data[si + j - fi];
                for k in k0..j {
                    s -= self.data[si + k - fi] * self.data[sj + k - fj];
                }
                if j < i {
                    s /= self.data[sj + j - fj];
                    self.data[si + j - fi] = s;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return false;
                    }
                    self.data[si + i - fi] = s.sqrt();
                }
            }
        }
        true
    }

    /// Solves `L Lᵀ x = b` with a factored matrix.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let mut s = b[i];
            for k in fi..i {
                s -= self.data[si + k - fi] * b[k];
            }
            b[i] = s / self.data[si + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            b[i] /= self.data[si + i - fi];
            let xi = b[i];
            for k in fi..i {
                b[k] -= self.data[si + k - fi] * xi;
            }
        }
    }
}
