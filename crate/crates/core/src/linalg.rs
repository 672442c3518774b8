//! Dense complex linear algebra kernel.
//!
//! The matrices here are small (transfer operators up to q = 256, companion
//! matrices up to degree ~24), so a textbook dense solver is the right tool:
//! Parlett–Reinsch balancing, Householder reduction to Hessenberg form, an
//! explicitly shifted QR iteration with deflation for eigenvalues, and
//! LU-based inverse iteration for the dominant eigenvector. Everything is
//! generic over the scalar type, which is why this kernel is hand-written
//! rather than delegated to a LAPACK binding.

use crate::scalar::{lit, Scalar};
use num_complex::Complex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("QR iteration failed to converge after {0} sweeps")]
    NotConverged(usize),
    #[error("matrix is numerically singular")]
    Singular,
    #[error("inverse iteration failed to produce an eigenvector (residual {0})")]
    BadEigenvector(f64),
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat<T: Scalar> {
    n: usize,
    a: Vec<Complex<T>>,
}

impl<T: Scalar> CMat<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            a: vec![Complex::new(T::zero(), T::zero()); n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn trace(&self) -> Complex<T> {
        (0..self.n).fold(Complex::new(T::zero(), T::zero()), |acc, i| {
            acc + self[(i, i)]
        })
    }

    pub fn matvec(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let row = &self.a[i * self.n..(i + 1) * self.n];
                row.iter()
                    .zip(x.iter())
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (m, v)| {
                        acc + *m * *v
                    })
            })
            .collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self[(i, k)];
                if aik.norm_sqr() == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] = out[(i, j)] + aik * other[(k, j)];
                }
            }
        }
        out
    }

    /// Largest row sum of absolute values (∞-norm).
    pub fn norm_inf(&self) -> T {
        (0..self.n)
            .map(|i| {
                self.a[i * self.n..(i + 1) * self.n]
                    .iter()
                    .fold(T::zero(), |acc, v| acc + v.norm())
            })
            .fold(T::zero(), |a, b| a.max(b))
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for CMat<T> {
    type Output = Complex<T>;
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.a[i * self.n + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for CMat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.a[i * self.n + j]
    }
}

fn cabs1<T: Scalar>(z: Complex<T>) -> T {
    z.re.abs() + z.im.abs()
}

/// Parlett–Reinsch balancing (radix 2): replaces `A` by `D⁻¹ A D` with a
/// diagonal power-of-two `D`, shrinking the spread between row and column
/// norms. Similarity transform, so eigenvalues are unchanged.
fn balance<T: Scalar>(m: &mut CMat<T>) {
    let n = m.n;
    let radix = lit::<T>(2.0);
    let radix_sq = radix * radix;
    loop {
        let mut converged = true;
        for i in 0..n {
            let mut c = T::zero();
            let mut r = T::zero();
            for j in 0..n {
                if j != i {
                    c = c + cabs1(m[(j, i)]);
                    r = r + cabs1(m[(i, j)]);
                }
            }
            if c == T::zero() || r == T::zero() {
                continue;
            }
            let s = c + r;
            let mut f = T::one();
            let mut g = r / radix;
            while c < g {
                f = f * radix;
                c = c * radix_sq;
            }
            g = r * radix;
            while c >= g {
                f = f / radix;
                c = c / radix_sq;
            }
            if (c + r) / f < lit::<T>(0.95) * s && f != T::one() {
                converged = false;
                let inv = T::one() / f;
                for j in 0..n {
                    m[(i, j)] = m[(i, j)] * inv;
                }
                for j in 0..n {
                    m[(j, i)] = m[(j, i)] * f;
                }
            }
        }
        if converged {
            break;
        }
    }
}

/// Householder reduction to upper Hessenberg form (in place).
fn hessenberg<T: Scalar>(m: &mut CMat<T>) {
    let n = m.n;
    for k in 0..n.saturating_sub(2) {
        // Column k below the subdiagonal.
        let mut norm_sq = T::zero();
        for i in (k + 1)..n {
            norm_sq = norm_sq + m[(i, k)].norm_sqr();
        }
        let norm = norm_sq.sqrt();
        if norm == T::zero() {
            continue;
        }
        let x0 = m[(k + 1, k)];
        let phase = if x0.norm() == T::zero() {
            Complex::new(T::one(), T::zero())
        } else {
            x0 / x0.norm()
        };
        // v = x + phase·‖x‖·e₁ (avoids cancellation).
        let mut v: Vec<Complex<T>> = (0..n - k - 1).map(|i| m[(k + 1 + i, k)]).collect();
        v[0] = v[0] + phase * norm;
        let vnorm_sq = v.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr());
        if vnorm_sq == T::zero() {
            continue;
        }
        let two_over = lit::<T>(2.0) / vnorm_sq;
        // A ← H A with H = I − 2 v v*/v*v acting on rows k+1..n.
        for j in k..n {
            let mut dot = Complex::new(T::zero(), T::zero());
            for i in 0..v.len() {
                dot = dot + v[i].conj() * m[(k + 1 + i, j)];
            }
            let scale = dot * two_over;
            for i in 0..v.len() {
                m[(k + 1 + i, j)] = m[(k + 1 + i, j)] - v[i] * scale;
            }
        }
        // A ← A H acting on columns k+1..n.
        for i in 0..n {
            let mut dot = Complex::new(T::zero(), T::zero());
            for jj in 0..v.len() {
                dot = dot + m[(i, k + 1 + jj)] * v[jj];
            }
            let scale = dot * two_over;
            for jj in 0..v.len() {
                m[(i, k + 1 + jj)] = m[(i, k + 1 + jj)] - scale * v[jj].conj();
            }
        }
        // Zero the annihilated entries exactly.
        for i in (k + 2)..n {
            m[(i, k)] = Complex::new(T::zero(), T::zero());
        }
    }
}

/// Complex Givens rotation zeroing `b` in `(a, b)`: returns `(c, s)` with
/// real `c` such that `[c s; −s̄ c]·[a; b] = [r; 0]`.
fn givens<T: Scalar>(a: Complex<T>, b: Complex<T>) -> (T, Complex<T>) {
    if b.norm_sqr() == T::zero() {
        return (T::one(), Complex::new(T::zero(), T::zero()));
    }
    if a.norm_sqr() == T::zero() {
        return (T::zero(), b.conj() / b.norm());
    }
    let denom = (a.norm_sqr() + b.norm_sqr()).sqrt();
    let c = a.norm() / denom;
    let s = (a / a.norm()) * b.conj() / denom;
    (c, s)
}

/// Eigenvalues of the (already balanced, Hessenberg) matrix by explicitly
/// shifted QR with deflation.
fn qr_eigenvalues<T: Scalar>(mut h: CMat<T>) -> Result<Vec<Complex<T>>, LinalgError> {
    let n = h.n;
    let mut eigs = vec![Complex::new(T::zero(), T::zero()); n];
    if n == 0 {
        return Ok(eigs);
    }
    let eps = T::epsilon();
    let mut hi = n - 1; // active block is rows/cols 0..=hi
    let mut iters_at_block = 0usize;
    let mut total = 0usize;
    let max_total = 80 * n.max(4);
    loop {
        // Deflate trailing 1×1 blocks.
        loop {
            if hi == 0 {
                eigs[0] = h[(0, 0)];
                return Ok(eigs);
            }
            let sub = h[(hi, hi - 1)].norm();
            let scale = h[(hi - 1, hi - 1)].norm() + h[(hi, hi)].norm();
            let floor = if scale == T::zero() { eps } else { eps * scale };
            if sub <= floor {
                eigs[hi] = h[(hi, hi)];
                hi -= 1;
                iters_at_block = 0;
            } else {
                break;
            }
        }
        // Find the start of the active block.
        let mut lo = hi;
        while lo > 0 {
            let sub = h[(lo, lo - 1)].norm();
            let scale = h[(lo - 1, lo - 1)].norm() + h[(lo, lo)].norm();
            let floor = if scale == T::zero() { eps } else { eps * scale };
            if sub <= floor {
                break;
            }
            lo -= 1;
        }
        total += 1;
        iters_at_block += 1;
        if total > max_total {
            return Err(LinalgError::NotConverged(total));
        }
        // Shift: Wilkinson (eigenvalue of the trailing 2×2 nearest to the
        // corner), with an exceptional shift every 12 stalled sweeps.
        let corner = h[(hi, hi)];
        let shift = if iters_at_block % 12 == 0 {
            corner + Complex::new(h[(hi, hi - 1)].norm() * lit::<T>(0.75), T::zero())
        } else {
            let a = h[(hi - 1, hi - 1)];
            let b = h[(hi - 1, hi)];
            let c = h[(hi, hi - 1)];
            let d = corner;
            let tr = a + d;
            let half = tr * lit::<T>(0.5);
            let disc = (half * half - (a * d - b * c)).sqrt();
            let r1 = half + disc;
            let r2 = half - disc;
            if (r1 - d).norm() <= (r2 - d).norm() {
                r1
            } else {
                r2
            }
        };
        // Explicit shifted QR step on the active block:
        // H − σI = QR (Givens), then H ← RQ + σI.
        for i in lo..=hi {
            h[(i, i)] = h[(i, i)] - shift;
        }
        let mut rotations = Vec::with_capacity(hi - lo);
        for k in lo..hi {
            let (c, s) = givens(h[(k, k)], h[(k + 1, k)]);
            rotations.push((c, s));
            for j in k..=hi {
                let top = h[(k, j)];
                let bot = h[(k + 1, j)];
                h[(k, j)] = top * c + bot * s;
                h[(k + 1, j)] = bot * c - top * s.conj();
            }
        }
        for (k, (c, s)) in rotations.iter().enumerate() {
            let k = lo + k;
            let row_hi = (k + 2).min(hi);
            for i in lo..=row_hi {
                let left = h[(i, k)];
                let right = h[(i, k + 1)];
                h[(i, k)] = left * *c + right * s.conj();
                h[(i, k + 1)] = right * *c - left * *s;
            }
        }
        for i in lo..=hi {
            h[(i, i)] = h[(i, i)] + shift;
        }
    }
}

/// All eigenvalues of a dense complex matrix, in deterministic order
/// (descending modulus, ties broken by argument then real part).
pub fn eigenvalues<T: Scalar>(m: &CMat<T>) -> Result<Vec<Complex<T>>, LinalgError> {
    let mut work = m.clone();
    balance(&mut work);
    hessenberg(&mut work);
    let mut eigs = qr_eigenvalues(work)?;
    sort_eigenvalues(&mut eigs);
    Ok(eigs)
}

/// Deterministic eigenvalue ordering: by descending modulus, then by
/// argument, then by real part.
pub fn sort_eigenvalues<T: Scalar>(eigs: &mut [Complex<T>]) {
    eigs.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                a.arg()
                    .partial_cmp(&b.arg())
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(
                a.re.partial_cmp(&b.re)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
    });
}

/// LU factorization with partial pivoting. Returns the packed factors and
/// the pivot rows. Tiny pivots are replaced by a small multiple of the matrix
/// scale so that inverse iteration on a (nearly) singular shift still works.
pub struct Lu<T: Scalar> {
    lu: CMat<T>,
    piv: Vec<usize>,
}

pub fn lu_factor<T: Scalar>(m: &CMat<T>) -> Lu<T> {
    let n = m.n;
    let mut lu = m.clone();
    let mut piv = (0..n).collect::<Vec<_>>();
    let scale = lu.norm_inf().max(T::min_positive_value());
    let tiny = scale * T::epsilon() * lit::<T>(0.5);
    for k in 0..n {
        // Pivot search.
        let mut best = k;
        let mut best_mag = lu[(k, k)].norm();
        for i in (k + 1)..n {
            let mag = lu[(i, k)].norm();
            if mag > best_mag {
                best = i;
                best_mag = mag;
            }
        }
        if best != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(best, j)];
                lu[(best, j)] = tmp;
            }
            piv.swap(k, best);
        }
        if lu[(k, k)].norm() < tiny {
            lu[(k, k)] = Complex::new(tiny, T::zero());
        }
        let inv = Complex::new(T::one(), T::zero()) / lu[(k, k)];
        for i in (k + 1)..n {
            let factor = lu[(i, k)] * inv;
            lu[(i, k)] = factor;
            if factor.norm_sqr() == T::zero() {
                continue;
            }
            for j in (k + 1)..n {
                let sub = factor * lu[(k, j)];
                lu[(i, j)] = lu[(i, j)] - sub;
            }
        }
    }
    Lu { lu, piv }
}

pub fn lu_solve<T: Scalar>(f: &Lu<T>, b: &[Complex<T>]) -> Vec<Complex<T>> {
    let n = f.lu.n;
    assert_eq!(b.len(), n);
    let mut x: Vec<Complex<T>> = f.piv.iter().map(|&p| b[p]).collect();
    for i in 1..n {
        let mut acc = x[i];
        for j in 0..i {
            acc = acc - f.lu[(i, j)] * x[j];
        }
        x[i] = acc;
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in (i + 1)..n {
            acc = acc - f.lu[(i, j)] * x[j];
        }
        x[i] = acc / f.lu[(i, i)];
    }
    x
}

/// Dominant eigenpair: the eigenvalue of largest modulus (from the QR sweep)
/// and an eigenvector obtained by inverse iteration, normalized to unit
/// Euclidean norm with a deterministic phase (largest entry real positive).
pub fn dominant_eigenpair<T: Scalar>(
    m: &CMat<T>,
) -> Result<(Complex<T>, Vec<Complex<T>>), LinalgError> {
    let eigs = eigenvalues(m)?;
    let lambda = eigs[0];
    let v = eigenvector_for(m, lambda)?;
    Ok((lambda, v))
}

/// Eigenvector for a known eigenvalue via shifted inverse iteration.
pub fn eigenvector_for<T: Scalar>(
    m: &CMat<T>,
    lambda: Complex<T>,
) -> Result<Vec<Complex<T>>, LinalgError> {
    let n = m.n;
    let scale = m.norm_inf().max(T::min_positive_value());
    let base_offset = scale * T::epsilon() * lit::<T>(32.0);
    let mut best: Option<(T, Vec<Complex<T>>)> = None;
    for attempt in 0..4 {
        let offset = base_offset * lit::<T>((attempt * attempt) as f64 + 1.0);
        let shifted = CMat::from_fn(n, |i, j| {
            if i == j {
                m[(i, j)] - (lambda + Complex::new(offset, offset))
            } else {
                m[(i, j)]
            }
        });
        let f = lu_factor(&shifted);
        let inv_sqrt_n = T::one() / lit::<T>(n as f64).sqrt();
        let mut v: Vec<Complex<T>> = (0..n)
            .map(|i| {
                // Deterministic, not axis-aligned start.
                let t = lit::<T>((i % 7 + 1) as f64 / 7.0);
                Complex::new(inv_sqrt_n, inv_sqrt_n * t * lit::<T>(0.25))
            })
            .collect();
        for _ in 0..4 {
            let w = lu_solve(&f, &v);
            let norm = w.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt();
            if !norm.is_finite() || norm == T::zero() {
                break;
            }
            v = w.into_iter().map(|z| z / norm).collect();
        }
        // Fix the phase: largest-modulus entry becomes real positive.
        let (mut imax, mut vmax) = (0usize, T::zero());
        for (i, z) in v.iter().enumerate() {
            if z.norm() > vmax {
                vmax = z.norm();
                imax = i;
            }
        }
        if vmax > T::zero() {
            let phase = v[imax] / v[imax].norm();
            v = v.into_iter().map(|z| z / phase).collect();
        }
        // Residual ‖Av − λv‖ / ‖A‖.
        let av = m.matvec(&v);
        let res = av
            .iter()
            .zip(v.iter())
            .fold(T::zero(), |acc, (a, b)| acc + (*a - *b * lambda).norm_sqr())
            .sqrt()
            / scale;
        if res <= lit::<T>(1e3) * T::epsilon() {
            return Ok(v);
        }
        match &best {
            Some((r, _)) if *r <= res => {}
            _ => best = Some((res, v)),
        }
    }
    let (res, v) = best.ok_or(LinalgError::BadEigenvector(f64::INFINITY))?;
    // Accept a looser residual before giving up; callers needing tighter
    // guarantees check their own invariants.
    if res <= lit::<T>(1e-7) {
        Ok(v)
    } else {
        Err(LinalgError::BadEigenvector(res.to_f64().unwrap_or(f64::NAN)))
    }
}

/// Companion matrix of the monic polynomial with the given coefficients
/// `p(z) = c₀ + c₁ z + … + c_{m−1} z^{m−1} + z^m` (note: monic part implied).
pub fn companion<T: Scalar>(monic_low_coeffs: &[Complex<T>]) -> CMat<T> {
    let m = monic_low_coeffs.len();
    CMat::from_fn(m, |i, j| {
        if j == m - 1 {
            -monic_low_coeffs[i]
        } else if i == j + 1 {
            Complex::new(T::one(), T::zero())
        } else {
            Complex::new(T::zero(), T::zero())
        }
    })
}
