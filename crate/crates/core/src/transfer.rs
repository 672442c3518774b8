//! Transfer-operator route to spectra and correlation lengths.
//!
//! For a one-dimensional chain with nearest-neighbor couplings the transfer
//! operator is the q×q complex symmetric matrix
//!
//! ```text
//! T[a][b] = √(ν_a ν_b) · exp(β Σ_k J^k t^k_a t^k_b),
//! ```
//!
//! built from the tilted (complex) site weights, so that `tr T^L` equals the
//! periodic partition function exactly. A two-dimensional strip of width W
//! reduces to a chain over super-sites (column configurations, q ≤ 256):
//! intra-column bonds and the tilted weights of a column are folded into the
//! super-site weight, inter-column bonds into the kernel.
//!
//! At complex field the operator is not Hermitian; the mass gap is defined
//! through moduli of eigenvalues, `m = log |λ₁/λ₂|`.

use crate::linalg::{self, CMat, LinalgError};
use crate::model::{Boundary, ModelError, ValidatedModel};
use crate::scalar::{lit, Scalar};
use num_complex::Complex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("model is not reducible to a chain of super-sites: {0}")]
    NotAChain(String),
    #[error("super-site count {q} exceeds the strip cap {cap}")]
    TooManyStates { q: usize, cap: usize },
    #[error("top eigenvalues degenerate in modulus (|λ₁| = |λ₂| within 1e−12)")]
    DegenerateTop,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Cap on the number of super-site states for strip reduction.
pub const STRIP_STATE_CAP: usize = 256;

/// Transfer operator of a chain (possibly of super-sites).
#[derive(Debug, Clone)]
pub struct TransferOperator<T: Scalar> {
    mat: CMat<T>,
    /// √(super-site weight), the boundary vector of a free chain.
    sqrt_weights: Vec<Complex<T>>,
    /// Observable spin components per super-site state: `spins[a][k]` is the
    /// k-th component at the observation row of state `a`.
    spins: Vec<Vec<T>>,
    /// Chain length along the transfer direction.
    length: usize,
    boundary: Boundary,
}

/// Builds the transfer operator for a validated model whose geometry is a
/// chain (d = 1) or a strip (d = 2 with bounded width). Couplings must not
/// reach beyond adjacent (super-)sites.
pub fn build_transfer<T: Scalar>(
    model: &ValidatedModel<T>,
) -> Result<TransferOperator<T>, TransferError> {
    match model.lattice().d() {
        1 => build_chain(model),
        2 => build_strip(model),
        d => Err(TransferError::NotAChain(format!(
            "{d}-dimensional boxes have no transfer direction here"
        ))),
    }
}

fn build_chain<T: Scalar>(model: &ValidatedModel<T>) -> Result<TransferOperator<T>, TransferError> {
    for (offset, j) in model.couplings().entries() {
        if offset != &vec![1i64] && j.iter().any(|c| *c != T::zero()) {
            return Err(TransferError::NotAChain(format!(
                "coupling at offset {offset:?} is not nearest-neighbor"
            )));
        }
    }
    let weights = model.tilted_weights()?;
    let atoms = model.measure().atoms();
    let q = atoms.len();
    let beta = model.beta();
    let j = model
        .couplings()
        .coupling_for(&[1])
        .map(|j| j.to_vec())
        .unwrap_or_else(|| vec![T::zero(); model.measure().n_components()]);
    let sqrt_weights: Vec<Complex<T>> = weights.iter().map(|w| w.sqrt()).collect();
    let mat = CMat::from_fn(q, |a, b| {
        let mut energy = T::zero();
        for (k, jk) in j.iter().enumerate() {
            energy = energy + *jk * atoms[a].0[k] * atoms[b].0[k];
        }
        sqrt_weights[a] * sqrt_weights[b] * Complex::new(beta * energy, T::zero()).exp()
    });
    Ok(TransferOperator {
        mat,
        sqrt_weights,
        spins: atoms.iter().map(|(p, _)| p.clone()).collect(),
        length: model.lattice().dims()[0],
        boundary: model.lattice().boundary(),
    })
}

fn build_strip<T: Scalar>(model: &ValidatedModel<T>) -> Result<TransferOperator<T>, TransferError> {
    let dims = model.lattice().dims();
    let (length, width) = (dims[0], dims[1]);
    let n_atoms = model.measure().n_atoms();
    let q = n_atoms
        .checked_pow(width as u32)
        .filter(|&q| q <= STRIP_STATE_CAP)
        .ok_or(TransferError::TooManyStates {
            q: usize::MAX,
            cap: STRIP_STATE_CAP,
        })?;
    for (offset, j) in model.couplings().entries() {
        if offset[0].abs() > 1 && j.iter().any(|c| *c != T::zero()) {
            return Err(TransferError::NotAChain(format!(
                "coupling at offset {offset:?} reaches beyond adjacent columns"
            )));
        }
    }
    let weights = model.tilted_weights()?;
    let atoms = model.measure().atoms();
    let beta = model.beta();
    let boundary = model.lattice().boundary();

    // Decode super-site index → per-row atom indices.
    let decode = |mut state: usize| -> Vec<usize> {
        let mut rows = vec![0usize; width];
        for row in rows.iter_mut() {
            *row = state % n_atoms;
            state /= n_atoms;
        }
        rows
    };
    let states: Vec<Vec<usize>> = (0..q).map(decode).collect();

    // Intra-column bonds: offsets with zero first component, applied within
    // one column under the transverse boundary condition.
    let mut intra: Vec<(usize, usize, Vec<T>)> = Vec::new();
    // Inter-column bonds: offsets with first component ±1, read as row w of
    // the left column coupling to row w′ of the right column.
    let mut inter: Vec<(usize, usize, Vec<T>)> = Vec::new();
    for (offset, j) in model.couplings().entries() {
        if j.iter().all(|c| *c == T::zero()) {
            continue;
        }
        let dy = offset[1];
        if offset[0] == 0 {
            for w in 0..width as i64 {
                let target = w + dy;
                let wrapped = match boundary {
                    Boundary::Free => {
                        if target < 0 || target >= width as i64 {
                            continue;
                        }
                        target
                    }
                    Boundary::Periodic => target.rem_euclid(width as i64),
                };
                if wrapped == w && boundary == Boundary::Periodic {
                    continue;
                }
                intra.push((w as usize, wrapped as usize, j.clone()));
            }
        } else {
            // offset[0] == ±1; canonical offsets have offset[0] = 1 here
            // since the first nonzero component is positive, except offsets
            // like (−1, dy) canonicalize to (1, −dy). Either way reading the
            // canonical form left→right is correct.
            for w in 0..width as i64 {
                let target = w + dy;
                let wrapped = match boundary {
                    Boundary::Free => {
                        if target < 0 || target >= width as i64 {
                            continue;
                        }
                        target
                    }
                    Boundary::Periodic => target.rem_euclid(width as i64),
                };
                inter.push((w as usize, wrapped as usize, j.clone()));
            }
        }
    }

    let super_weight = |state: &[usize]| -> Complex<T> {
        let mut w = Complex::new(T::one(), T::zero());
        for &a in state {
            w = w * weights[a];
        }
        let mut energy = T::zero();
        for (wa, wb, j) in &intra {
            let pa = &atoms[state[*wa]].0;
            let pb = &atoms[state[*wb]].0;
            for (k, jk) in j.iter().enumerate() {
                energy = energy + *jk * pa[k] * pb[k];
            }
        }
        w * Complex::new(beta * energy, T::zero()).exp()
    };
    let sqrt_weights: Vec<Complex<T>> = states
        .iter()
        .map(|s| super_weight(s).sqrt())
        .collect();
    let mat = CMat::from_fn(q, |a, b| {
        let sa = &states[a];
        let sb = &states[b];
        let mut energy = T::zero();
        for (wa, wb, j) in &inter {
            let pa = &atoms[sa[*wa]].0;
            let pb = &atoms[sb[*wb]].0;
            for (k, jk) in j.iter().enumerate() {
                energy = energy + *jk * pa[k] * pb[k];
            }
        }
        sqrt_weights[a] * sqrt_weights[b] * Complex::new(beta * energy, T::zero()).exp()
    });
    Ok(TransferOperator {
        mat,
        sqrt_weights,
        // Observable: the spin at row 0 of the column.
        spins: states.iter().map(|s| atoms[s[0]].0.clone()).collect(),
        length,
        boundary,
    })
}

impl<T: Scalar> TransferOperator<T> {
    pub fn q(&self) -> usize {
        self.mat.n()
    }

    pub fn matrix(&self) -> &CMat<T> {
        &self.mat
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// Partition function of the chain the operator was built from:
    /// `tr T^L` for periodic boundary, `sᵀ T^{L−1} s` with `s_a = √ν_a`
    /// for free boundary. Exact identities, used as cross-checks against
    /// direct enumeration.
    pub fn partition_function(&self) -> Complex<T> {
        match self.boundary {
            Boundary::Periodic => {
                let mut power = self.mat.clone();
                for _ in 1..self.length {
                    power = power.matmul(&self.mat);
                }
                power.trace()
            }
            Boundary::Free => {
                let mut v = self.sqrt_weights.clone();
                for _ in 1..self.length {
                    v = self.mat.matvec(&v);
                }
                self.sqrt_weights
                    .iter()
                    .zip(v.iter())
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (s, x)| {
                        acc + *s * *x
                    })
            }
        }
    }

    /// Eigenvalues sorted by descending modulus.
    pub fn eigenvalues(&self) -> Result<Vec<Complex<T>>, TransferError> {
        Ok(linalg::eigenvalues(&self.mat)?)
    }

    /// Connected two-point function of the infinite chain at separation `x`,
    /// components `(i, j)`:
    /// `⟨φ^i_0 ; φ^j_x⟩ = v₁ᵀ S_i (T/λ₁)^x S_j v₁ / (v₁ᵀv₁)² · … − ⟨φ^i⟩⟨φ^j⟩`
    /// with the complex-orthogonal normalization `v₁ᵀ v₁` of the top
    /// eigenvector of the complex symmetric operator. Falls back to long
    /// finite-chain products when that normalization degenerates.
    pub fn two_point_infinite(
        &self,
        x: usize,
        comp_i: usize,
        comp_j: usize,
    ) -> Result<Complex<T>, TransferError> {
        let (lambda, v) = linalg::dominant_eigenpair(&self.mat)?;
        let vtv = v
            .iter()
            .fold(Complex::new(T::zero(), T::zero()), |acc, z| acc + z * z);
        if vtv.norm() < lit::<T>(1e-8) {
            // Quasi-null top eigenvector: fall back to a long finite chain.
            return Ok(self.two_point_finite_centered(x, comp_i, comp_j, 48)?);
        }
        let si = |k: usize, comp: usize| self.spins[k][comp];
        let apply_s = |w: &[Complex<T>], comp: usize| -> Vec<Complex<T>> {
            w.iter()
                .enumerate()
                .map(|(k, z)| *z * si(k, comp))
                .collect()
        };
        let dot = |a: &[Complex<T>], b: &[Complex<T>]| {
            a.iter()
                .zip(b.iter())
                .fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| {
                    acc + *x * *y
                })
        };
        let sjv = apply_s(&v, comp_j);
        let mut propagated = sjv;
        for _ in 0..x {
            propagated = self.mat.matvec(&propagated);
            for z in propagated.iter_mut() {
                *z = *z / lambda;
            }
        }
        let siv = apply_s(&v, comp_i);
        let full = dot(&siv, &propagated) / vtv;
        let mean_i = dot(&siv, &v) / vtv;
        let mean_j = dot(&apply_s(&v, comp_j), &v) / vtv;
        Ok(full - mean_i * mean_j)
    }

    /// Connected two-point function on a finite free chain of length
    /// `x + 2·pad`, sites placed `pad` from each end — converges to the
    /// infinite-chain value as `pad` grows.
    pub fn two_point_finite_centered(
        &self,
        x: usize,
        comp_i: usize,
        comp_j: usize,
        pad: usize,
    ) -> Result<Complex<T>, TransferError> {
        let length = x + 2 * pad + 1;
        let a = pad;
        let b = pad + x;
        let s = &self.sqrt_weights;
        let apply_s = |w: &[Complex<T>], comp: usize| -> Vec<Complex<T>> {
            w.iter()
                .enumerate()
                .map(|(k, z)| *z * self.spins[k][comp])
                .collect()
        };
        // Left-to-right partial products; renormalize to dodge overflow.
        let mut scale_log = T::zero();
        let mut left = s.clone();
        let renorm = |v: &mut Vec<Complex<T>>, log: &mut T| {
            let norm = v.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt();
            if norm > T::zero() {
                for z in v.iter_mut() {
                    *z = *z / norm;
                }
                *log = *log + norm.ln();
            }
        };
        renorm(&mut left, &mut scale_log);
        let mut z_v = left.clone();
        let mut z_log = scale_log;
        let mut num_v = left.clone();
        let mut num_log = scale_log;
        let mut ma_v = left.clone();
        let mut ma_log = scale_log;
        let mut mb_v = left;
        let mut mb_log = scale_log;
        for site in 0..length {
            if site > 0 {
                z_v = self.mat.matvec(&z_v);
                renorm(&mut z_v, &mut z_log);
                num_v = self.mat.matvec(&num_v);
                renorm(&mut num_v, &mut num_log);
                ma_v = self.mat.matvec(&ma_v);
                renorm(&mut ma_v, &mut ma_log);
                mb_v = self.mat.matvec(&mb_v);
                renorm(&mut mb_v, &mut mb_log);
            }
            if site == a {
                num_v = apply_s(&num_v, comp_i);
                ma_v = apply_s(&ma_v, comp_i);
            }
            if site == b {
                num_v = apply_s(&num_v, comp_j);
                mb_v = apply_s(&mb_v, comp_j);
            }
        }
        let close = |v: &[Complex<T>]| {
            v.iter()
                .zip(s.iter())
                .fold(Complex::new(T::zero(), T::zero()), |acc, (x, w)| {
                    acc + *x * *w
                })
        };
        let zc = close(&z_v);
        let ratio = |v: Complex<T>, vlog: T| {
            v / zc * Complex::new((vlog - z_log).exp(), T::zero())
        };
        let full = ratio(close(&num_v), num_log);
        let mean_a = ratio(close(&ma_v), ma_log);
        let mean_b = ratio(close(&mb_v), mb_log);
        Ok(full - mean_a * mean_b)
    }
}

/// Mass gap from the transfer spectrum: `m = log |λ₁/λ₂|`, `+∞` when the
/// operator is numerically rank one, [`TransferError::DegenerateTop`] when
/// the top moduli coincide within 1e−12 relative.
pub fn spectral_mass_gap<T: Scalar>(model: &ValidatedModel<T>) -> Result<T, TransferError> {
    let op = build_transfer(model)?;
    mass_gap_of_eigenvalues(&op.eigenvalues()?)
}

/// The gap rule, factored out for reuse by scans that already hold a
/// spectrum.
pub fn mass_gap_of_eigenvalues<T: Scalar>(eigs: &[Complex<T>]) -> Result<T, TransferError> {
    if eigs.len() < 2 {
        return Ok(T::infinity());
    }
    let l1 = eigs[0].norm();
    let l2 = eigs[1].norm();
    if l2 <= lit::<T>(1e-14) * l1 {
        return Ok(T::infinity());
    }
    if (l1 - l2).abs() <= lit::<T>(1e-12) * l1 {
        return Err(TransferError::DegenerateTop);
    }
    Ok((l1 / l2).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact;
    use crate::model::{Boundary, CouplingSet, LatticeBox, ModelSpec, SiteMeasure};
    use crate::C64;

    fn assert_close(a: C64, b: C64, tol: f64) {
        assert!((a - b).norm() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn ising_chain(n: usize, boundary: Boundary, beta: f64, j: f64, h: C64) -> crate::Model64 {
        ModelSpec::new(
            LatticeBox::new(vec![n], boundary),
            SiteMeasure::ising(),
            CouplingSet::nearest_neighbor(1, j),
            beta,
            h,
        )
        .validate()
        .unwrap()
    }

    #[test]
    fn chain_gap_closed_form() {
        // Ising, βJ = 1, h = 0: eigenvalues (e ± e⁻¹)/2 (weights 1/2), so
        // m = log coth(1).
        let model = ising_chain(8, Boundary::Periodic, 1.0, 1.0, C64::new(0.0, 0.0));
        let m = spectral_mass_gap(&model).unwrap();
        let expect = (1.0f64 / 1.0f64.tanh()).ln();
        assert!((m - expect).abs() < 1e-13, "{m} vs {expect}");
    }

    #[test]
    fn infinite_gap_for_decoupled_sites() {
        let model = ising_chain(8, Boundary::Periodic, 1.0, 0.0, C64::new(0.5, 0.0));
        let m = spectral_mass_gap(&model).unwrap();
        assert!(m.is_infinite());
    }

    #[test]
    fn trace_matches_enumerated_partition_function() {
        for h in [C64::new(0.7, 0.0), C64::new(0.4, 0.9)] {
            let model = ising_chain(4, Boundary::Periodic, 1.0, 0.8, h);
            let op = build_transfer(&model).unwrap();
            let via_trace = op.partition_function();
            let via_enum = exact::partition_function(&model, |_| C64::new(1.0, 0.0)).unwrap();
            assert_close(via_trace, via_enum, 1e-13 * via_enum.norm().max(1.0));
        }
    }

    #[test]
    fn free_chain_product_matches_enumeration() {
        let model = ising_chain(5, Boundary::Free, 1.0, 1.1, C64::new(0.3, 0.4));
        let op = build_transfer(&model).unwrap();
        assert_close(
            op.partition_function(),
            exact::partition_function(&model, |_| C64::new(1.0, 0.0)).unwrap(),
            1e-13,
        );
    }

    #[test]
    fn two_point_closed_form_at_zero_field() {
        // Infinite Ising chain at h = 0: ⟨s₀ s_x⟩ = tanh(βJ)^x.
        let model = ising_chain(4, Boundary::Periodic, 1.0, 1.0, C64::new(0.0, 0.0));
        let op = build_transfer(&model).unwrap();
        for x in 1..=5 {
            let g = op.two_point_infinite(x, 0, 0).unwrap();
            let expect = 1.0f64.tanh().powi(x as i32);
            assert_close(g, C64::new(expect, 0.0), 1e-12);
        }
    }

    #[test]
    fn two_point_decay_rate_matches_gap() {
        // |G(x)|/|G(x+1)| = e^m exactly for q = 2 (single subleading
        // eigenvalue), including at complex field. At short separations the
        // connected part is well above the cancellation noise of the mean
        // subtraction, so the identity holds to ~1e−12; at x = 8 the
        // connected part is ~1e−8 of the disconnected one and the identity
        // is cancellation-limited.
        let model = ising_chain(4, Boundary::Periodic, 1.0, 1.0, C64::new(1.0, 0.3));
        let op = build_transfer(&model).unwrap();
        let m = spectral_mass_gap(&model).unwrap();
        let g2 = op.two_point_infinite(2, 0, 0).unwrap();
        let g3 = op.two_point_infinite(3, 0, 0).unwrap();
        let short = (g2.norm() / g3.norm()).ln();
        assert!((short - m).abs() < 1e-10, "{short} vs {m}");
        let g8 = op.two_point_infinite(8, 0, 0).unwrap();
        let g9 = op.two_point_infinite(9, 0, 0).unwrap();
        let long = (g8.norm() / g9.norm()).ln();
        assert!((long - m).abs() < 1e-6, "{long} vs {m}");
    }

    #[test]
    fn finite_centered_agrees_with_infinite() {
        let model = ising_chain(4, Boundary::Periodic, 1.0, 0.9, C64::new(0.5, 0.2));
        let op = build_transfer(&model).unwrap();
        let a = op.two_point_infinite(3, 0, 0).unwrap();
        let b = op.two_point_finite_centered(3, 0, 0, 40).unwrap();
        assert_close(a, b, 1e-12);
    }

    #[test]
    fn strip_trace_matches_enumeration() {
        // 3×2 periodic torus via width-2 super-sites.
        let model = ModelSpec::new(
            LatticeBox::new(vec![3, 2], Boundary::Periodic),
            SiteMeasure::ising(),
            CouplingSet::nearest_neighbor(2, 0.6),
            1.0,
            C64::new(0.4, 0.3),
        )
        .validate()
        .unwrap();
        let op = build_transfer(&model).unwrap();
        assert_eq!(op.q(), 4);
        let via_trace = op.partition_function();
        let via_enum = exact::partition_function(&model, |_| C64::new(1.0, 0.0)).unwrap();
        assert_close(via_trace, via_enum, 1e-12 * via_enum.norm().max(1.0));
        // Free strip too.
        let model = ModelSpec::new(
            LatticeBox::new(vec![4, 2], Boundary::Free),
            SiteMeasure::ising(),
            CouplingSet::nearest_neighbor(2, 0.6),
            1.0,
            C64::new(0.4, 0.3),
        )
        .validate()
        .unwrap();
        let op = build_transfer(&model).unwrap();
        assert_close(
            op.partition_function(),
            exact::partition_function(&model, |_| C64::new(1.0, 0.0)).unwrap(),
            1e-12,
        );
    }

    #[test]
    fn beyond_nearest_neighbor_is_rejected() {
        let model = ModelSpec::new(
            LatticeBox::new(vec![6], Boundary::Periodic),
            SiteMeasure::ising(),
            CouplingSet::new(3, vec![(vec![1], vec![1.0]), (vec![2], vec![0.2])]).unwrap(),
            1.0,
            C64::new(0.0, 0.0),
        )
        .validate()
        .unwrap();
        assert!(matches!(
            build_transfer(&model),
            Err(TransferError::NotAChain(_))
        ));
    }
}
