//! Zero structure of the partition function in the fugacity variable, and
//! wedge certificates for the Laplace transform of the single-site measure.
//!
//! For a two-atom (±1) site measure the field dependence of the partition
//! function factors through the fugacity `z = e^{βh}`:
//!
//! ```text
//! z^{|Λ|} · Z(h) / Z_0 = Σ_{k=0}^{|Λ|} c_k z^{2k} =: P(z),   c_k > 0,
//! ```
//!
//! where `k` counts up-spins and `c_k` sums the coupling Boltzmann weights
//! over configurations with exactly `k` up-spins. For ferromagnetic
//! couplings every root of `P` lies on the unit circle; this module computes
//! the roots to high accuracy (companion-matrix eigenvalues in `ζ = z²`
//! polished by simultaneous Newton iteration) together with per-root
//! residuals, so the circle property can be *measured* rather than assumed.
//!
//! The wedge certificate quantifies how far the Laplace transform `μ̂₀` of a
//! general site measure stays from zero on a segment tilted into the complex
//! plane:
//!
//! ```text
//! κ(u, α) = max_{|v| ≤ u·tan α} μ̂₀(u) / |μ̂₀(u + iv)|,
//! ```
//!
//! finite κ on a wedge of half-angle α is the hypothesis under which the
//! large-field expansion converges.

use crate::linalg;
use crate::model::{self, ModelError, SiteMeasure, ValidatedModel};
use crate::scalar::{lit, Scalar};
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LeeYangError {
    #[error("fugacity polynomial needs a two-atom ±1 site measure with equal weights")]
    NotIsingType,
    #[error("{n_sites} sites exceed the exact-polynomial cap of {cap}")]
    TooManySites { n_sites: usize, cap: usize },
    #[error("Laplace transform vanishes on the probe segment at v = {v}")]
    DenominatorZero { v: f64 },
    #[error("no wedge with κ ≤ {kappa_cap} found above u₀ = {u0}")]
    NoWedgeFound { u0: f64, kappa_cap: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

/// Sites cap for exact polynomial extraction (2^cap configurations).
pub const POLY_SITE_CAP: usize = 12;

/// The polynomial `P(z) = Σ c_k z^{2k}` with positive coefficients; `c_k`
/// are stored divided by their maximum, recorded in `scale`.
#[derive(Debug, Clone)]
pub struct FugacityPolynomial<T: Scalar> {
    coeffs: Vec<T>,
    n_sites: usize,
    scale: T,
    beta: T,
}

/// One root of the fugacity polynomial with diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroReport<T: Scalar> {
    /// Root in the fugacity variable.
    pub z: Complex<T>,
    /// Corresponding field, `h = Log(z)/β` on the principal branch.
    pub h: Complex<T>,
    /// Relative residual `|P(z)| / Σ_k |c_k| |z|^{2k}`.
    pub residual: T,
}

/// Extracts the fugacity polynomial of a model built on the two-atom ±1
/// measure by enumerating configurations grouped by up-spin count. The
/// external field of the model is ignored: the polynomial carries the whole
/// field dependence.
pub fn fugacity_polynomial<T: Scalar>(
    model: &ValidatedModel<T>,
) -> Result<FugacityPolynomial<T>, LeeYangError> {
    let atoms = model.measure().atoms();
    let ok = model.measure().n_components() == 1
        && atoms.len() == 2
        && {
            let mut pts: Vec<T> = atoms.iter().map(|(p, _)| p[0]).collect();
            pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pts == vec![-T::one(), T::one()] && (atoms[0].1 - atoms[1].1).abs() <= T::epsilon()
        };
    if !ok {
        return Err(LeeYangError::NotIsingType);
    }
    let n = model.site_count();
    if n > POLY_SITE_CAP {
        return Err(LeeYangError::TooManySites {
            n_sites: n,
            cap: POLY_SITE_CAP,
        });
    }
    // Index of the atom at +1.
    let up = usize::from(atoms[0].0[0] < T::zero());
    let beta = model.beta();
    let atom_weight = atoms[0].1;
    let mut coeffs = vec![T::zero(); n + 1];
    for mask in 0u32..(1u32 << n) {
        let config: Vec<usize> = (0..n)
            .map(|s| if mask >> s & 1 == 1 { up } else { 1 - up })
            .collect();
        let energy = model.hamiltonian(&config)?;
        let k = mask.count_ones() as usize;
        coeffs[k] = coeffs[k] + (-beta * energy).exp();
    }
    let weight_product = atom_weight.powi(n as i32);
    for c in coeffs.iter_mut() {
        *c = *c * weight_product;
    }
    let scale = coeffs
        .iter()
        .fold(T::zero(), |acc, c| if *c > acc { *c } else { acc });
    for c in coeffs.iter_mut() {
        *c = *c / scale;
    }
    Ok(FugacityPolynomial {
        coeffs,
        n_sites: n,
        scale,
        beta,
    })
}

impl<T: Scalar> FugacityPolynomial<T> {
    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// `P(z)` by Horner evaluation in `ζ = z²`.
    pub fn eval(&self, z: Complex<T>) -> Complex<T> {
        let zeta = z * z;
        let mut acc = Complex::new(T::zero(), T::zero());
        for c in self.coeffs.iter().rev() {
            acc = acc * zeta + Complex::new(*c, T::zero());
        }
        acc
    }

    /// Relative residual of `P` at `z` against the positive-coefficient
    /// majorant `Σ |c_k| |z|^{2k}`.
    pub fn relative_residual(&self, z: Complex<T>) -> T {
        let r2 = z.norm_sqr();
        let mut majorant = T::zero();
        for c in self.coeffs.iter().rev() {
            majorant = majorant * r2 + c.abs();
        }
        self.eval(z).norm() / majorant
    }

    /// All `2·|Λ|` roots in `z`, with fields and residuals. Roots are found
    /// as eigenvalues of the balanced companion matrix of the degree-|Λ|
    /// polynomial in `ζ = z²`, then polished by the Aberth–Ehrlich
    /// simultaneous iteration; each `ζ` root contributes `±√ζ`.
    pub fn zeros(&self) -> Result<Vec<ZeroReport<T>>, LeeYangError> {
        let n = self.n_sites;
        let lead = self.coeffs[n];
        let monic: Vec<Complex<T>> = self.coeffs[..n]
            .iter()
            .map(|c| Complex::new(*c / lead, T::zero()))
            .collect();
        let companion = linalg::companion(&monic);
        let mut zeta = linalg::eigenvalues(&companion)?;
        self.polish_zeta(&mut zeta);
        let mut reports: Vec<ZeroReport<T>> = Vec::with_capacity(2 * n);
        for root in zeta {
            let s = root.sqrt();
            for z in [s, -s] {
                let h = z.ln() / Complex::new(self.beta, T::zero());
                reports.push(ZeroReport {
                    z,
                    h,
                    residual: self.relative_residual(z),
                });
            }
        }
        reports.sort_by(|a, b| {
            let (aa, ab) = (a.z.arg(), b.z.arg());
            aa.partial_cmp(&ab)
                .unwrap()
                .then_with(|| a.z.norm().partial_cmp(&b.z.norm()).unwrap())
        });
        Ok(reports)
    }

    fn eval_zeta(&self, zeta: Complex<T>) -> (Complex<T>, Complex<T>) {
        let mut p = Complex::new(T::zero(), T::zero());
        let mut dp = Complex::new(T::zero(), T::zero());
        for c in self.coeffs.iter().rev() {
            dp = dp * zeta + p;
            p = p * zeta + Complex::new(*c, T::zero());
        }
        (p, dp)
    }

    fn polish_zeta(&self, roots: &mut [Complex<T>]) {
        let n = roots.len();
        let tol = T::epsilon() * lit::<T>(4.0);
        for _ in 0..60 {
            let mut max_step = T::zero();
            for i in 0..n {
                let zi = roots[i];
                let (p, dp) = self.eval_zeta(zi);
                if p.norm() == T::zero() {
                    continue;
                }
                let newton = if dp.norm() > T::zero() {
                    p / dp
                } else {
                    continue;
                };
                let mut repulsion = Complex::new(T::zero(), T::zero());
                for (j, zj) in roots.iter().enumerate() {
                    if j != i {
                        let d = zi - *zj;
                        if d.norm() > T::zero() {
                            repulsion = repulsion + Complex::new(T::one(), T::zero()) / d;
                        }
                    }
                }
                let denom = Complex::new(T::one(), T::zero()) - newton * repulsion;
                let step = if denom.norm() > lit::<T>(1e-30) {
                    newton / denom
                } else {
                    newton
                };
                roots[i] = zi - step;
                let rel = step.norm() / zi.norm().max(T::one());
                if rel > max_step {
                    max_step = rel;
                }
            }
            if max_step <= tol {
                break;
            }
        }
    }
}

/// A certified wedge for the site measure: on the segment
/// `ũ + iv, |v| ≤ ũ·tan α̃`, the Laplace transform satisfies
/// `|μ̂₀(ũ + iv)| ≥ μ̂₀(ũ)/κ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WedgeCertificate {
    /// Lower edge of the apex search: only `u > u0` was probed.
    pub u0: f64,
    /// Certified half-angle `α̃(u0)`, in `(0, π/2)`.
    pub alpha_tilde: f64,
    /// Certified apex distance `ũ(u0) > u0`: the probed segment sits at
    /// `Re z = ũ`.
    pub u_tilde: f64,
    /// Certified distortion constant at `(ũ, α̃)`.
    pub kappa: f64,
    /// Search-grid resolution behind the certificate.
    pub grid: WedgeGridInfo,
}

/// Resolution metadata for a wedge search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WedgeGridInfo {
    /// Linear α-grid points scanned downward in `(0, π/2)`.
    pub alpha_steps: usize,
    /// Geometric u-grid points scanned upward in `(u0, 64·u0]`.
    pub u_steps: usize,
    /// Absolute stabilization tolerance of the κ segment maximum.
    pub kappa_tol: f64,
}

/// The pointwise distortion factor `M_w = μ̂₀(Re w) / |μ̂₀(w)|` (≥ 1 since
/// the atom weights are positive). The argument is the tilt `w = β·h`.
pub fn m_factor<T: Scalar>(measure: &SiteMeasure<T>, w: Complex<T>) -> Result<T, LeeYangError> {
    let reference = model::laplace_transform(measure, Complex::new(w.re, T::zero())).norm();
    let denom = model::laplace_transform(measure, w).norm();
    if denom <= lit::<T>(1e-12) * reference {
        return Err(LeeYangError::DenominatorZero {
            v: w.im.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(reference / denom)
}

/// Computes `κ(u, α)` by sampling `|v| ≤ u·tan α` on a dyadically refined
/// grid until the maximum stabilizes to 1e−6.
pub fn kappa_of_wedge<T: Scalar>(
    measure: &SiteMeasure<T>,
    u: T,
    alpha: T,
) -> Result<T, LeeYangError> {
    let reference = model::laplace_transform(measure, Complex::new(u, T::zero())).norm();
    let vmax = u * alpha.tan();
    let floor = lit::<T>(1e-12) * reference;
    let scan = |points: usize| -> Result<T, LeeYangError> {
        let mut best = T::zero();
        for i in 0..=points {
            let frac = lit::<T>(2.0) * lit::<T>(i as f64) / lit::<T>(points as f64) - T::one();
            let v = vmax * frac;
            let denom = model::laplace_transform(measure, Complex::new(u, v)).norm();
            if denom <= floor {
                return Err(LeeYangError::DenominatorZero {
                    v: v.to_f64().unwrap_or(f64::NAN),
                });
            }
            let ratio = reference / denom;
            if ratio > best {
                best = ratio;
            }
        }
        Ok(best)
    };
    let mut points = 128usize;
    let mut prev = scan(points)?;
    loop {
        points *= 2;
        let next = scan(points)?;
        if (next - prev).abs() <= lit::<T>(1e-6) || points >= 1 << 14 {
            return Ok(next);
        }
        prev = next;
    }
}

/// Searches for wedge parameters: α is scanned downward over a linear grid
/// in `(0, π/2)` and, for each α, `u` upward over a geometric grid in
/// `(u₀, 64·u₀]`; the first feasible pair (κ ≤ cap) is certified. This
/// prefers wide wedges with small apex distance.
pub fn find_wedge_params<T: Scalar>(
    measure: &SiteMeasure<T>,
    u0: T,
    kappa_cap: T,
) -> Result<WedgeCertificate, LeeYangError> {
    const ALPHA_STEPS: usize = 47;
    const U_STEPS: usize = 48;
    let half_pi = T::FRAC_PI_2();
    for ai in (1..=ALPHA_STEPS).rev() {
        let alpha = half_pi * lit::<T>(ai as f64) / lit::<T>((ALPHA_STEPS + 1) as f64);
        for uj in 0..U_STEPS {
            let exponent = lit::<T>((uj + 1) as f64) / lit::<T>(U_STEPS as f64);
            let u = u0 * lit::<T>(64.0).powf(exponent);
            match kappa_of_wedge(measure, u, alpha) {
                Ok(kappa) if kappa <= kappa_cap => {
                    return Ok(WedgeCertificate {
                        u0: u0.to_f64().unwrap_or(f64::NAN),
                        alpha_tilde: alpha.to_f64().unwrap_or(f64::NAN),
                        u_tilde: u.to_f64().unwrap_or(f64::NAN),
                        kappa: kappa.to_f64().unwrap_or(f64::NAN),
                        grid: WedgeGridInfo {
                            alpha_steps: ALPHA_STEPS,
                            u_steps: U_STEPS,
                            kappa_tol: 1e-6,
                        },
                    });
                }
                Ok(_) | Err(LeeYangError::DenominatorZero { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Err(LeeYangError::NoWedgeFound {
        u0: u0.to_f64().unwrap_or(f64::NAN),
        kappa_cap: kappa_cap.to_f64().unwrap_or(f64::NAN),
    })
}
