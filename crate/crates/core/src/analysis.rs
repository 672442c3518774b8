//! Decay analysis: wedge domains and maximum-principle checks, parameter
//! selection, mass-gap and tree-decay fits, and the critical-exponent
//! ratio scan.
//!
//! The central geometric object is the truncated wedge Σ_α: the open
//! triangle with vertices 0 and p± = η(1 ± i·tan α), minus the closed disk
//! of radius δ around the origin. Its boundary decomposes into the arc γ_c
//! (modulus δ), two radial segments γ_r (argument ±α), and the vertical
//! segment γ_v (real part η). On Σ_α the comparison function
//! `𝓕(z) = exp(ε z^{π/2α} |x|)·⟨φ⁰_0; φ^j_x⟩_z` is analytic, its modulus is
//! controlled on the boundary pieces, and the maximum principle transfers
//! the boundary bound to the interior — which is checked here numerically
//! on dense samples.

use crate::exact::{self, ExactError};
use crate::leeyang::WedgeCertificate;
use crate::model::{Boundary, ModelError, ModelSpec, Site, ValidatedModel};
use crate::scalar::{lit, Scalar};
use crate::transfer::{self, TransferError};
use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("Re h = {re_h} is not in the open right half-plane")]
    OutsideHalfPlane { re_h: f64 },
    #[error(
        "interior sample {interior_max:.6e} exceeds boundary bound {bound:.6e} \
         at z = {at_re}+{at_im}i after refinement"
    )]
    SampleTooCoarse {
        interior_max: f64,
        bound: f64,
        at_re: f64,
        at_im: f64,
    },
    #[error("only {usable} usable samples, need at least {needed}")]
    InsufficientData { usable: usize, needed: usize },
    #[error("fitted slope {slope} is not positive (non-decaying data)")]
    NonDecay { slope: f64 },
    #[error("site {site:?} lies outside the box")]
    SiteOutsideBox { site: Vec<i64> },
    #[error("invalid wedge geometry: {reason}")]
    BadDomain { reason: String },
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ---------------------------------------------------------------------------
// Wedge domain
// ---------------------------------------------------------------------------

/// Truncated wedge Σ_α = triangle(0, p₊, p₋) ∖ D̄_δ(0) with
/// p± = η(1 ± i·tan α).
#[derive(Debug, Clone, Serialize)]
pub struct WedgeDomain<T: Scalar> {
    alpha: T,
    delta: T,
    eta: T,
}

impl<T: Scalar> WedgeDomain<T> {
    pub fn new(alpha: T, delta: T, eta: T) -> Result<Self, AnalysisError> {
        let half_pi = T::FRAC_PI_2();
        if !(alpha > T::zero() && alpha < half_pi) {
            return Err(AnalysisError::BadDomain {
                reason: format!("alpha = {alpha} not in (0, pi/2)"),
            });
        }
        if !(delta > T::zero() && delta < T::one()) {
            return Err(AnalysisError::BadDomain {
                reason: format!("delta = {delta} not in (0, 1)"),
            });
        }
        if !(eta >= T::one()) {
            return Err(AnalysisError::BadDomain {
                reason: format!("eta = {eta} below 1"),
            });
        }
        if !(delta < eta) {
            return Err(AnalysisError::BadDomain {
                reason: format!("delta = {delta} not below eta = {eta}"),
            });
        }
        Ok(WedgeDomain { alpha, delta, eta })
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    /// Upper corner p₊ = η(1 + i·tan α).
    pub fn p_plus(&self) -> Complex<T> {
        Complex::new(self.eta, self.eta * self.alpha.tan())
    }

    /// Lower corner p₋ = η(1 − i·tan α).
    pub fn p_minus(&self) -> Complex<T> {
        self.p_plus().conj()
    }

    /// Points on the arc γ_c: modulus δ, argument in [−α, α].
    pub fn gamma_c_samples(&self, n: usize) -> Vec<Complex<T>> {
        let n = n.max(2);
        (0..n)
            .map(|k| {
                let frac = lit::<T>(k as f64) / lit::<T>((n - 1) as f64);
                let theta = (lit::<T>(2.0) * frac - T::one()) * self.alpha;
                Complex::from_polar(self.delta, theta)
            })
            .collect()
    }

    /// Points on one radial segment γ_r: fixed unit direction e^{±iα},
    /// radius from δ to η/cos α inclusive.
    pub fn gamma_r_samples(&self, n: usize, upper: bool) -> Vec<Complex<T>> {
        let n = n.max(2);
        let dir = if upper {
            Complex::new(self.alpha.cos(), self.alpha.sin())
        } else {
            Complex::new(self.alpha.cos(), -self.alpha.sin())
        };
        let r_max = self.eta / self.alpha.cos();
        (0..n)
            .map(|k| {
                let frac = lit::<T>(k as f64) / lit::<T>((n - 1) as f64);
                let r = self.delta + (r_max - self.delta) * frac;
                dir * r
            })
            .collect()
    }

    /// Points on the vertical segment γ_v: real part exactly η,
    /// imaginary part from −η·tan α to +η·tan α inclusive.
    pub fn gamma_v_samples(&self, n: usize) -> Vec<Complex<T>> {
        let n = n.max(2);
        let top = self.eta * self.alpha.tan();
        (0..n)
            .map(|k| {
                let frac = lit::<T>(k as f64) / lit::<T>((n - 1) as f64);
                let v = (lit::<T>(2.0) * frac - T::one()) * top;
                Complex::new(self.eta, v)
            })
            .collect()
    }

    /// A closed boundary walk of roughly `n` points: γ_c, then the upper
    /// ray, γ_v from p₊ to p₋, and the lower ray back to the arc. Piece
    /// endpoints are shared, so corner points appear exactly once.
    pub fn boundary_samples(&self, n: usize) -> Vec<Complex<T>> {
        let len_c = (lit::<T>(2.0) * self.alpha * self.delta).to_f64().unwrap();
        let len_r = (self.eta / self.alpha.cos() - self.delta).to_f64().unwrap();
        let len_v = (lit::<T>(2.0) * self.eta * self.alpha.tan()).to_f64().unwrap();
        let total = len_c + 2.0 * len_r + len_v;
        let share = |piece: f64| -> usize {
            ((n as f64 * piece / total).round() as usize).max(2)
        };
        let arc = self.gamma_c_samples(share(len_c));
        let ray_up = self.gamma_r_samples(share(len_r), true);
        let mut vertical = self.gamma_v_samples(share(len_v));
        vertical.reverse(); // walk from p₊ down to p₋
        let mut ray_down = self.gamma_r_samples(share(len_r), false);
        ray_down.reverse();

        let mut out = Vec::new();
        out.extend_from_slice(&arc); // ends at δe^{iα}
        out.extend_from_slice(&ray_up[1..]); // δe^{iα} shared, ends at p₊
        out.extend_from_slice(&vertical[1..]); // p₊ shared, ends at p₋
        out.extend_from_slice(&ray_down[1..ray_down.len() - 1]); // both shared
        out
    }

    /// Interior grid: along each angle θ strictly inside (−α, α), radii
    /// strictly between δ and η/cos θ, inset from both boundaries.
    pub fn interior_samples(&self, n: usize) -> Vec<Complex<T>> {
        let k_theta = ((n as f64).sqrt().ceil() as usize).max(2);
        let k_r = n.div_ceil(k_theta).max(2);
        let inset = lit::<T>(0.04);
        let mut out = Vec::with_capacity(k_theta * k_r);
        for i in 0..k_theta {
            let frac = (lit::<T>(i as f64) + lit::<T>(0.5)) / lit::<T>(k_theta as f64);
            let theta = (lit::<T>(2.0) * frac - T::one()) * self.alpha * (T::one() - inset);
            let r_max = self.eta / theta.cos();
            let lo = self.delta * (T::one() + inset);
            let hi = r_max * (T::one() - inset) + self.delta * inset;
            for j in 0..k_r {
                let rfrac = (lit::<T>(j as f64) + lit::<T>(0.5)) / lit::<T>(k_r as f64);
                let r = lo + (hi - lo) * rfrac;
                out.push(Complex::from_polar(r, theta));
            }
        }
        out
    }

    /// Membership test for the open region.
    pub fn contains(&self, z: Complex<T>) -> bool {
        let r = z.norm();
        r > self.delta && z.re < self.eta && z.arg().abs() < self.alpha
    }
}

/// The boundary comparison profile φ_α(θ) = cos(θπ/2α)/cos(θ)^{π/2α} on
/// [−α, α]: equals 1 at 0, vanishes at ±α, and is nonincreasing in |θ|.
/// `Re(z^{π/2α}) = (η/cos θ)^{π/2α}·cos(θπ/2α)` on γ_v factors through it.
pub fn phi_alpha<T: Scalar>(theta: T, alpha: T) -> T {
    let p = T::FRAC_PI_2() / alpha;
    (theta * p).cos() / theta.cos().powf(p)
}

// ---------------------------------------------------------------------------
// Parameter selection
// ---------------------------------------------------------------------------

/// Parameters chosen for a field h from a wedge certificate and a mass
/// floor m₀.
#[derive(Debug, Clone, Serialize)]
pub struct SelectedParameters<T: Scalar> {
    pub delta: T,
    pub eta: T,
    pub alpha: T,
    pub epsilon: T,
}

impl<T: Scalar> SelectedParameters<T> {
    pub fn domain(&self) -> Result<WedgeDomain<T>, AnalysisError> {
        WedgeDomain::new(self.alpha, self.delta, self.eta)
    }
}

/// Largest real part of z^{π/2α} on the vertical boundary piece, by dense
/// sampling. Since the profile φ_α is nonincreasing this equals η^{π/2α}
/// up to grid resolution; the sampled form keeps the computation honest.
fn sup_re_power_on_gamma_v<T: Scalar>(domain: &WedgeDomain<T>) -> T {
    let p = T::FRAC_PI_2() / domain.alpha();
    domain
        .gamma_v_samples(513)
        .into_iter()
        .map(|z| z.powf(p).re.abs())
        .fold(T::zero(), T::max)
}

/// Parameter selection for a field with Re h > 0.
///
/// Real h: δ = min(1/10, h/2); η and α are the certified values ũ, α̃ of
/// the wedge search, which the caller must have run at u₀ = max(h, c₁).
/// Complex h with 0 < Re h < u₀: η = u₀, α is the smallest certified angle
/// that puts h strictly inside Σ_α, and δ = min(1/10, Re(h^{π/2α})).
/// In both cases ε = min(1, m₀ / sup_{γ_v} |Re(z^{π/2α})|).
pub fn select_parameters<T: Scalar>(
    h: Complex<T>,
    certificate: &WedgeCertificate,
    m0: T,
) -> Result<SelectedParameters<T>, AnalysisError> {
    if !(h.re > T::zero()) {
        return Err(AnalysisError::OutsideHalfPlane {
            re_h: h.re.to_f64().unwrap_or(f64::NAN),
        });
    }
    let tenth = lit::<T>(0.1);
    let u0 = lit::<T>(certificate.u0);
    let (delta, eta, alpha) = if h.im == T::zero() || h.re >= u0 {
        let delta = tenth.min(h.re / lit::<T>(2.0));
        (
            delta,
            lit::<T>(certificate.u_tilde),
            lit::<T>(certificate.alpha_tilde),
        )
    } else {
        // Smallest admissible angle: h must lie strictly inside the cone.
        let arg_h = h.arg().abs();
        let alpha0 = (arg_h * lit::<T>(1.05) + lit::<T>(0.02))
            .min(T::FRAC_PI_2() * lit::<T>(0.999));
        let alpha = lit::<T>(certificate.alpha_tilde).max(alpha0);
        let p = T::FRAC_PI_2() / alpha;
        let delta = tenth.min(h.powf(p).re);
        (delta, u0, alpha)
    };
    if !(delta > T::zero()) {
        return Err(AnalysisError::BadDomain {
            reason: format!("selected delta = {delta} is not positive"),
        });
    }
    let domain = WedgeDomain::new(alpha, delta, eta)?;
    if h.im != T::zero() && h.re < u0 && !domain.contains(h) {
        return Err(AnalysisError::BadDomain {
            reason: format!("h = {h} not inside the selected wedge"),
        });
    }
    let epsilon = T::one().min(m0 / sup_re_power_on_gamma_v(&domain));
    Ok(SelectedParameters {
        delta,
        eta,
        alpha,
        epsilon,
    })
}

// ---------------------------------------------------------------------------
// The comparison function and the maximum-principle check
// ---------------------------------------------------------------------------

fn manhattan(x: &[i64]) -> i64 {
    x.iter().map(|c| c.abs()).sum()
}

/// `𝓕(z) = exp(ε·z^{π/2α}·|x|₁) · ⟨φ⁰_0 ; φ⁰_x⟩_z` on the spec's box with
/// the field replaced by z (principal branch of the power; Re z > 0 keeps
/// it off the cut).
pub fn f_function<T: Scalar>(
    spec: &ModelSpec<T>,
    x: &[i64],
    epsilon: T,
    alpha: T,
    z: Complex<T>,
) -> Result<Complex<T>, AnalysisError> {
    let origin = vec![0i64; spec.lattice.d()];
    let a = spec
        .lattice
        .index_of(&origin)
        .ok_or(AnalysisError::SiteOutsideBox { site: origin })?;
    let b = spec
        .lattice
        .index_of(x)
        .ok_or_else(|| AnalysisError::SiteOutsideBox { site: x.to_vec() })?;
    let model = spec.with_field(z).validate()?;
    let two_point = exact::connected_two_point(&model, a, b, 0, 0)?;
    let p = T::FRAC_PI_2() / alpha;
    let prefactor = (z.powf(p) * epsilon * lit::<T>(manhattan(x) as f64)).exp();
    Ok(prefactor * two_point)
}

/// Result of a numerical maximum-principle check.
#[derive(Debug, Clone, Serialize)]
pub struct MaxPrincipleReport<T: Scalar> {
    pub boundary_max: T,
    pub interior_max: T,
    /// `boundary_max·(1+1e−9) − interior_max` (nonnegative on pass).
    pub margin: T,
    pub boundary_argmax: Complex<T>,
    pub interior_argmax: Complex<T>,
    pub boundary_points: usize,
    pub interior_points: usize,
    /// Whether the passing sample came from the automatic refinement pass.
    pub refined: bool,
}

fn sampled_max<T: Scalar>(
    spec: &ModelSpec<T>,
    x: &[i64],
    epsilon: T,
    alpha: T,
    points: &[Complex<T>],
) -> Result<(T, Complex<T>), AnalysisError> {
    let values: Vec<T> = points
        .par_iter()
        .map(|&z| f_function(spec, x, epsilon, alpha, z).map(|f| f.norm()))
        .collect::<Result<_, _>>()?;
    let mut best = (T::neg_infinity(), Complex::new(T::zero(), T::zero()));
    for (z, v) in points.iter().zip(values.iter()) {
        if *v > best.0 {
            best = (*v, *z);
        }
    }
    Ok(best)
}

/// Checks |𝓕| ≤ max_boundary|𝓕|·(1+1e−9) on an interior sample. On
/// failure the sample densities are doubled once; if the refined check
/// still fails, the result is a `SampleTooCoarse` error (never a silent
/// pass).
pub fn max_principle_check<T: Scalar>(
    spec: &ModelSpec<T>,
    x: &[i64],
    domain: &WedgeDomain<T>,
    epsilon: T,
    boundary_points: usize,
    interior_points: usize,
) -> Result<MaxPrincipleReport<T>, AnalysisError> {
    let slack = T::one() + lit::<T>(1e-9);
    let mut refined = false;
    let (mut n_b, mut n_i) = (boundary_points.max(4), interior_points.max(4));
    loop {
        let boundary = domain.boundary_samples(n_b);
        let interior = domain.interior_samples(n_i);
        let (b_max, b_at) = sampled_max(spec, x, epsilon, domain.alpha(), &boundary)?;
        let (i_max, i_at) = sampled_max(spec, x, epsilon, domain.alpha(), &interior)?;
        let bound = b_max * slack;
        if i_max <= bound {
            return Ok(MaxPrincipleReport {
                boundary_max: b_max,
                interior_max: i_max,
                margin: bound - i_max,
                boundary_argmax: b_at,
                interior_argmax: i_at,
                boundary_points: boundary.len(),
                interior_points: interior.len(),
                refined,
            });
        }
        if refined {
            return Err(AnalysisError::SampleTooCoarse {
                interior_max: i_max.to_f64().unwrap_or(f64::NAN),
                bound: bound.to_f64().unwrap_or(f64::NAN),
                at_re: i_at.re.to_f64().unwrap_or(f64::NAN),
                at_im: i_at.im.to_f64().unwrap_or(f64::NAN),
            });
        }
        refined = true;
        n_b *= 2;
        n_i *= 2;
    }
}

// ---------------------------------------------------------------------------
// Decay fits
// ---------------------------------------------------------------------------

/// Least-squares decay fit of −log|correlation| against a distance-like
/// abscissa.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit<T: Scalar> {
    /// (abscissa, −log|value|) pairs actually used.
    pub samples: Vec<(T, T)>,
    pub slope: T,
    pub intercept: T,
    /// Abscissa range spanned by the fit window.
    pub window: (usize, usize),
    /// RMS of fit residuals.
    pub residual: T,
}

impl<T: Scalar> DecayFit<T> {
    fn infinite_sentinel() -> Self {
        DecayFit {
            samples: Vec::new(),
            slope: T::infinity(),
            intercept: T::zero(),
            window: (0, 0),
            residual: T::zero(),
        }
    }
}

fn least_squares_fit<T: Scalar>(samples: Vec<(T, T)>) -> Result<DecayFit<T>, AnalysisError> {
    let n = lit::<T>(samples.len() as f64);
    let (mut sx, mut sy, mut sxx, mut sxy) = (T::zero(), T::zero(), T::zero(), T::zero());
    for &(x, y) in &samples {
        sx = sx + x;
        sy = sy + y;
        sxx = sxx + x * x;
        sxy = sxy + x * y;
    }
    let denom = n * sxx - sx * sx;
    if denom == T::zero() {
        return Err(AnalysisError::InsufficientData {
            usable: samples.len(),
            needed: 4,
        });
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mut ss = T::zero();
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for &(x, y) in &samples {
        let r = y - (slope * x + intercept);
        ss = ss + r * r;
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let residual = (ss / n).sqrt();
    if !(slope > T::zero()) {
        return Err(AnalysisError::NonDecay {
            slope: slope.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(DecayFit {
        window: (
            lo.to_f64().unwrap_or(0.0) as usize,
            hi.to_f64().unwrap_or(0.0) as usize,
        ),
        samples,
        slope,
        intercept,
        residual,
    })
}

fn state_count<T: Scalar>(model: &ValidatedModel<T>) -> f64 {
    (model.measure().n_atoms() as f64).powi(model.site_count() as i32)
}

/// Relative noise floor for connected two-point values. The only rounding
/// sources are the moment enumerations themselves, whose errors accumulate
/// like a random walk over the configuration sum, so values below
/// `16·√n_states·ε` times the cancellation scale (but at least `2^-44`
/// times it) are rounding residue, not signal.
fn two_point_noise_floor<T: Scalar>(model: &ValidatedModel<T>) -> T {
    lit::<T>((16.0 * state_count(model).sqrt() * f64::EPSILON).max(5.684341886080802e-14))
}

/// Relative noise floor for general connected correlations. The subset-moment
/// recursion compounds the per-moment rounding across all subset products, so
/// its error tracks the full state count: values below `8·n_states·ε` times
/// the cancellation scale (but at least `2^-40` times it) are cancellation
/// residue, not signal.
fn ursell_noise_floor<T: Scalar>(model: &ValidatedModel<T>) -> T {
    lit::<T>((8.0 * state_count(model) * f64::EPSILON).max(9.094947017729282e-13))
}

fn above_noise<T: Scalar>(value: Complex<T>, scale: T, floor: T) -> bool {
    value.norm() > floor * scale
}

/// Mass-gap estimate: fits −log|⟨φ⁰_0;φ⁰_x⟩| against |x| over the usable
/// separations of each supplied volume, pooled. Window rule: with free
/// boundary conditions the pair is centered and both endpoints must stay
/// at least r+1 sites from the boundary; with periodic boundary conditions
/// only |x| ≤ L/4 is used. Returns the +∞ sentinel when every usable
/// correlation vanishes (decoupled sites).
pub fn mass_gap_fit<T: Scalar>(
    models: &[&ValidatedModel<T>],
    comp_i: usize,
    comp_j: usize,
) -> Result<DecayFit<T>, AnalysisError> {
    let mut samples: Vec<(T, T)> = Vec::new();
    let mut any_usable_pair = false;
    for model in models {
        let lattice = model.lattice();
        if lattice.d() != 1 {
            return Err(AnalysisError::BadDomain {
                reason: "mass_gap_fit expects chains (d = 1)".into(),
            });
        }
        let length = lattice.dims()[0];
        let r = model.spec().couplings.range();
        let mut pairs = Vec::new();
        let mut seps = Vec::new();
        match lattice.boundary() {
            Boundary::Free => {
                for x in 1..length {
                    let a = (length - x) / 2;
                    let b = a + x;
                    if a >= r + 1 && b + r + 1 <= length - 1 + 1 && (length - 1 - b) >= r + 1 {
                        pairs.push((a, b));
                        seps.push(x);
                    }
                }
            }
            Boundary::Periodic => {
                for x in 1..=length / 4 {
                    pairs.push((0, x));
                    seps.push(x);
                }
            }
        }
        if pairs.is_empty() {
            continue;
        }
        any_usable_pair = true;
        let floor = two_point_noise_floor(model);
        let values = exact::two_point_batch(model, &pairs, comp_i, comp_j)?;
        for (x, (value, scale)) in seps.iter().zip(values.iter()) {
            if above_noise(*value, *scale, floor) {
                samples.push((lit::<T>(*x as f64), -value.norm().ln()));
            }
        }
    }
    if samples.is_empty() {
        if any_usable_pair {
            // Geometry offered separations but all correlations vanish.
            return Ok(DecayFit::infinite_sentinel());
        }
        return Err(AnalysisError::InsufficientData {
            usable: 0,
            needed: 4,
        });
    }
    let mut distinct: Vec<T> = samples.iter().map(|s| s.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(AnalysisError::InsufficientData {
            usable: distinct.len(),
            needed: 4,
        });
    }
    least_squares_fit(samples)
}

/// Minimal total Manhattan length over all labeled trees on the points,
/// by direct enumeration of the n^{n−2} Prüfer sequences. n must be in
/// 2..=6.
pub fn tree_length(points: &[Site]) -> u64 {
    let n = points.len();
    assert!((2..=6).contains(&n), "tree_length needs 2..=6 points");
    let dist = |a: usize, b: usize| -> u64 {
        points[a]
            .iter()
            .zip(points[b].iter())
            .map(|(p, q)| (p - q).unsigned_abs())
            .sum()
    };
    if n == 2 {
        return dist(0, 1);
    }
    let seq_len = n - 2;
    let total = (n as u64).pow(seq_len as u32);
    let mut best = u64::MAX;
    let mut seq = vec![0usize; seq_len];
    for code in 0..total {
        let mut rem = code;
        for slot in seq.iter_mut() {
            *slot = (rem % n as u64) as usize;
            rem /= n as u64;
        }
        // Prüfer decoding.
        let mut degree = vec![1u32; n];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut length = 0u64;
        let mut deg = degree.clone();
        for &s in &seq {
            let leaf = (0..n).find(|&v| deg[v] == 1).unwrap();
            length += dist(leaf, s);
            deg[leaf] = 0;
            deg[s] -= 1;
        }
        let mut last = (0..n).filter(|&v| deg[v] == 1);
        let (u, v) = (last.next().unwrap(), last.next().unwrap());
        length += dist(u, v);
        best = best.min(length);
    }
    best
}

/// Tree-decay fit: −log|ursell_n| against the minimal spanning tree length
/// of each point family. Families whose Ursell value sits below the noise
/// floor of its own cancellation scale are dropped; if all are (decoupled
/// sites), the +∞ sentinel is returned.
pub fn tree_decay_fit<T: Scalar>(
    model: &ValidatedModel<T>,
    families: &[Vec<Site>],
    components: &[usize],
) -> Result<DecayFit<T>, AnalysisError> {
    let mut samples: Vec<(T, T)> = Vec::new();
    let floor = ursell_noise_floor(model);
    for family in families {
        let slots: Vec<(usize, usize)> = family
            .iter()
            .zip(components.iter())
            .map(|(site, &comp)| {
                model
                    .lattice()
                    .index_of(site)
                    .map(|idx| (idx, comp))
                    .ok_or_else(|| AnalysisError::SiteOutsideBox { site: site.clone() })
            })
            .collect::<Result<_, _>>()?;
        let result = exact::ursell(model, &slots)?;
        if above_noise(result.value, result.cancellation, floor) {
            samples.push((
                lit::<T>(tree_length(family) as f64),
                -result.value.norm().ln(),
            ));
        }
    }
    if samples.is_empty() {
        // Every family's connected part is pure cancellation residue.
        return Ok(DecayFit::infinite_sentinel());
    }
    let mut distinct: Vec<T> = samples.iter().map(|s| s.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(AnalysisError::InsufficientData {
            usable: distinct.len(),
            needed: 4,
        });
    }
    least_squares_fit(samples)
}

// ---------------------------------------------------------------------------
// Ratio scan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RatioRow<T: Scalar> {
    pub h: Complex<T>,
    pub mass_gap: T,
    pub ratio: T,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioScan<T: Scalar> {
    pub rows: Vec<RatioRow<T>>,
    pub infimum: T,
}

/// Scans the field grid, estimates the mass gap at each point (spectrally
/// where a transfer operator applies, otherwise by decay fit), and reports
/// m/Re h per point together with the grid infimum. Decoupled sites yield
/// the +∞ sentinel everywhere, and the infimum is then +∞ as well.
pub fn ratio_scan<T: Scalar>(
    spec: &ModelSpec<T>,
    h_grid: &[Complex<T>],
) -> Result<RatioScan<T>, AnalysisError> {
    for h in h_grid {
        if !(h.re > T::zero()) {
            return Err(AnalysisError::OutsideHalfPlane {
                re_h: h.re.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    let rows: Vec<RatioRow<T>> = h_grid
        .par_iter()
        .map(|&h| -> Result<RatioRow<T>, AnalysisError> {
            let model = spec.with_field(h).validate()?;
            let gap = match transfer::spectral_mass_gap(&model) {
                Ok(m) => m,
                Err(TransferError::NotAChain(_)) | Err(TransferError::TooManyStates { .. }) => {
                    mass_gap_fit(&[&model], 0, 0)?.slope
                }
                Err(e) => return Err(e.into()),
            };
            let ratio = if gap.is_infinite() { gap } else { gap / h.re };
            Ok(RatioRow {
                h,
                mass_gap: gap,
                ratio,
            })
        })
        .collect::<Result<_, _>>()?;
    let infimum = rows
        .iter()
        .map(|r| r.ratio)
        .fold(T::infinity(), T::min);
    Ok(RatioScan { rows, infimum })
}
