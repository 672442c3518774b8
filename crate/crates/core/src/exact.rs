//! Exact finite-volume reference layer: partition functions, thermal
//! averages and Ursell (connected) correlation functions by direct
//! enumeration of all spin configurations.
//!
//! Enumeration walks the mixed-radix space of atom assignments in fixed
//! lexicographic order, split into fixed-size blocks that are summed
//! serially and then combined in block order. Block boundaries do not depend
//! on the number of worker threads, so results are bit-identical for any
//! thread count.
//!
//! Ursell functions are produced twice, through genuinely different code
//! paths that share only the joint moments: [`ursell`] uses the subset
//! recursion `κ(S) = m(S) − Σ_{T ∋ min S, T ⊊ S} κ(T)·m(S∖T)`, while
//! [`cumulant_oracle`] evaluates the set-partition sum
//! `Σ_π (−1)^{|π|−1} (|π|−1)! Π_B m(B)` directly.

use crate::model::{Boundary, ModelError, ValidatedModel};
use crate::scalar::{lit, Scalar};
use num_complex::Complex;
use rayon::prelude::*;
use std::collections::BTreeMap;
use thiserror::Error;

/// Default cap on the number of enumerated configurations.
pub const DEFAULT_ENUM_BUDGET: u64 = 20_000_000;

/// Configurations per enumeration block. Fixed so that the parallel
/// reduction is independent of thread count.
const BLOCK: u64 = 4096;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("enumeration budget exceeded: {states:.3e} states > {budget:.3e}")]
    BudgetExceeded { states: f64, budget: f64 },
    #[error("partition function vanishes (|Z| = {z_norm:.3e} against mass {mass:.3e})")]
    ZeroPartition { z_norm: f64, mass: f64 },
    #[error("Ursell arity {0} outside the supported range 2..=6")]
    InvalidArity(usize),
    #[error("site index {site} out of range for a volume of {volume} sites")]
    SiteOutOfRange { site: usize, volume: usize },
    #[error("component index {component} out of range (measure has {n_components})")]
    ComponentOutOfRange { component: usize, n_components: usize },
    #[error("moment for subset mask {0:#b} missing from the supplied table")]
    MissingMoment(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Read-only view of one configuration during enumeration.
pub struct SpinView<'a, T: Scalar> {
    atoms: &'a [(Vec<T>, T)],
    config: &'a [usize],
}

impl<'a, T: Scalar> SpinView<'a, T> {
    /// Spin component `comp` (0-based) at site index `site`.
    pub fn spin(&self, site: usize, comp: usize) -> T {
        self.atoms[self.config[site]].0[comp]
    }

    pub fn atom_index(&self, site: usize) -> usize {
        self.config[site]
    }
}

struct BlockSum<T: Scalar> {
    values: Vec<Complex<T>>,
    mass: T,
}

/// Core enumeration: accumulates `n_obs` complex observables weighted by
/// `e^{−βH} Π ν` over all configurations, plus the total absolute mass of
/// the weights (used to test whether Z ≈ 0 is genuine).
fn enumerate<T, F>(
    model: &ValidatedModel<T>,
    budget: u64,
    n_obs: usize,
    eval: F,
) -> Result<(Vec<Complex<T>>, T), ExactError>
where
    T: Scalar,
    F: Fn(&SpinView<T>, Complex<T>, &mut [Complex<T>]) + Sync,
{
    let n_sites = model.site_count();
    let q = model.measure().n_atoms() as u64;
    let states_f = (q as f64).powi(n_sites as i32);
    if states_f > budget as f64 {
        return Err(ExactError::BudgetExceeded {
            states: states_f,
            budget: budget as f64,
        });
    }
    let states = (0..n_sites).fold(1u64, |acc, _| acc * q);
    let weights = model.tilted_weights()?;
    let atoms = model.measure().atoms();
    let beta = model.beta();
    let n_blocks = states.div_ceil(BLOCK);

    let blocks: Vec<BlockSum<T>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK;
            let end = ((b + 1) * BLOCK).min(states);
            let mut config = vec![0usize; n_sites];
            // Decode the starting configuration (site 0 = least significant).
            let mut rem = start;
            for slot in config.iter_mut() {
                *slot = (rem % q) as usize;
                rem /= q;
            }
            let mut values = vec![Complex::new(T::zero(), T::zero()); n_obs];
            let mut mass = T::zero();
            let mut obs = vec![Complex::new(T::zero(), T::zero()); n_obs];
            for idx in start..end {
                if idx != start {
                    // Mixed-radix increment.
                    for slot in config.iter_mut() {
                        *slot += 1;
                        if *slot < q as usize {
                            break;
                        }
                        *slot = 0;
                    }
                }
                let energy = {
                    let mut e = T::zero();
                    for (x, y, j) in model.bonds() {
                        let px = &atoms[config[*x as usize]].0;
                        let py = &atoms[config[*y as usize]].0;
                        for (k, jk) in j.iter().enumerate() {
                            e = e - *jk * px[k] * py[k];
                        }
                    }
                    e
                };
                let mut weight = Complex::new((-beta * energy).exp(), T::zero());
                for &a in &config {
                    weight = weight * weights[a];
                }
                mass = mass + weight.norm();
                let view = SpinView {
                    atoms,
                    config: &config,
                };
                for o in obs.iter_mut() {
                    *o = Complex::new(T::zero(), T::zero());
                }
                eval(&view, weight, &mut obs);
                for (acc, o) in values.iter_mut().zip(obs.iter()) {
                    *acc = *acc + *o;
                }
            }
            BlockSum { values, mass }
        })
        .collect();

    // Serial, order-fixed combination of the block results.
    let mut values = vec![Complex::new(T::zero(), T::zero()); n_obs];
    let mut mass = T::zero();
    for block in blocks {
        for (acc, v) in values.iter_mut().zip(block.values.iter()) {
            *acc = *acc + *v;
        }
        mass = mass + block.mass;
    }
    Ok((values, mass))
}

/// Partition function `Z(f) = Σ_φ f(φ) e^{−βH(φ)} Π_x ν(φ_x)` with the
/// default enumeration budget. With `f ≡ 1` and no interaction this is
/// exactly 1 because the tilted weights are normalized per site.
pub fn partition_function<T, F>(
    model: &ValidatedModel<T>,
    f: F,
) -> Result<Complex<T>, ExactError>
where
    T: Scalar,
    F: Fn(&SpinView<T>) -> Complex<T> + Sync,
{
    partition_function_with_budget(model, f, DEFAULT_ENUM_BUDGET)
}

pub fn partition_function_with_budget<T, F>(
    model: &ValidatedModel<T>,
    f: F,
    budget: u64,
) -> Result<Complex<T>, ExactError>
where
    T: Scalar,
    F: Fn(&SpinView<T>) -> Complex<T> + Sync,
{
    let (values, _) = enumerate(model, budget, 1, |view, weight, obs| {
        obs[0] = f(view) * weight;
    })?;
    Ok(values[0])
}

/// Relative threshold below which a partition function counts as zero.
const ZERO_Z_REL: f64 = 1e-13;

/// Thermal average `⟨f⟩ = Z(f)/Z(1)`. Fails with
/// [`ExactError::ZeroPartition`] when `|Z(1)|` is negligible against the
/// accumulated absolute mass (a genuine zero of `Z`, e.g. at a fugacity
/// zero), since the state is undefined there.
pub fn thermal_average<T, F>(model: &ValidatedModel<T>, f: F) -> Result<Complex<T>, ExactError>
where
    T: Scalar,
    F: Fn(&SpinView<T>) -> Complex<T> + Sync,
{
    let (values, mass) = enumerate(model, DEFAULT_ENUM_BUDGET, 2, |view, weight, obs| {
        obs[0] = weight;
        obs[1] = f(view) * weight;
    })?;
    let z = values[0];
    if z.norm() <= lit::<T>(ZERO_Z_REL) * mass {
        return Err(ExactError::ZeroPartition {
            z_norm: z.norm().to_f64().unwrap_or(0.0),
            mass: mass.to_f64().unwrap_or(0.0),
        });
    }
    Ok(values[1] / z)
}

/// One insertion slot of a correlation function: `(site index, component)`.
pub type Slot = (usize, usize);

fn check_slots<T: Scalar>(model: &ValidatedModel<T>, slots: &[Slot]) -> Result<(), ExactError> {
    for &(site, comp) in slots {
        if site >= model.site_count() {
            return Err(ExactError::SiteOutOfRange {
                site,
                volume: model.site_count(),
            });
        }
        if comp >= model.measure().n_components() {
            return Err(ExactError::ComponentOutOfRange {
                component: comp,
                n_components: model.measure().n_components(),
            });
        }
    }
    Ok(())
}

/// Joint moments `⟨Π_{k ∈ S} φ^{i_k}_{x_k}⟩` for every nonempty subset `S`
/// of the given slots, in one enumeration pass. Entry `mask − 1` of the
/// returned vector holds the moment for subset `mask`.
pub fn subset_moments<T: Scalar>(
    model: &ValidatedModel<T>,
    slots: &[Slot],
) -> Result<Vec<Complex<T>>, ExactError> {
    check_slots(model, slots)?;
    let n = slots.len();
    assert!(n <= 20, "subset moment table would be huge");
    let n_masks = (1usize << n) - 1;
    let (values, mass) = enumerate(
        model,
        DEFAULT_ENUM_BUDGET,
        n_masks + 1,
        |view, weight, obs| {
            obs[0] = weight;
            // Products for all subsets, built incrementally: the product for
            // `mask` is the product for `mask` without its lowest bit times
            // the spin at that bit's slot.
            let spins: Vec<T> = slots.iter().map(|&(s, c)| view.spin(s, c)).collect();
            let mut prods = vec![T::one(); n_masks + 1];
            for mask in 1..=n_masks {
                let low = mask.trailing_zeros() as usize;
                prods[mask] = prods[mask & (mask - 1)] * spins[low];
            }
            for mask in 1..=n_masks {
                obs[mask] = weight * prods[mask];
            }
        },
    )?;
    let z = values[0];
    if z.norm() <= lit::<T>(ZERO_Z_REL) * mass {
        return Err(ExactError::ZeroPartition {
            z_norm: z.norm().to_f64().unwrap_or(0.0),
            mass: mass.to_f64().unwrap_or(0.0),
        });
    }
    Ok((1..=n_masks).map(|m| values[m] / z).collect())
}

/// Result of an Ursell-function evaluation, with enough metadata to be
/// emitted as a self-contained record.
#[derive(Debug, Clone)]
pub struct UrsellResult<T: Scalar> {
    pub sites: Vec<Vec<i64>>,
    pub components: Vec<usize>,
    pub value: Complex<T>,
    /// Sum of the magnitudes of every term combined into `value`. The
    /// cumulant is a signed sum of moment products, so `value` is only
    /// trustworthy down to roundoff times this scale; smaller magnitudes
    /// are cancellation residue, not signal.
    pub cancellation: T,
    pub dims: Vec<usize>,
    pub boundary: Boundary,
    pub beta: T,
    pub field: Complex<T>,
}

/// Connected n-point (Ursell) function `u_n(x₁,…,x_n)` of the spin
/// components at the given slots, `2 ≤ n ≤ 6`, via the moment–cumulant
/// subset recursion. Repeated slots are allowed and act as independent
/// derivative slots.
pub fn ursell<T: Scalar>(
    model: &ValidatedModel<T>,
    slots: &[Slot],
) -> Result<UrsellResult<T>, ExactError> {
    let n = slots.len();
    if !(2..=6).contains(&n) {
        return Err(ExactError::InvalidArity(n));
    }
    let moments = subset_moments(model, slots)?;
    let (value, cancellation) =
        cumulant_from_subset_moments(n, &|mask| moments[(mask as usize) - 1]);
    Ok(UrsellResult {
        sites: slots
            .iter()
            .map(|&(s, _)| model.lattice().coords_of(s))
            .collect(),
        components: slots.iter().map(|&(_, c)| c).collect(),
        value,
        cancellation,
        dims: model.lattice().dims().to_vec(),
        boundary: model.lattice().boundary(),
        beta: model.beta(),
        field: model.field(),
    })
}

/// Subset recursion for the top cumulant: `κ(S) = m(S) − Σ κ(T) m(S∖T)`
/// over proper subsets `T ⊆ S` containing the lowest element of `S`.
/// Alongside the value, accumulates the same recursion with every term
/// replaced by its magnitude — the cancellation scale of the result.
fn cumulant_from_subset_moments<T: Scalar>(
    n: usize,
    moment: &impl Fn(u32) -> Complex<T>,
) -> (Complex<T>, T) {
    let full: u32 = (1 << n) - 1;
    let mut kappa = vec![Complex::new(T::zero(), T::zero()); (full as usize) + 1];
    let mut scale = vec![T::zero(); (full as usize) + 1];
    for mask in 1..=full {
        let low_bit = mask & mask.wrapping_neg();
        let rest = mask & !low_bit;
        let mut value = moment(mask);
        let mut magnitude = value.norm();
        // Enumerate proper submasks T of `mask` that contain `low_bit`.
        let mut sub = rest;
        loop {
            sub = (sub.wrapping_sub(1)) & rest;
            let t = sub | low_bit;
            if t != mask {
                let complement = moment(mask & !t);
                value = value - kappa[t as usize] * complement;
                magnitude = magnitude + scale[t as usize] * complement.norm();
            }
            if sub == 0 {
                break;
            }
        }
        kappa[mask as usize] = value;
        scale[mask as usize] = magnitude;
    }
    (kappa[full as usize], scale[full as usize])
}

/// All set partitions of `{0, …, n−1}`, each block encoded as a bitmask.
pub fn set_partitions(n: usize) -> Vec<Vec<u32>> {
    fn rec(k: usize, n: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if k == n {
            out.push(current.clone());
            return;
        }
        let bit = 1u32 << k;
        for i in 0..current.len() {
            current[i] |= bit;
            rec(k + 1, n, current, out);
            current[i] &= !bit;
        }
        current.push(bit);
        rec(k + 1, n, current, out);
        current.pop();
    }
    let mut out = Vec::new();
    rec(0, n, &mut Vec::new(), &mut out);
    out
}

/// Independent oracle for the same cumulant: explicit Möbius sum over set
/// partitions, `u_n = Σ_π (−1)^{|π|−1} (|π|−1)! Π_{B ∈ π} m(B)`. The moment
/// table maps subset masks to joint moments; missing entries are an error.
pub fn cumulant_oracle<T: Scalar>(
    n: usize,
    moments: &BTreeMap<u32, Complex<T>>,
) -> Result<Complex<T>, ExactError> {
    if !(1..=6).contains(&n) {
        return Err(ExactError::InvalidArity(n));
    }
    let mut total = Complex::new(T::zero(), T::zero());
    for partition in set_partitions(n) {
        let b = partition.len();
        let mut product = Complex::new(T::one(), T::zero());
        for block in &partition {
            let m = moments
                .get(block)
                .ok_or(ExactError::MissingMoment(*block))?;
            product = product * *m;
        }
        // (−1)^{b−1} (b−1)!
        let mut coeff = T::one();
        for k in 1..b {
            coeff = coeff * lit::<T>(k as f64);
        }
        if (b - 1) % 2 == 1 {
            coeff = -coeff;
        }
        total = total + product * coeff;
    }
    Ok(total)
}

/// Connected two-point function `⟨φ^i_a ; φ^j_b⟩ = ⟨φφ⟩ − ⟨φ⟩⟨φ⟩`.
pub fn connected_two_point<T: Scalar>(
    model: &ValidatedModel<T>,
    a: usize,
    b: usize,
    comp_a: usize,
    comp_b: usize,
) -> Result<Complex<T>, ExactError> {
    let slots = [(a, comp_a), (b, comp_b)];
    let m = subset_moments(model, &slots)?;
    // masks: 01 → slot a, 10 → slot b, 11 → product.
    Ok(m[2] - m[0] * m[1])
}

/// Connected two-point functions for many site pairs in a single
/// enumeration pass. Returns `(u₂, scale)` per pair, where `scale` is the
/// cancellation magnitude `|⟨φφ⟩| + |⟨φ⟩⟨φ⟩|` used by callers to judge how
/// many significant digits survive the subtraction.
pub fn two_point_batch<T: Scalar>(
    model: &ValidatedModel<T>,
    pairs: &[(usize, usize)],
    comp_a: usize,
    comp_b: usize,
) -> Result<Vec<(Complex<T>, T)>, ExactError> {
    let mut sites: Vec<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    sites.sort_unstable();
    sites.dedup();
    for &s in &sites {
        check_slots(model, &[(s, comp_a), (s, comp_b)])?;
    }
    let site_pos: BTreeMap<usize, usize> =
        sites.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let n_single = sites.len();
    // Observables: Z, ⟨φ^i_s⟩ and ⟨φ^j_s⟩ for all involved sites, then one
    // product per pair.
    let n_obs = 1 + 2 * n_single + pairs.len();
    let pair_idx: Vec<(usize, usize)> = pairs
        .iter()
        .map(|&(a, b)| (site_pos[&a], site_pos[&b]))
        .collect();
    let sites_arc = sites.clone();
    let (values, mass) = enumerate(model, DEFAULT_ENUM_BUDGET, n_obs, |view, weight, obs| {
        obs[0] = weight;
        for (i, &s) in sites_arc.iter().enumerate() {
            obs[1 + i] = weight * view.spin(s, comp_a);
            obs[1 + n_single + i] = weight * view.spin(s, comp_b);
        }
        for (p, &(ia, ib)) in pair_idx.iter().enumerate() {
            obs[1 + 2 * n_single + p] =
                weight * view.spin(sites_arc[ia], comp_a) * view.spin(sites_arc[ib], comp_b);
        }
    })?;
    let z = values[0];
    if z.norm() <= lit::<T>(ZERO_Z_REL) * mass {
        return Err(ExactError::ZeroPartition {
            z_norm: z.norm().to_f64().unwrap_or(0.0),
            mass: mass.to_f64().unwrap_or(0.0),
        });
    }
    Ok(pair_idx
        .iter()
        .enumerate()
        .map(|(p, &(ia, ib))| {
            let mean_a = values[1 + ia] / z;
            let mean_b = values[1 + n_single + ib] / z;
            let prod = values[1 + 2 * n_single + p] / z;
            let u2 = prod - mean_a * mean_b;
            let scale = prod.norm() + (mean_a * mean_b).norm();
            (u2, scale)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Boundary, CouplingSet, LatticeBox, ModelSpec, SiteMeasure, ValidatedModel,
    };
    use crate::C64;

    fn assert_close(a: C64, b: C64, tol: f64) {
        assert!((a - b).norm() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn ising_chain(n: usize, boundary: Boundary, beta: f64, j: f64, h: C64) -> ValidatedModel<f64> {
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

    const ONE: fn(&SpinView<f64>) -> C64 = |_| C64::new(1.0, 0.0);

    #[test]
    fn partition_function_two_sites() {
        // Two Ising sites, βJ = 1, h = 0: Z = cosh(1) with normalized site
        // weights (1/2 each).
        let model = ising_chain(2, Boundary::Free, 1.0, 1.0, C64::new(0.0, 0.0));
        let z = partition_function(&model, ONE).unwrap();
        assert_close(z, C64::new(1.0f64.cosh(), 0.0), 1e-14);

        // Same two sites at h = 1: Z = cosh(1) + sinh(1)·tanh²(1).
        let model = ising_chain(2, Boundary::Free, 1.0, 1.0, C64::new(1.0, 0.0));
        let z = partition_function(&model, ONE).unwrap();
        let expect = 1.0f64.cosh() + 1.0f64.sinh() * 1.0f64.tanh().powi(2);
        assert_close(z, C64::new(expect, 0.0), 1e-14);

        // No interaction: Z = 1 exactly up to rounding.
        let model = ising_chain(3, Boundary::Free, 1.0, 0.0, C64::new(0.7, 0.2));
        let z = partition_function(&model, ONE).unwrap();
        assert_close(z, C64::new(1.0, 0.0), 1e-14);
    }

    #[test]
    fn thermal_averages_closed_forms() {
        // Single site: ⟨φ⟩ = tanh(βh).
        let model = ising_chain(1, Boundary::Free, 1.0, 1.0, C64::new(0.8, 0.0));
        let mean = thermal_average(&model, |v| C64::new(v.spin(0, 0), 0.0)).unwrap();
        assert_close(mean, C64::new(0.8f64.tanh(), 0.0), 1e-14);

        // Two sites at h = 0: ⟨s₀s₁⟩ = tanh(βJ).
        let model = ising_chain(2, Boundary::Free, 1.0, 1.0, C64::new(0.0, 0.0));
        let corr =
            thermal_average(&model, |v| C64::new(v.spin(0, 0) * v.spin(1, 0), 0.0)).unwrap();
        assert_close(corr, C64::new(1.0f64.tanh(), 0.0), 1e-14);
    }

    #[test]
    fn zero_partition_detected_at_fugacity_zero() {
        // One free site at βh = iπ/2 has Z = cos(π/2) = 0; the tilted
        // weights themselves are undefined there, so the model layer raises
        // ZeroNormalizer, which surfaces through the error chain.
        let model = ising_chain(
            1,
            Boundary::Free,
            1.0,
            0.0,
            C64::new(0.0, std::f64::consts::FRAC_PI_2),
        );
        let err = partition_function(&model, ONE);
        assert!(matches!(
            err,
            Err(ExactError::Model(ModelError::ZeroNormalizer))
        ));
    }

    #[test]
    fn conjugation_symmetry() {
        // Z(conj h) = conj Z(h).
        let h = C64::new(0.6, 0.9);
        let a = partition_function(
            &ising_chain(4, Boundary::Periodic, 1.0, 0.8, h),
            ONE,
        )
        .unwrap();
        let b = partition_function(
            &ising_chain(4, Boundary::Periodic, 1.0, 0.8, h.conj()),
            ONE,
        )
        .unwrap();
        assert_close(a, b.conj(), 1e-14);
    }

    #[test]
    fn spin_flip_field_symmetry() {
        // Z(−h) = Z(h) by the global spin flip.
        let h = C64::new(0.6, 0.9);
        let a = partition_function(&ising_chain(5, Boundary::Free, 1.0, 0.8, h), ONE).unwrap();
        let b = partition_function(&ising_chain(5, Boundary::Free, 1.0, 0.8, -h), ONE).unwrap();
        assert_close(a, b, 1e-14);
    }

    #[test]
    fn ursell_known_values() {
        let h = 0.45f64;
        let model = ising_chain(3, Boundary::Free, 1.0, 0.0, C64::new(h, 0.0));
        // n = 2 at the same site: 1 − tanh²(βh).
        let u2 = ursell(&model, &[(1, 0), (1, 0)]).unwrap().value;
        assert_close(u2, C64::new(1.0 - h.tanh().powi(2), 0.0), 1e-14);
        // n = 3 at the same site: −2m(1 − m²), m = tanh(βh).
        let m = h.tanh();
        let u3 = ursell(&model, &[(1, 0), (1, 0), (1, 0)]).unwrap().value;
        assert_close(u3, C64::new(-2.0 * m * (1.0 - m * m), 0.0), 1e-13);
        // Independent sites: u₂ across sites vanishes.
        let u2x = ursell(&model, &[(0, 0), (2, 0)]).unwrap().value;
        assert!(u2x.norm() < 1e-15);
        // Arity limits.
        assert!(matches!(
            ursell(&model, &[(0, 0)]),
            Err(ExactError::InvalidArity(1))
        ));
    }

    #[test]
    fn ursell_matches_partition_oracle() {
        // Recursion vs explicit set-partition sum on the same moments, and
        // n = 2 vs the direct covariance, on a handful of seeded models.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n_sites = rng.gen_range(3..=6);
            let j = rng.gen_range(0.1..0.9);
            let h = C64::new(rng.gen_range(0.1..1.2), rng.gen_range(-0.8..0.8));
            let boundary = if rng.gen_bool(0.5) {
                Boundary::Free
            } else {
                Boundary::Periodic
            };
            let model = ising_chain(n_sites, boundary, 1.0, j, h);
            let n = rng.gen_range(2..=4usize);
            let slots: Vec<Slot> = (0..n)
                .map(|_| (rng.gen_range(0..n_sites), 0usize))
                .collect();
            let via_recursion = ursell(&model, &slots).unwrap().value;
            let moments = subset_moments(&model, &slots).unwrap();
            let table: BTreeMap<u32, C64> = (1u32..(1 << n))
                .map(|mask| (mask, moments[(mask as usize) - 1]))
                .collect();
            let via_partitions = cumulant_oracle(n, &table).unwrap();
            assert_close(via_recursion, via_partitions, 1e-12);
            if n == 2 {
                let cov =
                    connected_two_point(&model, slots[0].0, slots[1].0, 0, 0).unwrap();
                assert_close(via_recursion, cov, 1e-13);
            }
        }
    }

    #[test]
    fn cumulant_oracle_matches_log_derivative() {
        // n = 3 against mixed finite differences of log Σ moments·ε products
        // (independent of both cumulant code paths). Uses a synthetic moment
        // table from a 3-atom toy distribution.
        let atoms = [(-1.0f64, 0.3), (0.2, 0.45), (1.1, 0.25)];
        let mean = |f: &dyn Fn(f64) -> f64| atoms.iter().map(|&(x, w)| w * f(x)).sum::<f64>();
        let mut table = BTreeMap::new();
        for mask in 1u32..8 {
            let pow = mask.count_ones();
            table.insert(mask, C64::new(mean(&|x: f64| x.powi(pow as i32)), 0.0));
        }
        let kappa = cumulant_oracle(3, &table).unwrap();
        // log moment generating function, third derivative via central
        // differences with Richardson extrapolation.
        let logm = |t: f64| mean(&|x: f64| (t * x).exp()).ln();
        let third = |e: f64| {
            (logm(2.0 * e) - 2.0 * logm(e) + 2.0 * logm(-e) - logm(-2.0 * e)) / (2.0 * e.powi(3))
        };
        let d3 = (4.0 * third(1e-2) - third(2e-2)) / 3.0;
        assert!((kappa.re - d3).abs() < 1e-6, "{} vs {d3}", kappa.re);
        // Missing moment is an error.
        table.remove(&0b101);
        assert!(matches!(
            cumulant_oracle(3, &table),
            Err(ExactError::MissingMoment(0b101))
        ));
    }

    #[test]
    fn set_partition_counts_are_bell_numbers() {
        for (n, bell) in [(1usize, 1usize), (2, 2), (3, 5), (4, 15), (5, 52), (6, 203)] {
            assert_eq!(set_partitions(n).len(), bell);
        }
    }

    #[test]
    fn boundary_condition_independence_mid_chain() {
        // Mid-chain two-point on 12 sites: free vs periodic agree to 1e−3.
        let free = ising_chain(12, Boundary::Free, 1.0, 1.0, C64::new(1.0, 0.0));
        let ring = ising_chain(12, Boundary::Periodic, 1.0, 1.0, C64::new(1.0, 0.0));
        let a = connected_two_point(&free, 5, 6, 0, 0).unwrap();
        let b = connected_two_point(&ring, 5, 6, 0, 0).unwrap();
        assert!((a - b).norm() < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn budget_is_enforced() {
        let model = ising_chain(6, Boundary::Free, 1.0, 0.5, C64::new(0.3, 0.0));
        let err = partition_function_with_budget(&model, ONE, 32);
        assert!(matches!(err, Err(ExactError::BudgetExceeded { .. })));
    }

    #[test]
    fn enumeration_is_thread_count_invariant() {
        let model = ising_chain(14, Boundary::Free, 1.0, 0.9, C64::new(0.4, 0.7));
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| partition_function(&model, ONE).unwrap())
        };
        let z1 = run(1);
        let z8 = run(8);
        assert_eq!(z1.re.to_bits(), z8.re.to_bits());
        assert_eq!(z1.im.to_bits(), z8.im.to_bits());
    }
}
