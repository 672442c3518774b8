//! Large-field expansion in a gas of polymers.
//!
//! After tilting the single-site measure by the field, the remaining
//! interaction on a bond `{x, y}` is rewritten around a saturation value τ:
//!
//! ```text
//! μ_{xy} = exp(β Σ_k J^k (φ^k_x φ^k_y − τ² δ_{k,1})) − 1,
//! ```
//!
//! which is small when the tilted measure concentrates near the maximal
//! first component and τ is close to it. Expanding `Π (1+μ)` and grouping
//! factors by their support yields a hard-core polymer gas: polymers are
//! finite site sets of size ≥ 2 plus two marked singletons carrying the
//! observable sources `s·φ^i_0` and `t·φ^j_x` ("loop edges"). The activity
//! of a polymer sums the products of bond factors over connected graphs on
//! it; out-of-range bonds contribute μ = 0, so only sets connected under the
//! coupling support have nonzero activity, and enumeration is restricted to
//! those a priori.
//!
//! The module provides the polymer enumeration, activity evaluation with
//! the s/t decomposition, the smallness certificate (τ and a field
//! threshold η such that size-n activity sums are ≤ εⁿ), the factorization
//! identity used as a correctness oracle, and the connected two-point
//! function obtained from the logarithm of the polymer gas truncated at a
//! total polymer size.

use crate::model::{
    self, Boundary, CouplingSet, LatticeBox, ModelError, ModelSpec, Site, ValidatedModel,
};
use crate::scalar::{lit, Scalar};
use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("polymer enumeration exceeded the budget of {cap} sets")]
    PolymerBudget { cap: usize },
    #[error("graph sums infeasible for a polymer of {n} sites (cap {cap})")]
    GraphBudget { n: usize, cap: usize },
    #[error("activity expectation too large: {states:.3e} spin states")]
    ConfigBudget { states: f64 },
    #[error(
        "no field up to {cap} certifies epsilon = {epsilon}: size-{failing_n} sum is {sum:.3e}"
    )]
    EtaNotFound {
        failing_n: usize,
        sum: f64,
        epsilon: f64,
        cap: f64,
    },
    #[error("concentration never reaches the target below the field cap {cap}")]
    ConcentrationNotFound { cap: f64 },
    #[error("Re h = {re_h} is below the certified threshold eta = {eta}")]
    NotInConvergenceRegion { re_h: f64, eta: f64 },
    #[error("the polymer expansion is set up for free boundary conditions")]
    FreeBoundaryRequired,
    #[error("site {site:?} lies outside the box")]
    SiteOutsideBox { site: Vec<i64> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Largest polymer the graph-sum evaluator accepts.
pub const POLYMER_SITE_CAP: usize = 6;
/// Largest internal bond count the graph-sum evaluator accepts.
pub const POLYMER_EDGE_CAP: usize = 20;
/// Hard cap on enumerated polymers per call.
pub const POLYMER_BUDGET: usize = 1_000_000;
/// Field cap for threshold searches.
pub const FIELD_CAP: f64 = 64.0;
/// Normalization constant entering the source evaluation bound; the wedge
/// machinery guarantees the tilt distortion stays below this value.
pub const M_INFINITY: f64 = 10.0;

/// A polymer: a finite set of lattice sites, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Polymer {
    sites: Vec<Site>,
}

impl Polymer {
    pub fn new(mut sites: Vec<Site>) -> Self {
        sites.sort();
        sites.dedup();
        Polymer { sites }
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, site: &[i64]) -> bool {
        self.sites.binary_search_by(|s| s.as_slice().cmp(site)).is_ok()
    }

    pub fn intersects(&self, other: &Polymer) -> bool {
        // Sorted merge walk.
        let (mut i, mut j) = (0, 0);
        while i < self.sites.len() && j < other.sites.len() {
            match self.sites[i].cmp(&other.sites[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

/// Source decorations: an `s`-mark and a `t`-mark, each a site together
/// with the observed spin component.
#[derive(Debug, Clone, Default)]
pub struct SourceMarks {
    pub s: Option<(Site, usize)>,
    pub t: Option<(Site, usize)>,
}

impl SourceMarks {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn pair(s_site: Site, s_comp: usize, t_site: Site, t_comp: usize) -> Self {
        SourceMarks {
            s: Some((s_site, s_comp)),
            t: Some((t_site, t_comp)),
        }
    }

    fn marked_sites(&self) -> Vec<Site> {
        let mut out = Vec::new();
        if let Some((site, _)) = &self.s {
            out.push(site.clone());
        }
        if let Some((site, _)) = &self.t {
            out.push(site.clone());
        }
        out.sort();
        out.dedup();
        out
    }
}

/// Activity of a polymer, decomposed as a polynomial of degree ≤ 1 in each
/// source variable: `z = constant + s·s_lin + t·t_lin + s·t·st_bilin`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Activity<T: Scalar> {
    pub constant: Complex<T>,
    pub s_lin: Complex<T>,
    pub t_lin: Complex<T>,
    pub st_bilin: Complex<T>,
}

impl<T: Scalar> Activity<T> {
    pub fn zero() -> Self {
        let z = Complex::new(T::zero(), T::zero());
        Activity {
            constant: z,
            s_lin: z,
            t_lin: z,
            st_bilin: z,
        }
    }

    pub fn one() -> Self {
        let mut a = Self::zero();
        a.constant = Complex::new(T::one(), T::zero());
        a
    }

    /// Modulus majorant with the source variables at magnitude `c`:
    /// `|constant| + c(|s_lin| + |t_lin|) + c²|st_bilin|`.
    pub fn norm_bound(&self, c: T) -> T {
        self.constant.norm()
            + c * (self.s_lin.norm() + self.t_lin.norm())
            + c * c * self.st_bilin.norm()
    }

    /// Product truncated at degree ≤ 1 per variable. Exact for families of
    /// pairwise disjoint polymers, where no variable can appear twice.
    pub fn product(&self, other: &Activity<T>) -> Activity<T> {
        Activity {
            constant: self.constant * other.constant,
            s_lin: self.constant * other.s_lin + self.s_lin * other.constant,
            t_lin: self.constant * other.t_lin + self.t_lin * other.constant,
            st_bilin: self.constant * other.st_bilin
                + self.st_bilin * other.constant
                + self.s_lin * other.t_lin
                + self.t_lin * other.s_lin,
        }
    }

    pub fn add_assign(&mut self, other: &Activity<T>) {
        self.constant = self.constant + other.constant;
        self.s_lin = self.s_lin + other.s_lin;
        self.t_lin = self.t_lin + other.t_lin;
        self.st_bilin = self.st_bilin + other.st_bilin;
    }

    pub fn max_component_norm(&self) -> T {
        self.constant
            .norm()
            .max(self.s_lin.norm())
            .max(self.t_lin.norm())
            .max(self.st_bilin.norm())
    }
}

/// Evaluation magnitude for the source variables: `c(ε) = ε/(2‖μ₀‖·M∞)`.
/// With sources this small the singleton bound holds with room to spare.
pub fn source_bound<T: Scalar>(epsilon: T, sup_norm: T) -> T {
    epsilon / (lit::<T>(2.0) * sup_norm * lit::<T>(M_INFINITY))
}

// ---------------------------------------------------------------------------
// Polymer enumeration
// ---------------------------------------------------------------------------

fn neighbors(site: &[i64], offsets: &[Site]) -> Vec<Site> {
    offsets
        .iter()
        .map(|o| site.iter().zip(o.iter()).map(|(a, b)| a + b).collect())
        .collect()
}

fn inside(site: &[i64], within: Option<&LatticeBox>) -> bool {
    match within {
        None => true,
        Some(lb) => lb.index_of(site).is_some(),
    }
}

/// All sets of `n` sites containing `root` that are connected under the
/// coupling-support adjacency (sets not connected this way have zero
/// activity and are pruned a priori). For `n = 1` the only candidate is the
/// root itself, and it counts as a polymer exactly when it is marked.
/// `within` restricts enumeration to a box (used for finite-volume
/// expansions); `None` enumerates on the infinite lattice.
pub fn enumerate_polymers<T: Scalar>(
    root: &[i64],
    n: usize,
    couplings: &CouplingSet<T>,
    marked: &[Site],
    within: Option<&LatticeBox>,
) -> Result<Vec<Polymer>, ClusterError> {
    if n == 0 || !inside(root, within) {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(if marked.iter().any(|m| m.as_slice() == root) {
            vec![Polymer::new(vec![root.to_vec()])]
        } else {
            Vec::new()
        });
    }
    let offsets = couplings.support_offsets();
    let mut out: Vec<Polymer> = Vec::new();
    let mut seen: BTreeSet<Site> = BTreeSet::new();
    seen.insert(root.to_vec());
    let mut initial: Vec<Site> = Vec::new();
    for nb in neighbors(root, &offsets) {
        if inside(&nb, within) && seen.insert(nb.clone()) {
            initial.push(nb);
        }
    }
    let mut set = vec![root.to_vec()];
    grow_sets(
        &mut set,
        initial,
        &mut seen,
        n,
        &offsets,
        within,
        &mut out,
    )?;
    out.sort();
    Ok(out)
}

/// Recursive connected-set enumeration: each candidate is either consumed
/// into the set (extending the frontier with its unseen neighbors) or
/// permanently skipped for the remainder of this branch, so every connected
/// superset is produced exactly once.
fn grow_sets(
    set: &mut Vec<Site>,
    candidates: Vec<Site>,
    seen: &mut BTreeSet<Site>,
    n: usize,
    offsets: &[Site],
    within: Option<&LatticeBox>,
    out: &mut Vec<Polymer>,
) -> Result<(), ClusterError> {
    if set.len() == n {
        if out.len() >= POLYMER_BUDGET {
            return Err(ClusterError::PolymerBudget {
                cap: POLYMER_BUDGET,
            });
        }
        out.push(Polymer::new(set.clone()));
        return Ok(());
    }
    for i in 0..candidates.len() {
        let c = candidates[i].clone();
        set.push(c.clone());
        let mut next: Vec<Site> = candidates[i + 1..].to_vec();
        let mut newly: Vec<Site> = Vec::new();
        for nb in neighbors(&c, offsets) {
            if inside(&nb, within) && seen.insert(nb.clone()) {
                newly.push(nb.clone());
                next.push(nb);
            }
        }
        grow_sets(set, next, seen, n, offsets, within, out)?;
        for nb in newly {
            seen.remove(&nb);
        }
        set.pop();
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Activities
// ---------------------------------------------------------------------------

struct GraphPlan {
    /// Edge endpoints as indices into the polymer's site list.
    edges: Vec<(usize, usize)>,
    /// Per-edge couplings.
    edge_j: Vec<Vec<f64>>,
    /// Edge subsets whose graph spans the polymer and is connected.
    valid_masks: Vec<u32>,
}

fn spanning_connected(n: usize, edges: &[(usize, usize)], mask: u32) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    let mut touched = vec![false; n];
    let mut components = n;
    for (e, (a, b)) in edges.iter().enumerate() {
        if mask >> e & 1 == 1 {
            touched[*a] = true;
            touched[*b] = true;
            let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
            if ra != rb {
                parent[ra] = rb;
                components -= 1;
            }
        }
    }
    components == 1 && touched.iter().all(|t| *t)
}

fn graph_plan<T: Scalar>(
    polymer: &Polymer,
    couplings: &CouplingSet<T>,
) -> Result<GraphPlan, ClusterError> {
    let n = polymer.len();
    if n > POLYMER_SITE_CAP {
        return Err(ClusterError::GraphBudget {
            n,
            cap: POLYMER_SITE_CAP,
        });
    }
    let sites = polymer.sites();
    let mut edges = Vec::new();
    let mut edge_j = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let delta: Site = sites[j]
                .iter()
                .zip(sites[i].iter())
                .map(|(a, b)| a - b)
                .collect();
            if let Some(jvec) = couplings.coupling_for(&delta) {
                if jvec.iter().any(|c| *c != T::zero()) {
                    edges.push((i, j));
                    edge_j.push(jvec.iter().map(|c| c.to_f64().unwrap()).collect());
                }
            }
        }
    }
    let m = edges.len();
    if m > POLYMER_EDGE_CAP {
        return Err(ClusterError::GraphBudget {
            n,
            cap: POLYMER_SITE_CAP,
        });
    }
    let mut valid_masks = Vec::new();
    for mask in 0..(1u32 << m) {
        if spanning_connected(n, &edges, mask) {
            valid_masks.push(mask);
        }
    }
    Ok(GraphPlan {
        edges,
        edge_j,
        valid_masks,
    })
}

/// Activity of a polymer: the expectation, under the product tilted
/// measure, of the sum over connected spanning graphs of bond-factor
/// products, decorated by the source factors at marked sites the polymer
/// contains. Singletons carry only their source factor.
pub fn activity<T: Scalar>(
    spec: &ModelSpec<T>,
    polymer: &Polymer,
    tau: T,
    marks: &SourceMarks,
) -> Result<Activity<T>, ClusterError> {
    let n = polymer.len();
    if n == 0 {
        return Ok(Activity::zero());
    }
    let weights = model::tilted_site_measure(&spec.measure, spec.field * spec.beta)?;
    let atoms = spec.measure.atoms();
    let q = atoms.len();
    let s_mark = marks
        .s
        .as_ref()
        .and_then(|(site, comp)| position_of(polymer, site).map(|i| (i, *comp)));
    let t_mark = marks
        .t
        .as_ref()
        .and_then(|(site, comp)| position_of(polymer, site).map(|i| (i, *comp)));

    if n == 1 {
        let mut acc = Activity::zero();
        for (a, w) in weights.iter().enumerate() {
            let point = &atoms[a].0;
            if let Some((_, comp)) = s_mark {
                acc.s_lin = acc.s_lin + *w * point[comp];
            }
            if let Some((_, comp)) = t_mark {
                acc.t_lin = acc.t_lin + *w * point[comp];
            }
            if let (Some((_, cs)), Some((_, ct))) = (s_mark, t_mark) {
                acc.st_bilin = acc.st_bilin + *w * (point[cs] * point[ct]);
            }
        }
        return Ok(acc);
    }

    let plan = graph_plan(polymer, &spec.couplings)?;
    if plan.valid_masks.is_empty() {
        return Ok(Activity::zero());
    }
    let states = (q as f64).powi(n as i32) * (1u64 << plan.edges.len()) as f64;
    if states > 5e7 {
        return Err(ClusterError::ConfigBudget { states });
    }
    let beta = spec.beta.to_f64().unwrap();
    let tau2 = (tau * tau).to_f64().unwrap();

    let mut acc = Activity::zero();
    let mut config = vec![0usize; n];
    let total = (q as u64).pow(n as u32);
    let mut mu = vec![0.0f64; plan.edges.len()];
    for state in 0..total {
        let mut rem = state;
        for slot in config.iter_mut() {
            *slot = (rem % q as u64) as usize;
            rem /= q as u64;
        }
        let mut weight = Complex::new(T::one(), T::zero());
        for &a in &config {
            weight = weight * weights[a];
        }
        for (e, (i, j)) in plan.edges.iter().enumerate() {
            let pi = &atoms[config[*i]].0;
            let pj = &atoms[config[*j]].0;
            let mut exponent = 0.0f64;
            for (k, jk) in plan.edge_j[e].iter().enumerate() {
                let pair = pi[k].to_f64().unwrap() * pj[k].to_f64().unwrap();
                let shift = if k == 0 { tau2 } else { 0.0 };
                exponent += jk * (pair - shift);
            }
            mu[e] = (beta * exponent).exp_m1();
        }
        let mut graph_sum = 0.0f64;
        for mask in &plan.valid_masks {
            let mut product = 1.0f64;
            let mut bits = *mask;
            while bits != 0 {
                let e = bits.trailing_zeros() as usize;
                product *= mu[e];
                bits &= bits - 1;
            }
            graph_sum += product;
        }
        let base = weight * lit::<T>(graph_sum);
        acc.constant = acc.constant + base;
        if let Some((i, comp)) = s_mark {
            let phi = atoms[config[i]].0[comp];
            acc.s_lin = acc.s_lin + base * phi;
            if let Some((j, ct)) = t_mark {
                acc.st_bilin = acc.st_bilin + base * (phi * atoms[config[j]].0[ct]);
            }
        }
        if let Some((j, comp)) = t_mark {
            acc.t_lin = acc.t_lin + base * atoms[config[j]].0[comp];
        }
    }
    Ok(acc)
}

fn position_of(polymer: &Polymer, site: &[i64]) -> Option<usize> {
    polymer
        .sites()
        .binary_search_by(|s| s.as_slice().cmp(site))
        .ok()
}

/// Certified majorant for the sum of activity magnitudes over all size-`n`
/// polymers containing `y`, on the infinite lattice. Size-1 polymers enter
/// through their source part evaluated at magnitude `c(ε)` (worst
/// component); larger polymers through their plain constant part.
pub fn activity_norm_sum<T: Scalar>(
    spec: &ModelSpec<T>,
    y: &[i64],
    n: usize,
    tau: T,
    epsilon: T,
) -> Result<T, ClusterError> {
    if n == 1 {
        let weights = model::tilted_site_measure(&spec.measure, spec.field * spec.beta)?;
        let atoms = spec.measure.atoms();
        let n_comp = spec.measure.n_components();
        let mut worst = T::zero();
        for comp in 0..n_comp {
            let mean = atoms
                .iter()
                .zip(weights.iter())
                .fold(Complex::new(T::zero(), T::zero()), |acc, ((p, _), w)| {
                    acc + *w * p[comp]
                });
            worst = worst.max(mean.norm());
        }
        return Ok(source_bound(epsilon, spec.measure.sup_norm()) * worst);
    }
    let polymers = enumerate_polymers(y, n, &spec.couplings, &[], None)?;
    let mut sum = T::zero();
    for polymer in &polymers {
        sum = sum + activity(spec, polymer, tau, &SourceMarks::none())?.constant.norm();
    }
    Ok(sum)
}

// ---------------------------------------------------------------------------
// Smallness certificate
// ---------------------------------------------------------------------------

/// Result of the threshold search: above `eta` the size-n activity sums are
/// certified ≤ εⁿ with the saturation parameter `tau`.
#[derive(Debug, Clone, Serialize)]
pub struct EtaCertificate<T: Scalar> {
    pub eta: T,
    pub tau: T,
    /// Concentration-scale offset, `tau = ‖μ₀‖_∞ − delta`.
    pub delta: T,
    pub epsilon: T,
    /// Measured sums at `eta`, one per size `1..=n_max` (max over anchors).
    pub sums: Vec<T>,
    pub field_cap: T,
}

/// Offset of τ below the measure's sup norm, found by bisection so that the
/// fully concentrated (infinite-field) limit of the size-2 activity sum is
/// ε²/2 — half the certified budget, leaving room for finite-field
/// corrections. In the concentrated limit every bond factor equals
/// `exp(β|J¹|(‖μ₀‖² − τ²)) − 1`, which grows monotonically in δ from 0.
pub fn concentration_offset<T: Scalar>(spec: &ModelSpec<T>, epsilon: T) -> T {
    let sup = spec.measure.sup_norm();
    let beta = spec.beta;
    let pair_limit = |delta: T| -> T {
        let tau = sup - delta;
        let mut sum = T::zero();
        for offset in spec.couplings.support_offsets() {
            let j1 = spec
                .couplings
                .coupling_for(&offset)
                .map(|j| j[0].abs())
                .unwrap_or_else(T::zero);
            sum = sum + ((beta * j1 * (sup * sup - tau * tau)).exp() - T::one());
        }
        sum
    };
    let target = epsilon * epsilon / lit::<T>(2.0);
    let mut hi = lit::<T>(0.99) * sup;
    if pair_limit(hi) <= target {
        return hi;
    }
    let mut lo = T::zero();
    for _ in 0..200 {
        let mid = (lo + hi) / lit::<T>(2.0);
        if pair_limit(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= lit::<T>(1e-14) * sup {
            break;
        }
    }
    lo
}

/// Searches the real field upward on the geometric grid `0.5·2^{k/4}` until
/// the size-n activity sums drop below `εⁿ` for all `n ≤ n_max` at every
/// anchor site, and returns the certificate. The field component of `spec`
/// is ignored.
pub fn find_eta<T: Scalar>(
    spec: &ModelSpec<T>,
    epsilon: T,
    n_max: usize,
) -> Result<EtaCertificate<T>, ClusterError> {
    let delta = concentration_offset(spec, epsilon);
    let tau = spec.measure.sup_norm() - delta;
    let d = spec.lattice.d();
    let mut anchors: Vec<Site> = Vec::new();
    for stretch in 0..3i64 {
        let mut site = vec![0i64; d];
        site[0] = stretch;
        anchors.push(site);
    }
    let cap = lit::<T>(FIELD_CAP);
    let mut k = 0u32;
    let mut last_failure = (1usize, T::infinity());
    loop {
        let h = lit::<T>(0.5) * lit::<T>(2.0).powf(lit::<T>(k as f64 / 4.0));
        if h > cap {
            return Err(ClusterError::EtaNotFound {
                failing_n: last_failure.0,
                sum: last_failure.1.to_f64().unwrap_or(f64::NAN),
                epsilon: epsilon.to_f64().unwrap_or(f64::NAN),
                cap: FIELD_CAP,
            });
        }
        let probe = spec.with_field(Complex::new(h, T::zero()));
        let mut sums = vec![T::zero(); n_max];
        let mut ok = true;
        'sizes: for n in 1..=n_max {
            let mut worst = T::zero();
            for anchor in &anchors {
                worst = worst.max(activity_norm_sum(&probe, anchor, n, tau, epsilon)?);
            }
            sums[n - 1] = worst;
            if worst > epsilon.powi(n as i32) {
                ok = false;
                last_failure = (n, worst);
                break 'sizes;
            }
        }
        if ok {
            return Ok(EtaCertificate {
                eta: h,
                tau,
                delta,
                epsilon,
                sums,
                field_cap: cap,
            });
        }
        k += 1;
    }
}

/// Smallest real tilt above which the tilted measure keeps all but `delta`
/// of its mass within the `delta`-ball around the concentration point
/// `p = (‖μ₀‖_∞, 0, …, 0)`.
pub fn concentration_threshold<T: Scalar>(
    measure: &model::SiteMeasure<T>,
    delta: T,
) -> Result<T, ClusterError> {
    let sup = measure.sup_norm();
    let outside_mass = |u: T| -> T {
        let mut total = T::zero();
        let mut outside = T::zero();
        for (point, weight) in measure.atoms() {
            let w = *weight * (u * point[0]).exp();
            total = total + w;
            let mut dist2 = (point[0] - sup) * (point[0] - sup);
            for c in &point[1..] {
                dist2 = dist2 + *c * *c;
            }
            if dist2.sqrt() > delta {
                outside = outside + w;
            }
        }
        outside / total
    };
    let cap = lit::<T>(FIELD_CAP);
    if outside_mass(cap) >= delta {
        return Err(ClusterError::ConcentrationNotFound { cap: FIELD_CAP });
    }
    if outside_mass(T::zero()) < delta {
        return Ok(T::zero());
    }
    let (mut lo, mut hi) = (T::zero(), cap);
    for _ in 0..200 {
        let mid = (lo + hi) / lit::<T>(2.0);
        if outside_mass(mid) < delta {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= lit::<T>(1e-12) {
            break;
        }
    }
    Ok(hi)
}

// ---------------------------------------------------------------------------
// Factorization identity (correctness oracle)
// ---------------------------------------------------------------------------

/// Brute-force source-decorated interaction sum on the whole box:
/// `⟨(1+sφ^i_0)(1+tφ^j_x)·Π_{pairs}(1+μ_{uv})⟩` as an s/t polynomial,
/// by direct enumeration of all spin configurations. Free boundary only.
pub fn ztau_bruteforce<T: Scalar>(
    model: &ValidatedModel<T>,
    tau: T,
    marks: &SourceMarks,
) -> Result<Activity<T>, ClusterError> {
    if model.lattice().boundary() != Boundary::Free {
        return Err(ClusterError::FreeBoundaryRequired);
    }
    let spec = model.spec();
    let weights = model.tilted_weights()?;
    let atoms = spec.measure.atoms();
    let q = atoms.len();
    let sites = model.sites();
    let n = sites.len();
    if (q as f64).powi(n as i32) > 5e7 {
        return Err(ClusterError::ConfigBudget {
            states: (q as f64).powi(n as i32),
        });
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let delta: Site = sites[j]
                .iter()
                .zip(sites[i].iter())
                .map(|(a, b)| a - b)
                .collect();
            if let Some(jvec) = spec.couplings.coupling_for(&delta) {
                if jvec.iter().any(|c| *c != T::zero()) {
                    pairs.push((i, j, jvec.to_vec()));
                }
            }
        }
    }
    let s_mark = marks.s.as_ref().and_then(|(site, comp)| {
        sites.iter().position(|s| s == site).map(|i| (i, *comp))
    });
    let t_mark = marks.t.as_ref().and_then(|(site, comp)| {
        sites.iter().position(|s| s == site).map(|i| (i, *comp))
    });
    let beta = spec.beta;
    let tau2 = tau * tau;
    let mut acc = Activity::zero();
    let total = (q as u64).pow(n as u32);
    let mut config = vec![0usize; n];
    for state in 0..total {
        let mut rem = state;
        for slot in config.iter_mut() {
            *slot = (rem % q as u64) as usize;
            rem /= q as u64;
        }
        let mut value = Complex::new(T::one(), T::zero());
        for &a in &config {
            value = value * weights[a];
        }
        for (i, j, jvec) in &pairs {
            let pi = &atoms[config[*i]].0;
            let pj = &atoms[config[*j]].0;
            let mut exponent = T::zero();
            for (k, jk) in jvec.iter().enumerate() {
                let shift = if k == 0 { tau2 } else { T::zero() };
                exponent = exponent + *jk * (pi[k] * pj[k] - shift);
            }
            value = value * Complex::new((beta * exponent).exp(), T::zero());
        }
        acc.constant = acc.constant + value;
        if let Some((i, comp)) = s_mark {
            let phi = atoms[config[i]].0[comp];
            acc.s_lin = acc.s_lin + value * phi;
            if let Some((j, ct)) = t_mark {
                acc.st_bilin = acc.st_bilin + value * (phi * atoms[config[j]].0[ct]);
            }
        }
        if let Some((j, comp)) = t_mark {
            acc.t_lin = acc.t_lin + value * atoms[config[j]].0[comp];
        }
    }
    Ok(acc)
}

/// All polymers of the finite box with nonzero activity potential: the
/// support-connected subsets of each size in `2..=max_size`, plus marked
/// singletons.
pub fn polymer_pool<T: Scalar>(
    model: &ValidatedModel<T>,
    max_size: usize,
    marks: &SourceMarks,
) -> Result<Vec<Polymer>, ClusterError> {
    let spec = model.spec();
    let marked = marks.marked_sites();
    let mut set: BTreeSet<Polymer> = BTreeSet::new();
    for site in model.sites() {
        for n in 1..=max_size {
            for polymer in enumerate_polymers(
                site,
                n,
                &spec.couplings,
                &marked,
                Some(model.lattice()),
            )? {
                set.insert(polymer);
            }
        }
    }
    let mut pool: Vec<Polymer> = set.into_iter().collect();
    pool.sort_by_key(|p| (p.len(), p.sites().to_vec()));
    Ok(pool)
}

/// The same quantity as [`ztau_bruteforce`], evaluated through the polymer
/// factorization: `1 + Σ_{families of pairwise disjoint polymers} Π z`.
pub fn ztau_polymer_gas<T: Scalar>(
    model: &ValidatedModel<T>,
    tau: T,
    marks: &SourceMarks,
) -> Result<Activity<T>, ClusterError> {
    if model.lattice().boundary() != Boundary::Free {
        return Err(ClusterError::FreeBoundaryRequired);
    }
    let spec = model.spec();
    let pool = polymer_pool(model, model.site_count(), marks)?;
    let activities: Vec<Activity<T>> = pool
        .iter()
        .map(|p| activity(spec, p, tau, marks))
        .collect::<Result<_, _>>()?;
    let mut total = Activity::zero();
    total.constant = Complex::new(T::one(), T::zero());
    // Depth-first enumeration of disjoint families in pool order.
    fn recurse<T: Scalar>(
        pool: &[Polymer],
        activities: &[Activity<T>],
        start: usize,
        chosen: &[usize],
        product: Activity<T>,
        total: &mut Activity<T>,
    ) {
        for i in start..pool.len() {
            if chosen.iter().any(|&c| pool[c].intersects(&pool[i])) {
                continue;
            }
            let extended = product.product(&activities[i]);
            total.add_assign(&extended);
            let mut chosen_next = chosen.to_vec();
            chosen_next.push(i);
            recurse(pool, activities, i + 1, &chosen_next, extended, total);
        }
    }
    recurse(&pool, &activities, 0, &[], Activity::one(), &mut total);
    Ok(total)
}

// ---------------------------------------------------------------------------
// Two-point function from the log of the polymer gas
// ---------------------------------------------------------------------------

/// Convergence-region parameters, typically taken from an
/// [`EtaCertificate`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClusterParams<T: Scalar> {
    pub epsilon: T,
    pub eta: T,
    pub tau: T,
}

impl<T: Scalar> From<&EtaCertificate<T>> for ClusterParams<T> {
    fn from(cert: &EtaCertificate<T>) -> Self {
        ClusterParams {
            epsilon: cert.epsilon,
            eta: cert.eta,
            tau: cert.tau,
        }
    }
}

/// Truncated-expansion result for a connected two-point function.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterTwoPoint<T: Scalar> {
    pub value: Complex<T>,
    /// Geometric majorant for everything beyond the truncation order.
    pub tail_bound: T,
    /// Value increments bucketed by total polymer size.
    pub per_size: Vec<(usize, Complex<T>)>,
    /// Enumerated polymer counts by size.
    pub polymer_counts: BTreeMap<usize, usize>,
    pub order: usize,
    pub epsilon: T,
    pub eta: T,
    pub tau: T,
}

/// Truncated cumulant of the hard-core polymer gas: the overlap-graph
/// alternating sum over spanning connected subgraphs. Memoized per
/// (slot count, overlap-edge bitmask).
fn ursell_factor(n: usize, overlap_mask: u32, memo: &mut HashMap<(usize, u32), f64>) -> f64 {
    if n == 1 {
        return 1.0;
    }
    if let Some(v) = memo.get(&(n, overlap_mask)) {
        return *v;
    }
    let mut edges = Vec::new();
    let mut bit = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if overlap_mask >> bit & 1 == 1 {
                edges.push((i, j));
            }
            bit += 1;
        }
    }
    let mut sum = 0.0f64;
    for mask in 0..(1u32 << edges.len()) {
        if spanning_connected(n, &edges, mask) {
            sum += if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        }
    }
    memo.insert((n, overlap_mask), sum);
    sum
}

/// Connected two-point function `⟨φ^i_0 ; φ^j_x⟩` on the model's (free)
/// box, from the logarithm of the polymer gas truncated at total polymer
/// size ≤ `order`. Requires `Re h ≥ eta` (the certified region).
pub fn cluster_two_point<T: Scalar>(
    model: &ValidatedModel<T>,
    x: &[i64],
    params: &ClusterParams<T>,
    order: usize,
    comp_i: usize,
    comp_j: usize,
) -> Result<ClusterTwoPoint<T>, ClusterError> {
    if model.lattice().boundary() != Boundary::Free {
        return Err(ClusterError::FreeBoundaryRequired);
    }
    if model.field().re < params.eta - lit::<T>(1e-12) {
        return Err(ClusterError::NotInConvergenceRegion {
            re_h: model.field().re.to_f64().unwrap_or(f64::NAN),
            eta: params.eta.to_f64().unwrap_or(f64::NAN),
        });
    }
    let d = model.lattice().d();
    let origin = vec![0i64; d];
    for site in [&origin, &x.to_vec()] {
        if model.lattice().index_of(site).is_none() {
            return Err(ClusterError::SiteOutsideBox { site: site.clone() });
        }
    }
    let marks = SourceMarks::pair(origin, comp_i, x.to_vec(), comp_j);
    let spec = model.spec();
    let pool = polymer_pool(model, order.max(1), &marks)?;
    let activities: Vec<Activity<T>> = pool
        .par_iter()
        .map(|p| activity(spec, p, params.tau, &marks))
        .collect::<Result<_, _>>()?;

    let mut polymer_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for p in &pool {
        *polymer_counts.entry(p.len()).or_insert(0) += 1;
    }

    // Multisets of pool indices (non-decreasing) with total size ≤ order;
    // each contributes its overlap-graph cumulant divided by the repetition
    // factorials, times the s·t coefficient of the activity product.
    let zero = Complex::new(T::zero(), T::zero());
    let mut per_size: BTreeMap<usize, Complex<T>> = BTreeMap::new();
    let mut memo: HashMap<(usize, u32), f64> = HashMap::new();
    let mut stack: Vec<usize> = Vec::new();

    fn contribute<T: Scalar>(
        stack: &[usize],
        pool: &[Polymer],
        activities: &[Activity<T>],
        memo: &mut HashMap<(usize, u32), f64>,
        per_size: &mut BTreeMap<usize, Complex<T>>,
    ) {
        let n = stack.len();
        // Repetition factor: the multiset is expanded to ordered tuples and
        // divided by n!, leaving 1/Π(multiplicity!).
        let mut rep = 1.0f64;
        let mut run = 1usize;
        for w in 1..n {
            if stack[w] == stack[w - 1] {
                run += 1;
                rep *= run as f64;
            } else {
                run = 1;
            }
        }
        let mut overlap = 0u32;
        let mut bit = 0usize;
        for a in 0..n {
            for b in a + 1..n {
                if stack[a] == stack[b] || pool[stack[a]].intersects(&pool[stack[b]]) {
                    overlap |= 1 << bit;
                }
                bit += 1;
            }
        }
        let phi = ursell_factor(n, overlap, memo);
        if phi == 0.0 {
            return;
        }
        let slots: Vec<&Activity<T>> = stack.iter().map(|&i| &activities[i]).collect();
        // st coefficient of Π_k z_k: one slot donates its bilinear part, or
        // two distinct slots donate s- and t-parts, the rest their constants.
        let mut st = Complex::new(T::zero(), T::zero());
        for k in 0..n {
            let mut term = slots[k].st_bilin;
            for (m, slot) in slots.iter().enumerate() {
                if m != k {
                    term = term * slot.constant;
                }
            }
            st = st + term;
        }
        for k in 0..n {
            for l in 0..n {
                if k == l {
                    continue;
                }
                let mut term = slots[k].s_lin * slots[l].t_lin;
                for (m, slot) in slots.iter().enumerate() {
                    if m != k && m != l {
                        term = term * slot.constant;
                    }
                }
                st = st + term;
            }
        }
        if st.norm() == T::zero() {
            return;
        }
        let weight = lit::<T>(phi / rep);
        let total_size: usize = stack.iter().map(|&i| pool[i].len()).sum();
        let entry = per_size
            .entry(total_size)
            .or_insert(Complex::new(T::zero(), T::zero()));
        *entry = *entry + st * weight;
    }

    fn descend<T: Scalar>(
        pool: &[Polymer],
        activities: &[Activity<T>],
        start: usize,
        remaining: usize,
        stack: &mut Vec<usize>,
        memo: &mut HashMap<(usize, u32), f64>,
        per_size: &mut BTreeMap<usize, Complex<T>>,
    ) {
        for i in start..pool.len() {
            let size = pool[i].len();
            if size > remaining {
                continue;
            }
            stack.push(i);
            contribute(stack, pool, activities, memo, per_size);
            descend(pool, activities, i, remaining - size, stack, memo, per_size);
            stack.pop();
        }
    }

    descend(
        &pool,
        &activities,
        0,
        order,
        &mut stack,
        &mut memo,
        &mut per_size,
    );

    let mut value = zero;
    let mut per_size_vec = Vec::new();
    for (size, increment) in &per_size {
        value = value + *increment;
        per_size_vec.push((*size, *increment));
    }
    let eps = params.epsilon.to_f64().unwrap_or(f64::NAN);
    let geom = std::f64::consts::E * eps;
    let tail = if geom < 1.0 {
        geom.powi(order as i32 + 1) / (1.0 - geom)
    } else {
        f64::INFINITY
    };
    Ok(ClusterTwoPoint {
        value,
        tail_bound: lit::<T>(tail),
        per_size: per_size_vec,
        polymer_counts,
        order,
        epsilon: params.epsilon,
        eta: params.eta,
        tau: params.tau,
    })
}
