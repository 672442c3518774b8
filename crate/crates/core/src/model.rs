//! Model layer: single-site measures, finite-range ferromagnetic couplings,
//! lattice boxes, and validated model handles.
//!
//! A model is a box `Λ ⊂ Z^d`, a symmetric atomic single-site measure on
//! `R^N`, a translation-invariant coupling set `J` of finite range, an inverse
//! temperature `β` and a complex field `h` acting on the first spin component.
//! The interaction energy of a configuration is
//!
//! ```text
//! H(φ) = − Σ_{bonds {x,y}} Σ_k J^k_{x−y} φ^k_x φ^k_y ,
//! ```
//!
//! and the field enters through the tilted site weights
//! `ν_a ∝ w_a · exp(βh · t¹_a)`, normalized by the Laplace transform of the
//! measure. Validation enforces the two structural hypotheses everything else
//! relies on: symmetry of the site measure under sign flips (and coordinate
//! permutations for N ≥ 2), and strong ferromagnetism `J¹ ≥ Σ_{k≥2} |J^k|`
//! with a finite interaction range.

use crate::scalar::{lit, Scalar};
use num_complex::Complex;
use thiserror::Error;

/// Lattice site coordinates (`d` entries).
pub type Site = Vec<i64>;

/// Errors raised while building or validating a model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("site measure violates the required symmetry: {0}")]
    SymmetryViolation(String),
    #[error("coupling violates strong ferromagnetism: offset {offset:?}, J = {detail}")]
    FerromagnetismViolation { offset: Site, detail: String },
    #[error("coupling at offset {offset:?} lies outside the declared range {range}")]
    RangeViolation { offset: Site, range: usize },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid couplings: {0}")]
    InvalidCouplings(String),
    #[error("component count mismatch: {0}")]
    ComponentMismatch(String),
    #[error("configuration does not match the model volume: {0}")]
    ConfigMismatch(String),
    #[error("Laplace-transform normalizer vanishes at the requested field")]
    ZeroNormalizer,
    #[error("sphere quadrature provided for N = 2, 3 only (requested N = {0})")]
    UnsupportedDimension(usize),
}

// ---------------------------------------------------------------------------
// Site measures
// ---------------------------------------------------------------------------

/// Atomic measure on `R^N`: a finite list of points with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteMeasure<T: Scalar> {
    atoms: Vec<(Vec<T>, T)>,
    n_components: usize,
    sup_norm: T,
}

impl<T: Scalar> SiteMeasure<T> {
    /// Builds a measure from raw atoms. Weights must be positive and all
    /// points must share the same dimension.
    pub fn from_atoms(atoms: Vec<(Vec<T>, T)>) -> Result<Self, ModelError> {
        if atoms.is_empty() {
            return Err(ModelError::InvalidMeasure("no atoms".into()));
        }
        let n_components = atoms[0].0.len();
        if n_components == 0 {
            return Err(ModelError::InvalidMeasure("zero-dimensional atoms".into()));
        }
        let mut sup_norm = T::zero();
        for (point, weight) in &atoms {
            if point.len() != n_components {
                return Err(ModelError::InvalidMeasure(
                    "atoms of mixed dimension".into(),
                ));
            }
            if !(*weight > T::zero()) || !weight.is_finite() {
                return Err(ModelError::InvalidMeasure(
                    "atom weights must be positive and finite".into(),
                ));
            }
            let norm = point
                .iter()
                .fold(T::zero(), |acc, c| acc + *c * *c)
                .sqrt();
            if !norm.is_finite() {
                return Err(ModelError::InvalidMeasure("non-finite atom".into()));
            }
            sup_norm = sup_norm.max(norm);
        }
        if !(sup_norm > T::zero()) {
            return Err(ModelError::InvalidMeasure(
                "measure concentrated at the origin has no large-field regime".into(),
            ));
        }
        Ok(Self {
            atoms,
            n_components,
            sup_norm,
        })
    }

    /// Two unit atoms at ±1 with unit weights.
    pub fn ising() -> Self {
        Self::from_atoms(vec![
            (vec![T::one()], T::one()),
            (vec![-T::one()], T::one()),
        ])
        .expect("static atoms are valid")
    }

    /// Symmetric quadrature of the uniform measure on the sphere `S^{N−1}`.
    ///
    /// * `N = 2`: `nodes` equally spaced points on the unit circle (`nodes`
    ///   divisible by 4 so the set is closed under sign flips and the
    ///   coordinate swap), weights `1/nodes`.
    /// * `N = 3`: octahedrally symmetric rules with `nodes ∈ {6, 14, 26}`
    ///   (degree 3, 5 and 7 respectively).
    pub fn sphere_uniform(n: usize, nodes: usize) -> Result<Self, ModelError> {
        match n {
            2 => {
                if nodes == 0 || nodes % 4 != 0 {
                    return Err(ModelError::InvalidMeasure(format!(
                        "circle quadrature needs a node count divisible by 4, got {nodes}"
                    )));
                }
                let w = T::one() / lit::<T>(nodes as f64);
                let atoms = (0..nodes)
                    .map(|k| {
                        let theta = lit::<T>(2.0) * T::PI() * lit::<T>(k as f64)
                            / lit::<T>(nodes as f64);
                        (vec![theta.cos(), theta.sin()], w)
                    })
                    .collect();
                Self::from_atoms(atoms)
            }
            3 => {
                let mut atoms: Vec<(Vec<T>, T)> = Vec::new();
                let axis_weight: f64;
                let mut edge_weight = 0.0;
                let mut corner_weight = 0.0;
                match nodes {
                    6 => axis_weight = 1.0 / 6.0,
                    14 => {
                        axis_weight = 1.0 / 15.0;
                        corner_weight = 3.0 / 40.0;
                    }
                    26 => {
                        axis_weight = 1.0 / 21.0;
                        edge_weight = 4.0 / 105.0;
                        corner_weight = 9.0 / 280.0;
                    }
                    _ => {
                        return Err(ModelError::InvalidMeasure(format!(
                            "sphere quadrature supports 6, 14 or 26 nodes, got {nodes}"
                        )))
                    }
                }
                for axis in 0..3 {
                    for sign in [T::one(), -T::one()] {
                        let mut p = vec![T::zero(); 3];
                        p[axis] = sign;
                        atoms.push((p, lit(axis_weight)));
                    }
                }
                if edge_weight > 0.0 {
                    let s = T::one() / lit::<T>(2.0).sqrt();
                    for (a, b) in [(0usize, 1usize), (0, 2), (1, 2)] {
                        for sa in [s, -s] {
                            for sb in [s, -s] {
                                let mut p = vec![T::zero(); 3];
                                p[a] = sa;
                                p[b] = sb;
                                atoms.push((p, lit(edge_weight)));
                            }
                        }
                    }
                }
                if corner_weight > 0.0 {
                    let c = T::one() / lit::<T>(3.0).sqrt();
                    for sx in [c, -c] {
                        for sy in [c, -c] {
                            for sz in [c, -c] {
                                atoms.push((vec![sx, sy, sz], lit(corner_weight)));
                            }
                        }
                    }
                }
                Self::from_atoms(atoms)
            }
            other => Err(ModelError::UnsupportedDimension(other)),
        }
    }

    pub fn atoms(&self) -> &[(Vec<T>, T)] {
        &self.atoms
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    /// Largest Euclidean atom norm, `‖μ₀‖_∞`.
    pub fn sup_norm(&self) -> T {
        self.sup_norm
    }

    /// First components of the atoms (the direction the field couples to).
    pub fn first_components(&self) -> Vec<T> {
        self.atoms.iter().map(|(p, _)| p[0]).collect()
    }

    /// Checks invariance under sign flips of every component and, for
    /// `N ≥ 2`, under coordinate transpositions. Matching is done within a
    /// small tolerance so that symmetric-by-construction quadratures pass.
    pub fn check_symmetry(&self) -> Result<(), ModelError> {
        let n = self.n_components;
        let mut generators: Vec<Box<dyn Fn(&[T]) -> Vec<T>>> = Vec::new();
        for k in 0..n {
            generators.push(Box::new(move |p: &[T]| {
                let mut q = p.to_vec();
                q[k] = -q[k];
                q
            }));
        }
        for k in 0..n.saturating_sub(1) {
            generators.push(Box::new(move |p: &[T]| {
                let mut q = p.to_vec();
                q.swap(k, k + 1);
                q
            }));
        }
        let tol = lit::<T>(1e-9) * T::one().max(self.sup_norm);
        for (gi, gen) in generators.iter().enumerate() {
            for (point, weight) in &self.atoms {
                let image = gen(point);
                let found = self.atoms.iter().any(|(q, w)| {
                    let close = image
                        .iter()
                        .zip(q.iter())
                        .all(|(a, b)| (*a - *b).abs() <= tol);
                    close && ((*w - *weight).abs() <= lit::<T>(1e-9) * *weight)
                });
                if !found {
                    let which = if gi < n { "sign flip" } else { "transposition" };
                    return Err(ModelError::SymmetryViolation(format!(
                        "atom {point:?} has no {which} partner of equal weight"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Laplace transform of the measure along the first component,
/// `μ̂₀(z) = Σ_a w_a exp(z t¹_a)`.
pub fn laplace_transform<T: Scalar>(measure: &SiteMeasure<T>, z: Complex<T>) -> Complex<T> {
    let mut sum = Complex::new(T::zero(), T::zero());
    for (point, weight) in measure.atoms() {
        sum = sum + (z * point[0]).exp() * *weight;
    }
    sum
}

/// Tilted site weights `ν_a = w_a e^{w t¹_a} / μ̂₀(w)`. They sum to one by
/// construction; the call fails with [`ModelError::ZeroNormalizer`] when the
/// normalizer vanishes (relative to the total atom mass at `Re w`).
pub fn tilted_site_measure<T: Scalar>(
    measure: &SiteMeasure<T>,
    w: Complex<T>,
) -> Result<Vec<Complex<T>>, ModelError> {
    let raw: Vec<Complex<T>> = measure
        .atoms()
        .iter()
        .map(|(p, wt)| (w * p[0]).exp() * *wt)
        .collect();
    let total = raw
        .iter()
        .fold(Complex::new(T::zero(), T::zero()), |acc, v| acc + v);
    let mass = raw.iter().fold(T::zero(), |acc, v| acc + v.norm());
    if total.norm() <= lit::<T>(1e-14) * mass {
        return Err(ModelError::ZeroNormalizer);
    }
    Ok(raw.into_iter().map(|v| v / total).collect())
}

// ---------------------------------------------------------------------------
// Couplings
// ---------------------------------------------------------------------------

/// Translation-invariant couplings: canonical offsets mapped to per-component
/// strengths `J = (J¹, …, J^N)`.
///
/// Offsets are canonicalized so the first nonzero entry is positive; an
/// offset and its negation denote the same unordered bond family.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSet<T: Scalar> {
    range: usize,
    entries: Vec<(Site, Vec<T>)>,
}

fn canonical_offset(offset: &[i64]) -> Option<Site> {
    let first = offset.iter().find(|&&c| c != 0)?;
    if *first > 0 {
        Some(offset.to_vec())
    } else {
        Some(offset.iter().map(|c| -c).collect())
    }
}

impl<T: Scalar> CouplingSet<T> {
    pub fn new(range: usize, raw: Vec<(Site, Vec<T>)>) -> Result<Self, ModelError> {
        if range < 2 {
            return Err(ModelError::InvalidCouplings(
                "range must be at least 2 (nearest neighbor)".into(),
            ));
        }
        let mut entries: Vec<(Site, Vec<T>)> = Vec::new();
        for (offset, j) in raw {
            let canon = canonical_offset(&offset).ok_or_else(|| {
                ModelError::InvalidCouplings("zero offset is not a bond".into())
            })?;
            if entries.iter().any(|(o, _)| *o == canon) {
                return Err(ModelError::InvalidCouplings(format!(
                    "duplicate offset {canon:?}"
                )));
            }
            entries.push((canon, j));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self { range, entries })
    }

    /// Nearest-neighbor couplings `J¹ = j` along every axis of a
    /// `d`-dimensional lattice (range 2).
    pub fn nearest_neighbor(d: usize, j: T) -> Self {
        let raw = (0..d)
            .map(|axis| {
                let mut o = vec![0i64; d];
                o[axis] = 1;
                (o, vec![j])
            })
            .collect();
        Self::new(2, raw).expect("static couplings are valid")
    }

    pub fn range(&self) -> usize {
        self.range
    }

    pub fn entries(&self) -> &[(Site, Vec<T>)] {
        &self.entries
    }

    /// Offsets (canonical and negated) carrying a nonzero coupling; these
    /// define the adjacency used for polymer connectivity.
    pub fn support_offsets(&self) -> Vec<Site> {
        let mut out = Vec::new();
        for (offset, j) in &self.entries {
            if j.iter().any(|c| *c != T::zero()) {
                out.push(offset.clone());
                out.push(offset.iter().map(|c| -c).collect());
            }
        }
        out.sort();
        out
    }

    /// Coupling vector between two sites separated by `delta` (either
    /// orientation), if any.
    pub fn coupling_for(&self, delta: &[i64]) -> Option<&[T]> {
        let canon = canonical_offset(delta)?;
        self.entries
            .iter()
            .find(|(o, _)| *o == canon)
            .map(|(_, j)| j.as_slice())
    }

    fn validate(&self, n_components: usize) -> Result<(), ModelError> {
        for (offset, j) in &self.entries {
            if j.len() != n_components {
                return Err(ModelError::ComponentMismatch(format!(
                    "offset {offset:?} provides {} components, measure has {n_components}",
                    j.len()
                )));
            }
            let manhattan: i64 = offset.iter().map(|c| c.abs()).sum();
            if manhattan as usize >= self.range && j.iter().any(|c| *c != T::zero()) {
                return Err(ModelError::RangeViolation {
                    offset: offset.clone(),
                    range: self.range,
                });
            }
            let tail = j
                .iter()
                .skip(1)
                .fold(T::zero(), |acc, c| acc + c.abs());
            if !(j[0] >= tail) {
                return Err(ModelError::FerromagnetismViolation {
                    offset: offset.clone(),
                    detail: format!("J¹ = {} < Σ_{{k≥2}}|J^k| = {}", j[0], tail),
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Lattice boxes
// ---------------------------------------------------------------------------

/// Boundary condition of a finite box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Free,
    Periodic,
}

/// Finite box `Λ = Π_i {0, …, L_i − 1}` with a boundary condition. Sites are
/// indexed lexicographically with the first coordinate varying slowest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeBox {
    dims: Vec<usize>,
    boundary: Boundary,
}

impl LatticeBox {
    pub fn new(dims: Vec<usize>, boundary: Boundary) -> Self {
        assert!(!dims.is_empty() && dims.iter().all(|&l| l > 0), "empty box");
        Self { dims, boundary }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn d(&self) -> usize {
        self.dims.len()
    }

    pub fn site_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn coords_of(&self, mut index: usize) -> Site {
        let mut coords = vec![0i64; self.d()];
        for axis in (0..self.d()).rev() {
            coords[axis] = (index % self.dims[axis]) as i64;
            index /= self.dims[axis];
        }
        coords
    }

    pub fn index_of(&self, coords: &[i64]) -> Option<usize> {
        if coords.len() != self.d() {
            return None;
        }
        let mut index = 0usize;
        for (axis, &c) in coords.iter().enumerate() {
            if c < 0 || c >= self.dims[axis] as i64 {
                return None;
            }
            index = index * self.dims[axis] + c as usize;
        }
        Some(index)
    }

    pub fn sites(&self) -> Vec<Site> {
        (0..self.site_count()).map(|i| self.coords_of(i)).collect()
    }

    /// Manhattan distance, wrapping per axis under periodic boundary.
    pub fn distance(&self, a: &[i64], b: &[i64]) -> i64 {
        a.iter()
            .zip(b.iter())
            .zip(self.dims.iter())
            .map(|((&xa, &xb), &l)| {
                let d = (xa - xb).abs();
                match self.boundary {
                    Boundary::Free => d,
                    Boundary::Periodic => d.min(l as i64 - d),
                }
            })
            .sum()
    }

    /// Site reached from `coords` by `offset`, respecting the boundary.
    /// Returns `None` if the step leaves a free box.
    pub fn step(&self, coords: &[i64], offset: &[i64]) -> Option<Site> {
        let mut out = vec![0i64; self.d()];
        for axis in 0..self.d() {
            let l = self.dims[axis] as i64;
            let raw = coords[axis] + offset[axis];
            out[axis] = match self.boundary {
                Boundary::Free => {
                    if raw < 0 || raw >= l {
                        return None;
                    }
                    raw
                }
                Boundary::Periodic => raw.rem_euclid(l),
            };
        }
        Some(out)
    }
}

// ---------------------------------------------------------------------------
// Model specification and validation
// ---------------------------------------------------------------------------

/// Raw model description, as assembled by hand or parsed from a config file.
#[derive(Debug, Clone)]
pub struct ModelSpec<T: Scalar> {
    pub lattice: LatticeBox,
    pub measure: SiteMeasure<T>,
    pub couplings: CouplingSet<T>,
    pub beta: T,
    pub field: Complex<T>,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(
        lattice: LatticeBox,
        measure: SiteMeasure<T>,
        couplings: CouplingSet<T>,
        beta: T,
        field: Complex<T>,
    ) -> Self {
        Self {
            lattice,
            measure,
            couplings,
            beta,
            field,
        }
    }

    /// Same spec with a different field (used by scans over `h`).
    pub fn with_field(&self, field: Complex<T>) -> Self {
        let mut spec = self.clone();
        spec.field = field;
        spec
    }

    /// Runs all structural checks and freezes the model.
    pub fn validate(self) -> Result<ValidatedModel<T>, ModelError> {
        if !(self.beta > T::zero()) || !self.beta.is_finite() {
            return Err(ModelError::InvalidCouplings(
                "β must be positive and finite".into(),
            ));
        }
        self.measure.check_symmetry()?;
        self.couplings.validate(self.measure.n_components())?;
        for (offset, _) in self.couplings.entries() {
            if offset.len() != self.lattice.d() {
                return Err(ModelError::InvalidCouplings(format!(
                    "offset {offset:?} has wrong dimension for a {}-dimensional box",
                    self.lattice.d()
                )));
            }
        }
        let sites = self.lattice.sites();
        let mut bonds = Vec::new();
        for (index, coords) in sites.iter().enumerate() {
            for (offset, j) in self.couplings.entries() {
                if let Some(target) = self.lattice.step(coords, offset) {
                    if target == *coords {
                        continue; // offset wraps onto the same site
                    }
                    let target_index = self
                        .lattice
                        .index_of(&target)
                        .expect("step stays inside the box");
                    bonds.push((index as u32, target_index as u32, j.clone()));
                }
            }
        }
        Ok(ValidatedModel {
            spec: self,
            sites,
            bonds,
        })
    }
}

/// Immutable, validated model handle with precomputed site and bond tables.
#[derive(Debug, Clone)]
pub struct ValidatedModel<T: Scalar> {
    spec: ModelSpec<T>,
    sites: Vec<Site>,
    bonds: Vec<(u32, u32, Vec<T>)>,
}

impl<T: Scalar> ValidatedModel<T> {
    pub fn lattice(&self) -> &LatticeBox {
        &self.spec.lattice
    }

    pub fn measure(&self) -> &SiteMeasure<T> {
        &self.spec.measure
    }

    pub fn couplings(&self) -> &CouplingSet<T> {
        &self.spec.couplings
    }

    pub fn beta(&self) -> T {
        self.spec.beta
    }

    pub fn field(&self) -> Complex<T> {
        self.spec.field
    }

    pub fn spec(&self) -> &ModelSpec<T> {
        &self.spec
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    /// Bond list `(x, y, J)`; a periodic wrap producing the same unordered
    /// pair twice is kept twice on purpose (a ring of length 2 has a double
    /// bond), matching the transfer-operator trace identity.
    pub fn bonds(&self) -> &[(u32, u32, Vec<T>)] {
        &self.bonds
    }

    /// Tilted site weights at `w = β h`.
    pub fn tilted_weights(&self) -> Result<Vec<Complex<T>>, ModelError> {
        tilted_site_measure(&self.spec.measure, self.spec.field * self.spec.beta)
    }

    /// Interaction energy of a configuration given as one atom index per site.
    pub fn hamiltonian(&self, config: &[usize]) -> Result<T, ModelError> {
        if config.len() != self.sites.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "{} entries for {} sites",
                config.len(),
                self.sites.len()
            )));
        }
        let atoms = self.spec.measure.atoms();
        if let Some(&bad) = config.iter().find(|&&a| a >= atoms.len()) {
            return Err(ModelError::ConfigMismatch(format!(
                "atom index {bad} out of range ({} atoms)",
                atoms.len()
            )));
        }
        let mut energy = T::zero();
        for (x, y, j) in &self.bonds {
            let px = &atoms[config[*x as usize]].0;
            let py = &atoms[config[*y as usize]].0;
            for (k, jk) in j.iter().enumerate() {
                energy = energy - *jk * px[k] * py[k];
            }
        }
        Ok(energy)
    }
}
