//! On-disk model description: a small TOML dialect mapping one-to-one onto
//! [`ModelSpec`].
//!
//! ```toml
//! dims = [3, 3]
//! boundary = "periodic"
//! beta = 1.0
//! field_re = 0.5
//! field_im = 0.0
//! measure = "ising"            # or "circle:16", "sphere:14", or inline atoms
//! range = 2
//!
//! [couplings]
//! "1,0" = [1.0]                # offset "c₁,…,c_d" → (J¹, …, J^N)
//! "0,1" = [1.0]
//! ```
//!
//! Inline atoms replace the measure string with an array of tables:
//!
//! ```toml
//! measure = [
//!   { spin = [1.0], weight = 1.0 },
//!   { spin = [-1.0], weight = 1.0 },
//! ]
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex;
use serde::Deserialize;
use thiserror::Error;

use crate::model::{Boundary, CouplingSet, LatticeBox, ModelError, ModelSpec, SiteMeasure};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Single measure atom in an inline-atom config.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub spin: Vec<f64>,
    pub weight: f64,
}

/// The `measure` field: a named family or explicit atoms.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MeasureConfig {
    Named(String),
    Atoms(Vec<AtomConfig>),
}

/// Parsed model configuration file. Field values are plain `f64`; they are
/// widened or narrowed to the working scalar when the `ModelSpec` is built.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dims: Vec<usize>,
    pub boundary: Boundary,
    pub beta: f64,
    #[serde(default)]
    pub field_re: f64,
    #[serde(default)]
    pub field_im: f64,
    pub measure: MeasureConfig,
    /// Interaction range: bonds must have Manhattan length < `range`.
    #[serde(default = "default_range")]
    pub range: usize,
    /// Bond strengths keyed by offset, written as comma-separated integers
    /// (`"1"`, `"1,0"`, …). A `BTreeMap` so iteration order — and therefore
    /// everything built from it — is deterministic.
    #[serde(default)]
    pub couplings: BTreeMap<String, Vec<f64>>,
}

fn default_range() -> usize {
    2
}

fn parse_offset(key: &str, d: usize) -> Result<Vec<i64>, ConfigError> {
    let parts: Result<Vec<i64>, _> = key.split(',').map(|p| p.trim().parse::<i64>()).collect();
    let offset = parts.map_err(|_| {
        ConfigError::Invalid(format!(
            "coupling key {key:?} is not a comma-separated integer offset"
        ))
    })?;
    if offset.len() != d {
        return Err(ConfigError::Invalid(format!(
            "coupling offset {key:?} has {} coordinates, box has {d}",
            offset.len()
        )));
    }
    Ok(offset)
}

fn parse_named_measure<T: Scalar>(name: &str) -> Result<SiteMeasure<T>, ConfigError> {
    if name == "ising" {
        return Ok(SiteMeasure::ising());
    }
    for (prefix, n) in [("circle:", 2usize), ("sphere:", 3usize)] {
        if let Some(rest) = name.strip_prefix(prefix) {
            let nodes: usize = rest.parse().map_err(|_| {
                ConfigError::Invalid(format!("bad node count in measure {name:?}"))
            })?;
            return Ok(SiteMeasure::sphere_uniform(n, nodes)?);
        }
    }
    Err(ConfigError::Invalid(format!(
        "unknown measure {name:?}; expected \"ising\", \"circle:<M>\", \"sphere:<M>\" or inline atoms"
    )))
}

impl ModelConfig {
    /// Parses the TOML text of a config file.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads and parses a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Assembles the model spec at the working scalar type. Structural
    /// checks beyond shape (ferromagnetism, measure symmetry, …) are left
    /// to [`ModelSpec::validate`].
    pub fn to_spec<T: Scalar>(&self) -> Result<ModelSpec<T>, ConfigError> {
        if self.dims.is_empty() || self.dims.iter().any(|&d| d == 0) {
            return Err(ConfigError::Invalid(format!(
                "dims must be nonempty positive integers, got {:?}",
                self.dims
            )));
        }
        let lattice = LatticeBox::new(self.dims.clone(), self.boundary);
        let measure: SiteMeasure<T> = match &self.measure {
            MeasureConfig::Named(name) => parse_named_measure(name)?,
            MeasureConfig::Atoms(atoms) => SiteMeasure::from_atoms(
                atoms
                    .iter()
                    .map(|a| {
                        (
                            a.spin.iter().map(|&c| lit::<T>(c)).collect(),
                            lit::<T>(a.weight),
                        )
                    })
                    .collect(),
            )?,
        };
        let raw: Vec<(Vec<i64>, Vec<T>)> = self
            .couplings
            .iter()
            .map(|(key, j)| {
                parse_offset(key, self.dims.len())
                    .map(|offset| (offset, j.iter().map(|&c| lit::<T>(c)).collect()))
            })
            .collect::<Result<_, _>>()?;
        let couplings = CouplingSet::new(self.range, raw)?;
        Ok(ModelSpec::new(
            lattice,
            measure,
            couplings,
            lit::<T>(self.beta),
            Complex::new(lit::<T>(self.field_re), lit::<T>(self.field_im)),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::laplace_transform;

    const CHAIN: &str = r#"
        dims = [8]
        boundary = "free"
        beta = 1.0
        field_re = 0.5
        measure = "ising"
        range = 2

        [couplings]
        "1" = [1.0]
    "#;

    #[test]
    fn chain_config_round_trips_to_a_valid_model() {
        let config = ModelConfig::from_toml_str(CHAIN).unwrap();
        let spec: ModelSpec<f64> = config.to_spec().unwrap();
        assert_eq!(spec.lattice.dims(), &[8]);
        assert_eq!(spec.lattice.boundary(), Boundary::Free);
        assert_eq!(spec.beta, 1.0);
        assert_eq!(spec.field, Complex::new(0.5, 0.0));
        assert_eq!(spec.couplings.coupling_for(&[1]), Some(&[1.0][..]));
        let model = spec.validate().unwrap();
        assert_eq!(model.site_count(), 8);
        assert_eq!(model.bonds().len(), 7);
    }

    #[test]
    fn two_dimensional_offsets_and_defaults() {
        let text = r#"
            dims = [3, 3]
            boundary = "periodic"
            beta = 0.7
            measure = "ising"

            [couplings]
            "1,0" = [0.4]
            "0,1" = [0.6]
        "#;
        let config = ModelConfig::from_toml_str(text).unwrap();
        assert_eq!(config.range, 2);
        assert_eq!(config.field_re, 0.0);
        let spec: ModelSpec<f64> = config.to_spec().unwrap();
        assert_eq!(spec.couplings.coupling_for(&[0, 1]), Some(&[0.6][..]));
        assert_eq!(spec.couplings.coupling_for(&[-1, 0]), Some(&[0.4][..]));
        assert_eq!(spec.validate().unwrap().bonds().len(), 18);
    }

    #[test]
    fn named_measures_parse() {
        let circle: SiteMeasure<f64> = parse_named_measure("circle:16").unwrap();
        assert_eq!(circle.n_atoms(), 16);
        assert_eq!(circle.n_components(), 2);
        let sphere: SiteMeasure<f64> = parse_named_measure("sphere:14").unwrap();
        assert_eq!(sphere.n_atoms(), 14);
        assert_eq!(sphere.n_components(), 3);
        assert!(parse_named_measure::<f64>("torus:5").is_err());
        assert!(parse_named_measure::<f64>("circle:three").is_err());
    }

    #[test]
    fn inline_atoms_build_the_measure() {
        let text = r#"
            dims = [4]
            boundary = "free"
            beta = 1.0
            measure = [
                { spin = [2.0], weight = 0.25 },
                { spin = [-2.0], weight = 0.25 },
                { spin = [0.0], weight = 0.5 },
            ]

            [couplings]
            "1" = [0.1]
        "#;
        let config = ModelConfig::from_toml_str(text).unwrap();
        let spec: ModelSpec<f64> = config.to_spec().unwrap();
        assert_eq!(spec.measure.n_atoms(), 3);
        assert_eq!(spec.measure.sup_norm(), 2.0);
        // μ̂₀(z) = (cosh(2z) + 1)/2 for this three-atom measure.
        let z = Complex::new(0.3f64, 0.0);
        let expected = ((z * 2.0).cosh() + 1.0) / 2.0;
        let got = laplace_transform(&spec.measure, z);
        assert!((got - expected).norm() < 1e-15);
        spec.validate().unwrap();
    }

    #[test]
    fn bad_inputs_are_rejected_with_reasons() {
        // Unknown top-level key.
        assert!(ModelConfig::from_toml_str("dims = [2]\nbogus = 1").is_err());
        // Malformed offset key.
        let bad_offset = r#"
            dims = [2]
            boundary = "free"
            beta = 1.0
            measure = "ising"
            [couplings]
            "a,b" = [1.0]
        "#;
        let err = ModelConfig::from_toml_str(bad_offset)
            .unwrap()
            .to_spec::<f64>()
            .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
        // Offset dimension mismatch.
        let bad_dim = r#"
            dims = [2, 2]
            boundary = "free"
            beta = 1.0
            measure = "ising"
            [couplings]
            "1" = [1.0]
        "#;
        let err = ModelConfig::from_toml_str(bad_dim)
            .unwrap()
            .to_spec::<f64>()
            .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
        // Empty box.
        let empty = r#"
            dims = []
            boundary = "free"
            beta = 1.0
            measure = "ising"
        "#;
        assert!(ModelConfig::from_toml_str(empty)
            .unwrap()
            .to_spec::<f64>()
            .is_err());
    }

    #[test]
    fn ferromagnetism_violation_surfaces_at_validate_time() {
        let text = r#"
            dims = [4]
            boundary = "free"
            beta = 1.0
            measure = "circle:8"

            [couplings]
            "1" = [0.1, 0.5]
        "#;
        let spec: ModelSpec<f64> = ModelConfig::from_toml_str(text)
            .unwrap()
            .to_spec()
            .unwrap();
        let err = spec.validate().unwrap_err();
        assert!(matches!(err, ModelError::FerromagnetismViolation { .. }));
    }
}
