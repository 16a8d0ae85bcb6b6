//! Run configuration: a JSON document with every field optional.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "flow": { "statistics": "showcase", "regime": "weakly_homogeneous", "nu": 1.0 },
//!   "initial_density": { "kind": "showcase" },
//!   "estimator": { "n_samples": 100000, "dt": 0.01, "seed": 0, "gh_order": 20, "antithetic": false },
//!   "quadrature": { "radius": 12.0 },
//!   "slice": { "grid": { "u1": {"lo": -3, "hi": 3, "n": 121}, "u2": {...}, "u3": 0.3 }, "method": "auto" },
//!   "example": { "grid": {...}, "method": null },
//!   "checks": { "positivity_assertable": false, "mass_assertable": false, "divergence_assertable": false },
//!   "strict": false
//! }
//! ```

use std::sync::Arc;

use pdfflow::estimator::{McConfig, SliceGrid, SliceMethod};
use pdfflow::flow_model::{
    catalog_names, catalog_statistics, AffineField, CoefficientSource, FlowClass, FlowSpec, InitialDensity, Regime,
};
use pdfflow::quadrature::QuadratureConfig;
use pdfflow::showcase::{self, FigureConfig};
use pdfflow::{vec3, Error, Mat3, Result, Vec3};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub flow: FlowConfig,
    pub initial_density: InitialConfig,
    pub estimator: McConfig,
    pub quadrature: QuadratureConfig,
    pub slice: SliceConfig,
    pub example: FigureConfig,
    pub checks: ChecksConfig,
    /// Exit with status 3 when an assertable check fails.
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            flow: FlowConfig::default(),
            initial_density: InitialConfig::default(),
            estimator: McConfig::default(),
            quadrature: QuadratureConfig::default(),
            slice: SliceConfig::default(),
            example: FigureConfig::default(),
            checks: ChecksConfig::default(),
            strict: false,
        }
    }
}

/// Either a catalog entry (`statistics`) or an inline affine drift `C`.
/// Unset `regime` and `nu` are filled from the selection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub statistics: Option<String>,
    pub drift: Option<DriftConfig>,
    pub regime: Option<Regime>,
    pub nu: Option<f64>,
}

/// `C = velocity_gain u + position_gain x + offset`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftConfig {
    pub velocity_gain: Mat3,
    pub position_gain: Mat3,
    pub offset: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// `α + βγ` from the example.
    #[default]
    Showcase,
    /// The Gaussian `α` alone.
    Alpha,
    /// Centred Gaussian in `u` with per-axis variance, independent of `x`.
    Gaussian { variance: Vec3 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    pub grid: SliceGrid,
    pub method: SliceMethod,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            grid: SliceGrid::figure_default(),
            method: SliceMethod::Auto,
        }
    }
}

/// Which checks may fail a strict run. The defaults keep the example's
/// disputed properties diagnostic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    pub positivity_assertable: bool,
    pub mass_assertable: bool,
    /// Divergence-free conditions on user statistics.
    pub divergence_assertable: bool,
}

/// Parses and validates a configuration document. Errors name the
/// offending key path.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("at '{path}': {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn default_regime(class: FlowClass) -> Regime {
    match class {
        FlowClass::General => Regime::General,
        FlowClass::WeaklyHomogeneous => Regime::WeaklyHomogeneous,
        FlowClass::WeaklyIsotropic => Regime::WeaklyIsotropic,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.estimator.validate()?;
        self.quadrature.validate()?;
        self.slice.grid.validate()?;
        self.example.grid.validate()?;
        if let InitialConfig::Gaussian { variance } = &self.initial_density {
            if variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Config(format!("initial_density.variance must be positive (got {variance:?})")));
            }
        }
        self.flow_spec().map(|_| ())
    }

    /// Builds the flow, filling unset regime and viscosity.
    pub fn flow_spec(&self) -> Result<FlowSpec> {
        let f = &self.flow;
        let (name, source, claimed) = match (&f.statistics, &f.drift) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("flow: give either 'statistics' or 'drift', not both".into()));
            }
            (None, Some(d)) => {
                let field = AffineField {
                    velocity_gain: d.velocity_gain,
                    position_gain: d.position_gain,
                    offset: d.offset,
                };
                let class = if vec3::mat_max_abs(&d.position_gain) == 0.0 {
                    FlowClass::WeaklyIsotropic
                } else {
                    FlowClass::General
                };
                ("affine-drift".to_string(), CoefficientSource::DirectC(Arc::new(field)), class)
            }
            (s, None) => {
                let name = s.clone().unwrap_or_else(|| "showcase".into());
                let stats = catalog_statistics(&name).ok_or_else(|| {
                    Error::Config(format!(
                        "flow.statistics: unknown catalog entry '{name}' (known: {})",
                        catalog_names().join(", ")
                    ))
                })?;
                let class = stats.claimed_class();
                (name, CoefficientSource::Statistics(stats), class)
            }
        };
        let nu = match (f.nu, f.regime) {
            (Some(nu), _) => nu,
            (None, Some(Regime::Inviscid)) => 0.0,
            (None, _) => showcase::VISCOSITY,
        };
        let regime = match f.regime {
            Some(r) => r,
            None if nu == 0.0 => Regime::Inviscid,
            None => default_regime(claimed),
        };
        FlowSpec::new(name, nu, regime, source).map(|spec| spec.with_quadrature(self.quadrature.clone()))
    }

    pub fn initial_density(&self) -> Result<InitialDensity> {
        match &self.initial_density {
            InitialConfig::Showcase => Ok(showcase::initial_density()),
            InitialConfig::Alpha => Ok(showcase::alpha_density()),
            InitialConfig::Gaussian { variance } => {
                let g = pdfflow::flow_model::gaussian_density(*variance);
                InitialDensity::new("gaussian", 2.0, move |u: &Vec3, _x: &Vec3| g(u))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let flow = cfg.flow_spec().unwrap();
        assert_eq!(flow.name, "showcase");
        assert_eq!(flow.viscosity, 1.0);
        assert_eq!(flow.regime, Regime::WeaklyHomogeneous);
        assert_eq!(cfg.estimator.n_samples, 100_000);
        assert_eq!(cfg.estimator.dt, 0.01);
        assert_eq!(cfg.estimator.seed, 0);
    }

    #[test]
    fn inviscid_zero_flow_is_valid() {
        let cfg = parse_config(r#"{"flow":{"regime":"inviscid","nu":0.0,"statistics":"zero"}}"#).unwrap();
        assert_eq!(cfg.flow_spec().unwrap().regime, Regime::Inviscid);
    }

    #[test]
    fn inviscid_with_viscosity_is_rejected() {
        let err = parse_config(r#"{"flow":{"regime":"inviscid","nu":1.0,"statistics":"zero"}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = parse_config(r#"{"estimator":{"n_sample":5}}"#).unwrap_err().to_string();
        assert!(err.contains("estimator"), "{err}");
        assert!(err.contains("n_sample"), "{err}");
        assert!(parse_config(r#"{"extra":1}"#).is_err());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        assert!(parse_config(r#"{"schema_version":2}"#).is_err());
    }

    #[test]
    fn unknown_catalog_entry_lists_known_names() {
        let err = parse_config(r#"{"flow":{"statistics":"nope"}}"#).unwrap_err().to_string();
        assert!(err.contains("anisotropic-gaussian"), "{err}");
    }

    #[test]
    fn inline_drift_defaults_to_isotropic() {
        let cfg = parse_config(r#"{"flow":{"drift":{"velocity_gain":[[-1,0,0],[0,-1,0],[0,0,-1]]},"nu":0.5}}"#).unwrap();
        let flow = cfg.flow_spec().unwrap();
        assert_eq!(flow.regime, Regime::WeaklyIsotropic);
        assert_eq!(flow.viscosity, 0.5);
        let both = r#"{"flow":{"drift":{},"statistics":"zero"}}"#;
        assert!(parse_config(both).is_err());
    }

    #[test]
    fn zero_viscosity_implies_inviscid() {
        let cfg = parse_config(r#"{"flow":{"drift":{"velocity_gain":[[-1,0,0],[0,-1,0],[0,0,-1]]},"nu":0.0}}"#).unwrap();
        assert_eq!(cfg.flow_spec().unwrap().regime, Regime::Inviscid);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn gaussian_initial_density_needs_positive_variance() {
        assert!(parse_config(r#"{"initial_density":{"kind":"gaussian","variance":[1,1,0]}}"#).is_err());
        let cfg = parse_config(r#"{"initial_density":{"kind":"gaussian","variance":[1,2,3]}}"#).unwrap();
        assert!(cfg.initial_density().is_ok());
    }
}
