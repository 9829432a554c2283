//! Run configuration read from a JSON file.
//!
//! Every record rejects unknown keys, and the whole file is validated before
//! any numerics run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use qtransport::cost::{BoundingBox, CostModel, PerturbedQuadratic, Quadratic};
use qtransport::estimates::Thresholds;
use qtransport::geometry::DomainSpec;
use qtransport::solver::{BExpr, GridSize, Problem, ProblemSpec, SeedKind, Tolerances};
use qtransport::symfun::QuotientParams;
use qtransport::verify::VerifyConfig;
use serde::Deserialize;

use crate::CliError;

/// Cost function selection.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostConfig {
    /// `c(x, y) = ½|x - y|²`.
    Quadratic {
        #[serde(default = "default_dim")]
        dim: usize,
        /// Half width of the cube on which both variables may range.
        #[serde(default = "default_half_width")]
        half_width: f64,
    },
    /// `c(x, y) = ½|x - y|² + ε (x·y)³`.
    PerturbedQuadratic {
        #[serde(default = "default_dim")]
        dim: usize,
        epsilon: f64,
        #[serde(default = "default_half_width")]
        half_width: f64,
    },
}

fn default_dim() -> usize {
    2
}

fn default_half_width() -> f64 {
    4.0
}

impl CostConfig {
    pub fn model(&self) -> Result<CostModel, CliError> {
        let (dim, half) = match *self {
            CostConfig::Quadratic { dim, half_width } | CostConfig::PerturbedQuadratic { dim, half_width, .. } => {
                (dim, half_width)
            }
        };
        if !(2..=8).contains(&dim) {
            return Err(CliError::Config(format!("cost dimension must lie in 2..=8 (got {dim})")));
        }
        if !(half > 0.0 && half.is_finite()) {
            return Err(CliError::Config(format!("cost half_width must be positive (got {half})")));
        }
        let origin = vec![0.0; dim];
        let bx = BoundingBox::around(&origin, half);
        Ok(match *self {
            CostConfig::Quadratic { .. } => CostModel::new(Arc::new(Quadratic { dim }), bx.clone(), bx),
            CostConfig::PerturbedQuadratic { epsilon, .. } => {
                if !epsilon.is_finite() {
                    return Err(CliError::Config("cost epsilon must be finite".into()));
                }
                CostModel::new(Arc::new(PerturbedQuadratic { dim, epsilon }), bx.clone(), bx)
            }
        })
    }
}

/// Settings of the `classify` command.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub budget: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { budget: 2_000 }
    }
}

/// Settings of the `transform` command: the potential is the lower
/// hemisphere over `B_r(c⁺)` with `r = radius_fraction · min ρ⁺`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    pub radius_fraction: f64,
    pub n_radial: usize,
    pub n_angular: usize,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            radius_fraction: 0.5,
            n_radial: 64,
            n_angular: 64,
        }
    }
}

/// Settings of the `diagnose` command.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Field CSV written by `solve`.
    pub field: PathBuf,
}

/// The whole configuration file. Each command reads the records it needs.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the single random generator.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub cost: Option<CostConfig>,
    pub source: Option<DomainSpec>,
    pub target: Option<DomainSpec>,
    pub rhs: Option<BExpr>,
    pub quotient: Option<QuotientParams>,
    pub grid: Option<GridSize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// How the `t = 0` function is built.
    #[serde(default)]
    pub initial: SeedKind,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default)]
    pub transform: TransformConfig,
    pub diagnose: Option<DiagnoseConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every record that is present.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg_err = |e: qtransport::error::Error| CliError::Config(e.to_string());
        if let Some(c) = &self.cost {
            c.model()?;
        }
        for dom in self.source.iter().chain(&self.target) {
            dom.validate().map_err(cfg_err)?;
        }
        if let Some(g) = &self.grid {
            g.validate().map_err(cfg_err)?;
        }
        self.tolerances.validate().map_err(cfg_err)?;
        self.verify.validate().map_err(cfg_err)?;
        if self.classify.budget == 0 {
            return Err(CliError::Config("classify budget must be positive".into()));
        }
        let t = &self.transform;
        if !(t.radius_fraction > 0.0 && t.radius_fraction <= 1.0) || t.n_radial < 2 || t.n_angular < 4 {
            return Err(CliError::Config(
                "transform needs 0 < radius_fraction <= 1, n_radial >= 2 and n_angular >= 4".into(),
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<CostModel, CliError> {
        self.cost
            .as_ref()
            .ok_or_else(|| CliError::Config("missing `cost` block".into()))?
            .model()
    }

    pub fn source(&self) -> Result<&DomainSpec, CliError> {
        self.source
            .as_ref()
            .ok_or_else(|| CliError::Config("missing `source` domain".into()))
    }

    pub fn target(&self) -> Result<&DomainSpec, CliError> {
        self.target
            .as_ref()
            .ok_or_else(|| CliError::Config("missing `target` domain".into()))
    }

    pub fn grid(&self) -> Result<GridSize, CliError> {
        self.grid.ok_or_else(|| CliError::Config("missing `grid` (or pass --grid NRxNT)".into()))
    }

    /// The problem assembled from the configuration.
    pub fn problem(&self) -> Result<Problem, CliError> {
        let spec = ProblemSpec {
            model: self.model()?,
            source: self.source()?.clone(),
            target: self.target()?.clone(),
            rhs: self
                .rhs
                .clone()
                .ok_or_else(|| CliError::Config("missing `rhs` expression".into()))?,
            quotient: match self.quotient {
                Some(q) => q,
                None => QuotientParams::new(2, 1).expect("valid"),
            },
            grid: self.grid()?,
            tolerances: self.tolerances,
            seed: self.initial.clone(),
            check_seed: self.seed,
        };
        Problem::new(spec).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Parses `NRxNT`, for example `33x64`.
pub fn parse_grid(s: &str) -> Result<GridSize, String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NRxNT, got `{s}`"))?;
    let n_r = a.trim().parse().map_err(|_| format!("bad radial count `{a}`"))?;
    let n_theta = b.trim().parse().map_err(|_| format!("bad angular count `{b}`"))?;
    let size = GridSize::new(n_r, n_theta);
    size.validate().map_err(|e| e.to_string())?;
    Ok(size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_parses() {
        let cfg = RunConfig::from_json(include_str!("../examples/manufactured.json")).unwrap();
        assert!(cfg.problem().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 1, "colour": "red"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"verify": {"samples": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"cost": {"kind": "quadratic", "eps": 1}}"#).is_err());
    }

    #[test]
    fn schema_violations() {
        assert!(RunConfig::from_json(r#"{"quotient": {"n": 1, "l": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"verify": {"n_min": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"grid": {"n_r": 3, "n_theta": 8}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"cost": {"kind": "quadratic", "dim": 1}}"#).is_err());
        let empty = RunConfig::from_json("{}").unwrap();
        assert!(matches!(empty.model(), Err(CliError::Config(_))));
    }

    #[test]
    fn grid_argument() {
        assert_eq!(parse_grid("33x64").unwrap(), GridSize::new(33, 64));
        assert!(parse_grid("33").is_err());
        assert!(parse_grid("3x8").is_err());
        assert!(parse_grid("17x31").is_err());
    }
}
