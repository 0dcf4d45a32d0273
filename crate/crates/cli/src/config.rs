//! Scenario configuration document: strict JSON schema with unknown-key
//! rejection, since silent typos in coefficient names are the dominant user
//! error.

use serde::{Deserialize, Serialize};

use endow_core::model::ModelSpec;
use endow_core::regression::RegressionBasis;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    pub n_steps: i64,
    pub n_paths: i64,
    /// Explicit seed: no implicit randomness anywhere.
    pub seed: u64,
    #[serde(default = "default_pde")]
    pub pde: PdeConfig,
    #[serde(default)]
    pub basis: RegressionBasis,
    #[serde(default = "default_clip_integrands")]
    pub clip_integrands: f64,
    /// Value clip; defaults to `alpha * k + 5` when absent.
    #[serde(default)]
    pub clip_value: Option<f64>,
    #[serde(default)]
    pub antithetic_theta: bool,
    /// When set, the bond PDE is re-solved on a halved grid and the change
    /// in `F(0, mu_0, y_0)` must stay below this tolerance.
    #[serde(default)]
    pub pde_self_check: Option<f64>,
    /// Initial wealth for the strategy and diagnostic outputs.
    #[serde(default = "default_x0")]
    pub x0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub n_t: usize,
    pub n_mu: usize,
    pub n_y: usize,
}

fn default_pde() -> PdeConfig {
    PdeConfig {
        n_t: 100,
        n_mu: 64,
        n_y: 32,
    }
}

fn default_clip_integrands() -> f64 {
    10.0
}

fn default_x0() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    /// Output directory; the CLI `--out` flag overrides it.
    #[serde(default = "default_dir")]
    pub directory: String,
    /// Which optional dumps to emit: any of "paths", "filter", "bsde",
    /// "surface", "plot".
    #[serde(default)]
    pub dumps: Vec<DumpKind>,
    /// Path indices for the per-path dumps.
    #[serde(default = "default_dump_paths")]
    pub dump_paths: Vec<usize>,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        OutputsConfig {
            directory: default_dir(),
            dumps: Vec::new(),
            dump_paths: default_dump_paths(),
        }
    }
}

fn default_dir() -> String {
    "out".to_string()
}

fn default_dump_paths() -> Vec<usize> {
    vec![0, 1, 2, 3]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpKind {
    Paths,
    Filter,
    Bsde,
    Surface,
    Plot,
}

/// Parse and semantically validate a configuration document. Schema errors
/// carry the JSON path of the offending key.
pub fn parse_config(document: &str) -> Result<ScenarioConfig, CliError> {
    let deserializer = &mut serde_json::Deserializer::from_str(document);
    let config: ScenarioConfig =
        serde_path_to_error::deserialize(deserializer).map_err(|err| {
            let path = format!("/{}", err.path().to_string().replace('.', "/"));
            CliError::Schema {
                path,
                message: err.inner().to_string(),
            }
        })?;
    if config.numerics.n_paths < 1 {
        return Err(CliError::Schema {
            path: "/numerics/n_paths".into(),
            message: "must be >= 1".into(),
        });
    }
    if config.numerics.n_steps < 1 {
        return Err(CliError::Schema {
            path: "/numerics/n_steps".into(),
            message: "must be >= 1".into(),
        });
    }
    if let Some(tol) = config.numerics.pde_self_check {
        if !(tol > 0.0) {
            return Err(CliError::Schema {
                path: "/numerics/pde_self_check".into(),
                message: "tolerance must be positive".into(),
            });
        }
    }
    Ok(config)
}

/// Canonical serialisation used for hashing and the manifest echo.
pub fn canonical_json(config: &ScenarioConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serialises")
}

pub fn config_hash(config: &ScenarioConfig) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(canonical_json(config).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
