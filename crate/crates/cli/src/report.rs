use innerns::pipeline::ProposalStats;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// JSON report of one invocation. `log_z` is `null` when the evidence is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputReport {
    pub schema_version: u32,
    pub command: String,
    /// Every flag that affects the numbers, as parsed.
    pub config: serde_json::Value,
    pub seed: u64,
    pub log_z: Option<f64>,
    pub termination_reason: Option<String>,
    pub iterations: Option<usize>,
    pub atlas_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub data: Option<DataSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub moments: Option<MomentsSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub atlas: Option<AtlasSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle: Option<OracleSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub models: Option<Vec<ModelSection>>,
    pub wall_time_seconds: f64,
}

impl OutputReport {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        OutputReport {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config,
            seed,
            log_z: None,
            termination_reason: None,
            iterations: None,
            atlas_size: None,
            data: None,
            moments: None,
            atlas: None,
            oracle: None,
            models: None,
            wall_time_seconds: 0.0,
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub cells: usize,
    pub total: f64,
    pub shape: Option<(usize, usize)>,
}

/// Bounds are the mean plus and minus one posterior standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentsSection {
    pub functional: String,
    pub m1: f64,
    pub m2: f64,
    pub variance: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasSection {
    pub ambient_dim: usize,
    pub inner_objects: usize,
    pub log_v_star: Option<f64>,
    /// Exact log volume when the region is known in closed form.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub log_v_exact: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub initial_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub log_l0: Option<f64>,
    pub walk_acceptance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub proposals: Option<ProposalStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSection {
    pub grid_integral: f64,
    pub cells: usize,
    pub cell_measure: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pyramid: Option<PyramidSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidSection {
    pub level: f64,
    pub sectors: usize,
    pub sum: f64,
    pub analytic_area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub path: String,
    pub name: Option<String>,
    pub log_prior: f64,
    pub log_z: Option<f64>,
    pub iterations: Option<usize>,
    pub termination_reason: Option<String>,
    /// Posterior probability among the models that ran.
    pub posterior: Option<f64>,
    pub error: Option<String>,
}
