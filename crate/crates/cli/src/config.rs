use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use instruct_curate::distortion::MixConfig;
use instruct_curate::eval::{JudgeMode, RougeConfig};
use instruct_curate::filters::FilterConfig;
use instruct_curate::gateway::GatewayConfig;
use instruct_curate::packing::PackConfig;
use instruct_curate::tuning_plan::PlanOverrides;

use crate::error::{CliError, CliResult};
use crate::GlobalArgs;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub mode: JudgeMode,
}

/// Everything a run can be configured with. The TOML file may set any subset;
/// command-line flags win over the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateConfig {
    pub filters: FilterConfig,
    pub pack: PackConfig,
    pub mix: MixConfig,
    pub gateway: GatewayConfig,
    pub plan: PlanOverrides,
    pub rouge: RougeConfig,
    pub judge: JudgeConfig,
}

impl CurateConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::invalid(format!("config {}: {e}", path.display())))
    }

    pub fn apply_flags(&mut self, g: &GlobalArgs) {
        let f = &mut self.filters;
        if let Some(v) = g.sts_threshold {
            f.sts_threshold = v;
        }
        if let Some(v) = g.clipscore_threshold {
            f.clipscore_threshold = v;
        }
        if let Some(v) = g.min_chars {
            f.min_chars = v;
        }
        if let Some(v) = g.max_chars {
            f.max_chars = v;
        }
        if let Some(v) = g.budget {
            self.pack.budget = v;
        }
        if let Some(v) = g.max_images {
            self.pack.max_images = v;
        }
        if let Some(jobs) = g.jobs {
            self.gateway.max_in_flight = self.gateway.max_in_flight.min(jobs.max(1));
        }
    }

    /// Hex SHA-256 of the effective configuration as JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
