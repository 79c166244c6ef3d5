//! Pipeline configuration file (TOML).
//!
//! Every key is optional; missing keys take the library defaults and unknown
//! keys are rejected.
//!
//! ```toml
//! distortion_filter = true
//!
//! [paths]
//! output = "out"
//!
//! [detection]
//! min_chain_length = 10
//! clahe = { tile_grid = [8, 8], clip_limit = 2.0 }
//! edges = { t_low = 40.0, t_high = 80.0, sigma = 1.4 }
//! merge = { residual_threshold = 1.0, neighbor_radius = 50.0, max_merge_rounds = 3, residual_measure = "rms" }
//! shape = { min_length = 100.0 }
//!
//! [msac]
//! inlier_threshold = 0.5
//! rng_seed = 0
//!
//! [model]
//! k1 = true
//! k2 = true
//!
//! [matching]
//! match_distance = 2.0
//! ```

use std::path::{Path, PathBuf};

use plumbline::distortion::{ModelFlags, MsacConfig};
use plumbline::evaluation::MatchConfig;
use plumbline::segments::DetectionSettings;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drop candidates that a per-image distortion fit marks as outliers.
    pub distortion_filter: bool,
    pub paths: Paths,
    pub detection: DetectionSettings,
    pub msac: MsacConfig,
    pub model: ModelFlags,
    pub matching: MatchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            distortion_filter: true,
            paths: Paths::default(),
            detection: DetectionSettings::default(),
            msac: MsacConfig::default(),
            model: ModelFlags::default(),
            matching: MatchConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads `path`, or returns the defaults when there is none.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |e: plumbline::Error| CliError::Config(e.to_string());
        self.detection.validate().map_err(invalid)?;
        self.msac.validate(&self.model).map_err(invalid)?;
        self.matching.validate().map_err(invalid)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.paths.output = Some("out".into());
        cfg.detection.edges.t_low = 35.5;
        cfg.msac.rng_seed = 99;
        cfg.model.k3 = true;
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn documented_example_parses() {
        let doc = include_str!("config.rs");
        let example: String = doc
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = PipelineConfig::from_toml(&example).unwrap();
        assert_eq!(cfg.paths.output, Some(PathBuf::from("out")));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(PipelineConfig::from_toml("colour = 1"), Err(CliError::Config(_))));
        assert!(matches!(
            PipelineConfig::from_toml("[detection.edges]\nthreshold = 3"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("[detection.edges]\nt_low = 90.0"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("[msac]\nconfidence = 1.0"),
            Err(CliError::Config(_))
        ));
    }
}
