//! Aggregate pipeline configuration, loadable from TOML.

use crate::cluster::ClusterConfig;
use crate::geometry::CameraIntrinsics;
use crate::segment::SegmentationConfig;
use crate::trajectory::RansacConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub intrinsics: CameraIntrinsics,
    pub segmentation: SegmentationConfig,
    pub cluster: ClusterConfig,
    pub ransac: RansacConfig,
    /// Known metric width of the tracked object, meters.
    pub object_width_m: f64,
    /// Signed width correction subtracted from the measured box width, px.
    /// Negative values widen the box, compensating mask-pruning erosion.
    pub width_correction_px: f64,
    /// Median filter length over impact estimates; must be odd.
    pub median_window: usize,
    /// Commit the impact prediction when it is this close, seconds.
    pub commit_horizon_s: f64,
    /// Detection gap that starts a new throw, seconds.
    pub reset_gap_s: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480)
                .expect("valid default intrinsics"),
            segmentation: SegmentationConfig::default(),
            cluster: ClusterConfig::default(),
            ransac: RansacConfig::default(),
            object_width_m: 0.1,
            width_correction_px: 0.0,
            median_window: 5,
            commit_horizon_s: 0.25,
            reset_gap_s: 0.2,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        CameraIntrinsics::new(
            self.intrinsics.fx,
            self.intrinsics.fy,
            self.intrinsics.cx,
            self.intrinsics.cy,
            self.intrinsics.width,
            self.intrinsics.height,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let positive = [
            ("segmentation.window", self.segmentation.window),
            ("cluster.eps", self.cluster.eps),
            ("object_width_m", self.object_width_m),
            ("commit_horizon_s", self.commit_horizon_s),
            ("reset_gap_s", self.reset_gap_s),
            ("ransac.inlier_threshold", self.ransac.inlier_threshold),
            ("ransac.sigma_xy_sq", self.ransac.sigma_xy_sq),
            ("ransac.sigma_z_sq", self.ransac.sigma_z_sq),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.median_window % 2 == 0 || self.median_window == 0 {
            return Err(ConfigError::Invalid(format!(
                "median_window must be odd, got {}",
                self.median_window
            )));
        }
        if self.cluster.min_pts == 0 {
            return Err(ConfigError::Invalid("cluster.min_pts must be > 0".into()));
        }
        if self.ransac.iterations == 0 {
            return Err(ConfigError::Invalid("ransac.iterations must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let s = cfg.to_toml_string();
        let back = PipelineConfig::from_toml_str(&s).unwrap();
        assert_eq!(back.median_window, cfg.median_window);
        assert_eq!(back.segmentation.theta0, cfg.segmentation.theta0);
        assert_eq!(back.intrinsics, cfg.intrinsics);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = PipelineConfig::from_toml_str("object_width_m = 0.2\n").unwrap();
        assert_eq!(cfg.object_width_m, 0.2);
        assert_eq!(cfg.median_window, 5);
    }

    #[test]
    fn unknown_field_is_rejected_with_its_name() {
        let err = PipelineConfig::from_toml_str("not_a_field = 1\n").unwrap_err();
        assert!(err.to_string().contains("not_a_field"), "{err}");
    }

    #[test]
    fn even_median_window_is_invalid() {
        let err = PipelineConfig::from_toml_str("median_window = 4\n").unwrap_err();
        assert!(err.to_string().contains("median_window"), "{err}");
    }

    #[test]
    fn non_positive_values_are_invalid() {
        assert!(PipelineConfig::from_toml_str("object_width_m = 0.0\n").is_err());
        assert!(PipelineConfig::from_toml_str("[segmentation]\nwindow = -0.01\n").is_err());
    }
}
