use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-group Adam learning rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub means: f64,
    pub rotations: f64,
    pub log_scales: f64,
    pub opacity_logits: f64,
    pub colors: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means: 1.6e-4,
            rotations: 1e-3,
            log_scales: 5e-3,
            opacity_logits: 5e-2,
            colors: 2.5e-3,
        }
    }
}

impl LearningRates {
    pub(crate) fn halve(&mut self) {
        self.means *= 0.5;
        self.rotations *= 0.5;
        self.log_scales *= 0.5;
        self.opacity_logits *= 0.5;
        self.colors *= 0.5;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapperConfig {
    /// Insertion distance threshold. `None`: twice the median nearest-neighbor
    /// spacing of the initialized map.
    pub tau: Option<f64>,
    /// Dominance pixel-count threshold for clarity splitting. `None`: 60 pixels
    /// at 640×480, scaled linearly with the image size.
    pub sigma_split: Option<f64>,
    pub lambda_photo: f64,
    pub lambda_color: f64,
    pub lambda_reg: f64,
    /// Floor of the smallest-scale regularizer.
    pub reg_floor: f64,
    pub opt_iters_per_keyframe: usize,
    /// Threshold on the mean NDC-scaled screen-space positional gradient.
    pub grad_densify_threshold: f64,
    pub densify_every: usize,
    pub prune_opacity: f64,
    /// Clone when the largest scale is below this fraction of the scene extent,
    /// split otherwise.
    pub clone_extent_fraction: f64,
    pub split_scale_divisor: f64,
    pub init_opacity: f64,
    pub dynamic_insertion: bool,
    pub clarity_densify: bool,
    /// Gradient-driven clone/split; low-opacity pruning runs every
    /// `densify_every` steps either way.
    pub gradient_densify: bool,
    pub learning_rates: LearningRates,
    pub background: [f64; 3],
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            tau: None,
            sigma_split: None,
            lambda_photo: 0.2,
            lambda_color: 1.0,
            lambda_reg: 1.0,
            reg_floor: 0.01,
            opt_iters_per_keyframe: 30,
            grad_densify_threshold: 2e-4,
            densify_every: 100,
            prune_opacity: 0.05,
            clone_extent_fraction: 0.01,
            split_scale_divisor: 1.6,
            init_opacity: 0.5,
            dynamic_insertion: true,
            clarity_densify: true,
            gradient_densify: false,
            learning_rates: LearningRates::default(),
            background: [0.0; 3],
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(tau) = self.tau {
            if !(tau > 0.0) {
                return Err(Error::Config(format!("tau must be > 0, got {tau}")));
            }
        }
        if let Some(sigma) = self.sigma_split {
            if !(sigma >= 1.0) {
                return Err(Error::Config(format!("sigma_split must be >= 1, got {sigma}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_photo) {
            return Err(Error::Config(format!(
                "lambda_photo must lie in [0, 1], got {}",
                self.lambda_photo
            )));
        }
        if !(self.split_scale_divisor > 1.0) {
            return Err(Error::Config("split_scale_divisor must be > 1".into()));
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(Error::Config("init_opacity must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Effective split threshold for an image of the given size.
    pub fn sigma_split_for(&self, width: usize, height: usize) -> f64 {
        self.sigma_split
            .unwrap_or_else(|| (60.0 * ((width * height) as f64 / (640.0 * 480.0)).sqrt()).max(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        MapperConfig::default().validate().unwrap();
        assert_eq!(MapperConfig::default().sigma_split_for(640, 480), 60.0);
        assert_eq!(MapperConfig::default().sigma_split_for(320, 240), 30.0);
        assert_eq!(MapperConfig::default().sigma_split_for(160, 120), 15.0);
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = MapperConfig {
            lambda_photo: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MapperConfig {
            tau: Some(0.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MapperConfig {
            sigma_split: Some(0.5),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(toml::from_str::<MapperConfig>("lambda_fotto = 0.3").is_err());
        let cfg: MapperConfig = toml::from_str("lambda_photo = 0.3").unwrap();
        assert_eq!(cfg.lambda_photo, 0.3);
    }
}
