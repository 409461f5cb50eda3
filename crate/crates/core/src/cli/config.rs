use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::DatasetFormat;
use crate::map::MapperConfig;
use crate::scene::Intrinsics;
use crate::track::TrackerConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub root: PathBuf,
    pub format: DatasetFormat,
    /// Required for Replica; overrides the built-in camera elsewhere.
    pub intrinsics: Option<Intrinsics>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::new(),
            format: DatasetFormat::Tum,
            intrinsics: None,
        }
    }
}

/// Everything a run depends on. The run seed also seeds the tracker, so
/// `tracker.seed` always equals `seed` after resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub out: PathBuf,
    pub seed: u64,
    /// Render every N-th frame at its estimated pose; 0 disables renders and
    /// image metrics.
    pub render_every: usize,
    /// A keyframe's patches are inserted into the map once this many newer
    /// keyframes have refined its depths.
    pub insert_lag: usize,
    pub tracker: TrackerConfig,
    pub mapper: MapperConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            out: PathBuf::from("out"),
            seed: 0,
            render_every: 5,
            insert_lag: 2,
            tracker: TrackerConfig::default(),
            mapper: MapperConfig::default(),
        }
    }
}

/// Command-line values; each `Some` replaces the file or default value.
#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub dataset: Option<PathBuf>,
    pub format: Option<DatasetFormat>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub render_every: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, then the optional file, then the overrides.
    pub fn resolve(file: Option<&Path>, overrides: &RunOverrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if let Some(d) = &overrides.dataset {
            cfg.dataset.root = d.clone();
        }
        if let Some(f) = overrides.format {
            cfg.dataset.format = f;
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(r) = overrides.render_every {
            cfg.render_every = r;
        }
        cfg.tracker.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        self.mapper.validate()?;
        if let Some(k) = &self.dataset.intrinsics {
            k.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[mapper]\nlamda_reg = 1.0").is_err());
        assert!(RunConfig::from_toml("[tracker]\nwindow_size = 4").is_err());
        assert!(RunConfig::from_toml("[dataset]\npath = \"x\"").is_err());
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn precedence_is_flags_then_file_then_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 7\nrender_every = 3\n[mapper]\nlambda_reg = 0.5\n").unwrap();
        let cfg = RunConfig::resolve(
            Some(&path),
            &RunOverrides {
                seed: Some(11),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.tracker.seed, 11);
        assert_eq!(cfg.render_every, 3);
        assert_eq!(cfg.mapper.lambda_reg, 0.5);
        assert_eq!(cfg.mapper.lambda_photo, MapperConfig::default().lambda_photo);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[tracker]\npatch_size = 4\n").unwrap();
        let err = RunConfig::resolve(Some(&path), &RunOverrides::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn json_round_trip_keeps_every_value() {
        let mut cfg = RunConfig::default();
        cfg.mapper.tau = Some(0.25);
        cfg.dataset.format = DatasetFormat::Synthetic;
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"tau\":0.25"));
        assert!(text.contains("\"sigma_split\":null"));
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
