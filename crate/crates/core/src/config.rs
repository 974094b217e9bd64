//! Run configuration, read from TOML.
//!
//! Relative paths are resolved against the directory of the config file.
//!
//! ```toml
//! seed = 42
//!
//! [data]
//! grid = "grid.csv"
//! events = "events.csv"
//! covariates = "covariates.csv"
//! first_year = 2009
//! last_year = 2022
//!
//! [train]
//! n_models = 50
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationLine, CalibrationOptions, DEFAULT_LEHA_AREA_M2, MATCH_RADIUS_KM};
use crate::dataset::{CovariateSchema, DatasetPaths, LoadOptions, MissingPolicy, YearRange};
use crate::date::DayDate;
use crate::dnn::{NetworkConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::pipeline::SampleWeighting;
use crate::quality::RadarSite;
use crate::relevance::default_percentile_grid;
use crate::synth::SynthConfig;
use crate::tmevd::{DEFAULT_HORIZONS, DEFAULT_N_BOOT, DEFAULT_PERIOD_SIZES_MM};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub calibration: CalibrationConfig,
    pub train: TrainSection,
    pub maps: MapConfig,
    pub baseline: BaselineConfig,
    pub quality: QualityConfig,
    pub synth: SynthConfig,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub grid: PathBuf,
    pub events: PathBuf,
    pub covariates: PathBuf,
    /// Covariate column names; the standard 18-column schema if absent.
    pub schema: Option<Vec<String>>,
    pub first_year: Option<i32>,
    pub last_year: Option<i32>,
    pub missing: MissingPolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            grid: "grid.csv".into(),
            events: "events.csv".into(),
            covariates: "covariates.csv".into(),
            schema: None,
            first_year: None,
            last_year: None,
            missing: MissingPolicy::Reject,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub radar: PathBuf,
    pub reports: PathBuf,
    pub blacklist: Vec<DayDate>,
    pub leha_area_m2: f64,
    pub fit_line: bool,
    pub slope: f64,
    pub offset_mm: f64,
    pub match_radius_km: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        let d = CalibrationOptions::default();
        CalibrationConfig {
            radar: "radar.csv".into(),
            reports: "reports.csv".into(),
            blacklist: d.blacklist.into_iter().collect(),
            leha_area_m2: DEFAULT_LEHA_AREA_M2,
            fit_line: false,
            slope: d.line.slope,
            offset_mm: d.line.offset_mm,
            match_radius_km: MATCH_RADIUS_KM,
        }
    }
}

impl CalibrationConfig {
    pub fn options(&self) -> Result<CalibrationOptions> {
        if !(self.slope > 0.0) {
            return Err(Error::Config("calibration slope must be positive".into()));
        }
        Ok(CalibrationOptions {
            blacklist: self.blacklist.iter().copied().collect(),
            leha_area_m2: self.leha_area_m2,
            fit_line: self.fit_line,
            line: CalibrationLine {
                slope: self.slope,
                offset_mm: self.offset_mm,
                ..CalibrationLine::reference()
            },
            match_radius_km: self.match_radius_km,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub n_models: usize,
    pub model_dir: PathBuf,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub batchnorm_on_output: bool,
    pub percentiles: Vec<f64>,
    pub weighting: SampleWeighting,
    #[serde(flatten)]
    pub optimizer: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let net = NetworkConfig::new(1);
        TrainSection {
            n_models: 50,
            model_dir: "models".into(),
            hidden_layers: net.hidden_layers,
            hidden_width: net.hidden_width,
            batchnorm_on_output: net.batchnorm_on_output,
            percentiles: default_percentile_grid(),
            weighting: SampleWeighting::Relevance,
            optimizer: TrainConfig::default(),
        }
    }
}

impl TrainSection {
    pub fn network(&self, input_dim: usize) -> NetworkConfig {
        NetworkConfig {
            hidden_layers: self.hidden_layers,
            hidden_width: self.hidden_width,
            batchnorm_on_output: self.batchnorm_on_output,
            ..NetworkConfig::new(input_dim)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub horizons: Vec<f64>,
    pub sizes_mm: Vec<f64>,
    pub n_boot: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            horizons: DEFAULT_HORIZONS.to_vec(),
            sizes_mm: DEFAULT_PERIOD_SIZES_MM.to_vec(),
            n_boot: DEFAULT_N_BOOT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub window_years: usize,
    pub n_samples: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            window_years: 10,
            n_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    pub geometry: PathBuf,
    pub suspicious_cells: BTreeSet<usize>,
    pub radar_sites: Vec<RadarSite>,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            geometry: "geometry.csv".into(),
            suspicious_cells: BTreeSet::new(),
            radar_sites: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset_paths(&self) -> DatasetPaths {
        DatasetPaths {
            grid: self.resolve(&self.data.grid),
            events: self.resolve(&self.data.events),
            covariates: self.resolve(&self.data.covariates),
        }
    }

    pub fn schema(&self) -> Result<CovariateSchema> {
        match &self.data.schema {
            Some(names) => CovariateSchema::new(names.iter().cloned()),
            None => Ok(CovariateSchema::standard()),
        }
    }

    pub fn years(&self) -> Result<Option<YearRange>> {
        match (self.data.first_year, self.data.last_year) {
            (Some(a), Some(b)) => YearRange::new(a, b).map(Some),
            (None, None) => Ok(None),
            _ => Err(Error::Config("set both first_year and last_year or neither".into())),
        }
    }

    pub fn load_options(&self) -> Result<LoadOptions> {
        Ok(LoadOptions {
            schema: self.schema()?,
            years: self.years()?,
            missing: self.data.missing,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let text = r#"
            seed = 7
            [data]
            grid = "g.csv"
            schema = ["a", "b"]
            first_year = 2009
            last_year = 2022
            [train]
            n_models = 3
            batch_size = 512
            weighting = "uniform"
            [calibration]
            blacklist = ["2017-09-26", "2018-07-01"]
            [quality]
            suspicious_cells = [4, 9]
            [[quality.radar_sites]]
            name = "valluga"
            lon = 10.2
            lat = 47.16
            active_until = "2014-12-31"
        "#;
        let cfg = RunConfig::from_toml_str(text, Path::new("/runs/a")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.dataset_paths().grid, PathBuf::from("/runs/a/g.csv"));
        assert_eq!(cfg.schema().unwrap().len(), 2);
        assert_eq!(cfg.years().unwrap().unwrap().len(), 14);
        assert_eq!(cfg.train.n_models, 3);
        assert_eq!(cfg.train.optimizer.batch_size, 512);
        assert_eq!(cfg.train.optimizer.patience, 20);
        assert_eq!(cfg.train.weighting, SampleWeighting::Uniform);
        assert_eq!(cfg.calibration.options().unwrap().blacklist.len(), 2);
        assert_eq!(cfg.quality.radar_sites[0].active_until, Some(DayDate::from_ymd(2014, 12, 31).unwrap()));
        assert_eq!(cfg.maps.horizons, vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn defaults_and_errors() {
        let cfg = RunConfig::from_toml_str("", Path::new(".")).unwrap();
        assert_eq!(cfg.train.n_models, 50);
        assert_eq!(cfg.train.weighting, SampleWeighting::Relevance);
        assert!(!cfg.train.batchnorm_on_output);
        assert_eq!(cfg.baseline.window_years, 10);
        assert!(RunConfig::from_toml_str("bogus = 1", Path::new(".")).is_err());
        let half = "[data]\nfirst_year = 2000";
        assert!(RunConfig::from_toml_str(half, Path::new(".")).unwrap().years().is_err());
    }
}
