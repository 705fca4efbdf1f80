//! Enhancement parameters and their on-disk TOML form.
//!
//! The file mirrors [`EnhancementParams`] field names, except that the three
//! SNR thresholds are written in dB (`xi_min_db`, `xi_max_db`, `xi_peak_db`)
//! and converted to linear power ratios on load. Missing keys keep defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::StftConfig;

pub const DEFAULT_MU: f64 = 0.6;
pub const DEFAULT_XI_MIN_DB: f64 = -10.0;
pub const DEFAULT_XI_MAX_DB: f64 = -5.0;
pub const DEFAULT_XI_PEAK_DB: f64 = 10.0;
pub const DEFAULT_W_LOCAL: usize = 1;
pub const DEFAULT_W_GLOBAL: usize = 15;
pub const DEFAULT_ALPHA_XI: f64 = 0.7;
pub const DEFAULT_NOISE_BETA: f64 = 0.7;
pub const DEFAULT_VAD_THRESHOLD_DB: f64 = 3.0;
pub const DEFAULT_INIT_FRAME_COUNT: usize = 6;

pub fn db_to_power_ratio(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn power_ratio_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementParams {
    /// Scale of the phase compensation function.
    pub mu: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    pub xi_peak: f64,
    pub w_local: usize,
    pub w_global: usize,
    pub alpha_xi: f64,
    pub m_config: StftConfig,
    pub p_config: StftConfig,
    pub vad_threshold_db: f64,
    /// Recursive-averaging constant of the noise tracker.
    pub noise_beta: f64,
    pub init_frame_count: usize,
}

impl Default for EnhancementParams {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            xi_min: db_to_power_ratio(DEFAULT_XI_MIN_DB),
            xi_max: db_to_power_ratio(DEFAULT_XI_MAX_DB),
            xi_peak: db_to_power_ratio(DEFAULT_XI_PEAK_DB),
            w_local: DEFAULT_W_LOCAL,
            w_global: DEFAULT_W_GLOBAL,
            alpha_xi: DEFAULT_ALPHA_XI,
            m_config: StftConfig::m_step_default(),
            p_config: StftConfig::p_step_default(),
            vad_threshold_db: DEFAULT_VAD_THRESHOLD_DB,
            noise_beta: DEFAULT_NOISE_BETA,
            init_frame_count: DEFAULT_INIT_FRAME_COUNT,
        }
    }
}

impl EnhancementParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.xi_min > 0.0 && self.xi_min < self.xi_max) || !self.xi_max.is_finite() {
            return bad(format!(
                "need 0 < xi_min < xi_max, got {} and {}",
                self.xi_min, self.xi_max
            ));
        }
        if !(self.xi_peak.is_finite() && self.xi_peak > 0.0) {
            return bad(format!("xi_peak must be positive, got {}", self.xi_peak));
        }
        if !(self.alpha_xi > 0.0 && self.alpha_xi < 1.0) {
            return bad(format!("alpha_xi must be in (0,1), got {}", self.alpha_xi));
        }
        if self.w_local >= self.w_global {
            return bad(format!(
                "w_local ({}) must be smaller than w_global ({})",
                self.w_local, self.w_global
            ));
        }
        if !(self.noise_beta > 0.0 && self.noise_beta < 1.0) {
            return bad(format!(
                "noise_beta must be in (0,1), got {}",
                self.noise_beta
            ));
        }
        if !self.vad_threshold_db.is_finite() {
            return bad("vad_threshold_db must be finite".into());
        }
        if self.init_frame_count == 0 {
            return bad("init_frame_count must be at least 1".into());
        }
        Ok(())
    }

    /// Overlays the keys present in `file` onto `self`.
    pub fn apply(&mut self, file: &ParamsFile) {
        let ParamsFile {
            mu,
            xi_min_db,
            xi_max_db,
            xi_peak_db,
            w_local,
            w_global,
            alpha_xi,
            m_config,
            p_config,
            vad_threshold_db,
            noise_beta,
            init_frame_count,
        } = file;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v.clone();
                }
            };
        }
        set!(self.mu, mu);
        set!(self.w_local, w_local);
        set!(self.w_global, w_global);
        set!(self.alpha_xi, alpha_xi);
        set!(self.m_config, m_config);
        set!(self.p_config, p_config);
        set!(self.vad_threshold_db, vad_threshold_db);
        set!(self.noise_beta, noise_beta);
        set!(self.init_frame_count, init_frame_count);
        if let Some(db) = xi_min_db {
            self.xi_min = db_to_power_ratio(*db);
        }
        if let Some(db) = xi_max_db {
            self.xi_max = db_to_power_ratio(*db);
        }
        if let Some(db) = xi_peak_db {
            self.xi_peak = db_to_power_ratio(*db);
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ParamsFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut params = Self::default();
        params.apply(&file);
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).at(path))?;
        Self::from_toml_str(&text).map_err(|e| e.at(path))
    }

    /// Fully resolved file form, dB-valued where the config file is.
    pub fn to_file(&self) -> ParamsFile {
        ParamsFile {
            mu: Some(self.mu),
            xi_min_db: Some(power_ratio_to_db(self.xi_min)),
            xi_max_db: Some(power_ratio_to_db(self.xi_max)),
            xi_peak_db: Some(power_ratio_to_db(self.xi_peak)),
            w_local: Some(self.w_local),
            w_global: Some(self.w_global),
            alpha_xi: Some(self.alpha_xi),
            m_config: Some(self.m_config),
            p_config: Some(self.p_config),
            vad_threshold_db: Some(self.vad_threshold_db),
            noise_beta: Some(self.noise_beta),
            init_frame_count: Some(self.init_frame_count),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_min_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_max_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_peak_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_local: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_global: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_xi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vad_threshold_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_frame_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_config: Option<StftConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_config: Option<StftConfig>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::WindowKind;

    #[test]
    fn defaults_are_table_values() {
        let p = EnhancementParams::default();
        assert_eq!(p.mu, 0.6);
        assert!((p.xi_min - 0.1).abs() < 1e-15);
        assert!((p.xi_max - 0.316_227_766_016_837_94).abs() < 1e-15);
        assert!((p.xi_peak - 10.0).abs() < 1e-12);
        assert_eq!((p.w_local, p.w_global), (1, 15));
        assert_eq!(p.alpha_xi, 0.7);
        assert_eq!(p.noise_beta, 0.7);
        p.validate().unwrap();
    }

    #[test]
    fn empty_file_reproduces_defaults() {
        assert_eq!(
            EnhancementParams::from_toml_str("").unwrap(),
            EnhancementParams::default()
        );
    }

    #[test]
    fn file_overrides_and_db_conversion() {
        let p = EnhancementParams::from_toml_str(
            r#"
            mu = 0.8
            xi_min_db = -20.0
            [p_config]
            window = "modified_hanning"
            frame_len = 256
            hop = 64
            "#,
        )
        .unwrap();
        assert_eq!(p.mu, 0.8);
        assert!((p.xi_min - 0.01).abs() < 1e-15);
        assert_eq!(
            p.p_config,
            StftConfig::new(WindowKind::ModifiedHanning, 256, 64).unwrap()
        );
    }

    #[test]
    fn resolved_file_round_trips() {
        let p = EnhancementParams::default();
        let text = toml::to_string(&p.to_file()).unwrap();
        let back = EnhancementParams::from_toml_str(&text).unwrap();
        assert!((back.xi_max - p.xi_max).abs() < 1e-15);
        assert_eq!(back.p_config, p.p_config);
    }

    #[test]
    fn rejects_invalid() {
        assert!(EnhancementParams::from_toml_str("xi_min_db = -4.0").is_err());
        assert!(EnhancementParams::from_toml_str("alpha_xi = 1.0").is_err());
        assert!(EnhancementParams::from_toml_str("w_local = 20").is_err());
        assert!(EnhancementParams::from_toml_str("bogus = 1").is_err());
        assert!(EnhancementParams::from_toml_str(
            "[m_config]\nwindow='hamming'\nframe_len=100\nhop=0"
        )
        .is_err());
    }
}
