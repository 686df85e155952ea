use std::fs;
use std::path::{Path, PathBuf};

use carl_core::ppotrain::TrainConfig;
use carl_core::telbridge::{ModeMap, RateFrame, ShadowConfig, TelemetryFormat};
use carl_core::twinsim::SpacecraftConfig;
use carl_core::xray::SweepSpec;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowSection {
    pub rate_frame: RateFrame,
    pub initial_charge: f64,
    pub mode_map: ModeMap,
    /// `csv` or `jsonl`; inferred from the file extension when absent.
    pub format: Option<String>,
    pub log: Option<PathBuf>,
    /// Polled for `policy.update` / `config.update` between cycles.
    pub drop_dir: Option<PathBuf>,
    pub max_skips: Option<usize>,
}

impl Default for ShadowSection {
    fn default() -> Self {
        let d = ShadowConfig::default();
        ShadowSection {
            rate_frame: d.rate_frame,
            initial_charge: d.initial_charge,
            mode_map: d.mode_map,
            format: None,
            log: None,
            drop_dir: None,
            max_skips: None,
        }
    }
}

impl ShadowSection {
    pub fn shadow_config(&self) -> ShadowConfig {
        ShadowConfig { rate_frame: self.rate_frame, initial_charge: self.initial_charge, mode_map: self.mode_map.clone() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownlinkSection {
    pub whitelist: Vec<String>,
    pub budget: usize,
}

impl Default for DownlinkSection {
    fn default() -> Self {
        DownlinkSection {
            whitelist: ["timestamp", "recommended", "probabilities", "actual_mode"].map(String::from).to_vec(),
            budget: 4096,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub spacecraft: SpacecraftConfig,
    pub train: TrainConfig,
    pub sweep: SweepSpec,
    pub shadow: ShadowSection,
    pub downlink: DownlinkSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.shadow.log, &mut cfg.shadow.drop_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.spacecraft.validate().map_err(|e| format!("[spacecraft] {e}"))?;
        self.train.validate().map_err(|e| format!("[train] {e}"))?;
        self.sweep.validate().map_err(|e| format!("[sweep] {e}"))?;
        if !(0.0..=1.0).contains(&self.shadow.initial_charge) {
            return Err("[shadow] initial_charge must be in [0, 1]".into());
        }
        if let Some(f) = &self.shadow.format {
            f.parse::<TelemetryFormat>().map_err(|e| format!("[shadow] {e}"))?;
        }
        if self.downlink.whitelist.is_empty() {
            return Err("[downlink] whitelist must not be empty".into());
        }
        Ok(())
    }
}
