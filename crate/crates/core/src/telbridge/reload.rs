use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::policy::{self, PolicyParams};
use crate::twinsim::SpacecraftConfig;

pub const POLICY_UPDATE: &str = "policy.update";
pub const CONFIG_UPDATE: &str = "config.update";

/// What a cycle is running with.
#[derive(Debug, Clone, PartialEq)]
pub struct ReloadState {
    pub params: PolicyParams,
    pub spacecraft: SpacecraftConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ReloadEvent {
    Applied { file: PathBuf },
    Rejected { file: PathBuf, reason: String },
}

/// Merges a TOML patch into the current configuration and validates the
/// result. Unknown keys are rejected.
pub fn apply_config_patch(current: &SpacecraftConfig, patch: &str) -> Result<SpacecraftConfig, String> {
    let patch: toml::Table = toml::from_str(patch).map_err(|e| format!("not a TOML table: {e}"))?;
    let mut base = toml::Table::try_from(current).map_err(|e| e.to_string())?;
    merge(&mut base, patch);
    let merged: SpacecraftConfig = base.try_into().map_err(|e: toml::de::Error| e.to_string())?;
    merged.validate().map_err(|e| e.to_string())?;
    Ok(merged)
}

fn merge(base: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn quarantine(path: &Path, reason: String) -> io::Result<ReloadEvent> {
    let rejected = suffixed(path, ".rejected");
    fs::rename(path, &rejected)?;
    fs::write(suffixed(path, ".rejected.reason"), format!("{reason}\n"))?;
    Ok(ReloadEvent::Rejected { file: rejected, reason })
}

fn accept(path: &Path) -> io::Result<ReloadEvent> {
    let applied = suffixed(path, ".applied");
    fs::rename(path, &applied)?;
    Ok(ReloadEvent::Applied { file: applied })
}

/// Checks the drop directory for update files and applies the valid ones to
/// `state`. Call only between cycles. A missing directory is a no-op.
pub fn hot_reload(dir: &Path, state: &mut ReloadState) -> io::Result<Vec<ReloadEvent>> {
    let mut events = Vec::new();
    if !dir.is_dir() {
        return Ok(events);
    }
    let policy_path = dir.join(POLICY_UPDATE);
    if policy_path.is_file() {
        match policy::load(&policy_path) {
            Ok(p) => {
                state.params = p;
                events.push(accept(&policy_path)?);
            }
            Err(e) => events.push(quarantine(&policy_path, e.to_string())?),
        }
    }
    let config_path = dir.join(CONFIG_UPDATE);
    if config_path.is_file() {
        let text = fs::read_to_string(&config_path);
        match text.map_err(|e| e.to_string()).and_then(|t| apply_config_patch(&state.spacecraft, &t)) {
            Ok(c) => {
                state.spacecraft = c;
                events.push(accept(&config_path)?);
            }
            Err(reason) => events.push(quarantine(&config_path, reason)?),
        }
    }
    Ok(events)
}
