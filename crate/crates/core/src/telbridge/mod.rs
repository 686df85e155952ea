//! Flight-side integration: keyed, unit-checked telemetry ingestion,
//! observation derivation, shadow inference, downlink packing and file-drop
//! hot reload.

pub mod derive;
pub mod downlink;
pub mod record;
pub mod reload;
pub mod shadow;
pub mod units;

use thiserror::Error;

use crate::attmath::AttitudeError;
use crate::policy::PolicyError;

pub use derive::{derive_observation, synthesize_record, twin_rollout_telemetry, BatteryTracker, RateFrame, SynthUnits};
pub use downlink::{pack_downlink, unpack_downlink, DownlinkError, DownlinkPacket};
pub use record::{parse_json_line, parse_telemetry, TelemetryFormat, TelemetryRecord};
pub use reload::{hot_reload, ReloadEvent, ReloadState};
pub use shadow::{shadow_run, ModeMap, ShadowConfig, ShadowEvent, ShadowLogEntry, ShadowRunner, ShadowSummary};
pub use units::{Dimension, Quantity, Unit, UnitError};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("missing telemetry fields: {}", .0.join(", "))]
    MissingFields(Vec<String>),
    #[error("column {column}: {source}")]
    Unit { column: String, source: UnitError },
    #[error("field {field}: cannot parse {value:?} as a number")]
    Parse { field: String, value: String },
    #[error("field {0} appears more than once")]
    Duplicate(String),
    #[error("malformed telemetry: {0}")]
    Format(String),
    #[error("timestamp {current} does not follow {previous}")]
    Order { previous: f64, current: f64 },
    #[error("frame: {0}")]
    Frame(#[from] AttitudeError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}
