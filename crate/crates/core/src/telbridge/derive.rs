use serde::{Deserialize, Serialize};

use super::record::TelemetryRecord;
use super::units::{Dimension, Quantity, Unit};
use super::TelemetryError;
use crate::attmath::{
    compose_bn, dcm_from_euler321, euler321_from_dcm, hill_frame, mrp_from_dcm, omega_bn, orbit_rate, EulerYpr, Vec3,
};
use crate::twinsim::{assemble_observation, Observation, SimState, SpacecraftConfig};

/// Frame the telemetered body rates are measured against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateFrame {
    /// Relative to the Hill frame; the orbit rate is added during derivation.
    #[default]
    Hill,
    Inertial,
}

/// State of charge by energy counting.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryTracker {
    capacity: Quantity,
    energy: Quantity,
    last_timestamp: Option<f64>,
}

impl BatteryTracker {
    pub fn new(capacity_j: f64, initial_fraction: f64) -> Self {
        BatteryTracker {
            capacity: Quantity::si(capacity_j, Dimension::Energy),
            energy: Quantity::si(capacity_j * initial_fraction.clamp(0.0, 1.0), Dimension::Energy),
            last_timestamp: None,
        }
    }

    pub fn fraction(&self) -> f64 {
        self.energy.si_value() / self.capacity.si_value()
    }

    /// Changes the capacity, keeping the state of charge.
    pub fn set_capacity(&mut self, capacity_j: f64) {
        let z = self.fraction();
        self.capacity = Quantity::si(capacity_j, Dimension::Energy);
        self.energy = Quantity::si(capacity_j * z, Dimension::Energy);
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.last_timestamp
    }

    /// Integrates the reported power since the previous record. The first
    /// record only sets the time reference.
    pub fn update(&mut self, record: &TelemetryRecord) -> Result<f64, TelemetryError> {
        let t = record.timestamp;
        if let Some(prev) = self.last_timestamp {
            if !(t > prev) {
                return Err(TelemetryError::Order { previous: prev, current: t });
            }
            fn unit_err(column: &'static str) -> impl Fn(super::units::UnitError) -> TelemetryError {
                move |source| TelemetryError::Unit { column: column.to_string(), source }
            }
            let power = record
                .get("batt_voltage")?
                .checked_mul(record.get("batt_current")?)
                .map_err(unit_err("batt_current"))?
                .checked_mul(record.get("batt_current_dir")?)
                .map_err(unit_err("batt_current_dir"))?;
            let dt = Quantity::new(t - prev, Unit::S);
            let delta = power.checked_mul(&dt).map_err(unit_err("timestamp"))?;
            let energy = self.energy.checked_add(&delta).map_err(unit_err("batt_voltage"))?;
            let cap = self.capacity.si_value();
            self.energy = Quantity::si(energy.si_value().clamp(0.0, cap), Dimension::Energy);
        }
        self.last_timestamp = Some(t);
        Ok(self.fraction())
    }
}

/// Physical state reconstructed from one telemetry record.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedState {
    pub t: f64,
    pub r: Vec3,
    pub v: Vec3,
    pub sigma_bn: crate::attmath::Mrp,
    pub omega_bn_body: Vec3,
    pub battery_fraction: f64,
    pub wheel_speeds: Vec3,
}

impl DerivedState {
    pub fn observation(&self, config: &SpacecraftConfig) -> Observation {
        assemble_observation(
            &self.sigma_bn,
            &self.omega_bn_body,
            &self.r,
            &self.v,
            self.battery_fraction,
            &self.wheel_speeds,
            config,
        )
    }

    /// Twin state for expanding macro actions against this attitude.
    pub fn sim_state(&self, config: &SpacecraftConfig) -> SimState {
        SimState {
            t: self.t,
            step_index: 0,
            r: self.r,
            v: self.v,
            sigma_bn: self.sigma_bn,
            omega_bn_body: self.omega_bn_body,
            battery_energy: self.battery_fraction * config.battery_capacity,
            wheel_speeds: self.wheel_speeds,
            active_action: crate::fswactions::MacroAction::Drift,
            seed: 0,
            status: crate::twinsim::EpisodeStatus::Alive,
        }
    }
}

pub fn derive_state(record: &TelemetryRecord, tracker: &mut BatteryTracker, rate_frame: RateFrame) -> Result<DerivedState, TelemetryError> {
    let r = record.vec3("pos", Dimension::Length)?;
    let v = record.vec3("vel", Dimension::Velocity)?;
    let on = hill_frame(&r, &v)?;
    let euler = EulerYpr {
        yaw: record.si("est_yaw", Dimension::Angle)?,
        pitch: record.si("est_pitch", Dimension::Angle)?,
        roll: record.si("est_roll", Dimension::Angle)?,
    };
    let bo = dcm_from_euler321(euler)?;
    let bn = compose_bn(&bo, &on);
    let rate = record.vec3("rate", Dimension::AngularRate)?;
    let omega = match rate_frame {
        RateFrame::Hill => omega_bn(&rate, &r, &v, &bo)?,
        RateFrame::Inertial => rate,
    };
    let wheels = record.vec3("wheel_speed", Dimension::AngularRate)?;
    let z = tracker.update(record)?;
    Ok(DerivedState { t: record.timestamp, r, v, sigma_bn: mrp_from_dcm(&bn), omega_bn_body: omega, battery_fraction: z, wheel_speeds: wheels })
}

pub fn derive_observation(
    record: &TelemetryRecord,
    tracker: &mut BatteryTracker,
    config: &SpacecraftConfig,
    rate_frame: RateFrame,
) -> Result<Observation, TelemetryError> {
    Ok(derive_state(record, tracker, rate_frame)?.observation(config))
}

/// Units used when synthesizing telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthUnits {
    pub angle: Unit,
    pub length: Unit,
    pub velocity: Unit,
    pub rate: Unit,
    pub wheel: Unit,
}

impl Default for SynthUnits {
    fn default() -> Self {
        SynthUnits { angle: Unit::Deg, length: Unit::Km, velocity: Unit::KmS, rate: Unit::DegS, wheel: Unit::Rpm }
    }
}

/// Bus voltage reported by synthesized telemetry.
pub const SYNTH_BUS_VOLTAGE: f64 = 8.0;

fn insert(rec: &mut TelemetryRecord, name: &str, si: f64, unit: Unit) {
    rec.fields.insert(name.to_string(), Quantity::new(si / unit.to_si(), unit));
}

fn insert3(rec: &mut TelemetryRecord, prefix: &str, v: &Vec3, unit: Unit) {
    for (axis, x) in ["x", "y", "z"].iter().zip(v.iter()) {
        insert(rec, &format!("{prefix}_{axis}"), *x, unit);
    }
}

/// Telemetry a flight computer in twin state `state` would report.
/// `previous` supplies the energy change since the last record; without it
/// the battery current is zero.
pub fn synthesize_record(
    state: &SimState,
    previous: Option<&SimState>,
    rate_frame: RateFrame,
    units: SynthUnits,
    mode: Option<&str>,
) -> Result<TelemetryRecord, TelemetryError> {
    let on = hill_frame(&state.r, &state.v)?;
    let bn = state.bn();
    let bo = crate::attmath::Dcm::new(bn.matrix() * on.matrix().transpose())?;
    let e = euler321_from_dcm(&bo);
    let rate = match rate_frame {
        RateFrame::Hill => state.omega_bn_body - bo.apply(&Vec3::new(0.0, 0.0, orbit_rate(&state.r, &state.v))),
        RateFrame::Inertial => state.omega_bn_body,
    };
    let mut rec = TelemetryRecord { timestamp: state.t, fields: Default::default(), mode: mode.map(str::to_string) };
    insert(&mut rec, "est_roll", e.roll, units.angle);
    insert(&mut rec, "est_pitch", e.pitch, units.angle);
    insert(&mut rec, "est_yaw", e.yaw, units.angle);
    insert3(&mut rec, "pos", &state.r, units.length);
    insert3(&mut rec, "vel", &state.v, units.velocity);
    insert3(&mut rec, "rate", &rate, units.rate);
    insert3(&mut rec, "wheel_speed", &state.wheel_speeds, units.wheel);
    let (current, dir) = match previous {
        Some(p) if state.t > p.t => {
            let de = state.battery_energy - p.battery_energy;
            (de.abs() / (SYNTH_BUS_VOLTAGE * (state.t - p.t)), if de < 0.0 { -1.0 } else { 1.0 })
        }
        _ => (0.0, 1.0),
    };
    insert(&mut rec, "batt_voltage", SYNTH_BUS_VOLTAGE, Unit::V);
    insert(&mut rec, "batt_current", current, Unit::A);
    insert(&mut rec, "batt_current_dir", dir, Unit::One);
    Ok(rec)
}

/// Telemetry from one twin episode in which the policy's highest-probability
/// action is executed each step; each record's mode names that action.
/// Returns the records and the initial state of charge.
pub fn twin_rollout_telemetry(
    env: &SpacecraftConfig,
    params: &crate::policy::PolicyParams,
    seed: u64,
    rate_frame: RateFrame,
    units: SynthUnits,
) -> Result<(Vec<TelemetryRecord>, f64), TelemetryError> {
    let sim = |e: crate::twinsim::SimError| TelemetryError::Format(e.to_string());
    let (mut state, mut obs) = crate::twinsim::reset(env, seed).map_err(sim)?;
    let initial = state.battery_energy / env.battery_capacity;
    let mut prev: Option<SimState> = None;
    let mut out = Vec::new();
    loop {
        let (logits, _) = params.forward(obs.as_slice())?;
        let action = crate::policy::argmax(&crate::policy::distribution(&logits));
        out.push(synthesize_record(&state, prev.as_ref(), rate_frame, units, Some(action.name()))?);
        let (next, res) = crate::twinsim::step(&state, action, env).map_err(sim)?;
        if res.terminated || res.truncated {
            break;
        }
        prev = Some(state);
        state = next;
        obs = res.observation;
    }
    Ok((out, initial))
}
