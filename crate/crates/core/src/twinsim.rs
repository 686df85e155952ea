//! Digital twin of a 3U CubeSat in a survival scenario.
//!
//! One [`step`] advances a decision interval in fixed substeps. Each substep
//! propagates the orbit, executes the active control program kinematically
//! (rate-limited slews, momentum exchange lumped into the wheels, abstract
//! momentum dumping) and integrates the battery energy balance. Battery
//! depletion or a wheel at its speed limit ends the episode.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attmath::{
    dcm_from_mrp, mrp_from_dcm, relative_axis_angle, Dcm, Mrp, Vec3,
};
use crate::fswactions::{expand, MacroAction};

pub const OBS_LEN: usize = 16;

/// Names of the observation entries, in layout order.
pub const OBS_LAYOUT: [&str; OBS_LEN] = [
    "sigma_bn_1",
    "sigma_bn_2",
    "sigma_bn_3",
    "omega_bn_1",
    "omega_bn_2",
    "omega_bn_3",
    "r_n_1",
    "r_n_2",
    "r_n_3",
    "v_n_1",
    "v_n_2",
    "v_n_3",
    "battery_fraction",
    "wheel_fraction_1",
    "wheel_fraction_2",
    "wheel_fraction_3",
];

pub const BATTERY_INDEX: usize = 12;
pub const WHEEL_INDICES: [usize; 3] = [13, 14, 15];

/// Reward issued on the step that ends in failure.
pub const TERMINAL_REWARD: f64 = -1.5;

const SECONDS_PER_YEAR: f64 = 365.25 * 86_400.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid spacecraft configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("step called on a finished episode")]
    EpisodeOver,
}

/// Electrical load of each macro action on top of the base load, W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeLoads {
    pub drift: f64,
    pub charge: f64,
    pub desaturate: f64,
}

impl ModeLoads {
    pub fn get(&self, action: MacroAction) -> f64 {
        match action {
            MacroAction::Drift => self.drift,
            MacroAction::Charge => self.charge,
            MacroAction::Desaturate => self.desaturate,
        }
    }
}

/// Physical and scenario parameters, SI units throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpacecraftConfig {
    pub mass: f64,
    /// Principal moments of inertia, kg·m².
    pub inertia: Vec3,
    pub panel_area: f64,
    pub panel_efficiency: f64,
    pub panel_normal_body: Vec3,
    pub solar_flux: f64,
    pub battery_capacity: f64,
    pub base_load: f64,
    pub mode_loads: ModeLoads,
    pub wheel_max_speed: f64,
    pub wheel_momentum_max: f64,
    pub disturbance_torque_body: Vec3,
    pub slew_rate_max: f64,
    pub desat_unload_rate: f64,
    pub orbit_radius: f64,
    pub earth_mu: f64,
    pub earth_radius: f64,
    pub decision_interval: f64,
    pub episode_horizon: f64,
    pub substeps: u32,
    pub epoch_sun_direction: Vec3,
    pub sun_angular_rate: f64,
}

impl Default for SpacecraftConfig {
    fn default() -> Self {
        SpacecraftConfig {
            mass: 4.0,
            inertia: Vec3::new(0.042, 0.042, 0.0067),
            panel_area: 0.06,
            panel_efficiency: 0.29,
            panel_normal_body: Vec3::new(1.0, 0.0, 0.0),
            solar_flux: 1366.0,
            battery_capacity: 72_000.0,
            base_load: 13.0,
            mode_loads: ModeLoads { drift: 0.5, charge: 0.5, desaturate: 30.0 },
            wheel_max_speed: 600.0,
            wheel_momentum_max: 0.005,
            disturbance_torque_body: Vec3::new(6.0e-7, 4.0e-7, 5.0e-7),
            slew_rate_max: 0.01,
            desat_unload_rate: 1.0e-5,
            orbit_radius: 6_771_000.0,
            earth_mu: 3.986_004_418e14,
            earth_radius: 6_371_000.0,
            decision_interval: 60.0,
            episode_horizon: 7_200.0,
            substeps: 10,
            epoch_sun_direction: Vec3::new(1.0, 0.0, 0.0),
            sun_angular_rate: TAU / SECONDS_PER_YEAR,
        }
    }
}

impl SpacecraftConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("mass", self.mass),
            ("panel_area", self.panel_area),
            ("panel_efficiency", self.panel_efficiency),
            ("solar_flux", self.solar_flux),
            ("battery_capacity", self.battery_capacity),
            ("base_load", self.base_load),
            ("wheel_max_speed", self.wheel_max_speed),
            ("wheel_momentum_max", self.wheel_momentum_max),
            ("slew_rate_max", self.slew_rate_max),
            ("desat_unload_rate", self.desat_unload_rate),
            ("orbit_radius", self.orbit_radius),
            ("earth_mu", self.earth_mu),
            ("earth_radius", self.earth_radius),
            ("decision_interval", self.decision_interval),
            ("episode_horizon", self.episode_horizon),
            ("sun_angular_rate", self.sun_angular_rate),
            ("inertia.x", self.inertia.x),
            ("inertia.y", self.inertia.y),
            ("inertia.z", self.inertia.z),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!("{name} must be finite and > 0 (got {v})")));
            }
        }
        let loads = [self.mode_loads.drift, self.mode_loads.charge, self.mode_loads.desaturate];
        if loads.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(SimError::Config("mode loads must be finite and >= 0".into()));
        }
        if self.panel_efficiency > 1.0 {
            return Err(SimError::Config("panel_efficiency must be <= 1".into()));
        }
        if self.disturbance_torque_body.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Config("disturbance torque must be finite".into()));
        }
        for (name, v) in [("panel_normal_body", self.panel_normal_body), ("epoch_sun_direction", self.epoch_sun_direction)] {
            if !((v.norm() - 1.0).abs() < 1e-9) {
                return Err(SimError::Config(format!("{name} must be a unit vector")));
            }
        }
        if self.substeps == 0 {
            return Err(SimError::Config("substeps must be >= 1".into()));
        }
        if self.orbit_radius <= self.earth_radius {
            return Err(SimError::Config("orbit_radius must exceed earth_radius".into()));
        }
        let k = self.episode_horizon / self.decision_interval;
        if (k - k.round()).abs() > 1e-9 * k.max(1.0) || k.round() < 1.0 {
            return Err(SimError::Config(format!(
                "decision_interval {} does not divide episode_horizon {}",
                self.decision_interval, self.episode_horizon
            )));
        }
        Ok(())
    }

    /// Number of decisions in a full episode.
    pub fn steps_per_episode(&self) -> u32 {
        (self.episode_horizon / self.decision_interval).round() as u32
    }

    pub fn circular_speed(&self) -> f64 {
        (self.earth_mu / self.orbit_radius).sqrt()
    }

    /// Wheel rotor inertia implied by the momentum and speed limits.
    pub fn wheel_inertia(&self) -> f64 {
        self.wheel_momentum_max / self.wheel_max_speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    BatteryDepleted,
    WheelSaturation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Alive,
    Terminated(FailureCause),
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    pub step_index: u32,
    pub r: Vec3,
    pub v: Vec3,
    pub sigma_bn: Mrp,
    pub omega_bn_body: Vec3,
    pub battery_energy: f64,
    pub wheel_speeds: Vec3,
    pub active_action: MacroAction,
    pub seed: u64,
    pub status: EpisodeStatus,
}

impl SimState {
    pub fn is_alive(&self) -> bool {
        self.status == EpisodeStatus::Alive
    }

    pub fn bn(&self) -> Dcm {
        dcm_from_mrp(&self.sigma_bn)
    }
}

/// Fixed-layout normalized state vector; see [`OBS_LAYOUT`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_LEN]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn index_of(name: &str) -> Option<usize> {
        OBS_LAYOUT.iter().position(|n| *n == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub eclipse: bool,
    /// Mean solar input over the step, W.
    pub power_in: f64,
    /// Mean electrical load over the step, W.
    pub power_out: f64,
    pub failure: Option<FailureCause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

pub fn reset(config: &SpacecraftConfig, seed: u64) -> Result<(SimState, Observation), SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.gen_range(0.0..TAU);
    let (s, c) = phase.sin_cos();
    let vc = config.circular_speed();
    let r = Vec3::new(c, s, 0.0) * config.orbit_radius;
    let v = Vec3::new(-s, c, 0.0) * vc;

    // uniform random attitude from a normalized Gaussian quaternion
    let mut q = [0.0f64; 4];
    loop {
        for qi in q.iter_mut() {
            *qi = standard_normal(&mut rng);
        }
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.iter_mut().for_each(|x| *x /= n);
            break;
        }
    }
    if q[0] < 0.0 {
        q.iter_mut().for_each(|x| *x = -*x);
    }
    let sigma = Mrp::new(Vec3::new(q[1], q[2], q[3]) / (1.0 + q[0]))
        .map_err(|e| SimError::InvalidArgument(e.to_string()))?;

    let w = 0.2 * config.slew_rate_max;
    let omega = Vec3::new(rng.gen_range(-w..w), rng.gen_range(-w..w), rng.gen_range(-w..w));
    let wm = 0.1 * config.wheel_max_speed;
    let wheels = Vec3::new(rng.gen_range(-wm..wm), rng.gen_range(-wm..wm), rng.gen_range(-wm..wm));
    let battery = rng.gen_range(0.6..1.0) * config.battery_capacity;

    let state = SimState {
        t: 0.0,
        step_index: 0,
        r,
        v,
        sigma_bn: sigma,
        omega_bn_body: omega,
        battery_energy: battery,
        wheel_speeds: wheels,
        active_action: MacroAction::Drift,
        seed,
        status: EpisodeStatus::Alive,
    };
    let obs = observe(&state, config);
    Ok((state, obs))
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

pub fn step(state: &SimState, action: MacroAction, config: &SpacecraftConfig) -> Result<(SimState, StepResult), SimError> {
    if !state.is_alive() {
        return Err(SimError::EpisodeOver);
    }
    let program = expand(action, state, config);
    let target = program.slew_target().map(dcm_from_mrp);
    let slew_rate = program.slew_rate().unwrap_or(config.slew_rate_max);
    let unload = program.unload_rate().unwrap_or(0.0);

    let n = config.substeps;
    let dt = config.decision_interval / n as f64;
    let t0 = state.step_index as f64 * config.decision_interval;
    let j_wheel = config.wheel_inertia();
    let load = config.base_load + config.mode_loads.get(action);

    let mut s = state.clone();
    s.active_action = action;
    let mut failure = None;
    let mut energy_in = 0.0;
    let mut elapsed = 0.0;
    let mut last_eclipse = false;

    for j in 0..n {
        let (r, v) = propagate_orbit(&s.r, &s.v, dt, config.earth_mu);
        s.r = r;
        s.v = v;
        s.t = t0 + (j + 1) as f64 * dt;

        let bn = s.bn();
        let omega_old = s.omega_bn_body;
        let (bn_new, omega_new) = match &target {
            None => {
                let rate = omega_old.norm();
                if rate > 0.0 {
                    let rot = dcm_from_mrp(&Mrp::from_axis_angle(&omega_old, rate * dt));
                    (Dcm::from_matrix_unchecked(rot.matrix() * bn.matrix()), omega_old)
                } else {
                    (bn, omega_old)
                }
            }
            Some(target) => {
                let (axis, angle) = relative_axis_angle(&bn, target);
                let turn = angle.min(slew_rate * dt);
                if turn > 0.0 {
                    let rot = dcm_from_mrp(&Mrp::from_axis_angle(&axis, turn));
                    (Dcm::from_matrix_unchecked(rot.matrix() * bn.matrix()), axis * (turn / dt))
                } else {
                    (bn, Vec3::zeros())
                }
            }
        };
        s.sigma_bn = mrp_from_dcm(&bn_new);
        s.omega_bn_body = omega_new;

        let mut h = s.wheel_speeds * j_wheel;
        h += config.disturbance_torque_body * dt;
        h -= config.inertia.component_mul(&(omega_new - omega_old));
        if unload > 0.0 {
            let dump = unload * dt;
            h.iter_mut().for_each(|hi| *hi -= hi.signum() * hi.abs().min(dump));
        }
        s.wheel_speeds = h / j_wheel;

        let sun = sun_direction(s.t, config);
        last_eclipse = eclipse(&s.r, &sun, config.earth_radius);
        let p_in = solar_power_at(&bn_new, &s.r, &sun, config);
        energy_in += p_in * dt;
        elapsed += dt;
        s.battery_energy = (s.battery_energy + (p_in - load) * dt).min(config.battery_capacity);

        if s.battery_energy <= 0.0 {
            s.battery_energy = 0.0;
            failure = Some(FailureCause::BatteryDepleted);
        } else if s.wheel_speeds.iter().any(|w| w.abs() >= config.wheel_max_speed) {
            failure = Some(FailureCause::WheelSaturation);
        }
        if failure.is_some() {
            break;
        }
    }

    let (reward, terminated, truncated) = match failure {
        Some(cause) => {
            s.status = EpisodeStatus::Terminated(cause);
            (TERMINAL_REWARD, true, false)
        }
        None => {
            s.step_index += 1;
            s.t = s.step_index as f64 * config.decision_interval;
            let done = s.step_index >= config.steps_per_episode();
            if done {
                s.status = EpisodeStatus::Truncated;
            }
            (config.decision_interval / config.episode_horizon, false, done)
        }
    };
    let info = StepInfo {
        eclipse: last_eclipse,
        power_in: energy_in / elapsed,
        power_out: load,
        failure,
    };
    let observation = observe(&s, config);
    Ok((s, StepResult { observation, reward, terminated, truncated, info }))
}

/// Two-body propagation with one fixed RK4 step of `dt` seconds.
pub fn propagate_orbit(r: &Vec3, v: &Vec3, dt: f64, mu: f64) -> (Vec3, Vec3) {
    let accel = |p: &Vec3| -> Vec3 { -mu * p / p.norm().powi(3) };
    let k1r = *v;
    let k1v = accel(r);
    let k2r = v + k1v * (dt / 2.0);
    let k2v = accel(&(r + k1r * (dt / 2.0)));
    let k3r = v + k2v * (dt / 2.0);
    let k3v = accel(&(r + k2r * (dt / 2.0)));
    let k4r = v + k3v * dt;
    let k4v = accel(&(r + k3r * dt));
    (
        r + (k1r + 2.0 * k2r + 2.0 * k3r + k4r) * (dt / 6.0),
        v + (k1v + 2.0 * k2v + 2.0 * k3v + k4v) * (dt / 6.0),
    )
}

/// Inertial sun direction: the epoch direction turned about inertial z.
pub fn sun_direction(t: f64, config: &SpacecraftConfig) -> Vec3 {
    let (s, c) = (config.sun_angular_rate * t).sin_cos();
    let e = config.epoch_sun_direction;
    Vec3::new(c * e.x - s * e.y, s * e.x + c * e.y, e.z)
}

/// Cylindrical shadow test.
pub fn eclipse(r: &Vec3, sun: &Vec3, earth_radius: f64) -> bool {
    let along = r.dot(sun);
    along < 0.0 && (r - sun * along).norm() < earth_radius
}

pub fn solar_power(state: &SimState, config: &SpacecraftConfig) -> f64 {
    let sun = sun_direction(state.t, config);
    solar_power_at(&state.bn(), &state.r, &sun, config)
}

/// Cosine of the angle between the panel normal and the sun.
pub fn sun_incidence(bn: &Dcm, sun: &Vec3, config: &SpacecraftConfig) -> f64 {
    bn.transpose().apply(&config.panel_normal_body).dot(sun)
}

fn solar_power_at(bn: &Dcm, r: &Vec3, sun: &Vec3, config: &SpacecraftConfig) -> f64 {
    if eclipse(r, sun, config.earth_radius) {
        return 0.0;
    }
    config.panel_efficiency * config.panel_area * config.solar_flux * sun_incidence(bn, sun, config).max(0.0)
}

pub fn observe(state: &SimState, config: &SpacecraftConfig) -> Observation {
    assemble_observation(
        &state.sigma_bn,
        &state.omega_bn_body,
        &state.r,
        &state.v,
        state.battery_energy / config.battery_capacity,
        &state.wheel_speeds,
        config,
    )
}

/// Normalizes physical quantities (SI units) into the observation layout.
pub fn assemble_observation(
    sigma_bn: &Mrp,
    omega_bn_body: &Vec3,
    r: &Vec3,
    v: &Vec3,
    battery_fraction: f64,
    wheel_speeds: &Vec3,
    config: &SpacecraftConfig,
) -> Observation {
    let mut o = [0.0; OBS_LEN];
    let omega = omega_bn_body / (2.0 * config.slew_rate_max);
    let r = r / config.orbit_radius;
    let v = v / config.circular_speed();
    let wheels = wheel_speeds / config.wheel_max_speed;
    o[0..3].copy_from_slice(sigma_bn.vector().as_slice());
    o[3..6].copy_from_slice(omega.as_slice());
    o[6..9].copy_from_slice(r.as_slice());
    o[9..12].copy_from_slice(v.as_slice());
    o[BATTERY_INDEX] = battery_fraction;
    o[13..16].copy_from_slice(wheels.as_slice());
    Observation(o)
}

/// Shrinks battery capacity and wheel limits to make failures reachable.
pub fn harden(config: &SpacecraftConfig, battery_factor: f64, wheel_factor: f64) -> Result<SpacecraftConfig, SimError> {
    for (name, f) in [("battery_factor", battery_factor), ("wheel_factor", wheel_factor)] {
        if !(f > 0.0 && f <= 1.0) {
            return Err(SimError::InvalidArgument(format!("{name} must be in (0, 1], got {f}")));
        }
    }
    let mut c = config.clone();
    c.battery_capacity *= battery_factor;
    c.wheel_max_speed *= wheel_factor;
    c.wheel_momentum_max *= wheel_factor;
    Ok(c)
}
