//! Macro actions, their expansion into primitive control programs, and the
//! operator-readable script for each program.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attmath::{dcm_from_mrp, mrp_from_dcm, rotation_about, Dcm, Mrp, Vec3};
use crate::twinsim::{sun_direction, SimState, SpacecraftConfig};

/// High-level command. The integer code doubles as the policy logit index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacroAction {
    Drift = 0,
    Charge = 1,
    Desaturate = 2,
}

impl MacroAction {
    pub const ALL: [MacroAction; 3] = [MacroAction::Drift, MacroAction::Charge, MacroAction::Desaturate];
    pub const NAMES: [&'static str; 3] = ["drift", "charge", "desaturate"];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.code()]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name.trim()))
            .map(|i| Self::ALL[i])
    }
}

impl fmt::Display for MacroAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    ClearQueue,
    /// Commanded slew rate, rad/s.
    SetRate(f64),
    SlewTo(Mrp),
    /// Momentum dump rate, N·m·s per s.
    UnloadMomentum(f64),
}

/// Primitive instructions for one macro action, plus the attitude context
/// the program was built from (used when rendering the operator script).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlProgram {
    pub action: MacroAction,
    pub primitives: Vec<Primitive>,
    pub current_attitude: Mrp,
    pub sun_body: Vec3,
}

impl ControlProgram {
    pub fn slew_target(&self) -> Option<&Mrp> {
        self.primitives.iter().find_map(|p| match p {
            Primitive::SlewTo(t) => Some(t),
            _ => None,
        })
    }

    pub fn slew_rate(&self) -> Option<f64> {
        self.primitives.iter().find_map(|p| match *p {
            Primitive::SetRate(w) => Some(w),
            _ => None,
        })
    }

    pub fn unload_rate(&self) -> Option<f64> {
        self.primitives.iter().find_map(|p| match *p {
            Primitive::UnloadMomentum(u) => Some(u),
            _ => None,
        })
    }
}

pub fn expand(action: MacroAction, state: &SimState, config: &SpacecraftConfig) -> ControlProgram {
    let bn = dcm_from_mrp(&state.sigma_bn);
    let sun_n = sun_direction(state.t, config);
    let sun_body = bn.apply(&sun_n);
    let primitives = match action {
        MacroAction::Drift => vec![Primitive::ClearQueue],
        MacroAction::Charge => vec![
            Primitive::SetRate(config.slew_rate_max),
            Primitive::SlewTo(sun_target_attitude(state, config)),
        ],
        MacroAction::Desaturate => vec![
            Primitive::SetRate(config.slew_rate_max),
            Primitive::SlewTo(sun_target_attitude(state, config)),
            Primitive::UnloadMomentum(config.desat_unload_rate),
        ],
    };
    ControlProgram { action, primitives, current_attitude: state.sigma_bn, sun_body }
}

/// Attitude reached by the minimal rotation that points the panel normal at
/// the sun.
pub fn sun_target_attitude(state: &SimState, config: &SpacecraftConfig) -> Mrp {
    let bn = dcm_from_mrp(&state.sigma_bn);
    let sun_n = sun_direction(state.t, config);
    mrp_from_dcm(&align_body_vector(&bn, &config.panel_normal_body, &sun_n))
}

/// Rotates attitude `bn` minimally so that body vector `body_vec` points
/// along inertial unit vector `target_n`.
pub fn align_body_vector(bn: &Dcm, body_vec: &Vec3, target_n: &Vec3) -> Dcm {
    let n = bn.transpose().apply(&body_vec.normalize());
    let s = target_n.normalize();
    let c = n.dot(&s);
    let cross = n.cross(&s);
    let sin = cross.norm();
    if sin < 1e-12 && c > 0.0 {
        return *bn;
    }
    let (axis, angle) = if sin < 1e-9 {
        (tie_break_axis(&n), std::f64::consts::PI)
    } else {
        (cross / sin, sin.atan2(c))
    };
    let rot = rotation_about(&axis, angle);
    Dcm::from_matrix_unchecked(bn.matrix() * rot.transpose())
}

/// First coordinate axis with a nonzero component orthogonal to `n`.
fn tie_break_axis(n: &Vec3) -> Vec3 {
    for e in [Vec3::x(), Vec3::y(), Vec3::z()] {
        let p = e - n * n.dot(&e);
        let norm = p.norm();
        if norm > 1e-6 {
            return p / norm;
        }
    }
    unreachable!("some basis vector is not parallel to a unit vector")
}

/// Numbered operator instructions for a control program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorScript {
    pub lines: Vec<String>,
}

impl fmt::Display for OperatorScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.lines.join("\n"))
    }
}

fn fmt_vec(v: &Vec3) -> String {
    format!("({:.6}, {:.6}, {:.6})", v.x, v.y, v.z)
}

pub fn render_operator_script(program: &ControlProgram) -> OperatorScript {
    let rate = program.slew_rate().unwrap_or(0.0);
    let current = fmt_vec(program.current_attitude.vector());
    let target = program.slew_target().map(|t| fmt_vec(t.vector())).unwrap_or_default();
    let lines = match program.action {
        MacroAction::Drift => vec!["1 task queue ← ∅".to_string()],
        MacroAction::Charge => vec![
            format!("1 ω ← {rate:.6} rad/s"),
            format!("2 σ_BN ← determine(current attitude) = {current}"),
            format!("3 ᴮŝ ← determine(solar angle using sun-sensor) = {}", fmt_vec(&program.sun_body)),
            format!("4 σ_target = {target}; slew(σ_BN → ŝ) at ω"),
        ],
        MacroAction::Desaturate => vec![
            format!("1 ω ← {rate:.6} rad/s"),
            format!("2 ᴮd̂ ← chosen desaturation attitude (solar) = {}", fmt_vec(&program.sun_body)),
            format!("3 σ_BN ← determine(current attitude) = {current}"),
            format!("4 σ_target = {target}; slew(σ_BN → ᴮd̂) at ω"),
            format!(
                "5 unload reaction wheel momentum at {:.3e} N·m·s/s",
                program.unload_rate().unwrap_or(0.0)
            ),
        ],
    };
    OperatorScript { lines }
}
