use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnitError {
    #[error("unknown unit suffix {0:?}")]
    UnknownUnit(String),
    #[error("column has no unit suffix")]
    MissingSuffix,
    #[error("dimension mismatch: {op} of {lhs} and {rhs}")]
    Mismatch { op: &'static str, lhs: Dimension, rhs: Dimension },
    #[error("unit {unit} is not a {expected} unit")]
    WrongDimension { unit: Unit, expected: Dimension },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Angle,
    AngularRate,
    Length,
    Velocity,
    Voltage,
    Current,
    Dimensionless,
    Time,
    Power,
    Energy,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dimension::Angle => "angle",
            Dimension::AngularRate => "angular_rate",
            Dimension::Length => "length",
            Dimension::Velocity => "velocity",
            Dimension::Voltage => "voltage",
            Dimension::Current => "current",
            Dimension::Dimensionless => "dimensionless",
            Dimension::Time => "time",
            Dimension::Power => "power",
            Dimension::Energy => "energy",
        };
        f.write_str(s)
    }
}

impl Dimension {
    /// Coherent SI unit of the dimension.
    pub fn si_unit(self) -> Unit {
        match self {
            Dimension::Angle => Unit::Rad,
            Dimension::AngularRate => Unit::RadS,
            Dimension::Length => Unit::M,
            Dimension::Velocity => Unit::MS,
            Dimension::Voltage => Unit::V,
            Dimension::Current => Unit::A,
            Dimension::Dimensionless => Unit::One,
            Dimension::Time => Unit::S,
            Dimension::Power => Unit::W,
            Dimension::Energy => Unit::J,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Rad,
    Deg,
    RadS,
    DegS,
    Rpm,
    M,
    Km,
    MS,
    KmS,
    V,
    Mv,
    A,
    Ma,
    One,
    S,
    Ms,
    W,
    J,
    Wh,
}

impl Unit {
    pub const ALL: [Unit; 19] = [
        Unit::Rad,
        Unit::Deg,
        Unit::RadS,
        Unit::DegS,
        Unit::Rpm,
        Unit::M,
        Unit::Km,
        Unit::MS,
        Unit::KmS,
        Unit::V,
        Unit::Mv,
        Unit::A,
        Unit::Ma,
        Unit::One,
        Unit::S,
        Unit::Ms,
        Unit::W,
        Unit::J,
        Unit::Wh,
    ];

    pub fn dimension(self) -> Dimension {
        match self {
            Unit::Rad | Unit::Deg => Dimension::Angle,
            Unit::RadS | Unit::DegS | Unit::Rpm => Dimension::AngularRate,
            Unit::M | Unit::Km => Dimension::Length,
            Unit::MS | Unit::KmS => Dimension::Velocity,
            Unit::V | Unit::Mv => Dimension::Voltage,
            Unit::A | Unit::Ma => Dimension::Current,
            Unit::One => Dimension::Dimensionless,
            Unit::S | Unit::Ms => Dimension::Time,
            Unit::W => Dimension::Power,
            Unit::J | Unit::Wh => Dimension::Energy,
        }
    }

    /// Multiplier taking a magnitude in this unit to the SI unit.
    pub fn to_si(self) -> f64 {
        match self {
            Unit::Deg | Unit::DegS => PI / 180.0,
            Unit::Rpm => 2.0 * PI / 60.0,
            Unit::Km | Unit::KmS => 1000.0,
            Unit::Mv | Unit::Ma | Unit::Ms => 1e-3,
            Unit::Wh => 3600.0,
            _ => 1.0,
        }
    }

    /// Column-name suffix, empty for dimensionless.
    pub fn suffix(self) -> &'static str {
        match self {
            Unit::Rad => "rad",
            Unit::Deg => "deg",
            Unit::RadS => "rad_s",
            Unit::DegS => "deg_s",
            Unit::Rpm => "rpm",
            Unit::M => "m",
            Unit::Km => "km",
            Unit::MS => "m_s",
            Unit::KmS => "km_s",
            Unit::V => "v",
            Unit::Mv => "mv",
            Unit::A => "a",
            Unit::Ma => "ma",
            Unit::One => "",
            Unit::S => "s",
            Unit::Ms => "ms",
            Unit::W => "w",
            Unit::J => "j",
            Unit::Wh => "wh",
        }
    }

    pub fn from_suffix(suffix: &str) -> Result<Unit, UnitError> {
        let lower = suffix.to_ascii_lowercase();
        Unit::ALL
            .into_iter()
            .find(|u| u.suffix() == lower)
            .ok_or_else(|| UnitError::UnknownUnit(suffix.to_string()))
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::One => f.write_str("1"),
            u => f.write_str(u.suffix()),
        }
    }
}

/// A magnitude tagged with its unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub magnitude: f64,
    pub unit: Unit,
}

impl Quantity {
    pub fn new(magnitude: f64, unit: Unit) -> Self {
        Quantity { magnitude, unit }
    }

    pub fn si(magnitude: f64, dimension: Dimension) -> Self {
        Quantity { magnitude, unit: dimension.si_unit() }
    }

    pub fn dimension(&self) -> Dimension {
        self.unit.dimension()
    }

    pub fn si_value(&self) -> f64 {
        self.magnitude * self.unit.to_si()
    }

    pub fn value_in(&self, unit: Unit) -> Result<f64, UnitError> {
        if unit.dimension() != self.dimension() {
            return Err(UnitError::WrongDimension { unit, expected: self.dimension() });
        }
        if unit == self.unit {
            return Ok(self.magnitude);
        }
        Ok(self.si_value() / unit.to_si())
    }

    /// SI value after checking the dimension.
    pub fn expect(&self, dimension: Dimension) -> Result<f64, UnitError> {
        if self.dimension() != dimension {
            return Err(UnitError::WrongDimension { unit: self.unit, expected: dimension });
        }
        Ok(self.si_value())
    }

    pub fn checked_add(&self, rhs: &Quantity) -> Result<Quantity, UnitError> {
        self.same_dim("add", rhs)?;
        Ok(Quantity::si(self.si_value() + rhs.si_value(), self.dimension()))
    }

    pub fn checked_sub(&self, rhs: &Quantity) -> Result<Quantity, UnitError> {
        self.same_dim("subtract", rhs)?;
        Ok(Quantity::si(self.si_value() - rhs.si_value(), self.dimension()))
    }

    pub fn checked_mul(&self, rhs: &Quantity) -> Result<Quantity, UnitError> {
        use Dimension::*;
        let dim = match (self.dimension(), rhs.dimension()) {
            (Dimensionless, d) | (d, Dimensionless) => d,
            (Voltage, Current) | (Current, Voltage) => Power,
            (Power, Time) | (Time, Power) => Energy,
            (Velocity, Time) | (Time, Velocity) => Length,
            (AngularRate, Time) | (Time, AngularRate) => Angle,
            (lhs, rhs) => return Err(UnitError::Mismatch { op: "multiply", lhs, rhs }),
        };
        Ok(Quantity::si(self.si_value() * rhs.si_value(), dim))
    }

    pub fn checked_div(&self, rhs: &Quantity) -> Result<Quantity, UnitError> {
        use Dimension::*;
        let dim = match (self.dimension(), rhs.dimension()) {
            (a, b) if a == b => Dimensionless,
            (d, Dimensionless) => d,
            (Energy, Time) => Power,
            (Power, Voltage) => Current,
            (Power, Current) => Voltage,
            (Length, Time) => Velocity,
            (Angle, Time) => AngularRate,
            (lhs, rhs) => return Err(UnitError::Mismatch { op: "divide", lhs, rhs }),
        };
        Ok(Quantity::si(self.si_value() / rhs.si_value(), dim))
    }

    fn same_dim(&self, op: &'static str, rhs: &Quantity) -> Result<(), UnitError> {
        if self.dimension() != rhs.dimension() {
            return Err(UnitError::Mismatch { op, lhs: self.dimension(), rhs: rhs.dimension() });
        }
        Ok(())
    }
}
