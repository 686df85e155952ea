use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde_json::{Map, Value};

use super::units::{Dimension, Quantity, Unit, UnitError};
use super::TelemetryError;
use crate::attmath::Vec3;

/// Required telemetry fields and their dimensions. Column names carry a unit
/// suffix after the field name (`pos_x_km`); dimensionless fields have none.
pub const SCHEMA: [(&str, Dimension); 19] = [
    ("est_roll", Dimension::Angle),
    ("est_pitch", Dimension::Angle),
    ("est_yaw", Dimension::Angle),
    ("pos_x", Dimension::Length),
    ("pos_y", Dimension::Length),
    ("pos_z", Dimension::Length),
    ("vel_x", Dimension::Velocity),
    ("vel_y", Dimension::Velocity),
    ("vel_z", Dimension::Velocity),
    ("rate_x", Dimension::AngularRate),
    ("rate_y", Dimension::AngularRate),
    ("rate_z", Dimension::AngularRate),
    ("batt_voltage", Dimension::Voltage),
    ("batt_current", Dimension::Current),
    ("batt_current_dir", Dimension::Dimensionless),
    ("wheel_speed_x", Dimension::AngularRate),
    ("wheel_speed_y", Dimension::AngularRate),
    ("wheel_speed_z", Dimension::AngularRate),
    ("timestamp", Dimension::Time),
];

pub const MODE_KEY: &str = "mode";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Field(&'static str, Unit),
    Mode,
}

/// Maps a column name onto a schema field. Columns outside the schema are
/// ignored (`Ok(None)`).
pub fn resolve_column(key: &str) -> Result<Option<Column>, TelemetryError> {
    let key = key.trim().to_ascii_lowercase();
    if key == MODE_KEY {
        return Ok(Some(Column::Mode));
    }
    let mut names: Vec<(&'static str, Dimension)> = SCHEMA.to_vec();
    names.sort_by_key(|(n, _)| std::cmp::Reverse(n.len()));
    for (name, dim) in names {
        if key == name {
            return match dim {
                Dimension::Dimensionless => Ok(Some(Column::Field(name, Unit::One))),
                // bare timestamp is in seconds
                Dimension::Time => Ok(Some(Column::Field(name, Unit::S))),
                _ => Err(TelemetryError::Unit { column: key, source: UnitError::MissingSuffix }),
            };
        }
        if let Some(suffix) = key.strip_prefix(name).and_then(|r| r.strip_prefix('_')) {
            let unit = Unit::from_suffix(suffix).map_err(|source| TelemetryError::Unit { column: key.clone(), source })?;
            if unit.dimension() != dim {
                return Err(TelemetryError::Unit {
                    column: key.clone(),
                    source: UnitError::WrongDimension { unit, expected: dim },
                });
            }
            return Ok(Some(Column::Field(name, unit)));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    /// Seconds.
    pub timestamp: f64,
    pub fields: BTreeMap<String, Quantity>,
    pub mode: Option<String>,
}

impl TelemetryRecord {
    pub fn get(&self, name: &str) -> Result<&Quantity, TelemetryError> {
        self.fields.get(name).ok_or_else(|| TelemetryError::MissingFields(vec![name.to_string()]))
    }

    /// SI value of a field after checking its dimension.
    pub fn si(&self, name: &str, dimension: Dimension) -> Result<f64, TelemetryError> {
        self.get(name)?
            .expect(dimension)
            .map_err(|source| TelemetryError::Unit { column: name.to_string(), source })
    }

    /// `prefix_x`, `prefix_y`, `prefix_z` in SI units.
    pub fn vec3(&self, prefix: &str, dimension: Dimension) -> Result<Vec3, TelemetryError> {
        Ok(Vec3::new(
            self.si(&format!("{prefix}_x"), dimension)?,
            self.si(&format!("{prefix}_y"), dimension)?,
            self.si(&format!("{prefix}_z"), dimension)?,
        ))
    }

    fn from_parts(mut fields: BTreeMap<String, Quantity>, mode: Option<String>) -> Result<Self, TelemetryError> {
        let missing: Vec<String> = SCHEMA
            .iter()
            .filter(|(n, _)| !fields.contains_key(*n))
            .map(|(n, _)| n.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(TelemetryError::MissingFields(missing));
        }
        let ts = fields.remove("timestamp").expect("checked above").si_value();
        Ok(TelemetryRecord { timestamp: ts, fields, mode })
    }

    fn column_name(name: &str, unit: Unit) -> String {
        match unit {
            Unit::One => name.to_string(),
            u => format!("{name}_{}", u.suffix()),
        }
    }

    /// Key/value pairs in canonical column naming, timestamp in seconds.
    pub fn columns(&self) -> Vec<(String, String)> {
        let mut out = vec![("timestamp_s".to_string(), self.timestamp.to_string())];
        for (name, q) in &self.fields {
            out.push((Self::column_name(name, q.unit), q.magnitude.to_string()));
        }
        if let Some(m) = &self.mode {
            out.push((MODE_KEY.to_string(), m.clone()));
        }
        out
    }

    pub fn to_json_line(&self) -> String {
        let mut map = Map::new();
        map.insert("timestamp_s".into(), Value::from(self.timestamp));
        for (name, q) in &self.fields {
            map.insert(Self::column_name(name, q.unit), Value::from(q.magnitude));
        }
        if let Some(m) = &self.mode {
            map.insert(MODE_KEY.into(), Value::from(m.clone()));
        }
        Value::Object(map).to_string()
    }
}

fn parse_number(column: &str, raw: &str) -> Result<f64, TelemetryError> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| TelemetryError::Parse { field: column.to_string(), value: raw.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TelemetryFormat {
    CsvWithHeader,
    JsonLines,
}

impl FromStr for TelemetryFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" | "csv_with_header" => Ok(TelemetryFormat::CsvWithHeader),
            "jsonl" | "json_lines" => Ok(TelemetryFormat::JsonLines),
            _ => Err(format!("unknown telemetry format {s:?} (csv|jsonl)")),
        }
    }
}

/// Column bindings established from a CSV header.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    columns: Vec<(String, Option<Column>)>,
}

impl CsvSchema {
    pub fn from_header<'a>(header: impl IntoIterator<Item = &'a str>) -> Result<Self, TelemetryError> {
        let mut columns = Vec::new();
        let mut seen = BTreeSet::new();
        for h in header {
            let col = resolve_column(h)?;
            let target = match col {
                Some(Column::Field(n, _)) => Some(n),
                Some(Column::Mode) => Some(MODE_KEY),
                None => None,
            };
            if let Some(t) = target {
                if !seen.insert(t) {
                    return Err(TelemetryError::Duplicate(t.to_string()));
                }
            }
            columns.push((h.trim().to_string(), col));
        }
        Ok(CsvSchema { columns })
    }

    pub fn parse_row<'a>(&self, row: impl IntoIterator<Item = &'a str>) -> Result<TelemetryRecord, TelemetryError> {
        let cells: Vec<&str> = row.into_iter().collect();
        if cells.len() != self.columns.len() {
            return Err(TelemetryError::Format(format!(
                "row has {} cells, header has {}",
                cells.len(),
                self.columns.len()
            )));
        }
        let mut fields = BTreeMap::new();
        let mut mode = None;
        for ((name, col), raw) in self.columns.iter().zip(cells) {
            if raw.trim().is_empty() {
                continue;
            }
            match col {
                Some(Column::Field(n, unit)) => {
                    fields.insert(n.to_string(), Quantity::new(parse_number(name, raw)?, *unit));
                }
                Some(Column::Mode) => mode = Some(raw.trim().to_string()),
                None => {}
            }
        }
        TelemetryRecord::from_parts(fields, mode)
    }
}

pub fn parse_json_line(line: &str) -> Result<TelemetryRecord, TelemetryError> {
    let value: Value = serde_json::from_str(line).map_err(|e| TelemetryError::Format(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(TelemetryError::Format("telemetry line is not a JSON object".into()));
    };
    let mut fields = BTreeMap::new();
    let mut mode = None;
    for (key, v) in &map {
        match resolve_column(key)? {
            Some(Column::Field(n, unit)) => {
                if v.is_null() {
                    continue;
                }
                let x = v
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| TelemetryError::Parse { field: key.clone(), value: v.to_string() })?;
                if fields.insert(n.to_string(), Quantity::new(x, unit)).is_some() {
                    return Err(TelemetryError::Duplicate(n.to_string()));
                }
            }
            Some(Column::Mode) => {
                mode = match v {
                    Value::Null => None,
                    Value::String(s) => Some(s.clone()),
                    other => Some(other.to_string()),
                }
            }
            None => {}
        }
    }
    TelemetryRecord::from_parts(fields, mode)
}

/// Parses a whole telemetry document. Header problems fail the document;
/// row problems are returned per row.
pub fn parse_telemetry(text: &str, format: TelemetryFormat) -> Result<Vec<Result<TelemetryRecord, TelemetryError>>, TelemetryError> {
    match format {
        TelemetryFormat::JsonLines => Ok(text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(parse_json_line)
            .collect()),
        TelemetryFormat::CsvWithHeader => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(true)
                .from_reader(text.as_bytes());
            let header = reader.headers().map_err(|e| TelemetryError::Format(e.to_string()))?.clone();
            let schema = CsvSchema::from_header(header.iter())?;
            Ok(reader
                .records()
                .map(|row| match row {
                    Ok(r) => schema.parse_row(r.iter()),
                    Err(e) => Err(TelemetryError::Format(e.to_string())),
                })
                .collect())
        }
    }
}

/// CSV document with a header built from the first record's columns.
pub fn write_csv(records: &[TelemetryRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = records.first() {
        let header: Vec<String> = first.columns().into_iter().map(|(k, _)| k).collect();
        w.write_record(&header).expect("in-memory write");
        for r in records {
            let cols: BTreeMap<String, String> = r.columns().into_iter().collect();
            let row: Vec<&str> = header.iter().map(|h| cols.get(h).map(String::as_str).unwrap_or("")).collect();
            w.write_record(&row).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn write_json_lines(records: &[TelemetryRecord]) -> String {
    records.iter().map(|r| r.to_json_line() + "\n").collect()
}
