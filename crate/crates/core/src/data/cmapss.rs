//! Whitespace-separated turbofan run-to-failure files: unit, cycle, three
//! operating settings and 21 sensors per line.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SETTINGS: usize = 3;
pub const SENSORS: usize = 21;
pub const COLUMNS: usize = 2 + SETTINGS + SENSORS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineRecord {
    pub unit_id: u32,
    pub cycle: u32,
    pub op_settings: [f64; SETTINGS],
    pub sensors: [f64; SENSORS],
}

/// All records of one unit, ordered by cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub unit_id: u32,
    pub records: Vec<EngineRecord>,
}

impl Unit {
    pub fn last_cycle(&self) -> u32 {
        self.records.last().map_or(0, |r| r.cycle)
    }

    /// Remaining cycles after each record, assuming the unit runs to failure.
    pub fn rul(&self) -> Vec<u32> {
        let last = self.last_cycle();
        self.records.iter().map(|r| last - r.cycle).collect()
    }
}

fn parse_int(field: &str, line: usize, what: &str) -> Result<u32> {
    // Some exports write integral columns as floats ("1.0").
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what} is not numeric: {field:?}"),
    })?;
    if v < 1.0 || v.fract() != 0.0 || v > f64::from(u32::MAX) {
        return Err(Error::Parse {
            line,
            message: format!("{what} must be a positive integer, got {field}"),
        });
    }
    Ok(v as u32)
}

pub fn parse_cmapss_str(text: &str) -> Result<Vec<Unit>> {
    let mut units: Vec<Unit> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != COLUMNS {
            return Err(Error::Parse {
                line,
                message: format!("expected {COLUMNS} columns, found {}", fields.len()),
            });
        }
        let unit_id = parse_int(fields[0], line, "unit id")?;
        let cycle = parse_int(fields[1], line, "cycle")?;
        let mut values = [0.0; SETTINGS + SENSORS];
        for (slot, (col, f)) in values.iter_mut().zip(fields[2..].iter().enumerate()) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("column {} is not a finite number: {f:?}", col + 3),
                })?;
        }
        let mut op_settings = [0.0; SETTINGS];
        op_settings.copy_from_slice(&values[..SETTINGS]);
        let mut sensors = [0.0; SENSORS];
        sensors.copy_from_slice(&values[SETTINGS..]);
        let rec = EngineRecord {
            unit_id,
            cycle,
            op_settings,
            sensors,
        };

        match units.last_mut() {
            Some(u) if u.unit_id == unit_id => {
                let expected = u.last_cycle() + 1;
                if cycle != expected {
                    return Err(Error::Validation(format!(
                        "line {line}: unit {unit_id} cycle {cycle} follows {}, expected {expected}",
                        expected - 1
                    )));
                }
                u.records.push(rec);
            }
            _ => {
                if units.iter().any(|u| u.unit_id == unit_id) {
                    return Err(Error::Validation(format!(
                        "line {line}: unit {unit_id} reappears after other units"
                    )));
                }
                if cycle != 1 {
                    return Err(Error::Validation(format!(
                        "line {line}: unit {unit_id} starts at cycle {cycle}, expected 1"
                    )));
                }
                units.push(Unit {
                    unit_id,
                    records: vec![rec],
                });
            }
        }
    }
    if units.is_empty() {
        return Err(Error::Input("file contains no records".into()));
    }
    Ok(units)
}

pub fn parse_cmapss(path: &Path) -> Result<Vec<Unit>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cmapss_str(&text)
}

/// Serializes units in the same layout; Rust's shortest float formatting
/// makes `parse(write(x)) == x`.
pub fn write_cmapss(units: &[Unit]) -> String {
    let mut out = String::new();
    for u in units {
        for r in &u.records {
            let _ = write!(out, "{} {}", r.unit_id, r.cycle);
            for v in r.op_settings.iter().chain(&r.sensors) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn line(unit: u32, cycle: u32, base: f64) -> String {
        let mut s = format!("{unit} {cycle}");
        for i in 0..SETTINGS + SENSORS {
            s.push_str(&format!(" {}", base + i as f64 * 0.5));
        }
        s
    }

    #[test]
    fn three_line_fixture() {
        let text = [line(1, 1, 0.0), line(1, 2, 1.0), line(2, 1, -3.25)].join("\n");
        let units = parse_cmapss_str(&text).unwrap();
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].records.len(), 2);
        assert_eq!(units[0].records[1].op_settings, [1.0, 1.5, 2.0]);
        assert_eq!(units[0].records[1].sensors[20], 1.0 + 23.0 * 0.5);
        assert_eq!(units[1].records[0].sensors[0], -3.25 + 1.5);
        assert_eq!(units[0].rul(), vec![1, 0]);
        assert_eq!(units[1].rul(), vec![0]);
    }

    #[test]
    fn wrong_column_count_names_line() {
        let mut bad = line(1, 2, 0.0);
        bad.truncate(bad.rfind(' ').unwrap());
        let text = [line(1, 1, 0.0), bad].join("\n");
        match parse_cmapss_str(&text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("found 25"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_field() {
        let bad = line(1, 1, 0.0).replace(" 2.5 ", " x ");
        assert!(matches!(parse_cmapss_str(&bad), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn gaps_rejected() {
        let text = [line(1, 1, 0.0), line(1, 3, 0.0)].join("\n");
        assert!(matches!(parse_cmapss_str(&text), Err(Error::Validation(_))));
        assert!(matches!(parse_cmapss_str(&line(4, 2, 0.0)), Err(Error::Validation(_))));
    }

    #[test]
    fn round_trip() {
        let text = [line(1, 1, 0.1), line(1, 2, 518.67), line(3, 1, -0.0007)].join("\n");
        let units = parse_cmapss_str(&text).unwrap();
        let again = parse_cmapss_str(&write_cmapss(&units)).unwrap();
        assert_eq!(units, again);
    }
}
