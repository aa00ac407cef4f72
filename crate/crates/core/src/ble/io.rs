//! CSV formats for beacon maps, observation logs and estimated trajectories.
//!
//! Beacon map: header `id,x,y,z,p0_dbm,n,d0,sigma_sh`, one beacon per row.
//!
//! Observation log: header `timestamp,type,beacon_id,p0,p1,p2,p3,p4,p5`.
//! Payload by type:
//! - `init`: x, y, theta, var_x, var_y, var_theta (initial estimate, at most one, first)
//! - `odom`: d_rot1, d_trans, d_rot2
//! - `rssi`: rssi (dBm)
//! - `bearing`: bearing, sigma (radians)
//!
//! Estimated trajectory: header `t,est_x,est_y,est_theta,cov_trace`.

use std::io::{Read, Write};

use nalgebra::Vector3;
use thiserror::Error;

use super::{
    Beacon, BeaconMap, BearingObservation, BleError, EstimateRow, Observation, OdometryDelta, PathLossParams,
    RssiObservation,
};
use crate::fmt::sig9;
use crate::geometry::{Covariance3, Pose2};

pub const BEACON_HEADER: [&str; 8] = ["id", "x", "y", "z", "p0_dbm", "n", "d0", "sigma_sh"];
pub const OBSERVATION_HEADER: [&str; 9] = ["timestamp", "type", "beacon_id", "p0", "p1", "p2", "p3", "p4", "p5"];
pub const ESTIMATE_HEADER: [&str; 5] = ["t", "est_x", "est_y", "est_theta", "cov_trace"];

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {msg}")]
    Line { line: u64, msg: String },
    #[error("line {line}: timestamp {got} is earlier than previous {prev}")]
    OutOfOrder { line: u64, prev: f64, got: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Ble(#[from] BleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize) -> Result<&'a str, LogError> {
    rec.get(i).map(str::trim).ok_or_else(|| LogError::Line {
        line: line_of(rec),
        msg: format!("missing column {}", i + 1),
    })
}

fn num(rec: &csv::StringRecord, i: usize) -> Result<f64, LogError> {
    let s = field(rec, i)?;
    let v: f64 = s.parse().map_err(|_| LogError::Line {
        line: line_of(rec),
        msg: format!("bad number {s:?} in column {}", i + 1),
    })?;
    if !v.is_finite() {
        return Err(LogError::Line {
            line: line_of(rec),
            msg: format!("non-finite value in column {}", i + 1),
        });
    }
    Ok(v)
}

fn check_header(rec: &csv::StringRecord, expected: &[&str]) -> Result<(), LogError> {
    let got: Vec<&str> = rec.iter().map(str::trim).collect();
    if got != expected {
        return Err(LogError::Line {
            line: 1,
            msg: format!("expected header {}, found {}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

pub fn read_beacons<R: Read>(r: R) -> Result<BeaconMap, LogError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    check_header(rdr.headers()?, &BEACON_HEADER)?;
    let mut beacons = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let path_loss = PathLossParams {
            p0_dbm: num(&rec, 4)?,
            n: num(&rec, 5)?,
            d0: num(&rec, 6)?,
            sigma_sh: num(&rec, 7)?,
        };
        path_loss.validate().map_err(|e| LogError::Line {
            line: line_of(&rec),
            msg: e.to_string(),
        })?;
        beacons.push(Beacon {
            id: field(&rec, 0)?.to_string(),
            position: Vector3::new(num(&rec, 1)?, num(&rec, 2)?, num(&rec, 3)?),
            path_loss,
        });
    }
    Ok(BeaconMap::new(beacons)?)
}

pub fn write_beacons<W: Write>(w: W, beacons: &BeaconMap) -> Result<(), LogError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(BEACON_HEADER)?;
    for b in beacons.iter() {
        let pl = &b.path_loss;
        wtr.write_record([
            b.id.clone(),
            sig9(b.position.x),
            sig9(b.position.y),
            sig9(b.position.z),
            sig9(pl.p0_dbm),
            sig9(pl.n),
            sig9(pl.d0),
            sig9(pl.sigma_sh),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Initial estimate with a diagonal covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialEstimate {
    pub pose: Pose2,
    pub variances: [f64; 3],
}

impl InitialEstimate {
    pub fn covariance(&self) -> Result<Covariance3, BleError> {
        let [a, b, c] = self.variances;
        Ok(Covariance3::from_diagonal(a, b, c)?)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationLog {
    pub init: Option<InitialEstimate>,
    pub observations: Vec<Observation>,
}

/// Reads a log, requiring nondecreasing timestamps.
pub fn read_observations<R: Read>(r: R) -> Result<ObservationLog, LogError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    check_header(rdr.headers()?, &OBSERVATION_HEADER)?;
    let mut log = ObservationLog::default();
    let mut prev = f64::NEG_INFINITY;
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let t = num(&rec, 0)?;
        if t < prev {
            return Err(LogError::OutOfOrder { line, prev, got: t });
        }
        prev = t;
        let id = || -> Result<String, LogError> {
            let id = field(&rec, 2)?;
            if id.is_empty() {
                return Err(LogError::Line {
                    line,
                    msg: "missing beacon_id".into(),
                });
            }
            Ok(id.to_string())
        };
        match field(&rec, 1)? {
            "init" => {
                if log.init.is_some() || !log.observations.is_empty() {
                    return Err(LogError::Line {
                        line,
                        msg: "init must be the first record".into(),
                    });
                }
                log.init = Some(InitialEstimate {
                    pose: Pose2::new(num(&rec, 3)?, num(&rec, 4)?, num(&rec, 5)?),
                    variances: [num(&rec, 6)?, num(&rec, 7)?, num(&rec, 8)?],
                });
            }
            "odom" => log.observations.push(Observation::Odometry(OdometryDelta {
                d_rot1: num(&rec, 3)?,
                d_trans: num(&rec, 4)?,
                d_rot2: num(&rec, 5)?,
                timestamp: t,
            })),
            "rssi" => log.observations.push(Observation::Rssi(RssiObservation {
                beacon_id: id()?,
                rssi: num(&rec, 3)?,
                timestamp: t,
            })),
            "bearing" => log.observations.push(Observation::Bearing(BearingObservation {
                beacon_id: id()?,
                bearing: num(&rec, 3)?,
                sigma: num(&rec, 4)?,
                timestamp: t,
            })),
            other => {
                return Err(LogError::Line {
                    line,
                    msg: format!("unknown observation type {other:?}"),
                })
            }
        }
    }
    Ok(log)
}

pub fn write_observations<W: Write>(w: W, log: &ObservationLog) -> Result<(), LogError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(OBSERVATION_HEADER)?;
    let pad = |mut v: Vec<String>| {
        v.resize(OBSERVATION_HEADER.len(), String::new());
        v
    };
    if let Some(init) = &log.init {
        let [a, b, c] = init.variances;
        wtr.write_record(pad(vec![
            sig9(0.0),
            "init".into(),
            String::new(),
            sig9(init.pose.x),
            sig9(init.pose.y),
            sig9(init.pose.theta),
            sig9(a),
            sig9(b),
            sig9(c),
        ]))?;
    }
    for o in &log.observations {
        let rec = match o {
            Observation::Odometry(d) => vec![
                sig9(d.timestamp),
                "odom".into(),
                String::new(),
                sig9(d.d_rot1),
                sig9(d.d_trans),
                sig9(d.d_rot2),
            ],
            Observation::Rssi(r) => vec![sig9(r.timestamp), "rssi".into(), r.beacon_id.clone(), sig9(r.rssi)],
            Observation::Bearing(b) => vec![
                sig9(b.timestamp),
                "bearing".into(),
                b.beacon_id.clone(),
                sig9(b.bearing),
                sig9(b.sigma),
            ],
        };
        wtr.write_record(pad(rec))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn estimate_fields(row: &EstimateRow) -> [String; 5] {
    [
        sig9(row.t),
        sig9(row.pose.x),
        sig9(row.pose.y),
        sig9(row.pose.theta),
        sig9(row.cov.trace()),
    ]
}

pub fn write_estimates<W: Write>(w: W, rows: &[EstimateRow]) -> Result<(), LogError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(ESTIMATE_HEADER)?;
    for row in rows {
        wtr.write_record(estimate_fields(row))?;
    }
    wtr.flush()?;
    Ok(())
}
