//! On-disk formats: binary event streams, plain-text IMU and odometry,
//! JSON ground truth and JSONL result logs.
//!
//! Event files are a small binary container:
//! magic "EVT1", sensor width u16 LE, height u16 LE, epoch u64 LE, then
//! 14-byte records (t u64, x u16, y u16, polarity i8, pad u8). A plain-text
//! import (`t_ns x y polarity` per line) is provided for interoperability.

use crate::event::{Event, ImuSample};
use crate::geometry::{Frame, Mat3, RigidTransform, Vec3};
use crate::impact::ImpactEstimate;
use crate::simgen::{GroundTruth, OdometrySample};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const EVENT_MAGIC: &[u8; 4] = b"EVT1";
pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not an event file")]
    BadMagic { path: String },
    #[error("{path}: truncated record at byte {offset}")]
    Truncated { path: String, offset: u64 },
    #[error("{path} line {line}: {reason}")]
    BadLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path} line {line}: rotation not orthonormal (drift {drift:.3e})")]
    BadRotation {
        path: String,
        line: usize,
        drift: f64,
    },
    #[error("{path}: events not sorted at index {index}")]
    NotSorted { path: String, index: usize },
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Event stream plus the sensor geometry it was recorded with.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFile {
    pub width: u16,
    pub height: u16,
    /// Epoch offset of the stream, ns; timestamps are relative to it.
    pub epoch: u64,
    pub events: Vec<Event>,
}

pub fn write_events(path: &Path, file: &EventFile) -> Result<(), FormatError> {
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    let inner = |w: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        w.write_all(EVENT_MAGIC)?;
        w.write_all(&file.width.to_le_bytes())?;
        w.write_all(&file.height.to_le_bytes())?;
        w.write_all(&file.epoch.to_le_bytes())?;
        for e in &file.events {
            w.write_all(&e.t.to_le_bytes())?;
            w.write_all(&e.x.to_le_bytes())?;
            w.write_all(&e.y.to_le_bytes())?;
            w.write_all(&[e.polarity as u8, 0])?;
        }
        w.flush()
    };
    inner(&mut w).map_err(|e| io_err(path, e))
}

pub fn read_events(path: &Path) -> Result<EventFile, FormatError> {
    let mut r = BufReader::new(std::fs::File::open(path).map_err(|e| io_err(path, e))?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| FormatError::BadMagic {
        path: path.display().to_string(),
    })?;
    if &header[0..4] != EVENT_MAGIC {
        return Err(FormatError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let width = u16::from_le_bytes([header[4], header[5]]);
    let height = u16::from_le_bytes([header[6], header[7]]);
    let epoch = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let mut events = Vec::new();
    let mut offset = 16u64;
    let mut rec = [0u8; 14];
    loop {
        match r.read_exact(&mut rec) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                // Distinguish clean EOF from a torn record.
                let mut probe = [0u8; 1];
                if r.read(&mut probe).map_err(|e| io_err(path, e))? == 0 {
                    // read_exact may have consumed a partial tail; detect it
                    // by checking the file length instead.
                    let len = std::fs::metadata(path).map_err(|e| io_err(path, e))?.len();
                    if (len - 16) % 14 != 0 {
                        return Err(FormatError::Truncated {
                            path: path.display().to_string(),
                            offset,
                        });
                    }
                    break;
                }
                return Err(FormatError::Truncated {
                    path: path.display().to_string(),
                    offset,
                });
            }
            Err(e) => return Err(io_err(path, e)),
        }
        let e = Event {
            t: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
            x: u16::from_le_bytes([rec[8], rec[9]]),
            y: u16::from_le_bytes([rec[10], rec[11]]),
            polarity: rec[12] as i8,
        };
        if let Some(prev) = events.last() {
            let prev: &Event = prev;
            if e.t < prev.t {
                return Err(FormatError::NotSorted {
                    path: path.display().to_string(),
                    index: events.len(),
                });
            }
        }
        events.push(e);
        offset += 14;
    }
    Ok(EventFile {
        width,
        height,
        epoch,
        events,
    })
}

/// Plain-text event import: `t_ns x y polarity` per line, `#` comments.
pub fn read_events_text(path: &Path) -> Result<Vec<Event>, FormatError> {
    let r = BufReader::new(std::fs::File::open(path).map_err(|e| io_err(path, e))?);
    let mut events = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |reason: String| FormatError::BadLine {
            path: path.display().to_string(),
            line: i + 1,
            reason,
        };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", fields.len())));
        }
        let e = Event {
            t: fields[0].parse().map_err(|_| bad(format!("bad t: {}", fields[0])))?,
            x: fields[1].parse().map_err(|_| bad(format!("bad x: {}", fields[1])))?,
            y: fields[2].parse().map_err(|_| bad(format!("bad y: {}", fields[2])))?,
            polarity: fields[3]
                .parse()
                .map_err(|_| bad(format!("bad polarity: {}", fields[3])))?,
        };
        if e.polarity != 1 && e.polarity != -1 {
            return Err(bad(format!("polarity must be +-1, got {}", e.polarity)));
        }
        if let Some(prev) = events.last() {
            let prev: &Event = prev;
            if e.t < prev.t {
                return Err(FormatError::NotSorted {
                    path: path.display().to_string(),
                    index: events.len(),
                });
            }
        }
        events.push(e);
    }
    Ok(events)
}

/// Text IMU log: `t_ns wx wy wz` per line.
pub fn write_imu(path: &Path, samples: &[ImuSample]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    for s in samples {
        writeln!(w, "{} {:.17e} {:.17e} {:.17e}", s.t, s.omega.x, s.omega.y, s.omega.z)
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>, FormatError> {
    let r = BufReader::new(std::fs::File::open(path).map_err(|e| io_err(path, e))?);
    let mut samples = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| FormatError::BadLine {
            path: path.display().to_string(),
            line: i + 1,
            reason,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", f.len())));
        }
        samples.push(ImuSample {
            t: f[0].parse().map_err(|_| bad(format!("bad t: {}", f[0])))?,
            omega: Vec3::new(
                f[1].parse().map_err(|_| bad(format!("bad wx: {}", f[1])))?,
                f[2].parse().map_err(|_| bad(format!("bad wy: {}", f[2])))?,
                f[3].parse().map_err(|_| bad(format!("bad wz: {}", f[3])))?,
            ),
        });
    }
    Ok(samples)
}

/// Text odometry log: `t_ns r11 .. r33 tx ty tz` (rotation row-major),
/// body-to-world. Rotations are checked for orthonormality on read.
pub fn write_odometry(path: &Path, samples: &[OdometrySample]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    for s in samples {
        let mut line = format!("{}", s.t);
        let r = &s.t_wb.rotation;
        for row in 0..3 {
            for col in 0..3 {
                line.push_str(&format!(" {:.17e}", r[(row, col)]));
            }
        }
        let t = &s.t_wb.translation;
        line.push_str(&format!(" {:.17e} {:.17e} {:.17e}", t.x, t.y, t.z));
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_odometry(path: &Path) -> Result<Vec<OdometrySample>, FormatError> {
    let r = BufReader::new(std::fs::File::open(path).map_err(|e| io_err(path, e))?);
    let mut samples = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| FormatError::BadLine {
            path: path.display().to_string(),
            line: i + 1,
            reason,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 13 {
            return Err(bad(format!("expected 13 fields, got {}", f.len())));
        }
        let mut vals = [0.0f64; 12];
        for (k, v) in f[1..].iter().enumerate() {
            vals[k] = v.parse().map_err(|_| bad(format!("bad number: {v}")))?;
        }
        let rot = Mat3::new(
            vals[0], vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7], vals[8],
        );
        let drift = (rot.transpose() * rot - Mat3::identity()).norm();
        if drift > 1e-6 || rot.determinant() < 0.0 {
            return Err(FormatError::BadRotation {
                path: path.display().to_string(),
                line: i + 1,
                drift,
            });
        }
        samples.push(OdometrySample {
            t: f[0].parse().map_err(|_| bad(format!("bad t: {}", f[0])))?,
            t_wb: RigidTransform {
                rotation: rot,
                translation: Vec3::new(vals[9], vals[10], vals[11]),
                from_frame: Frame::Body,
                to_frame: Frame::World,
            },
        });
    }
    Ok(samples)
}

pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<(), FormatError> {
    let w = BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    serde_json::to_writer(w, gt).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, FormatError> {
    let r = BufReader::new(std::fs::File::open(path).map_err(|e| io_err(path, e))?);
    serde_json::from_reader(r).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// One pipeline detection, as logged.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DetectionRecord {
    pub schema_version: u32,
    /// Detection time, ns.
    pub t: u64,
    pub center_px: [f64; 2],
    pub width_px: f64,
    pub depth_m: f64,
    pub p_world: [f64; 3],
    pub cluster_size: usize,
}

/// One impact prediction, as logged.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ImpactRecord {
    pub schema_version: u32,
    /// Prediction emission time, ns.
    pub t: u64,
    pub t_imp_s: f64,
    pub p_imp_body: [f64; 3],
    pub residual_rms: f64,
    /// Number of detections behind the fit.
    pub support: usize,
    /// True when inside the commit horizon.
    pub committed: bool,
}

impl ImpactRecord {
    pub fn from_estimate(
        t: u64,
        est: &ImpactEstimate,
        support: usize,
        committed: bool,
    ) -> Self {
        Self {
            schema_version: LOG_SCHEMA_VERSION,
            t,
            t_imp_s: est.t_imp,
            p_imp_body: est.p_imp.into(),
            residual_rms: est.source_residual,
            support,
            committed,
        }
    }
}

/// Appends serializable records as one-JSON-object-per-line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|source| FormatError::Json {
            path: path.display().to_string(),
            source,
        })?;
        writeln!(w).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, FormatError> {
    let r = BufReader::new(std::fs::File::open(path).map_err(|e| io_err(path, e))?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| FormatError::Json {
            path: path.display().to_string(),
            source,
        })?);
    }
    Ok(out)
}
