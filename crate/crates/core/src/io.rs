//! File formats: the JSON-lines sensor log, LOS label files, CSV outputs with
//! provenance header comments, and SHA-256 content hashes.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::{EpochError, ErrorStats, ROW_LABELS};
use crate::fiveg::{BaseStation, FivegMeasurement, PipelineMode};
use crate::frames::{Attitude, Geodetic, LocalEnu};
use crate::fusion::FusionEpoch;
use crate::mechanization::NavState;
use crate::scenario::LosLabel;
use crate::sensors::{ImuSample, OdoSample};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
}

/// One record of the sensor log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum LogRecord {
    #[serde(rename = "imu")]
    Imu {
        t: f64,
        fx: f64,
        fy: f64,
        fz: f64,
        wx: f64,
        wy: f64,
        wz: f64,
    },
    #[serde(rename = "odo")]
    Odo { t: f64, v_odo: f64 },
    #[serde(rename = "5g")]
    Fiveg {
        t: f64,
        bs: u32,
        rtt_range_m: f64,
        aod_rad: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pwr_range_m: Option<f64>,
    },
}

impl LogRecord {
    pub fn t(&self) -> f64 {
        match *self {
            LogRecord::Imu { t, .. } | LogRecord::Odo { t, .. } | LogRecord::Fiveg { t, .. } => t,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            LogRecord::Imu { .. } => 0,
            LogRecord::Odo { .. } => 1,
            LogRecord::Fiveg { .. } => 2,
        }
    }
}

/// Sensor streams as read from a log, each time-ordered.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorLog {
    pub imu: Vec<ImuSample>,
    pub odo: Vec<OdoSample>,
    pub fiveg: Vec<FivegMeasurement>,
}

/// Merge the streams by time (IMU, then odometer, then 5G at equal times) and write one JSON object per line.
pub fn write_sensor_log<W: Write>(
    mut w: W,
    imu: &[ImuSample],
    odo: &[OdoSample],
    fiveg: &[FivegMeasurement],
) -> Result<(), IoError> {
    let mut records: Vec<LogRecord> = Vec::with_capacity(imu.len() + odo.len() + fiveg.len());
    records.extend(imu.iter().map(|s| LogRecord::Imu {
        t: s.t,
        fx: s.f.x,
        fy: s.f.y,
        fz: s.f.z,
        wx: s.w.x,
        wy: s.w.y,
        wz: s.w.z,
    }));
    records.extend(odo.iter().map(|o| LogRecord::Odo {
        t: o.t,
        v_odo: o.v_odo,
    }));
    records.extend(fiveg.iter().map(|m| LogRecord::Fiveg {
        t: m.t,
        bs: m.bs_id,
        rtt_range_m: m.rtt_range,
        aod_rad: m.aod,
        pwr_range_m: m.rx_power_range,
    }));
    records.sort_by(|a, b| a.t().total_cmp(&b.t()).then(a.rank().cmp(&b.rank())));
    for r in &records {
        serde_json::to_writer(&mut w, r).map_err(|e| IoError::Json { line: 0, source: e })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse a sensor log. 5G records take the given nominal standard deviations.
///
/// Blank lines and lines starting with `#` are skipped. Each stream must be
/// non-decreasing in time.
pub fn read_sensor_log<R: BufRead>(
    r: R,
    sigma_range: f64,
    sigma_aod: f64,
) -> Result<SensorLog, IoError> {
    let mut log = SensorLog::default();
    let mut last = [f64::NEG_INFINITY; 3];
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(trimmed).map_err(|e| IoError::Json {
            line: lineno,
            source: e,
        })?;
        let t = rec.t();
        let slot = rec.rank() as usize;
        if !t.is_finite() || t < last[slot] {
            return Err(IoError::Schema {
                line: lineno,
                reason: format!(
                    "timestamp {t} is not finite or goes backwards (previous {})",
                    last[slot]
                ),
            });
        }
        last[slot] = t;
        match rec {
            LogRecord::Imu {
                t,
                fx,
                fy,
                fz,
                wx,
                wy,
                wz,
            } => log.imu.push(ImuSample {
                t,
                f: Vector3::new(fx, fy, fz),
                w: Vector3::new(wx, wy, wz),
            }),
            LogRecord::Odo { t, v_odo } => {
                if !(v_odo >= 0.0) {
                    return Err(IoError::Schema {
                        line: lineno,
                        reason: format!("odometer speed {v_odo} must be >= 0"),
                    });
                }
                log.odo.push(OdoSample { t, v_odo })
            }
            LogRecord::Fiveg {
                t,
                bs,
                rtt_range_m,
                aod_rad,
                pwr_range_m,
            } => {
                if !(rtt_range_m > 0.0) {
                    return Err(IoError::Schema {
                        line: lineno,
                        reason: format!("rtt_range_m {rtt_range_m} must be > 0"),
                    });
                }
                log.fiveg.push(FivegMeasurement {
                    t,
                    bs_id: bs,
                    rtt_range: rtt_range_m,
                    aod: aod_rad,
                    rx_power_range: pwr_range_m,
                    sigma_range,
                    sigma_aod,
                })
            }
        }
    }
    Ok(log)
}

pub fn write_labels<W: Write>(mut w: W, labels: &[LosLabel]) -> Result<(), IoError> {
    for l in labels {
        serde_json::to_writer(&mut w, l).map_err(|e| IoError::Json { line: 0, source: e })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<LosLabel>, IoError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IoError::Json {
            line: idx + 1,
            source: e,
        })?);
    }
    Ok(out)
}

pub fn sha256_bytes(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let data = std::fs::read(path).map_err(|e| IoError::File {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(sha256_bytes(&data))
}

/// Key/value provenance lines written as `# key: value` above CSV data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub entries: Vec<(String, String)>,
}

impl Provenance {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            for (i, line) in v.lines().enumerate() {
                if i == 0 {
                    writeln!(w, "# {k}: {line}")?;
                } else {
                    writeln!(w, "#   {line}")?;
                }
            }
        }
        Ok(())
    }

    /// Parse the leading `# key: value` block of a file.
    pub fn read<R: BufRead>(r: R) -> Result<Self, IoError> {
        let mut out = Self::new();
        for line in r.lines() {
            let line = line?;
            let Some(body) = line.strip_prefix('#') else {
                break;
            };
            if let Some(cont) = body.strip_prefix("   ") {
                if let Some(last) = out.entries.last_mut() {
                    last.1.push('\n');
                    last.1.push_str(cont);
                }
                continue;
            }
            if let Some((k, v)) = body.trim_start().split_once(": ") {
                out.entries.push((k.to_string(), v.to_string()));
            }
        }
        Ok(out)
    }
}

fn csv_writer<W: Write>(mut w: W, prov: &Provenance) -> Result<csv::Writer<W>, IoError> {
    prov.write(&mut w)?;
    Ok(csv::Writer::from_writer(w))
}

fn csv_reader<R: std::io::Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r)
}

fn num(x: f64) -> String {
    x.to_string()
}

pub const NAV_COLUMNS: [&str; 10] = ["t", "lat", "lon", "h", "ve", "vn", "vu", "p", "r", "a"];

fn nav_fields(s: &NavState) -> [String; 10] {
    [
        s.t,
        s.pos.lat,
        s.pos.lon,
        s.pos.h,
        s.vel.x,
        s.vel.y,
        s.vel.z,
        s.att.pitch,
        s.att.roll,
        s.att.azimuth,
    ]
    .map(num)
}

/// NavState rows; angles in radians, height in meters, velocity in m/s ENU.
pub fn write_nav_csv<W: Write>(
    w: W,
    prov: &Provenance,
    states: &[NavState],
) -> Result<(), IoError> {
    let mut wr = csv_writer(w, prov)?;
    wr.write_record(NAV_COLUMNS)?;
    for s in states {
        wr.write_record(nav_fields(s))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_nav_csv<R: std::io::Read>(r: R) -> Result<Vec<NavState>, IoError> {
    let mut rd = csv_reader(r);
    let headers = rd.headers()?.clone();
    if headers.len() < NAV_COLUMNS.len() || headers.iter().zip(NAV_COLUMNS).any(|(a, b)| a != b) {
        return Err(IoError::Schema {
            line: 1,
            reason: format!("expected columns starting with {}", NAV_COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .take(10)
            .map(|x| x.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::Schema {
                line: i + 2,
                reason: e.to_string(),
            })?;
        if v.len() < 10 {
            return Err(IoError::Schema {
                line: i + 2,
                reason: "short row".into(),
            });
        }
        let pos = Geodetic::new(v[1], v[2], v[3]).map_err(|e| IoError::Schema {
            line: i + 2,
            reason: e.to_string(),
        })?;
        out.push(NavState::new(
            v[0],
            pos,
            Vector3::new(v[4], v[5], v[6]),
            Attitude::new(v[7], v[8], v[9]),
        ));
    }
    Ok(out)
}

pub fn mode_name(mode: Option<PipelineMode>) -> &'static str {
    match mode {
        Some(PipelineMode::Fused) => "fused",
        Some(PipelineMode::InsOnly) => "ins_only",
        None => "",
    }
}

/// Filter output rows: navigation states, biases, covariance diagonal and 5G mode.
pub fn write_filter_csv<W: Write>(
    w: W,
    prov: &Provenance,
    epochs: &[FusionEpoch],
) -> Result<(), IoError> {
    let mut wr = csv_writer(w, prov)?;
    let mut header: Vec<String> = NAV_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(["bgx", "bgy", "bgz", "bax", "bay", "baz"].map(String::from));
    header.extend((0..15).map(|i| format!("p{i}")));
    header.extend(["mode", "position_update", "stationary"].map(String::from));
    wr.write_record(&header)?;
    for e in epochs {
        let mut row: Vec<String> = nav_fields(&e.nav).to_vec();
        row.extend(
            e.bias
                .gyro
                .iter()
                .chain(e.bias.accel.iter())
                .map(|x| num(*x)),
        );
        row.extend(e.p_diag.iter().map(|x| num(*x)));
        row.push(mode_name(e.fiveg).to_string());
        row.push((e.position_update as u8).to_string());
        row.push((e.stationary as u8).to_string());
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Per-epoch 5G mode rows (`t,mode`).
pub fn write_modes_csv<W: Write>(
    w: W,
    prov: &Provenance,
    modes: &[(f64, PipelineMode)],
) -> Result<(), IoError> {
    let mut wr = csv_writer(w, prov)?;
    wr.write_record(["t", "mode"])?;
    for (t, m) in modes {
        wr.write_record([num(*t), mode_name(Some(*m)).to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_errors_csv<W: Write>(
    w: W,
    prov: &Provenance,
    errors: &[EpochError],
) -> Result<(), IoError> {
    let mut wr = csv_writer(w, prov)?;
    wr.write_record(["t", "error_3d", "error_horizontal"])?;
    for e in errors {
        wr.write_record([num(e.t), num(e.error_3d), num(e.horizontal)])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_errors_csv<R: std::io::Read>(r: R) -> Result<Vec<EpochError>, IoError> {
    let mut rd = csv_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| {
            rec.get(k)
                .and_then(|x| x.parse::<f64>().ok())
                .ok_or_else(|| IoError::Schema {
                    line: i + 2,
                    reason: format!("column {k} missing or not a number"),
                })
        };
        out.push(EpochError {
            t: parse(0)?,
            error_3d: parse(1)?,
            horizontal: parse(2)?,
        });
    }
    Ok(out)
}

/// CDF columns, one (error, fraction) pair per named series; shorter series leave blanks.
pub fn write_cdf_csv<W: Write>(
    w: W,
    prov: &Provenance,
    series: &[(&str, &[(f64, f64)])],
) -> Result<(), IoError> {
    let mut wr = csv_writer(w, prov)?;
    let mut header = Vec::new();
    for (name, _) in series {
        header.push(format!("{name}_error"));
        header.push(format!("{name}_fraction"));
    }
    wr.write_record(&header)?;
    let rows = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    for i in 0..rows {
        let mut row = Vec::with_capacity(header.len());
        for (_, s) in series {
            match s.get(i) {
                Some((e, f)) => {
                    row.push(num(*e));
                    row.push(num(*f));
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Summary table in CSV: one row per statistic, one column per run, then per-window rows.
pub fn write_stats_csv<W: Write>(
    w: W,
    prov: &Provenance,
    columns: &[(&str, &ErrorStats)],
) -> Result<(), IoError> {
    let mut wr = csv_writer(w, prov)?;
    let mut header = vec!["statistic".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    wr.write_record(&header)?;
    for (r, label) in ROW_LABELS.iter().enumerate() {
        let mut row = vec![label.to_string()];
        row.extend(columns.iter().map(|(_, s)| num(s.rows()[r])));
        wr.write_record(&row)?;
    }
    let n_windows = columns
        .iter()
        .map(|(_, s)| s.windows.len())
        .max()
        .unwrap_or(0);
    for k in 0..n_windows {
        for (label, pick) in [("rms", 0usize), ("max", 1)] {
            let mut row = vec![format!("outage {} {label} (m)", k + 1)];
            row.extend(columns.iter().map(|(_, s)| {
                s.windows
                    .get(k)
                    .map(|w| num(if pick == 0 { w.rms } else { w.max }))
                    .unwrap_or_default()
            }));
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Base-station sites in the local frame (`id,e,n,u`).
pub fn write_stations_csv<W: Write>(
    w: W,
    prov: &Provenance,
    stations: &[BaseStation],
) -> Result<(), IoError> {
    let mut wr = csv_writer(w, prov)?;
    wr.write_record(["id", "e", "n", "u"])?;
    for b in stations {
        wr.write_record([b.id.to_string(), num(b.pos.e), num(b.pos.n), num(b.pos.u)])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_stations_csv<R: std::io::Read>(r: R) -> Result<Vec<BaseStation>, IoError> {
    let mut rd = csv_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |k: usize| IoError::Schema {
            line: i + 2,
            reason: format!("column {k} missing or malformed"),
        };
        let id: u32 = rec
            .get(0)
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| bad(0))?;
        let mut xyz = [0.0; 3];
        for (k, slot) in xyz.iter_mut().enumerate() {
            *slot = rec
                .get(k + 1)
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| bad(k + 1))?;
        }
        out.push(BaseStation::new(id, LocalEnu::new(xyz[0], xyz[1], xyz[2])));
    }
    Ok(out)
}
