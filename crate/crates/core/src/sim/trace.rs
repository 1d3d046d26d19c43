//! Per-tick ground truth and its CSV form.
//!
//! ```text
//! # schema=1
//! time_s,v0_east_m,v0_north_m,v0_speed_mps,v0_heading_rad,v0_cmd_speed_mps,v0_steer_rad,v1_east_m,...,v1_gap_m,v1_rx_count,v1_lost_count,v1_rejected_count,...
//! ```
//!
//! Followers carry four extra columns: centre-to-centre gap to the vehicle
//! ahead and cumulative accepted, lost and rejected message counts. An empty
//! gap cell means the gap was unknown at that tick.

use std::collections::HashMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::geo::EnuPoint;
use crate::model::VehicleId;

pub const SCHEMA_LINE: &str = "# schema=1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("row {row}, column {column}: cannot parse '{value}'")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("trace has no rows")]
    Empty,
    #[error("no vehicle columns in header")]
    NoVehicles,
}

/// Link counters and gap for a follower.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinkSample {
    /// Centre-to-centre distance to the vehicle ahead, metres.
    pub gap: Option<f64>,
    pub rx: u64,
    pub lost: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSample {
    pub id: VehicleId,
    pub position: EnuPoint,
    pub speed: f64,
    pub heading: f64,
    pub cmd_speed: f64,
    pub steer: f64,
    /// `None` for the leader, or when a trace lacks the follower columns.
    pub link: Option<LinkSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub vehicles: Vec<VehicleSample>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub vehicle_ids: Vec<VehicleId>,
    pub rows: Vec<TraceRow>,
}

const BASE: [&str; 6] = [
    "east_m",
    "north_m",
    "speed_mps",
    "heading_rad",
    "cmd_speed_mps",
    "steer_rad",
];
const LINK: [&str; 4] = ["gap_m", "rx_count", "lost_count", "rejected_count"];

impl Trace {
    pub fn new(vehicle_ids: Vec<VehicleId>) -> Self {
        Self {
            vehicle_ids,
            rows: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn header(&self) -> Vec<String> {
        let mut cols = vec!["time_s".to_string()];
        for id in &self.vehicle_ids {
            cols.extend(BASE.iter().map(|c| format!("v{}_{c}", id.0)));
            if !id.is_leader() {
                cols.extend(LINK.iter().map(|c| format!("v{}_{c}", id.0)));
            }
        }
        cols
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        writeln!(out, "{SCHEMA_LINE}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        let mut rec: Vec<String> = Vec::new();
        for row in &self.rows {
            rec.clear();
            rec.push(row.time.to_string());
            for v in &row.vehicles {
                rec.extend(
                    [
                        v.position.east,
                        v.position.north,
                        v.speed,
                        v.heading,
                        v.cmd_speed,
                        v.steer,
                    ]
                    .iter()
                    .map(f64::to_string),
                );
                if !v.id.is_leader() {
                    let link = v.link.unwrap_or_default();
                    rec.push(link.gap.map(|g| g.to_string()).unwrap_or_default());
                    rec.push(link.rx.to_string());
                    rec.push(link.lost.to_string());
                    rec.push(link.rejected.to_string());
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a trace written by [`Trace::write_csv`]. Follower link columns are
    /// optional; every other column must be present.
    pub fn read_csv<R: Read>(input: R) -> Result<Trace, TraceError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().all(|h| h.trim().is_empty()) {
            return Err(TraceError::Empty);
        }
        let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
        let col = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| TraceError::MissingColumn(name.to_string()))
        };
        let time_col = col("time_s")?;
        let mut ids: Vec<u8> = headers
            .iter()
            .filter_map(|h| {
                h.strip_prefix('v')?
                    .strip_suffix("_speed_mps")?
                    .parse()
                    .ok()
            })
            .collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(TraceError::NoVehicles);
        }
        struct Cols {
            id: VehicleId,
            base: [usize; 6],
            link: Option<[Option<usize>; 4]>,
        }
        let mut layout = Vec::new();
        for id in &ids {
            let mut base = [0; 6];
            for (slot, name) in base.iter_mut().zip(BASE) {
                *slot = col(&format!("v{id}_{name}"))?;
            }
            let link = if *id == 0 {
                None
            } else {
                let gap = index.get(format!("v{id}_gap_m").as_str()).copied();
                gap.map(|g| {
                    let mut l = [Some(g), None, None, None];
                    for (slot, name) in l.iter_mut().zip(LINK).skip(1) {
                        *slot = index.get(format!("v{id}_{name}").as_str()).copied();
                    }
                    l
                })
            };
            layout.push(Cols {
                id: VehicleId(*id),
                base,
                link,
            });
        }

        let mut trace = Trace::new(ids.iter().map(|i| VehicleId(*i)).collect());
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let row_no = r + 1;
            let get = |c: usize| record.get(c).unwrap_or("").trim();
            let float = |c: usize| -> Result<f64, TraceError> {
                get(c).parse::<f64>().map_err(|_| TraceError::BadValue {
                    row: row_no,
                    column: headers.get(c).unwrap_or("?").to_string(),
                    value: get(c).to_string(),
                })
            };
            let count = |c: Option<usize>| -> Result<u64, TraceError> {
                match c {
                    None => Ok(0),
                    Some(c) if get(c).is_empty() => Ok(0),
                    Some(c) => get(c).parse::<u64>().map_err(|_| TraceError::BadValue {
                        row: row_no,
                        column: headers.get(c).unwrap_or("?").to_string(),
                        value: get(c).to_string(),
                    }),
                }
            };
            let mut vehicles = Vec::with_capacity(layout.len());
            for l in &layout {
                let b = l.base;
                let link = match l.link {
                    None => None,
                    Some([gap, rx, lost, rejected]) => {
                        let gap = gap.expect("gap column present");
                        Some(LinkSample {
                            gap: if get(gap).is_empty() {
                                None
                            } else {
                                Some(float(gap)?)
                            },
                            rx: count(rx)?,
                            lost: count(lost)?,
                            rejected: count(rejected)?,
                        })
                    }
                };
                vehicles.push(VehicleSample {
                    id: l.id,
                    position: EnuPoint::horizontal(float(b[0])?, float(b[1])?),
                    speed: float(b[2])?,
                    heading: float(b[3])?,
                    cmd_speed: float(b[4])?,
                    steer: float(b[5])?,
                    link,
                });
            }
            trace.rows.push(TraceRow {
                time: float(time_col)?,
                vehicles,
            });
        }
        if trace.rows.is_empty() {
            return Err(TraceError::Empty);
        }
        Ok(trace)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}
