//! Per-control-step episode logs and their CSV form.
//!
//! One row per control step: time, the observed state, the stiffness executed
//! over the following period, the sensed external force, and the realized
//! step cost. The CSV layout is fixed; summaries and plots are built from it.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EPISODE_COLUMNS: [&str; 14] = [
    "t", "x", "y", "z", "vx", "vy", "vz", "kx", "ky", "kz", "fx", "fy", "fz", "cost",
];

#[derive(Error, Debug)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("expected header {want:?}, got {got:?}")]
    BadHeader { want: Vec<String>, got: Vec<String> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub kx: f64,
    pub ky: f64,
    pub kz: f64,
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub cost: f64,
}

impl EpisodeRow {
    pub fn new(
        t: f64,
        state: &[f64; 6],
        stiffness: &[f64; 3],
        force: &[f64; 3],
        cost: f64,
    ) -> Self {
        Self {
            t,
            x: state[0],
            y: state[1],
            z: state[2],
            vx: state[3],
            vy: state[4],
            vz: state[5],
            kx: stiffness[0],
            ky: stiffness[1],
            kz: stiffness[2],
            fx: force[0],
            fy: force[1],
            fz: force[2],
            cost,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn stiffness(&self) -> [f64; 3] {
        [self.kx, self.ky, self.kz]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeLog {
    pub rows: Vec<EpisodeRow>,
    /// Set when the episode stopped before its horizon (workspace violation).
    pub terminated_early: bool,
}

impl EpisodeLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: EpisodeRow) {
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), LogError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(EPISODE_COLUMNS)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), LogError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, LogError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let got: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if got != EPISODE_COLUMNS {
            return Err(LogError::BadHeader {
                want: EPISODE_COLUMNS.iter().map(|s| s.to_string()).collect(),
                got,
            });
        }
        let mut rows = Vec::new();
        for rec in r.deserialize() {
            rows.push(rec?);
        }
        Ok(Self { rows, terminated_early: false })
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> EpisodeLog {
        let mut log = EpisodeLog::new();
        for i in 0..5 {
            let t = i as f64 * 0.1;
            let state = [0.01 * i as f64, -0.3, 1.0 / 3.0, 0.0, 0.5, -0.25];
            let k = [100.0 + i as f64, 0.1, 1000.0];
            let f = [10.0, 0.0, -9.81 * i as f64];
            log.push(EpisodeRow::new(t, &state, &k, &f, 0.125 * i as f64));
        }
        log
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let log = sample_log();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let back = EpisodeLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows, log.rows);
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let text = "t,x,y\n0.0,1.0,2.0\n";
        assert!(matches!(
            EpisodeLog::read_csv(text.as_bytes()),
            Err(LogError::BadHeader { .. })
        ));
    }

    #[test]
    fn identical_logs_serialize_to_identical_bytes() {
        let log = sample_log();
        let mut a = Vec::new();
        let mut b = Vec::new();
        log.write_csv(&mut a).unwrap();
        log.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let header = String::from_utf8(a).unwrap();
        assert!(header.starts_with("t,x,y,z,vx,vy,vz,kx,ky,kz,fx,fy,fz,cost\n"));
    }
}
