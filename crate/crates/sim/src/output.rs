//! CSV tables and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};

/// A row type of an emitted table.
pub trait Record: Serialize + DeserializeOwned {
    /// Header, in field order.
    const COLUMNS: &'static [&'static str];

    /// Row-level constraints beyond the column types.
    fn check(&self) -> Result<(), String> {
        Ok(())
    }
}

pub fn write_csv<T: Record>(path: &Path, rows: &[T]) -> SimResult<()> {
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    w.write_record(T::COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))?;
    Ok(())
}

/// Reads a table back, checking the header and every row.
pub fn read_csv<T: Record>(path: &Path) -> SimResult<Vec<T>> {
    let file = File::open(path).map_err(|e| SimError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != T::COLUMNS {
        return Err(SimError::Parse {
            path: path.to_path_buf(),
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, row) in r.deserialize::<T>().enumerate() {
        let row = row?;
        row.check().map_err(|m| SimError::Parse {
            path: path.to_path_buf(),
            message: format!("row {}: {m}", i + 1),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> SimResult<()> {
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| SimError::io(path, e))?;
    w.flush().map_err(|e| SimError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> SimResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))
}

fn finite(name: &str, x: f64) -> Result<(), String> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} is not finite"))
    }
}

fn non_negative(name: &str, x: f64) -> Result<(), String> {
    if x >= -1e-9 && x.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} = {x} is negative or not finite"))
    }
}

/// Cluster map, one row per grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cell: usize,
    pub ix: usize,
    pub iy: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub outage: bool,
    pub cluster: Option<usize>,
    pub representative: Option<usize>,
    pub derived_from: Option<usize>,
}

impl Record for ClusterRow {
    const COLUMNS: &'static [&'static str] =
        &["cell", "ix", "iy", "x", "y", "z", "outage", "cluster", "representative", "derived_from"];

    fn check(&self) -> Result<(), String> {
        finite("x", self.x)?;
        finite("y", self.y)?;
        finite("z", self.z)?;
        if self.outage != self.cluster.is_none() || self.cluster.is_some() != self.representative.is_some() {
            return Err("outage cells carry no cluster; solved cells do".into());
        }
        Ok(())
    }
}

/// Rate heatmap, one row per grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub cell: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub outage: bool,
    pub groups: usize,
    pub min_rate: f64,
    pub sum_rate: f64,
}

impl Record for RateRow {
    const COLUMNS: &'static [&'static str] = &["cell", "x", "y", "z", "outage", "groups", "min_rate", "sum_rate"];

    fn check(&self) -> Result<(), String> {
        non_negative("min_rate", self.min_rate)?;
        non_negative("sum_rate", self.sum_rate)?;
        if self.min_rate > self.sum_rate + 1e-12 {
            return Err("min_rate exceeds sum_rate".into());
        }
        if self.outage && (self.groups != 0 || self.sum_rate != 0.0) {
            return Err("outage cell with rates".into());
        }
        Ok(())
    }
}

/// One row per color filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSummaryRow {
    pub filter: usize,
    pub cells: usize,
    pub samples: usize,
    pub clusters: usize,
    pub compression_ratio: f64,
    pub max_average_loss: f64,
    pub representative_loss: f64,
    pub passes: usize,
}

impl Record for MapSummaryRow {
    const COLUMNS: &'static [&'static str] = &[
        "filter",
        "cells",
        "samples",
        "clusters",
        "compression_ratio",
        "max_average_loss",
        "representative_loss",
        "passes",
    ];

    fn check(&self) -> Result<(), String> {
        if self.samples > self.cells || self.clusters > self.samples {
            return Err("counts out of order".into());
        }
        if !(0.0..=1.0).contains(&self.compression_ratio) {
            return Err("compression ratio outside [0, 1]".into());
        }
        non_negative("max_average_loss", self.max_average_loss)?;
        non_negative("representative_loss", self.representative_loss)
    }
}

/// One row per user. `rates` holds the per-layer rates of the assigned
/// transmitter, `;`-separated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRow {
    pub user: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub served: bool,
    pub tx: Option<usize>,
    pub depth: Option<usize>,
    pub phase_one_rate: f64,
    pub rate: f64,
    pub layer_rates: String,
}

impl Record for UserRow {
    const COLUMNS: &'static [&'static str] =
        &["user", "x", "y", "z", "served", "tx", "depth", "phase_one_rate", "rate", "layer_rates"];

    fn check(&self) -> Result<(), String> {
        non_negative("phase_one_rate", self.phase_one_rate)?;
        non_negative("rate", self.rate)?;
        if self.served != self.tx.is_some() || self.served != self.depth.is_some() {
            return Err("served users carry a transmitter and depth".into());
        }
        let layers = parse_layer_rates(&self.layer_rates)?;
        if !layers.is_empty() && (layers.iter().sum::<f64>() - self.rate).abs() > 1e-9 * (1.0 + self.rate) {
            return Err("layer rates do not add up to the user rate".into());
        }
        Ok(())
    }
}

pub fn format_layer_rates(rates: &[f64]) -> String {
    rates.iter().map(|r| format!("{r:?}")).collect::<Vec<_>>().join(";")
}

pub fn parse_layer_rates(s: &str) -> Result<Vec<f64>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|t| {
            let r: f64 = t.parse().map_err(|_| format!("bad layer rate {t:?}"))?;
            non_negative("layer rate", r).map(|_| r)
        })
        .collect()
}

/// One row per sweep anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub plane: String,
    pub u: f64,
    pub v: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub users: usize,
    pub served: usize,
    pub status: String,
    pub phase_one_sum: f64,
    pub sum_rate: f64,
    pub min_rate: f64,
    pub rounds: usize,
    pub converged: bool,
}

pub const SWEEP_STATUS: [&str; 3] = ["ok", "outage", "infeasible"];

impl Record for SweepRow {
    const COLUMNS: &'static [&'static str] = &[
        "plane",
        "u",
        "v",
        "x",
        "y",
        "z",
        "users",
        "served",
        "status",
        "phase_one_sum",
        "sum_rate",
        "min_rate",
        "rounds",
        "converged",
    ];

    fn check(&self) -> Result<(), String> {
        if self.plane != "xy" && self.plane != "yz" {
            return Err(format!("unknown plane {:?}", self.plane));
        }
        if !SWEEP_STATUS.contains(&self.status.as_str()) {
            return Err(format!("unknown status {:?}", self.status));
        }
        if self.served > self.users {
            return Err("more served users than users".into());
        }
        non_negative("phase_one_sum", self.phase_one_sum)?;
        non_negative("sum_rate", self.sum_rate)?;
        non_negative("min_rate", self.min_rate)?;
        if self.status == "ok" && self.sum_rate < self.phase_one_sum - 1e-9 {
            return Err("update lowered the sum rate".into());
        }
        Ok(())
    }
}

/// Machine-readable record of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub wall_time_ms: u128,
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> SimResult<Self> {
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config)?,
            wall_time_ms: 0,
            outputs: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> SimResult<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep_row() -> SweepRow {
        SweepRow {
            plane: "xy".into(),
            u: 0.1,
            v: -0.2,
            x: 0.1,
            y: -0.2,
            z: 2.0,
            users: 16,
            served: 16,
            status: "ok".into(),
            phase_one_sum: 1.5,
            sum_rate: 2.25,
            min_rate: 0.1,
            rounds: 3,
            converged: true,
        }
    }

    #[test]
    fn tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let rows = vec![sweep_row(), SweepRow { u: 0.2, ..sweep_row() }];
        write_csv(&path, &rows).unwrap();
        assert_eq!(read_csv::<SweepRow>(&path).unwrap(), rows);

        let users = vec![UserRow {
            user: 0,
            x: 0.0,
            y: 0.0,
            z: 2.0,
            served: true,
            tx: Some(3),
            depth: Some(2),
            phase_one_rate: 0.5,
            rate: 0.75,
            layer_rates: format_layer_rates(&[0.25, 0.5]),
        }];
        let path = dir.path().join("u.csv");
        write_csv(&path, &users).unwrap();
        assert_eq!(read_csv::<UserRow>(&path).unwrap(), users);
    }

    #[test]
    fn schema_violations_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_csv(&path, &[SweepRow { status: "maybe".into(), ..sweep_row() }]).unwrap();
        assert!(matches!(read_csv::<SweepRow>(&path), Err(SimError::Parse { .. })));
        write_csv(&path, &[sweep_row()]).unwrap();
        assert!(read_csv::<RateRow>(&path).is_err());
    }

    #[test]
    fn layer_rates_format() {
        assert_eq!(parse_layer_rates(&format_layer_rates(&[0.1, 1e-12])).unwrap(), vec![0.1, 1e-12]);
        assert!(parse_layer_rates("0.1;x").is_err());
        assert!(parse_layer_rates("").unwrap().is_empty());
    }

    proptest::proptest! {
        #[test]
        fn layer_rates_round_trip(rates in proptest::collection::vec(0.0f64..10.0, 0..6)) {
            proptest::prop_assert_eq!(parse_layer_rates(&format_layer_rates(&rates)).unwrap(), rates);
        }

        #[test]
        fn sweep_rows_round_trip(sums in proptest::collection::vec((0.0f64..2.0, 0.0f64..1.0, 0usize..50), 1..5)) {
            let rows: Vec<SweepRow> = sums
                .iter()
                .map(|&(p, extra, rounds)| SweepRow {
                    phase_one_sum: p,
                    sum_rate: p + extra,
                    rounds,
                    ..sweep_row()
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("s.csv");
            write_csv(&path, &rows).unwrap();
            proptest::prop_assert_eq!(read_csv::<SweepRow>(&path).unwrap(), rows);
        }
    }
}
