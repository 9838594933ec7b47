//! Plain-text array snapshots for fixtures.
//!
//! ```text
//! camcim-array v1
//! d 4 rows 3 radius 2
//! row 0 17 0.75 2 -1 0 1
//! row 1 - 0
//! row 2 3 1 0 0 0 -2
//! ```
//!
//! Each `row` line holds the row index, the token id (`-` when free), the
//! accumulator voltage and, for occupied rows, `d` signed levels.

use std::fmt::Write as _;

use crate::array::{ArrayConfig, CamCimArray, SignedLevel};
use crate::error::{ensure, Result, SimError};
use crate::scalar::Scalar;

const HEADER: &str = "camcim-array v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub token_id: Option<u64>,
    pub acc_voltage: f64,
    pub levels: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub d: usize,
    pub radius: u32,
    pub rows: Vec<SnapshotRow>,
}

pub fn write_snapshot<T: Scalar>(array: &CamCimArray<T>) -> String {
    let cfg = array.config();
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(
        out,
        "d {} rows {} radius {}",
        cfg.d, cfg.n_rows, cfg.key_radius
    );
    for (i, row) in array.rows().iter().enumerate() {
        let _ = write!(out, "row {i} ");
        match row.token_id.filter(|_| row.occupied) {
            Some(t) => {
                let _ = write!(out, "{t} {}", row.acc_voltage);
                for c in &row.cells {
                    let _ = write!(out, " {}", c.stored_level.value());
                }
            }
            None => {
                let _ = write!(out, "- {}", row.acc_voltage);
            }
        }
        out.push('\n');
    }
    out
}

fn bad(line: usize, msg: &str) -> SimError {
    SimError::Parameter(format!("snapshot line {line}: {msg}"))
}

pub fn parse_snapshot(text: &str) -> Result<Snapshot> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| bad(1, "empty input"))?;
    ensure!(
        head.trim() == HEADER,
        Parameter,
        "snapshot header must be `{HEADER}`"
    );
    let (n, dims) = lines.next().ok_or_else(|| bad(2, "missing dimensions"))?;
    let f: Vec<&str> = dims.split_whitespace().collect();
    if f.len() != 6 || f[0] != "d" || f[2] != "rows" || f[4] != "radius" {
        return Err(bad(n + 1, "expected `d <d> rows <n> radius <L>`"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(n + 1, "bad integer"));
    let (d, n_rows, radius) = (num(f[1])?, num(f[3])?, num(f[5])? as u32);

    let mut rows = Vec::with_capacity(n_rows);
    for (n, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 4 || f[0] != "row" {
            return Err(bad(n + 1, "expected `row <i> <token|-> <acc> [levels]`"));
        }
        let idx: usize = f[1].parse().map_err(|_| bad(n + 1, "bad row index"))?;
        if idx != rows.len() {
            return Err(bad(n + 1, "rows must be listed in order"));
        }
        let acc: f64 = f[3]
            .parse()
            .map_err(|_| bad(n + 1, "bad accumulator voltage"))?;
        let (token_id, levels) = if f[2] == "-" {
            if f.len() != 4 {
                return Err(bad(n + 1, "free rows carry no levels"));
            }
            (None, Vec::new())
        } else {
            let token = f[2].parse().map_err(|_| bad(n + 1, "bad token id"))?;
            let levels = f[4..]
                .iter()
                .map(|s| s.parse::<i32>().map_err(|_| bad(n + 1, "bad level")))
                .collect::<Result<Vec<_>>>()?;
            if levels.len() != d {
                return Err(bad(n + 1, "level count differs from d"));
            }
            if levels.iter().any(|l| l.unsigned_abs() > radius) {
                return Err(bad(n + 1, "level outside radius"));
            }
            (Some(token), levels)
        };
        rows.push(SnapshotRow {
            token_id,
            acc_voltage: acc,
            levels,
        });
    }
    ensure!(
        rows.len() == n_rows,
        Parameter,
        "snapshot lists {} rows, header says {n_rows}",
        rows.len()
    );
    Ok(Snapshot { d, radius, rows })
}

impl Snapshot {
    /// Program a fresh array from the snapshot.
    pub fn into_array<T: Scalar>(
        &self,
        mut config: ArrayConfig<T>,
        seed: u64,
    ) -> Result<CamCimArray<T>> {
        ensure!(
            config.d == self.d,
            Parameter,
            "snapshot d = {} but config d = {}",
            self.d,
            config.d
        );
        ensure!(
            config.key_radius == self.radius,
            Parameter,
            "snapshot radius differs from config"
        );
        config.n_rows = self.rows.len();
        let mut array = CamCimArray::new(config, seed)?;
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(t) = row.token_id {
                array.write_key(i, &SignedLevel::from_slice(&row.levels, self.radius)?, t)?;
            }
            array.set_acc_voltage(i, T::of(row.acc_voltage))?;
        }
        array.log_mut().clear();
        Ok(array)
    }
}
