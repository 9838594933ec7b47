//! The complementary-pair cell and the full array.
//!
//! # Encoding
//!
//! Key levels live on the grid `-L..=L`. The device ladder has `2L + 1`
//! equally spaced thresholds, index `L` being the medium level. A key `v`
//! programs `F1` to index `L - v` and `F1b` to index `L + v`; zero puts both
//! devices on the medium level.
//!
//! Query levels live on `-Q..=Q` and are expanded bitwise into `Q` unit
//! phases (thermometer code: phase `p` carries `sign(q)` when `p < |q|`,
//! otherwise 0). Each unit maps to a bit-line pair:
//!
//! | unit | `BL1`   | `BL1b`  |
//! |------|---------|---------|
//! | `+1` | 0       | `V_A`   |
//! | `-1` | `V_A`   | 0       |
//! | `0`  | `V_Z`   | `V_Z`   |
//!
//! with `V_Z = v_read` (the zero-drive level, above every threshold) and
//! `V_A = 2 V_Z - V_mid`. Ground keeps a device in cutoff because every
//! threshold is non-negative. The unit phases are interleaved within one
//! discharge window, so the sense line sees their time average.
//!
//! # Closed form
//!
//! Under zero variation, per cell and per unit phase the two devices draw
//! `c0 - gm * dV * u * k` with `c0 = 2 i_off + 2 gm (V_Z - V_mid)` and `dV`
//! the ladder spacing. Averaging the `Q` phases and summing `d` cells:
//!
//! ```text
//! I_SL = I_base - alpha * score,  I_base = d * c0,  alpha = gm * dV / Q
//! ```
//!
//! so higher similarity always means lower sense-line current.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceParams, FeFetState, VariationMode};
use crate::error::{ensure, Result, SimError};
use crate::events::{Event, EventLog};
use crate::order::lower_median;
use crate::scalar::Scalar;

/// A signed multilevel value. The admissible radius is checked by whoever
/// consumes it (key and query radii differ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignedLevel(i32);

impl SignedLevel {
    pub const ZERO: SignedLevel = SignedLevel(0);

    pub fn new(value: i32, radius: u32) -> Result<Self> {
        ensure!(
            value.unsigned_abs() <= radius,
            Parameter,
            "level {value} outside radius {radius}"
        );
        Ok(Self(value))
    }

    pub fn value(self) -> i32 {
        self.0
    }

    pub fn from_slice(values: &[i32], radius: u32) -> Result<Vec<Self>> {
        values.iter().map(|&v| Self::new(v, radius)).collect()
    }
}

/// Integer dot product of two level vectors.
pub fn level_dot(a: &[SignedLevel], b: &[SignedLevel]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x.0 as i64 * y.0 as i64).sum()
}

/// Symmetric uniform quantization, rounding half away from zero, clamped
/// to `radius`.
pub fn quantize_symmetric<T: Scalar>(values: &[T], radius: u32, scale: T) -> Vec<SignedLevel> {
    let r = radius as i32;
    values
        .iter()
        .map(|&x| {
            let q = (x / scale).round().to_i64().unwrap_or(0);
            SignedLevel(q.clamp(-(r as i64), r as i64) as i32)
        })
        .collect()
}

/// Initial accumulator voltage given to a freshly written row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccInit<T> {
    /// Lower median over the other occupied rows (supply voltage when there
    /// are none).
    Median,
    Fixed(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig<T> {
    pub d: usize,
    pub n_rows: usize,
    pub key_radius: u32,
    pub query_radius: u32,
    /// Sense-line capacitance (farads).
    pub c_sl: T,
    /// Accumulator capacitance (farads).
    pub c_acc: T,
    pub device: DeviceParams<T>,
    pub acc_init: AccInit<T>,
}

/// `I_SL = i_base - alpha * score` at zero variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentLaw<T> {
    pub i_base: T,
    pub alpha: T,
}

impl<T: Scalar> CurrentLaw<T> {
    pub fn current(&self, score: T) -> T {
        self.i_base - self.alpha * score
    }

    pub fn score(&self, current: T) -> T {
        (self.i_base - current) / self.alpha
    }
}

impl<T: Scalar> ArrayConfig<T> {
    /// Radii (2, 2), 50 fF sense lines, 200 fF accumulators.
    pub fn new(d: usize, n_rows: usize) -> Self {
        Self::with_radii(d, n_rows, 2, 2)
    }

    pub fn with_radii(d: usize, n_rows: usize, key_radius: u32, query_radius: u32) -> Self {
        Self {
            d,
            n_rows,
            key_radius,
            query_radius,
            c_sl: T::of(50e-15),
            c_acc: T::of(200e-15),
            device: DeviceParams::default_for_levels(2 * key_radius as usize + 1),
            acc_init: AccInit::Median,
        }
    }

    pub fn with_sigma(mut self, sigma_vth: T) -> Self {
        self.device.sigma_vth = sigma_vth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.d >= 1, Parameter, "d must be >= 1");
        ensure!(self.n_rows >= 1, Parameter, "n_rows must be >= 1");
        ensure!(
            self.key_radius >= 1 && self.query_radius >= 1,
            Parameter,
            "level radii must be >= 1"
        );
        ensure!(
            self.c_sl > T::zero() && self.c_acc > T::zero(),
            Parameter,
            "capacitances must be > 0"
        );
        self.device.validate()?;
        let levels = &self.device.vth_levels;
        ensure!(
            levels.len() == 2 * self.key_radius as usize + 1,
            Parameter,
            "key radius {} needs {} threshold levels, got {}",
            self.key_radius,
            2 * self.key_radius + 1,
            levels.len()
        );
        let spacing = levels[1] - levels[0];
        ensure!(
            levels
                .windows(2)
                .all(|w| ((w[1] - w[0]) - spacing).abs() <= spacing * T::resolution()),
            Parameter,
            "threshold levels must be equally spaced"
        );
        ensure!(
            levels[0] >= T::zero(),
            Parameter,
            "thresholds must be >= 0 so a grounded line is off"
        );
        ensure!(
            self.device.v_read >= *levels.last().unwrap(),
            Parameter,
            "v_read must be at or above the highest threshold"
        );
        ensure!(
            self.drive_high() <= self.device.vdd,
            Parameter,
            "2 v_read - V_mid exceeds vdd"
        );
        if let AccInit::Fixed(v) = self.acc_init {
            ensure!(
                v >= T::zero() && v <= self.device.vdd,
                Parameter,
                "fixed acc init outside [0, vdd]"
            );
        }
        Ok(())
    }

    pub fn mid_vth(&self) -> T {
        self.device.vth_levels[self.key_radius as usize]
    }

    pub fn level_spacing(&self) -> T {
        self.device.vth_levels[1] - self.device.vth_levels[0]
    }

    /// Bit-line voltage for a zero query unit.
    pub fn drive_zero(&self) -> T {
        self.device.v_read
    }

    /// Bit-line voltage on the active line of a `±1` query unit.
    pub fn drive_high(&self) -> T {
        T::of(2.0) * self.device.v_read - self.mid_vth()
    }

    pub fn current_law(&self) -> CurrentLaw<T> {
        let p = &self.device;
        let c0 = T::of(2.0) * p.i_off + T::of(2.0) * p.gm * (p.v_read - self.mid_vth());
        CurrentLaw {
            i_base: T::of_usize(self.d) * c0,
            alpha: p.gm * self.level_spacing() / T::of(self.query_radius as f64),
        }
    }

    /// Largest achievable `|score|`: `d * L_key * L_query`.
    pub fn score_bound(&self) -> i64 {
        self.d as i64 * self.key_radius as i64 * self.query_radius as i64
    }

    /// Ladder indices `(F1, F1b)` for a key level.
    pub fn key_indices(&self, level: SignedLevel) -> (usize, usize) {
        let l = self.key_radius as i32;
        ((l - level.0) as usize, (l + level.0) as usize)
    }
}

/// Two 1T1F units storing one signed key level in complementary form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCell<T> {
    pub f1: FeFetState<T>,
    pub f1b: FeFetState<T>,
    pub stored_level: SignedLevel,
}

impl<T: Scalar> PairCell<T> {
    /// Recover the stored level from the device pair alone.
    pub fn decode_stored_level(&self, config: &ArrayConfig<T>) -> Result<SignedLevel> {
        let l = config.key_radius as i64;
        let value = l - self.f1.level_index as i64;
        ensure!(
            self.f1b.level_index as i64 == l + value && value.abs() <= l,
            State,
            "inconsistent device pair ({}, {})",
            self.f1.level_index,
            self.f1b.level_index
        );
        Ok(SignedLevel(value as i32))
    }

    /// Current of both devices under one unit-phase drive.
    #[inline]
    pub fn current(&self, drive: (T, T), params: &DeviceParams<T>) -> T {
        self.f1.read_current(drive.0, params) + self.f1b.read_current(drive.1, params)
    }
}

/// A query expanded into per-dimension, per-phase bit-line pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDrive<T> {
    pub levels: Vec<SignedLevel>,
    /// Unit phases per dimension (the query radius).
    pub phases: usize,
    /// `bl_pairs[i][p]` is `(BL1, BL1b)` of dimension `i` in phase `p`.
    pub bl_pairs: Vec<Vec<(T, T)>>,
}

pub fn encode_query<T: Scalar>(
    q: &[SignedLevel],
    config: &ArrayConfig<T>,
) -> Result<QueryDrive<T>> {
    ensure!(
        q.len() == config.d,
        Parameter,
        "query has {} dims, array has {}",
        q.len(),
        config.d
    );
    let radius = config.query_radius;
    for level in q {
        ensure!(
            level.0.unsigned_abs() <= radius,
            Parameter,
            "query level {} outside radius {radius}",
            level.0
        );
    }
    let (vz, va) = (config.drive_zero(), config.drive_high());
    let phases = radius as usize;
    let bl_pairs = q
        .iter()
        .map(|level| {
            let mag = level.0.unsigned_abs() as usize;
            (0..phases)
                .map(|p| match (p < mag, level.0.signum()) {
                    (true, 1) => (T::zero(), va),
                    (true, -1) => (va, T::zero()),
                    _ => (vz, vz),
                })
                .collect()
        })
        .collect();
    Ok(QueryDrive {
        levels: q.to_vec(),
        phases,
        bl_pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row<T> {
    pub cells: Vec<PairCell<T>>,
    pub occupied: bool,
    pub token_id: Option<u64>,
    /// Voltage held on the row's accumulator capacitor.
    pub acc_voltage: T,
    /// Sense-line voltage left by the latest race; consumed by accumulation.
    pub residual: Option<T>,
}

/// The full array, its random stream, and its event log.
#[derive(Debug, Clone)]
pub struct CamCimArray<T> {
    config: ArrayConfig<T>,
    rows: Vec<Row<T>>,
    rng: ChaCha8Rng,
    log: EventLog<T>,
}

impl<T: Scalar> CamCimArray<T> {
    pub fn new(config: ArrayConfig<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mid = config.key_radius as usize;
        let mut make = || match config.device.variation {
            VariationMode::PerDevice => {
                let mut s = FeFetState::fabricate(&config.device, &mut rng);
                s.level_index = mid;
                s
            }
            VariationMode::PerProgram => FeFetState::nominal(mid),
        };
        let rows = (0..config.n_rows)
            .map(|_| Row {
                cells: (0..config.d)
                    .map(|_| PairCell {
                        f1: make(),
                        f1b: make(),
                        stored_level: SignedLevel::ZERO,
                    })
                    .collect(),
                occupied: false,
                token_id: None,
                acc_voltage: T::zero(),
                residual: None,
            })
            .collect();
        Ok(Self {
            config,
            rows,
            rng,
            log: EventLog::new(),
        })
    }

    pub fn config(&self) -> &ArrayConfig<T> {
        &self.config
    }

    pub fn rows(&self) -> &[Row<T>] {
        &self.rows
    }

    pub fn row(&self, row: usize) -> Result<&Row<T>> {
        self.rows
            .get(row)
            .ok_or_else(|| SimError::Parameter(format!("row {row} out of range")))
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn occupied_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.occupied)
            .map(|(i, _)| i)
    }

    pub fn n_occupied(&self) -> usize {
        self.rows.iter().filter(|r| r.occupied).count()
    }

    /// Lowest-index unoccupied row.
    pub fn free_row(&self) -> Option<usize> {
        self.rows.iter().position(|r| !r.occupied)
    }

    pub fn log(&self) -> &EventLog<T> {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut EventLog<T> {
        &mut self.log
    }

    pub fn take_log(&mut self) -> EventLog<T> {
        std::mem::take(&mut self.log)
    }

    /// Program `key` into `row`, replacing whatever was stored there.
    pub fn write_key(&mut self, row: usize, key: &[SignedLevel], token_id: u64) -> Result<()> {
        ensure!(row < self.rows.len(), Parameter, "row {row} out of range");
        ensure!(
            key.len() == self.config.d,
            Parameter,
            "key has {} dims, array has {}",
            key.len(),
            self.config.d
        );
        for level in key {
            ensure!(
                level.0.unsigned_abs() <= self.config.key_radius,
                Parameter,
                "key level {} outside radius {}",
                level.0,
                self.config.key_radius
            );
        }
        ensure!(
            !self
                .rows
                .iter()
                .enumerate()
                .any(|(i, r)| i != row && r.occupied && r.token_id == Some(token_id)),
            State,
            "token {token_id} already stored in another row"
        );
        let acc = match self.config.acc_init {
            AccInit::Fixed(v) => v,
            AccInit::Median => {
                let others: Vec<T> = self
                    .rows
                    .iter()
                    .enumerate()
                    .filter(|(i, r)| *i != row && r.occupied)
                    .map(|(_, r)| r.acc_voltage)
                    .collect();
                lower_median(&others).unwrap_or(self.config.device.vdd)
            }
        };
        let params = &self.config.device;
        let target = &mut self.rows[row];
        for (cell, &level) in target.cells.iter_mut().zip(key) {
            let l = self.config.key_radius as i32;
            let (i1, i1b) = ((l - level.0) as usize, (l + level.0) as usize);
            cell.f1 = cell.f1.program(i1, params, &mut self.rng)?;
            cell.f1b = cell.f1b.program(i1b, params, &mut self.rng)?;
            cell.stored_level = level;
        }
        target.occupied = true;
        target.token_id = Some(token_id);
        target.acc_voltage = acc;
        target.residual = None;
        self.log.push(Event::Write {
            dims: self.config.d,
        });
        Ok(())
    }

    /// Sense-line current of an occupied row under `drive`.
    pub fn row_current(&self, row: usize, drive: &QueryDrive<T>) -> Result<T> {
        let r = self.row(row)?;
        ensure!(r.occupied, State, "row {row} is not occupied");
        ensure!(
            drive.bl_pairs.len() == self.config.d,
            Parameter,
            "drive does not match array width"
        );
        Ok(self.sense_current(r, drive))
    }

    fn sense_current(&self, row: &Row<T>, drive: &QueryDrive<T>) -> T {
        let params = &self.config.device;
        let mut total = T::zero();
        for (cell, pairs) in row.cells.iter().zip(&drive.bl_pairs) {
            for &pair in pairs {
                total = total + cell.current(pair, params);
            }
        }
        total / T::of_usize(drive.phases)
    }

    /// Currents of every row (`None` for unoccupied rows).
    pub fn row_currents(&self, drive: &QueryDrive<T>) -> Result<Vec<Option<T>>> {
        ensure!(
            drive.bl_pairs.len() == self.config.d,
            Parameter,
            "drive does not match array width"
        );
        Ok(self
            .rows
            .iter()
            .map(|r| r.occupied.then(|| self.sense_current(r, drive)))
            .collect())
    }

    /// Decode the stored key of a row from its device states.
    pub fn decode_key(&self, row: usize) -> Result<Vec<SignedLevel>> {
        let r = self.row(row)?;
        ensure!(r.occupied, State, "row {row} is not occupied");
        r.cells
            .iter()
            .map(|c| c.decode_stored_level(&self.config))
            .collect()
    }

    pub fn set_acc_voltage(&mut self, row: usize, v: T) -> Result<()> {
        ensure!(row < self.rows.len(), Parameter, "row {row} out of range");
        ensure!(
            v >= T::zero() && v <= self.config.device.vdd,
            Parameter,
            "acc voltage {v} outside [0, vdd]"
        );
        self.rows[row].acc_voltage = v;
        Ok(())
    }

    pub(crate) fn set_residual(&mut self, row: usize, v: Option<T>) {
        self.rows[row].residual = v;
    }

    pub(crate) fn rows_mut(&mut self) -> &mut [Row<T>] {
        &mut self.rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: &[i32]) -> Vec<SignedLevel> {
        v.iter().map(|&x| SignedLevel(x)).collect()
    }

    #[test]
    fn zero_key_programs_medium_level() {
        let cfg = ArrayConfig::<f64>::new(4, 2);
        let mut a = CamCimArray::new(cfg, 0).unwrap();
        a.write_key(0, &lv(&[0, 0, 0, 0]), 1).unwrap();
        for c in &a.rows()[0].cells {
            assert_eq!(c.f1.level_index, 2);
            assert_eq!(c.f1b.level_index, 2);
        }
    }

    #[test]
    fn positive_key_puts_f1_low() {
        let cfg = ArrayConfig::<f64>::new(1, 1);
        let mut a = CamCimArray::new(cfg, 0).unwrap();
        a.write_key(0, &lv(&[2]), 1).unwrap();
        let c = a.rows()[0].cells[0];
        assert_eq!((c.f1.level_index, c.f1b.level_index), (0, 4));
    }

    #[test]
    fn write_then_decode_round_trips() {
        let cfg = ArrayConfig::<f64>::new(5, 1).with_sigma(0.054);
        let mut a = CamCimArray::new(cfg, 9).unwrap();
        let key = lv(&[-2, -1, 0, 1, 2]);
        a.write_key(0, &key, 3).unwrap();
        assert_eq!(a.decode_key(0).unwrap(), key);
    }

    #[test]
    fn overwrite_logs_one_write_and_touches_one_row() {
        let cfg = ArrayConfig::<f64>::new(3, 3);
        let mut a = CamCimArray::new(cfg, 0).unwrap();
        a.write_key(0, &lv(&[1, 1, 1]), 1).unwrap();
        a.write_key(1, &lv(&[2, 0, -2]), 2).unwrap();
        let before = a.rows()[0].clone();
        let n = a.log().len();
        a.write_key(1, &lv(&[-1, -1, 0]), 7).unwrap();
        assert_eq!(a.log().len(), n + 1);
        assert_eq!(a.rows()[0], before);
        assert_eq!(a.row(1).unwrap().token_id, Some(7));
    }

    #[test]
    fn out_of_range_levels_rejected() {
        let cfg = ArrayConfig::<f64>::new(2, 1);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        assert!(a.write_key(0, &lv(&[3, 0]), 1).is_err());
        assert!(encode_query(&lv(&[0, -3]), &cfg).is_err());
        assert!(SignedLevel::new(3, 2).is_err());
    }

    #[test]
    fn duplicate_token_rejected() {
        let cfg = ArrayConfig::<f64>::new(1, 2);
        let mut a = CamCimArray::new(cfg, 0).unwrap();
        a.write_key(0, &lv(&[1]), 5).unwrap();
        assert!(matches!(
            a.write_key(1, &lv(&[1]), 5),
            Err(SimError::State(_))
        ));
    }

    #[test]
    fn zero_query_drives_both_lines_at_zero_drive_level() {
        let cfg = ArrayConfig::<f64>::new(1, 1);
        let d = encode_query(&lv(&[0]), &cfg).unwrap();
        for &(a, b) in &d.bl_pairs[0] {
            assert_eq!((a, b), (cfg.drive_zero(), cfg.drive_zero()));
        }
    }

    #[test]
    fn opposite_queries_are_mirrored() {
        let cfg = ArrayConfig::<f64>::new(1, 1);
        let p = encode_query(&lv(&[2]), &cfg).unwrap();
        let n = encode_query(&lv(&[-2]), &cfg).unwrap();
        for (a, b) in p.bl_pairs[0].iter().zip(&n.bl_pairs[0]) {
            assert_eq!((a.0, a.1), (b.1, b.0));
        }
        for &(a, b) in &p.bl_pairs[0] {
            assert!(a >= 0.0 && b <= cfg.device.vdd);
        }
    }

    #[test]
    fn one_bit_truth_table() {
        let cfg = ArrayConfig::<f64>::with_radii(1, 1, 1, 1);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        let mut current = |q: i32, k: i32| {
            a.write_key(0, &lv(&[k]), 1).unwrap();
            let d = encode_query(&lv(&[q]), &cfg).unwrap();
            a.row_current(0, &d).unwrap()
        };
        let pp = current(1, 1);
        let nn = current(-1, -1);
        let pn = current(1, -1);
        let np = current(-1, 1);
        let z = current(1, 0);
        assert_eq!(pp, nn);
        assert_eq!(pn, np);
        assert!(pp < z && z < pn);
    }

    #[test]
    fn zero_query_is_key_independent() {
        let cfg = ArrayConfig::<f64>::new(1, 1);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        let d = encode_query(&lv(&[0]), &cfg).unwrap();
        let mut seen = Vec::new();
        for k in -2..=2 {
            a.write_key(0, &lv(&[k]), 1).unwrap();
            seen.push(a.row_current(0, &d).unwrap());
        }
        assert!(
            seen.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-20),
            "{seen:?}"
        );
    }

    #[test]
    fn score_zero_gives_base_current() {
        let cfg = ArrayConfig::<f64>::new(4, 1);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        a.write_key(0, &lv(&[1, 2, -1, 0]), 1).unwrap();
        let d = encode_query(&lv(&[1, 0, 1, 2]), &cfg).unwrap();
        let law = cfg.current_law();
        let i = a.row_current(0, &d).unwrap();
        assert!((i - law.i_base).abs() <= law.i_base * 1e-14);
    }

    #[test]
    fn nine_scores_strictly_decreasing() {
        let cfg = ArrayConfig::<f64>::with_radii(4, 1, 1, 1);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        let d = encode_query(&lv(&[1, 1, 1, 1]), &cfg).unwrap();
        let mut currents = Vec::new();
        for score in -4..=4i32 {
            // `score` = (#plus) - (#minus) with zeros filling the rest.
            let plus = score.max(0) as usize;
            let minus = (-score).max(0) as usize;
            let mut key = vec![0; 4];
            key[..plus].iter_mut().for_each(|x| *x = 1);
            key[..minus].iter_mut().for_each(|x| *x = -1);
            a.write_key(0, &lv(&key), 1).unwrap();
            currents.push(a.row_current(0, &d).unwrap());
        }
        assert!(currents.windows(2).all(|w| w[1] < w[0]), "{currents:?}");
    }

    #[test]
    fn unoccupied_row_current_is_state_error() {
        let cfg = ArrayConfig::<f64>::new(1, 2);
        let a = CamCimArray::new(cfg.clone(), 0).unwrap();
        let d = encode_query(&lv(&[1]), &cfg).unwrap();
        assert!(matches!(a.row_current(1, &d), Err(SimError::State(_))));
    }

    #[test]
    fn inconsistent_pair_fails_decode() {
        let cfg = ArrayConfig::<f64>::new(1, 1);
        let cell = PairCell {
            f1: FeFetState::nominal(0),
            f1b: FeFetState::nominal(0),
            stored_level: SignedLevel::ZERO,
        };
        assert!(cell.decode_stored_level(&cfg).is_err());
    }

    #[test]
    fn score_range_is_512_at_default_width() {
        let cfg = ArrayConfig::<f64>::new(128, 1);
        assert_eq!(cfg.score_bound(), 512);
    }

    #[test]
    fn config_rejects_level_count_mismatch() {
        let mut cfg = ArrayConfig::<f64>::new(4, 1);
        cfg.device = DeviceParams::default_for_levels(3);
        assert!(cfg.validate().is_err());
        let mut cfg = ArrayConfig::<f64>::new(4, 1);
        cfg.device.v_read = 0.4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn quantize_rounds_half_away_from_zero() {
        let q = quantize_symmetric(&[0.5, -0.5, 1.49, -2.6, 7.0], 2, 1.0);
        assert_eq!(
            q.iter().map(|l| l.value()).collect::<Vec<_>>(),
            vec![1, -1, 1, -2, 2]
        );
    }

    #[test]
    fn median_init_for_new_rows() {
        let cfg = ArrayConfig::<f64>::new(1, 4);
        let mut a = CamCimArray::new(cfg, 0).unwrap();
        a.write_key(0, &lv(&[0]), 0).unwrap();
        assert_eq!(a.row(0).unwrap().acc_voltage, 1.0);
        a.set_acc_voltage(0, 0.7).unwrap();
        a.write_key(1, &lv(&[0]), 1).unwrap();
        a.set_acc_voltage(1, 0.9).unwrap();
        a.write_key(2, &lv(&[0]), 2).unwrap();
        assert_eq!(a.row(2).unwrap().acc_voltage, 0.7);
    }
}
