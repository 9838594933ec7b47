//! Charge-domain mode: similarity accumulation and static eviction.
//!
//! After the race freezes, each sense line shares charge with its
//! accumulator capacitor. With `lambda = C_acc / (C_sl + C_acc)` the
//! accumulator follows
//!
//! ```text
//! acc <- lambda * acc + (1 - lambda) * v_sl
//! ```
//!
//! an exponentially weighted average of the frozen sense-line voltages.
//! The row whose accumulated voltage reaches the inverter switching
//! voltage `v_s` first is the eviction victim.

use serde::{Deserialize, Serialize};

use crate::array::{ArrayConfig, CamCimArray, QueryDrive, SignedLevel};
use crate::error::{ensure, Result};
use crate::events::Event;
use crate::order::{argmin_lowest_index, tie_groups_ascending};
use crate::scalar::Scalar;

/// How eviction discharge current is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictionDischarge {
    /// One shared discharge current: the victim is the lowest accumulator.
    #[default]
    Shared,
    /// Each row discharges through its own sense current under the
    /// current query.
    ScoreDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeConfig<T> {
    /// Inverter switching voltage.
    pub v_s: T,
    /// Detector current of the static-pruning reference device.
    pub i_sta: T,
    pub discharge: EvictionDischarge,
    /// Absolute voltage resolution of the eviction comparator.
    pub tie_tolerance: T,
}

impl<T: Scalar> ChargeConfig<T> {
    pub fn new(array: &ArrayConfig<T>) -> Self {
        let vdd = array.device.vdd;
        Self {
            v_s: vdd * T::of(0.25),
            i_sta: T::of(1e-6),
            discharge: EvictionDischarge::Shared,
            tie_tolerance: vdd * T::resolution(),
        }
    }

    pub fn validate(&self, array: &ArrayConfig<T>) -> Result<()> {
        ensure!(
            self.v_s > T::zero() && self.v_s < array.device.vdd,
            Parameter,
            "v_s must lie strictly inside (0, vdd)"
        );
        Ok(())
    }
}

/// Retention factor `C_acc / (C_sl + C_acc)`.
pub fn lambda<T: Scalar>(config: &ArrayConfig<T>) -> T {
    config.c_acc / (config.c_sl + config.c_acc)
}

/// Accumulator voltages of all rows plus the constants that govern them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulatorState<T> {
    /// `None` for unoccupied rows.
    pub acc_voltage: Vec<Option<T>>,
    pub lambda: T,
    pub v_s: T,
}

impl<T: Scalar> AccumulatorState<T> {
    pub fn snapshot(array: &CamCimArray<T>, charge: &ChargeConfig<T>) -> Self {
        Self {
            acc_voltage: array
                .rows()
                .iter()
                .map(|r| r.occupied.then_some(r.acc_voltage))
                .collect(),
            lambda: lambda(array.config()),
            v_s: charge.v_s,
        }
    }
}

/// Fold the frozen sense-line voltages into every occupied accumulator.
pub fn accumulate<T: Scalar>(array: &mut CamCimArray<T>) -> Result<()> {
    let lam = lambda(array.config());
    let rows: Vec<usize> = array.occupied_rows().collect();
    for &r in &rows {
        ensure!(
            array.rows()[r].residual.is_some(),
            Sequencing,
            "row {r} has no frozen sense-line voltage; run the race first"
        );
    }
    for &r in &rows {
        let row = &mut array.rows_mut()[r];
        let v = row.residual.take().expect("checked");
        row.acc_voltage = lam * row.acc_voltage + (T::one() - lam) * v;
    }
    array
        .log_mut()
        .push(Event::ChargeShare { rows: rows.len() });
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionChoice {
    pub row: usize,
    /// Another row reached `v_s` at the same instant.
    pub tie: bool,
}

/// Row whose accumulator discharges to `v_s` first.
///
/// `drive` is only read in [`EvictionDischarge::ScoreDependent`] mode.
pub fn find_eviction_candidate<T: Scalar>(
    array: &mut CamCimArray<T>,
    charge: &ChargeConfig<T>,
    drive: Option<&QueryDrive<T>>,
) -> Result<EvictionChoice> {
    let rows: Vec<usize> = array.occupied_rows().collect();
    ensure!(!rows.is_empty(), State, "no occupied rows to evict from");
    let choice = match charge.discharge {
        EvictionDischarge::Shared => {
            let items: Vec<(usize, T)> = rows
                .iter()
                .map(|&r| (r, array.rows()[r].acc_voltage))
                .collect();
            argmin_lowest_index(&items, charge.tie_tolerance)
        }
        EvictionDischarge::ScoreDependent => {
            let drive = drive.ok_or_else(|| {
                crate::error::SimError::Parameter(
                    "score-dependent eviction needs the query drive".into(),
                )
            })?;
            let cfg = array.config();
            let c_total = cfg.c_sl + cfg.c_acc;
            let currents = array.row_currents(drive)?;
            let items: Vec<(usize, T)> = rows
                .iter()
                .map(|&r| {
                    let headroom = (array.rows()[r].acc_voltage - charge.v_s).max(T::zero());
                    (r, headroom * c_total / currents[r].expect("occupied"))
                })
                .collect();
            let t_max = items.iter().map(|x| x.1).fold(T::zero(), T::max);
            let groups = tie_groups_ascending(&items, t_max * T::resolution());
            groups.first().map(|g| (g[0].0, g.len() > 1))
        }
    };
    let (row, tie) = choice.expect("non-empty");
    array.log_mut().push(Event::EvictionSearch);
    Ok(EvictionChoice { row, tie })
}

/// Replace the victim row with a new key in a single write.
///
/// Only legal once the reserved rows are exhausted, i.e. when no row is free.
pub fn evict_and_overwrite<T: Scalar>(
    array: &mut CamCimArray<T>,
    victim: usize,
    new_key: &[SignedLevel],
    token_id: u64,
) -> Result<()> {
    ensure!(
        array.free_row().is_none(),
        Sequencing,
        "eviction requested while free rows remain"
    );
    ensure!(
        array.row(victim)?.occupied,
        State,
        "victim row {victim} is not occupied"
    );
    array.write_key(victim, new_key, token_id)
}
