//! CAM mode: top-k selection by a sense-line discharge race.
//!
//! Every occupied sense line is precharged to the supply and discharged by
//! its row current. Lines with higher similarity draw less current and
//! stay above `v_half` longer. Each line above `v_half` keeps its detector
//! device on, contributing `i_dyn` to a shared node compared against
//! `i_ref1 = (k + 1) * i_dyn`; the comparator fires the moment only `k`
//! lines remain, freezing the race.
//!
//! The race is solved analytically: discharge times are computed in closed
//! form and the freeze is located by sweeping the crossings in time order.

use serde::{Deserialize, Serialize};

use crate::array::{ArrayConfig, CamCimArray, QueryDrive};
use crate::error::{ensure, Result, SimError};
use crate::events::{Event, EventLog};
use crate::order::tie_groups_ascending;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DischargeModel {
    /// Linear ramp `V(t) = vdd - I t / C`.
    #[default]
    ConstantCurrent,
    /// Exponential decay through the equivalent resistance `vdd / I`.
    Rc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceConfig<T> {
    pub k: usize,
    pub v_half: T,
    pub i_dyn: T,
    pub i_ref1: T,
    pub discharge: DischargeModel,
    /// Relative time resolution of the detector. Crossings closer than
    /// `tie_tolerance * t_max` are simultaneous.
    pub tie_tolerance: T,
}

impl<T: Scalar> RaceConfig<T> {
    pub fn new(k: usize, array: &ArrayConfig<T>) -> Result<Self> {
        ensure!(k >= 1, Parameter, "k must be >= 1");
        let i_dyn = T::of(1e-6);
        Ok(Self {
            k,
            v_half: array.device.vdd / T::of(2.0),
            i_dyn,
            i_ref1: T::of_usize(k + 1) * i_dyn,
            discharge: DischargeModel::ConstantCurrent,
            tie_tolerance: T::resolution(),
        })
    }

    /// Retarget the selection count by reprogramming the reference device.
    pub fn configure_k(&self, k: usize, log: &mut EventLog<T>) -> Result<Self> {
        ensure!(k >= 1, Parameter, "k must be >= 1");
        log.push(Event::FdynProgram);
        Ok(Self {
            k,
            i_ref1: T::of_usize(k + 1) * self.i_dyn,
            ..self.clone()
        })
    }

    /// Number of surviving lines at which the comparator fires: the
    /// largest `s` with `s * i_dyn < i_ref1`.
    pub fn survivor_target(&self) -> usize {
        let ratio = (self.i_ref1 / self.i_dyn).to_f64().unwrap_or(0.0);
        let mut s = ratio.ceil().max(1.0) as usize - 1;
        while s > 0 && T::of_usize(s) * self.i_dyn >= self.i_ref1 {
            s -= 1;
        }
        while T::of_usize(s + 1) * self.i_dyn < self.i_ref1 {
            s += 1;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceOutcome<T> {
    /// Selected rows, ascending.
    pub selected_rows: Vec<usize>,
    pub freeze_time: T,
    /// Per-row time to reach `v_half` (`None` for unoccupied rows).
    pub discharge_times: Vec<Option<T>>,
    /// Pairs of rows that crossed simultaneously at the freeze instant and
    /// were separated by the lowest-index rule.
    pub tie_events: Vec<(usize, usize)>,
}

fn time_for_current<T: Scalar>(
    current: T,
    array: &ArrayConfig<T>,
    race: &RaceConfig<T>,
) -> Result<T> {
    if current <= T::zero() {
        return Err(SimError::Numeric(format!(
            "non-positive sense current {current}"
        )));
    }
    let vdd = array.device.vdd;
    Ok(match race.discharge {
        DischargeModel::ConstantCurrent => array.c_sl * (vdd - race.v_half) / current,
        DischargeModel::Rc => array.c_sl * vdd / current * (vdd / race.v_half).ln(),
    })
}

fn voltage_at<T: Scalar>(current: T, t: T, array: &ArrayConfig<T>, race: &RaceConfig<T>) -> T {
    let vdd = array.device.vdd;
    match race.discharge {
        DischargeModel::ConstantCurrent => vdd - current * t / array.c_sl,
        DischargeModel::Rc => vdd * (-(current * t) / (array.c_sl * vdd)).exp(),
    }
}

/// Time for an occupied row's sense line to fall from the supply to `v_half`.
pub fn discharge_time<T: Scalar>(
    array: &CamCimArray<T>,
    row: usize,
    drive: &QueryDrive<T>,
    race: &RaceConfig<T>,
) -> Result<T> {
    let current = array.row_current(row, drive)?;
    time_for_current(current, array.config(), race)
}

/// Upper bound on the freeze time: the slowest possible line, i.e. the
/// current at the maximum score. Depends on `d` and the device law only.
pub fn race_window_bound<T: Scalar>(array: &ArrayConfig<T>, race: &RaceConfig<T>) -> Result<T> {
    let law = array.current_law();
    let slowest = law.current(T::of_i64(array.score_bound()));
    time_for_current(slowest, array, race)
}

/// Run the race over all occupied rows.
///
/// Records the frozen sense-line voltage of each occupied row for the
/// accumulation step: eliminated lines hold `v_half`, survivors hold their
/// voltage at the freeze instant.
pub fn run_race<T: Scalar>(
    array: &mut CamCimArray<T>,
    drive: &QueryDrive<T>,
    race: &RaceConfig<T>,
) -> Result<RaceOutcome<T>> {
    let occupied: Vec<usize> = array.occupied_rows().collect();
    let n = occupied.len();
    ensure!(race.k >= 1, Parameter, "k must be >= 1");
    ensure!(
        race.k <= n,
        Parameter,
        "k = {} exceeds {} occupied rows",
        race.k,
        n
    );

    let currents = array.row_currents(drive)?;
    let mut discharge_times = vec![None; array.n_rows()];
    let mut timed = Vec::with_capacity(n);
    for &r in &occupied {
        let t = time_for_current(currents[r].expect("occupied"), array.config(), race)?;
        discharge_times[r] = Some(t);
        timed.push((r, t));
    }

    let target = race.survivor_target().min(n);
    let t_max = timed.iter().map(|x| x.1).fold(T::zero(), T::max);
    let groups = tie_groups_ascending(&timed, race.tie_tolerance * t_max);

    let mut survivors = n;
    let mut freeze_time = T::zero();
    let mut selected: Vec<usize> = Vec::with_capacity(target);
    let mut tie_events = Vec::new();

    if T::of_usize(n) * race.i_dyn < race.i_ref1 {
        // Detector fires before any line crosses.
        selected.extend(&occupied);
    } else {
        let mut boundary = groups.len();
        for (gi, group) in groups.iter().enumerate() {
            survivors -= group.len();
            if T::of_usize(survivors) * race.i_dyn < race.i_ref1 {
                freeze_time = group.iter().map(|x| x.1).fold(group[0].1, T::min);
                boundary = gi;
                break;
            }
        }
        for group in groups.iter().skip(boundary + 1) {
            selected.extend(group.iter().map(|x| x.0));
        }
        if boundary < groups.len() && selected.len() < target {
            let group = &groups[boundary];
            let need = target - selected.len();
            selected.extend(group.iter().take(need).map(|x| x.0));
            for &(loser, _) in group.iter().skip(need) {
                tie_events.push((group[need - 1].0, loser));
            }
        }
    }
    selected.sort_unstable();

    let cfg = array.config().clone();
    let is_selected = {
        let mut mask = vec![false; array.n_rows()];
        selected.iter().for_each(|&r| mask[r] = true);
        mask
    };
    for &r in &occupied {
        let v = if is_selected[r] {
            voltage_at(currents[r].expect("occupied"), freeze_time, &cfg, race)
        } else {
            race.v_half
        };
        array.set_residual(r, Some(v));
    }

    let log = array.log_mut();
    log.push(Event::Precharge { lines: n });
    log.push(Event::DetectorSwitch);
    log.push(Event::RaceFreeze { freeze_time });

    Ok(RaceOutcome {
        selected_rows: selected,
        freeze_time,
        discharge_times,
        tie_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{encode_query, level_dot, SignedLevel};

    fn lv(v: &[i32]) -> Vec<SignedLevel> {
        SignedLevel::from_slice(v, 2).unwrap()
    }

    #[test]
    fn configure_k_sets_reference() {
        let cfg = ArrayConfig::<f64>::new(4, 4);
        let mut log = EventLog::new();
        let r = RaceConfig::new(1, &cfg).unwrap();
        let r3 = r.configure_k(3, &mut log).unwrap();
        assert_eq!(r3.i_ref1, 4.0 * r3.i_dyn);
        assert_eq!(r.configure_k(1, &mut log).unwrap().i_ref1, 2.0 * r.i_dyn);
        assert_eq!(r3.configure_k(3, &mut log).unwrap(), r3);
        assert_eq!(log.len(), 3);
        assert_eq!(r3.survivor_target(), 3);
    }

    #[test]
    fn higher_score_discharges_slower() {
        let cfg = ArrayConfig::<f64>::new(4, 3);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        a.write_key(0, &lv(&[2, 2, 0, 1]), 0).unwrap();
        a.write_key(1, &lv(&[-1, 0, 0, 1]), 1).unwrap();
        a.write_key(2, &lv(&[2, 2, 0, 1]), 2).unwrap();
        let d = encode_query(&lv(&[1, 2, 0, 1]), &cfg).unwrap();
        let race = RaceConfig::new(1, &cfg).unwrap();
        let t0 = discharge_time(&a, 0, &d, &race).unwrap();
        let t1 = discharge_time(&a, 1, &d, &race).unwrap();
        let t2 = discharge_time(&a, 2, &d, &race).unwrap();
        assert!(t0 > t1);
        assert_eq!(t0, t2);
    }

    #[test]
    fn extreme_time_ratio_matches_closed_form() {
        let cfg = ArrayConfig::<f64>::with_radii(4, 2, 1, 1);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        a.write_key(0, &lv(&[1, 1, 1, 1]), 0).unwrap();
        a.write_key(1, &lv(&[-1, -1, -1, -1]), 1).unwrap();
        let d = encode_query(&lv(&[1, 1, 1, 1]), &cfg).unwrap();
        let race = RaceConfig::new(1, &cfg).unwrap();
        let hi = discharge_time(&a, 0, &d, &race).unwrap();
        let lo = discharge_time(&a, 1, &d, &race).unwrap();
        let law = cfg.current_law();
        let expected = (law.i_base + 4.0 * law.alpha) / (law.i_base - 4.0 * law.alpha);
        assert!((hi / lo - expected).abs() < 1e-12);
    }

    #[test]
    fn top3_of_9_fixture() {
        // Nine keys spanning scores -4..=+4 against an all-ones query.
        let cfg = ArrayConfig::<f64>::with_radii(4, 9, 1, 1);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        let keys: [[i32; 4]; 9] = [
            [0, 0, 0, 0],
            [1, 1, 1, 1],
            [-1, -1, -1, -1],
            [1, 0, 0, 0],
            [1, 1, 1, 0],
            [-1, 0, 0, 0],
            [1, 1, 0, 0],
            [-1, -1, 0, 0],
            [-1, -1, -1, 0],
        ];
        for (i, k) in keys.iter().enumerate() {
            a.write_key(i, &SignedLevel::from_slice(k, 1).unwrap(), i as u64)
                .unwrap();
        }
        let d = encode_query(&SignedLevel::from_slice(&[1, 1, 1, 1], 1).unwrap(), &cfg).unwrap();
        let race = RaceConfig::new(3, &cfg).unwrap();
        let out = run_race(&mut a, &d, &race).unwrap();
        assert_eq!(out.selected_rows, vec![1, 4, 6]);
        assert!(out.tie_events.is_empty());
        let min_sel = out
            .selected_rows
            .iter()
            .map(|&r| out.discharge_times[r].unwrap())
            .fold(f64::MAX, f64::min);
        let max_un = (0..9)
            .filter(|r| !out.selected_rows.contains(r))
            .map(|r| out.discharge_times[r].unwrap())
            .fold(0.0, f64::max);
        assert!(max_un <= min_sel);
        assert_eq!(out.freeze_time, max_un);
    }

    #[test]
    fn selecting_all_freezes_at_zero() {
        let cfg = ArrayConfig::<f64>::new(2, 3);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        for i in 0..3 {
            a.write_key(i, &lv(&[i as i32 - 1, 1]), i as u64).unwrap();
        }
        let d = encode_query(&lv(&[1, 1]), &cfg).unwrap();
        let out = run_race(&mut a, &d, &RaceConfig::new(3, &cfg).unwrap()).unwrap();
        assert_eq!(out.freeze_time, 0.0);
        assert_eq!(out.selected_rows, vec![0, 1, 2]);
        for r in a.rows() {
            assert_eq!(r.residual, Some(1.0));
        }
    }

    #[test]
    fn ties_resolved_by_lowest_index() {
        let cfg = ArrayConfig::<f64>::new(3, 4);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        // Equal scores, different keys.
        a.write_key(0, &lv(&[-2, 0, 0]), 0).unwrap();
        a.write_key(1, &lv(&[1, 1, 0]), 1).unwrap();
        a.write_key(2, &lv(&[0, 2, 0]), 2).unwrap();
        a.write_key(3, &lv(&[2, 2, 0]), 3).unwrap();
        let q = lv(&[1, 1, 2]);
        for r in 1..3 {
            assert_eq!(level_dot(&a.decode_key(r).unwrap(), &q), 2);
        }
        let d = encode_query(&q, &cfg).unwrap();
        let out = run_race(&mut a, &d, &RaceConfig::new(2, &cfg).unwrap()).unwrap();
        assert_eq!(out.selected_rows, vec![1, 3]);
        assert_eq!(out.tie_events, vec![(1, 2)]);
    }

    #[test]
    fn too_few_rows_is_parameter_error() {
        let cfg = ArrayConfig::<f64>::new(1, 3);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        a.write_key(0, &lv(&[1]), 0).unwrap();
        let d = encode_query(&lv(&[1]), &cfg).unwrap();
        assert!(matches!(
            run_race(&mut a, &d, &RaceConfig::new(2, &cfg).unwrap()),
            Err(SimError::Parameter(_))
        ));
    }

    #[test]
    fn rc_mode_preserves_selection() {
        let cfg = ArrayConfig::<f64>::new(4, 5);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        for i in 0..5 {
            a.write_key(i, &lv(&[i as i32 - 2, 1, 0, -1]), i as u64)
                .unwrap();
        }
        let d = encode_query(&lv(&[2, 1, 1, 0]), &cfg).unwrap();
        let mut race = RaceConfig::new(2, &cfg).unwrap();
        let lin = run_race(&mut a, &d, &race).unwrap();
        race.discharge = DischargeModel::Rc;
        let rc = run_race(&mut a, &d, &race).unwrap();
        assert_eq!(lin.selected_rows, rc.selected_rows);
    }

    #[test]
    fn race_logs_single_precharge() {
        let cfg = ArrayConfig::<f64>::new(1, 2);
        let mut a = CamCimArray::new(cfg.clone(), 0).unwrap();
        a.write_key(0, &lv(&[1]), 0).unwrap();
        a.write_key(1, &lv(&[-1]), 1).unwrap();
        let n = a.log().len();
        let d = encode_query(&lv(&[1]), &cfg).unwrap();
        run_race(&mut a, &d, &RaceConfig::new(1, &cfg).unwrap()).unwrap();
        let pre = a.log().events()[n..]
            .iter()
            .filter(|e| matches!(e, Event::Precharge { .. }))
            .count();
        assert_eq!(pre, 1);
    }
}
