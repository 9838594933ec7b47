//! Area, energy and delay accounting.
//!
//! Energies and delays are attached to logged events at tally time. Phases
//! within a step are assumed not to overlap, so the delay of a workload is
//! the sum of its event delays; ADC parallelism enters through the number
//! of logged conversion rounds.
//!
//! Workload logs for the sweep conditions and the baseline designs are
//! generated analytically from the workload shape.

use serde::{Deserialize, Serialize};

use crate::array::ArrayConfig;
use crate::error::{ensure, Result, SimError};
use crate::events::{Event, EventLog, Phase};
use crate::mac::{conversion_rounds, AdcConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams<T> {
    /// Energy to precharge one sense line.
    pub e_precharge: T,
    /// Energy to program one cell.
    pub e_write_cell: T,
    /// Energy per exact conversion.
    pub e_adc: T,
    /// Energy per low-precision conversion (baselines).
    pub e_adc_approx: T,
    /// Energy per row of charge sharing.
    pub e_share: T,
    /// Energy per comparator decision.
    pub e_comparator: T,
    pub t_precharge: T,
    pub t_comparator: T,
    pub t_share: T,
    pub t_evict: T,
    pub t_adc: T,
    pub t_adc_approx: T,
    pub t_write: T,
    /// Stored key precision.
    pub key_bits: u32,
    pub bits_per_cell: u32,
    /// Transistors per storage cell.
    pub devices_per_cell: u64,
    /// Per-row periphery: precharge and sense multiplexer.
    pub periphery_base: u64,
    /// Extra per-row devices for the top-k detector.
    pub periphery_dynamic: u64,
    /// Extra per-row devices for charge sharing and the eviction inverter.
    pub periphery_static: u64,
    pub devices_per_adc: u64,
    pub n_adcs: usize,
}

impl<T: Scalar> CostParams<T> {
    /// Default calibration for an array of `array`'s geometry.
    pub fn for_array(array: &ArrayConfig<T>) -> Self {
        let vdd = array.device.vdd;
        Self {
            e_precharge: array.c_sl * vdd * vdd,
            e_write_cell: T::of(1e-14),
            e_adc: T::of(1e-12),
            e_adc_approx: T::of(1.5e-13),
            e_share: T::of(2e-14),
            e_comparator: T::of(1e-14),
            t_precharge: T::of(1e-9),
            t_comparator: T::of(1e-10),
            t_share: T::of(5e-10),
            t_evict: T::of(1e-10),
            t_adc: T::of(1e-8),
            t_adc_approx: T::of(2e-9),
            t_write: T::of(1e-8),
            key_bits: 3,
            bits_per_cell: 1,
            devices_per_cell: 2,
            periphery_base: 4,
            periphery_dynamic: 2,
            periphery_static: 3,
            devices_per_adc: 300,
            n_adcs: 64,
        }
    }

    pub fn with_bits_per_cell(mut self, bits: u32) -> Self {
        self.bits_per_cell = bits;
        self
    }

    pub fn cells_per_dim(&self) -> u64 {
        self.key_bits.div_ceil(self.bits_per_cell.max(1)) as u64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.e_precharge,
            self.e_write_cell,
            self.e_adc,
            self.e_adc_approx,
            self.e_share,
            self.e_comparator,
            self.t_precharge,
            self.t_comparator,
            self.t_share,
            self.t_evict,
            self.t_adc,
            self.t_adc_approx,
            self.t_write,
        ];
        ensure!(
            positive.iter().all(|&x| x > T::zero() && x.is_finite()),
            Parameter,
            "cost constants must be > 0"
        );
        ensure!(
            self.key_bits >= 1 && self.bits_per_cell >= 1,
            Parameter,
            "bit widths must be >= 1"
        );
        ensure!(
            self.devices_per_cell >= 1 && self.n_adcs >= 1,
            Parameter,
            "device counts must be >= 1"
        );
        Ok(())
    }

    /// Energy and delay of one event.
    pub fn price(&self, e: &Event<T>) -> (T, T) {
        let n = |x: usize| T::of_usize(x);
        match *e {
            Event::StepStart => (T::zero(), T::zero()),
            Event::Precharge { lines } => (n(lines) * self.e_precharge, self.t_precharge),
            Event::RaceFreeze { freeze_time } => (T::zero(), freeze_time),
            Event::DetectorSwitch => (self.e_comparator, self.t_comparator),
            Event::EvictionSearch => (self.e_comparator, self.t_evict),
            Event::ChargeShare { rows } => (n(rows) * self.e_share, self.t_share),
            Event::Sense { energy, .. } => (energy, T::zero()),
            Event::AdcRound { conversions } => (n(conversions) * self.e_adc, self.t_adc),
            Event::Write { dims } => (
                n(dims) * T::of(self.cells_per_dim() as f64) * self.e_write_cell,
                self.t_write,
            ),
            Event::FdynProgram => (self.e_write_cell, self.t_write),
            Event::ApproxRound { conversions } => {
                (n(conversions) * self.e_adc_approx, self.t_adc_approx)
            }
            Event::Sort { n: m } => {
                let ops = sort_ops(m);
                (
                    T::of(ops) * self.e_comparator,
                    T::of(ops) * self.t_comparator,
                )
            }
            Event::Threshold { count } => (n(count) * self.e_comparator, self.t_comparator),
        }
    }
}

/// Comparator operations of an `n log2 n` sort.
pub fn sort_ops(n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        n as f64 * (n as f64).log2()
    }
}

/// Which pruning hardware a design carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub dynamic: bool,
    pub static_evict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AreaBreakdown {
    pub cells: u64,
    pub periphery: u64,
    pub adc: u64,
}

impl AreaBreakdown {
    pub fn total(&self) -> u64 {
        self.cells + self.periphery + self.adc
    }
}

/// Device count of an array of `rows` keys of width `d`.
pub fn area<T: Scalar>(
    rows: usize,
    d: usize,
    features: Features,
    params: &CostParams<T>,
) -> AreaBreakdown {
    let per_row_periphery = params.periphery_base
        + if features.dynamic {
            params.periphery_dynamic
        } else {
            0
        }
        + if features.static_evict {
            params.periphery_static
        } else {
            0
        };
    AreaBreakdown {
        cells: rows as u64 * d as u64 * params.cells_per_dim() * params.devices_per_cell,
        periphery: rows as u64 * per_row_periphery,
        adc: params.n_adcs as u64 * params.devices_per_adc,
    }
}

/// Device count of a full-feature array.
pub fn area_of_array<T: Scalar>(
    array: &ArrayConfig<T>,
    bits_per_cell: u32,
    params: &CostParams<T>,
) -> AreaBreakdown {
    let p = params.clone().with_bits_per_cell(bits_per_cell);
    area(
        array.n_rows,
        array.d,
        Features {
            dynamic: true,
            static_evict: true,
        },
        &p,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport<T> {
    pub area: AreaBreakdown,
    pub energy_total: T,
    pub energy_by_phase: [T; 7],
    pub delay_total: T,
    pub delay_by_phase: [T; 7],
    pub aedp: T,
    pub steps: usize,
    pub events: usize,
}

impl<T: Scalar> CostReport<T> {
    pub fn area_devices(&self) -> u64 {
        self.area.total()
    }

    pub fn energy(&self, phase: Phase) -> T {
        self.energy_by_phase[phase_index(phase)]
    }

    pub fn delay(&self, phase: Phase) -> T {
        self.delay_by_phase[phase_index(phase)]
    }
}

fn phase_index(p: Phase) -> usize {
    Phase::ALL.iter().position(|&q| q == p).expect("listed")
}

fn check_event<T: Scalar>(
    e: &Event<T>,
    params: &CostParams<T>,
    step_state: &mut (bool, bool),
) -> Result<()> {
    let bad = |msg: String| Err(SimError::Accounting(msg));
    match *e {
        Event::StepStart => *step_state = (false, false),
        Event::Precharge { lines } => {
            if lines == 0 {
                return bad("precharge of zero lines".into());
            }
            step_state.0 = true;
        }
        Event::RaceFreeze { freeze_time } => {
            if !step_state.0 {
                return bad("race freeze without a precharge".into());
            }
            if !(freeze_time >= T::zero() && freeze_time.is_finite()) {
                return bad(format!("invalid freeze time {freeze_time}"));
            }
            step_state.1 = true;
        }
        Event::ChargeShare { .. } if !step_state.1 => {
            return bad("charge sharing before the race froze".into())
        }
        Event::Sense { energy, .. } if !(energy >= T::zero() && energy.is_finite()) => {
            return bad(format!("invalid sensing energy {energy}"));
        }
        Event::AdcRound { conversions } | Event::ApproxRound { conversions }
            if conversions == 0 || conversions > params.n_adcs =>
        {
            return bad(format!(
                "{conversions} conversions in one round with {} ADCs",
                params.n_adcs
            ));
        }
        Event::Write { dims: 0 } => return bad("write of zero dims".into()),
        _ => {}
    }
    Ok(())
}

/// Price every event of `log`.
pub fn tally<T: Scalar>(
    log: &EventLog<T>,
    params: &CostParams<T>,
    area: AreaBreakdown,
) -> Result<CostReport<T>> {
    params.validate()?;
    let mut energy_by_phase = [T::zero(); 7];
    let mut delay_by_phase = [T::zero(); 7];
    let mut energy_total = T::zero();
    let mut delay_total = T::zero();
    let mut state = (false, false);
    let mut steps = 0;
    for e in log.events() {
        check_event(e, params, &mut state)?;
        if matches!(e, Event::StepStart) {
            steps += 1;
        }
        let (en, de) = params.price(e);
        energy_total = energy_total + en;
        delay_total = delay_total + de;
        if let Some(p) = e.phase() {
            let i = phase_index(p);
            energy_by_phase[i] = energy_by_phase[i] + en;
            delay_by_phase[i] = delay_by_phase[i] + de;
        }
    }
    let aedp = T::of(area.total() as f64) * energy_total * delay_total;
    Ok(CostReport {
        area,
        energy_total,
        energy_by_phase,
        delay_total,
        delay_by_phase,
        aedp,
        steps,
        events: log.len(),
    })
}

/// Shape of a generation workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub input_len: usize,
    pub output_len: usize,
    pub h_heavy: usize,
    pub m_reserved: usize,
    pub d: usize,
    /// Fraction of cached tokens skipped by dynamic selection.
    pub pruning_ratio: f64,
}

impl Workload {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.input_len >= 1 && self.d >= 1 && self.h_heavy >= 1,
            Parameter,
            "workload sizes must be >= 1"
        );
        ensure!(
            (0.0..1.0).contains(&self.pruning_ratio),
            Parameter,
            "pruning ratio must lie in [0, 1)"
        );
        Ok(())
    }

    /// Rows kept by static pruning.
    pub fn kept_rows(&self) -> usize {
        self.input_len.min(self.h_heavy) + self.m_reserved
    }

    /// Cache occupancy at decode step `t` under static pruning.
    pub fn static_occupancy(&self, t: usize) -> usize {
        self.input_len.min(self.h_heavy) + t.min(self.m_reserved)
    }

    pub fn k_top(&self) -> usize {
        k_for_pruning_ratio(self.kept_rows(), self.pruning_ratio)
    }
}

/// `max(1, round((1 - ratio) n))`.
pub fn k_for_pruning_ratio(n: usize, ratio: f64) -> usize {
    (((1.0 - ratio) * n as f64).round() as usize).clamp(1, n.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Dense,
    Static,
    StaticDynamic,
    StaticDynamicMultilevel,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Dense,
        Condition::Static,
        Condition::StaticDynamic,
        Condition::StaticDynamicMultilevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Dense => "dense",
            Condition::Static => "static",
            Condition::StaticDynamic => "static_dynamic",
            Condition::StaticDynamicMultilevel => "static_dynamic_multilevel",
        }
    }

    pub fn bits_per_cell(self, key_bits: u32) -> u32 {
        if self == Condition::StaticDynamicMultilevel {
            key_bits
        } else {
            1
        }
    }

    pub fn features(self) -> Features {
        match self {
            Condition::Dense => Features {
                dynamic: false,
                static_evict: false,
            },
            Condition::Static => Features {
                dynamic: false,
                static_evict: true,
            },
            _ => Features {
                dynamic: true,
                static_evict: true,
            },
        }
    }
}

/// Sensing energy of `rows` lines at the zero-score current.
fn nominal_sense<T: Scalar>(rows: usize, array: &ArrayConfig<T>, adc: &AdcConfig<T>) -> Event<T> {
    let i0 = array.current_law().i_base;
    Event::Sense {
        rows,
        energy: T::of_usize(rows) * i0 * array.device.v_read * adc.t_sense,
    }
}

fn push_adc<T: Scalar>(log: &mut EventLog<T>, rows: usize, n_adcs: usize, approx: bool) {
    let rounds = conversion_rounds(rows, n_adcs);
    for r in 0..rounds {
        let conversions = if r + 1 == rounds {
            rows - r * n_adcs
        } else {
            n_adcs
        };
        log.push(if approx {
            Event::ApproxRound { conversions }
        } else {
            Event::AdcRound { conversions }
        });
    }
}

/// Worst-case freeze time of the race on `array`.
pub fn race_window<T: Scalar>(array: &ArrayConfig<T>) -> T {
    let vdd = array.device.vdd;
    let slowest = array.current_law().current(T::of_i64(array.score_bound()));
    array.c_sl * (vdd - vdd / T::of(2.0)) / slowest
}

/// Per-step event log a condition incurs on `w` (prefill excluded).
pub fn condition_log<T: Scalar>(
    cond: Condition,
    w: &Workload,
    array: &ArrayConfig<T>,
    adc: &AdcConfig<T>,
    n_adcs: usize,
) -> EventLog<T> {
    let mut log = EventLog::new();
    let k_top = w.k_top();
    for t in 0..w.output_len {
        log.push(Event::StepStart);
        match cond {
            Condition::Dense => {
                let n = w.input_len + t;
                log.push(nominal_sense(n, array, adc));
                push_adc(&mut log, n, n_adcs, false);
            }
            Condition::Static | Condition::StaticDynamic | Condition::StaticDynamicMultilevel => {
                let n = w.static_occupancy(t);
                let scored = if cond == Condition::Static {
                    n
                } else {
                    k_top.min(n)
                };
                log.push(Event::Precharge { lines: n });
                log.push(Event::DetectorSwitch);
                log.push(Event::RaceFreeze {
                    freeze_time: race_window(array),
                });
                log.push(nominal_sense(scored, array, adc));
                push_adc(&mut log, scored, n_adcs, false);
                log.push(Event::ChargeShare { rows: n });
                if t >= w.m_reserved {
                    log.push(Event::EvictionSearch);
                }
            }
        }
        log.push(Event::Write { dims: w.d });
    }
    log
}

/// Area and cost of a condition on a workload.
pub fn evaluate_condition<T: Scalar>(
    cond: Condition,
    w: &Workload,
    array: &ArrayConfig<T>,
    adc: &AdcConfig<T>,
    params: &CostParams<T>,
) -> Result<CostReport<T>> {
    w.validate()?;
    let p = params
        .clone()
        .with_bits_per_cell(cond.bits_per_cell(params.key_bits));
    let rows = match cond {
        Condition::Dense => w.input_len + w.output_len,
        _ => w.kept_rows(),
    };
    let log = condition_log(cond, w, array, adc, p.n_adcs);
    tally(&log, &p, area(rows, w.d, cond.features(), &p))
}

/// Analytic cost laws of reference designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Fixed-pattern static pruning, every retained row converted.
    FixedPatternStatic,
    /// Approximate scores for the whole cache, an `n log n` sort, exact
    /// conversion of the top k.
    SortTopK,
    /// Approximate scores for the whole cache, threshold comparators, exact
    /// conversion of the survivors.
    ApproxNvm,
    /// This design's own law under the given condition.
    Own(Condition),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub name: String,
    pub kind: BaselineKind,
    /// Transistors per 1-bit storage cell.
    pub devices_per_cell: u64,
}

impl BaselineModel {
    pub fn fixed_pattern_static() -> Self {
        Self {
            name: "fixed_pattern_static".into(),
            kind: BaselineKind::FixedPatternStatic,
            devices_per_cell: 8,
        }
    }

    pub fn sort_top_k() -> Self {
        Self {
            name: "sort_top_k".into(),
            kind: BaselineKind::SortTopK,
            devices_per_cell: 8,
        }
    }

    pub fn approx_nvm() -> Self {
        Self {
            name: "approx_nvm".into(),
            kind: BaselineKind::ApproxNvm,
            devices_per_cell: 2,
        }
    }

    pub fn own(cond: Condition) -> Self {
        Self {
            name: format!("own_{}", cond.name()),
            kind: BaselineKind::Own(cond),
            devices_per_cell: 2,
        }
    }

    pub fn standard() -> Vec<Self> {
        vec![
            Self::fixed_pattern_static(),
            Self::sort_top_k(),
            Self::approx_nvm(),
        ]
    }

    /// Event log and area of the design on `w`.
    pub fn evaluate<T: Scalar>(
        &self,
        w: &Workload,
        array: &ArrayConfig<T>,
        adc: &AdcConfig<T>,
        params: &CostParams<T>,
    ) -> Result<CostReport<T>> {
        w.validate()?;
        let p = CostParams {
            devices_per_cell: self.devices_per_cell,
            ..params.clone().with_bits_per_cell(1)
        };
        let n_adcs = p.n_adcs;
        let mut log = EventLog::new();
        let rows = match self.kind {
            BaselineKind::Own(cond) => {
                let own = CostParams {
                    devices_per_cell: self.devices_per_cell,
                    ..params.clone()
                };
                return evaluate_condition(cond, w, array, adc, &own);
            }
            BaselineKind::FixedPatternStatic => {
                for t in 0..w.output_len {
                    let n = w.static_occupancy(t);
                    log.push(Event::StepStart);
                    log.push(nominal_sense(n, array, adc));
                    push_adc(&mut log, n, n_adcs, false);
                    log.push(Event::Write { dims: w.d });
                }
                w.kept_rows()
            }
            BaselineKind::SortTopK | BaselineKind::ApproxNvm => {
                for t in 0..w.output_len {
                    let n = w.input_len + t;
                    let k = k_for_pruning_ratio(n, w.pruning_ratio);
                    log.push(Event::StepStart);
                    push_adc(&mut log, n, n_adcs, true);
                    log.push(if self.kind == BaselineKind::SortTopK {
                        Event::Sort { n }
                    } else {
                        Event::Threshold { count: n }
                    });
                    log.push(nominal_sense(k, array, adc));
                    push_adc(&mut log, k, n_adcs, false);
                    log.push(Event::Write { dims: w.d });
                }
                w.input_len + w.output_len
            }
        };
        let features = Features {
            dynamic: self.kind != BaselineKind::FixedPatternStatic,
            static_evict: false,
        };
        tally(&log, &p, area(rows, w.d, features, &p))
    }
}

/// Baseline-over-ours ratios; above 1 means the baseline costs more.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub baseline: String,
    pub area: f64,
    pub energy: f64,
    pub delay: f64,
    pub aedp: f64,
}

/// A cost report tagged with the workload it was measured on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadReport<T> {
    pub workload: Workload,
    pub report: CostReport<T>,
}

pub fn compare<T: Scalar>(
    ours: &WorkloadReport<T>,
    baseline: &BaselineModel,
    workload: &Workload,
    array: &ArrayConfig<T>,
    adc: &AdcConfig<T>,
    params: &CostParams<T>,
) -> Result<RatioReport> {
    ensure!(
        ours.workload == *workload,
        Parameter,
        "report was measured on a different workload"
    );
    let b = baseline.evaluate(workload, array, adc, params)?;
    let r = &ours.report;
    let ratio = |x: T, y: T| -> f64 { (x / y).as_f64() };
    Ok(RatioReport {
        baseline: baseline.name.clone(),
        area: b.area_devices() as f64 / r.area_devices() as f64,
        energy: ratio(b.energy_total, r.energy_total),
        delay: ratio(b.delay_total, r.delay_total),
        aedp: ratio(b.aedp, r.aedp),
    })
}
