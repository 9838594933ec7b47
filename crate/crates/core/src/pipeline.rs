//! End-to-end hardware decode loop: race, exact scoring, accumulation and
//! eviction on one array, in the same step order as the golden model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::{encode_query, AccInit, ArrayConfig, CamCimArray, SignedLevel};
use crate::cam::{run_race, RaceConfig};
use crate::charge::{
    accumulate, evict_and_overwrite, find_eviction_candidate, lambda, ChargeConfig,
};
use crate::error::{ensure, Result, SimError};
use crate::events::{Event, EventLog};
use crate::mac::{exact_scores, AdcConfig, MacResult};
use crate::pruning::{
    prefill_prune, run_generation, AccumulationMode, AttentionTrace, GenerationReport,
    KvCacheState, PruneConfig, ResidualProxy,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig<T> {
    pub array: ArrayConfig<T>,
    pub race: RaceConfig<T>,
    pub charge: ChargeConfig<T>,
    pub adc: AdcConfig<T>,
    pub n_adcs: usize,
    pub prune: PruneConfig<T>,
}

impl<T: Scalar> PipelineConfig<T> {
    /// Consistent defaults: `h_heavy + m_reserved` rows of width `d`, a
    /// 10-bit full-range ADC bank and shared retention factor.
    pub fn new(
        d: usize,
        h_heavy: usize,
        m_reserved: usize,
        k_top: usize,
        n_adcs: usize,
    ) -> Result<Self> {
        let array = ArrayConfig::new(d, h_heavy + m_reserved);
        let race = RaceConfig::new(k_top, &array)?;
        Ok(Self {
            charge: ChargeConfig::new(&array),
            adc: AdcConfig::calibrated(&array, 10),
            n_adcs,
            prune: PruneConfig::new(h_heavy, m_reserved, k_top, &array),
            race,
            array,
        })
    }

    /// Rejects settings under which the array cannot track the golden model.
    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.charge.validate(&self.array)?;
        self.adc.validate()?;
        self.prune.validate()?;
        ensure!(self.n_adcs >= 1, Parameter, "need at least one ADC");
        ensure!(
            self.prune.n_slots() == self.array.n_rows,
            Parameter,
            "cache has {} slots but the array has {} rows",
            self.prune.n_slots(),
            self.array.n_rows
        );
        ensure!(
            self.prune.accumulation == AccumulationMode::Ema,
            Parameter,
            "hardware accumulates in EMA mode only"
        );
        ensure!(
            !self.prune.softmax_normalized,
            Parameter,
            "hardware does not normalize scores"
        );
        let lam = lambda(&self.array);
        ensure!(
            (self.prune.lambda - lam).abs() <= lam * T::of(1e-12),
            Parameter,
            "golden lambda {} differs from the capacitor ratio {}",
            self.prune.lambda,
            lam
        );
        let proxy = ResidualProxy::from_array(&self.array);
        let close = |a: T, b: T| (a - b).abs() <= b.abs() * T::of(1e-12);
        ensure!(
            close(self.prune.proxy.beta, proxy.beta)
                && close(self.prune.proxy.vdd, proxy.vdd)
                && close(self.prune.proxy.v_half, self.race.v_half),
            Parameter,
            "golden residual law differs from the array"
        );
        ensure!(
            matches!(self.array.acc_init, AccInit::Median),
            Parameter,
            "golden model initializes new accumulators to the median"
        );
        Ok(())
    }
}

/// Convert integral scalars to levels.
pub fn to_levels<T: Scalar>(v: &[T], radius: u32) -> Result<Vec<SignedLevel>> {
    v.iter()
        .map(|&x| {
            let r = x.round();
            ensure!(r == x, Parameter, "value {x} is not an integer level");
            SignedLevel::new(r.to_i32().unwrap_or(i32::MAX), radius)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwStepRecord<T> {
    pub step: usize,
    pub selected: Vec<usize>,
    pub selected_tokens: Vec<u64>,
    pub evicted: Option<usize>,
    pub evicted_token: Option<u64>,
    pub eviction_tie: bool,
    pub written_slot: usize,
    pub new_token: u64,
    pub freeze_time: T,
    pub tie_events: Vec<(usize, usize)>,
    pub mac: Vec<MacResult<T>>,
    /// Accumulator voltages after charge sharing; filled when tracing.
    pub acc_snapshot: Option<Vec<Option<T>>>,
}

pub struct HardwarePipeline<T> {
    cfg: PipelineConfig<T>,
    array: CamCimArray<T>,
    race: RaceConfig<T>,
    prompt_len: usize,
    generated: usize,
    trace_acc: bool,
}

impl<T: Scalar> HardwarePipeline<T> {
    /// Load the prefill survivors into a fresh array.
    pub fn from_prefill(
        cfg: PipelineConfig<T>,
        state: &KvCacheState<T>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        ensure!(
            state.n_slots() == cfg.array.n_rows,
            Parameter,
            "cache and array sizes differ"
        );
        ensure!(
            state.d == cfg.array.d,
            Parameter,
            "cache and array widths differ"
        );
        let mut array = CamCimArray::new(cfg.array.clone(), seed)?;
        for (slot, s) in state.occupied() {
            array.write_key(slot, &to_levels(&s.key, cfg.array.key_radius)?, s.token_id)?;
            array.set_acc_voltage(slot, s.acc)?;
        }
        let race = cfg.race.configure_k(cfg.race.k, array.log_mut())?;
        Ok(Self {
            race,
            array,
            prompt_len: state.prompt_len,
            generated: state.generated_count,
            trace_acc: false,
            cfg,
        })
    }

    pub fn with_acc_tracing(mut self, on: bool) -> Self {
        self.trace_acc = on;
        self
    }

    pub fn array(&self) -> &CamCimArray<T> {
        &self.array
    }

    pub fn log(&self) -> &EventLog<T> {
        self.array.log()
    }

    pub fn step(&mut self, q: &[T], new_key: &[T]) -> Result<HwStepRecord<T>> {
        let cfg = &self.cfg;
        let key = to_levels(new_key, cfg.array.key_radius)?;
        let drive = encode_query(&to_levels(q, cfg.array.query_radius)?, &cfg.array)?;
        self.array.log_mut().push(Event::StepStart);

        let k = cfg.prune.k_top.min(self.array.n_occupied());
        if k != self.race.k {
            self.race = self.race.configure_k(k, self.array.log_mut())?;
        }
        let outcome = run_race(&mut self.array, &drive, &self.race)?;
        let selected_tokens = outcome
            .selected_rows
            .iter()
            .map(|&r| self.array.rows()[r].token_id.expect("occupied"))
            .collect();
        let mac = exact_scores(
            &mut self.array,
            &drive,
            &outcome.selected_rows,
            &cfg.adc,
            cfg.n_adcs,
        )?;
        accumulate(&mut self.array)?;
        let acc_snapshot = self.trace_acc.then(|| {
            self.array
                .rows()
                .iter()
                .map(|r| r.occupied.then_some(r.acc_voltage))
                .collect()
        });

        let new_token = (self.prompt_len + self.generated) as u64;
        let (written_slot, evicted, evicted_token, eviction_tie) =
            if self.generated >= cfg.prune.m_reserved {
                let choice = find_eviction_candidate(&mut self.array, &cfg.charge, Some(&drive))?;
                let old = self.array.rows()[choice.row].token_id;
                evict_and_overwrite(&mut self.array, choice.row, &key, new_token)?;
                (choice.row, Some(choice.row), old, choice.tie)
            } else {
                let row = self
                    .array
                    .free_row()
                    .ok_or_else(|| SimError::State("no free reserved row".into()))?;
                self.array.write_key(row, &key, new_token)?;
                (row, None, None, false)
            };
        let step = self.generated;
        self.generated += 1;
        Ok(HwStepRecord {
            step,
            selected: outcome.selected_rows,
            selected_tokens,
            evicted,
            evicted_token,
            eviction_tie,
            written_slot,
            new_token,
            freeze_time: outcome.freeze_time,
            tie_events: outcome.tie_events,
            mac,
            acc_snapshot,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EquivalenceStats {
    pub steps: usize,
    pub selected_matches: usize,
    pub eviction_matches: usize,
    pub first_mismatch: Option<usize>,
}

impl EquivalenceStats {
    pub fn all_match(&self) -> bool {
        self.first_mismatch.is_none()
    }

    pub fn merge(&mut self, other: &EquivalenceStats) {
        if self.first_mismatch.is_none() {
            self.first_mismatch = other.first_mismatch.map(|s| s + self.steps);
        }
        self.steps += other.steps;
        self.selected_matches += other.selected_matches;
        self.eviction_matches += other.eviction_matches;
    }
}

/// Step-by-step agreement of selected slots and evicted slots.
pub fn compare_steps<T: Scalar>(
    golden: &GenerationReport<T>,
    hw: &[HwStepRecord<T>],
) -> EquivalenceStats {
    let mut stats = EquivalenceStats {
        steps: golden.steps.len().max(hw.len()),
        ..Default::default()
    };
    for (i, (g, h)) in golden.steps.iter().zip(hw).enumerate() {
        let sel = g.selected == h.selected;
        let ev = g.evicted == h.evicted;
        stats.selected_matches += sel as usize;
        stats.eviction_matches += ev as usize;
        if (!sel || !ev) && stats.first_mismatch.is_none() {
            stats.first_mismatch = Some(i);
        }
    }
    if golden.steps.len() != hw.len() && stats.first_mismatch.is_none() {
        stats.first_mismatch = Some(golden.steps.len().min(hw.len()));
    }
    stats
}

pub struct PipelineRun<T> {
    pub golden: GenerationReport<T>,
    pub hardware: Vec<HwStepRecord<T>>,
    pub log: EventLog<T>,
    pub stats: EquivalenceStats,
}

/// Run the golden model and the hardware pipeline on the same quantized
/// trace. `golden_cfg` overrides the golden settings (negative controls).
pub fn run_pipeline<T: Scalar>(
    trace: &AttentionTrace<T>,
    cfg: &PipelineConfig<T>,
    golden_cfg: Option<&PruneConfig<T>>,
    seed: u64,
    trace_acc: bool,
) -> Result<PipelineRun<T>> {
    let gcfg = golden_cfg.unwrap_or(&cfg.prune);
    let golden = run_generation(trace, gcfg)?;
    let state = prefill_prune(trace, &cfg.prune)?;
    let mut hw =
        HardwarePipeline::from_prefill(cfg.clone(), &state, seed)?.with_acc_tracing(trace_acc);
    let mut records = Vec::with_capacity(trace.steps());
    for (q, k) in trace.decode_queries.iter().zip(&trace.decode_keys) {
        records.push(hw.step(q, k)?);
    }
    let stats = compare_steps(&golden, &records);
    let log = hw.array.take_log();
    Ok(PipelineRun {
        golden,
        hardware: records,
        log,
        stats,
    })
}

/// Outcome of one single-step trial on a device-variation array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationTrial {
    pub overlap: f64,
    pub eviction_agrees: bool,
    pub mean_abs_decode_error: f64,
    pub max_abs_decode_error: i64,
    pub clamps: usize,
}

/// One decode step on a full random array at threshold spread `sigma`,
/// compared against the exact computation.
///
/// Keys, query and accumulator state depend only on `seed`, and the device
/// offsets are `sigma` times a seed-determined normal draw, so trials with
/// the same seed differ only in the size of the spread.
pub fn variation_trial<T: Scalar>(
    cfg: &PipelineConfig<T>,
    sigma: T,
    seed: u64,
) -> Result<VariationTrial> {
    let acfg = cfg.array.clone().with_sigma(sigma);
    let n = acfg.n_rows;
    let d = acfg.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let kr = acfg.key_radius as i32;
    let qr = acfg.query_radius as i32;
    let keys: Vec<Vec<i32>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-kr..=kr)).collect())
        .collect();
    let q: Vec<i32> = (0..d).map(|_| rng.random_range(-qr..=qr)).collect();
    let vdd = acfg.device.vdd;
    let v_half = cfg.race.v_half;
    let accs: Vec<T> = (0..n)
        .map(|_| v_half + (vdd - v_half) * T::of(rng.random::<f64>()))
        .collect();

    let mut array = CamCimArray::new(acfg.clone(), seed)?;
    for (r, key) in keys.iter().enumerate() {
        array.write_key(r, &SignedLevel::from_slice(key, acfg.key_radius)?, r as u64)?;
        array.set_acc_voltage(r, accs[r])?;
    }
    let k = cfg.prune.k_top.min(n);
    let race = RaceConfig {
        k,
        i_ref1: T::of_usize(k + 1) * cfg.race.i_dyn,
        ..cfg.race.clone()
    };
    let drive = encode_query(&SignedLevel::from_slice(&q, acfg.query_radius)?, &acfg)?;
    let outcome = run_race(&mut array, &drive, &race)?;
    let mac = exact_scores(
        &mut array,
        &drive,
        &outcome.selected_rows,
        &cfg.adc,
        cfg.n_adcs,
    )?;
    accumulate(&mut array)?;
    let victim = find_eviction_candidate(&mut array, &cfg.charge, Some(&drive))?.row;

    // Exact reference.
    let scores: Vec<T> = keys
        .iter()
        .map(|k| T::of_i64(k.iter().zip(&q).map(|(a, b)| (*a * *b) as i64).sum()))
        .collect();
    let items: Vec<(usize, T)> = scores.iter().copied().enumerate().collect();
    let golden_sel = cfg.prune.tie_rule.top_k(&items, k);
    let mut mask = vec![false; n];
    golden_sel.iter().for_each(|&r| mask[r] = true);
    let proxy = ResidualProxy::from_array(&cfg.array);
    let residual = proxy.residuals(&scores, &mask, k)?;
    let lam = cfg.prune.lambda;
    let new_acc: Vec<(usize, T)> = accs
        .iter()
        .zip(&residual)
        .enumerate()
        .map(|(i, (&a, &r))| (i, lam * a + (T::one() - lam) * r))
        .collect();
    let (golden_victim, _) = cfg
        .prune
        .tie_rule
        .argmin(&new_acc, cfg.charge.tie_tolerance)
        .expect("non-empty");

    let hits = outcome.selected_rows.iter().filter(|r| mask[**r]).count();
    let errors: Vec<i64> = mac
        .iter()
        .map(|m| (m.decoded_score - m.true_score).abs())
        .collect();
    Ok(VariationTrial {
        overlap: hits as f64 / k as f64,
        eviction_agrees: victim == golden_victim,
        mean_abs_decode_error: errors.iter().sum::<i64>() as f64 / errors.len() as f64,
        max_abs_decode_error: errors.iter().copied().max().unwrap_or(0),
        clamps: mac.iter().filter(|m| m.clamped).count(),
    })
}
