//! Experiment drivers. Each returns its rows in deterministic order plus
//! the list of invariant violations it observed.

use anyhow::{bail, Result};
use camcim_core::cost::{
    area_of_array, compare, evaluate_condition, tally, BaselineModel, Condition, CostReport,
    Workload, WorkloadReport,
};
use camcim_core::events::Phase;
use camcim_core::pipeline::{run_pipeline, variation_trial, HwStepRecord, PipelineRun};
use camcim_core::pruning::{
    quantize_trace, run_generation, synth_trace, AttentionTrace, PruneConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Rows of one experiment and the invariants it found broken.
#[derive(Debug, Clone)]
pub struct Outcome<R> {
    pub rows: Vec<R>,
    pub violations: Vec<String>,
}

fn quantized_trace(
    cfg: &ExperimentConfig,
    seed: u64,
    input_len: usize,
    steps: usize,
) -> AttentionTrace<f64> {
    let raw = synth_trace::<f64>(
        seed,
        input_len,
        steps,
        cfg.array.d,
        cfg.trace.heavy_fraction,
    );
    quantize_trace(
        &raw,
        cfg.array.key_radius,
        cfg.array.query_radius,
        cfg.trace.quant_scale,
    )
}

fn run_trial(
    cfg: &ExperimentConfig,
    seed: u64,
    input_len: usize,
    steps: usize,
    trace_acc: bool,
) -> Result<PipelineRun<f64>> {
    let pcfg = cfg.pipeline_config()?;
    let trace = quantized_trace(cfg, seed, input_len, steps);
    Ok(run_pipeline(&trace, &pcfg, None, seed, trace_acc)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceRow {
    pub seed: u64,
    pub steps: usize,
    pub selected_matches: usize,
    pub eviction_matches: usize,
    pub first_mismatch: Option<usize>,
    pub evictions: usize,
    pub race_ties: usize,
    pub eviction_ties: usize,
    pub adc_errors: usize,
    pub adc_clamps: usize,
    pub energy_j: f64,
    pub delay_s: f64,
}

fn hw_counts(hw: &[HwStepRecord<f64>]) -> (usize, usize, usize, usize, usize) {
    let evictions = hw.iter().filter(|h| h.evicted.is_some()).count();
    let race_ties = hw.iter().map(|h| h.tie_events.len()).sum();
    let eviction_ties = hw.iter().filter(|h| h.eviction_tie).count();
    let mac = hw.iter().flat_map(|h| h.mac.iter());
    let adc_errors = mac
        .clone()
        .filter(|m| m.decoded_score != m.true_score)
        .count();
    let adc_clamps = mac.filter(|m| m.clamped).count();
    (evictions, race_ties, eviction_ties, adc_errors, adc_clamps)
}

/// Hardware pipeline against the golden model on identical traces.
pub fn run_equivalence(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Outcome<EquivalenceRow>> {
    let pcfg = cfg.pipeline_config()?;
    if pcfg.array.device.sigma_vth != 0.0 {
        bail!("equivalence runs need sigma_vth = 0");
    }
    let params = cfg.cost_params(&pcfg.array);
    let area = area_of_array(&pcfg.array, 1, &params);
    let e = &cfg.equivalence;
    let rows = seeds
        .par_iter()
        .map(|&seed| -> Result<EquivalenceRow> {
            let run = run_trial(cfg, seed, e.input_len, e.steps, false)?;
            let report = tally(&run.log, &params, area)?;
            let (evictions, race_ties, eviction_ties, adc_errors, adc_clamps) =
                hw_counts(&run.hardware);
            Ok(EquivalenceRow {
                seed,
                steps: run.stats.steps,
                selected_matches: run.stats.selected_matches,
                eviction_matches: run.stats.eviction_matches,
                first_mismatch: run.stats.first_mismatch,
                evictions,
                race_ties,
                eviction_ties,
                adc_errors,
                adc_clamps,
                energy_j: report.energy_total,
                delay_s: report.delay_total,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = rows
        .iter()
        .filter_map(|r| {
            r.first_mismatch.map(|s| {
                format!(
                    "seed {}: hardware and golden model diverge at step {s}",
                    r.seed
                )
            })
        })
        .collect();
    Ok(Outcome { rows, violations })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub input_len: usize,
    pub output_len: usize,
    pub pruning_ratio: f64,
    pub condition: &'static str,
    pub bits_per_cell: u32,
    pub rows: usize,
    pub k_top: usize,
    pub area_devices: u64,
    pub area_cells: u64,
    pub area_periphery: u64,
    pub area_adc: u64,
    pub energy_j: f64,
    pub delay_s: f64,
    pub aedp: f64,
    pub energy_race_j: f64,
    pub energy_share_j: f64,
    pub energy_evict_j: f64,
    pub energy_adc_j: f64,
    pub energy_write_j: f64,
    pub delay_race_s: f64,
    pub delay_share_s: f64,
    pub delay_evict_s: f64,
    pub delay_adc_s: f64,
    pub delay_write_s: f64,
    pub area_improvement: f64,
    pub energy_improvement: f64,
    pub delay_improvement: f64,
    pub aedp_improvement: f64,
    pub topk_overlap: Option<f64>,
    pub mass_retained: Option<f64>,
}

fn accounting_violation(report: &CostReport<f64>) -> Option<String> {
    let e: f64 = report.energy_by_phase.iter().sum();
    let d: f64 = report.delay_by_phase.iter().sum();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(f64::MIN_POSITIVE);
    if !close(e, report.energy_total) || !close(d, report.delay_total) {
        return Some("phase breakdown does not add up to the totals".into());
    }
    if report.aedp != report.area_devices() as f64 * report.energy_total * report.delay_total {
        return Some("aedp differs from area * energy * delay".into());
    }
    None
}

/// Mean fidelity of the golden policy with `k_top` over the sweep traces.
fn fidelity(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    input_len: usize,
    output_len: usize,
    k_top: usize,
) -> Result<(f64, f64)> {
    let array = cfg.array_config(cfg.n_slots());
    let prune = PruneConfig {
        permissive: true,
        ..PruneConfig::new(cfg.cache.h_heavy, cfg.cache.m_reserved, k_top, &array)
    };
    let per_seed = seeds
        .par_iter()
        .map(|&seed| -> Result<(f64, f64)> {
            let trace = synth_trace::<f64>(
                seed,
                input_len,
                output_len,
                cfg.array.d,
                cfg.trace.heavy_fraction,
            );
            let rep = run_generation(&trace, &prune)?;
            Ok((rep.mean_overlap(), rep.mean_mass()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_seed.len() as f64;
    Ok((
        per_seed.iter().map(|x| x.0).sum::<f64>() / n,
        per_seed.iter().map(|x| x.1).sum::<f64>() / n,
    ))
}

/// Cost of every condition at every grid point, with dense-relative
/// improvements and golden-policy fidelity.
pub fn run_sweep(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Outcome<SweepRow>> {
    let array = cfg.array_config(cfg.n_slots());
    let adc = cfg.adc_config(&array);
    let params = cfg.cost_params(&array);
    let sw = &cfg.sweep;
    let grid: Vec<(usize, usize, f64)> = sw
        .input_len
        .iter()
        .flat_map(|&i| {
            sw.output_len
                .iter()
                .flat_map(move |&o| sw.pruning_ratios.iter().map(move |&r| (i, o, r)))
        })
        .collect();
    let points = grid
        .par_iter()
        .map(
            |&(input_len, output_len, pruning_ratio)| -> Result<(Vec<SweepRow>, Vec<String>)> {
                let w = Workload {
                    input_len,
                    output_len,
                    h_heavy: cfg.cache.h_heavy,
                    m_reserved: cfg.cache.m_reserved,
                    d: cfg.array.d,
                    pruning_ratio,
                };
                let reports = Condition::ALL
                    .iter()
                    .map(|&c| Ok(evaluate_condition(c, &w, &array, &adc, &params)?))
                    .collect::<Result<Vec<_>>>()?;
                let dense = &reports[0];
                let wanted = |c: Condition| sw.conditions.contains(&c);
                let (static_fid, dynamic_fid) = if sw.fidelity {
                    let fid = |on: bool, k: usize| -> Result<Option<(f64, f64)>> {
                        Ok(if on {
                            Some(fidelity(cfg, seeds, input_len, output_len, k)?)
                        } else {
                            None
                        })
                    };
                    let dynamic = wanted(Condition::StaticDynamic)
                        || wanted(Condition::StaticDynamicMultilevel);
                    (
                        fid(wanted(Condition::Static), w.kept_rows())?,
                        fid(dynamic, w.k_top())?,
                    )
                } else {
                    (None, None)
                };
                let mut rows = Vec::new();
                let mut violations = Vec::new();
                for (&cond, r) in Condition::ALL.iter().zip(&reports) {
                    if !wanted(cond) {
                        continue;
                    }
                    if let Some(v) = accounting_violation(r) {
                        violations.push(format!(
                            "{input_len}/{output_len}/{pruning_ratio}/{}: {v}",
                            cond.name()
                        ));
                    }
                    let fid = match cond {
                        Condition::Dense => sw.fidelity.then_some((1.0, 1.0)),
                        Condition::Static => static_fid,
                        _ => dynamic_fid,
                    };
                    let ph = |p: Phase| (r.energy(p), r.delay(p));
                    rows.push(SweepRow {
                        input_len,
                        output_len,
                        pruning_ratio: w.pruning_ratio,
                        condition: cond.name(),
                        bits_per_cell: cond.bits_per_cell(params.key_bits),
                        rows: if cond == Condition::Dense {
                            input_len + output_len
                        } else {
                            w.kept_rows()
                        },
                        k_top: match cond {
                            Condition::Dense => input_len + output_len,
                            Condition::Static => w.kept_rows(),
                            _ => w.k_top(),
                        },
                        area_devices: r.area_devices(),
                        area_cells: r.area.cells,
                        area_periphery: r.area.periphery,
                        area_adc: r.area.adc,
                        energy_j: r.energy_total,
                        delay_s: r.delay_total,
                        aedp: r.aedp,
                        energy_race_j: ph(Phase::Race).0,
                        energy_share_j: ph(Phase::Share).0,
                        energy_evict_j: ph(Phase::Evict).0,
                        energy_adc_j: ph(Phase::Adc).0,
                        energy_write_j: ph(Phase::Write).0,
                        delay_race_s: ph(Phase::Race).1,
                        delay_share_s: ph(Phase::Share).1,
                        delay_evict_s: ph(Phase::Evict).1,
                        delay_adc_s: ph(Phase::Adc).1,
                        delay_write_s: ph(Phase::Write).1,
                        area_improvement: dense.area_devices() as f64 / r.area_devices() as f64,
                        energy_improvement: dense.energy_total / r.energy_total,
                        delay_improvement: dense.delay_total / r.delay_total,
                        aedp_improvement: dense.aedp / r.aedp,
                        topk_overlap: fid.map(|f| f.0),
                        mass_retained: fid.map(|f| f.1),
                    });
                }
                Ok((rows, violations))
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let mut out = Outcome {
        rows: Vec::new(),
        violations: Vec::new(),
    };
    for (rows, v) in points {
        out.rows.extend(rows);
        out.violations.extend(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub input_len: usize,
    pub output_len: usize,
    pub pruning_ratio: f64,
    pub bits_per_cell: u32,
    pub baseline: String,
    pub area_ratio: f64,
    pub energy_ratio: f64,
    pub delay_ratio: f64,
    pub aedp_ratio: f64,
}

/// Baseline-over-ours ratios for every pruning ratio and cell precision.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<Outcome<CompareRow>> {
    let array = cfg.array_config(cfg.n_slots());
    let adc = cfg.adc_config(&array);
    let params = cfg.cost_params(&array);
    let c = &cfg.compare;
    let mut rows = Vec::new();
    let mut violations = Vec::new();
    for &ratio in &c.pruning_ratios {
        let w = Workload {
            input_len: c.input_len,
            output_len: c.output_len,
            h_heavy: cfg.cache.h_heavy,
            m_reserved: cfg.cache.m_reserved,
            d: cfg.array.d,
            pruning_ratio: ratio,
        };
        for &bits in &c.bits_per_cell {
            let cond = if bits == 1 {
                Condition::StaticDynamic
            } else if bits == params.key_bits {
                Condition::StaticDynamicMultilevel
            } else {
                bail!(
                    "bits_per_cell must be 1 or the key precision {}",
                    params.key_bits
                );
            };
            let ours = WorkloadReport {
                workload: w,
                report: evaluate_condition(cond, &w, &array, &adc, &params)?,
            };
            if let Some(v) = accounting_violation(&ours.report) {
                violations.push(format!("ratio {ratio} bits {bits}: {v}"));
            }
            for baseline in BaselineModel::standard() {
                let r = compare(&ours, &baseline, &w, &array, &adc, &params)?;
                rows.push(CompareRow {
                    input_len: w.input_len,
                    output_len: w.output_len,
                    pruning_ratio: ratio,
                    bits_per_cell: bits,
                    baseline: r.baseline,
                    area_ratio: r.area,
                    energy_ratio: r.energy,
                    delay_ratio: r.delay,
                    aedp_ratio: r.aedp,
                });
            }
        }
    }
    Ok(Outcome { rows, violations })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationRow {
    pub sigma_mv: f64,
    pub trials: usize,
    pub mean_overlap: f64,
    pub min_overlap: f64,
    pub eviction_agreement: f64,
    pub mean_abs_decode_error: f64,
    pub max_abs_decode_error: i64,
    pub adc_clamps: usize,
}

/// Single-step trials at each threshold spread. Every spread reuses the same
/// seeds, so rows differ only in the size of the device offsets.
pub fn run_variation(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Outcome<VariationRow>> {
    let pcfg = cfg.pipeline_config()?;
    let mut rows = Vec::new();
    for &sigma_mv in &cfg.variation.sigma_mv {
        let trials = seeds
            .par_iter()
            .map(|&s| Ok(variation_trial(&pcfg, sigma_mv * 1e-3, s)?))
            .collect::<Result<Vec<_>>>()?;
        let n = trials.len() as f64;
        rows.push(VariationRow {
            sigma_mv,
            trials: trials.len(),
            mean_overlap: trials.iter().map(|t| t.overlap).sum::<f64>() / n,
            min_overlap: trials
                .iter()
                .map(|t| t.overlap)
                .fold(f64::INFINITY, f64::min),
            eviction_agreement: trials.iter().filter(|t| t.eviction_agrees).count() as f64 / n,
            mean_abs_decode_error: trials.iter().map(|t| t.mean_abs_decode_error).sum::<f64>() / n,
            max_abs_decode_error: trials
                .iter()
                .map(|t| t.max_abs_decode_error)
                .max()
                .unwrap_or(0),
            adc_clamps: trials.iter().map(|t| t.clamps).sum(),
        });
    }
    let violations = rows
        .iter()
        .filter(|r| r.sigma_mv == 0.0 && r.mean_overlap != 1.0)
        .map(|r| format!("zero-spread control overlap is {}", r.mean_overlap))
        .collect();
    Ok(Outcome { rows, violations })
}

/// One JSON line per decode step.
#[derive(Debug, Clone, Serialize)]
pub struct TraceLine<'a> {
    pub seed: u64,
    #[serde(flatten)]
    pub hw: &'a HwStepRecord<f64>,
    pub golden_selected: &'a [usize],
    pub golden_evicted: Option<usize>,
    pub matches: bool,
}

/// Per-step hardware records of one trial, serialized as JSON lines.
pub fn run_trace(
    cfg: &ExperimentConfig,
    seed: u64,
    verbose: bool,
) -> Result<(Vec<String>, Vec<String>)> {
    let t = &cfg.trace_log;
    let run = run_trial(cfg, seed, t.input_len, t.steps, verbose)?;
    let mut lines = Vec::with_capacity(run.hardware.len());
    let mut violations = Vec::new();
    for (hw, g) in run.hardware.iter().zip(&run.golden.steps) {
        let matches = hw.selected == g.selected && hw.evicted == g.evicted;
        if !matches {
            violations.push(format!(
                "step {}: hardware and golden model diverge",
                hw.step
            ));
        }
        let line = TraceLine {
            seed,
            hw,
            golden_selected: &g.selected,
            golden_evicted: g.evicted,
            matches,
        };
        lines.push(serde_json::to_string(&line)?);
    }
    Ok((lines, violations))
}
