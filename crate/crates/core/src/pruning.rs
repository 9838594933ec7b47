//! Golden model of hybrid static/dynamic KV-cache pruning.
//!
//! Prefill keeps the `h_heavy` prompt tokens with the highest accumulated
//! attention. Each decode step then selects the top-k cached slots for exact
//! attention, folds the step's scores into per-slot accumulators and writes
//! the new token, evicting the lowest accumulator once the `m_reserved`
//! spare slots are used up. The new token takes part in selection from the
//! following step on.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::{quantize_symmetric, ArrayConfig};
use crate::charge::lambda;
use crate::error::{ensure, Result};
use crate::order::{argmin_lowest_index, lower_median, top_k_exact};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccumulationMode {
    /// Exponential average of the frozen sense-line voltage, as the
    /// charge-sharing hardware computes it.
    #[default]
    Ema,
    /// Running sum of raw scores.
    Sum,
}

/// Frozen sense-line voltage of a row as a function of its score, under the
/// constant-current race with the linear current law `I = I_base (1 - beta s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualProxy<T> {
    pub beta: T,
    pub vdd: T,
    pub v_half: T,
}

impl<T: Scalar> ResidualProxy<T> {
    pub fn from_array(array: &ArrayConfig<T>) -> Self {
        let law = array.current_law();
        let vdd = array.device.vdd;
        Self {
            beta: law.alpha / law.i_base,
            vdd,
            v_half: vdd / T::of(2.0),
        }
    }

    /// Voltage of a surviving row with score `s` when the race froze on
    /// the line of score `s_freeze`.
    pub fn survivor(&self, s: T, s_freeze: T) -> T {
        let num = (T::one() - self.beta * s).max(T::zero());
        let den = T::one() - self.beta * s_freeze;
        self.vdd - (self.vdd - self.v_half) * num / den
    }

    /// Residual voltages of the rows behind `scores`, `selected` being the
    /// race winners.
    pub fn residuals(&self, scores: &[T], selected: &[bool], k: usize) -> Result<Vec<T>> {
        let n = scores.len();
        if k >= n {
            return Ok(vec![self.vdd; n]);
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        let s_freeze = sorted[k];
        ensure!(
            self.beta * s_freeze < T::one(),
            Numeric,
            "score {s_freeze} exceeds the current law's range"
        );
        Ok(scores
            .iter()
            .zip(selected)
            .map(|(&s, &sel)| {
                if sel {
                    self.survivor(s, s_freeze)
                } else {
                    self.v_half
                }
            })
            .collect())
    }
}

/// Which index wins a tie. Hardware always resolves to the lowest index;
/// the other rule exists as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    LowestIndex,
    HighestIndex,
}

impl TieRule {
    fn remap(self, i: usize) -> usize {
        match self {
            TieRule::LowestIndex => i,
            TieRule::HighestIndex => usize::MAX - i,
        }
    }

    pub fn top_k<T: Scalar>(self, items: &[(usize, T)], k: usize) -> Vec<usize> {
        let mapped: Vec<(usize, T)> = items.iter().map(|&(i, v)| (self.remap(i), v)).collect();
        let mut out: Vec<usize> = top_k_exact(&mapped, k)
            .into_iter()
            .map(|i| self.remap(i))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn argmin<T: Scalar>(self, items: &[(usize, T)], tolerance: T) -> Option<(usize, bool)> {
        let mapped: Vec<(usize, T)> = items.iter().map(|&(i, v)| (self.remap(i), v)).collect();
        argmin_lowest_index(&mapped, tolerance).map(|(i, tie)| (self.remap(i), tie))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig<T> {
    pub h_heavy: usize,
    pub m_reserved: usize,
    pub k_top: usize,
    pub lambda: T,
    pub accumulation: AccumulationMode,
    /// In sum mode, accumulate per-step softmax probabilities instead of raw
    /// scores (prefill included).
    pub softmax_normalized: bool,
    /// Keep every prompt token instead of failing when the prompt is shorter
    /// than `h_heavy`.
    pub permissive: bool,
    pub proxy: ResidualProxy<T>,
    /// Relative tolerance for accumulator ties.
    pub tie_tolerance: T,
    #[serde(default)]
    pub tie_rule: TieRule,
}

impl<T: Scalar> PruneConfig<T> {
    /// EMA configuration sharing the retention factor and residual law of
    /// `array`.
    pub fn new(h_heavy: usize, m_reserved: usize, k_top: usize, array: &ArrayConfig<T>) -> Self {
        Self {
            h_heavy,
            m_reserved,
            k_top,
            lambda: lambda(array),
            accumulation: AccumulationMode::Ema,
            softmax_normalized: false,
            permissive: false,
            proxy: ResidualProxy::from_array(array),
            tie_tolerance: T::resolution(),
            tie_rule: TieRule::LowestIndex,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.h_heavy + self.m_reserved
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.h_heavy >= 1, Parameter, "h_heavy must be >= 1");
        ensure!(
            self.k_top >= 1 && self.k_top <= self.n_slots(),
            Parameter,
            "k_top = {} must lie in 1..={}",
            self.k_top,
            self.n_slots()
        );
        ensure!(
            self.lambda > T::zero() && self.lambda < T::one(),
            Parameter,
            "lambda must lie in (0, 1)"
        );
        ensure!(
            self.proxy.v_half > T::zero() && self.proxy.v_half < self.proxy.vdd,
            Parameter,
            "bad proxy voltages"
        );
        Ok(())
    }

    fn absolute_tolerance(&self, accs: &[T]) -> T {
        match self.accumulation {
            AccumulationMode::Ema => self.tie_tolerance * self.proxy.vdd,
            AccumulationMode::Sum => {
                self.tie_tolerance * accs.iter().fold(T::one(), |m, a| m.max(a.abs()))
            }
        }
    }
}

/// Prompt, prefill and decode vectors for one attention head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace<T> {
    pub d: usize,
    pub prompt_keys: Vec<Vec<T>>,
    pub prefill_queries: Vec<Vec<T>>,
    /// Causal sum of each prompt token's prefill scores.
    pub prefill_attention: Vec<T>,
    pub decode_queries: Vec<Vec<T>>,
    /// Key of the token generated at each decode step.
    pub decode_keys: Vec<Vec<T>>,
    /// Prompt positions of planted heavy-hitter keys.
    pub planted: Vec<usize>,
}

impl<T: Scalar> AttentionTrace<T> {
    pub fn prompt_len(&self) -> usize {
        self.prompt_keys.len()
    }

    pub fn steps(&self) -> usize {
        self.decode_queries.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        ensure!(d >= 1, Parameter, "d must be >= 1");
        ensure!(
            self.prefill_attention.len() == self.prompt_keys.len(),
            Parameter,
            "prefill attention length mismatch"
        );
        ensure!(
            self.decode_keys.len() == self.decode_queries.len(),
            Parameter,
            "decode keys and queries differ in length"
        );
        let all = self
            .prompt_keys
            .iter()
            .chain(&self.prefill_queries)
            .chain(&self.decode_queries)
            .chain(&self.decode_keys);
        for v in all {
            ensure!(
                v.len() == d,
                Parameter,
                "vector of length {} in a d = {d} trace",
                v.len()
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot<T> {
    pub token_id: u64,
    pub key: Vec<T>,
    pub acc: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvCacheState<T> {
    pub d: usize,
    pub prompt_len: usize,
    pub slots: Vec<Option<Slot<T>>>,
    pub generated_count: usize,
}

impl<T: Scalar> KvCacheState<T> {
    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn occupied(&self) -> impl Iterator<Item = (usize, &Slot<T>)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (i, s)))
    }

    pub fn occupied_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn token_ids(&self) -> Vec<Option<u64>> {
        self.slots
            .iter()
            .map(|s| s.as_ref().map(|s| s.token_id))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeStepResult<T> {
    pub step: usize,
    /// Selected slots, ascending.
    pub selected: Vec<usize>,
    pub selected_tokens: Vec<u64>,
    /// Exact scores of the selected slots, aligned with `selected`.
    pub scores: Vec<T>,
    pub evicted: Option<usize>,
    pub evicted_token: Option<u64>,
    pub eviction_tie: bool,
    pub written_slot: usize,
    pub new_token: u64,
}

/// `q . k` for every key row.
pub fn attn_scores<T: Scalar>(q: &[T], keys: &[Vec<T>]) -> Result<Vec<T>> {
    keys.iter()
        .map(|k| {
            ensure!(
                k.len() == q.len(),
                Parameter,
                "query has {} dims, key has {}",
                q.len(),
                k.len()
            );
            Ok(dot(q, k))
        })
        .collect()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Numerically stable softmax of `scores / sqrt(d)`.
pub fn softmax_scaled<T: Scalar>(scores: &[T], d: usize) -> Vec<T> {
    if scores.is_empty() {
        return Vec::new();
    }
    let scale = T::one() / T::of_usize(d).sqrt();
    let max = scores.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
    let exps: Vec<T> = scores.iter().map(|&s| ((s - max) * scale).exp()).collect();
    let total = exps.iter().fold(T::zero(), |a, &e| a + e);
    exps.into_iter().map(|e| e / total).collect()
}

/// Causal prefill accumulation: token `j` collects the scores of queries
/// `i >= j`.
pub fn prefill_attention<T: Scalar>(
    keys: &[Vec<T>],
    queries: &[Vec<T>],
    softmax: bool,
) -> Result<Vec<T>> {
    ensure!(
        keys.len() == queries.len(),
        Parameter,
        "prefill needs one query per prompt token"
    );
    let mut acc = vec![T::zero(); keys.len()];
    for (i, q) in queries.iter().enumerate() {
        let scores = attn_scores(q, &keys[..=i])?;
        let weights = if softmax {
            softmax_scaled(&scores, q.len())
        } else {
            scores
        };
        for (a, w) in acc.iter_mut().zip(weights) {
            *a = *a + w;
        }
    }
    Ok(acc)
}

/// One-shot static pruning of the prompt.
pub fn prefill_prune<T: Scalar>(
    trace: &AttentionTrace<T>,
    cfg: &PruneConfig<T>,
) -> Result<KvCacheState<T>> {
    cfg.validate()?;
    trace.validate()?;
    let n_in = trace.prompt_len();
    ensure!(n_in >= 1, Parameter, "empty prompt");
    let h = if n_in < cfg.h_heavy {
        ensure!(
            cfg.permissive,
            Parameter,
            "prompt of {n_in} tokens is shorter than h_heavy = {}",
            cfg.h_heavy
        );
        n_in
    } else {
        cfg.h_heavy
    };
    let prefill = if cfg.softmax_normalized && cfg.accumulation == AccumulationMode::Sum {
        prefill_attention(&trace.prompt_keys, &trace.prefill_queries, true)?
    } else {
        trace.prefill_attention.clone()
    };
    let items: Vec<(usize, T)> = prefill.iter().copied().enumerate().collect();
    let kept = cfg.tie_rule.top_k(&items, h);

    let values: Vec<T> = kept.iter().map(|&i| prefill[i]).collect();
    let init: Vec<T> = match cfg.accumulation {
        AccumulationMode::Sum => values,
        AccumulationMode::Ema => {
            let lo = values.iter().fold(T::infinity(), |m, &v| m.min(v));
            let hi = values.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let (vh, vdd) = (cfg.proxy.v_half, cfg.proxy.vdd);
            values
                .iter()
                .map(|&v| {
                    if hi > lo {
                        vh + (vdd - vh) * (v - lo) / (hi - lo)
                    } else {
                        vdd
                    }
                })
                .collect()
        }
    };

    let mut slots: Vec<Option<Slot<T>>> = vec![None; h + cfg.m_reserved];
    for (slot, (&tok, acc)) in slots.iter_mut().zip(kept.iter().zip(init)) {
        *slot = Some(Slot {
            token_id: tok as u64,
            key: trace.prompt_keys[tok].clone(),
            acc,
        });
    }
    Ok(KvCacheState {
        d: trace.d,
        prompt_len: n_in,
        slots,
        generated_count: 0,
    })
}

/// Initial accumulator of a freshly written slot: lower median of the other
/// occupied slots.
pub fn new_slot_acc<T: Scalar>(state: &KvCacheState<T>, target: usize, cfg: &PruneConfig<T>) -> T {
    let others: Vec<T> = state
        .occupied()
        .filter(|(i, _)| *i != target)
        .map(|(_, s)| s.acc)
        .collect();
    lower_median(&others).unwrap_or(match cfg.accumulation {
        AccumulationMode::Ema => cfg.proxy.vdd,
        AccumulationMode::Sum => T::zero(),
    })
}

/// Advance the cache by one generated token.
pub fn decode_step<T: Scalar>(
    state: &mut KvCacheState<T>,
    q: &[T],
    new_key: &[T],
    cfg: &PruneConfig<T>,
) -> Result<DecodeStepResult<T>> {
    ensure!(
        q.len() == state.d && new_key.len() == state.d,
        Parameter,
        "vector length differs from d = {}",
        state.d
    );
    let occupied: Vec<usize> = state.occupied().map(|(i, _)| i).collect();
    ensure!(
        !occupied.is_empty(),
        State,
        "cache is empty; run prefill first"
    );

    let scores: Vec<T> = occupied
        .iter()
        .map(|&i| dot(q, &state.slots[i].as_ref().expect("occupied").key))
        .collect();
    let k = cfg.k_top.min(occupied.len());
    let items: Vec<(usize, T)> = occupied
        .iter()
        .copied()
        .zip(scores.iter().copied())
        .collect();
    let selected = cfg.tie_rule.top_k(&items, k);
    let selected_tokens: Vec<u64> = selected.iter().map(|&i| token_of(state, i)).collect();

    let mut mask = vec![false; occupied.len()];
    let mut pos = 0;
    for (j, &slot) in occupied.iter().enumerate() {
        if pos < selected.len() && selected[pos] == slot {
            mask[j] = true;
            pos += 1;
        }
    }
    let updates: Vec<T> = match cfg.accumulation {
        AccumulationMode::Ema => cfg.proxy.residuals(&scores, &mask, k)?,
        AccumulationMode::Sum if cfg.softmax_normalized => softmax_scaled(&scores, state.d),
        AccumulationMode::Sum => scores.clone(),
    };
    for (&slot, u) in occupied.iter().zip(updates) {
        let s = state.slots[slot].as_mut().expect("occupied");
        s.acc = match cfg.accumulation {
            AccumulationMode::Ema => cfg.lambda * s.acc + (T::one() - cfg.lambda) * u,
            AccumulationMode::Sum => s.acc + u,
        };
    }

    let new_token = (state.prompt_len + state.generated_count) as u64;
    let (written_slot, evicted, evicted_token, eviction_tie) =
        if state.generated_count >= cfg.m_reserved {
            let accs: Vec<(usize, T)> = occupied
                .iter()
                .map(|&i| (i, state.slots[i].as_ref().expect("occupied").acc))
                .collect();
            let tol = cfg.absolute_tolerance(&accs.iter().map(|x| x.1).collect::<Vec<_>>());
            let (victim, tie) = cfg.tie_rule.argmin(&accs, tol).expect("non-empty");
            let old = state.slots[victim].as_ref().map(|s| s.token_id);
            (victim, Some(victim), old, tie)
        } else {
            let free = state.slots.iter().position(|s| s.is_none());
            let free =
                free.ok_or_else(|| crate::error::SimError::State("no free reserved slot".into()))?;
            (free, None, None, false)
        };
    let acc = new_slot_acc(state, written_slot, cfg);
    state.slots[written_slot] = Some(Slot {
        token_id: new_token,
        key: new_key.to_vec(),
        acc,
    });

    let step = state.generated_count;
    state.generated_count += 1;
    let lookup = |i: usize| {
        items
            .iter()
            .find(|x| x.0 == i)
            .expect("selected is occupied")
            .1
    };
    Ok(DecodeStepResult {
        step,
        selected_tokens,
        scores: selected.iter().map(|&i| lookup(i)).collect(),
        selected,
        evicted,
        evicted_token,
        eviction_tie,
        written_slot,
        new_token,
    })
}

fn token_of<T: Scalar>(state: &KvCacheState<T>, slot: usize) -> u64 {
    state.slots[slot].as_ref().expect("occupied").token_id
}

/// Per-step agreement with dense attention over every token seen so far.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepFidelity {
    pub step: usize,
    /// Fraction of the dense top-k tokens that were selected.
    pub topk_overlap: f64,
    /// Softmax probability mass of the selected tokens under dense attention.
    pub mass_retained: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport<T> {
    pub steps: Vec<DecodeStepResult<T>>,
    pub fidelity: Vec<StepFidelity>,
    pub prefill_kept: Vec<u64>,
}

impl<T> GenerationReport<T> {
    pub fn mean_overlap(&self) -> f64 {
        mean(self.fidelity.iter().map(|f| f.topk_overlap))
    }

    pub fn mean_mass(&self) -> f64 {
        mean(self.fidelity.iter().map(|f| f.mass_retained))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Prefill followed by every decode step of the trace.
pub fn run_generation<T: Scalar>(
    trace: &AttentionTrace<T>,
    cfg: &PruneConfig<T>,
) -> Result<GenerationReport<T>> {
    let mut state = prefill_prune(trace, cfg)?;
    let prefill_kept = state.occupied().map(|(_, s)| s.token_id).collect();
    let mut dense_keys: Vec<Vec<T>> = trace.prompt_keys.clone();
    let mut steps = Vec::with_capacity(trace.steps());
    let mut fidelity = Vec::with_capacity(trace.steps());
    for (q, new_key) in trace.decode_queries.iter().zip(&trace.decode_keys) {
        let res = decode_step(&mut state, q, new_key, cfg)?;
        fidelity.push(dense_fidelity(q, &dense_keys, &res)?);
        dense_keys.push(new_key.clone());
        steps.push(res);
    }
    Ok(GenerationReport {
        steps,
        fidelity,
        prefill_kept,
    })
}

/// Compare a step's selection with dense top-k over `dense_keys`, whose
/// index is the token id.
pub fn dense_fidelity<T: Scalar>(
    q: &[T],
    dense_keys: &[Vec<T>],
    res: &DecodeStepResult<T>,
) -> Result<StepFidelity> {
    let scores = attn_scores(q, dense_keys)?;
    let k = res.selected_tokens.len();
    let items: Vec<(usize, T)> = scores.iter().copied().enumerate().collect();
    let dense = top_k_exact(&items, k);
    let hits = dense
        .iter()
        .filter(|&&t| res.selected_tokens.contains(&(t as u64)))
        .count();
    let probs = softmax_scaled(&scores, q.len());
    let mass = res
        .selected_tokens
        .iter()
        .fold(T::zero(), |m, &t| m + probs[t as usize]);
    Ok(StepFidelity {
        step: res.step,
        topk_overlap: if k == 0 { 1.0 } else { hits as f64 / k as f64 },
        mass_retained: mass.as_f64(),
    })
}

/// Synthetic head with planted heavy hitters.
///
/// Background keys and generated keys are standard normal. A fraction
/// `heavy_fraction` of prompt keys, placed in the first three quarters of the
/// prompt, is `1.5 u + 0.5 n` for a hidden sign vector `u`; every query is
/// `0.5 u + n`.
pub fn synth_trace<T: Scalar>(
    seed: u64,
    n_in: usize,
    steps: usize,
    d: usize,
    heavy_fraction: f64,
) -> AttentionTrace<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> T { T::of(rng.sample::<f64, _>(StandardNormal)) };
    let u: Vec<T> = (0..d)
        .map(|_| {
            if rng.random::<bool>() {
                T::one()
            } else {
                -T::one()
            }
        })
        .collect();

    let n_planted = ((heavy_fraction.clamp(0.0, 1.0) * n_in as f64).round() as usize).min(n_in);
    let window = n_planted.max((n_in * 3).div_ceil(4)).min(n_in);
    let mut planted: Vec<usize> = sample(&mut rng, window, n_planted).into_vec();
    planted.sort_unstable();

    let mut is_planted = vec![false; n_in];
    planted.iter().for_each(|&p| is_planted[p] = true);
    let prompt_keys: Vec<Vec<T>> = (0..n_in)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let n = normal(&mut rng);
                    if is_planted[i] {
                        T::of(1.5) * u[j] + T::of(0.5) * n
                    } else {
                        n
                    }
                })
                .collect()
        })
        .collect();
    let query = |rng: &mut ChaCha8Rng| -> Vec<T> {
        (0..d).map(|j| T::of(0.5) * u[j] + normal(rng)).collect()
    };
    let prefill_queries: Vec<Vec<T>> = (0..n_in).map(|_| query(&mut rng)).collect();
    let decode_queries: Vec<Vec<T>> = (0..steps).map(|_| query(&mut rng)).collect();
    let decode_keys: Vec<Vec<T>> = (0..steps)
        .map(|_| (0..d).map(|_| normal(&mut rng)).collect())
        .collect();
    let prefill_attention =
        prefill_attention(&prompt_keys, &prefill_queries, false).expect("consistent dims");
    AttentionTrace {
        d,
        prompt_keys,
        prefill_queries,
        prefill_attention,
        decode_queries,
        decode_keys,
        planted,
    }
}

/// Quantize every vector of a trace to signed levels (stored as integral
/// scalars) and recompute the prefill attention on the quantized values.
pub fn quantize_trace<T: Scalar>(
    trace: &AttentionTrace<T>,
    key_radius: u32,
    query_radius: u32,
    scale: T,
) -> AttentionTrace<T> {
    let qv = |v: &Vec<T>, r: u32| -> Vec<T> {
        quantize_symmetric(v, r, scale)
            .into_iter()
            .map(|l| T::of_i64(l.value() as i64))
            .collect()
    };
    let prompt_keys: Vec<Vec<T>> = trace
        .prompt_keys
        .iter()
        .map(|v| qv(v, key_radius))
        .collect();
    let prefill_queries: Vec<Vec<T>> = trace
        .prefill_queries
        .iter()
        .map(|v| qv(v, query_radius))
        .collect();
    let prefill_attention =
        prefill_attention(&prompt_keys, &prefill_queries, false).expect("consistent dims");
    AttentionTrace {
        d: trace.d,
        prompt_keys,
        prefill_queries,
        prefill_attention,
        decode_queries: trace
            .decode_queries
            .iter()
            .map(|v| qv(v, query_radius))
            .collect(),
        decode_keys: trace
            .decode_keys
            .iter()
            .map(|v| qv(v, key_radius))
            .collect(),
        planted: trace.planted.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(h: usize, m: usize, k: usize) -> PruneConfig<f64> {
        PruneConfig::new(h, m, k, &ArrayConfig::new(4, h + m))
    }

    fn trace_from(
        keys: Vec<Vec<f64>>,
        prefill: Vec<f64>,
        queries: Vec<Vec<f64>>,
        new_keys: Vec<Vec<f64>>,
    ) -> AttentionTrace<f64> {
        let d = keys[0].len();
        let n = keys.len();
        AttentionTrace {
            d,
            prompt_keys: keys,
            prefill_queries: vec![vec![0.0; d]; n],
            prefill_attention: prefill,
            decode_queries: queries,
            decode_keys: new_keys,
            planted: Vec::new(),
        }
    }

    #[test]
    fn tie_rules_mirror_each_other() {
        let items = [(0, 1.0), (1, 2.0), (2, 2.0), (3, 1.0)];
        assert_eq!(TieRule::LowestIndex.top_k(&items, 1), vec![1]);
        assert_eq!(TieRule::HighestIndex.top_k(&items, 1), vec![2]);
        assert_eq!(TieRule::LowestIndex.argmin(&items, 0.0), Some((0, true)));
        assert_eq!(TieRule::HighestIndex.argmin(&items, 0.0), Some((3, true)));
    }

    #[test]
    fn attn_scores_trivial_cases() {
        let eye: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        assert_eq!(attn_scores(&[0.0; 3], &eye).unwrap(), vec![0.0; 3]);
        assert_eq!(
            attn_scores(&[0.0, 1.0, 0.0], &eye).unwrap(),
            vec![0.0, 1.0, 0.0]
        );
        assert!(attn_scores(&[1.0, 2.0], &eye).is_err());
    }

    #[test]
    fn prefill_ties_keep_first_indices() {
        let keys = vec![vec![1.0]; 5];
        let t = trace_from(keys, vec![2.0; 5], vec![], vec![]);
        let s = prefill_prune(&t, &small_cfg(3, 1, 1)).unwrap();
        assert_eq!(s.token_ids(), vec![Some(0), Some(1), Some(2), None]);
        assert!(s.occupied().all(|(_, sl)| sl.acc == 1.0));
    }

    #[test]
    fn short_prompt_needs_permissive_flag() {
        let t = trace_from(vec![vec![1.0]; 2], vec![1.0, 2.0], vec![], vec![]);
        let mut cfg = small_cfg(3, 1, 1);
        assert!(prefill_prune(&t, &cfg).is_err());
        cfg.permissive = true;
        let s = prefill_prune(&t, &cfg).unwrap();
        assert_eq!(s.n_slots(), 3);
        assert_eq!(s.occupied_count(), 2);
    }

    #[test]
    fn ema_prefill_normalizes_into_upper_half() {
        let t = trace_from(
            vec![vec![1.0]; 4],
            vec![1.0, 5.0, 3.0, -2.0],
            vec![],
            vec![],
        );
        let s = prefill_prune(&t, &small_cfg(3, 0, 1)).unwrap();
        let accs: Vec<f64> = s.occupied().map(|(_, x)| x.acc).collect();
        assert_eq!(s.token_ids(), vec![Some(0), Some(1), Some(2)]);
        assert!(
            (accs[0] - 0.5).abs() < 1e-15
                && (accs[1] - 1.0).abs() < 1e-15
                && (accs[2] - 0.75).abs() < 1e-15
        );
    }

    #[test]
    fn eviction_starts_after_reserved_slots_fill() {
        let d = 2;
        let steps = 6;
        let keys: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 1.0]).collect();
        let t = trace_from(
            keys,
            vec![4.0, 3.0, 2.0, 1.0],
            vec![vec![1.0, 0.0]; steps],
            vec![vec![0.0; d]; steps],
        );
        let cfg = small_cfg(4, 3, 2);
        let rep = run_generation(&t, &cfg).unwrap();
        let evictions: Vec<bool> = rep.steps.iter().map(|s| s.evicted.is_some()).collect();
        assert_eq!(evictions, vec![false, false, false, true, true, true]);
        assert_eq!(rep.steps[0].written_slot, 4);
        assert_eq!(rep.steps[3].new_token, 7);
    }

    #[test]
    fn k_equal_to_slots_selects_all_occupied() {
        let keys: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64]).collect();
        let t = trace_from(
            keys,
            vec![1.0, 2.0, 3.0],
            vec![vec![1.0]; 2],
            vec![vec![0.5]; 2],
        );
        let rep = run_generation(&t, &small_cfg(3, 2, 5)).unwrap();
        assert_eq!(rep.steps[0].selected, vec![0, 1, 2]);
        assert_eq!(rep.steps[1].selected, vec![0, 1, 2, 3]);
    }

    #[test]
    fn residual_proxy_limits() {
        let p = ResidualProxy::<f64> {
            beta: 0.001,
            vdd: 1.0,
            v_half: 0.5,
        };
        let r = p
            .residuals(&[10.0, 5.0, 1.0], &[true, true, false], 2)
            .unwrap();
        assert_eq!(r[2], 0.5);
        assert!(r[0] > r[1] && r[1] > 0.5);
        assert_eq!(
            p.residuals(&[1.0, 2.0], &[true, true], 2).unwrap(),
            vec![1.0, 1.0]
        );
        // Tied at the freeze boundary: the winner holds v_half.
        let r = p.residuals(&[3.0, 3.0], &[true, false], 1).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_pruning_matches_dense() {
        let t = synth_trace::<f64>(3, 40, 10, 16, 0.1);
        let cfg = PruneConfig::new(40, 10, 50, &ArrayConfig::new(16, 50));
        let rep = run_generation(&t, &cfg).unwrap();
        for f in &rep.fidelity {
            assert_eq!(f.topk_overlap, 1.0);
            assert!((f.mass_retained - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synth_trace_is_deterministic_and_planted() {
        let a = synth_trace::<f64>(11, 200, 3, 32, 0.1);
        assert_eq!(a, synth_trace::<f64>(11, 200, 3, 32, 0.1));
        assert_ne!(a, synth_trace::<f64>(12, 200, 3, 32, 0.1));
        assert_eq!(a.planted.len(), 20);
        assert!(a.planted.iter().all(|&p| p < 150));
        assert!(synth_trace::<f64>(11, 200, 3, 32, 0.0).planted.is_empty());
    }

    #[test]
    fn softmax_sum_mode_accumulates_probabilities() {
        let keys = vec![vec![1.0], vec![0.0]];
        let t = trace_from(keys, vec![0.0, 0.0], vec![vec![2.0]], vec![vec![0.0]]);
        let mut cfg = small_cfg(2, 1, 1);
        cfg.accumulation = AccumulationMode::Sum;
        cfg.softmax_normalized = true;
        let mut s = prefill_prune(&t, &cfg).unwrap();
        let total = |s: &KvCacheState<f64>| -> f64 {
            s.slots[..2].iter().map(|x| x.as_ref().unwrap().acc).sum()
        };
        // Causal uniform prefill: token 0 collects 1 + 1/2, token 1 collects 1/2.
        assert!((total(&s) - 2.0).abs() < 1e-12);
        decode_step(&mut s, &[2.0], &[0.0], &cfg).unwrap();
        assert!((total(&s) - 3.0).abs() < 1e-12);
    }
}
