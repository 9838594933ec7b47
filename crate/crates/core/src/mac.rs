//! Current-domain mode: exact scores of the selected rows through a MUX and
//! a bank of SAR ADCs.

use serde::{Deserialize, Serialize};

use crate::array::{level_dot, ArrayConfig, CamCimArray, CurrentLaw, QueryDrive};
use crate::error::{ensure, Result};
use crate::events::Event;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdcConfig<T> {
    pub bits: u32,
    /// Current mapped to code 0.
    pub i_min: T,
    /// Current mapped to the top code.
    pub i_max: T,
    /// Conversion time (seconds).
    pub t_conv: T,
    /// Energy per conversion (joules).
    pub e_conv: T,
    /// Sense-line sampling window used for static sensing energy (seconds).
    pub t_sense: T,
}

impl<T: Scalar> AdcConfig<T> {
    /// Full-range calibration: code 0 at the current of the maximum score,
    /// the top code at the current of the minimum score.
    pub fn calibrated(array: &ArrayConfig<T>, bits: u32) -> Self {
        let law = array.current_law();
        let bound = T::of_i64(array.score_bound());
        Self::with_range(bits, law.current(bound), law.current(-bound))
    }

    /// One LSB per score unit, anchored at the maximum score. Scores below
    /// `score_bound - (2^bits - 1)` clamp.
    pub fn unit_lsb(array: &ArrayConfig<T>, bits: u32) -> Self {
        let law = array.current_law();
        let i_min = law.current(T::of_i64(array.score_bound()));
        let top = T::of_usize((1usize << bits) - 1);
        Self::with_range(bits, i_min, i_min + top * law.alpha)
    }

    fn with_range(bits: u32, i_min: T, i_max: T) -> Self {
        Self {
            bits,
            i_min,
            i_max,
            t_conv: T::of(10e-9),
            e_conv: T::of(1e-12),
            t_sense: T::of(100e-12),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.bits >= 1 && self.bits <= 24,
            Parameter,
            "ADC resolution must be 1..=24 bits"
        );
        ensure!(
            self.i_min < self.i_max,
            Parameter,
            "i_min must be below i_max"
        );
        Ok(())
    }

    pub fn top_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn lsb(&self) -> T {
        (self.i_max - self.i_min) / T::of(self.top_code() as f64)
    }

    /// Current at the center of a code bin.
    pub fn code_current(&self, code: u32) -> T {
        self.i_min + self.lsb() * T::of(code as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversion {
    pub code: u32,
    pub clamped: bool,
}

/// Ideal affine quantizer, rounding half up, clamped to the code range.
pub fn quantize<T: Scalar>(i_sl: T, adc: &AdcConfig<T>) -> Conversion {
    let top = adc.top_code();
    let x = (i_sl - adc.i_min) / (adc.i_max - adc.i_min) * T::of(top as f64);
    let raw = (x + T::of(0.5)).floor();
    if raw < T::zero() {
        Conversion {
            code: 0,
            clamped: true,
        }
    } else if raw > T::of(top as f64) {
        Conversion {
            code: top,
            clamped: true,
        }
    } else {
        Conversion {
            code: raw.to_u32().unwrap_or(top),
            clamped: false,
        }
    }
}

/// Integer score of a code: the inverse affine map, rounded to nearest.
pub fn decode_score<T: Scalar>(code: u32, adc: &AdcConfig<T>, law: &CurrentLaw<T>) -> i64 {
    law.score(adc.code_current(code))
        .round()
        .to_i64()
        .unwrap_or(0)
}

/// Static sensing energy of one line: `I_SL * v_read * t_sense`.
pub fn sensing_energy<T: Scalar>(i_sl: T, array: &ArrayConfig<T>, adc: &AdcConfig<T>) -> T {
    i_sl * array.device.v_read * adc.t_sense
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacResult<T> {
    pub row: usize,
    pub code: u32,
    pub decoded_score: i64,
    /// Dot product of the stored levels with the query; an oracle for tests.
    pub true_score: i64,
    pub sense_current: T,
    pub sense_energy: T,
    pub clamped: bool,
}

/// Number of sequential conversion rounds for `n` lines on `n_adcs` ADCs.
pub fn conversion_rounds(n: usize, n_adcs: usize) -> usize {
    n.div_ceil(n_adcs.max(1))
}

/// Convert the selected rows. Results are ordered by row index.
pub fn exact_scores<T: Scalar>(
    array: &mut CamCimArray<T>,
    drive: &QueryDrive<T>,
    selected: &[usize],
    adc: &AdcConfig<T>,
    n_adcs: usize,
) -> Result<Vec<MacResult<T>>> {
    ensure!(
        !selected.is_empty(),
        Parameter,
        "no rows selected for conversion"
    );
    ensure!(n_adcs >= 1, Parameter, "need at least one ADC");
    adc.validate()?;
    let mut rows = selected.to_vec();
    rows.sort_unstable();
    rows.dedup();
    let law = array.config().current_law();
    let mut results = Vec::with_capacity(rows.len());
    for &row in &rows {
        let i_sl = array.row_current(row, drive)?;
        let conv = quantize(i_sl, adc);
        let stored: Vec<_> = array.rows()[row]
            .cells
            .iter()
            .map(|c| c.stored_level)
            .collect();
        results.push(MacResult {
            row,
            code: conv.code,
            decoded_score: decode_score(conv.code, adc, &law),
            true_score: level_dot(&stored, &drive.levels),
            sense_current: i_sl,
            sense_energy: sensing_energy(i_sl, array.config(), adc),
            clamped: conv.clamped,
        });
    }
    let energy = results
        .iter()
        .fold(T::zero(), |acc, r| acc + r.sense_energy);
    let log = array.log_mut();
    log.push(Event::Sense {
        rows: rows.len(),
        energy,
    });
    for chunk in rows.chunks(n_adcs) {
        log.push(Event::AdcRound {
            conversions: chunk.len(),
        });
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyOrderingReport {
    pub pass: bool,
    /// `(higher-score row, lower-score row)` where the higher score cost more.
    pub offending: Option<(usize, usize)>,
}

/// Sensing energy must not increase with the row's score.
pub fn attention_energy_ordering_check<T: Scalar>(
    results: &[MacResult<T>],
) -> EnergyOrderingReport {
    let mut sorted: Vec<&MacResult<T>> = results.iter().collect();
    sorted.sort_by(|a, b| {
        a.true_score.cmp(&b.true_score).then(
            b.sense_energy
                .partial_cmp(&a.sense_energy)
                .unwrap_or(std::cmp::Ordering::Equal),
        )
    });
    for w in sorted.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi.true_score > lo.true_score && hi.sense_energy > lo.sense_energy {
            return EnergyOrderingReport {
                pass: false,
                offending: Some((hi.row, lo.row)),
            };
        }
        if hi.true_score == lo.true_score && hi.sense_energy != lo.sense_energy {
            let tol = hi.sense_energy.abs().max(lo.sense_energy.abs()) * T::of(1e-12);
            if (hi.sense_energy - lo.sense_energy).abs() > tol {
                return EnergyOrderingReport {
                    pass: false,
                    offending: Some((hi.row, lo.row)),
                };
            }
        }
    }
    EnergyOrderingReport {
        pass: true,
        offending: None,
    }
}

/// Least-squares affine fit `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual divided by the largest `|y|`.
    pub max_relative_residual: f64,
    pub r_squared: f64,
}

pub fn fit_affine(xs: &[f64], ys: &[f64]) -> Option<AffineFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    let mut max_res = 0.0f64;
    let mut ss_res = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let r = y - (slope * x + intercept);
        max_res = max_res.max(r.abs());
        ss_res += r * r;
    }
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some(AffineFit {
        slope,
        intercept,
        max_relative_residual: max_res / scale,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{encode_query, SignedLevel};

    fn default_adc() -> (ArrayConfig<f64>, AdcConfig<f64>) {
        let cfg = ArrayConfig::new(128, 1);
        let adc = AdcConfig::calibrated(&cfg, 10);
        (cfg, adc)
    }

    #[test]
    fn endpoints_and_midpoint() {
        let (_, adc) = default_adc();
        assert_eq!(
            quantize(adc.i_min, &adc),
            Conversion {
                code: 0,
                clamped: false
            }
        );
        assert_eq!(
            quantize(adc.i_max, &adc),
            Conversion {
                code: 1023,
                clamped: false
            }
        );
        let mid = (adc.i_min + adc.i_max) / 2.0;
        assert_eq!(quantize(mid, &adc).code, 512);
    }

    #[test]
    fn out_of_range_clamps() {
        let (_, adc) = default_adc();
        assert_eq!(
            quantize(adc.i_min - adc.lsb() * 3.0, &adc),
            Conversion {
                code: 0,
                clamped: true
            }
        );
        assert_eq!(
            quantize(adc.i_max * 2.0, &adc),
            Conversion {
                code: 1023,
                clamped: true
            }
        );
    }

    #[test]
    fn full_range_sweep_has_single_collision() {
        // 1025 scores over 1024 codes: exactly one pair must share a code.
        let (cfg, adc) = default_adc();
        let law = cfg.current_law();
        let mut wrong = Vec::new();
        for s in -512i64..=512 {
            let conv = quantize(law.current(s as f64), &adc);
            assert!(!conv.clamped);
            let dec = decode_score(conv.code, &adc, &law);
            if dec != s {
                wrong.push((s, dec));
            }
            assert!((dec - s).abs() <= 1);
        }
        assert_eq!(wrong, vec![(0, -1)]);
    }

    #[test]
    fn unit_lsb_sweep_is_exact_except_bottom_clamp() {
        let (cfg, _) = default_adc();
        let adc = AdcConfig::unit_lsb(&cfg, 10);
        let law = cfg.current_law();
        for s in -511i64..=512 {
            let conv = quantize(law.current(s as f64), &adc);
            assert!(!conv.clamped);
            assert_eq!(decode_score(conv.code, &adc, &law), s);
        }
        assert!(quantize(law.current(-512.0), &adc).clamped);
    }

    #[test]
    fn conversion_round_arithmetic() {
        assert_eq!(conversion_rounds(64, 64), 1);
        assert_eq!(conversion_rounds(115, 64), 2);
        assert_eq!(conversion_rounds(1, 64), 1);
    }

    #[test]
    fn exact_scores_logs_rounds_and_orders_rows() {
        let cfg = ArrayConfig::<f64>::new(4, 70);
        let adc = AdcConfig::calibrated(&cfg, 10);
        let mut a = CamCimArray::new(cfg.clone(), 1).unwrap();
        for r in 0..70 {
            let k = [(r % 5) as i32 - 2, 1, 0, -1];
            a.write_key(r, &SignedLevel::from_slice(&k, 2).unwrap(), r as u64)
                .unwrap();
        }
        let d = encode_query(&SignedLevel::from_slice(&[2, 1, 0, 0], 2).unwrap(), &cfg).unwrap();
        let sel: Vec<usize> = (0..65).rev().collect();
        let n = a.log().len();
        let res = exact_scores(&mut a, &d, &sel, &adc, 64).unwrap();
        assert_eq!(res.len(), 65);
        assert!(res.windows(2).all(|w| w[0].row < w[1].row));
        let rounds = a.log().events()[n..]
            .iter()
            .filter(|e| matches!(e, Event::AdcRound { .. }))
            .count();
        assert_eq!(rounds, 2);
        for r in &res {
            assert_eq!(r.decoded_score, r.true_score);
        }
    }

    #[test]
    fn unoccupied_selection_is_state_error() {
        let cfg = ArrayConfig::<f64>::new(1, 2);
        let adc = AdcConfig::calibrated(&cfg, 10);
        let mut a = CamCimArray::new(cfg.clone(), 1).unwrap();
        let d = encode_query(&SignedLevel::from_slice(&[1], 2).unwrap(), &cfg).unwrap();
        assert!(matches!(
            exact_scores(&mut a, &d, &[1], &adc, 64),
            Err(crate::error::SimError::State(_))
        ));
    }

    #[test]
    fn higher_score_costs_less_to_sense() {
        let cfg = ArrayConfig::<f64>::new(128, 2);
        let adc = AdcConfig::calibrated(&cfg, 10);
        let law = cfg.current_law();
        let hi = sensing_energy(law.current(400.0), &cfg, &adc);
        let lo = sensing_energy(law.current(-400.0), &cfg, &adc);
        assert!(hi < lo);
        let mk = |row, score: i64, e| MacResult {
            row,
            code: 0,
            decoded_score: score,
            true_score: score,
            sense_current: 0.0,
            sense_energy: e,
            clamped: false,
        };
        assert!(attention_energy_ordering_check(&[mk(0, 400, hi), mk(1, -400, lo)]).pass);
        assert!(attention_energy_ordering_check(&[mk(0, 5, hi), mk(1, 5, hi)]).pass);
        let bad = attention_energy_ordering_check(&[mk(0, 400, lo), mk(1, -400, hi)]);
        assert_eq!(bad.offending, Some((0, 1)));
    }

    #[test]
    fn affine_fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|x| x as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let f = fit_affine(&xs, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 3.0).abs() < 1e-12);
        assert!(f.max_relative_residual < 1e-14);
    }
}
