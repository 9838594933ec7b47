use camcim_core::array::{encode_query, level_dot, ArrayConfig, CamCimArray, SignedLevel};
use camcim_core::cam::{run_race, RaceConfig};
use camcim_core::mac::{attention_energy_ordering_check, exact_scores, fit_affine, AdcConfig};
use camcim_core::pipeline::{run_pipeline, PipelineConfig};
use camcim_core::pruning::{quantize_trace, synth_trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_levels(rng: &mut ChaCha8Rng, d: usize, radius: i32) -> Vec<SignedLevel> {
    let v: Vec<i32> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
    SignedLevel::from_slice(&v, radius as u32).unwrap()
}

fn filled_array(
    rng: &mut ChaCha8Rng,
    d: usize,
    n: usize,
) -> (CamCimArray<f64>, Vec<Vec<SignedLevel>>) {
    let cfg = ArrayConfig::new(d, n);
    let mut a = CamCimArray::new(cfg, rng.random()).unwrap();
    let keys: Vec<Vec<SignedLevel>> = (0..n).map(|_| random_levels(rng, d, 2)).collect();
    for (i, k) in keys.iter().enumerate() {
        a.write_key(i, k, i as u64).unwrap();
    }
    (a, keys)
}

#[test]
fn race_matches_brute_force_top_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..100 {
        let n = rng.random_range(2..=576);
        let k = rng.random_range(1..=n);
        let (mut a, keys) = filled_array(&mut rng, 128, n);
        let q = random_levels(&mut rng, 128, 2);
        let drive = encode_query(&q, a.config()).unwrap();
        let race = RaceConfig::new(k, a.config()).unwrap();
        let out = run_race(&mut a, &drive, &race).unwrap();

        let scores: Vec<i64> = keys.iter().map(|key| level_dot(key, &q)).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&x, &y| scores[y].cmp(&scores[x]).then(x.cmp(&y)));
        let mut want = idx[..k].to_vec();
        want.sort_unstable();
        assert_eq!(out.selected_rows, want, "trial {trial}: n = {n}, k = {k}");
    }
}

#[test]
fn hardware_eviction_equals_golden_argmin() {
    for seed in 0..4 {
        let raw = synth_trace::<f64>(seed, 1024, 70, 128, 0.1);
        let trace = quantize_trace(&raw, 2, 2, 1.0);
        let cfg = PipelineConfig::new(128, 512, 64, 115, 64).unwrap();
        let run = run_pipeline(&trace, &cfg, None, seed, false).unwrap();
        let evictions: Vec<_> = run
            .hardware
            .iter()
            .filter(|h| h.evicted.is_some())
            .collect();
        assert_eq!(evictions.len(), 6);
        for (hw, g) in run.hardware.iter().zip(&run.golden.steps) {
            assert_eq!(hw.evicted, g.evicted, "seed {seed} step {}", hw.step);
        }
    }
}

#[test]
fn sense_current_is_affine_in_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (a, keys) = filled_array(&mut rng, 128, 400);
    let q = random_levels(&mut rng, 128, 2);
    let drive = encode_query(&q, a.config()).unwrap();
    let xs: Vec<f64> = keys.iter().map(|k| level_dot(k, &q) as f64).collect();
    let ys: Vec<f64> = (0..400)
        .map(|r| a.row_current(r, &drive).unwrap())
        .collect();
    let fit = fit_affine(&xs, &ys).unwrap();
    assert!(fit.max_relative_residual < 1e-12, "{fit:?}");
    assert!(fit.r_squared > 1.0 - 1e-12);
    assert!(fit.slope < 0.0);
}

#[test]
fn random_rows_decode_to_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut a, _) = filled_array(&mut rng, 128, 500);
    let q = random_levels(&mut rng, 128, 2);
    let drive = encode_query(&q, a.config()).unwrap();
    let rows: Vec<usize> = (0..500).collect();

    let unit = AdcConfig::unit_lsb(a.config(), 10);
    let res = exact_scores(&mut a, &drive, &rows, &unit, 64).unwrap();
    assert!(res
        .iter()
        .all(|m| m.decoded_score == m.true_score && !m.clamped));

    // Full-range calibration spreads 1025 scores over 1024 codes; only the
    // zero score shares a code with its neighbour.
    let full = AdcConfig::calibrated(a.config(), 10);
    for m in exact_scores(&mut a, &drive, &rows, &full, 64).unwrap() {
        if m.true_score == 0 {
            assert_eq!(m.decoded_score, -1);
        } else {
            assert_eq!(m.decoded_score, m.true_score);
        }
    }
}

#[test]
fn sensing_energy_falls_with_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut a, _) = filled_array(&mut rng, 128, 300);
    let q = random_levels(&mut rng, 128, 2);
    let drive = encode_query(&q, a.config()).unwrap();
    let adc = AdcConfig::calibrated(a.config(), 10);
    let rows: Vec<usize> = (0..300).collect();
    let res = exact_scores(&mut a, &drive, &rows, &adc, 64).unwrap();
    assert!(attention_energy_ordering_check(&res).pass);

    let cfg = ArrayConfig::<f64>::new(128, 2);
    let mut b = CamCimArray::new(cfg.clone(), 0).unwrap();
    let ones = SignedLevel::from_slice(&[1; 128], 2).unwrap();
    let neg = SignedLevel::from_slice(&[-1; 128], 2).unwrap();
    b.write_key(0, &ones, 0).unwrap();
    b.write_key(1, &neg, 1).unwrap();
    let q = SignedLevel::from_slice(&[[2; 64], [2; 64]].concat(), 2).unwrap();
    let drive = encode_query(&q, &cfg).unwrap();
    let res = exact_scores(&mut b, &drive, &[0, 1], &adc, 64).unwrap();
    assert_eq!((res[0].true_score, res[1].true_score), (256, -256));
    assert!(res[0].sense_energy < res[1].sense_energy);
}

#[test]
fn single_precision_pipeline_matches_its_golden_model() {
    let raw = synth_trace::<f32>(3, 256, 48, 32, 0.1);
    let trace = quantize_trace(&raw, 2, 2, 1.0);
    let cfg = PipelineConfig::<f32>::new(32, 128, 16, 29, 16).unwrap();
    let run = run_pipeline(&trace, &cfg, None, 3, false).unwrap();
    assert!(run.stats.all_match(), "{:?}", run.stats);
    assert_eq!(
        run.hardware.iter().filter(|h| h.evicted.is_some()).count(),
        32
    );
}
