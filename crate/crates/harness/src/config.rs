//! Experiment configuration: a TOML file whose every field has a default.
//!
//! ```toml
//! seeds = "0..50"            # overrides every experiment's seed list
//!
//! [array]
//! d = 128
//! key_radius = 2
//! query_radius = 2
//! c_sl = 50e-15
//! c_acc = 200e-15
//!
//! [cache]
//! h_heavy = 512
//! m_reserved = 64
//! pruning_ratio = 0.8
//!
//! [adc]
//! bits = 10
//! n_adcs = 64
//! calibration = "full_range"  # or "unit_lsb"
//!
//! [sweep]
//! input_len = [512, 1024, 2048]
//! output_len = [64, 128, 256]
//! pruning_ratios = [0.8]
//! conditions = ["dense", "static", "static_dynamic", "static_dynamic_multilevel"]
//!
//! [variation]
//! sigma_mv = [0.0, 27.0, 54.0, 108.0]
//! seeds = "0..200"
//! ```
//!
//! A `[device]` table replaces the default device parameters and a `[cost]`
//! table replaces the default cost constants; both must then be complete.

use std::path::Path;

use anyhow::{bail, Context, Result};
use camcim_core::array::ArrayConfig;
use camcim_core::cost::{k_for_pruning_ratio, Condition, CostParams};
use camcim_core::device::DeviceParams;
use camcim_core::mac::AdcConfig;
use camcim_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub d: usize,
    pub key_radius: u32,
    pub query_radius: u32,
    pub c_sl: f64,
    pub c_acc: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            d: 128,
            key_radius: 2,
            query_radius: 2,
            c_sl: 50e-15,
            c_acc: 200e-15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    pub h_heavy: usize,
    pub m_reserved: usize,
    /// Fraction of cached tokens skipped by dynamic selection.
    pub pruning_ratio: f64,
}

impl Default for CacheSection {
    fn default() -> Self {
        Self {
            h_heavy: 512,
            m_reserved: 64,
            pruning_ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    #[default]
    FullRange,
    UnitLsb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcSection {
    pub bits: u32,
    pub n_adcs: usize,
    pub calibration: Calibration,
}

impl Default for AdcSection {
    fn default() -> Self {
        Self {
            bits: 10,
            n_adcs: 64,
            calibration: Calibration::FullRange,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub heavy_fraction: f64,
    /// Real value mapped to one quantization level.
    pub quant_scale: f64,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self {
            heavy_fraction: 0.1,
            quant_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivalenceSection {
    pub input_len: usize,
    pub steps: usize,
    pub seeds: String,
}

impl Default for EquivalenceSection {
    fn default() -> Self {
        Self {
            input_len: 1024,
            steps: 100,
            seeds: "0..50".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub input_len: Vec<usize>,
    pub output_len: Vec<usize>,
    pub pruning_ratios: Vec<f64>,
    /// Conditions emitted per grid point; dense is always evaluated as the
    /// reference for the improvement columns.
    pub conditions: Vec<Condition>,
    /// Seeds of the synthetic traces behind the fidelity columns.
    pub seeds: String,
    /// Skip the fidelity columns (they dominate the run time).
    pub fidelity: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            input_len: vec![512, 1024, 2048],
            output_len: vec![64, 128, 256],
            pruning_ratios: vec![0.8],
            conditions: Condition::ALL.to_vec(),
            seeds: "0..2".into(),
            fidelity: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub input_len: usize,
    pub output_len: usize,
    pub pruning_ratios: Vec<f64>,
    pub bits_per_cell: Vec<u32>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            input_len: 1024,
            output_len: 64,
            pruning_ratios: vec![0.5, 0.8],
            bits_per_cell: vec![1, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationSection {
    pub sigma_mv: Vec<f64>,
    pub seeds: String,
}

impl Default for VariationSection {
    fn default() -> Self {
        Self {
            sigma_mv: vec![0.0, 27.0, 54.0, 108.0],
            seeds: "0..200".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceLogSection {
    pub input_len: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TraceLogSection {
    fn default() -> Self {
        Self {
            input_len: 1024,
            steps: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed list applied to whichever experiment runs.
    pub seeds: Option<String>,
    pub array: ArraySection,
    pub device: Option<DeviceParams<f64>>,
    pub cache: CacheSection,
    pub adc: AdcSection,
    pub trace: TraceSection,
    pub equivalence: EquivalenceSection,
    pub sweep: SweepSection,
    pub compare: CompareSection,
    pub variation: VariationSection,
    pub trace_log: TraceLogSection,
    pub cost: Option<CostParams<f64>>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ratios = std::iter::once(&self.cache.pruning_ratio)
            .chain(&self.sweep.pruning_ratios)
            .chain(&self.compare.pruning_ratios);
        for r in ratios {
            if !(0.0..1.0).contains(r) {
                bail!("pruning ratio {r} must lie in [0, 1)");
            }
        }
        self.pipeline_config()
            .map(|_| ())
            .context("inconsistent array/cache/adc configuration")
    }

    pub fn n_slots(&self) -> usize {
        self.cache.h_heavy + self.cache.m_reserved
    }

    pub fn k_top(&self) -> usize {
        k_for_pruning_ratio(self.n_slots(), self.cache.pruning_ratio)
    }

    pub fn array_config(&self, n_rows: usize) -> ArrayConfig<f64> {
        let a = &self.array;
        let mut cfg = ArrayConfig::with_radii(a.d, n_rows, a.key_radius, a.query_radius);
        cfg.c_sl = a.c_sl;
        cfg.c_acc = a.c_acc;
        if let Some(dev) = &self.device {
            cfg.device = dev.clone();
        }
        cfg
    }

    pub fn adc_config(&self, array: &ArrayConfig<f64>) -> AdcConfig<f64> {
        match self.adc.calibration {
            Calibration::FullRange => AdcConfig::calibrated(array, self.adc.bits),
            Calibration::UnitLsb => AdcConfig::unit_lsb(array, self.adc.bits),
        }
    }

    pub fn cost_params(&self, array: &ArrayConfig<f64>) -> CostParams<f64> {
        let mut p = self
            .cost
            .clone()
            .unwrap_or_else(|| CostParams::for_array(array));
        p.n_adcs = self.adc.n_adcs;
        p
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig<f64>> {
        let mut p = PipelineConfig::new(
            self.array.d,
            self.cache.h_heavy,
            self.cache.m_reserved,
            self.k_top(),
            self.adc.n_adcs,
        )?;
        let array = self.array_config(self.n_slots());
        p.race = camcim_core::cam::RaceConfig::new(self.k_top(), &array)?;
        p.charge = camcim_core::charge::ChargeConfig::new(&array);
        p.adc = self.adc_config(&array);
        p.prune = camcim_core::pruning::PruneConfig::new(
            self.cache.h_heavy,
            self.cache.m_reserved,
            self.k_top(),
            &array,
        );
        p.array = array;
        p.validate()?;
        Ok(p)
    }

    /// Seeds for an experiment: the global override, else the section's.
    pub fn seeds_for(&self, section: &str) -> Result<Vec<u64>> {
        parse_seeds(self.seeds.as_deref().unwrap_or(section))
    }
}

/// Parse `a..b`, `a..=b`, `a,b,c` or a single seed.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let s = spec.trim();
    if let Some((a, b)) = s.split_once("..") {
        let (inclusive, b) = match b.strip_prefix('=') {
            Some(rest) => (true, rest),
            None => (false, b),
        };
        let a: u64 = a
            .trim()
            .parse()
            .with_context(|| format!("bad seed range start in `{s}`"))?;
        let b: u64 = b
            .trim()
            .parse()
            .with_context(|| format!("bad seed range end in `{s}`"))?;
        let end = if inclusive { b + 1 } else { b };
        if end <= a {
            bail!("empty seed range `{s}`");
        }
        return Ok((a..end).collect());
    }
    let seeds = s
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<u64>()
                .with_context(|| format!("bad seed `{x}`"))
        })
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}
