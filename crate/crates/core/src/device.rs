//! Behavioral FeFET model.
//!
//! A device is a programmable threshold voltage picked from a discrete
//! ladder of levels, plus a sampled variation offset. The read law is
//! piecewise linear: cutoff below the effective threshold, constant
//! transconductance above it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::scalar::Scalar;

/// When the threshold-voltage variation is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationMode {
    /// A fresh offset on every program event.
    #[default]
    PerProgram,
    /// One offset per physical device, drawn when the array is built and
    /// kept across re-programming.
    PerDevice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams<T> {
    /// Nominal threshold voltages, strictly increasing (volts).
    pub vth_levels: Vec<T>,
    /// Standard deviation of the threshold variation (volts).
    pub sigma_vth: T,
    /// Transconductance slope (amps/volt).
    pub gm: T,
    /// Off-state leakage (amps).
    pub i_off: T,
    /// Nominal read voltage (volts).
    pub v_read: T,
    pub vdd: T,
    #[serde(default)]
    pub variation: VariationMode,
}

impl<T: Scalar> DeviceParams<T> {
    /// Equally spaced threshold ladder `first, first + spacing, ...`.
    pub fn with_uniform_levels(n_levels: usize, first: T, spacing: T) -> Self {
        let vth_levels: Vec<T> = (0..n_levels)
            .map(|i| first + spacing * T::of_usize(i))
            .collect();
        let top = vth_levels.last().copied().unwrap_or(first);
        Self {
            vth_levels,
            sigma_vth: T::zero(),
            gm: T::of(10e-6),
            i_off: T::of(1e-9),
            v_read: top + spacing * T::of(1.5),
            vdd: T::one(),
            variation: VariationMode::PerProgram,
        }
    }

    /// Default calibration for a ladder of `n_levels` thresholds: 0.1 V
    /// spacing starting at 0.1 V, read 0.15 V above the top level, 1 V
    /// supply. Five levels read at 0.65 V.
    pub fn default_for_levels(n_levels: usize) -> Self {
        Self::with_uniform_levels(n_levels, T::of(0.1), T::of(0.1))
    }

    pub fn with_sigma(mut self, sigma_vth: T) -> Self {
        self.sigma_vth = sigma_vth;
        self
    }

    pub fn n_levels(&self) -> usize {
        self.vth_levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.vth_levels.len() >= 2,
            Parameter,
            "need at least two threshold levels"
        );
        ensure!(
            self.vth_levels.windows(2).all(|w| w[0] < w[1]),
            Parameter,
            "threshold levels must be strictly increasing"
        );
        ensure!(
            self.sigma_vth >= T::zero(),
            Parameter,
            "sigma_vth must be >= 0"
        );
        ensure!(self.gm > T::zero(), Parameter, "gm must be > 0");
        ensure!(self.i_off >= T::zero(), Parameter, "i_off must be >= 0");
        ensure!(
            self.v_read > T::zero() && self.v_read <= self.vdd,
            Parameter,
            "v_read must lie in (0, vdd]"
        );
        Ok(())
    }

    fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        // Always consume one draw so random streams line up across sigma.
        let z: f64 = rng.sample(StandardNormal);
        self.sigma_vth * T::of(z)
    }
}

/// One programmed device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeFetState<T> {
    pub level_index: usize,
    pub vth_offset: T,
}

impl<T: Scalar> FeFetState<T> {
    /// A device at `level_index` with no variation.
    pub fn nominal(level_index: usize) -> Self {
        Self {
            level_index,
            vth_offset: T::zero(),
        }
    }

    /// A freshly fabricated device: level 0, with an offset drawn now. In
    /// [`VariationMode::PerDevice`] this offset persists for its lifetime.
    pub fn fabricate<R: Rng + ?Sized>(params: &DeviceParams<T>, rng: &mut R) -> Self {
        Self {
            level_index: 0,
            vth_offset: params.sample_offset(rng),
        }
    }

    /// Program the device to `target_level`.
    pub fn program<R: Rng + ?Sized>(
        &self,
        target_level: usize,
        params: &DeviceParams<T>,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(
            target_level < params.vth_levels.len(),
            Parameter,
            "level {target_level} out of range (have {} levels)",
            params.vth_levels.len()
        );
        let vth_offset = match params.variation {
            VariationMode::PerProgram => params.sample_offset(rng),
            VariationMode::PerDevice => self.vth_offset,
        };
        Ok(Self {
            level_index: target_level,
            vth_offset,
        })
    }

    pub fn effective_vth(&self, params: &DeviceParams<T>) -> T {
        params.vth_levels[self.level_index] + self.vth_offset
    }

    /// `i_off + gm * max(0, v_gate - vth_eff)`.
    pub fn read_current(&self, v_gate: T, params: &DeviceParams<T>) -> T {
        debug_assert!(v_gate >= T::zero() && v_gate <= params.vdd + T::of(1e-12));
        let overdrive = v_gate - self.effective_vth(params);
        params.i_off + params.gm * overdrive.max(T::zero())
    }
}
