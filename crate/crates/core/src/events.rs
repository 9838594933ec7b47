//! Cost-bearing events emitted by the simulated hardware.
//!
//! Events carry counts (and, for sensing, the physical energy drawn by the
//! sense lines). Energies and delays are assigned at tally time from a
//! [`CostParams`](crate::cost::CostParams) table, so one log can be priced
//! under several calibrations.

use serde::{Deserialize, Serialize};

/// Accounting phase of an event. Phases within a step never overlap in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// CAM-mode precharge and discharge race.
    Race,
    /// Charge sharing into the accumulators.
    Share,
    /// Static eviction search.
    Evict,
    /// Approximate full-array scoring (baseline designs only).
    Approx,
    /// Digital top-k sorting or thresholding (baseline designs only).
    Sort,
    /// Current-domain sensing and ADC conversion.
    Adc,
    /// Key programming.
    Write,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Race,
        Phase::Share,
        Phase::Evict,
        Phase::Approx,
        Phase::Sort,
        Phase::Adc,
        Phase::Write,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Race => "race",
            Phase::Share => "share",
            Phase::Evict => "evict",
            Phase::Approx => "approx",
            Phase::Sort => "sort",
            Phase::Adc => "adc",
            Phase::Write => "write",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event<T> {
    /// Opens a decode step. Every other event belongs to the latest step.
    StepStart,
    /// Sense lines precharged to the supply.
    Precharge { lines: usize },
    /// The race froze at `freeze_time` seconds.
    RaceFreeze { freeze_time: T },
    /// Top-k detector comparator switched.
    DetectorSwitch,
    /// Charge-sharing switches closed on `rows` rows.
    ChargeShare { rows: usize },
    /// Eviction comparator switched.
    EvictionSearch,
    /// Static sensing of `rows` sense lines, drawing `energy` joules.
    Sense { rows: usize, energy: T },
    /// One parallel ADC round of `conversions` conversions.
    AdcRound { conversions: usize },
    /// One row write covering `dims` key dimensions.
    Write { dims: usize },
    /// The top-k detector reference device reprogrammed.
    FdynProgram,
    /// One parallel round of low-precision conversions (baselines).
    ApproxRound { conversions: usize },
    /// Sorting network over `n` candidates (baselines).
    Sort { n: usize },
    /// `count` digital threshold comparisons (baselines).
    Threshold { count: usize },
}

impl<T> Event<T> {
    pub fn phase(&self) -> Option<Phase> {
        match self {
            Event::StepStart => None,
            Event::Precharge { .. }
            | Event::RaceFreeze { .. }
            | Event::DetectorSwitch
            | Event::FdynProgram => Some(Phase::Race),
            Event::ChargeShare { .. } => Some(Phase::Share),
            Event::EvictionSearch => Some(Phase::Evict),
            Event::Sense { .. } | Event::AdcRound { .. } => Some(Phase::Adc),
            Event::Write { .. } => Some(Phase::Write),
            Event::ApproxRound { .. } => Some(Phase::Approx),
            Event::Sort { .. } | Event::Threshold { .. } => Some(Phase::Sort),
        }
    }
}

/// Append-only event log owned by one simulation trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog<T> {
    events: Vec<Event<T>>,
}

impl<T> Default for EventLog<T> {
    fn default() -> Self {
        Self { events: Vec::new() }
    }
}

impl<T> EventLog<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: Event<T>) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[Event<T>] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn clear(&mut self) {
        self.events.clear();
    }

    pub fn extend(&mut self, other: EventLog<T>) {
        self.events.extend(other.events);
    }

    /// Events since the most recent [`Event::StepStart`].
    pub fn current_step(&self) -> &[Event<T>] {
        let start = self
            .events
            .iter()
            .rposition(|e| matches!(e, Event::StepStart))
            .map_or(0, |i| i + 1);
        &self.events[start..]
    }

    pub fn count(&self, pred: impl Fn(&Event<T>) -> bool) -> usize {
        self.events.iter().filter(|e| pred(e)).count()
    }
}
