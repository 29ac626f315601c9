use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Bank timing in controller cycles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct TimingParams {
    pub tRCD: u64,
    pub tRP: u64,
    pub tCAS: u64,
    pub tRC: u64,
    pub tBURST: u64,
    /// Nanoseconds per cycle; only scales reported times.
    pub clock_period: f64,
}

impl TimingParams {
    /// GDDR5-like defaults.
    pub fn gddr() -> Self {
        TimingParams {
            tRCD: 12,
            tRP: 12,
            tCAS: 12,
            tRC: 40,
            tBURST: 2,
            clock_period: 1.0,
        }
    }

    /// DDR3-like defaults.
    pub fn ddr() -> Self {
        TimingParams {
            tRCD: 14,
            tRP: 14,
            tCAS: 14,
            tRC: 49,
            tBURST: 4,
            clock_period: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tRCD", self.tRCD),
            ("tRP", self.tRP),
            ("tCAS", self.tCAS),
            ("tRC", self.tRC),
            ("tBURST", self.tBURST),
        ] {
            if v == 0 {
                return Err(SimError::invalid("timing", format!("{name} must be >= 1")));
            }
        }
        if self.tRC < self.tRCD || self.tRC < self.tRP {
            return Err(SimError::invalid("timing", "tRC must be >= tRCD and >= tRP"));
        }
        if !(self.clock_period > 0.0) {
            return Err(SimError::invalid("timing", "clock_period must be > 0"));
        }
        Ok(())
    }

    pub fn hit_latency(&self) -> u64 {
        self.tCAS + self.tBURST
    }

    pub fn idle_miss_latency(&self) -> u64 {
        self.tRCD + self.tCAS + self.tBURST
    }

    pub fn conflict_latency(&self) -> u64 {
        self.tRP + self.tRCD + self.tCAS + self.tBURST
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyParams {
    pub e_activate: f64,
    pub e_read: f64,
    pub e_write: f64,
    /// Per bank, per cycle.
    pub p_background: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            e_activate: 15.0,
            e_read: 4.0,
            e_write: 4.5,
            p_background: 0.02,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        for v in [self.e_activate, self.e_read, self.e_write, self.p_background] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::invalid("energy", "parameters must be finite and >= 0"));
            }
        }
        Ok(())
    }
}
