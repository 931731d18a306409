//! Dynamic-energy accounting for counter maintenance, in units of one data
//! row activation+precharge.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Data row ACT+PRE.
    pub e_act: f64,
    /// One data column access.
    pub e_col: f64,
    /// Counter row ACT+PRE plus its first 1-byte RMW, relative to `e_act`.
    pub counter_act_factor: f64,
    /// Each further 1-byte RMW serviced by the same counter row activation.
    pub e_extra_rmw: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            e_act: 1.0,
            e_col: 0.5,
            counter_act_factor: 0.19,
            e_extra_rmw: 0.5 / 8.0,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.e_act, self.e_col, self.counter_act_factor, self.e_extra_rmw]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err(SimError::Config("energy parameters must be finite and > 0".into()));
        }
        if self.counter_act_factor >= 1.0 {
            return Err(SimError::Config("energy.counter_act_factor must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Raw event counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub data_acts: u64,
    pub data_cols: u64,
    pub counter_acts: u64,
    /// Counter byte updates charged as RMWs: one per serviced activation plus
    /// one per writeback byte.
    pub counter_rmw_bytes: u64,
    pub mitigation_acts: u64,
}

/// Energy terms of a ledger; every `*_energy` field is in `e_act` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub baseline: f64,
    pub counter_activation: f64,
    pub extra_rmw: f64,
    pub mitigation: f64,
    pub extra: f64,
    pub overhead: f64,
}

impl EnergyLedger {
    pub fn breakdown(&self, params: &EnergyParams) -> Result<EnergyBreakdown> {
        if self.data_acts == 0 {
            return Err(SimError::UndefinedRatio("energy overhead of a ledger with no data activations"));
        }
        debug_assert!(self.counter_rmw_bytes >= self.counter_acts);
        let baseline = self.data_acts as f64 * params.e_act + self.data_cols as f64 * params.e_col;
        let act_cost = params.counter_act_factor * params.e_act;
        let counter_activation = self.counter_acts as f64 * act_cost;
        let extra_rmw = self.counter_rmw_bytes.saturating_sub(self.counter_acts) as f64 * params.e_extra_rmw;
        let mitigation = self.mitigation_acts as f64 * act_cost;
        let extra = counter_activation + extra_rmw + mitigation;
        Ok(EnergyBreakdown {
            baseline,
            counter_activation,
            extra_rmw,
            mitigation,
            extra,
            overhead: extra / baseline,
        })
    }

    /// Extra dynamic energy relative to the insecure baseline.
    pub fn overhead(&self, params: &EnergyParams) -> Result<f64> {
        self.breakdown(params).map(|b| b.overhead)
    }
}
