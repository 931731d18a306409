//! Ground-truth counter sub-array: 1-byte per-row activation counters,
//! read-modify-write servicing, Alerts and mitigations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{CounterRef, DramGeometry};

/// Alert/RFM behaviour shared by every policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationPolicy {
    /// Master switch; when false no Alerts fire and no proactive mitigation runs.
    pub enabled: bool,
    /// Back-Off threshold before the buffering adjustment (32).
    pub n_bo: u8,
    pub rfms_per_alert: u32,
    /// Slots between proactive mitigations per bank; `None` disables them.
    pub proactive_interval_slots: Option<u64>,
}

impl Default for MitigationPolicy {
    fn default() -> Self {
        // 2 x tREFI / tRC = 2 x 3900ns / 46ns ~= 168 activation slots.
        Self {
            enabled: true,
            n_bo: 32,
            rfms_per_alert: 1,
            proactive_interval_slots: Some(168),
        }
    }
}

impl MitigationPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            proactive_interval_slots: None,
            ..Self::default()
        }
    }

    /// Alert threshold applied to stored values when up to `staleness`
    /// activations may still be buffered.
    pub fn effective_threshold(&self, staleness: u32) -> Option<u8> {
        self.enabled.then(|| self.n_bo.saturating_sub(staleness.min(255) as u8).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MitigationKind {
    Alert,
    Proactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RmwOutcome {
    /// Stored value after the update (0 when the update raised an Alert).
    pub value: u8,
    /// Value that crossed the threshold, if an Alert fired.
    pub alert_value: Option<u8>,
}

/// Max-segment-tree over one bank's counters; ties resolve to the lowest index.
#[derive(Debug, Clone)]
struct MaxTree {
    leaves: usize,
    nodes: Vec<u8>,
}

impl MaxTree {
    fn new(len: usize) -> Self {
        let leaves = len.next_power_of_two();
        Self {
            leaves,
            nodes: vec![0; 2 * leaves],
        }
    }

    fn set(&mut self, index: usize, value: u8) {
        let mut i = index + self.leaves;
        self.nodes[i] = value;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i].max(self.nodes[2 * i + 1]);
        }
    }

    fn argmax(&self) -> (usize, u8) {
        let mut i = 1;
        while i < self.leaves {
            i = if self.nodes[2 * i] >= self.nodes[2 * i + 1] { 2 * i } else { 2 * i + 1 };
        }
        (i - self.leaves, self.nodes[i])
    }
}

#[derive(Debug, Clone)]
struct BankCounters {
    values: Vec<u8>,
    tree: MaxTree,
}

impl BankCounters {
    fn new(len: usize) -> Self {
        Self {
            values: vec![0; len],
            tree: MaxTree::new(len),
        }
    }

    fn set(&mut self, index: usize, value: u8) {
        if self.values[index] != value {
            self.values[index] = value;
            self.tree.set(index, value);
        }
    }
}

/// Per-bank grid of counters. Banks are allocated on first touch.
#[derive(Debug, Clone)]
pub struct CounterArray {
    geometry: DramGeometry,
    banks: Vec<Option<BankCounters>>,
    n_bo_effective: Option<u8>,
    alerts: u64,
    mitigations: u64,
}

impl CounterArray {
    /// `n_bo_effective` of `None` disables Alerts.
    pub fn new(geometry: DramGeometry, n_bo_effective: Option<u8>) -> Self {
        Self {
            geometry,
            banks: vec![None; geometry.banks as usize],
            n_bo_effective,
            alerts: 0,
            mitigations: 0,
        }
    }

    pub fn geometry(&self) -> &DramGeometry {
        &self.geometry
    }

    pub fn n_bo_effective(&self) -> Option<u8> {
        self.n_bo_effective
    }

    pub fn alerts(&self) -> u64 {
        self.alerts
    }

    pub fn mitigations(&self) -> u64 {
        self.mitigations
    }

    fn bank_mut(&mut self, bank: u32) -> &mut BankCounters {
        let len = self.geometry.counters_per_bank();
        self.banks[bank as usize].get_or_insert_with(|| BankCounters::new(len))
    }

    pub fn get(&self, r: CounterRef) -> u8 {
        match &self.banks[r.bank as usize] {
            Some(b) => b.values[r.flat_index(&self.geometry)],
            None => 0,
        }
    }

    fn set(&mut self, r: CounterRef, value: u8) {
        let idx = r.flat_index(&self.geometry);
        self.bank_mut(r.bank).set(idx, value);
    }

    /// True when `value` would raise an Alert.
    pub fn crosses_threshold(&self, value: u8) -> bool {
        matches!(self.n_bo_effective, Some(t) if value >= t)
    }

    /// Adds `increments` (saturating at 255); an Alert resets the counter.
    pub fn apply_rmw(&mut self, r: CounterRef, increments: u32) -> Result<RmwOutcome> {
        self.geometry.check_ref(r)?;
        debug_assert!(increments >= 1);
        let value = (self.get(r) as u32 + increments).min(255) as u8;
        Ok(self.store_checked(r, value))
    }

    /// Overwrites the stored value, then applies the Alert check.
    pub fn apply_writeback(&mut self, r: CounterRef, value: u8) -> Result<RmwOutcome> {
        self.geometry.check_ref(r)?;
        Ok(self.store_checked(r, value))
    }

    fn store_checked(&mut self, r: CounterRef, value: u8) -> RmwOutcome {
        if self.crosses_threshold(value) {
            self.alert_reset(r);
            RmwOutcome {
                value: 0,
                alert_value: Some(value),
            }
        } else {
            self.set(r, value);
            RmwOutcome {
                value,
                alert_value: None,
            }
        }
    }

    /// Records an Alert serviced by one RFM that resets `r`.
    pub fn alert_reset(&mut self, r: CounterRef) {
        self.alerts += 1;
        self.mitigate(r);
    }

    /// Resets `r` and counts one mitigation.
    pub fn mitigate(&mut self, r: CounterRef) {
        self.mitigations += 1;
        self.set(r, 0);
    }

    /// Largest stored counter in the bank (lowest index on ties), if nonzero.
    pub fn argmax(&self, bank: u32) -> Option<(CounterRef, u8)> {
        let b = self.banks.get(bank as usize)?.as_ref()?;
        let (idx, value) = b.tree.argmax();
        (value > 0).then(|| (CounterRef::from_flat(bank, idx, &self.geometry), value))
    }

    /// Mitigates the bank's hottest counter, if any counter is nonzero.
    pub fn proactive_tick(&mut self, bank: u32) -> Option<CounterRef> {
        let (r, _) = self.argmax(bank)?;
        self.mitigate(r);
        Some(r)
    }

    /// Banks that have been touched at least once.
    pub fn touched_banks(&self) -> impl Iterator<Item = u32> + '_ {
        self.banks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_some())
            .map(|(i, _)| i as u32)
    }

    /// Nonzero counters in (bank, row_id, byte_id) order.
    pub fn nonzero(&self) -> Vec<(CounterRef, u8)> {
        let mut out = Vec::new();
        for (bank, b) in self.banks.iter().enumerate() {
            let Some(b) = b else { continue };
            for (idx, &v) in b.values.iter().enumerate() {
                if v != 0 {
                    out.push((CounterRef::from_flat(bank as u32, idx, &self.geometry), v));
                }
            }
        }
        out
    }

    /// CSV dump `bank,row_id,byte_id,value` of every nonzero counter.
    pub fn dump_csv<W: Write>(&self, out: W) -> Result<()> {
        write_counters(&self.nonzero(), out)
    }
}

/// Writes `(counter, value)` pairs in the [`CounterArray::dump_csv`] format.
pub fn write_counters<W: Write>(counters: &[(CounterRef, u8)], mut out: W) -> Result<()> {
    writeln!(out, "bank,row_id,byte_id,value")?;
    for (r, v) in counters {
        writeln!(out, "{},{},{},{}", r.bank, r.row_id, r.byte_id, v)?;
    }
    Ok(())
}
