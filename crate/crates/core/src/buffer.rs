//! Per-bank counter request buffers.
//!
//! Every data-row activation produces one counter request. Instead of
//! servicing it immediately (as Chronus does) the request is buffered so that
//! several read-modify-writes to the same counter row can share one counter
//! row activation. All designs share the same removal triggers:
//!
//! * `m_ready`: a row has accumulated `m_batch` requests,
//! * `buffer_full`: no free entry is left; the victim row depends on the design,
//! * `k_limit`: a counter has `k_limit` buffered increments.
//!
//! At most one batch is emitted per insert, i.e. per data activation shadow.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::CounterRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Chronus,
    PerRow,
    UnifiedFcfs,
    UnifiedSorted,
    UnifiedApproxMax,
}

impl Design {
    pub const ALL: [Design; 5] = [
        Design::Chronus,
        Design::UnifiedFcfs,
        Design::UnifiedApproxMax,
        Design::UnifiedSorted,
        Design::PerRow,
    ];

    pub const BUFFERED: [Design; 4] = [
        Design::PerRow,
        Design::UnifiedFcfs,
        Design::UnifiedSorted,
        Design::UnifiedApproxMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Design::Chronus => "chronus",
            Design::PerRow => "perrow",
            Design::UnifiedFcfs => "unified_fcfs",
            Design::UnifiedSorted => "unified_sorted",
            Design::UnifiedApproxMax => "unified_approxmax",
        }
    }

    pub fn is_buffered(self) -> bool {
        self != Design::Chronus
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Design::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| SimError::Config(format!("unknown buffer design {s:?}")))
    }
}

/// How the `k_limit` trigger is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KTrigger {
    /// Flush when buffered increments (RepCount + 1) reach K. Staleness <= K.
    Pending,
    /// Flush when RepCount itself reaches K. Staleness <= K + 1.
    RepCount,
}

impl FromStr for KTrigger {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(KTrigger::Pending),
            "repcount" => Ok(KTrigger::RepCount),
            _ => Err(SimError::Config(format!("unknown k_trigger {s:?}"))),
        }
    }
}

impl KTrigger {
    pub fn name(self) -> &'static str {
        match self {
            KTrigger::Pending => "pending",
            KTrigger::RepCount => "repcount",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferConfig {
    pub design: Design,
    /// Unified capacity in entries. PerRow always holds `m_batch` per counter row.
    pub capacity: usize,
    pub m_batch: usize,
    pub k_limit: u32,
    pub k_trigger: KTrigger,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            design: Design::UnifiedApproxMax,
            capacity: 64,
            m_batch: 4,
            k_limit: 4,
            k_trigger: KTrigger::Pending,
        }
    }
}

impl BufferConfig {
    pub fn with_design(design: Design) -> Self {
        Self {
            design,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_batch == 0 {
            return Err(SimError::Config("buffer.m_batch must be >= 1".into()));
        }
        if self.k_limit == 0 {
            return Err(SimError::Config("buffer.k_limit must be >= 1".into()));
        }
        if self.k_limit > 127 {
            return Err(SimError::Config("buffer.k_limit must fit the 7-bit RepCount".into()));
        }
        if self.design.is_buffered() && self.design != Design::PerRow && self.capacity < self.m_batch {
            return Err(SimError::Config(format!(
                "buffer.capacity {} must be >= buffer.m_batch {}",
                self.capacity, self.m_batch
            )));
        }
        Ok(())
    }

    /// Pending-increment count at which a counter is force-flushed.
    fn flush_at(&self) -> u32 {
        match self.k_trigger {
            KTrigger::Pending => self.k_limit,
            KTrigger::RepCount => self.k_limit + 1,
        }
    }

    /// Maximum number of activations a counter update can lag behind.
    pub fn staleness_bound(&self) -> u32 {
        if self.design.is_buffered() {
            self.flush_at()
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Increment,
    Writeback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferEntry {
    pub row_id: u16,
    pub byte_id: u16,
    pub rep_count: u8,
    pub kind: EntryKind,
    pub wb_value: u8,
    pub arrival: u64,
}

impl BufferEntry {
    pub fn pending(&self) -> u32 {
        match self.kind {
            EntryKind::Increment => self.rep_count as u32 + 1,
            EntryKind::Writeback => 0,
        }
    }

    fn to_item(self) -> BatchItem {
        let op = match self.kind {
            EntryKind::Increment => ItemOp::Increment(self.pending()),
            EntryKind::Writeback => ItemOp::Writeback(self.wb_value),
        };
        BatchItem {
            byte_id: self.byte_id,
            op,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    MReady,
    BufferFull,
    KLimit,
    Drain,
    /// Unbuffered service (Chronus).
    Immediate,
}

impl Trigger {
    pub const ALL: [Trigger; 5] = [
        Trigger::MReady,
        Trigger::BufferFull,
        Trigger::KLimit,
        Trigger::Drain,
        Trigger::Immediate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Trigger::MReady => "m_ready",
            Trigger::BufferFull => "buffer_full",
            Trigger::KLimit => "k_limit",
            Trigger::Drain => "drain",
            Trigger::Immediate => "immediate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemOp {
    Increment(u32),
    Writeback(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub byte_id: u16,
    pub op: ItemOp,
}

/// Requests serviced by one counter-row activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceBatch {
    pub bank: u32,
    pub row_id: u16,
    pub items: Vec<BatchItem>,
    pub trigger: Trigger,
}

impl ServiceBatch {
    pub fn counter(&self, item: &BatchItem) -> CounterRef {
        CounterRef::new(self.bank, self.row_id, item.byte_id)
    }
}

/// Baseline service: one activation per request, nothing buffered.
pub fn chronus_step(r: CounterRef) -> ServiceBatch {
    ServiceBatch {
        bank: r.bank,
        row_id: r.row_id,
        items: vec![BatchItem {
            byte_id: r.byte_id,
            op: ItemOp::Increment(1),
        }],
        trigger: Trigger::Immediate,
    }
}

/// Counter request buffer for one bank.
#[derive(Debug, Clone)]
pub struct RequestBuffer {
    bank: u32,
    config: BufferConfig,
    capacity: usize,
    // Entries grouped by counter row, each group in arrival order.
    rows: Vec<Vec<BufferEntry>>,
    len: usize,
    next_arrival: u64,
    // ApproxMax metadata: (row_id, entry count).
    tracked: Option<(u16, usize)>,
}

impl RequestBuffer {
    pub fn new(bank: u32, counter_rows: u32, config: BufferConfig) -> Self {
        let capacity = match config.design {
            Design::PerRow => config.m_batch * counter_rows as usize,
            Design::Chronus => 0,
            _ => config.capacity,
        };
        Self {
            bank,
            config,
            capacity,
            rows: vec![Vec::new(); counter_rows as usize],
            len: 0,
            next_arrival: 0,
            tracked: None,
        }
    }

    pub fn config(&self) -> &BufferConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn row_len(&self, row_id: u16) -> usize {
        self.rows[row_id as usize].len()
    }

    /// ApproxMax `(row_id, count)` metadata, if tracking.
    pub fn tracked(&self) -> Option<(u16, usize)> {
        self.tracked
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.rows.iter().flatten()
    }

    pub fn find(&self, r: CounterRef) -> Option<&BufferEntry> {
        self.rows[r.row_id as usize].iter().find(|e| e.byte_id == r.byte_id)
    }

    fn find_mut(&mut self, r: CounterRef) -> Option<&mut BufferEntry> {
        self.rows[r.row_id as usize].iter_mut().find(|e| e.byte_id == r.byte_id)
    }

    /// Buffers one counter increment, returning the batch serviced in this
    /// activation's shadow, if any.
    ///
    /// The caller must have resolved writeback entries for `r` first
    /// (see [`RequestBuffer::writeback_hit`]).
    pub fn insert(&mut self, r: CounterRef) -> Option<ServiceBatch> {
        debug_assert_eq!(r.bank, self.bank);
        if self.config.design == Design::Chronus {
            return Some(chronus_step(r));
        }
        let flush_at = self.config.flush_at();
        let m = self.config.m_batch;

        if let Some(entry) = self.find_mut(r) {
            debug_assert_eq!(entry.kind, EntryKind::Increment, "increment hit a writeback entry");
            entry.rep_count += 1;
            let pending = entry.pending();
            self.note_insert(r.row_id);
            if pending >= flush_at {
                return Some(self.take_row(r.row_id, Trigger::KLimit, Some(r.byte_id), None));
            }
            return None;
        }

        // The new request completes an M-batch (or needs no buffering at all):
        // service the row together with it instead of allocating.
        let row_len = self.rows[r.row_id as usize].len();
        if flush_at <= 1 || row_len + 1 >= m {
            let trigger = if flush_at <= 1 { Trigger::KLimit } else { Trigger::MReady };
            let incoming = BatchItem {
                byte_id: r.byte_id,
                op: ItemOp::Increment(1),
            };
            return Some(self.take_row(r.row_id, trigger, None, Some(incoming)));
        }

        let mut batch = None;
        if self.len >= self.capacity {
            let victim = self.victim_row();
            batch = Some(self.take_row(victim, Trigger::BufferFull, None, None));
        }
        self.allocate(r, EntryKind::Increment, 0);
        batch
    }

    fn allocate(&mut self, r: CounterRef, kind: EntryKind, wb_value: u8) {
        let arrival = self.next_arrival;
        self.next_arrival += 1;
        self.rows[r.row_id as usize].push(BufferEntry {
            row_id: r.row_id,
            byte_id: r.byte_id,
            rep_count: 0,
            kind,
            wb_value,
            arrival,
        });
        self.len += 1;
        self.note_insert(r.row_id);
    }

    // ApproxMax: one CAM lookup yields the inserted row's count, compared
    // against the tracked maximum.
    fn note_insert(&mut self, row_id: u16) {
        if self.config.design != Design::UnifiedApproxMax {
            return;
        }
        let count = self.rows[row_id as usize].len();
        self.tracked = match self.tracked {
            Some((row, _)) if row == row_id => Some((row_id, count)),
            Some((row, max)) if count <= max => Some((row, max)),
            _ => Some((row_id, count)),
        };
    }

    fn note_removal(&mut self, row_id: u16) {
        if self.config.design != Design::UnifiedApproxMax {
            return;
        }
        if matches!(self.tracked, Some((row, _)) if row == row_id) {
            // Fall back to the row of the oldest buffered entry.
            self.tracked = self.oldest_row().map(|row| (row, self.rows[row as usize].len()));
        }
    }

    fn oldest_row(&self) -> Option<u16> {
        self.rows
            .iter()
            .filter_map(|row| row.first())
            .min_by_key(|e| e.arrival)
            .map(|e| e.row_id)
    }

    /// Row whose entries are evicted when the buffer is full.
    ///
    /// # Panics
    /// If the buffer is empty.
    pub fn victim_row(&self) -> u16 {
        assert!(!self.is_empty(), "victim_row on an empty buffer");
        match self.config.design {
            Design::UnifiedFcfs => self.oldest_row().expect("nonempty"),
            Design::UnifiedApproxMax => self.tracked.expect("nonempty buffer tracks a row").0,
            Design::UnifiedSorted | Design::PerRow | Design::Chronus => {
                let mut best = 0usize;
                for (i, row) in self.rows.iter().enumerate() {
                    if row.len() > self.rows[best].len() {
                        best = i;
                    }
                }
                best as u16
            }
        }
    }

    /// Removes up to `m_batch` entries of `row_id` (the `priority` byte
    /// first, then oldest first) plus an optional incoming request.
    fn take_row(
        &mut self,
        row_id: u16,
        trigger: Trigger,
        priority: Option<u16>,
        incoming: Option<BatchItem>,
    ) -> ServiceBatch {
        let m = self.config.m_batch;
        let room = m - incoming.is_some() as usize;
        let row = &mut self.rows[row_id as usize];
        let mut taken: Vec<BufferEntry> = Vec::with_capacity(m);
        if let Some(byte) = priority {
            if let Some(pos) = row.iter().position(|e| e.byte_id == byte) {
                taken.push(row.remove(pos));
            }
        }
        let extra = room.saturating_sub(taken.len()).min(row.len());
        taken.extend(row.drain(..extra));
        taken.sort_by_key(|e| e.arrival);
        self.len -= taken.len();

        let mut items: Vec<BatchItem> = taken.into_iter().map(BufferEntry::to_item).collect();
        items.extend(incoming);
        self.note_removal(row_id);
        ServiceBatch {
            bank: self.bank,
            row_id,
            items,
            trigger,
        }
    }

    /// Whether a writeback for `row_id` can be buffered without overflowing
    /// the buffer or completing an M-batch outside an activation shadow.
    pub fn can_accept_writeback(&self, row_id: u16) -> bool {
        self.config.design.is_buffered()
            && self.len < self.capacity
            && self.rows[row_id as usize].len() + 2 <= self.config.m_batch
    }

    /// Buffers a dirty-eviction writeback; see [`RequestBuffer::can_accept_writeback`].
    pub fn insert_writeback(&mut self, r: CounterRef, value: u8) {
        debug_assert!(self.can_accept_writeback(r.row_id));
        debug_assert!(self.find(r).is_none());
        self.allocate(r, EntryKind::Writeback, value);
    }

    /// Buffered writeback value for `r`, which the caller may update in place.
    pub fn writeback_hit(&mut self, r: CounterRef) -> Option<&mut u8> {
        self.find_mut(r)
            .filter(|e| e.kind == EntryKind::Writeback)
            .map(|e| &mut e.wb_value)
    }

    /// Drops the entry for `r`, if any.
    pub fn remove(&mut self, r: CounterRef) -> Option<BufferEntry> {
        let row = &mut self.rows[r.row_id as usize];
        let pos = row.iter().position(|e| e.byte_id == r.byte_id)?;
        let entry = row.remove(pos);
        self.len -= 1;
        self.note_removal(r.row_id);
        Some(entry)
    }

    /// Empties the buffer: ascending row, then arrival, `m_batch` items per batch.
    pub fn drain(&mut self) -> Vec<ServiceBatch> {
        let mut out = Vec::new();
        for row_id in 0..self.rows.len() as u16 {
            while !self.rows[row_id as usize].is_empty() {
                out.push(self.take_row(row_id, Trigger::Drain, None, None));
            }
        }
        out
    }
}
