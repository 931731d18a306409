//! Byte-level in-DRAM counter caches placed in front of the request buffer.
//!
//! Lines are installed clean whenever an increment is serviced from the
//! buffer; hits update the cached value in place and mark the line dirty.
//! Clean victims are dropped, dirty victims become writeback requests.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{CounterRef, DramGeometry};

pub const WAYS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheKind {
    None,
    Lru4Way,
    TinyLfu,
}

impl CacheKind {
    pub fn name(self) -> &'static str {
        match self {
            CacheKind::None => "none",
            CacheKind::Lru4Way => "lru4way",
            CacheKind::TinyLfu => "tinylfu",
        }
    }
}

impl FromStr for CacheKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        [CacheKind::None, CacheKind::Lru4Way, CacheKind::TinyLfu]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SimError::Config(format!("unknown cache kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub kind: CacheKind,
    /// Lines per bank.
    pub entries: usize,
    /// Counters per count-min row (TinyLFU only).
    pub sketch_width: usize,
    /// Accesses between sketch halvings; 0 means 10 x `entries`.
    pub halving_period: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            kind: CacheKind::None,
            entries: 64,
            sketch_width: 512,
            halving_period: 0,
        }
    }
}

impl CacheConfig {
    pub fn with_kind(kind: CacheKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn enabled(&self) -> bool {
        self.kind != CacheKind::None
    }

    pub fn validate(&self) -> Result<()> {
        if !self.enabled() {
            return Ok(());
        }
        if self.entries < WAYS || !self.entries.is_multiple_of(WAYS) {
            return Err(SimError::Config(format!(
                "cache.entries {} must be a nonzero multiple of {WAYS}",
                self.entries
            )));
        }
        if self.kind == CacheKind::TinyLfu && self.sketch_width == 0 {
            return Err(SimError::Config("cache.sketch_width must be > 0".into()));
        }
        Ok(())
    }

    fn halving_period(&self) -> u64 {
        if self.halving_period == 0 {
            10 * self.entries as u64
        } else {
            self.halving_period
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheLine {
    pub tag: CounterRef,
    pub value: u8,
    pub dirty: bool,
    pub valid: bool,
    last_use: u64,
}

impl CacheLine {
    fn empty() -> Self {
        Self {
            tag: CounterRef::new(0, 0, 0),
            value: 0,
            dirty: false,
            valid: false,
            last_use: 0,
        }
    }
}

fn mix64(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Two-row count-min sketch of 4-bit saturating counters with periodic halving.
#[derive(Debug, Clone)]
pub struct FrequencySketch {
    rows: [Vec<u8>; 2],
    additions: u64,
    period: u64,
}

impl FrequencySketch {
    const MAX: u8 = 15;
    const SEEDS: [u64; 2] = [0x9e37_79b9_7f4a_7c15, 0xc2b2_ae3d_27d4_eb4f];

    pub fn new(width: usize, period: u64) -> Self {
        Self {
            rows: [vec![0; width], vec![0; width]],
            additions: 0,
            period,
        }
    }

    fn slot(&self, row: usize, key: u64) -> usize {
        (mix64(key ^ Self::SEEDS[row]) % self.rows[row].len() as u64) as usize
    }

    pub fn increment(&mut self, key: u64) {
        for row in 0..2 {
            let i = self.slot(row, key);
            let c = &mut self.rows[row][i];
            *c = (*c + 1).min(Self::MAX);
        }
        self.additions += 1;
        if self.additions >= self.period {
            self.additions = 0;
            for row in &mut self.rows {
                row.iter_mut().for_each(|c| *c >>= 1);
            }
        }
    }

    pub fn estimate(&self, key: u64) -> u8 {
        (0..2).map(|row| self.rows[row][self.slot(row, key)]).min().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fill {
    /// Installed into a free way or over a clean victim.
    Installed,
    /// Installed; the dirty victim must be written back.
    Evicted { tag: CounterRef, value: u8 },
    /// TinyLFU admission refused the candidate.
    Rejected,
    /// The dirty victim could not be written back right now.
    Skipped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub accesses: u64,
    pub hits: u64,
    pub fills: u64,
    pub rejected: u64,
    pub skipped: u64,
    pub dirty_evictions: u64,
}

/// Set-associative counter cache for one bank.
#[derive(Debug, Clone)]
pub struct CounterCache {
    kind: CacheKind,
    width: usize,
    sets: Vec<[CacheLine; WAYS]>,
    clock: u64,
    sketch: Option<FrequencySketch>,
    stats: CacheStats,
}

impl CounterCache {
    pub fn new(config: &CacheConfig, geometry: &DramGeometry) -> Self {
        let sketch = (config.kind == CacheKind::TinyLfu)
            .then(|| FrequencySketch::new(config.sketch_width, config.halving_period()));
        Self {
            kind: config.kind,
            width: geometry.counters_per_counter_row as usize,
            sets: vec![[CacheLine::empty(); WAYS]; (config.entries / WAYS).max(1)],
            clock: 0,
            sketch,
            stats: CacheStats::default(),
        }
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    fn key(&self, r: CounterRef) -> u64 {
        (r.row_id as usize * self.width + r.byte_id as usize) as u64
    }

    fn set_index(&self, r: CounterRef) -> usize {
        (self.key(r) % self.sets.len() as u64) as usize
    }

    fn way_of(&self, r: CounterRef) -> Option<(usize, usize)> {
        let s = self.set_index(r);
        self.sets[s].iter().position(|l| l.valid && l.tag == r).map(|w| (s, w))
    }

    pub fn line(&self, r: CounterRef) -> Option<&CacheLine> {
        self.way_of(r).map(|(s, w)| &self.sets[s][w])
    }

    /// Looks `r` up for one activation. On a hit the cached counter is
    /// incremented (saturating), the line turns dirty and the new value is
    /// returned. Misses do not fill.
    pub fn access(&mut self, r: CounterRef) -> Option<u8> {
        self.stats.accesses += 1;
        let key = self.key(r);
        if let Some(sketch) = &mut self.sketch {
            sketch.increment(key);
        }
        self.clock += 1;
        let (s, w) = self.way_of(r)?;
        let line = &mut self.sets[s][w];
        line.value = line.value.saturating_add(1);
        line.dirty = true;
        line.last_use = self.clock;
        self.stats.hits += 1;
        Some(line.value)
    }

    /// Installs a clean copy of a freshly serviced counter.
    ///
    /// `accept_writeback` is asked whether a dirty victim can be handed to the
    /// request buffer; if not, the fill is abandoned and the cache is unchanged.
    pub fn fill_clean(&mut self, r: CounterRef, value: u8, accept_writeback: impl FnOnce(CounterRef) -> bool) -> Fill {
        self.clock += 1;
        let clock = self.clock;
        if let Some((s, w)) = self.way_of(r) {
            let line = &mut self.sets[s][w];
            *line = CacheLine {
                value,
                dirty: false,
                last_use: clock,
                ..*line
            };
            self.stats.fills += 1;
            return Fill::Installed;
        }
        let s = self.set_index(r);
        let way = match self.sets[s].iter().position(|l| !l.valid) {
            Some(w) => w,
            None => {
                let w = (0..WAYS).min_by_key(|&w| self.sets[s][w].last_use).expect("ways > 0");
                if let Some(sketch) = &self.sketch {
                    let victim_key = self.key(self.sets[s][w].tag);
                    if sketch.estimate(self.key(r)) <= sketch.estimate(victim_key) {
                        self.stats.rejected += 1;
                        return Fill::Rejected;
                    }
                }
                w
            }
        };
        let victim = self.sets[s][way];
        let mut outcome = Fill::Installed;
        if victim.valid && victim.dirty {
            if !accept_writeback(victim.tag) {
                self.stats.skipped += 1;
                return Fill::Skipped;
            }
            self.stats.dirty_evictions += 1;
            outcome = Fill::Evicted {
                tag: victim.tag,
                value: victim.value,
            };
        }
        self.sets[s][way] = CacheLine {
            tag: r,
            value,
            dirty: false,
            valid: true,
            last_use: clock,
        };
        self.stats.fills += 1;
        outcome
    }

    /// Resets a cached counter to a clean 0 after a mitigation.
    pub fn mitigate(&mut self, r: CounterRef) {
        if let Some((s, w)) = self.way_of(r) {
            let line = &mut self.sets[s][w];
            line.value = 0;
            line.dirty = false;
        }
    }

    pub fn dirty_lines(&self) -> impl Iterator<Item = &CacheLine> {
        self.sets.iter().flatten().filter(|l| l.valid && l.dirty)
    }

    /// Marks every dirty line clean, returning `(counter, value)` sorted by counter.
    pub fn flush_dirty(&mut self) -> Vec<(CounterRef, u8)> {
        let mut out = Vec::new();
        for line in self.sets.iter_mut().flatten() {
            if line.valid && line.dirty {
                line.dirty = false;
                out.push((line.tag, line.value));
            }
        }
        out.sort();
        out
    }

    pub fn kind(&self) -> CacheKind {
        self.kind
    }
}
